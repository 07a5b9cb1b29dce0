//! Observability constants and Carleman-inequality audits on discrete adjoint solutions.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coeff::CoefficientField;
use crate::domain::RegionSet;
use crate::error::{Error, Result};
use crate::grid::{Grid, GridFunction, SpaceTimeField};
use crate::pde::{BoundaryCondition, DiscreteOperator, Propagator};
use crate::weights::{CarlemanWeights, EtaFunction};

/// Averages consecutive snapshots to the time-cell centres `(k + ½)Δt`.
pub fn time_cell_average(field: &SpaceTimeField) -> Vec<GridFunction> {
    field
        .snapshots
        .windows(2)
        .map(|w| w[0].iter().zip(&w[1]).map(|(a, b)| 0.5 * (a + b)).collect())
        .collect()
}

/// `Σ_k Δt Σ_i vol_i · cells[k][i] · weight(i, t_{k+½})` over the masked nodes.
pub fn spacetime_quadrature<F>(
    grid: &Grid,
    dt: f64,
    cells: &[GridFunction],
    mask: Option<&[bool]>,
    weight: F,
) -> Result<f64>
where
    F: Fn(usize, f64) -> f64,
{
    let vols = grid.node_volumes();
    let mut total = 0.0;
    for (k, cell) in cells.iter().enumerate() {
        let t = (k as f64 + 0.5) * dt;
        let mut s = 0.0;
        for (i, v) in cell.iter().enumerate() {
            if mask.is_some_and(|m| !m[i]) {
                continue;
            }
            let w = weight(i, t);
            if !w.is_finite() {
                return Err(Error::Singularity(format!("non-finite weight at node {i}, t = {t}")));
            }
            s += vols[i] * v * w;
        }
        total += dt * s;
    }
    Ok(total)
}

/// `‖w(0)‖² / ∬_{ω₀×(0,T)} w²` for the source-free adjoint solution from `w_T`.
pub fn observability_ratio(
    op: &DiscreteOperator,
    rs: &RegionSet,
    w_t: &[f64],
    horizon: f64,
    steps: usize,
) -> Result<f64> {
    if w_t.len() != op.grid().len() {
        return Err(Error::Shape("terminal datum does not match the grid".into()));
    }
    if op.restrict(w_t).iter().all(|&v| v == 0.0) {
        return Err(Error::UndefinedRatio("observability ratio needs a nonzero terminal datum".into()));
    }
    let w = Propagator::new(op, horizon, steps)?.adjoint(w_t, None)?;
    Ok(ratio_of_trajectory(op, rs, &w))
}

fn ratio_of_trajectory(op: &DiscreteOperator, rs: &RegionSet, w: &SpaceTimeField) -> f64 {
    let num = op.inner(w.initial(), w.initial());
    let mut q = 0.0;
    for mid in time_cell_average(w) {
        q += w.dt
            * op.dofs()
                .iter()
                .zip(op.mass())
                .filter(|(&n, _)| rs.omega0_mask[n])
                .map(|(&n, m)| m * mid[n] * mid[n])
                .sum::<f64>();
    }
    num / (q + 1e-30)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ObservabilityReport {
    pub sample_ratios: Vec<f64>,
    pub c_obs_low: f64,
    /// Regularized Rayleigh quotient after each power step (starting with the seed).
    pub history: Vec<f64>,
    pub iterations: usize,
    pub regularization: f64,
    pub rho: f64,
    pub horizon: f64,
    pub steps: usize,
    pub unknowns: usize,
    pub bc: BoundaryCondition,
}

/// Dense-eigendecomposition limit of the modal observability estimate.
pub const MODAL_LIMIT: usize = 4000;

/// Lower bound for the best observability constant by power iteration on the
/// generalized Rayleigh quotient `‖w(0)‖² / ∬_{ω₀} w²` over terminal data.
///
/// Works in the eigenbasis of the pencil `(−K, M)`, where the one-step map is
/// diagonal; the random seed ratios are computed by time stepping.
pub fn estimate_observability_constant(
    op: &DiscreteOperator,
    rs: &RegionSet,
    horizon: f64,
    steps: usize,
    iters: usize,
    samples: usize,
    seed: u64,
) -> Result<ObservabilityReport> {
    if iters == 0 || samples == 0 {
        return Err(Error::Parameter("observability estimate needs iters ≥ 1 and samples ≥ 1".into()));
    }
    let n = op.n_dofs();
    if n > MODAL_LIMIT {
        return Err(Error::Parameter(format!(
            "observability estimate is limited to {MODAL_LIMIT} unknowns, got {n}"
        )));
    }
    let prop = Propagator::new(op, horizon, steps)?;
    let dt = prop.dt;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let trials: Vec<GridFunction> = (0..samples)
        .map(|_| {
            let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            op.extend(&v)
        })
        .collect();
    let sample_ratios: Vec<f64> = trials
        .par_iter()
        .map(|w_t| prop.adjoint(w_t, None).map(|w| ratio_of_trajectory(op, rs, &w)))
        .collect::<Result<_>>()?;

    // Pencil K φ = −μ M φ through the symmetric form M^{-1/2} K M^{-1/2}.
    let inv_sqrt: Vec<f64> = op.mass().iter().map(|m| 1.0 / m.sqrt()).collect();
    let mut b = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        for (j, v) in op.stiffness().row(i) {
            b[(i, j)] = -v * inv_sqrt[i] * inv_sqrt[j];
        }
    }
    let eig = b.symmetric_eigen();
    let mu: Vec<f64> = eig.eigenvalues.iter().map(|&v| v.max(0.0)).collect();
    let mut phi = eig.eigenvectors;
    for i in 0..n {
        phi.row_mut(i).scale_mut(inv_sqrt[i]);
    }
    let a: Vec<f64> = mu.iter().map(|m| 1.0 / (1.0 + dt * m)).collect();

    // G = Φᵀ M χ Φ
    let chi_m: Vec<f64> = op
        .dofs()
        .iter()
        .zip(op.mass())
        .map(|(&node, m)| if rs.omega0_mask[node] { *m } else { 0.0 })
        .collect();
    let mut weighted = phi.clone();
    for i in 0..n {
        weighted.row_mut(i).scale_mut(chi_m[i]);
    }
    let g = phi.transpose() * &weighted;
    // T_ij = Σ_k Δt b_i^k b_j^k with b_i^k the time-cell average of a_i^{N−k}.
    let mut bmat = DMatrix::<f64>::zeros(n, steps);
    for i in 0..n {
        for k in 0..steps {
            let p = (steps - k) as i32;
            bmat[(i, k)] = 0.5 * (a[i].powi(p) + a[i].powi(p - 1));
        }
    }
    let tmat = (&bmat * bmat.transpose()) * dt;
    let qm = g.component_mul(&tmat);
    let dvec = DVector::from_iterator(n, a.iter().map(|ai| ai.powi(2 * steps as i32)));

    let delta = 1e-10 * qm.diagonal().mean();
    let mut reg = qm.clone();
    for i in 0..n {
        reg[(i, i)] += delta;
    }
    let chol = nalgebra::Cholesky::new(reg.clone()).ok_or_else(|| {
        Error::Conditioning("observation form is singular beyond the regularization".into())
    })?;
    let quotient = |c: &DVector<f64>, q: &DMatrix<f64>| -> f64 {
        let num: f64 = c.iter().zip(dvec.iter()).map(|(c, d)| c * c * d).sum();
        num / ((q * c).dot(c) + 1e-30)
    };

    let best = sample_ratios
        .iter()
        .enumerate()
        .max_by(|x, y| x.1.partial_cmp(y.1).unwrap_or(std::cmp::Ordering::Equal))
        .map(|(i, _)| i)
        .unwrap_or(0);
    // Modal coefficients c = Φᵀ M w_T.
    let w0 = op.restrict(&trials[best]);
    let mw = DVector::from_iterator(n, w0.iter().zip(op.mass()).map(|(w, m)| w * m));
    let mut c = phi.transpose() * mw;
    c /= c.norm();
    let mut history = vec![quotient(&c, &reg)];
    let mut c_best = quotient(&c, &qm);
    for _ in 0..iters {
        let dc = c.component_mul(&dvec);
        let mut next = chol.solve(&dc);
        let nn = next.norm();
        if !(nn > 0.0 && nn.is_finite()) {
            break;
        }
        next /= nn;
        let q = quotient(&next, &reg);
        // Stagnation: further steps only trade roundoff.
        if q <= history[history.len() - 1] * (1.0 + 1e-13) {
            break;
        }
        c = next;
        history.push(q);
        c_best = c_best.max(quotient(&c, &qm));
    }
    let c_obs_low = sample_ratios.iter().copied().fold(c_best, f64::max);
    Ok(ObservabilityReport {
        sample_ratios,
        c_obs_low,
        iterations: history.len() - 1,
        history,
        regularization: delta,
        rho: rs.rho,
        horizon,
        steps,
        unknowns: n,
        bc: op.bc,
    })
}

/// One adjoint solution `∂t w + Div(A∇w) = f` used by the audit.
#[derive(Debug, Clone)]
pub struct AuditSample {
    pub w: SpaceTimeField,
    pub f: SpaceTimeField,
}

/// Per-term values of both sides of the Carleman inequality.
///
/// All values are multiplied by `exp(log_scale)`; `log_scale` is the smallest
/// exponent `2sσ` (or `2sσ̃`) over the evaluated nodes, which keeps the sums
/// representable. Ratios are unaffected.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CarlemanTerms {
    /// `s⁻¹ξ⁻¹(w_t² + (Div A∇w)²)`, `s³λ⁴ξ³w²`, `sλ²ξ|A∇w·∇η|²`, `sλ²ξ A∇w·∇w`.
    pub lhs_terms: [f64; 4],
    /// `f²` and `s³λ⁴ξ³w²` on ω₀.
    pub rhs_terms: [f64; 2],
    pub lhs: f64,
    pub rhs: f64,
    pub log_scale: f64,
}

/// Node data shared by every sample of an audit.
pub struct AuditContext<'a> {
    op: &'a DiscreteOperator,
    rs: &'a RegionSet,
    eta: Arc<EtaFunction>,
    nodes: Vec<usize>,
    vols: Vec<f64>,
    eta_at: Vec<f64>,
    grad_eta: Vec<Vec<f64>>,
    coeff: Vec<DMatrix<f64>>,
    horizon: f64,
    steps: usize,
}

/// Space-time integrand ingredients at one node and time cell.
#[derive(Clone, Copy)]
struct CellData {
    time_part: f64,
    w2: f64,
    flux_eta2: f64,
    energy: f64,
    f2: f64,
}

impl<'a> AuditContext<'a> {
    pub fn new(
        op: &'a DiscreteOperator,
        rs: &'a RegionSet,
        field: &CoefficientField,
        eta: Arc<EtaFunction>,
        horizon: f64,
        steps: usize,
    ) -> Result<Self> {
        let grid = op.grid();
        if eta.values.len() != grid.len() || rs.len() != grid.len() {
            return Err(Error::Shape("eta, regions and operator use different grids".into()));
        }
        let nodes: Vec<usize> = (0..grid.len()).filter(|&i| rs.in_domain[i]).collect();
        let vols = nodes.iter().map(|&i| grid.node_volume(i)).collect();
        let eta_at = nodes.iter().map(|&i| eta.values[i]).collect();
        let grad_eta = nodes.iter().map(|&i| eta.gradient(&grid.coord(i))).collect();
        let coeff = nodes.iter().map(|&i| field.eval(&grid.coord(i))).collect();
        Ok(Self { op, rs, eta, nodes, vols, eta_at, grad_eta, coeff, horizon, steps })
    }

    fn gradient(&self, w: &[f64], node: usize) -> Vec<f64> {
        let grid = self.op.grid();
        let h = grid.spacing();
        (0..grid.dim())
            .map(|a| {
                let up = grid.neighbor(node, a, true).filter(|&j| self.rs.in_domain[j]);
                let down = grid.neighbor(node, a, false).filter(|&j| self.rs.in_domain[j]);
                match (down, up) {
                    (Some(d), Some(u)) => (w[u] - w[d]) / (2.0 * h[a]),
                    (None, Some(u)) => (w[u] - w[node]) / h[a],
                    (Some(d), None) => (w[node] - w[d]) / h[a],
                    (None, None) => 0.0,
                }
            })
            .collect()
    }

    fn cell_data(&self, sample: &AuditSample) -> Result<Vec<Vec<CellData>>> {
        let (w, f) = (&sample.w, &sample.f);
        if w.steps() != self.steps || !w.same_shape(f) {
            return Err(Error::Shape("audit sample does not match the time grid".into()));
        }
        let w_mid = time_cell_average(w);
        let f_mid = time_cell_average(f);
        let dt = w.dt;
        Ok((0..self.steps)
            .map(|k| {
                let div = self.op.apply_l(&w_mid[k]);
                self.nodes
                    .iter()
                    .enumerate()
                    .map(|(j, &i)| {
                        let wt = (w.snapshots[k + 1][i] - w.snapshots[k][i]) / dt;
                        let grad = self.gradient(&w_mid[k], i);
                        let a = &self.coeff[j];
                        let flux: Vec<f64> =
                            (0..grad.len()).map(|r| (0..grad.len()).map(|c| a[(r, c)] * grad[c]).sum()).collect();
                        let fe: f64 = flux.iter().zip(&self.grad_eta[j]).map(|(x, y)| x * y).sum();
                        let en: f64 = flux.iter().zip(&grad).map(|(x, y)| x * y).sum();
                        CellData {
                            time_part: wt * wt + div[i] * div[i],
                            w2: w_mid[k][i] * w_mid[k][i],
                            flux_eta2: fe * fe,
                            energy: en.max(0.0),
                            f2: f_mid[k][i] * f_mid[k][i],
                        }
                    })
                    .collect()
            })
            .collect())
    }

    /// Both sides at `(s, λ)`; `frozen_s` replaces `s` inside the exponential weight only.
    pub fn terms(&self, sample: &AuditSample, s: f64, lambda: f64, frozen_s: Option<f64>) -> Result<CarlemanTerms> {
        let data = self.cell_data(sample)?;
        self.terms_from(&data, s, lambda, frozen_s)
    }

    fn terms_from(&self, data: &[Vec<CellData>], s: f64, lambda: f64, frozen_s: Option<f64>) -> Result<CarlemanTerms> {
        let weights = CarlemanWeights::new(s, lambda, self.horizon, self.eta.clone())?;
        let se = frozen_s.unwrap_or(s);
        let dt = self.horizon / self.steps as f64;
        let neumann = self.op.bc == BoundaryCondition::Neumann;
        let mut vals = Vec::with_capacity(self.steps);
        let mut m = f64::INFINITY;
        for k in 0..self.steps {
            let t = (k as f64 + 0.5) * dt;
            let row: Vec<_> = self.eta_at.iter().map(|&e| weights.at_value(e, t)).collect::<Result<_>>()?;
            for v in &row {
                m = m.min(2.0 * se * v.sigma);
                if neumann {
                    m = m.min(2.0 * se * v.sigma_tilde);
                }
            }
            vals.push(row);
        }
        let (s2, s3, l2, l4) = (s, s * s * s, lambda * lambda, lambda.powi(4));
        let mut lt = [0.0; 4];
        let mut rt = [0.0; 2];
        for (k, row) in vals.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                let mut e = (m - 2.0 * se * v.sigma).exp();
                if neumann {
                    e += (m - 2.0 * se * v.sigma_tilde).exp();
                }
                if e == 0.0 {
                    continue;
                }
                let c = &data[k][j];
                let q = dt * self.vols[j] * e;
                let w2 = s3 * l4 * v.xi.powi(3) * c.w2;
                lt[0] += q * c.time_part / (s2 * v.xi);
                lt[1] += q * w2;
                lt[2] += q * s2 * l2 * v.xi * c.flux_eta2;
                lt[3] += q * s2 * l2 * v.xi * c.energy;
                rt[0] += q * c.f2;
                if self.rs.omega0_mask[self.nodes[j]] {
                    rt[1] += q * w2;
                }
            }
        }
        let lhs = lt.iter().sum();
        let rhs = rt.iter().sum();
        Ok(CarlemanTerms {
            lhs_terms: lt,
            rhs_terms: rt,
            lhs,
            rhs,
            log_scale: if m.is_finite() { m } else { 0.0 },
        })
    }

    /// Largest relative defect of `ξ ξ̃ = θ² e^{16λ|η|∞}` over the evaluated nodes.
    pub fn product_identity_defect(&self, lambda: f64) -> Result<f64> {
        let w = CarlemanWeights::new(1.0, lambda, self.horizon, self.eta.clone())?;
        let dt = self.horizon / self.steps as f64;
        let mut worst: f64 = 0.0;
        for k in 0..self.steps {
            let t = (k as f64 + 0.5) * dt;
            for &e in &self.eta_at {
                let v = w.at_value(e, t)?;
                let exact = v.theta * v.theta * (16.0 * lambda * self.eta.eta_inf).exp();
                worst = worst.max((v.xi * v.xi_tilde - exact).abs() / exact);
            }
        }
        Ok(worst)
    }

    /// A random smooth terminal datum (sines for Dirichlet, cosines for Neumann)
    /// and, when `with_source`, a random smooth source.
    pub fn random_sample(&self, rng: &mut ChaCha8Rng, with_source: bool) -> Result<AuditSample> {
        let grid = self.op.grid();
        let dirichlet = self.op.bc == BoundaryCondition::Dirichlet;
        let mode = |rng: &mut ChaCha8Rng| -> (f64, Vec<u32>) {
            let c = rng.gen_range(-1.0..1.0);
            let m = (0..grid.dim()).map(|_| rng.gen_range(1..=3)).collect();
            (c, m)
        };
        let eval = |modes: &[(f64, Vec<u32>)], x: &[f64]| -> f64 {
            modes
                .iter()
                .map(|(c, m)| {
                    c * m
                        .iter()
                        .zip(x)
                        .map(|(&k, &xi)| {
                            if dirichlet {
                                (k as f64 * PI * xi).sin()
                            } else {
                                ((k - 1) as f64 * PI * xi).cos()
                            }
                        })
                        .product::<f64>()
                })
                .sum()
        };
        let wt_modes: Vec<_> = (0..4).map(|_| mode(rng)).collect();
        let w_t = grid.sample(|x| eval(&wt_modes, x));
        let prop = Propagator::new(self.op, self.horizon, self.steps)?;
        let f = if with_source {
            let f_modes: Vec<_> = (0..2).map(|_| mode(rng)).collect();
            let h = self.horizon;
            let raw = SpaceTimeField::from_fn(grid, self.steps, h, |x, t| (PI * t / h).sin() * eval(&f_modes, x));
            // keep only the unknowns so that f is consistent with the boundary condition
            SpaceTimeField {
                dt: raw.dt,
                snapshots: raw.snapshots.iter().map(|s| self.op.extend(&self.op.restrict(s))).collect(),
            }
        } else {
            SpaceTimeField::zeros(grid.len(), self.steps, self.horizon)
        };
        let w = prop.adjoint(&w_t, with_source.then_some(&f))?;
        Ok(AuditSample { w, f })
    }
}

pub fn carleman_lhs_dirichlet(ctx: &AuditContext, sample: &AuditSample, s: f64, lambda: f64) -> Result<(f64, [f64; 4])> {
    let t = ctx.terms(sample, s, lambda, None)?;
    Ok((t.lhs, t.lhs_terms))
}

pub fn carleman_rhs_dirichlet(ctx: &AuditContext, sample: &AuditSample, s: f64, lambda: f64) -> Result<f64> {
    Ok(ctx.terms(sample, s, lambda, None)?.rhs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AuditConfig {
    pub s_grid: Vec<f64>,
    pub lambda_grid: Vec<f64>,
    pub calibration_samples: usize,
    pub samples: usize,
    pub seed: u64,
}

impl Default for AuditConfig {
    fn default() -> Self {
        Self {
            s_grid: vec![1.0, 2.0, 4.0, 8.0],
            lambda_grid: vec![1.0, 2.0, 4.0],
            calibration_samples: 5,
            samples: 20,
            seed: 0,
        }
    }
}

impl AuditConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: &[f64]| !v.is_empty() && v.iter().all(|x| *x > 0.0 && x.is_finite());
        if !positive(&self.s_grid) {
            return Err(Error::Parameter("s_grid must be a nonempty list of positive values".into()));
        }
        if !positive(&self.lambda_grid) {
            return Err(Error::Parameter("lambda_grid must be a nonempty list of positive values".into()));
        }
        if self.calibration_samples == 0 || self.samples == 0 {
            return Err(Error::Parameter("carleman audit needs at least one calibration and one fresh sample".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CarlemanEntry {
    pub s: f64,
    pub lambda: f64,
    pub sample: usize,
    pub calibration: bool,
    pub lhs: f64,
    pub rhs: f64,
    /// `lhs / (C_fit · rhs)`; zero when both sides vanish.
    pub ratio: f64,
    pub log_scale: f64,
    pub lhs_terms: [f64; 4],
    pub rhs_terms: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThresholdEstimate {
    pub lambda: f64,
    pub s0_hat: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CarlemanAuditReport {
    pub bc: BoundaryCondition,
    pub s_grid: Vec<f64>,
    pub lambda_grid: Vec<f64>,
    pub calibration_point: (f64, f64),
    pub c_fit: f64,
    pub entries: Vec<CarlemanEntry>,
    pub s0_hat: Vec<ThresholdEstimate>,
    pub lambda0_hat: Option<f64>,
    /// Fraction of fresh samples whose ratio is nonincreasing in `s` at the largest λ.
    pub monotone_fraction: f64,
    /// Fresh samples that violate `lhs ≤ C_fit·rhs` at the calibration point.
    pub calibration_violations: usize,
    pub product_identity_defect: f64,
    pub eta_inf: f64,
}

impl CarlemanAuditReport {
    pub fn surface_csv(&self) -> String {
        let mut out = String::from("s,lambda,id,lhs,rhs,ratio\n");
        for e in &self.entries {
            out.push_str(&format!("{},{},{},{:e},{:e},{:e}\n", e.s, e.lambda, e.sample, e.lhs, e.rhs, e.ratio));
        }
        out
    }
}

fn ratio_or_zero(lhs: f64, rhs: f64) -> f64 {
    if lhs == 0.0 && rhs == 0.0 {
        0.0
    } else {
        lhs / rhs
    }
}

/// Sweeps `(s, λ)` over random adjoint solutions and compares both sides of the
/// Carleman inequality with a constant calibrated at the largest sweep point.
pub fn carleman_audit(ctx: &AuditContext, cfg: &AuditConfig) -> Result<CarlemanAuditReport> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let total = cfg.calibration_samples + cfg.samples;
    // Even ids are source-free, odd ids carry a smooth source.
    let samples: Vec<AuditSample> =
        (0..total).map(|id| ctx.random_sample(&mut rng, id % 2 == 1)).collect::<Result<_>>()?;
    audit_samples(ctx, cfg, &samples)
}

/// Audit on explicit samples; the first `cfg.calibration_samples` calibrate `C_fit`.
pub fn audit_samples(ctx: &AuditContext, cfg: &AuditConfig, samples: &[AuditSample]) -> Result<CarlemanAuditReport> {
    cfg.validate()?;
    if samples.len() <= cfg.calibration_samples {
        return Err(Error::Parameter("audit needs fresh samples beyond the calibration batch".into()));
    }
    let s_max = cfg.s_grid.iter().copied().fold(f64::MIN, f64::max);
    let l_max = cfg.lambda_grid.iter().copied().fold(f64::MIN, f64::max);
    let pairs: Vec<(f64, f64)> =
        cfg.lambda_grid.iter().flat_map(|&l| cfg.s_grid.iter().map(move |&s| (s, l))).collect();

    let per_sample: Vec<Vec<CarlemanTerms>> = samples
        .par_iter()
        .map(|smp| {
            let data = ctx.cell_data(smp)?;
            pairs.iter().map(|&(s, l)| ctx.terms_from(&data, s, l, None)).collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;

    let cal_idx = pairs.iter().position(|&p| p == (s_max, l_max)).expect("calibration point on the sweep");
    let c_fit = per_sample[..cfg.calibration_samples]
        .iter()
        .map(|t| ratio_or_zero(t[cal_idx].lhs, t[cal_idx].rhs))
        .filter(|r| r.is_finite())
        .fold(0.0, f64::max);
    let scale = if c_fit > 0.0 { c_fit } else { 1.0 };

    let mut entries = Vec::with_capacity(samples.len() * pairs.len());
    for (id, terms) in per_sample.iter().enumerate() {
        for (&(s, l), t) in pairs.iter().zip(terms) {
            entries.push(CarlemanEntry {
                s,
                lambda: l,
                sample: id,
                calibration: id < cfg.calibration_samples,
                lhs: t.lhs,
                rhs: t.rhs,
                ratio: ratio_or_zero(t.lhs, scale * t.rhs),
                log_scale: t.log_scale,
                lhs_terms: t.lhs_terms,
                rhs_terms: t.rhs_terms,
            });
        }
    }
    let ratio_at = |id: usize, s: f64, l: f64| -> f64 {
        let p = pairs.iter().position(|&q| q == (s, l)).expect("sweep point");
        entries[id * pairs.len() + p].ratio
    };
    let fresh = cfg.calibration_samples..samples.len();
    let calibration_violations = fresh
        .clone()
        .filter(|&id| {
            let t = &per_sample[id][cal_idx];
            !(t.lhs <= c_fit * t.rhs)
        })
        .count();

    let mut s_sorted = cfg.s_grid.clone();
    s_sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut l_sorted = cfg.lambda_grid.clone();
    l_sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let s0_hat: Vec<ThresholdEstimate> = l_sorted
        .iter()
        .map(|&l| {
            let ok = |s: f64| (0..samples.len()).all(|id| ratio_at(id, s, l) <= 1.0);
            let mut s0 = None;
            for &s in s_sorted.iter().rev() {
                if ok(s) {
                    s0 = Some(s);
                } else {
                    break;
                }
            }
            ThresholdEstimate { lambda: l, s0_hat: s0 }
        })
        .collect();
    let mut lambda0_hat = None;
    for est in s0_hat.iter().rev() {
        if est.s0_hat.is_some() {
            lambda0_hat = Some(est.lambda);
        } else {
            break;
        }
    }
    let monotone = fresh
        .clone()
        .filter(|&id| s_sorted.windows(2).all(|w| ratio_at(id, w[1], l_max) <= ratio_at(id, w[0], l_max)))
        .count();
    let product_identity_defect =
        l_sorted.iter().map(|&l| ctx.product_identity_defect(l)).collect::<Result<Vec<_>>>()?.into_iter().fold(0.0, f64::max);
    Ok(CarlemanAuditReport {
        bc: ctx.op.bc,
        s_grid: cfg.s_grid.clone(),
        lambda_grid: cfg.lambda_grid.clone(),
        calibration_point: (s_max, l_max),
        c_fit,
        entries,
        s0_hat,
        lambda0_hat,
        monotone_fraction: monotone as f64 / fresh.len() as f64,
        calibration_violations,
        product_identity_defect,
        eta_inf: ctx.eta.eta_inf,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeff::{builtin_example, BuiltinExample};
    use crate::domain::{build_regions, build_regions_unchecked, DomainSpec};
    use crate::pde::assemble_l;
    use crate::weights::{build_eta, default_peak};

    fn setup(n: usize, bc: BoundaryCondition) -> (DomainSpec, Grid, RegionSet, DiscreteOperator, CoefficientField) {
        let spec = DomainSpec::hypercube(2, 0.3, 1.0).unwrap();
        let grid = Grid::uniform(2, n).unwrap();
        let rs = build_regions(&spec, &grid).unwrap();
        let field = builtin_example(BuiltinExample::Ex1, &[1.0, 1.0]).unwrap();
        let op = assemble_l(&grid, &field, bc).unwrap();
        (spec, grid, rs, op, field)
    }

    #[test]
    fn quadrature_basics() {
        let (_, grid, rs, _, _) = setup(17, BoundaryCondition::Dirichlet);
        let ones = vec![vec![1.0; grid.len()]; 8];
        let full = spacetime_quadrature(&grid, 1.0 / 8.0, &ones, None, |_, _| 1.0).unwrap();
        assert!((full - 1.0).abs() < 1e-14);
        let collar = spacetime_quadrature(&grid, 1.0 / 8.0, &ones, Some(&rs.omega0_mask), |_, _| 1.0).unwrap();
        assert!((collar - rs.mask_volume(&grid, &rs.omega0_mask)).abs() < 1e-14);
        let singular = spacetime_quadrature(&grid, 1.0 / 8.0, &ones, None, |_, _| f64::INFINITY);
        assert!(matches!(singular, Err(Error::Singularity(_))));
    }

    #[test]
    fn quadrature_time_refinement() {
        let grid = Grid::uniform(2, 9).unwrap();
        let integral = |n: usize| {
            let f = SpaceTimeField::from_fn(&grid, n, 1.0, |x, t| x[0] * (3.0 * t).exp());
            spacetime_quadrature(&grid, 1.0 / n as f64, &time_cell_average(&f), None, |_, _| 1.0).unwrap()
        };
        let exact = 0.5 * ((3.0f64).exp() - 1.0) / 3.0;
        let (e1, e2) = ((integral(16) - exact).abs(), (integral(32) - exact).abs());
        assert!(e2 < e1 && e1 / e2 > 3.5, "{e1} {e2}");
    }

    #[test]
    fn observability_ratio_cases() {
        let (spec, grid, rs, _, _) = setup(17, BoundaryCondition::Neumann);
        let id = CoefficientField::identity(2);
        let neu = assemble_l(&grid, &id, BoundaryCondition::Neumann).unwrap();
        let c = vec![1.0; grid.len()];
        let r = observability_ratio(&neu, &rs, &c, 0.5, 8).unwrap();
        let expected = 1.0 / (0.5 * rs.mask_volume(&grid, &rs.omega0_mask));
        assert!((r - expected).abs() < 1e-9 * expected);
        assert!(matches!(
            observability_ratio(&neu, &rs, &vec![0.0; grid.len()], 0.5, 8),
            Err(Error::UndefinedRatio(_))
        ));

        let dir = assemble_l(&grid, &id, BoundaryCondition::Dirichlet).unwrap();
        let full = build_regions_unchecked(&spec, &grid).unwrap().with_control_everywhere();
        let bump = grid.sample(|x| (-80.0 * ((x[0] - 0.8).powi(2) + (x[1] - 0.8).powi(2))).exp());
        let r_full = observability_ratio(&dir, &full, &bump, 0.01, 4).unwrap();
        assert!(r_full <= 1.0 / 0.01 * (1.0 + 1e-9));
        let r_collar = observability_ratio(&dir, &rs, &bump, 0.01, 4).unwrap();
        assert!(r_collar > r_full);
        let scaled: Vec<f64> = bump.iter().map(|v| -3.7 * v).collect();
        let r_scaled = observability_ratio(&dir, &rs, &scaled, 0.01, 4).unwrap();
        assert!((r_scaled - r_collar).abs() <= 1e-12 * r_collar);
    }

    #[test]
    fn power_estimate_dominates_samples() {
        let (_, _, rs, op, _) = setup(13, BoundaryCondition::Dirichlet);
        let rep = estimate_observability_constant(&op, &rs, 0.5, 16, 30, 6, 4).unwrap();
        for r in &rep.sample_ratios {
            assert!(*r >= 0.0 && *r <= rep.c_obs_low * (1.0 + 1e-6));
        }
        for w in rep.history.windows(2) {
            assert!(w[1] >= w[0] * (1.0 - 1e-10));
        }
    }

    fn audit_ctx<'a>(
        spec: &DomainSpec,
        grid: &Grid,
        rs: &'a RegionSet,
        op: &'a DiscreteOperator,
        field: &CoefficientField,
        steps: usize,
    ) -> AuditContext<'a> {
        let eta = Arc::new(build_eta(spec, rs, grid, &default_peak(spec, grid)).unwrap());
        AuditContext::new(op, rs, field, eta, 1.0, steps).unwrap()
    }

    #[test]
    fn zero_solution_gives_zero_sides() {
        let (spec, grid, rs, op, field) = setup(13, BoundaryCondition::Dirichlet);
        let ctx = audit_ctx(&spec, &grid, &rs, &op, &field, 8);
        let zero = AuditSample {
            w: SpaceTimeField::zeros(grid.len(), 8, 1.0),
            f: SpaceTimeField::zeros(grid.len(), 8, 1.0),
        };
        let t = ctx.terms(&zero, 2.0, 2.0, None).unwrap();
        assert_eq!((t.lhs, t.rhs), (0.0, 0.0));
        assert_eq!(t.lhs_terms, [0.0; 4]);
        let cfg = AuditConfig { calibration_samples: 1, samples: 1, ..AuditConfig::default() };
        let rep = audit_samples(&ctx, &cfg, &[zero.clone(), zero]).unwrap();
        assert!(rep.entries.iter().all(|e| e.ratio == 0.0));
        assert!(rep.s0_hat.iter().all(|t| t.s0_hat == Some(1.0)));
    }

    #[test]
    fn frozen_exponent_isolates_cubic_scaling() {
        let (spec, grid, rs, op, field) = setup(13, BoundaryCondition::Dirichlet);
        let ctx = audit_ctx(&spec, &grid, &rs, &op, &field, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let smp = ctx.random_sample(&mut rng, false).unwrap();
        let a = ctx.terms(&smp, 2.0, 2.0, Some(2.0)).unwrap();
        let b = ctx.terms(&smp, 4.0, 2.0, Some(2.0)).unwrap();
        assert!((b.lhs_terms[1] / a.lhs_terms[1] - 8.0).abs() < 1e-12);
        assert!((b.lhs_terms[0] / a.lhs_terms[0] - 0.5).abs() < 1e-12);
        assert!((b.lhs_terms[3] / a.lhs_terms[3] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn lhs_stable_under_time_refinement() {
        let (spec, grid, rs, op, field) = setup(17, BoundaryCondition::Dirichlet);
        let w_t = grid.sample(|x| (PI * x[0]).sin() * (PI * x[1]).sin());
        let value = |steps: usize| {
            let ctx = audit_ctx(&spec, &grid, &rs, &op, &field, steps);
            let w = Propagator::new(&op, 1.0, steps).unwrap().adjoint(&w_t, None).unwrap();
            let smp = AuditSample { w, f: SpaceTimeField::zeros(grid.len(), steps, 1.0) };
            let t = ctx.terms(&smp, 2.0, 2.0, None).unwrap();
            assert!(t.lhs > 0.0 && t.rhs > 0.0);
            t.lhs / t.rhs
        };
        let (a, b) = (value(32), value(64));
        assert!((a - b).abs() <= 0.1 * a.max(b), "{a} {b}");
    }

    #[test]
    fn neumann_constant_solution() {
        let (spec, grid, rs, op, field) = setup(13, BoundaryCondition::Neumann);
        let ctx = audit_ctx(&spec, &grid, &rs, &op, &field, 8);
        let w = Propagator::new(&op, 1.0, 8).unwrap().adjoint(&vec![2.0; grid.len()], None).unwrap();
        let smp = AuditSample { w, f: SpaceTimeField::zeros(grid.len(), 8, 1.0) };
        let t = ctx.terms(&smp, 2.0, 1.0, None).unwrap();
        assert!(t.lhs_terms[2].abs() < 1e-12 * t.lhs && t.lhs_terms[3].abs() < 1e-12 * t.lhs);
        assert!(t.rhs > 0.0 && (t.lhs / t.rhs).is_finite());
        assert!(ctx.product_identity_defect(2.0).unwrap() < 1e-12);
    }

    #[test]
    fn solution_outside_collar_has_zero_local_term() {
        let (spec, grid, rs, op, field) = setup(13, BoundaryCondition::Dirichlet);
        let ctx = audit_ctx(&spec, &grid, &rs, &op, &field, 4);
        let mut w = SpaceTimeField::zeros(grid.len(), 4, 1.0);
        let center = grid.linear_index(&[8, 8]);
        assert!(!rs.omega0_mask[center]);
        for s in &mut w.snapshots {
            s[center] = 1.0;
        }
        let smp = AuditSample { w, f: SpaceTimeField::zeros(grid.len(), 4, 1.0) };
        assert_eq!(carleman_rhs_dirichlet(&ctx, &smp, 1.0, 1.0).unwrap(), 0.0);
    }
}
