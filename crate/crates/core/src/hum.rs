//! Penalized HUM: the control `g = χ_ω₀ w` generated by the adjoint state
//! from the minimizer of
//!
//! ```text
//! J(w_T) = ½⟨Λw_T, w_T⟩ + ⟨z_free(T), w_T⟩ + (ε/2)‖w_T‖²
//! ```
//!
//! where `Λw_T = z^g(T)` (zero initial state). The minimizer solves
//! `(Λ + ε) w_T* = −z_free(T)` and is computed by conjugate gradients in the
//! discrete `L²` inner product, in which `Λ` is symmetric positive semidefinite.

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::domain::RegionSet;
use crate::error::{Error, Result};
use crate::grid::{GridFunction, SpaceTimeField};
use crate::pde::{DiscreteOperator, Propagator, SolverOptions};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HumConfig {
    pub epsilon: f64,
    pub cg_tol: f64,
    pub cg_max_iters: usize,
    /// Relative tolerance of the implicit-step solves inside each `Λ` application.
    pub inner_tol: f64,
}

impl Default for HumConfig {
    fn default() -> Self {
        Self { epsilon: 1e-6, cg_tol: 1e-4, cg_max_iters: 1000, inner_tol: 1e-12 }
    }
}

impl HumConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Parameter(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if !(self.cg_tol > 0.0 && self.cg_tol < 1e-2) {
            return Err(Error::Parameter(format!("cg_tol must lie in (0, 1e-2), got {}", self.cg_tol)));
        }
        if self.cg_max_iters == 0 {
            return Err(Error::Parameter("cg_max_iters must be at least 1".into()));
        }
        if !(self.inner_tol > 0.0 && self.inner_tol < 1e-6) {
            return Err(Error::Parameter(format!("inner_tol must lie in (0, 1e-6), got {}", self.inner_tol)));
        }
        Ok(())
    }
}

/// Control-to-final-state map on the unknowns of one operator.
pub struct Gramian<'a> {
    prop: Propagator<'a>,
    chi: Vec<f64>,
}

impl<'a> Gramian<'a> {
    pub fn new(
        op: &'a DiscreteOperator,
        rs: &RegionSet,
        horizon: f64,
        steps: usize,
        inner_tol: f64,
    ) -> Result<Self> {
        if rs.len() != op.grid().len() {
            return Err(Error::Shape(format!(
                "region masks have {} nodes, operator grid has {}",
                rs.len(),
                op.grid().len()
            )));
        }
        let options = SolverOptions { tol: inner_tol, ..SolverOptions::default() };
        let prop = Propagator::with_options(op, horizon, steps, options)?;
        let chi = op.restrict(&rs.control_indicator());
        Ok(Self { prop, chi })
    }

    pub fn propagator(&self) -> &Propagator<'a> {
        &self.prop
    }

    fn op(&self) -> &DiscreteOperator {
        self.prop.operator()
    }

    /// Final state of the controlled system with `g^{k+1} = χ w^k`.
    fn final_state(&self, z0: &[f64], adjoint: Option<&[Vec<f64>]>) -> Result<Vec<f64>> {
        let mut z = z0.to_vec();
        for k in 0..self.prop.steps {
            let src = adjoint.map(|w| w[k].iter().zip(&self.chi).map(|(w, c)| w * c).collect::<Vec<f64>>());
            z = self.prop.step_dofs(&z, src.as_deref())?;
        }
        Ok(z)
    }

    /// `Λ w_T` on unknown vectors.
    pub fn apply(&self, w_t: &[f64]) -> Result<Vec<f64>> {
        if w_t.iter().all(|&v| v == 0.0) {
            return Ok(vec![0.0; w_t.len()]);
        }
        let w = self.prop.adjoint_dofs(w_t)?;
        self.final_state(&vec![0.0; w_t.len()], Some(&w))
    }

    /// `z_free(T)` on unknown vectors.
    pub fn free_final(&self, z0: &[f64]) -> Result<Vec<f64>> {
        self.final_state(z0, None)
    }

    fn inner(&self, a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).zip(self.op().mass()).map(|((a, b), m)| a * b * m).sum()
    }

    fn norm(&self, a: &[f64]) -> f64 {
        self.inner(a, a).max(0.0).sqrt()
    }
}

/// `Λ w_T` as a grid function.
pub fn gramian_apply(
    op: &DiscreteOperator,
    rs: &RegionSet,
    w_t: &[f64],
    horizon: f64,
    steps: usize,
) -> Result<GridFunction> {
    check_len(op, w_t, "terminal datum")?;
    let gram = Gramian::new(op, rs, horizon, steps, HumConfig::default().inner_tol)?;
    Ok(op.extend(&gram.apply(&op.restrict(w_t))?))
}

fn check_len(op: &DiscreteOperator, f: &[f64], what: &str) -> Result<()> {
    if f.len() != op.grid().len() {
        return Err(Error::Shape(format!("{what} has {} values, grid has {} nodes", f.len(), op.grid().len())));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlResult {
    pub w_t_star: GridFunction,
    /// `g.snapshots[k + 1] = χ w^k` drives step `k`; `g.snapshots[0] = 0`.
    pub g: SpaceTimeField,
    pub z: SpaceTimeField,
    pub final_norm: f64,
    pub free_final_norm: f64,
    pub iterations: usize,
    /// `‖z(T) + ε w_T*‖ / ‖z(T)‖` on the recomputed trajectory.
    pub optimality_residual: f64,
    /// `(Σ_k Δt ‖g^{k+1}‖²)^{1/2}`.
    pub control_norm: f64,
    /// CG residual `‖z(T) + ε w‖ / ‖z(T)‖` after each iteration.
    pub residual_history: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ControlSummary {
    pub final_norm: f64,
    pub free_final_norm: f64,
    pub reduction: f64,
    pub iterations: usize,
    pub optimality_residual: f64,
    pub control_norm: f64,
    pub w_t_star_norm: f64,
}

impl ControlResult {
    pub fn summary(&self, op: &DiscreteOperator) -> ControlSummary {
        ControlSummary {
            final_norm: self.final_norm,
            free_final_norm: self.free_final_norm,
            reduction: if self.free_final_norm > 0.0 { self.final_norm / self.free_final_norm } else { 0.0 },
            iterations: self.iterations,
            optimality_residual: self.optimality_residual,
            control_norm: self.control_norm,
            w_t_star_norm: op.norm(&self.w_t_star),
        }
    }
}

/// Computes the penalized HUM control steering `z0` towards zero at time `horizon`.
pub fn solve_hum(
    op: &DiscreteOperator,
    rs: &RegionSet,
    z0: &[f64],
    cfg: &HumConfig,
    horizon: f64,
    steps: usize,
) -> Result<ControlResult> {
    cfg.validate()?;
    check_len(op, z0, "initial state")?;
    let gram = Gramian::new(op, rs, horizon, steps, cfg.inner_tol)?;
    let eps = cfg.epsilon;
    let z_free = gram.free_final(&op.restrict(z0))?;
    let free_final_norm = gram.norm(&z_free);

    let n = z_free.len();
    let mut x = vec![0.0; n];
    let mut r: Vec<f64> = z_free.iter().map(|v| -v).collect();
    let mut history = Vec::new();
    let mut iterations = 0;
    if free_final_norm > 0.0 {
        let mut p = r.clone();
        let mut rr = gram.inner(&r, &r);
        loop {
            // z(T) = z_free + Λx = −r − εx for the current iterate.
            let zt: Vec<f64> = r.iter().zip(&x).map(|(r, x)| -r - eps * x).collect();
            let rel = rr.sqrt() / gram.norm(&zt).max(f64::MIN_POSITIVE);
            history.push(rel);
            if rel <= cfg.cg_tol {
                break;
            }
            if iterations >= cfg.cg_max_iters {
                return Err(Error::Solver { iterations, residual: rel });
            }
            let mut ap = gram.apply(&p)?;
            ap.iter_mut().zip(&p).for_each(|(a, p)| *a += eps * p);
            let pap = gram.inner(&p, &ap);
            if !(pap > 0.0) {
                return Err(Error::Solver { iterations, residual: rel });
            }
            let alpha = rr / pap;
            for i in 0..n {
                x[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            let rr_new = gram.inner(&r, &r);
            let beta = rr_new / rr;
            rr = rr_new;
            for i in 0..n {
                p[i] = r[i] + beta * p[i];
            }
            iterations += 1;
        }
    }

    let prop = gram.propagator();
    let w_t_star = op.extend(&x);
    let w = prop.adjoint(&w_t_star, None)?;
    let chi = rs.control_indicator();
    let mut g = SpaceTimeField { dt: w.dt, snapshots: vec![vec![0.0; op.grid().len()]; steps + 1] };
    for k in 0..steps {
        g.snapshots[k + 1] = w.snapshots[k].iter().zip(&chi).map(|(w, c)| w * c).collect();
    }
    let z = prop.forward(z0, Some(&g), None)?;
    let zt = z.last();
    let final_norm = op.norm(zt);
    let defect: Vec<f64> = zt.iter().zip(&w_t_star).map(|(z, w)| z + eps * w).collect();
    let optimality_residual = if final_norm > 0.0 { op.norm(&defect) / final_norm } else { 0.0 };
    let control_norm = g.snapshots[1..].iter().map(|gk| g.dt * op.inner(gk, gk)).sum::<f64>().sqrt();
    Ok(ControlResult {
        w_t_star,
        g,
        z,
        final_norm,
        free_final_norm,
        iterations,
        optimality_residual,
        control_norm,
        residual_history: history,
    })
}

/// HUM functional and its adjoint-based gradient at `w_t`.
pub fn hum_functional(
    gram: &Gramian,
    z_free: &[f64],
    w_t: &[f64],
    epsilon: f64,
) -> Result<(f64, Vec<f64>)> {
    let lw = gram.apply(w_t)?;
    let j = 0.5 * gram.inner(&lw, w_t) + gram.inner(z_free, w_t) + 0.5 * epsilon * gram.inner(w_t, w_t);
    let grad = lw.iter().zip(z_free).zip(w_t).map(|((l, z), w)| l + z + epsilon * w).collect();
    Ok((j, grad))
}

/// Largest relative mismatch between the adjoint gradient and central differences
/// of `J` along `directions` random directions.
#[allow(clippy::too_many_arguments)]
pub fn gradient_check(
    op: &DiscreteOperator,
    rs: &RegionSet,
    z0: &[f64],
    w_t: &[f64],
    cfg: &HumConfig,
    horizon: f64,
    steps: usize,
    directions: usize,
    seed: u64,
) -> Result<f64> {
    check_len(op, z0, "initial state")?;
    check_len(op, w_t, "terminal datum")?;
    let gram = Gramian::new(op, rs, horizon, steps, cfg.inner_tol)?;
    let z_free = gram.free_final(&op.restrict(z0))?;
    let w = op.restrict(w_t);
    let (_, grad) = hum_functional(&gram, &z_free, &w, cfg.epsilon)?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let step = 0.1 * gram.norm(&w).max(1.0);
    let mut worst: f64 = 0.0;
    for _ in 0..directions {
        let dir: Vec<f64> = (0..w.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let dn = gram.norm(&dir);
        let dir: Vec<f64> = dir.iter().map(|v| v / dn).collect();
        let shifted = |s: f64| -> Vec<f64> { w.iter().zip(&dir).map(|(w, d)| w + s * d).collect() };
        let (jp, _) = hum_functional(&gram, &z_free, &shifted(step), cfg.epsilon)?;
        let (jm, _) = hum_functional(&gram, &z_free, &shifted(-step), cfg.epsilon)?;
        let fd = (jp - jm) / (2.0 * step);
        let exact = gram.inner(&grad, &dir);
        let scale = gram.norm(&grad).max(f64::MIN_POSITIVE);
        worst = worst.max((fd - exact).abs() / scale);
    }
    Ok(worst)
}
