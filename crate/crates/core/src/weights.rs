//! The auxiliary profile η and the space-time Carleman weights built on it.
//!
//! η is a product of three factors:
//! * a collar ramp `Π_p q((d_p − ρ/2)/(ρ/6))` over the pieces of Γ₀, which is
//!   zero on `{d ≤ ρ/2}`, flat on the level set `{d = ρ/2}` and saturates at
//!   `d = 2ρ/3`;
//! * a Cauchy-type peak `1 / (1 + |x − x*|²/ℓ²)` whose only critical point is
//!   `x*`;
//! * a boundary collar `Π_r b(dist_r)` over the regular boundary pieces, zero
//!   on `∂Ω` with a strictly inward gradient there.
//!
//! With `x*` placed where the ramps have saturated and away from the regular
//! collar, every factor's gradient has a positive component along `x* − x`,
//! so `x*` is the only critical point of η in `Ω̂`.

use std::fmt::Write as _;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use serde::Serialize;

use crate::domain::{BoundaryPiece, DomainKind, DomainSpec, RegionSet, RegularPiece};
use crate::error::{Error, Result};
use crate::grid::Grid;

/// Width of the peak factor.
const PEAK_WIDTH: f64 = 0.5;
const FLAT_TOL: f64 = 1e-10;
/// `c_min` must be at least this fraction of `max |∇η|`.
pub const C_MIN_FRACTION: f64 = 1e-3;

/// `q(r) = 10r³ − 15r⁴ + 6r⁵` on `[0, 1]`, clamped outside.
pub fn smoothstep(r: f64) -> (f64, f64) {
    if r <= 0.0 {
        (0.0, 0.0)
    } else if r >= 1.0 {
        (1.0, 0.0)
    } else {
        let r2 = r * r;
        (r2 * r * (10.0 - 15.0 * r + 6.0 * r2), 30.0 * r2 * (1.0 - r) * (1.0 - r))
    }
}

/// `b(r) = 1 − (1 − r/w)³` on `[0, w]`, one beyond.
fn collar(r: f64, w: f64) -> (f64, f64) {
    if r >= w {
        (1.0, 0.0)
    } else {
        let u = 1.0 - r / w;
        (1.0 - u * u * u, 3.0 * u * u / w)
    }
}

type Profile = Arc<dyn Fn(&[f64]) -> (f64, Vec<f64>) + Send + Sync>;

#[derive(Clone)]
enum Shape {
    Constructed {
        gamma0: Vec<BoundaryPiece>,
        regular: Vec<RegularPiece>,
        ramp_start: f64,
        ramp_width: f64,
        collar_width: f64,
    },
    Custom(Profile),
}

/// Sampled η with an analytic evaluator for the value and gradient.
#[derive(Clone)]
pub struct EtaFunction {
    shape: Shape,
    domain: DomainSpec,
    pub x_star: Vec<f64>,
    pub amplitude: f64,
    /// η at every grid node (zero outside the domain).
    pub values: Vec<f64>,
    pub eta_inf: f64,
    /// `min |∇η|` over the Ω₀ nodes.
    pub c_min: f64,
}

impl std::fmt::Debug for EtaFunction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EtaFunction")
            .field("x_star", &self.x_star)
            .field("amplitude", &self.amplitude)
            .field("eta_inf", &self.eta_inf)
            .field("c_min", &self.c_min)
            .finish_non_exhaustive()
    }
}

impl EtaFunction {
    /// Value and gradient at `x`.
    pub fn eval_with_gradient(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let (v, mut g) = match &self.shape {
            Shape::Custom(f) => f(x),
            Shape::Constructed { gamma0, regular, ramp_start, ramp_width, collar_width } => {
                let d = x.len();
                let mut factors: Vec<(f64, Vec<f64>)> = Vec::with_capacity(gamma0.len() + regular.len() + 1);
                for p in gamma0 {
                    let (q, dq) = smoothstep((p.distance(x) - ramp_start) / ramp_width);
                    let grad = if dq == 0.0 {
                        vec![0.0; d]
                    } else {
                        p.distance_gradient(x).iter().map(|g| g * dq / ramp_width).collect()
                    };
                    factors.push((q, grad));
                }
                for r in regular {
                    let (b, db) = collar(r.distance(x), *collar_width);
                    let grad = if db == 0.0 {
                        vec![0.0; d]
                    } else {
                        r.distance_gradient(x).iter().map(|g| g * db).collect()
                    };
                    factors.push((b, grad));
                }
                let diff: Vec<f64> = x.iter().zip(&self.x_star).map(|(a, b)| a - b).collect();
                let l2 = PEAK_WIDTH * PEAK_WIDTH;
                let den = 1.0 + diff.iter().map(|v| v * v).sum::<f64>() / l2;
                factors.push((1.0 / den, diff.iter().map(|v| -2.0 * v / (l2 * den * den)).collect()));
                product_rule(&factors, d)
            }
        };
        g.iter_mut().for_each(|c| *c *= self.amplitude);
        (self.amplitude * v, g)
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.eval_with_gradient(x).0
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        self.eval_with_gradient(x).1
    }

    /// Second derivatives by central differences of the analytic gradient.
    pub fn hessian(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let d = x.len();
        let step = 1e-5;
        let mut h = vec![vec![0.0; d]; d];
        for j in 0..d {
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[j] += step;
            xm[j] -= step;
            let (gp, gm) = (self.gradient(&xp), self.gradient(&xm));
            for i in 0..d {
                h[i][j] = (gp[i] - gm[i]) / (2.0 * step);
            }
        }
        for i in 0..d {
            for j in 0..i {
                let m = 0.5 * (h[i][j] + h[j][i]);
                h[i][j] = m;
                h[j][i] = m;
            }
        }
        h
    }

    /// The same profile scaled so that `|η|∞ = amplitude`.
    pub fn with_amplitude(&self, amplitude: f64) -> Result<Self> {
        if !(amplitude > 0.0 && amplitude.is_finite()) {
            return Err(Error::Parameter(format!("eta amplitude must be positive, got {amplitude}")));
        }
        let f = amplitude / self.eta_inf;
        let mut out = self.clone();
        out.amplitude *= f;
        out.values.iter_mut().for_each(|v| *v *= f);
        out.eta_inf = amplitude;
        out.c_min *= f;
        Ok(out)
    }

    /// A user-supplied profile returning `(η, ∇η)`; used for validator tests and experiments.
    pub fn from_profile<F>(domain: &DomainSpec, rs: &RegionSet, grid: &Grid, x_star: &[f64], f: F) -> Self
    where
        F: Fn(&[f64]) -> (f64, Vec<f64>) + Send + Sync + 'static,
    {
        let mut eta = EtaFunction {
            shape: Shape::Custom(Arc::new(f)),
            domain: domain.clone(),
            x_star: x_star.to_vec(),
            amplitude: 1.0,
            values: Vec::new(),
            eta_inf: 0.0,
            c_min: 0.0,
        };
        eta.resample(rs, grid);
        eta
    }

    fn resample(&mut self, rs: &RegionSet, grid: &Grid) {
        self.values = (0..grid.len())
            .map(|i| if rs.in_domain[i] { self.eval(&grid.coord(i)) } else { 0.0 })
            .collect();
        self.eta_inf = self.values.iter().fold(self.eval(&self.x_star).abs(), |a, v| a.max(v.abs()));
        self.c_min = validate_eta(self, rs, grid).c_min;
    }

    /// CSV of coordinates, value and gradient at every domain node.
    pub fn to_csv(&self, grid: &Grid, rs: &RegionSet) -> String {
        let d = grid.dim();
        let mut out = String::from("node");
        for a in 0..d {
            let _ = write!(out, ",x{a}");
        }
        out.push_str(",eta");
        for a in 0..d {
            let _ = write!(out, ",deta_dx{a}");
        }
        out.push('\n');
        for i in (0..grid.len()).filter(|&i| rs.in_domain[i]) {
            let x = grid.coord(i);
            let (v, g) = self.eval_with_gradient(&x);
            let _ = write!(out, "{i}");
            for c in &x {
                let _ = write!(out, ",{c}");
            }
            let _ = write!(out, ",{v:e}");
            for c in &g {
                let _ = write!(out, ",{c:e}");
            }
            out.push('\n');
        }
        out
    }
}

fn product_rule(factors: &[(f64, Vec<f64>)], d: usize) -> (f64, Vec<f64>) {
    let value: f64 = factors.iter().map(|f| f.0).product();
    let mut grad = vec![0.0; d];
    for (j, (_, gj)) in factors.iter().enumerate() {
        if gj.iter().all(|&v| v == 0.0) {
            continue;
        }
        let others: f64 = factors.iter().enumerate().filter(|(i, _)| *i != j).map(|(_, f)| f.0).product();
        for (g, v) in grad.iter_mut().zip(gj) {
            *g += v * others;
        }
    }
    (value, grad)
}

fn euclid_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// A peak location inside ω where the collar ramps have saturated.
///
/// With Γ₀ empty the centre of the domain is shifted off the grid lattice.
pub fn default_peak(domain: &DomainSpec, grid: &Grid) -> Vec<f64> {
    let d = domain.dimension;
    if domain.gamma0.is_empty() {
        let c = match domain.kind {
            DomainKind::UnitHypercube => 0.5,
            DomainKind::QuarterDisk => 0.35,
        };
        return grid.spacing().iter().map(|h| c + 0.3 * h).collect();
    }
    let rho = domain.rho;
    let candidate = vec![0.75 * rho; d];
    if peak_is_admissible(domain, &candidate) {
        return candidate;
    }
    // Fall back to the node whose Γ₀-distance is closest to 3ρ/4.
    (0..grid.len())
        .map(|i| grid.coord(i))
        .filter(|x| peak_is_admissible(domain, x))
        .min_by(|a, b| {
            let ka = (domain.distance_unchecked(a) - 0.75 * rho).abs();
            let kb = (domain.distance_unchecked(b) - 0.75 * rho).abs();
            ka.partial_cmp(&kb).unwrap_or(std::cmp::Ordering::Equal)
        })
        .unwrap_or(candidate)
}

fn peak_is_admissible(domain: &DomainSpec, x: &[f64]) -> bool {
    let rho = domain.rho;
    let dist = domain.distance_unchecked(x);
    domain.contains_interior(x)
        && dist >= 2.0 * rho / 3.0
        && dist < 5.0 * rho / 6.0
        && domain.regular_pieces().iter().all(|r| r.distance(x) >= rho / 3.0)
}

/// Builds η for the region chain and validates it.
pub fn build_eta(domain: &DomainSpec, rs: &RegionSet, grid: &Grid, x_star: &[f64]) -> Result<EtaFunction> {
    if x_star.len() != domain.dimension {
        return Err(Error::Shape(format!(
            "peak point has {} coordinates, domain dimension is {}",
            x_star.len(),
            domain.dimension
        )));
    }
    let rho = domain.rho;
    if !domain.gamma0.is_empty() {
        let dist = domain.distance_unchecked(x_star);
        if !domain.contains_interior(x_star) || !(dist > rho / 10.0 && dist < rho) {
            return Err(Error::Parameter(format!(
                "peak point {x_star:?} must lie in omega ({} < d < {rho}), d = {dist}",
                rho / 10.0
            )));
        }
        if !peak_is_admissible(domain, x_star) {
            return Err(Error::Construction(format!(
                "peak point {x_star:?} must satisfy 2rho/3 <= d < 5rho/6 and stay rho/3 away from the regular boundary"
            )));
        }
    } else if !domain.contains_interior(x_star) {
        return Err(Error::Parameter(format!("peak point {x_star:?} is not inside the domain")));
    }
    let mut eta = EtaFunction {
        shape: Shape::Constructed {
            gamma0: domain.gamma0.clone(),
            regular: domain.regular_pieces(),
            ramp_start: rho / 2.0,
            ramp_width: rho / 6.0,
            collar_width: rho / 3.0,
        },
        domain: domain.clone(),
        x_star: x_star.to_vec(),
        amplitude: 1.0,
        values: Vec::new(),
        eta_inf: 1.0,
        c_min: 0.0,
    };
    eta.resample(rs, grid);
    let report = validate_eta(&eta, rs, grid);
    eta.c_min = report.c_min;
    if !report.all_pass() {
        let node = report.worst_gradient_node.map(|n| format!(" at node {n}")).unwrap_or_default();
        return Err(Error::Construction(format!(
            "eta failed validation{node}: {}",
            report.failures().join(", ")
        )));
    }
    Ok(eta)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EtaReport {
    pub zero_outside_ok: bool,
    pub positive_inside_ok: bool,
    pub gradient_floor_ok: bool,
    pub interior_boundary_flat_ok: bool,
    pub regular_boundary_normal_ok: bool,
    pub eta_inf: f64,
    pub c_min: f64,
    pub c_min_threshold: f64,
    pub max_gradient: f64,
    /// Worst `|∇η|` on the sampled level set `{d = ρ/2}`.
    pub max_flat_gradient: f64,
    /// Worst tangential share of `∇η` or positive normal part on `∂Ω̂ ∩ ∂Ω`.
    pub max_normal_defect: f64,
    pub worst_gradient_node: Option<usize>,
    pub zero_violations: usize,
    pub positivity_violations: usize,
    pub gradient_violations: usize,
    pub level_set_samples: usize,
    pub boundary_samples: usize,
}

impl EtaReport {
    pub fn all_pass(&self) -> bool {
        self.zero_outside_ok
            && self.positive_inside_ok
            && self.gradient_floor_ok
            && self.interior_boundary_flat_ok
            && self.regular_boundary_normal_ok
    }

    pub fn failures(&self) -> Vec<&'static str> {
        [
            (self.zero_outside_ok, "nonzero outside omega_hat"),
            (self.positive_inside_ok, "not positive inside omega_hat"),
            (self.gradient_floor_ok, "gradient below c_min on Omega_0"),
            (self.interior_boundary_flat_ok, "gradient not flat on the interior part of d omega_hat"),
            (self.regular_boundary_normal_ok, "gradient not inward-normal on the regular boundary"),
        ]
        .into_iter()
        .filter(|(ok, _)| !ok)
        .map(|(_, m)| m)
        .collect()
    }
}

const LEVEL_SET_SAMPLES: usize = 512;
const BOUNDARY_SAMPLES: usize = 512;

/// Checks the four η invariants on the grid nodes and on random points of
/// `{d = ρ/2}` and of the regular boundary inside `Ω̂`.
pub fn validate_eta(eta: &EtaFunction, rs: &RegionSet, grid: &Grid) -> EtaReport {
    let domain = &eta.domain;
    let mut zero_violations = 0;
    let mut positivity_violations = 0;
    let mut max_gradient: f64 = 0.0;
    let mut grads = vec![0.0; grid.len()];
    for i in 0..grid.len() {
        if !rs.in_domain[i] {
            continue;
        }
        let x = grid.coord(i);
        let (v, g) = eta.eval_with_gradient(&x);
        grads[i] = euclid_norm(&g);
        max_gradient = max_gradient.max(grads[i]);
        if rs.omega_hat_mask[i] {
            if !rs.on_boundary[i] && !(v > 0.0) {
                positivity_violations += 1;
            }
        } else if v != 0.0 {
            zero_violations += 1;
        }
    }
    let threshold = C_MIN_FRACTION * max_gradient;
    let mut c_min = f64::INFINITY;
    let mut worst = None;
    let mut gradient_violations = 0;
    let regular = domain.regular_pieces();
    // Where two regular pieces meet there is no normal and η = 0 on both forces ∇η = 0.
    let on_regular_stratum = |x: &[f64]| regular.iter().filter(|r| r.distance(x) < 1e-12).count() >= 2;
    for i in (0..grid.len()).filter(|&i| rs.omega_zero_mask[i]) {
        if rs.on_boundary[i] && on_regular_stratum(&grid.coord(i)) {
            continue;
        }
        if grads[i] < c_min {
            c_min = grads[i];
            worst = Some(i);
        }
        if !(grads[i] >= threshold) || grads[i] == 0.0 {
            gradient_violations += 1;
        }
    }
    let positivity_possible = (0..grid.len()).any(|i| rs.omega_hat_mask[i] && !rs.on_boundary[i]);

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0xe7a);
    let dim = domain.dimension;
    let draw = |rng: &mut rand_chacha::ChaCha8Rng| -> Vec<f64> {
        loop {
            let x: Vec<f64> = (0..dim).map(|_| rng.gen_range(0.0..1.0)).collect();
            if domain.contains(&x) {
                return x;
            }
        }
    };
    let half = rs.omega_hat_radius;
    let mut max_flat: f64 = 0.0;
    let mut level_set_samples = 0;
    if !domain.gamma0.is_empty() {
        for _ in 0..LEVEL_SET_SAMPLES {
            let mut x = draw(&mut rng);
            let piece = &domain.gamma0[rng.gen_range(0..domain.gamma0.len())];
            match piece {
                BoundaryPiece::Face { axis, side } => {
                    x[*axis] = (side.value() - half).abs();
                }
                BoundaryPiece::Point { coords } => {
                    let r = coords.iter().zip(&x).map(|(c, v)| (v - c) * (v - c)).sum::<f64>().sqrt();
                    if r == 0.0 {
                        continue;
                    }
                    for (v, c) in x.iter_mut().zip(coords) {
                        *v = c + (*v - c) * half / r;
                    }
                }
            }
            if !domain.contains_interior(&x) || (domain.distance_unchecked(&x) - half).abs() > 1e-12 {
                continue;
            }
            level_set_samples += 1;
            max_flat = max_flat.max(euclid_norm(&eta.gradient(&x)));
        }
    }
    let mut max_defect: f64 = 0.0;
    let mut boundary_samples = 0;
    if !regular.is_empty() {
        for _ in 0..BOUNDARY_SAMPLES {
            let mut x = draw(&mut rng);
            let piece = &regular[rng.gen_range(0..regular.len())];
            match piece {
                RegularPiece::Face { axis, side } => x[*axis] = side.value(),
                RegularPiece::Arc => {
                    let r = euclid_norm(&x);
                    if r == 0.0 {
                        continue;
                    }
                    x.iter_mut().for_each(|v| *v /= r);
                }
            }
            if !domain.contains(&x) || domain.distance_unchecked(&x) < half {
                continue;
            }
            boundary_samples += 1;
            let g = eta.gradient(&x);
            let nu = piece.outward_normal(&x);
            let gn: f64 = g.iter().zip(&nu).map(|(a, b)| a * b).sum();
            let tangential = g.iter().zip(&nu).map(|(a, b)| (a - gn * b).powi(2)).sum::<f64>().sqrt();
            let scale = max_gradient.max(1e-300);
            max_defect = max_defect.max(tangential / scale).max(gn / scale);
        }
    }
    EtaReport {
        zero_outside_ok: zero_violations == 0,
        positive_inside_ok: positivity_possible && positivity_violations == 0,
        gradient_floor_ok: gradient_violations == 0 && max_gradient > 0.0,
        interior_boundary_flat_ok: max_flat <= FLAT_TOL,
        regular_boundary_normal_ok: max_defect <= FLAT_TOL,
        eta_inf: eta.eta_inf,
        c_min: if c_min.is_finite() { c_min } else { 0.0 },
        c_min_threshold: threshold,
        max_gradient,
        max_flat_gradient: max_flat,
        max_normal_defect: max_defect,
        worst_gradient_node: worst,
        zero_violations,
        positivity_violations,
        gradient_violations,
        level_set_samples,
        boundary_samples,
    }
}

/// The weight family for fixed `(s, λ)`.
#[derive(Debug, Clone)]
pub struct CarlemanWeights {
    pub s: f64,
    pub lambda: f64,
    pub horizon: f64,
    pub eta: Arc<EtaFunction>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WeightValues {
    pub theta: f64,
    pub xi: f64,
    pub sigma: f64,
    pub xi_t: f64,
    pub sigma_t: f64,
    pub sigma_tt: f64,
    pub xi_tilde: f64,
    pub sigma_tilde: f64,
}

/// `θ, θ′, θ″` for `θ(t) = [t(T − t)]⁻⁴`.
pub fn theta(t: f64, horizon: f64) -> Result<(f64, f64, f64)> {
    if !(t > 0.0 && t < horizon) {
        return Err(Error::Singularity(format!("weights are singular at t = {t} (T = {horizon})")));
    }
    let u = t * (horizon - t);
    let du = horizon - 2.0 * t;
    let th = u.powi(-4);
    let d1 = -4.0 * u.powi(-5) * du;
    let d2 = 20.0 * u.powi(-6) * du * du + 8.0 * u.powi(-5);
    Ok((th, d1, d2))
}

impl CarlemanWeights {
    pub fn new(s: f64, lambda: f64, horizon: f64, eta: Arc<EtaFunction>) -> Result<Self> {
        if !(s > 0.0 && lambda > 0.0 && horizon > 0.0) {
            return Err(Error::Parameter(format!(
                "weights need s, lambda, T > 0 (got {s}, {lambda}, {horizon})"
            )));
        }
        Ok(Self { s, lambda, horizon, eta })
    }

    /// Weights for a known value `η(x)`.
    pub fn at_value(&self, eta_x: f64, t: f64) -> Result<WeightValues> {
        let (th, d1, d2) = theta(t, self.horizon)?;
        let lam = self.lambda;
        let ei = self.eta.eta_inf;
        let top = (10.0 * lam * ei).exp();
        let e_plus = (lam * (8.0 * ei + eta_x)).exp();
        let e_minus = (lam * (8.0 * ei - eta_x)).exp();
        Ok(WeightValues {
            theta: th,
            xi: th * e_plus,
            sigma: th * (top - e_plus),
            xi_t: d1 * e_plus,
            sigma_t: d1 * (top - e_plus),
            sigma_tt: d2 * (top - e_plus),
            xi_tilde: th * e_minus,
            sigma_tilde: th * (top - e_minus),
        })
    }
}

pub fn eval_weights(w: &CarlemanWeights, x: &[f64], t: f64) -> Result<WeightValues> {
    w.at_value(w.eta.eval(x), t)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WeightBoundsReport {
    /// `max ξ|ξ_t| / ξ³`.
    pub c_xi_xit: f64,
    /// `max ξ|σ_t| / ξ³`.
    pub c_sigmat: f64,
    /// `max |σ_tt| / ξ³`.
    pub c_sigmatt: f64,
}

/// Fitted constants of the pointwise weight bounds over the domain nodes and
/// the cell-centred times `(k + ½)T/N_t`.
pub fn check_weight_bounds(w: &CarlemanWeights, rs: &RegionSet, steps: usize) -> Result<WeightBoundsReport> {
    let dt = w.horizon / steps as f64;
    let mut rep = WeightBoundsReport { c_xi_xit: 0.0, c_sigmat: 0.0, c_sigmatt: 0.0 };
    let etas: Vec<f64> = w
        .eta
        .values
        .iter()
        .zip(&rs.in_domain)
        .filter(|(_, &inside)| inside)
        .map(|(v, _)| *v)
        .collect();
    for k in 0..steps {
        let t = (k as f64 + 0.5) * dt;
        for &e in &etas {
            let v = w.at_value(e, t)?;
            let xi2 = v.xi * v.xi;
            rep.c_xi_xit = rep.c_xi_xit.max(v.xi_t.abs() / xi2);
            rep.c_sigmat = rep.c_sigmat.max(v.sigma_t.abs() / xi2);
            rep.c_sigmatt = rep.c_sigmatt.max(v.sigma_tt.abs() / (xi2 * v.xi));
        }
    }
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::build_regions;

    fn ex1_setup(n: usize) -> (DomainSpec, RegionSet, Grid) {
        let spec = DomainSpec::hypercube(2, 0.3, 1.0).unwrap();
        let grid = Grid::uniform(2, n).unwrap();
        let rs = build_regions(&spec, &grid).unwrap();
        (spec, rs, grid)
    }

    fn unit_eta() -> Arc<EtaFunction> {
        let (spec, rs, grid) = ex1_setup(17);
        Arc::new(build_eta(&spec, &rs, &grid, &default_peak(&spec, &grid)).unwrap())
    }

    #[test]
    fn default_eta_is_valid() {
        let (spec, rs, grid) = ex1_setup(33);
        let eta = build_eta(&spec, &rs, &grid, &default_peak(&spec, &grid)).unwrap();
        let rep = validate_eta(&eta, &rs, &grid);
        assert!(rep.all_pass(), "{rep:?}");
        assert!((eta.eta_inf - 1.0).abs() < 1e-14);
        assert!(rep.level_set_samples > 100 && rep.boundary_samples > 100);
    }

    #[test]
    fn peak_outside_omega_is_rejected() {
        let (spec, rs, grid) = ex1_setup(17);
        assert!(matches!(build_eta(&spec, &rs, &grid, &[0.5, 0.5]), Err(Error::Parameter(_))));
        assert!(matches!(build_eta(&spec, &rs, &grid, &[0.02, 0.5]), Err(Error::Parameter(_))));
    }

    #[test]
    fn empty_gamma0_bump() {
        let spec = DomainSpec::new(DomainKind::UnitHypercube, 2, vec![], 0.3, 1.0).unwrap();
        let grid = Grid::uniform(2, 17).unwrap();
        let rs = build_regions(&spec, &grid).unwrap();
        let eta = build_eta(&spec, &rs, &grid, &default_peak(&spec, &grid)).unwrap();
        assert!(validate_eta(&eta, &rs, &grid).all_pass());
    }

    #[test]
    fn zero_profile_fails_positivity() {
        let (spec, rs, grid) = ex1_setup(17);
        let eta = EtaFunction::from_profile(&spec, &rs, &grid, &[0.2, 0.2], |x| (0.0, vec![0.0; x.len()]));
        let rep = validate_eta(&eta, &rs, &grid);
        assert!(!rep.positive_inside_ok);
    }

    #[test]
    fn critical_point_in_omega_zero_fails_gradient_floor() {
        let (spec, rs, grid) = ex1_setup(17);
        let eta = EtaFunction::from_profile(&spec, &rs, &grid, &[0.5, 0.5], |x| {
            let r2 = (x[0] - 0.5).powi(2) + (x[1] - 0.5).powi(2);
            (1.0 / (1.0 + r2), vec![-2.0 * (x[0] - 0.5) / (1.0 + r2).powi(2), -2.0 * (x[1] - 0.5) / (1.0 + r2).powi(2)])
        });
        let rep = validate_eta(&eta, &rs, &grid);
        assert!(!rep.gradient_floor_ok);
        assert_eq!(rep.worst_gradient_node, Some(grid.linear_index(&[8, 8])));
    }

    #[test]
    fn gradient_matches_finite_differences_at_second_order() {
        let eta = unit_eta();
        let pts = [[0.23, 0.41], [0.6, 0.19], [0.9, 0.7], [0.48, 0.97]];
        let err = |h: f64| -> f64 {
            pts.iter()
                .map(|p| {
                    let g = eta.gradient(p);
                    (0..2)
                        .map(|a| {
                            let mut xp = p.to_vec();
                            let mut xm = p.to_vec();
                            xp[a] += h;
                            xm[a] -= h;
                            ((eta.eval(&xp) - eta.eval(&xm)) / (2.0 * h) - g[a]).abs()
                        })
                        .fold(0.0, f64::max)
                })
                .fold(0.0, f64::max)
        };
        let (e1, e2) = (err(1e-3), err(5e-4));
        assert!(e1 / e2 > 3.5, "{e1} {e2}");
    }

    #[test]
    fn weight_examples() {
        let eta = unit_eta();
        let w = CarlemanWeights::new(1.0, 1.0, 2.0, eta).unwrap();
        let v = w.at_value(0.0, 1.0).unwrap();
        assert_eq!(v.theta, 1.0);
        assert!((v.xi - 8f64.exp()).abs() < 1e-9 * v.xi);
        assert!((v.xi - 2980.958).abs() < 1e-3);
        assert!((v.sigma - 19045.508).abs() < 1e-3);
        let v1 = w.at_value(1.0, 1.0).unwrap();
        assert!((v1.xi - v1.xi_tilde * 2f64.exp()).abs() < 1e-12 * v1.xi);
        assert!((v1.xi_tilde - 7f64.exp()).abs() < 1e-9 * v1.xi_tilde);
        assert!((v1.sigma - (10f64.exp() - 9f64.exp())).abs() < 1e-9 * v1.sigma);
        assert_eq!(v.sigma_t, 0.0);
        assert!(matches!(w.at_value(0.0, 0.0), Err(Error::Singularity(_))));
        assert!(matches!(w.at_value(0.0, 2.0), Err(Error::Singularity(_))));
    }

    #[test]
    fn theta_derivatives_match_differences() {
        for t in [0.1, 0.37, 0.8] {
            let (_, d1, d2) = theta(t, 1.0).unwrap();
            let h = 1e-5;
            let f = |t| theta(t, 1.0).unwrap().0;
            let fd1 = (f(t + h) - f(t - h)) / (2.0 * h);
            let fd2 = (f(t + h) - 2.0 * f(t) + f(t - h)) / (h * h);
            assert!((fd1 - d1).abs() < 1e-6 * d1.abs().max(1.0));
            assert!((fd2 - d2).abs() < 1e-4 * d2.abs().max(1.0));
            assert!((f(t) - f(1.0 - t)).abs() <= 1e-14 * f(t));
        }
    }
}
