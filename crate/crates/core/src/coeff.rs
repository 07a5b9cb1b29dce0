//! Diffusion matrix fields `A(x)` and the uniform-ellipticity check on Ω̂.

use std::fmt;
use std::path::Path;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::domain::RegionSet;
use crate::error::{Error, Result};
use crate::grid::Grid;

/// Tolerance below which an eigenvalue counts as degenerate.
pub const DEGENERACY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BuiltinExample {
    /// `diag(y^α₂, x^α₁)` on the unit square.
    Ex1,
    /// `diag(x^α₁, y^α₂)` on the unit square.
    Ex2,
    /// `diag(y^α₂, x^α₁, z^α₃, w^α₄)` on the unit 4-cube.
    Ex3,
}

impl BuiltinExample {
    pub fn parse(id: &str) -> Option<Self> {
        match id {
            "ex1" => Some(Self::Ex1),
            "ex2" => Some(Self::Ex2),
            "ex3" => Some(Self::Ex3),
            _ => None,
        }
    }

    pub fn dimension(self) -> usize {
        match self {
            Self::Ex1 | Self::Ex2 => 2,
            Self::Ex3 => 4,
        }
    }
}

type MatrixFn = dyn Fn(&[f64]) -> DMatrix<f64> + Send + Sync;

#[derive(Clone)]
enum Source {
    Builtin(BuiltinExample),
    Identity,
    Table(Arc<TableField>),
    Custom(Arc<MatrixFn>),
}

/// A symmetric matrix field on the closed domain.
#[derive(Clone)]
pub struct CoefficientField {
    dim: usize,
    alpha: Vec<f64>,
    source: Source,
}

impl fmt::Debug for CoefficientField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match &self.source {
            Source::Builtin(e) => format!("{e:?}"),
            Source::Identity => "identity".into(),
            Source::Table(_) => "table".into(),
            Source::Custom(_) => "custom".into(),
        };
        f.debug_struct("CoefficientField")
            .field("dim", &self.dim)
            .field("kind", &kind)
            .field("alpha", &self.alpha)
            .finish()
    }
}

impl CoefficientField {
    pub fn identity(dim: usize) -> Self {
        Self { dim, alpha: vec![], source: Source::Identity }
    }

    /// Arbitrary user field; symmetry is checked by [`check_assumption`], not here.
    pub fn custom<F>(dim: usize, f: F) -> Self
    where
        F: Fn(&[f64]) -> DMatrix<f64> + Send + Sync + 'static,
    {
        Self { dim, alpha: vec![], source: Source::Custom(Arc::new(f)) }
    }

    pub fn from_table(table: TableField) -> Self {
        Self { dim: table.dim, alpha: vec![], source: Source::Table(Arc::new(table)) }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn is_diagonal(&self) -> bool {
        matches!(self.source, Source::Builtin(_) | Source::Identity)
    }

    pub fn eval(&self, x: &[f64]) -> DMatrix<f64> {
        match &self.source {
            Source::Identity => DMatrix::identity(self.dim, self.dim),
            Source::Builtin(ex) => DMatrix::from_diagonal(&nalgebra::DVector::from_vec(
                builtin_diagonal(*ex, &self.alpha, x),
            )),
            Source::Table(t) => t.eval(x),
            Source::Custom(f) => f(x),
        }
    }
}

fn pow(base: f64, e: f64) -> f64 {
    if base <= 0.0 {
        0.0
    } else {
        base.powf(e)
    }
}

fn builtin_diagonal(ex: BuiltinExample, a: &[f64], x: &[f64]) -> Vec<f64> {
    match ex {
        BuiltinExample::Ex1 => vec![pow(x[1], a[1]), pow(x[0], a[0])],
        BuiltinExample::Ex2 => vec![pow(x[0], a[0]), pow(x[1], a[1])],
        BuiltinExample::Ex3 => vec![
            pow(x[1], a[1]),
            pow(x[0], a[0]),
            pow(x[2], a[2]),
            pow(x[3], a[3]),
        ],
    }
}

/// One of the worked examples with exponents `α_i ∈ (0, 2)`.
pub fn builtin_example(id: BuiltinExample, alpha: &[f64]) -> Result<CoefficientField> {
    let dim = id.dimension();
    if alpha.len() != dim {
        return Err(Error::Parameter(format!(
            "{id:?} needs {dim} exponents, got {}",
            alpha.len()
        )));
    }
    if let Some(bad) = alpha.iter().find(|&&a| !(a > 0.0 && a < 2.0)) {
        return Err(Error::Parameter(format!("exponent {bad} outside (0, 2)")));
    }
    Ok(CoefficientField { dim, alpha: alpha.to_vec(), source: Source::Builtin(id) })
}

/// Grid-sampled symmetric field with multilinear interpolation.
#[derive(Debug, Clone)]
pub struct TableField {
    dim: usize,
    axes: Vec<Vec<f64>>,
    /// Upper-triangle entries (row-major) per table node, last axis fastest.
    entries: Vec<Vec<f64>>,
}

impl TableField {
    /// Parses `x0,..,x{d-1},a00,a01,..` rows (upper triangle, row-major) forming a full tensor grid.
    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| Error::Config("empty coefficient table".into()))?;
        let cols = header.split(',').count();
        let dim = (1..=4)
            .find(|d| d + d * (d + 1) / 2 == cols)
            .ok_or_else(|| Error::Config(format!("table header has {cols} columns; not d + d(d+1)/2")))?;
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for (lineno, line) in lines.enumerate() {
            let vals: std::result::Result<Vec<f64>, _> =
                line.split(',').map(|v| v.trim().parse::<f64>()).collect();
            let vals = vals.map_err(|e| Error::Config(format!("table line {}: {e}", lineno + 2)))?;
            if vals.len() != cols {
                return Err(Error::Config(format!("table line {}: expected {cols} values", lineno + 2)));
            }
            rows.push(vals);
        }
        let mut axes: Vec<Vec<f64>> = (0..dim)
            .map(|a| {
                let mut v: Vec<f64> = rows.iter().map(|r| r[a]).collect();
                v.sort_by(|x, y| x.partial_cmp(y).unwrap());
                v.dedup_by(|x, y| (*x - *y).abs() < 1e-12);
                v
            })
            .collect();
        let count: usize = axes.iter().map(Vec::len).product();
        if count != rows.len() || axes.iter().any(|a| a.len() < 2) {
            return Err(Error::Config("coefficient table is not a full tensor grid".into()));
        }
        let mut entries = vec![Vec::new(); count];
        for r in &rows {
            let mut lin = 0;
            for (a, axis) in axes.iter().enumerate() {
                let k = axis.iter().position(|&c| (c - r[a]).abs() < 1e-12).unwrap();
                lin = lin * axis.len() + k;
            }
            entries[lin] = r[dim..].to_vec();
        }
        for axis in &mut axes {
            axis.shrink_to_fit();
        }
        Ok(Self { dim, axes, entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| Error::Io { path: path.display().to_string(), source })?;
        Self::parse_csv(&text)
    }

    fn eval(&self, x: &[f64]) -> DMatrix<f64> {
        let d = self.dim;
        // Per-axis bracketing cell and local coordinate.
        let mut lo = vec![0usize; d];
        let mut frac = vec![0.0; d];
        for a in 0..d {
            let ax = &self.axes[a];
            let xa = x[a].clamp(ax[0], ax[ax.len() - 1]);
            let k = ax.partition_point(|&c| c <= xa).saturating_sub(1).min(ax.len() - 2);
            lo[a] = k;
            frac[a] = (xa - ax[k]) / (ax[k + 1] - ax[k]);
        }
        let ntri = d * (d + 1) / 2;
        let mut acc = vec![0.0; ntri];
        for corner in 0..(1usize << d) {
            let mut w = 1.0;
            let mut lin = 0;
            for a in 0..d {
                let bit = (corner >> a) & 1;
                w *= if bit == 1 { frac[a] } else { 1.0 - frac[a] };
                lin = lin * self.axes[a].len() + lo[a] + bit;
            }
            if w != 0.0 {
                for (s, e) in acc.iter_mut().zip(&self.entries[lin]) {
                    *s += w * e;
                }
            }
        }
        let mut m = DMatrix::zeros(d, d);
        let mut t = 0;
        for i in 0..d {
            for j in i..d {
                m[(i, j)] = acc[t];
                m[(j, i)] = acc[t];
                t += 1;
            }
        }
        m
    }
}

/// Smallest and largest eigenvalue of a symmetric matrix.
///
/// Closed form up to 2×2, cyclic Jacobi beyond.
pub fn eigen_extremes(m: &DMatrix<f64>) -> (f64, f64) {
    let n = m.nrows();
    match n {
        0 => (0.0, 0.0),
        1 => (m[(0, 0)], m[(0, 0)]),
        2 => {
            let (a, b, c) = (m[(0, 0)], 0.5 * (m[(0, 1)] + m[(1, 0)]), m[(1, 1)]);
            let mean = 0.5 * (a + c);
            let rad = (0.25 * (a - c) * (a - c) + b * b).sqrt();
            (mean - rad, mean + rad)
        }
        _ => {
            let ev = jacobi_eigenvalues(m);
            let lo = ev.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = ev.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            (lo, hi)
        }
    }
}

fn jacobi_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let n = m.nrows();
    let mut a = 0.5 * (m + m.transpose());
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[(i, j)] * a[(i, j)])
            .sum();
        if off <= 1e-30 * (1.0 + a.norm_squared()) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
            }
        }
    }
    (0..n).map(|i| a[(i, i)]).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssumptionReport {
    /// Minimum eigenvalue of `A` over Ω̂ nodes.
    pub beta_hat: f64,
    /// Maximum eigenvalue of `A` over Ω̂ nodes.
    pub lambda_hat: f64,
    pub min_interior_eigenvalue: f64,
    pub interior_spd_ok: bool,
    pub min_gamma0_eigenvalue: f64,
    pub degeneracy_detected: bool,
    pub max_asymmetry: f64,
    pub symmetric_ok: bool,
    pub omega_hat_nodes: usize,
}

impl AssumptionReport {
    /// Symmetric, positive definite inside Ω and uniformly elliptic on Ω̂.
    pub fn passes(&self) -> bool {
        self.symmetric_ok && self.interior_spd_ok && self.beta_hat > 0.0 && self.lambda_hat.is_finite()
    }
}

/// Samples `A` at every node and reports the ellipticity data.
pub fn check_assumption(field: &CoefficientField, rs: &RegionSet, grid: &Grid) -> AssumptionReport {
    let mut beta = f64::INFINITY;
    let mut lambda = f64::NEG_INFINITY;
    let mut interior_min = f64::INFINITY;
    let mut gamma0_min = f64::INFINITY;
    let mut asym: f64 = 0.0;
    let mut hat_nodes = 0;
    for i in 0..grid.len() {
        if !rs.in_domain[i] {
            continue;
        }
        let a = field.eval(&grid.coord(i));
        asym = asym.max((&a - a.transpose()).amax());
        let (lo, hi) = eigen_extremes(&a);
        if rs.omega_hat_mask[i] {
            hat_nodes += 1;
            beta = beta.min(lo);
            lambda = lambda.max(hi);
        }
        if rs.on_boundary[i] {
            if rs.dist_gamma0[i] <= 1e-12 {
                gamma0_min = gamma0_min.min(lo);
            }
        } else {
            interior_min = interior_min.min(lo);
        }
    }
    AssumptionReport {
        beta_hat: beta,
        lambda_hat: lambda,
        min_interior_eigenvalue: interior_min,
        interior_spd_ok: interior_min > 0.0,
        min_gamma0_eigenvalue: gamma0_min,
        degeneracy_detected: gamma0_min <= DEGENERACY_TOL,
        max_asymmetry: asym,
        symmetric_ok: asym == 0.0,
        omega_hat_nodes: hat_nodes,
    }
}
