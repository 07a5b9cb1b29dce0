//! Spatial domain, the degenerate sub-boundary Γ₀ and the nested control regions.
//!
//! All regions are node masks on a [`Grid`] built from the Euclidean distance
//! `d(x) = dist(x, Γ₀)`:
//!
//! | region | mask |
//! |--------|------|
//! | ω₀ (control collar) | `d < ρ` |
//! | Ω̂ (ellipticity region) | `d > ρ/2` |
//! | Ω₀ | `d > 5ρ/6` |
//! | ω | `d > ρ/10`, eroded one cell inside ω₀ |

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;

const ON_BOUNDARY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainKind {
    UnitHypercube,
    QuarterDisk,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Low,
    High,
}

impl Side {
    pub fn value(self) -> f64 {
        match self {
            Side::Low => 0.0,
            Side::High => 1.0,
        }
    }
}

/// One piece of Γ₀.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum BoundaryPiece {
    /// The face `{x_axis = 0}` or `{x_axis = 1}`; a degenerate piece of Γ₂.
    Face { axis: usize, side: Side },
    /// An isolated point such as a vertex or an arc endpoint; a non-C² piece of Γ₁.
    Point { coords: Vec<f64> },
}

impl BoundaryPiece {
    pub fn face(axis: usize, side: Side) -> Self {
        BoundaryPiece::Face { axis, side }
    }

    pub fn point(coords: &[f64]) -> Self {
        BoundaryPiece::Point { coords: coords.to_vec() }
    }

    /// Exact distance from a point of the closed domain to this piece.
    pub fn distance(&self, x: &[f64]) -> f64 {
        match self {
            BoundaryPiece::Face { axis, side } => (x[*axis] - side.value()).abs(),
            BoundaryPiece::Point { coords } => euclid(x, coords),
        }
    }

    /// Gradient of [`Self::distance`]; zero at the point itself.
    pub fn distance_gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; x.len()];
        match self {
            BoundaryPiece::Face { axis, side } => {
                g[*axis] = if *side == Side::Low { 1.0 } else { -1.0 };
            }
            BoundaryPiece::Point { coords } => {
                let r = euclid(x, coords);
                if r > 0.0 {
                    for (gi, (xi, ci)) in g.iter_mut().zip(x.iter().zip(coords)) {
                        *gi = (xi - ci) / r;
                    }
                }
            }
        }
        g
    }
}

/// Boundary pieces outside Γ₀, where the equation is regular.
#[derive(Debug, Clone, PartialEq)]
pub enum RegularPiece {
    Face { axis: usize, side: Side },
    /// The unit arc of the quarter disk.
    Arc,
}

impl RegularPiece {
    pub fn distance(&self, x: &[f64]) -> f64 {
        match self {
            RegularPiece::Face { axis, side } => (x[*axis] - side.value()).abs(),
            RegularPiece::Arc => (1.0 - norm(x)).abs(),
        }
    }

    /// Gradient of the distance, pointing into the domain.
    pub fn distance_gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; x.len()];
        match self {
            RegularPiece::Face { axis, side } => {
                g[*axis] = if *side == Side::Low { 1.0 } else { -1.0 };
            }
            RegularPiece::Arc => {
                let r = norm(x);
                if r > 0.0 {
                    for (gi, xi) in g.iter_mut().zip(x) {
                        *gi = -xi / r;
                    }
                }
            }
        }
        g
    }

    /// Outward unit normal at a point of this piece.
    pub fn outward_normal(&self, x: &[f64]) -> Vec<f64> {
        self.distance_gradient(x).iter().map(|g| -g).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryClass {
    Degenerate,
    NonC2,
    Regular,
}

/// Domain geometry, Γ₀, collar width ρ and time horizon T.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub kind: DomainKind,
    pub dimension: usize,
    pub gamma0: Vec<BoundaryPiece>,
    pub rho: f64,
    #[serde(rename = "T")]
    pub horizon: f64,
}

impl DomainSpec {
    pub fn new(
        kind: DomainKind,
        dimension: usize,
        gamma0: Vec<BoundaryPiece>,
        rho: f64,
        horizon: f64,
    ) -> Result<Self> {
        let spec = Self { kind, dimension, gamma0, rho, horizon };
        spec.validate()?;
        Ok(spec)
    }

    /// Γ₀ of the built-in examples on `(0,1)^d`: every face `{x_i = 0}` plus the vertex `(1,…,1)`.
    /// On the quarter disk it is the two straight edges.
    pub fn default_gamma0(kind: DomainKind, dimension: usize) -> Vec<BoundaryPiece> {
        let mut pieces: Vec<BoundaryPiece> =
            (0..dimension).map(|a| BoundaryPiece::face(a, Side::Low)).collect();
        if kind == DomainKind::UnitHypercube {
            pieces.push(BoundaryPiece::point(&vec![1.0; dimension]));
        }
        pieces
    }

    /// `(0,1)^d` with the default Γ₀.
    pub fn hypercube(dimension: usize, rho: f64, horizon: f64) -> Result<Self> {
        Self::new(
            DomainKind::UnitHypercube,
            dimension,
            Self::default_gamma0(DomainKind::UnitHypercube, dimension),
            rho,
            horizon,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.dimension == 0 {
            return Err(Error::Parameter("dimension must be at least 1".into()));
        }
        if self.kind == DomainKind::QuarterDisk && self.dimension != 2 {
            return Err(Error::Parameter("quarter_disk domains are two-dimensional".into()));
        }
        if !(self.rho > 0.0) {
            return Err(Error::Parameter(format!("rho must be positive, got {}", self.rho)));
        }
        if self.rho >= 0.5 * self.diameter() {
            return Err(Error::Parameter(format!(
                "rho = {} must be below half the domain diameter ({:.4})",
                self.rho,
                0.5 * self.diameter()
            )));
        }
        if !(self.horizon > 0.0) {
            return Err(Error::Parameter(format!("T must be positive, got {}", self.horizon)));
        }
        for piece in &self.gamma0 {
            match piece {
                BoundaryPiece::Face { axis, .. } => {
                    if *axis >= self.dimension {
                        return Err(Error::Domain(format!(
                            "face axis {axis} out of range for dimension {}",
                            self.dimension
                        )));
                    }
                    if self.kind == DomainKind::QuarterDisk
                        && !matches!(piece, BoundaryPiece::Face { side: Side::Low, .. })
                    {
                        return Err(Error::Domain(
                            "quarter disk faces must be one of the straight edges {x_i = 0}".into(),
                        ));
                    }
                }
                BoundaryPiece::Point { coords } => {
                    if coords.len() != self.dimension || !self.on_boundary(coords) {
                        return Err(Error::Domain(format!(
                            "point {coords:?} is not on the domain boundary"
                        )));
                    }
                    if self.kind == DomainKind::UnitHypercube
                        && coords.iter().any(|&c| c != 0.0 && c != 1.0)
                    {
                        return Err(Error::Domain(format!(
                            "point {coords:?} is not a vertex of the unit hypercube"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn diameter(&self) -> f64 {
        match self.kind {
            DomainKind::UnitHypercube => (self.dimension as f64).sqrt(),
            DomainKind::QuarterDisk => 2f64.sqrt(),
        }
    }

    /// Membership in the closed domain.
    pub fn contains(&self, x: &[f64]) -> bool {
        let tol = ON_BOUNDARY_TOL;
        let in_box = x.iter().all(|&c| (-tol..=1.0 + tol).contains(&c));
        match self.kind {
            DomainKind::UnitHypercube => in_box,
            DomainKind::QuarterDisk => in_box && norm(x) <= 1.0 + tol,
        }
    }

    /// Membership in the open domain.
    pub fn contains_interior(&self, x: &[f64]) -> bool {
        self.contains(x) && !self.on_boundary(x)
    }

    pub fn on_boundary(&self, x: &[f64]) -> bool {
        if !self.contains(x) {
            return false;
        }
        let tol = ON_BOUNDARY_TOL;
        let on_face = |lo_only: bool| {
            x.iter().any(|&c| c.abs() <= tol || (!lo_only && (c - 1.0).abs() <= tol))
        };
        match self.kind {
            DomainKind::UnitHypercube => on_face(false),
            DomainKind::QuarterDisk => on_face(true) || (norm(x) - 1.0).abs() <= tol,
        }
    }

    /// Boundary pieces not belonging to Γ₀.
    pub fn regular_pieces(&self) -> Vec<RegularPiece> {
        let in_gamma0 = |axis: usize, side: Side| {
            self.gamma0
                .iter()
                .any(|p| matches!(p, BoundaryPiece::Face { axis: a, side: s } if *a == axis && *s == side))
        };
        let mut out = Vec::new();
        match self.kind {
            DomainKind::UnitHypercube => {
                for axis in 0..self.dimension {
                    for side in [Side::Low, Side::High] {
                        if !in_gamma0(axis, side) {
                            out.push(RegularPiece::Face { axis, side });
                        }
                    }
                }
            }
            DomainKind::QuarterDisk => {
                for axis in 0..2 {
                    if !in_gamma0(axis, Side::Low) {
                        out.push(RegularPiece::Face { axis, side: Side::Low });
                    }
                }
                out.push(RegularPiece::Arc);
            }
        }
        out
    }

    /// `d(x, Γ₀)`; infinite when Γ₀ is empty.
    pub fn distance_to_gamma0(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dimension {
            return Err(Error::Domain(format!(
                "point has dimension {}, domain has {}",
                x.len(),
                self.dimension
            )));
        }
        if !self.contains(x) {
            return Err(Error::Domain(format!("point {x:?} lies outside the closed domain")));
        }
        Ok(self.distance_unchecked(x))
    }

    pub(crate) fn distance_unchecked(&self, x: &[f64]) -> f64 {
        self.gamma0
            .iter()
            .map(|p| p.distance(x))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn classify_boundary(&self, x: &[f64]) -> Result<BoundaryClass> {
        if x.len() != self.dimension || !self.on_boundary(x) {
            return Err(Error::Domain(format!("point {x:?} is not on the boundary")));
        }
        let tol = 1e-9;
        let mut class = BoundaryClass::Regular;
        for piece in &self.gamma0 {
            if piece.distance(x) <= tol {
                match piece {
                    BoundaryPiece::Face { .. } => return Ok(BoundaryClass::Degenerate),
                    BoundaryPiece::Point { .. } => class = BoundaryClass::NonC2,
                }
            }
        }
        Ok(class)
    }
}

/// Node masks for ω₀, ω, Ω̂ and Ω₀ together with the radii that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionSet {
    pub rho: f64,
    /// Radius below which nodes are dropped from ω (`ρ/10`).
    pub omega_inner_radius: f64,
    /// Ω̂ = {d > omega_hat_radius}.
    pub omega_hat_radius: f64,
    /// Ω₀ = {d > omega_zero_radius}.
    pub omega_zero_radius: f64,
    pub gamma0_empty: bool,
    /// Node lies in the closed domain.
    pub in_domain: Vec<bool>,
    /// Node lies on the domain boundary.
    pub on_boundary: Vec<bool>,
    pub dist_gamma0: Vec<f64>,
    pub omega0_mask: Vec<bool>,
    pub omega_mask: Vec<bool>,
    pub omega_hat_mask: Vec<bool>,
    pub omega_zero_mask: Vec<bool>,
    /// Axis neighbors of each node (for margin checks).
    neighbors: Vec<Vec<usize>>,
}

impl RegionSet {
    /// Replaces the control collar by the whole domain (ω₀ = Ω).
    pub fn with_control_everywhere(mut self) -> Self {
        self.omega0_mask = self.in_domain.clone();
        self
    }

    pub fn len(&self) -> usize {
        self.in_domain.len()
    }

    pub fn is_empty(&self) -> bool {
        self.in_domain.is_empty()
    }

    /// Control indicator χ_ω₀ as 0/1 per node.
    pub fn control_indicator(&self) -> Vec<f64> {
        self.omega0_mask.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
    }

    /// Volume of a node mask using trapezoid node volumes.
    pub fn mask_volume(&self, grid: &Grid, mask: &[bool]) -> f64 {
        mask.iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(i, _)| grid.node_volume(i))
            .sum()
    }

    /// CSV with node index, coordinates and the four masks.
    pub fn to_csv(&self, grid: &Grid) -> String {
        let mut out = String::from("node");
        for a in 0..grid.dim() {
            let _ = write!(out, ",x{a}");
        }
        out.push_str(",omega0,omega,omega_hat,omega_zero\n");
        for i in 0..grid.len() {
            if !self.in_domain[i] {
                continue;
            }
            let _ = write!(out, "{i}");
            for c in grid.coord(i) {
                let _ = write!(out, ",{c}");
            }
            let b = |m: &[bool]| u8::from(m[i]);
            let _ = writeln!(
                out,
                ",{},{},{},{}",
                b(&self.omega0_mask),
                b(&self.omega_mask),
                b(&self.omega_hat_mask),
                b(&self.omega_zero_mask)
            );
        }
        out
    }
}

/// Builds the node masks and checks every nesting relation.
pub fn build_regions(spec: &DomainSpec, grid: &Grid) -> Result<RegionSet> {
    let rs = build_regions_unchecked(spec, grid)?;
    let report = validate_nesting(&rs);
    if let Some(bad) = report.checks.iter().find(|c| !c.pass) {
        return Err(Error::Resolution {
            inclusion: bad.inclusion.clone(),
            detail: format!(
                "{} offending node(s){}",
                bad.violations,
                bad.worst_node.map(|n| format!(", e.g. node {n}")).unwrap_or_default()
            ),
        });
    }
    Ok(rs)
}

/// Builds the masks without validating the nesting chain.
pub fn build_regions_unchecked(spec: &DomainSpec, grid: &Grid) -> Result<RegionSet> {
    if grid.dim() != spec.dimension {
        return Err(Error::Shape(format!(
            "grid dimension {} does not match domain dimension {}",
            grid.dim(),
            spec.dimension
        )));
    }
    let rho = spec.rho;
    let n = grid.len();
    let coords = grid.coords();
    let in_domain: Vec<bool> = coords.iter().map(|x| spec.contains(x)).collect();
    let on_boundary: Vec<bool> = coords.iter().map(|x| spec.on_boundary(x)).collect();
    let dist: Vec<f64> = coords
        .iter()
        .zip(&in_domain)
        .map(|(x, &inside)| if inside { spec.distance_unchecked(x) } else { f64::NAN })
        .collect();
    let neighbors: Vec<Vec<usize>> = (0..n)
        .map(|i| {
            (0..grid.dim())
                .flat_map(|a| [grid.neighbor(i, a, false), grid.neighbor(i, a, true)])
                .flatten()
                .filter(|&j| in_domain[j])
                .collect()
        })
        .collect();

    let mask = |pred: &dyn Fn(f64) -> bool| -> Vec<bool> {
        (0..n).map(|i| in_domain[i] && pred(dist[i])).collect()
    };
    let omega0_mask = mask(&|d| d < rho);
    let omega_hat_radius = rho / 2.0;
    let omega_zero_radius = 5.0 * rho / 6.0;
    let omega_inner_radius = rho / 10.0;
    let omega_hat_mask = mask(&|d| d > omega_hat_radius);
    let omega_zero_mask = mask(&|d| d > omega_zero_radius);
    let omega_mask: Vec<bool> = (0..n)
        .map(|i| {
            omega0_mask[i]
                && dist[i] > omega_inner_radius
                && neighbors[i].iter().all(|&j| omega0_mask[j])
        })
        .collect();

    Ok(RegionSet {
        rho,
        omega_inner_radius,
        omega_hat_radius,
        omega_zero_radius,
        gamma0_empty: spec.gamma0.is_empty(),
        in_domain,
        on_boundary,
        dist_gamma0: dist,
        omega0_mask,
        omega_mask,
        omega_hat_mask,
        omega_zero_mask,
        neighbors,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InclusionCheck {
    pub inclusion: String,
    pub pass: bool,
    pub violations: usize,
    pub worst_node: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NestingReport {
    pub checks: Vec<InclusionCheck>,
}

impl NestingReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn check(&self, inclusion: &str) -> Option<&InclusionCheck> {
        self.checks.iter().find(|c| c.inclusion == inclusion)
    }
}

pub const INC_OMEGA0_EXACT: &str = "omega0 = {d < rho}";
pub const INC_OMEGA_IN_OMEGA0: &str = "omega ⊂⊂ omega0";
pub const INC_COMPLEMENT_IN_OMEGA_ZERO: &str = "Omega \\ omega0 ⊂ Omega_0";
pub const INC_OMEGA_ZERO_IN_HAT: &str = "Omega_0 ⊊ Omega_hat";
pub const INC_HAT_AVOIDS_INNER_BALLS: &str = "Omega_hat ∩ B(Gamma0, rho/3) = ∅";
pub const INC_OUTER_IN_HAT: &str = "Omega \\ B(Gamma0, 2rho/3) ⊂ Omega_hat";
pub const INC_OMEGA_ZERO_AVOIDS_BALLS: &str = "Omega_0 ⊂ Omega \\ B(Gamma0, 2rho/3)";
pub const INC_OMEGA_NONEMPTY: &str = "omega ≠ ∅";
pub const INC_OMEGA_ZERO_NONEMPTY: &str = "Omega_0 ≠ ∅";

/// Checks every inclusion of the region chain; failures are reported, never raised.
pub fn validate_nesting(rs: &RegionSet) -> NestingReport {
    let n = rs.len();
    let rho = rs.rho;
    let nodes = || (0..n).filter(|&i| rs.in_domain[i]);
    let check = |name: &str, bad: Vec<usize>| {
        // Worst offender: the violating node closest to Γ₀.
        let worst = bad.iter().copied().min_by(|&a, &b| {
            rs.dist_gamma0[a]
                .partial_cmp(&rs.dist_gamma0[b])
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        InclusionCheck {
            inclusion: name.to_string(),
            pass: bad.is_empty(),
            violations: bad.len(),
            worst_node: worst,
        }
    };
    let d = &rs.dist_gamma0;
    let mut checks = vec![
        check(
            INC_OMEGA0_EXACT,
            nodes().filter(|&i| rs.omega0_mask[i] != (d[i] < rho)).collect(),
        ),
        check(
            INC_OMEGA_IN_OMEGA0,
            nodes()
                .filter(|&i| {
                    rs.omega_mask[i]
                        && (!rs.omega0_mask[i] || rs.neighbors[i].iter().any(|&j| !rs.omega0_mask[j]))
                })
                .collect(),
        ),
        check(
            INC_COMPLEMENT_IN_OMEGA_ZERO,
            nodes().filter(|&i| !rs.omega0_mask[i] && !rs.omega_zero_mask[i]).collect(),
        ),
    ];
    let mut zero_in_hat: Vec<usize> = nodes()
        .filter(|&i| {
            rs.omega_zero_mask[i]
                && (!rs.omega_hat_mask[i]
                    || (!rs.gamma0_empty && rs.neighbors[i].iter().any(|&j| !rs.omega_hat_mask[j])))
        })
        .collect();
    if !rs.gamma0_empty && zero_in_hat.is_empty() {
        let strict = nodes().any(|i| rs.omega_hat_mask[i] && !rs.omega_zero_mask[i]);
        if !strict {
            zero_in_hat = nodes().filter(|&i| rs.omega_hat_mask[i]).take(1).collect();
        }
    }
    checks.push(check(INC_OMEGA_ZERO_IN_HAT, zero_in_hat));
    checks.push(check(
        INC_HAT_AVOIDS_INNER_BALLS,
        nodes().filter(|&i| rs.omega_hat_mask[i] && d[i] < rho / 3.0).collect(),
    ));
    checks.push(check(
        INC_OUTER_IN_HAT,
        nodes().filter(|&i| d[i] >= 2.0 * rho / 3.0 && !rs.omega_hat_mask[i]).collect(),
    ));
    checks.push(check(
        INC_OMEGA_ZERO_AVOIDS_BALLS,
        nodes().filter(|&i| rs.omega_zero_mask[i] && d[i] < 2.0 * rho / 3.0).collect(),
    ));
    if !rs.gamma0_empty {
        let empty = |m: &[bool]| !nodes().any(|i| m[i]);
        checks.push(InclusionCheck {
            inclusion: INC_OMEGA_NONEMPTY.into(),
            pass: !empty(&rs.omega_mask),
            violations: usize::from(empty(&rs.omega_mask)),
            worst_node: None,
        });
        checks.push(InclusionCheck {
            inclusion: INC_OMEGA_ZERO_NONEMPTY.into(),
            pass: !empty(&rs.omega_zero_mask),
            violations: usize::from(empty(&rs.omega_zero_mask)),
            worst_node: None,
        });
    }
    NestingReport { checks }
}

pub(crate) fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

pub(crate) fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn example1(rho: f64) -> DomainSpec {
        DomainSpec::hypercube(2, rho, 1.0).unwrap()
    }

    /// Brute-force distance: dense sampling of every Γ₀ piece.
    fn sampled_distance(spec: &DomainSpec, x: &[f64]) -> f64 {
        let m = 20_000;
        let mut best = f64::INFINITY;
        for piece in &spec.gamma0 {
            match piece {
                BoundaryPiece::Face { axis, side } => {
                    for k in 0..=m {
                        let mut p = vec![k as f64 / m as f64; 2];
                        p[1 - axis] = k as f64 / m as f64;
                        p[*axis] = if *side == Side::Low { 0.0 } else { 1.0 };
                        best = best.min(euclid(x, &p));
                    }
                }
                BoundaryPiece::Point { coords } => best = best.min(euclid(x, coords)),
            }
        }
        best
    }

    #[test]
    fn distance_examples() {
        let spec = example1(0.3);
        assert!((spec.distance_to_gamma0(&[0.1, 0.5]).unwrap() - 0.1).abs() < 1e-15);
        assert!((spec.distance_to_gamma0(&[0.5, 0.5]).unwrap() - 0.5).abs() < 1e-15);
        let x = [0.95, 0.95];
        let oracle = sampled_distance(&spec, &x);
        let d = spec.distance_to_gamma0(&x).unwrap();
        assert!((d - oracle).abs() < 1e-4);
        assert!((d - 0.070_710_678_118_654_76).abs() < 1e-12);
        assert!(spec.distance_to_gamma0(&[1.2, 0.5]).is_err());
    }

    #[test]
    fn classify_example1() {
        let spec = example1(0.3);
        assert_eq!(spec.classify_boundary(&[0.0, 0.5]).unwrap(), BoundaryClass::Degenerate);
        assert_eq!(spec.classify_boundary(&[1.0, 1.0]).unwrap(), BoundaryClass::NonC2);
        assert_eq!(spec.classify_boundary(&[1.0, 0.5]).unwrap(), BoundaryClass::Regular);
        assert!(spec.classify_boundary(&[0.5, 0.5]).is_err());
    }

    #[test]
    fn regions_on_example1_pass_nesting() {
        for n in [33, 65] {
            let grid = Grid::uniform(2, n).unwrap();
            let rs = build_regions(&example1(0.3), &grid).unwrap();
            let report = validate_nesting(&rs);
            assert!(report.all_pass(), "{report:?}");
            // The corner ball around (1,1) belongs to the collar.
            let corner = grid.linear_index(&[n - 1, n - 2]);
            assert!(rs.omega0_mask[corner]);
        }
    }

    #[test]
    fn large_rho_is_rejected() {
        assert!(DomainSpec::hypercube(2, 0.9, 1.0).is_err());
        let grid = Grid::uniform(2, 33).unwrap();
        let err = build_regions(&example1(0.7), &grid).unwrap_err();
        assert!(matches!(err, Error::Resolution { .. }), "{err}");
    }

    #[test]
    fn empty_gamma0_is_the_nondegenerate_limit() {
        let spec = DomainSpec::new(DomainKind::UnitHypercube, 2, vec![], 0.3, 1.0).unwrap();
        let grid = Grid::uniform(2, 17).unwrap();
        let rs = build_regions(&spec, &grid).unwrap();
        assert!(rs.omega0_mask.iter().all(|&b| !b));
        assert!(rs.omega_hat_mask.iter().all(|&b| b));
        assert_eq!(rs.omega_hat_mask, rs.omega_zero_mask);
    }

    #[test]
    fn forced_violation_is_reported() {
        let grid = Grid::uniform(2, 33).unwrap();
        let mut rs = build_regions(&example1(0.3), &grid).unwrap();
        rs.omega_mask = rs.omega0_mask.clone();
        let report = validate_nesting(&rs);
        let c = report.check(INC_OMEGA_IN_OMEGA0).unwrap();
        assert!(!c.pass);
        assert!(c.worst_node.is_some());
    }

    #[test]
    fn quarter_disk_masks_the_grid() {
        let spec = DomainSpec::new(
            DomainKind::QuarterDisk,
            2,
            DomainSpec::default_gamma0(DomainKind::QuarterDisk, 2),
            0.2,
            1.0,
        )
        .unwrap();
        let grid = Grid::uniform(2, 33).unwrap();
        let rs = build_regions(&spec, &grid).unwrap();
        assert!(!rs.in_domain[grid.linear_index(&[32, 32])]);
        assert!(spec.regular_pieces().contains(&RegularPiece::Arc));
        assert_eq!(spec.classify_boundary(&[0.6, 0.8]).unwrap(), BoundaryClass::Regular);
    }

    #[test]
    fn csv_has_one_row_per_domain_node() {
        let grid = Grid::uniform(2, 9).unwrap();
        let rs = build_regions(&example1(0.3), &grid).unwrap();
        let csv = rs.to_csv(&grid);
        assert_eq!(csv.lines().count(), 1 + 81);
        assert!(csv.starts_with("node,x0,x1,omega0,omega,omega_hat,omega_zero"));
    }
}
