//! Flux-form discretization of `Div(A∇·)`, implicit Euler for the controlled
//! system and the exact discrete transpose for the backward adjoint system.
//!
//! The operator is stored as a symmetric negative semidefinite stiffness
//! matrix `K` together with the diagonal nodal mass `M`, so that
//! `L = M⁻¹K ≈ Div(A∇·)` and `-zᵀKz ≈ ∫ ∇z·A∇z`. A forward step solves
//!
//! ```text
//! (M - Δt K) z^{k+1} = M z^k + Δt M χ g^{k+1}
//! ```
//!
//! and a backward step solves `(M - Δt K) w^k = M w^{k+1} - Δt M f^k`. The
//! one-step map `S = (M - Δt K)⁻¹ M` is self-adjoint in the `M` inner product,
//! which gives the discrete duality identity
//! `⟨z^N, w^N⟩ - ⟨z^0, w^0⟩ = Σ_k Δt ⟨χ g^{k+1}, w^k⟩` for `f = 0`.

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::coeff::CoefficientField;
use crate::domain::{DomainKind, DomainSpec};
use crate::error::{Error, Result};
use crate::grid::{Grid, GridFunction, SpaceTimeField};
use crate::sparse::{conjugate_gradient, dot, CsrMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryCondition {
    Dirichlet,
    Neumann,
}

/// Linear-solver settings for the implicit steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub tol: f64,
    /// Iteration cap as a multiple of the unknown count.
    pub max_iter_factor: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { tol: 1e-10, max_iter_factor: 10 }
    }
}

/// Discrete `Div(A∇·)` on the unknowns of one boundary-condition variant.
#[derive(Debug, Clone)]
pub struct DiscreteOperator {
    pub bc: BoundaryCondition,
    grid: Grid,
    dofs: Vec<usize>,
    dof_of_node: Vec<Option<usize>>,
    stiffness: CsrMatrix,
    mass: Vec<f64>,
}

impl DiscreteOperator {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn n_dofs(&self) -> usize {
        self.dofs.len()
    }

    /// Grid node of every unknown.
    pub fn dofs(&self) -> &[usize] {
        &self.dofs
    }

    pub fn dof_of_node(&self, node: usize) -> Option<usize> {
        self.dof_of_node[node]
    }

    pub fn stiffness(&self) -> &CsrMatrix {
        &self.stiffness
    }

    /// Nodal volumes of the unknowns.
    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    pub fn restrict(&self, f: &[f64]) -> Vec<f64> {
        self.dofs.iter().map(|&n| f[n]).collect()
    }

    pub fn extend(&self, v: &[f64]) -> GridFunction {
        let mut out = vec![0.0; self.grid.len()];
        for (&n, &x) in self.dofs.iter().zip(v) {
            out[n] = x;
        }
        out
    }

    /// `L z = M⁻¹ K z` on the unknowns, zero elsewhere.
    pub fn apply_l(&self, z: &[f64]) -> GridFunction {
        let kz = self.stiffness.matvec(&self.restrict(z));
        let lz: Vec<f64> = kz.iter().zip(&self.mass).map(|(k, m)| k / m).collect();
        self.extend(&lz)
    }

    /// Dense `L = M⁻¹K` over the unknowns.
    pub fn dense_l(&self) -> Vec<Vec<f64>> {
        let mut d = self.stiffness.to_dense();
        for (row, m) in d.iter_mut().zip(&self.mass) {
            row.iter_mut().for_each(|v| *v /= m);
        }
        d
    }

    /// Discrete `L²` inner product over the unknowns.
    pub fn inner(&self, a: &[f64], b: &[f64]) -> f64 {
        self.dofs
            .iter()
            .zip(&self.mass)
            .map(|(&n, m)| m * a[n] * b[n])
            .sum()
    }

    pub fn norm(&self, a: &[f64]) -> f64 {
        self.inner(a, a).max(0.0).sqrt()
    }

    /// `∫ ∇z·A∇z` as `-zᵀKz`.
    pub fn energy(&self, z: &[f64]) -> f64 {
        let v = self.restrict(z);
        -dot(&v, &self.stiffness.matvec(&v))
    }

    /// Checks symmetry, semidefiniteness on random vectors and, for Neumann, `K𝟙 = 0`.
    pub fn verify(&self) -> Result<OperatorCheck> {
        let asym = self.stiffness.max_asymmetry();
        let scale = self.stiffness.diagonal().iter().fold(0.0f64, |a, d| a.max(d.abs()));
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x5eed);
        let mut worst_quotient = f64::NEG_INFINITY;
        for _ in 0..4 {
            let v: Vec<f64> = (0..self.n_dofs()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let q = dot(&v, &self.stiffness.matvec(&v)) / (dot(&v, &v) * scale.max(1e-300));
            worst_quotient = worst_quotient.max(q);
        }
        let kernel_residual = match self.bc {
            BoundaryCondition::Neumann => {
                let ones = vec![1.0; self.n_dofs()];
                let k1 = self.stiffness.matvec(&ones);
                k1.iter().fold(0.0f64, |a, v| a.max(v.abs())) / scale.max(1e-300)
            }
            BoundaryCondition::Dirichlet => 0.0,
        };
        let check = OperatorCheck { max_asymmetry: asym, max_rayleigh: worst_quotient, kernel_residual };
        if asym != 0.0 || worst_quotient > 1e-10 || kernel_residual > 1e-12 {
            return Err(Error::Internal(format!("operator assembly invariant violated: {check:?}")));
        }
        Ok(check)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OperatorCheck {
    pub max_asymmetry: f64,
    /// Largest `vᵀKv / (|v|² max|K_ii|)` over the random probes; must be ≤ 0.
    pub max_rayleigh: f64,
    /// `max |K𝟙| / max|K_ii|` (Neumann only).
    pub kernel_residual: f64,
}

/// Assembles the operator on the unit hypercube.
pub fn assemble_l(grid: &Grid, field: &CoefficientField, bc: BoundaryCondition) -> Result<DiscreteOperator> {
    let active = vec![true; grid.len()];
    let boundary: Vec<bool> = (0..grid.len()).map(|i| grid.is_boundary(i)).collect();
    assemble_masked(grid, field, bc, &active, &boundary)
}

/// Assembles the operator on the nodes of `domain` (masked tensor grid for the quarter disk).
pub fn assemble_for_domain(
    grid: &Grid,
    field: &CoefficientField,
    bc: BoundaryCondition,
    domain: &DomainSpec,
) -> Result<DiscreteOperator> {
    if domain.kind == DomainKind::UnitHypercube {
        return assemble_l(grid, field, bc);
    }
    let coords = grid.coords();
    let active: Vec<bool> = coords.iter().map(|x| domain.contains(x)).collect();
    let boundary: Vec<bool> = coords.iter().map(|x| domain.on_boundary(x)).collect();
    assemble_masked(grid, field, bc, &active, &boundary)
}

fn assemble_masked(
    grid: &Grid,
    field: &CoefficientField,
    bc: BoundaryCondition,
    active: &[bool],
    boundary: &[bool],
) -> Result<DiscreteOperator> {
    if field.dim() != grid.dim() {
        return Err(Error::Shape(format!(
            "coefficient dimension {} does not match grid dimension {}",
            field.dim(),
            grid.dim()
        )));
    }
    let d = grid.dim();
    let n = grid.len();
    let is_dof = |i: usize| match bc {
        BoundaryCondition::Dirichlet => active[i] && !boundary[i],
        BoundaryCondition::Neumann => active[i],
    };
    let mut dof_of_node = vec![None; n];
    let mut dofs = Vec::new();
    for i in 0..n {
        if is_dof(i) {
            dof_of_node[i] = Some(dofs.len());
            dofs.push(i);
        }
    }
    let h = grid.spacing();
    let a_nodes: Vec<_> = (0..n).map(|i| field.eval(&grid.coord(i))).collect();
    let dual_area = |i: usize, skip: &[usize]| -> f64 {
        (0..d)
            .filter(|ax| !skip.contains(ax))
            .map(|ax| grid.axis_weight(ax, grid.axis_index(i, ax)))
            .product()
    };
    // An edge/cell takes part when all its nodes are active (Neumann) or when it
    // touches an unknown (Dirichlet: non-unknown nodes carry z = 0).
    let participates = |nodes: &[usize]| match bc {
        BoundaryCondition::Neumann => nodes.iter().all(|&j| active[j]),
        BoundaryCondition::Dirichlet => nodes.iter().any(|&j| dof_of_node[j].is_some()),
    };

    let mut trip: Vec<(usize, usize, f64)> = Vec::new();
    // Adds `-c (u_i)(v_j) - c (u_j)(v_i)` style symmetric contributions to −K.
    let mut add_sym = |i: usize, j: usize, v: f64| {
        if let (Some(a), Some(b)) = (dof_of_node[i], dof_of_node[j]) {
            if a == b {
                trip.push((a, a, 2.0 * v));
            } else {
                trip.push((a, b, v));
                trip.push((b, a, v));
            }
        }
    };

    for p in 0..n {
        for ax in 0..d {
            let Some(q) = grid.neighbor(p, ax, true) else { continue };
            if !participates(&[p, q]) {
                continue;
            }
            let a_face = 0.5 * (a_nodes[p][(ax, ax)] + a_nodes[q][(ax, ax)]);
            let c = a_face * dual_area(p, &[ax]) / h[ax];
            // energy c (z_q − z_p)²  ⇒  K gets −c on the diagonal and +c off it.
            add_sym(p, p, -0.5 * c);
            add_sym(q, q, -0.5 * c);
            add_sym(p, q, c);
        }
    }

    if !field.is_diagonal() {
        for p in 0..n {
            for a in 0..d {
                for b in a + 1..d {
                    let (Some(p10), Some(p01)) = (grid.neighbor(p, a, true), grid.neighbor(p, b, true)) else {
                        continue;
                    };
                    let p11 = p10 + grid.stride(b);
                    let corners = [p, p10, p01, p11];
                    if !participates(&corners) {
                        continue;
                    }
                    let a_ab = 0.25 * corners.iter().map(|&c| a_nodes[c][(a, b)]).sum::<f64>();
                    if a_ab == 0.0 {
                        continue;
                    }
                    let vol = h[a] * h[b] * dual_area(p, &[a, b]);
                    // Cell-averaged difference quotients along a and b.
                    let da = [-1.0, 1.0, -1.0, 1.0].map(|s| s / (2.0 * h[a]));
                    let db = [-1.0, -1.0, 1.0, 1.0].map(|s| s / (2.0 * h[b]));
                    // energy 2 A_ab D_a D_b vol  ⇒  −K_ij += A_ab vol (da_i db_j + da_j db_i).
                    for i in 0..4 {
                        for j in i..4 {
                            let e = a_ab * vol * (da[i] * db[j] + da[j] * db[i]);
                            if i == j {
                                add_sym(corners[i], corners[i], -0.5 * e);
                            } else {
                                add_sym(corners[i], corners[j], -e);
                            }
                        }
                    }
                }
            }
        }
    }

    let nd = dofs.len();
    let stiffness = CsrMatrix::from_triplets(nd, trip);
    let mass = dofs.iter().map(|&i| grid.node_volume(i)).collect();
    let op = DiscreteOperator { bc, grid: grid.clone(), dofs, dof_of_node, stiffness, mass };
    op.verify()?;
    Ok(op)
}

/// Implicit Euler propagator for a fixed operator and time grid.
#[derive(Debug, Clone)]
pub struct Propagator<'a> {
    op: &'a DiscreteOperator,
    system: CsrMatrix,
    pub dt: f64,
    pub steps: usize,
    pub options: SolverOptions,
}

impl<'a> Propagator<'a> {
    pub fn new(op: &'a DiscreteOperator, horizon: f64, steps: usize) -> Result<Self> {
        Self::with_options(op, horizon, steps, SolverOptions::default())
    }

    pub fn with_options(
        op: &'a DiscreteOperator,
        horizon: f64,
        steps: usize,
        options: SolverOptions,
    ) -> Result<Self> {
        if !(horizon > 0.0) || steps == 0 {
            return Err(Error::Parameter(format!(
                "time grid needs T > 0 and N_t ≥ 1 (got T = {horizon}, N_t = {steps})"
            )));
        }
        let dt = horizon / steps as f64;
        let system = op.stiffness.scaled_plus_diagonal(-dt, &op.mass);
        Ok(Self { op, system, dt, steps, options })
    }

    pub fn operator(&self) -> &DiscreteOperator {
        self.op
    }

    pub fn horizon(&self) -> f64 {
        self.dt * self.steps as f64
    }

    /// Solves `(M − Δt K) x = rhs` with `x` holding the initial guess.
    fn solve(&self, rhs: &[f64], x: &mut [f64]) -> Result<()> {
        let max_iter = self.options.max_iter_factor * self.op.n_dofs().max(1);
        conjugate_gradient(&self.system, rhs, x, self.options.tol, max_iter)?;
        Ok(())
    }

    /// One forward step on unknown vectors: returns `S (z + Δt χ g)`.
    pub fn step_dofs(&self, z: &[f64], source: Option<&[f64]>) -> Result<Vec<f64>> {
        let rhs: Vec<f64> = match source {
            Some(g) => z.iter().zip(g).zip(&self.op.mass).map(|((z, g), m)| m * (z + self.dt * g)).collect(),
            None => z.iter().zip(&self.op.mass).map(|(z, m)| m * z).collect(),
        };
        let mut x = z.to_vec();
        self.solve(&rhs, &mut x)?;
        Ok(x)
    }

    /// Forward trajectory of `∂t z − Div(A∇z) = χ g`, `z(0) = z0`.
    ///
    /// `g.snapshots[k + 1]` drives the step `t_k → t_{k+1}`; `g.snapshots[0]` is unused.
    pub fn forward(
        &self,
        z0: &[f64],
        source: Option<&SpaceTimeField>,
        indicator: Option<&[f64]>,
    ) -> Result<SpaceTimeField> {
        let op = self.op;
        if let Some(g) = source {
            self.check_field(g, "control")?;
        }
        let mut z = op.restrict(z0);
        let mut out = Vec::with_capacity(self.steps + 1);
        out.push(op.extend(&z));
        for k in 0..self.steps {
            let g = source.map(|g| {
                let gk = &g.snapshots[k + 1];
                op.dofs
                    .iter()
                    .map(|&n| gk[n] * indicator.map_or(1.0, |c| c[n]))
                    .collect::<Vec<f64>>()
            });
            z = self.step_dofs(&z, g.as_deref())?;
            out.push(op.extend(&z));
        }
        let field = SpaceTimeField { dt: self.dt, snapshots: out };
        if !field.is_finite() {
            return Err(Error::Internal("non-finite values in forward trajectory".into()));
        }
        Ok(field)
    }

    /// Backward trajectory of `∂t w + Div(A∇w) = f`, `w(T) = w_T`.
    pub fn adjoint(&self, w_t: &[f64], source: Option<&SpaceTimeField>) -> Result<SpaceTimeField> {
        let op = self.op;
        if let Some(f) = source {
            self.check_field(f, "adjoint source")?;
        }
        let mut w = op.restrict(w_t);
        let mut out = vec![Vec::new(); self.steps + 1];
        out[self.steps] = op.extend(&w);
        for k in (0..self.steps).rev() {
            let rhs: Vec<f64> = match source {
                Some(f) => {
                    let fk = &f.snapshots[k];
                    op.dofs
                        .iter()
                        .zip(&w)
                        .zip(&op.mass)
                        .map(|((&n, w), m)| m * (w - self.dt * fk[n]))
                        .collect()
                }
                None => w.iter().zip(&op.mass).map(|(w, m)| m * w).collect(),
            };
            let mut x = w.clone();
            self.solve(&rhs, &mut x)?;
            w = x;
            out[k] = op.extend(&w);
        }
        let field = SpaceTimeField { dt: self.dt, snapshots: out };
        if !field.is_finite() {
            return Err(Error::Internal("non-finite values in adjoint trajectory".into()));
        }
        Ok(field)
    }

    /// Backward propagation on unknown vectors with `f = 0`, returning every `w^k`.
    pub fn adjoint_dofs(&self, w_t: &[f64]) -> Result<Vec<Vec<f64>>> {
        let mut out = vec![Vec::new(); self.steps + 1];
        out[self.steps] = w_t.to_vec();
        for k in (0..self.steps).rev() {
            out[k] = self.step_dofs(&out[k + 1], None)?;
        }
        Ok(out)
    }

    fn check_field(&self, f: &SpaceTimeField, what: &str) -> Result<()> {
        if f.steps() != self.steps
            || (f.dt - self.dt).abs() > 1e-12 * self.dt
            || f.snapshots[0].len() != self.op.grid.len()
        {
            return Err(Error::Shape(format!(
                "{what} field has {} steps of {} (grid {} nodes); propagator expects {} steps of {}",
                f.steps(),
                f.dt,
                f.snapshots[0].len(),
                self.steps,
                self.dt
            )));
        }
        Ok(())
    }
}

/// Forward solve with a fresh propagator.
pub fn solve_forward(
    op: &DiscreteOperator,
    z0: &[f64],
    g: Option<&SpaceTimeField>,
    indicator: Option<&[f64]>,
    horizon: f64,
    steps: usize,
) -> Result<SpaceTimeField> {
    Propagator::new(op, horizon, steps)?.forward(z0, g, indicator)
}

/// Adjoint solve with a fresh propagator.
pub fn solve_adjoint(
    op: &DiscreteOperator,
    w_t: &[f64],
    f: Option<&SpaceTimeField>,
    horizon: f64,
    steps: usize,
) -> Result<SpaceTimeField> {
    Propagator::new(op, horizon, steps)?.adjoint(w_t, f)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnergyNorms {
    pub t: f64,
    /// `‖z(t)‖²`.
    pub l2: f64,
    /// `∫ ∇z·A∇z`.
    pub h1a: f64,
}

pub fn energy_norms(op: &DiscreteOperator, field: &SpaceTimeField) -> Vec<EnergyNorms> {
    field
        .snapshots
        .iter()
        .enumerate()
        .map(|(k, z)| EnergyNorms { t: field.time(k), l2: op.inner(z, z), h1a: op.energy(z) })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnergyEstimateReport {
    /// `max_k ‖z^k‖² + Σ_k Δt (‖z^k‖² + ∫∇z^k·A∇z^k)`.
    pub lhs: f64,
    /// `‖z₀‖² + Σ_k Δt ‖χ g^k‖²`.
    pub rhs_without_c: f64,
    pub fitted_c: f64,
    pub violation: bool,
}

/// Both sides of the well-posedness energy bound for a computed trajectory.
pub fn check_energy_estimate(
    op: &DiscreteOperator,
    z: &SpaceTimeField,
    g: Option<&SpaceTimeField>,
    indicator: Option<&[f64]>,
) -> EnergyEstimateReport {
    let norms = energy_norms(op, z);
    let sup = norms.iter().map(|e| e.l2).fold(0.0, f64::max);
    let integral: f64 = norms[1..].iter().map(|e| z.dt * (e.l2 + e.h1a)).sum();
    let lhs = sup + integral;
    let z0 = z.initial();
    let mut rhs = op.inner(z0, z0);
    if let Some(g) = g {
        for gk in &g.snapshots[1..] {
            let cg: Vec<f64> = gk
                .iter()
                .enumerate()
                .map(|(i, v)| v * indicator.map_or(1.0, |c| c[i]))
                .collect();
            rhs += g.dt * op.inner(&cg, &cg);
        }
    }
    let (fitted_c, violation) = if rhs > 0.0 {
        (lhs / rhs, false)
    } else if lhs > 0.0 {
        (f64::INFINITY, true)
    } else {
        (0.0, false)
    };
    EnergyEstimateReport { lhs, rhs_without_c: rhs, fitted_c, violation }
}

/// Relative defect of the discrete Green identity between a controlled
/// trajectory `z` and a source-free adjoint trajectory `w`.
pub fn duality_residual(
    op: &DiscreteOperator,
    z: &SpaceTimeField,
    w: &SpaceTimeField,
    g: Option<&SpaceTimeField>,
    indicator: Option<&[f64]>,
) -> Result<f64> {
    if !z.same_shape(w) || z.snapshots[0].len() != op.grid.len() {
        return Err(Error::Shape("state and adjoint trajectories live on different grids".into()));
    }
    if let Some(g) = g {
        if !g.same_shape(z) {
            return Err(Error::Shape("control does not match the trajectory grid".into()));
        }
    }
    let n = z.steps();
    let end = op.inner(z.last(), w.last());
    let start = op.inner(z.initial(), w.initial());
    let mut scale = op.norm(z.last()) * op.norm(w.last()) + op.norm(z.initial()) * op.norm(w.initial());
    let mut coupling = 0.0;
    if let Some(g) = g {
        for k in 0..n {
            let cg: Vec<f64> = g.snapshots[k + 1]
                .iter()
                .enumerate()
                .map(|(i, v)| v * indicator.map_or(1.0, |c| c[i]))
                .collect();
            coupling += z.dt * op.inner(&cg, &w.snapshots[k]);
            scale += z.dt * op.norm(&cg) * op.norm(&w.snapshots[k]);
        }
    }
    if scale == 0.0 {
        return Ok(0.0);
    }
    Ok((end - start - coupling).abs() / scale)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeff::{builtin_example, BuiltinExample};
    use std::f64::consts::PI;

    fn sine_mode(grid: &Grid) -> GridFunction {
        grid.sample(|x| x.iter().map(|c| (PI * c).sin()).product())
    }

    #[test]
    fn one_dimensional_textbook_stencil() {
        let grid = Grid::uniform(1, 5).unwrap();
        let op = assemble_l(&grid, &CoefficientField::identity(1), BoundaryCondition::Dirichlet).unwrap();
        assert_eq!(op.n_dofs(), 3);
        let h2 = 0.25f64 * 0.25;
        let l = op.dense_l();
        let expected = [[-2.0, 1.0, 0.0], [1.0, -2.0, 1.0], [0.0, 1.0, -2.0]];
        for i in 0..3 {
            for j in 0..3 {
                assert!((l[i][j] - expected[i][j] / h2).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn degenerate_coefficient_kills_tangential_flux_on_y0() {
        // A₁₁ = y vanishes on {y = 0}: the face flux between two neighbors along that face is zero.
        let grid = Grid::uniform(2, 9).unwrap();
        let ex1 = builtin_example(BuiltinExample::Ex1, &[1.0, 1.0]).unwrap();
        let op = assemble_l(&grid, &ex1, BoundaryCondition::Neumann).unwrap();
        let p = grid.linear_index(&[3, 0]);
        let q = grid.linear_index(&[4, 0]);
        let k = op.stiffness();
        assert_eq!(k.get(op.dof_of_node(p).unwrap(), op.dof_of_node(q).unwrap()), 0.0);
        // while the flux into the interior along y is active
        let r = grid.linear_index(&[3, 1]);
        assert!(k.get(op.dof_of_node(p).unwrap(), op.dof_of_node(r).unwrap()) > 0.0);
    }

    #[test]
    fn neumann_constants_in_kernel() {
        let grid = Grid::uniform(2, 9).unwrap();
        let op = assemble_l(&grid, &CoefficientField::identity(2), BoundaryCondition::Neumann).unwrap();
        let l1 = op.apply_l(&vec![1.0; grid.len()]);
        assert!(l1.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn off_diagonal_fields_stay_symmetric_and_semidefinite() {
        let grid = Grid::uniform(2, 13).unwrap();
        let field = CoefficientField::custom(2, |x| {
            nalgebra::DMatrix::from_row_slice(2, 2, &[1.0 + x[0], 0.3 * x[1], 0.3 * x[1], 1.0 + x[1]])
        });
        for bc in [BoundaryCondition::Dirichlet, BoundaryCondition::Neumann] {
            let op = assemble_l(&grid, &field, bc).unwrap();
            let c = op.verify().unwrap();
            assert_eq!(c.max_asymmetry, 0.0);
        }
    }

    #[test]
    fn heat_mode_decay() {
        let grid = Grid::uniform(2, 33).unwrap();
        let op = assemble_l(&grid, &CoefficientField::identity(2), BoundaryCondition::Dirichlet).unwrap();
        let z0 = sine_mode(&grid);
        let z = solve_forward(&op, &z0, None, None, 0.05, 100).unwrap();
        let ratio = op.norm(z.last()) / op.norm(&z0);
        assert!((ratio - (-2.0 * PI * PI * 0.05f64).exp()).abs() < 0.01, "{ratio}");
        // Rayleigh quotient of the mode.
        let e = energy_norms(&op, &z);
        for s in [&e[0], &e[50]] {
            assert!((s.h1a / s.l2 - 2.0 * PI * PI).abs() < 0.02 * 2.0 * PI * PI);
        }
    }

    #[test]
    fn trivial_trajectories() {
        let grid = Grid::uniform(2, 9).unwrap();
        let n = grid.len();
        let dir = assemble_l(&grid, &CoefficientField::identity(2), BoundaryCondition::Dirichlet).unwrap();
        let z = solve_forward(&dir, &vec![0.0; n], None, None, 1.0, 8).unwrap();
        assert!(z.snapshots.iter().flatten().all(|&v| v == 0.0));
        let w = solve_adjoint(&dir, &vec![0.0; n], None, 1.0, 8).unwrap();
        assert!(w.snapshots.iter().flatten().all(|&v| v == 0.0));
        let e = energy_norms(&dir, &z);
        assert_eq!((e[0].l2, e[0].h1a), (0.0, 0.0));

        let neu = assemble_l(&grid, &CoefficientField::identity(2), BoundaryCondition::Neumann).unwrap();
        let z = solve_forward(&neu, &vec![2.5; n], None, None, 1.0, 8).unwrap();
        assert!(z.snapshots.iter().flatten().all(|&v| (v - 2.5).abs() < 1e-9));
        let e = energy_norms(&neu, &z);
        assert!((e[0].l2 - 2.5 * 2.5).abs() < 1e-12 && e[0].h1a.abs() < 1e-12);
        let ones = energy_norms(&neu, &SpaceTimeField { dt: 1.0, snapshots: vec![vec![1.0; n]] });
        assert!((ones[0].l2 - 1.0).abs() < 1e-14);
    }

    #[test]
    fn adjoint_is_time_reversed_forward_for_an_eigenmode() {
        let grid = Grid::uniform(2, 17).unwrap();
        let op = assemble_l(&grid, &CoefficientField::identity(2), BoundaryCondition::Dirichlet).unwrap();
        let mode = sine_mode(&grid);
        let z = solve_forward(&op, &mode, None, None, 0.1, 10).unwrap();
        let w = solve_adjoint(&op, &mode, None, 0.1, 10).unwrap();
        for k in 0..=10 {
            let diff: f64 = z.snapshots[k]
                .iter()
                .zip(&w.snapshots[10 - k])
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(diff < 1e-8, "step {k}: {diff}");
        }
    }

    #[test]
    fn dirichlet_maximum_principle() {
        let grid = Grid::uniform(2, 17).unwrap();
        let op = assemble_l(&grid, &CoefficientField::identity(2), BoundaryCondition::Dirichlet).unwrap();
        let z0 = grid.sample(|x| if (x[0] - 0.3).abs() < 0.1 && (x[1] - 0.6).abs() < 0.2 { 1.0 } else { 0.0 });
        let z = solve_forward(&op, &z0, None, None, 0.2, 20).unwrap();
        let maxes: Vec<f64> = z.snapshots.iter().map(|s| s.iter().fold(0.0f64, |a, v| a.max(v.abs()))).collect();
        for w in maxes.windows(2) {
            assert!(w[1] <= w[0] + 1e-10);
        }
    }

    #[test]
    fn energy_estimate_consistency() {
        let grid = Grid::uniform(2, 9).unwrap();
        let op = assemble_l(&grid, &CoefficientField::identity(2), BoundaryCondition::Dirichlet).unwrap();
        let z = solve_forward(&op, &vec![0.0; grid.len()], None, None, 1.0, 4).unwrap();
        let r = check_energy_estimate(&op, &z, None, None);
        assert_eq!((r.lhs, r.rhs_without_c, r.violation), (0.0, 0.0, false));

        let z0 = sine_mode(&grid);
        let r1 = check_energy_estimate(&op, &solve_forward(&op, &z0, None, None, 1.0, 8).unwrap(), None, None);
        let z0x2: Vec<f64> = z0.iter().map(|v| 2.0 * v).collect();
        let r2 = check_energy_estimate(&op, &solve_forward(&op, &z0x2, None, None, 1.0, 8).unwrap(), None, None);
        assert!((r1.fitted_c - r2.fitted_c).abs() < 1e-9 * r1.fitted_c);

        let bogus = SpaceTimeField { dt: 0.5, snapshots: vec![vec![0.0; grid.len()], z0.clone(), z0] };
        assert!(check_energy_estimate(&op, &bogus, None, None).violation);
    }

    #[test]
    fn duality_rejects_mismatched_grids() {
        let grid = Grid::uniform(2, 9).unwrap();
        let op = assemble_l(&grid, &CoefficientField::identity(2), BoundaryCondition::Dirichlet).unwrap();
        let a = SpaceTimeField::zeros(grid.len(), 4, 1.0);
        let b = SpaceTimeField::zeros(grid.len(), 8, 1.0);
        assert!(matches!(duality_residual(&op, &a, &b, None, None), Err(Error::Shape(_))));
        assert_eq!(duality_residual(&op, &a, &a, Some(&a), None).unwrap(), 0.0);
    }

    #[test]
    fn quarter_disk_operator() {
        let spec = DomainSpec::new(
            DomainKind::QuarterDisk,
            2,
            DomainSpec::default_gamma0(DomainKind::QuarterDisk, 2),
            0.2,
            1.0,
        )
        .unwrap();
        let grid = Grid::uniform(2, 17).unwrap();
        let ex1 = builtin_example(BuiltinExample::Ex1, &[1.0, 1.0]).unwrap();
        for bc in [BoundaryCondition::Dirichlet, BoundaryCondition::Neumann] {
            let op = assemble_for_domain(&grid, &ex1, bc, &spec).unwrap();
            assert!(op.n_dofs() < grid.len());
            let z0 = grid.sample(|x| x[0] * x[1]);
            let z = solve_forward(&op, &z0, None, None, 0.1, 5).unwrap();
            assert!(z.is_finite());
        }
    }
}
