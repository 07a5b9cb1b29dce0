//! Acceptance suite. Each criterion prints one PASS/FAIL line; the process
//! exits nonzero if any criterion fails.

use std::f64::consts::PI;
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use degencontrol::coeff::{builtin_example, check_assumption, BuiltinExample, CoefficientField};
use degencontrol::diagnostics::{carleman_audit, estimate_observability_constant, AuditConfig, AuditContext};
use degencontrol::domain::{build_regions, DomainSpec, RegionSet};
use degencontrol::grid::{Grid, GridFunction, SpaceTimeField};
use degencontrol::hum::{gradient_check, solve_hum, HumConfig};
use degencontrol::pde::{assemble_for_domain, assemble_l, duality_residual, BoundaryCondition, Propagator};
use degencontrol::weights::{build_eta, check_weight_bounds, default_peak, eval_weights, validate_eta, CarlemanWeights};

type Outcome = Result<(bool, String), String>;
type Criterion = (&'static str, fn() -> Outcome);

const BCS: [BoundaryCondition; 2] = [BoundaryCondition::Dirichlet, BoundaryCondition::Neumann];

fn ex(id: BuiltinExample) -> CoefficientField {
    builtin_example(id, &vec![1.0; id.dimension()]).unwrap()
}

fn setup(dim: usize, n: usize, rho: f64, horizon: f64) -> (DomainSpec, Grid, RegionSet) {
    let spec = DomainSpec::hypercube(dim, rho, horizon).unwrap();
    let grid = Grid::uniform(dim, n).unwrap();
    let rs = build_regions(&spec, &grid).unwrap();
    (spec, grid, rs)
}

fn random_function(grid: &Grid, rng: &mut ChaCha8Rng) -> GridFunction {
    (0..grid.len()).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn random_field(grid: &Grid, steps: usize, horizon: f64, rng: &mut ChaCha8Rng) -> SpaceTimeField {
    let mut f = SpaceTimeField::zeros(grid.len(), steps, horizon);
    for snap in &mut f.snapshots {
        *snap = random_function(grid, rng);
    }
    f
}

fn sine(grid: &Grid) -> GridFunction {
    grid.sample(|x| x.iter().map(|c| (PI * c).sin()).product())
}

fn heat_oracle() -> Outcome {
    let horizon = 0.05;
    let mut errors = Vec::new();
    for (n, steps) in [(17, 20), (33, 80), (65, 320)] {
        let grid = Grid::uniform(2, n).map_err(|e| e.to_string())?;
        let op = assemble_l(&grid, &CoefficientField::identity(2), BoundaryCondition::Dirichlet)
            .map_err(|e| e.to_string())?;
        let z0 = sine(&grid);
        let z = Propagator::new(&op, horizon, steps)
            .and_then(|p| p.forward(&z0, None, None))
            .map_err(|e| e.to_string())?;
        let decay = (-2.0 * PI * PI * horizon).exp();
        let exact: Vec<f64> = z0.iter().map(|v| v * decay).collect();
        let diff: Vec<f64> = z.last().iter().zip(&exact).map(|(a, b)| a - b).collect();
        errors.push(op.norm(&diff) / op.norm(&exact));
    }
    let f1 = errors[0] / errors[1];
    let f2 = errors[1] / errors[2];
    let ok = errors[2] <= 0.02 && (3.0..=5.0).contains(&f1) && (3.0..=5.0).contains(&f2);
    Ok((
        ok,
        format!(
            "errors {:.3e} {:.3e} {:.3e} (65² ≤ 2e-2), reduction {f1:.3} {f2:.3} (in [3, 5])",
            errors[0], errors[1], errors[2]
        ),
    ))
}

fn duality() -> Outcome {
    let (horizon, steps) = (1.0, 64);
    let (spec, grid, rs) = setup(2, 33, 0.3, horizon);
    let chi = rs.control_indicator();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for id in [BuiltinExample::Ex1, BuiltinExample::Ex2] {
        for bc in BCS {
            let op = assemble_for_domain(&grid, &ex(id), bc, &spec).map_err(|e| e.to_string())?;
            let prop = Propagator::new(&op, horizon, steps).map_err(|e| e.to_string())?;
            for _ in 0..20 {
                let z0 = random_function(&grid, &mut rng);
                let w_t = random_function(&grid, &mut rng);
                let g = random_field(&grid, steps, horizon, &mut rng);
                let z = prop.forward(&z0, Some(&g), Some(&chi)).map_err(|e| e.to_string())?;
                let w = prop.adjoint(&w_t, None).map_err(|e| e.to_string())?;
                let r = duality_residual(&op, &z, &w, Some(&g), Some(&chi)).map_err(|e| e.to_string())?;
                worst = worst.max(r);
            }
        }
    }
    Ok((worst <= 1e-8, format!("max relative residual {worst:.3e} over 80 triples (≤ 1e-8)")))
}

fn adjoint_monotonicity() -> Outcome {
    let (horizon, steps) = (1.0, 64);
    let (spec, grid, _) = setup(2, 33, 0.3, horizon);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = f64::NEG_INFINITY;
    for bc in BCS {
        let op = assemble_for_domain(&grid, &ex(BuiltinExample::Ex1), bc, &spec).map_err(|e| e.to_string())?;
        let prop = Propagator::new(&op, horizon, steps).map_err(|e| e.to_string())?;
        for _ in 0..20 {
            let w = prop.adjoint(&random_function(&grid, &mut rng), None).map_err(|e| e.to_string())?;
            let norms: Vec<f64> = w.snapshots.iter().map(|s| op.norm(s)).collect();
            for k in 0..steps {
                worst = worst.max((norms[k] - norms[k + 1]) / norms[k + 1].max(f64::MIN_POSITIVE));
            }
        }
    }
    Ok((
        worst <= 1e-10,
        format!("largest relative decrease of ‖w(t_k)‖ in k: {worst:.3e} (≤ 1e-10)"),
    ))
}

fn hum() -> Outcome {
    let (horizon, steps) = (1.0, 64);
    let (spec, grid, rs) = setup(2, 33, 0.3, horizon);
    let op = assemble_for_domain(&grid, &ex(BuiltinExample::Ex1), BoundaryCondition::Dirichlet, &spec)
        .map_err(|e| e.to_string())?;
    let cfg = HumConfig { epsilon: 1e-6, ..HumConfig::default() };
    let z0 = sine(&grid);
    let res = solve_hum(&op, &rs, &z0, &cfg, horizon, steps).map_err(|e| e.to_string())?;
    let s = res.summary(&op);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let w_t = random_function(&grid, &mut rng);
    let grad = gradient_check(&op, &rs, &z0, &w_t, &cfg, horizon, steps, 5, 4).map_err(|e| e.to_string())?;
    let ok = s.reduction < 0.05 && s.optimality_residual < 1e-3 && grad < 1e-6;
    Ok((
        ok,
        format!(
            "reduction {:.3e} (< 5e-2), optimality {:.3e} (< 1e-3), gradient check {grad:.3e} (< 1e-6), {} CG iterations",
            s.reduction, s.optimality_residual, s.iterations
        ),
    ))
}

fn observability() -> Outcome {
    let (horizon, steps) = (1.0, 64);
    let (spec, grid, rs) = setup(2, 33, 0.3, horizon);
    let op = assemble_for_domain(&grid, &CoefficientField::identity(2), BoundaryCondition::Dirichlet, &spec)
        .map_err(|e| e.to_string())?;
    let everywhere = rs.with_control_everywhere();
    let full = estimate_observability_constant(&op, &everywhere, horizon, steps, 100, 8, 5).map_err(|e| e.to_string())?;

    let mut constants = Vec::new();
    for rho in [0.4, 0.2] {
        let (spec, grid, rs) = setup(2, 33, rho, horizon);
        let op = assemble_for_domain(&grid, &ex(BuiltinExample::Ex1), BoundaryCondition::Dirichlet, &spec)
            .map_err(|e| e.to_string())?;
        let rep = estimate_observability_constant(&op, &rs, horizon, steps, 100, 8, 5).map_err(|e| e.to_string())?;
        constants.push(rep.c_obs_low);
    }
    let ok = full.c_obs_low <= 1.05 / horizon && constants[1] > constants[0];
    Ok((
        ok,
        format!(
            "ω₀ = Ω: C_obs_low {:.4e} (≤ {:.2}); ex1 ρ = 0.4: {:.4e}, ρ = 0.2: {:.4e} (strictly increasing)",
            full.c_obs_low,
            1.05 / horizon,
            constants[0],
            constants[1]
        ),
    ))
}

fn weight_identities() -> Outcome {
    let (horizon, steps) = (1.0, 64);
    let (spec, grid, rs) = setup(2, 33, 0.3, horizon);
    let eta = Arc::new(build_eta(&spec, &rs, &grid, &default_peak(&spec, &grid)).map_err(|e| e.to_string())?);
    let mut sign_ok = true;
    let mut defect: f64 = 0.0;
    let mut stable = true;
    let mut worst_change: f64 = 0.0;
    for lambda in [1.0, 2.0, 4.0] {
        for s in [1.0, 8.0] {
            let w = CarlemanWeights::new(s, lambda, horizon, eta.clone()).map_err(|e| e.to_string())?;
            let dt = horizon / steps as f64;
            for k in 1..steps {
                let t = k as f64 * dt;
                for i in (0..grid.len()).filter(|&i| rs.in_domain[i] && !rs.on_boundary[i]) {
                    let v = eval_weights(&w, &grid.coord(i), t).map_err(|e| e.to_string())?;
                    sign_ok &= v.sigma > 0.0 && v.sigma_tilde > 0.0;
                    let exact = v.theta * v.theta * (16.0 * lambda * eta.eta_inf).exp();
                    defect = defect.max((v.xi * v.xi_tilde - exact).abs() / exact);
                }
            }
        }
        let w = CarlemanWeights::new(1.0, lambda, horizon, eta.clone()).map_err(|e| e.to_string())?;
        let a = check_weight_bounds(&w, &rs, steps).map_err(|e| e.to_string())?;
        let b = check_weight_bounds(&w, &rs, 2 * steps).map_err(|e| e.to_string())?;
        for (x, y) in [(a.c_xi_xit, b.c_xi_xit), (a.c_sigmat, b.c_sigmat), (a.c_sigmatt, b.c_sigmatt)] {
            let change = (x - y).abs() / x.abs().max(y.abs());
            worst_change = worst_change.max(change);
            stable &= x.is_finite() && y.is_finite() && change <= 0.05;
        }
    }
    let ok = sign_ok && defect <= 1e-12 && stable;
    Ok((
        ok,
        format!(
            "σ, σ̃ > 0: {sign_ok}; product identity defect {defect:.3e} (≤ 1e-12); bound change under N_t doubling {:.2}% (≤ 5%)",
            100.0 * worst_change
        ),
    ))
}

fn eta_validity() -> Outcome {
    let (spec, grid, rs) = setup(2, 65, 0.3, 1.0);
    let eta = build_eta(&spec, &rs, &grid, &default_peak(&spec, &grid)).map_err(|e| e.to_string())?;
    let rep = validate_eta(&eta, &rs, &grid);
    Ok((
        rep.all_pass(),
        format!(
            "validate_eta at 65²: failures {:?}, c_min {:.3e}, threshold {:.3e}",
            rep.failures(),
            rep.c_min,
            rep.c_min_threshold
        ),
    ))
}

fn carleman() -> Outcome {
    let (horizon, steps) = (1.0, 64);
    let (spec, grid, rs) = setup(2, 33, 0.3, horizon);
    let field = ex(BuiltinExample::Ex1);
    let eta = Arc::new(build_eta(&spec, &rs, &grid, &default_peak(&spec, &grid)).map_err(|e| e.to_string())?);
    let cfg = AuditConfig { calibration_samples: 5, samples: 20, seed: 8, ..AuditConfig::default() };
    let mut ok = true;
    let mut parts = Vec::new();
    for bc in BCS {
        let op = assemble_for_domain(&grid, &field, bc, &spec).map_err(|e| e.to_string())?;
        let ctx = AuditContext::new(&op, &rs, &field, eta.clone(), horizon, steps).map_err(|e| e.to_string())?;
        let rep = carleman_audit(&ctx, &cfg).map_err(|e| e.to_string())?;
        ok &= rep.calibration_violations == 0 && rep.monotone_fraction >= 0.9;
        parts.push(format!(
            "{bc:?}: violations {} (= 0), monotone {:.2} (≥ 0.9), C_fit {:.3e}",
            rep.calibration_violations, rep.monotone_fraction, rep.c_fit
        ));
    }
    Ok((ok, parts.join("; ")))
}

fn four_dimensional() -> Outcome {
    let (horizon, steps) = (1.0, 16);
    let (spec, grid, rs) = setup(4, 9, 0.3, horizon);
    let field = ex(BuiltinExample::Ex3);
    let assumption = check_assumption(&field, &rs, &grid);
    let op = assemble_for_domain(&grid, &field, BoundaryCondition::Dirichlet, &spec).map_err(|e| e.to_string())?;
    let prop = Propagator::new(&op, horizon, steps).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let chi = rs.control_indicator();
    let g = random_field(&grid, steps, horizon, &mut rng);
    let z = prop.forward(&random_function(&grid, &mut rng), Some(&g), Some(&chi)).map_err(|e| e.to_string())?;
    let w = prop.adjoint(&random_function(&grid, &mut rng), None).map_err(|e| e.to_string())?;
    let r = duality_residual(&op, &z, &w, Some(&g), Some(&chi)).map_err(|e| e.to_string())?;
    let ok = assumption.passes() && z.is_finite() && r <= 1e-6;
    Ok((
        ok,
        format!(
            "assumption passes: {}, trajectory finite: {}, duality residual {r:.3e} (≤ 1e-6)",
            assumption.passes(),
            z.is_finite()
        ),
    ))
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("1 heat oracle convergence", heat_oracle),
        ("2 discrete duality", duality),
        ("3 adjoint energy monotonicity", adjoint_monotonicity),
        ("4 penalized HUM control", hum),
        ("5 observability constant", observability),
        ("6 weight identities", weight_identities),
        ("7 eta validity", eta_validity),
        ("8 Carleman audit", carleman),
        ("9 four-dimensional smoke test", four_dimensional),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, f) in criteria {
        if !filter.is_empty() && !filter.iter().any(|p| name.contains(p.as_str())) {
            continue;
        }
        let start = Instant::now();
        let (ok, detail) = f().unwrap_or_else(|e| (false, format!("error: {e}")));
        let secs = start.elapsed().as_secs_f64();
        println!("{} criterion {name}: {detail} [{secs:.1} s]", if ok { "PASS" } else { "FAIL" });
        failed += usize::from(!ok);
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
