//! `cusp-spectra verify`: the property suite, one line per check.

use std::sync::Arc;
use std::time::Instant;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cusp_core::assembly::{assemble, BoundaryCondition};
use cusp_core::eigensolve::{solve_dense, solve_lowest};
use cusp_core::geometry::{c_alpha, cap_profile, CuspGeometry, DEFAULT_PROFILE_TOL};
use cusp_core::mesh::{mesh_reference, mesh_square, structured_square};
use cusp_core::metrics::{projector_ensemble, rate_exponent, convergence_exponent};
use cusp_core::transform::{pair_fields, pullback, Affine, CoefficientField, PhiEps, Transformation};
use cusp_core::vicinity::delta_q;
use cusp_core::{Matrix, Point, Vector};

use crate::config::{Experiment, RunConfig};
use crate::experiments::square_spectrum;

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl std::fmt::Display for Check {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let verdict = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{verdict} {}: {}", self.name, self.detail)
    }
}

type Outcome = cusp_core::Result<(bool, String)>;

fn check(name: &'static str, f: impl FnOnce() -> Outcome) -> Check {
    let t = Instant::now();
    let (passed, detail) = match f() {
        Ok((p, d)) => (p, format!("{d} ({:.1?})", t.elapsed())),
        Err(e) => (false, format!("error: {e}")),
    };
    Check { name, passed, detail }
}

pub fn run_all() -> Vec<Check> {
    vec![
        check("square eigenvalues", square),
        check("dense oracle", dense_oracle),
        check("projector lemma", projector),
        check("pull-back equivalence", pullback_equivalence),
        check("transformation fidelity", transformation),
        check("vicinity", vicinity),
        check("exponent calculus", exponents),
        check("determinism", determinism),
    ]
}

fn square() -> Outcome {
    let mesh = mesh_square(1.0, 1.0 / 64.0)?;
    let f = pullback(Arc::new(Affine::identity()), CoefficientField::identity());
    let sys = assemble(&mesh, &f, BoundaryCondition::Dirichlet, 7)?;
    let dec = solve_lowest(&sys, 3, 1e-10)?;
    let exact = square_spectrum(1.0, BoundaryCondition::Dirichlet, 3);
    let worst = dec.lambdas.iter().zip(&exact).map(|(l, e)| ((l - e) / e).abs()).fold(0.0, f64::max);
    Ok((worst < 0.01, format!("largest relative error {worst:.2e}")))
}

fn dense_oracle() -> Outcome {
    let mesh = structured_square(14, 1.0);
    let f = pullback(Arc::new(Affine::identity()), CoefficientField::identity());
    let sys = assemble(&mesh, &f, BoundaryCondition::Dirichlet, 7)?;
    let a = solve_lowest(&sys, 12, 1e-11)?;
    let b = solve_dense(&sys, 12)?;
    let worst = a.lambdas.iter().zip(&b.lambdas).map(|(x, y)| ((x - y) / y).abs()).fold(0.0, f64::max);
    Ok((worst <= 1e-9, format!("{} dof, largest relative difference {worst:.2e}", sys.dof())))
}

fn projector() -> Outcome {
    let r = projector_ensemble(10_000, 0)?;
    Ok((
        r.violations == 0 && r.minmax_violations == 0,
        format!(
            "{} admissible of {}, {} violations, {} min-max violations",
            r.admissible, r.samples, r.violations, r.minmax_violations
        ),
    ))
}

fn pullback_equivalence() -> Outcome {
    let h = 1.0 / 32.0;
    let s = 1.3;
    let bc = BoundaryCondition::Dirichlet;
    let reference = mesh_square(1.0, h)?;
    let pulled = pullback(Arc::new(Affine::dilation(s)), CoefficientField::identity());
    let a = solve_lowest(&assemble(&reference, &pulled, bc, 7)?, 10, 1e-10)?;
    let direct = mesh_square(s, s * h)?;
    let f = pullback(Arc::new(Affine::identity()), CoefficientField::identity());
    let b = solve_lowest(&assemble(&direct, &f, bc, 7)?, 10, 1e-10)?;
    // discretization error estimated against the analytic spectrum
    let exact = square_spectrum(s, bc, 10);
    let err = b.lambdas.iter().zip(&exact).map(|(l, e)| ((l - e) / e).abs()).fold(0.0, f64::max);
    let diff = a.lambdas.iter().zip(&b.lambdas).map(|(x, y)| ((x - y) / y).abs()).fold(0.0, f64::max);
    Ok((diff <= 2.0 * err, format!("largest difference {diff:.2e}, FEM error {err:.2e}")))
}

fn transformation() -> Outcome {
    let geo = CuspGeometry::new(0.9, 0.2)?;
    let cap = geo.cap_radius();
    let ratio_bound = 2.0 / c_alpha(geo.alpha)?.powi(2);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut fd_worst, mut det_min, mut ratio_max) = (0.0f64, f64::INFINITY, 0.0f64);
    let mut tested = 0;
    while tested < 1000 {
        let eps = rng.random_range(0.01..geo.eps0);
        let eps_lo = rng.random_range(0.005..eps);
        let x: f64 = rng.random_range(-cap..cap);
        let y = rng.random_range(0.5..geo.top(x.abs(), geo.eps0));
        let level = geo.level(eps)?;
        let prof = cap_profile(x.abs(), level, &geo, DEFAULT_PROFILE_TOL)?;
        // stay away from the kinks of φ_ε
        let near_kink = (y - prof.h).abs() < 1e-3
            || (x.abs() - eps.powf(1.0 / geo.alpha)).abs() < 1e-3
            || (x.abs() - cap).abs() < 1e-3
            || x.abs() < 1e-3;
        if near_kink {
            continue;
        }
        tested += 1;
        let phi = PhiEps::new(geo.clone(), level);
        let p = Point::new(x, y);
        let j = phi.jacobian(&p)?;
        let step = 1e-6;
        let mut fd = Matrix::zeros();
        for c in 0..2 {
            let mut e = Vector::zeros();
            e[c] = step;
            let d = (phi.map(&(p + e))? - phi.map(&(p - e))?) / (2.0 * step);
            fd.set_column(c, &d);
        }
        fd_worst = fd_worst.max((fd - j).amax() / j.amax().max(1.0));
        let det = j.determinant();
        det_min = det_min.min(det);
        let other = PhiEps::new(geo.clone(), geo.level(eps_lo)?);
        ratio_max = ratio_max.max(det / other.det(&p)?);
    }
    let c = c_alpha(geo.alpha)?;
    let mut bracket_ok = true;
    for _ in 0..500 {
        let r = rng.random_range(0.0..cap);
        let eps = rng.random_range(1e-3..geo.eps0);
        let prof = cap_profile(r, geo.level(eps)?, &geo, DEFAULT_PROFILE_TOL)?;
        let mu = r.powf(geo.alpha).max(eps);
        let u = 1.0 - geo.eps0 - prof.h;
        bracket_ok &= c * (geo.eps0 - mu) <= u + 1e-12 && u <= geo.eps0 - mu + 1e-12;
    }
    Ok((
        fd_worst <= 1e-6 && det_min >= 1.0 && ratio_max <= ratio_bound && bracket_ok,
        format!(
            "FD error {fd_worst:.1e}, min det {det_min:.6}, max ratio {ratio_max:.4} ≤ {ratio_bound:.4}, bracket {}",
            if bracket_ok { "holds" } else { "fails" }
        ),
    ))
}

fn vicinity() -> Outcome {
    let geo = CuspGeometry::new(0.95, 0.2)?;
    let levels = [0.16, 0.12, 0.08, 0.04];
    let mesh = mesh_reference(&geo, 0.1, 2.0, &levels)?;
    let fields = |e: f64| -> cusp_core::Result<_> {
        Ok(pullback(
            Arc::new(PhiEps::new(geo.clone(), geo.level(e)?)),
            CoefficientField::identity(),
        ))
    };
    let base = fields(geo.eps0)?;
    let zero = delta_q(&pair_fields(&base, &base), &mesh, 2.0)?.delta;
    let mut ds = Vec::new();
    for e in levels {
        ds.push(delta_q(&pair_fields(&base, &fields(e)?), &mesh, 2.0)?.delta);
    }
    let monotone = ds.windows(2).all(|w| w[0] < w[1]);
    Ok((
        zero == 0.0 && monotone,
        format!("δ(φ,φ) = {zero}, δ(φ_ε₀, φ_ε) for ε = {levels:?}: {ds:.3?}"),
    ))
}

fn exponents() -> Outcome {
    let one = convergence_exponent(2, 1.0)?;
    let t = rate_exponent(2, 0.95)?;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let p: f64 = rng.random_range(1.0..10.0);
        let q: f64 = rng.random_range(p..20.0);
        let big_m = t.n_alpha;
        let expect = big_m / 2.0 * (1.0 / p - 1.0 / q);
        worst = worst.max((t.tau(2, &[0, 0], big_m, p, q) - expect).abs());
    }
    let rejected = rate_exponent(2, 1.0).is_err() && rate_exponent(2, 0.8).is_err() && rate_exponent(2, 0.87).is_ok();
    Ok((
        one.b_alpha == 0.5 && worst <= 1e-14 && rejected,
        format!("b(1) = {}, τ identity error {worst:.1e}, b(0.95) = {:.6}", one.b_alpha, t.b_alpha),
    ))
}

fn determinism() -> Outcome {
    let dir = std::env::temp_dir().join(format!("cusp-spectra-verify-{}", std::process::id()));
    let mut csv = Vec::new();
    for run in 0..2 {
        let mut cfg = RunConfig::new(Experiment::SquareSanity);
        cfg.discretization.h = 0.1;
        cfg.solver.count = 6;
        cfg.out = dir.join(run.to_string());
        crate::run(&cfg).map_err(|e| cusp_core::CuspError::Input(e.to_string()))?;
        csv.push(std::fs::read(cfg.out.join("report.csv")).map_err(|e| cusp_core::CuspError::Input(e.to_string()))?);
    }
    let _ = std::fs::remove_dir_all(&dir);
    let same = csv[0] == csv[1];
    Ok((same, format!("two square_sanity runs, {} CSV bytes each, identical: {same}", csv[0].len())))
}
