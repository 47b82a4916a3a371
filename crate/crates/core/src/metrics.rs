//! Spectral-stability measurements: resolvent-power distances, the projector
//! perturbation bound, eigenfunction distances, exponent calculus and rate
//! fits.

use std::ops::Range;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::assembly::DofMap;
use crate::eigensolve::{EigenDecomposition, CLUSTER_REL_TOL};
use crate::mesh::{Locator, TriangleMesh};
use crate::quadrature::{eval_off_interface, TriangleRule};
use crate::transform::PullbackFields;
use crate::{CuspError, Point, Result};

// ---------------------------------------------------------------------------
// Schatten distance of resolvent powers

#[derive(Clone, Debug, PartialEq)]
pub struct SchattenDistance {
    pub k: u32,
    pub value: f64,
    /// Weyl-law estimate of the omitted part, on the scale of `value`:
    /// `(2 Σ_{n > n_used} (c n^{2/N} + 1)^{-2k})^{1/2}`.
    pub tail_bound: f64,
    pub n_used: usize,
    /// `tail_bound ≤ 0.01 · value`.
    pub sufficient: bool,
}

fn check_ascending(lam: &[f64], name: &str) -> Result<()> {
    if lam.iter().any(|l| !l.is_finite() || *l <= -1.0) {
        return Err(CuspError::Input(format!("{name} must be finite and above -1")));
    }
    if lam.windows(2).any(|w| w[1] < w[0]) {
        return Err(CuspError::Input(format!("{name} is not ascending")));
    }
    Ok(())
}

/// Weyl constant `c` in `λ_n ≈ c n^{2/N}`, as the geometric mean of
/// `λ_n / n^{2/N}` over positive eigenvalues.
pub fn weyl_constant(lam: &[f64], dim: usize) -> Option<f64> {
    let e = 2.0 / dim as f64;
    let logs: Vec<f64> = lam
        .iter()
        .enumerate()
        .filter(|(_, l)| **l > 0.0)
        .map(|(i, l)| l.ln() - e * ((i + 1) as f64).ln())
        .collect();
    if logs.is_empty() {
        return None;
    }
    Some((logs.iter().sum::<f64>() / logs.len() as f64).exp())
}

fn weyl_tail(c: f64, dim: usize, k: u32, n_used: usize) -> f64 {
    let e = 2.0 / dim as f64;
    let mut sum = 0.0;
    let mut n = n_used + 1;
    loop {
        let term = (c * (n as f64).powf(e) + 1.0).powi(-2 * k as i32);
        sum += term;
        if term <= 1e-17 * sum || n > n_used + 10_000_000 {
            break;
        }
        n += 1;
    }
    (2.0 * sum).sqrt()
}

pub fn schatten_distance(lam: &[f64], lam_other: &[f64], k: u32, dim: usize) -> Result<SchattenDistance> {
    if lam.len() != lam_other.len() {
        return Err(CuspError::Input(format!(
            "eigenvalue lists differ in length ({} vs {})",
            lam.len(),
            lam_other.len()
        )));
    }
    if k == 0 || dim == 0 {
        return Err(CuspError::Input("k and the dimension must be at least 1".into()));
    }
    check_ascending(lam, "first list")?;
    check_ascending(lam_other, "second list")?;
    let kk = -(k as i32);
    let value = lam
        .iter()
        .zip(lam_other)
        .map(|(a, b)| ((b + 1.0).powi(kk) - (a + 1.0).powi(kk)).powi(2))
        .sum::<f64>()
        .sqrt();
    let tail_bound = match weyl_constant(lam, dim) {
        Some(c) => weyl_tail(c, dim, k, lam.len()),
        None => f64::INFINITY,
    };
    Ok(SchattenDistance {
        k,
        value,
        tail_bound,
        n_used: lam.len(),
        sufficient: tail_bound <= 0.01 * value,
    })
}

// ---------------------------------------------------------------------------
// Projector perturbation

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProjectorVerdict {
    Holds,
    Violated,
    /// `‖A - B‖ ≥ d/2`; the bound is not claimed.
    PreconditionViolated,
}

#[derive(Clone, Debug)]
pub struct ProjectorPair {
    pub p: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub cluster: Vec<usize>,
    pub gap: f64,
    pub bound: f64,
    pub distance: f64,
    pub perturbation: f64,
    pub verdict: ProjectorVerdict,
    /// `|λ_i - μ_i| ≤ ‖A - B‖` for all i, up to rounding.
    pub minmax_holds: bool,
}

fn sorted_eigen(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(m.clone());
    let mut idx: Vec<usize> = (0..m.nrows()).collect();
    idx.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let vals = idx.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vecs = DMatrix::from_fn(m.nrows(), m.nrows(), |r, c| eig.eigenvectors[(r, idx[c])]);
    (vals, vecs)
}

fn spectral_norm_sym(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m.clone()).eigenvalues.amax()
}

fn projector(vecs: &DMatrix<f64>, cols: &[usize]) -> DMatrix<f64> {
    let n = vecs.nrows();
    let mut p = DMatrix::zeros(n, n);
    for &c in cols {
        let v = vecs.column(c);
        p += v * v.transpose();
    }
    p
}

fn check_symmetric(m: &DMatrix<f64>, name: &str) -> Result<()> {
    if !m.is_square() {
        return Err(CuspError::Input(format!("{name} is not square")));
    }
    let asym = (m - m.transpose()).amax();
    if asym > 1e-12 * m.amax().max(1.0) {
        return Err(CuspError::Input(format!("{name} is not symmetric (asymmetry {asym:e})")));
    }
    Ok(())
}

pub fn projector_check(a: &DMatrix<f64>, b: &DMatrix<f64>, nu: f64) -> Result<ProjectorPair> {
    check_symmetric(a, "A")?;
    check_symmetric(b, "B")?;
    if a.shape() != b.shape() {
        return Err(CuspError::Input("A and B differ in size".into()));
    }
    let (la, va) = sorted_eigen(a);
    let (lb, vb) = sorted_eigen(b);
    let tol = 1e-10 * nu.abs().max(1.0);
    let cluster: Vec<usize> = (0..la.len()).filter(|&i| (la[i] - nu).abs() <= tol).collect();
    if cluster.is_empty() {
        return Err(CuspError::Input(format!("{nu} is not an eigenvalue of A")));
    }
    let gap = (0..la.len())
        .filter(|i| !cluster.contains(i))
        .map(|i| (la[i] - nu).abs())
        .fold(f64::INFINITY, f64::min);
    let perturbation = spectral_norm_sym(&(a - b));
    let p = projector(&va, &cluster);
    let q = projector(&vb, &cluster);
    let distance = (&p - &q).singular_values().max();
    let bound = 2.0 * (1.0 + cluster.len() as f64) * perturbation / gap;
    let verdict = if perturbation >= gap / 2.0 {
        ProjectorVerdict::PreconditionViolated
    } else if distance < bound || (bound == 0.0 && distance <= 1e-12) {
        ProjectorVerdict::Holds
    } else {
        ProjectorVerdict::Violated
    };
    // eigenvalues of symmetric matrices carry an absolute error of a few ulps
    // of the matrix norm
    let slack = 64.0 * f64::EPSILON * a.amax().max(b.amax()).max(1.0) * la.len() as f64;
    let minmax_holds = la.iter().zip(&lb).all(|(x, y)| (x - y).abs() <= perturbation + slack);
    Ok(ProjectorPair {
        p,
        q,
        cluster,
        gap,
        bound,
        distance,
        perturbation,
        verdict,
        minmax_holds,
    })
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EnsembleReport {
    pub samples: usize,
    pub admissible: usize,
    pub violations: usize,
    pub minmax_violations: usize,
    pub precondition_violated: usize,
    /// Largest `‖P - Q‖ / bound` among admissible samples with a nonzero bound.
    pub max_ratio: f64,
}

/// One random instance: `(A, B, ν)`. `A` has eigenvalue `ν` with
/// multiplicity 1 to 3 among other, possibly repeated, eigenvalues in
/// `[0, 4]`; `B = A + E` with `‖E‖ = s d / 2`, `s ∈ (0, 1.25)`, so that about
/// one sample in five violates the precondition.
pub fn ensemble_sample(master_seed: u64, index: u64) -> (DMatrix<f64>, DMatrix<f64>, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(index);
    let n = rng.random_range(2..=12usize);
    let mult = rng.random_range(1..=3usize.min(n - 1));
    let nu: f64 = rng.random_range(0.5..2.0);
    let mut eigs = vec![nu; mult];
    while eigs.len() < n {
        if eigs.len() > mult && rng.random_bool(0.3) {
            let prev = *eigs.last().unwrap();
            eigs.push(prev);
            continue;
        }
        let x: f64 = rng.random_range(0.0..4.0);
        if (x - nu).abs() >= 0.02 {
            eigs.push(x);
        }
    }
    let gap = eigs[mult..].iter().map(|x| (x - nu).abs()).fold(f64::INFINITY, f64::min);
    let raw = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let orth = raw.qr().q();
    let a = &orth * DMatrix::from_diagonal(&nalgebra::DVector::from_vec(eigs)) * orth.transpose();
    let a = (&a + a.transpose()) * 0.5;
    let x = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let e = (&x + x.transpose()) * 0.5;
    let s = rng.random_range(1e-3..1.25);
    let e = &e * (s * gap / 2.0 / spectral_norm_sym(&e));
    let mut b = &a + e;
    let mut a = a;
    let lo = SymmetricEigen::new(b.clone()).eigenvalues.min();
    let mut nu = nu;
    if lo < 0.0 {
        let c = -lo;
        for i in 0..n {
            a[(i, i)] += c;
            b[(i, i)] += c;
        }
        nu += c;
    }
    (a, b, nu)
}

pub fn projector_ensemble(samples: usize, master_seed: u64) -> Result<EnsembleReport> {
    let results: Vec<ProjectorPair> = (0..samples as u64)
        .into_par_iter()
        .map(|i| {
            let (a, b, nu) = ensemble_sample(master_seed, i);
            projector_check(&a, &b, nu)
        })
        .collect::<Result<_>>()?;
    let mut r = EnsembleReport {
        samples,
        ..Default::default()
    };
    for p in &results {
        if !p.minmax_holds {
            r.minmax_violations += 1;
        }
        match p.verdict {
            ProjectorVerdict::PreconditionViolated => r.precondition_violated += 1,
            v => {
                r.admissible += 1;
                if v == ProjectorVerdict::Violated {
                    r.violations += 1;
                }
                if p.bound > 0.0 {
                    r.max_ratio = r.max_ratio.max(p.distance / p.bound);
                }
            }
        }
    }
    Ok(r)
}

// ---------------------------------------------------------------------------
// Eigenfunction distances on physical domains

/// A decomposition of a pulled-back operator, read as functions on `φ(Ω)`:
/// `ψ ∘ φ⁻¹`, extended by zero.
pub struct EmbeddedDecomposition<'a> {
    pub mesh: &'a TriangleMesh,
    pub fields: &'a PullbackFields,
    pub dec: &'a EigenDecomposition,
    nodal: Vec<Vec<f64>>,
    locator: Locator,
}

impl<'a> EmbeddedDecomposition<'a> {
    pub fn new(mesh: &'a TriangleMesh, fields: &'a PullbackFields, dof_map: &DofMap, dec: &'a EigenDecomposition) -> Self {
        EmbeddedDecomposition {
            mesh,
            fields,
            dec,
            nodal: dec.vectors.iter().map(|v| dof_map.expand(v)).collect(),
            locator: Locator::new(mesh),
        }
    }

    fn interpolate(&self, range: &Range<usize>, t: usize, b: &[f64; 3]) -> Vec<f64> {
        let tri = self.mesh.triangles[t];
        range
            .clone()
            .map(|k| (0..3).map(|i| b[i] * self.nodal[k][tri[i]]).sum())
            .collect()
    }

    /// Values at the physical point `y`, or `None` outside `φ(Ω)`.
    fn at_physical(&self, range: &Range<usize>, y: &Point) -> Result<Option<Vec<f64>>> {
        let Some(x) = self.fields.transformation.inverse(y)? else {
            return Ok(None);
        };
        Ok(self
            .locator
            .locate(self.mesh, &x)
            .map(|(t, b)| self.interpolate(range, t, &b)))
    }

    /// Runs `f(values, physical point, weight)` at every quadrature point.
    fn for_each_point<T: Send>(
        &self,
        rule: &TriangleRule,
        range: &Range<usize>,
        f: impl Fn(&[f64], &Point, f64) -> Result<T> + Sync,
    ) -> Result<Vec<T>> {
        let per_element: Vec<Vec<T>> = (0..self.mesh.triangles.len())
            .into_par_iter()
            .map(|t| {
                let v = self.mesh.vertices(t);
                let area = self.mesh.signed_area(t);
                let centroid = self.mesh.centroid(t);
                let mut out = Vec::with_capacity(rule.len());
                for (b, w) in rule.points.iter().zip(&rule.weights) {
                    let p = Point::from(v[0].coords * b[0] + v[1].coords * b[1] + v[2].coords * b[2]);
                    let (y, g) = eval_off_interface(&p, &centroid, |x| {
                        Ok((self.fields.transformation.map(x)?, self.fields.eval(x)?.g))
                    })
                    .map_err(|e| e.in_element(t, p.x, p.y))?;
                    let vals = self.interpolate(range, t, b);
                    out.push(f(&vals, &y, w * area * g).map_err(|e| e.in_element(t, p.x, p.y))?);
                }
                Ok(out)
            })
            .collect::<Result<_>>()?;
        Ok(per_element.into_iter().flatten().collect())
    }
}

fn check_cluster(lambdas: &[f64], range: &Range<usize>, name: &str) -> Result<()> {
    if range.is_empty() || range.end > lambdas.len() {
        return Err(CuspError::Cluster(format!(
            "range {range:?} is not available in the {name} decomposition ({} pairs)",
            lambdas.len()
        )));
    }
    let close = |i: usize, j: usize| (lambdas[i] - lambdas[j]).abs() <= CLUSTER_REL_TOL * lambdas[i].abs().max(lambdas[j].abs()).max(1e-300);
    if (range.start > 0 && close(range.start - 1, range.start)) || (range.end < lambdas.len() && close(range.end - 1, range.end)) {
        return Err(CuspError::Cluster(format!(
            "range {range:?} splits a degenerate eigenvalue in the {name} decomposition"
        )));
    }
    Ok(())
}

/// Distance between eigenfunctions `range` of two decompositions on
/// `φ(Ω) ∪ φ̃(Ω)`. One index: the L² distance after choosing the sign that
/// maximizes the inner product. Several: the spectral-norm distance of the
/// orthogonal projectors onto the two spans.
pub fn eigenfunction_distance(
    a: &EmbeddedDecomposition,
    b: &EmbeddedDecomposition,
    range: Range<usize>,
    quad_points: usize,
) -> Result<f64> {
    check_cluster(&a.dec.lambdas, &range, "first")?;
    check_cluster(&b.dec.lambdas, &range, "second")?;
    let rule = TriangleRule::with_points(quad_points)?;
    let m = range.len();
    // on φ_A(Ω): Gram of a, cross products ⟨a_i, b_j⟩, Gram of b
    let on_a = a.for_each_point(&rule, &range, |va, y, w| {
        let vb = b.at_physical(&range, y)?.unwrap_or_else(|| vec![0.0; m]);
        let mut acc = vec![0.0; 3 * m * m];
        for i in 0..m {
            for j in 0..m {
                acc[i * m + j] = w * va[i] * va[j];
                acc[m * m + i * m + j] = w * va[i] * vb[j];
                acc[2 * m * m + i * m + j] = w * vb[i] * vb[j];
            }
        }
        Ok(acc)
    })?;
    // on φ_B(Ω) ∖ φ_A(Ω): Gram of b
    let on_b = b.for_each_point(&rule, &range, |vb, y, w| {
        let inside_a = a.at_physical(&range, y)?.is_some();
        let mut acc = vec![0.0; m * m];
        if !inside_a {
            for i in 0..m {
                for j in 0..m {
                    acc[i * m + j] = w * vb[i] * vb[j];
                }
            }
        }
        Ok(acc)
    })?;
    let mut gaa = DMatrix::<f64>::zeros(m, m);
    let mut cab = DMatrix::<f64>::zeros(m, m);
    let mut gbb = DMatrix::<f64>::zeros(m, m);
    for acc in &on_a {
        for i in 0..m {
            for j in 0..m {
                gaa[(i, j)] += acc[i * m + j];
                cab[(i, j)] += acc[m * m + i * m + j];
                gbb[(i, j)] += acc[2 * m * m + i * m + j];
            }
        }
    }
    for acc in &on_b {
        for i in 0..m {
            for j in 0..m {
                gbb[(i, j)] += acc[i * m + j];
            }
        }
    }
    if m == 1 {
        let d2 = gaa[(0, 0)] + gbb[(0, 0)] - 2.0 * cab[(0, 0)].abs();
        return Ok(d2.max(0.0).sqrt());
    }
    // residual of a_i after projection onto span(b), with b orthonormalized
    // through its Gram matrix
    let gbb_inv = gbb
        .clone()
        .try_inverse()
        .ok_or_else(|| CuspError::Cluster("second eigenfunctions are linearly dependent".into()))?;
    let r = &gaa - &cab * gbb_inv * cab.transpose();
    let r = (&r + r.transpose()) * 0.5;
    let top = SymmetricEigen::new(r).eigenvalues.max();
    // normalize by the a-Gram so that a distance of one means orthogonal spans
    let scale = SymmetricEigen::new(gaa).eigenvalues.min();
    Ok((top.max(0.0) / scale).sqrt())
}

// ---------------------------------------------------------------------------
// Exponents

#[derive(Clone, Debug, PartialEq)]
pub struct ExponentTable {
    pub n: usize,
    pub alpha: f64,
    pub n_alpha: f64,
    pub b_alpha: f64,
    pub gamma_min: f64,
    pub q0_max: f64,
    /// ρ for the Dirichlet Laplacian setting: β = 0, m = 2, p₀ = 2, M = N_α.
    pub rho: f64,
}

impl ExponentTable {
    fn build(n: usize, alpha: f64) -> Self {
        let nf = n as f64;
        let n_alpha = nf + (nf - 1.0) * (1.0 / alpha - 1.0);
        let mut t = ExponentTable {
            n,
            alpha,
            n_alpha,
            b_alpha: 0.5 - 5.0 * (1.0 - alpha) / (nf - 1.0 + alpha),
            gamma_min: n_alpha / 4.0,
            q0_max: (nf - 1.0 + alpha) / (1.0 - alpha),
            rho: 0.0,
        };
        t.rho = t.rho_with(2, &vec![0; n], n_alpha, 2.0);
        t
    }

    /// `|β|_α = β₁ + … + β_{N-1} + α β_N`.
    pub fn beta_alpha_norm(&self, beta: &[u32]) -> f64 {
        match beta.split_last() {
            Some((last, rest)) => rest.iter().map(|&b| f64::from(b)).sum::<f64>() + self.alpha * f64::from(*last),
            None => 0.0,
        }
    }

    /// `τ(m, β, M, p, q) = (|β|_α + α M (1/p - 1/q)) / (|β|_α + α (m - |β|))`
    /// with `M` in place of `N_α` in the numerator.
    pub fn tau(&self, m: u32, beta: &[u32], big_m: f64, p: f64, q: f64) -> f64 {
        let ba = self.beta_alpha_norm(beta);
        let b: u32 = beta.iter().sum();
        (ba + self.alpha * big_m * (1.0 / p - 1.0 / q)) / (ba + self.alpha * (f64::from(m) - f64::from(b)))
    }

    /// `inf { τ(m, β, M, p, ∞) + (M/m)(1/p₀ - 1/p) : p > max(M/(m - |β|), p₀) }`.
    /// The expression is affine in `1/p`, so the infimum is attained at an
    /// end of the admissible range of `1/p`.
    pub fn rho_with(&self, m: u32, beta: &[u32], big_m: f64, p0: f64) -> f64 {
        let b: u32 = beta.iter().sum();
        let mf = f64::from(m);
        let s_max = ((mf - f64::from(b)) / big_m).min(1.0 / p0);
        let f = |s: f64| {
            let p = if s == 0.0 { f64::INFINITY } else { 1.0 / s };
            self.tau(m, beta, big_m, p, f64::INFINITY) + big_m / mf * (1.0 / p0 - s)
        };
        f(0.0).min(f(s_max))
    }

    /// The exponent of the `L^∞` bound on `D^β ψ` from the regularity step:
    /// `(1/m)(M/p₀ + |β|)`.
    pub fn reg3(&self, m: u32, beta: &[u32], big_m: f64, p0: f64) -> f64 {
        let b: u32 = beta.iter().sum();
        (big_m / p0 + f64::from(b)) / f64::from(m)
    }
}

/// Exponents for a cusp of order `alpha` in dimension `n`, for `alpha` in
/// the open interval `(1 - n/15, 1)` where the rate is established.
pub fn rate_exponent(n: usize, alpha: f64) -> Result<ExponentTable> {
    if n < 2 {
        return Err(CuspError::UnsupportedDimension(n));
    }
    let lo = 1.0 - n as f64 / 15.0;
    if !(alpha > lo && alpha < 1.0) {
        return Err(CuspError::Hypothesis(format!(
            "alpha = {alpha} must lie in (1 - N/15, 1) = ({lo}, 1)"
        )));
    }
    Ok(ExponentTable::build(n, alpha))
}

/// As [`rate_exponent`] but also accepting `alpha = 1`, the Lipschitz limit,
/// where `b = 1/2` and `q0_max` is infinite.
pub fn convergence_exponent(n: usize, alpha: f64) -> Result<ExponentTable> {
    if alpha == 1.0 && n >= 2 {
        return Ok(ExponentTable::build(n, alpha));
    }
    rate_exponent(n, alpha)
}

// ---------------------------------------------------------------------------
// Fits

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

/// Least squares on `(ln x, ln y)`.
pub fn fit_rate(xs: &[f64], ys: &[f64]) -> Result<RateFit> {
    if xs.len() != ys.len() {
        return Err(CuspError::Fit(format!("{} abscissae but {} ordinates", xs.len(), ys.len())));
    }
    if xs.len() < 3 {
        return Err(CuspError::Fit(format!("need at least 3 points, got {}", xs.len())));
    }
    if xs.iter().chain(ys).any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(CuspError::Fit("data must be finite and positive".into()));
    }
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ly.iter().map(|y| (y - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(CuspError::Fit("all abscissae coincide".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = lx.iter().zip(&ly).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    let r2 = if syy == 0.0 { 1.0 } else { 1.0 - sse / syy };
    Ok(RateFit { slope, intercept, r2 })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PropertyPFit {
    pub gamma1: f64,
    pub gamma2: f64,
    pub used: usize,
}

/// Empirical exponents of `‖ψ_n‖_{L^{q₀}(g dx)} ≲ λ_n^γ` and
/// `‖∇ψ_n‖_{L^{q₀}(g dx)} ≲ λ_n^{1/2 + γ}`. Zero eigenvalues are skipped.
pub fn property_p_fit(
    dec: &EigenDecomposition,
    mesh: &TriangleMesh,
    fields: &PullbackFields,
    dof_map: &DofMap,
    q0: f64,
) -> Result<PropertyPFit> {
    if !(q0 > 2.0) {
        return Err(CuspError::Input(format!("q0 = {q0} must exceed 2")));
    }
    let top = dec.lambdas.iter().fold(0.0f64, |m, l| m.max(l.abs()));
    let keep: Vec<usize> = (0..dec.lambdas.len()).filter(|&i| dec.lambdas[i] > 1e-8 * top.max(1.0)).collect();
    if keep.len() < 10 {
        return Err(CuspError::Input(format!("{} positive eigenvalues, need at least 10", keep.len())));
    }
    let rule = TriangleRule::three_point();
    let infinite = q0.is_infinite();
    // per element: weight g integrated against the rule, and P1 gradients
    let elems: Vec<(Vec<f64>, [nalgebra::Vector2<f64>; 3])> = (0..mesh.triangles.len())
        .into_par_iter()
        .map(|t| {
            let v = mesh.vertices(t);
            let area = mesh.signed_area(t);
            let centroid = mesh.centroid(t);
            let mut wg = Vec::with_capacity(rule.len());
            for (b, w) in rule.points.iter().zip(&rule.weights) {
                let p = Point::from(v[0].coords * b[0] + v[1].coords * b[1] + v[2].coords * b[2]);
                let g = eval_off_interface(&p, &centroid, |x| Ok(fields.eval(x)?.g)).map_err(|e| e.in_element(t, p.x, p.y))?;
                wg.push(w * area * g);
            }
            let d = 2.0 * area;
            let grads = [
                nalgebra::Vector2::new(v[1].y - v[2].y, v[2].x - v[1].x) / d,
                nalgebra::Vector2::new(v[2].y - v[0].y, v[0].x - v[2].x) / d,
                nalgebra::Vector2::new(v[0].y - v[1].y, v[1].x - v[0].x) / d,
            ];
            Ok((wg, grads))
        })
        .collect::<Result<_>>()?;
    let mut lam = Vec::new();
    let mut n1 = Vec::new();
    let mut n2 = Vec::new();
    for &k in &keep {
        let u = dof_map.expand(&dec.vectors[k]);
        let (mut s1, mut s2) = (0.0f64, 0.0f64);
        for (t, (wg, grads)) in elems.iter().enumerate() {
            let tri = mesh.triangles[t];
            let grad = grads[0] * u[tri[0]] + grads[1] * u[tri[1]] + grads[2] * u[tri[2]];
            if infinite {
                s1 = tri.iter().fold(s1, |m, &i| m.max(u[i].abs()));
                s2 = s2.max(grad.norm());
            } else {
                for (b, w) in rule.points.iter().zip(wg) {
                    let val = b[0] * u[tri[0]] + b[1] * u[tri[1]] + b[2] * u[tri[2]];
                    s1 += w * val.abs().powf(q0);
                    s2 += w * grad.norm().powf(q0);
                }
            }
        }
        if !infinite {
            s1 = s1.powf(1.0 / q0);
            s2 = s2.powf(1.0 / q0);
        }
        lam.push(dec.lambdas[k]);
        n1.push(s1);
        n2.push(s2);
    }
    let f1 = fit_rate(&lam, &n1)?;
    let f2 = fit_rate(&lam, &n2)?;
    Ok(PropertyPFit {
        gamma1: f1.slope,
        gamma2: f2.slope - 0.5,
        used: keep.len(),
    })
}
