//! Lowest eigenpairs of `K ψ = λ M ψ`.
//!
//! The sparse path runs block Lanczos on the shift-inverted operator
//! `(K - σM)⁻¹ M` with full M-reorthogonalization, and extracts Ritz pairs
//! by Rayleigh-Ritz on the original pencil. A block size above the largest
//! expected multiplicity lets degenerate eigenvalues appear with their full
//! eigenspace.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::assembly::AssembledSystem;
use crate::sparse::{dot, CsrMatrix, EnvelopeCholesky};
use crate::{CuspError, Result};

/// Relative width below which eigenvalues are treated as one cluster.
pub const CLUSTER_REL_TOL: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct EigenDecomposition {
    pub lambdas: Vec<f64>,
    /// M-orthonormal coefficient vectors over the free degrees of freedom.
    pub vectors: Vec<Vec<f64>>,
    /// `‖Kψ - λMψ‖ / (max(|λ|, 1) ‖Mψ‖)`.
    pub residuals: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolverOptions {
    pub shift: f64,
    pub block: usize,
    /// Upper bound on the Krylov basis size.
    pub max_basis: usize,
    pub seed: u64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            shift: -1.0,
            block: 4,
            max_basis: 600,
            seed: 0x5eed,
        }
    }
}

pub fn solve_lowest(sys: &AssembledSystem, count: usize, tol: f64) -> Result<EigenDecomposition> {
    solve_lowest_with(sys, count, tol, &SolverOptions::default())
}

fn m_normalize(m: &CsrMatrix, v: &mut [f64]) -> f64 {
    let norm = dot(v, &m.mul_vec(v)).sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    norm
}

/// Removes the components along `basis` in the M-inner product, given the
/// products `mbasis[i] = M basis[i]`. Two passes.
fn m_orthogonalize(v: &mut [f64], basis: &[Vec<f64>], mbasis: &[Vec<f64>]) {
    for _ in 0..2 {
        for (b, mb) in basis.iter().zip(mbasis) {
            let c = dot(v, mb);
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
        }
    }
}

fn fix_sign(v: &mut [f64]) {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// Dense generalized eigenproblem `A y = θ B y` with `B` positive
/// definite; eigenvalues ascending, `Bᵀ`-orthonormal vectors as columns.
fn dense_generalized(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let chol = nalgebra::Cholesky::new(b.clone())
        .ok_or_else(|| CuspError::Solver("mass matrix is not positive definite".into()))?;
    let l = chol.l();
    let linv = l
        .clone()
        .try_inverse()
        .ok_or_else(|| CuspError::Solver("singular Cholesky factor".into()))?;
    let mut c = &linv * a * linv.transpose();
    c = (&c + c.transpose()) * 0.5;
    let eig = SymmetricEigen::new(c);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let y = DMatrix::from_fn(a.nrows(), order.len(), |r, k| eig.eigenvectors[(r, order[k])]);
    Ok((values, linv.transpose() * y))
}

fn finish(sys: &AssembledSystem, lambdas: Vec<f64>, mut vectors: Vec<Vec<f64>>) -> EigenDecomposition {
    let mut residuals = Vec::with_capacity(lambdas.len());
    for (lam, v) in lambdas.iter().zip(vectors.iter_mut()) {
        m_normalize(&sys.m, v);
        fix_sign(v);
        let kv = sys.k.mul_vec(v);
        let mv = sys.m.mul_vec(v);
        let r: f64 = kv.iter().zip(&mv).map(|(k, m)| (k - lam * m).powi(2)).sum::<f64>().sqrt();
        residuals.push(r / (lam.abs().max(1.0) * dot(&mv, &mv).sqrt()));
    }
    EigenDecomposition {
        lambdas,
        vectors,
        residuals,
    }
}

/// Full dense solve; intended as an oracle for small systems.
pub fn solve_dense(sys: &AssembledSystem, count: usize) -> Result<EigenDecomposition> {
    let n = sys.dof();
    if count == 0 || count > n {
        return Err(CuspError::Input(format!("count {count} outside 1..={n}")));
    }
    let (values, vecs) = dense_generalized(&sys.k.to_dense(), &sys.m.to_dense())?;
    let vectors = (0..count).map(|k| vecs.column(k).iter().copied().collect()).collect();
    Ok(finish(sys, values[..count].to_vec(), vectors))
}

pub fn solve_lowest_with(
    sys: &AssembledSystem,
    count: usize,
    tol: f64,
    opts: &SolverOptions,
) -> Result<EigenDecomposition> {
    let n = sys.dof();
    if count == 0 || 4 * count > n {
        return Err(CuspError::Input(format!(
            "requested {count} eigenpairs of a system with {n} unknowns (need 1 ≤ count ≤ dof/4)"
        )));
    }
    if !(tol > 0.0) {
        return Err(CuspError::Input(format!("tolerance {tol} must be positive")));
    }
    let shifted = sys.k.add_scaled(&sys.m, -opts.shift);
    let factor = EnvelopeCholesky::factor(&shifted)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let block = opts.block.max(1);
    let max_basis = opts.max_basis.max(count + 2 * block).min(n);

    let mut basis: Vec<Vec<f64>> = Vec::new();
    let mut mbasis: Vec<Vec<f64>> = Vec::new();
    let mut kbasis: Vec<Vec<f64>> = Vec::new();

    for _ in 0..block {
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let v = factor.solve(&sys.m.mul_vec(&v));
        push(sys, &mut rng, v, &mut basis, &mut mbasis, &mut kbasis);
    }

    let mut block_start = 0;
    let (lambdas, vectors) = loop {
        let full = basis.len() >= max_basis;
        if basis.len() >= count + block {
            let m = basis.len();
            let kr = DMatrix::from_fn(m, m, |i, j| dot(&basis[i], &kbasis[j]));
            let kr = (&kr + kr.transpose()) * 0.5;
            let mr = DMatrix::from_fn(m, m, |i, j| dot(&basis[i], &mbasis[j]));
            let mr = (&mr + mr.transpose()) * 0.5;
            let (theta, y) = dense_generalized(&kr, &mr)?;
            let mut vectors = Vec::with_capacity(count);
            let mut residuals = Vec::with_capacity(count);
            for k in 0..count {
                let mut v = vec![0.0; n];
                let mut kv = vec![0.0; n];
                let mut mv = vec![0.0; n];
                for i in 0..m {
                    let c = y[(i, k)];
                    for r in 0..n {
                        v[r] += c * basis[i][r];
                        kv[r] += c * kbasis[i][r];
                        mv[r] += c * mbasis[i][r];
                    }
                }
                let res: f64 = kv.iter().zip(&mv).map(|(a, b)| (a - theta[k] * b).powi(2)).sum::<f64>().sqrt();
                residuals.push(res / (theta[k].abs().max(1.0) * dot(&mv, &mv).sqrt()));
                vectors.push(v);
            }
            let converged = residuals.iter().take_while(|&&r| r <= tol).count();
            if converged == count {
                break (theta[..count].to_vec(), vectors);
            }
            if full {
                return Err(CuspError::NotConverged {
                    converged,
                    requested: count,
                });
            }
        } else if full {
            return Err(CuspError::NotConverged {
                converged: 0,
                requested: count,
            });
        }
        let block_end = basis.len();
        if block_end == block_start {
            return Err(CuspError::Solver("Krylov space exhausted".into()));
        }
        for i in block_start..block_end {
            if basis.len() >= max_basis {
                break;
            }
            let w = factor.solve(&mbasis[i]);
            if !push(sys, &mut rng, w, &mut basis, &mut mbasis, &mut kbasis) {
                break;
            }
        }
        block_start = block_end;
    };
    let dec = finish(sys, lambdas, vectors);
    Ok(dec)
}

/// Appends `v` to the basis after M-orthogonalization, replacing it by a
/// random vector when it is numerically dependent. Returns false once no
/// new direction could be found.
fn push(
    sys: &AssembledSystem,
    rng: &mut ChaCha8Rng,
    mut v: Vec<f64>,
    basis: &mut Vec<Vec<f64>>,
    mbasis: &mut Vec<Vec<f64>>,
    kbasis: &mut Vec<Vec<f64>>,
) -> bool {
    let n = v.len();
    for _attempt in 0..4 {
        let before = dot(&v, &sys.m.mul_vec(&v)).sqrt();
        m_orthogonalize(&mut v, basis, mbasis);
        let after = m_normalize(&sys.m, &mut v);
        if after > 1e-8 * before && after > 0.0 {
            mbasis.push(sys.m.mul_vec(&v));
            kbasis.push(sys.k.mul_vec(&v));
            basis.push(v);
            return true;
        }
        v = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    }
    false
}

/// Index ranges of eigenvalues within relative distance `rel` of their
/// neighbours.
pub fn clusters(lambdas: &[f64], rel: f64) -> Vec<std::ops::Range<usize>> {
    let mut out = Vec::new();
    let mut start = 0;
    for i in 1..=lambdas.len() {
        let split = i == lambdas.len() || {
            let (a, b) = (lambdas[i - 1], lambdas[i]);
            (b - a).abs() > rel * a.abs().max(b.abs()).max(1e-300)
        };
        if split {
            out.push(start..i);
            start = i;
        }
    }
    out
}

/// Stores a decomposition under the system digest.
pub fn write_cache(path: &Path, dec: &EigenDecomposition, dof: usize, digest: &str) -> Result<()> {
    let mut out = Vec::new();
    writeln!(out, "eigs {} {} {}", dec.lambdas.len(), dof, digest)?;
    for (l, r) in dec.lambdas.iter().zip(&dec.residuals) {
        writeln!(out, "{l:e} {r:e}")?;
    }
    for v in &dec.vectors {
        let row: Vec<String> = v.iter().map(|x| format!("{x:e}")).collect();
        writeln!(out, "{}", row.join(" "))?;
    }
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, out)?;
    Ok(())
}

/// Loads a cached decomposition when its header matches; `Ok(None)` on a
/// missing file or a different system.
pub fn read_cache(path: &Path, count: usize, dof: usize, digest: &str) -> Result<Option<EigenDecomposition>> {
    let Ok(file) = fs::File::open(path) else {
        return Ok(None);
    };
    let mut lines = BufReader::new(file).lines();
    let header = match lines.next() {
        Some(l) => l?,
        None => return Ok(None),
    };
    if header != format!("eigs {count} {dof} {digest}") {
        return Ok(None);
    }
    let parse = |s: &str| s.parse::<f64>().map_err(|_| CuspError::Parse(format!("bad number `{s}` in cache")));
    let mut lambdas = Vec::with_capacity(count);
    let mut residuals = Vec::with_capacity(count);
    for _ in 0..count {
        let line = lines.next().ok_or_else(|| CuspError::Parse("truncated cache".into()))??;
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 2 {
            return Err(CuspError::Parse(format!("bad cache line `{line}`")));
        }
        lambdas.push(parse(f[0])?);
        residuals.push(parse(f[1])?);
    }
    let mut vectors = Vec::with_capacity(count);
    for _ in 0..count {
        let line = lines.next().ok_or_else(|| CuspError::Parse("truncated cache".into()))??;
        let v = line.split_whitespace().map(parse).collect::<Result<Vec<f64>>>()?;
        if v.len() != dof {
            return Err(CuspError::Parse("cache vector has the wrong length".into()));
        }
        vectors.push(v);
    }
    Ok(Some(EigenDecomposition {
        lambdas,
        vectors,
        residuals,
    }))
}
