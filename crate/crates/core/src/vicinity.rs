//! The vicinity measure `δ_q(φ, φ̃)` between two transformations.
//!
//! With `w`, `S` from [`PairFields`] and `a`, `g` from the first pull-back,
//! `δ_q⁽¹⁾ = ‖w - 1‖ + ‖w⁻¹ - 1‖` and
//! `δ_q⁽²⁾ = ‖(S^{1/2} - S^{-1/2}) a^{1/2}‖ + ‖(S - I) a^{1/2}‖`,
//! all in `L^q(Ω, g dx)` with the Frobenius norm pointwise. For `q = ∞` the
//! norm is the maximum over quadrature points, a lower bound for the
//! essential supremum.

use rayon::prelude::*;

use crate::mesh::TriangleMesh;
use crate::quadrature::{eval_off_interface, TriangleRule};
use crate::transform::{spd_inv_sqrt, spd_sqrt, PairFields, Transformation};
use crate::{CuspError, Matrix, Point, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VicinityParts {
    pub delta1: f64,
    pub delta2: f64,
    pub delta: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VicinityReport {
    pub q: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub delta: f64,
    /// The same quantities with `dx` in place of `g dx`.
    pub unweighted: VicinityParts,
    pub sobolev_comparison: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VicinityOptions {
    pub quad_points: usize,
    /// Divide by the total mass so that the weight is a probability measure.
    pub normalize: bool,
}

impl Default for VicinityOptions {
    fn default() -> Self {
        VicinityOptions {
            quad_points: 7,
            normalize: false,
        }
    }
}

/// Integrals (or maxima) of the four integrands and of the weight.
#[derive(Clone, Copy, Debug, Default)]
struct Sums {
    weighted: [f64; 4],
    plain: [f64; 4],
    mass: f64,
    area: f64,
}

fn check_q(q: f64) -> Result<()> {
    if q > 1.0 {
        Ok(())
    } else {
        Err(CuspError::Input(format!("exponent q = {q} must exceed 1")))
    }
}

fn frobenius(m: &Matrix) -> f64 {
    m.norm()
}

fn integrands(pair: &PairFields, p: &Point) -> Result<([f64; 4], f64)> {
    let pp = pair.eval(p)?;
    let a_half = spd_sqrt(&pp.base.a)?;
    let s_half = spd_sqrt(&pp.s)?;
    let s_inv_half = spd_inv_sqrt(&pp.s)?;
    let vals = [
        (pp.w - 1.0).abs(),
        (1.0 / pp.w - 1.0).abs(),
        frobenius(&((s_half - s_inv_half) * a_half)),
        frobenius(&((pp.s - Matrix::identity()) * a_half)),
    ];
    if vals.iter().any(|v| !v.is_finite()) || !pp.base.g.is_finite() {
        return Err(CuspError::Singular(p.x, p.y));
    }
    Ok((vals, pp.base.g))
}

pub fn delta_q(pair: &PairFields, mesh: &TriangleMesh, q: f64) -> Result<VicinityReport> {
    delta_q_with(pair, mesh, q, &VicinityOptions::default())
}

pub fn delta_q_with(pair: &PairFields, mesh: &TriangleMesh, q: f64, opts: &VicinityOptions) -> Result<VicinityReport> {
    check_q(q)?;
    let rule = TriangleRule::with_points(opts.quad_points)?;
    let infinite = q.is_infinite();
    let parts: Vec<Sums> = (0..mesh.triangles.len())
        .into_par_iter()
        .map(|t| {
            let v = mesh.vertices(t);
            let area = mesh.signed_area(t);
            let centroid = mesh.centroid(t);
            let mut s = Sums::default();
            for (b, w) in rule.points.iter().zip(&rule.weights) {
                let p = Point::from(v[0].coords * b[0] + v[1].coords * b[1] + v[2].coords * b[2]);
                let (vals, g) = eval_off_interface(&p, &centroid, |x| integrands(pair, x))
                    .map_err(|e| e.in_element(t, p.x, p.y))?;
                let dx = w * area;
                s.mass += dx * g;
                s.area += dx;
                for (k, v) in vals.iter().enumerate() {
                    if infinite {
                        s.weighted[k] = s.weighted[k].max(*v);
                        s.plain[k] = s.plain[k].max(*v);
                    } else {
                        let vq = v.powf(q);
                        s.weighted[k] += dx * g * vq;
                        s.plain[k] += dx * vq;
                    }
                }
            }
            Ok(s)
        })
        .collect::<Result<_>>()?;
    let mut total = Sums::default();
    for s in &parts {
        total.mass += s.mass;
        total.area += s.area;
        for k in 0..4 {
            if infinite {
                total.weighted[k] = total.weighted[k].max(s.weighted[k]);
                total.plain[k] = total.plain[k].max(s.plain[k]);
            } else {
                total.weighted[k] += s.weighted[k];
                total.plain[k] += s.plain[k];
            }
        }
    }
    let norms = |sums: [f64; 4], measure: f64| -> [f64; 4] {
        sums.map(|v| {
            if infinite {
                v
            } else if opts.normalize {
                (v / measure).powf(1.0 / q)
            } else {
                v.powf(1.0 / q)
            }
        })
    };
    let wn = norms(total.weighted, total.mass);
    let pn = norms(total.plain, total.area);
    let parts_of = |n: [f64; 4]| VicinityParts {
        delta1: n[0] + n[1],
        delta2: n[2] + n[3],
        delta: n[0] + n[1] + n[2] + n[3],
    };
    let weighted = parts_of(wn);
    Ok(VicinityReport {
        q,
        delta1: weighted.delta1,
        delta2: weighted.delta2,
        delta: weighted.delta,
        unweighted: parts_of(pn),
        sobolev_comparison: None,
    })
}

/// `‖φ - φ̃‖_{L^q} + ‖∇φ - ∇φ̃‖_{L^q}` over the mesh, with `dx`.
pub fn sobolev_distance(
    t: &dyn Transformation,
    t_other: &dyn Transformation,
    mesh: &TriangleMesh,
    q: f64,
    quad_points: usize,
) -> Result<f64> {
    check_q(q)?;
    let rule = TriangleRule::with_points(quad_points)?;
    let infinite = q.is_infinite();
    let parts: Vec<[f64; 2]> = (0..mesh.triangles.len())
        .into_par_iter()
        .map(|e| {
            let v = mesh.vertices(e);
            let area = mesh.signed_area(e);
            let centroid = mesh.centroid(e);
            let mut acc = [0.0f64; 2];
            for (b, w) in rule.points.iter().zip(&rule.weights) {
                let p = Point::from(v[0].coords * b[0] + v[1].coords * b[1] + v[2].coords * b[2]);
                let vals = eval_off_interface(&p, &centroid, |x| {
                    let dm = (t.map(x)? - t_other.map(x)?).norm();
                    let dj = frobenius(&(t.jacobian(x)? - t_other.jacobian(x)?));
                    Ok([dm, dj])
                })
                .map_err(|err| err.in_element(e, p.x, p.y))?;
                for k in 0..2 {
                    if infinite {
                        acc[k] = acc[k].max(vals[k]);
                    } else {
                        acc[k] += w * area * vals[k].powf(q);
                    }
                }
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;
    let mut total = [0.0f64; 2];
    for a in &parts {
        for k in 0..2 {
            total[k] = if infinite { total[k].max(a[k]) } else { total[k] + a[k] };
        }
    }
    Ok(if infinite {
        total[0] + total[1]
    } else {
        total[0].powf(1.0 / q) + total[1].powf(1.0 / q)
    })
}

/// Attaches the Sobolev comparison to a report.
pub fn with_sobolev(mut report: VicinityReport, sobolev: f64) -> VicinityReport {
    report.sobolev_comparison = Some(sobolev);
    report
}
