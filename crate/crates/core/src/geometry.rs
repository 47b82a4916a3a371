//! Cusp domains and Lipschitz graph domains.
//!
//! Inside the box `]-1,1[^N` the cusp domain is the subgraph
//! `x_N < 1 - |x̄|^α`. Its Lipschitz truncations `Ω_ε` cut the tip at height
//! `1 - ε`, and `Ω̂_ε ⊂ Ω_{ε₀}` is the part of the reference domain left fixed
//! by the map `φ_ε` (see [`crate::transform::PhiEps`]). Outside the box the
//! boundary is closed by a polyline that is shared by all members of the
//! family.

use crate::transform::GraphMorph;
use crate::{CuspError, Result};

/// Residual tolerance used when callers do not supply one.
pub const DEFAULT_PROFILE_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct CuspGeometry {
    /// Cusp exponent α.
    pub alpha: f64,
    /// Reference cut ε₀; `Ω_{ε₀}` is the domain that gets meshed.
    pub eps0: f64,
    /// Ambient dimension N.
    pub dim: usize,
    /// Closure of the boundary outside the box, from `(1, 0)` to `(-1, 0)`.
    pub outer: Vec<[f64; 2]>,
}

impl CuspGeometry {
    pub fn new(alpha: f64, eps0: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(CuspError::Domain(format!("α = {alpha} must lie in (0, 1]")));
        }
        if !(eps0 > 0.0 && eps0 < 0.5) {
            return Err(CuspError::Domain(format!("ε₀ = {eps0} must lie in (0, 1/2)")));
        }
        Ok(CuspGeometry {
            alpha,
            eps0,
            dim: 2,
            outer: default_outer(),
        })
    }

    pub fn with_dim(mut self, dim: usize) -> Result<Self> {
        if dim < 2 {
            return Err(CuspError::UnsupportedDimension(dim));
        }
        self.dim = dim;
        Ok(self)
    }

    /// Replaces the closure polyline. It must start at `(1, 0)`, end at
    /// `(-1, 0)` and stay outside the open box.
    pub fn with_outer(mut self, outer: Vec<[f64; 2]>) -> Result<Self> {
        validate_outer(&outer)?;
        self.outer = outer;
        Ok(self)
    }

    /// Radius `ε₀^{1/α}` of the region where the family members differ.
    pub fn cap_radius(&self) -> f64 {
        self.eps0.powf(1.0 / self.alpha)
    }

    pub fn level(&self, eps: f64) -> Result<EpsLevel> {
        EpsLevel::new(eps, self)
    }

    /// Hypothesis of the cusp rate theorem: `α ∈ (1 - N/15, 1)`.
    pub fn check_rate_hypothesis(&self) -> Result<()> {
        let lower = 1.0 - self.dim as f64 / 15.0;
        if self.alpha > lower && self.alpha < 1.0 {
            Ok(())
        } else {
            Err(CuspError::Hypothesis(format!(
                "α = {} outside (1 - N/15, 1) = ({lower}, 1) for N = {}",
                self.alpha, self.dim
            )))
        }
    }

    /// Hypothesis of the Jacobian ratio bound: `α > 1/2` and `ε₀ ≤ 1/4`.
    pub fn check_ratio_hypothesis(&self) -> Result<()> {
        if self.alpha > 0.5 && self.eps0 <= 0.25 {
            Ok(())
        } else {
            Err(CuspError::Hypothesis(format!(
                "ratio bound needs α > 1/2 and ε₀ ≤ 1/4, got α = {}, ε₀ = {}",
                self.alpha, self.eps0
            )))
        }
    }

    /// Upper boundary `min{1 - ε, 1 - |x̄|^α}` of `Ω_ε` inside the box.
    pub fn top(&self, xbar_norm: f64, eps: f64) -> f64 {
        (1.0 - eps).min(1.0 - xbar_norm.powf(self.alpha))
    }
}

fn default_outer() -> Vec<[f64; 2]> {
    vec![[1.0, 0.0], [1.0, -1.0], [-1.0, -1.0], [-1.0, 0.0]]
}

fn validate_outer(outer: &[[f64; 2]]) -> Result<()> {
    if outer.len() < 2 {
        return Err(CuspError::InvalidDomain("closure polyline needs two vertices".into()));
    }
    let first = outer[0];
    let last = outer[outer.len() - 1];
    if first != [1.0, 0.0] || last != [-1.0, 0.0] {
        return Err(CuspError::InvalidDomain(
            "closure polyline must run from (1, 0) to (-1, 0)".into(),
        ));
    }
    for seg in outer.windows(2) {
        if segment_enters_open_box(seg[0], seg[1]) {
            return Err(CuspError::InvalidDomain(format!(
                "closure segment {:?} -> {:?} enters ]-1,1[²",
                seg[0], seg[1]
            )));
        }
    }
    Ok(())
}

/// Liang-Barsky clipping against the open square; true when a piece of
/// positive length lies strictly inside.
fn segment_enters_open_box(a: [f64; 2], b: [f64; 2]) -> bool {
    let d = [b[0] - a[0], b[1] - a[1]];
    let (mut t0, mut t1) = (0.0f64, 1.0f64);
    for axis in 0..2 {
        for (p, q) in [(-d[axis], a[axis] + 1.0), (d[axis], 1.0 - a[axis])] {
            if p == 0.0 {
                if q <= 0.0 {
                    return false;
                }
            } else {
                let r = q / p;
                if p < 0.0 {
                    t0 = t0.max(r);
                } else {
                    t1 = t1.min(r);
                }
            }
        }
    }
    t1 - t0 > 1e-12
}

/// Perturbation parameter ε of a family member, `0 ≤ ε ≤ ε₀`.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub struct EpsLevel(f64);

impl EpsLevel {
    pub fn new(eps: f64, geo: &CuspGeometry) -> Result<Self> {
        if eps >= 0.0 && eps <= geo.eps0 {
            Ok(EpsLevel(eps))
        } else {
            Err(CuspError::Domain(format!(
                "ε = {eps} must lie in [0, ε₀] = [0, {}]",
                geo.eps0
            )))
        }
    }

    pub fn eps(self) -> f64 {
        self.0
    }
}

/// `C_α = 1 - 1/2^{2α-1}`, the lower bracket factor for the cap profile.
pub fn c_alpha(alpha: f64) -> Result<f64> {
    if !(alpha > 0.5 && alpha <= 1.0) {
        return Err(CuspError::Domain(format!(
            "C_α needs α in (1/2, 1], got {alpha}"
        )));
    }
    Ok(1.0 - 0.5f64.powf(2.0 * alpha - 1.0))
}

/// Value of the cap profile together with its derivative in `|x̄|`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CapProfile {
    /// `h_ε(x̄)`.
    pub h: f64,
    /// `u = 1 - ε₀ - h`, the depth of the profile below the reference cut.
    pub depth: f64,
    /// `∂h/∂|x̄|`; zero on the plateau `|x̄| < ε^{1/α}`.
    pub slope: f64,
    /// `max{|x̄|², ε^{2/α}}`.
    pub m: f64,
}

/// Solves the implicit profile equation
/// `h = 1 - 2ε₀ + [(1 - ε₀ - h)^4 + max{|x̄|², ε^{2/α}}]^{α/2}`.
///
/// In terms of the depth `u = 1 - ε₀ - h` the residual
/// `f(u) = u - ε₀ + (u^4 + m)^{α/2}` has `f' ≥ 1` on `u ≥ 0`, so the root is
/// unique on the bracket and bisection finds it to full precision.
pub fn cap_profile(xbar_norm: f64, level: EpsLevel, geo: &CuspGeometry, tol: f64) -> Result<CapProfile> {
    if !(tol > 0.0) {
        return Err(CuspError::Domain(format!("tolerance {tol} must be positive")));
    }
    if !(xbar_norm >= 0.0) {
        return Err(CuspError::Domain(format!("|x̄| = {xbar_norm} must be ≥ 0")));
    }
    let alpha = geo.alpha;
    let eps0 = geo.eps0;
    let eps = level.eps();
    if xbar_norm >= geo.cap_radius() {
        let h = 1.0 - xbar_norm.powf(alpha);
        let slope = if xbar_norm > 0.0 {
            -alpha * xbar_norm.powf(alpha - 1.0)
        } else {
            0.0
        };
        return Ok(CapProfile {
            h,
            depth: 1.0 - eps0 - h,
            slope,
            m: xbar_norm * xbar_norm,
        });
    }

    let on_plateau = xbar_norm * xbar_norm <= eps.powf(2.0 / alpha);
    let m = if on_plateau {
        eps.powf(2.0 / alpha)
    } else {
        xbar_norm * xbar_norm
    };
    let mu = xbar_norm.powf(alpha).max(eps);
    let c = c_alpha(alpha)?;
    let residual = |u: f64| u - eps0 + (u.powi(4) + m).powf(alpha / 2.0);

    let mut lo = c * (eps0 - mu);
    let mut hi = eps0 - mu;
    let f_lo = residual(lo);
    let f_hi = residual(hi);
    let depth = if f_lo.abs() <= tol * 1e-3 {
        lo
    } else if f_hi.abs() <= tol * 1e-3 {
        hi
    } else {
        if f_lo > 0.0 || f_hi < 0.0 {
            return Err(CuspError::Bracket {
                xbar_norm,
                eps,
                residual_lo: f_lo,
                residual_hi: f_hi,
            });
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if residual(mid) <= 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        if residual(lo).abs() <= residual(hi).abs() {
            lo
        } else {
            hi
        }
    };
    let res = residual(depth).abs();
    if res > tol {
        return Err(CuspError::Residual { residual: res, tol });
    }

    // Implicit differentiation of f(u, m) = 0 with dm/d|x̄| = 2|x̄| off the plateau.
    let slope = if on_plateau {
        0.0
    } else {
        let p = (depth.powi(4) + m).powf(alpha / 2.0 - 1.0);
        let du = -alpha * p * xbar_norm / (1.0 + 2.0 * alpha * depth.powi(3) * p);
        -du
    };
    Ok(CapProfile {
        h: 1.0 - eps0 - depth,
        depth,
        slope,
        m,
    })
}

/// The cap profile `h_ε(|x̄|)`.
pub fn h_eps(xbar_norm: f64, level: EpsLevel, geo: &CuspGeometry, tol: f64) -> Result<f64> {
    cap_profile(xbar_norm, level, geo, tol).map(|p| p.h)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Region {
    Omega,
    OmegaEps(EpsLevel),
    OmegaHatEps(EpsLevel),
}

/// Exact membership predicate for the three sets of the cusp family.
///
/// Only the hat region can fail, when the cap profile cannot be solved for
/// the given geometry.
pub fn membership(p: &[f64], region: Region, geo: &CuspGeometry) -> Result<bool> {
    if p.len() != geo.dim {
        return Err(CuspError::Input(format!(
            "point of dimension {} for geometry of dimension {}",
            p.len(),
            geo.dim
        )));
    }
    let in_box = p.iter().all(|c| c.abs() < 1.0);
    if !in_box {
        if geo.dim != 2 {
            return Ok(false);
        }
        return Ok(inside_outer_closure(p[0], p[1], &geo.outer));
    }
    let xn = p[geo.dim - 1];
    let xbar_norm = p[..geo.dim - 1].iter().map(|c| c * c).sum::<f64>().sqrt();
    Ok(match region {
        Region::Omega => xn < 1.0 - xbar_norm.powf(geo.alpha),
        Region::OmegaEps(level) => xn < geo.top(xbar_norm, level.eps()),
        Region::OmegaHatEps(level) => {
            xn < h_eps(xbar_norm, level, geo, DEFAULT_PROFILE_TOL)?
        }
    })
}

/// Even-odd test against the polygon formed by the closure polyline and
/// the segment `(-1, 0) → (1, 0)`.
fn inside_outer_closure(x: f64, y: f64, outer: &[[f64; 2]]) -> bool {
    let n = outer.len();
    let mut inside = false;
    for i in 0..n {
        let a = outer[i];
        let b = outer[(i + 1) % n];
        if (a[1] > y) != (b[1] > y) {
            let xc = a[0] + (y - a[1]) * (b[0] - a[0]) / (b[1] - a[1]);
            if x < xc {
                inside = !inside;
            }
        }
    }
    inside
}

/// Area of the removed tip `Ω ∖ Ω_ε` for N = 2:
/// `∫_{|x| < ε^{1/α}} (ε - |x|^α) dx = 2α ε^{1+1/α} / (α + 1)`.
pub fn cusp_cap_measure(level: EpsLevel, geo: &CuspGeometry) -> Result<f64> {
    if geo.dim != 2 {
        return Err(CuspError::UnsupportedDimension(geo.dim));
    }
    let a = geo.alpha;
    let eps = level.eps();
    Ok(2.0 * a * eps.powf(1.0 + 1.0 / a) / (a + 1.0))
}

/// Upper boundary of a graph domain over the interval `W`.
#[derive(Clone, Debug, PartialEq)]
pub enum Profile {
    Constant(f64),
    /// `base + amplitude (1 - t²)²` with `t = (x - center)/radius` on `|t| < 1`.
    /// The bump is `C^{1,1}`: its second derivative jumps at `|t| = 1`.
    Bump {
        base: f64,
        amplitude: f64,
        center: f64,
        radius: f64,
    },
}

impl Profile {
    pub fn value(&self, x: f64) -> f64 {
        match *self {
            Profile::Constant(c) => c,
            Profile::Bump {
                base,
                amplitude,
                center,
                radius,
            } => {
                let t = (x - center) / radius;
                if t.abs() < 1.0 {
                    let s = 1.0 - t * t;
                    base + amplitude * s * s
                } else {
                    base
                }
            }
        }
    }

    pub fn slope(&self, x: f64) -> f64 {
        match *self {
            Profile::Constant(_) => 0.0,
            Profile::Bump {
                amplitude,
                center,
                radius,
                ..
            } => {
                let t = (x - center) / radius;
                if t.abs() < 1.0 {
                    -4.0 * amplitude * t * (1.0 - t * t) / radius
                } else {
                    0.0
                }
            }
        }
    }

    /// Breakpoints where the profile stops being smooth.
    pub fn breakpoints(&self) -> Vec<f64> {
        match *self {
            Profile::Constant(_) => Vec::new(),
            Profile::Bump { center, radius, .. } => vec![center - radius, center + radius],
        }
    }
}

/// Subgraph `{(x̄, x_N): x̄ ∈ W, floor < x_N < profile(x̄)}` in the plane.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphDomain {
    /// The interval `W`.
    pub w: (f64, f64),
    pub profile: Profile,
    /// Bottom `a` of the cylinder.
    pub floor: f64,
    /// Top `b` of the cylinder.
    pub ceiling: f64,
    /// Bound `M` on the Lipschitz constant of the profile.
    pub lipschitz_bound: f64,
    /// Clearance `ρ` between floor and profile.
    pub rho: f64,
}

impl GraphDomain {
    pub fn new(
        w: (f64, f64),
        profile: Profile,
        floor: f64,
        ceiling: f64,
        lipschitz_bound: f64,
        rho: f64,
    ) -> Result<Self> {
        let d = GraphDomain {
            w,
            profile,
            floor,
            ceiling,
            lipschitz_bound,
            rho,
        };
        d.validate()?;
        Ok(d)
    }

    fn samples(&self, count: usize) -> impl Iterator<Item = f64> + '_ {
        let (a, b) = self.w;
        (0..=count).map(move |i| a + (b - a) * i as f64 / count as f64)
    }

    pub fn validate(&self) -> Result<()> {
        let (a, b) = self.w;
        if !(b > a) || !(self.rho > 0.0) {
            return Err(CuspError::InvalidDomain(format!(
                "need a nonempty W and ρ > 0, got W = {:?}, ρ = {}",
                self.w, self.rho
            )));
        }
        let xs: Vec<f64> = self.samples(2000).collect();
        for &x in &xs {
            let v = self.profile.value(x);
            if v < self.floor + self.rho || v > self.ceiling {
                return Err(CuspError::InvalidDomain(format!(
                    "profile value {v} at x̄ = {x} outside [a + ρ, b] = [{}, {}]",
                    self.floor + self.rho,
                    self.ceiling
                )));
            }
        }
        for pair in xs.windows(2) {
            let lip = (self.profile.value(pair[1]) - self.profile.value(pair[0])).abs()
                / (pair[1] - pair[0]);
            if lip > self.lipschitz_bound * (1.0 + 1e-9) {
                return Err(CuspError::InvalidDomain(format!(
                    "profile Lipschitz estimate {lip} exceeds M = {}",
                    self.lipschitz_bound
                )));
            }
        }
        Ok(())
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x > self.w.0 && x < self.w.1 && y > self.floor && y < self.profile.value(x)
    }

    pub fn area(&self) -> f64 {
        integrate_interval(self.w, |x| self.profile.value(x) - self.floor, &self.profile.breakpoints())
    }
}

/// `|Ω₁ △ Ω₂| = ∫_W |g₁ - g₂|` for two graph domains over the same `W`.
pub fn symmetric_difference(a: &GraphDomain, b: &GraphDomain) -> Result<f64> {
    if a.w != b.w || a.floor != b.floor {
        return Err(CuspError::InvalidDomain("graph domains over different cylinders".into()));
    }
    let mut breaks = a.profile.breakpoints();
    breaks.extend(b.profile.breakpoints());
    Ok(integrate_interval(
        a.w,
        |x| (a.profile.value(x) - b.profile.value(x)).abs(),
        &breaks,
    ))
}

/// Composite 5-point Gauss-Legendre rule on panels split at the breakpoints.
fn integrate_interval(w: (f64, f64), f: impl Fn(f64) -> f64, breaks: &[f64]) -> f64 {
    const NODES: [f64; 5] = [
        0.0,
        -0.538_469_310_105_683_1,
        0.538_469_310_105_683_1,
        -0.906_179_845_938_664,
        0.906_179_845_938_664,
    ];
    const WEIGHTS: [f64; 5] = [
        0.568_888_888_888_888_9,
        0.478_628_670_499_366_5,
        0.478_628_670_499_366_5,
        0.236_926_885_056_189_1,
        0.236_926_885_056_189_1,
    ];
    let mut cuts: Vec<f64> = vec![w.0, w.1];
    cuts.extend(breaks.iter().copied().filter(|&x| x > w.0 && x < w.1));
    cuts.sort_by(|a, b| a.total_cmp(b));
    let mut total = 0.0;
    for span in cuts.windows(2) {
        let panels = 64;
        let len = (span[1] - span[0]) / panels as f64;
        for p in 0..panels {
            let mid = span[0] + (p as f64 + 0.5) * len;
            for (x, wt) in NODES.iter().zip(WEIGHTS) {
                total += wt * 0.5 * len * f(mid + 0.5 * len * x);
            }
        }
    }
    total
}

/// Vertical stretch carrying `source` onto `target`: identity below
/// `floor + ρ/2`, affine in `x_N` above.
pub fn graph_morph(source: &GraphDomain, target: &GraphDomain) -> Result<GraphMorph> {
    if source.w != target.w || source.floor != target.floor {
        return Err(CuspError::InvalidDomain(
            "graph morph needs a shared W and floor".into(),
        ));
    }
    source.validate()?;
    target.validate()?;
    Ok(GraphMorph::new(source.clone(), target.clone()))
}
