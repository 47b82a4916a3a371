//! Transformations of the reference domain and the fields they induce.
//!
//! A [`Transformation`] carries its analytic Jacobian. Pulling back an
//! operator with coefficients `A` through `φ` yields the weight
//! `g = |det ∇φ|` and the coefficient matrix `a = (∇φ)⁻¹ A(φ) (∇φ)⁻ᵀ`
//! ([`PullbackFields`]). Comparing two pull-backs on the same reference domain
//! uses `w = (g/g̃)^{1/2}` and `S = w⁻² a^{-1/2} ã a^{-1/2}` ([`PairFields`]).

use std::fmt;
use std::sync::Arc;

use nalgebra::SymmetricEigen;

use crate::geometry::{cap_profile, CuspGeometry, EpsLevel, GraphDomain, DEFAULT_PROFILE_TOL};
use crate::{CuspError, Matrix, Point, Result, Vector};

/// Points closer than this to a branch interface are rejected by Jacobians.
const INTERFACE_TOL: f64 = 1e-14;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DomainHint {
    /// Defined on the whole plane.
    Plane,
    /// Defined on the reference domain `Ω_{ε₀}` of a cusp family.
    CuspReference,
    /// Defined on the cylinder of a graph domain.
    GraphCylinder,
}

pub trait Transformation: Send + Sync + fmt::Debug {
    fn map(&self, p: &Point) -> Result<Point>;

    fn jacobian(&self, p: &Point) -> Result<Matrix>;

    /// Preimage of `y`, or `None` when `y` is outside the image.
    fn inverse(&self, y: &Point) -> Result<Option<Point>>;

    fn domain_hint(&self) -> DomainHint;
}

/// `p ↦ L p + b`; covers the identity, dilations and translations.
#[derive(Clone, Debug, PartialEq)]
pub struct Affine {
    pub linear: Matrix,
    pub offset: Vector,
}

impl Affine {
    pub fn identity() -> Self {
        Affine {
            linear: Matrix::identity(),
            offset: Vector::zeros(),
        }
    }

    /// Uniform dilation about the origin.
    pub fn dilation(factor: f64) -> Self {
        Affine {
            linear: Matrix::identity() * factor,
            offset: Vector::zeros(),
        }
    }

    pub fn translation(v: Vector) -> Self {
        Affine {
            linear: Matrix::identity(),
            offset: v,
        }
    }
}

impl Transformation for Affine {
    fn map(&self, p: &Point) -> Result<Point> {
        Ok(Point::from(self.linear * p.coords + self.offset))
    }

    fn jacobian(&self, _p: &Point) -> Result<Matrix> {
        Ok(self.linear)
    }

    fn inverse(&self, y: &Point) -> Result<Option<Point>> {
        let inv = self
            .linear
            .try_inverse()
            .ok_or(CuspError::Singular(y.x, y.y))?;
        Ok(Some(Point::from(inv * (y.coords - self.offset))))
    }

    fn domain_hint(&self) -> DomainHint {
        DomainHint::Plane
    }
}

/// The map `φ_ε : Ω_{ε₀} → Ω_ε`.
///
/// It is the identity on `Ω̂_ε` and, above the cap profile `x_N = h_ε(x̄)`,
/// stretches vertically by
/// `x_N ↦ -1 + 2ε₀ + 2x_N - [u² J² + max{|x̄|², ε^{2/α}}]^{α/2}` with
/// `u = 1 - ε₀ - h_ε(x̄)` and `J = 1 - ε₀ - x_N`. The reference cut
/// `x_N = 1 - ε₀` goes to `x_N = 1 - max{|x̄|^α, ε}`.
#[derive(Clone, Debug, PartialEq)]
pub struct PhiEps {
    pub geo: CuspGeometry,
    pub level: EpsLevel,
}

/// Branch data of `φ_ε` at one point.
enum Branch {
    Identity,
    Stretch {
        depth: f64,
        slope: f64,
        m: f64,
        on_plateau: bool,
    },
}

impl PhiEps {
    pub fn new(geo: CuspGeometry, level: EpsLevel) -> Self {
        PhiEps { geo, level }
    }

    /// Only the cap is checked: outside it the map is the identity, which
    /// also covers polygonal chords cutting slightly across the top curve.
    fn check_domain(&self, p: &Point) -> Result<()> {
        let in_cap = p.x.abs() < self.geo.cap_radius() && p.y.abs() < 1.0;
        if in_cap && p.y > self.geo.top(p.x.abs(), self.geo.eps0) + 1e-12 {
            return Err(CuspError::OutOfDomain(p.x, p.y));
        }
        Ok(())
    }

    fn branch(&self, p: &Point) -> Result<Branch> {
        let r = p.x.abs();
        if r >= self.geo.cap_radius() || p.y.abs() >= 1.0 {
            return Ok(Branch::Identity);
        }
        let prof = cap_profile(r, self.level, &self.geo, DEFAULT_PROFILE_TOL)?;
        if p.y <= prof.h {
            return Ok(Branch::Identity);
        }
        let eps = self.level.eps();
        Ok(Branch::Stretch {
            depth: prof.depth,
            slope: prof.slope,
            m: prof.m,
            on_plateau: r * r <= eps.powf(2.0 / self.geo.alpha),
        })
    }

    fn stretch(&self, y: f64, depth: f64, m: f64) -> f64 {
        let eps0 = self.geo.eps0;
        let j = 1.0 - eps0 - y;
        -1.0 + 2.0 * eps0 + 2.0 * y - (depth * depth * j * j + m).powf(self.geo.alpha / 2.0)
    }

    /// The vertical stretch factor `∂φ_N/∂x_N`, which is also `det ∇φ_ε`.
    pub fn det(&self, p: &Point) -> Result<f64> {
        self.jacobian(p).map(|j| j.determinant())
    }
}

impl Transformation for PhiEps {
    fn map(&self, p: &Point) -> Result<Point> {
        self.check_domain(p)?;
        match self.branch(p)? {
            Branch::Identity => Ok(*p),
            Branch::Stretch { depth, m, .. } => Ok(Point::new(p.x, self.stretch(p.y, depth, m))),
        }
    }

    fn jacobian(&self, p: &Point) -> Result<Matrix> {
        self.check_domain(p)?;
        let r = p.x.abs();
        let radius = self.geo.cap_radius();
        if r < radius && p.y.abs() < 1.0 {
            let h = cap_profile(r, self.level, &self.geo, DEFAULT_PROFILE_TOL)?.h;
            if (p.y - h).abs() <= INTERFACE_TOL {
                return Err(CuspError::Interface(p.x, p.y));
            }
        }
        match self.branch(p)? {
            Branch::Identity => Ok(Matrix::identity()),
            Branch::Stretch {
                depth,
                slope,
                m,
                on_plateau,
                ..
            } => {
                let eps = self.level.eps();
                let alpha = self.geo.alpha;
                if eps > 0.0 && (r - eps.powf(1.0 / alpha)).abs() <= INTERFACE_TOL {
                    return Err(CuspError::Interface(p.x, p.y));
                }
                let j = 1.0 - self.geo.eps0 - p.y;
                let b = depth * depth * j * j + m;
                let pw = b.powf(alpha / 2.0 - 1.0);
                let d_dy = 2.0 + alpha * j * depth * depth * pw;
                let sign = if p.x < 0.0 { -1.0 } else { 1.0 };
                // u = 1 - ε₀ - h, so ∂u/∂x = -∂h/∂x.
                let du_dx = -slope * sign;
                let dm_dx = if on_plateau { 0.0 } else { 2.0 * p.x };
                let d_dx = -0.5 * alpha * pw * (2.0 * depth * j * j * du_dx + dm_dx);
                if !(d_dy.is_finite() && d_dx.is_finite()) {
                    return Err(CuspError::Singular(p.x, p.y));
                }
                Ok(Matrix::new(1.0, 0.0, d_dx, d_dy))
            }
        }
    }

    fn inverse(&self, y: &Point) -> Result<Option<Point>> {
        let r = y.x.abs();
        let in_box = r < 1.0 && y.y.abs() < 1.0;
        if in_box && r < self.geo.cap_radius() && y.y > self.geo.top(r, self.level.eps()) + 1e-12 {
            return Ok(None);
        }
        if r >= self.geo.cap_radius() || !in_box {
            return Ok(Some(*y));
        }
        let prof = cap_profile(r, self.level, &self.geo, DEFAULT_PROFILE_TOL)?;
        if y.y <= prof.h {
            return Ok(Some(*y));
        }
        // φ_N is strictly increasing in x_N on [h, 1 - ε₀].
        let (mut lo, mut hi) = (prof.h, 1.0 - self.geo.eps0);
        if self.stretch(hi, prof.depth, prof.m) <= y.y {
            return Ok(Some(Point::new(y.x, hi)));
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.stretch(mid, prof.depth, prof.m) <= y.y {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(Some(Point::new(y.x, 0.5 * (lo + hi))))
    }

    fn domain_hint(&self) -> DomainHint {
        DomainHint::CuspReference
    }
}

/// Vertical stretch between two graph domains over the same cylinder; see
/// [`crate::geometry::graph_morph`].
#[derive(Clone, Debug, PartialEq)]
pub struct GraphMorph {
    pub source: GraphDomain,
    pub target: GraphDomain,
    /// Height below which the map is the identity, `floor + ρ/2`.
    pub blend: f64,
}

impl GraphMorph {
    pub(crate) fn new(source: GraphDomain, target: GraphDomain) -> Self {
        let blend = source.floor + 0.5 * source.rho.min(target.rho);
        GraphMorph {
            source,
            target,
            blend,
        }
    }

    fn inside_w(&self, x: f64) -> bool {
        x >= self.source.w.0 && x <= self.source.w.1
    }
}

impl Transformation for GraphMorph {
    fn map(&self, p: &Point) -> Result<Point> {
        if p.y <= self.blend || !self.inside_w(p.x) {
            return Ok(*p);
        }
        let c = self.blend;
        let s = self.source.profile.value(p.x);
        let t = self.target.profile.value(p.x);
        Ok(Point::new(p.x, c + (p.y - c) * (t - c) / (s - c)))
    }

    fn jacobian(&self, p: &Point) -> Result<Matrix> {
        if !self.inside_w(p.x) {
            return Ok(Matrix::identity());
        }
        let c = self.blend;
        let s = self.source.profile.value(p.x);
        let t = self.target.profile.value(p.x);
        if (p.y - c).abs() <= INTERFACE_TOL && s != t {
            return Err(CuspError::Interface(p.x, p.y));
        }
        if p.y < c {
            return Ok(Matrix::identity());
        }
        let ds = self.source.profile.slope(p.x);
        let dt = self.target.profile.slope(p.x);
        let d_dy = (t - c) / (s - c);
        let d_dx = (p.y - c) * (dt * (s - c) - (t - c) * ds) / ((s - c) * (s - c));
        Ok(Matrix::new(1.0, 0.0, d_dx, d_dy))
    }

    fn inverse(&self, y: &Point) -> Result<Option<Point>> {
        if !self.inside_w(y.x) {
            return Ok(None);
        }
        if y.y <= self.blend {
            return Ok(Some(*y));
        }
        let c = self.blend;
        let s = self.source.profile.value(y.x);
        let t = self.target.profile.value(y.x);
        if y.y > t + 1e-12 {
            return Ok(None);
        }
        Ok(Some(Point::new(y.x, c + (y.y - c) * (s - c) / (t - c))))
    }

    fn domain_hint(&self) -> DomainHint {
        DomainHint::GraphCylinder
    }
}

type CoefficientFn = dyn Fn(&Point) -> Matrix + Send + Sync;

/// Base coefficients `A_ij` of the operator on the physical domain.
#[derive(Clone)]
pub struct CoefficientField {
    eval: CoefficientKind,
    theta: f64,
}

#[derive(Clone)]
enum CoefficientKind {
    Constant(Matrix),
    Function(Arc<CoefficientFn>),
}

impl fmt::Debug for CoefficientField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.eval {
            CoefficientKind::Constant(m) => f
                .debug_struct("CoefficientField")
                .field("constant", m)
                .field("theta", &self.theta)
                .finish(),
            CoefficientKind::Function(_) => f
                .debug_struct("CoefficientField")
                .field("theta", &self.theta)
                .finish_non_exhaustive(),
        }
    }
}

impl CoefficientField {
    /// The Laplacian, `A = I`, `θ = 1`.
    pub fn identity() -> Self {
        CoefficientField {
            eval: CoefficientKind::Constant(Matrix::identity()),
            theta: 1.0,
        }
    }

    /// Constant symmetric positive definite coefficients; θ is the smallest
    /// constant satisfying the ellipticity bounds.
    pub fn constant(a: Matrix) -> Result<Self> {
        check_symmetric(&a)?;
        let eig = SymmetricEigen::new(a).eigenvalues;
        let (lo, hi) = (eig.min(), eig.max());
        if !(lo > 0.0) {
            return Err(CuspError::MatrixDomain(format!("coefficient eigenvalue {lo} ≤ 0")));
        }
        Ok(CoefficientField {
            eval: CoefficientKind::Constant(a),
            theta: hi.max(1.0 / lo),
        })
    }

    pub fn from_fn(f: impl Fn(&Point) -> Matrix + Send + Sync + 'static, theta: f64) -> Self {
        CoefficientField {
            eval: CoefficientKind::Function(Arc::new(f)),
            theta,
        }
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn eval(&self, y: &Point) -> Matrix {
        match &self.eval {
            CoefficientKind::Constant(m) => *m,
            CoefficientKind::Function(f) => f(y),
        }
    }

    /// Checks `θ⁻¹|ξ|² ≤ ξ·A(x)ξ ≤ θ|ξ|²` at the given samples.
    pub fn check_ellipticity(&self, samples: &[(Point, Vector)]) -> Result<()> {
        for (x, xi) in samples {
            let q = xi.dot(&(self.eval(x) * xi));
            let n2 = xi.norm_squared();
            if q < n2 / self.theta * (1.0 - 1e-12) || q > self.theta * n2 * (1.0 + 1e-12) {
                return Err(CuspError::MatrixDomain(format!(
                    "ellipticity with θ = {} fails at ({}, {})",
                    self.theta, x.x, x.y
                )));
            }
        }
        Ok(())
    }
}

/// Weight and coefficients of a pulled-back operator at one point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PointFields {
    pub g: f64,
    pub a: Matrix,
    pub jacobian: Matrix,
}

/// `g = |det ∇φ|` and `a = (∇φ)⁻¹ A(φ) (∇φ)⁻ᵀ`, evaluated lazily.
#[derive(Clone, Debug)]
pub struct PullbackFields {
    pub transformation: Arc<dyn Transformation>,
    pub coefficients: CoefficientField,
}

pub fn pullback(t: Arc<dyn Transformation>, c: CoefficientField) -> PullbackFields {
    PullbackFields {
        transformation: t,
        coefficients: c,
    }
}

impl PullbackFields {
    pub fn eval(&self, p: &Point) -> Result<PointFields> {
        let jac = self.transformation.jacobian(p)?;
        let det = jac.determinant();
        if !(det.is_finite() && det.abs() > f64::MIN_POSITIVE) {
            return Err(CuspError::Singular(p.x, p.y));
        }
        let inv = jac.try_inverse().ok_or(CuspError::Singular(p.x, p.y))?;
        let y = self.transformation.map(p)?;
        let big_a = self.coefficients.eval(&y);
        let a = inv * big_a * inv.transpose();
        Ok(PointFields {
            g: det.abs(),
            a: symmetrize(&a),
            jacobian: jac,
        })
    }
}

/// Comparison fields `w` and `S` of two pull-backs.
#[derive(Clone, Debug)]
pub struct PairFields {
    pub base: PullbackFields,
    pub other: PullbackFields,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairPoint {
    pub w: f64,
    pub s: Matrix,
    pub base: PointFields,
    pub other: PointFields,
}

pub fn pair_fields(f: &PullbackFields, f_other: &PullbackFields) -> PairFields {
    PairFields {
        base: f.clone(),
        other: f_other.clone(),
    }
}

impl PairFields {
    pub fn eval(&self, p: &Point) -> Result<PairPoint> {
        let base = self.base.eval(p)?;
        let other = self.other.eval(p)?;
        let w = (base.g / other.g).sqrt();
        let s = if other.a == base.a {
            Matrix::identity() / (w * w)
        } else {
            let a_inv_half = spd_inv_sqrt(&base.a)?;
            a_inv_half * other.a * a_inv_half / (w * w)
        };
        Ok(PairPoint {
            w,
            s: symmetrize(&s),
            base,
            other,
        })
    }
}

fn symmetrize(m: &Matrix) -> Matrix {
    (m + m.transpose()) * 0.5
}

fn check_symmetric(m: &Matrix) -> Result<()> {
    let scale = m.amax().max(1.0);
    let asym = (m - m.transpose()).amax();
    if !(asym <= 1e-12 * scale) {
        return Err(CuspError::MatrixDomain(format!("asymmetry {asym:e}")));
    }
    Ok(())
}

fn spd_power(m: &Matrix, power: f64) -> Result<Matrix> {
    check_symmetric(m)?;
    if m[(0, 1)] == 0.0 && m[(1, 0)] == 0.0 {
        // diagonal input: exact, and keeps the identity fixed bitwise
        let d = m.diagonal();
        if !(d.min() > 0.0) {
            return Err(CuspError::MatrixDomain(format!("smallest eigenvalue {:e} ≤ 0", d.min())));
        }
        return Ok(Matrix::from_diagonal(&d.map(|l| l.powf(power))));
    }
    let eig = SymmetricEigen::new(symmetrize(m));
    let lo = eig.eigenvalues.min();
    if !(lo > 0.0) {
        return Err(CuspError::MatrixDomain(format!("smallest eigenvalue {lo:e} ≤ 0")));
    }
    let d = Matrix::from_diagonal(&eig.eigenvalues.map(|l| l.powf(power)));
    Ok(symmetrize(&(eig.eigenvectors * d * eig.eigenvectors.transpose())))
}

/// Principal square root of a symmetric positive definite matrix.
pub fn spd_sqrt(m: &Matrix) -> Result<Matrix> {
    spd_power(m, 0.5)
}

/// Inverse of the principal square root.
pub fn spd_inv_sqrt(m: &Matrix) -> Result<Matrix> {
    spd_power(m, -0.5)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{h_eps, Profile};
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn geo() -> CuspGeometry {
        CuspGeometry::new(0.9, 0.2).unwrap()
    }

    fn phi(eps: f64) -> PhiEps {
        let g = geo();
        let lvl = g.level(eps).unwrap();
        PhiEps::new(g, lvl)
    }

    /// Uniform sample of the reference domain inside the box, away from the
    /// branch interfaces.
    fn sample_reference(rng: &mut ChaCha8Rng, g: &CuspGeometry) -> Point {
        loop {
            let x: f64 = rng.random_range(-0.25..0.25);
            let y: f64 = rng.random_range(0.4..0.8);
            if y < g.top(x.abs(), g.eps0) - 1e-6 {
                return Point::new(x, y);
            }
        }
    }

    #[test]
    fn sqrt_examples() {
        assert_eq!(spd_sqrt(&Matrix::identity()).unwrap(), Matrix::identity());
        let r = spd_sqrt(&Matrix::new(4.0, 0.0, 0.0, 9.0)).unwrap();
        assert!((r - Matrix::new(2.0, 0.0, 0.0, 3.0)).amax() < 1e-15);
        assert!(spd_sqrt(&Matrix::new(1.0, 2.0, 0.0, 1.0)).is_err());
        assert!(spd_sqrt(&Matrix::new(-1.0, 0.0, 0.0, 1.0)).is_err());
    }

    #[test]
    fn sqrt_squares_back_on_random_spd() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let b = Matrix::from_fn(|_, _| rng.random_range(-1.0..1.0));
            let m = b * b.transpose() + Matrix::identity() * 0.1;
            let r = spd_sqrt(&m).unwrap();
            assert!((r * r - m).amax() < 1e-12);
            assert!((r - r.transpose()).amax() == 0.0);
            assert!(SymmetricEigen::new(r).eigenvalues.min() > 0.0);
        }
    }

    #[test]
    fn pullback_of_identity_and_dilation() {
        let p = Point::new(0.3, 0.7);
        let id = pullback(Arc::new(Affine::identity()), CoefficientField::identity());
        let f = id.eval(&p).unwrap();
        assert_eq!(f.g, 1.0);
        assert_eq!(f.a, Matrix::identity());
        let dil = pullback(Arc::new(Affine::dilation(2.0)), CoefficientField::identity());
        let f = dil.eval(&p).unwrap();
        assert_eq!(f.g, 4.0);
        assert!((f.a - Matrix::identity() * 0.25).amax() < 1e-15);
    }

    #[test]
    fn singular_jacobian_is_reported() {
        let collapse = Affine {
            linear: Matrix::new(1.0, 0.0, 0.0, 0.0),
            offset: Vector::zeros(),
        };
        let f = pullback(Arc::new(collapse), CoefficientField::identity());
        assert!(matches!(f.eval(&Point::new(0.1, 0.2)), Err(CuspError::Singular(..))));
    }

    #[test]
    fn pulled_back_cusp_coefficients_are_spd() {
        let g = geo();
        let f = pullback(Arc::new(phi(0.02)), CoefficientField::identity());
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let p = sample_reference(&mut rng, &g);
            let pf = f.eval(&p).unwrap();
            assert_eq!(pf.a, pf.a.transpose());
            assert!(SymmetricEigen::new(pf.a).eigenvalues.min() > 0.0);
            assert!(pf.g > 0.0);
        }
    }

    #[test]
    fn phi_at_reference_cut_is_identity() {
        let g = geo();
        let map = phi(g.eps0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let p = sample_reference(&mut rng, &g);
            assert_eq!(map.map(&p).unwrap(), p);
            assert_eq!(map.jacobian(&p).unwrap(), Matrix::identity());
        }
    }

    #[test]
    fn phi_fixes_hat_region_and_lifts_the_cut() {
        let g = geo();
        let eps = 0.05;
        let map = phi(eps);
        let lvl = g.level(eps).unwrap();
        for x in [0.0, 0.01, 0.05, 0.1, 0.15] {
            let h = h_eps(x, lvl, &g, 1e-12).unwrap();
            let below = Point::new(x, h - 0.01);
            assert_eq!(map.map(&below).unwrap(), below);
            let cut = map.map(&Point::new(x, 0.8)).unwrap();
            let expected = 1.0 - x.powf(0.9).max(eps);
            assert!((cut.y - expected).abs() < 1e-12, "{} vs {expected}", cut.y);
            // both branches agree on the interface
            let at = map.map(&Point::new(x, h)).unwrap().y;
            let above = map.map(&Point::new(x, h + 1e-13)).unwrap().y;
            assert!((at - h).abs() < 1e-10 && (above - h).abs() < 1e-10);
        }
        assert!(matches!(
            map.map(&Point::new(0.0, 0.85)),
            Err(CuspError::OutOfDomain(..))
        ));
    }

    #[test]
    fn phi_jacobian_matches_finite_differences() {
        let g = geo();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for eps in [0.0, 0.01, 0.1] {
            let map = phi(eps);
            for _ in 0..300 {
                let p = sample_reference(&mut rng, &g);
                let jac = map.jacobian(&p).unwrap();
                let d = 1e-6;
                for k in 0..2 {
                    let mut e = Vector::zeros();
                    e[k] = d;
                    let (Ok(fp), Ok(fm)) = (map.map(&(p + e)), map.map(&(p - e))) else {
                        continue;
                    };
                    let col = (fp - fm) / (2.0 * d);
                    let err = (col - jac.column(k)).norm();
                    // stencils straddling a kink are skipped
                    let h = h_eps(p.x.abs(), g.level(eps).unwrap(), &g, 1e-12).unwrap();
                    let near_kink = (p.y - h).abs() < 2.0 * d
                        || (eps > 0.0 && (p.x.abs() - eps.powf(1.0 / 0.9)).abs() < 2.0 * d);
                    if !near_kink {
                        assert!(err <= 1e-6 * jac.column(k).norm().max(1.0), "{p} col {k}: {err}");
                    }
                }
                assert!(jac.determinant() >= 1.0);
            }
        }
    }

    #[test]
    fn jacobian_ratio_bound() {
        let g = geo();
        let bound = 2.0 / crate::geometry::c_alpha(0.9).unwrap().powi(2);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..2000 {
            let e1 = rng.random_range(0.0..0.2);
            let e2 = rng.random_range(0.0..0.2);
            let (eps, eps_p): (f64, f64) = if e1 > e2 { (e1, e2) } else { (e2, e1) };
            let p = sample_reference(&mut rng, &g);
            let d1 = phi(eps).det(&p).unwrap();
            let d2 = phi(eps_p).det(&p).unwrap();
            assert!(d1 / d2 <= bound, "ratio {} at {p}", d1 / d2);
        }
    }

    #[test]
    fn phi_inverse_round_trips() {
        let g = geo();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let map = phi(0.03);
        for _ in 0..500 {
            let p = sample_reference(&mut rng, &g);
            let y = map.map(&p).unwrap();
            let back = map.inverse(&y).unwrap().unwrap();
            assert!((back - p).norm() < 1e-12);
        }
        assert!(map.inverse(&Point::new(0.0, 0.99)).unwrap().is_none());
    }

    #[test]
    fn interface_points_are_rejected() {
        let g = geo();
        let eps = 0.05;
        let h = h_eps(0.0, g.level(eps).unwrap(), &g, 1e-12).unwrap();
        assert!(matches!(
            phi(eps).jacobian(&Point::new(0.0, h)),
            Err(CuspError::Interface(..))
        ));
    }

    #[test]
    fn pair_fields_examples() {
        let p = Point::new(0.2, 0.1);
        let f = pullback(Arc::new(Affine::dilation(1.5)), CoefficientField::identity());
        let same = pair_fields(&f, &f).eval(&p).unwrap();
        assert!((same.w - 1.0).abs() < 1e-15);
        assert!((same.s - Matrix::identity()).amax() < 1e-15);

        // g = 4 g̃ with a = ã = I: constant coefficients 4I compensate a 2x dilation
        let base = pullback(
            Arc::new(Affine::dilation(2.0)),
            CoefficientField::constant(Matrix::identity() * 4.0).unwrap(),
        );
        let other = pullback(Arc::new(Affine::identity()), CoefficientField::identity());
        let pp = pair_fields(&base, &other).eval(&p).unwrap();
        assert!((pp.base.a - Matrix::identity()).amax() < 1e-15);
        assert!((pp.w - 2.0).abs() < 1e-15);
        assert!((pp.s - Matrix::identity() * 0.25).amax() < 1e-15);
    }

    #[test]
    fn pair_fields_symmetric_on_cusp_pair() {
        let g = geo();
        let a = pullback(Arc::new(phi(0.1)), CoefficientField::identity());
        let b = pullback(Arc::new(phi(0.01)), CoefficientField::identity());
        let pair = pair_fields(&a, &b);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..500 {
            let p = sample_reference(&mut rng, &g);
            let pp = pair.eval(&p).unwrap();
            assert!((pp.s - pp.s.transpose()).amax() <= 1e-12);
        }
    }

    #[test]
    fn weight_ratio_cocycle() {
        // w_{ε₀,ε'} = w_{ε,ε'} w_{ε₀,ε}
        let g = geo();
        let f = |e: f64| pullback(Arc::new(phi(e)), CoefficientField::identity());
        let (f0, fe, fp) = (f(g.eps0), f(0.08), f(0.01));
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        for _ in 0..300 {
            let p = sample_reference(&mut rng, &g);
            let w0p = pair_fields(&f0, &fp).eval(&p).unwrap().w;
            let wep = pair_fields(&fe, &fp).eval(&p).unwrap().w;
            let w0e = pair_fields(&f0, &fe).eval(&p).unwrap().w;
            assert!((w0p - wep * w0e).abs() < 1e-13);
        }
    }

    #[test]
    fn phi_maps_reference_top_onto_cut_top() {
        let g = geo();
        for eps in [0.0, 0.02, 0.1] {
            let map = phi(eps);
            for i in 0..=100 {
                let x = -0.5 + i as f64 / 100.0;
                let top = g.top(x.abs(), g.eps0);
                let y = map.map(&Point::new(x, top)).unwrap();
                assert!((y.y - g.top(x.abs(), eps)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn ellipticity_check() {
        let c = CoefficientField::constant(Matrix::new(2.0, 0.0, 0.0, 0.5)).unwrap();
        assert_eq!(c.theta(), 2.0);
        let samples = vec![
            (Point::new(0.0, 0.0), Vector::new(1.0, 0.0)),
            (Point::new(0.5, 0.1), Vector::new(0.3, -2.0)),
        ];
        assert!(c.check_ellipticity(&samples).is_ok());
        let bad = CoefficientField::from_fn(|_| Matrix::identity() * 5.0, 2.0);
        assert!(bad.check_ellipticity(&samples).is_err());
    }

    #[test]
    fn graph_morph_examples() {
        use crate::geometry::graph_morph;
        let unit = GraphDomain::new((0.0, 1.0), Profile::Constant(1.0), 0.0, 2.0, 1.0, 0.5).unwrap();
        let raised = GraphDomain::new((0.0, 1.0), Profile::Constant(1.1), 0.0, 2.0, 1.0, 0.5).unwrap();
        let same = graph_morph(&unit, &unit).unwrap();
        for p in [Point::new(0.3, 0.1), Point::new(0.7, 0.9)] {
            assert_eq!(same.map(&p).unwrap(), p);
            assert_eq!(same.jacobian(&p).unwrap(), Matrix::identity());
        }
        let m = graph_morph(&unit, &raised).unwrap();
        let det_hi = m.jacobian(&Point::new(0.4, 0.6)).unwrap().determinant();
        assert!((det_hi - 0.85 / 0.75).abs() < 1e-15);
        assert_eq!(m.jacobian(&Point::new(0.4, 0.2)).unwrap().determinant(), 1.0);
        assert!((m.map(&Point::new(0.4, 1.0)).unwrap().y - 1.1).abs() < 1e-15);

        let bump = GraphDomain::new(
            (0.0, 1.0),
            Profile::Bump {
                base: 1.0,
                amplitude: 0.02,
                center: 0.5,
                radius: 0.2,
            },
            0.0,
            2.0,
            1.0,
            0.5,
        )
        .unwrap();
        let local = graph_morph(&unit, &bump).unwrap();
        for x in [0.0, 0.1, 0.3, 0.7, 0.95] {
            let p = Point::new(x, 0.8);
            assert_eq!(local.map(&p).unwrap(), p);
        }
        // Jacobian against finite differences inside the patch
        let p = Point::new(0.55, 0.7);
        let jac = local.jacobian(&p).unwrap();
        let d = 1e-6;
        let fx = (local.map(&Point::new(p.x + d, p.y)).unwrap() - local.map(&Point::new(p.x - d, p.y)).unwrap()) / (2.0 * d);
        assert!((fx - jac.column(0)).norm() < 1e-8);
        let y = local.map(&p).unwrap();
        assert!((local.inverse(&y).unwrap().unwrap() - p).norm() < 1e-14);
    }
}
