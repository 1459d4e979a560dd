//! `SL(2, R)` elements, Iwasawa `KAN` coordinates and the geometry of the
//! upper half-plane.
//!
//! Conventions: `k_θ = (cos θ, −sin θ; sin θ, cos θ)`,
//! `a_t = diag(e^{t/2}, e^{−t/2})`, `n_u = (1, u; 0, 1)`, and every element
//! factors uniquely as `g = k_θ a_t n_u`.

use std::f64::consts::PI;
use std::ops::Mul;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::SpectralConfig;
use crate::error::{Error, Result};

/// Tolerance on `|det − 1|` accepted by [`GroupElement::new`].
pub const DET_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupElement {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

/// Iwasawa coordinates of `g = k_θ a_t n_u`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Iwasawa {
    pub theta: f64,
    pub t: f64,
    pub u: f64,
}

impl GroupElement {
    /// Checked constructor.
    pub fn new(a: f64, b: f64, c: f64, d: f64) -> Result<Self> {
        let g = Self { a, b, c, d };
        let det = g.det();
        let tol = DET_TOL * (1.0 + a.abs().max(b.abs()).max(c.abs()).max(d.abs())).powi(2);
        if !det.is_finite() || (det - 1.0).abs() > tol {
            return Err(Error::InvalidElement { det, tol });
        }
        Ok(g)
    }

    pub const fn new_unchecked(a: f64, b: f64, c: f64, d: f64) -> Self {
        Self { a, b, c, d }
    }

    pub const fn identity() -> Self {
        Self::new_unchecked(1.0, 0.0, 0.0, 1.0)
    }

    /// `k_θ` of the `KAN` factorization.
    pub fn rotation(theta: f64) -> Self {
        let (s, c) = theta.sin_cos();
        Self::new_unchecked(c, -s, s, c)
    }

    /// The weight rotation `(cos θ, sin θ; −sin θ, cos θ)` under which
    /// weight `2n` functions pick up `e^{2inθ}`.
    pub fn weight_rotation(theta: f64) -> Self {
        Self::rotation(-theta)
    }

    pub fn diagonal(t: f64) -> Self {
        let e = (0.5 * t).exp();
        Self::new_unchecked(e, 0.0, 0.0, 1.0 / e)
    }

    pub fn unipotent(u: f64) -> Self {
        Self::new_unchecked(1.0, u, 0.0, 1.0)
    }

    pub fn lower_unipotent(u: f64) -> Self {
        Self::new_unchecked(1.0, 0.0, u, 1.0)
    }

    /// `exp(ε H)` with `H = diag(1, −1)`.
    pub fn exp_h(eps: f64) -> Self {
        let e = eps.exp();
        Self::new_unchecked(e, 0.0, 0.0, 1.0 / e)
    }

    /// `exp(ε V)` with `V = (0, 1; 1, 0)`.
    pub fn exp_v(eps: f64) -> Self {
        Self::new_unchecked(eps.cosh(), eps.sinh(), eps.sinh(), eps.cosh())
    }

    /// `k_θ a_t n_u`.
    pub fn from_iwasawa(theta: f64, t: f64, u: f64) -> Self {
        Self::rotation(theta) * Self::diagonal(t) * Self::unipotent(u)
    }

    /// `a_t n_u`, the representative of a left-`K` coset.
    pub fn an(t: f64, u: f64) -> Self {
        let e = (0.5 * t).exp();
        Self::new_unchecked(e, e * u, 0.0, 1.0 / e)
    }

    /// `n_x a_{log y}`, the element carrying `i` to `x + iy` with no rotation.
    pub fn from_point(z: Complex64) -> Self {
        let sy = z.im.sqrt();
        Self::new_unchecked(sy, z.re / sy, 0.0, 1.0 / sy)
    }

    pub fn det(&self) -> f64 {
        self.a * self.d - self.b * self.c
    }

    pub fn inverse(&self) -> Self {
        Self::new_unchecked(self.d, -self.b, -self.c, self.a)
    }

    /// Möbius action on the upper half-plane.
    pub fn act(&self, z: Complex64) -> Complex64 {
        (z * self.a + self.b) / (z * self.c + self.d)
    }

    /// Image of the base point `i`.
    pub fn base_point(&self) -> Complex64 {
        self.act(Complex64::i())
    }

    pub fn iwasawa(&self) -> Result<Iwasawa> {
        let det = self.det();
        let tol = DET_TOL * (1.0 + self.max_abs()).powi(2);
        if !det.is_finite() || (det - 1.0).abs() > tol {
            return Err(Error::InvalidElement { det, tol });
        }
        Ok(self.iwasawa_unchecked())
    }

    /// Iwasawa coordinates without the determinant check.
    #[inline]
    pub fn iwasawa_unchecked(&self) -> Iwasawa {
        let rho2 = self.a * self.a + self.c * self.c;
        let theta = self.c.atan2(self.a);
        Iwasawa {
            theta,
            t: rho2.ln(),
            u: (self.a * self.b + self.c * self.d) / rho2,
        }
    }

    /// The horocycle bracket `φ(g) = log(a² + c²)`.
    #[inline]
    pub fn phi(&self) -> f64 {
        (self.a * self.a + self.c * self.c).ln()
    }

    fn max_abs(&self) -> f64 {
        self.a.abs().max(self.b.abs()).max(self.c.abs()).max(self.d.abs())
    }
}

impl Mul for GroupElement {
    type Output = GroupElement;

    fn mul(self, o: GroupElement) -> GroupElement {
        GroupElement::new_unchecked(
            self.a * o.a + self.b * o.c,
            self.a * o.b + self.b * o.d,
            self.c * o.a + self.d * o.c,
            self.c * o.b + self.d * o.d,
        )
    }
}

pub fn iwasawa(g: &GroupElement) -> Result<Iwasawa> {
    g.iwasawa()
}

pub fn horocycle_phi(g: &GroupElement) -> f64 {
    g.phi()
}

/// `φ(a_t n_u k_θ)` in closed form.
#[inline]
pub fn phi_an_rotated(t: f64, u: f64, theta: f64) -> f64 {
    let (s, c) = theta.sin_cos();
    let et = t.exp();
    let p = c + u * s;
    (et * p * p + s * s / et).ln()
}

/// `d/dθ φ(g k_θ)` for `g = k_α a_t n_u`, with the exact denominator.
pub fn phi_theta_derivative(g: &GroupElement, theta: f64) -> Result<f64> {
    let iw = g.iwasawa()?;
    phi_theta_derivative_an(iw.t, iw.u, theta)
}

/// Same as [`phi_theta_derivative`] with `g = a_t n_u` given by coordinates.
#[inline]
pub fn phi_theta_derivative_an(t: f64, u: f64, theta: f64) -> Result<f64> {
    let (s, c) = theta.sin_cos();
    let (s2, c2) = (2.0 * theta).sin_cos();
    let et = t.exp();
    let num = (-2.0 * t.sinh() + et * u * u) * s2 + 2.0 * u * et * c2;
    let den = et * c * c + u * et * s2 + et * u * u * s * s + s * s / et;
    if den.abs() < 1e-14 {
        return Err(Error::SingularConfiguration { denominator: den, t, u, theta });
    }
    Ok(num / den)
}

/// Distance data between two points of the upper half-plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Distance {
    pub d: f64,
    /// `2 sinh²(d/2) = cosh d − 1`.
    pub t: f64,
}

pub fn hyperbolic_distance(z: Complex64, w: Complex64) -> Result<Distance> {
    if !(z.im > 0.0 && w.im > 0.0) {
        return Err(Error::Domain(format!(
            "points must lie in the upper half-plane, got Im z = {}, Im w = {}",
            z.im, w.im
        )));
    }
    let t = (z - w).norm_sqr() / (2.0 * z.im * w.im);
    Ok(Distance { d: 2.0 * (0.5 * t).sqrt().asinh(), t })
}

/// `cosh d(a_t n_u · i, i) − 1`.
#[inline]
pub fn an_cosh_minus_one(t: f64, u: f64) -> f64 {
    let et = t.exp();
    let em = t.exp_m1();
    (et * et * u * u + em * em) / (2.0 * et)
}

/// Largest `|u|` with `a_t n_u · i` inside the ball of radius `tau`, or
/// `None` when the whole slice misses the ball.
pub fn ball_u_extent(tau: f64, t: f64) -> Option<f64> {
    let et = t.exp();
    let em = t.exp_m1();
    let num = 2.0 * et * (tau.cosh() - 1.0) - em * em;
    if num < 0.0 {
        None
    } else {
        Some(num.sqrt() / et)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RegionKind {
    /// Unit cotangent vectors over the ball `B(0, τ)`.
    BallCotangent,
    /// The radial tube `{K A n_u : |u| ≤ u_cut} ∩ B(0, τ)K`.
    RadialTube,
    /// Ball minus tube.
    Complement,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub kind: RegionKind,
    pub tau: f64,
    pub u_cut: f64,
}

impl Region {
    pub fn from_config(kind: RegionKind, cfg: &SpectralConfig) -> Self {
        Self { kind, tau: cfg.tau, u_cut: cfg.u_cut() }
    }

    /// Membership from `(t, u)`; left-`K` invariant by construction.
    pub fn contains_an(&self, t: f64, u: f64) -> bool {
        let in_ball = an_cosh_minus_one(t, u) <= self.tau.cosh() - 1.0;
        match self.kind {
            RegionKind::BallCotangent => in_ball,
            RegionKind::RadialTube => in_ball && u.abs() <= self.u_cut,
            RegionKind::Complement => in_ball && u.abs() > self.u_cut,
        }
    }

    pub fn contains(&self, g: &GroupElement) -> bool {
        let iw = g.iwasawa_unchecked();
        self.contains_an(iw.t, iw.u)
    }
}

pub fn region_contains(reg: &Region, g: &GroupElement) -> bool {
    reg.contains(g)
}

/// Density of the Haar measure `dg = (1/2π) dθ · e^t dt du`.
#[inline]
pub fn haar_weight(t: f64, _u: f64) -> f64 {
    t.exp()
}

/// One row of the phase-derivative scan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseScanRow {
    pub n: f64,
    /// `min sign(u) φ'(θ) / |u|` over the scanned region.
    pub kappa0: f64,
    pub worst_t: f64,
    pub worst_u: f64,
    pub worst_theta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseScan {
    pub tau: f64,
    pub u_floor: f64,
    pub rows: Vec<PhaseScanRow>,
    /// Smallest scanned `N` whose `kappa0` reaches the target.
    pub n_min: Option<f64>,
    pub target: f64,
}

/// Scan `φ'` over `g = a_t n_u ∈ B(0, τ)K` with `u_floor ≤ |u|`, for every
/// `|θ| ≤ |u| N^{−1/4}`.
///
/// `u_floor` plays the role of the tube radius; taking it small probes the
/// bound uniformly in the spectral parameter.
pub fn phase_lemma_scan(tau: f64, u_floor: f64, ns: &[f64], target: f64, resolution: usize) -> PhaseScan {
    let nt = resolution.max(8);
    let nu = 2 * resolution.max(8);
    let nth = 41;
    let rows: Vec<PhaseScanRow> = ns
        .par_iter()
        .map(|&n| {
            let mut worst = PhaseScanRow {
                n,
                kappa0: f64::INFINITY,
                worst_t: f64::NAN,
                worst_u: f64::NAN,
                worst_theta: f64::NAN,
            };
            let width = n.powf(-0.25);
            for i in 0..=nt {
                let t = -tau + 2.0 * tau * i as f64 / nt as f64;
                let Some(umax) = ball_u_extent(tau, t) else { continue };
                if umax < u_floor {
                    continue;
                }
                for j in 0..=nu {
                    // geometric spacing resolves the small-|u| end
                    let ua = u_floor * (umax / u_floor).powf(j as f64 / nu as f64);
                    for u in [ua, -ua] {
                        for k in 0..nth {
                            let f = -1.0 + 2.0 * k as f64 / (nth - 1) as f64;
                            let theta = f * ua * width;
                            let Ok(dp) = phi_theta_derivative_an(t, u, theta) else { continue };
                            let ratio = dp * u.signum() / ua;
                            if ratio < worst.kappa0 {
                                worst.kappa0 = ratio;
                                worst.worst_t = t;
                                worst.worst_u = u;
                                worst.worst_theta = theta;
                            }
                        }
                    }
                }
            }
            worst
        })
        .collect();
    let n_min = rows.iter().find(|row| row.kappa0 >= target).map(|row| row.n);
    PhaseScan { tau, u_floor, rows, n_min, target }
}

/// A `(θ, t, u)` tensor grid with Haar weights, for quadrature on `G`.
#[derive(Debug, Clone)]
pub struct GroupGrid {
    pub thetas: Vec<f64>,
    pub ts: Vec<f64>,
    pub t_weights: Vec<f64>,
    pub us: Vec<f64>,
    pub u_weights: Vec<f64>,
}

impl GroupGrid {
    /// Gauss–Legendre in `t` and `u`, trapezoid in `θ`.
    pub fn new(t_range: (f64, f64), u_range: (f64, f64), nt: usize, nu: usize, ntheta: usize) -> Self {
        let (ts, t_weights) = crate::quad::NodeSet::uniform(t_range.0, t_range.1, nt.div_ceil(16), 16).into_parts();
        let (us, u_weights) = crate::quad::NodeSet::uniform(u_range.0, u_range.1, nu.div_ceil(16), 16).into_parts();
        let thetas = (0..ntheta).map(|k| 2.0 * PI * k as f64 / ntheta as f64).collect();
        Self { thetas, ts, t_weights, us, u_weights }
    }

    /// `∫ f dg` with `dg = (1/2π) dθ e^t dt du`.
    pub fn integrate<F: Fn(&GroupElement) -> f64 + Sync>(&self, f: F) -> f64 {
        let per_theta: Vec<f64> = self
            .thetas
            .par_iter()
            .map(|&th| {
                let k = GroupElement::rotation(th);
                let mut acc = Vec::with_capacity(self.ts.len());
                for (t, wt) in self.ts.iter().zip(&self.t_weights) {
                    let inner: Vec<f64> = self
                        .us
                        .iter()
                        .zip(&self.u_weights)
                        .map(|(u, wu)| wu * f(&(k * GroupElement::an(*t, *u))))
                        .collect();
                    acc.push(wt * haar_weight(*t, 0.0) * crate::quad::pairwise_sum(&inner));
                }
                crate::quad::pairwise_sum(&acc)
            })
            .collect();
        crate::quad::pairwise_sum(&per_theta) / self.thetas.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn iwasawa_examples() {
        let id = GroupElement::identity().iwasawa().unwrap();
        assert_eq!((id.theta, id.t, id.u), (0.0, 0.0, 0.0));
        let e = std::f64::consts::E;
        let iw = GroupElement::new(e, 0.0, 0.0, 1.0 / e).unwrap().iwasawa().unwrap();
        assert!(iw.theta.abs() < 1e-15 && (iw.t - 2.0).abs() < 1e-15 && iw.u.abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_determinant() {
        assert!(matches!(
            GroupElement::new(1.0, 1.0, 0.0, 1.1),
            Err(Error::InvalidElement { .. })
        ));
        let g = GroupElement::new_unchecked(2.0, 0.0, 0.0, 2.0);
        assert!(g.iwasawa().is_err());
    }

    #[test]
    fn iwasawa_recomposition() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let a: f64 = rng.gen_range(-3.0..3.0);
            let b: f64 = rng.gen_range(-3.0..3.0);
            let c: f64 = rng.gen_range(-3.0..3.0);
            if a.abs() < 0.1 {
                continue;
            }
            let g = GroupElement::new(a, b, c, (1.0 + b * c) / a).unwrap();
            let iw = g.iwasawa().unwrap();
            assert!(iw.theta > -PI && iw.theta <= PI);
            let h = GroupElement::from_iwasawa(iw.theta, iw.t, iw.u);
            for (x, y) in [(g.a, h.a), (g.b, h.b), (g.c, h.c), (g.d, h.d)] {
                assert!((x - y).abs() <= 1e-10 * (1.0 + x.abs()), "{g:?} vs {h:?}");
            }
        }
    }

    #[test]
    fn phi_examples() {
        for th in [0.0, 0.4, -2.0, 3.0] {
            assert!(GroupElement::rotation(th).phi().abs() < 1e-15);
        }
        let g = GroupElement::an(0.7, -1.3);
        assert!((g.phi() - 0.7).abs() < 1e-15);
        let l = GroupElement::lower_unipotent(0.6);
        assert!((l.phi() - (1.0f64 + 0.36).ln()).abs() < 1e-15);
    }

    #[test]
    fn derivative_matches_finite_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let tau = 0.5;
        for _ in 0..100 {
            let t = rng.gen_range(-tau..tau);
            let u = rng.gen_range(-1.0..1.0);
            let th = rng.gen_range(-0.3..0.3);
            let g = GroupElement::an(t, u);
            let f = |x: f64| (g * GroupElement::rotation(x)).phi();
            let h = 1e-4;
            // fourth-order central difference
            let fd = (-f(th + 2.0 * h) + 8.0 * f(th + h) - 8.0 * f(th - h) + f(th - 2.0 * h)) / (12.0 * h);
            let exact = phi_theta_derivative(&g, th).unwrap();
            assert!((fd - exact).abs() <= 1e-6 * exact.abs().max(1e-3), "t={t} u={u} th={th}: {fd} vs {exact}");
        }
    }

    #[test]
    fn derivative_at_zero_is_two_u() {
        for (t, u) in [(0.3, 0.2), (-0.4, -0.05), (0.0, 0.9)] {
            let d = phi_theta_derivative(&GroupElement::an(t, u), 0.0).unwrap();
            assert!((d - 2.0 * u).abs() < 1e-14);
        }
    }

    #[test]
    fn derivative_lower_bound_example() {
        let (t, u, n) = (0.1, 0.05, 16.0f64);
        let width = u * n.powf(-0.25);
        let min = (0..=2000)
            .map(|k| -width + 2.0 * width * k as f64 / 2000.0)
            .map(|th| phi_theta_derivative_an(t, u, th).unwrap())
            .fold(f64::INFINITY, f64::min);
        assert!(min >= u, "min {min}");
    }

    #[test]
    fn singular_denominator_is_reported() {
        // den vanishes only when both a and c of g k_θ vanish, which needs
        // a degenerate matrix; feed a huge negative t to underflow it.
        let r = phi_theta_derivative_an(-80.0, 0.0, 0.0);
        assert!(matches!(r, Err(Error::SingularConfiguration { .. })));
    }

    #[test]
    fn distance_examples() {
        let i = Complex64::i();
        let d0 = hyperbolic_distance(i, i).unwrap();
        assert_eq!((d0.d, d0.t), (0.0, 0.0));
        let e2 = std::f64::consts::E.powi(2);
        let d = hyperbolic_distance(i, Complex64::new(0.0, e2)).unwrap();
        assert!((d.d - 2.0).abs() < 1e-14);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let z = Complex64::new(rng.gen_range(-2.0..2.0), rng.gen_range(0.1..3.0));
            let w = Complex64::new(rng.gen_range(-2.0..2.0), rng.gen_range(0.1..3.0));
            let d = hyperbolic_distance(z, w).unwrap();
            assert!((d.t - (d.d.cosh() - 1.0)).abs() <= 1e-12 * (1.0 + d.t));
        }
        assert!(matches!(hyperbolic_distance(i, Complex64::new(1.0, 0.0)), Err(Error::Domain(_))));
    }

    #[test]
    fn region_examples() {
        let cfg = SpectralConfig::default();
        let ball = Region::from_config(RegionKind::BallCotangent, &cfg);
        let tube = Region::from_config(RegionKind::RadialTube, &cfg);
        let rest = Region::from_config(RegionKind::Complement, &cfg);
        assert!(tube.contains(&GroupElement::identity()));
        assert!(!ball.contains(&GroupElement::diagonal(2.0 * cfg.tau)));

        let mut cfg16 = cfg.clone();
        cfg16.n = 16.0;
        let u = 2.0 * cfg16.u_cut();
        // the printed example point only exists when 2 u_cut fits in the ball
        let ball16 = Region::from_config(RegionKind::BallCotangent, &cfg16);
        let tube16 = Region::from_config(RegionKind::RadialTube, &cfg16);
        let g = GroupElement::unipotent(u);
        let dist = hyperbolic_distance(g.base_point(), Complex64::i()).unwrap().d;
        assert_eq!(ball16.contains(&g), dist <= cfg16.tau);
        assert!(!tube16.contains(&g));

        let mut cfg_small = cfg.clone();
        cfg_small.n = 0.25;
        let u = 2.0 * cfg_small.u_cut();
        let g = GroupElement::unipotent(u);
        assert!(Region::from_config(RegionKind::BallCotangent, &cfg_small).contains(&g));
        assert!(!Region::from_config(RegionKind::RadialTube, &cfg_small).contains(&g));
        assert!(Region::from_config(RegionKind::Complement, &cfg_small).contains(&g));
        let _ = rest;
    }

    #[test]
    fn ball_extent_matches_membership() {
        let tau = 0.5;
        let ball = Region { kind: RegionKind::BallCotangent, tau, u_cut: 0.0 };
        for k in 0..41 {
            let t = -0.6 + 1.2 * k as f64 / 40.0;
            match ball_u_extent(tau, t) {
                Some(u) => {
                    assert!(ball.contains_an(t, u * (1.0 - 1e-9)));
                    assert!(!ball.contains_an(t, u * (1.0 + 1e-6) + 1e-12));
                }
                None => assert!(!ball.contains_an(t, 0.0)),
            }
        }
        let top = ball_u_extent(tau, -(tau.cosh()).ln()).unwrap();
        assert!((top - tau.sinh()).abs() < 1e-12);
    }

    #[test]
    fn haar_weight_examples() {
        assert_eq!(haar_weight(0.0, 3.0), 1.0);
        assert!((haar_weight(1.0, 0.0) - std::f64::consts::E).abs() < 1e-15);
    }

    #[test]
    fn haar_measure_is_left_invariant() {
        // smooth bump in the projected point, times a K-dependence
        let f = |g: &GroupElement| {
            let z = g.base_point();
            let d = hyperbolic_distance(z, Complex64::new(0.3, 1.2)).unwrap().t;
            let iw = g.iwasawa_unchecked();
            (-(d * d) * 2.0).exp() * (1.0 + 0.5 * (2.0 * iw.theta).cos())
        };
        let grid = GroupGrid::new((-5.0, 5.0), (-12.0, 12.0), 160, 480, 64);
        let base = grid.integrate(f);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..3 {
            let g0 = GroupElement::from_iwasawa(rng.gen_range(-PI..PI), rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5));
            let moved = grid.integrate(|g| f(&(g0 * *g)));
            assert!((moved - base).abs() <= 1e-3 * base, "{moved} vs {base}");
        }
    }

    #[test]
    fn phase_scan_is_monotone_in_n() {
        let scan = phase_lemma_scan(0.5, 1e-3, &[1.0, 4.0, 16.0, 64.0], 0.5, 200);
        for w in scan.rows.windows(2) {
            assert!(w[1].kappa0 >= w[0].kappa0 - 1e-12);
        }
        // infimum: |u| → 0 at the ball's edge t = −τ, where φ'/u → 2 − 4 sinh(τ) e^{τ} N^{−1/4}
        let tau: f64 = 0.5;
        let predicted = 2.0 - 4.0 * tau.sinh() * tau.exp() * 16f64.powf(-0.25);
        let row = scan.rows[2];
        assert!(row.kappa0 >= predicted - 1e-9 && row.kappa0 <= predicted + 0.03, "{} vs {predicted}", row.kappa0);
    }

    proptest! {
        #[test]
        fn phi_left_k_invariant(alpha in -PI..PI, th in -PI..PI, t in -3.0..3.0f64, u in -3.0..3.0f64) {
            let g = GroupElement::from_iwasawa(th, t, u);
            let moved = GroupElement::rotation(alpha) * g;
            prop_assert!((moved.phi() - g.phi()).abs() <= 1e-12 * (1.0 + g.phi().abs()));
        }

        #[test]
        fn phi_right_n_invariant(v in -5.0..5.0f64, th in -PI..PI, t in -3.0..3.0f64, u in -3.0..3.0f64) {
            let g = GroupElement::from_iwasawa(th, t, u);
            let moved = g * GroupElement::unipotent(v);
            prop_assert!((moved.phi() - g.phi()).abs() <= 1e-12 * (1.0 + g.phi().abs()));
        }

        #[test]
        fn composition_keeps_unit_determinant(a in -PI..PI, b in -2.0..2.0f64, c in -2.0..2.0f64,
                                              d in -PI..PI, e in -2.0..2.0f64, f in -2.0..2.0f64) {
            let g = GroupElement::from_iwasawa(a, b, c) * GroupElement::from_iwasawa(d, e, f);
            prop_assert!((g.det() - 1.0).abs() <= 1e-12 * (1.0 + g.max_abs()).powi(2));
        }

        #[test]
        fn closed_form_phi_matches_matrix(t in -1.0..1.0f64, u in -1.0..1.0f64, th in -PI..PI) {
            let g = GroupElement::an(t, u) * GroupElement::rotation(th);
            prop_assert!((phi_an_rotated(t, u, th) - g.phi()).abs() < 1e-12);
        }
    }
}
