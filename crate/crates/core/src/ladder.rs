//! Weight spaces for the right action of `K`, the raising and lowering
//! operators `E±`, plane waves and their weight components, and the Fejér
//! lift coefficients.
//!
//! A function has weight `2n` when `F(g · kw_θ) = e^{2inθ} F(g)`, where
//! `kw_θ = (cos θ, sin θ; −sin θ, cos θ)`. The operators are
//! `E± = ½ (H ± i V)` with `H = diag(1, −1)` and `V = (0, 1; 1, 0)` acting
//! as right flows, so that on the components of a plane wave of spectral
//! parameter `s`
//!
//! ```text
//! E⁺ F_{2n} = (is + ½ + n) F_{2n+2},    E⁻ F_{2n} = (is + ½ − n) F_{2n−2}.
//! ```

use std::collections::BTreeMap;
use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::SpectralConfig;
use crate::error::{Error, Result};
use crate::group::GroupElement;
use crate::quad::pairwise_sum_complex;

/// Base step of the central differences.
pub const FD_STEP: f64 = 1e-5;
/// Relative disagreement between step sizes treated as non-smoothness.
pub const FD_GAP_TOL: f64 = 1e-3;

/// `raise(n) = ir + ½ + n`, `lower(n) = ir + ½ − n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LadderCoefficients {
    pub r: f64,
}

impl LadderCoefficients {
    pub fn new(r: f64) -> Self {
        Self { r }
    }

    pub fn raise(&self, n: i64) -> Complex64 {
        Complex64::new(0.5 + n as f64, self.r)
    }

    pub fn lower(&self, n: i64) -> Complex64 {
        Complex64::new(0.5 - n as f64, self.r)
    }

    /// Unit-modulus raising factor of the normalized ladder.
    pub fn normalized_raise(&self, n: i64) -> Complex64 {
        let z = self.raise(n);
        z / z.norm()
    }

    pub fn normalized_lower(&self, n: i64) -> Complex64 {
        let z = self.lower(n);
        z / z.norm()
    }

    /// Eigenvalue of `E⁺E⁻` on weight `2n`: `lower(n) raise(n − 1)`.
    pub fn eigen(&self, n: i64) -> Complex64 {
        self.lower(n) * self.raise(n - 1)
    }
}

/// A complex function on `SL(2, R)`.
pub trait GroupFunction: Sync {
    fn eval(&self, g: &GroupElement) -> Complex64;
}

impl<F> GroupFunction for F
where
    F: Fn(&GroupElement) -> Complex64 + Sync,
{
    fn eval(&self, g: &GroupElement) -> Complex64 {
        self(g)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sign {
    Plus,
    Minus,
}

fn central<F: GroupFunction + ?Sized>(f: &F, g: &GroupElement, flow: fn(f64) -> GroupElement, h: f64) -> Complex64 {
    (f.eval(&(*g * flow(h))) - f.eval(&(*g * flow(-h)))) / (2.0 * h)
}

/// Richardson-extrapolated right-flow derivative at base step `h`.
fn flow_derivative<F: GroupFunction + ?Sized>(f: &F, g: &GroupElement, flow: fn(f64) -> GroupElement, h: f64) -> Complex64 {
    let coarse = central(f, g, flow, h);
    let fine = central(f, g, flow, 0.5 * h);
    (4.0 * fine - coarse) / 3.0
}

fn e_combination<F: GroupFunction + ?Sized>(f: &F, g: &GroupElement, sign: Sign, h: f64) -> Complex64 {
    let dh = flow_derivative(f, g, GroupElement::exp_h, h);
    let dv = flow_derivative(f, g, GroupElement::exp_v, h);
    let i = Complex64::i();
    match sign {
        Sign::Plus => 0.5 * (dh + i * dv),
        Sign::Minus => 0.5 * (dh - i * dv),
    }
}

/// `(E± F)(g)` by finite differences, rejecting non-smooth `F`.
pub fn apply_e<F: GroupFunction + ?Sized>(f: &F, g: &GroupElement, sign: Sign) -> Result<Complex64> {
    let fine = e_combination(f, g, sign, FD_STEP);
    let coarse = e_combination(f, g, sign, 8.0 * FD_STEP);
    let scale = fine.norm().max(coarse.norm()).max(f.eval(g).norm());
    let gap = (fine - coarse).norm();
    if scale > 0.0 && gap > FD_GAP_TOL * scale {
        return Err(Error::Differentiation { gap: gap / scale });
    }
    Ok(fine)
}

/// `E± F` as a group function; the smoothness check is left to the caller.
pub struct Applied<'a, F: GroupFunction + ?Sized> {
    pub f: &'a F,
    pub sign: Sign,
}

impl<F: GroupFunction + ?Sized> GroupFunction for Applied<'_, F> {
    fn eval(&self, g: &GroupElement) -> Complex64 {
        e_combination(self.f, g, self.sign, FD_STEP)
    }
}

pub fn raise_fn<F: GroupFunction + ?Sized>(f: &F) -> Applied<'_, F> {
    Applied { f, sign: Sign::Plus }
}

pub fn lower_fn<F: GroupFunction + ?Sized>(f: &F) -> Applied<'_, F> {
    Applied { f, sign: Sign::Minus }
}

/// Fourier coefficient of `θ ↦ F(g kw_θ)` at frequency `2n`, `m` trapezoid points.
pub fn fibre_coefficient<F: GroupFunction + ?Sized>(f: &F, g: &GroupElement, n: i64, m: usize) -> Complex64 {
    let terms: Vec<Complex64> = (0..m)
        .map(|j| {
            let th = PI * j as f64 / m as f64;
            f.eval(&(*g * GroupElement::weight_rotation(th))) * Complex64::from_polar(1.0, -2.0 * n as f64 * th)
        })
        .collect();
    pairwise_sum_complex(&terms) / m as f64
}

/// All fibre coefficients `|n| < m/2` from one set of `m` samples.
pub fn fibre_spectrum<F: GroupFunction + ?Sized>(f: &F, g: &GroupElement, m: usize) -> BTreeMap<i64, Complex64> {
    let samples: Vec<Complex64> = (0..m)
        .map(|j| f.eval(&(*g * GroupElement::weight_rotation(PI * j as f64 / m as f64))))
        .collect();
    let half = (m / 2) as i64;
    (-half + 1..half)
        .map(|n| {
            let terms: Vec<Complex64> = samples
                .iter()
                .enumerate()
                .map(|(j, v)| v * Complex64::from_polar(1.0, -2.0 * PI * (n * j as i64) as f64 / m as f64))
                .collect();
            (n, pairwise_sum_complex(&terms) / m as f64)
        })
        .collect()
}

/// Fibre mean of `|F|²`.
pub fn fibre_mean_sq<F: GroupFunction + ?Sized>(f: &F, g: &GroupElement, m: usize) -> f64 {
    (0..m)
        .map(|j| f.eval(&(*g * GroupElement::weight_rotation(PI * j as f64 / m as f64))).norm_sqr())
        .sum::<f64>()
        / m as f64
}

/// Weight-`2n` projection at `g`, with an aliasing check by doubling `m`.
pub fn weight_project_at<F: GroupFunction + ?Sized>(f: &F, g: &GroupElement, n: i64, m: usize) -> Result<Complex64> {
    if (n.unsigned_abs() as usize) * 2 >= m {
        return Err(Error::Resolution(format!("{m} fibre samples cannot resolve weight {}", 2 * n)));
    }
    let coarse = fibre_coefficient(f, g, n, m);
    let fine = fibre_coefficient(f, g, n, 2 * m);
    let scale = fibre_mean_sq(f, g, m).sqrt();
    if (fine - coarse).norm() > 1e-10 * scale.max(f64::MIN_POSITIVE) {
        return Err(Error::Resolution(format!(
            "weight projection aliased at {m} fibre samples (change {:.3e})",
            (fine - coarse).norm() / scale
        )));
    }
    Ok(fine)
}

/// A weight-`2n` function sampled at a list of group elements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightComponent {
    pub n: i64,
    pub points: Vec<GroupElement>,
    pub values: Vec<Complex64>,
}

impl WeightComponent {
    /// Values on the translated fibre `g kw_θ`, using equivariance.
    pub fn rotated(&self, theta: f64) -> Vec<Complex64> {
        let phase = Complex64::from_polar(1.0, 2.0 * self.n as f64 * theta);
        self.values.iter().map(|v| v * phase).collect()
    }
}

pub fn weight_project<F: GroupFunction + ?Sized>(
    f: &F,
    n: i64,
    points: &[GroupElement],
    m: usize,
) -> Result<WeightComponent> {
    let values = points
        .par_iter()
        .map(|g| weight_project_at(f, g, n, m))
        .collect::<Result<Vec<_>>>()?;
    Ok(WeightComponent { n, points: points.to_vec(), values })
}

/// `w(n) = √(3L/(2L²+1)) (L − |n|)/L` for `|n| ≤ L`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiftWeights {
    pub l: usize,
    pub prefactor: f64,
    pub weights: Vec<f64>,
}

impl LiftWeights {
    pub fn from_l(l: usize) -> Self {
        assert!(l >= 1);
        let lf = l as f64;
        let prefactor = (3.0 * lf / (2.0 * lf * lf + 1.0)).sqrt();
        let weights = (-(l as i64)..=l as i64)
            .map(|n| prefactor * (lf - n.unsigned_abs() as f64) / lf)
            .collect();
        Self { l, prefactor, weights }
    }

    pub fn w(&self, n: i64) -> f64 {
        let l = self.l as i64;
        if n.abs() > l {
            0.0
        } else {
            self.weights[(n + l) as usize]
        }
    }

    pub fn sum_sq(&self) -> f64 {
        self.weights.iter().map(|w| w * w).sum()
    }

    pub fn indices(&self) -> std::ops::RangeInclusive<i64> {
        -(self.l as i64)..=self.l as i64
    }
}

pub fn lift_weights(cfg: &SpectralConfig) -> LiftWeights {
    LiftWeights::from_l(cfg.l())
}

/// `F(g) = e^{(is − ½) φ(g k_b)}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlaneWave {
    pub s: f64,
    pub b: f64,
}

impl PlaneWave {
    pub fn new(s: f64, b: f64) -> Self {
        Self { s, b }
    }

    fn exponent(&self) -> Complex64 {
        Complex64::new(-0.5, self.s)
    }

    /// Weight-`2n` component, phase-aligned with the boundary point so the
    /// ladder relations hold with the coefficients of [`LadderCoefficients`].
    pub fn component(&self, n: i64, g: &GroupElement, m: usize) -> Complex64 {
        Complex64::from_polar(1.0, 2.0 * n as f64 * self.b) * fibre_coefficient(self, g, n, m)
    }

    /// Fibre resolution needed for components up to `|n|`.
    pub fn fibre_samples(&self, n_max: i64) -> usize {
        let need = 16.0 * (self.s.abs() + n_max.abs() as f64 + 8.0);
        (need as usize).next_power_of_two().max(64)
    }

    pub fn component_fn(&self, n: i64, m: usize) -> impl GroupFunction + '_ {
        move |g: &GroupElement| self.component(n, g, m)
    }
}

impl GroupFunction for PlaneWave {
    fn eval(&self, g: &GroupElement) -> Complex64 {
        (self.exponent() * (*g * GroupElement::rotation(self.b)).phi()).exp()
    }
}

/// Weight components `f_{2l}` or `ψ_{2n}` on a shared set of points with
/// quadrature weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentSet {
    pub weights: Vec<f64>,
    pub components: BTreeMap<i64, Vec<Complex64>>,
}

impl ComponentSet {
    pub fn new(weights: Vec<f64>) -> Self {
        Self { weights, components: BTreeMap::new() }
    }

    pub fn with(mut self, n: i64, values: Vec<Complex64>) -> Self {
        self.components.insert(n, values);
        self
    }

    fn check(&self) -> Result<()> {
        for (n, v) in &self.components {
            if v.len() != self.weights.len() {
                return Err(Error::Interface(format!(
                    "component {} has {} samples, grid has {}",
                    2 * n,
                    v.len(),
                    self.weights.len()
                )));
            }
        }
        Ok(())
    }

    /// Sum of the components on the fibre point `g kw_θ`.
    pub fn synthesize(&self, i: usize, theta: f64) -> Complex64 {
        self.components
            .iter()
            .map(|(n, v)| v[i] * Complex64::from_polar(1.0, 2.0 * *n as f64 * theta))
            .sum()
    }
}

/// `⟨f Ψ_∞, ψ⟩` for `K`-finite `f`, with `Ψ_∞ = Σ ψ_{2n}` and `ψ = ψ₀`.
///
/// Only products of total weight zero survive the fibre integral, so the
/// pairing is `Σ_l ∫ f_{2l} ψ_{−2l} conj(ψ₀)`.
pub fn pair_i_psi(f: &ComponentSet, psi: &ComponentSet) -> Result<Complex64> {
    f.check()?;
    psi.check()?;
    if f.weights != psi.weights {
        return Err(Error::Interface("f and ψ are sampled on different grids".into()));
    }
    let psi0 = psi
        .components
        .get(&0)
        .ok_or_else(|| Error::Interface("ψ has no weight-0 component".into()))?;
    let mut terms = Vec::new();
    for (l, fl) in &f.components {
        if let Some(pl) = psi.components.get(&-l) {
            for i in 0..f.weights.len() {
                terms.push(f.weights[i] * fl[i] * pl[i] * psi0[i].conj());
            }
        }
    }
    Ok(pairwise_sum_complex(&terms))
}
