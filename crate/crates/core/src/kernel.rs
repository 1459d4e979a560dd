//! The spectrally localized kernel: `h̃`, `g̃`, the cutoff `χ`,
//! `h = h̃ ∗ χ̂`, the spatial kernel `k`, and the bound report.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use crate::config::SpectralConfig;
use crate::error::{Error, Result};
use crate::interp::UniformHermite;
use crate::quad::{pairwise_sum, NodeSet};
use crate::transforms::{
    h_from_g, k_from_q, plancherel_integral, q_from_g, spatial_norm_sq, spectral_grid, AbelOptions,
    FourierSide, RadialProfile, SpectralFunction, TailModel,
};

/// `sech x` without overflow.
#[inline]
fn sech(x: f64) -> f64 {
    let e = (-x.abs()).exp();
    2.0 * e / (1.0 + e * e)
}

/// `h̃(s) = r^{−1/2} cosh(s/C) cosh(r/C) / (cosh(2s/C) + cosh(2r/C))`,
/// evaluated as `(r^{−1/2}/4) [sech((s−r)/C) + sech((s+r)/C)]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HTilde {
    pub r: f64,
    pub window: f64,
}

impl HTilde {
    pub fn eval(&self, s: f64) -> f64 {
        self.eval_with_derivative(s).0
    }

    pub fn eval_with_derivative(&self, s: f64) -> (f64, f64) {
        let c = self.window;
        let pre = 0.25 / self.r.sqrt();
        let (xm, xp) = ((s - self.r) / c, (s + self.r) / c);
        let (am, ap) = (sech(xm), sech(xp));
        (pre * (am + ap), -pre / c * (am * xm.tanh() + ap * xp.tanh()))
    }

    /// The printed quotient, for moderate arguments only.
    pub fn eval_quotient(&self, s: f64) -> f64 {
        let c = self.window;
        (s / c).cosh() * (self.r / c).cosh() / ((2.0 * s / c).cosh() + (2.0 * self.r / c).cosh()) / self.r.sqrt()
    }

    pub fn sample(&self, grid: &[f64]) -> SpectralFunction {
        let this = *self;
        SpectralFunction::from_fn(grid, move |s| this.eval_with_derivative(s))
    }
}

pub fn build_htilde(cfg: &SpectralConfig) -> HTilde {
    HTilde { r: cfg.r, window: cfg.window }
}

/// `g̃(ξ) = (C/4) r^{−1/2} cos(ξr) / cosh(Cπξ/2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GTilde {
    pub r: f64,
    pub window: f64,
}

impl GTilde {
    pub fn eval(&self, xi: f64) -> f64 {
        self.eval_with_derivative(xi).0
    }

    pub fn eval_with_derivative(&self, xi: f64) -> (f64, f64) {
        let a = 0.5 * self.window * PI;
        let pre = 0.25 * self.window / self.r.sqrt();
        let (sn, cs) = (xi * self.r).sin_cos();
        let sc = sech(a * xi);
        let th = (a * xi).tanh();
        (pre * cs * sc, pre * sc * (-self.r * sn - a * th * cs))
    }

    /// Restriction to `[−support, support]`.
    pub fn as_fourier_side(&self, support: f64) -> FourierSide {
        let this = *self;
        FourierSide::new(support, move |x| this.eval_with_derivative(x))
    }
}

pub fn build_gtilde(cfg: &SpectralConfig) -> GTilde {
    GTilde { r: cfg.r, window: cfg.window }
}

/// `χ = A (β ⋆ β)` with `β` the standard bump on `[−τ/2, τ/2]`.
///
/// `χ̂(σ) = (1/2π) ∫ χ(u) e^{iσu} du = (B(σ)/B(1))²` where `B` is the cosine
/// transform of `β`; hence `χ̂ ≥ 0`, `min_{|σ|≤1} χ̂ = χ̂(1) = 1`, and
/// `‖χ̂‖₁ = χ(0)`.
#[derive(Debug, Clone)]
pub struct Cutoff {
    pub tau: f64,
    /// Normalization `A = 2π / B(1)²`.
    pub a: f64,
    pub chi_hat_l1: f64,
    b1: f64,
    b_table: UniformHermite<f64>,
    chi_table: UniformHermite<f64>,
    chi_d_table: UniformHermite<f64>,
    bump_nodes: NodeSet,
}

impl Cutoff {
    fn half_width(&self) -> f64 {
        0.5 * self.tau
    }

    /// `β(v) = exp(−1/(1 − (v/w)²))` on `|v| < w = τ/2`.
    pub fn bump(&self, v: f64) -> f64 {
        bump(v, self.half_width()).0
    }

    pub fn chi(&self, u: f64) -> f64 {
        self.chi_with_derivative(u).0
    }

    pub fn chi_with_derivative(&self, u: f64) -> (f64, f64) {
        let a = u.abs();
        if a >= self.tau {
            return (0.0, 0.0);
        }
        let v = self.chi_table.eval(a);
        let d = self.chi_d_table.eval(a);
        (v, if u < 0.0 { -d } else { d })
    }

    /// Cosine transform `B(σ) = ∫ β(v) cos(σv) dv`.
    pub fn bump_transform(&self, sigma: f64) -> f64 {
        let a = sigma.abs();
        if self.b_table.contains(a) {
            self.b_table.eval(a)
        } else {
            bump_cosine(&self.bump_nodes, self.half_width(), a).0
        }
    }

    pub fn chi_hat(&self, sigma: f64) -> f64 {
        let b = self.bump_transform(sigma) / self.b1;
        b * b
    }

    pub fn as_fourier_side(&self) -> FourierSide {
        let this = self.clone();
        FourierSide::new(self.tau, move |u| this.chi_with_derivative(u))
    }
}

#[inline]
fn bump(v: f64, w: f64) -> (f64, f64) {
    let x = v / w;
    if x.abs() >= 1.0 {
        return (0.0, 0.0);
    }
    let q = 1.0 - x * x;
    let b = (-1.0 / q).exp();
    (b, b * (-2.0 * x / (q * q)) / w)
}

#[inline]
fn bump_second(v: f64, w: f64) -> f64 {
    let x = v / w;
    if x.abs() >= 1.0 {
        return 0.0;
    }
    let q = 1.0 - x * x;
    let b = (-1.0 / q).exp();
    b * (4.0 * x * x / q.powi(4) - 2.0 / (q * q) - 8.0 * x * x / q.powi(3)) / (w * w)
}

fn bump_cosine(nodes: &NodeSet, w: f64, sigma: f64) -> (f64, f64) {
    let mut val = Vec::with_capacity(nodes.len());
    let mut der = Vec::with_capacity(nodes.len());
    for (v, wt) in nodes.nodes.iter().zip(&nodes.weights) {
        let b = bump(*v, w).0;
        let (sn, cs) = (sigma * v).sin_cos();
        val.push(wt * b * cs);
        der.push(-wt * v * b * sn);
    }
    (2.0 * pairwise_sum(&val), 2.0 * pairwise_sum(&der))
}

fn conv_nodes(u: f64, w: f64) -> NodeSet {
    let lo = (-w).max(u - w);
    let hi = w.min(u + w);
    NodeSet::uniform(lo, hi.max(lo), 16, 16)
}

/// `(β ⋆ β)(u)`.
fn conv(u: f64, w: f64) -> f64 {
    if u.abs() >= 2.0 * w {
        return 0.0;
    }
    conv_nodes(u, w).integrate(|v| bump(v, w).0 * bump(u - v, w).0)
}

/// `(β ⋆ β)'(u) = ∫ β(v) β'(u − v) dv`.
fn conv_derivative(u: f64, w: f64) -> f64 {
    if u.abs() >= 2.0 * w {
        return 0.0;
    }
    conv_nodes(u, w).integrate(|v| bump(v, w).0 * bump(u - v, w).1)
}

fn conv_second(u: f64, w: f64) -> f64 {
    if u.abs() >= 2.0 * w {
        return 0.0;
    }
    conv_nodes(u, w).integrate(|v| bump(v, w).0 * bump_second(u - v, w))
}

/// Table extent for `B(σ)`.
const SIGMA_TABLE: f64 = 1600.0;

pub fn build_cutoff(tau: f64) -> Result<Cutoff> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::Config(format!("cutoff radius must lie in (0, 1), got {tau}")));
    }
    let w = 0.5 * tau;
    let bump_nodes = NodeSet::uniform(0.0, w, 48, 16);
    let step = 0.125;
    let n = (SIGMA_TABLE / step) as usize + 1;
    let pairs: Vec<(f64, f64)> = (0..n)
        .into_par_iter()
        .map(|i| bump_cosine(&bump_nodes, w, i as f64 * step))
        .collect();
    let (bv, bd): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
    let b_table = UniformHermite::<f64>::new(0.0, step, bv, bd);
    let b1 = bump_cosine(&bump_nodes, w, 1.0).0;
    // B is decreasing on [0, 1] because |σv| ≤ τ/2 < π
    let b_min = (0..=100).map(|i| bump_cosine(&bump_nodes, w, 0.01 * i as f64).0).fold(f64::INFINITY, f64::min);
    if !(b_min > 0.0 && b1 > 0.0) {
        return Err(Error::Domain("bump transform vanishes on [−1, 1]".into()));
    }
    let a = 2.0 * PI / (b1 * b1);
    let m = 4096;
    let cstep = tau / m as f64;
    let triples: Vec<(f64, f64, f64)> = (0..=m)
        .into_par_iter()
        .map(|i| {
            let u = i as f64 * cstep;
            (a * conv(u, w), a * conv_derivative(u, w), a * conv_second(u, w))
        })
        .collect();
    let cv: Vec<f64> = triples.iter().map(|x| x.0).collect();
    let cd: Vec<f64> = triples.iter().map(|x| x.1).collect();
    let cdd: Vec<f64> = triples.iter().map(|x| x.2).collect();
    let chi_hat_l1 = cv[0];
    let chi_table = UniformHermite::<f64>::new(0.0, cstep, cv, cd.clone());
    let chi_d_table = UniformHermite::<f64>::new(0.0, cstep, cd, cdd);
    Ok(Cutoff { tau, a, chi_hat_l1, b1, b_table, chi_table, chi_d_table, bump_nodes })
}

/// `h` with the data it was built from.
#[derive(Debug, Clone)]
pub struct KernelSpectrum {
    pub h: SpectralFunction,
    /// `g = g̃ χ`.
    pub g: FourierSide,
    /// Largest gap between `h_from_g(g̃χ)` and `h̃ ∗ χ̂` over the probes.
    pub path_gap: f64,
    pub path_tolerance: f64,
}

/// `(h̃ ∗ χ̂)(s) = ∫ h̃(s − σ) χ̂(σ) dσ`.
pub fn convolve_htilde(htilde: &HTilde, cutoff: &Cutoff, s: f64) -> f64 {
    let lim = SIGMA_TABLE;
    let panels = (2.0 * lim / 0.25) as usize;
    let nodes = NodeSet::uniform(-lim, lim, panels, 8);
    nodes.integrate(|sig| htilde.eval(s - sig) * cutoff.chi_hat(sig))
}

/// Default sampling grid for `h`.
pub fn kernel_grid(cfg: &SpectralConfig) -> Vec<f64> {
    let c = cfg.window;
    spectral_grid(cfg.s_max(), 0.05, Some((cfg.r - 8.0 * c, cfg.r + 8.0 * c, 0.025)))
}

pub fn build_h(cfg: &SpectralConfig, cutoff: &Cutoff) -> Result<KernelSpectrum> {
    if (cutoff.tau - cfg.tau).abs() > 1e-15 {
        return Err(Error::Interface(format!(
            "cutoff built for tau = {} but config has tau = {}",
            cutoff.tau, cfg.tau
        )));
    }
    let g = build_gtilde(cfg).as_fourier_side(cfg.tau).mul(&cutoff.as_fourier_side());
    let grid = kernel_grid(cfg);
    let h = h_from_g(&g, &grid)?.with_tail(TailModel { center: cfg.r, exponent: 3.0 });
    let htilde = build_htilde(cfg);
    let probes: Vec<f64> = (0..=64)
        .map(|i| cfg.r - 8.0 * cfg.window + 16.0 * cfg.window * i as f64 / 64.0)
        .chain((0..=16).map(|i| cfg.s_max() * i as f64 / 16.0))
        .filter(|s| *s >= 0.0)
        .collect();
    let path_gap = probes
        .par_iter()
        .map(|&s| (convolve_htilde(&htilde, cutoff, s) - h.eval(s)).abs())
        .reduce(|| 0.0, f64::max);
    let path_tolerance = 1e-6 / cfg.r.sqrt();
    if path_gap > path_tolerance {
        return Err(Error::Calibration {
            what: "h from g̃χ against h̃ ∗ χ̂".into(),
            difference: path_gap,
            tolerance: path_tolerance,
        });
    }
    Ok(KernelSpectrum { h, g, path_gap, path_tolerance })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    pub ratio: f64,
    pub pass: bool,
    /// Implied constant, when the check is an `≲` statement.
    pub constant: Option<f64>,
}

/// Pass thresholds for the implied constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundThresholds {
    pub k3: f64,
    pub k4: f64,
    pub k5: f64,
    pub k6: f64,
}

impl Default for BoundThresholds {
    fn default() -> Self {
        Self { k3: 1e5, k4: 200.0, k5: 200.0, k6: 500.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub checks: Vec<BoundCheck>,
}

impl BoundReport {
    pub fn get(&self, name: &str) -> Option<&BoundCheck> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

fn ratio(lhs: f64, rhs: f64) -> f64 {
    if rhs == 0.0 {
        if lhs == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        lhs / rhs
    }
}

/// Evaluates the six bound checks on a sampled `h`.
pub fn verify_bounds(
    h: &SpectralFunction,
    cfg: &SpectralConfig,
    chi_hat_l1: f64,
    thresholds: &BoundThresholds,
) -> BoundReport {
    let r = cfg.r;
    let rs = r.sqrt();
    let htilde = build_htilde(cfg);
    // dense scan: grid nodes and midpoints
    let mut scan: Vec<f64> = h.grid().to_vec();
    scan.extend(h.grid().windows(2).map(|w| 0.5 * (w[0] + w[1])));
    let sup_h = scan.iter().map(|&s| h.eval(s).abs()).fold(0.0, f64::max);
    let sup_ht = (0..=20000).map(|i| htilde.eval(5.0 * r * i as f64 / 20000.0)).fold(0.0, f64::max);

    let mut checks = Vec::with_capacity(6);
    let rhs1 = chi_hat_l1 * sup_ht;
    checks.push(BoundCheck {
        name: "h_small".into(),
        lhs: sup_h,
        rhs: rhs1,
        ratio: ratio(sup_h, rhs1),
        pass: sup_h <= rhs1,
        constant: None,
    });

    let window_min = (0..=4000)
        .map(|i| h.eval(r - cfg.window + 2.0 * cfg.window * i as f64 / 4000.0))
        .fold(f64::INFINITY, f64::min);
    let rhs2 = 0.01 / rs;
    checks.push(BoundCheck {
        name: "big_h".into(),
        lhs: window_min,
        rhs: rhs2,
        ratio: ratio(window_min, rhs2),
        pass: window_min >= rhs2,
        constant: None,
    });

    let k3 = scan
        .iter()
        .filter(|&&s| (s - r).abs() >= 2.0)
        .map(|&s| h.eval(s).abs() * (s - r).abs().powi(3) * rs)
        .fold(0.0, f64::max);
    checks.push(BoundCheck {
        name: "decay".into(),
        lhs: k3,
        rhs: thresholds.k3,
        ratio: ratio(k3, thresholds.k3),
        pass: k3.is_finite() && k3 <= thresholds.k3,
        constant: Some(k3),
    });

    let smax = h.s_max();
    let nodes = NodeSet::uniform(0.0, smax, (smax / 0.25).ceil() as usize, 16);
    let int_h = nodes.integrate(|s| h.eval(s));
    let int_sh = nodes.integrate(|s| s * h.eval(s));
    let int_sh2 = nodes.integrate(|s| {
        let v = h.eval(s);
        s * v * v
    });
    for (name, lhs, scale, k) in [
        ("integral_h", int_h, 1.0 / rs, thresholds.k4),
        ("integral_sh", int_sh, rs, thresholds.k5),
        ("integral_sh2", int_sh2, 1.0, thresholds.k6),
    ] {
        let rhs = k * scale;
        checks.push(BoundCheck {
            name: name.into(),
            lhs,
            rhs,
            ratio: ratio(lhs, rhs),
            pass: lhs <= rhs,
            constant: Some(lhs / scale),
        });
    }
    BoundReport { checks }
}

/// The full kernel triple for one configuration.
#[derive(Debug, Clone)]
pub struct RadialKernel {
    pub cfg: SpectralConfig,
    pub cutoff: Cutoff,
    pub spectrum: KernelSpectrum,
    pub k: RadialProfile,
    /// `‖k‖²` from the spectral side.
    pub norm_sq_spectral: f64,
    /// `‖k‖²` by quadrature over `ℍ`.
    pub norm_sq_spatial: f64,
}

impl RadialKernel {
    pub fn h(&self) -> &SpectralFunction {
        &self.spectrum.h
    }

    pub fn norm_gap(&self) -> f64 {
        (self.norm_sq_spatial / self.norm_sq_spectral - 1.0).abs()
    }
}

pub fn build_k(cfg: &SpectralConfig, cutoff: &Cutoff, spectrum: KernelSpectrum) -> Result<RadialKernel> {
    let q = q_from_g(&spectrum.g);
    let k = k_from_q(&q, AbelOptions::default());
    let kmax = k.max_abs();
    let leak = k.eval_t(1.05 * k.t_max()).abs();
    if leak > 1e-8 * kmax {
        return Err(Error::Precision { achieved: leak, requested: 1e-8 * kmax });
    }
    let norm_sq_spectral = plancherel_integral(&spectrum.h, 0.0, spectrum.h.s_max());
    let norm_sq_spatial = spatial_norm_sq(&k, 32);
    Ok(RadialKernel {
        cfg: cfg.clone(),
        cutoff: cutoff.clone(),
        spectrum,
        k,
        norm_sq_spectral,
        norm_sq_spatial,
    })
}

/// Cutoff, spectrum and spatial kernel in one call.
pub fn build_kernel(cfg: &SpectralConfig) -> Result<RadialKernel> {
    cfg.validate()?;
    let cutoff = build_cutoff(cfg.tau)?;
    let spectrum = build_h(cfg, &cutoff)?;
    build_k(cfg, &cutoff, spectrum)
}
