//! The lifted kernel `κ` on `SL(2, R)` and its phase-space localization.
//!
//! With `w(s) = h(s) s tanh(πs)` and the profile `G(x) = ∫₀^{s_max} e^{isx} w(s) ds`,
//!
//! ```text
//! κ(g) = b(r) r^{−1/4} (1/2π) · mean_{θ ∈ [0, π)} e^{−φ/2} G(φ) F_L(2θ),   φ = φ(g k_θ),
//! ```
//!
//! which is the oscillatory `(s, θ)` integral with the two integrations
//! exchanged. `κ₁` and `κ₂` use the parts of `G` below and above `ηr`.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::SpectralConfig;
use crate::error::{Error, Result};
use crate::group::{an_cosh_minus_one, phi_an_rotated, phi_theta_derivative_an, GroupElement};
use crate::interp::UniformHermite;
use crate::kernel::RadialKernel;
use crate::quad::{pairwise_sum, pairwise_sum_complex, NodeSet};
use crate::transforms::{plancherel_integral, SpectralFunction};

/// Fejér kernel `F_L(θ) = (1/L) (sin(Lθ/2) / sin(θ/2))²`.
pub fn fejer(l: usize, theta: f64) -> f64 {
    let lf = l as f64;
    let half = (0.5 * theta).sin();
    if half.abs() < 1e-6 {
        // near a multiple of 2π use the cosine series
        return (1 - l as i64..l as i64)
            .map(|n| (1.0 - n.unsigned_abs() as f64 / lf) * (n as f64 * theta).cos())
            .sum();
    }
    let num = (0.5 * lf * theta).sin();
    num * num / (half * half * lf)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfileOptions {
    /// Width of the Gauss-Legendre panels in `s`.
    pub panel_width: f64,
    pub order: usize,
    /// Samples per half period `π / s_max` of the fastest oscillation.
    pub x_density: f64,
    /// Margin added to `τ` on each side of the `x` range.
    pub x_margin: f64,
}

impl Default for ProfileOptions {
    fn default() -> Self {
        Self { panel_width: 0.5, order: 8, x_density: 16.0, x_margin: 0.05 }
    }
}

/// `G`, `G_low` and `G_high` tabulated with derivatives for Hermite interpolation.
#[derive(Debug, Clone)]
pub struct SpectralProfile {
    pub eta: f64,
    pub split: f64,
    pub s_max: f64,
    pub full: UniformHermite<Complex64>,
    pub low: UniformHermite<Complex64>,
    pub high: UniformHermite<Complex64>,
    /// Largest midpoint interpolation error found, relative to `max |G|`.
    pub interpolation_error: f64,
    pub max_abs: f64,
}

fn profile_nodes(lo: f64, hi: f64, opts: &ProfileOptions) -> (Vec<f64>, Vec<f64>) {
    if hi <= lo {
        return (Vec::new(), Vec::new());
    }
    let panels = ((hi - lo) / opts.panel_width).ceil().max(1.0) as usize;
    NodeSet::uniform(lo, hi, panels, opts.order).into_parts()
}

/// `(∫ e^{isx} w, ∫ is e^{isx} w)` over the given nodes.
fn transform_at(x: f64, nodes: &[f64], weights: &[f64]) -> (Complex64, Complex64) {
    let mut v = Vec::with_capacity(nodes.len());
    let mut d = Vec::with_capacity(nodes.len());
    for (&s, &w) in nodes.iter().zip(weights) {
        let e = Complex64::from_polar(w, s * x);
        v.push(e);
        d.push(Complex64::new(0.0, s) * e);
    }
    (pairwise_sum_complex(&v), pairwise_sum_complex(&d))
}

fn weighted(h: &SpectralFunction, nodes: &[f64], weights: &[f64]) -> Vec<f64> {
    nodes
        .iter()
        .zip(weights)
        .map(|(&s, &w)| w * h.eval(s) * s * (PI * s).tanh())
        .collect()
}

impl SpectralProfile {
    pub fn x_range(&self) -> (f64, f64) {
        (self.full.x0, self.full.x_max())
    }

    pub fn eval(&self, x: f64) -> Complex64 {
        self.full.eval(x)
    }
}

pub fn build_profile(h: &SpectralFunction, cfg: &SpectralConfig) -> Result<SpectralProfile> {
    build_profile_with(h, cfg, ProfileOptions::default())
}

pub fn build_profile_with(h: &SpectralFunction, cfg: &SpectralConfig, opts: ProfileOptions) -> Result<SpectralProfile> {
    let s_max = h.s_max();
    let split = (cfg.eta * cfg.r).min(s_max);
    let (ln, lw) = profile_nodes(0.0, split, &opts);
    let (hn, hw) = profile_nodes(split, s_max, &opts);
    let lw = weighted(h, &ln, &lw);
    let hw = weighted(h, &hn, &hw);

    let half = cfg.tau + opts.x_margin;
    let step = PI / (opts.x_density * s_max);
    let count = (2.0 * half / step).ceil() as usize + 1;
    let x0 = -0.5 * step * (count - 1) as f64;
    let rows: Vec<[Complex64; 4]> = (0..count)
        .into_par_iter()
        .map(|i| {
            let x = x0 + step * i as f64;
            let (a, da) = transform_at(x, &ln, &lw);
            let (b, db) = transform_at(x, &hn, &hw);
            [a, da, b, db]
        })
        .collect();
    let col = |k: usize| rows.iter().map(|r| r[k]).collect::<Vec<_>>();
    let (lv, ld, hv, hd) = (col(0), col(1), col(2), col(3));
    let fv: Vec<Complex64> = lv.iter().zip(&hv).map(|(a, b)| a + b).collect();
    let fd: Vec<Complex64> = ld.iter().zip(&hd).map(|(a, b)| a + b).collect();
    let max_abs = fv.iter().fold(0.0f64, |m, v| m.max(v.norm()));
    let full = UniformHermite::<Complex64>::new(x0, step, fv, fd);

    // direct evaluation at cell midpoints spread over the table
    let probes = 64.min(count - 1);
    let worst = (0..probes)
        .into_par_iter()
        .map(|k| {
            let i = k * (count - 1) / probes;
            let x = x0 + step * (i as f64 + 0.5);
            let (a, _) = transform_at(x, &ln, &lw);
            let (b, _) = transform_at(x, &hn, &hw);
            (full.eval(x) - (a + b)).norm()
        })
        .reduce(|| 0.0, f64::max);
    let interpolation_error = worst / max_abs.max(f64::MIN_POSITIVE);
    if interpolation_error > 1e-5 {
        return Err(Error::Resolution(format!(
            "profile interpolation error {interpolation_error:.3e} of max |G|; raise x_density"
        )));
    }
    Ok(SpectralProfile {
        eta: cfg.eta,
        split,
        s_max,
        full,
        low: UniformHermite::<Complex64>::new(x0, step, lv, ld),
        high: UniformHermite::<Complex64>::new(x0, step, hv, hd),
        interpolation_error,
        max_abs,
    })
}

/// `κ`, `κ₁`, `κ₂` at one point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KappaValue {
    pub kappa: Complex64,
    pub kappa1: Complex64,
    pub kappa2: Complex64,
}

/// Upper bound for `|d/dθ φ(a_t n_u k_θ)|` over the ball `B(0, τ)`.
pub fn sup_phi_derivative(tau: f64) -> f64 {
    let ball = tau.cosh() - 1.0;
    let mut sup = 0.0f64;
    for i in 0..=40 {
        let t = -tau + 2.0 * tau * i as f64 / 40.0;
        for j in 0..=40 {
            let u = -tau.sinh() + 2.0 * tau.sinh() * j as f64 / 40.0;
            if an_cosh_minus_one(t, u) > ball {
                continue;
            }
            for k in 0..128 {
                let th = PI * k as f64 / 128.0;
                if let Ok(d) = phi_theta_derivative_an(t, u, th) {
                    sup = sup.max(d.abs());
                }
            }
        }
    }
    // the coarse scan can miss the peak by a few percent
    1.1 * sup
}

/// Trapezoid points on `[0, π)` resolving both `F_L` and the phase.
pub fn theta_count(cfg: &SpectralConfig, s_max: f64) -> usize {
    let by_fejer = 64 * cfg.l();
    let by_phase = (8.0 * s_max * sup_phi_derivative(cfg.tau)).ceil() as usize;
    by_fejer.max(by_phase).next_power_of_two()
}

/// Precomputed `θ` nodes and Fejér weights for repeated `κ` evaluation.
#[derive(Debug, Clone)]
pub struct KappaEvaluator {
    pub profile: SpectralProfile,
    pub n_theta: usize,
    trig: Vec<(f64, f64)>,
    fejer: Vec<f64>,
    prefactor: f64,
}

impl KappaEvaluator {
    pub fn new(profile: SpectralProfile, cfg: &SpectralConfig, n_theta: usize) -> Self {
        let l = cfg.l();
        let trig = (0..n_theta).map(|k| (PI * k as f64 / n_theta as f64).sin_cos()).collect();
        let fejer = (0..n_theta)
            .map(|k| fejer(l, 2.0 * PI * k as f64 / n_theta as f64))
            .collect();
        let prefactor = cfg.b() * cfg.r.powf(-0.25) / (2.0 * PI);
        Self { profile, n_theta, trig, fejer, prefactor }
    }

    pub fn with_default_theta(profile: SpectralProfile, cfg: &SpectralConfig) -> Self {
        let n = theta_count(cfg, profile.s_max);
        Self::new(profile, cfg, n)
    }

    /// `κ` at `a_t n_u`.
    pub fn eval_an(&self, t: f64, u: f64) -> Result<KappaValue> {
        let et = t.exp();
        let (lo, hi) = self.profile.x_range();
        let mut full = Vec::with_capacity(self.n_theta);
        let mut low = Vec::with_capacity(self.n_theta);
        let mut high = Vec::with_capacity(self.n_theta);
        for (&(s, c), &f) in self.trig.iter().zip(&self.fejer) {
            let p = c + u * s;
            let arg = et * p * p + s * s / et;
            let phi = arg.ln();
            if phi < lo || phi > hi {
                return Err(Error::Domain(format!(
                    "φ = {phi:.4} at (t, u) = ({t}, {u}) is outside the profile range [{lo:.4}, {hi:.4}]"
                )));
            }
            let amp = f / arg.sqrt();
            full.push(self.profile.full.eval(phi) * amp);
            low.push(self.profile.low.eval(phi) * amp);
            high.push(self.profile.high.eval(phi) * amp);
        }
        let scale = self.prefactor / self.n_theta as f64;
        Ok(KappaValue {
            kappa: pairwise_sum_complex(&full) * scale,
            kappa1: pairwise_sum_complex(&low) * scale,
            kappa2: pairwise_sum_complex(&high) * scale,
        })
    }

    pub fn eval(&self, g: &GroupElement) -> Result<KappaValue> {
        let iw = g.iwasawa()?;
        self.eval_an(iw.t, iw.u)
    }

    /// Same evaluation on a doubled `θ` grid.
    pub fn refined(&self, cfg: &SpectralConfig) -> Self {
        Self::new(self.profile.clone(), cfg, 2 * self.n_theta)
    }
}

pub fn eval_kappa(g: &GroupElement, profile: &SpectralProfile, cfg: &SpectralConfig) -> Result<KappaValue> {
    KappaEvaluator::with_default_theta(profile.clone(), cfg).eval(g)
}

/// Direct double quadrature over `(s, θ)`; the oracle for the exchanged form.
pub fn eval_kappa_direct(t: f64, u: f64, h: &SpectralFunction, cfg: &SpectralConfig, n_theta: usize) -> Complex64 {
    let panels = (h.s_max() / 0.2).ceil() as usize;
    let (nodes, weights) = NodeSet::uniform(0.0, h.s_max(), panels, 12).into_parts();
    let w: Vec<f64> = nodes
        .iter()
        .zip(&weights)
        .map(|(&s, &q)| q * h.eval(s) * s * (PI * s).tanh())
        .collect();
    let l = cfg.l();
    let terms: Vec<Complex64> = (0..n_theta)
        .into_par_iter()
        .map(|k| {
            let th = PI * k as f64 / n_theta as f64;
            let phi = phi_an_rotated(t, u, th);
            let inner: Vec<Complex64> = nodes.iter().zip(&w).map(|(&s, &q)| Complex64::from_polar(q, s * phi)).collect();
            pairwise_sum_complex(&inner) * (-0.5 * phi).exp() * fejer(l, 2.0 * th)
        })
        .collect();
    pairwise_sum_complex(&terms) * cfg.b() * cfg.r.powf(-0.25) / (2.0 * PI * n_theta as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FieldOptions {
    pub nt: usize,
    pub nu: usize,
    /// Stretch of the `u` grid toward `u = 0`.
    pub stretch: f64,
    /// Relative tolerance of the `θ` doubling self-check.
    pub theta_tol: f64,
    pub probes: usize,
}

impl Default for FieldOptions {
    fn default() -> Self {
        Self { nt: 64, nu: 512, stretch: 3.0, theta_tol: 1e-5, probes: 6 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldCell {
    pub i: usize,
    pub j: usize,
    pub t: f64,
    pub u: f64,
    /// Haar measure of the cell and its mirror `u ↦ −u`.
    pub weight: f64,
    pub value: KappaValue,
}

/// `κ` on a `(t, u ≥ 0)` grid over `B(0, τ)K`; the mirror half `u < 0`
/// carries the same values.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MicrolocalField {
    pub cfg: SpectralConfig,
    pub t_edges: Vec<f64>,
    pub u_edges: Vec<f64>,
    pub cells: Vec<FieldCell>,
    pub n_theta: usize,
    /// Largest relative change under `θ` doubling at the probe points.
    pub theta_check: f64,
    pub profile_error: f64,
}

/// Inside/outside masses for one tube width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MassSplit {
    pub n: f64,
    pub u_cut: f64,
    pub inside: f64,
    pub outside: f64,
    pub total: f64,
}

impl MassSplit {
    pub fn fraction(&self) -> f64 {
        if self.total > 0.0 {
            self.outside / self.total
        } else {
            0.0
        }
    }
}

pub fn stretched_edges(upper: f64, n: usize, stretch: f64) -> Vec<f64> {
    (0..=n)
        .map(|j| {
            let xi = j as f64 / n as f64;
            if stretch > 0.0 {
                upper * (stretch * xi).sinh() / stretch.sinh()
            } else {
                upper * xi
            }
        })
        .collect()
}

impl MicrolocalField {
    pub fn build(kernel: &RadialKernel, opts: FieldOptions) -> Result<Self> {
        let cfg = &kernel.cfg;
        let profile = build_profile(kernel.h(), cfg)?;
        let profile_error = profile.interpolation_error;
        let eval = KappaEvaluator::with_default_theta(profile, cfg);
        Self::build_with(&eval, cfg, opts, profile_error)
    }

    pub fn build_with(eval: &KappaEvaluator, cfg: &SpectralConfig, opts: FieldOptions, profile_error: f64) -> Result<Self> {
        let tau = cfg.tau;
        let t_edges: Vec<f64> = (0..=opts.nt).map(|i| -tau + 2.0 * tau * i as f64 / opts.nt as f64).collect();
        let u_edges = stretched_edges(tau.sinh(), opts.nu, opts.stretch);
        let ball = tau.cosh() - 1.0;
        let mut jobs = Vec::new();
        for i in 0..opts.nt {
            let t = 0.5 * (t_edges[i] + t_edges[i + 1]);
            for j in 0..opts.nu {
                let u = 0.5 * (u_edges[j] + u_edges[j + 1]);
                if an_cosh_minus_one(t, u) <= ball {
                    let weight = 2.0 * (t_edges[i + 1].exp() - t_edges[i].exp()) * (u_edges[j + 1] - u_edges[j]);
                    jobs.push((i, j, t, u, weight));
                }
            }
        }
        let cells = jobs
            .par_iter()
            .map(|&(i, j, t, u, weight)| Ok(FieldCell { i, j, t, u, weight, value: eval.eval_an(t, u)? }))
            .collect::<Result<Vec<_>>>()?;

        let refined = eval.refined(cfg);
        let reference = cells.iter().map(|c| c.value.kappa.norm()).fold(0.0, f64::max);
        let stride = (cells.len() / opts.probes.max(1)).max(1);
        let mut theta_check = 0.0f64;
        for cell in cells.iter().step_by(stride) {
            let fine = refined.eval_an(cell.t, cell.u)?.kappa;
            let scale = fine.norm().max(1e-3 * reference);
            theta_check = theta_check.max((fine - cell.value.kappa).norm() / scale);
        }
        if theta_check > opts.theta_tol {
            return Err(Error::Resolution(format!(
                "θ doubling changed κ by {theta_check:.3e} (tolerance {:.1e}); increase the θ grid",
                opts.theta_tol
            )));
        }
        Ok(Self { cfg: cfg.clone(), t_edges, u_edges, cells, n_theta: eval.n_theta, theta_check, profile_error })
    }

    pub fn total_mass(&self) -> f64 {
        let m: Vec<f64> = self.cells.iter().map(|c| c.weight * c.value.kappa.norm_sqr()).collect();
        pairwise_sum(&m)
    }

    pub fn kappa1_norm_sq(&self) -> f64 {
        let m: Vec<f64> = self.cells.iter().map(|c| c.weight * c.value.kappa1.norm_sqr()).collect();
        pairwise_sum(&m)
    }

    /// Haar volume of the sampled part of `B(0, τ)K`.
    pub fn volume(&self) -> f64 {
        let m: Vec<f64> = self.cells.iter().map(|c| c.weight).collect();
        pairwise_sum(&m)
    }

    /// Share of each cell lying beyond `u_cut`.
    fn outside_share(&self, j: usize, u_cut: f64) -> f64 {
        let (u0, u1) = (self.u_edges[j], self.u_edges[j + 1]);
        if u_cut <= u0 {
            1.0
        } else if u_cut >= u1 {
            0.0
        } else {
            (u1 - u_cut) / (u1 - u0)
        }
    }

    fn check_resolution(&self, u_cut: f64) -> Result<()> {
        let upper = *self.u_edges.last().unwrap();
        if u_cut >= upper {
            return Ok(());
        }
        let j = self.u_edges.partition_point(|&e| e <= u_cut).saturating_sub(1);
        let spacing = self.u_edges[j + 1] - self.u_edges[j];
        if spacing > u_cut / 8.0 {
            return Err(Error::Resolution(format!(
                "u spacing {spacing:.3e} at the tube edge u_cut = {u_cut:.3e} exceeds u_cut/8; increase nu or the stretch"
            )));
        }
        Ok(())
    }

    /// Masses of `|κ|²` inside and outside the tube of width `u_cut`.
    pub fn split_at(&self, u_cut: f64, weight_fn: impl Fn(&FieldCell) -> f64) -> Result<(f64, f64)> {
        self.check_resolution(u_cut)?;
        let mut inside = Vec::with_capacity(self.cells.len());
        let mut outside = Vec::with_capacity(self.cells.len());
        for c in &self.cells {
            let m = weight_fn(c);
            let share = self.outside_share(c.j, u_cut);
            outside.push(m * share);
            inside.push(m * (1.0 - share));
        }
        Ok((pairwise_sum(&inside), pairwise_sum(&outside)))
    }

    /// Liouville (Haar) share of the tube within the ball.
    pub fn liouville_fraction(&self, u_cut: f64) -> Result<f64> {
        let (inside, outside) = self.split_at(u_cut, |c| c.weight)?;
        Ok(inside / (inside + outside))
    }

    /// Heatmap rows `(t, u, |κ|²)` for `u ≥ 0`.
    pub fn heatmap(&self) -> Vec<(f64, f64, f64)> {
        self.cells.iter().map(|c| (c.t, c.u, c.value.kappa.norm_sqr())).collect()
    }
}

pub fn outside_mass(field: &MicrolocalField, n: f64) -> Result<MassSplit> {
    let u_cut = field.cfg.u_cut_for(n);
    let (inside, outside) = field.split_at(u_cut, |c| c.weight * c.value.kappa.norm_sqr())?;
    Ok(MassSplit { n, u_cut, inside, outside, total: field.total_mass() })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeRow {
    pub n: f64,
    pub u_cut: f64,
    /// `sup |κ₂| |u| r^{1/4}` over cells with `|u| ≥ u_cut`; `None` when empty.
    pub k2: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitReport {
    pub eta: f64,
    pub kappa1_norm_sq: f64,
    pub low_spectral: f64,
    pub kappa1_ratio: f64,
    pub kappa1_pass: bool,
    pub consistency: f64,
    pub envelope: Vec<EnvelopeRow>,
    /// `K₂` growth between the extreme non-empty sweep values, with the
    /// `N^{1/4}` prediction for the same pair.
    pub growth: Option<(f64, f64)>,
}

pub fn split_diagnostics(field: &MicrolocalField, h: &SpectralFunction, ns: &[f64]) -> SplitReport {
    let cfg = &field.cfg;
    let kappa1_norm_sq = field.kappa1_norm_sq();
    let low_spectral = plancherel_integral(h, 0.0, (cfg.eta * cfg.r).min(h.s_max()));
    let consistency = field
        .cells
        .iter()
        .map(|c| (c.value.kappa - c.value.kappa1 - c.value.kappa2).norm())
        .fold(0.0, f64::max);
    let r4 = cfg.r.powf(0.25);
    let envelope: Vec<EnvelopeRow> = ns
        .iter()
        .map(|&n| {
            let u_cut = cfg.u_cut_for(n);
            let k2 = field
                .cells
                .iter()
                .filter(|c| c.u >= u_cut)
                .map(|c| c.value.kappa2.norm() * c.u * r4)
                .fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.max(v))));
            EnvelopeRow { n, u_cut, k2 }
        })
        .collect();
    let filled: Vec<&EnvelopeRow> = envelope.iter().filter(|e| e.k2.is_some()).collect();
    let growth = match (filled.first(), filled.last()) {
        (Some(a), Some(b)) if b.n > a.n => Some((b.k2.unwrap() / a.k2.unwrap(), (b.n / a.n).powf(0.25))),
        _ => None,
    };
    SplitReport {
        eta: cfg.eta,
        kappa1_norm_sq,
        low_spectral,
        kappa1_ratio: kappa1_norm_sq / low_spectral,
        kappa1_pass: kappa1_norm_sq <= low_spectral,
        consistency,
        envelope,
        growth,
    }
}

/// Low-frequency share `∫₀^{ηr} h² s tanh(πs) / ∫₀^{s_max} h² s tanh(πs)`.
pub fn low_frequency_fraction(h: &SpectralFunction, r: f64, eta: f64) -> f64 {
    plancherel_integral(h, 0.0, (eta * r).min(h.s_max())) / plancherel_integral(h, 0.0, h.s_max())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EtaSelection {
    pub eta: Option<f64>,
    pub threshold: f64,
    pub fractions: Vec<(f64, f64)>,
}

/// Largest candidate whose low-frequency share is at most `threshold`.
pub fn select_eta(h: &SpectralFunction, r: f64, candidates: &[f64], threshold: f64) -> EtaSelection {
    let fractions: Vec<(f64, f64)> = candidates.iter().map(|&e| (e, low_frequency_fraction(h, r, e))).collect();
    let eta = fractions
        .iter()
        .filter(|(_, f)| *f <= threshold)
        .map(|(e, _)| *e)
        .fold(None, |m: Option<f64>, e| Some(m.map_or(e, |m| m.max(e))));
    EtaSelection { eta, threshold, fractions }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseSample {
    pub t: f64,
    pub u: f64,
    pub s: f64,
    pub m: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseSampleResult {
    pub sample: PhaseSample,
    pub window: f64,
    pub min_dphi: f64,
    pub accepted: bool,
    pub integral: f64,
    /// `|I| s |u|`, only for accepted samples.
    pub k7: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub t: f64,
    pub u: f64,
    pub m: f64,
    pub s: f64,
    pub rms_s: f64,
    pub rms_2s: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NonstationaryReport {
    pub n: f64,
    pub results: Vec<PhaseSampleResult>,
    pub k7: Option<f64>,
}

fn window_integral(t: f64, u: f64, s: f64, m: f64, window: f64) -> Complex64 {
    let span = 2.0 * window;
    let cycles = (s * 3.0 * span + m.abs() * span) / (2.0 * PI);
    let panels = (4.0 * cycles).ceil().max(8.0) as usize;
    NodeSet::uniform(-window, window, panels, 16).integrate_complex(|th| {
        let phi = phi_an_rotated(t, u, th);
        Complex64::from_polar((-0.5 * phi).exp(), s * phi + m * th)
    })
}

fn min_abs_dphi(t: f64, u: f64, window: f64) -> f64 {
    (0..=256)
        .map(|k| {
            let th = -window + 2.0 * window * k as f64 / 256.0;
            phi_theta_derivative_an(t, u, th).map_or(0.0, f64::abs)
        })
        .fold(f64::INFINITY, f64::min)
}

/// `|∫_{|θ| ≤ |u| N^{−1/4}} e^{i(sφ(g k_θ) + mθ)} e^{−φ/2} dθ|` for `g = a_t n_u`.
pub fn nonstationary_phase_check(cfg: &SpectralConfig, samples: &[PhaseSample]) -> NonstationaryReport {
    let width = cfg.n.powf(-0.25);
    let results: Vec<PhaseSampleResult> = samples
        .par_iter()
        .map(|&sample| {
            let window = sample.u.abs() * width;
            let min_dphi = min_abs_dphi(sample.t, sample.u, window);
            let accepted = sample.s * min_dphi > 2.0 * sample.m.abs() && sample.u != 0.0;
            let integral = window_integral(sample.t, sample.u, sample.s, sample.m, window).norm();
            let k7 = accepted.then(|| integral * sample.s * sample.u.abs());
            PhaseSampleResult { sample, window, min_dphi, accepted, integral, k7 }
        })
        .collect();
    let k7 = results.iter().filter_map(|r| r.k7).fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.max(v))));
    NonstationaryReport { n: cfg.n, results, k7 }
}

/// RMS of `|I|` over one beat period in `s`, at `s` and at `2s`.
pub fn beat_scaling(cfg: &SpectralConfig, t: f64, u: f64, m: f64, s: f64) -> ScalingRow {
    let window = u.abs() * cfg.n.powf(-0.25);
    let beat = 2.0 * PI / (phi_an_rotated(t, u, window) - phi_an_rotated(t, u, -window)).abs();
    let rms = |base: f64| {
        let sq: Vec<f64> = (0..64)
            .into_par_iter()
            .map(|k| window_integral(t, u, base + beat * k as f64 / 64.0, m, window).norm_sqr())
            .collect();
        (pairwise_sum(&sq) / 64.0).sqrt()
    };
    let (rms_s, rms_2s) = (rms(s), rms(2.0 * s));
    ScalingRow { t, u, m, s, rms_s, rms_2s, ratio: rms_2s / rms_s }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub target: f64,
    pub rows: Vec<MassSplit>,
    /// Smallest swept `N` meeting the target.
    pub n_star: Option<f64>,
    /// Least-squares slope of `log fraction` against `log N` over rows with positive fraction.
    pub slope: Option<f64>,
    pub monotone: bool,
}

pub fn log_log_slope(points: &[(f64, f64)]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = points.iter().filter(|(x, y)| *x > 0.0 && *y > 0.0).map(|(x, y)| (x.ln(), y.ln())).collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Sweeps `N` and records the smallest value meeting `target`; an
/// unreachable target is reported as `n_star = None`.
pub fn calibrate_n(field: &MicrolocalField, ns: &[f64], target: f64) -> Result<SweepReport> {
    let mut sorted = ns.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rows = sorted.iter().map(|&n| outside_mass(field, n)).collect::<Result<Vec<_>>>()?;
    let n_star = rows.iter().find(|r| r.fraction() <= target).map(|r| r.n);
    let slope = log_log_slope(&rows.iter().map(|r| (r.n, r.fraction())).collect::<Vec<_>>());
    let monotone = rows.windows(2).all(|w| w[1].fraction() <= w[0].fraction() + 1e-15);
    Ok(SweepReport { target, rows, n_star, slope, monotone })
}

/// Default tube sweep; every value keeps the tube inside the ball at `r = 100`.
pub const DEFAULT_N_SWEEP: [f64; 6] = [0.0625, 0.125, 0.25, 0.5, 1.0, 2.0];

/// Candidate low-frequency fractions for `η`.
pub const ETA_CANDIDATES: [f64; 4] = [0.5, 0.6, 0.7, 0.8];

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::build_kernel;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::OnceLock;

    fn kernel100() -> &'static RadialKernel {
        static K: OnceLock<RadialKernel> = OnceLock::new();
        K.get_or_init(|| build_kernel(&SpectralConfig::default()).unwrap())
    }

    fn field100() -> &'static MicrolocalField {
        static F: OnceLock<MicrolocalField> = OnceLock::new();
        F.get_or_init(|| MicrolocalField::build(kernel100(), FieldOptions::default()).unwrap())
    }

    #[test]
    fn fejer_examples() {
        assert!((fejer(10, 0.0) - 10.0).abs() < 1e-12);
        assert!((fejer(7, 1e-9) - 7.0).abs() < 1e-9);
        for l in [1usize, 3, 10, 25] {
            let n = 4096;
            let mean: f64 = (0..n).map(|k| fejer(l, 2.0 * PI * k as f64 / n as f64)).sum::<f64>() / n as f64;
            assert!((mean - 1.0).abs() < 1e-10);
        }
        for a in [0.1, 0.3] {
            let tail = NodeSet::uniform(a, PI, 400, 16).integrate(|th| fejer(10, th)) * 2.0;
            assert!(tail <= 8.0 / (10.0 * a), "tail {tail} at a = {a}");
        }
        for k in 0..100 {
            assert!(fejer(6, k as f64 * 0.0731) >= 0.0);
        }
    }

    #[test]
    fn profile_properties() {
        let k = kernel100();
        let cfg = &k.cfg;
        let p = build_profile(k.h(), cfg).unwrap();
        let g0 = p.eval(0.0);
        let direct = NodeSet::uniform(0.0, k.h().s_max(), 2000, 8).integrate(|s| k.h().eval(s) * s * (PI * s).tanh());
        assert!(g0.im.abs() < 1e-10 * g0.re && g0.re > 0.0);
        assert!((g0.re - direct).abs() < 1e-6 * direct, "{} vs {direct}", g0.re);
        assert!(p.full.step <= PI / (8.0 * p.s_max));
        for &x in &[-0.4, -0.1, 0.0, 0.123, 0.37] {
            let sum = p.low.eval(x) + p.high.eval(x);
            assert!((sum - p.full.eval(x)).norm() <= 1e-10 * p.max_abs);
        }
        let fine = build_profile_with(k.h(), cfg, ProfileOptions { panel_width: 0.25, order: 12, ..Default::default() }).unwrap();
        for &x in &[-0.5, -0.2, 0.0, 0.05, 0.31] {
            assert!((fine.eval(x) - p.eval(x)).norm() <= 1e-6 * p.max_abs);
        }
    }

    #[test]
    fn kappa_is_left_k_invariant() {
        let k = kernel100();
        let p = build_profile(k.h(), &k.cfg).unwrap();
        let ev = KappaEvaluator::with_default_theta(p, &k.cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..5 {
            let g = GroupElement::an(rng.gen_range(-0.3..0.3), rng.gen_range(-0.2..0.2));
            let a = ev.eval(&g).unwrap().kappa;
            let rotated = GroupElement::rotation(rng.gen_range(-PI..PI)) * g;
            let b = ev.eval(&rotated).unwrap().kappa;
            assert!((a - b).norm() <= 1e-10 * a.norm().max(1e-12));
        }
    }

    #[test]
    fn theta_doubling_converges() {
        let k = kernel100();
        let p = build_profile(k.h(), &k.cfg).unwrap();
        let ev = KappaEvaluator::with_default_theta(p, &k.cfg);
        let fine = ev.refined(&k.cfg);
        let scale = ev.eval_an(0.0, 0.0).unwrap().kappa.norm();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let ball = k.cfg.tau.cosh() - 1.0;
        let mut done = 0;
        while done < 20 {
            let (t, u) = (rng.gen_range(-0.5..0.5), rng.gen_range(-0.52..0.52));
            if an_cosh_minus_one(t, u) > ball {
                continue;
            }
            let a = ev.eval_an(t, u).unwrap().kappa;
            let b = fine.eval_an(t, u).unwrap().kappa;
            assert!((a - b).norm() <= 1e-5 * b.norm().max(1e-3 * scale), "({t}, {u}): {a} vs {b}");
            done += 1;
        }
    }

    #[test]
    fn kappa_is_even_in_u() {
        let k = kernel100();
        let p = build_profile(k.h(), &k.cfg).unwrap();
        let ev = KappaEvaluator::with_default_theta(p, &k.cfg);
        for &(t, u) in &[(0.1, 0.05), (-0.2, 0.2), (0.3, 0.01)] {
            let a = ev.eval_an(t, u).unwrap().kappa;
            let b = ev.eval_an(t, -u).unwrap().kappa;
            assert!((a.norm() - b.norm()).abs() <= 1e-8 * a.norm().max(1e-300));
        }
    }

    #[test]
    fn field_mass_matches_kernel_norm() {
        let f = field100();
        let k = kernel100();
        let total = f.total_mass();
        assert!((total / k.norm_sq_spectral - 1.0).abs() < 0.02, "{total} vs {}", k.norm_sq_spectral);
        assert!(f.theta_check <= 1e-5);
        let peak = f.cells.iter().map(|c| c.value.kappa.norm()).fold(0.0, f64::max);
        for c in &f.cells {
            assert!((c.value.kappa - c.value.kappa1 - c.value.kappa2).norm() <= 1e-10 * peak);
        }
    }

    #[test]
    fn outside_mass_behaviour() {
        let f = field100();
        let huge = outside_mass(f, 1e6).unwrap();
        assert_eq!(huge.outside, 0.0);
        let sweep = calibrate_n(f, &DEFAULT_N_SWEEP, 0.05).unwrap();
        assert!(sweep.monotone);
        for row in &sweep.rows {
            assert!((row.inside + row.outside - row.total).abs() <= 1e-10 * row.total);
        }
        assert!(sweep.slope.unwrap() <= -0.4);
        assert!(sweep.n_star.is_some());
        // target 1 is met by the first sweep value
        let all = calibrate_n(f, &DEFAULT_N_SWEEP, 1.0).unwrap();
        assert_eq!(all.n_star, Some(DEFAULT_N_SWEEP[0]));
        let mut last = f64::INFINITY;
        for target in [0.01, 0.05, 0.2, 0.5, 0.9] {
            let n = calibrate_n(f, &DEFAULT_N_SWEEP, target).unwrap().n_star.unwrap_or(f64::INFINITY);
            assert!(n <= last);
            last = n;
        }
    }

    #[test]
    fn coarse_grid_is_rejected() {
        let f = field100();
        assert!(matches!(outside_mass(f, 1e-4), Err(Error::Resolution(_))));
    }

    #[test]
    fn split_report() {
        let f = field100();
        let rep = split_diagnostics(f, kernel100().h(), &DEFAULT_N_SWEEP);
        assert!(rep.kappa1_pass, "{}", rep.kappa1_ratio);
        assert!(rep.consistency <= 1e-10);
        assert!(rep.envelope.iter().all(|e| e.k2.is_some()));
    }

    #[test]
    fn eta_selection_default() {
        let sel = select_eta(kernel100().h(), 100.0, &ETA_CANDIDATES, 1e-3);
        assert_eq!(sel.eta, Some(0.8));
        for w in sel.fractions.windows(2) {
            assert!(w[1].1 >= w[0].1);
        }
    }

    #[test]
    fn slope_of_power_law() {
        let pts: Vec<(f64, f64)> = [1.0, 2.0, 4.0, 8.0].iter().map(|&n: &f64| (n, 3.0 * n.powf(-0.5))).collect();
        assert!((log_log_slope(&pts).unwrap() + 0.5).abs() < 1e-12);
        assert!(log_log_slope(&[(1.0, 0.0), (2.0, 0.0)]).is_none());
    }

    #[test]
    fn stationary_sample_is_rejected() {
        let cfg = SpectralConfig::default();
        let rep = nonstationary_phase_check(&cfg, &[PhaseSample { t: 0.1, u: 0.0, s: 90.0, m: 0.0 }]);
        assert!(!rep.results[0].accepted);
        assert!(rep.k7.is_none());
    }
}
