//! The transform chain `h <-> g -> Q -> k` for radial kernels on the
//! hyperbolic plane, the forward transform `k -> h`, and Plancherel norms.
//!
//! Conventions:
//!
//! * `h(s) = ∫ e^{isu} g(u) du` and `g(u) = (1/2π) ∫ e^{−isu} h(s) ds`.
//! * `g(u) = 2 Q(sinh²(u/2))`.
//! * `k(v) = −(1/π) ∫_v^∞ Q'(ω) (ω − v)^{−1/2} dω`, where `v = sinh²(d/2)`.
//!   A [`RadialProfile`] also exposes `k` in the coordinate
//!   `t = 2 sinh²(d/2) = cosh d − 1`, so `v = t/2`.
//! * On `ℍ` with the area measure `dx dy / y²`,
//!   `‖k‖² = (1/2π) ∫₀^∞ h(s)² s tanh(πs) ds`.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;
use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interp::Hermite;
use crate::quad::{pairwise_sum, pairwise_sum_complex, NodeSet};

/// Constant in front of the spectral-side Plancherel integral.
pub const PLANCHEREL_CONSTANT: f64 = 1.0 / (2.0 * PI);

type Profile = dyn Fn(f64) -> (f64, f64) + Send + Sync;

/// An even function on `[−support, support]` given by a closure returning
/// value and derivative.
#[derive(Clone)]
pub struct FourierSide {
    support: f64,
    f: Arc<Profile>,
}

impl std::fmt::Debug for FourierSide {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FourierSide").field("support", &self.support).finish_non_exhaustive()
    }
}

impl FourierSide {
    /// `f(x)` must return `(g(x), g'(x))` for `x ≥ 0`.
    pub fn new<F>(support: f64, f: F) -> Self
    where
        F: Fn(f64) -> (f64, f64) + Send + Sync + 'static,
    {
        assert!(support > 0.0, "support must be positive");
        Self { support, f: Arc::new(f) }
    }

    pub fn zero(support: f64) -> Self {
        Self::new(support, |_| (0.0, 0.0))
    }

    /// `(1/√2π) e^{−u²/2}` cut off at `|u| = support`.
    pub fn gaussian(support: f64) -> Self {
        let norm = 1.0 / (2.0 * PI).sqrt();
        Self::new(support, move |u| {
            let v = norm * (-0.5 * u * u).exp();
            (v, -u * v)
        })
    }

    pub fn support(&self) -> f64 {
        self.support
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.eval_with_derivative(x).0
    }

    /// Value and derivative, using evenness for negative arguments.
    pub fn eval_with_derivative(&self, x: f64) -> (f64, f64) {
        let ax = x.abs();
        if ax > self.support {
            return (0.0, 0.0);
        }
        let (v, d) = (self.f)(ax);
        (v, if x < 0.0 { -d } else { d })
    }

    pub fn scale(&self, alpha: f64) -> Self {
        let f = self.f.clone();
        Self::new(self.support, move |x| {
            let (v, d) = f(x);
            (alpha * v, alpha * d)
        })
    }

    pub fn add(&self, other: &FourierSide) -> Self {
        let (f, g) = (self.f.clone(), other.f.clone());
        let (sf, sg) = (self.support, other.support);
        Self::new(sf.max(sg), move |x| {
            let (a, da) = if x <= sf { f(x) } else { (0.0, 0.0) };
            let (b, db) = if x <= sg { g(x) } else { (0.0, 0.0) };
            (a + b, da + db)
        })
    }

    /// Pointwise product, with support the smaller of the two.
    pub fn mul(&self, other: &FourierSide) -> Self {
        let (f, g) = (self.f.clone(), other.f.clone());
        Self::new(self.support.min(other.support), move |x| {
            let (a, da) = f(x);
            let (b, db) = g(x);
            (a * b, da * b + a * db)
        })
    }

    pub fn to_csv(&self, path: &Path, samples: usize) -> Result<()> {
        let mut out = String::from("xi,g\n");
        for i in 0..samples {
            let x = self.support * i as f64 / (samples - 1).max(1) as f64;
            writeln!(out, "{:.12e},{:.12e}", x, self.eval(x)).ok();
        }
        write_file(path, &out)
    }
}

/// Decay model `h(s) ≈ h(s_max) ((s_max − center)/(s − center))^exponent`
/// beyond the sampled range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailModel {
    pub center: f64,
    pub exponent: f64,
}

/// An even spectral function sampled with derivatives on `[0, s_max]`.
#[derive(Debug, Clone)]
pub struct SpectralFunction {
    table: Hermite,
    pub tail: Option<TailModel>,
}

/// Piecewise uniform grid on `[0, s_max]`, finer on `dense`.
pub fn spectral_grid(s_max: f64, coarse: f64, dense: Option<(f64, f64, f64)>) -> Vec<f64> {
    let mut breaks = vec![(0.0, coarse)];
    if let Some((lo, hi, step)) = dense {
        let lo = lo.clamp(0.0, s_max);
        let hi = hi.clamp(0.0, s_max);
        if hi > lo {
            breaks = vec![(0.0, coarse), (lo, step), (hi, coarse)];
        }
    }
    let mut grid = Vec::new();
    for (k, &(start, step)) in breaks.iter().enumerate() {
        let end = breaks.get(k + 1).map_or(s_max, |b| b.0);
        if end <= start {
            continue;
        }
        let n = ((end - start) / step).ceil().max(1.0) as usize;
        for i in 0..n {
            grid.push(start + (end - start) * i as f64 / n as f64);
        }
    }
    grid.push(s_max);
    grid
}

impl SpectralFunction {
    /// Sample `f(s) -> (h, h')` on `grid` in parallel.
    pub fn from_fn<F>(grid: &[f64], f: F) -> Self
    where
        F: Fn(f64) -> (f64, f64) + Sync,
    {
        let pairs: Vec<(f64, f64)> = grid.par_iter().map(|&s| f(s)).collect();
        let (values, derivs) = pairs.into_iter().unzip();
        Self { table: Hermite::new(grid.to_vec(), values, derivs), tail: None }
    }

    pub fn from_samples(grid: Vec<f64>, values: Vec<f64>, derivs: Vec<f64>) -> Self {
        Self { table: Hermite::new(grid, values, derivs), tail: None }
    }

    pub fn zero(grid: &[f64]) -> Self {
        Self::from_fn(grid, |_| (0.0, 0.0))
    }

    pub fn with_tail(mut self, tail: TailModel) -> Self {
        self.tail = Some(tail);
        self
    }

    pub fn grid(&self) -> &[f64] {
        &self.table.x
    }

    pub fn values(&self) -> &[f64] {
        &self.table.values
    }

    pub fn derivs(&self) -> &[f64] {
        &self.table.derivs
    }

    pub fn s_max(&self) -> f64 {
        *self.table.x.last().unwrap()
    }

    pub fn max_abs(&self) -> f64 {
        self.table.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `h(s)` with `h(−s) = h(s)`; the tail model (or zero) beyond `s_max`.
    pub fn eval(&self, s: f64) -> f64 {
        let a = s.abs();
        if let Some(v) = self.table.eval(a) {
            return v;
        }
        match self.tail {
            Some(tail) => {
                let hm = *self.table.values.last().unwrap();
                hm * ((self.s_max() - tail.center) / (a - tail.center)).powf(tail.exponent)
            }
            None => 0.0,
        }
    }

    pub fn scale(&self, alpha: f64) -> Self {
        Self {
            table: Hermite::new(
                self.table.x.clone(),
                self.table.values.iter().map(|v| alpha * v).collect(),
                self.table.derivs.iter().map(|v| alpha * v).collect(),
            ),
            tail: self.tail,
        }
    }

    /// Sum of two functions sampled on the same grid.
    pub fn add(&self, other: &SpectralFunction) -> Result<Self> {
        if self.table.x != other.table.x {
            return Err(Error::Interface("spectral functions sampled on different grids".into()));
        }
        Ok(Self {
            table: Hermite::new(
                self.table.x.clone(),
                self.table.values.iter().zip(&other.table.values).map(|(a, b)| a + b).collect(),
                self.table.derivs.iter().zip(&other.table.derivs).map(|(a, b)| a + b).collect(),
            ),
            tail: self.tail.or(other.tail),
        })
    }

    /// Tail residual bound `∫_{s_max}^∞ h² s ds` under the tail model, or
    /// under `|s − center|^{−3}` decay when no model is attached.
    pub fn tail_bound(&self, default_center: f64) -> f64 {
        let hm = *self.table.values.last().unwrap();
        let smax = self.s_max();
        let (center, p) = match self.tail {
            Some(t) => (t.center, t.exponent),
            None => (default_center, 3.0),
        };
        let dist = smax - center;
        if hm == 0.0 {
            return 0.0;
        }
        if dist <= 0.0 || p <= 1.0 {
            return f64::INFINITY;
        }
        // ∫_D^∞ (x + center) (D/x)^{2p} dx
        hm * hm * (dist * dist / (2.0 * p - 2.0) + center * dist / (2.0 * p - 1.0))
    }

    pub fn to_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("s,h\n");
        for (s, h) in self.table.x.iter().zip(&self.table.values) {
            writeln!(out, "{:.12e},{:.12e}", s, h).ok();
        }
        write_file(path, &out)
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(text.as_bytes())?;
    Ok(())
}

/// Node set on `[0, support]` fine enough for frequencies up to `freq`.
fn cosine_nodes(support: f64, freq: f64, panels_floor: usize) -> NodeSet {
    let panels = ((freq * support / 3.0).ceil() as usize + 4).max(panels_floor);
    NodeSet::uniform(0.0, support, panels, 16)
}

fn h_from_nodes(nodes: &NodeSet, gv: &[f64], s: f64) -> (f64, f64) {
    let mut val = Vec::with_capacity(gv.len());
    let mut der = Vec::with_capacity(gv.len());
    for ((x, w), g) in nodes.nodes.iter().zip(&nodes.weights).zip(gv) {
        let (sn, cs) = (s * x).sin_cos();
        val.push(w * cs * g);
        der.push(-w * x * sn * g);
    }
    (2.0 * pairwise_sum(&val), 2.0 * pairwise_sum(&der))
}

/// `h(s) = 2 ∫₀^τ cos(su) g(u) du` and its derivative on `grid`.
///
/// Panel counts are doubled until the largest grid frequency agrees to
/// `1e-13` of the sampled maximum.
pub fn h_from_g(g: &FourierSide, grid: &[f64]) -> Result<SpectralFunction> {
    let s_top = grid.iter().fold(0.0f64, |m, s| m.max(s.abs()));
    let sample = |nodes: &NodeSet| -> Vec<f64> { nodes.nodes.iter().map(|&x| g.eval(x)).collect() };
    let mut floor = 8;
    let mut nodes = cosine_nodes(g.support(), s_top, floor);
    let mut gv = sample(&nodes);
    let probes = [s_top, 0.5 * s_top, 0.0];
    for _ in 0..6 {
        floor = 2 * (nodes.len() / 16);
        let fine = cosine_nodes(g.support(), s_top, floor);
        let gf = sample(&fine);
        let scale = probes
            .iter()
            .map(|&s| h_from_nodes(&fine, &gf, s).0.abs())
            .fold(gf.iter().fold(0.0f64, |m, v| m.max(v.abs())) * g.support(), f64::max);
        let gap = probes
            .iter()
            .map(|&s| (h_from_nodes(&fine, &gf, s).0 - h_from_nodes(&nodes, &gv, s).0).abs())
            .fold(0.0, f64::max);
        nodes = fine;
        gv = gf;
        if gap <= 1e-13 * scale.max(f64::MIN_POSITIVE) || scale == 0.0 {
            return Ok(SpectralFunction::from_fn(grid, |s| h_from_nodes(&nodes, &gv, s)));
        }
        if floor > 1 << 16 {
            return Err(Error::Precision { achieved: gap, requested: 1e-13 * scale });
        }
    }
    Err(Error::Precision { achieved: f64::NAN, requested: 1e-13 })
}

/// `g(u) = (1/π) ∫₀^∞ cos(su) h(s) ds`, evaluated on demand.
///
/// The returned side is cut off at `support`. Spectral functions that are
/// not negligible at `s_max` need an integrable tail model.
pub fn g_from_h(h: &SpectralFunction, support: f64) -> Result<FourierSide> {
    let smax = h.s_max();
    let hm = h.values().last().copied().unwrap_or(0.0).abs();
    let scale = h.max_abs();
    let negligible = hm <= 1e-14 * scale || scale == 0.0;
    let mut upper = smax;
    match h.tail {
        None if !negligible => {
            return Err(Error::TailModelRequired(format!(
                "|h(s_max)| = {hm:e} is not negligible against max |h| = {scale:e}"
            )))
        }
        Some(t) if !negligible && t.exponent <= 1.0 => {
            return Err(Error::TailModelRequired(format!(
                "tail exponent {} is not integrable",
                t.exponent
            )))
        }
        Some(t) if !negligible => {
            // extend until the model has decayed below 1e-14 of the peak
            let dist = smax - t.center;
            let factor = (hm / (1e-14 * scale)).powf(1.0 / t.exponent);
            upper = t.center + dist * factor;
        }
        _ => {}
    }
    let panels = ((upper * support / 2.0).ceil() as usize + 8).max(16);
    let mut breaks: Vec<f64> = (0..=panels).map(|i| smax * i as f64 / panels as f64).collect();
    if upper > smax {
        let extra = (((upper - smax) * support / 2.0).ceil() as usize).clamp(8, 1 << 16);
        breaks.extend((1..=extra).map(|i| smax + (upper - smax) * i as f64 / extra as f64));
    }
    let nodes = NodeSet::composite(&breaks, 16);
    let hv: Vec<f64> = nodes.nodes.iter().map(|&s| h.eval(s)).collect();
    let nodes = Arc::new(nodes);
    let hv = Arc::new(hv);
    Ok(FourierSide::new(support, move |u| {
        let mut val = Vec::with_capacity(hv.len());
        let mut der = Vec::with_capacity(hv.len());
        for ((s, w), hs) in nodes.nodes.iter().zip(&nodes.weights).zip(hv.iter()) {
            let (sn, cs) = (s * u).sin_cos();
            val.push(w * cs * hs);
            der.push(-w * s * sn * hs);
        }
        (pairwise_sum(&val) / PI, pairwise_sum(&der) / PI)
    }))
}

/// `Q` together with its derivative, supported on `[0, omega_max]`.
#[derive(Clone)]
pub struct QProfile {
    pub omega_max: f64,
    f: Arc<Profile>,
}

impl std::fmt::Debug for QProfile {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("QProfile").field("omega_max", &self.omega_max).finish_non_exhaustive()
    }
}

impl QProfile {
    pub fn from_fn<F>(omega_max: f64, f: F) -> Self
    where
        F: Fn(f64) -> (f64, f64) + Send + Sync + 'static,
    {
        Self { omega_max, f: Arc::new(f) }
    }

    pub fn eval(&self, omega: f64) -> f64 {
        self.eval_with_derivative(omega).0
    }

    pub fn eval_with_derivative(&self, omega: f64) -> (f64, f64) {
        if !(0.0..=self.omega_max).contains(&omega) {
            return (0.0, 0.0);
        }
        (self.f)(omega)
    }

    pub fn samples(&self, n: usize) -> Vec<(f64, f64)> {
        (0..n)
            .map(|i| {
                let w = self.omega_max * i as f64 / (n - 1).max(1) as f64;
                (w, self.eval(w))
            })
            .collect()
    }
}

/// `Q(ω) = g(2 arcsinh √ω) / 2`.
pub fn q_from_g(g: &FourierSide) -> QProfile {
    let g = g.clone();
    let omega_max = (0.5 * g.support()).sinh().powi(2);
    QProfile::from_fn(omega_max, move |omega| {
        let root = omega.sqrt();
        let u = 2.0 * root.asinh();
        let (v, d) = g.eval_with_derivative(u);
        let dq = if root > 0.0 {
            d / (2.0 * root * (1.0 + omega).sqrt())
        } else {
            // limit ω → 0 via a one-sided difference on g'
            let eps = 1e-6;
            g.eval_with_derivative(eps).1 / eps
        };
        (0.5 * v, dq)
    })
}

/// Quadrature resolution of the Abel integral.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AbelOptions {
    pub panels: usize,
    pub order: usize,
    /// Radial samples kept for export and norms.
    pub samples: usize,
}

impl Default for AbelOptions {
    fn default() -> Self {
        Self { panels: 64, order: 16, samples: 513 }
    }
}

/// Radial kernel obtained from `Q` by the Abel-type inversion.
#[derive(Debug, Clone)]
pub struct RadialProfile {
    q: QProfile,
    opts: AbelOptions,
    /// Geodesic radius `ρ` of each sample.
    pub rho: Vec<f64>,
    pub k: Vec<f64>,
    /// Largest change of a sample when the Abel panels are doubled.
    pub error_estimate: f64,
    pub warnings: Vec<String>,
}

fn abel(q: &QProfile, v: f64, panels: usize, order: usize) -> f64 {
    if v >= q.omega_max || v < 0.0 {
        return 0.0;
    }
    let ymax = (q.omega_max - v).sqrt();
    let nodes = NodeSet::uniform(0.0, ymax, panels, order);
    -2.0 / PI * nodes.integrate(|y| q.eval_with_derivative(v + y * y).1)
}

/// `k(v) = −(1/π) ∫₀^{√(ω_max − v)} 2 Q'(v + y²) dy`.
pub fn k_from_q(q: &QProfile, opts: AbelOptions) -> RadialProfile {
    let rho_max = 2.0 * q.omega_max.sqrt().asinh();
    let n = opts.samples.max(2);
    let rho: Vec<f64> = (0..n).map(|i| rho_max * i as f64 / (n - 1) as f64).collect();
    let pairs: Vec<(f64, f64)> = rho
        .par_iter()
        .map(|&r| {
            let v = (0.5 * r).sinh().powi(2);
            let a = abel(q, v, opts.panels, opts.order);
            let b = abel(q, v, 2 * opts.panels, opts.order);
            (a, (a - b).abs())
        })
        .collect();
    let k: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let error_estimate = pairs.iter().fold(0.0f64, |m, p| m.max(p.1));
    let kmax = k.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut warnings = Vec::new();
    if error_estimate > 1e-8 * kmax {
        warnings.push(format!(
            "Abel integral not converged near the support edge: estimate {error_estimate:e} against max |k| {kmax:e}"
        ));
    }
    RadialProfile { q: q.clone(), opts, rho, k, error_estimate, warnings }
}

impl RadialProfile {
    /// `k` as a function of `v = sinh²(d/2)`.
    pub fn eval_v(&self, v: f64) -> f64 {
        abel(&self.q, v, self.opts.panels, self.opts.order)
    }

    /// `k` as a function of `t = 2 sinh²(d/2)`.
    pub fn eval_t(&self, t: f64) -> f64 {
        self.eval_v(0.5 * t)
    }

    /// `k` as a function of the geodesic distance.
    pub fn eval_rho(&self, rho: f64) -> f64 {
        self.eval_v((0.5 * rho).sinh().powi(2))
    }

    pub fn rho_max(&self) -> f64 {
        2.0 * self.q.omega_max.sqrt().asinh()
    }

    /// Support end in the `t` coordinate, `2 sinh²(ρ_max/2)`.
    pub fn t_max(&self) -> f64 {
        2.0 * self.q.omega_max
    }

    pub fn max_abs(&self) -> f64 {
        self.k.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn q(&self) -> &QProfile {
        &self.q
    }

    pub fn to_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("t,k\n");
        for (r, k) in self.rho.iter().zip(&self.k) {
            writeln!(out, "{:.12e},{:.12e}", 2.0 * (0.5 * r).sinh().powi(2), k).ok();
        }
        write_file(path, &out)
    }
}

/// `∫_ℍ |k|² dμ = ∫₀^∞ |k(ρ)|² 2π sinh ρ dρ`.
pub fn spatial_norm_sq(k: &RadialProfile, panels: usize) -> f64 {
    let nodes = NodeSet::uniform(0.0, k.rho_max(), panels, 16);
    let terms: Vec<f64> = nodes
        .nodes
        .par_iter()
        .zip(&nodes.weights)
        .map(|(r, w)| {
            let v = k.eval_rho(*r);
            w * v * v * 2.0 * PI * r.sinh()
        })
        .collect();
    pairwise_sum(&terms)
}

/// Resolution of the forward transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForwardOptions {
    pub rho_panels: usize,
    pub order: usize,
    /// Multiplier on the angular sample count.
    pub alpha_oversample: f64,
}

impl Default for ForwardOptions {
    fn default() -> Self {
        Self { rho_panels: 32, order: 16, alpha_oversample: 1.0 }
    }
}

/// `h(s) = ∫_ℍ e^{(−is + 1/2)⟨z, b⟩} k(z) dμ(z)` in geodesic polar
/// coordinates about the origin of the disc, with boundary point `e^{iβ}`.
pub fn h_from_k_forward(
    k: &RadialProfile,
    s_grid: &[f64],
    beta: f64,
    opts: ForwardOptions,
) -> SpectralFunction {
    let s_top = s_grid.iter().fold(0.0f64, |m, s| m.max(s.abs()));
    let nodes = NodeSet::uniform(0.0, k.rho_max(), opts.rho_panels, opts.order);
    // per radial node: weight · k · sinh ρ, and the bracket ⟨w, b⟩ on an α grid
    let rings: Vec<(f64, Vec<f64>)> = nodes
        .nodes
        .par_iter()
        .zip(&nodes.weights)
        .map(|(&rho, &w)| {
            let n_alpha = ((12.0 * rho.exp()).max(2.0 * s_top * rho + 64.0) * opts.alpha_oversample)
                .ceil()
                .max(64.0) as usize;
            let rr = (0.5 * rho).tanh();
            let brackets = (0..n_alpha)
                .map(|j| {
                    let alpha = 2.0 * PI * j as f64 / n_alpha as f64;
                    let wz = Complex64::from_polar(rr, alpha);
                    ((1.0 - rr * rr) / (wz - Complex64::from_polar(1.0, beta)).norm_sqr()).ln()
                })
                .collect();
            (w * k.eval_rho(rho) * rho.sinh() * 2.0 * PI, brackets)
        })
        .collect();
    SpectralFunction::from_fn(s_grid, |s| {
        let e = Complex64::new(0.5, -s);
        let mut val = Vec::with_capacity(rings.len());
        let mut der = Vec::with_capacity(rings.len());
        for (wk, brackets) in &rings {
            let terms: Vec<Complex64> = brackets.iter().map(|&b| (e * b).exp()).collect();
            let dterms: Vec<Complex64> = brackets
                .iter()
                .zip(&terms)
                .map(|(&b, &t)| t * Complex64::new(0.0, -b))
                .collect();
            let n = brackets.len() as f64;
            val.push(wk * pairwise_sum_complex(&terms).re / n);
            der.push(wk * pairwise_sum_complex(&dterms).re / n);
        }
        (pairwise_sum(&val), pairwise_sum(&der))
    })
}

/// Spectral-side norm with its truncation estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlancherelNorm {
    pub value: f64,
    pub tail_bound: f64,
}

/// `(1/2π) ∫₀^∞ h(s)² s tanh(πs) ds`, over `[lo, hi]` when given.
pub fn plancherel_integral(h: &SpectralFunction, lo: f64, hi: f64) -> f64 {
    let panels = (((hi - lo) / 0.5).ceil() as usize).max(4);
    let nodes = NodeSet::uniform(lo, hi, panels, 16);
    PLANCHEREL_CONSTANT
        * nodes.integrate(|s| {
            let v = h.eval(s);
            v * v * s * (PI * s).tanh()
        })
}

pub fn plancherel_norm(h: &SpectralFunction, rel_tol: f64, default_center: f64) -> Result<PlancherelNorm> {
    let value = plancherel_integral(h, 0.0, h.s_max());
    let tail_bound = PLANCHEREL_CONSTANT * h.tail_bound(default_center);
    if tail_bound > rel_tol * value.max(f64::MIN_POSITIVE) && tail_bound > 0.0 {
        return Err(Error::Precision { achieved: tail_bound, requested: rel_tol * value });
    }
    Ok(PlancherelNorm { value, tail_bound })
}

/// The Gaussian transform pair used to pin conventions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub spatial: f64,
    pub spectral_raw: f64,
    /// `spatial / spectral_raw`; expected to equal [`PLANCHEREL_CONSTANT`].
    pub constant: f64,
    pub relative_deviation: f64,
}

/// Measures the Plancherel constant on the Gaussian pair.
pub fn calibrate_plancherel() -> Calibration {
    let g = FourierSide::gaussian(8.0);
    let k = k_from_q(&q_from_g(&g), AbelOptions { samples: 2, ..AbelOptions::default() });
    let spatial = spatial_norm_sq(&k, 64);
    let nodes = NodeSet::uniform(0.0, 12.0, 48, 16);
    let spectral_raw = nodes.integrate(|s| (-s * s).exp() * s * (PI * s).tanh());
    let constant = spatial / spectral_raw;
    Calibration {
        spatial,
        spectral_raw,
        constant,
        relative_deviation: (constant / PLANCHEREL_CONSTANT - 1.0).abs(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gaussian_h(grid: &[f64]) -> SpectralFunction {
        SpectralFunction::from_fn(grid, |s| {
            let v = (-0.5 * s * s).exp();
            (v, -s * v)
        })
    }

    #[test]
    fn gaussian_forward_pair() {
        let grid = spectral_grid(10.0, 0.05, None);
        let h = h_from_g(&FourierSide::gaussian(8.0), &grid).unwrap();
        for (&s, &v) in h.grid().iter().zip(h.values()) {
            let exact = (-0.5 * s * s).exp();
            // below 1e-7 the comparison measures roundoff, not the transform
            if exact > 1e-7 {
                assert!((v - exact).abs() <= 1e-8 * exact, "s={s}: {v} vs {exact}");
            }
        }
    }

    #[test]
    fn gaussian_inverse_pair() {
        let grid = spectral_grid(12.0, 0.005, None);
        let g = g_from_h(&gaussian_h(&grid), 8.0).unwrap();
        let reference = FourierSide::gaussian(8.0);
        for k in 0..40 {
            let u = 0.1 * k as f64;
            let (exact, dexact) = reference.eval_with_derivative(u);
            let (v, d) = g.eval_with_derivative(u);
            assert!((v - exact).abs() <= 1e-8 * exact, "u={u}: {v} vs {exact}");
            assert!((d - dexact).abs() <= 1e-8 * exact.max(dexact.abs()));
        }
    }

    #[test]
    fn zero_maps_to_zero() {
        let grid = spectral_grid(5.0, 0.1, None);
        let h = h_from_g(&FourierSide::zero(0.5), &grid).unwrap();
        assert!(h.values().iter().all(|&v| v == 0.0));
        let g = g_from_h(&SpectralFunction::zero(&grid), 1.0).unwrap();
        assert_eq!(g.eval(0.3), 0.0);
        let k = k_from_q(&q_from_g(&FourierSide::zero(0.5)), AbelOptions::default());
        assert!(k.k.iter().all(|&v| v == 0.0));
        let back = h_from_k_forward(&k, &[0.0, 1.0], 0.0, ForwardOptions::default());
        assert!(back.values().iter().all(|&v| v == 0.0));
        assert_eq!(plancherel_norm(&SpectralFunction::zero(&grid), 1e-6, 0.0).unwrap().value, 0.0);
    }

    #[test]
    fn unintegrable_tail_is_rejected() {
        let grid = spectral_grid(10.0, 0.1, None);
        let h = SpectralFunction::from_fn(&grid, |s| (1.0 / (1.0 + s), -1.0 / (1.0 + s).powi(2)));
        assert!(matches!(g_from_h(&h, 1.0), Err(Error::TailModelRequired(_))));
        let slow = h.clone().with_tail(TailModel { center: -1.0, exponent: 1.0 });
        assert!(matches!(g_from_h(&slow, 1.0), Err(Error::TailModelRequired(_))));
        let ok = h.with_tail(TailModel { center: -1.0, exponent: 3.0 });
        assert!(g_from_h(&ok, 1.0).is_ok());
    }

    #[test]
    fn q_examples() {
        let g = FourierSide::gaussian(1.0);
        let q = q_from_g(&g);
        assert_eq!(q.eval(0.0), 0.5 * g.eval(0.0));
        assert_eq!(q.eval((0.5f64).sinh().powi(2) + 1e-9), 0.0);
        for k in 0..20 {
            let u = 0.05 * k as f64;
            let back = 2.0 * q.eval((0.5 * u).sinh().powi(2));
            assert!((back - g.eval(u)).abs() <= 1e-10);
        }
        // Q' against a difference quotient
        for w in [1e-3, 0.05, 0.2] {
            let e = 1e-6;
            let fd = (q.eval(w + e) - q.eval(w - e)) / (2.0 * e);
            assert!((fd - q.eval_with_derivative(w).1).abs() < 1e-7);
        }
    }

    #[test]
    fn abel_closed_form() {
        let q = QProfile::from_fn(1.0, |w| ((1.0 - w).powi(2), -2.0 * (1.0 - w)));
        let k = k_from_q(&q, AbelOptions::default());
        for i in 0..=90 {
            let v = 0.01 * i as f64;
            let exact = 8.0 / (3.0 * PI) * (1.0 - v).powf(1.5);
            assert!((k.eval_v(v) - exact).abs() <= 1e-6 * exact, "v={v}");
        }
    }

    #[test]
    fn support_propagates() {
        let tau = 0.5;
        let g = FourierSide::new(tau, move |u| {
            let x = u / tau;
            if x >= 1.0 {
                (0.0, 0.0)
            } else {
                let b = (-1.0 / (1.0 - x * x)).exp();
                (b, b * (-2.0 * x / (1.0 - x * x).powi(2)) / tau)
            }
        });
        let k = k_from_q(&q_from_g(&g), AbelOptions::default());
        let tmax = 2.0 * (0.5 * tau).sinh().powi(2);
        assert!((k.t_max() - tmax).abs() < 1e-15);
        let kmax = k.max_abs();
        for f in [1.0, 1.01, 1.05, 2.0] {
            assert!(k.eval_t(tmax * f).abs() <= 1e-10 * kmax);
        }
    }

    #[test]
    fn linearity_of_the_chain() {
        let a = FourierSide::gaussian(3.0);
        let b = FourierSide::new(3.0, |u| ((2.0 * u).cos() * (-u * u).exp(), (-2.0 * (2.0 * u).sin() - 2.0 * u * (2.0 * u).cos()) * (-u * u).exp()));
        let combo = a.scale(0.7).add(&b.scale(-1.3));
        let grid = spectral_grid(6.0, 0.1, None);
        let ha = h_from_g(&a, &grid).unwrap();
        let hb = h_from_g(&b, &grid).unwrap();
        let hc = h_from_g(&combo, &grid).unwrap();
        let expect = ha.scale(0.7).add(&hb.scale(-1.3)).unwrap();
        for (x, y) in hc.values().iter().zip(expect.values()) {
            assert!((x - y).abs() <= 1e-12);
        }
        let opts = AbelOptions { samples: 17, ..AbelOptions::default() };
        let ka = k_from_q(&q_from_g(&a), opts);
        let kb = k_from_q(&q_from_g(&b), opts);
        let kc = k_from_q(&q_from_g(&combo), opts);
        for i in 0..17 {
            assert!((kc.k[i] - (0.7 * ka.k[i] - 1.3 * kb.k[i])).abs() <= 1e-12 * (1.0 + ka.k[i].abs()));
        }
    }

    #[test]
    fn interpolation_holds_on_held_out_points() {
        let grid = spectral_grid(10.0, 0.01, Some((3.0, 5.0, 0.005)));
        let h = gaussian_h(&grid);
        for w in grid.windows(2) {
            let s = 0.5 * (w[0] + w[1]);
            assert!((h.eval(s) - (-0.5 * s * s).exp()).abs() <= 1e-8);
            assert_eq!(h.eval(-s), h.eval(s));
        }
    }

    #[test]
    fn plancherel_constant_is_one_over_two_pi() {
        let cal = calibrate_plancherel();
        assert!(cal.relative_deviation <= 1e-3, "{cal:?}");
    }
}
