//! Spectral-window bases on a patch of the upper half-plane, the
//! extremal-point quasimode and the tube-mass inequality chain.
//!
//! The synthetic basis consists of exact Laplace eigenfunctions: each raw
//! entry is a superposition of boundary plane waves
//! `P_β(z) = Im(k_{β/2} z)^{½+is} = (y (1 + b²) / |z − b|²)^{½+is}` with
//! `b = −cot(β/2)`, orthonormalized in the patch inner product.

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::SpectralConfig;
use crate::error::{Error, Result};
use crate::group::{GroupElement, Region, RegionKind};
use crate::ladder::LiftWeights;
use crate::microlocal::{log_log_slope, outside_mass, MicrolocalField};
use crate::quad::{pairwise_sum, pairwise_sum_complex};
use crate::transforms::SpectralFunction;

/// Samples per side of the default patch.
pub const PATCH_SAMPLES: usize = 256;
/// Boundary plane waves per synthetic entry.
pub const WAVES_PER_ENTRY: usize = 32;
/// Gram condition number above which a synthetic draw is discarded.
pub const MAX_CONDITION: f64 = 1e8;
/// Redraws attempted before giving up.
pub const MAX_ATTEMPTS: u64 = 8;
/// Relative eigenfunction residual accepted for synthetic entries.
pub const RESIDUAL_TOL: f64 = 1e-3;
/// Five-point stencil step of the residual check.
pub const RESIDUAL_STEP: f64 = 1e-4;
/// Current `.qmb` format version.
pub const QMB_VERSION: u32 = 1;

/// Rectangular sampling grid, row-major with `x` varying fastest.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatchGrid {
    pub x0: f64,
    pub y0: f64,
    pub dx: f64,
    pub dy: f64,
    pub nx: usize,
    pub ny: usize,
}

impl PatchGrid {
    /// `[−τ, τ] × [1 − τ, 1 + τ]` with `n` samples per side, endpoints included.
    pub fn centered(tau: f64, n: usize) -> Self {
        let step = 2.0 * tau / (n - 1) as f64;
        Self { x0: -tau, y0: 1.0 - tau, dx: step, dy: step, nx: n, ny: n }
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    pub fn coords(&self, k: usize) -> (usize, usize) {
        (k % self.nx, k / self.nx)
    }

    pub fn point(&self, i: usize, j: usize) -> Complex64 {
        Complex64::new(self.x0 + i as f64 * self.dx, self.y0 + j as f64 * self.dy)
    }

    fn validate(&self) -> std::result::Result<(), String> {
        let finite = [self.x0, self.y0, self.dx, self.dy].iter().all(|v| v.is_finite());
        if !finite || self.dx <= 0.0 || self.dy <= 0.0 {
            return Err("grid spacing must be positive and finite".into());
        }
        if self.nx < 2 || self.ny < 2 {
            return Err(format!("grid must be at least 2x2, got {}x{}", self.nx, self.ny));
        }
        if self.y0 <= 0.0 {
            return Err(format!("grid leaves the upper half-plane (y0 = {})", self.y0));
        }
        Ok(())
    }

    /// Trapezoid weights for the area element `dx dy / y²`.
    pub fn weights(&self) -> Vec<f64> {
        let edge = |k: usize, n: usize| if k == 0 || k + 1 == n { 0.5 } else { 1.0 };
        (0..self.len())
            .map(|k| {
                let (i, j) = self.coords(k);
                let y = self.y0 + j as f64 * self.dy;
                edge(i, self.nx) * edge(j, self.ny) * self.dx * self.dy / (y * y)
            })
            .collect()
    }

    pub fn area(&self) -> f64 {
        pairwise_sum(&self.weights())
    }
}

/// One boundary plane wave with its coefficient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryWave {
    pub beta: f64,
    pub coef: Complex64,
}

impl BoundaryWave {
    pub fn boundary_point(&self) -> f64 {
        -1.0 / (0.5 * self.beta).tan()
    }

    /// `coef · Im(k_{β/2} z)^{½+is}`.
    #[inline]
    pub fn eval(&self, s: f64, z: Complex64) -> Complex64 {
        let (sn, cs) = (0.5 * self.beta).sin_cos();
        let den = (z * sn + cs).norm_sqr();
        self.coef * (Complex64::new(0.5, s) * (z.im / den).ln()).exp()
    }
}

/// A raw synthetic entry before orthonormalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawFunction {
    pub s: f64,
    pub waves: Vec<BoundaryWave>,
}

impl RawFunction {
    pub fn eval(&self, z: Complex64) -> Complex64 {
        self.waves.iter().map(|w| w.eval(self.s, z)).sum()
    }

    /// `y² (∂ₓ² + ∂_y²)` by the five-point stencil at steps `h` and `h/2`,
    /// Richardson-combined.
    pub fn laplacian(&self, z: Complex64, h: f64) -> Complex64 {
        let stencil = |h: f64| {
            let f = |dx: f64, dy: f64| self.eval(z + Complex64::new(dx, dy));
            (f(h, 0.0) + f(-h, 0.0) + f(0.0, h) + f(0.0, -h) - 4.0 * f(0.0, 0.0)) / (h * h)
        };
        z.im * z.im * (4.0 * stencil(0.5 * h) - stencil(h)) / 3.0
    }

    /// `‖(Δ + ¼ + s²) f‖ / ‖f‖` over an interior `16 × 16` subgrid.
    pub fn residual(&self, grid: &PatchGrid) -> f64 {
        let m = 16;
        let lam = 0.25 + self.s * self.s;
        let w = grid.dx * (grid.nx - 1) as f64;
        let hgt = grid.dy * (grid.ny - 1) as f64;
        let (mut num, mut den) = (Vec::new(), Vec::new());
        for j in 0..m {
            for i in 0..m {
                let z = Complex64::new(
                    grid.x0 + (i as f64 + 0.5) * w / m as f64,
                    grid.y0 + (j as f64 + 0.5) * hgt / m as f64,
                );
                let f = self.eval(z);
                let res = self.laplacian(z, RESIDUAL_STEP) + lam * f;
                let wt = 1.0 / (z.im * z.im);
                num.push(wt * res.norm_sqr());
                den.push(wt * f.norm_sqr());
            }
        }
        (pairwise_sum(&num) / pairwise_sum(&den)).sqrt()
    }
}

/// How a synthetic basis was produced; kept for analytic evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisRecord {
    pub seed: u64,
    pub attempts: u64,
    pub raw: Vec<RawFunction>,
    /// Row `l` expresses entry `l` in the raw functions.
    pub mixing: Vec<Vec<Complex64>>,
    pub residuals: Vec<f64>,
    pub condition: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BasisSource {
    File,
    Synthetic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisEntry {
    pub s: f64,
    pub values: Vec<Complex64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EigenBasis {
    pub r: f64,
    pub window: f64,
    pub grid: PatchGrid,
    pub entries: Vec<BasisEntry>,
    pub source: BasisSource,
    pub synthesis: Option<SynthesisRecord>,
}

fn inner(w: &[f64], a: &[Complex64], b: &[Complex64], nx: usize) -> Complex64 {
    let rows: Vec<Complex64> = w
        .par_chunks(nx)
        .zip(a.par_chunks(nx))
        .zip(b.par_chunks(nx))
        .map(|((w, a), b)| {
            let terms: Vec<Complex64> = w.iter().zip(a).zip(b).map(|((w, a), b)| *w * a.conj() * b).collect();
            pairwise_sum_complex(&terms)
        })
        .collect();
    pairwise_sum_complex(&rows)
}

impl EigenBasis {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn check_window(&self) -> Result<()> {
        let (lo, hi) = (self.r - self.window, self.r + self.window);
        match self.entries.iter().find(|e| !(e.s >= lo && e.s <= hi)) {
            Some(e) => Err(Error::WindowViolation { s: e.s, lo, hi }),
            None => Ok(()),
        }
    }

    /// Entrywise `⟨φ_a, φ_b⟩` in the patch inner product.
    pub fn gram(&self) -> Vec<Vec<Complex64>> {
        let w = self.grid.weights();
        let d = self.len();
        let mut g = vec![vec![Complex64::new(0.0, 0.0); d]; d];
        for a in 0..d {
            for b in a..d {
                let v = inner(&w, &self.entries[a].values, &self.entries[b].values, self.grid.nx);
                g[a][b] = v;
                g[b][a] = v.conj();
            }
        }
        g
    }

    /// `max |G − I|` over the Gram matrix.
    pub fn gram_deviation(&self) -> f64 {
        let g = self.gram();
        let mut dev: f64 = 0.0;
        for (a, row) in g.iter().enumerate() {
            for (b, v) in row.iter().enumerate() {
                let id = if a == b { 1.0 } else { 0.0 };
                dev = dev.max((v - id).norm());
            }
        }
        dev
    }

    /// `Σ_l |φ_l|²` on the grid.
    pub fn density(&self) -> Vec<f64> {
        (0..self.grid.len())
            .into_par_iter()
            .map(|k| self.entries.iter().map(|e| e.values[k].norm_sqr()).sum())
            .collect()
    }

    /// Entry `l` at an arbitrary point, when the basis is synthetic.
    pub fn eval_entry(&self, l: usize, z: Complex64) -> Option<Complex64> {
        let rec = self.synthesis.as_ref()?;
        Some(rec.mixing[l].iter().zip(&rec.raw).map(|(m, f)| m * f.eval(z)).sum())
    }

    /// Save in the `.qmb` format.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        out.write_all(&self.to_bytes()?)?;
        out.flush()?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = QmbHeader {
            version: QMB_VERSION,
            r: self.r,
            window: self.window,
            grid: self.grid,
            count: self.len(),
        };
        let mut buf = serde_json::to_vec(&header).map_err(|e| Error::Interface(e.to_string()))?;
        buf.push(b'\n');
        buf.reserve(self.len() * (8 + 16 * self.grid.len()));
        for e in &self.entries {
            if e.values.len() != self.grid.len() {
                return Err(Error::Interface(format!(
                    "entry has {} samples, grid has {}",
                    e.values.len(),
                    self.grid.len()
                )));
            }
            buf.extend_from_slice(&e.s.to_le_bytes());
            for v in &e.values {
                buf.extend_from_slice(&v.re.to_le_bytes());
                buf.extend_from_slice(&v.im.to_le_bytes());
            }
        }
        Ok(buf)
    }
}

/// Header line of a `.qmb` file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QmbHeader {
    pub version: u32,
    pub r: f64,
    #[serde(rename = "C")]
    pub window: f64,
    pub grid: PatchGrid,
    pub count: usize,
}

pub fn load_basis(path: &Path) -> Result<EigenBasis> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    parse_basis(&bytes)
}

/// Parse `.qmb` bytes: one JSON header line, then per entry `s_l` and the
/// `(re, im)` samples as little-endian `f64`.
pub fn parse_basis(bytes: &[u8]) -> Result<EigenBasis> {
    let ingest = |offset: usize, message: String| Error::Ingestion { offset: offset as u64, message };
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| ingest(bytes.len(), "header line is not terminated".into()))?;
    let header: QmbHeader =
        serde_json::from_slice(&bytes[..nl]).map_err(|e| ingest(e.column().saturating_sub(1), format!("malformed header: {e}")))?;
    if header.version != QMB_VERSION {
        return Err(ingest(0, format!("unsupported version {}", header.version)));
    }
    header.grid.validate().map_err(|m| ingest(0, format!("invalid grid: {m}")))?;
    if !(header.r.is_finite() && header.window.is_finite() && header.window > 0.0) {
        return Err(ingest(0, "r and C must be finite with C > 0".into()));
    }
    if header.count == 0 {
        return Err(ingest(0, "basis has no entries".into()));
    }
    let n = header.grid.len();
    let entry_bytes = 8 + 16 * n;
    let start = nl + 1;
    let expected = start + header.count * entry_bytes;
    if bytes.len() < expected {
        let entry = (bytes.len() - start) / entry_bytes;
        return Err(ingest(
            bytes.len(),
            format!("file truncated in entry {entry}: expected {expected} bytes, found {}", bytes.len()),
        ));
    }
    if bytes.len() > expected {
        return Err(ingest(expected, format!("{} trailing bytes after the last entry", bytes.len() - expected)));
    }
    let read = |off: usize| f64::from_le_bytes(bytes[off..off + 8].try_into().expect("8-byte slice"));
    let mut entries = Vec::with_capacity(header.count);
    for e in 0..header.count {
        let base = start + e * entry_bytes;
        let s = read(base);
        if !s.is_finite() {
            return Err(ingest(base, format!("non-finite spectral parameter in entry {e}")));
        }
        let mut values = Vec::with_capacity(n);
        for k in 0..n {
            let off = base + 8 + 16 * k;
            let v = Complex64::new(read(off), read(off + 8));
            if !(v.re.is_finite() && v.im.is_finite()) {
                return Err(ingest(off, format!("non-finite sample {k} in entry {e}")));
            }
            values.push(v);
        }
        entries.push(BasisEntry { s, values });
    }
    let basis = EigenBasis {
        r: header.r,
        window: header.window,
        grid: header.grid,
        entries,
        source: BasisSource::File,
        synthesis: None,
    };
    basis.check_window()?;
    Ok(basis)
}

fn draw_raw(rng: &mut ChaCha8Rng, cfg: &SpectralConfig) -> RawFunction {
    let s = rng.gen_range(cfg.r - cfg.window..=cfg.r + cfg.window);
    let amp = 1.0 / (WAVES_PER_ENTRY as f64).sqrt();
    let waves = (0..WAVES_PER_ENTRY)
        .map(|_| BoundaryWave {
            beta: rng.gen_range(0.0..2.0 * PI),
            coef: Complex64::from_polar(amp, rng.gen_range(0.0..2.0 * PI)),
        })
        .collect();
    RawFunction { s, waves }
}

fn sample_raw(f: &RawFunction, grid: &PatchGrid) -> Vec<Complex64> {
    (0..grid.len())
        .into_par_iter()
        .map(|k| {
            let (i, j) = grid.coords(k);
            f.eval(grid.point(i, j))
        })
        .collect()
}

fn condition_number(gram: &[Vec<Complex64>]) -> f64 {
    let d = gram.len();
    let m = DMatrix::from_fn(d, d, |a, b| gram[a][b]);
    let eig = m.symmetric_eigenvalues();
    let max = eig.iter().cloned().fold(f64::MIN, f64::max);
    let min = eig.iter().cloned().fold(f64::MAX, f64::min);
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Synthetic basis of `d` orthonormalized plane-wave superpositions on the
/// default patch.
pub fn synth_basis(cfg: &SpectralConfig, d: usize, seed: u64) -> Result<EigenBasis> {
    synth_basis_on(cfg, d, seed, PatchGrid::centered(cfg.tau, PATCH_SAMPLES))
}

pub fn synth_basis_on(cfg: &SpectralConfig, d: usize, seed: u64, grid: PatchGrid) -> Result<EigenBasis> {
    if d == 0 {
        return Err(Error::Config("basis size must be at least 1".into()));
    }
    grid.validate().map_err(Error::Config)?;
    let w = grid.weights();
    let mut worst = 0.0;
    for attempt in 0..MAX_ATTEMPTS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(attempt.wrapping_mul(0x9E37_79B9_7F4A_7C15)));
        let mut raw: Vec<RawFunction> = (0..d).map(|_| draw_raw(&mut rng, cfg)).collect();
        let mut residuals = Vec::with_capacity(d);
        for f in &raw {
            let res = f.residual(&grid);
            if res > RESIDUAL_TOL {
                return Err(Error::Precision { achieved: res, requested: RESIDUAL_TOL });
            }
            residuals.push(res);
        }
        let mut vals: Vec<Vec<Complex64>> = raw.iter().map(|f| sample_raw(f, &grid)).collect();
        for (f, v) in raw.iter_mut().zip(vals.iter_mut()) {
            let norm = inner(&w, v, v, grid.nx).re.sqrt();
            v.iter_mut().for_each(|x| *x /= norm);
            f.waves.iter_mut().for_each(|wv| wv.coef /= norm);
        }
        let gram: Vec<Vec<Complex64>> = (0..d)
            .map(|a| (0..d).map(|b| inner(&w, &vals[a], &vals[b], grid.nx)).collect())
            .collect();
        let condition = condition_number(&gram);
        if condition > MAX_CONDITION {
            worst = condition;
            continue;
        }
        let mut mixing: Vec<Vec<Complex64>> = (0..d)
            .map(|l| (0..d).map(|j| Complex64::new(if j == l { 1.0 } else { 0.0 }, 0.0)).collect())
            .collect();
        for l in 0..d {
            for _pass in 0..2 {
                for k in 0..l {
                    let proj = inner(&w, &vals[k], &vals[l], grid.nx);
                    let (done, rest) = vals.split_at_mut(l);
                    rest[0].par_iter_mut().zip(done[k].par_iter()).for_each(|(x, y)| *x -= proj * y);
                    let (mdone, mrest) = mixing.split_at_mut(l);
                    mrest[0].iter_mut().zip(&mdone[k]).for_each(|(x, y)| *x -= proj * y);
                }
            }
            let norm = inner(&w, &vals[l], &vals[l], grid.nx).re.sqrt();
            vals[l].iter_mut().for_each(|x| *x /= norm);
            mixing[l].iter_mut().for_each(|x| *x /= norm);
        }
        let entries = raw
            .iter()
            .zip(vals)
            .map(|(f, values)| BasisEntry { s: f.s, values })
            .collect();
        return Ok(EigenBasis {
            r: cfg.r,
            window: cfg.window,
            grid,
            entries,
            source: BasisSource::Synthetic,
            synthesis: Some(SynthesisRecord { seed, attempts: attempt + 1, raw, mixing, residuals, condition }),
        });
    }
    Err(Error::IllConditioned { condition: worst })
}

/// A grid point of the patch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatchPoint {
    pub index: usize,
    pub i: usize,
    pub j: usize,
    pub x: f64,
    pub y: f64,
}

impl PatchPoint {
    pub fn z(&self) -> Complex64 {
        Complex64::new(self.x, self.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Extremal {
    pub point: PatchPoint,
    pub peak: f64,
    /// `(1/area) ∫ Σ|φ_l|²`.
    pub mean: f64,
}

/// `argmax_p Σ_l |φ_l(p)|²` over the grid; ties go to the lowest index.
pub fn extremal_point(basis: &EigenBasis) -> Result<Extremal> {
    if basis.is_empty() {
        return Err(Error::Interface("extremal point of an empty basis".into()));
    }
    let dens = basis.density();
    let mut best = 0;
    for (k, v) in dens.iter().enumerate() {
        if *v > dens[best] {
            best = k;
        }
    }
    let w = basis.grid.weights();
    let mass: Vec<f64> = w.iter().zip(&dens).map(|(w, d)| w * d).collect();
    let mean = pairwise_sum(&mass) / pairwise_sum(&w);
    let (i, j) = basis.grid.coords(best);
    let z = basis.grid.point(i, j);
    Ok(Extremal { point: PatchPoint { index: best, i, j, x: z.re, y: z.im }, peak: dens[best], mean })
}

/// `ψ = Σ_l conj(φ_l(p)) φ_l`, so that `ψ(p) = Σ |φ_l(p)|² = ‖ψ‖²`.
#[derive(Debug, Clone, PartialEq)]
pub struct Quasimode {
    pub point: PatchPoint,
    pub coefficients: Vec<Complex64>,
    pub values: Vec<Complex64>,
    /// `Σ |c_l|²`.
    pub coefficient_norm_sq: f64,
    /// `‖ψ‖²` by grid quadrature.
    pub norm_sq: f64,
}

impl Quasimode {
    pub fn at_point(&self) -> Complex64 {
        self.values[self.point.index]
    }

    /// `ψ` as a combination of the raw synthetic functions.
    pub fn raw_coefficients(&self, basis: &EigenBasis) -> Option<Vec<Complex64>> {
        let rec = basis.synthesis.as_ref()?;
        let d = rec.raw.len();
        Some(
            (0..d)
                .map(|j| self.coefficients.iter().zip(&rec.mixing).map(|(c, row)| c * row[j]).sum())
                .collect(),
        )
    }
}

pub fn build_quasimode(basis: &EigenBasis, point: PatchPoint) -> Quasimode {
    let coefficients: Vec<Complex64> = basis.entries.iter().map(|e| e.values[point.index].conj()).collect();
    let values: Vec<Complex64> = (0..basis.grid.len())
        .into_par_iter()
        .map(|k| basis.entries.iter().zip(&coefficients).map(|(e, c)| c * e.values[k]).sum())
        .collect();
    let w = basis.grid.weights();
    let norm_sq = inner(&w, &values, &values, basis.grid.nx).re;
    let sq: Vec<f64> = coefficients.iter().map(|c| c.norm_sqr()).collect();
    Quasimode { point, coefficients, values, coefficient_norm_sq: pairwise_sum(&sq), norm_sq }
}

/// `Σ_l h(s_l) |φ_l(p)|²`.
pub fn spectral_correlation(basis: &EigenBasis, point: &PatchPoint, h: &dyn Fn(f64) -> f64) -> f64 {
    let terms: Vec<f64> = basis.entries.iter().map(|e| h(e.s) * e.values[point.index].norm_sqr()).collect();
    pairwise_sum(&terms)
}

/// `⟨ψ, k_p⟩` through the raw eigenfunctions: each satisfies
/// `∫ k(d(p, z)) f(z) dz = h(s) f(p)`.
pub fn exact_pairing(basis: &EigenBasis, qm: &Quasimode, h: &dyn Fn(f64) -> f64) -> Option<Complex64> {
    let rec = basis.synthesis.as_ref()?;
    let coef = qm.raw_coefficients(basis)?;
    let z = qm.point.z();
    let terms: Vec<Complex64> = rec.raw.iter().zip(&coef).map(|(f, c)| c * h(f.s) * f.eval(z)).collect();
    Some(pairwise_sum_complex(&terms))
}

/// Cauchy–Schwarz chain for the tube mass of the lift.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChainBound {
    pub correlation: f64,
    pub norm_sq: f64,
    /// `√(outside mass of κ)`.
    pub eps_out: f64,
    /// `‖κ‖²` restricted to the tube.
    pub tube_kappa_norm_sq: f64,
    /// `(corr/‖ψ‖ − ε_out)₊² / ‖κ‖²_tube`, a lower bound for the tube share of `‖Ψ‖²`.
    pub lower_fraction: f64,
    /// `lower_fraction · ‖ψ‖²`.
    pub lower_mass: f64,
}

pub fn mass_chain(correlation: f64, norm_sq: f64, outside: f64, tube_kappa_norm_sq: f64) -> ChainBound {
    let eps_out = outside.max(0.0).sqrt();
    let lead = if norm_sq > 0.0 { correlation.abs() / norm_sq.sqrt() } else { 0.0 };
    let gap = (lead - eps_out).max(0.0);
    let lower_fraction = if tube_kappa_norm_sq > 0.0 { gap * gap / tube_kappa_norm_sq } else { 0.0 };
    ChainBound {
        correlation,
        norm_sq,
        eps_out,
        tube_kappa_norm_sq,
        lower_fraction,
        lower_mass: lower_fraction * norm_sq,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuasimodeReport {
    pub d: usize,
    pub source: BasisSource,
    pub p_star: PatchPoint,
    pub peak: f64,
    pub mean_density: f64,
    pub norm_sq: f64,
    pub coefficient_norm_sq: f64,
    pub psi_at_peak: Complex64,
    /// Largest of `|ψ(p) − peak|`, `|‖ψ‖² − peak|`, `|Σ|c|² − peak|`, relative to the peak.
    pub massive_point_gap: f64,
    /// `Σ h(s_l) |φ_l(p)|²`.
    pub correlation: f64,
    /// `⟨ψ, k_p⟩` from the raw eigenfunctions, when available.
    pub correlation_exact: Option<Complex64>,
    /// `(1/100) r^{−1/2} · peak`.
    pub correlation_floor: f64,
    pub n: f64,
    pub u_cut: f64,
    pub outside_mass: f64,
    pub chain: ChainBound,
    pub liouville_fraction: f64,
    /// `lower_fraction / liouville_fraction`.
    pub enhancement: f64,
}

fn same(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0)
}

/// Extremal point, quasimode and the tube-mass chain at `cfg.n`.
pub fn mass_report(
    basis: &EigenBasis,
    cfg: &SpectralConfig,
    field: &MicrolocalField,
    h: &SpectralFunction,
) -> Result<(QuasimodeReport, Quasimode)> {
    if !same(basis.r, cfg.r) || !same(basis.window, cfg.window) {
        return Err(Error::Interface(format!(
            "basis built for r = {}, C = {} but config has r = {}, C = {}",
            basis.r, basis.window, cfg.r, cfg.window
        )));
    }
    let f = &field.cfg;
    if !same(f.r, cfg.r) || !same(f.window, cfg.window) || !same(f.c, cfg.c) || !same(f.tau, cfg.tau) {
        return Err(Error::Interface("microlocal field was built with a different configuration".into()));
    }
    basis.check_window()?;
    let ext = extremal_point(basis)?;
    let qm = build_quasimode(basis, ext.point);
    let hf = |s: f64| h.eval(s);
    let correlation = spectral_correlation(basis, &ext.point, &hf);
    let correlation_exact = exact_pairing(basis, &qm, &hf);
    let split = outside_mass(field, cfg.n)?;
    let chain_corr = correlation_exact.map(|c| c.norm()).unwrap_or(correlation);
    let chain = mass_chain(chain_corr, qm.norm_sq, split.outside, split.inside);
    let liouville_fraction = field.liouville_fraction(split.u_cut)?;
    let psi = qm.at_point();
    let gap = [(psi - ext.peak).norm(), (qm.norm_sq - ext.peak).abs(), (qm.coefficient_norm_sq - ext.peak).abs()]
        .into_iter()
        .fold(0.0, f64::max)
        / ext.peak;
    let report = QuasimodeReport {
        d: basis.len(),
        source: basis.source,
        p_star: ext.point,
        peak: ext.peak,
        mean_density: ext.mean,
        norm_sq: qm.norm_sq,
        coefficient_norm_sq: qm.coefficient_norm_sq,
        psi_at_peak: psi,
        massive_point_gap: gap,
        correlation,
        correlation_exact,
        correlation_floor: 0.01 / cfg.r.sqrt() * ext.peak,
        n: cfg.n,
        u_cut: split.u_cut,
        outside_mass: split.outside,
        enhancement: if liouville_fraction > 0.0 { chain.lower_fraction / liouville_fraction } else { 0.0 },
        chain,
        liouville_fraction,
    };
    Ok((report, qm))
}

/// Fejér-weighted normalized ladder coefficients `w(n) c_n(s)` for
/// `|n| < L`, indexed from `−(L − 1)`.
///
/// `c_n` is the product of the unit factors `(½ + k + is)/|½ + k + is|`
/// taking weight `0` to weight `2n`, with the inverse for `n < 0`.
pub fn lift_coefficients(s: f64, weights: &LiftWeights) -> Vec<Complex64> {
    let l = weights.l as i64;
    let unit = |k: i64| {
        let z = Complex64::new(0.5 + k as f64, s);
        z / z.norm()
    };
    let mut out = vec![Complex64::new(0.0, 0.0); (2 * l - 1) as usize];
    let mut c = Complex64::new(1.0, 0.0);
    for n in 0..l {
        out[(n + l - 1) as usize] = weights.w(n) * c;
        c *= unit(n);
    }
    let mut c = Complex64::new(1.0, 0.0);
    for n in 1..l {
        c *= unit(-n).conj();
        out[(l - 1 - n) as usize] = weights.w(-n) * c;
    }
    out
}

/// `(Y, e^{2iΘ})` of `g = n_x a_{log Y} kw_Θ`.
#[inline]
pub fn nak_coordinates(g: &GroupElement) -> (f64, Complex64) {
    let y = 1.0 / (g.c * g.c + g.d * g.d);
    let q = Complex64::new(g.d, -g.c);
    (y, q * q * y)
}

/// Weight-`2n` lift `Y^{½+is} e^{2inΘ}` of the plane wave `P_β`, up to the
/// wave coefficient.
pub fn lifted_wave_component(s: f64, beta: f64, n: i64, g: &GroupElement) -> Complex64 {
    let (y, q) = nak_coordinates(&(GroupElement::rotation(0.5 * beta) * *g));
    (Complex64::new(0.5, s) * y.ln()).exp() * q.powi(n as i32)
}

fn lifted_raw(f: &RawFunction, coefs: &[Complex64], g: &GroupElement) -> Complex64 {
    let l = (coefs.len() + 1) / 2;
    let mut total = Complex64::new(0.0, 0.0);
    for w in &f.waves {
        let (y, q) = nak_coordinates(&(GroupElement::rotation(0.5 * w.beta) * *g));
        let mut pos = Complex64::new(0.0, 0.0);
        for c in coefs[l - 1..].iter().rev() {
            pos = pos * q + c;
        }
        let qc = q.conj();
        let mut neg = Complex64::new(0.0, 0.0);
        for c in coefs[..l - 1].iter() {
            neg = (neg + c) * qc;
        }
        total += w.coef * (Complex64::new(0.5, f.s) * y.ln()).exp() * (pos + neg);
    }
    total
}

/// `Ψ(g) = Σ_n w(n) ψ_{2n}(g)` for a quasimode over a synthetic basis.
pub struct LiftedQuasimode {
    raw: Vec<RawFunction>,
    coef: Vec<Complex64>,
    ladder: Vec<Vec<Complex64>>,
}

impl LiftedQuasimode {
    pub fn new(basis: &EigenBasis, qm: &Quasimode, cfg: &SpectralConfig) -> Result<Self> {
        let rec = basis
            .synthesis
            .as_ref()
            .ok_or_else(|| Error::Interface("the lift needs an analytic (synthetic) basis".into()))?;
        let coef = qm.raw_coefficients(basis).expect("synthetic basis");
        let weights = LiftWeights::from_l(cfg.l());
        let ladder = rec.raw.iter().map(|f| lift_coefficients(f.s, &weights)).collect();
        Ok(Self { raw: rec.raw.clone(), coef, ladder })
    }

    pub fn eval(&self, g: &GroupElement) -> Complex64 {
        self.raw
            .iter()
            .zip(&self.coef)
            .zip(&self.ladder)
            .map(|((f, c), lad)| c * lifted_raw(f, lad, g))
            .sum()
    }
}

/// Monte Carlo estimate of the tube mass of `|Ψ|²` around `p*`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LiftCheck {
    pub samples: usize,
    pub measured_mass: f64,
    pub std_error: f64,
    pub measured_fraction: f64,
    pub lower_mass: f64,
    /// `lower_mass ≤ measured_mass + 3 · std_error`.
    pub consistent: bool,
}

pub fn lift_consistency(
    basis: &EigenBasis,
    qm: &Quasimode,
    cfg: &SpectralConfig,
    chain: &ChainBound,
    samples: usize,
    seed: u64,
) -> Result<LiftCheck> {
    let lift = LiftedQuasimode::new(basis, qm, cfg)?;
    let p = GroupElement::from_point(qm.point.z());
    let tube = Region::from_config(RegionKind::RadialTube, cfg);
    let u_box = cfg.u_cut();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draws: Vec<(f64, f64, f64)> = (0..samples)
        .map(|_| {
            (
                rng.gen_range(0.0..2.0 * PI),
                rng.gen_range(-cfg.tau..cfg.tau),
                rng.gen_range(-u_box..u_box),
            )
        })
        .collect();
    let vals: Vec<f64> = draws
        .par_iter()
        .map(|&(th, t, u)| {
            if !tube.contains_an(t, u) {
                return 0.0;
            }
            let g = p * GroupElement::from_iwasawa(th, t, u);
            t.exp() * lift.eval(&g).norm_sqr()
        })
        .collect();
    let vol = 2.0 * cfg.tau * 2.0 * u_box;
    let n = samples as f64;
    let mean = pairwise_sum(&vals) / n;
    let dev: Vec<f64> = vals.iter().map(|v| (v - mean).powi(2)).collect();
    let var = pairwise_sum(&dev) / (n - 1.0).max(1.0);
    let measured_mass = vol * mean;
    let std_error = vol * (var / n).sqrt();
    Ok(LiftCheck {
        samples,
        measured_mass,
        std_error,
        measured_fraction: measured_mass / qm.norm_sq,
        lower_mass: chain.lower_mass,
        consistent: chain.lower_mass <= measured_mass + 3.0 * std_error,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeakScaling {
    /// `(d, peak, mean density)`.
    pub rows: Vec<(usize, f64, f64)>,
    pub slope: Option<f64>,
}

/// Extremal peak against basis size, one independent draw per `d`.
pub fn peak_scaling(cfg: &SpectralConfig, ds: &[usize], seed: u64, grid: PatchGrid) -> Result<PeakScaling> {
    let mut rows = Vec::new();
    for (k, &d) in ds.iter().enumerate() {
        let basis = synth_basis_on(cfg, d, seed.wrapping_add(k as u64), grid)?;
        let ext = extremal_point(&basis)?;
        rows.push((d, ext.peak, ext.mean));
    }
    let pts: Vec<(f64, f64)> = rows.iter().map(|r| (r.0 as f64, r.1)).collect();
    Ok(PeakScaling { slope: log_log_slope(&pts), rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{build_kernel, RadialKernel};
    use crate::ladder::{apply_e, Sign};
    use crate::quad::NodeSet;
    use std::sync::OnceLock;

    fn small_grid() -> PatchGrid {
        PatchGrid::centered(0.5, 96)
    }

    fn small_basis() -> &'static EigenBasis {
        static B: OnceLock<EigenBasis> = OnceLock::new();
        B.get_or_init(|| synth_basis_on(&SpectralConfig::default(), 12, 7, small_grid()).unwrap())
    }

    fn kernel100() -> &'static RadialKernel {
        static K: OnceLock<RadialKernel> = OnceLock::new();
        K.get_or_init(|| build_kernel(&SpectralConfig::default()).unwrap())
    }

    #[test]
    fn patch_area() {
        let g = PatchGrid::centered(0.5, 257);
        let exact = 1.0 * (1.0 / 0.5 - 1.0 / 1.5);
        assert!((g.area() - exact).abs() < 1e-4 * exact);
        assert_eq!(g.index(3, 2), 2 * 257 + 3);
        assert_eq!(g.coords(g.index(3, 2)), (3, 2));
    }

    #[test]
    fn boundary_wave_forms_agree() {
        let w = BoundaryWave { beta: 2.1, coef: Complex64::new(1.0, 0.0) };
        let b = w.boundary_point();
        let s = 37.0;
        for z in [Complex64::new(0.2, 0.9), Complex64::new(-0.4, 1.3)] {
            let base = z.im * (1.0 + b * b) / (z - b).norm_sqr();
            let want = (Complex64::new(0.5, s) * base.ln()).exp();
            assert!((w.eval(s, z) - want).norm() < 1e-12);
        }
    }

    #[test]
    fn raw_entries_are_eigenfunctions() {
        let rec = small_basis().synthesis.as_ref().unwrap();
        for r in &rec.residuals {
            assert!(*r <= RESIDUAL_TOL, "residual {r}");
        }
        let f = &rec.raw[0];
        let z = Complex64::new(0.1, 0.8);
        let want = -(0.25 + f.s * f.s) * f.eval(z);
        assert!((f.laplacian(z, RESIDUAL_STEP) - want).norm() < 1e-6 * want.norm());
    }

    #[test]
    fn orthonormal_after_gram_schmidt() {
        let b = small_basis();
        assert!(b.gram_deviation() <= 1e-10);
        assert!(b.entries.iter().all(|e| (e.s - 100.0).abs() <= 4.0));
        let rec = b.synthesis.as_ref().unwrap();
        assert!(rec.condition < MAX_CONDITION);
        let z = b.grid.point(17, 40);
        let k = b.grid.index(17, 40);
        for l in [0, 5, 11] {
            let v = b.eval_entry(l, z).unwrap();
            assert!((v - b.entries[l].values[k]).norm() < 1e-9 * v.norm().max(1.0));
        }
    }

    #[test]
    fn single_entry_basis() {
        let b = synth_basis_on(&SpectralConfig::default(), 1, 3, small_grid()).unwrap();
        assert_eq!(b.len(), 1);
        assert!(b.gram_deviation() <= 1e-10);
        let ext = extremal_point(&b).unwrap();
        let dens: Vec<f64> = b.entries[0].values.iter().map(|v| v.norm_sqr()).collect();
        let max = dens.iter().cloned().fold(0.0, f64::max);
        assert_eq!(ext.peak, max);
        let qm = build_quasimode(&b, ext.point);
        let c = b.entries[0].values[ext.point.index].conj();
        for k in [0, 100, 4000] {
            assert!((qm.values[k] - c * b.entries[0].values[k]).norm() < 1e-14);
        }
        let h = |s: f64| 1.0 / s;
        let corr = spectral_correlation(&b, &ext.point, &h);
        assert!((corr - max / b.entries[0].s).abs() < 1e-14 * corr);
    }

    #[test]
    fn extremal_point_matches_scan() {
        let b = small_basis();
        let ext = extremal_point(b).unwrap();
        let mut best = (0, f64::MIN);
        for k in 0..b.grid.len() {
            let v: f64 = b.entries.iter().map(|e| e.values[k].norm_sqr()).sum();
            if v > best.1 {
                best = (k, v);
            }
        }
        assert_eq!(ext.point.index, best.0);
        assert!(ext.peak >= ext.mean);
        assert!((ext.mean * b.grid.area() - b.len() as f64).abs() < 1e-9 * b.len() as f64);
    }

    #[test]
    fn massive_point_identity() {
        let b = small_basis();
        let ext = extremal_point(b).unwrap();
        let qm = build_quasimode(b, ext.point);
        let psi = qm.at_point();
        assert!((psi.re - ext.peak).abs() < 1e-12 * ext.peak && psi.im.abs() < 1e-12 * ext.peak);
        assert!((qm.norm_sq - ext.peak).abs() < 1e-10 * ext.peak);
        assert!((qm.coefficient_norm_sq - ext.peak).abs() < 1e-12 * ext.peak);
        assert!(psi.norm() >= ext.peak.sqrt() * qm.norm_sq.sqrt() * (1.0 - 1e-10));
    }

    #[test]
    fn correlation_with_unit_and_larger_h() {
        let b = small_basis();
        let ext = extremal_point(b).unwrap();
        let one = spectral_correlation(b, &ext.point, &|_| 1.0);
        assert!((one - ext.peak).abs() < 1e-12 * ext.peak);
        let h = kernel100().h();
        let base = spectral_correlation(b, &ext.point, &|s| h.eval(s));
        let bigger = spectral_correlation(b, &ext.point, &|s| h.eval(s) + 0.01 * (s - 90.0).abs());
        assert!(bigger >= base);
        assert!(base >= 0.001 * ext.peak);
    }

    #[test]
    fn pairing_identity_by_quadrature() {
        // ∫ k(d(p, z)) P(z) dz over the geodesic ball against h(s) P(p).
        let k = kernel100();
        let wave = RawFunction {
            s: 101.3,
            waves: vec![BoundaryWave { beta: 1.1, coef: Complex64::new(1.0, 0.0) }],
        };
        let p = Complex64::new(0.1, 1.05);
        let pe = GroupElement::from_point(p);
        let (rho, rw) = NodeSet::uniform(0.0, k.k.rho_max(), 100, 8).into_parts();
        let n_alpha = 1024;
        let rows: Vec<Complex64> = rho
            .par_iter()
            .zip(&rw)
            .map(|(&r, &w)| {
                let kr = k.k.eval_rho(r) * r.sinh() * w;
                let ring: Complex64 = (0..n_alpha)
                    .map(|a| {
                        let alpha = 2.0 * PI * a as f64 / n_alpha as f64;
                        wave.eval((pe * GroupElement::rotation(alpha) * GroupElement::diagonal(r)).base_point())
                    })
                    .sum();
                kr * ring
            })
            .collect();
        let total = rows.iter().sum::<Complex64>() * (2.0 * PI / n_alpha as f64);
        let want = k.h().eval(wave.s) * wave.eval(p);
        assert!((total - want).norm() < 1e-4 * want.norm(), "{total} vs {want}");
    }

    #[test]
    fn lift_components_follow_the_ladder() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let s = rng.gen_range(5.0..40.0);
            let beta = rng.gen_range(0.0..2.0 * PI);
            let n = rng.gen_range(-4i64..4);
            let g = GroupElement::from_iwasawa(rng.gen_range(-3.0..3.0), rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5));
            let f = |h: &GroupElement| lifted_wave_component(s, beta, n, h);
            let up = apply_e(&f, &g, Sign::Plus).unwrap();
            let want = Complex64::new(0.5 + n as f64, s) * lifted_wave_component(s, beta, n + 1, &g);
            assert!((up - want).norm() < 1e-4 * want.norm());
            let down = apply_e(&f, &g, Sign::Minus).unwrap();
            let want = Complex64::new(0.5 - n as f64, s) * lifted_wave_component(s, beta, n - 1, &g);
            assert!((down - want).norm() < 1e-4 * want.norm());
            let th = rng.gen_range(0.0..PI);
            let turned = lifted_wave_component(s, beta, n, &(g * GroupElement::weight_rotation(th)));
            let want = Complex64::from_polar(1.0, 2.0 * n as f64 * th) * lifted_wave_component(s, beta, n, &g);
            assert!((turned - want).norm() < 1e-10 * want.norm());
            let base = lifted_wave_component(s, beta, 0, &g);
            let w = BoundaryWave { beta, coef: Complex64::new(1.0, 0.0) };
            assert!((base - w.eval(s, g.base_point())).norm() < 1e-10 * base.norm());
        }
    }

    #[test]
    fn lift_coefficients_are_a_unitary_chain() {
        let weights = LiftWeights::from_l(6);
        let s = 30.0;
        let c = lift_coefficients(s, &weights);
        assert_eq!(c.len(), 11);
        let sum: f64 = c.iter().map(|z| z.norm_sqr()).sum();
        assert!((sum - weights.sum_sq()).abs() < 1e-14);
        for n in -5i64..5 {
            let here = c[(n + 5) as usize] / weights.w(n);
            let next = c[(n + 6) as usize] / weights.w(n + 1);
            let step = Complex64::new(0.5 + n as f64, s);
            assert!((next - here * step / step.norm()).norm() < 1e-13);
        }
        let g = GroupElement::from_iwasawa(0.3, 0.2, -0.1);
        let raw = RawFunction { s, waves: vec![BoundaryWave { beta: 0.7, coef: Complex64::new(1.0, 0.0) }] };
        let direct: Complex64 = (-5i64..=5).map(|n| c[(n + 5) as usize] * lifted_wave_component(s, 0.7, n, &g)).sum();
        assert!((lifted_raw(&raw, &c, &g) - direct).norm() < 1e-12 * direct.norm());
    }

    #[test]
    fn chain_degenerates_without_correlation() {
        let c = mass_chain(0.0, 4.0, 0.01, 2.0);
        assert_eq!(c.lower_fraction, 0.0);
        assert_eq!(c.lower_mass, 0.0);
        let c = mass_chain(3.0, 4.0, 0.01, 2.0);
        assert!((c.lower_fraction - (1.5f64 - 0.1).powi(2) / 2.0).abs() < 1e-14);
    }

    #[test]
    fn qmb_round_trip_and_guards() {
        let b = synth_basis_on(&SpectralConfig::default(), 3, 5, PatchGrid::centered(0.5, 16)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("b.qmb");
        b.save(&path).unwrap();
        let back = load_basis(&path).unwrap();
        assert_eq!(back.source, BasisSource::File);
        assert_eq!(back.grid, b.grid);
        for (x, y) in back.entries.iter().zip(&b.entries) {
            assert_eq!(x.s.to_bits(), y.s.to_bits());
            assert!(x.values.iter().zip(&y.values).all(|(p, q)| p.re.to_bits() == q.re.to_bits() && p.im.to_bits() == q.im.to_bits()));
        }
        assert_eq!(back.to_bytes().unwrap(), std::fs::read(&path).unwrap());

        let bytes = b.to_bytes().unwrap();
        let cut = bytes.len() - 100;
        match parse_basis(&bytes[..cut]) {
            Err(Error::Ingestion { offset, .. }) => assert_eq!(offset, cut as u64),
            other => panic!("{other:?}"),
        }
        let mut out = b.clone();
        out.entries[1].s = b.r + 2.0 * b.window;
        match parse_basis(&out.to_bytes().unwrap()) {
            Err(Error::WindowViolation { s, .. }) => assert_eq!(s, 108.0),
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse_basis(b"{\"version\":1}"), Err(Error::Ingestion { .. })));
        assert!(matches!(parse_basis(b"{nope\n"), Err(Error::Ingestion { .. })));
    }

    #[test]
    fn interface_mismatch_is_rejected() {
        let b = small_basis();
        let cfg = SpectralConfig { r: 50.0, ..SpectralConfig::default() };
        let k = kernel100();
        let field = crate::microlocal::MicrolocalField::build_with(
            &crate::microlocal::KappaEvaluator::with_default_theta(
                crate::microlocal::build_profile(k.h(), &k.cfg).unwrap(),
                &k.cfg,
            ),
            &k.cfg,
            crate::microlocal::FieldOptions { nt: 4, nu: 64, ..Default::default() },
            0.0,
        )
        .unwrap();
        assert!(matches!(mass_report(b, &cfg, &field, k.h()), Err(Error::Interface(_))));
    }
}
