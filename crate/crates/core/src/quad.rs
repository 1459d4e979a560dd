//! Quadrature building blocks shared by every transform.
//!
//! Everything here is deterministic: node tables are computed once per
//! order and sums use pairwise reduction so results do not depend on how
//! work was split across threads.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Gauss–Legendre rule on [-1, 1].
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussLegendre {
    /// Nodes by Newton iteration on the three-term recurrence.
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "Gauss-Legendre order must be positive");
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let m = n.div_ceil(2);
        for i in 0..m {
            let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre_with_derivative(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre_with_derivative(n, x);
            if d != 0.0 {
                dp = d;
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        Self { nodes, weights }
    }

    /// Cached rule of order `n`.
    pub fn cached(n: usize) -> Arc<GaussLegendre> {
        static CACHE: OnceLock<Mutex<HashMap<usize, Arc<GaussLegendre>>>> = OnceLock::new();
        let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
        let mut guard = cache.lock().expect("quadrature cache poisoned");
        guard
            .entry(n)
            .or_insert_with(|| Arc::new(GaussLegendre::new(n)))
            .clone()
    }

    pub fn integrate<F: Fn(f64) -> f64>(&self, a: f64, b: f64, f: F) -> f64 {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (b + a);
        let terms: Vec<f64> = self
            .nodes
            .iter()
            .zip(&self.weights)
            .map(|(x, w)| w * f(mid + half * x))
            .collect();
        half * pairwise_sum(&terms)
    }

    /// Nodes and weights mapped to [a, b].
    pub fn mapped(&self, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (b + a);
        (
            self.nodes.iter().map(|x| mid + half * x).collect(),
            self.weights.iter().map(|w| w * half).collect(),
        )
    }
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let p = if n == 0 { 1.0 } else { p1 };
    let d = n as f64 * (x * p - p0) / (x * x - 1.0);
    (p, d)
}

/// A fixed composite Gauss–Legendre node set over a union of panels.
#[derive(Debug, Clone, Default)]
pub struct NodeSet {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl NodeSet {
    /// Panels given by consecutive breakpoints, `order` nodes per panel.
    pub fn composite(breaks: &[f64], order: usize) -> Self {
        let rule = GaussLegendre::cached(order);
        let mut set = NodeSet::default();
        for w in breaks.windows(2) {
            if w[1] <= w[0] {
                continue;
            }
            let (x, wt) = rule.mapped(w[0], w[1]);
            set.nodes.extend(x);
            set.weights.extend(wt);
        }
        set
    }

    /// `panels` equal panels on [a, b].
    pub fn uniform(a: f64, b: f64, panels: usize, order: usize) -> Self {
        let breaks: Vec<f64> = (0..=panels)
            .map(|i| a + (b - a) * i as f64 / panels as f64)
            .collect();
        Self::composite(&breaks, order)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn into_parts(self) -> (Vec<f64>, Vec<f64>) {
        (self.nodes, self.weights)
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn integrate<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        let terms: Vec<f64> = self
            .nodes
            .iter()
            .zip(&self.weights)
            .map(|(x, w)| w * f(*x))
            .collect();
        pairwise_sum(&terms)
    }

    pub fn integrate_complex<F: Fn(f64) -> Complex64>(&self, f: F) -> Complex64 {
        let terms: Vec<Complex64> = self
            .nodes
            .iter()
            .zip(&self.weights)
            .map(|(x, w)| f(*x) * *w)
            .collect();
        pairwise_sum_complex(&terms)
    }
}

/// Result of an adaptive integration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub error: f64,
}

/// Adaptive Gauss–Legendre by recursive bisection.
///
/// Each panel is accepted once a 16-point and a pair of 16-point half-panel
/// estimates agree to `abs_tol + rel_tol * |panel|`.
pub fn adaptive<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    abs_tol: f64,
    rel_tol: f64,
) -> Result<Estimate> {
    let rule = GaussLegendre::cached(16);
    let whole = rule.integrate(a, b, f);
    let mut stack = vec![(a, b, whole, 0usize)];
    let mut accepted: Vec<f64> = Vec::new();
    let mut error = 0.0;
    let mut panels = 0usize;
    while let Some((lo, hi, coarse, depth)) = stack.pop() {
        panels += 1;
        let mid = 0.5 * (lo + hi);
        let left = rule.integrate(lo, mid, f);
        let right = rule.integrate(mid, hi, f);
        let fine = left + right;
        let gap = (fine - coarse).abs();
        let width_share = (hi - lo) / (b - a);
        if gap <= (abs_tol * width_share).max(rel_tol * fine.abs()) || gap < 1e-15 * fine.abs() {
            accepted.push(fine);
            error += gap;
        } else if depth >= 40 || panels > 200_000 {
            return Err(Error::Precision {
                achieved: gap,
                requested: abs_tol.max(rel_tol * fine.abs()),
            });
        } else {
            stack.push((mid, hi, right, depth + 1));
            stack.push((lo, mid, left, depth + 1));
        }
    }
    Ok(Estimate {
        value: pairwise_sum(&accepted),
        error,
    })
}

/// Trapezoid rule for a `period`-periodic integrand sampled at `n` points,
/// returning the mean value over one period.
pub fn periodic_mean<F: Fn(f64) -> Complex64>(period: f64, n: usize, offset: f64, f: F) -> Complex64 {
    let terms: Vec<Complex64> = (0..n)
        .map(|j| f(offset + period * j as f64 / n as f64))
        .collect();
    pairwise_sum_complex(&terms) / n as f64
}

/// Pairwise (cascade) summation.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 16 {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

pub fn pairwise_sum_complex(xs: &[Complex64]) -> Complex64 {
    if xs.len() <= 16 {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum_complex(&xs[..mid]) + pairwise_sum_complex(&xs[mid..])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_integrates_polynomials_exactly() {
        let rule = GaussLegendre::new(8);
        // degree 15 is the exactness limit for 8 nodes
        let v = rule.integrate(-1.0, 2.0, |x| x.powi(15));
        let exact = (2f64.powi(16) - 1.0) / 16.0;
        assert!((v - exact).abs() < 1e-9 * exact);
        let w: f64 = rule.weights.iter().sum();
        assert!((w - 2.0).abs() < 1e-14);
    }

    #[test]
    fn high_order_nodes_are_sorted_and_symmetric() {
        let rule = GaussLegendre::new(257);
        for w in rule.nodes.windows(2) {
            assert!(w[0] < w[1]);
        }
        for (a, b) in rule.nodes.iter().zip(rule.nodes.iter().rev()) {
            assert!((a + b).abs() < 1e-15);
        }
        let v = rule.integrate(0.0, PI, f64::sin);
        assert!((v - 2.0).abs() < 1e-14);
    }

    #[test]
    fn adaptive_handles_oscillation() {
        let f = |x: f64| (200.0 * x).cos() * (-x * x).exp();
        let est = adaptive(&f, -6.0, 6.0, 1e-13, 1e-12).unwrap();
        let exact = PI.sqrt() * (-(200.0f64 * 200.0) / 4.0).exp();
        assert!((est.value - exact).abs() < 1e-11);
    }

    #[test]
    fn periodic_mean_is_spectrally_accurate() {
        let m = periodic_mean(2.0 * PI, 32, 0.0, |t| Complex64::new((t.cos()).exp(), 0.0));
        // I_0(1)
        assert!((m.re - 1.266_065_877_752_008_4).abs() < 1e-14);
    }

    #[test]
    fn pairwise_matches_naive_sum() {
        let xs: Vec<f64> = (0..1000).map(|i| 1.0 / (1.0 + i as f64)).collect();
        let naive: f64 = xs.iter().sum();
        assert!((pairwise_sum(&xs) - naive).abs() < 1e-12);
    }
}
