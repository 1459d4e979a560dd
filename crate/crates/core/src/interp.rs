//! Cubic Hermite interpolation from values and derivatives.

use num_complex::Complex64;

#[inline]
fn basis(t: f64) -> (f64, f64, f64, f64) {
    let t2 = t * t;
    let t3 = t2 * t;
    (
        2.0 * t3 - 3.0 * t2 + 1.0,
        t3 - 2.0 * t2 + t,
        -2.0 * t3 + 3.0 * t2,
        t3 - t2,
    )
}

/// Hermite table on a uniform grid `x0 + i * step`.
#[derive(Debug, Clone)]
pub struct UniformHermite<T> {
    pub x0: f64,
    pub step: f64,
    pub values: Vec<T>,
    pub derivs: Vec<T>,
}

macro_rules! uniform_eval {
    ($t:ty, $zero:expr) => {
        impl UniformHermite<$t> {
            pub fn new(x0: f64, step: f64, values: Vec<$t>, derivs: Vec<$t>) -> Self {
                assert_eq!(values.len(), derivs.len());
                assert!(values.len() >= 2, "need at least two nodes");
                Self { x0, step, values, derivs }
            }

            pub fn x_max(&self) -> f64 {
                self.x0 + self.step * (self.values.len() - 1) as f64
            }

            pub fn contains(&self, x: f64) -> bool {
                x >= self.x0 && x <= self.x_max()
            }

            /// Value at `x`; zero outside the table.
            #[inline]
            pub fn eval(&self, x: f64) -> $t {
                let pos = (x - self.x0) / self.step;
                let last = self.values.len() - 1;
                if !(pos >= 0.0 && pos <= last as f64) {
                    return $zero;
                }
                let i = (pos as usize).min(last - 1);
                let t = pos - i as f64;
                let (h00, h10, h01, h11) = basis(t);
                self.values[i] * h00
                    + self.derivs[i] * (h10 * self.step)
                    + self.values[i + 1] * h01
                    + self.derivs[i + 1] * (h11 * self.step)
            }
        }
    };
}

uniform_eval!(f64, 0.0);
uniform_eval!(Complex64, Complex64::new(0.0, 0.0));

/// Hermite table on an increasing, possibly nonuniform grid.
#[derive(Debug, Clone)]
pub struct Hermite {
    pub x: Vec<f64>,
    pub values: Vec<f64>,
    pub derivs: Vec<f64>,
}

impl Hermite {
    pub fn new(x: Vec<f64>, values: Vec<f64>, derivs: Vec<f64>) -> Self {
        assert_eq!(x.len(), values.len());
        assert_eq!(x.len(), derivs.len());
        assert!(x.len() >= 2, "need at least two nodes");
        debug_assert!(x.windows(2).all(|w| w[0] < w[1]));
        Self { x, values, derivs }
    }

    /// Value at `x`; `None` outside the table.
    pub fn eval(&self, x: f64) -> Option<f64> {
        let n = self.x.len();
        if !(x >= self.x[0] && x <= self.x[n - 1]) {
            return None;
        }
        let i = match self.x.partition_point(|&xi| xi <= x) {
            0 => 0,
            k if k >= n => n - 2,
            k => k - 1,
        };
        let h = self.x[i + 1] - self.x[i];
        let t = (x - self.x[i]) / h;
        let (h00, h10, h01, h11) = basis(t);
        Some(
            h00 * self.values[i]
                + h10 * h * self.derivs[i]
                + h01 * self.values[i + 1]
                + h11 * h * self.derivs[i + 1],
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reproduces_cubics_exactly() {
        let f = |x: f64| 2.0 * x * x * x - x + 0.5;
        let df = |x: f64| 6.0 * x * x - 1.0;
        let xs: Vec<f64> = vec![0.0, 0.3, 1.1, 2.0];
        let table = Hermite::new(
            xs.clone(),
            xs.iter().map(|&x| f(x)).collect(),
            xs.iter().map(|&x| df(x)).collect(),
        );
        for x in [0.0, 0.1, 0.7, 1.5, 2.0] {
            assert!((table.eval(x).unwrap() - f(x)).abs() < 1e-13);
        }
        assert!(table.eval(2.1).is_none());
    }

    #[test]
    fn uniform_complex_exponential() {
        let step = 0.01;
        let n = 629;
        let xs: Vec<f64> = (0..n).map(|i| i as f64 * step).collect();
        let table = UniformHermite::<Complex64>::new(
            0.0,
            step,
            xs.iter().map(|&x| Complex64::from_polar(1.0, x)).collect(),
            xs.iter().map(|&x| Complex64::i() * Complex64::from_polar(1.0, x)).collect(),
        );
        for k in 0..100 {
            let x = 0.0613 * k as f64;
            let err = (table.eval(x) - Complex64::from_polar(1.0, x)).norm();
            assert!(err < 1e-9, "x={x} err={err}");
        }
        assert_eq!(table.eval(-0.1), Complex64::new(0.0, 0.0));
    }
}
