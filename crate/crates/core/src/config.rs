use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Parameter bundle shared by every stage of the pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpectralConfig {
    /// Spectral parameter.
    pub r: f64,
    /// Half-width of the spectral window.
    #[serde(rename = "C")]
    pub window: f64,
    /// Density constant of the eigenfunction subspace.
    pub c: f64,
    /// Support radius of the kernel.
    pub tau: f64,
    /// Tube-width constant.
    #[serde(rename = "N")]
    pub n: f64,
    /// Low-frequency fraction.
    pub eta: f64,
}

impl Default for SpectralConfig {
    fn default() -> Self {
        Self { r: 100.0, window: 4.0, c: 0.5, tau: 0.5, n: 0.5, eta: 0.8 }
    }
}

impl SpectralConfig {
    pub fn new(r: f64, window: f64, c: f64, tau: f64) -> Self {
        Self { r, window, c, tau, ..Self::default() }
    }

    /// Hard constraints; returns soft warnings on success.
    pub fn validate(&self) -> Result<Vec<String>> {
        let fields = [self.r, self.window, self.c, self.tau, self.n, self.eta];
        if fields.iter().any(|x| !x.is_finite()) {
            return Err(Error::Config("all parameters must be finite".into()));
        }
        if self.r < 1.0 {
            return Err(Error::Config(format!("r must be at least 1, got {}", self.r)));
        }
        if self.window <= 0.0 || self.r <= self.window {
            return Err(Error::Config(format!(
                "window half-width C must satisfy 0 < C < r, got C = {}",
                self.window
            )));
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::Config(format!("tau must lie in (0, 1), got {}", self.tau)));
        }
        if !(self.eta > 0.0 && self.eta < 1.0) {
            return Err(Error::Config(format!("eta must lie in (0, 1), got {}", self.eta)));
        }
        if self.c <= 0.0 || self.n <= 0.0 {
            return Err(Error::Config("c and N must be positive".into()));
        }
        let mut warnings = Vec::new();
        if self.window <= 1.0 {
            warnings.push(format!(
                "C = {} is not above 1; the window lower bound is not expected to hold",
                self.window
            ));
        }
        Ok(warnings)
    }

    /// `L = ⌊√r⌋`.
    pub fn l(&self) -> usize {
        (self.r.sqrt().floor() as usize).max(1)
    }

    /// `√(3L / (2L² + 1))`.
    pub fn lift_prefactor(&self) -> f64 {
        let l = self.l() as f64;
        (3.0 * l / (2.0 * l * l + 1.0)).sqrt()
    }

    /// `b(r) = r^{1/4} √(3L / (2L² + 1))`.
    pub fn b(&self) -> f64 {
        self.r.powf(0.25) * self.lift_prefactor()
    }

    /// Tube radius `N c⁻¹ r^{−1/2}` in the `u` coordinate.
    pub fn u_cut(&self) -> f64 {
        self.u_cut_for(self.n)
    }

    pub fn u_cut_for(&self, n: f64) -> f64 {
        n / (self.c * self.r.sqrt())
    }

    /// Upper end of the sampled spectral axis.
    pub fn s_max(&self) -> f64 {
        self.r + 40.0 * self.window
    }

    /// Number of basis entries `⌈c r⌉`.
    pub fn basis_count(&self) -> usize {
        (self.c * self.r).ceil() as usize
    }
}
