//! Pipeline driver behind the `scarkit` binary: run configuration, the
//! four subcommands and their artifacts.

pub mod svg;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use scarkit_core::kernel::{build_kernel, verify_bounds, BoundReport, BoundThresholds, RadialKernel};
use scarkit_core::microlocal::{
    calibrate_n, select_eta, split_diagnostics, FieldOptions, MicrolocalField, SplitReport, SweepReport,
    DEFAULT_N_SWEEP, ETA_CANDIDATES,
};
use scarkit_core::quasimode::{
    lift_consistency, load_basis, mass_report, synth_basis_on, EigenBasis, LiftCheck, PatchGrid, QuasimodeReport,
    PATCH_SAMPLES,
};
use scarkit_core::{Error, SpectralConfig, VERSION};

/// Everything a run depends on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub cfg: SpectralConfig,
    pub field: FieldOptions,
    /// Samples per side of the quasimode patch.
    pub patch_samples: usize,
    /// Basis size; `⌈c r⌉` when absent.
    pub basis_size: Option<usize>,
    /// `.qmb` file to use instead of a synthetic basis.
    pub basis_file: Option<PathBuf>,
    pub n_sweep: Vec<f64>,
    pub eta_candidates: Vec<f64>,
    /// Largest low-frequency share accepted by the `η` selection.
    pub eta_threshold: f64,
    pub target_fraction: f64,
    pub thresholds: BoundThresholds,
    pub enhancement_threshold: f64,
    /// Monte Carlo samples of the lift consistency check; 0 skips it.
    pub lift_samples: usize,
    pub seed: u64,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            cfg: SpectralConfig::default(),
            field: FieldOptions::default(),
            patch_samples: PATCH_SAMPLES,
            basis_size: None,
            basis_file: None,
            n_sweep: DEFAULT_N_SWEEP.to_vec(),
            eta_candidates: ETA_CANDIDATES.to_vec(),
            eta_threshold: 1e-3,
            target_fraction: 0.05,
            thresholds: BoundThresholds::default(),
            enhancement_threshold: 10.0,
            lift_samples: 16384,
            seed: 1,
            out: PathBuf::from("out"),
        }
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    /// Hard checks; returns the soft warnings.
    pub fn validate(&self) -> Result<Vec<String>, CliError> {
        let warnings = self.cfg.validate().map_err(CliError::from)?;
        if self.n_sweep.is_empty() || self.n_sweep.iter().any(|n| !(n.is_finite() && *n > 0.0)) {
            return Err(CliError::Config("the N sweep must be a nonempty list of positive numbers".into()));
        }
        if !(self.target_fraction > 0.0 && self.target_fraction <= 1.0) {
            return Err(CliError::Config(format!("target fraction must lie in (0, 1], got {}", self.target_fraction)));
        }
        if self.patch_samples < 8 {
            return Err(CliError::Config("patch_samples must be at least 8".into()));
        }
        if self.field.nt == 0 || self.field.nu == 0 {
            return Err(CliError::Config("field grid sizes must be positive".into()));
        }
        if self.basis_size == Some(0) {
            return Err(CliError::Config("basis_size must be at least 1".into()));
        }
        Ok(warnings)
    }

    pub fn basis_count(&self) -> usize {
        self.basis_size.unwrap_or_else(|| self.cfg.basis_count())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Compute(Error),
    #[error("cannot write {path}: {source}")]
    Output { path: PathBuf, source: std::io::Error },
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(m) => CliError::Config(m),
            other => CliError::Compute(other),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            _ => 1,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Output { .. } => "output",
            CliError::Compute(e) => match e {
                Error::InvalidElement { .. } => "invalid_element",
                Error::Domain(_) => "domain",
                Error::SingularConfiguration { .. } => "singular_configuration",
                Error::Precision { .. } => "precision",
                Error::TailModelRequired(_) => "tail_model_required",
                Error::Config(_) => "config",
                Error::Calibration { .. } => "calibration",
                Error::Resolution(_) => "resolution",
                Error::Differentiation { .. } => "differentiation",
                Error::Interface(_) => "interface",
                Error::Ingestion { .. } => "ingestion",
                Error::WindowViolation { .. } => "window_violation",
                Error::IllConditioned { .. } => "ill_conditioned",
                Error::Io(_) => "io",
            },
        }
    }

    pub fn hint(&self) -> Option<&'static str> {
        match self {
            CliError::Compute(Error::Resolution(_)) => {
                Some("increase the field grid (field.nu, field.nt) or the N values of the sweep")
            }
            CliError::Compute(Error::IllConditioned { .. }) => Some("try another seed or a smaller basis"),
            CliError::Compute(Error::WindowViolation { .. }) => Some("basis spectral parameters must lie in [r - C, r + C]"),
            _ => None,
        }
    }

    /// Structured form written to stderr.
    pub fn to_json(&self) -> serde_json::Value {
        let mut v = serde_json::json!({ "error": self.kind(), "message": self.to_string() });
        if let CliError::Compute(Error::Ingestion { offset, .. }) = self {
            v["offset"] = (*offset).into();
        }
        if let Some(h) = self.hint() {
            v["hint"] = h.into();
        }
        v
    }
}

/// Common envelope of every JSON artifact.
#[derive(Serialize)]
struct Artifact<'a, T: Serialize> {
    tool: &'static str,
    version: &'static str,
    config: &'a RunConfig,
    warnings: &'a [String],
    #[serde(flatten)]
    body: T,
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|source| CliError::Output { path: path.to_path_buf(), source })
}

/// Shared state of one invocation; expensive stages are built once.
pub struct Pipeline {
    pub rc: RunConfig,
    pub warnings: Vec<String>,
    kernel: Option<RadialKernel>,
    field: Option<MicrolocalField>,
    sweep: Option<SweepReport>,
}

#[derive(Debug, Clone, Serialize)]
pub struct KernelSummary {
    pub norm_sq_spectral: f64,
    pub norm_sq_spatial: f64,
    pub norm_gap: f64,
    pub path_gap: f64,
    pub abel_error: f64,
    pub chi_hat_l1: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BoundsArtifact {
    pub kernel: KernelSummary,
    pub checks: BoundReport,
    pub all_pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub n: f64,
    pub u_cut: f64,
    pub inside: f64,
    pub outside: f64,
    pub fraction: f64,
    pub liouville_fraction: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct FieldSummary {
    pub cells: usize,
    pub n_theta: usize,
    pub theta_check: f64,
    pub profile_error: f64,
    pub total_mass: f64,
    pub spectral_norm_sq: f64,
    pub volume: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct LocalizeArtifact {
    pub field: FieldSummary,
    pub eta_selection: scarkit_core::microlocal::EtaSelection,
    pub target: f64,
    pub rows: Vec<SweepRow>,
    pub n_star: Option<f64>,
    pub slope: Option<f64>,
    pub monotone: bool,
    pub split: SplitReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct BasisSummary {
    pub d: usize,
    pub source: scarkit_core::quasimode::BasisSource,
    pub seed: Option<u64>,
    pub attempts: Option<u64>,
    pub condition: Option<f64>,
    pub max_residual: Option<f64>,
    pub grid: PatchGrid,
}

#[derive(Debug, Clone, Serialize)]
pub struct QuasimodeArtifact {
    pub basis: BasisSummary,
    /// `N` used for the tube: the calibrated value, or the configured one
    /// when the sweep never met the target.
    pub n_used: f64,
    pub calibrated: bool,
    pub report: QuasimodeReport,
    pub lift_check: Option<LiftCheck>,
    pub enhancement_threshold: f64,
    pub enhancement_pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub big_h_pass: bool,
    pub bounds_all_pass: bool,
    pub plancherel_gap: f64,
    pub n_star: Option<f64>,
    pub sweep_slope: Option<f64>,
    pub sweep_monotone: bool,
    pub kappa1_ratio: f64,
    pub massive_point_gap: f64,
    pub correlation_over_floor: f64,
    pub enhancement: f64,
    pub enhancement_pass: bool,
    pub lift_consistent: Option<bool>,
}

impl Pipeline {
    pub fn new(rc: RunConfig) -> Result<Self, CliError> {
        let warnings = rc.validate()?;
        Ok(Self { rc, warnings, kernel: None, field: None, sweep: None })
    }

    fn out_dir(&self) -> Result<&Path, CliError> {
        let out = self.rc.out.as_path();
        fs::create_dir_all(out).map_err(|source| CliError::Output { path: out.to_path_buf(), source })?;
        Ok(out)
    }

    fn json<T: Serialize>(&self, name: &str, body: T) -> Result<PathBuf, CliError> {
        let art = Artifact { tool: "scarkit", version: VERSION, config: &self.rc, warnings: &self.warnings, body };
        let mut text = serde_json::to_string_pretty(&art).expect("artifact serializes");
        text.push('\n');
        let path = self.out_dir()?.join(name);
        write_file(&path, text.as_bytes())?;
        Ok(path)
    }

    pub fn kernel(&mut self) -> Result<&RadialKernel, CliError> {
        if self.kernel.is_none() {
            let k = build_kernel(&self.rc.cfg)?;
            for w in &k.k.warnings {
                self.warnings.push(w.clone());
            }
            self.kernel = Some(k);
        }
        Ok(self.kernel.as_ref().expect("built"))
    }

    pub fn field(&mut self) -> Result<&MicrolocalField, CliError> {
        if self.field.is_none() {
            let opts = self.rc.field;
            let f = MicrolocalField::build(self.kernel()?, opts)?;
            self.field = Some(f);
        }
        Ok(self.field.as_ref().expect("built"))
    }

    pub fn sweep(&mut self) -> Result<&SweepReport, CliError> {
        if self.sweep.is_none() {
            let (ns, target) = (self.rc.n_sweep.clone(), self.rc.target_fraction);
            let s = calibrate_n(self.field()?, &ns, target)?;
            self.sweep = Some(s);
        }
        Ok(self.sweep.as_ref().expect("built"))
    }

    /// `h.csv`, `k.csv`, `bounds.json`.
    pub fn build_kernel_artifacts(&mut self) -> Result<BoundsArtifact, CliError> {
        let thresholds = self.rc.thresholds;
        let cfg = self.rc.cfg.clone();
        let k = self.kernel()?;
        let checks = verify_bounds(k.h(), &cfg, k.cutoff.chi_hat_l1, &thresholds);
        let art = BoundsArtifact {
            kernel: KernelSummary {
                norm_sq_spectral: k.norm_sq_spectral,
                norm_sq_spatial: k.norm_sq_spatial,
                norm_gap: k.norm_gap(),
                path_gap: k.spectrum.path_gap,
                abel_error: k.k.error_estimate,
                chi_hat_l1: k.cutoff.chi_hat_l1,
            },
            all_pass: checks.all_pass(),
            checks,
        };
        let mut hcsv = String::from("s,h,dh\n");
        for ((s, v), d) in k.h().grid().iter().zip(k.h().values()).zip(k.h().derivs()) {
            writeln!(hcsv, "{s:e},{v:e},{d:e}").expect("string write");
        }
        let mut kcsv = String::from("rho,t,k\n");
        for (rho, v) in k.k.rho.iter().zip(&k.k.k) {
            writeln!(kcsv, "{rho:e},{:e},{v:e}", rho.cosh() - 1.0).expect("string write");
        }
        let out = self.out_dir()?.to_path_buf();
        write_file(&out.join("h.csv"), hcsv.as_bytes())?;
        write_file(&out.join("k.csv"), kcsv.as_bytes())?;
        self.json("bounds.json", &art)?;
        Ok(art)
    }

    /// `kappa_heatmap.csv`, `sweep.json`, `localization.svg`.
    pub fn localize_artifacts(&mut self) -> Result<LocalizeArtifact, CliError> {
        let sweep = self.sweep()?.clone();
        let (cands, thr, ns) = (self.rc.eta_candidates.clone(), self.rc.eta_threshold, self.rc.n_sweep.clone());
        let r = self.rc.cfg.r;
        let eta_selection = select_eta(self.kernel()?.h(), r, &cands, thr);
        match eta_selection.eta {
            Some(e) if (e - self.rc.cfg.eta).abs() > 1e-12 => self.warnings.push(format!(
                "configured eta = {} differs from the selected eta = {e}",
                self.rc.cfg.eta
            )),
            None => self.warnings.push("no eta candidate meets the low-frequency threshold".into()),
            _ => {}
        }
        let h = self.kernel()?.h().clone();
        let spectral_norm_sq = self.kernel()?.norm_sq_spectral;
        let field = self.field()?;
        let split = split_diagnostics(field, &h, &ns);
        let mut rows = Vec::with_capacity(sweep.rows.len());
        for m in &sweep.rows {
            rows.push(SweepRow {
                n: m.n,
                u_cut: m.u_cut,
                inside: m.inside,
                outside: m.outside,
                fraction: m.fraction(),
                liouville_fraction: field.liouville_fraction(m.u_cut)?,
            });
        }
        let art = LocalizeArtifact {
            field: FieldSummary {
                cells: field.cells.len(),
                n_theta: field.n_theta,
                theta_check: field.theta_check,
                profile_error: field.profile_error,
                total_mass: field.total_mass(),
                spectral_norm_sq,
                volume: field.volume(),
            },
            eta_selection,
            target: sweep.target,
            rows,
            n_star: sweep.n_star,
            slope: sweep.slope,
            monotone: sweep.monotone,
            split,
        };
        let mut csv = String::from("t,u,weight,kappa_sq,kappa1_sq,kappa2_sq\n");
        for c in &field.cells {
            writeln!(
                csv,
                "{:e},{:e},{:e},{:e},{:e},{:e}",
                c.t,
                c.u,
                c.weight,
                c.value.kappa.norm_sqr(),
                c.value.kappa1.norm_sqr(),
                c.value.kappa2.norm_sqr()
            )
            .expect("string write");
        }
        let cuts: Vec<(f64, f64)> = art.rows.iter().map(|r| (r.n, r.u_cut)).collect();
        let picture = svg::localization(field, &cuts);
        let out = self.out_dir()?.to_path_buf();
        write_file(&out.join("kappa_heatmap.csv"), csv.as_bytes())?;
        write_file(&out.join("localization.svg"), picture.as_bytes())?;
        self.json("sweep.json", &art)?;
        Ok(art)
    }

    fn basis(&self) -> Result<EigenBasis, CliError> {
        let rc = &self.rc;
        let basis = match &rc.basis_file {
            Some(p) => {
                let b = load_basis(p)?;
                if (b.r - rc.cfg.r).abs() > 1e-12 || (b.window - rc.cfg.window).abs() > 1e-12 {
                    return Err(CliError::Compute(Error::Interface(format!(
                        "basis file is for r = {}, C = {} but the run uses r = {}, C = {}",
                        b.r, b.window, rc.cfg.r, rc.cfg.window
                    ))));
                }
                b
            }
            None => synth_basis_on(
                &rc.cfg,
                rc.basis_count(),
                rc.seed,
                PatchGrid::centered(rc.cfg.tau, rc.patch_samples),
            )?,
        };
        Ok(basis)
    }

    /// `quasimode_report.json`, `density.csv`, `psi_peak.svg`.
    pub fn quasimode_artifacts(&mut self) -> Result<QuasimodeArtifact, CliError> {
        let basis = self.basis()?;
        let n_star = self.sweep()?.n_star;
        let mut cfg = self.rc.cfg.clone();
        if let Some(n) = n_star {
            cfg.n = n;
        } else {
            self.warnings.push(format!("the N sweep never met the target; using the configured N = {}", cfg.n));
        }
        let h = self.kernel()?.h().clone();
        let field = self.field()?;
        let (report, qm) = mass_report(&basis, &cfg, field, &h)?;
        let lift_check = if self.rc.lift_samples > 0 && basis.synthesis.is_some() {
            Some(lift_consistency(&basis, &qm, &cfg, &report.chain, self.rc.lift_samples, self.rc.seed)?)
        } else {
            None
        };
        let rec = basis.synthesis.as_ref();
        let art = QuasimodeArtifact {
            basis: BasisSummary {
                d: basis.len(),
                source: basis.source,
                seed: rec.map(|r| r.seed),
                attempts: rec.map(|r| r.attempts),
                condition: rec.map(|r| r.condition),
                max_residual: rec.map(|r| r.residuals.iter().cloned().fold(0.0, f64::max)),
                grid: basis.grid,
            },
            n_used: cfg.n,
            calibrated: n_star.is_some(),
            enhancement_pass: report.enhancement >= self.rc.enhancement_threshold,
            enhancement_threshold: self.rc.enhancement_threshold,
            report,
            lift_check,
        };
        let dens = basis.density();
        let mut csv = String::from("x,y,density\n");
        for (k, v) in dens.iter().enumerate() {
            let (i, j) = basis.grid.coords(k);
            let z = basis.grid.point(i, j);
            writeln!(csv, "{:e},{:e},{v:e}", z.re, z.im).expect("string write");
        }
        let psi_sq: Vec<f64> = qm.values.iter().map(|v| v.norm_sqr()).collect();
        let picture = svg::patch_heatmap(&basis.grid, &psi_sq, Some(qm.point));
        let out = self.out_dir()?.to_path_buf();
        write_file(&out.join("density.csv"), csv.as_bytes())?;
        write_file(&out.join("psi_peak.svg"), picture.as_bytes())?;
        self.json("quasimode_report.json", &art)?;
        Ok(art)
    }

    /// Every stage, then `report.json`.
    pub fn report(&mut self) -> Result<Summary, CliError> {
        let bounds = self.build_kernel_artifacts()?;
        let loc = self.localize_artifacts()?;
        let qm = self.quasimode_artifacts()?;
        let summary = Summary {
            big_h_pass: bounds.checks.get("big_h").is_some_and(|c| c.pass),
            bounds_all_pass: bounds.all_pass,
            plancherel_gap: bounds.kernel.norm_gap,
            n_star: loc.n_star,
            sweep_slope: loc.slope,
            sweep_monotone: loc.monotone,
            kappa1_ratio: loc.split.kappa1_ratio,
            massive_point_gap: qm.report.massive_point_gap,
            correlation_over_floor: qm.report.correlation / qm.report.correlation_floor,
            enhancement: qm.report.enhancement,
            enhancement_pass: qm.enhancement_pass,
            lift_consistent: qm.lift_check.map(|l| l.consistent),
        };
        self.json("report.json", &summary)?;
        Ok(summary)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        let rc = RunConfig::default();
        assert!(rc.validate().unwrap().is_empty());
        assert_eq!(rc.basis_count(), 50);
    }

    #[test]
    fn invalid_run_configs() {
        let bad = [
            RunConfig { n_sweep: vec![], ..RunConfig::default() },
            RunConfig { n_sweep: vec![0.5, f64::NAN], ..RunConfig::default() },
            RunConfig { target_fraction: 0.0, ..RunConfig::default() },
            RunConfig { patch_samples: 4, ..RunConfig::default() },
            RunConfig { basis_size: Some(0), ..RunConfig::default() },
        ];
        for rc in bad {
            let err = rc.validate().unwrap_err();
            assert_eq!(err.exit_code(), 2);
        }
    }

    #[test]
    fn run_config_json_round_trip() {
        let rc = RunConfig { seed: 17, basis_size: Some(8), ..RunConfig::default() };
        let text = serde_json::to_string(&rc).unwrap();
        let back: RunConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back.seed, 17);
        assert_eq!(back.basis_size, Some(8));
        assert_eq!(back.cfg, rc.cfg);
        assert!(serde_json::from_str::<RunConfig>(r#"{"unknown": 1}"#).is_err());
    }

    #[test]
    fn error_json_shape() {
        let e = CliError::from(Error::Ingestion { offset: 12, message: "truncated".into() });
        assert_eq!(e.exit_code(), 1);
        let v = e.to_json();
        assert_eq!(v["error"], "ingestion");
        assert_eq!(v["offset"], 12);
        let e = CliError::from(Error::Config("r must be positive".into()));
        assert_eq!(e.exit_code(), 2);
        assert_eq!(e.to_json()["error"], "config");
        let e = CliError::from(Error::Resolution("grid".into()));
        assert!(e.to_json()["hint"].is_string());
    }
}
