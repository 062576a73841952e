//! TOML run configuration. Every section and key is optional; unknown keys
//! are rejected. Seeds left unset are derived from `master_seed`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use ersaa::bench::{InstanceConfig, DEFAULT_CALIBRATION_SAMPLES};
use ersaa::evalharness::{ExperimentConfig, Method, UcbOptions};
use ersaa::regress::DEFAULT_DELTA;

use crate::CliError;

pub const DEFAULT_MASTER_SEED: u64 = 20_190_611;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub master_seed: u64,
    pub instance: InstanceSection,
    pub demand: DemandSection,
    pub experiment: ExperimentSection,
    pub certification: CertificationSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InstanceSection {
    pub n_resources: usize,
    pub n_customers: usize,
    pub c_z_range: [f64; 2],
    pub rho_range: [f64; 2],
    pub mu_range: [f64; 2],
    pub tau_log_mean: f64,
    pub tau_log_sd: f64,
    pub z_max: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DemandSection {
    /// Raw covariates; the intercept is added when fitting.
    pub d_x: usize,
    pub degree: f64,
    pub sigma: f64,
    pub omega: u32,
    pub calibration_samples: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub covariate_seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSection {
    pub methods: Vec<String>,
    pub n_grid: Vec<usize>,
    pub replications: usize,
    pub project: bool,
    pub cv_folds: usize,
    pub delta: f64,
    pub saa_tol: f64,
    pub timing: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CertificationSection {
    pub n_eval: usize,
    pub n_batches: usize,
    pub t_multiplier: f64,
    pub lshaped_tol: f64,
    pub max_iter: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            master_seed: DEFAULT_MASTER_SEED,
            instance: InstanceSection::default(),
            demand: DemandSection::default(),
            experiment: ExperimentSection::default(),
            certification: CertificationSection::default(),
        }
    }
}

impl Default for InstanceSection {
    fn default() -> Self {
        let d = InstanceConfig::default();
        Self {
            n_resources: 20,
            n_customers: 30,
            c_z_range: [d.c_z_range.0, d.c_z_range.1],
            rho_range: [d.rho_range.0, d.rho_range.1],
            mu_range: [d.mu_range.0, d.mu_range.1],
            tau_log_mean: d.tau_log_mean,
            tau_log_sd: d.tau_log_sd,
            z_max: d.z_max,
            seed: None,
        }
    }
}

impl Default for DemandSection {
    fn default() -> Self {
        Self {
            d_x: 10,
            degree: 1.0,
            sigma: 5.0,
            omega: 1,
            calibration_samples: DEFAULT_CALIBRATION_SAMPLES,
            seed: None,
            covariate_seed: None,
        }
    }
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            methods: vec!["er_ols".into(), "n_saa".into()],
            n_grid: vec![40],
            replications: 1,
            project: true,
            cv_folds: 5,
            delta: DEFAULT_DELTA,
            saa_tol: 1e-6,
            timing: false,
        }
    }
}

impl Default for CertificationSection {
    fn default() -> Self {
        let u = UcbOptions::default();
        Self { n_eval: u.n_eval, n_batches: u.n_batches, t_multiplier: u.t_multiplier, lshaped_tol: u.lshaped_tol, max_iter: u.max_iter }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Canonical TOML with every key spelled out.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration is always representable")
    }

    fn check(&self) -> Result<(), CliError> {
        let d = &self.demand;
        if ![1, 2, 3].contains(&d.omega) {
            return Err(CliError::Config(format!("demand.omega must be 1, 2 or 3, got {}", d.omega)));
        }
        if ![0.5, 1.0, 2.0].contains(&d.degree) {
            return Err(CliError::Config(format!("demand.degree must be 0.5, 1 or 2, got {}", d.degree)));
        }
        if d.d_x < 3 {
            return Err(CliError::Config(format!("demand.d_x must be at least 3, got {}", d.d_x)));
        }
        for m in &self.experiment.methods {
            m.parse::<Method>().map_err(|e| CliError::Config(e.to_string()))?;
        }
        self.experiment_config()?.validate().map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn experiment_config(&self) -> Result<ExperimentConfig, CliError> {
        let mut c = ExperimentConfig::with_master_seed(self.master_seed);
        let i = &self.instance;
        c.n_resources = i.n_resources;
        c.n_customers = i.n_customers;
        c.instance = InstanceConfig {
            c_z_range: (i.c_z_range[0], i.c_z_range[1]),
            rho_range: (i.rho_range[0], i.rho_range[1]),
            mu_range: (i.mu_range[0], i.mu_range[1]),
            tau_log_mean: i.tau_log_mean,
            tau_log_sd: i.tau_log_sd,
            z_max: i.z_max,
        };
        let d = &self.demand;
        c.d_x = d.d_x;
        c.degree = d.degree;
        c.sigma = d.sigma;
        c.omega = d.omega;
        c.calibration_samples = d.calibration_samples;
        let e = &self.experiment;
        c.methods = e
            .methods
            .iter()
            .map(|m| m.parse::<Method>())
            .collect::<ersaa::Result<_>>()
            .map_err(|e| CliError::Config(e.to_string()))?;
        c.n_grid = e.n_grid.clone();
        c.replications = e.replications;
        c.project = e.project;
        c.cv_folds = e.cv_folds;
        c.delta = e.delta;
        c.saa_tol = e.saa_tol;
        c.timing = e.timing;
        let u = &self.certification;
        c.ucb = UcbOptions { n_eval: u.n_eval, n_batches: u.n_batches, t_multiplier: u.t_multiplier, lshaped_tol: u.lshaped_tol, max_iter: u.max_iter };
        if let Some(s) = i.seed {
            c.instance_seed = s;
        }
        if let Some(s) = d.seed {
            c.demand_seed = s;
        }
        if let Some(s) = d.covariate_seed {
            c.covariate_seed = s;
        }
        Ok(c)
    }
}
