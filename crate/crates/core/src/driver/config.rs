//! Experiment configuration, read from TOML.
//!
//! Every key is optional; missing keys take the defaults below.
//!
//! ```toml
//! [model]
//! kind = "lorenz96"        # or "advection"
//! n = 40
//! forcing = 8.0
//! dt = 0.05
//! substeps = 1
//! shift = 1                # advection only
//!
//! [observations]
//! operator = "selection"   # or "quadratic"
//! per_window = 20          # evenly spaced components observed at each time
//! offset = 0
//!
//! [covariances]
//! background_sigma = 1.0
//! # background_length_scale = 2.0   # isotropic B when set, diagonal otherwise
//! observation_sigma = 1.0
//! model_error_sigma = 0.1
//!
//! [solver]
//! route = "primal-pcg"     # primal-cgls, dual-rpcg, dual-gmres, saddle-minres, saddle-gmres
//! max_inner = 50
//! tolerance = 1e-6
//! reorthogonalize = true
//! ritz_pairs = 10
//! ritz_threshold = 1e-6
//!
//! [preconditioner]
//! first_level = true
//! second_level = "none"    # ritz-lmp, qn-lmp, spectral-lmp
//! theta = "unit"           # or "condition-min"
//! ftilde = "identity"      # zero, exact
//! # block = "pc"           # pd, pt, pc; saddle routes only
//!
//! [experiment]
//! formulation = "strong"   # or "weak"
//! windows = 10
//! outer = 5
//! seed = 0
//! spinup_steps = 200
//! safeguard = true
//! model_noise = false
//! observation_noise = true
//! background_noise = true
//! ```

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::krylov::SolverConfig;
use crate::models::{DynamicalModel, LinearAdvection, Lorenz96, ObservationOperator, PointSelection, QuadraticPoint};
use crate::operators::{CovarianceModel, SpdOperator};
use crate::precond::{FtildeChoice, ThetaMode};
use crate::problem::Formulation;
use crate::saddle::BlockVariant;

use super::tgn::{Route, SecondLevel, TgnConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Lorenz96,
    Advection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub kind: ModelKind,
    pub n: usize,
    pub forcing: f64,
    pub dt: f64,
    pub substeps: usize,
    pub shift: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            kind: ModelKind::Lorenz96,
            n: 40,
            forcing: 8.0,
            dt: 0.05,
            substeps: 1,
            shift: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObservationKind {
    Selection,
    Quadratic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObservationSection {
    pub operator: ObservationKind,
    pub per_window: usize,
    pub offset: usize,
}

impl Default for ObservationSection {
    fn default() -> Self {
        ObservationSection {
            operator: ObservationKind::Selection,
            per_window: 20,
            offset: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CovarianceSection {
    pub background_sigma: f64,
    pub background_length_scale: Option<f64>,
    pub observation_sigma: f64,
    pub model_error_sigma: f64,
}

impl Default for CovarianceSection {
    fn default() -> Self {
        CovarianceSection {
            background_sigma: 1.0,
            background_length_scale: None,
            observation_sigma: 1.0,
            model_error_sigma: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSection {
    pub route: Route,
    pub max_inner: usize,
    pub tolerance: f64,
    pub reorthogonalize: bool,
    pub ritz_pairs: usize,
    pub ritz_threshold: f64,
}

impl Default for SolverSection {
    fn default() -> Self {
        let base = SolverConfig::default();
        SolverSection {
            route: Route::PrimalPcg,
            max_inner: base.max_iterations,
            tolerance: base.tolerance,
            reorthogonalize: base.reorthogonalize,
            ritz_pairs: 10,
            ritz_threshold: base.ritz_threshold,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreconditionerSection {
    pub first_level: bool,
    pub second_level: SecondLevel,
    pub theta: ThetaMode,
    pub ftilde: FtildeChoice,
    pub block: Option<BlockVariant>,
}

impl Default for PreconditionerSection {
    fn default() -> Self {
        PreconditionerSection {
            first_level: true,
            second_level: SecondLevel::None,
            theta: ThetaMode::Unit,
            ftilde: FtildeChoice::Identity,
            block: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub formulation: Formulation,
    /// Number of windows `N`; observations are taken at `t_0..t_N`.
    pub windows: usize,
    pub outer: usize,
    pub seed: u64,
    pub spinup_steps: usize,
    pub safeguard: bool,
    pub model_noise: bool,
    pub observation_noise: bool,
    pub background_noise: bool,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        ExperimentSection {
            formulation: Formulation::Strong,
            windows: 10,
            outer: 5,
            seed: 0,
            spinup_steps: 200,
            safeguard: true,
            model_noise: false,
            observation_noise: true,
            background_noise: true,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelSection,
    pub observations: ObservationSection,
    pub covariances: CovarianceSection,
    pub solver: SolverSection,
    pub preconditioner: PreconditionerSection,
    pub experiment: ExperimentSection,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.model.n;
        let per = self.observations.per_window;
        if per == 0 || per > n {
            return Err(Error::Config(format!(
                "observations.per_window must lie in 1..={n}, got {per}"
            )));
        }
        if self.experiment.windows == 0 {
            return Err(Error::Config("experiment.windows must be at least 1".into()));
        }
        self.tgn_config().validate()?;
        self.build_model()?;
        self.observation_operator()?;
        self.background_covariance()?;
        self.observation_covariance()?;
        self.model_error_covariance()?;
        Ok(())
    }

    pub fn tgn_config(&self) -> TgnConfig {
        TgnConfig {
            outer: self.experiment.outer,
            solver: SolverConfig {
                max_iterations: self.solver.max_inner,
                tolerance: self.solver.tolerance,
                reorthogonalize: self.solver.reorthogonalize,
                ritz_pairs: self.solver.ritz_pairs,
                ritz_threshold: self.solver.ritz_threshold,
                seed: self.experiment.seed,
                ..SolverConfig::default()
            },
            route: self.solver.route,
            second_level: self.preconditioner.second_level,
            safeguard: self.experiment.safeguard,
            theta: self.preconditioner.theta,
            first_level: self.preconditioner.first_level,
            ftilde: self.preconditioner.ftilde,
            block: self.preconditioner.block,
        }
    }

    pub fn build_model(&self) -> Result<Arc<dyn DynamicalModel>> {
        let m = &self.model;
        Ok(match m.kind {
            ModelKind::Lorenz96 => Arc::new(Lorenz96::new(m.n, m.forcing, m.dt, m.substeps)?),
            ModelKind::Advection => Arc::new(LinearAdvection::with_shift(m.n, m.shift)?),
        })
    }

    /// Indices `⌊k n / p⌋ + offset (mod n)` for `k = 0..p`.
    pub fn observed_indices(&self) -> Vec<usize> {
        let (n, p) = (self.model.n, self.observations.per_window);
        (0..p).map(|k| (k * n / p + self.observations.offset) % n).collect()
    }

    pub fn observation_operator(&self) -> Result<Arc<dyn ObservationOperator>> {
        let idx = self.observed_indices();
        Ok(match self.observations.operator {
            ObservationKind::Selection => Arc::new(PointSelection::new(self.model.n, idx)?),
            ObservationKind::Quadratic => Arc::new(QuadraticPoint::new(self.model.n, idx)?),
        })
    }

    pub fn background_covariance(&self) -> Result<Arc<dyn SpdOperator>> {
        let c = &self.covariances;
        let sigma = vec![c.background_sigma; self.model.n];
        Ok(match c.background_length_scale {
            Some(l) => CovarianceModel::isotropic(&sigma, l)?.into_arc(),
            None => CovarianceModel::diagonal(&sigma)?.into_arc(),
        })
    }

    pub fn observation_covariance(&self) -> Result<Arc<dyn SpdOperator>> {
        Ok(CovarianceModel::scaled_identity(self.observations.per_window, self.covariances.observation_sigma)?.into_arc())
    }

    pub fn model_error_covariance(&self) -> Result<Arc<dyn SpdOperator>> {
        Ok(CovarianceModel::scaled_identity(self.model.n, self.covariances.model_error_sigma)?.into_arc())
    }
}
