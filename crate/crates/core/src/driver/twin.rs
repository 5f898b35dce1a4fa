//! Twin experiments: synthetic observations from a known truth run.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::config::{ExperimentConfig, ModelKind};
use crate::error::Result;
use crate::models::{ensure_finite, propagate};
use crate::operators::{SpdOperator, Vector};
use crate::problem::{AssimilationSetup, Formulation, ObservationWindow};

#[derive(Clone)]
pub struct TwinExperiment {
    pub seed: u64,
    /// True states `x_0..x_N`.
    pub truth: Vec<Vector>,
    pub observations: Vec<Vector>,
    pub background: Vector,
    pub setup: AssimilationSetup,
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> Vector {
    Vector::from_fn(n, |_, _| StandardNormal.sample(rng))
}

/// A draw from `N(0, C)`, i.e. `U ξ` with `C = U Uᵀ`.
fn correlated(rng: &mut ChaCha8Rng, c: &dyn SpdOperator) -> Vector {
    c.factor_apply(&gaussian(rng, c.dim()))
}

/// Generates the truth run, observations and background for `cfg`.
///
/// The truth starts from a spun-up state: Lorenz-96 is started at its
/// equilibrium `x = F` plus a small perturbation and integrated for
/// `spinup_steps` windows. Everything is drawn from one ChaCha8 stream seeded
/// with `experiment.seed`.
pub fn run_twin(cfg: &ExperimentConfig) -> Result<TwinExperiment> {
    cfg.validate()?;
    let seed = cfg.experiment.seed;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = cfg.build_model()?;
    let n = cfg.model.n;
    let big_n = cfg.experiment.windows;

    let mut x = match cfg.model.kind {
        ModelKind::Lorenz96 => Vector::from_element(n, cfg.model.forcing) + gaussian(&mut rng, n) * 0.01,
        ModelKind::Advection => gaussian(&mut rng, n),
    };
    for _ in 0..cfg.experiment.spinup_steps {
        x = model.step(&x)?;
    }

    let q = cfg.model_error_covariance()?;
    let noisy_model = cfg.experiment.model_noise && cfg.experiment.formulation == Formulation::Weak;
    let truth = if noisy_model {
        let mut traj = vec![x];
        for _ in 0..big_n {
            let next = model.step(traj.last().unwrap())? + correlated(&mut rng, q.as_ref());
            ensure_finite(&next, "truth run")?;
            traj.push(next);
        }
        traj
    } else {
        propagate(model.as_ref(), &x, big_n)?
    };

    let h = cfg.observation_operator()?;
    let r = cfg.observation_covariance()?;
    let mut observations = Vec::with_capacity(big_n + 1);
    let mut windows = Vec::with_capacity(big_n + 1);
    for xi in &truth {
        let mut y = h.observe(xi)?;
        if cfg.experiment.observation_noise {
            y += correlated(&mut rng, r.as_ref());
        }
        observations.push(y.clone());
        windows.push(ObservationWindow::new(y, h.clone(), r.clone())?);
    }

    let b = cfg.background_covariance()?;
    let mut background = truth[0].clone();
    if cfg.experiment.background_noise {
        background += correlated(&mut rng, b.as_ref());
    }

    let setup = match cfg.experiment.formulation {
        Formulation::Strong => AssimilationSetup::strong(model, background.clone(), b, windows)?,
        Formulation::Weak => {
            AssimilationSetup::weak(model, background.clone(), b, windows, vec![q; big_n])?
        }
    };
    Ok(TwinExperiment {
        seed,
        truth,
        observations,
        background,
        setup,
    })
}

impl TwinExperiment {
    /// `x_b` (strong) or the model trajectory from `x_b` (weak).
    pub fn initial_guess(&self) -> Result<Vector> {
        match self.setup.formulation() {
            Formulation::Strong => Ok(self.background.clone()),
            Formulation::Weak => self.setup.trajectory_from(&self.background),
        }
    }

    /// Initial state of a control vector.
    pub fn initial_state(&self, x: &Vector) -> Vector {
        x.rows(0, self.setup.state_dim()).into_owned()
    }

    pub fn background_error(&self) -> f64 {
        (&self.background - &self.truth[0]).norm()
    }

    pub fn analysis_error(&self, x: &Vector) -> f64 {
        (self.initial_state(x) - &self.truth[0]).norm()
    }
}
