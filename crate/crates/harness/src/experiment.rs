//! Model assembly and Monte Carlo trials.

use std::sync::Arc;

use cligme::gme::{self, PenaltyBlock};
use cligme::linop::{self, Operator};
use cligme::prox::L1Norm;
use cligme::solver::{self, SolverParams, SolverState};
use cligme::{CLigmeProblem, Vector};
use rayon::prelude::*;

use crate::config::{ConstraintCase, ExperimentConfig, Model};
use crate::error::{HarnessError, Result};
use crate::scene;

/// Builds the TV or cLiGME problem for `config` with blur `a`.
///
/// The observation is left at zero; trials attach their own with
/// [`CLigmeProblem::with_observation`].
pub fn build_model(config: &ExperimentConfig, a: Operator) -> Result<CLigmeProblem> {
    config.validate()?;
    let side = config.side;
    let (dv, dh) = linop::make_difference_operators(side)?;
    let l = linop::stack(dh.clone(), dv.clone())?;
    let z = l.codomain_dim();
    let mu = config.mu();
    let b = match config.model {
        Model::Tv => linop::zero(z, z),
        Model::Cligme => {
            let a_dense = linop::densify(a.as_ref());
            let blocks: Vec<PenaltyBlock> = [dh, dv]
                .iter()
                .zip(config.theta.iter().zip(&config.omega))
                .map(|(d, (&theta, &omega))| PenaltyBlock {
                    l: linop::densify(d.as_ref()),
                    weight: 1.0,
                    theta,
                    omega,
                })
                .collect();
            gme::design_b_multi(&a_dense, &blocks, mu)?
        }
    };
    let constraints = scene::build_constraints(config.case, side)?;
    let y = Vector::zeros(a.codomain_dim());
    Ok(CLigmeProblem::new(
        a,
        y,
        mu,
        Arc::new(L1Norm { dim: z }),
        l,
        b,
        constraints,
    )?)
}

pub fn build_blur(config: &ExperimentConfig) -> Result<Operator> {
    Ok(linop::make_blur(
        config.side,
        &config.blur.kernel,
        config.blur.boundary,
    )?)
}

#[derive(Debug, Clone)]
pub struct TrialResult {
    pub seed: u64,
    /// `||x_0 - x*||^2`.
    pub initial_se: f64,
    /// `||x_k - x*||^2` for `k = 1..=iterations`; held constant after early stopping.
    pub se_trace: Vec<f64>,
    pub final_se: f64,
    pub converged: bool,
    pub iterations_used: usize,
    /// Whether `recovered` meets the case's constraints within `1e-6`.
    pub feasible: bool,
    /// Largest constraint violation of the last iterate before the final projection.
    pub raw_violation: f64,
    pub observation: Vector,
    /// Last iterate projected onto the constraint intersection.
    pub recovered: Vector,
}

#[derive(Debug, Clone)]
pub struct TrialsSummary {
    pub model: Model,
    pub case: ConstraintCase,
    pub mu: f64,
    /// Mean of the final squared errors.
    pub mse: f64,
    /// Standard error of that mean (zero for a single trial).
    pub std_err: f64,
    /// Mean SE for iterations `0..=iterations`.
    pub mean_trace: Vec<f64>,
    pub trials: Vec<TrialResult>,
}

/// A configured experiment: phantom, blur, model and step sizes.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub phantom: Vector,
    pub problem: CLigmeProblem,
    pub params: SolverParams,
}

impl Experiment {
    pub fn new(config: &ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let phantom = scene::make_phantom(config.side)?;
        let problem = build_model(config, build_blur(config)?)?;
        let params = SolverParams::from_kappa(config.kappa, &problem)?
            .with_max_iters(config.iterations)
            .with_stop_tol(config.stop_tol);
        if !solver::feasibility_probe(&problem, 1e-6) {
            log::warn!("constraints of case {} look infeasible", config.case);
        }
        Ok(Self {
            config: config.clone(),
            phantom,
            problem,
            params,
        })
    }

    pub fn trial_seed(&self, index: usize) -> u64 {
        self.config.rng_seed.wrapping_add(index as u64)
    }

    pub fn run_trial(&self, index: usize) -> Result<TrialResult> {
        let seed = self.trial_seed(index);
        let trial_err = |source| HarnessError::Trial { index, source };
        let y = scene::observe(self.problem.a().as_ref(), &self.phantom, self.config.snr_db, seed)?;
        let problem = self.problem.with_observation(y.clone()).map_err(trial_err)?;
        let init = SolverState::zeros(&problem);
        let initial_se = (&init.x - &self.phantom).norm_squared();
        let mut se_trace = Vec::with_capacity(self.config.iterations);
        let report = solver::solve_with(&problem, &self.params, init, |_, s| {
            se_trace.push((&s.x - &self.phantom).norm_squared());
        })
        .map_err(trial_err)?;
        let final_se = *se_trace.last().unwrap_or(&initial_se);
        se_trace.resize(self.config.iterations, final_se);
        let recovered = scene::project_feasible(self.config.case, self.config.side, &report.x)?;
        let raw_violation = (&recovered - &report.x).amax();
        let feasible = problem.constraints().is_satisfied(&recovered, 1e-6);
        Ok(TrialResult {
            seed,
            initial_se,
            se_trace,
            final_se,
            converged: report.converged,
            iterations_used: report.iterations,
            feasible,
            raw_violation,
            observation: y,
            recovered,
        })
    }

    /// Runs every trial (in parallel) and aggregates in trial order.
    pub fn run(&self) -> Result<TrialsSummary> {
        let trials: Vec<TrialResult> = (0..self.config.trials)
            .into_par_iter()
            .map(|t| self.run_trial(t))
            .collect::<Result<_>>()?;
        Ok(summarize(&self.config, trials))
    }
}

fn summarize(config: &ExperimentConfig, trials: Vec<TrialResult>) -> TrialsSummary {
    let count = trials.len() as f64;
    let mse = trials.iter().map(|t| t.final_se).sum::<f64>() / count;
    let std_err = if trials.len() > 1 {
        let var = trials.iter().map(|t| (t.final_se - mse).powi(2)).sum::<f64>() / (count - 1.0);
        (var / count).sqrt()
    } else {
        0.0
    };
    let mut mean_trace = vec![0.0; config.iterations + 1];
    for t in &trials {
        mean_trace[0] += t.initial_se;
        for (acc, se) in mean_trace[1..].iter_mut().zip(&t.se_trace) {
            *acc += se;
        }
    }
    for v in &mut mean_trace {
        *v /= count;
    }
    TrialsSummary {
        model: config.model,
        case: config.case,
        mu: config.mu(),
        mse,
        std_err,
        mean_trace,
        trials,
    }
}

pub fn run_trials(config: &ExperimentConfig) -> Result<TrialsSummary> {
    Experiment::new(config)?.run()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub model: Model,
    pub case: ConstraintCase,
    pub mu: f64,
    pub mse: f64,
    pub std_err: f64,
}

/// Runs [`run_trials`] for every `(model, case, mu)` combination.
pub fn sweep_mu(
    config: &ExperimentConfig,
    models: &[Model],
    cases: &[ConstraintCase],
    mu_grid: &[f64],
) -> Result<Vec<SweepRow>> {
    if mu_grid.is_empty() {
        return Err(HarnessError::Config("mu grid is empty".into()));
    }
    let mut rows = Vec::new();
    for &model in models {
        for &case in cases {
            for &mu in mu_grid {
                let cfg = ExperimentConfig {
                    model,
                    case,
                    mu: Some(mu),
                    ..config.clone()
                };
                let s = run_trials(&cfg)?;
                log::info!("{model}/{case} mu={mu}: mse={:.6e}", s.mse);
                rows.push(SweepRow {
                    model,
                    case,
                    mu,
                    mse: s.mse,
                    std_err: s.std_err,
                });
            }
        }
    }
    Ok(rows)
}

/// The `mu` with the smallest MSE for one `(model, case)`.
pub fn best_mu(rows: &[SweepRow], model: Model, case: ConstraintCase) -> Option<SweepRow> {
    rows.iter()
        .filter(|r| r.model == model && r.case == case)
        .min_by(|a, b| a.mse.total_cmp(&b.mse))
        .copied()
}

/// All four cases for both models, each model at its own `mu`.
pub fn compare(config: &ExperimentConfig, mu_tv: f64, mu_cligme: f64) -> Result<Vec<TrialsSummary>> {
    let mut out = Vec::new();
    for model in Model::ALL {
        let mu = match model {
            Model::Tv => mu_tv,
            Model::Cligme => mu_cligme,
        };
        for case in ConstraintCase::ALL {
            let cfg = ExperimentConfig {
                model,
                case,
                mu: Some(mu),
                ..config.clone()
            };
            let s = run_trials(&cfg)?;
            log::info!("{model}/{case}: mse={:.6e} (+/- {:.2e})", s.mse, s.std_err);
            out.push(s);
        }
    }
    Ok(out)
}

/// Whether every trial ended within `tol` of its constraints.
pub fn all_feasible(summary: &TrialsSummary) -> bool {
    summary.trials.iter().all(|t| t.feasible)
}
