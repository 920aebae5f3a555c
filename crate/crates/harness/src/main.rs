use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use cligme::solver;
use cligme_harness::config::{DEFAULT_MU_CLIGME, DEFAULT_MU_TV};
use cligme_harness::experiment::{self, Experiment};
use cligme_harness::{output, ConstraintCase, ExperimentConfig, Model};

#[derive(Parser)]
#[command(name = "cligme", version, about = "Constrained deblurring experiments with TV and cLiGME")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one (model, case) configuration; write images and the SE trace.
    Demo(Common),
    /// Mean SE over a grid of regularization weights.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Comma-separated weights.
        #[arg(long, value_delimiter = ',', required = true)]
        mu_grid: Vec<f64>,
        /// Sweep every model and case instead of the configured pair.
        #[arg(long)]
        all: bool,
    },
    /// Both models on all four constraint cases.
    Compare {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = DEFAULT_MU_TV)]
        mu_tv: f64,
        #[arg(long, default_value_t = DEFAULT_MU_CLIGME)]
        mu_cligme: f64,
    },
    /// Print the convexity certificate, step sizes and feasibility check.
    Certify(Common),
    /// Print the effective configuration as `key = value` lines.
    ShowConfig(Common),
}

#[derive(Args)]
struct Common {
    /// `key = value` or JSON config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override any config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    model: Option<Model>,
    #[arg(long)]
    case: Option<ConstraintCase>,
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

impl Common {
    fn resolve(&self) -> anyhow::Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        for kv in &self.overrides {
            let Some((k, v)) = kv.split_once('=') else {
                bail!("--set expects KEY=VALUE, got `{kv}`");
            };
            cfg.set(k, v)?;
        }
        if let Some(m) = self.model {
            cfg.model = m;
        }
        if let Some(c) = self.case {
            cfg.case = c;
        }
        if self.mu.is_some() {
            cfg.mu = self.mu;
        }
        if let Some(t) = self.trials {
            cfg.trials = t;
        }
        if let Some(i) = self.iterations {
            cfg.iterations = i;
        }
        if let Some(s) = self.seed {
            cfg.rng_seed = s;
        }
        if let Some(d) = &self.output_dir {
            cfg.output_dir = d.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Demo(common) => {
            let cfg = common.resolve()?;
            let exp = Experiment::new(&cfg)?;
            let summary = exp.run()?;
            let dir = &cfg.output_dir;
            let prefix = format!("{}_{}_", cfg.model, cfg.case);
            let trace = dir.join(format!("{prefix}trace.csv"));
            output::write_trace_csv(&trace, &summary)?;
            let images = output::write_images(dir, &prefix, &exp.phantom, &summary, cfg.side)?;
            println!(
                "{} / {}: mu = {}, mean SE = {:.6e} (+/- {:.2e}) over {} trials",
                cfg.model, cfg.case, summary.mu, summary.mse, summary.std_err, summary.trials.len()
            );
            if !experiment::all_feasible(&summary) {
                println!("warning: some recovered images violate the constraints");
            }
            println!("wrote {}", trace.display());
            for p in images {
                println!("wrote {}", p.display());
            }
        }
        Command::Sweep { common, mu_grid, all } => {
            let cfg = common.resolve()?;
            let (models, cases) = if all {
                (Model::ALL.to_vec(), ConstraintCase::ALL.to_vec())
            } else {
                (vec![cfg.model], vec![cfg.case])
            };
            let rows = experiment::sweep_mu(&cfg, &models, &cases, &mu_grid)?;
            let path = cfg.output_dir.join("sweep.csv");
            output::write_sweep_csv(&path, &rows)?;
            for &m in &models {
                for &c in &cases {
                    if let Some(best) = experiment::best_mu(&rows, m, c) {
                        println!("{m} / {c}: best mu = {} (mean SE {:.6e})", best.mu, best.mse);
                    }
                }
            }
            println!("wrote {}", path.display());
        }
        Command::Compare { common, mu_tv, mu_cligme } => {
            let cfg = common.resolve()?;
            let summaries = experiment::compare(&cfg, mu_tv, mu_cligme)?;
            let rows: Vec<_> = summaries
                .iter()
                .map(|s| experiment::SweepRow {
                    model: s.model,
                    case: s.case,
                    mu: s.mu,
                    mse: s.mse,
                    std_err: s.std_err,
                })
                .collect();
            let table = cfg.output_dir.join("compare.csv");
            let traces = cfg.output_dir.join("compare_traces.csv");
            output::write_sweep_csv(&table, &rows)?;
            output::write_mean_traces_csv(&traces, &summaries)?;
            println!("{:<8} {:<8} {:>10} {:>14} {:>10}", "model", "case", "mu", "mean SE", "std err");
            for r in &rows {
                println!(
                    "{:<8} {:<8} {:>10} {:>14.6e} {:>10.2e}",
                    r.model.to_string(),
                    r.case.to_string(),
                    r.mu,
                    r.mse,
                    r.std_err
                );
            }
            println!("wrote {}", table.display());
            println!("wrote {}", traces.display());
        }
        Command::Certify(common) => {
            let cfg = common.resolve()?;
            let exp = Experiment::new(&cfg).context("building the model")?;
            let cert = exp.problem.certificate(solver::CERTIFICATE_TOL)?;
            println!("model {} / case {} / mu {}", cfg.model, cfg.case, cfg.mu());
            println!("lambda_min       {:.6e}", cert.lambda_min);
            println!("tolerance        {:.6e}", cert.tolerance);
            println!("convex           {}", cert.passed);
            println!("sigma            {:.12}", exp.params.sigma);
            println!("tau              {:.12}", exp.params.tau);
            println!(
                "step condition   {}",
                solver::verify_step_condition(&exp.params, &exp.problem)
            );
            println!(
                "feasibility      {}",
                solver::feasibility_probe(&exp.problem, 1e-6)
            );
        }
        Command::ShowConfig(common) => {
            print!("{}", common.resolve()?.to_key_values());
        }
    }
    Ok(())
}
