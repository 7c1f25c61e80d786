//! `switchfilter`: batch driver for the switching-damping filtering study.
//!
//! Every verb runs the configured `(ε, seed)` grid and writes plot-ready CSV
//! files plus a `manifest.json` into `--out`.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use switchfilter::experiment::{
    averaged_posterior_error, cell_stem, density_compare, obs_sweep, rmse_summary, run_experiment,
    simulate_cell, write_outputs, write_theta_csv, Manifest, DENSITY_POINTS,
};
use switchfilter::{Error, ExperimentConfig, ModelId, ReferenceMode, Result};

#[derive(Parser, Debug)]
#[command(
    name = "switchfilter",
    version,
    about = "Filtering with model error for a regime-switching damped SDE"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run every configured model against the reference filter.
    Run(Common),
    /// Simulate truth paths and observations only.
    Simulate(Common),
    /// Emit the per-step calibrated parameters of the dynamic models.
    Calibrate(Common),
    /// Posterior errors over a grid of observation values at one step.
    SweepObs {
        #[command(flatten)]
        common: Common,
        /// Observation step to replay.
        #[arg(long, default_value_t = 20)]
        step: usize,
        /// Grid points spanning the predictive mean ± 4 standard deviations.
        #[arg(long, default_value_t = 201)]
        points: usize,
    },
    /// Root mean square differences from the reference per model.
    Rmse(Common),
    /// Prior densities and L1 distances at one step.
    Density {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 10)]
        step: usize,
        /// Observation-noise ratios `R/E` for the posterior-mixture diagnostic.
        #[arg(long, value_delimiter = ',', default_values_t = [0.25, 0.75])]
        ratios: Vec<f64>,
    },
    /// Print the default configuration as JSON.
    Config,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// JSON configuration; defaults to the benchmark study.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated scale-separation parameters.
    #[arg(long, value_delimiter = ',')]
    epsilon: Option<Vec<f64>>,
    #[arg(long)]
    steps: Option<usize>,
    /// Truth-path seed; repeat or comma-separate for several.
    #[arg(long, value_delimiter = ',')]
    seed: Option<Vec<u64>>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long, value_parser = parse_reference)]
    reference: Option<ReferenceMode>,
    /// Comma-separated model names to run.
    #[arg(long, value_delimiter = ',', value_parser = parse_model)]
    models: Option<Vec<ModelId>>,
}

fn parse_reference(s: &str) -> std::result::Result<ReferenceMode, String> {
    match s {
        "gaussian" => Ok(ReferenceMode::Gaussian),
        "mixture" => Ok(ReferenceMode::Mixture),
        "auto" => Ok(ReferenceMode::Auto),
        _ => Err(format!("expected gaussian, mixture or auto, got `{s}`")),
    }
}

fn parse_model(s: &str) -> std::result::Result<ModelId, String> {
    ModelId::parse(s).map_err(|e| e.to_string())
}

impl Common {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut c = match &self.config {
            Some(path) => ExperimentConfig::from_path(path)
                .map_err(|e| e.labeled(&path.display().to_string()))?,
            None => ExperimentConfig::default(),
        };
        if let Some(e) = &self.epsilon {
            c.epsilons = e.clone();
        }
        if let Some(n) = self.steps {
            c.steps = n;
        }
        if let Some(s) = &self.seed {
            c.seeds = s.clone();
        }
        if let Some(r) = self.reference {
            c.reference = r;
        }
        if let Some(m) = &self.models {
            c.models = m.clone();
        }
        c.validate()?;
        Ok(c)
    }
}

/// Collects written file names for the manifest.
struct Output {
    dir: PathBuf,
    files: Vec<String>,
}

impl Output {
    fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    fn create(&mut self, name: String) -> Result<BufWriter<fs::File>> {
        let file = fs::File::create(self.dir.join(&name))?;
        self.files.push(name);
        Ok(BufWriter::new(file))
    }

    fn finish(self, config: &ExperimentConfig) -> Result<PathBuf> {
        let manifest = Manifest {
            version: env!("CARGO_PKG_VERSION").to_string(),
            config: config.clone(),
            files: self.files,
            floored: Vec::new(),
        };
        let path = self.dir.join("manifest.json");
        fs::write(&path, serde_json::to_string_pretty(&manifest)?)?;
        Ok(path)
    }
}

fn run(common: &Common) -> Result<PathBuf> {
    let config = common.config()?;
    let cells = run_experiment(&config)?;
    write_outputs(&config, &cells, &common.out)
}

fn simulate(common: &Common) -> Result<PathBuf> {
    let config = common.config()?;
    let mut out = Output::new(&common.out)?;
    for &eps in &config.epsilons {
        for &seed in &config.seeds {
            let (truth, ys) = simulate_cell(&config, eps, seed)?;
            let stem = cell_stem(eps, seed);
            truth.write_csv(out.create(format!("{stem}_truth.csv"))?)?;
            let mut w = out.create(format!("{stem}_obs.csv"))?;
            writeln!(w, "n,t,y")?;
            for (i, y) in ys.iter().enumerate() {
                writeln!(w, "{},{},{y}", i + 1, (i + 1) as f64 * config.obs_interval)?;
            }
            w.flush()?;
        }
    }
    out.finish(&config)
}

fn calibrate(common: &Common) -> Result<PathBuf> {
    let mut config = common.config()?;
    if common.models.is_none() {
        config.models = vec![ModelId::DsmDynamic, ModelId::DdsmDynamic];
    }
    let cells = run_experiment(&config)?;
    let mut out = Output::new(&common.out)?;
    for cell in &cells {
        for m in &cell.models {
            if let Some(th) = &m.thetas {
                let name = format!(
                    "{}_{}_theta.csv",
                    cell_stem(cell.epsilon, cell.seed),
                    m.model.name()
                );
                let mut w = out.create(name)?;
                write_theta_csv(th, &mut w)?;
                w.flush()?;
            }
        }
    }
    out.finish(&config)
}

fn sweep_obs(common: &Common, step: usize, points: usize) -> Result<PathBuf> {
    let config = common.config()?;
    if step == 0 || step > config.steps {
        return Err(Error::InvalidInput(format!(
            "--step must lie in 1..={}",
            config.steps
        )));
    }
    let cells = run_experiment(&config)?;
    let mut out = Output::new(&common.out)?;
    for cell in &cells {
        let stem = cell_stem(cell.epsilon, cell.seed);
        let sweep = obs_sweep(&config, cell, step, points)?;
        let mut w = out.create(format!("{stem}_sweep_n{step}.csv"))?;
        writeln!(
            w,
            "y,model,post_mean,post_var,rel_err_post_mean,rel_err_post_var"
        )?;
        for (i, y) in sweep.ys.iter().enumerate() {
            let r = sweep.reference[i];
            writeln!(w, "{y},reference,{},{},0,0", r.mean, r.var)?;
            for c in &sweep.models {
                let (p, e) = (c.posterior[i], c.errors[i]);
                writeln!(
                    w,
                    "{y},{},{},{},{},{}",
                    c.model.name(),
                    p.mean,
                    p.var,
                    e.post_mean,
                    e.post_var
                )?;
            }
        }
        w.flush()?;
        let avg = averaged_posterior_error(&config, cell, step, points)?;
        let mut w = out.create(format!("{stem}_averaged_n{step}.csv"))?;
        writeln!(w, "model,post_mean,post_var,total")?;
        for (m, e) in avg {
            writeln!(
                w,
                "{},{},{},{}",
                m.name(),
                e.post_mean,
                e.post_var,
                e.posterior_total()
            )?;
        }
        w.flush()?;
    }
    out.finish(&config)
}

fn rmse(common: &Common) -> Result<PathBuf> {
    let config = common.config()?;
    let cells = run_experiment(&config)?;
    let mut out = Output::new(&common.out)?;
    let mut w = out.create("rmse.csv".into())?;
    writeln!(
        w,
        "epsilon,seed,model,prior_mean,prior_var,post_mean,post_var,posterior_score"
    )?;
    for row in cells.iter().flat_map(rmse_summary) {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            row.epsilon,
            row.seed,
            row.model.name(),
            row.prior_mean,
            row.prior_var,
            row.post_mean,
            row.post_var,
            row.posterior_score()
        )?;
        println!(
            "eps {:>6} seed {:>3} {:<14} post mean {:.3e} post var {:.3e} score {:.4}",
            row.epsilon,
            row.seed,
            row.model.name(),
            row.post_mean,
            row.post_var,
            row.posterior_score()
        );
    }
    w.flush()?;
    drop(w);
    out.finish(&config)
}

fn density(common: &Common, step: usize, ratios: &[f64]) -> Result<PathBuf> {
    let config = common.config()?;
    let mut out = Output::new(&common.out)?;
    for &eps in &config.epsilons {
        for &seed in &config.seeds {
            let report = density_compare(&config, eps, seed, step, ratios)?;
            let stem = cell_stem(eps, seed);
            let mut w = out.create(format!("{stem}_density_n{step}.csv"))?;
            let names: Vec<&String> = report.priors.keys().collect();
            let header: Vec<&str> = names.iter().map(|s| s.as_str()).collect();
            writeln!(w, "x,{}", header.join(","))?;
            for i in 0..DENSITY_POINTS {
                let row: Vec<String> = names
                    .iter()
                    .map(|k| report.priors[*k][i].to_string())
                    .collect();
                writeln!(w, "{},{}", report.grid[i], row.join(","))?;
            }
            w.flush()?;
            let mut w = out.create(format!("{stem}_density_n{step}_l1.csv"))?;
            writeln!(w, "kind,pair,value")?;
            for (pair, v) in &report.prior_l1 {
                writeln!(w, "prior,{pair},{v}")?;
                println!("eps {eps} seed {seed} n {step}: L1({pair}) = {v:.6}");
            }
            for (ratio, v) in &report.posterior_mixture_l1 {
                writeln!(w, "posterior_mixture,{ratio},{v}")?;
                println!("eps {eps} seed {seed} n {step}: L1(posterior mixture, moment match | R = {ratio}E) = {v:.6}");
            }
            w.flush()?;
        }
    }
    out.finish(&config)
}

fn exit_code(e: &Error) -> u8 {
    match e.category() {
        "config" => 3,
        "input" => 4,
        "numerical" => 5,
        "model" => 6,
        "io" => 7,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(c) => run(c),
        Command::Simulate(c) => simulate(c),
        Command::Calibrate(c) => calibrate(c),
        Command::SweepObs {
            common,
            step,
            points,
        } => sweep_obs(common, *step, *points),
        Command::Rmse(c) => rmse(c),
        Command::Density {
            common,
            step,
            ratios,
        } => density(common, *step, ratios),
        Command::Config => serde_json::to_string_pretty(&ExperimentConfig::default())
            .map(|s| {
                println!("{s}");
                PathBuf::new()
            })
            .map_err(Error::from),
    };
    match result {
        Ok(path) => {
            if !path.as_os_str().is_empty() {
                println!("wrote {}", path.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error[{}]: {e}", e.category());
            ExitCode::from(exit_code(&e))
        }
    }
}
