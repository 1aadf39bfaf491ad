//! The `ncar` command line.
//!
//! Every command merges an optional config file (TOML or JSON) with command
//! line flags, flags winning, validates the result before doing any work,
//! and echoes the merged configuration into its output.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::companion::{classify_region_d2, phi_map, spectral_of_theta, Region};
use crate::error::{Error, Result};
use crate::estimation::{lse, lse_with_targets, EstimationResult, HSpec};
use crate::export::{
    estimation_csv_string, json_with_config, path_metadata, read_path_csv, summary_csv_string,
    write_mc_outputs, write_path_csv,
};
use crate::model::{validate_theta, ModelSpec, NoiseFamily, NoiseSpec};
use crate::moments::moments_report;
use crate::montecarlo::{run_experiment, ExperimentConfig, Statistic};
use crate::simulate::{forward_backward_equivalence, simulate_stationary, DEFAULT_TOL};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Parser)]
#[command(name = "ncar", version, about = "Stationary solutions of purely explosive autoregressions")]
pub struct Cli {
    /// Config file (TOML or JSON); flags override its entries
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Output directory
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,

    /// Seed for every random draw; required by commands that simulate
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct ModelArgs {
    /// Comma separated coefficients theta_1,...,theta_d
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub theta: Option<Vec<f64>>,

    #[arg(long)]
    pub sigma2: Option<f64>,

    /// gaussian, rademacher, uniform_centered or student_t
    #[arg(long)]
    pub noise: Option<String>,

    /// Degrees of freedom for student_t noise
    #[arg(long)]
    pub nu: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Eigenvalues and region of theta
    Classify {
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Simulate a stationary path
    Simulate {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        n: Option<usize>,
        /// Truncation tolerance
        #[arg(long)]
        tol: Option<f64>,
    },
    /// Covariance structure, theta* and limit covariances
    Moments {
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Least-squares estimate from a path file or a fresh simulation
    Estimate {
        #[command(flatten)]
        model: ModelArgs,
        /// Path CSV to read instead of simulating
        #[arg(long)]
        path: Option<PathBuf>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        tol: Option<f64>,
    },
    /// Monte Carlo check of a limit theorem
    Mc {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        replications: Option<usize>,
        /// mean_clt_u, mean_clt_y, h_clt, lse_clt or corrected_clt
        #[arg(long)]
        statistic: Option<String>,
        /// identity, proof_map, tanh, constant or coordinate:J (for h_clt)
        #[arg(long)]
        h: Option<String>,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        tol_cov_rel: Option<f64>,
        #[arg(long)]
        ks_threshold: Option<f64>,
        #[arg(long)]
        tol: Option<f64>,
    },
    /// Compare the forward-looking AR with its explosive counterpart
    ForwardEquiv {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        tol: Option<f64>,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Classify { .. } => "classify",
            Command::Simulate { .. } => "simulate",
            Command::Moments { .. } => "moments",
            Command::Estimate { .. } => "estimate",
            Command::Mc { .. } => "mc",
            Command::ForwardEquiv { .. } => "forward-equiv",
        }
    }
}

/// Settings shared by all commands, as read from a config file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub command: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nu: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replications: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub statistic: Option<Statistic>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol_cov_rel: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ks_threshold: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub format: Option<Format>,
}

macro_rules! overlay_fields {
    ($base:expr, $top:expr, $($f:ident),*) => {
        RunConfig { $($f: $top.$f.or($base.$f)),* }
    };
}

impl RunConfig {
    /// Fields set in `top` replace those of `self`.
    pub fn overlay(self, top: RunConfig) -> RunConfig {
        overlay_fields!(
            self, top, command, theta, sigma2, noise, nu, n, seed, tol, path, replications,
            statistic, workers, tol_cov_rel, ks_threshold, out, format
        )
    }

    pub fn load(file: &Path) -> Result<RunConfig> {
        let text = fs::read_to_string(file)?;
        let is_json = file.extension().is_some_and(|e| e == "json");
        if is_json {
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", file.display())))
        } else {
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", file.display())))
        }
    }

    pub fn echo(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }

    pub fn model(&self) -> Result<ModelSpec> {
        let theta = self
            .theta
            .clone()
            .ok_or_else(|| Error::Config("theta is required".into()))?;
        let family = match &self.noise {
            Some(name) => NoiseFamily::from_name(name, self.nu)?,
            None => NoiseFamily::Gaussian,
        };
        let noise = NoiseSpec {
            family,
            sigma2: self.sigma2.unwrap_or(1.0),
        };
        ModelSpec::new(theta, noise)
    }

    pub fn require_seed(&self) -> Result<u64> {
        self.seed
            .ok_or_else(|| Error::Config("--seed is required; no implicit seed is ever used".into()))
    }

    pub fn require_n(&self) -> Result<usize> {
        self.n.ok_or_else(|| Error::Config("n is required".into()))
    }

    pub fn tol(&self) -> Result<f64> {
        let tol = self.tol.unwrap_or(DEFAULT_TOL);
        if tol > 0.0 && tol.is_finite() {
            Ok(tol)
        } else {
            Err(Error::Config(format!("tolerance must be positive, got {tol}")))
        }
    }

    pub fn format(&self) -> Format {
        self.format.unwrap_or(Format::Json)
    }

    /// Monte Carlo configuration described by these settings.
    pub fn experiment(&self) -> Result<ExperimentConfig> {
        let statistic = self
            .statistic
            .clone()
            .ok_or_else(|| Error::Config("statistic is required".into()))?;
        let mut cfg = ExperimentConfig::new(
            self.model()?,
            self.require_n()?,
            self.replications
                .ok_or_else(|| Error::Config("replications is required".into()))?,
            self.require_seed()?,
            statistic,
        );
        if let Some(w) = self.workers {
            cfg.workers = w;
        }
        if let Some(t) = self.tol_cov_rel {
            cfg.tol_cov_rel = t;
        }
        if let Some(t) = self.tol {
            cfg.trunc_tol = t;
        }
        cfg.ks_threshold = self.ks_threshold;
        cfg.validate()?;
        Ok(cfg)
    }
}

pub fn parse_h(s: &str) -> Result<HSpec> {
    Ok(match s {
        "identity" => HSpec::Identity,
        "proof_map" => HSpec::ProofMap,
        "tanh" => HSpec::Tanh,
        "constant" => HSpec::Constant,
        _ => match s.strip_prefix("coordinate:") {
            Some(j) => HSpec::Coordinate {
                j: j.parse().map_err(|_| Error::BadH(format!("bad coordinate {j:?}")))?,
            },
            None => return Err(Error::BadH(format!("unknown h {s:?}"))),
        },
    })
}

pub fn parse_statistic(name: &str, h: Option<&str>) -> Result<Statistic> {
    Ok(match name {
        "mean_clt_u" => Statistic::MeanCltU,
        "mean_clt_y" => Statistic::MeanCltY,
        "lse_clt" => Statistic::LseClt,
        "corrected_clt" => Statistic::CorrectedClt,
        "h_clt" => Statistic::HClt {
            h: parse_h(h.ok_or_else(|| Error::Config("h_clt needs --h".into()))?)?,
        },
        other => return Err(Error::Config(format!("unknown statistic {other:?}"))),
    })
}

fn model_flags(m: &ModelArgs) -> RunConfig {
    RunConfig {
        theta: m.theta.clone(),
        sigma2: m.sigma2,
        noise: m.noise.clone(),
        nu: m.nu,
        ..RunConfig::default()
    }
}

fn flag_config(cli: &Cli) -> Result<RunConfig> {
    let mut c = match &cli.command {
        Command::Classify { model } | Command::Moments { model } => model_flags(model),
        Command::Simulate { model, n, tol } | Command::ForwardEquiv { model, n, tol } => RunConfig {
            n: *n,
            tol: *tol,
            ..model_flags(model)
        },
        Command::Estimate { model, path, n, tol } => RunConfig {
            path: path.clone(),
            n: *n,
            tol: *tol,
            ..model_flags(model)
        },
        Command::Mc {
            model,
            n,
            replications,
            statistic,
            h,
            workers,
            tol_cov_rel,
            ks_threshold,
            tol,
        } => RunConfig {
            n: *n,
            replications: *replications,
            statistic: statistic
                .as_deref()
                .map(|s| parse_statistic(s, h.as_deref()))
                .transpose()?,
            workers: *workers,
            tol_cov_rel: *tol_cov_rel,
            ks_threshold: *ks_threshold,
            tol: *tol,
            ..model_flags(model)
        },
    };
    c.command = Some(cli.command.name().to_string());
    c.out = cli.out.clone();
    c.format = cli.format;
    c.seed = cli.seed;
    Ok(c)
}

/// Config file entries overlaid with the command line flags.
pub fn effective_config(cli: &Cli) -> Result<RunConfig> {
    let base = match &cli.config {
        Some(file) => RunConfig::load(file)?,
        None => RunConfig::default(),
    };
    if let Some(cmd) = &base.command {
        if cmd != cli.command.name() {
            return Err(Error::Config(format!(
                "config is for `{cmd}`, invoked `{}`",
                cli.command.name()
            )));
        }
    }
    Ok(base.overlay(flag_config(cli)?))
}

#[derive(Debug, Serialize)]
struct ClassifyOutput {
    theta: Vec<f64>,
    eigenvalues: Vec<[f64; 2]>,
    rho: f64,
    rho_lower: f64,
    region: Region,
    on_boundary: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    closed_form_region: Option<Region>,
    #[serde(skip_serializing_if = "Option::is_none")]
    closed_form_agrees: Option<bool>,
}

/// Runs the command and writes its primary output to `stdout`.
pub fn run(cli: &Cli, stdout: &mut dyn Write) -> Result<()> {
    let cfg = effective_config(cli)?;
    let echo = cfg.echo();
    match &cli.command {
        Command::Classify { .. } => {
            let theta = cfg
                .theta
                .clone()
                .ok_or_else(|| Error::Config("theta is required".into()))?;
            validate_theta(&theta)?;
            let s = spectral_of_theta(&theta)?;
            let closed = if theta.len() == 2 {
                Some(classify_region_d2(&theta)?)
            } else {
                None
            };
            let out = ClassifyOutput {
                eigenvalues: s.eigenvalues.iter().map(|l| [l.re, l.im]).collect(),
                rho: s.rho,
                rho_lower: s.rho_lower,
                region: s.region,
                on_boundary: s.on_boundary,
                closed_form_region: closed,
                closed_form_agrees: closed.map(|c| c == s.region),
                theta,
            };
            emit(&cfg, "classify.json", &json_with_config(&out, &echo)?, stdout)
        }
        Command::Simulate { .. } => {
            let spec = cfg.model()?;
            let n = cfg.require_n()?;
            let seed = cfg.require_seed()?;
            let tol = cfg.tol()?;
            let dir = cfg
                .out
                .clone()
                .ok_or_else(|| Error::Config("simulate needs --out".into()))?;
            let path = simulate_stationary(&spec, n, seed, tol)?;
            fs::create_dir_all(&dir)?;
            write_path_csv(&path, fs::File::create(dir.join("path.csv"))?)?;
            let meta = path_metadata(&path, echo);
            let text = serde_json::to_string_pretty(&meta)? + "\n";
            fs::write(dir.join("path.json"), &text)?;
            stdout.write_all(text.as_bytes())?;
            Ok(())
        }
        Command::Moments { .. } => {
            let spec = cfg.model()?;
            let report = moments_report(&spec)?;
            emit(&cfg, "moments.json", &json_with_config(&report, &echo)?, stdout)
        }
        Command::Estimate { .. } => {
            let result = estimate(&cfg)?;
            match cfg.format() {
                Format::Csv => emit(&cfg, "estimate.csv", &estimation_csv_string(&result)?, stdout),
                Format::Json => emit(&cfg, "estimate.json", &json_with_config(&result, &echo)?, stdout),
            }
        }
        Command::Mc { .. } => {
            let experiment = cfg.experiment()?;
            let dir = cfg
                .out
                .clone()
                .ok_or_else(|| Error::Config("mc needs --out".into()))?;
            let report = run_experiment(&experiment)?;
            write_mc_outputs(&report, &dir, &echo)?;
            let text = match cfg.format() {
                Format::Csv => summary_csv_string(&report)?,
                Format::Json => {
                    let summary: serde_json::Map<String, serde_json::Value> = crate::montecarlo::summary_rows(&report)
                        .into_iter()
                        .map(|(k, v)| (k, serde_json::Value::String(v)))
                        .collect();
                    serde_json::to_string_pretty(&summary)? + "\n"
                }
            };
            stdout.write_all(text.as_bytes())?;
            Ok(())
        }
        Command::ForwardEquiv { .. } => {
            let spec = cfg.model()?;
            let n = cfg.require_n()?;
            let seed = cfg.require_seed()?;
            let report = forward_backward_equivalence(&spec, n, seed, cfg.tol()?)?;
            emit(&cfg, "forward_equiv.json", &json_with_config(&report, &echo)?, stdout)
        }
    }
}

fn estimate(cfg: &RunConfig) -> Result<EstimationResult> {
    if let Some(file) = &cfg.path {
        let series = read_path_csv(fs::File::open(file)?)?;
        let view = series.view()?;
        return match &cfg.theta {
            Some(theta) => {
                if theta.len() != series.d {
                    return Err(Error::WrongOrder {
                        expected: series.d,
                        got: theta.len(),
                    });
                }
                validate_theta(theta)?;
                lse_with_targets(view, theta, &phi_map(theta).value)
            }
            None => lse(view),
        };
    }
    let spec = cfg.model()?;
    let path = simulate_stationary(&spec, cfg.require_n()?, cfg.require_seed()?, cfg.tol()?)?;
    lse_with_targets(path.view(), &spec.theta, &phi_map(&spec.theta).value)
}

/// Writes `text` to stdout and, with `--out`, to `name` inside that directory.
fn emit(cfg: &RunConfig, name: &str, text: &str, stdout: &mut dyn Write) -> Result<()> {
    if let Some(dir) = &cfg.out {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(name), text)?;
    }
    stdout.write_all(text.as_bytes())?;
    Ok(())
}
