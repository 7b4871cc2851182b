//! Command-line arguments and the resolved run configuration.

use crate::CliError;
use clap::{Args, Parser, Subcommand};
use sparse_observer::design::ReweightOptions;
use sparse_observer::lmi::{DesignSpec, GammaMode, NormType};
use sparse_observer::model::{f16_v1000, load_model, LtiPlant};
use std::path::PathBuf;

#[derive(Debug, Parser)]
#[command(name = "sparse-observer", version, about = "Sparse sensor selection and observer design")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Reweighted design and polish for each attenuation level.
    Design(DesignArgs),
    /// Enumerate every sensor subset and keep the sparsest feasible one.
    Exhaustive(CommonArgs),
    /// Simulate the sparse and the full-sensor observers side by side.
    Simulate(SimulateArgs),
    /// Penalized-γ designs over a list of penalty weights.
    Sweep(SweepArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Model file (JSON); the bundled F-16 plant when omitted.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, default_value = "h2")]
    pub norm: NormType,
    /// Comma-separated attenuation levels.
    #[arg(long, value_delimiter = ',', default_value = "1,0.1,0.01")]
    pub gamma: Vec<f64>,
    /// Initial sensor weights: one value for all sensors or one per sensor.
    #[arg(long, value_delimiter = ',', default_value = "1")]
    pub rho: Vec<f64>,
    /// Upper bounds on κ², `none`, or a list where `inf` leaves a sensor unbounded.
    #[arg(long, default_value = "none")]
    pub kappa_max: String,
    #[arg(long, default_value = "results")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, default_value_t = 10)]
    pub max_iters: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 1.0)]
    pub lambda: f64,
}

#[derive(Debug, Args)]
pub struct DesignArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Optimize γ with this penalty weight instead of fixing it.
    #[arg(long)]
    pub penalty: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Drop the noise input and simulate the free response only.
    #[arg(long)]
    pub zero_noise: bool,
    /// Sample unit-intensity white noise instead of band-limited noise.
    #[arg(long, conflicts_with = "zero_noise")]
    pub white_noise: bool,
    /// Noise bandwidth in rad/s.
    #[arg(long, default_value_t = 100.0)]
    pub bandwidth: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub step: f64,
    #[arg(long, default_value_t = 10.0)]
    pub horizon: f64,
    /// Initial estimation error; `1, 0.01, ...` when omitted.
    #[arg(long, value_delimiter = ',')]
    pub e0: Option<Vec<f64>>,
    /// RMS is taken over samples after this time.
    #[arg(long, default_value_t = 1.0)]
    pub rms_from: f64,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Comma-separated penalty weights.
    #[arg(long, value_delimiter = ',', default_value = "0,1,10,100,1000")]
    pub penalty: Vec<f64>,
    /// Sensors (labels or 0-based indices) used in every design; all sensors when omitted.
    #[arg(long, value_delimiter = ',')]
    pub support: Option<Vec<String>>,
}

/// Everything a subcommand needs, validated.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub plant: LtiPlant,
    pub norm: NormType,
    pub gammas: Vec<f64>,
    pub rho: Vec<f64>,
    pub kappa_max: Option<Vec<f64>>,
    pub reweight: ReweightOptions,
    pub out: PathBuf,
    pub seed: u64,
}

impl RunConfig {
    pub fn from_args(args: &CommonArgs) -> Result<Self, CliError> {
        let model = match &args.model {
            Some(path) => load_model(path)?,
            None => f16_v1000(),
        };
        let plant = model.normalized()?;
        let ny = plant.n_y();
        if args.gamma.is_empty() {
            return Err(CliError::Config("at least one gamma is required".into()));
        }
        if let Some(g) = args.gamma.iter().find(|g| !(**g > 0.0 && g.is_finite())) {
            return Err(CliError::Config(format!("gamma must be positive, got {g}")));
        }
        let rho = broadcast("rho", &args.rho, ny)?;
        let kappa_max = match args.kappa_max.trim() {
            "none" | "" => None,
            list => {
                let values = list
                    .split(',')
                    .map(|s| s.trim().parse::<f64>())
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|e| CliError::Config(format!("kappa-max: {e}")))?;
                Some(broadcast("kappa-max", &values, ny)?)
            }
        };
        let reweight = ReweightOptions {
            max_iters: args.max_iters,
            epsilon: args.epsilon,
            lambda: args.lambda,
            ..Default::default()
        };
        reweight.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(Self {
            plant,
            norm: args.norm,
            gammas: args.gamma.clone(),
            rho,
            kappa_max,
            reweight,
            out: args.out.clone(),
            seed: args.seed,
        })
    }

    pub fn spec(&self, mode: GammaMode) -> DesignSpec {
        let spec = DesignSpec::new(self.norm, mode, self.plant.n_y()).with_rho(self.rho.clone());
        match &self.kappa_max {
            Some(b) => spec.with_bounds(b.clone()),
            None => spec,
        }
    }

    pub fn sensor_labels(&self) -> &[String] {
        self.plant.sensor_labels()
    }

    /// Sensor indices from labels or 0-based indices.
    pub fn resolve_sensors(&self, names: &[String]) -> Result<Vec<usize>, CliError> {
        let labels = self.sensor_labels();
        let mut out = names
            .iter()
            .map(|n| {
                let n = n.trim();
                labels
                    .iter()
                    .position(|l| l == n)
                    .or_else(|| n.parse::<usize>().ok().filter(|&i| i < labels.len()))
                    .ok_or_else(|| CliError::Config(format!("unknown sensor {n:?}")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        out.sort_unstable();
        out.dedup();
        Ok(out)
    }
}

fn broadcast(name: &str, values: &[f64], n: usize) -> Result<Vec<f64>, CliError> {
    match values.len() {
        1 => Ok(vec![values[0]; n]),
        len if len == n => Ok(values.to_vec()),
        len => Err(CliError::Config(format!("{name}: expected 1 or {n} values, got {len}"))),
    }
}
