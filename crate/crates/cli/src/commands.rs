//! The four subcommands. Each returns its staged files and an outcome; nothing is written here.

use crate::config::{RunConfig, SimulateArgs};
use crate::output::{
    certificate_table, design_table, gain_table, infeasible_certificate, num, subset_table, tag, trace_table,
    Artifacts, Table,
};
use crate::CliError;
use sparse_observer::analysis::{certify, simulate, AnalysisError, NoiseModel, SimulationOptions};
use sparse_observer::design::{design, exhaustive_search_with, polish_with, DesignError, DesignResult};
use sparse_observer::linalg::spectral_abscissa;
use sparse_observer::lmi::GammaMode;
use sparse_observer::model::{build_error_system, ErrorSystem};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Outcome {
    pub infeasible: bool,
    pub uncertified: bool,
}

impl Outcome {
    pub fn exit_code(self) -> u8 {
        if self.uncertified {
            4
        } else if self.infeasible {
            2
        } else {
            0
        }
    }
}

fn is_infeasible(e: &DesignError) -> bool {
    matches!(
        e,
        DesignError::Infeasible { .. } | DesignError::PolishInfeasible { .. } | DesignError::NoFeasibleSubset
    )
}

fn error_system(cfg: &RunConfig, r: &DesignResult) -> Result<ErrorSystem, CliError> {
    Ok(build_error_system(&cfg.plant, &r.l, &r.kappa_sq)?)
}

/// `<design>.csv`, `gain_<level>.csv` and `certificate_<level>.csv`; returns whether the certificate holds.
fn add_design_files(
    cfg: &RunConfig,
    files: &mut Artifacts,
    design: &str,
    level: &str,
    r: &DesignResult,
) -> Result<bool, CliError> {
    let labels = cfg.sensor_labels();
    let cert = certify(&error_system(cfg, r)?, cfg.norm, r.gamma)?;
    files.add_table(format!("{design}.csv"), design_table(labels, r)?)?;
    let gain = gain_table(cfg.plant.state_labels(), labels, &r.l)?;
    files.add_table(format!("gain_{level}.csv"), gain)?;
    files.add_table(format!("certificate_{level}.csv"), certificate_table(&cert)?)?;
    Ok(cert.satisfied)
}

pub fn cmd_design(cfg: &RunConfig, penalty: Option<f64>) -> Result<(Artifacts, Outcome), CliError> {
    let levels: Vec<(GammaMode, String, f64)> = match penalty {
        Some(c) => vec![(GammaMode::Penalized(c), format!("{}_c{c}", cfg.norm), f64::NAN)],
        None => cfg
            .gammas
            .iter()
            .map(|&g| (GammaMode::Fixed(g), tag(cfg.norm, g), g))
            .collect(),
    };
    let mut files = Artifacts::default();
    let mut outcome = Outcome::default();
    for (mode, name, target) in levels {
        let spec = cfg.spec(mode);
        match design(&cfg.plant, &spec, &cfg.reweight) {
            Ok((rough, polished)) => {
                let ok = add_design_files(cfg, &mut files, &format!("design_{name}"), &name, &polished)?;
                outcome.uncertified |= !ok;
                let trace = trace_table(cfg.sensor_labels(), &rough, &polished)?;
                files.add_table(format!("trace_{name}.csv"), trace)?;
            }
            Err(e) if is_infeasible(&e) => {
                outcome.infeasible = true;
                let cert = infeasible_certificate(cfg.norm, target, "infeasible")?;
                files.add_table(format!("certificate_{name}.csv"), cert)?;
            }
            Err(e) => return Err(e.into()),
        }
    }
    Ok((files, outcome))
}

pub fn cmd_exhaustive(cfg: &RunConfig) -> Result<(Artifacts, Outcome), CliError> {
    let mut files = Artifacts::default();
    let mut outcome = Outcome::default();
    for &g in &cfg.gammas {
        let name = tag(cfg.norm, g);
        let spec = cfg.spec(GammaMode::Fixed(g));
        match exhaustive_search_with(&cfg.plant, &spec, &cfg.reweight.solver) {
            Ok(ex) => {
                files.add_table(format!("subsets_{name}.csv"), subset_table(cfg.sensor_labels(), &ex.table)?)?;
                let level = format!("exhaustive_{name}");
                let ok = add_design_files(cfg, &mut files, &level, &level, &ex.best)?;
                outcome.uncertified |= !ok;
            }
            Err(e) if is_infeasible(&e) => {
                outcome.infeasible = true;
                let cert = infeasible_certificate(cfg.norm, g, "infeasible")?;
                files.add_table(format!("certificate_exhaustive_{name}.csv"), cert)?;
            }
            Err(e) => return Err(e.into()),
        }
    }
    Ok((files, outcome))
}

pub fn cmd_simulate(cfg: &RunConfig, args: &SimulateArgs) -> Result<(Artifacts, Outcome), CliError> {
    let n = cfg.plant.n_x();
    let e0 = args
        .e0
        .clone()
        .unwrap_or_else(|| (0..n).map(|i| if i == 0 { 1.0 } else { 0.01 }).collect());
    let noise = if args.zero_noise {
        NoiseModel::Zero
    } else if args.white_noise {
        NoiseModel::White
    } else {
        NoiseModel::BandLimited { bandwidth: args.bandwidth }
    };
    let opts = SimulationOptions {
        step: args.step,
        horizon: args.horizon,
        e0,
        noise,
        seed: cfg.seed,
    };
    let all: Vec<usize> = (0..cfg.plant.n_y()).collect();
    let mut files = Artifacts::default();
    let mut outcome = Outcome::default();
    for &g in &cfg.gammas {
        let name = tag(cfg.norm, g);
        let spec = cfg.spec(GammaMode::Fixed(g));
        let designs = design(&cfg.plant, &spec, &cfg.reweight)
            .and_then(|(_, sparse)| Ok((sparse, polish_with(&cfg.plant, &spec, &all, &cfg.reweight.solver)?)));
        let (sparse, full) = match designs {
            Ok(d) => d,
            Err(e) if is_infeasible(&e) => {
                outcome.infeasible = true;
                let cert = infeasible_certificate(cfg.norm, g, "infeasible")?;
                files.add_table(format!("certificate_{name}.csv"), cert)?;
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        let mut header = vec!["configuration".to_string(), "sensors".into(), "total_rms".into()];
        header.extend(cfg.plant.output_labels().iter().map(|l| format!("rms_{l}")));
        header.extend(["decay_rate".to_string(), "envelope_constant".into()]);
        let mut summary = Table::new(&header)?;
        for (label, r) in [("sparse", &sparse), ("full", &full)] {
            let sys = error_system(cfg, r)?;
            let run = simulate(&sys, &opts)?;
            let mut csv = Vec::new();
            run.write_csv(&mut csv)?;
            files.add(format!("trajectory_{label}_{name}.csv"), csv);
            let alpha = -0.5 * spectral_abscissa(&sys.a_cl).map_err(AnalysisError::from)?;
            let sensors: Vec<&str> = r.support.iter().map(|&i| cfg.sensor_labels()[i].as_str()).collect();
            let mut row = vec![label.to_string(), sensors.join(";"), num(run.total_rms(args.rms_from))];
            row.extend(run.output_rms(args.rms_from).into_iter().map(num));
            row.extend([num(alpha), num(run.envelope_constant(alpha))]);
            summary.row(row)?;
        }
        files.add_table(format!("simulation_{name}.csv"), summary)?;
    }
    Ok((files, outcome))
}

pub fn cmd_sweep(cfg: &RunConfig, penalties: &[f64], support: &[usize]) -> Result<(Artifacts, Outcome), CliError> {
    let labels = cfg.sensor_labels();
    let mut header: Vec<String> = ["c", "status", "gamma", "achieved", "satisfied", "l1_of_kappa_sq"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend(labels.iter().map(|l| format!("kappa_sq_{l}")));
    let mut table = Table::new(&header)?;
    let mut outcome = Outcome::default();
    for &c in penalties {
        let spec = cfg.spec(GammaMode::Penalized(c));
        match polish_with(&cfg.plant, &spec, support, &cfg.reweight.solver) {
            Ok(r) => {
                let cert = certify(&error_system(cfg, &r)?, cfg.norm, r.gamma)?;
                outcome.uncertified |= !cert.satisfied;
                let mut row = vec![
                    num(c),
                    "optimal".into(),
                    num(r.gamma),
                    num(cert.value),
                    cert.satisfied.to_string(),
                    num(r.kappa_l1()),
                ];
                row.extend(r.kappa_sq.values().iter().map(|&k| num(k)));
                table.row(row)?;
            }
            Err(e) if is_infeasible(&e) => {
                outcome.infeasible = true;
                let mut row = vec![num(c), "infeasible".into()];
                row.extend(std::iter::repeat(String::new()).take(4 + labels.len()));
                table.row(row)?;
            }
            Err(e) => return Err(e.into()),
        }
    }
    let mut files = Artifacts::default();
    files.add_table(format!("sweep_{}.csv", cfg.norm), table)?;
    Ok((files, outcome))
}
