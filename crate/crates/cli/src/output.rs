//! CSV tables, staged in memory and written together.

use crate::CliError;
use sparse_observer::analysis::{CertificateMethod, NormCertificate};
use sparse_observer::design::{DesignResult, SubsetRecord};
use sparse_observer::linalg::Matrix;
use sparse_observer::lmi::NormType;
use std::fs;
use std::path::{Path, PathBuf};

/// Seventeen significant digits.
pub fn num(v: f64) -> String {
    format!("{v:.16e}")
}

/// File-name tag for a level, e.g. `h2_0.1`.
pub fn tag(norm: NormType, value: f64) -> String {
    format!("{norm}_{value}")
}

pub struct Table {
    writer: csv::Writer<Vec<u8>>,
}

impl Table {
    pub fn new<S: AsRef<str>>(header: &[S]) -> Result<Self, CliError> {
        let mut writer = csv::Writer::from_writer(Vec::new());
        writer.write_record(header.iter().map(AsRef::as_ref))?;
        Ok(Self { writer })
    }

    pub fn row<S: AsRef<[u8]>>(&mut self, fields: impl IntoIterator<Item = S>) -> Result<(), CliError> {
        self.writer.write_record(fields)?;
        Ok(())
    }

    pub fn finish(self) -> Result<Vec<u8>, CliError> {
        self.writer.into_inner().map_err(|e| CliError::Io(e.to_string()))
    }
}

/// Output files of one run. Nothing touches the disk until [`Artifacts::commit`].
#[derive(Default)]
pub struct Artifacts {
    files: Vec<(String, Vec<u8>)>,
}

impl Artifacts {
    pub fn add(&mut self, name: String, bytes: Vec<u8>) {
        self.files.push((name, bytes));
    }

    pub fn add_table(&mut self, name: String, table: Table) -> Result<(), CliError> {
        self.add(name, table.finish()?);
        Ok(())
    }

    /// Writes every file under `dir`, removing all of them if any write fails.
    pub fn commit(self, dir: &Path) -> Result<Vec<PathBuf>, CliError> {
        fs::create_dir_all(dir)?;
        let mut staged = Vec::new();
        let result = (|| -> Result<(), CliError> {
            for (name, bytes) in &self.files {
                let partial = dir.join(format!(".{name}.partial"));
                staged.push(partial.clone());
                fs::write(&partial, bytes)?;
            }
            Ok(())
        })();
        if let Err(e) = result {
            for p in &staged {
                let _ = fs::remove_file(p);
            }
            return Err(e);
        }
        let mut written = Vec::new();
        for ((name, _), partial) in self.files.iter().zip(&staged) {
            let target = dir.join(name);
            if let Err(e) = fs::rename(partial, &target) {
                for p in staged.iter().chain(&written) {
                    let _ = fs::remove_file(p);
                }
                return Err(e.into());
            }
            written.push(target);
        }
        Ok(written)
    }
}

/// `sensor, kappa_sq, in_support`
pub fn design_table(labels: &[String], result: &DesignResult) -> Result<Table, CliError> {
    let mut t = Table::new(&["sensor", "kappa_sq", "in_support"])?;
    for (i, label) in labels.iter().enumerate() {
        let k = result.kappa_sq.values()[i];
        t.row([label.clone(), num(k), result.support.contains(&i).to_string()])?;
    }
    Ok(t)
}

/// One row per state, one column per sensor.
pub fn gain_table(states: &[String], sensors: &[String], l: &Matrix) -> Result<Table, CliError> {
    let mut header = vec!["state".to_string()];
    header.extend(sensors.iter().cloned());
    let mut t = Table::new(&header)?;
    for (i, s) in states.iter().enumerate() {
        let mut row = vec![s.clone()];
        row.extend(l.row(i).iter().map(|&v| num(v)));
        t.row(row)?;
    }
    Ok(t)
}

const CERTIFICATE_HEADER: [&str; 8] = ["norm", "status", "achieved", "target", "satisfied", "method", "lower", "upper"];

pub fn certificate_table(cert: &NormCertificate) -> Result<Table, CliError> {
    let mut t = Table::new(&CERTIFICATE_HEADER)?;
    let (method, lower, upper) = match cert.method {
        CertificateMethod::Lyapunov { .. } => ("lyapunov", cert.value, cert.value),
        CertificateMethod::Bisection { lower, upper } => ("bisection", lower, upper),
    };
    t.row([
        cert.norm.to_string(),
        "optimal".into(),
        num(cert.value),
        num(cert.gamma_target),
        cert.satisfied.to_string(),
        method.into(),
        num(lower),
        num(upper),
    ])?;
    Ok(t)
}

/// Certificate of a run that produced no design.
pub fn infeasible_certificate(norm: NormType, target: f64, status: &str) -> Result<Table, CliError> {
    let mut t = Table::new(&CERTIFICATE_HEADER)?;
    let target = if target.is_finite() { num(target) } else { String::new() };
    t.row([norm.to_string(), status.into(), String::new(), target, "false".into(), String::new(), String::new(), String::new()])?;
    Ok(t)
}

/// `iteration, unit_objective, weighted_objective, support_size, beta_<sensor>.., rho_<sensor>..`
pub fn trace_table(labels: &[String], rough: &DesignResult, polished: &DesignResult) -> Result<Table, CliError> {
    let mut header: Vec<String> = ["iteration", "unit_objective", "weighted_objective", "support_size"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend(labels.iter().map(|l| format!("beta_{l}")));
    header.extend(labels.iter().map(|l| format!("rho_{l}")));
    let mut t = Table::new(&header)?;
    let rows = rough
        .iterations
        .iter()
        .enumerate()
        .map(|(k, r)| ((k + 1).to_string(), r))
        .chain(polished.iterations.iter().map(|r| ("polish".to_string(), r)));
    for (name, r) in rows {
        let mut row = vec![name, num(r.unit_objective), num(r.weighted_objective), r.support.len().to_string()];
        row.extend(r.beta.iter().map(|&b| num(b)));
        row.extend(r.rho.iter().map(|&v| num(v)));
        t.row(row)?;
    }
    Ok(t)
}

/// `mask, r, status, l1_of_kappa_sq, sensors`
pub fn subset_table(labels: &[String], records: &[SubsetRecord]) -> Result<Table, CliError> {
    let mut t = Table::new(&["mask", "r", "status", "l1_of_kappa_sq", "sensors"])?;
    for rec in records {
        let names: Vec<&str> = rec.sensors.iter().map(|&i| labels[i].as_str()).collect();
        t.row([
            rec.mask.to_string(),
            rec.r.to_string(),
            rec.status.to_string(),
            rec.l1_of_kappa_sq.map(num).unwrap_or_default(),
            names.join(";"),
        ])?;
    }
    Ok(t)
}
