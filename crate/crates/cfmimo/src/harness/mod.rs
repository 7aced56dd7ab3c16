//! Experiment orchestration: configuration loading, benchmark sweeps with
//! paired channel draws, signaling accounting, timing, and CSV/JSON output.

pub mod checkpoint;

use std::fmt;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::beamform::{
    equal_power_solution, global_zf_equal_power, local_zf, mrt, random_irs_phases,
};
use crate::channel::{sample_realization, ChannelRealization, SimRng, SystemConfig};
use crate::error::{Error, Result};
use crate::fp_baseline::ao_solve;
use crate::gnn::{GnnConfig, GnnModel};
use crate::numerics::ComplexMatrix;
use crate::rate::{sum_rate, BeamformingSolution, EffectiveChannels};
use crate::trainer::{deploy_forward, mean_and_std, TrainConfig};

/// Top-level configuration file contents. Every section has defaults, so an
/// empty JSON object is a valid configuration.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct HarnessConfig {
    pub system: SystemConfig,
    pub gnn: GnnConfig,
    pub train: TrainConfig,
    pub experiment: Option<ExperimentSpec>,
}

pub fn load_config(path: &Path) -> Result<HarnessConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let cfg: HarnessConfig = serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("cannot parse {}: {e}", path.display())))?;
    cfg.system.validate()?;
    cfg.gnn.validate(cfg.system.bs_count)?;
    cfg.train.validate()?;
    if let Some(spec) = &cfg.experiment {
        spec.validate()?;
    }
    Ok(cfg)
}

/// Solution method under comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Distributed per-BS networks (requires a trained checkpoint).
    Dml,
    /// Centralized ZF directions with fractional-programming power
    /// allocation.
    GlobalZfPa,
    /// Centralized ZF with equal per-user power.
    GlobalZf,
    /// Per-BS ZF on local CSI with equal power.
    LocalZf,
    /// Matched filtering with equal power.
    Mrt,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Dml,
        Method::GlobalZfPa,
        Method::GlobalZf,
        Method::LocalZf,
        Method::Mrt,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Method::Dml => "dml",
            Method::GlobalZfPa => "global_zf_pa",
            Method::GlobalZf => "global_zf",
            Method::LocalZf => "local_zf",
            Method::Mrt => "mrt",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Swept scenario variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepVar {
    M,
    L,
    PMaxDbm,
    K,
}

/// One benchmark sweep: methods x sweep values x paired trials.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub methods: Vec<Method>,
    pub sweep: SweepVar,
    pub values: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(Error::Config("experiment needs at least one method".into()));
        }
        if self.values.is_empty() {
            return Err(Error::Config("experiment needs at least one sweep value".into()));
        }
        if self.trials == 0 {
            return Err(Error::Config("trials must be >= 1".into()));
        }
        if matches!(self.sweep, SweepVar::M | SweepVar::L | SweepVar::K) {
            for v in &self.values {
                if v.fract() != 0.0 || *v < 1.0 {
                    return Err(Error::Config(format!(
                        "sweep value {v} must be a positive integer"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Apply one sweep value to a base configuration.
    pub fn configure(&self, base: &SystemConfig, value: f64) -> Result<SystemConfig> {
        let mut cfg = base.clone();
        match self.sweep {
            SweepVar::M => cfg.antennas_per_bs = value as usize,
            SweepVar::L => cfg.irs_elements = value as usize,
            SweepVar::K => cfg.user_count = value as usize,
            SweepVar::PMaxDbm => cfg.p_max_dbm = value,
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// One aggregated line of a sweep. Infeasible method/configuration pairs
/// keep their accounting columns but carry no rate or timing numbers.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResultRow {
    pub method: String,
    pub m: usize,
    pub k: usize,
    pub l: usize,
    pub p_max_dbm: f64,
    pub mean_sum_rate: Option<f64>,
    pub std_sum_rate: Option<f64>,
    pub mean_time_ms: Option<f64>,
    pub csi_exchange_scalars: u64,
    pub signaling_exchange_scalars: u64,
    pub trials: usize,
    pub seed: u64,
    pub feasible: bool,
}

/// Real scalars exchanged per channel realization: CSI gathered centrally
/// and beamforming-related signaling distributed back.
pub fn exchange_accounting(method: Method, cfg: &SystemConfig) -> (u64, u64) {
    let (i, m, k, l) = (
        cfg.bs_count as u64,
        cfg.antennas_per_bs as u64,
        cfg.user_count as u64,
        cfg.irs_elements as u64,
    );
    match method {
        Method::Dml => (0, 2 * l),
        Method::GlobalZfPa | Method::GlobalZf => (2 * i * m * k, 2 * i * m * k),
        Method::LocalZf | Method::Mrt => (0, 0),
    }
}

fn solve_method(
    method: Method,
    cfg: &SystemConfig,
    real: &ChannelRealization,
    v: &ComplexMatrix,
    model: Option<&GnnModel>,
) -> Result<BeamformingSolution> {
    match method {
        Method::Dml => {
            let model = model.ok_or_else(|| Error::Config("dml requires a checkpoint".into()))?;
            deploy_forward(model, real, cfg.p_max_linear())
        }
        Method::GlobalZfPa => Ok(ao_solve(real, v, cfg, None)?.solution),
        Method::GlobalZf => {
            let eff = EffectiveChannels::compute(real, v);
            global_zf_equal_power(&eff, cfg, v)
        }
        Method::LocalZf => {
            let eff = EffectiveChannels::compute(real, v);
            let directions: Result<Vec<_>> =
                (0..cfg.bs_count).map(|i| local_zf(&eff, i)).collect();
            Ok(equal_power_solution(&directions?, cfg, v))
        }
        Method::Mrt => {
            let eff = EffectiveChannels::compute(real, v);
            Ok(equal_power_solution(&mrt(&eff)?, cfg, v))
        }
    }
}

/// Run a sweep. Every method at a sweep point sees the identical sequence of
/// channel realizations and shared random reflection vectors; solve timing
/// excludes channel generation.
pub fn run_experiment(
    spec: &ExperimentSpec,
    base: &SystemConfig,
    model: Option<&GnnModel>,
) -> Result<Vec<ResultRow>> {
    spec.validate()?;
    if spec.methods.contains(&Method::Dml) && model.is_none() {
        return Err(Error::Config("method list contains dml but no checkpoint was given".into()));
    }

    let mut rows = Vec::new();
    for value in &spec.values {
        let cfg = spec.configure(base, *value)?;
        if let (Some(model), true) = (model, spec.methods.contains(&Method::Dml)) {
            model.check_compatible(&cfg)?;
        }

        // Paired draws shared by every method at this sweep point.
        let draws: Vec<(ChannelRealization, ComplexMatrix)> = (0..spec.trials)
            .map(|t| {
                let mut rng = SimRng::from_seed(spec.seed).fork(t as u64);
                let real = sample_realization(&cfg, &mut rng);
                let v = random_irs_phases(cfg.irs_elements, &mut rng);
                (real, v)
            })
            .collect();

        for &method in &spec.methods {
            let (csi, signaling) = exchange_accounting(method, &cfg);
            let mut row = ResultRow {
                method: method.name().to_string(),
                m: cfg.antennas_per_bs,
                k: cfg.user_count,
                l: cfg.irs_elements,
                p_max_dbm: cfg.p_max_dbm,
                mean_sum_rate: None,
                std_sum_rate: None,
                mean_time_ms: None,
                csi_exchange_scalars: csi,
                signaling_exchange_scalars: signaling,
                trials: spec.trials,
                seed: spec.seed,
                feasible: true,
            };

            if method == Method::LocalZf && cfg.antennas_per_bs < cfg.user_count {
                row.feasible = false;
                rows.push(row);
                continue;
            }

            let noise = cfg.noise_linear();
            let outcomes: Result<Vec<(f64, f64)>> = draws
                .par_iter()
                .map(|(real, v)| {
                    let started = Instant::now();
                    let sol = solve_method(method, &cfg, real, v, model)?;
                    let elapsed_ms = started.elapsed().as_secs_f64() * 1e3;
                    Ok((sum_rate(real, &sol, noise), elapsed_ms))
                })
                .collect();
            let outcomes = outcomes?;
            let rates: Vec<f64> = outcomes.iter().map(|(r, _)| *r).collect();
            let times: Vec<f64> = outcomes.iter().map(|(_, t)| *t).collect();
            let (mean, std) = mean_and_std(&rates);
            row.mean_sum_rate = Some(mean);
            row.std_sum_rate = Some(std);
            row.mean_time_ms = Some(times.iter().sum::<f64>() / times.len() as f64);
            rows.push(row);
        }
    }
    Ok(rows)
}

/// Write rows as CSV; the header row is exactly the `ResultRow` field names.
pub fn write_results_csv(rows: &[ResultRow], path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    for row in rows {
        writer.serialize(row)?;
    }
    writer.flush()?;
    Ok(())
}

/// Results plus the provenance needed to reproduce them.
#[derive(Debug, Serialize)]
pub struct ExperimentReport<'a> {
    pub spec: &'a ExperimentSpec,
    pub base_config: &'a SystemConfig,
    pub rows: &'a [ResultRow],
}

pub fn write_results_json(report: &ExperimentReport, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(report)
        .map_err(|e| Error::Io(std::io::Error::other(e)))?;
    std::fs::write(path, text)?;
    Ok(())
}

/// Per-epoch history in CSV form.
pub fn write_history_csv(history: &[crate::trainer::EpochRecord], path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    for record in history {
        writer.serialize(record)?;
    }
    writer.flush()?;
    Ok(())
}

/// Surrogate trace rows from the power-allocation baseline.
#[derive(Debug, Serialize)]
pub struct TraceRow {
    pub trial: usize,
    pub outer_iteration: usize,
    pub stage: &'static str,
    pub surrogate_nats: f64,
}

pub fn write_trace_csv(rows: &[TraceRow], path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    for row in rows {
        writer.serialize(row)?;
    }
    writer.flush()?;
    Ok(())
}
