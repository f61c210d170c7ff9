//! Seeded Monte-Carlo sweeps, rate-energy regions and the verification suite.
//!
//! Instance `i` of a sweep is drawn with seed `base_seed ^ splitmix64(i)`, so
//! every row is reproducible regardless of how work is scheduled. Infeasible
//! instances contribute a zero rate to the average.

use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{generate_instance, ChannelError, ChannelSet, Evaluation, GenConfig};
use crate::linalg::HermMat;
use crate::oracle::OracleError;
use crate::schemes::{self, Scheme, SchemeError, SchemeOptions, Strategy};

pub mod verify;

pub use verify::{verify, CheckOutcome, VerifyConfig, VerifyReport};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid config field `{field}`: {message}")]
    Config { field: String, message: String },
    #[error("cannot parse config at `{path}`: {message}")]
    Parse { path: String, message: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Scheme(#[from] SchemeError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error("thread pool: {0}")]
    ThreadPool(String),
}

impl HarnessError {
    /// Errors caused by the configuration rather than by the run.
    pub fn is_config(&self) -> bool {
        matches!(self, HarnessError::Config { .. } | HarnessError::Parse { .. })
            || matches!(self, HarnessError::Channel(ChannelError::InvalidField { .. }))
    }
}

fn config_err(field: &str, message: impl Into<String>) -> HarnessError {
    HarnessError::Config { field: field.to_string(), message: message.into() }
}

/// Parses JSON, reporting the path of the offending field on failure.
pub fn parse_json<T: DeserializeOwned>(text: &str) -> Result<T, HarnessError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| HarnessError::Parse {
        path: e.path().to_string(),
        message: e.inner().to_string(),
    })
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Io { path: path.to_path_buf(), source })?;
    parse_json(&text)
}

/// SplitMix64 output for `i`; decorrelates consecutive instance seeds.
pub fn splitmix64(i: u64) -> u64 {
    let mut z = i.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn instance_seed(base_seed: u64, index: usize) -> u64 {
    base_seed ^ splitmix64(index as u64)
}

/// Thread count from `WIET_THREADS`, else `requested`.
pub fn thread_count(requested: Option<usize>) -> Option<usize> {
    std::env::var("WIET_THREADS").ok().and_then(|v| v.trim().parse().ok()).or(requested)
}

/// Runs `f` on a pool of `threads` workers, or on the global pool when `None`.
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T, HarnessError> {
    match threads {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| HarnessError::ThreadPool(e.to_string()))?;
            Ok(pool.install(f))
        }
    }
}

/// Energy targets of one grid point: the same value for every user, or one per user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EnergyPoint {
    Symmetric(f64),
    PerUser(Vec<f64>),
}

impl EnergyPoint {
    pub fn targets(&self, k: usize) -> Vec<f64> {
        match self {
            EnergyPoint::Symmetric(e) => vec![*e; k],
            EnergyPoint::PerUser(v) => v.clone(),
        }
    }
}

fn default_schemes() -> Vec<Scheme> {
    Scheme::ALL.to_vec()
}

fn default_k() -> usize {
    2
}

fn default_nt() -> usize {
    4
}

fn default_snr() -> f64 {
    10.0
}

fn default_split() -> f64 {
    0.5
}

fn default_channels() -> usize {
    500
}

/// Monte-Carlo sweep over an `(η, E)` grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_schemes")]
    pub schemes: Vec<Scheme>,
    #[serde(rename = "K", default = "default_k")]
    pub num_users: usize,
    #[serde(rename = "Nt", default = "default_nt")]
    pub num_antennas: usize,
    #[serde(default = "default_snr")]
    pub snr_db: f64,
    #[serde(default = "default_split")]
    pub ps_split: f64,
    pub eta: Vec<f64>,
    #[serde(rename = "E")]
    pub energy: Vec<EnergyPoint>,
    #[serde(default = "default_channels")]
    pub num_channels: usize,
    #[serde(default)]
    pub base_seed: u64,
    /// CSV destination; standard output when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub options: SchemeOptions,
    /// Per-scheme overrides of `options`.
    #[serde(default, skip_serializing_if = "HashMap::is_empty")]
    pub scheme_options: HashMap<Scheme, SchemeOptions>,
    /// Write measured wall time to the `seconds` column. Off by default so
    /// that output files are reproducible byte for byte.
    #[serde(default)]
    pub record_time: bool,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.schemes.is_empty() {
            return Err(config_err("schemes", "must not be empty"));
        }
        if self.num_users < 2 {
            return Err(config_err("K", "must be at least 2"));
        }
        if self.num_users != 2 && self.schemes.contains(&Scheme::Tdma) {
            return Err(config_err("schemes", "TDMA requires K = 2"));
        }
        if self.num_antennas == 0 {
            return Err(config_err("Nt", "must be at least 1"));
        }
        if !self.snr_db.is_finite() {
            return Err(config_err("snr_db", "must be finite"));
        }
        if !(0.0..=1.0).contains(&self.ps_split) {
            return Err(config_err("ps_split", "must lie in [0, 1]"));
        }
        if self.eta.is_empty() || self.eta.iter().any(|&e| !(e.is_finite() && e > 0.0)) {
            return Err(config_err("eta", "must be a nonempty list of positive numbers"));
        }
        if self.energy.is_empty() {
            return Err(config_err("E", "must not be empty"));
        }
        for (j, p) in self.energy.iter().enumerate() {
            let t = p.targets(self.num_users);
            if t.len() != self.num_users {
                return Err(config_err(&format!("E[{j}]"), format!("needs {} entries", self.num_users)));
            }
            if t.iter().any(|&e| !(e.is_finite() && e >= 0.0)) {
                return Err(config_err(&format!("E[{j}]"), "targets must be finite and nonnegative"));
            }
        }
        if self.num_channels == 0 {
            return Err(config_err("num_channels", "must be at least 1"));
        }
        Ok(())
    }

    pub fn options_for(&self, scheme: Scheme) -> &SchemeOptions {
        self.scheme_options.get(&scheme).unwrap_or(&self.options)
    }

    fn generator(&self, eta: f64, index: usize) -> GenConfig {
        GenConfig {
            ps_split: self.ps_split,
            ..GenConfig::new(self.num_users, self.num_antennas, eta, self.snr_db, instance_seed(self.base_seed, index))
        }
    }
}

/// Aggregate of one scheme at one `(η, E)` grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub scheme: Scheme,
    pub eta: f64,
    pub energy: Vec<f64>,
    pub num_channels: usize,
    pub feasible: usize,
    pub infeasible: usize,
    /// Solver failures; counted as infeasible in the rate average.
    pub failed: usize,
    pub feas_rate: f64,
    /// Mean weighted sum rate with infeasible instances counted as zero.
    pub avg_rate: f64,
    pub avg_rate_feasible: Option<f64>,
    pub iters_mean: f64,
    pub seconds: f64,
}

#[derive(Serialize)]
struct CsvRow<'a> {
    scheme: &'a str,
    eta: f64,
    #[serde(rename = "E1")]
    e1: f64,
    #[serde(rename = "E2")]
    e2: f64,
    feas_rate: f64,
    avg_rate: f64,
    avg_rate_feasible: Option<f64>,
    iters_mean: f64,
    seconds: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Outcome {
    Feasible { rate: f64, iterations: usize },
    Infeasible,
    Failed,
}

fn classify(r: Result<(Strategy, Evaluation), SchemeError>, scheme: Scheme) -> Outcome {
    match r {
        Ok((s, e)) if e.feasible => Outcome::Feasible { rate: e.weighted_sum_rate, iterations: s.meta.iterations },
        Ok(_) => {
            log::warn!("{scheme} returned a strategy that misses an energy target");
            Outcome::Infeasible
        }
        Err(SchemeError::InstanceInfeasible) => Outcome::Infeasible,
        Err(e) => {
            log::warn!("{scheme} failed: {e}");
            Outcome::Failed
        }
    }
}

/// `outcomes[e][s]` with the time spent on each.
type InstanceOutcomes = Vec<Vec<(Outcome, f64)>>;

fn run_instance(cfg: &ExperimentConfig, eta: f64, index: usize) -> Result<InstanceOutcomes, HarnessError> {
    let base = generate_instance(&cfg.generator(eta, index))?;
    // The TDMS decode slot ignores the targets: solve it once per instance.
    let decode = if cfg.schemes.contains(&Scheme::Tdms) {
        let free = base.clone().with_energy(vec![0.0; base.num_users])?;
        match schemes::solve_ideal(&free, cfg.options_for(Scheme::Tdms)) {
            Ok((s, _)) => Some(s),
            Err(e) => {
                log::warn!("TDMS decode slot failed on instance {index}: {e}");
                None
            }
        }
    } else {
        None
    };
    cfg.energy
        .iter()
        .map(|point| {
            let cs = base.clone().with_energy(point.targets(base.num_users))?;
            Ok(cfg
                .schemes
                .iter()
                .map(|&scheme| {
                    let start = Instant::now();
                    let opts = cfg.options_for(scheme);
                    let r = match scheme {
                        Scheme::Tdms => schemes::solve_tdms_with(&cs, opts, decode.as_ref()),
                        _ => schemes::solve(&cs, scheme, opts),
                    };
                    (classify(r, scheme), start.elapsed().as_secs_f64())
                })
                .collect())
        })
        .collect()
}

fn aggregate(cfg: &ExperimentConfig, scheme: Scheme, eta: f64, energy: Vec<f64>, cells: &[(Outcome, f64)]) -> SweepRow {
    let n = cells.len();
    let (mut feasible, mut infeasible, mut failed) = (0, 0, 0);
    let (mut rate_sum, mut iter_sum, mut seconds) = (0.0, 0usize, 0.0);
    for &(o, t) in cells {
        seconds += t;
        match o {
            Outcome::Feasible { rate, iterations } => {
                feasible += 1;
                rate_sum += rate;
                iter_sum += iterations;
            }
            Outcome::Infeasible => infeasible += 1,
            Outcome::Failed => failed += 1,
        }
    }
    SweepRow {
        scheme,
        eta,
        energy,
        num_channels: n,
        feasible,
        infeasible,
        failed,
        feas_rate: feasible as f64 / n as f64,
        avg_rate: rate_sum / n as f64,
        avg_rate_feasible: (feasible > 0).then(|| rate_sum / feasible as f64),
        iters_mean: if feasible > 0 { iter_sum as f64 / feasible as f64 } else { 0.0 },
        seconds: if cfg.record_time { seconds } else { 0.0 },
    }
}

/// Solves every scheme on `num_channels` instances per grid point. Rows are
/// ordered by `η`, then `E`, then scheme as listed in the config.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<Vec<SweepRow>, HarnessError> {
    cfg.validate()?;
    let mut rows = Vec::new();
    for &eta in &cfg.eta {
        let per_instance: Vec<InstanceOutcomes> =
            (0..cfg.num_channels).into_par_iter().map(|i| run_instance(cfg, eta, i)).collect::<Result<_, _>>()?;
        for (e, point) in cfg.energy.iter().enumerate() {
            for (s, &scheme) in cfg.schemes.iter().enumerate() {
                let cells: Vec<(Outcome, f64)> = per_instance.iter().map(|inst| inst[e][s]).collect();
                rows.push(aggregate(cfg, scheme, eta, point.targets(cfg.num_users), &cells));
            }
        }
    }
    Ok(rows)
}

/// Writes sweep rows with columns
/// `scheme,eta,E1,E2,feas_rate,avg_rate,avg_rate_feasible,iters_mean,seconds`.
pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], out: W) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(CsvRow {
            scheme: r.scheme.name(),
            eta: r.eta,
            e1: r.energy[0],
            e2: r.energy[1],
            feas_rate: r.feas_rate,
            avg_rate: r.avg_rate,
            avg_rate_feasible: r.avg_rate_feasible,
            iters_mean: r.iters_mean,
            seconds: r.seconds,
        })?;
    }
    w.flush().map_err(|source| HarnessError::Io { path: PathBuf::from("<csv>"), source })?;
    Ok(())
}

/// Sweep variable of a rate-energy region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum RegionSweep {
    /// Symmetric targets `E1 = E2 = E` over the listed values.
    Energy {
        #[serde(rename = "E")]
        values: Vec<f64>,
    },
    /// Weights `(cos²t, sin²t)` for `points` values of `t` in `[0, π/2]` at fixed targets.
    Weights {
        points: usize,
        #[serde(rename = "E")]
        energy: [f64; 2],
    },
}

fn default_eta() -> f64 {
    1.0
}

/// One channel realization and the sweep to run on it with the ideal scheme.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionConfig {
    #[serde(rename = "Nt", default = "default_nt")]
    pub num_antennas: usize,
    #[serde(default = "default_eta")]
    pub eta: f64,
    #[serde(default = "default_snr")]
    pub snr_db: f64,
    #[serde(default = "default_split")]
    pub ps_split: f64,
    #[serde(default)]
    pub seed: u64,
    pub sweep: RegionSweep,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub options: SchemeOptions,
}

impl RegionConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.num_antennas == 0 {
            return Err(config_err("Nt", "must be at least 1"));
        }
        if !(self.eta.is_finite() && self.eta > 0.0) {
            return Err(config_err("eta", "must be positive"));
        }
        match &self.sweep {
            RegionSweep::Energy { values } => {
                if values.is_empty() || values.iter().any(|&e| !(e.is_finite() && e >= 0.0)) {
                    return Err(config_err("sweep.E", "must be a nonempty list of nonnegative numbers"));
                }
            }
            RegionSweep::Weights { points, energy } => {
                if *points < 2 {
                    return Err(config_err("sweep.points", "must be at least 2"));
                }
                if energy.iter().any(|&e| !(e.is_finite() && e >= 0.0)) {
                    return Err(config_err("sweep.E", "targets must be finite and nonnegative"));
                }
            }
        }
        Ok(())
    }

    pub fn instance(&self) -> Result<ChannelSet, HarnessError> {
        let g = GenConfig { ps_split: self.ps_split, ..GenConfig::new(2, self.num_antennas, self.eta, self.snr_db, self.seed) };
        Ok(generate_instance(&g)?)
    }
}

/// One point of a rate-energy region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionRow {
    /// `E` or `t`, depending on the sweep.
    pub param: f64,
    pub r1: f64,
    pub r2: f64,
    pub sum: f64,
    pub feasible: bool,
}

fn region_row(param: f64, r: Result<(Strategy, Evaluation), SchemeError>) -> Result<(RegionRow, Option<Vec<HermMat>>), HarnessError> {
    match r {
        Ok((s, e)) if e.feasible => Ok((
            RegionRow { param, r1: e.rate[0], r2: e.rate[1], sum: e.rate[0] + e.rate[1], feasible: true },
            Some(s.slots[0].covariances.clone()),
        )),
        Ok(_) | Err(SchemeError::InstanceInfeasible) => {
            Ok((RegionRow { param, r1: 0.0, r2: 0.0, sum: 0.0, feasible: false }, None))
        }
        Err(e) => Err(e.into()),
    }
}

/// Ideal-scheme rates along the configured sweep. In energy mode the points
/// are solved from the largest target down, each warm-started from the
/// previous solution (feasible for any smaller target), so the reported sum
/// rate never increases with `E`.
pub fn rate_energy_region(cfg: &RegionConfig) -> Result<Vec<RegionRow>, HarnessError> {
    cfg.validate()?;
    let base = cfg.instance()?;
    match &cfg.sweep {
        RegionSweep::Energy { values } => {
            let mut order: Vec<usize> = (0..values.len()).collect();
            order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
            let mut rows = vec![None; values.len()];
            let mut warm: Vec<Vec<HermMat>> = Vec::new();
            for j in order {
                let cs = base.clone().with_energy(vec![values[j]; 2])?;
                let (row, cov) = region_row(values[j], schemes::solve_ideal_with_starts(&cs, &cfg.options, &warm))?;
                if let Some(c) = cov {
                    warm = vec![c];
                }
                rows[j] = Some(row);
            }
            Ok(rows.into_iter().flatten().collect())
        }
        RegionSweep::Weights { points, energy } => {
            let cs0 = base.with_energy(energy.to_vec())?;
            (0..*points)
                .into_par_iter()
                .map(|j| {
                    let t = std::f64::consts::FRAC_PI_2 * j as f64 / (*points - 1) as f64;
                    let cs = cs0.clone().with_weights(vec![t.cos().powi(2), t.sin().powi(2)])?;
                    Ok(region_row(t, schemes::solve_ideal(&cs, &cfg.options))?.0)
                })
                .collect()
        }
    }
}

/// Writes region rows; the first column is `E` or `t` to match the sweep.
pub fn write_region_csv<W: Write>(cfg: &RegionConfig, rows: &[RegionRow], out: W) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(out);
    let param = match cfg.sweep {
        RegionSweep::Energy { .. } => "E",
        RegionSweep::Weights { .. } => "t",
    };
    w.write_record([param, "R1", "R2", "sum", "feasible", "method"])?;
    for r in rows {
        w.write_record([
            r.param.to_string(),
            r.r1.to_string(),
            r.r2.to_string(),
            r.sum.to_string(),
            r.feasible.to_string(),
            "sca_multistart".to_string(),
        ])?;
    }
    w.flush().map_err(|source| HarnessError::Io { path: PathBuf::from("<csv>"), source })?;
    Ok(())
}

/// Input of a single `solve`: an explicit instance or a generator setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolveConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instance: Option<ChannelSet>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generate: Option<GenConfig>,
    /// Energy targets applied to a generated instance.
    #[serde(rename = "E", default, skip_serializing_if = "Option::is_none")]
    pub energy: Option<Vec<f64>>,
    #[serde(default = "default_schemes")]
    pub schemes: Vec<Scheme>,
    #[serde(default)]
    pub options: SchemeOptions,
}

impl SolveConfig {
    pub fn channel_set(&self) -> Result<ChannelSet, HarnessError> {
        let cs = match (&self.instance, &self.generate) {
            (Some(cs), None) => {
                cs.validate()?;
                cs.clone()
            }
            (None, Some(g)) => generate_instance(g)?,
            _ => return Err(config_err("instance", "give exactly one of `instance` and `generate`")),
        };
        match &self.energy {
            Some(e) if e.len() != cs.num_users => Err(config_err("E", format!("needs {} entries", cs.num_users))),
            Some(e) => Ok(cs.with_energy(e.clone())?),
            None => Ok(cs),
        }
    }
}

/// Result of one scheme on one instance; infeasibility is a result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveOutput {
    pub scheme: Scheme,
    pub evaluation: Evaluation,
    pub strategy: Strategy,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Runs each scheme; failures are reported alongside the all-zero strategy.
pub fn solve_all(cs: &ChannelSet, list: &[Scheme], opts: &SchemeOptions) -> Result<Vec<SolveOutput>, HarnessError> {
    list.iter()
        .map(|&scheme| match schemes::solve(cs, scheme, opts) {
            Ok((strategy, evaluation)) => Ok(SolveOutput { scheme, evaluation, strategy, error: None }),
            Err(e) => {
                let strategy = Strategy::zero(cs, scheme);
                let evaluation = schemes::evaluate(cs, &strategy)?;
                Ok(SolveOutput { scheme, evaluation, strategy, error: Some(e.to_string()) })
            }
        })
        .collect()
}

#[cfg(test)]
mod tests;
