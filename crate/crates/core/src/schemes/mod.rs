//! Solvers for the five transmission schemes and the evaluator that scores
//! their strategies from first principles.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{feasible_alpha_interval, received_powers, tdma_feasible, ChannelError, ChannelSet, Evaluation};
use crate::closedform::{
    max_quad_energy_floor, tdma_slot_solve, tdms_eh_solve, ClosedFormError, EhSolution, FloorOutcome, Slot,
};
use crate::linalg::{CVec, HermMat};
use crate::subsolver::{solve_convex_with, Affine, ConvexProgram, MatVar, ProgramError, ScalarVar, SolveStatus, SolverOptions};

pub mod sca;

pub use sca::{Receiver, ScaPoint, ScaRun, ScaState};

/// Energy margins `β` this far below one still count as feasible.
const FEAS_RTOL: f64 = 1e-9;
/// Slots shorter than this are dropped from TDMA(D) solutions.
const MIN_SLOT: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scheme {
    Ideal,
    #[serde(rename = "TDMS")]
    Tdms,
    #[serde(rename = "TDMA")]
    Tdma,
    #[serde(rename = "TDMA_D")]
    TdmaD,
    #[serde(rename = "PS")]
    Ps,
}

impl Scheme {
    pub const ALL: [Scheme; 5] = [Scheme::Ideal, Scheme::Tdms, Scheme::Tdma, Scheme::TdmaD, Scheme::Ps];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Ideal => "Ideal",
            Scheme::Tdms => "TDMS",
            Scheme::Tdma => "TDMA",
            Scheme::TdmaD => "TDMA_D",
            Scheme::Ps => "PS",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = SchemeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Scheme::ALL
            .into_iter()
            .find(|x| x.name().eq_ignore_ascii_case(s) || (s.eq_ignore_ascii_case("TDMA(D)") && *x == Scheme::TdmaD))
            .ok_or_else(|| SchemeError::UnsupportedConfiguration(format!("unknown scheme `{s}`")))
    }
}

/// What the receivers do during one time slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlotMode {
    /// Every receiver decodes and harvests the same signal (split by `ρ` for PS).
    Simultaneous,
    /// Every receiver harvests.
    Harvest,
    /// Every receiver decodes.
    Decode,
    /// `user` decodes while every other receiver harvests.
    Decoder { user: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSlot {
    pub alpha: f64,
    pub mode: SlotMode,
    /// Indexed by transmitter.
    pub covariances: Vec<HermMat>,
}

/// Solver bookkeeping attached to a strategy.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct StrategyMeta {
    /// Weighted sum rate the solver reported.
    pub objective: f64,
    /// SCA iterations of the selected start, or line-search evaluations.
    pub iterations: usize,
    pub newton_steps: usize,
    /// A closed form was unavailable and the generic solver was used.
    pub fallback: bool,
    /// Energy margin `β` of the max-min energy program, when computed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    /// Objective trace of the selected SCA start.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub trace: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Strategy {
    pub scheme: Scheme,
    pub slots: Vec<TimeSlot>,
    /// Power-splitting ratios (PS only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<Vec<f64>>,
    pub meta: StrategyMeta,
}

impl Strategy {
    /// All-zero covariances in a single full-length slot.
    pub fn zero(cs: &ChannelSet, scheme: Scheme) -> Self {
        let mode = match scheme {
            Scheme::Ideal | Scheme::Ps => SlotMode::Simultaneous,
            Scheme::Tdms => SlotMode::Decode,
            Scheme::Tdma | Scheme::TdmaD => SlotMode::Decoder { user: 0 },
        };
        Strategy {
            scheme,
            slots: vec![TimeSlot { alpha: 1.0, mode, covariances: zeros(cs) }],
            rho: (scheme == Scheme::Ps).then(|| vec![0.0; cs.num_users]),
            meta: StrategyMeta::default(),
        }
    }

    pub fn total_time(&self) -> f64 {
        self.slots.iter().map(|s| s.alpha).sum()
    }
}

fn zeros(cs: &ChannelSet) -> Vec<HermMat> {
    vec![HermMat::zeros(cs.num_antennas); cs.num_users]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchemeOptions {
    /// SCA starting points for the ideal and PS schemes.
    pub multistarts: usize,
    pub max_iters: usize,
    /// SCA stops once the relative objective gain drops to this.
    pub rel_tol: f64,
    /// Seeds the random SCA starting points.
    pub seed: u64,
    /// Uniform grid size of the TDMA time-fraction search.
    pub alpha_grid: usize,
    /// Bracket width at which the golden-section refinement stops.
    pub alpha_tol: f64,
    pub solver: SolverOptions,
}

impl Default for SchemeOptions {
    fn default() -> Self {
        SchemeOptions {
            multistarts: 5,
            max_iters: 100,
            rel_tol: 1e-3,
            seed: 0,
            alpha_grid: 50,
            alpha_tol: 1e-5,
            solver: SolverOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SchemeError {
    #[error("energy requirements cannot be met")]
    InstanceInfeasible,
    #[error("convex subproblem ended with status {status:?} after {} accepted iterates", trace.len())]
    SubsolverFailure { status: SolveStatus, trace: Vec<f64> },
    #[error("unsupported configuration: {0}")]
    UnsupportedConfiguration(String),
    #[error("strategy shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    ClosedForm(ClosedFormError),
    #[error(transparent)]
    Program(#[from] ProgramError),
}

impl From<ClosedFormError> for SchemeError {
    fn from(e: ClosedFormError) -> Self {
        match e {
            ClosedFormError::Solver(status) => SchemeError::SubsolverFailure { status, trace: Vec::new() },
            ClosedFormError::SlotInfeasible | ClosedFormError::Channel(ChannelError::EmptyInterval) => {
                SchemeError::InstanceInfeasible
            }
            ClosedFormError::Channel(c) => SchemeError::Channel(c),
            ClosedFormError::Program(p) => SchemeError::Program(p),
            other => SchemeError::ClosedForm(other),
        }
    }
}

/// Recomputes per-user rates and harvested energies of `s` slot by slot.
pub fn evaluate(cs: &ChannelSet, s: &Strategy) -> Result<Evaluation, SchemeError> {
    let k = cs.num_users;
    let total = s.total_time();
    if !(total <= 1.0 + 1e-9) {
        return Err(SchemeError::ShapeMismatch(format!("time fractions sum to {total}")));
    }
    let rho = match (s.scheme, &s.rho) {
        (Scheme::Ps, Some(r)) if r.len() == k && r.iter().all(|x| (0.0..=1.0).contains(x)) => Some(r.as_slice()),
        (Scheme::Ps, _) => return Err(SchemeError::ShapeMismatch(format!("PS needs {k} splitting ratios in [0, 1]"))),
        _ => None,
    };
    let mut rate = vec![0.0; k];
    let mut energy = vec![0.0; k];
    for slot in &s.slots {
        if !(slot.alpha >= 0.0 && slot.alpha <= 1.0 + 1e-9) {
            return Err(SchemeError::ShapeMismatch(format!("time fraction {} outside [0, 1]", slot.alpha)));
        }
        let g = received_powers(cs, &slot.covariances)?;
        if slot.alpha == 0.0 {
            continue;
        }
        let a = slot.alpha;
        let interference = |i: usize| (0..k).filter(|&j| j != i).map(|j| g[j][i].max(0.0)).sum::<f64>();
        let harvested = |i: usize| cs.gamma * (0..k).map(|j| g[j][i]).sum::<f64>();
        match slot.mode {
            SlotMode::Simultaneous => {
                for i in 0..k {
                    let (sinr, share) = match rho {
                        Some(r) if r[i] == 0.0 => (0.0, 1.0),
                        Some(r) => {
                            let den = r[i] * (interference(i) + cs.tilde_sigma2[i]) + cs.hat_sigma2[i];
                            (r[i] * g[i][i].max(0.0) / den, 1.0 - r[i])
                        }
                        None => (g[i][i].max(0.0) / (interference(i) + cs.sigma2[i]), 1.0),
                    };
                    rate[i] += a * (1.0 + sinr).log2();
                    energy[i] += a * share * harvested(i);
                }
            }
            SlotMode::Harvest => {
                for (i, e) in energy.iter_mut().enumerate() {
                    *e += a * harvested(i);
                }
            }
            SlotMode::Decode => {
                for (i, r) in rate.iter_mut().enumerate() {
                    *r += a * (1.0 + g[i][i].max(0.0) / (interference(i) + cs.sigma2[i])).log2();
                }
            }
            SlotMode::Decoder { user } => {
                if user >= k {
                    return Err(SchemeError::ShapeMismatch(format!("decoder index {user} out of range")));
                }
                // Deterministic energy signals are known to the decoder and cancelled.
                let interf = if s.scheme == Scheme::TdmaD { 0.0 } else { interference(user) };
                rate[user] += a * (1.0 + g[user][user].max(0.0) / (interf + cs.sigma2[user])).log2();
                for (i, e) in energy.iter_mut().enumerate() {
                    if i != user {
                        *e += a * harvested(i);
                    }
                }
            }
        }
    }
    Ok(Evaluation::from_parts(cs, rate, energy))
}

/// Max-min energy margin `β` over users with a positive target, or `None`
/// when every target is zero. The instance is energy-feasible iff `β ≥ 1`.
pub fn energy_margin(cs: &ChannelSet) -> Result<Option<EhSolution>, SchemeError> {
    if cs.energy.iter().all(|&e| e == 0.0) {
        return Ok(None);
    }
    Ok(Some(tdms_eh_solve(cs)?))
}

fn margin_feasible(m: &Option<EhSolution>) -> bool {
    m.as_ref().is_none_or(|eh| eh.beta >= 1.0 - FEAS_RTOL)
}

/// Dispatches to the solver of `scheme`.
pub fn solve(cs: &ChannelSet, scheme: Scheme, opts: &SchemeOptions) -> Result<(Strategy, Evaluation), SchemeError> {
    match scheme {
        Scheme::Ideal => solve_ideal(cs, opts),
        Scheme::Tdms => solve_tdms(cs, opts),
        Scheme::Tdma => solve_tdma(cs, opts),
        Scheme::TdmaD => solve_tdma_d(cs, opts),
        Scheme::Ps => solve_ps(cs, opts),
    }
}

fn finish(cs: &ChannelSet, strategy: Strategy) -> Result<(Strategy, Evaluation), SchemeError> {
    let eval = evaluate(cs, &strategy)?;
    Ok((strategy, eval))
}

/// Runs every start and keeps the best final objective. Fails only when all
/// starts fail.
fn best_run(cs: &ChannelSet, kind: Receiver, starts: Vec<ScaPoint>, opts: &SchemeOptions) -> Result<ScaRun, SchemeError> {
    let mut best: Option<ScaRun> = None;
    let mut last_err = None;
    for start in starts {
        match sca::run(cs, kind, start, opts) {
            Ok(r) => {
                if best.as_ref().is_none_or(|b| r.rate > b.rate) {
                    best = Some(r);
                }
            }
            Err(e) => {
                log::warn!("SCA start failed: {e}");
                last_err = Some(e);
            }
        }
    }
    best.ok_or_else(|| last_err.unwrap_or(SchemeError::InstanceInfeasible))
}

/// Every start of [`solve_ideal`], for callers that inspect all runs.
pub fn ideal_runs(cs: &ChannelSet, opts: &SchemeOptions) -> Result<Vec<Result<ScaRun, SchemeError>>, SchemeError> {
    let margin = energy_margin(cs)?;
    if !margin_feasible(&margin) {
        return Err(SchemeError::InstanceInfeasible);
    }
    let center = sca::feasible_center(cs, opts, margin.as_ref().map(|m| m.covariances.as_slice()))?;
    let starts = sca::starting_points(cs, &center, opts)?;
    Ok(starts.into_iter().map(|s| sca::run(cs, Receiver::Ideal, sca::ideal_start(s), opts)).collect())
}

/// Every start of [`solve_ps`].
pub fn ps_runs(cs: &ChannelSet, opts: &SchemeOptions) -> Result<Vec<Result<ScaRun, SchemeError>>, SchemeError> {
    let margin = energy_margin(cs)?;
    if !margin_feasible(&margin) {
        return Err(SchemeError::InstanceInfeasible);
    }
    let center = sca::feasible_center(cs, opts, margin.as_ref().map(|m| m.covariances.as_slice()))?;
    let starts = sca::starting_points(cs, &center, opts)?;
    starts
        .into_iter()
        .map(|s| Ok(sca::run(cs, Receiver::Split, sca::split_start(cs, s)?, opts)))
        .collect()
}

/// Ideal receivers: SCA on the log-exponential reformulation with multistart.
pub fn solve_ideal(cs: &ChannelSet, opts: &SchemeOptions) -> Result<(Strategy, Evaluation), SchemeError> {
    solve_ideal_with_starts(cs, opts, &[])
}

/// As [`solve_ideal`], with extra feasible starting covariances tried after
/// the usual starts. Infeasible extras are skipped.
pub fn solve_ideal_with_starts(
    cs: &ChannelSet,
    opts: &SchemeOptions,
    extra: &[Vec<HermMat>],
) -> Result<(Strategy, Evaluation), SchemeError> {
    let margin = energy_margin(cs)?;
    if !margin_feasible(&margin) {
        return Err(SchemeError::InstanceInfeasible);
    }
    let center = sca::feasible_center(cs, opts, margin.as_ref().map(|m| m.covariances.as_slice()))?;
    let mut starts: Vec<ScaPoint> = sca::starting_points(cs, &center, opts)?.into_iter().map(sca::ideal_start).collect();
    for s in extra {
        let e = crate::channel::energies(cs, s)?;
        let tol = cs.energy_tolerance();
        let powered = s.iter().zip(&cs.power).all(|(m, p)| m.trace() <= p * (1.0 + 1e-9));
        if powered && e.iter().zip(&cs.energy).all(|(got, need)| got - need >= -tol) {
            starts.push(sca::ideal_start(s.clone()));
        }
    }
    let run = best_run(cs, Receiver::Ideal, starts, opts)?;
    let strategy = Strategy {
        scheme: Scheme::Ideal,
        slots: vec![TimeSlot {
            alpha: 1.0,
            mode: SlotMode::Simultaneous,
            covariances: run.point.covariances.iter().map(HermMat::project_psd).collect(),
        }],
        rho: None,
        meta: StrategyMeta {
            objective: run.rate,
            iterations: run.state.iterations,
            newton_steps: run.state.newton_steps,
            fallback: margin.as_ref().is_some_and(|m| m.fallback),
            beta: margin.map(|m| m.beta),
            trace: run.state.trace,
        },
    };
    finish(cs, strategy)
}

/// Power splitting: SCA over covariances and splitting ratios.
pub fn solve_ps(cs: &ChannelSet, opts: &SchemeOptions) -> Result<(Strategy, Evaluation), SchemeError> {
    let margin = energy_margin(cs)?;
    if !margin_feasible(&margin) {
        return Err(SchemeError::InstanceInfeasible);
    }
    let center = sca::feasible_center(cs, opts, margin.as_ref().map(|m| m.covariances.as_slice()))?;
    let starts = sca::starting_points(cs, &center, opts)?
        .into_iter()
        .map(|s| sca::split_start(cs, s))
        .collect::<Result<Vec<_>, _>>()?;
    let beta = margin.as_ref().map(|m| m.beta);
    let run = match best_run(cs, Receiver::Split, starts, opts) {
        Ok(r) => r,
        // With no energy slack every ratio is forced to zero: feasible, rate zero.
        Err(SchemeError::SubsolverFailure { .. }) if beta.is_some_and(|b| b < 1.0 + 1e-6) => {
            log::warn!("PS subproblem failed on a boundary instance; returning the harvest-only strategy");
            let covariances = margin.as_ref().map_or_else(|| zeros(cs), |m| m.covariances.clone());
            return finish(
                cs,
                Strategy {
                    scheme: Scheme::Ps,
                    slots: vec![TimeSlot { alpha: 1.0, mode: SlotMode::Simultaneous, covariances }],
                    rho: Some(vec![0.0; cs.num_users]),
                    meta: StrategyMeta { beta, fallback: true, ..StrategyMeta::default() },
                },
            );
        }
        Err(e) => return Err(e),
    };
    let strategy = Strategy {
        scheme: Scheme::Ps,
        slots: vec![TimeSlot {
            alpha: 1.0,
            mode: SlotMode::Simultaneous,
            covariances: run.point.covariances.iter().map(HermMat::project_psd).collect(),
        }],
        rho: Some(run.point.effective_rho()),
        meta: StrategyMeta {
            objective: run.rate,
            iterations: run.state.iterations,
            newton_steps: run.state.newton_steps,
            fallback: margin.as_ref().is_some_and(|m| m.fallback),
            beta,
            trace: run.state.trace,
        },
    };
    finish(cs, strategy)
}

/// Time-division mode switching: a harvest-only slot of length `1/β`, then
/// an interference-limited decode slot.
pub fn solve_tdms(cs: &ChannelSet, opts: &SchemeOptions) -> Result<(Strategy, Evaluation), SchemeError> {
    solve_tdms_with(cs, opts, None)
}

/// As [`solve_tdms`], reusing a precomputed decode-slot solution (the ideal
/// scheme with every energy target zero) when given.
pub fn solve_tdms_with(
    cs: &ChannelSet,
    opts: &SchemeOptions,
    decode: Option<&Strategy>,
) -> Result<(Strategy, Evaluation), SchemeError> {
    let margin = energy_margin(cs)?;
    if !margin_feasible(&margin) {
        return Err(SchemeError::InstanceInfeasible);
    }
    let (alpha, eh_cov) = match &margin {
        None => (0.0, zeros(cs)),
        Some(m) => ((1.0 / m.beta).min(1.0), m.covariances.clone()),
    };
    let mut meta = StrategyMeta {
        fallback: margin.as_ref().is_some_and(|m| m.fallback),
        beta: margin.as_ref().map(|m| m.beta),
        ..StrategyMeta::default()
    };
    let id_cov = if alpha < 1.0 {
        let owned;
        let id = match decode {
            Some(s) => s,
            None => {
                let free = cs.clone().with_energy(vec![0.0; cs.num_users])?;
                owned = solve_ideal(&free, opts)?.0;
                &owned
            }
        };
        meta.iterations = id.meta.iterations;
        meta.newton_steps = id.meta.newton_steps;
        meta.trace = id.meta.trace.clone();
        id.slots[0].covariances.clone()
    } else {
        zeros(cs)
    };
    let mut strategy = Strategy {
        scheme: Scheme::Tdms,
        slots: vec![
            TimeSlot { alpha, mode: SlotMode::Harvest, covariances: eh_cov },
            TimeSlot { alpha: 1.0 - alpha, mode: SlotMode::Decode, covariances: id_cov },
        ],
        rho: None,
        meta,
    };
    let eval = evaluate(cs, &strategy)?;
    strategy.meta.objective = eval.weighted_sum_rate;
    Ok((strategy, eval))
}

/// Two-user time-division objective at slot-1 fraction `alpha`.
fn tdma_value<F>(cs: &ChannelSet, alpha: f64, slot_rate: &F) -> f64
where
    F: Fn(f64, Slot) -> Result<(f64, Vec<HermMat>), SchemeError>,
{
    let part = |slot: Slot, w: f64| match slot_rate(alpha, slot) {
        Ok((r, _)) => w * r,
        Err(e) => {
            log::warn!("slot {slot:?} at alpha = {alpha:e} failed: {e}");
            f64::NEG_INFINITY
        }
    };
    part(Slot::First, cs.weight[0]) + part(Slot::Second, cs.weight[1])
}

/// Maximizes a function of the slot-1 fraction over `[lo, hi]`: uniform grid,
/// then golden-section search in the bracket around the best grid point.
fn alpha_search<F>(lo: f64, hi: f64, grid: usize, tol: f64, f: F) -> (f64, f64, usize)
where
    F: Fn(f64) -> f64,
{
    if hi - lo <= tol.min(1e-12) {
        let a = 0.5 * (lo + hi);
        return (a, f(a), 1);
    }
    let m = grid.max(2);
    let pts: Vec<f64> = (0..m).map(|j| if j + 1 == m { hi } else { lo + (hi - lo) * j as f64 / (m - 1) as f64 }).collect();
    let vals: Vec<f64> = pts.iter().map(|&a| f(a)).collect();
    let mut evals = m;
    let j = (0..m).fold(0, |b, j| if vals[j] > vals[b] { j } else { b });
    let (mut best_a, mut best_v) = (pts[j], vals[j]);
    let (mut a, mut b) = (pts[j.saturating_sub(1)], pts[(j + 1).min(m - 1)]);
    let inv_phi = 0.5 * (5.0_f64.sqrt() - 1.0);
    let mut x1 = b - inv_phi * (b - a);
    let mut x2 = a + inv_phi * (b - a);
    let (mut f1, mut f2) = (f(x1), f(x2));
    evals += 2;
    while b - a > tol {
        if f1 < f2 {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + inv_phi * (b - a);
            f2 = f(x2);
        } else {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - inv_phi * (b - a);
            f1 = f(x1);
        }
        evals += 1;
    }
    for (x, v) in [(x1, f1), (x2, f2)] {
        if v > best_v {
            best_a = x;
            best_v = v;
        }
    }
    (best_a, best_v, evals)
}

fn tdma_strategy(scheme: Scheme, alpha: f64, slot1: Vec<HermMat>, slot2: Vec<HermMat>) -> Strategy {
    Strategy {
        scheme,
        slots: vec![
            TimeSlot { alpha, mode: SlotMode::Decoder { user: 0 }, covariances: slot1 },
            TimeSlot { alpha: 1.0 - alpha, mode: SlotMode::Decoder { user: 1 }, covariances: slot2 },
        ],
        rho: None,
        meta: StrategyMeta::default(),
    }
}

/// Two-user TDMA with Gaussian signalling in both slots.
pub fn solve_tdma(cs: &ChannelSet, opts: &SchemeOptions) -> Result<(Strategy, Evaluation), SchemeError> {
    if cs.num_users != 2 {
        return Err(SchemeError::UnsupportedConfiguration(format!(
            "TDMA with Gaussian energy signals is only defined for K = 2 (got K = {})",
            cs.num_users
        )));
    }
    if !tdma_feasible(cs)? {
        return Err(SchemeError::InstanceInfeasible);
    }
    let (lo, hi) = feasible_alpha_interval(cs)?;
    let slot_rate = |alpha: f64, slot: Slot| -> Result<(f64, Vec<HermMat>), SchemeError> {
        let s = tdma_slot_solve(cs, alpha, slot)?;
        Ok((s.rate, s.covariances))
    };
    let (alpha, _, evals) =
        alpha_search(lo, hi, opts.alpha_grid, opts.alpha_tol, |a| tdma_value(cs, a, &slot_rate));
    let s1 = tdma_slot_solve(cs, alpha, Slot::First)?;
    let s2 = tdma_slot_solve(cs, alpha, Slot::Second)?;
    let mut strategy = tdma_strategy(Scheme::Tdma, alpha, s1.covariances, s2.covariances);
    strategy.meta.iterations = evals;
    strategy.meta.fallback = s1.fallback || s2.fallback;
    let eval = evaluate(cs, &strategy)?;
    strategy.meta.objective = eval.weighted_sum_rate;
    Ok((strategy, eval))
}

/// One TDMA(D) slot in closed form: the harvesting transmitter beams at its
/// own receiver, the decoding transmitter maximizes its gain under the
/// remaining energy floor. `fraction` is the slot length.
pub fn tdma_d_slot(cs: &ChannelSet, fraction: f64, decoder: usize) -> Result<(f64, Vec<HermMat>), SchemeError> {
    cs.require_two()?;
    if fraction <= 0.0 {
        return Ok((0.0, zeros(cs)));
    }
    let (d, e) = (decoder, 1 - decoder);
    let h_ee = &cs.h[e][e];
    let mut s = zeros(cs);
    let e_beam: CVec = h_ee.unit().map_or_else(|| CVec::zeros(cs.num_antennas), |u| u.scale_real(cs.power[e].sqrt()));
    s[e] = HermMat::outer(&e_beam);
    let (h_dd, h_de) = (&cs.h[d][d], &cs.h[d][e]);
    let reach = cs.power[d] * h_de.norm_sqr();
    let mut c = cs.energy[e] / (cs.gamma * fraction) - cs.power[e] * h_ee.norm_sqr();
    if c > reach && c <= reach * (1.0 + 1e-12) {
        c = reach;
    }
    let v = match max_quad_energy_floor(h_dd, h_de, cs.power[d], c.max(0.0))? {
        FloorOutcome::Solved(q) => q.v,
        FloorOutcome::Infeasible => return Err(SchemeError::InstanceInfeasible),
    };
    s[d] = HermMat::outer(&v);
    let gain = h_dd.dot(&v).norm_sqr();
    Ok((fraction * (1.0 + gain / cs.sigma2[d]).log2(), s))
}

/// Handles of the joint time-fraction/covariance program of TDMA(D).
#[derive(Debug, Clone)]
pub struct TdmaDVars {
    /// `w[k][l]`: transmitter `k` in slot `l`, scaled by the slot length.
    pub w: Vec<Vec<MatVar>>,
    pub alpha: Vec<ScalarVar>,
    /// Perspective epigraph of each decoding user's rate (nats).
    pub t: Vec<Option<ScalarVar>>,
}

/// K-user TDMA(D) as one convex program in `W_kl = α_l·S_kl` and `α`.
pub fn tdma_d_program(cs: &ChannelSet) -> (ConvexProgram, TdmaDVars) {
    let k = cs.num_users;
    let n = cs.num_antennas;
    let mut p = ConvexProgram::new();
    let w: Vec<Vec<MatVar>> =
        (0..k).map(|tx| (0..k).map(|l| p.add_matrix(format!("W{}_{}", tx + 1, l + 1), n)).collect()).collect();
    let alpha: Vec<ScalarVar> = (0..k).map(|l| p.add_scalar(format!("alpha{}", l + 1), Some(0.0))).collect();
    let mut t = vec![None; k];
    let mut objective = Affine::zero();
    for l in 0..k {
        if cs.weight[l] > 0.0 {
            let tl = p.add_scalar(format!("t{}", l + 1), None);
            // α e^{t/α} ≤ α + h_llᴴ W_ll h_ll / σ²
            p.exp_cone(
                Affine::var(tl),
                Affine::var(alpha[l]),
                Affine::var(alpha[l]).matrix(w[l][l], HermMat::outer(&cs.h[l][l]).scale(1.0 / cs.sigma2[l])),
            );
            objective = objective.scalar(tl, cs.weight[l] * std::f64::consts::LOG2_E);
            t[l] = Some(tl);
        }
    }
    p.maximize(objective);
    p.le(alpha.iter().fold(Affine::zero(), |a, &x| a.scalar(x, 1.0)), 1.0);
    for i in 0..k {
        if cs.energy[i] > 0.0 {
            let mut a = Affine::zero();
            for l in (0..k).filter(|&l| l != i) {
                for tx in 0..k {
                    a = a.matrix(w[tx][l], HermMat::outer(&cs.h[tx][i]));
                }
            }
            p.ge(a, cs.energy[i] / cs.gamma);
        }
    }
    for tx in 0..k {
        for l in 0..k {
            p.le(Affine::zero().trace(w[tx][l], n).scalar(alpha[l], -cs.power[tx]), 0.0);
        }
    }
    (p, TdmaDVars { w, alpha, t })
}

/// Solves [`tdma_d_program`] and recovers per-slot covariances.
pub fn tdma_d_generic(cs: &ChannelSet, opts: &SchemeOptions) -> Result<(Strategy, Evaluation), SchemeError> {
    let (p, vars) = tdma_d_program(cs);
    let r = solve_convex_with(&p, &opts.solver)?;
    match r.status {
        SolveStatus::Optimal => {}
        SolveStatus::Infeasible => return Err(SchemeError::InstanceInfeasible),
        status => return Err(SchemeError::SubsolverFailure { status, trace: Vec::new() }),
    }
    let k = cs.num_users;
    let mut slots = Vec::new();
    for l in 0..k {
        let a = r.values.scalar(vars.alpha[l]);
        if a > MIN_SLOT {
            let covariances = (0..k).map(|tx| r.values.matrix(vars.w[tx][l]).project_psd().scale(1.0 / a)).collect();
            slots.push(TimeSlot { alpha: a.min(1.0), mode: SlotMode::Decoder { user: l }, covariances });
        }
    }
    let mut strategy = Strategy {
        scheme: Scheme::TdmaD,
        slots,
        rho: None,
        meta: StrategyMeta { newton_steps: r.iterations, fallback: true, ..StrategyMeta::default() },
    };
    let eval = evaluate(cs, &strategy)?;
    strategy.meta.objective = eval.weighted_sum_rate;
    Ok((strategy, eval))
}

/// TDMA with deterministic energy signals. Two users use the closed-form
/// slots with a golden-section search over the (concave) time split; more
/// users, or degenerate two-user channels, use the joint convex program.
pub fn solve_tdma_d(cs: &ChannelSet, opts: &SchemeOptions) -> Result<(Strategy, Evaluation), SchemeError> {
    if cs.num_users != 2 {
        return tdma_d_generic(cs, opts);
    }
    if !tdma_feasible(cs)? {
        return Err(SchemeError::InstanceInfeasible);
    }
    match tdma_d_closed_form(cs) {
        Err(SchemeError::ClosedForm(e)) => {
            log::warn!("TDMA(D) closed form unavailable ({e}); using the joint program");
            tdma_d_generic(cs, opts)
        }
        other => other,
    }
}

fn tdma_d_closed_form(cs: &ChannelSet) -> Result<(Strategy, Evaluation), SchemeError> {
    let (lo, hi) = feasible_alpha_interval(cs)?;
    let slot_rate = |alpha: f64, slot: Slot| match slot {
        Slot::First => tdma_d_slot(cs, alpha, 0),
        Slot::Second => tdma_d_slot(cs, 1.0 - alpha, 1),
    };
    // The optimal value is concave in α, so a coarse grid plus a tight
    // golden-section search is exact up to the bracket width.
    let (alpha, _, evals) = alpha_search(lo, hi, 16, 1e-12, |a| tdma_value(cs, a, &slot_rate));
    let (_, s1) = tdma_d_slot(cs, alpha, 0)?;
    let (_, s2) = tdma_d_slot(cs, 1.0 - alpha, 1)?;
    let mut strategy = tdma_strategy(Scheme::TdmaD, alpha, s1, s2);
    strategy.meta.iterations = evals;
    let eval = evaluate(cs, &strategy)?;
    strategy.meta.objective = eval.weighted_sum_rate;
    Ok((strategy, eval))
}
