//! Successive convex approximation for the ideal and power-splitting receivers.
//!
//! Each rate is written as `x_i − y_i` with `e^{x_i}` below the total received
//! power and `e^{y_i}` above the interference-plus-noise power. The second
//! constraint is replaced by its tangent at `ȳ_i`, which is conservative, so
//! every subproblem solution is feasible for the original problem and the true
//! objective never decreases.

use std::f64::consts::LOG2_E;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{SchemeError, SchemeOptions};
use crate::channel::{received_powers, ChannelSet};
use crate::linalg::{CVec, HermMat, C64};
use crate::subsolver::{
    solve_convex_from, solve_convex_with, Affine, ConvexProgram, MatVar, ScalarVar, Solution, SolveStatus,
};

/// Receiver architecture the iteration optimizes for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Receiver {
    /// Decodes and harvests the same signal.
    Ideal,
    /// Splits the received power between decoding and harvesting.
    Split,
}

/// Iterate of the SCA loop: covariances plus, for split receivers, the
/// splitting variables.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaPoint {
    pub covariances: Vec<HermMat>,
    /// Raw splitting variable `ρ_i` as returned by the subproblem.
    pub rho: Vec<f64>,
    /// `θ_i ≥ 1/ρ_i`; `None` for users whose rate does not depend on it.
    pub theta: Vec<Option<f64>>,
}

impl ScaPoint {
    fn ideal(covariances: Vec<HermMat>) -> Self {
        let k = covariances.len();
        ScaPoint { covariances, rho: vec![1.0; k], theta: vec![None; k] }
    }

    /// Effective splitting ratios: `1/θ_i` where `θ_i` is present.
    pub fn effective_rho(&self) -> Vec<f64> {
        self.rho
            .iter()
            .zip(&self.theta)
            .map(|(&r, t)| match t {
                Some(t) => (1.0 / t).min(1.0),
                None => r.clamp(0.0, 1.0),
            })
            .collect()
    }
}

/// Objective trace and linearization points of one SCA run.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ScaState {
    /// Accepted iterations after the starting point.
    pub iterations: usize,
    /// `ybar[n][i]` is the expansion point used to compute iterate `n + 1`.
    pub ybar: Vec<Vec<f64>>,
    /// Weighted sum rate of the starting point followed by every accepted iterate.
    pub trace: Vec<f64>,
    /// Newton steps spent in all subproblems.
    pub newton_steps: usize,
}

#[derive(Debug, Clone)]
pub struct ScaRun {
    pub point: ScaPoint,
    pub rate: f64,
    pub state: ScaState,
    /// Iterates matching `state.trace`, starting point first.
    pub points: Vec<ScaPoint>,
}

/// Interference-plus-noise power seen by the decoder of each receiver.
fn decoder_noise(cs: &ChannelSet, kind: Receiver, g: &[Vec<f64>], pt: &ScaPoint) -> Vec<f64> {
    (0..cs.num_users)
        .map(|i| {
            let interf: f64 = (0..cs.num_users).filter(|&k| k != i).map(|k| g[k][i].max(0.0)).sum();
            match kind {
                Receiver::Ideal => interf + cs.sigma2[i],
                Receiver::Split => interf + noise_split(cs, i, pt),
            }
        })
        .collect()
}

/// `θ_iσ̂_i² + σ̃_i²`, or its value at `ρ_i` when `θ_i` is absent.
fn noise_split(cs: &ChannelSet, i: usize, pt: &ScaPoint) -> f64 {
    let theta = match pt.theta[i] {
        Some(t) => t,
        None if cs.hat_sigma2[i] == 0.0 => 0.0,
        None if pt.rho[i] > 0.0 => 1.0 / pt.rho[i],
        None => f64::INFINITY,
    };
    theta * cs.hat_sigma2[i] + cs.tilde_sigma2[i]
}

/// True weighted sum rate of an iterate.
pub fn weighted_rate(cs: &ChannelSet, kind: Receiver, pt: &ScaPoint) -> Result<f64, SchemeError> {
    let g = received_powers(cs, &pt.covariances)?;
    let noise = decoder_noise(cs, kind, &g, pt);
    Ok((0..cs.num_users)
        .filter(|&i| cs.weight[i] > 0.0)
        .map(|i| {
            let r = if noise[i].is_finite() { (1.0 + g[i][i].max(0.0) / noise[i]).log2() } else { 0.0 };
            cs.weight[i] * r
        })
        .sum())
}

/// Expansion points `ȳ_i = ln(interference + noise)` at `pt`.
pub fn expansion_points(cs: &ChannelSet, kind: Receiver, pt: &ScaPoint) -> Result<Vec<f64>, SchemeError> {
    let g = received_powers(cs, &pt.covariances)?;
    Ok(decoder_noise(cs, kind, &g, pt).into_iter().map(f64::ln).collect())
}

/// Variable handles of one SCA subproblem.
#[derive(Debug, Clone)]
pub struct ScaVars {
    pub s: Vec<MatVar>,
    pub x: Vec<Option<ScalarVar>>,
    pub y: Vec<Option<ScalarVar>>,
    pub rho: Vec<Option<ScalarVar>>,
    pub theta: Vec<Option<ScalarVar>>,
}

fn link_power(cs: &ChannelSet, s: &[MatVar], i: usize, skip: Option<usize>) -> Affine {
    let mut a = Affine::zero();
    for (k, &sk) in s.iter().enumerate() {
        if Some(k) != skip {
            a = a.matrix(sk, HermMat::outer(&cs.h[k][i]));
        }
    }
    a
}

/// The convex subproblem at expansion points `ybar`.
pub fn subproblem(cs: &ChannelSet, kind: Receiver, ybar: &[f64]) -> (ConvexProgram, ScaVars) {
    let k = cs.num_users;
    let n = cs.num_antennas;
    let mut p = ConvexProgram::new();
    let s: Vec<MatVar> = (0..k).map(|j| p.add_matrix(format!("S{}", j + 1), n)).collect();
    let mut vars = ScaVars { s: s.clone(), x: vec![None; k], y: vec![None; k], rho: vec![None; k], theta: vec![None; k] };
    let mut objective = Affine::zero();

    for i in 0..k {
        let decodes = cs.weight[i] > 0.0;
        if kind == Receiver::Split {
            let rho = p.add_scalar(format!("rho{}", i + 1), Some(0.0));
            p.le(Affine::var(rho), 1.0);
            vars.rho[i] = Some(rho);
            if decodes && cs.hat_sigma2[i] > 0.0 {
                let theta = p.add_scalar(format!("theta{}", i + 1), Some(0.0));
                p.hyperbolic(Affine::var(theta), Affine::var(rho), Affine::constant(1.0));
                vars.theta[i] = Some(theta);
            }
        }
        if decodes {
            vars.x[i] = Some(p.add_scalar(format!("x{}", i + 1), None));
            vars.y[i] = Some(p.add_scalar(format!("y{}", i + 1), None));
        }
    }

    for i in 0..k {
        if let (Some(x), Some(y)) = (vars.x[i], vars.y[i]) {
            let (noise_const, noise_theta) = match kind {
                Receiver::Ideal => (cs.sigma2[i], None),
                Receiver::Split => (cs.tilde_sigma2[i], vars.theta[i].map(|t| (t, cs.hat_sigma2[i]))),
            };
            // e^x ≤ total + noise
            let mut total = link_power(cs, &s, i, None).scaled(-1.0);
            if let Some((t, c)) = noise_theta {
                total = total.scalar(t, -c);
            }
            p.le_with_exp(total, x, 1.0, noise_const);
            // interference + noise ≤ e^ȳ (y − ȳ + 1)
            let eb = ybar[i].exp();
            let mut interf = link_power(cs, &s, i, Some(i)).scalar(y, -eb);
            if let Some((t, c)) = noise_theta {
                interf = interf.scalar(t, c);
            }
            p.le(interf, eb * (1.0 - ybar[i]) - noise_const);
            objective = objective.scalar(x, cs.weight[i] * LOG2_E).scalar(y, -cs.weight[i] * LOG2_E);
        }
        if cs.energy[i] > 0.0 {
            let target = cs.energy[i] / cs.gamma;
            match (kind, vars.rho[i]) {
                (Receiver::Split, Some(rho)) => p.hyperbolic(
                    Affine::constant(1.0).scalar(rho, -1.0),
                    link_power(cs, &s, i, None),
                    Affine::constant(target.sqrt()),
                ),
                _ => p.ge(link_power(cs, &s, i, None), target),
            }
        }
    }
    for (j, &sj) in s.iter().enumerate() {
        p.le(Affine::zero().trace(sj, n), cs.power[j]);
    }
    p.maximize(objective);
    (p, vars)
}

/// Strictly interior point of the subproblem built from the previous iterate.
fn hint(cs: &ChannelSet, kind: Receiver, p: &ConvexProgram, vars: &ScaVars, pt: &ScaPoint, ybar: &[f64]) -> Option<Solution> {
    let g = received_powers(cs, &pt.covariances).ok()?;
    let mut scalars = vec![0.0; p.scalar_vars.len()];
    for i in 0..cs.num_users {
        if let Some(r) = vars.rho[i] {
            scalars[r.0] = pt.rho[i];
        }
        if let Some(t) = vars.theta[i] {
            scalars[t.0] = pt.theta[i]?;
        }
        if let (Some(x), Some(y)) = (vars.x[i], vars.y[i]) {
            let total: f64 = (0..cs.num_users).map(|k| g[k][i]).sum();
            let noise = match kind {
                Receiver::Ideal => cs.sigma2[i],
                Receiver::Split => noise_split(cs, i, pt),
            };
            scalars[x.0] = (total + noise).ln() - 1e-3;
            scalars[y.0] = ybar[i] + 1e-3;
        }
    }
    Some(Solution { matrices: pt.covariances.clone(), scalars })
}

fn extract(vars: &ScaVars, sol: &Solution) -> ScaPoint {
    ScaPoint {
        covariances: vars.s.iter().map(|&m| sol.matrix(m).clone()).collect(),
        rho: vars.rho.iter().map(|r| r.map_or(1.0, |v| sol.scalar(v))).collect(),
        theta: vars.theta.iter().map(|t| t.map(|v| sol.scalar(v))).collect(),
    }
}

/// Runs the iteration from `start` until the relative improvement drops to
/// `opts.rel_tol`, an iterate fails to improve, or `opts.max_iters` is hit.
pub fn run(cs: &ChannelSet, kind: Receiver, start: ScaPoint, opts: &SchemeOptions) -> Result<ScaRun, SchemeError> {
    let mut point = start;
    let mut rate = weighted_rate(cs, kind, &point)?;
    let mut state = ScaState { trace: vec![rate], ..ScaState::default() };
    let mut points = vec![point.clone()];
    for _ in 0..opts.max_iters {
        let ybar = expansion_points(cs, kind, &point)?;
        let (p, vars) = subproblem(cs, kind, &ybar);
        let warm = hint(cs, kind, &p, &vars, &point, &ybar);
        let report = solve_convex_from(&p, &opts.solver, warm.as_ref())?;
        state.newton_steps += report.iterations;
        if !report.is_optimal() {
            return Err(SchemeError::SubsolverFailure { status: report.status, trace: state.trace });
        }
        let next = extract(&vars, &report.values);
        let next_rate = weighted_rate(cs, kind, &next)?;
        state.ybar.push(ybar);
        if next_rate < rate {
            // Solver round-off on a converged iterate; keep the incumbent.
            break;
        }
        let gain = next_rate - rate;
        point = next;
        rate = next_rate;
        state.iterations += 1;
        state.trace.push(rate);
        points.push(point.clone());
        if gain <= opts.rel_tol * rate.abs() {
            break;
        }
    }
    Ok(ScaRun { point, rate, state, points })
}

/// Step-1 program of the algorithm: energy floors and power caps only.
pub fn feasibility_program(cs: &ChannelSet) -> (ConvexProgram, Vec<MatVar>) {
    let n = cs.num_antennas;
    let mut p = ConvexProgram::new();
    let s: Vec<MatVar> = (0..cs.num_users).map(|j| p.add_matrix(format!("S{}", j + 1), n)).collect();
    for i in 0..cs.num_users {
        if cs.energy[i] > 0.0 {
            p.ge(link_power(cs, &s, i, None), cs.energy[i] / cs.gamma);
        }
    }
    for (j, &sj) in s.iter().enumerate() {
        p.le(Affine::zero().trace(sj, n), cs.power[j]);
    }
    (p, s)
}

/// Analytic center of the feasibility program, or `fallback` when its
/// feasible set has no interior.
pub fn feasible_center(
    cs: &ChannelSet,
    opts: &SchemeOptions,
    fallback: Option<&[HermMat]>,
) -> Result<Vec<HermMat>, SchemeError> {
    let (p, s) = feasibility_program(cs);
    let r = solve_convex_with(&p, &opts.solver)?;
    match (r.status, fallback) {
        (SolveStatus::Optimal, _) if r.max_violation <= cs.energy_tolerance() => {
            Ok(s.iter().map(|&m| r.values.matrix(m).clone()).collect())
        }
        (_, Some(f)) => Ok(f.to_vec()),
        (SolveStatus::Infeasible, None) => Err(SchemeError::InstanceInfeasible),
        (status, None) => Err(SchemeError::SubsolverFailure { status, trace: Vec::new() }),
    }
}

fn random_unit(rng: &mut ChaCha20Rng, n: usize) -> CVec {
    loop {
        let v = CVec::new(
            (0..n).map(|_| C64::new(rng.sample::<f64, _>(StandardNormal), rng.sample::<f64, _>(StandardNormal))).collect(),
        )
        .expect("finite samples");
        if let Some(u) = v.unit() {
            return u;
        }
    }
}

/// Largest mixing weight `λ ≤ 1` keeping `(1−λ)·center + λ·dir` above every floor.
fn mixing_weight(cs: &ChannelSet, center: &[HermMat], dir: &[HermMat]) -> Result<f64, SchemeError> {
    let gc = received_powers(cs, center)?;
    let gd = received_powers(cs, dir)?;
    let mut lam = 1.0_f64;
    for i in 0..cs.num_users {
        let need = cs.energy[i] / cs.gamma;
        let ec: f64 = (0..cs.num_users).map(|k| gc[k][i]).sum();
        let ed: f64 = (0..cs.num_users).map(|k| gd[k][i]).sum();
        if ed < need && ec > ed {
            lam = lam.min(((ec - need) / (ec - ed)).max(0.0));
        }
    }
    Ok(lam)
}

/// Starting covariances: the feasibility center, then mixtures of the center
/// with matched-filter and random full-power beams.
pub fn starting_points(cs: &ChannelSet, center: &[HermMat], opts: &SchemeOptions) -> Result<Vec<Vec<HermMat>>, SchemeError> {
    let mut rng = ChaCha20Rng::seed_from_u64(opts.seed);
    let n = cs.num_antennas;
    let mut out = vec![center.to_vec()];
    for j in 1..opts.multistarts.max(1) {
        let dir: Vec<HermMat> = (0..cs.num_users)
            .map(|k| {
                let v = if j == 1 {
                    cs.h[k][k].unit().unwrap_or_else(|| random_unit(&mut rng, n))
                } else {
                    random_unit(&mut rng, n)
                };
                HermMat::outer(&v).scale(cs.power[k])
            })
            .collect();
        // Stay strictly inside so the first subproblem can start from it.
        let lam = 0.95 * mixing_weight(cs, center, &dir)?;
        out.push(center.iter().zip(&dir).map(|(c, d)| c.scale(1.0 - lam).add(&d.scale(lam))).collect());
    }
    Ok(out)
}

/// Starting point for split receivers: keep half of the harvesting slack.
pub fn split_start(cs: &ChannelSet, covariances: Vec<HermMat>) -> Result<ScaPoint, SchemeError> {
    let g = received_powers(cs, &covariances)?;
    let mut pt = ScaPoint::ideal(covariances);
    for i in 0..cs.num_users {
        let total: f64 = (0..cs.num_users).map(|k| g[k][i]).sum::<f64>() * cs.gamma;
        let room = if cs.energy[i] > 0.0 { (1.0 - cs.energy[i] / total).max(0.0) } else { 1.0 };
        pt.rho[i] = (0.5 * room).max(1e-6);
        if cs.weight[i] > 0.0 && cs.hat_sigma2[i] > 0.0 {
            pt.theta[i] = Some(1.01 / pt.rho[i]);
        }
    }
    Ok(pt)
}

pub fn ideal_start(covariances: Vec<HermMat>) -> ScaPoint {
    ScaPoint::ideal(covariances)
}
