//! Semi-analytical solvers for the two-user problems.
//!
//! Rank-one quadratic maximizers under a leakage cap or an energy floor, the
//! dual bisection for the max-min energy program, and the Charnes–Cooper
//! line search for one TDMA slot. Each solver has a generic-program
//! counterpart used as a fallback on degenerate channels.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{feasible_alpha_interval, ChannelError, ChannelSet};
use crate::linalg::{herm_eig, is_parallel, proj_orth_unit, CVec, HermMat, LinalgError, C64};
use crate::subsolver::{solve_convex, Affine, ConvexProgram, MatVar, ProgramError, ScalarVar, SolveStatus};

const BISECTION_CAP: usize = 200;
/// Bisection stops once the bracket is this fraction of `[0, 1/E1]`.
const MU_TOL: f64 = 1e-10;
const GRADIENT_TOL: f64 = 1e-8;
const EIGEN_GAP_RTOL: f64 = 1e-9;
/// `1/φ` for golden-section search.
const INV_PHI: f64 = 0.618_033_988_749_894_8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ClosedFormError {
    #[error("channel directions are parallel")]
    DegenerateParallel,
    #[error("invalid argument `{0}`")]
    InvalidArgument(&'static str),
    #[error("closed-form assumption violated: {0}")]
    AssumptionViolated(String),
    #[error("energy target of user {0} must be positive")]
    NonPositiveEnergy(usize),
    #[error("energy floor cannot be met for any admissible normalization")]
    SlotInfeasible,
    #[error("time fraction {0} lies outside the feasible interval")]
    AlphaOutOfRange(f64),
    #[error("generic solver returned {0:?}")]
    Solver(SolveStatus),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Program(#[from] ProgramError),
}

/// Which constraint pattern a rank-one maximizer hit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum QuadCase {
    /// `v = √p·h̄a`; only the power constraint binds.
    Aligned,
    /// Power and the leakage cap or energy floor both bind.
    Boundary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuadMax {
    pub v: CVec,
    pub value: f64,
    pub case: QuadCase,
}

#[derive(Debug, Clone, PartialEq)]
pub enum FloorOutcome {
    Solved(QuadMax),
    Infeasible,
}

fn check_pc(ha: &CVec, hb: &CVec, p: f64, c: f64) -> Result<(), ClosedFormError> {
    if ha.len() != hb.len() {
        return Err(LinalgError::DimensionMismatch { expected: ha.len(), found: hb.len() }.into());
    }
    if !(p > 0.0 && p.is_finite()) {
        return Err(ClosedFormError::InvalidArgument("p"));
    }
    if !(c >= 0.0 && c.is_finite()) {
        return Err(ClosedFormError::InvalidArgument("c"));
    }
    if ha.norm_sqr() == 0.0 {
        return Err(ClosedFormError::InvalidArgument("ha"));
    }
    Ok(())
}

/// `β1·h̄b + β2·ĥ⊥` with `|β1|² = c/‖hb‖²`, full power, phases aligned to `ha`.
fn boundary_mixture(ha: &CVec, hb: &CVec, p: f64, c: f64, perp: &CVec) -> QuadMax {
    let nb2 = hb.norm_sqr();
    let hb_bar = hb.scale_real(1.0 / nb2.sqrt());
    let inner = hb_bar.dot(ha);
    let phase = if inner.norm() > 0.0 { inner / inner.norm() } else { C64::new(1.0, 0.0) };
    let b1 = (c / nb2).min(p).sqrt();
    let b2 = (p - c / nb2).max(0.0).sqrt();
    let v = hb_bar.scale(phase * b1).add(&perp.scale_real(b2)).phase_normalized();
    let value = ha.dot(&v).norm_sqr();
    QuadMax { v, value, case: QuadCase::Boundary }
}

fn aligned(ha: &CVec, p: f64) -> QuadMax {
    let v = ha.unit().expect("nonzero channel").scale_real(p.sqrt()).phase_normalized();
    QuadMax { value: p * ha.norm_sqr(), v, case: QuadCase::Aligned }
}

/// Maximizes `|haᴴv|²` subject to `|hbᴴv|² ≤ c` and `‖v‖² ≤ p`.
pub fn max_quad_leakage_cap(ha: &CVec, hb: &CVec, p: f64, c: f64) -> Result<QuadMax, ClosedFormError> {
    check_pc(ha, hb, p, c)?;
    if hb.norm_sqr() == 0.0 {
        return Ok(aligned(ha, p));
    }
    if is_parallel(ha, hb) {
        return Err(ClosedFormError::DegenerateParallel);
    }
    let ha_bar = ha.unit().expect("nonzero channel");
    if p * hb.dot(&ha_bar).norm_sqr() <= c {
        return Ok(aligned(ha, p));
    }
    let perp = proj_orth_unit(&ha_bar, hb).map_err(|_| ClosedFormError::DegenerateParallel)?;
    Ok(boundary_mixture(ha, hb, p, c, &perp))
}

/// Maximizes `|haᴴv|²` subject to `|hbᴴv|² ≥ c` and `‖v‖² ≤ p`.
pub fn max_quad_energy_floor(ha: &CVec, hb: &CVec, p: f64, c: f64) -> Result<FloorOutcome, ClosedFormError> {
    check_pc(ha, hb, p, c)?;
    let nb2 = hb.norm_sqr();
    if c > p * nb2 {
        return Ok(FloorOutcome::Infeasible);
    }
    let ha_bar = ha.unit().expect("nonzero channel");
    if c <= p * ha_bar.dot(hb).norm_sqr() {
        return Ok(FloorOutcome::Solved(aligned(ha, p)));
    }
    // Here c > 0, so hb ≠ 0; a parallel pair would already be aligned.
    let perp = match proj_orth_unit(&ha_bar, hb) {
        Ok(u) => u,
        Err(_) => return Ok(FloorOutcome::Solved(aligned(ha, p))),
    };
    Ok(FloorOutcome::Solved(boundary_mixture(ha, hb, p, c, &perp)))
}

fn positive_energies(cs: &ChannelSet) -> Result<(f64, f64), ClosedFormError> {
    cs.require_two()?;
    for (i, &e) in cs.energy.iter().enumerate() {
        if !(e > 0.0) {
            return Err(ClosedFormError::NonPositiveEnergy(i));
        }
    }
    Ok((cs.energy[0] / cs.gamma, cs.energy[1] / cs.gamma))
}

/// Dual iterate of the max-min energy bisection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TdmsDualState {
    pub mu: f64,
    pub eta_dual: f64,
    pub psi: Vec<HermMat>,
    pub v: Vec<CVec>,
    pub beta: f64,
    pub gradient: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TdmsDual {
    pub beta: f64,
    pub covariances: Vec<HermMat>,
    pub mu_star: f64,
    pub state: TdmsDualState,
}

fn tdms_state(cs: &ChannelSet, mu: f64, e1: f64, e2: f64) -> Result<TdmsDualState, ClosedFormError> {
    let eta = ((1.0 - mu * e1) / e2).max(0.0);
    let mut psi = Vec::with_capacity(2);
    let mut v = Vec::with_capacity(2);
    let mut got = [0.0; 2];
    for k in 0..2 {
        let m = HermMat::outer(&cs.h[k][0]).scale(mu).add(&HermMat::outer(&cs.h[k][1]).scale(eta));
        let eig = herm_eig(&m)?;
        if eig.top_gap() <= EIGEN_GAP_RTOL * eig.values[0].abs() {
            return Err(ClosedFormError::AssumptionViolated(format!(
                "principal eigenvalue of transmitter {} is not simple at mu = {mu:e}",
                k + 1
            )));
        }
        let vk = eig.principal().phase_normalized();
        for (i, g) in got.iter_mut().enumerate() {
            *g += cs.power[k] * cs.h[k][i].dot(&vk).norm_sqr();
        }
        psi.push(m);
        v.push(vk);
    }
    Ok(TdmsDualState {
        mu,
        eta_dual: eta,
        psi,
        v,
        beta: (got[0] / e1).min(got[1] / e2),
        gradient: got[0] - (e1 / e2) * got[1],
    })
}

/// Rank-one optimum of the two-user max-min energy program via dual bisection.
pub fn tdms_eh_minimize(cs: &ChannelSet) -> Result<TdmsDual, ClosedFormError> {
    let (e1, e2) = positive_energies(cs)?;
    for k in 0..2 {
        let (a, b) = (&cs.h[k][0], &cs.h[k][1]);
        if is_parallel(a, b) {
            return Err(ClosedFormError::AssumptionViolated(format!("channels of transmitter {} are parallel", k + 1)));
        }
        if a.dot(b).norm() <= 1e-12 * a.norm() * b.norm() {
            return Err(ClosedFormError::AssumptionViolated(format!(
                "channels of transmitter {} are orthogonal",
                k + 1
            )));
        }
    }
    let (mut lo, mut hi) = (0.0, 1.0 / e1);
    let at_lo = tdms_state(cs, lo, e1, e2)?;
    let state = if at_lo.gradient >= 0.0 {
        at_lo
    } else {
        let at_hi = tdms_state(cs, hi, e1, e2)?;
        if at_hi.gradient <= 0.0 {
            at_hi
        } else {
            let mut mid_state = at_hi;
            for _ in 0..BISECTION_CAP {
                let mid = 0.5 * (lo + hi);
                mid_state = tdms_state(cs, mid, e1, e2)?;
                if mid_state.gradient.abs() <= GRADIENT_TOL || (hi - lo) * e1 <= MU_TOL {
                    break;
                }
                if mid_state.gradient > 0.0 {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            mid_state
        }
    };
    let covariances = (0..2).map(|k| HermMat::outer(&state.v[k]).scale(cs.power[k])).collect();
    Ok(TdmsDual { beta: state.beta, covariances, mu_star: state.mu, state })
}

/// Generic max-min energy program over all users with a positive target:
/// maximize `β` subject to `Σ_k h_kiᴴS_kh_ki ≥ β·E_i/γ` and `tr S_k ≤ P_k`.
pub fn max_min_energy_program(cs: &ChannelSet) -> (ConvexProgram, Vec<MatVar>, ScalarVar) {
    let mut p = ConvexProgram::new();
    let n = cs.num_antennas;
    let s: Vec<MatVar> = (0..cs.num_users).map(|k| p.add_matrix(format!("S{}", k + 1), n)).collect();
    let beta = p.add_scalar("beta", None);
    p.maximize(Affine::var(beta));
    for i in 0..cs.num_users {
        if cs.energy[i] > 0.0 {
            let mut a = Affine::zero().scalar(beta, -cs.energy[i] / cs.gamma);
            for (k, &sk) in s.iter().enumerate() {
                a = a.matrix(sk, HermMat::outer(&cs.h[k][i]));
            }
            p.ge(a, 0.0);
        }
    }
    for (k, &sk) in s.iter().enumerate() {
        p.le(Affine::zero().trace(sk, n), cs.power[k]);
    }
    (p, s, beta)
}

/// Direct two-slot energy program for TDMA feasibility: maximize `s` over
/// `W_kl = α_l·S_kl` and `α` such that each user, harvesting in the slot where
/// the other decodes, collects `s·E_i/γ`. Feasible iff the optimum is at least 1.
pub fn tdma_energy_margin_generic(cs: &ChannelSet) -> Result<f64, ClosedFormError> {
    cs.require_two()?;
    if let Some(i) = cs.energy.iter().position(|&e| e <= 0.0) {
        return Err(ClosedFormError::NonPositiveEnergy(i));
    }
    let n = cs.num_antennas;
    let mut p = ConvexProgram::new();
    let w: Vec<Vec<MatVar>> = (0..2).map(|k| (0..2).map(|l| p.add_matrix(format!("W{}_{}", k + 1, l + 1), n)).collect()).collect();
    let alpha: Vec<ScalarVar> = (0..2).map(|l| p.add_scalar(format!("alpha{}", l + 1), Some(0.0))).collect();
    let s = p.add_scalar("s", None);
    p.maximize(Affine::var(s));
    p.le(Affine::var(alpha[0]).scalar(alpha[1], 1.0), 1.0);
    for i in 0..2 {
        let l = 1 - i;
        let mut a = Affine::zero().scalar(s, -cs.energy[i] / cs.gamma);
        for (k, row) in w.iter().enumerate() {
            a = a.matrix(row[l], HermMat::outer(&cs.h[k][i]));
        }
        p.ge(a, 0.0);
    }
    for (k, row) in w.iter().enumerate() {
        for (l, &m) in row.iter().enumerate() {
            p.le(Affine::zero().trace(m, n).scalar(alpha[l], -cs.power[k]), 0.0);
        }
    }
    let r = solve_convex(&p)?;
    if !r.is_optimal() {
        return Err(ClosedFormError::Solver(r.status));
    }
    Ok(r.values.scalar(s))
}

/// Max-min energy solution from either the closed form or the generic program.
#[derive(Debug, Clone, PartialEq)]
pub struct EhSolution {
    pub beta: f64,
    pub covariances: Vec<HermMat>,
    pub mu_star: Option<f64>,
    /// The closed form was not applicable and the generic solver was used.
    pub fallback: bool,
}

/// Closed form when `K = 2`, both targets are positive and its assumptions
/// hold; generic program otherwise.
pub fn tdms_eh_solve(cs: &ChannelSet) -> Result<EhSolution, ClosedFormError> {
    if cs.num_users == 2 && cs.energy.iter().all(|&e| e > 0.0) {
        match tdms_eh_minimize(cs) {
            Ok(d) => {
                return Ok(EhSolution { beta: d.beta, covariances: d.covariances, mu_star: Some(d.mu_star), fallback: false })
            }
            Err(ClosedFormError::AssumptionViolated(why)) => {
                log::warn!("max-min energy closed form not applicable ({why}); using generic solver");
            }
            Err(e) => return Err(e),
        }
    }
    if cs.energy.iter().all(|&e| e <= 0.0) {
        return Err(ClosedFormError::NonPositiveEnergy(0));
    }
    let (p, s, beta) = max_min_energy_program(cs);
    let r = solve_convex(&p)?;
    if !r.is_optimal() {
        return Err(ClosedFormError::Solver(r.status));
    }
    Ok(EhSolution {
        beta: r.values.scalar(beta),
        covariances: s.iter().map(|&m| r.values.matrix(m).project_psd()).collect(),
        mu_star: None,
        fallback: cs.num_users == 2,
    })
}

/// TDMA slot: in `First` user 1 decodes while user 2 harvests; `Second` swaps roles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Slot {
    First,
    Second,
}

/// Channels and budgets of one slot in decoder/harvester roles.
struct SlotView<'a> {
    d: usize,
    e: usize,
    h_dd: &'a CVec,
    h_de: &'a CVec,
    h_ed: &'a CVec,
    h_ee: &'a CVec,
    p_d: f64,
    p_e: f64,
    sigma2: f64,
    /// Received-power floor at the harvester per unit time.
    floor: f64,
    fraction: f64,
}

impl<'a> SlotView<'a> {
    fn new(cs: &'a ChannelSet, alpha: f64, slot: Slot) -> Self {
        let (d, e, fraction) = match slot {
            Slot::First => (0, 1, alpha),
            Slot::Second => (1, 0, 1.0 - alpha),
        };
        SlotView {
            d,
            e,
            h_dd: &cs.h[d][d],
            h_de: &cs.h[d][e],
            h_ed: &cs.h[e][d],
            h_ee: &cs.h[e][e],
            p_d: cs.power[d],
            p_e: cs.power[e],
            sigma2: cs.sigma2[d],
            floor: if cs.energy[e] > 0.0 { cs.energy[e] / cs.gamma / fraction } else { 0.0 },
            fraction,
        }
    }

    fn y_range(&self) -> (f64, f64) {
        let hee_bar = self.h_ee.unit().expect("nonzero channel");
        let lo = 1.0 / (self.p_e * self.h_ed.dot(&hee_bar).norm_sqr() + self.sigma2);
        (lo, 1.0 / self.sigma2)
    }

    fn harvester_beam(&self, y: f64) -> Result<QuadMax, ClosedFormError> {
        max_quad_leakage_cap(self.h_ee, self.h_ed, y * self.p_e, (1.0 - y * self.sigma2).max(0.0))
    }

    /// Energy-floor slack `y·P_d‖h_de‖² + g(y) − y·floor`.
    fn margin(&self, y: f64) -> Result<f64, ClosedFormError> {
        let g = self.h_ee.dot(&self.harvester_beam(y)?.v).norm_sqr();
        Ok(y * self.p_d * self.h_de.norm_sqr() + g - y * self.floor)
    }

    fn evaluate(&self, y: f64) -> Result<Option<SlotPoint>, ClosedFormError> {
        let v_e = self.harvester_beam(y)?;
        let g = self.h_ee.dot(&v_e.v).norm_sqr();
        let mut c = (y * self.floor - g).max(0.0);
        let reach = y * self.p_d * self.h_de.norm_sqr();
        if c > reach && c - reach <= 1e-12 * (reach + g) {
            c = reach;
        }
        match max_quad_energy_floor(self.h_dd, self.h_de, y * self.p_d, c)? {
            FloorOutcome::Infeasible => Ok(None),
            FloorOutcome::Solved(v_d) => Ok(Some(SlotPoint { y, g, v_d, v_e })),
        }
    }
}

struct SlotPoint {
    y: f64,
    g: f64,
    v_d: QuadMax,
    v_e: QuadMax,
}

/// Line-search state of one TDMA slot; vectors are indexed by transmitter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TdmaSlotState {
    pub y: f64,
    pub g_of_y: f64,
    pub v: Vec<CVec>,
    pub x: Vec<HermMat>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TdmaSlotSolution {
    /// Time-weighted rate of the decoding user.
    pub rate: f64,
    pub covariances: Vec<HermMat>,
    pub state: Option<TdmaSlotState>,
    pub fallback: bool,
}

fn golden_max<F>(mut a: f64, mut b: f64, mut f: F) -> Result<f64, ClosedFormError>
where
    F: FnMut(f64) -> Result<f64, ClosedFormError>,
{
    let tol = 1e-13 * b.abs().max(1.0);
    let mut x1 = b - INV_PHI * (b - a);
    let mut x2 = a + INV_PHI * (b - a);
    let (mut f1, mut f2) = (f(x1)?, f(x2)?);
    for _ in 0..BISECTION_CAP {
        if b - a <= tol {
            break;
        }
        if f1 < f2 {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + INV_PHI * (b - a);
            f2 = f(x2)?;
        } else {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - INV_PHI * (b - a);
            f1 = f(x1)?;
        }
    }
    Ok(if f1 >= f2 { x1 } else { x2 })
}

/// Bisects for the feasibility boundary between an infeasible and a feasible point.
fn boundary<F>(mut bad: f64, mut good: f64, mut margin: F) -> Result<f64, ClosedFormError>
where
    F: FnMut(f64) -> Result<f64, ClosedFormError>,
{
    for _ in 0..BISECTION_CAP {
        if (good - bad).abs() <= 1e-15 * good.abs().max(1.0) {
            break;
        }
        let mid = 0.5 * (bad + good);
        if margin(mid)? >= 0.0 {
            good = mid;
        } else {
            bad = mid;
        }
    }
    Ok(good)
}

impl SlotView<'_> {
    /// Sub-interval of the normalization range where the energy floor can be met.
    fn feasible_range(&self) -> Result<(f64, f64), ClosedFormError> {
        let (lo, hi) = self.y_range();
        let (m_lo, m_hi) = (self.margin(lo)?, self.margin(hi)?);
        if m_lo >= 0.0 && m_hi >= 0.0 {
            return Ok((lo, hi));
        }
        let peak = if m_lo >= 0.0 {
            lo
        } else if m_hi >= 0.0 {
            hi
        } else {
            let y = golden_max(lo, hi, |y| self.margin(y))?;
            if self.margin(y)? < 0.0 {
                return Err(ClosedFormError::SlotInfeasible);
            }
            y
        };
        let a = if m_lo >= 0.0 { lo } else { boundary(lo, peak, |y| self.margin(y))? };
        let b = if m_hi >= 0.0 { hi } else { boundary(hi, peak, |y| self.margin(y))? };
        Ok((a, b))
    }

    fn objective(&self, y: f64) -> Result<f64, ClosedFormError> {
        Ok(match self.evaluate(y)? {
            Some(pt) => pt.v_d.value,
            None => f64::NEG_INFINITY,
        })
    }
}

fn check_alpha(cs: &ChannelSet, alpha: f64) -> Result<(), ClosedFormError> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(ClosedFormError::AlphaOutOfRange(alpha));
    }
    let (lo, hi) = feasible_alpha_interval(cs)?;
    if alpha < lo - 1e-9 || alpha > hi + 1e-9 {
        return Err(ClosedFormError::AlphaOutOfRange(alpha));
    }
    Ok(())
}

fn idle_slot(cs: &ChannelSet) -> TdmaSlotSolution {
    TdmaSlotSolution {
        rate: 0.0,
        covariances: vec![HermMat::zeros(cs.num_antennas); 2],
        state: None,
        fallback: false,
    }
}

/// Solves one TDMA slot by the Charnes–Cooper line search over `y`.
pub fn tdma_slot_solve(cs: &ChannelSet, alpha: f64, slot: Slot) -> Result<TdmaSlotSolution, ClosedFormError> {
    cs.require_two()?;
    check_alpha(cs, alpha)?;
    let view = SlotView::new(cs, alpha, slot);
    if view.fraction <= 0.0 {
        return Ok(idle_slot(cs));
    }
    match slot_closed_form(&view) {
        Err(ClosedFormError::DegenerateParallel) => {
            log::warn!("TDMA slot closed form hit parallel channels; using generic solver");
            tdma_slot_generic(cs, alpha, slot)
        }
        other => other,
    }
}

fn slot_closed_form(view: &SlotView<'_>) -> Result<TdmaSlotSolution, ClosedFormError> {
    let (_, y_hi) = view.y_range();
    let at_hi = view.evaluate(y_hi)?;
    let y_star = match &at_hi {
        Some(pt) if pt.v_d.case == QuadCase::Aligned => y_hi,
        _ => {
            let (a, b) = view.feasible_range()?;
            golden_max(a, b, |y| view.objective(y))?
        }
    };
    let pt = view.evaluate(y_star)?.ok_or(ClosedFormError::SlotInfeasible)?;
    let mut v = vec![CVec::zeros(view.h_dd.len()); 2];
    v[view.d] = pt.v_d.v.clone();
    v[view.e] = pt.v_e.v.clone();
    let x: Vec<HermMat> = v.iter().map(HermMat::outer).collect();
    let covariances = x.iter().map(|m| m.scale(1.0 / pt.y)).collect();
    Ok(TdmaSlotSolution {
        rate: view.fraction * (1.0 + pt.v_d.value).log2(),
        covariances,
        state: Some(TdmaSlotState { y: pt.y, g_of_y: pt.g, v, x }),
        fallback: false,
    })
}

/// Handles of the transformed slot program.
#[derive(Debug, Clone, Copy)]
pub struct SlotProgramVars {
    /// Indexed by transmitter.
    pub x: [MatVar; 2],
    pub y: ScalarVar,
}

/// Charnes–Cooper form of one slot: maximize `h_ddᴴX_dh_dd` subject to
/// `h_edᴴX_eh_ed + yσ² ≤ 1`, the scaled energy floor and scaled power caps.
pub fn tdma_slot_program(cs: &ChannelSet, alpha: f64, slot: Slot) -> (ConvexProgram, SlotProgramVars) {
    let v = SlotView::new(cs, alpha, slot);
    let n = cs.num_antennas;
    let mut p = ConvexProgram::new();
    let x1 = p.add_matrix("X1", n);
    let x2 = p.add_matrix("X2", n);
    let y = p.add_scalar("y", Some(0.0));
    let xs = [x1, x2];
    let (xd, xe) = (xs[v.d], xs[v.e]);
    p.maximize(Affine::zero().matrix(xd, HermMat::outer(v.h_dd)));
    p.le(Affine::zero().matrix(xe, HermMat::outer(v.h_ed)).scalar(y, v.sigma2), 1.0);
    p.ge(
        Affine::zero().matrix(xd, HermMat::outer(v.h_de)).matrix(xe, HermMat::outer(v.h_ee)).scalar(y, -v.floor),
        0.0,
    );
    p.le(Affine::zero().trace(xd, n).scalar(y, -v.p_d), 0.0);
    p.le(Affine::zero().trace(xe, n).scalar(y, -v.p_e), 0.0);
    (p, SlotProgramVars { x: xs, y })
}

/// Solves the transformed slot program with the generic solver.
pub fn tdma_slot_generic(cs: &ChannelSet, alpha: f64, slot: Slot) -> Result<TdmaSlotSolution, ClosedFormError> {
    cs.require_two()?;
    let view = SlotView::new(cs, alpha, slot);
    if view.fraction <= 0.0 {
        return Ok(idle_slot(cs));
    }
    let (p, vars) = tdma_slot_program(cs, alpha, slot);
    let r = solve_convex(&p)?;
    match r.status {
        SolveStatus::Optimal => {}
        SolveStatus::Infeasible => return Err(ClosedFormError::SlotInfeasible),
        s => return Err(ClosedFormError::Solver(s)),
    }
    let y = r.values.scalar(vars.y);
    if y <= 0.0 {
        return Err(ClosedFormError::Solver(SolveStatus::NumericalFailure));
    }
    let covariances = vars.x.iter().map(|&m| r.values.matrix(m).project_psd().scale(1.0 / y)).collect();
    Ok(TdmaSlotSolution { rate: view.fraction * (1.0 + r.objective.max(0.0)).log2(), covariances, state: None, fallback: true })
}

/// Maps slot covariances to `(X, y)` with `y = 1/(h_edᴴS_eh_ed + σ²)` and `X = y·S`.
pub fn charnes_cooper_forward(cs: &ChannelSet, slot: Slot, s: &[HermMat]) -> Result<(Vec<HermMat>, f64), ClosedFormError> {
    cs.require_two()?;
    let v = SlotView::new(cs, 0.5, slot);
    let interference = crate::linalg::quad_form(&s[v.e], v.h_ed)?;
    let y = 1.0 / (interference + v.sigma2);
    Ok((s.iter().map(|m| m.scale(y)).collect(), y))
}

/// Inverse of [`charnes_cooper_forward`].
pub fn charnes_cooper_inverse(x: &[HermMat], y: f64) -> Vec<HermMat> {
    x.iter().map(|m| m.scale(1.0 / y)).collect()
}

/// True iff every second difference of equally spaced samples is at most
/// `1e-6·max|f|`.
pub fn samples_concave(values: &[f64]) -> bool {
    let scale = values.iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    values.windows(3).all(|w| w[0] - 2.0 * w[1] + w[2] <= 1e-6 * scale)
}

/// Samples the slot-1 objective over the feasible normalization range and
/// checks its concavity.
pub fn concavity_probe(cs: &ChannelSet, alpha: f64, grid_size: usize) -> Result<bool, ClosedFormError> {
    cs.require_two()?;
    let view = SlotView::new(cs, alpha, Slot::First);
    if view.fraction <= 0.0 || grid_size < 3 {
        return Ok(true);
    }
    let (a, b) = view.feasible_range()?;
    let values = (0..grid_size)
        .map(|j| {
            let y = if j + 1 == grid_size { b } else { a + (b - a) * j as f64 / (grid_size - 1) as f64 };
            view.objective(y)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(values.iter().all(|v| v.is_finite()) && samples_concave(&values))
}

#[cfg(test)]
mod tests;
