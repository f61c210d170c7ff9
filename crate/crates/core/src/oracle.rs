//! Brute-force reference solvers for tests and the `verify` command.
//!
//! For two users, beamforming is optimal and each beam lies in the span of
//! the transmitter's two channels, so a grid over two angles per transmitter
//! covers the ideal problem. The max-min energy dual is checked on a uniform
//! multiplier grid, and the SCA surrogate is probed against the true rate.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{received_powers, ChannelError, ChannelSet};
use crate::linalg::{proj_orth_unit, CVec, HermMat, C64};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error("grid needs at least 8 points per axis, got {0}")]
    GridTooSmall(usize),
    #[error(transparent)]
    Channel(#[from] ChannelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub points_per_axis: usize,
    /// Relative slack on the full-power normalization.
    pub power_tolerance: f64,
    /// Absolute slack on every energy floor.
    pub constraint_tolerance: f64,
}

impl GridSpec {
    pub fn new(points_per_axis: usize) -> Self {
        GridSpec { points_per_axis, power_tolerance: 1e-9, constraint_tolerance: 1e-9 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    /// `−∞` when no grid point meets both energy floors.
    pub best_rate: f64,
    /// Full-power beamformers, indexed by transmitter.
    pub beamformers: Option<[CVec; 2]>,
    /// Grid coordinates `(θ, φ)` of each transmitter.
    pub angles: Option<[(f64, f64); 2]>,
}

/// One candidate beam of a transmitter and the powers it delivers.
#[derive(Clone, Copy)]
struct Beam {
    angles: (f64, f64),
    /// Received power at receivers 1 and 2.
    g: [f64; 2],
}

/// Orthonormal basis of `span{h_k1, h_k2}`; the second vector is zero when
/// the span is one-dimensional.
fn span_basis(cs: &ChannelSet, k: usize) -> [CVec; 2] {
    let (a, b) = (&cs.h[k][0], &cs.h[k][1]);
    let n = cs.num_antennas;
    let Some(u1) = a.unit().or_else(|| b.unit()) else {
        return [CVec::basis(n, 0), CVec::zeros(n)];
    };
    [u1.clone(), proj_orth_unit(b, &u1).unwrap_or_else(|_| CVec::zeros(n))]
}

/// `√P·(cos θ·u_1 + sin θ·e^{jφ}·u_2)/‖·‖` over the span basis.
fn beam_vector(cs: &ChannelSet, basis: &[CVec; 2], k: usize, theta: f64, phi: f64) -> Option<CVec> {
    let a = C64::new(theta.cos(), 0.0);
    let b = C64::from_polar(theta.sin(), phi);
    let v = basis[0].scale(a).add(&basis[1].scale(b));
    v.unit().map(|u| u.scale_real(cs.power[k].sqrt()))
}

fn beam(cs: &ChannelSet, basis: &[CVec; 2], k: usize, theta: f64, phi: f64, tol: f64) -> Option<Beam> {
    let v = beam_vector(cs, basis, k, theta, phi)?;
    debug_assert!((v.norm_sqr() - cs.power[k]).abs() <= tol * cs.power[k].max(1.0));
    Some(Beam { angles: (theta, phi), g: [cs.h[k][0].dot(&v).norm_sqr(), cs.h[k][1].dot(&v).norm_sqr()] })
}

fn axis(n: usize, span: f64, closed: bool) -> impl Iterator<Item = f64> {
    let d = if closed { (n - 1) as f64 } else { n as f64 };
    (0..n).map(move |j| span * j as f64 / d)
}

fn beams(cs: &ChannelSet, k: usize, g: &GridSpec) -> Vec<Beam> {
    let n = g.points_per_axis;
    let basis = span_basis(cs, k);
    axis(n, std::f64::consts::FRAC_PI_2, true)
        .flat_map(|t| axis(n, std::f64::consts::TAU, false).map(move |p| (t, p)))
        .filter_map(|(t, p)| beam(cs, &basis, k, t, p, g.power_tolerance))
        .collect()
}

struct PairScore<'a> {
    cs: &'a ChannelSet,
    floors: [f64; 2],
    tol: f64,
    /// Equal weights: rank pairs by `(1 + sinr1)(1 + sinr2)` and skip the logs.
    product: bool,
}

impl PairScore<'_> {
    fn feasible(&self, b1: &Beam, b2: &Beam) -> bool {
        (0..2).all(|i| (b1.g[i] + b2.g[i] - self.floors[i]) * self.cs.gamma >= -self.tol)
    }

    /// Monotone in the weighted sum rate.
    fn key(&self, b1: &Beam, b2: &Beam) -> f64 {
        let cs = self.cs;
        let a = 1.0 + b1.g[0] / (b2.g[0] + cs.sigma2[0]);
        let b = 1.0 + b2.g[1] / (b1.g[1] + cs.sigma2[1]);
        if self.product {
            a * b
        } else {
            cs.weight[0] * a.log2() + cs.weight[1] * b.log2()
        }
    }

    fn rate(&self, b1: &Beam, b2: &Beam) -> f64 {
        let cs = self.cs;
        let r1 = (1.0 + b1.g[0] / (b2.g[0] + cs.sigma2[0])).log2();
        let r2 = (1.0 + b2.g[1] / (b1.g[1] + cs.sigma2[1])).log2();
        cs.weight[0] * r1 + cs.weight[1] * r2
    }
}

fn pair_score(cs: &ChannelSet, tol: f64) -> PairScore<'_> {
    PairScore {
        cs,
        floors: [cs.energy[0] / cs.gamma, cs.energy[1] / cs.gamma],
        tol,
        product: cs.weight[0] == cs.weight[1],
    }
}

/// Best feasible partner of every transmitter-1 beam: `(key, i, j)`.
fn best_partners(score: &PairScore<'_>, b1: &[Beam], b2: &[Beam]) -> Vec<(f64, usize, usize)> {
    b1.par_iter()
        .enumerate()
        .map(|(i, x)| {
            let mut best = (f64::NEG_INFINITY, i, usize::MAX);
            for (j, y) in b2.iter().enumerate() {
                if score.feasible(x, y) {
                    let r = score.key(x, y);
                    if r > best.0 {
                        best = (r, i, j);
                    }
                }
            }
            best
        })
        .collect()
}

/// Exhaustive search over full-power beam pairs on a `(θ, φ)` grid per transmitter.
pub fn oracle_ideal_2user(cs: &ChannelSet, g: &GridSpec) -> Result<OracleResult, OracleError> {
    let (b1, b2, rows) = grid_rows(cs, g)?;
    Ok(grid_best(cs, g, &b1, &b2, &rows))
}

fn grid_best(cs: &ChannelSet, g: &GridSpec, b1: &[Beam], b2: &[Beam], rows: &[(f64, usize, usize)]) -> OracleResult {
    // First maximum in index order, so the result does not depend on scheduling.
    let best = rows.iter().fold(None::<&(f64, usize, usize)>, |acc, r| match acc {
        Some(a) if a.0 >= r.0 => Some(a),
        _ if r.2 == usize::MAX => acc,
        _ => Some(r),
    });
    let score = pair_score(cs, g.constraint_tolerance);
    match best {
        Some(&(_, i, j)) => result(cs, score.rate(&b1[i], &b2[j]), Some([b1[i].angles, b2[j].angles])),
        None => result(cs, f64::NEG_INFINITY, None),
    }
}

fn grid_rows(cs: &ChannelSet, g: &GridSpec) -> Result<(Vec<Beam>, Vec<Beam>, Vec<(f64, usize, usize)>), OracleError> {
    if g.points_per_axis < 8 {
        return Err(OracleError::GridTooSmall(g.points_per_axis));
    }
    if cs.num_users != 2 {
        return Err(ChannelError::RequiresTwoUsers(cs.num_users).into());
    }
    let b1 = beams(cs, 0, g);
    let b2 = beams(cs, 1, g);
    let rows = best_partners(&pair_score(cs, g.constraint_tolerance), &b1, &b2);
    Ok((b1, b2, rows))
}

fn result(cs: &ChannelSet, best_rate: f64, angles: Option<[(f64, f64); 2]>) -> OracleResult {
    let basis = [span_basis(cs, 0), span_basis(cs, 1)];
    let beamformers = angles.and_then(|a| {
        Some([beam_vector(cs, &basis[0], 0, a[0].0, a[0].1)?, beam_vector(cs, &basis[1], 1, a[1].0, a[1].1)?])
    });
    OracleResult { best_rate, beamformers, angles }
}

/// Starts refined from the best grid rows.
const REFINE_STARTS: usize = 8;
const REFINE_DIRECTIONS: usize = 24;
const REFINE_EVALS: usize = 40_000;

/// Grid search, then a feasible pattern search in the four angles from the
/// best grid points. Random directions let the search slide along a curved
/// energy floor where coordinate moves stall.
pub fn oracle_ideal_2user_refined(cs: &ChannelSet, g: &GridSpec) -> Result<OracleResult, OracleError> {
    oracle_ideal_2user_both(cs, g).map(|(_, refined)| refined)
}

/// Plain grid result and its refinement from one grid evaluation.
pub fn oracle_ideal_2user_both(cs: &ChannelSet, g: &GridSpec) -> Result<(OracleResult, OracleResult), OracleError> {
    let (b1, b2, mut rows) = grid_rows(cs, g)?;
    let coarse = grid_best(cs, g, &b1, &b2, &rows);
    rows.retain(|r| r.2 != usize::MAX);
    if rows.is_empty() {
        return Ok((coarse.clone(), coarse));
    }
    rows.sort_by(|a, b| b.0.total_cmp(&a.0).then((a.1, a.2).cmp(&(b.1, b.2))));
    let score = pair_score(cs, g.constraint_tolerance);
    let basis = [span_basis(cs, 0), span_basis(cs, 1)];
    let eval = |a: &[f64; 4]| -> f64 {
        match (beam(cs, &basis[0], 0, a[0], a[1], g.power_tolerance), beam(cs, &basis[1], 1, a[2], a[3], g.power_tolerance)) {
            (Some(x), Some(y)) if score.feasible(&x, &y) => score.rate(&x, &y),
            _ => f64::NEG_INFINITY,
        }
    };
    let mut rng = ChaCha20Rng::seed_from_u64(0x5eed);
    let mut dirs: Vec<[f64; 4]> = (0..4)
        .flat_map(|d| {
            [1.0, -1.0].map(|s| {
                let mut v = [0.0; 4];
                v[d] = s;
                v
            })
        })
        .collect();
    for _ in 0..REFINE_DIRECTIONS {
        let v: [f64; 4] = std::array::from_fn(|_| rng.sample::<f64, _>(StandardNormal));
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        dirs.push(v.map(|x| x / n));
    }
    let base = [
        std::f64::consts::FRAC_PI_2 / (g.points_per_axis - 1) as f64,
        std::f64::consts::TAU / g.points_per_axis as f64,
    ];
    let refined: Vec<([f64; 4], f64)> = rows
        .iter()
        .take(REFINE_STARTS)
        .collect::<Vec<_>>()
        .par_iter()
        .map(|&&(_, i, j)| {
            let mut x = [b1[i].angles.0, b1[i].angles.1, b2[j].angles.0, b2[j].angles.1];
            let mut fx = eval(&x);
            let mut h = 1.0;
            let mut evals = 0;
            while h > 1e-9 && evals < REFINE_EVALS {
                let mut moved = false;
                for d in &dirs {
                    let y: [f64; 4] = std::array::from_fn(|c| x[c] + h * base[c % 2] * d[c]);
                    let fy = eval(&y);
                    evals += 1;
                    if fy > fx {
                        x = y;
                        fx = fy;
                        moved = true;
                        break;
                    }
                }
                if !moved {
                    h *= 0.5;
                }
            }
            (x, fx)
        })
        .collect();
    let (x, fx) = refined.into_iter().fold(([0.0; 4], f64::NEG_INFINITY), |a, b| if b.1 > a.1 { b } else { a });
    Ok((coarse, result(cs, fx, Some([(x[0], x[1]), (x[2], x[3])]))))
}

/// Real symmetric embedding `[[Re, −Im], [Im, Re]]` of a Hermitian matrix.
fn embed(m: &HermMat) -> DMatrix<f64> {
    let n = m.dim();
    DMatrix::from_fn(2 * n, 2 * n, |r, c| {
        let z = m.get(r % n, c % n);
        match (r < n, c < n) {
            (true, true) | (false, false) => z.re,
            (true, false) => -z.im,
            (false, true) => z.im,
        }
    })
}

/// Principal eigenvector of a Hermitian matrix through its real embedding.
fn principal(m: &HermMat) -> CVec {
    let n = m.dim();
    let eig = SymmetricEigen::new(embed(m));
    let top = eig.eigenvalues.imax();
    let col = eig.eigenvectors.column(top);
    let v = CVec::new((0..n).map(|r| C64::new(col[r], col[r + n])).collect()).expect("finite eigenvector");
    v.unit().unwrap_or_else(|| CVec::basis(n, 0))
}

/// Max over `n` uniform multipliers `μ ∈ [0, 1/E1]` of the energy margin of
/// the primal point recovered from `μ·h_k1h_k1ᴴ + η·h_k2h_k2ᴴ`.
pub fn oracle_mu_grid(cs: &ChannelSet, n: usize) -> Result<f64, OracleError> {
    cs.require_two()?;
    let e1 = cs.energy[0] / cs.gamma;
    let e2 = cs.energy[1] / cs.gamma;
    let n = n.max(2);
    let best = (0..n)
        .into_par_iter()
        .map(|j| {
            let mu = (j as f64 / (n - 1) as f64) / e1;
            let eta = ((1.0 - mu * e1) / e2).max(0.0);
            let mut got = [0.0; 2];
            for k in 0..2 {
                let m = HermMat::outer(&cs.h[k][0]).scale(mu).add(&HermMat::outer(&cs.h[k][1]).scale(eta));
                let v = principal(&m);
                for (i, gi) in got.iter_mut().enumerate() {
                    *gi += cs.power[k] * cs.h[k][i].dot(&v).norm_sqr();
                }
            }
            (got[0] / e1).min(got[1] / e2)
        })
        .reduce(|| f64::NEG_INFINITY, f64::max);
    Ok(best)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapProbe {
    /// Smallest `true − surrogate` over the sampled points.
    pub min_gap: f64,
    /// `true − surrogate` at the expansion point.
    pub gap_at_expansion: f64,
}

/// Weighted sum rate minus its SCA surrogate at `s`: the surrogate replaces
/// `ln(interference + σ²)` by its tangent upper bound at `ybar`.
pub fn surrogate_gap(cs: &ChannelSet, s: &[HermMat], ybar: &[f64]) -> Result<f64, ChannelError> {
    let g = received_powers(cs, s)?;
    let mut gap = 0.0;
    for i in 0..cs.num_users {
        let interf: f64 = (0..cs.num_users).filter(|&k| k != i).map(|k| g[k][i]).sum::<f64>() + cs.sigma2[i];
        let total = interf + g[i][i];
        let truth = total.ln() - interf.ln();
        let y = ybar[i] + interf * (-ybar[i]).exp() - 1.0;
        let surrogate = total.ln() - y;
        gap += cs.weight[i] * (truth - surrogate) * std::f64::consts::LOG2_E;
    }
    Ok(gap)
}

/// Samples `samples` feasible-power perturbations of `point` and reports the
/// smallest surrogate gap together with the gap at `point` itself.
pub fn surrogate_gap_probe(
    cs: &ChannelSet,
    point: &[HermMat],
    ybar: &[f64],
    samples: usize,
    seed: u64,
) -> Result<GapProbe, ChannelError> {
    let gap_at_expansion = surrogate_gap(cs, point, ybar)?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let n = cs.num_antennas;
    let mut min_gap = gap_at_expansion;
    for _ in 0..samples {
        let lam: f64 = rng.random();
        let trial: Vec<HermMat> = point
            .iter()
            .enumerate()
            .map(|(k, s)| {
                let v = CVec::new(
                    (0..n)
                        .map(|_| C64::new(rng.sample::<f64, _>(StandardNormal), rng.sample::<f64, _>(StandardNormal)))
                        .collect(),
                )
                .expect("finite samples");
                let r = HermMat::outer(&v);
                let r = r.scale(cs.power[k] / r.trace().max(f64::MIN_POSITIVE));
                s.scale(1.0 - lam).add(&r.scale(lam))
            })
            .collect();
        min_gap = min_gap.min(surrogate_gap(cs, &trial, ybar)?);
    }
    Ok(GapProbe { min_gap, gap_at_expansion })
}
