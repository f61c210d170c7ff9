//! Problem instances: channel generation, rate and energy evaluation, and the
//! two-user closed-form feasibility predicates.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{self, herm_eig, proj_orth_unit, CVec, HermMat, LinalgError, C64};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ChannelError {
    #[error("invalid field `{field}`: {reason}")]
    InvalidField { field: String, reason: String },
    #[error("operation requires K = 2, instance has K = {0}")]
    RequiresTwoUsers(usize),
    #[error("expected {expected} covariances, got {found}")]
    CountMismatch { expected: usize, found: usize },
    #[error("feasible time-fraction interval is empty")]
    EmptyInterval,
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

fn invalid(field: impl Into<String>, reason: impl Into<String>) -> ChannelError {
    ChannelError::InvalidField { field: field.into(), reason: reason.into() }
}

fn one() -> f64 {
    1.0
}

fn is_one(x: &f64) -> bool {
    *x == 1.0
}

/// One K-user MISO interference-channel instance.
///
/// `h[k][i]` is the channel from transmitter `k` to receiver `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSet {
    #[serde(rename = "K")]
    pub num_users: usize,
    #[serde(rename = "Nt")]
    pub num_antennas: usize,
    pub h: Vec<Vec<CVec>>,
    pub sigma2: Vec<f64>,
    pub tilde_sigma2: Vec<f64>,
    pub hat_sigma2: Vec<f64>,
    #[serde(rename = "P")]
    pub power: Vec<f64>,
    #[serde(rename = "E")]
    pub energy: Vec<f64>,
    #[serde(rename = "w")]
    pub weight: Vec<f64>,
    /// Energy conversion multiplier applied to every harvested amount.
    #[serde(default = "one", skip_serializing_if = "is_one")]
    pub gamma: f64,
}

impl ChannelSet {
    /// Builds an instance with unit weights, zero energy targets and an even
    /// split of each noise power between the RF and processing stages.
    pub fn new(h: Vec<Vec<CVec>>, sigma2: Vec<f64>, power: Vec<f64>) -> Result<Self, ChannelError> {
        let k = h.len();
        let nt = h.first().and_then(|row| row.first()).map_or(0, |v| v.len());
        let cs = ChannelSet {
            num_users: k,
            num_antennas: nt,
            tilde_sigma2: sigma2.iter().map(|s| s / 2.0).collect(),
            hat_sigma2: sigma2.iter().map(|s| s / 2.0).collect(),
            h,
            sigma2,
            power,
            energy: vec![0.0; k],
            weight: vec![1.0; k],
            gamma: 1.0,
        };
        cs.validate()?;
        Ok(cs)
    }

    pub fn with_energy(mut self, e: Vec<f64>) -> Result<Self, ChannelError> {
        self.energy = e;
        self.validate()?;
        Ok(self)
    }

    pub fn with_weights(mut self, w: Vec<f64>) -> Result<Self, ChannelError> {
        self.weight = w;
        self.validate()?;
        Ok(self)
    }

    pub fn k(&self) -> usize {
        self.num_users
    }

    pub fn nt(&self) -> usize {
        self.num_antennas
    }

    /// Channel from transmitter `k` to receiver `i`.
    pub fn link(&self, k: usize, i: usize) -> &CVec {
        &self.h[k][i]
    }

    pub fn validate(&self) -> Result<(), ChannelError> {
        let k = self.num_users;
        if k < 2 {
            return Err(invalid("K", "must be at least 2"));
        }
        if self.num_antennas < 1 {
            return Err(invalid("Nt", "must be at least 1"));
        }
        if self.h.len() != k || self.h.iter().any(|row| row.len() != k) {
            return Err(invalid("h", format!("must be a {k}x{k} array of vectors")));
        }
        if self.h.iter().flatten().any(|v| v.len() != self.num_antennas || !v.is_finite()) {
            return Err(invalid("h", format!("every vector must have {} finite entries", self.num_antennas)));
        }
        let check = |name: &str, xs: &[f64], ok: &dyn Fn(f64) -> bool, what: &str| {
            if xs.len() != k {
                return Err(invalid(name, format!("must have {k} entries")));
            }
            if xs.iter().any(|&x| !x.is_finite() || !ok(x)) {
                return Err(invalid(name, format!("entries must be finite and {what}")));
            }
            Ok(())
        };
        check("sigma2", &self.sigma2, &|x| x > 0.0, "positive")?;
        check("tilde_sigma2", &self.tilde_sigma2, &|x| x >= 0.0, "nonnegative")?;
        check("hat_sigma2", &self.hat_sigma2, &|x| x >= 0.0, "nonnegative")?;
        check("P", &self.power, &|x| x > 0.0, "positive")?;
        check("E", &self.energy, &|x| x >= 0.0, "nonnegative")?;
        check("w", &self.weight, &|x| x >= 0.0, "nonnegative")?;
        if self.weight.iter().all(|&w| w == 0.0) {
            return Err(invalid("w", "at least one weight must be positive"));
        }
        if !(self.gamma.is_finite() && self.gamma > 0.0) {
            return Err(invalid("gamma", "must be finite and positive"));
        }
        Ok(())
    }

    fn check_count(&self, s: &[HermMat]) -> Result<(), ChannelError> {
        if s.len() != self.num_users {
            return Err(ChannelError::CountMismatch { expected: self.num_users, found: s.len() });
        }
        if let Some(bad) = s.iter().find(|m| m.dim() != self.num_antennas) {
            return Err(LinalgError::DimensionMismatch { expected: self.num_antennas, found: bad.dim() }.into());
        }
        Ok(())
    }

    pub(crate) fn require_two(&self) -> Result<(), ChannelError> {
        if self.num_users != 2 {
            return Err(ChannelError::RequiresTwoUsers(self.num_users));
        }
        Ok(())
    }

    /// Absolute tolerance on energy slack used by every feasibility verdict.
    pub fn energy_tolerance(&self) -> f64 {
        let emax = self.energy.iter().fold(0.0_f64, |m, &e| m.max(e));
        if emax > 0.0 {
            1e-6 * emax
        } else {
            1e-9
        }
    }
}

/// Matrix of received powers `g[k][i] = h_kiᴴ S_k h_ki`.
pub fn received_powers(cs: &ChannelSet, s: &[HermMat]) -> Result<Vec<Vec<f64>>, ChannelError> {
    cs.check_count(s)?;
    Ok((0..cs.num_users)
        .map(|k| (0..cs.num_users).map(|i| linalg::quad_form_unchecked(&s[k], &cs.h[k][i])).collect())
        .collect())
}

/// Per-user achievable rates in bits/s/Hz with every receiver decoding.
pub fn rates(cs: &ChannelSet, s: &[HermMat]) -> Result<Vec<f64>, ChannelError> {
    let g = received_powers(cs, s)?;
    Ok((0..cs.num_users)
        .map(|i| {
            let interf: f64 = (0..cs.num_users).filter(|&k| k != i).map(|k| g[k][i]).sum();
            (1.0 + g[i][i].max(0.0) / (interf.max(0.0) + cs.sigma2[i])).log2()
        })
        .collect())
}

/// Per-user harvested energy with every receiver harvesting.
pub fn energies(cs: &ChannelSet, s: &[HermMat]) -> Result<Vec<f64>, ChannelError> {
    let g = received_powers(cs, s)?;
    Ok((0..cs.num_users)
        .map(|i| cs.gamma * (0..cs.num_users).map(|k| g[k][i]).sum::<f64>())
        .collect())
}

/// Per-user rate, energy and feasibility of a strategy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub rate: Vec<f64>,
    pub weighted_sum_rate: f64,
    pub energy: Vec<f64>,
    pub feasible: bool,
    pub min_energy_slack: f64,
}

impl Evaluation {
    pub fn from_parts(cs: &ChannelSet, rate: Vec<f64>, energy: Vec<f64>) -> Self {
        let weighted_sum_rate = rate.iter().zip(&cs.weight).map(|(r, w)| r * w).sum();
        let min_energy_slack = energy
            .iter()
            .zip(&cs.energy)
            .map(|(got, need)| got - need)
            .fold(f64::INFINITY, f64::min);
        Evaluation {
            rate,
            weighted_sum_rate,
            energy,
            feasible: min_energy_slack >= -cs.energy_tolerance(),
            min_energy_slack,
        }
    }

    pub fn sum_rate(&self) -> f64 {
        self.rate.iter().sum()
    }
}

/// Smallest energy each receiver harvests under sum-rate-optimal beamforming
/// when the cross-link is zero-forced: `T_i = P_i |h_iiᴴ ĥ⊥_ij|²`.
pub fn property1_thresholds(cs: &ChannelSet) -> Result<(f64, f64), ChannelError> {
    cs.require_two()?;
    let t = |i: usize| -> Result<f64, ChannelError> {
        let j = 1 - i;
        let hii = &cs.h[i][i];
        match proj_orth_unit(hii, &cs.h[i][j]) {
            Ok(u) => Ok(cs.power[i] * hii.dot(&u).norm_sqr()),
            Err(LinalgError::DegenerateParallel) => Ok(0.0),
            Err(e) => Err(e.into()),
        }
    };
    Ok((t(0)?, t(1)?))
}

fn max_receivable(cs: &ChannelSet, i: usize) -> f64 {
    cs.gamma * (0..cs.num_users).map(|k| cs.power[k] * cs.h[k][i].norm_sqr()).sum::<f64>()
}

/// Two-user TDMA feasibility: `E1/(P1‖h11‖²+P2‖h21‖²) + E2/(P1‖h12‖²+P2‖h22‖²) ≤ 1`.
pub fn tdma_feasible(cs: &ChannelSet) -> Result<bool, ChannelError> {
    cs.require_two()?;
    let load = tdma_load(cs);
    Ok(load <= 1.0 + 1e-12)
}

fn tdma_load(cs: &ChannelSet) -> f64 {
    let part = |i: usize| {
        if cs.energy[i] == 0.0 {
            0.0
        } else {
            cs.energy[i] / max_receivable(cs, i)
        }
    };
    part(0) + part(1)
}

/// Interval of time fractions for slot 1 (user 1 decodes, user 2 harvests).
pub fn feasible_alpha_interval(cs: &ChannelSet) -> Result<(f64, f64), ChannelError> {
    cs.require_two()?;
    let lo = if cs.energy[1] == 0.0 { 0.0 } else { cs.energy[1] / max_receivable(cs, 1) };
    let hi = if cs.energy[0] == 0.0 { 1.0 } else { 1.0 - cs.energy[0] / max_receivable(cs, 0) };
    if lo > hi + 1e-12 {
        return Err(ChannelError::EmptyInterval);
    }
    // Collapse rounding-level inversions at the boundary.
    let mid = 0.5 * (lo + hi);
    Ok(if lo > hi { (mid, mid) } else { (lo, hi) })
}

fn default_ps_split() -> f64 {
    0.5
}

/// Random-instance generator settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenConfig {
    #[serde(rename = "K")]
    pub num_users: usize,
    #[serde(rename = "Nt")]
    pub num_antennas: usize,
    /// Largest eigenvalue of every cross-link covariance.
    pub eta: f64,
    pub snr_db: f64,
    pub seed: u64,
    /// Optional fixed covariances `Q[k][i]`; drawn at random when absent.
    #[serde(default, rename = "Q", skip_serializing_if = "Option::is_none")]
    pub covariances: Option<Vec<Vec<HermMat>>>,
    /// Fraction of each receiver's noise attributed to the RF front end in
    /// power-splitting mode; the remainder is processing noise.
    #[serde(default = "default_ps_split")]
    pub ps_split: f64,
}

impl GenConfig {
    pub fn new(num_users: usize, num_antennas: usize, eta: f64, snr_db: f64, seed: u64) -> Self {
        GenConfig { num_users, num_antennas, eta, snr_db, seed, covariances: None, ps_split: 0.5 }
    }

    pub fn validate(&self) -> Result<(), ChannelError> {
        if self.num_users < 2 {
            return Err(invalid("K", "must be at least 2"));
        }
        if self.num_antennas < 1 {
            return Err(invalid("Nt", "must be at least 1"));
        }
        if !(self.eta.is_finite() && self.eta > 0.0) {
            return Err(invalid("eta", "must be finite and positive"));
        }
        if !self.snr_db.is_finite() {
            return Err(invalid("snr_db", "must be finite"));
        }
        if !(0.0..=1.0).contains(&self.ps_split) {
            return Err(invalid("ps_split", "must lie in [0, 1]"));
        }
        if let Some(q) = &self.covariances {
            let k = self.num_users;
            if q.len() != k || q.iter().any(|row| row.len() != k) {
                return Err(invalid("Q", format!("must be a {k}x{k} array of matrices")));
            }
            for (a, row) in q.iter().enumerate() {
                for (b, m) in row.iter().enumerate() {
                    let field = format!("Q[{a}][{b}]");
                    if m.dim() != self.num_antennas {
                        return Err(invalid(field, "wrong dimension"));
                    }
                    let e = herm_eig(m)?;
                    let target = if a == b { 1.0 } else { self.eta };
                    if *e.values.last().unwrap() < -1e-9 * e.values[0].abs() {
                        return Err(invalid(field, "must be positive semidefinite"));
                    }
                    if (e.values[0] - target).abs() > 1e-10 * target.max(1.0) {
                        return Err(invalid(field, format!("largest eigenvalue must equal {target}")));
                    }
                }
            }
        }
        Ok(())
    }
}

fn complex_gaussian(rng: &mut ChaCha20Rng) -> C64 {
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

fn random_covariance(rng: &mut ChaCha20Rng, n: usize, lmax: f64) -> HermMat {
    let a = DMatrix::from_fn(n, n, |_, _| complex_gaussian(rng));
    let q = HermMat::new(&a * a.adjoint()).expect("A·Aᴴ is Hermitian");
    let top = herm_eig(&q).expect("Hermitian").values[0];
    q.scale(lmax / top).with_psd_flag(true)
}

/// Draws an instance and also returns the covariances it was sampled from.
pub fn generate_with_covariances(cfg: &GenConfig) -> Result<(ChannelSet, Vec<Vec<HermMat>>), ChannelError> {
    cfg.validate()?;
    let (k, n) = (cfg.num_users, cfg.num_antennas);
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let mut qs = Vec::with_capacity(k);
    let mut h = Vec::with_capacity(k);
    for a in 0..k {
        let mut qrow = Vec::with_capacity(k);
        let mut hrow = Vec::with_capacity(k);
        for b in 0..k {
            let target = if a == b { 1.0 } else { cfg.eta };
            let q = match &cfg.covariances {
                Some(given) => given[a][b].clone(),
                None => random_covariance(&mut rng, n, target),
            };
            let root = q.sqrt_psd();
            let z = nalgebra::DVector::from_fn(n, |_, _| complex_gaussian(&mut rng));
            hrow.push(CVec::from_vector(root * z));
            qrow.push(q);
        }
        qs.push(qrow);
        h.push(hrow);
    }
    let p = 1.0;
    let sigma2 = p / 10f64.powf(cfg.snr_db / 10.0);
    let cs = ChannelSet {
        num_users: k,
        num_antennas: n,
        h,
        sigma2: vec![sigma2; k],
        tilde_sigma2: vec![sigma2 * cfg.ps_split; k],
        hat_sigma2: vec![sigma2 * (1.0 - cfg.ps_split); k],
        power: vec![p; k],
        energy: vec![0.0; k],
        weight: vec![1.0; k],
        gamma: 1.0,
    };
    Ok((cs, qs))
}

/// Draws an instance: `Q_ki` random PSD with `λmax(Q_ii) = 1` and
/// `λmax(Q_ki) = η`, `h_ki ~ CN(0, Q_ki)`, unit powers, noise from the SNR.
pub fn generate_instance(cfg: &GenConfig) -> Result<ChannelSet, ChannelError> {
    generate_with_covariances(cfg).map(|(cs, _)| cs)
}
