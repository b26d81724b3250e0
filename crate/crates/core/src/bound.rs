//! Achievability limit for MIMO unsourced random access with known channel
//! norms and Gaussian codebooks.
//!
//! Users are ranked by `||h_j||^2`. The `K~` strongest are decodable when,
//! treating the rest as noise, every subset of them satisfies the joint
//! capacity condition; the binding subset of size `k` is the `k` weakest.
//! Per channel use, `P/N0 = (B / T_tot) Eb/N0`.

use rand_distr::{Distribution, Gamma};

use crate::seed;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BoundError {
    #[error("channel norms must be sorted in descending order")]
    Unsorted,
    #[error("target PUPE {eps} is not reached at the upper end {hi_db} dB")]
    Unbounded { eps: f64, hi_db: f64 },
    #[error("invalid bound configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundConfig {
    pub m: usize,
    pub k_active: usize,
    pub t_tot: usize,
    pub b: usize,
    /// Target PUPE.
    pub eps: f64,
    pub realizations: usize,
    pub lo_db: f64,
    pub hi_db: f64,
    pub tol_db: f64,
    pub seed: u64,
}

impl BoundConfig {
    pub fn new(m: usize, k_active: usize, eps: f64) -> Self {
        BoundConfig {
            m,
            k_active,
            t_tot: crate::config::DEFAULT_T_TOT,
            b: crate::config::DEFAULT_B,
            eps,
            realizations: 100_000,
            lo_db: -10.0,
            hi_db: 30.0,
            tol_db: 0.05,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), BoundError> {
        let bad = |s: &str| Err(BoundError::Invalid(s.to_string()));
        if self.m == 0 || self.k_active == 0 || self.t_tot == 0 || self.b == 0 {
            return bad("M, Ka, T_tot and B must be positive");
        }
        if self.realizations == 0 {
            return bad("need at least one realization");
        }
        if !(self.eps > 0.0 && self.eps <= 1.0) {
            return bad("eps must lie in (0, 1]");
        }
        if !(self.lo_db < self.hi_db) || !(self.tol_db > 0.0) {
            return bad("need lo_db < hi_db and a positive tolerance");
        }
        Ok(())
    }

    /// Per-channel-use `P/N0` at the given `Eb/N0`.
    pub fn snr(&self, ebn0_db: f64) -> f64 {
        10f64.powf(ebn0_db / 10.0) * self.b as f64 / self.t_tot as f64
    }
}

/// Joint capacity condition for the `k` weakest of the first `k_dec`
/// users, with users past `k_dec` as interference.
fn subset_ok(norms: &[f64], k_dec: usize, k: usize, snr: f64, m: f64, t_tot: f64, b: f64) -> bool {
    let signal: f64 = norms[k_dec - k..k_dec].iter().sum::<f64>() * snr / m;
    let interference: f64 = norms[k_dec..].iter().sum::<f64>() * snr / m;
    t_tot * (1.0 + signal / (1.0 + interference)).log2() > b * k as f64
}

/// Largest number of decodable users for descending `norms` at `P/N0 = snr`.
pub fn max_decodable(norms: &[f64], snr: f64, cfg: &BoundConfig) -> Result<usize, BoundError> {
    if norms.windows(2).any(|w| w[0] < w[1]) {
        return Err(BoundError::Unsorted);
    }
    let (m, t, b) = (cfg.m as f64, cfg.t_tot as f64, cfg.b as f64);
    Ok((1..=norms.len())
        .rev()
        .find(|&kd| (1..=kd).all(|k| subset_ok(norms, kd, k, snr, m, t, b)))
        .unwrap_or(0))
}

/// `R` descending vectors of `||h_j||^2 ~ Gamma(M, 1)`.
pub fn draw_norms(cfg: &BoundConfig) -> Vec<Vec<f64>> {
    let gamma = Gamma::new(cfg.m as f64, 1.0).expect("M >= 1");
    let mut rng = seed::rng_from(seed::derive_seed(cfg.seed, &[u64::from_be_bytes(*b"\0\0\0bound")]));
    (0..cfg.realizations)
        .map(|_| {
            let mut v: Vec<f64> = (0..cfg.k_active).map(|_| gamma.sample(&mut rng)).collect();
            v.sort_by(|a, b| b.total_cmp(a));
            v
        })
        .collect()
}

/// Mean fraction of undecodable users over the given realizations.
pub fn pupe_from_norms(norms: &[Vec<f64>], ebn0_db: f64, cfg: &BoundConfig) -> f64 {
    let snr = cfg.snr(ebn0_db);
    let total: f64 = norms
        .iter()
        .map(|n| {
            let kd = max_decodable(n, snr, cfg).expect("draws are sorted");
            (n.len() - kd) as f64 / n.len() as f64
        })
        .sum();
    total / norms.len() as f64
}

pub fn pupe_limit(cfg: &BoundConfig, ebn0_db: f64) -> f64 {
    pupe_from_norms(&draw_norms(cfg), ebn0_db, cfg)
}

/// Bisection for the smallest `Eb/N0` whose PUPE is at most `eps`, on fixed draws.
pub fn required_ebn0_with_norms(cfg: &BoundConfig, norms: &[Vec<f64>]) -> Result<f64, BoundError> {
    cfg.validate()?;
    let ok = |db: f64| pupe_from_norms(norms, db, cfg) <= cfg.eps;
    if ok(cfg.lo_db) {
        return Ok(cfg.lo_db);
    }
    if !ok(cfg.hi_db) {
        return Err(BoundError::Unbounded {
            eps: cfg.eps,
            hi_db: cfg.hi_db,
        });
    }
    let (mut lo, mut hi) = (cfg.lo_db, cfg.hi_db);
    while hi - lo > cfg.tol_db {
        let mid = 0.5 * (lo + hi);
        if ok(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

pub fn required_ebn0(cfg: &BoundConfig) -> Result<f64, BoundError> {
    cfg.validate()?;
    required_ebn0_with_norms(cfg, &draw_norms(cfg))
}
