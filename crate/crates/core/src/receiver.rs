//! Iterative receiver: the factorization engine exchanges messages with the
//! per-user `g` and `x` decoders, and several randomly initialized trials are
//! merged through a pending list of candidate packets.

use std::collections::HashSet;

use ndarray::Array2;

use crate::bigamp::{run_bigamp, AmpError, AmpState, BigAmpOpts, BigAmpOutput};
use crate::codec::{decode_a, Packet};
use crate::config::SkpConfig;
use crate::decoder_g::{decode_g, GaussianBlockMsg};
use crate::decoder_x::{decode_x, XChannelMsg};
use crate::fec::{CcSpec, FecError};
use crate::messages::{SpikeGaussianMsg, SymbolMsg};
use crate::scalar::{Cpx, Real};
use crate::seed;

#[derive(Debug, Clone, PartialEq)]
pub struct ReceiverOpts<T> {
    /// Supports kept by the `g` decoder.
    pub n_top: usize,
    /// Priority at which a pending packet counts as confirmed.
    pub p_thr: usize,
    /// Maximum number of trials per frame.
    pub t_max: usize,
    /// Engine/decoder alternations per trial.
    pub outer_iters: usize,
    pub amp: BigAmpOpts<T>,
}

impl<T: Real> Default for ReceiverOpts<T> {
    fn default() -> Self {
        ReceiverOpts {
            n_top: 10,
            p_thr: 3,
            t_max: 30,
            outer_iters: 10,
            // the decoders re-steer the engine every outer iteration
            amp: BigAmpOpts {
                max_iter: 30,
                ..BigAmpOpts::default()
            },
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ReceiverError {
    #[error(transparent)]
    Amp(#[from] AmpError),
    #[error(transparent)]
    Fec(#[from] FecError),
    #[error("observation is {got:?}, expected {expected:?}")]
    Shape { expected: (usize, usize), got: (usize, usize) },
}

/// Per-user hard decision after one outer iteration.
type Decision = Option<Packet>;

fn decode_users<T: Real>(
    out: &BigAmpOutput<T>,
    cfg: &SkpConfig,
    opts: &ReceiverOpts<T>,
    spec: &CcSpec,
    priors_g: &mut Array2<SpikeGaussianMsg<T>>,
    priors_x: &mut Array2<SymbolMsg<T>>,
) -> Result<Vec<Decision>, ReceiverError> {
    let k = priors_x.nrows();
    let l_a = cfg.l_a();
    let mut decisions = Vec::with_capacity(k);
    for j in 0..k {
        let msg = GaussianBlockMsg::new(
            cfg.m,
            l_a,
            out.g.mean.column(j).to_vec(),
            out.g.var.column(j).to_vec(),
            opts.amp.var_floor,
        )
        .map_err(|e| AmpError::Shape(e.to_string()))?;
        let (cands, synth) =
            decode_g(&msg, cfg.l_im, opts.n_top).map_err(|e| AmpError::Shape(e.to_string()))?;
        for (dst, src) in priors_g.column_mut(j).iter_mut().zip(synth) {
            *dst = src;
        }
        let xmsg = XChannelMsg {
            mean: out.x.mean.row(j).to_vec(),
            var: out.x.var.row(j).to_vec(),
        };
        let xd = decode_x(&xmsg.likelihoods(), spec, cfg.e_ref)?;
        for (dst, src) in priors_x.row_mut(j).iter_mut().zip(xd.extrinsic) {
            *dst = src;
        }
        decisions.push(cands.first().map(|c| {
            let a_bits = decode_a(&c.a, cfg).bits;
            Packet::from_parts(&a_bits, &xd.info_bits)
        }));
    }
    Ok(decisions)
}

/// One randomly initialized decoding attempt.
///
/// Returns up to `K_a` distinct packets. Engine divergence yields an empty
/// list.
pub fn decode_frame_once<T: Real>(
    y: &Array2<Cpx<T>>,
    cfg: &SkpConfig,
    opts: &ReceiverOpts<T>,
    trial_seed: u64,
) -> Result<Vec<Packet>, ReceiverError> {
    let (rows, k, l_x) = (cfg.rows(), cfg.k_active, cfg.l_x);
    if y.dim() != (rows, l_x) {
        return Err(ReceiverError::Shape {
            expected: (rows, l_x),
            got: y.dim(),
        });
    }
    let spec = CcSpec::for_mode(cfg.fec);
    let mut rng = seed::rng_from(trial_seed);
    let lambda0 = T::one() / T::from_usize_(cfg.l_im);
    let mut priors_g = Array2::from_elem((rows, k), SpikeGaussianMsg::uninformative(cfg.l_im));
    let mut priors_x = Array2::from_elem((k, l_x), SymbolMsg::uniform());
    let mut state = AmpState::random(rows, k, l_x, lambda0, &opts.amp, &mut rng);
    let n0 = T::c(cfg.n0());
    let mut last: Vec<Decision> = Vec::new();
    for _ in 0..opts.outer_iters {
        let out = match run_bigamp(y, &priors_g, &priors_x, n0, &opts.amp, &mut state) {
            Ok(out) => out,
            Err(AmpError::Diverged { .. }) => return Ok(Vec::new()),
            Err(e) => return Err(e.into()),
        };
        let decisions = decode_users(&out, cfg, opts, &spec, &mut priors_g, &mut priors_x)?;
        // two factors locked on one user: restart the later one
        let mut restarted = false;
        for j in 1..k {
            if decisions[j].is_some() && decisions[..j].contains(&decisions[j]) {
                state.reseed_factor(j, lambda0, &opts.amp, &mut rng);
                priors_g.column_mut(j).fill(SpikeGaussianMsg::uninformative(cfg.l_im));
                priors_x.row_mut(j).fill(SymbolMsg::uniform());
                restarted = true;
            }
        }
        let stable = !restarted && decisions == last;
        last = decisions;
        if stable {
            break;
        }
    }
    let mut seen = HashSet::new();
    Ok(last
        .into_iter()
        .flatten()
        .filter(|p| seen.insert(p.clone()))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PendingEntry {
    pub packet: Packet,
    pub priority: usize,
    /// Trial in which the packet first appeared.
    pub first_seen: usize,
}

/// Candidate packets collected across trials.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PendingList {
    pub entries: Vec<PendingEntry>,
}

impl PendingList {
    /// Raises the priority of known packets and inserts new ones with priority 1.
    pub fn merge(&mut self, trial: usize, packets: &[Packet]) {
        let mut seen = HashSet::new();
        for p in packets {
            if !seen.insert(p) {
                continue;
            }
            match self.entries.iter_mut().find(|e| &e.packet == p) {
                Some(e) => e.priority += 1,
                None => self.entries.push(PendingEntry {
                    packet: p.clone(),
                    priority: 1,
                    first_seen: trial,
                }),
            }
        }
    }

    pub fn confirmed(&self, p_thr: usize) -> usize {
        self.entries.iter().filter(|e| e.priority >= p_thr).count()
    }

    /// The `k` best packets: highest priority, then earliest seen, then bits.
    pub fn top(&self, k: usize) -> Vec<Packet> {
        let mut order: Vec<&PendingEntry> = self.entries.iter().collect();
        order.sort_by(|a, b| {
            b.priority
                .cmp(&a.priority)
                .then(a.first_seen.cmp(&b.first_seen))
                .then_with(|| a.packet.bits.cmp(&b.packet.bits))
        });
        order.into_iter().take(k).map(|e| e.packet.clone()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameDecode {
    /// The output list, at most `K_a` distinct packets.
    pub packets: Vec<Packet>,
    pub trials_used: usize,
    pub pending: PendingList,
}

/// Multi-trial packet decision around an arbitrary single-trial decoder.
pub fn run_trials<F>(k_active: usize, p_thr: usize, t_max: usize, mut trial: F) -> FrameDecode
where
    F: FnMut(usize) -> Vec<Packet>,
{
    let mut pending = PendingList::default();
    let mut trials_used = 0;
    for t in 0..t_max {
        trials_used = t + 1;
        let est = trial(t);
        pending.merge(t, &est);
        if pending.confirmed(p_thr) >= k_active {
            break;
        }
    }
    FrameDecode {
        packets: pending.top(k_active),
        trials_used,
        pending,
    }
}

/// Full frame decoder. Trial `t` is seeded from `derive_seed(frame_seed, [t])`.
pub fn decode_frame<T: Real>(
    y: &Array2<Cpx<T>>,
    cfg: &SkpConfig,
    opts: &ReceiverOpts<T>,
    frame_seed: u64,
) -> Result<FrameDecode, ReceiverError> {
    let mut err = None;
    let res = run_trials(cfg.k_active, opts.p_thr, opts.t_max, |t| {
        if err.is_some() {
            return Vec::new();
        }
        let trial_seed = seed::derive_seed(frame_seed, &[t as u64]);
        decode_frame_once(y, cfg, opts, trial_seed).unwrap_or_else(|e| {
            err = Some(e);
            Vec::new()
        })
    });
    match err {
        Some(e) => Err(e),
        None => Ok(res),
    }
}

/// Number of users in error: packet missing from the list, or shared with
/// another active user.
pub fn user_errors(truth: &[Packet], list: &[Packet]) -> usize {
    let found: HashSet<&Packet> = list.iter().collect();
    truth
        .iter()
        .enumerate()
        .filter(|&(j, p)| {
            !found.contains(p) || truth.iter().enumerate().any(|(i, q)| i != j && q == p)
        })
        .count()
}

/// Per-frame fraction of users in error.
pub fn evaluate_pupe(truth: &[Packet], list: &[Packet]) -> f64 {
    if truth.is_empty() {
        return 0.0;
    }
    user_errors(truth, list) as f64 / truth.len() as f64
}
