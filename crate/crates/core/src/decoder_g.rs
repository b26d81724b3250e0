//! Per-user decoding of the channel-weighted sparse factor `g_j = h_j ⊗ a_j`.
//!
//! The engine delivers a Gaussian message `CN(g_j; g_hat, nu)` for every
//! element of column `j`. Decoding enumerates the most likely supports of
//! `a_j`, refines each by alternating between the channel `h_j` and the
//! constellation values, and folds the surviving candidates back into a
//! spike-and-slab message per element.
//!
//! Layout: element `(m, l)` sits at index `m * L_a + l`, the same as the
//! rows of `G`.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};

use crate::codec::SparseVector;
use crate::constellation::{self, REF_INDEX, QPSK_ORDER};
use crate::messages::SpikeGaussianMsg;
use crate::scalar::{log_cn, log_sum_exp, normalize_log, Cpx, Real};

/// Maximum number of alternations in [`refine_candidate`].
pub const MAX_REFINE_ROUNDS: usize = 10;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DecodeGError {
    #[error("message has {got} elements, expected {expected}")]
    Length { expected: usize, got: usize },
    #[error("L_a = {l_a} is not a multiple of L_IM = {l_im}")]
    Segments { l_a: usize, l_im: usize },
}

/// Gaussian message from the observation to one column of `G`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianBlockMsg<T> {
    pub m: usize,
    pub l_a: usize,
    pub mean: Vec<Cpx<T>>,
    pub var: Vec<T>,
}

impl<T: Real> GaussianBlockMsg<T> {
    /// Variances are raised to `floor`.
    pub fn new(
        m: usize,
        l_a: usize,
        mean: Vec<Cpx<T>>,
        var: Vec<T>,
        floor: T,
    ) -> Result<Self, DecodeGError> {
        let expected = m * l_a;
        for got in [mean.len(), var.len()] {
            if got != expected {
                return Err(DecodeGError::Length { expected, got });
            }
        }
        let var = var.into_iter().map(|v| if v > floor { v } else { floor }).collect();
        Ok(GaussianBlockMsg { m, l_a, mean, var })
    }

    #[inline]
    pub fn at(&self, m: usize, l: usize) -> (Cpx<T>, T) {
        let i = m * self.l_a + l;
        (self.mean[i], self.var[i])
    }
}

/// Marginal likelihoods of every element of `a` and the per-segment
/// position probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentTable<T> {
    pub l_im: usize,
    /// `log Pr{u = l}`, normalized within each segment; length `L_a`.
    pub log_pos: Vec<T>,
    /// `log L(a_l = s)` per constellation point.
    pub log_lik: Vec<[T; QPSK_ORDER]>,
    /// `log L(a_l = 0)`.
    pub log_lik_zero: Vec<T>,
}

impl<T: Real> SegmentTable<T> {
    pub fn segments(&self) -> usize {
        self.log_pos.len() / self.l_im
    }

    pub fn log_pos_of(&self, seg: usize, u: usize) -> T {
        self.log_pos[seg * self.l_im + u]
    }
}

/// One entry of the candidate list.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate<T> {
    pub a: SparseVector,
    /// Posterior of `h_m` given the whole message and `a`.
    pub h_mean: Vec<Cpx<T>>,
    pub h_var: Vec<T>,
    /// `log p(g_hat | a)` with `h ~ CN(0, I)` integrated out.
    pub log_weight: T,
    /// Alternations run by the refinement.
    pub rounds: usize,
}

pub type CandidateList<T> = Vec<Candidate<T>>;

/// Element likelihoods with `h ~ CN(0, 1)` integrated per antenna.
pub fn element_likelihoods<T: Real>(
    msg: &GaussianBlockMsg<T>,
    l_im: usize,
) -> Result<SegmentTable<T>, DecodeGError> {
    let l_a = msg.l_a;
    if l_im == 0 || l_a % l_im != 0 {
        return Err(DecodeGError::Segments { l_a, l_im });
    }
    let zero = Cpx::new(T::zero(), T::zero());
    let pts = constellation::points::<T>();
    let mut log_lik = vec![[T::zero(); QPSK_ORDER]; l_a];
    let mut log_lik_zero = vec![T::zero(); l_a];
    for l in 0..l_a {
        for m in 0..msg.m {
            let (g, v) = msg.at(m, l);
            log_lik_zero[l] += log_cn(g, zero, v);
            for (acc, s) in log_lik[l].iter_mut().zip(pts) {
                *acc += log_cn(g, zero, v + s.norm_sqr());
            }
        }
    }
    let mut log_pos = vec![T::zero(); l_a];
    for seg in 0..l_a / l_im {
        let r = seg * l_im..(seg + 1) * l_im;
        // the product over the other positions' L(0) shares a common factor
        let raw: Vec<T> = r
            .clone()
            .map(|l| log_sum_exp(&log_lik[l]) - log_lik_zero[l])
            .collect();
        let mut p = vec![T::zero(); l_im];
        let lse = normalize_log(&raw, &mut p);
        for (dst, &x) in log_pos[r].iter_mut().zip(&raw) {
            *dst = x - lse;
        }
    }
    Ok(SegmentTable {
        l_im,
        log_pos,
        log_lik,
        log_lik_zero,
    })
}

#[derive(Debug, PartialEq)]
struct Node {
    score: f64,
    support: Vec<usize>,
    ranks: Vec<usize>,
}

impl Eq for Node {}

impl Ord for Node {
    fn cmp(&self, other: &Self) -> Ordering {
        self.score
            .total_cmp(&other.score)
            .then_with(|| other.support.cmp(&self.support))
    }
}

impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Sum of per-segment log probabilities, always accumulated in segment order.
pub fn support_log_prob<T: Real>(table: &SegmentTable<T>, support: &[usize]) -> T {
    support
        .iter()
        .enumerate()
        .fold(T::zero(), |acc, (seg, &u)| acc + table.log_pos_of(seg, u))
}

/// The `n_top` most probable supports, best first, with their log probabilities.
///
/// Ties are ordered lexicographically by support. Asking for more supports
/// than exist returns all of them.
pub fn top_supports<T: Real>(table: &SegmentTable<T>, n_top: usize) -> Vec<(Vec<usize>, T)> {
    let segs = table.segments();
    let l_im = table.l_im;
    let order: Vec<Vec<usize>> = (0..segs)
        .map(|seg| {
            let mut idx: Vec<usize> = (0..l_im).collect();
            idx.sort_by(|&a, &b| {
                table
                    .log_pos_of(seg, b)
                    .partial_cmp(&table.log_pos_of(seg, a))
                    .unwrap_or(Ordering::Equal)
                    .then(a.cmp(&b))
            });
            idx
        })
        .collect();
    let make = |ranks: Vec<usize>| {
        let support: Vec<usize> = ranks.iter().enumerate().map(|(s, &r)| order[s][r]).collect();
        Node {
            score: support_log_prob(table, &support).as_f64(),
            support,
            ranks,
        }
    };
    let mut out = Vec::with_capacity(n_top);
    let mut heap = BinaryHeap::new();
    let mut seen = HashSet::new();
    let root = vec![0; segs];
    seen.insert(root.clone());
    heap.push(make(root));
    while out.len() < n_top {
        let Some(node) = heap.pop() else { break };
        for seg in 0..segs {
            if node.ranks[seg] + 1 < l_im {
                let mut next = node.ranks.clone();
                next[seg] += 1;
                if seen.insert(next.clone()) {
                    heap.push(make(next));
                }
            }
        }
        let lp = support_log_prob(table, &node.support);
        out.push((node.support, lp));
    }
    out
}

/// Per-antenna sufficient statistics `b_m = sum_l conj(a_l) g_hat/nu` and
/// posterior precision `1 + sum_l |a_l|^2/nu` of `h_m`.
fn h_stats<T: Real>(a: &SparseVector, msg: &GaussianBlockMsg<T>) -> (Vec<Cpx<T>>, Vec<T>) {
    let pts = constellation::points::<T>();
    let mut b = vec![Cpx::new(T::zero(), T::zero()); msg.m];
    let mut prec = vec![T::one(); msg.m];
    for seg in 0..a.segments() {
        let l = a.position(seg);
        let s = pts[a.values[seg]];
        for m in 0..msg.m {
            let (g, v) = msg.at(m, l);
            b[m] += s.conj() * g / v;
            prec[m] += s.norm_sqr() / v;
        }
    }
    (b, prec)
}

fn h_posterior<T: Real>(a: &SparseVector, msg: &GaussianBlockMsg<T>) -> (Vec<Cpx<T>>, Vec<T>) {
    let (b, prec) = h_stats(a, msg);
    let mean = b.iter().zip(&prec).map(|(&b, &p)| b / p).collect();
    let var = prec.iter().map(|&p| T::one() / p).collect();
    (mean, var)
}

/// `log p(g_hat | a)` with `h_m ~ CN(0, 1)` integrated out antenna by antenna.
pub fn log_marginal<T: Real>(a: &SparseVector, msg: &GaussianBlockMsg<T>) -> T {
    let zero = Cpx::new(T::zero(), T::zero());
    let base: T = msg
        .mean
        .iter()
        .zip(&msg.var)
        .map(|(&g, &v)| log_cn(g, zero, v))
        .sum();
    let (b, prec) = h_stats(a, msg);
    base + b
        .iter()
        .zip(&prec)
        .map(|(b, &p)| b.norm_sqr() / p - p.ln())
        .sum::<T>()
}

/// Joint objective `log p(g_hat | a, h) + log p(h)` up to a constant.
pub fn map_objective<T: Real>(a: &SparseVector, h: &[Cpx<T>], msg: &GaussianBlockMsg<T>) -> T {
    let dense = a.to_dense::<T>();
    let mut acc = T::zero();
    for (m, &hm) in h.iter().enumerate() {
        acc -= hm.norm_sqr();
        for (l, &al) in dense.iter().enumerate() {
            let (g, v) = msg.at(m, l);
            acc -= (g - al * hm).norm_sqr() / v;
        }
    }
    acc
}

/// Gain of placing `s` at position `l` against leaving it zero.
fn placement_gain<T: Real>(msg: &GaussianBlockMsg<T>, h: &[Cpx<T>], l: usize, s: Cpx<T>) -> T {
    (0..msg.m)
        .map(|m| {
            let (g, v) = msg.at(m, l);
            (g.norm_sqr() - (g - s * h[m]).norm_sqr()) / v
        })
        .sum()
}

/// Best `(position, value)` in segment `seg`; segment 0 keeps the reference value.
fn best_in_segment<T: Real>(
    msg: &GaussianBlockMsg<T>,
    h: &[Cpx<T>],
    l_im: usize,
    seg: usize,
    positions: std::ops::Range<usize>,
) -> (usize, usize) {
    let pts = constellation::points::<T>();
    let values: &[usize] = if seg == 0 { &[REF_INDEX] } else { &[0, 1, 2, 3] };
    let mut best = (positions.start, values[0]);
    let mut best_gain = T::neg_infinity();
    for u in positions {
        for &v in values {
            let gain = placement_gain(msg, h, seg * l_im + u, pts[v]);
            if gain > best_gain {
                best_gain = gain;
                best = (u, v);
            }
        }
    }
    best
}

/// Initial constellation values for a given support.
///
/// The channel is first estimated from the reference block of segment 0
/// alone; each other segment then takes its most likely point at the fixed
/// position.
pub fn initial_values<T: Real>(
    support: &[usize],
    msg: &GaussianBlockMsg<T>,
    l_im: usize,
) -> SparseVector {
    let anchor = SparseVector {
        l_im,
        supports: support[..1].to_vec(),
        values: vec![REF_INDEX],
    };
    let (h, _) = h_posterior(&anchor, msg);
    let mut values = vec![REF_INDEX; support.len()];
    for seg in 1..support.len() {
        values[seg] = best_in_segment(msg, &h, l_im, seg, support[seg]..support[seg] + 1).1;
    }
    SparseVector {
        l_im,
        supports: support.to_vec(),
        values,
    }
}

/// Alternating refinement of one candidate.
///
/// Returns the refined candidate and the value of [`map_objective`] after
/// every half step.
pub fn refine_candidate<T: Real>(
    a_init: &SparseVector,
    msg: &GaussianBlockMsg<T>,
    max_rounds: usize,
) -> (Candidate<T>, Vec<T>) {
    let l_im = a_init.l_im;
    let mut a = a_init.clone();
    let mut trace = Vec::with_capacity(2 * max_rounds + 1);
    let (mut h, _) = h_posterior(&a, msg);
    trace.push(map_objective(&a, &h, msg));
    let mut rounds = 0;
    while rounds < max_rounds {
        rounds += 1;
        let mut next = a.clone();
        for seg in 0..a.segments() {
            let (u, v) = best_in_segment(msg, &h, l_im, seg, 0..l_im);
            next.supports[seg] = u;
            next.values[seg] = v;
        }
        trace.push(map_objective(&next, &h, msg));
        let changed = next != a;
        a = next;
        h = h_posterior(&a, msg).0;
        trace.push(map_objective(&a, &h, msg));
        if !changed {
            break;
        }
    }
    let (h_mean, h_var) = h_posterior(&a, msg);
    let log_weight = log_marginal(&a, msg);
    (
        Candidate {
            a,
            h_mean,
            h_var,
            log_weight,
            rounds,
        },
        trace,
    )
}

/// Folds the candidates into a spike-and-slab message for every element.
///
/// For element `(m, l)` each candidate is reweighted by its marginal
/// likelihood with the observation of that element left out, and `h_m`
/// takes the matching leave-one-out Gaussian posterior.
pub fn synthesize_message<T: Real>(
    cands: &[Candidate<T>],
    msg: &GaussianBlockMsg<T>,
) -> Vec<SpikeGaussianMsg<T>> {
    let l_im = cands.first().map_or(1, |c| c.a.l_im);
    let uninformative = SpikeGaussianMsg::uninformative(l_im);
    let mut out = vec![uninformative; msg.m * msg.l_a];
    if cands.is_empty() {
        return out;
    }
    let pts = constellation::points::<T>();
    let stats: Vec<(Vec<Cpx<T>>, Vec<T>)> = cands.iter().map(|c| h_stats(&c.a, msg)).collect();
    let term = |b: Cpx<T>, p: T| b.norm_sqr() / p - p.ln();
    // per-antenna cached terms and their totals
    let cached: Vec<Vec<T>> = stats
        .iter()
        .map(|(b, p)| b.iter().zip(p).map(|(&b, &p)| term(b, p)).collect())
        .collect();
    let totals: Vec<T> = cached.iter().map(|c| c.iter().copied().sum()).collect();
    let n = cands.len();
    let dense: Vec<Vec<Option<Cpx<T>>>> = cands
        .iter()
        .map(|c| (0..msg.l_a).map(|l| c.a.value_at(l).map(|v| pts[v])).collect())
        .collect();
    let mut lw = vec![T::zero(); n];
    let mut w = vec![T::zero(); n];
    let mut moments = vec![(Cpx::new(T::zero(), T::zero()), T::zero()); n];
    for m in 0..msg.m {
        for l in 0..msg.l_a {
            let (g, v) = msg.at(m, l);
            for k in 0..n {
                let (b, p) = (stats[k].0[m], stats[k].1[m]);
                lw[k] = totals[k];
                if let Some(s) = dense[k][l] {
                    let b_out = b - s.conj() * g / v;
                    let p_out = p - s.norm_sqr() / v;
                    lw[k] += term(b_out, p_out) - cached[k][m];
                    moments[k] = (s * b_out / p_out, s.norm_sqr() / p_out);
                }
            }
            if !log_sum_exp(&lw).is_finite() {
                continue;
            }
            normalize_log(&lw, &mut w);
            let mut lambda = T::zero();
            let mut mean = Cpx::new(T::zero(), T::zero());
            let mut second = T::zero();
            for k in 0..n {
                if dense[k][l].is_some() {
                    let (mu, var) = moments[k];
                    lambda += w[k];
                    mean += mu * w[k];
                    second += (mu.norm_sqr() + var) * w[k];
                }
            }
            out[m * msg.l_a + l] = if lambda > T::zero() {
                let mean = mean / lambda;
                let var = (second / lambda - mean.norm_sqr()).max(T::zero());
                SpikeGaussianMsg::new(lambda.min(T::one()), mean, var)
            } else {
                SpikeGaussianMsg::new(T::zero(), Cpx::new(T::zero(), T::zero()), T::one())
            };
        }
    }
    out
}

/// Full decoder for one column: ranking, initialization, refinement and
/// message synthesis. Candidates that refine to the same vector are merged.
pub fn decode_g<T: Real>(
    msg: &GaussianBlockMsg<T>,
    l_im: usize,
    n_top: usize,
) -> Result<(CandidateList<T>, Vec<SpikeGaussianMsg<T>>), DecodeGError> {
    let table = element_likelihoods(msg, l_im)?;
    let mut cands: CandidateList<T> = Vec::with_capacity(n_top);
    let mut seen = HashSet::new();
    for (support, _) in top_supports(&table, n_top) {
        let init = initial_values(&support, msg, l_im);
        let (cand, _) = refine_candidate(&init, msg, MAX_REFINE_ROUNDS);
        if cand.log_weight.is_finite() && seen.insert(cand.a.clone()) {
            cands.push(cand);
        }
    }
    cands.sort_by(|a, b| b.log_weight.partial_cmp(&a.log_weight).unwrap_or(Ordering::Equal));
    let synth = synthesize_message(&cands, msg);
    Ok((cands, synth))
}
