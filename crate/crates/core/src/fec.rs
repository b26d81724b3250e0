//! Tail-biting convolutional code `(23, 33)_8` with puncturing, Gray QPSK
//! mapping, and a soft-in/soft-out BCJR decoder.
//!
//! The decoder is exact for the tail-biting trellis: the forward and backward
//! recursions are run jointly for all 16 possible start states (which must
//! equal the end state), so posteriors coincide with brute-force summation
//! over the codebook. Recursions are in the probability domain with a common
//! per-step normalization shared across start states.

use crate::config::FecMode;
use crate::constellation::{self, SymbolIndex, QPSK_ORDER};
use crate::messages::SymbolMsg;
use crate::scalar::Real;

/// Encoder memory (constraint length 5).
pub const MEMORY: usize = 4;
pub const NUM_STATES: usize = 1 << MEMORY;
/// Generator polynomials in octal.
pub const GENERATORS: [u32; 2] = [0o23, 0o33];
/// Bound on every LLR entering or leaving the decoder.
pub const LLR_CLAMP: f64 = 30.0;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FecError {
    #[error("block of {got} information bits is invalid: {reason}")]
    Length { got: usize, reason: &'static str },
    #[error("symbol prior {index} is not a normalized distribution")]
    NotNormalized { index: usize },
}

/// Code description: generators, puncturing period and mode.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CcSpec {
    pub generators: [u32; 2],
    /// `pattern[t % period][k]` keeps output stream `k` at step `t`.
    pub puncture: Vec<[bool; 2]>,
    pub mode: FecMode,
}

impl CcSpec {
    pub fn for_mode(mode: FecMode) -> Self {
        let puncture = match mode {
            FecMode::Rate1_2 | FecMode::Uncoded => vec![[true, true]],
            // [11, 10, 01] is catastrophic for (23, 33); this is the only
            // period-3 family that keeps the punctured code injective.
            FecMode::Rate3_4 => vec![[true, true], [true, false], [true, false]],
        };
        CcSpec {
            generators: GENERATORS,
            puncture,
            mode,
        }
    }

    fn period(&self) -> usize {
        self.puncture.len()
    }

    /// Information bits carried by `symbols` coded QPSK symbols.
    pub fn info_bits(&self, symbols: usize) -> Option<usize> {
        self.mode.info_bits(2 * symbols)
    }

    /// `(step, stream)` of every transmitted mother-code bit, in channel order.
    pub fn surviving(&self, n_info: usize) -> Vec<(usize, usize)> {
        (0..n_info)
            .flat_map(|t| (0..2).map(move |k| (t, k)))
            .filter(|&(t, k)| self.puncture[t % self.period()][k])
            .collect()
    }

    fn check_len(&self, n_info: usize) -> Result<(), FecError> {
        if self.mode == FecMode::Uncoded {
            if n_info % 2 != 0 {
                return Err(FecError::Length {
                    got: n_info,
                    reason: "uncoded blocks need an even bit count",
                });
            }
            return Ok(());
        }
        if n_info < MEMORY {
            return Err(FecError::Length {
                got: n_info,
                reason: "shorter than the encoder memory",
            });
        }
        if n_info % self.period() != 0 {
            return Err(FecError::Length {
                got: n_info,
                reason: "not a multiple of the puncturing period",
            });
        }
        if self.surviving(n_info).len() % 2 != 0 {
            return Err(FecError::Length {
                got: n_info,
                reason: "odd number of surviving coded bits",
            });
        }
        Ok(())
    }
}

#[inline]
fn parity(x: u32) -> bool {
    x.count_ones() & 1 == 1
}

/// Single trellis branch: `(next_state, [c0, c1])`.
#[inline]
pub fn branch(gens: [u32; 2], state: usize, input: bool) -> (usize, [bool; 2]) {
    let reg = (u32::from(input) << MEMORY) | state as u32;
    ((reg >> 1) as usize, [parity(reg & gens[0]), parity(reg & gens[1])])
}

/// Tail-biting start state: the register contents after the last `MEMORY` bits.
pub fn tail_biting_state(bits: &[bool]) -> usize {
    let n = bits.len();
    (0..MEMORY).fold(0usize, |s, i| s | (usize::from(bits[n - 1 - i]) << (MEMORY - 1 - i)))
}

/// Unpunctured rate-1/2 output and the start (= end) state.
pub fn encode_mother(bits: &[bool], gens: [u32; 2]) -> (Vec<[bool; 2]>, usize) {
    let start = tail_biting_state(bits);
    let mut state = start;
    let out = bits
        .iter()
        .map(|&u| {
            let (next, c) = branch(gens, state, u);
            state = next;
            c
        })
        .collect();
    debug_assert_eq!(state, start);
    (out, start)
}

fn pairs_to_symbols(bits: &[bool]) -> Vec<SymbolIndex> {
    bits.chunks_exact(2)
        .map(|p| constellation::bits_to_index(p[0], p[1]))
        .collect()
}

/// Encodes `b_x` into `L_x - e_ref` Gray-mapped QPSK labels.
pub fn cc_encode(bits: &[bool], spec: &CcSpec) -> Result<Vec<SymbolIndex>, FecError> {
    spec.check_len(bits.len())?;
    if spec.mode == FecMode::Uncoded {
        return Ok(pairs_to_symbols(bits));
    }
    let (mother, _) = encode_mother(bits, spec.generators);
    let kept: Vec<bool> = spec
        .surviving(bits.len())
        .into_iter()
        .map(|(t, k)| mother[t][k])
        .collect();
    Ok(pairs_to_symbols(&kept))
}

/// Decoder output.
#[derive(Debug, Clone)]
pub struct BcjrOutput<T> {
    /// Extrinsic distribution of every coded symbol (excludes its own prior).
    pub extrinsic: Vec<SymbolMsg<T>>,
    /// A-posteriori LLR `ln P(u=0)/P(u=1)` per information bit.
    pub info_llr: Vec<T>,
    /// Extrinsic LLR per transmitted coded bit, in channel order.
    pub coded_extrinsic_llr: Vec<T>,
    pub hard_bits: Vec<bool>,
}

fn clamp_llr<T: Real>(l: T) -> T {
    let c = T::c(LLR_CLAMP);
    if l.is_nan() {
        T::zero()
    } else {
        l.max(-c).min(c)
    }
}

fn llr_of<T: Real>(p0: T, p1: T) -> T {
    if p0 <= T::zero() && p1 <= T::zero() {
        return T::zero();
    }
    clamp_llr(p0.ln() - p1.ln())
}

/// Bit LLRs `(b1, b0)` of a symbol distribution under the Gray map.
pub fn symbol_bit_llrs<T: Real>(msg: &SymbolMsg<T>) -> [T; 2] {
    let p = &msg.probs;
    [llr_of(p[0] + p[1], p[2] + p[3]), llr_of(p[0] + p[2], p[1] + p[3])]
}

type StateGrid<T> = [[T; NUM_STATES]; NUM_STATES];

struct Trellis {
    next: [[usize; 2]; NUM_STATES],
    out: [[[bool; 2]; 2]; NUM_STATES],
}

impl Trellis {
    fn new(gens: [u32; 2]) -> Self {
        let mut next = [[0; 2]; NUM_STATES];
        let mut out = [[[false; 2]; 2]; NUM_STATES];
        for s in 0..NUM_STATES {
            for u in 0..2 {
                let (n, c) = branch(gens, s, u == 1);
                next[s][u] = n;
                out[s][u] = c;
            }
        }
        Trellis { next, out }
    }
}

fn normalize_grid<T: Real>(g: &mut StateGrid<T>) {
    let s: T = g.iter().flat_map(|r| r.iter()).copied().sum();
    if s > T::zero() && s.is_finite() {
        let inv = T::one() / s;
        g.iter_mut().flat_map(|r| r.iter_mut()).for_each(|x| *x *= inv);
    }
}

/// Soft-in/soft-out decoding of one codeword.
///
/// `priors` are the channel distributions of the `L_x - e_ref` coded
/// symbols. They enter the trellis as Gray bit LLRs, which is lossless when
/// the distributions come from a Gaussian observation of a QPSK point.
pub fn bcjr_decode<T: Real>(
    priors: &[SymbolMsg<T>],
    spec: &CcSpec,
) -> Result<BcjrOutput<T>, FecError> {
    for (index, p) in priors.iter().enumerate() {
        if !p.is_normalized(T::c(1e-6)) {
            return Err(FecError::NotNormalized { index });
        }
    }
    let n_info = spec.info_bits(priors.len()).ok_or(FecError::Length {
        got: 2 * priors.len(),
        reason: "coded length incompatible with the code rate",
    })?;
    spec.check_len(n_info)?;

    if spec.mode == FecMode::Uncoded {
        let hard_bits = priors
            .iter()
            .flat_map(|p| {
                let (b1, b0) = constellation::index_to_bits(p.argmax());
                [b1, b0]
            })
            .collect();
        let info_llr = priors.iter().flat_map(symbol_bit_llrs).collect();
        return Ok(BcjrOutput {
            extrinsic: vec![SymbolMsg::uniform(); priors.len()],
            info_llr,
            coded_extrinsic_llr: vec![T::zero(); 2 * priors.len()],
            hard_bits,
        });
    }

    let trellis = Trellis::new(spec.generators);
    let surviving = spec.surviving(n_info);
    // channel LLR per mother bit, zero where punctured
    let mut llr = vec![[T::zero(); 2]; n_info];
    for (j, &(t, k)) in surviving.iter().enumerate() {
        let sym = j / 2;
        let bits = symbol_bit_llrs(&priors[sym]);
        llr[t][k] = bits[j % 2];
    }
    let half = T::c(0.5);
    let bit_factor = |t: usize, k: usize, c: bool| -> T {
        let l = llr[t][k] * half;
        if c {
            (-l).exp()
        } else {
            l.exp()
        }
    };
    // gamma[t][u-out pattern index]: weight of a branch emitting (c0, c1)
    let gamma: Vec<[T; 4]> = (0..n_info)
        .map(|t| {
            let mut g = [T::zero(); 4];
            for (ci, slot) in g.iter_mut().enumerate() {
                *slot = bit_factor(t, 0, ci & 2 != 0) * bit_factor(t, 1, ci & 1 != 0);
            }
            g
        })
        .collect();
    let code_idx = |c: [bool; 2]| (usize::from(c[0]) << 1) | usize::from(c[1]);

    // alpha[t][s0][s], beta[t][s0][s]
    let zero_grid = [[T::zero(); NUM_STATES]; NUM_STATES];
    let mut alpha = vec![zero_grid; n_info + 1];
    let mut beta = vec![zero_grid; n_info + 1];
    for s0 in 0..NUM_STATES {
        alpha[0][s0][s0] = T::one();
        beta[n_info][s0][s0] = T::one();
    }
    normalize_grid(&mut alpha[0]);
    normalize_grid(&mut beta[n_info]);
    for t in 0..n_info {
        let mut nxt = zero_grid;
        for s0 in 0..NUM_STATES {
            for s in 0..NUM_STATES {
                let a = alpha[t][s0][s];
                if a == T::zero() {
                    continue;
                }
                for u in 0..2 {
                    nxt[s0][trellis.next[s][u]] += a * gamma[t][code_idx(trellis.out[s][u])];
                }
            }
        }
        normalize_grid(&mut nxt);
        alpha[t + 1] = nxt;
    }
    for t in (0..n_info).rev() {
        let mut cur = zero_grid;
        for s0 in 0..NUM_STATES {
            for s in 0..NUM_STATES {
                let mut acc = T::zero();
                for u in 0..2 {
                    acc += gamma[t][code_idx(trellis.out[s][u])] * beta[t + 1][s0][trellis.next[s][u]];
                }
                cur[s0][s] = acc;
            }
        }
        normalize_grid(&mut cur);
        beta[t] = cur;
    }

    // information-bit APPs and coded-bit extrinsics
    let mut info_llr = Vec::with_capacity(n_info);
    let mut coded_ext = vec![[T::zero(); 2]; n_info];
    for t in 0..n_info {
        let mut pu = [T::zero(); 2];
        // ext[k][c]: sum with bit (t,k)'s own channel factor removed
        let mut ext = [[T::zero(); 2]; 2];
        for s0 in 0..NUM_STATES {
            for s in 0..NUM_STATES {
                let a = alpha[t][s0][s];
                if a == T::zero() {
                    continue;
                }
                for u in 0..2 {
                    let c = trellis.out[s][u];
                    let ab = a * beta[t + 1][s0][trellis.next[s][u]];
                    pu[u] += ab * gamma[t][code_idx(c)];
                    ext[0][usize::from(c[0])] += ab * bit_factor(t, 1, c[1]);
                    ext[1][usize::from(c[1])] += ab * bit_factor(t, 0, c[0]);
                }
            }
        }
        info_llr.push(llr_of(pu[0], pu[1]));
        for k in 0..2 {
            coded_ext[t][k] = llr_of(ext[k][0], ext[k][1]);
        }
    }
    let hard_bits = info_llr.iter().map(|&l| l < T::zero()).collect();
    let coded_extrinsic_llr = surviving.iter().map(|&(t, k)| coded_ext[t][k]).collect();

    // symbol-level extrinsics: both bits of the symbol are pinned and their
    // channel factors dropped; other bits on the spanned steps keep theirs.
    let mut extrinsic = Vec::with_capacity(priors.len());
    for pair in surviving.chunks_exact(2) {
        let (t_first, t_last) = (pair[0].0, pair[1].0);
        let mut w = [T::zero(); QPSK_ORDER];
        for (v, wv) in w.iter_mut().enumerate() {
            let (b1, b0) = constellation::index_to_bits(v);
            let pinned = |t: usize, k: usize| -> Option<bool> {
                if (t, k) == pair[0] {
                    Some(b1)
                } else if (t, k) == pair[1] {
                    Some(b0)
                } else {
                    None
                }
            };
            let mut cur = alpha[t_first];
            for t in t_first..=t_last {
                let mut nxt = zero_grid;
                for s0 in 0..NUM_STATES {
                    for s in 0..NUM_STATES {
                        let a = cur[s0][s];
                        if a == T::zero() {
                            continue;
                        }
                        for u in 0..2 {
                            let c = trellis.out[s][u];
                            let mut f = a;
                            for k in 0..2 {
                                match pinned(t, k) {
                                    Some(b) if b != c[k] => f = T::zero(),
                                    Some(_) => {}
                                    None => f *= bit_factor(t, k, c[k]),
                                }
                            }
                            nxt[s0][trellis.next[s][u]] += f;
                        }
                    }
                }
                cur = nxt;
            }
            let mut acc = T::zero();
            for s0 in 0..NUM_STATES {
                for s in 0..NUM_STATES {
                    acc += cur[s0][s] * beta[t_last + 1][s0][s];
                }
            }
            *wv = acc;
        }
        extrinsic.push(SymbolMsg::from_weights(w));
    }
    Ok(BcjrOutput {
        extrinsic,
        info_llr,
        coded_extrinsic_llr,
        hard_bits,
    })
}
