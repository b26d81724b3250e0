//! Per-user decoding of the symbol row `x_j`.
//!
//! The first `e_ref` symbols all carry the same reference point. While
//! iterating their common value is treated as unknown, so each reference
//! position receives the product of the other reference likelihoods. The
//! rotation that best explains the reference block is used to bring the
//! coded part into the codeword frame before BCJR; extrinsic messages are
//! rotated back so the engine keeps its own phase.

use crate::constellation::{self, REF_INDEX, QPSK_ORDER};
use crate::fec::{bcjr_decode, CcSpec, FecError};
use crate::messages::SymbolMsg;
use crate::scalar::{Cpx, Real};

/// Gaussian messages from the observation to one row of `X`.
#[derive(Debug, Clone, PartialEq)]
pub struct XChannelMsg<T> {
    pub mean: Vec<Cpx<T>>,
    pub var: Vec<T>,
}

impl<T: Real> XChannelMsg<T> {
    /// `Lambda(s) ∝ CN(x_hat; s, v_x)`, normalized per symbol.
    pub fn likelihoods(&self) -> Vec<SymbolMsg<T>> {
        self.mean
            .iter()
            .zip(&self.var)
            .map(|(&m, &v)| SymbolMsg::from_gaussian(m, v))
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct XDecode<T> {
    /// Extrinsic message for every symbol of the row, in the engine's frame.
    pub extrinsic: Vec<SymbolMsg<T>>,
    /// Hard information bits in the codeword frame.
    pub info_bits: Vec<bool>,
    /// Quarter turns separating the engine's frame from the codeword frame.
    pub rotation: usize,
}

/// Extrinsic of each reference position: the normalized product of the others.
pub fn combine_reference<T: Real>(lik: &[SymbolMsg<T>]) -> Vec<SymbolMsg<T>> {
    let logs: Vec<[T; QPSK_ORDER]> = lik
        .iter()
        .map(|m| m.probs.map(|p| p.max(T::min_positive_value()).ln()))
        .collect();
    let total = logs.iter().fold([T::zero(); QPSK_ORDER], |mut acc, l| {
        for (a, &x) in acc.iter_mut().zip(l) {
            *a += x;
        }
        acc
    });
    logs.iter()
        .map(|own| {
            let mut out = total;
            for (o, &x) in out.iter_mut().zip(own) {
                *o -= x;
            }
            SymbolMsg::from_log(out)
        })
        .collect()
}

/// Rotation `r` maximizing `prod_l Lambda_l(j^r s_ref)`; smallest `r` on ties.
pub fn reference_rotation<T: Real>(reference: &[SymbolMsg<T>]) -> usize {
    let score = |r: usize| -> T {
        let s = constellation::rotate(REF_INDEX, r);
        reference
            .iter()
            .map(|m| m.probs[s].max(T::min_positive_value()).ln())
            .sum()
    };
    let mut best = 0;
    let mut best_score = score(0);
    for r in 1..QPSK_ORDER {
        let sc = score(r);
        if sc > best_score {
            best = r;
            best_score = sc;
        }
    }
    best
}

/// Decodes one row from its per-symbol likelihoods.
pub fn decode_x<T: Real>(
    lik: &[SymbolMsg<T>],
    spec: &CcSpec,
    e_ref: usize,
) -> Result<XDecode<T>, FecError> {
    let (reference, coded) = lik.split_at(e_ref.min(lik.len()));
    let rotation = reference_rotation(reference);
    let back = (QPSK_ORDER - rotation) % QPSK_ORDER;
    // likelihood of the codeword-frame symbol s is Lambda(j^r s)
    let derotated: Vec<SymbolMsg<T>> = coded.iter().map(|m| m.rotated(back)).collect();
    let out = bcjr_decode(&derotated, spec)?;
    let mut extrinsic = combine_reference(reference);
    extrinsic.extend(out.extrinsic.iter().map(|m| m.rotated(rotation)));
    Ok(XDecode {
        extrinsic,
        info_bits: out.hard_bits,
        rotation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fec::cc_encode;
    use crate::FecMode;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn close(a: &SymbolMsg<f64>, b: &SymbolMsg<f64>, tol: f64) -> bool {
        a.probs.iter().zip(&b.probs).all(|(x, y)| (x - y).abs() < tol)
    }

    #[test]
    fn single_reference_is_uniform() {
        let m = SymbolMsg::from_weights([0.7, 0.1, 0.1, 0.1]);
        let out = combine_reference(&[m]);
        assert!(close(&out[0], &SymbolMsg::uniform(), 1e-15));
    }

    #[test]
    fn two_references_swap() {
        let m = SymbolMsg::from_weights([0.7, 0.1, 0.1, 0.1]);
        let out = combine_reference(&[m, m]);
        assert!(close(&out[0], &m, 1e-12));
        assert!(close(&out[1], &m, 1e-12));
    }

    #[test]
    fn seven_references_take_sixfold_product() {
        let m = SymbolMsg::from_weights([0.9, 0.05, 0.03, 0.02]);
        let out = combine_reference(&[m; 7]);
        let expect = SymbolMsg::from_weights(m.probs.map(|p: f64| p.powi(6)));
        for o in &out {
            assert!(close(o, &expect, 1e-12));
            assert_eq!(o.argmax(), 0);
        }
    }

    fn noiseless_row(mode: FecMode, e_ref: usize, n_info: usize, rng: &mut ChaCha8Rng) -> (Vec<bool>, Vec<usize>) {
        let spec = CcSpec::for_mode(mode);
        let bits: Vec<bool> = (0..n_info).map(|_| rng.random()).collect();
        let syms = std::iter::repeat_n(REF_INDEX, e_ref)
            .chain(cc_encode(&bits, &spec).unwrap())
            .collect();
        (bits, syms)
    }

    fn observe(syms: &[usize], turns: usize, var: f64) -> Vec<SymbolMsg<f64>> {
        let rot = Cpx::new(0.0, 1.0).powu(turns as u32);
        syms.iter()
            .map(|&s| SymbolMsg::from_gaussian(constellation::point::<f64>(s) * rot, var))
            .collect()
    }

    #[test]
    fn noiseless_row_decodes_in_every_frame() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for (mode, e_ref, n_info) in [(FecMode::Rate1_2, 7, 73), (FecMode::Rate3_4, 5, 78), (FecMode::Uncoded, 1, 80)] {
            let (bits, syms) = noiseless_row(mode, e_ref, n_info, &mut rng);
            for turns in 0..4 {
                let out = decode_x(&observe(&syms, turns, 0.05), &CcSpec::for_mode(mode), e_ref).unwrap();
                assert_eq!(out.rotation, turns);
                assert_eq!(out.info_bits, bits, "{mode:?} turns {turns}");
            }
        }
    }

    #[test]
    fn rotation_permutes_extrinsics() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (_, syms) = noiseless_row(FecMode::Rate1_2, 7, 73, &mut rng);
        let spec = CcSpec::for_mode(FecMode::Rate1_2);
        let base = decode_x(&observe(&syms, 0, 1.0), &spec, 7).unwrap();
        let turned = decode_x(&observe(&syms, 3, 1.0), &spec, 7).unwrap();
        assert_eq!(base.info_bits, turned.info_bits);
        for (a, b) in base.extrinsic.iter().zip(&turned.extrinsic) {
            assert!(close(&a.rotated(3), b, 1e-9));
        }
    }

    #[test]
    fn uncoded_extrinsic_is_uniform_past_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (_, syms) = noiseless_row(FecMode::Uncoded, 1, 80, &mut rng);
        let out = decode_x(&observe(&syms, 1, 0.3), &CcSpec::for_mode(FecMode::Uncoded), 1).unwrap();
        assert_eq!(out.extrinsic.len(), 41);
        assert!(out.extrinsic.iter().all(|m| close(m, &SymbolMsg::uniform(), 1e-15)));
    }

    #[test]
    fn channel_message_likelihoods_are_normalized() {
        let msg = XChannelMsg {
            mean: vec![Cpx::new(0.3, -2.0), Cpx::new(40.0, 40.0)],
            var: vec![0.1, 1e-6],
        };
        assert!(msg.likelihoods().iter().all(|m| m.is_normalized(1e-12)));
    }
}
