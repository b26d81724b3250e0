//! Message types exchanged between the factorization engine and the decoders.

use crate::constellation::{self, SymbolIndex, QPSK_ORDER};
use crate::scalar::{log_cn, Cpx, Real};

/// Discrete distribution over the constellation for one entry of `X`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SymbolMsg<T> {
    pub probs: [T; QPSK_ORDER],
}

impl<T: Real> SymbolMsg<T> {
    pub fn uniform() -> Self {
        SymbolMsg {
            probs: [T::c(1.0 / QPSK_ORDER as f64); QPSK_ORDER],
        }
    }

    pub fn point_mass(i: SymbolIndex) -> Self {
        let mut probs = [T::zero(); QPSK_ORDER];
        probs[i] = T::one();
        SymbolMsg { probs }
    }

    /// Normalizes unnormalized log weights. All `-inf` yields the uniform message.
    pub fn from_log(logs: [T; QPSK_ORDER]) -> Self {
        let max = logs.iter().copied().fold(T::neg_infinity(), T::max);
        if !max.is_finite() {
            return Self::uniform();
        }
        Self::from_weights(logs.map(|l| (l - max).exp()))
    }

    pub fn from_weights(w: [T; QPSK_ORDER]) -> Self {
        let s: T = w.iter().copied().sum();
        if !(s > T::zero()) || !s.is_finite() {
            return Self::uniform();
        }
        SymbolMsg { probs: w.map(|x| x / s) }
    }

    /// Likelihood of each point given a Gaussian observation `CN(x_hat; s, var)`.
    pub fn from_gaussian(x_hat: Cpx<T>, var: T) -> Self {
        let pts = constellation::points::<T>();
        Self::from_log(pts.map(|s| log_cn(x_hat, s, var)))
    }

    pub fn is_normalized(&self, tol: T) -> bool {
        self.probs.iter().all(|&p| p >= T::zero() && p.is_finite())
            && (self.probs.iter().copied().sum::<T>() - T::one()).abs() <= tol
    }

    /// Most probable label, smallest index on ties.
    pub fn argmax(&self) -> SymbolIndex {
        let mut best = 0;
        for i in 1..QPSK_ORDER {
            if self.probs[i] > self.probs[best] {
                best = i;
            }
        }
        best
    }

    /// Message for the variable `j^r * x`: mass at `i` moves to `rotate(i, r)`.
    pub fn rotated(&self, quarter_turns: usize) -> Self {
        let mut probs = [T::zero(); QPSK_ORDER];
        for (i, &p) in self.probs.iter().enumerate() {
            probs[constellation::rotate(i, quarter_turns)] = p;
        }
        SymbolMsg { probs }
    }

    pub fn mean(&self) -> Cpx<T> {
        let pts = constellation::points::<T>();
        self.probs
            .iter()
            .zip(pts)
            .fold(Cpx::new(T::zero(), T::zero()), |acc, (&p, s)| acc + s * p)
    }
}

/// Spike-and-slab message `(1 - lambda) delta(g) + lambda CN(g; mean, var)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpikeGaussianMsg<T> {
    pub lambda: T,
    pub mean: Cpx<T>,
    pub var: T,
}

impl<T: Real> SpikeGaussianMsg<T> {
    pub fn new(lambda: T, mean: Cpx<T>, var: T) -> Self {
        SpikeGaussianMsg { lambda, mean, var }
    }

    /// The uninformative prior used before any decoder feedback.
    pub fn uninformative(l_im: usize) -> Self {
        SpikeGaussianMsg {
            lambda: T::one() / T::from_usize_(l_im),
            mean: Cpx::new(T::zero(), T::zero()),
            var: T::one(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn far_observation_stays_normalized() {
        // engine output seen on a diverging 0 dB single-antenna frame
        let m = SymbolMsg::from_gaussian(Cpx::new(-98_539_004_279.584_17, 323_671_903_849.811_4), 1.0e12);
        assert!(m.is_normalized(1e-12), "{:?}", m.probs);
        assert!(m.probs[2] > m.probs[0] && m.probs[0] > m.probs[3] && m.probs[3] > m.probs[1]);
    }

    #[test]
    fn non_finite_logs_give_uniform() {
        let u = SymbolMsg::<f64>::uniform();
        assert_eq!(SymbolMsg::from_log([f64::NEG_INFINITY; 4]), u);
        assert_eq!(SymbolMsg::from_log([f64::NAN, 0.0, 0.0, 0.0]), u);
    }
}
