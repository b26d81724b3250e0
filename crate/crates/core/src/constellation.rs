//! The pi/4-QPSK alphabet with its Gray labelling.
//!
//! Points are indexed by their bit label `i = 2*b1 + b0`, mapped to
//! `((1 - 2*b1) / sqrt2, (1 - 2*b0) / sqrt2)`: the first bit rides the real
//! axis, the second bit the imaginary axis.

use crate::scalar::{Cpx, Real};

/// Number of constellation points.
pub const QPSK_ORDER: usize = 4;

/// Index of the reference symbol shared by the IM and FEC references.
pub const REF_INDEX: usize = 0;

/// A constellation symbol, stored as its label index.
pub type SymbolIndex = usize;

pub fn point<T: Real>(i: SymbolIndex) -> Cpx<T> {
    let h = T::FRAC_1_SQRT_2();
    let b1 = (i >> 1) & 1;
    let b0 = i & 1;
    let re = if b1 == 0 { h } else { -h };
    let im = if b0 == 0 { h } else { -h };
    Cpx::new(re, im)
}

pub fn points<T: Real>() -> [Cpx<T>; QPSK_ORDER] {
    [point(0), point(1), point(2), point(3)]
}

/// Gray label of a bit pair `(b1, b0)`.
#[inline]
pub fn bits_to_index(b1: bool, b0: bool) -> SymbolIndex {
    (usize::from(b1) << 1) | usize::from(b0)
}

#[inline]
pub fn index_to_bits(i: SymbolIndex) -> (bool, bool) {
    ((i >> 1) & 1 == 1, i & 1 == 1)
}

/// Index of `point(i) * j^quarter_turns`.
pub fn rotate(i: SymbolIndex, quarter_turns: usize) -> SymbolIndex {
    // multiplying by j maps (re, im) -> (-im, re)
    let (mut b1, mut b0) = index_to_bits(i);
    for _ in 0..quarter_turns % 4 {
        let (nb1, nb0) = (!b0, b1);
        b1 = nb1;
        b0 = nb0;
    }
    bits_to_index(b1, b0)
}

/// Nearest constellation point (ties go to the smaller index).
pub fn slice<T: Real>(z: Cpx<T>) -> SymbolIndex {
    let mut best = 0;
    let mut best_d = T::infinity();
    for i in 0..QPSK_ORDER {
        let d = (z - point::<T>(i)).norm_sqr();
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best
}
