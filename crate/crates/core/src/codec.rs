//! SKP packet encoding: index modulation for `b_a`, FEC for `b_x`, and the
//! Kronecker assembly `v = a ⊗ x`.
//!
//! The `b_a` bits are read as a big-endian integer and expanded in a mixed
//! radix whose most-significant digits are the `I_IM` segment positions (base
//! `L_IM`) followed by the `I_IM - 1` non-reference segment values (base
//! `|S|`). The first segment always carries the reference symbol.

use num_complex::Complex;

use crate::config::SkpConfig;
use crate::constellation::{self, SymbolIndex, QPSK_ORDER, REF_INDEX};
use crate::fec::{self, FecError};
use crate::scalar::{Cpx, Real};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CodecError {
    #[error("expected {expected} bits, got {got}")]
    Length { expected: usize, got: usize },
    #[error("index word {0} is outside the codebook")]
    OutOfRange(u128),
    #[error(transparent)]
    Fec(#[from] FecError),
}

/// A `B`-bit packet, `b = [b_a; b_x]`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Packet {
    pub bits: Vec<bool>,
}

impl Packet {
    pub fn new(bits: Vec<bool>) -> Self {
        Packet { bits }
    }

    pub fn a_bits(&self, cfg: &SkpConfig) -> &[bool] {
        &self.bits[..cfg.b_a]
    }

    pub fn x_bits(&self, cfg: &SkpConfig) -> &[bool] {
        &self.bits[cfg.b_a..]
    }

    pub fn from_parts(a_bits: &[bool], x_bits: &[bool]) -> Self {
        Packet {
            bits: a_bits.iter().chain(x_bits).copied().collect(),
        }
    }

    pub fn random<R: rand::Rng + ?Sized>(b: usize, rng: &mut R) -> Self {
        Packet {
            bits: (0..b).map(|_| rng.random::<bool>()).collect(),
        }
    }

    /// Hex rendering, most significant bit first.
    pub fn to_hex(&self) -> String {
        self.bits
            .chunks(4)
            .map(|c| {
                let v = c.iter().fold(0u32, |acc, &b| (acc << 1) | u32::from(b)) << (4 - c.len());
                char::from_digit(v, 16).unwrap()
            })
            .collect()
    }
}

/// Index-modulated vector `a`: one nonzero per length-`L_IM` segment.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SparseVector {
    pub l_im: usize,
    /// Zero-based position of the nonzero inside each segment.
    pub supports: Vec<usize>,
    /// Constellation index of each segment's nonzero; `values[0] == REF_INDEX`.
    pub values: Vec<SymbolIndex>,
}

impl SparseVector {
    pub fn segments(&self) -> usize {
        self.supports.len()
    }

    pub fn len(&self) -> usize {
        self.l_im * self.supports.len()
    }

    pub fn is_empty(&self) -> bool {
        self.supports.is_empty()
    }

    /// Position in the length-`L_a` vector of segment `seg`'s nonzero.
    #[inline]
    pub fn position(&self, seg: usize) -> usize {
        seg * self.l_im + self.supports[seg]
    }

    /// Constellation index at dense position `l`, `None` for zeros.
    pub fn value_at(&self, l: usize) -> Option<SymbolIndex> {
        let seg = l / self.l_im;
        (self.supports[seg] == l % self.l_im).then(|| self.values[seg])
    }

    pub fn to_dense<T: Real>(&self) -> Vec<Cpx<T>> {
        let mut out = vec![Complex::new(T::zero(), T::zero()); self.len()];
        for seg in 0..self.segments() {
            out[self.position(seg)] = constellation::point(self.values[seg]);
        }
        out
    }

    /// Checks the segment structure against `cfg`.
    pub fn is_valid(&self, cfg: &SkpConfig) -> bool {
        self.l_im == cfg.l_im
            && self.supports.len() == cfg.i_im
            && self.values.len() == cfg.i_im
            && self.supports.iter().all(|&u| u < cfg.l_im)
            && self.values.iter().all(|&v| v < QPSK_ORDER)
            && self.values.first() == Some(&REF_INDEX)
    }
}

fn digit_bases(cfg: &SkpConfig) -> impl Iterator<Item = u128> {
    std::iter::repeat_n(cfg.l_im as u128, cfg.i_im)
        .chain(std::iter::repeat_n(QPSK_ORDER as u128, cfg.i_im - 1))
}

fn bits_to_int(bits: &[bool]) -> u128 {
    bits.iter().fold(0u128, |acc, &b| (acc << 1) | u128::from(b))
}

fn int_to_bits(mut n: u128, len: usize) -> Vec<bool> {
    let mut out = vec![false; len];
    for slot in out.iter_mut().rev() {
        *slot = n & 1 == 1;
        n >>= 1;
    }
    out
}

/// Maps the `B_a` index bits onto a sparse vector.
pub fn encode_a(b_a: &[bool], cfg: &SkpConfig) -> Result<SparseVector, CodecError> {
    if b_a.len() != cfg.b_a {
        return Err(CodecError::Length {
            expected: cfg.b_a,
            got: b_a.len(),
        });
    }
    let mut n = bits_to_int(b_a);
    let bases: Vec<u128> = digit_bases(cfg).collect();
    let mut digits = vec![0usize; bases.len()];
    // least-significant digit last
    for (d, &base) in digits.iter_mut().zip(&bases).rev() {
        *d = (n % base) as usize;
        n /= base;
    }
    if n != 0 {
        return Err(CodecError::OutOfRange(bits_to_int(b_a)));
    }
    let supports = digits[..cfg.i_im].to_vec();
    let values = std::iter::once(REF_INDEX)
        .chain(digits[cfg.i_im..].iter().copied())
        .collect();
    Ok(SparseVector {
        l_im: cfg.l_im,
        supports,
        values,
    })
}

/// Result of inverting the index mapping.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexDecode {
    pub bits: Vec<bool>,
    /// Set when the vector lies outside the image of [`encode_a`] and the
    /// index word was clamped to `2^B_a - 1`.
    pub clamped: bool,
}

/// Inverse of [`encode_a`]. Total: words past the codebook are clamped and flagged.
pub fn decode_a(a: &SparseVector, cfg: &SkpConfig) -> IndexDecode {
    let digits = a
        .supports
        .iter()
        .copied()
        .chain(a.values.iter().skip(1).copied());
    let mut n: u128 = 0;
    let mut overflow = false;
    for (d, base) in digits.zip(digit_bases(cfg)) {
        match n.checked_mul(base).and_then(|x| x.checked_add(d as u128)) {
            Some(v) => n = v,
            None => overflow = true,
        }
    }
    let limit = if cfg.b_a >= 128 { u128::MAX } else { (1u128 << cfg.b_a) - 1 };
    let clamped = overflow || n > limit;
    IndexDecode {
        bits: int_to_bits(if clamped { limit } else { n }, cfg.b_a),
        clamped,
    }
}

/// `v = a ⊗ x`: `v[l * L_x + k] = a[l] * x[k]`.
pub fn assemble_v<T: Real>(a: &[Cpx<T>], x: &[Cpx<T>]) -> Vec<Cpx<T>> {
    a.iter()
        .flat_map(|&al| x.iter().map(move |&xk| al * xk))
        .collect()
}

/// Both factors of one transmitted codeword.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Codeword {
    pub a: SparseVector,
    /// Length-`L_x` symbol labels; the first `e_ref` are the reference.
    pub x: Vec<SymbolIndex>,
}

impl Codeword {
    pub fn x_symbols<T: Real>(&self) -> Vec<Cpx<T>> {
        self.x.iter().map(|&i| constellation::point(i)).collect()
    }

    pub fn v<T: Real>(&self) -> Vec<Cpx<T>> {
        assemble_v(&self.a.to_dense(), &self.x_symbols())
    }
}

pub fn encode_packet(packet: &Packet, cfg: &SkpConfig) -> Result<Codeword, CodecError> {
    if packet.bits.len() != cfg.b {
        return Err(CodecError::Length {
            expected: cfg.b,
            got: packet.bits.len(),
        });
    }
    let a = encode_a(packet.a_bits(cfg), cfg)?;
    let spec = fec::CcSpec::for_mode(cfg.fec);
    let coded = fec::cc_encode(packet.x_bits(cfg), &spec)?;
    debug_assert_eq!(coded.len(), cfg.coded_symbols());
    let x = std::iter::repeat_n(REF_INDEX, cfg.e_ref).chain(coded).collect();
    Ok(Codeword { a, x })
}
