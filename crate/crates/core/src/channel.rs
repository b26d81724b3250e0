//! Frame generation: random packets, Rayleigh channels and the observation
//! `Y = G X + W`.
//!
//! Index conventions (zero-based):
//! * `g_j = h_j ⊗ a_j`, so row `m * L_a + l` of `G` is `h[m] * a[l]`;
//! * `Y` is `(M L_a) x L_x` and the vectorized received signal is
//!   `y[i * L_x + k] = Y[i, k]`.
//!
//! When `L_a L_x < T_tot` the remaining channel uses are idle and carry only
//! noise, so they are not materialized.

use std::collections::HashSet;

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::codec::{encode_packet, CodecError, Codeword, Packet};
use crate::config::SkpConfig;
use crate::scalar::{Cpx, Real};
use crate::seed;

/// Everything drawn for one frame, including the ground truth.
#[derive(Debug, Clone)]
pub struct FrameTruth<T> {
    pub packets: Vec<Packet>,
    pub codewords: Vec<Codeword>,
    /// `M x K_a`; column `j` is `h_j`.
    pub h: Array2<Cpx<T>>,
    /// `L_a x K_a`; column `j` is `a_j`.
    pub a: Array2<Cpx<T>>,
    /// `K_a x L_x`; row `j` is `x_j`.
    pub x: Array2<Cpx<T>>,
    /// `(M L_a) x L_x` observation.
    pub y: Array2<Cpx<T>>,
    pub n0: T,
    /// Draws rejected because they repeated another user's packet.
    pub collisions_resampled: usize,
}

impl<T: Real> FrameTruth<T> {
    /// `G = [h_1 ⊗ a_1, ..., h_Ka ⊗ a_Ka]`.
    pub fn g(&self) -> Array2<Cpx<T>> {
        g_matrix(&self.h, &self.a)
    }
}

pub fn g_matrix<T: Real>(h: &Array2<Cpx<T>>, a: &Array2<Cpx<T>>) -> Array2<Cpx<T>> {
    let (m, k) = h.dim();
    let l_a = a.nrows();
    Array2::from_shape_fn((m * l_a, k), |(i, j)| h[[i / l_a, j]] * a[[i % l_a, j]])
}

/// Draws one `CN(0, var)` sample.
pub fn complex_normal<T: Real, R: Rng + ?Sized>(rng: &mut R, var: f64) -> Cpx<T> {
    let sd = (var / 2.0).sqrt();
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Cpx::new(T::c(re * sd), T::c(im * sd))
}

/// Draws `K_a` distinct packets, resampling any repeat.
pub fn draw_packets<R: Rng + ?Sized>(cfg: &SkpConfig, rng: &mut R) -> (Vec<Packet>, usize) {
    let mut seen = HashSet::new();
    let mut packets = Vec::with_capacity(cfg.k_active);
    let mut resampled = 0;
    while packets.len() < cfg.k_active {
        let p = Packet::random(cfg.b, rng);
        if seen.insert(p.clone()) {
            packets.push(p);
        } else {
            resampled += 1;
        }
    }
    (packets, resampled)
}

/// Simulates a frame from a seed.
pub fn simulate_frame<T: Real>(cfg: &SkpConfig, rng_seed: u64) -> Result<FrameTruth<T>, CodecError> {
    let mut rng = seed::rng_from(rng_seed);
    let (packets, resampled) = draw_packets(cfg, &mut rng);
    let mut truth = transmit(cfg, packets, &mut rng)?;
    truth.collisions_resampled = resampled;
    Ok(truth)
}

/// Encodes the given packets (duplicates allowed) and passes them through the channel.
pub fn transmit<T: Real, R: Rng + ?Sized>(
    cfg: &SkpConfig,
    packets: Vec<Packet>,
    rng: &mut R,
) -> Result<FrameTruth<T>, CodecError> {
    let k = packets.len();
    let l_a = cfg.l_a();
    let codewords = packets
        .iter()
        .map(|p| encode_packet(p, cfg))
        .collect::<Result<Vec<_>, _>>()?;
    let mut h = Array2::from_elem((cfg.m, k), Cpx::new(T::zero(), T::zero()));
    for j in 0..k {
        for m in 0..cfg.m {
            h[[m, j]] = complex_normal(rng, 1.0);
        }
    }
    let mut a = Array2::from_elem((l_a, k), Cpx::new(T::zero(), T::zero()));
    let mut x = Array2::from_elem((k, cfg.l_x), Cpx::new(T::zero(), T::zero()));
    for (j, cw) in codewords.iter().enumerate() {
        for (l, v) in cw.a.to_dense::<T>().into_iter().enumerate() {
            a[[l, j]] = v;
        }
        for (kx, v) in cw.x_symbols::<T>().into_iter().enumerate() {
            x[[j, kx]] = v;
        }
    }
    let n0 = cfg.n0();
    let mut y = g_matrix(&h, &a).dot(&x);
    if n0 > 0.0 {
        y.iter_mut().for_each(|z| *z += complex_normal::<T, _>(rng, n0));
    }
    Ok(FrameTruth {
        packets,
        codewords,
        h,
        a,
        x,
        y,
        n0: T::c(n0),
        collisions_resampled: 0,
    })
}

/// `y[i * L_x + k] = Y[i, k]`.
pub fn flatten_y<T: Copy>(y: &Array2<T>) -> Vec<T> {
    y.iter().copied().collect()
}

pub fn fold_y<T: Copy>(y: &[T], rows: usize, cols: usize) -> Option<Array2<T>> {
    Array2::from_shape_vec((rows, cols), y.to_vec()).ok()
}
