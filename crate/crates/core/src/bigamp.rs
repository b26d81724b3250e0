//! Bilinear generalized AMP for `Y = G X + W` with element-wise priors.
//!
//! Each iteration runs the sixteen steps of the classical BiG-AMP recursion:
//! plain and Onsager-corrected products (A1-A4), the AWGN output posterior
//! (A5-A6), residual scores (A7-A8), the Gaussian extrinsic messages for `X`
//! and `G` (A9-A12) and the prior-weighted posterior moments (A13-A16).
//!
//! The engine keeps its state between calls so the receiver can warm-start
//! successive outer iterations with refreshed priors.

use ndarray::{Array2, Zip};
use rand::Rng;

use crate::channel::complex_normal;
use crate::constellation::{self, QPSK_ORDER};
use crate::messages::{SpikeGaussianMsg, SymbolMsg};
use crate::scalar::{log_cn, Cpx, Real};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AmpError {
    #[error("non-finite value at iteration {iteration} in {stage}")]
    Diverged { iteration: usize, stage: &'static str },
    #[error("dimension mismatch: {0}")]
    Shape(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BigAmpOpts<T> {
    /// Weight of the new value in `new <- beta * new + (1 - beta) * old`.
    pub damping: T,
    /// Relative change of `p_bar` below which the loop stops.
    pub tol: T,
    pub max_iter: usize,
    pub var_floor: T,
    /// Variance of the `CN` jitter added to the initial `G` means.
    pub init_jitter: T,
    /// Halve the damping whenever the residual grows.
    pub adaptive_damping: bool,
}

impl<T: Real> Default for BigAmpOpts<T> {
    fn default() -> Self {
        BigAmpOpts {
            damping: T::c(0.7),
            tol: T::c(1e-6),
            max_iter: 100,
            var_floor: T::c(1e-12),
            init_jitter: T::c(0.01),
            adaptive_damping: false,
        }
    }
}

/// Running state of the recursion.
#[derive(Debug, Clone)]
pub struct AmpState<T> {
    /// Posterior means / variances of `G` (`g~`, `v_g~`).
    pub g_tilde: Array2<Cpx<T>>,
    pub v_g_tilde: Array2<T>,
    /// Posterior means / variances of `X` (`x~`, `v_x~`).
    pub x_tilde: Array2<Cpx<T>>,
    pub v_x_tilde: Array2<T>,
    pub s_hat: Array2<Cpx<T>>,
    pub v_s: Array2<T>,
    pub p_bar: Array2<Cpx<T>>,
    pub v_p_bar: Array2<T>,
    pub z_tilde: Array2<Cpx<T>>,
    pub v_z_tilde: Array2<T>,
    /// Iterations run since initialization.
    pub iteration: usize,
    /// `p_bar` has been computed at least once.
    primed: bool,
    damping: T,
}

/// Gaussian message per element: mean and variance.
#[derive(Debug, Clone)]
pub struct GaussianMsgs<T> {
    pub mean: Array2<Cpx<T>>,
    pub var: Array2<T>,
}

#[derive(Debug, Clone)]
pub struct BigAmpOutput<T> {
    /// `(g_hat, v_g)` from A11-A12: messages from `Y` to each element of `G`.
    pub g: GaussianMsgs<T>,
    /// `(x_hat, v_x)` from A9-A10.
    pub x: GaussianMsgs<T>,
    pub iterations: usize,
    pub converged: bool,
}

/// Posterior mean and variance of `g` under the spike-and-slab prior and a
/// Gaussian likelihood `CN(g; g_hat, v)`.
pub fn spike_gaussian_posterior<T: Real>(
    prior: &SpikeGaussianMsg<T>,
    g_hat: Cpx<T>,
    v: T,
) -> (Cpx<T>, T) {
    let zero = Cpx::new(T::zero(), T::zero());
    if prior.lambda <= T::zero() {
        return (zero, T::zero());
    }
    let tv = prior.var + v;
    let slab_mean = (g_hat * prior.var + prior.mean * v) / tv;
    let slab_var = prior.var * v / tv;
    let pi = if prior.lambda >= T::one() {
        T::one()
    } else {
        let log_spike = (T::one() - prior.lambda).ln() + log_cn(zero, g_hat, v);
        let log_slab = prior.lambda.ln() + log_cn(g_hat, prior.mean, tv);
        T::one() / (T::one() + (log_spike - log_slab).exp())
    };
    let mean = slab_mean * pi;
    let var = pi * slab_var + pi * (T::one() - pi) * slab_mean.norm_sqr();
    (mean, var.max(T::zero()))
}

/// Posterior mean and variance of a constellation symbol with prior `Phi`
/// and Gaussian likelihood `CN(x; x_hat, v)`.
pub fn symbol_posterior<T: Real>(prior: &SymbolMsg<T>, x_hat: Cpx<T>, v: T) -> (Cpx<T>, T) {
    let pts = constellation::points::<T>();
    let mut logs = [T::neg_infinity(); QPSK_ORDER];
    for i in 0..QPSK_ORDER {
        if prior.probs[i] > T::zero() {
            logs[i] = prior.probs[i].ln() - (pts[i] - x_hat).norm_sqr() / v;
        }
    }
    let post = SymbolMsg::from_log(logs);
    let mut mean = Cpx::new(T::zero(), T::zero());
    let mut second = T::zero();
    for i in 0..QPSK_ORDER {
        mean += pts[i] * post.probs[i];
        second += pts[i].norm_sqr() * post.probs[i];
    }
    (mean, (second - mean.norm_sqr()).max(T::zero()))
}

/// Output posterior for `y = z + CN(0, N0)` with `z ~ CN(p_hat, v_p)`.
#[inline]
pub fn awgn_posterior<T: Real>(y: Cpx<T>, p_hat: Cpx<T>, v_p: T, n0: T) -> (Cpx<T>, T) {
    let d = v_p + n0;
    ((y * v_p + p_hat * n0) / d, v_p * n0 / d)
}

fn abs2<T: Real>(a: &Array2<Cpx<T>>) -> Array2<T> {
    a.mapv(|z| z.norm_sqr())
}

fn conj_t<T: Real>(a: &Array2<Cpx<T>>) -> Array2<Cpx<T>> {
    a.t().mapv(|z| z.conj())
}

fn damp_c<T: Real>(new: &mut Array2<Cpx<T>>, old: &Array2<Cpx<T>>, beta: T) {
    let keep = T::one() - beta;
    Zip::from(new).and(old).for_each(|n, &o| *n = *n * beta + o * keep);
}

fn damp_r<T: Real>(new: &mut Array2<T>, old: &Array2<T>, beta: T) {
    let keep = T::one() - beta;
    Zip::from(new).and(old).for_each(|n, &o| *n = *n * beta + o * keep);
}

fn check_finite<T: Real>(
    it: usize,
    stage: &'static str,
    c: &Array2<Cpx<T>>,
    r: &Array2<T>,
) -> Result<(), AmpError> {
    if c.iter().all(|z| z.re.is_finite() && z.im.is_finite()) && r.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(AmpError::Diverged { iteration: it, stage })
    }
}

impl<T: Real> AmpState<T> {
    /// Randomized start used by each decoding trial: both factors sit near
    /// their prior mean of zero with the prior variance. `x~` is a uniform
    /// constellation point scaled by `sqrt(init_jitter)` with unit variance;
    /// `g~ ~ CN(0, init_jitter)` with variance `lambda_init`.
    pub fn random<R: Rng + ?Sized>(
        rows: usize,
        n: usize,
        l: usize,
        lambda_init: T,
        opts: &BigAmpOpts<T>,
        rng: &mut R,
    ) -> Self {
        let x_scale = opts.init_jitter.sqrt();
        let x_tilde = Array2::from_shape_simple_fn((n, l), || {
            constellation::point::<T>(rng.random_range(0..QPSK_ORDER)) * x_scale
        });
        let g_tilde =
            Array2::from_shape_simple_fn((rows, n), || complex_normal(rng, opts.init_jitter.as_f64()));
        Self::from_parts(
            g_tilde,
            Array2::from_elem((rows, n), lambda_init),
            x_tilde,
            Array2::from_elem((n, l), T::one()),
            opts,
        )
    }

    /// Deterministic start at the prior means and variances.
    pub fn at_prior_means(
        priors_g: &Array2<SpikeGaussianMsg<T>>,
        priors_x: &Array2<SymbolMsg<T>>,
        opts: &BigAmpOpts<T>,
    ) -> Self {
        let x_tilde = priors_x.mapv(|p| p.mean());
        let v_x_tilde = priors_x.mapv(|p| (T::one() - p.mean().norm_sqr()).max(T::zero()));
        let g_tilde = priors_g.mapv(|p| p.mean * p.lambda);
        let v_g_tilde = priors_g.mapv(|p| {
            (p.lambda * (p.var + p.mean.norm_sqr()) - (p.mean * p.lambda).norm_sqr()).max(T::zero())
        });
        Self::from_parts(g_tilde, v_g_tilde, x_tilde, v_x_tilde, opts)
    }

    fn from_parts(
        g_tilde: Array2<Cpx<T>>,
        v_g_tilde: Array2<T>,
        x_tilde: Array2<Cpx<T>>,
        v_x_tilde: Array2<T>,
        opts: &BigAmpOpts<T>,
    ) -> Self {
        let rows = g_tilde.nrows();
        let l = x_tilde.ncols();
        let zero = Cpx::new(T::zero(), T::zero());
        AmpState {
            g_tilde,
            v_g_tilde,
            x_tilde,
            v_x_tilde,
            s_hat: Array2::from_elem((rows, l), zero),
            v_s: Array2::from_elem((rows, l), T::zero()),
            p_bar: Array2::from_elem((rows, l), zero),
            v_p_bar: Array2::from_elem((rows, l), T::zero()),
            z_tilde: Array2::from_elem((rows, l), zero),
            v_z_tilde: Array2::from_elem((rows, l), T::zero()),
            iteration: 0,
            primed: false,
            damping: opts.damping,
        }
    }

    /// Redraws column `j` of `G` and row `j` of `X` as in [`AmpState::random`].
    pub fn reseed_factor<R: Rng + ?Sized>(
        &mut self,
        j: usize,
        lambda_init: T,
        opts: &BigAmpOpts<T>,
        rng: &mut R,
    ) {
        let x_scale = opts.init_jitter.sqrt();
        for x in self.x_tilde.row_mut(j) {
            *x = constellation::point::<T>(rng.random_range(0..QPSK_ORDER)) * x_scale;
        }
        self.v_x_tilde.row_mut(j).fill(T::one());
        for g in self.g_tilde.column_mut(j) {
            *g = complex_normal(rng, opts.init_jitter.as_f64());
        }
        self.v_g_tilde.column_mut(j).fill(lambda_init);
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.g_tilde.nrows(), self.g_tilde.ncols(), self.x_tilde.ncols())
    }
}

/// Runs BiG-AMP from `state` until the stopping rule fires or `max_iter`.
///
/// Returns the extrinsic messages of the final iteration; `state` holds the
/// posterior moments for warm restarts.
pub fn run_bigamp<T: Real>(
    y: &Array2<Cpx<T>>,
    priors_g: &Array2<SpikeGaussianMsg<T>>,
    priors_x: &Array2<SymbolMsg<T>>,
    n0: T,
    opts: &BigAmpOpts<T>,
    state: &mut AmpState<T>,
) -> Result<BigAmpOutput<T>, AmpError> {
    let (rows, n, l) = state.dims();
    if y.dim() != (rows, l) || priors_g.dim() != (rows, n) || priors_x.dim() != (n, l) {
        return Err(AmpError::Shape(format!(
            "Y {:?}, G priors {:?}, X priors {:?}, state {:?}",
            y.dim(),
            priors_g.dim(),
            priors_x.dim(),
            (rows, n, l)
        )));
    }
    let floor = opts.var_floor;
    let n0 = n0.max(floor);
    let zero = Cpx::new(T::zero(), T::zero());
    let mut out_g = GaussianMsgs {
        mean: Array2::from_elem((rows, n), zero),
        var: Array2::from_elem((rows, n), T::zero()),
    };
    let mut out_x = GaussianMsgs {
        mean: Array2::from_elem((n, l), zero),
        var: Array2::from_elem((n, l), T::zero()),
    };
    let mut converged = false;
    let mut prev_residual = T::infinity();
    let mut local_iters = 0;

    while local_iters < opts.max_iter {
        local_iters += 1;
        state.iteration += 1;
        let it = state.iteration;
        let beta = state.damping;
        let warm = state.primed;

        // (A1)-(A3)
        let mut v_p_bar = abs2(&state.g_tilde).dot(&state.v_x_tilde)
            + state.v_g_tilde.dot(&abs2(&state.x_tilde));
        let mut p_bar = state.g_tilde.dot(&state.x_tilde);
        let mut v_p = state.v_g_tilde.dot(&state.v_x_tilde);
        if warm {
            damp_r(&mut v_p_bar, &state.v_p_bar, beta);
            damp_c(&mut p_bar, &state.p_bar, beta);
        }
        Zip::from(&mut v_p).and(&v_p_bar).for_each(|vp, &vb| *vp = (*vp + vb).max(floor));
        check_finite(it, "A1-A3", &p_bar, &v_p)?;

        let stop = if warm && local_iters > 1 {
            let mut diff = T::zero();
            let mut norm = T::zero();
            Zip::from(&p_bar).and(&state.p_bar).for_each(|a, b| {
                diff += (*a - *b).norm_sqr();
                norm += a.norm_sqr();
            });
            diff <= opts.tol * norm
        } else {
            false
        };
        state.p_bar = p_bar;
        state.v_p_bar = v_p_bar;

        // (A4)-(A8)
        let mut s_new = Array2::from_elem((rows, l), zero);
        let mut vs_new = Array2::from_elem((rows, l), T::zero());
        let mut residual = T::zero();
        {
            let s_out = s_new.as_slice_mut().expect("standard layout");
            let vs_out = vs_new.as_slice_mut().expect("standard layout");
            let zt = state.z_tilde.as_slice_mut().expect("standard layout");
            let vzt = state.v_z_tilde.as_slice_mut().expect("standard layout");
            let pb = state.p_bar.as_slice().expect("standard layout");
            let vpb = state.v_p_bar.as_slice().expect("standard layout");
            let s_old = state.s_hat.as_slice().expect("standard layout");
            let vp = v_p.as_slice().expect("standard layout");
            for (i, &yy) in y.iter().enumerate() {
                let p_hat = pb[i] - s_old[i] * vpb[i];
                let (zm, zv) = awgn_posterior(yy, p_hat, vp[i], n0);
                zt[i] = zm;
                vzt[i] = zv;
                vs_out[i] = ((T::one() - zv / vp[i]) / vp[i]).max(T::zero());
                s_out[i] = (zm - p_hat) / vp[i];
                residual += (yy - pb[i]).norm_sqr();
            }
        }
        if warm {
            damp_c(&mut s_new, &state.s_hat, beta);
            damp_r(&mut vs_new, &state.v_s, beta);
        }
        state.s_hat = s_new;
        state.v_s = vs_new;
        state.primed = true;
        check_finite(it, "A4-A8", &state.s_hat, &state.v_s)?;
        if opts.adaptive_damping {
            if residual > prev_residual {
                state.damping = (state.damping * T::c(0.5)).max(T::c(0.05));
            }
            prev_residual = residual;
        }

        // (A9)-(A10)
        let sum_gvs = abs2(&state.g_tilde).t().dot(&state.v_s);
        let sum_vgvs = state.v_g_tilde.t().dot(&state.v_s);
        let back_x = conj_t(&state.g_tilde).dot(&state.s_hat);
        Zip::from(&mut out_x.mean)
            .and(&mut out_x.var)
            .and(&sum_gvs)
            .and(&sum_vgvs)
            .and(&back_x)
            .and(&state.x_tilde)
            .for_each(|xm, xv, &den, &corr, &bx, &xt| {
                let v = T::one() / den.max(floor);
                *xv = v.max(floor);
                *xm = xt * (T::one() - v * corr) + bx * v;
            });
        // (A11)-(A12)
        let sum_xvs = state.v_s.dot(&abs2(&state.x_tilde).t());
        let sum_vxvs = state.v_s.dot(&state.v_x_tilde.t());
        let back_g = state.s_hat.dot(&conj_t(&state.x_tilde));
        Zip::from(&mut out_g.mean)
            .and(&mut out_g.var)
            .and(&sum_xvs)
            .and(&sum_vxvs)
            .and(&back_g)
            .and(&state.g_tilde)
            .for_each(|gm, gv, &den, &corr, &bg, &gt| {
                let v = T::one() / den.max(floor);
                *gv = v.max(floor);
                *gm = gt * (T::one() - v * corr) + bg * v;
            });
        check_finite(it, "A9-A12", &out_x.mean, &out_x.var)?;
        check_finite(it, "A9-A12", &out_g.mean, &out_g.var)?;

        // (A13)-(A16)
        let mut x_new = state.x_tilde.clone();
        let mut vx_new = state.v_x_tilde.clone();
        Zip::from(&mut x_new)
            .and(&mut vx_new)
            .and(priors_x)
            .and(&out_x.mean)
            .and(&out_x.var)
            .for_each(|xt, vt, p, &xh, &vx| {
                let (m, v) = symbol_posterior(p, xh, vx);
                *xt = m;
                *vt = v.max(floor);
            });
        let mut g_new = state.g_tilde.clone();
        let mut vg_new = state.v_g_tilde.clone();
        Zip::from(&mut g_new)
            .and(&mut vg_new)
            .and(priors_g)
            .and(&out_g.mean)
            .and(&out_g.var)
            .for_each(|gt, vt, p, &gh, &vg| {
                let (m, v) = spike_gaussian_posterior(p, gh, vg);
                *gt = m;
                *vt = v.max(floor);
            });
        if warm {
            damp_c(&mut x_new, &state.x_tilde, beta);
            damp_r(&mut vx_new, &state.v_x_tilde, beta);
            damp_c(&mut g_new, &state.g_tilde, beta);
            damp_r(&mut vg_new, &state.v_g_tilde, beta);
        }
        state.x_tilde = x_new;
        state.v_x_tilde = vx_new;
        state.g_tilde = g_new;
        state.v_g_tilde = vg_new;
        check_finite(it, "A13-A16", &state.g_tilde, &state.v_g_tilde)?;
        check_finite(it, "A13-A16", &state.x_tilde, &state.v_x_tilde)?;

        if stop {
            converged = true;
            break;
        }
    }

    Ok(BigAmpOutput {
        g: out_g,
        x: out_x,
        iterations: local_iters,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from;

    #[test]
    fn a1_a3_scalar_case() {
        // N = 1, g~ = 2, v_g~ = 0.5, x~ = 1, v_x~ = 0.25
        let g = Array2::from_elem((1, 1), Cpx::new(2.0f64, 0.0));
        let vg = Array2::from_elem((1, 1), 0.5);
        let x = Array2::from_elem((1, 1), Cpx::new(1.0, 0.0));
        let vx = Array2::from_elem((1, 1), 0.25);
        let v_p_bar = abs2(&g).dot(&vx) + vg.dot(&abs2(&x));
        let v_p = &v_p_bar + &vg.dot(&vx);
        assert!((v_p_bar[[0, 0]] - 1.5).abs() < 1e-15);
        assert!((v_p[[0, 0]] - 1.625).abs() < 1e-15);
    }

    #[test]
    fn point_mass_priors_fix_the_product() {
        let mut rng = rng_from(4);
        let (rows, l) = (6, 9);
        let g_true: Array2<Cpx<f64>> = Array2::from_shape_fn((rows, 1), |_| complex_normal(&mut rng, 1.0));
        let labels: Vec<usize> = (0..l).map(|_| rng.random_range(0..4)).collect();
        let x_true = Array2::from_shape_fn((1, l), |(_, k)| constellation::point::<f64>(labels[k]));
        let y = g_true.dot(&x_true);
        let pg = g_true.mapv(|g| SpikeGaussianMsg::new(1.0, g, 0.0));
        let px = Array2::from_shape_fn((1, l), |(_, k)| SymbolMsg::point_mass(labels[k]));
        let opts = BigAmpOpts::default();
        let mut st = AmpState::at_prior_means(&pg, &px, &opts);
        let out = run_bigamp(&y, &pg, &px, 1e-3, &opts, &mut st).unwrap();
        assert!(out.converged);
        assert_eq!(out.iterations, 2);
        for (a, b) in st.p_bar.iter().zip(y.iter()) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let mut rng = rng_from(1);
        let pg = Array2::from_elem((4, 2), SpikeGaussianMsg::uninformative(4));
        let px = Array2::from_elem((2, 3), SymbolMsg::<f64>::uniform());
        let opts = BigAmpOpts::default();
        let mut st = AmpState::random(4, 2, 3, 0.25, &opts, &mut rng);
        let y = Array2::from_elem((5, 3), Cpx::new(0.0, 0.0));
        assert!(matches!(
            run_bigamp(&y, &pg, &px, 0.1, &opts, &mut st),
            Err(AmpError::Shape(_))
        ));
    }

    #[test]
    fn spike_posterior_limits() {
        let p = SpikeGaussianMsg::new(0.0, Cpx::new(1.0f64, 0.0), 1.0);
        assert_eq!(spike_gaussian_posterior(&p, Cpx::new(3.0, 0.0), 0.1).1, 0.0);
        // lambda = 1 is a Gaussian prior: standard product of Gaussians
        let p = SpikeGaussianMsg::new(1.0, Cpx::new(1.0f64, 0.0), 1.0);
        let (m, v) = spike_gaussian_posterior(&p, Cpx::new(3.0, 0.0), 1.0);
        assert!((m - Cpx::new(2.0, 0.0)).norm() < 1e-14);
        assert!((v - 0.5).abs() < 1e-14);
    }

    #[test]
    fn symbol_posterior_sharp_likelihood() {
        let prior = SymbolMsg::<f64>::uniform();
        let s = constellation::point::<f64>(2);
        let (m, v) = symbol_posterior(&prior, s, 1e-4);
        assert!((m - s).norm() < 1e-9);
        assert!(v < 1e-9);
    }

    #[test]
    fn awgn_posterior_is_precision_weighted() {
        let (m, v) = awgn_posterior(Cpx::new(1.0f64, 0.0), Cpx::new(0.0, 0.0), 1.0, 1.0);
        assert!((m.re - 0.5).abs() < 1e-15 && (v - 0.5).abs() < 1e-15);
    }
}
