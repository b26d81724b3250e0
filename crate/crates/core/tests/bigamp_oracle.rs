//! Factorization engine against a planted model and brute-force scalar posteriors.

use ndarray::Array2;
use rand::Rng;
use skp_ura::bigamp::{
    run_bigamp, spike_gaussian_posterior, symbol_posterior, AmpState, BigAmpOpts,
};
use skp_ura::channel::complex_normal;
use skp_ura::constellation;
use skp_ura::messages::{SpikeGaussianMsg, SymbolMsg};
use skp_ura::seed::rng_from;
use skp_ura::Cpx;

const ROWS: usize = 40;
const USERS: usize = 10;
const COLS: usize = 80;
const DENSITY: f64 = 1.0 / 8.0;

fn planted_nmse_db(seed: u64) -> f64 {
    let mut rng = rng_from(seed);
    let g = Array2::from_shape_simple_fn((ROWS, USERS), || {
        if rng.random::<f64>() < DENSITY {
            complex_normal::<f64, _>(&mut rng, 1.0)
        } else {
            Cpx::new(0.0, 0.0)
        }
    });
    let x = Array2::from_shape_simple_fn((USERS, COLS), || {
        constellation::point::<f64>(rng.random_range(0..4))
    });
    let z = g.dot(&x);
    let n0 = USERS as f64 * DENSITY / 100.0;
    let y = z.mapv(|v| v + complex_normal::<f64, _>(&mut rng, n0));
    let pg = Array2::from_elem((ROWS, USERS), SpikeGaussianMsg::new(DENSITY, Cpx::new(0.0, 0.0), 1.0));
    let px = Array2::from_elem((USERS, COLS), SymbolMsg::uniform());
    let opts = BigAmpOpts::default();
    let mut st = AmpState::random(ROWS, USERS, COLS, DENSITY, &opts, &mut rng);
    match run_bigamp(&y, &pg, &px, n0, &opts, &mut st) {
        Ok(_) => {
            let err: f64 = st.z_tilde.iter().zip(z.iter()).map(|(a, b)| (a - b).norm_sqr()).sum();
            let pow: f64 = z.iter().map(|v| v.norm_sqr()).sum();
            10.0 * (err / pow).log10()
        }
        Err(_) => f64::INFINITY,
    }
}

#[test]
fn planted_model_recovers_product() {
    let results: Vec<f64> = (0..100).map(planted_nmse_db).collect();
    let good = results.iter().filter(|&&r| r < -20.0).count();
    let mut sorted = results.clone();
    sorted.sort_by(f64::total_cmp);
    assert!(good >= 90, "{good}/100 below -20 dB; median {:.2} dB", sorted[50]);
}

/// 2-D midpoint rule over a box centered on the likelihood peak.
fn quadrature<F: Fn(Cpx<f64>) -> f64>(center: Cpx<f64>, half: f64, n: usize, f: F) -> (Cpx<f64>, f64) {
    let h = 2.0 * half / n as f64;
    let (mut w0, mut w1, mut w2) = (0.0, Cpx::new(0.0, 0.0), 0.0);
    for i in 0..n {
        for k in 0..n {
            let g = center + Cpx::new(-half + (i as f64 + 0.5) * h, -half + (k as f64 + 0.5) * h);
            let w = f(g);
            w0 += w;
            w1 += g * w;
            w2 += g.norm_sqr() * w;
        }
    }
    (w1 / w0, w2 / w0 - (w1 / w0).norm_sqr())
}

#[test]
fn spike_posterior_matches_quadrature() {
    let mut rng = rng_from(11);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let lambda = rng.random_range(0.02..0.98);
        let mean = Cpx::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let tau: f64 = rng.random_range(0.2..2.0);
        let g_hat = Cpx::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
        let v: f64 = rng.random_range(0.2..2.0);
        let prior = SpikeGaussianMsg::new(lambda, mean, tau);
        let (m, var) = spike_gaussian_posterior(&prior, g_hat, v);
        // slab part by quadrature, spike part added analytically
        let slab = |g: Cpx<f64>| {
            (-(g - mean).norm_sqr() / tau - (g - g_hat).norm_sqr() / v).exp()
                / (std::f64::consts::PI * tau)
                / (std::f64::consts::PI * v)
        };
        let post_var = tau * v / (tau + v);
        let center = (g_hat * tau + mean * v) / (tau + v);
        let half = 12.0 * post_var.sqrt();
        let n = 200;
        let h = 2.0 * half / n as f64;
        let (qm, qv) = quadrature(center, half, n, slab);
        let mut mass = 0.0;
        for i in 0..n {
            for k in 0..n {
                let g = center + Cpx::new(-half + (i as f64 + 0.5) * h, -half + (k as f64 + 0.5) * h);
                mass += slab(g) * h * h;
            }
        }
        let w_slab = lambda * mass;
        let w_spike = (1.0 - lambda) * (-g_hat.norm_sqr() / v).exp() / (std::f64::consts::PI * v);
        let pi = w_slab / (w_slab + w_spike);
        let oracle_mean = qm * pi;
        let oracle_var = pi * (qv + qm.norm_sqr()) - oracle_mean.norm_sqr();
        worst = worst.max((m - oracle_mean).norm()).max((var - oracle_var).abs());
    }
    assert!(worst < 1e-8, "max deviation {worst:e}");
}

#[test]
fn symbol_posterior_matches_enumeration() {
    let mut rng = rng_from(12);
    for _ in 0..1000 {
        let w: [f64; 4] = std::array::from_fn(|_| rng.random_range(0.0..1.0));
        let prior = SymbolMsg::from_weights(w);
        let x_hat = Cpx::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
        let v: f64 = rng.random_range(0.05..3.0);
        let (m, var) = symbol_posterior(&prior, x_hat, v);
        let pts = constellation::points::<f64>();
        let ws: Vec<f64> = (0..4).map(|i| prior.probs[i] * (-(pts[i] - x_hat).norm_sqr() / v).exp()).collect();
        let tot: f64 = ws.iter().sum();
        let om: Cpx<f64> = (0..4).map(|i| pts[i] * ws[i]).sum::<Cpx<f64>>() / tot;
        let ov = 1.0 - om.norm_sqr();
        assert!((m - om).norm() < 1e-12 && (var - ov).abs() < 1e-12);
    }
}

#[test]
fn x_extrinsic_ignores_own_prior() {
    let mut rng = rng_from(13);
    let (rows, n, l) = (12, 3, 20);
    let y = Array2::from_shape_simple_fn((rows, l), || complex_normal::<f64, _>(&mut rng, 1.0));
    let pg = Array2::from_elem((rows, n), SpikeGaussianMsg::new(0.25, Cpx::new(0.0, 0.0), 1.0));
    let px = Array2::from_shape_simple_fn((n, l), || {
        SymbolMsg::from_weights(std::array::from_fn(|_| rng.random_range(0.05..1.0)))
    });
    let opts = BigAmpOpts { max_iter: 1, ..BigAmpOpts::default() };
    let init = AmpState::random(rows, n, l, 0.25, &opts, &mut rng);
    let mut a = init.clone();
    let base = run_bigamp(&y, &pg, &px, 0.1, &opts, &mut a).unwrap();
    for _ in 0..20 {
        let (j, k) = (rng.random_range(0..n), rng.random_range(0..l));
        let mut px2 = px.clone();
        px2[[j, k]] = SymbolMsg::from_weights(std::array::from_fn(|_| rng.random_range(0.05..1.0)));
        let mut b = init.clone();
        let again = run_bigamp(&y, &pg, &px2, 0.1, &opts, &mut b).unwrap();
        assert!((base.x.mean[[j, k]] - again.x.mean[[j, k]]).norm() < 1e-10);
        assert!((base.x.var[[j, k]] - again.x.var[[j, k]]).abs() < 1e-10);
    }
}

#[test]
fn variances_respect_floor() {
    let mut rng = rng_from(14);
    let (rows, n, l) = (16, 4, 30);
    let y = Array2::from_shape_simple_fn((rows, l), || complex_normal::<f64, _>(&mut rng, 2.0));
    let pg = Array2::from_elem((rows, n), SpikeGaussianMsg::uninformative(4));
    let px = Array2::from_elem((n, l), SymbolMsg::uniform());
    let opts = BigAmpOpts::default();
    let mut st = AmpState::random(rows, n, l, 0.25, &opts, &mut rng);
    let out = run_bigamp(&y, &pg, &px, 0.05, &opts, &mut st).unwrap();
    let floor = opts.var_floor;
    for v in out.g.var.iter().chain(out.x.var.iter()).chain(st.v_g_tilde.iter()).chain(st.v_x_tilde.iter()) {
        assert!(*v >= floor);
    }
    assert!(st.v_s.iter().all(|&v| v >= 0.0));
    assert!(st.v_z_tilde.iter().all(|&v| v >= 0.0));
}
