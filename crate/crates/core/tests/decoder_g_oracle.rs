//! Independent checks of the `g` decoder: quadrature, brute-force ranking and
//! dense Gaussian conditioning.

use num_complex::Complex64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use skp_ura::codec::SparseVector;
use skp_ura::constellation::{self, REF_INDEX};
use skp_ura::decoder_g::{
    decode_g, element_likelihoods, map_objective, refine_candidate, support_log_prob,
    synthesize_message, top_supports, Candidate, GaussianBlockMsg, SegmentTable,
    MAX_REFINE_ROUNDS,
};

fn cn(rng: &mut ChaCha8Rng, var: f64) -> Complex64 {
    let sd = (var / 2.0).sqrt();
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(re * sd, im * sd)
}

fn random_a(l_im: usize, segs: usize, rng: &mut ChaCha8Rng) -> SparseVector {
    SparseVector {
        l_im,
        supports: (0..segs).map(|_| rng.random_range(0..l_im)).collect(),
        values: std::iter::once(REF_INDEX)
            .chain((1..segs).map(|_| rng.random_range(0..4)))
            .collect(),
    }
}

fn synthetic(a: &SparseVector, m: usize, nu: f64, rng: &mut ChaCha8Rng) -> GaussianBlockMsg<f64> {
    let dense = a.to_dense::<f64>();
    let l_a = dense.len();
    let mut mean = Vec::with_capacity(m * l_a);
    for _ in 0..m {
        let h = cn(rng, 1.0);
        for al in &dense {
            mean.push(al * h + cn(rng, nu));
        }
    }
    GaussianBlockMsg::new(m, l_a, mean, vec![nu; m * l_a], 1e-12).unwrap()
}

#[test]
fn element_likelihood_matches_quadrature() {
    // M = 1, g_hat = 1, nu = 0.5: integrate CN(g_hat; s h, nu) CN(h; 0, 1) over h
    let g = Complex64::new(1.0, 0.0);
    let nu = 0.5;
    let msg = GaussianBlockMsg::new(1, 2, vec![g, g], vec![nu, nu], 1e-12).unwrap();
    let t = element_likelihoods(&msg, 2).unwrap();
    let density = |z: Complex64, var: f64| (-z.norm_sqr() / var).exp() / (std::f64::consts::PI * var);
    let half = 8.0;
    let n = 1600;
    let step = 2.0 * half / n as f64;
    for (s_idx, expect) in (0..4).map(|i| (Some(i), t.log_lik[0][i])).chain([(None, t.log_lik_zero[0])]) {
        let s = s_idx.map_or(Complex64::new(0.0, 0.0), constellation::point::<f64>);
        let mut acc = 0.0;
        for i in 0..n {
            for k in 0..n {
                let h = Complex64::new(-half + (i as f64 + 0.5) * step, -half + (k as f64 + 0.5) * step);
                acc += density(g - s * h, nu) * density(h, 1.0);
            }
        }
        let quad = (acc * step * step).ln();
        assert!((quad - expect).abs() < 1e-6, "s={s_idx:?}: {quad} vs {expect}");
    }
    let closed_s = -(std::f64::consts::PI * 1.5).ln() - 1.0 / 1.5;
    let closed_0 = -(std::f64::consts::PI * 0.5).ln() - 1.0 / 0.5;
    assert!((t.log_lik[0][0] - closed_s).abs() < 1e-12);
    assert!((t.log_lik_zero[0] - closed_0).abs() < 1e-12);
}

fn random_table(l_im: usize, segs: usize, rng: &mut ChaCha8Rng, quantize: bool) -> SegmentTable<f64> {
    let mut log_pos = Vec::with_capacity(l_im * segs);
    for _ in 0..segs {
        let w: Vec<f64> = (0..l_im)
            .map(|_| {
                if quantize {
                    f64::from(rng.random_range(1..4u8))
                } else {
                    rng.random_range(0.01..1.0)
                }
            })
            .collect();
        let s: f64 = w.iter().sum();
        log_pos.extend(w.iter().map(|x| (x / s).ln()));
    }
    let n = log_pos.len();
    SegmentTable {
        l_im,
        log_pos,
        log_lik: vec![[0.0; 4]; n],
        log_lik_zero: vec![0.0; n],
    }
}

fn brute_force(table: &SegmentTable<f64>, n_top: usize) -> Vec<Vec<usize>> {
    let segs = table.segments();
    let total = table.l_im.pow(segs as u32);
    let mut all: Vec<(f64, Vec<usize>)> = (0..total)
        .map(|mut k| {
            let mut sup = vec![0; segs];
            for slot in sup.iter_mut().rev() {
                *slot = k % table.l_im;
                k /= table.l_im;
            }
            (support_log_prob(table, &sup), sup)
        })
        .collect();
    all.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
    all.into_iter().take(n_top).map(|x| x.1).collect()
}

#[test]
fn ranking_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for case in 0..100 {
        // every fourth table has many exact ties
        let t = random_table(4, 3, &mut rng, case % 4 == 0);
        let got: Vec<Vec<usize>> = top_supports(&t, 10).into_iter().map(|x| x.0).collect();
        assert_eq!(got, brute_force(&t, 10), "case {case}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ranking_is_exhaustive_on_small_instances(
        l_im in 2usize..7, segs in 1usize..5, n_top in 1usize..40, seed in any::<u64>(), ties in any::<bool>()
    ) {
        prop_assume!(l_im.pow(segs as u32) <= 10_000);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = random_table(l_im, segs, &mut rng, ties);
        let got: Vec<Vec<usize>> = top_supports(&t, n_top).into_iter().map(|x| x.0).collect();
        prop_assert_eq!(got, brute_force(&t, n_top));
    }

    #[test]
    fn refinement_objective_never_decreases(seed in any::<u64>(), nu in 0.01f64..2.0, m in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let truth = random_a(4, 3, &mut rng);
        let msg = synthetic(&truth, m, nu, &mut rng);
        let start = random_a(4, 3, &mut rng);
        let (cand, trace) = refine_candidate(&start, &msg, MAX_REFINE_ROUNDS);
        for w in trace.windows(2) {
            prop_assert!(w[1] >= w[0] - 1e-9 * w[0].abs().max(1.0), "{:?}", trace);
        }
        let last = *trace.last().unwrap();
        prop_assert!((map_objective(&cand.a, &cand.h_mean, &msg) - last).abs() <= 1e-9 * last.abs().max(1.0));
    }

    #[test]
    fn synthesized_segments_stay_subnormalized(seed in any::<u64>(), nu in 0.02f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let truth = random_a(8, 5, &mut rng);
        let msg = synthetic(&truth, 4, nu, &mut rng);
        let (cands, synth) = decode_g(&msg, 8, 10).unwrap();
        prop_assert!(!cands.is_empty());
        for p in &synth {
            prop_assert!(p.lambda >= 0.0 && p.lambda <= 1.0 && p.var >= 0.0);
            prop_assert!(p.mean.re.is_finite() && p.mean.im.is_finite());
        }
        for m in 0..4 {
            for seg in 0..5 {
                let s: f64 = (0..8).map(|u| synth[m * 40 + seg * 8 + u].lambda).sum();
                prop_assert!(s <= 1.0 + 1e-9, "antenna {} segment {}: {}", m, seg, s);
            }
        }
    }
}

#[test]
fn refinement_corrects_one_wrong_position() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let nu = 10f64.powf(-20.0 / 10.0);
    let mut ok = 0;
    for _ in 0..100 {
        let truth = random_a(8, 5, &mut rng);
        let msg = synthetic(&truth, 8, nu, &mut rng);
        let mut start = truth.clone();
        let seg = rng.random_range(0..5);
        start.supports[seg] = (start.supports[seg] + rng.random_range(1..8)) % 8;
        let (cand, _) = refine_candidate(&start, &msg, MAX_REFINE_ROUNDS);
        ok += usize::from(cand.a == truth);
    }
    assert!(ok >= 95, "{ok}/100 corrected");
}

/// Solves `A x = b` by Gaussian elimination with partial pivoting and returns
/// `ln |det A|`.
fn solve(mut a: Vec<Vec<Complex64>>, mut b: Vec<Complex64>) -> (Vec<Complex64>, f64) {
    let n = b.len();
    let mut logdet = 0.0;
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].norm().total_cmp(&a[j][col].norm())).unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        let d = a[col][col];
        logdet += d.norm().ln();
        for row in col + 1..n {
            let f = a[row][col] / d;
            for k in col..n {
                let v = a[col][k];
                a[row][k] -= f * v;
            }
            let v = b[col];
            b[row] -= f * v;
        }
    }
    let mut x = vec![Complex64::new(0.0, 0.0); n];
    for row in (0..n).rev() {
        let mut acc = b[row];
        for k in row + 1..n {
            acc -= a[row][k] * x[k];
        }
        x[row] = acc / a[row][row];
    }
    (x, logdet)
}

/// Weights and moments for element `(m0, l0)` by conditioning the joint
/// Gaussian of every other observation under each candidate.
fn dense_oracle(
    cands: &[SparseVector],
    msg: &GaussianBlockMsg<f64>,
    m0: usize,
    l0: usize,
) -> (f64, Complex64, f64) {
    let l_a = msg.l_a;
    let idx: Vec<(usize, usize)> = (0..msg.m)
        .flat_map(|m| (0..l_a).map(move |l| (m, l)))
        .filter(|&e| e != (m0, l0))
        .collect();
    let obs: Vec<Complex64> = idx.iter().map(|&(m, l)| msg.at(m, l).0).collect();
    let mut logw = Vec::new();
    let mut mom = Vec::new();
    for a in cands {
        let d = a.to_dense::<f64>();
        let cov: Vec<Vec<Complex64>> = idx
            .iter()
            .map(|&(m, l)| {
                idx.iter()
                    .map(|&(m2, l2)| {
                        let mut c = if m == m2 { d[l] * d[l2].conj() } else { Complex64::new(0.0, 0.0) };
                        if (m, l) == (m2, l2) {
                            c += msg.at(m, l).1;
                        }
                        c
                    })
                    .collect()
            })
            .collect();
        let (sol, logdet) = solve(cov.clone(), obs.clone());
        let quad: f64 = obs.iter().zip(&sol).map(|(o, s)| (o.conj() * s).re).sum();
        logw.push(-logdet - quad);
        // cov(g_{m0 l0}, obs_k) = a_l0 conj(a_l) on the same antenna
        let c: Vec<Complex64> = idx
            .iter()
            .map(|&(m, l)| if m == m0 { d[l0] * d[l].conj() } else { Complex64::new(0.0, 0.0) })
            .collect();
        let mean: Complex64 = c.iter().zip(&sol).map(|(c, s)| c * s).sum();
        let (sol_c, _) = solve(cov, c.iter().map(|x| x.conj()).collect());
        let reduce: f64 = c.iter().zip(&sol_c).map(|(c, s)| (c * s).re).sum();
        mom.push((d[l0].norm_sqr() != 0.0, mean, d[l0].norm_sqr() - reduce));
    }
    let max = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logw.iter().map(|x| (x - max).exp()).collect();
    let total: f64 = w.iter().sum();
    let (mut lambda, mut mean, mut second) = (0.0, Complex64::new(0.0, 0.0), 0.0);
    for (wk, &(on, mu, var)) in w.iter().zip(&mom) {
        if on {
            let p = wk / total;
            lambda += p;
            mean += mu * p;
            second += p * (mu.norm_sqr() + var);
        }
    }
    if lambda == 0.0 {
        return (0.0, Complex64::new(0.0, 0.0), 1.0);
    }
    let mean = mean / lambda;
    (lambda, mean, second / lambda - mean.norm_sqr())
}

#[test]
fn synthesis_matches_dense_conditioning() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let (l_im, segs, m) = (3, 2, 2);
    let l_a = l_im * segs;
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let truth = random_a(l_im, segs, &mut rng);
        let nu: Vec<f64> = (0..m * l_a).map(|_| rng.random_range(0.05..1.5)).collect();
        let mut msg = synthetic(&truth, m, 0.3, &mut rng);
        msg.var = nu;
        let count = rng.random_range(1..6);
        let mut list: Vec<SparseVector> = Vec::new();
        while list.len() < count {
            let a = random_a(l_im, segs, &mut rng);
            if !list.contains(&a) {
                list.push(a);
            }
        }
        let cands: Vec<Candidate<f64>> = list
            .iter()
            .map(|a| Candidate {
                a: a.clone(),
                h_mean: vec![],
                h_var: vec![],
                log_weight: 0.0,
                rounds: 0,
            })
            .collect();
        let out = synthesize_message(&cands, &msg);
        for mm in 0..m {
            for l in 0..l_a {
                let (lambda, mean, var) = dense_oracle(&list, &msg, mm, l);
                let got = out[mm * l_a + l];
                worst = worst.max((got.lambda - lambda).abs());
                if lambda > 0.0 {
                    worst = worst.max((got.mean - mean).norm()).max((got.var - var).abs());
                }
            }
        }
    }
    assert!(worst < 1e-8, "max deviation {worst:e}");
}
