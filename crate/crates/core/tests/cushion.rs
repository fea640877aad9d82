mod common;

use common::*;
use mdnet_core::cushion::{
    activation_contraction, estimate_cushions, interlayer_cushions, interlayer_smoothness, layer_cushions,
    InterlayerDenominator,
};
use mdnet_core::linalg::{DenseMatrix, DenseVector};
use mdnet_core::{Dataset, Network};
use rand::Rng;

fn setup(seed: u64) -> (Network, Dataset) {
    let mut r = rng(seed);
    let net = random_net(&[6, 10, 8, 3], &mut r);
    let data = random_dataset(60, 6, 3, &mut r);
    (net, data)
}

#[test]
fn layer_cushions_match_min_scan() {
    let (net, data) = setup(30);
    let mu = layer_cushions(&net, &data).unwrap();
    for i in 1..=net.depth() {
        let fro = frobenius_rows(&to_rows(net.layer(i)));
        let (mut best, mut witness) = (f64::INFINITY, None);
        for (s, (x, _)) in data.iter().enumerate() {
            let pre = forward_oracle(&net, x.as_slice());
            let denom = fro * phi_norm(&pre, x.as_slice(), i - 1);
            if denom > 0.0 && l2(&pre[i - 1]) / denom < best {
                best = l2(&pre[i - 1]) / denom;
                witness = Some(s);
            }
        }
        assert!(rel_err(mu[i - 1].value, best) < 1e-12, "layer {i}");
        assert_eq!(mu[i - 1].witness, witness);
        assert!(mu[i - 1].value > 0.0 && mu[i - 1].value <= 1.0);
    }
}

#[test]
fn interlayer_table_matches_brute_force() {
    let (net, data) = setup(31);
    for denom in [InterlayerDenominator::PreviousActivation, InterlayerDenominator::LayerOutput] {
        let table = interlayer_cushions(&net, &data, denom).unwrap();
        let d = net.depth();
        for i in 1..=d {
            for j in i..=d {
                let mut best = f64::INFINITY;
                for (x, _) in data.iter() {
                    let pre = forward_oracle(&net, x.as_slice());
                    let jfro = if i == j {
                        (pre[i - 1].len() as f64).sqrt()
                    } else {
                        frobenius_rows(&jacobian_oracle(&net, x.as_slice(), i, j))
                    };
                    let side = match denom {
                        InterlayerDenominator::PreviousActivation => phi_norm(&pre, x.as_slice(), i - 1),
                        InterlayerDenominator::LayerOutput => l2(&pre[i - 1]),
                    };
                    if jfro * side > 0.0 {
                        best = best.min(l2(&pre[j - 1]) / (jfro * side));
                    }
                }
                assert!(rel_err(table.get(i, j).value, best) < 1e-12, "{denom:?} ({i},{j})");
            }
            let cap = 1.0 / (net.rho() as f64).sqrt();
            let want = (i..=d).map(|j| table.get(i, j).value).fold(cap, f64::min);
            assert_eq!(table.mu_min[i - 1], want);
            assert!(table.mu_min[i - 1] <= cap);
        }
    }
}

#[test]
fn identity_interlayer_example() {
    let net = Network::new(vec![DenseMatrix::identity(4)]).unwrap();
    let data = Dataset::normalized(vec![DenseVector::new(vec![0.3, -1.0, 2.0, 0.1]).unwrap()], vec![0], 2).unwrap();
    let t = interlayer_cushions(&net, &data, InterlayerDenominator::default()).unwrap();
    assert!((t.get(1, 1).value - 0.5).abs() < 1e-15);
    assert!((t.mu_min[0] - 0.5).abs() < 1e-15);
}

#[test]
fn contraction_matches_max_scan() {
    let (net, data) = setup(32);
    let c = activation_contraction(&net, &data).unwrap();
    let mut best = 1.0f64;
    for (x, _) in data.iter() {
        let pre = forward_oracle(&net, x.as_slice());
        for i in 1..net.depth() {
            best = best.max(l2(&pre[i - 1]) / phi_norm(&pre, x.as_slice(), i));
        }
    }
    assert!(rel_err(c.value, best) < 1e-12);
    assert!(c.value >= 1.0 && !c.degenerate);
}

#[test]
fn contraction_is_one_for_nonnegative_preacts() {
    let net = Network::new(vec![
        DenseMatrix::from_rows(&[vec![1.0, 0.0], vec![0.5, 0.5]]).unwrap(),
        DenseMatrix::from_rows(&[vec![1.0, -1.0]]).unwrap(),
    ])
    .unwrap();
    let data = Dataset::normalized(
        vec![DenseVector::new(vec![1.0, 2.0]).unwrap(), DenseVector::new(vec![0.2, 0.1]).unwrap()],
        vec![0, 1],
        2,
    )
    .unwrap();
    assert_eq!(activation_contraction(&net, &data).unwrap().value, 1.0);
}

#[test]
fn inequalities_hold_dataset_wide_and_are_tight_at_witnesses() {
    let (net, data) = setup(33);
    let p = estimate_cushions(&net, &data, InterlayerDenominator::default()).unwrap();
    for (s, (x, _)) in data.iter().enumerate() {
        let pre = forward_oracle(&net, x.as_slice());
        for i in 1..=net.depth() {
            let fro = frobenius_rows(&to_rows(net.layer(i)));
            let lhs = p.mu[i - 1].value * fro * phi_norm(&pre, x.as_slice(), i - 1);
            let rhs = l2(&pre[i - 1]);
            assert!(lhs <= rhs * (1.0 + 1e-12));
            if p.mu[i - 1].witness == Some(s) {
                assert!(rel_err(lhs, rhs) < 1e-9);
            }
            if i < net.depth() {
                assert!(p.contraction_c() * phi_norm(&pre, x.as_slice(), i) >= rhs * (1.0 - 1e-12));
            }
        }
    }
}

#[test]
fn monotone_under_data_growth() {
    let (net, data) = setup(34);
    let idx: Vec<usize> = (0..30).collect();
    let small = data.select(&idx);
    let a = estimate_cushions(&net, &small, InterlayerDenominator::default()).unwrap();
    let b = estimate_cushions(&net, &data, InterlayerDenominator::default()).unwrap();
    for i in 0..net.depth() {
        assert!(b.mu[i].value <= a.mu[i].value);
        assert!(b.mu_min()[i] <= a.mu_min()[i]);
        for j in i + 1..=net.depth() {
            assert!(b.interlayer.get(i + 1, j).value <= a.interlayer.get(i + 1, j).value);
        }
    }
    assert!(b.contraction_c() >= a.contraction_c());
}

/// Two-layer net whose hidden units 1..4 sit near zero, so small noise
/// flips them often.
fn flippy_net() -> (Network, Dataset) {
    let mut r = rng(35);
    let mut w1 = vec![1.0, 1.0];
    for _ in 0..8 {
        w1.push(1e-4 * gaussian(&mut r));
    }
    let w1 = DenseMatrix::new(5, 2, w1).unwrap();
    let w2 = random_matrix(2, 5, &mut r);
    let net = Network::new(vec![w1, w2]).unwrap();
    let feats = (0..20)
        .map(|_| DenseVector::new(vec![r.gen_range(0.1..1.0), r.gen_range(0.1..1.0)]).unwrap())
        .collect();
    let labels = (0..20).map(|i| i % 2).collect();
    (net, Dataset::normalized(feats, labels, 2).unwrap())
}

fn smoothness_oracle(net: &Network, data: &Dataset, sigma: f64, trials: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let w2 = to_rows(net.layer(2));
    let mut obs = Vec::new();
    for (x, _) in data.iter() {
        let pre = forward_oracle(net, x.as_slice());
        let (x1, x2) = (&pre[0], &pre[1]);
        for _ in 0..trials {
            let z: Vec<f64> = (0..x1.len()).map(|_| gaussian(&mut r)).collect();
            let scale = sigma * l2(x1) / l2(&z);
            let eta: Vec<f64> = z.iter().map(|v| v * scale).collect();
            let moved: Vec<f64> = x1.iter().zip(&eta).map(|(a, b)| a + b).collect();
            let real = naive_matvec(&w2, &moved.iter().map(|v| v.max(0.0)).collect::<Vec<_>>());
            let lin = naive_matvec(
                &w2,
                &moved.iter().zip(x1).map(|(v, g)| if *g > 0.0 { *v } else { 0.0 }).collect::<Vec<_>>(),
            );
            let gap: Vec<f64> = real.iter().zip(&lin).map(|(a, b)| a - b).collect();
            obs.push(l2(&gap) * l2(x1) / (l2(&eta) * l2(x2)));
        }
    }
    obs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let pos = 0.5 * (obs.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let q = obs[lo] + (pos - lo as f64) * (obs[(lo + 1).min(obs.len() - 1)] - obs[lo]);
    1.0 / q
}

#[test]
fn smoothness_agrees_with_high_trial_oracle() {
    let (net, data) = flippy_net();
    let est = interlayer_smoothness(&net, &data, 1e-3, 200, 7).unwrap();
    assert!(est.rho_delta.is_finite());
    let oracle = smoothness_oracle(&net, &data, 1e-3, 2000, 8);
    assert!(rel_err(est.rho_delta, oracle) < 0.10, "{} vs {oracle}", est.rho_delta);
    assert_eq!(est, interlayer_smoothness(&net, &data, 1e-3, 200, 7).unwrap());
}
