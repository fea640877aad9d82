mod common;

use common::*;
use mdnet_core::checkpoint::Checkpoint;
use mdnet_core::data::synth_blobs;
use mdnet_core::linalg::{DenseMatrix, DenseVector};
use mdnet_core::margin::{margin_stats, LossConfig, LossKind};
use mdnet_core::train::{evaluate, grid_search, train, Grid, TrainConfig};
use mdnet_core::{Dataset, Network};
use proptest::prelude::*;

fn blobs_cfg(loss: LossConfig) -> TrainConfig {
    TrainConfig {
        loss,
        layer_dims: vec![5, 16, 3],
        epochs: 200,
        batch_size: 16,
        learning_rate: 0.05,
        seed: 3,
        telemetry_every: 10,
        ..TrainConfig::default()
    }
}

#[test]
fn separable_blobs_reach_full_accuracy() {
    let data = synth_blobs(3, 5, 30, 8.0, 1).unwrap();
    let (net, history) = train(&blobs_cfg(LossConfig::mdnet(2.0, 0.5, 1.0)), &data, &data).unwrap();
    assert_eq!(history.last().unwrap().train_accuracy, 1.0);
    assert_eq!(evaluate(&net, &data).unwrap().0, 1.0);
    let epochs: Vec<usize> = history.records.iter().map(|r| r.epoch).collect();
    assert!(epochs.windows(2).all(|w| w[0] < w[1]));
    assert!(history.records.iter().all(|r| (0.0..=1.0).contains(&r.train_accuracy)));
}

#[test]
fn loss_drops_over_first_window() {
    let data = synth_blobs(3, 5, 30, 3.0, 2).unwrap();
    let mut cfg = blobs_cfg(LossConfig::mdnet(2.0, 0.5, 1.0));
    cfg.epochs = 20;
    cfg.telemetry_every = 1;
    let (_, h) = train(&cfg, &data, &data).unwrap();
    assert!(h.records[9].train_loss < h.records[0].train_loss);
}

#[test]
fn final_telemetry_matches_fresh_stats() {
    let data = synth_blobs(3, 5, 20, 3.0, 3).unwrap();
    let mut cfg = blobs_cfg(LossConfig::with_variant(LossKind::CrossEntropy));
    cfg.epochs = 15;
    cfg.telemetry_every = 4;
    let (net, h) = train(&cfg, &data, &data).unwrap();
    assert_eq!(h.last().unwrap().epoch, 15);
    assert_eq!(h.last().unwrap().margins, margin_stats(&net, &data).unwrap().summary());
}

#[test]
fn adaptive_theta_tracks_margin_spread() {
    let data = synth_blobs(3, 5, 20, 3.0, 4).unwrap();
    let mut cfg = blobs_cfg(LossConfig::mdnet(2.0, 0.5, 1.0));
    cfg.epochs = 6;
    cfg.telemetry_every = 1;
    cfg.adaptive_theta = true;
    let (_, h) = train(&cfg, &data, &data).unwrap();
    for rec in &h.records {
        assert!(rec.theta_used > 0.0 && rec.theta_used < 2.0);
    }
    assert!(h.records.windows(2).any(|w| w[0].theta_used != w[1].theta_used));
}

#[test]
fn telemetry_can_carry_bound_reports() {
    let data = synth_blobs(3, 5, 20, 6.0, 5).unwrap();
    let mut cfg = blobs_cfg(LossConfig::mdnet(2.0, 0.5, 1.0));
    cfg.epochs = 4;
    cfg.telemetry_every = 2;
    cfg.telemetry_bounds = true;
    let (_, h) = train(&cfg, &data, &data).unwrap();
    assert!(h.records.iter().all(|r| r.bounds.is_some()));
}

#[test]
fn evaluate_matches_per_sample_loop() {
    let mut r = rng(60);
    let net = random_net(&[4, 7, 3], &mut r);
    let data = random_dataset(150, 4, 3, &mut r);
    let (acc, stats) = evaluate(&net, &data).unwrap();
    let mut errors = 0;
    for (x, y) in data.iter() {
        let s = scores_oracle(&net, x.as_slice());
        let mut best = 0;
        for (j, v) in s.iter().enumerate() {
            if *v > s[best] {
                best = j;
            }
        }
        if best != y {
            errors += 1;
        }
    }
    let l0 = errors as f64 / data.len() as f64;
    assert_eq!(acc, (data.len() - errors) as f64 / data.len() as f64);
    assert_eq!(acc + l0, 1.0);
    assert_eq!(stats.margins.len(), 150);
    assert!(evaluate(&net, &Dataset::new(vec![], vec![], 3, 1.0).unwrap()).is_err());
}

#[test]
fn identity_net_classifies_one_hot_inputs() {
    let net = Network::new(vec![DenseMatrix::identity(3)]).unwrap();
    let feats = (0..3).map(|i| DenseVector::basis(3, i)).collect();
    let data = Dataset::new(feats, vec![0, 1, 2], 3, 1.0).unwrap();
    assert_eq!(evaluate(&net, &data).unwrap().0, 1.0);
}

#[test]
fn grid_search_contracts() {
    let data = synth_blobs(3, 5, 20, 3.0, 7).unwrap();
    let mut base = blobs_cfg(LossConfig::mdnet(2.0, 0.5, 1.0));
    base.epochs = 5;

    let single = Grid { r: vec![1.0], theta: vec![0.3], eta: vec![2.0] };
    let res = grid_search(&base, &single, &data, 15).unwrap();
    assert_eq!(res.table.len(), 1);
    assert_eq!((res.best.loss.r, res.best.loss.theta, res.best.loss.eta), (1.0, 0.3, 2.0));

    let grid = Grid { r: vec![1.0, 2.0], theta: vec![0.5, 1.5], eta: vec![0.5, 1.0] };
    let res = grid_search(&base, &grid, &data, 15).unwrap();
    assert_eq!(res.table.len(), 8);
    // θ ≥ r is rejected up front
    let invalid: Vec<_> = res.table.iter().filter(|row| !row.valid).collect();
    assert_eq!(invalid.len(), 2);
    assert!(invalid.iter().all(|row| row.theta >= row.r && row.val_accuracy.is_none()));
    let best_acc = res.table.iter().filter_map(|row| row.val_accuracy).fold(f64::NEG_INFINITY, f64::max);
    let first_best = res.table.iter().position(|row| row.val_accuracy == Some(best_acc)).unwrap();
    assert_eq!(res.best_row, first_best);
    assert_eq!(res.best.loss.r, res.table[first_best].r);

    let all_bad = Grid { r: vec![1.0], theta: vec![2.0], eta: vec![1.0] };
    assert!(grid_search(&base, &all_bad, &data, 15).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn checkpoint_round_trip_is_bit_exact(
        dims in prop::collection::vec(1usize..6, 2..5),
        values in prop::collection::vec(any::<f64>().prop_filter("finite", |v| v.is_finite()), 200),
        epoch in prop::option::of(0usize..1000),
    ) {
        let mut it = values.iter().cycle();
        let weights = dims
            .windows(2)
            .map(|p| DenseMatrix::new(p[1], p[0], (0..p[0] * p[1]).map(|_| *it.next().unwrap()).collect()).unwrap())
            .collect();
        let ck = Checkpoint::new(Network::new(weights).unwrap(), epoch);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.json");
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        for (a, b) in back.network.weights().iter().zip(ck.network.weights()) {
            let bits = |m: &DenseMatrix| m.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            prop_assert_eq!(bits(a), bits(b));
        }
        prop_assert_eq!(back.epoch, epoch);
    }
}
