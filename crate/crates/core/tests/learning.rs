mod common;

use common::{normals, rng, smooth_map};
use mcncc::correlate::mcncc as mcncc_score;
use mcncc::eval::synth::{generate, Benchmark, BenchmarkConfig};
use mcncc::eval::{patch_retrieval_protocol, retrieval_run, PatchProtocol};
use mcncc::learn::{
    k_fold, loss_backward, loss_forward, train, HingeForm, Pair, PairBatch, Regime, TrainConfig,
    WeightInit,
};
use mcncc::whiten::{fit_cca, Ridge, Samples};
use mcncc::{FeatureMap, NormalizationScheme, Scorer, SiameseModel, SupportRegion};

fn held_out_map(b: &Benchmark<f64>, m: &SiameseModel<f64>) -> f64 {
    let q: Vec<_> = b.queries.iter().map(|q| m.project_x(&q.map).unwrap()).collect();
    let d: Vec<_> = b.database.iter().map(|x| m.project_y(x).unwrap()).collect();
    retrieval_run(&q, &b.query_groups(), &d, &b.db_groups, &b.alignment, &m.scorer())
        .unwrap()
        .mean_ap
}

/// Positives share a smooth pattern in channel 0 only; channel 1 is unrelated noise.
fn separable_pairs(seed: u64, n: usize) -> PairBatch<f64> {
    let mut r = rng(seed);
    let pairs = (0..n)
        .map(|i| {
            let x = smooth_map(&mut r, 2, 8, 8, 1.0);
            let z = if i % 2 == 0 { 1 } else { -1 };
            let other = smooth_map(&mut r, 2, 8, 8, 1.0);
            let noise = normals(&mut r, 64);
            let y = FeatureMap::from_fn(2, 8, 8, |c, row, col| {
                if c == 0 && z == 1 {
                    x.get(0, row, col) + 0.05 * noise[row * 8 + col]
                } else {
                    other.get(c, row, col)
                }
            })
            .unwrap();
            Pair::new(x, y, z).unwrap()
        })
        .collect();
    PairBatch::new(pairs).unwrap()
}

#[test]
fn margin_hinge_with_learned_bias_separates_pairs() {
    let data = separable_pairs(21, 40);
    let model = SiameseModel::identity(2)
        .with_regularization(0.01, 0.0)
        .with_hinge(HingeForm::Margin);
    let mut cfg = TrainConfig::new(Regime::WeightsOnly);
    cfg.freeze.bias = false;
    cfg.epochs = 60;
    cfg.batch_size = 8;
    let report = train(model, &data, None, &cfg).unwrap();
    let m = report.model;
    assert!(m.weights.weights[0] > m.weights.weights[1].abs());

    let held = separable_pairs(22, 40);
    for p in data.pairs().iter().chain(held.pairs()) {
        assert_eq!(m.classify(&p.x, &p.y).unwrap(), p.z == 1);
    }
}

#[test]
fn joint_training_improves_held_out_retrieval() {
    let cfg = BenchmarkConfig {
        groups: 30,
        seed: 3,
        ..Default::default()
    };
    let b = generate::<f64>(&cfg).unwrap();
    let (train_set, test_set) = b.split_groups(15);
    let (fit_set, val_set) = train_set.split_groups(12);
    let pairs = fit_set.training_pairs(3).unwrap();
    let val = val_set.training_pairs(4).unwrap();
    let (sx, sy) = Samples::paired_pixels(
        pairs.pairs().iter().filter(|p| p.z == 1).map(|p| (&p.x, &p.y)),
    )
    .unwrap();
    let fit = fit_cca::<f64>(&sx, &sy, 2 * cfg.orientations, Ridge::default()).unwrap();
    let init = SiameseModel::from_projections(fit.proj_x, fit.proj_y)
        .unwrap()
        .with_regularization(100.0, 1.0)
        .with_regime(Regime::Joint);

    let base = held_out_map(&test_set, &SiameseModel::identity(cfg.channels()));
    let report = train(init.clone(), &pairs, Some(&val), &TrainConfig::new(Regime::Joint)).unwrap();
    assert!(report.best_epoch > 0);
    assert_ne!(report.model.proj_x, init.proj_x);
    let tuned = held_out_map(&test_set, &report.model);
    assert!(tuned > base, "untrained {base:.3}, joint {tuned:.3}");
}

#[test]
fn uniform_weights_reduce_loss_to_mcncc_hinge() {
    let data = separable_pairs(23, 12);
    for (hinge, bias) in [(HingeForm::Printed, 0.0), (HingeForm::Printed, 0.3), (HingeForm::Margin, -0.2)] {
        let mut m = SiameseModel::identity(2).with_regularization(0.0, 0.0).with_hinge(hinge);
        m.weights.bias = bias;
        let expect: f64 = data
            .pairs()
            .iter()
            .map(|p| {
                let s = mcncc_score(&p.x, &p.y, &SupportRegion::full(&p.x), m.epsilon).unwrap();
                let z = f64::from(p.z);
                let arg = match hinge {
                    HingeForm::Printed => 1.0 - z * s + bias,
                    HingeForm::Margin => 1.0 - z * (s - bias),
                };
                arg.max(0.0)
            })
            .sum();
        let got = loss_forward(&data, &m).unwrap();
        assert!((got - expect).abs() < 1e-12, "{hinge}: {got} vs {expect}");
    }
}

#[test]
fn printed_bias_gradient_counts_active_pairs() {
    let data = separable_pairs(24, 16);
    let mut m = SiameseModel::identity(2).with_regularization(0.0, 0.0);
    for bias in [-0.5, 0.0, 0.4] {
        m.weights.bias = bias;
        let active = data
            .pairs()
            .iter()
            .filter(|p| m.margin(m.score(&p.x, &p.y).unwrap(), f64::from(p.z)) > 0.0)
            .count();
        let g = loss_backward(&data, &m).unwrap();
        assert_eq!(g.bias, active as f64);
    }
}

#[test]
fn zero_epochs_return_the_initial_model() {
    let data = separable_pairs(25, 8);
    let model = SiameseModel::identity(2).with_regularization(1.0, 1.0);
    let mut cfg = TrainConfig::new(Regime::WeightsOnly);
    cfg.epochs = 0;
    cfg.weight_init = Some(WeightInit::Given(vec![3.0, -1.0]));
    let report = train(model.clone(), &data, None, &cfg).unwrap();
    assert_eq!(report.model, model);
    assert_eq!(report.best_epoch, 0);
    assert!(report.history.is_empty());
}

#[test]
fn channel_normalization_beats_raw_on_patch_queries() {
    let mut r = rng(26);
    let (groups, c) = (12, 3);
    let mut items = vec![];
    let mut labels = vec![];
    for g in 0..groups {
        let latent = smooth_map(&mut r, c, 24, 24, 1.5);
        for _ in 0..2 {
            // Per-item, per-channel gain and offset hide the shared pattern from raw products.
            let gains: Vec<f64> = normals(&mut r, c).iter().map(|v| 0.5 + v.abs()).collect();
            let offsets: Vec<f64> = normals(&mut r, c).iter().map(|v| 5.0 * v).collect();
            let noise = normals(&mut r, c * 24 * 24);
            let item = FeatureMap::from_fn(c, 24, 24, |ch, row, col| {
                gains[ch] * latent.get(ch, row, col)
                    + offsets[ch]
                    + 0.02 * noise[(ch * 24 + row) * 24 + col]
            })
            .unwrap();
            items.push(item);
            labels.push(g);
        }
    }
    let protocol = PatchProtocol {
        patch_size: 10,
        n_queries: 24,
        seed: 1,
        stride: 2,
    };
    let ours = patch_retrieval_protocol(&items, &labels, &protocol, &Scorer::mcncc()).unwrap();
    let raw = patch_retrieval_protocol(
        &items,
        &labels,
        &protocol,
        &Scorer::scheme(NormalizationScheme::RAW),
    )
    .unwrap();
    assert_eq!(ours.queries.len(), 24);
    assert!(ours.mean_ap > raw.mean_ap + 0.2, "mcncc {} vs raw {}", ours.mean_ap, raw.mean_ap);
}

#[test]
fn k_fold_partitions_indices() {
    let folds = k_fold(17, 4, 9).unwrap();
    assert_eq!(folds.len(), 4);
    let mut seen = vec![0; 17];
    for (tr, va) in &folds {
        assert_eq!(tr.len() + va.len(), 17);
        assert!(va.len() == 4 || va.len() == 5);
        for &i in va {
            seen[i] += 1;
            assert!(!tr.contains(&i));
        }
    }
    assert!(seen.iter().all(|&n| n == 1));
    assert_eq!(folds, k_fold(17, 4, 9).unwrap());
    assert!(k_fold(3, 1, 0).is_err());
    assert!(k_fold(3, 4, 0).is_err());
}
