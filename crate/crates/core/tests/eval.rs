mod support;

use std::collections::BTreeMap;
use std::fs;

use debias_core::bias::{build_environments, build_trap_split, correlation_report};
use debias_core::dataset::{generate_synthetic, ArtifactBias, SyntheticConfig};
use debias_core::eval::{
    aggregate, artifact_prevalence, combine_channels, evaluate_external, layer_tag, predict_tta, render_report,
    run_trap_sweep, scorecam, Arm, ExternalConfig, ReportInputs, SweepCell, SweepConfig, DEFAULT_TTA_REPLICAS,
};
use debias_core::nn::{positive_probability, Classifier, SmallCnn, Tensor4};
use debias_core::noisecrop::NoiseCropConfig;
use debias_core::training::{train, Augmentation, Method, TrainConfig};
use debias_core::Artifact;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};

use support::{auc_oracle, scorecam_oracle, tiny_cnn, tiny_imageset};

#[test]
fn single_identity_replica_is_the_plain_forward_pass() {
    let images = tiny_imageset(40, 1);
    let model = SmallCnn::new(tiny_cnn(), 5);
    let set = predict_tta(&model, &images, 1, &Augmentation::identity(), 9, false).unwrap();
    let x = Tensor4::stack(
        images.h,
        images.w,
        images.c,
        (0..images.len()).map(|i| images.sample(i)),
    );
    let plain: Vec<f32> = model.forward(&x).chunks_exact(2).map(positive_probability).collect();
    assert_eq!(set.probabilities, plain);
    assert_eq!(set.ids, images.ids);
    assert_eq!(set.n_replicas, 1);
}

#[test]
fn tta_defaults_to_fifty_replicas() {
    assert_eq!(DEFAULT_TTA_REPLICAS, 50);
    assert_eq!(ExternalConfig::default().tta_replicas, 50);
    assert_eq!(SweepConfig::default().tta_replicas, 50);
}

#[test]
fn tta_rejects_zero_replicas() {
    let images = tiny_imageset(6, 1);
    let model = SmallCnn::new(tiny_cnn(), 5);
    assert!(predict_tta(&model, &images, 0, &Augmentation::standard(), 0, false).is_err());
}

#[test]
fn tta_is_deterministic_and_independent_of_the_image_set() {
    let images = tiny_imageset(30, 2);
    let model = SmallCnn::new(tiny_cnn(), 6);
    let aug = Augmentation::standard();
    let a = predict_tta(&model, &images, 4, &aug, 3, false).unwrap();
    let b = predict_tta(&model, &images, 4, &aug, 3, false).unwrap();
    assert_eq!(a, b);
    let mut head = images.clone();
    let keep = 7;
    head.ids.truncate(keep);
    head.labels.truncate(keep);
    head.keys.truncate(keep);
    head.inputs.truncate(keep * images.sample_len());
    let c = predict_tta(&model, &head, 4, &aug, 3, false).unwrap();
    assert_eq!(c.probabilities[..], a.probabilities[..keep]);
    assert!(a.probabilities.iter().all(|p| (0.0..=1.0).contains(p)));
}

#[test]
fn averaging_replicas_reduces_variance_across_seeds() {
    let images = tiny_imageset(24, 3);
    let model = SmallCnn::new(tiny_cnn(), 7);
    let aug = Augmentation::standard();
    let runs = |n: usize| -> Vec<Vec<f64>> {
        (0..20u64)
            .map(|s| {
                let p = predict_tta(&model, &images, n, &aug, 100 + s, false).unwrap();
                p.probabilities.iter().map(|&v| f64::from(v)).collect()
            })
            .collect()
    };
    let mean_variance = |runs: &[Vec<f64>]| {
        let k = runs.len() as f64;
        (0..images.len())
            .map(|i| {
                let m = runs.iter().map(|r| r[i]).sum::<f64>() / k;
                runs.iter().map(|r| (r[i] - m).powi(2)).sum::<f64>() / (k - 1.0)
            })
            .sum::<f64>()
            / images.len() as f64
    };
    let single = mean_variance(&runs(1));
    let averaged = mean_variance(&runs(10));
    assert!(single > 0.0);
    assert!(averaged <= single, "averaged {averaged} vs single {single}");
}

#[test]
fn tta_auc_matches_pairwise_count() {
    let images = tiny_imageset(50, 4);
    let model = SmallCnn::new(tiny_cnn(), 8);
    let set = predict_tta(&model, &images, 3, &Augmentation::standard(), 0, false).unwrap();
    let oracle = auc_oracle(&set.probabilities, &set.labels).unwrap();
    assert!((set.auc().unwrap() - oracle).abs() < 1e-9);
}

fn assert_close(a: &[f32], b: &[f64], tol: f64) {
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(b) {
        assert!((f64::from(*x) - y).abs() < tol, "{x} vs {y}");
    }
}

#[test]
fn single_channel_map_is_its_normalized_relu() {
    let chan = vec![-1.0f32, 0.5, 2.0, 0.0, 1.0, -0.2];
    let (map, all_zero) = combine_channels(std::slice::from_ref(&chan), &[0.37]);
    assert!(!all_zero);
    let expect: Vec<f64> = chan.iter().map(|&v| f64::from(v).max(0.0) / 2.0).collect();
    assert_close(&map, &expect, 1e-7);
}

#[test]
fn two_hand_set_channels_match_the_formula() {
    let a = vec![1.0f32, 0.0, -0.5, 2.0];
    let b = vec![0.0f32, 3.0, 1.0, -1.0];
    let scores = [0.2, 0.9];
    let (map, _) = combine_channels(&[a.clone(), b.clone()], &scores);
    assert_close(&map, &scorecam_oracle(&[a, b], &scores), 1e-6);
}

#[test]
fn non_positive_activations_give_a_flagged_zero_map() {
    let (map, all_zero) = combine_channels(&[vec![-1.0, -2.0, 0.0]], &[0.5]);
    assert!(all_zero);
    assert!(map.iter().all(|&v| v == 0.0));
}

/// Bilinear resize with half-pixel centers, written out per output pixel.
fn upsample_oracle(src: &[f32], sh: usize, sw: usize, dh: usize, dw: usize) -> Vec<f32> {
    let at = |y: f64, x: f64| {
        let y = y.clamp(0.0, (sh - 1) as f64);
        let x = x.clamp(0.0, (sw - 1) as f64);
        let (y0, x0) = (y.floor() as usize, x.floor() as usize);
        let (y1, x1) = ((y0 + 1).min(sh - 1), (x0 + 1).min(sw - 1));
        let (ty, tx) = (y - y0 as f64, x - x0 as f64);
        let v = |yy: usize, xx: usize| f64::from(src[yy * sw + xx]);
        (v(y0, x0) * (1.0 - tx) + v(y0, x1) * tx) * (1.0 - ty) + (v(y1, x0) * (1.0 - tx) + v(y1, x1) * tx) * ty
    };
    let mut out = Vec::new();
    for y in 0..dh {
        for x in 0..dw {
            let sy = (y as f64 + 0.5) * sh as f64 / dh as f64 - 0.5;
            let sx = (x as f64 + 0.5) * sw as f64 / dw as f64 - 0.5;
            out.push(at(sy, sx) as f32);
        }
    }
    out
}

#[test]
fn scorecam_matches_a_direct_recomputation() {
    let images = tiny_imageset(3, 11);
    let model = SmallCnn::new(tiny_cnn(), 12);
    let (h, w, c) = (images.h, images.w, images.c);
    let x = Tensor4::stack(h, w, c, [images.sample(1)]);
    for block in 0..model.num_blocks() {
        let acts = model.block_activations(&x, block);
        let chans: Vec<Vec<f32>> = (0..acts.c)
            .map(|k| {
                let g: Vec<f32> = (0..acts.h * acts.w).map(|p| acts.data[p * acts.c + k]).collect();
                upsample_oracle(&g, acts.h, acts.w, h, w)
            })
            .collect();
        let scores: Vec<f64> = chans
            .iter()
            .map(|u| {
                let lo = u.iter().copied().fold(f32::INFINITY, f32::min);
                let hi = u.iter().copied().fold(f32::NEG_INFINITY, f32::max);
                let m: Vec<f32> = u
                    .iter()
                    .map(|&v| if hi > lo { (v - lo) / (hi - lo) } else { 0.0 })
                    .collect();
                let data: Vec<f32> = (0..h * w * c).map(|i| x.data[i] * m[i / c]).collect();
                let masked = Tensor4 { n: 1, h, w, c, data };
                f64::from(positive_probability(&model.forward(&masked)))
            })
            .collect();
        let map = scorecam(&model, &x, Some(block), 1).unwrap();
        assert_eq!(map.layer, layer_tag(block));
        assert_eq!((map.width, map.height), (w, h));
        assert_close(&map.values, &scorecam_oracle(&chans, &scores), 1e-5);
    }
    let default = scorecam(&model, &x, None, 1).unwrap();
    assert_eq!(default.layer, layer_tag(model.num_blocks() - 1));
}

#[test]
fn scorecam_rejects_bad_requests() {
    let images = tiny_imageset(2, 1);
    let model = SmallCnn::new(tiny_cnn(), 1);
    let one = Tensor4::stack(8, 8, 3, [images.sample(0)]);
    let two = Tensor4::stack(8, 8, 3, [images.sample(0), images.sample(1)]);
    assert!(scorecam(&model, &two, None, 1).is_err());
    assert!(scorecam(&model, &one, None, 2).is_err());
    assert!(scorecam(&model, &one, Some(model.num_blocks()), 1).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn channel_score_shifts_leave_the_map_unchanged(
        chans in prop::collection::vec(prop::collection::vec(-3.0f32..3.0, 12), 1..5),
        base in prop::collection::vec(-5.0f64..5.0, 5),
        shift in -50.0f64..50.0,
    ) {
        let scores = &base[..chans.len()];
        let shifted: Vec<f64> = scores.iter().map(|s| s + shift).collect();
        let (a, za) = combine_channels(&chans, scores);
        let (b, zb) = combine_channels(&chans, &shifted);
        prop_assert_eq!(za, zb);
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-6);
        }
        prop_assert!(a.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn scorecam_maps_are_normalized_and_non_negative(seed in 0u64..1000, class in 0usize..2) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let model = SmallCnn::new(tiny_cnn(), seed);
        let data: Vec<f32> = (0..8 * 8 * 3).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let x = Tensor4 { n: 1, h: 8, w: 8, c: 3, data };
        let block = rng.gen_range(0..model.num_blocks());
        let map = scorecam(&model, &x, Some(block), class).unwrap();
        prop_assert!(map.values.iter().all(|&v| (0.0..=1.0).contains(&v)));
        let max = map.values.iter().copied().fold(0.0f32, f32::max);
        if map.all_zero {
            prop_assert_eq!(max, 0.0);
        } else {
            prop_assert!((max - 1.0).abs() < 1e-6);
        }
    }
}

fn oracle_mean_stderr(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mut sum = 0.0;
    for x in v {
        sum += x;
    }
    let mean = sum / n;
    if v.len() == 1 {
        return (mean, 0.0);
    }
    let mut ss = 0.0;
    for x in v {
        ss += (x - mean).powi(2);
    }
    (mean, (ss / (n - 1.0) / n).sqrt())
}

fn tiny_train() -> TrainConfig {
    TrainConfig {
        max_epochs: 2,
        patience: 2,
        batch_size: 16,
        model: tiny_cnn(),
        ..TrainConfig::default()
    }
}

#[test]
fn tiny_sweep_aggregates_recompute_from_cells() {
    let data = tempfile::tempdir().unwrap();
    let manifest = generate_synthetic(
        &SyntheticConfig {
            image_size: 16,
            ..SyntheticConfig::three_targeted(160, 4)
        },
        data.path(),
    )
    .unwrap();
    let config = SweepConfig {
        sweep_id: "tiny".into(),
        factors: vec![0.0, 1.0],
        arms: vec![Arm::new(Method::Erm, false), Arm::new(Method::Erm, true)],
        n_seeds: 2,
        swap_budget: 200,
        tta_replicas: 2,
        train: tiny_train(),
        ..SweepConfig::default()
    };
    let out = tempfile::tempdir().unwrap();
    let result = run_trap_sweep(&manifest, &config, out.path()).unwrap();
    assert_eq!(result.cells.len(), 8);
    assert!(result.cells.iter().all(|c| c.error.is_none()), "{:?}", result.cells);
    assert_eq!(result.aggregates.len(), 4);
    for agg in &result.aggregates {
        let mut seeds: Vec<&SweepCell> = result
            .cells
            .iter()
            .filter(|c| c.factor == agg.factor && c.arm == agg.arm)
            .collect();
        seeds.sort_by_key(|c| c.seed);
        let aucs: Vec<f64> = seeds.iter().filter_map(|c| c.auc).collect();
        let (mean, stderr) = oracle_mean_stderr(&aucs);
        assert_eq!(agg.n_seeds, 2);
        assert_eq!(agg.mean, Some(mean));
        assert_eq!(agg.stderr, Some(stderr));
    }
    for name in ["sweep.json", "cells.csv", "aggregate.csv", "sweep_config.json"] {
        assert!(out.path().join(name).is_file(), "{name}");
    }
    let cell = out.path().join("1.00/erm+noisecrop/1");
    assert!(cell.join("cell.json").is_file() && cell.join("predictions.csv").is_file());

    let report = tempfile::tempdir().unwrap();
    let files = render_report(
        &ReportInputs {
            sweep: Some(result),
            correlations: Vec::new(),
            external: Vec::new(),
            saliency: Vec::new(),
        },
        report.path(),
    )
    .unwrap();
    for name in ["sweep_original.svg", "sweep_noisecrop.svg", "sweep_auc.csv"] {
        assert!(report.path().join(name).is_file(), "{name}");
    }
    let index = fs::read_to_string(files.index).unwrap();
    assert!(!index.contains("Saliency"));
}

#[test]
fn default_preset_aggregates_over_ten_seeds() {
    let config = SweepConfig::default();
    assert_eq!(config.n_seeds, 10);
    assert_eq!(config.factors, vec![0.0, 0.5, 0.7, 0.9, 1.0]);
    assert_eq!(config.arms.len(), 6);
    let aucs: Vec<f64> = (0..config.n_seeds).map(|s| 0.5 + 0.03 * (s as f64).sin()).collect();
    let arm = Arm::new(Method::GroupDro, true);
    let cells: Vec<SweepCell> = aucs
        .iter()
        .enumerate()
        .rev()
        .map(|(seed, &a)| SweepCell {
            factor: 1.0,
            arm,
            seed,
            auc: Some(a),
            error: None,
        })
        .collect();
    let agg = &aggregate(&cells)[0];
    let (mean, stderr) = oracle_mean_stderr(&aucs);
    assert_eq!(agg.n_seeds, 10);
    assert_eq!(agg.mean, Some(mean));
    assert_eq!(agg.stderr, Some(stderr));
}

#[test]
fn correlation_report_renders_csv_and_shaded_table() {
    let data = tempfile::tempdir().unwrap();
    let manifest = generate_synthetic(&SyntheticConfig::with_defaults(300, 2), data.path()).unwrap();
    let ids = manifest.ids();
    let report = correlation_report(&manifest, &[("all", &ids)]).unwrap();
    let out = tempfile::tempdir().unwrap();
    let files = render_report(
        &ReportInputs {
            sweep: None,
            correlations: vec![report.clone()],
            external: Vec::new(),
            saliency: Vec::new(),
        },
        out.path(),
    )
    .unwrap();
    assert_eq!(
        fs::read_to_string(out.path().join("correlations_0.csv")).unwrap(),
        report.to_csv()
    );
    let index = fs::read_to_string(files.index).unwrap();
    assert!(index.contains("<td style=\"background:"));
    assert!(!index.contains("Saliency"));
    assert!(!index.contains("Sweep"));
}

#[test]
fn empty_report_is_rejected() {
    let out = tempfile::tempdir().unwrap();
    let inputs = ReportInputs {
        sweep: None,
        correlations: Vec::new(),
        external: Vec::new(),
        saliency: Vec::new(),
    };
    assert!(render_report(&inputs, out.path()).is_err());
}

#[test]
fn external_evaluation_reports_prevalence_and_model_aucs() {
    let data = tempfile::tempdir().unwrap();
    let manifest = generate_synthetic(
        &SyntheticConfig {
            image_size: 16,
            ..SyntheticConfig::with_defaults(120, 6)
        },
        data.path(),
    )
    .unwrap();
    let models = vec![SmallCnn::new(tiny_cnn(), 1), SmallCnn::new(tiny_cnn(), 2)];
    let config = ExternalConfig {
        tta_replicas: 2,
        noisecrop: Some(NoiseCropConfig {
            output_size: 16,
            ..NoiseCropConfig::default()
        }),
        ..ExternalConfig::default()
    };
    let before = fs::read(manifest.root().join("manifest.csv")).unwrap();
    let work = tempfile::tempdir().unwrap();
    let report = evaluate_external(&models, &manifest, &config, work.path(), None).unwrap();
    assert_eq!(fs::read(manifest.root().join("manifest.csv")).unwrap(), before);
    assert!(report.noisecrop);
    assert_eq!(report.n_samples, 120);
    assert_eq!(report.models.len(), 2);
    let mean = (report.models[0].auc + report.models[1].auc) / 2.0;
    assert!((report.mean_auc - mean).abs() < 1e-12);
    for k in 0..2 {
        assert!(work.path().join(format!("predictions_{k}.csv")).is_file());
    }
    assert!(work.path().join("eval.json").is_file());
    assert_eq!(
        fs::read_to_string(work.path().join("prevalence.csv")).unwrap(),
        report.prevalence_csv()
    );

    // prevalence from a direct count
    for row in artifact_prevalence(&manifest) {
        let has: Vec<(bool, bool)> = manifest
            .records
            .iter()
            .map(|r| (r.artifacts.has(row.artifact), r.label.index() == 1))
            .collect();
        let share = |f: &dyn Fn(&(bool, bool)) -> bool| {
            let pool: Vec<_> = has.iter().filter(|p| f(p)).collect();
            pool.iter().filter(|p| p.0).count() as f64 / pool.len() as f64
        };
        assert_eq!(row.overall, share(&|_| true));
        assert_eq!(row.melanoma, share(&|p| p.1));
        assert_eq!(row.benign, share(&|p| !p.1));
    }
    assert_eq!(report.prevalence, artifact_prevalence(&manifest));
}

#[test]
fn debiased_model_is_not_worse_on_an_external_set_with_training_artifacts() {
    let data = tempfile::tempdir().unwrap();
    let manifest = generate_synthetic(&SyntheticConfig::three_targeted(1500, 21), data.path()).unwrap();
    let split = build_trap_split(&manifest, 1.0, 0.2, 0, 2000).unwrap();
    let envs = build_environments(&manifest, &split.train_ids).unwrap();
    let base = TrainConfig {
        max_epochs: 20,
        ..TrainConfig::default()
    };
    let erm = train(&manifest, &split.train_ids, None, &base, None).unwrap().model;
    let dro_config = TrainConfig {
        method: Method::GroupDro,
        ..base
    };
    let dro = train(&manifest, &split.train_ids, Some(&envs), &dro_config, None)
        .unwrap()
        .model;

    // same artifact types, correlations reversed as in the trap test
    let external_dir = tempfile::tempdir().unwrap();
    let flipped: BTreeMap<Artifact, ArtifactBias> = SyntheticConfig::three_targeted(0, 0)
        .artifacts
        .into_iter()
        .map(|(a, b)| {
            (
                a,
                ArtifactBias {
                    correlation: -b.correlation,
                    ..b
                },
            )
        })
        .collect();
    let external = generate_synthetic(
        &SyntheticConfig {
            name: "external".into(),
            artifacts: flipped,
            ..SyntheticConfig::three_targeted(600, 77)
        },
        external_dir.path(),
    )
    .unwrap();
    let plain = ExternalConfig {
        tta_replicas: 5,
        ..ExternalConfig::default()
    };
    let censored = ExternalConfig {
        noisecrop: Some(NoiseCropConfig {
            output_size: 32,
            ..NoiseCropConfig::default()
        }),
        ..plain.clone()
    };
    let work = tempfile::tempdir().unwrap();
    let erm_auc = evaluate_external(&[erm], &external, &plain, &work.path().join("erm"), None)
        .unwrap()
        .mean_auc;
    let dro_auc = evaluate_external(&[dro], &external, &censored, &work.path().join("dro"), None)
        .unwrap()
        .mean_auc;
    eprintln!("external AUC: ERM {erm_auc:.3}, GroupDRO+NoiseCrop {dro_auc:.3}");
    assert!(dro_auc >= erm_auc, "GroupDRO+NoiseCrop {dro_auc} vs ERM {erm_auc}");
}
