//! Special cases of the robust methods that must collapse to ERM bit for
//! bit, and the identity case of NoiseCrop.

mod support;

use debias_core::bias::{Environment, EnvironmentKey, EnvironmentPartition};
use debias_core::dataset::{Label, MaskProvenance};
use debias_core::nn::{Classifier, Sgd, SmallCnn};
use debias_core::noisecrop::{noisecrop, BitMask, NoiseCropConfig};
use debias_core::seed::rng_for;
use debias_core::training::{
    erm_step, groupdro_step, rsc_step, train_on, Augmentation, Batch, GroupWeights, Method, TrainConfig,
};
use debias_core::ArtifactVector;
use image::RgbImage;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};

use support::{tiny_cnn, tiny_imageset};

fn bits(v: &[f32]) -> Vec<u32> {
    v.iter().map(|x| x.to_bits()).collect()
}

fn base_config(method: Method) -> TrainConfig {
    TrainConfig {
        method,
        learning_rate: 0.05,
        max_epochs: 4,
        batch_size: 16,
        model: tiny_cnn(),
        augmentation: Augmentation::standard(),
        seed: 11,
        ..TrainConfig::default()
    }
}

fn batches(n_batches: usize) -> Vec<Batch> {
    let data = tiny_imageset(n_batches * 12, 5);
    (0..n_batches)
        .map(|b| {
            let idx: Vec<usize> = (b * 12..(b + 1) * 12).collect();
            Batch {
                x: data.batch(&idx, None),
                labels: idx.iter().map(|&i| data.labels[i]).collect(),
            }
        })
        .collect()
}

#[test]
fn groupdro_step_with_one_environment_is_erm() {
    let key = EnvironmentKey::new(ArtifactVector::none(), Label::Benign);
    let mut erm = SmallCnn::new(tiny_cnn(), 3);
    let mut dro = erm.clone();
    let mut opt_e = Sgd::new(0.05, 0.9, 1e-3, erm.num_params());
    let mut opt_d = opt_e.clone();
    let mut q = GroupWeights::new(&[(key, 100)], 0.5, 2.0).unwrap();
    for batch in batches(6) {
        let keys = vec![key; batch.len()];
        let le = erm_step(&mut erm, &mut opt_e, &batch).unwrap();
        let ld = groupdro_step(&mut dro, &mut opt_d, &batch, &keys, &mut q).unwrap();
        assert_eq!(le.to_bits(), ld.to_bits());
        assert_eq!(q.q, vec![1.0]);
    }
    assert_eq!(bits(erm.params()), bits(dro.params()));
}

#[test]
fn rsc_step_without_muting_is_erm() {
    for (p, f) in [(0.0, 0.5), (33.0, 0.0), (0.0, 0.0)] {
        let mut erm = SmallCnn::new(tiny_cnn(), 4);
        let mut rsc = erm.clone();
        let mut opt_e = Sgd::new(0.05, 0.9, 1e-3, erm.num_params());
        let mut opt_r = opt_e.clone();
        let mut rng = rng_for(0, "test", "rsc");
        for batch in batches(6) {
            let le = erm_step(&mut erm, &mut opt_e, &batch).unwrap();
            let lr = rsc_step(&mut rsc, &mut opt_r, &batch, p, f, &mut rng).unwrap();
            assert_eq!(le.to_bits(), lr.to_bits());
        }
        assert_eq!(bits(erm.params()), bits(rsc.params()), "p={p} f={f}");
    }
}

#[test]
fn groupdro_training_with_one_environment_is_erm() {
    let mut data = tiny_imageset(96, 8);
    let key = EnvironmentKey::new(ArtifactVector::none(), Label::Benign);
    data.keys = vec![key; data.len()];
    let partition = EnvironmentPartition {
        environments: vec![Environment {
            key,
            ids: data.ids.clone(),
        }],
    };
    let erm = train_on(&data, None, &base_config(Method::Erm), None).unwrap();
    let dro_config = TrainConfig {
        adjustment: 3.0,
        eta_q: 0.2,
        ..base_config(Method::GroupDro)
    };
    let dro = train_on(&data, Some(&partition), &dro_config, None).unwrap();
    assert_eq!(bits(erm.model.params()), bits(dro.model.params()));
    assert_eq!(erm.best_epoch, dro.best_epoch);
    let auc = |r: &debias_core::training::TrainRun| r.metrics.iter().map(|m| m.val_auc.to_bits()).collect::<Vec<_>>();
    assert_eq!(auc(&erm), auc(&dro));
}

#[test]
fn rsc_training_without_muting_is_erm() {
    let data = tiny_imageset(96, 9);
    let erm = train_on(&data, None, &base_config(Method::Erm), None).unwrap();
    for (p, f) in [(0.0, 0.5), (33.0, 0.0)] {
        let config = TrainConfig {
            rsc_percentile: p,
            rsc_fraction: f,
            ..base_config(Method::Rsc)
        };
        let rsc = train_on(&data, None, &config, None).unwrap();
        assert_eq!(bits(erm.model.params()), bits(rsc.model.params()), "p={p} f={f}");
    }
}

#[test]
fn muting_changes_the_update() {
    let data = tiny_imageset(96, 9);
    let erm = train_on(&data, None, &base_config(Method::Erm), None).unwrap();
    let rsc = train_on(&data, None, &base_config(Method::Rsc), None).unwrap();
    assert_ne!(bits(erm.model.params()), bits(rsc.model.params()));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn full_frame_noisecrop_is_identity(w in 1u32..48, h in 1u32..48, seed in any::<u64>()) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let img = RgbImage::from_fn(w, h, |_, _| image::Rgb([rng.gen(), rng.gen(), rng.gen()]));
        let mask = BitMask::full(w, h, MaskProvenance::GroundTruth);
        // the canvas is square; a non-square frame is reproduced inside the letterbox
        let side = w.max(h);
        let config = NoiseCropConfig { output_size: side, seed, ..NoiseCropConfig::default() };
        let out = noisecrop(&img, &mask, &config, "x").unwrap();
        if w == h {
            prop_assert_eq!(out.image.as_raw(), img.as_raw());
        } else {
            let (px, py, pw, ph) = out.geometry.placed;
            prop_assert_eq!((pw, ph), (w, h));
            for (x, y, p) in img.enumerate_pixels() {
                prop_assert_eq!(out.image.get_pixel(px + x, py + y), p);
            }
        }
    }
}
