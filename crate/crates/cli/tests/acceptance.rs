//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any
//! failure. Pass criterion numbers as arguments to run a subset.

#[path = "../../core/tests/support/mod.rs"]
mod support;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use debias_core::bias::{
    build_trap_split, spearman_binary, Environment, EnvironmentKey, EnvironmentPartition, DEFAULT_SWAP_BUDGET,
};
use debias_core::dataset::{generate_synthetic, read_gray, read_rgb, Label, MaskProvenance, SyntheticConfig};
use debias_core::eval::{
    aggregate, roc_auc, run_trap_sweep, Arm, ExternalConfig, SweepCell, SweepConfig, DEFAULT_TTA_REPLICAS,
};
use debias_core::nn::Classifier;
use debias_core::noisecrop::{convex_hull, noisecrop, BitMask, NoiseCropConfig};
use debias_core::training::{grid_search_on, train_on, Augmentation, GridSpec, GroupWeights, Method, TrainConfig};
use debias_core::{Artifact, ArtifactVector};
use image::RgbImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use support::{
    auc_oracle, bilinear_oracle, hull_oracle, pearson, phi_oracle, spearman_oracle, tiny_cnn, tiny_imageset,
};

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn bits(v: &[f32]) -> Vec<u32> {
    v.iter().map(|x| x.to_bits()).collect()
}

// 1. oracle equivalences

fn criterion_1() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for case in 0..1000 {
        let n = rng.gen_range(2..80);
        let x: Vec<bool> = (0..n).map(|_| rng.gen()).collect();
        let y: Vec<bool> = (0..n).map(|_| rng.gen()).collect();
        match (spearman_binary(&x, &y), spearman_oracle(&x, &y), phi_oracle(&x, &y)) {
            (Ok(v), Some(s), Some(p)) => worst = worst.max((v - s).abs()).max((v - p).abs()),
            (Err(_), None, None) => {}
            (got, s, p) => return Err(format!("spearman case {case}: {got:?} vs {s:?} / {p:?}")),
        }
    }
    ensure(worst < 1e-9, || format!("spearman error {worst:e}"))?;
    let spearman_worst = worst;

    let mut worst = 0.0f64;
    let mut tied_cases = 0;
    let mut case = 0;
    while case < 500 {
        let n = rng.gen_range(2..60);
        let levels = rng.gen_range(2..15u8);
        let scores: Vec<f32> = (0..n).map(|_| f32::from(rng.gen_range(0..levels)) / 7.0).collect();
        let labels: Vec<bool> = (0..n).map(|_| rng.gen()).collect();
        let Some(oracle) = auc_oracle(&scores, &labels) else {
            continue;
        };
        let got = roc_auc(&scores, &labels).map_err(|e| e.to_string())?;
        worst = worst.max((got - oracle).abs());
        if scores.iter().map(|s| s.to_bits()).collect::<BTreeSet<_>>().len() < scores.len() {
            tied_cases += 1;
        }
        case += 1;
    }
    ensure(worst < 1e-9, || format!("AUC error {worst:e}"))?;
    ensure(tied_cases > 0, || "no AUC case with ties".into())?;
    let auc_worst = worst;

    for case in 0..100 {
        let (w, h) = (rng.gen_range(1..=32usize), rng.gen_range(1..=32usize));
        let mut grid = vec![false; w * h];
        for _ in 0..rng.gen_range(1..25) {
            grid[rng.gen_range(0..h) * w + rng.gen_range(0..w)] = true;
        }
        let mut mask = BitMask::new(w as u32, h as u32, MaskProvenance::GroundTruth);
        for (i, _) in grid.iter().enumerate().filter(|(_, &g)| g) {
            mask.set((i % w) as u32, (i / w) as u32, true);
        }
        let hull = convex_hull(&mask).map_err(|e| e.to_string())?;
        let want = hull_oracle(w, h, &grid);
        ensure(hull.data == want, || {
            format!("hull case {case} ({w}x{h}) differs from brute force")
        })?;
    }
    Ok(format!(
        "spearman max err {spearman_worst:.1e} over 1000, AUC max err {auc_worst:.1e} over 500 ({tied_cases} with ties), 100 hulls exact"
    ))
}

// 2. reduction identities

fn reduction_config(method: Method) -> TrainConfig {
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

fn criterion_2() -> Check {
    let mut data = tiny_imageset(96, 8);
    let key = EnvironmentKey::new(ArtifactVector::none(), Label::Benign);
    data.keys = vec![key; data.len()];
    let partition = EnvironmentPartition {
        environments: vec![Environment {
            key,
            ids: data.ids.clone(),
        }],
    };
    let erm = train_on(&data, None, &reduction_config(Method::Erm), None).map_err(|e| e.to_string())?;
    let dro_config = TrainConfig {
        adjustment: 3.0,
        eta_q: 0.2,
        ..reduction_config(Method::GroupDro)
    };
    let dro = train_on(&data, Some(&partition), &dro_config, None).map_err(|e| e.to_string())?;
    ensure(bits(erm.model.params()) == bits(dro.model.params()), || {
        "GroupDRO with one environment differs from ERM".into()
    })?;
    for (p, f) in [(0.0, 0.5), (33.0, 0.0)] {
        let config = TrainConfig {
            rsc_percentile: p,
            rsc_fraction: f,
            ..reduction_config(Method::Rsc)
        };
        let rsc = train_on(&data, None, &config, None).map_err(|e| e.to_string())?;
        ensure(bits(erm.model.params()) == bits(rsc.model.params()), || {
            format!("RSC p={p} f={f} differs from ERM")
        })?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for side in [1u32, 7, 32, 64] {
        let img = RgbImage::from_fn(side, side, |_, _| image::Rgb([rng.gen(), rng.gen(), rng.gen()]));
        let mask = BitMask::full(side, side, MaskProvenance::GroundTruth);
        let config = NoiseCropConfig {
            output_size: side,
            ..NoiseCropConfig::default()
        };
        let out = noisecrop(&img, &mask, &config, "x").map_err(|e| e.to_string())?;
        ensure(out.image.as_raw() == img.as_raw(), || {
            format!("full-frame NoiseCrop at {side} is not the identity")
        })?;
    }
    Ok("GroupDRO(1 env), RSC(p=0), RSC(f=0) bit-identical to ERM; full-frame NoiseCrop is the identity".into())
}

// 3. GroupDRO mechanics

fn env_key(i: usize) -> EnvironmentKey {
    EnvironmentKey::new(ArtifactVector::from_bitmask((i / 2) as u8), Label::from_bit(i % 2 == 1))
}

fn criterion_3() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut steps = 0;
    for _ in 0..200 {
        let k = rng.gen_range(1..12);
        let groups: Vec<(EnvironmentKey, usize)> = (0..k).map(|i| (env_key(i), rng.gen_range(1..500))).collect();
        let mut q = GroupWeights::new(&groups, rng.gen_range(0.001..2.0), rng.gen_range(0.0..=5.0))
            .map_err(|e| e.to_string())?;
        for _ in 0..40 {
            let mut present = Vec::new();
            for g in 0..k {
                if rng.gen_bool(0.6) {
                    present.push((g, rng.gen_range(0.0..8.0)));
                }
            }
            q.update(&present);
            let total: f64 = q.q.iter().sum();
            ensure((total - 1.0).abs() < 1e-12 && q.q.iter().all(|v| *v >= 0.0), || {
                format!("q left the simplex: {:?}", q.q)
            })?;
            steps += 1;
        }
    }
    let mut q = GroupWeights::new(&[(env_key(0), 10), (env_key(1), 10)], 1.0, 0.0).map_err(|e| e.to_string())?;
    q.update(&[(0, 1.0), (1, 0.0)]);
    let e = 1f64.exp();
    let closed = (q.q[0] - e / (1.0 + e)).abs().max((q.q[1] - 1.0 / (1.0 + e)).abs());
    ensure(closed < 1e-12, || format!("two-group update off by {closed:e}"))?;
    let sizes = [1usize, 4, 9, 50, 123];
    let groups: Vec<(EnvironmentKey, usize)> = sizes.iter().enumerate().map(|(i, &n)| (env_key(2 * i), n)).collect();
    for c in 0..=5 {
        let c = f64::from(c);
        let q = GroupWeights::new(&groups, 0.1, c).map_err(|e| e.to_string())?;
        for (adj, &n) in q.adjustments().iter().zip(&sizes) {
            ensure((adj - c / (n as f64).sqrt()).abs() < 1e-15, || {
                format!("adjustment for C={c}, n={n} is {adj}")
            })?;
        }
    }
    Ok(format!(
        "{steps} updates on the simplex, closed form err {closed:.1e}, C/sqrt(n) for C in 0..=5"
    ))
}

// 4. trap-set behavior

fn criterion_4() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let manifest =
        generate_synthetic(&SyntheticConfig::three_targeted(3000, 0), dir.path()).map_err(|e| e.to_string())?;
    let targeted = [Artifact::DarkCorner, Artifact::Hair, Artifact::Ruler];
    let mut means = Vec::new();
    for factor in [0.0, 0.5, 1.0] {
        let mut total = 0.0;
        for seed in 0..10 {
            let split =
                build_trap_split(&manifest, factor, 0.2, seed, DEFAULT_SWAP_BUDGET).map_err(|e| e.to_string())?;
            total += split.objective;
            if factor == 1.0 {
                for a in targeted {
                    let train = split
                        .correlations
                        .value("train", a)
                        .ok_or("missing train correlation")?;
                    let test = split.correlations.value("test", a).ok_or("missing test correlation")?;
                    ensure(train * test < 0.0, || {
                        format!(
                            "seed {seed}, {}: train {train:.3} and test {test:.3} share a sign",
                            a.title()
                        )
                    })?;
                }
            }
        }
        means.push(total / 10.0);
    }
    ensure(means[0] < means[1] && means[1] < means[2], || {
        format!("mean J not increasing: {means:?}")
    })?;
    Ok(format!(
        "mean J {:.3} < {:.3} < {:.3}; all targeted correlations flip sign at factor 1",
        means[0], means[1], means[2]
    ))
}

// 5. end-to-end ordering

/// Epoch cap for the desk-scale run; all other settings are the defaults.
const ORDERING_EPOCHS: usize = 30;

fn criterion_5() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let manifest = generate_synthetic(&SyntheticConfig::three_targeted(5000, 0), &dir.path().join("data"))
        .map_err(|e| e.to_string())?;
    let erm = Arm::new(Method::Erm, false);
    let erm_nc = Arm::new(Method::Erm, true);
    let dro_nc = Arm::new(Method::GroupDro, true);
    let config = SweepConfig {
        sweep_id: "ordering".into(),
        factors: vec![1.0],
        arms: vec![erm, erm_nc, dro_nc],
        n_seeds: 5,
        test_fraction: 0.2,
        train: TrainConfig {
            max_epochs: ORDERING_EPOCHS,
            ..TrainConfig::default()
        },
        ..SweepConfig::default()
    };
    let result = run_trap_sweep(&manifest, &config, &dir.path().join("sweep")).map_err(|e| e.to_string())?;
    if let Some(c) = result.cells.iter().find(|c| c.error.is_some()) {
        return Err(format!(
            "cell {} seed {} failed: {}",
            c.arm,
            c.seed,
            c.error.as_deref().unwrap_or("")
        ));
    }
    let mean = |arm: Arm| {
        result
            .aggregate(1.0, arm)
            .and_then(|a| a.mean)
            .ok_or(format!("no aggregate for {arm}"))
    };
    let (m_erm, m_erm_nc, m_dro_nc) = (mean(erm)?, mean(erm_nc)?, mean(dro_nc)?);
    let detail = format!("ERM {m_erm:.3}, ERM+NoiseCrop {m_erm_nc:.3}, GroupDRO+NoiseCrop {m_dro_nc:.3}");
    ensure(m_erm <= m_erm_nc - 0.05, || {
        format!("{detail}: ERM not 0.05 below ERM+NoiseCrop")
    })?;
    ensure(m_erm <= m_dro_nc - 0.08, || {
        format!("{detail}: ERM not 0.08 below GroupDRO+NoiseCrop")
    })?;
    Ok(detail)
}

// 6. NoiseCrop statistics

fn criterion_6() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let manifest =
        generate_synthetic(&SyntheticConfig::with_defaults(200, 6), dir.path()).map_err(|e| e.to_string())?;
    let config = NoiseCropConfig {
        output_size: 224,
        seed: 6,
        ..NoiseCropConfig::default()
    };
    let (mut checked, mut min_corr) = (0, f64::INFINITY);
    let (mut mean_range, mut var_dev) = ((f64::INFINITY, f64::NEG_INFINITY), 0.0f64);
    for r in &manifest.records {
        let image = read_rgb(&manifest.image_path(r)).map_err(|e| e.to_string())?;
        let mask_path = manifest.mask_path(r).ok_or("record without mask")?;
        let mask = BitMask::from_gray(
            &read_gray(&mask_path).map_err(|e| e.to_string())?,
            MaskProvenance::GroundTruth,
        );
        let out = noisecrop(&image, &mask, &config, &r.id).map_err(|e| e.to_string())?;
        let (mut bg, mut got, mut want) = (Vec::new(), Vec::new(), Vec::new());
        let g = out.geometry;
        for (u, v, p) in out.image.enumerate_pixels() {
            if out.mask.get(u, v) {
                let sx = f64::from(g.source_box.0) + (f64::from(u) - f64::from(g.placed.0) + 0.5) / g.scale - 0.5;
                let sy = f64::from(g.source_box.1) + (f64::from(v) - f64::from(g.placed.1) + 0.5) / g.scale - 0.5;
                let e = bilinear_oracle(&image, sx, sy);
                for (&g, w) in p.0.iter().zip(e) {
                    got.push(f64::from(g));
                    want.push(w);
                }
            } else {
                bg.extend(p.0.map(f64::from));
            }
        }
        let corr = pearson(&got, &want).ok_or("degenerate hull content")?;
        min_corr = min_corr.min(corr);
        ensure(corr > 0.99, || format!("{}: content correlation {corr}", r.id))?;
        if bg.len() / 3 < 1000 {
            continue;
        }
        checked += 1;
        let n = bg.len() as f64;
        let mean = bg.iter().sum::<f64>() / n;
        let var = bg.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        mean_range = (mean_range.0.min(mean), mean_range.1.max(mean));
        var_dev = var_dev.max((var - 5418.75).abs() / 5418.75);
        ensure((117.5..=137.5).contains(&mean), || {
            format!("{}: background mean {mean}", r.id)
        })?;
        ensure((var - 5418.75).abs() <= 0.15 * 5418.75, || {
            format!("{}: background variance {var}", r.id)
        })?;
    }
    ensure(checked > 0, || "no image had 1000 background pixels".into())?;
    Ok(format!(
        "{checked} images: mean in [{:.1}, {:.1}], variance within {:.1}%, min content correlation {min_corr:.4}",
        mean_range.0,
        mean_range.1,
        var_dev * 100.0
    ))
}

// 7. protocol fidelity

fn criterion_7() -> Check {
    let data = tiny_imageset(48, 4);
    let base = TrainConfig {
        max_epochs: 1,
        batch_size: 24,
        model: tiny_cnn(),
        ..TrainConfig::default()
    };
    let grid = grid_search_on(&data, None, &base, &GridSpec::reference(), None, None).map_err(|e| e.to_string())?;
    let lrs: BTreeSet<u32> = grid.leaderboard.iter().map(|e| e.learning_rate.to_bits()).collect();
    let wds: BTreeSet<u32> = grid.leaderboard.iter().map(|e| e.weight_decay.to_bits()).collect();
    ensure(grid.runs_trained == 24 && lrs.len() == 3 && wds.len() == 4, || {
        format!(
            "grid trained {} runs over {} x {} cells",
            grid.runs_trained,
            lrs.len(),
            wds.len()
        )
    })?;

    let stagnant = TrainConfig {
        learning_rate: 0.0,
        max_epochs: 100,
        batch_size: 30,
        model: tiny_cnn(),
        ..TrainConfig::default()
    };
    let run = train_on(&tiny_imageset(60, 1), None, &stagnant, None).map_err(|e| e.to_string())?;
    ensure(run.early_stopped && run.best_epoch == 1 && run.epochs_run == 23, || {
        format!("stopped after {} epochs, best {}", run.epochs_run, run.best_epoch)
    })?;

    ensure(
        DEFAULT_TTA_REPLICAS == 50
            && ExternalConfig::default().tta_replicas == 50
            && SweepConfig::default().tta_replicas == 50,
        || "TTA default is not 50 replicas".into(),
    )?;

    let preset = SweepConfig::default();
    let aucs: Vec<f64> = (0..preset.n_seeds).map(|s| 0.6 + 0.02 * (s as f64).cos()).collect();
    let cells: Vec<SweepCell> = aucs
        .iter()
        .enumerate()
        .map(|(seed, &a)| SweepCell {
            factor: 1.0,
            arm: Arm::new(Method::Erm, false),
            seed,
            auc: Some(a),
            error: None,
        })
        .collect();
    let agg = &aggregate(&cells)[0];
    let n = aucs.len() as f64;
    let m = aucs.iter().sum::<f64>() / n;
    let se = (aucs.iter().map(|a| (a - m).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt();
    ensure(
        agg.n_seeds == 10 && (agg.stderr.unwrap_or(f64::NAN) - se).abs() < 1e-12,
        || format!("aggregate over {} seeds with stderr {:?}", agg.n_seeds, agg.stderr),
    )?;
    Ok("grid 3x4x2 = 24 runs, stop at epoch 23 (patience 22), TTA 50, stderr over 10 seeds".into())
}

// 8. determinism and parallel safety

const BIN: &str = env!("CARGO_BIN_EXE_debias-lab");

fn cli(dir: &Path, args: &[&str]) -> Result<(), String> {
    let out = Command::new(BIN)
        .current_dir(dir)
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    ensure(out.status.success(), || {
        format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr))
    })
}

fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).into_iter().flatten().flatten() {
            let path = entry.path();
            if path.is_dir() {
                stack.push(path);
            } else if path.file_name().is_some_and(|n| n != "run_manifest.json") {
                let bytes = fs::read(&path).unwrap_or_default();
                out.insert(path.strip_prefix(dir).unwrap_or(&path).to_path_buf(), bytes);
            }
        }
    }
    out
}

fn compare(a: &BTreeMap<PathBuf, Vec<u8>>, b: &BTreeMap<PathBuf, Vec<u8>>, what: &str) -> Result<(), String> {
    ensure(a.keys().eq(b.keys()), || format!("{what}: different file sets"))?;
    match a.iter().find(|(k, v)| b[*k] != **v) {
        Some((k, _)) => Err(format!("{what}: {} differs", k.display())),
        None => Ok(()),
    }
}

fn pipeline(d: &Path) -> Result<(), String> {
    let m = "data/manifest.csv";
    cli(
        d,
        &[
            "--seed",
            "5",
            "--out",
            "data",
            "synth",
            "--n",
            "150",
            "--image-size",
            "16",
        ],
    )?;
    cli(d, &["--out", "audit", "audit", "--manifest", m])?;
    cli(d, &["--out", "split", "split", "--manifest", m, "--factor", "0.7"])?;
    cli(
        d,
        &["--out", "envs", "envs", "--manifest", m, "--split", "split/split.json"],
    )?;
    cli(
        d,
        &[
            "--out",
            "train",
            "train",
            "--manifest",
            m,
            "--split",
            "split/split.json",
            "--method",
            "rsc",
            "--epochs",
            "2",
        ],
    )?;
    cli(d, &["--out", "nc", "noisecrop", "--manifest", m, "--output-size", "16"])?;
    cli(
        d,
        &[
            "--out",
            "eval",
            "eval",
            "--manifest",
            m,
            "--split",
            "split/split.json",
            "--model",
            "train/model.bin",
            "--replicas",
            "3",
        ],
    )?;
    cli(
        d,
        &[
            "--out",
            "sal",
            "saliency",
            "--manifest",
            m,
            "--model",
            "train/model.bin",
            "--split",
            "split/split.json",
            "--limit",
            "2",
        ],
    )?;
    cli(
        d,
        &[
            "--out",
            "report",
            "report",
            "--correlations",
            "split/split.json",
            "--eval",
            "eval/eval.json",
            "--saliency",
            "sal/saliency.json",
        ],
    )
}

fn criterion_8() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let d = dir.path();
    for run in ["a", "b"] {
        fs::create_dir_all(d.join(run)).map_err(|e| e.to_string())?;
        pipeline(&d.join(run))?;
    }
    let (a, b) = (snapshot(&d.join("a")), snapshot(&d.join("b")));
    compare(&a, &b, "pipeline rerun")?;
    let n_files = a.len();

    cli(
        d,
        &[
            "--out",
            "data",
            "synth",
            "--preset",
            "three-targeted",
            "--n",
            "200",
            "--image-size",
            "16",
        ],
    )?;
    let mut runs = Vec::new();
    for jobs in ["1", "2"] {
        cli(
            d,
            &[
                "--jobs",
                jobs,
                "--out",
                "runs",
                "sweep",
                "--manifest",
                "data/manifest.csv",
                "--id",
                "det",
                "--factors",
                "0,0.5,1",
                "--methods",
                "erm,rsc,groupdro+noisecrop",
                "--seeds",
                "2",
                "--replicas",
                "2",
                "--epochs",
                "2",
            ],
        )?;
        runs.push(snapshot(&d.join("runs/det")));
        fs::remove_dir_all(d.join("runs")).map_err(|e| e.to_string())?;
    }
    compare(&runs[0], &runs[1], "sweep --jobs 1 vs 2")?;
    Ok(format!(
        "{n_files} pipeline files identical on rerun; {} sweep files identical across --jobs",
        runs[0].len()
    ))
}

struct Criterion {
    id: u8,
    name: &'static str,
    limit: Option<Duration>,
    run: fn() -> Check,
}

fn main() -> ExitCode {
    let minutes = |m: u64| Some(Duration::from_secs(m * 60));
    let criteria = [
        Criterion {
            id: 1,
            name: "oracle equivalences",
            limit: minutes(2),
            run: criterion_1,
        },
        Criterion {
            id: 2,
            name: "reduction identities",
            limit: minutes(5),
            run: criterion_2,
        },
        Criterion {
            id: 3,
            name: "GroupDRO mechanics",
            limit: None,
            run: criterion_3,
        },
        Criterion {
            id: 4,
            name: "trap-set behavior",
            limit: minutes(10),
            run: criterion_4,
        },
        Criterion {
            id: 5,
            name: "debiasing ordering",
            limit: minutes(30),
            run: criterion_5,
        },
        Criterion {
            id: 6,
            name: "NoiseCrop statistics",
            limit: None,
            run: criterion_6,
        },
        Criterion {
            id: 7,
            name: "protocol fidelity",
            limit: None,
            run: criterion_7,
        },
        Criterion {
            id: 8,
            name: "determinism",
            limit: None,
            run: criterion_8,
        },
    ];
    let selected: Vec<u8> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for c in criteria
        .iter()
        .filter(|c| selected.is_empty() || selected.contains(&c.id))
    {
        let started = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(c.run)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let elapsed = started.elapsed();
        let outcome = match (outcome, c.limit) {
            (Ok(_), Some(limit)) if elapsed > limit => Err(format!("took {elapsed:.0?}, limit {limit:.0?}")),
            (o, _) => o,
        };
        match outcome {
            Ok(detail) => println!(
                "criterion {} ({}): PASS [{:.1}s] {detail}",
                c.id,
                c.name,
                elapsed.as_secs_f64()
            ),
            Err(detail) => {
                failed += 1;
                println!(
                    "criterion {} ({}): FAIL [{:.1}s] {detail}",
                    c.id,
                    c.name,
                    elapsed.as_secs_f64()
                );
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
