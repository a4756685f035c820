//! End-to-end acceptance criteria. Each test prints one `AC<n> PASS|FAIL`
//! line straight to stderr so it shows up even when output is captured.
//!
//! The heavy synthetic runs are cached per (seed, arm) and shared between
//! criteria.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::{Arc, Mutex, OnceLock};
use std::time::{Duration, Instant};

use lesion_mil::classifier::{batch_gradient, batch_loss_generic};
use lesion_mil::mil::train_observed;
use lesion_mil::report::{report_to_json, save_report};
use lesion_mil::segment::count_components;
use lesion_mil::types::{Bag, MaskSource, Provenance};
use lesion_mil::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn verdict(id: u32, name: &str, pass: bool, detail: &str) {
    let line = format!("AC{id} {} {name}: {detail}\n", if pass { "PASS" } else { "FAIL" });
    let _ = std::io::stderr().write_all(line.as_bytes());
    assert!(pass, "AC{id} {name} failed: {detail}");
}

// Shared synthetic experiment

const TILE: usize = 16;
const TRAIN_PER_CLASS: usize = 100;
const TEST_PER_CLASS: usize = 30;
const AC5_SEED: u64 = 1;
const TEST_SEED_OFFSET: u64 = 1000;

fn workdir() -> &'static Path {
    static DIR: OnceLock<tempfile::TempDir> = OnceLock::new();
    DIR.get_or_init(|| tempfile::tempdir().unwrap()).path()
}

fn dataset(seed: u64, per_class: usize, render_spikes: bool) -> PathBuf {
    static LOCK: Mutex<()> = Mutex::new(());
    let _guard = LOCK.lock().unwrap();
    let dir = workdir().join(format!("data_{seed}_{per_class}_{render_spikes}"));
    let manifest = dir.join("manifest.csv");
    if !manifest.exists() {
        let cfg = GenConfig {
            seed,
            n_pos: per_class,
            n_neg: per_class,
            render_spikes,
            ..Default::default()
        };
        generate(&cfg, &dir).unwrap();
    }
    manifest
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum Arm {
    Default,
    NoReinforced,
    Ratio2,
    NoMask,
}

struct Run {
    train: TrainingCorpus,
    test: TrainingCorpus,
    sets: Vec<TemporarySet>,
    selection: SelectionConfig,
    model: ClassifierModel,
    history: TrainingHistory,
    eval: Evaluation,
    elapsed: Duration,
}

fn options(arm: Arm) -> LoadOptions {
    LoadOptions {
        tiler: TilerConfig::with_tile_size(TILE),
        mask_mode: if arm == Arm::NoMask { MaskMode::FullImage } else { MaskMode::Segmented },
        ..Default::default()
    }
}

fn run(seed: u64, arm: Arm) -> Arc<Run> {
    static RUNS: OnceLock<Mutex<HashMap<(u64, Arm), Arc<Run>>>> = OnceLock::new();
    let mut runs = RUNS.get_or_init(Default::default).lock().unwrap_or_else(|e| e.into_inner());
    if let Some(r) = runs.get(&(seed, arm)) {
        return r.clone();
    }
    let start = Instant::now();
    let opts = options(arm);
    let train = load_corpus(dataset(seed, TRAIN_PER_CLASS, true), &opts).unwrap();
    let test = load_corpus(dataset(seed + TEST_SEED_OFFSET, TEST_PER_CLASS, true), &opts).unwrap();
    let mut cfg = MilConfig::default();
    cfg.train.seed = seed;
    match arm {
        Arm::NoReinforced => cfg.use_reinforced = false,
        Arm::Ratio2 => cfg.selection.neg_per_bag = 2,
        _ => {}
    }
    let mut sets = Vec::new();
    let (model, history) = train_observed(&train, &cfg, |s| sets.push(s.clone())).unwrap();
    let eval = evaluate(&model, &test, &opts.tiler, inference::DEFAULT_THRESHOLD).unwrap();
    let r = Arc::new(Run {
        train,
        test,
        sets,
        selection: cfg.selection,
        model,
        history,
        eval,
        elapsed: start.elapsed(),
    });
    runs.insert((seed, arm), r.clone());
    r
}

// Criteria

#[test]
fn ac1_metric_oracle() {
    let counts = ConfusionCounts {
        tp: 114,
        fp: 2,
        fn_: 8,
        tn: 128,
    };
    let m = derive_metrics(counts);
    let expected = [
        ("precision", m.precision, 0.9828),
        ("recall", m.recall, 0.9344),
        ("f1", m.f1, 0.9580),
        ("accuracy", m.accuracy, 0.9603),
    ];
    let worst = expected.iter().map(|(_, got, want)| (got - want).abs()).fold(0.0, f64::max);
    let json = report_to_json(&m).unwrap();
    let pass = worst <= 5e-5 && json.contains("\"f1\": 0.9580");
    let detail = expected
        .iter()
        .map(|(k, got, _)| format!("{k} {got:.6}"))
        .collect::<Vec<_>>()
        .join(", ");
    verdict(1, "metric oracle", pass, &format!("{detail}; max deviation {worst:.2e}"));
}

fn brute_force_lattice(mask: &RegionMask, s: usize, step: usize) -> Vec<(usize, usize)> {
    let (h, w) = mask.shape();
    let mut out = Vec::new();
    let mut r = 0;
    while r + s <= h {
        let mut c = 0;
        while c + s <= w {
            let mut fg = 0;
            for y in r..r + s {
                for x in c..c + s {
                    fg += mask.get(y, x) as usize;
                }
            }
            if 2 * fg >= s * s {
                out.push((r, c));
            }
            c += step;
        }
        r += step;
    }
    out
}

#[test]
fn ac2_tiler_matches_brute_force() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut mismatches = 0;
    let mut total_tiles = 0;
    for case in 0..200 {
        let h = rng.random_range(1..=90);
        let w = rng.random_range(1..=90);
        let s = rng.random_range(1..=h.min(w).min(40));
        let step = rng.random_range(1..=s);
        let (cy, cx) = (rng.random_range(0.0..h as f64), rng.random_range(0.0..w as f64));
        let rad = rng.random_range(0.0..(h.max(w) as f64));
        let density = rng.random_range(0.0..0.4);
        let mask = RegionMask::from_fn(h, w, MaskSource::OracleFile, |r, c| {
            let d = ((r as f64 - cy).powi(2) + (c as f64 - cx).powi(2)).sqrt();
            (d < rad) != (rng.random_bool(density))
        });
        let bag = Bag {
            index: case,
            image: LesionImage::new(format!("case{case}"), RgbImage::new(w as u32, h as u32)),
            mask: mask.clone(),
            label: BagLabel::Negative,
            boxes: vec![],
            tiles: vec![],
            reinforced: vec![],
        };
        let cfg = TilerConfig {
            tile_size: s,
            step,
            inclusion_fraction: 0.5,
        };
        let got: Vec<(usize, usize)> = match partition_tiles(&bag, &cfg) {
            Ok(tiles) => tiles.iter().map(|t| (t.row, t.col)).collect(),
            Err(Error::NoTilesIncluded) => vec![],
            Err(e) => panic!("case {case}: {e}"),
        };
        let want = brute_force_lattice(&mask, s, step);
        total_tiles += want.len();
        if got != want {
            mismatches += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        2,
        "tiler formula",
        mismatches == 0 && secs < 10.0,
        &format!("{mismatches} of 200 cases differ ({total_tiles} tiles checked, {secs:.2}s)"),
    );
}

#[test]
fn ac3_mil_invariants() {
    let r = run(AC5_SEED, Arm::Default);
    let bags = &r.train.bags;
    let reinforced: Vec<&lesion_mil::Tile> = r.train.reinforced().collect();
    let quota: usize = bags
        .iter()
        .map(|b| {
            let k = if b.label.is_positive() { r.selection.pos_per_bag } else { r.selection.neg_per_bag };
            k.min(b.tiles.len())
        })
        .sum::<usize>()
        + reinforced.len();
    let mut failures = Vec::new();
    for set in &r.sets {
        let k = set.iteration;
        if set
            .entries
            .iter()
            .any(|(t, y)| *y == 1 && !bags[t.bag_index].label.is_positive())
        {
            failures.push(format!("iteration {k}: negative bag entry labelled 1"));
        }
        let covered = reinforced.iter().all(|s| {
            set.entries.iter().any(|(t, y)| {
                *y == 1
                    && t.provenance == Provenance::Reinforced
                    && (t.bag_index, t.row, t.col) == (s.bag_index, s.row, s.col)
            })
        });
        if !covered {
            failures.push(format!("iteration {k}: reinforced set not contained"));
        }
        if set.len() > quota {
            failures.push(format!("iteration {k}: |D| = {} exceeds {quota}", set.len()));
        }
    }
    let pass = failures.is_empty() && r.sets.len() == MilConfig::default().train.epochs;
    let detail = if failures.is_empty() {
        format!("{} iterations checked, |S| = {}, quota {quota}", r.sets.len(), reinforced.len())
    } else {
        failures.join("; ")
    };
    verdict(3, "MIL invariants", pass, &detail);
}

#[test]
fn ac4_gradient_check() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    for draw in 0..20 {
        let arch = Architecture {
            input_size: [4, 6, 8, 12][draw % 4],
            conv1_channels: rng.random_range(2..=4),
            conv2_channels: rng.random_range(2..=5),
        };
        let base = init_model(draw as u64, arch).unwrap();
        let mut params: Vec<f64> = base
            .params
            .iter()
            .map(|&w| w as f64 + rng.random_range(-0.05..0.05))
            .collect();
        let inputs: Vec<Vec<f64>> = (0..rng.random_range(1..=6))
            .map(|_| (0..arch.input_len()).map(|_| rng.random_range(0.0..1.0)).collect())
            .collect();
        let batch: Vec<(&[f64], u8)> = inputs.iter().map(|x| (x.as_slice(), rng.random_range(0..=1u8))).collect();
        let (_, analytic) = batch_gradient(&arch, &params, &batch);
        let h = 1e-6;
        let mut numeric = vec![0.0; params.len()];
        for i in 0..params.len() {
            let orig = params[i];
            params[i] = orig + h;
            let up = batch_loss_generic(&arch, &params, &batch);
            params[i] = orig - h;
            let down = batch_loss_generic(&arch, &params, &batch);
            params[i] = orig;
            numeric[i] = (up - down) / (2.0 * h);
        }
        let diff = analytic.iter().zip(&numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        worst = worst.max(diff / (norm(&analytic) + norm(&numeric)).max(1e-12));
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        4,
        "gradient check",
        worst < 1e-4 && secs < 30.0,
        &format!("max relative error {worst:.2e} over 20 draws ({secs:.2}s)"),
    );
}

#[test]
fn ac5_end_to_end_synthetic() {
    let r = run(AC5_SEED, Arm::Default);
    let rep = &r.eval.report;
    let auc = r.eval.roc.auc;
    let secs = r.elapsed.as_secs_f64();
    let pass = rep.f1 >= 0.90 && auc >= 0.95 && secs <= 600.0;
    verdict(
        5,
        "end-to-end synthetic",
        pass,
        &format!(
            "f1 {:.4}, auc {auc:.4}, counts tp {} fp {} fn {} tn {}, {secs:.0}s",
            rep.f1, rep.counts.tp, rep.counts.fp, rep.counts.fn_, rep.counts.tn
        ),
    );
}

#[test]
fn hidden_motifs_collapse_the_classifier() {
    // Same test images with the serrations left undrawn: the trained model
    // must lose its signal.
    let r = run(AC5_SEED, Arm::Default);
    let hidden = load_corpus(dataset(AC5_SEED + TEST_SEED_OFFSET, TEST_PER_CLASS, false), &options(Arm::Default)).unwrap();
    let ev = evaluate(&r.model, &hidden, &TilerConfig::with_tile_size(TILE), inference::DEFAULT_THRESHOLD).unwrap();
    let line = format!("learnability check: f1 with motifs hidden {:.4} (must be <= 0.6)\n", ev.report.f1);
    let _ = std::io::stderr().write_all(line.as_bytes());
    assert!(ev.report.f1 <= 0.6, "{line}");
}

fn note(line: String) {
    let _ = std::io::stderr().write_all(format!("{line}\n").as_bytes());
}

#[test]
fn training_converges() {
    let r = run(AC5_SEED, Arm::Default);
    let h = &r.history;
    let acc = *h.accuracy.last().unwrap();
    // 1-based epoch e >= 10 compared with e + 5.
    let rises: Vec<usize> = (10..=h.loss.len().saturating_sub(5))
        .filter(|&e| h.loss[e + 4] > h.loss[e - 1])
        .collect();
    note(format!("convergence: final accuracy on D {acc:.4}, 5-epoch loss rises after epoch 10 at {rises:?}"));
    assert!(acc >= 0.95 && rises.is_empty(), "loss {:?}", h.loss);
}

#[test]
fn held_out_box_tiles_score_positive() {
    let r = run(AC5_SEED, Arm::Default);
    let mut pred = r.model.predictor();
    let tiles: Vec<f64> = r
        .test
        .bags
        .iter()
        .flat_map(|b| b.reinforced.iter().map(move |t| (b, t)))
        .map(|(b, t)| pred.predict_tile(b, t).unwrap())
        .collect();
    let frac = tiles.iter().filter(|&&p| p > 0.5).count() as f64 / tiles.len() as f64;
    note(format!("held-out box tiles: {:.1}% of {} score above 0.5", 100.0 * frac, tiles.len()));
    assert!(frac >= 0.9);
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

#[test]
fn ac6_ablation_orderings() {
    let seeds = [AC5_SEED, 2, 3];
    let f1 = |arm| -> Vec<f64> { seeds.iter().map(|&s| run(s, arm).eval.report.f1).collect() };
    let base = f1(Arm::Default);
    let arms = [
        ("no-reinforced", f1(Arm::NoReinforced)),
        ("ratio 1:2", f1(Arm::Ratio2)),
        ("no-mask", f1(Arm::NoMask)),
    ];
    let m0 = median(base.clone());
    let mut pass = true;
    let mut parts = vec![format!("default {base:.4?} median {m0:.4}")];
    for (name, v) in &arms {
        let m = median(v.clone());
        let gap = m0 - m;
        pass &= gap >= 0.01;
        parts.push(format!("{name} {v:.4?} median {m:.4} gap {gap:+.4}"));
    }
    verdict(6, "ablation orderings", pass, &parts.join("; "));
}

#[test]
fn ac7_localization() {
    let r = run(AC5_SEED, Arm::Default);
    let (mut confident, mut hits) = (0usize, 0usize);
    for (bag, m) in r.test.bags.iter().zip(&r.eval.matrices) {
        if !bag.label.is_positive() {
            continue;
        }
        for (_, _, row, col, p) in m.present() {
            if p >= 0.9 {
                confident += 1;
                hits += bag.boxes.iter().any(|b| b.intersects(row, col, TILE, TILE)) as usize;
            }
        }
    }
    let frac = if confident == 0 { 0.0 } else { hits as f64 / confident as f64 };
    verdict(
        7,
        "localization",
        confident > 0 && frac >= 0.70,
        &format!("{hits} of {confident} windows with p >= 0.9 touch a box ({:.1}%)", 100.0 * frac),
    );
}

fn mann_whitney(scores: &[f64], truths: &[BagLabel]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, &a) in scores.iter().enumerate() {
        for (j, &b) in scores.iter().enumerate() {
            if truths[i].is_positive() && !truths[j].is_positive() {
                pairs += 1.0;
                wins += if a > b {
                    1.0
                } else if a == b {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    wins / pairs
}

#[test]
fn ac8_auc_properties() {
    let truths: Vec<BagLabel> = (0..20)
        .map(|i| if i < 10 { BagLabel::Positive } else { BagLabel::Negative })
        .collect();
    let separated: Vec<f64> = (0..20).map(|i| if i < 10 { 0.9 - 0.01 * i as f64 } else { 0.1 }).collect();
    let flipped: Vec<BagLabel> = truths.iter().map(|t| if t.is_positive() { BagLabel::Negative } else { BagLabel::Positive }).collect();
    let perfect = roc_auc(&separated, &truths).unwrap().auc;
    let inverse = roc_auc(&separated, &flipped).unwrap().auc;

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let n = rng.random_range(2..=200);
        let grid = rng.random_range(2..=50);
        let mut labels: Vec<BagLabel> = (0..n)
            .map(|_| if rng.random_bool(0.5) { BagLabel::Positive } else { BagLabel::Negative })
            .collect();
        labels[0] = BagLabel::Positive;
        labels[1] = BagLabel::Negative;
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..grid) as f64 / grid as f64).collect();
        let got = roc_auc(&scores, &labels).unwrap().auc;
        worst = worst.max((got - mann_whitney(&scores, &labels)).abs());
    }
    verdict(
        8,
        "AUC properties",
        perfect == 1.0 && inverse == 0.0 && worst <= 1e-12,
        &format!("separated {perfect}, flipped {inverse}, max Mann-Whitney deviation {worst:.1e} over 50 sets"),
    );
}

fn cli(args: &[&str]) {
    let out = Command::new(env!("CARGO_BIN_EXE_lesion-mil")).args(args).output().unwrap();
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn cli_pipeline(root: &Path) -> (Vec<u8>, Vec<u8>, f64) {
    let s = |p: PathBuf| p.to_str().unwrap().to_owned();
    let (train, test, run) = (root.join("train"), root.join("test"), root.join("run"));
    let per_class = TRAIN_PER_CLASS.to_string();
    let test_per_class = TEST_PER_CLASS.to_string();
    let test_seed = (AC5_SEED + TEST_SEED_OFFSET).to_string();
    let seed = AC5_SEED.to_string();
    let tile = TILE.to_string();
    cli(&["gen", "--out", &s(train.clone()), "--seed", &seed, "--n-pos", &per_class, "--n-neg", &per_class]);
    cli(&["gen", "--out", &s(test.clone()), "--seed", &test_seed, "--n-pos", &test_per_class, "--n-neg", &test_per_class]);
    cli(&[
        "train", "--manifest", &s(train.join("manifest.csv")), "--out", &s(run.clone()),
        "--tile-size", &tile, "--pos-per-bag", "1", "--neg-per-bag", "5", "--epochs", "30", "--batch", "8", "--seed", &seed,
    ]);
    cli(&[
        "eval", "--manifest", &s(test.join("manifest.csv")), "--model", &s(run.join("model.lmil")),
        "--out", &s(run.clone()), "--tile-size", &tile,
    ]);
    let report = lesion_mil::report::load_report(run.join("report.json")).unwrap();
    (fs::read(run.join("model.lmil")).unwrap(), fs::read(run.join("report.json")).unwrap(), report.f1)
}

#[test]
fn ac9_determinism() {
    let (a, b) = (workdir().join("cli_a"), workdir().join("cli_b"));
    let (model_a, report_a, f1) = cli_pipeline(&a);
    let (model_b, report_b, _) = cli_pipeline(&b);
    let same_model = model_a == model_b;
    let same_report = report_a == report_b;
    // The library run with the same recipe must land on the same bytes.
    let lib = run(AC5_SEED, Arm::Default);
    let lib_report = workdir().join("lib_report.json");
    save_report(&lib.eval.report, &lib_report).unwrap();
    let lib_model = lib.model.to_bytes() == model_a;
    let lib_json = fs::read(&lib_report).unwrap() == report_a;
    verdict(
        9,
        "determinism",
        same_model && same_report && lib_model && lib_json && f1 >= 0.90,
        &format!(
            "checkpoints identical: {same_model}, reports identical: {same_report}, \
             library model {lib_model}, library report {lib_json}, cli f1 {f1:.4}"
        ),
    );
}

/// Background pixels reachable from the border through 8-connected background.
fn border_background(mask: &RegionMask) -> Vec<bool> {
    let (h, w) = mask.shape();
    let mut seen = vec![false; h * w];
    let mut stack: Vec<(usize, usize)> = (0..h)
        .flat_map(|r| [(r, 0), (r, w - 1)])
        .chain((0..w).flat_map(|c| [(0, c), (h - 1, c)]))
        .collect();
    while let Some((r, c)) = stack.pop() {
        if mask.get(r, c) || seen[r * w + c] {
            continue;
        }
        seen[r * w + c] = true;
        for dr in -1i64..=1 {
            for dc in -1i64..=1 {
                let (y, x) = (r as i64 + dr, c as i64 + dc);
                if (0..h as i64).contains(&y) && (0..w as i64).contains(&x) {
                    stack.push((y as usize, x as usize));
                }
            }
        }
    }
    seen
}

#[test]
fn ac10_segmenter_postprocessing() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut failures = Vec::new();
    for case in 0..100 {
        let (h, w) = (rng.random_range(4..=64), rng.random_range(4..=64));
        let blobs: Vec<(f64, f64, f64)> = (0..rng.random_range(1..=5))
            .map(|_| (rng.random_range(0.0..h as f64), rng.random_range(0.0..w as f64), rng.random_range(1.0..12.0)))
            .collect();
        let noise = rng.random_range(0.0..0.3);
        let mut mask = RegionMask::from_fn(h, w, MaskSource::BaselineSegmenter, |r, c| {
            let inside = blobs
                .iter()
                .any(|&(y, x, rad)| (r as f64 - y).powi(2) + (c as f64 - x).powi(2) < rad * rad);
            inside != rng.random_bool(noise)
        });
        mask.set(h / 2, w / 2, true);
        let out = postprocess_mask(&mask).unwrap();
        let reach = border_background(&out);
        let holes = (0..h * w).filter(|&i| !out.as_slice()[i] && !reach[i]).count();
        let comps = count_components(&out);
        let again = postprocess_mask(&out).unwrap();
        if comps != 1 || holes != 0 || again != out {
            failures.push(format!("case {case}: {comps} components, {holes} hole pixels, idempotent {}", again == out));
        }
    }
    let detail = if failures.is_empty() {
        "100 masks: one component, no holes, idempotent".to_owned()
    } else {
        failures.join("; ")
    };
    verdict(10, "segmenter post-processing", failures.is_empty(), &detail);
}
