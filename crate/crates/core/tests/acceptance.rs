//! End-to-end acceptance checks, one PASS/FAIL line each.
//!
//! Run a subset by number: `cargo test --test acceptance -- 1 4 9`.

mod common;

use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tmloc::datamodel::{
    generate_synthetic, generate_with_segments, split_dataset, CarrierSet, FeatureMatrix, Modality,
    PlantedSegment, SyntheticSpec, TextMode, VideoFeatures, VideoSample,
};
use tmloc::losses::{
    contrastive_value, mil_value, selection_size, smoothness_value, topk_select,
};
use tmloc::metrics::{average_precision, pr_auc, roc_auc};
use tmloc::model::{
    forward, load_checkpoint, multi_head_attention, save_checkpoint, ModelConfig, ModelParams,
    PositionalEncoding,
};
use tmloc::numerics::{Graph, Tensor2};
use tmloc::trainer::{evaluate_model, predict_split, train, TrainConfig};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ---------------------------------------------------------------- 1

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let prims = common::primitive_gradient_errors();
    let (worst_name, worst) = prims
        .iter()
        .copied()
        .fold(("", 0.0f64), |acc, (n, e)| if e > acc.1 { (n, e) } else { acc });
    let full = common::full_loss_gradient_error();
    let secs = start.elapsed().as_secs_f64();
    check(
        worst < 1e-4 && full < 1e-4 && secs < 30.0,
        format!(
            "{} primitives, worst {worst_name} {worst:.2e}; batch objective {full:.2e}; {secs:.1}s",
            prims.len()
        ),
    )
}

// ---------------------------------------------------------------- 2

fn loss_analytics() -> Outcome {
    let smooth = smoothness_value(&[0.37; 12]).map_err(|e| e.to_string())?;
    let mil_pos = mil_value(&[0.5; 9], &[0, 4, 8], true).map_err(|e| e.to_string())?;
    let mil_neg = mil_value(&[0.5; 9], &[1, 2], false).map_err(|e| e.to_string())?;
    let ln2 = std::f64::consts::LN_2;

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let single = [std::array::from_fn(|_| common::random_tensor(&mut rng, 1, 6, -1.0, 1.0))];
    let con_single = contrastive_value(&single, 0.1, None, 0).map_err(|e| e.to_string())?;

    // every frame of every modality identical: all similarities equal
    let row = common::random_tensor(&mut rng, 1, 6, -1.0, 1.0);
    let frames = [4usize, 3];
    let uniform: Vec<[Tensor2; 3]> = frames
        .iter()
        .map(|&t| {
            let rows: Vec<&[f64]> = (0..t).map(|_| row.data()).collect();
            let m = Tensor2::from_rows(&rows).unwrap();
            [m.clone(), m.clone(), m]
        })
        .collect();
    let con_uniform = contrastive_value(&uniform, 0.1, None, 0).map_err(|e| e.to_string())?;
    let n_cand = frames.iter().sum::<usize>() as f64;

    let ok = smooth.abs() < 1e-12
        && (mil_pos - ln2).abs() < 1e-9
        && (mil_neg - ln2).abs() < 1e-9
        && con_single.abs() < 1e-9
        && (con_uniform - n_cand.ln()).abs() < 1e-6;
    check(
        ok,
        format!(
            "smooth {smooth:.1e}; MIL-ln2 {:.1e}/{:.1e}; single-candidate {con_single:.1e}; uniform-log(N) {:.1e}",
            mil_pos - ln2,
            mil_neg - ln2,
            con_uniform - n_cand.ln()
        ),
    )
}

// ---------------------------------------------------------------- 3

fn ap_oracle(s: &[f64], y: &[bool]) -> f64 {
    let pos: Vec<usize> = (0..s.len()).filter(|&i| y[i]).collect();
    let total: f64 = pos
        .iter()
        .map(|&i| {
            let at_or_above: Vec<usize> = (0..s.len()).filter(|&j| s[j] >= s[i]).collect();
            let hits = at_or_above.iter().filter(|&&j| y[j]).count();
            hits as f64 / at_or_above.len() as f64
        })
        .sum();
    total / pos.len() as f64
}

fn roc_oracle(s: &[f64], y: &[bool]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for i in (0..s.len()).filter(|&i| y[i]) {
        for j in (0..s.len()).filter(|&j| !y[j]) {
            pairs += 1.0;
            if s[i] > s[j] {
                wins += 1.0;
            } else if s[i] == s[j] {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

fn pr_oracle(s: &[f64], y: &[bool]) -> f64 {
    let mut thresholds: Vec<f64> = s.to_vec();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let p = y.iter().filter(|&&v| v).count() as f64;
    let (mut r0, mut p0, mut area) = (0.0, 1.0, 0.0);
    for th in thresholds {
        let predicted = (0..s.len()).filter(|&i| s[i] >= th).count() as f64;
        let hits = (0..s.len()).filter(|&i| s[i] >= th && y[i]).count() as f64;
        let (r1, p1) = (hits / p, hits / predicted);
        area += (r1 - r0) * (p0 + p1) / 2.0;
        (r0, p0) = (r1, p1);
    }
    area
}

fn sort_oracle(s: &[f64], k_div: usize) -> Vec<usize> {
    let n = s.len().div_ceil(k_div).max(1);
    let mut idx: Vec<usize> = (0..s.len()).collect();
    idx.sort_by(|&a, &b| s[b].total_cmp(&s[a]).then(a.cmp(&b)));
    let mut top = idx[..n].to_vec();
    top.sort_unstable();
    top
}

fn oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1000);
    let mut worst = 0.0f64;
    let mut topk_mismatch = 0;
    for case in 0..1000 {
        let n = rng.random_range(2..=200);
        // coarse levels on half the instances to force ties
        let levels = if case % 2 == 0 { 0 } else { rng.random_range(2..12) };
        let scores: Vec<f64> = (0..n)
            .map(|_| {
                let u: f64 = rng.random();
                if levels == 0 {
                    u
                } else {
                    (u * levels as f64).floor() / levels as f64
                }
            })
            .collect();
        let mut truth: Vec<bool> = (0..n).map(|_| rng.random_bool(0.3)).collect();
        truth[0] = true;
        truth[1] = false;
        let errs = [
            average_precision(&scores, &truth).unwrap() - ap_oracle(&scores, &truth),
            roc_auc(&scores, &truth).unwrap() - roc_oracle(&scores, &truth),
            pr_auc(&scores, &truth).unwrap() - pr_oracle(&scores, &truth),
        ];
        worst = errs.iter().fold(worst, |w, e| w.max(e.abs()));

        let k_div = [1, 2, 3, 5, 7][case % 5];
        if topk_select(&scores, k_div).unwrap() != sort_oracle(&scores, k_div) {
            topk_mismatch += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        worst < 1e-12 && topk_mismatch == 0 && secs < 60.0,
        format!("1000 instances, worst metric deviation {worst:.1e}, top-K mismatches {topk_mismatch}, {secs:.1}s"),
    )
}

// ---------------------------------------------------------------- 4

fn permute_rows(t: &Tensor2, perm: &[usize]) -> Tensor2 {
    let rows: Vec<&[f64]> = perm.iter().map(|&p| t.row(p)).collect();
    Tensor2::from_rows(&rows).unwrap()
}

fn permute_features(f: &VideoFeatures, perm: &[usize]) -> VideoFeatures {
    let p = |m: Modality| {
        let src = f.get(m);
        let data = perm.iter().flat_map(|&r| src.row(r).iter().copied()).collect();
        FeatureMatrix::new(m, src.rows(), src.cols(), data).unwrap()
    };
    VideoFeatures::new(p(Modality::Video), p(Modality::Audio), p(Modality::Text)).unwrap()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

fn structural_invariants() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    let frames = 9;
    let mut perm: Vec<usize> = (0..frames).collect();
    perm.reverse();
    perm.swap(0, 4);

    // self-attention block on its own
    let x = common::random_tensor(&mut rng, frames, 8, -2.0, 2.0);
    let w: Vec<Tensor2> = (0..3).map(|_| common::random_tensor(&mut rng, 8, 8, -0.5, 0.5)).collect();
    let attend = |input: &Tensor2| {
        let mut g = Graph::new();
        let xv = g.constant(input.clone());
        let [q, k, v] = [0, 1, 2].map(|i| g.constant(w[i].clone()));
        let out = multi_head_attention(&mut g, xv, q, k, v, 2).unwrap();
        g.value(out).clone()
    };
    let mha_dev = max_abs_diff(
        permute_rows(&attend(&x), &perm).data(),
        attend(&permute_rows(&x, &perm)).data(),
    );

    // whole network: encoders and cross-modal attention, positional encoding off
    let cfg = ModelConfig {
        positional: PositionalEncoding::None,
        seed: 3,
        ..common::toy_model()
    };
    let params = ModelParams::init(&cfg).unwrap();
    let feats = common::toy_features(&mut rng, frames, cfg.input_dims);
    let base = forward(&feats, &params, &cfg, 3).unwrap();
    let moved = forward(&permute_features(&feats, &perm), &params, &cfg, 3).unwrap();
    let mut net_dev = max_abs_diff(
        &perm.iter().map(|&p| base.fused[p]).collect::<Vec<_>>(),
        &moved.fused,
    );
    for (a, b) in [
        (base.fused_repr.as_ref().unwrap(), moved.fused_repr.as_ref().unwrap()),
        (&base.encoded[0], &moved.encoded[0]),
    ] {
        net_dev = net_dev.max(max_abs_diff(permute_rows(a, &perm).data(), b.data()));
    }

    // top-K under positive scaling, and selection cardinality over the K grid
    let mut scaling_failures = 0;
    let mut cardinality_failures = 0;
    for _ in 0..200 {
        let t: usize = rng.random_range(1..150);
        let s: Vec<f64> = (0..t).map(|_| rng.random()).collect();
        for k in [1, 2, 3, 5] {
            let sel = topk_select(&s, k).unwrap();
            let c: f64 = rng.random_range(0.01..100.0);
            let scaled: Vec<f64> = s.iter().map(|v| v * c).collect();
            if topk_select(&scaled, k).unwrap() != sel {
                scaling_failures += 1;
            }
            let expected = t.div_ceil(k).max(1);
            if sel.len() != expected || selection_size(t, k).unwrap() != expected {
                cardinality_failures += 1;
            }
        }
    }
    check(
        mha_dev < 1e-9 && net_dev < 1e-9 && scaling_failures == 0 && cardinality_failures == 0,
        format!(
            "attention {mha_dev:.1e}, network {net_dev:.1e}, scaling failures {scaling_failures}, cardinality failures {cardinality_failures}"
        ),
    )
}

// ---------------------------------------------------------------- 5

/// Learning rate for the end-to-end runs.
const E2E_LR: f64 = 1e-3;

fn end_to_end() -> Outcome {
    let start = Instant::now();
    let spec = SyntheticSpec::default();
    let data = generate_synthetic(&spec).map_err(|e| e.to_string())?;
    let (tr, val, te) = split_dataset(data, 0.7, 0.15);
    let model = ModelConfig::with_dims(spec.dims);
    let untrained = evaluate_model(&te, &ModelParams::init(&model).unwrap(), &model, 3)
        .map_err(|e| e.to_string())?;
    let cfg = TrainConfig {
        epochs: 50,
        lr: E2E_LR,
        eval_every: 5,
        ..TrainConfig::default()
    };
    let out = train(&tr, &val, &model, &cfg).map_err(|e| e.to_string())?;
    let trained = evaluate_model(&te, &out.params, &model, 3).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let base = trained.positive_fraction;
    let u_roc = untrained.roc_auc.unwrap_or(f64::NAN);
    let t_roc = trained.roc_auc.unwrap_or(f64::NAN);
    check(
        t_roc >= 0.85
            && trained.map >= 2.0 * base
            && (0.4..=0.6).contains(&u_roc)
            && elapsed <= Duration::from_secs(15 * 60),
        format!(
            "test ROC-AUC {t_roc:.3} (>= 0.85), mAP {:.3} vs 2x base rate {:.3}, untrained ROC-AUC {u_roc:.3}, {:.0}s",
            trained.map,
            2.0 * base,
            elapsed.as_secs_f64()
        ),
    )
}

// ------------------------------------------------------- shared small benchmark

/// Smaller stand-in for the default synthetic set so the multi-seed comparisons fit
/// the test budget.
fn bench_spec(seed: u64) -> SyntheticSpec {
    SyntheticSpec {
        num_videos: 120,
        dims: [64, 32, 64],
        frames_min: 30,
        frames_max: 60,
        seed,
        ..SyntheticSpec::default()
    }
}

fn bench_model(spec: &SyntheticSpec, seed: u64) -> ModelConfig {
    ModelConfig {
        hidden: 32,
        heads: 4,
        ffn_width: 64,
        seed,
        ..ModelConfig::with_dims(spec.dims)
    }
}

fn bench_train(seed: u64) -> TrainConfig {
    TrainConfig {
        epochs: 30,
        lr: E2E_LR,
        batch_size: 16,
        eval_every: 5,
        seed,
        ..TrainConfig::default()
    }
}

fn bench_map(data: Vec<VideoSample>, model: &ModelConfig, seed: u64) -> Result<f64, String> {
    let (tr, val, te) = split_dataset(data, 0.7, 0.15);
    let out = train(&tr, &val, model, &bench_train(seed)).map_err(|e| e.to_string())?;
    let r = evaluate_model(&te, &out.params, model, 3).map_err(|e| e.to_string())?;
    Ok(r.map)
}

const SEEDS: [u64; 3] = [0, 1, 2];

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

// ---------------------------------------------------------------- 6

fn ablation_ordering() -> Outcome {
    let names = ["early_fusion", "early_fusion+encoder", "encoder+cma+dms", "full"];
    let mut maps = vec![Vec::new(); names.len()];
    for seed in SEEDS {
        let spec = bench_spec(seed);
        let data = generate_synthetic(&spec).map_err(|e| e.to_string())?;
        let grid = bench_model(&spec, seed).ablation_grid();
        for (i, name) in names.iter().enumerate() {
            let (_, cfg) = grid.iter().find(|(n, _)| n == name).unwrap();
            maps[i].push(bench_map(data.clone(), cfg, seed)?);
        }
    }
    let m: Vec<f64> = maps.iter().map(|v| mean(v)).collect();
    check(
        m[3] >= m[0] && m[2] >= m[1],
        format!(
            "mean mAP: full {:.3} vs early fusion {:.3}; encoders+CMA+gates {:.3} vs encoders only {:.3}",
            m[3], m[0], m[2], m[1]
        ),
    )
}

// ---------------------------------------------------------------- 7

fn text_strategy() -> Outcome {
    let mut margins = Vec::new();
    let mut detail = Vec::new();
    for seed in SEEDS {
        let mut res = [0.0; 2];
        for (i, mode) in [TextMode::Sentence, TextMode::Naive].into_iter().enumerate() {
            let spec = SyntheticSpec {
                carriers: vec![CarrierSet::single(Modality::Text)],
                text_mode: mode,
                ..bench_spec(seed)
            };
            let data = generate_synthetic(&spec).map_err(|e| e.to_string())?;
            res[i] = bench_map(data, &bench_model(&spec, seed), seed)?;
        }
        detail.push(format!("{:.3}/{:.3}", res[0], res[1]));
        margins.push(res[0] - res[1]);
    }
    let margin = mean(&margins);
    check(
        margin > 0.0,
        format!("sentence/naive mAP per seed {}; mean margin {margin:.3}", detail.join(", ")),
    )
}

// ---------------------------------------------------------------- 8

fn split_segments(
    all: Vec<(VideoSample, Vec<PlantedSegment>)>,
) -> (Vec<VideoSample>, Vec<VideoSample>, Vec<(VideoSample, Vec<PlantedSegment>)>) {
    let n = all.len();
    let n_train = (n as f64 * 0.7).round() as usize;
    let n_val = (n as f64 * 0.15).round() as usize;
    let mut it = all.into_iter();
    let tr = it.by_ref().take(n_train).map(|(s, _)| s).collect();
    let val = it.by_ref().take(n_val).map(|(s, _)| s).collect();
    (tr, val, it.collect())
}

fn gate_specialisation() -> Outcome {
    let mut detail = Vec::new();
    let mut all_ok = true;
    for seed in SEEDS {
        let spec = SyntheticSpec {
            carriers: Modality::ALL.map(CarrierSet::single).to_vec(),
            ..bench_spec(seed)
        };
        let all = generate_with_segments(&spec).map_err(|e| e.to_string())?;
        let (tr, val, te) = split_segments(all);
        let model = bench_model(&spec, seed);
        let out = train(&tr, &val, &model, &bench_train(seed)).map_err(|e| e.to_string())?;
        let samples: Vec<VideoSample> = te.iter().map(|(s, _)| s.clone()).collect();
        let traces = predict_split(&samples, &out.params, &model, 3).map_err(|e| e.to_string())?;
        let (mut inside, mut outside) = ((0.0, 0usize), (0.0, 0usize));
        for ((sample, segs), trace) in te.iter().zip(&traces) {
            if !sample.label {
                continue;
            }
            let mut planted = vec![false; sample.frames()];
            for s in segs {
                planted[s.start..s.start + s.len].fill(true);
            }
            for m in Modality::ALL {
                let carried: Vec<&PlantedSegment> = segs.iter().filter(|s| s.carriers.contains(m)).collect();
                if carried.is_empty() {
                    continue;
                }
                let alpha = trace.gate(m);
                for s in carried {
                    for t in s.start..s.start + s.len {
                        inside.0 += alpha[t];
                        inside.1 += 1;
                    }
                }
                for (t, &p) in planted.iter().enumerate() {
                    if !p {
                        outside.0 += alpha[t];
                        outside.1 += 1;
                    }
                }
            }
        }
        let (a_in, a_out) = (inside.0 / inside.1 as f64, outside.0 / outside.1 as f64);
        all_ok &= a_in > a_out;
        detail.push(format!("{a_in:.4}>{a_out:.4}"));
    }
    check(all_ok, format!("carrier gate inside>outside per seed: {}", detail.join(", ")))
}

// ---------------------------------------------------------------- 9

fn source_files(dir: &Path, out: &mut Vec<std::path::PathBuf>) {
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            source_files(&path, out);
        } else if path.extension().is_some_and(|e| e == "rs") {
            out.push(path);
        }
    }
}

fn reproducibility() -> Outcome {
    let spec = SyntheticSpec {
        num_videos: 24,
        dims: common::toy_model().input_dims,
        frames_min: 10,
        frames_max: 20,
        ..SyntheticSpec::default()
    };
    let data = generate_synthetic(&spec).map_err(|e| e.to_string())?;
    let (tr, val, _) = split_dataset(data, 0.7, 0.15);
    let model = ModelConfig {
        seed: 4,
        ..common::toy_model()
    };
    let cfg = TrainConfig {
        epochs: 3,
        batch_size: 5,
        seed: 4,
        ..TrainConfig::default()
    };
    let a = train(&tr, &val, &model, &cfg).map_err(|e| e.to_string())?;
    let b = train(&tr, &val, &model, &cfg).map_err(|e| e.to_string())?;
    let logs_equal = a.state.log_csv() == b.state.log_csv();

    let src = Path::new(env!("CARGO_MANIFEST_DIR")).join("src");
    let mut files = Vec::new();
    for sub in ["model", "losses", "trainer"] {
        source_files(&src.join(sub), &mut files);
    }
    let offenders: Vec<String> = files
        .iter()
        .filter(|p| fs::read_to_string(p).unwrap().contains("frame_truth"))
        .map(|p| p.display().to_string())
        .collect();

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    save_checkpoint(dir.path(), &a.final_params, &model).map_err(|e| e.to_string())?;
    let (loaded, loaded_cfg) = load_checkpoint(dir.path()).map_err(|e| e.to_string())?;
    let mut bit_exact = loaded == a.final_params && loaded_cfg == model;
    for s in &tr {
        let x = forward(&s.features, &a.final_params, &model, 3).unwrap();
        let y = forward(&s.features, &loaded, &loaded_cfg, 3).unwrap();
        bit_exact &= x.fused.iter().zip(&y.fused).all(|(p, q)| p.to_bits() == q.to_bits());
    }
    check(
        logs_equal && offenders.is_empty() && bit_exact,
        format!(
            "logs identical: {logs_equal}; files reading frame annotations on the training path: {}; checkpoint forward bit-exact: {bit_exact}",
            if offenders.is_empty() { "none".to_string() } else { offenders.join(" ") }
        ),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("gradient suite", gradient_suite),
        ("loss analytics", loss_analytics),
        ("oracle equivalence", oracle_equivalence),
        ("structural invariants", structural_invariants),
        ("synthetic end-to-end localisation", end_to_end),
        ("ablation ordering", ablation_ordering),
        ("text strategy", text_strategy),
        ("gate specialisation", gate_specialisation),
        ("reproducibility and hygiene", reproducibility),
    ];
    let wanted: Vec<usize> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let n = i + 1;
        if !wanted.is_empty() && !wanted.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let result = run();
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(d) => println!("criterion {n} {name}: PASS ({d}) [{secs:.1}s]"),
            Err(d) => {
                failed += 1;
                println!("criterion {n} {name}: FAIL ({d}) [{secs:.1}s]");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
