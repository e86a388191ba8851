//! Acceptance suite. Prints one PASS/FAIL/SKIP line per criterion to stderr
//! and fails if any criterion fails.
//!
//! Criterion 12 needs the real corpus: set `MEASURED_WIKI_CONVERT` to a
//! directory holding `train.jsonl` and `test.jsonl`.

mod common;

use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use measured::dataset::{read_examples, split, DatasetSplit, MeasurementExample};
use measured::encoder::{EncoderConfig, HashedEncoder};
use measured::evaluation::{evaluate, hungarian_max, log_mae, majority_baseline, median_baseline, EvalReport, Probe};
use measured::fewshot::{self, FewshotConfig};
use measured::model::{Model, ModelSpec, Variant};
use measured::synth::{generate, SynthConfig};
use measured::training::{train, TrainConfig, Weighting};
use measured::units::{manhattan_distance, DimId, Dimension, Exponents, UnitRegistry};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEEDS: [u64; 3] = [0, 1, 2];

struct Outcome {
    pass: Option<bool>,
    detail: String,
}

fn pass_if(ok: bool, detail: String) -> Outcome {
    Outcome { pass: Some(ok), detail }
}

fn skip(detail: &str) -> Outcome {
    Outcome {
        pass: None,
        detail: detail.to_string(),
    }
}

fn encoder_config() -> EncoderConfig {
    EncoderConfig {
        feature_dim: 4096,
        hidden_dim: 16,
        ..EncoderConfig::default()
    }
}

fn train_config(seed: u64) -> TrainConfig {
    TrainConfig {
        batch_size: 32,
        max_epochs: 30,
        learning_rate: 3e-3,
        warmup_steps: 50,
        patience: 3,
        seed,
        ..TrainConfig::default()
    }
}

fn corpus(dim_cue_prob: f64, seed: u64) -> DatasetSplit {
    let reg = UnitRegistry::builtin();
    let data = generate(
        &SynthConfig {
            n: 7000,
            dim_cue_prob,
            seed,
            ..SynthConfig::default()
        },
        &reg,
    )
    .unwrap();
    split(data, [0.8, 0.1, 0.1], seed).unwrap()
}

fn trained(variant: Variant, data: &DatasetSplit, seed: u64) -> Model<HashedEncoder> {
    let enc = HashedEncoder::new(encoder_config(), seed).unwrap();
    let mut model = Model::new(ModelSpec::new(variant, 16), enc, common::registry(), seed + 100).unwrap();
    train(&mut model, &data.train, &data.val, &train_config(seed)).unwrap();
    model
}

fn report(model: &Model<HashedEncoder>, data: &DatasetSplit) -> EvalReport {
    evaluate(model, &data.train, &data.test, &Probe::available(model.variant())).unwrap()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn sig(x: f64, digits: usize) -> String {
    format!("{:.*e}", digits - 1, x)
}

fn c1_conversion_factors() -> Outcome {
    let reg = UnitRegistry::builtin();
    let m = reg.unit_id("m").unwrap();
    let table = [("m", 1.0), ("km", 1000.0), ("ft", 0.3048), ("mi", 1609.34), ("yd", 0.9144), ("in", 0.0254)];
    let mut bad = Vec::new();
    for (u, factor) in table {
        let got = reg.convert(1.0, reg.unit_id(u).unwrap(), m).unwrap();
        if sig(got, 6) != sig(factor, 6) {
            bad.push(format!("{u}: {got}"));
        }
    }
    let km_mi = reg
        .convert(2.0, reg.unit_id("km").unwrap(), reg.unit_id("mi").unwrap())
        .unwrap();
    let ok = bad.is_empty() && sig(km_mi, 2) == sig(1.2, 2);
    pass_if(ok, format!("6 factors to 6 digits, 2 km = {km_mi:.6} mi {bad:?}"))
}

fn c2_conversion_properties() -> Outcome {
    let reg = UnitRegistry::builtin();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for _ in 0..10_000 {
        let d = DimId(rng.random_range(0..reg.num_dimensions()));
        let units = reg.units_of(d).unwrap();
        let pick = |rng: &mut ChaCha8Rng| units[rng.random_range(0..units.len())];
        let (a, b, c) = (pick(&mut rng), pick(&mut rng), pick(&mut rng));
        let x = 10f64.powf(rng.random_range(-3.0..6.0));
        let back = reg.convert(reg.convert(x, a, b).unwrap(), b, a).unwrap();
        worst = worst.max((back - x).abs() / x.abs());
        let direct = reg.convert(x, a, c).unwrap();
        let via = reg.convert(reg.convert(x, a, b).unwrap(), b, c).unwrap();
        worst = worst.max((via - direct).abs() / direct.abs());
    }
    pass_if(worst <= 1e-9, format!("10000 draws, worst relative error {worst:.2e}"))
}

fn c3_manhattan() -> Outcome {
    let reg = UnitRegistry::builtin();
    let v = reg.dimension_id("velocity").unwrap();
    let l = reg.dimension_id("length").unwrap();
    let vl = manhattan_distance(reg.dimension(v), reg.dimension(l));
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut random = || Dimension {
        name: String::new(),
        exponents: Exponents(std::array::from_fn(|_| rng.random_range(-4..=4))),
    };
    let mut violations = 0;
    for _ in 0..1000 {
        let (a, b, c) = (random(), random(), random());
        let ab = manhattan_distance(&a, &b);
        if manhattan_distance(&a, &a) != 0
            || ab != manhattan_distance(&b, &a)
            || (ab == 0) != (a.exponents == b.exponents)
            || manhattan_distance(&a, &c) > ab + manhattan_distance(&b, &c)
        {
            violations += 1;
        }
    }
    pass_if(vl == 1 && violations == 0, format!("velocity-length = {vl}, {violations} metric violations in 1000 triples"))
}

fn c4_gradients() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut where_ = String::new();
    for v in Variant::ALL {
        for seed in 0..5 {
            let e = common::fd_max_rel_error(v, seed);
            if e > worst {
                worst = e;
                where_ = format!("{v} seed {seed}");
            }
        }
    }
    pass_if(worst < 1e-4, format!("7 variants x 5 seeds, max relative error {worst:.2e} ({where_})"))
}

fn brute_force(w: &[Vec<f64>]) -> f64 {
    fn go(w: &[Vec<f64>], row: usize, used: &mut [bool]) -> f64 {
        if row == w.len() {
            return 0.0;
        }
        let mut best = f64::NEG_INFINITY;
        for j in 0..w.len() {
            if !used[j] {
                used[j] = true;
                best = best.max(w[row][j] + go(w, row + 1, used));
                used[j] = false;
            }
        }
        best
    }
    go(w, 0, &mut vec![false; w.len()])
}

fn c5_hungarian() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut mismatches = 0;
    for n in 2..=6 {
        for _ in 0..100 {
            let w: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..n).map(|_| rng.random_range(0..100) as f64).collect())
                .collect();
            let a = hungarian_max(&w).unwrap();
            let got: f64 = a.iter().enumerate().map(|(i, j)| w[i][*j]).sum();
            if got != brute_force(&w) {
                mismatches += 1;
            }
        }
    }
    pass_if(mismatches == 0, format!("500 matrices, {mismatches} mismatches"))
}

fn c6_log_mae_and_median() -> Outcome {
    let lm = log_mae(&[1.0, 10.0, 100.0], &[10.0; 3]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let ys: Vec<f64> = (0..101).map(|_| 10f64.powf(rng.random_range(-3.0..5.0))).collect();
    let med = median_baseline(&ys).unwrap();
    let at_median = log_mae(&ys, &vec![med; ys.len()]).unwrap();
    let grid_best = (0..=2000)
        .map(|i| 10f64.powf(-4.0 + i as f64 * 0.005))
        .chain(ys.iter().copied())
        .map(|c| log_mae(&ys, &vec![c; ys.len()]).unwrap())
        .fold(f64::INFINITY, f64::min);
    pass_if(
        lm == 2.0 / 3.0 && at_median <= grid_best + 1e-12,
        format!("log-mae = {lm}, median {at_median:.6} vs best grid constant {grid_best:.6}"),
    )
}

fn c7_separable() -> Outcome {
    let mut f1s = Vec::new();
    let mut maj_acc = Vec::new();
    for seed in SEEDS {
        let data = corpus(1.0, seed);
        let model = trained(Variant::DiscD, &data, seed);
        f1s.push(report(&model, &data).probes["dim"].macro_f1.unwrap());
        // majority classifier fitted on train, scored on a class-balanced test subset
        let train_dims: Vec<DimId> = data.train.iter().map(|e| e.dimension).collect();
        let maj = majority_baseline(&train_dims).unwrap();
        let mut by_class: std::collections::BTreeMap<DimId, Vec<&MeasurementExample>> = Default::default();
        for e in &data.test {
            by_class.entry(e.dimension).or_default().push(e);
        }
        let per = by_class.values().map(Vec::len).min().unwrap();
        let balanced: Vec<&MeasurementExample> = by_class.values().flat_map(|v| v[..per].iter().copied()).collect();
        let correct = balanced.iter().filter(|e| e.dimension == maj).count();
        maj_acc.push(correct as f64 / balanced.len() as f64);
    }
    let min_f1 = f1s.iter().copied().fold(f64::INFINITY, f64::min);
    let acc_ok = maj_acc.iter().all(|a| (a - 1.0 / 7.0).abs() <= 0.01);
    pass_if(
        min_f1 >= 0.95 && acc_ok,
        format!("Disc-D macro-F1 {f1s:.3?} (min {min_f1:.3}); majority accuracy {maj_acc:.4?}"),
    )
}

fn c8_frozen_gap() -> Outcome {
    let data = corpus(0.7, 8);
    let base = TrainConfig {
        batch_size: 32,
        max_epochs: 200,
        learning_rate: 3e-3,
        warmup_steps: 10,
        patience: 5,
        ..TrainConfig::default()
    };
    let config = FewshotConfig {
        seeds: 3,
        encoder: encoder_config(),
        frozen_train: TrainConfig {
            learning_rate: 3e-2,
            weighting: Weighting::LogFrequency,
            ..base.clone()
        },
        train: base,
        seed: 8,
        ..FewshotConfig::default()
    };
    let r = fewshot::run(&config, &data, &common::registry()).unwrap();
    let mut ok = true;
    let mut parts = Vec::new();
    for row in &r.rows {
        let mut cells = Vec::new();
        for k in &config.ks {
            let free = row.cell(*k, false).unwrap().mean;
            let frozen = row.cell(*k, true).unwrap().mean;
            let worse = if row.metric == "macro_f1" { frozen < free } else { frozen > free };
            ok &= worse;
            cells.push(format!("k={k} {free:.3}/{frozen:.3}"));
        }
        parts.push(format!("{} {} [{}]", row.variant, row.metric, cells.join(", ")));
    }
    pass_if(ok, format!("trainable/frozen means: {}", parts.join("; ")))
}

struct Trio {
    genyd: EvalReport,
    discy: EvalReport,
    gemmuy: EvalReport,
}

fn c9_conditioning(runs: &[Trio]) -> Outcome {
    let gen: Vec<f64> = runs.iter().map(|r| r.genyd.probes["num-gold"].log_mae.unwrap()).collect();
    let disc: Vec<f64> = runs.iter().map(|r| r.discy.probes["num"].log_mae.unwrap()).collect();
    let uy: Vec<f64> = runs.iter().map(|r| r.gemmuy.probes["num-gold"].log_mae.unwrap()).collect();
    let (g, d, u) = (mean(&gen), mean(&disc), mean(&uy));
    pass_if(
        g < d && u <= g,
        format!("log-mae Disc-Y {d:.3}, Gen-YD gold dimension {g:.3}, GeMM-UY gold unit {u:.3} (means of 3 seeds)"),
    )
}

fn c10_posterior(runs: &[Trio]) -> Outcome {
    let prior: Vec<f64> = runs.iter().map(|r| r.genyd.probes["dim"].macro_f1.unwrap()).collect();
    let post: Vec<f64> = runs.iter().map(|r| r.genyd.probes["dim-given-y"].macro_f1.unwrap()).collect();
    let (a, b) = (mean(&prior), mean(&post));
    pass_if(b > a, format!("Gen-YD macro-F1 from text {a:.3}, with number {b:.3} (means of 3 seeds)"))
}

fn c11_unit_mask() -> Outcome {
    let reg = common::registry();
    let mut checked = 0usize;
    let mut incompatible = 0usize;
    let mut leaked = 0usize;
    for (i, variant) in [Variant::Gemm, Variant::GemmUy, Variant::DiscDu].into_iter().enumerate() {
        let data = corpus(0.7, 11 + i as u64);
        let model = trained(variant, &data, 11);
        for e in &data.test {
            let h = model.encode(&e.text);
            let p = model.predict(&h).unwrap();
            let (d, u) = (p.dimension.unwrap(), p.unit.unwrap());
            if reg.unit(u).dimension != d {
                incompatible += 1;
            }
            for dim in 0..reg.num_dimensions() {
                let allowed = reg.units_of(DimId(dim)).unwrap();
                let probs = model.unit_distribution(&h, DimId(dim)).unwrap();
                leaked += probs
                    .iter()
                    .enumerate()
                    .filter(|(u, p)| **p != 0.0 && !allowed.iter().any(|a| a.0 == *u))
                    .count();
            }
            checked += 1;
        }
    }
    pass_if(
        incompatible == 0 && leaked == 0,
        format!("{checked} test predictions: {incompatible} incompatible units, {leaked} nonzero masked entries"),
    )
}

fn c12_real_corpus() -> Outcome {
    let Some(dir) = std::env::var_os("MEASURED_WIKI_CONVERT").map(PathBuf::from) else {
        return skip("set MEASURED_WIKI_CONVERT to a directory with train.jsonl and test.jsonl");
    };
    let reg = UnitRegistry::builtin();
    let train = read_examples(dir.join("train.jsonl"), &reg).unwrap().examples;
    let test = read_examples(dir.join("test.jsonl"), &reg).unwrap().examples;
    let med = median_baseline(&train.iter().map(|e| e.canonical).collect::<Vec<_>>()).unwrap();
    let gold: Vec<f64> = test.iter().map(|e| e.canonical).collect();
    let lm = log_mae(&gold, &vec![med; gold.len()]).unwrap();
    let maj = majority_baseline(&train.iter().map(|e| e.dimension).collect::<Vec<_>>()).unwrap();
    let acc = test.iter().filter(|e| e.dimension == maj).count() as f64 / test.len() as f64;
    pass_if(
        (lm - 1.97).abs() <= 0.02 && (acc - 0.331).abs() <= 0.005,
        format!("median log-mae {lm:.3}, majority dimension accuracy {acc:.3}"),
    )
}

#[test]
fn acceptance() {
    let start = Instant::now();
    let mut results: Vec<(u32, &str, Outcome)> = Vec::new();
    let mut add = |n: u32, name: &'static str, o: Outcome| {
        let status = match o.pass {
            Some(true) => "PASS",
            Some(false) => "FAIL",
            None => "SKIP",
        };
        // written straight to stderr so the lines survive output capture
        let _ = writeln!(std::io::stderr(), "\ncriterion {n:>2} {status}: {name}: {}", o.detail);
        results.push((n, name, o));
    };

    add(1, "conversion factors", c1_conversion_factors());
    add(2, "conversion round trip and composition", c2_conversion_properties());
    add(3, "dimension distance", c3_manhattan());
    add(4, "gradient check", c4_gradients());
    add(5, "optimal latent-class matching", c5_hungarian());
    add(6, "log-mae and median baseline", c6_log_mae_and_median());
    add(7, "keyword-separable dimensions", c7_separable());
    add(8, "frozen encoder gap", c8_frozen_gap());

    let runs: Vec<Trio> = SEEDS
        .iter()
        .map(|&seed| {
            let data = corpus(0.7, 20 + seed);
            Trio {
                genyd: report(&trained(Variant::GenYd, &data, seed), &data),
                discy: report(&trained(Variant::DiscY, &data, seed), &data),
                gemmuy: report(&trained(Variant::GemmUy, &data, seed), &data),
            }
        })
        .collect();
    add(9, "conditioning helps numbers", c9_conditioning(&runs));
    add(10, "number helps dimensions", c10_posterior(&runs));
    add(11, "unit mask", c11_unit_mask());
    add(12, "real-corpus baselines", c12_real_corpus());
    add(
        13,
        "pretrained-encoder scores",
        skip("out of scope: needs a pretrained transformer encoder"),
    );

    let _ = writeln!(std::io::stderr(), "acceptance finished in {:.1}s", start.elapsed().as_secs_f64());
    let failed: Vec<String> = results
        .iter()
        .filter(|r| r.2.pass == Some(false))
        .map(|r| format!("{} ({})", r.0, r.1))
        .collect();
    assert!(failed.is_empty(), "failed criteria: {}", failed.join(", "));
}
