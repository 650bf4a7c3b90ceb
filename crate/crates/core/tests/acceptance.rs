//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.
//!
//! Criterion 9 needs external corpora and pretrained vectors and is skipped
//! unless `DAS_FULL_DATA` points at a directory laid out as described in the
//! README.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use das::data::{DomainTag, NUM_SENTIMENTS};
use das::ensemble::{predict_all, EnsembleState};
use das::eval::{filter_analysis, ttest_one_tailed};
use das::losses::{entropy_min_loss, mmd_rbf, rampup_at_ratio, rampup_weight, symmetric_kl};
use das::model::{argmax_rows, ModelParams};
use das::numerics::Tensor;
use das::synth::SynthRecipe;
use das::trainer::{run_experiment, ExperimentData, TrainConfig, Variant};

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome { passed, detail: detail.into() }
}

fn main() {
    let criteria: Vec<(&str, fn() -> Outcome)> = vec![
        ("1 gradient correctness", gradient_correctness),
        ("2 closed-form loss values", closed_form_values),
        ("3 reduction identity", reduction_identity),
        ("4 synthetic adaptation ordering", adaptation_ordering),
        ("5 entropy minimisation without alignment", entropy_failure_mode),
        ("6 ensemble algebra", ensemble_algebra),
        ("7 determinism", determinism),
        ("8 filter analysis recovers planted trigram", planted_trigram),
        ("9 full-scale small-scale setting", full_scale),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let start = Instant::now();
        let o = check();
        let status = if o.passed { "PASS" } else { "FAIL" };
        if !o.passed {
            failed += 1;
        }
        println!("[{status}] criterion {name} ({:.1}s): {}", start.elapsed().as_secs_f64(), o.detail);
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}

fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let lines = match das::cli::gradcheck_report(0, false) {
        Ok(l) => l,
        Err(e) => return outcome(false, e.to_string()),
    };
    let secs = start.elapsed().as_secs_f64();
    let names: Vec<&str> = lines.iter().map(|l| l.name.as_str()).collect();
    let expected = ["L", "J", "Gamma", "Omega", "MMD", "total"];
    let worst = lines.iter().map(|l| l.max_rel_error).fold(0.0, f64::max);
    let ok = names == expected && lines.iter().all(|l| l.passed && l.max_rel_error <= 1e-4) && secs < 30.0;
    let summary: Vec<String> = lines.iter().map(|l| format!("{}={:.1e}", l.name, l.max_rel_error)).collect();
    outcome(ok, format!("{} (worst {worst:.2e}, {secs:.2}s)", summary.join(" ")))
}

fn closed_form_values() -> Outcome {
    let kl = symmetric_kl(&[0.5, 0.5], &[0.25, 0.75]).unwrap();
    let uniform = Tensor::filled(&[5, 3], 1.0 / 3.0);
    let ent = entropy_min_loss(&uniform).unwrap();
    let mmd = mmd_rbf(&Tensor::matrix(1, 1, vec![0.0]).unwrap(), &Tensor::matrix(1, 1, vec![1.0]).unwrap(), 1.0).unwrap();
    let w_end = rampup_weight(30, 30, 3.0).unwrap();
    let w_zero = rampup_at_ratio(0.0, 3.0);
    let kl_oracle: f64 = [(0.5f64, 0.25f64), (0.5, 0.75)].iter().map(|&(p, q)| (p - q) * (p / q).ln()).sum();
    let mmd_oracle = 2.0 - 2.0 * (-0.5f64).exp();
    let checks = [
        ((kl - 0.2747).abs() <= 1e-4 && (kl - kl_oracle).abs() <= 1e-12, format!("symKL={kl:.6}")),
        ((ent - 3f64.ln()).abs() <= 1e-4, format!("H(uniform)={ent:.6}")),
        ((mmd - 0.7869).abs() <= 1e-4 && (mmd - mmd_oracle).abs() <= 1e-12, format!("MMD²={mmd:.6}")),
        (w_end == 3.0, format!("w(t_max)={w_end}")),
        ((w_zero - 3.0 * (-5f64).exp()).abs() <= 1e-9, format!("w(0)={w_zero:.9}")),
    ];
    let ok = checks.iter().all(|c| c.0);
    outcome(ok, checks.iter().map(|c| c.1.clone()).collect::<Vec<_>>().join(" "))
}

fn small_synth(seed: u64) -> SynthRecipe {
    SynthRecipe {
        n_source_labeled: 400,
        n_source_unlabeled: 100,
        n_target_unlabeled: 300,
        n_target_test: 200,
        shift: 0.5,
        seed,
        ..SynthRecipe::default()
    }
}

fn experiment_data(recipe: &SynthRecipe, with_source_unlabeled: bool) -> ExperimentData {
    let c = recipe.generate().expect("synthetic corpora");
    ExperimentData {
        source: c.source_labeled,
        source_unlabeled: with_source_unlabeled.then(|| c.source_unlabeled.into_unlabeled(DomainTag::SourceUnlabeled)),
        target: c.target_unlabeled.into_unlabeled(DomainTag::Target),
        target_test: Some(c.target_test),
        embeddings: None,
    }
}

fn small_config() -> TrainConfig {
    TrainConfig {
        epochs: 4,
        batch_size: 25,
        hidden: 16,
        embedding_dim: 12,
        n_dev: 50,
        learning_rate: 0.005,
        ..TrainConfig::default()
    }
}

fn reduction_identity() -> Outcome {
    let data = experiment_data(&small_synth(11), true);
    let zeroed = TrainConfig {
        lambda1: 0.0,
        lambda2: 0.0,
        lambda3: 0.0,
        ..small_config()
    }
    .with_variant(Variant::Das);
    let naive = small_config().with_variant(Variant::NaiveNN);
    let (a, b) = match (run_experiment(&zeroed, &data), run_experiment(&naive, &data)) {
        (Ok(a), Ok(b)) => (a, b),
        (Err(e), _) | (_, Err(e)) => return outcome(false, e.to_string()),
    };
    let params_equal = bitwise_equal(&a.params, &b.params);
    let history_equal = a.record.history.to_csv() == b.record.history.to_csv();
    let test_equal = a.record.test == b.record.test;
    outcome(
        params_equal && history_equal && test_equal,
        format!("params bitwise equal: {params_equal}, history equal: {history_equal}, test metrics equal: {test_equal}"),
    )
}

fn bitwise_equal(a: &ModelParams, b: &ModelParams) -> bool {
    a.tensors().iter().zip(b.tensors()).all(|(x, y)| {
        x.shape() == y.shape() && x.data().iter().zip(y.data()).all(|(p, q)| p.to_bits() == q.to_bits())
    })
}

/// Desk-scale task used for the ordering check.
pub fn ordering_recipe(seed: u64) -> SynthRecipe {
    SynthRecipe {
        n_source_labeled: 2000,
        n_target_unlabeled: 2000,
        n_target_test: 1000,
        shift: 0.7,
        seed,
        ..SynthRecipe::default()
    }
}

pub fn ordering_config() -> TrainConfig {
    TrainConfig {
        epochs: 15,
        hidden: 64,
        embedding_dim: 32,
        n_dev: 200,
        learning_rate: 0.005,
        lambda1: 50.0,
        lambda2: 0.5,
        ..TrainConfig::default()
    }
}

fn target_accuracies(variant: Variant, config: &TrainConfig, recipe: impl Fn(u64) -> SynthRecipe) -> Result<Vec<f64>, String> {
    (0..5u64)
        .map(|seed| {
            let data = experiment_data(&recipe(seed), false);
            let cfg = TrainConfig { seed, ..config.clone() }.with_variant(variant);
            let run = run_experiment(&cfg, &data).map_err(|e| e.to_string())?;
            Ok(run.record.test.expect("test set").accuracy)
        })
        .collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn adaptation_ordering() -> Outcome {
    let start = Instant::now();
    let config = ordering_config();
    let mut accs = Vec::new();
    for v in [Variant::NaiveNN, Variant::Fann, Variant::Das] {
        match target_accuracies(v, &config, ordering_recipe) {
            Ok(a) => accs.push(a),
            Err(e) => return outcome(false, e),
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let (naive, fann, das) = (mean(&accs[0]), mean(&accs[1]), mean(&accs[2]));
    let p = ttest_one_tailed(&accs[2], &accs[0]).map(|t| t.p_value).unwrap_or(1.0);
    let ok = das >= fann + 0.02 && das >= naive + 0.05 && p < 0.05 && secs < 600.0;
    outcome(
        ok,
        format!(
            "mean target accuracy NaiveNN {:.4} FANN {:.4} DAS {:.4}; DAS vs NaiveNN p = {p:.2e}; {secs:.0}s; per seed DAS {:?} FANN {:?} NaiveNN {:?}",
            naive, fann, das, round3(&accs[2]), round3(&accs[1]), round3(&accs[0])
        ),
    )
}

fn round3(v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| (x * 1000.0).round() / 1000.0).collect()
}

fn entropy_failure_mode() -> Outcome {
    let config = TrainConfig {
        lambda1: 0.0,
        lambda2: 1.0,
        ..ordering_config()
    };
    let recipe = |seed| SynthRecipe { shift: 1.0, ..ordering_recipe(seed) };
    let accs = match target_accuracies(Variant::DasEm, &config, recipe) {
        Ok(a) => a,
        Err(e) => return outcome(false, e),
    };
    let limit = 1.0 / NUM_SENTIMENTS as f64 + 0.10;
    let m = mean(&accs);
    outcome(m <= limit, format!("mean target accuracy {m:.4} (limit {limit:.4}); per seed {:?}", round3(&accs)))
}

fn ensemble_algebra() -> Outcome {
    let alpha = 0.6;
    let z_prime = Tensor::from_rows(&[vec![0.2, 0.5, 0.3], vec![0.7, 0.1, 0.2], vec![0.1, 0.1, 0.8]]).unwrap();
    let mut state = EnsembleState::new(3, 3, alpha).unwrap();
    let mut worst: f64 = 0.0;
    for k in 1..=12 {
        state.update(&z_prime).unwrap();
        let factor = 1.0 - alpha.powi(k);
        for (z, zp) in state.z.data().iter().zip(z_prime.data()) {
            worst = worst.max((z - factor * zp).abs());
        }
    }
    // first-epoch targets against the current model's argmax predictions
    let data = experiment_data(&small_synth(5), false);
    let cfg = TrainConfig { epochs: 1, ..small_config() }.with_variant(Variant::NaiveNN);
    let run = run_experiment(&cfg, &data).expect("training run");
    let docs: Vec<Vec<usize>> = data
        .target
        .documents
        .iter()
        .map(|d| run.vocab.encode(&d.tokens, cfg.max_doc_len))
        .collect();
    let preds = predict_all(&run.params, &docs).unwrap();
    let mut fresh = EnsembleState::new(docs.len(), 3, alpha).unwrap();
    fresh.update(&preds).unwrap();
    let targets_match = argmax_rows(&fresh.z_tilde) == argmax_rows(&preds);
    let ok = worst <= 1e-12 && targets_match;
    outcome(ok, format!("max |Z - (1-α^k)Z'| = {worst:.2e}; first-epoch targets equal argmax predictions: {targets_match}"))
}

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_das")
}

fn run_train(data: &Path, out: &Path, config: &Path) -> Result<(), String> {
    let o = Command::new(bin())
        .args(["train", "--config"])
        .arg(config)
        .arg("--out")
        .arg(out)
        .arg("--source")
        .arg(data.join("source_labeled.jsonl"))
        .arg("--source-unlabeled")
        .arg(data.join("source_unlabeled.jsonl"))
        .arg("--target")
        .arg(data.join("target_unlabeled.jsonl"))
        .arg("--target-test")
        .arg(data.join("target_test.jsonl"))
        .output()
        .map_err(|e| e.to_string())?;
    if o.status.success() {
        Ok(())
    } else {
        Err(String::from_utf8_lossy(&o.stderr).into_owned())
    }
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    small_synth(21).generate().unwrap().save(&data).unwrap();
    let config = dir.path().join("config.txt");
    std::fs::write(&config, small_config().to_config_string()).unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        if let Err(e) = run_train(&data, out, &config) {
            return outcome(false, e);
        }
    }
    let same = |f: &str| std::fs::read(a.join(f)).ok() == std::fs::read(b.join(f)).ok() && a.join(f).is_file();
    let (h, c) = (same("history.csv"), same("checkpoint.bin"));
    outcome(h && c, format!("history.csv identical: {h}; checkpoint.bin identical: {c}"))
}

/// Brute-force window scan: activation of `filter` on every window of
/// every document, computed directly from the parameters.
fn oracle_best_window(params: &ModelParams, docs: &[Vec<usize>], filter: usize) -> (Vec<usize>, f64) {
    let d = params.embedding_dim();
    let w = params.conv_w.row(filter);
    let mut best = (Vec::new(), f64::NEG_INFINITY);
    for doc in docs {
        let padded: Vec<usize> = std::iter::once(0).chain(doc.iter().copied()).chain(std::iter::once(0)).collect();
        for win in padded.windows(3) {
            let mut a = params.conv_b.data()[filter];
            for (slot, &tok) in win.iter().enumerate() {
                for k in 0..d {
                    a += w[slot * d + k] * params.embedding.row(tok)[k];
                }
            }
            let a = a.max(0.0);
            if a > best.1 {
                best = (win.to_vec(), a);
            }
        }
    }
    best
}

fn planted_trigram() -> Outcome {
    use das::data::{Vocab, POSITIVE};
    use rand::Rng as _;
    let words = ["<pad>", "<unk>", "love", "hate", "okay", "film", "plot", "the", "a", "was"];
    let vocab = Vocab::from_tokens(words.iter().map(|s| s.to_string()).collect()).unwrap();
    let (v, d, h) = (vocab.len(), 4, 8);
    let mut rng = das::rng::stream(8, das::rng::Stream::Init);
    let mut emb: Vec<f64> = (0..v * d).map(|_| rng.random_range(-0.25..0.25)).collect();
    emb[..d].fill(0.0);
    // "love" gets a long embedding aligned with the planted filter
    let love = vocab.id("love");
    emb[love * d..(love + 1) * d].copy_from_slice(&[1.0, 1.0, 1.0, 1.0]);
    let mut conv: Vec<f64> = (0..h * 3 * d).map(|_| rng.random_range(-0.3..0.3)).collect();
    let planted = 5;
    conv[planted * 3 * d..(planted + 1) * 3 * d].fill(0.5);
    let mut out_w: Vec<f64> = (0..NUM_SENTIMENTS * h).map(|_| rng.random_range(-0.5..0.5)).collect();
    out_w[POSITIVE * h + planted] = 2.0;
    let params = ModelParams {
        embedding: Tensor::matrix(v, d, emb).unwrap(),
        conv_w: Tensor::matrix(h, 3 * d, conv).unwrap(),
        conv_b: Tensor::vector(vec![0.0; h]),
        out_w: Tensor::matrix(NUM_SENTIMENTS, h, out_w).unwrap(),
        out_b: Tensor::vector(vec![0.0; NUM_SENTIMENTS]),
        window: 3,
    };
    let texts = [
        "the film was okay",
        "i love love love the plot",
        "hate the plot",
        "love the film",
        "a film",
        "love love",
        "the plot was love",
    ];
    let docs: Vec<(Vec<usize>, DomainTag)> = texts
        .iter()
        .map(|t| (t.split(' ').map(|w| vocab.id(w)).collect(), DomainTag::Target))
        .collect();
    let plain: Vec<Vec<usize>> = docs.iter().map(|d| d.0.clone()).collect();
    let report = match filter_analysis(&params, &vocab, &docs, 10.min(h), 5) {
        Ok(r) => r,
        Err(e) => return outcome(false, e.to_string()),
    };
    let top_filter = &report.classes[POSITIVE].filters[0];
    let (oracle_ids, oracle_act) = oracle_best_window(&params, &plain, top_filter.filter);
    let oracle: Vec<String> = oracle_ids.iter().map(|&i| if i == 0 { "*".to_string() } else { vocab.token(i).to_string() }).collect();
    let rank1 = &top_filter.top[0];
    let ok = top_filter.filter == planted
        && rank1.ngram == ["love", "love", "love"]
        && rank1.ngram == oracle
        && (rank1.activation - oracle_act).abs() < 1e-12;
    outcome(
        ok,
        format!(
            "top positive filter {} (planted {planted}); rank-1 {} at {:.4}; brute-force oracle {} at {:.4}",
            top_filter.filter,
            rank1.ngram.join("-"),
            rank1.activation,
            oracle.join("-"),
            oracle_act
        ),
    )
}

fn full_scale() -> Outcome {
    let Some(root) = std::env::var_os("DAS_FULL_DATA").map(PathBuf::from) else {
        return outcome(true, "SKIPPED: set DAS_FULL_DATA to run the twelve small-scale tasks");
    };
    full_scale_run(&root).unwrap_or_else(|e| outcome(false, e))
}

/// Expects `<root>/embeddings.txt` and, for each domain X in {book, dvd,
/// electronics, kitchen}, `<root>/X/labeled.jsonl` and
/// `<root>/X/unlabeled.jsonl`. Setting 1: the target's labeled set is the
/// test set and its unlabeled set the adaptation data.
fn full_scale_run(root: &Path) -> Result<Outcome, String> {
    use das::data::{detect_format, load_corpus, RatingScheme};
    let domains = ["book", "dvd", "electronics", "kitchen"];
    let load = |p: PathBuf, tag| -> Result<das::data::Corpus, String> {
        let fmt = detect_format(&p).map_err(|e| e.to_string())?;
        load_corpus(&p, fmt, RatingScheme::Amazon5, tag).map_err(|e| e.to_string())
    };
    let mut das_acc = Vec::new();
    let mut naive_acc = Vec::new();
    for s in domains {
        for t in domains.iter().filter(|t| **t != s) {
            let data = ExperimentData {
                source: load(root.join(s).join("labeled.jsonl"), DomainTag::SourceLabeled)?,
                source_unlabeled: None,
                target: load(root.join(t).join("unlabeled.jsonl"), DomainTag::Target)?.into_unlabeled(DomainTag::Target),
                target_test: Some(load(root.join(t).join("labeled.jsonl"), DomainTag::Target)?),
                embeddings: Some(root.join("embeddings.txt")),
            };
            for (variant, sink) in [(Variant::Das, &mut das_acc), (Variant::NaiveNN, &mut naive_acc)] {
                let cfg = TrainConfig::default().with_variant(variant);
                let run = run_experiment(&cfg, &data).map_err(|e| e.to_string())?;
                sink.push(run.record.test.expect("test set").accuracy * 100.0);
            }
        }
    }
    let (d, n) = (mean(&das_acc), mean(&naive_acc));
    Ok(outcome(
        (d - 60.24).abs() <= 2.0 && d > n,
        format!("DAS average {d:.2} (target 60.24 ± 2.0), NaiveNN average {n:.2}"),
    ))
}
