//! Command implementations shared by the binary and the integration tests.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;

use crate::data::{
    detect_format, load_corpus, Corpus, CorpusFormat, DomainTag, RatingScheme, Vocab, LABEL_NAMES,
};
use crate::error::{DasError, Result};
use crate::eval::{evaluate, filter_analysis, ttest_one_tailed, EvalReport, FilterReport};
use crate::losses::{graph, DistanceLoss};
use crate::model::{encode_batch, load_checkpoint, logits, save_checkpoint, ParamVars};
use crate::numerics::{analytic_gradients, grad_check_against, GradCheckReport, Tape, Tensor, Var};
use crate::rng::{stream, Stream};
use crate::synth::SynthRecipe;
use crate::trainer::{run_experiment_with_dumps, ExperimentData, RunRecord, TrainConfig};

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const VOCAB_FILE: &str = "vocab.txt";
pub const HISTORY_FILE: &str = "history.csv";
pub const REPORT_FILE: &str = "report.json";
pub const CONFIG_FILE: &str = "config.txt";

/// Gradient-check step and tolerance.
pub const GRADCHECK_H: f64 = 1e-5;
pub const GRADCHECK_TOL: f64 = 1e-4;

fn require_file(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(DasError::Data(format!("input file not found: {}", path.display())))
    }
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| DasError::io(path, e))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| DasError::io(path, e))
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("serialisable report")
}

pub fn load_config(path: Option<&Path>) -> Result<TrainConfig> {
    match path {
        None => Ok(TrainConfig::default()),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| match e.kind() {
                std::io::ErrorKind::NotFound => DasError::Config(format!("config file not found: {}", p.display())),
                _ => DasError::io(p, e),
            })?;
            TrainConfig::parse(&text)
        }
    }
}

/// Loads a corpus, guessing the format unless one is given.
pub fn read_corpus(path: &Path, format: Option<CorpusFormat>, scheme: RatingScheme, domain: DomainTag) -> Result<Corpus> {
    require_file(path)?;
    let format = match format {
        Some(f) => f,
        None => detect_format(path)?,
    };
    let corpus = load_corpus(path, format, scheme, domain)?;
    if corpus.is_empty() {
        return Err(DasError::Data(format!("{}: corpus file is empty", path.display())));
    }
    Ok(corpus)
}

#[derive(Debug, Clone)]
pub struct TrainArgs {
    pub config: TrainConfig,
    pub out: PathBuf,
    pub source: PathBuf,
    pub source_unlabeled: Option<PathBuf>,
    pub target: PathBuf,
    pub target_test: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub format: Option<CorpusFormat>,
    pub runs: usize,
}

impl TrainArgs {
    pub fn load_data(&self) -> Result<ExperimentData> {
        let scheme = self.config.rating_scheme;
        for p in [Some(&self.source), self.source_unlabeled.as_ref(), Some(&self.target), self.target_test.as_ref(), self.embeddings.as_ref()]
            .into_iter()
            .flatten()
        {
            require_file(p)?;
        }
        let source = read_corpus(&self.source, self.format, scheme, DomainTag::SourceLabeled)?;
        if source.labels().is_none() {
            return Err(DasError::Data(format!("{}: every source document needs a label", self.source.display())));
        }
        let source_unlabeled = self
            .source_unlabeled
            .as_deref()
            .map(|p| read_corpus(p, self.format, scheme, DomainTag::SourceUnlabeled).map(|c| c.into_unlabeled(DomainTag::SourceUnlabeled)))
            .transpose()?;
        let target = read_corpus(&self.target, self.format, scheme, DomainTag::Target)?;
        let target_test = self
            .target_test
            .as_deref()
            .map(|p| read_corpus(p, self.format, scheme, DomainTag::Target))
            .transpose()?;
        Ok(ExperimentData {
            source,
            source_unlabeled,
            target,
            target_test,
            embeddings: self.embeddings.clone(),
        })
    }
}

/// Trains one model per seed. Each run writes its checkpoint, vocabulary,
/// history and report to `out` (or `out/seed_<s>` for several runs).
pub fn cmd_train(args: &TrainArgs) -> Result<Vec<RunRecord>> {
    args.config.validate()?;
    if args.runs == 0 {
        return Err(DasError::Config("--runs must be positive".into()));
    }
    let data = args.load_data()?;
    create_dir(&args.out)?;
    let mut records = Vec::with_capacity(args.runs);
    for k in 0..args.runs as u64 {
        let config = TrainConfig {
            seed: args.config.seed + k,
            ..args.config.clone()
        };
        let dir = if args.runs == 1 {
            args.out.clone()
        } else {
            args.out.join(format!("seed_{}", config.seed))
        };
        create_dir(&dir)?;
        let dumps = config.dump_ensemble.then_some(dir.as_path());
        let run = run_experiment_with_dumps(&config, &data, dumps)?;
        save_checkpoint(&dir.join(CHECKPOINT_FILE), &run.params, &run.vocab.content_hash())?;
        run.vocab.save(&dir.join(VOCAB_FILE))?;
        run.record.history.write_csv(&dir.join(HISTORY_FILE))?;
        let config_text = config.to_config_string();
        write(&dir.join(CONFIG_FILE), &config_text)?;
        let report = json!({
            "config": config_text,
            "variant": config.variant.name(),
            "seed": config.seed,
            "best_epoch": run.record.best_epoch,
            "best_dev_error": run.record.best_dev_error,
            "bootstrap_skipped_epochs": run.record.history.epochs.iter().filter(|e| e.bootstrap_skipped).map(|e| e.epoch).collect::<Vec<_>>(),
            "test": run.record.test,
        });
        write(&dir.join(REPORT_FILE), to_json(&report))?;
        records.push(run.record);
    }
    if args.runs > 1 {
        let accs: Vec<f64> = records.iter().filter_map(|r| r.test.as_ref().map(|t| t.accuracy)).collect();
        let mean = accs.iter().sum::<f64>() / accs.len().max(1) as f64;
        let summary = json!({
            "seeds": records.iter().map(|r| r.seed).collect::<Vec<_>>(),
            "test_accuracy": accs,
            "mean_test_accuracy": mean,
        });
        write(&args.out.join("summary.json"), to_json(&summary))?;
    }
    Ok(records)
}

/// Loads a checkpoint and the vocabulary stored next to it (or at `vocab`)
/// and checks that they belong together.
pub fn load_model(checkpoint: &Path, vocab: Option<&Path>) -> Result<(crate::model::ModelParams, Vocab)> {
    require_file(checkpoint)?;
    let ckpt = load_checkpoint(checkpoint)?;
    let vocab_path = match vocab {
        Some(v) => v.to_path_buf(),
        None => checkpoint.with_file_name(VOCAB_FILE),
    };
    require_file(&vocab_path)?;
    let vocab = Vocab::load(&vocab_path)?;
    if vocab.content_hash() != ckpt.vocab_hash {
        return Err(DasError::Data(format!(
            "vocabulary {} does not match the checkpoint (hash mismatch)",
            vocab_path.display()
        )));
    }
    Ok((ckpt.params, vocab))
}

pub fn encode_corpus(vocab: &Vocab, corpus: &Corpus, max_len: usize) -> Vec<Vec<usize>> {
    corpus.documents.iter().map(|d| vocab.encode(&d.tokens, max_len)).collect()
}

pub fn cmd_evaluate(
    checkpoint: &Path,
    vocab: Option<&Path>,
    test: &Path,
    config: &TrainConfig,
    format: Option<CorpusFormat>,
) -> Result<EvalReport> {
    let (params, vocab) = load_model(checkpoint, vocab)?;
    let corpus = read_corpus(test, format, config.rating_scheme, DomainTag::Target)?;
    let gold = corpus
        .labels()
        .ok_or_else(|| DasError::Data(format!("{}: every test document needs a label", test.display())))?;
    evaluate(&params, &encode_corpus(&vocab, &corpus, config.max_doc_len), &gold)
}

pub fn render_eval(report: &EvalReport) -> String {
    let mut s = format!("n = {}\naccuracy = {}\nmacro_f1 = {}\n", report.n, report.accuracy, report.macro_f1);
    for (c, scores) in report.per_class.iter().enumerate() {
        let name = LABEL_NAMES.get(c).copied().unwrap_or("?");
        s.push_str(&format!(
            "{name}: precision = {} recall = {} f1 = {} support = {}\n",
            scores.precision, scores.recall, scores.f1, scores.support
        ));
    }
    s
}

pub fn eval_json(report: &EvalReport) -> String {
    to_json(report)
}

pub fn cmd_analyze_filters(
    checkpoint: &Path,
    vocab: Option<&Path>,
    corpora: &[(PathBuf, DomainTag)],
    config: &TrainConfig,
    format: Option<CorpusFormat>,
    k_filters: usize,
    k_ngrams: usize,
) -> Result<FilterReport> {
    let (params, vocab) = load_model(checkpoint, vocab)?;
    let mut docs = Vec::new();
    for (path, tag) in corpora {
        let corpus = read_corpus(path, format, config.rating_scheme, *tag)?;
        docs.extend(encode_corpus(&vocab, &corpus, config.max_doc_len).into_iter().map(|d| (d, *tag)));
    }
    filter_analysis(&params, &vocab, &docs, k_filters, k_ngrams)
}

/// Gradient-check results for one objective.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckLine {
    pub name: String,
    pub max_rel_error: f64,
    pub passed: bool,
}

/// Checks every loss component and their weighted total on a random toy
/// batch of four documents (V = 20, d = 4, h = 6, C = 3). `inject_fault`
/// corrupts the analytic gradient so that every check must fail.
pub fn gradcheck_report(seed: u64, inject_fault: bool) -> Result<Vec<GradCheckLine>> {
    use rand::Rng as _;
    use crate::data::random_embeddings;
    use crate::model::{init_params, ModelShape};

    let mut rng = stream(seed, Stream::Synth);
    let emb = random_embeddings(20, 4, &mut rng);
    let params = init_params(ModelShape { window: 3, hidden: 6, classes: 3 }, emb, &mut stream(seed, Stream::Init))?;
    let doc = |rng: &mut crate::rng::Rng| -> Vec<usize> {
        let len = rng.random_range(2..7);
        (0..len).map(|_| rng.random_range(1..20)).collect()
    };
    let source: Vec<Vec<usize>> = (0..4).map(|_| doc(&mut rng)).collect();
    let target: Vec<Vec<usize>> = (0..4).map(|_| doc(&mut rng)).collect();
    let labels: Vec<usize> = (0..4).map(|_| rng.random_range(0..3)).collect();
    let boot: Vec<usize> = (0..4).map(|_| rng.random_range(0..3)).collect();
    let boot = graph::one_hot(&boot, 3)?;
    let tensors: Vec<Tensor> = params.tensors().into_iter().cloned().collect();

    #[derive(Clone, Copy)]
    enum Term {
        L,
        J,
        Gamma,
        Omega,
        Mmd,
        Total,
    }
    let term_loss = |term: Term, tape: &mut Tape<'_>, vars: &[Var]| -> Result<Var> {
        let pv = ParamVars::from_slice(vars);
        let s: Vec<&[usize]> = source.iter().map(Vec::as_slice).collect();
        let t: Vec<&[usize]> = target.iter().map(Vec::as_slice).collect();
        let xs = encode_batch(tape, &pv, &s, 3)?;
        let xt = encode_batch(tape, &pv, &t, 3)?;
        let zs = logits(tape, &pv, xs)?;
        let zt = logits(tape, &pv, xt)?;
        Ok(match term {
            Term::L => graph::source_cross_entropy(tape, zs, &labels)?,
            Term::J => graph::distance(tape, DistanceLoss::SymmetricKlMeans, xs, xt, 1e-6, None)?,
            Term::Gamma => graph::entropy_min(tape, zt),
            Term::Omega => graph::bootstrap(tape, zt, boot.clone())?,
            Term::Mmd => graph::distance(tape, DistanceLoss::MmdRbf, xs, xt, 1e-6, Some(1.0))?,
            Term::Total => {
                let l = graph::source_cross_entropy(tape, zs, &labels)?;
                let j = graph::distance(tape, DistanceLoss::SymmetricKlMeans, xs, xt, 1e-6, None)?;
                let g = graph::entropy_min(tape, zt);
                let o = graph::bootstrap(tape, zt, boot.clone())?;
                tape.weighted_sum(&[(l, 1.0), (j, 2.0), (g, 0.5), (o, 1.5)])?
            }
        })
    };

    let terms = [
        ("L", Term::L),
        ("J", Term::J),
        ("Gamma", Term::Gamma),
        ("Omega", Term::Omega),
        ("MMD", Term::Mmd),
        ("total", Term::Total),
    ];
    let mut out = Vec::with_capacity(terms.len());
    for (name, term) in terms {
        let f = |tape: &mut Tape<'_>, vars: &[Var]| term_loss(term, tape, vars);
        let (_, mut analytic) = analytic_gradients(&f, &tensors)?;
        if inject_fault {
            for g in &mut analytic {
                g.data_mut().iter_mut().for_each(|v| *v = *v * 1.1 + 1e-3);
            }
        }
        let report: GradCheckReport = grad_check_against(f, &tensors, &analytic, GRADCHECK_H, GRADCHECK_TOL)?;
        out.push(GradCheckLine {
            name: name.to_string(),
            max_rel_error: report.max_rel_error,
            passed: report.passed(),
        });
    }
    Ok(out)
}

pub fn cmd_synth(recipe: &SynthRecipe, out: &Path) -> Result<[PathBuf; 4]> {
    let corpora = recipe.generate()?;
    let paths = corpora.save(out)?;
    write(&out.join("synth_recipe.json"), to_json(recipe))?;
    Ok(paths)
}

/// Reads a flat `key = value` synthetic-corpus description.
pub fn parse_synth_recipe(text: &str) -> Result<SynthRecipe> {
    let mut recipe = SynthRecipe::default();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| DasError::Config(format!("line {}: expected 'key = value'", i + 1)))?;
        set_synth_key(&mut recipe, key.trim(), value.trim()).map_err(|e| DasError::Config(format!("line {}: {e}", i + 1)))?;
    }
    recipe.validate()?;
    Ok(recipe)
}

pub fn set_synth_key(recipe: &mut SynthRecipe, key: &str, value: &str) -> Result<()> {
    fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
        value
            .parse()
            .map_err(|_| DasError::Config(format!("invalid value '{value}' for {key}")))
    }
    match key {
        "shared_per_class" => recipe.shared_per_class = num(key, value)?,
        "domain_per_class" => recipe.domain_per_class = num(key, value)?,
        "filler" => recipe.filler = num(key, value)?,
        "topic_per_domain" => recipe.topic_per_domain = num(key, value)?,
        "n_source_labeled" => recipe.n_source_labeled = num(key, value)?,
        "n_source_unlabeled" => recipe.n_source_unlabeled = num(key, value)?,
        "n_target_unlabeled" => recipe.n_target_unlabeled = num(key, value)?,
        "n_target_test" => recipe.n_target_test = num(key, value)?,
        "min_len" => recipe.min_len = num(key, value)?,
        "max_len" => recipe.max_len = num(key, value)?,
        "sentiment_rate" => recipe.sentiment_rate = num(key, value)?,
        "topic_rate" => recipe.topic_rate = num(key, value)?,
        "token_noise" => recipe.token_noise = num(key, value)?,
        "shift" => recipe.shift = num(key, value)?,
        "seed" => recipe.seed = num(key, value)?,
        "class_priors" => {
            let parts: Vec<f64> = value
                .split(',')
                .map(|p| num(key, p.trim()))
                .collect::<Result<_>>()?;
            recipe.class_priors = parts
                .try_into()
                .map_err(|_| DasError::Config("class_priors needs three comma-separated values".into()))?;
        }
        _ => return Err(DasError::Config(format!("unknown key '{key}'"))),
    }
    Ok(())
}

/// One-tailed Welch test of whether the runs in `a` score higher than `b`.
pub fn compare_runs(a: &[RunRecord], b: &[RunRecord]) -> Result<crate::eval::TTest> {
    let acc = |runs: &[RunRecord]| -> Result<Vec<f64>> {
        runs.iter()
            .map(|r| {
                r.test
                    .as_ref()
                    .map(|t| t.accuracy)
                    .ok_or_else(|| DasError::Data("run has no test evaluation".into()))
            })
            .collect()
    };
    ttest_one_tailed(&acc(a)?, &acc(b)?)
}
