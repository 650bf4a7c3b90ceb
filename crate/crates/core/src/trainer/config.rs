//! Flat `key = value` training configuration.
//!
//! Lines starting with `#` and blank lines are ignored. Unknown or repeated
//! keys are errors. [`TrainConfig::to_config_string`] writes every key in a
//! fixed order and parses back to an identical config.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::RatingScheme;
use crate::error::{DasError, Result};
use crate::losses::{DistanceLoss, LossWeights, KL_EPS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    NaiveNN,
    Fann,
    DasEm,
    DasSe,
    Das,
    MmdBaseline,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::NaiveNN,
        Variant::Fann,
        Variant::DasEm,
        Variant::DasSe,
        Variant::Das,
        Variant::MmdBaseline,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::NaiveNN => "NaiveNN",
            Variant::Fann => "FANN",
            Variant::DasEm => "DAS-EM",
            Variant::DasSe => "DAS-SE",
            Variant::Das => "DAS",
            Variant::MmdBaseline => "MMD",
        }
    }
}

impl FromStr for Variant {
    type Err = DasError;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.to_ascii_lowercase().replace('_', "-");
        match key.as_str() {
            "naivenn" | "naive-nn" => Ok(Variant::NaiveNN),
            "fann" => Ok(Variant::Fann),
            "das-em" => Ok(Variant::DasEm),
            "das-se" => Ok(Variant::DasSe),
            "das" => Ok(Variant::Das),
            "mmd" | "mmd-baseline" => Ok(Variant::MmdBaseline),
            _ => Err(DasError::Config(format!("unknown variant '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub variant: Variant,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub alpha: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub window: usize,
    pub hidden: usize,
    pub dropout_rate: f64,
    pub max_norm: f64,
    pub vocab_size: usize,
    pub embedding_dim: usize,
    pub distance_loss: DistanceLoss,
    pub rmsprop_rho: f64,
    pub rmsprop_eps: f64,
    pub kl_eps: f64,
    /// MMD bandwidth; 0 selects the per-batch median heuristic.
    pub mmd_sigma: f64,
    pub n_dev: usize,
    pub max_doc_len: usize,
    pub balance_source: bool,
    /// Skip Ω in epoch 1, whose targets come from the all-zero ensemble.
    pub skip_first_epoch_bootstrap: bool,
    pub rating_scheme: RatingScheme,
    /// Record wall-clock seconds in the history (makes it nondeterministic).
    pub log_wall_time: bool,
    /// Write the ensemble matrix after every epoch.
    pub dump_ensemble: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            variant: Variant::Das,
            lambda1: 200.0,
            lambda2: 1.0,
            lambda3: 3.0,
            alpha: 0.5,
            learning_rate: 0.0005,
            epochs: 30,
            batch_size: 50,
            seed: 0,
            window: 3,
            hidden: 300,
            dropout_rate: 0.5,
            max_norm: 3.0,
            vocab_size: 10_000,
            embedding_dim: 300,
            distance_loss: DistanceLoss::SymmetricKlMeans,
            rmsprop_rho: 0.9,
            rmsprop_eps: 1e-8,
            kl_eps: KL_EPS,
            mmd_sigma: 0.0,
            n_dev: 1000,
            max_doc_len: 400,
            balance_source: false,
            skip_first_epoch_bootstrap: true,
            rating_scheme: RatingScheme::Amazon5,
            log_wall_time: false,
            dump_ensemble: false,
        }
    }
}

impl TrainConfig {
    /// Settings used for the large-scale datasets.
    pub fn large_scale() -> Self {
        TrainConfig {
            lambda1: 500.0,
            lambda2: 0.2,
            batch_size: 250,
            balance_source: true,
            ..TrainConfig::default()
        }
    }

    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.variant = variant;
        self
    }

    /// Loss weights after the variant has zeroed the terms it excludes.
    pub fn effective_weights(&self) -> LossWeights {
        let (l1, l2, l3) = (self.lambda1, self.lambda2, self.lambda3);
        let (lambda1, lambda2, lambda3) = match self.variant {
            Variant::NaiveNN => (0.0, 0.0, 0.0),
            Variant::Fann | Variant::MmdBaseline => (l1, 0.0, 0.0),
            Variant::DasEm => (l1, l2, 0.0),
            Variant::DasSe => (l1, 0.0, l3),
            Variant::Das => (l1, l2, l3),
        };
        LossWeights { lambda1, lambda2, lambda3 }
    }

    pub fn effective_distance(&self) -> DistanceLoss {
        match self.variant {
            Variant::MmdBaseline => DistanceLoss::MmdRbf,
            _ => self.distance_loss,
        }
    }

    pub fn mmd_bandwidth(&self) -> Option<f64> {
        (self.mmd_sigma > 0.0).then_some(self.mmd_sigma)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(DasError::Config(msg));
        for (name, v) in [("lambda1", self.lambda1), ("lambda2", self.lambda2), ("lambda3", self.lambda3)] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be a nonnegative number, got {v}"));
            }
        }
        if !(0.0..1.0).contains(&self.alpha) {
            return bad(format!("alpha must lie in [0, 1), got {}", self.alpha));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!("dropout_rate must lie in [0, 1), got {}", self.dropout_rate));
        }
        if !(0.0..1.0).contains(&self.rmsprop_rho) {
            return bad(format!("rmsprop_rho must lie in [0, 1), got {}", self.rmsprop_rho));
        }
        for (name, v) in [
            ("learning_rate", self.learning_rate),
            ("max_norm", self.max_norm),
            ("rmsprop_eps", self.rmsprop_eps),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if !(self.kl_eps >= 0.0) || !(self.mmd_sigma >= 0.0) {
            return bad("kl_eps and mmd_sigma must be nonnegative".into());
        }
        for (name, v) in [
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
            ("window", self.window),
            ("hidden", self.hidden),
            ("vocab_size", self.vocab_size),
            ("embedding_dim", self.embedding_dim),
            ("n_dev", self.n_dev),
            ("max_doc_len", self.max_doc_len),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        let mut seen = std::collections::HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(DasError::Config(format!("line {}: expected 'key = value'", i + 1)));
            };
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(DasError::Config(format!("line {}: duplicate key '{key}'", i + 1)));
            }
            cfg.set(key, value)
                .map_err(|e| DasError::Config(format!("line {}: {e}", i + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| DasError::Config(format!("invalid value '{value}' for {key}")))
        }
        fn flag(key: &str, value: &str) -> Result<bool> {
            match value {
                "true" | "1" | "yes" => Ok(true),
                "false" | "0" | "no" => Ok(false),
                _ => Err(DasError::Config(format!("invalid boolean '{value}' for {key}"))),
            }
        }
        match key {
            "variant" => self.variant = value.parse()?,
            "lambda1" => self.lambda1 = num(key, value)?,
            "lambda2" => self.lambda2 = num(key, value)?,
            "lambda3" => self.lambda3 = num(key, value)?,
            "alpha" => self.alpha = num(key, value)?,
            "learning_rate" => self.learning_rate = num(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "window" => self.window = num(key, value)?,
            "hidden" => self.hidden = num(key, value)?,
            "dropout_rate" => self.dropout_rate = num(key, value)?,
            "max_norm" => self.max_norm = num(key, value)?,
            "vocab_size" => self.vocab_size = num(key, value)?,
            "embedding_dim" => self.embedding_dim = num(key, value)?,
            "distance_loss" => self.distance_loss = value.parse()?,
            "rmsprop_rho" => self.rmsprop_rho = num(key, value)?,
            "rmsprop_eps" => self.rmsprop_eps = num(key, value)?,
            "kl_eps" => self.kl_eps = num(key, value)?,
            "mmd_sigma" => self.mmd_sigma = num(key, value)?,
            "n_dev" => self.n_dev = num(key, value)?,
            "max_doc_len" => self.max_doc_len = num(key, value)?,
            "balance_source" => self.balance_source = flag(key, value)?,
            "skip_first_epoch_bootstrap" => self.skip_first_epoch_bootstrap = flag(key, value)?,
            "rating_scheme" => self.rating_scheme = value.parse()?,
            "log_wall_time" => self.log_wall_time = flag(key, value)?,
            "dump_ensemble" => self.dump_ensemble = flag(key, value)?,
            _ => return Err(DasError::Config(format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    pub fn to_config_string(&self) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        put("variant", self.variant.name().to_string());
        put("lambda1", self.lambda1.to_string());
        put("lambda2", self.lambda2.to_string());
        put("lambda3", self.lambda3.to_string());
        put("alpha", self.alpha.to_string());
        put("learning_rate", self.learning_rate.to_string());
        put("epochs", self.epochs.to_string());
        put("batch_size", self.batch_size.to_string());
        put("seed", self.seed.to_string());
        put("window", self.window.to_string());
        put("hidden", self.hidden.to_string());
        put("dropout_rate", self.dropout_rate.to_string());
        put("max_norm", self.max_norm.to_string());
        put("vocab_size", self.vocab_size.to_string());
        put("embedding_dim", self.embedding_dim.to_string());
        put("distance_loss", self.distance_loss.name().to_string());
        put("rmsprop_rho", self.rmsprop_rho.to_string());
        put("rmsprop_eps", self.rmsprop_eps.to_string());
        put("kl_eps", self.kl_eps.to_string());
        put("mmd_sigma", self.mmd_sigma.to_string());
        put("n_dev", self.n_dev.to_string());
        put("max_doc_len", self.max_doc_len.to_string());
        put("balance_source", self.balance_source.to_string());
        put("skip_first_epoch_bootstrap", self.skip_first_epoch_bootstrap.to_string());
        put("rating_scheme", self.rating_scheme.name().to_string());
        put("log_wall_time", self.log_wall_time.to_string());
        put("dump_ensemble", self.dump_ensemble.to_string());
        s
    }
}
