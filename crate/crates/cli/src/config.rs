//! Flat `key = value` run configuration.
//!
//! One setting per line, `#` starts a comment, blank lines are ignored.
//! Unknown keys and repeated keys are rejected. Every key has a default, so an
//! empty file is a valid configuration.

use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use patt_core::calibration::ScoreKind;
use patt_core::model::{Objective, OptimizerKind, StatsRefresh, TrainConfig};
use patt_core::pipeline::{EvalConfig, Posthoc};
use patt_core::seed::derive_seed;
use patt_core::{PattHyper, SynthConfig};

#[derive(Debug)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub msg: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l}: {}", self.msg),
            None => f.write_str(&self.msg),
        }
    }
}

impl std::error::Error for ConfigError {}

fn err(line: usize, msg: impl Into<String>) -> ConfigError {
    ConfigError {
        line: Some(line),
        msg: msg.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Patt,
    OeBaseline,
    CeBaseline,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Root seed; every subcommand derives its own stream from it by role.
    pub seed: u64,
    pub out_dir: PathBuf,

    // Synthetic data.
    pub classes: usize,
    pub latent_dim: usize,
    pub input_dim: usize,
    pub imbalance_ratio: f64,
    pub max_per_class: usize,
    pub val_per_class: usize,
    pub test_per_class: usize,
    pub class_kappa: f64,
    pub class_max_cos: f64,
    pub ood_train_clusters: usize,
    pub ood_test_clusters: usize,
    pub ood_kappa: f64,
    pub ood_train_count: usize,
    pub ood_test_count: usize,
    pub input_noise: f64,
    pub features_direct: bool,

    // Training.
    pub method: Method,
    pub oe_weight: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub ood_batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: String,
    pub sgd_momentum: f64,
    pub ood_seed: Option<u64>,
    pub vmf_momentum: f64,
    pub vmf_refresh: StatsRefresh,
    /// `None` selects the identity encoder.
    pub encoder_widths: Option<Vec<usize>>,
    pub embed_dim: usize,
    pub tau: f64,
    pub epsilon: f64,
    pub alpha: f64,
    pub beta: f64,

    // Calibration and evaluation.
    pub per_class: Option<usize>,
    pub use_calibration: bool,
    pub score: ScoreKind,
    pub posthoc: String,
    pub tau_norm_exponent: f64,
    pub tail_fraction: f64,
    pub hist_bins: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let synth = SynthConfig::default();
        let train = TrainConfig::default();
        RunConfig {
            seed: 0,
            out_dir: PathBuf::from("patt-out"),
            classes: synth.classes,
            latent_dim: synth.feature_dim,
            input_dim: synth.input_dim,
            imbalance_ratio: synth.imbalance_ratio,
            max_per_class: synth.max_per_class,
            val_per_class: synth.val_per_class,
            test_per_class: synth.test_per_class,
            class_kappa: synth.class_kappa,
            class_max_cos: synth.class_max_cos,
            ood_train_clusters: synth.ood_train_clusters,
            ood_test_clusters: synth.ood_test_clusters,
            ood_kappa: synth.ood_kappa,
            ood_train_count: synth.ood_train_count,
            ood_test_count: synth.ood_test_count,
            input_noise: synth.input_noise,
            features_direct: synth.features_direct,
            method: Method::Patt,
            oe_weight: 0.5,
            epochs: train.epochs,
            batch_size: train.batch_size,
            ood_batch_size: train.ood_batch_size,
            learning_rate: train.learning_rate,
            optimizer: "adam".into(),
            sgd_momentum: 0.9,
            ood_seed: None,
            vmf_momentum: train.vmf_momentum,
            vmf_refresh: train.stats_refresh,
            encoder_widths: train.encoder_widths,
            embed_dim: train.feature_dim,
            tau: train.hyper.tau,
            epsilon: train.hyper.epsilon,
            alpha: train.hyper.alpha,
            beta: train.hyper.beta,
            per_class: None,
            use_calibration: true,
            score: ScoreKind::Energy,
            posthoc: "none".into(),
            tau_norm_exponent: 1.0,
            tail_fraction: 1.0 / 3.0,
            hist_bins: 20,
        }
    }
}

fn parse_num<T: FromStr>(line: usize, key: &str, v: &str) -> Result<T, ConfigError>
where
    T::Err: fmt::Display,
{
    v.parse()
        .map_err(|e| err(line, format!("{key}: cannot parse {v:?}: {e}")))
}

fn parse_bool(line: usize, key: &str, v: &str) -> Result<bool, ConfigError> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(err(
            line,
            format!("{key}: expected true or false, got {v:?}"),
        )),
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut c = RunConfig::default();
        let mut seen: Vec<String> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| err(line, format!("expected `key = value`, got {content:?}")))?;
            let (key, v) = (key.trim(), value.trim());
            if seen.iter().any(|k| k == key) {
                return Err(err(line, format!("duplicate key {key:?}")));
            }
            seen.push(key.to_string());
            c.set(line, key, v)?;
        }
        c.validate()
            .map_err(|msg| ConfigError { line: None, msg })?;
        Ok(c)
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| patt_core::PattError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Ok(Self::parse(&text)?)
    }

    fn set(&mut self, line: usize, key: &str, v: &str) -> Result<(), ConfigError> {
        match key {
            "seed" => self.seed = parse_num(line, key, v)?,
            "out_dir" => self.out_dir = PathBuf::from(v),
            "classes" => self.classes = parse_num(line, key, v)?,
            "latent_dim" => self.latent_dim = parse_num(line, key, v)?,
            "input_dim" => self.input_dim = parse_num(line, key, v)?,
            "imbalance_ratio" => self.imbalance_ratio = parse_num(line, key, v)?,
            "max_per_class" => self.max_per_class = parse_num(line, key, v)?,
            "val_per_class" => self.val_per_class = parse_num(line, key, v)?,
            "test_per_class" => self.test_per_class = parse_num(line, key, v)?,
            "class_kappa" => self.class_kappa = parse_num(line, key, v)?,
            "class_max_cos" => self.class_max_cos = parse_num(line, key, v)?,
            "ood_train_clusters" => self.ood_train_clusters = parse_num(line, key, v)?,
            "ood_test_clusters" => self.ood_test_clusters = parse_num(line, key, v)?,
            "ood_kappa" => self.ood_kappa = parse_num(line, key, v)?,
            "ood_train_count" => self.ood_train_count = parse_num(line, key, v)?,
            "ood_test_count" => self.ood_test_count = parse_num(line, key, v)?,
            "input_noise" => self.input_noise = parse_num(line, key, v)?,
            "features_direct" => self.features_direct = parse_bool(line, key, v)?,
            "method" => {
                self.method = match v {
                    "patt" => Method::Patt,
                    "oe-baseline" => Method::OeBaseline,
                    "ce-baseline" => Method::CeBaseline,
                    _ => {
                        return Err(err(
                            line,
                            format!("method: expected patt, oe-baseline or ce-baseline, got {v:?}"),
                        ))
                    }
                }
            }
            "oe_weight" => self.oe_weight = parse_num(line, key, v)?,
            "epochs" => self.epochs = parse_num(line, key, v)?,
            "batch_size" => self.batch_size = parse_num(line, key, v)?,
            "ood_batch_size" => self.ood_batch_size = parse_num(line, key, v)?,
            "learning_rate" => self.learning_rate = parse_num(line, key, v)?,
            "optimizer" => match v {
                "adam" | "sgd" => self.optimizer = v.to_string(),
                _ => {
                    return Err(err(
                        line,
                        format!("optimizer: expected adam or sgd, got {v:?}"),
                    ))
                }
            },
            "sgd_momentum" => self.sgd_momentum = parse_num(line, key, v)?,
            "ood_seed" => {
                self.ood_seed = match v {
                    "auto" => None,
                    _ => Some(parse_num(line, key, v)?),
                }
            }
            "vmf_momentum" => self.vmf_momentum = parse_num(line, key, v)?,
            "vmf_refresh" => {
                self.vmf_refresh = match v {
                    "batch" => StatsRefresh::PerBatch,
                    "epoch" => StatsRefresh::PerEpoch,
                    _ => {
                        return Err(err(
                            line,
                            format!("vmf_refresh: expected batch or epoch, got {v:?}"),
                        ))
                    }
                }
            }
            "encoder_widths" => {
                self.encoder_widths = match v {
                    "identity" => None,
                    _ => Some(
                        v.split(',')
                            .map(|w| parse_num(line, key, w.trim()))
                            .collect::<Result<Vec<usize>, _>>()?,
                    ),
                }
            }
            "embed_dim" => self.embed_dim = parse_num(line, key, v)?,
            "tau" => self.tau = parse_num(line, key, v)?,
            "epsilon" => self.epsilon = parse_num(line, key, v)?,
            "alpha" => self.alpha = parse_num(line, key, v)?,
            "beta" => self.beta = parse_num(line, key, v)?,
            "per_class" => {
                self.per_class = match v {
                    "auto" => None,
                    _ => Some(parse_num(line, key, v)?),
                }
            }
            "use_calibration" => self.use_calibration = parse_bool(line, key, v)?,
            "score" => {
                self.score = match v {
                    "energy" => ScoreKind::Energy,
                    "msp" => ScoreKind::Msp,
                    _ => {
                        return Err(err(
                            line,
                            format!("score: expected energy or msp, got {v:?}"),
                        ))
                    }
                }
            }
            "posthoc" => match v {
                "none" | "la" | "tau-norm" => self.posthoc = v.to_string(),
                _ => {
                    return Err(err(
                        line,
                        format!("posthoc: expected none, la or tau-norm, got {v:?}"),
                    ))
                }
            },
            "tau_norm_exponent" => self.tau_norm_exponent = parse_num(line, key, v)?,
            "tail_fraction" => self.tail_fraction = parse_num(line, key, v)?,
            "hist_bins" => self.hist_bins = parse_num(line, key, v)?,
            _ => return Err(err(line, format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    fn validate(&self) -> Result<(), String> {
        if self.classes < 2 {
            return Err("classes must be >= 2".into());
        }
        if !(self.tail_fraction > 0.0 && self.tail_fraction < 1.0) {
            return Err(format!(
                "tail_fraction {} not in (0, 1)",
                self.tail_fraction
            ));
        }
        if self.hist_bins == 0 {
            return Err("hist_bins must be >= 1".into());
        }
        if self.per_class == Some(0) {
            return Err("per_class must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&self.tau_norm_exponent) {
            return Err(format!(
                "tau_norm_exponent {} not in [0, 1]",
                self.tau_norm_exponent
            ));
        }
        if self.oe_weight.is_nan() || self.oe_weight < 0.0 {
            return Err("oe_weight must be >= 0".into());
        }
        self.train_config().validate().map_err(|e| e.to_string())
    }

    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig {
            classes: self.classes,
            feature_dim: self.latent_dim,
            input_dim: self.input_dim,
            imbalance_ratio: self.imbalance_ratio,
            max_per_class: self.max_per_class,
            val_per_class: self.val_per_class,
            test_per_class: self.test_per_class,
            class_kappa: self.class_kappa,
            class_max_cos: self.class_max_cos,
            ood_train_clusters: self.ood_train_clusters,
            ood_test_clusters: self.ood_test_clusters,
            ood_kappa: self.ood_kappa,
            ood_train_count: self.ood_train_count,
            ood_test_count: self.ood_test_count,
            input_noise: self.input_noise,
            features_direct: self.features_direct,
            seed: derive_seed(self.seed, "data"),
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let objective = match self.method {
            Method::Patt => Objective::Patt,
            Method::OeBaseline => Objective::OeBaseline {
                weight: self.oe_weight,
            },
            Method::CeBaseline => Objective::CeBaseline,
        };
        let optimizer = if self.optimizer == "sgd" {
            OptimizerKind::sgd(self.sgd_momentum)
        } else {
            OptimizerKind::adam()
        };
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            ood_batch_size: self.ood_batch_size,
            learning_rate: self.learning_rate,
            optimizer,
            seed: derive_seed(self.seed, "train"),
            ood_seed: self.ood_seed,
            hyper: PattHyper {
                tau: self.tau,
                epsilon: self.epsilon,
                alpha: self.alpha,
                beta: self.beta,
            },
            objective,
            vmf_momentum: self.vmf_momentum,
            stats_refresh: self.vmf_refresh,
            encoder_widths: self.encoder_widths.clone(),
            feature_dim: self.embed_dim,
        }
    }

    pub fn eval_config(&self) -> EvalConfig {
        let posthoc = match self.posthoc.as_str() {
            "la" => Posthoc::LogitAdjust,
            "tau-norm" => Posthoc::TauNorm(self.tau_norm_exponent),
            _ => Posthoc::None,
        };
        EvalConfig {
            score: self.score,
            posthoc,
            tail_fraction: self.tail_fraction,
        }
    }

    pub fn calibration_seed(&self) -> u64 {
        derive_seed(self.seed, "calibrate")
    }

    /// The effective configuration in the same `key = value` syntax.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let widths = match &self.encoder_widths {
            Some(w) => w
                .iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join(","),
            None => "identity".into(),
        };
        let method = match self.method {
            Method::Patt => "patt",
            Method::OeBaseline => "oe-baseline",
            Method::CeBaseline => "ce-baseline",
        };
        let score = match self.score {
            ScoreKind::Energy => "energy",
            ScoreKind::Msp => "msp",
        };
        let refresh = match self.vmf_refresh {
            StatsRefresh::PerBatch => "batch",
            StatsRefresh::PerEpoch => "epoch",
        };
        let opt = |v: Option<u64>| v.map_or("auto".to_string(), |x| x.to_string());
        let entries: Vec<(&str, String)> = vec![
            ("seed", self.seed.to_string()),
            ("classes", self.classes.to_string()),
            ("latent_dim", self.latent_dim.to_string()),
            ("input_dim", self.input_dim.to_string()),
            ("imbalance_ratio", format!("{:?}", self.imbalance_ratio)),
            ("max_per_class", self.max_per_class.to_string()),
            ("val_per_class", self.val_per_class.to_string()),
            ("test_per_class", self.test_per_class.to_string()),
            ("class_kappa", format!("{:?}", self.class_kappa)),
            ("class_max_cos", format!("{:?}", self.class_max_cos)),
            ("ood_train_clusters", self.ood_train_clusters.to_string()),
            ("ood_test_clusters", self.ood_test_clusters.to_string()),
            ("ood_kappa", format!("{:?}", self.ood_kappa)),
            ("ood_train_count", self.ood_train_count.to_string()),
            ("ood_test_count", self.ood_test_count.to_string()),
            ("input_noise", format!("{:?}", self.input_noise)),
            ("features_direct", self.features_direct.to_string()),
            ("method", method.into()),
            ("oe_weight", format!("{:?}", self.oe_weight)),
            ("epochs", self.epochs.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("ood_batch_size", self.ood_batch_size.to_string()),
            ("learning_rate", format!("{:?}", self.learning_rate)),
            ("optimizer", self.optimizer.clone()),
            ("sgd_momentum", format!("{:?}", self.sgd_momentum)),
            ("ood_seed", opt(self.ood_seed)),
            ("vmf_momentum", format!("{:?}", self.vmf_momentum)),
            ("vmf_refresh", refresh.into()),
            ("encoder_widths", widths),
            ("embed_dim", self.embed_dim.to_string()),
            ("tau", format!("{:?}", self.tau)),
            ("epsilon", format!("{:?}", self.epsilon)),
            ("alpha", format!("{:?}", self.alpha)),
            ("beta", format!("{:?}", self.beta)),
            (
                "per_class",
                self.per_class.map_or("auto".into(), |v| v.to_string()),
            ),
            ("use_calibration", self.use_calibration.to_string()),
            ("score", score.into()),
            ("posthoc", self.posthoc.clone()),
            ("tau_norm_exponent", format!("{:?}", self.tau_norm_exponent)),
            ("tail_fraction", format!("{:?}", self.tail_fraction)),
            ("hist_bins", self.hist_bins.to_string()),
        ];
        for (k, v) in entries {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(RunConfig::parse("").unwrap(), RunConfig::default());
        assert_eq!(
            RunConfig::parse("# nothing\n\n   \n").unwrap(),
            RunConfig::default()
        );
    }

    #[test]
    fn parses_values_and_comments() {
        let c = RunConfig::parse("seed = 7 # root\nmethod = oe-baseline\nencoder_widths = 32, 16\nscore=msp\nper_class = 5\n").unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.method, Method::OeBaseline);
        assert_eq!(c.encoder_widths, Some(vec![32, 16]));
        assert_eq!(c.score, ScoreKind::Msp);
        assert_eq!(c.per_class, Some(5));
        let c = RunConfig::parse("encoder_widths = identity\nood_seed = 3").unwrap();
        assert_eq!(c.encoder_widths, None);
        assert_eq!(c.ood_seed, Some(3));
    }

    #[test]
    fn render_round_trips() {
        let c =
            RunConfig::parse("seed = 9\nalpha = 0\nvmf_refresh = epoch\nposthoc = la\n").unwrap();
        let mut again = RunConfig::parse(&c.render()).unwrap();
        again.out_dir = c.out_dir.clone();
        assert_eq!(again, c);
    }

    #[test]
    fn rejects_bad_input() {
        let e = RunConfig::parse("seed = 1\nwat = 3\n").unwrap_err();
        assert_eq!(e.line, Some(2));
        assert!(e.msg.contains("unknown key"));
        assert!(RunConfig::parse("seed = 1\nseed = 2").is_err());
        assert!(RunConfig::parse("seed").is_err());
        assert!(RunConfig::parse("epochs = -1").is_err());
        assert!(RunConfig::parse("tau = 0").is_err());
        assert!(RunConfig::parse("tail_fraction = 1.5").is_err());
        assert!(RunConfig::parse("method = pascl").is_err());
        assert!(RunConfig::parse("use_calibration = maybe").is_err());
    }

    #[test]
    fn sub_seeds_differ_by_role() {
        let c = RunConfig::default();
        assert_ne!(c.synth_config().seed, c.train_config().seed);
        assert_ne!(c.calibration_seed(), c.train_config().seed);
    }
}
