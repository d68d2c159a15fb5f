use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use patt_core::calibration::AttentionWeight;
use patt_core::data::{
    gen_longtail, load_features_csv, save_features_csv, write_manifest, LabeledSet,
};
use patt_core::metrics::{
    classification_report, score_histogram, tail_classes, EvalReport, ScoredSample,
};
use patt_core::model::{load_checkpoint, save_checkpoint, train, TrainHistory};
use patt_core::pipeline::{evaluate_model, extract_attention};

use crate::config::RunConfig;

pub const TRAIN_CSV: &str = "train.csv";
pub const VAL_ID_CSV: &str = "val_id.csv";
pub const TEST_ID_CSV: &str = "test_id.csv";
pub const TRAIN_OOD_CSV: &str = "train_ood.csv";
pub const TEST_OOD_CSV: &str = "test_ood.csv";
pub const MANIFEST: &str = "manifest.txt";
pub const CHECKPOINT: &str = "model.ckpt";
pub const HISTORY_CSV: &str = "history.csv";
pub const ATTENTION_CSV: &str = "attention.csv";
pub const SCORES_CSV: &str = "scores.csv";
pub const REPORT_CSV: &str = "report.csv";
pub const HIST_CSV: &str = "hist.csv";
pub const HEAD_TAIL_CSV: &str = "head_tail.csv";

/// A required input that does not exist.
#[derive(Debug)]
pub struct MissingFile(pub PathBuf);

impl std::fmt::Display for MissingFile {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "missing input file {}", self.0.display())
    }
}

impl std::error::Error for MissingFile {}

fn input(dir: &Path, name: &str) -> Result<PathBuf> {
    let p = dir.join(name);
    if !p.is_file() {
        return Err(MissingFile(p).into());
    }
    Ok(p)
}

fn write(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

/// A feature file re-labelled with the training class counts.
fn load_split(dir: &Path, name: &str, class_counts: &[usize]) -> Result<LabeledSet> {
    let mut set = load_features_csv(&input(dir, name)?)?;
    set.class_counts = class_counts.to_vec();
    set.validate()?;
    Ok(set)
}

fn load_train(dir: &Path) -> Result<LabeledSet> {
    let set = load_features_csv(&input(dir, TRAIN_CSV)?)?;
    if set.labels.iter().any(|&y| y < 0) {
        bail!(patt_core::PattError::Format(format!(
            "{TRAIN_CSV} contains OOD rows"
        )));
    }
    Ok(set)
}

pub fn gen_data(cfg: &RunConfig, out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let synth = cfg.synth_config();
    let data = gen_longtail(&synth)?;
    for (name, set) in [
        (TRAIN_CSV, &data.train),
        (VAL_ID_CSV, &data.val_id),
        (TEST_ID_CSV, &data.test_id),
        (TRAIN_OOD_CSV, &data.train_ood),
        (TEST_OOD_CSV, &data.test_ood),
    ] {
        let path = out.join(name);
        save_features_csv(set, &path)?;
        let back = load_features_csv(&path)?;
        if back.inputs != set.inputs || back.labels != set.labels {
            bail!("{name} did not read back identically");
        }
    }
    write_manifest(&out.join(MANIFEST), &synth, &data)?;
    Ok(())
}

fn history_csv(h: &TrainHistory) -> String {
    let mut s = format!("# init: {}\nepoch,total,isac,tla,oe,val_acc\n", h.init);
    for r in &h.records {
        let val = r.val_acc.map(|v| format!("{v:?}")).unwrap_or_default();
        let _ = writeln!(
            s,
            "{},{:?},{:?},{:?},{:?},{val}",
            r.epoch, r.total, r.isac, r.tla, r.oe
        );
    }
    s
}

pub fn train_cmd(cfg: &RunConfig, out: &Path) -> Result<()> {
    let train_id = load_train(out)?;
    let counts = train_id.class_counts.clone();
    let train_ood = load_split(out, TRAIN_OOD_CSV, &counts)?;
    let val_path = out.join(VAL_ID_CSV);
    let val = if val_path.is_file() {
        Some(load_split(out, VAL_ID_CSV, &counts)?)
    } else {
        None
    };
    let result = train(&cfg.train_config(), &train_id, &train_ood, val.as_ref())?;
    let ckpt = out.join(CHECKPOINT);
    save_checkpoint(&ckpt, &result.model, &result.mix)?;
    let (m, x) = load_checkpoint(&ckpt)?;
    if m != result.model || x != result.mix {
        bail!("{CHECKPOINT} did not read back identically");
    }
    write(&out.join(HISTORY_CSV), &history_csv(&result.history))
}

pub fn calibrate(cfg: &RunConfig, out: &Path) -> Result<()> {
    let (model, _) = load_checkpoint(&input(out, CHECKPOINT)?)?;
    let train_id = load_train(out)?;
    let train_ood = load_split(out, TRAIN_OOD_CSV, &train_id.class_counts.clone())?;
    let att = extract_attention(
        &model,
        &train_id,
        &train_ood,
        cfg.per_class,
        cfg.calibration_seed(),
    )?;
    let path = out.join(ATTENTION_CSV);
    att.save(&path)?;
    if AttentionWeight::load(&path)? != att {
        bail!("{ATTENTION_CSV} did not read back identically");
    }
    Ok(())
}

fn scores_csv(samples: &[ScoredSample]) -> String {
    let mut s = String::from("index,split,label,pred,score\n");
    for (i, x) in samples.iter().enumerate() {
        let (split, label, pred) = match x.labels {
            Some((t, p)) => ("id", t as i64, p.to_string()),
            None => ("ood", -1, String::new()),
        };
        let _ = writeln!(s, "{i},{split},{label},{pred},{:?}", x.score);
    }
    s
}

fn parse_scores(path: &Path) -> Result<Vec<ScoredSample>> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, "index,split,label,pred,score")) => {}
        _ => bail!(patt_core::PattError::Parse {
            path: path.to_path_buf(),
            line: 1,
            msg: "bad header".into()
        }),
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        let bad = |msg: &str| patt_core::PattError::Parse {
            path: path.to_path_buf(),
            line: i as u64 + 1,
            msg: msg.to_string(),
        };
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 {
            return Err(bad("expected 5 fields").into());
        }
        let score: f64 = f[4].parse().map_err(|_| bad("bad score"))?;
        let labels = match f[1] {
            "id" => {
                let t: usize = f[2].parse().map_err(|_| bad("bad label"))?;
                let p: usize = f[3].parse().map_err(|_| bad("bad prediction"))?;
                Some((t, p))
            }
            "ood" => None,
            _ => return Err(bad("split must be id or ood").into()),
        };
        out.push(ScoredSample {
            score,
            is_id: labels.is_some(),
            labels,
        });
    }
    Ok(out)
}

fn report_csv(r: &EvalReport) -> String {
    format!("{}\n{}\n", EvalReport::CSV_HEADER, r.csv_row())
}

pub fn eval(cfg: &RunConfig, out: &Path) -> Result<EvalReport> {
    let (model, _) = load_checkpoint(&input(out, CHECKPOINT)?)?;
    let train_id = load_train(out)?;
    let counts = train_id.class_counts.clone();
    let test_id = load_split(out, TEST_ID_CSV, &counts)?;
    let test_ood = load_split(out, TEST_OOD_CSV, &counts)?;
    let att_path = out.join(ATTENTION_CSV);
    let att = if cfg.use_calibration && att_path.is_file() {
        Some(AttentionWeight::load(&att_path)?)
    } else {
        None
    };
    let (report, samples) = evaluate_model(
        &model,
        att.as_ref(),
        &test_id,
        &test_ood,
        &cfg.eval_config(),
    )?;
    let scores_path = out.join(SCORES_CSV);
    write(&scores_path, &scores_csv(&samples))?;
    if parse_scores(&scores_path)? != samples {
        bail!("{SCORES_CSV} did not read back identically");
    }
    write(&out.join(REPORT_CSV), &report_csv(&report))?;
    Ok(report)
}

pub fn report(cfg: &RunConfig, out: &Path) -> Result<()> {
    let samples = parse_scores(&input(out, SCORES_CSV)?)?;
    let counts = load_train(out)?.class_counts;
    let id: Vec<f64> = samples
        .iter()
        .filter(|s| s.is_id)
        .map(|s| s.score)
        .collect();
    let ood: Vec<f64> = samples
        .iter()
        .filter(|s| !s.is_id)
        .map(|s| s.score)
        .collect();
    let h = score_histogram(&id, &ood, cfg.hist_bins)?;
    let mut s = String::from("bin_lo,bin_hi,id_freq,ood_freq\n");
    for b in 0..cfg.hist_bins {
        let _ = writeln!(
            s,
            "{:?},{:?},{:?},{:?}",
            h.edges[b],
            h.edges[b + 1],
            h.id_freq[b],
            h.ood_freq[b]
        );
    }
    write(&out.join(HIST_CSV), &s)?;

    let pairs: Vec<(usize, usize)> = samples.iter().filter_map(|s| s.labels).collect();
    let cls = classification_report(&pairs, &counts, cfg.tail_fraction)?;
    let is_tail = tail_classes(&counts, cfg.tail_fraction)?;
    let members = |tail: bool| {
        (0..counts.len())
            .filter(|&c| is_tail[c] == tail)
            .map(|c| c.to_string())
            .collect::<Vec<_>>()
            .join(" ")
    };
    let acc = |v: Option<f64>| v.map(|x| format!("{x:?}")).unwrap_or_default();
    let table = format!(
        "group,classes,n,acc\nall,{},{},{:?}\nhead,{},{},{}\ntail,{},{},{}\n",
        (0..counts.len())
            .map(|c| c.to_string())
            .collect::<Vec<_>>()
            .join(" "),
        pairs.len(),
        cls.acc,
        members(false),
        cls.n_head,
        acc(cls.acc_head),
        members(true),
        cls.n_tail,
        acc(cls.acc_tail),
    );
    write(&out.join(HEAD_TAIL_CSV), &table)
}

/// Subcommand names accepted by [`run`].
pub const SUBCOMMANDS: [&str; 5] = ["gen-data", "train", "calibrate", "eval", "report"];

pub fn run(subcommand: &str, cfg: &RunConfig) -> Result<()> {
    let out = cfg.out_dir.as_path();
    match subcommand {
        "gen-data" => gen_data(cfg, out),
        "train" => train_cmd(cfg, out),
        "calibrate" => calibrate(cfg, out),
        "eval" => eval(cfg, out).map(|_| ()),
        "report" => report(cfg, out),
        other => Err(anyhow!("unknown subcommand {other:?}")),
    }
}
