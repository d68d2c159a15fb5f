use std::path::Path;
use std::process::{Command, Output};

use patt_core::AttentionWeight;
use patt_lab::commands::{ATTENTION_CSV, CHECKPOINT, HIST_CSV, REPORT_CSV, SCORES_CSV, TRAIN_CSV};

const QUICK: &str = "seed = 1
epochs = 3
max_per_class = 150
test_per_class = 20
ood_train_count = 600
ood_test_count = 200
";

fn patt_lab(cmd: &str, config: &Path, out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_patt-lab"))
        .args([cmd, "--config"])
        .arg(config)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap()
}

fn ok(cmd: &str, config: &Path, out: &Path) {
    let o = patt_lab(cmd, config, out);
    assert!(
        o.status.success(),
        "{cmd}: {}",
        String::from_utf8_lossy(&o.stderr)
    );
}

fn write_config(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn eval_without_attention_matches_all_ones_weight() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "run.cfg", QUICK);
    let out = tmp.path().join("out");
    for cmd in ["gen-data", "train", "eval"] {
        ok(cmd, &cfg, &out);
    }
    let plain_scores = std::fs::read(out.join(SCORES_CSV)).unwrap();
    let plain_report = std::fs::read(out.join(REPORT_CSV)).unwrap();

    let dim = AttentionWeight::load(&{
        ok("calibrate", &cfg, &out);
        out.join(ATTENTION_CSV)
    })
    .unwrap()
    .dim();
    AttentionWeight::identity(dim)
        .save(&out.join(ATTENTION_CSV))
        .unwrap();
    ok("eval", &cfg, &out);
    assert_eq!(std::fs::read(out.join(SCORES_CSV)).unwrap(), plain_scores);
    assert_eq!(std::fs::read(out.join(REPORT_CSV)).unwrap(), plain_report);
}

#[test]
fn eval_leaves_inputs_untouched() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "run.cfg", QUICK);
    let out = tmp.path().join("out");
    for cmd in ["gen-data", "train", "calibrate"] {
        ok(cmd, &cfg, &out);
    }
    let before: Vec<Vec<u8>> = [CHECKPOINT, TRAIN_CSV, ATTENTION_CSV]
        .iter()
        .map(|f| std::fs::read(out.join(f)).unwrap())
        .collect();
    ok("eval", &cfg, &out);
    ok("report", &cfg, &out);
    for (f, b) in [CHECKPOINT, TRAIN_CSV, ATTENTION_CSV].iter().zip(before) {
        assert_eq!(std::fs::read(out.join(f)).unwrap(), b, "{f} changed");
    }
}

#[test]
fn methods_produce_comparable_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let mut rows = Vec::new();
    for method in ["patt", "oe-baseline", "ce-baseline"] {
        let cfg = write_config(
            tmp.path(),
            &format!("{method}.cfg"),
            &format!("{QUICK}method = {method}\n"),
        );
        let out = tmp.path().join(method);
        for cmd in ["gen-data", "train", "calibrate", "eval"] {
            ok(cmd, &cfg, &out);
        }
        let text = std::fs::read_to_string(out.join(REPORT_CSV)).unwrap();
        let lines: Vec<String> = text.lines().map(String::from).collect();
        assert_eq!(lines.len(), 2);
        rows.push(lines);
    }
    let header = &rows[0][0];
    let width = header.split(',').count();
    for r in &rows {
        assert_eq!(&r[0], header);
        assert_eq!(r[1].split(',').count(), width);
    }
    // Same data, different models.
    assert_ne!(rows[0][1], rows[1][1]);
}

#[test]
fn report_histogram_separates_id_from_ood() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "run.cfg", "seed = 0\n");
    let out = tmp.path().join("out");
    for cmd in ["gen-data", "train", "calibrate", "eval", "report"] {
        ok(cmd, &cfg, &out);
    }
    let text = std::fs::read_to_string(out.join(HIST_CSV)).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("bin_lo,bin_hi,id_freq,ood_freq"));
    let bins: Vec<[f64; 4]> = lines
        .map(|l| {
            let v: Vec<f64> = l.split(',').map(|s| s.parse().unwrap()).collect();
            [v[0], v[1], v[2], v[3]]
        })
        .collect();
    assert_eq!(bins.len(), 20);
    let total = |col: usize| bins.iter().map(|b| b[col]).sum::<f64>();
    assert!((total(2) - 1.0).abs() < 1e-12 && (total(3) - 1.0).abs() < 1e-12);

    let mut cum = 0.0;
    let median_bin = bins
        .iter()
        .position(|b| {
            cum += b[3];
            cum >= 0.5
        })
        .unwrap();
    let id_above: f64 = bins[median_bin + 1..].iter().map(|b| b[2]).sum();
    assert!(
        id_above > 0.5,
        "ID mass above the OOD median bin: {id_above}"
    );
}

fn stderr_of(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn failures_print_one_prefixed_line_and_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");

    let bad = write_config(tmp.path(), "bad.cfg", "seed = 1\nno_such_key = 3\n");
    let o = patt_lab("gen-data", &bad, &out);
    assert_eq!(o.status.code(), Some(2));
    let e = stderr_of(&o);
    assert!(e.starts_with("patt-lab: error[config]: line 2:"), "{e}");
    assert_eq!(e.trim_end().lines().count(), 1);
    assert!(!out.exists());

    let cfg = write_config(tmp.path(), "run.cfg", QUICK);
    let o = patt_lab("eval", &cfg, &out);
    assert_eq!(o.status.code(), Some(2));
    assert!(
        stderr_of(&o).starts_with("patt-lab: error[missing-file]:"),
        "{}",
        stderr_of(&o)
    );

    let o = patt_lab("train", &tmp.path().join("absent.cfg"), &out);
    assert_eq!(o.status.code(), Some(2));
    let e = stderr_of(&o);
    assert!(e.starts_with("patt-lab: error[io]:"), "{e}");
    assert_eq!(e.trim_end().lines().count(), 1);

    ok("gen-data", &cfg, &out);
    std::fs::write(out.join(TRAIN_CSV), "id,label,f0\n0,0,oops\n").unwrap();
    let o = patt_lab("train", &cfg, &out);
    assert_eq!(o.status.code(), Some(2));
    assert!(
        stderr_of(&o).starts_with("patt-lab: error[format]:"),
        "{}",
        stderr_of(&o)
    );
}

#[test]
fn seed_flag_overrides_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "run.cfg", QUICK);
    let gen = |dir: &str, seed: Option<&str>| {
        let out = tmp.path().join(dir);
        let mut c = Command::new(env!("CARGO_BIN_EXE_patt-lab"));
        c.args(["gen-data", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(&out);
        if let Some(s) = seed {
            c.args(["--seed", s]);
        }
        assert!(c.status().unwrap().success());
        std::fs::read(out.join(TRAIN_CSV)).unwrap()
    };
    assert_eq!(gen("a", None), gen("b", Some("1")));
    assert_ne!(gen("c", None), gen("d", Some("2")));
}
