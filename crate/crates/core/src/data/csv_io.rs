//! Feature CSV: header `id,label,f0,...,f{d-1}`, label `-1` for OOD rows.
//!
//! Floats are written in Rust's shortest round-trip form, so a save/load
//! cycle reproduces every value bit for bit.

use std::path::Path;

use super::{LabeledSet, OOD_LABEL};
use crate::error::{PattError, Result};

pub fn save_features_csv(set: &LabeledSet, path: &Path) -> Result<()> {
    let io = |e: csv::Error| PattError::Format(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    let mut header = vec!["id".to_string(), "label".to_string()];
    header.extend((0..set.dim).map(|k| format!("f{k}")));
    w.write_record(&header).map_err(io)?;
    let mut row = Vec::with_capacity(set.dim + 2);
    for (i, (x, y)) in set.inputs.iter().zip(&set.labels).enumerate() {
        row.clear();
        row.push(i.to_string());
        row.push(y.to_string());
        row.extend(x.iter().map(|v| format!("{v:?}")));
        w.write_record(&row).map_err(io)?;
    }
    w.flush().map_err(|e| PattError::io(path, e))
}

/// Reads a feature CSV. `class_counts` is the label histogram of the file,
/// with `K = max label + 1`.
pub fn load_features_csv(path: &Path) -> Result<LabeledSet> {
    let parse_err = |line: u64, msg: String| PattError::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut r = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => PattError::Format(format!("{}: {e}", path.display())),
            _ => parse_err(1, e.to_string()),
        })?;
    let header = r
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .clone();
    if header.len() < 3 || &header[0] != "id" || &header[1] != "label" {
        return Err(parse_err(1, "header must start with id,label,f0".into()));
    }
    let dim = header.len() - 2;
    for (k, name) in header.iter().skip(2).enumerate() {
        if name != format!("f{k}") {
            return Err(parse_err(
                1,
                format!("expected column f{k}, found {name:?}"),
            ));
        }
    }

    let mut inputs = Vec::new();
    let mut labels = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != dim + 2 {
            return Err(parse_err(
                line,
                format!("expected {} fields, found {}", dim + 2, rec.len()),
            ));
        }
        rec[0]
            .trim()
            .parse::<u64>()
            .map_err(|e| parse_err(line, format!("bad id {:?}: {e}", &rec[0])))?;
        let y: i32 = rec[1]
            .trim()
            .parse()
            .map_err(|e| parse_err(line, format!("bad label {:?}: {e}", &rec[1])))?;
        if y < OOD_LABEL {
            return Err(parse_err(
                line,
                format!("label {y} below the OOD marker -1"),
            ));
        }
        let x = rec
            .iter()
            .skip(2)
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| parse_err(line, format!("bad feature value: {e}")))?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(parse_err(line, "non-finite feature value".into()));
        }
        inputs.push(x);
        labels.push(y);
    }
    let k = labels
        .iter()
        .copied()
        .max()
        .map_or(0, |m| (m + 1).max(0) as usize);
    let mut counts = vec![0usize; k];
    for &y in &labels {
        if y >= 0 {
            counts[y as usize] += 1;
        }
    }
    LabeledSet::new(inputs, labels, counts, dim)
}
