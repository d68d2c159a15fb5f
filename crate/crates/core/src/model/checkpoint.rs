//! Binary checkpoint: model parameters plus the vMF class statistics.
//!
//! Layout (all integers `u64` and all reals `f64`, little-endian):
//!
//! ```text
//! "PATT1"                     5-byte magic
//! kind: u8                    0 = MLP encoder, 1 = identity encoder
//! input_dim
//! n_widths, widths[n_widths]
//! feature_dim (d), classes (K)
//! params[..]                  flat parameter vector (see EncoderClassifier)
//! K x (mu[d], kappa, prior)   vMF statistics
//! ```

use std::path::Path;

use super::network::{EncoderClassifier, EncoderKind};
use crate::error::{PattError, Result};
use crate::vmf::{UnitFeature, VmfMixture, VmfParams};

pub const MAGIC: &[u8; 5] = b"PATT1";

pub fn encode_checkpoint(model: &EncoderClassifier, mix: &VmfMixture) -> Result<Vec<u8>> {
    if mix.num_classes() != model.num_classes() || mix.dim() != model.feature_dim() {
        return Err(PattError::contract(
            "vMF statistics do not match the model shape",
        ));
    }
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.push(match model.kind() {
        EncoderKind::Mlp => 0,
        EncoderKind::Identity => 1,
    });
    let put_u64 = |out: &mut Vec<u8>, v: usize| out.extend_from_slice(&(v as u64).to_le_bytes());
    put_u64(&mut out, model.input_dim());
    put_u64(&mut out, model.widths().len());
    for &w in model.widths() {
        put_u64(&mut out, w);
    }
    put_u64(&mut out, model.feature_dim());
    put_u64(&mut out, model.num_classes());
    for p in model.params() {
        out.extend_from_slice(&p.to_le_bytes());
    }
    for (c, p) in mix.classes().iter().zip(mix.priors()) {
        for m in c.mu.iter() {
            out.extend_from_slice(&m.to_le_bytes());
        }
        out.extend_from_slice(&c.kappa.to_le_bytes());
        out.extend_from_slice(&p.to_le_bytes());
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| {
                PattError::Format(format!("checkpoint truncated at byte {}", self.pos))
            })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<usize> {
        let b = self.take(8)?;
        let v = u64::from_le_bytes(b.try_into().expect("8 bytes"));
        usize::try_from(v)
            .ok()
            .filter(|&v| v < 1 << 32)
            .ok_or_else(|| PattError::Format(format!("implausible dimension {v}")))
    }

    fn f64(&mut self) -> Result<f64> {
        let b = self.take(8)?;
        Ok(f64::from_le_bytes(b.try_into().expect("8 bytes")))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(EncoderClassifier, VmfMixture)> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(5)? != MAGIC {
        return Err(PattError::Format("missing PATT1 magic".into()));
    }
    let kind = match r.take(1)?[0] {
        0 => EncoderKind::Mlp,
        1 => EncoderKind::Identity,
        k => return Err(PattError::Format(format!("unknown encoder kind {k}"))),
    };
    let input_dim = r.u64()?;
    let n_widths = r.u64()?;
    let widths = (0..n_widths).map(|_| r.u64()).collect::<Result<Vec<_>>>()?;
    let d = r.u64()?;
    let k = r.u64()?;
    let mut model = EncoderClassifier::zeros(kind, input_dim, &widths, d, k)?;
    for p in model.params_mut() {
        *p = r.f64()?;
    }
    let mut classes = Vec::with_capacity(k);
    let mut priors = Vec::with_capacity(k);
    for _ in 0..k {
        let mu = (0..d).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        let kappa = r.f64()?;
        priors.push(r.f64()?);
        classes.push(VmfParams::new(UnitFeature::new(mu)?, kappa)?);
    }
    if r.pos != bytes.len() {
        return Err(PattError::Format(format!(
            "{} trailing bytes after checkpoint",
            bytes.len() - r.pos
        )));
    }
    Ok((model, VmfMixture::new(classes, priors)?))
}

pub fn save_checkpoint(path: &Path, model: &EncoderClassifier, mix: &VmfMixture) -> Result<()> {
    let bytes = encode_checkpoint(model, mix)?;
    std::fs::write(path, bytes).map_err(|e| PattError::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(EncoderClassifier, VmfMixture)> {
    let bytes = std::fs::read(path).map_err(|e| PattError::io(path, e))?;
    decode_checkpoint(&bytes)
}
