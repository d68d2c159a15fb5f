use rand::Rng;

use crate::error::{check_dim, PattError, Result};
use crate::seed::rng_for;
use crate::vmf::UnitFeature;

/// Pre-normalization features below this norm are rejected.
pub const MIN_FEATURE_NORM: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncoderKind {
    /// Dense layers with tanh on every hidden layer, linear output.
    Mlp,
    /// Inputs are already features; the encoder only projects to the sphere.
    Identity,
}

/// Linear classifier `W z + b` with `W` stored row-major (`K x d`).
#[derive(Debug, Clone, PartialEq)]
pub struct LinearClassifier {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    pub dim: usize,
}

impl LinearClassifier {
    pub fn new(weight: Vec<f64>, bias: Vec<f64>, dim: usize) -> Result<Self> {
        if dim == 0 || weight.len() != bias.len() * dim {
            return Err(PattError::contract(format!(
                "classifier weight has {} entries, expected {} x {dim}",
                weight.len(),
                bias.len()
            )));
        }
        Ok(LinearClassifier { weight, bias, dim })
    }

    pub fn num_classes(&self) -> usize {
        self.bias.len()
    }

    pub fn row(&self, y: usize) -> &[f64] {
        &self.weight[y * self.dim..(y + 1) * self.dim]
    }

    /// `W z + b`. Accepts calibrated (non-unit) features as well.
    pub fn logits(&self, z: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim, z.len())?;
        Ok((0..self.num_classes())
            .map(|y| crate::vmf::dot(self.row(y), z) + self.bias[y])
            .collect())
    }
}

/// Intermediate values of one forward pass, kept for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input to each encoder layer; the last entry is the pre-norm output.
    activations: Vec<Vec<f64>>,
    pub pre_norm: Vec<f64>,
    pub z: UnitFeature,
}

/// Encoder `f: x -> z` onto the unit sphere followed by a linear classifier.
///
/// All parameters live in one flat vector: each encoder layer's weight
/// (`out x in`, row-major) then bias, then the classifier weight (`K x d`)
/// and bias.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderClassifier {
    kind: EncoderKind,
    input_dim: usize,
    widths: Vec<usize>,
    feature_dim: usize,
    num_classes: usize,
    params: Vec<f64>,
}

impl EncoderClassifier {
    /// Fan-in scaled uniform initialization `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    pub fn new(
        input_dim: usize,
        widths: &[usize],
        feature_dim: usize,
        num_classes: usize,
        seed: u64,
    ) -> Result<Self> {
        Self::build(
            EncoderKind::Mlp,
            input_dim,
            widths,
            feature_dim,
            num_classes,
            seed,
        )
    }

    /// Identity encoder for precomputed features: only the classifier is trained.
    pub fn identity(feature_dim: usize, num_classes: usize, seed: u64) -> Result<Self> {
        Self::build(
            EncoderKind::Identity,
            feature_dim,
            &[],
            feature_dim,
            num_classes,
            seed,
        )
    }

    fn build(
        kind: EncoderKind,
        input_dim: usize,
        widths: &[usize],
        feature_dim: usize,
        num_classes: usize,
        seed: u64,
    ) -> Result<Self> {
        let mut model = Self::zeros(kind, input_dim, widths, feature_dim, num_classes)?;
        let mut rng = rng_for(seed, "init");
        let shapes = model.layer_shapes();
        let mut offset = 0;
        for (fan_out, fan_in) in shapes {
            let bound = 1.0 / (fan_in as f64).sqrt();
            let n = fan_out * (fan_in + 1);
            for p in &mut model.params[offset..offset + n] {
                *p = rng.random_range(-bound..bound);
            }
            offset += n;
        }
        Ok(model)
    }

    pub(crate) fn zeros(
        kind: EncoderKind,
        input_dim: usize,
        widths: &[usize],
        feature_dim: usize,
        num_classes: usize,
    ) -> Result<Self> {
        if input_dim == 0 || feature_dim < 2 || num_classes == 0 || widths.contains(&0) {
            return Err(PattError::contract(format!(
                "invalid network shape input={input_dim} widths={widths:?} d={feature_dim} K={num_classes}"
            )));
        }
        if kind == EncoderKind::Identity && (input_dim != feature_dim || !widths.is_empty()) {
            return Err(PattError::contract(
                "identity encoder needs input_dim == feature_dim",
            ));
        }
        let mut model = EncoderClassifier {
            kind,
            input_dim,
            widths: widths.to_vec(),
            feature_dim,
            num_classes,
            params: Vec::new(),
        };
        let n: usize = model.layer_shapes().iter().map(|(o, i)| o * (i + 1)).sum();
        model.params = vec![0.0; n];
        Ok(model)
    }

    /// `(out, in)` for each encoder layer followed by the classifier.
    fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes = Vec::new();
        if self.kind == EncoderKind::Mlp {
            let mut prev = self.input_dim;
            for &w in self.widths.iter().chain(std::iter::once(&self.feature_dim)) {
                shapes.push((w, prev));
                prev = w;
            }
        }
        shapes.push((self.num_classes, self.feature_dim));
        shapes
    }

    pub fn kind(&self) -> EncoderKind {
        self.kind
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn classifier_offset(&self) -> usize {
        self.params.len() - self.num_classes * (self.feature_dim + 1)
    }

    pub fn classifier(&self) -> LinearClassifier {
        let off = self.classifier_offset();
        let wlen = self.num_classes * self.feature_dim;
        LinearClassifier {
            weight: self.params[off..off + wlen].to_vec(),
            bias: self.params[off + wlen..].to_vec(),
            dim: self.feature_dim,
        }
    }

    pub fn set_classifier(&mut self, clf: &LinearClassifier) -> Result<()> {
        check_dim(self.feature_dim, clf.dim)?;
        check_dim(self.num_classes, clf.num_classes())?;
        let off = self.classifier_offset();
        let wlen = self.num_classes * self.feature_dim;
        self.params[off..off + wlen].copy_from_slice(&clf.weight);
        self.params[off + wlen..].copy_from_slice(&clf.bias);
        Ok(())
    }

    /// Encoder output before and after projection onto the sphere.
    pub fn encoder_forward(&self, x: &[f64]) -> Result<(Vec<f64>, UnitFeature)> {
        let cache = self.forward_cached(x)?;
        Ok((cache.pre_norm, cache.z))
    }

    pub fn forward_cached(&self, x: &[f64]) -> Result<ForwardCache> {
        check_dim(self.input_dim, x.len())?;
        let shapes = self.layer_shapes();
        let n_enc = shapes.len() - 1;
        let mut activations = Vec::with_capacity(n_enc + 1);
        let mut h = x.to_vec();
        let mut offset = 0;
        for (li, &(out, inp)) in shapes[..n_enc].iter().enumerate() {
            let w = &self.params[offset..offset + out * inp];
            let b = &self.params[offset + out * inp..offset + out * (inp + 1)];
            let mut next: Vec<f64> = (0..out)
                .map(|o| crate::vmf::dot(&w[o * inp..(o + 1) * inp], &h) + b[o])
                .collect();
            if li + 1 < n_enc {
                next.iter_mut().for_each(|v| *v = v.tanh());
            }
            activations.push(std::mem::replace(&mut h, next));
            offset += out * (inp + 1);
        }
        let n = crate::vmf::norm(&h);
        if !(n >= MIN_FEATURE_NORM) || !n.is_finite() {
            return Err(PattError::DegenerateEmbedding { norm: n });
        }
        let z = UnitFeature::normalize(h.clone())?;
        activations.push(h.clone());
        Ok(ForwardCache {
            activations,
            pre_norm: h,
            z,
        })
    }

    /// `W z + b` for a unit (or calibrated) feature.
    pub fn classifier_logits(&self, z: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.feature_dim, z.len())?;
        let off = self.classifier_offset();
        let d = self.feature_dim;
        let w = &self.params[off..off + self.num_classes * d];
        let b = &self.params[off + self.num_classes * d..];
        Ok((0..self.num_classes)
            .map(|y| crate::vmf::dot(&w[y * d..(y + 1) * d], z) + b[y])
            .collect())
    }

    /// Accumulates into `grads` the parameter gradient of a per-sample loss
    /// with direct feature gradient `grad_z` and logit gradient `grad_logits`.
    #[allow(clippy::needless_range_loop)]
    pub fn backward(
        &self,
        cache: &ForwardCache,
        grad_z: Option<&[f64]>,
        grad_logits: &[f64],
        grads: &mut [f64],
    ) -> Result<()> {
        check_dim(self.params.len(), grads.len())?;
        check_dim(self.num_classes, grad_logits.len())?;
        let d = self.feature_dim;
        let z = &cache.z;
        let off = self.classifier_offset();
        let wlen = self.num_classes * d;

        // Classifier: dW += g z^T, db += g, dz += W^T g.
        let mut dz = match grad_z {
            Some(g) => {
                check_dim(d, g.len())?;
                g.to_vec()
            }
            None => vec![0.0; d],
        };
        for (y, &g) in grad_logits.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            let row = off + y * d;
            for k in 0..d {
                grads[row + k] += g * z[k];
                dz[k] += g * self.params[row + k];
            }
            grads[off + wlen + y] += g;
        }
        if self.kind == EncoderKind::Identity {
            return Ok(());
        }

        // Projection z = h / ||h||: dh = (I - z z^T) dz / ||h||.
        let h_norm = crate::vmf::norm(&cache.pre_norm);
        let zdz = crate::vmf::dot(z, &dz);
        let mut delta: Vec<f64> = dz
            .iter()
            .zip(z.iter())
            .map(|(g, zi)| (g - zdz * zi) / h_norm)
            .collect();

        let shapes = self.layer_shapes();
        let n_enc = shapes.len() - 1;
        let mut offsets = Vec::with_capacity(n_enc);
        let mut acc = 0;
        for &(o, i) in &shapes[..n_enc] {
            offsets.push(acc);
            acc += o * (i + 1);
        }
        for li in (0..n_enc).rev() {
            let (out, inp) = shapes[li];
            let start = offsets[li];
            let input = &cache.activations[li];
            for o in 0..out {
                let g = delta[o];
                let row = start + o * inp;
                for i in 0..inp {
                    grads[row + i] += g * input[i];
                }
                grads[start + out * inp + o] += g;
            }
            if li == 0 {
                break;
            }
            // Previous layer output passed through tanh: d tanh = 1 - a^2.
            let mut prev = vec![0.0; inp];
            for o in 0..out {
                let row = start + o * inp;
                for i in 0..inp {
                    prev[i] += self.params[row + i] * delta[o];
                }
            }
            for (p, a) in prev.iter_mut().zip(input) {
                *p *= 1.0 - a * a;
            }
            delta = prev;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn output_is_unit_norm() {
        let m = EncoderClassifier::new(6, &[16, 16], 4, 3, 11).unwrap();
        for s in 0..20 {
            let x: Vec<f64> = (0..6).map(|i| ((s * 7 + i) as f64).sin() * 3.0).collect();
            let (_, z) = m.encoder_forward(&x).unwrap();
            let n = crate::vmf::norm(&z);
            assert!((n - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_last_layer_collapses_to_bias() {
        let mut m = EncoderClassifier::new(3, &[5], 2, 2, 1).unwrap();
        // Last encoder layer: 2 x 5 weights then 2 biases, starting after layer 0.
        let start = 5 * (3 + 1);
        for p in &mut m.params_mut()[start..start + 10] {
            *p = 0.0;
        }
        m.params_mut()[start + 10] = 3.0;
        m.params_mut()[start + 11] = -4.0;
        let (_, z) = m.encoder_forward(&[0.3, -1.0, 2.0]).unwrap();
        assert!((z[0] - 0.6).abs() < 1e-15 && (z[1] + 0.8).abs() < 1e-15);
    }

    #[test]
    fn degenerate_embedding_is_reported() {
        let mut m = EncoderClassifier::new(3, &[5], 2, 2, 1).unwrap();
        let start = 5 * 4;
        for p in &mut m.params_mut()[start..start + 12] {
            *p = 0.0;
        }
        assert!(matches!(
            m.encoder_forward(&[1.0, 1.0, 1.0]),
            Err(PattError::DegenerateEmbedding { .. })
        ));
    }

    #[test]
    fn deterministic_init() {
        let a = EncoderClassifier::new(4, &[8], 3, 2, 5).unwrap();
        let b = EncoderClassifier::new(4, &[8], 3, 2, 5).unwrap();
        assert_eq!(a, b);
        let x = [0.1, 0.2, -0.3, 0.4];
        assert_eq!(
            a.encoder_forward(&x).unwrap().1,
            b.encoder_forward(&x).unwrap().1
        );
        assert_ne!(a, EncoderClassifier::new(4, &[8], 3, 2, 6).unwrap());
    }

    #[test]
    fn classifier_examples() {
        let mut m = EncoderClassifier::identity(3, 3, 0).unwrap();
        let eye = LinearClassifier::new(
            vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
            vec![0.0; 3],
            3,
        )
        .unwrap();
        m.set_classifier(&eye).unwrap();
        let z = [0.48, 0.6, 0.64];
        assert_eq!(m.classifier_logits(&z).unwrap(), z.to_vec());

        let flat = LinearClassifier::new(vec![0.0; 9], vec![2.5; 3], 3).unwrap();
        m.set_classifier(&flat).unwrap();
        assert_eq!(m.classifier_logits(&z).unwrap(), vec![2.5; 3]);

        let w = [0.3, -1.2, 0.7, 2.0, 0.1, -0.4, -0.9, 0.5, 1.1];
        let b = [0.05, -0.2, 0.3];
        m.set_classifier(&LinearClassifier::new(w.to_vec(), b.to_vec(), 3).unwrap())
            .unwrap();
        let got = m.classifier_logits(&z).unwrap();
        for r in 0..3 {
            let mut acc = b[r];
            for c in 0..3 {
                acc += w[r * 3 + c] * z[c];
            }
            assert!((got[r] - acc).abs() < 1e-15);
        }
        assert!(m.classifier_logits(&[1.0, 0.0]).is_err());
    }

    #[test]
    fn identity_encoder_normalizes() {
        let m = EncoderClassifier::identity(2, 2, 0).unwrap();
        let (pre, z) = m.encoder_forward(&[3.0, 4.0]).unwrap();
        assert_eq!(pre, vec![3.0, 4.0]);
        assert!((z[0] - 0.6).abs() < 1e-15);
    }
}
