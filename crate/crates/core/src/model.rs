//! The maskable MLP family: layout of the flat parameter vector,
//! initialization, and the loss/accuracy entry points.
//!
//! Parameter layout is layer by layer: the `fan_in x fan_out` weight matrix
//! in row-major order, then that layer's `fan_out` biases. Hidden layers use
//! ReLU; the output layer feeds a softmax cross-entropy.

use std::sync::Arc;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{self, GradResult, Objective, Tape, Tensor, Var};
use crate::data::DataSlice;
use crate::error::{check_len, Error, Result};
use crate::numerics::{DenseVector, RngStream};
use crate::pruning::Mask;

/// The flattened weights of a network in canonical layout.
pub type ParamVector = DenseVector;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub layer_sizes: Vec<usize>,
}

/// Offsets of one affine layer inside the flat parameter vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerLayout {
    pub fan_in: usize,
    pub fan_out: usize,
    pub weight_offset: usize,
    pub bias_offset: usize,
}

impl NetworkSpec {
    pub fn new(layer_sizes: Vec<usize>) -> Result<Self> {
        let spec = NetworkSpec { layer_sizes };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_sizes.len() < 2 {
            return Err(Error::Config(
                "network needs at least an input and an output layer".into(),
            ));
        }
        if self.layer_sizes.contains(&0) {
            return Err(Error::Config("layer sizes must be positive".into()));
        }
        if *self.layer_sizes.last().unwrap() < 2 {
            return Err(Error::Config("output layer needs at least two classes".into()));
        }
        Ok(())
    }

    pub fn input_size(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_size(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn layers(&self) -> Vec<LayerLayout> {
        let mut offset = 0;
        self.layer_sizes
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let l = LayerLayout {
                    fan_in,
                    fan_out,
                    weight_offset: offset,
                    bias_offset: offset + fan_in * fan_out,
                };
                offset += fan_in * fan_out + fan_out;
                l
            })
            .collect()
    }

    /// D = Σ (nᵢ·nᵢ₊₁ + nᵢ₊₁).
    pub fn param_count(&self) -> usize {
        self.layer_sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// `true` at weight coordinates, `false` at biases.
    pub fn prunable(&self) -> Vec<bool> {
        let mut flags = Vec::with_capacity(self.param_count());
        for l in self.layers() {
            flags.extend(std::iter::repeat(true).take(l.fan_in * l.fan_out));
            flags.extend(std::iter::repeat(false).take(l.fan_out));
        }
        flags
    }

    pub fn prunable_count(&self) -> usize {
        self.layers().iter().map(|l| l.fan_in * l.fan_out).sum()
    }

    /// Layer index of every coordinate.
    pub fn layer_of(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.param_count());
        for (i, l) in self.layers().iter().enumerate() {
            out.extend(std::iter::repeat(i).take(l.fan_in * l.fan_out + l.fan_out));
        }
        out
    }

    pub fn dense_mask(&self) -> Mask {
        Mask::dense_with_prunable(self.prunable())
    }
}

/// He-normal weights (std `sqrt(2 / fan_in)`), zero biases.
pub fn init_params(spec: &NetworkSpec, rng: RngStream) -> ParamVector {
    let mut gen = rng.rng();
    let mut data = Vec::with_capacity(spec.param_count());
    for l in spec.layers() {
        let normal = Normal::new(0.0, (2.0 / l.fan_in as f64).sqrt()).expect("positive std");
        for _ in 0..l.fan_in * l.fan_out {
            data.push(normal.sample(&mut gen));
        }
        data.extend(std::iter::repeat(0.0).take(l.fan_out));
    }
    DenseVector::from_vec(data)
}

pub fn apply_mask(w: &ParamVector, m: &Mask) -> Result<ParamVector> {
    check_len(w.len(), m.len())?;
    Ok(DenseVector::from_vec(
        w.as_slice()
            .iter()
            .zip(m.bits())
            .map(|(&x, &on)| if on { x } else { 0.0 })
            .collect(),
    ))
}

/// A network together with the data slice its loss is averaged over; the
/// loss is a pure function of the parameter vector.
#[derive(Clone, Debug)]
pub struct LossContext {
    spec: NetworkSpec,
    features: Arc<Tensor>,
    labels: Arc<[usize]>,
}

impl LossContext {
    pub fn new(spec: &NetworkSpec, slice: &DataSlice<'_>) -> Result<Self> {
        spec.validate()?;
        let ds = slice.dataset;
        if ds.n_features() != spec.input_size() {
            return Err(Error::Config(format!(
                "dataset has {} features but the network expects {}",
                ds.n_features(),
                spec.input_size()
            )));
        }
        if ds.n_classes() > spec.output_size() {
            return Err(Error::Config(format!(
                "dataset has {} classes but the network has {} outputs",
                ds.n_classes(),
                spec.output_size()
            )));
        }
        let d = ds.n_features();
        let mut x = Vec::with_capacity(slice.len() * d);
        let mut y = Vec::with_capacity(slice.len());
        for &i in slice.indices() {
            x.extend_from_slice(ds.sample(i));
            y.push(ds.labels()[i]);
        }
        Ok(LossContext {
            spec: spec.clone(),
            features: Arc::new(Tensor::new(slice.len(), d, x)),
            labels: y.into(),
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn n_samples(&self) -> usize {
        self.labels.len()
    }

    /// A context over a subset of this context's rows.
    pub fn subset(&self, rows: &[usize]) -> LossContext {
        let d = self.features.cols;
        let mut x = Vec::with_capacity(rows.len() * d);
        let mut y = Vec::with_capacity(rows.len());
        for &r in rows {
            x.extend_from_slice(&self.features.data[r * d..(r + 1) * d]);
            y.push(self.labels[r]);
        }
        LossContext {
            spec: self.spec.clone(),
            features: Arc::new(Tensor::new(rows.len(), d, x)),
            labels: y.into(),
        }
    }

    fn record_logits(&self, tape: &mut Tape, weights: Var) -> Var {
        let x = tape.constant((*self.features).clone());
        let layers = self.spec.layers();
        let mut h = x;
        for (i, l) in layers.iter().enumerate() {
            let w = tape.slice(weights, l.weight_offset, l.fan_in, l.fan_out);
            let b = tape.slice(weights, l.bias_offset, 1, l.fan_out);
            let z = tape.matmul(h, w, false, false);
            let z = tape.add_row(z, b);
            h = if i + 1 < layers.len() { tape.relu(z) } else { z };
        }
        h
    }

    /// Logits at `mask ⊙ w`, one row per sample.
    pub fn logits(&self, w: &ParamVector, mask: &Mask) -> Result<Tensor> {
        let eff = apply_mask(w, mask)?;
        check_len(self.spec.param_count(), eff.len())?;
        let mut tape = Tape::new();
        let wv = tape.constant(Tensor::row(eff.into_vec()));
        let out = self.record_logits(&mut tape, wv);
        tape.check()?;
        Ok(tape.value(out).clone())
    }
}

impl Objective for LossContext {
    fn dim(&self) -> usize {
        self.spec.param_count()
    }

    fn record(&self, tape: &mut Tape, weights: Var) -> Var {
        let logits = self.record_logits(tape, weights);
        tape.softmax_xent(logits, self.labels.clone())
    }
}

/// Mean softmax cross-entropy over the context's slice at `mask ⊙ w`.
pub fn loss_on(ctx: &LossContext, w: &ParamVector, m: &Mask) -> Result<f64> {
    autodiff::loss(ctx, w, m)
}

pub fn loss_and_grad(ctx: &LossContext, w: &ParamVector, m: &Mask) -> Result<GradResult> {
    autodiff::grad(ctx, w, m)
}

/// Fraction of samples whose arg-max logit (lowest index on ties) is the
/// label.
pub fn accuracy_on(ctx: &LossContext, w: &ParamVector, m: &Mask) -> Result<f64> {
    let logits = ctx.logits(w, m)?;
    let mut correct = 0usize;
    for (row, &y) in logits.data.chunks(logits.cols).zip(ctx.labels.iter()) {
        let mut best = 0;
        for (j, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = j;
            }
        }
        if best == y {
            correct += 1;
        }
    }
    Ok(correct as f64 / ctx.n_samples() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_spirals, Dataset};

    fn spec(sizes: &[usize]) -> NetworkSpec {
        NetworkSpec::new(sizes.to_vec()).unwrap()
    }

    #[test]
    fn layout_counts() {
        let s = spec(&[2, 64, 64, 3]);
        assert_eq!(s.param_count(), 2 * 64 + 64 + 64 * 64 + 64 + 64 * 3 + 3);
        assert_eq!(s.prunable_count(), 2 * 64 + 64 * 64 + 64 * 3);
        let p = s.prunable();
        assert_eq!(p.iter().filter(|&&b| b).count(), s.prunable_count());
        let l = s.layers();
        assert_eq!(l[1].weight_offset, 2 * 64 + 64);
        assert!(NetworkSpec::new(vec![3]).is_err());
        assert!(NetworkSpec::new(vec![3, 1]).is_err());
        assert!(NetworkSpec::new(vec![3, 0, 2]).is_err());
    }

    #[test]
    fn init_is_deterministic_with_zero_bias() {
        let s = spec(&[2, 2]);
        let a = init_params(&s, RngStream::new(11, 0));
        assert_eq!(a, init_params(&s, RngStream::new(11, 0)));
        let big = spec(&[3, 5, 4]);
        let w = init_params(&big, RngStream::new(1, 2));
        for (x, p) in w.as_slice().iter().zip(big.prunable()) {
            if !p {
                assert_eq!(*x, 0.0);
            }
        }
    }

    #[test]
    fn he_init_scale() {
        // 50 inputs, 200 outputs: 10^4 weights with std sqrt(2/50) = 0.2.
        let s = spec(&[50, 200]);
        let w = init_params(&s, RngStream::new(3, 0));
        let n = 50 * 200;
        let ws = &w.as_slice()[..n];
        let mean = ws.iter().sum::<f64>() / n as f64;
        let var = ws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        let sd = var.sqrt();
        assert!((sd - 0.2).abs() < 0.02, "sample std {sd}");
    }

    #[test]
    fn mask_application() {
        let w = DenseVector::new(vec![3.0, -2.0, 5.0]).unwrap();
        let m = Mask::from_bits(vec![true, false, true]);
        let once = apply_mask(&w, &m).unwrap();
        assert_eq!(once.as_slice(), &[3.0, 0.0, 5.0]);
        assert_eq!(apply_mask(&once, &m).unwrap(), once);
        assert_eq!(apply_mask(&w, &Mask::dense(3)).unwrap(), w);
        assert!(apply_mask(&w, &Mask::dense(2)).is_err());
    }

    fn tiny_ctx(ds: &Dataset, s: &NetworkSpec) -> LossContext {
        LossContext::new(s, &ds.full()).unwrap()
    }

    #[test]
    fn uniform_logits_give_log_classes() {
        let ds = Dataset::new(vec![0.5, -1.0, 2.0, 0.0], vec![0, 3], 2, 4).unwrap();
        let s = spec(&[2, 5, 4]);
        let ctx = tiny_ctx(&ds, &s);
        let w = DenseVector::zeros(s.param_count());
        let l = loss_on(&ctx, &w, &s.dense_mask()).unwrap();
        assert!((l - 4f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn saturated_logit_gives_tiny_loss() {
        // Single-layer net: logits = x W + b with a margin of 20 for class 1.
        let ds = Dataset::new(vec![1.0], vec![1], 1, 2).unwrap();
        let s = spec(&[1, 2]);
        let ctx = tiny_ctx(&ds, &s);
        let w = DenseVector::new(vec![0.0, 20.0, 0.0, 0.0]).unwrap();
        assert!(loss_on(&ctx, &w, &s.dense_mask()).unwrap() < 1e-8);
    }

    #[test]
    fn loss_is_linear_over_partitions() {
        let ds = gen_spirals(10, 3, 0.1, RngStream::new(0, 0)).unwrap();
        let s = spec(&[2, 6, 3]);
        let w = init_params(&s, RngStream::new(1, 0));
        let m = s.dense_mask();
        let full = loss_on(&LossContext::new(&s, &ds.full()).unwrap(), &w, &m).unwrap();
        let a = LossContext::new(&s, &ds.slice((0..12).collect()).unwrap()).unwrap();
        let b = LossContext::new(&s, &ds.slice((12..30).collect()).unwrap()).unwrap();
        let mixed = (12.0 * loss_on(&a, &w, &m).unwrap() + 18.0 * loss_on(&b, &w, &m).unwrap()) / 30.0;
        assert!((full - mixed).abs() < 1e-12);
        assert_eq!(
            loss_on(&a, &w, &m).unwrap(),
            loss_and_grad(&a, &w, &m).unwrap().loss
        );
    }

    #[test]
    fn accuracy_edge_cases() {
        let ds = Dataset::new(vec![1.0, -1.0, 2.0, 0.5], vec![0, 1, 0, 1], 1, 2).unwrap();
        let s = spec(&[1, 2]);
        let ctx = tiny_ctx(&ds, &s);
        let zero = DenseVector::zeros(s.param_count());
        assert_eq!(accuracy_on(&ctx, &zero, &s.dense_mask()).unwrap(), 0.5);

        // logits = (x, -x): class 0 iff x > 0.
        let ds = Dataset::new(vec![1.0, -1.0, 2.0, -0.5], vec![0, 1, 0, 1], 1, 2).unwrap();
        let ctx = tiny_ctx(&ds, &s);
        let w = DenseVector::new(vec![1.0, -1.0, 0.0, 0.0]).unwrap();
        assert_eq!(accuracy_on(&ctx, &w, &s.dense_mask()).unwrap(), 1.0);
        let scaled = w.scale(7.5);
        assert_eq!(accuracy_on(&ctx, &scaled, &s.dense_mask()).unwrap(), 1.0);
    }

    #[test]
    fn masking_paths_agree() {
        let ds = gen_spirals(8, 3, 0.1, RngStream::new(2, 0)).unwrap();
        let s = spec(&[2, 5, 3]);
        let ctx = tiny_ctx(&ds, &s);
        let w = init_params(&s, RngStream::new(4, 0));
        let mut bits = s.dense_mask().bits().to_vec();
        for i in (0..bits.len()).step_by(3) {
            if s.prunable()[i] {
                bits[i] = false;
            }
        }
        let m = Mask::with_prunable(bits, s.prunable()).unwrap();
        let a = loss_on(&ctx, &w, &m).unwrap();
        let b = loss_on(&ctx, &apply_mask(&w, &m).unwrap(), &s.dense_mask()).unwrap();
        assert_eq!(a, b);
        assert!(a >= 0.0);
    }
}
