use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tensor::affine;
use super::{ParamVector, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
}

/// Fully connected classifier: ReLU between layers, linear logits at the end.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    layer_widths: Vec<usize>,
    #[serde(default)]
    activation: Activation,
}

impl MlpSpec {
    pub fn new(layer_widths: Vec<usize>) -> Result<Self> {
        if layer_widths.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "an MLP needs input and output widths, got {layer_widths:?}"
            )));
        }
        if layer_widths.iter().any(|&w| w == 0) {
            return Err(Error::InvalidArgument(format!(
                "layer widths must be positive, got {layer_widths:?}"
            )));
        }
        if *layer_widths.last().unwrap() < 2 {
            return Err(Error::InvalidArgument(
                "class count (last width) must be at least 2".into(),
            ));
        }
        Ok(MlpSpec {
            layer_widths,
            activation: Activation::Relu,
        })
    }

    pub fn classifier(input: usize, hidden: &[usize], classes: usize) -> Result<Self> {
        let mut widths = vec![input];
        widths.extend_from_slice(hidden);
        widths.push(classes);
        MlpSpec::new(widths)
    }

    pub fn layer_widths(&self) -> &[usize] {
        &self.layer_widths
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_dim(&self) -> usize {
        self.layer_widths[0]
    }

    pub fn class_count(&self) -> usize {
        *self.layer_widths.last().unwrap()
    }

    pub fn zero_params(&self) -> ParamVector {
        zero_params(&self.layer_widths)
    }

    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamVector {
        init_params(&self.layer_widths, rng)
    }

    pub fn check_params(&self, params: &ParamVector) -> Result<()> {
        check_params(&self.layer_widths, params)
    }

    pub fn forward(&self, params: &ParamVector, batch: &Tensor) -> Result<Tensor> {
        Ok(self.trace(params, batch)?.into_output())
    }

    pub fn trace(&self, params: &ParamVector, batch: &Tensor) -> Result<Trace> {
        trace(&self.layer_widths, params, batch)
    }

    /// Backpropagates `grad_output` (∂loss/∂logits) through a cached forward pass.
    pub fn backward(
        &self,
        params: &ParamVector,
        trace: &Trace,
        grad_output: &Tensor,
    ) -> Result<Backward> {
        backward(&self.layer_widths, params, trace, grad_output)
    }
}

pub(crate) fn weight_name(layer: usize) -> String {
    format!("dense{layer}.weight")
}

pub(crate) fn bias_name(layer: usize) -> String {
    format!("dense{layer}.bias")
}

pub(crate) fn zero_params(widths: &[usize]) -> ParamVector {
    let mut parts = Vec::with_capacity(2 * (widths.len() - 1));
    for (l, pair) in widths.windows(2).enumerate() {
        parts.push((weight_name(l), Tensor::zeros(vec![pair[1], pair[0]])));
        parts.push((bias_name(l), Tensor::zeros(vec![pair[1]])));
    }
    ParamVector::from_named(parts)
}

/// He-uniform weights for layers feeding a ReLU, Glorot-uniform for the
/// output layer, zero biases.
pub(crate) fn init_params<R: Rng + ?Sized>(widths: &[usize], rng: &mut R) -> ParamVector {
    let layers = widths.len() - 1;
    let mut parts = Vec::with_capacity(2 * layers);
    for (l, pair) in widths.windows(2).enumerate() {
        let (fan_in, fan_out) = (pair[0], pair[1]);
        let limit = if l + 1 < layers {
            (6.0 / fan_in as f64).sqrt()
        } else {
            (6.0 / (fan_in + fan_out) as f64).sqrt()
        };
        let values = (0..fan_in * fan_out)
            .map(|_| rng.random_range(-limit..limit))
            .collect();
        parts.push((
            weight_name(l),
            Tensor::from_parts(vec![fan_out, fan_in], values),
        ));
        parts.push((bias_name(l), Tensor::zeros(vec![fan_out])));
    }
    ParamVector::from_named(parts)
}

pub(crate) fn check_params(widths: &[usize], params: &ParamVector) -> Result<()> {
    let segs = params.segments();
    if segs.len() != 2 * (widths.len() - 1) {
        return Err(Error::shape(
            "MLP parameter segments",
            2 * (widths.len() - 1),
            segs.len(),
        ));
    }
    for (l, pair) in widths.windows(2).enumerate() {
        let w = &segs[2 * l];
        let b = &segs[2 * l + 1];
        if w.name != weight_name(l) || w.tensor.shape() != [pair[1], pair[0]] {
            return Err(Error::shape(
                format!("layer {l} weight"),
                (weight_name(l), [pair[1], pair[0]]),
                (&w.name, w.tensor.shape()),
            ));
        }
        if b.name != bias_name(l) || b.tensor.shape() != [pair[1]] {
            return Err(Error::shape(
                format!("layer {l} bias"),
                (bias_name(l), [pair[1]]),
                (&b.name, b.tensor.shape()),
            ));
        }
    }
    Ok(())
}

/// Cached activations of one forward pass.
#[derive(Clone, Debug)]
pub struct Trace {
    /// `inputs[l]` is the input to layer `l`; `inputs[0]` is the batch.
    inputs: Vec<Tensor>,
    /// Pre-activation outputs of every layer; the last one is the logits.
    pre: Vec<Tensor>,
}

impl Trace {
    pub fn output(&self) -> &Tensor {
        self.pre.last().unwrap()
    }

    pub fn into_output(mut self) -> Tensor {
        self.pre.pop().unwrap()
    }
}

pub struct Backward {
    pub params: ParamVector,
    /// ∂loss/∂input, one row per example.
    pub input: Tensor,
}

pub(crate) fn trace(widths: &[usize], params: &ParamVector, batch: &Tensor) -> Result<Trace> {
    check_params(widths, params)?;
    if batch.shape().len() != 2 || batch.cols() != widths[0] {
        return Err(Error::shape(
            "forward input",
            ["batch", &widths[0].to_string()],
            batch.shape(),
        ));
    }
    let segs = params.segments();
    let layers = widths.len() - 1;
    let mut inputs = Vec::with_capacity(layers);
    let mut pre = Vec::with_capacity(layers);
    let mut current = batch.clone();
    for l in 0..layers {
        let z = affine(&current, &segs[2 * l].tensor, &segs[2 * l + 1].tensor);
        let next = if l + 1 < layers {
            Some(z.map(|v| v.max(0.0)))
        } else {
            None
        };
        inputs.push(current);
        pre.push(z);
        match next {
            Some(a) => current = a,
            None => break,
        }
    }
    Ok(Trace { inputs, pre })
}

pub(crate) fn backward(
    widths: &[usize],
    params: &ParamVector,
    trace: &Trace,
    grad_output: &Tensor,
) -> Result<Backward> {
    let layers = widths.len() - 1;
    let rows = trace.output().rows();
    if grad_output.shape() != trace.output().shape() {
        return Err(Error::shape(
            "backward output gradient",
            trace.output().shape(),
            grad_output.shape(),
        ));
    }
    let segs = params.segments();
    let mut grads = params.zeros_like();
    let mut delta = grad_output.clone();
    for l in (0..layers).rev() {
        let (inp, out) = (widths[l], widths[l + 1]);
        let a = &trace.inputs[l];
        {
            let gw = grads.segment_mut(2 * l).values_mut();
            for r in 0..rows {
                let dr = delta.row(r);
                let ar = a.row(r);
                for o in 0..out {
                    let d = dr[o];
                    if d == 0.0 {
                        continue;
                    }
                    let dst = &mut gw[o * inp..(o + 1) * inp];
                    for (g, &x) in dst.iter_mut().zip(ar) {
                        *g += d * x;
                    }
                }
            }
        }
        {
            let gb = grads.segment_mut(2 * l + 1).values_mut();
            for r in 0..rows {
                for (g, &d) in gb.iter_mut().zip(delta.row(r)) {
                    *g += d;
                }
            }
        }
        let w = segs[2 * l].tensor.values();
        let mut prev = vec![0.0; rows * inp];
        for r in 0..rows {
            let dr = delta.row(r);
            let dst = &mut prev[r * inp..(r + 1) * inp];
            for o in 0..out {
                let d = dr[o];
                if d == 0.0 {
                    continue;
                }
                for (p, &wv) in dst.iter_mut().zip(&w[o * inp..(o + 1) * inp]) {
                    *p += d * wv;
                }
            }
        }
        let mut prev = Tensor::from_parts(vec![rows, inp], prev);
        if l > 0 {
            let z = &trace.pre[l - 1];
            for (p, &zv) in prev.values_mut().iter_mut().zip(z.values()) {
                if zv <= 0.0 {
                    *p = 0.0;
                }
            }
        }
        delta = prev;
    }
    Ok(Backward {
        params: grads,
        input: delta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Scalar-by-scalar forward pass sharing nothing with `trace`.
    fn scalar_forward(widths: &[usize], params: &ParamVector, x: &[f64]) -> Vec<f64> {
        let mut act = x.to_vec();
        let layers = widths.len() - 1;
        for l in 0..layers {
            let w = params.segment(&format!("dense{l}.weight")).unwrap();
            let b = params.segment(&format!("dense{l}.bias")).unwrap();
            let mut next = Vec::new();
            for o in 0..widths[l + 1] {
                let mut s = b.values()[o];
                for i in 0..widths[l] {
                    s += w.values()[o * widths[l] + i] * act[i];
                }
                if l + 1 < layers && s < 0.0 {
                    s = 0.0;
                }
                next.push(s);
            }
            act = next;
        }
        act
    }

    #[test]
    fn zero_params_give_zero_logits() {
        let spec = MlpSpec::classifier(3, &[5], 4).unwrap();
        let x = Tensor::matrix(2, 3, vec![1.0, -2.0, 3.0, 0.5, 0.5, 9.0]).unwrap();
        let out = spec.forward(&spec.zero_params(), &x).unwrap();
        assert_eq!(out.shape(), &[2, 4]);
        assert!(out.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_single_layer() {
        let spec = MlpSpec::new(vec![3, 3]).unwrap();
        let mut params = spec.zero_params();
        for i in 0..3 {
            *params.coord_mut(0, i * 3 + i) = 1.0;
        }
        let x = Tensor::matrix(2, 3, vec![0.1, -0.2, 0.3, 4.0, 5.0, -6.0]).unwrap();
        assert_eq!(spec.forward(&params, &x).unwrap(), x);
    }

    #[test]
    fn seeded_forward_matches_scalar_oracle() {
        let spec = MlpSpec::new(vec![2, 4, 3]).unwrap();
        let params = spec.init_params(&mut ChaCha8Rng::seed_from_u64(0));
        let x = Tensor::matrix(1, 2, vec![1.0, 0.0]).unwrap();
        let out = spec.forward(&params, &x).unwrap();
        let oracle = scalar_forward(spec.layer_widths(), &params, &[1.0, 0.0]);
        for (a, b) in out.values().iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-14, "{a} vs {b}");
        }
    }

    #[test]
    fn input_width_mismatch_is_shape_error() {
        let spec = MlpSpec::new(vec![2, 3]).unwrap();
        let x = Tensor::matrix(1, 3, vec![0.0; 3]).unwrap();
        assert!(matches!(
            spec.forward(&spec.zero_params(), &x),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn params_for_other_spec_rejected() {
        let a = MlpSpec::new(vec![2, 3]).unwrap();
        let b = MlpSpec::new(vec![2, 4]).unwrap();
        let x = Tensor::matrix(1, 2, vec![0.0; 2]).unwrap();
        assert!(a.forward(&b.zero_params(), &x).is_err());
    }

    #[test]
    fn spec_validation() {
        assert!(MlpSpec::new(vec![4]).is_err());
        assert!(MlpSpec::new(vec![4, 1]).is_err());
        assert!(MlpSpec::new(vec![4, 0, 3]).is_err());
    }
}
