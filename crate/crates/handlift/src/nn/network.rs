//! Network assembly: ordered layer specs, shape propagation, parameter
//! storage, and the forward/backward executor.
//!
//! Execution covers a single sample; batching is a parallel map over samples
//! with gradients reduced in index order by the caller. The topology is a
//! layer list where each layer consumes its predecessor, except
//! concatenation layers which name their sources; the backward pass
//! accumulates gradients into per-layer buffers so outputs consumed by
//! several later layers are handled correctly.

use super::layers::{
    bilinear_backward, bilinear_forward, concat_backward, concat_forward, conv2d_backward,
    conv2d_forward, dropout_backward, dropout_forward, fc_backward, fc_forward, maxpool_backward,
    maxpool_forward, relu_backward, relu_forward, DropoutKey, LayerRef, LayerSpec,
};
use super::tensor::{Scalar, Tensor};
use super::NnError;
use crate::rng::stream;
use serde::{Deserialize, Serialize};

/// An ordered layer table with named output taps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub name: String,
    /// Shape of the primary input (HxWxC or a flat vector).
    pub input_shape: Vec<usize>,
    /// Length of the auxiliary input vector (0 when unused).
    pub aux_len: usize,
    pub layers: Vec<LayerSpec>,
    /// Indices of output layers. Single-headed networks tap the last layer.
    pub taps: Vec<usize>,
}

impl NetworkSpec {
    /// Sources feeding layer `i`.
    pub fn layer_sources(&self, i: usize) -> Vec<LayerRef> {
        match &self.layers[i] {
            LayerSpec::Concat { sources } => sources.clone(),
            _ if i == 0 => vec![LayerRef::Input],
            _ => vec![LayerRef::Layer(i - 1)],
        }
    }

    fn resolve_shape<'a>(
        &'a self,
        r: LayerRef,
        shapes: &'a [Vec<usize>],
        current: usize,
    ) -> Result<&'a [usize], NnError> {
        match r {
            LayerRef::Input => Ok(&self.input_shape),
            LayerRef::Aux => {
                if self.aux_len == 0 {
                    Err(NnError::InvalidSpec("network has no auxiliary input".into()))
                } else {
                    Ok(std::slice::from_ref(&self.aux_len))
                }
            }
            LayerRef::Layer(j) => {
                if j >= current {
                    Err(NnError::InvalidSpec(format!(
                        "layer {current} references later layer {j}"
                    )))
                } else {
                    Ok(&shapes[j])
                }
            }
        }
    }

    /// Output shape of every layer, in order.
    pub fn layer_shapes(&self) -> Result<Vec<Vec<usize>>, NnError> {
        let mut shapes: Vec<Vec<usize>> = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let sources = self.layer_sources(i);
            let resolved: Vec<&[usize]> = sources
                .iter()
                .map(|&r| self.resolve_shape(r, &shapes, i))
                .collect::<Result<_, _>>()?;
            shapes.push(layer.output_shape(&resolved)?);
        }
        for &tap in &self.taps {
            if tap >= self.layers.len() {
                return Err(NnError::InvalidSpec(format!("tap {tap} out of range")));
            }
        }
        Ok(shapes)
    }

    /// Shape of the single output tap.
    pub fn output_shape(&self) -> Result<Vec<usize>, NnError> {
        let shapes = self.layer_shapes()?;
        let &tap = self.taps.last().ok_or_else(|| NnError::InvalidSpec("no taps".into()))?;
        Ok(shapes[tap].clone())
    }

    /// Total parameter count.
    pub fn num_parameters(&self) -> Result<usize, NnError> {
        let shapes = self.layer_shapes()?;
        let mut count = 0;
        for (i, layer) in self.layers.iter().enumerate() {
            let input_shape = match self.layer_sources(i)[0] {
                LayerRef::Input => self.input_shape.clone(),
                LayerRef::Aux => vec![self.aux_len],
                LayerRef::Layer(j) => shapes[j].clone(),
            };
            if let Some((w, b)) = layer.param_shapes(&input_shape) {
                count += w.iter().product::<usize>() + b.iter().product::<usize>();
            }
        }
        Ok(count)
    }
}

/// Weight and bias of one parameterized layer.
#[derive(Debug, Clone)]
pub struct LayerParams<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

/// Evaluation mode: dropout active (train) or identity (eval).
#[derive(Debug, Clone, Copy)]
pub enum Mode {
    Train(DropoutKey),
    Eval,
}

/// A spec bound to parameter values.
#[derive(Debug, Clone)]
pub struct Network<T> {
    pub spec: NetworkSpec,
    pub shapes: Vec<Vec<usize>>,
    pub params: Vec<Option<LayerParams<T>>>,
}

/// Per-layer bookkeeping kept from the forward pass for backward.
enum LayerState {
    None,
    Pool(Vec<u32>),
    Dropout(Vec<bool>),
}

/// Outputs of a forward pass plus what backward needs.
pub struct ForwardPass<T> {
    pub outputs: Vec<Tensor<T>>,
    states: Vec<LayerState>,
    input: Tensor<T>,
    aux: Option<Vec<T>>,
    mode_key: Option<DropoutKey>,
}

impl<T: Scalar> ForwardPass<T> {
    pub fn tap(&self, spec: &NetworkSpec) -> &Tensor<T> {
        &self.outputs[*spec.taps.last().unwrap()]
    }

    /// Hash of the discrete activation pattern: the sign pattern of every
    /// rectified unit and every pooling argmax. Two passes with the same
    /// signature evaluated the same piecewise-linear region, which makes
    /// finite differences against this pass trustworthy.
    pub fn activation_signature(&self, spec: &NetworkSpec) -> u64 {
        let mut hash = 0xcbf2_9ce4_8422_2325u64;
        let mut feed = |bits: u64| {
            hash ^= bits;
            hash = hash.wrapping_mul(0x100_0000_01b3);
        };
        for (i, layer) in spec.layers.iter().enumerate() {
            match layer {
                LayerSpec::Relu => {
                    for (e, v) in self.outputs[i].data().iter().enumerate() {
                        if *v > T::zero() {
                            feed(e as u64 + 1);
                        }
                    }
                    feed(u64::MAX);
                }
                LayerSpec::MaxPool { .. } => {
                    if let LayerState::Pool(argmax) = &self.states[i] {
                        for &ix in argmax {
                            feed(ix as u64);
                        }
                    }
                    feed(u64::MAX - 1);
                }
                _ => {}
            }
        }
        hash
    }
}

/// Parameter gradients, parallel to `Network::params`.
pub struct Gradients<T> {
    pub layers: Vec<Option<LayerParams<T>>>,
    pub d_input: Tensor<T>,
    pub d_aux: Option<Vec<T>>,
}

impl<T: Scalar> Gradients<T> {
    /// Element-wise accumulate another gradient set.
    pub fn accumulate(&mut self, other: &Gradients<T>) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            if let (Some(a), Some(b)) = (a.as_mut(), b.as_ref()) {
                for (x, &y) in a.weight.data_mut().iter_mut().zip(b.weight.data()) {
                    *x += y;
                }
                for (x, &y) in a.bias.data_mut().iter_mut().zip(b.bias.data()) {
                    *x += y;
                }
            }
        }
    }

    pub fn scale(&mut self, factor: T) {
        for layer in self.layers.iter_mut().flatten() {
            for x in layer.weight.data_mut() {
                *x *= factor;
            }
            for x in layer.bias.data_mut() {
                *x *= factor;
            }
        }
    }
}

impl<T: Scalar> Network<T> {
    /// Build a network with zero-initialized parameters.
    pub fn zeros(spec: NetworkSpec) -> Result<Self, NnError> {
        let shapes = spec.layer_shapes()?;
        let mut params = Vec::with_capacity(spec.layers.len());
        for (i, layer) in spec.layers.iter().enumerate() {
            let input_shape = input_shape_of(&spec, &shapes, i);
            params.push(layer.param_shapes(&input_shape).map(|(w, b)| LayerParams {
                weight: Tensor::zeros(&w),
                bias: Tensor::zeros(&b),
            }));
        }
        Ok(Network { spec, shapes, params })
    }

    /// Build a network with fan-in-scaled uniform weights and zero biases,
    /// deterministic in the seed.
    pub fn init(spec: NetworkSpec, seed: u64) -> Result<Self, NnError> {
        let mut net = Self::zeros(spec)?;
        let mut rng = stream(seed);
        use rand::Rng;
        for (i, params) in net.params.iter_mut().enumerate() {
            if let Some(p) = params {
                let fan_in: usize = match &net.spec.layers[i] {
                    LayerSpec::Conv { kernel, .. } => {
                        kernel * kernel * p.weight.shape()[2]
                    }
                    LayerSpec::FullyConnected { .. } => p.weight.shape()[1],
                    _ => unreachable!(),
                };
                let bound = (6.0 / fan_in as f64).sqrt();
                for w in p.weight.data_mut() {
                    *w = T::from_f64(rng.gen_range(-bound..bound));
                }
            }
        }
        Ok(net)
    }

    /// Flat views over all parameter tensors in layer order
    /// (weight then bias per parameterized layer).
    pub fn param_tensors(&self) -> Vec<&Tensor<T>> {
        let mut out = Vec::new();
        for p in self.params.iter().flatten() {
            out.push(&p.weight);
            out.push(&p.bias);
        }
        out
    }

    pub fn param_tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = Vec::new();
        for p in self.params.iter_mut().flatten() {
            out.push(&mut p.weight);
            out.push(&mut p.bias);
        }
        out
    }

    /// Stable checkpoint names for all parameter tensors, in the same order
    /// as [`Self::param_tensors`].
    pub fn param_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (i, p) in self.params.iter().enumerate() {
            if p.is_some() {
                out.push(format!("layer{i:02}/weight"));
                out.push(format!("layer{i:02}/bias"));
            }
        }
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.param_tensors().iter().map(|t| t.len()).sum()
    }

    /// Run the network on one sample.
    pub fn forward(
        &self,
        input: Tensor<T>,
        aux: Option<&[T]>,
        mode: Mode,
    ) -> Result<ForwardPass<T>, NnError> {
        if input.shape() != self.spec.input_shape.as_slice() {
            return Err(NnError::ShapeMismatch(format!(
                "input shape {:?} differs from spec {:?}",
                input.shape(),
                self.spec.input_shape
            )));
        }
        if self.spec.aux_len > 0 {
            match aux {
                Some(a) if a.len() == self.spec.aux_len => {}
                _ => {
                    return Err(NnError::ShapeMismatch(format!(
                        "auxiliary input of length {} required",
                        self.spec.aux_len
                    )))
                }
            }
        }
        let mode_key = match mode {
            Mode::Train(key) => Some(key),
            Mode::Eval => None,
        };

        let mut outputs: Vec<Tensor<T>> = Vec::with_capacity(self.spec.layers.len());
        let mut states: Vec<LayerState> = Vec::with_capacity(self.spec.layers.len());

        for (i, layer) in self.spec.layers.iter().enumerate() {
            let out_shape = &self.shapes[i];
            let mut out = Tensor::zeros(out_shape);
            let mut state = LayerState::None;

            let source_data = |r: LayerRef| -> &[T] {
                match r {
                    LayerRef::Input => input.data(),
                    LayerRef::Aux => aux.unwrap(),
                    LayerRef::Layer(j) => outputs[j].data(),
                }
            };
            let source_shape = |r: LayerRef| -> &[usize] {
                match r {
                    LayerRef::Input => &self.spec.input_shape,
                    LayerRef::Aux => std::slice::from_ref(&self.spec.aux_len),
                    LayerRef::Layer(j) => &self.shapes[j],
                }
            };
            let primary = self.spec.layer_sources(i)[0];
            let x = source_data(primary);
            let x_shape = source_shape(primary);

            match layer {
                LayerSpec::Conv { kernel, stride, padding, .. } => {
                    let p = self.params[i].as_ref().unwrap();
                    conv2d_forward(
                        x,
                        [x_shape[0], x_shape[1], x_shape[2]],
                        p.weight.data(),
                        p.bias.data(),
                        *kernel,
                        *stride,
                        *padding,
                        out.data_mut(),
                        [out_shape[0], out_shape[1], out_shape[2]],
                    );
                }
                LayerSpec::Relu => relu_forward(x, out.data_mut()),
                LayerSpec::MaxPool { kernel, stride, padding } => {
                    let mut argmax = Vec::new();
                    maxpool_forward(
                        x,
                        [x_shape[0], x_shape[1], x_shape[2]],
                        *kernel,
                        *stride,
                        *padding,
                        out.data_mut(),
                        [out_shape[0], out_shape[1], out_shape[2]],
                        &mut argmax,
                    );
                    state = LayerState::Pool(argmax);
                }
                LayerSpec::FullyConnected { .. } => {
                    let p = self.params[i].as_ref().unwrap();
                    fc_forward(x, p.weight.data(), p.bias.data(), out.data_mut());
                }
                LayerSpec::Dropout { probability } => match &mode_key {
                    Some(key) if *probability > 0.0 => {
                        let mut mask = Vec::new();
                        let layer_key = DropoutKey { layer: i as u64, ..*key };
                        dropout_forward(x, *probability, &layer_key, out.data_mut(), &mut mask);
                        state = LayerState::Dropout(mask);
                    }
                    _ => out.data_mut().copy_from_slice(x),
                },
                LayerSpec::Concat { sources } => {
                    let gathered: Vec<(&[T], &[usize])> =
                        sources.iter().map(|&r| (source_data(r), source_shape(r))).collect();
                    concat_forward(&gathered, out.data_mut());
                }
                LayerSpec::BilinearUpsample { .. } => {
                    bilinear_forward(
                        x,
                        [x_shape[0], x_shape[1], x_shape[2]],
                        out.data_mut(),
                        [out_shape[0], out_shape[1], out_shape[2]],
                    );
                }
                LayerSpec::Reshape => out.data_mut().copy_from_slice(x),
            }

            outputs.push(out);
            states.push(state);
        }

        Ok(ForwardPass {
            outputs,
            states,
            input,
            aux: aux.map(|a| a.to_vec()),
            mode_key,
        })
    }

    /// Backpropagate `d_tap` (gradient of the loss with respect to the
    /// single output tap) through the pass.
    pub fn backward(&self, pass: &ForwardPass<T>, d_tap: &[T]) -> Result<Gradients<T>, NnError> {
        let tap = *self
            .spec
            .taps
            .last()
            .ok_or_else(|| NnError::InvalidSpec("no taps".into()))?;
        if d_tap.len() != pass.outputs[tap].len() {
            return Err(NnError::ShapeMismatch(format!(
                "gradient length {} does not match tap length {}",
                d_tap.len(),
                pass.outputs[tap].len()
            )));
        }

        // One gradient buffer per layer output, filled lazily.
        let mut buffers: Vec<Option<Vec<T>>> = self.shapes.iter().map(|_| None).collect();
        let mut d_input = vec![T::zero(); pass.input.len()];
        let mut d_aux = vec![T::zero(); self.spec.aux_len];
        buffers[tap] = Some(d_tap.to_vec());

        let mut grads: Vec<Option<LayerParams<T>>> = self
            .params
            .iter()
            .map(|p| {
                p.as_ref().map(|p| LayerParams {
                    weight: Tensor::zeros(p.weight.shape()),
                    bias: Tensor::zeros(p.bias.shape()),
                })
            })
            .collect();

        for i in (0..self.spec.layers.len()).rev() {
            let Some(d_out) = buffers[i].take() else { continue };
            let sources = self.spec.layer_sources(i);
            let primary = sources[0];

            // Lazily materialize the gradient buffer of a source.
            macro_rules! src_buffer {
                ($r:expr) => {
                    match $r {
                        LayerRef::Input => &mut d_input,
                        LayerRef::Aux => &mut d_aux,
                        LayerRef::Layer(j) => buffers[j]
                            .get_or_insert_with(|| vec![T::zero(); self.shapes[j].iter().product()]),
                    }
                };
            }
            let source_data = |r: LayerRef| -> &[T] {
                match r {
                    LayerRef::Input => pass.input.data(),
                    LayerRef::Aux => pass.aux.as_deref().unwrap(),
                    LayerRef::Layer(j) => pass.outputs[j].data(),
                }
            };
            let source_shape = |r: LayerRef| -> &[usize] {
                match r {
                    LayerRef::Input => &self.spec.input_shape,
                    LayerRef::Aux => std::slice::from_ref(&self.spec.aux_len),
                    LayerRef::Layer(j) => &self.shapes[j],
                }
            };
            let x_shape = source_shape(primary).to_vec();
            let out_shape = self.shapes[i].clone();

            match &self.spec.layers[i] {
                LayerSpec::Conv { kernel, stride, padding, .. } => {
                    let x = source_data(primary).to_vec();
                    let p = self.params[i].as_ref().unwrap();
                    let g = grads[i].as_mut().unwrap();
                    conv2d_backward(
                        &x,
                        [x_shape[0], x_shape[1], x_shape[2]],
                        p.weight.data(),
                        *kernel,
                        *stride,
                        *padding,
                        &d_out,
                        [out_shape[0], out_shape[1], out_shape[2]],
                        src_buffer!(primary),
                        g.weight.data_mut(),
                        g.bias.data_mut(),
                    );
                }
                LayerSpec::Relu => {
                    let x = source_data(primary).to_vec();
                    relu_backward(&x, &d_out, src_buffer!(primary));
                }
                LayerSpec::MaxPool { .. } => {
                    let LayerState::Pool(argmax) = &pass.states[i] else {
                        return Err(NnError::InvalidSpec("missing pool state".into()));
                    };
                    maxpool_backward(argmax, &d_out, src_buffer!(primary));
                }
                LayerSpec::FullyConnected { .. } => {
                    let x = source_data(primary).to_vec();
                    let p = self.params[i].as_ref().unwrap();
                    let g = grads[i].as_mut().unwrap();
                    fc_backward(
                        &x,
                        p.weight.data(),
                        &d_out,
                        src_buffer!(primary),
                        g.weight.data_mut(),
                        g.bias.data_mut(),
                    );
                }
                LayerSpec::Dropout { probability } => match (&pass.states[i], pass.mode_key) {
                    (LayerState::Dropout(mask), Some(_)) => {
                        dropout_backward(mask, *probability, &d_out, src_buffer!(primary));
                    }
                    _ => {
                        let buf = src_buffer!(primary);
                        for (b, &g) in buf.iter_mut().zip(&d_out) {
                            *b += g;
                        }
                    }
                },
                LayerSpec::Concat { sources } => {
                    let shapes: Vec<&[usize]> = sources.iter().map(|&r| source_shape(r)).collect();
                    // Split into per-source temporary buffers, then merge, to
                    // keep the borrow checker satisfied with mixed targets.
                    let mut temps: Vec<Vec<T>> = shapes
                        .iter()
                        .map(|s| vec![T::zero(); s.iter().product()])
                        .collect();
                    {
                        let mut views: Vec<&mut [T]> =
                            temps.iter_mut().map(|t| t.as_mut_slice()).collect();
                        concat_backward(&d_out, &shapes, &mut views);
                    }
                    for (&r, temp) in sources.iter().zip(temps) {
                        let buf = src_buffer!(r);
                        for (b, g) in buf.iter_mut().zip(temp) {
                            *b += g;
                        }
                    }
                }
                LayerSpec::BilinearUpsample { .. } => {
                    bilinear_backward(
                        &d_out,
                        [out_shape[0], out_shape[1], out_shape[2]],
                        src_buffer!(primary),
                        [x_shape[0], x_shape[1], x_shape[2]],
                    );
                }
                LayerSpec::Reshape => {
                    let buf = src_buffer!(primary);
                    for (b, &g) in buf.iter_mut().zip(&d_out) {
                        *b += g;
                    }
                }
            }
        }

        Ok(Gradients {
            layers: grads,
            d_input: Tensor::from_vec(&self.spec.input_shape, d_input),
            d_aux: if self.spec.aux_len > 0 { Some(d_aux) } else { None },
        })
    }
}

fn input_shape_of(spec: &NetworkSpec, shapes: &[Vec<usize>], i: usize) -> Vec<usize> {
    match spec.layer_sources(i)[0] {
        LayerRef::Input => spec.input_shape.clone(),
        LayerRef::Aux => vec![spec.aux_len],
        LayerRef::Layer(j) => shapes[j].clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_spec() -> NetworkSpec {
        NetworkSpec {
            name: "tiny".into(),
            input_shape: vec![6, 6, 2],
            aux_len: 2,
            layers: vec![
                LayerSpec::Conv { out_channels: 3, kernel: 3, stride: 1, padding: 1 },
                LayerSpec::Relu,
                LayerSpec::MaxPool { kernel: 4, stride: 2, padding: 1 },
                LayerSpec::Reshape,
                LayerSpec::Concat { sources: vec![LayerRef::Layer(3), LayerRef::Aux] },
                LayerSpec::FullyConnected { out_features: 4 },
            ],
            taps: vec![5],
        }
    }

    #[test]
    fn shape_propagation_through_mixed_topology() {
        let spec = tiny_spec();
        let shapes = spec.layer_shapes().unwrap();
        assert_eq!(shapes[0], vec![6, 6, 3]);
        assert_eq!(shapes[2], vec![3, 3, 3]);
        assert_eq!(shapes[3], vec![27]);
        assert_eq!(shapes[4], vec![29]);
        assert_eq!(shapes[5], vec![4]);
    }

    #[test]
    fn forward_runs_and_zero_network_outputs_bias() {
        let spec = tiny_spec();
        let net: Network<f64> = Network::zeros(spec).unwrap();
        let input = Tensor::from_vec(&[6, 6, 2], vec![0.5; 72]);
        let pass = net.forward(input, Some(&[1.0, 0.0]), Mode::Eval).unwrap();
        assert_eq!(pass.tap(&net.spec).data(), &[0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn forward_rejects_wrong_input_shape() {
        let net: Network<f64> = Network::zeros(tiny_spec()).unwrap();
        let input = Tensor::from_vec(&[5, 5, 2], vec![0.0; 50]);
        assert!(matches!(
            net.forward(input, Some(&[1.0, 0.0]), Mode::Eval),
            Err(NnError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn forward_requires_aux_when_spec_demands_it() {
        let net: Network<f64> = Network::zeros(tiny_spec()).unwrap();
        let input = Tensor::from_vec(&[6, 6, 2], vec![0.0; 72]);
        assert!(net.forward(input, None, Mode::Eval).is_err());
    }

    #[test]
    fn init_is_deterministic_and_fan_in_bounded() {
        let a: Network<f32> = Network::init(tiny_spec(), 11).unwrap();
        let b: Network<f32> = Network::init(tiny_spec(), 11).unwrap();
        for (x, y) in a.param_tensors().iter().zip(b.param_tensors().iter()) {
            assert_eq!(x.data(), y.data());
        }
        let conv = a.params[0].as_ref().unwrap();
        let bound = (6.0f64 / (3.0 * 3.0 * 2.0)).sqrt() as f32;
        assert!(conv.weight.data().iter().all(|w| w.abs() <= bound));
        assert!(conv.bias.data().iter().all(|&b| b == 0.0));
    }

    #[test]
    fn spec_rejects_forward_references() {
        let mut spec = tiny_spec();
        spec.layers[4] = LayerSpec::Concat { sources: vec![LayerRef::Layer(5)] };
        assert!(spec.layer_shapes().is_err());
    }
}
