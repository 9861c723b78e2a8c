use rand_chacha::ChaCha8Rng;

use crate::scalar::Scalar;

use super::{Layer, NnError, ParamMut, Tensor};

/// Layer stack executed in order. The optional `aux` tensor is consumed by a
/// `concat-scale` layer if one is present.
#[derive(Debug, Clone, Default)]
pub struct Sequential<T> {
    pub layers: Vec<Layer<T>>,
}

impl<T: Scalar> Sequential<T> {
    pub fn new(layers: Vec<Layer<T>>) -> Self {
        Self { layers }
    }

    /// Deterministic inference pass; batch norm uses running statistics and
    /// dropout is inactive.
    pub fn forward_eval(&self, x: Tensor<T>, aux: Option<&Tensor<T>>) -> Result<Tensor<T>, NnError> {
        let mut t = x;
        for (i, layer) in self.layers.iter().enumerate() {
            t = layer.forward_eval(t, aux)?;
            if !t.all_finite() {
                return Err(NnError::NonFinite { layer: layer.kind_name(), index: i });
            }
        }
        Ok(t)
    }

    /// Training pass: caches activations for [`Self::backward`], batch norm
    /// uses batch statistics and dropout is active.
    pub fn forward_train(
        &mut self,
        x: Tensor<T>,
        aux: Option<&Tensor<T>>,
        rng: &mut ChaCha8Rng,
    ) -> Result<Tensor<T>, NnError> {
        let mut t = x;
        for (i, layer) in self.layers.iter_mut().enumerate() {
            t = layer.forward_train(t, aux, rng)?;
            if !t.all_finite() {
                return Err(NnError::NonFinite { layer: layer.kind_name(), index: i });
            }
        }
        Ok(t)
    }

    /// Back-propagates the loss gradient, accumulating parameter gradients,
    /// and returns the gradient with respect to the input.
    pub fn backward(&mut self, g: Tensor<T>) -> Result<Tensor<T>, NnError> {
        let mut t = g;
        for layer in self.layers.iter_mut().rev() {
            t = layer.backward(t)?;
        }
        Ok(t)
    }

    pub fn zero_grad(&mut self) {
        for layer in &mut self.layers {
            layer.zero_grad();
        }
    }

    pub fn clear_caches(&mut self) {
        for layer in &mut self.layers {
            layer.clear_cache();
        }
    }

    pub fn params(&mut self) -> Vec<ParamMut<'_, T>> {
        self.layers.iter_mut().flat_map(|l| l.params()).collect()
    }

    pub fn param_count(&mut self) -> usize {
        self.params().iter().map(|p| p.value.len()).sum()
    }

    /// Checksum of all parameters; cheap way to assert frozen weights.
    pub fn param_checksum(&mut self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        for p in self.params() {
            for v in p.value.iter() {
                let bits = v.to_f64().unwrap().to_bits();
                h ^= bits;
                h = h.wrapping_mul(0x100000001b3);
            }
        }
        h
    }
}
