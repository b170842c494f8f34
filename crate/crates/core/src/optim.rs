//! AdamW with decoupled weight decay. Kernel masks are re-applied after every
//! step so masked taps stay exactly zero.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::{mask_in_place, KernelMask};
use crate::model::{ArModel, ModelGrads};
use crate::tensor::Element;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// One parameter tensor for [`AdamW::step`]. `mask` applies to buffers laid
/// out as `(…, K, K)`.
pub struct ParamSlot<'a, T> {
    pub values: &'a mut [T],
    pub grads: &'a [T],
    pub mask: Option<&'a KernelMask>,
}

#[derive(Clone, Debug)]
pub struct AdamW {
    config: AdamWConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl AdamW {
    pub fn new(config: AdamWConfig) -> Self {
        Self {
            config,
            m: Vec::new(),
            v: Vec::new(),
            t: 0,
        }
    }

    pub fn config(&self) -> &AdamWConfig {
        &self.config
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn first_moments(&self) -> &[Vec<f64>] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Vec<f64>] {
        &self.v
    }

    /// One update over all parameter tensors. Moment buffers are created on
    /// the first call and must keep the same shapes afterwards.
    pub fn step<T: Element>(&mut self, slots: &mut [ParamSlot<'_, T>]) -> Result<()> {
        if self.m.is_empty() && self.t == 0 {
            self.m = slots.iter().map(|s| vec![0.0; s.values.len()]).collect();
            self.v = self.m.clone();
        }
        if slots.len() != self.m.len() {
            return Err(Error::dims("AdamW::step (tensor count)", self.m.len(), slots.len()));
        }
        for (idx, slot) in slots.iter().enumerate() {
            if slot.values.len() != self.m[idx].len() || slot.grads.len() != slot.values.len() {
                return Err(Error::dims(
                    "AdamW::step (tensor shape)",
                    self.m[idx].len(),
                    format!("values {} / grads {}", slot.values.len(), slot.grads.len()),
                ));
            }
        }

        self.t += 1;
        let AdamWConfig {
            lr,
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        for (idx, slot) in slots.iter_mut().enumerate() {
            let (m, v) = (&mut self.m[idx], &mut self.v[idx]);
            for (((w, g), m), v) in slot.values.iter_mut().zip(slot.grads).zip(m).zip(v) {
                let g = g.to_f64();
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                let w0 = w.to_f64();
                *w = T::from_f64(w0 - lr * m_hat / (v_hat.sqrt() + eps) - lr * weight_decay * w0);
            }
            if let Some(mask) = slot.mask {
                mask_in_place(slot.values, mask.kernel(), mask)?;
            }
        }
        Ok(())
    }

    /// Steps every weight and bias of `model` and re-applies its masks.
    pub fn step_model<T: Element>(&mut self, model: &mut ArModel<T>, grads: &ModelGrads<T>) -> Result<()> {
        let depth = model.layers().len();
        if grads.weights.len() != depth || grads.biases.len() != depth {
            return Err(Error::dims("AdamW::step_model", depth, grads.weights.len()));
        }
        let masks: Vec<KernelMask> = model.masks().to_vec();
        let mut slots = Vec::with_capacity(2 * depth);
        for ((wts, mask), (gw, gb)) in model
            .layers_mut()
            .iter_mut()
            .zip(&masks)
            .zip(grads.weights.iter().zip(&grads.biases))
        {
            slots.push(ParamSlot {
                values: &mut wts.w,
                grads: gw,
                mask: Some(mask),
            });
            slots.push(ParamSlot {
                values: &mut wts.b,
                grads: gb,
                mask: None,
            });
        }
        self.step(&mut slots)
    }
}
