//! Flat parameter storage, SGD with momentum and clipping, and the small
//! dense helpers both detectors share.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::RandomSource;
use crate::persist::TensorBundle;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamSlot {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl ParamSlot {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Named tensors laid out back to back in one vector, so optimizers and
/// gradient checks see a single flat parameter vector.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    slots: Vec<ParamSlot>,
    pub data: Vec<f64>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a tensor filled with `N(0, std²)` draws (zeros when `std == 0`).
    pub fn push(&mut self, name: &str, shape: &[usize], std: f64, rng: &mut RandomSource) -> usize {
        let offset = self.data.len();
        let len: usize = shape.iter().product();
        self.data
            .extend((0..len).map(|_| if std == 0.0 { 0.0 } else { std * rng.normal() }));
        self.slots.push(ParamSlot {
            name: name.to_string(),
            shape: shape.to_vec(),
            offset,
        });
        self.slots.len() - 1
    }

    pub fn push_filled(&mut self, name: &str, shape: &[usize], value: f64) -> usize {
        let idx = self.push(name, shape, 0.0, &mut RandomSource::new(0));
        let r = self.slots[idx].range();
        self.data[r].fill(value);
        idx
    }

    pub fn slots(&self) -> &[ParamSlot] {
        &self.slots
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, idx: usize) -> &[f64] {
        &self.data[self.slots[idx].range()]
    }

    pub fn get_mut(&mut self, idx: usize) -> &mut [f64] {
        let r = self.slots[idx].range();
        &mut self.data[r]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.slots.iter().position(|s| s.name == name)
    }

    pub fn zeros_like(&self) -> Vec<f64> {
        vec![0.0; self.data.len()]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn write_bundle(&self, bundle: &mut TensorBundle) {
        for s in &self.slots {
            bundle.insert(s.name.clone(), s.shape.clone(), self.data[s.range()].to_vec());
        }
    }

    /// Overwrites every slot from `bundle`, checking shapes.
    pub fn read_bundle(&mut self, bundle: &TensorBundle) -> Result<()> {
        for s in &self.slots {
            let (shape, data) = bundle.get(&s.name)?;
            if shape != s.shape.as_slice() {
                return Err(Error::Config(format!(
                    "parameter {:?} has shape {:?}, expected {:?}",
                    s.name, shape, s.shape
                )));
            }
            self.data[s.range()].copy_from_slice(data);
        }
        Ok(())
    }
}

/// SGD with classical momentum and global gradient-norm clipping.
#[derive(Clone, Debug)]
pub struct Sgd {
    pub learning_rate: f64,
    pub momentum: f64,
    pub clip_norm: f64,
    velocity: Vec<f64>,
}

pub const DEFAULT_MOMENTUM: f64 = 0.9;
pub const DEFAULT_CLIP_NORM: f64 = 5.0;

impl Sgd {
    pub fn new(n_params: usize, learning_rate: f64) -> Self {
        Self {
            learning_rate,
            momentum: DEFAULT_MOMENTUM,
            clip_norm: DEFAULT_CLIP_NORM,
            velocity: vec![0.0; n_params],
        }
    }

    /// Applies one update; returns the gradient norm before clipping.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) -> f64 {
        debug_assert_eq!(params.len(), grad.len());
        let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        let scale = if norm > self.clip_norm { self.clip_norm / norm } else { 1.0 };
        for ((p, v), g) in params.iter_mut().zip(&mut self.velocity).zip(grad) {
            *v = self.momentum * *v - self.learning_rate * scale * g;
            *p += *v;
        }
        norm
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `out = W[r×c] · x + b`.
pub fn affine(w: &[f64], b: &[f64], x: &[f64], out: &mut [f64]) {
    let c = x.len();
    for (r, o) in out.iter_mut().enumerate() {
        let row = &w[r * c..(r + 1) * c];
        *o = b[r] + row.iter().zip(x).map(|(a, v)| a * v).sum::<f64>();
    }
}

/// Backward of [`affine`]: accumulates `dW += dy xᵀ`, `db += dy` and
/// `dx += Wᵀ dy`.
pub fn affine_backward(w: &[f64], x: &[f64], dy: &[f64], dw: &mut [f64], db: &mut [f64], dx: Option<&mut [f64]>) {
    let c = x.len();
    for (r, &g) in dy.iter().enumerate() {
        db[r] += g;
        if g == 0.0 {
            continue;
        }
        for (d, &v) in dw[r * c..(r + 1) * c].iter_mut().zip(x) {
            *d += g * v;
        }
    }
    if let Some(dx) = dx {
        for (r, &g) in dy.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            for (d, &a) in dx.iter_mut().zip(&w[r * c..(r + 1) * c]) {
                *d += g * a;
            }
        }
    }
}

/// Glorot-style standard deviation for a `fan_in → fan_out` map.
pub fn glorot_std(fan_in: usize, fan_out: usize) -> f64 {
    (2.0 / (fan_in + fan_out) as f64).sqrt()
}
