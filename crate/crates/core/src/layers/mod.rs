//! Parameterized layers evaluated on a [`Tape`] through a [`Forward`] context.
//!
//! Parameters and running buffers live in a flat [`ParamStore`] keyed by
//! dotted names; layer structs only carry configuration and name prefixes.

mod freq;

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{BatchStats, BnMode, Tape, Var};
use crate::error::{shape_err, Error, Result};
use crate::tensor::{Precision, Tensor};

pub use freq::{
    conv_macs, export_filter_map, hfe_conv_cost, write_filter_map, GffLayer, HfeCost, HfeInput, HfeLayer,
};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    /// Trainable tensors.
    pub params: BTreeMap<String, Tensor>,
    /// Non-trainable state such as batch-norm running statistics.
    pub buffers: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn param(&self, name: &str) -> Result<&Tensor> {
        self.params
            .get(name)
            .ok_or_else(|| Error::InvalidArgument(format!("missing parameter `{name}`")))
    }

    pub fn buffer(&self, name: &str) -> Result<&Tensor> {
        self.buffers
            .get(name)
            .ok_or_else(|| Error::InvalidArgument(format!("missing buffer `{name}`")))
    }

    pub fn num_params(&self) -> usize {
        self.params.values().map(Tensor::numel).sum()
    }

    /// Folds recorded batch statistics into the running buffers.
    pub fn apply_stats(&mut self, stats: &[(String, BatchStats)]) -> Result<()> {
        for (prefix, s) in stats {
            let mut mean = self.buffer(&format!("{prefix}.running_mean"))?.clone();
            let mut var = self.buffer(&format!("{prefix}.running_var"))?.clone();
            s.update_running(mean.data_mut(), var.data_mut());
            self.buffers.insert(format!("{prefix}.running_mean"), mean);
            self.buffers.insert(format!("{prefix}.running_var"), var);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics in batch norm, recorded for the running buffers.
    Train,
    /// Running statistics in batch norm.
    Eval,
}

/// One forward pass: a tape plus the parameter leaves it has touched.
pub struct Forward<'s> {
    pub tape: Tape,
    store: &'s ParamStore,
    vars: BTreeMap<String, Var>,
    mode: Mode,
    track_grads: bool,
    stats: Vec<(String, BatchStats)>,
}

impl<'s> Forward<'s> {
    /// `track_grads` registers parameters as differentiable leaves.
    pub fn new(store: &'s ParamStore, mode: Mode, track_grads: bool) -> Self {
        Self::with_precision(store, mode, track_grads, Precision::Double)
    }

    pub fn with_precision(store: &'s ParamStore, mode: Mode, track_grads: bool, precision: Precision) -> Self {
        Forward {
            tape: Tape::with_precision(precision),
            store,
            vars: BTreeMap::new(),
            mode,
            track_grads,
            stats: Vec::new(),
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn store(&self) -> &ParamStore {
        self.store
    }

    /// The tape variable of a named parameter, created on first use.
    pub fn param(&mut self, name: &str) -> Result<Var> {
        if let Some(&v) = self.vars.get(name) {
            return Ok(v);
        }
        let value = self.store.param(name)?.clone();
        let v = if self.track_grads {
            self.tape.leaf(value)
        } else {
            self.tape.constant(value)
        };
        self.vars.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn input(&mut self, value: Tensor) -> Var {
        self.tape.constant(value)
    }

    /// Batch norm with parameters `{prefix}.gamma`, `{prefix}.beta` and
    /// buffers `{prefix}.running_mean`, `{prefix}.running_var`.
    pub fn batch_norm(&mut self, prefix: &str, x: Var) -> Result<Var> {
        let gamma = self.param(&format!("{prefix}.gamma"))?;
        let beta = self.param(&format!("{prefix}.beta"))?;
        match self.mode {
            Mode::Train => {
                let (y, stats) = self.tape.batch_norm(x, gamma, beta, BnMode::Train)?;
                if let Some(s) = stats {
                    self.stats.push((prefix.to_string(), s));
                }
                Ok(y)
            }
            Mode::Eval => {
                let mean = self.store.buffer(&format!("{prefix}.running_mean"))?;
                let var = self.store.buffer(&format!("{prefix}.running_var"))?;
                let mode = BnMode::Eval {
                    mean: mean.data(),
                    var: var.data(),
                };
                Ok(self.tape.batch_norm(x, gamma, beta, mode)?.0)
            }
        }
    }

    /// Gradients of `loss` keyed by parameter name.
    pub fn gradients(&self, loss: Var) -> Result<BTreeMap<String, Tensor>> {
        let mut grads = self.tape.backward(loss)?;
        Ok(self
            .vars
            .iter()
            .filter_map(|(name, &v)| grads.take(v).map(|g| (name.clone(), g)))
            .collect())
    }

    /// Batch statistics recorded in train mode, in call order.
    pub fn stats(&self) -> &[(String, BatchStats)] {
        &self.stats
    }

    pub fn into_stats(self) -> Vec<(String, BatchStats)> {
        self.stats
    }
}

/// 2D convolution with optional bias; parameters `{name}.weight`, `{name}.bias`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv {
    pub name: String,
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub bias: bool,
}

impl Conv {
    pub fn new(name: impl Into<String>, c_in: usize, c_out: usize, kernel: usize, stride: usize, bias: bool) -> Self {
        Conv {
            name: name.into(),
            c_in,
            c_out,
            kernel,
            stride,
            padding: kernel / 2,
            bias,
        }
    }

    /// He-normal weights, zero bias.
    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) {
        let fan_in = (self.c_in * self.kernel * self.kernel) as f64;
        let shape = [self.c_out, self.c_in, self.kernel, self.kernel];
        store
            .params
            .insert(format!("{}.weight", self.name), Tensor::randn(&shape, (2.0 / fan_in).sqrt(), rng));
        if self.bias {
            store.params.insert(format!("{}.bias", self.name), Tensor::zeros(&[self.c_out]));
        }
    }

    /// Zero weights and bias.
    pub fn init_zero(&self, store: &mut ParamStore) {
        let shape = [self.c_out, self.c_in, self.kernel, self.kernel];
        store.params.insert(format!("{}.weight", self.name), Tensor::zeros(&shape));
        if self.bias {
            store.params.insert(format!("{}.bias", self.name), Tensor::zeros(&[self.c_out]));
        }
    }

    pub fn forward(&self, f: &mut Forward, x: Var) -> Result<Var> {
        let w = f.param(&format!("{}.weight", self.name))?;
        let b = if self.bias {
            Some(f.param(&format!("{}.bias", self.name))?)
        } else {
            None
        };
        f.tape.conv2d(x, w, b, self.stride, self.padding)
    }

    /// Multiply-accumulates for one image at input size `h × w`.
    pub fn macs(&self, h: usize, w: usize) -> u64 {
        let out = |n: usize| (n + 2 * self.padding - self.kernel) / self.stride + 1;
        conv_macs(self.c_in, self.c_out, self.kernel, out(h), out(w))
    }
}

/// Affine batch norm: `gamma = 1`, `beta = 0`, running mean 0 and variance 1.
pub fn init_batch_norm(store: &mut ParamStore, prefix: &str, channels: usize) {
    store.params.insert(format!("{prefix}.gamma"), Tensor::ones(&[channels]));
    store.params.insert(format!("{prefix}.beta"), Tensor::zeros(&[channels]));
    store.buffers.insert(format!("{prefix}.running_mean"), Tensor::zeros(&[channels]));
    store.buffers.insert(format!("{prefix}.running_var"), Tensor::ones(&[channels]));
}

/// Checks `x` is `[B, c, h, w]` and returns `B`.
pub(crate) fn expect_feature_map(tape: &Tape, x: Var, c: usize, h: usize, w: usize, what: &str) -> Result<usize> {
    match *tape.shape(x) {
        [b, cc, hh, ww] if cc == c && hh == h && ww == w => Ok(b),
        ref s => Err(shape_err!("{what}: expected [B,{c},{h},{w}], got {:?}", s)),
    }
}
