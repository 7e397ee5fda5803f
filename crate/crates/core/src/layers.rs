//! Parameterized building blocks shared by the model components.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{RngStream, Tape, Var};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Affine map `x · W + b` with `W` of shape `in × out`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub input: usize,
    pub output: usize,
}

impl Linear {
    /// Weight from `N(0, 1/input)`, zero bias.
    pub fn register(store: &mut ParamStore, rng: &RngStream, name: &str, input: usize, output: usize) -> Self {
        let std = 1.0 / (input as f64).sqrt();
        let weight = store.add_normal(rng, &format!("{name}.weight"), &[input, output], std);
        let bias = store.add_const(&format!("{name}.bias"), &[output], 0.0);
        Linear {
            weight,
            bias,
            input,
            output,
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let width = tape.shape(x).last().copied();
        if width != Some(self.input) {
            return Err(Error::shape(format!(
                "{} expects width {}, got {:?}",
                store.get(self.weight).name,
                self.input,
                tape.shape(x)
            )));
        }
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        tape.linear(x, w, b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn register(store: &mut ParamStore, name: &str, width: usize) -> Self {
        LayerNorm {
            gamma: store.add_const(&format!("{name}.gamma"), &[width], 1.0),
            beta: store.add_const(&format!("{name}.beta"), &[width], 0.0),
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let g = tape.param(store, self.gamma);
        let b = tape.param(store, self.beta);
        tape.layer_norm(x, g, b, LAYER_NORM_EPS)
    }
}
