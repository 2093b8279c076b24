//! The ordered activation bank mixed by the preference encoder.
//!
//! Order is part of the model format: a checkpoint stores the names in
//! bank order and loading verifies them.

use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Sigmoid,
    Tanh,
    Relu,
    LeakyRelu,
    Elu,
    Softplus,
    Softsign,
    Sin,
    HardSigmoid,
    Swish,
}

const LEAKY_SLOPE: f64 = 0.01;
const ELU_ALPHA: f64 = 1.0;

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    // log(1 + e^x) without overflow
    if x > 0.0 {
        x + libm::log1p(libm::exp(-x))
    } else {
        libm::log1p(libm::exp(x))
    }
}

impl Activation {
    pub const ALL: [Activation; 11] = [
        Activation::Identity,
        Activation::Sigmoid,
        Activation::Tanh,
        Activation::Relu,
        Activation::LeakyRelu,
        Activation::Elu,
        Activation::Softplus,
        Activation::Softsign,
        Activation::Sin,
        Activation::HardSigmoid,
        Activation::Swish,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Sigmoid => "sigmoid",
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
            Activation::LeakyRelu => "leaky_relu",
            Activation::Elu => "elu",
            Activation::Softplus => "softplus",
            Activation::Softsign => "softsign",
            Activation::Sin => "sin",
            Activation::HardSigmoid => "hard_sigmoid",
            Activation::Swish => "swish",
        }
    }

    pub fn eval(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Sigmoid => sigmoid(x),
            Activation::Tanh => libm::tanh(x),
            Activation::Relu => x.max(0.0),
            Activation::LeakyRelu => {
                if x > 0.0 {
                    x
                } else {
                    LEAKY_SLOPE * x
                }
            }
            Activation::Elu => {
                if x > 0.0 {
                    x
                } else {
                    ELU_ALPHA * libm::expm1(x)
                }
            }
            Activation::Softplus => softplus(x),
            Activation::Softsign => x / (1.0 + x.abs()),
            Activation::Sin => libm::sin(x),
            Activation::HardSigmoid => (0.2 * x + 0.5).clamp(0.0, 1.0),
            Activation::Swish => x * sigmoid(x),
        }
    }

    /// Derivative given the input `x` and the already computed output `y`.
    /// Kinks take the left derivative, so relu and leaky relu give 0 and
    /// the leaky slope at exactly 0.
    pub fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu => {
                if x > 0.0 {
                    1.0
                } else if x < 0.0 {
                    LEAKY_SLOPE
                } else {
                    0.0
                }
            }
            Activation::Elu => {
                if x > 0.0 {
                    1.0
                } else {
                    y + ELU_ALPHA
                }
            }
            Activation::Softplus => sigmoid(x),
            Activation::Softsign => {
                let d = 1.0 + x.abs();
                1.0 / (d * d)
            }
            Activation::Sin => libm::cos(x),
            Activation::HardSigmoid => {
                if x > -2.5 && x < 2.5 {
                    0.2
                } else {
                    0.0
                }
            }
            Activation::Swish => {
                let s = sigmoid(x);
                s + x * s * (1.0 - s)
            }
        }
    }

    /// Points where the derivative is discontinuous.
    pub fn kinks(self) -> &'static [f64] {
        match self {
            Activation::Relu | Activation::LeakyRelu | Activation::Elu => &[0.0],
            Activation::HardSigmoid => &[-2.5, 2.5],
            _ => &[],
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Activation::ALL
            .iter()
            .copied()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Config(alloc::format!("unknown activation `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ActivationBank {
    functions: Vec<Activation>,
}

impl ActivationBank {
    pub fn new(functions: Vec<Activation>) -> Result<Self> {
        if functions.is_empty() {
            return Err(Error::Empty("activation bank"));
        }
        Ok(Self { functions })
    }

    /// The default eleven-function bank.
    pub fn standard() -> Self {
        Self {
            functions: Activation::ALL.to_vec(),
        }
    }

    /// The first `k` functions of the standard bank.
    pub fn truncated(k: usize) -> Result<Self> {
        if k == 0 || k > Activation::ALL.len() {
            return Err(Error::Config(alloc::format!(
                "bank size {k} outside 1..={}",
                Activation::ALL.len()
            )));
        }
        Ok(Self {
            functions: Activation::ALL[..k].to_vec(),
        })
    }

    pub fn len(&self) -> usize {
        self.functions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.functions.is_empty()
    }

    pub fn functions(&self) -> &[Activation] {
        &self.functions
    }

    /// Activation at a 1-based position.
    pub fn get(&self, index: usize) -> Result<Activation> {
        if index == 0 || index > self.functions.len() {
            return Err(Error::ActivationIndex {
                index,
                size: self.functions.len(),
            });
        }
        Ok(self.functions[index - 1])
    }

    /// Elementwise application of the activation at a 1-based position.
    pub fn apply(&self, index: usize, x: &[f64]) -> Result<Vec<f64>> {
        let a = self.get(index)?;
        Ok(x.iter().map(|&v| a.eval(v)).collect())
    }
}
