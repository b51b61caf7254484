//! Reference activation functions.

use std::fmt;
use std::str::FromStr;

use libm::erfc;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::stats::SampleMatrix;

pub const DEFAULT_LEAKY_SLOPE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ActivationKind {
    Sigmoid,
    Relu,
    Gelu,
    Relu6,
    LeakyRelu(f64),
    Tanh,
    Hardtanh,
    Silu,
    Hardswish,
}

impl ActivationKind {
    /// Every kind, leaky ReLU at its default slope.
    pub const ALL: [ActivationKind; 9] = [
        ActivationKind::Sigmoid,
        ActivationKind::Relu,
        ActivationKind::Gelu,
        ActivationKind::Relu6,
        ActivationKind::LeakyRelu(DEFAULT_LEAKY_SLOPE),
        ActivationKind::Tanh,
        ActivationKind::Hardtanh,
        ActivationKind::Silu,
        ActivationKind::Hardswish,
    ];

    pub fn eval(self, x: f64) -> f64 {
        match self {
            ActivationKind::Sigmoid => sigmoid(x),
            ActivationKind::Relu => x.max(0.0),
            ActivationKind::Gelu => x * normal_cdf(x),
            ActivationKind::Relu6 => x.clamp(0.0, 6.0),
            ActivationKind::LeakyRelu(slope) => {
                if x < 0.0 {
                    slope * x
                } else {
                    x
                }
            }
            ActivationKind::Tanh => x.tanh(),
            ActivationKind::Hardtanh => x.clamp(-1.0, 1.0),
            ActivationKind::Silu => x * sigmoid(x),
            ActivationKind::Hardswish => x * (x + 3.0).clamp(0.0, 6.0) / 6.0,
        }
    }

    /// Elementwise application.
    pub fn apply(self, x: &SampleMatrix) -> Result<SampleMatrix> {
        x.map(|v| self.eval(v))
    }

    /// Odd functions satisfy `f(−x) = −f(x)`.
    pub fn is_odd(self) -> bool {
        matches!(self, ActivationKind::Tanh | ActivationKind::Hardtanh)
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Standard normal CDF via the complementary error function.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

impl fmt::Display for ActivationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ActivationKind::Sigmoid => f.write_str("sigmoid"),
            ActivationKind::Relu => f.write_str("relu"),
            ActivationKind::Gelu => f.write_str("gelu"),
            ActivationKind::Relu6 => f.write_str("relu6"),
            ActivationKind::LeakyRelu(s) if *s == DEFAULT_LEAKY_SLOPE => f.write_str("leaky_relu"),
            ActivationKind::LeakyRelu(s) => write!(f, "leaky_relu:{s}"),
            ActivationKind::Tanh => f.write_str("tanh"),
            ActivationKind::Hardtanh => f.write_str("hardtanh"),
            ActivationKind::Silu => f.write_str("silu"),
            ActivationKind::Hardswish => f.write_str("hardswish"),
        }
    }
}

impl FromStr for ActivationKind {
    type Err = Error;

    /// Lowercase names; `leaky_relu:<slope>` overrides the default slope.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidInput(format!("unknown activation `{s}`"));
        Ok(match s {
            "sigmoid" => ActivationKind::Sigmoid,
            "relu" => ActivationKind::Relu,
            "gelu" => ActivationKind::Gelu,
            "relu6" => ActivationKind::Relu6,
            "leaky_relu" => ActivationKind::LeakyRelu(DEFAULT_LEAKY_SLOPE),
            "tanh" => ActivationKind::Tanh,
            "hardtanh" => ActivationKind::Hardtanh,
            "silu" => ActivationKind::Silu,
            "hardswish" => ActivationKind::Hardswish,
            other => match other.strip_prefix("leaky_relu:") {
                Some(slope) => {
                    let v: f64 = slope.parse().map_err(|_| bad())?;
                    if !v.is_finite() {
                        return Err(bad());
                    }
                    ActivationKind::LeakyRelu(v)
                }
                None => return Err(bad()),
            },
        })
    }
}

impl Serialize for ActivationKind {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ActivationKind {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
