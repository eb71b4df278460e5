//! Fixed sinusoidal features of absolute time.

use serde::{Deserialize, Serialize};

use crate::error::ConfigError;

/// Embedding `ψ(t) = [sin(ω₁t)…sin(ω_{d/2}t), cos(ω₁t)…cos(ω_{d/2}t)]`
/// with `ω_i = π / i`, so component `i` repeats every `2i` seconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TimeEmbeddingSpec {
    dim: usize,
}

impl Default for TimeEmbeddingSpec {
    fn default() -> Self {
        Self { dim: 32 }
    }
}

impl TimeEmbeddingSpec {
    pub fn new(dim: usize) -> Result<Self, ConfigError> {
        if dim < 2 || !dim.is_multiple_of(2) {
            return Err(ConfigError::invalid(
                "network.embedding_dim",
                format!("must be even and at least 2, got {dim}"),
            ));
        }
        Ok(Self { dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn frequency(&self, i: usize) -> f64 {
        debug_assert!(i >= 1 && i <= self.dim / 2);
        std::f64::consts::PI / i as f64
    }

    pub fn embed(&self, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.embed_into(t, &mut out);
        out
    }

    /// Writes `ψ(t)` into `out[..dim]`.
    pub fn embed_into(&self, t: f64, out: &mut [f64]) {
        let half = self.dim / 2;
        for i in 0..half {
            let (s, c) = (self.frequency(i + 1) * t).sin_cos();
            out[i] = s;
            out[half + i] = c;
        }
    }
}
