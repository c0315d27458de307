//! Run-length encoding of 8-bit quantized probability maps.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::grid::{Grid, Seed};
use crate::inference::{threshold_component, Component};

/// `round(p * 255)` after clamping to [0, 1].
pub fn quantize(p: f32) -> u8 {
    (p.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn dequantize(q: u8) -> f32 {
    q as f32 / 255.0
}

/// Row-major runs stored flat as `value, length, value, length, ...`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskRle {
    pub width: usize,
    pub height: usize,
    pub runs: Vec<u32>,
}

impl MaskRle {
    pub fn encode(values: &Grid<u8>) -> Self {
        let mut runs = Vec::new();
        let mut iter = values.data().iter().copied();
        if let Some(first) = iter.next() {
            let (mut value, mut len) = (first, 1u32);
            for v in iter {
                if v == value {
                    len += 1;
                } else {
                    runs.extend([value as u32, len]);
                    (value, len) = (v, 1);
                }
            }
            runs.extend([value as u32, len]);
        }
        Self {
            width: values.width(),
            height: values.height(),
            runs,
        }
    }

    pub fn from_probabilities(p: &Grid<f32>) -> Self {
        Self::encode(&p.map(quantize))
    }

    pub fn decode(&self) -> Result<Grid<u8>> {
        if self.runs.len() % 2 != 0 {
            return Err(invalid("run list must alternate value and length"));
        }
        let total = self.width * self.height;
        let mut data = Vec::with_capacity(total);
        for pair in self.runs.chunks_exact(2) {
            let (value, len) = (pair[0], pair[1] as usize);
            if value > 255 {
                return Err(invalid(format!("run value {value} exceeds 255")));
            }
            if len == 0 {
                return Err(invalid("zero-length run"));
            }
            if data.len() + len > total {
                return Err(invalid(format!("runs exceed {}x{} pixels", self.height, self.width)));
            }
            data.extend(std::iter::repeat_n(value as u8, len));
        }
        if data.len() != total {
            return Err(invalid(format!(
                "runs cover {} of {} pixels",
                data.len(),
                total
            )));
        }
        Grid::new(self.height, self.width, data)
    }
}

/// Thresholds the quantized map with the same component rule the model
/// output uses; a client holding the encoded map reproduces this exactly.
pub fn quantized_component(values: &Grid<u8>, seed: Seed, threshold: f32) -> Result<Component> {
    threshold_component(&values.map(dequantize), seed, threshold)
}
