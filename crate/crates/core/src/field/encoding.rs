use serde::{Deserialize, Serialize};

use super::Scalar;
use crate::error::{Error, Result};

/// Axis-aligned sinusoidal positional encoding.
///
/// Output layout: the raw coordinates `[x, y, z]`, then for each axis in
/// turn `num_frequencies` pairs `[sin(f_k x_a), cos(f_k x_a)]` with
/// `f_k = base_scale * 2^(k / steps_per_octave)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Encoding {
    pub num_frequencies: usize,
    /// Lowest angular frequency, rad/m.
    pub base_scale: f64,
    /// Frequencies per doubling.
    pub steps_per_octave: usize,
}

impl Default for Encoding {
    /// 49 frequencies spanning six octaves: a 297-dimensional embedding.
    fn default() -> Self {
        Self {
            num_frequencies: 49,
            base_scale: 0.5,
            steps_per_octave: 8,
        }
    }
}

impl Encoding {
    pub fn output_dim(&self) -> usize {
        3 + 6 * self.num_frequencies
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.base_scale.is_finite() && self.base_scale > 0.0) || self.steps_per_octave == 0 {
            return Err(Error::invalid("encoding needs base_scale > 0 and steps_per_octave >= 1"));
        }
        Ok(())
    }

    pub fn frequencies(&self) -> Vec<f64> {
        (0..self.num_frequencies)
            .map(|k| self.base_scale * (k as f64 / self.steps_per_octave as f64).exp2())
            .collect()
    }

    /// Offset of the `[sin, cos]` block for axis `axis` and frequency `k`.
    pub fn feature_index(&self, axis: usize, k: usize) -> usize {
        3 + axis * 2 * self.num_frequencies + 2 * k
    }

    /// Writes `gamma(xi)` into `out`, and if `tangents` is given, the three
    /// columns of the Jacobian `d gamma / d xi` into `tangents[axis]`.
    pub(crate) fn encode_into<T: Scalar>(
        &self,
        freqs: &[T],
        xi: [T; 3],
        out: &mut [T],
        mut tangents: Option<[&mut [T]; 3]>,
    ) {
        debug_assert_eq!(out.len(), self.output_dim());
        out[..3].copy_from_slice(&xi);
        if let Some(t) = tangents.as_mut() {
            for (axis, col) in t.iter_mut().enumerate() {
                col.fill(T::zero());
                col[axis] = T::one();
            }
        }
        for axis in 0..3 {
            for (k, &f) in freqs.iter().enumerate() {
                let i = self.feature_index(axis, k);
                let (s, c) = (f * xi[axis]).sin_cos();
                out[i] = s;
                out[i + 1] = c;
                if let Some(t) = tangents.as_mut() {
                    t[axis][i] = f * c;
                    t[axis][i + 1] = -f * s;
                }
            }
        }
    }

    /// `gamma(xi)` in double precision.
    pub fn encode(&self, xi: [f64; 3]) -> Vec<f64> {
        let mut out = vec![0.0; self.output_dim()];
        self.encode_into(&self.frequencies(), xi, &mut out, None);
        out
    }

    /// Analytic Jacobian, one row per output feature, one column per axis.
    pub fn jacobian(&self, xi: [f64; 3]) -> Vec<[f64; 3]> {
        let dim = self.output_dim();
        let mut out = vec![0.0; dim];
        let mut cols = [vec![0.0; dim], vec![0.0; dim], vec![0.0; dim]];
        {
            let [a, b, c] = &mut cols;
            self.encode_into(&self.frequencies(), xi, &mut out, Some([a, b, c]));
        }
        (0..dim)
            .map(|i| [cols[0][i], cols[1][i], cols[2][i]])
            .collect()
    }
}
