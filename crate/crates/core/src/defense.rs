//! Training-free bilinear defense: blur an image by down-sampling and
//! up-sampling it, then flag candidates whose similarity to the reference
//! collapses under the blur.

use crate::descriptor::{similarity, DescriptorError, DescriptorNetwork};
use crate::numerics::{bilinear_resize, Tensor};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_SCALE: f64 = 0.5;
pub const DEFAULT_THRESHOLD: f64 = 0.15;
/// Scales must be multiples of `1 / SCALE_DENOMINATOR`.
pub const SCALE_DENOMINATOR: u32 = 256;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DefenseError {
    #[error("scale {0} must lie in (0, 1] and be a multiple of 1/{SCALE_DENOMINATOR}")]
    InvalidScale(f64),
    #[error("threshold {0} must be positive")]
    InvalidThreshold(f64),
    #[error("candidate and reference dims differ: {0:?} vs {1:?}")]
    DimsMismatch((usize, usize, usize), (usize, usize, usize)),
    #[error(transparent)]
    Descriptor(#[from] DescriptorError),
}

/// Down-then-up bilinear transform at a fixed scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TransformSpec {
    /// Numerator over [`SCALE_DENOMINATOR`].
    scale_num: u32,
}

impl Default for TransformSpec {
    fn default() -> Self {
        Self::new(DEFAULT_SCALE).expect("default scale is representable")
    }
}

impl TransformSpec {
    pub fn new(scale: f64) -> Result<Self, DefenseError> {
        let num = scale * SCALE_DENOMINATOR as f64;
        let rounded = num.round();
        if !(scale > 0.0 && scale <= 1.0) || (num - rounded).abs() > 1e-9 {
            return Err(DefenseError::InvalidScale(scale));
        }
        Ok(Self {
            scale_num: rounded as u32,
        })
    }

    pub fn from_numerator(scale_num: u32) -> Result<Self, DefenseError> {
        if scale_num == 0 || scale_num > SCALE_DENOMINATOR {
            return Err(DefenseError::InvalidScale(
                scale_num as f64 / SCALE_DENOMINATOR as f64,
            ));
        }
        Ok(Self { scale_num })
    }

    pub fn scale(&self) -> f64 {
        self.scale_num as f64 / SCALE_DENOMINATOR as f64
    }

    pub fn numerator(&self) -> u32 {
        self.scale_num
    }

    pub fn method(&self) -> &'static str {
        "bilinear"
    }

    /// Size of the intermediate down-sampled grid for an input extent.
    pub fn reduced_extent(&self, extent: usize) -> usize {
        let n = extent as u64 * self.scale_num as u64;
        let d = SCALE_DENOMINATOR as u64;
        // Round half up, in integers so the circuit sees the same grid.
        (((n + d / 2) / d) as usize).max(1)
    }
}

pub fn defend_transform(image: &Tensor, spec: &TransformSpec) -> Tensor {
    let (w, h, _) = image.dims();
    let down = bilinear_resize(image, spec.reduced_extent(w), spec.reduced_extent(h));
    bilinear_resize(&down, w, h)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DefenseVerdict {
    pub sim_before: f64,
    pub sim_after: f64,
    pub drop: f64,
    pub flagged: bool,
    pub threshold: f64,
    pub scale: f64,
}

impl DefenseVerdict {
    pub fn new(sim_before: f64, sim_after: f64, threshold: f64, scale: f64) -> Self {
        let drop = sim_before - sim_after;
        Self {
            sim_before,
            sim_after,
            drop,
            flagged: drop > threshold,
            threshold,
            scale,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("verdict is plain data")
    }
}

/// Similarity of `candidate` to `reference` before and after both pass
/// through the transform.
pub fn evaluate_defense(
    net: &DescriptorNetwork,
    candidate: &Tensor,
    reference: &Tensor,
    spec: &TransformSpec,
    threshold: f64,
    s: usize,
) -> Result<DefenseVerdict, DefenseError> {
    if !(threshold > 0.0) {
        return Err(DefenseError::InvalidThreshold(threshold));
    }
    if !candidate.same_dims(reference) {
        return Err(DefenseError::DimsMismatch(candidate.dims(), reference.dims()));
    }
    let before = similarity(
        &net.extract_descriptor(candidate, s)?,
        &net.extract_descriptor(reference, s)?,
    )?;
    let after = similarity(
        &net.extract_descriptor(&defend_transform(candidate, spec), s)?,
        &net.extract_descriptor(&defend_transform(reference, spec), s)?,
    )?;
    Ok(DefenseVerdict::new(before, after, threshold, spec.scale()))
}
