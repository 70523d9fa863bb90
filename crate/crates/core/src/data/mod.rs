//! Synthetic cine segmentation sequences.
//!
//! Each subject is a short sequence of categorical class maps with four
//! regions: background, an inner pool, a ring of wall tissue around it and a
//! side pool. The inner pool shrinks over the sequence by a per-subject
//! contraction fraction, and the binary label marks subjects whose
//! contraction reaches a threshold.

mod generate;
mod io;
mod perturb;

pub use generate::{generate_dataset, GenConfig};
pub use io::{read_dataset, read_dataset_from, write_dataset, write_dataset_to};
pub use perturb::{boundary_mask, perturb_input, BoundaryJitter, IdentitySampler, InputSampler};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const BACKGROUND: u8 = 0;
pub const INNER_POOL: u8 = 1;
pub const WALL: u8 = 2;
pub const SIDE_POOL: u8 = 3;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid generator configuration: {0}")]
    Config(String),
    #[error("invalid sequence {id}: {reason}")]
    InvalidSequence { id: String, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("malformed dataset header: {0}")]
    MalformedHeader(String),
    #[error("unsupported dataset format version {0}")]
    UnsupportedVersion(u32),
    #[error("record {index}: malformed record: {reason}")]
    MalformedRecord { index: usize, reason: String },
    #[error("record {index}: {what} is {found}, header declares {expected}")]
    DimensionMismatch {
        index: usize,
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("record {index}: truncated payload, expected {expected} bytes, found {found}")]
    TruncatedPayload {
        index: usize,
        expected: usize,
        found: usize,
    },
    #[error("record {index}: pixel value {value} not below n_classes = {n_classes}")]
    InvalidClass {
        index: usize,
        value: u8,
        n_classes: usize,
    },
    #[error("header declares {expected} records, file has {found}")]
    RecordCount { expected: usize, found: usize },
}

/// Frame geometry shared by every subject in a dataset.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameDims {
    pub n_frames: usize,
    pub height: usize,
    pub width: usize,
    pub n_classes: usize,
}

impl FrameDims {
    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    /// Length of one flattened one-hot frame.
    pub fn frame_len(&self) -> usize {
        self.pixels() * self.n_classes
    }
}

/// Generation parameters recorded alongside each subject.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubjectMeta {
    /// Fraction by which the inner pool area shrinks from first to last frame.
    pub contraction: f64,
    /// Per-pixel probability of random class noise.
    pub noise: f64,
}

/// One subject: `n_frames` class maps of `height × width` plus a label.
#[derive(Clone, Debug, PartialEq)]
pub struct SegSequence {
    pub id: String,
    /// `true` for a responder.
    pub label: bool,
    pub meta: SubjectMeta,
    n_frames: usize,
    height: usize,
    width: usize,
    pixels: Vec<u8>,
}

impl SegSequence {
    /// `pixels` holds the frames back to back, each row-major.
    pub fn new(
        id: impl Into<String>,
        label: bool,
        meta: SubjectMeta,
        n_frames: usize,
        height: usize,
        width: usize,
        pixels: Vec<u8>,
    ) -> Result<Self, DataError> {
        let id = id.into();
        if n_frames == 0 || height == 0 || width == 0 {
            return Err(DataError::InvalidSequence {
                id,
                reason: "empty frame geometry".into(),
            });
        }
        if pixels.len() != n_frames * height * width {
            return Err(DataError::InvalidSequence {
                reason: format!(
                    "{} pixels for {n_frames} frames of {height}x{width}",
                    pixels.len()
                ),
                id,
            });
        }
        Ok(Self {
            id,
            label,
            meta,
            n_frames,
            height,
            width,
            pixels,
        })
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn frame(&self, t: usize) -> &[u8] {
        let n = self.height * self.width;
        &self.pixels[t * n..(t + 1) * n]
    }

    pub(crate) fn frame_mut(&mut self, t: usize) -> &mut [u8] {
        let n = self.height * self.width;
        &mut self.pixels[t * n..(t + 1) * n]
    }

    pub fn frames(&self) -> impl Iterator<Item = &[u8]> {
        self.pixels.chunks(self.height * self.width)
    }

    /// Checks geometry and class range against `dims`.
    pub fn validate(&self, dims: &FrameDims) -> Result<(), DataError> {
        let fail = |reason: String| DataError::InvalidSequence {
            id: self.id.clone(),
            reason,
        };
        if self.n_frames != dims.n_frames {
            return Err(fail(format!(
                "{} frames, expected {}",
                self.n_frames, dims.n_frames
            )));
        }
        if (self.height, self.width) != (dims.height, dims.width) {
            return Err(fail(format!(
                "frames are {}x{}, expected {}x{}",
                self.height, self.width, dims.height, dims.width
            )));
        }
        if let Some(&v) = self.pixels.iter().find(|&&v| v as usize >= dims.n_classes) {
            return Err(fail(format!(
                "pixel class {v} not below {}",
                dims.n_classes
            )));
        }
        Ok(())
    }

    /// Appends the one-hot encoding (`frames × pixels × classes`, row-major)
    /// to `out`.
    pub fn write_one_hot(&self, n_classes: usize, out: &mut Vec<f64>) {
        let start = out.len();
        out.resize(start + self.pixels.len() * n_classes, 0.0);
        for (i, &v) in self.pixels.iter().enumerate() {
            out[start + i * n_classes + v as usize] = 1.0;
        }
    }

    /// Inner-pool pixel count of every frame.
    pub fn pool_areas(&self) -> Vec<usize> {
        self.frames()
            .map(|f| f.iter().filter(|&&v| v == INNER_POOL).count())
            .collect()
    }
}

/// A set of subjects sharing one frame geometry.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub dims: FrameDims,
    /// Seed the dataset was generated from (0 when unknown).
    pub seed: u64,
    pub subjects: Vec<SegSequence>,
}

impl Dataset {
    pub fn new(dims: FrameDims, seed: u64, subjects: Vec<SegSequence>) -> Result<Self, DataError> {
        for s in &subjects {
            s.validate(&dims)?;
        }
        Ok(Self {
            dims,
            seed,
            subjects,
        })
    }

    pub fn len(&self) -> usize {
        self.subjects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subjects.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.subjects.iter().filter(|s| s.label).count()
    }

    /// Subjects at the given indices, in order.
    pub fn select(&self, indices: &[usize]) -> Vec<&SegSequence> {
        indices.iter().map(|&i| &self.subjects[i]).collect()
    }
}
