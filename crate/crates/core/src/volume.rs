//! Three-phase image stacks.
//!
//! A [`JointVolume`] stores an `L×W×3` array in row-major order with the
//! phase index varying fastest, so flat index `(i·W + j)·3 + k` addresses
//! row `i`, column `j`, phase `k`. This is the same layout the tensor archive
//! writes for shape `[L, W, 3]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PHASES: usize = 3;

/// Contrast phase of a multiphase CT study.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Phase {
    I,
    II,
    III,
}

impl Phase {
    pub const ALL: [Phase; PHASES] = [Phase::I, Phase::II, Phase::III];

    pub fn index(self) -> usize {
        match self {
            Phase::I => 0,
            Phase::II => 1,
            Phase::III => 2,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Phase::I => "I",
            Phase::II => "II",
            Phase::III => "III",
        }
    }
}

/// What a volume holds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Routine,
    Lowdose,
    Reconstruction,
}

/// A single-phase `L×W` image in row-major order.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Data(format!(
                "image {rows}x{cols} needs {} pixels, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }
}

/// Routine-dose targets, low-dose conditions or reconstructions for the three
/// phases of one slice.
#[derive(Clone, Debug, PartialEq)]
pub struct JointVolume {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
    role: Role,
}

impl JointVolume {
    pub fn zeros(rows: usize, cols: usize, role: Role) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols * PHASES],
            role,
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64, role: Role) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols * PHASES],
            role,
        }
    }

    /// Wraps an interleaved `L×W×3` buffer.
    pub fn from_interleaved(rows: usize, cols: usize, data: Vec<f64>, role: Role) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Data(format!("empty volume shape {rows}x{cols}")));
        }
        if data.len() != rows * cols * PHASES {
            return Err(Error::Data(format!(
                "volume {rows}x{cols}x3 needs {} values, got {}",
                rows * cols * PHASES,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!("non-finite value at flat index {i}")));
        }
        Ok(Self {
            rows,
            cols,
            data,
            role,
        })
    }

    /// Stacks three single-phase images in phase order.
    pub fn stack(phases: [&Image; PHASES], role: Role) -> Result<Self> {
        let (rows, cols) = (phases[0].rows, phases[0].cols);
        for (k, p) in phases.iter().enumerate() {
            if p.rows != rows || p.cols != cols {
                return Err(Error::Data(format!(
                    "phase {} has shape {}x{}, expected {rows}x{cols}",
                    Phase::ALL[k].label(),
                    p.rows,
                    p.cols
                )));
            }
        }
        let mut data = Vec::with_capacity(rows * cols * PHASES);
        for idx in 0..rows * cols {
            for p in &phases {
                data.push(p.data[idx]);
            }
        }
        Self::from_interleaved(rows, cols, data, role)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.rows, self.cols, PHASES]
    }

    /// Flattened dimension `N = L·W·3`.
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn with_role(mut self, role: Role) -> Self {
        self.role = role;
        self
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, i: usize, j: usize, phase: Phase) -> f64 {
        self.data[(i * self.cols + j) * PHASES + phase.index()]
    }

    pub fn set(&mut self, i: usize, j: usize, phase: Phase, value: f64) {
        self.data[(i * self.cols + j) * PHASES + phase.index()] = value;
    }

    pub fn phase(&self, phase: Phase) -> Image {
        let k = phase.index();
        Image {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().skip(k).step_by(PHASES).copied().collect(),
        }
    }

    pub fn split(&self) -> [Image; PHASES] {
        Phase::ALL.map(|p| self.phase(p))
    }

    pub fn same_shape(&self, other: &JointVolume) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }

    pub(crate) fn check_shape(&self, other: &JointVolume, module: fn(String) -> Error) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(module(format!(
                "shape mismatch: {:?} vs {:?}",
                self.shape(),
                other.shape()
            )))
        }
    }

    /// Copy with new contents and the same shape.
    pub fn with_data(&self, data: Vec<f64>, role: Role) -> Result<Self> {
        Self::from_interleaved(self.rows, self.cols, data, role)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Builds the joint condition `[c¹, c², c³]` from three low-dose images.
pub fn build_joint_condition(c1: &Image, c2: &Image, c3: &Image) -> Result<JointVolume> {
    JointVolume::stack([c1, c2, c3], Role::Lowdose)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(rows: usize, cols: usize, offset: f64) -> Image {
        let data = (0..rows * cols).map(|i| i as f64 + offset).collect();
        Image::new(rows, cols, data).unwrap()
    }

    #[test]
    fn stack_then_split_round_trips() {
        let (a, b, c) = (ramp(4, 5, 0.0), ramp(4, 5, 100.0), ramp(4, 5, -3.5));
        let v = build_joint_condition(&a, &b, &c).unwrap();
        assert_eq!(v.shape(), [4, 5, 3]);
        let [pa, pb, pc] = v.split();
        assert_eq!((pa, pb, pc), (a, b, c));
    }

    #[test]
    fn channel_zero_is_first_phase() {
        let (a, b, c) = (ramp(3, 3, 1.0), ramp(3, 3, 2.0), ramp(3, 3, 3.0));
        let v = build_joint_condition(&a, &b, &c).unwrap();
        assert_eq!(v.phase(Phase::I), a);
        assert_eq!(v.get(1, 2, Phase::III), c.get(1, 2));
    }

    #[test]
    fn mismatched_phases_rejected() {
        let err = build_joint_condition(&ramp(3, 3, 0.0), &ramp(3, 4, 0.0), &ramp(3, 3, 0.0));
        assert!(err.is_err());
    }

    #[test]
    fn non_finite_rejected() {
        let err = JointVolume::from_interleaved(1, 1, vec![0.0, f64::NAN, 1.0], Role::Routine);
        assert!(err.is_err());
    }
}
