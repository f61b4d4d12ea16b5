use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// What produced a volume.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Modality {
    Fpet,
    Lpet,
    Generated,
    Refined,
}

impl Modality {
    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Fpet => "FPET",
            Modality::Lpet => "LPET",
            Modality::Generated => "GENERATED",
            Modality::Refined => "REFINED",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "FPET" => Modality::Fpet,
            "LPET" => Modality::Lpet,
            "GENERATED" => Modality::Generated,
            "REFINED" => Modality::Refined,
            _ => return None,
        })
    }
}

impl std::fmt::Display for Modality {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A non-negative 3D uptake field stored in (D, H, W) row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume3D {
    dims: [usize; 3],
    data: Vec<f32>,
    pub voxel_size_mm: [f64; 3],
    pub subject_id: String,
    pub modality: Modality,
}

impl Volume3D {
    pub fn new(
        dims: [usize; 3],
        data: Vec<f32>,
        subject_id: impl Into<String>,
        modality: Modality,
    ) -> Result<Self> {
        let vol = Self {
            dims,
            data,
            voxel_size_mm: [1.0; 3],
            subject_id: subject_id.into(),
            modality,
        };
        vol.validate()?;
        Ok(vol)
    }

    pub fn zeros(dims: [usize; 3], subject_id: impl Into<String>, modality: Modality) -> Result<Self> {
        Self::new(dims, vec![0.0; dims.iter().product()], subject_id, modality)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidVolume(format!("dims {:?} must all be >= 1", self.dims)));
        }
        let n: usize = self.dims.iter().product();
        if n != self.data.len() {
            return Err(Error::InvalidVolume(format!(
                "dims {:?} imply {} voxels but data has {}",
                self.dims,
                n,
                self.data.len()
            )));
        }
        if let Some(i) = self.data.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidVolume(format!(
                "voxel {} has value {} (must be finite and >= 0)",
                i, self.data[i]
            )));
        }
        Ok(())
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn depth(&self) -> usize {
        self.dims[0]
    }

    pub fn slice_len(&self) -> usize {
        self.dims[1] * self.dims[2]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn slice(&self, t: usize) -> &[f32] {
        let n = self.slice_len();
        &self.data[t * n..(t + 1) * n]
    }

    /// Same geometry and subject, new voxel values.
    pub fn with_data(&self, data: Vec<f32>, modality: Modality) -> Result<Self> {
        let mut vol = Self::new(self.dims, data, self.subject_id.clone(), modality)?;
        vol.voxel_size_mm = self.voxel_size_mm;
        Ok(vol)
    }

    /// Stack equally sized slices into a volume.
    pub fn from_slices(
        slices: &[Vec<f32>],
        hw: [usize; 2],
        subject_id: impl Into<String>,
        modality: Modality,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(slices.len() * hw[0] * hw[1]);
        for (t, s) in slices.iter().enumerate() {
            if s.len() != hw[0] * hw[1] {
                return Err(Error::Shape(format!(
                    "slice {t} has {} values, expected {}",
                    s.len(),
                    hw[0] * hw[1]
                )));
            }
            data.extend_from_slice(s);
        }
        Self::new([slices.len(), hw[0], hw[1]], data, subject_id, modality)
    }
}

/// Value at quantile `q` in [0, 1] (nearest rank on the sorted values).
pub fn quantile(values: &[f32], q: f64) -> Option<f32> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    let k = ((v.len() - 1) as f64 * q.clamp(0.0, 1.0)).round() as usize;
    let (_, kth, _) = v.select_nth_unstable_by(k, |a, b| a.total_cmp(b));
    Some(*kth)
}
