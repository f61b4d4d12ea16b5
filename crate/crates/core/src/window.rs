use crate::error::{Error, Result};
use crate::volume::Volume3D;

/// `2r + 1` contiguous slices centered on `t0`, edge-replicated at the volume ends.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceWindow {
    slices: Vec<f32>,
    count: usize,
    height: usize,
    width: usize,
    pub subject_id: String,
    pub t0: usize,
    /// Source slice index of each window entry after edge replication.
    pub source_indices: Vec<usize>,
}

impl SliceWindow {
    /// Build a window from raw data laid out as (count, height, width).
    pub fn from_raw(
        slices: Vec<f32>,
        count: usize,
        height: usize,
        width: usize,
        subject_id: impl Into<String>,
        t0: usize,
    ) -> Result<Self> {
        if count % 2 == 0 {
            return Err(Error::Shape(format!("window needs an odd slice count, got {count}")));
        }
        if slices.len() != count * height * width {
            return Err(Error::Shape(format!(
                "{} values do not fill {count}x{height}x{width}",
                slices.len()
            )));
        }
        if slices.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidVolume("window values must be finite and >= 0".into()));
        }
        Ok(Self {
            slices,
            count,
            height,
            width,
            subject_id: subject_id.into(),
            t0,
            source_indices: (0..count).map(|i| (t0 + i).saturating_sub(count / 2)).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn radius(&self) -> usize {
        self.count / 2
    }

    pub fn center_index(&self) -> usize {
        self.count / 2
    }

    pub fn hw(&self) -> [usize; 2] {
        [self.height, self.width]
    }

    pub fn data(&self) -> &[f32] {
        &self.slices
    }

    pub fn slice(&self, i: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.slices[i * n..(i + 1) * n]
    }

    pub fn center(&self) -> &[f32] {
        self.slice(self.center_index())
    }
}

pub fn extract_window(vol: &Volume3D, t0: usize, r: usize) -> Result<SliceWindow> {
    let [d, h, w] = vol.dims();
    if t0 >= d {
        return Err(Error::InvalidArgument(format!("t0 {t0} outside [0, {d})")));
    }
    let count = 2 * r + 1;
    let mut slices = Vec::with_capacity(count * h * w);
    let mut source_indices = Vec::with_capacity(count);
    for k in 0..count {
        let t = (t0 as i64 + k as i64 - r as i64).clamp(0, d as i64 - 1) as usize;
        source_indices.push(t);
        slices.extend_from_slice(vol.slice(t));
    }
    Ok(SliceWindow {
        slices,
        count,
        height: h,
        width: w,
        subject_id: vol.subject_id.clone(),
        t0,
        source_indices,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Modality;

    fn ramp(d: usize) -> Volume3D {
        let data = (0..d * 4).map(|i| (i / 4) as f32).collect();
        Volume3D::new([d, 2, 2], data, "r", Modality::Fpet).unwrap()
    }

    #[test]
    fn radius_zero_is_target() {
        let w = extract_window(&ramp(10), 4, 0).unwrap();
        assert_eq!(w.len(), 1);
        assert_eq!(w.center(), &[4.0; 4]);
    }

    #[test]
    fn interior_window_in_order() {
        let w = extract_window(&ramp(10), 5, 2).unwrap();
        assert_eq!(w.source_indices, vec![3, 4, 5, 6, 7]);
        assert_eq!(w.slice(0), &[3.0; 4]);
        assert_eq!(w.slice(4), &[7.0; 4]);
    }

    #[test]
    fn edges_replicate() {
        let w = extract_window(&ramp(10), 0, 2).unwrap();
        assert_eq!(w.source_indices, vec![0, 0, 0, 1, 2]);
        assert_eq!(w.slice(0), w.slice(2));
        let w = extract_window(&ramp(1), 0, 2).unwrap();
        assert_eq!(w.source_indices, vec![0; 5]);
        assert!(extract_window(&ramp(3), 3, 1).is_err());
    }
}
