//! Browser bindings: simulate a phantom at a chosen dose, preview deformable
//! sampling with a uniform offset, and render difference maps.

use petrec_core::colormap::{difference_map, gray_rgba};
use petrec_core::deform::{deformable_aggregate, DeformKernel, OffsetField};
use petrec_core::metrics::{evaluate_volume, MetricsReport};
use petrec_core::{extract_window, generate_phantom, simulate_low_dose, PhantomSpec, Volume3D};
use wasm_bindgen::prelude::*;

const DEPTH: usize = 8;

/// A phantom with its low-dose counterpart, viewed at the centre slice.
#[wasm_bindgen]
pub struct Session {
    fpet: Volume3D,
    lpet: Volume3D,
    report: MetricsReport,
    vmax: f64,
}

impl Session {
    pub fn build(seed: u32, side: usize, dose_fraction: f64) -> petrec_core::Result<Self> {
        let spec = PhantomSpec {
            dims: [DEPTH, side, side],
            ..PhantomSpec::default()
        };
        let phantom = generate_phantom(&spec, u64::from(seed))?;
        let lpet = simulate_low_dose(&phantom.volume, dose_fraction, 100.0, u64::from(seed) ^ 0xD05E)?;
        let mask = phantom.atlas.mask();
        let report = evaluate_volume(&phantom.volume, &lpet, &mask)?;
        let vmax = phantom.volume.data().iter().fold(0.0f32, |m, &v| m.max(v)) as f64;
        Ok(Self {
            fpet: phantom.volume,
            lpet,
            report,
            vmax,
        })
    }

    fn t(&self) -> usize {
        DEPTH / 2
    }

    /// Centre slice of the full-dose volume sampled with every tap displaced by `(dy, dx)`.
    pub fn shifted(&self, dy: f32, dx: f32) -> petrec_core::Result<Vec<f32>> {
        let window = extract_window(&self.fpet, self.t(), 0)?;
        let offsets = OffsetField::uniform(1, 3, window.hw(), dy, dx);
        deformable_aggregate(&window, &offsets, &DeformKernel::center_identity(1, 3))
    }
}

fn js(e: petrec_core::Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen]
impl Session {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32, side: usize, dose_fraction: f64) -> Result<Session, JsError> {
        Self::build(seed, side, dose_fraction).map_err(js)
    }

    pub fn side(&self) -> usize {
        self.fpet.dims()[2]
    }

    pub fn full_dose_rgba(&self) -> Vec<u8> {
        gray_rgba(self.fpet.slice(self.t()), self.vmax)
    }

    pub fn low_dose_rgba(&self) -> Vec<u8> {
        gray_rgba(self.lpet.slice(self.t()), self.vmax)
    }

    pub fn psnr_db(&self) -> f64 {
        self.report.psnr_db
    }

    pub fn ssim(&self) -> f64 {
        self.report.ssim
    }

    pub fn vsmd(&self) -> f64 {
        self.report.vsmd
    }

    #[wasm_bindgen(js_name = shiftedRgba)]
    pub fn shifted_rgba(&self, dy: f32, dx: f32) -> Result<Vec<u8>, JsError> {
        Ok(gray_rgba(&self.shifted(dy, dx).map_err(js)?, self.vmax))
    }

    /// |low dose - full dose| at the centre slice; `vmax_fraction` of the peak maps to red.
    #[wasm_bindgen(js_name = differenceRgba)]
    pub fn difference_rgba(&self, vmax_fraction: f64) -> Vec<u8> {
        let t = self.t();
        difference_map(self.lpet.slice(t), self.fpet.slice(t), self.vmax * vmax_fraction)
            .chunks(3)
            .flat_map(|c| [c[0], c[1], c[2], 255])
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integer_shift_moves_pixels() {
        let s = Session::build(3, 16, 0.05).unwrap();
        let base = s.fpet.slice(DEPTH / 2).to_vec();
        let out = s.shifted(0.0, 1.0).unwrap();
        for y in 0..16 {
            for x in 0..15 {
                assert_eq!(out[y * 16 + x], base[y * 16 + x + 1]);
            }
        }
        assert_eq!(s.shifted(0.0, 0.0).unwrap(), base);
    }

    #[test]
    fn rgba_lengths_and_metrics() {
        let s = Session::build(1, 16, 0.05).unwrap();
        assert_eq!(s.full_dose_rgba().len(), 16 * 16 * 4);
        assert_eq!(s.low_dose_rgba().len(), 16 * 16 * 4);
        assert_eq!(s.difference_rgba(0.5).len(), 16 * 16 * 4);
        assert!(s.psnr_db().is_finite() && s.ssim() <= 1.0 && s.vsmd() >= 0.0);
    }
}
