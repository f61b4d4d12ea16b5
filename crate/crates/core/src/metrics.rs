//! PSNR, SSIM and VSMD.
//!
//! VSMD (voxel-scale metabolic difference) is defined here as the relative
//! total absolute difference over the brain mask,
//! `sum_mask |ref - test| / sum_mask ref`.

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::volume::Volume3D;

pub const SSIM_WINDOW: usize = 7;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn same_len(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Shape(format!("{a} vs {b} elements")));
    }
    Ok(())
}

/// Neumaier-compensated sum.
pub fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for v in values {
        let t = sum + v;
        comp += if sum.abs() >= v.abs() { (sum - t) + v } else { (v - t) + sum };
        sum = t;
    }
    sum + comp
}

/// Peak signal-to-noise ratio in dB; `f64::INFINITY` when the inputs are equal.
pub fn psnr(reference: &[f64], test: &[f64], data_range: f64) -> Result<f64> {
    same_len(reference.len(), test.len())?;
    if !(data_range > 0.0) {
        return Err(Error::InvalidArgument(format!("data_range {data_range} must be > 0")));
    }
    if reference.is_empty() {
        return Err(Error::InvalidArgument("empty input".into()));
    }
    let sse = compensated_sum(reference.iter().zip(test).map(|(r, t)| (r - t) * (r - t)));
    if sse == 0.0 {
        return Ok(f64::INFINITY);
    }
    let mse = sse / reference.len() as f64;
    Ok(20.0 * data_range.log10() - 10.0 * mse.log10())
}

fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size / 2) as f64;
    let g: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Separable weighted filter over "valid" positions only.
fn filter_valid(img: &[f64], h: usize, w: usize, g: &[f64]) -> Vec<f64> {
    let k = g.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = g.iter().enumerate().map(|(i, gi)| gi * img[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = g.iter().enumerate().map(|(i, gi)| gi * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean SSIM of two `h x w` images with a Gaussian window (sigma 1.5).
pub fn ssim(
    reference: &[f64],
    test: &[f64],
    hw: [usize; 2],
    window_size: usize,
    k1: f64,
    k2: f64,
    data_range: f64,
) -> Result<f64> {
    let [h, w] = hw;
    same_len(reference.len(), test.len())?;
    same_len(reference.len(), h * w)?;
    if window_size % 2 == 0 || window_size == 0 {
        return Err(Error::InvalidArgument(format!("window_size {window_size} must be odd")));
    }
    if h < window_size || w < window_size {
        return Err(Error::Shape(format!("{h}x{w} image smaller than {window_size} window")));
    }
    if !(data_range > 0.0) {
        return Err(Error::InvalidArgument(format!("data_range {data_range} must be > 0")));
    }
    let g = gaussian_window(window_size, SSIM_SIGMA);
    let c1 = (k1 * data_range).powi(2);
    let c2 = (k2 * data_range).powi(2);
    let prod = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).collect::<Vec<_>>();
    let mu_a = filter_valid(reference, h, w, &g);
    let mu_b = filter_valid(test, h, w, &g);
    let e_aa = filter_valid(&prod(reference, reference), h, w, &g);
    let e_bb = filter_valid(&prod(test, test), h, w, &g);
    let e_ab = filter_valid(&prod(reference, test), h, w, &g);
    let n = mu_a.len();
    let mut total = 0.0;
    for i in 0..n {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let var_a = e_aa[i] - ma * ma;
        let var_b = e_bb[i] - mb * mb;
        let cov = e_ab[i] - ma * mb;
        total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
            / ((ma * ma + mb * mb + c1) * (var_a + var_b + c2));
    }
    Ok(total / n as f64)
}

pub fn ssim_default(reference: &[f64], test: &[f64], hw: [usize; 2], data_range: f64) -> Result<f64> {
    ssim(reference, test, hw, SSIM_WINDOW, SSIM_K1, SSIM_K2, data_range)
}

pub fn vsmd(reference: &[f64], test: &[f64], mask: &[bool]) -> Result<f64> {
    same_len(reference.len(), test.len())?;
    same_len(reference.len(), mask.len())?;
    if !mask.iter().any(|&m| m) {
        return Err(Error::InvalidArgument("empty mask".into()));
    }
    let masked = || reference.iter().zip(test).zip(mask).filter(|(_, &m)| m).map(|(p, _)| p);
    let num = compensated_sum(masked().map(|(r, t)| (r - t).abs()));
    let den = compensated_sum(masked().map(|(r, _)| *r));
    if den == 0.0 {
        return Err(Error::UndefinedReference("reference sums to zero over the mask".into()));
    }
    Ok(num / den)
}

/// `Some(x)` for finite values, `None` (JSON null) for the infinite-PSNR sentinel.
pub mod finite_or_null {
    use super::*;

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_some(v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub subject_id: String,
    /// Mean per-slice PSNR; infinite when every scored slice is identical.
    #[serde(with = "finite_or_null")]
    pub psnr_db: f64,
    pub psnr_infinite: bool,
    pub ssim: f64,
    pub vsmd: f64,
    pub n_voxels: usize,
    pub mask_coverage: f64,
    pub n_slices: usize,
    pub data_range: f64,
}

/// Masked dynamic range of the reference, the default PSNR/SSIM data range.
pub fn masked_range(reference: &[f32], mask: &[bool]) -> Option<f64> {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for (&v, &m) in reference.iter().zip(mask) {
        if m {
            lo = lo.min(f64::from(v));
            hi = hi.max(f64::from(v));
        }
    }
    (hi > lo).then_some(hi - lo)
}

/// PSNR and SSIM of one slice.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SliceScore {
    pub t: usize,
    #[serde(with = "finite_or_null")]
    pub psnr_db: f64,
    pub ssim: f64,
}

/// Reference data range over the mask, falling back to the whole volume, then to 1.
pub fn default_data_range(reference: &Volume3D, mask: &[bool]) -> f64 {
    masked_range(reference.data(), mask)
        .or_else(|| masked_range(reference.data(), &vec![true; mask.len()]))
        .unwrap_or(1.0)
}

/// Scores of every slice that intersects the mask, in slice order.
pub fn score_slices(reference: &Volume3D, test: &Volume3D, mask: &[bool], data_range: f64) -> Result<Vec<SliceScore>> {
    if reference.dims() != test.dims() {
        return Err(Error::Shape(format!("{:?} vs {:?}", reference.dims(), test.dims())));
    }
    same_len(reference.data().len(), mask.len())?;
    let [d, h, w] = reference.dims();
    let n = h * w;
    let to64 = |s: &[f32]| s.iter().map(|&v| f64::from(v)).collect::<Vec<_>>();
    let mut scores = Vec::new();
    for t in 0..d {
        if !mask[t * n..(t + 1) * n].iter().any(|&m| m) {
            continue;
        }
        let r = to64(reference.slice(t));
        let x = to64(test.slice(t));
        let ssim_value = if h >= SSIM_WINDOW && w >= SSIM_WINDOW {
            ssim_default(&r, &x, [h, w], data_range)?
        } else {
            ssim(&r, &x, [h, w], 1, SSIM_K1, SSIM_K2, data_range)?
        };
        scores.push(SliceScore {
            t,
            psnr_db: psnr(&r, &x, data_range)?,
            ssim: ssim_value,
        });
    }
    Ok(scores)
}

/// Per-slice PSNR/SSIM averaged over slices that intersect the mask, plus volume VSMD.
pub fn evaluate_volume(reference: &Volume3D, test: &Volume3D, mask: &[bool]) -> Result<MetricsReport> {
    if reference.dims() != test.dims() {
        return Err(Error::Shape(format!("{:?} vs {:?}", reference.dims(), test.dims())));
    }
    same_len(reference.data().len(), mask.len())?;
    let data_range = default_data_range(reference, mask);
    let scores = score_slices(reference, test, mask, data_range)?;
    if scores.is_empty() {
        return Err(Error::InvalidArgument("mask intersects no slice".into()));
    }
    let n_slices = scores.len();
    let n_voxels = mask.iter().filter(|&&m| m).count();
    let to64 = |s: &[f32]| s.iter().map(|&v| f64::from(v)).collect::<Vec<_>>();
    Ok(MetricsReport {
        subject_id: reference.subject_id.clone(),
        psnr_db: scores.iter().map(|s| s.psnr_db).sum::<f64>() / n_slices as f64,
        psnr_infinite: scores.iter().all(|s| s.psnr_db.is_infinite()),
        ssim: scores.iter().map(|s| s.ssim).sum::<f64>() / n_slices as f64,
        vsmd: vsmd(&to64(reference.data()), &to64(test.data()), mask)?,
        n_voxels,
        mask_coverage: n_voxels as f64 / mask.len() as f64,
        n_slices,
        data_range,
    })
}

/// Mean and sample standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noisy(base: &[f64], amp: f64, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        base.iter().map(|v| v + amp * rng.random_range(-1.0..1.0)).collect()
    }

    fn image(h: usize, w: usize) -> Vec<f64> {
        (0..h * w)
            .map(|i| ((i / w) as f64 * 0.3).sin() + ((i % w) as f64 * 0.2).cos() + 2.0)
            .collect()
    }

    #[test]
    fn psnr_identity_and_closed_form() {
        let a = vec![0.3; 16];
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), f64::INFINITY);
        assert_eq!(psnr(&[0.0; 64], &[0.1; 64], 1.0).unwrap(), 20.0);
        assert!(psnr(&a, &a, 0.0).is_err());
        assert!(psnr(&a, &a[..3], 1.0).is_err());
    }

    #[test]
    fn psnr_drops_with_noise() {
        let base = image(16, 16);
        let p1 = psnr(&base, &noisy(&base, 0.05, 1), 4.0).unwrap();
        let p2 = psnr(&base, &noisy(&base, 0.10, 1), 4.0).unwrap();
        assert!(p2 < p1);
    }

    #[test]
    fn ssim_properties() {
        let a = image(20, 24);
        assert_eq!(ssim_default(&a, &a, [20, 24], 3.0).unwrap(), 1.0);
        let b = noisy(&a, 3.0, 4);
        let s = ssim_default(&a, &b, [20, 24], 3.0).unwrap();
        assert!(s < 0.5, "ssim {s}");
        assert_eq!(s, ssim_default(&b, &a, [20, 24], 3.0).unwrap());
        assert!(ssim(&a, &a, [20, 24], 4, 0.01, 0.03, 1.0).is_err());
    }

    #[test]
    fn vsmd_closed_forms() {
        let r = image(8, 8);
        let mask = vec![true; 64];
        assert_eq!(vsmd(&r, &r, &mask).unwrap(), 0.0);
        let t: Vec<f64> = r.iter().map(|v| 1.1 * v).collect();
        assert!((vsmd(&r, &t, &mask).unwrap() - 0.1).abs() < 1e-15);
        assert!(matches!(vsmd(&[0.0; 4], &[1.0; 4], &[true; 4]), Err(Error::UndefinedReference(_))));
    }

    #[test]
    fn mean_std_sample() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }
}
