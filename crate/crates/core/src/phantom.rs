//! Synthetic brain-like phantoms and low-dose simulation by Poisson count thinning.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::suvr::RoiAtlas;
use crate::volume::{Modality, Volume3D};

/// Fraction of each axis covered by the ellipsoid semi-axis.
const SEMI_AXIS_FRACTION: f64 = 0.42;

pub const DEFAULT_DOSE_FRACTION: f64 = 0.05;
pub const DEFAULT_SCALE_COUNTS: f64 = 100.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomSpec {
    pub dims: [usize; 3],
    pub n_regions: usize,
    pub uptake_range: (f64, f64),
    pub smoothing_sigma_vox: f64,
    pub background_level: f64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            dims: [32, 64, 64],
            n_regions: 8,
            uptake_range: (0.5, 2.0),
            smoothing_sigma_vox: 1.0,
            background_level: 0.05,
        }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        if self.dims.iter().any(|&d| d == 0) {
            return bad(format!("dims {:?} must all be >= 1", self.dims));
        }
        if !(2..=255).contains(&self.n_regions) {
            return bad(format!("n_regions {} must be in [2, 255]", self.n_regions));
        }
        let (lo, hi) = self.uptake_range;
        if !(lo.is_finite() && hi.is_finite() && lo > 0.0 && lo <= hi) {
            return bad(format!("uptake_range ({lo}, {hi}) must satisfy 0 < lo <= hi"));
        }
        if !(self.smoothing_sigma_vox.is_finite() && self.smoothing_sigma_vox >= 0.0) {
            return bad(format!("smoothing_sigma_vox {} must be >= 0", self.smoothing_sigma_vox));
        }
        if !(self.background_level.is_finite() && self.background_level >= 0.0) {
            return bad(format!("background_level {} must be >= 0", self.background_level));
        }
        Ok(())
    }
}

/// A generated F-PET-like volume with its label atlas.
#[derive(Debug, Clone)]
pub struct Phantom {
    pub volume: Volume3D,
    pub atlas: RoiAtlas,
}

fn ellipsoid_mask(dims: [usize; 3]) -> Vec<bool> {
    let c: Vec<f64> = dims.iter().map(|&n| (n as f64 - 1.0) / 2.0).collect();
    let a: Vec<f64> = dims
        .iter()
        .map(|&n| (SEMI_AXIS_FRACTION * n as f64).max(0.5))
        .collect();
    let [d, h, w] = dims;
    let mut mask = Vec::with_capacity(d * h * w);
    for z in 0..d {
        for y in 0..h {
            for x in 0..w {
                let r = ((z as f64 - c[0]) / a[0]).powi(2)
                    + ((y as f64 - c[1]) / a[1]).powi(2)
                    + ((x as f64 - c[2]) / a[2]).powi(2);
                mask.push(r <= 1.0);
            }
        }
    }
    mask
}

fn unravel(i: usize, dims: [usize; 3]) -> [f64; 3] {
    let hw = dims[1] * dims[2];
    [
        (i / hw) as f64,
        ((i % hw) / dims[2]) as f64,
        (i % dims[2]) as f64,
    ]
}

/// Generate a smoothed piecewise-constant phantom inside an ellipsoidal brain mask.
///
/// Regions are the Voronoi cells of `n_regions` distinct seed voxels drawn
/// inside the mask (convex cells of a convex mask, hence contiguous), relabeled
/// by decreasing size so that label 1 is the largest region.
pub fn generate_phantom(spec: &PhantomSpec, seed: u64) -> Result<Phantom> {
    spec.validate()?;
    let dims = spec.dims;
    let mask = ellipsoid_mask(dims);
    let inside: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
    if inside.len() < spec.n_regions {
        return Err(Error::InvalidSpec(format!(
            "dims {:?} hold an ellipsoid of {} voxels, too small for {} regions",
            dims,
            inside.len(),
            spec.n_regions
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let seeds: Vec<[f64; 3]> = index::sample(&mut rng, inside.len(), spec.n_regions)
        .into_iter()
        .map(|k| unravel(inside[k], dims))
        .collect();

    let mut cell = vec![0usize; mask.len()];
    let mut sizes = vec![0usize; spec.n_regions];
    for &i in &inside {
        let p = unravel(i, dims);
        let mut best = (f64::INFINITY, 0usize);
        for (k, s) in seeds.iter().enumerate() {
            let d2 = (p[0] - s[0]).powi(2) + (p[1] - s[1]).powi(2) + (p[2] - s[2]).powi(2);
            if d2 < best.0 {
                best = (d2, k);
            }
        }
        cell[i] = best.1;
        sizes[best.1] += 1;
    }
    let mut order: Vec<usize> = (0..spec.n_regions).collect();
    order.sort_by(|&a, &b| sizes[b].cmp(&sizes[a]).then(a.cmp(&b)));
    let mut label_of_cell = vec![0u8; spec.n_regions];
    for (rank, &k) in order.iter().enumerate() {
        label_of_cell[k] = (rank + 1) as u8;
    }

    let (lo, hi) = spec.uptake_range;
    let uptake: Vec<f64> = (0..spec.n_regions).map(|_| rng.random_range(lo..=hi)).collect();

    let mut labels = vec![0u8; mask.len()];
    let mut image = vec![spec.background_level; mask.len()];
    for &i in &inside {
        let l = label_of_cell[cell[i]];
        labels[i] = l;
        image[i] = uptake[(l - 1) as usize];
    }
    gaussian_smooth(&mut image, dims, spec.smoothing_sigma_vox);

    let data = image.into_iter().map(|v| v.max(0.0) as f32).collect();
    Ok(Phantom {
        volume: Volume3D::new(dims, data, format!("phantom-{seed}"), Modality::Fpet)?,
        atlas: RoiAtlas::new(dims, labels, 1)?,
    })
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as i64;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Separable Gaussian blur along all three axes, clamping at the borders.
pub fn gaussian_smooth(image: &mut [f64], dims: [usize; 3], sigma: f64) {
    if sigma <= 0.0 {
        return;
    }
    let kernel = gaussian_kernel(sigma);
    let radius = (kernel.len() / 2) as i64;
    let strides = [dims[1] * dims[2], dims[2], 1];
    let mut line = Vec::new();
    for axis in 0..3 {
        let n = dims[axis];
        if n == 1 {
            continue;
        }
        let stride = strides[axis];
        let others: Vec<usize> = (0..3).filter(|&a| a != axis).collect();
        for i in 0..dims[others[0]] {
            for j in 0..dims[others[1]] {
                let base = i * strides[others[0]] + j * strides[others[1]];
                line.clear();
                line.extend((0..n).map(|t| image[base + t * stride]));
                for t in 0..n {
                    let mut acc = 0.0;
                    for (k, w) in kernel.iter().enumerate() {
                        let src = (t as i64 + k as i64 - radius).clamp(0, n as i64 - 1) as usize;
                        acc += w * line[src];
                    }
                    image[base + t * stride] = acc;
                }
            }
        }
    }
}

fn check_dose(dose_fraction: f64, scale_counts: f64) -> Result<()> {
    if !(dose_fraction > 0.0 && dose_fraction <= 1.0) {
        return Err(Error::Domain(format!("dose_fraction {dose_fraction} must be in (0, 1]")));
    }
    if !(scale_counts.is_finite() && scale_counts > 0.0) {
        return Err(Error::Domain(format!("scale_counts {scale_counts} must be > 0")));
    }
    Ok(())
}

/// Raw thinned counts: `Poisson(dose_fraction * scale_counts * v)` per voxel.
pub fn thin_counts(fpet: &Volume3D, dose_fraction: f64, scale_counts: f64, seed: u64) -> Result<Vec<f64>> {
    check_dose(dose_fraction, scale_counts)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    fpet.data()
        .iter()
        .map(|&v| {
            let lambda = dose_fraction * scale_counts * f64::from(v);
            if lambda > 0.0 {
                let p = Poisson::new(lambda)
                    .map_err(|e| Error::Domain(format!("poisson rate {lambda}: {e}")))?;
                Ok(p.sample(&mut rng))
            } else {
                Ok(0.0)
            }
        })
        .collect()
}

/// Simulate a low-dose acquisition and rescale counts back to the F-PET intensity scale.
pub fn simulate_low_dose(fpet: &Volume3D, dose_fraction: f64, scale_counts: f64, seed: u64) -> Result<Volume3D> {
    let counts = thin_counts(fpet, dose_fraction, scale_counts, seed)?;
    let inv = 1.0 / (dose_fraction * scale_counts);
    let data = counts.into_iter().map(|k| (k * inv) as f32).collect();
    fpet.with_data(data, Modality::Lpet)
}
