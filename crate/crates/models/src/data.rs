//! Normalization, paired datasets and batch assembly.

use candle_core::{DType, Device, Tensor};
use petrec_core::volume::quantile;
use petrec_core::{extract_window, Modality, RoiAtlas, SliceWindow, Volume3D};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{ModelError, Result};

/// Quantile of the training F-PET voxels mapped to 1.0.
pub const NORM_QUANTILE: f64 = 0.995;

/// Linear intensity scaling shared by every volume of a fold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normalizer {
    pub scale: f32,
}

impl Normalizer {
    pub fn new(scale: f32) -> Result<Self> {
        if !(scale.is_finite() && scale > 0.0) {
            return Err(ModelError::Dataset(format!("normalization scale {scale} must be finite and > 0")));
        }
        Ok(Self { scale })
    }

    /// Scale from the pooled voxel quantile of the given F-PET volumes.
    pub fn fit<'a>(fpet: impl IntoIterator<Item = &'a Volume3D>) -> Result<Self> {
        let pooled: Vec<f32> = fpet.into_iter().flat_map(|v| v.data().iter().copied()).collect();
        let q = quantile(&pooled, NORM_QUANTILE)
            .ok_or_else(|| ModelError::Dataset("no training voxels to normalize with".into()))?;
        Self::new(q)
    }

    pub fn normalize(&self, vol: &Volume3D) -> Result<Volume3D> {
        Ok(vol.with_data(vol.data().iter().map(|v| v / self.scale).collect(), vol.modality)?)
    }

    pub fn denormalize(&self, vol: &Volume3D, modality: Modality) -> Result<Volume3D> {
        Ok(vol.with_data(vol.data().iter().map(|v| v * self.scale).collect(), modality)?)
    }
}

/// One subject's paired volumes and atlas.
#[derive(Debug, Clone)]
pub struct Subject {
    pub id: String,
    pub fpet: Volume3D,
    pub lpet: Volume3D,
    pub atlas: RoiAtlas,
}

impl Subject {
    pub fn brain_mask(&self) -> Vec<bool> {
        self.atlas.labels().iter().map(|&l| l > 0).collect()
    }
}

/// Normalized (input, target) volume pairs, indexed by `(volume, slice)`.
#[derive(Debug, Clone)]
pub struct PairedSet {
    pub inputs: Vec<Volume3D>,
    pub targets: Vec<Volume3D>,
}

impl PairedSet {
    pub fn new(inputs: Vec<Volume3D>, targets: Vec<Volume3D>) -> Result<Self> {
        if inputs.is_empty() {
            return Err(ModelError::Dataset("empty training split".into()));
        }
        if inputs.len() != targets.len() {
            return Err(ModelError::Dataset(format!(
                "{} inputs vs {} targets",
                inputs.len(),
                targets.len()
            )));
        }
        let hw = inputs[0].dims()[1..].to_vec();
        for (x, y) in inputs.iter().zip(&targets) {
            if x.dims() != y.dims() {
                return Err(ModelError::Dataset(format!(
                    "{}: input dims {:?} vs target dims {:?}",
                    x.subject_id,
                    x.dims(),
                    y.dims()
                )));
            }
            if x.dims()[1..] != hw[..] {
                return Err(ModelError::Dataset("all volumes must share slice dims".into()));
            }
        }
        Ok(Self { inputs, targets })
    }

    pub fn hw(&self) -> [usize; 2] {
        let [_, h, w] = self.inputs[0].dims();
        [h, w]
    }

    pub fn samples(&self) -> Vec<(usize, usize)> {
        self.inputs
            .iter()
            .enumerate()
            .flat_map(|(i, v)| (0..v.depth()).map(move |t| (i, t)))
            .collect()
    }

    /// Input windows `(B, T, H, W)` and target slices `(B, 1, H, W)` for the given samples.
    pub fn batch(&self, samples: &[(usize, usize)], r: usize, dtype: DType) -> Result<(Tensor, Tensor)> {
        let windows = samples
            .iter()
            .map(|&(i, t)| extract_window(&self.inputs[i], t, r))
            .collect::<petrec_core::Result<Vec<_>>>()?;
        let targets: Vec<&[f32]> = samples.iter().map(|&(i, t)| self.targets[i].slice(t)).collect();
        Ok((windows_tensor(&windows, dtype)?, slices_tensor(&targets, self.hw(), dtype)?))
    }
}

/// Endless shuffled stream of sample indices, reshuffled every pass.
pub struct SampleStream {
    samples: Vec<(usize, usize)>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl SampleStream {
    pub fn new(samples: Vec<(usize, usize)>, seed: u64) -> Result<Self> {
        if samples.is_empty() {
            return Err(ModelError::Dataset("no training samples".into()));
        }
        let mut s = Self {
            samples,
            pos: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        s.samples.shuffle(&mut s.rng);
        Ok(s)
    }

    pub fn next_batch(&mut self, n: usize) -> Vec<(usize, usize)> {
        (0..n)
            .map(|_| {
                if self.pos == self.samples.len() {
                    self.samples.shuffle(&mut self.rng);
                    self.pos = 0;
                }
                self.pos += 1;
                self.samples[self.pos - 1]
            })
            .collect()
    }
}

/// Stack windows into `(B, T, H, W)`.
pub fn windows_tensor(windows: &[SliceWindow], dtype: DType) -> Result<Tensor> {
    let first = windows
        .first()
        .ok_or_else(|| ModelError::Dataset("empty window batch".into()))?;
    let [h, w] = first.hw();
    let t = first.len();
    let mut data = Vec::with_capacity(windows.len() * first.data().len());
    for win in windows {
        if win.hw() != [h, w] || win.len() != t {
            return Err(ModelError::Shape("windows in a batch must share shape".into()));
        }
        data.extend_from_slice(win.data());
    }
    Ok(Tensor::from_vec(data, (windows.len(), t, h, w), &Device::Cpu)?.to_dtype(dtype)?)
}

/// Stack slices into `(B, 1, H, W)`.
pub fn slices_tensor(slices: &[&[f32]], hw: [usize; 2], dtype: DType) -> Result<Tensor> {
    let n = hw[0] * hw[1];
    if slices.iter().any(|s| s.len() != n) {
        return Err(ModelError::Shape(format!("slices must hold {n} values")));
    }
    let data: Vec<f32> = slices.iter().flat_map(|s| s.iter().copied()).collect();
    Ok(Tensor::from_vec(data, (slices.len(), 1, hw[0], hw[1]), &Device::Cpu)?.to_dtype(dtype)?)
}

/// Apply `f` to every centre slice of `vol` in batches, stacking the outputs.
pub fn map_slices(
    vol: &Volume3D,
    r: usize,
    batch: usize,
    dtype: DType,
    modality: Modality,
    mut f: impl FnMut(&Tensor) -> Result<Tensor>,
) -> Result<Volume3D> {
    let [d, h, w] = vol.dims();
    let mut out = Vec::with_capacity(vol.data().len());
    for start in (0..d).step_by(batch.max(1)) {
        let windows = (start..(start + batch.max(1)).min(d))
            .map(|t| extract_window(vol, t, r))
            .collect::<petrec_core::Result<Vec<_>>>()?;
        let y = f(&windows_tensor(&windows, dtype)?)?;
        if y.dims() != [windows.len(), 1, h, w] {
            return Err(ModelError::Shape(format!("slice map produced {:?}", y.dims())));
        }
        out.extend(y.flatten_all()?.to_dtype(DType::F32)?.to_vec1::<f32>()?);
    }
    // the networks end in non-negative heads but residual refinement may dip below zero
    out.iter_mut().for_each(|v| *v = v.max(0.0));
    Ok(vol.with_data(out, modality)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vol(d: usize, v: f32) -> Volume3D {
        Volume3D::new([d, 4, 4], vec![v; d * 16], "s", Modality::Lpet).unwrap()
    }

    #[test]
    fn normalizer_round_trip() {
        let n = Normalizer::fit([&vol(2, 2.0)]).unwrap();
        assert_eq!(n.scale, 2.0);
        let x = n.normalize(&vol(1, 3.0)).unwrap();
        assert_eq!(x.data()[0], 1.5);
        assert_eq!(n.denormalize(&x, Modality::Generated).unwrap().data()[0], 3.0);
        assert!(Normalizer::fit([&vol(1, 0.0)]).is_err());
    }

    #[test]
    fn stream_visits_every_sample_per_pass() {
        let mut s = SampleStream::new((0..5).map(|i| (0, i)).collect(), 1).unwrap();
        let mut seen = s.next_batch(5);
        seen.sort();
        assert_eq!(seen, (0..5).map(|i| (0, i)).collect::<Vec<_>>());
    }

    #[test]
    fn batches_have_expected_shapes() {
        let set = PairedSet::new(vec![vol(3, 1.0)], vec![vol(3, 2.0)]).unwrap();
        let (x, y) = set.batch(&[(0, 0), (0, 2)], 1, DType::F32).unwrap();
        assert_eq!(x.dims(), [2, 3, 4, 4]);
        assert_eq!(y.dims(), [2, 1, 4, 4]);
        let mapped = map_slices(&vol(3, 1.0), 1, 2, DType::F32, Modality::Generated, |x| {
            Ok(x.narrow(1, 1, 1)?.affine(2.0, 0.0)?)
        })
        .unwrap();
        assert!(mapped.data().iter().all(|&v| v == 2.0));
        assert!(PairedSet::new(vec![], vec![]).is_err());
    }
}
