//! Regional uptake ratios and Bland-Altman agreement statistics.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{Modality, Volume3D};

/// Two-sided 95% normal quantile used for limits of agreement and the CI of the mean.
pub const Z95: f64 = 1.96;

/// Integer region labels over a volume grid. Label 0 is background.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoiAtlas {
    dims: [usize; 3],
    labels: Vec<u8>,
    reference_region: u8,
}

impl RoiAtlas {
    pub fn new(dims: [usize; 3], labels: Vec<u8>, reference_region: u8) -> Result<Self> {
        if labels.len() != dims.iter().product::<usize>() {
            return Err(Error::Shape(format!(
                "atlas dims {dims:?} do not match {} labels",
                labels.len()
            )));
        }
        if reference_region == 0 {
            return Err(Error::InvalidArgument("reference region cannot be background (0)".into()));
        }
        if !labels.contains(&reference_region) {
            return Err(Error::InvalidArgument(format!(
                "reference region {reference_region} has no voxels"
            )));
        }
        Ok(Self {
            dims,
            labels,
            reference_region,
        })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn reference_region(&self) -> u8 {
        self.reference_region
    }

    pub fn with_reference(mut self, reference_region: u8) -> Result<Self> {
        self = Self::new(self.dims, self.labels, reference_region)?;
        Ok(self)
    }

    /// Nonzero labels present in the atlas.
    pub fn region_ids(&self) -> BTreeSet<u8> {
        self.labels.iter().copied().filter(|&l| l != 0).collect()
    }

    /// Brain mask: every labeled voxel.
    pub fn mask(&self) -> Vec<bool> {
        self.labels.iter().map(|&l| l != 0).collect()
    }
}

/// Region id to SUVR for one volume.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuvrTable {
    pub subject_id: String,
    pub modality: Modality,
    pub reference_region: u8,
    pub values: BTreeMap<u8, f64>,
}

pub fn compute_suvr(vol: &Volume3D, atlas: &RoiAtlas) -> Result<SuvrTable> {
    if vol.dims() != atlas.dims() {
        return Err(Error::Shape(format!(
            "volume dims {:?} != atlas dims {:?}",
            vol.dims(),
            atlas.dims()
        )));
    }
    let mut sums: BTreeMap<u8, (f64, usize)> = BTreeMap::new();
    for (&v, &l) in vol.data().iter().zip(atlas.labels()) {
        if l != 0 {
            let e = sums.entry(l).or_default();
            e.0 += f64::from(v);
            e.1 += 1;
        }
    }
    let reference = atlas.reference_region();
    let (ref_sum, ref_n) = sums[&reference];
    let ref_mean = ref_sum / ref_n as f64;
    if !(ref_mean > 0.0) {
        return Err(Error::UndefinedReference(format!(
            "reference region {reference} has mean uptake {ref_mean}"
        )));
    }
    let values = sums
        .into_iter()
        .map(|(l, (s, n))| (l, (s / n as f64) / ref_mean))
        .collect();
    Ok(SuvrTable {
        subject_id: vol.subject_id.clone(),
        modality: vol.modality,
        reference_region: reference,
        values,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementStats {
    pub mean_diff: f64,
    pub sd_diff: f64,
    pub loa_low: f64,
    pub loa_high: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// `None` when either series is constant.
    pub pearson_r: Option<f64>,
    pub pearson_defined: bool,
    pub n_points: usize,
}

/// Bland-Altman statistics of paired measurements `a_i - b_i`.
///
/// Moments are accumulated in a single Welford pass; sd uses the n-1 denominator.
pub fn agreement_stats(a: &[f64], b: &[f64]) -> Result<AgreementStats> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("{} vs {} paired values", a.len(), b.len())));
    }
    let n = a.len();
    if n < 3 {
        return Err(Error::InvalidArgument(format!(
            "agreement analysis needs at least 3 pairs, got {n}"
        )));
    }
    let (mut md, mut m2d) = (0.0f64, 0.0f64);
    let (mut ma, mut mb) = (0.0f64, 0.0f64);
    let (mut saa, mut sbb, mut sab) = (0.0f64, 0.0f64, 0.0f64);
    for (i, (&x, &y)) in a.iter().zip(b).enumerate() {
        let k = (i + 1) as f64;
        let d = x - y;
        let dd = d - md;
        md += dd / k;
        m2d += dd * (d - md);

        let da = x - ma;
        let db = y - mb;
        ma += da / k;
        mb += db / k;
        saa += da * (x - ma);
        sbb += db * (y - mb);
        sab += da * (y - mb);
    }
    let sd = (m2d / (n as f64 - 1.0)).sqrt();
    let half_loa = Z95 * sd;
    let half_ci = Z95 * sd / (n as f64).sqrt();
    let pearson_r = if saa > 0.0 && sbb > 0.0 {
        Some((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
    } else {
        None
    };
    Ok(AgreementStats {
        mean_diff: md,
        sd_diff: sd,
        loa_low: md - half_loa,
        loa_high: md + half_loa,
        ci_low: md - half_ci,
        ci_high: md + half_ci,
        pearson_defined: pearson_r.is_some(),
        pearson_r,
        n_points: n,
    })
}

/// One Bland-Altman point: a region of a subject measured by both methods.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementPoint {
    pub subject_id: String,
    pub region_id: u8,
    pub a: f64,
    pub b: f64,
    pub mean: f64,
    pub diff: f64,
}

fn matched_points(a: &SuvrTable, b: &SuvrTable) -> Result<Vec<AgreementPoint>> {
    let ka: BTreeSet<_> = a.values.keys().collect();
    let kb: BTreeSet<_> = b.values.keys().collect();
    if ka != kb || a.reference_region != b.reference_region {
        return Err(Error::InvalidArgument(format!(
            "region mismatch between {} ({:?}, ref {}) and {} ({:?}, ref {})",
            a.subject_id, ka, a.reference_region, b.subject_id, kb, b.reference_region
        )));
    }
    // the reference region is identically 1 in both tables and carries no information
    Ok(a.values
        .iter()
        .filter(|(&r, _)| r != a.reference_region)
        .map(|(&r, &va)| {
            let vb = b.values[&r];
            AgreementPoint {
                subject_id: a.subject_id.clone(),
                region_id: r,
                a: va,
                b: vb,
                mean: 0.5 * (va + vb),
                diff: va - vb,
            }
        })
        .collect())
}

/// Agreement of two SUVR tables over their non-reference regions.
pub fn bland_altman(a: &SuvrTable, b: &SuvrTable) -> Result<AgreementStats> {
    let pts = matched_points(a, b)?;
    let (xa, xb): (Vec<f64>, Vec<f64>) = pts.iter().map(|p| (p.a, p.b)).unzip();
    agreement_stats(&xa, &xb)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub stats: AgreementStats,
    pub points: Vec<AgreementPoint>,
}

/// One subject's (test, truth, atlas) triple.
pub struct SubjectPair<'a> {
    pub test: &'a Volume3D,
    pub truth: &'a Volume3D,
    pub atlas: &'a RoiAtlas,
}

/// Pools per-region SUVR pairs (test vs truth) across subjects.
pub fn agreement_report(pairs: &[SubjectPair<'_>]) -> Result<AgreementReport> {
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("agreement report needs at least one subject".into()));
    }
    let mut points = Vec::new();
    for p in pairs {
        let a = compute_suvr(p.test, p.atlas)?;
        let b = compute_suvr(p.truth, p.atlas)?;
        points.extend(matched_points(&a, &b)?);
    }
    let (xa, xb): (Vec<f64>, Vec<f64>) = points.iter().map(|p| (p.a, p.b)).unzip();
    Ok(AgreementReport {
        stats: agreement_stats(&xa, &xb)?,
        points,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(vals: &[(u8, f64)]) -> SuvrTable {
        SuvrTable {
            subject_id: "s".into(),
            modality: Modality::Fpet,
            reference_region: 1,
            values: vals.iter().copied().collect(),
        }
    }

    #[test]
    fn uniform_volume_gives_unit_suvr() {
        let atlas = RoiAtlas::new([1, 2, 3], vec![0, 1, 2, 2, 3, 1], 1).unwrap();
        let vol = Volume3D::new([1, 2, 3], vec![0.7; 6], "s", Modality::Fpet).unwrap();
        let t = compute_suvr(&vol, &atlas).unwrap();
        assert!(t.values.values().all(|&v| v == 1.0));
        assert_eq!(t.values.len(), 3);
    }

    #[test]
    fn two_region_ratio() {
        let atlas = RoiAtlas::new([1, 1, 4], vec![1, 1, 2, 2], 1).unwrap();
        let vol = Volume3D::new([1, 1, 4], vec![1.0, 1.0, 2.0, 2.0], "s", Modality::Fpet).unwrap();
        let t = compute_suvr(&vol, &atlas).unwrap();
        assert_eq!(t.values[&1], 1.0);
        assert_eq!(t.values[&2], 2.0);
    }

    #[test]
    fn zero_reference_is_an_error() {
        let atlas = RoiAtlas::new([1, 1, 3], vec![1, 2, 2], 1).unwrap();
        let vol = Volume3D::new([1, 1, 3], vec![0.0, 1.0, 2.0], "s", Modality::Fpet).unwrap();
        assert!(matches!(compute_suvr(&vol, &atlas), Err(Error::UndefinedReference(_))));
    }

    #[test]
    fn identical_tables_have_zero_width_limits() {
        let a = table(&[(1, 1.0), (2, 1.2), (3, 0.8), (4, 1.5)]);
        let s = bland_altman(&a, &a).unwrap();
        assert_eq!(s.mean_diff, 0.0);
        assert_eq!((s.loa_low, s.loa_high), (0.0, 0.0));
        assert!((s.pearson_r.unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(s.n_points, 3);
    }

    #[test]
    fn constant_offset() {
        let a = table(&[(1, 1.0), (2, 1.2), (3, 0.8), (4, 1.5)]);
        let b = table(&[(1, 1.0), (2, 1.1), (3, 0.7), (4, 1.4)]);
        let s = bland_altman(&a, &b).unwrap();
        assert!((s.mean_diff - 0.1).abs() < 1e-12);
        assert!(s.sd_diff < 1e-12);
        assert!((s.loa_low - 0.1).abs() < 1e-12 && (s.loa_high - 0.1).abs() < 1e-12);
    }

    #[test]
    fn constant_series_has_undefined_correlation() {
        let s = agreement_stats(&[1.0, 1.0, 1.0], &[0.5, 0.7, 0.9]).unwrap();
        assert!(!s.pearson_defined);
        assert!(s.pearson_r.is_none());
    }

    #[test]
    fn region_mismatch_rejected() {
        let a = table(&[(1, 1.0), (2, 1.2), (3, 0.8), (4, 1.5)]);
        let b = table(&[(1, 1.0), (2, 1.2), (3, 0.8), (5, 1.5)]);
        assert!(bland_altman(&a, &b).is_err());
        assert!(agreement_stats(&[1.0, 2.0], &[1.0, 2.0]).is_err());
    }
}
