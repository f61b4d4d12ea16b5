//! Serialized run records.

use std::collections::BTreeMap;

use petrec_core::metrics::MetricsReport;
use petrec_core::suvr::AgreementStats;
use petrec_core::PhantomSpec;
use petrec_models::train::ValidationRecord;
use serde::{Deserialize, Serialize};

use crate::config::Profile;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectRecord {
    pub subject_id: String,
    pub phantom_seed: u64,
    pub dose_seed: u64,
    pub fpet_sha256: String,
    pub lpet_sha256: String,
    pub atlas_sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataManifest {
    pub config_hash: String,
    pub seed: u64,
    pub dose_fraction: f64,
    pub scale_counts: f64,
    pub phantom: PhantomSpec,
    pub reference_region: u8,
    pub subjects: Vec<SubjectRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub fold: usize,
    pub phase: String,
    pub steps: usize,
    pub best_step: usize,
    pub best_val_psnr: f64,
    pub validation: Vec<ValidationRecord>,
    pub init_seed: u64,
    pub train_seed: u64,
    pub trainable_parameters: usize,
    /// Frozen perceptual encoders hashed identical before and after training.
    pub encoders_unchanged: Option<bool>,
    pub seconds: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        let (mean, std) = petrec_core::metrics::mean_std(values);
        Self { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectLevel {
    pub psnr_db: MeanStd,
    pub ssim: MeanStd,
    pub vsmd: MeanStd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceLevel {
    pub psnr_db: MeanStd,
    pub ssim: MeanStd,
}

/// Metrics of one modality against ground truth, as per-subject and per-slice summaries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModalityStats {
    pub n_subjects: usize,
    pub n_slices: usize,
    pub per_subject: SubjectLevel,
    pub per_slice: SliceLevel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectMetrics {
    pub modality: String,
    pub report: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointInfo {
    pub best_step: usize,
    pub best_val_psnr: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub test_fold: usize,
    pub val_fold: usize,
    pub train_subjects: Vec<String>,
    pub val_subjects: Vec<String>,
    pub test_subjects: Vec<String>,
    pub norm_scale: f32,
    pub transgan: CheckpointInfo,
    pub sdam: CheckpointInfo,
    pub metrics: BTreeMap<String, ModalityStats>,
    pub subjects: Vec<SubjectMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuvrSummary {
    pub reference_region: u8,
    /// Modality vs ground truth, pooled over every evaluated test subject.
    pub pooled: BTreeMap<String, AgreementStats>,
    /// Modality, then subject, vs ground truth.
    pub per_subject: BTreeMap<String, BTreeMap<String, AgreementStats>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterCounts {
    pub generator: usize,
    pub discriminator: usize,
    pub sdam: usize,
    /// Trainable scalars of generator, discriminator and SDAM.
    pub trainable_total: usize,
    /// Reported for reference; frozen and excluded from the trainable total.
    pub frozen_encoder_parameters: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub transgan_train_seconds: Vec<f64>,
    pub sdam_train_seconds: Vec<f64>,
    pub evaluate_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Seeds {
    pub master: u64,
    pub folds: u64,
}

/// Result of `evaluate`. Everything except `timings` is reproducible from config and seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub profile: Profile,
    pub seeds: Seeds,
    pub dose_fraction: f64,
    pub scale_counts: f64,
    pub folds: Vec<FoldReport>,
    pub overall: BTreeMap<String, ModalityStats>,
    pub suvr: SuvrSummary,
    pub parameter_counts: ParameterCounts,
    pub timings: Timings,
}
