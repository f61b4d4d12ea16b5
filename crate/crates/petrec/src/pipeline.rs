//! The five CLI commands.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use candle_core::DType;
use petrec_core::colormap::difference_map;
use petrec_core::metrics::{evaluate_volume, score_slices, SliceScore};
use petrec_core::pvol::{read_atlas, read_volume, write_atlas, write_volume};
use petrec_core::suvr::{agreement_report, bland_altman, compute_suvr, SubjectPair};
use petrec_core::{generate_phantom, make_folds, simulate_low_dose, FoldAssignment, Volume3D};
use petrec_models::checkpoint::{self, load_sdam, load_transgan, save_sdam, save_transgan};
use petrec_models::data::{Normalizer, PairedSet, Subject};
use petrec_models::sdam::{refine_volume, train_sdam, Sdam};
use petrec_models::train::ValidationSet;
use petrec_models::transgan::{train_transgan, TransGan};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::config::{derive_seed, RunConfig};
use crate::error::{PipelineError, Result};
use crate::layout::Layout;
use crate::manifest::*;
use crate::report::{bland_altman_svg, read_json, write_csv, write_json, write_png_rgb};

/// Compared modalities, in report order.
pub const MODALITIES: [&str; 3] = ["lpet", "generated", "refined"];

const DTYPE: DType = DType::F32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Transgan,
    Sdam,
    All,
}

impl Phase {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "transgan" => Some(Self::Transgan),
            "sdam" => Some(Self::Sdam),
            "all" => Some(Self::All),
            _ => None,
        }
    }
}

pub struct Pipeline {
    pub config: RunConfig,
    pub layout: Layout,
    pub force: bool,
}

fn sha256_file(path: &Path) -> Result<String> {
    Ok(format!("{:x}", Sha256::digest(std::fs::read(path)?)))
}

fn missing(path: &Path, hint: &str) -> PipelineError {
    PipelineError::Missing(format!("{} not found; run `petrec {hint}` first", path.display()))
}

impl Pipeline {
    pub fn new(config: RunConfig, force: bool) -> Self {
        let layout = Layout::new(config.output_dir.clone());
        Self { config, layout, force }
    }

    /// Refuse to replace `path` unless forced; when forced, remove `clear` first.
    fn guard(&self, path: &Path, clear: Option<&Path>) -> Result<()> {
        if path.exists() {
            if !self.force {
                return Err(PipelineError::Overwrite(path.display().to_string()));
            }
            if let Some(dir) = clear {
                if dir.exists() {
                    std::fs::remove_dir_all(dir)?;
                }
            }
        }
        Ok(())
    }

    pub fn folds(&self) -> Result<FoldAssignment> {
        let seed = derive_seed(self.config.seed, "folds", 0);
        Ok(make_folds(&self.config.subject_ids(), self.config.folds.k, seed)?)
    }

    // ---- generate-data ----

    pub fn generate_data(&self) -> Result<DataManifest> {
        let cfg = &self.config;
        self.guard(&self.layout.data_manifest(), Some(&self.layout.data_dir()))?;
        let mut subjects = Vec::new();
        for (i, id) in cfg.subject_ids().into_iter().enumerate() {
            let phantom_seed = derive_seed(cfg.seed, "phantom", i as u64);
            let dose_seed = derive_seed(cfg.seed, "dose", i as u64);
            let mut p = generate_phantom(&cfg.phantom, phantom_seed)?;
            p.volume.subject_id = id.clone();
            let mut lpet = simulate_low_dose(&p.volume, cfg.dose_fraction, cfg.scale_counts, dose_seed)?;
            lpet.subject_id = id.clone();
            let atlas = p.atlas.with_reference(cfg.reference_region)?;
            let paths = ["fpet", "lpet", "atlas"].map(|k| self.layout.subject_file(&id, k));
            write_volume(&p.volume, &paths[0])?;
            write_volume(&lpet, &paths[1])?;
            write_atlas(&atlas, &id, &paths[2])?;
            subjects.push(SubjectRecord {
                subject_id: id,
                phantom_seed,
                dose_seed,
                fpet_sha256: sha256_file(&paths[0])?,
                lpet_sha256: sha256_file(&paths[1])?,
                atlas_sha256: sha256_file(&paths[2])?,
            });
        }
        let manifest = DataManifest {
            config_hash: cfg.hash(),
            seed: cfg.seed,
            dose_fraction: cfg.dose_fraction,
            scale_counts: cfg.scale_counts,
            phantom: cfg.phantom.clone(),
            reference_region: cfg.reference_region,
            subjects,
        };
        write_json(&self.layout.data_manifest(), &manifest)?;
        Ok(manifest)
    }

    fn data_manifest(&self) -> Result<DataManifest> {
        let path = self.layout.data_manifest();
        if !path.exists() {
            return Err(missing(&path, "generate-data"));
        }
        read_json(&path)
    }

    fn load_subjects(&self, ids: &[String]) -> Result<Vec<Subject>> {
        let manifest = self.data_manifest()?;
        ids.iter()
            .map(|id| {
                if !manifest.subjects.iter().any(|s| &s.subject_id == id) {
                    return Err(PipelineError::Missing(format!(
                        "subject {id} is not in {}; rerun `petrec generate-data --force`",
                        self.layout.data_manifest().display()
                    )));
                }
                let read = |kind: &str| {
                    let p = self.layout.subject_file(id, kind);
                    if !p.exists() {
                        return Err(missing(&p, "generate-data --force"));
                    }
                    Ok(p)
                };
                let (atlas, _) = read_atlas(&read("atlas")?)?;
                Ok(Subject {
                    id: id.clone(),
                    fpet: read_volume(&read("fpet")?)?,
                    lpet: read_volume(&read("lpet")?)?,
                    atlas,
                })
            })
            .collect()
    }

    // ---- train ----

    pub fn train(&self, phase: Phase) -> Result<Vec<TrainingSummary>> {
        let mut out = Vec::new();
        if matches!(phase, Phase::Transgan | Phase::All) {
            out.extend(self.train_transgan()?);
        }
        if matches!(phase, Phase::Sdam | Phase::All) {
            out.extend(self.train_sdam()?);
        }
        Ok(out)
    }

    fn fold_sets(&self, fold: usize) -> Result<(Vec<Subject>, Vec<Subject>, Normalizer)> {
        let roles = self.folds()?.roles(fold)?;
        let train = self.load_subjects(&roles.train)?;
        let val = self.load_subjects(&roles.val)?;
        let norm = Normalizer::fit(train.iter().map(|s| &s.fpet))?;
        Ok((train, val, norm))
    }

    pub fn train_transgan(&self) -> Result<Vec<TrainingSummary>> {
        let cfg = &self.config;
        self.data_manifest()?;
        for fold in 0..cfg.folds.folds_used {
            self.guard(&self.layout.checkpoint(fold, "transgan"), Some(&self.layout.fold_dir(fold)))?;
        }
        write_json(&self.layout.folds_file(), &self.folds()?)?;
        let mut summaries = Vec::new();
        for fold in 0..cfg.folds.folds_used {
            let started = Instant::now();
            let (train, val, norm) = self.fold_sets(fold)?;
            let set = PairedSet::new(
                train.iter().map(|s| norm.normalize(&s.lpet)).collect::<petrec_models::Result<_>>()?,
                train.iter().map(|s| norm.normalize(&s.fpet)).collect::<petrec_models::Result<_>>()?,
            )?;
            let vset = ValidationSet {
                inputs: val.iter().map(|s| norm.normalize(&s.lpet)).collect::<petrec_models::Result<_>>()?,
                truth: val.iter().map(|s| s.fpet.clone()).collect(),
                masks: val.iter().map(|s| s.brain_mask()).collect(),
            };
            let init_seed = derive_seed(cfg.seed, "transgan-init", fold as u64);
            let mut hyper = cfg.transgan_training.clone();
            hyper.seed ^= derive_seed(cfg.seed, "transgan-train", fold as u64);
            let mut model = TransGan::new(&cfg.transgan, init_seed, DTYPE)?;
            let outcome = train_transgan(&mut model, &set, &vset, &norm, &hyper)?;
            let meta = checkpoint::meta(
                "transgan",
                &cfg.transgan,
                &norm,
                init_seed,
                outcome.best_step,
                outcome.best_val_psnr,
            )?;
            save_transgan(&self.layout.checkpoint(fold, "transgan"), &model, &meta)?;
            write_csv(
                &self.layout.run_file(fold, "transgan_history.csv"),
                &["step", "l_gan_d", "l_gan_g", "l_charbonnier", "l_perceptual", "l_total_g"],
                outcome.history.iter().map(|b| {
                    vec![
                        b.step.to_string(),
                        b.l_gan_d.to_string(),
                        b.l_gan_g.to_string(),
                        b.l_charbonnier.to_string(),
                        b.l_perceptual.to_string(),
                        b.l_total_g.to_string(),
                    ]
                }),
            )?;
            write_validation_csv(&self.layout.run_file(fold, "transgan_validation.csv"), &outcome.validation)?;
            let summary = TrainingSummary {
                fold,
                phase: "transgan".into(),
                steps: outcome.history.len(),
                best_step: outcome.best_step,
                best_val_psnr: outcome.best_val_psnr,
                validation: outcome.validation,
                init_seed,
                train_seed: hyper.seed,
                trainable_parameters: model.parameter_count(),
                encoders_unchanged: Some(outcome.encoder_digest_before == outcome.encoder_digest_after),
                seconds: started.elapsed().as_secs_f64(),
            };
            write_json(&self.layout.run_file(fold, "transgan_summary.json"), &summary)?;
            summaries.push(summary);
        }
        Ok(summaries)
    }

    fn load_transgan(&self, fold: usize) -> Result<(TransGan, checkpoint::CheckpointMeta)> {
        let path = self.layout.checkpoint(fold, "transgan");
        if !path.exists() {
            return Err(missing(&path, "train --phase transgan"));
        }
        Ok(load_transgan(&path, DTYPE)?)
    }

    fn load_sdam(&self, fold: usize) -> Result<(Sdam, checkpoint::CheckpointMeta)> {
        let path = self.layout.checkpoint(fold, "sdam");
        if !path.exists() {
            return Err(missing(&path, "train --phase sdam"));
        }
        Ok(load_sdam(&path, DTYPE)?)
    }

    pub fn train_sdam(&self) -> Result<Vec<TrainingSummary>> {
        let cfg = &self.config;
        for fold in 0..cfg.folds.folds_used {
            let ck = self.layout.checkpoint(fold, "transgan");
            if !ck.exists() {
                return Err(missing(&ck, "train --phase transgan"));
            }
        }
        for fold in 0..cfg.folds.folds_used {
            self.guard(&self.layout.checkpoint(fold, "sdam"), Some(&self.layout.fold_dir(fold).join("generated")))?;
        }
        let batch = cfg.transgan_training.inference_batch;
        let mut summaries = Vec::new();
        for fold in 0..cfg.folds.folds_used {
            let started = Instant::now();
            let (gan, meta) = self.load_transgan(fold)?;
            let norm = meta.normalizer()?;
            let (train, val, _) = self.fold_sets(fold)?;
            let mut generate = |s: &Subject| -> Result<Volume3D> {
                let g = gan.generate_volume(&s.lpet, &norm, batch)?;
                write_volume(&g, &self.layout.generated_train(fold, &s.id))?;
                Ok(g)
            };
            let gen_train = train.iter().map(&mut generate).collect::<Result<Vec<_>>>()?;
            let gen_val = val.iter().map(&mut generate).collect::<Result<Vec<_>>>()?;
            let set = PairedSet::new(
                gen_train.iter().map(|g| norm.normalize(g)).collect::<petrec_models::Result<_>>()?,
                train.iter().map(|s| norm.normalize(&s.fpet)).collect::<petrec_models::Result<_>>()?,
            )?;
            let vset = ValidationSet {
                inputs: gen_val.iter().map(|g| norm.normalize(g)).collect::<petrec_models::Result<_>>()?,
                truth: val.iter().map(|s| s.fpet.clone()).collect(),
                masks: val.iter().map(|s| s.brain_mask()).collect(),
            };
            let init_seed = derive_seed(cfg.seed, "sdam-init", fold as u64);
            let mut hyper = cfg.sdam_training.clone();
            hyper.seed ^= derive_seed(cfg.seed, "sdam-train", fold as u64);
            let mut model = Sdam::new(&cfg.sdam, init_seed, DTYPE)?;
            let outcome = train_sdam(&mut model, &set, &vset, &norm, &hyper)?;
            let meta = checkpoint::meta("sdam", &cfg.sdam, &norm, init_seed, outcome.best_step, outcome.best_val_psnr)?;
            save_sdam(&self.layout.checkpoint(fold, "sdam"), &model, &meta)?;
            write_csv(
                &self.layout.run_file(fold, "sdam_history.csv"),
                &["step", "loss"],
                outcome
                    .history
                    .iter()
                    .enumerate()
                    .map(|(i, l)| vec![(i + 1).to_string(), l.to_string()]),
            )?;
            write_validation_csv(&self.layout.run_file(fold, "sdam_validation.csv"), &outcome.validation)?;
            let summary = TrainingSummary {
                fold,
                phase: "sdam".into(),
                steps: outcome.history.len(),
                best_step: outcome.best_step,
                best_val_psnr: outcome.best_val_psnr,
                validation: outcome.validation,
                init_seed,
                train_seed: hyper.seed,
                trainable_parameters: model.parameter_count(),
                encoders_unchanged: None,
                seconds: started.elapsed().as_secs_f64(),
            };
            write_json(&self.layout.run_file(fold, "sdam_summary.json"), &summary)?;
            summaries.push(summary);
        }
        Ok(summaries)
    }

    // ---- evaluate ----

    pub fn evaluate(&self) -> Result<RunManifest> {
        let cfg = &self.config;
        let started = Instant::now();
        for fold in 0..cfg.folds.folds_used {
            for (kind, hint) in [("transgan", "train --phase transgan"), ("sdam", "train --phase sdam")] {
                let p = self.layout.checkpoint(fold, kind);
                if !p.exists() {
                    return Err(missing(&p, hint));
                }
            }
        }
        self.guard(&self.layout.eval_manifest(), Some(&self.layout.eval_dir()))?;
        let folds = self.folds()?;
        let batch = cfg.transgan_training.inference_batch;
        let mut fold_reports = Vec::new();
        let mut pooled: BTreeMap<String, (Vec<MetricsReport>, Vec<SliceScore>)> = BTreeMap::new();
        let mut metric_rows = Vec::new();
        let mut slice_rows = Vec::new();
        let mut jsonl = String::new();
        let mut timings = Timings {
            transgan_train_seconds: Vec::new(),
            sdam_train_seconds: Vec::new(),
            evaluate_seconds: 0.0,
        };
        let mut counts = None;
        for fold in 0..cfg.folds.folds_used {
            let roles = folds.roles(fold)?;
            let (gan, gmeta) = self.load_transgan(fold)?;
            let (sdam, smeta) = self.load_sdam(fold)?;
            let norm = gmeta.normalizer()?;
            for (name, list) in [
                ("transgan_summary.json", &mut timings.transgan_train_seconds),
                ("sdam_summary.json", &mut timings.sdam_train_seconds),
            ] {
                if let Ok(s) = read_json::<TrainingSummary>(&self.layout.run_file(fold, name)) {
                    list.push(s.seconds);
                }
            }
            counts.get_or_insert_with(|| ParameterCounts {
                generator: gan.generator_store().trainable_count(),
                discriminator: gan.discriminator_store().trainable_count(),
                sdam: sdam.parameter_count(),
                trainable_total: gan.parameter_count() + sdam.parameter_count(),
                frozen_encoder_parameters: gan.encoders.vgg16.store().total_count()
                    + gan.encoders.vgg19.store().total_count(),
            });
            let mut per_fold: BTreeMap<String, (Vec<MetricsReport>, Vec<SliceScore>)> = BTreeMap::new();
            let mut subject_metrics = Vec::new();
            for s in self.load_subjects(&roles.test)? {
                let generated = gan.generate_volume(&s.lpet, &norm, batch)?;
                let refined = refine_volume(&sdam, &generated, &norm, batch)?;
                let dir = self.layout.eval_subject_dir(fold, &s.id);
                write_volume(&generated, &dir.join("generated.pvol"))?;
                write_volume(&refined, &dir.join("refined.pvol"))?;
                let mask = s.brain_mask();
                let vols = [&s.lpet, &generated, &refined];
                for (name, vol) in MODALITIES.iter().zip(vols) {
                    let report = evaluate_volume(&s.fpet, vol, &mask)?;
                    let slices = score_slices(&s.fpet, vol, &mask, report.data_range)?;
                    metric_rows.push(vec![
                        fold.to_string(),
                        s.id.clone(),
                        name.to_string(),
                        report.psnr_db.to_string(),
                        report.ssim.to_string(),
                        report.vsmd.to_string(),
                        report.n_voxels.to_string(),
                        report.mask_coverage.to_string(),
                    ]);
                    for sc in &slices {
                        slice_rows.push(vec![
                            fold.to_string(),
                            s.id.clone(),
                            name.to_string(),
                            sc.t.to_string(),
                            sc.psnr_db.to_string(),
                            sc.ssim.to_string(),
                        ]);
                    }
                    jsonl.push_str(&serde_json::to_string(&json!({"fold": fold, "modality": name, "report": report}))?);
                    jsonl.push('\n');
                    for bucket in [&mut per_fold, &mut pooled] {
                        let e = bucket.entry(name.to_string()).or_default();
                        e.0.push(report.clone());
                        e.1.extend(slices.iter().copied());
                    }
                    subject_metrics.push(SubjectMetrics {
                        modality: name.to_string(),
                        report,
                    });
                }
                if cfg.plots.difference_maps {
                    write_difference_maps(&dir, &s.fpet, &vols)?;
                }
            }
            fold_reports.push(FoldReport {
                test_fold: roles.test_fold,
                val_fold: roles.val_fold,
                train_subjects: roles.train.clone(),
                val_subjects: roles.val.clone(),
                test_subjects: roles.test.clone(),
                norm_scale: norm.scale,
                transgan: CheckpointInfo {
                    best_step: gmeta.best_step,
                    best_val_psnr: gmeta.best_val_psnr,
                    seed: gmeta.seed,
                },
                sdam: CheckpointInfo {
                    best_step: smeta.best_step,
                    best_val_psnr: smeta.best_val_psnr,
                    seed: smeta.seed,
                },
                metrics: summarize(&per_fold),
                subjects: subject_metrics,
            });
        }
        let ev = self.layout.eval_dir();
        write_csv(
            &ev.join("metrics.csv"),
            &["fold", "subject_id", "modality", "psnr_db", "ssim", "vsmd", "n_voxels", "mask_coverage"],
            metric_rows,
        )?;
        write_csv(&ev.join("slices.csv"), &["fold", "subject_id", "modality", "t", "psnr_db", "ssim"], slice_rows)?;
        crate::report::write_text(&ev.join("metrics.jsonl"), &jsonl)?;
        let suvr = self.write_suvr_report()?;
        timings.evaluate_seconds = started.elapsed().as_secs_f64();
        let manifest = RunManifest {
            config_hash: cfg.hash(),
            profile: cfg.profile,
            seeds: Seeds {
                master: cfg.seed,
                folds: derive_seed(cfg.seed, "folds", 0),
            },
            dose_fraction: cfg.dose_fraction,
            scale_counts: cfg.scale_counts,
            folds: fold_reports,
            overall: summarize(&pooled),
            suvr,
            parameter_counts: counts.expect("folds_used >= 1"),
            timings,
        };
        write_json(&self.layout.eval_manifest(), &manifest)?;
        Ok(manifest)
    }

    // ---- suvr-report ----

    /// Recompute SUVR tables and agreement statistics from evaluation outputs.
    pub fn suvr_report(&self) -> Result<SuvrSummary> {
        self.guard(&self.layout.suvr_dir().join("agreement.json"), Some(&self.layout.suvr_dir()))?;
        self.write_suvr_report()
    }

    fn write_suvr_report(&self) -> Result<SuvrSummary> {
        let cfg = &self.config;
        let folds = self.folds()?;
        // (fold, subject, volumes by modality)
        let mut evaluated: Vec<(usize, Subject, Vec<Volume3D>)> = Vec::new();
        for fold in 0..cfg.folds.folds_used {
            for s in self.load_subjects(&folds.roles(fold)?.test)? {
                let dir = self.layout.eval_subject_dir(fold, &s.id);
                let mut vols = vec![s.lpet.clone()];
                for kind in ["generated", "refined"] {
                    let p = dir.join(format!("{kind}.pvol"));
                    if !p.exists() {
                        return Err(missing(&p, "evaluate"));
                    }
                    vols.push(read_volume(&p)?);
                }
                evaluated.push((fold, s, vols));
            }
        }
        let out = self.layout.suvr_dir();
        let mut table_rows = Vec::new();
        for (fold, s, vols) in &evaluated {
            let mut tables = vec![("truth", compute_suvr(&s.fpet, &s.atlas)?)];
            for (name, v) in MODALITIES.iter().zip(vols) {
                tables.push((name, compute_suvr(v, &s.atlas)?));
            }
            for (name, t) in tables {
                for (r, v) in &t.values {
                    table_rows.push(vec![fold.to_string(), s.id.clone(), name.to_string(), r.to_string(), v.to_string()]);
                }
            }
        }
        write_csv(&out.join("suvr.csv"), &["fold", "subject_id", "modality", "region_id", "suvr"], table_rows)?;

        let mut summary = SuvrSummary {
            reference_region: cfg.reference_region,
            pooled: BTreeMap::new(),
            per_subject: BTreeMap::new(),
        };
        for (m, name) in MODALITIES.iter().enumerate() {
            let pairs: Vec<SubjectPair> = evaluated
                .iter()
                .map(|(_, s, vols)| SubjectPair {
                    test: &vols[m],
                    truth: &s.fpet,
                    atlas: &s.atlas,
                })
                .collect();
            let report = agreement_report(&pairs)?;
            let mut per = BTreeMap::new();
            for (_, s, vols) in &evaluated {
                let stats = bland_altman(&compute_suvr(&vols[m], &s.atlas)?, &compute_suvr(&s.fpet, &s.atlas)?)?;
                per.insert(s.id.clone(), stats);
            }
            write_csv(
                &out.join(format!("bland_altman_{name}.csv")),
                &["subject_id", "region_id", "test", "truth", "mean", "diff"],
                report.points.iter().map(|p| {
                    vec![
                        p.subject_id.clone(),
                        p.region_id.to_string(),
                        p.a.to_string(),
                        p.b.to_string(),
                        p.mean.to_string(),
                        p.diff.to_string(),
                    ]
                }),
            )?;
            if cfg.plots.bland_altman {
                let title = format!("SUVR agreement: {name} vs ground truth");
                crate::report::write_text(
                    &out.join(format!("bland_altman_{name}.svg")),
                    &bland_altman_svg(&title, &report.points, &report.stats),
                )?;
            }
            summary.pooled.insert(name.to_string(), report.stats);
            summary.per_subject.insert(name.to_string(), per);
        }
        write_json(&out.join("agreement.json"), &summary)?;
        Ok(summary)
    }

    // ---- info ----

    pub fn info(&self) -> Result<Value> {
        let cfg = &self.config;
        let gan = TransGan::new(&cfg.transgan, 0, DTYPE)?;
        let sdam = Sdam::new(&cfg.sdam, 0, DTYPE)?;
        let folds: Vec<Value> = (0..cfg.folds.folds_used)
            .map(|f| {
                json!({
                    "fold": f,
                    "transgan_checkpoint": self.layout.checkpoint(f, "transgan").exists(),
                    "sdam_checkpoint": self.layout.checkpoint(f, "sdam").exists(),
                })
            })
            .collect();
        Ok(json!({
            "config_hash": cfg.hash(),
            "config": cfg,
            "parameter_counts": {
                "generator": gan.generator_store().trainable_count(),
                "discriminator": gan.discriminator_store().trainable_count(),
                "sdam": sdam.parameter_count(),
                "trainable_total": gan.parameter_count() + sdam.parameter_count(),
                "frozen_encoder_parameters": gan.encoders.vgg16.store().total_count() + gan.encoders.vgg19.store().total_count(),
            },
            "data_present": self.layout.data_manifest().exists(),
            "folds": folds,
            "evaluated": self.layout.eval_manifest().exists(),
        }))
    }
}

use petrec_core::metrics::MetricsReport;

fn write_validation_csv(path: &Path, records: &[petrec_models::train::ValidationRecord]) -> Result<()> {
    write_csv(
        path,
        &["step", "psnr_db"],
        records.iter().map(|r| vec![r.step.to_string(), r.psnr_db.to_string()]),
    )
}

fn summarize(buckets: &BTreeMap<String, (Vec<MetricsReport>, Vec<SliceScore>)>) -> BTreeMap<String, ModalityStats> {
    buckets
        .iter()
        .map(|(name, (reports, slices))| {
            let pick = |f: fn(&MetricsReport) -> f64| MeanStd::of(&reports.iter().map(f).collect::<Vec<_>>());
            let stats = ModalityStats {
                n_subjects: reports.len(),
                n_slices: slices.len(),
                per_subject: SubjectLevel {
                    psnr_db: pick(|r| r.psnr_db),
                    ssim: pick(|r| r.ssim),
                    vsmd: pick(|r| r.vsmd),
                },
                per_slice: SliceLevel {
                    psnr_db: MeanStd::of(&slices.iter().map(|s| s.psnr_db).collect::<Vec<_>>()),
                    ssim: MeanStd::of(&slices.iter().map(|s| s.ssim).collect::<Vec<_>>()),
                },
            };
            (name.clone(), stats)
        })
        .collect()
}

/// Centre-slice |x - truth| maps sharing one colour scale across modalities.
fn write_difference_maps(dir: &Path, truth: &Volume3D, vols: &[&Volume3D; 3]) -> Result<()> {
    let [d, h, w] = truth.dims();
    let t = d / 2;
    let vmax = vols
        .iter()
        .flat_map(|v| v.slice(t).iter().zip(truth.slice(t)).map(|(a, b)| f64::from((a - b).abs())))
        .fold(0.0, f64::max);
    for (name, v) in MODALITIES.iter().zip(vols) {
        let rgb = difference_map(v.slice(t), truth.slice(t), vmax);
        write_png_rgb(&dir.join(format!("diff_{name}.png")), w, h, &rgb)?;
    }
    Ok(())
}

/// Difference-map image of `a` against `b` at one slice, as written by `evaluate`.
pub fn difference_image(a: &Volume3D, b: &Volume3D, t: usize, vmax: f64) -> Vec<u8> {
    difference_map(a.slice(t), b.slice(t), vmax)
}

