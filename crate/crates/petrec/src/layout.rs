//! On-disk artifact layout under the configured output directory.
//!
//! ```text
//! data/manifest.json
//! data/<subject>/{fpet,lpet,atlas}.pvol
//! runs/folds.json
//! runs/fold<t>/transgan.safetensors, transgan_history.csv, transgan_validation.csv, transgan_summary.json
//! runs/fold<t>/generated/<subject>.pvol
//! runs/fold<t>/sdam.safetensors, sdam_history.csv, sdam_validation.csv, sdam_summary.json
//! eval/manifest.json, metrics.csv, metrics.jsonl, slices.csv
//! eval/fold<t>/<subject>/{generated,refined}.pvol, diff_{lpet,generated,refined}.png
//! eval/suvr/suvr.csv, agreement.json, bland_altman_<modality>.{csv,svg}
//! ```

use std::path::{Path, PathBuf};

#[derive(Debug, Clone)]
pub struct Layout {
    root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn data_dir(&self) -> PathBuf {
        self.root.join("data")
    }

    pub fn data_manifest(&self) -> PathBuf {
        self.data_dir().join("manifest.json")
    }

    pub fn subject_file(&self, subject: &str, kind: &str) -> PathBuf {
        self.data_dir().join(subject).join(format!("{kind}.pvol"))
    }

    pub fn runs_dir(&self) -> PathBuf {
        self.root.join("runs")
    }

    pub fn folds_file(&self) -> PathBuf {
        self.runs_dir().join("folds.json")
    }

    pub fn fold_dir(&self, fold: usize) -> PathBuf {
        self.runs_dir().join(format!("fold{fold}"))
    }

    pub fn checkpoint(&self, fold: usize, kind: &str) -> PathBuf {
        self.fold_dir(fold).join(format!("{kind}.safetensors"))
    }

    pub fn run_file(&self, fold: usize, name: &str) -> PathBuf {
        self.fold_dir(fold).join(name)
    }

    pub fn generated_train(&self, fold: usize, subject: &str) -> PathBuf {
        self.fold_dir(fold).join("generated").join(format!("{subject}.pvol"))
    }

    pub fn eval_dir(&self) -> PathBuf {
        self.root.join("eval")
    }

    pub fn eval_manifest(&self) -> PathBuf {
        self.eval_dir().join("manifest.json")
    }

    pub fn eval_subject_dir(&self, fold: usize, subject: &str) -> PathBuf {
        self.eval_dir().join(format!("fold{fold}")).join(subject)
    }

    pub fn suvr_dir(&self) -> PathBuf {
        self.eval_dir().join("suvr")
    }
}
