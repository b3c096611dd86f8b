use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{GrammarSpec, UtteranceSpec};
use crate::decoder::{DecodeConfig, Mode};
use crate::error::{Error, Result};
use crate::rng::{fnv1a, splitmix};
use crate::segmenters::SegmenterKind;
use crate::teacher::{TeacherHyper, DEFAULT_SILENCE_THRESHOLD_MS};
use crate::transducer::RnntHyper;

use super::artifacts::sha256_hex;

/// Frame size of the experiment corpora. Coarser than the corpus default so
/// that desk-scale training finishes in seconds.
const EXPERIMENT_FRAME_MS: f64 = 40.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusSpec {
    pub utterance: UtteranceSpec,
    pub count: usize,
}

/// Which checkpoint a table row decodes with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelChoice {
    Base,
    Semantic,
    Pause,
}

impl ModelChoice {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelChoice::Base => "base",
            ModelChoice::Semantic => "semantic",
            ModelChoice::Pause => "pause",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableRow {
    pub name: String,
    pub segmenter: SegmenterKind,
    #[serde(default = "default_model")]
    pub model: ModelChoice,
}

fn default_model() -> ModelChoice {
    ModelChoice::Base
}

impl TableRow {
    fn new(name: &str, segmenter: SegmenterKind, model: ModelChoice) -> Self {
        TableRow {
            name: name.into(),
            segmenter,
            model,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TableSpec {
    pub rows: Vec<TableRow>,
    pub modes: Vec<Mode>,
}

impl Default for TableSpec {
    fn default() -> Self {
        let eos = SegmenterKind::Eos { threshold: 3.0 };
        TableSpec {
            rows: vec![
                TableRow::new("E1 none", SegmenterKind::None, ModelChoice::Base),
                TableRow::new(
                    "E2 fixed-3s",
                    SegmenterKind::Fixed { length_s: 3.0 },
                    ModelChoice::Base,
                ),
                TableRow::new(
                    "E3 fixed-5s",
                    SegmenterKind::Fixed { length_s: 5.0 },
                    ModelChoice::Base,
                ),
                TableRow::new(
                    "E4 fixed-10s",
                    SegmenterKind::Fixed { length_s: 10.0 },
                    ModelChoice::Base,
                ),
                TableRow::new(
                    "E5 vad",
                    SegmenterKind::Vad {
                        min_silence_ms: 400.0,
                    },
                    ModelChoice::Base,
                ),
                TableRow::new("E6 eos-pause", eos, ModelChoice::Pause),
                TableRow::new("E7 eos-semantic", eos, ModelChoice::Semantic),
            ],
            modes: Mode::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationSpec {
    pub biases: Vec<f64>,
    pub thresholds: Vec<f64>,
    /// Decoding mode whose WER is plotted.
    pub mode: Mode,
}

impl Default for AblationSpec {
    fn default() -> Self {
        AblationSpec {
            biases: vec![-5.0, 0.0, 5.0],
            thresholds: vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0],
            mode: Mode::One,
        }
    }
}

/// Pre-existing artifacts consumed by the `table` and `ablate` commands.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub eval_corpus: Option<PathBuf>,
    pub base_checkpoint: Option<PathBuf>,
    pub semantic_checkpoint: Option<PathBuf>,
    pub pause_checkpoint: Option<PathBuf>,
    /// Keyed by the bias as written in the ablation grid, e.g. `"-5"`.
    pub bias_checkpoints: BTreeMap<String, PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Master seed; every component seed is derived from it.
    pub seed: u64,
    pub grammar: GrammarSpec,
    pub written_paragraphs: usize,
    pub train_corpus: CorpusSpec,
    pub eval_corpus: CorpusSpec,
    pub teacher: TeacherHyper,
    /// Bias of the semantic teacher when annotating for the table models.
    pub teacher_bias: f64,
    pub pause_threshold_ms: f64,
    pub base: RnntHyper,
    pub finetune: RnntHyper,
    pub decode: DecodeConfig,
    pub table: TableSpec,
    pub ablation: AblationSpec,
    pub paths: Paths,
    pub output_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let utterance = UtteranceSpec {
            n_sentences: 2,
            hesitation_prob: 0.3,
            hesitation_ms_range: (600.0, 600.0),
            frame_ms: EXPERIMENT_FRAME_MS,
            ..UtteranceSpec::default()
        };
        ExperimentConfig {
            seed: 1,
            grammar: GrammarSpec::default(),
            written_paragraphs: 300,
            train_corpus: CorpusSpec {
                utterance: utterance.clone(),
                count: 200,
            },
            eval_corpus: CorpusSpec {
                utterance: UtteranceSpec {
                    n_sentences: 4,
                    ..utterance
                },
                count: 30,
            },
            teacher: TeacherHyper::default(),
            teacher_bias: 0.0,
            pause_threshold_ms: DEFAULT_SILENCE_THRESHOLD_MS,
            base: RnntHyper::default(),
            finetune: RnntHyper {
                epochs: 10,
                ..RnntHyper::default()
            },
            decode: DecodeConfig::default(),
            table: TableSpec::default(),
            ablation: AblationSpec::default(),
            paths: Paths::default(),
            output_dir: None,
        }
    }
}

impl Default for CorpusSpec {
    fn default() -> Self {
        CorpusSpec {
            utterance: UtteranceSpec::default(),
            count: 1,
        }
    }
}

fn derive_seed(seed: u64, tag: &str) -> u64 {
    splitmix(seed ^ fnv1a(tag.as_bytes()))
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.grammar.validate()?;
        self.train_corpus.utterance.validate()?;
        self.eval_corpus.utterance.validate()?;
        self.teacher.validate()?;
        self.base.validate()?;
        self.finetune.validate()?;
        self.decode.validate()?;
        if self.written_paragraphs == 0 {
            return Err(Error::invalid("written_paragraphs", "must be positive"));
        }
        if self.train_corpus.count == 0 || self.eval_corpus.count == 0 {
            return Err(Error::invalid("count", "corpora must be non-empty"));
        }
        if self.train_corpus.utterance.frame_ms != self.eval_corpus.utterance.frame_ms {
            return Err(Error::invalid(
                "frame_ms",
                "train and eval corpora must share a frame size",
            ));
        }
        if self.train_corpus.utterance.feature_dim != self.base.dims.feature_dim
            || self.eval_corpus.utterance.feature_dim != self.base.dims.feature_dim
        {
            return Err(Error::invalid(
                "feature_dim",
                "corpora must match the model input size",
            ));
        }
        if !self.teacher_bias.is_finite() {
            return Err(Error::invalid("teacher_bias", "must be finite"));
        }
        if !(self.pause_threshold_ms >= 0.0) {
            return Err(Error::invalid("pause_threshold_ms", "must be non-negative"));
        }
        if self.table.rows.is_empty() || self.table.modes.is_empty() {
            return Err(Error::invalid("table", "rows and modes must be non-empty"));
        }
        for r in &self.table.rows {
            r.segmenter.validate()?;
        }
        if self.ablation.biases.is_empty() || self.ablation.thresholds.is_empty() {
            return Err(Error::invalid(
                "ablation",
                "bias and threshold grids must be non-empty",
            ));
        }
        if self
            .ablation
            .biases
            .iter()
            .chain(&self.ablation.thresholds)
            .any(|x| !x.is_finite())
        {
            return Err(Error::invalid("ablation", "grid values must be finite"));
        }
        Ok(())
    }

    /// Copy with every component seed derived from `seed`.
    pub fn resolved(&self) -> ExperimentConfig {
        let mut c = self.clone();
        let s = self.seed;
        c.grammar.seed = s;
        c.train_corpus.utterance.seed = derive_seed(s, "train-corpus");
        c.eval_corpus.utterance.seed = derive_seed(s, "eval-corpus");
        c.teacher.seed = derive_seed(s, "teacher");
        c.base.seed = derive_seed(s, "base");
        c.finetune.seed = derive_seed(s, "finetune");
        c
    }

    /// Component seeds as recorded in manifests.
    pub fn seeds(&self) -> BTreeMap<String, u64> {
        let r = self.resolved();
        BTreeMap::from([
            ("master".to_string(), r.seed),
            ("grammar".to_string(), r.grammar.seed),
            ("train_corpus".to_string(), r.train_corpus.utterance.seed),
            ("eval_corpus".to_string(), r.eval_corpus.utterance.seed),
            ("teacher".to_string(), r.teacher.seed),
            ("base".to_string(), r.base.seed),
            ("finetune".to_string(), r.finetune.seed),
        ])
    }

    /// SHA-256 of the canonical JSON of the resolved config.
    pub fn hash(&self) -> String {
        sha256_hex(&serde_json::to_vec(&self.resolved()).expect("config serializes"))
    }

    pub fn frame_ms(&self) -> f64 {
        self.eval_corpus.utterance.frame_ms
    }
}

/// Canonical text for a bias value, used in file names and path keys.
pub fn bias_key(b: f64) -> String {
    format!("{b}")
}
