//! Relative paths of the artifacts in a run directory.

use super::config::bias_key;

pub const CONFIG: &str = "config.json";
pub const MANIFEST: &str = "manifest.json";
pub const SUBDIRS: [&str; 6] = [
    "corpus",
    "annotations",
    "models",
    "logs",
    "reports",
    "decode",
];

pub const WRITTEN: &str = "corpus/written.jsonl";
pub const HELDOUT: &str = "corpus/heldout.jsonl";
pub const TRAIN: &str = "corpus/train.jsonl";
pub const EVAL: &str = "corpus/eval.jsonl";
pub const WRITTEN_ANNOTATED: &str = "corpus/written_annotated.jsonl";
pub const HELDOUT_ANNOTATED: &str = "corpus/heldout_annotated.jsonl";

pub const TEACHER: &str = "models/teacher.json";
pub const SEMANTIC_LABELS: &str = "annotations/semantic.jsonl";
pub const PAUSE_LABELS: &str = "annotations/pause.jsonl";

pub const BASE: &str = "models/base.json";
pub const BASE_LOG: &str = "logs/base_train.csv";
pub const EOS_SEMANTIC: &str = "models/eos_semantic.json";
pub const EOS_PAUSE: &str = "models/eos_pause.json";

pub const DECODED: &str = "decode/decoded.jsonl";

pub const TEACHER_EVAL: &str = "reports/teacher_eval.csv";
pub const AGREEMENT: &str = "reports/annotation_agreement.csv";
pub const EVAL_REPORT: &str = "reports/eval.csv";
pub const TABLE: &str = "reports/table.csv";
pub const TABLE_DETAIL: &str = "reports/table_detail.csv";
pub const TABLE_MANIFEST: &str = "reports/table_manifest.json";
pub const ABLATION: &str = "reports/ablation.csv";
pub const ABLATION_SVG: &str = "reports/ablation.svg";
pub const ABLATION_ARGMIN: &str = "reports/ablation_argmin.csv";

pub fn semantic_bias_labels(bias: f64) -> String {
    format!("annotations/semantic_bias_{}.jsonl", bias_key(bias))
}

pub fn eos_bias_model(bias: f64) -> String {
    format!("models/eos_bias_{}.json", bias_key(bias))
}

/// Model and log paths of an EOS fine-tune named `name`.
pub fn eos_model(name: &str) -> (String, String) {
    (
        format!("models/{name}.json"),
        format!("logs/{name}_train.csv"),
    )
}
