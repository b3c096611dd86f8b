//! Experiment orchestration: configuration, the segmenter comparison table, the
//! bias/threshold ablation and the end-to-end pipeline.

mod ablation;
mod artifacts;
mod config;
pub mod layout;
mod pipeline;
mod stages;
mod table;

pub use ablation::{
    ablation_svg, argmins, parse_ablation_csv, run_ablation, write_ablation_csv, write_argmins_csv,
    AblationPoint, AblationReport, Argmin,
};
pub use artifacts::{
    file_sha256, read_json, read_jsonl, read_labels, sha256_hex, write_json, write_jsonl,
    write_labels,
};
pub use config::{
    bias_key, AblationSpec, CorpusSpec, ExperimentConfig, ModelChoice, Paths, TableRow, TableSpec,
};
pub use pipeline::{
    check_output_dir, run_e2e_pipeline, write_ablation_outputs, write_table_outputs,
    write_teacher_eval_csv, Manifest, StageRecord, StageStatus,
};
pub use stages::{
    annotate_pause, annotate_semantic, annotate_written, decode_corpus, evaluate, finetune_on,
    gen_corpora, train_base_model, train_teacher, Corpora,
};
pub use table::{
    run_table, write_table_csv, write_table_detail_csv, Models, RowResult, TableManifest,
    TableReport,
};
