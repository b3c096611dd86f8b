//! The segmenter comparison table: one row per segmenter, WER per decoding mode.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::corpus::{SpokenUtterance, UtteranceRecord};
use crate::decoder::{DecodeConfig, Mode};
use crate::error::Result;
use crate::metrics::MetricsReport;
use crate::segmenters::SegmenterKind;
use crate::transducer::RnntParams;

use super::artifacts::sha256_hex;
use super::config::{ExperimentConfig, ModelChoice};
use super::stages::evaluate;

pub const TABLE_HEADER: [&str; 8] = [
    "segmenter",
    "SL50",
    "SL90",
    "EOS50",
    "EOS90",
    "WER_mode1",
    "WER_mode2",
    "WER_mode3",
];

#[derive(Debug, Clone, Default)]
pub struct Models {
    pub base: Option<RnntParams>,
    pub semantic: Option<RnntParams>,
    pub pause: Option<RnntParams>,
}

impl Models {
    pub fn get(&self, m: ModelChoice) -> Option<&RnntParams> {
        match m {
            ModelChoice::Base => self.base.as_ref(),
            ModelChoice::Semantic => self.semantic.as_ref(),
            ModelChoice::Pause => self.pause.as_ref(),
        }
    }

    /// SHA-256 of each present checkpoint's serialized form.
    pub fn hashes(&self) -> BTreeMap<String, String> {
        [ModelChoice::Base, ModelChoice::Semantic, ModelChoice::Pause]
            .into_iter()
            .filter_map(|m| {
                let p = self.get(m)?;
                Some((
                    m.as_str().to_string(),
                    sha256_hex(&serde_json::to_vec(p).expect("params serialize")),
                ))
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowResult {
    pub name: String,
    pub segmenter: SegmenterKind,
    pub model: ModelChoice,
    /// Keyed by mode number.
    pub by_mode: BTreeMap<u8, MetricsReport>,
    pub errors: Vec<String>,
}

impl RowResult {
    /// The run whose segment lengths and latencies the row reports: mode 1
    /// when available, else the lowest mode that ran.
    pub fn timing(&self) -> Option<&MetricsReport> {
        self.by_mode.values().next()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableReport {
    pub rows: Vec<RowResult>,
    pub modes: Vec<Mode>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableManifest {
    pub config_hash: String,
    pub seeds: BTreeMap<String, u64>,
    pub checkpoints: BTreeMap<String, String>,
    pub eval_corpus_sha256: String,
    pub row_errors: BTreeMap<String, Vec<String>>,
}

/// Hash of the evaluation corpus in its JSON Lines form.
fn corpus_hash(eval: &[SpokenUtterance]) -> String {
    let mut bytes = Vec::new();
    for u in eval {
        serde_json::to_writer(&mut bytes, &UtteranceRecord::from(u)).expect("records serialize");
        bytes.push(b'\n');
    }
    sha256_hex(&bytes)
}

/// Decodes the evaluation corpus for every row and mode. A row whose
/// checkpoint is missing, or whose decode fails, records the error and the
/// remaining rows still run.
pub fn run_table(
    cfg: &ExperimentConfig,
    models: &Models,
    eval: &[SpokenUtterance],
) -> (TableReport, TableManifest) {
    let mut modes = cfg.table.modes.clone();
    modes.sort_by_key(|m| m.number());
    modes.dedup();
    let mut rows = Vec::new();
    for row in &cfg.table.rows {
        let mut res = RowResult {
            name: row.name.clone(),
            segmenter: row.segmenter,
            model: row.model,
            by_mode: BTreeMap::new(),
            errors: Vec::new(),
        };
        match models.get(row.model) {
            None => res
                .errors
                .push(format!("missing {} checkpoint", row.model.as_str())),
            Some(params) => {
                for &mode in &modes {
                    let dcfg = DecodeConfig {
                        mode,
                        segmenter: row.segmenter,
                        ..cfg.decode.clone()
                    };
                    match evaluate(params, eval, &dcfg) {
                        Ok(r) => {
                            res.by_mode.insert(mode.number(), r);
                        }
                        Err(e) => res.errors.push(format!("mode {}: {e}", mode.number())),
                    }
                }
            }
        }
        rows.push(res);
    }
    let manifest = TableManifest {
        config_hash: cfg.hash(),
        seeds: cfg.seeds(),
        checkpoints: models.hashes(),
        eval_corpus_sha256: corpus_hash(eval),
        row_errors: rows
            .iter()
            .filter(|r| !r.errors.is_empty())
            .map(|r| (r.name.clone(), r.errors.clone()))
            .collect(),
    };
    (TableReport { rows, modes }, manifest)
}

fn cell(v: Option<f64>, decimals: usize) -> String {
    v.map_or_else(String::new, |x| format!("{x:.decimals$}"))
}

/// Summary layout. Lengths in seconds, latencies in ms, WER in percent.
/// Cells that do not apply, or whose mode was not run, are empty.
pub fn write_table_csv<W: Write>(w: W, report: &TableReport) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(TABLE_HEADER)?;
    for r in &report.rows {
        let t = r.timing();
        let wer = |m: u8| cell(r.by_mode.get(&m).map(|x| 100.0 * x.wer), 2);
        out.write_record([
            r.name.clone(),
            cell(t.and_then(|x| x.sl50), 2),
            cell(t.and_then(|x| x.sl90), 2),
            cell(t.and_then(|x| x.eos50), 0),
            cell(t.and_then(|x| x.eos90), 0),
            wer(1),
            wer(2),
            wer(3),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Every metric for every (row, mode) cell.
pub fn write_table_detail_csv<W: Write>(w: W, report: &TableReport) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "segmenter",
        "model",
        "mode",
        "wer",
        "substitutions",
        "deletions",
        "insertions",
        "sl50",
        "sl90",
        "eos50",
        "eos90",
        "precision",
        "recall",
        "f1",
        "n_segments",
    ])?;
    for r in &report.rows {
        for (mode, m) in &r.by_mode {
            out.write_record([
                r.name.clone(),
                r.model.as_str().to_string(),
                mode.to_string(),
                format!("{:.6}", m.wer),
                m.substitutions.to_string(),
                m.deletions.to_string(),
                m.insertions.to_string(),
                cell(m.sl50, 3),
                cell(m.sl90, 3),
                cell(m.eos50, 1),
                cell(m.eos90, 1),
                format!("{:.6}", m.precision),
                format!("{:.6}", m.recall),
                format!("{:.6}", m.f1),
                m.n_segments.to_string(),
            ])?;
        }
    }
    out.flush()?;
    Ok(())
}
