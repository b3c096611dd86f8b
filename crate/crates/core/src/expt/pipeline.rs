//! Full run: corpora, annotations, teachers, base and EOS models, the table
//! and the ablation, with a manifest of every stage's input and output
//! hashes.

use std::collections::BTreeMap;
use std::fs::File;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{write_utterances, SpokenUtterance};
use crate::error::{Error, Result};
use crate::metrics::PrecisionRecall;
use crate::punct::Label;
use crate::teacher::semantic::labeled_windows;
use crate::teacher::{teacher_eval, TeacherEval};
use crate::transducer::RnntParams;

use super::ablation::{
    ablation_svg, argmins, run_ablation, write_ablation_csv, write_argmins_csv, AblationReport,
};
use super::artifacts::{file_sha256, write_json, write_jsonl, write_labels};
use super::config::{bias_key, ExperimentConfig};
use super::layout as L;
use super::stages::{
    annotate_pause, annotate_semantic, annotate_written, finetune_on, gen_corpora,
    train_base_model, train_teacher,
};
use super::table::{
    run_table, write_table_csv, write_table_detail_csv, Models, TableManifest, TableReport,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub status: StageStatus,
    /// Relative path → SHA-256.
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub seeds: BTreeMap<String, u64>,
    pub stages: Vec<StageRecord>,
    pub warnings: Vec<String>,
}

struct Runner<'a> {
    out: PathBuf,
    manifest: Manifest,
    progress: &'a mut dyn FnMut(&str),
}

impl Runner<'_> {
    fn path(&self, rel: &str) -> PathBuf {
        self.out.join(rel)
    }

    fn hashes(&self, rels: &[String]) -> Result<BTreeMap<String, String>> {
        rels.iter()
            .map(|r| Ok((r.clone(), file_sha256(&self.path(r))?)))
            .collect()
    }

    fn save_manifest(&self) -> Result<()> {
        let f = File::create(self.path(L::MANIFEST))?;
        serde_json::to_writer_pretty(f, &self.manifest)?;
        Ok(())
    }

    /// Runs `body`, which returns the relative paths it wrote, and records
    /// the stage. A failure is recorded, the manifest saved, and the error
    /// returned with the stage named.
    fn stage<T>(
        &mut self,
        name: &str,
        inputs: &[String],
        body: impl FnOnce(&Path) -> Result<(T, Vec<String>)>,
    ) -> Result<T> {
        (self.progress)(name);
        let fail = |runner: &mut Self, message: String| {
            runner.manifest.stages.push(StageRecord {
                name: name.into(),
                status: StageStatus::Failed,
                inputs: BTreeMap::new(),
                outputs: BTreeMap::new(),
                error: Some(message.clone()),
            });
            let _ = runner.save_manifest();
            Error::Stage {
                stage: name.into(),
                message,
            }
        };
        let input_hashes = match self.hashes(inputs) {
            Ok(h) => h,
            Err(e) => return Err(fail(self, e.to_string())),
        };
        let (value, outputs) = match body(&self.out) {
            Ok(v) => v,
            Err(e) => return Err(fail(self, e.to_string())),
        };
        let output_hashes = match self.hashes(&outputs) {
            Ok(h) => h,
            Err(e) => return Err(fail(self, e.to_string())),
        };
        self.manifest.stages.push(StageRecord {
            name: name.into(),
            status: StageStatus::Ok,
            inputs: input_hashes,
            outputs: output_hashes,
            error: None,
        });
        self.save_manifest()?;
        Ok(value)
    }
}

fn agreement(predicted: &[Vec<Label>], utts: &[SpokenUtterance]) -> PrecisionRecall {
    let mut pr = PrecisionRecall::default();
    for (p, u) in predicted.iter().zip(utts) {
        for (a, b) in p.iter().zip(u.truth.labels()) {
            pr.add(a.is_eos(), b.is_eos());
        }
    }
    pr
}

pub fn write_teacher_eval_csv(path: &Path, e: &TeacherEval) -> Result<()> {
    let row = [
        e.label_accuracy,
        e.full_sequence_accuracy,
        e.precision,
        e.recall,
        e.f1,
    ]
    .map(|x| format!("{x:.6}"));
    write_csv_file(
        path,
        &[
            "label_accuracy",
            "full_sequence_accuracy",
            "precision",
            "recall",
            "f1",
        ],
        &[row.to_vec()],
    )
}

fn write_csv_file(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

fn save_model(dir: &Path, rel: &str, params: &RnntParams) -> Result<()> {
    params.save(&dir.join(rel))
}

/// Writes the table CSVs and manifest under `dir`; returns their relative paths.
pub fn write_table_outputs(
    dir: &Path,
    report: &TableReport,
    manifest: &TableManifest,
) -> Result<Vec<String>> {
    write_table_csv(File::create(dir.join(L::TABLE))?, report)?;
    write_table_detail_csv(File::create(dir.join(L::TABLE_DETAIL))?, report)?;
    write_json(&dir.join(L::TABLE_MANIFEST), manifest)?;
    Ok([L::TABLE, L::TABLE_DETAIL, L::TABLE_MANIFEST]
        .map(String::from)
        .to_vec())
}

/// Writes the ablation grid, its plot and the per-bias argmins under `dir`.
pub fn write_ablation_outputs(dir: &Path, report: &AblationReport) -> Result<Vec<String>> {
    let mut buf = Vec::new();
    write_ablation_csv(&mut buf, &report.points)?;
    let text = String::from_utf8(buf).expect("csv is utf-8");
    std::fs::write(dir.join(L::ABLATION), &text)?;
    std::fs::write(dir.join(L::ABLATION_SVG), ablation_svg(&text, report.mode)?)?;
    write_argmins_csv(
        File::create(dir.join(L::ABLATION_ARGMIN))?,
        &argmins(&report.points),
    )?;
    Ok([L::ABLATION, L::ABLATION_SVG, L::ABLATION_ARGMIN]
        .map(String::from)
        .to_vec())
}

/// Refuses a non-empty `out` unless `force` is set.
pub fn check_output_dir(out: &Path, force: bool) -> Result<()> {
    if !force && out.exists() && std::fs::read_dir(out)?.next().is_some() {
        return Err(Error::Exists(out.to_path_buf()));
    }
    Ok(())
}

/// Generate → annotate (both teachers) → train base → fine-tune (both, and
/// once per ablation bias) → table → ablation. Every artifact lands under
/// `out`; `manifest.json` is rewritten after each stage so a failed run
/// keeps its partial record.
pub fn run_e2e_pipeline(
    cfg: &ExperimentConfig,
    out: &Path,
    force: bool,
    progress: &mut dyn FnMut(&str),
) -> Result<Manifest> {
    cfg.validate()?;
    check_output_dir(out, force)?;
    for sub in L::SUBDIRS {
        std::fs::create_dir_all(out.join(sub))?;
    }
    let mut r = Runner {
        out: out.to_path_buf(),
        manifest: Manifest {
            config_hash: cfg.hash(),
            seeds: cfg.seeds(),
            stages: Vec::new(),
            warnings: Vec::new(),
        },
        progress,
    };
    let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();

    r.stage("config", &[], |d| {
        let mut text = serde_json::to_string_pretty(cfg)?;
        text.push('\n');
        std::fs::write(d.join(L::CONFIG), text)?;
        Ok(((), s(&[L::CONFIG])))
    })?;

    let corpora = r.stage("gen", &s(&[L::CONFIG]), |d| {
        let c = gen_corpora(cfg)?;
        write_jsonl(&d.join(L::WRITTEN), &c.written)?;
        write_jsonl(&d.join(L::HELDOUT), &c.heldout)?;
        write_utterances(File::create(d.join(L::TRAIN))?, &c.train)?;
        write_utterances(File::create(d.join(L::EVAL))?, &c.eval)?;
        Ok((c, s(&[L::WRITTEN, L::HELDOUT, L::TRAIN, L::EVAL])))
    })?;

    let (annotated, heldout) = r.stage("annotate", &s(&[L::WRITTEN, L::HELDOUT]), |d| {
        let a = annotate_written(cfg, &corpora.written);
        let h = annotate_written(cfg, &corpora.heldout);
        write_jsonl(&d.join(L::WRITTEN_ANNOTATED), &a)?;
        write_jsonl(&d.join(L::HELDOUT_ANNOTATED), &h)?;
        Ok(((a, h), s(&[L::WRITTEN_ANNOTATED, L::HELDOUT_ANNOTATED])))
    })?;

    let teacher = r.stage("teach-train", &s(&[L::WRITTEN_ANNOTATED]), |d| {
        let t = train_teacher(cfg, &annotated)?;
        write_json(&d.join(L::TEACHER), &t)?;
        Ok((t, s(&[L::TEACHER])))
    })?;

    r.stage("teach-eval", &s(&[L::TEACHER, L::HELDOUT_ANNOTATED]), |d| {
        let windows = labeled_windows(&heldout, teacher.window, teacher.overlap)?;
        let e = teacher_eval(&teacher, &windows)?;
        write_teacher_eval_csv(&d.join(L::TEACHER_EVAL), &e)?;
        Ok(((), s(&[L::TEACHER_EVAL])))
    })?;

    let biases = cfg.ablation.biases.clone();
    let (semantic_labels, pause_labels, bias_labels) =
        r.stage("teach-annotate", &s(&[L::TEACHER, L::TRAIN]), |d| {
            let sem = annotate_semantic(&teacher, &corpora.train, cfg.teacher_bias);
            let pause = annotate_pause(&corpora.train, cfg.pause_threshold_ms)?;
            write_labels(&d.join(L::SEMANTIC_LABELS), &sem)?;
            write_labels(&d.join(L::PAUSE_LABELS), &pause)?;
            let mut outs = s(&[L::SEMANTIC_LABELS, L::PAUSE_LABELS]);
            let mut per_bias = BTreeMap::new();
            for &b in &biases {
                let labels = annotate_semantic(&teacher, &corpora.train, b);
                let rel = L::semantic_bias_labels(b);
                write_labels(&d.join(&rel), &labels)?;
                outs.push(rel);
                per_bias.insert(bias_key(b), labels);
            }
            let mut rows = vec![
                ("semantic".to_string(), agreement(&sem, &corpora.train)),
                ("pause".to_string(), agreement(&pause, &corpora.train)),
            ];
            for &b in &biases {
                rows.push((
                    format!("semantic bias {}", bias_key(b)),
                    agreement(&per_bias[&bias_key(b)], &corpora.train),
                ));
            }
            let rows: Vec<Vec<String>> = rows
                .into_iter()
                .map(|(name, pr)| {
                    let (p, rc, f) = pr.scores();
                    vec![
                        name,
                        format!("{p:.6}"),
                        format!("{rc:.6}"),
                        format!("{f:.6}"),
                    ]
                })
                .collect();
            write_csv_file(
                &d.join(L::AGREEMENT),
                &["teacher", "precision", "recall", "f1"],
                &rows,
            )?;
            outs.push(L::AGREEMENT.into());
            Ok(((sem, pause, per_bias), outs))
        })?;

    let base = r.stage("train-base", &s(&[L::TRAIN]), |d| {
        let (p, log) = train_base_model(cfg, &corpora.train)?;
        save_model(d, L::BASE, &p)?;
        log.write_csv(File::create(d.join(L::BASE_LOG))?)?;
        Ok((p, s(&[L::BASE, L::BASE_LOG])))
    })?;

    let mut ft_inputs = s(&[L::BASE, L::TRAIN, L::SEMANTIC_LABELS, L::PAUSE_LABELS]);
    ft_inputs.extend(biases.iter().map(|&b| L::semantic_bias_labels(b)));
    let mut warnings = Vec::new();
    let (semantic, pause, per_bias) = r.stage("finetune-eos", &ft_inputs, |d| {
        let mut outs = Vec::new();
        let mut tune = |labels: &[Vec<Label>], name: &str| -> Result<RnntParams> {
            let (p, log) = finetune_on(cfg, &base, &corpora.train, labels)?;
            warnings.extend(log.warnings.iter().map(|w| format!("{name}: {w}")));
            let (model, log_path) = L::eos_model(name);
            save_model(d, &model, &p)?;
            log.write_csv(File::create(d.join(&log_path))?)?;
            outs.push(model);
            outs.push(log_path);
            Ok(p)
        };
        let sem = tune(&semantic_labels, "eos_semantic")?;
        let pau = tune(&pause_labels, "eos_pause")?;
        let mut per_bias = BTreeMap::new();
        for &b in &biases {
            let p = tune(
                &bias_labels[&bias_key(b)],
                &format!("eos_bias_{}", bias_key(b)),
            )?;
            per_bias.insert(bias_key(b), p);
        }
        Ok(((sem, pau, per_bias), outs))
    })?;
    r.manifest.warnings.extend(warnings);

    let models = Models {
        base: Some(base),
        semantic: Some(semantic),
        pause: Some(pause),
    };
    r.stage(
        "table",
        &s(&[L::EVAL, L::BASE, L::EOS_SEMANTIC, L::EOS_PAUSE]),
        |d| {
            let (report, manifest) = run_table(cfg, &models, &corpora.eval);
            let outs = write_table_outputs(d, &report, &manifest)?;
            if let Some((row, errs)) = manifest.row_errors.iter().next() {
                return Err(Error::Contract(format!("row {row}: {}", errs.join("; "))));
            }
            Ok(((), outs))
        },
    )?;

    let mut abl_inputs = s(&[L::EVAL]);
    abl_inputs.extend(biases.iter().map(|&b| L::eos_bias_model(b)));
    let abl_warnings = r.stage("ablate", &abl_inputs, |d| {
        let report = run_ablation(cfg, &per_bias, &corpora.eval)?;
        let outs = write_ablation_outputs(d, &report)?;
        Ok((report.warnings, outs))
    })?;
    r.manifest.warnings.extend(abl_warnings);
    r.save_manifest()?;
    Ok(r.manifest)
}
