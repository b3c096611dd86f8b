use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand, ValueEnum};
use segstream::corpus::{read_utterances, write_utterances, SpokenUtterance};
use segstream::decoder::{read_segment_lines, DecodeConfig, Mode, SegmentLine, SegmentationOutput};
use segstream::error::Error;
use segstream::expt::{
    annotate_pause, annotate_semantic, annotate_written, bias_key, decode_corpus, gen_corpora,
    layout as L, read_json, read_jsonl, read_labels, run_ablation, run_e2e_pipeline, run_table,
    train_teacher, write_ablation_outputs, write_json, write_jsonl, write_labels,
    write_table_outputs, write_teacher_eval_csv, ExperimentConfig, Models,
};
use segstream::metrics::report;
use segstream::punct::AnnotatedTranscript;
use segstream::segmenters::SegmenterKind;
use segstream::teacher::semantic::labeled_windows;
use segstream::teacher::{teacher_eval, TeacherParams};
use segstream::tensor::{digest_mat, ParamSet};
use segstream::transducer::{build_examples, finetune_eos, train_base, RnntParams, EOS_TENSORS};

const EXIT_CONFIG: u8 = 2;
const EXIT_STAGE: u8 = 3;

#[derive(Parser)]
#[command(
    name = "segstream",
    version,
    about = "Semantic segmentation workbench for streaming transducer decoding"
)]
struct Cli {
    /// Experiment config (JSON). Defaults to <out>/config.json when present.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed, overriding the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run directory. Defaults to the config's output_dir, else `run`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overwrite existing outputs.
    #[arg(long, global = true)]
    force: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the written and spoken corpora.
    Gen,
    /// Derive EOS annotations from punctuation in the written corpora.
    Annotate,
    /// Train the semantic teacher on annotated written text.
    TeachTrain,
    /// Score the teacher on the held-out written corpus.
    TeachEval,
    /// Label a spoken corpus with a teacher.
    TeachAnnotate(TeachAnnotateArgs),
    /// Train the base transducer.
    TrainBase(TrainBaseArgs),
    /// Fine-tune the EOS heads of a frozen base model.
    FinetuneEos(FinetuneArgs),
    /// Decode a spoken corpus into segments.
    Decode(DecodeArgs),
    /// Score decoded segments against the reference corpus.
    Eval(EvalArgs),
    /// Build the segmenter comparison table.
    Table,
    /// Sweep teacher bias against EOS threshold.
    Ablate,
    /// Run every stage end to end.
    E2e,
}

#[derive(Clone, Copy, ValueEnum)]
enum TeacherKind {
    Semantic,
    Pause,
}

#[derive(clap::Args)]
struct TeachAnnotateArgs {
    #[arg(long, value_enum, default_value = "semantic")]
    teacher: TeacherKind,
    /// Added to the semantic teacher's EOS logit. Defaults to the config's teacher_bias.
    #[arg(long, allow_negative_numbers = true)]
    bias: Option<f64>,
    /// Pause teacher gap threshold. Defaults to the config's pause_threshold_ms.
    #[arg(long)]
    silence_threshold_ms: Option<f64>,
    /// Spoken corpus to label. Defaults to the run's training corpus.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Label file. Defaults to a name derived from the teacher and bias.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(clap::Args)]
struct TrainBaseArgs {
    /// FastEmit regularization weight. Defaults to the config's value.
    #[arg(long)]
    fastemit_lambda: Option<f64>,
    /// Spoken training corpus. Defaults to the run's training corpus.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Checkpoint to write. Defaults to the run's base model.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(clap::Args)]
struct FinetuneArgs {
    /// Label file from teach-annotate. Defaults to the run's semantic labels.
    #[arg(long)]
    teacher_annotations: Option<PathBuf>,
    /// Base checkpoint. Defaults to the run's base model.
    #[arg(long)]
    base: Option<PathBuf>,
    /// FastEmit regularization weight. Defaults to the config's value.
    #[arg(long)]
    fastemit_lambda: Option<f64>,
    /// Fail unless every non-EOS tensor is bitwise identical to the base.
    #[arg(long)]
    freeze_check: bool,
    /// Spoken corpus the labels belong to. Defaults to the run's training corpus.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Checkpoint to write. Defaults to a name derived from the label file.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(clap::Args)]
struct DecodeArgs {
    /// Checkpoint. Defaults to the semantic EOS model for `eos`, else the base model.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Spoken corpus to decode. Defaults to the run's eval corpus.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Segment JSONL to write. Defaults to the run's decode file.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Operating mode: 1, 2 or 3.
    #[arg(long)]
    mode: Option<u8>,
    /// none | fixed:SECONDS | vad[:MS] | eos[:THRESHOLD]
    #[arg(long)]
    segmenter: Option<SegmenterKind>,
    /// EOS cost threshold, overriding the one in --segmenter.
    #[arg(long)]
    eos_threshold: Option<f64>,
    /// Forced finalization cap in seconds.
    #[arg(long)]
    max_segment_s: Option<f64>,
    /// Beam size of decoder 1.
    #[arg(long)]
    beam1: Option<usize>,
    /// Beam size of decoder 2.
    #[arg(long)]
    beam2: Option<usize>,
    /// Drop expansions this far below the best score.
    #[arg(long)]
    prune: Option<f64>,
    /// Most labels emitted per frame.
    #[arg(long)]
    depth: Option<usize>,
    /// Frames with energy below this are silence.
    #[arg(long)]
    vad_energy: Option<f64>,
}

#[derive(clap::Args)]
struct EvalArgs {
    /// Output of `decode`.
    #[arg(long)]
    decoded: Option<PathBuf>,
    /// Reference spoken corpus. Defaults to the run's eval corpus.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Metrics CSV to write. Defaults to the run's eval report.
    #[arg(long)]
    output: Option<PathBuf>,
}

/// An error with the exit code it maps to.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

type Outcome<T = ()> = std::result::Result<T, Failure>;

trait Classify<T> {
    fn config_err(self) -> Outcome<T>;
    fn stage_err(self, stage: &str) -> Outcome<T>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for std::result::Result<T, E> {
    fn config_err(self) -> Outcome<T> {
        self.map_err(|e| Failure {
            code: EXIT_CONFIG,
            error: e.into(),
        })
    }

    fn stage_err(self, stage: &str) -> Outcome<T> {
        self.map_err(|e| Failure {
            code: EXIT_STAGE,
            error: e.into().context(format!("stage {stage} failed")),
        })
    }
}

struct Ctx {
    cfg: ExperimentConfig,
    out: PathBuf,
    force: bool,
}

impl Ctx {
    fn path(&self, rel: &str) -> PathBuf {
        self.out.join(rel)
    }

    fn input(&self, flag: &Option<PathBuf>, rel: &str) -> PathBuf {
        flag.clone().unwrap_or_else(|| self.path(rel))
    }

    /// Refuses to overwrite existing outputs without `--force`.
    fn guard(&self, outputs: &[&Path]) -> Outcome {
        if self.force {
            return Ok(());
        }
        match outputs.iter().find(|p| p.exists()) {
            Some(p) => Err(Error::Exists(p.to_path_buf())).config_err(),
            None => Ok(()),
        }
    }
}

fn load_config(cli: &Cli) -> Outcome<Ctx> {
    let from_out = cli
        .out
        .as_ref()
        .map(|o| o.join(L::CONFIG))
        .filter(|p| p.exists());
    let mut cfg = match cli.config.as_ref().or(from_out.as_ref()) {
        Some(p) => ExperimentConfig::load(p)
            .with_context(|| format!("loading config {}", p.display()))
            .config_err()?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.validate().config_err()?;
    let out = cli
        .out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("run"));
    Ok(Ctx {
        cfg,
        out,
        force: cli.force,
    })
}

fn load_utterances(path: &Path) -> anyhow::Result<Vec<SpokenUtterance>> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(read_utterances(BufReader::new(f))?)
}

fn load_model(path: &Path) -> anyhow::Result<RnntParams> {
    RnntParams::load(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn load_optional_model(path: &Path) -> anyhow::Result<Option<RnntParams>> {
    if path.exists() {
        load_model(path).map(Some)
    } else {
        Ok(None)
    }
}

fn write_config(ctx: &Ctx) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(&ctx.cfg)?;
    text.push('\n');
    std::fs::write(ctx.path(L::CONFIG), text)?;
    Ok(())
}

fn log_path_for(model: &Path) -> PathBuf {
    let stem = model
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("model");
    let dir = model
        .parent()
        .and_then(Path::parent)
        .unwrap_or(Path::new("."));
    dir.join("logs").join(format!("{stem}_train.csv"))
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn gen(ctx: &Ctx) -> Outcome {
    let outs = [L::WRITTEN, L::HELDOUT, L::TRAIN, L::EVAL].map(|r| ctx.path(r));
    let config = ctx.path(L::CONFIG);
    let mut guarded: Vec<&Path> = outs.iter().map(PathBuf::as_path).collect();
    guarded.push(&config);
    ctx.guard(&guarded)?;
    let run = || -> anyhow::Result<()> {
        std::fs::create_dir_all(&ctx.out)?;
        write_config(ctx)?;
        let c = gen_corpora(&ctx.cfg)?;
        write_jsonl(&outs[0], &c.written)?;
        write_jsonl(&outs[1], &c.heldout)?;
        write_utterances(create(&outs[2])?, &c.train)?;
        write_utterances(create(&outs[3])?, &c.eval)?;
        eprintln!(
            "wrote {} written, {} held-out, {} train and {} eval items",
            c.written.len(),
            c.heldout.len(),
            c.train.len(),
            c.eval.len()
        );
        Ok(())
    };
    run().stage_err("gen")
}

fn annotate(ctx: &Ctx) -> Outcome {
    let (a, h) = (
        ctx.path(L::WRITTEN_ANNOTATED),
        ctx.path(L::HELDOUT_ANNOTATED),
    );
    ctx.guard(&[&a, &h])?;
    let run = || -> anyhow::Result<()> {
        for (src, dst) in [(L::WRITTEN, &a), (L::HELDOUT, &h)] {
            let paragraphs =
                read_jsonl(&ctx.path(src)).with_context(|| format!("reading {src}"))?;
            write_jsonl(dst, &annotate_written(&ctx.cfg, &paragraphs))?;
        }
        Ok(())
    };
    run().stage_err("annotate")
}

fn teach_train(ctx: &Ctx) -> Outcome {
    let dst = ctx.path(L::TEACHER);
    ctx.guard(&[&dst])?;
    let run = || -> anyhow::Result<()> {
        let annotated: Vec<AnnotatedTranscript> = read_jsonl(&ctx.path(L::WRITTEN_ANNOTATED))?;
        write_json(&dst, &train_teacher(&ctx.cfg, &annotated)?)?;
        Ok(())
    };
    run().stage_err("teach-train")
}

fn teach_eval(ctx: &Ctx) -> Outcome {
    let dst = ctx.path(L::TEACHER_EVAL);
    ctx.guard(&[&dst])?;
    let run = || -> anyhow::Result<()> {
        let teacher: TeacherParams = read_json(&ctx.path(L::TEACHER))?;
        let heldout: Vec<AnnotatedTranscript> = read_jsonl(&ctx.path(L::HELDOUT_ANNOTATED))?;
        let windows = labeled_windows(&heldout, teacher.window, teacher.overlap)?;
        let e = teacher_eval(&teacher, &windows)?;
        std::fs::create_dir_all(dst.parent().expect("report path has a parent"))?;
        write_teacher_eval_csv(&dst, &e)?;
        eprintln!(
            "label accuracy {:.4}, sequence accuracy {:.4}, F1 {:.4}",
            e.label_accuracy, e.full_sequence_accuracy, e.f1
        );
        Ok(())
    };
    run().stage_err("teach-eval")
}

fn teach_annotate(ctx: &Ctx, a: &TeachAnnotateArgs) -> Outcome {
    let default_out = match (a.teacher, a.bias) {
        (TeacherKind::Pause, _) => L::PAUSE_LABELS.to_string(),
        (TeacherKind::Semantic, None) => L::SEMANTIC_LABELS.to_string(),
        (TeacherKind::Semantic, Some(b)) => L::semantic_bias_labels(b),
    };
    let dst = a.output.clone().unwrap_or_else(|| ctx.path(&default_out));
    ctx.guard(&[&dst])?;
    if let Some(b) = a.bias.filter(|b| !b.is_finite()) {
        return Err(anyhow!("--bias must be finite, got {b}")).config_err();
    }
    if let Some(t) = a.silence_threshold_ms.filter(|t| t.is_nan() || *t < 0.0) {
        return Err(anyhow!(
            "--silence-threshold-ms must be non-negative, got {t}"
        ))
        .config_err();
    }
    let run = || -> anyhow::Result<()> {
        let utts = load_utterances(&ctx.input(&a.input, L::TRAIN))?;
        let labels = match a.teacher {
            TeacherKind::Semantic => {
                let teacher: TeacherParams = read_json(&ctx.path(L::TEACHER))?;
                annotate_semantic(&teacher, &utts, a.bias.unwrap_or(ctx.cfg.teacher_bias))
            }
            TeacherKind::Pause => annotate_pause(
                &utts,
                a.silence_threshold_ms.unwrap_or(ctx.cfg.pause_threshold_ms),
            )?,
        };
        write_labels(&dst, &labels)?;
        let eos: usize = labels
            .iter()
            .map(|l| l.iter().filter(|x| x.is_eos()).count())
            .sum();
        eprintln!("labeled {} utterances with {eos} <EOS> marks", labels.len());
        Ok(())
    };
    run().stage_err("teach-annotate")
}

fn train_base_cmd(ctx: &Ctx, a: &TrainBaseArgs) -> Outcome {
    let dst = a.output.clone().unwrap_or_else(|| ctx.path(L::BASE));
    let log = log_path_for(&dst);
    ctx.guard(&[&dst, &log])?;
    let mut hyper = ctx.cfg.resolved().base;
    if let Some(l) = a.fastemit_lambda {
        hyper.fastemit_lambda = l;
    }
    hyper.validate().config_err()?;
    let run = || -> anyhow::Result<()> {
        let train = load_utterances(&ctx.input(&a.input, L::TRAIN))?;
        let vocab = ctx.cfg.grammar.spoken_vocabulary();
        let init = RnntParams::init(vocab.clone(), hyper.dims, hyper.seed)?;
        let examples = build_examples(&init, &train, None)?;
        let (params, train_log) = train_base(vocab, &examples, &hyper)?;
        params.save(&dst)?;
        train_log.write_csv(create(&log)?)?;
        eprintln!(
            "final epoch loss {:.4}",
            train_log.epoch_loss.last().copied().unwrap_or(f64::NAN)
        );
        Ok(())
    };
    run().stage_err("train-base")
}

/// Default fine-tune name for a label file: `semantic_bias_5` → `eos_bias_5`,
/// anything else → `eos_<stem>`.
fn finetune_name(annotations: &Path) -> String {
    let stem = annotations
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("labels");
    match stem.strip_prefix("semantic_bias_") {
        Some(b) => format!("eos_bias_{b}"),
        None => format!("eos_{stem}"),
    }
}

fn finetune_cmd(ctx: &Ctx, a: &FinetuneArgs) -> Outcome {
    let labels_path = ctx.input(&a.teacher_annotations, L::SEMANTIC_LABELS);
    let dst = a
        .output
        .clone()
        .unwrap_or_else(|| ctx.path(&L::eos_model(&finetune_name(&labels_path)).0));
    let log = log_path_for(&dst);
    ctx.guard(&[&dst, &log])?;
    let mut hyper = ctx.cfg.resolved().finetune;
    if let Some(l) = a.fastemit_lambda {
        hyper.fastemit_lambda = l;
    }
    hyper.validate().config_err()?;
    let run = || -> anyhow::Result<()> {
        let base = load_model(&ctx.input(&a.base, L::BASE))?;
        let train = load_utterances(&ctx.input(&a.input, L::TRAIN))?;
        let labels = read_labels(&labels_path)
            .with_context(|| format!("reading {}", labels_path.display()))?;
        let examples = build_examples(&base, &train, Some(&labels))?;
        let (tuned, train_log) = finetune_eos(&base, &examples, &hyper)?;
        for w in &train_log.warnings {
            eprintln!("warning: {w}");
        }
        if a.freeze_check {
            let mut checked = 0;
            for ((name, before), (_, after)) in base.tensors().into_iter().zip(tuned.tensors()) {
                if EOS_TENSORS.contains(&name) {
                    continue;
                }
                let (x, y) = (digest_mat(before), digest_mat(after));
                if x != y {
                    return Err(anyhow!("freeze check: {name} changed ({x} -> {y})"));
                }
                checked += 1;
            }
            eprintln!("freeze check passed: {checked} frozen tensors bitwise unchanged");
        }
        tuned.save(&dst)?;
        train_log.write_csv(create(&log)?)?;
        Ok(())
    };
    run().stage_err("finetune-eos")
}

fn decode_config(ctx: &Ctx, a: &DecodeArgs) -> Outcome<DecodeConfig> {
    let mut d = ctx.cfg.decode.clone();
    if let Some(m) = a.mode {
        d.mode = Mode::try_from(m).config_err()?;
    }
    if let Some(s) = a.segmenter {
        d.segmenter = s;
    }
    if let Some(th) = a.eos_threshold {
        match &mut d.segmenter {
            SegmenterKind::Eos { threshold } => *threshold = th,
            _ => return Err(anyhow!("--eos-threshold needs the eos segmenter")).config_err(),
        }
    }
    macro_rules! set {
        ($flag:expr, $field:expr) => {
            if let Some(v) = $flag {
                $field = v;
            }
        };
    }
    set!(a.max_segment_s, d.max_segment_s);
    set!(a.beam1, d.beam_size_pass1);
    set!(a.beam2, d.beam_size_pass2);
    set!(a.prune, d.pruning_threshold);
    set!(a.depth, d.max_expansion_depth);
    set!(a.vad_energy, d.vad_energy_threshold);
    d.validate().config_err()?;
    Ok(d)
}

fn decode_cmd(ctx: &Ctx, a: &DecodeArgs) -> Outcome {
    let dcfg = decode_config(ctx, a)?;
    let dst = a.output.clone().unwrap_or_else(|| ctx.path(L::DECODED));
    ctx.guard(&[&dst])?;
    let default_model = if dcfg.segmenter.needs_eos() {
        L::EOS_SEMANTIC
    } else {
        L::BASE
    };
    let run = || -> anyhow::Result<()> {
        let params = load_model(&ctx.input(&a.model, default_model))?;
        let utts = load_utterances(&ctx.input(&a.input, L::EVAL))?;
        let outs = decode_corpus(&params, &utts, &dcfg)?;
        let mut w = create(&dst)?;
        for (i, o) in outs.iter().enumerate() {
            o.write_jsonl_for(&mut w, i)?;
        }
        w.flush()?;
        let n: usize = outs.iter().map(|o| o.segments.len()).sum();
        eprintln!("decoded {} utterances into {n} segments", outs.len());
        Ok(())
    };
    run().stage_err("decode")
}

fn eval_cmd(ctx: &Ctx, a: &EvalArgs) -> Outcome {
    let dst = a.output.clone().unwrap_or_else(|| ctx.path(L::EVAL_REPORT));
    ctx.guard(&[&dst])?;
    let run = || -> anyhow::Result<()> {
        let utts = load_utterances(&ctx.input(&a.input, L::EVAL))?;
        let decoded = ctx.input(&a.decoded, L::DECODED);
        let f = File::open(&decoded).with_context(|| format!("opening {}", decoded.display()))?;
        let mut by_utt: BTreeMap<usize, Vec<SegmentLine>> = BTreeMap::new();
        for line in read_segment_lines(BufReader::new(f))? {
            by_utt
                .entry(line.utterance.unwrap_or(0))
                .or_default()
                .push(line);
        }
        if let Some(&i) = by_utt.keys().find(|&&i| i >= utts.len()) {
            return Err(anyhow!(
                "decoded utterance {i} is not in a corpus of {}",
                utts.len()
            ));
        }
        let outputs = utts
            .iter()
            .enumerate()
            .map(|(i, u)| {
                let lines = by_utt.get(&i).map_or(&[][..], Vec::as_slice);
                SegmentationOutput::from_lines(lines, u.frames.frame_ms, u.frames.len())
                    .with_context(|| format!("utterance {i}"))
            })
            .collect::<anyhow::Result<Vec<_>>>()?;
        let r = report(
            outputs
                .iter()
                .zip(&utts)
                .map(|(o, u)| (o, u.tokens(), &u.alignment)),
        );
        let mut w = csv::Writer::from_writer(create(&dst)?);
        w.serialize(&r)?;
        w.flush()?;
        eprintln!(
            "WER {:.2}%  boundary F1 {:.3}  segments {}",
            100.0 * r.wer,
            r.f1,
            r.n_segments
        );
        Ok(())
    };
    run().stage_err("eval")
}

fn table_cmd(ctx: &Ctx) -> Outcome {
    let outs = [L::TABLE, L::TABLE_DETAIL, L::TABLE_MANIFEST].map(|r| ctx.path(r));
    ctx.guard(&outs.iter().map(PathBuf::as_path).collect::<Vec<_>>())?;
    let p = &ctx.cfg.paths;
    let run = || -> anyhow::Result<()> {
        let eval = load_utterances(&ctx.input(&p.eval_corpus, L::EVAL))?;
        let models = Models {
            base: load_optional_model(&ctx.input(&p.base_checkpoint, L::BASE))?,
            semantic: load_optional_model(&ctx.input(&p.semantic_checkpoint, L::EOS_SEMANTIC))?,
            pause: load_optional_model(&ctx.input(&p.pause_checkpoint, L::EOS_PAUSE))?,
        };
        let (report, manifest) = run_table(&ctx.cfg, &models, &eval);
        std::fs::create_dir_all(ctx.path("reports"))?;
        write_table_outputs(&ctx.out, &report, &manifest)?;
        if !manifest.row_errors.is_empty() {
            let msgs: Vec<String> = manifest
                .row_errors
                .iter()
                .map(|(r, e)| format!("{r}: {}", e.join("; ")))
                .collect();
            return Err(anyhow!("incomplete rows: {}", msgs.join(" | ")));
        }
        eprintln!("table written to {}", outs[0].display());
        Ok(())
    };
    run().stage_err("table")
}

fn ablate_cmd(ctx: &Ctx) -> Outcome {
    let outs = [L::ABLATION, L::ABLATION_SVG, L::ABLATION_ARGMIN].map(|r| ctx.path(r));
    ctx.guard(&outs.iter().map(PathBuf::as_path).collect::<Vec<_>>())?;
    let p = &ctx.cfg.paths;
    let run = || -> anyhow::Result<()> {
        let eval = load_utterances(&ctx.input(&p.eval_corpus, L::EVAL))?;
        let mut per_bias = BTreeMap::new();
        for &b in &ctx.cfg.ablation.biases {
            let key = bias_key(b);
            let path = p
                .bias_checkpoints
                .get(&key)
                .cloned()
                .unwrap_or_else(|| ctx.path(&L::eos_bias_model(b)));
            let mut model = load_optional_model(&path)?;
            // The semantic EOS model was trained at the config's own bias.
            if model.is_none() && b == ctx.cfg.teacher_bias {
                let semantic = p
                    .semantic_checkpoint
                    .clone()
                    .unwrap_or_else(|| ctx.path(L::EOS_SEMANTIC));
                model = load_optional_model(&semantic)?;
            }
            if let Some(m) = model {
                per_bias.insert(key, m);
            }
        }
        let report = run_ablation(&ctx.cfg, &per_bias, &eval)?;
        for w in &report.warnings {
            eprintln!("warning: {w}");
        }
        if report.points.is_empty() {
            return Err(anyhow!("no bias checkpoints found"));
        }
        std::fs::create_dir_all(ctx.path("reports"))?;
        write_ablation_outputs(&ctx.out, &report)?;
        Ok(())
    };
    run().stage_err("ablate")
}

fn e2e(ctx: &Ctx) -> Outcome {
    let start = std::time::Instant::now();
    let mut progress = |stage: &str| eprintln!("[{:7.1}s] {stage}", start.elapsed().as_secs_f64());
    match run_e2e_pipeline(&ctx.cfg, &ctx.out, ctx.force, &mut progress) {
        Ok(m) => {
            for w in &m.warnings {
                eprintln!("warning: {w}");
            }
            eprintln!(
                "done in {:.1}s; table at {}",
                start.elapsed().as_secs_f64(),
                ctx.path(L::TABLE).display()
            );
            Ok(())
        }
        Err(e @ (Error::Exists(_) | Error::Invalid { .. })) => Err(e).config_err(),
        Err(e) => Err(e).stage_err("e2e"),
    }
}

fn run(cli: &Cli) -> Outcome {
    let ctx = load_config(cli)?;
    match &cli.command {
        Command::Gen => gen(&ctx),
        Command::Annotate => annotate(&ctx),
        Command::TeachTrain => teach_train(&ctx),
        Command::TeachEval => teach_eval(&ctx),
        Command::TeachAnnotate(a) => teach_annotate(&ctx, a),
        Command::TrainBase(a) => train_base_cmd(&ctx, a),
        Command::FinetuneEos(a) => finetune_cmd(&ctx, a),
        Command::Decode(a) => decode_cmd(&ctx, a),
        Command::Eval(a) => eval_cmd(&ctx, a),
        Command::Table => table_cmd(&ctx),
        Command::Ablate => ablate_cmd(&ctx),
        Command::E2e => e2e(&ctx),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
