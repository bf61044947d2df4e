//! Command-line front end: corpus and task generation, training, decoding,
//! evaluation and ablation runs.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::constraints::{FluencyForm, Stopwords};
use crate::corpus::{grammar_vocabulary, Corpus, DEFAULT_STORIES};
use crate::error::{Error, Result};
use crate::lm::{load_checkpoint_expecting, save_checkpoint, train, Direction, LanguageModel, TrainConfig};
use crate::metrics::{evaluate, render_table, EvalReport};
use crate::numerics::Real;
use crate::sampler::{write_trace_jsonl, DecodeConfig, Energy, NoiseSchedule};
use crate::tasks::{
    generate_instances, read_instances, sample_and_select, task_energy, write_instances, Ablation, Models,
    TaskInstance, TaskKind, WeightConfig,
};
use crate::vocab::TokenId;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "cold", version, about = "Energy-based constrained decoding with Langevin dynamics")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic story corpus.
    GenCorpus(GenCorpusArgs),
    /// Write synthetic task instances.
    GenTasks(GenTasksArgs),
    /// Train a forward or reverse language model.
    Train(TrainArgs),
    /// Decode every instance of a task file.
    Decode(DecodeArgs),
    /// Score decode outputs.
    Eval(EvalArgs),
    /// Decode with each single constraint removed and report all runs.
    Ablate(AblateArgs),
}

#[derive(Debug, Args)]
pub struct GenCorpusArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of stories (one per line).
    #[arg(long, default_value_t = DEFAULT_STORIES)]
    pub size: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GenTasksArgs {
    #[arg(long, value_parser = parse_kind)]
    pub kind: TaskKind,
    #[arg(long, default_value_t = 20)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, value_parser = parse_direction)]
    pub direction: Direction,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 64)]
    pub hidden: usize,
    #[arg(long, default_value_t = 8)]
    pub epochs: usize,
    #[arg(long = "lr", default_value_t = 0.01)]
    pub learning_rate: Real,
    #[arg(long, default_value_t = 16)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Fraction of sequences held out for the reported perplexity.
    #[arg(long, default_value_t = 0.1)]
    pub held_out: f64,
    /// Overwrite an existing checkpoint.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    #[arg(long)]
    pub forward: PathBuf,
    #[arg(long)]
    pub reverse: PathBuf,
}

/// Decoding flags. Unset values fall back to the task kind's defaults.
#[derive(Debug, Clone, Default, Args)]
pub struct DecodeFlags {
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub eta: Option<Real>,
    #[arg(long)]
    pub tau: Option<Real>,
    #[arg(long)]
    pub topk: Option<usize>,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub length: Option<usize>,
    #[arg(long)]
    pub max_continuation: Option<usize>,
    /// Noise schedule as `iteration:sigma` pairs, e.g. "0:1,50:0.5".
    #[arg(long, value_parser = parse_schedule, conflicts_with = "sigma")]
    pub schedule: Option<NoiseSchedule>,
    /// Constant noise level.
    #[arg(long)]
    pub sigma: Option<Real>,
    /// Weight override `KEY=VALUE` with KEY in lr, rl, b, c; repeatable.
    #[arg(long = "weights", value_name = "KEY=VAL")]
    pub weights: Vec<String>,
    #[arg(long, value_parser = parse_form)]
    pub fluency_form: Option<FluencyForm>,
    #[arg(long)]
    pub clip_gradient: bool,
    #[arg(long)]
    pub detach_reference: bool,
    #[arg(long)]
    pub trace_every: Option<usize>,
}

#[derive(Debug, Clone, Copy, Default, Args)]
pub struct AblationFlags {
    /// Drop the similarity term.
    #[arg(long)]
    pub no_sim: bool,
    /// Drop the right-to-left fluency term.
    #[arg(long)]
    pub no_revlm: bool,
    /// Drop the future-prediction term.
    #[arg(long)]
    pub no_pred: bool,
}

#[derive(Debug, Args)]
pub struct DecodeArgs {
    #[arg(long)]
    pub tasks: PathBuf,
    #[command(flatten)]
    pub models: ModelArgs,
    #[arg(long)]
    pub out: PathBuf,
    /// Directory for per-instance energy traces of the winning chain.
    #[arg(long)]
    pub trace_dir: Option<PathBuf>,
    #[command(flatten)]
    pub flags: DecodeFlags,
    #[command(flatten)]
    pub ablation: AblationFlags,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub tasks: PathBuf,
    /// Forward model used for perplexity.
    #[arg(long)]
    pub forward: PathBuf,
    /// Decode output files; one report row each.
    #[arg(long, required = true, num_args = 1..)]
    pub outputs: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write a plain-text table.
    #[arg(long)]
    pub table: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub tasks: PathBuf,
    #[command(flatten)]
    pub models: ModelArgs,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[command(flatten)]
    pub flags: DecodeFlags,
}

fn parse_kind(s: &str) -> std::result::Result<TaskKind, String> {
    TaskKind::parse(s).map_err(|e| e.to_string())
}

fn parse_direction(s: &str) -> std::result::Result<Direction, String> {
    Direction::parse(s).map_err(|e| e.to_string())
}

fn parse_schedule(s: &str) -> std::result::Result<NoiseSchedule, String> {
    s.parse::<NoiseSchedule>().map_err(|e| e.to_string())
}

fn parse_form(s: &str) -> std::result::Result<FluencyForm, String> {
    FluencyForm::parse(s).map_err(|e| e.to_string())
}

/// Exit status for a failed run.
pub fn exit_code(err: &Error) -> i32 {
    if err.is_numerical() {
        EXIT_NUMERICAL
    } else if matches!(err, Error::InvalidArgument(_)) {
        EXIT_USAGE
    } else {
        EXIT_DATA
    }
}

/// Parses `args` (program name first) and runs the command. Usage errors
/// are printed and mapped to [`EXIT_USAGE`].
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match run(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenCorpus(a) => cmd_gen_corpus(&a),
        Command::GenTasks(a) => cmd_gen_tasks(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Decode(a) => cmd_decode(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Ablate(a) => cmd_ablate(&a),
    }
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("plain data serializes")
}

pub fn cmd_gen_corpus(a: &GenCorpusArgs) -> Result<()> {
    if a.size == 0 {
        return Err(Error::invalid("corpus size must be at least 1"));
    }
    let vocab = grammar_vocabulary();
    let corpus = Corpus::generate(a.seed, a.size, &vocab)?;
    write_file(&a.out, corpus.to_text(&vocab).as_bytes())?;
    eprintln!(
        "wrote {} sequences ({} tokens) to {}",
        corpus.len(),
        corpus.token_count(),
        a.out.display()
    );
    Ok(())
}

pub fn cmd_gen_tasks(a: &GenTasksArgs) -> Result<()> {
    if a.count == 0 {
        return Err(Error::invalid("task count must be at least 1"));
    }
    let vocab = grammar_vocabulary();
    let instances = generate_instances(a.kind, a.count, a.seed, &vocab)?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    write_instances(&a.out, &instances, &vocab)?;
    eprintln!("wrote {} {} instances to {}", instances.len(), a.kind, a.out.display());
    Ok(())
}

pub fn cmd_train(a: &TrainArgs) -> Result<()> {
    if a.out.exists() && !a.force {
        return Err(Error::invalid(format!(
            "{} exists; pass --force to overwrite",
            a.out.display()
        )));
    }
    if !(a.held_out > 0.0 && a.held_out < 1.0) {
        return Err(Error::invalid("--held-out must lie in (0, 1)"));
    }
    let vocab = grammar_vocabulary();
    let corpus = Corpus::load(&a.corpus, &vocab)?;
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let (train_part, held) = corpus.split(a.held_out);
    let config = TrainConfig {
        hidden: a.hidden,
        epochs: a.epochs,
        learning_rate: a.learning_rate,
        seed: a.seed,
        batch_size: a.batch_size,
        ..TrainConfig::default()
    };
    let (lm, report) = train(&train_part, &vocab, a.direction, &config)?;
    for (epoch, loss) in report.epoch_losses.iter().enumerate() {
        eprintln!("epoch {:>3}  loss {loss:.4}", epoch + 1);
    }
    let ppl = lm.corpus_perplexity(&held.sequences)?;
    eprintln!("held-out perplexity {ppl:.3} over {} sequences", held.len());
    save_checkpoint(&lm, &a.out)?;
    eprintln!("saved {} model to {}", a.direction.name(), a.out.display());
    Ok(())
}

/// Fully resolved decoding configuration, echoed into every output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub kind: TaskKind,
    pub label: String,
    pub decode: DecodeConfig,
    pub weights: WeightConfig,
    pub ablation: Ablation,
}

impl RunConfig {
    pub fn resolve(kind: TaskKind, flags: &DecodeFlags, ablation: Ablation) -> Result<Self> {
        let base = DecodeConfig::default();
        let mut decode = DecodeConfig {
            iters: flags.iters.unwrap_or(base.iters),
            eta: flags.eta.unwrap_or(base.eta),
            tau: flags.tau.unwrap_or(base.tau),
            topk: flags.topk.unwrap_or(base.topk),
            num_samples: flags.samples.unwrap_or(kind.default_samples()),
            seed: flags.seed.unwrap_or(base.seed),
            length: flags.length.unwrap_or(kind.default_length()),
            max_continuation: flags.max_continuation.unwrap_or(base.max_continuation),
            fluency_form: flags.fluency_form.unwrap_or(base.fluency_form),
            clip_gradient: flags.clip_gradient,
            detach_reference: flags.detach_reference,
            trace_every: flags.trace_every.unwrap_or(base.trace_every),
            schedule: base.schedule,
        };
        if let Some(s) = &flags.schedule {
            decode.schedule = s.clone();
        }
        if let Some(sigma) = flags.sigma {
            decode.schedule = NoiseSchedule::constant(sigma)?;
        }
        decode.validate()?;
        let mut weights = WeightConfig::for_kind(kind);
        for w in &flags.weights {
            weights.set(w)?;
        }
        Ok(Self {
            kind,
            label: ablation.label(),
            decode,
            weights,
            ablation,
        })
    }
}

/// SHA-256 digests of the files a run read.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct InputHashes {
    pub tasks: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub forward: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reverse: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub outputs: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolEntry {
    pub chain: usize,
    pub text: String,
    pub tokens: Vec<TokenId>,
    pub discrete_len: usize,
    pub initial_energy: Real,
    pub final_energy: Real,
    pub energy_terms: Vec<Real>,
    /// Ranking scores; `null` stands for an infinite perplexity.
    pub scores: std::collections::BTreeMap<String, Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceOutput {
    pub index: usize,
    pub kind: TaskKind,
    pub winner: String,
    pub winner_tokens: Vec<TokenId>,
    pub winner_chain: usize,
    pub energy_terms: Vec<String>,
    pub pool: Vec<PoolEntry>,
    /// Trace file of the winning chain, relative to the trace directory.
    pub trace: Option<String>,
}

/// One line of a decode output file: a header, then one line per instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum DecodeLine {
    Header { config: RunConfig, inputs: InputHashes },
    Instance(Box<InstanceOutput>),
}

/// A parsed decode output file.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodeOutput {
    pub config: RunConfig,
    pub inputs: InputHashes,
    pub instances: Vec<InstanceOutput>,
}

impl DecodeOutput {
    pub fn to_jsonl(&self) -> String {
        let mut s = to_json(&DecodeLine::Header {
            config: self.config.clone(),
            inputs: self.inputs.clone(),
        });
        s.push('\n');
        for inst in &self.instances {
            s.push_str(&to_json(&DecodeLine::Instance(Box::new(inst.clone()))));
            s.push('\n');
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut header = None;
        let mut instances = Vec::new();
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let parsed: DecodeLine = serde_json::from_str(line).map_err(|e| Error::Json {
                context: format!("decode output line {}", i + 1),
                source: e,
            })?;
            match parsed {
                DecodeLine::Header { config, inputs } if header.is_none() && instances.is_empty() => {
                    header = Some((config, inputs))
                }
                DecodeLine::Header { .. } => return Err(Error::Format("misplaced header line".into())),
                DecodeLine::Instance(inst) => instances.push(*inst),
            }
        }
        let (config, inputs) = header.ok_or_else(|| Error::Format("decode output has no header".into()))?;
        Ok(Self {
            config,
            inputs,
            instances,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }
}

fn homogeneous_kind(instances: &[TaskInstance]) -> Result<TaskKind> {
    let first = instances
        .first()
        .ok_or_else(|| Error::Data("task file has no instances".into()))?;
    if let Some(other) = instances.iter().find(|i| i.kind != first.kind) {
        return Err(Error::KindMismatch {
            expected: first.kind.name(),
            found: other.kind.name(),
        });
    }
    Ok(first.kind)
}

struct Loaded {
    forward: LanguageModel,
    reverse: LanguageModel,
    instances: Vec<TaskInstance>,
    hashes: InputHashes,
}

fn load_inputs(tasks: &Path, models: &ModelArgs) -> Result<Loaded> {
    let forward = load_checkpoint_expecting(&models.forward, Direction::Forward)?;
    let reverse = load_checkpoint_expecting(&models.reverse, Direction::Reverse)?;
    Models::new(&forward, &reverse)?;
    let instances = read_instances(tasks, forward.vocab())?;
    let hashes = InputHashes {
        tasks: sha256_file(tasks)?,
        forward: Some(sha256_file(&models.forward)?),
        reverse: Some(sha256_file(&models.reverse)?),
        outputs: vec![],
    };
    Ok(Loaded {
        forward,
        reverse,
        instances,
        hashes,
    })
}

/// Runs sample-and-select on every instance. When `trace_dir` is given the
/// winning chain's trace of instance `i` goes to `trace_{i:04}.jsonl`.
pub fn decode_instances(
    instances: &[TaskInstance],
    models: Models,
    config: &RunConfig,
    trace_dir: Option<&Path>,
) -> Result<Vec<InstanceOutput>> {
    let vocab = models.vocab();
    let stopwords = Stopwords::default();
    let mut out = Vec::with_capacity(instances.len());
    for (index, inst) in instances.iter().enumerate() {
        let spec = task_energy(inst, &config.weights, models, &stopwords, config.ablation, &config.decode)?;
        let sel = sample_and_select(&spec, inst, &config.decode, models, &stopwords)?;
        let best = sel.best();
        let trace = match trace_dir {
            Some(dir) => {
                let name = format!("trace_{index:04}.jsonl");
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                let path = dir.join(&name);
                let mut buf = Vec::new();
                write_trace_jsonl(&mut buf, &best.trace)?;
                write_file(&path, &buf)?;
                Some(name)
            }
            None => None,
        };
        let pool = sel
            .pool
            .iter()
            .map(|c| PoolEntry {
                chain: c.chain,
                text: vocab.decode(&c.tokens),
                tokens: c.tokens.clone(),
                discrete_len: c.discrete_len,
                initial_energy: c.initial_energy,
                final_energy: c.final_energy,
                energy_terms: c.energy_terms.clone(),
                scores: c
                    .scores
                    .iter()
                    .map(|(k, &v)| (k.clone(), v.is_finite().then_some(v)))
                    .collect(),
            })
            .collect();
        out.push(InstanceOutput {
            index,
            kind: inst.kind,
            winner: vocab.decode(&best.tokens),
            winner_tokens: best.tokens.clone(),
            winner_chain: best.chain,
            energy_terms: spec.term_labels(),
            pool,
            trace,
        });
    }
    Ok(out)
}

pub fn cmd_decode(a: &DecodeArgs) -> Result<()> {
    let loaded = load_inputs(&a.tasks, &a.models)?;
    let kind = homogeneous_kind(&loaded.instances)?;
    let ablation = Ablation {
        no_sim: a.ablation.no_sim,
        no_revlm: a.ablation.no_revlm,
        no_pred: a.ablation.no_pred,
    };
    let config = RunConfig::resolve(kind, &a.flags, ablation)?;
    let models = Models::new(&loaded.forward, &loaded.reverse)?;
    let instances = decode_instances(&loaded.instances, models, &config, a.trace_dir.as_deref())?;
    let output = DecodeOutput {
        config,
        inputs: loaded.hashes,
        instances,
    };
    write_file(&a.out, output.to_jsonl().as_bytes())?;
    eprintln!("decoded {} instances to {}", output.instances.len(), a.out.display());
    Ok(())
}

/// Evaluation file: the reports, one per decode output, and what they were
/// computed from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalFile {
    pub inputs: InputHashes,
    pub configs: Vec<RunConfig>,
    pub reports: Vec<EvalReport>,
}

fn evaluate_outputs(instances: &[TaskInstance], lm: &LanguageModel, outputs: &[DecodeOutput]) -> Result<Vec<EvalReport>> {
    outputs
        .iter()
        .map(|o| {
            if o.instances.len() != instances.len() {
                return Err(Error::Data(format!(
                    "{} instances but {} outputs for '{}'",
                    instances.len(),
                    o.instances.len(),
                    o.config.label
                )));
            }
            let ys: Vec<Vec<TokenId>> = o.instances.iter().map(|i| i.winner_tokens.clone()).collect();
            evaluate(&o.config.label, instances, &ys, lm)
        })
        .collect()
}

fn write_eval(out: &Path, table: Option<&Path>, file: &EvalFile) -> Result<()> {
    let mut json = serde_json::to_string_pretty(file).expect("report serializes");
    json.push('\n');
    write_file(out, json.as_bytes())?;
    let text = render_table(&file.reports);
    if let Some(t) = table {
        write_file(t, text.as_bytes())?;
    }
    let _ = std::io::stderr().write_all(text.as_bytes());
    Ok(())
}

pub fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let lm = load_checkpoint_expecting(&a.forward, Direction::Forward)?;
    let instances = read_instances(&a.tasks, lm.vocab())?;
    homogeneous_kind(&instances)?;
    let outputs = a.outputs.iter().map(|p| DecodeOutput::read(p)).collect::<Result<Vec<_>>>()?;
    let reports = evaluate_outputs(&instances, &lm, &outputs)?;
    let inputs = InputHashes {
        tasks: sha256_file(&a.tasks)?,
        forward: Some(sha256_file(&a.forward)?),
        reverse: None,
        outputs: a.outputs.iter().map(|p| sha256_file(p)).collect::<Result<_>>()?,
    };
    let file = EvalFile {
        inputs,
        configs: outputs.into_iter().map(|o| o.config).collect(),
        reports,
    };
    write_eval(&a.out, a.table.as_deref(), &file)
}

/// Decodes with the full energy and each single-term removal, writing
/// `decode_<n>.jsonl` per configuration plus `report.json` and `table.txt`.
pub fn cmd_ablate(a: &AblateArgs) -> Result<()> {
    let loaded = load_inputs(&a.tasks, &a.models)?;
    let kind = homogeneous_kind(&loaded.instances)?;
    let models = Models::new(&loaded.forward, &loaded.reverse)?;
    let mut outputs = Vec::new();
    let mut output_hashes = Vec::new();
    for (n, ablation) in Ablation::standard_set().into_iter().enumerate() {
        let config = RunConfig::resolve(kind, &a.flags, ablation)?;
        eprintln!("running {}", config.label);
        let trace_dir = a.out_dir.join(format!("traces_{n}"));
        let instances = decode_instances(&loaded.instances, models, &config, Some(&trace_dir))?;
        let output = DecodeOutput {
            config,
            inputs: loaded.hashes.clone(),
            instances,
        };
        let path = a.out_dir.join(format!("decode_{n}.jsonl"));
        write_file(&path, output.to_jsonl().as_bytes())?;
        output_hashes.push(sha256_file(&path)?);
        outputs.push(output);
    }
    let reports = evaluate_outputs(&loaded.instances, &loaded.forward, &outputs)?;
    let file = EvalFile {
        inputs: InputHashes {
            outputs: output_hashes,
            ..loaded.hashes
        },
        configs: outputs.into_iter().map(|o| o.config).collect(),
        reports,
    };
    write_eval(&a.out_dir.join("report.json"), Some(&a.out_dir.join("table.txt")), &file)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> std::result::Result<Cli, clap::Error> {
        Cli::try_parse_from(std::iter::once("cold").chain(args.iter().copied()))
    }

    #[test]
    fn decode_flags_resolve_over_kind_defaults() {
        let cli = parse(&[
            "decode", "--tasks", "t", "--forward", "f", "--reverse", "r", "--out", "o", "--iters", "50", "--weights",
            "b=0.3", "--weights", "lr=0.1", "--schedule", "0:1,10:0.2", "--no-sim",
        ])
        .unwrap();
        let Command::Decode(a) = cli.command else { unreachable!() };
        let ablation = Ablation {
            no_sim: a.ablation.no_sim,
            ..Ablation::NONE
        };
        let c = RunConfig::resolve(TaskKind::Counterfactual, &a.flags, ablation).unwrap();
        assert_eq!(c.decode.iters, 50);
        assert_eq!(c.decode.length, 20);
        assert_eq!(c.decode.num_samples, 32);
        assert_eq!(c.decode.schedule.to_string(), "0:1,10:0.2");
        assert_eq!((c.weights.lr, c.weights.rl, c.weights.b), (0.1, 0.16, 0.3));
        assert!(c.ablation.no_sim);
        assert_eq!(c.label, "COLD - f_sim");
    }

    #[test]
    fn defaults_follow_task_kind() {
        let c = RunConfig::resolve(TaskKind::Abductive, &DecodeFlags::default(), Ablation::NONE).unwrap();
        assert_eq!((c.decode.iters, c.decode.eta, c.decode.num_samples, c.decode.length), (2000, 0.1, 16, 10));
    }

    #[test]
    fn usage_errors() {
        assert!(parse(&[]).is_err());
        assert!(parse(&["decode", "--tasks", "t"]).is_err());
        assert!(parse(&["gen-tasks", "--kind", "poem", "--out", "x"]).is_err());
        let bad_schedule = parse(&[
            "decode", "--tasks", "t", "--forward", "f", "--reverse", "r", "--out", "o", "--schedule", "5:1",
        ]);
        assert!(bad_schedule.is_err());
        let both = parse(&[
            "decode", "--tasks", "t", "--forward", "f", "--reverse", "r", "--out", "o", "--schedule", "0:1", "--sigma",
            "0",
        ]);
        assert!(both.is_err());
        let flags = DecodeFlags {
            weights: vec!["q=1".into()],
            ..DecodeFlags::default()
        };
        let err = RunConfig::resolve(TaskKind::Lexical, &flags, Ablation::NONE).unwrap_err();
        assert_eq!(exit_code(&err), EXIT_USAGE);
        assert_eq!(main_with_args(["cold", "frobnicate"]), EXIT_USAGE);
        assert_eq!(main_with_args(["cold", "--help"]), EXIT_OK);
    }

    #[test]
    fn exit_codes_by_error_class() {
        assert_eq!(exit_code(&Error::Data("x".into())), EXIT_DATA);
        assert_eq!(exit_code(&Error::Format("x".into())), EXIT_DATA);
        assert_eq!(exit_code(&Error::NonFiniteGradient { term: 0 }), EXIT_NUMERICAL);
        assert_eq!(exit_code(&Error::NonFiniteLoss { epoch: 1 }), EXIT_NUMERICAL);
    }

    #[test]
    fn decode_output_round_trips() {
        let config = RunConfig::resolve(TaskKind::Lexical, &DecodeFlags::default(), Ablation::NONE).unwrap();
        let out = DecodeOutput {
            config,
            inputs: InputHashes {
                tasks: "ab".into(),
                ..InputHashes::default()
            },
            instances: vec![InstanceOutput {
                index: 0,
                kind: TaskKind::Lexical,
                winner: "the cat".into(),
                winner_tokens: vec![4, 5],
                winner_chain: 0,
                energy_terms: vec!["f_lm_lr".into()],
                pool: vec![PoolEntry {
                    chain: 0,
                    text: "the cat".into(),
                    tokens: vec![4, 5],
                    discrete_len: 2,
                    initial_energy: 3.0,
                    final_energy: 1.5,
                    energy_terms: vec![1.5],
                    scores: [("one_hot_energy".to_string(), None)].into_iter().collect(),
                }],
                trace: None,
            }],
        };
        let text = out.to_jsonl();
        assert_eq!(DecodeOutput::parse(&text).unwrap(), out);
        assert!(DecodeOutput::parse(text.lines().nth(1).unwrap()).is_err());
    }
}
