//! Task energies (abductive infilling, counterfactual rewriting, lexically
//! constrained generation), sample-and-select, and synthetic task instances.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::constraints::{keyword_set, ConstraintFn, SoftSequence, Stopwords};
use crate::corpus::{Class, Sentence, StoryGenerator};
use crate::discretizer::{continue_sequence, topk_filter, DiscretizeConfig};
use crate::error::{Error, Result};
use crate::lm::{Direction, LanguageModel};
use crate::numerics::{Array, Real};
use crate::sampler::{init_soft_sequence, sample_chains, DecodeConfig, Energy, EnergySpec, EnergyTerm, TraceRecord};
use crate::vocab::{TokenId, Vocabulary};

pub const LABEL_LM_LR: &str = "f_lm_lr";
pub const LABEL_LM_RL: &str = "f_lm_rl";
pub const LABEL_PRED: &str = "f_pred";
pub const LABEL_SIM: &str = "f_sim";

/// Candidates kept after the first abductive ranking stage.
pub const ABDUCTIVE_SHORTLIST: usize = 5;

/// Logit gap used when casting a discrete output back to a soft sequence.
pub const ONE_HOT_GAP: Real = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Abductive,
    Counterfactual,
    Lexical,
}

impl TaskKind {
    pub const ALL: [TaskKind; 3] = [TaskKind::Abductive, TaskKind::Counterfactual, TaskKind::Lexical];

    pub fn name(self) -> &'static str {
        match self {
            Self::Abductive => "abductive",
            Self::Counterfactual => "counterfactual",
            Self::Lexical => "lexical",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Data(format!("unknown task kind '{s}'")))
    }

    /// Soft sequence length before continuation.
    pub fn default_length(self) -> usize {
        match self {
            Self::Counterfactual => 20,
            _ => 10,
        }
    }

    pub fn default_samples(self) -> usize {
        match self {
            Self::Counterfactual => 32,
            _ => 16,
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// On-disk form of a task instance; token sequences are space-separated
/// text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub kind: String,
    #[serde(default)]
    pub x_l: String,
    #[serde(default)]
    pub x_r: String,
    #[serde(default)]
    pub x_l_prime: String,
    #[serde(default)]
    pub keywords: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskInstance {
    pub kind: TaskKind,
    pub x_l: Vec<TokenId>,
    pub x_r: Vec<TokenId>,
    pub x_l_prime: Vec<TokenId>,
    pub keywords: BTreeSet<TokenId>,
    /// Gold output, when known, for overlap metrics.
    pub reference: Option<Vec<TokenId>>,
}

impl TaskInstance {
    pub fn abductive(x_l: Vec<TokenId>, x_r: Vec<TokenId>) -> Self {
        Self {
            kind: TaskKind::Abductive,
            x_l,
            x_r,
            x_l_prime: vec![],
            keywords: BTreeSet::new(),
            reference: None,
        }
    }

    pub fn counterfactual(x_l: Vec<TokenId>, x_r: Vec<TokenId>, x_l_prime: Vec<TokenId>) -> Self {
        Self {
            kind: TaskKind::Counterfactual,
            x_l,
            x_r,
            x_l_prime,
            keywords: BTreeSet::new(),
            reference: None,
        }
    }

    pub fn lexical(keywords: BTreeSet<TokenId>) -> Self {
        Self {
            kind: TaskKind::Lexical,
            x_l: vec![],
            x_r: vec![],
            x_l_prime: vec![],
            keywords,
            reference: None,
        }
    }

    pub fn with_reference(mut self, reference: Vec<TokenId>) -> Self {
        self.reference = Some(reference);
        self
    }

    pub fn validate(&self, vocab: &Vocabulary) -> Result<()> {
        for seq in [&self.x_l, &self.x_r, &self.x_l_prime] {
            vocab.check(seq)?;
        }
        vocab.check(&self.keywords.iter().copied().collect::<Vec<_>>())?;
        if let Some(r) = &self.reference {
            vocab.check(r)?;
        }
        let need = |ok: bool, what: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::Data(format!("{} instance needs {what}", self.kind)))
            }
        };
        match self.kind {
            TaskKind::Abductive => need(!self.x_l.is_empty() && !self.x_r.is_empty(), "non-empty x_l and x_r"),
            TaskKind::Counterfactual => need(
                !self.x_l.is_empty() && !self.x_l_prime.is_empty() && self.x_r.len() >= 3,
                "non-empty x_l and x_l_prime and an x_r of at least 3 tokens",
            ),
            TaskKind::Lexical => need(!self.keywords.is_empty(), "at least one keyword"),
        }
    }

    pub fn from_record(rec: &TaskRecord, vocab: &Vocabulary) -> Result<Self> {
        let kind = TaskKind::parse(&rec.kind)?;
        let enc = |s: &str| vocab.encode(s).map_err(|e| Error::Data(e.to_string()));
        let mut keywords = BTreeSet::new();
        for w in &rec.keywords {
            let id = vocab.encode_word(w).map_err(|e| Error::Data(e.to_string()))?;
            if !keywords.insert(id) {
                return Err(Error::Data(format!("duplicate keyword '{w}'")));
            }
        }
        let inst = Self {
            kind,
            x_l: enc(&rec.x_l)?,
            x_r: enc(&rec.x_r)?,
            x_l_prime: enc(&rec.x_l_prime)?,
            keywords,
            reference: rec.reference.as_deref().map(enc).transpose()?,
        };
        inst.validate(vocab)?;
        Ok(inst)
    }

    pub fn to_record(&self, vocab: &Vocabulary) -> TaskRecord {
        TaskRecord {
            kind: self.kind.name().into(),
            x_l: vocab.decode(&self.x_l),
            x_r: vocab.decode(&self.x_r),
            x_l_prime: vocab.decode(&self.x_l_prime),
            keywords: self
                .keywords
                .iter()
                .map(|&k| vocab.token(k).unwrap_or("<unk>").to_string())
                .collect(),
            reference: self.reference.as_ref().map(|r| vocab.decode(r)),
        }
    }

    /// Tokens the initial greedy decode and top-k filtering condition on.
    pub fn left_context(&self) -> &[TokenId] {
        match self.kind {
            TaskKind::Abductive => &self.x_l,
            TaskKind::Counterfactual => &self.x_l_prime,
            TaskKind::Lexical => &[],
        }
    }

    /// Tokens admitted by top-k filtering regardless of LM rank.
    pub fn extra_tokens(&self, vocab: &Vocabulary, stopwords: &Stopwords) -> BTreeSet<TokenId> {
        match self.kind {
            TaskKind::Abductive => abductive_keywords(self, vocab, stopwords),
            TaskKind::Counterfactual => BTreeSet::new(),
            TaskKind::Lexical => self.keywords.clone(),
        }
    }
}

fn abductive_keywords(inst: &TaskInstance, vocab: &Vocabulary, stopwords: &Stopwords) -> BTreeSet<TokenId> {
    let right = keyword_set(&inst.x_r, vocab, stopwords);
    let left = keyword_set(&inst.x_l, vocab, stopwords);
    right.difference(&left).copied().collect()
}

pub fn parse_instances(text: &str, vocab: &Vocabulary) -> Result<Vec<TaskInstance>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: TaskRecord = serde_json::from_str(line).map_err(|e| Error::Json {
            context: format!("task instance on line {}", i + 1),
            source: e,
        })?;
        let inst = TaskInstance::from_record(&rec, vocab)
            .map_err(|e| Error::Data(format!("task instance on line {}: {e}", i + 1)))?;
        out.push(inst);
    }
    Ok(out)
}

pub fn instances_to_jsonl(instances: &[TaskInstance], vocab: &Vocabulary) -> String {
    let mut out = String::new();
    for inst in instances {
        out.push_str(&serde_json::to_string(&inst.to_record(vocab)).expect("records serialize"));
        out.push('\n');
    }
    out
}

pub fn read_instances(path: &Path, vocab: &Vocabulary) -> Result<Vec<TaskInstance>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_instances(&text, vocab)
}

pub fn write_instances(path: &Path, instances: &[TaskInstance], vocab: &Vocabulary) -> Result<()> {
    std::fs::write(path, instances_to_jsonl(instances, vocab)).map_err(|e| Error::io(path, e))
}

/// Constraint weights. `lr`/`rl` weigh the two fluency terms; `b` and `c`
/// weigh the task-specific terms in the order each energy lists them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightConfig {
    pub lr: Real,
    pub rl: Real,
    pub b: Real,
    pub c: Real,
}

impl WeightConfig {
    pub fn for_kind(kind: TaskKind) -> Self {
        match kind {
            // The remaining 0.5 is split 1 : 0.05 between prediction and
            // keyword similarity.
            TaskKind::Abductive => Self {
                lr: 0.3,
                rl: 0.2,
                b: 0.5 / 1.05,
                c: 0.5 * 0.05 / 1.05,
            },
            TaskKind::Counterfactual => Self {
                lr: 0.64,
                rl: 0.16,
                b: 0.2,
                c: 0.0,
            },
            TaskKind::Lexical => Self {
                lr: 0.3,
                rl: 0.2,
                b: 0.05,
                c: 0.45,
            },
        }
    }

    pub fn total(&self) -> Real {
        self.lr + self.rl + self.b + self.c
    }

    /// Applies `KEY=VALUE` with key one of `lr`, `rl`, `b`, `c`.
    pub fn set(&mut self, assignment: &str) -> Result<()> {
        let (key, value) = assignment
            .split_once('=')
            .ok_or_else(|| Error::invalid(format!("weight override '{assignment}' is not KEY=VALUE")))?;
        let value: Real = value
            .trim()
            .parse()
            .map_err(|_| Error::invalid(format!("weight value '{value}' is not a number")))?;
        if !(value >= 0.0 && value.is_finite()) {
            return Err(Error::invalid(format!("weight {key} must be finite and non-negative")));
        }
        let slot = match key.trim() {
            "lr" => &mut self.lr,
            "rl" => &mut self.rl,
            "b" => &mut self.b,
            "c" => &mut self.c,
            other => return Err(Error::invalid(format!("unknown weight '{other}' (expected lr, rl, b or c)"))),
        };
        *slot = value;
        Ok(())
    }
}

/// Constraint removals for ablation runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Ablation {
    pub no_sim: bool,
    pub no_revlm: bool,
    pub no_pred: bool,
}

impl Ablation {
    pub const NONE: Ablation = Ablation {
        no_sim: false,
        no_revlm: false,
        no_pred: false,
    };

    /// Full configuration followed by each single-term removal.
    pub fn standard_set() -> [Ablation; 4] {
        [
            Self::NONE,
            Self { no_sim: true, ..Self::NONE },
            Self { no_revlm: true, ..Self::NONE },
            Self { no_pred: true, ..Self::NONE },
        ]
    }

    pub fn label(&self) -> String {
        let mut parts = vec!["full".to_string()];
        for (on, name) in [(self.no_sim, LABEL_SIM), (self.no_revlm, LABEL_LM_RL), (self.no_pred, LABEL_PRED)] {
            if on {
                parts.push(format!("- {name}"));
            }
        }
        if parts.len() > 1 {
            parts.remove(0);
            format!("COLD {}", parts.join(" "))
        } else {
            "COLD (full)".into()
        }
    }

    fn removes(&self, label: &str) -> bool {
        (self.no_sim && label == LABEL_SIM)
            || (self.no_revlm && label == LABEL_LM_RL)
            || (self.no_pred && label == LABEL_PRED)
    }
}

/// The forward model and its right-to-left twin.
#[derive(Debug, Clone, Copy)]
pub struct Models<'a> {
    pub forward: &'a LanguageModel,
    pub reverse: &'a LanguageModel,
}

impl<'a> Models<'a> {
    pub fn new(forward: &'a LanguageModel, reverse: &'a LanguageModel) -> Result<Self> {
        forward.expect_direction(Direction::Forward)?;
        reverse.expect_direction(Direction::Reverse)?;
        if forward.vocab().hash() != reverse.vocab().hash() {
            return Err(Error::VocabularyMismatch);
        }
        Ok(Self { forward, reverse })
    }

    pub fn vocab(&self) -> &'a Vocabulary {
        self.forward.vocab()
    }
}

fn expect_kind(inst: &TaskInstance, kind: TaskKind) -> Result<()> {
    if inst.kind != kind {
        return Err(Error::KindMismatch {
            expected: kind.name(),
            found: inst.kind.name(),
        });
    }
    Ok(())
}

fn finish<'a>(terms: Vec<EnergyTerm<'a>>, ablation: Ablation, config: &DecodeConfig) -> Result<EnergySpec<'a>> {
    let kept = terms.into_iter().filter(|t| !ablation.removes(&t.label)).collect();
    EnergySpec::new(kept, config.constraint_options())
}

/// Left fluency on `x_l`, right fluency on `x_r`, prediction of `x_r`, and
/// unigram similarity with the keywords of `x_r` absent from `x_l`.
pub fn abductive_energy<'a>(
    inst: &TaskInstance,
    weights: &WeightConfig,
    models: Models<'a>,
    stopwords: &Stopwords,
    ablation: Ablation,
    config: &DecodeConfig,
) -> Result<EnergySpec<'a>> {
    expect_kind(inst, TaskKind::Abductive)?;
    let vocab = models.vocab();
    let kw = abductive_keywords(inst, vocab, stopwords);
    finish(
        vec![
            EnergyTerm::new(LABEL_LM_LR, ConstraintFn::fluency_forward(models.forward, &inst.x_l)?, weights.lr),
            EnergyTerm::new(LABEL_LM_RL, ConstraintFn::fluency_reverse(models.reverse, &inst.x_r)?, weights.rl),
            EnergyTerm::new(LABEL_PRED, ConstraintFn::future_prediction(models.forward, &inst.x_r)?, weights.b),
            EnergyTerm::new(LABEL_SIM, ConstraintFn::keywords(vocab, &kw)?, weights.c),
        ],
        ablation,
        config,
    )
}

/// Left fluency on the new context `x'_l`, unconditioned right fluency, and
/// 2/3-gram similarity with the original ending.
pub fn counterfactual_energy<'a>(
    inst: &TaskInstance,
    weights: &WeightConfig,
    models: Models<'a>,
    ablation: Ablation,
    config: &DecodeConfig,
) -> Result<EnergySpec<'a>> {
    expect_kind(inst, TaskKind::Counterfactual)?;
    finish(
        vec![
            EnergyTerm::new(
                LABEL_LM_LR,
                ConstraintFn::fluency_forward(models.forward, &inst.x_l_prime)?,
                weights.lr,
            ),
            EnergyTerm::new(LABEL_LM_RL, ConstraintFn::fluency_reverse(models.reverse, &[])?, weights.rl),
            EnergyTerm::new(
                LABEL_SIM,
                ConstraintFn::ngram_similarity(models.vocab(), &inst.x_r, &[2, 3])?,
                weights.b,
            ),
        ],
        ablation,
        config,
    )
}

/// Keywords in ascending id order.
pub fn concat_keywords(keywords: &BTreeSet<TokenId>) -> Vec<TokenId> {
    keywords.iter().copied().collect()
}

/// Both fluency terms, unigram similarity with the keywords, and prediction
/// of the concatenated keywords.
pub fn lexical_energy<'a>(
    inst: &TaskInstance,
    weights: &WeightConfig,
    models: Models<'a>,
    ablation: Ablation,
    config: &DecodeConfig,
) -> Result<EnergySpec<'a>> {
    expect_kind(inst, TaskKind::Lexical)?;
    let vocab = models.vocab();
    finish(
        vec![
            EnergyTerm::new(LABEL_LM_LR, ConstraintFn::fluency_forward(models.forward, &[])?, weights.lr),
            EnergyTerm::new(LABEL_LM_RL, ConstraintFn::fluency_reverse(models.reverse, &[])?, weights.rl),
            EnergyTerm::new(LABEL_SIM, ConstraintFn::keywords(vocab, &inst.keywords)?, weights.b),
            EnergyTerm::new(
                LABEL_PRED,
                ConstraintFn::future_prediction(models.forward, &concat_keywords(&inst.keywords))?,
                weights.c,
            ),
        ],
        ablation,
        config,
    )
}

/// Dispatches on the instance kind.
pub fn task_energy<'a>(
    inst: &TaskInstance,
    weights: &WeightConfig,
    models: Models<'a>,
    stopwords: &Stopwords,
    ablation: Ablation,
    config: &DecodeConfig,
) -> Result<EnergySpec<'a>> {
    match inst.kind {
        TaskKind::Abductive => abductive_energy(inst, weights, models, stopwords, ablation, config),
        TaskKind::Counterfactual => counterfactual_energy(inst, weights, models, ablation, config),
        TaskKind::Lexical => lexical_energy(inst, weights, models, ablation, config),
    }
}

/// One discretized chain with its scores.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Candidate {
    pub chain: usize,
    pub tokens: Vec<TokenId>,
    /// Length of the top-k output before greedy continuation.
    pub discrete_len: usize,
    pub initial_energy: Real,
    pub final_energy: Real,
    /// `λᵢ·fᵢ` at the final soft sample, in energy term order.
    pub energy_terms: Vec<Real>,
    /// Ranking scores by name; lower is better.
    pub scores: BTreeMap<String, f64>,
    #[serde(skip)]
    pub trace: Vec<TraceRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Selection {
    pub winner: usize,
    pub pool: Vec<Candidate>,
}

impl Selection {
    pub fn best(&self) -> &Candidate {
        &self.pool[self.winner]
    }
}

fn cat(parts: &[&[TokenId]]) -> Vec<TokenId> {
    parts.concat()
}

/// Energy of a discrete output, cast to sharp one-hot logits.
pub fn one_hot_energy(spec: &EnergySpec, tokens: &[TokenId], vocab_size: usize) -> Result<Real> {
    let mut logits = Array::zeros(tokens.len(), vocab_size);
    for (t, &tok) in tokens.iter().enumerate() {
        logits.set(t, tok, ONE_HOT_GAP);
    }
    spec.value(&SoftSequence::new(logits, vocab_size)?)
}

fn first_min(values: impl Iterator<Item = (usize, f64)>) -> usize {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in values {
        if best.is_none_or(|(_, b)| v.total_cmp(&b).is_lt()) {
            best = Some((i, v));
        }
    }
    best.expect("non-empty pool").0
}

/// Ranks a scored pool. Abductive: shortlist by joint perplexity, then the
/// lowest right-side perplexity. Counterfactual: lowest context perplexity.
/// Lexical: lowest one-hot energy.
pub fn select(kind: TaskKind, pool: &[Candidate]) -> usize {
    let score = |i: usize, name: &str| pool[i].scores[name];
    match kind {
        TaskKind::Abductive => {
            let mut order: Vec<usize> = (0..pool.len()).collect();
            order.sort_by(|&a, &b| score(a, "joint_ppl").total_cmp(&score(b, "joint_ppl")));
            order.truncate(ABDUCTIVE_SHORTLIST);
            first_min(order.into_iter().map(|i| (i, score(i, "right_ppl"))))
        }
        TaskKind::Counterfactual => first_min((0..pool.len()).map(|i| (i, score(i, "context_ppl")))),
        TaskKind::Lexical => first_min((0..pool.len()).map(|i| (i, score(i, "one_hot_energy")))),
    }
}

/// Draws `config.num_samples` chains, discretizes and continues each, scores
/// the pool and picks the winner.
pub fn sample_and_select(
    spec: &EnergySpec,
    inst: &TaskInstance,
    config: &DecodeConfig,
    models: Models,
    stopwords: &Stopwords,
) -> Result<Selection> {
    config.validate()?;
    let lm = models.forward;
    let vocab = models.vocab();
    let left = inst.left_context();
    let init = init_soft_sequence(lm, left, config.length)?;
    let chains = sample_chains(spec, config, &init)?;
    let disc = DiscretizeConfig {
        k: config.topk,
        extra_tokens: inst.extra_tokens(vocab, stopwords),
        max_continuation: config.max_continuation,
        sentence_end: vocab.sentence_end(),
    };
    let mut pool = Vec::with_capacity(chains.len());
    for (i, chain) in chains.into_iter().enumerate() {
        let discrete = topk_filter(&chain.sample, lm, &disc, left)?;
        let tokens = continue_sequence(lm, &discrete, &disc, left)?;
        let final_terms = chain.trace.last().map(|r| r.per_term.clone()).unwrap_or_default();
        let mut scores = BTreeMap::new();
        match inst.kind {
            TaskKind::Abductive => {
                scores.insert("joint_ppl".into(), lm.perplexity(&cat(&[&inst.x_l, &tokens, &inst.x_r]), &[])?);
                scores.insert("right_ppl".into(), lm.perplexity(&cat(&[&tokens, &inst.x_r]), &[])?);
            }
            TaskKind::Counterfactual => {
                scores.insert("context_ppl".into(), lm.perplexity(&cat(&[&inst.x_l_prime, &tokens]), &[])?);
            }
            TaskKind::Lexical => {
                scores.insert(
                    "one_hot_energy".into(),
                    one_hot_energy(spec, &tokens, vocab.len())? as f64,
                );
            }
        }
        pool.push(Candidate {
            chain: i,
            tokens,
            discrete_len: discrete.len(),
            initial_energy: chain.initial_energy(),
            final_energy: chain.final_energy(),
            energy_terms: final_terms,
            scores,
            trace: chain.trace,
        });
    }
    let winner = select(inst.kind, &pool);
    Ok(Selection { winner, pool })
}

/// Greedy decoding of the task's left context followed by the same
/// continuation rule, as a baseline.
pub fn greedy_baseline(inst: &TaskInstance, config: &DecodeConfig, lm: &LanguageModel) -> Result<Vec<TokenId>> {
    let (tokens, _) = lm.greedy_decode(inst.left_context(), config.length)?;
    let disc = DiscretizeConfig {
        k: 1,
        extra_tokens: BTreeSet::new(),
        max_continuation: config.max_continuation,
        sentence_end: lm.vocab().sentence_end(),
    };
    continue_sequence(lm, &tokens, &disc, inst.left_context())
}

fn long_story(gen: &mut StoryGenerator) -> Vec<Sentence> {
    loop {
        let s = gen.story();
        if s.sentences.len() >= 3 {
            return s.sentences;
        }
    }
}

/// Deterministic synthetic instances drawn from the story grammar.
///
/// * abductive: `x_l` = first sentence, `x_r` = third, reference = second;
/// * counterfactual: `x'_l` = first sentence with its object swapped for
///   another of the same class, `x_r` = second and third sentences,
///   reference = `x_r` with the same swap;
/// * lexical: keywords = subject, verb and object of one sentence, which is
///   also the reference.
pub fn generate_instances(kind: TaskKind, count: usize, seed: u64, vocab: &Vocabulary) -> Result<Vec<TaskInstance>> {
    let mut gen = StoryGenerator::new(seed);
    let mut rng = crate::sampler::chain_rng(seed, 1 << 20);
    let mut out = Vec::with_capacity(count);
    let words = |ws: &[&str]| vocab.encode_words(ws);
    while out.len() < count {
        let inst = match kind {
            TaskKind::Abductive => {
                let s = long_story(&mut gen);
                TaskInstance::abductive(words(&s[0].words)?, words(&s[2].words)?).with_reference(words(&s[1].words)?)
            }
            TaskKind::Counterfactual => {
                let s = long_story(&mut gen);
                let object = s[0].object.expect("first sentence is transitive");
                let class = Class::of(object).expect("object from lexicon");
                let others: Vec<&'static str> = class
                    .words()
                    .iter()
                    .copied()
                    .filter(|&w| w != object && w != s[0].subject)
                    .collect();
                let new_object = others[rng.random_range(0..others.len())];
                let x_l_prime = gen.with_object(&s[0], new_object, false);
                let x_r: Vec<&str> = s[1].words.iter().chain(&s[2].words).copied().collect();
                let swapped: Vec<&str> = x_r.iter().map(|&w| if w == object { new_object } else { w }).collect();
                TaskInstance::counterfactual(words(&s[0].words)?, words(&x_r)?, words(&x_l_prime.words)?)
                    .with_reference(words(&swapped)?)
            }
            TaskKind::Lexical => {
                let s = gen.transitive_sentence();
                let object = s.object.expect("transitive sentence has an object");
                let keywords = words(&[s.subject, s.verb, object])?.into_iter().collect();
                TaskInstance::lexical(keywords).with_reference(words(&s.words)?)
            }
        };
        out.push(inst);
    }
    Ok(out)
}
