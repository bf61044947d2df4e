//! Differentiable constraint functions over soft sequences.
//!
//! A soft sequence is a `T × V` array of logits. Every constraint builds a
//! scalar node on a [`Graph`] whose gradient with respect to the logits is
//! exact, so the sampler can use them directly as energy terms.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lm::{Direction, LanguageModel};
use crate::numerics::{softmax, Array, Graph, Real, Var};
use crate::vocab::{TokenId, Vocabulary};

const STOPWORDS: &str = include_str!("../data/stopwords.txt");

/// Logits of a relaxed token sequence, one row per position.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftSequence {
    logits: Array,
}

impl SoftSequence {
    pub fn new(logits: Array, vocab_size: usize) -> Result<Self> {
        if logits.cols() != vocab_size {
            return Err(Error::invalid(format!(
                "soft sequence has width {} but the vocabulary has {vocab_size} tokens",
                logits.cols()
            )));
        }
        if logits.rows() == 0 {
            return Err(Error::invalid("soft sequence must have at least one position"));
        }
        if !logits.is_finite() {
            return Err(Error::invalid("soft sequence contains non-finite logits"));
        }
        Ok(Self { logits })
    }

    /// Rows with `1` at each token and `0` elsewhere. Evaluated with a small
    /// temperature these behave as the discrete sequence.
    pub fn one_hot(tokens: &[TokenId], vocab_size: usize) -> Result<Self> {
        let mut a = Array::zeros(tokens.len(), vocab_size);
        for (t, &tok) in tokens.iter().enumerate() {
            if tok >= vocab_size {
                return Err(Error::InvalidToken { id: tok, vocab_size });
            }
            a.set(t, tok, 1.0);
        }
        Self::new(a, vocab_size)
    }

    pub fn len(&self) -> usize {
        self.logits.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.logits.rows() == 0
    }

    pub fn vocab_size(&self) -> usize {
        self.logits.cols()
    }

    pub fn logits(&self) -> &Array {
        &self.logits
    }

    pub fn logits_mut(&mut self) -> &mut Array {
        &mut self.logits
    }

    pub fn into_logits(self) -> Array {
        self.logits
    }

    /// Row-wise argmax, ties to the lowest id.
    pub fn argmax_tokens(&self) -> Vec<TokenId> {
        (0..self.len()).map(|t| crate::numerics::argmax(self.logits.row(t))).collect()
    }

    /// Row distributions `softmax(row / tau)`.
    pub fn probabilities(&self, tau: Real) -> Array {
        let mut out = self.logits.clone();
        for t in 0..self.len() {
            let p = softmax(self.logits.row(t), tau);
            out.row_mut(t).copy_from_slice(&p);
        }
        out
    }
}

/// How the fluency terms compare a soft row with the LM's reference
/// distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FluencyForm {
    /// `Σ_v p_LM(v|·) log softmax(ỹ_t)(v)`: negative cross-entropy of the
    /// soft row against the reference distribution.
    #[default]
    CrossEntropy,
    /// `Σ_v softmax(ỹ_t/τ)(v) log p_LM(v|·)`: expected log-likelihood of the
    /// soft row. Equals the hard log-likelihood at one-hot rows.
    Likelihood,
}

impl FluencyForm {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "cross-entropy" => Ok(Self::CrossEntropy),
            "likelihood" => Ok(Self::Likelihood),
            other => Err(Error::invalid(format!(
                "unknown fluency form '{other}' (expected cross-entropy or likelihood)"
            ))),
        }
    }
}

/// Evaluation settings shared by all constraints of an energy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstraintOptions {
    /// Temperature of `softmax(ỹ_t / τ)` when soft rows are fed to an LM or
    /// counted as n-grams.
    pub tau: Real,
    /// Treat the fluency reference distribution as a constant.
    pub detach_reference: bool,
    pub fluency_form: FluencyForm,
}

impl Default for ConstraintOptions {
    fn default() -> Self {
        Self {
            tau: 1.0,
            detach_reference: false,
            fluency_form: FluencyForm::CrossEntropy,
        }
    }
}

impl ConstraintOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::invalid(format!("temperature must be positive, got {}", self.tau)));
        }
        Ok(())
    }
}

fn check_soft(g: &Graph, lm: &LanguageModel, y: Var) -> Result<usize> {
    let [t, v] = g.shape(y);
    if v != lm.vocab_size() {
        return Err(Error::invalid(format!(
            "soft sequence width {v} does not match vocabulary size {}",
            lm.vocab_size()
        )));
    }
    if t == 0 {
        return Err(Error::invalid("soft sequence must have at least one position"));
    }
    Ok(t)
}

/// Fluency of `y` read left to right by `lm` after `<bos> condition`.
fn fluency_core(
    g: &mut Graph,
    lm: &LanguageModel,
    y: Var,
    condition: &[TokenId],
    opts: &ConstraintOptions,
) -> Result<Var> {
    let t = check_soft(g, lm, y)?;
    lm.vocab().check(condition)?;
    let vars = lm.bind(g);
    let mut prefix = Vec::with_capacity(condition.len() + 1);
    prefix.push(lm.vocab().bos());
    prefix.extend_from_slice(condition);

    let fed = if opts.detach_reference {
        let copy = g.value(y).clone();
        g.constant(copy)
    } else {
        y
    };
    let soft_prefix = if t > 1 { Some(g.slice_rows(fed, 0, t - 1)?) } else { None };
    let inputs = lm.context_inputs(g, &vars, &prefix, soft_prefix.map(|s| (s, opts.tau)), &[])?;
    let logits = lm.forward_logits(g, &vars, inputs)?;
    let reference = g.slice_rows(logits, prefix.len() - 1, t)?;

    let prod = match opts.fluency_form {
        FluencyForm::CrossEntropy => {
            let p = g.softmax_rows(reference, 1.0)?;
            let log_q = g.log_softmax_rows(y, 1.0)?;
            g.mul(p, log_q)?
        }
        FluencyForm::Likelihood => {
            let q = g.softmax_rows(y, opts.tau)?;
            let log_p = g.log_softmax_rows(reference, 1.0)?;
            g.mul(q, log_p)?
        }
    };
    Ok(g.sum(prod))
}

/// Left-to-right fluency of `y` conditioned on the left context `x_l`.
pub fn fluency_forward(
    g: &mut Graph,
    y: Var,
    x_l: &[TokenId],
    lm: &LanguageModel,
    opts: &ConstraintOptions,
) -> Result<Var> {
    lm.expect_direction(Direction::Forward)?;
    fluency_core(g, lm, y, x_l, opts)
}

/// Right-to-left fluency of `y` conditioned on the right context `x_r`: the
/// reverse model reads `x_r` backwards, then the rows of `y` backwards.
pub fn fluency_reverse(
    g: &mut Graph,
    y: Var,
    x_r: &[TokenId],
    rev_lm: &LanguageModel,
    opts: &ConstraintOptions,
) -> Result<Var> {
    rev_lm.expect_direction(Direction::Reverse)?;
    let t = check_soft(g, rev_lm, y)?;
    let order: Vec<usize> = (0..t).rev().collect();
    let reversed = g.gather_rows(y, &order)?;
    let condition: Vec<TokenId> = x_r.iter().rev().copied().collect();
    fluency_core(g, rev_lm, reversed, &condition, opts)
}

/// Log-likelihood of the fixed tokens `x_r` read after the soft sequence.
pub fn future_token_prediction(
    g: &mut Graph,
    y: Var,
    x_r: &[TokenId],
    lm: &LanguageModel,
    opts: &ConstraintOptions,
) -> Result<Var> {
    lm.expect_direction(Direction::Forward)?;
    if x_r.is_empty() {
        return Err(Error::invalid("future-token prediction needs at least one target token"));
    }
    let t = check_soft(g, lm, y)?;
    lm.vocab().check(x_r)?;
    let vars = lm.bind(g);
    let bos = [lm.vocab().bos()];
    let suffix = &x_r[..x_r.len() - 1];
    let inputs = lm.context_inputs(g, &vars, &bos, Some((y, opts.tau)), suffix)?;
    let logits = lm.forward_logits(g, &vars, inputs)?;
    let logp = g.log_softmax_rows(logits, 1.0)?;
    let idx: Vec<(usize, usize)> = x_r.iter().enumerate().map(|(k, &tok)| (t + k, tok)).collect();
    let picked = g.pick(logp, &idx)?;
    Ok(g.sum(picked))
}

/// Clipped soft n-gram precision of `y` against `reference`, in `[0, 1]`.
pub fn ngram_similarity(
    g: &mut Graph,
    y: Var,
    reference: &[TokenId],
    n: usize,
    tau: Real,
) -> Result<Var> {
    let [t, v] = g.shape(y);
    if n == 0 || n > t || n > reference.len() {
        return Err(Error::invalid(format!(
            "n-gram order {n} must lie in 1..={} (sequence length {t}, reference length {})",
            t.min(reference.len()),
            reference.len()
        )));
    }
    if let Some(&bad) = reference.iter().find(|&&r| r >= v) {
        return Err(Error::InvalidToken { id: bad, vocab_size: v });
    }
    let mut counts: BTreeMap<&[TokenId], usize> = BTreeMap::new();
    for gram in reference.windows(n) {
        *counts.entry(gram).or_default() += 1;
    }
    let p = g.softmax_rows(y, tau)?;
    let positions = t - n + 1;
    let mut matched: Option<Var> = None;
    for (gram, count) in counts {
        let mut prod: Option<Var> = None;
        for (j, &tok) in gram.iter().enumerate() {
            let idx: Vec<(usize, usize)> = (0..positions).map(|s| (s + j, tok)).collect();
            let col = g.pick(p, &idx)?;
            prod = Some(match prod {
                Some(acc) => g.mul(acc, col)?,
                None => col,
            });
        }
        let soft_count = g.sum(prod.expect("n >= 1"));
        let cap = g.constant(Array::scalar(count as Real));
        let clipped = g.minimum(soft_count, cap)?;
        matched = Some(match matched {
            Some(acc) => g.add(acc, clipped)?,
            None => clipped,
        });
    }
    let matched = matched.expect("reference has at least one n-gram");
    Ok(g.scale(matched, 1.0 / positions as Real))
}

/// Stopword list used to extract keywords.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Stopwords {
    words: BTreeSet<String>,
}

impl Stopwords {
    pub fn from_words<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            words: words.into_iter().map(Into::into).collect(),
        }
    }

    /// Parses one word per line; blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Self {
        Self::from_words(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#')),
        )
    }

    pub fn contains(&self, word: &str) -> bool {
        self.words.contains(word)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

impl Default for Stopwords {
    /// The bundled 50-word function-word list.
    fn default() -> Self {
        Self::parse(STOPWORDS)
    }
}

/// Distinct non-stopword ids of `x`. Reserved tokens and the sentence end
/// are never keywords.
pub fn keyword_set(x: &[TokenId], vocab: &Vocabulary, stopwords: &Stopwords) -> BTreeSet<TokenId> {
    let reserved = [vocab.bos(), vocab.eos(), vocab.sentence_end(), vocab.unk()];
    x.iter()
        .copied()
        .filter(|id| !reserved.contains(id))
        .filter(|&id| vocab.token(id).is_some_and(|w| !stopwords.contains(w)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConstraintKind {
    FluencyForward,
    FluencyReverse,
    FuturePrediction,
    NgramSimilarity,
}

impl ConstraintKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::FluencyForward => "fluency-forward",
            Self::FluencyReverse => "fluency-reverse",
            Self::FuturePrediction => "future-prediction",
            Self::NgramSimilarity => "ngram-similarity",
        }
    }
}

/// A constraint bound to its conditioning data.
#[derive(Clone)]
pub enum ConstraintFn<'a> {
    FluencyForward {
        lm: &'a LanguageModel,
        context: Vec<TokenId>,
    },
    FluencyReverse {
        lm: &'a LanguageModel,
        context: Vec<TokenId>,
    },
    FuturePrediction {
        lm: &'a LanguageModel,
        target: Vec<TokenId>,
    },
    /// Mean over `orders` of the clipped n-gram precision. An empty
    /// reference makes the term identically zero.
    NgramSimilarity {
        reference: Vec<TokenId>,
        orders: Vec<usize>,
    },
}

impl fmt::Debug for ConstraintFn<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::FluencyForward { context, .. } | Self::FluencyReverse { context, .. } => f
                .debug_struct(self.kind().name())
                .field("context", context)
                .finish(),
            Self::FuturePrediction { target, .. } => {
                f.debug_struct(self.kind().name()).field("target", target).finish()
            }
            Self::NgramSimilarity { reference, orders } => f
                .debug_struct(self.kind().name())
                .field("reference", reference)
                .field("orders", orders)
                .finish(),
        }
    }
}

impl<'a> ConstraintFn<'a> {
    pub fn fluency_forward(lm: &'a LanguageModel, x_l: &[TokenId]) -> Result<Self> {
        lm.expect_direction(Direction::Forward)?;
        lm.vocab().check(x_l)?;
        Ok(Self::FluencyForward {
            lm,
            context: x_l.to_vec(),
        })
    }

    pub fn fluency_reverse(rev_lm: &'a LanguageModel, x_r: &[TokenId]) -> Result<Self> {
        rev_lm.expect_direction(Direction::Reverse)?;
        rev_lm.vocab().check(x_r)?;
        Ok(Self::FluencyReverse {
            lm: rev_lm,
            context: x_r.to_vec(),
        })
    }

    pub fn future_prediction(lm: &'a LanguageModel, x_r: &[TokenId]) -> Result<Self> {
        lm.expect_direction(Direction::Forward)?;
        if x_r.is_empty() {
            return Err(Error::invalid("future-token prediction needs at least one target token"));
        }
        lm.vocab().check(x_r)?;
        Ok(Self::FuturePrediction {
            lm,
            target: x_r.to_vec(),
        })
    }

    pub fn ngram_similarity(vocab: &Vocabulary, reference: &[TokenId], orders: &[usize]) -> Result<Self> {
        vocab.check(reference)?;
        if orders.is_empty() || orders.contains(&0) {
            return Err(Error::invalid("n-gram orders must be non-empty and at least 1"));
        }
        if !reference.is_empty() {
            if let Some(&n) = orders.iter().find(|&&n| n > reference.len()) {
                return Err(Error::invalid(format!(
                    "n-gram order {n} exceeds reference length {}",
                    reference.len()
                )));
            }
        }
        Ok(Self::NgramSimilarity {
            reference: reference.to_vec(),
            orders: orders.to_vec(),
        })
    }

    /// Unigram similarity against a keyword set, each keyword counted once.
    pub fn keywords(vocab: &Vocabulary, keywords: &BTreeSet<TokenId>) -> Result<Self> {
        let reference: Vec<TokenId> = keywords.iter().copied().collect();
        Self::ngram_similarity(vocab, &reference, &[1])
    }

    pub fn kind(&self) -> ConstraintKind {
        match self {
            Self::FluencyForward { .. } => ConstraintKind::FluencyForward,
            Self::FluencyReverse { .. } => ConstraintKind::FluencyReverse,
            Self::FuturePrediction { .. } => ConstraintKind::FuturePrediction,
            Self::NgramSimilarity { .. } => ConstraintKind::NgramSimilarity,
        }
    }

    /// Builds the constraint value as a `1 × 1` node depending on `y`.
    pub fn build(&self, g: &mut Graph, y: Var, opts: &ConstraintOptions) -> Result<Var> {
        match self {
            Self::FluencyForward { lm, context } => fluency_forward(g, y, context, lm, opts),
            Self::FluencyReverse { lm, context } => fluency_reverse(g, y, context, lm, opts),
            Self::FuturePrediction { lm, target } => future_token_prediction(g, y, target, lm, opts),
            Self::NgramSimilarity { reference, orders } => {
                if reference.is_empty() {
                    return Ok(g.constant(Array::scalar(0.0)));
                }
                let mut total: Option<Var> = None;
                for &n in orders {
                    let s = ngram_similarity(g, y, reference, n, opts.tau)?;
                    total = Some(match total {
                        Some(acc) => g.add(acc, s)?,
                        None => s,
                    });
                }
                let total = total.expect("orders is non-empty");
                Ok(g.scale(total, 1.0 / orders.len() as Real))
            }
        }
    }

    /// Value of the constraint at `soft`.
    pub fn value(&self, soft: &SoftSequence, opts: &ConstraintOptions) -> Result<Real> {
        let mut g = Graph::new();
        let y = g.constant(soft.logits().clone());
        let out = self.build(&mut g, y, opts)?;
        Ok(g.value(out).item())
    }

    /// Value and gradient with respect to the logits of `soft`.
    pub fn value_and_grad(&self, soft: &SoftSequence, opts: &ConstraintOptions) -> Result<(Real, Array)> {
        let mut g = Graph::new();
        let y = g.leaf(soft.logits().clone());
        let out = self.build(&mut g, y, opts)?;
        let value = g.value(out).item();
        g.backward(out)?;
        let grad = g
            .grad(y)
            .cloned()
            .unwrap_or_else(|| Array::zeros(soft.len(), soft.vocab_size()));
        Ok((value, grad))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::tests::random_model;
    use crate::lm::{LmParams, TrainingMeta};
    use crate::numerics::check_gradient;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn vocab() -> Vocabulary {
        Vocabulary::new(["a", "b", "c", "d", "e", "f", "g"])
    }

    fn reversed(lm: &LanguageModel) -> LanguageModel {
        LanguageModel::new(lm.vocab().clone(), Direction::Reverse, lm.params().clone(), TrainingMeta::default())
            .unwrap()
    }

    fn random_logits(rng: &mut ChaCha8Rng, t: usize, v: usize) -> Array {
        let data = (0..t * v).map(|_| rng.random_range(-2.0..2.0)).collect();
        Array::new(t, v, data).unwrap()
    }

    fn sharp(tau: Real) -> ConstraintOptions {
        ConstraintOptions {
            tau,
            detach_reference: false,
            fluency_form: FluencyForm::Likelihood,
        }
    }

    /// Hard log-likelihood of `tokens` after `<bos> condition`, summed.
    fn hard_loglik(lm: &LanguageModel, condition: &[TokenId], tokens: &[TokenId]) -> f64 {
        let ppl = lm.perplexity(tokens, condition).unwrap();
        -(tokens.len() as f64) * ppl.ln()
    }

    /// Modified n-gram precision by direct counting.
    fn clipped_precision(y: &[TokenId], r: &[TokenId], n: usize) -> f64 {
        let cands: Vec<&[TokenId]> = y.windows(n).collect();
        let mut matched = 0;
        let mut seen: Vec<&[TokenId]> = Vec::new();
        for c in &cands {
            if seen.contains(c) {
                continue;
            }
            seen.push(c);
            let in_y = cands.iter().filter(|x| *x == c).count();
            let in_r = r.windows(n).filter(|x| x == c).count();
            matched += in_y.min(in_r);
        }
        matched as f64 / cands.len() as f64
    }

    #[test]
    fn uniform_rows_give_minus_t_log_v() {
        let v = Vocabulary::new(Vec::<&str>::new());
        assert_eq!(v.len(), 4);
        let fwd = random_model(v.clone(), 3, 2);
        let rev = reversed(&fwd);
        let soft = SoftSequence::new(Array::zeros(2, 4), 4).unwrap();
        let opts = ConstraintOptions::default();
        let expect = -2.0 * (4.0 as Real).ln();
        let f = ConstraintFn::fluency_forward(&fwd, &[2]).unwrap().value(&soft, &opts).unwrap();
        let r = ConstraintFn::fluency_reverse(&rev, &[3]).unwrap().value(&soft, &opts).unwrap();
        assert!((f - expect).abs() < 1e-12, "{f}");
        assert!((r - expect).abs() < 1e-12, "{r}");
    }

    #[test]
    fn single_one_hot_row_at_argmax_gives_log_max_probability() {
        let v = vocab();
        let lm = random_model(v.clone(), 4, 9);
        let dist = crate::lm::next_token_dist(&lm, &[v.bos(), 5], None, 1.0).unwrap();
        let best = crate::numerics::argmax(&dist);
        let soft = SoftSequence::one_hot(&[best], v.len()).unwrap();
        let f = ConstraintFn::fluency_forward(&lm, &[5]).unwrap().value(&soft, &sharp(0.01)).unwrap();
        assert!((f - dist[best].ln()).abs() < 1e-9);
    }

    #[test]
    fn one_hot_fluency_and_prediction_match_hard_loglik() {
        let v = vocab();
        let lm = random_model(v.clone(), 5, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10 {
            let y: Vec<TokenId> = (0..4).map(|_| rng.random_range(0..v.len())).collect();
            let x: Vec<TokenId> = (0..3).map(|_| rng.random_range(0..v.len())).collect();
            let soft = SoftSequence::one_hot(&y, v.len()).unwrap();
            let f = ConstraintFn::fluency_forward(&lm, &x).unwrap().value(&soft, &sharp(0.01)).unwrap();
            assert!((f as f64 - hard_loglik(&lm, &x, &y)).abs() < 1e-6);
            let p = ConstraintFn::future_prediction(&lm, &x).unwrap().value(&soft, &sharp(0.01)).unwrap();
            assert!((p as f64 - hard_loglik(&lm, &y, &x)).abs() < 1e-6);
        }
    }

    #[test]
    fn future_prediction_with_one_target_is_one_log_probability() {
        let v = vocab();
        let lm = random_model(v.clone(), 4, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let logits = random_logits(&mut rng, 3, v.len());
        let dist = crate::lm::next_token_dist(&lm, &[v.bos()], Some(&logits), 0.7).unwrap();
        let soft = SoftSequence::new(logits, v.len()).unwrap();
        let opts = ConstraintOptions {
            tau: 0.7,
            ..ConstraintOptions::default()
        };
        let p = ConstraintFn::future_prediction(&lm, &[6]).unwrap().value(&soft, &opts).unwrap();
        assert!((p - dist[6].ln()).abs() < 1e-12);
    }

    #[test]
    fn reverse_fluency_mirrors_forward_fluency() {
        let v = vocab();
        let fwd = random_model(v.clone(), 4, 6);
        let rev = reversed(&fwd);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let logits = random_logits(&mut rng, 4, v.len());
        let mut flipped = Array::zeros(4, v.len());
        for t in 0..4 {
            flipped.row_mut(t).copy_from_slice(logits.row(3 - t));
        }
        let opts = ConstraintOptions::default();
        let x_r = [7, 8, 9];
        let r = ConstraintFn::fluency_reverse(&rev, &x_r)
            .unwrap()
            .value(&SoftSequence::new(logits, v.len()).unwrap(), &opts)
            .unwrap();
        let f = ConstraintFn::fluency_forward(&fwd, &[9, 8, 7])
            .unwrap()
            .value(&SoftSequence::new(flipped, v.len()).unwrap(), &opts)
            .unwrap();
        assert!((r - f).abs() < 1e-12);
    }

    #[test]
    fn reverse_model_trained_on_corpus_matches_forward_twin_on_reversed_corpus() {
        use crate::corpus::{grammar_vocabulary, Corpus};
        use crate::lm::{train, TrainConfig};
        let v = grammar_vocabulary();
        let corpus = Corpus::generate(4, 12, &v).unwrap();
        let flipped = Corpus {
            sequences: corpus
                .sequences
                .iter()
                .map(|s| {
                    let mut body: Vec<TokenId> = s[..s.len() - 1].iter().rev().copied().collect();
                    body.push(v.eos());
                    body
                })
                .collect(),
            provenance: "reversed".into(),
        };
        let cfg = TrainConfig {
            hidden: 6,
            epochs: 1,
            seed: 8,
            ..TrainConfig::default()
        };
        let (rev, _) = train(&corpus, &v, Direction::Reverse, &cfg).unwrap();
        let (twin, _) = train(&flipped, &v, Direction::Forward, &cfg).unwrap();

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let logits = random_logits(&mut rng, 3, v.len());
        let mut back = Array::zeros(3, v.len());
        for t in 0..3 {
            back.row_mut(t).copy_from_slice(logits.row(2 - t));
        }
        let x = v.encode("the dog runs").unwrap();
        let x_rev: Vec<TokenId> = x.iter().rev().copied().collect();
        let opts = ConstraintOptions::default();
        let r = ConstraintFn::fluency_reverse(&rev, &x)
            .unwrap()
            .value(&SoftSequence::new(logits, v.len()).unwrap(), &opts)
            .unwrap();
        let f = ConstraintFn::fluency_forward(&twin, &x_rev)
            .unwrap()
            .value(&SoftSequence::new(back, v.len()).unwrap(), &opts)
            .unwrap();
        assert!((r - f).abs() < 1e-12, "{r} vs {f}");
    }

    #[test]
    fn direction_is_checked() {
        let v = vocab();
        let fwd = random_model(v.clone(), 3, 1);
        let rev = reversed(&fwd);
        assert!(matches!(
            ConstraintFn::fluency_forward(&rev, &[]),
            Err(Error::DirectionMismatch { .. })
        ));
        assert!(matches!(
            ConstraintFn::fluency_reverse(&fwd, &[]),
            Err(Error::DirectionMismatch { .. })
        ));
        assert!(ConstraintFn::future_prediction(&rev, &[4]).is_err());
        assert!(ConstraintFn::future_prediction(&fwd, &[]).is_err());
        assert!(ConstraintFn::fluency_forward(&fwd, &[99]).is_err());
    }

    #[test]
    fn ngram_similarity_examples() {
        let v = vocab();
        let opts = sharp(0.01);
        let r = [4, 5, 6, 4];
        let same = SoftSequence::one_hot(&r, v.len()).unwrap();
        let c = ConstraintFn::ngram_similarity(&v, &r, &[1]).unwrap();
        assert!((c.value(&same, &opts).unwrap() - 1.0).abs() < 1e-9);
        let other = SoftSequence::one_hot(&[7, 8, 9, 10], v.len()).unwrap();
        assert!(c.value(&other, &opts).unwrap().abs() < 1e-9);
    }

    #[test]
    fn ngram_order_out_of_range_is_rejected() {
        let v = vocab();
        assert!(ConstraintFn::ngram_similarity(&v, &[4, 5], &[3]).is_err());
        assert!(ConstraintFn::ngram_similarity(&v, &[4, 5], &[]).is_err());
        let c = ConstraintFn::ngram_similarity(&v, &[4, 5, 6], &[3]).unwrap();
        let short = SoftSequence::one_hot(&[4, 5], v.len()).unwrap();
        assert!(c.value(&short, &sharp(0.01)).is_err());
    }

    #[test]
    fn one_hot_ngram_similarity_is_clipped_precision() {
        let v = vocab();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..40 {
            let y: Vec<TokenId> = (0..6).map(|_| rng.random_range(4..8)).collect();
            let r: Vec<TokenId> = (0..5).map(|_| rng.random_range(4..8)).collect();
            let soft = SoftSequence::one_hot(&y, v.len()).unwrap();
            for n in 1..=3 {
                let c = ConstraintFn::ngram_similarity(&v, &r, &[n]).unwrap();
                let got = c.value(&soft, &sharp(0.01)).unwrap() as f64;
                assert!((got - clipped_precision(&y, &r, n)).abs() < 1e-6, "n={n}");
            }
        }
    }

    #[test]
    fn ngram_permutation_sensitivity() {
        let v = vocab();
        let opts = sharp(0.01);
        let r = [4, 5, 6, 7];
        let y = SoftSequence::one_hot(&[4, 5, 6, 7], v.len()).unwrap();
        let shuffled = SoftSequence::one_hot(&[6, 4, 7, 5], v.len()).unwrap();
        let uni = ConstraintFn::ngram_similarity(&v, &r, &[1]).unwrap();
        let bi = ConstraintFn::ngram_similarity(&v, &r, &[2]).unwrap();
        assert_eq!(uni.value(&y, &opts).unwrap(), uni.value(&shuffled, &opts).unwrap());
        assert!((bi.value(&y, &opts).unwrap() - 1.0).abs() < 1e-9);
        assert!(bi.value(&shuffled, &opts).unwrap() < 1e-9);
    }

    #[test]
    fn empty_keyword_reference_is_zero_everywhere() {
        let v = vocab();
        let c = ConstraintFn::keywords(&v, &BTreeSet::new()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let soft = SoftSequence::new(random_logits(&mut rng, 3, v.len()), v.len()).unwrap();
        let (val, grad) = c.value_and_grad(&soft, &ConstraintOptions::default()).unwrap();
        assert_eq!(val, 0.0);
        assert_eq!(grad.max_abs(), 0.0);
    }

    #[test]
    fn detached_reference_changes_gradient_not_value() {
        let v = vocab();
        let lm = random_model(v.clone(), 4, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let soft = SoftSequence::new(random_logits(&mut rng, 3, v.len()), v.len()).unwrap();
        let c = ConstraintFn::fluency_forward(&lm, &[4]).unwrap();
        let full = ConstraintOptions::default();
        let detached = ConstraintOptions {
            detach_reference: true,
            ..full
        };
        let (a, ga) = c.value_and_grad(&soft, &full).unwrap();
        let (b, gb) = c.value_and_grad(&soft, &detached).unwrap();
        assert_eq!(a, b);
        let diff: Real = ga.data().iter().zip(gb.data()).map(|(x, y)| (x - y).abs()).sum();
        assert!(diff > 1e-6);
        // The last row never feeds the LM, so its gradient is unaffected.
        let last = 2;
        for (x, y) in ga.row(last).iter().zip(gb.row(last)) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    fn grad_ok(c: &ConstraintFn, opts: &ConstraintOptions, t: usize, seed: u64) {
        let v = match c {
            ConstraintFn::FluencyForward { lm, .. }
            | ConstraintFn::FluencyReverse { lm, .. }
            | ConstraintFn::FuturePrediction { lm, .. } => lm.vocab_size(),
            ConstraintFn::NgramSimilarity { .. } => vocab().len(),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random_logits(&mut rng, t, v);
        let res = check_gradient::<_, Error>(|g, y| c.build(g, y, opts), &x, 1e-5).unwrap();
        assert!(res.max_rel_error <= 1e-4, "{:?} {res:?}", c.kind());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let v = vocab();
        let fwd = random_model(v.clone(), 5, 10);
        let rev = reversed(&random_model(v.clone(), 5, 11));
        let constraints = [
            ConstraintFn::fluency_forward(&fwd, &[4, 5]).unwrap(),
            ConstraintFn::fluency_reverse(&rev, &[6]).unwrap(),
            ConstraintFn::future_prediction(&fwd, &[7, 8]).unwrap(),
            ConstraintFn::ngram_similarity(&v, &[4, 5, 4, 6], &[1, 2]).unwrap(),
        ];
        // The detached variant is a deliberate approximation and is not
        // expected to match finite differences.
        for form in [FluencyForm::CrossEntropy, FluencyForm::Likelihood] {
            let opts = ConstraintOptions {
                tau: 0.8,
                detach_reference: false,
                fluency_form: form,
            };
            for (i, c) in constraints.iter().enumerate() {
                grad_ok(c, &opts, 3, i as u64);
            }
        }
    }

    #[test]
    fn keyword_set_examples() {
        let v = Vocabulary::new(["the", "spider", "has", "eight", "legs"]);
        let stop = Stopwords::from_words(["the", "has"]);
        let x = v.encode("the spider has eight legs").unwrap();
        let kw = keyword_set(&x, &v, &stop);
        let expect: BTreeSet<TokenId> = v.encode("spider eight legs").unwrap().into_iter().collect();
        assert_eq!(kw, expect);
        assert!(keyword_set(&v.encode("the has the").unwrap(), &v, &stop).is_empty());
        let dup = v.encode("legs legs .").unwrap();
        assert_eq!(keyword_set(&dup, &v, &stop).len(), 1);
    }

    #[test]
    fn bundled_stopwords_have_fifty_entries() {
        let s = Stopwords::default();
        assert_eq!(s.len(), 50);
        assert!(s.contains("the") && s.contains("then") && !s.contains("cat"));
    }

    #[test]
    fn soft_sequence_validation() {
        assert!(SoftSequence::new(Array::zeros(2, 3), 4).is_err());
        assert!(SoftSequence::new(Array::zeros(0, 4), 4).is_err());
        assert!(SoftSequence::new(Array::filled(1, 4, Real::NAN), 4).is_err());
        assert!(SoftSequence::one_hot(&[5], 4).is_err());
        let s = SoftSequence::one_hot(&[2, 0], 4).unwrap();
        assert_eq!(s.argmax_tokens(), vec![2, 0]);
    }

    fn uniform_twin(v: &Vocabulary) -> LanguageModel {
        LanguageModel::new(v.clone(), Direction::Forward, LmParams::zeros(v.len(), 2), TrainingMeta::default())
            .unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn constraint_values_are_bounded(seed in 0u64..1000, t in 1usize..5, tau in 0.2f64..2.0) {
            let v = vocab();
            let lm = random_model(v.clone(), 3, seed);
            let rev = reversed(&lm);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let soft = SoftSequence::new(random_logits(&mut rng, t, v.len()), v.len()).unwrap();
            for form in [FluencyForm::CrossEntropy, FluencyForm::Likelihood] {
                let opts = ConstraintOptions { tau: tau as Real, detach_reference: false, fluency_form: form };
                prop_assert!(ConstraintFn::fluency_forward(&lm, &[4]).unwrap().value(&soft, &opts).unwrap() <= 0.0);
                prop_assert!(ConstraintFn::fluency_reverse(&rev, &[5]).unwrap().value(&soft, &opts).unwrap() <= 0.0);
                prop_assert!(ConstraintFn::future_prediction(&lm, &[6, 7]).unwrap().value(&soft, &opts).unwrap() <= 0.0);
                let s = ConstraintFn::ngram_similarity(&v, &[4, 5, 6, 4, 5], &[1]).unwrap().value(&soft, &opts).unwrap();
                prop_assert!((0.0..=1.0).contains(&s));
            }
        }

        #[test]
        fn unigram_similarity_ignores_row_order(seed in 0u64..1000) {
            let v = vocab();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let y: Vec<TokenId> = (0..5).map(|_| rng.random_range(4..9)).collect();
            let mut z = y.clone();
            z.rotate_left(2);
            let c = ConstraintFn::ngram_similarity(&v, &[4, 6, 8], &[1]).unwrap();
            let opts = sharp(0.01);
            let a = c.value(&SoftSequence::one_hot(&y, v.len()).unwrap(), &opts).unwrap();
            let b = c.value(&SoftSequence::one_hot(&z, v.len()).unwrap(), &opts).unwrap();
            prop_assert!((a - b).abs() < 1e-9);
        }

        #[test]
        fn zero_parameter_model_gives_uniform_reference(t in 1usize..4, seed in 0u64..100) {
            // With a uniform LM the cross-entropy form reduces to the mean
            // log-softmax of each row.
            let v = vocab();
            let lm = uniform_twin(&v);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let logits = random_logits(&mut rng, t, v.len());
            let mut expect = 0.0;
            for r in 0..t {
                let row = logits.row(r);
                let lse = crate::numerics::log_sum_exp(row, 1.0);
                expect += row.iter().map(|x| x - lse).sum::<Real>() / v.len() as Real;
            }
            let soft = SoftSequence::new(logits, v.len()).unwrap();
            let f = ConstraintFn::fluency_forward(&lm, &[]).unwrap().value(&soft, &ConstraintOptions::default()).unwrap();
            prop_assert!((f - expect).abs() < 1e-9);
        }
    }
}
