//! A tiny single-layer recurrent language model.
//!
//! `h_t = tanh(x_t W_in + h_{t-1} W_rec + b_h)`, `logits_t = h_t W_out + b_out`,
//! where `x_t` is either a token embedding or, for soft positions, the
//! probability-weighted average of all embeddings.
//!
//! Two evaluation paths exist: graph-building methods used wherever gradients
//! are needed, and a plain-vector [`Cursor`] for decoding and scoring. Tests
//! keep them in agreement.

mod checkpoint;
mod train;

pub use checkpoint::{load_checkpoint, load_checkpoint_expecting, save_checkpoint, MAGIC};
pub use train::{train, TrainConfig, TrainReport};

use crate::error::{Error, Result};
use crate::numerics::{argmax, log_sum_exp, softmax, Array, Graph, Real, Var};
use crate::vocab::{TokenId, Vocabulary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    Forward,
    Reverse,
}

impl Direction {
    pub fn name(self) -> &'static str {
        match self {
            Direction::Forward => "forward",
            Direction::Reverse => "reverse",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "forward" => Ok(Direction::Forward),
            "reverse" => Ok(Direction::Reverse),
            other => Err(Error::invalid(format!("unknown direction {other:?}"))),
        }
    }
}

/// Model weights in checkpoint order.
#[derive(Debug, Clone, PartialEq)]
pub struct LmParams {
    /// `V × d`
    pub embedding: Array,
    /// `d × d`
    pub w_in: Array,
    /// `d × d`
    pub w_rec: Array,
    /// `1 × d`
    pub b_hidden: Array,
    /// `d × V`
    pub w_out: Array,
    /// `1 × V`
    pub b_out: Array,
}

impl LmParams {
    pub fn zeros(vocab_size: usize, hidden: usize) -> Self {
        Self {
            embedding: Array::zeros(vocab_size, hidden),
            w_in: Array::zeros(hidden, hidden),
            w_rec: Array::zeros(hidden, hidden),
            b_hidden: Array::zeros(1, hidden),
            w_out: Array::zeros(hidden, vocab_size),
            b_out: Array::zeros(1, vocab_size),
        }
    }

    pub fn arrays(&self) -> [&Array; 6] {
        [
            &self.embedding,
            &self.w_in,
            &self.w_rec,
            &self.b_hidden,
            &self.w_out,
            &self.b_out,
        ]
    }

    pub fn arrays_mut(&mut self) -> [&mut Array; 6] {
        [
            &mut self.embedding,
            &mut self.w_in,
            &mut self.w_rec,
            &mut self.b_hidden,
            &mut self.w_out,
            &mut self.b_out,
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.arrays().iter().all(|a| a.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TrainingMeta {
    pub corpus_hash: [u8; 32],
    pub seed: u64,
    pub epochs: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LanguageModel {
    vocab: Vocabulary,
    direction: Direction,
    hidden: usize,
    params: LmParams,
    pub meta: TrainingMeta,
}

/// Graph handles for the model weights, bound as constants.
#[derive(Debug, Clone, Copy)]
pub struct LmVars {
    pub embedding: Var,
    pub w_in: Var,
    pub w_rec: Var,
    pub b_hidden: Var,
    pub w_out: Var,
    pub b_out: Var,
}

impl LanguageModel {
    pub fn new(vocab: Vocabulary, direction: Direction, params: LmParams, meta: TrainingMeta) -> Result<Self> {
        let v = vocab.len();
        let d = params.w_in.rows();
        let expect = [[v, d], [d, d], [d, d], [1, d], [d, v], [1, v]];
        for (a, e) in params.arrays().iter().zip(expect) {
            if a.shape() != e {
                return Err(Error::Format(format!(
                    "parameter shape {:?} does not match expected {e:?}",
                    a.shape()
                )));
            }
        }
        if !params.is_finite() {
            return Err(Error::Format("non-finite parameters".into()));
        }
        Ok(Self {
            vocab,
            direction,
            hidden: d,
            params,
            meta,
        })
    }

    /// A model whose every next-token distribution is uniform.
    pub fn uniform(vocab: Vocabulary, direction: Direction, hidden: usize) -> Self {
        let params = LmParams::zeros(vocab.len(), hidden);
        Self {
            vocab,
            direction,
            hidden,
            params,
            meta: TrainingMeta::default(),
        }
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn direction(&self) -> Direction {
        self.direction
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn params(&self) -> &LmParams {
        &self.params
    }

    pub fn expect_direction(&self, expected: Direction) -> Result<()> {
        if self.direction != expected {
            return Err(Error::DirectionMismatch {
                expected: expected.name(),
                found: self.direction.name(),
            });
        }
        Ok(())
    }

    /// Puts a corpus sequence (body followed by end-of-sequence) in the
    /// order this model reads it: reverse models see the body reversed.
    pub fn orient(&self, seq: &[TokenId]) -> Vec<TokenId> {
        match self.direction {
            Direction::Forward => seq.to_vec(),
            Direction::Reverse => {
                let eos = self.vocab.eos();
                let (body, tail): (&[TokenId], &[TokenId]) = match seq.split_last() {
                    Some((&last, body)) if last == eos => (body, &seq[seq.len() - 1..]),
                    _ => (seq, &[]),
                };
                body.iter().rev().chain(tail).copied().collect()
            }
        }
    }

    // ---- graph path ----

    pub fn bind(&self, g: &mut Graph) -> LmVars {
        let p = &self.params;
        LmVars {
            embedding: g.constant(p.embedding.clone()),
            w_in: g.constant(p.w_in.clone()),
            w_rec: g.constant(p.w_rec.clone()),
            b_hidden: g.constant(p.b_hidden.clone()),
            w_out: g.constant(p.w_out.clone()),
            b_out: g.constant(p.b_out.clone()),
        }
    }

    /// Embeddings of hard tokens, `len × d`.
    pub fn embed_hard(&self, g: &mut Graph, vars: &LmVars, ids: &[TokenId]) -> Result<Var> {
        self.vocab.check(ids)?;
        Ok(g.gather_rows(vars.embedding, ids)?)
    }

    /// Soft embeddings `softmax(logits / tau) @ E`, one row per soft position.
    pub fn embed_soft(&self, g: &mut Graph, vars: &LmVars, logits: Var, tau: Real) -> Result<Var> {
        let [_, cols] = g.shape(logits);
        if cols != self.vocab_size() {
            return Err(Error::invalid(format!(
                "soft sequence width {cols} does not match vocabulary size {}",
                self.vocab_size()
            )));
        }
        let p = g.softmax_rows(logits, tau)?;
        Ok(g.matmul(p, vars.embedding)?)
    }

    /// Runs the recurrence over `inputs` (`L × d`) from a zero state and
    /// returns next-token logits after every position (`L × V`).
    pub fn forward_logits(&self, g: &mut Graph, vars: &LmVars, inputs: Var) -> Result<Var> {
        let len = g.shape(inputs)[0];
        let proj = g.matmul(inputs, vars.w_in)?;
        let pre = g.add_row(proj, vars.b_hidden)?;
        let hs = self.recur(g, vars, pre, len, 1)?;
        let h = g.concat_rows(&hs)?;
        let out = g.matmul(h, vars.w_out)?;
        Ok(g.add_row(out, vars.b_out)?)
    }

    /// Recurrence over `steps` blocks of `batch` rows each in `pre`.
    pub(crate) fn recur(&self, g: &mut Graph, vars: &LmVars, pre: Var, steps: usize, batch: usize) -> Result<Vec<Var>> {
        let mut hs = Vec::with_capacity(steps);
        let mut prev: Option<Var> = None;
        for t in 0..steps {
            let x = g.slice_rows(pre, t * batch, batch)?;
            let z = match prev {
                Some(h) => {
                    let r = g.matmul(h, vars.w_rec)?;
                    g.add(x, r)?
                }
                None => x,
            };
            let h = g.tanh(z);
            hs.push(h);
            prev = Some(h);
        }
        Ok(hs)
    }

    /// Input rows for `hard_prefix` followed by the soft rows of `soft`.
    pub fn context_inputs(
        &self,
        g: &mut Graph,
        vars: &LmVars,
        hard_prefix: &[TokenId],
        soft: Option<(Var, Real)>,
        hard_suffix: &[TokenId],
    ) -> Result<Var> {
        let mut parts = Vec::with_capacity(3);
        if !hard_prefix.is_empty() {
            parts.push(self.embed_hard(g, vars, hard_prefix)?);
        }
        if let Some((logits, tau)) = soft {
            if g.shape(logits)[0] > 0 {
                parts.push(self.embed_soft(g, vars, logits, tau)?);
            }
        }
        if !hard_suffix.is_empty() {
            parts.push(self.embed_hard(g, vars, hard_suffix)?);
        }
        if parts.is_empty() {
            return Err(Error::invalid(
                "empty context: a begin-of-sequence token must be supplied",
            ));
        }
        Ok(g.concat_rows(&parts)?)
    }

    // ---- plain path ----

    pub fn cursor(&self) -> Cursor<'_> {
        Cursor {
            lm: self,
            hidden: None,
        }
    }

    /// Next-token logits after reading `<bos>` followed by `context`.
    pub fn logits_after(&self, context: &[TokenId]) -> Result<Vec<Real>> {
        self.vocab.check(context)?;
        let mut c = self.cursor();
        c.feed(self.vocab.bos());
        for &t in context {
            c.feed(t);
        }
        Ok(c.logits())
    }

    /// Greedy continuation of `<bos> prompt` for `length` steps. Returns the
    /// chosen tokens and the logits each choice was made from.
    pub fn greedy_decode(&self, prompt: &[TokenId], length: usize) -> Result<(Vec<TokenId>, Array)> {
        if length == 0 {
            return Err(Error::invalid("greedy decode length must be at least 1"));
        }
        self.vocab.check(prompt)?;
        let mut c = self.cursor();
        c.feed(self.vocab.bos());
        for &t in prompt {
            c.feed(t);
        }
        let mut tokens = Vec::with_capacity(length);
        let mut rows = Array::zeros(length, self.vocab_size());
        for t in 0..length {
            let logits = c.logits();
            let next = argmax(&logits);
            rows.row_mut(t).copy_from_slice(&logits);
            tokens.push(next);
            c.feed(next);
        }
        Ok((tokens, rows))
    }

    /// `exp(mean NLL)` of `tokens` read after `<bos> condition`. Returns
    /// infinity when any token has probability below 1e-300.
    pub fn perplexity(&self, tokens: &[TokenId], condition: &[TokenId]) -> Result<f64> {
        if tokens.is_empty() {
            return Err(Error::invalid("perplexity of an empty sequence"));
        }
        self.vocab.check(tokens)?;
        self.vocab.check(condition)?;
        let mut c = self.cursor();
        c.feed(self.vocab.bos());
        for &t in condition {
            c.feed(t);
        }
        let floor = (1e-300f64).ln();
        let mut nll = 0.0f64;
        for &t in tokens {
            let logits = c.logits();
            let logp = (logits[t] - log_sum_exp(&logits, 1.0)) as f64;
            if logp < floor || !logp.is_finite() {
                return Ok(f64::INFINITY);
            }
            nll -= logp;
            c.feed(t);
        }
        Ok((nll / tokens.len() as f64).exp())
    }

    /// Perplexity over whole corpus sequences (each read from `<bos>`, in
    /// this model's direction, end-of-sequence included).
    pub fn corpus_perplexity(&self, sequences: &[Vec<TokenId>]) -> Result<f64> {
        let mut nll = 0.0f64;
        let mut count = 0usize;
        for seq in sequences {
            let seq = self.orient(seq);
            let ppl = self.perplexity(&seq, &[])?;
            if !ppl.is_finite() {
                return Ok(f64::INFINITY);
            }
            nll += ppl.ln() * seq.len() as f64;
            count += seq.len();
        }
        if count == 0 {
            return Err(Error::EmptyCorpus);
        }
        Ok((nll / count as f64).exp())
    }
}

/// Incremental hard-token reader over a [`LanguageModel`].
#[derive(Debug, Clone)]
pub struct Cursor<'a> {
    lm: &'a LanguageModel,
    hidden: Option<Vec<Real>>,
}

impl Cursor<'_> {
    pub fn feed(&mut self, token: TokenId) {
        let row = self.lm.params.embedding.row(token).to_vec();
        self.feed_embedding(&row);
    }

    pub fn feed_embedding(&mut self, x: &[Real]) {
        let p = &self.lm.params;
        let d = self.lm.hidden;
        let mut z = p.b_hidden.data().to_vec();
        for (k, &xk) in x.iter().enumerate() {
            for (zj, &w) in z.iter_mut().zip(p.w_in.row(k)) {
                *zj += xk * w;
            }
        }
        if let Some(h) = &self.hidden {
            for (k, &hk) in h.iter().enumerate() {
                for (zj, &w) in z.iter_mut().zip(p.w_rec.row(k)) {
                    *zj += hk * w;
                }
            }
        }
        debug_assert_eq!(z.len(), d);
        self.hidden = Some(z.into_iter().map(Real::tanh).collect());
    }

    /// Logits for the next token. Before any input this is the bias alone.
    pub fn logits(&self) -> Vec<Real> {
        let p = &self.lm.params;
        let mut out = p.b_out.data().to_vec();
        if let Some(h) = &self.hidden {
            for (k, &hk) in h.iter().enumerate() {
                for (o, &w) in out.iter_mut().zip(p.w_out.row(k)) {
                    *o += hk * w;
                }
            }
        }
        out
    }

    pub fn distribution(&self) -> Vec<Real> {
        softmax(&self.logits(), 1.0)
    }
}

/// Next-token distribution after `hard_prefix` followed by the soft rows of
/// `soft_suffix` (`T × V` logits, weights `softmax(row / tau)`), as a
/// `1 × V` graph node.
pub fn next_token_dist_graph(
    g: &mut Graph,
    lm: &LanguageModel,
    vars: &LmVars,
    hard_prefix: &[TokenId],
    soft_suffix: Option<Var>,
    tau: Real,
) -> Result<Var> {
    let inputs = lm.context_inputs(g, vars, hard_prefix, soft_suffix.map(|v| (v, tau)), &[])?;
    let logits = lm.forward_logits(g, vars, inputs)?;
    let len = g.shape(logits)[0];
    let last = g.slice_rows(logits, len - 1, 1)?;
    Ok(g.softmax_rows(last, 1.0)?)
}

/// Value form of [`next_token_dist_graph`]. `hard_prefix` must include the
/// begin-of-sequence token if one is wanted.
pub fn next_token_dist(
    lm: &LanguageModel,
    hard_prefix: &[TokenId],
    soft_suffix: Option<&Array>,
    tau: Real,
) -> Result<Vec<Real>> {
    let mut g = Graph::new();
    let vars = lm.bind(&mut g);
    let soft = soft_suffix.map(|a| g.constant(a.clone()));
    let p = next_token_dist_graph(&mut g, lm, &vars, hard_prefix, soft, tau)?;
    Ok(g.value(p).data().to_vec())
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::numerics::check_gradient;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn random_model(vocab: Vocabulary, hidden: usize, seed: u64) -> LanguageModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = LmParams::zeros(vocab.len(), hidden);
        for a in params.arrays_mut() {
            for v in a.data_mut() {
                *v = rng.random_range(-0.8..0.8);
            }
        }
        LanguageModel::new(vocab, Direction::Forward, params, TrainingMeta::default()).unwrap()
    }

    fn small_vocab() -> Vocabulary {
        Vocabulary::new(["a", "b", "c", "d", "e", "f"])
    }

    fn one_hot(tokens: &[TokenId], v: usize) -> Array {
        let mut a = Array::zeros(tokens.len(), v);
        for (t, &tok) in tokens.iter().enumerate() {
            a.set(t, tok, 1.0);
        }
        a
    }

    #[test]
    fn graph_and_cursor_agree() {
        let lm = random_model(small_vocab(), 5, 1);
        let ctx = [0, 4, 6, 5];
        let mut c = lm.cursor();
        for &t in &ctx {
            c.feed(t);
        }
        let plain = c.distribution();
        let graph = next_token_dist(&lm, &ctx, None, 1.0).unwrap();
        for (a, b) in plain.iter().zip(&graph) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn one_hot_soft_suffix_matches_hard_prefix() {
        let lm = random_model(small_vocab(), 6, 2);
        let v = lm.vocab_size();
        let hard = next_token_dist(&lm, &[0, 4, 7, 5], None, 1.0).unwrap();
        let soft = next_token_dist(&lm, &[0, 4], Some(&one_hot(&[7, 5], v)), 0.01).unwrap();
        for (a, b) in hard.iter().zip(&soft) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn distribution_is_on_the_simplex() {
        let lm = random_model(small_vocab(), 4, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let soft = Array::new(3, lm.vocab_size(), (0..3 * lm.vocab_size()).map(|_| rng.random_range(-3.0..3.0)).collect()).unwrap();
        let p = next_token_dist(&lm, &[0], Some(&soft), 0.7).unwrap();
        let total: Real = p.iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!(p.iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn empty_context_is_rejected() {
        let lm = random_model(small_vocab(), 4, 3);
        assert!(next_token_dist(&lm, &[], None, 1.0).is_err());
    }

    #[test]
    fn log_probability_gradient_through_soft_inputs() {
        let lm = random_model(small_vocab(), 5, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let v = lm.vocab_size();
        let x = Array::new(3, v, (0..3 * v).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        for coord in [0, 3, 8] {
            let res = check_gradient::<_, Error>(
                |g, y| {
                    let vars = lm.bind(g);
                    let p = next_token_dist_graph(g, &lm, &vars, &[0, 5], Some(y), 0.9)?;
                    let lp = g.log(p)?;
                    Ok(g.pick(lp, &[(0, coord)])?)
                },
                &x,
                1e-5,
            )
            .unwrap();
            assert!(res.max_rel_error <= 1e-4, "{res:?}");
        }
    }

    #[test]
    fn greedy_decode_shapes_and_argmax() {
        let lm = random_model(small_vocab(), 5, 5);
        let (toks, logits) = lm.greedy_decode(&[4], 6).unwrap();
        assert_eq!(toks.len(), 6);
        assert_eq!(logits.shape(), [6, lm.vocab_size()]);
        for (t, &tok) in toks.iter().enumerate() {
            assert_eq!(argmax(logits.row(t)), tok);
        }
        assert_eq!(lm.greedy_decode(&[4], 6).unwrap().0, toks);
        assert!(lm.greedy_decode(&[4], 0).is_err());
        assert!(lm.greedy_decode(&[99], 2).is_err());
    }

    #[test]
    fn uniform_model_perplexity_is_vocab_size() {
        let lm = LanguageModel::uniform(small_vocab(), Direction::Forward, 4);
        let ppl = lm.perplexity(&[4, 5, 6, 7], &[8]).unwrap();
        assert!((ppl - lm.vocab_size() as f64).abs() < 1e-9, "{ppl}");
    }

    #[test]
    fn single_token_perplexity_is_inverse_probability() {
        let lm = random_model(small_vocab(), 5, 6);
        let p = lm.cursor();
        let mut c = p.clone();
        c.feed(0);
        c.feed(4);
        let dist = c.distribution();
        let ppl = lm.perplexity(&[7], &[4]).unwrap();
        assert!((ppl - 1.0 / dist[7] as f64).abs() < 1e-9 * ppl);
    }

    #[test]
    fn vanishing_probability_gives_infinite_perplexity() {
        let vocab = small_vocab();
        let mut params = LmParams::zeros(vocab.len(), 2);
        params.b_out.data_mut()[5] = -800.0;
        let lm = LanguageModel::new(vocab, Direction::Forward, params, TrainingMeta::default()).unwrap();
        assert_eq!(lm.perplexity(&[5], &[]).unwrap(), f64::INFINITY);
    }

    #[test]
    fn orient_reverses_body_only() {
        let v = small_vocab();
        let lm = LanguageModel::uniform(v.clone(), Direction::Reverse, 2);
        assert_eq!(lm.orient(&[4, 5, 6, v.eos()]), vec![6, 5, 4, v.eos()]);
        assert_eq!(lm.orient(&[4, 5]), vec![5, 4]);
    }
}
