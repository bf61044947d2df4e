use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::{Direction, LanguageModel, LmParams, LmVars, TrainingMeta};
use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::numerics::{Array, Graph, Real};
use crate::vocab::{TokenId, Vocabulary};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub learning_rate: Real,
    pub seed: u64,
    pub batch_size: usize,
    /// Sequences longer than this are truncated for training.
    pub context_window: usize,
    pub clip_norm: Real,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            epochs: 8,
            learning_rate: 0.01,
            seed: 0,
            batch_size: 16,
            context_window: 64,
            clip_norm: 5.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Mean per-token training loss (nats) for each epoch.
    pub epoch_losses: Vec<f64>,
}

fn corpus_hash(corpus: &Corpus) -> [u8; 32] {
    let mut h = Sha256::new();
    for seq in &corpus.sequences {
        for &t in seq {
            h.update((t as u32).to_le_bytes());
        }
        h.update(u32::MAX.to_le_bytes());
    }
    h.finalize().into()
}

fn init_params(vocab_size: usize, hidden: usize, rng: &mut ChaCha8Rng) -> LmParams {
    let mut p = LmParams::zeros(vocab_size, hidden);
    let s = 1.0 / (hidden as Real).sqrt();
    let mut fill = |a: &mut Array, scale: Real| {
        for v in a.data_mut() {
            *v = rng.random_range(-scale..scale);
        }
    };
    fill(&mut p.embedding, 0.5);
    fill(&mut p.w_in, s);
    fill(&mut p.w_rec, 0.5 * s);
    fill(&mut p.w_out, 0.1 * s);
    p
}

struct Adam {
    m: Vec<Array>,
    v: Vec<Array>,
    step: i32,
}

impl Adam {
    const B1: Real = 0.9;
    const B2: Real = 0.999;
    const EPS: Real = 1e-8;

    fn new(params: &LmParams) -> Self {
        let zeros = || params.arrays().iter().map(|a| Array::zeros(a.rows(), a.cols())).collect();
        Self {
            m: zeros(),
            v: zeros(),
            step: 0,
        }
    }

    fn update(&mut self, params: &mut LmParams, grads: &[Array], lr: Real) {
        self.step += 1;
        let c1 = 1.0 - Self::B1.powi(self.step);
        let c2 = 1.0 - Self::B2.powi(self.step);
        for (k, p) in params.arrays_mut().into_iter().enumerate() {
            let g = &grads[k];
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for i in 0..p.len() {
                let gi = g.data()[i];
                let mi = Self::B1 * m.data()[i] + (1.0 - Self::B1) * gi;
                let vi = Self::B2 * v.data()[i] + (1.0 - Self::B2) * gi * gi;
                m.data_mut()[i] = mi;
                v.data_mut()[i] = vi;
                p.data_mut()[i] -= lr * (mi / c1) / ((vi / c2).sqrt() + Self::EPS);
            }
        }
    }
}

/// Builds the summed next-token NLL of one padded batch. Returns the loss
/// node, the parameter leaves, and the number of target tokens.
fn batch_loss(
    g: &mut Graph,
    lm: &LanguageModel,
    batch: &[Vec<TokenId>],
) -> Result<(crate::numerics::Var, LmVars, usize)> {
    let p = lm.params();
    let vars = LmVars {
        embedding: g.leaf(p.embedding.clone()),
        w_in: g.leaf(p.w_in.clone()),
        w_rec: g.leaf(p.w_rec.clone()),
        b_hidden: g.leaf(p.b_hidden.clone()),
        w_out: g.leaf(p.w_out.clone()),
        b_out: g.leaf(p.b_out.clone()),
    };
    let b = batch.len();
    let steps = batch.iter().map(Vec::len).max().unwrap_or(0);
    let v = lm.vocab_size();
    let bos = lm.vocab().bos();

    // Time-major input ids; padded slots read <bos> and carry no loss.
    let mut ids = Vec::with_capacity(steps * b);
    let mut mask = Array::zeros(steps * b, v);
    let mut count = 0;
    for t in 0..steps {
        for (i, seq) in batch.iter().enumerate() {
            ids.push(if t == 0 { bos } else { seq.get(t - 1).copied().unwrap_or(bos) });
            if let Some(&target) = seq.get(t) {
                mask.set(t * b + i, target, 1.0);
                count += 1;
            }
        }
    }
    let x = g.gather_rows(vars.embedding, &ids)?;
    let proj = g.matmul(x, vars.w_in)?;
    let pre = g.add_row(proj, vars.b_hidden)?;
    let hs = lm.recur(g, &vars, pre, steps, b)?;
    let h = g.concat_rows(&hs)?;
    let out = g.matmul(h, vars.w_out)?;
    let logits = g.add_row(out, vars.b_out)?;
    let logp = g.log_softmax_rows(logits, 1.0)?;
    let mask = g.constant(mask);
    let picked = g.mul(logp, mask)?;
    let total = g.sum(picked);
    let loss = g.scale(total, -1.0);
    Ok((loss, vars, count))
}

/// Trains a model on `corpus` read in `direction`. Deterministic in
/// `(corpus, direction, config)`.
pub fn train(
    corpus: &Corpus,
    vocab: &Vocabulary,
    direction: Direction,
    config: &TrainConfig,
) -> Result<(LanguageModel, TrainReport)> {
    if corpus.is_empty() || corpus.token_count() == 0 {
        return Err(Error::EmptyCorpus);
    }
    if config.hidden == 0 || config.batch_size == 0 || config.context_window == 0 {
        return Err(Error::invalid("hidden size, batch size and context window must be positive"));
    }
    for seq in &corpus.sequences {
        vocab.check(seq)?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let params = init_params(vocab.len(), config.hidden, &mut rng);
    let meta = TrainingMeta {
        corpus_hash: corpus_hash(corpus),
        seed: config.seed,
        epochs: config.epochs as u32,
    };
    let mut lm = LanguageModel::new(vocab.clone(), direction, params, meta)?;

    let sequences: Vec<Vec<TokenId>> = corpus
        .sequences
        .iter()
        .filter(|s| !s.is_empty())
        .map(|s| {
            let mut o = lm.orient(s);
            o.truncate(config.context_window);
            o
        })
        .collect();

    let mut adam = Adam::new(lm.params());
    let mut order: Vec<usize> = (0..sequences.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0f64;
        let mut tokens = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<Vec<TokenId>> = chunk.iter().map(|&i| sequences[i].clone()).collect();
            let mut g = Graph::new();
            let (loss, vars, count) = batch_loss(&mut g, &lm, &batch)?;
            let loss_value = g.value(loss).item();
            if !loss_value.is_finite() {
                return Err(Error::NonFiniteLoss { epoch });
            }
            total += loss_value as f64;
            tokens += count;
            let scaled = g.scale(loss, 1.0 / count as Real);
            g.backward(scaled)?;
            let leaves = [vars.embedding, vars.w_in, vars.w_rec, vars.b_hidden, vars.w_out, vars.b_out];
            let mut grads: Vec<Array> = leaves
                .iter()
                .zip(lm.params().arrays())
                .map(|(&v, p)| g.grad(v).cloned().unwrap_or_else(|| Array::zeros(p.rows(), p.cols())))
                .collect();
            let norm: Real = grads
                .iter()
                .flat_map(|a| a.data().iter())
                .map(|x| x * x)
                .sum::<Real>()
                .sqrt();
            if !norm.is_finite() {
                return Err(Error::NonFiniteLoss { epoch });
            }
            if norm > config.clip_norm {
                let s = config.clip_norm / norm;
                for a in &mut grads {
                    a.data_mut().iter_mut().for_each(|x| *x *= s);
                }
            }
            adam.update(&mut lm.params, &grads, config.learning_rate);
        }
        epoch_losses.push(total / tokens.max(1) as f64);
    }
    if !lm.params.is_finite() {
        return Err(Error::NonFiniteLoss {
            epoch: config.epochs.saturating_sub(1),
        });
    }
    Ok((lm, TrainReport { epoch_losses }))
}
