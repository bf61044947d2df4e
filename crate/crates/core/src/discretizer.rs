//! Turning soft samples into discrete text: top-k filtering guided by the
//! LM, then greedy continuation to a sentence end.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::constraints::SoftSequence;
use crate::error::{Error, Result};
use crate::lm::{Direction, LanguageModel};
use crate::numerics::{argmax, Real};
use crate::vocab::TokenId;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscretizeConfig {
    pub k: usize,
    /// Tokens admitted at every position in addition to the LM's top-k.
    pub extra_tokens: BTreeSet<TokenId>,
    pub max_continuation: usize,
    pub sentence_end: TokenId,
}

impl DiscretizeConfig {
    pub fn new(k: usize, sentence_end: TokenId) -> Self {
        Self {
            k,
            extra_tokens: BTreeSet::new(),
            max_continuation: 0,
            sentence_end,
        }
    }

    fn validate(&self, lm: &LanguageModel) -> Result<()> {
        if self.k == 0 {
            return Err(Error::invalid("top-k must be at least 1"));
        }
        let v = lm.vocab_size();
        if let Some(&bad) = self.extra_tokens.iter().find(|&&t| t >= v) {
            return Err(Error::InvalidToken { id: bad, vocab_size: v });
        }
        if self.sentence_end >= v {
            return Err(Error::InvalidToken {
                id: self.sentence_end,
                vocab_size: v,
            });
        }
        Ok(())
    }
}

/// The `k` highest-scoring ids, ties broken toward the lowest id.
pub fn top_k(scores: &[Real], k: usize) -> Vec<TokenId> {
    let mut ids: Vec<TokenId> = (0..scores.len()).collect();
    ids.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    ids.truncate(k);
    ids
}

/// Picks one token per row of `soft`: the highest soft logit among the LM's
/// top-k next tokens (given `<bos> left_context` and the tokens already
/// chosen) together with `cfg.extra_tokens`.
pub fn topk_filter(
    soft: &SoftSequence,
    lm: &LanguageModel,
    cfg: &DiscretizeConfig,
    left_context: &[TokenId],
) -> Result<Vec<TokenId>> {
    lm.expect_direction(Direction::Forward)?;
    cfg.validate(lm)?;
    lm.vocab().check(left_context)?;
    if soft.vocab_size() != lm.vocab_size() {
        return Err(Error::VocabularyMismatch);
    }
    let mut cursor = lm.cursor();
    cursor.feed(lm.vocab().bos());
    for &t in left_context {
        cursor.feed(t);
    }
    let mut out = Vec::with_capacity(soft.len());
    for t in 0..soft.len() {
        let mut candidates: BTreeSet<TokenId> = top_k(&cursor.logits(), cfg.k).into_iter().collect();
        candidates.extend(cfg.extra_tokens.iter().copied());
        let row = soft.logits().row(t);
        // BTreeSet iterates in id order, so `>` keeps the lowest id on ties.
        let mut best = *candidates.iter().next().expect("k >= 1");
        for &c in &candidates {
            if row[c] > row[best] {
                best = c;
            }
        }
        out.push(best);
        cursor.feed(best);
    }
    Ok(out)
}

/// Greedily extends `y` (read after `<bos> left_context`) until the sentence
/// end is produced or `cfg.max_continuation` tokens were added. An emitted
/// end-of-sequence token stops the extension without being appended.
pub fn continue_sequence(
    lm: &LanguageModel,
    y: &[TokenId],
    cfg: &DiscretizeConfig,
    left_context: &[TokenId],
) -> Result<Vec<TokenId>> {
    lm.vocab().check(y)?;
    lm.vocab().check(left_context)?;
    let mut out = y.to_vec();
    if cfg.max_continuation == 0 || y.last() == Some(&cfg.sentence_end) {
        return Ok(out);
    }
    let mut cursor = lm.cursor();
    cursor.feed(lm.vocab().bos());
    for &t in left_context.iter().chain(y) {
        cursor.feed(t);
    }
    let eos = lm.vocab().eos();
    for _ in 0..cfg.max_continuation {
        let next = argmax(&cursor.logits());
        if next == eos {
            break;
        }
        out.push(next);
        if next == cfg.sentence_end {
            break;
        }
        cursor.feed(next);
    }
    Ok(out)
}
