//! Evaluation measures: keyword coverage, LM perplexity, clipped n-gram
//! precision and edit-script similarity.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lm::{Direction, LanguageModel};
use crate::parallel;
use crate::tasks::{TaskInstance, TaskKind};
use crate::vocab::TokenId;

/// Highest n-gram order reported by [`evaluate`].
pub const MAX_BLEU_ORDER: usize = 4;

/// Number and percentage of keywords that occur verbatim in `y`.
pub fn coverage(y: &[TokenId], keywords: &BTreeSet<TokenId>) -> Result<(usize, f64)> {
    if keywords.is_empty() {
        return Err(Error::invalid("coverage needs at least one keyword"));
    }
    let present: BTreeSet<TokenId> = y.iter().copied().collect();
    let count = keywords.iter().filter(|k| present.contains(k)).count();
    Ok((count, 100.0 * count as f64 / keywords.len() as f64))
}

fn ngram_counts(seq: &[TokenId], n: usize) -> BTreeMap<&[TokenId], usize> {
    let mut m = BTreeMap::new();
    for g in seq.windows(n) {
        *m.entry(g).or_insert(0) += 1;
    }
    m
}

/// Clipped n-gram precision of `y` against `reference` (no brevity penalty).
pub fn bleu_n(y: &[TokenId], reference: &[TokenId], n: usize) -> Result<f64> {
    if n == 0 || n > y.len() || n > reference.len() {
        return Err(Error::invalid(format!(
            "n-gram order {n} out of range for lengths {} and {}",
            y.len(),
            reference.len()
        )));
    }
    let refs = ngram_counts(reference, n);
    let matched: usize = ngram_counts(y, n)
        .into_iter()
        .map(|(g, c)| c.min(refs.get(g).copied().unwrap_or(0)))
        .sum();
    Ok(matched as f64 / (y.len() - n + 1) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EditOp {
    Substitute,
    Delete,
    Insert,
}

/// One edit of a source sequence. `pos` indexes the source; insertions go
/// before `pos`. `token` is the new token for substitutions and insertions
/// and the removed one for deletions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Edit {
    pub pos: usize,
    pub op: EditOp,
    pub token: TokenId,
}

fn suffix_distances(src: &[TokenId], dst: &[TokenId]) -> Vec<Vec<usize>> {
    let (n, m) = (src.len(), dst.len());
    let mut d = vec![vec![0usize; m + 1]; n + 1];
    for i in (0..=n).rev() {
        for j in (0..=m).rev() {
            d[i][j] = if i == n {
                m - j
            } else if j == m {
                n - i
            } else {
                let diag = d[i + 1][j + 1] + usize::from(src[i] != dst[j]);
                diag.min(d[i + 1][j] + 1).min(d[i][j + 1] + 1)
            };
        }
    }
    d
}

/// Minimal unit-cost edit script turning `src` into `dst`. Among minimal
/// alignments, walking left to right, a match is preferred, then a
/// substitution, then a deletion, then an insertion.
pub fn edit_script(src: &[TokenId], dst: &[TokenId]) -> Vec<Edit> {
    let d = suffix_distances(src, dst);
    let (n, m) = (src.len(), dst.len());
    let (mut i, mut j) = (0, 0);
    let mut out = Vec::with_capacity(d[0][0]);
    while i < n || j < m {
        if i < n && j < m && src[i] == dst[j] && d[i][j] == d[i + 1][j + 1] {
            i += 1;
            j += 1;
        } else if i < n && j < m && d[i][j] == d[i + 1][j + 1] + 1 {
            out.push(Edit { pos: i, op: EditOp::Substitute, token: dst[j] });
            i += 1;
            j += 1;
        } else if i < n && d[i][j] == d[i + 1][j] + 1 {
            out.push(Edit { pos: i, op: EditOp::Delete, token: src[i] });
            i += 1;
        } else {
            out.push(Edit { pos: i, op: EditOp::Insert, token: dst[j] });
            j += 1;
        }
    }
    out
}

/// Multiset intersection over union of two edit scripts; 1 when both are
/// empty.
pub fn script_similarity(a: &[Edit], b: &[Edit]) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    let mut counts: BTreeMap<Edit, (usize, usize)> = BTreeMap::new();
    for e in a {
        counts.entry(*e).or_default().0 += 1;
    }
    for e in b {
        counts.entry(*e).or_default().1 += 1;
    }
    let (inter, union) = counts
        .values()
        .fold((0, 0), |(i, u), &(x, y)| (i + x.min(y), u + x.max(y)));
    inter as f64 / union as f64
}

/// Overlap between the edits that take `x_r` to `y` and those that take it
/// to `y_star`.
pub fn edit_similarity(x_r: &[TokenId], y: &[TokenId], y_star: &[TokenId]) -> f64 {
    script_similarity(&edit_script(x_r, y_star), &edit_script(x_r, y))
}

/// Metrics of one output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub index: usize,
    pub kind: TaskKind,
    pub output: String,
    pub length: usize,
    #[serde(default)]
    pub coverage_count: Option<usize>,
    #[serde(default)]
    pub keyword_count: Option<usize>,
    #[serde(default)]
    pub coverage_percent: Option<f64>,
    /// Forward-LM perplexity of the output after the task's left context;
    /// absent when infinite.
    #[serde(default)]
    pub perplexity: Option<f64>,
    /// Keyed `bleu1` .. `bleu4`; orders longer than either sequence are
    /// omitted.
    #[serde(default)]
    pub bleu: BTreeMap<String, f64>,
    #[serde(default)]
    pub edit_similarity: Option<f64>,
    /// Metrics that could not be computed for this instance, with reasons.
    #[serde(default)]
    pub notes: Vec<String>,
}

/// Arithmetic means over the records where each metric is present.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Aggregate {
    pub coverage_count: Option<f64>,
    pub coverage_percent: Option<f64>,
    pub perplexity: Option<f64>,
    /// Records whose perplexity was infinite.
    pub infinite_perplexity: usize,
    pub bleu: BTreeMap<String, f64>,
    pub edit_similarity: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub label: String,
    pub kind: TaskKind,
    pub instances: usize,
    pub records: Vec<InstanceRecord>,
    pub means: Aggregate,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

fn score_instance(index: usize, inst: &TaskInstance, y: &[TokenId], lm: &LanguageModel) -> Result<InstanceRecord> {
    let vocab = lm.vocab();
    vocab.check(y)?;
    let mut rec = InstanceRecord {
        index,
        kind: inst.kind,
        output: vocab.decode(y),
        length: y.len(),
        coverage_count: None,
        keyword_count: None,
        coverage_percent: None,
        perplexity: None,
        bleu: BTreeMap::new(),
        edit_similarity: None,
        notes: Vec::new(),
    };
    if y.is_empty() {
        rec.notes.push("empty output".into());
    } else {
        let ppl = lm.perplexity(y, inst.left_context())?;
        if ppl.is_finite() {
            rec.perplexity = Some(ppl);
        } else {
            rec.notes.push("perplexity is infinite".into());
        }
    }
    if inst.kind == TaskKind::Lexical {
        let (count, percent) = coverage(y, &inst.keywords)?;
        rec.coverage_count = Some(count);
        rec.keyword_count = Some(inst.keywords.len());
        rec.coverage_percent = Some(percent);
    }
    match &inst.reference {
        Some(r) => {
            for n in 1..=MAX_BLEU_ORDER.min(y.len()).min(r.len()) {
                rec.bleu.insert(format!("bleu{n}"), bleu_n(y, r, n)?);
            }
            if inst.kind == TaskKind::Counterfactual {
                rec.edit_similarity = Some(edit_similarity(&inst.x_r, y, r));
            }
        }
        None => rec.notes.push("no reference: n-gram and edit metrics skipped".into()),
    }
    Ok(rec)
}

/// Scores `outputs[i]` as the answer to `instances[i]` with the forward LM.
pub fn evaluate(
    label: &str,
    instances: &[TaskInstance],
    outputs: &[Vec<TokenId>],
    lm: &LanguageModel,
) -> Result<EvalReport> {
    lm.expect_direction(Direction::Forward)?;
    let Some(first) = instances.first() else {
        return Err(Error::Data("no instances to evaluate".into()));
    };
    if instances.len() != outputs.len() {
        return Err(Error::Data(format!(
            "{} instances but {} outputs",
            instances.len(),
            outputs.len()
        )));
    }
    if let Some(other) = instances.iter().find(|i| i.kind != first.kind) {
        return Err(Error::KindMismatch {
            expected: first.kind.name(),
            found: other.kind.name(),
        });
    }
    let records = parallel::try_map(instances.len(), |i| score_instance(i, &instances[i], &outputs[i], lm))?;

    let mut bleu = BTreeMap::new();
    for n in 1..=MAX_BLEU_ORDER {
        let key = format!("bleu{n}");
        if let Some(m) = mean(records.iter().filter_map(|r| r.bleu.get(&key).copied())) {
            bleu.insert(key, m);
        }
    }
    let means = Aggregate {
        coverage_count: mean(records.iter().filter_map(|r| r.coverage_count.map(|c| c as f64))),
        coverage_percent: mean(records.iter().filter_map(|r| r.coverage_percent)),
        perplexity: mean(records.iter().filter_map(|r| r.perplexity)),
        infinite_perplexity: records.iter().filter(|r| !r.output.is_empty() && r.perplexity.is_none()).count(),
        bleu,
        edit_similarity: mean(records.iter().filter_map(|r| r.edit_similarity)),
    };
    Ok(EvalReport {
        label: label.to_string(),
        kind: first.kind,
        instances: records.len(),
        records,
        means,
    })
}

fn cell(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.digits$}"))
}

/// Plain-text table with one row per report.
pub fn render_table(reports: &[EvalReport]) -> String {
    let header = ["Config", "Count", "Percent", "PPL", "BLEU-4", "EditSim"];
    let rows: Vec<[String; 6]> = reports
        .iter()
        .map(|r| {
            [
                r.label.clone(),
                cell(r.means.coverage_count, 2),
                cell(r.means.coverage_percent, 2),
                cell(r.means.perplexity, 2),
                cell(r.means.bleu.get("bleu4").map(|b| b * 100.0), 2),
                cell(r.means.edit_similarity, 4),
            ]
        })
        .collect();
    let mut widths = header.map(str::len);
    for row in &rows {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.len());
        }
    }
    let mut out = String::new();
    let line = |out: &mut String, cells: &[&str]| {
        for (i, (c, w)) in cells.iter().zip(&widths).enumerate() {
            if i == 0 {
                let _ = write!(out, "{c:<w$}");
            } else {
                let _ = write!(out, "  {c:>w$}");
            }
        }
        out.push('\n');
    };
    line(&mut out, &header);
    let rule: Vec<String> = widths.iter().map(|&w| "-".repeat(w)).collect();
    line(&mut out, &rule.iter().map(String::as_str).collect::<Vec<_>>());
    for row in &rows {
        line(&mut out, &row.iter().map(String::as_str).collect::<Vec<_>>());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraints::{ConstraintFn, ConstraintOptions, SoftSequence};
    use crate::lm::tests::random_model;
    use crate::vocab::Vocabulary;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn set(ids: &[TokenId]) -> BTreeSet<TokenId> {
        ids.iter().copied().collect()
    }

    #[test]
    fn coverage_examples() {
        assert_eq!(coverage(&[1, 2, 3], &set(&[1, 2, 3])).unwrap(), (3, 100.0));
        assert_eq!(coverage(&[4, 5], &set(&[1, 2])).unwrap(), (0, 0.0));
        assert_eq!(coverage(&[1, 1, 9], &set(&[1, 2, 3, 4])).unwrap(), (1, 25.0));
        assert!(coverage(&[1], &BTreeSet::new()).is_err());
    }

    #[test]
    fn bleu_examples() {
        assert_eq!(bleu_n(&[1, 2, 3], &[1, 2, 3], 2).unwrap(), 1.0);
        assert_eq!(bleu_n(&[1, 2], &[3, 4], 1).unwrap(), 0.0);
        // Clipping: "the the the" against "the cat" matches once.
        assert!((bleu_n(&[7, 7, 7], &[7, 8], 1).unwrap() - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(bleu_n(&[1, 2, 1, 2], &[1, 2, 3], 2).unwrap(), 1.0 / 3.0);
        assert!(bleu_n(&[1], &[1, 2], 2).is_err());
        assert!(bleu_n(&[1], &[1], 0).is_err());
    }

    #[test]
    fn bleu_matches_soft_similarity_on_one_hot_inputs() {
        let vocab = Vocabulary::new(["a", "b", "c", "d", "e"]);
        let v = vocab.len();
        let opts = ConstraintOptions { tau: 0.001, ..ConstraintOptions::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..40 {
            let y: Vec<TokenId> = (0..rng.random_range(3..7)).map(|_| rng.random_range(0..v)).collect();
            let r: Vec<TokenId> = (0..rng.random_range(3..7)).map(|_| rng.random_range(0..v)).collect();
            let soft = SoftSequence::one_hot(&y, v).unwrap();
            for n in 1..=3 {
                let f = ConstraintFn::ngram_similarity(&vocab, &r, &[n]).unwrap();
                let got = f.value(&soft, &opts).unwrap();
                assert!((got - bleu_n(&y, &r, n).unwrap()).abs() < 1e-6);
            }
        }
    }

    /// Every minimal alignment of `src` to `dst`, as (op sequence, script).
    /// Ops are ranked match < substitute < delete < insert.
    fn all_minimal(src: &[TokenId], dst: &[TokenId]) -> Vec<(Vec<u8>, Vec<Edit>)> {
        fn go(
            src: &[TokenId],
            dst: &[TokenId],
            i: usize,
            j: usize,
            ops: &mut Vec<u8>,
            script: &mut Vec<Edit>,
            out: &mut Vec<(Vec<u8>, Vec<Edit>)>,
        ) {
            if i == src.len() && j == dst.len() {
                out.push((ops.clone(), script.clone()));
                return;
            }
            if i < src.len() && j < dst.len() {
                if src[i] == dst[j] {
                    ops.push(0);
                    go(src, dst, i + 1, j + 1, ops, script, out);
                    ops.pop();
                } else {
                    ops.push(1);
                    script.push(Edit { pos: i, op: EditOp::Substitute, token: dst[j] });
                    go(src, dst, i + 1, j + 1, ops, script, out);
                    script.pop();
                    ops.pop();
                }
            }
            if i < src.len() {
                ops.push(2);
                script.push(Edit { pos: i, op: EditOp::Delete, token: src[i] });
                go(src, dst, i + 1, j, ops, script, out);
                script.pop();
                ops.pop();
            }
            if j < dst.len() {
                ops.push(3);
                script.push(Edit { pos: i, op: EditOp::Insert, token: dst[j] });
                go(src, dst, i, j + 1, ops, script, out);
                script.pop();
                ops.pop();
            }
        }
        let mut all = Vec::new();
        go(src, dst, 0, 0, &mut vec![], &mut vec![], &mut all);
        let best = all.iter().map(|(_, s)| s.len()).min().unwrap();
        all.retain(|(_, s)| s.len() == best);
        all
    }

    #[test]
    fn edit_script_is_the_preferred_minimal_alignment() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..300 {
            let a: Vec<TokenId> = (0..rng.random_range(0..=6)).map(|_| rng.random_range(0..3)).collect();
            let b: Vec<TokenId> = (0..rng.random_range(0..=6)).map(|_| rng.random_range(0..3)).collect();
            let mut minimal = all_minimal(&a, &b);
            minimal.sort();
            let got = edit_script(&a, &b);
            assert_eq!(got.len(), minimal[0].1.len(), "{a:?} -> {b:?}");
            assert_eq!(got, minimal[0].1, "{a:?} -> {b:?}");
        }
    }

    #[test]
    fn edit_script_hand_examples() {
        // 1 2 3 -> 1 4 3: one substitution at 1.
        assert_eq!(edit_script(&[1, 2, 3], &[1, 4, 3]), vec![Edit { pos: 1, op: EditOp::Substitute, token: 4 }]);
        // 1 2 -> 2: delete the first token.
        assert_eq!(edit_script(&[1, 2], &[2]), vec![Edit { pos: 0, op: EditOp::Delete, token: 1 }]);
        // 1 -> 1 1: the match comes first, so the insertion goes at the end.
        assert_eq!(edit_script(&[1], &[1, 1]), vec![Edit { pos: 1, op: EditOp::Insert, token: 1 }]);
        assert!(edit_script(&[3, 4], &[3, 4]).is_empty());
    }

    #[test]
    fn edit_similarity_examples() {
        let x = [1, 2, 3, 4];
        assert_eq!(edit_similarity(&x, &[1, 5, 3, 4], &[1, 5, 3, 4]), 1.0);
        assert_eq!(edit_similarity(&x, &x, &[1, 5, 3, 4]), 0.0);
        assert_eq!(edit_similarity(&x, &x, &x), 1.0);
        // Scripts {sub 1→5, sub 3→6} and {sub 1→5}: 1 shared of 2.
        assert_eq!(edit_similarity(&x, &[1, 5, 3, 4], &[1, 5, 3, 6]), 0.5);
    }

    fn tiny_vocab() -> Vocabulary {
        Vocabulary::new(["a", "b", "c", "d"])
    }

    #[test]
    fn evaluate_rejects_bad_input() {
        let v = tiny_vocab();
        let lm = random_model(v.clone(), 3, 0);
        assert!(evaluate("x", &[], &[], &lm).is_err());
        let inst = TaskInstance::lexical(set(&[4]));
        assert!(evaluate("x", &[inst.clone()], &[], &lm).is_err());
        let other = TaskInstance::abductive(vec![4], vec![5]);
        assert!(matches!(
            evaluate("x", &[inst, other], &[vec![4], vec![5]], &lm),
            Err(Error::KindMismatch { .. })
        ));
    }

    #[test]
    fn single_instance_aggregate_equals_record() {
        let v = tiny_vocab();
        let lm = random_model(v.clone(), 3, 1);
        let inst = TaskInstance::lexical(set(&[4, 5, 6])).with_reference(vec![4, 5, 6, 2]);
        let r = evaluate("one", &[inst], &[vec![4, 6, 7, 2]], &lm).unwrap();
        let rec = &r.records[0];
        assert_eq!(r.means.coverage_count, Some(2.0));
        assert_eq!(r.means.coverage_percent, rec.coverage_percent);
        assert_eq!(r.means.perplexity, rec.perplexity);
        assert_eq!(r.means.bleu, rec.bleu);
        assert_eq!(rec.bleu.len(), 4);
        assert!((rec.coverage_percent.unwrap() - 200.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn two_instance_coverage_fixture() {
        let v = tiny_vocab();
        let lm = random_model(v.clone(), 3, 2);
        let insts = [TaskInstance::lexical(set(&[4, 5, 6])), TaskInstance::lexical(set(&[4, 7]))];
        let outs = [vec![4, 5, 6, 2], vec![5, 6, 2]];
        let r = evaluate("fix", &insts, &outs, &lm).unwrap();
        // (3 + 0) / 2 words and (100 + 0) / 2 percent.
        assert_eq!(r.means.coverage_count, Some(1.5));
        assert_eq!(r.means.coverage_percent, Some(50.0));
        assert_eq!(r, evaluate("fix", &insts, &outs, &lm).unwrap());
        let json = serde_json::to_string(&r).unwrap();
        assert_eq!(serde_json::from_str::<EvalReport>(&json).unwrap(), r);
    }

    #[test]
    fn counterfactual_records_edit_similarity() {
        let v = tiny_vocab();
        let lm = random_model(v.clone(), 3, 3);
        let inst = TaskInstance::counterfactual(vec![4], vec![5, 6, 7, 2], vec![6]).with_reference(vec![5, 4, 7, 2]);
        let r = evaluate("cf", &[inst.clone()], &[vec![5, 4, 7, 2]], &lm).unwrap();
        assert_eq!(r.records[0].edit_similarity, Some(1.0));
        assert_eq!(r.records[0].coverage_count, None);
        let bare = TaskInstance { reference: None, ..inst };
        let r = evaluate("cf", &[bare], &[vec![5, 2]], &lm).unwrap();
        assert_eq!(r.records[0].edit_similarity, None);
        assert_eq!(r.records[0].notes.len(), 1);
    }

    #[test]
    fn table_has_a_row_per_report() {
        let v = tiny_vocab();
        let lm = random_model(v.clone(), 3, 4);
        let inst = [TaskInstance::lexical(set(&[4]))];
        let a = evaluate("COLD (full)", &inst, &[vec![4]], &lm).unwrap();
        let b = evaluate("COLD - f_sim", &inst, &[vec![5]], &lm).unwrap();
        let t = render_table(&[a, b]);
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines.len(), 4);
        assert!(lines[0].starts_with("Config") && lines[0].contains("Count") && lines[0].contains("PPL"));
        assert!(lines[2].starts_with("COLD (full)") && lines[2].contains("100.00"));
        assert!(lines[3].starts_with("COLD - f_sim") && lines[3].contains("0.00"));
    }

    fn seq(max: usize) -> impl Strategy<Value = Vec<TokenId>> {
        prop::collection::vec(0usize..4, 0..=max)
    }

    proptest! {
        #[test]
        fn coverage_ignores_order(mut y in seq(8), w in prop::collection::btree_set(0usize..4, 1..4), seed in any::<u64>()) {
            let before = coverage(&y, &w).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for i in (1..y.len()).rev() {
                y.swap(i, rng.random_range(0..=i));
            }
            prop_assert_eq!(coverage(&y, &w).unwrap(), before);
            prop_assert!(before.0 <= w.len() && (0.0..=100.0).contains(&before.1));
        }

        #[test]
        fn bleu_of_self_is_one(y in prop::collection::vec(0usize..4, 1..8), n in 1usize..4) {
            prop_assume!(n <= y.len());
            prop_assert_eq!(bleu_n(&y, &y, n).unwrap(), 1.0);
        }

        #[test]
        fn bleu_in_unit_interval(y in prop::collection::vec(0usize..4, 3..8), r in prop::collection::vec(0usize..4, 3..8), n in 1usize..4) {
            let b = bleu_n(&y, &r, n).unwrap();
            prop_assert!((0.0..=1.0).contains(&b));
        }

        #[test]
        fn edit_similarity_is_symmetric(x in seq(6), y in seq(6), z in seq(6)) {
            let s = edit_similarity(&x, &y, &z);
            prop_assert_eq!(s, edit_similarity(&x, &z, &y));
            prop_assert!((0.0..=1.0).contains(&s));
            let sorted = |mut e: Vec<Edit>| { e.sort(); e };
            let same = sorted(edit_script(&x, &y)) == sorted(edit_script(&x, &z));
            prop_assert_eq!(s == 1.0, same);
        }

        #[test]
        fn edit_script_length_is_levenshtein(x in seq(7), y in seq(7)) {
            prop_assert_eq!(edit_script(&x, &y).len(), suffix_distances(&x, &y)[0][0]);
        }
    }
}
