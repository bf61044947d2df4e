//! Energy composition and Langevin sampling over soft sequences.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::constraints::{ConstraintFn, ConstraintOptions, FluencyForm, SoftSequence};
use crate::error::{Error, Result};
use crate::lm::LanguageModel;
use crate::numerics::{Array, Graph, Real};
use crate::parallel;
use crate::vocab::TokenId;

/// Per-entry gradient bound applied when clipping is enabled.
pub const GRAD_CLIP: Real = 10.0;

/// Energy value at one point, optionally with its gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyEval {
    pub total: Real,
    /// Weighted constraint values `λᵢ·fᵢ`; `total = -Σ per_term`.
    pub per_term: Vec<Real>,
    pub grad: Option<Array>,
}

/// Anything the sampler can descend.
pub trait Energy: Sync {
    fn term_labels(&self) -> Vec<String>;

    fn evaluate(&self, y: &SoftSequence, with_grad: bool) -> Result<EnergyEval>;

    fn value(&self, y: &SoftSequence) -> Result<Real> {
        Ok(self.evaluate(y, false)?.total)
    }
}

#[derive(Debug, Clone)]
pub struct EnergyTerm<'a> {
    pub label: String,
    pub constraint: ConstraintFn<'a>,
    pub weight: Real,
}

impl<'a> EnergyTerm<'a> {
    pub fn new(label: impl Into<String>, constraint: ConstraintFn<'a>, weight: Real) -> Self {
        Self {
            label: label.into(),
            constraint,
            weight,
        }
    }
}

/// `E(ỹ) = -Σᵢ λᵢ fᵢ(ỹ)` over an ordered list of weighted constraints.
#[derive(Debug, Clone)]
pub struct EnergySpec<'a> {
    terms: Vec<EnergyTerm<'a>>,
    options: ConstraintOptions,
}

impl<'a> EnergySpec<'a> {
    pub fn new(terms: Vec<EnergyTerm<'a>>, options: ConstraintOptions) -> Result<Self> {
        options.validate()?;
        if terms.is_empty() {
            return Err(Error::invalid("an energy needs at least one term"));
        }
        if let Some(t) = terms.iter().find(|t| !(t.weight >= 0.0 && t.weight.is_finite())) {
            return Err(Error::invalid(format!(
                "weight of term '{}' must be finite and non-negative, got {}",
                t.label, t.weight
            )));
        }
        if terms.iter().all(|t| t.weight == 0.0) {
            return Err(Error::invalid("all energy weights are zero"));
        }
        Ok(Self { terms, options })
    }

    pub fn terms(&self) -> &[EnergyTerm<'a>] {
        &self.terms
    }

    pub fn options(&self) -> &ConstraintOptions {
        &self.options
    }

    /// Same terms with every weight multiplied by `factor`.
    pub fn scaled(&self, factor: Real) -> Result<Self> {
        let terms = self
            .terms
            .iter()
            .map(|t| EnergyTerm {
                weight: t.weight * factor,
                ..t.clone()
            })
            .collect();
        Self::new(terms, self.options)
    }

    /// Builds `E` on an existing graph, for end-to-end gradient checks.
    pub fn build(&self, g: &mut Graph, y: crate::numerics::Var) -> Result<crate::numerics::Var> {
        let mut total: Option<crate::numerics::Var> = None;
        for term in &self.terms {
            let f = term.constraint.build(g, y, &self.options)?;
            let w = g.scale(f, -term.weight);
            total = Some(match total {
                Some(acc) => g.add(acc, w)?,
                None => w,
            });
        }
        Ok(total.expect("at least one term"))
    }

    pub fn energy(&self, y: &SoftSequence) -> Result<Real> {
        self.value(y)
    }
}

impl Energy for EnergySpec<'_> {
    fn term_labels(&self) -> Vec<String> {
        self.terms.iter().map(|t| t.label.clone()).collect()
    }

    /// Each term gets its own graph so a non-finite gradient can be traced
    /// to the term that produced it.
    fn evaluate(&self, y: &SoftSequence, with_grad: bool) -> Result<EnergyEval> {
        let mut per_term = Vec::with_capacity(self.terms.len());
        let mut grad = with_grad.then(|| Array::zeros(y.len(), y.vocab_size()));
        for (i, term) in self.terms.iter().enumerate() {
            if term.weight == 0.0 {
                per_term.push(0.0);
                continue;
            }
            let (value, g) = if with_grad {
                let (v, g) = term.constraint.value_and_grad(y, &self.options)?;
                (v, Some(g))
            } else {
                (term.constraint.value(y, &self.options)?, None)
            };
            if !value.is_finite() {
                return Err(Error::NonFiniteGradient { term: i });
            }
            if let (Some(acc), Some(g)) = (grad.as_mut(), g) {
                if !g.is_finite() {
                    return Err(Error::NonFiniteGradient { term: i });
                }
                acc.axpy(-term.weight, &g);
            }
            per_term.push(term.weight * value);
        }
        Ok(EnergyEval {
            total: -per_term.iter().sum::<Real>(),
            per_term,
            grad,
        })
    }
}

/// `E(z) = ½ Σ (z − μ)²`, an analytic target for testing the sampler.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticEnergy {
    pub mu: Array,
}

impl Energy for QuadraticEnergy {
    fn term_labels(&self) -> Vec<String> {
        vec!["quadratic".into()]
    }

    fn evaluate(&self, y: &SoftSequence, with_grad: bool) -> Result<EnergyEval> {
        let z = y.logits();
        if z.shape() != self.mu.shape() {
            return Err(Error::invalid("quadratic energy shape mismatch"));
        }
        let mut diff = z.clone();
        diff.axpy(-1.0, &self.mu);
        let e = 0.5 * diff.data().iter().map(|d| d * d).sum::<Real>();
        Ok(EnergyEval {
            total: e,
            per_term: vec![-e],
            grad: with_grad.then_some(diff),
        })
    }
}

/// Piecewise-constant noise scale: `σ⁽ⁿ⁾` is the value of the greatest
/// breakpoint not after iteration `n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<(usize, Real)>", into = "Vec<(usize, Real)>")]
pub struct NoiseSchedule {
    breakpoints: Vec<(usize, Real)>,
}

impl NoiseSchedule {
    pub fn new(breakpoints: Vec<(usize, Real)>) -> Result<Self> {
        match breakpoints.first() {
            Some(&(0, _)) => {}
            _ => return Err(Error::invalid("noise schedule must start at iteration 0")),
        }
        for w in breakpoints.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(Error::invalid("noise schedule iterations must be strictly increasing"));
            }
            if w[1].1 > w[0].1 {
                return Err(Error::invalid("noise schedule values must be non-increasing"));
            }
        }
        if let Some(&(_, s)) = breakpoints.iter().find(|(_, s)| !(*s >= 0.0 && s.is_finite())) {
            return Err(Error::invalid(format!("noise scale must be finite and non-negative, got {s}")));
        }
        Ok(Self { breakpoints })
    }

    pub fn constant(sigma: Real) -> Result<Self> {
        Self::new(vec![(0, sigma)])
    }

    pub fn breakpoints(&self) -> &[(usize, Real)] {
        &self.breakpoints
    }

    pub fn sigma(&self, iteration: usize) -> Real {
        let k = self.breakpoints.partition_point(|&(n, _)| n <= iteration);
        self.breakpoints[k - 1].1
    }

    /// Breakpoint iterations multiplied by `factor` (rounded), values kept.
    pub fn rescaled(&self, factor: f64) -> Result<Self> {
        let mut out: Vec<(usize, Real)> = Vec::new();
        for &(n, s) in &self.breakpoints {
            let m = (n as f64 * factor).round() as usize;
            match out.last_mut() {
                Some(last) if last.0 == m => last.1 = s,
                _ => out.push((m, s)),
            }
        }
        Self::new(out)
    }
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self::new(vec![(0, 1.0), (50, 0.5), (500, 0.1), (1000, 0.05), (1500, 0.01)]).expect("valid default")
    }
}

impl FromStr for NoiseSchedule {
    type Err = Error;

    /// Parses `"0:1,50:0.5,500:0.1"`.
    fn from_str(s: &str) -> Result<Self> {
        let mut points = Vec::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (n, sigma) = part
                .split_once(':')
                .ok_or_else(|| Error::invalid(format!("schedule entry '{part}' is not ITER:SIGMA")))?;
            let n: usize = n
                .trim()
                .parse()
                .map_err(|_| Error::invalid(format!("bad schedule iteration '{n}'")))?;
            let sigma: Real = sigma
                .trim()
                .parse()
                .map_err(|_| Error::invalid(format!("bad schedule value '{sigma}'")))?;
            points.push((n, sigma));
        }
        Self::new(points)
    }
}

impl fmt::Display for NoiseSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.breakpoints.iter().map(|(n, s)| format!("{n}:{s}")).collect();
        f.write_str(&parts.join(","))
    }
}

impl TryFrom<Vec<(usize, Real)>> for NoiseSchedule {
    type Error = Error;

    fn try_from(v: Vec<(usize, Real)>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<NoiseSchedule> for Vec<(usize, Real)> {
    fn from(s: NoiseSchedule) -> Self {
        s.breakpoints
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeConfig {
    pub iters: usize,
    pub eta: Real,
    pub length: usize,
    pub tau: Real,
    pub topk: usize,
    /// Greedy continuation budget after discretization.
    pub max_continuation: usize,
    pub num_samples: usize,
    pub seed: u64,
    pub schedule: NoiseSchedule,
    pub clip_gradient: bool,
    pub detach_reference: bool,
    pub fluency_form: FluencyForm,
    /// Trace is recorded every this many iterations, and at the end.
    pub trace_every: usize,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            iters: 2000,
            eta: 0.1,
            length: 10,
            tau: 1.0,
            topk: 10,
            max_continuation: 10,
            num_samples: 16,
            seed: 0,
            schedule: NoiseSchedule::default(),
            clip_gradient: false,
            detach_reference: false,
            fluency_form: FluencyForm::CrossEntropy,
            trace_every: 10,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::invalid(m.to_string()));
        if self.iters == 0 {
            return bad("iteration count must be at least 1");
        }
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return bad("step size must be finite and non-negative");
        }
        if self.length == 0 {
            return bad("length must be at least 1");
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return bad("temperature must be positive");
        }
        if self.topk == 0 {
            return bad("top-k must be at least 1");
        }
        if self.num_samples == 0 {
            return bad("sample count must be at least 1");
        }
        if self.trace_every == 0 {
            return bad("trace interval must be at least 1");
        }
        Ok(())
    }

    pub fn constraint_options(&self) -> ConstraintOptions {
        ConstraintOptions {
            tau: self.tau,
            detach_reference: self.detach_reference,
            fluency_form: self.fluency_form,
        }
    }
}

/// Generator for chain `chain`: the master seed selects the key, the chain
/// index selects the ChaCha stream.
pub fn chain_rng(master_seed: u64, chain: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(chain as u64);
    rng
}

/// Greedy-decode logits of `<bos> prompt` as the starting soft sequence.
pub fn init_soft_sequence(lm: &LanguageModel, prompt: &[TokenId], length: usize) -> Result<SoftSequence> {
    let (_, logits) = lm.greedy_decode(prompt, length)?;
    SoftSequence::new(logits, lm.vocab_size())
}

/// One update `ỹ' = ỹ − η∇E(ỹ) + ε`, `ε ~ N(0, σ²)` per entry. Returns the
/// new point and the energy evaluated at the old one.
pub fn langevin_step<R: Rng + ?Sized>(
    y: &SoftSequence,
    energy: &dyn Energy,
    eta: Real,
    sigma: Real,
    clip: bool,
    rng: &mut R,
) -> Result<(SoftSequence, EnergyEval)> {
    if !(sigma >= 0.0) {
        return Err(Error::invalid("noise scale must be non-negative"));
    }
    let mut eval = energy.evaluate(y, true)?;
    let grad = eval.grad.take().expect("gradient requested");
    let mut next = y.logits().clone();
    for (z, &d) in next.data_mut().iter_mut().zip(grad.data()) {
        let d = if clip { d.clamp(-GRAD_CLIP, GRAD_CLIP) } else { d };
        *z -= eta * d;
    }
    if sigma > 0.0 {
        for z in next.data_mut() {
            let e: f64 = rng.sample(StandardNormal);
            *z += sigma * e as Real;
        }
    }
    if !next.is_finite() {
        return Err(Error::NonFiniteGradient { term: 0 });
    }
    Ok((SoftSequence::new(next, y.vocab_size())?, eval))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iteration: usize,
    pub total_energy: Real,
    pub per_term: Vec<Real>,
}

#[derive(Debug, Clone)]
pub struct Chain {
    pub sample: SoftSequence,
    pub trace: Vec<TraceRecord>,
}

impl Chain {
    pub fn initial_energy(&self) -> Real {
        self.trace.first().map_or(Real::NAN, |r| r.total_energy)
    }

    pub fn final_energy(&self) -> Real {
        self.trace.last().map_or(Real::NAN, |r| r.total_energy)
    }
}

/// Runs `config.iters` Langevin steps from `init` with the given generator.
pub fn run_chain<R: Rng + ?Sized>(
    energy: &dyn Energy,
    config: &DecodeConfig,
    init: SoftSequence,
    rng: &mut R,
) -> Result<Chain> {
    config.validate()?;
    let mut y = init;
    let mut trace = Vec::with_capacity(config.iters / config.trace_every + 2);
    for n in 0..config.iters {
        let sigma = config.schedule.sigma(n);
        let (next, eval) = langevin_step(&y, energy, config.eta, sigma, config.clip_gradient, rng)?;
        if n % config.trace_every == 0 {
            trace.push(TraceRecord {
                iteration: n,
                total_energy: eval.total,
                per_term: eval.per_term,
            });
        }
        y = next;
    }
    let last = energy.evaluate(&y, false)?;
    trace.push(TraceRecord {
        iteration: config.iters,
        total_energy: last.total,
        per_term: last.per_term,
    });
    Ok(Chain { sample: y, trace })
}

/// Initializes from greedy decoding of `prompt` and runs one chain.
pub fn sample(
    energy: &dyn Energy,
    config: &DecodeConfig,
    lm: &LanguageModel,
    prompt: &[TokenId],
    chain: usize,
) -> Result<Chain> {
    let init = init_soft_sequence(lm, prompt, config.length)?;
    run_chain(energy, config, init, &mut chain_rng(config.seed, chain))
}

/// `config.num_samples` independent chains from a common start.
pub fn sample_chains(energy: &dyn Energy, config: &DecodeConfig, init: &SoftSequence) -> Result<Vec<Chain>> {
    config.validate()?;
    parallel::try_map(config.num_samples, |i| {
        run_chain(energy, config, init.clone(), &mut chain_rng(config.seed, i))
    })
}

/// Same as [`sample_chains`] but always on the calling thread.
pub fn sample_chains_sequential(
    energy: &dyn Energy,
    config: &DecodeConfig,
    init: &SoftSequence,
) -> Result<Vec<Chain>> {
    config.validate()?;
    parallel::map_sequential(config.num_samples, |i| {
        run_chain(energy, config, init.clone(), &mut chain_rng(config.seed, i))
    })
    .into_iter()
    .collect()
}

/// Writes one JSON object per trace record.
pub fn write_trace_jsonl<W: Write>(out: &mut W, trace: &[TraceRecord]) -> Result<()> {
    for r in trace {
        let line = serde_json::to_string(r).map_err(|e| Error::Json {
            context: "energy trace".into(),
            source: e,
        })?;
        writeln!(out, "{line}").map_err(|e| Error::io("<trace>", e))?;
    }
    Ok(())
}
