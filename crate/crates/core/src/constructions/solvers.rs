//! Constructed solvers for the four synthetic token tasks.
//!
//! Every solver embeds words with a certified ±1/√k projection, scores each
//! earlier position against the current one with the surrogate inner
//! product, averages the value codes with a softmax at the certified
//! temperature and decodes with `Rᵀ`.
//!
//! * copy, associative recall, induction head: the key of position j is the
//!   n-gram of the m tokens before j and the query is the n-gram ending at
//!   the current token. For copy, `BOS` and `COPY` share an anchor block of
//!   m ones, which lines the first body word up with the token after `COPY`.
//! * selective copy: a rank pointer. The key of position j carries the
//!   number `c_j` of regular words up to j and a penalty for everything that
//!   is not a regular word before `COPY`; the query carries `r = 1 +` the
//!   number of words generated so far. The score `(r² − (c−r)²)/N² − pen`
//!   peaks at the r-th regular word.
//!
//! [`TaskSolver::logits`] evaluates this with exact arithmetic on token ids.
//! [`TaskSolver::realize_network`] assembles the same computation as a
//! two-block [`SsmNetwork`]: block one extracts lagged features with
//! Gaussian positional delta filters, block two is a DFT filter bank over
//! the whole window followed by a [`SelectionReadout`].

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::jl::{jl_build, JlProjection};
use super::lowrank::gaussian_lowrank_build;
use super::readout::{LagBank, SelectionReadout};
use super::selection::{softmax_weights, surrogate_scores_vecs, KernelSelector};
use crate::error::{Error, Result};
use crate::model::{decode_next_token, Affine, Block, ClassBudget, ConvLayer, EmbeddingLayer, FnnStack, SsmNetwork, TokenMap};
use crate::numerics::{Matrix, RngStream};
use crate::tasks::{TaskKind, Vocab};

/// Constant in `K = ⌈c₁(ln V + ln ε⁻¹)⌉`, fitted by
/// `examples/calibrate_selective_copy.rs`.
pub const SELECTIVE_COPY_C1: f64 = 0.87;

/// Solvers whose network would exceed this many channels are only built on
/// explicit request.
pub const NETWORK_CHANNEL_CAP: usize = 2048;

const JL_ATTEMPTS: usize = 64;
/// Off-target size of the block-one positional delta filters.
const DELTA_EPS: f64 = 1e-10;
const LOWRANK_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    Copy,
    AssocRecall,
    InductionHead,
    SelectiveCopy,
}

impl SolverKind {
    pub fn task(self) -> TaskKind {
        match self {
            SolverKind::Copy => TaskKind::Copy,
            SolverKind::AssocRecall => TaskKind::AssocRecall,
            SolverKind::InductionHead => TaskKind::InductionHead,
            SolverKind::SelectiveCopy => TaskKind::SelectiveCopy,
        }
    }
}

impl TryFrom<TaskKind> for SolverKind {
    type Error = Error;

    fn try_from(kind: TaskKind) -> Result<Self> {
        match kind {
            TaskKind::Copy => Ok(SolverKind::Copy),
            TaskKind::AssocRecall => Ok(SolverKind::AssocRecall),
            TaskKind::InductionHead => Ok(SolverKind::InductionHead),
            TaskKind::SelectiveCopy => Ok(SolverKind::SelectiveCopy),
            TaskKind::MaxRegression => Err(Error::InvalidArgument("no constructed solver for max regression".into())),
        }
    }
}

/// Sizing of the selective-copy argument: pad runs of length `M` are rare,
/// so a window of `m = K·M` tokens holds at least `K` regular words, and a
/// large enough vocabulary makes two windows sharing `K` words rare.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectiveCopyPlan {
    pub v: usize,
    pub alpha: f64,
    pub epsilon: f64,
    /// `M = ⌈ln(2V/ε) / ln(1/α)⌉`.
    pub pad_run: usize,
    /// `K`.
    pub common: usize,
    /// `m = K·M`.
    pub window: usize,
    pub c1: f64,
    /// Smallest number of regular words with collision bound ≤ ε/2.
    pub vocab_threshold: usize,
    pub regular_words: usize,
    /// Collision bound at `regular_words`.
    pub collision_bound: f64,
    pub capability_ok: bool,
}

/// `P(X ≥ k)` for `X ~ Poisson(λ)`, summed upward to avoid cancellation.
pub fn poisson_tail(lambda: f64, k: usize) -> f64 {
    if k == 0 {
        return 1.0;
    }
    if lambda <= 0.0 {
        return 0.0;
    }
    // log of λ^k e^{−λ} / k!
    let mut log_term = k as f64 * lambda.ln() - lambda - (1..=k).map(|i| (i as f64).ln()).sum::<f64>();
    let mut total = 0.0;
    for i in k..k + 400 {
        let term = log_term.exp();
        total += term;
        if term < total * 1e-17 {
            break;
        }
        log_term += lambda.ln() - ((i + 1) as f64).ln();
    }
    total.min(1.0)
}

/// `V² · P(Pois(λ) ≥ K)` with `λ = (m(1−α))² / words`: the chance that two
/// windows of `m` tokens share `K` regular words, over all window pairs.
pub fn collision_bound(v: usize, window: usize, alpha: f64, common: usize, words: usize) -> f64 {
    if words == 0 {
        return f64::INFINITY;
    }
    let per_window = window as f64 * (1.0 - alpha);
    let lambda = per_window * per_window / words as f64;
    (v * v) as f64 * poisson_tail(lambda, common)
}

/// Smallest vocabulary with `collision_bound ≤ ε/2`.
pub fn vocab_threshold(v: usize, window: usize, alpha: f64, common: usize, epsilon: f64) -> usize {
    let ok = |w: usize| collision_bound(v, window, alpha, common, w) <= epsilon / 2.0;
    let mut hi = 1usize;
    while !ok(hi) {
        if hi > 1 << 40 {
            return usize::MAX;
        }
        hi *= 2;
    }
    let mut lo = hi / 2;
    while lo + 1 < hi {
        let mid = (lo + hi) / 2;
        if ok(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

pub fn pad_run_length(v: usize, alpha: f64, epsilon: f64) -> usize {
    if alpha <= 0.0 {
        return 1;
    }
    ((2.0 * v.max(1) as f64 / epsilon).ln() / (1.0 / alpha).ln()).ceil().max(1.0) as usize
}

pub fn selective_copy_plan(v: usize, alpha: f64, epsilon: f64, regular_words: usize, c1: f64) -> Result<SelectiveCopyPlan> {
    if !(0.0..1.0).contains(&alpha) {
        return Err(Error::InvalidArgument(format!("alpha must lie in [0, 1), got {alpha}")));
    }
    if !(epsilon > 0.0 && epsilon <= 1.0) {
        return Err(Error::InvalidArgument(format!("epsilon must lie in (0, 1], got {epsilon}")));
    }
    let pad_run = pad_run_length(v, alpha, epsilon);
    let raw = (c1 * ((v.max(1) as f64).ln() + (1.0 / epsilon).ln())).ceil().max(1.0) as usize;
    let common = raw.min((v / pad_run).max(1));
    let window = common * pad_run;
    let vocab_threshold = vocab_threshold(v, window, alpha, common, epsilon);
    let collision_bound = collision_bound(v, window, alpha, common, regular_words);
    Ok(SelectiveCopyPlan {
        v,
        alpha,
        epsilon,
        pad_run,
        common,
        window,
        c1,
        vocab_threshold,
        regular_words,
        collision_bound,
        capability_ok: regular_words >= vocab_threshold,
    })
}

/// Projection dimension for `n` coded words: a power of two of at least
/// `max(n, 16)` for small vocabularies (so exactly orthogonal codes exist),
/// `256 ln n` otherwise.
pub fn solver_jl_dim(n: usize) -> usize {
    if n <= 64 {
        n.max(16).next_power_of_two()
    } else {
        ((256.0 * (n as f64).ln()).ceil() as usize).next_power_of_two()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum Scoring {
    /// Surrogate score split over slots: `half[q] + table[q][k]` per slot,
    /// with slot index 0 for "before the start" and `w + 1` for word w.
    NGram { slot_len: usize, anchors: usize, half: Vec<f64>, table: Vec<f64> },
    /// Rank pointer with scale `N`.
    Rank { scale: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSolver {
    pub kind: SolverKind,
    pub vocab: Vocab,
    pub v: usize,
    pub epsilon: f64,
    pub jl: JlProjection,
    /// Word ids with a code, in column order of `jl.r`.
    pub coded: Vec<usize>,
    pub selector: KernelSelector,
    pub ngram_m: usize,
    /// Longest sequence (prompt plus generated tokens) the selector covers.
    pub t_max: usize,
    pub plan: Option<SelectiveCopyPlan>,
    pub warnings: Vec<String>,
    pub network: Option<SsmNetwork>,
    /// Budget tallied while assembling `network`.
    pub network_budget: Option<ClassBudget>,
    code_col: Vec<Option<usize>>,
    /// `⟨code(w), code(u)⟩`, zero for words without a code.
    gram: Matrix,
    scoring: Scoring,
}

/// Assembles the solver for `kind`. `v` is the task length parameter: body
/// length for the copy tasks, number of pairs for recall, `V` for the
/// induction head. Selective copy uses α = 0.3 unless
/// [`build_selective_copy_solver`] is called directly.
pub fn build_task_solver(kind: SolverKind, vocab: &Vocab, v: usize, epsilon: f64, rng: &mut RngStream) -> Result<TaskSolver> {
    match kind {
        SolverKind::SelectiveCopy => build_selective_copy_solver(vocab, v, 0.3, epsilon, SELECTIVE_COPY_C1, rng),
        _ => build_ngram_solver(kind, vocab, v, epsilon, rng),
    }
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if !(epsilon > 0.0 && epsilon <= 1.0) {
        return Err(Error::InvalidArgument(format!("epsilon must lie in (0, 1], got {epsilon}")));
    }
    Ok(())
}

/// Smallest m with `V² |W′|^{−m} ≤ ε/2`, at most `V + 1`.
pub fn copy_ngram_length(v: usize, regular_words: usize, epsilon: f64) -> usize {
    if regular_words <= 1 {
        return 1;
    }
    let mut m = 1;
    while m <= v && (v * v) as f64 * (regular_words as f64).powi(-(m as i32)) > epsilon / 2.0 {
        m += 1;
    }
    m
}

fn one_hot_points(n: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|i| {
            let mut p = vec![0.0; n];
            p[i] = 1.0;
            p
        })
        .collect()
}

fn build_codes(vocab: &Vocab, coded: &[usize], m: usize, rng: &mut RngStream) -> Result<(JlProjection, Vec<Option<usize>>, Matrix)> {
    let n = coded.len();
    if n == 0 {
        return Err(Error::Config("vocabulary has no words to embed".into()));
    }
    let jl = jl_build(&one_hot_points(n), m, solver_jl_dim(n), rng, JL_ATTEMPTS)?;
    let mut code_col = vec![None; vocab.len()];
    for (c, &w) in coded.iter().enumerate() {
        code_col[w] = Some(c);
    }
    let small = jl.r.transpose().matmul(&jl.r)?;
    let mut gram = Matrix::zeros(vocab.len(), vocab.len());
    for (a, &wa) in coded.iter().enumerate() {
        for (b, &wb) in coded.iter().enumerate() {
            gram[(wa, wb)] = small[(a, b)];
        }
    }
    Ok((jl, code_col, gram))
}

fn build_ngram_solver(kind: SolverKind, vocab: &Vocab, v: usize, epsilon: f64, rng: &mut RngStream) -> Result<TaskSolver> {
    check_epsilon(epsilon)?;
    let (m, anchors, t_max, coded) = match kind {
        SolverKind::Copy => {
            if vocab.specials.bos.is_none() || vocab.specials.copy.is_none() {
                return Err(Error::Config("copy solver needs BOS and COPY tokens".into()));
            }
            let m = copy_ngram_length(v, vocab.regular_ids().len(), epsilon);
            (m, m, 2 * v + 2, vocab.coded_ids())
        }
        SolverKind::AssocRecall => {
            if vocab.key_ids.is_empty() || vocab.value_ids.is_empty() {
                return Err(Error::Config("recall solver needs key and value words".into()));
            }
            (1, 0, 2 * v + 1, (0..vocab.len()).collect())
        }
        SolverKind::InductionHead => {
            if v < 2 {
                return Err(Error::InvalidArgument("induction head needs V >= 2".into()));
            }
            (1, 0, v + 1, (0..vocab.len()).collect())
        }
        SolverKind::SelectiveCopy => unreachable!("handled by the rank solver"),
    };
    let (jl, code_col, gram) = build_codes(vocab, &coded, m, rng)?;
    let k = jl.k;
    let slot_len = k + anchors;
    let d_prime = m * slot_len;
    // An exact match scores every slot fully; anything else misses a slot
    // and gains at most the distortion on each of the others.
    let delta = 1.0 - 2.0 * m as f64 * jl.distortion;
    let eps_sel = 0.1 / (k as f64).sqrt();
    let selector = KernelSelector::new(d_prime, delta, eps_sel, t_max - 1)?;
    let mut solver = TaskSolver {
        kind,
        vocab: vocab.clone(),
        v,
        epsilon,
        jl,
        coded,
        selector,
        ngram_m: m,
        t_max,
        plan: None,
        warnings: vec![],
        network: None,
        network_budget: None,
        code_col,
        gram,
        scoring: Scoring::Rank { scale: 1.0 },
    };
    solver.scoring = solver.slot_tables(slot_len, anchors);
    solver.maybe_realize()?;
    Ok(solver)
}

/// Selective-copy solver with an explicit pad rate and calibration constant.
pub fn build_selective_copy_solver(
    vocab: &Vocab,
    v: usize,
    alpha: f64,
    epsilon: f64,
    c1: f64,
    rng: &mut RngStream,
) -> Result<TaskSolver> {
    check_epsilon(epsilon)?;
    if vocab.specials.bos.is_none() || vocab.specials.copy.is_none() || vocab.specials.pad.is_none() {
        return Err(Error::Config("selective copy solver needs BOS, COPY and PAD tokens".into()));
    }
    let plan = selective_copy_plan(v, alpha, epsilon, vocab.regular_ids().len(), c1)?;
    let mut warnings = vec![];
    if !plan.capability_ok {
        warnings.push(format!(
            "vocabulary has {} regular words, below the calibrated threshold {}",
            plan.regular_words, plan.vocab_threshold
        ));
    }
    let coded = vocab.coded_ids();
    let (jl, code_col, gram) = build_codes(vocab, &coded, 1, rng)?;
    let t_max = 2 * v + 2;
    let scale = (4 * v.max(1)) as f64;
    let delta = 1.0 / (scale * scale);
    let eps_sel = 0.1 / (jl.k as f64).sqrt();
    let selector = KernelSelector::new(3, delta, eps_sel, t_max - 1)?;
    let mut solver = TaskSolver {
        kind: SolverKind::SelectiveCopy,
        vocab: vocab.clone(),
        v,
        epsilon,
        jl,
        coded,
        selector,
        ngram_m: plan.window,
        t_max,
        plan: Some(plan),
        warnings,
        network: None,
        network_budget: None,
        code_col,
        gram,
        scoring: Scoring::Rank { scale },
    };
    solver.maybe_realize()?;
    Ok(solver)
}

impl TaskSolver {
    fn is_anchor(&self, w: usize) -> bool {
        self.kind == SolverKind::Copy && (Some(w) == self.vocab.specials.bos || Some(w) == self.vocab.specials.copy)
    }

    /// Code of word `w`; zero for words without one.
    pub fn code(&self, w: usize) -> Vec<f64> {
        match self.code_col[w] {
            Some(c) => self.jl.code(c),
            None => vec![0.0; self.jl.k],
        }
    }

    /// Slot vector `[code(w); anchor(w)·1]` of the n-gram solvers.
    fn slot_vector(&self, w: Option<usize>, anchors: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.jl.k + anchors];
        if let Some(w) = w {
            out[..self.jl.k].copy_from_slice(&self.code(w));
            if self.is_anchor(w) {
                out[self.jl.k..].iter_mut().for_each(|x| *x = 1.0);
            }
        }
        out
    }

    fn slot_tables(&self, slot_len: usize, anchors: usize) -> Scoring {
        let n = self.vocab.len() + 1;
        let vecs: Vec<Vec<f64>> =
            (0..n).map(|i| self.slot_vector(if i == 0 { None } else { Some(i - 1) }, anchors)).collect();
        let a = self.selector.a_scale;
        let c = 2.0 / (PI * PI);
        let w = PI / (2.0 * a);
        let half: Vec<f64> = vecs.iter().map(|v| 0.5 * v.iter().map(|x| x * x).sum::<f64>()).collect();
        let mut table = vec![0.0; n * n];
        for (qi, q) in vecs.iter().enumerate() {
            for (ki, key) in vecs.iter().enumerate() {
                let mut acc = 0.0;
                for (kv, qv) in key.iter().zip(q) {
                    let s = a * (w * (kv - qv)).sin();
                    acc += 0.5 * kv * kv - c * s * s;
                }
                table[qi * n + ki] = acc;
            }
        }
        Scoring::NGram { slot_len, anchors, half, table }
    }

    fn check_ids(&self, ids: &[usize]) -> Result<()> {
        if ids.is_empty() {
            return Err(Error::InvalidArgument("empty sequence".into()));
        }
        if ids.len() > self.t_max {
            return Err(Error::InvalidArgument(format!(
                "sequence of length {} exceeds the certified horizon {}",
                ids.len(),
                self.t_max
            )));
        }
        if let Some(w) = ids.iter().find(|&&w| w >= self.vocab.len()) {
            return Err(Error::InvalidArgument(format!("unknown word id {w}")));
        }
        Ok(())
    }

    /// Rank-pointer key of every position and the query at the last one.
    fn rank_features(&self, ids: &[usize], scale: f64) -> (Vec<[f64; 3]>, [f64; 3]) {
        let copy = self.vocab.specials.copy;
        let mut count = 0usize;
        let mut seen_copy = false;
        let mut generated = 0usize;
        let mut keys = Vec::with_capacity(ids.len());
        for &w in ids {
            let regular = !self.vocab.is_special(w);
            if Some(w) == copy {
                seen_copy = true;
            }
            if regular {
                count += 1;
                if seen_copy {
                    generated += 1;
                }
            }
            let pen = if regular && !seen_copy { 0.0 } else { 1.0 };
            let c = count as f64;
            keys.push([2.0 * c / scale, -c * c / (scale * scale), -pen]);
        }
        let r = (generated + 1) as f64;
        (keys, [r / scale, 1.0, 1.0])
    }

    /// Candidate positions `0..L` (the current position L is excluded) and
    /// their softmax weights.
    pub fn selection_weights(&self, ids: &[usize]) -> Result<(Vec<usize>, Vec<f64>)> {
        self.check_ids(ids)?;
        let last = ids.len() - 1;
        if last == 0 {
            return Ok((vec![], vec![]));
        }
        let scores: Vec<f64> = match &self.scoring {
            Scoring::NGram { half, table, .. } => {
                let n = self.vocab.len() + 1;
                let m = self.ngram_m as isize;
                let slot = |p: isize| if p < 0 { 0 } else { ids[p as usize] + 1 };
                let q: Vec<usize> = (0..m).map(|i| slot(last as isize - m + 1 + i)).collect();
                let q_half: f64 = q.iter().map(|&s| half[s]).sum();
                (0..last)
                    .map(|j| {
                        let mut acc = q_half;
                        for (i, &qs) in q.iter().enumerate() {
                            acc += table[qs * n + slot(j as isize - m + i as isize)];
                        }
                        acc
                    })
                    .collect()
            }
            Scoring::Rank { scale } => {
                let (keys, q) = self.rank_features(ids, *scale);
                let keys: Vec<Vec<f64>> = keys[..last].iter().map(|k| k.to_vec()).collect();
                surrogate_scores_vecs(&q, &keys, self.selector.a_scale)
            }
        };
        Ok(((0..last).collect(), softmax_weights(&scores, self.selector.kappa)))
    }

    /// Selected code-space vector `Σ_j w_j code(s_j)`.
    pub fn output_vector(&self, ids: &[usize]) -> Result<Vec<f64>> {
        let (cands, w) = self.selection_weights(ids)?;
        let mut out = vec![0.0; self.jl.k];
        for (j, wj) in cands.into_iter().zip(w) {
            if let Some(c) = self.code_col[ids[j]] {
                for (o, r) in out.iter_mut().zip(self.jl.r.column(c)) {
                    *o += wj * r;
                }
            }
        }
        Ok(out)
    }

    /// Decode logits `Rᵀ y` over the whole vocabulary.
    pub fn logits(&self, ids: &[usize]) -> Result<Vec<f64>> {
        let (cands, w) = self.selection_weights(ids)?;
        let mut out = vec![0.0; self.vocab.len()];
        for (j, wj) in cands.into_iter().zip(w) {
            if wj == 0.0 {
                continue;
            }
            let s = ids[j];
            for (u, o) in out.iter_mut().enumerate() {
                *o += wj * self.gram[(u, s)];
            }
        }
        Ok(out)
    }

    pub fn next_token(&self, ids: &[usize]) -> Result<usize> {
        Ok(decode_next_token(&self.logits(ids)?))
    }

    pub fn generate(&self, prompt: &[usize], steps: usize) -> Result<Vec<usize>> {
        let mut seq = prompt.to_vec();
        let mut out = Vec::with_capacity(steps);
        for _ in 0..steps {
            let t = self.next_token(&seq)?;
            seq.push(t);
            out.push(t);
        }
        Ok(out)
    }

    /// Number of tokens to generate for a task input.
    pub fn output_length(&self, input: &[usize]) -> usize {
        match self.kind {
            SolverKind::Copy => input.len().saturating_sub(2),
            SolverKind::SelectiveCopy => input.iter().filter(|&&w| !self.vocab.is_special(w)).count(),
            SolverKind::AssocRecall | SolverKind::InductionHead => 1,
        }
    }

    /// Task answer for `input` produced by the exact evaluator.
    pub fn solve(&self, input: &[usize]) -> Result<Vec<usize>> {
        self.generate(input, self.output_length(input))
    }

    /// Channel count of the widest layer of the network realization.
    pub fn network_channels(&self) -> usize {
        let k = self.jl.k;
        match &self.scoring {
            Scoring::NGram { slot_len, .. } => {
                let d1 = (slot_len + 1) * 2 * (self.ngram_m + 1);
                let d2 = (2 * self.ngram_m * slot_len + k + 1) * self.t_max;
                d1.max(d2)
            }
            Scoring::Rank { .. } => ((k + 3) * (self.t_max + 1)).max((k + 5) * self.t_max),
        }
    }

    fn maybe_realize(&mut self) -> Result<()> {
        if self.network_channels() <= NETWORK_CHANNEL_CAP {
            self.realize_network()?;
        }
        Ok(())
    }

    /// Builds (or rebuilds) the network realization regardless of size.
    pub fn realize_network(&mut self) -> Result<&SsmNetwork> {
        let (net, budget) = match self.scoring.clone() {
            Scoring::NGram { slot_len, anchors, .. } => self.ngram_network(slot_len, anchors)?,
            Scoring::Rank { scale } => self.rank_network(scale)?,
        };
        self.network = Some(net);
        self.network_budget = Some(budget);
        Ok(self.network.as_ref().expect("just built"))
    }

    /// `W_dec`: column w is `code(w)`.
    fn decode_matrix(&self) -> Matrix {
        let mut w = Matrix::zeros(self.jl.k, self.vocab.len());
        for u in 0..self.vocab.len() {
            w.set_column(u, &self.code(u));
        }
        w
    }

    fn ngram_network(&self, slot_len: usize, anchors: usize) -> Result<(SsmNetwork, ClassBudget)> {
        let k = self.jl.k;
        let m = self.ngram_m;
        let n_words = self.vocab.len();
        let base = slot_len + 1;
        let presence = slot_len;
        let mut tally = Tally::default();

        // Block one: lags 0..=m of every base feature.
        let bank1 = DeltaBank::new(m, true)?;
        let c1n = bank1.channels.len();
        let d1 = base * c1n;
        let mut e1 = Matrix::zeros(d1, n_words);
        let mut e2 = vec![0.0; d1];
        for w in 0..n_words {
            let psi = self.slot_vector(Some(w), anchors);
            for (b, val) in psi.iter().enumerate() {
                for ch in 0..c1n {
                    e1[(b * c1n + ch, w)] = *val;
                }
            }
        }
        for ch in 0..c1n {
            e2[presence * c1n + ch] = 1.0;
        }
        tally.matrix(&e1);
        tally.vector(&e2);
        let conv1 = bank1.conv_layer(base, m);
        tally.conv(&conv1);

        // Features handed to block two, each a (base feature, lag) pair.
        let mut feats: Vec<(usize, usize)> = Vec::new();
        for i in 0..m {
            feats.extend((0..slot_len).map(|d| (d, m - 1 - i)));
        }
        for i in 0..m {
            feats.extend((0..slot_len).map(|d| (d, m - i)));
        }
        feats.extend((0..k).map(|d| (d, 0)));
        feats.push((presence, 0));
        let n_feat = feats.len();
        let bank2 = LagBank::new(self.t_max - 1);
        let c2n = bank2.channels_per_feature();
        let d2 = n_feat * c2n;
        let mut a = Matrix::zeros(d2, d1);
        for (f, &(b, lag)) in feats.iter().enumerate() {
            for (ch, coef) in bank1.lag_coefficients(lag).into_iter().enumerate() {
                for c in 0..c2n {
                    a[(f * c2n + c, b * c1n + ch)] = coef;
                }
            }
        }
        let f1 = FnnStack::new(vec![Affine::new(a, vec![0.0; d2])?])?;
        tally.fnn(&f1);
        let conv2 = lag_bank_layer(bank2, n_feat);
        tally.conv(&conv2);

        let dp = m * slot_len;
        let mut key_proj = Matrix::zeros(dp, n_feat);
        let mut query = Matrix::zeros(dp, n_feat);
        for i in 0..dp {
            query[(i, i)] = 1.0;
            key_proj[(i, dp + i)] = 1.0;
        }
        let mut value = Matrix::zeros(k, n_feat);
        for d in 0..k {
            value[(d, 2 * dp + d)] = 1.0;
        }
        let readout = SelectionReadout::new(
            bank2,
            key_proj,
            query,
            Matrix::zeros(dp, n_feat),
            vec![0.0; dp],
            value,
            2 * dp + k,
            1,
            self.selector.clone(),
        )?;
        let decode = self.decode_matrix();
        let net = SsmNetwork::new(
            EmbeddingLayer::new(e1, e2)?,
            vec![
                Block { conv: conv1, map: TokenMap::Fnn(f1) },
                Block { conv: conv2, map: TokenMap::Readout(Box::new(readout)) },
            ],
            None,
            Some(decode),
        )?;
        Ok((net, tally.budget(2, d1.max(d2))?))
    }

    fn rank_network(&self, scale: f64) -> Result<(SsmNetwork, ClassBudget)> {
        let k = self.jl.k;
        let n_words = self.vocab.len();
        let (is_reg, is_copy, presence) = (k, k + 1, k + 2);
        let base = k + 3;
        let mut tally = Tally::default();

        // Block one: lag 0 and the running sum of every base feature.
        let window = self.t_max - 1;
        let bank1 = DeltaBank::new(window, false)?;
        let c1n = bank1.channels.len();
        let d1 = base * c1n;
        let mut e1 = Matrix::zeros(d1, n_words);
        let mut e2 = vec![0.0; d1];
        for w in 0..n_words {
            let mut feat = self.code(w);
            feat.push(if self.vocab.is_special(w) { 0.0 } else { 1.0 });
            feat.push(if Some(w) == self.vocab.specials.copy { 1.0 } else { 0.0 });
            feat.push(0.0);
            for (b, val) in feat.iter().enumerate() {
                for ch in 0..c1n {
                    e1[(b * c1n + ch, w)] = *val;
                }
            }
        }
        for ch in 0..c1n {
            e2[presence * c1n + ch] = 1.0;
        }
        tally.matrix(&e1);
        tally.vector(&e2);
        let conv1 = bank1.conv_layer(base, window);
        tally.conv(&conv1);
        let lag0 = bank1.lag_coefficients(0);
        // Channel 0 is the g = 0 cosine, i.e. the sum over the window.
        let running = |b: usize| b * c1n;

        // Hidden units of the two-map feature network.
        let n_knots = 2 * self.v + 1;
        let h_code = 0;
        let h_pres = 2 * k;
        let h_knot = h_pres + 1;
        let h_pre = h_knot + n_knots;
        let h_after = h_pre + 1;
        let hidden = h_after + 1;
        let mut a1 = Matrix::zeros(hidden, d1);
        let mut b1 = vec![0.0; hidden];
        let put_lag0 = |a: &mut Matrix, row: usize, b: usize, sign: f64| {
            for (ch, c) in lag0.iter().enumerate() {
                a[(row, b * c1n + ch)] += sign * c;
            }
        };
        for d in 0..k {
            put_lag0(&mut a1, h_code + 2 * d, d, 1.0);
            put_lag0(&mut a1, h_code + 2 * d + 1, d, -1.0);
        }
        put_lag0(&mut a1, h_pres, presence, 1.0);
        for i in 0..n_knots {
            a1[(h_knot + i, running(is_reg))] = 1.0;
            b1[h_knot + i] = -(i as f64);
        }
        put_lag0(&mut a1, h_pre, is_reg, 1.0);
        a1[(h_pre, running(is_copy))] = -1.0;
        put_lag0(&mut a1, h_after, is_reg, 1.0);
        a1[(h_after, running(is_copy))] = 1.0;
        b1[h_after] = -1.0;

        // Features: key (3), code (k), presence, generated-word indicator.
        let n_feat = k + 5;
        let bank2 = LagBank::new(self.t_max - 1);
        let c2n = bank2.channels_per_feature();
        let mut a2 = Matrix::zeros(n_feat * c2n, hidden);
        let mut b2 = vec![0.0; n_feat * c2n];
        for c in 0..c2n {
            let row = |f: usize| f * c2n + c;
            a2[(row(0), h_knot)] = 2.0 / scale;
            a2[(row(1), h_knot)] = -1.0 / (scale * scale);
            for i in 1..n_knots {
                a2[(row(1), h_knot + i)] = -2.0 / (scale * scale);
            }
            a2[(row(2), h_pre)] = 1.0;
            b2[row(2)] = -1.0;
            for d in 0..k {
                a2[(row(3 + d), h_code + 2 * d)] = 1.0;
                a2[(row(3 + d), h_code + 2 * d + 1)] = -1.0;
            }
            a2[(row(3 + k), h_pres)] = 1.0;
            a2[(row(4 + k), h_after)] = 1.0;
        }
        let f1 = FnnStack::new(vec![Affine::new(a1, b1)?, Affine::new(a2, b2)?])?;
        tally.fnn(&f1);
        let conv2 = lag_bank_layer(bank2, n_feat);
        tally.conv(&conv2);

        let mut key_proj = Matrix::zeros(3, n_feat);
        for i in 0..3 {
            key_proj[(i, i)] = 1.0;
        }
        let mut q_window = Matrix::zeros(3, n_feat);
        q_window[(0, 4 + k)] = 1.0 / scale;
        let mut value = Matrix::zeros(k, n_feat);
        for d in 0..k {
            value[(d, 3 + d)] = 1.0;
        }
        let readout = SelectionReadout::new(
            bank2,
            key_proj,
            Matrix::zeros(3, n_feat),
            q_window,
            vec![1.0 / scale, 1.0, 1.0],
            value,
            3 + k,
            1,
            self.selector.clone(),
        )?;
        let d2 = n_feat * c2n;
        let net = SsmNetwork::new(
            EmbeddingLayer::new(e1, e2)?,
            vec![
                Block { conv: conv1, map: TokenMap::Fnn(f1) },
                Block { conv: conv2, map: TokenMap::Readout(Box::new(readout)) },
            ],
            None,
            Some(self.decode_matrix()),
        )?;
        Ok((net, tally.budget(2, d1.max(d2))?))
    }
}

/// Block-one filters: cosine (and optionally sine) channels of frequency
/// `g/2` over the window, combined by the folded Gaussian low-rank
/// coefficients into positional delta filters at any lag.
struct DeltaBank {
    window: usize,
    folded: Vec<f64>,
    /// `(is_sine, g)`.
    channels: Vec<(bool, usize)>,
}

impl DeltaBank {
    fn new(window: usize, with_sines: bool) -> Result<Self> {
        let up = window + 1;
        let kappa = (up * up) as f64 * (1.0 / DELTA_EPS).ln();
        let glr = gaussian_lowrank_build(kappa, LOWRANK_EPS)?;
        let folded = glr.fold(up);
        let mut channels: Vec<(bool, usize)> = (0..=up).map(|g| (false, g)).collect();
        if with_sines {
            channels.extend((1..up).map(|g| (true, g)));
        }
        Ok(Self { window, folded, channels })
    }

    /// Channel weights whose sum is the input delayed by `lag`.
    fn lag_coefficients(&self, lag: usize) -> Vec<f64> {
        let up = (self.window + 1) as f64;
        self.channels
            .iter()
            .map(|&(is_sin, g)| {
                let arg = PI * g as f64 * lag as f64 / up;
                self.folded[g] * if is_sin { arg.sin() } else { arg.cos() }
            })
            .collect()
    }

    /// Identity mixing; channel `b·C + c` carries filter c for feature b.
    fn conv_layer(&self, features: usize, window: usize) -> ConvLayer {
        let cn = self.channels.len();
        let mut layer = ConvLayer::zeros(features * cn, window);
        for b in 0..features {
            for (c, &(is_sin, g)) in self.channels.iter().enumerate() {
                let i = b * cn + c;
                if is_sin {
                    layer.c2[i] = 1.0;
                    layer.a2[i] = g as f64 / 2.0;
                } else {
                    layer.c1[i] = 1.0;
                    layer.a1[i] = g as f64 / 2.0;
                }
            }
        }
        layer
    }
}

fn lag_bank_layer(bank: LagBank, features: usize) -> ConvLayer {
    let cn = bank.channels_per_feature();
    let mut layer = ConvLayer::zeros(features * cn, bank.window);
    for f in 0..features {
        for c in 0..cn {
            let (c1, a1, c2, a2) = bank.channel_params(c);
            let i = f * cn + c;
            layer.c1[i] = c1;
            layer.a1[i] = a1;
            layer.c2[i] = c2;
            layer.a2[i] = a2;
        }
    }
    layer
}

/// Running record of the sizes used while assembling a network.
#[derive(Default)]
struct Tally {
    u: usize,
    l: usize,
    w: usize,
    s: usize,
    b: f64,
}

impl Tally {
    fn matrix(&mut self, m: &Matrix) {
        self.vector(m.as_slice());
    }

    fn vector(&mut self, v: &[f64]) {
        self.b = v.iter().fold(self.b, |acc, x| acc.max(x.abs()));
    }

    fn conv(&mut self, c: &ConvLayer) {
        self.u = self.u.max(c.window);
        self.matrix(&c.w_mix);
        for v in [&c.c1, &c.c2, &c.a1, &c.a2] {
            self.vector(v);
        }
    }

    fn fnn(&mut self, f: &FnnStack) {
        self.l = self.l.max(f.layers.len());
        let mut nonzero = 0;
        for layer in &f.layers {
            self.w = self.w.max(layer.a.rows()).max(layer.a.cols());
            nonzero += layer.a.as_slice().iter().filter(|x| **x != 0.0).count();
            nonzero += layer.b.iter().filter(|x| **x != 0.0).count();
            self.matrix(&layer.a);
            self.vector(&layer.b);
        }
        self.s = self.s.max(nonzero);
    }

    fn budget(&self, m: usize, d: usize) -> Result<ClassBudget> {
        ClassBudget::new(m, self.u, d, self.l.max(1), self.w.max(1), self.s.max(1), self.b.max(1.0))
    }
}
