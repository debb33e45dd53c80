//! Training runs and hidden-dimension sweeps over the synthetic tasks.

use std::io::{Read, Write};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::attention::AttentionBaseline;
use super::loss::{LossKind, LossTarget};
use super::optim::{OptimizerKind, OptimizerState};
use super::ssm_grad::{init_ssm, SsmInit};
use super::tape::{backward, Example, GradientTape, Trainable};
use crate::error::{Error, Result};
use crate::model::{decode_next_token, SsmNetwork};
use crate::numerics::{Matrix, RngStream, SequenceTensor};
use crate::tasks::{
    default_nonlinearity, gen_assoc_recall, gen_copy, gen_induction_head, gen_max_regression, gen_selective_copy,
    TaskKind, TaskSample, Target, Vocab,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// One convolution block followed by a token-wise map.
    Ssm1,
    Ssm2,
    /// Two causal attention layers.
    Attention,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Ssm1 => "ssm1",
            ModelKind::Ssm2 => "ssm2",
            ModelKind::Attention => "attention",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "ssm1" => Ok(ModelKind::Ssm1),
            "ssm2" => Ok(ModelKind::Ssm2),
            "attention" => Ok(ModelKind::Attention),
            _ => Err(Error::Config(format!("unknown model kind {s:?}"))),
        }
    }
}

/// Task and vocabulary of a run. `vocab_size` counts every word, specials
/// included. Recall vocabularies are split evenly into keys and values.
/// Max regression uses sequences of `v` words with `r_w` evenly spaced in
/// (0, 1) by id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub kind: TaskKind,
    #[serde(rename = "V")]
    pub v: usize,
    pub vocab_size: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
}

impl TaskSpec {
    pub fn vocab(&self) -> Result<Vocab> {
        let n = self.vocab_size;
        let need = |k: usize| {
            if n < k {
                Err(Error::Config(format!("{} needs at least {k} words, got {n}", self.kind.name())))
            } else {
                Ok(())
            }
        };
        match self.kind {
            TaskKind::Copy => need(3).map(|_| Vocab::copy_task(n - 2)),
            TaskKind::SelectiveCopy => need(4).map(|_| Vocab::selective_copy_task(n - 3)),
            TaskKind::AssocRecall => need(2).map(|_| Vocab::recall_task(n / 2, n - n / 2)),
            TaskKind::InductionHead | TaskKind::MaxRegression => need(1).map(|_| Vocab::plain(n)),
        }
    }

    pub fn value_map(&self) -> Vec<f64> {
        (0..self.vocab_size).map(|w| (w as f64 + 0.5) / self.vocab_size as f64).collect()
    }

    pub fn generate(&self, vocab: &Vocab, rng: &mut RngStream) -> Result<TaskSample> {
        match self.kind {
            TaskKind::Copy => gen_copy(self.v, vocab, rng),
            TaskKind::AssocRecall => gen_assoc_recall(self.v, vocab, rng),
            TaskKind::InductionHead => gen_induction_head(self.v, vocab, rng),
            TaskKind::SelectiveCopy => gen_selective_copy(self.v, vocab, self.alpha.unwrap_or(0.3), rng),
            TaskKind::MaxRegression => gen_max_regression(self.v, vocab, &self.value_map(), &default_nonlinearity, rng),
        }
    }

    /// Longest teacher-forced sequence.
    pub fn max_len(&self) -> usize {
        match self.kind {
            TaskKind::Copy | TaskKind::SelectiveCopy => 2 * self.v + 1,
            TaskKind::AssocRecall => 2 * self.v + 1,
            TaskKind::InductionHead => self.v + 1,
            TaskKind::MaxRegression => self.v,
        }
    }

    pub fn is_regression(&self) -> bool {
        self.kind == TaskKind::MaxRegression
    }

    pub fn loss_kind(&self) -> LossKind {
        if self.is_regression() {
            LossKind::Mse
        } else {
            LossKind::CrossEntropy
        }
    }
}

/// Teacher-forced example: the prompt followed by all but the last target
/// word, supervised at every position that predicts a target word.
pub fn sample_to_example(sample: &TaskSample, n_words: usize) -> Result<Example> {
    match &sample.target {
        Target::Ids(t) => {
            let mut ids = sample.input.clone();
            ids.extend(t.iter().take(t.len().saturating_sub(1)));
            let start = sample.input.len() - 1;
            let targets = t.iter().enumerate().map(|(i, w)| (start + i, LossTarget::Class(*w))).collect();
            Ok(Example { input: SequenceTensor::one_hot(&ids, n_words)?, targets })
        }
        Target::Value(y) => Ok(Example {
            input: SequenceTensor::one_hot(&sample.input, n_words)?,
            targets: vec![(sample.input.len() - 1, LossTarget::Real(vec![*y]))],
        }),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub n_train: usize,
    pub n_eval: usize,
    pub optimizer: OptimizerKind,
    /// Hidden width of the token-wise maps as a multiple of the model width.
    pub fnn_factor: usize,
    /// Parameter-group name prefixes left untouched by the optimizer.
    pub frozen: Vec<String>,
    /// Stop after this many epochs without a new best metric.
    pub patience: Option<usize>,
    /// Stop once the held-out metric reaches this value (accuracy at or
    /// above, MSE at or below).
    pub stop_at: Option<f64>,
    /// Record wall-clock time in sweep rows; off by default so reruns
    /// write identical files.
    pub timing: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 32,
            n_train: 2000,
            n_eval: 200,
            optimizer: OptimizerKind::adam(3e-3),
            fnn_factor: 4,
            frozen: vec![],
            patience: None,
            stop_at: None,
            timing: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Model {
    Ssm(SsmNetwork),
    Attention(AttentionBaseline),
}

impl Model {
    fn inner(&self) -> &dyn Trainable {
        match self {
            Model::Ssm(n) => n,
            Model::Attention(a) => a,
        }
    }
}

impl Trainable for Model {
    fn param_groups(&self) -> Vec<(String, &[f64])> {
        self.inner().param_groups()
    }

    fn param_groups_mut(&mut self) -> Vec<(String, &mut [f64])> {
        match self {
            Model::Ssm(n) => n.param_groups_mut(),
            Model::Attention(a) => a.param_groups_mut(),
        }
    }

    fn outputs(&self, input: &SequenceTensor) -> Result<Matrix> {
        self.inner().outputs(input)
    }

    fn backprop(
        &self,
        input: &SequenceTensor,
        output_grad: &mut dyn FnMut(&Matrix) -> Result<Matrix>,
        tape: &mut GradientTape,
    ) -> Result<()> {
        self.inner().backprop(input, output_grad, tape)
    }

    fn activation_pattern(&self, input: &SequenceTensor) -> Result<Vec<bool>> {
        self.inner().activation_pattern(input)
    }
}

/// Fresh model of the given kind sized for `task`.
pub fn build_model(kind: ModelKind, hidden: usize, task: &TaskSpec, cfg: &TrainConfig, rng: &mut RngStream) -> Result<Model> {
    let n_in = task.vocab()?.len();
    let n_out = if task.is_regression() { 1 } else { n_in };
    let t_max = task.max_len();
    let width = cfg.fnn_factor.max(1) * hidden;
    match kind {
        ModelKind::Ssm1 | ModelKind::Ssm2 => {
            let init = SsmInit {
                n_in,
                hidden,
                blocks: if kind == ModelKind::Ssm1 { 1 } else { 2 },
                fnn_width: width,
                window: t_max.saturating_sub(1),
                n_out: Some(n_out),
            };
            init_ssm(&init, rng).map(Model::Ssm)
        }
        ModelKind::Attention => AttentionBaseline::init(n_in, hidden, 2, width, t_max, n_out, rng).map(Model::Attention),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    /// Held-out exact-match accuracy, or MSE for regression.
    pub metric: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochMetrics>,
    pub higher_is_better: bool,
}

impl TrainHistory {
    pub fn final_metric(&self) -> f64 {
        self.epochs.last().map_or(f64::NAN, |e| e.metric)
    }

    pub fn best_metric(&self) -> f64 {
        let it = self.epochs.iter().map(|e| e.metric);
        if self.higher_is_better {
            it.fold(f64::NAN, f64::max)
        } else {
            it.fold(f64::NAN, f64::min)
        }
    }
}

fn make_set(task: &TaskSpec, vocab: &Vocab, n: usize, rng: &RngStream) -> Result<Vec<TaskSample>> {
    (0..n as u64).map(|i| task.generate(vocab, &mut rng.child(i))).collect()
}

/// Held-out metric: exact-match accuracy of free-running greedy generation,
/// or mean squared error of the last-position prediction.
pub fn evaluate<M: Trainable + ?Sized>(model: &M, vocab: &Vocab, samples: &[TaskSample]) -> Result<f64> {
    let n_words = vocab.len();
    let scores: Vec<Result<f64>> = samples
        .par_iter()
        .map(|s| match &s.target {
            Target::Ids(t) => {
                let mut seq = s.input.clone();
                for _ in 0..t.len() {
                    let out = model.outputs(&SequenceTensor::one_hot(&seq, n_words)?)?;
                    seq.push(decode_next_token(&out.column(out.cols() - 1)));
                }
                Ok(if &seq[s.input.len()..] == t.as_slice() { 1.0 } else { 0.0 })
            }
            Target::Value(y) => {
                let out = model.outputs(&SequenceTensor::one_hot(&s.input, n_words)?)?;
                let p = out[(0, out.cols() - 1)];
                Ok((p - y) * (p - y))
            }
        })
        .collect();
    let total: f64 = scores.into_iter().sum::<Result<f64>>()?;
    Ok(total / samples.len().max(1) as f64)
}

/// Trains `model` in place. Data and batch order come from named streams
/// of `seed`, so the history is a function of the inputs alone.
pub fn train_run<M: Trainable + ?Sized>(model: &mut M, task: &TaskSpec, cfg: &TrainConfig, seed: u64) -> Result<TrainHistory> {
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let vocab = task.vocab()?;
    let train = make_set(task, &vocab, cfg.n_train, &RngStream::named(seed, "train"))?;
    let eval = make_set(task, &vocab, cfg.n_eval, &RngStream::named(seed, "eval"))?;
    let examples: Vec<Example> = train.iter().map(|s| sample_to_example(s, vocab.len())).collect::<Result<_>>()?;
    let loss = task.loss_kind();
    let higher = !task.is_regression();
    let mut opt = OptimizerState::new(cfg.optimizer, model, &cfg.frozen);
    let order_rng = RngStream::named(seed, "order");
    let mut history = TrainHistory { epochs: vec![], higher_is_better: higher };
    let mut best = f64::NAN;
    let mut since_best = 0;
    let mut step = 0;
    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..examples.len()).collect();
        order_rng.child(epoch as u64).shuffle(&mut order);
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<Example> = chunk.iter().map(|&i| examples[i].clone()).collect();
            step += 1;
            let (l, tape) = match backward(model, &batch, loss) {
                Ok(r) => r,
                Err(Error::NonFiniteGradient(_)) => return Err(Error::Diverged { step }),
                Err(e) => return Err(e),
            };
            if !l.is_finite() {
                return Err(Error::Diverged { step });
            }
            opt.apply(model, &tape);
            total += l;
            batches += 1;
        }
        let metric = evaluate(model, &vocab, &eval)?;
        history.epochs.push(EpochMetrics { epoch, train_loss: total / batches.max(1) as f64, metric });
        let improved = best.is_nan() || if higher { metric > best } else { metric < best };
        if improved {
            best = metric;
            since_best = 0;
        } else {
            since_best += 1;
        }
        if cfg.patience.is_some_and(|p| since_best >= p) {
            break;
        }
        if let Some(goal) = cfg.stop_at {
            if (higher && metric >= goal) || (!higher && metric <= goal) {
                break;
            }
        }
    }
    Ok(history)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepGrid {
    pub models: Vec<ModelKind>,
    pub hidden: Vec<usize>,
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub model: String,
    pub hidden: usize,
    pub seed: u64,
    pub task: String,
    #[serde(rename = "V")]
    pub v: usize,
    pub vocab: usize,
    pub final_metric: f64,
    pub best_metric: f64,
    pub epochs: usize,
    pub wall_ms: u64,
}

pub const SWEEP_HEADER: [&str; 10] =
    ["model", "hidden", "seed", "task", "V", "vocab", "final_metric", "best_metric", "epochs", "wall_ms"];

/// One sweep cell: a model initialized from `seed` and trained with it.
pub fn train_cell(kind: ModelKind, hidden: usize, seed: u64, task: &TaskSpec, cfg: &TrainConfig) -> Result<(Model, TrainHistory)> {
    let mut model = build_model(kind, hidden, task, cfg, &mut RngStream::named(seed, &format!("init/{}", kind.name())))?;
    let history = train_run(&mut model, task, cfg, seed)?;
    Ok((model, history))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    /// One row per cell in grid order (models, then hidden sizes, then
    /// seeds). Failed cells carry NaN metrics.
    pub rows: Vec<SweepRow>,
    /// `(row index, error)` for failed cells.
    pub failures: Vec<(usize, String)>,
}

pub fn run_sweep(grid: &SweepGrid, task: &TaskSpec, cfg: &TrainConfig) -> SweepResult {
    run_sweep_with_models(grid, task, cfg).0
}

/// [`run_sweep`] that also hands back each trained model, `None` for
/// failed cells.
pub fn run_sweep_with_models(grid: &SweepGrid, task: &TaskSpec, cfg: &TrainConfig) -> (SweepResult, Vec<Option<Model>>) {
    let mut cells = Vec::new();
    for &m in &grid.models {
        for &h in &grid.hidden {
            for &s in &grid.seeds {
                cells.push((m, h, s));
            }
        }
    }
    let outcomes: Vec<(SweepRow, Option<String>, Option<Model>)> = cells
        .par_iter()
        .map(|&(m, h, s)| {
            let start = Instant::now();
            let res = train_cell(m, h, s, task, cfg);
            let wall_ms = if cfg.timing { start.elapsed().as_millis() as u64 } else { 0 };
            let mut row = SweepRow {
                model: m.name().into(),
                hidden: h,
                seed: s,
                task: task.kind.name().into(),
                v: task.v,
                vocab: task.vocab_size,
                final_metric: f64::NAN,
                best_metric: f64::NAN,
                epochs: 0,
                wall_ms,
            };
            match res {
                Ok((model, hist)) => {
                    row.final_metric = hist.final_metric();
                    row.best_metric = hist.best_metric();
                    row.epochs = hist.epochs.len();
                    (row, None, Some(model))
                }
                Err(e) => (row, Some(e.to_string()), None),
            }
        })
        .collect();
    let mut rows = Vec::with_capacity(outcomes.len());
    let mut failures = Vec::new();
    let mut models = Vec::with_capacity(outcomes.len());
    for (i, (row, err, model)) in outcomes.into_iter().enumerate() {
        if let Some(e) = err {
            failures.push((i, e));
        }
        rows.push(row);
        models.push(model);
    }
    (SweepResult { rows, failures }, models)
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_sweep_csv<R: Read>(input: R) -> Result<Vec<SweepRow>> {
    let mut r = csv::Reader::from_reader(input);
    let header: Vec<String> = r.headers().map_err(csv_err)?.iter().map(String::from).collect();
    if header != SWEEP_HEADER {
        return Err(Error::Config(format!("unexpected sweep header {header:?}")));
    }
    r.deserialize().map(|row| row.map_err(csv_err)).collect()
}

fn csv_err(e: csv::Error) -> Error {
    Error::Config(format!("csv: {e}"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_task() -> TaskSpec {
        TaskSpec { kind: TaskKind::AssocRecall, v: 2, vocab_size: 6, alpha: None }
    }

    fn tiny_cfg() -> TrainConfig {
        TrainConfig { epochs: 2, batch_size: 8, n_train: 32, n_eval: 16, ..TrainConfig::default() }
    }

    #[test]
    fn zero_learning_rate_leaves_weights() {
        let task = tiny_task();
        let cfg = TrainConfig { optimizer: OptimizerKind::sgd(0.0), ..tiny_cfg() };
        let mut model = build_model(ModelKind::Ssm2, 4, &task, &cfg, &mut RngStream::new(1, 0)).unwrap();
        let before = model.clone();
        let hist = train_run(&mut model, &task, &cfg, 5).unwrap();
        assert_eq!(model, before);
        // Batches are visited in a different order, so only summation order
        // differs.
        assert!((hist.epochs[0].train_loss - hist.epochs[1].train_loss).abs() < 1e-12);
    }

    #[test]
    fn runs_are_deterministic() {
        let task = tiny_task();
        let cfg = tiny_cfg();
        let a = train_cell(ModelKind::Attention, 4, 9, &task, &cfg).unwrap();
        let b = train_cell(ModelKind::Attention, 4, 9, &task, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn one_cell_sweep_reproduces_the_run() {
        let task = tiny_task();
        let cfg = tiny_cfg();
        let grid = SweepGrid { models: vec![ModelKind::Ssm1], hidden: vec![3], seeds: vec![4, 4] };
        let res = run_sweep(&grid, &task, &cfg);
        assert!(res.failures.is_empty());
        let (_, hist) = train_cell(ModelKind::Ssm1, 3, 4, &task, &cfg).unwrap();
        assert_eq!(res.rows[0].final_metric, hist.final_metric());
        assert_eq!(res.rows[0], res.rows[1]);
    }

    #[test]
    fn linear_teacher_is_learned_monotonically() {
        // Convex case: a linear read of fixed random features.
        let d = 4;
        let mut rng = RngStream::new(6, 0);
        let teacher: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
        let batch: Vec<Example> = (0..16)
            .map(|_| {
                let x: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
                let y = x.iter().zip(&teacher).map(|(a, b)| a * b).sum();
                Example { input: SequenceTensor::from_fn(d, 1, |i, _| x[i]), targets: vec![(0, LossTarget::Real(vec![y]))] }
            })
            .collect();
        let mut conv = crate::model::ConvLayer::zeros(d, 0);
        conv.c1 = vec![1.0; d];
        let fnn = crate::model::FnnStack::new(vec![crate::model::Affine::new(Matrix::zeros(1, d), vec![0.0]).unwrap()]).unwrap();
        let mut net = SsmNetwork::new(
            crate::model::EmbeddingLayer::identity(d),
            vec![crate::model::Block { conv, map: crate::model::TokenMap::Fnn(fnn) }],
            None,
            None,
        )
        .unwrap();
        let frozen: Vec<String> = vec!["emb".into(), "block1.w_mix".into(), "block1.c".into(), "block1.a".into()];
        let mut opt = OptimizerState::new(OptimizerKind::sgd(0.05), &net, &frozen);
        let mut last = f64::INFINITY;
        for _ in 0..200 {
            let (l, tape) = backward(&net, &batch, LossKind::Mse).unwrap();
            assert!(l <= last + 1e-15);
            last = l;
            opt.apply(&mut net, &tape);
        }
        assert!(last < 1e-4, "{last}");
    }

    #[test]
    fn sweep_csv_round_trip() {
        let row = SweepRow {
            model: "ssm2".into(),
            hidden: 8,
            seed: 1,
            task: "assoc_recall".into(),
            v: 8,
            vocab: 16,
            final_metric: 0.75,
            best_metric: 0.8,
            epochs: 3,
            wall_ms: 0,
        };
        let mut buf = Vec::new();
        write_sweep_csv(&[row.clone()], &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("model,hidden,seed,task,V,vocab,final_metric,best_metric,epochs,wall_ms\n"));
        assert_eq!(read_sweep_csv(&buf[..]).unwrap(), vec![row]);
        assert!(read_sweep_csv("a,b\n1,2\n".as_bytes()).is_err());
    }

    #[test]
    fn teacher_forcing_layout() {
        let vocab = Vocab::copy_task(3);
        let s = gen_copy(2, &vocab, &mut RngStream::new(1, 0)).unwrap();
        let ex = sample_to_example(&s, vocab.len()).unwrap();
        // BOS x1 x2 COPY x1: predictions at COPY and x1.
        assert_eq!(ex.input.t(), 5);
        assert_eq!(ex.targets.iter().map(|t| t.0).collect::<Vec<_>>(), vec![3, 4]);
    }
}
