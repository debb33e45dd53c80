use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::vocab::Vocab;
use crate::error::{Error, Result};
use crate::numerics::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Copy,
    AssocRecall,
    InductionHead,
    SelectiveCopy,
    MaxRegression,
}

impl TaskKind {
    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Copy => "copy",
            TaskKind::AssocRecall => "assoc_recall",
            TaskKind::InductionHead => "induction_head",
            TaskKind::SelectiveCopy => "selective_copy",
            TaskKind::MaxRegression => "max_regression",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(name.to_string()))
            .map_err(|_| Error::Config(format!("unknown task kind {name:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Target {
    Ids(Vec<usize>),
    Value(f64),
}

impl Target {
    pub fn ids(&self) -> Option<&[usize]> {
        match self {
            Target::Ids(v) => Some(v),
            Target::Value(_) => None,
        }
    }

    pub fn value(&self) -> Option<f64> {
        match self {
            Target::Value(v) => Some(*v),
            Target::Ids(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSample {
    pub kind: TaskKind,
    #[serde(rename = "V")]
    pub v: usize,
    pub input: Vec<usize>,
    pub target: Target,
    pub seed: u64,
    pub stream: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
}

impl TaskSample {
    fn new(kind: TaskKind, v: usize, input: Vec<usize>, target: Target, rng: &RngStream) -> Self {
        Self { kind, v, input, target, seed: rng.seed(), stream: rng.stream(), alpha: None }
    }

    pub fn target_ids(&self) -> &[usize] {
        self.target.ids().unwrap_or(&[])
    }
}

fn pick(rng: &mut RngStream, ids: &[usize]) -> usize {
    ids[rng.below(ids.len())]
}

fn require(id: Option<usize>, name: &str) -> Result<usize> {
    id.ok_or_else(|| Error::Config(format!("vocabulary has no {name} token")))
}

/// `BOS x₁ … x_V COPY` with body words uniform over the regular words.
pub fn gen_copy(v: usize, vocab: &Vocab, rng: &mut RngStream) -> Result<TaskSample> {
    let bos = require(vocab.specials.bos, "BOS")?;
    let copy = require(vocab.specials.copy, "COPY")?;
    let regular = vocab.regular_ids();
    if regular.is_empty() {
        return Err(Error::Config("copy needs at least one regular word".into()));
    }
    let body: Vec<usize> = (0..v).map(|_| pick(rng, &regular)).collect();
    let mut input = Vec::with_capacity(v + 2);
    input.push(bos);
    input.extend(&body);
    input.push(copy);
    Ok(TaskSample::new(TaskKind::Copy, v, input, Target::Ids(body), rng))
}

/// `k₁ v₁ … k_V v_V q` with distinct keys; the target is the value paired
/// with `q`.
pub fn gen_assoc_recall(v: usize, vocab: &Vocab, rng: &mut RngStream) -> Result<TaskSample> {
    if v == 0 || vocab.key_ids.len() < v {
        return Err(Error::InvalidArgument(format!(
            "need 1 ≤ V ≤ {} distinct keys, got V = {v}",
            vocab.key_ids.len()
        )));
    }
    if vocab.value_ids.is_empty() {
        return Err(Error::Config("vocabulary has no value words".into()));
    }
    let keys: Vec<usize> = rng.sample_distinct(vocab.key_ids.len(), v).into_iter().map(|i| vocab.key_ids[i]).collect();
    let values: Vec<usize> = (0..v).map(|_| pick(rng, &vocab.value_ids)).collect();
    let q = rng.below(v);
    let mut input = Vec::with_capacity(2 * v + 1);
    for (k, val) in keys.iter().zip(&values) {
        input.push(*k);
        input.push(*val);
    }
    input.push(keys[q]);
    Ok(TaskSample::new(TaskKind::AssocRecall, v, input, Target::Ids(vec![values[q]]), rng))
}

/// `x₁ … x_V k` where `k` occurs exactly once among `x₁ … x_{V−1}`; the
/// target is the word right after that occurrence.
pub fn gen_induction_head(v: usize, vocab: &Vocab, rng: &mut RngStream) -> Result<TaskSample> {
    if v < 2 {
        return Err(Error::InvalidArgument(format!("induction head needs V ≥ 2, got {v}")));
    }
    let words = vocab.regular_ids();
    if words.len() < 2 && v > 2 {
        return Err(Error::Config("induction head needs at least two regular words".into()));
    }
    let k = pick(rng, &words);
    let others: Vec<usize> = words.iter().copied().filter(|&w| w != k).collect();
    let j = rng.below(v - 1);
    let mut x: Vec<usize> = (0..v - 1).map(|i| if i == j { k } else { pick(rng, &others) }).collect();
    x.push(pick(rng, &words));
    let target = x[j + 1];
    x.push(k);
    Ok(TaskSample::new(TaskKind::InductionHead, v, x, Target::Ids(vec![target]), rng))
}

/// `BOS s₁ … s_V COPY` where each `s_i` is `PAD` with probability `alpha`
/// and otherwise a uniform regular word; the target drops the pads.
pub fn gen_selective_copy(v: usize, vocab: &Vocab, alpha: f64, rng: &mut RngStream) -> Result<TaskSample> {
    if !(0.0..1.0).contains(&alpha) {
        return Err(Error::InvalidArgument(format!("alpha must lie in [0, 1), got {alpha}")));
    }
    let bos = require(vocab.specials.bos, "BOS")?;
    let copy = require(vocab.specials.copy, "COPY")?;
    let pad = require(vocab.specials.pad, "PAD")?;
    let regular = vocab.regular_ids();
    if regular.is_empty() {
        return Err(Error::Config("selective copy needs at least one regular word".into()));
    }
    let mut input = vec![bos];
    let mut target = Vec::new();
    for _ in 0..v {
        if rng.bernoulli(alpha) {
            input.push(pad);
        } else {
            let w = pick(rng, &regular);
            input.push(w);
            target.push(w);
        }
    }
    input.push(copy);
    let mut s = TaskSample::new(TaskKind::SelectiveCopy, v, input, Target::Ids(target), rng);
    s.alpha = Some(alpha);
    Ok(s)
}

/// Default regression nonlinearity `sin(πz)`.
pub fn default_nonlinearity(z: f64) -> f64 {
    (PI * z).sin()
}

/// `L` uniform words with target `f(max_i r_{w_i})`.
pub fn gen_max_regression(
    l: usize,
    vocab: &Vocab,
    value_map: &[f64],
    f: &dyn Fn(f64) -> f64,
    rng: &mut RngStream,
) -> Result<TaskSample> {
    if value_map.len() != vocab.len() {
        return Err(Error::Config(format!(
            "value map covers {} words, vocabulary has {}",
            value_map.len(),
            vocab.len()
        )));
    }
    if l == 0 {
        return Err(Error::InvalidArgument("sequence length must be positive".into()));
    }
    let words = vocab.regular_ids();
    let input: Vec<usize> = (0..l).map(|_| pick(rng, &words)).collect();
    let m = input.iter().map(|&w| value_map[w]).fold(f64::NEG_INFINITY, f64::max);
    Ok(TaskSample::new(TaskKind::MaxRegression, l, input, Target::Value(f(m)), rng))
}

/// Checks `input`/`target` against the grammar of `kind`.
pub fn validate_grammar(kind: TaskKind, sample: &TaskSample, vocab: &Vocab) -> bool {
    let x = &sample.input;
    if x.iter().any(|&w| w >= vocab.len()) {
        return false;
    }
    match kind {
        TaskKind::Copy | TaskKind::SelectiveCopy => {
            let (Some(bos), Some(copy)) = (vocab.specials.bos, vocab.specials.copy) else {
                return false;
            };
            let pad = vocab.specials.pad;
            let Some(t) = sample.target.ids() else { return false };
            if x.len() < 2 || x[0] != bos || x[x.len() - 1] != copy {
                return false;
            }
            let body = &x[1..x.len() - 1];
            let pads_ok = kind == TaskKind::SelectiveCopy && pad.is_some();
            if body.iter().any(|&w| w == bos || w == copy || (Some(w) == pad && !pads_ok)) {
                return false;
            }
            let kept: Vec<usize> = body.iter().copied().filter(|&w| Some(w) != pad).collect();
            kept == t
        }
        TaskKind::AssocRecall => {
            let Some(t) = sample.target.ids() else { return false };
            if x.len() < 3 || x.len() % 2 == 0 || t.len() != 1 {
                return false;
            }
            let n = x.len() / 2;
            let keys: Vec<usize> = (0..n).map(|i| x[2 * i]).collect();
            let values: Vec<usize> = (0..n).map(|i| x[2 * i + 1]).collect();
            if keys.iter().any(|k| !vocab.key_ids.contains(k)) || values.iter().any(|v| !vocab.value_ids.contains(v)) {
                return false;
            }
            for i in 0..n {
                if keys[i + 1..].contains(&keys[i]) {
                    return false;
                }
            }
            match keys.iter().position(|&k| k == x[x.len() - 1]) {
                Some(i) => values[i] == t[0],
                None => false,
            }
        }
        TaskKind::InductionHead => {
            let Some(t) = sample.target.ids() else { return false };
            if x.len() < 3 || t.len() != 1 || x.iter().any(|&w| vocab.is_special(w)) {
                return false;
            }
            let v = x.len() - 1;
            let k = x[v];
            let hits: Vec<usize> = (0..v - 1).filter(|&i| x[i] == k).collect();
            hits.len() == 1 && x[hits[0] + 1] == t[0]
        }
        TaskKind::MaxRegression => {
            sample.target.value().is_some() && !x.is_empty() && x.iter().all(|&w| !vocab.is_special(w))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn copy_zero_length() {
        let vocab = Vocab::copy_task(4);
        let s = gen_copy(0, &vocab, &mut RngStream::new(0, 0)).unwrap();
        assert_eq!(s.input, vec![0, 1]);
        assert!(s.target_ids().is_empty());
    }

    #[test]
    fn seeded_replay_is_identical() {
        let vocab = Vocab::copy_task(10);
        let a = gen_copy(20, &vocab, &mut RngStream::new(5, 3)).unwrap();
        let b = gen_copy(20, &vocab, &mut RngStream::new(5, 3)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn copy_requires_specials() {
        assert!(gen_copy(3, &Vocab::plain(4), &mut RngStream::new(0, 0)).is_err());
    }

    #[test]
    fn recall_single_pair() {
        let vocab = Vocab::recall_task(4, 4);
        let s = gen_assoc_recall(1, &vocab, &mut RngStream::new(1, 0)).unwrap();
        assert_eq!(s.input.len(), 3);
        assert_eq!(s.input[0], s.input[2]);
        assert_eq!(s.target_ids(), &[s.input[1]]);
        assert!(gen_assoc_recall(5, &vocab, &mut RngStream::new(1, 0)).is_err());
    }

    #[test]
    fn worked_recall_instance_is_valid() {
        let vocab = Vocab::recall_from(&["a", "b", "c", "d"], &["1", "2", "4", "5"]).unwrap();
        let input = vocab.parse("c 2 a 5 d 1 b 4 a").unwrap();
        let s = TaskSample {
            kind: TaskKind::AssocRecall,
            v: 4,
            input,
            target: Target::Ids(vec![vocab.id("5").unwrap()]),
            seed: 0,
            stream: 0,
            alpha: None,
        };
        assert!(validate_grammar(TaskKind::AssocRecall, &s, &vocab));
    }

    #[test]
    fn induction_worked_and_minimal() {
        let vocab = Vocab::from_words(&["a", "b", "c", "d", "e"]).unwrap();
        let s = TaskSample {
            kind: TaskKind::InductionHead,
            v: 5,
            input: vocab.parse("a c b d e c").unwrap(),
            target: Target::Ids(vec![vocab.id("b").unwrap()]),
            seed: 0,
            stream: 0,
            alpha: None,
        };
        assert!(validate_grammar(TaskKind::InductionHead, &s, &vocab));
        let s = gen_induction_head(2, &vocab, &mut RngStream::new(2, 0)).unwrap();
        assert_eq!(s.input[0], s.input[2]);
        assert_eq!(s.target_ids(), &[s.input[1]]);
    }

    #[test]
    fn selective_copy_worked_instance() {
        let vocab = Vocab::from_words(&["BOS", "COPY", "PAD", "a", "b", "c"]).unwrap();
        let s = TaskSample {
            kind: TaskKind::SelectiveCopy,
            v: 7,
            input: vocab.parse("BOS a PAD PAD b PAD c PAD COPY").unwrap(),
            target: Target::Ids(vocab.parse("a b c").unwrap()),
            seed: 0,
            stream: 0,
            alpha: Some(0.5),
        };
        assert!(validate_grammar(TaskKind::SelectiveCopy, &s, &vocab));
        assert!(!validate_grammar(TaskKind::Copy, &s, &vocab));
    }

    #[test]
    fn alpha_zero_has_no_pads() {
        let vocab = Vocab::selective_copy_task(5);
        let mut rng = RngStream::new(3, 0);
        for _ in 0..100 {
            let s = gen_selective_copy(12, &vocab, 0.0, &mut rng).unwrap();
            assert_eq!(s.target_ids().len(), 12);
        }
    }

    #[test]
    fn max_regression_cases() {
        let vocab = Vocab::plain(6);
        let map = vec![0.5; 6];
        let mut rng = RngStream::new(4, 0);
        let s = gen_max_regression(9, &vocab, &map, &default_nonlinearity, &mut rng).unwrap();
        assert_eq!(s.target, Target::Value((PI * 0.5).sin()));
        let map: Vec<f64> = (0..6).map(|i| i as f64 / 5.0).collect();
        let s = gen_max_regression(1, &vocab, &map, &default_nonlinearity, &mut rng).unwrap();
        assert_eq!(s.target.value().unwrap(), default_nonlinearity(map[s.input[0]]));
    }

    #[test]
    fn kind_names_round_trip() {
        for k in [TaskKind::Copy, TaskKind::AssocRecall, TaskKind::InductionHead, TaskKind::SelectiveCopy, TaskKind::MaxRegression] {
            assert_eq!(TaskKind::parse(k.name()).unwrap(), k);
        }
        assert!(TaskKind::parse("sorting").is_err());
    }
}
