//! `run`: dataset generation and training sweeps driven by one JSON file.

use std::fs;
use std::path::PathBuf;

use anyhow::Context;
use serde::Deserialize;
use ssmsel::tasks::samples_to_jsonl;
use ssmsel::training::{run_sweep_with_models, write_sweep_csv, ModelKind, SweepGrid, TaskSpec, TrainConfig};
use ssmsel::RngStream;

use crate::{read_json, CmdResult, Failure};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub dataset: Option<DatasetConfig>,
    #[serde(default)]
    pub sweep: Option<SweepConfig>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub task: TaskSpec,
    pub n: usize,
    #[serde(default = "default_dataset_file")]
    pub file: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub task: TaskSpec,
    pub models: Vec<ModelKind>,
    pub hidden: Vec<usize>,
    /// Explicit seeds; otherwise `n_seeds` consecutive seeds from the root.
    #[serde(default)]
    pub seeds: Option<Vec<u64>>,
    #[serde(default = "default_n_seeds")]
    pub n_seeds: u64,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub checkpoints: bool,
    #[serde(default = "default_sweep_file")]
    pub file: String,
}

fn default_dataset_file() -> String {
    "dataset.jsonl".into()
}

fn default_sweep_file() -> String {
    "sweep.csv".into()
}

fn default_n_seeds() -> u64 {
    5
}

pub fn run(config: PathBuf, seed: Option<u64>, out: Option<PathBuf>) -> CmdResult {
    let cfg: RunConfig = read_json(&config)?;
    let seed = seed.unwrap_or(cfg.seed);
    let out = out.or(cfg.out).unwrap_or_else(|| PathBuf::from("out"));
    if cfg.dataset.is_none() && cfg.sweep.is_none() {
        return Err(Failure::Config(anyhow::anyhow!("config has neither a dataset nor a sweep section")));
    }
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;

    if let Some(ds) = &cfg.dataset {
        let vocab = ds.task.vocab()?;
        let root = RngStream::named(seed, "dataset");
        let samples = (0..ds.n as u64)
            .map(|i| ds.task.generate(&vocab, &mut root.child(i)))
            .collect::<ssmsel::Result<Vec<_>>>()?;
        let path = out.join(&ds.file);
        fs::write(&path, samples_to_jsonl(&samples)?).with_context(|| format!("writing {}", path.display()))?;
        fs::write(out.join("vocab.json"), vocab.to_json()?)?;
        eprintln!("wrote {} samples to {}", samples.len(), path.display());
    }

    if let Some(sw) = &cfg.sweep {
        if sw.models.is_empty() || sw.hidden.is_empty() {
            return Err(Failure::Config(anyhow::anyhow!("sweep needs at least one model and one hidden size")));
        }
        sw.task.vocab()?;
        let seeds = sw.seeds.clone().unwrap_or_else(|| (0..sw.n_seeds).map(|i| seed + i).collect());
        let grid = SweepGrid { models: sw.models.clone(), hidden: sw.hidden.clone(), seeds };
        let (result, models) = run_sweep_with_models(&grid, &sw.task, &sw.train);
        let path = out.join(&sw.file);
        let file = fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        write_sweep_csv(&result.rows, file)?;
        eprintln!("wrote {} rows to {}", result.rows.len(), path.display());
        for (i, e) in &result.failures {
            let r = &result.rows[*i];
            eprintln!("warning: {} hidden={} seed={} failed: {e}", r.model, r.hidden, r.seed);
        }
        if sw.checkpoints {
            let dir = out.join("checkpoints");
            fs::create_dir_all(&dir)?;
            for (row, model) in result.rows.iter().zip(&models) {
                if let Some(m) = model {
                    let p = dir.join(format!("{}_h{}_s{}.json", row.model, row.hidden, row.seed));
                    fs::write(&p, serde_json::to_string(m).context("serializing a checkpoint")?)
                        .with_context(|| format!("writing {}", p.display()))?;
                }
            }
        }
    }
    Ok(())
}
