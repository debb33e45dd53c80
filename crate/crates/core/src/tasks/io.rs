use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use super::generators::TaskSample;
use crate::error::{Error, Result};

/// One JSON object per line, newline terminated.
pub fn samples_to_jsonl(samples: &[TaskSample]) -> Result<String> {
    let mut out = String::new();
    for s in samples {
        out.push_str(&serde_json::to_string(s)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn write_jsonl(path: &Path, samples: &[TaskSample]) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(samples_to_jsonl(samples)?.as_bytes())?;
    Ok(())
}

pub fn read_jsonl(path: &Path) -> Result<Vec<TaskSample>> {
    let f = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in f.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let s = serde_json::from_str(&line).map_err(|e| Error::Config(format!("line {}: {e}", i + 1)))?;
        out.push(s);
    }
    Ok(out)
}
