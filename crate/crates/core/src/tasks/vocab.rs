use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Specials {
    #[serde(default)]
    pub bos: Option<usize>,
    #[serde(default)]
    pub copy: Option<usize>,
    #[serde(default)]
    pub pad: Option<usize>,
}

/// Word list with dense ids. Recall tasks additionally split the regular
/// words into disjoint key and value sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Vocab {
    pub words: Vec<String>,
    #[serde(default)]
    pub specials: Specials,
    #[serde(default)]
    pub key_ids: Vec<usize>,
    #[serde(default)]
    pub value_ids: Vec<usize>,
}

impl Vocab {
    pub fn new(words: Vec<String>, specials: Specials, key_ids: Vec<usize>, value_ids: Vec<usize>) -> Result<Self> {
        let v = Self { words, specials, key_ids, value_ids };
        v.validate()?;
        Ok(v)
    }

    /// Words named `BOS`, `COPY` and `PAD` become the specials.
    pub fn from_words<S: AsRef<str>>(words: &[S]) -> Result<Self> {
        let words: Vec<String> = words.iter().map(|w| w.as_ref().to_string()).collect();
        let find = |name: &str| words.iter().position(|w| w == name);
        let specials = Specials { bos: find("BOS"), copy: find("COPY"), pad: find("PAD") };
        Self::new(words, specials, vec![], vec![])
    }

    /// `BOS`, `COPY` and `n` regular words `w0, w1, …`.
    pub fn copy_task(n: usize) -> Self {
        let mut words = vec!["BOS".to_string(), "COPY".to_string()];
        words.extend((0..n).map(|i| format!("w{i}")));
        Self::from_words(&words).expect("generated vocabulary is valid")
    }

    /// `BOS`, `COPY`, `PAD` and `n` regular words.
    pub fn selective_copy_task(n: usize) -> Self {
        let mut words = vec!["BOS".to_string(), "COPY".to_string(), "PAD".to_string()];
        words.extend((0..n).map(|i| format!("w{i}")));
        Self::from_words(&words).expect("generated vocabulary is valid")
    }

    /// `n_keys` key words `k0…` followed by `n_values` value words `v0…`.
    pub fn recall_task(n_keys: usize, n_values: usize) -> Self {
        let mut words: Vec<String> = (0..n_keys).map(|i| format!("k{i}")).collect();
        words.extend((0..n_values).map(|i| format!("v{i}")));
        Self::new(words, Specials::default(), (0..n_keys).collect(), (n_keys..n_keys + n_values).collect())
            .expect("generated vocabulary is valid")
    }

    pub fn recall_from<S: AsRef<str>>(keys: &[S], values: &[S]) -> Result<Self> {
        let mut words: Vec<String> = keys.iter().map(|w| w.as_ref().to_string()).collect();
        words.extend(values.iter().map(|w| w.as_ref().to_string()));
        let nk = keys.len();
        Self::new(words, Specials::default(), (0..nk).collect(), (nk..nk + values.len()).collect())
    }

    /// `n` plain words with no specials.
    pub fn plain(n: usize) -> Self {
        Self::new((0..n).map(|i| format!("w{i}")).collect(), Specials::default(), vec![], vec![])
            .expect("generated vocabulary is valid")
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.words.len();
        let mut seen = HashMap::new();
        for (i, w) in self.words.iter().enumerate() {
            if seen.insert(w.as_str(), i).is_some() {
                return Err(Error::Config(format!("duplicate word {w:?}")));
            }
        }
        let sp: Vec<usize> = [self.specials.bos, self.specials.copy, self.specials.pad].into_iter().flatten().collect();
        for (i, a) in sp.iter().enumerate() {
            if *a >= n {
                return Err(Error::Config(format!("special id {a} out of range")));
            }
            if sp[i + 1..].contains(a) {
                return Err(Error::Config("special tokens must be distinct".into()));
            }
        }
        for id in self.key_ids.iter().chain(&self.value_ids) {
            if *id >= n {
                return Err(Error::Config(format!("id {id} out of range")));
            }
            if sp.contains(id) {
                return Err(Error::Config(format!("id {id} is both special and a key or value")));
            }
        }
        if self.key_ids.iter().any(|k| self.value_ids.contains(k)) {
            return Err(Error::Config("key and value sets must be disjoint".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn id(&self, word: &str) -> Option<usize> {
        self.words.iter().position(|w| w == word)
    }

    pub fn word(&self, id: usize) -> &str {
        &self.words[id]
    }

    pub fn is_special(&self, id: usize) -> bool {
        Some(id) == self.specials.bos || Some(id) == self.specials.copy || Some(id) == self.specials.pad
    }

    /// Ids of every non-special word, ascending.
    pub fn regular_ids(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| !self.is_special(i)).collect()
    }

    /// Ids of every word other than `BOS` and `COPY`: the points that need
    /// an embedding code in the solvers.
    pub fn coded_ids(&self) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| Some(i) != self.specials.bos && Some(i) != self.specials.copy)
            .collect()
    }

    /// Parses whitespace-separated words.
    pub fn parse(&self, text: &str) -> Result<Vec<usize>> {
        text.split_whitespace()
            .map(|w| self.id(w).ok_or_else(|| Error::InvalidArgument(format!("unknown word {w:?}"))))
            .collect()
    }

    pub fn render(&self, ids: &[usize]) -> String {
        ids.iter().map(|&i| self.word(i)).collect::<Vec<_>>().join(" ")
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let v: Self = serde_json::from_str(text)?;
        v.validate()?;
        Ok(v)
    }
}
