use std::collections::VecDeque;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SimRng;

/// One environment step. `done` marks true termination only; hitting the
/// horizon is not terminal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub s: Vec<f64>,
    pub a: Vec<f64>,
    pub r: f64,
    pub s_next: Vec<f64>,
    pub done: bool,
}

impl Transition {
    fn check(&self) -> Result<()> {
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        if !self.r.is_finite() || !finite(&self.s) || !finite(&self.a) || !finite(&self.s_next) {
            return Err(Error::Dataset("non-finite value in transition".into()));
        }
        if self.s.len() != self.s_next.len() {
            return Err(Error::Dataset(format!(
                "state dim {} but next-state dim {}",
                self.s.len(),
                self.s_next.len()
            )));
        }
        Ok(())
    }
}

/// FIFO ring buffer of transitions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetBuffer {
    capacity: usize,
    items: VecDeque<Transition>,
    inserted: u64,
}

impl DatasetBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity: capacity.max(1),
            items: VecDeque::new(),
            inserted: 0,
        }
    }

    pub fn from_transitions(items: Vec<Transition>) -> Result<Self> {
        let mut buf = Self::new(items.len());
        for t in items {
            buf.push(t)?;
        }
        Ok(buf)
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Total insertions since creation, including evicted ones.
    pub fn inserted(&self) -> u64 {
        self.inserted
    }

    pub fn push(&mut self, t: Transition) -> Result<()> {
        t.check()?;
        if let Some(first) = self.items.front() {
            if first.s.len() != t.s.len() || first.a.len() != t.a.len() {
                return Err(Error::Dataset(format!(
                    "transition dims ({}, {}) differ from buffer dims ({}, {})",
                    t.s.len(),
                    t.a.len(),
                    first.s.len(),
                    first.a.len()
                )));
            }
        }
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
        self.inserted += 1;
        Ok(())
    }

    pub fn extend(&mut self, ts: impl IntoIterator<Item = Transition>) -> Result<()> {
        for t in ts {
            self.push(t)?;
        }
        Ok(())
    }

    pub fn get(&self, i: usize) -> &Transition {
        &self.items[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.items.iter()
    }

    pub fn to_vec(&self) -> Vec<Transition> {
        self.items.iter().cloned().collect()
    }

    pub fn state_dim(&self) -> Option<usize> {
        self.items.front().map(|t| t.s.len())
    }

    pub fn action_dim(&self) -> Option<usize> {
        self.items.front().map(|t| t.a.len())
    }

    /// Uniform indices with replacement.
    pub fn sample_indices(&self, n: usize, rng: &mut SimRng) -> Vec<usize> {
        if self.items.is_empty() {
            return Vec::new();
        }
        (0..n).map(|_| rng.random_range(0..self.items.len())).collect()
    }

    /// Writes one JSON record per line.
    pub fn save_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        for t in &self.items {
            serde_json::to_writer(&mut w, t)?;
            w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Reads a JSON-lines file; the capacity equals the number of records.
    pub fn load_jsonl(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut items = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let t: Transition = serde_json::from_str(&line)
                .map_err(|e| Error::Dataset(format!("{}:{}: {e}", path.display(), i + 1)))?;
            items.push(t);
        }
        if items.is_empty() {
            return Err(Error::Dataset(format!("{} holds no transitions", path.display())));
        }
        Self::from_transitions(items)
    }
}
