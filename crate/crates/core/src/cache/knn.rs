//! Exact k-nearest-neighbour cache over stored hidden-layer outputs.
//!
//! Memory grows with every stored entry, unlike a learned cache whose size
//! is fixed by its architecture.

use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct KnnCache {
    dim: usize,
    entries: Vec<(Vec<f64>, usize)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct KnnAnswer {
    pub label: usize,
    /// Distance to the closest neighbour carrying `label`.
    pub distance: f64,
    pub votes: usize,
}

impl KnnCache {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            entries: Vec::new(),
        }
    }

    pub fn insert(&mut self, hidden: Vec<f64>, label: usize) -> Result<()> {
        if hidden.len() != self.dim {
            return Err(Error::invalid(
                "k-NN entry",
                format!("dimension {} != {}", hidden.len(), self.dim),
            ));
        }
        self.entries.push((hidden, label));
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Bytes needed to hold every stored vector.
    pub fn memory_bytes(&self, bytes_per_value: f64) -> f64 {
        (self.entries.len() * self.dim) as f64 * bytes_per_value
    }

    /// Majority label among the `k` nearest entries (Euclidean). Vote ties go
    /// to the label whose nearest member is closest, then to the lower label.
    pub fn lookup(&self, query: &[f64], k: usize) -> Result<KnnAnswer> {
        if self.entries.is_empty() {
            return Err(Error::Empty("k-NN store"));
        }
        if k == 0 || k > self.entries.len() {
            return Err(Error::invalid("k", format!("{k} for {} entries", self.entries.len())));
        }
        if query.len() != self.dim {
            return Err(Error::invalid("k-NN query", format!("dimension {} != {}", query.len(), self.dim)));
        }
        let mut dists: Vec<(f64, usize, usize)> = self
            .entries
            .iter()
            .enumerate()
            .map(|(idx, (e, label))| {
                let d = e.iter().zip(query).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                (d, idx, *label)
            })
            .collect();
        dists.select_nth_unstable_by(k - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut nearest = dists[..k].to_vec();
        nearest.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

        let mut tally: Vec<(usize, usize, f64)> = Vec::new();
        for &(d, _, label) in &nearest {
            match tally.iter_mut().find(|t| t.0 == label) {
                Some(t) => t.1 += 1,
                None => tally.push((label, 1, d)),
            }
        }
        let best = tally
            .into_iter()
            .max_by(|a, b| {
                a.1.cmp(&b.1)
                    .then(b.2.total_cmp(&a.2))
                    .then(b.0.cmp(&a.0))
            })
            .unwrap();
        Ok(KnnAnswer {
            label: best.0,
            distance: best.2,
            votes: best.1,
        })
    }
}
