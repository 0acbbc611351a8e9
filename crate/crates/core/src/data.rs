//! Synthetic Gaussian-blob datasets, CSV loading, and per-worker shards.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::model::Example;

/// Row-major labelled examples.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: usize,
    xs: Vec<f64>,
    ys: Vec<usize>,
}

impl Dataset {
    pub fn new(features: usize, xs: Vec<f64>, ys: Vec<usize>) -> Result<Self> {
        if features == 0 || xs.len() != features * ys.len() {
            return Err(Error::Config("dataset shape mismatch".into()));
        }
        Ok(Dataset { features, xs, ys })
    }

    /// Class centres drawn from `N(0, separation^2)`, points from `N(centre, 1)`.
    /// Labels cycle through the classes before the whole set is shuffled.
    pub fn blobs(samples: usize, features: usize, classes: usize, separation: f64, seed: u64) -> Result<Self> {
        if samples == 0 || classes < 2 {
            return Err(Error::Config("blobs need samples >= 1 and classes >= 2".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_b10b);
        let centres: Vec<f64> = (0..classes * features)
            .map(|_| separation * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let mut order: Vec<usize> = (0..samples).collect();
        order.shuffle(&mut rng);
        let mut xs = vec![0.0; samples * features];
        let mut ys = vec![0; samples];
        for (slot, &i) in order.iter().enumerate() {
            let y = i % classes;
            ys[slot] = y;
            for f in 0..features {
                let noise: f64 = StandardNormal.sample(&mut rng);
                xs[slot * features + f] = centres[y * features + f] + noise;
            }
        }
        Dataset::new(features, xs, ys)
    }

    /// Reads `feature...,label` rows. A header row is skipped if its last
    /// field is not an integer.
    pub fn from_csv(path: &Path) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .comment(Some(b'#'))
            .from_path(path)
            .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        let mut features = None;
        let (mut xs, mut ys) = (Vec::new(), Vec::new());
        for (line, rec) in reader.records().enumerate() {
            let rec = rec.map_err(|e| Error::Io(e.to_string()))?;
            if rec.len() < 2 {
                return Err(Error::Config(format!("dataset row {} has fewer than 2 fields", line + 1)));
            }
            let label_field = rec[rec.len() - 1].trim();
            let label = match label_field.parse::<usize>() {
                Ok(l) => l,
                Err(_) if line == 0 => continue,
                Err(e) => return Err(Error::Config(format!("dataset row {}: label: {e}", line + 1))),
            };
            let width = rec.len() - 1;
            match features {
                None => features = Some(width),
                Some(w) if w != width => {
                    return Err(Error::Config(format!("dataset row {} has {width} features, expected {w}", line + 1)))
                }
                _ => {}
            }
            for f in rec.iter().take(width) {
                xs.push(f.trim().parse::<f64>().map_err(|e| Error::Config(format!("dataset row {}: {e}", line + 1)))?);
            }
            ys.push(label);
        }
        let features = features.ok_or_else(|| Error::Config("dataset is empty".into()))?;
        Dataset::new(features, xs, ys)
    }

    pub fn len(&self) -> usize {
        self.ys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ys.is_empty()
    }

    pub fn features(&self) -> usize {
        self.features
    }

    pub fn num_classes(&self) -> usize {
        self.ys.iter().max().map_or(0, |m| m + 1)
    }

    pub fn example(&self, i: usize) -> Example<'_> {
        Example { x: &self.xs[i * self.features..(i + 1) * self.features], y: self.ys[i] }
    }

    pub fn iter(&self) -> impl Iterator<Item = Example<'_>> {
        (0..self.len()).map(move |i| self.example(i))
    }

    /// Splits into `workers` disjoint contiguous shards of equal size;
    /// any remainder is dropped.
    pub fn shard(&self, workers: usize) -> Result<Vec<Shard>> {
        let per = self.len() / workers.max(1);
        if per == 0 {
            return Err(Error::Config(format!("{} examples cannot feed {workers} workers", self.len())));
        }
        Ok((0..workers).map(|r| Shard { start: r * per, len: per }).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shard {
    pub start: usize,
    pub len: usize,
}

/// Per-worker sampling without replacement; a fresh permutation each epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct Sampler {
    shard: Shard,
    perm: Vec<usize>,
    epoch: Option<u64>,
}

impl Sampler {
    pub fn new(shard: Shard) -> Self {
        Sampler { shard, perm: (0..shard.len).collect(), epoch: None }
    }

    /// Dataset indices of minibatch `batch_idx` within `epoch`.
    pub fn batch<R: Rng>(&mut self, rng: &mut R, epoch: u64, batch_idx: usize, batch: usize) -> Vec<usize> {
        if self.epoch != Some(epoch) {
            self.perm = (0..self.shard.len).collect();
            self.perm.shuffle(rng);
            self.epoch = Some(epoch);
        }
        let lo = batch_idx * batch;
        self.perm[lo..lo + batch].iter().map(|&i| self.shard.start + i).collect()
    }
}
