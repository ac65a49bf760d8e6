//! End-to-end classification: fit reduces the training set to granular
//! balls and indexes them; predict searches the index and votes.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datasets_io::Quantizer;
use crate::error::{Error, Result};
use crate::granular_ball::{generate_with_stats, validate_threshold, Label, LabeledPoint};
use crate::hnsw_index::{HierarchicalIndex, IndexParams, Reader, SearchOutcome};
use crate::quantum_sim::{
    encode_point, AngleState, Comparator, Cost, EncodingParams, Scored, SimilarityBackend,
};
use crate::scalar::Scalar;

/// Everything needed to reproduce a fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub purity_threshold: f64,
    pub max_neighbors: usize,
    pub k: usize,
    /// Bits per feature.
    pub bits: u32,
    pub backend: SimilarityBackend,
    /// Fractional bits of the comparator registers in sampled mode.
    pub cmp_bits: u32,
    pub seed: u64,
    pub full_layer_candidates: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            purity_threshold: 1.0,
            max_neighbors: 4,
            k: 5,
            bits: 8,
            backend: SimilarityBackend::Exact,
            cmp_bits: 16,
            seed: 0,
            full_layer_candidates: false,
        }
    }
}

impl FitConfig {
    /// Reals are compared directly with the exact backend, through the
    /// fixed-point comparator otherwise.
    pub fn comparator(&self) -> Comparator {
        match self.backend {
            SimilarityBackend::Exact => Comparator::Exact,
            SimilarityBackend::Sampled { .. } => Comparator::FixedPoint {
                bits: self.cmp_bits,
            },
        }
    }

    pub fn index_params(&self, dim: usize) -> Result<IndexParams> {
        Ok(IndexParams {
            max_neighbors: self.max_neighbors,
            encoding: EncodingParams::new(self.bits, dim)?,
            backend: self.backend,
            comparator: self.comparator(),
            seed: self.seed,
            full_layer_candidates: self.full_layer_candidates,
        })
    }

    pub fn validate(&self) -> Result<()> {
        validate_threshold(self.purity_threshold)?;
        if self.k == 0 {
            return Err(Error::InvalidParameter("k must be at least 1".into()));
        }
        self.index_params(1)?.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FitStats {
    pub n_points: usize,
    pub n_balls: usize,
    pub splits: usize,
    pub build_cost: Cost,
}

/// Optional descriptive data carried with a saved model.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ModelMetadata {
    pub feature_names: Vec<String>,
    pub label_names: Vec<String>,
    /// Quantization fitted on the training data, applied to raw queries.
    pub quantizer: Option<Quantizer>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierModel<S> {
    pub index: HierarchicalIndex<S>,
    pub labels: Vec<Label>,
    pub config: FitConfig,
    pub stats: FitStats,
    pub metadata: ModelMetadata,
}

/// Majority label of `(label, dissimilarity)` votes.
///
/// Equal counts go to the smaller summed dissimilarity, then the lower label.
pub fn majority_vote<S: Scalar>(votes: &[(Label, S)]) -> Option<Label> {
    let mut tally: BTreeMap<Label, (usize, S)> = BTreeMap::new();
    for &(label, d) in votes {
        let e = tally.entry(label).or_insert((0, S::zero()));
        e.0 += 1;
        e.1 = e.1 + d;
    }
    let mut best: Option<(Label, usize, S)> = None;
    for (label, (count, sum)) in tally {
        let better = match best {
            None => true,
            Some((_, bc, bs)) => count > bc || (count == bc && sum < bs),
        };
        if better {
            best = Some((label, count, sum));
        }
    }
    best.map(|(label, _, _)| label)
}

/// FNV-1a over the query's features; keeps per-query streams independent of
/// evaluation order.
fn query_salt(point: &[u32]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for v in point {
        for b in v.to_le_bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    h
}

impl<S: Scalar> ClassifierModel<S> {
    pub fn fit(dataset: &[LabeledPoint], config: &FitConfig) -> Result<Self> {
        config.validate()?;
        let first = dataset.first().ok_or(Error::EmptyDataset)?;
        let dim = first.dim();
        for p in dataset {
            p.validate(dim, config.bits)?;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let generation = generate_with_stats::<S, _>(dataset, config.purity_threshold, &mut rng)?;
        let splits = generation.splits;
        let index = HierarchicalIndex::build(generation.balls, config.index_params(dim)?)?;
        let labels = index.labels().into_iter().collect();
        let stats = FitStats {
            n_points: dataset.len(),
            n_balls: index.balls().len(),
            splits,
            build_cost: index.build_cost(),
        };
        Ok(Self {
            index,
            labels,
            config: *config,
            stats,
            metadata: ModelMetadata::default(),
        })
    }

    /// Keeps the fitted graph; searches afterwards use `backend`.
    pub fn with_backend(mut self, backend: SimilarityBackend) -> Result<Self> {
        self.config.backend = backend;
        self.index = self.index.with_backend(backend, self.config.comparator())?;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.index.params().encoding.dim
    }

    pub fn encode(&self, point: &[u32]) -> Result<AngleState<S>> {
        encode_point(point, &self.index.params().encoding)
    }

    /// Search result for `point` with the model's `k`.
    pub fn neighbors(&self, point: &[u32]) -> Result<SearchOutcome<S>> {
        self.neighbors_k(point, self.config.k)
    }

    pub fn neighbors_k(&self, point: &[u32], k: usize) -> Result<SearchOutcome<S>> {
        let query = self.encode(point)?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(query_salt(point));
        self.index.search(&query, k, &mut rng)
    }

    /// Votes over deduplicated queue entries, one vote per ball.
    pub fn vote(&self, entries: &[Scored<S>]) -> Option<Label> {
        let votes: Vec<(Label, S)> = entries
            .iter()
            .map(|e| (self.index.balls()[e.id].label, e.dissimilarity))
            .collect();
        majority_vote(&votes)
    }

    pub fn predict(&self, point: &[u32]) -> Result<Label> {
        let outcome = self.neighbors(point)?;
        Ok(self
            .vote(&outcome.queue.deduplicated())
            .expect("search on a nonempty index queues at least one ball"))
    }

    /// Order-preserving, evaluated in parallel.
    pub fn predict_batch(&self, points: &[Vec<u32>]) -> Result<Vec<Label>> {
        points.par_iter().map(|p| self.predict(p)).collect()
    }

    /// Quantizes raw features with the stored quantizer, then predicts.
    /// Returns the label and how many features were clamped.
    pub fn predict_raw(&self, features: &[f64]) -> Result<(Label, usize)> {
        let quantizer = self.metadata.quantizer.as_ref().ok_or_else(|| {
            Error::InvalidParameter("model has no quantizer for raw features".into())
        })?;
        let (levels, clamped) = quantizer.quantize(features)?;
        Ok((self.predict(&levels)?, clamped))
    }
}

pub const MODEL_MAGIC: &[u8; 8] = b"GBQKMDL\0";
pub const MODEL_VERSION: u16 = 1;

#[derive(Serialize, Deserialize)]
struct ModelHeader {
    config: FitConfig,
    stats: FitStats,
    labels: Vec<Label>,
    metadata: ModelMetadata,
}

impl<S: Scalar> ClassifierModel<S> {
    /// Model container: magic, version, a JSON header with config, stats and
    /// metadata, then the index container.
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = ModelHeader {
            config: self.config,
            stats: self.stats,
            labels: self.labels.clone(),
            metadata: self.metadata.clone(),
        };
        let json = serde_json::to_vec(&header).expect("model header serializes");
        let mut out = Vec::new();
        out.extend_from_slice(MODEL_MAGIC);
        out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&self.index.to_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        if r.take(8)? != MODEL_MAGIC {
            return Err(Error::Parse {
                offset: 0,
                message: "bad magic: not a model file".into(),
            });
        }
        let version = r.u16()?;
        if version != MODEL_VERSION {
            return Err(r.error(format!("unsupported model version {version}")));
        }
        let len = r.u64()?;
        let at = r.position();
        let json = r.take(usize::try_from(len).map_err(|_| r.error("header too long"))?)?;
        let header: ModelHeader = serde_json::from_slice(json).map_err(|e| Error::Parse {
            offset: at,
            message: format!("bad model header: {e}"),
        })?;
        let body = r.position();
        let index = HierarchicalIndex::from_bytes(&bytes[body..]).map_err(|e| match e {
            Error::Parse { offset, message } => Error::Parse {
                offset: offset + body,
                message,
            },
            other => other,
        })?;
        Ok(Self {
            index,
            labels: header.labels,
            config: header.config,
            stats: header.stats,
            metadata: header.metadata,
        })
    }
}
