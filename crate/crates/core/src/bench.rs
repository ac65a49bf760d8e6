//! Ground-truth oracles, recall, and the scaling benchmark.
//!
//! Cost is counted in swap-test evaluations and comparator calls. Wall time
//! is recorded alongside but is not what the fits look at.

use std::collections::BTreeSet;
use std::io::Write;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::{majority_vote, ClassifierModel, FitConfig};
use crate::datasets_io::{make_blobs, quantize_dataset, train_test_split, BlobSpec, Bounds};
use crate::error::{Error, Result};
use crate::hnsw_index::NeighborQueue;
use crate::quantum_sim::{similarity_batch, AngleState, Cost, Scored, SimilarityBackend};
use crate::scalar::Scalar;

/// Exact top-`k` by dissimilarity over every state, ties to the lower id.
pub fn brute_force_knn<S: Scalar, R: Rng + ?Sized>(
    states: &[AngleState<S>],
    query: &AngleState<S>,
    k: usize,
    backend: &SimilarityBackend,
    rng: &mut R,
) -> Result<NeighborQueue<S>> {
    if states.is_empty() {
        return Err(Error::IndexEmpty);
    }
    let mut scored = similarity_batch(
        states.iter().enumerate(),
        query,
        backend,
        rng,
        &mut Cost::default(),
    )?;
    scored.sort_by(|a, b| {
        a.dissimilarity
            .partial_cmp(&b.dissimilarity)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.id.cmp(&b.id))
    });
    let mut queue = NeighborQueue::new(k);
    for s in scored.into_iter().take(k) {
        queue.push(s);
    }
    Ok(queue)
}

/// `|found ∩ oracle| / |oracle|`.
pub fn recall_at_k(found: &BTreeSet<usize>, oracle: &BTreeSet<usize>) -> f64 {
    if oracle.is_empty() {
        return 0.0;
    }
    found.intersection(oracle).count() as f64 / oracle.len() as f64
}

/// Majority label over a brute-force top-`k`, same voting rule as the model.
pub fn brute_force_label<S: Scalar>(
    model: &ClassifierModel<S>,
    entries: &[Scored<S>],
) -> Option<u32> {
    let votes: Vec<_> = entries
        .iter()
        .map(|e| (model.index.balls()[e.id].label, e.dissimilarity))
        .collect();
    majority_vote(&votes)
}

/// Least-squares line with its coefficient of determination.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

pub fn linear_fit(xs: &[f64], ys: &[f64]) -> LinearFit {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = my - slope * mx;
    let r_squared = if syy > 0.0 && sxx > 0.0 {
        sxy * sxy / (sxx * syy)
    } else {
        1.0
    };
    LinearFit {
        slope,
        intercept,
        r_squared,
    }
}

/// Benchmark grid. Each cell builds from a blob dataset sized to land near
/// `target_balls` balls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScalingGrid {
    pub target_balls: Vec<usize>,
    pub seeds: Vec<u64>,
    pub queries: usize,
    pub dim: usize,
    pub classes: usize,
    /// Blob separation in units of spread.
    pub separation: f64,
    /// Training points generated per requested ball.
    pub points_per_ball: f64,
    pub fit: FitConfig,
}

impl Default for ScalingGrid {
    fn default() -> Self {
        Self {
            target_balls: vec![1 << 8, 1 << 10, 1 << 12, 1 << 14],
            seeds: vec![1, 2, 3, 4, 5],
            queries: 200,
            dim: 2,
            classes: 6,
            separation: 0.5,
            points_per_ball: 1.14,
            fit: FitConfig::default(),
        }
    }
}

/// One grid cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub target_balls: usize,
    pub balls: usize,
    pub points: usize,
    pub dim: usize,
    pub max_neighbors: usize,
    pub k: usize,
    pub bits: u32,
    pub purity_threshold: f64,
    pub backend: String,
    pub shots: Option<u64>,
    pub cmp_bits: u32,
    pub seed: u64,
    pub queries: usize,
    pub splits: usize,
    pub build_similarity_evals: u64,
    pub build_comparisons: u64,
    pub search_evals_mean: f64,
    pub search_evals_median: f64,
    pub search_evals_max: u64,
    pub search_comparisons_mean: f64,
    pub accuracy: f64,
    pub recall_at_k: f64,
    pub build_ms: f64,
    pub search_us_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingFits {
    /// Mean search evaluations against `log2 M`.
    pub search_vs_log2_m: LinearFit,
    /// Mean search evaluations against `M`.
    pub search_vs_m: LinearFit,
    /// Build evaluations divided by `M log2 M`, per record.
    pub build_constants: Vec<f64>,
    /// Largest over smallest build constant.
    pub build_constant_spread: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub grid: ScalingGrid,
    pub records: Vec<BenchRecord>,
    pub fits: Option<ScalingFits>,
}

fn median(sorted: &[u64]) -> f64 {
    let n = sorted.len();
    if n == 0 {
        0.0
    } else if n % 2 == 1 {
        sorted[n / 2] as f64
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) as f64 / 2.0
    }
}

/// Builds and queries one grid cell.
pub fn run_cell(grid: &ScalingGrid, target: usize, seed: u64) -> Result<BenchRecord> {
    let train_n = ((target as f64 * grid.points_per_ball).ceil() as usize).max(grid.classes);
    let per_class = (train_n + grid.queries).div_ceil(grid.classes);
    let raw = make_blobs(&BlobSpec {
        n_per_class: per_class,
        classes: grid.classes,
        dim: grid.dim,
        separation: grid.separation,
        spread: 1.0,
        seed,
    })?;
    let fit = FitConfig { seed, ..grid.fit };
    let q = quantize_dataset(&raw.records, fit.bits, Bounds::Auto)?;
    let test_fraction = grid.queries as f64 / q.points.len() as f64;
    let (train, test) = train_test_split(&q.points, test_fraction, seed ^ 0x5eed);

    let started = Instant::now();
    let model = ClassifierModel::<f64>::fit(&train, &fit)?;
    let build_ms = started.elapsed().as_secs_f64() * 1e3;

    let started = Instant::now();
    let per_query = test
        .par_iter()
        .map(|p| {
            let outcome = model.neighbors(&p.features)?;
            let found = outcome.queue.deduplicated();
            let predicted = model.vote(&found).expect("nonempty queue");
            let query = model.encode(&p.features)?;
            let oracle = brute_force_knn(
                model.index.encoded(),
                &query,
                fit.k,
                &SimilarityBackend::Exact,
                &mut ChaCha8Rng::seed_from_u64(seed),
            )?;
            let found_ids = found.iter().map(|e| e.id).collect();
            Ok((
                outcome.cost,
                predicted == p.label,
                recall_at_k(&found_ids, &oracle.ids()),
            ))
        })
        .collect::<Result<Vec<(Cost, bool, f64)>>>()?;
    let search_us_mean = started.elapsed().as_secs_f64() * 1e6 / per_query.len().max(1) as f64;

    let n = per_query.len().max(1) as f64;
    let mut evals: Vec<u64> = per_query
        .iter()
        .map(|(c, _, _)| c.similarity_evals)
        .collect();
    evals.sort_unstable();
    let (shots, backend) = match fit.backend {
        SimilarityBackend::Exact => (None, "exact"),
        SimilarityBackend::Sampled { shots } => (Some(shots), "sampled"),
    };
    Ok(BenchRecord {
        target_balls: target,
        balls: model.stats.n_balls,
        points: train.len(),
        dim: grid.dim,
        max_neighbors: fit.max_neighbors,
        k: fit.k,
        bits: fit.bits,
        purity_threshold: fit.purity_threshold,
        backend: backend.into(),
        shots,
        cmp_bits: fit.cmp_bits,
        seed,
        queries: per_query.len(),
        splits: model.stats.splits,
        build_similarity_evals: model.stats.build_cost.similarity_evals,
        build_comparisons: model.stats.build_cost.comparisons,
        search_evals_mean: evals.iter().sum::<u64>() as f64 / n,
        search_evals_median: median(&evals),
        search_evals_max: evals.last().copied().unwrap_or(0),
        search_comparisons_mean: per_query.iter().map(|(c, _, _)| c.comparisons).sum::<u64>()
            as f64
            / n,
        accuracy: per_query.iter().filter(|(_, ok, _)| *ok).count() as f64 / n,
        recall_at_k: per_query.iter().map(|(_, _, r)| r).sum::<f64>() / n,
        build_ms,
        search_us_mean,
    })
}

/// Regression fits over a set of records; `None` with fewer than two sizes.
pub fn scaling_fits(records: &[BenchRecord]) -> Option<ScalingFits> {
    let sizes: BTreeSet<usize> = records.iter().map(|r| r.balls).collect();
    if sizes.len() < 2 {
        return None;
    }
    let m: Vec<f64> = records.iter().map(|r| r.balls as f64).collect();
    let log_m: Vec<f64> = m.iter().map(|x| x.log2()).collect();
    let evals: Vec<f64> = records.iter().map(|r| r.search_evals_mean).collect();
    let build_constants: Vec<f64> = records
        .iter()
        .map(|r| r.build_similarity_evals as f64 / (r.balls as f64 * (r.balls as f64).log2()))
        .collect();
    let lo = build_constants
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    let hi = build_constants.iter().copied().fold(0.0, f64::max);
    Some(ScalingFits {
        search_vs_log2_m: linear_fit(&log_m, &evals),
        search_vs_m: linear_fit(&m, &evals),
        build_constants,
        build_constant_spread: hi / lo,
    })
}

/// Runs every `(target, seed)` cell; records come back sorted by config.
pub fn run_scaling(grid: &ScalingGrid) -> Result<BenchReport> {
    if grid.target_balls.is_empty() || grid.seeds.is_empty() {
        return Err(Error::InvalidParameter("empty benchmark grid".into()));
    }
    if grid.queries == 0 || grid.classes == 0 || grid.dim == 0 {
        return Err(Error::InvalidParameter(
            "queries, classes and dim must be positive".into(),
        ));
    }
    let cells: Vec<(usize, u64)> = grid
        .target_balls
        .iter()
        .flat_map(|&t| grid.seeds.iter().map(move |&s| (t, s)))
        .collect();
    let mut records = cells
        .par_iter()
        .map(|&(t, s)| run_cell(grid, t, s))
        .collect::<Result<Vec<_>>>()?;
    records.sort_by_key(|r| (r.target_balls, r.seed));
    let fits = scaling_fits(&records);
    Ok(BenchReport {
        grid: grid.clone(),
        records,
        fits,
    })
}

impl BenchReport {
    pub fn write_json<W: Write>(&self, mut w: W) -> Result<()> {
        serde_json::to_writer_pretty(&mut w, self)?;
        writeln!(w)?;
        Ok(())
    }

    /// One row per record, same fields as the JSON records.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for r in &self.records {
            out.serialize(r)?;
        }
        out.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantum_sim::encode_point;
    use crate::quantum_sim::EncodingParams;

    #[test]
    fn recall_examples() {
        let s = |v: &[usize]| v.iter().copied().collect::<BTreeSet<_>>();
        assert_eq!(recall_at_k(&s(&[1, 2, 3]), &s(&[1, 2, 3])), 1.0);
        assert_eq!(recall_at_k(&s(&[4, 5]), &s(&[1, 2, 3])), 0.0);
        assert_eq!(recall_at_k(&s(&[1, 2, 3, 8, 9]), &s(&[1, 2, 3, 4, 5])), 0.6);
    }

    #[test]
    fn brute_force_examples() {
        let p = EncodingParams::new(8, 1).unwrap();
        let states: Vec<AngleState<f64>> = [30u32, 10, 200, 11]
            .iter()
            .map(|&v| encode_point(&[v], &p).unwrap())
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let all =
            brute_force_knn(&states, &states[1], 10, &SimilarityBackend::Exact, &mut rng).unwrap();
        assert_eq!(
            all.entries().iter().map(|e| e.id).collect::<Vec<_>>(),
            vec![1, 3, 0, 2]
        );
        let one =
            brute_force_knn(&states, &states[2], 1, &SimilarityBackend::Exact, &mut rng).unwrap();
        assert_eq!(one.entries()[0].id, 2);
        assert!(
            brute_force_knn::<f64, _>(&[], &states[0], 1, &SimilarityBackend::Exact, &mut rng)
                .is_err()
        );
    }

    #[test]
    fn fit_recovers_line() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        let ys = [3.0, 5.0, 7.0, 9.0];
        let f = linear_fit(&xs, &ys);
        assert!((f.slope - 2.0).abs() < 1e-12 && (f.intercept - 1.0).abs() < 1e-12);
        assert!((f.r_squared - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_cell_grid() {
        let grid = ScalingGrid {
            target_balls: vec![64],
            seeds: vec![3],
            queries: 20,
            ..ScalingGrid::default()
        };
        let report = run_scaling(&grid).unwrap();
        assert_eq!(report.records.len(), 1);
        assert!(report.fits.is_none());
        let r = &report.records[0];
        assert_eq!(r.queries, 20);
        assert!(r.balls > 0 && r.balls <= r.points);
    }
}
