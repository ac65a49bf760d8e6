use std::collections::BTreeMap;

use gbqknn::bench::{brute_force_knn, brute_force_label};
use gbqknn::classifier::{majority_vote, ClassifierModel, FitConfig};
use gbqknn::datasets_io::{make_blobs, quantize_dataset, train_test_split, BlobSpec, Bounds};
use gbqknn::granular_ball::GranularBall;
use gbqknn::hnsw_index::{floor_log2, quantize_center, HierarchicalIndex, IndexParams};
use gbqknn::quantum_sim::{encode_point, exact_similarity, EncodingParams, SimilarityBackend};
use gbqknn::{ClassifierModel32, Label, LabeledPoint};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn blobs(classes: usize, per_class: usize, separation: f64, seed: u64) -> Vec<LabeledPoint> {
    let raw = make_blobs(&BlobSpec {
        n_per_class: per_class,
        classes,
        dim: 2,
        separation,
        spread: 1.0,
        seed,
    })
    .unwrap();
    quantize_dataset(&raw.records, 8, Bounds::Auto)
        .unwrap()
        .points
}

fn point_balls(centers: &[Vec<u32>]) -> Vec<GranularBall<f64>> {
    centers
        .iter()
        .enumerate()
        .map(|(i, c)| {
            GranularBall::from_members(vec![LabeledPoint::new(c.clone(), (i % 3) as Label)])
                .unwrap()
        })
        .collect()
}

fn random_centers(n: usize, dim: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<u32>> {
    (0..n)
        .map(|_| (0..dim).map(|_| rng.random_range(0..256)).collect())
        .collect()
}

#[test]
fn search_effort_is_bounded() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for (n, m) in [(50usize, 2usize), (300, 4), (1000, 6)] {
        let params = IndexParams {
            seed: n as u64,
            ..IndexParams::new(m, EncodingParams::new(8, 2).unwrap())
        };
        let index =
            HierarchicalIndex::build(point_balls(&random_centers(n, 2, &mut rng)), params).unwrap();
        let top = index.layers()[index.top_layer().unwrap()].len();
        let bound = ((m * m + m + 1) * (floor_log2(n) + 1) + top) as u64;
        for _ in 0..50 {
            let q = encode_point(&random_centers(1, 2, &mut rng)[0], &params.encoding).unwrap();
            let outcome = index.search(&q, 5, &mut rng).unwrap();
            assert!(
                outcome.cost.similarity_evals <= bound,
                "{} > {bound}",
                outcome.cost.similarity_evals
            );
        }
    }
}

#[test]
fn similarity_counter_matches_evaluated_candidates() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let params = IndexParams {
        seed: 4,
        ..IndexParams::new(4, EncodingParams::new(8, 3).unwrap())
    };
    let index =
        HierarchicalIndex::build(point_balls(&random_centers(400, 3, &mut rng)), params).unwrap();
    for _ in 0..100 {
        let q = encode_point(&random_centers(1, 3, &mut rng)[0], &params.encoding).unwrap();
        let outcome = index.search(&q, 5, &mut rng).unwrap();
        let counted: usize = outcome.trace.iter().map(|s| s.candidates.len()).sum();
        assert_eq!(outcome.cost.similarity_evals, counted as u64);
        // one selection per layer plus queue checks, each a strict pass over its inputs
        assert_eq!(outcome.trace.len(), index.top_layer().unwrap() + 1);
    }
}

#[test]
fn predictions_agree_with_brute_force_on_small_indices() {
    let mut agree = 0;
    let mut total = 0;
    for seed in 0..20u64 {
        let data = blobs(3, 40, 4.0, seed);
        let (train, test) = train_test_split(&data, 0.3, seed);
        let model = ClassifierModel::<f64>::fit(
            &train,
            &FitConfig {
                seed,
                k: 3,
                ..FitConfig::default()
            },
        )
        .unwrap();
        if model.stats.n_balls > 32 {
            continue;
        }
        for p in &test {
            let q = model.encode(&p.features).unwrap();
            let top = brute_force_knn(
                model.index.encoded(),
                &q,
                3,
                &SimilarityBackend::Exact,
                &mut ChaCha8Rng::seed_from_u64(0),
            )
            .unwrap();
            agree += usize::from(
                model.predict(&p.features).unwrap()
                    == brute_force_label(&model, top.entries()).unwrap(),
            );
            total += 1;
        }
    }
    assert!(total >= 200, "only {total} queries on small indices");
    let rate = agree as f64 / total as f64;
    println!("oracle agreement {agree}/{total} = {rate:.3}");
    assert!(rate >= 0.9, "agreement {rate:.3}");
}

#[test]
fn one_dimensional_bottom_pick_is_local_minimum() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let params = IndexParams {
        seed: 5,
        ..IndexParams::new(3, EncodingParams::new(8, 1).unwrap())
    };
    let index =
        HierarchicalIndex::build(point_balls(&random_centers(200, 1, &mut rng)), params).unwrap();
    let value = |id: usize| quantize_center(&index.balls()[id].center, 255)[0];
    for _ in 0..200 {
        let q: u32 = rng.random_range(0..256);
        let outcome = index
            .search(&encode_point(&[q], &params.encoding).unwrap(), 3, &mut rng)
            .unwrap();
        let last = outcome.trace.last().unwrap();
        assert_eq!(last.layer, 0);
        let best = last
            .candidates
            .iter()
            .map(|&c| value(c).abs_diff(q))
            .min()
            .unwrap();
        assert_eq!(value(last.selected.id).abs_diff(q), best);
    }
}

#[test]
fn five_candidates_order_by_angle_distance() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let params = EncodingParams::new(8, 1).unwrap();
    for _ in 0..100 {
        let q: u32 = rng.random_range(0..256);
        let query = encode_point::<f64>(&[q], &params).unwrap();
        let mut cands: Vec<u32> = (0..5).map(|_| rng.random_range(0..256)).collect();
        cands.sort_by_key(|c| c.abs_diff(q));
        let sims: Vec<f64> = cands
            .iter()
            .map(|&c| exact_similarity(&encode_point(&[c], &params).unwrap(), &query).unwrap())
            .collect();
        for (w, c) in sims.windows(2).zip(cands.windows(2)) {
            if c[0].abs_diff(q) < c[1].abs_diff(q) {
                assert!(w[0] > w[1]);
            } else {
                assert_eq!(w[0], w[1]);
            }
        }
    }
}

#[test]
fn center_query_finds_its_ball_when_reachable() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut centers = random_centers(120, 2, &mut rng);
    centers.sort();
    centers.dedup();
    let params = IndexParams {
        seed: 7,
        ..IndexParams::new(4, EncodingParams::new(8, 2).unwrap())
    };
    let index = HierarchicalIndex::build(point_balls(&centers), params).unwrap();
    let mut reached = 0;
    for (id, c) in centers.iter().enumerate() {
        let outcome = index
            .search(&encode_point(c, &params.encoding).unwrap(), 5, &mut rng)
            .unwrap();
        if outcome.trace.iter().any(|s| s.candidates.contains(&id)) {
            reached += 1;
            let hit = outcome
                .queue
                .entries()
                .iter()
                .find(|e| e.id == id)
                .expect("queued");
            assert_eq!(hit.dissimilarity, 0.0);
        }
        let k1 = brute_force_knn(
            index.encoded(),
            &encode_point(c, &params.encoding).unwrap(),
            1,
            &SimilarityBackend::Exact,
            &mut rng,
        )
        .unwrap();
        assert_eq!(k1.entries()[0].id, id);
    }
    assert!(reached > 0);
}

#[test]
fn vote_rule_exhaustive_up_to_seven() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for len in 1..=7u32 {
        for code in 0..3u32.pow(len) {
            let labels: Vec<Label> = (0..len).map(|i| code / 3u32.pow(i) % 3).collect();
            let votes: Vec<(Label, f64)> = labels
                .iter()
                .map(|&l| (l, f64::from(rng.random_range(0..4u8)) / 8.0))
                .collect();
            let mut tally: BTreeMap<Label, (usize, f64)> = BTreeMap::new();
            for &(l, d) in &votes {
                let e = tally.entry(l).or_default();
                e.0 += 1;
                e.1 += d;
            }
            let top = tally.values().map(|t| t.0).max().unwrap();
            let low = tally
                .values()
                .filter(|t| t.0 == top)
                .map(|t| t.1)
                .fold(f64::INFINITY, f64::min);
            let expected = tally
                .iter()
                .find(|(_, t)| t.0 == top && t.1 == low)
                .map(|(l, _)| *l);
            assert_eq!(majority_vote(&votes), expected, "{votes:?}");
        }
    }
    assert_eq!(majority_vote::<f64>(&[]), None);
}

#[test]
fn batch_prediction_is_deterministic() {
    let data = blobs(3, 200, 2.0, 9);
    let (train, test) = train_test_split(&data, 0.2, 9);
    let model = ClassifierModel::<f64>::fit(
        &train,
        &FitConfig {
            backend: SimilarityBackend::Sampled { shots: 1000 },
            seed: 9,
            ..FitConfig::default()
        },
    )
    .unwrap();
    let queries: Vec<Vec<u32>> = test.iter().take(100).map(|p| p.features.clone()).collect();
    let sequential: Vec<Label> = queries.iter().map(|q| model.predict(q).unwrap()).collect();
    assert_eq!(model.predict_batch(&queries).unwrap(), sequential);
    assert_eq!(model.predict_batch(&queries).unwrap(), sequential);
    assert!(model.predict_batch(&[]).unwrap().is_empty());
}

#[test]
fn two_blob_model_is_consistent() {
    let data = blobs(2, 100, 3.0, 10);
    let model = ClassifierModel::<f64>::fit(&data, &FitConfig::default()).unwrap();
    assert!(model.stats.n_balls <= model.stats.n_points);
    assert_eq!(model.stats.n_points, 200);
    assert_eq!(model.index.audit(), Ok(()));
    assert!(model.index.balls().iter().all(|b| b.is_pure()));
    assert!(model
        .index
        .balls()
        .iter()
        .all(|b| model.labels.contains(&b.label)));
}

#[test]
fn well_separated_blob_queries_match_nearest_ball() {
    let data = blobs(2, 100, 10.0, 11);
    let model = ClassifierModel::<f64>::fit(&data, &FitConfig::default()).unwrap();
    let class_a: Vec<&LabeledPoint> = data.iter().filter(|p| p.label == 0).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut agree = 0;
    for _ in 0..200 {
        // convex combination of two blob-A points stays inside its hull
        let (a, b) = (
            class_a[rng.random_range(0..class_a.len())],
            class_a[rng.random_range(0..class_a.len())],
        );
        let t: f64 = rng.random();
        let q: Vec<u32> = a
            .features
            .iter()
            .zip(&b.features)
            .map(|(&x, &y)| (f64::from(x) * t + f64::from(y) * (1.0 - t)).round() as u32)
            .collect();
        let nearest = brute_force_knn(
            model.index.encoded(),
            &model.encode(&q).unwrap(),
            1,
            &SimilarityBackend::Exact,
            &mut rng,
        )
        .unwrap();
        let oracle = model.index.balls()[nearest.entries()[0].id].label;
        let got = model.predict(&q).unwrap();
        agree += usize::from(got == 0 && oracle == 0);
    }
    assert!(agree >= 190, "{agree}/200");
}

#[test]
fn blobs_are_separable_by_nearest_neighbour() {
    let raw = make_blobs(&BlobSpec {
        n_per_class: 300,
        classes: 2,
        dim: 3,
        separation: 10.0,
        spread: 1.0,
        seed: 12,
    })
    .unwrap();
    let (train, test) = train_test_split(&raw.records, 0.3, 12);
    let correct = test
        .iter()
        .filter(|q| {
            let nearest = train
                .iter()
                .min_by(|a, b| {
                    let d = |r: &&gbqknn::datasets_io::RawRecord| -> f64 {
                        r.features
                            .iter()
                            .zip(&q.features)
                            .map(|(x, y)| (x - y).powi(2))
                            .sum()
                    };
                    d(a).total_cmp(&d(b))
                })
                .unwrap();
            nearest.label == q.label
        })
        .count();
    assert!(correct as f64 >= 0.99 * test.len() as f64);
}

#[test]
fn single_precision_pipeline() {
    let data = blobs(2, 80, 6.0, 13);
    let model = ClassifierModel32::fit(&data, &FitConfig::default()).unwrap();
    let back = ClassifierModel32::from_bytes(&model.to_bytes()).unwrap();
    for p in data.iter().take(40) {
        assert_eq!(
            model.predict(&p.features).unwrap(),
            back.predict(&p.features).unwrap()
        );
    }
    assert_eq!(back.index, model.index);
}
