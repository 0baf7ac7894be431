use std::collections::BTreeSet;

use partialgeo_core::retrieval::{average_precision, dis_at_1, recall_at_k, sdm_at_k, RetrievalIndex};
use partialgeo_core::{GeoPoint, TileId};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn unit(rng: &mut impl Rng, d: usize) -> Vec<f32> {
    let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-9);
    v.iter().map(|x| (x / n) as f32).collect()
}

/// Index whose rows are drawn from a small palette, so exact score ties are common.
fn random_index(rng: &mut impl Rng) -> (RetrievalIndex, Vec<TileId>, Vec<Vec<f32>>) {
    let n = rng.random_range(1..=1000);
    let d = rng.random_range(1..=64);
    let palette: Vec<Vec<f32>> = (0..rng.random_range(1..20)).map(|_| unit(rng, d)).collect();
    let mut ids: Vec<TileId> = (0..n as u32).map(|i| TileId::new(6, i % 64, i / 64)).collect();
    ids.shuffle(rng);
    let rows: Vec<Vec<f32>> = (0..n).map(|_| palette[rng.random_range(0..palette.len())].clone()).collect();
    let idx = RetrievalIndex::new(ids.clone(), d, rows.concat(), vec![GeoPoint::default(); n]).unwrap();
    (idx, ids, rows)
}

#[test]
fn top_k_matches_exhaustive_sort() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..100 {
        let (idx, ids, rows) = random_index(&mut rng);
        let q = unit(&mut rng, idx.dim());
        let mut all: Vec<(TileId, f64)> = ids
            .iter()
            .zip(&rows)
            .map(|(t, r)| (*t, r.iter().zip(&q).map(|(&a, &b)| f64::from(a) * f64::from(b)).sum()))
            .collect();
        all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        for k in [1, 5, 37, idx.len(), idx.len() + 3] {
            let got = idx.top_k(&q, k).unwrap();
            let want = &all[..k.min(all.len())];
            assert_eq!(got.iter().map(|x| x.0).collect::<Vec<_>>(), want.iter().map(|x| x.0).collect::<Vec<_>>());
            for (g, w) in got.iter().zip(want) {
                assert!((g.1 - w.1).abs() <= 1e-12);
            }
        }
    }
}

#[test]
fn metrics_on_hand_built_rankings() {
    let t = |i: u32| TileId::new(2, i, 0);
    let r1 = vec![(t(0), 0.9), (t(1), 0.8), (t(2), 0.7), (t(3), 0.1)];
    let r2 = vec![(t(3), 0.9), (t(2), 0.5), (t(1), 0.4), (t(0), 0.3)];
    let pos = [BTreeSet::from([t(1), t(2)]), BTreeSet::from([t(0)])];
    // query 1: positives at ranks 2 and 3 -> (1/2 + 2/3) / 2; query 2: rank 4 -> 1/4
    let want = ((0.5 + 2.0 / 3.0) / 2.0 + 0.25) / 2.0;
    let rankings = [r1, r2];
    assert!((average_precision(&rankings, &pos).unwrap() - want).abs() < 1e-15);
    assert_eq!(recall_at_k(&rankings, &pos, 1).unwrap(), 0.0);
    assert_eq!(recall_at_k(&rankings, &pos, 2).unwrap(), 0.5);
    assert_eq!(recall_at_k(&rankings, &pos, 4).unwrap(), 1.0);

    let ids = [t(0), t(1), t(2), t(3)];
    let centers = [GeoPoint::new(0.0, 0.0), GeoPoint::new(3.0, 4.0), GeoPoint::new(10.0, 0.0), GeoPoint::new(0.0, 20.0)];
    let locs = [GeoPoint::new(0.0, 0.0), GeoPoint::new(0.0, 0.0)];
    assert!((dis_at_1(&rankings, &locs, &ids, &centers).unwrap() - 10.0).abs() < 1e-12);
}

#[test]
fn ap_with_positives_at_ranks_one_and_three() {
    let t = |i: u32| TileId::new(2, i, 0);
    let r = vec![vec![(t(0), 0.9), (t(1), 0.8), (t(2), 0.7)]];
    let ap = average_precision(&r, &[BTreeSet::from([t(0), t(2)])]).unwrap();
    assert!((ap - 5.0 / 6.0).abs() < 1e-15);
}

#[test]
fn sdm_with_distances_zero_one_two_scales() {
    let s = 100.0;
    let t = |i: u32| TileId::new(2, i, 0);
    let ids = [t(0), t(1), t(2), t(3)];
    let centers = [GeoPoint::new(0.0, 0.0), GeoPoint::new(s, 0.0), GeoPoint::new(0.0, -2.0 * s), GeoPoint::new(9e9, 0.0)];
    let r = vec![vec![(t(0), 0.9), (t(1), 0.8), (t(2), 0.7), (t(3), 0.1)]];
    let got = sdm_at_k(&r, &[GeoPoint::new(0.0, 0.0)], &ids, &centers, 3, s).unwrap();
    let want = (3.0 + 2.0 * (-1.0f64).exp() + (-2.0f64).exp()) / 6.0;
    assert!((got - want).abs() < 1e-15, "{got} vs {want}");
}
