use std::collections::BTreeSet;

use nonlin_core::analysis::{cluster, DistanceMatrix, Linkage};
use nonlin_core::rng::rng;
use rand::Rng;

/// Naive agglomeration that recomputes every cluster distance from the
/// leaf sets, with no update formula.
fn reference(d: &DistanceMatrix, linkage: Linkage) -> Vec<(BTreeSet<usize>, BTreeSet<usize>, f64)> {
    let n = d.len();
    let mut clusters: Vec<BTreeSet<usize>> = (0..n).map(|i| BTreeSet::from([i])).collect();
    let mut out = vec![];
    let min_label = |c: &BTreeSet<usize>| c.iter().map(|&i| d.labels[i].clone()).min().unwrap();
    while clusters.len() > 1 {
        let mut best: Option<(f64, String, String, usize, usize)> = None;
        for a in 0..clusters.len() {
            for b in a + 1..clusters.len() {
                let pairs: Vec<f64> = clusters[a]
                    .iter()
                    .flat_map(|&i| clusters[b].iter().map(move |&j| (i, j)))
                    .map(|(i, j)| d.values[i][j])
                    .collect();
                let h = match linkage {
                    Linkage::Single => pairs.iter().copied().fold(f64::INFINITY, f64::min),
                    Linkage::Complete => pairs.iter().copied().fold(0.0, f64::max),
                    Linkage::Average => pairs.iter().sum::<f64>() / pairs.len() as f64,
                };
                let (la, lb) = (min_label(&clusters[a]), min_label(&clusters[b]));
                let key = if la <= lb { (la, lb) } else { (lb, la) };
                let better = match &best {
                    None => true,
                    Some(cur) => (h, &key.0, &key.1) < (cur.0, &cur.1, &cur.2),
                };
                if better {
                    best = Some((h, key.0, key.1, a, b));
                }
            }
        }
        let (h, _, _, a, b) = best.unwrap();
        let (ca, cb) = (clusters[a].clone(), clusters[b].clone());
        out.push((ca.clone(), cb.clone(), h));
        clusters[a] = ca.union(&cb).copied().collect();
        clusters.remove(b);
    }
    out
}

/// Leaf sets of each merge of a dendrogram.
fn leaf_sets(n: usize, merges: &[nonlin_core::analysis::Merge]) -> Vec<(BTreeSet<usize>, BTreeSet<usize>, f64)> {
    let mut sets: Vec<BTreeSet<usize>> = (0..n).map(|i| BTreeSet::from([i])).collect();
    merges
        .iter()
        .map(|m| {
            let (a, b) = (sets[m.left].clone(), sets[m.right].clone());
            sets.push(a.union(&b).copied().collect());
            (a, b, m.height)
        })
        .collect()
}

fn random_metric(n: usize, seed: u64) -> DistanceMatrix {
    // distances between random points in the plane
    let mut r = rng(seed);
    let pts: Vec<(f64, f64)> = (0..n).map(|_| (r.random::<f64>(), r.random::<f64>())).collect();
    let values =
        pts.iter().map(|a| pts.iter().map(|b| ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()).collect()).collect();
    DistanceMatrix::new((0..n).map(|i| format!("m{i}")).collect(), values).unwrap()
}

fn same_up_to_order(
    got: &[(BTreeSet<usize>, BTreeSet<usize>, f64)],
    want: &[(BTreeSet<usize>, BTreeSet<usize>, f64)],
) -> bool {
    got.len() == want.len()
        && got.iter().zip(want).all(|(g, w)| {
            let pair_ok = (g.0 == w.0 && g.1 == w.1) || (g.0 == w.1 && g.1 == w.0);
            pair_ok && (g.2 - w.2).abs() <= 1e-12 * (1.0 + w.2)
        })
}

#[test]
fn matches_reference_on_random_metrics() {
    for seed in 0..40 {
        for n in [2, 3, 5, 7] {
            let d = random_metric(n, seed);
            for linkage in [Linkage::Single, Linkage::Average, Linkage::Complete] {
                let t = cluster(&d, linkage);
                assert_eq!(t.merges.len(), n - 1);
                assert_eq!(t.merges.last().unwrap().size, n);
                let got = leaf_sets(n, &t.merges);
                assert!(same_up_to_order(&got, &reference(&d, linkage)), "seed {seed} n {n} {linkage:?}");
            }
        }
    }
}

#[test]
fn average_heights_are_monotone() {
    for seed in 0..20 {
        let t = cluster(&random_metric(9, seed), Linkage::Average);
        assert!(t.merges.windows(2).all(|w| w[0].height <= w[1].height));
    }
}

#[test]
fn deterministic_with_ties() {
    let n = 6;
    let values = (0..n).map(|i| (0..n).map(|j| if i == j { 0.0 } else { 1.0 }).collect()).collect();
    let d = DistanceMatrix::new((0..n).map(|i| format!("m{}", n - i)).collect(), values).unwrap();
    let a = cluster(&d, Linkage::Average);
    assert_eq!(a, cluster(&d, Linkage::Average));
    assert!(same_up_to_order(&leaf_sets(n, &a.merges), &reference(&d, Linkage::Average)));
    // labels m1 and m2 sort first
    assert_eq!((a.merges[0].left, a.merges[0].right), (5, 4));
}
