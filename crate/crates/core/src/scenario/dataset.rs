use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Maneuver, Scenario};
use crate::error::{GftnnError, Result};

#[derive(Debug, Clone)]
pub struct DatasetSplit {
    pub train: Vec<Scenario>,
    pub test: Vec<Scenario>,
    pub seed: u64,
}

pub fn class_counts(scenarios: &[Scenario]) -> BTreeMap<Maneuver, usize> {
    let mut counts: BTreeMap<Maneuver, usize> = Maneuver::ALL.iter().map(|&m| (m, 0)).collect();
    for s in scenarios {
        *counts.entry(s.maneuver).or_default() += 1;
    }
    counts
}

fn indices_by_class(scenarios: &[Scenario]) -> BTreeMap<Maneuver, Vec<usize>> {
    let mut by_class: BTreeMap<Maneuver, Vec<usize>> =
        Maneuver::ALL.iter().map(|&m| (m, Vec::new())).collect();
    for (i, s) in scenarios.iter().enumerate() {
        by_class.entry(s.maneuver).or_default().push(i);
    }
    by_class
}

/// Randomly down-samples every class to the size of the smallest one.
///
/// Survivors keep their original relative order.
pub fn balance(scenarios: Vec<Scenario>, seed: u64) -> Result<Vec<Scenario>> {
    let by_class = indices_by_class(&scenarios);
    if let Some((class, _)) = by_class.iter().find(|(_, idx)| idx.is_empty()) {
        return Err(GftnnError::Balance {
            class: class.to_string(),
        });
    }
    let target = by_class.values().map(Vec::len).min().unwrap_or(0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = vec![false; scenarios.len()];
    for mut idx in by_class.into_values() {
        idx.shuffle(&mut rng);
        for &i in &idx[..target] {
            keep[i] = true;
        }
    }
    Ok(scenarios
        .into_iter()
        .zip(keep)
        .filter_map(|(s, k)| k.then_some(s))
        .collect())
}

/// Class-stratified shuffled split with `round(n · ratio)` training scenarios.
///
/// The training quota is distributed over classes by largest remainder, so
/// every class lands within one scenario of its exact share.
pub fn split(scenarios: Vec<Scenario>, ratio: f64, seed: u64) -> Result<DatasetSplit> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(GftnnError::Split(format!("ratio {ratio} outside (0, 1)")));
    }
    let n = scenarios.len();
    if n < 2 {
        return Err(GftnnError::Split(format!("need at least 2 scenarios, got {n}")));
    }
    let n_train = ((n as f64 * ratio).round() as usize).clamp(1, n - 1);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut classes: Vec<Vec<usize>> = indices_by_class(&scenarios)
        .into_values()
        .filter(|v| !v.is_empty())
        .collect();
    for idx in &mut classes {
        idx.shuffle(&mut rng);
    }

    let exact: Vec<f64> = classes
        .iter()
        .map(|c| c.len() as f64 * n_train as f64 / n as f64)
        .collect();
    let mut quota: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut order: Vec<usize> = (0..classes.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let mut missing = n_train - quota.iter().sum::<usize>();
    for &c in order.iter().cycle() {
        if missing == 0 {
            break;
        }
        if quota[c] < classes[c].len() {
            quota[c] += 1;
            missing -= 1;
        }
    }

    let mut is_train = vec![false; n];
    for (idx, &q) in classes.iter().zip(&quota) {
        for &i in &idx[..q] {
            is_train[i] = true;
        }
    }
    let mut train = Vec::with_capacity(n_train);
    let mut test = Vec::with_capacity(n - n_train);
    for (s, t) in scenarios.into_iter().zip(is_train) {
        if t {
            train.push(s);
        } else {
            test.push(s);
        }
    }
    train.shuffle(&mut rng);
    test.shuffle(&mut rng);
    Ok(DatasetSplit { train, test, seed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::FeatureTensor;

    fn dummy(i: usize, maneuver: Maneuver) -> Scenario {
        Scenario {
            id: format!("s{i}"),
            features: FeatureTensor::zeros(4, 2, 1),
            future: vec![(0.0, 0.0)],
            v0: 0.0,
            fps: 10.0,
            maneuver,
        }
    }

    fn with_counts(keep: usize, left: usize, right: usize) -> Vec<Scenario> {
        let mut out = Vec::new();
        for (m, n) in [
            (Maneuver::KeepLane, keep),
            (Maneuver::LaneChangeLeft, left),
            (Maneuver::LaneChangeRight, right),
        ] {
            for _ in 0..n {
                let i = out.len();
                out.push(dummy(i, m));
            }
        }
        out
    }

    fn ids(v: &[Scenario]) -> Vec<String> {
        v.iter().map(|s| s.id.clone()).collect()
    }

    #[test]
    fn balance_downsamples_majority() {
        let out = balance(with_counts(100, 10, 10), 1).unwrap();
        assert_eq!(class_counts(&out).values().copied().collect::<Vec<_>>(), vec![10, 10, 10]);

        let balanced = with_counts(5, 5, 5);
        let out = balance(balanced.clone(), 9).unwrap();
        assert_eq!(ids(&out), ids(&balanced));

        // NGSIM-like skew: 96.37 % keep lane
        let out = balance(with_counts(9637, 182, 181), 2).unwrap();
        assert_eq!(class_counts(&out).values().copied().collect::<Vec<_>>(), vec![181, 181, 181]);
    }

    #[test]
    fn balance_is_seeded() {
        let a = balance(with_counts(50, 5, 7), 4).unwrap();
        let b = balance(with_counts(50, 5, 7), 4).unwrap();
        assert_eq!(ids(&a), ids(&b));
    }

    #[test]
    fn balance_requires_every_class() {
        match balance(with_counts(3, 0, 2), 0).unwrap_err() {
            GftnnError::Balance { class } => assert_eq!(class, "lane_change_left"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn split_sizes_and_determinism() {
        let s = split(with_counts(4, 3, 3), 0.7, 3).unwrap();
        assert_eq!((s.train.len(), s.test.len()), (7, 3));
        let again = split(with_counts(4, 3, 3), 0.7, 3).unwrap();
        assert_eq!(ids(&s.train), ids(&again.train));
        assert_eq!(ids(&s.test), ids(&again.test));

        let big = split(with_counts(3000, 3000, 3000), 0.7, 0).unwrap();
        assert_eq!((big.train.len(), big.test.len()), (6300, 2700));
        for (_, c) in class_counts(&big.train) {
            assert_eq!(c, 2100);
        }
    }

    #[test]
    fn split_is_disjoint_and_stratified() {
        let s = split(with_counts(40, 17, 23), 0.7, 5).unwrap();
        let mut all = ids(&s.train);
        all.extend(ids(&s.test));
        all.sort();
        all.dedup();
        assert_eq!(all.len(), 80);
        let train = class_counts(&s.train);
        for (m, total) in [
            (Maneuver::KeepLane, 40.0),
            (Maneuver::LaneChangeLeft, 17.0),
            (Maneuver::LaneChangeRight, 23.0),
        ] {
            assert!((train[&m] as f64 - 0.7 * total).abs() <= 1.0);
        }
    }

    #[test]
    fn split_errors() {
        assert!(matches!(split(with_counts(1, 0, 0), 0.7, 0), Err(GftnnError::Split(_))));
        assert!(matches!(split(with_counts(3, 3, 3), 1.0, 0), Err(GftnnError::Split(_))));
    }
}
