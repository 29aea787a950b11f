//! Dynamic time warping distance and the k-nearest-neighbor baseline.

use rayon::prelude::*;

use crate::encoder::EncodedSession;
use crate::error::{Error, Result};

/// Pointwise distance between two events.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepDistance {
    /// 1 - |A intersect B| / |A union B| on active index sets. The default:
    /// it respects the one-active-index-per-domain structure without
    /// densifying.
    JaccardOnActiveSets,
    /// Euclidean distance on dense rows.
    EuclideanOnDense,
}

#[derive(Clone, Debug)]
pub struct DtwConfig {
    /// Odd, to avoid majority ties.
    pub k_neighbors: usize,
    pub step_distance: StepDistance,
    /// Sakoe-Chiba band radius; `None` means exact (unbanded) DTW.
    pub window: Option<usize>,
}

impl Default for DtwConfig {
    fn default() -> Self {
        DtwConfig {
            k_neighbors: 5,
            step_distance: StepDistance::JaccardOnActiveSets,
            window: None,
        }
    }
}

impl DtwConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_neighbors == 0 || self.k_neighbors % 2 == 0 {
            return Err(Error::InvalidData(format!(
                "k_neighbors must be a positive odd integer, got {}",
                self.k_neighbors
            )));
        }
        Ok(())
    }
}

/// Jaccard distance on sorted-or-not index sets (sizes here are tiny, a
/// linear scan is fine).
pub fn jaccard_distance(a: &[usize], b: &[usize]) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 0.0;
    }
    let mut intersect = 0usize;
    for x in a {
        if b.contains(x) {
            intersect += 1;
        }
    }
    let union = a.len() + b.len() - intersect;
    1.0 - intersect as f64 / union as f64
}

/// Classic DTW dynamic program:
/// D[i][j] = d(a_i, b_j) + min(D[i-1][j], D[i][j-1], D[i-1][j-1]).
/// Cells outside the Sakoe-Chiba band (|i - j| > window) stay infinite.
pub fn dtw_distance_with<T, F>(a: &[T], b: &[T], step: F, window: Option<usize>) -> Result<f64>
where
    F: Fn(&T, &T) -> f64,
{
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptySequence);
    }
    let (n, m) = (a.len(), b.len());
    // the band must cover the length difference or no path exists
    let window = window.map(|w| w.max(n.abs_diff(m)));
    let mut prev = vec![f64::INFINITY; m + 1];
    let mut curr = vec![f64::INFINITY; m + 1];
    prev[0] = 0.0;
    for i in 1..=n {
        curr.fill(f64::INFINITY);
        let (lo, hi) = match window {
            Some(w) => (i.saturating_sub(w).max(1), (i + w).min(m)),
            None => (1, m),
        };
        for j in lo..=hi {
            let cost = step(&a[i - 1], &b[j - 1]);
            let best = prev[j].min(curr[j - 1]).min(prev[j - 1]);
            curr[j] = cost + best;
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    Ok(prev[m])
}

/// DTW between two encoded sessions under the configured step distance.
pub fn dtw_distance(a: &EncodedSession, b: &EncodedSession, cfg: &DtwConfig) -> Result<f64> {
    match cfg.step_distance {
        StepDistance::JaccardOnActiveSets => {
            let sa: Vec<&[usize]> = a.events.iter().map(|e| e.active.as_slice()).collect();
            let sb: Vec<&[usize]> = b.events.iter().map(|e| e.active.as_slice()).collect();
            dtw_distance_with(&sa, &sb, |x, y| jaccard_distance(x, y), cfg.window)
        }
        StepDistance::EuclideanOnDense => {
            // dense rows are one-hot expansions; Euclidean distance between
            // active sets p, q is sqrt(|p \ q| + |q \ p|)
            let sa: Vec<&[usize]> = a.events.iter().map(|e| e.active.as_slice()).collect();
            let sb: Vec<&[usize]> = b.events.iter().map(|e| e.active.as_slice()).collect();
            dtw_distance_with(
                &sa,
                &sb,
                |x, y| {
                    let mut intersect = 0usize;
                    for v in *x {
                        if y.contains(v) {
                            intersect += 1;
                        }
                    }
                    ((x.len() + y.len() - 2 * intersect) as f64).sqrt()
                },
                cfg.window,
            )
        }
    }
}

/// Majority-vote k-nearest-neighbor prediction. Distance ties break toward
/// the earlier training-set index, keeping evaluation deterministic. The
/// score is the fraction of fraud neighbors, usable for AUC.
pub fn knn_predict(
    query: &EncodedSession,
    train: &[(EncodedSession, u8)],
    cfg: &DtwConfig,
) -> Result<(u8, f64)> {
    cfg.validate()?;
    if train.len() < cfg.k_neighbors {
        return Err(Error::TrainSetTooSmall { have: train.len(), need: cfg.k_neighbors });
    }
    let mut distances: Vec<(f64, usize)> = train
        .par_iter()
        .enumerate()
        .map(|(i, (s, _))| Ok((dtw_distance(query, s, cfg)?, i)))
        .collect::<Result<Vec<_>>>()?;
    distances.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let fraud = distances[..cfg.k_neighbors]
        .iter()
        .filter(|(_, i)| train[*i].1 == 1)
        .count();
    let score = fraud as f64 / cfg.k_neighbors as f64;
    let label = u8::from(2 * fraud > cfg.k_neighbors);
    Ok((label, score))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::EncodedEvent;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn session(active_sets: &[&[usize]], label: Option<u8>) -> EncodedSession {
        EncodedSession {
            events: active_sets.iter().map(|a| EncodedEvent { active: a.to_vec() }).collect(),
            item_ids: vec![None; active_sets.len()],
            label,
        }
    }

    /// Exhaustive minimum over all monotone warping paths.
    fn dtw_oracle<T, F>(a: &[T], b: &[T], step: &F) -> f64
    where
        F: Fn(&T, &T) -> f64,
    {
        fn recurse<T, F>(a: &[T], b: &[T], i: usize, j: usize, step: &F) -> f64
        where
            F: Fn(&T, &T) -> f64,
        {
            let cost = step(&a[i], &b[j]);
            if i == 0 && j == 0 {
                return cost;
            }
            let mut best = f64::INFINITY;
            if i > 0 {
                best = best.min(recurse(a, b, i - 1, j, step));
            }
            if j > 0 {
                best = best.min(recurse(a, b, i, j - 1, step));
            }
            if i > 0 && j > 0 {
                best = best.min(recurse(a, b, i - 1, j - 1, step));
            }
            cost + best
        }
        recurse(a, b, a.len() - 1, b.len() - 1, step)
    }

    #[test]
    fn self_distance_is_zero() {
        let s = session(&[&[0, 4], &[1, 5], &[2, 6]], None);
        let cfg = DtwConfig::default();
        assert_eq!(dtw_distance(&s, &s, &cfg).unwrap(), 0.0);
    }

    #[test]
    fn scalar_absolute_distance_example() {
        let a = [0.0f64];
        let b = [1.0f64, 1.0, 1.0];
        let d = dtw_distance_with(&a, &b, |x: &f64, y: &f64| (x - y).abs(), None).unwrap();
        assert_eq!(d, 3.0);
    }

    #[test]
    fn empty_sequence_is_an_error() {
        let empty: [f64; 0] = [];
        assert!(matches!(
            dtw_distance_with(&empty, &[1.0], |x, y| (x - y).abs(), None),
            Err(Error::EmptySequence)
        ));
    }

    #[test]
    fn random_pairs_match_exhaustive_path_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..100 {
            let n = rng.random_range(1..=8);
            let m = rng.random_range(1..=8);
            let a: Vec<f64> = (0..n).map(|_| rng.random_range(0..5) as f64).collect();
            let b: Vec<f64> = (0..m).map(|_| rng.random_range(0..5) as f64).collect();
            let step = |x: &f64, y: &f64| (x - y).abs();
            let got = dtw_distance_with(&a, &b, step, None).unwrap();
            let want = dtw_oracle(&a, &b, &step);
            assert_eq!(got, want, "a={a:?} b={b:?}");
        }
    }

    #[test]
    fn symmetry_for_symmetric_step_distance() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        for _ in 0..50 {
            let mk = |rng: &mut ChaCha8Rng| -> EncodedSession {
                let len = rng.random_range(1..10);
                let sets: Vec<Vec<usize>> = (0..len)
                    .map(|_| vec![rng.random_range(0..4), 4 + rng.random_range(0..4)])
                    .collect();
                let refs: Vec<&[usize]> = sets.iter().map(|s| s.as_slice()).collect();
                session(&refs, None)
            };
            let a = mk(&mut rng);
            let b = mk(&mut rng);
            let cfg = DtwConfig::default();
            let ab = dtw_distance(&a, &b, &cfg).unwrap();
            let ba = dtw_distance(&b, &a, &cfg).unwrap();
            assert!((ab - ba).abs() < 1e-12);
            assert!(ab >= 0.0);
        }
    }

    #[test]
    fn widening_the_band_never_increases_distance() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        for _ in 0..30 {
            let a: Vec<f64> = (0..10).map(|_| rng.random_range(0..6) as f64).collect();
            let b: Vec<f64> = (0..10).map(|_| rng.random_range(0..6) as f64).collect();
            let step = |x: &f64, y: &f64| (x - y).abs();
            let mut last = f64::INFINITY;
            for w in 0..10 {
                let d = dtw_distance_with(&a, &b, step, Some(w)).unwrap();
                assert!(d <= last + 1e-12, "band {w} gave {d} > {last}");
                last = d;
            }
            let exact = dtw_distance_with(&a, &b, step, None).unwrap();
            assert!((last - exact).abs() < 1e-12);
        }
    }

    #[test]
    fn identical_training_session_wins_with_k1() {
        let train = vec![
            (session(&[&[0], &[1], &[2]], None), 1u8),
            (session(&[&[3], &[3], &[3]], None), 0u8),
            (session(&[&[0], &[3], &[1]], None), 0u8),
        ];
        let cfg = DtwConfig { k_neighbors: 1, ..Default::default() };
        let (label, score) = knn_predict(&train[0].0.clone(), &train, &cfg).unwrap();
        assert_eq!(label, 1);
        assert_eq!(score, 1.0);
    }

    #[test]
    fn majority_of_three() {
        let train = vec![
            (session(&[&[0], &[0]], None), 1u8),
            (session(&[&[0], &[1]], None), 1u8),
            (session(&[&[1], &[1]], None), 0u8),
            (session(&[&[9], &[9]], None), 0u8),
        ];
        let query = session(&[&[0], &[0]], None);
        let cfg = DtwConfig { k_neighbors: 3, ..Default::default() };
        let (label, score) = knn_predict(&query, &train, &cfg).unwrap();
        assert_eq!(label, 1);
        assert!((score - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn train_set_too_small_is_an_error() {
        let train = vec![(session(&[&[0]], None), 0u8)];
        let cfg = DtwConfig { k_neighbors: 3, ..Default::default() };
        assert!(matches!(
            knn_predict(&train[0].0.clone(), &train, &cfg),
            Err(Error::TrainSetTooSmall { .. })
        ));
    }

    #[test]
    fn matches_full_sort_oracle_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(34);
        for _ in 0..50 {
            let mk = |rng: &mut ChaCha8Rng| -> EncodedSession {
                let len = rng.random_range(2..6);
                let sets: Vec<Vec<usize>> =
                    (0..len).map(|_| vec![rng.random_range(0..3)]).collect();
                let refs: Vec<&[usize]> = sets.iter().map(|s| s.as_slice()).collect();
                session(&refs, None)
            };
            let train: Vec<(EncodedSession, u8)> = (0..12)
                .map(|_| (mk(&mut rng), rng.random_range(0..2) as u8))
                .collect();
            let query = mk(&mut rng);
            let cfg = DtwConfig { k_neighbors: 5, ..Default::default() };
            let (label, score) = knn_predict(&query, &train, &cfg).unwrap();

            // oracle: sort all distances with index tiebreak, vote
            let mut all: Vec<(f64, usize)> = train
                .iter()
                .enumerate()
                .map(|(i, (s, _))| (dtw_distance(&query, s, &cfg).unwrap(), i))
                .collect();
            all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let fraud = all[..5].iter().filter(|(_, i)| train[*i].1 == 1).count();
            assert_eq!(score, fraud as f64 / 5.0);
            assert_eq!(label, u8::from(fraud > 2));
        }
    }

    #[test]
    fn even_k_is_rejected() {
        let cfg = DtwConfig { k_neighbors: 4, ..Default::default() };
        assert!(cfg.validate().is_err());
    }
}
