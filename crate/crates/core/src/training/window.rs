//! Temporal subsampling that caps video length in a training batch.

use rand::Rng;

/// Subsampled frame indices, or `None` when the video already fits.
///
/// One frame is drawn per stratum of width `frames / t_max`: a random phase
/// in training (temporal augmentation), the stratum midpoint in eval.
/// Indices are strictly increasing.
pub fn window_indices<R: Rng>(
    frames: usize,
    t_max: usize,
    train: bool,
    rng: &mut R,
) -> Option<Vec<usize>> {
    if frames <= t_max {
        return None;
    }
    let ratio = frames as f64 / t_max as f64;
    let mut out = Vec::with_capacity(t_max);
    let mut prev: Option<usize> = None;
    for i in 0..t_max {
        let phase = if train { rng.random::<f64>() } else { 0.5 };
        let mut idx = ((i as f64 + phase) * ratio).floor() as usize;
        // Keep indices strictly increasing and leave room for the remainder.
        if let Some(p) = prev {
            idx = idx.max(p + 1);
        }
        idx = idx.min(frames - (t_max - i));
        prev = Some(idx);
        out.push(idx);
    }
    Some(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn short_videos_are_untouched() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(window_indices(30, 50, true, &mut rng), None);
        assert_eq!(window_indices(50, 50, false, &mut rng), None);
    }

    #[test]
    fn eval_uses_stratum_midpoints() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let idx = window_indices(100, 50, false, &mut rng).unwrap();
        let expected: Vec<usize> = (0..50).map(|i| 2 * i + 1).collect();
        assert_eq!(idx, expected);
    }

    #[test]
    fn train_windows_differ_across_seeds_and_stay_sorted() {
        let mut r1 = ChaCha8Rng::seed_from_u64(1);
        let mut r2 = ChaCha8Rng::seed_from_u64(2);
        let a = window_indices(100, 50, true, &mut r1).unwrap();
        let b = window_indices(100, 50, true, &mut r2).unwrap();
        assert_ne!(a, b);
        for w in [&a, &b] {
            assert_eq!(w.len(), 50);
            assert!(w.windows(2).all(|p| p[0] < p[1]), "strictly increasing");
            assert!(*w.last().unwrap() < 100);
        }
    }

    #[test]
    fn awkward_ratios_still_yield_distinct_indices() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for (frames, t_max) in [(101, 100), (1000, 999), (7, 3)] {
            for _ in 0..20 {
                let idx = window_indices(frames, t_max, true, &mut rng).unwrap();
                assert_eq!(idx.len(), t_max);
                assert!(idx.windows(2).all(|p| p[0] < p[1]));
                assert!(*idx.last().unwrap() < frames);
            }
        }
    }
}
