use crate::error::{OpgError, Result};

use super::score::{ScoredSample, TrueOrigin};

/// Mann-Whitney AUROC with unseen as the positive class. Ties count one half.
pub fn auroc(scored: &[ScoredSample]) -> Result<f64> {
    let (pos, neg) = split_by_origin(scored);
    auroc_from_scores(&pos, &neg)
}

pub(crate) fn split_by_origin(scored: &[ScoredSample]) -> (Vec<f64>, Vec<f64>) {
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for s in scored {
        match s.origin {
            TrueOrigin::Unseen => pos.push(s.score),
            TrueOrigin::Seen => neg.push(s.score),
        }
    }
    (pos, neg)
}

fn check(pos: &[f64], neg: &[f64]) -> Result<()> {
    if pos.is_empty() || neg.is_empty() {
        return Err(OpgError::validation(
            "AUROC needs at least one seen and one unseen sample",
        ));
    }
    if pos.iter().chain(neg).any(|v| v.is_nan()) {
        return Err(OpgError::validation("AUROC scores contain NaN"));
    }
    Ok(())
}

/// Rank-sum AUROC: probability that a positive outscores a negative.
pub fn auroc_from_scores(pos: &[f64], neg: &[f64]) -> Result<f64> {
    check(pos, neg)?;
    let mut all: Vec<(f64, bool)> = pos
        .iter()
        .map(|&s| (s, true))
        .chain(neg.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j + 1 < all.len() && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        // 1-based ranks i+1..=j+1 share their average.
        let avg = (i + j + 2) as f64 / 2.0;
        rank_sum += avg * all[i..=j].iter().filter(|e| e.1).count() as f64;
        i = j + 1;
    }
    let np = pos.len() as f64;
    let nn = neg.len() as f64;
    Ok((rank_sum - np * (np + 1.0) / 2.0) / (np * nn))
}

/// O(n*m) pair counting, used as a reference.
pub fn auroc_brute_force(pos: &[f64], neg: &[f64]) -> Result<f64> {
    check(pos, neg)?;
    let mut wins = 0.0;
    for &p in pos {
        for &n in neg {
            if p > n {
                wins += 1.0;
            } else if p == n {
                wins += 0.5;
            }
        }
    }
    Ok(wins / (pos.len() * neg.len()) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn hand_examples() {
        assert_eq!(auroc_from_scores(&[0.9, 0.8], &[0.1, 0.2]).unwrap(), 1.0);
        assert_eq!(auroc_from_scores(&[0.5; 4], &[0.5; 3]).unwrap(), 0.5);
        // 0.8 beats all three seen scores, 0.3 beats only 0.1: 4 of 6 pairs.
        let a = auroc_from_scores(&[0.8, 0.3], &[0.1, 0.4, 0.35]).unwrap();
        assert_eq!(a, auroc_brute_force(&[0.8, 0.3], &[0.1, 0.4, 0.35]).unwrap());
        assert!((a - 4.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn single_origin_is_rejected() {
        assert!(auroc_from_scores(&[], &[0.1]).unwrap_err().is_validation());
        assert!(auroc_from_scores(&[0.1], &[]).is_err());
        assert!(auroc_from_scores(&[f64::NAN], &[0.1]).is_err());
    }

    #[test]
    fn matches_brute_force_with_ties() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let np = rng.gen_range(1..40);
            let nn = rng.gen_range(1..40);
            let levels = rng.gen_range(1..8);
            let mut draw = |n| {
                (0..n)
                    .map(|_| rng.gen_range(0..levels) as f64 / levels as f64)
                    .collect::<Vec<_>>()
            };
            let pos = draw(np);
            let neg = draw(nn);
            let fast = auroc_from_scores(&pos, &neg).unwrap();
            let slow = auroc_brute_force(&pos, &neg).unwrap();
            assert!((fast - slow).abs() <= 1e-12, "{fast} vs {slow}");
        }
    }

    proptest! {
        #[test]
        fn invariant_under_monotone_transform(
            pos in proptest::collection::vec(0.0f64..1.0, 1..30),
            neg in proptest::collection::vec(0.0f64..1.0, 1..30),
        ) {
            let f = |v: &f64| (3.0 * v).exp() + 2.0;
            let a = auroc_from_scores(&pos, &neg).unwrap();
            let pt: Vec<f64> = pos.iter().map(f).collect();
            let nt: Vec<f64> = neg.iter().map(f).collect();
            let b = auroc_from_scores(&pt, &nt).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&a));
        }

        #[test]
        fn flipping_origins_complements(
            mut all in proptest::collection::hash_set(0u32..1_000_000, 2..40),
            cut in 1usize..39,
        ) {
            let mut v: Vec<f64> = all.drain().map(|x| x as f64).collect();
            v.sort_by(f64::total_cmp);
            let cut = cut.min(v.len() - 1);
            // Interleave so both sides have a mix of ranks.
            let (pos, neg): (Vec<_>, Vec<_>) = v.iter().enumerate().partition(|(i, _)| (i * 7 + cut) % 3 == 0);
            let pos: Vec<f64> = pos.into_iter().map(|(_, x)| *x).collect();
            let neg: Vec<f64> = neg.into_iter().map(|(_, x)| *x).collect();
            prop_assume!(!pos.is_empty() && !neg.is_empty());
            let a = auroc_from_scores(&pos, &neg).unwrap();
            let b = auroc_from_scores(&neg, &pos).unwrap();
            prop_assert!((a + b - 1.0).abs() < 1e-12);
        }
    }
}
