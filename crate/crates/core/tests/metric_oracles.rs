mod oracles;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use repref_core::metrics::{multilabel_metrics, Key, Mode};

#[test]
fn key_score_table_is_exhaustively_reproduced() {
    println!("{}", oracles::key_table().unwrap());
}

#[test]
fn relation_oracle_spot_checks() {
    let c = Key::new(0, Mode::Major);
    assert_eq!(oracles::key_relation_score(c, Key::new(7, Mode::Major)), 0.5);
    assert_eq!(oracles::key_relation_score(c, Key::new(9, Mode::Minor)), 0.3);
    let a_min = Key::new(9, Mode::Minor);
    assert_eq!(oracles::key_relation_score(a_min, c), 0.3);
    assert_eq!(oracles::key_relation_score(a_min, Key::new(4, Mode::Minor)), 0.5);
}

#[test]
fn classification_matches_brute_force_confusion() {
    println!("{}", oracles::classification_vs_brute_force(1000).unwrap());
}

/// Pairwise definition: P(score_pos > score_neg) + 0.5 P(tie).
fn pairwise_auc(truth: &[bool], scores: &[f64]) -> Option<f64> {
    let pos: Vec<f64> = truth.iter().zip(scores).filter(|(t, _)| **t).map(|(_, s)| *s).collect();
    let neg: Vec<f64> = truth.iter().zip(scores).filter(|(t, _)| !**t).map(|(_, s)| *s).collect();
    if pos.is_empty() || neg.is_empty() {
        return None;
    }
    let mut wins = 0.0;
    for p in &pos {
        for n in &neg {
            wins += if p > n {
                1.0
            } else if p == n {
                0.5
            } else {
                0.0
            };
        }
    }
    Some(wins / (pos.len() * neg.len()) as f64)
}

#[test]
fn roc_auc_matches_pairwise_count() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..300 {
        let n = rng.random_range(2..40);
        let labels = rng.random_range(1..5);
        let truth: Vec<Vec<bool>> = (0..n).map(|_| (0..labels).map(|_| rng.random_bool(0.4)).collect()).collect();
        // Coarse scores force ties.
        let scores: Vec<Vec<f64>> =
            (0..n).map(|_| (0..labels).map(|_| rng.random_range(0..6) as f64 / 5.0).collect()).collect();
        let refs: Vec<Vec<usize>> = truth.iter().map(|r| (0..labels).filter(|&l| r[l]).collect()).collect();
        let got = multilabel_metrics(&refs, &scores, 0.5).unwrap();
        for l in 0..labels {
            let t: Vec<bool> = truth.iter().map(|r| r[l]).collect();
            let s: Vec<f64> = scores.iter().map(|r| r[l]).collect();
            let want = pairwise_auc(&t, &s);
            let have = got.per_label[l].roc_auc;
            match (have, want) {
                (Some(a), Some(b)) => assert!((a - b).abs() < 1e-12, "{a} vs {b}"),
                (a, b) => assert_eq!(a, b),
            }
        }
    }
}
