mod common;

use common::{reward_trial, sign_test_p};

const TRIALS: u64 = 50;

fn signs(flip: bool) -> (usize, f64) {
    let d: Vec<f64> = (0..TRIALS).map(|s| reward_trial(s, flip)).collect();
    let positive = d.iter().filter(|&&v| v > 0.0).count();
    (positive, d.iter().sum::<f64>() / TRIALS as f64)
}

#[test]
fn correct_pseudo_labels_earn_positive_reward() {
    let (positive, mean) = signs(false);
    assert!(mean > 0.0, "mean d {mean}");
    let p = sign_test_p(positive, TRIALS as usize);
    assert!(p < 0.05, "{positive}/{TRIALS} positive, p = {p}");
}

#[test]
fn flipped_pseudo_labels_earn_negative_reward() {
    let (positive, mean) = signs(true);
    assert!(mean < 0.0, "mean d {mean}");
    let p = sign_test_p(TRIALS as usize - positive, TRIALS as usize);
    assert!(p < 0.05, "{positive}/{TRIALS} positive, p = {p}");
}

#[test]
fn sign_test_matches_hand_values() {
    // P(X ≥ 5), X ~ Bin(5, 1/2) = 1/32; P(X ≥ 0) = 1
    assert!((sign_test_p(5, 5) - 1.0 / 32.0).abs() < 1e-15);
    assert!((sign_test_p(0, 7) - 1.0).abs() < 1e-15);
    // P(X ≥ 4), X ~ Bin(5, 1/2) = 6/32
    assert!((sign_test_p(4, 5) - 6.0 / 32.0).abs() < 1e-15);
}
