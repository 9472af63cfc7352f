//! Conditional utilization against a direct re-evaluation of its definition.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use miles_core::metrics::{conditional_utilization, utilization_delta};
use miles_core::{Split, UtilizationRecord};

/// u_A is the relative drop when A's contribution is removed, i.e. when only B remains.
fn oracle(m_ab: f64, m_a: f64, m_b: f64) -> (f64, f64, f64) {
    if m_ab == 0.0 {
        return (0.0, 0.0, 0.0);
    }
    let u_a = 1.0 - m_b / m_ab;
    let u_b = 1.0 - m_a / m_ab;
    (u_a, u_b, (u_a - u_b).abs())
}

fn close(x: f64, y: f64) -> bool {
    x == y || (x - y).abs() <= 1e-12 * x.abs().max(y.abs()).max(1e-300) || (x - y).abs() < 1e-15
}

#[test]
fn ten_thousand_random_triples() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for i in 0..10_000 {
        let (m_ab, m_a, m_b) = if i % 50 == 0 {
            (0.0, rng.random_range(0.0..1.0), rng.random_range(0.0..1.0))
        } else {
            (
                rng.random_range(1e-3..1.0),
                rng.random_range(0.0..1.0),
                rng.random_range(0.0..1.0),
            )
        };
        let (u_a, u_b) = conditional_utilization(m_ab, m_a, m_b);
        let delta = utilization_delta(u_a, u_b);
        let (oa, ob, od) = oracle(m_ab, m_a, m_b);
        assert!(
            close(u_a, oa) && close(u_b, ob) && close(delta, od),
            "triple ({m_ab}, {m_a}, {m_b}): got ({u_a}, {u_b}, {delta}), want ({oa}, {ob}, {od})"
        );

        let rec = UtilizationRecord::from_metrics(m_ab, m_a, m_b, Split::Validation);
        assert_eq!((rec.u_a, rec.u_b, rec.delta), (u_a, u_b, delta));
    }
}

#[test]
fn single_precision_agrees_with_double() {
    let (a32, b32) = conditional_utilization(0.8f32, 0.7f32, 0.4f32);
    let (a64, b64) = conditional_utilization(0.8f64, 0.7f64, 0.4f64);
    assert!((f64::from(a32) - a64).abs() < 1e-6 && (f64::from(b32) - b64).abs() < 1e-6);
}
