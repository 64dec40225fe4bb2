#![allow(dead_code)]

use std::path::{Path, PathBuf};

use serde_json::{json, Value};

/// Scalar instance used throughout: one node, trivial networks.
pub fn e1_json() -> Value {
    json!({
        "n": 1,
        "physical": [[1.0]],
        "social": [[1.0]],
        "tech1": {"beta": [0.3], "gamma": [0.5], "delta": [0.2], "lambda": [0.2], "xi": [0.3], "x0": [0.5]},
        "tech2": {"beta": [0.2], "gamma": [0.5], "delta": [0.1], "lambda": [0.2], "xi": [0.3], "x0": [0.5]}
    })
}

pub fn write_json(dir: &Path, name: &str, v: &Value) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, serde_json::to_vec_pretty(v).unwrap()).unwrap();
    p
}

/// Equilibrium of the scalar model with `s = 0`, from the balance of flows
/// read directly off the recurrence:
///   a1 loses `delta1 a1`, gains `gamma1 x1 d2`;
///   d2 loses `gamma1 x1 d2`, gains `delta2 a2`;
///   symmetrically for a2 and d1;
///   x_k = ((1 - lambda - xi) x0 + xi a_k) / (1 - lambda).
/// Bisection on the total mass `a1 + a2 + d1 + d2 = 1`, which increases in a1.
pub fn scalar_oracle(p: [[f64; 6]; 2]) -> [f64; 6] {
    // p[k] = [beta, gamma, delta, lambda, xi, x0]
    let opinion = |k: usize, a: f64| {
        let [_, _, _, l, xi, x0] = p[k];
        ((1.0 - l - xi) * x0 + xi * a) / (1.0 - l)
    };
    let pieces = |a1: f64| {
        let a2 = p[0][2] * a1 / p[1][2];
        let (x1, x2) = (opinion(0, a1), opinion(1, a2));
        let d2 = p[0][2] * a1 / (p[0][1] * x1);
        let d1 = p[1][2] * a2 / (p[1][1] * x2);
        [a1, a2, d1, d2, x1, x2]
    };
    let mass = |a1: f64| {
        let v = pieces(a1);
        v[0] + v[1] + v[2] + v[3] - 1.0
    };
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    assert!(mass(lo) < 0.0 && mass(hi) > 0.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mass(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    pieces(0.5 * (lo + hi))
}

pub const E1_PARAMS: [[f64; 6]; 2] = [[0.3, 0.5, 0.2, 0.2, 0.3, 0.5], [0.2, 0.5, 0.1, 0.2, 0.3, 0.5]];
