use std::f64::consts::PI;

use sensorplace::lidar::{reconstruction_error, LidarConfig, LidarProblem};
use sensorplace::objective::{DesignObjective, ObjectiveFn, SurrogateObjective};
use sensorplace::sqp::{solve_relaxed, SqpConfig};

fn small(n: usize) -> LidarProblem {
    LidarProblem::new(LidarConfig {
        n_d: n,
        n_r: n,
        n_x: n,
        ..LidarConfig::default()
    })
    .unwrap()
}

fn design(n_w: usize, k: usize) -> Vec<f64> {
    (0..n_w).map(|i| 0.2 + 0.6 * ((i * 7 + k) % 11) as f64 / 10.0).collect()
}

#[test]
fn group_gradient_sums_row_gradients() {
    let p = small(8);
    let budget = p.node_budget(4.0).unwrap();
    let grouped = p.surrogate(&budget).unwrap();
    let rows = SurrogateObjective::new(&p.lowrank(&budget).unwrap(), p.cfg.setup().unwrap(), None).unwrap();
    let w = design(p.n_weights(), 3);
    let expanded = p.groups.expand(&w);
    assert_eq!(expanded.len(), p.n_rows());
    let g = grouped.derivatives(&w).unwrap().gradient;
    let gr = rows.derivatives(&expanded).unwrap().gradient;
    for (k, gk) in g.iter().enumerate() {
        let sum: f64 = p.groups.members(k).iter().map(|&r| gr[r]).sum();
        assert!((gk - sum).abs() <= 1e-10 * gk.abs().max(1e-12), "{k}: {gk} vs {sum}");
    }
    assert!((grouped.value(&w).unwrap() - rows.value(&expanded).unwrap()).abs() < 1e-10);
}

#[test]
fn surrogate_converges_to_streamed_dense_value() {
    let p = small(12);
    let dense = p.streamed_dense(10_000).unwrap();
    for k in 0..3 {
        let w = design(p.n_weights(), k);
        let exact = dense.value(&w).unwrap();
        let errs: Vec<f64> = [8.0, 12.0, 16.0, 24.0]
            .iter()
            .map(|&c| {
                let sur = p.surrogate(&p.node_budget(c).unwrap()).unwrap();
                (sur.value(&w).unwrap() - exact).abs() / exact
            })
            .collect();
        assert!(errs[0] < 1e-3, "{errs:?}");
        assert!(errs.windows(2).all(|e| e[1] < e[0]), "{errs:?}");
        assert!(errs[3] < 1e-7, "{errs:?}");
    }
}

#[test]
fn dense_relaxation_is_no_worse_than_surrogate_design() {
    let p = small(12);
    let sur = p.surrogate(&p.node_budget(8.0).unwrap()).unwrap();
    let dense = p.dense(2000).unwrap();
    let cfg = SqpConfig::default();
    let ws = solve_relaxed(&sur, p.budget(), &cfg).unwrap().w_star;
    let oracle = solve_relaxed(
        &dense,
        p.budget(),
        &SqpConfig {
            epsilon: 1e-8,
            ..cfg
        },
    )
    .unwrap();
    let at_surrogate = dense.value(&ws.values).unwrap();
    assert!(oracle.objective() <= at_surrogate + 1e-3, "{} vs {at_surrogate}", oracle.objective());
}

#[test]
fn builds_are_deterministic() {
    let w = design(10, 1);
    let a = small(10).surrogate(&small(10).node_budget(4.0).unwrap()).unwrap().value(&w).unwrap();
    let b = small(10).surrogate(&small(10).node_budget(4.0).unwrap()).unwrap().value(&w).unwrap();
    assert_eq!(a.to_bits(), b.to_bits());
}

#[test]
fn truncation_error_settles() {
    let u = |x: f64, y: f64| (PI * x).sin() * (PI * y).sin();
    let e3 = reconstruction_error(u, 3, 48).unwrap();
    let e5 = reconstruction_error(u, 5, 48).unwrap();
    assert!((e3 - e5).abs() < 1e-6, "{e3} vs {e5}");
    let v = |x: f64, y: f64| u(x, y) + 0.3 * (PI * x / 2.0).cos() * (PI * y / 2.0).cos();
    assert!(reconstruction_error(v, 1, 48).unwrap() > 0.5);
    assert!(reconstruction_error(v, 2, 48).unwrap() < 1e-10);
}
