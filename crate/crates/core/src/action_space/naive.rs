//! A deliberately plain re-implementation of label derivation, kept as an
//! independent cross-check of [`super::derive_labels`].
//!
//! It shares no code with the production path: the per-step displacement is
//! computed by 8-point Gauss–Legendre quadrature of `(v + a t)·(cos ωt, sin ωt)`
//! and bins are decoded with explicit loops.

use super::{ActionId, LabelConfig, VocabConfig};
use crate::kinematics::Trajectory;

const GL_NODES: [f64; 8] = [
    -0.9602898564975362,
    -0.7966664774136267,
    -0.525532409916329,
    -0.18343464249564978,
    0.18343464249564978,
    0.525532409916329,
    0.7966664774136267,
    0.9602898564975362,
];
const GL_WEIGHTS: [f64; 8] = [
    0.10122853629037669,
    0.22238103445337434,
    0.31370664587788705,
    0.36268378337836177,
    0.36268378337836177,
    0.31370664587788705,
    0.22238103445337434,
    0.10122853629037669,
];

#[derive(Clone, Copy)]
struct Pose {
    x: f64,
    y: f64,
    v: f64,
    heading: f64,
}

fn quad_step(p: Pose, accel: f64, yaw_rate: f64, dt: f64) -> Pose {
    let mut lx = 0.0;
    let mut ly = 0.0;
    for k in 0..8 {
        let t = 0.5 * dt * (GL_NODES[k] + 1.0);
        let speed = p.v + accel * t;
        let ang = yaw_rate * t;
        lx += GL_WEIGHTS[k] * speed * ang.cos();
        ly += GL_WEIGHTS[k] * speed * ang.sin();
    }
    lx *= 0.5 * dt;
    ly *= 0.5 * dt;
    let (c, s) = (p.heading.cos(), p.heading.sin());
    Pose {
        x: p.x + c * lx - s * ly,
        y: p.y + s * lx + c * ly,
        v: p.v + accel * dt,
        heading: p.heading + yaw_rate * dt,
    }
}

fn centers(cfg: &VocabConfig) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    for ai in 0..cfg.accel_bins {
        for yi in 0..cfg.yaw_bins {
            let a = cfg.accel_range[0] + (ai as f64 + 0.5) * cfg.accel_width();
            let w = cfg.yaw_range[0] + (yi as f64 + 0.5) * cfg.yaw_width();
            out.push((a, w));
        }
    }
    out
}

fn mismatch(p: &Pose, g: &crate::kinematics::EgoState, cfg: &LabelConfig) -> f64 {
    let dx = p.x - g.x;
    let dy = p.y - g.y;
    let dh = p.heading - g.theta;
    let dv = p.v - g.v;
    dx * dx + dy * dy + cfg.heading_weight * dh * dh + cfg.speed_weight * dv * dv
}

fn fit(gt: &Trajectory, table: &[(f64, f64)], cfg: &LabelConfig, horizon: usize, tail: Option<&[usize]>) -> Vec<usize> {
    let n = gt.states.len() - 1;
    let s0 = gt.states[0];
    let mut cur = Pose {
        x: s0.x,
        y: s0.y,
        v: s0.v,
        heading: s0.theta,
    };
    let mut picked = Vec::new();
    for i in 0..n {
        let mut best_err = f64::INFINITY;
        let mut best = 0;
        for (id, &(a, w)) in table.iter().enumerate() {
            let mut p = quad_step(cur, a, w, gt.dt);
            let mut err = mismatch(&p, &gt.states[i + 1], cfg);
            if let Some(tail) = tail {
                let mut j = 1;
                while j < horizon && i + j < n {
                    let (ta, tw) = table[tail[i + j]];
                    p = quad_step(p, ta, tw, gt.dt);
                    err += mismatch(&p, &gt.states[i + 1 + j], cfg);
                    j += 1;
                }
            }
            if err < best_err {
                best_err = err;
                best = id;
            }
        }
        let (a, w) = table[best];
        cur = quad_step(cur, a, w, gt.dt);
        picked.push(best);
    }
    picked
}

/// Same contract as [`super::derive_labels`]; panics on trajectories with
/// fewer than two waypoints.
pub fn derive_labels_naive(gt: &Trajectory, vocab: &VocabConfig, cfg: &LabelConfig) -> Vec<ActionId> {
    let table = centers(vocab);
    let greedy = fit(gt, &table, cfg, 1, None);
    fit(gt, &table, cfg, cfg.horizon, Some(&greedy))
        .into_iter()
        .map(|i| ActionId(i as u32))
        .collect()
}
