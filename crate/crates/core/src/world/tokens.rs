//! Scene tokenization in the ego frame.
//!
//! Each environment token is a fixed-width feature row
//! `[is_agent, x/20, y/20, vx/10, vy/10, cos h, sin h, length/5, width/5]`.
//! Map tokens fill only the position columns; whether a map point lies on
//! the route or on a corridor boundary is kept aside as the auxiliary target.

use serde::{Deserialize, Serialize};

use super::scene::Scene;
use crate::error::Result;
use crate::geometry::{Frame, Polyline, Vec2};
use crate::kinematics::{EgoState, KinematicAction};

pub const ENV_FEATURES: usize = 9;
pub const STATE_FEATURES: usize = 4;
pub const COMMANDS: usize = 3;

const POS_SCALE: f64 = 20.0;
const VEL_SCALE: f64 = 10.0;
const SIZE_SCALE: f64 = 5.0;
const ACCEL_SCALE: f64 = 12.5;
const YAW_SCALE: f64 = 1.5;
const MAP_BEHIND: f64 = 4.0;
const MAP_AHEAD: f64 = 56.0;

/// Map point class used by the auxiliary head.
pub const MAP_ROUTE: usize = 0;
pub const MAP_BOUNDARY: usize = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TokenBundle {
    /// Agent tokens first, then map tokens.
    pub env: Vec<[f64; ENV_FEATURES]>,
    pub n_agents: usize,
    /// One class per map token, in order.
    pub map_labels: Vec<usize>,
    pub command: [f64; COMMANDS],
    /// `[v/10, θ, prev accel/12.5, prev yaw rate/1.5]`.
    pub ego: [f64; STATE_FEATURES],
}

impl TokenBundle {
    pub fn n_map(&self) -> usize {
        self.env.len() - self.n_agents
    }
}

/// Features of an ego-frame state fed to the future-state embedder.
pub fn state_features(s: &EgoState) -> [f64; STATE_FEATURES] {
    [s.x / POS_SCALE, s.y / POS_SCALE, s.v / VEL_SCALE, s.theta]
}

fn map_points(line: &Polyline, from: Vec2, count: usize) -> Vec<Vec2> {
    let s0 = line.project(from).s;
    line.resample(s0 - MAP_BEHIND, s0 + MAP_AHEAD, count)
}

/// Tokens for an ego at world pose `ego` with speed `ego.v` at step `k`.
pub fn tokenize_at(scene: &Scene, ego: &EgoState, prev: &KinematicAction, k: usize, n_map: usize) -> Result<TokenBundle> {
    let frame = Frame::new(Vec2::new(ego.x, ego.y), ego.theta);
    let mut env = Vec::with_capacity(scene.agents.len() + n_map);
    for a in &scene.agents {
        let p = frame.pose_to_local(&a.pose(k));
        let v = frame.vec_to_local(a.velocity(k, scene.dt));
        env.push([
            1.0,
            p.x / POS_SCALE,
            p.y / POS_SCALE,
            v.x / VEL_SCALE,
            v.y / VEL_SCALE,
            p.heading.cos(),
            p.heading.sin(),
            a.length / SIZE_SCALE,
            a.width / SIZE_SCALE,
        ]);
    }
    let n_agents = env.len();

    let n_side = n_map / 3;
    let n_route = n_map - 2 * n_side;
    let here = Vec2::new(ego.x, ego.y);
    let mut map_labels = Vec::with_capacity(n_map);
    let lines = [
        (&scene.centerline, n_route, MAP_ROUTE),
        (&scene.left_boundary, n_side, MAP_BOUNDARY),
        (&scene.right_boundary, n_side, MAP_BOUNDARY),
    ];
    for (pts, count, label) in lines {
        if count == 0 {
            continue;
        }
        let line = Polyline::new(pts.clone())
            .ok_or_else(|| crate::error::Error::domain("tokenize_scene", "map polyline too short"))?;
        for p in map_points(&line, here, count) {
            let q = frame.to_local(p);
            env.push([0.0, q.x / POS_SCALE, q.y / POS_SCALE, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
            map_labels.push(label);
        }
    }

    let mut command = [0.0; COMMANDS];
    command[scene.command.index()] = 1.0;
    Ok(TokenBundle {
        env,
        n_agents,
        map_labels,
        command,
        ego: [ego.v / VEL_SCALE, 0.0, prev.accel / ACCEL_SCALE, prev.yaw_rate / YAW_SCALE],
    })
}

/// Tokens at the scene's initial time, in the ego frame.
pub fn tokenize_scene(scene: &Scene, n_map: usize) -> Result<TokenBundle> {
    tokenize_at(scene, &scene.ego_init, &scene.ego_prev_action, 0, n_map)
}
