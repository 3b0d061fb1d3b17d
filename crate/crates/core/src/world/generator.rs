//! Seeded scene construction.
//!
//! Every scene is built in a route frame (ego near the origin, heading +x) and
//! then moved by a random rigid motion into world coordinates. The base line
//! is integrated from a curvature profile; the route may shift laterally off
//! it to pass obstacles, and the corridor is the base line widened on both
//! sides.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::rng::stream_rng;
use super::scene::{AgentTrack, Command, ScenarioKind, Scene, SCENE_VERSION};
use crate::error::Result;
use crate::geometry::{Frame, Polyline, Pose, Vec2};
use crate::kinematics::EgoState;
use crate::metrics::MetricConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    pub dt: f64,
    pub horizon: usize,
    /// Map points per scene token bundle.
    pub n_map: usize,
    pub route_length: f64,
    pub scenes: usize,
    pub test_fraction: f64,
    pub kinds: Vec<ScenarioKind>,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            dt: 0.5,
            horizon: 8,
            n_map: 24,
            route_length: 150.0,
            scenes: 512,
            test_fraction: 0.2,
            kinds: ScenarioKind::ALL.to_vec(),
        }
    }
}

const BEHIND: f64 = 12.0;
const EGO_LENGTH: f64 = 4.6;

/// Smooth 0 → 1 ramp over `[a, a + len]`.
fn ramp(s: f64, a: f64, len: f64) -> f64 {
    let t = ((s - a) / len).clamp(0.0, 1.0);
    0.5 * (1.0 - (std::f64::consts::PI * t).cos())
}

/// Plateau of height 1 between two ramps.
fn bump(s: f64, start: f64, end: f64, len: f64) -> f64 {
    ramp(s, start - len, len) * (1.0 - ramp(s, end, len))
}

struct Layout {
    /// Curvature of the base line as a function of arc length.
    curvature: Box<dyn Fn(f64) -> f64>,
    /// Lateral route offset from the base line.
    offset: Box<dyn Fn(f64) -> f64>,
    half_width: f64,
    command: Command,
    v0: f64,
    target_speed: f64,
}

/// Base-line poses from `-BEHIND` to `length` at 1 m spacing.
fn integrate_base(curvature: &dyn Fn(f64) -> f64, length: f64) -> Vec<(f64, Pose)> {
    let n = (length + BEHIND).round() as usize;
    let mut out = Vec::with_capacity(n + 1);
    let mut pose = Pose::new(0.0, 0.0, 0.0);
    let mut back = Vec::new();
    // Walk backwards first so that s = 0 sits at the origin.
    {
        let mut p = pose;
        for i in 1..=BEHIND as usize {
            let s = -(i as f64);
            let k = curvature(s + 0.5);
            p.heading -= k;
            p.x -= (p.heading + 0.5 * k).cos();
            p.y -= (p.heading + 0.5 * k).sin();
            back.push((s, p));
        }
    }
    back.reverse();
    out.extend(back);
    out.push((0.0, pose));
    for i in 1..=(n - BEHIND as usize) {
        let s = i as f64;
        let k = curvature(s - 0.5);
        let mid = pose.heading + 0.5 * k;
        pose.x += mid.cos();
        pose.y += mid.sin();
        pose.heading += k;
        out.push((s, pose));
    }
    out
}

fn lateral(p: &Pose, d: f64) -> Vec2 {
    p.position() + Vec2::from_angle(p.heading).perp().scale(d)
}

fn agent_at(base: &Polyline, s: f64, d: f64, length: f64, width: f64, speed: f64, steps: usize, dt: f64) -> AgentTrack {
    let dir = if speed < 0.0 { std::f64::consts::PI } else { 0.0 };
    let poses = (0..=steps)
        .map(|k| {
            let p = base.sample(s + speed * k as f64 * dt + BEHIND);
            let q = lateral(&p, d);
            Pose::new(q.x, q.y, p.heading + dir)
        })
        .collect();
    AgentTrack { length, width, poses }
}

fn vehicle_size(rng: &mut ChaCha8Rng) -> (f64, f64) {
    (rng.gen_range(4.2..5.0), rng.gen_range(1.7..2.0))
}

fn layout(kind: ScenarioKind, rng: &mut ChaCha8Rng) -> Layout {
    let flat = |_: f64| 0.0;
    match kind {
        ScenarioKind::Straight => {
            let v0 = rng.gen_range(3.0..14.0);
            Layout {
                curvature: Box::new(flat),
                offset: Box::new(flat),
                half_width: 0.5 * rng.gen_range(3.5..7.0),
                command: Command::Straight,
                v0,
                target_speed: rng.gen_range(5.0..15.0),
            }
        }
        ScenarioKind::CurveKeep => {
            let k = rng.gen_range(1.0 / 200.0..1.0 / 60.0) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            Layout {
                curvature: Box::new(move |_| k),
                offset: Box::new(flat),
                half_width: 0.5 * rng.gen_range(4.0..7.0),
                command: Command::Straight,
                v0: rng.gen_range(3.0..12.0),
                target_speed: rng.gen_range(5.0..12.0),
            }
        }
        ScenarioKind::LeftTurn | ScenarioKind::RightTurn => {
            let sign = if kind == ScenarioKind::LeftTurn { 1.0 } else { -1.0 };
            let radius = rng.gen_range(12.0..25.0);
            let entry = rng.gen_range(4.0..16.0);
            let arc = radius * std::f64::consts::FRAC_PI_2;
            Layout {
                curvature: Box::new(move |s| if s >= entry && s < entry + arc { sign / radius } else { 0.0 }),
                offset: Box::new(flat),
                half_width: 0.5 * rng.gen_range(5.0..7.0),
                command: if sign > 0.0 { Command::Left } else { Command::Right },
                v0: rng.gen_range(3.0..7.0),
                target_speed: rng.gen_range(4.0..4.0 + 0.12 * radius),
            }
        }
        ScenarioKind::Bypass => {
            let half_width = 0.5 * rng.gen_range(6.5..7.0);
            let lane = 0.5 * half_width;
            let v0 = rng.gen_range(3.0..8.0);
            Layout {
                curvature: Box::new(flat),
                // Filled in after the obstacle is placed.
                offset: Box::new(move |_| -lane),
                half_width,
                command: Command::Straight,
                v0,
                target_speed: rng.gen_range(5.0..8.0),
            }
        }
        ScenarioKind::Nudge => Layout {
            curvature: Box::new(flat),
            offset: Box::new(flat),
            half_width: 0.5 * rng.gen_range(5.0..7.0),
            command: Command::Straight,
            v0: rng.gen_range(3.0..10.0),
            target_speed: rng.gen_range(4.0..10.0),
        },
        ScenarioKind::LeadFollow => {
            let k = if rng.gen_bool(0.5) {
                0.0
            } else {
                rng.gen_range(1.0 / 300.0..1.0 / 100.0) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 }
            };
            Layout {
                curvature: Box::new(move |_| k),
                offset: Box::new(flat),
                half_width: 0.5 * rng.gen_range(3.5..7.0),
                command: Command::Straight,
                v0: rng.gen_range(2.0..9.0),
                target_speed: rng.gen_range(6.0..14.0),
            }
        }
    }
}

/// Builds the scene for `(seed, kind)`; deterministic in both. The ego's
/// previous action is the expert controller's command at step 0.
pub fn generate_scene(seed: u64, kind: ScenarioKind, cfg: &WorldConfig) -> Result<Scene> {
    let mut rng = stream_rng(seed, kind as u64);
    let steps = cfg.horizon;
    let dt = cfg.dt;
    let mut lay = layout(kind, &mut rng);
    let mut agents = Vec::new();

    let base_poses = integrate_base(&*lay.curvature, cfg.route_length);
    let base = Polyline::new(base_poses.iter().map(|(_, p)| p.position()).collect())
        .expect("route has many points");

    match kind {
        ScenarioKind::Bypass => {
            let lane = 0.5 * lay.half_width;
            let (len, wid) = vehicle_size(&mut rng);
            let s_obs = rng.gen_range(24.0..36.0);
            agents.push(agent_at(&base, s_obs, -lane, len, wid, 0.0, steps, dt));
            let (start, end) = (s_obs - 0.5 * len - 3.0, s_obs + 0.5 * len + 3.0);
            let ramp_len = 20.0;
            lay.offset = Box::new(move |s| -lane + 2.0 * lane * bump(s, start, end, ramp_len));
        }
        ScenarioKind::Nudge => {
            let side = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            let (len, wid) = vehicle_size(&mut rng);
            let intrusion = rng.gen_range(0.2..1.0);
            let s_obs = rng.gen_range(18.0..34.0);
            let hw = lay.half_width;
            agents.push(agent_at(&base, s_obs, side * (hw - intrusion + 0.5 * wid), len, wid, 0.0, steps, dt));
            let shift = (1.9 + intrusion - hw).max(0.3).min(hw - 1.5);
            let (start, end) = (s_obs - 0.5 * len - 2.0, s_obs + 0.5 * len + 2.0);
            lay.offset = Box::new(move |s| -side * shift * bump(s, start, end, 15.0));
        }
        _ => {}
    }

    let route_pts: Vec<Vec2> = base_poses
        .iter()
        .filter(|(s, _)| *s >= 0.0)
        .map(|(s, p)| lateral(p, (lay.offset)(*s)))
        .collect();
    let route = Polyline::new(route_pts.clone()).expect("route has many points");

    if kind == ScenarioKind::LeadFollow {
        let (len, wid) = vehicle_size(&mut rng);
        let stopped = rng.gen_bool(0.5);
        let v0 = lay.v0;
        let (gap, speed) = if stopped {
            (3.5 + 0.3 * v0 + v0 * v0 / 5.5 + rng.gen_range(0.0..1.5), 0.0)
        } else {
            (rng.gen_range(12.0..30.0), rng.gen_range(2.0..lay.target_speed.min(10.0)))
        };
        let s_lead = gap + 0.5 * (EGO_LENGTH + len);
        let poses = (0..=steps)
            .map(|k| route.sample(s_lead + speed * k as f64 * dt))
            .collect();
        agents.push(AgentTrack {
            length: len,
            width: wid,
            poses,
        });
    }

    let distractors = rng.gen_range(0..=(4 - agents.len()).min(2));
    for _ in 0..distractors {
        let (len, wid) = vehicle_size(&mut rng);
        let side = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        let d = side * (lay.half_width + 1.5 + 0.5 * wid + rng.gen_range(0.0..4.0));
        let s = rng.gen_range(-5.0..80.0);
        let speed = if rng.gen_bool(0.5) {
            0.0
        } else {
            rng.gen_range(2.0..12.0) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 }
        };
        agents.push(agent_at(&base, s, d, len, wid, speed, steps, dt));
    }

    let left: Vec<Vec2> = base_poses.iter().map(|(_, p)| lateral(p, lay.half_width)).collect();
    let right: Vec<Vec2> = base_poses.iter().map(|(_, p)| lateral(p, -lay.half_width)).collect();
    let mut corridor = left.clone();
    corridor.extend(right.iter().rev());

    let start = route.sample(0.0);
    let world = Frame::new(
        Vec2::new(rng.gen_range(-500.0..500.0), rng.gen_range(-500.0..500.0)),
        rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI),
    );
    let local = Scene {
        version: SCENE_VERSION,
        kind,
        seed,
        command: lay.command,
        dt,
        horizon: steps,
        target_speed: lay.target_speed,
        centerline: route_pts,
        left_boundary: left,
        right_boundary: right,
        corridor,
        agents,
        ego_init: EgoState {
            x: start.x,
            y: start.y,
            v: lay.v0,
            theta: start.heading,
            frame_time: 0,
        },
        ego_prev_action: Default::default(),
    };
    let mut scene = local.transformed(&world);
    scene.validate()?;
    scene.ego_prev_action = super::expert::initial_command(&scene, &MetricConfig::default())?;
    Ok(scene)
}
