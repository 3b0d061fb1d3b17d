//! Reference driver: pure-pursuit steering on the route plus a speed
//! controller that slows for blocking agents, simulated finely and sampled
//! at the planning interval.

use crate::action_space::{filter_segment, VocabConfig};
use crate::error::{Error, Result};
use crate::geometry::{Frame, Polyline, Pose, Vec2};
use crate::kinematics::{advance_unchecked, EgoState, KinematicAction, Trajectory};
use crate::metrics::{MetricConfig, Scorer};

use super::scene::Scene;

/// Lookahead gains tried in order; each retry uses the next one.
pub const LOOKAHEAD_GAINS: [f64; 5] = [0.9, 0.7, 1.15, 0.55, 1.4];

const SIM_DT: f64 = 0.05;
const HEADWAY: f64 = 0.3;
const PLANNING_DECEL: f64 = 2.5;
const STANDSTILL_GAP: f64 = 3.0;
const MAX_ACCEL: f64 = 2.0;
const MAX_BRAKE: f64 = 4.0;
const MAX_JERK: f64 = 5.0;
const MAX_YAW_RATE: f64 = 0.85;
const MAX_YAW_ACCEL: f64 = 1.2;
const SPEED_GAIN: f64 = 2.0;

struct Controller<'a> {
    scene: &'a Scene,
    route: Polyline,
    gain: f64,
    ego_length: f64,
    ego_width: f64,
}

impl Controller<'_> {
    /// Desired speed given agents ahead on the route at time `t`.
    fn speed_target(&self, pos: Vec2, t: f64) -> f64 {
        let me = self.route.project(pos);
        let mut v = self.scene.target_speed;
        for a in &self.scene.agents {
            let k = t / self.scene.dt;
            let (k0, frac) = (k.floor() as usize, k.fract());
            let p0 = a.pose(k0).position();
            let p1 = a.pose(k0 + 1).position();
            let ap = p0 + (p1 - p0).scale(frac);
            let proj = self.route.project(ap);
            if proj.distance > 0.5 * (self.ego_width + a.width) + 0.4 || proj.s <= me.s {
                continue;
            }
            let gap = proj.s - me.s - 0.5 * (self.ego_length + a.length);
            let lead_speed = a.velocity(k0, self.scene.dt).norm();
            let effective = gap + lead_speed * lead_speed / (2.0 * PLANNING_DECEL) - STANDSTILL_GAP;
            let safe = if effective <= 0.0 {
                0.0
            } else {
                let bt = PLANNING_DECEL * HEADWAY;
                -bt + (bt * bt + 2.0 * PLANNING_DECEL * effective).sqrt()
            };
            v = v.min(safe);
        }
        v
    }

    fn yaw_target(&self, pose: &Pose, v: f64) -> f64 {
        let lookahead = (self.gain * v.abs() + 2.0).max(3.0);
        let me = self.route.project(pose.position());
        let goal = self.route.sample(me.s + lookahead).position();
        let local = Frame::new(pose.position(), pose.heading).to_local(goal);
        let dist2 = local.x * local.x + local.y * local.y;
        let curvature = if dist2 > 1e-9 { 2.0 * local.y / dist2 } else { 0.0 };
        (v * curvature).clamp(-MAX_YAW_RATE, MAX_YAW_RATE)
    }

    fn command(&self, pose: &Pose, v: f64, t: f64) -> KinematicAction {
        let v_des = self.speed_target(pose.position(), t);
        KinematicAction {
            accel: (SPEED_GAIN * (v_des - v)).clamp(-MAX_BRAKE, MAX_ACCEL),
            yaw_rate: self.yaw_target(pose, v),
        }
    }
}

fn controller<'a>(scene: &'a Scene, gain: f64, metrics: &MetricConfig) -> Result<Controller<'a>> {
    Ok(Controller {
        scene,
        route: scene.route()?,
        gain,
        ego_length: metrics.ego_length,
        ego_width: metrics.ego_width,
    })
}

/// The controller's command at step 0 with the first lookahead gain.
pub fn initial_command(scene: &Scene, metrics: &MetricConfig) -> Result<KinematicAction> {
    let c = controller(scene, LOOKAHEAD_GAINS[0], metrics)?;
    let e = &scene.ego_init;
    Ok(c.command(&Pose::new(e.x, e.y, e.theta), e.v, 0.0))
}

/// Closed-loop simulation with one lookahead gain, sampled every `scene.dt`
/// and expressed in the ego frame at step 0.
pub fn simulate(scene: &Scene, gain: f64, metrics: &MetricConfig) -> Result<Trajectory> {
    let c = controller(scene, gain, metrics)?;
    let sub = (scene.dt / SIM_DT).round().max(1.0) as usize;
    let h = scene.dt / sub as f64;
    let mut state = EgoState { frame_time: 0, ..scene.ego_init };
    let mut applied = scene.ego_prev_action;
    let frame = scene.ego_frame();
    let to_ego = |s: &EgoState| {
        let p = frame.to_local(Vec2::new(s.x, s.y));
        EgoState {
            x: p.x,
            y: p.y,
            v: s.v,
            theta: s.theta - scene.ego_init.theta,
            frame_time: 0,
        }
    };
    let mut states = vec![to_ego(&state)];
    for k in 0..scene.horizon {
        for j in 0..sub {
            let t = (k * sub + j) as f64 * h;
            let want = c.command(&Pose::new(state.x, state.y, state.theta), state.v, t);
            let mut accel = applied.accel + (want.accel - applied.accel).clamp(-MAX_JERK * h, MAX_JERK * h);
            if state.v + accel * h < 0.0 {
                accel = -state.v / h;
            }
            let yaw_rate =
                applied.yaw_rate + (want.yaw_rate - applied.yaw_rate).clamp(-MAX_YAW_ACCEL * h, MAX_YAW_ACCEL * h);
            applied = KinematicAction { accel, yaw_rate };
            state = advance_unchecked(&state, &applied, h);
        }
        states.push(to_ego(&state));
    }
    Ok(Trajectory { states, dt: scene.dt })
}

/// Expert trajectory for `scene`, retrying with other lookahead gains until
/// the result passes the range filter and scores clean on collisions,
/// drivable area, TTC and comfort.
pub fn expert_rollout(scene: &Scene, vocab: &VocabConfig, metrics: &MetricConfig) -> Result<Trajectory> {
    let mut last = String::new();
    for &gain in &LOOKAHEAD_GAINS {
        let traj = simulate(scene, gain, metrics)?;
        if !filter_segment(&traj, vocab) {
            last = "outside action ranges".into();
            continue;
        }
        let sub = Scorer::new(scene, &traj, metrics)?.score(&traj)?;
        if sub.nc * sub.dac * sub.ttc * sub.comfort == 1.0 {
            return Ok(traj);
        }
        last = format!(
            "nc={} dac={} ttc={} comfort={}",
            sub.nc, sub.dac, sub.ttc, sub.comfort
        );
    }
    Err(Error::SceneDiscarded {
        attempts: LOOKAHEAD_GAINS.len(),
        reason: last,
    })
}
