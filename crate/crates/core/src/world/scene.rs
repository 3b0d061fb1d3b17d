use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{polygon_self_intersects, Frame, OrientedBox, Polyline, Pose, Vec2};
use crate::kinematics::{EgoState, KinematicAction, Trajectory};

/// Version of the scene JSON layout.
pub const SCENE_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ScenarioKind {
    Straight,
    CurveKeep,
    LeftTurn,
    RightTurn,
    Bypass,
    Nudge,
    LeadFollow,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 7] = [
        ScenarioKind::Straight,
        ScenarioKind::CurveKeep,
        ScenarioKind::LeftTurn,
        ScenarioKind::RightTurn,
        ScenarioKind::Bypass,
        ScenarioKind::Nudge,
        ScenarioKind::LeadFollow,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::Straight => "STRAIGHT",
            ScenarioKind::CurveKeep => "CURVE_KEEP",
            ScenarioKind::LeftTurn => "LEFT_TURN",
            ScenarioKind::RightTurn => "RIGHT_TURN",
            ScenarioKind::Bypass => "BYPASS",
            ScenarioKind::Nudge => "NUDGE",
            ScenarioKind::LeadFollow => "LEAD_FOLLOW",
        }
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScenarioKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ScenarioKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::domain("scenario kind", format!("unknown kind {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Command {
    Left,
    Straight,
    Right,
}

impl Command {
    pub fn index(self) -> usize {
        match self {
            Command::Left => 0,
            Command::Straight => 1,
            Command::Right => 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentTrack {
    pub length: f64,
    pub width: f64,
    /// One world pose per step, at least `T + 1` of them.
    pub poses: Vec<Pose>,
}

impl AgentTrack {
    /// Pose at step `k`, holding the last pose beyond the recorded track.
    pub fn pose(&self, k: usize) -> Pose {
        self.poses[k.min(self.poses.len() - 1)]
    }

    pub fn footprint(&self, k: usize) -> OrientedBox {
        OrientedBox::at(&self.pose(k), self.length, self.width)
    }

    /// Finite-difference world velocity at step `k`.
    pub fn velocity(&self, k: usize, dt: f64) -> Vec2 {
        let n = self.poses.len();
        if n < 2 {
            return Vec2::default();
        }
        let (a, b) = if k + 1 < n { (k, k + 1) } else { (n - 2, n - 1) };
        (self.poses[b].position() - self.poses[a].position()).scale(1.0 / dt)
    }
}

/// A synthetic driving scene in world coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub version: u32,
    pub kind: ScenarioKind,
    pub seed: u64,
    pub command: Command,
    pub dt: f64,
    pub horizon: usize,
    pub target_speed: f64,
    /// Route to follow, 1 m spacing.
    pub centerline: Vec<Vec2>,
    pub left_boundary: Vec<Vec2>,
    pub right_boundary: Vec<Vec2>,
    /// Drivable area: left boundary forward, then right boundary backward.
    pub corridor: Vec<Vec2>,
    pub agents: Vec<AgentTrack>,
    /// World pose and speed of the ego at step 0.
    pub ego_init: EgoState,
    /// Command the ego was executing just before step 0.
    pub ego_prev_action: KinematicAction,
}

impl Scene {
    /// The ego frame at step 0; trajectories are expressed in it.
    pub fn ego_frame(&self) -> Frame {
        Frame::new(Vec2::new(self.ego_init.x, self.ego_init.y), self.ego_init.theta)
    }

    /// The ego at the origin of its own frame.
    pub fn initial_state(&self) -> EgoState {
        EgoState::origin(self.ego_init.v)
    }

    pub fn route(&self) -> Result<Polyline> {
        Polyline::new(self.centerline.clone()).ok_or_else(|| Error::domain("scene", "centerline has fewer than 2 points"))
    }

    /// World poses of an ego-frame trajectory.
    pub fn world_poses(&self, traj: &Trajectory) -> Vec<Pose> {
        let frame = self.ego_frame();
        traj.states
            .iter()
            .map(|s| frame.pose_to_parent(&Pose::new(s.x, s.y, s.theta)))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != SCENE_VERSION {
            return Err(Error::format(
                "scene",
                format!("version {} (expected {SCENE_VERSION})", self.version),
            ));
        }
        if !(self.dt > 0.0) || self.horizon == 0 {
            return Err(Error::domain("scene", "dt and horizon must be positive"));
        }
        if self.centerline.len() < 2 || self.corridor.len() < 3 {
            return Err(Error::domain("scene", "centerline or corridor too short"));
        }
        if self.agents.iter().any(|a| a.poses.len() < self.horizon + 1 || a.length <= 0.0 || a.width <= 0.0) {
            return Err(Error::domain("scene", "agent track shorter than the horizon or with empty footprint"));
        }
        if polygon_self_intersects(&self.corridor) {
            return Err(Error::domain("scene", "corridor polygon self-intersects"));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Parses and validates a scene.
    pub fn from_json(text: &str) -> Result<Self> {
        let scene: Scene = serde_json::from_str(text).map_err(|e| Error::format("scene", e.to_string()))?;
        scene.validate()?;
        Ok(scene)
    }

    /// The same scene moved by the rigid motion `frame` (local → parent).
    pub fn transformed(&self, frame: &Frame) -> Scene {
        let pts = |v: &[Vec2]| v.iter().map(|&p| frame.to_parent(p)).collect::<Vec<_>>();
        let ego = frame.pose_to_parent(&Pose::new(self.ego_init.x, self.ego_init.y, self.ego_init.theta));
        Scene {
            centerline: pts(&self.centerline),
            left_boundary: pts(&self.left_boundary),
            right_boundary: pts(&self.right_boundary),
            corridor: pts(&self.corridor),
            agents: self
                .agents
                .iter()
                .map(|a| AgentTrack {
                    poses: a.poses.iter().map(|p| frame.pose_to_parent(p)).collect(),
                    ..a.clone()
                })
                .collect(),
            ego_init: EgoState {
                x: ego.x,
                y: ego.y,
                theta: ego.heading,
                ..self.ego_init
            },
            ..self.clone()
        }
    }
}
