//! PDMS-style scoring: no-collision, drivable-area compliance,
//! time-to-collision, comfort and ego progress, and their composite.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{obb_overlap, point_in_polygon, OrientedBox, Polyline, Pose, Vec2};
use crate::kinematics::Trajectory;
use crate::world::Scene;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricConfig {
    pub weight_ttc: f64,
    pub weight_comfort: f64,
    pub weight_ep: f64,
    /// Constant-velocity projection horizon for TTC, seconds.
    pub ttc_horizon: f64,
    pub ttc_sample_dt: f64,
    pub max_accel: f64,
    pub max_jerk: f64,
    pub max_yaw_rate: f64,
    pub max_yaw_accel: f64,
    pub ego_length: f64,
    pub ego_width: f64,
    /// Expert progress below this makes EP trivially 1.
    pub min_expert_progress: f64,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self {
            weight_ttc: 5.0,
            weight_comfort: 2.0,
            weight_ep: 5.0,
            ttc_horizon: 1.0,
            ttc_sample_dt: 0.1,
            max_accel: 4.5,
            max_jerk: 8.0,
            max_yaw_rate: 0.95,
            max_yaw_accel: 1.9,
            ego_length: 4.6,
            ego_width: 1.8,
            min_expert_progress: 0.1,
        }
    }
}

impl MetricConfig {
    pub fn divisor(&self) -> f64 {
        self.weight_ttc + self.weight_comfort + self.weight_ep
    }

    pub fn validate(&self) -> Result<()> {
        if [self.weight_ttc, self.weight_comfort, self.weight_ep].iter().any(|w| !(*w > 0.0)) {
            return Err(Error::Config("metric weights must be positive".into()));
        }
        if !(self.ttc_horizon >= 0.0) || !(self.ttc_sample_dt > 0.0) {
            return Err(Error::Config("ttc horizon must be non-negative and sample step positive".into()));
        }
        if !(self.ego_length > 0.0 && self.ego_width > 0.0) {
            return Err(Error::Config("ego footprint must be positive".into()));
        }
        Ok(())
    }
}

/// Binary sub-scores are `0.0` or `1.0`; `ep` is in `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubScores {
    pub nc: f64,
    pub dac: f64,
    pub ttc: f64,
    pub comfort: f64,
    pub ep: f64,
}

impl SubScores {
    pub const PERFECT: SubScores = SubScores {
        nc: 1.0,
        dac: 1.0,
        ttc: 1.0,
        comfort: 1.0,
        ep: 1.0,
    };
}

fn flag(ok: bool) -> f64 {
    if ok {
        1.0
    } else {
        0.0
    }
}

pub fn pdms(sub: &SubScores, cfg: &MetricConfig) -> f64 {
    sub.nc * sub.dac * (cfg.weight_ttc * sub.ttc + cfg.weight_comfort * sub.comfort + cfg.weight_ep * sub.ep)
        / cfg.divisor()
}

/// Comfort from finite differences of speed and heading.
pub fn comfort_ok(traj: &Trajectory, cfg: &MetricConfig) -> bool {
    let dt = traj.dt;
    let accel: Vec<f64> = traj.states.windows(2).map(|w| (w[1].v - w[0].v) / dt).collect();
    let yaw: Vec<f64> = traj.states.windows(2).map(|w| (w[1].theta - w[0].theta) / dt).collect();
    let within = |xs: &[f64], lim: f64| xs.iter().all(|x| x.abs() <= lim);
    let diff = |xs: &[f64]| xs.windows(2).map(|w| (w[1] - w[0]) / dt).collect::<Vec<_>>();
    within(&accel, cfg.max_accel)
        && within(&yaw, cfg.max_yaw_rate)
        && within(&diff(&accel), cfg.max_jerk)
        && within(&diff(&yaw), cfg.max_yaw_accel)
}

/// Scores trajectories against one scene, caching the expert's progress.
#[derive(Clone, Debug)]
pub struct Scorer<'a> {
    scene: &'a Scene,
    route: Polyline,
    cfg: MetricConfig,
    expert_progress: f64,
}

impl<'a> Scorer<'a> {
    pub fn new(scene: &'a Scene, expert: &Trajectory, cfg: &MetricConfig) -> Result<Self> {
        let mut scorer = Self {
            scene,
            route: scene.route()?,
            cfg: cfg.clone(),
            expert_progress: 0.0,
        };
        scorer.check_alignment(expert)?;
        scorer.expert_progress = scorer.progress(&scene.world_poses(expert));
        Ok(scorer)
    }

    pub fn expert_progress(&self) -> f64 {
        self.expert_progress
    }

    fn check_alignment(&self, traj: &Trajectory) -> Result<()> {
        if traj.steps() != self.scene.horizon || (traj.dt - self.scene.dt).abs() > 1e-12 {
            return Err(Error::domain(
                "score_trajectory",
                format!(
                    "trajectory has {} steps at dt {}, scene expects {} at {}",
                    traj.steps(),
                    traj.dt,
                    self.scene.horizon,
                    self.scene.dt
                ),
            ));
        }
        Ok(())
    }

    fn progress(&self, poses: &[Pose]) -> f64 {
        let first = poses.first().map(|p| self.route.project(p.position()).s).unwrap_or(0.0);
        let last = poses.last().map(|p| self.route.project(p.position()).s).unwrap_or(0.0);
        last - first
    }

    fn ego_box(&self, p: &Pose) -> OrientedBox {
        OrientedBox::at(p, self.cfg.ego_length, self.cfg.ego_width)
    }

    pub fn score(&self, traj: &Trajectory) -> Result<SubScores> {
        self.check_alignment(traj)?;
        if traj.states.iter().any(|s| !s.is_finite()) {
            return Err(Error::Numerical("non-finite trajectory state".into()));
        }
        let poses = self.scene.world_poses(traj);
        let agents = &self.scene.agents;
        let dt = self.scene.dt;

        let collided = poses.iter().enumerate().any(|(k, p)| {
            let ego = self.ego_box(p);
            agents.iter().any(|a| obb_overlap(&ego, &a.footprint(k)))
        });
        let nc = flag(!collided);

        let dac = flag(poses.iter().all(|p| {
            self.ego_box(p)
                .corners()
                .iter()
                .all(|&c| point_in_polygon(c, &self.scene.corridor))
        }));

        let samples = (self.cfg.ttc_horizon / self.cfg.ttc_sample_dt).round() as usize;
        let ttc_hit = collided
            || poses.iter().enumerate().any(|(k, p)| {
                let ego_vel = Vec2::from_angle(p.heading).scale(traj.states[k].v);
                agents.iter().any(|a| {
                    let av = a.velocity(k, dt);
                    let ap = a.pose(k);
                    (1..=samples).any(|j| {
                        let t = j as f64 * self.cfg.ttc_sample_dt;
                        let e = OrientedBox::new(p.position() + ego_vel.scale(t), p.heading, self.cfg.ego_length, self.cfg.ego_width);
                        let o = OrientedBox::new(ap.position() + av.scale(t), ap.heading, a.length, a.width);
                        obb_overlap(&e, &o)
                    })
                })
            });
        let ttc = flag(!ttc_hit);

        let comfort = flag(comfort_ok(traj, &self.cfg));

        let ep = if self.expert_progress < self.cfg.min_expert_progress {
            1.0
        } else {
            (self.progress(&poses) / self.expert_progress).clamp(0.0, 1.0)
        };
        Ok(SubScores {
            nc,
            dac,
            ttc,
            comfort,
            ep,
        })
    }

    pub fn pdms(&self, traj: &Trajectory) -> Result<(SubScores, f64)> {
        let sub = self.score(traj)?;
        Ok((sub, pdms(&sub, &self.cfg)))
    }
}

/// One-shot scoring; prefer [`Scorer`] when scoring many trajectories on the
/// same scene.
pub fn score_trajectory(traj: &Trajectory, scene: &Scene, expert: &Trajectory, cfg: &MetricConfig) -> Result<SubScores> {
    Scorer::new(scene, expert, cfg)?.score(traj)
}
