//! The joint discrete action vocabulary: codec, inverse label derivation from
//! continuous trajectories, and relabeling with the derived actions.

pub mod naive;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{self, advance_unchecked, EgoState, KinematicAction, Trajectory};

/// Label derivation settings. The fit error of a rolled-out state against a
/// waypoint is `|Δp|² + heading_weight·Δθ² + speed_weight·Δv²`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LabelConfig {
    /// Waypoints scored per candidate.
    pub horizon: usize,
    /// m² per rad².
    pub heading_weight: f64,
    /// m² per (m/s)².
    pub speed_weight: f64,
}

impl Default for LabelConfig {
    fn default() -> Self {
        Self {
            horizon: 3,
            heading_weight: 4.0,
            speed_weight: 0.25,
        }
    }
}

impl LabelConfig {
    /// Summed squared position error only.
    pub fn positions_only(horizon: usize) -> Self {
        Self {
            horizon,
            heading_weight: 0.0,
            speed_weight: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::Config("labels: horizon must be at least 1".into()));
        }
        if !(self.heading_weight >= 0.0 && self.speed_weight >= 0.0) {
            return Err(Error::Config("labels: weights must be non-negative".into()));
        }
        Ok(())
    }

    pub fn error(&self, s: &EgoState, g: &EgoState) -> f64 {
        (s.x - g.x).powi(2)
            + (s.y - g.y).powi(2)
            + self.heading_weight * (s.theta - g.theta).powi(2)
            + self.speed_weight * (s.v - g.v).powi(2)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VocabConfig {
    pub accel_bins: usize,
    pub accel_range: [f64; 2],
    pub yaw_bins: usize,
    pub yaw_range: [f64; 2],
    pub labels: LabelConfig,
}

impl Default for VocabConfig {
    fn default() -> Self {
        Self {
            accel_bins: 128,
            accel_range: [-12.5, 12.5],
            yaw_bins: 64,
            yaw_range: [-1.5, 1.5],
            labels: LabelConfig::default(),
        }
    }
}

impl VocabConfig {
    /// 32 × 16 bins over the default ranges.
    pub fn fast() -> Self {
        Self {
            accel_bins: 32,
            yaw_bins: 16,
            ..Self::default()
        }
    }

    pub fn size(&self) -> usize {
        self.accel_bins * self.yaw_bins
    }

    pub fn accel_width(&self) -> f64 {
        (self.accel_range[1] - self.accel_range[0]) / self.accel_bins as f64
    }

    pub fn yaw_width(&self) -> f64 {
        (self.yaw_range[1] - self.yaw_range[0]) / self.yaw_bins as f64
    }

    pub fn validate(&self) -> Result<()> {
        let ok_range = |r: [f64; 2]| r[0].is_finite() && r[1].is_finite() && r[0] < r[1];
        if self.accel_bins == 0 || self.yaw_bins == 0 {
            return Err(Error::Config("vocab bin counts must be at least 1".into()));
        }
        if !ok_range(self.accel_range) || !ok_range(self.yaw_range) {
            return Err(Error::Config("vocab ranges need finite lo < hi".into()));
        }
        if self.size() > u32::MAX as usize {
            return Err(Error::Config("vocabulary too large".into()));
        }
        self.labels.validate()
    }
}

/// Index into the joint vocabulary, `accel_index · yaw_bins + yaw_index`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ActionId(pub u32);

impl ActionId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

fn axis_index(axis: &'static str, value: f64, range: [f64; 2], bins: usize) -> Result<usize> {
    let [lo, hi] = range;
    if !(value >= lo && value <= hi) {
        return Err(Error::OutOfVocabulary { axis, value, lo, hi });
    }
    let width = (hi - lo) / bins as f64;
    let idx = ((value - lo) / width).floor() as usize;
    Ok(idx.min(bins - 1))
}

pub fn encode(action: &KinematicAction, cfg: &VocabConfig) -> Result<ActionId> {
    let ai = axis_index("accel", action.accel, cfg.accel_range, cfg.accel_bins)?;
    let yi = axis_index("yaw_rate", action.yaw_rate, cfg.yaw_range, cfg.yaw_bins)?;
    Ok(ActionId((ai * cfg.yaw_bins + yi) as u32))
}

/// Bin center of `id`.
pub fn decode(id: ActionId, cfg: &VocabConfig) -> Result<KinematicAction> {
    if id.index() >= cfg.size() {
        return Err(Error::domain(
            "decode",
            format!("id {} outside vocabulary of {}", id.0, cfg.size()),
        ));
    }
    let (ai, yi) = (id.index() / cfg.yaw_bins, id.index() % cfg.yaw_bins);
    Ok(KinematicAction {
        accel: cfg.accel_range[0] + (ai as f64 + 0.5) * cfg.accel_width(),
        yaw_rate: cfg.yaw_range[0] + (yi as f64 + 0.5) * cfg.yaw_width(),
    })
}

/// All bin centers in id order.
#[derive(Clone, Debug)]
pub struct Vocabulary {
    cfg: VocabConfig,
    actions: Vec<KinematicAction>,
}

impl Vocabulary {
    pub fn new(cfg: &VocabConfig) -> Result<Self> {
        cfg.validate()?;
        let actions = (0..cfg.size() as u32)
            .map(|i| decode(ActionId(i), cfg))
            .collect::<Result<_>>()?;
        Ok(Self {
            cfg: cfg.clone(),
            actions,
        })
    }

    pub fn config(&self) -> &VocabConfig {
        &self.cfg
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn action(&self, id: ActionId) -> Result<KinematicAction> {
        self.actions
            .get(id.index())
            .copied()
            .ok_or_else(|| Error::domain("decode", format!("id {} outside vocabulary", id.0)))
    }

    pub fn actions(&self) -> &[KinematicAction] {
        &self.actions
    }
}

/// Lowest-error id over the whole vocabulary, earliest id on ties.
fn best_id(vocab: &Vocabulary, mut err: impl FnMut(&KinematicAction) -> f64) -> usize {
    let mut best = (f64::INFINITY, 0usize);
    for (i, a) in vocab.actions.iter().enumerate() {
        let e = err(a);
        if e < best.0 {
            best = (e, i);
        }
    }
    best.1
}

/// Recovers one action id per step of `gt` by inverse search over the
/// vocabulary.
///
/// A first pass fits each step greedily against the next waypoint. The second
/// pass then scores, at every step, each candidate action followed by the
/// first-pass actions of the next steps over `min(horizon, T − i)` waypoints,
/// commits the argmin (lowest id on ties) for one step and moves on from the
/// committed state. Error is summed over waypoints per [`LabelConfig::error`].
pub fn derive_labels(gt: &Trajectory, vocab: &Vocabulary, cfg: &LabelConfig) -> Result<Vec<ActionId>> {
    cfg.validate()?;
    let horizon = cfg.horizon;
    let t = gt.steps();
    if t == 0 {
        return Err(Error::domain("derive_labels", "trajectory needs at least 2 waypoints"));
    }
    if !(gt.dt > 0.0) || gt.states.iter().any(|s| !s.is_finite()) {
        return Err(Error::domain("derive_labels", "non-finite trajectory or dt"));
    }
    let dt = gt.dt;
    let wp = &gt.states;

    let mut greedy = Vec::with_capacity(t);
    let mut cur = wp[0];
    for i in 0..t {
        let id = best_id(vocab, |a| cfg.error(&advance_unchecked(&cur, a, dt), &wp[i + 1]));
        cur = advance_unchecked(&cur, &vocab.actions[id], dt);
        greedy.push(id);
    }

    let mut labels = Vec::with_capacity(t);
    let mut cur = wp[0];
    for i in 0..t {
        let h = horizon.min(t - i);
        let id = best_id(vocab, |a| {
            let mut s = advance_unchecked(&cur, a, dt);
            let mut e = cfg.error(&s, &wp[i + 1]);
            for j in 1..h {
                s = advance_unchecked(&s, &vocab.actions[greedy[i + j]], dt);
                e += cfg.error(&s, &wp[i + 1 + j]);
            }
            e
        });
        cur = advance_unchecked(&cur, &vocab.actions[id], dt);
        labels.push(ActionId(id as u32));
    }
    Ok(labels)
}

/// Rollout of the decoded `labels`; replaces the original ground truth.
pub fn relabel_trajectory(initial: &EgoState, labels: &[ActionId], vocab: &Vocabulary, dt: f64) -> Result<Trajectory> {
    let actions = labels.iter().map(|&id| vocab.action(id)).collect::<Result<Vec<_>>>()?;
    kinematics::rollout(initial, &actions, dt)
}

/// True when every finite-difference acceleration and yaw rate of `gt` lies
/// within the vocabulary ranges (inclusive).
pub fn filter_segment(gt: &Trajectory, cfg: &VocabConfig) -> bool {
    gt.dt > 0.0
        && gt.states.windows(2).all(|w| {
            let a = (w[1].v - w[0].v) / gt.dt;
            let yaw = (w[1].theta - w[0].theta) / gt.dt;
            a >= cfg.accel_range[0] && a <= cfg.accel_range[1] && yaw >= cfg.yaw_range[0] && yaw <= cfg.yaw_range[1]
        })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corners_and_center() {
        let cfg = VocabConfig::default();
        assert_eq!(encode(&KinematicAction::new(-12.5, -1.5), &cfg).unwrap(), ActionId(0));
        assert_eq!(encode(&KinematicAction::new(12.5, 1.5), &cfg).unwrap(), ActionId(8191));
        assert_eq!(encode(&KinematicAction::new(0.0, 0.0), &cfg).unwrap(), ActionId(4128));
        assert!(matches!(
            encode(&KinematicAction::new(12.5 + 1e-9, 0.0), &cfg),
            Err(Error::OutOfVocabulary { axis: "accel", .. })
        ));
        assert!(encode(&KinematicAction::new(0.0, f64::NAN), &cfg).is_err());
    }

    #[test]
    fn bin_centers() {
        let cfg = VocabConfig::default();
        assert_eq!(decode(ActionId(0), &cfg).unwrap(), KinematicAction::new(-12.40234375, -1.4765625));
        assert_eq!(decode(ActionId(4128), &cfg).unwrap(), KinematicAction::new(0.09765625, 0.0234375));
        assert!(decode(ActionId(8192), &cfg).is_err());
    }

    #[test]
    fn filter_boundaries() {
        let cfg = VocabConfig::default();
        let mk = |vs: &[f64]| Trajectory {
            states: vs.iter().map(|&v| EgoState::origin(v)).collect(),
            dt: 0.5,
        };
        assert!(filter_segment(&mk(&[10.0, 10.0, 10.0]), &cfg));
        assert!(!filter_segment(&mk(&[0.0, 20.0]), &cfg));
        assert!(filter_segment(&mk(&[0.0, 6.25]), &cfg));
    }

    #[test]
    fn stationary_labels_are_deterministic() {
        let vocab = Vocabulary::new(&VocabConfig::fast()).unwrap();
        let gt = Trajectory {
            states: vec![EgoState::origin(0.0); 9],
            dt: 0.5,
        };
        let a = derive_labels(&gt, &vocab, &LabelConfig::default()).unwrap();
        assert_eq!(a, derive_labels(&gt, &vocab, &LabelConfig::default()).unwrap());
        assert_eq!(a.len(), 8);
    }
}
