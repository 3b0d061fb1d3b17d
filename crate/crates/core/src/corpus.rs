//! Scene corpora: seeded generation with expert references, train/test
//! splits, imitation samples and policy evaluation.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::action_space::{derive_labels, relabel_trajectory, ActionId, VocabConfig, Vocabulary};
use crate::error::{Error, Result};
use crate::kinematics::{EgoState, Trajectory};
use crate::metrics::{pdms, MetricConfig, Scorer, SubScores};
use crate::planner::{DecodeMode, Planner};
use crate::train::Sample;
use crate::world::rng::{derive_seed, stage_seed};
use crate::world::{expert_rollout, generate_scene, tokenize_scene, Scene, TokenBundle, WorldConfig};

/// A scene with its expert reference and step-0 tokens.
#[derive(Clone, Debug)]
pub struct SceneItem {
    pub id: String,
    pub index: usize,
    pub scene: Scene,
    pub expert: Trajectory,
    pub tokens: TokenBundle,
}

impl SceneItem {
    pub fn new(id: String, index: usize, scene: Scene, expert: Trajectory, n_map: usize) -> Result<Self> {
        let tokens = tokenize_scene(&scene, n_map)?;
        Ok(Self {
            id,
            index,
            scene,
            expert,
            tokens,
        })
    }

    pub fn initial(&self) -> EgoState {
        self.scene.initial_state()
    }

    pub fn scorer<'a>(&'a self, metrics: &MetricConfig) -> Result<Scorer<'a>> {
        Scorer::new(&self.scene, &self.expert, metrics)
    }

    /// Imitation sample from labels derived off the expert trajectory.
    pub fn imitation_sample(&self, vocab: &Vocabulary) -> Result<Sample> {
        let labels = derive_labels(&self.expert, vocab, &vocab.config().labels)?;
        self.sample_with_labels(vocab, labels)
    }

    pub fn sample_with_labels(&self, vocab: &Vocabulary, labels: Vec<ActionId>) -> Result<Sample> {
        let mut states = relabel_trajectory(&self.initial(), &labels, vocab, self.scene.dt)?.states;
        states.pop();
        Ok(Sample {
            id: self.id.clone(),
            tokens: self.tokens.clone(),
            states,
            labels,
        })
    }
}

pub fn scene_id(index: usize) -> String {
    format!("scene_{index:05}")
}

/// Seed and kind of corpus scene `index`; kinds cycle so every split is
/// balanced.
pub fn scene_spec(seed: u64, index: usize, world: &WorldConfig) -> Result<(u64, crate::world::ScenarioKind)> {
    if world.kinds.is_empty() {
        return Err(Error::Config("world.kinds must not be empty".into()));
    }
    Ok((
        derive_seed(stage_seed(seed, "world"), index as u64),
        world.kinds[index % world.kinds.len()],
    ))
}

/// Generates `world.scenes` scenes and their experts in parallel. Scenes the
/// expert cannot drive cleanly are dropped; their indices are returned.
pub fn generate_corpus(
    seed: u64,
    world: &WorldConfig,
    vocab: &VocabConfig,
    metrics: &MetricConfig,
) -> Result<(Vec<SceneItem>, Vec<usize>)> {
    let built: Vec<Result<Option<SceneItem>>> = (0..world.scenes)
        .into_par_iter()
        .map(|i| {
            let (s, kind) = scene_spec(seed, i, world)?;
            let scene = generate_scene(s, kind, world)?;
            match expert_rollout(&scene, vocab, metrics) {
                Ok(expert) => Ok(Some(SceneItem::new(scene_id(i), i, scene, expert, world.n_map)?)),
                Err(Error::SceneDiscarded { .. }) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect();
    let mut items = Vec::new();
    let mut dropped = Vec::new();
    for (i, r) in built.into_iter().enumerate() {
        match r? {
            Some(item) => items.push(item),
            None => dropped.push(i),
        }
    }
    Ok((items, dropped))
}

/// Corpus index `i` belongs to the test split when its position in a block
/// of `round(1 / test_fraction)` is last.
pub fn is_test(index: usize, test_fraction: f64) -> bool {
    if test_fraction <= 0.0 {
        return false;
    }
    let block = (1.0 / test_fraction).round().max(1.0) as usize;
    index % block == block - 1
}

pub fn split(items: Vec<SceneItem>, test_fraction: f64) -> (Vec<SceneItem>, Vec<SceneItem>) {
    items.into_iter().partition(|it| !is_test(it.index, test_fraction))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyScore {
    pub scene_id: String,
    pub nc: f64,
    pub dac: f64,
    pub ttc: f64,
    pub comfort: f64,
    pub ep: f64,
    pub pdms: f64,
}

impl PolicyScore {
    pub fn new(scene_id: &str, sub: SubScores, metrics: &MetricConfig) -> Self {
        Self {
            scene_id: scene_id.to_string(),
            nc: sub.nc,
            dac: sub.dac,
            ttc: sub.ttc,
            comfort: sub.comfort,
            ep: sub.ep,
            pdms: pdms(&sub, metrics),
        }
    }

    pub fn sub(&self) -> SubScores {
        SubScores {
            nc: self.nc,
            dac: self.dac,
            ttc: self.ttc,
            comfort: self.comfort,
            ep: self.ep,
        }
    }
}

/// Corpus means of every sub-score and of PDMS.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreSummary {
    pub scenes: usize,
    pub nc: f64,
    pub dac: f64,
    pub ttc: f64,
    pub comfort: f64,
    pub ep: f64,
    pub pdms: f64,
}

impl ScoreSummary {
    pub fn of(scores: &[PolicyScore]) -> Self {
        let n = scores.len().max(1) as f64;
        let mean = |f: fn(&PolicyScore) -> f64| scores.iter().map(f).sum::<f64>() / n;
        Self {
            scenes: scores.len(),
            nc: mean(|s| s.nc),
            dac: mean(|s| s.dac),
            ttc: mean(|s| s.ttc),
            comfort: mean(|s| s.comfort),
            ep: mean(|s| s.ep),
            pdms: mean(|s| s.pdms),
        }
    }

    /// The same means on a 0–100 scale.
    pub fn percent(&self) -> Self {
        Self {
            scenes: self.scenes,
            nc: self.nc * 100.0,
            dac: self.dac * 100.0,
            ttc: self.ttc * 100.0,
            comfort: self.comfort * 100.0,
            ep: self.ep * 100.0,
            pdms: self.pdms * 100.0,
        }
    }
}

pub fn mean_pdms(scores: &[PolicyScore]) -> f64 {
    ScoreSummary::of(scores).pdms
}

/// Scores the greedy plan of `planner` on every item.
pub fn evaluate_policy(planner: &Planner, items: &[SceneItem], metrics: &MetricConfig) -> Result<Vec<PolicyScore>> {
    items
        .par_iter()
        .map(|it| {
            let mut rng = rand::rngs::mock::StepRng::new(0, 0);
            let plan = planner.plan(
                &it.tokens,
                &it.initial(),
                DecodeMode::Greedy,
                it.scene.horizon,
                it.scene.dt,
                &mut rng,
            )?;
            let sub = it.scorer(metrics)?.score(&plan.trajectory)?;
            Ok(PolicyScore::new(&it.id, sub, metrics))
        })
        .collect()
}

/// Scores each item's expert trajectory against itself.
pub fn evaluate_expert(items: &[SceneItem], metrics: &MetricConfig) -> Result<Vec<PolicyScore>> {
    items
        .par_iter()
        .map(|it| {
            let sub = it.scorer(metrics)?.score(&it.expert)?;
            Ok(PolicyScore::new(&it.id, sub, metrics))
        })
        .collect()
}
