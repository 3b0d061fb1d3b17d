//! Preference fine-tuning: candidate sampling, winner pools and targeted
//! losers, the group DPO objective and its single-pair baseline.

use std::collections::{BTreeMap, HashMap};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tisa_autodiff::tensor::log_sigmoid;
use tisa_autodiff::{Tape, Tensor, Var};

use crate::action_space::ActionId;
use crate::corpus::{evaluate_policy, mean_pdms, SceneItem};
use crate::error::{Error, Result};
use crate::metrics::{pdms, MetricConfig, SubScores};
use crate::planner::{DecodeMode, PlanResult, Planner};
use crate::train::{clip_global_norm, collect_grads, AdamW, LrSchedule};
use crate::world::rng::{derive_seed, stage_seed};

pub const PREFERENCE_VERSION: u32 = 1;

/// `ep` below this counts as zero progress when matching loser rows.
pub const EP_ZERO: f64 = 0.05;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DpoConfig {
    pub beta: f64,
    pub temperature: f64,
    pub candidates: usize,
    pub winners: usize,
    pub peak_lr: f64,
    pub min_lr: f64,
    pub weight_decay: f64,
    pub warmup_iterations: usize,
    pub iterations: usize,
    pub batch_size: usize,
    /// Held-out evaluation interval in iterations; `0` evaluates only at the
    /// start and the end.
    pub eval_every: usize,
    pub grad_clip_norm: f64,
    pub seed: u64,
}

impl Default for DpoConfig {
    fn default() -> Self {
        Self {
            beta: 0.1,
            temperature: 1.2,
            candidates: 128,
            winners: 5,
            peak_lr: 3e-6,
            min_lr: 1e-6,
            weight_decay: 1e-2,
            warmup_iterations: 10,
            iterations: 200,
            batch_size: 16,
            eval_every: 20,
            grad_clip_norm: 1.0,
            seed: 0,
        }
    }
}

impl DpoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.temperature > 0.0) {
            return Err(Error::Config("dpo: beta and temperature must be positive".into()));
        }
        if self.candidates == 0 || self.winners == 0 || self.batch_size == 0 || self.iterations == 0 {
            return Err(Error::Config("dpo: candidates, winners, batch_size and iterations must be positive".into()));
        }
        if !(self.min_lr >= 0.0 && self.min_lr <= self.peak_lr) {
            return Err(Error::Config("dpo: need 0 <= min_lr <= peak_lr".into()));
        }
        if self.warmup_iterations > self.iterations {
            return Err(Error::Config("dpo: warmup_iterations must not exceed iterations".into()));
        }
        if !(self.weight_decay >= 0.0 && self.grad_clip_norm >= 0.0) {
            return Err(Error::Config("dpo: weight_decay and grad_clip_norm must be non-negative".into()));
        }
        Ok(())
    }

    /// Warmup-cosine schedule indexed by iteration.
    pub fn schedule(&self) -> LrSchedule {
        LrSchedule {
            peak: self.peak_lr,
            min: self.min_lr,
            warmup: self.warmup_iterations as f64,
            total: self.iterations as f64,
        }
    }
}

/// One sampled plan with its scores.
#[derive(Clone, Debug)]
pub struct Candidate {
    pub index: usize,
    pub plan: PlanResult,
    pub sub: SubScores,
    pub pdms: f64,
}

/// Seed of the sampling stream for one scene.
pub fn sampling_seed(seed: u64, scene_index: usize) -> u64 {
    derive_seed(stage_seed(seed, "sample"), scene_index as u64)
}

/// `n` independent sampled plans on `item`, scored. Repeats are kept.
pub fn sample_candidates(
    planner: &Planner,
    item: &SceneItem,
    n: usize,
    temperature: f64,
    seed: u64,
    metrics: &MetricConfig,
) -> Result<Vec<Candidate>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ego = planner.ego_token(&item.tokens)?;
    let scorer = item.scorer(metrics)?;
    let initial = item.initial();
    (0..n)
        .map(|index| {
            let plan = planner.plan_from_ego(
                &ego,
                &initial,
                DecodeMode::Sample { temperature },
                item.scene.horizon,
                item.scene.dt,
                &mut rng,
            )?;
            let sub = scorer.score(&plan.trajectory)?;
            Ok(Candidate {
                index,
                plan,
                sub,
                pdms: pdms(&sub, metrics),
            })
        })
        .collect()
}

/// Loser categories: the four targeted rows plus the single worst candidate
/// used by the naive baseline.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum LoserKind {
    Coll,
    Da,
    Ep,
    Ttc,
    Worst,
}

impl LoserKind {
    pub const TARGETED: [LoserKind; 4] = [LoserKind::Coll, LoserKind::Da, LoserKind::Ep, LoserKind::Ttc];

    /// Row predicate over (collision, drivable area, progress, TTC).
    pub fn matches(self, s: &SubScores) -> bool {
        let zero_ep = s.ep < EP_ZERO;
        match self {
            LoserKind::Coll => s.nc == 0.0 && s.dac == 1.0 && zero_ep && s.ttc == 0.0,
            LoserKind::Da => s.nc == 1.0 && s.dac == 0.0 && zero_ep && s.ttc == 1.0,
            LoserKind::Ep => s.nc == 1.0 && s.dac == 1.0 && zero_ep && s.ttc == 1.0,
            LoserKind::Ttc => s.nc == 1.0 && s.dac == 1.0 && s.ttc == 0.0,
            LoserKind::Worst => true,
        }
    }
}

/// Indices chosen from a candidate list.
#[derive(Clone, Debug, PartialEq)]
pub struct Selection {
    pub winners: Vec<usize>,
    pub losers: BTreeMap<LoserKind, usize>,
}

/// Candidate positions sorted by pdms descending, earlier index first on ties.
fn ranked(candidates: &[Candidate]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| {
        candidates[b]
            .pdms
            .total_cmp(&candidates[a].pdms)
            .then(candidates[a].index.cmp(&candidates[b].index))
    });
    order
}

fn keep_if_informative(sel: Selection, candidates: &[Candidate]) -> Option<Selection> {
    let best_winner = sel.winners.iter().map(|&i| candidates[i].pdms).fold(f64::NEG_INFINITY, f64::max);
    let best_loser = sel.losers.values().map(|&i| candidates[i].pdms).fold(f64::NEG_INFINITY, f64::max);
    (!sel.winners.is_empty() && !sel.losers.is_empty() && best_winner > best_loser).then_some(sel)
}

/// Winner pool (top `n_winners` by pdms) and at most one targeted loser per
/// row, the highest-pdms match. `None` when no row matches or the best
/// winner does not beat the best loser.
pub fn build_preferences(candidates: &[Candidate], n_winners: usize) -> Option<Selection> {
    let order = ranked(candidates);
    let winners: Vec<usize> = order.iter().copied().take(n_winners).collect();
    let mut losers = BTreeMap::new();
    for kind in LoserKind::TARGETED {
        if let Some(&i) = order.iter().find(|&&i| kind.matches(&candidates[i].sub)) {
            losers.insert(kind, i);
        }
    }
    keep_if_informative(Selection { winners, losers }, candidates)
}

/// The single best candidate against the single worst one.
pub fn naive_pairs(candidates: &[Candidate]) -> Option<Selection> {
    let order = ranked(candidates);
    let (&top, &bottom) = (order.first()?, order.last()?);
    let worst = order
        .iter()
        .copied()
        .filter(|&i| candidates[i].pdms == candidates[bottom].pdms)
        .min_by_key(|&i| candidates[i].index)?;
    keep_if_informative(
        Selection {
            winners: vec![top],
            losers: BTreeMap::from([(LoserKind::Worst, worst)]),
        },
        candidates,
    )
}

/// A stored action sequence with its scores and reference log-probability.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredSequence {
    pub candidate: usize,
    pub action_ids: Vec<ActionId>,
    pub sub: SubScores,
    pub pdms: f64,
    pub ref_logprob: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreferenceRecord {
    pub version: u32,
    pub scene_id: String,
    pub scene_file: String,
    pub scene_seed: u64,
    pub sample_seed: u64,
    pub winners: Vec<ScoredSequence>,
    pub losers: BTreeMap<LoserKind, ScoredSequence>,
}

impl PreferenceRecord {
    /// Winner sequences followed by loser sequences.
    pub fn sequences(&self) -> impl Iterator<Item = &ScoredSequence> {
        self.winners.iter().chain(self.losers.values())
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != PREFERENCE_VERSION {
            return Err(Error::format(
                "preference record",
                format!("version {} (expected {PREFERENCE_VERSION})", self.version),
            ));
        }
        if self.winners.is_empty() || self.losers.is_empty() {
            return Err(Error::format("preference record", format!("{}: empty winners or losers", self.scene_id)));
        }
        if self.winners.windows(2).any(|w| w[0].pdms < w[1].pdms) {
            return Err(Error::format("preference record", format!("{}: winners not sorted", self.scene_id)));
        }
        for (kind, l) in &self.losers {
            if !kind.matches(&l.sub) {
                return Err(Error::format(
                    "preference record",
                    format!("{}: {kind:?} loser fails its row", self.scene_id),
                ));
            }
        }
        Ok(())
    }
}

/// Total log-probabilities of `sequences` under `planner` at temperature 1.
pub fn sequence_logprobs(planner: &Planner, item: &SceneItem, sequences: &[Vec<ActionId>]) -> Result<Vec<f64>> {
    let tape = Tape::new();
    let b = planner.bind_frozen(&tape);
    planner
        .sequence_logprobs(&tape, &b, &item.tokens, &item.initial(), sequences, item.scene.dt)?
        .into_iter()
        .map(|v| Ok(tape.item(v)?))
        .collect()
}

/// Turns a selection into a record, scoring every listed sequence under the
/// frozen `reference`.
pub fn make_record(
    reference: &Planner,
    item: &SceneItem,
    candidates: &[Candidate],
    sel: &Selection,
    scene_file: &str,
    sample_seed: u64,
) -> Result<PreferenceRecord> {
    let picked: Vec<usize> = sel.winners.iter().chain(sel.losers.values()).copied().collect();
    let seqs: Vec<Vec<ActionId>> = picked.iter().map(|&i| candidates[i].plan.action_ids.clone()).collect();
    let refs = sequence_logprobs(reference, item, &seqs)?;
    let scored = |k: usize| {
        let c = &candidates[picked[k]];
        ScoredSequence {
            candidate: c.index,
            action_ids: c.plan.action_ids.clone(),
            sub: c.sub,
            pdms: c.pdms,
            ref_logprob: refs[k],
        }
    };
    let nw = sel.winners.len();
    Ok(PreferenceRecord {
        version: PREFERENCE_VERSION,
        scene_id: item.id.clone(),
        scene_file: scene_file.to_string(),
        scene_seed: item.scene.seed,
        sample_seed,
        winners: (0..nw).map(scored).collect(),
        losers: sel.losers.keys().enumerate().map(|(j, &kind)| (kind, scored(nw + j))).collect(),
    })
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Mean winner log-ratio minus mean loser log-ratio.
pub fn dpo_margin(policy_w: &[f64], ref_w: &[f64], policy_l: &[f64], ref_l: &[f64]) -> Result<f64> {
    if policy_w.is_empty() || policy_l.is_empty() {
        return Err(Error::domain("dpo_loss", "need at least one winner and one loser"));
    }
    if policy_w.len() != ref_w.len() || policy_l.len() != ref_l.len() {
        return Err(Error::domain("dpo_loss", "policy and reference lengths differ"));
    }
    let rw: Vec<f64> = policy_w.iter().zip(ref_w).map(|(p, r)| p - r).collect();
    let rl: Vec<f64> = policy_l.iter().zip(ref_l).map(|(p, r)| p - r).collect();
    Ok(mean(&rw) - mean(&rl))
}

/// `−log σ(β · margin)` with the means over winners and losers taken inside
/// the sigmoid.
pub fn dpo_loss(policy_w: &[f64], ref_w: &[f64], policy_l: &[f64], ref_l: &[f64], beta: f64) -> Result<f64> {
    Ok(-log_sigmoid(beta * dpo_margin(policy_w, ref_w, policy_l, ref_l)?))
}

/// Differentiable record loss on `tape`.
fn record_loss_var(
    tape: &Tape,
    policy: &Planner,
    b: &crate::planner::Bound,
    record: &PreferenceRecord,
    item: &SceneItem,
    beta: f64,
) -> Result<Var> {
    let seqs: Vec<Vec<ActionId>> = record.sequences().map(|s| s.action_ids.clone()).collect();
    let logps = policy.sequence_logprobs(tape, b, &item.tokens, &item.initial(), &seqs, item.scene.dt)?;
    let nw = record.winners.len();
    let w = tape.mean(tape.concat_rows(&logps[..nw])?)?;
    let l = tape.mean(tape.concat_rows(&logps[nw..])?)?;
    let ref_w = mean(&record.winners.iter().map(|s| s.ref_logprob).collect::<Vec<_>>());
    let ref_l = mean(&record.losers.values().map(|s| s.ref_logprob).collect::<Vec<_>>());
    let margin = tape.sub(w, l)?;
    let shifted = tape.sub(margin, tape.constant(Tensor::scalar(ref_w - ref_l)))?;
    let ls = tape.log_sigmoid(tape.scale(shifted, beta)?)?;
    Ok(tape.scale(ls, -1.0)?)
}

/// Validates `record` and checks its stored reference log-probabilities
/// against a fresh computation under `reference` (to 1e-9).
pub fn check_reference(reference: &Planner, record: &PreferenceRecord, scenes: &SceneIndex) -> Result<()> {
    record.validate()?;
    let item = scenes.get(&record.scene_id)?;
    let seqs: Vec<Vec<ActionId>> = record.sequences().map(|s| s.action_ids.clone()).collect();
    let fresh = sequence_logprobs(reference, item, &seqs)?;
    for (f, s) in fresh.iter().zip(record.sequences()) {
        if (f - s.ref_logprob).abs() > 1e-9 {
            return Err(Error::format(
                "preference record",
                format!("{}: stored reference log-probability {} differs from {f}", record.scene_id, s.ref_logprob),
            ));
        }
    }
    Ok(())
}

/// Loss of one record under `policy`, without gradients.
pub fn record_loss(policy: &Planner, record: &PreferenceRecord, item: &SceneItem, beta: f64) -> Result<f64> {
    let seqs: Vec<Vec<ActionId>> = record.sequences().map(|s| s.action_ids.clone()).collect();
    let logps = sequence_logprobs(policy, item, &seqs)?;
    let nw = record.winners.len();
    let refs: Vec<f64> = record.sequences().map(|s| s.ref_logprob).collect();
    dpo_loss(&logps[..nw], &refs[..nw], &logps[nw..], &refs[nw..], beta)
}

/// Mean policy-minus-reference log-ratio of winners and of losers.
pub fn mean_log_ratios(policy: &Planner, records: &[PreferenceRecord], scenes: &SceneIndex) -> Result<(f64, f64)> {
    let per: Vec<(f64, f64)> = records
        .par_iter()
        .map(|r| {
            let item = scenes.get(&r.scene_id)?;
            let seqs: Vec<Vec<ActionId>> = r.sequences().map(|s| s.action_ids.clone()).collect();
            let logps = sequence_logprobs(policy, item, &seqs)?;
            let ratios: Vec<f64> = logps.iter().zip(r.sequences()).map(|(p, s)| p - s.ref_logprob).collect();
            let nw = r.winners.len();
            Ok((mean(&ratios[..nw]), mean(&ratios[nw..])))
        })
        .collect::<Result<_>>()?;
    Ok((
        mean(&per.iter().map(|p| p.0).collect::<Vec<_>>()),
        mean(&per.iter().map(|p| p.1).collect::<Vec<_>>()),
    ))
}

/// Scene lookup by id.
pub struct SceneIndex<'a> {
    by_id: HashMap<&'a str, &'a SceneItem>,
}

impl<'a> SceneIndex<'a> {
    pub fn new(items: &'a [SceneItem]) -> Self {
        Self {
            by_id: items.iter().map(|it| (it.id.as_str(), it)).collect(),
        }
    }

    pub fn get(&self, id: &str) -> Result<&'a SceneItem> {
        self.by_id
            .get(id)
            .copied()
            .ok_or_else(|| Error::format("preference record", format!("unknown scene {id}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DpoCurveRow {
    pub iter: usize,
    pub epoch: f64,
    pub lr: f64,
    pub loss: Option<f64>,
    pub heldout_pdms: Option<f64>,
}

/// DPO fine-tuning of `policy` against the frozen `reference` for
/// `cfg.iterations` mini-batch steps. Row 0 holds the starting held-out PDMS;
/// later rows hold the batch loss, plus held-out PDMS every `eval_every`
/// iterations and at the end.
pub fn finetune(
    policy: &mut Planner,
    reference: &Planner,
    records: &[PreferenceRecord],
    scenes: &SceneIndex,
    heldout: &[SceneItem],
    cfg: &DpoConfig,
    metrics: &MetricConfig,
    mut on_row: impl FnMut(&DpoCurveRow) -> Result<()>,
) -> Result<Vec<DpoCurveRow>> {
    cfg.validate()?;
    if records.is_empty() {
        return Err(Error::domain("finetune", "no preference records"));
    }
    records.par_iter().try_for_each(|r| check_reference(reference, r, scenes))?;
    let schedule = cfg.schedule();
    let mut opt = AdamW::new(cfg.weight_decay);
    let mut curve = Vec::with_capacity(cfg.iterations + 1);
    let row0 = DpoCurveRow {
        iter: 0,
        epoch: 0.0,
        lr: schedule.at(0.0),
        loss: None,
        heldout_pdms: Some(mean_pdms(&evaluate_policy(policy, heldout, metrics)?)),
    };
    on_row(&row0)?;
    curve.push(row0);

    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0;
    let mut pass = 0u64;
    for iter in 1..=cfg.iterations {
        let mut batch = Vec::with_capacity(cfg.batch_size);
        while batch.len() < cfg.batch_size.min(records.len()) {
            if cursor == order.len() {
                order = (0..records.len()).collect();
                order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(stage_seed(cfg.seed, "dpo"), pass)));
                pass += 1;
                cursor = 0;
            }
            batch.push(order[cursor]);
            cursor += 1;
        }
        let outs: Vec<(Vec<Tensor>, f64)> = batch
            .par_iter()
            .map(|&i| {
                let r = &records[i];
                let item = scenes.get(&r.scene_id)?;
                let tape = Tape::new();
                let b = policy.bind(&tape);
                let loss = record_loss_var(&tape, policy, &b, r, item, cfg.beta)?;
                let lv = tape.item(loss)?;
                if !lv.is_finite() {
                    return Err(Error::Numerical(format!(
                        "non-finite DPO loss {lv} at iteration {iter} on record {}",
                        r.scene_id
                    )));
                }
                Ok((collect_grads(policy, &tape, &b, loss)?, lv))
            })
            .collect::<Result<_>>()?;
        let mut grads: Vec<Tensor> = Vec::new();
        let mut loss_sum = 0.0;
        for (g, l) in outs {
            loss_sum += l;
            if grads.is_empty() {
                grads = g;
            } else {
                for (a, b) in grads.iter_mut().zip(&g) {
                    a.add_assign(b)?;
                }
            }
        }
        let inv = 1.0 / batch.len() as f64;
        for g in grads.iter_mut() {
            g.scale_assign(inv);
        }
        clip_global_norm(&mut grads, cfg.grad_clip_norm);
        let lr = schedule.at(iter as f64);
        opt.step(policy, &grads, lr)?;
        if !policy.params.is_finite() {
            return Err(Error::Numerical(format!("non-finite parameters after DPO iteration {iter}")));
        }
        let evaluate = iter == cfg.iterations || (cfg.eval_every > 0 && iter % cfg.eval_every == 0);
        let row = DpoCurveRow {
            iter,
            epoch: (iter * cfg.batch_size) as f64 / records.len() as f64,
            lr,
            loss: Some(loss_sum * inv),
            heldout_pdms: if evaluate {
                Some(mean_pdms(&evaluate_policy(policy, heldout, metrics)?))
            } else {
                None
            },
        };
        on_row(&row)?;
        curve.push(row);
    }
    Ok(curve)
}
