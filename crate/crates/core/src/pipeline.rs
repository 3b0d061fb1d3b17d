//! The artifact pipeline behind the command-line tool. Every stage reads and
//! writes fixed file names under `paths.out_dir`, so stages compose through
//! directories:
//!
//! ```text
//! data/manifest.json  data/scenes/<id>.json  data/experts/<id>.csv
//! labels/labels.csv   labels/oracle_check.json
//! pretrain/model.ckpt pretrain/curve.csv
//! prefs/prefs.jsonl   prefs/prefs_naive.jsonl  prefs/summary.json
//! dpo/model.ckpt      dpo/curve.csv       (dpo-naive/ likewise)
//! eval/<policy>.csv   eval/<policy>.json
//! report/*.svg        report/summary.md
//! ```
//!
//! Each output directory also receives `config.json`, the effective run
//! config. Wall-clock timestamps go only to `run.log`.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::action_space::naive::derive_labels_naive;
use crate::action_space::{derive_labels, ActionId, Vocabulary};
use crate::config::RunConfig;
use crate::corpus::{
    evaluate_expert, evaluate_policy, generate_corpus, is_test, PolicyScore, SceneItem, ScoreSummary,
};
use crate::dpo::{
    build_preferences, finetune, make_record, naive_pairs, sample_candidates, sampling_seed, DpoConfig,
    DpoCurveRow, LoserKind, PreferenceRecord, SceneIndex,
};
use crate::error::{Error, Result};
use crate::io::{
    csv_bytes, group_labels, read_bytes, read_csv, read_json, read_jsonl, read_string, write_atomic, write_json,
    write_jsonl, LabelRow,
};
use crate::kinematics::Trajectory;
use crate::planner::{load_checkpoint, save_checkpoint, Planner};
use crate::train::{fit, CurveRow, TrainConfig};
use crate::world::rng::{derive_seed, stage_seed};
use crate::world::{ScenarioKind, Scene};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub index: usize,
    pub kind: ScenarioKind,
    pub seed: u64,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: u32,
    pub seed: u64,
    pub scenes: Vec<ManifestEntry>,
    /// Corpus indices the expert could not drive cleanly.
    pub dropped: Vec<usize>,
}

/// Policies `eval` can score.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Policy {
    Expert,
    Untrained,
    Pretrained,
    Dpo,
    DpoNaive,
}

impl Policy {
    pub const ALL: [Policy; 5] = [
        Policy::Expert,
        Policy::Untrained,
        Policy::Pretrained,
        Policy::Dpo,
        Policy::DpoNaive,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Policy::Expert => "expert",
            Policy::Untrained => "untrained",
            Policy::Pretrained => "pretrained",
            Policy::Dpo => "dpo",
            Policy::DpoNaive => "dpo-naive",
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Policy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Policy::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown policy {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub policy: String,
    pub split: Split,
    /// Corpus means on a 0–100 scale.
    pub percent: ScoreSummary,
    pub mean: ScoreSummary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleCheck {
    pub checked: usize,
    pub mismatched: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreferenceSummary {
    pub scenes: usize,
    pub records: usize,
    pub naive_records: usize,
    pub skipped: usize,
    pub losers: BTreeMap<LoserKind, usize>,
}

/// A configured run rooted at `paths.out_dir`.
#[derive(Clone, Debug)]
pub struct Pipeline {
    pub config: RunConfig,
    root: PathBuf,
}

fn save_curve<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    write_atomic(path, &csv_bytes(rows)?)
}

impl Pipeline {
    pub fn new(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let root = config.paths.out_dir.clone();
        Ok(Self { config, root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.path("data/manifest.json")
    }

    pub fn scene_path(&self, id: &str) -> PathBuf {
        self.path(&format!("data/scenes/{id}.json"))
    }

    pub fn expert_path(&self, id: &str) -> PathBuf {
        self.path(&format!("data/experts/{id}.csv"))
    }

    pub fn checkpoint_path(&self, policy: Policy) -> Option<PathBuf> {
        match policy {
            Policy::Pretrained => Some(self.path("pretrain/model.ckpt")),
            Policy::Dpo => Some(self.path("dpo/model.ckpt")),
            Policy::DpoNaive => Some(self.path("dpo-naive/model.ckpt")),
            Policy::Expert | Policy::Untrained => None,
        }
    }

    fn echo_config(&self, dir: &str) -> Result<()> {
        write_json(&self.path(&format!("{dir}/config.json")), &self.config)
    }

    /// Appends a timestamped line to `run.log`.
    pub fn log(&self, line: &str) -> Result<()> {
        let path = self.path("run.log");
        std::fs::create_dir_all(&self.root).map_err(|e| Error::io(&self.root, e))?;
        let secs = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        let mut f = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        writeln!(f, "{secs} {line}").map_err(|e| Error::io(&path, e))
    }

    fn timed<T>(&self, name: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let start = Instant::now();
        let out = f();
        let status = match &out {
            Ok(_) => "ok".to_string(),
            Err(e) => format!("error {}", e.kind()),
        };
        self.log(&format!("{name} {status} {:.3}s", start.elapsed().as_secs_f64()))?;
        out
    }

    fn vocabulary(&self) -> Result<Vocabulary> {
        Vocabulary::new(&self.config.vocab)
    }

    fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: derive_seed(stage_seed(self.config.seed, "train"), self.config.train.seed),
            ..self.config.train.clone()
        }
    }

    fn dpo_config(&self) -> DpoConfig {
        DpoConfig {
            seed: derive_seed(stage_seed(self.config.seed, "dpo"), self.config.dpo.seed),
            ..self.config.dpo.clone()
        }
    }

    /// The freshly initialized planner that pre-training starts from.
    pub fn untrained(&self) -> Result<Planner> {
        Planner::new(&self.config.model, &self.config.vocab, stage_seed(self.config.seed, "init"))
    }

    /// Loads a checkpoint and checks it matches the configured model.
    pub fn load_planner(&self, path: &Path) -> Result<Planner> {
        let (planner, header) = load_checkpoint(path)?;
        if header.model != self.config.model || header.vocab != self.config.vocab {
            return Err(Error::Config(format!(
                "{} was trained with a different model or vocabulary config",
                path.display()
            )));
        }
        Ok(planner)
    }

    pub fn policy_planner(&self, policy: Policy) -> Result<Option<Planner>> {
        match policy {
            Policy::Expert => Ok(None),
            Policy::Untrained => Ok(Some(self.untrained()?)),
            p => Ok(Some(self.load_planner(&self.checkpoint_path(p).expect("checkpointed policy"))?)),
        }
    }

    /// Generates the scene corpus and expert trajectories.
    pub fn gen_data(&self) -> Result<Manifest> {
        self.timed("gen-data", || {
            let c = &self.config;
            let (items, dropped) = generate_corpus(c.seed, &c.world, &c.vocab, &c.metrics)?;
            items.par_iter().try_for_each(|it| -> Result<()> {
                write_atomic(&self.scene_path(&it.id), it.scene.to_json()?.as_bytes())?;
                let mut csv = Vec::new();
                it.expert.write_csv(&mut csv)?;
                write_atomic(&self.expert_path(&it.id), &csv)
            })?;
            let manifest = Manifest {
                version: MANIFEST_VERSION,
                seed: c.seed,
                scenes: items
                    .iter()
                    .map(|it| ManifestEntry {
                        id: it.id.clone(),
                        index: it.index,
                        kind: it.scene.kind,
                        seed: it.scene.seed,
                        split: if is_test(it.index, c.world.test_fraction) {
                            Split::Test
                        } else {
                            Split::Train
                        },
                    })
                    .collect(),
                dropped,
            };
            write_json(&self.manifest_path(), &manifest)?;
            self.echo_config("data")?;
            Ok(manifest)
        })
    }

    pub fn load_manifest(&self) -> Result<Manifest> {
        let m: Manifest = read_json(&self.manifest_path())?;
        if m.version != MANIFEST_VERSION {
            return Err(Error::format("manifest", format!("version {} (expected {MANIFEST_VERSION})", m.version)));
        }
        Ok(m)
    }

    /// Scenes and experts of one split (or all when `split` is `None`).
    pub fn load_corpus(&self, split: Option<Split>) -> Result<Vec<SceneItem>> {
        let manifest = self.load_manifest()?;
        manifest
            .scenes
            .par_iter()
            .filter(|e| split.is_none_or(|s| e.split == s))
            .map(|e| {
                let scene = Scene::from_json(&read_string(&self.scene_path(&e.id))?)?;
                let bytes = read_bytes(&self.expert_path(&e.id))?;
                let expert = Trajectory::read_csv(bytes.as_slice(), scene.dt, 0)?;
                SceneItem::new(e.id.clone(), e.index, scene, expert, self.config.world.n_map)
            })
            .collect()
    }

    /// Derives labels for every scene; optionally cross-checks them against
    /// the independent naive labeler.
    pub fn derive_labels(&self, oracle_check: bool) -> Result<Vec<LabelRow>> {
        self.timed("derive-labels", || {
            let items = self.load_corpus(None)?;
            let vocab = self.vocabulary()?;
            let labels_cfg = &self.config.vocab.labels;
            let labels: Vec<Vec<ActionId>> = items
                .par_iter()
                .map(|it| derive_labels(&it.expert, &vocab, labels_cfg))
                .collect::<Result<_>>()?;
            let rows: Vec<LabelRow> = items
                .iter()
                .zip(&labels)
                .flat_map(|(it, ids)| {
                    ids.iter().enumerate().map(|(k, &action_id)| LabelRow {
                        segment_id: it.id.clone(),
                        k,
                        action_id,
                    })
                })
                .collect();
            write_atomic(&self.path("labels/labels.csv"), &csv_bytes(&rows)?)?;
            self.echo_config("labels")?;
            if oracle_check {
                let mismatched: Vec<String> = items
                    .par_iter()
                    .zip(&labels)
                    .filter(|(it, ids)| derive_labels_naive(&it.expert, &self.config.vocab, labels_cfg) != **ids)
                    .map(|(it, _)| it.id.clone())
                    .collect();
                let check = OracleCheck {
                    checked: items.len(),
                    mismatched,
                };
                write_json(&self.path("labels/oracle_check.json"), &check)?;
                if !check.mismatched.is_empty() {
                    return Err(Error::Numerical(format!(
                        "naive labeler disagrees on {} of {} segments (first {})",
                        check.mismatched.len(),
                        check.checked,
                        check.mismatched[0]
                    )));
                }
            }
            Ok(rows)
        })
    }

    fn load_labels(&self) -> Result<BTreeMap<String, Vec<ActionId>>> {
        let rows: Vec<LabelRow> = read_csv(&self.path("labels/labels.csv"))?;
        Ok(group_labels(&rows)?.into_iter().collect())
    }

    /// Imitation pre-training on the train split.
    pub fn pretrain(&self) -> Result<Vec<CurveRow>> {
        self.timed("pretrain", || {
            let items = self.load_corpus(Some(Split::Train))?;
            let labels = self.load_labels()?;
            let vocab = self.vocabulary()?;
            let samples = items
                .iter()
                .map(|it| {
                    let ids = labels
                        .get(&it.id)
                        .ok_or_else(|| Error::format("labels", format!("no labels for {}", it.id)))?;
                    it.sample_with_labels(&vocab, ids.clone())
                })
                .collect::<Result<Vec<_>>>()?;
            let mut planner = self.untrained()?;
            let curve_path = self.path("pretrain/curve.csv");
            let mut rows = Vec::new();
            let result = fit(&mut planner, &samples, &self.train_config(), |row, _| {
                rows.push(row.clone());
                save_curve(&curve_path, &rows)
            });
            let curve = match result {
                Ok(c) => c,
                Err(Error::Numerical(msg)) => {
                    write_json(&self.path("pretrain/nan_dump.json"), &serde_json::json!({ "error": msg }))?;
                    return Err(Error::Numerical(msg));
                }
                Err(e) => return Err(e),
            };
            save_checkpoint(&self.path("pretrain/model.ckpt"), &planner, &self.config.to_json()?)?;
            self.echo_config("pretrain")?;
            Ok(curve)
        })
    }

    /// Samples candidates from the pre-trained policy on the train split and
    /// writes both the multi-objective and the naive preference sets.
    pub fn sample_prefs(&self) -> Result<PreferenceSummary> {
        self.timed("sample-prefs", || {
            let items = self.load_corpus(Some(Split::Train))?;
            let reference = self.load_planner(&self.checkpoint_path(Policy::Pretrained).expect("checkpoint"))?;
            let cfg = self.dpo_config();
            let metrics = &self.config.metrics;
            let built: Vec<(Option<PreferenceRecord>, Option<PreferenceRecord>)> = items
                .par_iter()
                .map(|it| {
                    let seed = sampling_seed(cfg.seed, it.index);
                    let cands = sample_candidates(&reference, it, cfg.candidates, cfg.temperature, seed, metrics)?;
                    let file = format!("data/scenes/{}.json", it.id);
                    let multi = build_preferences(&cands, cfg.winners)
                        .map(|s| make_record(&reference, it, &cands, &s, &file, seed))
                        .transpose()?;
                    let naive = naive_pairs(&cands)
                        .map(|s| make_record(&reference, it, &cands, &s, &file, seed))
                        .transpose()?;
                    Ok((multi, naive))
                })
                .collect::<Result<_>>()?;
            let multi: Vec<PreferenceRecord> = built.iter().filter_map(|b| b.0.clone()).collect();
            let naive: Vec<PreferenceRecord> = built.iter().filter_map(|b| b.1.clone()).collect();
            let mut losers = BTreeMap::new();
            for r in &multi {
                for k in r.losers.keys() {
                    *losers.entry(*k).or_insert(0) += 1;
                }
            }
            let summary = PreferenceSummary {
                scenes: items.len(),
                records: multi.len(),
                naive_records: naive.len(),
                skipped: items.len() - multi.len(),
                losers,
            };
            write_jsonl(&self.path("prefs/prefs.jsonl"), &multi)?;
            write_jsonl(&self.path("prefs/prefs_naive.jsonl"), &naive)?;
            write_json(&self.path("prefs/summary.json"), &summary)?;
            self.echo_config("prefs")?;
            Ok(summary)
        })
    }

    /// DPO fine-tuning from the pre-trained checkpoint, which also serves as
    /// the frozen reference.
    pub fn dpo(&self, naive: bool) -> Result<Vec<DpoCurveRow>> {
        let (name, dir, prefs) = if naive {
            ("dpo --naive", "dpo-naive", "prefs/prefs_naive.jsonl")
        } else {
            ("dpo", "dpo", "prefs/prefs.jsonl")
        };
        self.timed(name, || {
            let records: Vec<PreferenceRecord> = read_jsonl(&self.path(prefs))?;
            let reference = self.load_planner(&self.checkpoint_path(Policy::Pretrained).expect("checkpoint"))?;
            let train = self.load_corpus(Some(Split::Train))?;
            let test = self.load_corpus(Some(Split::Test))?;
            let index = SceneIndex::new(&train);
            let mut policy = reference.clone();
            let curve_path = self.path(&format!("{dir}/curve.csv"));
            let mut rows = Vec::new();
            let curve = finetune(
                &mut policy,
                &reference,
                &records,
                &index,
                &test,
                &self.dpo_config(),
                &self.config.metrics,
                |row| {
                    rows.push(row.clone());
                    if row.heldout_pdms.is_some() {
                        save_curve(&curve_path, &rows)?;
                    }
                    Ok(())
                },
            );
            let curve = match curve {
                Ok(c) => c,
                Err(Error::Numerical(msg)) => {
                    write_json(&self.path(&format!("{dir}/nan_dump.json")), &serde_json::json!({ "error": msg }))?;
                    return Err(Error::Numerical(msg));
                }
                Err(e) => return Err(e),
            };
            save_curve(&curve_path, &curve)?;
            save_checkpoint(&self.path(&format!("{dir}/model.ckpt")), &policy, &self.config.to_json()?)?;
            self.echo_config(dir)?;
            Ok(curve)
        })
    }

    /// Scores `policy` on `split` and writes the per-scene CSV and summary.
    pub fn eval(&self, policy: Policy, split: Split) -> Result<EvalReport> {
        self.timed(&format!("eval {policy}"), || {
            let items = self.load_corpus(Some(split))?;
            let scores: Vec<PolicyScore> = match self.policy_planner(policy)? {
                None => evaluate_expert(&items, &self.config.metrics)?,
                Some(p) => evaluate_policy(&p, &items, &self.config.metrics)?,
            };
            let mean = ScoreSummary::of(&scores);
            let report = EvalReport {
                policy: policy.name().to_string(),
                split,
                percent: mean.percent(),
                mean,
            };
            write_atomic(&self.path(&format!("eval/{policy}.csv")), &csv_bytes(&scores)?)?;
            write_json(&self.path(&format!("eval/{policy}.json")), &report)?;
            self.echo_config("eval")?;
            Ok(report)
        })
    }

    /// Plots and the summary table from earlier outputs.
    pub fn report(&self) -> Result<Vec<PathBuf>> {
        self.timed("report", || crate::report::write_report(self))
    }
}
