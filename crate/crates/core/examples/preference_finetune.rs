//! Multi-objective preference fine-tuning next to the single-pair baseline:
//! pre-train briefly, mine targeted losers from sampled plans, then fine-tune
//! two copies of the policy and compare held-out scores.
//!
//! ```text
//! cargo run --release --example preference_finetune
//! ```

use std::collections::BTreeMap;

use tisa_planner::action_space::VocabConfig;
use tisa_planner::corpus::{evaluate_policy, generate_corpus, mean_pdms, split};
use tisa_planner::dpo::{
    build_preferences, finetune, make_record, naive_pairs, sample_candidates, DpoConfig, SceneIndex,
};
use tisa_planner::metrics::MetricConfig;
use tisa_planner::planner::{ModelConfig, Planner};
use tisa_planner::train::{fit, TrainConfig};
use tisa_planner::world::WorldConfig;

fn main() -> tisa_planner::Result<()> {
    let vocab = VocabConfig::fast();
    let metrics = MetricConfig::default();
    let world = WorldConfig {
        scenes: 200,
        ..WorldConfig::default()
    };
    let (items, _) = generate_corpus(1, &world, &vocab, &metrics)?;
    let (train, test) = split(items, world.test_fraction);

    let mut reference = Planner::new(&ModelConfig::default(), &vocab, 1)?;
    let samples = train
        .iter()
        .map(|it| it.imitation_sample(&reference.vocab))
        .collect::<tisa_planner::Result<Vec<_>>>()?;
    let train_cfg = TrainConfig {
        epochs: 25,
        ..TrainConfig::default()
    };
    fit(&mut reference, &samples, &train_cfg, |_, _| Ok(()))?;
    println!("pretrained held-out pdms {:.4}", mean_pdms(&evaluate_policy(&reference, &test, &metrics)?));

    let cfg = DpoConfig {
        candidates: 64,
        iterations: 100,
        eval_every: 25,
        ..DpoConfig::default()
    };
    let (mut multi, mut naive) = (Vec::new(), Vec::new());
    let mut losers = BTreeMap::new();
    for (k, item) in train.iter().enumerate() {
        let cands = sample_candidates(&reference, item, cfg.candidates, cfg.temperature, k as u64, &metrics)?;
        if let Some(sel) = build_preferences(&cands, cfg.winners) {
            for kind in sel.losers.keys() {
                *losers.entry(*kind).or_insert(0) += 1;
            }
            multi.push(make_record(&reference, item, &cands, &sel, &item.id, k as u64)?);
        }
        if let Some(sel) = naive_pairs(&cands) {
            naive.push(make_record(&reference, item, &cands, &sel, &item.id, k as u64)?);
        }
    }
    println!("{} multi-objective records, {} naive pairs; losers by row {losers:?}", multi.len(), naive.len());

    let index = SceneIndex::new(&train);
    for (name, records) in [("multi-pair", &multi), ("naive", &naive)] {
        let mut policy = reference.clone();
        finetune(&mut policy, &reference, records, &index, &test, &cfg, &metrics, |row| {
            if let Some(p) = row.heldout_pdms {
                println!("{name:<10} iter {:>4}  held-out pdms {p:.4}", row.iter);
            }
            Ok(())
        })?;
    }
    Ok(())
}
