//! Inspects the alignment module of an untrained planner on one scene: the
//! attention each future step pays to the shared memory slots, and how much
//! the action logits move when alignment is switched off.
//!
//! ```text
//! cargo run --example tisa_alignment
//! ```

use tisa_autodiff::Tape;
use tisa_planner::action_space::VocabConfig;
use tisa_planner::corpus::generate_corpus;
use tisa_planner::metrics::MetricConfig;
use tisa_planner::planner::{ModelConfig, Planner};
use tisa_planner::world::{ScenarioKind, WorldConfig};

fn main() -> tisa_planner::Result<()> {
    let vocab = VocabConfig::fast();
    let world = WorldConfig {
        scenes: 1,
        kinds: vec![ScenarioKind::LeftTurn],
        ..WorldConfig::default()
    };
    let (items, _) = generate_corpus(3, &world, &vocab, &MetricConfig::default())?;
    let item = &items[0];
    let planner = Planner::new(&ModelConfig::default(), &vocab, 1)?;
    let sample = item.imitation_sample(&planner.vocab)?;

    let tape = Tape::new();
    let b = planner.bind_frozen(&tape);
    let ego = planner.contextualize_ego(&tape, &b, &item.tokens)?;
    let prospective = planner.prospective_tokens(&tape, &b, ego, &sample.states)?;
    let weights = tape.value(planner.tisa_weights(&tape, &b, prospective)?);
    println!("attention over {} memory slots per future step (top 3):", weights.cols());
    for k in 0..weights.rows() {
        let mut row: Vec<(usize, f64)> = weights.row(k).iter().copied().enumerate().collect();
        row.sort_by(|a, b| b.1.total_cmp(&a.1));
        let top: Vec<String> = row.iter().take(3).map(|(i, w)| format!("slot {i:>2}: {w:.3}")).collect();
        println!("  step {k}: {}", top.join("  "));
    }

    let logits = |p: &Planner| -> tisa_planner::Result<Vec<f64>> {
        let tape = Tape::new();
        let b = p.bind_frozen(&tape);
        let out = p.forward_teacher_forced(&tape, &b, &sample.tokens, &sample.states)?;
        Ok(tape.value(out.logits).data().to_vec())
    };
    let mut ablated = planner.clone();
    ablated.config.tisa_enabled = false;
    let (with, without) = (logits(&planner)?, logits(&ablated)?);
    let shift = with.iter().zip(&without).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    println!("largest logit change with alignment disabled: {shift:.4}");
    Ok(())
}
