//! Discretizes a smooth driving trajectory into vocabulary actions and shows
//! how closely the relabeled rollout tracks the original.
//!
//! ```text
//! cargo run --example action_vocabulary
//! ```

use tisa_planner::action_space::{decode, derive_labels, encode, relabel_trajectory, VocabConfig, Vocabulary};
use tisa_planner::kinematics::{rollout, EgoState, KinematicAction};

fn main() -> tisa_planner::Result<()> {
    for (name, cfg) in [("default", VocabConfig::default()), ("fast", VocabConfig::fast())] {
        println!(
            "{name}: {} actions, accel bin {:.4} m/s², yaw bin {:.4} rad/s",
            cfg.size(),
            cfg.accel_width(),
            cfg.yaw_width()
        );
    }

    let cfg = VocabConfig::default();
    let id = encode(&KinematicAction::new(0.8, -0.12), &cfg)?;
    println!("\n(0.8, -0.12) lands in bin {} centered at {:?}", id.0, decode(id, &cfg)?);

    // A lane change: controls that lie between bin centers.
    let controls: Vec<KinematicAction> = [0.13, 0.21, 0.05, -0.17, -0.23, -0.02, 0.03, 0.0]
        .iter()
        .enumerate()
        .map(|(k, &w)| KinematicAction::new(0.3 * (k as f64 * 0.7).sin(), w))
        .collect();
    let gt = rollout(&EgoState::origin(11.0), &controls, 0.5)?;

    let vocab = Vocabulary::new(&cfg)?;
    let labels = derive_labels(&gt, &vocab, &cfg.labels)?;
    let fitted = relabel_trajectory(&gt.states[0], &labels, &vocab, 0.5)?;
    println!("\n{:>3} {:>6} {:>18} {:>10}", "k", "id", "(accel, yaw)", "pos err m");
    for (k, id) in labels.iter().enumerate() {
        let a = vocab.action(*id)?;
        let (p, q) = (&gt.states[k + 1], &fitted.states[k + 1]);
        println!(
            "{k:>3} {:>6} ({:>7.3}, {:>6.3}) {:>10.4}",
            id.0,
            a.accel,
            a.yaw_rate,
            (p.x - q.x).hypot(p.y - q.y)
        );
    }
    println!("summed squared position error: {:.5} m²", fitted.position_sse(&gt));
    Ok(())
}
