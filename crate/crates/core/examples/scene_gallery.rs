//! Generates one scene of every scenario kind, drives the expert through it,
//! scores the result and writes a top-down SVG per scene.
//!
//! ```text
//! cargo run --example scene_gallery -- [out_dir] [seed]
//! ```

use std::path::PathBuf;

use tisa_planner::action_space::VocabConfig;
use tisa_planner::corpus::SceneItem;
use tisa_planner::metrics::{pdms, MetricConfig};
use tisa_planner::report::render_scene;
use tisa_planner::world::{expert_rollout, generate_scene, ScenarioKind, WorldConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "target/scene_gallery".into()));
    let seed: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(7);
    std::fs::create_dir_all(&out)?;

    let world = WorldConfig::default();
    let metrics = MetricConfig::default();
    println!("{:<12} {:>6} {:>5} {:>5} {:>5} {:>5} {:>6}", "kind", "agents", "nc", "dac", "ttc", "ep", "pdms");
    for kind in ScenarioKind::ALL {
        let scene = generate_scene(seed, kind, &world)?;
        let expert = match expert_rollout(&scene, &VocabConfig::fast(), &metrics) {
            Ok(e) => e,
            Err(e) => {
                println!("{kind:<12} expert discarded: {e}");
                continue;
            }
        };
        let item = SceneItem::new(kind.to_string(), 0, scene, expert, world.n_map)?;
        let sub = item.scorer(&metrics)?.score(&item.expert)?;
        println!(
            "{:<12} {:>6} {:>5} {:>5} {:>5} {:>5.2} {:>6.3}",
            kind.to_string(),
            item.scene.agents.len(),
            sub.nc,
            sub.dac,
            sub.ttc,
            sub.ep,
            pdms(&sub, &metrics)
        );
        let svg = render_scene(&item, &[], metrics.ego_length, metrics.ego_width);
        let path = out.join(format!("{kind}.svg").to_lowercase());
        std::fs::write(&path, svg)?;
    }
    println!("renders written to {}", out.display());
    Ok(())
}
