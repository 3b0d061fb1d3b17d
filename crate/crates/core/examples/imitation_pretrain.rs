//! Imitation pre-training on a small synthetic corpus, reporting the training
//! curve and held-out driving scores before and after.
//!
//! ```text
//! cargo run --release --example imitation_pretrain -- [scenes] [epochs]
//! ```

use tisa_planner::action_space::VocabConfig;
use tisa_planner::corpus::{evaluate_policy, generate_corpus, split, ScoreSummary};
use tisa_planner::metrics::MetricConfig;
use tisa_planner::planner::{ModelConfig, Planner};
use tisa_planner::train::{fit, TrainConfig};
use tisa_planner::world::WorldConfig;

fn main() -> tisa_planner::Result<()> {
    let mut args = std::env::args().skip(1);
    let scenes: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(160);
    let epochs: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(20);

    let vocab = VocabConfig::fast();
    let metrics = MetricConfig::default();
    let world = WorldConfig {
        scenes,
        ..WorldConfig::default()
    };
    let (items, dropped) = generate_corpus(0, &world, &vocab, &metrics)?;
    let (train, test) = split(items, world.test_fraction);
    println!("{} train / {} test scenes ({} dropped)", train.len(), test.len(), dropped.len());

    let mut planner = Planner::new(&ModelConfig::default(), &vocab, 0)?;
    let report = |p: &Planner, label: &str| -> tisa_planner::Result<()> {
        let s = ScoreSummary::of(&evaluate_policy(p, &test, &metrics)?).percent();
        println!("{label:<10} pdms {:5.1}  nc {:5.1}  dac {:5.1}  ep {:5.1}", s.pdms, s.nc, s.dac, s.ep);
        Ok(())
    };
    report(&planner, "untrained")?;

    let samples = train
        .iter()
        .map(|it| it.imitation_sample(&planner.vocab))
        .collect::<tisa_planner::Result<Vec<_>>>()?;
    let cfg = TrainConfig {
        epochs,
        warmup_epochs: (epochs as f64 / 6.0).max(1.0),
        ..TrainConfig::default()
    };
    fit(&mut planner, &samples, &cfg, |row, _| {
        println!("epoch {:>3}  lr {:.2e}  ce {:.4}  aux {:.4}  acc {:.3}", row.epoch, row.lr, row.ce, row.aux, row.acc);
        Ok(())
    })?;
    report(&planner, "pretrained")
}
