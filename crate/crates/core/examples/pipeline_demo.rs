//! Runs every pipeline stage on a small corpus, the same sequence the `tisa`
//! command-line tool exposes one subcommand at a time.
//!
//! ```text
//! cargo run --release --example pipeline_demo -- [out_dir]
//! ```

use std::path::PathBuf;

use tisa_planner::config::RunConfig;
use tisa_planner::pipeline::{Pipeline, Policy, Split};

fn main() -> tisa_planner::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "target/pipeline_demo".into()));
    let mut config = RunConfig::default();
    config.world.scenes = 96;
    config.train.epochs = 12;
    config.train.warmup_epochs = 2.0;
    config.dpo.candidates = 32;
    config.dpo.iterations = 40;
    config.dpo.eval_every = 10;
    config.paths.out_dir = out;
    let p = Pipeline::new(config)?;

    let m = p.gen_data()?;
    println!("gen-data: {} scenes, {} dropped", m.scenes.len(), m.dropped.len());
    let labels = p.derive_labels(true)?;
    println!("derive-labels: {} labels, naive oracle agrees", labels.len());
    let curve = p.pretrain()?;
    println!("pretrain: final ce {:.4}", curve.last().map_or(f64::NAN, |r| r.ce));
    let prefs = p.sample_prefs()?;
    println!("sample-prefs: {} records, {} skipped, losers {:?}", prefs.records, prefs.skipped, prefs.losers);
    p.dpo(false)?;
    p.dpo(true)?;
    for policy in Policy::ALL {
        let r = p.eval(policy, Split::Test)?;
        println!("eval {:<11} pdms {:5.1}", policy.name(), r.percent.pdms);
    }
    let files = p.report()?;
    println!("report: {} files under {}", files.len(), p.path("report").display());
    Ok(())
}
