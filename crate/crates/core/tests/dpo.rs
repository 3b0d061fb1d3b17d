use proptest::prelude::*;
use tisa_planner::action_space::VocabConfig;
use tisa_planner::corpus::{generate_corpus, SceneItem};
use tisa_planner::dpo::{
    build_preferences, check_reference, dpo_loss, finetune, make_record, mean_log_ratios, naive_pairs,
    sample_candidates, Candidate, DpoConfig, LoserKind, PreferenceRecord, SceneIndex,
};
use tisa_planner::kinematics::Trajectory;
use tisa_planner::metrics::{pdms, MetricConfig, SubScores};
use tisa_planner::planner::{ModelConfig, PlanResult, Planner};
use tisa_planner::world::WorldConfig;
use tisa_planner::Error;

/// Independent single-pair reference: −ln σ(β·((πw − rw) − (πl − rl))).
fn standard_dpo(pw: f64, rw: f64, pl: f64, rl: f64, beta: f64) -> f64 {
    let z = beta * ((pw - rw) - (pl - rl));
    (1.0 + (-z).exp()).ln()
}

fn loss_at_margin(margin: f64, beta: f64) -> f64 {
    dpo_loss(&[margin], &[0.0], &[0.0], &[0.0], beta).unwrap()
}

#[test]
fn equal_policies_give_ln_2() {
    let w = [-3.0, -7.5, -1.25];
    let l = [-9.0, -2.0];
    let loss = dpo_loss(&w, &w, &l, &l, 0.1).unwrap();
    assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
}

#[test]
fn margin_ten_at_beta_point_one() {
    let loss = dpo_loss(&[-2.0, 0.0], &[-12.0, -10.0], &[-5.0], &[-5.0], 0.1).unwrap();
    assert!((loss - 0.313262).abs() < 5e-7);
}

#[test]
fn single_pair_matches_standard_dpo() {
    for &(pw, rw, pl, rl, beta) in &[
        (-3.1, -4.0, -8.2, -7.7, 0.1),
        (-20.0, -10.0, -1.0, -30.0, 0.5),
        (0.0, 0.0, 0.0, 0.0, 2.0),
        (-55.5, -41.25, -60.0, -33.0, 0.05),
    ] {
        let ours = dpo_loss(&[pw], &[rw], &[pl], &[rl], beta).unwrap();
        assert!((ours - standard_dpo(pw, rw, pl, rl, beta)).abs() < 1e-12);
    }
}

#[test]
fn loss_decreases_over_a_margin_grid() {
    let grid: Vec<f64> = (-200..=200).map(|i| loss_at_margin(i as f64 * 0.25, 0.1)).collect();
    for w in grid.windows(2) {
        assert!(w[1] < w[0]);
    }
    assert!(grid.iter().all(|&l| l > 0.0));
}

#[test]
fn slope_at_zero_margin_is_minus_half_beta() {
    for beta in [0.1, 0.2, 1.0] {
        let h = 1e-5;
        let slope = (loss_at_margin(h, beta) - loss_at_margin(-h, beta)) / (2.0 * h);
        assert!((slope + beta / 2.0).abs() < 1e-9, "beta {beta}: {slope}");
    }
}

#[test]
fn empty_sets_are_domain_errors() {
    assert!(matches!(dpo_loss(&[], &[], &[1.0], &[1.0], 0.1), Err(Error::Domain { .. })));
    assert!(matches!(dpo_loss(&[1.0], &[1.0], &[], &[], 0.1), Err(Error::Domain { .. })));
}

fn sub(nc: f64, dac: f64, ep: f64, ttc: f64) -> SubScores {
    SubScores {
        nc,
        dac,
        ep,
        ttc,
        comfort: 1.0,
    }
}

fn cand(index: usize, s: SubScores) -> Candidate {
    Candidate {
        index,
        plan: PlanResult {
            action_ids: Vec::new(),
            step_logprobs: Vec::new(),
            trajectory: Trajectory {
                states: Vec::new(),
                dt: 0.5,
            },
            total_logprob: 0.0,
        },
        sub: s,
        pdms: pdms(&s, &MetricConfig::default()),
    }
}

#[test]
fn each_row_exemplar_is_selected() {
    let mut c: Vec<Candidate> = (0..6).map(|i| cand(i, sub(1.0, 1.0, 1.0, 1.0))).collect();
    c.push(cand(6, sub(0.0, 1.0, 0.0, 0.0)));
    c.push(cand(7, sub(1.0, 0.0, 0.0, 1.0)));
    c.push(cand(8, sub(1.0, 1.0, 0.0, 1.0)));
    c.push(cand(9, sub(1.0, 1.0, 0.7, 0.0)));
    let sel = build_preferences(&c, 5).unwrap();
    assert_eq!(sel.winners, vec![0, 1, 2, 3, 4]);
    let expected = [(LoserKind::Coll, 6), (LoserKind::Da, 7), (LoserKind::Ep, 8), (LoserKind::Ttc, 9)];
    assert_eq!(sel.losers.into_iter().collect::<Vec<_>>(), expected);
}

#[test]
fn near_miss_candidates_match_no_row() {
    let mut c: Vec<Candidate> = (0..3).map(|i| cand(i, sub(1.0, 1.0, 1.0, 1.0))).collect();
    // Fails two objectives at once, or makes progress while off-road.
    c.push(cand(3, sub(1.0, 0.0, 0.0, 0.0)));
    c.push(cand(4, sub(1.0, 0.0, 0.5, 1.0)));
    assert_eq!(build_preferences(&c, 5), None);
}

#[test]
fn highest_pdms_ttc_match_wins() {
    let mut c = vec![cand(0, sub(1.0, 1.0, 1.0, 1.0))];
    let mut low = cand(1, sub(1.0, 1.0, 0.2, 0.0));
    low.pdms = 0.4;
    let mut high = cand(2, sub(1.0, 1.0, 0.9, 0.0));
    high.pdms = 0.6;
    c.extend([low, high]);
    assert_eq!(build_preferences(&c, 5).unwrap().losers[&LoserKind::Ttc], 2);
}

#[test]
fn clean_candidates_are_skipped() {
    let c: Vec<Candidate> = (0..8).map(|i| cand(i, sub(1.0, 1.0, 0.9, 1.0))).collect();
    assert_eq!(build_preferences(&c, 5), None);
    assert_eq!(naive_pairs(&c), None);
}

#[test]
fn loser_at_least_as_good_as_winners_is_skipped() {
    let c = vec![cand(0, sub(1.0, 1.0, 0.0, 1.0)), cand(1, sub(1.0, 1.0, 0.0, 1.0))];
    assert_eq!(build_preferences(&c, 1), None);
}

#[test]
fn naive_pairs_take_best_and_first_worst() {
    let c = vec![
        cand(0, sub(1.0, 1.0, 0.5, 1.0)),
        cand(1, sub(0.0, 1.0, 1.0, 0.0)),
        cand(2, sub(1.0, 1.0, 1.0, 1.0)),
        cand(3, sub(1.0, 0.0, 1.0, 1.0)),
    ];
    let sel = naive_pairs(&c).unwrap();
    assert_eq!(sel.winners, vec![2]);
    assert_eq!(sel.losers.into_iter().collect::<Vec<_>>(), vec![(LoserKind::Worst, 1)]);
}

/// An untrained planner, a small corpus and the preference records mined from it.
fn mined() -> (Planner, Vec<SceneItem>, Vec<PreferenceRecord>) {
    let vocab = VocabConfig::fast();
    let metrics = MetricConfig::default();
    let world = WorldConfig {
        scenes: 24,
        ..WorldConfig::default()
    };
    let (items, _) = generate_corpus(2, &world, &vocab, &metrics).unwrap();
    let reference = Planner::new(&ModelConfig::default(), &vocab, 4).unwrap();
    let mut records = Vec::new();
    for (k, item) in items.iter().enumerate() {
        let c = sample_candidates(&reference, item, 32, 1.2, k as u64, &metrics).unwrap();
        if let Some(sel) = build_preferences(&c, 5) {
            records.push(make_record(&reference, item, &c, &sel, "scene.json", k as u64).unwrap());
        }
    }
    (reference, items, records)
}

#[test]
fn mined_records_are_consistent_and_learnable() {
    let (reference, items, records) = mined();
    assert!(records.len() >= 4, "only {} records", records.len());
    let index = SceneIndex::new(&items);
    for r in &records {
        assert!(!r.losers.is_empty());
        r.validate().unwrap();
        check_reference(&reference, r, &index).unwrap();
        let back: PreferenceRecord = serde_json::from_str(&serde_json::to_string(r).unwrap()).unwrap();
        assert_eq!(&back, r);
    }

    let mut stale = records[0].clone();
    stale.winners[0].ref_logprob += 1e-6;
    assert!(matches!(check_reference(&reference, &stale, &index), Err(Error::Format { .. })));

    let (w0, l0) = mean_log_ratios(&reference, &records, &index).unwrap();
    assert_eq!((w0, l0), (0.0, 0.0));
    let mut policy = reference.clone();
    let cfg = DpoConfig {
        peak_lr: 1e-4,
        warmup_iterations: 2,
        iterations: 15,
        batch_size: 4,
        eval_every: 0,
        ..DpoConfig::default()
    };
    let curve = finetune(&mut policy, &reference, &records, &index, &items[..2], &cfg, &MetricConfig::default(), |_| {
        Ok(())
    })
    .unwrap();
    assert_eq!(curve.len(), 16);
    let (w1, l1) = mean_log_ratios(&policy, &records, &index).unwrap();
    assert!(w1 > w0, "winner log-ratio {w1}");
    assert!(w1 - l1 > 0.0);
}

#[test]
fn row_predicates_reject_tampered_records() {
    let (_, _, records) = mined();
    let mut bad = records[0].clone();
    let (_, loser) = bad.losers.iter_mut().next().unwrap();
    loser.sub = sub(1.0, 1.0, 1.0, 1.0);
    assert!(bad.validate().is_err());
    let mut bad = records[0].clone();
    bad.losers.clear();
    assert!(bad.validate().is_err());
}

proptest! {
    #[test]
    fn loss_is_positive_and_decreasing(m in -80.0f64..80.0, d in 1e-3f64..10.0, beta in 0.01f64..2.0) {
        let (a, b) = (loss_at_margin(m, beta), loss_at_margin(m + d, beta));
        prop_assert!(a > 0.0 && b > 0.0);
        prop_assert!(b < a);
    }

    #[test]
    fn group_loss_depends_only_on_mean_ratios(
        w in prop::collection::vec(-30.0f64..0.0, 1..6),
        l in prop::collection::vec(-30.0f64..0.0, 1..6),
        shift in -5.0f64..5.0,
    ) {
        let rw = vec![0.0; w.len()];
        let rl = vec![0.0; l.len()];
        let base = dpo_loss(&w, &rw, &l, &rl, 0.1).unwrap();
        let shifted: Vec<f64> = w.iter().map(|x| x + shift).collect();
        let ls: Vec<f64> = l.iter().map(|x| x + shift).collect();
        prop_assert!((dpo_loss(&shifted, &rw, &ls, &rl, 0.1).unwrap() - base).abs() < 1e-12);
        let mw = w.iter().sum::<f64>() / w.len() as f64;
        let ml = l.iter().sum::<f64>() / l.len() as f64;
        prop_assert!((base - standard_dpo(mw, 0.0, ml, 0.0, 0.1)).abs() < 1e-12);
    }
}
