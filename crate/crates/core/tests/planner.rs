use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tisa_autodiff::{Tape, Tensor};
use tisa_planner::action_space::{derive_labels, VocabConfig};
use tisa_planner::corpus::generate_corpus;
use tisa_planner::kinematics::EgoState;
use tisa_planner::metrics::MetricConfig;
use tisa_planner::planner::{decode_checkpoint, write_checkpoint, DecodeMode, ModelConfig, Planner};
use tisa_planner::train::{fit, TrainConfig};
use tisa_planner::world::tokens::TokenBundle;
use tisa_planner::world::{generate_scene, tokenize_scene, ScenarioKind, Scene, WorldConfig};
use tisa_planner::Error;

fn planner(seed: u64) -> Planner {
    Planner::new(&ModelConfig::default(), &VocabConfig::fast(), seed).unwrap()
}

fn scene_tokens(kind: ScenarioKind) -> (Scene, TokenBundle) {
    let s = generate_scene(21, kind, &WorldConfig::default()).unwrap();
    let t = tokenize_scene(&s, 24).unwrap();
    (s, t)
}

fn states(n: usize, shift: f64) -> Vec<EgoState> {
    (0..n)
        .map(|k| EgoState {
            x: 4.0 * k as f64 + shift,
            y: 0.3 * (k as f64).sin(),
            v: 8.0 + 0.1 * k as f64,
            theta: 0.02 * k as f64,
            frame_time: 0,
        })
        .collect()
}

fn value(tape: &Tape, v: tisa_autodiff::Var) -> Tensor {
    (*tape.value(v)).clone()
}

#[test]
fn ego_token_has_model_width_and_ignores_token_order() {
    let p = planner(1);
    let (_, tokens) = scene_tokens(ScenarioKind::LeadFollow);
    let e = p.ego_token(&tokens).unwrap();
    assert_eq!(e.len(), 64);
    let mut shuffled = tokens.clone();
    shuffled.env.reverse();
    shuffled.map_labels.reverse();
    shuffled.n_agents = tokens.n_agents;
    let f = p.ego_token(&shuffled).unwrap();
    for (a, b) in e.iter().zip(&f) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn ego_token_stays_in_the_hull_of_the_values() {
    let p = planner(2);
    let (_, mut tokens) = scene_tokens(ScenarioKind::Nudge);
    let dup = tokens.env[0];
    tokens.env.insert(0, dup);
    tokens.n_agents += 1;
    let tape = Tape::new();
    let b = p.bind_frozen(&tape);
    let ego = value(&tape, p.contextualize_ego(&tape, &b, &tokens).unwrap());
    let vals = value(&tape, p.context_values(&tape, &b, &tokens).unwrap());
    for c in 0..ego.cols() {
        let col: Vec<f64> = (0..vals.rows()).map(|r| vals.get(r, c)).collect();
        let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let x = ego.get(0, c);
        assert!(x >= lo - 1e-12 && x <= hi + 1e-12);
    }
}

#[test]
fn prospective_tokens_are_additive() {
    let p = planner(3);
    let tape = Tape::new();
    let b = p.bind_frozen(&tape);
    let e1 = tape.constant(Tensor::row_vector((0..64).map(|i| (i as f64 * 0.1).sin()).collect()));
    let e2 = tape.constant(Tensor::row_vector((0..64).map(|i| (i as f64 * 0.3).cos()).collect()));
    let st = states(5, 0.0);
    let a = value(&tape, p.prospective_tokens(&tape, &b, e1, &st).unwrap());
    let c = value(&tape, p.prospective_tokens(&tape, &b, e2, &st).unwrap());
    let emb = value(&tape, p.embed_states(&tape, &b, &[EgoState::origin(8.0)]).unwrap());
    let origin = value(&tape, p.prospective_tokens(&tape, &b, e1, &[EgoState::origin(8.0)]).unwrap());
    let (v1, v2) = (value(&tape, e1), value(&tape, e2));
    for j in 0..64 {
        assert!((origin.get(0, j) - (v1.get(0, j) + emb.get(0, j))).abs() < 1e-12);
        for r in 0..5 {
            assert!(((a.get(r, j) - c.get(r, j)) - (v1.get(0, j) - v2.get(0, j))).abs() < 1e-12);
        }
    }
}

#[test]
fn alignment_is_time_invariant() {
    let p = planner(4);
    let tape = Tape::new();
    let b = p.bind_frozen(&tape);
    let row: Vec<f64> = (0..64).map(|i| (i as f64 * 0.7).sin()).collect();
    let mut rows: Vec<Vec<f64>> = (0..8).map(|k| (0..64).map(|i| ((i * k) as f64 * 0.13).cos()).collect()).collect();
    rows[1] = row.clone();
    rows[7] = row;
    let x = tape.constant(Tensor::from_rows(&rows).unwrap());
    let out = value(&tape, p.tisa_align(&tape, &b, x).unwrap());
    assert_eq!(out.row(1), out.row(7));
    let w = value(&tape, p.tisa_weights(&tape, &b, x).unwrap());
    assert_eq!(w.cols(), 16);
    for r in 0..8 {
        assert!((w.row(r).iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }
}

#[test]
fn every_alignment_slot_receives_gradient() {
    let p = planner(5);
    let (_, tokens) = scene_tokens(ScenarioKind::CurveKeep);
    let tape = Tape::new();
    let b = p.bind(&tape);
    let out = p.forward_teacher_forced(&tape, &b, &tokens, &states(8, 0.0)).unwrap();
    let loss = tape.cross_entropy(out.logits, &[3, 40, 100, 7, 300, 511, 12, 64]).unwrap();
    let grads = tape.backward(loss).unwrap();
    for name in ["tisa.keys", "tisa.values"] {
        let i = p.params.names().iter().position(|n| n == name).unwrap();
        let g = grads.get(b.vars()[i]).unwrap();
        for r in 0..16 {
            assert!(g.row(r).iter().any(|&x| x != 0.0), "{name} row {r}");
        }
    }
}

#[test]
fn logits_are_causal_in_the_conditioning_states() {
    let p = planner(6);
    let (_, tokens) = scene_tokens(ScenarioKind::Bypass);
    let run = |st: &[EgoState]| {
        let tape = Tape::new();
        let b = p.bind_frozen(&tape);
        value(&tape, p.forward_teacher_forced(&tape, &b, &tokens, st).unwrap().logits)
    };
    let base = states(8, 0.0);
    let a = run(&base);
    assert!(a.data().iter().all(|x| x.is_finite()));
    for j in [1, 4, 7] {
        let mut pert = base.clone();
        pert[j].x += 3.0;
        pert[j].theta -= 0.2;
        let b = run(&pert);
        for k in 0..j {
            for c in 0..a.cols() {
                assert!((a.get(k, c) - b.get(k, c)).abs() <= 1e-12);
            }
        }
        assert!((0..a.cols()).any(|c| a.get(j, c) != b.get(j, c)));
    }
}

#[test]
fn disabling_alignment_changes_the_logits() {
    let with = planner(7);
    let mut without = with.clone();
    without.config.tisa_enabled = false;
    let (_, tokens) = scene_tokens(ScenarioKind::LeftTurn);
    let run = |p: &Planner| {
        let tape = Tape::new();
        let b = p.bind_frozen(&tape);
        value(&tape, p.forward_teacher_forced(&tape, &b, &tokens, &states(8, 0.0)).unwrap().logits)
    };
    assert_ne!(run(&with).data(), run(&without).data());
}

#[test]
fn greedy_plans_are_deterministic_and_reachable() {
    let p = planner(8);
    for kind in ScenarioKind::ALL {
        let (s, tokens) = scene_tokens(kind);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = p.plan(&tokens, &s.initial_state(), DecodeMode::Greedy, 8, 0.5, &mut rng).unwrap();
        let b = p.plan(&tokens, &s.initial_state(), DecodeMode::Greedy, 8, 0.5, &mut rng).unwrap();
        assert_eq!(a, b);
        let labels = derive_labels(&a.trajectory, &p.vocab, &p.vocab.config().labels).unwrap();
        assert_eq!(labels, a.action_ids);
    }
}

#[test]
fn sampled_logprob_matches_teacher_forcing() {
    let p = planner(9);
    let (s, tokens) = scene_tokens(ScenarioKind::LeadFollow);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for temperature in [1.0, 1.7] {
        let plan = p
            .plan(&tokens, &s.initial_state(), DecodeMode::Sample { temperature }, 8, 0.5, &mut rng)
            .unwrap();
        assert!((plan.total_logprob - plan.step_logprobs.iter().sum::<f64>()).abs() < 1e-12);
        let tape = Tape::new();
        let b = p.bind_frozen(&tape);
        let out = p.forward_teacher_forced(&tape, &b, &tokens, &plan.trajectory.states[..8]).unwrap();
        let logits = value(&tape, out.logits);
        for (k, id) in plan.action_ids.iter().enumerate() {
            let row: Vec<f64> = logits.row(k).iter().map(|z| z / temperature).collect();
            let lse = tisa_autodiff::tensor::log_sum_exp(&row);
            assert!((plan.step_logprobs[k] - (row[id.index()] - lse)).abs() < 1e-9);
        }
        if temperature == 1.0 {
            let lp = p
                .sequence_logprob(&tape, &b, &tokens, &s.initial_state(), &plan.action_ids, 0.5)
                .unwrap();
            assert!((tape.item(lp).unwrap() - plan.total_logprob).abs() < 1e-9);
        }
    }
}

/// A planner fitted briefly on a small corpus, so its logits have the margins
/// of a trained model rather than the near-ties of a random one.
fn briefly_trained() -> (Planner, Vec<tisa_planner::corpus::SceneItem>) {
    let world = WorldConfig {
        scenes: 48,
        ..WorldConfig::default()
    };
    let vocab = VocabConfig::fast();
    let (items, _) = generate_corpus(3, &world, &vocab, &MetricConfig::default()).unwrap();
    let mut p = planner(10);
    let samples: Vec<_> = items.iter().map(|it| it.imitation_sample(&p.vocab).unwrap()).collect();
    let cfg = TrainConfig {
        epochs: 10,
        warmup_epochs: 1.0,
        batch_size: 8,
        ..TrainConfig::default()
    };
    fit(&mut p, &samples, &cfg, |_, _| Ok(())).unwrap();
    (p, items)
}

#[test]
fn low_temperature_collapses_to_greedy() {
    let (p, items) = briefly_trained();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut rate = |temperature: f64| {
        let (mut same, mut total) = (0, 0);
        for it in items.iter().take(10) {
            let greedy = p.plan(&it.tokens, &it.initial(), DecodeMode::Greedy, 8, 0.5, &mut rng).unwrap();
            for _ in 0..20 {
                let c = p
                    .plan(&it.tokens, &it.initial(), DecodeMode::Sample { temperature }, 8, 0.5, &mut rng)
                    .unwrap();
                same += (c.action_ids == greedy.action_ids) as usize;
                total += 1;
            }
        }
        same as f64 / total as f64
    };
    let (warm, cold) = (rate(0.01), rate(1e-4));
    assert!(cold >= warm);
    assert!(cold >= 0.95, "{cold}");
}

#[test]
fn non_positive_temperature_is_rejected() {
    let p = planner(11);
    let (s, tokens) = scene_tokens(ScenarioKind::Straight);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let r = p.plan(&tokens, &s.initial_state(), DecodeMode::Sample { temperature: 0.0 }, 8, 0.5, &mut rng);
    assert!(matches!(r, Err(Error::Domain { .. })));
}

#[test]
fn checkpoint_roundtrip_is_exact() {
    let p = planner(12);
    let echo = serde_json::json!({"seed": 12});
    let mut bytes = Vec::new();
    write_checkpoint(&mut bytes, &p, &echo).unwrap();
    let (q, header) = decode_checkpoint(&bytes).unwrap();
    assert_eq!(header.echo, echo);
    assert_eq!(header.model, p.config);
    assert_eq!(q.params.names(), p.params.names());
    for (a, b) in q.params.tensors().iter().zip(p.params.tensors()) {
        assert_eq!(a.data(), b.data());
    }
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(decode_checkpoint(&bad), Err(Error::Format { .. })));
    assert!(decode_checkpoint(&bytes[..bytes.len() - 3]).is_err());
}

#[test]
fn fast_preset_parameter_count() {
    assert_eq!(planner(0).params.scalar_count(), 153_154);
}
