use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tisa_planner::action_space::VocabConfig;
use tisa_planner::geometry::{obb_overlap, Frame, OrientedBox, Pose, Vec2};
use tisa_planner::kinematics::{rollout, KinematicAction, Trajectory};
use tisa_planner::metrics::{comfort_ok, pdms, score_trajectory, MetricConfig, Scorer, SubScores};
use tisa_planner::world::{expert_rollout, generate_scene, AgentTrack, ScenarioKind, Scene, WorldConfig};

fn unit(x: f64, y: f64, heading: f64) -> OrientedBox {
    OrientedBox::new(Vec2::new(x, y), heading, 1.0, 1.0)
}

fn contains(b: &OrientedBox, p: Vec2) -> bool {
    let q = Frame::new(b.center, b.heading).to_local(p);
    q.x.abs() <= 0.5 * b.length && q.y.abs() <= 0.5 * b.width
}

fn perimeter(b: &OrientedBox, per_edge: usize) -> Vec<Vec2> {
    let c = b.corners();
    (0..4)
        .flat_map(|i| {
            let (p, q) = (c[i], c[(i + 1) % 4]);
            (0..per_edge).map(move |k| p + (q - p).scale(k as f64 / per_edge as f64))
        })
        .collect()
}

/// Dense-sampling reference: convex boxes overlap iff a boundary point of one
/// lies in the other.
fn sampled_overlap(a: &OrientedBox, b: &OrientedBox) -> bool {
    perimeter(a, 2000).into_iter().any(|p| contains(b, p)) || perimeter(b, 2000).into_iter().any(|p| contains(a, p))
}

fn grown(b: &OrientedBox, d: f64) -> OrientedBox {
    OrientedBox::new(b.center, b.heading, b.length + 2.0 * d, b.width + 2.0 * d)
}

#[test]
fn obb_basic_cases() {
    assert!(obb_overlap(&unit(0.0, 0.0, 0.3), &unit(0.0, 0.0, 0.3)));
    assert!(!obb_overlap(&unit(0.0, 0.0, 0.0), &unit(10.0, 0.0, 0.0)));
}

/// A 2×1 box at the origin and a 2×1 box turned 45° whose rear-right corner
/// sits on the first box's front-left corner, shifted along +y by `gap`.
fn corner_pair(gap: f64) -> (OrientedBox, OrientedBox) {
    let a = OrientedBox::new(Vec2::new(0.0, 0.0), 0.0, 2.0, 1.0);
    let h = std::f64::consts::FRAC_PI_4;
    let center = Vec2::new(1.0, 0.5 + gap) + Vec2::new(1.0, 0.5).rotate(h);
    (a, OrientedBox::new(center, h, 2.0, 1.0))
}

#[test]
fn corner_contact_at_45_degrees_is_overlap() {
    let (a, b) = corner_pair(0.0);
    assert!(obb_overlap(&a, &b));
    assert!(obb_overlap(&b, &a));
    assert!(sampled_overlap(&a, &b));
    let (a, b) = corner_pair(1e-6);
    assert!(!obb_overlap(&a, &b));
    assert!(!sampled_overlap(&a, &b));
    let (a, b) = corner_pair(-1e-3);
    assert!(obb_overlap(&a, &b));
    assert!(sampled_overlap(&a, &b));
}

#[test]
fn composite_examples() {
    let cfg = MetricConfig::default();
    assert_eq!(pdms(&SubScores::PERFECT, &cfg), 1.0);
    assert_eq!(pdms(&SubScores { nc: 0.0, ..SubScores::PERFECT }, &cfg), 0.0);
    let half = pdms(&SubScores { ep: 0.5, ..SubScores::PERFECT }, &cfg);
    assert!((half - 9.5 / 12.0).abs() < 1e-15);
}

fn straight_with_expert(seed: u64) -> (Scene, Trajectory) {
    let mut s = generate_scene(seed, ScenarioKind::Straight, &WorldConfig::default()).unwrap();
    s.agents.clear();
    let e = expert_rollout(&s, &VocabConfig::default(), &MetricConfig::default()).unwrap();
    (s, e)
}

#[test]
fn leaving_the_corridor_fails_drivable_area() {
    let cfg = MetricConfig::default();
    let (s, e) = straight_with_expert(2);
    let off = rollout(&s.initial_state(), &[KinematicAction::new(0.0, 0.9); 8], s.dt).unwrap();
    let sub = score_trajectory(&off, &s, &e, &cfg).unwrap();
    assert_eq!(sub.dac, 0.0);
    assert_eq!(pdms(&sub, &cfg), 0.0);
}

#[test]
fn scripted_collision_at_step_three() {
    let cfg = MetricConfig::default();
    let (mut s, e) = straight_with_expert(5);
    let poses = s.world_poses(&e);
    let far = |p: Pose| Pose::new(p.x + 200.0, p.y + 200.0, p.heading);
    s.agents.push(AgentTrack {
        length: 4.5,
        width: 1.8,
        poses: (0..=s.horizon).map(|k| if k == 3 { poses[3] } else { far(poses[k]) }).collect(),
    });
    let sub = score_trajectory(&e, &s, &e, &cfg).unwrap();
    assert_eq!((sub.nc, sub.ttc), (0.0, 0.0));
    assert_eq!(pdms(&sub, &cfg), 0.0);
}

#[test]
fn misaligned_trajectory_is_rejected() {
    let (s, e) = straight_with_expert(1);
    let short = Trajectory {
        states: e.states[..5].to_vec(),
        dt: e.dt,
    };
    assert!(score_trajectory(&short, &s, &e, &MetricConfig::default()).is_err());
}

#[test]
fn in_threshold_rollouts_are_comfortable() {
    let cfg = MetricConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let trials = 2000;
    let mut pass = 0;
    for _ in 0..trials {
        let mut a: f64 = rng.gen_range(-4.4..4.4);
        let mut w: f64 = rng.gen_range(-0.9..0.9);
        let actions: Vec<KinematicAction> = (0..8)
            .map(|_| {
                a = (a + rng.gen_range(-3.9..3.9)).clamp(-4.4, 4.4);
                w = (w + rng.gen_range(-0.9..0.9)).clamp(-0.9, 0.9);
                KinematicAction::new(a, w)
            })
            .collect();
        let t = rollout(&tisa_planner::kinematics::EgoState::origin(10.0), &actions, 0.5).unwrap();
        pass += comfort_ok(&t, &cfg) as usize;
    }
    assert!(pass as f64 >= 0.99 * trials as f64, "{pass}/{trials}");
}

#[test]
fn scores_are_invariant_under_rigid_motion() {
    let cfg = MetricConfig::default();
    for kind in ScenarioKind::ALL {
        let s = generate_scene(12, kind, &WorldConfig::default()).unwrap();
        let Ok(e) = expert_rollout(&s, &VocabConfig::default(), &cfg) else { continue };
        let moved = s.transformed(&Frame::new(Vec2::new(300.0, -41.0), -2.4));
        let probe = rollout(&s.initial_state(), &[KinematicAction::new(1.0, 0.2); 8], s.dt).unwrap();
        for t in [&e, &probe] {
            let a = Scorer::new(&s, &e, &cfg).unwrap().score(t).unwrap();
            let b = Scorer::new(&moved, &e, &cfg).unwrap().score(t).unwrap();
            assert_eq!((a.nc, a.dac, a.ttc, a.comfort), (b.nc, b.dac, b.ttc, b.comfort), "{kind}");
            assert!((a.ep - b.ep).abs() < 1e-9);
        }
    }
}

fn sub_scores() -> impl Strategy<Value = SubScores> {
    let bit = prop_oneof![Just(0.0), Just(1.0)];
    (bit.clone(), bit.clone(), bit.clone(), bit, 0.0f64..=1.0).prop_map(|(nc, dac, ttc, comfort, ep)| SubScores {
        nc,
        dac,
        ttc,
        comfort,
        ep,
    })
}

proptest! {
    #[test]
    fn pdms_is_monotone_in_every_sub_score(s in sub_scores(), field in 0usize..5, bump in 0.0f64..=1.0) {
        let cfg = MetricConfig::default();
        let mut up = s;
        match field {
            0 => up.nc = 1.0,
            1 => up.dac = 1.0,
            2 => up.ttc = 1.0,
            3 => up.comfort = 1.0,
            _ => up.ep = (s.ep + bump).min(1.0),
        }
        let (lo, hi) = (pdms(&s, &cfg), pdms(&up, &cfg));
        prop_assert!(hi >= lo);
        prop_assert!((0.0..=1.0).contains(&lo));
    }

    #[test]
    fn obb_agrees_with_dense_sampling(
        ax in -3.0f64..3.0, ay in -3.0f64..3.0, ah in -3.2f64..3.2,
        bx in -3.0f64..3.0, by in -3.0f64..3.0, bh in -3.2f64..3.2,
        al in 0.5f64..5.0, aw in 0.5f64..2.0, bl in 0.5f64..5.0, bw in 0.5f64..2.0,
    ) {
        let a = OrientedBox::new(Vec2::new(ax, ay), ah, al, aw);
        let b = OrientedBox::new(Vec2::new(bx, by), bh, bl, bw);
        let d = 0.01;
        if obb_overlap(&grown(&a, -d), &grown(&b, -d)) {
            prop_assert!(sampled_overlap(&a, &b));
        }
        if sampled_overlap(&a, &b) {
            prop_assert!(obb_overlap(&a, &b));
        }
        if !obb_overlap(&grown(&a, d), &grown(&b, d)) {
            prop_assert!(!obb_overlap(&a, &b));
        }
    }
}
