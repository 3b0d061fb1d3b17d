use proptest::prelude::*;
use tisa_planner::kinematics::{advance, integrate_numeric, rollout, step, EgoState, KinematicAction, Trajectory, SMALL_TURN};

fn state(v: f64) -> EgoState {
    EgoState::origin(v)
}

#[test]
fn straight_constant_speed_step() {
    let d = step(&state(10.0), &KinematicAction::new(0.0, 0.0), 0.5).unwrap();
    assert_eq!((d.dx, d.dy, d.dv, d.dtheta), (5.0, 0.0, 0.0, 0.0));
}

#[test]
fn accelerating_from_rest() {
    let d = step(&state(0.0), &KinematicAction::new(2.0, 0.0), 0.5).unwrap();
    assert!((d.dx - 0.25).abs() < 1e-15);
    assert_eq!((d.dy, d.dv, d.dtheta), (0.0, 1.0, 0.0));
}

#[test]
fn turning_step_matches_reference_values() {
    let d = step(&state(10.0), &KinematicAction::new(0.0, 0.5), 0.5).unwrap();
    assert!((d.dx - 4.948079).abs() < 1e-6, "dx {}", d.dx);
    assert!((d.dy - 0.621752).abs() < 1e-6, "dy {}", d.dy);
    assert_eq!(d.dtheta, 0.25);
    let n = integrate_numeric(&state(10.0), &KinematicAction::new(0.0, 0.5), 0.5, 1_000_000).unwrap();
    assert!((n.dx - d.dx).abs() < 1e-6 && (n.dy - d.dy).abs() < 1e-6);
}

#[test]
fn numeric_oracle_is_exact_for_straight_motion() {
    let a = KinematicAction::new(0.0, 0.0);
    let n = integrate_numeric(&state(10.0), &a, 0.5, 1_000_000).unwrap();
    assert!((n.dx - 5.0).abs() < 1e-9 && n.dy.abs() < 1e-9);
}

#[test]
fn single_substep_shows_discretization_error() {
    let a = KinematicAction::new(1.0, 1.2);
    let coarse = integrate_numeric(&state(8.0), &a, 0.5, 1).unwrap();
    let fine = integrate_numeric(&state(8.0), &a, 0.5, 1_000_000).unwrap();
    let exact = step(&state(8.0), &a, 0.5).unwrap();
    let err = |d: &tisa_planner::kinematics::StateDelta| (d.dx - exact.dx).abs() + (d.dy - exact.dy).abs();
    assert!(err(&coarse) > 1e-6);
    assert!(err(&fine) < err(&coarse));
}

#[test]
fn straight_rollout_waypoints() {
    let t = rollout(&state(10.0), &[KinematicAction::new(0.0, 0.0); 8], 0.5).unwrap();
    assert_eq!(t.steps(), 8);
    for (k, s) in t.states.iter().enumerate() {
        assert!((s.x - 5.0 * k as f64).abs() < 1e-12 && s.y == 0.0);
    }
}

#[test]
fn first_waypoint_is_the_unrotated_step() {
    let a = KinematicAction::new(-1.5, 0.7);
    let t = rollout(&state(6.0), &[a], 0.5).unwrap();
    let d = step(&state(6.0), &a, 0.5).unwrap();
    assert_eq!((t.states[1].x, t.states[1].y), (d.dx, d.dy));
}

#[test]
fn constant_turn_stays_on_circle() {
    let t = rollout(&state(10.0), &[KinematicAction::new(0.0, 0.5); 4], 0.5).unwrap();
    for s in &t.states {
        let r = (s.x * s.x + (s.y - 20.0).powi(2)).sqrt();
        assert!((r - 20.0).abs() < 1e-6, "radius {r}");
    }
}

#[test]
fn branch_threshold_is_continuous() {
    let dt = 0.5;
    let w_at = |x: f64| x / dt;
    for v in [0.0, 3.0, 25.0] {
        for a in [-4.0, 0.0, 2.5] {
            let below = step(&state(v), &KinematicAction::new(a, w_at(SMALL_TURN * (1.0 - 1e-9))), dt).unwrap();
            let above = step(&state(v), &KinematicAction::new(a, w_at(SMALL_TURN * (1.0 + 1e-9))), dt).unwrap();
            assert!((below.dx - above.dx).abs() < 1e-12);
            assert!((below.dy - above.dy).abs() < 1e-12);
        }
    }
}

#[test]
fn invalid_inputs_are_rejected() {
    let a = KinematicAction::new(0.0, 0.0);
    assert!(step(&state(1.0), &a, 0.0).is_err());
    assert!(step(&state(1.0), &KinematicAction::new(f64::NAN, 0.0), 0.5).is_err());
    assert!(rollout(&state(1.0), &[], 0.5).is_err());
    assert!(integrate_numeric(&state(1.0), &a, 0.5, 0).is_err());
}

#[test]
fn csv_roundtrip_preserves_states() {
    let t = rollout(&state(7.0), &[KinematicAction::new(0.5, -0.3); 5], 0.5).unwrap();
    let mut buf = Vec::new();
    t.write_csv(&mut buf).unwrap();
    let back = Trajectory::read_csv(buf.as_slice(), 0.5, 0).unwrap();
    assert_eq!(back.states.len(), t.states.len());
    for (a, b) in back.states.iter().zip(&t.states) {
        assert_eq!((a.x, a.y, a.v, a.theta), (b.x, b.y, b.v, b.theta));
    }
}

fn action() -> impl Strategy<Value = KinematicAction> {
    (-3.0f64..3.0, -1.5f64..1.5).prop_map(|(a, w)| KinematicAction::new(a, w))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn closed_form_agrees_with_fine_integration(v in 0.0f64..30.0, a in -5.0f64..5.0, w in -1.5f64..1.5) {
        let act = KinematicAction::new(a, w);
        let exact = step(&state(v), &act, 0.5).unwrap();
        let num = integrate_numeric(&state(v), &act, 0.5, 20_000).unwrap();
        prop_assert!((exact.dx - num.dx).abs() < 1e-8);
        prop_assert!((exact.dy - num.dy).abs() < 1e-8);
    }

    #[test]
    fn mirrored_yaw_mirrors_lateral_motion(v in 0.0f64..30.0, a in -5.0f64..5.0, w in -1.5f64..1.5) {
        let l = step(&state(v), &KinematicAction::new(a, w), 0.5).unwrap();
        let r = step(&state(v), &KinematicAction::new(a, -w), 0.5).unwrap();
        prop_assert_eq!(l.dx, r.dx);
        prop_assert_eq!(l.dy, -r.dy);
    }

    #[test]
    fn rollouts_compose(v in 2.0f64..20.0, first in prop::collection::vec(action(), 1..5), second in prop::collection::vec(action(), 1..5)) {
        let s0 = state(v);
        let mut all = first.clone();
        all.extend(&second);
        let whole = rollout(&s0, &all, 0.5).unwrap();
        let head = rollout(&s0, &first, 0.5).unwrap();
        let tail = rollout(head.states.last().unwrap(), &second, 0.5).unwrap();
        for (a, b) in whole.states[first.len()..].iter().zip(&tail.states) {
            prop_assert!((a.x - b.x).abs() < 1e-9 && (a.y - b.y).abs() < 1e-9);
            prop_assert!((a.theta - b.theta).abs() < 1e-12);
        }
    }

    #[test]
    fn advance_accumulates_heading(v in 0.0f64..20.0, acts in prop::collection::vec(action(), 1..8)) {
        let mut s = state(v);
        let mut theta = 0.0;
        for a in &acts {
            s = advance(&s, a, 0.5).unwrap();
            theta += a.yaw_rate * 0.5;
        }
        prop_assert!((s.theta - theta).abs() < 1e-12);
    }
}
