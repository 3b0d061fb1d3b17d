//! Rolls a constant-control action sequence out in closed form and compares
//! each step against fine-step numerical integration.
//!
//! ```text
//! cargo run --example kinematic_rollout
//! ```

use tisa_planner::kinematics::{integrate_numeric, rollout, step, EgoState, KinematicAction};

fn main() -> tisa_planner::Result<()> {
    let start = EgoState::origin(10.0);
    let dt = 0.5;
    // Brake gently into a left turn, then straighten while accelerating.
    let actions: Vec<KinematicAction> = [(-1.0, 0.0), (-1.0, 0.2), (0.0, 0.4), (0.0, 0.4), (0.5, 0.1), (1.0, 0.0)]
        .map(|(a, w)| KinematicAction::new(a, w))
        .to_vec();
    let traj = rollout(&start, &actions, dt)?;

    println!("{:>4} {:>9} {:>9} {:>7} {:>8}   {:>10}", "k", "x", "y", "v", "theta", "vs rk4");
    for (k, s) in traj.states.iter().enumerate() {
        let err = if k == 0 {
            0.0
        } else {
            let prev = &traj.states[k - 1];
            let exact = step(prev, &actions[k - 1], dt)?;
            let numeric = integrate_numeric(prev, &actions[k - 1], dt, 100_000)?;
            (exact.dx - numeric.dx).hypot(exact.dy - numeric.dy)
        };
        println!("{k:>4} {:>9.4} {:>9.4} {:>7.3} {:>8.4}   {err:>10.2e}", s.x, s.y, s.v, s.theta);
    }
    Ok(())
}
