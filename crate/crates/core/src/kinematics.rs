//! Constant-control unicycle motion: closed-form steps, rollouts with
//! accumulated rotation, and a fine-step integrator used as an oracle.
//!
//! A step holds longitudinal acceleration `a` and yaw rate `ω` constant for
//! `dt` seconds. In the frame of the state at the start of the step the
//! displacement is
//!
//! ```text
//! dx = ∫ (v + a·t) cos(ω·t) dt      dy = ∫ (v + a·t) sin(ω·t) dt
//! ```
//!
//! which this module evaluates in closed form, with a series branch for
//! `|ω·dt| < SMALL_TURN`.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Below this `|ω·dt|` the step uses the truncated series.
pub const SMALL_TURN: f64 = 1e-6;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EgoState {
    pub x: f64,
    pub y: f64,
    pub v: f64,
    /// Unwrapped heading, so accumulated rotations add exactly.
    pub theta: f64,
    /// Step index of the frame these coordinates are expressed in.
    pub frame_time: u32,
}

impl EgoState {
    /// The frame origin moving at speed `v`.
    pub fn origin(v: f64) -> Self {
        Self {
            v,
            ..Self::default()
        }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.v.is_finite() && self.theta.is_finite()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct KinematicAction {
    /// m/s²
    pub accel: f64,
    /// rad/s
    pub yaw_rate: f64,
}

impl KinematicAction {
    pub fn new(accel: f64, yaw_rate: f64) -> Self {
        Self { accel, yaw_rate }
    }
}

/// Change over one step, in the frame of the state the step started from.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StateDelta {
    pub dx: f64,
    pub dy: f64,
    pub dv: f64,
    pub dtheta: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    /// `T + 1` states including the initial one.
    pub states: Vec<EgoState>,
    pub dt: f64,
}

impl Trajectory {
    pub fn steps(&self) -> usize {
        self.states.len().saturating_sub(1)
    }

    /// Sum of squared position differences over all shared waypoints.
    pub fn position_sse(&self, other: &Trajectory) -> f64 {
        self.states
            .iter()
            .zip(&other.states)
            .map(|(a, b)| (a.x - b.x).powi(2) + (a.y - b.y).powi(2))
            .sum()
    }

    /// Writes `k,x,y,v,theta` rows with 17 significant digits.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let to_err = |e: csv::Error| Error::format("trajectory csv", e.to_string());
        w.write_record(["k", "x", "y", "v", "theta"]).map_err(to_err)?;
        for (k, s) in self.states.iter().enumerate() {
            w.write_record([
                k.to_string(),
                format!("{:.16e}", s.x),
                format!("{:.16e}", s.y),
                format!("{:.16e}", s.v),
                format!("{:.16e}", s.theta),
            ])
            .map_err(to_err)?;
        }
        w.flush().map_err(|e| Error::format("trajectory csv", e.to_string()))
    }

    /// Reads the format of [`Trajectory::write_csv`]; `dt` is not stored in
    /// the file and must be supplied.
    pub fn read_csv<R: Read>(input: R, dt: f64, frame_time: u32) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let mut states = Vec::new();
        for (i, rec) in r.deserialize::<(usize, f64, f64, f64, f64)>().enumerate() {
            let (k, x, y, v, theta) = rec.map_err(|e| Error::format("trajectory csv", e.to_string()))?;
            if k != i {
                return Err(Error::format("trajectory csv", format!("row {i} has k = {k}")));
            }
            states.push(EgoState {
                x,
                y,
                v,
                theta,
                frame_time,
            });
        }
        if states.is_empty() {
            return Err(Error::format("trajectory csv", "no waypoints"));
        }
        Ok(Self { states, dt })
    }
}

fn check_inputs(op: &'static str, v: f64, action: &KinematicAction, dt: f64) -> Result<()> {
    if !(v.is_finite() && action.accel.is_finite() && action.yaw_rate.is_finite() && dt.is_finite()) {
        return Err(Error::domain(op, "non-finite input"));
    }
    if dt <= 0.0 {
        return Err(Error::domain(op, format!("dt must be positive, got {dt}")));
    }
    Ok(())
}

/// Exact displacement of one constant-control step.
pub fn step(state: &EgoState, action: &KinematicAction, dt: f64) -> Result<StateDelta> {
    check_inputs("step", state.v, action, dt)?;
    Ok(step_unchecked(state.v, action.accel, action.yaw_rate, dt))
}

/// Closed form written as `dx = vT·f1 + aT²·(f1 − f2)`,
/// `dy = vT·x·f2 + aT²·x·f3` with `x = ωT` and
/// `f1 = sin x / x`, `f2 = (1 − cos x)/x²`, `f3 = (sin x − x cos x)/x³`,
/// each evaluated without cancellation.
pub(crate) fn step_unchecked(v: f64, a: f64, w: f64, dt: f64) -> StateDelta {
    let x = w * dt;
    let x2 = x * x;
    let (f1, f2, f3) = if x.abs() < SMALL_TURN {
        (1.0 - x2 / 6.0, 0.5 - x2 / 24.0, 1.0 / 3.0 - x2 / 30.0)
    } else {
        let (s, c) = x.sin_cos();
        let half = (0.5 * x).sin();
        let f3 = if x.abs() < 0.25 {
            1.0 / 3.0 - x2 / 30.0 + x2 * x2 / 840.0 - x2 * x2 * x2 / 45_360.0 + x2 * x2 * x2 * x2 / 3_991_680.0
        } else {
            (s - x * c) / (x2 * x)
        };
        (s / x, 2.0 * half * half / x2, f3)
    };
    let vt = v * dt;
    let at2 = a * dt * dt;
    StateDelta {
        dx: vt * f1 + at2 * (f1 - f2),
        dy: vt * x * f2 + at2 * x * f3,
        dv: a * dt,
        dtheta: w * dt,
    }
}

/// Applies one step to `state`, rotating the local displacement by the
/// state's heading.
pub fn advance(state: &EgoState, action: &KinematicAction, dt: f64) -> Result<EgoState> {
    check_inputs("advance", state.v, action, dt)?;
    if !state.is_finite() {
        return Err(Error::domain("advance", "non-finite state"));
    }
    Ok(advance_unchecked(state, action, dt))
}

pub(crate) fn advance_unchecked(state: &EgoState, action: &KinematicAction, dt: f64) -> EgoState {
    let d = step_unchecked(state.v, action.accel, action.yaw_rate, dt);
    let (s, c) = state.theta.sin_cos();
    EgoState {
        x: state.x + c * d.dx - s * d.dy,
        y: state.y + s * d.dx + c * d.dy,
        v: state.v + d.dv,
        theta: state.theta + d.dtheta,
        frame_time: state.frame_time,
    }
}

/// Rolls `actions` out from `initial`; waypoints stay in `initial`'s frame.
pub fn rollout(initial: &EgoState, actions: &[KinematicAction], dt: f64) -> Result<Trajectory> {
    if actions.is_empty() {
        return Err(Error::domain("rollout", "empty action sequence"));
    }
    let mut states = Vec::with_capacity(actions.len() + 1);
    states.push(*initial);
    let mut cur = *initial;
    for a in actions {
        cur = advance(&cur, a, dt)?;
        states.push(cur);
    }
    Ok(Trajectory { states, dt })
}

/// Fourth-order Runge–Kutta integration of `v̇ = a`, `θ̇ = ω`, `ẋ = v cos θ`,
/// `ẏ = v sin θ` over `substeps` equal sub-intervals.
///
/// The heading is carried as `(cos θ, sin θ)` with `ċ = −ω s`, `ṡ = ω c`, so
/// the inner loop needs no trigonometry. Speed and heading changes are linear
/// and returned exactly.
pub fn integrate_numeric(state: &EgoState, action: &KinematicAction, dt: f64, substeps: usize) -> Result<StateDelta> {
    check_inputs("integrate_numeric", state.v, action, dt)?;
    if substeps == 0 {
        return Err(Error::domain("integrate_numeric", "substeps must be at least 1"));
    }
    let (a, w) = (action.accel, action.yaw_rate);
    let h = dt / substeps as f64;
    let deriv = |v: f64, c: f64, s: f64| -> [f64; 5] { [v * c, v * s, a, -w * s, w * c] };
    let mut y = [0.0, 0.0, state.v, 1.0, 0.0];
    for _ in 0..substeps {
        let k1 = deriv(y[2], y[3], y[4]);
        let p = |k: &[f64; 5], f: f64| [0, 1, 2, 3, 4].map(|i| y[i] + f * h * k[i]);
        let y2 = p(&k1, 0.5);
        let k2 = deriv(y2[2], y2[3], y2[4]);
        let y3 = p(&k2, 0.5);
        let k3 = deriv(y3[2], y3[3], y3[4]);
        let y4 = p(&k3, 1.0);
        let k4 = deriv(y4[2], y4[3], y4[4]);
        for i in 0..5 {
            y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
    Ok(StateDelta {
        dx: y[0],
        dy: y[1],
        dv: a * dt,
        dtheta: w * dt,
    })
}
