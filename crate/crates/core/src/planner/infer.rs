//! Closed-loop decoding without a tape: the decoder keeps per-layer key and
//! value caches, so each step costs one token's worth of work.

use rand::Rng;
use serde::{Deserialize, Serialize};
use tisa_autodiff::nn::attention_row_weights;
use tisa_autodiff::tensor::{gelu, layer_norm_rows, log_sum_exp};
use tisa_autodiff::{Tape, Tensor};

use super::{Planner, LN_EPS};
use crate::action_space::ActionId;
use crate::error::{Error, Result};
use crate::kinematics::{advance, EgoState, Trajectory};
use crate::world::tokens::{state_features, TokenBundle};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum DecodeMode {
    Greedy,
    Sample { temperature: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlanResult {
    pub action_ids: Vec<ActionId>,
    /// Log-probability of each chosen id under the distribution it was
    /// selected from (temperature-adjusted when sampling).
    pub step_logprobs: Vec<f64>,
    pub trajectory: Trajectory,
    pub total_logprob: f64,
}

fn vecmat(x: &[f64], w: &Tensor) -> Vec<f64> {
    let mut out = vec![0.0; w.cols()];
    for (i, &xi) in x.iter().enumerate() {
        if xi == 0.0 {
            continue;
        }
        for (o, &wv) in out.iter_mut().zip(w.row(i)) {
            *o += xi * wv;
        }
    }
    out
}

fn add_in(x: &mut [f64], y: &[f64]) {
    for (a, b) in x.iter_mut().zip(y) {
        *a += b;
    }
}

fn norm(x: &[f64], g: &Tensor, b: &Tensor) -> Vec<f64> {
    let t = Tensor::row_vector(x.to_vec());
    layer_norm_rows(&t, g.data(), b.data(), LN_EPS).0.into_data()
}

struct Cache {
    /// Per layer, rows of keys and values appended step by step.
    keys: Vec<Vec<Vec<f64>>>,
    values: Vec<Vec<Vec<f64>>>,
}

impl Planner {
    /// The contextualized ego token as a plain vector.
    pub fn ego_token(&self, tokens: &TokenBundle) -> Result<Vec<f64>> {
        let tape = Tape::new();
        let b = self.bind_frozen(&tape);
        let ego = self.contextualize_ego(&tape, &b, tokens)?;
        let v = tape.value(ego).data().to_vec();
        Ok(v)
    }

    /// Aligned token for one ego state given the ego token.
    fn aligned_row(&self, ego: &[f64], state: &EgoState) -> Result<Vec<f64>> {
        let ids = &self.params.ids;
        let p = &self.params;
        let mut h = vecmat(&state_features(state), p.at(ids.fut_w1));
        add_in(&mut h, p.at(ids.fut_b1).data());
        let h: Vec<f64> = h.into_iter().map(gelu).collect();
        let mut x = vecmat(&h, p.at(ids.fut_w2));
        add_in(&mut x, p.at(ids.fut_b2).data());
        add_in(&mut x, ego);
        if !self.config.tisa_enabled {
            return Ok(x);
        }
        let w = attention_row_weights(&x, p.at(ids.tisa_keys))?;
        let values = p.at(ids.tisa_values);
        let mut out = vec![0.0; x.len()];
        for (r, &wr) in w.iter().enumerate() {
            for (o, &v) in out.iter_mut().zip(values.row(r)) {
                *o += wr * v;
            }
        }
        if self.config.tisa_residual {
            add_in(&mut out, &x);
        }
        Ok(out)
    }

    fn decode_row(&self, mut x: Vec<f64>, cache: &mut Cache) -> Vec<f64> {
        let ids = &self.params.ids;
        let p = &self.params;
        let d = self.config.d_model;
        let heads = self.config.heads;
        let hd = d / heads;
        for (li, l) in ids.layers.iter().enumerate() {
            let h = norm(&x, p.at(l.ln1_g), p.at(l.ln1_b));
            let q = vecmat(&h, p.at(l.wq));
            cache.keys[li].push(vecmat(&h, p.at(l.wk)));
            cache.values[li].push(vecmat(&h, p.at(l.wv)));
            let (keys, values) = (&cache.keys[li], &cache.values[li]);
            let mut att = vec![0.0; d];
            let scale = 1.0 / (hd as f64).sqrt();
            for head in 0..heads {
                let cols = head * hd..(head + 1) * hd;
                let mut w: Vec<f64> = keys
                    .iter()
                    .map(|k| q[cols.clone()].iter().zip(&k[cols.clone()]).map(|(a, b)| a * b).sum::<f64>() * scale)
                    .collect();
                tisa_autodiff::tensor::softmax_in_place(&mut w);
                for (wr, v) in w.iter().zip(values) {
                    for c in cols.clone() {
                        att[c] += wr * v[c];
                    }
                }
            }
            let o = vecmat(&att, p.at(l.wo));
            add_in(&mut x, &o);
            let h = norm(&x, p.at(l.ln2_g), p.at(l.ln2_b));
            let mut f = vecmat(&h, p.at(l.ff_w1));
            add_in(&mut f, p.at(l.ff_b1).data());
            let f: Vec<f64> = f.into_iter().map(gelu).collect();
            let mut f = vecmat(&f, p.at(l.ff_w2));
            add_in(&mut f, p.at(l.ff_b2).data());
            add_in(&mut x, &f);
        }
        let h = norm(&x, p.at(ids.lnf_g), p.at(ids.lnf_b));
        let mut logits = vecmat(&h, p.at(ids.head_w));
        add_in(&mut logits, p.at(ids.head_b).data());
        logits
    }

    /// Autoregressive closed-loop planning from a scene's tokens.
    pub fn plan<R: Rng + ?Sized>(
        &self,
        tokens: &TokenBundle,
        initial: &EgoState,
        mode: DecodeMode,
        horizon: usize,
        dt: f64,
        rng: &mut R,
    ) -> Result<PlanResult> {
        let ego = self.ego_token(tokens)?;
        self.plan_from_ego(&ego, initial, mode, horizon, dt, rng)
    }

    /// [`Planner::plan`] with a precomputed ego token, for drawing many
    /// samples on one scene.
    pub fn plan_from_ego<R: Rng + ?Sized>(
        &self,
        ego: &[f64],
        initial: &EgoState,
        mode: DecodeMode,
        horizon: usize,
        dt: f64,
        rng: &mut R,
    ) -> Result<PlanResult> {
        if let DecodeMode::Sample { temperature } = mode {
            if !(temperature > 0.0) {
                return Err(Error::domain("plan", format!("temperature must be positive, got {temperature}")));
            }
        }
        let layers = self.config.layers;
        let mut cache = Cache {
            keys: vec![Vec::with_capacity(horizon); layers],
            values: vec![Vec::with_capacity(horizon); layers],
        };
        let mut state = *initial;
        let mut states = vec![state];
        let mut action_ids = Vec::with_capacity(horizon);
        let mut step_logprobs = Vec::with_capacity(horizon);
        for _ in 0..horizon {
            let x = self.aligned_row(ego, &state)?;
            let logits = self.decode_row(x, &mut cache);
            if logits.iter().any(|z| !z.is_finite()) {
                return Err(Error::Numerical("non-finite planner logits".into()));
            }
            let (id, logp) = match mode {
                DecodeMode::Greedy => {
                    let mut best = 0;
                    for (i, &z) in logits.iter().enumerate() {
                        if z > logits[best] {
                            best = i;
                        }
                    }
                    (best, logits[best] - log_sum_exp(&logits))
                }
                DecodeMode::Sample { temperature } => {
                    let scaled: Vec<f64> = logits.iter().map(|z| z / temperature).collect();
                    let lse = log_sum_exp(&scaled);
                    let u: f64 = rng.gen();
                    let mut acc = 0.0;
                    let mut pick = scaled.len() - 1;
                    for (i, &s) in scaled.iter().enumerate() {
                        acc += (s - lse).exp();
                        if u < acc {
                            pick = i;
                            break;
                        }
                    }
                    (pick, scaled[pick] - lse)
                }
            };
            let id = ActionId(id as u32);
            state = advance(&state, &self.vocab.action(id)?, dt)?;
            states.push(state);
            action_ids.push(id);
            step_logprobs.push(logp);
        }
        let total_logprob = step_logprobs.iter().sum();
        Ok(PlanResult {
            action_ids,
            step_logprobs,
            trajectory: Trajectory { states, dt },
            total_logprob,
        })
    }
}
