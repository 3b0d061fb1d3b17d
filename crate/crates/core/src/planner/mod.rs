//! The autoregressive planner.
//!
//! A learnable ego query attends over the embedded scene tokens to form one
//! contextualized ego token. For every step, the embedding of the (teacher
//! forced or self-rolled) future ego state is added to it, the sum attends
//! over a shared bank of learnable key/value slots (the time-invariant
//! alignment), and a causal transformer decoder maps the aligned sequence to
//! logits over the joint action vocabulary.

mod checkpoint;
mod infer;
mod params;

use serde::{Deserialize, Serialize};
use tisa_autodiff::nn::{attention, attention_weights, multi_head_attention};
use tisa_autodiff::{Tape, Tensor, Var};

pub use checkpoint::{
    decode_checkpoint, load_checkpoint, save_checkpoint, write_checkpoint, CheckpointHeader, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use infer::{DecodeMode, PlanResult};
pub use params::PlannerParams;

use crate::action_space::{ActionId, VocabConfig, Vocabulary};
use crate::error::{Error, Result};
use crate::kinematics::{rollout, EgoState};
use crate::world::tokens::{state_features, TokenBundle, ENV_FEATURES, STATE_FEATURES};

pub(crate) const LN_EPS: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub d_model: usize,
    pub heads: usize,
    pub layers: usize,
    pub ff_width: usize,
    pub tisa_slots: usize,
    /// Disables the alignment entirely (identity pass-through) for ablations.
    pub tisa_enabled: bool,
    /// Adds the prospective token back onto the alignment output.
    pub tisa_residual: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_model: 64,
            heads: 4,
            layers: 2,
            ff_width: 256,
            tisa_slots: 16,
            tisa_enabled: true,
            tisa_residual: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.heads == 0 || self.d_model % self.heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} must be a positive multiple of heads {}",
                self.d_model, self.heads
            )));
        }
        if self.ff_width == 0 || self.tisa_slots == 0 {
            return Err(Error::Config("ff_width and tisa_slots must be positive".into()));
        }
        Ok(())
    }
}

/// Parameters bound to one tape as differentiable leaves.
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    /// Wraps externally created variables, one per tensor of
    /// [`PlannerParams`] in order.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Self { vars }
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    fn at(&self, i: usize) -> Var {
        self.vars[i]
    }
}

/// Outputs of a teacher-forced pass.
pub struct TeacherForced {
    /// `T × vocab`
    pub logits: Var,
    /// `n_map × 2`, absent when the bundle has no map tokens.
    pub aux_logits: Option<Var>,
    pub ego_token: Var,
}

#[derive(Clone, Debug)]
pub struct Planner {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub params: PlannerParams,
}

fn row_tensor(x: &[f64]) -> Tensor {
    Tensor::row_vector(x.to_vec())
}

impl Planner {
    pub fn new(config: &ModelConfig, vocab: &VocabConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let vocab = Vocabulary::new(vocab)?;
        let params = PlannerParams::init(config, vocab.len(), seed);
        Ok(Self {
            config: config.clone(),
            vocab,
            params,
        })
    }

    pub fn with_params(config: &ModelConfig, vocab: &VocabConfig, params: PlannerParams) -> Result<Self> {
        let mut p = Self::new(config, vocab, 0)?;
        if params.names() != p.params.names() {
            return Err(Error::Config("parameter layout does not match the model config".into()));
        }
        p.params = params;
        Ok(p)
    }

    /// Puts every parameter on `tape` as a gradient leaf.
    pub fn bind(&self, tape: &Tape) -> Bound {
        Bound {
            vars: self.params.tensors().iter().map(|t| tape.param(t.clone())).collect(),
        }
    }

    /// Puts every parameter on `tape` as a constant.
    pub fn bind_frozen(&self, tape: &Tape) -> Bound {
        Bound {
            vars: self.params.tensors().iter().map(|t| tape.constant((**t).clone())).collect(),
        }
    }

    fn affine(&self, tape: &Tape, b: &Bound, x: Var, w: usize, bias: usize) -> Result<Var> {
        let y = tape.matmul(x, b.at(w))?;
        Ok(tape.add_row(y, b.at(bias))?)
    }

    /// Embedded environment tokens, `n_env × d` (`None` when there are none).
    fn embed_env(&self, tape: &Tape, b: &Bound, tokens: &TokenBundle) -> Result<Option<Var>> {
        if tokens.env.is_empty() {
            return Ok(None);
        }
        let data = tokens.env.iter().flat_map(|r| r.iter().copied()).collect();
        let x = tape.constant(Tensor::from_vec(tokens.env.len(), ENV_FEATURES, data)?);
        let ids = &self.params.ids;
        Ok(Some(self.affine(tape, b, x, ids.env_w, ids.env_b)?))
    }

    fn context_rows(&self, tape: &Tape, b: &Bound, tokens: &TokenBundle, env: Option<Var>) -> Result<Var> {
        let ids = &self.params.ids;
        let cmd = tape.constant(row_tensor(&tokens.command));
        let cmd = self.affine(tape, b, cmd, ids.cmd_w, ids.cmd_b)?;
        let st = tape.constant(row_tensor(&tokens.ego));
        let st = self.affine(tape, b, st, ids.state_w, ids.state_b)?;
        let mut parts = Vec::with_capacity(3);
        parts.extend(env);
        parts.push(cmd);
        parts.push(st);
        Ok(tape.concat_rows(&parts)?)
    }

    fn ego_from_context(&self, tape: &Tape, b: &Bound, ctx: Var) -> Result<Var> {
        let ids = &self.params.ids;
        let keys = tape.matmul(ctx, b.at(ids.ctx_wk))?;
        let values = tape.matmul(ctx, b.at(ids.ctx_wv))?;
        Ok(multi_head_attention(tape, b.at(ids.ego_query), keys, values, self.config.heads, false)?)
    }

    /// The single contextualized ego token (`1 × d`).
    pub fn contextualize_ego(&self, tape: &Tape, b: &Bound, tokens: &TokenBundle) -> Result<Var> {
        let env = self.embed_env(tape, b, tokens)?;
        let ctx = self.context_rows(tape, b, tokens, env)?;
        self.ego_from_context(tape, b, ctx)
    }

    /// Value projections of the context rows, whose convex hull contains the
    /// ego token coordinate-wise.
    pub fn context_values(&self, tape: &Tape, b: &Bound, tokens: &TokenBundle) -> Result<Var> {
        let env = self.embed_env(tape, b, tokens)?;
        let ctx = self.context_rows(tape, b, tokens, env)?;
        Ok(tape.matmul(ctx, b.at(self.params.ids.ctx_wv))?)
    }

    /// Embeddings of future ego states in the frame of step 0, one row each.
    pub fn embed_states(&self, tape: &Tape, b: &Bound, states: &[EgoState]) -> Result<Var> {
        let ids = &self.params.ids;
        let data = states.iter().flat_map(state_features).collect();
        let z = tape.constant(Tensor::from_vec(states.len(), STATE_FEATURES, data)?);
        let h = self.affine(tape, b, z, ids.fut_w1, ids.fut_b1)?;
        let h = tape.gelu(h)?;
        self.affine(tape, b, h, ids.fut_w2, ids.fut_b2)
    }

    /// Prospective tokens: `ego_token` plus each state's embedding.
    pub fn prospective_tokens(&self, tape: &Tape, b: &Bound, ego_token: Var, states: &[EgoState]) -> Result<Var> {
        let emb = self.embed_states(tape, b, states)?;
        Ok(tape.add_row(emb, ego_token)?)
    }

    /// Attention weights of prospective rows over the shared slots.
    pub fn tisa_weights(&self, tape: &Tape, b: &Bound, prospective: Var) -> Result<Var> {
        Ok(attention_weights(tape, prospective, b.at(self.params.ids.tisa_keys), false)?)
    }

    /// Aligns each prospective row against the shared key/value slots. No step
    /// index enters, so equal rows give equal outputs at any step.
    pub fn tisa_align(&self, tape: &Tape, b: &Bound, prospective: Var) -> Result<Var> {
        if !self.config.tisa_enabled {
            return Ok(prospective);
        }
        let ids = &self.params.ids;
        let out = attention(tape, prospective, b.at(ids.tisa_keys), b.at(ids.tisa_values))?;
        if self.config.tisa_residual {
            Ok(tape.add(out, prospective)?)
        } else {
            Ok(out)
        }
    }

    /// Causal decoder and action head over aligned tokens (`T × d` → `T × V`).
    pub fn decode(&self, tape: &Tape, b: &Bound, aligned: Var) -> Result<Var> {
        let ids = &self.params.ids;
        let mut x = aligned;
        for l in &ids.layers {
            let h = tape.layer_norm(x, b.at(l.ln1_g), b.at(l.ln1_b), LN_EPS)?;
            let q = tape.matmul(h, b.at(l.wq))?;
            let k = tape.matmul(h, b.at(l.wk))?;
            let v = tape.matmul(h, b.at(l.wv))?;
            let att = multi_head_attention(tape, q, k, v, self.config.heads, true)?;
            let att = tape.matmul(att, b.at(l.wo))?;
            x = tape.add(x, att)?;
            let h = tape.layer_norm(x, b.at(l.ln2_g), b.at(l.ln2_b), LN_EPS)?;
            let h = self.affine(tape, b, h, l.ff_w1, l.ff_b1)?;
            let h = tape.gelu(h)?;
            let h = self.affine(tape, b, h, l.ff_w2, l.ff_b2)?;
            x = tape.add(x, h)?;
        }
        let x = tape.layer_norm(x, b.at(ids.lnf_g), b.at(ids.lnf_b), LN_EPS)?;
        self.affine(tape, b, x, ids.head_w, ids.head_b)
    }

    /// Per-step logits conditioned on `states[k]` (the state before action
    /// `k`), all expressed in the frame of step 0.
    pub fn forward_teacher_forced(&self, tape: &Tape, b: &Bound, tokens: &TokenBundle, states: &[EgoState]) -> Result<TeacherForced> {
        if states.is_empty() {
            return Err(Error::domain("forward_teacher_forced", "no states"));
        }
        let env = self.embed_env(tape, b, tokens)?;
        let ctx = self.context_rows(tape, b, tokens, env)?;
        let ego = self.ego_from_context(tape, b, ctx)?;
        let pro = self.prospective_tokens(tape, b, ego, states)?;
        let aligned = self.tisa_align(tape, b, pro)?;
        let logits = self.decode(tape, b, aligned)?;
        let aux_logits = match env {
            Some(env) if tokens.n_map() > 0 => {
                let ids = &self.params.ids;
                let map = tape.slice_rows(env, tokens.n_agents, tokens.env.len())?;
                let h = self.affine(tape, b, map, ids.aux_w1, ids.aux_b1)?;
                let h = tape.gelu(h)?;
                Some(self.affine(tape, b, h, ids.aux_w2, ids.aux_b2)?)
            }
            _ => None,
        };
        Ok(TeacherForced {
            logits,
            aux_logits,
            ego_token: ego,
        })
    }

    /// Teacher-forced states for an action sequence: the rollout from
    /// `initial`, without its terminal state.
    pub fn conditioning_states(&self, initial: &EgoState, ids: &[ActionId], dt: f64) -> Result<Vec<EgoState>> {
        let actions = ids.iter().map(|&id| self.vocab.action(id)).collect::<Result<Vec<_>>>()?;
        let mut states = rollout(initial, &actions, dt)?.states;
        states.pop();
        Ok(states)
    }

    /// Imitation loss `ce + aux_weight · aux` for one scene, returning the
    /// loss node and its two parts.
    pub fn imitation_loss(
        &self,
        tape: &Tape,
        b: &Bound,
        tokens: &TokenBundle,
        states: &[EgoState],
        labels: &[ActionId],
        aux_weight: f64,
    ) -> Result<(Var, f64, f64, Var)> {
        if states.len() != labels.len() {
            return Err(Error::domain(
                "imitation_loss",
                format!("{} states for {} labels", states.len(), labels.len()),
            ));
        }
        let out = self.forward_teacher_forced(tape, b, tokens, states)?;
        let idx: Vec<usize> = labels.iter().map(|l| l.index()).collect();
        let ce = tape.cross_entropy(out.logits, &idx)?;
        let ce_val = tape.item(ce)?;
        let (loss, aux_val) = match out.aux_logits {
            Some(aux) if aux_weight > 0.0 => {
                let a = tape.cross_entropy(aux, &tokens.map_labels)?;
                let av = tape.item(a)?;
                let scaled = tape.scale(a, aux_weight)?;
                (tape.add(ce, scaled)?, av)
            }
            Some(aux) => {
                let a = tape.cross_entropy(aux, &tokens.map_labels)?;
                (ce, tape.item(a)?)
            }
            None => (ce, 0.0),
        };
        Ok((loss, ce_val, aux_val, out.logits))
    }

    /// Sum of per-step log-probabilities of `ids` under teacher forcing at
    /// temperature 1 (`1 × 1`).
    pub fn sequence_logprob(
        &self,
        tape: &Tape,
        b: &Bound,
        tokens: &TokenBundle,
        initial: &EgoState,
        ids: &[ActionId],
        dt: f64,
    ) -> Result<Var> {
        let mut out = self.sequence_logprobs(tape, b, tokens, initial, std::slice::from_ref(&ids.to_vec()), dt)?;
        Ok(out.remove(0))
    }

    /// [`Planner::sequence_logprob`] for several sequences on one scene,
    /// sharing the contextualized ego token.
    pub fn sequence_logprobs(
        &self,
        tape: &Tape,
        b: &Bound,
        tokens: &TokenBundle,
        initial: &EgoState,
        sequences: &[Vec<ActionId>],
        dt: f64,
    ) -> Result<Vec<Var>> {
        let ego = self.contextualize_ego(tape, b, tokens)?;
        sequences
            .iter()
            .map(|ids| {
                if ids.is_empty() {
                    return Err(Error::domain("sequence_logprob", "empty action sequence"));
                }
                let states = self.conditioning_states(initial, ids, dt)?;
                let pro = self.prospective_tokens(tape, b, ego, &states)?;
                let aligned = self.tisa_align(tape, b, pro)?;
                let logits = self.decode(tape, b, aligned)?;
                let logp = tape.log_softmax(logits)?;
                let idx: Vec<usize> = ids.iter().map(|l| l.index()).collect();
                let picked = tape.gather(logp, &idx)?;
                Ok(tape.sum(picked)?)
            })
            .collect()
    }
}
