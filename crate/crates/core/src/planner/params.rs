//! Named parameter storage and its fixed layout.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tisa_autodiff::Tensor;

use super::ModelConfig;
use crate::error::{Error, Result};
use crate::world::tokens::{COMMANDS, ENV_FEATURES, STATE_FEATURES};

#[derive(Clone, Copy, Debug)]
pub(crate) struct LayerIds {
    pub ln1_g: usize,
    pub ln1_b: usize,
    pub wq: usize,
    pub wk: usize,
    pub wv: usize,
    pub wo: usize,
    pub ln2_g: usize,
    pub ln2_b: usize,
    pub ff_w1: usize,
    pub ff_b1: usize,
    pub ff_w2: usize,
    pub ff_b2: usize,
}

/// Positions of every tensor in [`PlannerParams`].
#[derive(Clone, Debug)]
pub(crate) struct Ids {
    pub env_w: usize,
    pub env_b: usize,
    pub cmd_w: usize,
    pub cmd_b: usize,
    pub state_w: usize,
    pub state_b: usize,
    pub ego_query: usize,
    pub ctx_wk: usize,
    pub ctx_wv: usize,
    pub fut_w1: usize,
    pub fut_b1: usize,
    pub fut_w2: usize,
    pub fut_b2: usize,
    pub tisa_keys: usize,
    pub tisa_values: usize,
    pub layers: Vec<LayerIds>,
    pub lnf_g: usize,
    pub lnf_b: usize,
    pub head_w: usize,
    pub head_b: usize,
    pub aux_w1: usize,
    pub aux_b1: usize,
    pub aux_w2: usize,
    pub aux_b2: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Init {
    /// Uniform in `±1/√fan_in`.
    Uniform { fan_in: usize },
    Ones,
    Zeros,
}

struct Spec {
    name: String,
    rows: usize,
    cols: usize,
    init: Init,
}

struct Builder {
    specs: Vec<Spec>,
}

impl Builder {
    fn push(&mut self, name: impl Into<String>, rows: usize, cols: usize, init: Init) -> usize {
        self.specs.push(Spec {
            name: name.into(),
            rows,
            cols,
            init,
        });
        self.specs.len() - 1
    }

    /// Weight `fan_in × out` and bias `1 × out`, both scaled by the fan-in.
    fn affine(&mut self, name: &str, fan_in: usize, out: usize) -> (usize, usize) {
        let w = self.push(format!("{name}.weight"), fan_in, out, Init::Uniform { fan_in });
        let b = self.push(format!("{name}.bias"), 1, out, Init::Uniform { fan_in });
        (w, b)
    }

    fn norm(&mut self, name: &str, d: usize) -> (usize, usize) {
        let g = self.push(format!("{name}.gamma"), 1, d, Init::Ones);
        let b = self.push(format!("{name}.beta"), 1, d, Init::Zeros);
        (g, b)
    }

    fn matrix(&mut self, name: &str, rows: usize, cols: usize, fan_in: usize) -> usize {
        self.push(name, rows, cols, Init::Uniform { fan_in })
    }
}

fn layout(cfg: &ModelConfig, vocab: usize) -> (Vec<Spec>, Ids) {
    let d = cfg.d_model;
    let mut b = Builder { specs: Vec::new() };
    let (env_w, env_b) = b.affine("embed.env", ENV_FEATURES, d);
    let (cmd_w, cmd_b) = b.affine("embed.command", COMMANDS, d);
    let (state_w, state_b) = b.affine("embed.state", STATE_FEATURES, d);
    let ego_query = b.matrix("context.ego_query", 1, d, d);
    let ctx_wk = b.matrix("context.key", d, d, d);
    let ctx_wv = b.matrix("context.value", d, d, d);
    let (fut_w1, fut_b1) = b.affine("future.hidden", STATE_FEATURES, d);
    let (fut_w2, fut_b2) = b.affine("future.out", d, d);
    let tisa_keys = b.matrix("tisa.keys", cfg.tisa_slots, d, d);
    let tisa_values = b.matrix("tisa.values", cfg.tisa_slots, d, d);
    let layers = (0..cfg.layers)
        .map(|l| {
            let p = format!("decoder.{l}");
            let (ln1_g, ln1_b) = b.norm(&format!("{p}.norm1"), d);
            let wq = b.matrix(&format!("{p}.attn.query"), d, d, d);
            let wk = b.matrix(&format!("{p}.attn.key"), d, d, d);
            let wv = b.matrix(&format!("{p}.attn.value"), d, d, d);
            let wo = b.matrix(&format!("{p}.attn.out"), d, d, d);
            let (ln2_g, ln2_b) = b.norm(&format!("{p}.norm2"), d);
            let (ff_w1, ff_b1) = b.affine(&format!("{p}.ff1"), d, cfg.ff_width);
            let (ff_w2, ff_b2) = b.affine(&format!("{p}.ff2"), cfg.ff_width, d);
            LayerIds {
                ln1_g,
                ln1_b,
                wq,
                wk,
                wv,
                wo,
                ln2_g,
                ln2_b,
                ff_w1,
                ff_b1,
                ff_w2,
                ff_b2,
            }
        })
        .collect();
    let (lnf_g, lnf_b) = b.norm("decoder.final_norm", d);
    let (head_w, head_b) = b.affine("head.action", d, vocab);
    let (aux_w1, aux_b1) = b.affine("head.map.hidden", d, d);
    let (aux_w2, aux_b2) = b.affine("head.map.out", d, 2);
    let ids = Ids {
        env_w,
        env_b,
        cmd_w,
        cmd_b,
        state_w,
        state_b,
        ego_query,
        ctx_wk,
        ctx_wv,
        fut_w1,
        fut_b1,
        fut_w2,
        fut_b2,
        tisa_keys,
        tisa_values,
        layers,
        lnf_g,
        lnf_b,
        head_w,
        head_b,
        aux_w1,
        aux_b1,
        aux_w2,
        aux_b2,
    };
    (b.specs, ids)
}

/// Every learnable tensor of the planner, in a fixed named order.
#[derive(Clone, Debug)]
pub struct PlannerParams {
    names: Vec<String>,
    tensors: Vec<Arc<Tensor>>,
    pub(crate) ids: Ids,
}

impl PlannerParams {
    pub fn init(cfg: &ModelConfig, vocab: usize, seed: u64) -> Self {
        let (specs, ids) = layout(cfg, vocab);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tensors = specs
            .iter()
            .map(|s| {
                let t = match s.init {
                    Init::Ones => Tensor::filled(s.rows, s.cols, 1.0),
                    Init::Zeros => Tensor::zeros(s.rows, s.cols),
                    Init::Uniform { fan_in } => {
                        let bound = 1.0 / (fan_in as f64).sqrt();
                        let data = (0..s.rows * s.cols).map(|_| rng.gen_range(-bound..bound)).collect();
                        Tensor::from_vec(s.rows, s.cols, data).expect("sized from spec")
                    }
                };
                Arc::new(t)
            })
            .collect();
        Self {
            names: specs.into_iter().map(|s| s.name).collect(),
            tensors,
            ids,
        }
    }

    /// Replaces the tensors of an initialized layout by name, checking shapes.
    pub(crate) fn from_named(cfg: &ModelConfig, vocab: usize, named: Vec<(String, Tensor)>) -> Result<Self> {
        let mut params = Self::init(cfg, vocab, 0);
        if named.len() != params.len() {
            return Err(Error::format(
                "checkpoint",
                format!("{} arrays, layout has {}", named.len(), params.len()),
            ));
        }
        for (i, (name, t)) in named.into_iter().enumerate() {
            if name != params.names[i] || t.shape() != params.tensors[i].shape() {
                return Err(Error::format(
                    "checkpoint",
                    format!("array {i} is {name} {:?}, expected {} {:?}", t.shape(), params.names[i], params.tensors[i].shape()),
                ));
            }
            params.tensors[i] = Arc::new(t);
        }
        Ok(params)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Arc<Tensor>] {
        &self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &*self.tensors[i])
    }

    pub(crate) fn at(&self, i: usize) -> &Tensor {
        &self.tensors[i]
    }

    /// Mutable access; clones the tensor if a forward pass still shares it.
    pub fn tensor_mut(&mut self, i: usize) -> &mut Tensor {
        Arc::make_mut(&mut self.tensors[i])
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.is_finite())
    }
}
