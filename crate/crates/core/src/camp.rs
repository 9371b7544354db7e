//! The collaborative attention policy.
//!
//! The encoder keeps one embedding set per vehicle profile. Set `k` holds a
//! row for every node, combining vehicle `k`, the node and the profile value
//! `p_kj`, and one row for every vehicle. Each layer runs a transformer block
//! inside every set and, when encoder communication is enabled, exchanges
//! messages on the vehicle/client bipartite graph whose edges are the set rows.
//!
//! The decoder moves all vehicles at once. Each vehicle builds a query from
//! its own embedding, the embedding of its current node and the step context;
//! the queries talk to each other through self-attention, attend to their own
//! profile's node rows, and end in a bounded pointer over nodes.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{self, EnvError, Mask, State};
use crate::instance::Instance;
use crate::nd::layers::{Ffn, LayerNorm, Linear, Mha};
use crate::nd::{softmax_values, Checkpoint, NdError, ParamStore, Tape, Tensor, Var};
use crate::validator::Solution;

pub const VEHICLE_FEATURES: usize = 4;
pub const NODE_FEATURES: usize = 3;
pub const CONTEXT_FEATURES: usize = 3;

#[derive(Debug, thiserror::Error)]
pub enum CampError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Nd(#[from] NdError),
    #[error(transparent)]
    Env(#[from] EnvError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CampConfig {
    pub d_h: usize,
    pub heads: usize,
    pub ffn_width: usize,
    pub layers: usize,
    /// Pointer logit bound.
    pub logit_clip: f64,
    pub encoder_comm: bool,
    pub profile_embeddings: bool,
}

impl Default for CampConfig {
    fn default() -> Self {
        CampConfig {
            d_h: 32,
            heads: 4,
            ffn_width: 64,
            layers: 2,
            logit_clip: 10.0,
            encoder_comm: true,
            profile_embeddings: true,
        }
    }
}

impl CampConfig {
    pub fn full_scale() -> Self {
        CampConfig {
            d_h: 128,
            heads: 8,
            ffn_width: 512,
            layers: 3,
            ..CampConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), CampError> {
        if self.heads == 0 || self.d_h % self.heads != 0 {
            return Err(CampError::Config(format!(
                "d_h = {} is not divisible by heads = {}",
                self.d_h, self.heads
            )));
        }
        if self.d_h < 2 || self.ffn_width == 0 {
            return Err(CampError::Config("d_h must be at least 2 and ffn_width positive".into()));
        }
        if self.layers == 0 {
            return Err(CampError::Config("at least one encoder layer is required".into()));
        }
        if !(self.logit_clip > 0.0 && self.logit_clip.is_finite()) {
            return Err(CampError::Config(format!("logit_clip must be positive, got {}", self.logit_clip)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct Block {
    mha: Mha,
    ln1: LayerNorm,
    ffn: Ffn,
    ln2: LayerNorm,
}

impl Block {
    fn new(store: &mut ParamStore, name: &str, cfg: &CampConfig, rng: &mut ChaCha8Rng) -> Result<Self, NdError> {
        Ok(Block {
            mha: Mha::new(store, &format!("{name}.mha"), cfg.d_h, cfg.heads, rng)?,
            ln1: LayerNorm::new(store, &format!("{name}.ln1"), cfg.d_h)?,
            ffn: Ffn::new(store, &format!("{name}.ffn"), cfg.d_h, cfg.ffn_width, rng)?,
            ln2: LayerNorm::new(store, &format!("{name}.ln2"), cfg.d_h)?,
        })
    }

    /// `LN(x + MHA(x)) -> LN(h + FFN(h))`.
    fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var, NdError> {
        let a = self.mha.forward(tape, store, x, x, None)?;
        let h = tape.add(x, a)?;
        let h = self.ln1.forward(tape, store, h)?;
        let f = self.ffn.forward(tape, store, h)?;
        let y = tape.add(h, f)?;
        self.ln2.forward(tape, store, y)
    }
}

#[derive(Debug, Clone, Copy)]
struct Comm {
    to_client: Ffn3,
    to_vehicle: Ffn3,
    edge: Linear,
}

/// Message network: `relu(concat(sender, receiver, edge) · W1) · W2`.
#[derive(Debug, Clone, Copy)]
struct Ffn3 {
    w1: Linear,
    w2: Linear,
}

impl Ffn3 {
    fn new(store: &mut ParamStore, name: &str, d: usize, rng: &mut ChaCha8Rng) -> Result<Self, NdError> {
        Ok(Ffn3 {
            w1: Linear::new(store, &format!("{name}.w1"), 3 * d, d, false, rng)?,
            w2: Linear::new(store, &format!("{name}.w2"), d, d, false, rng)?,
        })
    }

    fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var, NdError> {
        let h = self.w1.forward(tape, store, x)?;
        let h = tape.relu(h);
        self.w2.forward(tape, store, h)
    }
}

#[derive(Debug, Clone)]
struct Layout {
    init_vehicle: Linear,
    init_node: Linear,
    init_profile: Linear,
    combine: Linear,
    blocks: Vec<Block>,
    comms: Vec<Comm>,
    context: Linear,
    project: Linear,
    dec_block: Block,
    cross: Mha,
    pointer: Linear,
}

/// Policy weights together with the configuration that shaped them.
#[derive(Debug, Clone)]
pub struct CampParams {
    pub config: CampConfig,
    pub store: ParamStore,
    layout: Layout,
}

/// Builds and initializes every weight. Linear maps are uniform in
/// `±1/sqrt(fan_in)`; normalization gains start at 1 and biases at 0.
pub fn init_params(config: &CampConfig, seed: u64) -> Result<CampParams, CampError> {
    config.validate()?;
    let d = config.d_h;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rng = &mut rng;
    let mut store = ParamStore::new();
    let s = &mut store;

    let init_vehicle = Linear::new(s, "init.vehicle", VEHICLE_FEATURES, d, false, rng)?;
    let init_node = Linear::new(s, "init.node", NODE_FEATURES, d, false, rng)?;
    let init_profile = Linear::new(s, "init.profile", 1, d, false, rng)?;
    let combine = Linear::new(s, "init.combine", 3 * d, d, false, rng)?;
    let mut blocks = Vec::new();
    let mut comms = Vec::new();
    for l in 0..config.layers {
        blocks.push(Block::new(s, &format!("enc{l}"), config, rng)?);
        if config.encoder_comm {
            comms.push(Comm {
                to_client: Ffn3::new(s, &format!("enc{l}.msg_to_client"), d, rng)?,
                to_vehicle: Ffn3::new(s, &format!("enc{l}.msg_to_vehicle"), d, rng)?,
                edge: Linear::new(s, &format!("enc{l}.edge"), 2 * d, d, false, rng)?,
            });
        }
    }
    let context = Linear::new(s, "dec.context", CONTEXT_FEATURES, d, false, rng)?;
    let project = Linear::new(s, "dec.project", 3 * d, d, false, rng)?;
    let dec_block = Block::new(s, "dec.comm", config, rng)?;
    let cross = Mha::new(s, "dec.cross", d, config.heads, rng)?;
    let pointer = Linear::new(s, "dec.pointer", d, d, false, rng)?;

    Ok(CampParams {
        config: *config,
        store,
        layout: Layout {
            init_vehicle,
            init_node,
            init_profile,
            combine,
            blocks,
            comms,
            context,
            project,
            dec_block,
            cross,
            pointer,
        },
    })
}

impl CampParams {
    /// Same model with the weights taken from `store`, which must come from
    /// this model (as in finite-difference perturbations).
    pub fn with_store(&self, store: &ParamStore) -> CampParams {
        CampParams {
            config: self.config,
            store: store.clone(),
            layout: self.layout.clone(),
        }
    }

    pub fn to_checkpoint(&self, extra: serde_json::Value) -> Checkpoint {
        let meta = serde_json::json!({ "camp": self.config, "extra": extra });
        self.store.to_checkpoint(meta)
    }

    /// Rebuilds the model described by a checkpoint and loads its weights.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, CampError> {
        let config: CampConfig = serde_json::from_value(ck.meta["camp"].clone())
            .map_err(|e| CampError::Config(format!("checkpoint lacks a model configuration: {e}")))?;
        let mut params = init_params(&config, 0)?;
        let loaded = ParamStore::from_checkpoint(ck)?;
        params.store.load_values(&loaded)?;
        Ok(params)
    }
}

/// Encoder output, living on a tape.
#[derive(Debug, Clone)]
pub struct ProfileEmbeddings {
    /// Per embedding set: `(n + 1) x d_h` node rows (depot first).
    pub nodes: Vec<Var>,
    /// Per embedding set: `m x d_h` vehicle rows.
    pub vehicles: Vec<Var>,
    pub n: usize,
    pub m: usize,
}

impl ProfileEmbeddings {
    /// Embedding set used by vehicle `k`.
    pub fn set_of(&self, k: usize) -> usize {
        if self.nodes.len() == 1 {
            0
        } else {
            k
        }
    }
}

fn vehicle_features(instance: &Instance) -> Tensor {
    let qmax = instance.max_capacity();
    let rows: Vec<Vec<f64>> = (0..instance.m)
        .map(|k| {
            vec![
                instance.depot[0],
                instance.depot[1],
                instance.capacities[k] / qmax,
                instance.speeds[k],
            ]
        })
        .collect();
    Tensor::from_rows(&rows).expect("rectangular features")
}

fn node_features(instance: &Instance) -> Tensor {
    let qmax = instance.max_capacity();
    let rows: Vec<Vec<f64>> = (0..=instance.n)
        .map(|j| {
            let [x, y] = instance.coord(j);
            vec![x, y, instance.demand(j) / qmax]
        })
        .collect();
    Tensor::from_rows(&rows).expect("rectangular features")
}

fn profile_column(instance: &Instance, k: usize) -> Tensor {
    Tensor::from_vec(instance.n + 1, 1, (0..=instance.n).map(|j| instance.profile(k, j)).collect())
        .expect("column shape")
}

fn mean_rows(tape: &mut Tape, x: Var) -> Result<Var, NdError> {
    let r = tape.value(x).rows();
    let avg = tape.constant(Tensor::filled(1, r, 1.0 / r as f64));
    tape.matmul(avg, x)
}

fn repeat_row(tape: &mut Tape, x: Var, row: usize, times: usize) -> Result<Var, NdError> {
    tape.gather_rows(x, &vec![row; times])
}

pub fn encode(tape: &mut Tape, instance: &Instance, params: &CampParams) -> Result<ProfileEmbeddings, CampError> {
    let (n, m) = (instance.n, instance.m);
    let (lay, st, cfg) = (&params.layout, &params.store, &params.config);
    let rows = n + 1;

    let xv = tape.constant(vehicle_features(instance));
    let xc = tape.constant(node_features(instance));
    let hv = lay.init_vehicle.forward(tape, st, xv)?;
    let hc = lay.init_node.forward(tape, st, xc)?;

    let mut nodes = Vec::new();
    if cfg.profile_embeddings {
        for k in 0..m {
            let p = tape.constant(profile_column(instance, k));
            let hp = lay.init_profile.forward(tape, st, p)?;
            let vk = repeat_row(tape, hv, k, rows)?;
            let cat = tape.concat_cols(&[vk, hc, hp])?;
            nodes.push(lay.combine.forward(tape, st, cat)?);
        }
    } else {
        let mut mean_p = Tensor::zeros(rows, 1);
        for k in 0..m {
            mean_p.add_assign(&profile_column(instance, k));
        }
        mean_p.scale_assign(1.0 / m as f64);
        let p = tape.constant(mean_p);
        let hp = lay.init_profile.forward(tape, st, p)?;
        let v_mean = mean_rows(tape, hv)?;
        let vb = repeat_row(tape, v_mean, 0, rows)?;
        let cat = tape.concat_cols(&[vb, hc, hp])?;
        nodes.push(lay.combine.forward(tape, st, cat)?);
    }
    let sets = nodes.len();
    let set_of = |k: usize| if sets == 1 { 0 } else { k };
    let mut vehicles = vec![hv; sets];
    let (mut client_state, mut vehicle_state) = (hc, hv);

    for l in 0..cfg.layers {
        for s in 0..sets {
            let x = tape.concat_rows(&[nodes[s], vehicles[s]])?;
            let y = lay.blocks[l].forward(tape, st, x)?;
            nodes[s] = tape.slice_rows(y, 0, rows)?;
            vehicles[s] = tape.slice_rows(y, rows, m)?;
        }
        if let Some(comm) = lay.comms.get(l) {
            // Vehicles to clients, averaged over vehicles.
            let mut acc = None;
            for k in 0..m {
                let vk = repeat_row(tape, vehicle_state, k, rows)?;
                let cat = tape.concat_cols(&[vk, client_state, nodes[set_of(k)]])?;
                let msg = comm.to_client.forward(tape, st, cat)?;
                acc = Some(match acc {
                    None => msg,
                    Some(a) => tape.add(a, msg)?,
                });
            }
            let msg = tape.scale(acc.expect("m >= 1"), 1.0 / m as f64);
            let new_clients = tape.add(client_state, msg)?;

            // Clients to vehicles, averaged over clients.
            let mut per_vehicle = Vec::with_capacity(m);
            for k in 0..m {
                let vk = repeat_row(tape, vehicle_state, k, rows)?;
                let cat = tape.concat_cols(&[new_clients, vk, nodes[set_of(k)]])?;
                let msg = comm.to_vehicle.forward(tape, st, cat)?;
                per_vehicle.push(mean_rows(tape, msg)?);
            }
            let vmsg = tape.concat_rows(&per_vehicle)?;
            let new_vehicles = tape.add(vehicle_state, vmsg)?;

            // Refresh the edges from the updated endpoints.
            for s in 0..sets {
                let owner = if sets == 1 {
                    mean_rows(tape, new_vehicles)?
                } else {
                    tape.slice_rows(new_vehicles, s, 1)?
                };
                let vb = repeat_row(tape, owner, 0, rows)?;
                let cat = tape.concat_cols(&[vb, new_clients])?;
                let e = comm.edge.forward(tape, st, cat)?;
                nodes[s] = tape.add(nodes[s], e)?;
                vehicles[s] = tape.add(vehicles[s], vmsg)?;
            }
            client_state = new_clients;
            vehicle_state = new_vehicles;
        }
    }
    Ok(ProfileEmbeddings { nodes, vehicles, n, m })
}

/// Decoder quantities that depend only on the encoder output.
#[derive(Debug, Clone)]
pub struct DecoderCache {
    keys: Vec<Var>,
    values: Vec<Var>,
    pointers: Vec<Var>,
    stacked_nodes: Var,
    self_rows: Var,
    n: usize,
    sets: usize,
}

pub fn prepare_decoder(tape: &mut Tape, emb: &ProfileEmbeddings, params: &CampParams) -> Result<DecoderCache, CampError> {
    let (lay, st) = (&params.layout, &params.store);
    let mut keys = Vec::new();
    let mut values = Vec::new();
    let mut pointers = Vec::new();
    for &nodes in &emb.nodes {
        let (k, v) = lay.cross.project_kv(tape, st, nodes)?;
        keys.push(k);
        values.push(v);
        pointers.push(lay.pointer.forward(tape, st, nodes)?);
    }
    let stacked_nodes = tape.concat_rows(&emb.nodes)?;
    let rows: Vec<Var> = (0..emb.m)
        .map(|k| tape.slice_rows(emb.vehicles[emb.set_of(k)], k, 1))
        .collect::<Result<_, _>>()?;
    let self_rows = tape.concat_rows(&rows)?;
    Ok(DecoderCache {
        keys,
        values,
        pointers,
        stacked_nodes,
        self_rows,
        n: emb.n,
        sets: emb.nodes.len(),
    })
}

/// Step context per vehicle: remaining capacity ratio, elapsed time over
/// `n * sqrt(2)`, and the fraction of total demand still unserved.
pub fn context_features(instance: &Instance, state: &State) -> Tensor {
    let total: f64 = instance.demands.iter().sum();
    let left: f64 = state.demands.iter().sum();
    let t_norm = instance.n as f64 * std::f64::consts::SQRT_2;
    let rows: Vec<Vec<f64>> = state
        .vehicles
        .iter()
        .enumerate()
        .map(|(k, v)| vec![v.remaining / instance.capacities[k], v.elapsed / t_norm, left / total])
        .collect();
    Tensor::from_rows(&rows).expect("rectangular features")
}

#[derive(Debug, Clone)]
pub struct DecodeOutput {
    /// `m x (n + 1)` pointer logits.
    pub logits: Var,
    /// Masked row-softmax of the logits.
    pub probs: Tensor,
}

pub fn decode_step(
    tape: &mut Tape,
    cache: &DecoderCache,
    instance: &Instance,
    state: &State,
    mask: &Mask,
    params: &CampParams,
) -> Result<DecodeOutput, CampError> {
    if state.done {
        return Err(EnvError::Contract("decode_step on a finished episode".into()).into());
    }
    let (lay, st, cfg) = (&params.layout, &params.store, &params.config);
    let width = cache.n + 1;
    let m = instance.m;

    let ctx = tape.constant(context_features(instance, state));
    let ctx = lay.context.forward(tape, st, ctx)?;
    let index: Vec<usize> = (0..m)
        .map(|k| {
            let s = if cache.sets == 1 { 0 } else { k };
            s * width + state.vehicles[k].current
        })
        .collect();
    let cur = tape.gather_rows(cache.stacked_nodes, &index)?;
    let q = tape.concat_cols(&[cache.self_rows, cur, ctx])?;
    let q = lay.project.forward(tape, st, q)?;
    let q = lay.dec_block.forward(tape, st, q)?;

    let mut logits = Vec::with_capacity(m);
    for k in 0..m {
        let s = if cache.sets == 1 { 0 } else { k };
        let qk = tape.slice_rows(q, k, 1)?;
        let u = lay.cross.attend(tape, st, qk, cache.keys[s], cache.values[s], Some(mask.row(k)))?;
        logits.push(tape.matmul_nt(u, cache.pointers[s])?);
    }
    let z = tape.concat_rows(&logits)?;
    let z = tape.scale(z, 1.0 / (cfg.d_h as f64).sqrt());
    let z = tape.tanh(z);
    let z = tape.scale(z, cfg.logit_clip);
    let probs = softmax_values(tape.value(z), Some(&mask.cells))?;
    Ok(DecodeOutput { logits: z, probs })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecodeMode {
    Greedy,
    Sample,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub solution: Solution,
    /// Sum of log-probabilities of every vehicle's selected node.
    pub log_prob: f64,
    pub reward: f64,
    /// Selected nodes per step, before conflict resolution.
    pub proposals: Vec<Vec<usize>>,
}

/// Lowest index among the largest entries.
fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in row.iter().enumerate() {
        if p > row[best] {
            best = i;
        }
    }
    best
}

fn sample_row<R: Rng + ?Sized>(row: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in row.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    last
}

enum Chooser<'a, R: ?Sized> {
    Greedy,
    Sample(&'a mut R),
    Replay(&'a [Vec<usize>]),
}

fn run<R: Rng + ?Sized>(
    tape: &mut Tape,
    instance: &Instance,
    params: &CampParams,
    mut chooser: Chooser<'_, R>,
) -> Result<(Rollout, Var), CampError> {
    let emb = encode(tape, instance, params)?;
    let cache = prepare_decoder(tape, &emb, params)?;
    let mut state = env::reset(instance);
    let mut picks = Vec::new();
    let mut proposals = Vec::new();
    let mut log_prob = 0.0;
    let m = instance.m;
    while !state.done {
        let mask = env::feasible_mask(instance, &state)?;
        let out = decode_step(tape, &cache, instance, &state, &mask, params)?;
        let proposed: Vec<usize> = match &mut chooser {
            Chooser::Greedy => (0..m).map(|k| argmax(out.probs.row(k))).collect(),
            Chooser::Sample(rng) => (0..m).map(|k| sample_row(out.probs.row(k), *rng)).collect(),
            Chooser::Replay(steps) => steps
                .get(proposals.len())
                .cloned()
                .ok_or_else(|| EnvError::Contract("replayed trajectory ended early".into()))?,
        };
        let chosen: Vec<f64> = (0..m).map(|k| out.probs.get(k, proposed[k])).collect();
        let lp = tape.log_softmax_pick(out.logits, Some(&mask.cells), &proposed.iter().map(|&a| Some(a)).collect::<Vec<_>>())?;
        log_prob += tape.scalar(lp);
        picks.push(lp);
        let action = env::resolve_conflicts(&proposed, &chosen, &state.positions());
        env::step_mut(instance, &mut state, &action)?;
        proposals.push(proposed);
    }
    let total = tape.concat_rows(&picks)?;
    let total = tape.sum(total);
    let reward = env::terminal_reward(instance, &state)?;
    Ok((
        Rollout {
            solution: env::solution_from(&state),
            log_prob,
            reward,
            proposals,
        },
        total,
    ))
}

/// Builds one episode on `tape` and returns it with the differentiable total
/// log-probability. `rng` is only consulted in sampling mode.
pub fn rollout_on_tape<R: Rng + ?Sized>(
    tape: &mut Tape,
    instance: &Instance,
    params: &CampParams,
    mode: DecodeMode,
    rng: &mut R,
) -> Result<(Rollout, Var), CampError> {
    match mode {
        DecodeMode::Greedy => run::<R>(tape, instance, params, Chooser::Greedy),
        DecodeMode::Sample => run(tape, instance, params, Chooser::Sample(rng)),
    }
}

pub fn rollout<R: Rng + ?Sized>(instance: &Instance, params: &CampParams, mode: DecodeMode, rng: &mut R) -> Result<Rollout, CampError> {
    let mut tape = Tape::new();
    Ok(rollout_on_tape(&mut tape, instance, params, mode, rng)?.0)
}

/// Re-evaluates a recorded episode, forcing the recorded proposals.
pub fn replay(tape: &mut Tape, instance: &Instance, params: &CampParams, proposals: &[Vec<usize>]) -> Result<(Rollout, Var), CampError> {
    run::<ChaCha8Rng>(tape, instance, params, Chooser::Replay(proposals))
}
