//! Q-bot and A-bot policies.
//!
//! Each agent is one recurrent cell fed by embedding slots. Every event
//! (initial grounding, one round of listening) is a single recurrent step
//! whose input concatenates all slots; slots that are disabled or masked
//! receive no token and contribute a zero block, so masking and structural
//! absence are the same computation.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neural::tape::{embedding_slot, linear_head};
use crate::neural::{
    AdamConfig, AdamState, ChoiceRecord, EpisodeTrace, InputKey, LstmCell, Mode, NodeId, ParamStore, RecurrentNet,
    Tape, ABSENT, EMPTY_KEY, ROOT,
};
use crate::world::{Instance, TaskSpec, NUM_ATTRIBUTES, NUM_TASKS};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    pub vocab_q: usize,
    pub vocab_a: usize,
    pub hidden_dim: usize,
    pub attr_embed_dim: usize,
    pub instance_embed_dim: usize,
    pub task_embed_dim: usize,
    /// Width of every dialog-token embedding.
    pub token_embed_dim: usize,
    pub memoryless_abot: bool,
    pub overhearing_enabled: bool,
    pub task_sharing_enabled: bool,
    /// Half-width of the uniform init of recurrent and head weights.
    pub init_scale: f64,
    /// Half-width of the uniform init of embedding tables.
    pub embed_init_scale: f64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            vocab_q: 3,
            vocab_a: 4,
            hidden_dim: 100,
            attr_embed_dim: 20,
            instance_embed_dim: 60,
            task_embed_dim: 20,
            token_embed_dim: 20,
            memoryless_abot: true,
            overhearing_enabled: false,
            task_sharing_enabled: false,
            init_scale: 0.1,
            embed_init_scale: 3f64.sqrt(),
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.instance_embed_dim != NUM_ATTRIBUTES * self.attr_embed_dim {
            return Err(Error::Config(format!(
                "instance_embed_dim ({}) must equal 3 * attr_embed_dim ({})",
                self.instance_embed_dim, self.attr_embed_dim
            )));
        }
        if self.vocab_q < 2 || self.vocab_a < 2 {
            return Err(Error::Config("vocabulary sizes must be at least 2".into()));
        }
        if self.vocab_q >= ABSENT as usize || self.vocab_a >= ABSENT as usize {
            return Err(Error::Config("vocabulary too large".into()));
        }
        if self.hidden_dim == 0 || self.attr_embed_dim == 0 || self.task_embed_dim == 0 || self.token_embed_dim == 0 {
            return Err(Error::Config("dimensions must be positive".into()));
        }
        for (name, v) in [("init_scale", self.init_scale), ("embed_init_scale", self.embed_init_scale)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} {v} must be finite and non-negative")));
            }
        }
        Ok(())
    }
}

// Q-bot slots.
const Q_TASK: usize = 0;
const Q_OTHER_TASK: usize = 1;
const Q_OWN_Q: usize = 2;
const Q_OWN_A: usize = 3;
const Q_OTHER_Q: usize = 4;
const Q_OTHER_A: usize = 5;
// A-bot slots: 0..3 own attributes, 3..6 other-team attributes.
const A_OTHER_ATTR: usize = 3;
const A_OWN_Q: usize = 6;
const A_OTHER_Q: usize = 7;

pub const SPEAK_HEAD: usize = 0;
pub const PREDICT_HEADS: [usize; 2] = [1, 2];

/// Tokens a Q-bot listens to once round `t` is over.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct QHeard {
    pub own_q: u16,
    pub own_a: u16,
    /// Other team's `(q_t, a_t)`; `None` when not overheard.
    pub other: Option<(u16, u16)>,
}

fn add_cell<R: Rng + ?Sized>(
    store: &mut ParamStore,
    widths: &[(usize, usize, &str)],
    cfg: &AgentConfig,
    rng: &mut R,
) -> Result<(LstmCell, Vec<crate::neural::tape::EmbeddingSlot>)> {
    let mut slots = Vec::with_capacity(widths.len());
    let mut offset = 0;
    for &(vocab, width, name) in widths {
        slots.push(embedding_slot(store, &format!("embed.{name}"), vocab, width, offset, cfg.embed_init_scale, rng)?);
        offset += width;
    }
    let cell = LstmCell::new(store, "cell", offset, cfg.hidden_dim, cfg.init_scale, rng)?;
    Ok((cell, slots))
}

pub struct QBot {
    pub cfg: AgentConfig,
    pub values_per_attribute: usize,
    pub net: RecurrentNet,
    pub store: ParamStore,
    pub adam: AdamState,
}

impl QBot {
    pub fn new<R: Rng + ?Sized>(cfg: &AgentConfig, values_per_attribute: usize, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let (t, k) = (cfg.task_embed_dim, cfg.token_embed_dim);
        let (cell, slots) = add_cell(
            &mut store,
            &[
                (NUM_TASKS, t, "task"),
                (NUM_TASKS, t, "other_task"),
                (cfg.vocab_q, k, "own_q"),
                (cfg.vocab_a, k, "own_a"),
                (cfg.vocab_q, k, "other_q"),
                (cfg.vocab_a, k, "other_a"),
            ],
            cfg,
            rng,
        )?;
        let h = cfg.hidden_dim;
        let heads = vec![
            linear_head(&mut store, "speak", cfg.vocab_q, h, cfg.init_scale, rng)?,
            linear_head(&mut store, "predict1", values_per_attribute, h, cfg.init_scale, rng)?,
            linear_head(&mut store, "predict2", values_per_attribute, h, cfg.init_scale, rng)?,
        ];
        let adam = AdamState::new(&store);
        Ok(Self { cfg: cfg.clone(), values_per_attribute, net: RecurrentNet { cell, slots, heads }, store, adam })
    }

    pub fn init_key(&self, task: TaskSpec, other_task: Option<TaskSpec>) -> InputKey {
        let mut key = EMPTY_KEY;
        key[Q_TASK] = task.index() as u16;
        if self.cfg.task_sharing_enabled {
            if let Some(o) = other_task {
                key[Q_OTHER_TASK] = o.index() as u16;
            }
        }
        key
    }

    pub fn listen_key(&self, heard: &QHeard) -> InputKey {
        let mut key = EMPTY_KEY;
        key[Q_OWN_Q] = heard.own_q;
        key[Q_OWN_A] = heard.own_a;
        if self.cfg.overhearing_enabled {
            if let Some((q, a)) = heard.other {
                key[Q_OTHER_Q] = q;
                key[Q_OTHER_A] = a;
            }
        }
        key
    }

    pub fn init(&self, tape: &mut Tape, inputs: &[(TaskSpec, Option<TaskSpec>)]) -> Result<Vec<NodeId>> {
        let req: Vec<_> = inputs.iter().map(|&(t, o)| (ROOT, self.init_key(t, o))).collect();
        tape.step(&self.net, &self.store, &req)
    }

    pub fn listen(&self, tape: &mut Tape, inputs: &[(NodeId, QHeard)]) -> Result<Vec<NodeId>> {
        let req: Vec<_> = inputs.iter().map(|(n, h)| (*n, self.listen_key(h))).collect();
        tape.step(&self.net, &self.store, &req)
    }

    pub fn speak<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        node: NodeId,
        rng: &mut R,
        mode: Mode,
    ) -> Result<ChoiceRecord> {
        tape.choose(&self.net, &self.store, node, SPEAK_HEAD, rng, mode)
    }

    pub fn predict<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        node: NodeId,
        rng: &mut R,
        mode: Mode,
    ) -> Result<[ChoiceRecord; 2]> {
        let first = tape.choose(&self.net, &self.store, node, PREDICT_HEADS[0], rng, mode)?;
        let second = tape.choose(&self.net, &self.store, node, PREDICT_HEADS[1], rng, mode)?;
        Ok([first, second])
    }
}

pub struct ABot {
    pub cfg: AgentConfig,
    pub values_per_attribute: usize,
    pub net: RecurrentNet,
    pub store: ParamStore,
    pub adam: AdamState,
}

impl ABot {
    pub fn new<R: Rng + ?Sized>(cfg: &AgentConfig, values_per_attribute: usize, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let (e, k, v) = (cfg.attr_embed_dim, cfg.token_embed_dim, values_per_attribute);
        let (cell, slots) = add_cell(
            &mut store,
            &[
                (v, e, "attr0"),
                (v, e, "attr1"),
                (v, e, "attr2"),
                (v, e, "other_attr0"),
                (v, e, "other_attr1"),
                (v, e, "other_attr2"),
                (cfg.vocab_q, k, "own_q"),
                (cfg.vocab_q, k, "other_q"),
            ],
            cfg,
            rng,
        )?;
        let heads = vec![linear_head(&mut store, "speak", cfg.vocab_a, cfg.hidden_dim, cfg.init_scale, rng)?];
        let adam = AdamState::new(&store);
        Ok(Self { cfg: cfg.clone(), values_per_attribute, net: RecurrentNet { cell, slots, heads }, store, adam })
    }

    pub fn memoryless(&self) -> bool {
        self.cfg.memoryless_abot
    }

    pub fn init_key(&self, instance: &Instance, other: Option<&Instance>) -> InputKey {
        let mut key = EMPTY_KEY;
        for a in 0..NUM_ATTRIBUTES {
            key[a] = instance.values[a] as u16;
        }
        if self.cfg.task_sharing_enabled {
            if let Some(o) = other {
                for a in 0..NUM_ATTRIBUTES {
                    key[A_OTHER_ATTR + a] = o.values[a] as u16;
                }
            }
        }
        key
    }

    pub fn hear_key(&self, own_q: u16, other_q: Option<u16>) -> InputKey {
        let mut key = EMPTY_KEY;
        key[A_OWN_Q] = own_q;
        if self.cfg.overhearing_enabled {
            if let Some(q) = other_q {
                key[A_OTHER_Q] = q;
            }
        }
        key
    }

    pub fn init(&self, tape: &mut Tape, inputs: &[(Instance, Option<Instance>)]) -> Result<Vec<NodeId>> {
        let req: Vec<_> = inputs.iter().map(|(i, o)| (ROOT, self.init_key(i, o.as_ref()))).collect();
        tape.step(&self.net, &self.store, &req)
    }

    /// One listening step per lane: `(parent, own q_t, overheard q_t)`.
    /// Callers pass the cached init node as parent for a memoryless A-bot.
    pub fn hear(&self, tape: &mut Tape, inputs: &[(NodeId, u16, Option<u16>)]) -> Result<Vec<NodeId>> {
        let req: Vec<_> = inputs.iter().map(|&(n, q, o)| (n, self.hear_key(q, o))).collect();
        tape.step(&self.net, &self.store, &req)
    }

    pub fn speak<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        node: NodeId,
        rng: &mut R,
        mode: Mode,
    ) -> Result<ChoiceRecord> {
        tape.choose(&self.net, &self.store, node, SPEAK_HEAD, rng, mode)
    }
}

/// A Q-bot and its partner A-bot.
pub struct Team {
    pub qbot: QBot,
    pub abot: ABot,
}

impl Team {
    pub fn new<R: Rng + ?Sized>(cfg: &AgentConfig, values_per_attribute: usize, rng: &mut R) -> Result<Self> {
        Ok(Self { qbot: QBot::new(cfg, values_per_attribute, rng)?, abot: ABot::new(cfg, values_per_attribute, rng)? })
    }

    pub fn apply_gradients(&mut self, adam: &AdamConfig) {
        crate::neural::optimizer_step(&mut self.qbot.store, &mut self.qbot.adam, adam);
        crate::neural::optimizer_step(&mut self.abot.store, &mut self.abot.adam, adam);
    }

    pub fn zero_grads(&mut self) {
        self.qbot.store.zero_grads();
        self.abot.store.zero_grads();
    }

    pub fn all_finite(&self) -> bool {
        self.qbot.store.all_finite() && self.abot.store.all_finite()
    }

    pub fn export(&self, prefix: &str) -> Vec<(String, crate::neural::Tensor)> {
        let mut out = self.qbot.store.export(&format!("{prefix}.qbot"));
        out.extend(self.abot.store.export(&format!("{prefix}.abot")));
        out
    }

    pub fn import(&mut self, prefix: &str, ckpt: &crate::neural::Checkpoint) -> Result<()> {
        self.qbot.store.import(&format!("{prefix}.qbot"), ckpt)?;
        self.abot.store.import(&format!("{prefix}.abot"), ckpt)
    }

    /// Overwrites every parameter with `value`.
    pub fn fill(&mut self, value: f64) {
        for store in [&mut self.qbot.store, &mut self.abot.store] {
            let ids: Vec<_> = store.ids().collect();
            for id in ids {
                store.value_mut(id).fill(value);
            }
        }
    }
}

/// Per-episode recurrent state of one agent on a tape.
#[derive(Clone, Debug)]
pub struct AgentState {
    pub node: NodeId,
    /// A-bot init node, restored every round when memoryless.
    pub reset_node: Option<NodeId>,
    pub round: usize,
    pub trace: EpisodeTrace,
}

pub fn qbot_init(
    q: &QBot,
    tape: &mut Tape,
    task: TaskSpec,
    other_task: Option<TaskSpec>,
    mode: Mode,
) -> Result<AgentState> {
    let node = q.init(tape, &[(task, other_task)])?[0];
    Ok(AgentState { node, reset_node: None, round: 0, trace: EpisodeTrace::new(mode) })
}

/// Listens to the previous round (absent in round 1), then asks a question.
pub fn qbot_round<R: Rng + ?Sized>(
    q: &QBot,
    tape: &mut Tape,
    state: &mut AgentState,
    incoming: Option<QHeard>,
    rng: &mut R,
) -> Result<u16> {
    if let Some(heard) = incoming {
        state.node = q.listen(tape, &[(state.node, heard)])?[0];
    }
    let c = q.speak(tape, state.node, rng, state.trace.mode)?;
    state.trace.push(c);
    state.round += 1;
    Ok(c.index)
}

/// Listens to the final round and emits the two guesses.
pub fn qbot_predict<R: Rng + ?Sized>(
    q: &QBot,
    tape: &mut Tape,
    state: &mut AgentState,
    last: QHeard,
    rounds: usize,
    rng: &mut R,
) -> Result<(u16, u16)> {
    if state.round != rounds {
        return Err(Error::DialogNotFinished { round: state.round, rounds });
    }
    state.node = q.listen(tape, &[(state.node, last)])?[0];
    let [a, b] = q.predict(tape, state.node, rng, state.trace.mode)?;
    state.trace.push(a);
    state.trace.push(b);
    state.round += 1;
    Ok((a.index, b.index))
}

pub fn abot_init(
    a: &ABot,
    tape: &mut Tape,
    instance: Instance,
    other: Option<Instance>,
    mode: Mode,
) -> Result<AgentState> {
    let node = a.init(tape, &[(instance, other)])?[0];
    Ok(AgentState { node, reset_node: Some(node), round: 0, trace: EpisodeTrace::new(mode) })
}

/// Hears this round's question(s), then answers.
pub fn abot_round<R: Rng + ?Sized>(
    a: &ABot,
    tape: &mut Tape,
    state: &mut AgentState,
    own_q: u16,
    other_q: Option<u16>,
    rng: &mut R,
) -> Result<u16> {
    let parent = match (a.memoryless(), state.reset_node) {
        (true, Some(init)) => init,
        _ => state.node,
    };
    state.node = a.hear(tape, &[(parent, own_q, other_q)])?[0];
    let c = a.speak(tape, state.node, rng, state.trace.mode)?;
    state.trace.push(c);
    state.round += 1;
    Ok(c.index)
}
