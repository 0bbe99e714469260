//! Agent networks and their checkpoint format.
//!
//! Each task owns a perception layer: a linear trunk over the concatenated
//! observation, previous-action one-hot, and agent one-hot, then a GRU whose
//! hidden state is the agent's memory. What sits on top depends on the
//! architecture:
//!
//! - `apn`: candidate actions are moved to the input side. A per-task head
//!   embeds (hidden state, candidate one-hot) pairs into a d-wide feature, and
//!   a single *shared* decision layer scores each feature with one scalar.
//!   Because the decision layer only ever sees d-wide features, it is the same
//!   set of weights for every task regardless of action-space size, and it can
//!   be saved alone and grafted onto nets built for unseen tasks.
//! - `original`: the conventional layout, one linear head mapping the hidden
//!   state straight to K action values. Nothing is shared across tasks.
//!
//! Checkpoints are a flat little-endian array dump plus a metadata text block,
//! written byte-identically for identical nets so artifacts diff cleanly.

use std::collections::BTreeMap;
use std::path::Path;

use crate::envsuite::{task_from_name, TaskSpec};
use crate::mixers::{QmixParams, QMIX_HIDDEN};
use crate::nnkit::{functional, GruParamIds, ParamId, ParamSet, Tensor};
use crate::rng::{stream_seed, Rng};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("net usage error: {0}")]
    Usage(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Network layout: candidate-actions-as-input with a shared decision layer,
/// or the conventional per-task Q head.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arch {
    Apn,
    Original,
}

impl Arch {
    pub fn as_str(self) -> &'static str {
        match self {
            Arch::Apn => "apn",
            Arch::Original => "original",
        }
    }

    pub fn parse(s: &str) -> Result<Self, NetError> {
        match s {
            "apn" => Ok(Arch::Apn),
            "original" => Ok(Arch::Original),
            other => Err(NetError::Usage(format!("unknown arch '{other}'"))),
        }
    }
}

/// Joint-value mixer choice.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MixerKind {
    Vdn,
    Qmix,
}

impl MixerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MixerKind::Vdn => "vdn",
            MixerKind::Qmix => "qmix",
        }
    }

    pub fn parse(s: &str) -> Result<Self, NetError> {
        match s {
            "vdn" => Ok(MixerKind::Vdn),
            "qmix" => Ok(MixerKind::Qmix),
            other => Err(NetError::Usage(format!("unknown mixer '{other}'"))),
        }
    }
}

/// Per-task perception layer feeding the shared decision layer.
#[derive(Debug, Clone)]
pub struct PerlParams {
    /// (obs + K + N) -> d.
    pub trunk: (ParamId, ParamId),
    /// d -> d recurrent core.
    pub gru: GruParamIds,
    /// (d + K) -> d candidate embedding.
    pub head: (ParamId, ParamId),
}

/// Per-task net for the conventional layout.
#[derive(Debug, Clone)]
pub struct BaselineParams {
    pub trunk: (ParamId, ParamId),
    pub gru: GruParamIds,
    /// d -> K action values.
    pub head: (ParamId, ParamId),
}

#[derive(Debug, Clone)]
pub enum TaskNet {
    Apn(PerlParams),
    Original(BaselineParams),
}

/// The shared decision layer: d -> d -> 1 with a relu between.
#[derive(Debug, Clone)]
pub struct DeclParams {
    pub l1: (ParamId, ParamId),
    pub l2: (ParamId, ParamId),
}

impl DeclParams {
    pub fn all_ids(&self) -> [ParamId; 4] {
        [self.l1.0, self.l1.1, self.l2.0, self.l2.1]
    }

    /// Array names in checkpoint order.
    pub const ARRAY_NAMES: [&'static str; 4] = ["decl.l1.w", "decl.l1.b", "decl.l2.w", "decl.l2.b"];
}

/// A component that can be frozen (excluded from optimizer updates) or thawed.
#[derive(Debug, Clone, Copy)]
pub enum Component<'a> {
    DecL,
    Perl(&'a str),
}

/// All parameters for a set of tasks under one architecture and mixer.
#[derive(Debug, Clone)]
pub struct ApnNet {
    pub d: usize,
    pub arch: Arch,
    pub mixer: MixerKind,
    pub seed: u64,
    pub params: ParamSet,
    pub task_order: Vec<String>,
    pub tasks: BTreeMap<String, TaskNet>,
    pub specs: BTreeMap<String, TaskSpec>,
    /// Present exactly when `arch` is `apn`.
    pub decl: Option<DeclParams>,
    /// Present per task exactly when `mixer` is `qmix`.
    pub qmix: BTreeMap<String, QmixParams>,
}

impl ApnNet {
    /// Build fresh parameters for `specs`, drawn from the `"init"` stream of
    /// `seed`. Creation order (tasks in the given order, then the decision
    /// layer, then mixers) is part of the checkpoint layout.
    pub fn new(
        d: usize,
        arch: Arch,
        mixer: MixerKind,
        specs: &[TaskSpec],
        seed: u64,
    ) -> Result<Self, NetError> {
        if specs.is_empty() {
            return Err(NetError::Usage("a net needs at least one task".into()));
        }
        if d == 0 {
            return Err(NetError::Usage("width d must be positive".into()));
        }
        let mut rng = Rng::new(stream_seed(seed, "init"));
        let mut params = ParamSet::new();
        let mut tasks = BTreeMap::new();
        let mut spec_map = BTreeMap::new();
        let mut task_order = Vec::with_capacity(specs.len());

        for spec in specs {
            let id = &spec.task_id;
            if tasks.contains_key(id) {
                return Err(NetError::Usage(format!("duplicate task '{id}'")));
            }
            let trunk_in = spec.obs_dim + spec.k + spec.n_agents;
            let trunk = params.add_linear(&format!("{id}.trunk"), d, trunk_in, &mut rng);
            let gru = GruParamIds::create(&mut params, &format!("{id}.gru"), d, d, &mut rng);
            let net = match arch {
                Arch::Apn => TaskNet::Apn(PerlParams {
                    trunk,
                    gru,
                    head: params.add_linear(&format!("{id}.head"), d, d + spec.k, &mut rng),
                }),
                Arch::Original => TaskNet::Original(BaselineParams {
                    trunk,
                    gru,
                    head: params.add_linear(&format!("{id}.head"), spec.k, d, &mut rng),
                }),
            };
            task_order.push(id.clone());
            tasks.insert(id.clone(), net);
            spec_map.insert(id.clone(), spec.clone());
        }

        let decl = match arch {
            Arch::Apn => Some(DeclParams {
                l1: params.add_linear("decl.l1", d, d, &mut rng),
                l2: params.add_linear("decl.l2", 1, d, &mut rng),
            }),
            Arch::Original => None,
        };

        let mut qmix = BTreeMap::new();
        if mixer == MixerKind::Qmix {
            for spec in specs {
                let qp = QmixParams::create(
                    &mut params,
                    &format!("{}.qmix", spec.task_id),
                    spec.n_agents,
                    spec.state_dim,
                    QMIX_HIDDEN,
                    &mut rng,
                );
                qmix.insert(spec.task_id.clone(), qp);
            }
        }

        Ok(ApnNet {
            d,
            arch,
            mixer,
            seed,
            params,
            task_order,
            tasks,
            specs: spec_map,
            decl,
            qmix,
        })
    }

    pub fn spec(&self, task: &str) -> Result<&TaskSpec, NetError> {
        self.specs
            .get(task)
            .ok_or_else(|| NetError::Usage(format!("unknown task '{task}'")))
    }

    pub fn task_net(&self, task: &str) -> Result<&TaskNet, NetError> {
        self.tasks
            .get(task)
            .ok_or_else(|| NetError::Usage(format!("unknown task '{task}'")))
    }

    /// Fresh all-zero hidden states, one row per batch entry.
    pub fn zero_hidden(&self, rows: usize) -> Tensor {
        Tensor::zeros(rows, self.d)
    }

    /// One recurrent step: trunk, relu, GRU. Returns the new hidden state.
    pub fn advance_hidden(&self, task: &str, trunk_in: &Tensor, h: &Tensor) -> Result<Tensor, NetError> {
        let (trunk, gru) = match self.task_net(task)? {
            TaskNet::Apn(p) => (p.trunk, &p.gru),
            TaskNet::Original(p) => (p.trunk, &p.gru),
        };
        let mut x = functional::linear(&self.params, trunk.0, Some(trunk.1), trunk_in);
        functional::relu_inplace(&mut x);
        Ok(functional::gru(&self.params, gru, &x, h))
    }

    /// Action values for every candidate, `B x K`, from a post-GRU hidden
    /// state. Pure: the hidden state is not advanced or modified.
    pub fn q_from_hidden(&self, task: &str, h: &Tensor) -> Result<Tensor, NetError> {
        let spec = self.spec(task)?;
        let (b, k) = (h.shape().0, spec.k);
        match self.task_net(task)? {
            TaskNet::Original(p) => Ok(functional::linear(&self.params, p.head.0, Some(p.head.1), h)),
            TaskNet::Apn(p) => {
                let decl = self.decl.as_ref().expect("apn net has a decision layer");
                let mut out = Tensor::zeros(b, k);
                let mut cand_in = Tensor::zeros(b, self.d + k);
                for cand in 0..k {
                    for r in 0..b {
                        let row = cand_in.row_mut(r);
                        row[..self.d].copy_from_slice(h.row(r));
                        row[self.d..].fill(0.0);
                        row[self.d + cand] = 1.0;
                    }
                    let mut feat =
                        functional::linear(&self.params, p.head.0, Some(p.head.1), &cand_in);
                    functional::relu_inplace(&mut feat);
                    let mut z = functional::linear(&self.params, decl.l1.0, Some(decl.l1.1), &feat);
                    functional::relu_inplace(&mut z);
                    let q = functional::linear(&self.params, decl.l2.0, Some(decl.l2.1), &z);
                    for r in 0..b {
                        out.row_mut(r)[cand] = q.row(r)[0];
                    }
                }
                Ok(out)
            }
        }
    }

    /// Freeze or thaw a component. Frozen arrays keep their values and
    /// optimizer accumulators bit-identical across updates while gradients
    /// still flow through them to upstream parameters.
    pub fn set_frozen(&mut self, component: Component, frozen: bool) -> Result<(), NetError> {
        let ids: Vec<ParamId> = match component {
            Component::DecL => self
                .decl
                .as_ref()
                .ok_or_else(|| NetError::Usage("this net has no shared decision layer".into()))?
                .all_ids()
                .to_vec(),
            Component::Perl(task) => match self.task_net(task)? {
                TaskNet::Apn(p) => {
                    let mut ids = vec![p.trunk.0, p.trunk.1, p.head.0, p.head.1];
                    ids.extend(p.gru.all_ids());
                    ids
                }
                TaskNet::Original(p) => {
                    let mut ids = vec![p.trunk.0, p.trunk.1, p.head.0, p.head.1];
                    ids.extend(p.gru.all_ids());
                    ids
                }
            },
        };
        for id in ids {
            self.params.set_frozen(id, frozen);
        }
        Ok(())
    }

    /// Serialize either the decision layer alone or every array.
    pub fn checkpoint(&self, scope: Scope, step: u64, single_task: bool) -> Checkpoint {
        let arrays: Vec<(String, Vec<usize>, Vec<f32>)> = match scope {
            Scope::DeclOnly => {
                let decl = self.decl.as_ref().expect("decl-only checkpoint of an apn net");
                decl.all_ids()
                    .iter()
                    .map(|&id| {
                        let a = self.params.get(id);
                        (a.name.clone(), a.shape.clone(), a.values.clone())
                    })
                    .collect()
            }
            Scope::Full => self
                .params
                .iter()
                .map(|a| (a.name.clone(), a.shape.clone(), a.values.clone()))
                .collect(),
        };
        let mut meta = vec![
            ("d".to_string(), self.d.to_string()),
            ("step".to_string(), step.to_string()),
            ("seed".to_string(), self.seed.to_string()),
            ("tasks".to_string(), self.task_order.join(",")),
            ("scope".to_string(), scope.as_str().to_string()),
            ("arch".to_string(), self.arch.as_str().to_string()),
            ("mixer".to_string(), self.mixer.as_str().to_string()),
        ];
        if single_task {
            meta.push(("single_task".to_string(), "true".to_string()));
        }
        Checkpoint { arrays, meta }
    }

    /// Copy a decision-layer checkpoint into this net's shared layer.
    pub fn apply_decl(&mut self, ckpt: &Checkpoint) -> Result<(), NetError> {
        let ckpt_d = ckpt.meta_usize("d")?;
        if ckpt_d != self.d {
            return Err(NetError::Checkpoint(format!(
                "decision layer width mismatch: checkpoint d={ckpt_d}, net d={}",
                self.d
            )));
        }
        if self.decl.is_none() {
            return Err(NetError::Usage(
                "cannot load a decision layer into an 'original' net".into(),
            ));
        }
        for name in DeclParams::ARRAY_NAMES {
            let (shape, values) = ckpt.array(name)?;
            self.copy_into(name, shape, values)?;
        }
        Ok(())
    }

    /// Copy every array of a full checkpoint into this net. The checkpoint
    /// must cover exactly this net's parameters.
    pub fn apply_full(&mut self, ckpt: &Checkpoint) -> Result<(), NetError> {
        if ckpt.arrays.len() != self.params.len() {
            return Err(NetError::Checkpoint(format!(
                "array count mismatch: checkpoint has {}, net has {}",
                ckpt.arrays.len(),
                self.params.len()
            )));
        }
        for (name, shape, values) in &ckpt.arrays {
            self.copy_into(name, shape, values)?;
        }
        Ok(())
    }

    fn copy_into(&mut self, name: &str, shape: &[usize], values: &[f32]) -> Result<(), NetError> {
        let id = self
            .params
            .ids()
            .zip(self.params.iter())
            .find(|(_, a)| a.name == name)
            .map(|(id, _)| id)
            .ok_or_else(|| NetError::Checkpoint(format!("unknown array '{name}'")))?;
        let array = self.params.get_mut(id);
        if array.shape != shape {
            return Err(NetError::Checkpoint(format!(
                "shape mismatch for '{name}': checkpoint {shape:?}, net {:?}",
                array.shape
            )));
        }
        array.values.copy_from_slice(values);
        Ok(())
    }

    /// Rebuild a net from a full checkpoint's metadata and arrays.
    pub fn from_full_checkpoint(ckpt: &Checkpoint) -> Result<ApnNet, NetError> {
        let scope = ckpt.meta_get("scope")?;
        if scope != Scope::Full.as_str() {
            return Err(NetError::Checkpoint(format!(
                "checkpoint has scope '{scope}', need '{}'",
                Scope::Full.as_str()
            )));
        }
        let d = ckpt.meta_usize("d")?;
        let seed: u64 = ckpt
            .meta_get("seed")?
            .parse()
            .map_err(|_| NetError::Checkpoint("metadata seed is not an integer".into()))?;
        let arch = Arch::parse(ckpt.meta_get("arch")?)?;
        let mixer = MixerKind::parse(ckpt.meta_get("mixer")?)?;
        let specs: Vec<TaskSpec> = ckpt
            .meta_get("tasks")?
            .split(',')
            .map(|name| {
                task_from_name(name).map_err(|e| NetError::Checkpoint(format!("bad task in metadata: {e}")))
            })
            .collect::<Result<_, _>>()?;
        let mut net = ApnNet::new(d, arch, mixer, &specs, seed)?;
        net.apply_full(ckpt)?;
        Ok(net)
    }
}

/// Choose an action from one row of values. The exploration coin is drawn
/// exactly once per call regardless of outcome; exploration picks uniformly
/// among available actions, exploitation takes the best available value with
/// ties broken toward the lowest index.
pub fn select_action(
    q: &[f32],
    available: &[bool],
    epsilon: f32,
    rng: &mut Rng,
) -> Result<usize, NetError> {
    if q.len() != available.len() {
        return Err(NetError::Usage(format!(
            "{} values for {} availability flags",
            q.len(),
            available.len()
        )));
    }
    let open: Vec<usize> = (0..q.len()).filter(|&i| available[i]).collect();
    if open.is_empty() {
        return Err(NetError::Usage("no available action to select".into()));
    }
    let coin = rng.next_f32();
    if coin < epsilon {
        return Ok(open[rng.below(open.len())]);
    }
    let mut best = open[0];
    for &i in &open[1..] {
        if q[i] > q[best] {
            best = i;
        }
    }
    Ok(best)
}

/// What a checkpoint covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scope {
    DeclOnly,
    Full,
}

impl Scope {
    pub fn as_str(self) -> &'static str {
        match self {
            Scope::DeclOnly => "decl",
            Scope::Full => "full",
        }
    }
}

const MAGIC: &[u8; 4] = b"APNC";
const VERSION: u32 = 1;

/// Named parameter arrays plus ordered metadata lines, with a stable binary
/// form: magic, version, array count, then per array a length-prefixed name,
/// rank, dims, and little-endian f32 payload, then a length-prefixed UTF-8
/// metadata block of `key=value` lines.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub arrays: Vec<(String, Vec<usize>, Vec<f32>)>,
    pub meta: Vec<(String, String)>,
}

impl Checkpoint {
    pub fn meta_get(&self, key: &str) -> Result<&str, NetError> {
        self.meta
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| NetError::Checkpoint(format!("metadata missing '{key}'")))
    }

    fn meta_usize(&self, key: &str) -> Result<usize, NetError> {
        self.meta_get(key)?
            .parse()
            .map_err(|_| NetError::Checkpoint(format!("metadata '{key}' is not an integer")))
    }

    pub fn array(&self, name: &str) -> Result<(&[usize], &[f32]), NetError> {
        self.arrays
            .iter()
            .find(|(n, _, _)| n == name)
            .map(|(_, s, v)| (s.as_slice(), v.as_slice()))
            .ok_or_else(|| NetError::Checkpoint(format!("'{name}' absent from checkpoint")))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.arrays.len() as u32).to_le_bytes());
        for (name, shape, values) in &self.arrays {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(shape.len() as u8);
            for &dim in shape {
                out.extend_from_slice(&(dim as u32).to_le_bytes());
            }
            for &v in values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let meta_text: String = self
            .meta
            .iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect();
        out.extend_from_slice(&(meta_text.len() as u32).to_le_bytes());
        out.extend_from_slice(meta_text.as_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint, NetError> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4, "magic")?;
        if magic != MAGIC {
            return Err(NetError::Checkpoint(format!(
                "bad magic {magic:?}, expected {MAGIC:?}"
            )));
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(NetError::Checkpoint(format!(
                "unsupported version {version}, expected {VERSION}"
            )));
        }
        let count = r.u32("array count")? as usize;
        let mut arrays = Vec::with_capacity(count);
        for _ in 0..count {
            let name_len = r.u16("array name length")? as usize;
            let name = String::from_utf8(r.take(name_len, "array name")?.to_vec())
                .map_err(|_| NetError::Checkpoint("array name is not UTF-8".into()))?;
            let rank = r.take(1, "array rank")?[0] as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u32(&format!("dims of '{name}'"))? as usize);
            }
            let len: usize = shape.iter().product();
            let payload = r.take(len * 4, &format!("values of '{name}'"))?;
            let values: Vec<f32> = payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            arrays.push((name, shape, values));
        }
        let meta_len = r.u32("metadata length")? as usize;
        let meta_text = String::from_utf8(r.take(meta_len, "metadata")?.to_vec())
            .map_err(|_| NetError::Checkpoint("metadata is not UTF-8".into()))?;
        let meta = meta_text
            .lines()
            .filter(|l| !l.is_empty())
            .map(|line| {
                line.split_once('=')
                    .map(|(k, v)| (k.to_string(), v.to_string()))
                    .ok_or_else(|| NetError::Checkpoint(format!("metadata line '{line}' has no '='")))
            })
            .collect::<Result<_, _>>()?;
        Ok(Checkpoint { arrays, meta })
    }

    pub fn save(&self, path: &Path) -> Result<(), NetError> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint, NetError> {
        let bytes = std::fs::read(path)?;
        Checkpoint::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], NetError> {
        if self.pos + n > self.bytes.len() {
            return Err(NetError::Checkpoint(format!(
                "checkpoint truncated while reading {what}"
            )));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<u32, NetError> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u16(&mut self, what: &str) -> Result<u16, NetError> {
        let b = self.take(2, what)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }
}
