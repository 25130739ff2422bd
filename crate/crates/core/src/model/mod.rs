//! Multi-task conversion model.
//!
//! Shared embeddings feed a bottom layer (independent per task, one shared
//! MLP, or a mixture of experts with one softmax gate per task). Each task
//! then has either a single tower or two sub-towers, one for samples whose
//! target is the task and one for samples admitted by the extended mask,
//! merged by the routing indicator into one prediction head.

mod snapshot;

pub use snapshot::{read_snapshot, write_snapshot};

use serde::{Deserialize, Serialize};

use crate::engine::{sigmoid, softmax_rows, Activation, Initializer, Matrix, Mlp, MlpCache, MlpSpec, ParamId, ParamStore};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    /// Independent embedding, bottom and tower per task.
    SingleTask,
    /// One bottom MLP shared by every task.
    SharedBottom,
    /// Experts mixed by a per-task softmax gate.
    Mmoe,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_tasks: usize,
    /// Number of experts; ignored unless the architecture is `Mmoe`.
    pub n_experts: usize,
    /// Vocabulary per feature field; ids `1..=vocab` get their own row.
    pub field_vocab: Vec<usize>,
    pub embed_dim: usize,
    pub expert_widths: Vec<usize>,
    pub sub_tower_widths: Vec<usize>,
    /// Widths of the head on top of the sub-towers; must end in 1.
    pub merge_widths: Vec<usize>,
    pub architecture: Architecture,
    /// Dual sub-towers routed by the indicator.
    pub hke: bool,
}

impl ModelConfig {
    pub fn new(n_tasks: usize, field_vocab: Vec<usize>) -> Self {
        Self {
            n_tasks,
            n_experts: 4,
            field_vocab,
            embed_dim: 8,
            expert_widths: vec![64, 32],
            sub_tower_widths: vec![32],
            merge_widths: vec![16, 1],
            architecture: Architecture::Mmoe,
            hke: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_tasks == 0 || self.n_experts == 0 {
            return Err(Error::Config("need at least one task and one expert".into()));
        }
        if self.field_vocab.is_empty() || self.embed_dim == 0 {
            return Err(Error::Config("need at least one feature field and embed_dim > 0".into()));
        }
        if self.expert_widths.is_empty() || self.sub_tower_widths.is_empty() {
            return Err(Error::Config("expert and sub-tower MLPs need at least one layer".into()));
        }
        if self.merge_widths.last() != Some(&1) {
            return Err(Error::Config("the merge head must end in a single logit".into()));
        }
        let widths = self.expert_widths.iter().chain(&self.sub_tower_widths).chain(&self.merge_widths);
        if widths.into_iter().any(|&w| w == 0) {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        Ok(())
    }

    pub fn input_width(&self) -> usize {
        self.field_vocab.len() * self.embed_dim
    }

    fn bottom_width(&self) -> usize {
        *self.expert_widths.last().expect("validated")
    }
}

/// Flat `batch × n_fields` matrix of categorical ids.
#[derive(Clone, Copy, Debug)]
pub struct FeatureBatch<'a> {
    pub ids: &'a [u32],
    pub n_fields: usize,
}

impl<'a> FeatureBatch<'a> {
    pub fn new(ids: &'a [u32], n_fields: usize) -> Result<Self> {
        if n_fields == 0 || ids.len() % n_fields != 0 {
            return Err(Error::Dimension(format!(
                "{} ids do not form rows of {n_fields} fields",
                ids.len()
            )));
        }
        Ok(Self { ids, n_fields })
    }

    pub fn len(&self) -> usize {
        self.ids.len() / self.n_fields
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn row(&self, i: usize) -> &'a [u32] {
        &self.ids[i * self.n_fields..(i + 1) * self.n_fields]
    }
}

/// Per-task logit and probability of one sample.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Prediction {
    pub logit: f64,
    pub prob: f64,
}

impl Prediction {
    pub fn from_logit(logit: f64) -> Self {
        Self {
            logit,
            prob: sigmoid(logit),
        }
    }
}

#[derive(Clone, Debug)]
struct Embedding {
    tables: Vec<ParamId>,
    dim: usize,
}

impl Embedding {
    fn new(store: &mut ParamStore, init: &Initializer, prefix: &str, vocab: &[usize], dim: usize) -> Result<Self> {
        let tables = vocab
            .iter()
            .enumerate()
            .map(|(f, &v)| {
                let name = format!("{prefix}emb.{f}");
                store.add(name.clone(), init.normal(&name, v + 1, dim, 0.01))
            })
            .collect::<Result<_>>()?;
        Ok(Self { tables, dim })
    }

    #[inline]
    fn row_of(table: &Matrix, id: u32) -> usize {
        if id == 0 || id as usize >= table.rows() {
            0
        } else {
            id as usize
        }
    }

    fn forward(&self, store: &ParamStore, batch: &FeatureBatch) -> Result<Matrix> {
        if batch.n_fields != self.tables.len() {
            return Err(Error::Dimension(format!(
                "model expects {} fields, batch has {}",
                self.tables.len(),
                batch.n_fields
            )));
        }
        let d = self.dim;
        let mut x = Matrix::zeros(batch.len(), self.tables.len() * d);
        for i in 0..batch.len() {
            let ids = batch.row(i);
            let out = x.row_mut(i);
            for (f, (&table, &id)) in self.tables.iter().zip(ids).enumerate() {
                let t = store.value(table);
                out[f * d..(f + 1) * d].copy_from_slice(t.row(Self::row_of(t, id)));
            }
        }
        Ok(x)
    }

    fn backward(&self, store: &mut ParamStore, batch: &FeatureBatch, dx: &Matrix) {
        let d = self.dim;
        for i in 0..batch.len() {
            let ids = batch.row(i);
            let g = dx.row(i);
            for (f, (&table, &id)) in self.tables.iter().zip(ids).enumerate() {
                let (value, grad) = store.value_and_grad_mut(table);
                let r = Self::row_of(value, id);
                for (a, b) in grad.row_mut(r).iter_mut().zip(&g[f * d..(f + 1) * d]) {
                    *a += b;
                }
            }
        }
    }
}

#[derive(Clone, Debug)]
enum Tower {
    Base(Mlp),
    Dual { original: Mlp, extended: Mlp, merge: Mlp },
}

struct TowerCache {
    base: Option<MlpCache>,
    original: Option<MlpCache>,
    extended: Option<MlpCache>,
    merge: Option<MlpCache>,
    /// Routing column of the batch.
    route: Vec<f64>,
}

impl Tower {
    fn new(store: &mut ParamStore, init: &Initializer, name: &str, input: usize, cfg: &ModelConfig) -> Result<Self> {
        if cfg.hke {
            let sub = MlpSpec::new(input, cfg.sub_tower_widths.clone(), Activation::Relu);
            let width = sub.output_width();
            Ok(Tower::Dual {
                original: Mlp::new(store, init, &format!("{name}.orig"), sub.clone())?,
                extended: Mlp::new(store, init, &format!("{name}.ext"), sub)?,
                merge: Mlp::new(store, init, &format!("{name}.merge"), MlpSpec::new(width, cfg.merge_widths.clone(), Activation::Identity))?,
            })
        } else {
            let widths = cfg.sub_tower_widths.iter().chain(&cfg.merge_widths).copied().collect();
            Ok(Tower::Base(Mlp::new(store, init, name, MlpSpec::new(input, widths, Activation::Identity))?))
        }
    }

    /// `route[b]` is 1 for original samples of this task and 0 for extended
    /// ones; only the dual tower reads it.
    fn forward(&self, store: &ParamStore, h: &Matrix, route: Vec<f64>) -> Result<(Matrix, TowerCache)> {
        match self {
            Tower::Base(mlp) => {
                let (s, c) = mlp.forward(store, h)?;
                Ok((s, TowerCache { base: Some(c), original: None, extended: None, merge: None, route }))
            }
            Tower::Dual { original, extended, merge } => {
                let any_orig = route.iter().any(|&m| m == 1.0);
                let any_ext = route.iter().any(|&m| m == 0.0);
                let (o, oc) = if any_orig { let (o, c) = original.forward(store, h)?; (Some(o), Some(c)) } else { (None, None) };
                let (e, ec) = if any_ext { let (e, c) = extended.forward(store, h)?; (Some(e), Some(c)) } else { (None, None) };
                let width = original.spec().output_width();
                let mut z = Matrix::zeros(h.rows(), width);
                for (b, &m) in route.iter().enumerate() {
                    let src = if m == 1.0 { o.as_ref() } else { e.as_ref() };
                    z.row_mut(b).copy_from_slice(src.expect("path computed").row(b));
                }
                let (s, mc) = merge.forward(store, &z)?;
                Ok((s, TowerCache { base: None, original: oc, extended: ec, merge: Some(mc), route }))
            }
        }
    }

    fn backward(&self, store: &mut ParamStore, cache: &TowerCache, ds: &Matrix) -> Result<Matrix> {
        let missing = || Error::State("tower backward without a forward cache".into());
        match self {
            Tower::Base(mlp) => mlp.backward(store, cache.base.as_ref().ok_or_else(missing)?, ds),
            Tower::Dual { original, extended, merge } => {
                let dz = merge.backward(store, cache.merge.as_ref().ok_or_else(missing)?, ds)?;
                let mut dh: Option<Matrix> = None;
                for (path, pcache, keep) in [(original, &cache.original, 1.0), (extended, &cache.extended, 0.0)] {
                    let Some(pc) = pcache else { continue };
                    let mut d = dz.clone();
                    for (b, &m) in cache.route.iter().enumerate() {
                        if m != keep {
                            d.row_mut(b).fill(0.0);
                        }
                    }
                    let g = path.backward(store, pc, &d)?;
                    match dh.as_mut() {
                        Some(acc) => acc.add_assign(&g)?,
                        None => dh = Some(g),
                    }
                }
                dh.ok_or_else(missing)
            }
        }
    }
}

#[derive(Clone, Debug)]
enum Body {
    PerTask {
        embeddings: Vec<Embedding>,
        bottoms: Vec<Mlp>,
    },
    Shared {
        embedding: Embedding,
        experts: Vec<Mlp>,
        /// `n_experts × input` gate weights per task; empty without gating.
        gates: Vec<ParamId>,
    },
}

/// Activations kept for [`Model::backward`].
pub struct ForwardCache {
    ids: Vec<u32>,
    n_fields: usize,
    body: BodyCache,
    towers: Vec<TowerCache>,
}

enum BodyCache {
    PerTask {
        bottoms: Vec<MlpCache>,
    },
    Shared {
        x: Matrix,
        experts: Vec<(Matrix, MlpCache)>,
        gates: Vec<Matrix>,
    },
}

pub struct ForwardPass {
    /// `batch × n_tasks` logits.
    pub logits: Matrix,
    pub cache: ForwardCache,
}

#[derive(Clone, Debug)]
pub struct Model {
    config: ModelConfig,
    store: ParamStore,
    body: Body,
    towers: Vec<Tower>,
}

impl Model {
    /// Builds and initializes a model. Parameter values depend only on the
    /// seed and the parameter's name, so architectures sharing a name (e.g.
    /// a one-expert mixture and a shared bottom) start from the same values.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let init = Initializer::new(seed);
        let mut store = ParamStore::new();
        let input = config.input_width();
        let expert_spec = MlpSpec::new(input, config.expert_widths.clone(), Activation::Relu);
        let hidden = config.bottom_width();

        let body = match config.architecture {
            Architecture::SingleTask => {
                let mut embeddings = Vec::new();
                let mut bottoms = Vec::new();
                for j in 0..config.n_tasks {
                    embeddings.push(Embedding::new(&mut store, &init, &format!("task{j}."), &config.field_vocab, config.embed_dim)?);
                    bottoms.push(Mlp::new(&mut store, &init, &format!("task{j}.bottom"), expert_spec.clone())?);
                }
                Body::PerTask { embeddings, bottoms }
            }
            Architecture::SharedBottom | Architecture::Mmoe => {
                let embedding = Embedding::new(&mut store, &init, "", &config.field_vocab, config.embed_dim)?;
                let k = if config.architecture == Architecture::Mmoe { config.n_experts } else { 1 };
                let experts = (0..k)
                    .map(|e| Mlp::new(&mut store, &init, &format!("expert{e}"), expert_spec.clone()))
                    .collect::<Result<_>>()?;
                Body::Shared { embedding, experts, gates: Vec::new() }
            }
        };
        let towers = (0..config.n_tasks)
            .map(|j| Tower::new(&mut store, &init, &format!("tower{j}"), hidden, &config))
            .collect::<Result<_>>()?;
        let mut model = Self { config, store, body, towers };
        if model.config.architecture == Architecture::Mmoe {
            let (k, input) = (model.config.n_experts, input);
            let gates = (0..model.config.n_tasks)
                .map(|j| {
                    let name = format!("gate{j}");
                    model.store.add(name.clone(), init.glorot(&name, k, input))
                })
                .collect::<Result<Vec<_>>>()?;
            if let Body::Shared { gates: g, .. } = &mut model.body {
                *g = gates;
            }
        }
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn n_tasks(&self) -> usize {
        self.config.n_tasks
    }

    /// Concatenated field embeddings of the shared (or task-`task`) table.
    pub fn embed(&self, batch: &FeatureBatch, task: usize) -> Result<Matrix> {
        match &self.body {
            Body::Shared { embedding, .. } => embedding.forward(&self.store, batch),
            Body::PerTask { embeddings, .. } => embeddings
                .get(task)
                .ok_or_else(|| Error::Request(format!("unknown task {task}")))?
                .forward(&self.store, batch),
        }
    }

    /// Gate distributions over experts for task `j` (`batch × K`).
    pub fn gate_weights(&self, x: &Matrix, task: usize) -> Result<Option<Matrix>> {
        match &self.body {
            Body::Shared { gates, .. } if !gates.is_empty() => {
                let w = gates.get(task).ok_or_else(|| Error::Request(format!("unknown task {task}")))?;
                Ok(Some(softmax_rows(&x.matmul_nt(self.store.value(*w))?)))
            }
            _ => Ok(None),
        }
    }

    /// Task representations `h_j` of a shared body: the gate-weighted sum of
    /// expert outputs, or the single bottom output.
    pub fn mmoe_forward(&self, x: &Matrix) -> Result<Vec<Matrix>> {
        let Body::Shared { experts, .. } = &self.body else {
            return Err(Error::Request("per-task models have no shared bottom".into()));
        };
        let outs = experts.iter().map(|e| e.infer(&self.store, x)).collect::<Result<Vec<_>>>()?;
        (0..self.config.n_tasks)
            .map(|j| {
                Ok(match self.gate_weights(x, j)? {
                    Some(g) => mix(&outs, &g),
                    None => outs[0].clone(),
                })
            })
            .collect()
    }

    /// Full forward pass. `route` is the flat `batch × n_tasks` routing
    /// indicator; `None` routes every entry through the original path.
    pub fn forward(&self, batch: &FeatureBatch, route: Option<&[u8]>) -> Result<ForwardPass> {
        let b = batch.len();
        let n = self.config.n_tasks;
        if let Some(r) = route {
            if r.len() != b * n {
                return Err(Error::Dimension(format!("route has {} entries, expected {}", r.len(), b * n)));
            }
            if r.iter().any(|&m| m > 1) {
                return Err(Error::Domain("routing indicator must be 0 or 1".into()));
            }
        }
        let route_col = |j: usize| -> Vec<f64> {
            match route {
                Some(r) => (0..b).map(|i| r[i * n + j] as f64).collect(),
                None => vec![1.0; b],
            }
        };

        let mut logits = Matrix::zeros(b, n);
        let mut towers = Vec::with_capacity(n);
        let body = match &self.body {
            Body::PerTask { embeddings, bottoms } => {
                let mut caches = Vec::with_capacity(n);
                for j in 0..n {
                    let x = embeddings[j].forward(&self.store, batch)?;
                    let (h, c) = bottoms[j].forward(&self.store, &x)?;
                    caches.push(c);
                    let (s, tc) = self.towers[j].forward(&self.store, &h, route_col(j))?;
                    set_column(&mut logits, j, &s);
                    towers.push(tc);
                }
                BodyCache::PerTask { bottoms: caches }
            }
            Body::Shared { embedding, experts, gates } => {
                let x = embedding.forward(&self.store, batch)?;
                let outs = experts.iter().map(|e| e.forward(&self.store, &x)).collect::<Result<Vec<_>>>()?;
                let plain: Vec<Matrix> = outs.iter().map(|(o, _)| o.clone()).collect();
                let mut gate_vals = Vec::with_capacity(gates.len());
                for j in 0..n {
                    let h = if gates.is_empty() {
                        plain[0].clone()
                    } else {
                        let g = softmax_rows(&x.matmul_nt(self.store.value(gates[j]))?);
                        let h = mix(&plain, &g);
                        gate_vals.push(g);
                        h
                    };
                    let (s, tc) = self.towers[j].forward(&self.store, &h, route_col(j))?;
                    set_column(&mut logits, j, &s);
                    towers.push(tc);
                }
                BodyCache::Shared { x, experts: outs, gates: gate_vals }
            }
        };
        logits.ensure_finite("logits")?;
        Ok(ForwardPass {
            logits,
            cache: ForwardCache {
                ids: batch.ids.to_vec(),
                n_fields: batch.n_fields,
                body,
                towers,
            },
        })
    }

    /// Accumulates `dL/dθ` given `dL/d logits` (`batch × n_tasks`).
    pub fn backward(&mut self, cache: &ForwardCache, dlogits: &Matrix) -> Result<()> {
        let n = self.config.n_tasks;
        let batch = FeatureBatch::new(&cache.ids, cache.n_fields)?;
        dlogits.ensure_shape(batch.len(), n, "logit gradient")?;
        if cache.towers.len() != n {
            return Err(Error::State("forward cache does not match this model".into()));
        }
        let store = &mut self.store;
        let mut dh = Vec::with_capacity(n);
        for j in 0..n {
            let ds = Matrix::from_vec(batch.len(), 1, dlogits.column(j))?;
            dh.push(self.towers[j].backward(store, &cache.towers[j], &ds)?);
        }
        match (&self.body, &cache.body) {
            (Body::PerTask { embeddings, bottoms }, BodyCache::PerTask { bottoms: caches }) => {
                for j in 0..n {
                    let dx = bottoms[j].backward(store, &caches[j], &dh[j])?;
                    embeddings[j].backward(store, &batch, &dx);
                }
            }
            (Body::Shared { embedding, experts, gates }, BodyCache::Shared { x, experts: outs, gates: gate_vals }) => {
                let mut dx = Matrix::zeros(x.rows(), x.cols());
                let mut d_experts: Vec<Matrix> = outs.iter().map(|(o, _)| Matrix::zeros(o.rows(), o.cols())).collect();
                if gates.is_empty() {
                    for d in &dh {
                        d_experts[0].add_assign(d)?;
                    }
                } else {
                    for j in 0..n {
                        let g = &gate_vals[j];
                        let k = g.cols();
                        let mut dgate = Matrix::zeros(g.rows(), k);
                        for b in 0..g.rows() {
                            let up = dh[j].row(b);
                            for e in 0..k {
                                let w = g.get(b, e);
                                let out = outs[e].0.row(b);
                                dgate.set(b, e, up.iter().zip(out).map(|(u, o)| u * o).sum());
                                for (de, u) in d_experts[e].row_mut(b).iter_mut().zip(up) {
                                    *de += w * u;
                                }
                            }
                            // softmax backward
                            let dot: f64 = (0..k).map(|e| g.get(b, e) * dgate.get(b, e)).sum();
                            for e in 0..k {
                                dgate.set(b, e, g.get(b, e) * (dgate.get(b, e) - dot));
                            }
                        }
                        dgate.matmul_tn_into(x, store.grad_mut(gates[j]))?;
                        dx.add_assign(&dgate.matmul(store.value(gates[j]))?)?;
                    }
                }
                for ((expert, (_, c)), d) in experts.iter().zip(outs).zip(&d_experts) {
                    dx.add_assign(&expert.backward(store, c, d)?)?;
                }
                embedding.backward(store, &batch, &dx);
            }
            _ => return Err(Error::State("forward cache does not match this model".into())),
        }
        Ok(())
    }

    /// Logits of every task for every sample, routed through the original
    /// path.
    pub fn predict(&self, batch: &FeatureBatch) -> Result<Matrix> {
        Ok(self.forward(batch, None)?.logits)
    }

    /// Serving score of one sample for the advertiser's target action.
    pub fn serve_score(&self, fields: &[u32], action: usize) -> Result<f64> {
        Ok(self.serve_batch(&FeatureBatch::new(fields, fields.len())?, &[action])?[0])
    }

    /// Serving scores for a batch, one target action per row.
    pub fn serve_batch(&self, batch: &FeatureBatch, actions: &[usize]) -> Result<Vec<f64>> {
        if actions.len() != batch.len() {
            return Err(Error::Dimension("one target action per sample required".into()));
        }
        if let Some(a) = actions.iter().find(|&&a| a >= self.config.n_tasks) {
            return Err(Error::Request(format!("unknown action {a}")));
        }
        let logits = self.predict(batch)?;
        Ok(actions.iter().enumerate().map(|(i, &a)| sigmoid(logits.get(i, a))).collect())
    }
}

fn mix(outs: &[Matrix], g: &Matrix) -> Matrix {
    let mut h = Matrix::zeros(outs[0].rows(), outs[0].cols());
    for (e, out) in outs.iter().enumerate() {
        for b in 0..h.rows() {
            let w = g.get(b, e);
            for (a, o) in h.row_mut(b).iter_mut().zip(out.row(b)) {
                *a += w * o;
            }
        }
    }
    h
}

fn set_column(m: &mut Matrix, j: usize, col: &Matrix) {
    for b in 0..m.rows() {
        m.set(b, j, col.get(b, 0));
    }
}
