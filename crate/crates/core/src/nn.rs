//! Layer toolkit: forward context, seeded parameter builder and basic layers.

use std::cell::RefCell;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use scd_autograd::{BatchStats, Conv2dSpec, Graph, ParamId, ParamStore, Tensor, Var};

use crate::error::{Result, ScdError};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch norm uses batch statistics and reports them for running updates.
    Train,
    /// Batch norm uses stored running statistics.
    Eval,
}

/// Pending running-statistics update from one training-mode batch norm.
#[derive(Clone, Debug)]
pub struct BnUpdate {
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub stats: BatchStats,
}

/// Everything a forward pass needs besides its inputs.
pub struct Ctx<'g, 's> {
    pub graph: &'g Graph,
    pub store: &'s ParamStore,
    pub mode: Mode,
    track_params: bool,
    bn_updates: RefCell<Vec<BnUpdate>>,
    trace: Option<RefCell<Trace>>,
}

impl<'g, 's> Ctx<'g, 's> {
    pub fn new(graph: &'g Graph, store: &'s ParamStore, mode: Mode) -> Self {
        Self {
            graph,
            store,
            mode,
            track_params: true,
            bn_updates: RefCell::new(Vec::new()),
            trace: None,
        }
    }

    /// Same as [`Ctx::new`] but records named intermediates into a [`Trace`].
    pub fn with_trace(graph: &'g Graph, store: &'s ParamStore, mode: Mode) -> Self {
        let mut ctx = Self::new(graph, store, mode);
        ctx.trace = Some(RefCell::new(Trace::default()));
        ctx
    }

    /// Eval-mode context that treats parameters as constants, so no backward
    /// closures are kept.
    pub fn inference(graph: &'g Graph, store: &'s ParamStore) -> Self {
        let mut ctx = Self::new(graph, store, Mode::Eval);
        ctx.track_params = false;
        ctx
    }

    pub fn param(&self, id: ParamId) -> Var<'g> {
        let value = self.store.get(id).clone();
        if self.track_params {
            self.graph.param(id, value)
        } else {
            self.graph.constant_arc(value)
        }
    }

    pub fn constant(&self, t: Tensor) -> Var<'g> {
        self.graph.constant(t)
    }

    pub fn record(&self, name: impl Into<String>, v: Var<'g>) {
        if let Some(trace) = &self.trace {
            trace.borrow_mut().push(name.into(), (*v.value()).clone());
        }
    }

    pub fn tracing(&self) -> bool {
        self.trace.is_some()
    }

    pub fn take_trace(&self) -> Trace {
        self.trace.as_ref().map(|t| t.take()).unwrap_or_default()
    }

    pub fn take_bn_updates(&self) -> Vec<BnUpdate> {
        self.bn_updates.take()
    }
}

/// Named intermediate tensors captured during a forward pass.
#[derive(Clone, Debug, Default)]
pub struct Trace {
    entries: Vec<(String, Tensor)>,
}

impl Trace {
    pub fn push(&mut self, name: String, t: Tensor) {
        self.entries.push((name, t));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Writes `<name>.bin` (little-endian f64) per entry plus `manifest.json`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| ScdError::io(dir, e))?;
        let mut manifest = Vec::new();
        for (name, t) in &self.entries {
            let file = format!("{}.bin", name.replace(['/', '\\'], "_"));
            let mut bytes = Vec::with_capacity(t.numel() * 8);
            for v in t.data() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
            let path = dir.join(&file);
            std::fs::write(&path, bytes).map_err(|e| ScdError::io(&path, e))?;
            manifest.push(serde_json::json!({
                "name": name,
                "file": file,
                "dtype": "f64-le",
                "shape": t.shape(),
            }));
        }
        let path = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(&serde_json::json!({ "arrays": manifest }))
            .expect("manifest serialises");
        std::fs::write(&path, text).map_err(|e| ScdError::io(&path, e))
    }

    /// Reads a directory written by [`Trace::write_dir`].
    pub fn read_dir(dir: &Path) -> Result<Self> {
        let path = dir.join("manifest.json");
        let text = std::fs::read_to_string(&path).map_err(|e| ScdError::io(&path, e))?;
        let manifest: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| ScdError::data(&path, e.to_string()))?;
        let mut trace = Trace::default();
        let arrays = manifest["arrays"]
            .as_array()
            .ok_or_else(|| ScdError::data(&path, "missing arrays"))?;
        for entry in arrays {
            let name = entry["name"].as_str().unwrap_or_default().to_string();
            let file = entry["file"].as_str().unwrap_or_default();
            let shape: Vec<usize> = entry["shape"]
                .as_array()
                .map(|a| a.iter().filter_map(|v| v.as_u64()).map(|v| v as usize).collect())
                .unwrap_or_default();
            let bin = dir.join(file);
            let bytes = std::fs::read(&bin).map_err(|e| ScdError::io(&bin, e))?;
            let data = bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            let t = Tensor::new(shape, data).map_err(|e| ScdError::data(&bin, e.to_string()))?;
            trace.push(name, t);
        }
        Ok(trace)
    }
}

/// Parameter initialisers.
#[derive(Clone, Debug)]
pub enum Init {
    Zeros,
    Const(f64),
    Uniform(f64),
    Normal(f64),
    Values(Vec<f64>),
}

/// Registers parameters under a dotted name prefix. Each parameter draws from
/// its own RNG seeded by `(seed, full name)`, so adding or removing a layer never
/// shifts the initial values of unrelated layers.
pub struct Builder<'a> {
    store: &'a mut ParamStore,
    prefix: String,
    seed: u64,
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

impl<'a> Builder<'a> {
    pub fn new(store: &'a mut ParamStore, seed: u64) -> Self {
        Self {
            store,
            prefix: String::new(),
            seed,
        }
    }

    pub fn sub(&mut self, name: &str) -> Builder<'_> {
        let prefix = self.full(name);
        Builder {
            store: self.store,
            prefix,
            seed: self.seed,
        }
    }

    pub fn prefix(&self) -> &str {
        &self.prefix
    }

    fn full(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{}", self.prefix, name)
        }
    }

    /// The RNG a parameter called `name` (relative to this prefix) draws from.
    pub fn rng(&self, name: &str) -> ChaCha8Rng {
        Self::rng_for(self.seed, &self.full(name))
    }

    fn rng_for(seed: u64, full: &str) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed ^ fnv1a(full.as_bytes()))
    }

    fn tensor(&self, name: &str, shape: &[usize], init: &Init) -> Tensor {
        let mut rng = Self::rng_for(self.seed, name);
        let n: usize = shape.iter().product();
        let data: Vec<f64> = match init {
            Init::Zeros => vec![0.0; n],
            Init::Const(v) => vec![*v; n],
            Init::Uniform(bound) => (0..n).map(|_| rng.random_range(-bound..=*bound)).collect(),
            Init::Normal(std) => (0..n)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    z * std
                })
                .collect(),
            Init::Values(v) => {
                assert_eq!(v.len(), n, "init values for {name}");
                v.clone()
            }
        };
        Tensor::new(shape.to_vec(), data).expect("shape product")
    }

    pub fn param(&mut self, name: &str, shape: &[usize], init: Init) -> ParamId {
        let full = self.full(name);
        let t = self.tensor(&full, shape, &init);
        self.store.add(full, t)
    }

    pub fn buffer(&mut self, name: &str, shape: &[usize], init: Init) -> ParamId {
        let full = self.full(name);
        let t = self.tensor(&full, shape, &init);
        self.store.add_buffer(full, t)
    }
}

/// Fan-in scaled uniform bound giving unit-variance preserving linear maps.
pub fn fan_in_bound(fan_in: usize) -> f64 {
    (3.0 / fan_in as f64).sqrt()
}

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub spec: Conv2dSpec,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        b: &mut Builder<'_>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        bias: bool,
    ) -> Self {
        let mut sub = b.sub(name);
        let fan_in = in_channels * kernel * kernel;
        let weight = sub.param(
            "weight",
            &[out_channels, in_channels, kernel, kernel],
            Init::Uniform(fan_in_bound(fan_in)),
        );
        let bias = bias.then(|| sub.param("bias", &[out_channels], Init::Zeros));
        Self {
            weight,
            bias,
            spec: Conv2dSpec::new(stride, padding),
            in_channels,
            out_channels,
            kernel,
        }
    }

    /// Same-size convolution (odd kernel, stride 1).
    pub fn same(b: &mut Builder<'_>, name: &str, cin: usize, cout: usize, k: usize, bias: bool) -> Self {
        Self::new(b, name, cin, cout, k, 1, k / 2, bias)
    }

    pub fn forward<'g>(&self, ctx: &Ctx<'g, '_>, x: Var<'g>) -> Var<'g> {
        x.conv2d(
            ctx.param(self.weight),
            self.bias.map(|b| ctx.param(b)),
            self.spec,
        )
    }
}

/// Channel-mixing projection on `(B, C, ...)` tensors.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_features: usize,
    pub out_features: usize,
}

impl Linear {
    pub fn new(b: &mut Builder<'_>, name: &str, cin: usize, cout: usize, bias: bool) -> Self {
        Self::with_init(b, name, cin, cout, bias, Init::Uniform(fan_in_bound(cin)))
    }

    pub fn with_init(
        b: &mut Builder<'_>,
        name: &str,
        cin: usize,
        cout: usize,
        bias: bool,
        init: Init,
    ) -> Self {
        let mut sub = b.sub(name);
        let weight = sub.param("weight", &[cout, cin], init);
        let bias = bias.then(|| sub.param("bias", &[cout], Init::Zeros));
        Self {
            weight,
            bias,
            in_features: cin,
            out_features: cout,
        }
    }

    pub fn forward<'g>(&self, ctx: &Ctx<'g, '_>, x: Var<'g>) -> Var<'g> {
        x.linear(ctx.param(self.weight), self.bias.map(|b| ctx.param(b)))
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new(b: &mut Builder<'_>, name: &str, channels: usize) -> Self {
        let mut sub = b.sub(name);
        Self {
            gamma: sub.param("gamma", &[channels], Init::Const(1.0)),
            beta: sub.param("beta", &[channels], Init::Zeros),
            eps: 1e-5,
        }
    }

    pub fn forward<'g>(&self, ctx: &Ctx<'g, '_>, x: Var<'g>) -> Var<'g> {
        x.layer_norm_channels(ctx.param(self.gamma), ctx.param(self.beta), self.eps)
    }
}

#[derive(Clone, Debug)]
pub struct BatchNorm2d {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub channels: usize,
    pub eps: f64,
}

/// Weight of the newest batch in running-statistics updates.
pub const BN_MOMENTUM: f64 = 0.1;

impl BatchNorm2d {
    pub fn new(b: &mut Builder<'_>, name: &str, channels: usize) -> Self {
        let mut sub = b.sub(name);
        Self {
            gamma: sub.param("gamma", &[channels], Init::Const(1.0)),
            beta: sub.param("beta", &[channels], Init::Zeros),
            running_mean: sub.buffer("running_mean", &[channels], Init::Zeros),
            running_var: sub.buffer("running_var", &[channels], Init::Const(1.0)),
            channels,
            eps: 1e-5,
        }
    }

    pub fn forward<'g>(&self, ctx: &Ctx<'g, '_>, x: Var<'g>) -> Var<'g> {
        let gamma = ctx.param(self.gamma);
        let beta = ctx.param(self.beta);
        match ctx.mode {
            Mode::Train => {
                let (y, stats) = x.batch_norm_train(gamma, beta, self.eps);
                ctx.bn_updates.borrow_mut().push(BnUpdate {
                    running_mean: self.running_mean,
                    running_var: self.running_var,
                    stats,
                });
                y
            }
            Mode::Eval => {
                let rank = x.shape().len();
                let mut bshape = vec![1; rank];
                bshape[1] = self.channels;
                let mean = ctx.store.get(self.running_mean);
                let var = ctx.store.get(self.running_var);
                let inv: Vec<f64> = var.data().iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();
                let inv = ctx.constant(Tensor::new(bshape.clone(), inv).expect("channels"));
                let mean = ctx.constant(
                    Tensor::new(bshape.clone(), mean.data().to_vec()).expect("channels"),
                );
                let g = gamma.reshape(bshape.clone());
                let bt = beta.reshape(bshape);
                x.sub(mean).mul(inv).mul(g).add(bt)
            }
        }
    }
}

/// Folds batch statistics into running buffers (unbiased variance).
pub fn apply_bn_updates(store: &mut ParamStore, updates: &[BnUpdate]) {
    for u in updates {
        let n = u.stats.count as f64;
        let correction = if n > 1.0 { n / (n - 1.0) } else { 1.0 };
        {
            let rm = store.data_mut(u.running_mean);
            for (r, m) in rm.iter_mut().zip(&u.stats.mean) {
                *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * m;
            }
        }
        let rv = store.data_mut(u.running_var);
        for (r, v) in rv.iter_mut().zip(&u.stats.var) {
            *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * v * correction;
        }
    }
}
