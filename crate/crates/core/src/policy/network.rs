//! Temporal CNN encoder, gated transformer with relative attention over a
//! memory of past policy states, and the action and value heads.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::environment::{InputLayout, WellIdTable};
use crate::error::{arg, Error, Result};
use crate::nn::{read_checkpoint, save_checkpoint, Graph, Init, ParamStore, Var};
use crate::rng::rng_for;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadKind {
    /// Per-well embedding rows shared across assets.
    Embedding,
    /// Dense map to a fixed well count (one asset).
    Dense,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyConfig {
    pub n_d: usize,
    pub input_width: usize,
    pub n_m: usize,
    pub conv_filters: usize,
    pub conv_width: usize,
    pub heads: usize,
    pub layers: usize,
    pub tau: usize,
    pub mlp_hidden: usize,
    pub value_hidden: usize,
    pub head: HeadKind,
    pub n_wells: usize,
    /// Initial offset of the update-gate pre-activation (subtracted).
    pub gate_bias: f64,
    pub log_std_min: f64,
    pub log_std_max: f64,
}

impl PolicyConfig {
    fn base(layout: &InputLayout, wells: &WellIdTable, head: HeadKind, mlp_hidden: usize) -> Self {
        Self {
            n_d: layout.n_d,
            input_width: layout.width,
            n_m: 128,
            conv_filters: 64,
            conv_width: 3,
            heads: 4,
            layers: 2,
            tau: 5,
            mlp_hidden,
            value_hidden: 64,
            head,
            n_wells: wells.n_total(),
            gate_bias: 2.0,
            log_std_min: -5.0,
            log_std_max: 1.0,
        }
    }

    /// Multi-asset policy with embedding heads and a 128-unit MLP.
    pub fn global(layout: &InputLayout, wells: &WellIdTable) -> Self {
        Self::base(layout, wells, HeadKind::Embedding, 128)
    }

    /// Single-asset policy with a dense head and a 64-unit MLP.
    pub fn individual(layout: &InputLayout, wells: &WellIdTable) -> Self {
        Self::base(layout, wells, HeadKind::Dense, 64)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.n_m.is_multiple_of(self.heads) || self.heads == 0 {
            return arg(format!(
                "n_m {} not divisible by {} heads",
                self.n_m, self.heads
            ));
        }
        if self.conv_width.is_multiple_of(2) {
            return arg("conv_width must be odd");
        }
        if self.layers == 0 || self.n_d == 0 || self.input_width == 0 || self.n_wells == 0 {
            return arg("layers, n_d, input width and well count must be >= 1");
        }
        if self.log_std_min >= self.log_std_max {
            return arg("log_std_min must be < log_std_max");
        }
        Ok(())
    }

    /// Closed-form parameter count of the architecture.
    pub fn parameter_count(&self) -> usize {
        let (m, f, c) = (self.n_m, self.conv_filters, self.conv_width);
        let encoder = (c * self.input_width * f + f) + (c * f * f + f) + (f * m + m);
        let attention = 2 * m + 5 * m * m + 2 * m;
        let gate = 6 * m * m + m;
        let mlp = 2 * m + (m * self.mlp_hidden + self.mlp_hidden) + (self.mlp_hidden * m + m);
        let layer = attention + 2 * gate + mlp;
        let head = match self.head {
            HeadKind::Embedding => 2 * self.n_wells * m,
            HeadKind::Dense => m * 2 * self.n_wells + 2 * self.n_wells,
        };
        let value = m * self.value_hidden + self.value_hidden + self.value_hidden + 1;
        encoder + self.layers * layer + head + value
    }
}

/// Everything needed to rebuild a policy from a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub config: PolicyConfig,
    pub wells: WellIdTable,
    pub layout: InputLayout,
}

#[derive(Clone)]
pub struct Policy {
    pub arch: Architecture,
    pub store: ParamStore,
    rel_encoding: Vec<f64>,
}

/// Inputs for a batch of `B` decision points.
#[derive(Debug, Clone, Copy)]
pub struct BatchInput<'a> {
    /// `B × n_d × width`, row-major.
    pub obs: &'a [f64],
    /// `B × tau × n_m`; valid states are right-aligned (newest last).
    pub memory: &'a [f64],
    /// Valid memory slots per sample.
    pub memory_len: &'a [usize],
    /// Asset index per sample.
    pub assets: &'a [usize],
}

impl BatchInput<'_> {
    pub fn batch(&self) -> usize {
        self.assets.len()
    }
}

/// Graph handles produced by one forward pass. Action entries are flattened
/// over (sample, well) pairs; `seg[p]` is the sample of pair `p`.
pub struct Forward {
    pub eta: Var,
    pub mu: Var,
    pub log_std: Var,
    pub value: Var,
    pub seg: Vec<usize>,
    pub batch: usize,
}

/// Forward-only outputs for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Inference {
    pub mu: Vec<f64>,
    pub log_std: Vec<f64>,
    pub value: f64,
    /// Policy state to push into the sample's memory.
    pub state: Vec<f64>,
}

const MASKED: f64 = -1e30;

fn sinusoid(slots: usize, d: usize) -> Vec<f64> {
    let mut out = vec![0.0; slots * d];
    for s in 0..slots {
        // Slot s sits (slots - 1 - s) steps before the current token.
        let dist = (slots - 1 - s) as f64;
        for i in 0..d / 2 {
            let freq = 1.0 / 10000f64.powf(2.0 * i as f64 / d as f64);
            out[s * d + 2 * i] = (dist * freq).sin();
            out[s * d + 2 * i + 1] = (dist * freq).cos();
        }
    }
    out
}

impl Policy {
    pub fn new(
        config: PolicyConfig,
        wells: WellIdTable,
        layout: InputLayout,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        if layout.width != config.input_width || layout.n_d != config.n_d {
            return arg("policy config does not match the input layout");
        }
        if wells.blocks.len() != layout.blocks.len() {
            return arg("well table and layout disagree on the asset count");
        }
        if config.head == HeadKind::Dense && wells.blocks.len() != 1 {
            return arg("a dense action head serves exactly one asset");
        }
        let mut rng = rng_for(seed, &[0x9071C7]);
        let mut s = ParamStore::new();
        let (m, f, c, w) = (
            config.n_m,
            config.conv_filters,
            config.conv_width,
            config.input_width,
        );
        let orth = Init::Orthogonal(1.0);
        s.add("enc.conv1.w", &[c * w, f], orth, &mut rng)?;
        s.add("enc.conv1.b", &[f], Init::Zeros, &mut rng)?;
        s.add("enc.conv2.w", &[c * f, f], orth, &mut rng)?;
        s.add("enc.conv2.b", &[f], Init::Zeros, &mut rng)?;
        s.add("enc.out.w", &[f, m], orth, &mut rng)?;
        s.add("enc.out.b", &[m], Init::Zeros, &mut rng)?;
        for l in 0..config.layers {
            let p = |n: &str| format!("tr{l}.{n}");
            s.add(&p("ln1.g"), &[m], Init::Constant(1.0), &mut rng)?;
            s.add(&p("ln1.b"), &[m], Init::Zeros, &mut rng)?;
            for n in ["wq", "wk", "wv", "wo", "wr"] {
                s.add(&p(n), &[m, m], orth, &mut rng)?;
            }
            s.add(&p("u"), &[m], Init::Zeros, &mut rng)?;
            s.add(&p("v"), &[m], Init::Zeros, &mut rng)?;
            for gate in ["gate1", "gate2"] {
                for n in ["wr", "ur", "wz", "uz", "wg", "ug"] {
                    s.add(&p(&format!("{gate}.{n}")), &[m, m], orth, &mut rng)?;
                }
                s.add(
                    &p(&format!("{gate}.bz")),
                    &[m],
                    Init::Constant(-config.gate_bias),
                    &mut rng,
                )?;
            }
            s.add(&p("ln2.g"), &[m], Init::Constant(1.0), &mut rng)?;
            s.add(&p("ln2.b"), &[m], Init::Zeros, &mut rng)?;
            s.add(&p("mlp1.w"), &[m, config.mlp_hidden], orth, &mut rng)?;
            s.add(&p("mlp1.b"), &[config.mlp_hidden], Init::Zeros, &mut rng)?;
            s.add(&p("mlp2.w"), &[config.mlp_hidden, m], orth, &mut rng)?;
            s.add(&p("mlp2.b"), &[m], Init::Zeros, &mut rng)?;
        }
        match config.head {
            HeadKind::Embedding => {
                let std = (1.0 / m as f64).sqrt();
                s.add("head.mu", &[config.n_wells, m], Init::Normal(std), &mut rng)?;
                s.add(
                    "head.log_std",
                    &[config.n_wells, m],
                    Init::Normal(std),
                    &mut rng,
                )?;
            }
            HeadKind::Dense => {
                s.add(
                    "head.w",
                    &[m, 2 * config.n_wells],
                    Init::Orthogonal(0.01),
                    &mut rng,
                )?;
                s.add("head.b", &[2 * config.n_wells], Init::Zeros, &mut rng)?;
            }
        }
        s.add("value.w1", &[m, config.value_hidden], orth, &mut rng)?;
        s.add("value.b1", &[config.value_hidden], Init::Zeros, &mut rng)?;
        s.add(
            "value.w2",
            &[config.value_hidden, 1],
            Init::Orthogonal(1.0),
            &mut rng,
        )?;
        s.add("value.b2", &[1], Init::Zeros, &mut rng)?;
        debug_assert_eq!(s.count(), config.parameter_count());
        let rel_encoding = sinusoid(config.tau + 1, m);
        Ok(Self {
            arch: Architecture {
                config,
                wells,
                layout,
            },
            store: s,
            rel_encoding,
        })
    }

    pub fn config(&self) -> &PolicyConfig {
        &self.arch.config
    }

    pub fn parameter_count(&self) -> usize {
        self.store.count()
    }

    /// Number of actions for an asset.
    pub fn n_actions(&self, asset: usize) -> usize {
        self.arch.wells.blocks[asset].len()
    }

    pub fn save(&self, stem: &Path, step: u64, seed: u64) -> Result<()> {
        save_checkpoint(
            &self.store,
            stem,
            step,
            seed,
            serde_json::to_value(&self.arch)?,
        )
    }

    pub fn load(stem: &Path) -> Result<(Self, u64)> {
        let (manifest, archive) = read_checkpoint(stem)?;
        let arch: Architecture =
            serde_json::from_value(manifest.architecture).map_err(|e| Error::Load {
                path: stem.to_path_buf(),
                message: format!("architecture manifest: {e}"),
            })?;
        let mut p = Self::new(arch.config, arch.wells, arch.layout, 0)?;
        p.store.load_archive(&archive).map_err(|e| Error::Load {
            path: stem.to_path_buf(),
            message: e.to_string(),
        })?;
        Ok((p, manifest.step))
    }

    /// Temporal CNN: `[B, n_d, width]` to `ξ[B, n_m]`.
    pub fn encode(&self, g: &mut Graph, obs: &[f64], batch: usize) -> Result<Var> {
        let c = self.config();
        if obs.len() != batch * c.n_d * c.input_width {
            return arg(format!(
                "input of {} values is not {batch} x {} x {}",
                obs.len(),
                c.n_d,
                c.input_width
            ));
        }
        let x = g.input(&[batch, c.n_d, c.input_width], obs.to_vec())?;
        let (w1, b1) = (
            g.param_by_name("enc.conv1.w")?,
            g.param_by_name("enc.conv1.b")?,
        );
        let h = g.conv1d(x, w1, b1, c.conv_width)?;
        let h = g.relu(h);
        let (w2, b2) = (
            g.param_by_name("enc.conv2.w")?,
            g.param_by_name("enc.conv2.b")?,
        );
        let h = g.conv1d(h, w2, b2, c.conv_width)?;
        let h = g.relu(h);
        let pooled = g.mean_pool_time(h)?;
        let (wo, bo) = (g.param_by_name("enc.out.w")?, g.param_by_name("enc.out.b")?);
        g.linear(pooled, wo, bo)
    }

    fn gate(&self, g: &mut Graph, prefix: &str, x: Var, y: Var) -> Result<Var> {
        let mut p = |n: &str| g.param_by_name(&format!("{prefix}.{n}"));
        let (wr, ur, wz, uz, wg, ug, bz) = (
            p("wr")?,
            p("ur")?,
            p("wz")?,
            p("uz")?,
            p("wg")?,
            p("ug")?,
            p("bz")?,
        );
        let a = g.matmul(y, wr)?;
        let b = g.matmul(x, ur)?;
        let r = g.add(a, b)?;
        let r = g.sigmoid(r);
        let a = g.matmul(y, wz)?;
        let b = g.matmul(x, uz)?;
        let z = g.add(a, b)?;
        let z = g.add_bias(z, bz)?;
        let z = g.sigmoid(z);
        let rx = g.mul(r, x)?;
        let a = g.matmul(y, wg)?;
        let b = g.matmul(rx, ug)?;
        let h = g.add(a, b)?;
        let h = g.tanh(h);
        let d = g.sub(h, x)?;
        let zd = g.mul(z, d)?;
        g.add(x, zd)
    }

    /// Gated transformer over `[memory | ξ]`; returns `η[B, n_m]`.
    pub fn transform(
        &self,
        g: &mut Graph,
        xi: Var,
        memory: &[f64],
        memory_len: &[usize],
    ) -> Result<Var> {
        let c = self.config();
        let (m, tau) = (c.n_m, c.tau);
        let batch = memory_len.len();
        if memory.len() != batch * tau * m || memory_len.iter().any(|&l| l > tau) {
            return arg(format!(
                "memory of {} values for batch {batch}, tau {tau}, width {m}",
                memory.len()
            ));
        }
        let mut mask = vec![0.0; batch * (tau + 1)];
        for (b, &len) in memory_len.iter().enumerate() {
            for s in 0..tau - len {
                mask[b * (tau + 1) + s] = MASKED;
            }
        }
        let mem = g.input(&[batch, tau, m], memory.to_vec())?;
        let rel = g.input(&[tau + 1, m], self.rel_encoding.clone())?;
        let mut x = xi;
        for l in 0..c.layers {
            let mut p = |n: &str| g.param_by_name(&format!("tr{l}.{n}"));
            let (g1, b1, wq, wk, wv, wo, wr, u, v) = (
                p("ln1.g")?,
                p("ln1.b")?,
                p("wq")?,
                p("wk")?,
                p("wv")?,
                p("wo")?,
                p("wr")?,
                p("u")?,
                p("v")?,
            );
            let (g2, b2, w1, c1, w2, c2) = (
                p("ln2.g")?,
                p("ln2.b")?,
                p("mlp1.w")?,
                p("mlp1.b")?,
                p("mlp2.w")?,
                p("mlp2.b")?,
            );
            let tokens = g.append_token(mem, x)?;
            let tokens = g.layer_norm(tokens, g1, b1)?;
            let xq = g.layer_norm(x, g1, b1)?;
            let q = g.matmul(xq, wq)?;
            let k = g.matmul(tokens, wk)?;
            let vv = g.matmul(tokens, wv)?;
            let r = g.matmul(rel, wr)?;
            let att = g.rel_attention(q, k, vv, r, u, v, &mask, c.heads)?;
            let a = g.matmul(att, wo)?;
            let a = g.relu(a);
            x = self.gate(g, &format!("tr{l}.gate1"), x, a)?;
            let y = g.layer_norm(x, g2, b2)?;
            let h = g.linear(y, w1, c1)?;
            let h = g.relu(h);
            let h = g.linear(h, w2, c2)?;
            let h = g.relu(h);
            x = self.gate(g, &format!("tr{l}.gate2"), x, h)?;
        }
        Ok(x)
    }

    /// Action mean and clamped log-std per (sample, well) pair.
    pub fn action_head(
        &self,
        g: &mut Graph,
        eta: Var,
        assets: &[usize],
    ) -> Result<(Var, Var, Vec<usize>)> {
        let c = self.config();
        let batch = assets.len();
        if let Some(&a) = assets.iter().find(|&&a| a >= self.arch.wells.blocks.len()) {
            return arg(format!("asset index {a} outside the well table"));
        }
        let (mu, ls, seg) = match c.head {
            HeadKind::Embedding => {
                let mut rows = Vec::new();
                let mut seg = Vec::new();
                for (b, &a) in assets.iter().enumerate() {
                    for r in self.arch.wells.rows(a) {
                        rows.push(r);
                        seg.push(b);
                    }
                }
                let (wm, ws) = (
                    g.param_by_name("head.mu")?,
                    g.param_by_name("head.log_std")?,
                );
                let ctx = g.gather_rows(eta, &seg)?;
                let em = g.gather_rows(wm, &rows)?;
                let es = g.gather_rows(ws, &rows)?;
                (g.row_dot(em, ctx)?, g.row_dot(es, ctx)?, seg)
            }
            HeadKind::Dense => {
                let nw = c.n_wells;
                let (w, b) = (g.param_by_name("head.w")?, g.param_by_name("head.b")?);
                let out = g.linear(eta, w, b)?;
                let mu = g.slice_cols(out, 0, nw)?;
                let ls = g.slice_cols(out, nw, nw)?;
                let mu = g.reshape(mu, &[batch * nw])?;
                let ls = g.reshape(ls, &[batch * nw])?;
                let seg = (0..batch)
                    .flat_map(|b| std::iter::repeat_n(b, nw))
                    .collect();
                (mu, ls, seg)
            }
        };
        let ls = g.clamp(ls, c.log_std_min, c.log_std_max);
        Ok((mu, ls, seg))
    }

    pub fn value_head(&self, g: &mut Graph, eta: Var) -> Result<Var> {
        let batch = g.shape(eta)[0];
        let (w1, b1, w2, b2) = (
            g.param_by_name("value.w1")?,
            g.param_by_name("value.b1")?,
            g.param_by_name("value.w2")?,
            g.param_by_name("value.b2")?,
        );
        let h = g.linear(eta, w1, b1)?;
        let h = g.relu(h);
        let v = g.linear(h, w2, b2)?;
        g.reshape(v, &[batch])
    }

    pub fn forward(&self, g: &mut Graph, input: &BatchInput) -> Result<Forward> {
        let batch = input.batch();
        if input.memory_len.len() != batch {
            return arg("memory_len and assets lengths differ");
        }
        let xi = self.encode(g, input.obs, batch)?;
        let eta = self.transform(g, xi, input.memory, input.memory_len)?;
        let (mu, log_std, seg) = self.action_head(g, eta, input.assets)?;
        let value = self.value_head(g, eta)?;
        Ok(Forward {
            eta,
            mu,
            log_std,
            value,
            seg,
            batch,
        })
    }

    /// Evaluates a batch without keeping the graph.
    pub fn infer(&self, input: &BatchInput) -> Result<Vec<Inference>> {
        let mut g = Graph::new(&self.store);
        let f = self.forward(&mut g, input)?;
        let m = self.config().n_m;
        let (mu, ls, v, eta) = (
            g.value(f.mu),
            g.value(f.log_std),
            g.value(f.value),
            g.value(f.eta),
        );
        let mut out: Vec<Inference> = (0..f.batch)
            .map(|b| Inference {
                mu: Vec::new(),
                log_std: Vec::new(),
                value: v[b],
                state: eta[b * m..(b + 1) * m].to_vec(),
            })
            .collect();
        for (p, &b) in f.seg.iter().enumerate() {
            out[b].mu.push(mu[p]);
            out[b].log_std.push(ls[p]);
        }
        Ok(out)
    }
}
