//! Graph CNN architectures built from Chebyshev convolutions: a plain
//! stack, residual blocks, inception blocks and densely connected layers.
//!
//! Every model ends with a node-to-graph readout, dropout, a
//! fully-connected layer and a softmax.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::GraphBatch;
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::sparse::CsrMatrix;
use crate::spectral::{cheb_conv, uniform_tensor, ChebConvParams};
use crate::tensor::{BatchNormState, Mode, ParamId, ParamStore, Tape, Tensor, Var};

pub const DEFAULT_K: usize = 6;
pub const DEFAULT_DROPOUT: f64 = 0.5;
/// Receptive fields of the four inception tributaries.
pub const INCEPTION_KS: [usize; 4] = [3, 6, 9, 6];
/// Receptive field of the convolution following each inception block.
pub const INCEPTION_TRAILING_K: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    Plain,
    Resnet,
    Inception,
    Densenet,
}

impl Architecture {
    pub const ALL: [Architecture; 4] = [
        Architecture::Plain,
        Architecture::Resnet,
        Architecture::Inception,
        Architecture::Densenet,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Architecture::Plain => "plain",
            Architecture::Resnet => "resnet",
            Architecture::Inception => "inception",
            Architecture::Densenet => "densenet",
        }
    }

    /// Admissible convolution-layer counts.
    pub fn depth_presets(self) -> &'static [usize] {
        match self {
            Architecture::Plain => &[6],
            Architecture::Resnet | Architecture::Inception => &[3, 6, 9, 12],
            Architecture::Densenet => &[4, 6, 8, 10],
        }
    }

    pub fn default_depth(self) -> usize {
        6
    }
}

impl std::str::FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Architecture::ALL
            .into_iter()
            .find(|a| a.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                Error::config(format!(
                    "unknown architecture {s:?} (expected plain, resnet, inception or densenet)"
                ))
            })
    }
}

impl std::fmt::Display for Architecture {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Readout {
    #[default]
    Mean,
    Sum,
}

/// What the residual projection `Θ_s` multiplies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shortcut {
    /// `T_K(L̃) X`, the highest-order basis term of the block's first
    /// convolution.
    #[default]
    ChebOrderK,
    /// The raw block input `X`.
    Input,
}

/// Output width of each inception tributary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InceptionWidth {
    /// Each tributary outputs the block width; the concat is 4x wider.
    #[default]
    Full,
    /// Each tributary outputs a quarter of the block width.
    Quarter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub architecture: Architecture,
    /// Number of convolution layers.
    pub depth: usize,
    /// Receptive field `K` of every convolution (inception tributaries use
    /// their own fixed values).
    pub k: usize,
    /// Width override. Plain and densenet: one width per convolution layer.
    /// Resnet and inception: one width per block.
    pub channel_plan: Option<Vec<usize>>,
    pub num_classes: usize,
    pub dropout: f64,
    pub seed: u64,
    #[serde(default)]
    pub readout: Readout,
    #[serde(default)]
    pub shortcut: Shortcut,
    #[serde(default)]
    pub inception_width: InceptionWidth,
}

impl ModelSpec {
    pub fn new(architecture: Architecture, num_classes: usize) -> Self {
        Self {
            architecture,
            depth: architecture.default_depth(),
            k: DEFAULT_K,
            channel_plan: None,
            num_classes,
            dropout: DEFAULT_DROPOUT,
            seed: 0,
            readout: Readout::Mean,
            shortcut: Shortcut::ChebOrderK,
            inception_width: InceptionWidth::Full,
        }
    }

    pub fn with_depth(mut self, depth: usize) -> Self {
        self.depth = depth;
        self
    }

    pub fn with_k(mut self, k: usize) -> Self {
        self.k = k;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let arch = self.architecture;
        if !arch.depth_presets().contains(&self.depth) {
            return Err(Error::config(format!(
                "{arch} supports depths {:?}, got {}",
                arch.depth_presets(),
                self.depth
            )));
        }
        if self.num_classes < 2 {
            return Err(Error::config(format!(
                "need at least 2 classes, got {}",
                self.num_classes
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config(format!(
                "dropout rate {} outside [0, 1)",
                self.dropout
            )));
        }
        let plan = self.widths();
        if plan.len() != self.plan_len() {
            return Err(Error::config(format!(
                "{arch} of depth {} needs {} channel widths, got {}",
                self.depth,
                self.plan_len(),
                plan.len()
            )));
        }
        if plan.contains(&0) {
            return Err(Error::config("channel widths must be positive"));
        }
        if arch == Architecture::Inception && self.inception_width == InceptionWidth::Quarter {
            if let Some(w) = plan.iter().find(|w| *w % 4 != 0) {
                return Err(Error::config(format!(
                    "quarter-width inception needs widths divisible by 4, got {w}"
                )));
            }
        }
        Ok(())
    }

    fn plan_len(&self) -> usize {
        match self.architecture {
            Architecture::Plain | Architecture::Densenet => self.depth,
            Architecture::Resnet | Architecture::Inception => self.depth / 3,
        }
    }

    /// Effective channel plan.
    pub fn widths(&self) -> Vec<usize> {
        if let Some(p) = &self.channel_plan {
            return p.clone();
        }
        let n = self.plan_len();
        match self.architecture {
            Architecture::Plain | Architecture::Densenet => {
                (0..n).map(|i| if i < n / 2 { 32 } else { 64 }).collect()
            }
            Architecture::Resnet | Architecture::Inception => {
                (0..n).map(|i| if i == 0 { 32 } else { 64 }).collect()
            }
        }
    }
}

/// Convolution followed by batch norm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvUnit {
    pub conv: ChebConvParams,
    pub gamma: ParamId,
    pub beta: ParamId,
    /// Index into the model's batch-norm states.
    pub bn: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Block {
    /// `ReLU(BN(conv(X)))`.
    Conv(ConvUnit),
    /// Three convolutions on the main path plus a projected shortcut added
    /// before the last ReLU.
    Residual {
        units: [ConvUnit; 3],
        shortcut: ParamId,
    },
    /// Concatenated tributaries followed by one more convolution.
    Inception {
        tributaries: Vec<Vec<ConvUnit>>,
        trailing: ConvUnit,
    },
    /// Layer `l` sees the concatenation of the block input and all
    /// previous layer outputs; the block emits the last layer's output.
    Dense { units: Vec<ConvUnit> },
}

#[derive(Debug, Clone)]
pub struct Model<T> {
    spec: ModelSpec,
    input_dim: usize,
    store: ParamStore<T>,
    blocks: Vec<Block>,
    bn: Vec<BatchNormState<T>>,
    fc_weight: ParamId,
    fc_bias: ParamId,
    embedding_dim: usize,
}

struct Builder<'a, T> {
    store: ParamStore<T>,
    bn: Vec<BatchNormState<T>>,
    rng: &'a mut ChaCha8Rng,
}

impl<T: Real> Builder<'_, T> {
    fn unit(&mut self, name: &str, k: usize, d_in: usize, d_out: usize) -> Result<ConvUnit> {
        let conv = ChebConvParams::init(&mut self.store, name, k, d_in, d_out, true, self.rng)?;
        let gamma = self
            .store
            .add(format!("{name}.bn.gamma"), Tensor::ones(1, d_out));
        let beta = self
            .store
            .add(format!("{name}.bn.beta"), Tensor::zeros(1, d_out));
        self.bn.push(BatchNormState::new(d_out));
        Ok(ConvUnit {
            conv,
            gamma,
            beta,
            bn: self.bn.len() - 1,
        })
    }
}

/// Builds the model described by `spec` for `input_dim` node features.
pub fn build_model<T: Real>(spec: &ModelSpec, input_dim: usize) -> Result<Model<T>> {
    spec.validate()?;
    if input_dim == 0 {
        return Err(Error::config("input feature width must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut b = Builder {
        store: ParamStore::new(),
        bn: Vec::new(),
        rng: &mut rng,
    };
    let widths = spec.widths();
    let k = spec.k;
    let mut blocks = Vec::new();
    let mut d = input_dim;
    match spec.architecture {
        Architecture::Plain => {
            for (l, &w) in widths.iter().enumerate() {
                blocks.push(Block::Conv(b.unit(&format!("conv{l}"), k, d, w)?));
                d = w;
            }
        }
        Architecture::Resnet => {
            for (i, &w) in widths.iter().enumerate() {
                let name = format!("res{i}");
                let units = [
                    b.unit(&format!("{name}.conv0"), k, d, w)?,
                    b.unit(&format!("{name}.conv1"), k, w, w)?,
                    b.unit(&format!("{name}.conv2"), k, w, w)?,
                ];
                let limit = (6.0 / (d + w) as f64).sqrt();
                let theta_s = uniform_tensor(d, w, limit, b.rng);
                let shortcut = b.store.add(format!("{name}.shortcut"), theta_s);
                blocks.push(Block::Residual { units, shortcut });
                d = w;
            }
        }
        Architecture::Inception => {
            for (i, &w) in widths.iter().enumerate() {
                let name = format!("inc{i}");
                let tw = match spec.inception_width {
                    InceptionWidth::Full => w,
                    InceptionWidth::Quarter => w / 4,
                };
                let mut tributaries = Vec::new();
                for (t, &kt) in INCEPTION_KS.iter().enumerate() {
                    let convs = if t < 3 { 2 } else { 1 };
                    let mut units = Vec::new();
                    let mut din = d;
                    for c in 0..convs {
                        units.push(b.unit(&format!("{name}.t{t}.conv{c}"), kt, din, tw)?);
                        din = tw;
                    }
                    tributaries.push(units);
                }
                let trailing =
                    b.unit(&format!("{name}.trailing"), INCEPTION_TRAILING_K, 4 * tw, w)?;
                blocks.push(Block::Inception {
                    tributaries,
                    trailing,
                });
                d = w;
            }
        }
        Architecture::Densenet => {
            let mut units = Vec::new();
            let mut din = d;
            for (l, &w) in widths.iter().enumerate() {
                units.push(b.unit(&format!("dense{l}"), k, din, w)?);
                din += w;
            }
            d = *widths.last().expect("validated plan");
            blocks.push(Block::Dense { units });
        }
    }
    let limit = (6.0 / (d + spec.num_classes) as f64).sqrt();
    let fc = uniform_tensor(d, spec.num_classes, limit, b.rng);
    let fc_weight = b.store.add("fc.weight", fc);
    let fc_bias = b.store.add("fc.bias", Tensor::zeros(1, spec.num_classes));
    Ok(Model {
        spec: spec.clone(),
        input_dim,
        store: b.store,
        blocks,
        bn: b.bn,
        fc_weight,
        fc_bias,
        embedding_dim: d,
    })
}

pub fn build_plain<T: Real>(spec: &ModelSpec, input_dim: usize) -> Result<Model<T>> {
    expect_arch(spec, Architecture::Plain)?;
    build_model(spec, input_dim)
}

pub fn build_resnet<T: Real>(spec: &ModelSpec, input_dim: usize) -> Result<Model<T>> {
    expect_arch(spec, Architecture::Resnet)?;
    build_model(spec, input_dim)
}

pub fn build_inception<T: Real>(spec: &ModelSpec, input_dim: usize) -> Result<Model<T>> {
    expect_arch(spec, Architecture::Inception)?;
    build_model(spec, input_dim)
}

pub fn build_densenet<T: Real>(spec: &ModelSpec, input_dim: usize) -> Result<Model<T>> {
    expect_arch(spec, Architecture::Densenet)?;
    build_model(spec, input_dim)
}

fn expect_arch(spec: &ModelSpec, arch: Architecture) -> Result<()> {
    if spec.architecture != arch {
        return Err(Error::config(format!(
            "expected a {arch} spec, got {}",
            spec.architecture
        )));
    }
    Ok(())
}

/// Node-to-graph pooling.
pub fn readout<T: Real>(
    tape: &mut Tape<T>,
    x: Var,
    segment_ids: &Arc<[usize]>,
    num_graphs: usize,
    mode: Readout,
) -> Result<Var> {
    match mode {
        Readout::Mean => tape.segment_mean(x, segment_ids, num_graphs),
        Readout::Sum => {
            let counts = segment_ids
                .iter()
                .fold(vec![0usize; num_graphs], |mut c, &s| {
                    if s < num_graphs {
                        c[s] += 1;
                    }
                    c
                });
            if let Some(s) = counts.iter().position(|&c| c == 0) {
                return Err(Error::shape(format!("graph {s} has no nodes")));
            }
            tape.segment_sum(x, segment_ids, num_graphs)
        }
    }
}

struct Ctx<'a, T> {
    store: &'a ParamStore<T>,
    bn: &'a mut [BatchNormState<T>],
    op: &'a Arc<CsrMatrix<T>>,
    mode: Mode,
}

impl<T: Real> Ctx<'_, T> {
    /// Conv and batch norm; returns the normalized output and the basis.
    fn unit(&mut self, tape: &mut Tape<T>, u: &ConvUnit, x: Var) -> Result<(Var, Var)> {
        let c = cheb_conv(tape, self.store, self.op, x, &u.conv)?;
        let g = tape.param(self.store, u.gamma);
        let b = tape.param(self.store, u.beta);
        let y = tape.batch_norm(c.out, g, b, &mut self.bn[u.bn], self.mode)?;
        Ok((y, c.basis))
    }

    fn unit_relu(&mut self, tape: &mut Tape<T>, u: &ConvUnit, x: Var) -> Result<Var> {
        let (y, _) = self.unit(tape, u, x)?;
        Ok(tape.relu(y))
    }

    fn block(
        &mut self,
        tape: &mut Tape<T>,
        block: &Block,
        x: Var,
        shortcut_mode: Shortcut,
    ) -> Result<Var> {
        match block {
            Block::Conv(u) => self.unit_relu(tape, u, x),
            Block::Residual { units, shortcut } => {
                let (y0, basis) = self.unit(tape, &units[0], x)?;
                let y0 = tape.relu(y0);
                let y1 = self.unit_relu(tape, &units[1], y0)?;
                let (y2, _) = self.unit(tape, &units[2], y1)?;
                let conv = &units[0].conv;
                let src = match shortcut_mode {
                    Shortcut::ChebOrderK => tape.columns(basis, conv.k * conv.d_in, conv.d_in)?,
                    Shortcut::Input => x,
                };
                let theta_s = tape.param(self.store, *shortcut);
                let s = tape.matmul(src, theta_s)?;
                let sum = tape.add(y2, s)?;
                Ok(tape.relu(sum))
            }
            Block::Inception {
                tributaries,
                trailing,
            } => {
                let mut outs = Vec::with_capacity(tributaries.len());
                for units in tributaries {
                    let mut h = x;
                    for u in units {
                        h = self.unit_relu(tape, u, h)?;
                    }
                    outs.push(h);
                }
                let cat = tape.concat_columns(&outs)?;
                self.unit_relu(tape, trailing, cat)
            }
            Block::Dense { units } => {
                let mut feats = vec![x];
                let mut last = x;
                for u in units {
                    let input = if feats.len() == 1 {
                        x
                    } else {
                        tape.concat_columns(&feats)?
                    };
                    last = self.unit_relu(tape, u, input)?;
                    feats.push(last);
                }
                Ok(last)
            }
        }
    }
}

impl<T: Real> Model<T> {
    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn embedding_dim(&self) -> usize {
        self.embedding_dim
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    pub fn bn_states(&self) -> &[BatchNormState<T>] {
        &self.bn
    }

    pub fn bn_states_mut(&mut self) -> &mut [BatchNormState<T>] {
        &mut self.bn
    }

    pub fn fc(&self) -> (ParamId, ParamId) {
        (self.fc_weight, self.fc_bias)
    }

    pub fn num_params(&self) -> usize {
        self.store.num_scalars()
    }

    /// Number of convolution layers on the longest path.
    pub fn conv_layers(&self) -> usize {
        self.blocks
            .iter()
            .map(|b| match b {
                Block::Conv(_) => 1,
                Block::Residual { .. } => 3,
                Block::Inception { tributaries, .. } => {
                    tributaries.iter().map(Vec::len).max().unwrap_or(0) + 1
                }
                Block::Dense { units } => units.len(),
            })
            .sum()
    }

    /// Records the forward pass and returns `B x C` class probabilities.
    pub fn forward<R: Rng + ?Sized>(
        &mut self,
        tape: &mut Tape<T>,
        batch: &GraphBatch<T>,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Var> {
        Self::forward_parts(
            &self.spec,
            &self.blocks,
            (self.fc_weight, self.fc_bias),
            self.input_dim,
            &self.store,
            &mut self.bn,
            tape,
            batch,
            mode,
            rng,
        )
    }

    /// Forward with an external parameter store and batch-norm states of
    /// the same layout; used by gradient checks and checkpoint tests.
    pub fn forward_with<R: Rng + ?Sized>(
        &self,
        store: &ParamStore<T>,
        bn: &mut [BatchNormState<T>],
        tape: &mut Tape<T>,
        batch: &GraphBatch<T>,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Var> {
        self.store.check_compatible(store)?;
        if bn.len() != self.bn.len() {
            return Err(Error::shape(
                "batch-norm state count differs from the model",
            ));
        }
        Self::forward_parts(
            &self.spec,
            &self.blocks,
            (self.fc_weight, self.fc_bias),
            self.input_dim,
            store,
            bn,
            tape,
            batch,
            mode,
            rng,
        )
    }

    #[allow(clippy::too_many_arguments)]
    fn forward_parts<R: Rng + ?Sized>(
        spec: &ModelSpec,
        blocks: &[Block],
        fc: (ParamId, ParamId),
        input_dim: usize,
        store: &ParamStore<T>,
        bn: &mut [BatchNormState<T>],
        tape: &mut Tape<T>,
        batch: &GraphBatch<T>,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Var> {
        if batch.features.cols() != input_dim {
            return Err(Error::shape(format!(
                "model expects {input_dim} node features, batch has {}",
                batch.features.cols()
            )));
        }
        let mut ctx = Ctx {
            store,
            bn,
            op: &batch.laplacian,
            mode,
        };
        let mut h = tape.input(batch.features.clone());
        for b in blocks {
            h = ctx.block(tape, b, h, spec.shortcut)?;
        }
        let pooled = readout(tape, h, &batch.segment_ids, batch.num_graphs, spec.readout)?;
        let dropped = tape.dropout(pooled, spec.dropout, mode, rng)?;
        let w = tape.param(store, fc.0);
        let b = tape.param(store, fc.1);
        let logits = tape.matmul(dropped, w)?;
        let logits = tape.add_row_bias(logits, b)?;
        Ok(tape.softmax_rows(logits))
    }

    /// Class probabilities without keeping the tape.
    pub fn predict(&mut self, batch: &GraphBatch<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = self.forward(&mut tape, batch, Mode::Eval, &mut rng)?;
        Ok(tape.value(p).clone())
    }
}

/// Closed-form scalar parameter count for `spec` on `input_dim` features.
pub fn expected_param_count(spec: &ModelSpec, input_dim: usize) -> usize {
    let conv = |k: usize, din: usize, dout: usize| (k + 1) * din * dout + dout + 2 * dout;
    let widths = spec.widths();
    let mut d = input_dim;
    let mut total = 0;
    match spec.architecture {
        Architecture::Plain => {
            for &w in &widths {
                total += conv(spec.k, d, w);
                d = w;
            }
        }
        Architecture::Resnet => {
            for &w in &widths {
                total += conv(spec.k, d, w) + 2 * conv(spec.k, w, w) + d * w;
                d = w;
            }
        }
        Architecture::Inception => {
            for &w in &widths {
                let tw = match spec.inception_width {
                    InceptionWidth::Full => w,
                    InceptionWidth::Quarter => w / 4,
                };
                for (t, &kt) in INCEPTION_KS.iter().enumerate() {
                    total += conv(kt, d, tw);
                    if t < 3 {
                        total += conv(kt, tw, tw);
                    }
                }
                total += conv(INCEPTION_TRAILING_K, 4 * tw, w);
                d = w;
            }
        }
        Architecture::Densenet => {
            let mut din = d;
            for &w in &widths {
                total += conv(spec.k, din, w);
                din += w;
            }
            d = *widths.last().unwrap_or(&d);
        }
    }
    total + d * spec.num_classes + spec.num_classes
}
