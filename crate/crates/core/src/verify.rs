//! Self-checks: spectral oracle equivalence, finite-difference gradient
//! checks, permutation invariance and Laplacian spectrum bounds.
//!
//! The convolution under test is passed in as a function so that a broken
//! implementation can be substituted and shown to fail.

use std::fmt::Write as _;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::make_batch;
use crate::error::Result;
use crate::graph::{Graph, ScaledLaplacian};
use crate::model::{build_model, Architecture, Model, ModelSpec};
use crate::scalar::Real;
use crate::sparse::CsrMatrix;
use crate::spectral::{cheb_conv, cheb_conv_eval, spectral_filter_exact, ChebConvParams};
use crate::tensor::{
    grad_check_subset, BatchNormState, GradCheckReport, Mode, ParamId, ParamStore, Tape, Tensor,
    Var,
};

pub const ORACLE_TOLERANCE: f64 = 1e-9;
pub const GRAD_TOLERANCE: f64 = 1e-4;
pub const GRAD_EPS: f64 = 1e-5;
pub const PERMUTATION_TOLERANCE: f64 = 1e-9;
pub const SPECTRUM_TOLERANCE: f64 = 1e-9;

/// A Chebyshev convolution evaluated on one graph.
pub type ConvFn =
    fn(&ScaledLaplacian, &Tensor<f64>, &ChebConvParams, &ParamStore<f64>) -> Result<Tensor<f64>>;

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteEntry {
    pub label: String,
    pub value: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteResult {
    pub name: String,
    pub tolerance: f64,
    /// Largest error over all entries.
    pub worst: f64,
    pub passed: bool,
    pub entries: Vec<SuiteEntry>,
}

impl SuiteResult {
    fn from_entries(name: &str, tolerance: f64, entries: Vec<SuiteEntry>) -> Self {
        let worst = entries.iter().map(|e| e.value).fold(0.0, f64::max);
        let passed = !entries.is_empty() && entries.iter().all(|e| e.passed);
        Self {
            name: name.to_string(),
            tolerance,
            worst,
            passed,
            entries,
        }
    }
}

fn entry(label: impl Into<String>, value: f64, tolerance: f64) -> SuiteEntry {
    SuiteEntry {
        label: label.into(),
        value,
        passed: value <= tolerance,
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct VerifyReport {
    pub suites: Vec<SuiteResult>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.suites.iter().all(|s| s.passed)
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        for suite in &self.suites {
            let _ = writeln!(
                s,
                "{:<12} {}  worst {:.3e}  (tolerance {:.0e})",
                suite.name,
                if suite.passed { "PASS" } else { "FAIL" },
                suite.worst,
                suite.tolerance
            );
            for e in &suite.entries {
                let _ = writeln!(
                    s,
                    "    {:<28} {:.3e}{}",
                    e.label,
                    e.value,
                    if e.passed { "" } else { "  FAIL" }
                );
            }
        }
        s
    }
}

/// Random tree over `n` vertices plus extra edges with probability `p`;
/// features uniform in `[-1, 1]`, label in `{0, 1}`.
pub fn random_connected_graph<R: Rng + ?Sized>(rng: &mut R, n: usize, d: usize, p: f64) -> Graph {
    let mut relabel: Vec<usize> = (0..n).collect();
    relabel.shuffle(rng);
    let mut edges = Vec::new();
    for i in 1..n {
        let j = rng.gen_range(0..i);
        edges.push((relabel[i], relabel[j]));
    }
    for i in 0..n {
        for j in i + 1..n {
            if rng.gen_bool(p) {
                edges.push((i, j));
            }
        }
    }
    let x = random_tensor(rng, n, d, 1.0);
    Graph::new(n, &edges, x, rng.gen_range(0..2)).expect("edges in range")
}

/// Erdős–Rényi graph; may be disconnected or contain isolated vertices.
pub fn random_graph<R: Rng + ?Sized>(rng: &mut R, n: usize, d: usize, p: f64) -> Graph {
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.gen_bool(p) {
                edges.push((i, j));
            }
        }
    }
    Graph::new(n, &edges, random_tensor(rng, n, d, 1.0), 0).expect("edges in range")
}

pub fn random_tensor<R: Rng + ?Sized>(
    rng: &mut R,
    rows: usize,
    cols: usize,
    a: f64,
) -> Tensor<f64> {
    let data = (0..rows * cols).map(|_| rng.gen_range(-a..=a)).collect();
    Tensor::new(rows, cols, data).expect("sized")
}

pub fn random_permutation<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(rng);
    p
}

/// Puts random running statistics into every batch-norm layer so that
/// eval-mode forwards exercise them.
pub fn randomize_running_stats<T: Real, R: Rng + ?Sized>(model: &mut Model<T>, rng: &mut R) {
    for s in model.bn_states_mut() {
        for m in &mut s.mean {
            *m = T::from_f64_lossy(rng.gen_range(-0.3..0.3));
        }
        for v in &mut s.var {
            *v = T::from_f64_lossy(rng.gen_range(0.5..2.0));
        }
    }
}

/// `conv` against the eigenbasis evaluation on random connected graphs.
/// Half the trials scale by the exact largest eigenvalue, half by 2.
pub fn oracle_suite(conv: ConvFn, trials: usize, seed: u64) -> Result<SuiteResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let mut worst_exact: f64 = 0.0;
    for t in 0..trials {
        let n = rng.gen_range(2..=10);
        let d_in = rng.gen_range(1..=4);
        let d_out = rng.gen_range(1..=5);
        let k = rng.gen_range(0..=6);
        let g = random_connected_graph(&mut rng, n, d_in, 0.3);
        let mut store = ParamStore::new();
        let params = ChebConvParams::init(&mut store, "c", k, d_in, d_out, true, &mut rng)?;
        let b = params.bias.expect("bias requested");
        store.set(b, random_tensor(&mut rng, 1, d_out, 0.5))?;
        let l = g.normalized_laplacian();
        let lt = if t % 2 == 0 {
            l.scale(2.0)?
        } else {
            l.scale_exact()?
        };
        let fast = conv(&lt, g.features(), &params, &store)?;
        let exact = spectral_filter_exact(&l, g.features(), &params, &store, lt.lambda_max())?;
        let err = fast.max_abs_diff(&exact)?;
        if t % 2 == 0 {
            worst = worst.max(err);
        } else {
            worst_exact = worst_exact.max(err);
        }
    }
    Ok(SuiteResult::from_entries(
        "oracle",
        ORACLE_TOLERANCE,
        vec![
            entry("lambda_max = 2", worst, ORACLE_TOLERANCE),
            entry("lambda_max exact", worst_exact, ORACLE_TOLERANCE),
        ],
    ))
}

/// Constant rank-one weighting `a · out · r` that turns a tensor into a
/// scalar without symmetric cancellations.
fn weighted_sum(tape: &mut Tape<f64>, out: Var, a: &Tensor<f64>, r: &Tensor<f64>) -> Result<Var> {
    let av = tape.input(a.clone());
    let rv = tape.input(r.clone());
    let left = tape.matmul(av, out)?;
    let s = tape.matmul(left, rv)?;
    Ok(tape.sum(s))
}

type LossFn = Box<dyn Fn(&ParamStore<f64>, &mut Tape<f64>) -> Result<Var>>;

struct OpCase {
    store: ParamStore<f64>,
    loss: LossFn,
}

fn away_from_zero(t: Tensor<f64>) -> Tensor<f64> {
    t.map(|v| {
        if v.abs() < 0.1 {
            v.signum() * 0.1 + v
        } else {
            v
        }
    })
}

fn random_operator(rng: &mut ChaCha8Rng, n: usize) -> Arc<CsrMatrix<f64>> {
    let g = random_graph(rng, n, 1, 0.4);
    Arc::new(
        g.normalized_laplacian()
            .scale(2.0)
            .expect("normalized")
            .matrix()
            .clone(),
    )
}

fn contiguous_segments(rng: &mut ChaCha8Rng, n: usize) -> (Arc<[usize]>, usize) {
    let segments = rng.gen_range(1..=n.min(4));
    let mut ids: Vec<usize> = (0..segments).collect();
    while ids.len() < n {
        ids.push(rng.gen_range(0..segments));
    }
    ids.sort_unstable();
    (ids.into(), segments)
}

fn op_case(name: &str, rng: &mut ChaCha8Rng) -> OpCase {
    let n = rng.gen_range(2..=6);
    let c = rng.gen_range(1..=4);
    let mut store = ParamStore::new();
    let a = random_tensor(rng, 1, n, 1.0);
    let r = random_tensor(rng, c, 1, 1.0);
    macro_rules! case {
        ($f:expr) => {
            OpCase {
                store,
                loss: Box::new($f),
            }
        };
    }
    match name {
        "matmul" => {
            let k = rng.gen_range(1..=4);
            let x = store.add("x", random_tensor(rng, n, k, 1.0));
            let w = store.add("w", random_tensor(rng, k, c, 1.0));
            case!(move |s, t| {
                let (x, w) = (t.param(s, x), t.param(s, w));
                let y = t.matmul(x, w)?;
                weighted_sum(t, y, &a, &r)
            })
        }
        "add" => {
            let x = store.add("x", random_tensor(rng, n, c, 1.0));
            let y = store.add("y", random_tensor(rng, n, c, 1.0));
            case!(move |s, t| {
                let (x, y) = (t.param(s, x), t.param(s, y));
                let z = t.add(x, y)?;
                weighted_sum(t, z, &a, &r)
            })
        }
        "add_row_bias" => {
            let x = store.add("x", random_tensor(rng, n, c, 1.0));
            let b = store.add("b", random_tensor(rng, 1, c, 1.0));
            case!(move |s, t| {
                let (x, b) = (t.param(s, x), t.param(s, b));
                let z = t.add_row_bias(x, b)?;
                weighted_sum(t, z, &a, &r)
            })
        }
        "scale" => {
            let x = store.add("x", random_tensor(rng, n, c, 1.0));
            let f = rng.gen_range(-2.0..2.0);
            case!(move |s, t| {
                let x = t.param(s, x);
                let z = t.scale(x, f);
                weighted_sum(t, z, &a, &r)
            })
        }
        "concat_columns" => {
            let widths: Vec<usize> = (0..3).map(|_| rng.gen_range(1..=3)).collect();
            let total: usize = widths.iter().sum();
            let ids: Vec<ParamId> = widths
                .iter()
                .enumerate()
                .map(|(i, &w)| store.add(format!("p{i}"), random_tensor(rng, n, w, 1.0)))
                .collect();
            let r = random_tensor(rng, total, 1, 1.0);
            case!(move |s, t| {
                let parts: Vec<Var> = ids.iter().map(|&id| t.param(s, id)).collect();
                let z = t.concat_columns(&parts)?;
                weighted_sum(t, z, &a, &r)
            })
        }
        "columns" => {
            let width = c + rng.gen_range(1..=3);
            let start = rng.gen_range(0..=width - c);
            let x = store.add("x", random_tensor(rng, n, width, 1.0));
            case!(move |s, t| {
                let x = t.param(s, x);
                let z = t.columns(x, start, c)?;
                weighted_sum(t, z, &a, &r)
            })
        }
        "relu" => {
            let x = store.add("x", away_from_zero(random_tensor(rng, n, c, 1.0)));
            case!(move |s, t| {
                let x = t.param(s, x);
                let z = t.relu(x);
                weighted_sum(t, z, &a, &r)
            })
        }
        "batch_norm_train" | "batch_norm_eval" => {
            let mode = if name.ends_with("train") {
                Mode::Train
            } else {
                Mode::Eval
            };
            let x = store.add("x", random_tensor(rng, n, c, 1.0));
            let g = store.add("gamma", random_tensor(rng, 1, c, 1.0));
            let b = store.add("beta", random_tensor(rng, 1, c, 1.0));
            let mut state = BatchNormState::new(c);
            for (m, v) in state.mean.iter_mut().zip(state.var.iter_mut()) {
                *m = rng.gen_range(-0.5..0.5);
                *v = rng.gen_range(0.5..2.0);
            }
            case!(move |s, t| {
                let (x, g, b) = (t.param(s, x), t.param(s, g), t.param(s, b));
                let mut st = state.clone();
                let z = t.batch_norm(x, g, b, &mut st, mode)?;
                weighted_sum(t, z, &a, &r)
            })
        }
        "dropout" => {
            let x = store.add("x", random_tensor(rng, n, c, 1.0));
            let mask_seed = rng.gen();
            case!(move |s, t| {
                let x = t.param(s, x);
                let mut mask_rng = ChaCha8Rng::seed_from_u64(mask_seed);
                let z = t.dropout(x, 0.5, Mode::Train, &mut mask_rng)?;
                weighted_sum(t, z, &a, &r)
            })
        }
        "softmax_rows" => {
            let x = store.add("x", random_tensor(rng, n, c + 1, 2.0));
            let r = random_tensor(rng, c + 1, 1, 1.0);
            case!(move |s, t| {
                let x = t.param(s, x);
                let z = t.softmax_rows(x);
                weighted_sum(t, z, &a, &r)
            })
        }
        "segment_mean" | "segment_sum" => {
            let mean = name == "segment_mean";
            let (ids, m) = contiguous_segments(rng, n);
            let x = store.add("x", random_tensor(rng, n, c, 1.0));
            let a = random_tensor(rng, 1, m, 1.0);
            case!(move |s, t| {
                let x = t.param(s, x);
                let z = if mean {
                    t.segment_mean(x, &ids, m)?
                } else {
                    t.segment_sum(x, &ids, m)?
                };
                weighted_sum(t, z, &a, &r)
            })
        }
        "spmm" => {
            let op = random_operator(rng, n);
            let x = store.add("x", random_tensor(rng, n, c, 1.0));
            case!(move |s, t| {
                let x = t.param(s, x);
                let z = t.spmm(&op, x)?;
                weighted_sum(t, z, &a, &r)
            })
        }
        "cheb_basis" => {
            let op = random_operator(rng, n);
            let k = rng.gen_range(0..=6);
            let x = store.add("x", random_tensor(rng, n, c, 1.0));
            let r = random_tensor(rng, (k + 1) * c, 1, 1.0);
            case!(move |s, t| {
                let x = t.param(s, x);
                let z = t.cheb_basis(&op, x, k)?;
                weighted_sum(t, z, &a, &r)
            })
        }
        "cross_entropy" => {
            let classes = c + 1;
            let p = random_tensor(rng, n, classes, 1.0).map(|v| 0.3 + 0.3 * v.abs());
            let p = store.add("p", p);
            let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..classes)).collect();
            case!(move |s, t| {
                let p = t.param(s, p);
                t.cross_entropy(p, &labels)
            })
        }
        "sum" => {
            let x = store.add("x", random_tensor(rng, n, c, 1.0));
            case!(move |s, t| {
                let x = t.param(s, x);
                Ok(t.sum(x))
            })
        }
        "cheb_conv" => {
            let op = random_operator(rng, n);
            let d_in = rng.gen_range(1..=4);
            let k = rng.gen_range(0..=6);
            let params = ChebConvParams::init(&mut store, "conv", k, d_in, c, true, rng)
                .expect("positive widths");
            let bias = params.bias.expect("bias requested");
            store
                .set(bias, random_tensor(rng, 1, c, 0.5))
                .expect("same shape");
            let x = store.add("x", random_tensor(rng, n, d_in, 1.0));
            case!(move |s, t| {
                let x = t.param(s, x);
                let z = cheb_conv(t, s, &op, x, &params)?.out;
                weighted_sum(t, z, &a, &r)
            })
        }
        other => panic!("no gradient case for {other}"),
    }
}

/// Every differentiable tape op, plus the Chebyshev convolution.
pub const OP_NAMES: [&str; 19] = [
    "matmul",
    "add",
    "add_row_bias",
    "scale",
    "concat_columns",
    "columns",
    "relu",
    "batch_norm_train",
    "batch_norm_eval",
    "dropout",
    "softmax_rows",
    "segment_mean",
    "segment_sum",
    "spmm",
    "cheb_basis",
    "cross_entropy",
    "sum",
    "cheb_conv",
    // composite: softmax feeding the loss, as in every model head
    "softmax_cross_entropy",
];

fn softmax_ce_case(rng: &mut ChaCha8Rng) -> OpCase {
    let n = rng.gen_range(1..=6);
    let classes = rng.gen_range(2..=5);
    let mut store = ParamStore::new();
    let x = store.add("logits", random_tensor(rng, n, classes, 2.0));
    let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..classes)).collect();
    OpCase {
        store,
        loss: Box::new(move |s, t| {
            let x = t.param(s, x);
            let p = t.softmax_rows(x);
            t.cross_entropy(p, &labels)
        }),
    }
}

/// Worst relative error of `trials` random instances of one op.
pub fn op_grad_check(name: &str, trials: usize, seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: Option<GradCheckReport> = None;
    let mut checked = 0;
    for _ in 0..trials {
        let OpCase { mut store, loss } = if name == "softmax_cross_entropy" {
            softmax_ce_case(&mut rng)
        } else {
            op_case(name, &mut rng)
        };
        let ids: Vec<ParamId> = store.ids().collect();
        let rep = grad_check_subset(&mut store, |s, t| loss(s, t), GRAD_EPS, &ids)?;
        checked += rep.checked;
        if worst
            .as_ref()
            .is_none_or(|w| rep.max_rel_error > w.max_rel_error)
        {
            worst = Some(rep);
        }
    }
    let mut worst = worst.unwrap_or(GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        analytic_at_worst: 0.0,
        numeric_at_worst: 0.0,
        checked: 0,
    });
    worst.checked = checked;
    Ok(worst)
}

/// Small-width spec for `arch` at its default depth, used where every
/// scalar parameter is perturbed.
pub fn narrow_spec(arch: Architecture, depth: usize, seed: u64) -> ModelSpec {
    let mut spec = ModelSpec::new(arch, 3).with_depth(depth).with_seed(seed);
    let plan = match arch {
        Architecture::Plain | Architecture::Densenet => (0..depth)
            .map(|i| if i < depth / 2 { 3 } else { 4 })
            .collect(),
        Architecture::Resnet | Architecture::Inception => {
            (0..depth / 3).map(|i| if i == 0 { 3 } else { 4 }).collect()
        }
    };
    spec.channel_plan = Some(plan);
    spec
}

/// Whole-model gradient check on one random graph with `n ≤ 8` vertices.
///
/// In eval mode every parameter is checked. In train mode batch norm
/// cancels any constant shift of its input, so the convolution biases
/// directly in front of it have an exactly zero gradient; they are left out
/// of the comparison and instead required to have analytic gradient 0.
pub fn model_grad_check(spec: &ModelSpec, mode: Mode, seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = 3;
    let n = rng.gen_range(3..=8);
    let mut g = random_connected_graph(&mut rng, n, d, 0.3);
    g = g.with_label(rng.gen_range(0..spec.num_classes));
    let mut model = build_model::<f64>(spec, d)?;
    randomize_running_stats(&mut model, &mut rng);
    // nonzero biases so that the eval-mode check sees them
    let ids: Vec<ParamId> = model.params().ids().collect();
    for &id in &ids {
        if model.params().name(id).ends_with(".bias") || model.params().name(id).ends_with("beta") {
            let t = model.params().get(id);
            let fresh = random_tensor(&mut rng, t.rows(), t.cols(), 0.2);
            model.params_mut().set(id, fresh)?;
        }
    }
    let batch = make_batch::<f64>(&[&g])?;
    let bn: Vec<BatchNormState<f64>> = model.bn_states().to_vec();
    let dropout_seed: u64 = rng.gen();
    let mut store = model.params().clone();

    let conv_biases: Vec<ParamId> = ids
        .iter()
        .copied()
        .filter(|&id| {
            let name = model.params().name(id);
            name.ends_with(".bias") && !name.starts_with("fc")
        })
        .collect();
    let checked: Vec<ParamId> = match mode {
        Mode::Eval => ids.clone(),
        Mode::Train => ids
            .iter()
            .copied()
            .filter(|id| !conv_biases.contains(id))
            .collect(),
    };

    let loss = |s: &ParamStore<f64>, t: &mut Tape<f64>| -> Result<Var> {
        let mut bn = bn.clone();
        let mut r = ChaCha8Rng::seed_from_u64(dropout_seed);
        let p = model.forward_with(s, &mut bn, t, &batch, mode, &mut r)?;
        t.cross_entropy(p, &batch.labels)
    };
    if mode == Mode::Train {
        let mut tape = Tape::new();
        let l = loss(&store, &mut tape)?;
        let grads = tape.backward(l, &store)?;
        for id in &conv_biases {
            let m = grads.get(*id).max_abs();
            if m > 1e-12 {
                return Err(crate::error::Error::Numerical(format!(
                    "{} has gradient {m:e} in front of train-mode batch norm",
                    store.name(*id)
                )));
            }
        }
    }
    grad_check_subset(&mut store, loss, GRAD_EPS, &checked)
}

/// Op-level and whole-model gradient checks.
pub fn gradcheck_suite(trials: usize, seed: u64) -> Result<SuiteResult> {
    let mut entries = Vec::new();
    for (i, name) in OP_NAMES.iter().enumerate() {
        let rep = op_grad_check(name, trials, seed.wrapping_add(i as u64))?;
        entries.push(entry(*name, rep.max_rel_error, GRAD_TOLERANCE));
    }
    for arch in Architecture::ALL {
        let spec = narrow_spec(arch, arch.default_depth(), seed);
        for mode in [Mode::Eval, Mode::Train] {
            let rep = model_grad_check(&spec, mode, seed)?;
            let label = format!(
                "model {arch} ({})",
                if mode == Mode::Eval { "eval" } else { "train" }
            );
            entries.push(entry(label, rep.max_rel_error, GRAD_TOLERANCE));
        }
    }
    Ok(SuiteResult::from_entries(
        "gradcheck",
        GRAD_TOLERANCE,
        entries,
    ))
}

/// Largest change of a graph's eval-mode output under node relabelling.
pub fn permutation_deviation(model: &mut Model<f64>, g: &Graph, perm: &[usize]) -> Result<f64> {
    let a = model.predict(&make_batch(&[g])?)?;
    let pg = g.permute(perm)?;
    let b = model.predict(&make_batch(&[&pg])?)?;
    a.max_abs_diff(&b)
}

pub fn permutation_suite(pairs: usize, seed: u64) -> Result<SuiteResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entries = Vec::new();
    for arch in Architecture::ALL {
        let spec = ModelSpec::new(arch, 3).with_seed(seed);
        let d = 4;
        let mut model = build_model::<f64>(&spec, d)?;
        randomize_running_stats(&mut model, &mut rng);
        let mut worst: f64 = 0.0;
        for _ in 0..pairs {
            let n = rng.gen_range(2..=16);
            let g = random_connected_graph(&mut rng, n, d, 0.25);
            let perm = random_permutation(&mut rng, n);
            worst = worst.max(permutation_deviation(&mut model, &g, &perm)?);
        }
        entries.push(entry(arch.name(), worst, PERMUTATION_TOLERANCE));
    }
    Ok(SuiteResult::from_entries(
        "permutation",
        PERMUTATION_TOLERANCE,
        entries,
    ))
}

/// Distance of the normalized-Laplacian spectrum from `[0, 2]`.
pub fn spectrum_violation(g: &Graph) -> Result<f64> {
    let eig = g.normalized_laplacian().eigen()?;
    Ok(eig
        .eigenvalues
        .iter()
        .map(|&l| (-l).max(l - 2.0).max(0.0))
        .fold(0.0, f64::max))
}

pub fn spectrum_suite_for(label: &str, graphs: &[&Graph]) -> Result<SuiteEntry> {
    let mut worst: f64 = 0.0;
    for g in graphs {
        worst = worst.max(spectrum_violation(g)?);
    }
    Ok(entry(label, worst, SPECTRUM_TOLERANCE))
}

/// Random graphs of several densities, including disconnected ones with
/// isolated vertices, bipartite graphs (where 2 is attained) and stars.
pub fn spectrum_suite(count: usize, seed: u64) -> Result<SuiteResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut graphs = Vec::new();
    for i in 0..count {
        let n = rng.gen_range(1..=30);
        let p = [0.05, 0.2, 0.5, 0.9][i % 4];
        graphs.push(random_graph(&mut rng, n, 1, p));
    }
    let mut bipartite = Vec::new();
    for n in 2..=12 {
        let path: Vec<_> = (1..n).map(|i| (i - 1, i)).collect();
        bipartite.push(Graph::new(n, &path, Tensor::ones(n, 1), 0)?);
        let star: Vec<_> = (1..n).map(|i| (0, i)).collect();
        bipartite.push(Graph::new(n, &star, Tensor::ones(n, 1), 0)?);
    }
    let r: Vec<&Graph> = graphs.iter().collect();
    let b: Vec<&Graph> = bipartite.iter().collect();
    Ok(SuiteResult::from_entries(
        "spectrum",
        SPECTRUM_TOLERANCE,
        vec![
            spectrum_suite_for("random graphs", &r)?,
            spectrum_suite_for("paths and stars", &b)?,
        ],
    ))
}

/// Default convolution under test.
pub fn reference_conv(
    lt: &ScaledLaplacian,
    x: &Tensor<f64>,
    params: &ChebConvParams,
    store: &ParamStore<f64>,
) -> Result<Tensor<f64>> {
    cheb_conv_eval(lt, x, params, store)
}

#[derive(Debug, Clone, Copy)]
pub struct VerifyOptions {
    pub seed: u64,
    pub oracle_trials: usize,
    pub grad_trials: usize,
    pub permutation_pairs: usize,
    pub spectrum_graphs: usize,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            oracle_trials: 50,
            grad_trials: 20,
            permutation_pairs: 20,
            spectrum_graphs: 100,
        }
    }
}

/// Runs every suite. Errors inside a suite are reported as a failed entry.
pub fn run_all(conv: ConvFn, opts: &VerifyOptions) -> VerifyReport {
    let failed = |name: &str, e: crate::error::Error| SuiteResult {
        name: name.to_string(),
        tolerance: 0.0,
        worst: f64::INFINITY,
        passed: false,
        entries: vec![SuiteEntry {
            label: format!("error: {e}"),
            value: f64::INFINITY,
            passed: false,
        }],
    };
    let suites = vec![
        oracle_suite(conv, opts.oracle_trials, opts.seed).unwrap_or_else(|e| failed("oracle", e)),
        gradcheck_suite(opts.grad_trials, opts.seed).unwrap_or_else(|e| failed("gradcheck", e)),
        permutation_suite(opts.permutation_pairs, opts.seed)
            .unwrap_or_else(|e| failed("permutation", e)),
        spectrum_suite(opts.spectrum_graphs, opts.seed).unwrap_or_else(|e| failed("spectrum", e)),
    ];
    VerifyReport { suites }
}
