use graphcnn::data::{make_batch, GraphBatch};
use graphcnn::model::{
    build_model, expected_param_count, Block, ConvUnit, Readout, INCEPTION_KS, INCEPTION_TRAILING_K,
};
use graphcnn::spectral::{cheb_conv, chebyshev_basis};
use graphcnn::verify::{
    model_grad_check, narrow_spec, permutation_deviation, random_connected_graph,
    random_permutation, random_tensor, randomize_running_stats, GRAD_TOLERANCE,
};
use graphcnn::{Architecture, Graph, Mode, Model, ModelSpec, ParamStore, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const BATCHING_TOL: f64 = 1e-6;
const PERMUTATION_TOL: f64 = 1e-9;
const SHORTCUT_TOL: f64 = 1e-9;
const LOCALITY_TOL: f64 = 1e-12;

fn all_specs(classes: usize) -> Vec<ModelSpec> {
    Architecture::ALL
        .iter()
        .flat_map(|&a| {
            a.depth_presets()
                .iter()
                .map(move |&d| ModelSpec::new(a, classes).with_depth(d))
        })
        .collect()
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[test]
fn default_plain_parameter_count_by_hand() {
    // (K+1)·d_in·d_out + bias + BN γ, β per layer with K = 6, d = 7, C = 2
    let layer = |din: usize, dout: usize| 7 * din * dout + 3 * dout;
    let expect = layer(7, 32) + 2 * layer(32, 32) + layer(32, 64) + 2 * layer(64, 64) + 64 * 2 + 2;
    assert_eq!(expect, 88_578);
    let m = build_model::<f64>(&ModelSpec::new(Architecture::Plain, 2), 7).unwrap();
    assert_eq!(m.num_params(), expect);
    assert_eq!(m.conv_layers(), 6);
}

#[test]
fn parameter_counts_match_closed_form_for_every_preset() {
    for spec in all_specs(3) {
        let m = build_model::<f64>(&spec, 5).unwrap();
        assert_eq!(
            m.num_params(),
            expected_param_count(&spec, 5),
            "{} depth {}",
            spec.architecture,
            spec.depth
        );
        assert_eq!(m.conv_layers(), spec.depth);
        let names: std::collections::BTreeSet<_> =
            m.params().iter().map(|(_, n, _)| n.to_string()).collect();
        assert_eq!(names.len(), m.params().len(), "duplicate registration");
    }
}

#[test]
fn resnet_structure() {
    let m = build_model::<f64>(&ModelSpec::new(Architecture::Resnet, 2).with_depth(6), 7).unwrap();
    assert_eq!(m.blocks().len(), 2);
    let Block::Residual { units, shortcut } = &m.blocks()[1] else {
        panic!("expected a residual block");
    };
    assert_eq!(m.params().get(*shortcut).shape(), [32, 64]);
    assert!(units.iter().all(|u| u.conv.k == 6));
    for (d, blocks) in [(3, 1), (9, 3), (12, 4)] {
        let spec = ModelSpec::new(Architecture::Resnet, 2).with_depth(d);
        assert_eq!(build_model::<f64>(&spec, 7).unwrap().blocks().len(), blocks);
    }
}

#[test]
fn inception_structure() {
    let spec = ModelSpec::new(Architecture::Inception, 2).with_depth(3);
    let m = build_model::<f64>(&spec, 7).unwrap();
    assert_eq!(m.blocks().len(), 1);
    let Block::Inception {
        tributaries,
        trailing,
    } = &m.blocks()[0]
    else {
        panic!("expected an inception block");
    };
    let ks: Vec<usize> = tributaries.iter().map(|t| t[0].conv.k).collect();
    assert_eq!(ks, INCEPTION_KS);
    assert_eq!(ks, [3, 6, 9, 6]);
    let lens: Vec<usize> = tributaries.iter().map(Vec::len).collect();
    assert_eq!(lens, [2, 2, 2, 1]);
    let concat: usize = tributaries
        .iter()
        .map(|t| t.last().unwrap().conv.d_out)
        .sum();
    assert_eq!(concat, 128);
    assert_eq!(trailing.conv.d_in, 128);
    assert_eq!(trailing.conv.k, INCEPTION_TRAILING_K);
    assert_eq!(trailing.conv.d_out, 32);
}

#[test]
fn densenet_input_widths_grow() {
    let m =
        build_model::<f64>(&ModelSpec::new(Architecture::Densenet, 2).with_depth(6), 7).unwrap();
    let Block::Dense { units } = &m.blocks()[0] else {
        panic!("expected a dense block");
    };
    let din: Vec<usize> = units.iter().map(|u| u.conv.d_in).collect();
    assert_eq!(din[0], 7);
    assert_eq!(din[3], 7 + 32 + 32 + 32);
    let dout: Vec<usize> = units.iter().map(|u| u.conv.d_out).collect();
    assert_eq!(dout, [32, 32, 32, 64, 64, 64]);
    for l in 0..units.len() {
        assert_eq!(din[l], 7 + dout[..l].iter().sum::<usize>());
    }
    assert_eq!(m.embedding_dim(), 64);
}

#[test]
fn densenet_layer_three_of_plain_plan() {
    // counting layers from 1, layer 3 sees X, Y1 and Y2
    let m =
        build_model::<f64>(&ModelSpec::new(Architecture::Densenet, 2).with_depth(6), 7).unwrap();
    let Block::Dense { units } = &m.blocks()[0] else {
        panic!()
    };
    assert_eq!(units[2].conv.d_in, 71);
}

#[test]
fn forward_gives_distributions() {
    let mut r = rng(1);
    let g = random_connected_graph(&mut r, 17, 7, 0.15);
    let single = Graph::new(1, &[], random_tensor(&mut r, 1, 7, 1.0), 0).unwrap();
    for spec in all_specs(2) {
        let mut m = build_model::<f64>(&spec, 7).unwrap();
        for graph in [&g, &single] {
            let p = m.predict(&make_batch(&[graph]).unwrap()).unwrap();
            assert_eq!(p.shape(), [1, 2]);
            assert!(p.all_finite());
            assert!((p.sum() - 1.0).abs() <= 1e-12);
        }
        let mut tape = Tape::new();
        let p = m
            .forward(
                &mut tape,
                &make_batch(&[&single]).unwrap(),
                Mode::Train,
                &mut r,
            )
            .unwrap();
        assert!(
            tape.value(p).all_finite(),
            "{} train on n=1",
            spec.architecture
        );
    }
}

#[test]
fn eval_forward_is_bit_identical() {
    let mut r = rng(2);
    let g = random_connected_graph(&mut r, 12, 4, 0.2);
    let batch = make_batch(&[&g]).unwrap();
    for arch in Architecture::ALL {
        let mut m = build_model::<f64>(&ModelSpec::new(arch, 3), 4).unwrap();
        randomize_running_stats(&mut m, &mut r);
        assert_eq!(m.predict(&batch).unwrap(), m.predict(&batch).unwrap());
    }
}

#[test]
fn feature_width_mismatch_is_rejected() {
    let mut r = rng(3);
    let g = random_connected_graph(&mut r, 5, 3, 0.2);
    let mut m = build_model::<f64>(&ModelSpec::new(Architecture::Plain, 2), 4).unwrap();
    assert!(matches!(
        m.predict(&make_batch(&[&g]).unwrap()),
        Err(graphcnn::Error::Shape(_))
    ));
}

#[test]
fn batching_does_not_change_eval_outputs() {
    let mut r = rng(4);
    let graphs: Vec<Graph> = (0..5)
        .map(|_| {
            let n = r.gen_range(1..=14);
            random_connected_graph(&mut r, n, 4, 0.25)
        })
        .collect();
    let refs: Vec<&Graph> = graphs.iter().collect();
    for arch in Architecture::ALL {
        for readout in [Readout::Mean, Readout::Sum] {
            let mut spec = ModelSpec::new(arch, 3);
            spec.readout = readout;
            let mut m = build_model::<f64>(&spec, 4).unwrap();
            randomize_running_stats(&mut m, &mut r);
            let joint = m.predict(&make_batch(&refs).unwrap()).unwrap();
            for (i, g) in refs.iter().enumerate() {
                let alone = m.predict(&make_batch(&[*g]).unwrap()).unwrap();
                let dev = alone
                    .row(0)
                    .iter()
                    .zip(joint.row(i))
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max);
                assert!(dev <= BATCHING_TOL, "{arch} graph {i}: {dev:e}");
            }
        }
    }
}

#[test]
fn relabelling_nodes_leaves_eval_output_unchanged() {
    let mut r = rng(5);
    for arch in Architecture::ALL {
        let mut m = build_model::<f64>(&ModelSpec::new(arch, 3), 4).unwrap();
        randomize_running_stats(&mut m, &mut r);
        for _ in 0..20 {
            let n = r.gen_range(2..=16);
            let g = random_connected_graph(&mut r, n, 4, 0.25);
            let perm = random_permutation(&mut r, n);
            let dev = permutation_deviation(&mut m, &g, &perm).unwrap();
            assert!(dev <= PERMUTATION_TOL, "{arch}: {dev:e}");
        }
    }
}

#[test]
fn whole_model_gradients_pass_finite_differences() {
    for arch in Architecture::ALL {
        let presets = arch.depth_presets();
        for depth in [presets[0], arch.default_depth()] {
            let spec = narrow_spec(arch, depth, 17);
            for mode in [Mode::Eval, Mode::Train] {
                let rep = model_grad_check(&spec, mode, 31).unwrap();
                assert!(
                    rep.max_rel_error <= GRAD_TOLERANCE,
                    "{arch} depth {depth} {mode:?}: {rep:?}"
                );
                assert!(rep.checked > 0);
            }
        }
    }
}

/// Fraction of scalars and of tensors with a nonzero gradient.
fn live_fractions(m: &mut Model<f64>, batch: &GraphBatch<f64>, mode: Mode) -> (f64, f64) {
    let mut r = rng(60);
    let mut tape = Tape::new();
    let p = m.forward(&mut tape, batch, mode, &mut r).unwrap();
    let loss = tape.cross_entropy(p, &batch.labels).unwrap();
    let grads = tape.backward(loss, m.params()).unwrap();
    let (mut live, mut total, mut live_t) = (0usize, 0usize, 0usize);
    for (_, g) in grads.iter() {
        total += g.len();
        let nz = g.data().iter().filter(|v| **v != 0.0).count();
        live += nz;
        live_t += usize::from(nz > 0);
    }
    (
        live as f64 / total as f64,
        live_t as f64 / grads.len() as f64,
    )
}

#[test]
fn nearly_every_parameter_receives_gradient() {
    let mut r = rng(6);
    let graphs: Vec<Graph> = (0..8)
        .map(|i| {
            let n = r.gen_range(6..=16);
            random_connected_graph(&mut r, n, 5, 0.2).with_label(i % 3)
        })
        .collect();
    let refs: Vec<&Graph> = graphs.iter().collect();
    let batch = make_batch::<f64>(&refs).unwrap();
    for arch in Architecture::ALL {
        let mut m = build_model::<f64>(&ModelSpec::new(arch, 3), 5).unwrap();
        // train mode: batch statistics keep every channel half active; the
        // convolution biases in front of batch norm are the only exact zeros
        let (scalars, _) = live_fractions(&mut m, &batch, Mode::Train);
        assert!(scalars >= 0.99, "{arch}: only {scalars:.4} of scalars live");

        randomize_running_stats(&mut m, &mut r);
        let (_, tensors) = live_fractions(&mut m, &batch, Mode::Eval);
        assert!(tensors >= 0.99, "{arch}: only {tensors:.4} of tensors live");
    }
}

fn zero_unit(store: &mut ParamStore<f64>, u: &ConvUnit) {
    let mut ids = vec![u.conv.theta, u.gamma, u.beta];
    ids.extend(u.conv.bias);
    for id in ids {
        let [r, c] = store.get(id).shape();
        store.set(id, Tensor::zeros(r, c)).unwrap();
    }
}

#[test]
fn resnet_without_main_path_is_the_shortcut_chain() {
    let mut r = rng(7);
    let spec = ModelSpec::new(Architecture::Resnet, 3).with_depth(9);
    let mut m = build_model::<f64>(&spec, 4).unwrap();
    randomize_running_stats(&mut m, &mut r);
    let blocks = m.blocks().to_vec();
    for b in &blocks {
        let Block::Residual { units, .. } = b else {
            panic!()
        };
        for u in units {
            zero_unit(m.params_mut(), u);
        }
    }
    let g = random_connected_graph(&mut r, 11, 4, 0.3);
    let got = m.predict(&make_batch(&[&g]).unwrap()).unwrap();

    // relu(T_K(L̃) H Θ_s) block after block, then mean, FC and softmax
    let lt = g.normalized_laplacian().scale(2.0).unwrap();
    let mut h = g.features().clone();
    for b in &blocks {
        let Block::Residual { units, shortcut } = b else {
            panic!()
        };
        let basis = chebyshev_basis(&lt, &h, units[0].conv.k).unwrap();
        let top = basis.blocks.last().unwrap();
        h = top
            .matmul(m.params().get(*shortcut))
            .unwrap()
            .map(|v| v.max(0.0));
    }
    let n = h.rows() as f64;
    let pooled: Vec<f64> = (0..h.cols())
        .map(|c| (0..h.rows()).map(|r| h.get(r, c)).sum::<f64>() / n)
        .collect();
    let (w, bias) = m.fc();
    let logits = Tensor::new(1, pooled.len(), pooled)
        .unwrap()
        .matmul(m.params().get(w))
        .unwrap()
        .add(m.params().get(bias))
        .unwrap();
    let mx = logits.data().iter().cloned().fold(f64::MIN, f64::max);
    let e: Vec<f64> = logits.data().iter().map(|v| (v - mx).exp()).collect();
    let s: f64 = e.iter().sum();
    let expect = Tensor::new(1, e.len(), e.iter().map(|v| v / s).collect()).unwrap();
    assert!(got.max_abs_diff(&expect).unwrap() <= SHORTCUT_TOL);
}

/// Node-level output of one inception block in eval mode: the concatenated
/// tributaries and, separately, the trailing convolution on top.
fn inception_block_nodes(m: &Model<f64>, g: &Graph) -> (Tensor<f64>, Tensor<f64>) {
    let Block::Inception {
        tributaries,
        trailing,
    } = &m.blocks()[0]
    else {
        panic!()
    };
    let batch = make_batch::<f64>(&[g]).unwrap();
    let mut bn = m.bn_states().to_vec();
    let store = m.params();
    let mut tape = Tape::new();
    let mut unit = |tape: &mut Tape<f64>, u: &ConvUnit, x: Var| -> Var {
        let c = cheb_conv(tape, store, &batch.laplacian, x, &u.conv)
            .unwrap()
            .out;
        let ga = tape.param(store, u.gamma);
        let be = tape.param(store, u.beta);
        let y = tape
            .batch_norm(c, ga, be, &mut bn[u.bn], Mode::Eval)
            .unwrap();
        tape.relu(y)
    };
    let x = tape.input(batch.features.clone());
    let mut outs = Vec::new();
    for t in tributaries {
        let mut h = x;
        for u in t {
            h = unit(&mut tape, u, h);
        }
        outs.push(h);
    }
    let cat = tape.concat_columns(&outs).unwrap();
    let out = unit(&mut tape, trailing, cat);
    (tape.value(cat).clone(), tape.value(out).clone())
}

#[test]
fn inception_block_is_local() {
    let mut r = rng(8);
    let n = 60;
    let edges: Vec<_> = (1..n).map(|i| (i - 1, i)).collect();
    let g = Graph::new(n, &edges, random_tensor(&mut r, n, 3, 1.0), 0).unwrap();
    let spec = ModelSpec::new(Architecture::Inception, 2).with_depth(3);
    let mut m = build_model::<f64>(&spec, 3).unwrap();
    randomize_running_stats(&mut m, &mut r);
    let (cat0, out0) = inception_block_nodes(&m, &g);
    let j = 5;
    let mut x = g.features().clone();
    x.row_mut(j)[1] += 1.0;
    let (cat1, out1) = inception_block_nodes(&m, &g.with_features(x).unwrap());
    let row_change = |a: &Tensor<f64>, b: &Tensor<f64>, i: usize| {
        a.row(i)
            .iter()
            .zip(b.row(i))
            .map(|(p, q)| (p - q).abs())
            .fold(0.0, f64::max)
    };
    let reach = 2 * 9;
    let with_trailing = reach + INCEPTION_TRAILING_K;
    for i in 0..n {
        let dist = i.abs_diff(j);
        if dist > reach {
            assert!(
                row_change(&cat0, &cat1, i) <= LOCALITY_TOL,
                "concat row {i}"
            );
        }
        if dist > with_trailing {
            assert!(row_change(&out0, &out1, i) <= LOCALITY_TOL, "block row {i}");
        }
    }
    assert!(row_change(&cat0, &cat1, j) > 0.0);

    // the composed block agrees with the model's own forward
    let single = Graph::new(n, &edges, g.features().clone(), 0).unwrap();
    let (_, out) = inception_block_nodes(&m, &single);
    let mut tape = Tape::new();
    let batch = make_batch::<f64>(&[&single]).unwrap();
    let p = m.forward(&mut tape, &batch, Mode::Eval, &mut r).unwrap();
    let (w, b) = m.fc();
    let mean: Vec<f64> = (0..out.cols())
        .map(|c| (0..n).map(|i| out.get(i, c)).sum::<f64>() / n as f64)
        .collect();
    let logits = Tensor::new(1, mean.len(), mean)
        .unwrap()
        .matmul(m.params().get(w))
        .unwrap()
        .add(m.params().get(b))
        .unwrap();
    let z = logits.data()[1] - logits.data()[0];
    let probs = tape.value(p);
    let expect_p1 = 1.0 / (1.0 + (-z).exp());
    assert!((probs.get(0, 1) - expect_p1).abs() <= 1e-12);
}
