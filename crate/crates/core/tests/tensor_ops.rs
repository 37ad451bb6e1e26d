use std::sync::Arc;

use graphcnn::tensor::BatchNormState;
use graphcnn::verify::{op_grad_check, GRAD_TOLERANCE, OP_NAMES};
use graphcnn::{Error, Mode, ParamStore, Tape, Tensor};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const EXACT: f64 = 1e-12;

fn t(rows: &[&[f64]]) -> Tensor<f64> {
    Tensor::from_f64_rows(rows).unwrap()
}

fn close(a: &Tensor<f64>, b: &Tensor<f64>, tol: f64) -> bool {
    a.max_abs_diff(b).unwrap() <= tol
}

#[test]
fn matmul_by_identity() {
    let mut tape = Tape::<f64>::new();
    let b = t(&[&[1.0, -2.0], &[3.5, 0.0], &[0.25, 7.0]]);
    let i = tape.input(Tensor::identity(3));
    let bv = tape.input(b.clone());
    let out = tape.matmul(i, bv).unwrap();
    assert_eq!(tape.value(out), &b);
}

#[test]
fn mismatched_shapes_are_rejected() {
    let mut tape = Tape::<f64>::new();
    let a = tape.input(Tensor::zeros(2, 3));
    let b = tape.input(Tensor::zeros(2, 3));
    assert!(matches!(tape.matmul(a, b), Err(Error::Shape(_))));
    let c = tape.input(Tensor::zeros(3, 3));
    assert!(matches!(tape.add(a, c), Err(Error::Shape(_))));
    assert!(matches!(tape.concat_columns(&[a, c]), Err(Error::Shape(_))));
}

#[test]
fn concat_preserves_column_blocks() {
    let mut tape = Tape::<f64>::new();
    let a = t(&[&[1.0, 2.0], &[3.0, 4.0]]);
    let b = t(&[&[5.0, 6.0, 7.0], &[8.0, 9.0, 10.0]]);
    let (av, bv) = (tape.input(a.clone()), tape.input(b.clone()));
    let c = tape.concat_columns(&[av, bv]).unwrap();
    let v = tape.value(c);
    assert_eq!(v.shape(), [2, 5]);
    assert_eq!(v.columns(0, 2).unwrap(), a);
    assert_eq!(v.columns(2, 3).unwrap(), b);
}

#[test]
fn relu_example() {
    let mut tape = Tape::<f64>::new();
    let x = tape.input(t(&[&[-1.0, 0.0, 2.0]]));
    let y = tape.relu(x);
    assert_eq!(tape.value(y).data(), &[0.0, 0.0, 2.0]);
}

fn bn_once(x: Tensor<f64>, state: &mut BatchNormState<f64>, mode: Mode) -> Tensor<f64> {
    let c = x.cols();
    let mut tape = Tape::<f64>::new();
    let xv = tape.input(x);
    let g = tape.input(Tensor::ones(1, c));
    let b = tape.input(Tensor::zeros(1, c));
    let y = tape.batch_norm(xv, g, b, state, mode).unwrap();
    tape.value(y).clone()
}

#[test]
fn nan_is_not_swallowed() {
    let mut tape = Tape::<f64>::new();
    let x = tape.input(t(&[&[f64::NAN, -1.0]]));
    let y = tape.relu(x);
    assert!(tape.value(y).get(0, 0).is_nan());
    let p = tape.softmax_rows(x);
    let l = tape.cross_entropy(p, &[1]).unwrap();
    assert!(tape.value(l).item().unwrap().is_nan());
}

#[test]
fn batch_norm_train_examples() {
    let mut state = BatchNormState::new(1);
    let y = bn_once(t(&[&[3.0], &[3.0], &[3.0]]), &mut state, Mode::Train);
    assert!(y.data().iter().all(|&v| v == 0.0));

    let mut state = BatchNormState::new(1);
    let y = bn_once(t(&[&[-1.0], &[1.0]]), &mut state, Mode::Train);
    // unit biased variance: only ε separates the result from [-1, 1]
    let expect = 1.0 / (1.0 + 1e-5f64).sqrt();
    assert!((y.get(0, 0) + expect).abs() <= EXACT);
    assert!((y.get(1, 0) - expect).abs() <= EXACT);
    assert!((y.get(1, 0) - 1.0).abs() <= 1e-5);
}

#[test]
fn batch_norm_updates_running_stats_in_train_mode_only() {
    let mut state = BatchNormState::new(1);
    bn_once(t(&[&[1.0], &[3.0]]), &mut state, Mode::Train);
    // momentum 0.9: 0.9 * 0 + 0.1 * 2 and 0.9 * 1 + 0.1 * 1
    assert!((state.mean[0] - 0.2).abs() <= EXACT);
    assert!((state.var[0] - 1.0).abs() <= EXACT);
    let before = state.clone();
    bn_once(t(&[&[10.0], &[30.0]]), &mut state, Mode::Eval);
    assert_eq!(state, before);
}

#[test]
fn batch_norm_eval_uses_running_stats() {
    let mut state = BatchNormState::new(1);
    state.mean[0] = 1.0;
    state.var[0] = 4.0;
    let mut tape = Tape::<f64>::new();
    let xv = tape.input(t(&[&[3.0], &[-1.0]]));
    let g = tape.input(t(&[&[2.0]]));
    let b = tape.input(t(&[&[0.5]]));
    let y = tape.batch_norm(xv, g, b, &mut state, Mode::Eval).unwrap();
    let s = (4.0 + 1e-5f64).sqrt();
    let expect = [2.0 / s * 2.0 + 0.5, -2.0 / s * 2.0 + 0.5];
    for (got, want) in tape.value(y).data().iter().zip(expect) {
        assert!((got - want).abs() <= EXACT);
    }
}

#[test]
fn batch_norm_rejects_empty_input() {
    let mut state = BatchNormState::new(2);
    let mut tape = Tape::<f64>::new();
    let x = tape.input(Tensor::zeros(0, 2));
    let g = tape.input(Tensor::ones(1, 2));
    let b = tape.input(Tensor::zeros(1, 2));
    let r = tape.batch_norm(x, g, b, &mut state, Mode::Train);
    assert!(matches!(r, Err(Error::Shape(_))));
}

#[test]
fn dropout_identity_cases() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = t(&[&[1.0, -2.0], &[3.0, 4.0]]);
    let mut tape = Tape::<f64>::new();
    let xv = tape.input(x.clone());
    let a = tape.dropout(xv, 0.0, Mode::Train, &mut rng).unwrap();
    let b = tape.dropout(xv, 0.7, Mode::Eval, &mut rng).unwrap();
    assert_eq!(tape.value(a), &x);
    assert_eq!(tape.value(b), &x);
    assert!(matches!(
        tape.dropout(xv, 1.0, Mode::Train, &mut rng),
        Err(Error::Parameter(_))
    ));
}

#[test]
fn dropout_drops_half_and_rescales() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut tape = Tape::<f64>::new();
    let xv = tape.input(Tensor::ones(1000, 100));
    let y = tape.dropout(xv, 0.5, Mode::Train, &mut rng).unwrap();
    let v = tape.value(y);
    let zeros = v.data().iter().filter(|&&e| e == 0.0).count();
    let frac = zeros as f64 / v.len() as f64;
    assert!((frac - 0.5).abs() <= 0.01, "drop fraction {frac}");
    assert!(v.data().iter().all(|&e| e == 0.0 || e == 2.0));
}

#[test]
fn softmax_examples() {
    let mut tape = Tape::<f64>::new();
    let x = tape.input(t(&[&[0.0, 0.0], &[1000.0, 1000.0], &[0.0, 3f64.ln()]]));
    let p = tape.softmax_rows(x);
    let expect = t(&[&[0.5, 0.5], &[0.5, 0.5], &[0.25, 0.75]]);
    assert!(close(tape.value(p), &expect, EXACT));
}

#[test]
fn segment_mean_examples() {
    let mut tape = Tape::<f64>::new();
    let x = tape.input(t(&[&[2.0], &[4.0], &[10.0]]));
    let ids: Arc<[usize]> = Arc::from(vec![0, 0, 1]);
    let m = tape.segment_mean(x, &ids, 2).unwrap();
    assert_eq!(tape.value(m).data(), &[3.0, 10.0]);

    let y = tape.input(t(&[&[1.0, 2.0], &[3.0, 6.0]]));
    let one: Arc<[usize]> = Arc::from(vec![0, 0]);
    let m = tape.segment_mean(y, &one, 1).unwrap();
    assert_eq!(tape.value(m).data(), &[2.0, 4.0]);

    let empty: Arc<[usize]> = Arc::from(vec![0, 0, 2]);
    assert!(matches!(
        tape.segment_mean(x, &empty, 3),
        Err(Error::Shape(_))
    ));
}

#[test]
fn backward_of_linear_sum_is_outer_product() {
    let mut store = ParamStore::<f64>::new();
    let w = store.add("w", t(&[&[0.3, -0.1], &[2.0, 1.0], &[0.0, 5.0]]));
    let unused = store.add("unused", Tensor::ones(2, 2));
    let x = t(&[&[1.5], &[-2.0]]);
    let mut tape = Tape::<f64>::new();
    let wv = tape.param(&store, w);
    let xv = tape.input(x.clone());
    let y = tape.matmul(wv, xv).unwrap();
    let loss = tape.sum(y);
    let grads = tape.backward(loss, &store).unwrap();
    let expect = Tensor::ones(3, 1).matmul(&x.transpose()).unwrap();
    assert_eq!(grads.get(w), &expect);
    assert!(grads.get(unused).data().iter().all(|&g| g == 0.0));
}

#[test]
fn backward_needs_scalar_loss() {
    let mut store = ParamStore::<f64>::new();
    let w = store.add("w", Tensor::ones(2, 2));
    let mut tape = Tape::<f64>::new();
    let wv = tape.param(&store, w);
    assert!(matches!(tape.backward(wv, &store), Err(Error::Shape(_))));
}

#[test]
fn fan_out_accumulates() {
    let mut store = ParamStore::<f64>::new();
    let w = store.add("w", t(&[&[2.0]]));
    let mut tape = Tape::<f64>::new();
    let a = tape.param(&store, w);
    let b = tape.param(&store, w);
    let s = tape.add(a, a).unwrap();
    let s = tape.add(s, b).unwrap();
    let loss = tape.sum(s);
    assert_eq!(tape.backward(loss, &store).unwrap().get(w).data(), &[3.0]);
}

#[test]
fn forward_is_deterministic_given_seed() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut tape = Tape::new();
        let x = tape.input(Tensor::filled(20, 20, 1.5));
        let y = tape.dropout(x, 0.3, Mode::Train, &mut rng).unwrap();
        let z = tape.softmax_rows(y);
        tape.value(z).clone()
    };
    assert_eq!(run(), run());
}

#[test]
fn every_op_passes_gradient_check() {
    for (i, name) in OP_NAMES.iter().enumerate() {
        let rep = op_grad_check(name, 20, 500 + i as u64).unwrap();
        assert!(
            rep.max_rel_error <= GRAD_TOLERANCE,
            "{name}: {:e} ({rep:?})",
            rep.max_rel_error
        );
        assert!(rep.checked > 0, "{name} checked nothing");
    }
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one(rows in prop::collection::vec(
        prop::collection::vec(-1e4f64..1e4, 1..8), 1..6)
    ) {
        let width = rows[0].len();
        let rows: Vec<Vec<f64>> = rows
            .into_iter()
            .map(|mut r| { r.resize(width, 0.0); r })
            .collect();
        let x = Tensor::from_rows(&rows).unwrap();
        let mut tape = Tape::new();
        let xv = tape.input(x);
        let p = tape.softmax_rows(xv);
        let p = tape.value(p);
        for r in 0..p.rows() {
            prop_assert!(p.row(r).iter().all(|&v| v >= 0.0));
            let s: f64 = p.row(r).iter().sum();
            prop_assert!((s - 1.0).abs() <= EXACT);
        }
    }

    #[test]
    fn concat_backward_splits_exactly(
        n in 1usize..5,
        widths in prop::collection::vec(1usize..4, 1..4),
        seed in any::<u64>(),
    ) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let total: usize = widths.iter().sum();
        let mut rand_t = |r: usize, c: usize| {
            let d = (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect();
            Tensor::new(r, c, d).unwrap()
        };
        let (a, v) = (rand_t(n, n), rand_t(total, 2));
        let full = rand_t(n, total);
        let mut store = ParamStore::new();
        let whole = store.add("whole", full.clone());
        let mut start = 0;
        let ids: Vec<_> = widths
            .iter()
            .enumerate()
            .map(|(i, &w)| {
                let id = store.add(format!("p{i}"), full.columns(start, w).unwrap());
                start += w;
                id
            })
            .collect();
        // loss = sum(A C V) for C given whole or as concatenated parts
        let loss_of = |tape: &mut Tape<f64>, c| {
            let av = tape.input(a.clone());
            let vv = tape.input(v.clone());
            let ac = tape.matmul(av, c).unwrap();
            let acv = tape.matmul(ac, vv).unwrap();
            tape.sum(acv)
        };
        let mut tape = Tape::new();
        let c = tape.param(&store, whole);
        let loss = loss_of(&mut tape, c);
        let reference = tape.backward(loss, &store).unwrap().get(whole).clone();

        let mut tape = Tape::new();
        let parts: Vec<_> = ids.iter().map(|&id| tape.param(&store, id)).collect();
        let c = tape.concat_columns(&parts).unwrap();
        let loss = loss_of(&mut tape, c);
        let grads = tape.backward(loss, &store).unwrap();
        let mut start = 0;
        for (id, &w) in ids.iter().zip(&widths) {
            prop_assert_eq!(grads.get(*id), &reference.columns(start, w).unwrap());
            start += w;
        }
    }

    #[test]
    fn segment_mean_ignores_row_order(
        ids in prop::collection::vec(0usize..3, 3..12),
        seed in any::<u64>(),
    ) {
        use rand::seq::SliceRandom;
        use rand::Rng;
        let mut ids = ids;
        ids[0] = 0;
        ids[1] = 1;
        ids[2] = 2;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = ids.len();
        let x: Vec<f64> = (0..n * 2).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let x = Tensor::new(n, 2, x).unwrap();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let px = x.select_rows(&order);
        let pids: Vec<usize> = order.iter().map(|&i| ids[i]).collect();
        let mut tape = Tape::new();
        let a = tape.input(x);
        let b = tape.input(px);
        let ma = tape.segment_mean(a, &Arc::from(ids), 3).unwrap();
        let mb = tape.segment_mean(b, &Arc::from(pids), 3).unwrap();
        prop_assert!(close(tape.value(ma), tape.value(mb), EXACT));
    }
}
