//! Central finite-difference checks of the reverse-mode gradients, in f64.
//!
//! Every op kind is exercised inside one composite graph; the graph builder
//! is re-run for the perturbed parameter values, so the check covers forward
//! purity as well.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use smbi_autodiff::{Tape, Tensor, VarId};

type Builder = fn(&mut Tape<f64>, &[Tensor<f64>]) -> (VarId, Vec<VarId>);

fn eval(build: Builder, leaves: &[Tensor<f64>]) -> (f64, Vec<Tensor<f64>>) {
    let mut tape = Tape::new();
    let (loss, ids) = build(&mut tape, leaves);
    let value = tape.value(loss).scalar_value().expect("scalar loss");
    let grads = tape.backward(loss).unwrap();
    (value, ids.iter().map(|&id| grads.grad(id)).collect())
}

fn fd_check(build: Builder, leaves: &[Tensor<f64>], tol: f64) {
    let (_, grads) = eval(build, leaves);
    let h = 1e-5;
    for li in 0..leaves.len() {
        for ei in 0..leaves[li].elems() {
            let mut plus = leaves.to_vec();
            plus[li].data_mut()[ei] += h;
            let (vp, _) = eval(build, &plus);
            let mut minus = leaves.to_vec();
            minus[li].data_mut()[ei] -= h;
            let (vm, _) = eval(build, &minus);
            let fd = (vp - vm) / (2.0 * h);
            let an = grads[li].data()[ei];
            let denom = fd.abs().max(an.abs()).max(1e-6);
            assert!(
                ((fd - an) / denom).abs() < tol,
                "leaf {li} elem {ei}: fd {fd} vs analytic {an}"
            );
        }
    }
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

#[test]
fn composite_graph_matches_finite_differences() {
    // FC -> selu -> reshape -> upsample -> conv -> relu -> l1_mean against a
    // constant, combined with a scaled abs_diff/l1 branch and a mul.
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let leaves = vec![
        rand_tensor(&mut rng, vec![3]),          // x
        rand_tensor(&mut rng, vec![8, 3]),       // W
        rand_tensor(&mut rng, vec![8]),          // b
        rand_tensor(&mut rng, vec![3, 3, 2, 2]), // conv kernels
        rand_tensor(&mut rng, vec![2]),          // conv bias
        rand_tensor(&mut rng, vec![4, 4, 2]),    // target
    ];
    fn build(tape: &mut Tape<f64>, leaves: &[Tensor<f64>]) -> (VarId, Vec<VarId>) {
        let ids: Vec<VarId> = leaves.iter().map(|t| tape.leaf(t.clone())).collect();
        let (x, w, b, k, cb, target) = (ids[0], ids[1], ids[2], ids[3], ids[4], ids[5]);
        let fc = tape.fully_connected(x, w, b).unwrap();
        let act = tape.selu(fc);
        let img = tape.reshape(act, vec![2, 2, 2]).unwrap();
        let up = tape.upsample2x(img).unwrap();
        let conv = tape.conv2d(up, k, cb).unwrap();
        let pos = tape.relu(conv);
        let rec = tape.l1_mean(pos, target).unwrap();
        let diff = tape.abs_diff(pos, target).unwrap();
        let err = tape.l1_mean(diff, target).unwrap();
        let scaled = tape.scale(err, 0.7);
        let both = tape.add(rec, scaled).unwrap();
        let loss = tape.mul(both, both).unwrap();
        (loss, ids)
    }
    fd_check(build, &leaves, 1e-5);
}

#[test]
fn stop_gradient_detaches_l1_target() {
    let mut rng = ChaCha8Rng::seed_from_u64(43);
    let leaves = vec![
        rand_tensor(&mut rng, vec![6]), // prediction source
        rand_tensor(&mut rng, vec![6]), // error prediction
    ];
    fn build(tape: &mut Tape<f64>, leaves: &[Tensor<f64>]) -> (VarId, Vec<VarId>) {
        let ids: Vec<VarId> = leaves.iter().map(|t| tape.leaf(t.clone())).collect();
        let detached = tape.stop_gradient(ids[0]);
        let loss = tape.l1_mean(ids[1], detached).unwrap();
        (loss, ids)
    }
    // The analytic gradient w.r.t. the detached source must be zero
    // everywhere even though perturbing it changes the loss value.
    let (base, grads) = eval(build, &leaves);
    assert!(grads[0].data().iter().all(|&g| g == 0.0));
    assert!(grads[1].data().iter().any(|&g| g != 0.0));
    let mut nudged = leaves.clone();
    nudged[0].data_mut()[0] += 0.25;
    let (moved, _) = eval(build, &nudged);
    assert_ne!(base, moved);
}

#[test]
fn forward_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    let x = rand_tensor(&mut rng, vec![5, 5, 3]);
    let k = rand_tensor(&mut rng, vec![3, 3, 3, 4]);
    let b = rand_tensor(&mut rng, vec![4]);
    let run = || {
        let mut tape = Tape::new();
        let xi = tape.leaf(x.clone());
        let ki = tape.leaf(k.clone());
        let bi = tape.leaf(b.clone());
        let c = tape.conv2d(xi, ki, bi).unwrap();
        let s = tape.selu(c);
        tape.value(s).data().to_vec()
    };
    assert_eq!(run(), run());
}
