//! Shared helpers for module-level finite-difference checks.

use ctxseg_core::{ParamStore, Rng, Session, Tape, Var};

/// Scalar loss of a forward pass: weighted sum of the output with a fixed
/// random probe, which makes every output coordinate matter.
pub fn probe_loss(
    tape: &Tape<f64>,
    out: Var,
    probe_seed: u64,
) -> Var {
    let numel = tape.numel(out);
    let mut rng = Rng::new(probe_seed, 77);
    let shape = tape.shape(out);
    let probe = ctxseg_core::Tensor::from_fn(shape, |_| rng.uniform_in(-1.0, 1.0)).unwrap();
    let w = tape.constant(probe);
    let prod = tape.mul(out, w).unwrap();
    debug_assert_eq!(numel, tape.numel(out));
    tape.sum(prod).unwrap()
}

/// Central-difference check of a forward pass against every trainable
/// parameter in the store, on a sampled coordinate subset.
///
/// `forward` must build the full graph on the given session and return the
/// scalar loss. Returns the max relative error over sampled coordinates.
pub fn gradcheck_params(
    store: &mut ParamStore<f64>,
    forward: &dyn Fn(&Session<'_, '_, f64>) -> Var,
    coords_per_param: usize,
    seed: u64,
) -> f64 {
    let h = 1e-5;

    // analytic gradients, indexed by param slot
    let analytic: Vec<Vec<f64>> = {
        let tape = Tape::new();
        let sess = Session::new(&tape, store);
        let loss = forward(&sess);
        let grads = tape.backward(loss).unwrap();
        let mut blocks: Vec<Vec<f64>> =
            store.iter().map(|(_, e)| vec![0.0; e.value.numel()]).collect();
        for (pid, var) in sess.bound() {
            let numel = store.get(pid).value.numel();
            blocks[pid.0] = grads.wrt_or_zeros(var, numel);
        }
        blocks
    };

    let eval = |store: &ParamStore<f64>| -> f64 {
        let tape = Tape::new();
        let sess = Session::new(&tape, store);
        let loss = forward(&sess);
        tape.scalar_value(loss)
    };

    let mut rng = Rng::new(seed, 13);
    let mut worst = 0.0f64;
    let ids: Vec<_> = store.iter().filter(|(_, e)| e.trainable).map(|(id, _)| id).collect();
    for pid in ids {
        let numel = store.get(pid).value.numel();
        for _ in 0..coords_per_param.min(numel) {
            let i = rng.below(numel);
            let shape = store.get(pid).value.shape().to_vec();
            let orig = store.get(pid).value.data().to_vec();

            let mut plus = orig.clone();
            plus[i] += h;
            store.set_value(pid, ctxseg_core::Tensor::from_vec(shape.clone(), plus).unwrap());
            let fp = eval(store);

            let mut minus = orig.clone();
            minus[i] -= h;
            store.set_value(pid, ctxseg_core::Tensor::from_vec(shape.clone(), minus).unwrap());
            let fm = eval(store);

            store.set_value(pid, ctxseg_core::Tensor::from_vec(shape, orig).unwrap());

            let numeric = (fp - fm) / (2.0 * h);
            let a = analytic[pid.0][i];
            let denom = a.abs().max(numeric.abs()).max(1.0);
            worst = worst.max((a - numeric).abs() / denom);
        }
    }
    worst
}

/// Deterministic random test image.
pub fn random_image(w: u32, h: u32, seed: u64) -> ctxseg_data::RgbImage {
    let mut rng = Rng::new(seed, 5);
    let mut img = ctxseg_data::RgbImage::new(w, h);
    for v in img.data.iter_mut() {
        *v = rng.below(256) as u8;
    }
    img
}
