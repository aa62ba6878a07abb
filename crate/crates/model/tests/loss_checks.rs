//! Objective contracts: cross-entropy closed forms and hand sums,
//! contrastive fixtures, total-loss arithmetic and embedding geometry.

use ctxseg_core::{ParamStore, Rng, Session, Tape, Tensor};
use ctxseg_data::{Mask, Vocab};
use ctxseg_model::embeddings::SimilarityPairs;
use ctxseg_model::losses::{contrastive_loss, cross_entropy_loss, total_loss, LossConfig};
use ctxseg_model::ModelError;
use proptest::prelude::*;

fn empty_session() -> (Tape<f64>, ParamStore<f64>) {
    (Tape::new(), ParamStore::new())
}

fn mask_of(values: &[u8], w: u32, h: u32) -> Mask {
    Mask { width: w, height: h, data: values.to_vec() }
}

#[test]
fn saturated_one_hot_logits_give_near_zero_loss() {
    let (tape, store) = empty_session();
    let sess = Session::new(&tape, &store);
    // true logit 100, rest 0
    let logits = tape.constant(
        Tensor::from_vec(vec![2, 3], vec![100.0, 0.0, 0.0, 0.0, 0.0, 100.0]).unwrap(),
    );
    let mask = mask_of(&[0, 2], 2, 1);
    let loss = cross_entropy_loss(&sess, logits, &mask, &LossConfig::default()).unwrap();
    assert!(tape.scalar_value(loss) <= 1e-8);
}

#[test]
fn uniform_logits_give_ln_k_for_k_2_to_10() {
    for k in 2..=10usize {
        let (tape, store) = empty_session();
        let sess = Session::new(&tape, &store);
        let logits = tape.constant(Tensor::filled(vec![4, k], 0.7).unwrap());
        let mask = mask_of(&[0, (k - 1) as u8, 1, 0], 2, 2);
        let loss = cross_entropy_loss(&sess, logits, &mask, &LossConfig::default()).unwrap();
        let got = tape.scalar_value(loss);
        assert!(
            (got - (k as f64).ln()).abs() <= 1e-12,
            "K={k}: got {got}, want ln K = {}",
            (k as f64).ln()
        );
    }
}

#[test]
fn random_case_matches_per_pixel_hand_summation() {
    let mut rng = Rng::new(42, 0);
    let (tape, store) = empty_session();
    let sess = Session::new(&tape, &store);
    let raw: Vec<f64> = (0..9 * 3).map(|_| rng.uniform_in(-2.0, 2.0)).collect();
    let targets: Vec<u8> = (0..9).map(|_| rng.below(3) as u8).collect();
    let logits = tape.constant(Tensor::from_vec(vec![9, 3], raw.clone()).unwrap());
    let mask = mask_of(&targets, 3, 3);
    let loss = cross_entropy_loss(&sess, logits, &mask, &LossConfig::default()).unwrap();

    // scalar oracle
    let mut total = 0.0;
    for (row, &t) in raw.chunks_exact(3).zip(&targets) {
        let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row.iter().map(|v| (v - mx).exp()).sum();
        let log_p = row[t as usize] - mx - z.ln();
        total += -log_p;
    }
    total /= 9.0;
    assert!((tape.scalar_value(loss) - total).abs() <= 1e-12);
}

#[test]
fn mask_value_outside_vocabulary_is_an_error() {
    let (tape, store) = empty_session();
    let sess = Session::new(&tape, &store);
    let logits = tape.constant(Tensor::zeros(vec![2, 3]));
    let mask = mask_of(&[0, 5], 2, 1);
    assert!(cross_entropy_loss(&sess, logits, &mask, &LossConfig::default()).is_err());
}

fn pairs(vocab_labels: &[&str], positive: &[[&str; 2]]) -> (Vocab, SimilarityPairs) {
    let vocab = Vocab::new(vocab_labels.iter().map(|s| s.to_string()).collect()).unwrap();
    let p: Vec<[String; 2]> =
        positive.iter().map(|[a, b]| [a.to_string(), b.to_string()]).collect();
    let sp = SimilarityPairs::from_labels(&p, &vocab).unwrap();
    (vocab, sp)
}

#[test]
fn identical_positive_pair_contributes_zero() {
    let (_, sp) = pairs(&["a", "b"], &[["a", "b"]]);
    let (tape, store) = empty_session();
    let sess = Session::new(&tape, &store);
    let row = Tensor::from_vec(vec![1, 3], vec![0.6, -0.8, 0.0]).unwrap();
    let va = tape.constant(row.clone());
    let vb = tape.constant(row);
    let loss =
        contrastive_loss(&sess, &[(0, va), (1, vb)], &sp, &LossConfig::default()).unwrap();
    assert_eq!(tape.scalar_value(loss), 0.0, "identical positives contribute exactly zero");
}

#[test]
fn distant_negative_pair_contributes_zero() {
    let (_, sp) = pairs(&["a", "b"], &[]);
    let (tape, store) = empty_session();
    let sess = Session::new(&tape, &store);
    // antipodal unit vectors: normalized distance 2 >= margin 1
    let va = tape.constant(Tensor::from_vec(vec![1, 2], vec![1.0, 0.0]).unwrap());
    let vb = tape.constant(Tensor::from_vec(vec![1, 2], vec![-1.0, 0.0]).unwrap());
    let loss =
        contrastive_loss(&sess, &[(0, va), (1, vb)], &sp, &LossConfig::default()).unwrap();
    assert_eq!(tape.scalar_value(loss), 0.0, "hinge inactive at d >= margin");
}

#[test]
fn mixed_fixture_matches_hand_arithmetic() {
    // classes: a ~ b positive; c negative to both
    let (_, sp) = pairs(&["a", "b", "c"], &[["a", "b"]]);
    let (tape, store) = empty_session();
    let sess = Session::new(&tape, &store);
    let ea = [1.0, 0.0];
    let eb = [0.8, 0.6]; // unit
    let ec = [0.0, 1.0];
    let va = tape.constant(Tensor::from_vec(vec![1, 2], ea.to_vec()).unwrap());
    let vb = tape.constant(Tensor::from_vec(vec![1, 2], eb.to_vec()).unwrap());
    let vc = tape.constant(Tensor::from_vec(vec![1, 2], ec.to_vec()).unwrap());
    let cfg = LossConfig { lambda: 0.1, margin: 1.0, class_weights: None };
    let loss = contrastive_loss(&sess, &[(0, va), (1, vb), (2, vc)], &sp, &cfg).unwrap();

    let dist = |x: [f64; 2], y: [f64; 2]| ((x[0] - y[0]).powi(2) + (x[1] - y[1]).powi(2)).sqrt();
    let d_ab2 = (ea[0] - eb[0]).powi(2) + (ea[1] - eb[1]).powi(2);
    let d_ac = (dist(ea, ec).powi(2) + 1e-12).sqrt();
    let d_bc = (dist(eb, ec).powi(2) + 1e-12).sqrt();
    let hinge = |d: f64| (1.0 - d).max(0.0).powi(2);
    let expect = (d_ab2 + hinge(d_ac) + hinge(d_bc)) / 3.0;
    assert!((tape.scalar_value(loss) - expect).abs() <= 1e-12);
}

#[test]
fn no_pairs_is_an_error() {
    let (_, sp) = pairs(&["a", "b"], &[]);
    let (tape, store) = empty_session();
    let sess = Session::new(&tape, &store);
    let va = tape.constant(Tensor::from_vec(vec![1, 2], vec![1.0, 0.0]).unwrap());
    assert!(matches!(
        contrastive_loss(&sess, &[(0, va)], &sp, &LossConfig::default()),
        Err(ModelError::NoPairs)
    ));
}

#[test]
fn total_loss_arithmetic() {
    let (tape, store) = empty_session();
    let sess = Session::new(&tape, &store);
    let _ = &sess;
    let ce = tape.constant(Tensor::scalar(2.0).unwrap());
    let con = tape.constant(Tensor::scalar(4.0).unwrap());

    let l0 = total_loss(&tape, ce, con, &LossConfig { lambda: 0.0, ..Default::default() }).unwrap();
    assert_eq!(tape.scalar_value(l0), 2.0, "lambda=0 reduces to the CE term exactly");

    let zero_ce = tape.constant(Tensor::scalar(0.0).unwrap());
    let l1 =
        total_loss(&tape, zero_ce, con, &LossConfig { lambda: 1.0, ..Default::default() }).unwrap();
    assert_eq!(tape.scalar_value(l1), 4.0);

    let l_half =
        total_loss(&tape, ce, con, &LossConfig { lambda: 0.5, ..Default::default() }).unwrap();
    assert_eq!(tape.scalar_value(l_half), 4.0);
}

proptest! {
    #[test]
    fn total_loss_is_linear_in_lambda(
        l1 in 0.0f64..3.0,
        l2 in 0.0f64..3.0,
        ce in -2.0f64..2.0,
        con in 0.0f64..5.0,
    ) {
        let (tape, store) = empty_session();
        let sess = Session::new(&tape, &store);
        let _ = &sess;
        let vce = tape.constant(Tensor::scalar(ce).unwrap());
        let vcon = tape.constant(Tensor::scalar(con).unwrap());
        let at = |lambda: f64| {
            let cfg = LossConfig { lambda, ..Default::default() };
            tape.scalar_value(total_loss(&tape, vce, vcon, &cfg).unwrap())
        };
        let lhs = at(l1) + at(l2);
        let rhs = 2.0 * at((l1 + l2) / 2.0);
        prop_assert!((lhs - rhs).abs() <= 1e-9);
    }
}

/// A gradient step on an isolated positive pair strictly decreases the
/// normalized distance; on a near negative pair it strictly increases it.
#[test]
fn contrastive_gradient_moves_pairs_the_right_way() {
    let (_, sp_pos) = pairs(&["a", "b"], &[["a", "b"]]);
    let (_, sp_neg) = pairs(&["a", "b"], &[]);
    let cfg = LossConfig::default();

    let normalized_distance = |a: &[f64], b: &[f64]| {
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let (na, nb) = (norm(a), norm(b));
        a.iter()
            .zip(b)
            .map(|(&x, &y)| (x / na - y / nb).powi(2))
            .sum::<f64>()
            .sqrt()
    };

    for (positive, seed) in [(true, 1u64), (false, 2u64)] {
        let mut rng = Rng::new(seed, 0);
        let mut ea: Vec<f64> = (0..6).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
        // negatives start near each other so the hinge is active (d < margin)
        let mut eb: Vec<f64> = if positive {
            (0..6).map(|_| rng.uniform_in(-1.0, 1.0)).collect()
        } else {
            ea.iter().map(|&v| v + rng.uniform_in(-0.1, 0.1)).collect()
        };
        let sp = if positive { &sp_pos } else { &sp_neg };
        let d0 = normalized_distance(&ea, &eb);
        for _ in 0..25 {
            let tape = Tape::new();
            let store = ParamStore::new();
            let sess = Session::new(&tape, &store);
            let va = tape.leaf(Tensor::from_vec(vec![1, 6], ea.clone()).unwrap(), true);
            let vb = tape.leaf(Tensor::from_vec(vec![1, 6], eb.clone()).unwrap(), true);
            let loss = contrastive_loss(&sess, &[(0, va), (1, vb)], sp, &cfg).unwrap();
            let grads = tape.backward(loss).unwrap();
            let ga = grads.wrt_or_zeros(va, 6);
            let gb = grads.wrt_or_zeros(vb, 6);
            let before = normalized_distance(&ea, &eb);
            for i in 0..6 {
                ea[i] -= 0.05 * ga[i];
                eb[i] -= 0.05 * gb[i];
            }
            let after = normalized_distance(&ea, &eb);
            if positive {
                assert!(after < before, "positive pair must contract: {before} -> {after}");
            } else if before < cfg.margin {
                assert!(after > before, "near negative pair must expand: {before} -> {after}");
            }
        }
        let d_final = normalized_distance(&ea, &eb);
        if positive {
            assert!(d_final < d0);
        } else {
            assert!(d_final > d0);
        }
    }
}
