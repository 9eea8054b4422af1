use super::*;
use crate::data::{stratified_split, synth_generate, SynthSpec};
use crate::error::Error;
use crate::models::{ModelSpec, ModuleTemplate, Network, ParamKind, ParamStore};
use crate::par::Parallelism;
use crate::tensor::{Tape, Tensor};
use approx::assert_abs_diff_eq;
use proptest::prelude::*;

fn softmax(z: &[f64], tau: f64) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| ((v - m) / tau).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

fn kl_oracle(zt: &[f64], zs: &[f64], tau: f64) -> f64 {
    let p = softmax(zt, tau);
    let q = softmax(zs, tau);
    tau * tau * p.iter().zip(&q).filter(|(a, _)| **a > 0.0).map(|(a, b)| a * (a / b).ln()).sum::<f64>()
}

#[test]
fn cross_entropy_matches_direct_formula() {
    let z = [1.5, -0.3, 0.2];
    let expect = -softmax(&z, 1.0)[0].ln();
    assert_abs_diff_eq!(cross_entropy(&z, 0).unwrap(), expect, epsilon = 1e-12);
    assert!(matches!(cross_entropy(&z, 3), Err(Error::LabelOutOfRange { .. })));
}

#[test]
fn kd_matches_kl_oracle_and_vanishes_on_identical_logits() {
    let zt = [2.0, -1.0, 0.5, 3.0];
    let zs = [0.1, 0.4, -2.0, 1.0];
    for tau in [1.0, 2.0, 8.0] {
        assert_abs_diff_eq!(kd_loss(&zt, &zs, tau).unwrap(), kl_oracle(&zt, &zs, tau), epsilon = 1e-10);
        assert!(kd_loss(&zt, &zt, tau).unwrap().abs() < 1e-12);
    }
    let cfg = DistillConfig { tau: 4.0, alpha: 0.3 };
    let expect = 0.3 * kl_oracle(&zt, &zs, 4.0) + 0.7 * -softmax(&zs, 1.0)[1].ln();
    assert_abs_diff_eq!(total_distill_loss(&zt, &zs, 1, &cfg).unwrap(), expect, epsilon = 1e-10);
    assert!(DistillConfig { tau: 0.0, alpha: 0.5 }.validate().is_err());
    assert!(DistillConfig { tau: 1.0, alpha: 1.5 }.validate().is_err());
    assert!(matches!(kd_loss(&[f64::NAN, 0.0], &[0.0, 0.0], 1.0), Err(Error::NonFinite(_))));
}

#[test]
fn kd_gradient_is_tau_times_probability_gap() {
    let zt = Tensor::<f64>::from_f64(&[2, 3], &[1.0, 0.0, -1.0, 0.5, 0.5, 2.0]).unwrap();
    let zs = [0.3, -0.2, 0.9, -1.0, 0.0, 1.0];
    let tau = 3.0;
    let mut tape = Tape::new();
    let s = tape.leaf(Tensor::from_f64(&[2, 3], &zs).unwrap());
    let l = kd_loss_var(&mut tape, &zt, s, tau).unwrap();
    let g = tape.backward(l).unwrap().take(s).unwrap();
    for r in 0..2 {
        let p = softmax(&zt.to_f64_vec()[r * 3..r * 3 + 3], tau);
        let q = softmax(&zs[r * 3..r * 3 + 3], tau);
        for c in 0..3 {
            // mean over a batch of two rows
            assert_abs_diff_eq!(g.data()[r * 3 + c], tau * (q[c] - p[c]) / 2.0, epsilon = 1e-12);
        }
    }
}

proptest! {
    #[test]
    fn kd_is_nonnegative(zt in prop::collection::vec(-5.0f64..5.0, 4), zs in prop::collection::vec(-5.0f64..5.0, 4), tau in 0.5f64..10.0) {
        prop_assert!(kd_loss(&zt, &zs, tau).unwrap() >= -1e-12);
    }

    #[test]
    fn clipping_bounds_the_norm(v in prop::collection::vec(-10.0f64..10.0, 1..20), max in 0.1f64..5.0) {
        let mut g = vec![Tensor::<f64>::from_f64(&[v.len()], &v).unwrap()];
        let before = clip_global_norm(&mut g, max).unwrap();
        let after = g[0].sq_norm().sqrt();
        prop_assert!(after <= max * (1.0 + 1e-12));
        if before <= max {
            prop_assert_eq!(g[0].to_f64_vec(), v);
        }
    }
}

#[test]
fn adam_follows_scalar_recurrence() {
    let mut store = ParamStore::<f64>::new();
    let id = store.add("w", ParamKind::DenseWeight, Tensor::from_f64(&[2], &[1.0, -0.5]).unwrap());
    let mut state = AdamState::new();
    let (lr, wd) = (0.01, 0.1);
    let mut theta = [1.0f64, -0.5];
    let (mut m, mut v) = ([0.0f64; 2], [0.0f64; 2]);
    for step in 1..=5 {
        let g = [0.3 * step as f64, -0.2];
        adam_step(&mut store, &[(id, Tensor::from_f64(&[2], &g).unwrap())], &mut state, lr, wd).unwrap();
        for i in 0..2 {
            let gd = g[i] + wd * theta[i];
            m[i] = 0.9 * m[i] + 0.1 * gd;
            v[i] = 0.999 * v[i] + 0.001 * gd * gd;
            let mh = m[i] / (1.0 - 0.9f64.powi(step));
            let vh = v[i] / (1.0 - 0.999f64.powi(step));
            theta[i] -= lr * mh / (vh.sqrt() + 1e-8);
        }
    }
    for i in 0..2 {
        assert_abs_diff_eq!(store.value(id).data()[i], theta[i], epsilon = 1e-12);
    }
    let before = store.value(id).clone();
    let bad = Tensor::from_f64(&[2], &[f64::NAN, 0.0]).unwrap();
    assert!(matches!(adam_step(&mut store, &[(id, bad)], &mut state, lr, wd), Err(Error::NonFinite(_))));
    assert_eq!(store.value(id), &before);
    assert_eq!(state.step, 5);
}

#[test]
fn plateau_halves_after_patience_and_floors() {
    let mut p = Plateau::new(1e-3, 0.5, 2, 3e-4).unwrap();
    assert_eq!(p.step(1.0), 1e-3);
    assert_eq!(p.step(1.0), 1e-3);
    assert_eq!(p.step(1.0 - 1e-9), 5e-4); // within tolerance: not an improvement
    assert_eq!(p.bad_epochs(), 0);
    assert_eq!(p.step(0.5), 5e-4);
    assert_eq!(p.step(0.6), 5e-4);
    assert_eq!(p.step(0.6), 3e-4);
    assert!(Plateau::new(1e-3, 1.0, 2, 0.0).is_err());
    assert!(Plateau::new(1e-3, 0.5, 0, 0.0).is_err());
}

#[test]
fn metrics_by_hand() {
    let pred = [0, 1, 1, 2, 0, 1];
    let truth = [0, 1, 0, 2, 0, 2];
    let m = evaluate_metrics(&pred, &truth, 4).unwrap();
    assert_abs_diff_eq!(m.accuracy, 4.0 / 6.0, epsilon = 1e-12);
    assert_eq!(m.confusion[0], vec![2, 1, 0, 0]);
    assert_eq!(m.confusion[2], vec![0, 1, 1, 0]);
    let c1 = &m.per_class[1];
    assert_abs_diff_eq!(c1.precision, 1.0 / 3.0, epsilon = 1e-12);
    assert_abs_diff_eq!(c1.recall, 1.0, epsilon = 1e-12);
    assert_abs_diff_eq!(c1.f1, 0.5, epsilon = 1e-12);
    // class 3 never appears: all zeros
    assert_eq!((m.per_class[3].precision, m.per_class[3].recall, m.per_class[3].f1), (0.0, 0.0, 0.0));
    let f1s = [0.8, 0.5, 2.0 / 3.0, 0.0];
    assert_abs_diff_eq!(m.macro_f1, f1s.iter().sum::<f64>() / 4.0, epsilon = 1e-12);
    assert!(matches!(evaluate_metrics(&[], &[], 2), Err(Error::EmptyInput(_))));
    assert!(matches!(evaluate_metrics(&[0], &[0, 1], 2), Err(Error::Shape(_))));
    assert!(matches!(evaluate_metrics(&[2], &[0], 2), Err(Error::LabelOutOfRange { .. })));
}

#[test]
fn entropy_of_uniform_logits_is_log_k() {
    assert_abs_diff_eq!(mean_prediction_entropy(&[vec![0.0; 4]]), 4f64.ln(), epsilon = 1e-12);
    assert_eq!(argmax(&[0.1, 0.7, 0.7]), 1);
}

fn toy() -> (crate::data::Dataset, crate::data::Dataset) {
    let ds = synth_generate(&SynthSpec::standard(3, 3, 64, 12, 5), Parallelism::Parallel).unwrap();
    stratified_split(&ds, 0.75, 1).unwrap()
}

fn toy_model() -> Network<f64> {
    Network::new(&ModelSpec::inception(3, 3, 2, ModuleTemplate::lite(4, 4)), 2).unwrap()
}

#[test]
fn fit_learns_toy_task_and_is_reproducible() {
    let (tr, va) = toy();
    let dir = tempfile::tempdir().unwrap();
    let cfg = TrainConfig {
        lr: 1e-2,
        epochs: 15,
        batch_size: 9,
        log_path: Some(dir.path().join("log.jsonl")),
        ..TrainConfig::default()
    };
    let a = fit(&toy_model(), &tr, &va, &cfg, None).unwrap();
    let first = a.history[0].train_loss;
    let last = a.history.last().unwrap().train_loss;
    assert!(last < first, "loss did not fall: {first} -> {last}");
    assert!(a.best_metric >= 0.8, "best macro F1 {}", a.best_metric);
    let ev = evaluate(&a.model, &va, 7, Parallelism::Sequential).unwrap();
    assert_abs_diff_eq!(ev.metrics.macro_f1, a.best_metric, epsilon = 1e-12);
    let tied = a.history.iter().filter(|r| r.monitored == a.best_metric);
    let lowest = tied.map(|r| r.val_loss).fold(f64::INFINITY, f64::min);
    assert_eq!(a.history[a.best_epoch].val_loss, lowest);
    let lines = std::fs::read_to_string(dir.path().join("log.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), 15);
    let rec: EpochRecord = serde_json::from_str(lines.lines().next().unwrap()).unwrap();
    assert_eq!(rec.epoch, 0);

    let b = fit(&toy_model(), &tr, &va, &TrainConfig { log_path: None, ..cfg.clone() }, None).unwrap();
    let strip = |h: &[EpochRecord]| h.iter().map(|r| (r.train_loss, r.val_loss, r.lr)).collect::<Vec<_>>();
    assert_eq!(strip(&a.history), strip(&b.history));
}

#[test]
fn distillation_runs_and_alpha_zero_reduces_to_hard_labels() {
    let (tr, va) = toy();
    let teacher = Network::new(&ModelSpec::inception(3, 3, 2, ModuleTemplate::classic(4, 4)), 9).unwrap();
    let cfg = TrainConfig { lr: 1e-2, epochs: 3, batch_size: 9, ..TrainConfig::default() };
    let plain = fit(&toy_model(), &tr, &va, &cfg, None).unwrap();
    let zero = fit(&toy_model(), &tr, &va, &cfg, Some((&teacher, &DistillConfig { tau: 8.0, alpha: 0.0 }))).unwrap();
    assert_eq!(plain.history[2].train_loss, zero.history[2].train_loss);
    let kd = fit(&toy_model(), &tr, &va, &cfg, Some((&teacher, &DistillConfig::default()))).unwrap();
    assert!(kd.history.iter().all(|r| r.train_loss.is_finite()));
    assert_ne!(kd.history[0].train_loss, plain.history[0].train_loss);
}

#[test]
fn fit_rejects_bad_inputs_and_reports_divergence() {
    let (tr, va) = toy();
    let cfg = TrainConfig { epochs: 1, ..TrainConfig::default() };
    assert!(matches!(fit(&toy_model(), &tr, &tr, &cfg, None), Err(Error::InvalidArgument(_))));
    assert!(fit(&toy_model(), &tr, &va, &TrainConfig { lr: 0.0, ..cfg.clone() }, None).is_err());
    assert!(matches!(fit(&toy_model(), &tr, &va.empty_like(), &cfg, None), Err(Error::EmptyInput(_))));
    let mut broken = toy_model();
    let head = broken.store().find("head.weight").unwrap();
    broken.store_mut().value_mut(head).data_mut()[0] = f64::NAN;
    match fit(&broken, &tr, &va, &cfg, None) {
        Err(Error::NonFinite(msg)) => assert!(msg.contains("epoch 0"), "{msg}"),
        other => panic!("expected divergence error, got {:?}", other.map(|o| o.best_epoch)),
    }
}

#[test]
fn early_stop_cuts_training_short() {
    let (tr, va) = toy();
    let cfg = TrainConfig { lr: 1e-9, epochs: 20, early_stop: Some(2), batch_size: 9, ..TrainConfig::default() };
    let out = fit(&toy_model(), &tr, &va, &cfg, None).unwrap();
    assert!(out.history.len() < 20);
    assert_eq!(out.history.len(), out.best_epoch + 3);
}
