use super::*;
use crate::tensor::grad_check;
use approx::assert_abs_diff_eq;
use rand::{Rng, SeedableRng};

fn kinkless(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| {
        let m = rng.random_range(0.2..1.2);
        if rng.random::<bool>() { m } else { -m }
    })
}

fn module(din: usize, template: ModuleTemplate) -> (InceptionModule, ParamStore<f64>) {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let m = InceptionModule::new(&mut store, &mut rng, "m", &template.with_input(din)).unwrap();
    (m, store)
}

/// Counts conv weights by walking the stored tensors by name.
fn enumerate_conv_weights(store: &ParamStore<f64>, prefix: &str) -> usize {
    store
        .iter()
        .filter(|(_, p)| p.name.starts_with(prefix) && p.kind == ParamKind::ConvWeight)
        .map(|(_, p)| p.value.shape().iter().product::<usize>())
        .sum()
}

#[test]
fn module_output_channels() {
    assert_eq!(ModuleTemplate::lite(128, 64).with_input(15).output_channels(), 256);
    assert_eq!(ModuleTemplate::classic(128, 64).with_input(15).output_channels(), 512);
    let (m, store) = module(4, ModuleTemplate::lite(8, 4));
    let mut tape = Tape::new();
    let mut f = Forward::eval(&mut tape, &store);
    let x = f.tape.constant(kinkless(&[2, 4, 11], 2));
    let y = m.forward(&mut f, x).unwrap();
    assert_eq!(tape.shape(y), &[2, 16, 11]);
}

#[test]
fn closed_form_module_counts() {
    let lite = ModuleTemplate::lite(128, 64).with_input(15);
    let classic = ModuleTemplate::classic(128, 64).with_input(15);
    assert_eq!(lite.analytic_weight_count(), 960 + 24_576 + 1_920);
    assert_eq!(lite.analytic_weight_count(), 27_456);
    assert_eq!(classic.analytic_weight_count(), 125_760);
    let (_, s1) = module(15, ModuleTemplate::lite(128, 64));
    let (_, s3) = module(15, ModuleTemplate::classic(128, 64));
    assert_eq!(enumerate_conv_weights(&s1, "m."), 27_456);
    assert_eq!(enumerate_conv_weights(&s3, "m."), 125_760);
    // branch weights alone: Db·Df·Σk
    let branch = |s: &ParamStore<f64>| enumerate_conv_weights(s, "m.branch");
    assert_eq!(branch(&s3), 5 * branch(&s1));
}

#[test]
fn module_without_conv_branches_has_no_bottleneck() {
    let t = ModuleTemplate { conv_kernels: vec![], use_maxpool_branch: true, filters: 8, bottleneck: 4 };
    let (m, store) = module(3, t);
    assert!(m.bottleneck.is_none());
    assert_eq!(enumerate_conv_weights(&store, "m."), 24);
    assert_eq!(m.spec.analytic_weight_count(), 24);
}

#[test]
fn invalid_specs_are_rejected() {
    let empty = ModuleTemplate { conv_kernels: vec![], use_maxpool_branch: false, filters: 8, bottleneck: 4 };
    assert!(empty.validate().is_err());
    assert!(ModuleTemplate::from_label("4+1", 8, 4).is_err());
    assert!(ModuleTemplate::from_label("x", 8, 4).is_err());
    let mut s = ModelSpec::inception(3, 2, 0, ModuleTemplate::lite(8, 4));
    assert!(Network::<f64>::new(&s, 0).is_err());
    s.backbone.depth = 1;
    s.encoder = Some(EncoderSpec { d_model: 10, heads: 3, ..Default::default() });
    assert!(matches!(Network::<f64>::new(&s, 0), Err(Error::InvalidSpec(_))));
}

#[test]
fn branch_labels_round_trip() {
    for label in ["1+0", "1+1", "2+1", "3+1", "0+1"] {
        assert_eq!(ModuleTemplate::from_label(label, 8, 4).unwrap().label(), label);
    }
    assert_eq!(ModuleTemplate::from_label("3+1", 8, 4).unwrap().conv_kernels, vec![3, 5, 7]);
}

#[test]
fn depth_six_has_two_junctions_and_emits_k_logits() {
    let spec = ModelSpec::inception(15, 19, 6, ModuleTemplate::lite(128, 64));
    assert_eq!(spec.backbone.junctions(), 2);
    let net = Network::<f32>::new(&spec, 3).unwrap();
    assert_eq!(net.backbone().shortcuts.len(), 2);
    assert!(matches!(net.backbone().shortcuts[0], Shortcut::Project { .. }));
    assert!(matches!(net.backbone().shortcuts[1], Shortcut::Identity));
    let x = Tensor::from_fn(&[1, 15, 256], |i| ((i % 17) as f32) / 17.0);
    let y = net.logits(&x).unwrap();
    assert_eq!(y.shape(), &[1, 19]);
    assert!(y.all_finite());
}

#[test]
fn wrong_input_channels_is_a_shape_error() {
    let net = Network::<f64>::new(&ModelSpec::inception(3, 2, 1, ModuleTemplate::lite(4, 2)), 0).unwrap();
    assert!(matches!(net.logits(&Tensor::zeros(&[1, 4, 8])), Err(Error::Shape(_))));
}

#[test]
fn every_branch_config_is_finite_at_init() {
    for label in ["1+0", "1+1", "2+1", "3+1"] {
        let t = ModuleTemplate::from_label(label, 8, 4).unwrap();
        let net = Network::<f64>::new(&ModelSpec::inception(5, 3, 6, t), 11).unwrap();
        let y = net.logits(&kinkless(&[2, 5, 40], 12)).unwrap();
        assert!(y.all_finite(), "{label}");
    }
}

#[test]
fn builders_are_deterministic_and_precision_consistent() {
    let spec = ModelSpec::inception(4, 3, 3, ModuleTemplate::lite(8, 4)).with_gate(2);
    let a = Network::<f64>::new(&spec, 5).unwrap();
    let b = Network::<f64>::new(&spec, 5).unwrap();
    let c = Network::<f64>::new(&spec, 6).unwrap();
    let same = |x: &Network<f64>, y: &Network<f64>| x.store().iter().zip(y.store().iter()).all(|(p, q)| p.1.value == q.1.value);
    assert!(same(&a, &b));
    assert!(!same(&a, &c));
    let lo = Network::<f32>::new(&spec, 5).unwrap();
    for ((_, p), (_, q)) in a.store().iter().zip(lo.store().iter()) {
        assert_eq!(p.value.cast::<f32>(), q.value);
    }
}

#[test]
fn depth_three_net_passes_gradient_check() {
    let spec = ModelSpec::inception(3, 4, 3, ModuleTemplate::lite(16, 8));
    let net = Network::<f64>::new(&spec, 21).unwrap();
    let x0 = kinkless(&[2, 3, 10], 22);
    let w = kinkless(&[2, 4], 23);
    let r = grad_check(
        |tape, x| {
            let mut f = Forward::eval(tape, net.store());
            let out = net.forward(&mut f, x)?;
            let m = tape.mul_const(out.logits, &w)?;
            Ok(tape.sum(m))
        },
        &x0,
        1e-4,
    )
    .unwrap();
    assert!(r.max_rel_error < 1e-4, "{}", r.max_rel_error);
}

#[test]
fn two_module_net_train_mode_gradient_check() {
    // batch statistics couple the samples; the check covers that path too
    let spec = ModelSpec::inception(2, 3, 2, ModuleTemplate::lite(4, 3));
    let net = Network::<f64>::new(&spec, 31).unwrap();
    let x0 = kinkless(&[3, 2, 8], 32);
    let w = kinkless(&[3, 3], 33);
    let r = grad_check(
        |tape, x| {
            let mut f = Forward::train(tape, net.store(), ChaCha8Rng::seed_from_u64(0));
            let out = net.forward(&mut f, x)?;
            let m = tape.mul_const(out.logits, &w)?;
            Ok(tape.sum(m))
        },
        &x0,
        1e-4,
    )
    .unwrap();
    assert!(r.max_rel_error < 1e-4, "{}", r.max_rel_error);
}

#[test]
fn zeroed_gate_is_identity() {
    let spec = SeGateSpec { channels: 5, reduction: 2 };
    assert_eq!(spec.hidden(), 3);
    let mut store = ParamStore::new();
    let gate = SeGate::new(&mut store, &mut ChaCha8Rng::seed_from_u64(0), &spec).unwrap();
    let mut tape = Tape::new();
    let mut f = Forward::eval(&mut tape, &store);
    let x0 = kinkless(&[2, 5, 7], 3);
    let x = f.tape.constant(x0.clone());
    let (y, s) = gate.forward(&mut f, x).unwrap();
    assert!(tape.value(s).data().iter().all(|&v| v == 1.0));
    assert_eq!(tape.value(y), &x0);
}

#[test]
fn gate_matches_closed_form() {
    let spec = SeGateSpec { channels: 2, reduction: 2 };
    let mut store = ParamStore::new();
    let gate = SeGate::new(&mut store, &mut ChaCha8Rng::seed_from_u64(0), &spec).unwrap();
    *store.value_mut(gate.fc1.w) = Tensor::from_f64(&[1, 2], &[1.0, 2.0]).unwrap();
    *store.value_mut(gate.fc2.w) = Tensor::from_f64(&[2, 1], &[1.0, -1.0]).unwrap();
    let mut tape = Tape::new();
    let mut f = Forward::eval(&mut tape, &store);
    // channel means 0.5 and 0.25 -> hidden relu(0.5 + 0.5) = 1
    let x = f.tape.constant(Tensor::from_f64(&[1, 2, 2], &[0.0, 1.0, 0.5, 0.0]).unwrap());
    let (_, s) = gate.forward(&mut f, x).unwrap();
    let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
    assert_abs_diff_eq!(tape.value(s).data()[0], 0.5 + sig(1.0), epsilon = 1e-15);
    assert_abs_diff_eq!(tape.value(s).data()[1], 0.5 + sig(-1.0), epsilon = 1e-15);
}

#[test]
fn gate_weights_stay_in_open_interval() {
    let spec = SeGateSpec { channels: 4, reduction: 1 };
    let mut store = ParamStore::new();
    let gate = SeGate::new(&mut store, &mut ChaCha8Rng::seed_from_u64(0), &spec).unwrap();
    *store.value_mut(gate.fc2.w) = kinkless(&[4, 4], 9).map(|v| v * 3.0);
    let mut tape = Tape::new();
    let mut f = Forward::eval(&mut tape, &store);
    let x = f.tape.constant(kinkless(&[3, 4, 6], 10));
    let (_, s) = gate.forward(&mut f, x).unwrap();
    assert!(tape.value(s).data().iter().all(|&v| v > 0.5 && v < 1.5));
}

fn encoder(spec: &EncoderSpec, width: usize) -> (Encoder, ParamStore<f64>) {
    let mut store = ParamStore::new();
    let e = Encoder::new(&mut store, &mut ChaCha8Rng::seed_from_u64(4), spec, width).unwrap();
    (e, store)
}

#[test]
fn attention_rows_sum_to_one_and_length_is_downsampled() {
    let spec = EncoderSpec { d_model: 8, heads: 2, layers: 2, ff_width: 16, dropout: 0.1, attn_downsample: 4 };
    let (enc, store) = encoder(&spec, 6);
    let mut tape = Tape::new();
    let mut f = Forward::eval(&mut tape, &store);
    let x = f.tape.constant(kinkless(&[2, 6, 18], 5));
    let out = enc.forward(&mut f, x).unwrap();
    assert_eq!(tape.shape(out.sequence), &[2, 5, 8]);
    assert_eq!(spec.output_len(18), 5);
    for &w in &out.attention {
        assert_eq!(tape.shape(w), &[4, 5, 5]);
        for row in tape.value(w).data().chunks(5) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }
}

#[test]
fn one_layer_one_head_encoder_gradient_check() {
    let spec = EncoderSpec { d_model: 4, heads: 1, layers: 1, ff_width: 6, dropout: 0.0, attn_downsample: 1 };
    let (enc, store) = encoder(&spec, 3);
    let w = kinkless(&[1, 5, 4], 7);
    let r = grad_check(
        |tape, x| {
            let mut f = Forward::eval(tape, &store);
            let out = enc.forward(&mut f, x)?;
            let m = tape.mul_const(out.sequence, &w)?;
            Ok(tape.sum(m))
        },
        &kinkless(&[1, 3, 5], 8),
        1e-4,
    )
    .unwrap();
    assert!(r.max_rel_error < 1e-4, "{}", r.max_rel_error);
}

#[test]
fn positional_encoding_closed_form() {
    let pe = positional_encoding(3, 4);
    assert_eq!(&pe[0..4], &[0.0, 1.0, 0.0, 1.0]);
    assert_abs_diff_eq!(pe[4], 1f64.sin(), epsilon = 1e-15);
    assert_abs_diff_eq!(pe[5], 1f64.cos(), epsilon = 1e-15);
    assert_abs_diff_eq!(pe[6], (1.0 / 100.0f64).sin(), epsilon = 1e-15);
}

#[test]
fn dropout_only_in_train_mode() {
    let spec = ModelSpec::hybrid(
        3,
        1,
        ModuleTemplate::lite(4, 2),
        EncoderSpec { d_model: 4, heads: 2, layers: 1, ff_width: 8, dropout: 0.5, attn_downsample: 2 },
    );
    let net = Network::<f64>::new(&spec, 1).unwrap();
    let x = kinkless(&[2, 3, 16], 2);
    assert_eq!(net.logits(&x).unwrap(), net.logits(&x).unwrap());
    let run = |seed| {
        let mut tape = Tape::new();
        let mut f = Forward::train(&mut tape, net.store(), ChaCha8Rng::seed_from_u64(seed));
        let xv = f.tape.constant(x.clone());
        let out = net.forward(&mut f, xv).unwrap();
        tape.value(out.logits).clone()
    };
    assert_eq!(run(1), run(1));
    assert_ne!(run(1), run(2));
    assert_eq!(net.logits(&x).unwrap().shape(), &[2, 2]);
}

#[test]
fn batch_norm_running_stats_follow_momentum() {
    let spec = ModelSpec::inception(1, 2, 1, ModuleTemplate::lite(2, 2));
    let mut net = Network::<f64>::new(&spec, 0).unwrap();
    let mut tape = Tape::new();
    let updates = {
        let mut f = Forward::train(&mut tape, net.store(), ChaCha8Rng::seed_from_u64(0));
        let x = f.tape.constant(kinkless(&[2, 1, 6], 1));
        net.forward(&mut f, x).unwrap();
        f.take_bn_updates()
    };
    assert_eq!(updates.len(), 1);
    let u = &updates[0];
    apply_bn_updates(net.store_mut(), &updates);
    for c in 0..u.mean.len() {
        assert_abs_diff_eq!(net.store().value(u.mean_id).data()[c], 0.1 * u.mean[c], epsilon = 1e-15);
        assert_abs_diff_eq!(net.store().value(u.var_id).data()[c], 0.9 + 0.1 * u.var[c], epsilon = 1e-15);
    }
}

#[test]
fn param_report_matches_analytic_for_every_module() {
    for label in ["1+0", "1+1", "2+1", "3+1"] {
        let t = ModuleTemplate::from_label(label, 128, 64).unwrap();
        let net = Network::<f32>::new(&ModelSpec::inception(15, 19, 6, t), 0).unwrap();
        let r = net.param_report();
        assert_eq!(r.modules.len(), 6);
        for m in &r.modules {
            assert_eq!(m.enumerated, m.analytic, "{label} module {}", m.module);
        }
        let learnable: usize = r.by_category.iter().filter(|(k, _)| *k != "buffer").map(|(_, v)| v).sum();
        assert_eq!(learnable, r.total);
        assert_eq!(r.total, net.store().learnable_count());
    }
}

#[test]
fn totals_are_ordered_and_compress() {
    let total = |label: &str| {
        let t = ModuleTemplate::from_label(label, 128, 64).unwrap();
        let net = Network::<f32>::new(&ModelSpec::inception(15, 19, 6, t), 0).unwrap();
        (net.param_report().total, net.flop_report(2048).total)
    };
    let (p11, f11) = total("1+1");
    let (p21, _) = total("2+1");
    let (p31, f31) = total("3+1");
    assert!(p11 < p21 && p21 < p31);
    let pr = p11 as f64 / p31 as f64;
    let fr = f11 as f64 / f31 as f64;
    assert!((0.25..=0.35).contains(&pr), "{pr}");
    assert!((0.25..=0.35).contains(&fr), "{fr}");
}

#[test]
fn flop_convention() {
    let mut store = ParamStore::new();
    let c = Conv::new(&mut store, &mut ChaCha8Rng::seed_from_u64(0), "c", 1, 1, 3, false);
    assert_eq!(c.flops(4), 24);
    let net = Network::<f32>::new(&ModelSpec::inception(3, 2, 3, ModuleTemplate::lite(4, 2)), 0).unwrap();
    let (a, b) = (net.flop_report(100), net.flop_report(200));
    let conv = |r: &FlopReport| -> u64 {
        r.layers.iter().filter(|l| l.name.contains("branch") || l.name.contains("bottleneck")).map(|l| l.flops).sum()
    };
    assert_eq!(2 * conv(&a), conv(&b));
    assert_eq!(a.total, a.layers.iter().map(|l| l.flops).sum::<u64>());
}

#[test]
fn receptive_field_arithmetic() {
    assert_eq!(receptive_field(3, 6), 13);
    assert_eq!(receptive_field(7, 6), 37);
    assert_eq!(receptive_field(3, 1), 3);
}

#[test]
fn spec_round_trips_through_toml() {
    let spec = ModelSpec::hybrid(15, 6, ModuleTemplate::lite(128, 64), EncoderSpec::default()).with_gate(4);
    let text = toml::to_string(&spec).unwrap();
    let back: ModelSpec = toml::from_str(&text).unwrap();
    assert_eq!(back, spec);
}
