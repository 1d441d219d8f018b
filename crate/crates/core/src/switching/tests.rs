use proptest::prelude::*;

use super::*;
use crate::backbone::Mode;
use crate::ctc::{ctc_loss, CtcTarget};
use crate::model::tiny_model;
use crate::synth::Lang;
use crate::tensor::grad_check_leaves;
use crate::vocab::Vocab;

fn features(t: usize, d: usize, seed: u64) -> Tensor {
    let mut rng = SplitMix64::new(seed);
    Tensor::new(vec![t, d], (0..t * d).map(|_| rng.normal()).collect()).unwrap()
}

fn randomize(ps: &ParamSet, prefix: &str, std: f64, seed: u64) {
    let mut rng = SplitMix64::new(seed);
    for (_, t) in ps.iter().filter(|(p, _)| p.starts_with(prefix)) {
        let v: Vec<f64> = t.to_vec().iter().map(|x| x + std * rng.normal()).collect();
        t.set_data(&v);
    }
}

fn head(ps: &mut ParamSet, name: &str, d: usize, tokens: Vec<String>, seed: u64) -> LmHead {
    let mut rng = SplitMix64::new(seed);
    let v = tokens.len();
    let linear = Linear::init(ps, name, d, v, 0.5, &mut rng).unwrap();
    let b: Vec<f64> = (0..v).map(|_| rng.normal()).collect();
    linear.bias.set_data(&b);
    LmHead { linear, vocab: Vocab::new(tokens).unwrap() }
}

fn toy_tokens(n: usize, first: &str) -> Vec<String> {
    std::iter::once("<blank>".to_string())
        .chain(std::iter::once(first.to_string()))
        .chain((2..n).map(|i| format!("t{i}")))
        .collect()
}

#[test]
fn merged_width_is_sum_of_heads() {
    let mut ps = ParamSet::new();
    let h1 = head(&mut ps, "h1", 4, toy_tokens(154, "x"), 1);
    let h2 = head(&mut ps, "h2", 4, toy_tokens(121, " "), 2);
    let merged = build_merged_head(&mut ps, &[h1, h2]).unwrap();
    assert_eq!(merged.linear.weight.shape(), &[4, 275]);
    assert_eq!(merged.vocab.len(), 275);
}

#[test]
fn merged_head_rejects_width_mismatch() {
    let mut ps = ParamSet::new();
    let h1 = head(&mut ps, "h1", 4, toy_tokens(5, "x"), 1);
    let h2 = head(&mut ps, "h2", 6, toy_tokens(5, " "), 2);
    assert!(matches!(build_merged_head(&mut ps, &[h1, h2]), Err(Error::Dimension { .. })));
}

#[test]
fn merged_head_copies_and_masks() {
    let m = tiny_model(Mode::Pacs);
    let net = m.cs_network().unwrap();
    let bb = &net.backbone;
    let h = features(5, 8, 3);
    let l1 = bb.heads[0].forward(&h).unwrap();
    let l2 = bb.heads[1].forward(&h).unwrap();
    let merged = net.head.forward(&h).unwrap();
    let (v1, v2) = (bb.heads[0].vocab.len(), bb.heads[1].vocab.len());
    let probs = merged.softmax();
    for t in 0..5 {
        let row = merged.row(t);
        let p = probs.row(t);
        for j in 0..v1 + v2 {
            if net.head.vocab.is_blocked(j) {
                assert_eq!(row[j], f64::NEG_INFINITY);
                assert_eq!(p[j], 0.0);
            } else if j < v1 {
                assert_eq!(row[j], l1.row(t)[j]);
            } else {
                assert_eq!(row[j], l2.row(t)[j - v1]);
            }
        }
    }
    // letters, digits and punctuation of the matrix table plus the second blank
    let blocked = (0..v1 + v2).filter(|&j| net.head.vocab.is_blocked(j)).count();
    assert_eq!(blocked, 26 + 10 + 5 + 1);
    assert!(net.head.vocab.is_blocked(v1));
    assert!(!net.head.vocab.is_blocked(0));
}

#[test]
fn pacs_zero_init_is_identity_on_matrix_adapter() {
    let m = tiny_model(Mode::Pacs);
    let net = m.cs_network().unwrap();
    randomize(&m.params, "block.", 0.3, 4);
    let Switcher::Pacs(p) = &net.switcher else { unreachable!() };
    let h = features(4, 8, 5);
    let a1 = &net.backbone.adapters[0][0];
    let a2 = &net.backbone.adapters[1][0];
    let out = pacs_forward(&h, a1, a2, &p[0]).unwrap();
    assert_eq!(out.shape(), &[4, 8]);
    assert_eq!(out.to_vec(), a1.forward(&h).unwrap().to_vec());
}

#[test]
fn pacs_gradient_reaches_mixer_but_not_frozen_adapters() {
    let m = tiny_model(Mode::Pacs);
    randomize(&m.params, "pacs.", 0.2, 6);
    let net = m.cs_network().unwrap();
    let out = net.encode_cs(&features(4, 5, 7), &GateControl::Train).unwrap();
    let target = CtcTarget::new(vec![1, 2], net.head.vocab.len()).unwrap();
    ctc_loss(&out.logits.log_softmax(), &target, true).unwrap().backward().unwrap();
    for (path, t) in m.params.iter() {
        let has = t.grad().is_some_and(|g| g.iter().any(|&v| v != 0.0));
        if path.starts_with("pacs.") && path.contains(".up.") || path.starts_with("merged_head.") {
            assert!(has, "{path} has no gradient");
        }
        if path.contains(".adapter.") || path.starts_with("head.") {
            assert!(t.grad().is_none(), "{path} received gradient");
        }
    }
}

#[test]
fn zero_output_layer_gives_half_and_matrix_route() {
    let m = tiny_model(Mode::Tcs);
    let net = m.cs_network().unwrap();
    let h = net.backbone.project(&features(6, 5, 8)).unwrap();
    let g = net.gate(&h, &GateControl::Eval).unwrap().unwrap();
    assert_eq!(g.len(), 6);
    assert!(g.soft.to_vec().iter().all(|&s| s == 0.5));
    assert_eq!(g.hard_values(), vec![0; 6]);
}

#[test]
fn hard_gate_follows_strict_threshold() {
    let soft = Tensor::new(vec![4, 1], vec![0.2, 0.5, 0.500001, 0.9]).unwrap();
    let g = GateSequence::from_soft(soft, &GateControl::Eval, GateTrainMode::StraightThrough, 0.5).unwrap();
    assert_eq!(g.hard_values(), vec![0, 0, 1, 1]);
}

#[test]
fn mix_selects_per_frame() {
    let a = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
    let b = Tensor::from_rows(&[vec![-1.0, -2.0], vec![-3.0, -4.0]]).unwrap();
    let g = |v: [f64; 2]| Tensor::new(vec![2, 1], v.to_vec()).unwrap();
    assert_eq!(tcs_mix(&a, &b, &g([0.0, 0.0])).unwrap().to_vec(), a.to_vec());
    assert_eq!(tcs_mix(&a, &b, &g([1.0, 1.0])).unwrap().to_vec(), b.to_vec());
    let mixed = tcs_mix(&a, &b, &g([1.0, 0.0])).unwrap();
    assert_eq!(mixed.row(0), b.row(0));
    assert_eq!(mixed.row(1), a.row(1));
    let short = Tensor::new(vec![1, 1], vec![0.0]).unwrap();
    assert!(matches!(tcs_mix(&a, &b, &short), Err(Error::Dimension { .. })));
}

fn max_abs_diff(a: &Tensor, b: &Tensor) -> f64 {
    a.to_vec().iter().zip(b.to_vec()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn forced_gates_reproduce_single_paths() {
    let m = tiny_model(Mode::Tcs);
    randomize(&m.params, "", 0.3, 9);
    let net = m.cs_network().unwrap();
    let x = features(5, 5, 10);
    let zero = net.encode_cs(&x, &GateControl::Forced(0.0)).unwrap();
    let one = net.encode_cs(&x, &GateControl::Forced(1.0)).unwrap();
    let bb = m.backbone().unwrap();
    assert!(max_abs_diff(&zero.hidden, &bb.hidden_single(&x, Lang::Matrix).unwrap()) < 1e-9);
    assert!(max_abs_diff(&one.hidden, &bb.hidden_single(&x, Lang::Embedded).unwrap()) < 1e-9);
    assert_eq!(zero.gate.unwrap().hard_values(), vec![0; 5]);
}

#[test]
fn pacs_zero_init_matches_matrix_logits() {
    let m = tiny_model(Mode::Pacs);
    randomize(&m.params, "block.", 0.3, 11);
    randomize(&m.params, "head.", 0.3, 12);
    // the merged head was copied before the perturbation; copy again
    let net = m.cs_network().unwrap();
    let bb = m.backbone().unwrap();
    let mut fresh = ParamSet::new();
    let rebuilt = build_merged_head(&mut fresh, &bb.heads).unwrap();
    net.head.linear.weight.set_data(&rebuilt.linear.weight.to_vec());
    net.head.linear.bias.set_data(&rebuilt.linear.bias.to_vec());

    let x = features(6, 5, 13);
    let cs = net.encode_cs(&x, &GateControl::Eval).unwrap().logits;
    let single = bb.encode_single(&x, Lang::Matrix).unwrap();
    let v1 = bb.heads[0].vocab.len();
    for t in 0..6 {
        for j in (0..v1).filter(|&j| !net.head.vocab.is_blocked(j)) {
            assert_eq!(cs.row(t)[j], single.row(t)[j]);
        }
    }
}

#[test]
fn eval_gates_are_repeatable() {
    let m = tiny_model(Mode::Tcs);
    randomize(&m.params, "tcs.", 1.0, 14);
    let net = m.cs_network().unwrap();
    let x = features(7, 5, 15);
    let a = net.encode_cs(&x, &GateControl::Eval).unwrap();
    let b = net.encode_cs(&x, &GateControl::Eval).unwrap();
    assert_eq!(a.gate.unwrap().hard_values(), b.gate.unwrap().hard_values());
    assert_eq!(a.logits.to_vec(), b.logits.to_vec());
}

fn cs_loss(net: &CsNetwork, x: &Tensor, target: &CtcTarget, control: &GateControl) -> Result<Tensor> {
    ctc_loss(&net.encode_cs(x, control)?.logits.log_softmax(), target, true)
}

#[test]
fn pacs_graph_gradient_matches_finite_differences() {
    let m = tiny_model(Mode::Pacs);
    randomize(&m.params, "pacs.", 0.3, 16);
    let net = m.cs_network().unwrap();
    let x = features(3, 5, 17);
    let target = CtcTarget::new(vec![2, 45], net.head.vocab.len()).unwrap();
    let leaves: Vec<Tensor> = m.params.trainable().map(|(_, t)| t.clone()).collect();
    let err = grad_check_leaves(|| cs_loss(&net, &x, &target, &GateControl::Train), &leaves, 1e-5).unwrap();
    assert!(err < 1e-4, "{err}");
}

#[test]
fn straight_through_gradient_matches_anchored_surrogate() {
    let m = tiny_model(Mode::Tcs);
    randomize(&m.params, "tcs.", 0.5, 18);
    let net = m.cs_network().unwrap();
    let x = features(3, 5, 19);
    let target = CtcTarget::new(vec![3, 40], net.head.vocab.len()).unwrap();
    let leaves: Vec<Tensor> = m.params.trainable().map(|(_, t)| t.clone()).collect();

    m.params.zero_grads();
    cs_loss(&net, &x, &target, &GateControl::Train).unwrap().backward().unwrap();
    let st: Vec<Vec<f64>> = leaves.iter().map(|t| t.grad().unwrap()).collect();
    let anchor = net.gate_anchor(&x).unwrap();
    m.params.zero_grads();
    cs_loss(&net, &x, &target, &GateControl::Anchored(anchor.clone())).unwrap().backward().unwrap();
    for (t, g) in leaves.iter().zip(&st) {
        for (a, b) in t.grad().unwrap().iter().zip(g) {
            assert!((a - b).abs() <= 1e-10 * (1.0 + b.abs()));
        }
    }
    m.params.zero_grads();
    let control = GateControl::Anchored(anchor);
    let err = grad_check_leaves(|| cs_loss(&net, &x, &target, &control), &leaves, 1e-5).unwrap();
    assert!(err < 1e-4, "{err}");
}

#[test]
fn soft_training_mode_routes_with_soft_gate() {
    let mut m = tiny_model(Mode::Tcs);
    m.config.gate_train_mode = GateTrainMode::Soft;
    randomize(&m.params, "tcs.", 0.5, 20);
    let net = m.cs_network().unwrap();
    let g = net.gate(&net.backbone.projector_forward(&features(4, 5, 21)).unwrap(), &GateControl::Train).unwrap().unwrap();
    assert_eq!(g.routing.to_vec(), g.soft.to_vec());
}

#[test]
fn gate_dump_round_trips() {
    let mut buf = Vec::new();
    write_gate_line(&mut buf, "cs-test-0001", &[0, 1, 1, 0]).unwrap();
    write_gate_line(&mut buf, "cs-test-0002", &[1]).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text, "cs-test-0001 0 1 1 0\ncs-test-0002 1\n");
    let parsed = parse_gate_dump(&text).unwrap();
    assert_eq!(parsed[0], ("cs-test-0001".to_string(), vec![0, 1, 1, 0]));
    assert!(parse_gate_dump("x 0 2\n").is_err());
}

#[test]
fn missing_switcher_is_config_error() {
    let m = tiny_model(Mode::Tcs);
    let mut pruned = ParamSet::new();
    for (p, t) in m.params.iter().filter(|(p, _)| !p.starts_with("tcs.out")) {
        pruned.insert(p, t.clone()).unwrap();
    }
    assert!(matches!(Switcher::load_tcs(&pruned, &m.config), Err(Error::Config(_))));
}

proptest! {
    #[test]
    fn mix_is_convex(
        a in prop::collection::vec(-10.0f64..10.0, 6),
        b in prop::collection::vec(-10.0f64..10.0, 6),
        g in prop::collection::vec(0.0f64..=1.0, 2),
    ) {
        let ta = Tensor::new(vec![2, 3], a.clone()).unwrap();
        let tb = Tensor::new(vec![2, 3], b.clone()).unwrap();
        let out = tcs_mix(&ta, &tb, &Tensor::new(vec![2, 1], g).unwrap()).unwrap().to_vec();
        for i in 0..6 {
            let (lo, hi) = (a[i].min(b[i]), a[i].max(b[i]));
            prop_assert!(out[i] >= lo - 1e-12 && out[i] <= hi + 1e-12);
        }
    }

    #[test]
    fn mix_of_equal_inputs_is_identity(
        a in prop::collection::vec(-10.0f64..10.0, 6),
        hard in prop::collection::vec(0u8..2, 2),
    ) {
        let ta = Tensor::new(vec![2, 3], a).unwrap();
        let g = Tensor::new(vec![2, 1], hard.iter().map(|&h| h as f64).collect()).unwrap();
        prop_assert_eq!(tcs_mix(&ta, &ta, &g).unwrap().to_vec(), ta.to_vec());
    }
}
