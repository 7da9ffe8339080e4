use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autodiff::Reduction;
use crate::episode::DomainTag;
use crate::gradcheck::check_store_gradients;
use crate::optim::{Adam, AdamConfig};

fn small_config(head: HeadKind, modules: bool) -> ModelConfig {
    ModelConfig {
        backbone: BackboneConfig {
            block_channels: vec![4, 4, 6, 6],
            input_size: 16,
            ..BackboneConfig::default()
        }
        .with_modules(modules, modules),
        head,
        n_way: 2,
        ..ModelConfig::default()
    }
}

fn images(b: usize, size: usize, seed: u64) -> Tensor {
    Tensor::rand_uniform(&[b, 3, size, size], 0.0, 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn tiny_episode(seed: u64, size: usize) -> Episode {
    Episode {
        n_way: 2,
        k_shot: 2,
        m_query: 2,
        support: images(4, size, seed),
        support_labels: vec![0, 0, 1, 1],
        query: images(4, size, seed + 100),
        query_labels: vec![0, 0, 1, 1],
        domain: DomainTag::Source,
        class_ids: vec!["a".into(), "b".into()],
        support_ids: (0..4).map(|i| format!("s{i}")).collect(),
        query_ids: (0..4).map(|i| format!("q{i}")).collect(),
    }
}

fn embedding(model: &ModelState, x: &Tensor, mode: Mode) -> Tensor {
    let mut f = model.forward(mode, false);
    let v = f.input(x.clone());
    let e = model.embed(&mut f, v).unwrap();
    f.tape.value(e).clone()
}

#[test]
fn modules_at_init_leave_embeddings_unchanged() {
    let full = ModelState::new(small_config(HeadKind::Proto, true), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    let mut plain = ModelState::new(small_config(HeadKind::Proto, false), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    for (k, v) in plain.store.params.iter_mut() {
        *v = full.store.params[k].clone();
    }
    let x = images(6, 16, 1);
    for mode in [Mode::Train, Mode::Eval] {
        let d = embedding(&full, &x, mode).max_abs_diff(&embedding(&plain, &x, mode)).unwrap();
        assert!(d < 1e-5, "{mode:?}: {d}");
    }
}

#[test]
fn identical_images_identical_embeddings() {
    let model = ModelState::new(small_config(HeadKind::Proto, true), &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
    let one = images(1, 16, 2);
    let x = Tensor::concat_outer(&[&one, &one]).unwrap();
    let e = embedding(&model, &x, Mode::Eval);
    assert_eq!(e.slice_outer(0).unwrap(), e.slice_outer(1).unwrap());
}

#[test]
fn every_parameter_receives_gradient() {
    // At 32 pixels the last block is 2×2, so every enhancement band selects bins.
    let mut cfg = small_config(HeadKind::Gnn, true);
    cfg.backbone.input_size = 32;
    let mut model = ModelState::new(cfg, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    let ep = tiny_episode(7, 32);
    let grads = |m: &ModelState| {
        let mut f = m.forward(Mode::Train, true);
        let logits = m.episode_logits(&mut f, &ep).unwrap();
        let loss = f.tape.cross_entropy(logits, &ep.query_labels, Reduction::Mean).unwrap();
        f.gradients(loss).unwrap()
    };
    // The zero-initialized head output and enhancement outputs each block
    // gradient upstream until an update has moved them.
    let mut adam = Adam::new(AdamConfig::default());
    for _ in 0..2 {
        let g = grads(&model);
        adam.step(&mut model.store.params, &g).unwrap();
    }
    let g = grads(&model);
    for name in model.store.params.keys() {
        let grad = g.get(name).unwrap_or_else(|| panic!("no gradient for {name}"));
        assert!(grad.data().iter().any(|&v| v != 0.0), "all-zero gradient for {name}");
    }
}

#[test]
fn embed_is_batch_permutation_equivariant() {
    let model = ModelState::new(small_config(HeadKind::Proto, true), &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
    let x = images(4, 16, 3);
    let perm = [2usize, 0, 3, 1];
    let xp = Tensor::stack(&perm.iter().map(|&i| x.slice_outer(i).unwrap()).collect::<Vec<_>>()).unwrap();
    for mode in [Mode::Train, Mode::Eval] {
        let e = embedding(&model, &x, mode);
        let ep = embedding(&model, &xp, mode);
        for (row, &i) in perm.iter().enumerate() {
            let d = ep.slice_outer(row).unwrap().max_abs_diff(&e.slice_outer(i).unwrap()).unwrap();
            assert!(d < 1e-10, "{mode:?}: {d}");
        }
    }
}

#[test]
fn wrong_resolution_rejected() {
    let model = ModelState::new(small_config(HeadKind::Proto, true), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let mut f = model.forward(Mode::Eval, false);
    let x = f.input(images(2, 8, 0));
    assert!(matches!(model.embed(&mut f, x), Err(Error::Shape(_))));
}

fn proto_probs(support: Tensor, labels: &[usize], query: Tensor, n: usize) -> EpisodeLogits {
    let mut tape = crate::Tape::new();
    let s = tape.constant(support);
    let q = tape.constant(query);
    let rows = tape.shape(q)[0];
    let logits = proto_head(&mut tape, s, labels, q, n).unwrap();
    EpisodeLogits::from_logits(tape.value(logits), vec![0; rows]).unwrap()
}

#[test]
fn proto_head_examples() {
    let support = Tensor::new(vec![3, 2], vec![0.0, 0.0, 5.0, 5.0, -5.0, 5.0]).unwrap();
    let p = proto_probs(support, &[0, 1, 2], Tensor::new(vec![1, 2], vec![5.0, 5.0]).unwrap(), 3);
    assert_eq!(p.predictions(), vec![1]);

    let same = Tensor::full(&[4, 3], 0.7);
    let p = proto_probs(same.clone(), &[0, 0, 1, 1], same, 2);
    assert!(p.probs.data().iter().all(|&v| (v - 0.5).abs() < 1e-12));

    // Prototypes at distance 1 and 3: softmax of [-1, -9].
    let support = Tensor::new(vec![2, 1], vec![1.0, 3.0]).unwrap();
    let p = proto_probs(support, &[0, 1], Tensor::new(vec![1, 1], vec![0.0]).unwrap(), 2);
    let want0 = 1.0 / (1.0 + (-8.0f64).exp());
    assert!((p.probs.data()[0] - want0).abs() < 1e-12);
    assert!((p.probs.data()[0] - 0.99966).abs() < 1e-5);
}

#[test]
fn proto_head_needs_every_class() {
    let mut tape = crate::Tape::new();
    let s = tape.constant(Tensor::zeros(&[2, 2]));
    let q = tape.constant(Tensor::zeros(&[1, 2]));
    assert!(proto_head(&mut tape, s, &[0, 0], q, 2).is_err());
}

fn gnn_setup(seed: u64) -> (ParamStore, Tensor, Tensor) {
    let mut store = ParamStore::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    GnnHead::new(8, 2).init(&mut store, &mut rng);
    // Nonzero biases keep self-edges (zero difference) off the leaky-ReLU
    // kink; a random output map makes the logits depend on every layer.
    for (name, t) in store.params.iter_mut() {
        if name.ends_with(".bias") || name == "gnn.out.weight" {
            *t = Tensor::randn(t.shape(), 0.5, &mut rng);
        }
    }
    let s = Tensor::randn(&[4, 8], 1.0, &mut rng);
    let q = Tensor::randn(&[3, 8], 1.0, &mut rng);
    (store, s, q)
}

fn gnn_probs(store: &ParamStore, s: &Tensor, labels: &[usize], q: &Tensor) -> Tensor {
    let mut f = Forward::new(store, Mode::Eval, false);
    let sv = f.input(s.clone());
    let qv = f.input(q.clone());
    let logits = gnn_head(&mut f, sv, labels, qv, 2).unwrap();
    EpisodeLogits::from_logits(f.tape.value(logits), vec![0; q.shape()[0]]).unwrap().probs
}

#[test]
fn gnn_probs_are_row_stochastic() {
    let (store, s, q) = gnn_setup(1);
    assert!(gnn_probs(&store, &s, &[0, 0, 1, 1], &q).data().iter().any(|&p| (p - 0.5).abs() > 1e-3));
    let p = gnn_probs(&store, &s, &[0, 0, 1, 1], &q);
    for row in p.data().chunks(2) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        assert!(row.iter().all(|&v| v >= 0.0));
    }
}

#[test]
fn gnn_ignores_support_order_within_class() {
    let (store, s, q) = gnn_setup(2);
    let swapped = Tensor::stack(&[1, 0, 3, 2].map(|i| s.slice_outer(i).unwrap())).unwrap();
    let a = gnn_probs(&store, &s, &[0, 0, 1, 1], &q);
    let b = gnn_probs(&store, &swapped, &[0, 0, 1, 1], &q);
    assert!(a.max_abs_diff(&b).unwrap() < 1e-6);
}

#[test]
fn gnn_gradients_match_finite_differences() {
    // A single bias vector can have a gradient near the difference noise
    // floor (edge scores shifted alike cancel under row normalization), so
    // the check is on the full parameter gradient.
    for seed in 0..20 {
        let (store, s, q) = gnn_setup(100 + seed);
        let report = check_store_gradients(&store, Mode::Eval, 1e-5, |f| {
            let sv = f.input(s.clone());
            let qv = f.input(q.clone());
            let logits = gnn_head(f, sv, &[0, 0, 1, 1], qv, 2)?;
            f.tape.cross_entropy(logits, &[0, 1, 1], Reduction::Sum)
        })
        .unwrap();
        assert!(report.overall_rel_err < 1e-4, "seed {seed}: {:?}", report.per_input);
    }
}

#[test]
fn gnn_concentrates_on_matching_support() {
    // Identity-like node maps and a sharp edge network: the query copies the
    // label encoding of its identical support node.
    let dim = 2;
    let n = 2;
    let head = GnnHead::new(dim, n);
    let mut store = ParamStore::default();
    head.init(&mut store, &mut ChaCha8Rng::seed_from_u64(0));
    for l in 0..GNN_LAYERS {
        let d = head.layer_in(l);
        let eh = head.edge_hidden(l);
        let mut w1 = vec![0.0; d * eh];
        // Edges compare embeddings only, never label encodings.
        let compared = if l == 0 { dim } else { d };
        for i in 0..compared {
            w1[i * eh] = 1.0;
        }
        store.params.insert(format!("gnn.{l}.edge1.weight"), Tensor::new(vec![d, eh], w1).unwrap());
        store.params.insert(format!("gnn.{l}.edge2.weight"), Tensor::full(&[eh, 1], -40.0));
        store.params.insert(format!("gnn.{l}.edge2.bias"), Tensor::full(&[1], 10.0));
        let hidden = head.hidden;
        // Aggregated features, keeping only the trailing label slots.
        let mut w = vec![0.0; 2 * d * hidden];
        w[(d - 1) * hidden] = 1.0;
        store.params.insert(format!("gnn.{l}.node.weight"), Tensor::new(vec![2 * d, hidden], w).unwrap());
    }
    store.params.insert("gnn.out.weight".into(), Tensor::new(vec![1, 2], vec![-20.0, 20.0]).unwrap());
    store.params.insert("gnn.out.bias".into(), Tensor::new(vec![2], vec![10.0, -10.0]).unwrap());
    let s = Tensor::new(vec![2, 2], vec![0.0, 0.0, 50.0, 50.0]).unwrap();
    let q = Tensor::new(vec![1, 2], vec![50.0, 50.0]).unwrap();
    let p = gnn_probs(&store, &s, &[0, 1], &q);
    assert!(p.data()[1] > 0.9, "{:?}", p.data());
}

#[test]
fn save_and_load_roundtrip() {
    let model = ModelState::new(small_config(HeadKind::Gnn, true), &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    model.save(&path).unwrap();
    let back = ModelState::load(&path).unwrap();
    assert_eq!(back, model);
    let ep = tiny_episode(1, 16);
    assert_eq!(back.predict(&ep).unwrap(), model.predict(&ep).unwrap());
}

#[test]
fn invalid_configs_name_their_field() {
    let mut cfg = ModelConfig::default();
    cfg.backbone.block_channels = vec![8, 8];
    match ModelState::new(cfg, &mut ChaCha8Rng::seed_from_u64(0)) {
        Err(Error::Config { field, .. }) => assert_eq!(field, "block_channels"),
        other => panic!("{other:?}"),
    }
}

