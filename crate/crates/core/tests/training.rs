mod common;

use std::sync::Arc;

use common::{check_store, sample};
use hdrfuse::fusion_net::{FusionNet, ModelConfig};
use hdrfuse::nn::ParamStore;
use hdrfuse::segmentation::{SegModel, SegmenterConfig};
use hdrfuse::stack_io::Sample;
use hdrfuse::tensor::{Graph, Tensor};
use hdrfuse::training::adam::{adam_step, AdamState};
use hdrfuse::training::init::{glorot_limit, glorot_uniform};
use hdrfuse::training::{
    fusion_loss, loss_graph, sample_patch, train_fusion, train_segmentation, LossKind, MaskSource, TrainConfig,
    TrainMode,
};
use hdrfuse::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn small_seg() -> SegmenterConfig {
    SegmenterConfig {
        base_channels: 4,
        depth: 2,
        ..Default::default()
    }
}

fn quick(steps: usize, patch: usize) -> TrainConfig {
    TrainConfig {
        lr: 1e-3,
        batch_size: 2,
        epochs: 1,
        steps_per_epoch: Some(steps),
        patch,
        ..Default::default()
    }
}

/// Upper-tail p-value of a chi-square statistic.
fn chi_square_p(counts: &[usize], expected: f64) -> f64 {
    let stat: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    1.0 - ChiSquared::new((counts.len() - 1) as f64).unwrap().cdf(stat)
}

#[test]
fn glorot_samples_are_uniform_on_the_limit() {
    let shape = [48, 32, 3, 3];
    let fan_in = 32.0 * 9.0;
    let fan_out = 48.0 * 9.0;
    let limit = (6.0f64 / (fan_in + fan_out)).sqrt();
    assert!((glorot_limit(&shape) - limit).abs() < 1e-15);
    let t = glorot_uniform(&shape, &mut ChaCha8Rng::seed_from_u64(5));
    let n = t.len() as f64;
    assert!(t.data().iter().all(|v| v.abs() <= limit));
    let mean = t.data().iter().sum::<f64>() / n;
    let var = t.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    assert!(mean.abs() < 4.0 * (limit * limit / 3.0 / n).sqrt());
    assert!((var / (limit * limit / 3.0) - 1.0).abs() < 0.05);
    let mut bins = [0usize; 20];
    for v in t.data() {
        let b = (((v + limit) / (2.0 * limit)) * 20.0) as usize;
        bins[b.min(19)] += 1;
    }
    assert!(chi_square_p(&bins, n / 20.0) > 1e-3);
}

/// Scalar Adam written out from the update equations.
fn adam_reference(g: &[f64], lr: f64) -> Vec<f64> {
    let (mut m, mut v, mut x) = (0.0, 0.0, 0.0);
    let mut out = Vec::new();
    for (t, &gt) in g.iter().enumerate() {
        let t = (t + 1) as i32;
        m = 0.9 * m + 0.1 * gt;
        v = 0.999 * v + 0.001 * gt * gt;
        let mh = m / (1.0 - 0.9f64.powi(t));
        let vh = v / (1.0 - 0.999f64.powi(t));
        x -= lr * mh / (vh.sqrt() + 1e-8);
        out.push(x);
    }
    out
}

#[test]
fn adam_follows_the_update_rule_and_converges() {
    let g = [0.5, -1.0, 2.0, 0.25, 0.0, -3.0];
    let oracle = adam_reference(&g, 0.01);
    let mut p = vec![Tensor::zeros(&[1])];
    let mut state = AdamState::new(&p);
    for (gt, want) in g.iter().zip(&oracle) {
        adam_step(&mut p, &[Some(Tensor::full(&[1], *gt))], &mut state, 0.01);
        assert!((p[0].data()[0] - want).abs() < 1e-15);
    }

    let target = [3.0, -2.0, 0.5];
    let mut p = vec![Tensor::zeros(&[3])];
    let mut state = AdamState::new(&p);
    for _ in 0..5000 {
        let grad: Vec<f64> = p[0].data().iter().zip(&target).map(|(x, c)| 2.0 * (x - c)).collect();
        adam_step(&mut p, &[Some(Tensor::from_vec(vec![3], grad))], &mut state, 0.01);
    }
    for (x, c) in p[0].data().iter().zip(&target) {
        assert!((x - c).abs() < 1e-3, "{x} vs {c}");
    }
}

#[test]
fn patch_positions_are_uniform() {
    let s = common::scene(40, 256, &[-2, 0, 2]);
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut xs = vec![0usize; 129];
    let mut ys = vec![0usize; 129];
    let draws = 10_000;
    for _ in 0..draws {
        let p = sample_patch(&s.stack, None, &[], 128, &mut rng).unwrap();
        assert_eq!((p.stack.width(), p.stack.height()), (128, 128));
        xs[p.x0] += 1;
        ys[p.y0] += 1;
    }
    let expected = draws as f64 / 129.0;
    let (px, py) = (chi_square_p(&xs, expected), chi_square_p(&ys, expected));
    println!("patch uniformity p-values x {px:.3} y {py:.3}");
    assert!(px > 1e-3 && py > 1e-3);
}

#[test]
fn patches_crop_every_input_identically() {
    let s = common::scene(41, 64, &[-2, 0, 2]);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let p = sample_patch(&s.stack, Some(&s.ground_truth), &s.masks, 32, &mut rng).unwrap();
    assert_eq!(p.stack.image(0), &s.stack.image(0).crop(p.x0, p.y0, 32, 32));
    assert_eq!(p.gt.as_ref().unwrap(), &s.ground_truth.crop(p.x0, p.y0, 32, 32));
    assert_eq!(p.masks[1], s.masks[1].crop(p.x0, p.y0, 32, 32));
    assert!(matches!(
        sample_patch(&s.stack, None, &[], 65, &mut rng),
        Err(Error::PatchTooLarge { size: 65, .. })
    ));
}

#[test]
fn ms_ssim_loss_gradient_matches_finite_differences() {
    let target = hdrfuse::training::init::glorot_init(&[3, 24, 24], 1).map(|v| 0.5 + v);
    let pred = hdrfuse::training::init::glorot_init(&[3, 24, 24], 2).map(|v| 0.5 + 0.7 * v);
    let mut store = ParamStore::new();
    store.add("pred", pred);
    for kind in [LossKind::L1MsSsim, LossKind::L1L2MsSsim, LossKind::L2MsSsim] {
        let run = |s: &ParamStore, train: bool| {
            let mut g = Graph::new();
            let p = s.bind(&mut g, train);
            let t = g.constant(target.clone());
            let l = loss_graph(&mut g, p.vars()[0], t, kind);
            (g, l, p)
        };
        let (g, l, p) = run(&store, true);
        let grads = g.backward(l);
        let analytic = vec![grads.get(p.vars()[0]).cloned()];
        let mut copy = store.clone();
        let r = check_store(&mut copy, &analytic, 40, 3, 1e-3, &mut |s| {
            let (g, l, _) = run(s, false);
            g.value(l).item()
        });
        assert!(r.failures.is_empty(), "{kind}: {:#?}", r.failures);
    }
}

#[test]
fn bce_gradient_is_sigmoid_minus_target() {
    let mut g = Graph::new();
    let logits = g.leaf(Tensor::from_vec(vec![1, 1, 4], vec![-2.0, 0.0, 0.5, 3.0]));
    let target = Arc::new(Tensor::from_vec(vec![1, 1, 4], vec![0.0, 1.0, 1.0, 0.0]));
    let l = g.bce_with_logits(logits, target.clone());
    let grads = g.backward(l);
    let dl = grads.get(logits).unwrap();
    for i in 0..4 {
        let z = g.value(logits).data()[i];
        let s = 1.0 / (1.0 + (-z).exp());
        assert!((dl.data()[i] - (s - target.data()[i]) / 4.0).abs() < 1e-15);
    }
}

fn params_equal(a: &ParamStore, b: &ParamStore) -> bool {
    a.tensors() == b.tensors()
}

#[test]
fn segmentation_training_is_reproducible() {
    let samples = vec![sample(50, 32)];
    let cfg = TrainConfig {
        seed: 4,
        ..quick(3, 16)
    };
    let (a, ra) = train_segmentation(&samples, &small_seg(), &cfg).unwrap();
    let (b, rb) = train_segmentation(&samples, &small_seg(), &cfg).unwrap();
    assert!(params_equal(a.params(), b.params()));
    assert_eq!(ra.final_loss().unwrap().to_bits(), rb.final_loss().unwrap().to_bits());
    let (c, _) = train_segmentation(&samples, &small_seg(), &TrainConfig { seed: 5, ..cfg }).unwrap();
    assert!(!params_equal(a.params(), c.params()));
}

#[test]
fn fusion_training_is_reproducible() {
    let samples = vec![sample(51, 32), sample(52, 32)];
    let run = || {
        let net = FusionNet::new(ModelConfig::default(), 1).unwrap();
        train_fusion(&samples, &samples, net, MaskSource::GroundTruth, &quick(2, 16)).unwrap()
    };
    let (a, b) = (run(), run());
    assert!(params_equal(a.model.params(), b.model.params()));
    assert_eq!(a.report.to_jsonl().unwrap().lines().count(), 1);
    assert_eq!(
        a.report.epochs[0].val_psnr_t.map(f64::to_bits),
        b.report.epochs[0].val_psnr_t.map(f64::to_bits)
    );
}

#[test]
fn tiny_step_lowers_the_training_loss() {
    let samples: Vec<Sample> = (0..4).map(|i| sample(60 + i, 32)).collect();
    let net = FusionNet::new(ModelConfig::default(), 2).unwrap();
    let mean_loss = |net: &FusionNet| {
        samples
            .iter()
            .map(|s| {
                fusion_loss(
                    net,
                    &s.stack,
                    s.gt_masks.as_ref().unwrap(),
                    s.gt_hdr.as_ref().unwrap(),
                    LossKind::L2,
                )
                .unwrap()
            })
            .sum::<f64>()
            / samples.len() as f64
    };
    let before = mean_loss(&net);
    let cfg = TrainConfig {
        lr: 1e-6,
        batch_size: 4,
        epochs: 1,
        steps_per_epoch: Some(1),
        patch: 32,
        ..Default::default()
    };
    let out = train_fusion(&samples, &[], net, MaskSource::GroundTruth, &cfg).unwrap();
    let after = mean_loss(&out.model);
    assert!((out.report.epochs[0].mean_loss - before).abs() < 1e-12 * before.max(1.0));
    assert!(after < before, "{after} vs {before}");
}

#[test]
fn two_stage_training_freezes_the_segmenter() {
    let samples = vec![sample(70, 32)];
    let seg = SegModel::new(small_seg(), 3).unwrap();
    let net = FusionNet::new(ModelConfig::default(), 1).unwrap();
    let out = train_fusion(
        &samples,
        &[],
        net.clone(),
        MaskSource::Segmenter(seg.clone()),
        &quick(2, 16),
    )
    .unwrap();
    assert!(params_equal(out.segmenter.as_ref().unwrap().params(), seg.params()));
    assert!(!params_equal(out.model.params(), net.params()));

    for mode in [TrainMode::EndToEnd, TrainMode::EndToEndWithSegLoss] {
        let cfg = TrainConfig { mode, ..quick(2, 16) };
        let out = train_fusion(&samples, &[], net.clone(), MaskSource::Segmenter(seg.clone()), &cfg).unwrap();
        assert!(
            !params_equal(out.segmenter.as_ref().unwrap().params(), seg.params()),
            "{mode:?}"
        );
    }
}

#[test]
fn training_rejects_inconsistent_inputs() {
    let net = FusionNet::new(ModelConfig::default(), 1).unwrap();
    let cfg = quick(1, 16);
    assert!(matches!(
        train_fusion(&[], &[], net.clone(), MaskSource::Zero, &cfg),
        Err(Error::EmptyDataset)
    ));
    assert!(matches!(
        train_segmentation(&[], &small_seg(), &cfg),
        Err(Error::EmptyDataset)
    ));

    let mut unlabeled = sample(71, 32);
    unlabeled.gt_masks = None;
    let joint = TrainConfig {
        mode: TrainMode::EndToEnd,
        ..cfg.clone()
    };
    assert!(matches!(
        train_fusion(
            std::slice::from_ref(&unlabeled),
            &[],
            net.clone(),
            MaskSource::Zero,
            &joint
        ),
        Err(Error::ModeDataMismatch { .. })
    ));
    let seg = SegModel::new(small_seg(), 1).unwrap();
    let with_loss = TrainConfig {
        mode: TrainMode::EndToEndWithSegLoss,
        ..cfg.clone()
    };
    assert!(matches!(
        train_fusion(
            std::slice::from_ref(&unlabeled),
            &[],
            net.clone(),
            MaskSource::Segmenter(seg),
            &with_loss
        ),
        Err(Error::ModeDataMismatch { .. })
    ));
    assert!(matches!(
        train_segmentation(std::slice::from_ref(&unlabeled), &small_seg(), &cfg),
        Err(Error::ModeDataMismatch { .. })
    ));
    assert!(matches!(
        train_fusion(&[sample(72, 32)], &[], net, MaskSource::Zero, &quick(1, 64)),
        Err(Error::PatchTooLarge { size: 64, .. })
    ));
}

#[test]
fn checkpoints_are_written_each_epoch() {
    let dir = tempfile::tempdir().unwrap();
    let samples = vec![sample(73, 32)];
    let cfg = TrainConfig {
        epochs: 2,
        checkpoint_dir: Some(dir.path().to_path_buf()),
        ..quick(1, 16)
    };
    let out = train_fusion(
        &samples,
        &[],
        FusionNet::new(ModelConfig::default(), 1).unwrap(),
        MaskSource::Zero,
        &cfg,
    )
    .unwrap();
    let loaded = FusionNet::load(&dir.path().join("fusion.ckpt")).unwrap();
    assert!(params_equal(loaded.params(), out.model.params()));
    assert_eq!(loaded.config(), out.model.config());
    let (seg, report) = train_segmentation(&samples, &small_seg(), &cfg).unwrap();
    let loaded = SegModel::load(&dir.path().join("segmenter.ckpt")).unwrap();
    assert!(params_equal(loaded.params(), seg.params()));
    let path = dir.path().join("log.jsonl");
    report.save_jsonl(&path).unwrap();
    let text = std::fs::read_to_string(path).unwrap();
    assert_eq!(text.lines().count(), 2);
    let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    assert_eq!(first["epoch"], 0);
    assert!(first["mean_loss"].as_f64().unwrap() > 0.0);
}

#[test]
fn schedule_decays_geometrically() {
    let cfg = TrainConfig {
        lr: 1e-4,
        lr_decay: 0.96,
        ..Default::default()
    };
    let mut lr = 1e-4;
    for e in 0..50 {
        assert!((cfg.lr_at(e) - lr).abs() <= 1e-18);
        lr *= 0.96;
    }
}
