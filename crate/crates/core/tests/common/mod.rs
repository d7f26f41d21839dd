#![allow(dead_code)]

use hdrfuse::fusion_net::{order_masks, FusionInput, FusionNet};
use hdrfuse::nn::ParamStore;
use hdrfuse::segmentation::SegModel;
use hdrfuse::stack_io::{synth_scene_with, Sample, SynthConfig, SynthScene};
use hdrfuse::tensor::{Graph, Tensor, Var};
use hdrfuse::training::{loss_graph, LossKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn scene(seed: u64, size: usize, ev: &[i32]) -> SynthScene {
    synth_scene_with(&SynthConfig::new(seed, size, size, ev.to_vec())).unwrap()
}

pub fn sample(seed: u64, size: usize) -> Sample {
    let s = scene(seed, size, &[-2, 0, 2]);
    Sample {
        id: format!("scene{seed}"),
        stack: s.stack,
        gt_hdr: Some(s.ground_truth),
        gt_masks: Some(s.masks),
    }
}

/// Moves every bias off zero. With zero biases, convolutions over exactly
/// black regions sit on activation kinks where central differences are
/// meaningless.
pub fn jitter_biases(store: &mut ParamStore, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids: Vec<_> = store.ids().filter(|&id| store.name(id).ends_with(".bias")).collect();
    for id in ids {
        for v in store.get_mut(id).data_mut() {
            *v = rng.random_range(-0.1..0.1);
        }
    }
}

/// Outcome of a finite-difference sweep.
#[derive(Debug, Default)]
pub struct GradReport {
    pub probes: usize,
    /// Probes that only agreed at the smaller step, i.e. the larger step
    /// straddled an activation kink.
    pub refined: usize,
    /// Largest `|analytic - numeric| / max(|analytic|, |numeric|)`, floor
    /// included or not.
    pub worst_rel: f64,
    pub worst_name: String,
    pub failures: Vec<String>,
}

const STEPS: [f64; 2] = [1e-5, 1e-6];

/// Central differences on up to `per_tensor` entries of every parameter
/// tensor, compared with `analytic` at relative tolerance `rtol`. The
/// absolute floor is the rounding error of the difference quotient.
pub fn check_store(
    store: &mut ParamStore,
    analytic: &[Option<Tensor>],
    per_tensor: usize,
    seed: u64,
    rtol: f64,
    loss: &mut dyn FnMut(&ParamStore) -> f64,
) -> GradReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradReport::default();
    let base = loss(store).abs();
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let n = store.get(id).len();
        let picks: Vec<usize> = if n <= per_tensor {
            (0..n).collect()
        } else {
            (0..per_tensor).map(|_| rng.random_range(0..n)).collect()
        };
        for j in picks {
            report.probes += 1;
            let a = analytic[id.index()].as_ref().map_or(0.0, |t| t.data()[j]);
            let orig = store.get(id).data()[j];
            let mut best: Option<(f64, f64, f64)> = None;
            for (attempt, &h) in STEPS.iter().enumerate() {
                store.get_mut(id).data_mut()[j] = orig + h;
                let lp = loss(store);
                store.get_mut(id).data_mut()[j] = orig - h;
                let lm = loss(store);
                store.get_mut(id).data_mut()[j] = orig;
                let numeric = (lp - lm) / (2.0 * h);
                let err = (a - numeric).abs();
                let scale = a.abs().max(numeric.abs());
                let floor = 16.0 * f64::EPSILON * base.max(1e-3) / h;
                let raw = if scale > 0.0 { err / scale } else { 0.0 };
                let rel = if err <= floor { 0.0 } else { raw };
                if best.is_none_or(|(r, _, _)| rel < r) {
                    best = Some((rel, raw, numeric));
                }
                if rel <= rtol {
                    report.refined += (attempt > 0) as usize;
                    break;
                }
            }
            let (rel, raw, numeric) = best.expect("at least one step");
            let name = format!("{}[{j}]", store.name(id));
            if raw > report.worst_rel {
                report.worst_rel = raw;
                report.worst_name = name.clone();
            }
            if rel > rtol {
                report
                    .failures
                    .push(format!("{name}: analytic {a:.6e} numeric {numeric:.6e}"));
            }
        }
    }
    report
}

fn fusion_graph(
    net: &FusionNet,
    store: &ParamStore,
    input: &FusionInput,
    masks: &[Tensor],
    target: &Tensor,
    trainable: bool,
) -> (Graph, Var, Vec<Var>) {
    let mut g = Graph::new();
    let p = store.bind(&mut g, trainable);
    let mv: Vec<Var> = masks.iter().map(|m| g.constant(m.clone())).collect();
    let trace = net.forward_graph(&mut g, &p, input, &mv).unwrap();
    let t = g.constant(target.clone());
    let loss = loss_graph(&mut g, trace.output, t, LossKind::L2);
    (g, loss, p.vars().to_vec())
}

/// Finite-difference check of the l2 tonemapped loss through a fusion model.
pub fn fusion_gradcheck(mut net: FusionNet, scene: &SynthScene, per_tensor: usize, rtol: f64) -> GradReport {
    jitter_biases(net.params_mut(), 1);
    let masks = order_masks(&scene.stack, &scene.masks).unwrap();
    let input = FusionInput::new(&scene.stack, &masks, net.config()).unwrap();
    let mask_t: Vec<Tensor> = masks.iter().map(|m| m.to_tensor()).collect();
    let target = input.tonemap_target(&scene.ground_truth, net.config().mu);
    let (g, loss, vars) = fusion_graph(&net, net.params(), &input, &mask_t, &target, true);
    let mut grads = g.backward(loss);
    let analytic: Vec<Option<Tensor>> = vars.iter().map(|&v| grads.take(v)).collect();
    let shadow = net.clone();
    let mut store = net.params_mut().clone();
    check_store(&mut store, &analytic, per_tensor, 7, rtol, &mut |s| {
        let (g, l, _) = fusion_graph(&shadow, s, &input, &mask_t, &target, false);
        g.value(l).item()
    })
}

fn seg_graph(
    model: &SegModel,
    store: &ParamStore,
    src: &Tensor,
    reference: &Tensor,
    target: &Tensor,
    trainable: bool,
) -> (Graph, Var, Vec<Var>) {
    let mut g = Graph::new();
    let p = store.bind(&mut g, trainable);
    let s = g.constant(src.clone());
    let r = g.constant(reference.clone());
    let logits = model.forward_logits(&mut g, &p, s, r);
    let loss = g.bce_with_logits(logits, std::sync::Arc::new(target.clone()));
    (g, loss, p.vars().to_vec())
}

/// Finite-difference check of the mask cross-entropy through the segmenter.
pub fn seg_gradcheck(model: &SegModel, scene: &SynthScene, per_tensor: usize, rtol: f64) -> GradReport {
    let mut model = model.clone();
    jitter_biases(model.params_mut(), 2);
    let model = &model;
    let m = &scene.masks[0];
    let src = scene.stack.image(m.source_index).to_tensor();
    let reference = scene.stack.reference().to_tensor();
    let target = m.to_tensor();
    let (g, loss, vars) = seg_graph(model, model.params(), &src, &reference, &target, true);
    let mut grads = g.backward(loss);
    let analytic: Vec<Option<Tensor>> = vars.iter().map(|&v| grads.take(v)).collect();
    let mut store = model.params().clone();
    check_store(&mut store, &analytic, per_tensor, 11, rtol, &mut |s| {
        let (g, l, _) = seg_graph(model, s, &src, &reference, &target, false);
        g.value(l).item()
    })
}
