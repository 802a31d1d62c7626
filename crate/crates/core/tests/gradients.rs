#[path = "support/reference.rs"]
mod reference;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dts_core::{Arch, LabelMap, SegNet, Tape, Tensor};
use reference::{fd_grad, params_f64, rel_err};

fn small_arch() -> Arch {
    Arch {
        stem_width: 3,
        width: 4,
        mid_layers: 1,
        downsample: 2,
        num_classes: 3,
        ..Arch::default()
    }
}

fn problem(seed: u64, h: usize, w: usize) -> (SegNet, Tensor, LabelMap, Vec<f32>) {
    let arch = small_arch();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = SegNet::init(&arch, seed).unwrap();
    for p in net.params_mut() {
        for v in p.data_mut() {
            *v += rng.gen_range(-0.05..0.05);
        }
    }
    let image = Tensor::new(&[3, h, w], (0..3 * h * w).map(|_| rng.gen()).collect()).unwrap();
    let labels = (0..h * w)
        .map(|_| {
            if rng.gen_bool(0.1) {
                LabelMap::IGNORE
            } else {
                rng.gen_range(0..3)
            }
        })
        .collect();
    let label = LabelMap::new(h, w, labels).unwrap();
    let weights = (0..h * w).map(|_| rng.gen_range(0.2..1.0)).collect();
    (net, image, label, weights)
}

fn analytic(
    net: &SegNet,
    image: &Tensor,
    label: &LabelMap,
    weights: &[f32],
) -> (f32, Vec<Vec<f32>>) {
    let mut tape = Tape::new();
    let vars = net.bind(&mut tape, true);
    let x = tape.constant(image.clone());
    let y = net.forward_bound(&mut tape, &vars, x).unwrap();
    let loss = tape.weighted_cross_entropy(y, label, weights).unwrap();
    let g = tape.backward(loss).unwrap();
    (
        tape.value(loss).item(),
        vars.iter().map(|&v| g.get(v).unwrap().to_vec()).collect(),
    )
}

#[test]
fn forward_matches_double_precision_reference() {
    let (net, image, _, _) = problem(1, 8, 6);
    let img64: Vec<f64> = image.data().iter().map(|&v| v as f64).collect();
    let want = reference::forward(net.arch(), &params_f64(&net), &img64, 8, 6);
    let got = net.forward(&image).unwrap();
    for (a, b) in got.data().iter().zip(&want) {
        assert!((*a as f64 - b).abs() < 1e-4, "{a} vs {b}");
    }
}

#[test]
fn loss_matches_reference() {
    let (net, image, label, weights) = problem(2, 6, 6);
    let img64: Vec<f64> = image.data().iter().map(|&v| v as f64).collect();
    let want = reference::loss(net.arch(), &params_f64(&net), &img64, &label, &weights);
    let (got, _) = analytic(&net, &image, &label, &weights);
    assert!((got as f64 - want).abs() < 1e-5 * want.abs().max(1.0));
}

#[test]
fn backward_matches_central_differences() {
    let mut total = 0;
    let mut good = 0;
    for seed in 0..4 {
        let (net, image, label, weights) = problem(100 + seed, 6, 6);
        let img64: Vec<f64> = image.data().iter().map(|&v| v as f64).collect();
        let p64 = params_f64(&net);
        let (_, grads) = analytic(&net, &image, &label, &weights);
        for (i, g) in grads.iter().enumerate() {
            for (j, &a) in g.iter().enumerate() {
                let fd = fd_grad(net.arch(), &p64, i, j, &img64, &label, &weights, 1e-5);
                total += 1;
                if rel_err(a as f64, fd, 1e-6) < 1e-3 {
                    good += 1;
                }
            }
        }
    }
    assert!(good as f64 >= 0.99 * total as f64, "{good}/{total}");
}
