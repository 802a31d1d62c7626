//! A standalone single teacher-student self-training loop on `{S, ⟨S,T⟩}`,
//! written straight from the method description with library primitives
//! only (no trainer code). Used as the oracle for the baseline reduction.
#![allow(dead_code)]

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use dts_core::domain_mix::{
    apply_geometric, apply_photometric, classmix_mask, mix, mix_labels, pseudo_label_masked,
    sample_geometric, sample_photometric,
};
use dts_core::numeric::{adamw_step, AdamWConfig, OptimState};
use dts_core::rng::{derive_seed, stream, streams};
use dts_core::segmodel::{ema_update, ModelGroup};
use dts_core::synth::Benchmark;
use dts_core::{LabelMap, SegNet, Tape, Tensor, TrainerConfig};

struct Order {
    idx: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl Order {
    fn new(n: usize, mut rng: ChaCha8Rng) -> Self {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut rng);
        Self { idx, pos: 0, rng }
    }

    fn next(&mut self) -> usize {
        if self.pos == self.idx.len() {
            self.idx.shuffle(&mut self.rng);
            self.pos = 0;
        }
        self.pos += 1;
        self.idx[self.pos - 1]
    }
}

/// Runs `steps` iterations and returns the student parameters after each.
pub fn run_single_ts(cfg: &TrainerConfig, data: &Benchmark, steps: usize) -> Vec<Vec<Tensor>> {
    let id = 1u64;
    let student = SegNet::init(&cfg.arch, derive_seed(cfg.seed, &[streams::INIT, id])).unwrap();
    let mut g = ModelGroup {
        id: 1,
        teacher: student.clone(),
        student,
    };
    let mut opt = OptimState::new(
        AdamWConfig::new(vec![cfg.lr_encoder, cfg.lr_decoder], cfg.weight_decay),
        &g.student.params().iter().collect::<Vec<_>>(),
        g.student.param_groups(),
    )
    .unwrap();
    let mut src_order = Order::new(
        data.source_train.len(),
        stream(cfg.seed, &[streams::SOURCE_ORDER, id]),
    );
    let mut tgt_order = Order::new(
        data.target_train.len(),
        stream(cfg.seed, &[streams::TARGET_ORDER, id]),
    );
    let schedule = cfg.schedule().unwrap();
    let k = cfg.batch_size;
    let mut trajectory = Vec::new();
    for t in 0..steps {
        ema_update(&mut g, cfg.lambda).unwrap();
        let mut rng = stream(cfg.seed, &[streams::STEP, t as u64, id]);

        // k pure-source samples and k source images to paste, then k targets
        let mut src = Vec::new();
        for _ in 0..2 * k {
            let s = &data.source_train[src_order.next()];
            let geo = sample_geometric(&mut rng, &cfg.augment);
            src.push(apply_geometric(&s.image, &s.label, &geo).unwrap());
        }
        let mut tgt = Vec::new();
        for _ in 0..k {
            let img = data.target_train.get(tgt_order.next());
            let (_, h, w) = img.chw().unwrap();
            let geo = sample_geometric(&mut rng, &cfg.augment);
            let (im, lab) = apply_geometric(img, &LabelMap::filled(h, w, 0), &geo).unwrap();
            let valid: Vec<bool> = lab.data().iter().map(|&v| v != 255).collect();
            tgt.push((im, valid));
        }
        let pls: Vec<_> = tgt
            .iter()
            .map(|(im, valid)| {
                pseudo_label_masked(&g.teacher.forward(im).unwrap(), cfg.tau, Some(valid)).unwrap()
            })
            .collect();

        let mut batch: Vec<(Tensor, LabelMap, Vec<f32>)> = Vec::new();
        for (im, lab) in &src[..k] {
            batch.push((im.clone(), lab.clone(), vec![1.0; lab.len()]));
        }
        for i in 0..k {
            let (simg, slab) = &src[k + i];
            let mask = classmix_mask(slab, &mut rng).unwrap();
            let image = mix(simg, &tgt[i].0, &mask).unwrap();
            let (label, weight) = mix_labels(
                slab,
                &pls[i].labels,
                &vec![1.0; slab.len()],
                &vec![pls[i].gamma; slab.len()],
                &mask,
            )
            .unwrap();
            batch.push((image, label, weight));
        }
        for b in batch[k..].iter_mut() {
            let draw = sample_photometric(&mut rng, &cfg.augment);
            b.0 = apply_photometric(&b.0, &draw).unwrap();
        }

        let mut tape = Tape::new();
        let vars = g.student.bind(&mut tape, true);
        let mut losses = Vec::new();
        for (im, lab, wt) in &batch {
            let x = tape.constant(im.clone());
            let y = g.student.forward_bound(&mut tape, &vars, x).unwrap();
            losses.push(tape.weighted_cross_entropy(y, lab, wt).unwrap());
        }
        let loss = tape.mean(&losses).unwrap();
        let grads = tape.backward(loss).unwrap();
        let gs: Vec<&[f32]> = vars.iter().map(|&v| grads.get(v).unwrap()).collect();
        let mut ps: Vec<&mut Tensor> = g.student.params_mut().iter_mut().collect();
        adamw_step(&mut ps, &gs, &mut opt, schedule.lr_at(t, 1.0)).unwrap();
        trajectory.push(g.student.params().to_vec());
    }
    trajectory
}
