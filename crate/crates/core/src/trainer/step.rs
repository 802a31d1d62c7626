use super::batch::{assemble_batch, BatchAugment, EpochSampler, TargetView};
use super::combination::DataCombination;
use super::config::TrainerConfig;
use super::prob::ProbEstimator;
use super::routing::{ModelRef, RoutingPolicy};
use crate::domain_mix::{pseudo_label_masked, DomainTag, PseudoLabel};
use crate::error::{DtsError, Result};
use crate::eval::{evaluate, MetricsRow};
use crate::numeric::{adamw_step, AdamWConfig, LrSchedule, OptimState, Tape, Tensor};
use crate::rng::{derive_seed, stream, streams};
use crate::segmodel::{ema_update, init_group, ModelGroup, SegNet};
use crate::synth::Benchmark;

/// Sub-steps of one iteration, in the order they ran.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepEvent {
    Ema { group: u8 },
    Update { group: u8 },
}

/// Which model labelled which target slot.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AuditEntry {
    pub iter: usize,
    pub group: u8,
    pub slot: usize,
    pub tag: DomainTag,
    pub source: ModelRef,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IterationReport {
    pub iter: usize,
    pub loss_g1: f32,
    pub loss_g2: Option<f32>,
    /// Mean confidence factor of the group's pseudo labels.
    pub gamma_g1: Option<f32>,
    pub gamma_g2: Option<f32>,
    pub prob: Option<f64>,
    /// Decoder learning rate used for the update.
    pub lr: f32,
}

/// A teacher/student pair with its optimizer and data streams.
#[derive(Clone, Debug)]
pub struct GroupState {
    pub models: ModelGroup,
    pub optim: OptimState,
    pub combination: DataCombination,
    source: EpochSampler,
    target: EpochSampler,
}

impl GroupState {
    fn new(
        id: u8,
        combination: DataCombination,
        config: &TrainerConfig,
        data: &Benchmark,
    ) -> Result<Self> {
        let seed = config.seed;
        let models = init_group(
            id,
            &config.arch,
            derive_seed(seed, &[streams::INIT, id as u64]),
        )?;
        let optim = OptimState::new(
            AdamWConfig::new(
                vec![config.lr_encoder, config.lr_decoder],
                config.weight_decay,
            ),
            &models.student.params().iter().collect::<Vec<_>>(),
            models.student.param_groups(),
        )?;
        Ok(Self {
            models,
            optim,
            combination,
            source: EpochSampler::new(
                data.source_train.len(),
                stream(seed, &[streams::SOURCE_ORDER, id as u64]),
            )?,
            target: EpochSampler::new(
                data.target_train.len(),
                stream(seed, &[streams::TARGET_ORDER, id as u64]),
            )?,
        })
    }
}

/// Stateful driver of the dual teacher-student loop.
pub struct Trainer<'a> {
    config: TrainerConfig,
    policy: RoutingPolicy,
    schedule: LrSchedule,
    data: &'a Benchmark,
    groups: Vec<GroupState>,
    prob: ProbEstimator,
    audit: Vec<AuditEntry>,
    events: Vec<(usize, StepEvent)>,
    iter: usize,
}

fn resolve<'m>(
    r: ModelRef,
    me: &'m ModelGroup,
    peer: Option<&'m ModelGroup>,
) -> Result<&'m SegNet> {
    let group = if r.group() == me.id {
        me
    } else {
        peer.filter(|p| p.id == r.group())
            .ok_or_else(|| DtsError::Config(format!("pseudo-label source {r} is not available")))?
    };
    Ok(if r.is_teacher() {
        &group.teacher
    } else {
        &group.student
    })
}

fn label_with(net: &SegNet, view: &TargetView, tau: f32) -> Result<PseudoLabel> {
    pseudo_label_masked(&net.forward(&view.image)?, tau, Some(&view.valid))
}

struct GroupOutcome {
    loss: f32,
    gamma: Option<f32>,
}

/// Steps (2) and (4): one student update of `me`, with `peer` as the
/// other group in whatever state the schedule allows it to be read.
#[allow(clippy::too_many_arguments)]
fn update_group(
    config: &TrainerConfig,
    policy: &RoutingPolicy,
    data: &Benchmark,
    iter: usize,
    lr_scale: f32,
    me: &mut GroupState,
    peer: Option<&ModelGroup>,
    prob: Option<&mut ProbEstimator>,
    audit: &mut Vec<AuditEntry>,
) -> Result<GroupOutcome> {
    let id = me.models.id;
    let k = config.batch_size;
    let routes = policy.plan(id, &me.combination, k, peer.is_some());
    let n_st = me.combination.counts(k).st;
    let aug = BatchAugment {
        weak: config.weak_aug.then_some(config.augment),
        strong: config.strong_aug.then_some(config.augment),
    };
    let mut rng = stream(config.seed, &[streams::STEP, iter as u64, id as u64]);

    let GroupState {
        models,
        optim,
        combination,
        source,
        target,
    } = me;
    let models = &*models;
    let batch = assemble_batch(
        combination,
        k,
        &mut || {
            let s = &data.source_train[source.next_index()];
            (s.image.clone(), s.label.clone())
        },
        &mut || data.target_train.get(target.next_index()).clone(),
        &mut |slot, view| label_with(resolve(routes[slot], models, peer)?, view, config.tau),
        &mut rng,
        &aug,
    )?;

    for (slot, &source) in routes.iter().enumerate() {
        audit.push(AuditEntry {
            iter,
            group: id,
            slot,
            tag: if slot < n_st {
                DomainTag::ST
            } else {
                DomainTag::TT
            },
            source,
        });
    }

    if let (Some(prob), Some(peer)) = (prob, peer) {
        for (slot, view) in batch.targets.iter().enumerate() {
            let gamma_of = |r: ModelRef| -> Result<f32> {
                if routes[slot] == r {
                    Ok(batch.pseudo[slot].gamma)
                } else {
                    Ok(label_with(resolve(r, models, Some(peer))?, view, config.tau)?.gamma)
                }
            };
            let te2 = gamma_of(ModelRef::Group2Teacher)?;
            let st1 = gamma_of(ModelRef::Group1Student)?;
            prob.record(iter, te2, st1);
        }
    }

    let student = &models.student;
    let mut tape = Tape::new();
    let params = student.bind(&mut tape, true);
    let mut losses = Vec::with_capacity(batch.samples.len());
    for s in &batch.samples {
        let x = tape.constant(s.image.clone());
        let logits = student.forward_bound(&mut tape, &params, x)?;
        losses.push(tape.weighted_cross_entropy(logits, &s.label, &s.pixel_weight)?);
    }
    let loss = tape.mean(&losses)?;
    let loss_value = tape.value(loss).item();
    if !loss_value.is_finite() {
        return Err(DtsError::NanLoss { iter, group: id });
    }
    let grads = tape.backward(loss)?;
    let grad_slices = params
        .iter()
        .map(|&p| {
            grads
                .get(p)
                .ok_or(DtsError::NonFinite("missing parameter gradient"))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut targets: Vec<&mut Tensor> = me.models.student.params_mut().iter_mut().collect();
    // a finite loss can still hide non-finite inputs behind a saturated activation
    adamw_step(&mut targets, &grad_slices, optim, lr_scale).map_err(|e| match e {
        DtsError::NanGradient { .. } => DtsError::NanLoss { iter, group: id },
        e => e,
    })?;
    Ok(GroupOutcome {
        loss: loss_value,
        gamma: batch.mean_gamma(),
    })
}

impl<'a> Trainer<'a> {
    pub fn new(config: TrainerConfig, data: &'a Benchmark) -> Result<Self> {
        config.validate()?;
        if config.arch.num_classes != data.spec.num_classes {
            return Err(DtsError::Config(format!(
                "model has {} classes, data has {}",
                config.arch.num_classes, data.spec.num_classes
            )));
        }
        if data.source_train.is_empty() {
            return Err(DtsError::Config("no source training images".into()));
        }
        let mut groups = vec![GroupState::new(1, config.group1.clone(), &config, data)?];
        if let Some(c) = &config.group2 {
            groups.push(GroupState::new(2, c.clone(), &config, data)?);
        }
        Ok(Self {
            policy: config.routing_policy(),
            schedule: config.schedule()?,
            prob: ProbEstimator::windowed(config.prob_window),
            config,
            data,
            groups,
            audit: Vec::new(),
            events: Vec::new(),
            iter: 0,
        })
    }

    pub fn config(&self) -> &TrainerConfig {
        &self.config
    }

    /// Iterations completed so far.
    pub fn iteration(&self) -> usize {
        self.iter
    }

    pub fn group(&self, id: u8) -> Option<&ModelGroup> {
        self.groups.get(id as usize - 1).map(|g| &g.models)
    }

    pub fn groups(&self) -> impl Iterator<Item = &ModelGroup> {
        self.groups.iter().map(|g| &g.models)
    }

    /// Group 2's student, or group 1's when there is no group 2.
    pub fn final_model(&self) -> &SegNet {
        &self
            .groups
            .last()
            .expect("at least one group")
            .models
            .student
    }

    pub fn prob(&self) -> &ProbEstimator {
        &self.prob
    }

    pub fn audit(&self) -> &[AuditEntry] {
        &self.audit
    }

    pub fn events(&self) -> &[(usize, StepEvent)] {
        &self.events
    }

    /// Runs one iteration:
    /// (1) EMA of group 1's teacher, (2) group 1's student update,
    /// (3) EMA of group 2's teacher, (4) group 2's student update.
    pub fn step(&mut self) -> Result<IterationReport> {
        let t = self.iter;
        if t >= self.config.iterations {
            return Err(DtsError::InvalidArgument(format!(
                "iteration {t} is past the configured {}",
                self.config.iterations
            )));
        }
        let lr_scale = self.schedule.lr_at(t, 1.0);
        let (first, rest) = self.groups.split_at_mut(1);
        let g1 = &mut first[0];
        let g2 = rest.first_mut();

        ema_update(&mut g1.models, self.config.lambda)?;
        self.events.push((t, StepEvent::Ema { group: 1 }));
        let out1 = update_group(
            &self.config,
            &self.policy,
            self.data,
            t,
            lr_scale,
            g1,
            g2.as_deref().map(|g| &g.models),
            None,
            &mut self.audit,
        )?;
        self.events.push((t, StepEvent::Update { group: 1 }));

        let mut out2 = None;
        if let Some(g2) = g2 {
            ema_update(&mut g2.models, self.config.lambda)?;
            self.events.push((t, StepEvent::Ema { group: 2 }));
            out2 = Some(update_group(
                &self.config,
                &self.policy,
                self.data,
                t,
                lr_scale,
                g2,
                Some(&g1.models),
                Some(&mut self.prob),
                &mut self.audit,
            )?);
            self.events.push((t, StepEvent::Update { group: 2 }));
        }
        self.iter += 1;
        Ok(IterationReport {
            iter: t,
            loss_g1: out1.loss,
            loss_g2: out2.as_ref().map(|o| o.loss),
            gamma_g1: out1.gamma,
            gamma_g2: out2.and_then(|o| o.gamma),
            prob: self.prob.value(),
            lr: lr_scale * self.config.lr_decoder,
        })
    }

    /// Per-class IoU and mIoU of the final model on the target eval split.
    pub fn evaluate(&self) -> Result<(Vec<Option<f64>>, f64)> {
        let eval = &self.data.target_eval;
        let n = match self.config.eval_images {
            0 => eval.len(),
            n => n.min(eval.len()),
        };
        evaluate(self.final_model(), &eval[..n])?.miou()
    }
}

/// Advances `trainer` by one iteration.
pub fn train_step(trainer: &mut Trainer<'_>) -> Result<IterationReport> {
    trainer.step()
}

/// Result of a complete run.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub final_model: SegNet,
    pub groups: Vec<ModelGroup>,
    pub reports: Vec<IterationReport>,
    pub metrics: Vec<MetricsRow>,
    pub prob: ProbEstimator,
    pub audit: Vec<AuditEntry>,
}

fn mean(vals: impl Iterator<Item = Option<f32>>) -> Option<f64> {
    let (mut sum, mut n) = (0.0f64, 0usize);
    for v in vals.flatten() {
        sum += v as f64;
        n += 1;
    }
    (n > 0).then(|| sum / n as f64)
}

/// Trains for the configured number of iterations.
pub fn run(config: TrainerConfig, data: &Benchmark) -> Result<RunOutcome> {
    run_with(config, data, "run", &mut |_| Ok(()))
}

/// Like [`run`], calling `on_row` as each evaluation completes.
///
/// Rows are emitted every `eval_interval` iterations and after the last
/// one; a zero-iteration run emits a single row for the initial model.
pub fn run_with(
    config: TrainerConfig,
    data: &Benchmark,
    run_id: &str,
    on_row: &mut dyn FnMut(&MetricsRow) -> Result<()>,
) -> Result<RunOutcome> {
    let mut trainer = Trainer::new(config, data)?;
    let total = trainer.config.iterations;
    let interval = trainer.config.eval_interval;
    let mut reports: Vec<IterationReport> = Vec::with_capacity(total);
    let mut metrics = Vec::new();
    let mut since = 0;
    let mut emit =
        |trainer: &Trainer<'_>, reports: &[IterationReport], since: usize| -> Result<MetricsRow> {
            let (ious, miou) = trainer.evaluate()?;
            let window = &reports[since..];
            let row = MetricsRow {
                run_id: run_id.to_string(),
                iter: trainer.iteration(),
                ious,
                miou,
                loss_g1: mean(window.iter().map(|r| Some(r.loss_g1))),
                loss_g2: mean(window.iter().map(|r| r.loss_g2)),
                gamma_g1: mean(window.iter().map(|r| r.gamma_g1)),
                gamma_g2: mean(window.iter().map(|r| r.gamma_g2)),
                prob: trainer.prob.value(),
            };
            on_row(&row)?;
            Ok(row)
        };
    if total == 0 {
        metrics.push(emit(&trainer, &reports, 0)?);
    }
    while trainer.iteration() < total {
        reports.push(trainer.step()?);
        let done = trainer.iteration();
        if done % interval == 0 || done == total {
            metrics.push(emit(&trainer, &reports, since)?);
            since = reports.len();
        }
    }
    Ok(RunOutcome {
        final_model: trainer.final_model().clone(),
        groups: trainer.groups().cloned().collect(),
        reports,
        metrics,
        audit: trainer.audit,
        prob: trainer.prob,
    })
}

/// Picks the group-2 combination whose run showed the higher Prob; ties go
/// to Setting A.
pub fn select_setting(prob_a: f64, prob_b: f64) -> DataCombination {
    if prob_b > prob_a {
        DataCombination::setting_b()
    } else {
        DataCombination::setting_a()
    }
}
