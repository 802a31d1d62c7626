use std::path::Path;

use super::combination::DataCombination;
use super::routing::{RoutingPolicy, RoutingPreset};
use crate::binio::{read_file, write_file};
use crate::domain_mix::AugmentParams;
use crate::error::{DtsError, Result};
use crate::kv::KvDoc;
use crate::numeric::{LrDecay, LrSchedule};
use crate::segmodel::Arch;

pub const CONFIG_FILE: &str = "config.txt";

/// Everything that determines a training run.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainerConfig {
    pub seed: u64,
    pub iterations: usize,
    /// Evaluate every this many iterations (and after the last one).
    pub eval_interval: usize,
    /// Evaluate on the first this many target-eval images; 0 means all.
    pub eval_images: usize,
    /// `k`: samples per domain tag of a pair combination.
    pub batch_size: usize,
    pub lambda: f32,
    pub tau: f32,
    pub lr_encoder: f32,
    pub lr_decoder: f32,
    pub weight_decay: f32,
    pub warmup_iters: usize,
    pub lr_decay: LrDecay,
    pub group1: DataCombination,
    /// `None` disables the second group: a single teacher-student pair.
    pub group2: Option<DataCombination>,
    pub routing: RoutingPreset,
    pub bidirectional: bool,
    /// Prob window in comparisons; 0 for the cumulative mean.
    pub prob_window: usize,
    pub weak_aug: bool,
    pub strong_aug: bool,
    pub augment: AugmentParams,
    pub arch: Arch,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            iterations: 2000,
            eval_interval: 200,
            eval_images: 0,
            batch_size: 2,
            lambda: 0.999,
            tau: 0.968,
            lr_encoder: 6e-5,
            lr_decoder: 6e-4,
            weight_decay: 0.01,
            warmup_iters: 100,
            lr_decay: LrDecay::Constant,
            group1: DataCombination::group1(),
            group2: Some(DataCombination::setting_b()),
            routing: RoutingPreset::Row5,
            bidirectional: true,
            prob_window: 4000,
            weak_aug: true,
            strong_aug: true,
            augment: AugmentParams::default(),
            arch: Arch::default(),
        }
    }
}

const KEYS: &[&str] = &[
    "run.seed",
    "run.iterations",
    "run.eval_interval",
    "run.eval_images",
    "dts.batch_size",
    "dts.lambda",
    "dts.tau",
    "dts.group1",
    "dts.group2",
    "dts.routing",
    "dts.bidirectional",
    "dts.prob_window",
    "optim.lr_encoder",
    "optim.lr_decoder",
    "optim.weight_decay",
    "optim.warmup_iters",
    "optim.lr_decay",
    "optim.poly_power",
    "augment.weak",
    "augment.strong",
    "augment.jitter_min",
    "augment.jitter_max",
    "augment.blur_sigma_max",
    "augment.blur_prob",
    "augment.scale_min",
    "augment.scale_max",
    "model.num_classes",
    "model.stem_width",
    "model.width",
    "model.mid_layers",
    "model.downsample",
];

impl TrainerConfig {
    /// Single teacher-student pair on `{S, ⟨S,T⟩}`.
    pub fn baseline() -> Self {
        Self {
            group2: None,
            bidirectional: false,
            ..Self::default()
        }
    }

    /// Supervised training on source images only.
    pub fn source_only() -> Self {
        Self {
            group1: DataCombination::source_only(),
            group2: None,
            bidirectional: false,
            ..Self::default()
        }
    }

    pub fn routing_policy(&self) -> RoutingPolicy {
        self.routing.policy(self.bidirectional)
    }

    pub fn schedule(&self) -> Result<LrSchedule> {
        LrSchedule::new(self.warmup_iters, self.iterations, self.lr_decay)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(DtsError::Config(m));
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return bad(format!("lambda {} outside [0, 1]", self.lambda));
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return bad(format!("tau {} outside (0, 1)", self.tau));
        }
        for (name, v) in [
            ("lr_encoder", self.lr_encoder),
            ("lr_decoder", self.lr_decoder),
            ("weight_decay", self.weight_decay),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!(
                    "{name} must be a finite non-negative number, got {v}"
                ));
            }
        }
        if self.eval_interval == 0 {
            return bad("eval_interval must be at least 1".into());
        }
        if let LrDecay::Poly { power } = self.lr_decay {
            if !(power.is_finite() && power > 0.0) {
                return bad(format!("poly_power {power} must be positive"));
            }
        }
        self.schedule()?;
        self.augment.validate()?;
        self.arch.validate()?;
        if self.group2.is_none() && self.bidirectional {
            return bad("bidirectional routing needs a second group".into());
        }
        if self.group2.is_some() {
            self.routing_policy().validate()?;
        }
        Ok(())
    }

    pub fn to_kv(&self) -> KvDoc {
        let mut d = KvDoc::new();
        d.set("run.seed", self.seed);
        d.set("run.iterations", self.iterations);
        d.set("run.eval_interval", self.eval_interval);
        d.set("run.eval_images", self.eval_images);
        d.set("dts.batch_size", self.batch_size);
        d.set("dts.lambda", self.lambda);
        d.set("dts.tau", self.tau);
        d.set("dts.group1", &self.group1);
        d.set(
            "dts.group2",
            self.group2
                .as_ref()
                .map_or("none".to_string(), |c| c.to_string()),
        );
        d.set("dts.routing", self.routing);
        d.set("dts.bidirectional", self.bidirectional);
        d.set("dts.prob_window", self.prob_window);
        d.set("optim.lr_encoder", self.lr_encoder);
        d.set("optim.lr_decoder", self.lr_decoder);
        d.set("optim.weight_decay", self.weight_decay);
        d.set("optim.warmup_iters", self.warmup_iters);
        match self.lr_decay {
            LrDecay::Constant => d.set("optim.lr_decay", "constant"),
            LrDecay::Poly { power } => {
                d.set("optim.lr_decay", "poly");
                d.set("optim.poly_power", power);
            }
        }
        d.set("augment.weak", self.weak_aug);
        d.set("augment.strong", self.strong_aug);
        d.set("augment.jitter_min", self.augment.jitter.0);
        d.set("augment.jitter_max", self.augment.jitter.1);
        d.set("augment.blur_sigma_max", self.augment.blur_sigma_max);
        d.set("augment.blur_prob", self.augment.blur_prob);
        d.set("augment.scale_min", self.augment.scale.0);
        d.set("augment.scale_max", self.augment.scale.1);
        d.set("model.num_classes", self.arch.num_classes);
        d.set("model.stem_width", self.arch.stem_width);
        d.set("model.width", self.arch.width);
        d.set("model.mid_layers", self.arch.mid_layers);
        d.set("model.downsample", self.arch.downsample);
        d
    }

    /// Reads a config; missing keys keep their defaults.
    pub fn from_kv(doc: &KvDoc) -> Result<Self> {
        doc.reject_unknown(KEYS)?;
        let mut c = Self::default();
        macro_rules! take {
            ($key:literal, $field:expr) => {
                if let Some(v) = doc.get($key)? {
                    $field = v;
                }
            };
        }
        take!("run.seed", c.seed);
        take!("run.iterations", c.iterations);
        take!("run.eval_interval", c.eval_interval);
        take!("run.eval_images", c.eval_images);
        take!("dts.batch_size", c.batch_size);
        take!("dts.lambda", c.lambda);
        take!("dts.tau", c.tau);
        if let Some(s) = doc.get_str("dts.group1") {
            c.group1 = s.parse()?;
        }
        if let Some(s) = doc.get_str("dts.group2") {
            c.group2 = match s {
                "none" => None,
                other => Some(other.parse()?),
            };
        }
        if let Some(s) = doc.get_str("dts.routing") {
            c.routing = s.parse()?;
        }
        take!("dts.bidirectional", c.bidirectional);
        take!("dts.prob_window", c.prob_window);
        take!("optim.lr_encoder", c.lr_encoder);
        take!("optim.lr_decoder", c.lr_decoder);
        take!("optim.weight_decay", c.weight_decay);
        take!("optim.warmup_iters", c.warmup_iters);
        let power: Option<f32> = doc.get("optim.poly_power")?;
        c.lr_decay = match doc.get_str("optim.lr_decay") {
            None | Some("constant") if power.is_none() => LrDecay::Constant,
            None | Some("poly") => LrDecay::Poly {
                power: power.unwrap_or(1.0),
            },
            Some("constant") => {
                return Err(DtsError::Config(
                    "poly_power set with constant lr_decay".into(),
                ))
            }
            Some(other) => {
                return Err(DtsError::Config(format!(
                    "unknown lr_decay `{other}` (constant, poly)"
                )))
            }
        };
        take!("augment.weak", c.weak_aug);
        take!("augment.strong", c.strong_aug);
        take!("augment.jitter_min", c.augment.jitter.0);
        take!("augment.jitter_max", c.augment.jitter.1);
        take!("augment.blur_sigma_max", c.augment.blur_sigma_max);
        take!("augment.blur_prob", c.augment.blur_prob);
        take!("augment.scale_min", c.augment.scale.0);
        take!("augment.scale_max", c.augment.scale.1);
        take!("model.num_classes", c.arch.num_classes);
        take!("model.stem_width", c.arch.stem_width);
        take!("model.width", c.arch.width);
        take!("model.mid_layers", c.arch.mid_layers);
        take!("model.downsample", c.arch.downsample);
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = read_file(path)?;
        let text = String::from_utf8(bytes).map_err(|_| DtsError::Format {
            path: path.to_path_buf(),
            offset: 0,
            msg: "config is not UTF-8".into(),
        })?;
        let doc = KvDoc::parse(&text)
            .map_err(|e| DtsError::Config(format!("{}: {e}", path.display())))?;
        Self::from_kv(&doc)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, self.to_kv().render().as_bytes())
    }
}
