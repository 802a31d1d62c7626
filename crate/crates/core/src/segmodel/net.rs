use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{DtsError, Result};
use crate::numeric::{Tape, Tensor, Var};

/// Layer sizes of the encoder-decoder.
///
/// `stem` 3x3 conv at full resolution, `down` strided 3x3 conv, `mid_layers`
/// 3x3 convs at reduced resolution, nearest upsample, 1x1 `head`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Arch {
    pub in_channels: usize,
    pub stem_width: usize,
    pub width: usize,
    pub mid_layers: usize,
    pub downsample: usize,
    pub num_classes: usize,
}

impl Default for Arch {
    fn default() -> Self {
        Self {
            in_channels: 3,
            stem_width: 16,
            width: 32,
            mid_layers: 1,
            downsample: 2,
            num_classes: 5,
        }
    }
}

impl Arch {
    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.stem_width == 0 || self.width == 0 || self.downsample == 0
        {
            return Err(DtsError::Config(format!(
                "degenerate architecture {self:?}"
            )));
        }
        if !(2..=255).contains(&self.num_classes) {
            return Err(DtsError::Config(format!(
                "num_classes {} must be in [2, 255]",
                self.num_classes
            )));
        }
        Ok(())
    }

    /// `(name, shape, is_decoder)` of every parameter in registration order.
    pub fn param_specs(&self) -> Vec<(String, Vec<usize>, bool)> {
        let mut specs = vec![
            (
                "stem.weight".into(),
                vec![self.stem_width, self.in_channels, 3, 3],
                false,
            ),
            ("stem.bias".into(), vec![self.stem_width], false),
            (
                "down.weight".into(),
                vec![self.width, self.stem_width, 3, 3],
                false,
            ),
            ("down.bias".into(), vec![self.width], false),
        ];
        for i in 0..self.mid_layers {
            specs.push((
                format!("mid{i}.weight"),
                vec![self.width, self.width, 3, 3],
                false,
            ));
            specs.push((format!("mid{i}.bias"), vec![self.width], false));
        }
        specs.push((
            "head.weight".into(),
            vec![self.num_classes, self.width, 1, 1],
            true,
        ));
        specs.push(("head.bias".into(), vec![self.num_classes], true));
        specs
    }

    pub fn num_params(&self) -> usize {
        self.param_specs()
            .iter()
            .map(|(_, s, _)| s.iter().product::<usize>())
            .sum()
    }
}

/// Encoder-decoder segmentation network with named parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct SegNet {
    arch: Arch,
    names: Vec<String>,
    params: Vec<Tensor>,
}

impl SegNet {
    /// Kaiming-normal weights (fan-in), zero biases.
    pub fn init(arch: &Arch, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut names = Vec::new();
        let mut params = Vec::new();
        for (name, shape, _) in arch.param_specs() {
            let numel: usize = shape.iter().product();
            let data = if shape.len() == 4 {
                let fan_in = (shape[1] * shape[2] * shape[3]) as f32;
                let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("positive std");
                (0..numel).map(|_| normal.sample(&mut rng)).collect()
            } else {
                vec![0.0; numel]
            };
            names.push(name);
            params.push(Tensor::new(&shape, data)?);
        }
        Ok(Self {
            arch: arch.clone(),
            names,
            params,
        })
    }

    /// Rebuilds a network from named tensors, inferring the architecture.
    pub fn from_named(named: Vec<(String, Tensor)>) -> Result<Self> {
        let find = |n: &str| {
            named
                .iter()
                .find(|(k, _)| k == n)
                .map(|(_, t)| t.shape().to_vec())
        };
        let stem =
            find("stem.weight").ok_or_else(|| DtsError::Config("missing stem.weight".into()))?;
        let down =
            find("down.weight").ok_or_else(|| DtsError::Config("missing down.weight".into()))?;
        let head =
            find("head.weight").ok_or_else(|| DtsError::Config("missing head.weight".into()))?;
        let mid_layers = (0..)
            .take_while(|i| find(&format!("mid{i}.weight")).is_some())
            .count();
        if stem.len() != 4 || down.len() != 4 || head.len() != 4 {
            return Err(DtsError::Config("weights must be rank 4".into()));
        }
        // the stride is not stored; only the default factor is recoverable
        let arch = Arch {
            in_channels: stem[1],
            stem_width: stem[0],
            width: down[0],
            mid_layers,
            downsample: Arch::default().downsample,
            num_classes: head[0],
        };
        let mut net = SegNet::init(&arch, 0)?;
        if named.len() != net.names.len() {
            return Err(DtsError::Config(format!(
                "expected {} parameters, found {}",
                net.names.len(),
                named.len()
            )));
        }
        for (name, tensor) in named {
            let idx = net
                .names
                .iter()
                .position(|n| *n == name)
                .ok_or_else(|| DtsError::Config(format!("unexpected parameter {name}")))?;
            if tensor.shape() != net.params[idx].shape() {
                return Err(DtsError::dim(format!(
                    "{name}: shape {:?}, expected {:?}",
                    tensor.shape(),
                    net.params[idx].shape()
                )));
            }
            net.params[idx] = tensor;
        }
        Ok(net)
    }

    pub fn arch(&self) -> &Arch {
        &self.arch
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn named(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.params)
    }

    /// Optimizer group per parameter: 0 for the encoder, 1 for the decoder head.
    pub fn param_groups(&self) -> Vec<usize> {
        self.arch
            .param_specs()
            .iter()
            .map(|(_, _, dec)| *dec as usize)
            .collect()
    }

    /// Records every parameter on `tape` as a leaf.
    pub fn bind(&self, tape: &mut Tape, requires_grad: bool) -> Vec<Var> {
        self.params
            .iter()
            .map(|p| {
                let mut t = p.clone();
                t.requires_grad = requires_grad;
                tape.leaf(t)
            })
            .collect()
    }

    pub fn check_input(&self, shape: &[usize]) -> Result<()> {
        let f = self.arch.downsample;
        match shape {
            [c, h, w] if *c == self.arch.in_channels => {
                if h % f != 0 || w % f != 0 {
                    return Err(DtsError::dim(format!(
                        "{h}x{w} input: height and width must be multiples of {f}"
                    )));
                }
                Ok(())
            }
            _ => Err(DtsError::dim(format!(
                "expected a [{},H,W] image, got {shape:?}",
                self.arch.in_channels
            ))),
        }
    }

    /// Forward pass using parameters already bound to `tape`.
    pub fn forward_bound(&self, tape: &mut Tape, params: &[Var], image: Var) -> Result<Var> {
        self.check_input(tape.value(image).shape())?;
        let mut x = tape.conv2d(image, params[0], 1, 1)?;
        x = tape.add_bias(x, params[1])?;
        x = tape.relu(x);
        x = tape.conv2d(x, params[2], self.arch.downsample, 1)?;
        x = tape.add_bias(x, params[3])?;
        x = tape.relu(x);
        for i in 0..self.arch.mid_layers {
            x = tape.conv2d(x, params[4 + 2 * i], 1, 1)?;
            x = tape.add_bias(x, params[5 + 2 * i])?;
            x = tape.relu(x);
        }
        x = tape.upsample_nearest(x, self.arch.downsample)?;
        let h = 4 + 2 * self.arch.mid_layers;
        x = tape.conv2d(x, params[h], 1, 0)?;
        tape.add_bias(x, params[h + 1])
    }

    /// Inference-only forward: logits `[C,H,W]`.
    pub fn forward(&self, image: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let params = self.bind(&mut tape, false);
        let x = tape.constant(image.clone());
        let y = self.forward_bound(&mut tape, &params, x)?;
        Ok(tape.value(y).clone())
    }

    /// Per-pixel argmax class.
    pub fn predict(&self, image: &Tensor) -> Result<crate::domain_mix::LabelMap> {
        let logits = self.forward(image)?;
        let (c, h, w) = logits.chw()?;
        let hw = h * w;
        let d = logits.data();
        let labels = (0..hw)
            .map(|p| {
                let mut best = 0;
                for ch in 1..c {
                    if d[ch * hw + p] > d[best * hw + p] {
                        best = ch;
                    }
                }
                best as u8
            })
            .collect();
        crate::domain_mix::LabelMap::new(h, w, labels)
    }
}
