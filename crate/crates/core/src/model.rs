//! Feature extractor and classifier head.
//!
//! Both are fully connected networks whose weights live in one flat vector
//! per network. Layer `l` occupies `out_l × in_l` row-major weights
//! followed by `out_l` biases; layers are stored input to output. The same
//! order is used on the tape, in the optimizer and in checkpoints.

use std::io::{BufRead, Write};
use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::diffcore::{Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const CHECKPOINT_MAGIC: &str = "OSLSP1";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Tanh,
    Relu,
}

/// Input to a tape forward pass.
#[derive(Clone, Copy, Debug)]
pub enum Input<'a, T> {
    /// Raw data; no gradient flows into it.
    Const(&'a [T]),
    Var(&'a [Var]),
}

impl<T> Input<'_, T> {
    fn len(&self) -> usize {
        match self {
            Input::Const(x) => x.len(),
            Input::Var(x) => x.len(),
        }
    }
}

/// Fully connected network with a flat parameter vector.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp<T> {
    sizes: Vec<usize>,
    hidden: Activation,
    output: Activation,
    params: Vec<T>,
}

impl<T: Scalar> Mlp<T> {
    /// Zero-initialized network with layer widths `sizes` (input first).
    pub fn zeros(sizes: &[usize], hidden: Activation, output: Activation) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(Error::InvalidParameter("network needs at least one layer".into()));
        }
        if sizes.contains(&0) {
            return Err(Error::InvalidParameter(format!("zero-sized layer in {sizes:?}")));
        }
        let n = sizes.windows(2).map(|w| w[1] * w[0] + w[1]).sum();
        Ok(Mlp {
            sizes: sizes.to_vec(),
            hidden,
            output,
            params: vec![T::zero(); n],
        })
    }

    /// Uniform `±sqrt(6 / fan)` weights (fan-in for rectifiers, fan-in plus
    /// fan-out otherwise) and zero biases.
    pub fn random<R: Rng>(sizes: &[usize], hidden: Activation, output: Activation, rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(sizes, hidden, output)?;
        for l in 0..net.layers() {
            let (fan_in, fan_out) = (net.sizes[l], net.sizes[l + 1]);
            let act = if l + 1 == net.layers() { output } else { hidden };
            let fan = match act {
                Activation::Relu => fan_in,
                _ => fan_in + fan_out,
            };
            let bound = (6.0 / fan as f64).sqrt();
            let w = net.weight_range(l);
            for p in &mut net.params[w] {
                *p = T::of(rng.random_range(-bound..bound));
            }
        }
        Ok(net)
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    /// Flat range of layer `l` (weights and biases).
    pub fn layer_range(&self, l: usize) -> Range<usize> {
        let start: usize = self.sizes[..=l].windows(2).map(|w| w[1] * w[0] + w[1]).sum();
        start..start + self.sizes[l + 1] * self.sizes[l] + self.sizes[l + 1]
    }

    fn weight_range(&self, l: usize) -> Range<usize> {
        let r = self.layer_range(l);
        r.start..r.end - self.sizes[l + 1]
    }

    fn activation(&self, l: usize) -> Activation {
        if l + 1 == self.layers() {
            self.output
        } else {
            self.hidden
        }
    }

    fn check_input(&self, len: usize) -> Result<()> {
        if len != self.input_dim() {
            return Err(Error::LengthMismatch {
                expected: self.input_dim(),
                actual: len,
            });
        }
        Ok(())
    }

    /// Plain forward pass.
    pub fn forward(&self, x: &[T]) -> Result<Vec<T>> {
        self.check_input(x.len())?;
        let mut cur = x.to_vec();
        for l in 0..self.layers() {
            let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
            let r = self.layer_range(l);
            let layer = &self.params[r];
            let (w, b) = layer.split_at(fan_out * fan_in);
            let act = self.activation(l);
            cur = (0..fan_out)
                .map(|j| {
                    let row = &w[j * fan_in..(j + 1) * fan_in];
                    let mut z = b[j];
                    for (&wi, &xi) in row.iter().zip(&cur) {
                        z += wi * xi;
                    }
                    apply(act, z)
                })
                .collect();
        }
        Ok(cur)
    }

    /// Registers the parameters as tape leaves.
    pub fn bind(&self, tape: &mut Tape<T>) -> Vec<Var> {
        tape.leaves(&self.params)
    }

    /// Forward pass recorded on `tape` using bound parameters `p`.
    pub fn forward_on(&self, tape: &mut Tape<T>, p: &[Var], x: Input<'_, T>) -> Result<Vec<Var>> {
        self.check_input(x.len())?;
        if p.len() != self.params.len() {
            return Err(Error::LengthMismatch {
                expected: self.params.len(),
                actual: p.len(),
            });
        }
        let mut cur: Vec<Var> = Vec::new();
        for l in 0..self.layers() {
            let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
            let r = self.layer_range(l);
            let layer = &p[r];
            let (w, b) = layer.split_at(fan_out * fan_in);
            let act = self.activation(l);
            let mut next = Vec::with_capacity(fan_out);
            for j in 0..fan_out {
                let row = &w[j * fan_in..(j + 1) * fan_in];
                let z = match (l, x) {
                    (0, Input::Const(raw)) => tape.affine_const_input(row, raw, b[j]),
                    (0, Input::Var(v)) => tape.affine(row, v, b[j]),
                    _ => tape.affine(row, &cur, b[j]),
                };
                next.push(match act {
                    Activation::Identity => z,
                    Activation::Tanh => tape.tanh(z),
                    Activation::Relu => tape.relu(z),
                });
            }
            cur = next;
        }
        Ok(cur)
    }
}

#[inline]
fn apply<T: Scalar>(act: Activation, z: T) -> T {
    match act {
        Activation::Identity => z,
        Activation::Tanh => z.tanh(),
        Activation::Relu => z.max(T::zero()),
    }
}

/// Numerically stable softmax.
pub fn softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let m = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let e: Vec<T> = logits.iter().map(|&z| (z - m).exp()).collect();
    let s: T = e.iter().copied().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Softmax on the tape; the max shift is a constant.
pub fn softmax_on<T: Scalar>(tape: &mut Tape<T>, logits: &[Var]) -> Vec<Var> {
    let m = logits.iter().map(|&z| tape.value(z)).fold(T::neg_infinity(), T::max);
    let e: Vec<Var> = logits
        .iter()
        .map(|&z| {
            let shifted = tape.add_const(z, -m);
            tape.exp(shifted)
        })
        .collect();
    let s = tape.sum(&e);
    e.iter().map(|&v| tape.div(v, s)).collect()
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax<T: Scalar>(v: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Which backbone layers receive updates.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum FreezePolicy {
    #[default]
    TrainAll,
    LastLayerOnly,
}

/// Feature extractor: tanh hidden layers and a linear output layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Backbone<T>(pub Mlp<T>);

impl<T: Scalar> Backbone<T> {
    pub fn sizes(arch: &Architecture) -> Vec<usize> {
        let mut s = vec![arch.input_dim];
        s.extend(&arch.backbone_hidden);
        s.push(arch.feature_dim);
        s
    }

    pub fn zeros(arch: &Architecture) -> Result<Self> {
        Ok(Backbone(Mlp::zeros(&Self::sizes(arch), Activation::Tanh, Activation::Identity)?))
    }

    pub fn random<R: Rng>(arch: &Architecture, rng: &mut R) -> Result<Self> {
        Ok(Backbone(Mlp::random(
            &Self::sizes(arch),
            Activation::Tanh,
            Activation::Identity,
            rng,
        )?))
    }

    pub fn forward(&self, x: &[T]) -> Result<Vec<T>> {
        self.0.forward(x)
    }

    pub fn forward_on(&self, tape: &mut Tape<T>, p: &[Var], x: &[T]) -> Result<Vec<Var>> {
        self.0.forward_on(tape, p, Input::Const(x))
    }

    /// Flat range of trainable parameters under `policy`.
    pub fn trainable(&self, policy: FreezePolicy) -> Range<usize> {
        match policy {
            FreezePolicy::TrainAll => 0..self.0.num_params(),
            FreezePolicy::LastLayerOnly => self.0.layer_range(self.0.layers() - 1),
        }
    }
}

/// Three-layer perceptron with rectifier hidden units and softmax output.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierHead<T>(pub Mlp<T>);

impl<T: Scalar> ClassifierHead<T> {
    pub fn sizes(arch: &Architecture) -> Vec<usize> {
        let mut s = vec![arch.feature_dim];
        s.extend(&arch.head_hidden);
        s.push(arch.classes);
        s
    }

    pub fn zeros(arch: &Architecture) -> Result<Self> {
        Ok(ClassifierHead(Mlp::zeros(
            &Self::sizes(arch),
            Activation::Relu,
            Activation::Identity,
        )?))
    }

    pub fn random<R: Rng>(arch: &Architecture, rng: &mut R) -> Result<Self> {
        Ok(ClassifierHead(Mlp::random(
            &Self::sizes(arch),
            Activation::Relu,
            Activation::Identity,
            rng,
        )?))
    }

    pub fn logits(&self, feature: &[T]) -> Result<Vec<T>> {
        self.0.forward(feature)
    }

    /// Class confidences summing to 1.
    pub fn forward(&self, feature: &[T]) -> Result<Vec<T>> {
        Ok(softmax(&self.logits(feature)?))
    }

    pub fn forward_on(&self, tape: &mut Tape<T>, p: &[Var], feature: Input<'_, T>) -> Result<Vec<Var>> {
        let logits = self.0.forward_on(tape, p, feature)?;
        Ok(softmax_on(tape, &logits))
    }

    /// 0-based predicted class.
    pub fn predict(&self, feature: &[T]) -> Result<usize> {
        Ok(argmax(&self.logits(feature)?))
    }
}

/// Layer widths of both networks.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Architecture {
    pub input_dim: usize,
    pub backbone_hidden: Vec<usize>,
    pub feature_dim: usize,
    pub head_hidden: Vec<usize>,
    pub classes: usize,
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture {
            input_dim: 32,
            backbone_hidden: vec![64, 64],
            feature_dim: 16,
            head_hidden: vec![32, 32],
            classes: 5,
        }
    }
}

impl Architecture {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0
            || self.feature_dim == 0
            || self.classes == 0
            || self.backbone_hidden.contains(&0)
            || self.head_hidden.contains(&0)
        {
            return Err(Error::InvalidParameter(format!("zero-sized layer in {self:?}")));
        }
        if self.classes < 2 {
            return Err(Error::TooFewClasses(self.classes));
        }
        Ok(())
    }
}

/// Backbone and head together with the seed that initialized them.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T> {
    pub arch: Architecture,
    pub seed: u64,
    pub backbone: Backbone<T>,
    pub head: ClassifierHead<T>,
}

/// Draws both networks from one seeded stream, backbone first.
pub fn init_params<T: Scalar>(seed: u64, arch: &Architecture) -> Result<ModelParams<T>> {
    arch.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let backbone = Backbone::random(arch, &mut rng)?;
    let head = ClassifierHead::random(arch, &mut rng)?;
    Ok(ModelParams {
        arch: arch.clone(),
        seed,
        backbone,
        head,
    })
}

fn join(v: &[usize]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn split_sizes(s: &str) -> Result<Vec<usize>> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|t| {
            t.parse()
                .map_err(|_| Error::Checkpoint(format!("bad layer width `{t}`")))
        })
        .collect()
}

impl<T: Scalar> ModelParams<T> {
    pub fn predict(&self, x: &[T]) -> Result<usize> {
        self.head.predict(&self.backbone.forward(x)?)
    }

    /// Writes the checkpoint:
    ///
    /// ```text
    /// OSLSP1\n
    /// input_dim=32 backbone_hidden=64,64 feature_dim=16 head_hidden=32,32 classes=5 seed=S params=P\n
    /// P little-endian f64 values: backbone layers, then head layers
    /// ```
    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> Result<()> {
        let a = &self.arch;
        let n = self.backbone.0.num_params() + self.head.0.num_params();
        let header = format!(
            "{CHECKPOINT_MAGIC}\ninput_dim={} backbone_hidden={} feature_dim={} head_hidden={} classes={} seed={} params={}\n",
            a.input_dim,
            join(&a.backbone_hidden),
            a.feature_dim,
            join(&a.head_hidden),
            a.classes,
            self.seed,
            n
        );
        let io = |e| Error::Checkpoint(format!("write failed: {e}"));
        w.write_all(header.as_bytes()).map_err(io)?;
        let mut buf = Vec::with_capacity(n * 8);
        for &p in self.backbone.0.params().iter().chain(self.head.0.params()) {
            buf.extend_from_slice(&p.as_f64().to_le_bytes());
        }
        w.write_all(&buf).map_err(io)?;
        Ok(())
    }

    pub fn read_checkpoint<R: BufRead>(mut r: R) -> Result<Self> {
        let mut line = String::new();
        let io = |e| Error::Checkpoint(format!("read failed: {e}"));
        r.read_line(&mut line).map_err(io)?;
        if line.trim_end() != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint(format!("bad magic `{}`", line.trim_end())));
        }
        line.clear();
        r.read_line(&mut line).map_err(io)?;
        let mut arch = Architecture {
            input_dim: 0,
            backbone_hidden: Vec::new(),
            feature_dim: 0,
            head_hidden: Vec::new(),
            classes: 0,
        };
        let mut seed = None;
        let mut count = None;
        for field in line.split_whitespace() {
            let (k, v) = field
                .split_once('=')
                .ok_or_else(|| Error::Checkpoint(format!("bad header field `{field}`")))?;
            let num = || -> Result<usize> { v.parse().map_err(|_| Error::Checkpoint(format!("bad value `{field}`"))) };
            match k {
                "input_dim" => arch.input_dim = num()?,
                "backbone_hidden" => arch.backbone_hidden = split_sizes(v)?,
                "feature_dim" => arch.feature_dim = num()?,
                "head_hidden" => arch.head_hidden = split_sizes(v)?,
                "classes" => arch.classes = num()?,
                "seed" => seed = Some(v.parse::<u64>().map_err(|_| Error::Checkpoint(format!("bad seed `{v}`")))?),
                "params" => count = Some(num()?),
                _ => return Err(Error::Checkpoint(format!("unknown header key `{k}`"))),
            }
        }
        arch.validate().map_err(|e| Error::Checkpoint(e.to_string()))?;
        let seed = seed.ok_or_else(|| Error::Checkpoint("missing seed".into()))?;
        let mut backbone = Backbone::zeros(&arch)?;
        let mut head = ClassifierHead::zeros(&arch)?;
        let expected = backbone.0.num_params() + head.0.num_params();
        if count != Some(expected) {
            return Err(Error::Checkpoint(format!(
                "parameter count {count:?} does not match architecture ({expected})"
            )));
        }
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes).map_err(io)?;
        if bytes.len() != expected * 8 {
            return Err(Error::Checkpoint(format!(
                "expected {} weight bytes, found {}",
                expected * 8,
                bytes.len()
            )));
        }
        let mut vals = bytes
            .chunks_exact(8)
            .map(|c| T::of(f64::from_le_bytes(c.try_into().unwrap())));
        for p in backbone.0.params_mut().iter_mut().chain(head.0.params_mut()) {
            *p = vals.next().unwrap();
        }
        Ok(ModelParams {
            arch,
            seed,
            backbone,
            head,
        })
    }
}
