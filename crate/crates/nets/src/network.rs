use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use refinegan_core::pbn::ChannelStats;

use crate::error::{NetError, Result};
use crate::layers::{
    sigmoid_backward, sigmoid_tensor, softmax, softmax_backward, BiLstm, Conv2d, Param, PatientNorm, Rectifier,
};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const ENCODER_SLOPE: f64 = 0.2;
const ENCODER_KERNEL: usize = 5;
const DECODER_KERNEL: usize = 3;
const RELU_GAIN: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NetKind {
    Generator,
    Discriminator,
    Refinement,
}

impl NetKind {
    pub fn name(self) -> &'static str {
        match self {
            NetKind::Generator => "generator",
            NetKind::Discriminator => "discriminator",
            NetKind::Refinement => "refinement",
        }
    }

    fn stream(self) -> u64 {
        match self {
            NetKind::Generator => 1,
            NetKind::Discriminator => 2,
            NetKind::Refinement => 3,
        }
    }
}

impl fmt::Display for NetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for NetKind {
    type Err = NetError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "generator" => Ok(NetKind::Generator),
            "discriminator" => Ok(NetKind::Discriminator),
            "refinement" => Ok(NetKind::Refinement),
            other => Err(NetError::InvalidConfig(format!("unknown network kind `{other}`"))),
        }
    }
}

/// Architecture description shared by the three networks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetConfig {
    pub height: usize,
    pub width: usize,
    /// Image channels (modalities), excluding noise and segmentation inputs.
    pub in_channels: usize,
    pub class_count: usize,
    pub depth: usize,
    pub base_filters: usize,
    pub recurrent: bool,
    pub noise_input: bool,
    pub seed: u64,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            height: 64,
            width: 64,
            in_channels: 4,
            class_count: 4,
            depth: 3,
            base_filters: 8,
            recurrent: false,
            noise_input: false,
            seed: 0,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(NetError::InvalidConfig(m));
        if self.depth < 2 {
            return bad(format!("depth {} is below 2", self.depth));
        }
        if self.base_filters < 4 {
            return bad(format!("base_filters {} is below 4", self.base_filters));
        }
        if self.in_channels == 0 || self.class_count == 0 {
            return bad("in_channels and class_count must be positive".into());
        }
        if self.depth >= usize::BITS as usize {
            return bad(format!("depth {} is too large", self.depth));
        }
        let f = 1usize << self.depth;
        if self.height == 0 || self.width == 0 || self.height % f != 0 || self.width % f != 0 {
            return bad(format!(
                "spatial size {}x{} is not divisible by 2^{} = {f}",
                self.height, self.width, self.depth
            ));
        }
        Ok(())
    }

    /// `key=value` pairs separated by spaces, used as checkpoint echo.
    pub fn to_text(&self, kind: NetKind) -> String {
        format!(
            "kind={} height={} width={} in_channels={} class_count={} depth={} base_filters={} recurrent={} noise_input={} seed={}",
            kind,
            self.height,
            self.width,
            self.in_channels,
            self.class_count,
            self.depth,
            self.base_filters,
            self.recurrent,
            self.noise_input,
            self.seed
        )
    }

    pub fn from_text(text: &str) -> Result<(NetKind, NetConfig)> {
        let mut kind = None;
        let mut cfg = NetConfig::default();
        let bad = |m: String| NetError::InvalidConfig(m);
        for pair in text.split_whitespace() {
            let (k, v) = pair.split_once('=').ok_or_else(|| bad(format!("malformed pair `{pair}`")))?;
            let num = || v.parse::<usize>().map_err(|_| bad(format!("bad value for {k}: `{v}`")));
            let flag = || v.parse::<bool>().map_err(|_| bad(format!("bad value for {k}: `{v}`")));
            match k {
                "kind" => kind = Some(v.parse()?),
                "height" => cfg.height = num()?,
                "width" => cfg.width = num()?,
                "in_channels" => cfg.in_channels = num()?,
                "class_count" => cfg.class_count = num()?,
                "depth" => cfg.depth = num()?,
                "base_filters" => cfg.base_filters = num()?,
                "recurrent" => cfg.recurrent = flag()?,
                "noise_input" => cfg.noise_input = flag()?,
                "seed" => cfg.seed = v.parse().map_err(|_| bad(format!("bad seed `{v}`")))?,
                other => return Err(bad(format!("unknown key `{other}`"))),
            }
        }
        Ok((kind.ok_or_else(|| bad("missing kind".into()))?, cfg))
    }
}

/// Where batch-normalization statistics come from.
#[derive(Debug, Clone)]
pub enum NormStats<T> {
    /// Computed from the batch at every normalization layer.
    Batch,
    /// One entry per normalization layer, in forward order.
    Fixed(Vec<ChannelStats<T>>),
}

#[derive(Debug, Clone)]
pub struct ForwardOutput<T> {
    pub output: Tensor<T>,
    /// Statistics used at each normalization layer, in forward order.
    pub stats: Vec<ChannelStats<T>>,
}

struct StatsCursor<'a, T> {
    fixed: Option<&'a [ChannelStats<T>]>,
    next: usize,
    used: Vec<ChannelStats<T>>,
}

impl<'a, T: Scalar> StatsCursor<'a, T> {
    fn new(stats: &'a NormStats<T>) -> Self {
        let fixed = match stats {
            NormStats::Batch => None,
            NormStats::Fixed(v) => Some(v.as_slice()),
        };
        Self { fixed, next: 0, used: Vec::new() }
    }

    fn take(&mut self) -> Result<Option<&'a ChannelStats<T>>> {
        let out = match self.fixed {
            None => None,
            Some(v) => Some(v.get(self.next).ok_or_else(|| {
                NetError::ShapeMismatch(format!("only {} normalization statistics supplied", v.len()))
            })?),
        };
        self.next += 1;
        Ok(out)
    }

    fn finish(self) -> Result<Vec<ChannelStats<T>>> {
        if let Some(v) = self.fixed {
            if v.len() != self.next {
                return Err(NetError::ShapeMismatch(format!(
                    "{} normalization statistics supplied, network has {}",
                    v.len(),
                    self.next
                )));
            }
        }
        Ok(self.used)
    }
}

/// Convolution, patient-wise normalization and rectifier.
#[derive(Debug, Clone)]
struct ConvBlock<T> {
    conv: Conv2d<T>,
    norm: PatientNorm<T>,
    act: Rectifier<T>,
}

impl<T: Scalar> ConvBlock<T> {
    fn forward(&mut self, x: &Tensor<T>, cursor: &mut StatsCursor<'_, T>, train: bool) -> Result<Tensor<T>> {
        let y = self.conv.forward(x, train)?;
        let (y, stats) = self.norm.forward(&y, cursor.take()?, train)?;
        cursor.used.push(stats);
        Ok(self.act.forward(y, train))
    }

    fn backward(&mut self, dy: Tensor<T>) -> Result<Tensor<T>> {
        let g = self.act.backward(dy)?;
        let g = self.norm.backward(&g)?;
        self.conv.backward(&g)
    }

    fn out_channels(&self) -> usize {
        self.conv.cout
    }

    fn params(&self) -> Vec<&Param<T>> {
        let mut v = self.conv.params();
        v.extend(self.norm.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut v = self.conv.params_mut();
        v.extend(self.norm.params_mut());
        v
    }
}

/// Encoder/decoder with mirrored skip concatenation and an optional
/// bidirectional LSTM concatenated to the bottleneck.
#[derive(Debug, Clone)]
struct UNet<T> {
    encoder: Vec<ConvBlock<T>>,
    lstm: Option<BiLstm<T>>,
    decoder: Vec<ConvBlock<T>>,
    head: Conv2d<T>,
    /// Channel count of each skip source: input, then every encoder level.
    skip_channels: Vec<usize>,
}

impl<T: Scalar> UNet<T> {
    fn new(cin: usize, cout: usize, depth: usize, f: usize, recurrent: bool, rng: &mut ChaCha8Rng) -> Self {
        let mut encoder = Vec::with_capacity(depth);
        let mut skip_channels = vec![cin];
        let mut ch = cin;
        for i in 0..depth {
            let out = f << i;
            encoder.push(ConvBlock {
                conv: Conv2d::new(ENCODER_KERNEL, 2, ENCODER_KERNEL / 2, ch, out, false, false, RELU_GAIN, rng),
                norm: PatientNorm::new(out),
                act: Rectifier::new(ENCODER_SLOPE),
            });
            skip_channels.push(out);
            ch = out;
        }
        let lstm = recurrent.then(|| BiLstm::new(ch, (ch / 2).max(1), rng));
        if let Some(l) = &lstm {
            ch += l.output_channels();
        }
        let mut decoder = Vec::with_capacity(depth);
        for j in 0..depth {
            let out = if j + 1 < depth { f << (depth - j - 2) } else { f };
            decoder.push(ConvBlock {
                conv: Conv2d::new(DECODER_KERNEL, 1, DECODER_KERNEL / 2, ch, out, true, false, RELU_GAIN, rng),
                norm: PatientNorm::new(out),
                act: Rectifier::new(0.0),
            });
            ch = out + skip_channels[depth - 1 - j];
        }
        let head = Conv2d::new(1, 1, 0, ch, cout, false, true, 1.0, rng);
        Self { encoder, lstm, decoder, head, skip_channels }
    }

    fn forward(&mut self, x: &Tensor<T>, cursor: &mut StatsCursor<'_, T>, train: bool) -> Result<Tensor<T>> {
        let depth = self.encoder.len();
        let mut levels: Vec<Tensor<T>> = Vec::with_capacity(depth);
        for (i, blk) in self.encoder.iter_mut().enumerate() {
            let input = if i == 0 { x } else { &levels[i - 1] };
            let e = blk.forward(input, cursor, train)?;
            levels.push(e);
        }
        let bottom = levels.pop().expect("depth >= 2");
        let mut h = match &mut self.lstm {
            Some(l) => {
                let r = l.forward(&bottom, train)?;
                Tensor::concat_channels(&bottom, &r)?
            }
            None => bottom,
        };
        for (j, blk) in self.decoder.iter_mut().enumerate() {
            let u = blk.forward(&h, cursor, train)?;
            let level = depth - 1 - j;
            let skip = if level == 0 { x } else { &levels[level - 1] };
            h = Tensor::concat_channels(&u, skip)?;
            if level > 0 {
                // Each skip source is consumed exactly once.
                levels[level - 1] = Tensor::zeros([0, 0, 0, 0]);
            }
        }
        self.head.forward(&h, train)
    }

    /// Returns the gradient with respect to the input.
    fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let depth = self.encoder.len();
        let mut skip_grads: Vec<Option<Tensor<T>>> = vec![None; depth + 1];
        let mut g = self.head.backward(dy)?;
        for j in (0..depth).rev() {
            let blk = &mut self.decoder[j];
            let (du, ds) = g.split_channels(blk.out_channels());
            skip_grads[depth - 1 - j] = Some(ds);
            g = blk.backward(du)?;
        }
        if let Some(l) = &mut self.lstm {
            let (db, dr) = g.split_channels(self.skip_channels[depth]);
            g = db;
            g.add_assign(&l.backward(&dr)?);
        }
        for i in (0..depth).rev() {
            g = self.encoder[i].backward(g)?;
            if let Some(s) = skip_grads[i].take() {
                g.add_assign(&s);
            }
        }
        Ok(g)
    }

    fn params(&self) -> Vec<&Param<T>> {
        let mut v = Vec::new();
        for b in &self.encoder {
            v.extend(b.params());
        }
        if let Some(l) = &self.lstm {
            v.extend(l.params());
        }
        for b in &self.decoder {
            v.extend(b.params());
        }
        v.extend(self.head.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut v = Vec::new();
        for b in &mut self.encoder {
            v.extend(b.params_mut());
        }
        if let Some(l) = &mut self.lstm {
            v.extend(l.params_mut());
        }
        for b in &mut self.decoder {
            v.extend(b.params_mut());
        }
        v.extend(self.head.params_mut());
        v
    }
}

/// Full-resolution stack of 3×3 conv blocks scoring every pixel.
#[derive(Debug, Clone)]
struct PixelCritic<T> {
    blocks: Vec<ConvBlock<T>>,
    lstm: Option<BiLstm<T>>,
    head: Conv2d<T>,
}

impl<T: Scalar> PixelCritic<T> {
    fn new(cin: usize, depth: usize, f: usize, recurrent: bool, rng: &mut ChaCha8Rng) -> Self {
        let mut blocks = Vec::with_capacity(depth);
        let mut ch = cin;
        for i in 0..depth {
            let out = f << i;
            blocks.push(ConvBlock {
                conv: Conv2d::new(DECODER_KERNEL, 1, DECODER_KERNEL / 2, ch, out, false, false, RELU_GAIN, rng),
                norm: PatientNorm::new(out),
                act: Rectifier::new(ENCODER_SLOPE),
            });
            ch = out;
        }
        let lstm = recurrent.then(|| BiLstm::new(ch, (ch / 2).max(1), rng));
        if let Some(l) = &lstm {
            ch += l.output_channels();
        }
        let head = Conv2d::new(1, 1, 0, ch, 1, false, true, 1.0, rng);
        Self { blocks, lstm, head }
    }

    fn forward(&mut self, x: &Tensor<T>, cursor: &mut StatsCursor<'_, T>, train: bool) -> Result<Tensor<T>> {
        let mut h = x.clone();
        for b in &mut self.blocks {
            h = b.forward(&h, cursor, train)?;
        }
        if let Some(l) = &mut self.lstm {
            let r = l.forward(&h, train)?;
            h = Tensor::concat_channels(&h, &r)?;
        }
        self.head.forward(&h, train)
    }

    fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = self.head.backward(dy)?;
        if let Some(l) = &mut self.lstm {
            let last = self.blocks.last().expect("depth >= 2").out_channels();
            let (dh, dr) = g.split_channels(last);
            g = dh;
            g.add_assign(&l.backward(&dr)?);
        }
        for b in self.blocks.iter_mut().rev() {
            g = b.backward(g)?;
        }
        Ok(g)
    }

    fn params(&self) -> Vec<&Param<T>> {
        let mut v = Vec::new();
        for b in &self.blocks {
            v.extend(b.params());
        }
        if let Some(l) = &self.lstm {
            v.extend(l.params());
        }
        v.extend(self.head.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut v = Vec::new();
        for b in &mut self.blocks {
            v.extend(b.params_mut());
        }
        if let Some(l) = &mut self.lstm {
            v.extend(l.params_mut());
        }
        v.extend(self.head.params_mut());
        v
    }
}

#[derive(Debug, Clone)]
enum Body<T> {
    UNet(UNet<T>),
    Critic(PixelCritic<T>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Head {
    Softmax,
    Sigmoid,
}

/// A built network: architecture, parameters and the caches of the last
/// training-mode forward pass.
#[derive(Debug, Clone)]
pub struct Network<T> {
    kind: NetKind,
    cfg: NetConfig,
    body: Body<T>,
    head: Head,
    noise_seed: u64,
    out_cache: Option<Tensor<T>>,
}

impl<T: Scalar> Network<T> {
    pub fn build(kind: NetKind, cfg: &NetConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(kind.stream());
        let c = cfg.class_count;
        let (body, head) = match kind {
            NetKind::Generator => {
                let cin = cfg.in_channels + usize::from(cfg.noise_input);
                let head = if c == 1 { Head::Sigmoid } else { Head::Softmax };
                (Body::UNet(UNet::new(cin, c, cfg.depth, cfg.base_filters, cfg.recurrent, &mut rng)), head)
            }
            NetKind::Discriminator => {
                let cin = cfg.in_channels + c;
                (Body::Critic(PixelCritic::new(cin, cfg.depth, cfg.base_filters, cfg.recurrent, &mut rng)), Head::Sigmoid)
            }
            NetKind::Refinement => {
                let cin = cfg.in_channels + c;
                (Body::UNet(UNet::new(cin, 2 * c, cfg.depth, cfg.base_filters, true, &mut rng)), Head::Sigmoid)
            }
        };
        Ok(Self { kind, cfg: cfg.clone(), body, head, noise_seed: cfg.seed, out_cache: None })
    }

    pub fn generator(cfg: &NetConfig) -> Result<Self> {
        Self::build(NetKind::Generator, cfg)
    }

    pub fn discriminator(cfg: &NetConfig) -> Result<Self> {
        Self::build(NetKind::Discriminator, cfg)
    }

    pub fn refinement(cfg: &NetConfig) -> Result<Self> {
        Self::build(NetKind::Refinement, cfg)
    }

    pub fn kind(&self) -> NetKind {
        self.kind
    }

    pub fn config(&self) -> &NetConfig {
        &self.cfg
    }

    /// Channels the caller supplies (noise is added internally).
    pub fn input_channels(&self) -> usize {
        match self.kind {
            NetKind::Generator => self.cfg.in_channels,
            NetKind::Discriminator | NetKind::Refinement => self.cfg.in_channels + self.cfg.class_count,
        }
    }

    pub fn output_channels(&self) -> usize {
        match self.kind {
            NetKind::Generator => self.cfg.class_count,
            NetKind::Discriminator => 1,
            NetKind::Refinement => 2 * self.cfg.class_count,
        }
    }

    /// Seed of the noise channel drawn on every forward pass when
    /// `noise_input` is on.
    pub fn set_noise_seed(&mut self, seed: u64) {
        self.noise_seed = seed;
    }

    /// Number of normalization layers, i.e. entries of [`NormStats::Fixed`].
    pub fn norm_layers(&self) -> usize {
        match &self.body {
            Body::UNet(u) => u.encoder.len() + u.decoder.len(),
            Body::Critic(c) => c.blocks.len(),
        }
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let [n, h, w, c] = x.shape();
        let f = 1usize << self.cfg.depth;
        if n == 0 || c != self.input_channels() || h == 0 || w == 0 || h % f != 0 || w % f != 0 {
            return Err(NetError::ShapeMismatch(format!(
                "{} expects (n>0, H, W divisible by {f}, {} channels), got {:?}",
                self.kind,
                self.input_channels(),
                x.shape()
            )));
        }
        Ok(())
    }

    fn with_noise(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let [n, h, w, _] = x.shape();
        let mut rng = ChaCha8Rng::seed_from_u64(self.noise_seed);
        let noise: Vec<T> = (0..n * h * w)
            .map(|_| T::lit(StandardNormal.sample(&mut rng)))
            .collect();
        Tensor::concat_channels(x, &Tensor::new([n, h, w, 1], noise)?)
    }

    /// Forward pass over a batch of slices. In training mode every layer keeps
    /// what [`Network::backward`] needs.
    ///
    /// The spatial size may differ from the configured one as long as it is
    /// divisible by `2^depth`.
    pub fn forward(&mut self, x: &Tensor<T>, stats: &NormStats<T>, train: bool) -> Result<ForwardOutput<T>> {
        self.check_input(x)?;
        let mut cursor = StatsCursor::new(stats);
        let noisy;
        let input = if self.kind == NetKind::Generator && self.cfg.noise_input {
            noisy = self.with_noise(x)?;
            &noisy
        } else {
            x
        };
        let logits = match &mut self.body {
            Body::UNet(u) => u.forward(input, &mut cursor, train)?,
            Body::Critic(c) => c.forward(input, &mut cursor, train)?,
        };
        let output = match self.head {
            Head::Softmax => softmax(logits),
            Head::Sigmoid => sigmoid_tensor(logits),
        };
        self.out_cache = train.then(|| output.clone());
        Ok(ForwardOutput { output, stats: cursor.finish()? })
    }

    /// Back-propagates `dy` (gradient of the loss with respect to the
    /// output), adding parameter gradients into each [`Param::grad`], and
    /// returns the gradient with respect to the caller-supplied input.
    pub fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let out = self.out_cache.take().ok_or(NetError::NoCache)?;
        if dy.shape() != out.shape() {
            return Err(NetError::ShapeMismatch(format!(
                "output gradient {:?} vs output {:?}",
                dy.shape(),
                out.shape()
            )));
        }
        let g = match self.head {
            Head::Softmax => softmax_backward(&out, dy),
            Head::Sigmoid => sigmoid_backward(&out, dy),
        };
        let dx = match &mut self.body {
            Body::UNet(u) => u.backward(&g)?,
            Body::Critic(c) => c.backward(&g)?,
        };
        if dx.channels() != self.input_channels() {
            // Drop the gradient of the internal noise channel.
            return Ok(dx.split_channels(self.input_channels()).0);
        }
        Ok(dx)
    }

    /// Trainable tensors in declaration order.
    pub fn params(&self) -> Vec<&Param<T>> {
        match &self.body {
            Body::UNet(u) => u.params(),
            Body::Critic(c) => c.params(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        match &mut self.body {
            Body::UNet(u) => u.params_mut(),
            Body::Critic(c) => c.params_mut(),
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    /// All parameter values, concatenated in declaration order.
    pub fn flat_params(&self) -> Vec<T> {
        self.params().iter().flat_map(|p| p.value.iter().copied()).collect()
    }

    pub fn flat_grads(&self) -> Vec<T> {
        self.params().iter().flat_map(|p| p.grad.iter().copied()).collect()
    }

    pub fn set_flat_params(&mut self, values: &[T]) -> Result<()> {
        if values.len() != self.parameter_count() {
            return Err(NetError::ShapeMismatch(format!(
                "{} values for {} parameters",
                values.len(),
                self.parameter_count()
            )));
        }
        let mut at = 0;
        for p in self.params_mut() {
            let n = p.len();
            p.value.copy_from_slice(&values[at..at + n]);
            at += n;
        }
        Ok(())
    }

    /// Sets the output head's weights and bias to zero.
    pub fn zero_head(&mut self) {
        let head = match &mut self.body {
            Body::UNet(u) => &mut u.head,
            Body::Critic(c) => &mut c.head,
        };
        for p in head.params_mut() {
            p.value.iter_mut().for_each(|v| *v = T::zero());
        }
    }

    /// Exchanges the forward and backward directions of every recurrent layer.
    pub fn swap_recurrent_directions(&mut self) {
        let lstm = match &mut self.body {
            Body::UNet(u) => u.lstm.as_mut(),
            Body::Critic(c) => c.lstm.as_mut(),
        };
        if let Some(l) = lstm {
            l.swap_directions();
        }
    }
}
