//! Encoder, graphics-code split, volume decoder and image decoder.

mod config;
pub mod layers;
mod weights;

pub use config::{parse_kv, InputKind, NetworkConfig};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{self, BatchNormState, RReluConfig};
use crate::stn::{LocalisationKind, LocalisationNet, SpatialTransformer};
use crate::tensor::{Tape, Tensor, Var};
use crate::voxel::VoxelGrid;
use layers::{BatchNorm, Conv, ConvBlock, Forward, Linear, PRelu, ParamStore};

/// Items per inference chunk; bounds tape memory for large batches.
const INFER_CHUNK: usize = 16;

/// One graphics code with its shape/transformation split.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphicsCode {
    values: Vec<f32>,
    shape_len: usize,
}

impl GraphicsCode {
    pub fn new(values: Vec<f32>, shape_len: usize, transform_len: usize) -> Result<Self> {
        if values.len() != shape_len + transform_len {
            return Err(Error::Shape(format!(
                "graphics code of length {} cannot split into {shape_len} + {transform_len}",
                values.len()
            )));
        }
        Ok(Self { values, shape_len })
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn shape_len(&self) -> usize {
        self.shape_len
    }

    pub fn transform_len(&self) -> usize {
        self.values.len() - self.shape_len
    }

    pub fn shape(&self) -> &[f32] {
        &self.values[..self.shape_len]
    }

    pub fn transform(&self) -> &[f32] {
        &self.values[self.shape_len..]
    }

    /// Shape slots of `self` joined with transformation slots of `other`.
    pub fn with_transform_of(&self, other: &GraphicsCode) -> Result<GraphicsCode> {
        if other.shape_len != self.shape_len || other.len() != self.len() {
            return Err(Error::Shape("graphics codes have different splits".into()));
        }
        let mut values = self.shape().to_vec();
        values.extend_from_slice(other.transform());
        Ok(GraphicsCode {
            values,
            shape_len: self.shape_len,
        })
    }
}

/// Named per-layer activations of one forward pass, in network order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ActivationTrace {
    layers: Vec<(String, Tensor<f32>)>,
}

impl ActivationTrace {
    pub fn push(&mut self, name: impl Into<String>, value: Tensor<f32>) {
        self.layers.push((name.into(), value));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<f32>> {
        self.layers.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn names(&self) -> Vec<&str> {
        self.layers.iter().map(|(n, _)| n.as_str()).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<f32>)> {
        self.layers.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    fn record<'t>(trace: &mut Option<&mut ActivationTrace>, name: &str, v: Var<'t, f32>) {
        if let Some(t) = trace.as_deref_mut() {
            t.push(name, (*v.value()).clone());
        }
    }

    /// Appends `other` with its batch items after ours, layer by layer.
    fn extend_batch(&mut self, other: ActivationTrace) -> Result<()> {
        if self.layers.is_empty() {
            *self = other;
            return Ok(());
        }
        for ((name, acc), (oname, t)) in self.layers.iter_mut().zip(other.layers) {
            debug_assert_eq!(*name, oname);
            *acc = Tensor::stack(&[acc.clone(), t])?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Encoder {
    conv1: ConvBlock,
    stn1: SpatialTransformer,
    conv2: ConvBlock,
    stn2: SpatialTransformer,
    conv3: ConvBlock,
    hidden: Option<Linear>,
    code: Linear,
}

#[derive(Debug, Clone, PartialEq)]
struct VolumeDecoder {
    fc: Linear,
    blocks: Vec<ConvBlock>,
    out: Conv,
    act: PRelu,
}

#[derive(Debug, Clone, PartialEq)]
struct ImageDecoder {
    fc: Linear,
    blocks: Vec<ConvBlock>,
    out: Conv,
    act: PRelu,
}

/// The full encoder / twin-decoder network with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    config: NetworkConfig,
    params: ParamStore,
    bn_states: Vec<BatchNormState<f32>>,
    encoder: Encoder,
    volume: VolumeDecoder,
    image: ImageDecoder,
}

fn block(
    store: &mut ParamStore,
    states: &mut Vec<BatchNormState<f32>>,
    cfg: &NetworkConfig,
    name: &str,
    spec: (usize, usize, usize, usize, usize),
    rng: &mut ChaCha8Rng,
) -> ConvBlock {
    let (rank, cin, cout, k, pad) = spec;
    let conv = Conv::new(store, name, rank, cin, cout, k, pad, rng);
    let bn = cfg
        .use_batchnorm
        .then(|| BatchNorm::new(store, states, &format!("{name}.bn"), cout));
    ConvBlock { conv, bn, rrelu: true }
}

impl Model {
    /// Builds a freshly initialized network; all randomness comes from `config.seed`.
    pub fn build(config: &NetworkConfig) -> Result<Self> {
        config.validate()?;
        let cfg = config.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut p = ParamStore::default();
        let mut s = Vec::new();
        let [c1, c2, c3] = cfg.encoder_channels;
        let r = cfg.image_res;

        let conv1 = block(&mut p, &mut s, &cfg, "enc.conv1", (2, cfg.input_channels(), c1, 5, 2), &mut rng);
        let loc1 = LocalisationNet::new(
            LocalisationKind::First,
            &mut p,
            &mut s,
            "enc.stn1.loc",
            c1,
            r,
            cfg.loc_channels,
            cfg.use_batchnorm,
            &mut rng,
        )?;
        let conv2 = block(&mut p, &mut s, &cfg, "enc.conv2", (2, c1, c2, 5, 2), &mut rng);
        let loc2 = LocalisationNet::new(
            LocalisationKind::Second,
            &mut p,
            &mut s,
            "enc.stn2.loc",
            c2,
            r / 2,
            cfg.loc_channels,
            cfg.use_batchnorm,
            &mut rng,
        )?;
        let conv3 = block(&mut p, &mut s, &cfg, "enc.conv3", (2, c2, c3, 5, 2), &mut rng);
        let flat = c3 * cfg.encoder_out_size().pow(2);
        let hidden = cfg
            .use_fc3000
            .then(|| Linear::new(&mut p, "enc.fc_hidden", flat, cfg.fc_width, &mut rng));
        let code_in = if cfg.use_fc3000 { cfg.fc_width } else { flat };
        let code = Linear::new(&mut p, "enc.code", code_in, cfg.code_len(), &mut rng);
        let encoder = Encoder {
            conv1,
            stn1: SpatialTransformer { loc: loc1, out_size: r / 2 },
            conv2,
            stn2: SpatialTransformer { loc: loc2, out_size: r / 4 },
            conv3,
            hidden,
            code,
        };

        let vc = cfg.volume_channels;
        let fc = Linear::new(&mut p, "vol.fc", cfg.shape_len, vc[0] * cfg.volume_seed.pow(3), &mut rng);
        let blocks = (0..3)
            .map(|i| block(&mut p, &mut s, &cfg, &format!("vol.block{}", i + 1), (3, vc[i], vc[i + 1], 3, 1), &mut rng))
            .collect();
        let out = Conv::new(&mut p, "vol.out", 3, vc[3], 1, 3, cfg.volume_final_pad, &mut rng);
        let act = PRelu::new(&mut p, "vol.out.prelu");
        let volume = VolumeDecoder { fc, blocks, out, act };

        let ic = cfg.image_channels;
        let fc = Linear::new(&mut p, "img.fc", cfg.code_len(), ic[0] * cfg.image_seed.pow(2), &mut rng);
        let blocks = (0..4)
            .map(|i| block(&mut p, &mut s, &cfg, &format!("img.block{}", i + 1), (2, ic[i], ic[i + 1], 5, 2), &mut rng))
            .collect();
        let out = Conv::new(&mut p, "img.out", 2, ic[4], 3, 5, 2, &mut rng);
        let act = PRelu::new(&mut p, "img.out.prelu");
        let image = ImageDecoder { fc, blocks, out, act };

        Ok(Self {
            config: cfg,
            params: p,
            bn_states: s,
            encoder,
            volume,
            image,
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn bn_states(&self) -> &[BatchNormState<f32>] {
        &self.bn_states
    }

    pub fn bn_states_mut(&mut self) -> &mut [BatchNormState<f32>] {
        &mut self.bn_states
    }

    pub fn rrelu_config(&self) -> RReluConfig {
        RReluConfig {
            lower: self.config.rrelu_lower,
            upper: self.config.rrelu_upper,
            training: false,
        }
    }

    /// A forward context over this model's parameters.
    pub fn forward_ctx<'t, 'm>(&'m self, tape: &'t Tape<f32>, training: bool, seed: u64) -> Forward<'t, 'm> {
        Forward::new(tape, &self.params, &self.bn_states, self.rrelu_config(), training, seed)
    }

    /// Expected `[C, H, W]` of one encoder input.
    pub fn input_shape(&self) -> [usize; 3] {
        [self.config.input_channels(), self.config.image_res, self.config.image_res]
    }

    fn check_input(&self, shape: &[usize]) -> Result<()> {
        let want = self.input_shape();
        if shape.len() != 4 || shape[1..] != want {
            return Err(Error::Shape(format!(
                "encoder expects [N, {}, {}, {}], got {shape:?}",
                want[0], want[1], want[2]
            )));
        }
        Ok(())
    }

    /// Encoder on the tape: `[N, C, H, W]` to codes `[N, code_len]`.
    pub fn encode_var<'t>(
        &self,
        f: &Forward<'t, '_>,
        x: Var<'t, f32>,
        mut trace: Option<&mut ActivationTrace>,
    ) -> Result<Var<'t, f32>> {
        self.check_input(&x.shape())?;
        let e = &self.encoder;
        ActivationTrace::record(&mut trace, "Image", x);
        let e1 = e.conv1.forward(f, x)?;
        ActivationTrace::record(&mut trace, "E1", e1);
        let e2 = e.conv2.forward(f, e.stn1.forward(f, e1)?)?;
        ActivationTrace::record(&mut trace, "E2", e2);
        let pooled = nn::maxpool2d(e.stn2.forward(f, e2)?)?;
        let e3 = e.conv3.forward(f, pooled)?;
        ActivationTrace::record(&mut trace, "E3", e3);
        let p3 = nn::maxpool2d(e3)?;
        let n = p3.shape()[0];
        let flat_len = p3.value_ref().len() / n;
        let mut h = p3.reshape(&[n, flat_len])?;
        if let Some(hidden) = &e.hidden {
            h = f.rrelu(hidden.forward(f, h)?)?;
        }
        let z = e.code.forward(f, h)?;
        ActivationTrace::record(&mut trace, "Z", z);
        Ok(z)
    }

    /// Volume decoder on the tape: shape codes `[N, shape_len]` to `[N, 1, R, R, R]`.
    pub fn decode_volume_var<'t>(
        &self,
        f: &Forward<'t, '_>,
        shape_code: Var<'t, f32>,
        mut trace: Option<&mut ActivationTrace>,
    ) -> Result<Var<'t, f32>> {
        let s = shape_code.shape();
        if s.len() != 2 || s[1] != self.config.shape_len {
            return Err(Error::Shape(format!(
                "volume decoder expects [N, {}], got {s:?}",
                self.config.shape_len
            )));
        }
        let d = &self.volume;
        let seed = self.config.volume_seed;
        let h = f.rrelu(d.fc.forward(f, shape_code)?)?;
        let mut y = h.reshape(&[s[0], self.config.volume_channels[0], seed, seed, seed])?;
        for (i, b) in d.blocks.iter().enumerate() {
            y = b.forward(f, nn::upsample_nearest(y, 2, 3)?)?;
            ActivationTrace::record(&mut trace, &format!("D{}", i + 1), y);
        }
        y = d.act.forward(f, d.out.forward(f, y)?)?;
        if self.config.volume_final_upsample {
            y = nn::upsample_nearest(y, 2, 3)?;
        }
        ActivationTrace::record(&mut trace, "Volume", y);
        Ok(y)
    }

    /// Image decoder on the tape: full codes `[N, code_len]` to `[N, 3, H, W]`.
    pub fn decode_image_var<'t>(
        &self,
        f: &Forward<'t, '_>,
        code: Var<'t, f32>,
        mut trace: Option<&mut ActivationTrace>,
    ) -> Result<Var<'t, f32>> {
        let s = code.shape();
        if s.len() != 2 || s[1] != self.config.code_len() {
            return Err(Error::Shape(format!(
                "image decoder expects [N, {}], got {s:?}",
                self.config.code_len()
            )));
        }
        let d = &self.image;
        let seed = self.config.image_seed;
        let h = f.rrelu(d.fc.forward(f, code)?)?;
        let mut y = h.reshape(&[s[0], self.config.image_channels[0], seed, seed])?;
        for (i, b) in d.blocks.iter().enumerate() {
            y = b.forward(f, nn::upsample_nearest(y, 2, 2)?)?;
            ActivationTrace::record(&mut trace, &format!("I{}", i + 1), y);
        }
        y = d.act.forward(f, d.out.forward(f, y)?)?;
        ActivationTrace::record(&mut trace, "Reconstruction", y);
        Ok(y)
    }

    fn codes_from(&self, t: &Tensor<f32>) -> Result<Vec<GraphicsCode>> {
        let len = self.config.code_len();
        t.data()
            .chunks_exact(len)
            .map(|c| GraphicsCode::new(c.to_vec(), self.config.shape_len, self.config.transform_len))
            .collect()
    }

    /// Inference-mode encoding of a `[N, C, H, W]` batch.
    pub fn encode(&self, images: &Tensor<f32>) -> Result<Vec<GraphicsCode>> {
        self.check_input(images.shape())?;
        let mut out = Vec::with_capacity(images.shape()[0]);
        for chunk in chunks(images)? {
            let tape = Tape::new();
            let f = self.forward_ctx(&tape, false, 0);
            let z = self.encode_var(&f, tape.constant(chunk), None)?;
            out.extend(self.codes_from(&z.value())?);
        }
        Ok(out)
    }

    /// Inference-mode encoding that also records `Image`, `E1`-`E3` and `Z`.
    pub fn encode_traced(&self, images: &Tensor<f32>) -> Result<(Vec<GraphicsCode>, ActivationTrace)> {
        self.check_input(images.shape())?;
        let tape = Tape::new();
        let f = self.forward_ctx(&tape, false, 0);
        let mut trace = ActivationTrace::default();
        let z = self.encode_var(&f, tape.constant(images.clone()), Some(&mut trace))?;
        Ok((self.codes_from(&z.value())?, trace))
    }

    /// Inference pass through the encoder and volume decoder recording
    /// `Image, E1, E2, E3, Z, D1, D2, D3, Volume`; with `with_image_decoder`
    /// the image decoder layers `I1`-`I4` and `Reconstruction` follow.
    pub fn trace(&self, images: &Tensor<f32>, with_image_decoder: bool) -> Result<ActivationTrace> {
        self.check_input(images.shape())?;
        let mut all = ActivationTrace::default();
        for chunk in chunks(images)? {
            let tape = Tape::new();
            let f = self.forward_ctx(&tape, false, 0);
            let mut trace = ActivationTrace::default();
            let z = self.encode_var(&f, tape.constant(chunk), Some(&mut trace))?;
            let shape = z.slice_cols(0..self.config.shape_len)?;
            self.decode_volume_var(&f, shape, Some(&mut trace))?;
            if with_image_decoder {
                self.decode_image_var(&f, z, Some(&mut trace))?;
            }
            all.extend_batch(trace)?;
        }
        Ok(all)
    }

    fn stack_codes(&self, codes: &[&[f32]], len: usize, what: &str) -> Result<Tensor<f32>> {
        if codes.is_empty() {
            return Err(Error::Shape(format!("no {what} codes given")));
        }
        let mut data = Vec::with_capacity(codes.len() * len);
        for c in codes {
            if c.len() != len {
                return Err(Error::Shape(format!("{what} code has length {}, expected {len}", c.len())));
            }
            data.extend_from_slice(c);
        }
        Tensor::new(&[codes.len(), len], data)
    }

    /// Inference-mode volume decoding of shape codes.
    pub fn decode_volume(&self, shape_codes: &[&[f32]]) -> Result<Vec<VoxelGrid>> {
        let t = self.stack_codes(shape_codes, self.config.shape_len, "shape")?;
        let r = self.config.volume_res;
        let mut out = Vec::with_capacity(shape_codes.len());
        for chunk in chunks(&t)? {
            let tape = Tape::new();
            let f = self.forward_ctx(&tape, false, 0);
            let v = self.decode_volume_var(&f, tape.constant(chunk), None)?.value();
            for item in v.data().chunks_exact(r * r * r) {
                out.push(VoxelGrid::new([r; 3], item.to_vec())?);
            }
        }
        Ok(out)
    }

    /// Inference-mode image decoding of paired shape and transformation codes;
    /// returns `[N, 3, H, W]`.
    pub fn decode_image(&self, shape_codes: &[&[f32]], transform_codes: &[&[f32]]) -> Result<Tensor<f32>> {
        if shape_codes.len() != transform_codes.len() {
            return Err(Error::Shape(format!(
                "{} shape codes but {} transformation codes",
                shape_codes.len(),
                transform_codes.len()
            )));
        }
        let s = self.stack_codes(shape_codes, self.config.shape_len, "shape")?;
        let t = self.stack_codes(transform_codes, self.config.transform_len, "transformation")?;
        let n = shape_codes.len();
        let mut parts = Vec::new();
        for i in (0..n).step_by(INFER_CHUNK) {
            let m = INFER_CHUNK.min(n - i);
            let tape = Tape::new();
            let f = self.forward_ctx(&tape, false, 0);
            let sv = tape.constant(rows(&s, i, m)?);
            let tv = tape.constant(rows(&t, i, m)?);
            let img = self.decode_image_var(&f, sv.concat_cols(tv)?, None)?.value();
            parts.extend((0..m).map(|j| img.item(j)));
        }
        Tensor::stack(&parts)
    }

    /// Encoder followed by the volume decoder in inference mode.
    pub fn predict_volumes(&self, images: &Tensor<f32>) -> Result<Vec<VoxelGrid>> {
        self.check_input(images.shape())?;
        let r = self.config.volume_res;
        let mut out = Vec::with_capacity(images.shape()[0]);
        for chunk in chunks(images)? {
            let tape = Tape::new();
            let f = self.forward_ctx(&tape, false, 0);
            let z = self.encode_var(&f, tape.constant(chunk), None)?;
            let v = self
                .decode_volume_var(&f, z.slice_cols(0..self.config.shape_len)?, None)?
                .value();
            for item in v.data().chunks_exact(r * r * r) {
                out.push(VoxelGrid::new([r; 3], item.to_vec())?);
            }
        }
        Ok(out)
    }

    /// Encoder followed by the image decoder on the full code.
    pub fn reconstruct_images(&self, images: &Tensor<f32>) -> Result<Tensor<f32>> {
        self.check_input(images.shape())?;
        let mut parts = Vec::new();
        for chunk in chunks(images)? {
            let tape = Tape::new();
            let f = self.forward_ctx(&tape, false, 0);
            let z = self.encode_var(&f, tape.constant(chunk), None)?;
            let img = self.decode_image_var(&f, z, None)?.value();
            parts.extend((0..img.shape()[0]).map(|j| img.item(j)));
        }
        Tensor::stack(&parts)
    }

    /// Names of the image-decoder parameters.
    pub fn is_image_decoder_param(name: &str) -> bool {
        name.starts_with("img.")
    }
}

/// Leading-axis rows `[start, start + len)` of a tensor.
fn rows(t: &Tensor<f32>, start: usize, len: usize) -> Result<Tensor<f32>> {
    let per = t.len() / t.shape()[0];
    let mut shape = t.shape().to_vec();
    shape[0] = len;
    Tensor::new(&shape, t.data()[start * per..(start + len) * per].to_vec())
}

fn chunks(t: &Tensor<f32>) -> Result<Vec<Tensor<f32>>> {
    let n = t.shape()[0];
    (0..n)
        .step_by(INFER_CHUNK)
        .map(|i| rows(t, i, INFER_CHUNK.min(n - i)))
        .collect()
}
