//! Losses, Adam, and the volume/image training steps with decoder switching.

use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::datagen::{Dataset, VIDEO_FRAMES};
use crate::error::{Error, Result};
use crate::model::layers::{ParamId, ParamStore};
use crate::nn::BatchStats;
use crate::model::Model;
use crate::tensor::{check_same_shape, Real, Tape, Tensor, Var};

/// Mean of squared differences.
pub fn mse_loss<'t, T: Real>(pred: Var<'t, T>, target: Var<'t, T>) -> Result<Var<'t, T>> {
    check_same_shape("mse_loss", &pred.shape(), &target.shape())?;
    pred.sub(target)?.square().mean()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainMode {
    /// Only the volume decoder is trained; the image decoder is never run.
    VolumeOnly,
    /// Alternates blocks of volume and image batches.
    Twin,
}

impl TrainMode {
    pub fn as_str(self) -> &'static str {
        match self {
            TrainMode::VolumeOnly => "volume",
            TrainMode::Twin => "twin",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "volume" | "volume_only" => Ok(TrainMode::VolumeOnly),
            "twin" => Ok(TrainMode::Twin),
            other => Err(Error::Config(format!("unknown training mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    /// Consecutive batches given to one decoder before switching.
    pub switch_period: usize,
    pub epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub mode: TrainMode,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.001,
            batch_size: 10,
            switch_period: 3,
            epochs: 1,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            mode: TrainMode::VolumeOnly,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if self.batch_size < 2 {
            return Err(Error::Config("batch size must be at least 2".into()));
        }
        if self.switch_period == 0 {
            return Err(Error::Config("switch period must be at least 1".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("at least one epoch is required".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.eps <= 0.0 {
            return Err(Error::Config("adam hyper-parameters out of range".into()));
        }
        Ok(())
    }

    /// `key=value` lines; the shuffle seed is stored as `train_seed`.
    pub fn to_kv(&self) -> String {
        format!(
            "mode={}\nlr={}\nbatch_size={}\nswitch_period={}\nepochs={}\nbeta1={}\nbeta2={}\neps={}\ntrain_seed={}\n",
            self.mode.as_str(),
            self.lr,
            self.batch_size,
            self.switch_period,
            self.epochs,
            self.beta1,
            self.beta2,
            self.eps,
            self.seed
        )
    }

    /// Applies one `key=value` setting; `Ok(false)` when the key is not a
    /// training key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        let bad = || Error::Config(format!("{key}: cannot parse {value:?}"));
        match key {
            "mode" => self.mode = TrainMode::parse(value)?,
            "lr" => self.lr = value.parse().map_err(|_| bad())?,
            "batch_size" => self.batch_size = value.parse().map_err(|_| bad())?,
            "switch_period" => self.switch_period = value.parse().map_err(|_| bad())?,
            "epochs" => self.epochs = value.parse().map_err(|_| bad())?,
            "beta1" => self.beta1 = value.parse().map_err(|_| bad())?,
            "beta2" => self.beta2 = value.parse().map_err(|_| bad())?,
            "eps" => self.eps = value.parse().map_err(|_| bad())?,
            "train_seed" => self.seed = value.parse().map_err(|_| bad())?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    /// Decoder trained on batch `b` (counted across epochs).
    pub fn step_kind(&self, b: usize) -> StepKind {
        match self.mode {
            TrainMode::VolumeOnly => StepKind::Volume,
            TrainMode::Twin if (b / self.switch_period) % 2 == 0 => StepKind::Volume,
            TrainMode::Twin => StepKind::Image,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepKind {
    Volume,
    Image,
}

impl fmt::Display for StepKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StepKind::Volume => "volume",
            StepKind::Image => "image",
        })
    }
}

/// First and second moments per parameter.
///
/// Each parameter keeps its own step count so parameters that sit out some
/// steps (the image decoder during volume batches) get correct bias correction.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdamState {
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
    steps: Vec<u64>,
    /// Optimizer steps taken.
    pub t: u64,
}

impl AdamState {
    pub fn new(store: &ParamStore) -> Self {
        Self {
            m: store.iter().map(|(_, p)| vec![0.0; p.value.len()]).collect(),
            v: store.iter().map(|(_, p)| vec![0.0; p.value.len()]).collect(),
            steps: vec![0; store.len()],
            t: 0,
        }
    }

    pub fn param_steps(&self, id: ParamId) -> u64 {
        self.steps[id.index()]
    }
}

/// One bias-corrected Adam update of a flat parameter.
pub fn adam_update<T: Real>(param: &mut [T], grad: &[T], m: &mut [T], v: &mut [T], t: u64, cfg: &TrainConfig) {
    let (b1, b2) = (T::lit(cfg.beta1), T::lit(cfg.beta2));
    let c1 = T::one() - T::lit(cfg.beta1.powi(t as i32));
    let c2 = T::one() - T::lit(cfg.beta2.powi(t as i32));
    let (lr, eps) = (T::lit(cfg.lr), T::lit(cfg.eps));
    for i in 0..param.len() {
        let g = grad[i];
        m[i] = b1 * m[i] + (T::one() - b1) * g;
        v[i] = b2 * v[i] + (T::one() - b2) * g * g;
        let mh = m[i] / c1;
        let vh = v[i] / c2;
        param[i] -= lr * mh / (vh.sqrt() + eps);
    }
}

/// Applies Adam to every parameter that has a gradient.
pub fn adam_step(
    store: &mut ParamStore,
    grads: &[(ParamId, Tensor<f32>)],
    state: &mut AdamState,
    cfg: &TrainConfig,
) -> Result<()> {
    if state.steps.len() != store.len() {
        return Err(Error::Config("optimizer state belongs to a different model".into()));
    }
    for (id, g) in grads {
        let p = store.get(*id);
        if g.shape() != p.value.shape() {
            return Err(Error::Shape(format!(
                "gradient for {} has shape {:?}, parameter is {:?}",
                p.name,
                g.shape(),
                p.value.shape()
            )));
        }
    }
    state.t += 1;
    for (id, g) in grads {
        let i = id.index();
        state.steps[i] += 1;
        let p = store.get_mut(*id);
        adam_update(p.value.data_mut(), g.data(), &mut state.m[i], &mut state.v[i], state.steps[i], cfg);
    }
    Ok(())
}

/// Per-step loss record; `step` counts from 0.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub kind: StepKind,
    pub loss: f32,
}

/// Model plus optimizer state.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: Model,
    pub adam: AdamState,
    pub cfg: TrainConfig,
    step: usize,
}

fn step_seed(seed: u64, step: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (step as u64).wrapping_add(1).wrapping_mul(0xD1B5_4A32_D192_ED03)
}

/// Reconstruction target of the image decoder: the input itself, or the
/// frontal frame of a video.
fn image_target(model: &Model, images: &Tensor<f32>) -> Result<Tensor<f32>> {
    if model.config().input_channels() == 3 {
        return Ok(images.clone());
    }
    let s = images.shape();
    let plane = s[2] * s[3];
    let frame = VIDEO_FRAMES / 2;
    let mut data = Vec::with_capacity(s[0] * 3 * plane);
    for item in images.data().chunks_exact(s[1] * plane) {
        data.extend_from_slice(&item[3 * frame * plane..3 * (frame + 1) * plane]);
    }
    Tensor::new(&[s[0], 3, s[2], s[3]], data)
}

impl Trainer {
    pub fn new(model: Model, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let adam = AdamState::new(model.params());
        Ok(Self { model, adam, cfg, step: 0 })
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    pub fn into_model(self) -> Model {
        self.model
    }

    /// Runs one loss on the tape and returns its value, the parameter
    /// gradients and the batch-norm statistics gathered on the way.
    fn gradients(&self, images: &Tensor<f32>, volumes: Option<&Tensor<f32>>) -> Result<StepOutput> {
        let model = &self.model;
        let tape = Tape::new();
        let f = model.forward_ctx(&tape, true, step_seed(self.cfg.seed, self.step));
        let z = model.encode_var(&f, tape.constant(images.clone()), None)?;
        let shape_len = model.config().shape_len;
        let loss = match volumes {
            Some(v) => {
                let pred = model.decode_volume_var(&f, z.slice_cols(0..shape_len)?, None)?;
                mse_loss(pred, tape.constant(v.clone()))?
            }
            None => {
                let target = image_target(model, images)?;
                let pred = model.decode_image_var(&f, z.suppress_grad_cols(0..shape_len)?, None)?;
                mse_loss(pred, tape.constant(target))?
            }
        };
        let value = loss.value().data()[0];
        if !value.is_finite() {
            return Err(Error::Data(format!("loss became non-finite at step {}", self.step)));
        }
        let mut grads = tape.backward(loss)?;
        let updates = f
            .used_params()
            .into_iter()
            .filter_map(|(id, v)| grads.take(v).map(|g| (id, g)))
            .collect();
        Ok(StepOutput {
            loss: value,
            updates,
            bn_stats: f.take_bn_stats(),
        })
    }

    fn apply(&mut self, out: StepOutput) -> Result<f32> {
        adam_step(self.model.params_mut(), &out.updates, &mut self.adam, &self.cfg)?;
        let states = self.model.bn_states_mut();
        for (idx, s) in out.bn_stats {
            states[idx].update(&s.mean, &s.var, s.count);
        }
        self.step += 1;
        Ok(out.loss)
    }

    /// Encoder and volume decoder on shape slots, MSE against `volumes`.
    pub fn volume_step(&mut self, images: &Tensor<f32>, volumes: &Tensor<f32>) -> Result<f32> {
        let out = self.gradients(images, Some(volumes))?;
        self.apply(out)
    }

    /// Encoder and image decoder on the full code, MSE against the input;
    /// the gradient entering the shape slots is zeroed.
    pub fn image_step(&mut self, images: &Tensor<f32>) -> Result<f32> {
        let out = self.gradients(images, None)?;
        self.apply(out)
    }
}

struct StepOutput {
    loss: f32,
    updates: Vec<(ParamId, Tensor<f32>)>,
    bn_stats: Vec<(usize, BatchStats<f32>)>,
}

/// Batch boundaries of one epoch; a trailing batch smaller than two is dropped
/// because batch normalization needs at least two items.
pub fn batch_ranges(n: usize, batch_size: usize) -> Vec<std::ops::Range<usize>> {
    (0..n)
        .step_by(batch_size)
        .map(|s| s..(s + batch_size).min(n))
        .filter(|r| r.len() >= 2)
        .collect()
}

/// Trains over `data` for `cfg.epochs` shuffled passes, reporting each step.
pub fn train(
    model: Model,
    data: &Dataset,
    cfg: &TrainConfig,
    mut on_step: impl FnMut(&StepRecord) -> Result<()>,
) -> Result<(Model, Vec<StepRecord>)> {
    if data.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    let mc = model.config();
    if data.channels != mc.input_channels() || data.image_res != mc.image_res || data.volume_res != mc.volume_res {
        return Err(Error::Config(format!(
            "dataset ({} channels, {}px, {}^3) does not fit the network ({} channels, {}px, {}^3)",
            data.channels,
            data.image_res,
            data.volume_res,
            mc.input_channels(),
            mc.image_res,
            mc.volume_res
        )));
    }
    let mut trainer = Trainer::new(model, *cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut log = Vec::new();
    let mut b = 0;
    for _ in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut rng);
        for r in batch_ranges(order.len(), cfg.batch_size) {
            let idx = &order[r];
            let images = data.images(idx)?;
            let kind = cfg.step_kind(b);
            let loss = match kind {
                StepKind::Volume => trainer.volume_step(&images, &data.volumes(idx)?)?,
                StepKind::Image => trainer.image_step(&images)?,
            };
            let rec = StepRecord { step: b, kind, loss };
            on_step(&rec)?;
            log.push(rec);
            b += 1;
        }
    }
    Ok((trainer.into_model(), log))
}

/// Gradients seen by the encoder when backpropagating one loss.
#[derive(Debug, Clone)]
pub struct GradientProbe {
    pub loss: f32,
    /// Gradient arriving at the graphics code, `[N, code_len]`.
    pub code_grad: Tensor<f32>,
    /// L2 norm of each parameter gradient, by parameter name.
    pub param_grad_norms: Vec<(String, f64)>,
}

impl GradientProbe {
    pub fn grad_norm(&self, name: &str) -> Option<f64> {
        self.param_grad_norms.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }

    /// Largest absolute code gradient within `cols`, over all items.
    pub fn max_abs_in(&self, cols: std::ops::Range<usize>) -> f32 {
        let w = self.code_grad.shape()[1];
        self.code_grad
            .data()
            .chunks_exact(w)
            .flat_map(|row| row[cols.clone()].iter().map(|v| v.abs()))
            .fold(0.0, f32::max)
    }
}

fn probe(model: &Model, images: &Tensor<f32>, volumes: Option<&Tensor<f32>>, seed: u64) -> Result<GradientProbe> {
    let tape = Tape::new();
    let f = model.forward_ctx(&tape, true, seed);
    let z = model.encode_var(&f, tape.constant(images.clone()), None)?.retain_grad();
    let shape_len = model.config().shape_len;
    let loss = match volumes {
        Some(v) => {
            let pred = model.decode_volume_var(&f, z.slice_cols(0..shape_len)?, None)?;
            mse_loss(pred, tape.constant(v.clone()))?
        }
        None => {
            let target = image_target(model, images)?;
            let pred = model.decode_image_var(&f, z.suppress_grad_cols(0..shape_len)?, None)?;
            mse_loss(pred, tape.constant(target))?
        }
    };
    let value = loss.value().data()[0];
    let grads = tape.backward(loss)?;
    let code_grad = grads
        .get(z)
        .cloned()
        .unwrap_or_else(|| Tensor::zeros(&z.shape()));
    let param_grad_norms = f
        .used_params()
        .into_iter()
        .map(|(id, v)| {
            let n = grads
                .get(v)
                .map(|g| g.data().iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt())
                .unwrap_or(0.0);
            (model.params().get(id).name.clone(), n)
        })
        .collect();
    Ok(GradientProbe {
        loss: value,
        code_grad,
        param_grad_norms,
    })
}

/// Gradients of the image loss as used by [`Trainer::image_step`], without updating.
pub fn probe_image_gradients(model: &Model, images: &Tensor<f32>, seed: u64) -> Result<GradientProbe> {
    probe(model, images, None, seed)
}

/// Gradients of the volume loss as used by [`Trainer::volume_step`], without updating.
pub fn probe_volume_gradients(
    model: &Model,
    images: &Tensor<f32>,
    volumes: &Tensor<f32>,
    seed: u64,
) -> Result<GradientProbe> {
    probe(model, images, Some(volumes), seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{make_dataset, DataConfig, Family};
    use crate::gradcheck::{check, random_tensor};
    use crate::model::NetworkConfig;
    use rand::Rng;

    fn tiny() -> NetworkConfig {
        NetworkConfig {
            encoder_channels: [4, 4, 8],
            loc_channels: 4,
            volume_channels: [4, 4, 4, 2],
            image_channels: [4, 4, 4, 2, 2],
            ..NetworkConfig::faces_32()
        }
    }

    #[test]
    fn mse_examples_and_oracle() {
        let tape = Tape::<f64>::new();
        let a = tape.constant(Tensor::new(&[2], vec![0.0, 2.0]).unwrap());
        let b = tape.constant(Tensor::new(&[2], vec![0.0, 0.0]).unwrap());
        assert_eq!(mse_loss(a, b).unwrap().value().data(), &[2.0]);
        assert_eq!(mse_loss(a, a).unwrap().value().data(), &[0.0]);
        let c = tape.constant(Tensor::zeros(&[3]));
        assert!(mse_loss(a, c).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = random_tensor(&[4, 7], -2.0, 2.0, &mut rng);
        let t = random_tensor(&[4, 7], -2.0, 2.0, &mut rng);
        let got = mse_loss(tape.constant(p.clone()), tape.constant(t.clone())).unwrap().value().data()[0];
        let mut s = 0.0;
        for i in 0..p.len() {
            s += (p.data()[i] - t.data()[i]) * (p.data()[i] - t.data()[i]);
        }
        assert!((got - s / p.len() as f64).abs() <= 1e-12);
    }

    #[test]
    fn mse_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = random_tensor(&[3, 4], -1.0, 1.0, &mut rng);
        let t = random_tensor(&[3, 4], -1.0, 1.0, &mut rng);
        let r = check(&[p, t], 1e-5, |_, v| mse_loss(v[0], v[1])).unwrap();
        assert!(r.passes(1e-4), "{r:?}");
    }

    #[test]
    fn adam_first_step_and_zero_gradient() {
        let cfg = TrainConfig::default();
        let mut store = ParamStore::default();
        let id = store.add("x", Tensor::full(&[2], 1.0f32));
        let mut st = AdamState::new(&store);
        adam_step(&mut store, &[(id, Tensor::full(&[2], 1.0))], &mut st, &cfg).unwrap();
        for &v in store.get(id).value.data() {
            assert!((v - 0.999).abs() < 1e-6, "{v}");
        }
        let before = store.clone();
        let mut fresh = AdamState::new(&store);
        adam_step(&mut store, &[(id, Tensor::zeros(&[2]))], &mut fresh, &cfg).unwrap();
        assert_eq!(store, before);
        assert_eq!(fresh.t, 1);
        assert!(adam_step(&mut store, &[(id, Tensor::zeros(&[3]))], &mut fresh, &cfg).is_err());
    }

    #[test]
    fn adam_minimizes_a_parabola() {
        let cfg = TrainConfig { lr: 0.1, ..TrainConfig::default() };
        let (mut x, mut m, mut v) = ([1.0f64], [0.0], [0.0]);
        for t in 1..=100 {
            let g = [2.0 * x[0]];
            adam_update(&mut x, &g, &mut m, &mut v, t, &cfg);
        }
        assert!(x[0].abs() < 0.1, "{}", x[0]);

        // independent scalar transcription of the update rule
        let (mut y, mut m1, mut m2) = (1.0f64, 0.0f64, 0.0f64);
        for t in 1..=100 {
            let g = 2.0 * y;
            m1 = 0.9 * m1 + 0.1 * g;
            m2 = 0.999 * m2 + 0.001 * g * g;
            let step = 0.1 * (m1 / (1.0 - 0.9f64.powi(t))) / ((m2 / (1.0 - 0.999f64.powi(t))).sqrt() + 1e-8);
            y -= step;
        }
        assert!((y - x[0]).abs() < 1e-12);
    }

    #[test]
    fn twin_schedule_alternates_in_threes() {
        let cfg = TrainConfig { mode: TrainMode::Twin, ..TrainConfig::default() };
        let s: String = (0..12)
            .map(|b| match cfg.step_kind(b) {
                StepKind::Volume => 'V',
                StepKind::Image => 'I',
            })
            .collect();
        assert_eq!(s, "VVVIIIVVVIII");
        let vol = TrainConfig::default();
        assert!((0..12).all(|b| vol.step_kind(b) == StepKind::Volume));
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig { batch_size: 1, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { lr: 0.0, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { switch_period: 0, ..TrainConfig::default() }.validate().is_err());
        assert_eq!(batch_ranges(21, 10), vec![0..10, 10..20]);
        assert_eq!(batch_ranges(22, 10), vec![0..10, 10..20, 20..22]);
    }

    fn batch(n: usize, seed: u64) -> (Tensor<f32>, Tensor<f32>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Tensor::from_fn(&[n, 3, 32, 32], |_| rng.gen_range(0.0..1.0));
        let v = Tensor::from_fn(&[n, 1, 32, 32, 32], |_| if rng.gen_bool(0.3) { 1.0 } else { 0.0 });
        (x, v)
    }

    #[test]
    fn image_loss_gradient_is_suppressed_on_shape_slots() {
        let m = Model::build(&tiny().with_seed(3)).unwrap();
        let (x, _) = batch(4, 4);
        let p = probe_image_gradients(&m, &x, 1).unwrap();
        assert_eq!(p.max_abs_in(0..185), 0.0);
        assert!(p.max_abs_in(185..200) > 0.0);
        for l in ["enc.conv1.weight", "enc.conv2.weight", "enc.conv3.weight"] {
            assert!(p.grad_norm(l).unwrap() > 0.0, "{l}");
        }
    }

    #[test]
    fn volume_loss_gradient_skips_transform_slots() {
        let m = Model::build(&tiny().with_seed(5)).unwrap();
        let (x, v) = batch(3, 6);
        let p = probe_volume_gradients(&m, &x, &v, 2).unwrap();
        assert_eq!(p.max_abs_in(185..200), 0.0);
        assert!(p.max_abs_in(0..185) > 0.0);
        assert!(p.grad_norm("img.fc.weight").is_none());
    }

    #[test]
    fn volume_steps_overfit_a_fixed_batch() {
        let mut t = Trainer::new(Model::build(&tiny().with_seed(7)).unwrap(), TrainConfig::default()).unwrap();
        let (x, v) = batch(10, 8);
        let losses: Vec<f32> = (0..50).map(|_| t.volume_step(&x, &v).unwrap()).collect();
        assert!(losses.iter().all(|l| l.is_finite()));
        let head: f32 = losses[..10].iter().sum::<f32>() / 10.0;
        let tail: f32 = losses[40..].iter().sum::<f32>() / 10.0;
        assert!(tail < 0.8 * head, "{head} -> {tail}");
    }

    #[test]
    fn volume_only_training_leaves_image_decoder_untouched() {
        let data = make_dataset(&DataConfig::new(Family::Head, 2, 32, 9)).unwrap();
        let m0 = Model::build(&tiny().with_seed(1)).unwrap();
        let mut seen = 0;
        let (m1, log) = train(m0.clone(), &data, &TrainConfig::default(), |_| {
            seen += 1;
            Ok(())
        })
        .unwrap();
        assert_eq!(log.len(), 3);
        assert_eq!(seen, 3);
        for ((_, a), (_, b)) in m0.params().iter().zip(m1.params().iter()) {
            if Model::is_image_decoder_param(&a.name) {
                assert_eq!(a, b);
            }
        }
        assert_ne!(m0.params(), m1.params());
    }

    #[test]
    fn training_is_reproducible() {
        let data = make_dataset(&DataConfig::new(Family::Head, 2, 32, 10)).unwrap();
        let cfg = TrainConfig { mode: TrainMode::Twin, batch_size: 4, seed: 3, ..TrainConfig::default() };
        let run = || train(Model::build(&tiny().with_seed(2)).unwrap(), &data, &cfg, |_| Ok(())).unwrap();
        let (a, la) = run();
        let (b, lb) = run();
        assert_eq!(la, lb);
        assert_eq!(a.params(), b.params());
        assert_eq!(a.bn_states(), b.bn_states());
        assert_eq!(la.iter().filter(|r| r.kind == StepKind::Image).count(), 3);
    }

    #[test]
    fn empty_or_mismatched_data_is_rejected() {
        let data = make_dataset(&DataConfig::new(Family::Head, 1, 32, 1)).unwrap();
        let empty = data.subset(&[]);
        let m = Model::build(&tiny()).unwrap();
        assert!(train(m.clone(), &empty, &TrainConfig::default(), |_| Ok(())).is_err());
        let big = make_dataset(&DataConfig::new(Family::Head, 1, 16, 1)).unwrap();
        assert!(train(m, &big, &TrainConfig::default(), |_| Ok(())).is_err());
    }
}
