//! Parameterized layers over a shared [`ParamStore`].

use std::cell::RefCell;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{self, BatchNormState, BatchStats, RReluConfig};
use crate::tensor::{Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor<f32>,
}

/// Flat, ordered list of every trainable tensor of a model.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn add(&mut self, name: impl Into<String>, value: Tensor<f32>) -> ParamId {
        self.params.push(Param {
            name: name.into(),
            value,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (ParamId, &mut Param)> {
        self.params.iter_mut().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn element_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }
}

/// Per-pass state: the tape, lazily registered parameters, the RReLU noise
/// source and the batch statistics gathered in training mode.
pub struct Forward<'t, 'm> {
    tape: &'t Tape<f32>,
    params: &'m ParamStore,
    bn_states: &'m [BatchNormState<f32>],
    vars: RefCell<Vec<Option<Var<'t, f32>>>>,
    training: bool,
    rrelu: RReluConfig,
    rng: RefCell<ChaCha8Rng>,
    bn_stats: RefCell<Vec<(usize, BatchStats<f32>)>>,
}

impl<'t, 'm> Forward<'t, 'm> {
    pub fn new(
        tape: &'t Tape<f32>,
        params: &'m ParamStore,
        bn_states: &'m [BatchNormState<f32>],
        rrelu: RReluConfig,
        training: bool,
        seed: u64,
    ) -> Self {
        Self {
            tape,
            params,
            bn_states,
            vars: RefCell::new(vec![None; params.len()]),
            training,
            rrelu: rrelu.with_training(training),
            rng: RefCell::new(ChaCha8Rng::seed_from_u64(seed)),
            bn_stats: RefCell::new(Vec::new()),
        }
    }

    pub fn tape(&self) -> &'t Tape<f32> {
        self.tape
    }

    pub fn training(&self) -> bool {
        self.training
    }

    /// Tape handle for a parameter; trainable only in training mode.
    pub fn param(&self, id: ParamId) -> Var<'t, f32> {
        if let Some(v) = self.vars.borrow()[id.0] {
            return v;
        }
        let value = self.params.get(id).value.clone();
        let v = self.tape.leaf(value, self.training);
        self.vars.borrow_mut()[id.0] = Some(v);
        v
    }

    /// Parameters that took part in this pass, with their tape handles.
    pub fn used_params(&self) -> Vec<(ParamId, Var<'t, f32>)> {
        self.vars
            .borrow()
            .iter()
            .enumerate()
            .filter_map(|(i, v)| v.map(|v| (ParamId(i), v)))
            .collect()
    }

    pub fn rrelu(&self, x: Var<'t, f32>) -> Result<Var<'t, f32>> {
        nn::rrelu(x, self.rrelu, &mut *self.rng.borrow_mut())
    }

    pub fn take_bn_stats(&self) -> Vec<(usize, BatchStats<f32>)> {
        std::mem::take(&mut *self.bn_stats.borrow_mut())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: ParamId,
    pub stride: usize,
    pub padding: usize,
    /// 2 for images, 3 for volumes.
    pub rank: usize,
}

impl Conv {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        rank: usize,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        padding: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let mut shape = vec![out_ch, in_ch];
        shape.extend(std::iter::repeat(kernel).take(rank));
        let fan_in = in_ch * kernel.pow(rank as u32);
        let weight = store.add(format!("{name}.weight"), nn::kaiming_uniform(&shape, fan_in, rng));
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[out_ch]));
        Self {
            weight,
            bias,
            stride: 1,
            padding,
            rank,
        }
    }

    pub fn forward<'t>(&self, f: &Forward<'t, '_>, x: Var<'t, f32>) -> Result<Var<'t, f32>> {
        let (w, b) = (f.param(self.weight), f.param(self.bias));
        if self.rank == 2 {
            nn::conv2d(x, w, b, self.stride, self.padding)
        } else {
            nn::conv3d(x, w, b, self.stride, self.padding)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    /// Index into the owner's running-statistics table.
    pub state: usize,
}

impl BatchNorm {
    pub fn new(
        store: &mut ParamStore,
        states: &mut Vec<BatchNormState<f32>>,
        name: &str,
        channels: usize,
    ) -> Self {
        let gamma = store.add(format!("{name}.gamma"), Tensor::full(&[channels], 1.0));
        let beta = store.add(format!("{name}.beta"), Tensor::zeros(&[channels]));
        states.push(BatchNormState::new(channels));
        Self {
            gamma,
            beta,
            state: states.len() - 1,
        }
    }

    pub fn forward<'t>(&self, f: &Forward<'t, '_>, x: Var<'t, f32>) -> Result<Var<'t, f32>> {
        let (g, b) = (f.param(self.gamma), f.param(self.beta));
        let state = f
            .bn_states
            .get(self.state)
            .ok_or_else(|| Error::Config(format!("missing batch-norm state {}", self.state)))?;
        if f.training {
            let (y, stats) = nn::batchnorm_train(x, g, b, state.eps)?;
            f.bn_stats.borrow_mut().push((self.state, stats));
            Ok(y)
        } else {
            nn::batchnorm_infer(x, g, b, state)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, input: usize, output: usize, rng: &mut impl Rng) -> Self {
        let weight = store.add(
            format!("{name}.weight"),
            nn::kaiming_uniform(&[input, output], input, rng),
        );
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[output]));
        Self { weight, bias }
    }

    pub fn forward<'t>(&self, f: &Forward<'t, '_>, x: Var<'t, f32>) -> Result<Var<'t, f32>> {
        nn::linear(x, f.param(self.weight), f.param(self.bias))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PRelu {
    pub slope: ParamId,
}

impl PRelu {
    pub fn new(store: &mut ParamStore, name: &str) -> Self {
        Self {
            slope: store.add(format!("{name}.slope"), Tensor::scalar(nn::PRELU_INIT as f32)),
        }
    }

    pub fn forward<'t>(&self, f: &Forward<'t, '_>, x: Var<'t, f32>) -> Result<Var<'t, f32>> {
        nn::prelu(x, f.param(self.slope))
    }
}

/// Convolution, optional batch normalization, optional RReLU.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvBlock {
    pub conv: Conv,
    pub bn: Option<BatchNorm>,
    pub rrelu: bool,
}

impl ConvBlock {
    pub fn forward<'t>(&self, f: &Forward<'t, '_>, x: Var<'t, f32>) -> Result<Var<'t, f32>> {
        let mut y = self.conv.forward(f, x)?;
        if let Some(bn) = &self.bn {
            y = bn.forward(f, y)?;
        }
        if self.rrelu {
            y = f.rrelu(y)?;
        }
        Ok(y)
    }
}
