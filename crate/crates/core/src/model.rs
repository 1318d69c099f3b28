//! The full video classifier: a pointwise stem, a recurrent circuit unrolled
//! over the frames, and a small convolutional readout.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::Rng;

use crate::circuits::{
    self, CircuitConfig, CircuitKind, CircuitState, CircuitVars, CircuitWeights, PhiInit,
};
use crate::error::{config_err, shape_err, Result};
use crate::featuretracker::{VideoSample, SIZE};
use crate::losses::{self, SynchronyConfig};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{CVar, RealTensor, Tape, Var};

/// Reference parameter totals for the two circuits at 32 channels.
pub const EXPECTED_PARAMS_CVRNN: usize = 171_580;
pub const EXPECTED_PARAMS_INT: usize = 108_214;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub circuit: CircuitConfig,
    pub in_channels: usize,
    pub readout_kernel: usize,
}

impl ModelConfig {
    pub fn new(kind: CircuitKind, channels: usize) -> Self {
        Self { circuit: CircuitConfig::new(kind, channels), in_channels: 3, readout_kernel: 5 }
    }

    pub fn with_phi_init(mut self, mode: PhiInit) -> Self {
        self.circuit.phi_init = mode;
        self
    }
}

#[derive(Debug, Clone)]
pub struct VideoModel {
    pub cfg: ModelConfig,
    stem_w: ParamId,
    stem_b: ParamId,
    circuit: CircuitWeights,
    conv1_w: ParamId,
    conv1_b: ParamId,
    conv2_w: ParamId,
    conv2_b: ParamId,
    fc_w: ParamId,
    fc_b: ParamId,
}

/// Everything the forward pass exposes besides the logit.
#[derive(Debug, Clone)]
pub struct VideoOutput {
    pub logit: Var,
    /// One `[1, H, W]` phase map per step (complex circuit only).
    pub thetas: Vec<Var>,
    pub attention: Vec<Var>,
    pub phis: Vec<CVar>,
    pub excitation: Var,
}

impl VideoModel {
    /// Registers the model's parameters in `store`, which should be empty.
    pub fn new<R: Rng + ?Sized>(cfg: ModelConfig, store: &mut ParamStore, rng: &mut R) -> Result<Self> {
        let c = cfg.circuit.channels;
        let cin = cfg.in_channels;
        let k = cfg.readout_kernel;
        if k % 2 == 0 {
            return Err(config_err!("readout kernel must be odd, got {k}"));
        }
        let stem_w = store.uniform("stem.w", &[1, 1, 1, cin, c], cin, rng)?;
        let stem_b = store.zeros("stem.b", &[c])?;
        let circuit = CircuitWeights::register(store, "cell", cfg.circuit.clone(), rng)?;
        let conv1_w = store.uniform("readout.conv1.w", &[k, k, c, 1], k * k * c, rng)?;
        let conv1_b = store.zeros("readout.conv1.b", &[1])?;
        let conv2_w = store.uniform("readout.conv2.w", &[k, k, 2, 1], k * k * 2, rng)?;
        let conv2_b = store.zeros("readout.conv2.b", &[1])?;
        let fc_w = store.uniform("readout.fc.w", &[1, 1], 1, rng)?;
        let fc_b = store.zeros("readout.fc.b", &[1])?;
        Ok(Self { cfg, stem_w, stem_b, circuit, conv1_w, conv1_b, conv2_w, conv2_b, fc_w, fc_b })
    }

    pub fn kind(&self) -> CircuitKind {
        self.cfg.circuit.kind
    }

    pub fn phi_init(&self) -> PhiInit {
        self.cfg.circuit.phi_init
    }

    /// Whether training adds the synchrony term.
    pub fn uses_synchrony(&self) -> bool {
        self.kind() == CircuitKind::CvRnn && self.phi_init().uses_synchrony_loss()
    }

    /// Runs the model on a `[3, T, H, W]` video. `mask0` is the group mask
    /// of the first frame, used by the segmentation phase initialization;
    /// `rng` seeds the random phase initializations.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        video: Var,
        mask0: Option<&[u8]>,
        rng: &mut R,
    ) -> Result<VideoOutput> {
        let bound = store.bind(tape);
        let vs = self.circuit.vars(&bound);
        self.forward_bound(tape, &bound, &vs, video, mask0, rng)
    }

    fn forward_bound<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        bound: &crate::params::Bound,
        vs: &CircuitVars,
        video: Var,
        mask0: Option<&[u8]>,
        rng: &mut R,
    ) -> Result<VideoOutput> {
        let shape = tape.shape(video).to_vec();
        if shape.len() != 4 || shape[0] != self.cfg.in_channels || shape[1] == 0 {
            return Err(shape_err!("video must be [{}, T, H, W] with T > 0, got {:?}", self.cfg.in_channels, shape));
        }
        let (frames, h, w) = (shape[1], shape[2], shape[3]);
        let c = self.cfg.circuit.channels;

        let z_all = tape.conv3d_1x1(video, bound.var(self.stem_w), Some(bound.var(self.stem_b)))?;
        let mut state = CircuitState::zeros(tape, &[c, h, w]);
        let mut phi_prev: Option<CVar> = None;
        let (mut thetas, mut attention, mut phis) = (Vec::new(), Vec::new(), Vec::new());

        for t in 0..frames {
            let z = tape.narrow(z_all, 1, t, 1)?;
            let z = tape.reshape(z, &[c, h, w])?;
            let a = match self.kind() {
                CircuitKind::Int => circuits::int_attention(tape, z, state.e, vs)?,
                CircuitKind::CvRnn => {
                    let prev = match (self.phi_init(), phi_prev) {
                        (PhiInit::PerTimestepRandom, _) => circuits::random_phi(tape, &[c, h, w], rng),
                        (_, Some(p)) => p,
                        (mode, None) => circuits::initial_phi(tape, mode, z, mask0, vs, rng)?,
                    };
                    let out = circuits::cv_attention(tape, z, state.e, prev, vs)?;
                    phi_prev = Some(out.phi);
                    phis.push(out.phi);
                    if let Some(th) = out.theta {
                        thetas.push(th);
                    }
                    out.a
                }
            };
            attention.push(a);
            state = circuits::int_step(tape, z, state, a, vs)?.0;
        }

        let r1 = tape.conv2d(state.e, bound.var(self.conv1_w), Some(bound.var(self.conv1_b)))?;
        let blue = tape.narrow(video, 0, 2, 1)?;
        let blue = tape.narrow(blue, 1, frames - 1, 1)?;
        let blue = tape.reshape(blue, &[1, h, w])?;
        let cat = tape.concat(&[r1, blue])?;
        let r2 = tape.conv2d(cat, bound.var(self.conv2_w), Some(bound.var(self.conv2_b)))?;
        let r2 = tape.relu(r2);
        let pooled = tape.avg_pool_global(r2)?;
        let logit = tape.linear(pooled, bound.var(self.fc_w), Some(bound.var(self.fc_b)))?;
        Ok(VideoOutput { logit, thetas, attention, phis, excitation: state.e })
    }
}

/// `count` frame indices out of `total`, evenly spaced and always keeping the
/// first and the last frame.
pub fn frame_indices(total: usize, count: usize) -> Result<Vec<usize>> {
    if total == 0 || count == 0 || count > total {
        return Err(config_err!("cannot pick {count} of {total} frames"));
    }
    if count == 1 {
        return Ok(alloc::vec![total - 1]);
    }
    Ok((0..count).map(|i| (i * (total - 1) + (count - 1) / 2) / (count - 1)).collect())
}

/// Pixel values of the chosen frames as a `[3, T, H, W]` tensor in `[0, 1]`.
pub fn video_tensor(sample: &VideoSample, frames: &[usize]) -> RealTensor {
    let t_len = frames.len();
    let hw = SIZE * SIZE;
    RealTensor::from_fn(&[3, t_len, SIZE, SIZE], |i| {
        let ch = i / (t_len * hw);
        let t = (i / hw) % t_len;
        let p = i % hw;
        sample.frame(frames[t])[p * 3 + ch] as f64 / 255.0
    })
}

/// Loss, prediction and parameter gradients for one training video.
#[derive(Debug, Clone)]
pub struct SampleOutcome {
    pub loss: f64,
    pub bce: f64,
    pub synchrony: f64,
    pub logit: f64,
    /// Gradients in store order.
    pub grads: Vec<Vec<f64>>,
}

/// Forward and backward pass for one video. `masks` holds one group mask per
/// frame of `video`.
pub fn train_sample<R: Rng + ?Sized>(
    model: &VideoModel,
    store: &ParamStore,
    video: &RealTensor,
    masks: &[&[u8]],
    label: u8,
    syn: &SynchronyConfig,
    rng: &mut R,
) -> Result<SampleOutcome> {
    let mut tape = Tape::new();
    let bound = store.bind(&mut tape);
    let vs = model.circuit.vars(&bound);
    let v = tape.constant(video.clone());
    let out = model.forward_bound(&mut tape, &bound, &vs, v, masks.first().copied(), rng)?;
    let phases = if model.uses_synchrony() { Some((&out.thetas[..], masks)) } else { None };
    let terms = losses::total_loss(&mut tape, out.logit, label as f64, phases, syn)?;
    let synchrony = terms.synchrony.iter().map(|&l| tape.item(l)).sum();
    let mut grads = tape.backward(terms.total)?;
    Ok(SampleOutcome {
        loss: tape.item(terms.total),
        bce: tape.item(terms.bce),
        synchrony,
        logit: tape.item(out.logit),
        grads: bound.collect(&mut grads),
    })
}

/// Inference result for one video.
#[derive(Debug, Clone)]
pub struct Prediction {
    pub logit: f64,
    /// Per-step phase maps, flattened `H·W` (complex circuit only).
    pub thetas: Vec<Vec<f64>>,
    /// Per-step complex state, as `(re, im)` over `[C, H, W]`.
    pub phis: Vec<(Vec<f64>, Vec<f64>)>,
}

impl Prediction {
    pub fn label(&self) -> u8 {
        (self.logit > 0.0) as u8
    }
}

pub fn predict<R: Rng + ?Sized>(
    model: &VideoModel,
    store: &ParamStore,
    video: &RealTensor,
    mask0: Option<&[u8]>,
    keep_states: bool,
    rng: &mut R,
) -> Result<Prediction> {
    let mut tape = Tape::new();
    let v = tape.constant(video.clone());
    let out = model.forward(&mut tape, store, v, mask0, rng)?;
    let thetas = out.thetas.iter().map(|&t| tape.value(t).data().to_vec()).collect();
    let phis = if keep_states {
        out.phis.iter().map(|&p| (tape.value(p.re).data().to_vec(), tape.value(p.im).data().to_vec())).collect()
    } else {
        Vec::new()
    };
    Ok(Prediction { logit: tape.item(out.logit), thetas, phis })
}

/// Parameter totals grouped by layer: the parameter name without its
/// trailing `w`, `b`, `re` or `im` component. Sorted by layer name.
pub fn layer_table(store: &ParamStore) -> Vec<(String, usize)> {
    let mut m: BTreeMap<String, usize> = BTreeMap::new();
    for p in store.iter() {
        let layer = match p.name.rsplit_once('.') {
            Some((head, "w" | "b" | "re" | "im")) => head,
            _ => p.name.as_str(),
        };
        *m.entry(layer.to_string()).or_default() += p.numel();
    }
    m.into_iter().collect()
}
