//! The two-frame shell game: did the two objects stay put, swap one feature,
//! or swap places? Includes the generator and the three small models.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::circuits::{self, CircuitConfig, CircuitKind, CircuitState, CircuitWeights, NormAxis};
use crate::error::{config_err, Error, Result};
use crate::math::PI;
use crate::optim::{Adam, DEFAULT_LR};
use crate::params::{accumulate, Bound, ParamId, ParamStore};
use crate::rng::{stream, stream3};
use crate::tensor::{CVar, RealTensor, Tape, Var};

pub const MAP: usize = 24;
pub const PATCH: usize = 4;
pub const COLORS: usize = 3;
pub const ORIENTATIONS: usize = 4;
/// Width of the second layer: one unit per color/orientation conjunction.
pub const CONJUNCTIONS: usize = COLORS * ORIENTATIONS;
pub const CLASSES: usize = 3;
const PIXELS: usize = MAP * MAP;

pub const NO_SWITCH: u8 = 0;
pub const FEATURE_SWITCH: u8 = 1;
pub const OBJECT_SWITCH: u8 = 2;

/// Channel value of color index `c`. Zero is reserved for the background.
pub fn color_code(c: usize) -> f64 {
    (c + 1) as f64 / COLORS as f64
}

pub fn orientation_code(o: usize) -> f64 {
    (o + 1) as f64 / ORIENTATIONS as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShellStimulus {
    /// `[2, 24, 24]`: color code, orientation code.
    pub frame1: Vec<f64>,
    pub frame2: Vec<f64>,
    pub class: u8,
    /// Top-left corners of the two patches in frame one.
    pub positions: [(usize, usize); 2],
}

fn paint(frame: &mut [f64], (r, c): (usize, usize), color: f64, orientation: f64) {
    for y in r..r + PATCH {
        for x in c..c + PATCH {
            frame[y * MAP + x] = color;
            frame[PIXELS + y * MAP + x] = orientation;
        }
    }
}

fn overlaps(a: (usize, usize), b: (usize, usize)) -> bool {
    a.0.abs_diff(b.0) < PATCH && a.1.abs_diff(b.1) < PATCH
}

/// One stimulus of the given class.
pub fn generate_stimulus<R: Rng + ?Sized>(class: u8, rng: &mut R) -> Result<ShellStimulus> {
    if class as usize >= CLASSES {
        return Err(config_err!("shell game class {class} out of range"));
    }
    let mut colors: Vec<usize> = (0..COLORS).collect();
    colors.shuffle(rng);
    let mut orients: Vec<usize> = (0..ORIENTATIONS).collect();
    orients.shuffle(rng);
    let span = MAP - PATCH + 1;
    let p1 = (rng.random_range(0..span), rng.random_range(0..span));
    let p2 = loop {
        let p = (rng.random_range(0..span), rng.random_range(0..span));
        if !overlaps(p1, p) {
            break p;
        }
    };
    let (c, o) = ([color_code(colors[0]), color_code(colors[1])], [orientation_code(orients[0]), orientation_code(orients[1])]);
    let mut frame1 = vec![0.0; 2 * PIXELS];
    paint(&mut frame1, p1, c[0], o[0]);
    paint(&mut frame1, p2, c[1], o[1]);
    let (c2, o2) = match class {
        NO_SWITCH => (c, o),
        FEATURE_SWITCH => {
            if rng.random_bool(0.5) {
                ([c[1], c[0]], o)
            } else {
                (c, [o[1], o[0]])
            }
        }
        _ => ([c[1], c[0]], [o[1], o[0]]),
    };
    let mut frame2 = vec![0.0; 2 * PIXELS];
    paint(&mut frame2, p1, c2[0], o2[0]);
    paint(&mut frame2, p2, c2[1], o2[1]);
    Ok(ShellStimulus { frame1, frame2, class, positions: [p1, p2] })
}

/// `n` stimuli with classes cycling 0, 1, 2; sample `i` depends only on
/// `(seed, i)`.
pub fn generate_shellgame(seed: u64, n: usize) -> Result<Vec<ShellStimulus>> {
    (0..n).map(|i| generate_stimulus((i % CLASSES) as u8, &mut stream(seed, i as u64))).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShellVariant {
    RealFf,
    RealRnn,
    ComplexCvrnn,
}

impl ShellVariant {
    pub const ALL: [ShellVariant; 3] = [ShellVariant::RealFf, ShellVariant::RealRnn, ShellVariant::ComplexCvrnn];

    pub fn name(self) -> &'static str {
        match self {
            ShellVariant::RealFf => "real_ff",
            ShellVariant::RealRnn => "real_rnn",
            ShellVariant::ComplexCvrnn => "complex_cvrnn",
        }
    }
}

impl fmt::Display for ShellVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ShellVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let k = s.to_ascii_lowercase().replace('-', "_");
        Self::ALL.iter().copied().find(|v| v.name() == k).ok_or_else(|| config_err!("unknown shell variant {s:?}"))
    }
}

/// How the complex variant's per-pixel phases are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhaseMaps {
    /// One map per stimulus, used for both frames.
    Shared,
    /// An independent map for each frame.
    PerFrame,
}

#[derive(Debug, Clone)]
enum Body {
    Ff { w: ParamId, b: ParamId },
    Cell(CircuitWeights),
}

#[derive(Debug, Clone)]
pub struct ShellModel {
    pub variant: ShellVariant,
    conv_w: ParamId,
    conv_b: Option<ParamId>,
    body: Body,
    out_w: ParamId,
    out_b: ParamId,
}

impl ShellModel {
    pub fn new<R: Rng + ?Sized>(variant: ShellVariant, store: &mut ParamStore, rng: &mut R) -> Result<Self> {
        let h = CONJUNCTIONS;
        let conv_w = store.uniform("conv.w", &[1, 1, 2, h], 2, rng)?;
        // a complex bias would carry a fixed phase into every position
        let conv_b = if variant == ShellVariant::ComplexCvrnn { None } else { Some(store.zeros("conv.b", &[h])?) };
        let body = match variant {
            ShellVariant::RealFf => {
                Body::Ff { w: store.uniform("layer2.w", &[h, h], h, rng)?, b: store.zeros("layer2.b", &[h])? }
            }
            ShellVariant::RealRnn | ShellVariant::ComplexCvrnn => {
                let kind = if variant == ShellVariant::RealRnn { CircuitKind::Int } else { CircuitKind::CvRnn };
                let mut cfg = CircuitConfig::new(kind, h);
                cfg.inter_kernel = 1;
                cfg.phase_kernel = None;
                cfg.complex_input_kernel = false;
                cfg.norm = NormAxis::Channel;
                Body::Cell(CircuitWeights::register(store, "layer2", cfg, rng)?)
            }
        };
        let out_w = store.uniform("readout.w", &[CLASSES, 2 * h], 2 * h, rng)?;
        let out_b = store.zeros("readout.b", &[CLASSES])?;
        Ok(Self { variant, conv_w, conv_b, body, out_w, out_b })
    }

    /// Class logits `[3]`. `phases` holds one `[24·24]` phase map per frame
    /// and is required by the complex variant only.
    pub fn forward(&self, tape: &mut Tape, bound: &Bound, stim: &ShellStimulus, phases: Option<[&[f64]; 2]>) -> Result<Var> {
        let h = CONJUNCTIONS;
        let frames = [&stim.frame1, &stim.frame2];
        let conv_w = bound.var(self.conv_w);
        let conv_b = self.conv_b.map(|b| bound.var(b));
        let mut codes = Vec::with_capacity(2);
        match &self.body {
            Body::Ff { w, b } => {
                for f in frames {
                    let x = tape.constant(RealTensor::new(vec![2, MAP, MAP], f.clone())?);
                    let y = tape.conv2d(x, conv_w, conv_b)?;
                    let y = tape.relu(y);
                    let p = tape.max_pool_global(y)?;
                    let l = tape.linear(p, bound.var(*w), Some(bound.var(*b)))?;
                    codes.push(tape.relu(l));
                }
            }
            Body::Cell(cell) => {
                let v = cell.vars(bound);
                let mut state = CircuitState::zeros(tape, &[h, 1, 1]);
                let mut phi_prev: Option<CVar> = None;
                for (k, f) in frames.iter().enumerate() {
                    match self.variant {
                        ShellVariant::ComplexCvrnn => {
                            let ph = phases.ok_or_else(|| config_err!("the complex variant needs phase maps"))?[k];
                            if ph.len() != PIXELS {
                                return Err(config_err!("phase map of {} pixels", ph.len()));
                            }
                            let re = RealTensor::from_fn(&[2, MAP, MAP], |i| f[i] * libm::cos(ph[i % PIXELS]));
                            let im = RealTensor::from_fn(&[2, MAP, MAP], |i| f[i] * libm::sin(ph[i % PIXELS]));
                            let x = CVar { re: tape.constant(re), im: tape.constant(im) };
                            let y = tape.real_on_complex(x, conv_w)?;
                            let pooled = tape.complex_max_pool_global(y)?;
                            let zc = tape.creshape(pooled, &[h, 1, 1])?;
                            let z = tape.magnitude(zc)?;
                            let prev = match phi_prev {
                                Some(p) => p,
                                None => {
                                    let zero = tape.constant(RealTensor::zeros(&[h, 1, 1]));
                                    CVar { re: zero, im: zero }
                                }
                            };
                            let att = circuits::cv_attention_complex(tape, zc, state.e, prev, &v)?;
                            phi_prev = Some(att.phi);
                            state = circuits::int_step(tape, z, state, att.a, &v)?.0;
                            let a = tape.reshape(att.a, &[h])?;
                            codes.push(a);
                        }
                        _ => {
                            let x = tape.constant(RealTensor::new(vec![2, MAP, MAP], (*f).clone())?);
                            let y = tape.conv2d(x, conv_w, conv_b)?;
                            let y = tape.relu(y);
                            let p = tape.max_pool_global(y)?;
                            let z = tape.reshape(p, &[h, 1, 1])?;
                            let a = circuits::int_attention(tape, z, state.e, &v)?;
                            state = circuits::int_step(tape, z, state, a, &v)?.0;
                            codes.push(tape.reshape(state.e, &[h])?);
                        }
                    }
                }
            }
        }
        let cat = tape.concat(&codes)?;
        tape.linear(cat, bound.var(self.out_w), Some(bound.var(self.out_b)))
    }
}

/// Per-pixel uniform phases for the two frames.
pub fn phase_maps<R: Rng + ?Sized>(mode: PhaseMaps, rng: &mut R) -> [Vec<f64>; 2] {
    let mut draw = || (0..PIXELS).map(|_| rng.random_range(-PI..PI)).collect::<Vec<f64>>();
    let first = draw();
    let second = match mode {
        PhaseMaps::Shared => first.clone(),
        PhaseMaps::PerFrame => draw(),
    };
    [first, second]
}

/// Loss and gradients of one stimulus.
pub fn sample_gradients<R: Rng + ?Sized>(
    model: &ShellModel,
    store: &ParamStore,
    stim: &ShellStimulus,
    mode: PhaseMaps,
    rng: &mut R,
) -> Result<(f64, Vec<Vec<f64>>)> {
    let mut tape = Tape::new();
    let bound = store.bind(&mut tape);
    let maps = phase_maps(mode, rng);
    let logits = model.forward(&mut tape, &bound, stim, Some([&maps[0], &maps[1]]))?;
    let loss = tape.cross_entropy(logits, stim.class as usize)?;
    let mut g = tape.backward(loss)?;
    Ok((tape.item(loss), bound.collect(&mut g)))
}

pub fn predict<R: Rng + ?Sized>(model: &ShellModel, store: &ParamStore, stim: &ShellStimulus, mode: PhaseMaps, rng: &mut R) -> Result<u8> {
    let mut tape = Tape::new();
    let bound = store.bind(&mut tape);
    let maps = phase_maps(mode, rng);
    let logits = model.forward(&mut tape, &bound, stim, Some([&maps[0], &maps[1]]))?;
    let v = tape.value(logits).data();
    let mut best = 0;
    for k in 1..v.len() {
        if v[k] > v[best] {
            best = k;
        }
    }
    Ok(best as u8)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShellTrainConfig {
    pub seed: u64,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    /// Fraction of the data used for training; the rest is held out.
    pub train_fraction: f64,
    pub phase_maps: PhaseMaps,
}

impl Default for ShellTrainConfig {
    fn default() -> Self {
        Self { seed: 0, epochs: 30, batch: 32, lr: DEFAULT_LR, train_fraction: 0.9, phase_maps: PhaseMaps::Shared }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShellReport {
    pub variant: ShellVariant,
    pub seed: u64,
    pub params: usize,
    /// Held-out accuracy per class.
    pub per_class: [f64; CLASSES],
    pub overall: f64,
    /// Mean training loss of every epoch.
    pub epoch_loss: Vec<f64>,
}

/// Held-out accuracy per class; classes without samples report 0.
pub fn evaluate(model: &ShellModel, store: &ParamStore, data: &[ShellStimulus], cfg: &ShellTrainConfig) -> Result<([f64; CLASSES], f64)> {
    let mut hit = [0usize; CLASSES];
    let mut n = [0usize; CLASSES];
    for (i, s) in data.iter().enumerate() {
        let mut rng = stream3(cfg.seed, u64::MAX, i as u64);
        let p = predict(model, store, s, cfg.phase_maps, &mut rng)?;
        n[s.class as usize] += 1;
        hit[s.class as usize] += (p == s.class) as usize;
    }
    let per = core::array::from_fn(|k| if n[k] == 0 { 0.0 } else { hit[k] as f64 / n[k] as f64 });
    let total: usize = n.iter().sum();
    Ok((per, if total == 0 { 0.0 } else { hit.iter().sum::<usize>() as f64 / total as f64 }))
}

/// Trains one model with cross-entropy and Adam and reports held-out
/// accuracy per class. `on_epoch` receives `(epoch, mean loss)`.
pub fn train_shellgame(
    variant: ShellVariant,
    data: &[ShellStimulus],
    cfg: &ShellTrainConfig,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<(ShellReport, ParamStore)> {
    if !(0.0..1.0).contains(&cfg.train_fraction) || cfg.batch == 0 {
        return Err(config_err!("bad shell training config: fraction {}, batch {}", cfg.train_fraction, cfg.batch));
    }
    let n_train = crate::math::round(data.len() as f64 * cfg.train_fraction) as usize;
    let (train, test) = data.split_at(n_train);
    if train.is_empty() || test.is_empty() {
        return Err(config_err!("{} samples leave an empty split", data.len()));
    }
    let mut store = ParamStore::new();
    let model = ShellModel::new(variant, &mut store, &mut stream(cfg.seed, 0))?;
    let mut adam = Adam::new(&store, cfg.lr);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut epoch_loss = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut stream3(cfg.seed, 1, epoch as u64));
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch) {
            let mut acc: Vec<Vec<f64>> = Vec::new();
            for &i in chunk {
                let mut rng = stream3(cfg.seed, 2 + epoch as u64, i as u64);
                let (l, g) = sample_gradients(&model, &store, &train[i], cfg.phase_maps, &mut rng)?;
                if !l.is_finite() {
                    return Err(Error::Numeric(format!("shell game loss diverged at epoch {epoch}, sample {i}")));
                }
                total += l;
                accumulate(&mut acc, &g);
            }
            let scale = 1.0 / chunk.len() as f64;
            for g in &mut acc {
                g.iter_mut().for_each(|x| *x *= scale);
            }
            adam.step(&mut store, &acc)?;
        }
        let mean = total / train.len() as f64;
        epoch_loss.push(mean);
        on_epoch(epoch, mean);
    }
    let (per_class, overall) = evaluate(&model, &store, test, cfg)?;
    let params = store.count();
    Ok((ShellReport { variant, seed: cfg.seed, params, per_class, overall, epoch_loss }, store))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn patch_values(f: &[f64], (r, c): (usize, usize)) -> (f64, f64) {
        (f[r * MAP + c], f[PIXELS + r * MAP + c])
    }

    #[test]
    fn class_rules_hold() {
        let data = generate_shellgame(1, 600).unwrap();
        for s in &data {
            let [p1, p2] = s.positions;
            assert!(!overlaps(p1, p2));
            let (a1, b1) = (patch_values(&s.frame1, p1), patch_values(&s.frame1, p2));
            let (a2, b2) = (patch_values(&s.frame2, p1), patch_values(&s.frame2, p2));
            assert!(a1.0 != b1.0 && a1.1 != b1.1, "objects share a feature");
            // same support in both frames
            for i in 0..PIXELS {
                assert_eq!(s.frame1[i] == 0.0, s.frame2[i] == 0.0);
            }
            match s.class {
                NO_SWITCH => assert_eq!(s.frame1, s.frame2),
                FEATURE_SWITCH => {
                    let color_swapped = a2.0 == b1.0 && b2.0 == a1.0 && a2.1 == a1.1 && b2.1 == b1.1;
                    let orient_swapped = a2.1 == b1.1 && b2.1 == a1.1 && a2.0 == a1.0 && b2.0 == b1.0;
                    assert!(color_swapped ^ orient_swapped);
                }
                _ => assert_eq!((a2, b2), (b1, a1)),
            }
        }
    }

    #[test]
    fn patches_are_four_by_four() {
        let s = generate_shellgame(2, 1).unwrap().remove(0);
        let nonzero = s.frame1[..PIXELS].iter().filter(|&&x| x != 0.0).count();
        assert_eq!(nonzero, 2 * PATCH * PATCH);
    }

    #[test]
    fn encoding_is_injective_and_nonzero() {
        let codes: Vec<(u64, u64)> = (0..COLORS)
            .flat_map(|c| (0..ORIENTATIONS).map(move |o| (color_code(c).to_bits(), orientation_code(o).to_bits())))
            .collect();
        let mut dedup = codes.clone();
        dedup.sort();
        dedup.dedup();
        assert_eq!(dedup.len(), CONJUNCTIONS);
        assert!((0..COLORS).all(|c| color_code(c) > 0.0) && (0..ORIENTATIONS).all(|o| orientation_code(o) > 0.0));
    }

    #[test]
    fn balanced_and_deterministic() {
        let data = generate_shellgame(3, 10_000).unwrap();
        for k in 0..3u8 {
            let n = data.iter().filter(|s| s.class == k).count();
            assert!(n.abs_diff(3333) <= 1);
        }
        assert_eq!(generate_shellgame(3, 50).unwrap(), data[..50].to_vec());
        assert_ne!(generate_shellgame(4, 50).unwrap(), data[..50].to_vec());
    }

    fn logits(variant: ShellVariant, stim: &ShellStimulus, seed: u64, phase_seed: u64) -> Vec<f64> {
        let mut store = ParamStore::new();
        let m = ShellModel::new(variant, &mut store, &mut stream(seed, 0)).unwrap();
        let mut t = Tape::new();
        let b = store.bind(&mut t);
        let maps = phase_maps(PhaseMaps::Shared, &mut stream(phase_seed, 0));
        let l = m.forward(&mut t, &b, stim, Some([&maps[0], &maps[1]])).unwrap();
        t.value(l).data().to_vec()
    }

    #[test]
    fn swapping_equal_frames_changes_nothing() {
        let s = generate_shellgame(5, 3).unwrap().remove(0);
        assert_eq!(s.class, NO_SWITCH);
        let mut swapped = s.clone();
        core::mem::swap(&mut swapped.frame1, &mut swapped.frame2);
        for v in ShellVariant::ALL {
            assert_eq!(logits(v, &s, 1, 1), logits(v, &swapped, 1, 1));
        }
    }

    #[test]
    fn complex_output_is_finite_and_depends_on_phases() {
        let s = generate_shellgame(6, 3).unwrap().remove(2);
        let a = logits(ShellVariant::ComplexCvrnn, &s, 1, 1);
        let b = logits(ShellVariant::ComplexCvrnn, &s, 1, 2);
        assert!(a.iter().chain(&b).all(|x| x.is_finite()));
        assert_ne!(a, b);
        // real variants ignore the phase maps
        assert_eq!(logits(ShellVariant::RealRnn, &s, 1, 1), logits(ShellVariant::RealRnn, &s, 1, 2));
    }

    #[test]
    fn complex_variant_requires_phases() {
        let s = generate_shellgame(6, 1).unwrap().remove(0);
        let mut store = ParamStore::new();
        let m = ShellModel::new(ShellVariant::ComplexCvrnn, &mut store, &mut stream(0, 0)).unwrap();
        let mut t = Tape::new();
        let b = store.bind(&mut t);
        assert!(m.forward(&mut t, &b, &s, None).is_err());
    }

    #[test]
    fn phase_map_modes() {
        let [a, b] = phase_maps(PhaseMaps::Shared, &mut stream(0, 0));
        assert_eq!(a, b);
        let [a, b] = phase_maps(PhaseMaps::PerFrame, &mut stream(0, 0));
        assert_ne!(a, b);
        assert!(a.iter().all(|&x| (-PI..PI).contains(&x)));
    }

    #[test]
    fn one_step_decreases_loss_on_a_fixed_batch() {
        let data = generate_shellgame(7, 30).unwrap();
        for v in ShellVariant::ALL {
            let mut store = ParamStore::new();
            let m = ShellModel::new(v, &mut store, &mut stream(1, 0)).unwrap();
            let batch_loss = |s: &ParamStore| -> (f64, Vec<Vec<f64>>) {
                let mut acc = Vec::new();
                let mut total = 0.0;
                for (i, x) in data.iter().enumerate() {
                    let (l, g) = sample_gradients(&m, s, x, PhaseMaps::Shared, &mut stream(9, i as u64)).unwrap();
                    total += l;
                    accumulate(&mut acc, &g);
                }
                (total, acc)
            };
            let (before, g) = batch_loss(&store);
            // plain gradient step; Adam's first step is a sign step and need
            // not descend
            for (p, gp) in store.iter_mut().zip(&g) {
                for (x, d) in p.data.iter_mut().zip(gp) {
                    *x -= (1e-2 * d) as f32;
                }
            }
            let (after, _) = batch_loss(&store);
            assert!(after < before, "{v}: {before} -> {after}");
        }
    }

    #[test]
    fn training_is_deterministic() {
        let data = generate_shellgame(8, 60).unwrap();
        let cfg = ShellTrainConfig { epochs: 2, batch: 8, ..Default::default() };
        let (r1, s1) = train_shellgame(ShellVariant::ComplexCvrnn, &data, &cfg, |_, _| {}).unwrap();
        let (r2, s2) = train_shellgame(ShellVariant::ComplexCvrnn, &data, &cfg, |_, _| {}).unwrap();
        assert_eq!(r1, r2);
        assert_eq!(s1, s2);
    }

    #[test]
    fn variant_names_round_trip() {
        for v in ShellVariant::ALL {
            assert_eq!(v.name().parse::<ShellVariant>().unwrap(), v);
        }
        assert!("spiking".parse::<ShellVariant>().is_err());
    }
}

#[cfg(test)]
mod gradient_tests {
    use super::*;
    use crate::gradcheck;

    #[test]
    fn shell_gradients_match_finite_differences() {
        let data = generate_shellgame(11, 6).unwrap();
        for v in ShellVariant::ALL {
            let mut store = ParamStore::new();
            let m = ShellModel::new(v, &mut store, &mut stream(2, 0)).unwrap();
            let inputs: Vec<RealTensor> = store
                .iter()
                .map(|p| RealTensor::new(p.shape.clone(), p.data.iter().map(|&x| x as f64 + 0.05).collect()).unwrap())
                .collect();
            let check = vec![true; inputs.len()];
            for s in &data {
                let maps = phase_maps(PhaseMaps::Shared, &mut stream(3, 0));
                let r = gradcheck::check(&inputs, &check, 1e-6, |t, vs| {
                    let b = Bound::from_vars(vs.to_vec());
                    let l = m.forward(t, &b, s, Some([&maps[0], &maps[1]]))?;
                    t.cross_entropy(l, s.class as usize)
                })
                .unwrap();
                let err = gradcheck::relative_error(&r.analytic.concat(), &r.numeric.concat());
                assert!(err < 1e-4, "{v}: {err}");
            }
        }
    }
}
