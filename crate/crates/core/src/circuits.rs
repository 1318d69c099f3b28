//! The InT excitatory/inhibitory circuit and its complex-valued attention
//! variant (CV-RNN).

use alloc::format;
use alloc::string::String;
use core::fmt;
use core::str::FromStr;

use rand::Rng;

use crate::error::{config_err, Error, Result};
use crate::math::{self, PI};
use crate::params::{Bound, ParamId, ParamStore};
use crate::tensor::{CVar, RealTensor, Tape, Var, NORM_EPS};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CircuitKind {
    Int,
    CvRnn,
}

impl CircuitKind {
    pub fn name(self) -> &'static str {
        match self {
            CircuitKind::Int => "int",
            CircuitKind::CvRnn => "cvrnn",
        }
    }
}

impl fmt::Display for CircuitKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CircuitKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "int" | "rnn" => Ok(CircuitKind::Int),
            "cvrnn" => Ok(CircuitKind::CvRnn),
            _ => Err(config_err!("unknown circuit {s:?} (expected int or cvrnn)")),
        }
    }
}

/// How the complex hidden state is seeded.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhiInit {
    /// Unit amplitude, uniform random phase, at the first step only.
    RandomUniform,
    /// One of four equidistant phases per mask group of the first frame.
    Segmentation,
    /// A complex 1×1 convolution of the first encoded frame.
    Learnable,
    /// A fresh random state at every step.
    PerTimestepRandom,
    /// Random initialization, trained without the synchrony term.
    NoSynchLossControl,
}

impl PhiInit {
    pub const ALL: [PhiInit; 5] = [
        PhiInit::RandomUniform,
        PhiInit::Segmentation,
        PhiInit::Learnable,
        PhiInit::PerTimestepRandom,
        PhiInit::NoSynchLossControl,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PhiInit::RandomUniform => "random_uniform",
            PhiInit::Segmentation => "segmentation",
            PhiInit::Learnable => "learnable",
            PhiInit::PerTimestepRandom => "per_timestep_random",
            PhiInit::NoSynchLossControl => "no_synch_loss_control",
        }
    }

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(c: u8) -> Option<Self> {
        Self::ALL.get(c as usize).copied()
    }

    pub fn uses_synchrony_loss(self) -> bool {
        self != PhiInit::NoSynchLossControl
    }
}

impl fmt::Display for PhiInit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PhiInit {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let key = s.to_ascii_lowercase().replace('-', "_");
        Self::ALL.iter().copied().find(|m| m.name() == key).ok_or_else(|| config_err!("unknown phi init {s:?}"))
    }
}

/// Axis over which the attention amplitude is normalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormAxis {
    /// Per channel over the spatial map.
    Spatial,
    /// Across channels, for maps with a single spatial position.
    Channel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CircuitConfig {
    pub kind: CircuitKind,
    pub channels: usize,
    /// Kernel of `W_a`, `W_z`.
    pub attn_kernel: usize,
    /// Kernel of the interaction convolutions `W_ei`, `W_ie`.
    pub inter_kernel: usize,
    /// Kernel of the gate convolutions `W_g`, `U_g`, `W_h`, `U_h`.
    pub gate_kernel: usize,
    /// Kernel of the real recurrent kernel acting on φ.
    pub phi_kernel: usize,
    /// Kernel of the phase readout `W_p`; `None` disables the phase map.
    pub phase_kernel: Option<usize>,
    /// Whether the circuit converts its real input with `Wc_z` (false when
    /// the input is already complex).
    pub complex_input_kernel: bool,
    pub phi_init: PhiInit,
    pub norm: NormAxis,
    /// Initial value of γ, β, ν, μ.
    pub init_scalar: f32,
}

impl CircuitConfig {
    pub fn new(kind: CircuitKind, channels: usize) -> Self {
        Self {
            kind,
            channels,
            attn_kernel: 1,
            inter_kernel: 5,
            gate_kernel: 1,
            phi_kernel: 1,
            phase_kernel: Some(1),
            complex_input_kernel: true,
            phi_init: PhiInit::RandomUniform,
            norm: NormAxis::Spatial,
            init_scalar: 0.1,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.channels == 0 {
            return Err(config_err!("circuit needs at least one channel"));
        }
        for (name, k) in [
            ("attn_kernel", self.attn_kernel),
            ("inter_kernel", self.inter_kernel),
            ("gate_kernel", self.gate_kernel),
            ("phi_kernel", self.phi_kernel),
            ("phase_kernel", self.phase_kernel.unwrap_or(1)),
        ] {
            if k % 2 == 0 {
                return Err(config_err!("{name} must be odd, got {k}"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct Conv {
    w: ParamId,
    b: Option<ParamId>,
}

#[derive(Debug, Clone, Copy)]
struct ComplexKernel {
    re: ParamId,
    im: ParamId,
}

#[derive(Debug, Clone)]
struct CvWeights {
    wc_z: Option<ComplexKernel>,
    wc_a: ComplexKernel,
    w_phi: ParamId,
    w_p: Option<ParamId>,
    phi_init: Option<ComplexKernel>,
}

/// Parameter handles of one circuit inside a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct CircuitWeights {
    pub cfg: CircuitConfig,
    attn: Option<(Conv, Conv)>,
    w_ei: Conv,
    w_ie: Conv,
    w_g: Conv,
    u_g: Conv,
    w_h: Conv,
    u_h: Conv,
    gamma: ParamId,
    beta: ParamId,
    nu: ParamId,
    mu: ParamId,
    cv: Option<CvWeights>,
}

fn conv<R: Rng + ?Sized>(
    store: &mut ParamStore,
    name: &str,
    k: usize,
    cin: usize,
    cout: usize,
    bias: bool,
    rng: &mut R,
) -> Result<Conv> {
    let w = store.uniform(&format!("{name}.w"), &[k, k, cin, cout], k * k * cin, rng)?;
    let b = if bias { Some(store.zeros(&format!("{name}.b"), &[cout])?) } else { None };
    Ok(Conv { w, b })
}

fn complex_kernel<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, c: usize, rng: &mut R) -> Result<ComplexKernel> {
    let re = store.uniform(&format!("{name}.re"), &[1, 1, c, c], c, rng)?;
    let im = store.uniform(&format!("{name}.im"), &[1, 1, c, c], c, rng)?;
    Ok(ComplexKernel { re, im })
}

impl CircuitWeights {
    /// Registers every circuit parameter under `prefix`.
    pub fn register<R: Rng + ?Sized>(store: &mut ParamStore, prefix: &str, cfg: CircuitConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let c = cfg.channels;
        let n = |s: &str| format!("{prefix}.{s}");
        // the complex circuit computes its attention from the complex drive
        let attn = if cfg.kind == CircuitKind::Int {
            Some((
                conv(store, &n("w_a"), cfg.attn_kernel, c, c, true, rng)?,
                conv(store, &n("w_z"), cfg.attn_kernel, c, c, true, rng)?,
            ))
        } else {
            None
        };
        let w_ei = conv(store, &n("w_ei"), cfg.inter_kernel, c, c, true, rng)?;
        let w_ie = conv(store, &n("w_ie"), cfg.inter_kernel, c, c, true, rng)?;
        let w_g = conv(store, &n("w_g"), cfg.gate_kernel, c, c, true, rng)?;
        let u_g = conv(store, &n("u_g"), cfg.gate_kernel, c, c, true, rng)?;
        let w_h = conv(store, &n("w_h"), cfg.gate_kernel, c, c, true, rng)?;
        let u_h = conv(store, &n("u_h"), cfg.gate_kernel, c, c, true, rng)?;
        let s = cfg.init_scalar;
        let gamma = store.constant(&n("gamma"), &[c], s)?;
        let beta = store.constant(&n("beta"), &[c], s)?;
        let nu = store.constant(&n("nu"), &[c], s)?;
        let mu = store.constant(&n("mu"), &[c], s)?;
        let cv = if cfg.kind == CircuitKind::CvRnn {
            let wc_z = if cfg.complex_input_kernel { Some(complex_kernel(store, &n("wc_z"), c, rng)?) } else { None };
            let wc_a = complex_kernel(store, &n("wc_a"), c, rng)?;
            let pk = cfg.phi_kernel;
            let w_phi = store.uniform(&n("w_phi"), &[pk, pk, c, c], pk * pk * c, rng)?;
            let w_p = match cfg.phase_kernel {
                Some(k) => Some(store.uniform(&n("w_p"), &[k, k, c, 1], k * k * c, rng)?),
                None => None,
            };
            let phi_init = if cfg.phi_init == PhiInit::Learnable {
                Some(complex_kernel(store, &n("phi_init"), c, rng)?)
            } else {
                None
            };
            Some(CvWeights { wc_z, wc_a, w_phi, w_p, phi_init })
        } else {
            None
        };
        Ok(Self { cfg, attn, w_ei, w_ie, w_g, u_g, w_h, u_h, gamma, beta, nu, mu, cv })
    }

    /// Resolves the parameter handles against a bound store.
    pub fn vars(&self, bound: &Bound) -> CircuitVars {
        let cv = |k: &Conv| ConvVars { w: bound.var(k.w), b: k.b.map(|b| bound.var(b)) };
        let ck = |k: &ComplexKernel| CVar { re: bound.var(k.re), im: bound.var(k.im) };
        CircuitVars {
            attn: self.attn.as_ref().map(|(a, z)| (cv(a), cv(z))),
            w_ei: cv(&self.w_ei),
            w_ie: cv(&self.w_ie),
            w_g: cv(&self.w_g),
            u_g: cv(&self.u_g),
            w_h: cv(&self.w_h),
            u_h: cv(&self.u_h),
            gamma: bound.var(self.gamma),
            beta: bound.var(self.beta),
            nu: bound.var(self.nu),
            mu: bound.var(self.mu),
            cv: self.cv.as_ref().map(|w| CvVars {
                wc_z: w.wc_z.as_ref().map(ck),
                wc_a: ck(&w.wc_a),
                w_phi: bound.var(w.w_phi),
                w_p: w.w_p.map(|p| bound.var(p)),
                phi_init: w.phi_init.as_ref().map(ck),
            }),
            norm: self.cfg.norm,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ConvVars {
    pub w: Var,
    pub b: Option<Var>,
}

impl ConvVars {
    fn apply(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        tape.conv2d(x, self.w, self.b)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CvVars {
    pub wc_z: Option<CVar>,
    pub wc_a: CVar,
    pub w_phi: Var,
    pub w_p: Option<Var>,
    pub phi_init: Option<CVar>,
}

/// Tape handles of a circuit's parameters for one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct CircuitVars {
    /// `W_a`, `W_z` of the real attention.
    pub attn: Option<(ConvVars, ConvVars)>,
    pub w_ei: ConvVars,
    pub w_ie: ConvVars,
    pub w_g: ConvVars,
    pub u_g: ConvVars,
    pub w_h: ConvVars,
    pub u_h: ConvVars,
    pub gamma: Var,
    pub beta: Var,
    pub nu: Var,
    pub mu: Var,
    pub cv: Option<CvVars>,
    pub norm: NormAxis,
}

impl CircuitVars {
    fn cv(&self) -> Result<&CvVars> {
        self.cv.as_ref().ok_or_else(|| config_err!("complex attention on a real-valued circuit"))
    }
}

/// Recurrent state carried between steps.
#[derive(Debug, Clone, Copy)]
pub struct CircuitState {
    pub i: Var,
    pub e: Var,
}

impl CircuitState {
    pub fn zeros(tape: &mut Tape, shape: &[usize]) -> Self {
        let i = tape.constant(RealTensor::zeros(shape));
        let e = tape.constant(RealTensor::zeros(shape));
        Self { i, e }
    }
}

/// `a = σ(W_a * e_prev + W_z * z)`.
pub fn int_attention(tape: &mut Tape, z: Var, e_prev: Var, v: &CircuitVars) -> Result<Var> {
    let (w_a, w_z) = v.attn.ok_or_else(|| config_err!("real attention on a complex circuit"))?;
    let ae = w_a.apply(tape, e_prev)?;
    let az = w_z.apply(tape, z)?;
    let s = tape.add(ae, az)?;
    Ok(tape.sigmoid(s))
}

#[derive(Debug, Clone, Copy)]
pub struct CvAttention {
    pub a: Var,
    pub phi: CVar,
    /// `[1, H, W]` phase map, when the circuit has a phase readout.
    pub theta: Option<Var>,
}

fn normalize(tape: &mut Tape, x: Var, axis: NormAxis) -> Result<Var> {
    match axis {
        NormAxis::Spatial => tape.instance_norm(x, NORM_EPS),
        NormAxis::Channel => {
            let shape = tape.shape(x).to_vec();
            let n: usize = shape.iter().product();
            let flat = tape.reshape(x, &[1, n])?;
            let y = tape.instance_norm(flat, NORM_EPS)?;
            tape.reshape(y, &shape)
        }
    }
}

/// Complex attention given an already complex feed-forward drive `zc`:
/// `φ = W_φ * (zc + φ_prev)`, `a = σ(Norm(|zc + Wc_a * e_prev + φ|))`,
/// `θ = arg(W_p * φ)`.
pub fn cv_attention_complex(tape: &mut Tape, zc: CVar, e_prev: Var, phi_prev: CVar, v: &CircuitVars) -> Result<CvAttention> {
    let cv = *v.cv()?;
    let ec = tape.complex_from_real(e_prev, cv.wc_a)?;
    let drive = tape.cadd(zc, phi_prev)?;
    let phi = tape.real_on_complex(drive, cv.w_phi)?;
    let s = tape.cadd(zc, ec)?;
    let s = tape.cadd(s, phi)?;
    let amp = tape.magnitude(s)?;
    let n = normalize(tape, amp, v.norm)?;
    let a = tape.sigmoid(n);
    let theta = match cv.w_p {
        Some(wp) => {
            let proj = tape.real_on_complex(phi, wp)?;
            Some(tape.arg(proj)?)
        }
        None => None,
    };
    Ok(CvAttention { a, phi, theta })
}

/// Complex attention on a real input: `zc = Wc_z * z`, then
/// [`cv_attention_complex`].
pub fn cv_attention(tape: &mut Tape, z: Var, e_prev: Var, phi_prev: CVar, v: &CircuitVars) -> Result<CvAttention> {
    let wc_z = v.cv()?.wc_z.ok_or_else(|| config_err!("circuit was built without Wc_z"))?;
    let zc = tape.complex_from_real(z, wc_z)?;
    cv_attention_complex(tape, zc, e_prev, phi_prev, v)
}

/// Intermediate values of one [`int_step`].
#[derive(Debug, Clone, Copy)]
pub struct StepInternals {
    pub g: Var,
    pub h: Var,
    pub i_cand: Var,
    pub e_cand: Var,
}

/// One excitatory/inhibitory update given the attention map `a`.
pub fn int_step(tape: &mut Tape, z: Var, state: CircuitState, a: Var, v: &CircuitVars) -> Result<(CircuitState, StepInternals)> {
    let CircuitState { i: i_prev, e: e_prev } = state;

    let gi = v.w_g.apply(tape, i_prev)?;
    let gz = v.u_g.apply(tape, z)?;
    let g = tape.add(gi, gz)?;
    let g = tape.sigmoid(g);

    // m = W_ei * (e_prev ⊙ a)
    let ea = tape.mul(e_prev, a)?;
    let m = v.w_ei.apply(tape, ea)?;
    // (γ i_prev a + β) m
    let ia = tape.mul(i_prev, a)?;
    let gia = tape.channel_scale(ia, v.gamma)?;
    let coef = tape.channel_shift(gia, v.beta)?;
    let inhib = tape.mul(coef, m)?;
    let i_arg = tape.sub(z, inhib)?;
    let i_arg = tape.sub(i_arg, i_prev)?;
    let i_cand = tape.relu(i_arg);
    let i = blend(tape, g, i_prev, i_cand)?;

    let he = v.w_h.apply(tape, e_prev)?;
    let hi = v.u_h.apply(tape, i)?;
    let h = tape.add(he, hi)?;
    let h = tape.sigmoid(h);

    // e_cand = [i + (ν i + μ) n − e_prev]_+
    let n = v.w_ie.apply(tape, i)?;
    let ni = tape.channel_scale(i, v.nu)?;
    let coef = tape.channel_shift(ni, v.mu)?;
    let exc = tape.mul(coef, n)?;
    let e_arg = tape.add(i, exc)?;
    let e_arg = tape.sub(e_arg, e_prev)?;
    let e_cand = tape.relu(e_arg);
    let e = blend(tape, h, e_prev, e_cand)?;

    Ok((CircuitState { i, e }, StepInternals { g, h, i_cand, e_cand }))
}

/// `gate · prev + (1 − gate) · cand`.
fn blend(tape: &mut Tape, gate: Var, prev: Var, cand: Var) -> Result<Var> {
    let keep = tape.mul(gate, prev)?;
    let inv = tape.one_minus(gate);
    let fresh = tape.mul(inv, cand)?;
    tape.add(keep, fresh)
}

/// Unit-amplitude complex map with independent uniform phases.
pub fn random_phi<R: Rng + ?Sized>(tape: &mut Tape, shape: &[usize], rng: &mut R) -> CVar {
    let n: usize = shape.iter().product();
    let phases: alloc::vec::Vec<f64> = (0..n).map(|_| rng.random_range(-PI..PI)).collect();
    let re = RealTensor::from_fn(shape, |i| math::cos(phases[i]));
    let im = RealTensor::from_fn(shape, |i| math::sin(phases[i]));
    CVar { re: tape.constant(re), im: tape.constant(im) }
}

/// Phase assigned to mask group `id` by the segmentation initialization.
pub fn segmentation_phase(id: u8) -> f64 {
    id as f64 * PI / 2.0
}

/// Initial complex state for the first step. `z0` is the encoded first frame
/// `[c, H, W]`; `mask0` its group mask (needed for segmentation).
pub fn initial_phi<R: Rng + ?Sized>(
    tape: &mut Tape,
    mode: PhiInit,
    z0: Var,
    mask0: Option<&[u8]>,
    v: &CircuitVars,
    rng: &mut R,
) -> Result<CVar> {
    let shape = tape.shape(z0).to_vec();
    match mode {
        PhiInit::RandomUniform | PhiInit::PerTimestepRandom | PhiInit::NoSynchLossControl => {
            Ok(random_phi(tape, &shape, rng))
        }
        PhiInit::Segmentation => {
            let mask = mask0.ok_or_else(|| config_err!("segmentation phase init needs the first-frame mask"))?;
            let hw: usize = shape[1..].iter().product();
            if mask.len() != hw {
                return Err(config_err!("mask of {} pixels for a {:?} map", mask.len(), shape));
            }
            let re = RealTensor::from_fn(&shape, |i| math::cos(segmentation_phase(mask[i % hw])));
            let im = RealTensor::from_fn(&shape, |i| math::sin(segmentation_phase(mask[i % hw])));
            Ok(CVar { re: tape.constant(re), im: tape.constant(im) })
        }
        PhiInit::Learnable => {
            let k = v.cv()?.phi_init.ok_or_else(|| config_err!("learnable phase init has no kernel"))?;
            tape.complex_from_real(z0, k)
        }
    }
}

pub fn describe(cfg: &CircuitConfig) -> String {
    format!(
        "{} c={} attn={} inter={} gate={} phi={} phase={:?} init={}",
        cfg.kind, cfg.channels, cfg.attn_kernel, cfg.inter_kernel, cfg.gate_kernel, cfg.phi_kernel, cfg.phase_kernel, cfg.phi_init
    )
}
