//! Complex-valued layers expressed as pairs of real ops, so reverse mode is
//! plain real autodiff over (re, im).

use super::{CVar, Tape, Var};
use crate::error::{config_err, shape_err, Result};

/// Relative amplitude difference below which pooled elements tie.
pub const AMPLITUDE_TIE: f64 = 1e-9;

impl Tape {
    /// Complex weights on a real activation:
    /// `Re(W) * x + j Im(W) * x`, i.e. amplitude `|W| * x` carried at the
    /// kernel's phase. `wc` is a `[1, 1, C_in, C_out]` complex kernel.
    pub fn complex_from_real(&mut self, x: Var, wc: CVar) -> Result<CVar> {
        let ws = self.shape(wc.re).to_vec();
        if ws != self.shape(wc.im) {
            return Err(shape_err!("complex kernel parts differ: {:?} vs {:?}", ws, self.shape(wc.im)));
        }
        if ws.len() != 4 || ws[0] != 1 || ws[1] != 1 {
            return Err(config_err!("complex_from_real needs a 1x1 kernel, got {:?}", ws));
        }
        let re = self.conv2d(x, wc.re, None)?;
        let im = self.conv2d(x, wc.im, None)?;
        Ok(CVar { re, im })
    }

    /// Real weights on a complex activation: `W * Re(z) + j W * Im(z)`.
    /// A positive scalar 1x1 kernel rescales the amplitude and keeps the phase.
    pub fn real_on_complex(&mut self, z: CVar, w: Var) -> Result<CVar> {
        if self.shape(z.re) != self.shape(z.im) {
            return Err(shape_err!("complex parts differ: {:?} vs {:?}", self.shape(z.re), self.shape(z.im)));
        }
        let re = self.conv2d(z.re, w, None)?;
        let im = self.conv2d(z.im, w, None)?;
        Ok(CVar { re, im })
    }

    pub fn cadd(&mut self, a: CVar, b: CVar) -> Result<CVar> {
        Ok(CVar { re: self.add(a.re, b.re)?, im: self.add(a.im, b.im)? })
    }

    pub fn creshape(&mut self, z: CVar, shape: &[usize]) -> Result<CVar> {
        Ok(CVar { re: self.reshape(z.re, shape)?, im: self.reshape(z.im, shape)? })
    }

    /// Max pooling on the amplitude that carries the phase of the winning
    /// element: `[C, ...]` → `[C]` complex. Amplitudes equal up to rounding
    /// are ties, won by the first element.
    pub fn complex_max_pool_global(&mut self, z: CVar) -> Result<CVar> {
        let amp = self.complex_value(z).amplitude();
        let idx = super::argmax_per_channel_within(&amp, AMPLITUDE_TIE);
        let re = self.gather_per_channel(z.re, idx.clone())?;
        let im = self.gather_per_channel(z.im, idx)?;
        Ok(CVar { re, im })
    }
}
