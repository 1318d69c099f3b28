//! Raw numeric loops behind the tape ops.

use alloc::vec;
use alloc::vec::Vec;

#[inline]
fn valid_range(offset: isize, extent: usize) -> (usize, usize) {
    // output positions p with 0 <= p + offset < extent
    let lo = if offset < 0 { (-offset) as usize } else { 0 };
    let hi = if offset > 0 { extent.saturating_sub(offset as usize) } else { extent };
    (lo.min(hi), hi)
}

/// Zero-padded "same" cross-correlation.
///
/// `x` is `[cin, h, w]`, `weight` is `[k, k, cin, cout]`, the result is
/// `[cout, h, w]`.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_forward(
    x: &[f64],
    cin: usize,
    h: usize,
    w: usize,
    weight: &[f64],
    k: usize,
    cout: usize,
    bias: Option<&[f64]>,
) -> Vec<f64> {
    let hw = h * w;
    let mut out = vec![0.0; cout * hw];
    if let Some(b) = bias {
        for (co, chunk) in out.chunks_mut(hw).enumerate() {
            chunk.fill(b[co]);
        }
    }
    let p = (k / 2) as isize;
    for ky in 0..k {
        let dy = ky as isize - p;
        let (y0, y1) = valid_range(dy, h);
        for kx in 0..k {
            let dx = kx as isize - p;
            let (x0, x1) = valid_range(dx, w);
            if x0 >= x1 || y0 >= y1 {
                continue;
            }
            for ci in 0..cin {
                let xc = &x[ci * hw..(ci + 1) * hw];
                let wbase = ((ky * k + kx) * cin + ci) * cout;
                for co in 0..cout {
                    let wv = weight[wbase + co];
                    if wv == 0.0 {
                        continue;
                    }
                    let oc = &mut out[co * hw..(co + 1) * hw];
                    for y in y0..y1 {
                        let sy = (y as isize + dy) as usize;
                        let orow = &mut oc[y * w + x0..y * w + x1];
                        let sx0 = (x0 as isize + dx) as usize;
                        let irow = &xc[sy * w + sx0..sy * w + sx0 + (x1 - x0)];
                        for (o, &i) in orow.iter_mut().zip(irow) {
                            *o += wv * i;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Gradients of [`conv2d_forward`] with respect to input, weight and bias.
/// Each requested buffer is accumulated into (not overwritten).
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward(
    x: &[f64],
    cin: usize,
    h: usize,
    w: usize,
    weight: &[f64],
    k: usize,
    cout: usize,
    grad_out: &[f64],
    mut grad_x: Option<&mut [f64]>,
    mut grad_w: Option<&mut [f64]>,
    grad_b: Option<&mut [f64]>,
) {
    let hw = h * w;
    if let Some(gb) = grad_b {
        for co in 0..cout {
            gb[co] += grad_out[co * hw..(co + 1) * hw].iter().sum::<f64>();
        }
    }
    let p = (k / 2) as isize;
    for ky in 0..k {
        let dy = ky as isize - p;
        let (y0, y1) = valid_range(dy, h);
        for kx in 0..k {
            let dx = kx as isize - p;
            let (x0, x1) = valid_range(dx, w);
            if x0 >= x1 || y0 >= y1 {
                continue;
            }
            let sx0 = (x0 as isize + dx) as usize;
            let len = x1 - x0;
            for ci in 0..cin {
                let wbase = ((ky * k + kx) * cin + ci) * cout;
                for co in 0..cout {
                    let go = &grad_out[co * hw..(co + 1) * hw];
                    if let Some(gw) = grad_w.as_deref_mut() {
                        let xc = &x[ci * hw..(ci + 1) * hw];
                        let mut acc = 0.0;
                        for y in y0..y1 {
                            let sy = (y as isize + dy) as usize;
                            let grow = &go[y * w + x0..y * w + x1];
                            let irow = &xc[sy * w + sx0..sy * w + sx0 + len];
                            acc += grow.iter().zip(irow).map(|(a, b)| a * b).sum::<f64>();
                        }
                        gw[wbase + co] += acc;
                    }
                    if let Some(gx) = grad_x.as_deref_mut() {
                        let wv = weight[wbase + co];
                        if wv == 0.0 {
                            continue;
                        }
                        let gxc = &mut gx[ci * hw..(ci + 1) * hw];
                        for y in y0..y1 {
                            let sy = (y as isize + dy) as usize;
                            let grow = &go[y * w + x0..y * w + x1];
                            let xrow = &mut gxc[sy * w + sx0..sy * w + sx0 + len];
                            for (o, &g) in xrow.iter_mut().zip(grow) {
                                *o += wv * g;
                            }
                        }
                    }
                }
            }
        }
    }
}
