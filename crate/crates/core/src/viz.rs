//! Phase maps as images: hue encodes phase, opacity encodes amplitude.

use alloc::vec::Vec;

use crate::color::hsv_to_rgb8;
use crate::error::{shape_err, Result};
use crate::losses::LOSS_GROUPS;
use crate::math::{self, TAU};
use crate::metrics::segmentation_agreement;

/// Hue in `[0, 1)` for a phase in radians; one full turn maps onto the whole
/// hue circle.
pub fn phase_hue(theta: f64) -> f64 {
    let h = theta / TAU;
    let h = h - math::floor(h);
    if h >= 1.0 { 0.0 } else { h }
}

/// Opaque RGB image (`h·w·3` bytes) of a phase map.
pub fn render_theta(theta: &[f64], h: usize, w: usize) -> Result<Vec<u8>> {
    if theta.len() != h * w {
        return Err(shape_err!("phase map has {} values for a {h}x{w} image", theta.len()));
    }
    Ok(theta.iter().flat_map(|&t| hsv_to_rgb8(phase_hue(t), 1.0, 1.0)).collect())
}

/// RGBA image (`h·w·4` bytes) of a `[C, H, W]` complex state: the hue is the
/// phase of the channel mean, the alpha its min-max normalized amplitude.
/// A uniform nonzero amplitude is fully opaque, an all-zero state fully
/// transparent.
pub fn render_phi(re: &[f64], im: &[f64], c: usize, h: usize, w: usize) -> Result<Vec<u8>> {
    let n = h * w;
    if re.len() != c * n || im.len() != c * n || c == 0 {
        return Err(shape_err!("complex state of {}/{} values for [{c}, {h}, {w}]", re.len(), im.len()));
    }
    let mean: Vec<(f64, f64)> = (0..n)
        .map(|p| {
            let (mut a, mut b) = (0.0, 0.0);
            for ch in 0..c {
                a += re[ch * n + p];
                b += im[ch * n + p];
            }
            (a / c as f64, b / c as f64)
        })
        .collect();
    let amp: Vec<f64> = mean.iter().map(|&(a, b)| math::hypot(a, b)).collect();
    let lo = amp.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = amp.iter().cloned().fold(0.0, f64::max);
    let alpha = |x: f64| -> u8 {
        if hi == 0.0 {
            0
        } else if hi - lo <= hi * 1e-12 {
            255
        } else {
            math::round((x - lo) / (hi - lo) * 255.0) as u8
        }
    };
    let mut out = Vec::with_capacity(n * 4);
    for (&(a, b), &m) in mean.iter().zip(&amp) {
        let [r, g, bl] = hsv_to_rgb8(phase_hue(math::atan2(b, a)), 1.0, 1.0);
        out.extend([r, g, bl, alpha(m)]);
    }
    Ok(out)
}

/// Segmentation agreement of each step's phase map against its mask;
/// `None` where fewer than two groups are present.
pub fn agreement_series(thetas: &[Vec<f64>], masks: &[&[u8]]) -> Result<Vec<Option<f64>>> {
    if thetas.len() != masks.len() {
        return Err(shape_err!("{} phase maps but {} masks", thetas.len(), masks.len()));
    }
    thetas
        .iter()
        .zip(masks)
        .map(|(t, m)| match segmentation_agreement(t, m, &LOSS_GROUPS) {
            Ok(v) => Ok(Some(v)),
            Err(crate::Error::Undefined(_)) => Ok(None),
            Err(e) => Err(e),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::color::hsv_to_rgb;
    use crate::math::PI;
    use alloc::vec;
    use proptest::prelude::*;

    #[test]
    fn hue_endpoints() {
        assert_eq!(phase_hue(0.0), 0.0);
        assert!((phase_hue(PI) - 0.5).abs() < 1e-15);
        assert!((phase_hue(-PI / 2.0) - 0.75).abs() < 1e-15);
        assert!((phase_hue(TAU) - 0.0).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn hue_is_injective_on_the_principal_range(a in -PI..PI, b in -PI..PI) {
            prop_assume!((a - b).abs() > 1e-9);
            prop_assert!(phase_hue(a) != phase_hue(b));
        }

        #[test]
        fn hue_is_periodic(a in -PI..PI, k in -3i32..3) {
            let h = phase_hue(a + k as f64 * TAU);
            let d = (h - phase_hue(a)).abs();
            prop_assert!(d < 1e-9 || (1.0 - d) < 1e-9);
        }
    }

    #[test]
    fn theta_pixels_use_the_hue_wheel() {
        let img = render_theta(&[0.0, 2.0 * PI / 3.0, -2.0 * PI / 3.0], 1, 3).unwrap();
        assert_eq!(img, vec![255, 0, 0, 0, 255, 0, 0, 0, 255]);
        assert!(render_theta(&[0.0; 3], 2, 2).is_err());
    }

    #[test]
    fn phi_alpha_follows_amplitude() {
        // one channel, amplitudes 0, 1, 2 at phase 0
        let img = render_phi(&[0.0, 1.0, 2.0], &[0.0; 3], 1, 1, 3).unwrap();
        assert_eq!([img[3], img[7], img[11]], [0, 128, 255]);
        let uniform = render_phi(&[0.0; 4], &[1.0; 4], 1, 2, 2).unwrap();
        assert!(uniform.chunks(4).all(|p| p[3] == 255));
        let c = hsv_to_rgb(0.25, 1.0, 1.0);
        assert_eq!(uniform[1], math::round(c[1] * 255.0) as u8);
        let zero = render_phi(&[0.0; 4], &[0.0; 4], 2, 1, 2).unwrap();
        assert!(zero.chunks(4).all(|p| p[3] == 0));
    }

    #[test]
    fn phi_averages_channels_as_complex_numbers() {
        // opposite phases cancel at the first pixel
        let re = [1.0, 1.0, -1.0, 1.0];
        let im = [0.0; 4];
        let img = render_phi(&re, &im, 2, 1, 2).unwrap();
        assert_eq!(img[3], 0);
        assert_eq!(img[7], 255);
    }

    #[test]
    fn agreement_per_step() {
        let mask = vec![0u8, 0, 1, 1];
        let single = vec![1u8; 4];
        let thetas = vec![vec![0.0, 0.0, PI, PI], vec![0.0; 4]];
        let s = agreement_series(&thetas, &[&mask, &single]).unwrap();
        assert_eq!(s, vec![Some(1.0), None]);
        assert!(agreement_series(&thetas, &[&mask]).is_err());
    }
}
