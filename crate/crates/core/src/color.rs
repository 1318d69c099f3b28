//! HSV to RGB conversion.

use crate::math;

/// Standard hexcone HSV → RGB, all components in `[0, 1]`. Hue wraps.
pub fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h = h - math::floor(h);
    let h6 = h * 6.0;
    let sector = math::floor(h6);
    let f = h6 - sector;
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match sector as u32 % 6 {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

/// [`hsv_to_rgb`] quantized to bytes.
pub fn hsv_to_rgb8(h: f64, s: f64, v: f64) -> [u8; 3] {
    let c = hsv_to_rgb(h, s, v);
    [to_u8(c[0]), to_u8(c[1]), to_u8(c[2])]
}

fn to_u8(x: f64) -> u8 {
    math::round(x.clamp(0.0, 1.0) * 255.0) as u8
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn primaries() {
        assert_eq!(hsv_to_rgb8(0.0, 1.0, 1.0), [255, 0, 0]);
        assert_eq!(hsv_to_rgb8(1.0 / 3.0, 1.0, 1.0), [0, 255, 0]);
        assert_eq!(hsv_to_rgb8(2.0 / 3.0, 1.0, 1.0), [0, 0, 255]);
        assert_eq!(hsv_to_rgb8(0.5, 1.0, 1.0), [0, 255, 255]);
        assert_eq!(hsv_to_rgb8(1.0, 1.0, 1.0), [255, 0, 0]);
        assert_eq!(hsv_to_rgb8(0.3, 0.0, 1.0), [255, 255, 255]);
        assert_eq!(hsv_to_rgb8(0.3, 1.0, 0.0), [0, 0, 0]);
    }

    #[test]
    fn saturated_colors_have_a_full_channel() {
        for i in 0..100 {
            let c = hsv_to_rgb(i as f64 / 100.0, 1.0, 1.0);
            let max = c.iter().cloned().fold(0.0, f64::max);
            let min = c.iter().cloned().fold(1.0, f64::min);
            assert!((max - 1.0).abs() < 1e-12 && min.abs() < 1e-12);
        }
    }
}
