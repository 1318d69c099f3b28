//! Phase map image sequences on disk: `viz/<video-id>/phi_<t>.png`,
//! `theta_<t>.png` and `agreement.csv`.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use synchrony_core::featuretracker::{SIZE, VideoSample};
use synchrony_core::viz::{agreement_series, render_phi, render_theta};

use crate::harness::Runner;
use crate::tables::write_file;

/// PNG bytes of an 8-bit RGB or RGBA image.
pub fn encode_png(pixels: &[u8], w: usize, h: usize, alpha: bool) -> Result<Vec<u8>> {
    let channels = if alpha { 4 } else { 3 };
    if pixels.len() != w * h * channels {
        bail!("{} bytes for a {w}x{h} image with {channels} channels", pixels.len());
    }
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, w as u32, h as u32);
        enc.set_color(if alpha { png::ColorType::Rgba } else { png::ColorType::Rgb });
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header()?;
        writer.write_image_data(pixels)?;
    }
    Ok(out)
}

/// Renders every step of one video into `<out>/viz/<video_id>/`. Returns the
/// directory and the per-step agreement.
pub fn write_phase_maps(run: &Runner, sample: &VideoSample, video_id: u64, seed: u64, out: &Path) -> Result<(PathBuf, Vec<Option<f64>>)> {
    let p = run.predict(sample, seed, video_id, true)?;
    if p.thetas.is_empty() {
        bail!("the {} circuit has no phase maps", run.model.kind().name());
    }
    let dir = out.join("viz").join(video_id.to_string());
    let c = run.model.cfg.circuit.channels;
    for (t, theta) in p.thetas.iter().enumerate() {
        let img = render_theta(theta, SIZE, SIZE)?;
        write_file(&dir.join(format!("theta_{t}.png")), &encode_png(&img, SIZE, SIZE, false)?)?;
    }
    for (t, (re, im)) in p.phis.iter().enumerate() {
        let img = render_phi(re, im, c, SIZE, SIZE)?;
        write_file(&dir.join(format!("phi_{t}.png")), &encode_png(&img, SIZE, SIZE, true)?)?;
    }
    let agreement = agreement_series(&p.thetas, &run.masks(sample))?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["t", "frame", "agreement"])?;
    for (t, (a, f)) in agreement.iter().zip(&run.frames).enumerate() {
        w.write_record([t.to_string(), f.to_string(), a.map(|x| format!("{x:?}")).unwrap_or_default()])?;
    }
    write_file(&dir.join("agreement.csv"), &w.into_inner().context("flushing agreement table")?)?;
    Ok((dir, agreement))
}
