//! Physical weather image formation: particle compositing for rain and snow,
//! exponential attenuation with airlight for fog.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::image::Image;
use crate::rng;

/// Rain particle mask and the streak appearance map composited where it is set.
#[derive(Clone, Debug, PartialEq)]
pub struct RainField {
    pub mask: Vec<f64>,
    pub streaks: Image,
}

/// Snow particle mask and its chromatic aberration map.
#[derive(Clone, Debug, PartialEq)]
pub struct SnowField {
    pub mask: Vec<f64>,
    pub aberration: Image,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FogParams {
    /// Attenuation coefficient per meter.
    pub beta: f64,
    pub airlight: [f64; 3],
}

impl FogParams {
    pub fn new(beta: f64, airlight: [f64; 3]) -> Result<Self> {
        if !(beta >= 0.0) {
            return Err(invalid!("fog beta must be non-negative, got {beta}"));
        }
        if airlight.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return Err(invalid!("airlight must lie in [0, 1], got {airlight:?}"));
        }
        Ok(Self { beta, airlight })
    }
}

/// Mean particle-mask coverage reached at intensity 1.
pub const MAX_COVERAGE: f64 = 0.25;

fn composite(j: &Image, mask: &[f64], particles: &Image, what: &str) -> Result<Image> {
    if !j.same_shape(particles) || mask.len() != j.height() * j.width() {
        return Err(invalid!(
            "{what}: image {}×{}, particle map {}×{}, mask of {} pixels",
            j.height(),
            j.width(),
            particles.height(),
            particles.width(),
            mask.len()
        ));
    }
    let mut out = j.clone();
    for (i, (px, p)) in out
        .data_mut()
        .chunks_exact_mut(3)
        .zip(particles.data().chunks_exact(3))
        .enumerate()
    {
        let m = mask[i];
        for c in 0..3 {
            px[c] = px[c] * (1.0 - m) + p[c] * m;
        }
    }
    Ok(out)
}

/// `J·(1 − M_r) + R·M_r` per pixel and channel.
pub fn apply_rain(j: &Image, field: &RainField) -> Result<Image> {
    composite(j, &field.mask, &field.streaks, "apply_rain")
}

/// `J·(1 − M_s) + S·M_s` per pixel and channel.
pub fn apply_snow(j: &Image, field: &SnowField) -> Result<Image> {
    composite(j, &field.mask, &field.aberration, "apply_snow")
}

/// `J·e^(−β·d) + L∞·(1 − e^(−β·d))` per pixel and channel.
pub fn apply_fog(j: &Image, depth: &[f64], fog: &FogParams) -> Result<Image> {
    if !(fog.beta >= 0.0) {
        return Err(invalid!("apply_fog: negative beta {}", fog.beta));
    }
    if depth.len() != j.height() * j.width() {
        return Err(invalid!(
            "apply_fog: image {}×{} but depth has {} pixels",
            j.height(),
            j.width(),
            depth.len()
        ));
    }
    if let Some(d) = depth.iter().find(|d| !(**d >= 0.0)) {
        return Err(invalid!("apply_fog: negative depth {d}"));
    }
    let mut out = j.clone();
    for (px, &d) in out.data_mut().chunks_exact_mut(3).zip(depth) {
        let t = (-fog.beta * d).exp();
        for c in 0..3 {
            px[c] = px[c] * t + fog.airlight[c] * (1.0 - t);
        }
    }
    Ok(out)
}

fn check_intensity(intensity: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&intensity) {
        return Err(invalid!("intensity must be in [0, 1], got {intensity}"));
    }
    Ok(())
}

/// Number of particles drawn for `intensity`, out of a fixed seeded pool.
///
/// Particles are taken as a prefix of the pool, so with a fixed seed the mask
/// at a higher intensity dominates the mask at a lower one pointwise.
fn particle_count(intensity: f64, pixels: usize, mean_area: f64) -> usize {
    (intensity * MAX_COVERAGE * pixels as f64 / mean_area).round() as usize
}

fn box_blur(img: &Image) -> Image {
    let (h, w) = (img.height(), img.width());
    let mut out = img.clone();
    for y in 0..h {
        for x in 0..w {
            let mut acc = [0.0; 3];
            let mut n = 0.0;
            for yy in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                for xx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                    let p = img.pixel(yy, xx);
                    acc.iter_mut().zip(p).for_each(|(a, v)| *a += v);
                    n += 1.0;
                }
            }
            out.set_pixel(y, x, acc.map(|a| a / n));
        }
    }
    out
}

/// Seeded rain: oriented soft line segments sharing a global angle (with
/// per-streak jitter) and a near-white, slightly blurred streak map.
pub fn gen_rain_field(seed: u64, intensity: f64, height: usize, width: usize) -> Result<RainField> {
    check_intensity(intensity)?;
    let (h, w) = (height, width);
    let mut rng = rng::stream(seed, "rain");
    let angle = rng.gen_range(-0.35..0.35);
    let mean_len = 0.14 * h as f64;
    // soft one-pixel profile times mean opacity
    let mean_area = mean_len * 1.0 * 0.75;
    let count = particle_count(intensity, h * w, mean_area);
    let mut mask = vec![0.0; h * w];
    for _ in 0..count {
        let theta: f64 = angle + rng.gen_range(-0.08..0.08);
        let len = rng.gen_range(0.08..0.2) * h as f64;
        let alpha: f64 = rng.gen_range(0.6..0.9);
        let (cx, cy) = (rng.gen_range(0.0..w as f64), rng.gen_range(0.0..h as f64));
        let (dx, dy) = (theta.sin() * len / 2.0, theta.cos() * len / 2.0);
        let (ax, ay, bx, by) = (cx - dx, cy - dy, cx + dx, cy + dy);
        let (x0, x1) = (ax.min(bx).floor() - 1.0, ax.max(bx).ceil() + 1.0);
        let (y0, y1) = (ay.min(by).floor() - 1.0, ay.max(by).ceil() + 1.0);
        let (vx, vy) = (bx - ax, by - ay);
        let vv = vx * vx + vy * vy;
        for y in (y0.max(0.0) as usize)..=(y1.min(h as f64 - 1.0).max(0.0) as usize) {
            for x in (x0.max(0.0) as usize)..=(x1.min(w as f64 - 1.0).max(0.0) as usize) {
                let (px, py) = (x as f64 - ax, y as f64 - ay);
                let t = ((px * vx + py * vy) / vv).clamp(0.0, 1.0);
                let (ex, ey) = (px - t * vx, py - t * vy);
                let dist = (ex * ex + ey * ey).sqrt();
                let soft = (1.0 - dist / 0.9).clamp(0.0, 1.0);
                let m = &mut mask[y * w + x];
                *m = f64::max(*m, alpha * soft);
            }
        }
    }
    let mut streaks = Image::filled(h, w, [0.0; 3]);
    for y in 0..h {
        for x in 0..w {
            let v = rng.gen_range(0.82..0.95);
            streaks.set_pixel(y, x, [v, v, (v + 0.03).min(1.0)]);
        }
    }
    Ok(RainField {
        mask,
        streaks: box_blur(&streaks),
    })
}

/// Seeded snow: soft disks of varying radius over a white aberration map with
/// small per-channel offsets.
pub fn gen_snow_field(seed: u64, intensity: f64, height: usize, width: usize) -> Result<SnowField> {
    check_intensity(intensity)?;
    let (h, w) = (height, width);
    let mut rng = rng::stream(seed, "snow");
    // mean of π(r+0.25)² for r ~ U(0.6, 2.2), times mean opacity
    let mean_area = std::f64::consts::PI * 3.0 * 0.8;
    let count = particle_count(intensity, h * w, mean_area);
    let mut mask = vec![0.0; h * w];
    for _ in 0..count {
        let r = rng.gen_range(0.6..2.2);
        let alpha: f64 = rng.gen_range(0.6..1.0);
        let (cx, cy) = (rng.gen_range(0.0..w as f64), rng.gen_range(0.0..h as f64));
        let y0 = (cy - r - 1.0).max(0.0) as usize;
        let y1 = ((cy + r + 1.0) as usize).min(h - 1);
        let x0 = (cx - r - 1.0).max(0.0) as usize;
        let x1 = ((cx + r + 1.0) as usize).min(w - 1);
        for y in y0..=y1 {
            for x in x0..=x1 {
                let d = ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)).sqrt();
                let soft = (r + 0.5 - d).clamp(0.0, 1.0);
                let m = &mut mask[y * w + x];
                *m = f64::max(*m, alpha * soft);
            }
        }
    }
    let offsets: [f64; 3] = std::array::from_fn(|_| rng.gen_range(-0.04..0.04));
    let mut aberration = Image::filled(h, w, [0.0; 3]);
    for y in 0..h {
        for x in 0..w {
            let base = rng.gen_range(0.92..0.97);
            let px = std::array::from_fn(|c| (base + offsets[c]).clamp(0.0, 1.0));
            aberration.set_pixel(y, x, px);
        }
    }
    Ok(SnowField { mask, aberration })
}
