use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Result};
use crate::image::{Image, LabelMap};
use crate::rng;

/// Class registry. Sky and terrain come first so every class count ≥ 2
/// has both; object classes follow in the order they become available.
pub const CLASS_NAMES: [&str; 10] = [
    "sky",
    "terrain",
    "tree",
    "structure",
    "building",
    "stone",
    "road",
    "terrain-snow",
    "terrain-other",
    "background",
];

pub const SKY: u8 = 0;
pub const TERRAIN: u8 = 1;
pub const TREE: u8 = 2;
pub const STRUCTURE: u8 = 3;
pub const BUILDING: u8 = 4;
pub const STONE: u8 = 5;
pub const ROAD: u8 = 6;
pub const TERRAIN_SNOW: u8 = 7;
pub const TERRAIN_OTHER: u8 = 8;
pub const BACKGROUND: u8 = 9;

const BASE_COLORS: [[f64; 3]; 10] = [
    [0.55, 0.70, 0.90],
    [0.36, 0.56, 0.24],
    [0.10, 0.32, 0.12],
    [0.58, 0.58, 0.68],
    [0.62, 0.44, 0.33],
    [0.46, 0.45, 0.42],
    [0.24, 0.24, 0.26],
    [0.90, 0.91, 0.94],
    [0.56, 0.45, 0.30],
    [0.38, 0.30, 0.42],
];

pub const SKY_DEPTH: f64 = 1000.0;
pub const HORIZON_DEPTH: f64 = 60.0;
pub const NEAR_DEPTH: f64 = 2.0;

pub const MIN_SIDE: usize = 16;

/// A clear-weather scene with per-pixel labels and depth (meters).
#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub clear: Image,
    pub labels: LabelMap,
    pub depth: Vec<f64>,
    pub seed: u64,
    pub class_count: usize,
}

impl Scene {
    pub fn height(&self) -> usize {
        self.clear.height()
    }

    pub fn width(&self) -> usize {
        self.clear.width()
    }
}

struct Canvas {
    w: usize,
    image: Image,
    labels: LabelMap,
    depth: Vec<f64>,
}

impl Canvas {
    fn paint(&mut self, y: usize, x: usize, class: u8, rgb: [f64; 3], depth: f64) {
        self.image.set_pixel(y, x, rgb.map(|v| v.clamp(0.0, 1.0)));
        self.labels.set(y, x, class);
        self.depth[y * self.w + x] = depth;
    }
}

fn jitter(rng: &mut ChaCha8Rng, rgb: [f64; 3], amount: f64) -> [f64; 3] {
    rgb.map(|v| v + rng.gen_range(-amount..=amount))
}

fn noisy(rng: &mut ChaCha8Rng, rgb: [f64; 3], amount: f64) -> [f64; 3] {
    let n = rng.gen_range(-amount..=amount);
    rgb.map(|v| v + n + rng.gen_range(-amount..=amount) * 0.3)
}

/// Procedurally generates a scene: a sky band, a ground plane whose depth
/// grows toward the horizon, and 2–6 objects painted far-to-near.
pub fn gen_scene(seed: u64, height: usize, width: usize, class_count: usize) -> Result<Scene> {
    if height < MIN_SIDE || width < MIN_SIDE {
        return Err(invalid!(
            "scene must be at least {MIN_SIDE}×{MIN_SIDE}, got {height}×{width}"
        ));
    }
    if !(2..=CLASS_NAMES.len()).contains(&class_count) {
        return Err(invalid!("class_count must be in [2, 10], got {class_count}"));
    }
    let mut rng = rng::stream(seed, "scene");
    let (h, w) = (height, width);
    let mut c = Canvas {
        w,
        image: Image::filled(h, w, [0.0; 3]),
        labels: LabelMap::new(h, w, vec![0; h * w])?,
        depth: vec![0.0; h * w],
    };
    let palette: Vec<[f64; 3]> = BASE_COLORS
        .iter()
        .map(|&rgb| jitter(&mut rng, rgb, 0.07))
        .collect();

    let horizon = rng.gen_range(0.3..0.5) * h as f64;
    let horizon = horizon.round() as usize;
    let ground_depth = |y: usize| -> f64 {
        let t = (y - horizon) as f64 / (h - 1 - horizon).max(1) as f64;
        HORIZON_DEPTH + (NEAR_DEPTH - HORIZON_DEPTH) * t
    };

    for y in 0..horizon {
        let lift = 0.15 * y as f64 / horizon as f64;
        for x in 0..w {
            let rgb = noisy(&mut rng, palette[SKY as usize].map(|v| v + lift), 0.015);
            c.paint(y, x, SKY, rgb, SKY_DEPTH);
        }
    }
    for y in horizon..h {
        for x in 0..w {
            let rgb = noisy(&mut rng, palette[TERRAIN as usize], 0.04);
            c.paint(y, x, TERRAIN, rgb, ground_depth(y));
        }
    }

    let ground_rows = (h - horizon) as f64;
    // Ground patches and a road lie flat, so they take the ground depth.
    for class in [TERRAIN_SNOW, TERRAIN_OTHER] {
        if (class as usize) < class_count && rng.gen_bool(0.6) {
            let cy = horizon as f64 + rng.gen_range(0.2..0.9) * ground_rows;
            let cx = rng.gen_range(0.0..w as f64);
            let rx = rng.gen_range(0.15..0.35) * w as f64;
            let ry = rng.gen_range(0.08..0.2) * ground_rows;
            let rgb = palette[class as usize];
            for y in horizon..h {
                for x in 0..w {
                    let (dy, dx) = ((y as f64 - cy) / ry, (x as f64 - cx) / rx);
                    if dx * dx + dy * dy <= 1.0 {
                        let px = noisy(&mut rng, rgb, 0.03);
                        c.paint(y, x, class, px, ground_depth(y));
                    }
                }
            }
        }
    }
    if (ROAD as usize) < class_count && rng.gen_bool(0.7) {
        let center = rng.gen_range(0.3..0.7) * w as f64;
        let near_half = rng.gen_range(0.15..0.3) * w as f64;
        let far_half = rng.gen_range(0.01..0.04) * w as f64;
        let vanish = rng.gen_range(0.35..0.65) * w as f64;
        for y in horizon..h {
            let t = (y - horizon) as f64 / (h - 1 - horizon).max(1) as f64;
            let mid = vanish + (center - vanish) * t;
            let half = far_half + (near_half - far_half) * t;
            for x in 0..w {
                if (x as f64 - mid).abs() <= half {
                    let px = noisy(&mut rng, palette[ROAD as usize], 0.02);
                    c.paint(y, x, ROAD, px, ground_depth(y));
                }
            }
        }
    }

    let object_classes: Vec<u8> = [TREE, STRUCTURE, BUILDING, STONE, BACKGROUND]
        .into_iter()
        .filter(|&k| (k as usize) < class_count)
        .collect();
    let count = rng.gen_range(2..=6);
    let mut objects: Vec<(usize, u8)> = (0..count)
        .map(|_| {
            let base = rng.gen_range(horizon + 1..h);
            let class = if object_classes.is_empty() {
                TERRAIN
            } else {
                object_classes[rng.gen_range(0..object_classes.len())]
            };
            (base, class)
        })
        .collect();
    // far to near: nearer objects occlude farther ones
    objects.sort_by_key(|&(base, _)| base);

    for (base, class) in objects {
        let nearness = (base - horizon) as f64 / ground_rows;
        let s = 0.35 + 0.65 * nearness;
        let depth = ground_depth(base);
        let color = jitter(&mut rng, palette[class as usize], 0.05);
        let cx = rng.gen_range(0.0..w as f64);
        match class {
            BUILDING | STRUCTURE | BACKGROUND => {
                let (bw, bh) = match class {
                    BUILDING => (rng.gen_range(0.15..0.35), rng.gen_range(0.25..0.5)),
                    STRUCTURE => (rng.gen_range(0.04..0.1), rng.gen_range(0.3..0.6)),
                    _ => (rng.gen_range(0.1..0.25), rng.gen_range(0.1..0.25)),
                };
                let half = (bw * w as f64 * s / 2.0).max(1.0);
                let top = (base as f64 - bh * h as f64 * s).max(1.0) as usize;
                let x0 = (cx - half).max(0.0) as usize;
                let x1 = ((cx + half) as usize).min(w - 1);
                let window = 0.55 + rng.gen_range(0.0..0.15);
                for y in top..=base {
                    for x in x0..=x1 {
                        let mut rgb = noisy(&mut rng, color, 0.02);
                        if class == BUILDING && (y - top) % 4 == 1 && (x - x0) % 4 == 1 {
                            rgb = rgb.map(|v| v * window);
                        }
                        c.paint(y, x, class, rgb, depth);
                    }
                }
            }
            _ => {
                let (rx, ry, cy) = if class == TREE {
                    let rx = rng.gen_range(0.06..0.14) * w as f64 * s;
                    let ry = rng.gen_range(0.1..0.2) * h as f64 * s;
                    (rx, ry, base as f64 - ry)
                } else {
                    let rx = rng.gen_range(0.04..0.1) * w as f64 * s;
                    let ry = rx * rng.gen_range(0.5..0.8);
                    (rx, ry, base as f64 - ry * 0.6)
                };
                let (rx, ry) = (rx.max(1.0), ry.max(1.0));
                let y0 = (cy - ry).max(1.0) as usize;
                let y1 = ((cy + ry) as usize).min(h - 1);
                for y in y0..=y1 {
                    for x in 0..w {
                        let (dy, dx) = ((y as f64 - cy) / ry, (x as f64 - cx) / rx);
                        if dx * dx + dy * dy <= 1.0 {
                            let rgb = noisy(&mut rng, color, 0.035);
                            c.paint(y, x, class, rgb, depth);
                        }
                    }
                }
            }
        }
    }

    Ok(Scene {
        clear: c.image,
        labels: c.labels,
        depth: c.depth,
        seed,
        class_count,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic() {
        assert_eq!(gen_scene(5, 32, 32, 7).unwrap(), gen_scene(5, 32, 32, 7).unwrap());
    }

    #[test]
    fn seeds_differ() {
        let a = gen_scene(0, 32, 32, 7).unwrap();
        let b = gen_scene(1, 32, 32, 7).unwrap();
        assert_ne!(a.clear, b.clear);
    }

    #[test]
    fn invariants_hold() {
        for seed in 0..40 {
            for classes in [2, 3, 7, 10] {
                let s = gen_scene(seed, 24, 40, classes).unwrap();
                let mut seen = [false; 10];
                for &l in s.labels.data() {
                    assert!((l as usize) < classes);
                    seen[l as usize] = true;
                }
                assert!(seen.iter().filter(|&&b| b).count() >= 2);
                assert!(s.depth.iter().all(|&d| d >= 0.0));
                let max = s.depth.iter().cloned().fold(0.0, f64::max);
                for (l, d) in s.labels.data().iter().zip(&s.depth) {
                    if *l == SKY {
                        assert_eq!(*d, max);
                    }
                }
                assert!(s.clear.data().iter().all(|v| (0.0..=1.0).contains(v)));
            }
        }
    }

    #[test]
    fn rejects_small_or_bad_class_count() {
        assert!(gen_scene(0, 15, 32, 7).is_err());
        assert!(gen_scene(0, 32, 32, 1).is_err());
        assert!(gen_scene(0, 32, 32, 11).is_err());
    }
}
