//! Weather compositions and the paired-sample compositor.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::formation::{
    apply_fog, apply_rain, apply_snow, gen_rain_field, gen_snow_field, FogParams, RainField,
    SnowField,
};
use super::scene::Scene;
use crate::error::{invalid, Result};
use crate::image::Image;
use crate::rng;

/// Effect registry, in the order used by composition vectors everywhere.
pub const EFFECTS: [&str; 4] = ["rain", "snow", "fog", "clear"];
pub const K: usize = EFFECTS.len();
pub const RAIN: usize = 0;
pub const SNOW: usize = 1;
pub const FOG: usize = 2;
pub const CLEAR: usize = 3;

/// Fog attenuation reached at full fog weight, per meter.
pub const BETA_MAX: f64 = 0.3;

/// Simplex weights over [`EFFECTS`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; K]", into = "[f64; K]")]
pub struct WeatherComposition([f64; K]);

impl WeatherComposition {
    pub fn new(weights: [f64; K]) -> Result<Self> {
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(invalid!("composition weights must be finite and non-negative: {weights:?}"));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(invalid!("composition weights sum to {sum}, expected 1"));
        }
        Ok(Self(weights))
    }

    /// Normalizes non-negative raw weights onto the simplex.
    pub fn normalized(raw: [f64; K]) -> Result<Self> {
        let sum: f64 = raw.iter().sum();
        if !(sum > 0.0) || raw.iter().any(|w| *w < 0.0) {
            return Err(invalid!("cannot normalize weights {raw:?}"));
        }
        Self::new(raw.map(|w| w / sum))
    }

    pub fn pure(effect: usize) -> Self {
        let mut w = [0.0; K];
        w[effect] = 1.0;
        Self(w)
    }

    pub fn clear() -> Self {
        Self::pure(CLEAR)
    }

    pub fn weights(&self) -> &[f64; K] {
        &self.0
    }

    pub fn weight(&self, effect: usize) -> f64 {
        self.0[effect]
    }

    /// Index of the largest weight (first on ties).
    pub fn dominant(&self) -> usize {
        (0..K).fold(0, |best, i| if self.0[i] > self.0[best] { i } else { best })
    }
}

impl TryFrom<[f64; K]> for WeatherComposition {
    type Error = crate::error::Error;

    fn try_from(w: [f64; K]) -> Result<Self> {
        Self::new(w)
    }
}

impl From<WeatherComposition> for [f64; K] {
    fn from(c: WeatherComposition) -> Self {
        c.0
    }
}

/// Random mixture of one to three active effects plus a little clear weight.
pub fn sample_composition<R: Rng>(rng: &mut R) -> WeatherComposition {
    let u: f64 = rng.gen();
    let active = if u < 0.5 {
        1
    } else if u < 0.85 {
        2
    } else {
        3
    };
    let mut effects = [RAIN, SNOW, FOG];
    for i in (1..effects.len()).rev() {
        effects.swap(i, rng.gen_range(0..=i));
    }
    let mut raw = [0.0; K];
    for &e in &effects[..active] {
        raw[e] = rng.gen_range(0.3..1.0);
    }
    raw[CLEAR] = rng.gen_range(0.0..0.4);
    WeatherComposition::normalized(raw).expect("at least one active effect")
}

/// Parameters of every stage applied to a sample, enough to regenerate it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeatherMeta {
    pub seed: u64,
    pub rain_intensity: f64,
    pub snow_intensity: f64,
    pub fog: FogParams,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairedSample {
    pub scene: Scene,
    pub adverse: Image,
    pub composition: WeatherComposition,
    pub meta: WeatherMeta,
    pub rain: Option<RainField>,
    pub snow: Option<SnowField>,
}

impl PairedSample {
    pub fn clear(&self) -> &Image {
        &self.scene.clear
    }

    pub fn labels(&self) -> &crate::image::LabelMap {
        &self.scene.labels
    }
}

/// Renders the adverse counterpart of `scene`: fog, then snow, then rain.
/// Stages with zero weight leave the image untouched.
pub fn compose_weather(scene: Scene, composition: WeatherComposition, seed: u64) -> Result<PairedSample> {
    let mut r = rng::stream(seed, "airlight");
    let gray = r.gen_range(0.72..0.92);
    let tint = r.gen_range(-0.03..0.03);
    let fog = FogParams::new(
        composition.weight(FOG) * BETA_MAX,
        [gray - tint, gray, (gray + tint).min(1.0)],
    )?;
    let meta = WeatherMeta {
        seed,
        rain_intensity: composition.weight(RAIN),
        snow_intensity: composition.weight(SNOW),
        fog,
    };
    render(scene, composition, meta)
}

/// Re-renders a sample from its recorded parameters.
pub(crate) fn render(scene: Scene, composition: WeatherComposition, meta: WeatherMeta) -> Result<PairedSample> {
    let (h, w) = (scene.height(), scene.width());
    let mut adverse = scene.clear.clone();
    if meta.fog.beta > 0.0 {
        adverse = apply_fog(&adverse, &scene.depth, &meta.fog)?;
    }
    let snow = if meta.snow_intensity > 0.0 {
        let f = gen_snow_field(meta.seed, meta.snow_intensity, h, w)?;
        adverse = apply_snow(&adverse, &f)?;
        Some(f)
    } else {
        None
    };
    let rain = if meta.rain_intensity > 0.0 {
        let f = gen_rain_field(meta.seed, meta.rain_intensity, h, w)?;
        adverse = apply_rain(&adverse, &f)?;
        Some(f)
    } else {
        None
    };
    Ok(PairedSample {
        scene,
        adverse,
        composition,
        meta,
        rain,
        snow,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::weathersim::scene::gen_scene;

    #[test]
    fn composition_validation() {
        assert!(WeatherComposition::new([0.5, 0.5, 0.0, 0.0]).is_ok());
        assert!(WeatherComposition::new([0.5, 0.6, 0.0, 0.0]).is_err());
        assert!(WeatherComposition::new([1.5, -0.5, 0.0, 0.0]).is_err());
        let c = WeatherComposition::normalized([2.0, 0.0, 2.0, 0.0]).unwrap();
        assert_eq!(c.weights(), &[0.5, 0.0, 0.5, 0.0]);
        assert_eq!(c.dominant(), RAIN);
        let json = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<WeatherComposition>(&json).unwrap(), c);
        assert!(serde_json::from_str::<WeatherComposition>("[1,1,0,0]").is_err());
    }

    #[test]
    fn sampled_compositions_are_valid() {
        let mut r = rng::stream(4, "t");
        for _ in 0..500 {
            let c = sample_composition(&mut r);
            assert!(WeatherComposition::new(*c.weights()).is_ok());
            assert!(c.weight(CLEAR) < 0.58);
        }
    }

    #[test]
    fn clear_composition_is_identity() {
        let scene = gen_scene(5, 32, 32, 10).unwrap();
        let s = compose_weather(scene.clone(), WeatherComposition::clear(), 9).unwrap();
        assert_eq!(s.adverse, scene.clear);
        assert!(s.rain.is_none() && s.snow.is_none());
    }

    #[test]
    fn pure_fog_matches_single_stage() {
        let mut scene = gen_scene(5, 32, 32, 10).unwrap();
        scene.depth = vec![25.0; 32 * 32];
        let s = compose_weather(scene.clone(), WeatherComposition::pure(FOG), 3).unwrap();
        assert_eq!(s.meta.fog.beta, BETA_MAX);
        assert_eq!(s.adverse, apply_fog(&scene.clear, &scene.depth, &s.meta.fog).unwrap());
        assert_eq!(s.scene.labels, scene.labels);
    }

    #[test]
    fn mixtures_change_the_image() {
        let scene = gen_scene(1, 32, 32, 10).unwrap();
        let c = WeatherComposition::new([0.4, 0.3, 0.2, 0.1]).unwrap();
        let s = compose_weather(scene.clone(), c, 2).unwrap();
        assert_ne!(s.adverse, scene.clear);
        assert!(s.adverse.data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(s, compose_weather(scene, c, 2).unwrap());
    }
}
