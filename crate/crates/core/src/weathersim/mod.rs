//! Procedural scenes and physical weather compositing.

mod compose;
mod formation;
mod io;
mod scene;

pub use compose::{
    compose_weather, sample_composition, PairedSample, WeatherComposition, WeatherMeta, BETA_MAX,
    CLEAR, EFFECTS, FOG, K, RAIN, SNOW,
};
pub use formation::{
    apply_fog, apply_rain, apply_snow, gen_rain_field, gen_snow_field, FogParams, RainField,
    SnowField, MAX_COVERAGE,
};
pub use io::{read_sample, sample_dir, write_sample, SAMPLE_FORMAT_VERSION};
pub use scene::{gen_scene, Scene, CLASS_NAMES, MIN_SIDE, SKY_DEPTH};
