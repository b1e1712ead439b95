//! On-disk sample layout: `scene_NNNNNN/{clear.ppm, adverse.ppm, labels.pgm, meta.json}`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::compose::{PairedSample, WeatherComposition, WeatherMeta, EFFECTS};
use super::formation::{gen_rain_field, gen_snow_field};
use super::scene::gen_scene;
use crate::error::{Error, Result};
use crate::image::{Image, LabelMap};
use crate::pnm;

pub const SAMPLE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MetaFile {
    format_version: u32,
    scene_seed: u64,
    height: usize,
    width: usize,
    class_count: usize,
    effects: Vec<String>,
    composition: WeatherComposition,
    weather: WeatherMeta,
}

pub fn sample_dir(root: &Path, index: usize) -> PathBuf {
    root.join(format!("scene_{index:06}"))
}

pub fn write_sample(sample: &PairedSample, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let scene = &sample.scene;
    let (h, w) = (scene.height(), scene.width());
    pnm::write_ppm(&dir.join("clear.ppm"), w, h, &scene.clear.to_bytes())?;
    pnm::write_ppm(&dir.join("adverse.ppm"), w, h, &sample.adverse.to_bytes())?;
    pnm::write_pgm(&dir.join("labels.pgm"), w, h, scene.labels.data())?;
    let meta = MetaFile {
        format_version: SAMPLE_FORMAT_VERSION,
        scene_seed: scene.seed,
        height: h,
        width: w,
        class_count: scene.class_count,
        effects: EFFECTS.iter().map(|e| e.to_string()).collect(),
        composition: sample.composition,
        weather: sample.meta.clone(),
    };
    let path = dir.join("meta.json");
    let mut text = serde_json::to_string_pretty(&meta)?;
    text.push('\n');
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

fn read_image(path: &Path, h: usize, w: usize) -> Result<Image> {
    let (rw, rh, bytes) = pnm::read_ppm(path)?;
    if (rh, rw) != (h, w) {
        return Err(Error::format(path, format!("image is {rw}×{rh}, metadata says {w}×{h}")));
    }
    Image::from_bytes(h, w, &bytes)
}

/// Reads a sample written by [`write_sample`]. Depth and particle fields are
/// regenerated from the recorded seeds; images come from disk.
pub fn read_sample(dir: &Path) -> Result<PairedSample> {
    let meta_path = dir.join("meta.json");
    let text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta: MetaFile =
        serde_json::from_str(&text).map_err(|e| Error::format(&meta_path, e.to_string()))?;
    if meta.format_version != SAMPLE_FORMAT_VERSION {
        return Err(Error::format(
            &meta_path,
            format!("unsupported format version {}", meta.format_version),
        ));
    }
    if meta.effects != EFFECTS {
        return Err(Error::format(&meta_path, format!("unknown effect registry {:?}", meta.effects)));
    }
    let (h, w) = (meta.height, meta.width);
    let clear = read_image(&dir.join("clear.ppm"), h, w)?;
    let adverse = read_image(&dir.join("adverse.ppm"), h, w)?;
    let labels_path = dir.join("labels.pgm");
    let (lw, lh, ids) = pnm::read_pgm(&labels_path)?;
    if (lh, lw) != (h, w) {
        return Err(Error::format(&labels_path, "label map size differs from metadata"));
    }
    if let Some(bad) = ids.iter().find(|&&c| usize::from(c) >= meta.class_count) {
        return Err(Error::format(&labels_path, format!("class id {bad} out of range")));
    }
    let labels = LabelMap::new(h, w, ids)?;

    let mut scene = gen_scene(meta.scene_seed, h, w, meta.class_count)
        .map_err(|e| Error::format(&meta_path, e.to_string()))?;
    scene.clear = clear;
    scene.labels = labels;
    let weather = meta.weather;
    let rain = (weather.rain_intensity > 0.0)
        .then(|| gen_rain_field(weather.seed, weather.rain_intensity, h, w))
        .transpose()?;
    let snow = (weather.snow_intensity > 0.0)
        .then(|| gen_snow_field(weather.seed, weather.snow_intensity, h, w))
        .transpose()?;
    Ok(PairedSample {
        scene,
        adverse,
        composition: meta.composition,
        meta: weather,
        rain,
        snow,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::weathersim::compose::compose_weather;

    fn sample() -> PairedSample {
        let scene = gen_scene(12, 32, 48, 10).unwrap();
        let c = WeatherComposition::new([0.31, 0.22, 0.337, 0.133]).unwrap();
        compose_weather(scene, c, 77).unwrap()
    }

    #[test]
    fn roundtrip() {
        let tmp = tempfile::tempdir().unwrap();
        let s = sample();
        let dir = sample_dir(tmp.path(), 3);
        write_sample(&s, &dir).unwrap();
        assert!(dir.ends_with("scene_000003"));
        let r = read_sample(&dir).unwrap();
        assert_eq!(r.scene.labels, s.scene.labels);
        assert_eq!(r.composition, s.composition);
        assert_eq!(r.meta, s.meta);
        assert_eq!(r.scene.depth, s.scene.depth);
        assert_eq!(r.rain, s.rain);
        for (a, b) in [(&r.adverse, &s.adverse), (&r.scene.clear, &s.scene.clear)] {
            let err = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            assert!(err <= 0.5 / 255.0 + 1e-12, "{err}");
        }
    }

    #[test]
    fn truncated_image_names_file() {
        let tmp = tempfile::tempdir().unwrap();
        write_sample(&sample(), tmp.path()).unwrap();
        let p = tmp.path().join("adverse.ppm");
        let bytes = fs::read(&p).unwrap();
        fs::write(&p, &bytes[..bytes.len() / 2]).unwrap();
        let msg = read_sample(tmp.path()).unwrap_err().to_string();
        assert!(msg.contains("adverse.ppm"), "{msg}");
    }

    #[test]
    fn missing_meta_names_file() {
        let tmp = tempfile::tempdir().unwrap();
        let msg = read_sample(tmp.path()).unwrap_err().to_string();
        assert!(msg.contains("meta.json"), "{msg}");
    }
}
