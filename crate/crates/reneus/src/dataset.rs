//! On-disk dataset: PNG images and masks plus a JSON manifest.
//!
//! ```text
//! <dir>/manifest.json
//! <dir>/images/view_0000.png   8-bit RGB
//! <dir>/masks/view_0000.png    8-bit gray, 255 inside
//! ```
//!
//! The manifest stores every float with 17 significant digits and a SHA-256
//! checksum over its own body and every referenced file.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use reneus_core::camera::{Camera, Intrinsics};
use reneus_core::forge::{Dataset, SceneSpec, View};
use reneus_core::geometry::OrientedBox;
use reneus_core::math::{Mat3, Rgb, Vec3};
use reneus_core::nn::AnalyticSdf;
use reneus_core::render::TraceConfig;

use crate::error::{Error, Result};
use crate::json;

pub const MANIFEST: &str = "manifest.json";
const FORMAT: &str = "reneus-dataset";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxSpec {
    pub center: [f64; 3],
    /// Local-to-world rotation, row-major.
    pub rotation: [f64; 9],
    pub half_extents: [f64; 3],
    pub ior: f64,
}

impl From<&OrientedBox> for BoxSpec {
    fn from(b: &OrientedBox) -> Self {
        Self {
            center: b.center.to_array(),
            rotation: b.rotation.to_row_major(),
            half_extents: b.half_extents.to_array(),
            ior: b.ior,
        }
    }
}

impl BoxSpec {
    pub fn to_box(&self) -> OrientedBox {
        OrientedBox {
            center: Vec3::from_array(self.center),
            rotation: Mat3::from_row_major(self.rotation),
            half_extents: Vec3::from_array(self.half_extents),
            ior: self.ior,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViewEntry {
    pub image: String,
    pub mask: String,
    /// Row-major camera-to-world transform; the camera looks down `-z`.
    pub camera_to_world: [[f64; 4]; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub intrinsics: Intrinsics,
    #[serde(rename = "box")]
    pub bx: BoxSpec,
    pub with_box: bool,
    pub ambient: [f64; 3],
    pub camera_radius: f64,
    pub seed: u64,
    pub object: Option<AnalyticSdf>,
    /// Trace settings the images were rendered with.
    pub trace: TraceConfig,
    pub views: Vec<ViewEntry>,
    pub checksum: String,
}

impl Manifest {
    pub fn scene(&self) -> SceneSpec {
        SceneSpec {
            object: self.object,
            bx: self.bx.to_box(),
            with_box: self.with_box,
            ambient: Rgb(self.ambient),
            intrinsics: self.intrinsics,
            num_views: self.views.len(),
            camera_radius: self.camera_radius,
            seed: self.seed,
        }
    }

    fn body(&self) -> Vec<u8> {
        let mut m = self.clone();
        m.checksum.clear();
        json::to_vec_precise(&m)
    }
}

fn image_name(i: usize) -> String {
    format!("images/view_{i:04}.png")
}

fn mask_name(i: usize) -> String {
    format!("masks/view_{i:04}.png")
}

fn checksum(manifest: &Manifest, files: &[(String, Vec<u8>)]) -> String {
    let mut h = Sha256::new();
    let body = manifest.body();
    h.update((body.len() as u64).to_le_bytes());
    h.update(&body);
    for (name, bytes) in files {
        h.update(name.as_bytes());
        h.update([0u8]);
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(bytes);
    }
    hex::encode(h.finalize())
}

pub fn encode_rgb(width: u32, height: u32, pixels: &[[u8; 3]]) -> Vec<u8> {
    let raw: Vec<u8> = pixels.iter().flatten().copied().collect();
    encode_png(width, height, &raw, image::ExtendedColorType::Rgb8)
}

fn encode_png(width: u32, height: u32, raw: &[u8], color: image::ExtendedColorType) -> Vec<u8> {
    use image::ImageEncoder as _;
    let mut out = Vec::new();
    image::codecs::png::PngEncoder::new(&mut out)
        .write_image(raw, width, height, color)
        .expect("in-memory PNG encoding");
    out
}

fn decode_png(path: &Path, bytes: &[u8], k: &Intrinsics, gray: bool) -> Result<Vec<u8>> {
    let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)
        .map_err(|e| Error::format(path, format!("cannot decode PNG: {e}")))?;
    if img.width() != k.width || img.height() != k.height {
        return Err(Error::format(
            path,
            format!("image is {}x{}, manifest says {}x{}", img.width(), img.height(), k.width, k.height),
        ));
    }
    Ok(if gray {
        img.into_luma8().into_raw()
    } else {
        img.into_rgb8().into_raw()
    })
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(Error::io(path))?;
    f.write_all(bytes).map_err(Error::io(path))
}

/// Writes `data` below `dir`, creating it if needed.
pub fn write_dataset(data: &Dataset, dir: &Path) -> Result<Manifest> {
    let k = data.scene.intrinsics;
    let mut files = Vec::new();
    let mut views = Vec::new();
    for (i, v) in data.views.iter().enumerate() {
        let mask: Vec<u8> = v.mask.iter().map(|&m| if m { 255 } else { 0 }).collect();
        files.push((image_name(i), encode_rgb(k.width, k.height, &v.image)));
        files.push((mask_name(i), encode_png(k.width, k.height, &mask, image::ExtendedColorType::L8)));
        views.push(ViewEntry {
            image: image_name(i),
            mask: mask_name(i),
            camera_to_world: v.camera.to_matrix(),
        });
    }
    let s = &data.scene;
    let mut manifest = Manifest {
        format: FORMAT.into(),
        version: VERSION,
        intrinsics: k,
        bx: BoxSpec::from(&s.bx),
        with_box: s.with_box,
        ambient: s.ambient.0,
        camera_radius: s.camera_radius,
        seed: s.seed,
        object: s.object,
        trace: data.trace,
        views,
        checksum: String::new(),
    };
    manifest.checksum = checksum(&manifest, &files);
    for sub in ["images", "masks"] {
        let d = dir.join(sub);
        fs::create_dir_all(&d).map_err(Error::io(d))?;
    }
    for (name, bytes) in &files {
        write_file(&dir.join(name), bytes)?;
    }
    write_file(&dir.join(MANIFEST), &json::to_vec_precise(&manifest))?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST);
    let bytes = fs::read(&path).map_err(Error::io(&path))?;
    let m: Manifest =
        serde_json::from_slice(&bytes).map_err(|e| Error::format(&path, format!("malformed manifest: {e}")))?;
    if m.format != FORMAT || m.version != VERSION {
        return Err(Error::format(&path, format!("unsupported format {} v{}", m.format, m.version)));
    }
    Ok(m)
}

/// Loads and verifies a dataset written by [`write_dataset`].
pub fn read_dataset(dir: &Path) -> Result<(Dataset, Manifest)> {
    let manifest = read_manifest(dir)?;
    let k = manifest.intrinsics;
    let mut files = Vec::new();
    for v in &manifest.views {
        for name in [&v.image, &v.mask] {
            let path: PathBuf = dir.join(name);
            let bytes = fs::read(&path).map_err(Error::io(&path))?;
            files.push((name.clone(), bytes));
        }
    }
    if checksum(&manifest, &files) != manifest.checksum {
        return Err(Error::format(dir.join(MANIFEST), "checksum mismatch"));
    }
    let mut views = Vec::new();
    for (v, pair) in manifest.views.iter().zip(files.chunks(2)) {
        let rgb = decode_png(&dir.join(&v.image), &pair[0].1, &k, false)?;
        let mask = decode_png(&dir.join(&v.mask), &pair[1].1, &k, true)?;
        let camera = Camera::from_matrix(k, v.camera_to_world)
            .map_err(|e| Error::format(dir.join(MANIFEST), format!("view {}: {e}", v.image)))?;
        views.push(View {
            camera,
            image: rgb.chunks(3).map(|c| [c[0], c[1], c[2]]).collect(),
            mask: mask.iter().map(|&m| m >= 128).collect(),
        });
    }
    let scene = manifest.scene();
    scene
        .validate()
        .map_err(|e| Error::format(dir.join(MANIFEST), format!("invalid scene: {e}")))?;
    Ok((
        Dataset {
            scene,
            trace: manifest.trace,
            views,
        },
        manifest,
    ))
}

/// Total size in bytes of the files below `dir`.
pub fn disk_usage(dir: &Path) -> Result<u64> {
    let mut total = 0;
    for entry in fs::read_dir(dir).map_err(Error::io(dir))? {
        let entry = entry.map_err(Error::io(dir))?;
        let meta = entry.metadata().map_err(Error::io(entry.path()))?;
        total += if meta.is_dir() { disk_usage(&entry.path())? } else { meta.len() };
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use reneus_core::forge::generate;

    fn small() -> Dataset {
        let scene = SceneSpec {
            intrinsics: Intrinsics::centered(60.0, 16, 12),
            num_views: 3,
            seed: 4,
            ..SceneSpec::default()
        };
        generate(&scene, &TraceConfig::default()).unwrap()
    }

    #[test]
    fn write_then_read_is_lossless() {
        let dir = tempfile::tempdir().unwrap();
        let data = small();
        write_dataset(&data, dir.path()).unwrap();
        let (back, _) = read_dataset(dir.path()).unwrap();
        assert_eq!(back, data);
    }

    #[test]
    fn tampering_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&small(), dir.path()).unwrap();
        let mask = dir.path().join("masks/view_0001.png");
        let (w, h) = (16, 12);
        fs::write(&mask, encode_png(w, h, &[255; 16 * 12], image::ExtendedColorType::L8)).unwrap();
        let err = read_dataset(dir.path()).unwrap_err();
        assert!(err.to_string().contains("checksum"), "{err}");

        let dir = tempfile::tempdir().unwrap();
        write_dataset(&small(), dir.path()).unwrap();
        let path = dir.path().join(MANIFEST);
        let text = fs::read_to_string(&path).unwrap().replace("\"seed\": 4", "\"seed\": 5");
        fs::write(&path, text).unwrap();
        assert!(read_dataset(dir.path()).unwrap_err().to_string().contains("checksum"));
    }

    #[test]
    fn missing_files_name_the_file() {
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&small(), dir.path()).unwrap();
        fs::remove_file(dir.path().join("images/view_0002.png")).unwrap();
        let err = read_dataset(dir.path()).unwrap_err();
        assert!(err.to_string().contains("view_0002.png"), "{err}");
    }

    #[test]
    fn floats_have_seventeen_digits() {
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&small(), dir.path()).unwrap();
        let text = fs::read_to_string(dir.path().join(MANIFEST)).unwrap();
        assert!(text.contains("\"ior\": 1.4500000000000000e0"), "{text}");
    }
}
