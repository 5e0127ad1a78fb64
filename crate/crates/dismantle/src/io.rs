//! On-disk formats: PNG fixtures, netpbm golden files, raw depth rasters,
//! weight files with JSON sidecars, lattice files and scene bundles.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use dismantle_core::calib::{CalibrationLattice, GlobalLinearMap, LatticeNode, WorkVolume};
use dismantle_core::detect::{DepthMap, RgbdImage};
use dismantle_core::fcn::{decode_weights, encode_weights, FcnModel, TrainedModel, TrainingConfig};
use dismantle_core::imgproc::{to_grayscale, BinaryMask, GrayImage, ProbabilityMap, RgbImage};
use dismantle_core::synth::{SceneSpec, SceneTruth, WorldParams};

use crate::error::{Error, Result};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hash of the canonical JSON form of `value`.
pub fn json_hash<T: Serialize>(value: &T) -> String {
    sha256_hex(&serde_json::to_vec(value).expect("plain data serializes"))
}

pub fn world_hash(world: &WorldParams) -> String {
    json_hash(world)
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(Error::io(dir))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(Error::io(path))
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(Error::io(path))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let file = File::create(path).map_err(Error::io(path))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value).map_err(|source| Error::Json {
        path: path.into(),
        source,
    })?;
    w.write_all(b"\n")
        .and_then(|_| w.flush())
        .map_err(Error::io(path))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let file = File::open(path).map_err(Error::io(path))?;
    serde_json::from_reader(BufReader::new(file)).map_err(|source| Error::Json {
        path: path.into(),
        source,
    })
}

/// Writes flat records as CSV with a header row.
pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(Error::io(path))
}

// ---------------------------------------------------------------------------
// PNG

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn write_png(
    path: &Path,
    width: usize,
    height: usize,
    color: png::ColorType,
    data: &[u8],
) -> Result<()> {
    let file = File::create(path).map_err(Error::io(path))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    enc.set_color(color);
    enc.set_depth(png::BitDepth::Eight);
    let mut w = enc
        .write_header()
        .map_err(|e| Error::format(path, e.to_string()))?;
    w.write_image_data(data)
        .map_err(|e| Error::format(path, e.to_string()))?;
    w.finish().map_err(|e| Error::format(path, e.to_string()))
}

/// 8-bit RGB, values clamped to `[0, 1]` and rounded.
pub fn write_png_rgb(path: &Path, img: &RgbImage) -> Result<()> {
    let data: Vec<u8> = img.data().iter().flat_map(|p| p.map(to_u8)).collect();
    write_png(path, img.width(), img.height(), png::ColorType::Rgb, &data)
}

pub fn write_png_gray(path: &Path, img: &GrayImage) -> Result<()> {
    let data: Vec<u8> = img.data().iter().map(|&v| to_u8(v)).collect();
    write_png(
        path,
        img.width(),
        img.height(),
        png::ColorType::Grayscale,
        &data,
    )
}

/// Any PNG, normalized to 8-bit RGB triples.
fn read_png_rgb8(path: &Path) -> Result<(usize, usize, Vec<[u8; 3]>)> {
    let file = File::open(path).map_err(Error::io(path))?;
    let mut dec = png::Decoder::new(BufReader::new(file));
    dec.set_transformations(png::Transformations::normalize_to_color8());
    let mut reader = dec
        .read_info()
        .map_err(|e| Error::format(path, e.to_string()))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::format(path, "image too large"))?;
    let mut buf = vec![0u8; size];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::format(path, e.to_string()))?;
    let (w, h) = (info.width as usize, info.height as usize);
    let channels = info.color_type.samples();
    let pixels = buf[..info.buffer_size()]
        .chunks_exact(channels)
        .map(|c| match channels {
            1 | 2 => [c[0]; 3],
            _ => [c[0], c[1], c[2]],
        })
        .collect::<Vec<_>>();
    if pixels.len() != w * h {
        return Err(Error::format(path, "unexpected PNG row layout"));
    }
    Ok((w, h, pixels))
}

pub fn read_png_rgb(path: &Path) -> Result<RgbImage> {
    let (w, h, px) = read_png_rgb8(path)?;
    let data = px.iter().map(|p| p.map(|v| v as f64 / 255.0)).collect();
    Ok(RgbImage::new(w, h, data)?)
}

/// Gray PNGs load as is; color PNGs go through the standard luma conversion.
pub fn read_png_gray(path: &Path) -> Result<GrayImage> {
    Ok(to_grayscale(&read_png_rgb(path)?))
}

// ---------------------------------------------------------------------------
// Netpbm (binary PGM)

struct PgmHeader {
    width: usize,
    height: usize,
    maxval: u32,
    data_start: usize,
}

fn parse_pgm_header(bytes: &[u8]) -> std::result::Result<PgmHeader, String> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err("not a binary PGM (P5)".into());
    }
    let mut pos = 2;
    let mut fields = [0u32; 3];
    for f in &mut fields {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        *f = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or("malformed PGM header")?;
    }
    // Exactly one whitespace byte separates the header from the raster.
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err("malformed PGM header".into());
    }
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 || maxval == 0 || maxval > 65535 {
        return Err("PGM dimensions or maxval out of range".into());
    }
    Ok(PgmHeader {
        width: width as usize,
        height: height as usize,
        maxval,
        data_start: pos + 1,
    })
}

fn pgm_samples(bytes: &[u8]) -> std::result::Result<(PgmHeader, Vec<u32>), String> {
    let h = parse_pgm_header(bytes)?;
    let n = h.width * h.height;
    let raster = &bytes[h.data_start..];
    let samples: Vec<u32> = if h.maxval < 256 {
        raster
            .get(..n)
            .ok_or("PGM raster truncated")?
            .iter()
            .map(|&b| b as u32)
            .collect()
    } else {
        raster
            .get(..2 * n)
            .ok_or("PGM raster truncated")?
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]) as u32)
            .collect()
    };
    if samples.iter().any(|&s| s > h.maxval) {
        return Err("PGM sample above maxval".into());
    }
    Ok((h, samples))
}

/// 16-bit PGM (maxval 65535, big-endian samples); `p` is stored as `round(p · 65535)`.
pub fn encode_pgm16(map: &ProbabilityMap) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n65535\n", map.width(), map.height()).into_bytes();
    for &v in map.data() {
        out.extend_from_slice(&((v.clamp(0.0, 1.0) * 65535.0).round() as u16).to_be_bytes());
    }
    out
}

/// Reads any binary PGM as a probability map scaled by its maxval.
pub fn decode_pgm_map(bytes: &[u8]) -> std::result::Result<ProbabilityMap, String> {
    let (h, s) = pgm_samples(bytes)?;
    let scale = h.maxval as f64;
    ProbabilityMap::new(
        h.width,
        h.height,
        s.iter().map(|&v| v as f64 / scale).collect(),
    )
    .map_err(|e| e.to_string())
}

/// 1-bit PGM: maxval 1, one byte per pixel, 1 for set pixels.
pub fn encode_mask_pgm(mask: &BinaryMask) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n1\n", mask.width(), mask.height()).into_bytes();
    out.extend(mask.data().iter().map(|&b| u8::from(b)));
    out
}

/// Any binary PGM; samples above half of maxval are set.
pub fn decode_mask_pgm(bytes: &[u8]) -> std::result::Result<BinaryMask, String> {
    let (h, s) = pgm_samples(bytes)?;
    let cut = h.maxval as f64 / 2.0;
    BinaryMask::new(
        h.width,
        h.height,
        s.iter().map(|&v| v as f64 > cut).collect(),
    )
    .map_err(|e| e.to_string())
}

pub fn write_pgm16(path: &Path, map: &ProbabilityMap) -> Result<()> {
    write_bytes(path, &encode_pgm16(map))
}

pub fn read_pgm_map(path: &Path) -> Result<ProbabilityMap> {
    decode_pgm_map(&read_bytes(path)?).map_err(|m| Error::format(path, m))
}

pub fn write_mask_pgm(path: &Path, mask: &BinaryMask) -> Result<()> {
    write_bytes(path, &encode_mask_pgm(mask))
}

pub fn read_mask_pgm(path: &Path) -> Result<BinaryMask> {
    decode_mask_pgm(&read_bytes(path)?).map_err(|m| Error::format(path, m))
}

// ---------------------------------------------------------------------------
// Depth raster

pub const DEPTH_MAGIC: [u8; 4] = *b"DPF1";

/// 16-byte header (magic, u32 width, u32 height, u32 reserved = 0) followed by
/// row-major little-endian f32 samples; invalid samples are NaN.
pub fn encode_depth(depth: &DepthMap) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 4 * depth.data().len());
    out.extend_from_slice(&DEPTH_MAGIC);
    out.extend_from_slice(&(depth.width() as u32).to_le_bytes());
    out.extend_from_slice(&(depth.height() as u32).to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes());
    for &v in depth.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn decode_depth(bytes: &[u8]) -> std::result::Result<DepthMap, String> {
    if bytes.len() < 16 || bytes[..4] != DEPTH_MAGIC {
        return Err("not a depth raster".into());
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes")) as usize;
    let (w, h) = (word(4), word(8));
    let n = w.checked_mul(h).ok_or("depth dimensions overflow")?;
    if bytes.len() != 16 + 4 * n {
        return Err(format!(
            "depth raster holds {} bytes, expected {}",
            bytes.len() - 16,
            4 * n
        ));
    }
    let data = bytes[16..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    DepthMap::new(w, h, data).map_err(|e| e.to_string())
}

pub fn write_depth(path: &Path, depth: &DepthMap) -> Result<()> {
    write_bytes(path, &encode_depth(depth))
}

pub fn read_depth(path: &Path) -> Result<DepthMap> {
    decode_depth(&read_bytes(path)?).map_err(|m| Error::format(path, m))
}

// ---------------------------------------------------------------------------
// Weights

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightSidecar {
    pub format_version: u32,
    pub weights_sha256: String,
    pub seed: u64,
    pub param_count: usize,
    pub training_config: TrainingConfig,
    /// Mean per-pixel loss of each epoch.
    pub loss_trace: Vec<f64>,
}

pub fn sidecar_path(weights: &Path) -> PathBuf {
    weights.with_extension("json")
}

/// Writes `path` and its `.json` sidecar.
pub fn save_trained(path: &Path, trained: &TrainedModel) -> Result<WeightSidecar> {
    let bytes = encode_weights(&trained.model);
    let sidecar = WeightSidecar {
        format_version: trained.model.version,
        weights_sha256: sha256_hex(&bytes),
        seed: trained.config.seed,
        param_count: trained.model.param_count(),
        training_config: trained.config.clone(),
        loss_trace: trained.epoch_losses.clone(),
    };
    write_bytes(path, &bytes)?;
    write_json(&sidecar_path(path), &sidecar)?;
    Ok(sidecar)
}

/// Decodes a weight file. When a sidecar exists its hash must match.
pub fn load_model(path: &Path) -> Result<FcnModel> {
    let bytes = read_bytes(path)?;
    let model = decode_weights(&bytes).map_err(|e| Error::format(path, e.to_string()))?;
    let side = sidecar_path(path);
    if side.exists() {
        let s: WeightSidecar = read_json(&side)?;
        if s.weights_sha256 != sha256_hex(&bytes) {
            return Err(Error::format(path, "weights do not match the sidecar hash"));
        }
    }
    Ok(model)
}

/// Recall model plus precision ensemble.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelSet {
    pub recall: FcnModel,
    pub ensemble: Vec<FcnModel>,
}

impl ModelSet {
    /// Weight-file hashes keyed by role (`recall`, `ensemble_0`, ...).
    pub fn hashes(&self) -> BTreeMap<String, String> {
        let mut h = BTreeMap::new();
        h.insert(
            "recall".to_string(),
            sha256_hex(&encode_weights(&self.recall)),
        );
        for (i, m) in self.ensemble.iter().enumerate() {
            h.insert(format!("ensemble_{i}"), sha256_hex(&encode_weights(m)));
        }
        h
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelManifest {
    pub recall: String,
    pub ensemble: Vec<String>,
    pub hashes: BTreeMap<String, String>,
}

pub const MODEL_MANIFEST: &str = "models.json";

pub fn save_models(
    dir: &Path,
    recall: &TrainedModel,
    ensemble: &[TrainedModel],
) -> Result<ModelManifest> {
    ensure_dir(dir)?;
    let mut hashes = BTreeMap::new();
    let r = save_trained(&dir.join("recall.bin"), recall)?;
    hashes.insert("recall".to_string(), r.weights_sha256);
    let mut names = Vec::new();
    for (i, m) in ensemble.iter().enumerate() {
        let name = format!("ensemble_{i}.bin");
        let s = save_trained(&dir.join(&name), m)?;
        hashes.insert(format!("ensemble_{i}"), s.weights_sha256);
        names.push(name);
    }
    let manifest = ModelManifest {
        recall: "recall.bin".into(),
        ensemble: names,
        hashes,
    };
    write_json(&dir.join(MODEL_MANIFEST), &manifest)?;
    Ok(manifest)
}

pub fn load_models(dir: &Path) -> Result<ModelSet> {
    let manifest_path = dir.join(MODEL_MANIFEST);
    if !manifest_path.exists() {
        return Err(Error::MissingModels(dir.to_path_buf()));
    }
    let m: ModelManifest = read_json(&manifest_path)?;
    let recall = load_model(&dir.join(&m.recall))?;
    let ensemble = m
        .ensemble
        .iter()
        .map(|n| load_model(&dir.join(n)))
        .collect::<Result<Vec<_>>>()?;
    if ensemble.is_empty() {
        return Err(Error::format(manifest_path, "empty ensemble"));
    }
    Ok(ModelSet { recall, ensemble })
}

// ---------------------------------------------------------------------------
// Lattice

pub const LATTICE_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub index: [usize; 3],
    pub camera_point: Option<[f64; 3]>,
    pub robot_point: [f64; 3],
    pub correction: [f64; 3],
    pub missing: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitStats {
    pub pairs: usize,
    pub missing: usize,
    /// Residuals of the global affine fit over all pairs, mm.
    pub rms: f64,
    pub max: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatticeFile {
    pub format_version: u32,
    pub volume: WorkVolume,
    pub counts: [usize; 3],
    pub nodes: Vec<NodeRecord>,
    pub global_map: GlobalLinearMap,
    pub fit_stats: FitStats,
    /// Hash of the simulated world the lattice was collected in.
    pub world_hash: Option<String>,
}

impl LatticeFile {
    pub fn new(
        lattice: &CalibrationLattice,
        map: &GlobalLinearMap,
        world_hash: Option<String>,
    ) -> Self {
        let nodes = lattice
            .nodes
            .iter()
            .map(|n| NodeRecord {
                index: n.index,
                camera_point: n.camera_point,
                robot_point: n.robot_point,
                correction: n.correction,
                missing: n.missing(),
            })
            .collect();
        let missing = lattice.missing_count();
        Self {
            format_version: LATTICE_FORMAT_VERSION,
            volume: lattice.volume,
            counts: lattice.counts,
            nodes,
            global_map: *map,
            fit_stats: FitStats {
                pairs: lattice.nodes.len() - missing,
                missing,
                rms: map.rms,
                max: map.max,
            },
            world_hash,
        }
    }

    /// Rebuilds the lattice, checking that the file is self-consistent.
    pub fn lattice(&self) -> std::result::Result<CalibrationLattice, String> {
        if self.format_version != LATTICE_FORMAT_VERSION {
            return Err(format!(
                "unsupported lattice format version {}",
                self.format_version
            ));
        }
        let counts = self.volume.counts().map_err(|e| e.to_string())?;
        if counts != self.counts || self.nodes.len() != counts.iter().product::<usize>() {
            return Err("node count does not match the volume".into());
        }
        let [nx, ny, _] = counts;
        let mut nodes = Vec::with_capacity(self.nodes.len());
        for (flat, n) in self.nodes.iter().enumerate() {
            let [i, j, k] = n.index;
            if (k * ny + j) * nx + i != flat {
                return Err(format!("node {flat} has index {:?} out of order", n.index));
            }
            if n.missing != n.camera_point.is_none() {
                return Err(format!(
                    "node {:?} missing flag disagrees with its camera point",
                    n.index
                ));
            }
            nodes.push(LatticeNode {
                index: n.index,
                robot_point: n.robot_point,
                camera_point: n.camera_point,
                correction: n.correction,
            });
        }
        Ok(CalibrationLattice {
            volume: self.volume,
            counts,
            nodes,
        })
    }
}

pub fn write_lattice(path: &Path, file: &LatticeFile) -> Result<()> {
    write_json(path, file)
}

pub fn read_lattice(path: &Path) -> Result<(CalibrationLattice, GlobalLinearMap, LatticeFile)> {
    let file: LatticeFile = read_json(path)?;
    let lattice = file.lattice().map_err(|m| Error::format(path, m))?;
    Ok((lattice, file.global_map, file))
}

// ---------------------------------------------------------------------------
// Scene bundles

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneTruthFile {
    pub spec: SceneSpec,
    pub truth: SceneTruth,
}

/// `dir/rgb.png`, `dir/depth.f32`, `dir/truth.json`.
pub fn write_scene_bundle(
    dir: &Path,
    img: &RgbdImage,
    spec: &SceneSpec,
    truth: &SceneTruth,
) -> Result<()> {
    ensure_dir(dir)?;
    write_png_rgb(&dir.join("rgb.png"), img.rgb())?;
    write_depth(&dir.join("depth.f32"), img.depth())?;
    write_json(
        &dir.join("truth.json"),
        &SceneTruthFile {
            spec: spec.clone(),
            truth: truth.clone(),
        },
    )
}

pub fn read_scene_bundle(dir: &Path) -> Result<(RgbdImage, SceneTruthFile)> {
    let rgb = read_png_rgb(&dir.join("rgb.png"))?;
    let depth = read_depth(&dir.join("depth.f32"))?;
    let truth: SceneTruthFile = read_json(&dir.join("truth.json"))?;
    Ok((RgbdImage::new(rgb, depth)?, truth))
}
