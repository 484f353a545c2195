//! On-disk formats.
//!
//! A sequence directory holds `frame_NNNN.png` (8-bit RGB), optional
//! `mask_NNNN.png` (8-bit gray, pixel value = label) and `meta.txt` with
//! `key=value` lines for `height`, `width`, `frame_count` and `objects`.
//!
//! A model is a head file plus a `<model>.cfg` sidecar holding the training
//! config in [`TrainConfig::to_kv_string`] form; inference reuses its embed
//! settings.
//!
//! Binary files are little-endian and start with a 4-byte magic and a `u32`
//! version:
//!
//! | file      | magic  | body                                                          |
//! |-----------|--------|---------------------------------------------------------------|
//! | head      | `PXSH` | `u32` input, hidden, output; `u8` activation; `f64` params     |
//! | embedding | `PXSE` | `u32` rows, cols, dim, stride; `f64` cells row-major           |
//! | pool      | `PXSP` | `u32` dim; `u64` count; per sample `f64`s, `u32` label, `u32` frame/row/col, `u8` provenance |

use std::fmt::Write as _;
use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use image::{GrayImage, ImageFormat, RgbImage};

use crate::embed::{Activation, EmbeddingGrid, HeadParams};
use crate::error::{Error, Result};
use crate::metrics::SequenceScore;
use crate::retrieval::{Provenance, ReferencePool, ReferenceSample};
use crate::session::RobotRun;
use crate::train::{LossPoint, TrainConfig};
use crate::video::{Annotation, AnnotationKind, Frame, GridCoord, LabelMask, VideoTensor};

const FORMAT_VERSION: u32 = 1;
const HEAD_MAGIC: &[u8; 4] = b"PXSH";
const EMBEDDING_MAGIC: &[u8; 4] = b"PXSE";
const POOL_MAGIC: &[u8; 4] = b"PXSP";

fn format_err(what: &'static str, detail: impl Into<String>) -> Error {
    Error::Format {
        what,
        detail: detail.into(),
    }
}

pub fn frame_path(dir: &Path, index: usize) -> PathBuf {
    dir.join(format!("frame_{index:04}.png"))
}

pub fn mask_path(dir: &Path, index: usize) -> PathBuf {
    dir.join(format!("mask_{index:04}.png"))
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn frame_to_image(frame: &Frame) -> RgbImage {
    let bytes = frame.data().iter().map(|&v| to_u8(v)).collect();
    RgbImage::from_raw(frame.width() as u32, frame.height() as u32, bytes).expect("buffer sized by frame")
}

pub fn frame_from_image(img: &RgbImage) -> Frame {
    let data = img.as_raw().iter().map(|&b| b as f64 / 255.0).collect();
    Frame::new(img.height() as usize, img.width() as usize, data)
}

pub fn mask_to_image(mask: &LabelMask) -> Result<GrayImage> {
    let bytes = mask
        .labels()
        .iter()
        .map(|&l| u8::try_from(l).map_err(|_| format_err("mask", format!("label {l} does not fit in 8 bits"))))
        .collect::<Result<Vec<u8>>>()?;
    Ok(GrayImage::from_raw(mask.width() as u32, mask.height() as u32, bytes).expect("buffer sized by mask"))
}

pub fn mask_from_image(img: &GrayImage) -> Result<LabelMask> {
    LabelMask::new(
        img.height() as usize,
        img.width() as usize,
        img.as_raw().iter().map(|&b| b as u32).collect(),
    )
}

/// PNG bytes of one frame.
pub fn frame_png(frame: &Frame) -> Result<Vec<u8>> {
    let mut out = Cursor::new(Vec::new());
    frame_to_image(frame).write_to(&mut out, ImageFormat::Png)?;
    Ok(out.into_inner())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SequenceMeta {
    pub height: usize,
    pub width: usize,
    pub frame_count: usize,
    pub objects: u32,
}

impl SequenceMeta {
    pub fn to_text(&self) -> String {
        format!(
            "height={}\nwidth={}\nframe_count={}\nobjects={}\n",
            self.height, self.width, self.frame_count, self.objects
        )
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut fields = [None; 4];
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| format_err("meta.txt", format!("expected key=value, got {line:?}")))?;
            let slot = match key.trim() {
                "height" => 0,
                "width" => 1,
                "frame_count" => 2,
                "objects" => 3,
                other => return Err(format_err("meta.txt", format!("unknown key {other:?}"))),
            };
            let v: usize = value
                .trim()
                .parse()
                .map_err(|_| format_err("meta.txt", format!("{key} is not an integer: {value:?}")))?;
            fields[slot] = Some(v);
        }
        let get = |i: usize, name: &str| fields[i].ok_or_else(|| format_err("meta.txt", format!("missing {name}")));
        Ok(Self {
            height: get(0, "height")?,
            width: get(1, "width")?,
            frame_count: get(2, "frame_count")?,
            objects: get(3, "objects")? as u32,
        })
    }
}

/// A sequence read from disk. `masks` is `None` when no mask files exist.
#[derive(Debug, Clone)]
pub struct Sequence {
    pub meta: SequenceMeta,
    pub video: VideoTensor,
    pub masks: Option<Vec<LabelMask>>,
}

pub fn write_sequence(dir: &Path, video: &VideoTensor, masks: Option<&[LabelMask]>, objects: u32) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (i, frame) in video.frames().iter().enumerate() {
        frame_to_image(frame).save_with_format(frame_path(dir, i), ImageFormat::Png)?;
    }
    if let Some(masks) = masks {
        if masks.len() != video.frame_count() {
            return Err(Error::LengthMismatch {
                predictions: masks.len(),
                ground_truth: video.frame_count(),
            });
        }
        write_masks(dir, masks)?;
    }
    let meta = SequenceMeta {
        height: video.height(),
        width: video.width(),
        frame_count: video.frame_count(),
        objects,
    };
    fs::write(dir.join("meta.txt"), meta.to_text())?;
    Ok(())
}

/// Writes `mask_NNNN.png` files only.
pub fn write_masks(dir: &Path, masks: &[LabelMask]) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (i, mask) in masks.iter().enumerate() {
        mask_to_image(mask)?.save_with_format(mask_path(dir, i), ImageFormat::Png)?;
    }
    Ok(())
}

pub fn read_masks(dir: &Path, count: usize) -> Result<Vec<LabelMask>> {
    (0..count)
        .map(|i| mask_from_image(&image::open(mask_path(dir, i))?.into_luma8()))
        .collect()
}

pub fn read_sequence(dir: &Path) -> Result<Sequence> {
    let meta_file = dir.join("meta.txt");
    let text = fs::read_to_string(&meta_file)
        .map_err(|e| format_err("sequence directory", format!("{}: {e}", meta_file.display())))?;
    let meta = SequenceMeta::parse(&text)?;
    let frames = (0..meta.frame_count)
        .map(|i| Ok(frame_from_image(&image::open(frame_path(dir, i))?.into_rgb8())))
        .collect::<Result<Vec<_>>>()?;
    let video = VideoTensor::new(frames)?;
    if (video.height(), video.width()) != (meta.height, meta.width) {
        return Err(format_err(
            "sequence directory",
            format!(
                "frames are {}x{} but meta.txt says {}x{}",
                video.height(),
                video.width(),
                meta.height,
                meta.width
            ),
        ));
    }
    let masks = if mask_path(dir, 0).exists() {
        let masks = read_masks(dir, meta.frame_count)?;
        for m in &masks {
            m.check_shape(meta.height, meta.width)?;
            m.check_labels(meta.objects)?;
        }
        Some(masks)
    } else {
        None
    };
    Ok(Sequence { meta, video, masks })
}

struct Reader<'a> {
    what: &'static str,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(what: &'static str, bytes: &'a [u8], magic: &[u8; 4]) -> Result<Self> {
        let mut r = Self { what, bytes, pos: 0 };
        if r.take(4)? != magic {
            return Err(format_err(what, "bad magic"));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(format_err(what, format!("unsupported version {version}")));
        }
        Ok(r)
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| format_err(self.what, "truncated"))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| format_err(self.what, "length overflow"))?)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }

    fn finish(self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(format_err(self.what, "trailing bytes"));
        }
        Ok(())
    }
}

fn header(magic: &[u8; 4]) -> Vec<u8> {
    let mut out = magic.to_vec();
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

fn put_f64s(out: &mut Vec<u8>, values: &[f64]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode_head(params: &HeadParams) -> Vec<u8> {
    let mut out = header(HEAD_MAGIC);
    put_u32(&mut out, params.input_dim());
    put_u32(&mut out, params.hidden_dim());
    put_u32(&mut out, params.output_dim());
    out.push(match params.activation() {
        Activation::Tanh => 0,
        Activation::Identity => 1,
    });
    put_f64s(&mut out, params.as_flat());
    out
}

pub fn decode_head(bytes: &[u8]) -> Result<HeadParams> {
    let mut r = Reader::new("head model", bytes, HEAD_MAGIC)?;
    let input = r.u32()? as usize;
    let hidden = r.u32()? as usize;
    let output = r.u32()? as usize;
    let activation = match r.u8()? {
        0 => Activation::Tanh,
        1 => Activation::Identity,
        b => return Err(format_err("head model", format!("unknown activation {b}"))),
    };
    let params = r.f64s(HeadParams::param_count_for(input, hidden, output))?;
    r.finish()?;
    HeadParams::from_flat(input, hidden, output, activation, params)
}

pub fn write_head(path: &Path, params: &HeadParams) -> Result<()> {
    Ok(fs::write(path, encode_head(params))?)
}

pub fn read_head(path: &Path) -> Result<HeadParams> {
    decode_head(&fs::read(path)?)
}

pub fn model_config_path(model: &Path) -> PathBuf {
    let mut name = model.as_os_str().to_owned();
    name.push(".cfg");
    PathBuf::from(name)
}

pub fn write_model(path: &Path, params: &HeadParams, config: &TrainConfig) -> Result<()> {
    write_head(path, params)?;
    fs::write(model_config_path(path), config.to_kv_string())?;
    Ok(())
}

/// Reads a head and its sidecar, checking that their dimensions agree.
pub fn read_model(path: &Path) -> Result<(HeadParams, TrainConfig)> {
    let params = read_head(path)?;
    let config = TrainConfig::from_kv_str(&fs::read_to_string(model_config_path(path))?)?;
    if params.hidden_dim() != config.hidden_dim || params.output_dim() != config.embedding_dim {
        return Err(format_err(
            "model config",
            format!(
                "head is {}->{} but config says {}->{}",
                params.hidden_dim(),
                params.output_dim(),
                config.hidden_dim,
                config.embedding_dim
            ),
        ));
    }
    Ok((params, config))
}

pub fn encode_embedding(grid: &EmbeddingGrid) -> Vec<u8> {
    let mut out = header(EMBEDDING_MAGIC);
    for v in [grid.rows(), grid.cols(), grid.dim(), grid.stride()] {
        put_u32(&mut out, v);
    }
    put_f64s(&mut out, grid.data());
    out
}

pub fn decode_embedding(bytes: &[u8]) -> Result<EmbeddingGrid> {
    let mut r = Reader::new("embedding grid", bytes, EMBEDDING_MAGIC)?;
    let (rows, cols, dim, stride) = (r.u32()? as usize, r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
    let data = r.f64s(rows * cols * dim)?;
    r.finish()?;
    EmbeddingGrid::new(rows, cols, dim, stride, data)
}

pub fn encode_pool(pool: &ReferencePool) -> Vec<u8> {
    let mut out = header(POOL_MAGIC);
    put_u32(&mut out, pool.dim());
    out.extend_from_slice(&(pool.len() as u64).to_le_bytes());
    for i in 0..pool.len() {
        put_f64s(&mut out, pool.embedding(i));
        out.extend_from_slice(&pool.label(i).to_le_bytes());
        let o = pool.origin(i);
        for v in [o.frame, o.row, o.col] {
            put_u32(&mut out, v);
        }
        out.push(pool.provenance(i).to_byte());
    }
    out
}

pub fn decode_pool(bytes: &[u8]) -> Result<ReferencePool> {
    let mut r = Reader::new("reference pool", bytes, POOL_MAGIC)?;
    let dim = r.u32()? as usize;
    let count = r.u64()?;
    let mut pool = ReferencePool::new(dim);
    for _ in 0..count {
        let embedding = r.f64s(dim)?;
        let label = r.u32()?;
        let origin = GridCoord {
            frame: r.u32()? as usize,
            row: r.u32()? as usize,
            col: r.u32()? as usize,
        };
        let b = r.u8()?;
        let provenance =
            Provenance::from_byte(b).ok_or_else(|| format_err("reference pool", format!("unknown provenance {b}")))?;
        pool.push(ReferenceSample {
            embedding,
            label,
            origin,
            provenance,
        })?;
    }
    r.finish()?;
    Ok(pool)
}

/// One annotation per line: `frame row col label kind`. Blank lines and
/// lines starting with `#` are ignored.
pub fn format_click_log(log: &[Annotation]) -> String {
    let mut out = String::new();
    for a in log {
        writeln!(out, "{} {} {} {} {}", a.frame, a.row, a.col, a.label, a.kind.as_str()).unwrap();
    }
    out
}

pub fn parse_click_log(text: &str) -> Result<Vec<Annotation>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |detail: &str| format_err("click log", format!("line {}: {detail}", n + 1));
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != 5 {
            return Err(bad("expected `frame row col label kind`"));
        }
        let num = |s: &str| s.parse::<usize>().map_err(|_| bad(&format!("not an integer: {s:?}")));
        out.push(Annotation {
            frame: num(parts[0])?,
            row: num(parts[1])?,
            col: num(parts[2])?,
            label: num(parts[3])? as u32,
            kind: AnnotationKind::parse(parts[4]).ok_or_else(|| bad(&format!("unknown kind {:?}", parts[4])))?,
        });
    }
    Ok(out)
}

pub fn loss_curve_csv(curve: &[LossPoint]) -> String {
    let mut out = String::from("iteration,total_loss,skipped_anchor_count\n");
    for p in curve {
        writeln!(out, "{},{},{}", p.iteration, p.total, p.skipped).unwrap();
    }
    out
}

/// Per-object rows followed by one `mean` summary row per sequence.
pub fn metrics_csv(scores: &[(String, SequenceScore)]) -> String {
    let mut out = String::from("sequence,frame,object_id,J,F\n");
    for (name, score) in scores {
        for o in &score.per_object {
            writeln!(out, "{name},{},{},{:.6},{:.6}", o.frame, o.object, o.j, o.f).unwrap();
        }
        writeln!(out, "{name},mean,all,{:.6},{:.6}", score.mean_j, score.mean_f).unwrap();
    }
    out
}

/// One row per curve point; the seed-averaged curve uses seed `mean`.
pub fn robot_curve_csv(run: &RobotRun) -> String {
    let mut out = String::from("seed,click,clicks_per_frame,mean_J\n");
    let rows = run
        .seeds
        .iter()
        .map(|s| s.to_string())
        .zip(&run.per_seed)
        .chain(std::iter::once(("mean".to_string(), &run.mean)));
    for (seed, curve) in rows {
        for (i, p) in curve.iter().enumerate() {
            writeln!(out, "{seed},{},{:.6},{:.6}", i + 1, p.clicks_per_frame, p.mean_j).unwrap();
        }
    }
    out
}
