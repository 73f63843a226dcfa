//! PNG frames, PFM depth maps and the grid manifest.
//!
//! Grid layout on disk: `manifest.json` plus one `view{vvv}_time{ttt}.png`
//! per cell. Input videos use `frame_{ttt}.png` and `depth_{ttt}.pfm`.

use std::fs;
use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageBuffer, Luma, Rgb};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::TrajectorySpec;
use crate::frame::{DepthMap, Dims, Frame, FrameError};
use crate::grid::{CellStatus, Grid4D};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("cannot access {path}")]
    Fs {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {detail}")]
    Image { path: PathBuf, detail: String },
    #[error("{path}: unsupported PNG layout {layout}; expected 8- or 16-bit grayscale or RGB")]
    UnsupportedPng { path: PathBuf, layout: String },
    #[error("{path}: malformed PFM: {detail}")]
    Pfm { path: PathBuf, detail: String },
    #[error("invalid data in {path}")]
    Frame {
        path: PathBuf,
        #[source]
        source: FrameError,
    },
    #[error("{path}: bad manifest: {detail}")]
    Manifest { path: PathBuf, detail: String },
    #[error("{dir}: missing cells {}", format_cells(cells))]
    MissingCells { dir: PathBuf, cells: Vec<(usize, usize)> },
}

fn format_cells(cells: &[(usize, usize)]) -> String {
    cells
        .iter()
        .map(|(v, t)| format!("(view {v}, time {t})"))
        .collect::<Vec<_>>()
        .join(", ")
}

fn fs_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Fs {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BitDepth {
    #[default]
    Eight,
    Sixteen,
}

impl BitDepth {
    pub fn bits(self) -> u8 {
        match self {
            BitDepth::Eight => 8,
            BitDepth::Sixteen => 16,
        }
    }
}

fn quantize(v: f32, max: f32) -> f32 {
    (v.clamp(0.0, 1.0) * max).round()
}

/// Writes a 1- or 3-channel frame, clamping values to [0, 1].
pub fn save_png(path: &Path, frame: &Frame, depth: BitDepth) -> Result<(), IoError> {
    let (h, w) = (frame.height() as u32, frame.width() as u32);
    let img = match (frame.channels(), depth) {
        (1, BitDepth::Eight) => DynamicImage::ImageLuma8(
            ImageBuffer::<Luma<u8>, _>::from_raw(
                w,
                h,
                frame.data().iter().map(|&v| quantize(v, 255.0) as u8).collect(),
            )
            .expect("buffer sized from frame"),
        ),
        (1, BitDepth::Sixteen) => DynamicImage::ImageLuma16(
            ImageBuffer::<Luma<u16>, _>::from_raw(
                w,
                h,
                frame.data().iter().map(|&v| quantize(v, 65535.0) as u16).collect(),
            )
            .expect("buffer sized from frame"),
        ),
        (3, BitDepth::Eight) => DynamicImage::ImageRgb8(
            ImageBuffer::<Rgb<u8>, _>::from_raw(w, h, frame.data().iter().map(|&v| quantize(v, 255.0) as u8).collect())
                .expect("buffer sized from frame"),
        ),
        (3, BitDepth::Sixteen) => DynamicImage::ImageRgb16(
            ImageBuffer::<Rgb<u16>, _>::from_raw(
                w,
                h,
                frame.data().iter().map(|&v| quantize(v, 65535.0) as u16).collect(),
            )
            .expect("buffer sized from frame"),
        ),
        (c, _) => {
            return Err(IoError::Frame {
                path: path.to_path_buf(),
                source: FrameError::Channels(c),
            })
        }
    };
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| IoError::Image {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })
}

/// Reads an 8- or 16-bit grayscale or RGB PNG into [0, 1].
pub fn load_png(path: &Path) -> Result<Frame, IoError> {
    let bytes = fs::read(path).map_err(fs_err(path))?;
    let img = image::load_from_memory_with_format(&bytes, image::ImageFormat::Png).map_err(|e| IoError::Image {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let (channels, data): (usize, Vec<f32>) = match &img {
        DynamicImage::ImageLuma8(b) => (1, b.as_raw().iter().map(|&v| v as f32 / 255.0).collect()),
        DynamicImage::ImageLuma16(b) => (1, b.as_raw().iter().map(|&v| v as f32 / 65535.0).collect()),
        DynamicImage::ImageRgb8(b) => (3, b.as_raw().iter().map(|&v| v as f32 / 255.0).collect()),
        DynamicImage::ImageRgb16(b) => (3, b.as_raw().iter().map(|&v| v as f32 / 65535.0).collect()),
        other => {
            return Err(IoError::UnsupportedPng {
                path: path.to_path_buf(),
                layout: format!("{:?}", other.color()),
            })
        }
    };
    Frame::from_vec(Dims::new(h, w, channels), data).map_err(|source| IoError::Frame {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes a single-channel little-endian PFM (rows stored bottom to top).
pub fn save_pfm(path: &Path, depth: &DepthMap) -> Result<(), IoError> {
    let (h, w) = (depth.height(), depth.width());
    let mut out = format!("Pf\n{w} {h}\n-1.0\n").into_bytes();
    out.reserve(h * w * 4);
    for row in (0..h).rev() {
        for col in 0..w {
            out.extend_from_slice(&depth.get(row, col).to_le_bytes());
        }
    }
    fs::write(path, out).map_err(fs_err(path))
}

/// Reads a single-channel PFM. A negative scale means little-endian.
/// Non-positive or non-finite depths are rejected with their (top-down)
/// pixel coordinates.
pub fn load_pfm(path: &Path) -> Result<DepthMap, IoError> {
    let bytes = fs::read(path).map_err(fs_err(path))?;
    let bad = |detail: String| IoError::Pfm {
        path: path.to_path_buf(),
        detail,
    };

    let mut pos = 0;
    let mut tokens = Vec::with_capacity(4);
    while tokens.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header".into()));
        }
        tokens.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;

    match tokens[0].as_str() {
        "Pf" => {}
        "PF" => return Err(bad("colour PFM is not a depth map".into())),
        other => return Err(bad(format!("unknown magic {other:?}"))),
    }
    let parse_dim = |s: &str| s.parse::<usize>().map_err(|_| bad(format!("bad dimension {s:?}")));
    let w = parse_dim(&tokens[1])?;
    let h = parse_dim(&tokens[2])?;
    let scale: f64 = tokens[3]
        .parse()
        .map_err(|_| bad(format!("bad scale {:?}", tokens[3])))?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(bad(format!("bad scale {scale}")));
    }
    let little = scale < 0.0;
    let need = w * h * 4;
    let raster = bytes.get(pos..).unwrap_or(&[]);
    if raster.len() != need {
        return Err(bad(format!("expected {need} raster bytes, found {}", raster.len())));
    }

    let mut data = vec![0f32; w * h];
    for (i, chunk) in raster.chunks_exact(4).enumerate() {
        let b = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if little {
            f32::from_le_bytes(b)
        } else {
            f32::from_be_bytes(b)
        };
        let (file_row, col) = (i / w, i % w);
        data[(h - 1 - file_row) * w + col] = v;
    }
    DepthMap::from_vec(h, w, data).map_err(|source| IoError::Frame {
        path: path.to_path_buf(),
        source,
    })
}

pub fn input_frame_path(dir: &Path, time: usize) -> PathBuf {
    dir.join(format!("frame_{time:03}.png"))
}

pub fn input_depth_path(dir: &Path, time: usize) -> PathBuf {
    dir.join(format!("depth_{time:03}.pfm"))
}

pub fn cell_file_name(view: usize, time: usize) -> String {
    format!("view{view:03}_time{time:03}.png")
}

pub fn save_input_video(dir: &Path, frames: &[Frame], depths: &[DepthMap], depth: BitDepth) -> Result<(), IoError> {
    fs::create_dir_all(dir).map_err(fs_err(dir))?;
    for (t, (f, d)) in frames.iter().zip(depths).enumerate() {
        save_png(&input_frame_path(dir, t), f, depth)?;
        save_pfm(&input_depth_path(dir, t), d)?;
    }
    Ok(())
}

/// Loads `n_frames` frames and depth maps, checking that sizes agree.
pub fn load_input_video(dir: &Path, n_frames: usize) -> Result<(Vec<Frame>, Vec<DepthMap>), IoError> {
    let mut frames = Vec::with_capacity(n_frames);
    let mut depths = Vec::with_capacity(n_frames);
    for t in 0..n_frames {
        let fp = input_frame_path(dir, t);
        let f = load_png(&fp)?;
        let dp = input_depth_path(dir, t);
        let d = load_pfm(&dp)?;
        if (d.height(), d.width()) != (f.height(), f.width()) {
            return Err(IoError::Frame {
                path: dp,
                source: FrameError::Shape(format!(
                    "depth is {}x{} but the frame is {}x{}",
                    d.height(),
                    d.width(),
                    f.height(),
                    f.width()
                )),
            });
        }
        if let Some(first) = frames.first() {
            let first: &Frame = first;
            if first.dims() != f.dims() {
                return Err(IoError::Frame {
                    path: fp,
                    source: FrameError::Shape(format!("frame {t} differs in size from frame 0")),
                });
            }
        }
        frames.push(f);
        depths.push(d);
    }
    Ok((frames, depths))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestCell {
    pub view: usize,
    pub time: usize,
    pub file: String,
    pub status: CellStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridManifest {
    pub format_version: u32,
    pub n_views: usize,
    pub n_frames: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub bit_depth: BitDepth,
    pub seed: u64,
    pub config_digest: String,
    pub trajectory: Option<TrajectorySpec>,
    pub cells: Vec<ManifestCell>,
}

/// Run metadata recorded alongside the frames.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestMeta {
    pub seed: u64,
    pub config_digest: String,
    pub trajectory: Option<TrajectorySpec>,
    pub bit_depth: BitDepth,
}

/// Writes every cell and the manifest. Output is byte-identical for
/// identical grids and metadata.
pub fn write_grid(dir: &Path, grid: &Grid4D, meta: &ManifestMeta) -> Result<GridManifest, IoError> {
    fs::create_dir_all(dir).map_err(fs_err(dir))?;
    let dims = grid.dims();
    let mut cells = Vec::with_capacity(grid.n_views() * grid.n_frames());
    for v in 0..grid.n_views() {
        for t in 0..grid.n_frames() {
            let file = cell_file_name(v, t);
            save_png(&dir.join(&file), grid.frame(v, t), meta.bit_depth)?;
            cells.push(ManifestCell {
                view: v,
                time: t,
                file,
                status: grid.status(v, t),
            });
        }
    }
    let manifest = GridManifest {
        format_version: MANIFEST_VERSION,
        n_views: grid.n_views(),
        n_frames: grid.n_frames(),
        height: dims.height,
        width: dims.width,
        channels: dims.channels,
        bit_depth: meta.bit_depth,
        seed: meta.seed,
        config_digest: meta.config_digest.clone(),
        trajectory: meta.trajectory.clone(),
        cells,
    };
    let path = dir.join(MANIFEST_FILE);
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    text.push('\n');
    fs::write(&path, text).map_err(fs_err(&path))?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<GridManifest, IoError> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(fs_err(&path))?;
    let manifest: GridManifest = serde_json::from_str(&text).map_err(|e| IoError::Manifest {
        path: path.clone(),
        detail: e.to_string(),
    })?;
    if manifest.format_version != MANIFEST_VERSION {
        return Err(IoError::Manifest {
            path,
            detail: format!(
                "format version {} (this build reads {MANIFEST_VERSION})",
                manifest.format_version
            ),
        });
    }
    Ok(manifest)
}

/// Loads a written grid as `[view][time]` frames. Every cell must be listed
/// once and its file must exist; all missing cells are reported together.
pub fn read_grid(dir: &Path) -> Result<(GridManifest, Vec<Vec<Frame>>), IoError> {
    let manifest = read_manifest(dir)?;
    let (n, f) = (manifest.n_views, manifest.n_frames);
    let mut files: Vec<Vec<Option<&str>>> = vec![vec![None; f]; n];
    for c in &manifest.cells {
        if c.view >= n || c.time >= f {
            return Err(IoError::Manifest {
                path: dir.join(MANIFEST_FILE),
                detail: format!("cell (view {}, time {}) is outside the {n}x{f} grid", c.view, c.time),
            });
        }
        if files[c.view][c.time].replace(&c.file).is_some() {
            return Err(IoError::Manifest {
                path: dir.join(MANIFEST_FILE),
                detail: format!("cell (view {}, time {}) is listed twice", c.view, c.time),
            });
        }
    }
    let mut missing = Vec::new();
    for (v, row) in files.iter().enumerate() {
        for (t, file) in row.iter().enumerate() {
            if !file.is_some_and(|name| dir.join(name).is_file()) {
                missing.push((v, t));
            }
        }
    }
    if !missing.is_empty() {
        return Err(IoError::MissingCells {
            dir: dir.to_path_buf(),
            cells: missing,
        });
    }

    let expected = Dims::new(manifest.height, manifest.width, manifest.channels);
    let mut frames = Vec::with_capacity(n);
    for row in &files {
        let mut out = Vec::with_capacity(f);
        for name in row {
            let path = dir.join(name.expect("checked above"));
            let frame = load_png(&path)?;
            if frame.dims() != expected {
                return Err(IoError::Frame {
                    path,
                    source: FrameError::Shape(format!("{:?} but the manifest says {expected:?}", frame.dims())),
                });
            }
            out.push(frame);
        }
        frames.push(out);
    }
    Ok((manifest, frames))
}
