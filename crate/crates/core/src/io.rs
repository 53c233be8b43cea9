//! Volume and mask file formats.
//!
//! The canonical format is raw little-endian IEEE-754 `float32` in z-major,
//! then y, then x order, described by a JSON sidecar stored next to it at
//! `<path>.json`. Masks use the same layout with one `uint8` per voxel.
//! Multipage TIFF is supported for uncompressed 8/16-bit grayscale (scaled
//! into `[0, 1]`) and 32-bit float; writing always produces 32-bit float.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use ndarray::Array3;
use serde::{Deserialize, Serialize};
use tiff::decoder::{Decoder, DecodingResult};
use tiff::encoder::{colortype, TiffEncoder};

use crate::error::{DestripeError, Result};
use crate::volume::{StripeAxis, Volume, VoxelSpacing};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VolumeFormat {
    TiffMultipage,
    RawF32,
}

impl VolumeFormat {
    /// Guess from the extension: `.tif`/`.tiff` is TIFF, anything else raw.
    pub fn from_path(path: &Path) -> VolumeFormat {
        match path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase())
        {
            Some(ext) if ext == "tif" || ext == "tiff" => VolumeFormat::TiffMultipage,
            _ => VolumeFormat::RawF32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawSidecar {
    pub shape: [usize; 3],
    pub dtype: String,
    pub order: String,
    #[serde(default)]
    pub voxel_spacing: VoxelSpacing,
    #[serde(default)]
    pub stripe_axis: StripeAxis,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

fn read_sidecar(path: &Path, dtype: &str) -> Result<RawSidecar> {
    let side = sidecar_path(path);
    let text = fs::read_to_string(&side).map_err(|e| DestripeError::io(&side, e))?;
    let sc: RawSidecar = serde_json::from_str(&text).map_err(|e| DestripeError::Format {
        path: side.clone(),
        reason: e.to_string(),
    })?;
    if sc.dtype != dtype || sc.order != "zyx" {
        return Err(DestripeError::Format {
            path: side,
            reason: format!(
                "expected dtype \"{dtype}\" and order \"zyx\", found \"{}\" / \"{}\"",
                sc.dtype, sc.order
            ),
        });
    }
    Ok(sc)
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = BufWriter::new(File::create(path).map_err(|e| DestripeError::io(path, e))?);
    f.write_all(bytes).map_err(|e| DestripeError::io(path, e))?;
    f.flush().map_err(|e| DestripeError::io(path, e))
}

fn write_sidecar(path: &Path, sc: &RawSidecar) -> Result<()> {
    let side = sidecar_path(path);
    let text = serde_json::to_string_pretty(sc).expect("sidecar serializes");
    fs::write(&side, text).map_err(|e| DestripeError::io(&side, e))
}

pub fn load_volume(path: &Path, format: VolumeFormat) -> Result<Volume> {
    match format {
        VolumeFormat::RawF32 => load_raw(path),
        VolumeFormat::TiffMultipage => load_tiff(path),
    }
}

pub fn save_volume(v: &Volume, path: &Path, format: VolumeFormat) -> Result<()> {
    match format {
        VolumeFormat::RawF32 => save_raw(v, path),
        VolumeFormat::TiffMultipage => save_tiff(v, path),
    }
}

fn load_raw(path: &Path) -> Result<Volume> {
    let sc = read_sidecar(path, "float32")?;
    let bytes = fs::read(path).map_err(|e| DestripeError::io(path, e))?;
    let [d, h, w] = sc.shape;
    let expected = d * h * w;
    if bytes.len() % 4 != 0 || bytes.len() / 4 != expected {
        return Err(DestripeError::ShapeMismatch {
            expected,
            found: bytes.len() / 4,
        });
    }
    let values: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    let data = Array3::from_shape_vec((d, h, w), values).expect("length checked above");
    Volume::new(data, sc.voxel_spacing, sc.stripe_axis)
}

fn save_raw(v: &Volume, path: &Path) -> Result<()> {
    let (d, h, w) = v.shape();
    let mut bytes = Vec::with_capacity(d * h * w * 4);
    for &x in v.data.iter() {
        bytes.extend_from_slice(&(x as f32).to_le_bytes());
    }
    write_bytes(path, &bytes)?;
    write_sidecar(
        path,
        &RawSidecar {
            shape: [d, h, w],
            dtype: "float32".into(),
            order: "zyx".into(),
            voxel_spacing: v.voxel_spacing,
            stripe_axis: v.stripe_axis,
        },
    )
}

/// Writes a binary mask as one byte per voxel with a `uint8` sidecar.
pub fn save_mask(mask: &Array3<u8>, path: &Path) -> Result<()> {
    let (d, h, w) = mask.dim();
    let bytes: Vec<u8> = mask.iter().copied().collect();
    write_bytes(path, &bytes)?;
    write_sidecar(
        path,
        &RawSidecar {
            shape: [d, h, w],
            dtype: "uint8".into(),
            order: "zyx".into(),
            voxel_spacing: VoxelSpacing::default(),
            stripe_axis: StripeAxis::default(),
        },
    )
}

pub fn load_mask(path: &Path) -> Result<Array3<u8>> {
    let sc = read_sidecar(path, "uint8")?;
    let bytes = fs::read(path).map_err(|e| DestripeError::io(path, e))?;
    let [d, h, w] = sc.shape;
    if bytes.len() != d * h * w {
        return Err(DestripeError::ShapeMismatch {
            expected: d * h * w,
            found: bytes.len(),
        });
    }
    Ok(Array3::from_shape_vec((d, h, w), bytes).expect("length checked above"))
}

fn tiff_err(path: &Path, e: tiff::TiffError) -> DestripeError {
    DestripeError::Format {
        path: path.to_path_buf(),
        reason: e.to_string(),
    }
}

fn load_tiff(path: &Path) -> Result<Volume> {
    let file = File::open(path).map_err(|e| DestripeError::io(path, e))?;
    let mut dec = Decoder::new(BufReader::new(file)).map_err(|e| tiff_err(path, e))?;
    let mut pages: Vec<f64> = Vec::new();
    let mut dims: Option<(u32, u32)> = None;
    let mut depth = 0usize;
    loop {
        let page_dims = dec.dimensions().map_err(|e| tiff_err(path, e))?;
        if *dims.get_or_insert(page_dims) != page_dims {
            return Err(DestripeError::Format {
                path: path.to_path_buf(),
                reason: format!("page {depth} has dimensions {page_dims:?}, expected {dims:?}"),
            });
        }
        match dec.read_image().map_err(|e| tiff_err(path, e))? {
            DecodingResult::U8(buf) => pages.extend(buf.iter().map(|&v| v as f64 / u8::MAX as f64)),
            DecodingResult::U16(buf) => {
                pages.extend(buf.iter().map(|&v| v as f64 / u16::MAX as f64))
            }
            DecodingResult::F32(buf) => pages.extend(buf.iter().map(|&v| v as f64)),
            _ => {
                return Err(DestripeError::Format {
                    path: path.to_path_buf(),
                    reason: "only 8/16-bit grayscale and 32-bit float TIFF pages are supported"
                        .into(),
                })
            }
        }
        depth += 1;
        if !dec.more_images() {
            break;
        }
        dec.next_image().map_err(|e| tiff_err(path, e))?;
    }
    let (w, h) = dims.expect("at least one page");
    let expected = depth * h as usize * w as usize;
    if pages.len() != expected {
        return Err(DestripeError::ShapeMismatch {
            expected,
            found: pages.len(),
        });
    }
    let data =
        Array3::from_shape_vec((depth, h as usize, w as usize), pages).expect("length checked");
    Volume::new(data, VoxelSpacing::default(), StripeAxis::default())
}

fn save_tiff(v: &Volume, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| DestripeError::io(path, e))?;
    let mut enc = TiffEncoder::new(BufWriter::new(file)).map_err(|e| tiff_err(path, e))?;
    let (_, h, w) = v.shape();
    for slice in v.data.outer_iter() {
        let page: Vec<f32> = slice.iter().map(|&x| x as f32).collect();
        enc.write_image::<colortype::Gray32Float>(w as u32, h as u32, &page)
            .map_err(|e| tiff_err(path, e))?;
    }
    Ok(())
}
