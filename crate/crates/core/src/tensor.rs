//! Multi-view latent stacks and their on-disk forms.
//!
//! A [`MultiViewLatent`] is a `[views, channels, height, width]` array of
//! `f64`. Everything in the optimization path runs in double precision; the
//! `MVLT` container stores `f32` (round-to-nearest on write), and the PNG
//! export is a lossy 8-bit view meant only for looking at.
//!
//! `MVLT` layout, all integers little-endian:
//!
//! ```text
//! b"MVLT" | u32 version = 1 | u8 dtype (0 = f32) | u32 rank | u32 dims[rank] | payload
//! ```
//!
//! The payload is the row-major element sequence as little-endian `f32`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use ndarray::{Array3, Array4, ArrayView3, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MVLT_MAGIC: &[u8; 4] = b"MVLT";
pub const MVLT_VERSION: u32 = 1;
pub const DTYPE_F32: u8 = 0;
pub const DTYPE_F64: u8 = 1;

/// Element type of an `MVLT` payload.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    fn code(self) -> u8 {
        match self {
            Dtype::F32 => DTYPE_F32,
            Dtype::F64 => DTYPE_F64,
        }
    }

    fn from_code(code: u8) -> Option<Self> {
        match code {
            DTYPE_F32 => Some(Dtype::F32),
            DTYPE_F64 => Some(Dtype::F64),
            _ => None,
        }
    }

    fn width(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("cannot stack an empty list of views")]
    Empty,
    #[error("view {index} has shape {found:?}, expected {expected:?}")]
    ShapeMismatch {
        index: usize,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("shape mismatch: {left:?} vs {right:?}")]
    Incompatible { left: Vec<usize>, right: Vec<usize> },
    #[error("latent contains a non-finite value at flat index {0}")]
    NonFinite(usize),
    #[error("invalid dimensions {0:?}: every extent must be positive")]
    InvalidDims(Vec<usize>),
    #[error("bad magic {0:?}, expected \"MVLT\"")]
    BadMagic([u8; 4]),
    #[error("unsupported container version {0}")]
    UnsupportedVersion(u32),
    #[error("unsupported dtype code {0}")]
    UnsupportedDtype(u8),
    #[error("expected rank {expected}, found {found}")]
    Rank { expected: usize, found: usize },
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("png export supports 1 or 3 channels, found {0}")]
    PngChannels(usize),
    #[error("png encoding failed: {0}")]
    Png(#[from] image::ImageError),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = TensorError> = std::result::Result<T, E>;

/// A `[N, C, H, W]` stack of per-view latents.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiViewLatent {
    data: Array4<f64>,
}

impl MultiViewLatent {
    /// Wraps an array, rejecting zero extents and non-finite entries.
    pub fn new(data: Array4<f64>) -> Result<Self> {
        if data.shape().contains(&0) {
            return Err(TensorError::InvalidDims(data.shape().to_vec()));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite(i));
        }
        Ok(Self { data })
    }

    /// Internal constructor for results of arithmetic on already-valid latents.
    pub(crate) fn from_array(data: Array4<f64>) -> Self {
        debug_assert!(data.iter().all(|v| v.is_finite()));
        Self { data }
    }

    pub fn zeros(shape: [usize; 4]) -> Self {
        Self {
            data: Array4::zeros(shape),
        }
    }

    pub fn from_elem(shape: [usize; 4], value: f64) -> Self {
        Self {
            data: Array4::from_elem(shape, value),
        }
    }

    /// Replicates one `[C, H, W]` slice across `n_views` views.
    pub fn replicate(slice: &Array3<f64>, n_views: usize) -> Result<Self> {
        Self::stack_views(&vec![slice.clone(); n_views])
    }

    /// Stacks `[C, H, W]` images in order.
    pub fn stack_views(images: &[Array3<f64>]) -> Result<Self> {
        let first = images.first().ok_or(TensorError::Empty)?;
        let expected = first.shape().to_vec();
        for (index, img) in images.iter().enumerate() {
            if img.shape() != expected.as_slice() {
                return Err(TensorError::ShapeMismatch {
                    index,
                    expected,
                    found: img.shape().to_vec(),
                });
            }
        }
        let views: Vec<ArrayView3<f64>> = images.iter().map(|a| a.view()).collect();
        let data = ndarray::stack(Axis(0), &views).expect("shapes checked above");
        Self::new(data)
    }

    pub fn unstack(&self) -> Vec<Array3<f64>> {
        self.data.outer_iter().map(|v| v.to_owned()).collect()
    }

    pub fn shape(&self) -> [usize; 4] {
        let s = self.data.shape();
        [s[0], s[1], s[2], s[3]]
    }

    pub fn n_views(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn channels(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn height(&self) -> usize {
        self.data.shape()[2]
    }

    pub fn width(&self) -> usize {
        self.data.shape()[3]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &Array4<f64> {
        &self.data
    }

    pub fn into_inner(self) -> Array4<f64> {
        self.data
    }

    pub fn view(&self, index: usize) -> ArrayView3<'_, f64> {
        self.data.index_axis(Axis(0), index)
    }

    pub fn check_same_shape(&self, other: &Self) -> Result<()> {
        if self.data.shape() != other.data.shape() {
            return Err(TensorError::Incompatible {
                left: self.data.shape().to_vec(),
                right: other.data.shape().to_vec(),
            });
        }
        Ok(())
    }

    /// `a * self + b * other`.
    pub fn lincomb(&self, a: f64, other: &Self, b: f64) -> Result<Self> {
        self.check_same_shape(other)?;
        let mut out = self.data.clone();
        ndarray::Zip::from(&mut out)
            .and(&other.data)
            .for_each(|x, &y| *x = a * *x + b * y);
        Ok(Self::from_array(out))
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.check_same_shape(other)?;
        Ok(Self::from_array(&self.data - &other.data))
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_same_shape(other)?;
        Ok(Self::from_array(&self.data + &other.data))
    }

    pub fn scale(&self, k: f64) -> Self {
        Self::from_array(&self.data * k)
    }

    pub fn sum_squares(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn rms(&self) -> f64 {
        (self.sum_squares() / self.len() as f64).sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(other.data.iter())
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    /// Per-channel mean over all views and pixels.
    pub fn channel_means(&self) -> Vec<f64> {
        let [n, c, h, w] = self.shape();
        let count = (n * h * w) as f64;
        (0..c)
            .map(|ch| self.data.index_axis(Axis(1), ch).sum() / count)
            .collect()
    }
}

/// Source/target latents for the two distillation pathways.
///
/// The source is captured once and never replaced; only the target moves.
#[derive(Debug, Clone)]
pub struct LatentPair {
    source: MultiViewLatent,
    target: MultiViewLatent,
}

impl LatentPair {
    pub fn new(source: MultiViewLatent, target: MultiViewLatent) -> Result<Self> {
        source.check_same_shape(&target)?;
        Ok(Self { source, target })
    }

    pub fn source(&self) -> &MultiViewLatent {
        &self.source
    }

    pub fn target(&self) -> &MultiViewLatent {
        &self.target
    }

    pub fn with_target(&self, target: MultiViewLatent) -> Result<Self> {
        Self::new(self.source.clone(), target)
    }
}

/// Serializes a row-major tensor into the `MVLT` container.
pub fn write_tensor<W: Write>(
    mut w: W,
    dims: &[usize],
    values: &[f64],
    dtype: Dtype,
) -> Result<()> {
    if dims.is_empty() || dims.contains(&0) {
        return Err(TensorError::InvalidDims(dims.to_vec()));
    }
    debug_assert_eq!(dims.iter().product::<usize>(), values.len());
    w.write_all(MVLT_MAGIC)?;
    w.write_all(&MVLT_VERSION.to_le_bytes())?;
    w.write_all(&[dtype.code()])?;
    w.write_all(&(dims.len() as u32).to_le_bytes())?;
    for &d in dims {
        w.write_all(&(d as u32).to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(values.len() * dtype.width());
    for &v in values {
        match dtype {
            Dtype::F32 => buf.extend_from_slice(&(v as f32).to_le_bytes()),
            Dtype::F64 => buf.extend_from_slice(&v.to_le_bytes()),
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

fn read_exact_or_truncated<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..])? {
            0 => {
                return Err(TensorError::Truncated {
                    expected: buf.len(),
                    found: filled,
                })
            }
            n => filled += n,
        }
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact_or_truncated(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

/// Reads one `MVLT` container of either dtype, returning its dims and values.
pub fn read_tensor<R: Read>(mut r: R) -> Result<(Vec<usize>, Vec<f64>)> {
    let mut magic = [0u8; 4];
    read_exact_or_truncated(&mut r, &mut magic)?;
    if &magic != MVLT_MAGIC {
        return Err(TensorError::BadMagic(magic));
    }
    let version = read_u32(&mut r)?;
    if version != MVLT_VERSION {
        return Err(TensorError::UnsupportedVersion(version));
    }
    let mut dtype = [0u8; 1];
    read_exact_or_truncated(&mut r, &mut dtype)?;
    let dtype = Dtype::from_code(dtype[0]).ok_or(TensorError::UnsupportedDtype(dtype[0]))?;
    let rank = read_u32(&mut r)? as usize;
    let mut dims = Vec::with_capacity(rank);
    for _ in 0..rank {
        dims.push(read_u32(&mut r)? as usize);
    }
    if dims.is_empty() || dims.contains(&0) {
        return Err(TensorError::InvalidDims(dims));
    }
    let count: usize = dims.iter().product();
    let mut payload = vec![0u8; count * dtype.width()];
    read_exact_or_truncated(&mut r, &mut payload)?;
    let values = match dtype {
        Dtype::F32 => payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
            .collect(),
        Dtype::F64 => payload
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect(),
    };
    Ok((dims, values))
}

pub fn save_stack(stack: &MultiViewLatent, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let values: Vec<f64> = stack.data.iter().copied().collect();
    write_tensor(&mut w, stack.data.shape(), &values, Dtype::F64)?;
    w.flush()?;
    Ok(())
}

pub fn load_stack(path: impl AsRef<Path>) -> Result<MultiViewLatent> {
    let r = BufReader::new(File::open(path)?);
    let (dims, values) = read_tensor(r)?;
    if dims.len() != 4 {
        return Err(TensorError::Rank {
            expected: 4,
            found: dims.len(),
        });
    }
    let data = Array4::from_shape_vec((dims[0], dims[1], dims[2], dims[3]), values)
        .expect("payload length matches dims");
    MultiViewLatent::new(data)
}

/// How latent values map to 8-bit pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PngNormalization {
    /// Per-channel min/max over the whole stack mapped to [0, 255].
    MinMax,
    /// Values clamped to [0, 1].
    Clamp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelRange {
    pub lo: f64,
    pub hi: f64,
}

/// Contents of `<prefix>_norm.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PngSidecar {
    pub mode: PngNormalization,
    pub channels: Vec<ChannelRange>,
    pub files: Vec<String>,
}

pub fn png_view_path(prefix: &Path, view: usize) -> PathBuf {
    let name = prefix
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    prefix.with_file_name(format!("{name}_{view:03}.png"))
}

pub fn png_sidecar_path(prefix: &Path) -> PathBuf {
    let name = prefix
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    prefix.with_file_name(format!("{name}_norm.json"))
}

/// Writes one PNG per view plus the normalization sidecar.
pub fn export_png(
    stack: &MultiViewLatent,
    prefix: impl AsRef<Path>,
    mode: PngNormalization,
) -> Result<PngSidecar> {
    let prefix = prefix.as_ref();
    let [n, c, h, w] = stack.shape();
    if c != 1 && c != 3 {
        return Err(TensorError::PngChannels(c));
    }
    let channels: Vec<ChannelRange> = (0..c)
        .map(|ch| match mode {
            PngNormalization::Clamp => ChannelRange { lo: 0.0, hi: 1.0 },
            PngNormalization::MinMax => {
                let plane = stack.data.index_axis(Axis(1), ch);
                let lo = plane.fold(f64::INFINITY, |m, &v| m.min(v));
                let hi = plane.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
                // a flat channel maps to black
                let hi = if hi - lo > 1e-300 { hi } else { lo + 1.0 };
                ChannelRange { lo, hi }
            }
        })
        .collect();
    let to_u8 = |v: f64, r: &ChannelRange| -> u8 {
        let t = ((v - r.lo) / (r.hi - r.lo)).clamp(0.0, 1.0);
        (t * 255.0).round() as u8
    };

    let mut files = Vec::with_capacity(n);
    for view in 0..n {
        let path = png_view_path(prefix, view);
        let mut bytes = Vec::with_capacity(h * w * c);
        for y in 0..h {
            for x in 0..w {
                for (ch, range) in channels.iter().enumerate() {
                    bytes.push(to_u8(stack.data[[view, ch, y, x]], range));
                }
            }
        }
        let color = if c == 3 {
            image::ExtendedColorType::Rgb8
        } else {
            image::ExtendedColorType::L8
        };
        image::save_buffer(&path, &bytes, w as u32, h as u32, color)?;
        files.push(
            path.file_name()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default(),
        );
    }
    let sidecar = PngSidecar {
        mode,
        channels,
        files,
    };
    std::fs::write(
        png_sidecar_path(prefix),
        serde_json::to_string_pretty(&sidecar)?,
    )?;
    Ok(sidecar)
}
