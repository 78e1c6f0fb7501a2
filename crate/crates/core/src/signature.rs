//! Truncated path signatures of planar piecewise-linear paths and the
//! feature-map rasterizer built on them.
//!
//! A level-`k` signature term of a 2-D path has `2^k` coefficients stored in
//! row-major tensor order: the coefficient for the word `(i_1, .., i_k)` with
//! `i_j ∈ {0 = x, 1 = y}` sits at index `Σ i_j 2^(k-j)`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::ink::{Point, PseudoCharacter};
use crate::{CHAR_BOX, GRID_SIZE};

/// Levels `0..=n` of a truncated signature.
#[derive(Clone, Debug, PartialEq)]
pub struct SignatureTensor {
    levels: Vec<Vec<f64>>,
}

/// Number of coefficients in a signature truncated at `level`:
/// `2^(level + 1) - 1`.
pub fn channel_count(level: usize) -> usize {
    (1usize << (level + 1)) - 1
}

impl SignatureTensor {
    /// Signature of the constant path: 1 at level 0, zero above.
    pub fn identity(level: usize) -> Self {
        let mut levels: Vec<Vec<f64>> = (0..=level).map(|k| vec![0.0; 1 << k]).collect();
        levels[0][0] = 1.0;
        SignatureTensor { levels }
    }

    /// Builds a tensor from explicit levels; level `k` must have `2^k` entries.
    pub fn from_levels(levels: Vec<Vec<f64>>) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::Validation("signature needs level 0".into()));
        }
        for (k, l) in levels.iter().enumerate() {
            if l.len() != 1 << k {
                return Err(Error::Validation(format!(
                    "level {k} has {} coefficients, expected {}",
                    l.len(),
                    1 << k
                )));
            }
        }
        Ok(SignatureTensor { levels })
    }

    /// Truncation level `n`.
    pub fn level(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn term(&self, k: usize) -> &[f64] {
        &self.levels[k]
    }

    pub fn levels(&self) -> &[Vec<f64>] {
        &self.levels
    }

    /// All coefficients, level by level; `2^(n+1) - 1` values.
    pub fn flatten(&self) -> Vec<f64> {
        self.levels.iter().flatten().copied().collect()
    }
}

/// Signature of a straight line with displacement `delta`: level `k` is
/// `delta^{⊗k} / k!`, built by the recursion `P^k = P^{k-1} ⊗ delta / k`.
pub fn line_signature(delta: (f64, f64), level: usize) -> SignatureTensor {
    let mut levels = Vec::with_capacity(level + 1);
    levels.push(vec![1.0]);
    for k in 1..=level {
        let prev: &Vec<f64> = &levels[k - 1];
        let inv = 1.0 / k as f64;
        let next = prev
            .iter()
            .flat_map(|&a| [a * delta.0 * inv, a * delta.1 * inv])
            .collect();
        levels.push(next);
    }
    SignatureTensor { levels }
}

/// Truncated tensor product: level `k` of the result is
/// `Σ_{j=0..k} a^j ⊗ b^{k-j}`. This is the signature of the concatenated
/// path (Chen's identity).
pub fn chen_concat(a: &SignatureTensor, b: &SignatureTensor) -> Result<SignatureTensor> {
    if a.level() != b.level() {
        return Err(Error::LevelMismatch {
            left: a.level(),
            right: b.level(),
        });
    }
    let n = a.level();
    let mut levels = Vec::with_capacity(n + 1);
    for k in 0..=n {
        let mut out = vec![0.0; 1 << k];
        for j in 0..=k {
            let (left, right) = (&a.levels[j], &b.levels[k - j]);
            let width = right.len();
            for (ia, &x) in left.iter().enumerate() {
                if x == 0.0 {
                    continue;
                }
                let row = &mut out[ia * width..(ia + 1) * width];
                for (o, &y) in row.iter_mut().zip(right) {
                    *o += x * y;
                }
            }
        }
        levels.push(out);
    }
    Ok(SignatureTensor { levels })
}

/// Signature of the piecewise-linear path through `points`. A single point
/// (or none) gives the identity.
pub fn path_signature(points: &[Point], level: usize) -> SignatureTensor {
    let mut sig = SignatureTensor::identity(level);
    for w in points.windows(2) {
        let step = line_signature((w[1].x - w[0].x, w[1].y - w[0].y), level);
        sig = chen_concat(&sig, &step).expect("levels agree");
    }
    sig
}

/// Per-point signatures over the sub-path `[i - w, i + w]`, clamped to the
/// stroke.
pub fn windowed_signatures(points: &[Point], level: usize, window: usize) -> Vec<SignatureTensor> {
    assert!(window >= 1, "signature window must be positive");
    let n = points.len();
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(window);
            let hi = (i + window).min(n.saturating_sub(1));
            path_signature(&points[lo..=hi], level)
        })
        .collect()
}

/// `M` channels of `size × size` values, channel-major.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMapStack {
    level: usize,
    size: usize,
    data: Vec<f32>,
}

impl FeatureMapStack {
    pub fn zeros(level: usize, size: usize) -> Self {
        FeatureMapStack {
            level,
            size,
            data: vec![0.0; channel_count(level) * size * size],
        }
    }

    pub fn level(&self) -> usize {
        self.level
    }

    pub fn channels(&self) -> usize {
        channel_count(self.level)
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let plane = self.size * self.size;
        &self.data[c * plane..(c + 1) * plane]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f32] {
        let plane = self.size * self.size;
        &mut self.data[c * plane..(c + 1) * plane]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// Pixels touched by the trajectory (channel 0 set).
    pub fn foreground(&self) -> impl Iterator<Item = usize> + '_ {
        self.channel(0)
            .iter()
            .enumerate()
            .filter(|(_, &v)| v != 0.0)
            .map(|(i, _)| i)
    }
}

/// Renders a normalized character into `2^(n+1) - 1` feature maps.
///
/// Every stroke is walked segment by segment between consecutive points;
/// each touched pixel is credited with the windowed signature of the nearer
/// segment endpoint. A pixel reached from several sample points gets the
/// mean of their signatures. Channel 0 is 1 on the trajectory. Signature
/// coordinates are grid units divided by the character box side, so
/// magnitudes stay O(1).
pub fn rasterize(c: &PseudoCharacter, level: usize, window: usize) -> FeatureMapStack {
    rasterize_sized(c, level, window, GRID_SIZE)
}

pub(crate) fn rasterize_sized(
    c: &PseudoCharacter,
    level: usize,
    window: usize,
    size: usize,
) -> FeatureMapStack {
    let mut stack = FeatureMapStack::zeros(level, size);
    let channels = stack.channels();
    let inv = 1.0 / CHAR_BOX;

    // (pixel, global sample id) pairs, then the signatures by sample id
    let mut hits: Vec<(usize, usize)> = Vec::new();
    let mut sample_sigs: Vec<Vec<f64>> = Vec::new();
    let hi = (size - 1) as f64;
    let pixel = |p: (f64, f64)| {
        let x = p.0.clamp(0.0, hi).floor() as usize;
        let y = p.1.clamp(0.0, hi).floor() as usize;
        y * size + x
    };

    for stroke in &c.strokes {
        let base = sample_sigs.len();
        if level > 0 {
            let scaled: Vec<Point> = stroke
                .points
                .iter()
                .map(|p| Point::new(p.x * inv, p.y * inv))
                .collect();
            sample_sigs.extend(
                windowed_signatures(&scaled, level, window)
                    .into_iter()
                    .map(|s| s.flatten()),
            );
        } else {
            sample_sigs.extend(stroke.points.iter().map(|_| vec![1.0]));
        }
        let pts = &stroke.points;
        if pts.len() == 1 {
            hits.push((pixel((pts[0].x, pts[0].y)), base));
        }
        for (i, w) in pts.windows(2).enumerate() {
            let (a, b) = (w[0], w[1]);
            let steps = (b.x - a.x).abs().max((b.y - a.y).abs()).ceil().max(1.0) as usize;
            for s in 0..=steps {
                let t = s as f64 / steps as f64;
                let p = (a.x + t * (b.x - a.x), a.y + t * (b.y - a.y));
                let nearest = if t <= 0.5 { i } else { i + 1 };
                hits.push((pixel(p), base + nearest));
            }
        }
    }
    hits.sort_unstable();
    hits.dedup();

    let plane = size * size;
    let mut start = 0;
    let mut acc = vec![0.0f64; channels];
    while start < hits.len() {
        let px = hits[start].0;
        let end = start + hits[start..].iter().take_while(|h| h.0 == px).count();
        acc.iter_mut().for_each(|a| *a = 0.0);
        for &(_, sample) in &hits[start..end] {
            for (a, v) in acc.iter_mut().zip(&sample_sigs[sample]) {
                *a += v;
            }
        }
        let count = (end - start) as f64;
        stack.data[px] = 1.0;
        for ch in 1..channels {
            stack.data[ch * plane + px] = (acc[ch] / count) as f32;
        }
        start = end;
    }
    stack
}

/// 8-bit grayscale image, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl GrayImage {
    pub fn write_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut encoder =
            png::Encoder::new(BufWriter::new(file), self.width as u32, self.height as u32);
        encoder.set_color(png::ColorType::Grayscale);
        encoder.set_depth(png::BitDepth::Eight);
        let mut writer = encoder
            .write_header()
            .map_err(|e| Error::io(path, std::io::Error::other(e)))?;
        writer
            .write_image_data(&self.pixels)
            .map_err(|e| Error::io(path, std::io::Error::other(e)))
    }
}

/// One image per channel: foreground pixels are histogram-equalized into
/// gray levels 1..=255 (order preserving), the background is black. A
/// constant channel renders as mid-gray (128).
pub fn visualize(stack: &FeatureMapStack) -> Vec<GrayImage> {
    let fg: Vec<usize> = stack.foreground().collect();
    (0..stack.channels())
        .map(|c| {
            let plane = stack.channel(c);
            let mut pixels = vec![0u8; plane.len()];
            let mut values: Vec<f32> = fg.iter().map(|&i| plane[i]).collect();
            values.sort_by(f32::total_cmp);
            let total = values.len();
            if total > 0 {
                let lowest = values.partition_point(|v| *v <= values[0]);
                for &i in &fg {
                    let v = plane[i];
                    let cdf = values.partition_point(|x| *x <= v);
                    pixels[i] = if lowest == total {
                        128
                    } else {
                        let t = (cdf - lowest) as f64 / (total - lowest) as f64;
                        1 + (t * 254.0).round() as u8
                    };
                }
            }
            GrayImage {
                width: stack.size,
                height: stack.size,
                pixels,
            }
        })
        .collect()
}

/// Magic bytes of the raw feature-map tensor file.
pub const TENSOR_MAGIC: [u8; 4] = *b"SIGM";

/// Writes `magic, M, height, width` (little-endian u32s) followed by
/// `M·height·width` little-endian f32 values.
pub fn write_feature_maps(stack: &FeatureMapStack, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut buf = Vec::with_capacity(16 + stack.data.len() * 4);
    buf.extend_from_slice(&TENSOR_MAGIC);
    for v in [stack.channels(), stack.size, stack.size] {
        buf.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for v in &stack.data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn read_feature_maps(path: impl AsRef<Path>) -> Result<FeatureMapStack> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::new();
    BufReader::new(file)
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(path, e))?;
    if bytes.len() < 16 || bytes[..4] != TENSOR_MAGIC {
        return Err(Error::Validation("not a feature-map tensor file".into()));
    }
    let word =
        |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
    let (m, h, w) = (word(0), word(1), word(2));
    if h != w || m == 0 || (m + 1).count_ones() != 1 {
        return Err(Error::Validation(format!("bad tensor header {m}×{h}×{w}")));
    }
    if bytes.len() != 16 + 4 * m * h * w {
        return Err(Error::Validation("truncated tensor file".into()));
    }
    let data = bytes[16..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(FeatureMapStack {
        level: (m + 1).trailing_zeros() as usize - 1,
        size: h,
        data,
    })
}
