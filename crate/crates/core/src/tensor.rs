//! Dense NCHW tensors, feature maps and images.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense `B×C×H×W` array of `f64`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: [usize; 4],
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: [usize; 4]) -> Self {
        Tensor {
            shape,
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn full(shape: [usize; 4], value: f64) -> Self {
        Tensor {
            shape,
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: [usize; 4], data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(Error::Shape(format!(
                "{} values cannot fill shape {:?}",
                data.len(),
                shape
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn from_fn(
        shape: [usize; 4],
        mut f: impl FnMut(usize, usize, usize, usize) -> f64,
    ) -> Self {
        let [b, c, h, w] = shape;
        let mut data = Vec::with_capacity(b * c * h * w);
        for bi in 0..b {
            for ci in 0..c {
                for y in 0..h {
                    for x in 0..w {
                        data.push(f(bi, ci, y, x));
                    }
                }
            }
        }
        Tensor { shape, data }
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    pub fn channels(&self) -> usize {
        self.shape[1]
    }

    pub fn height(&self) -> usize {
        self.shape[2]
    }

    pub fn width(&self) -> usize {
        self.shape[3]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn index(&self, b: usize, c: usize, y: usize, x: usize) -> usize {
        let [_, cc, h, w] = self.shape;
        ((b * cc + c) * h + y) * w + x
    }

    #[inline]
    pub fn get(&self, b: usize, c: usize, y: usize, x: usize) -> f64 {
        self.data[self.index(b, c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, b: usize, c: usize, y: usize, x: usize, v: f64) {
        let i = self.index(b, c, y, x);
        self.data[i] = v;
    }

    /// Number of `H×W` planes (`B·C`).
    pub fn planes(&self) -> usize {
        self.shape[0] * self.shape[1]
    }

    pub fn plane(&self, p: usize) -> &[f64] {
        let n = self.shape[2] * self.shape[3];
        &self.data[p * n..(p + 1) * n]
    }

    pub fn same_shape(&self, other: &Tensor) -> bool {
        self.shape == other.shape
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Copies the sub-block `rows × cols` (all batches and channels).
    pub fn crop(
        &self,
        rows: std::ops::Range<usize>,
        cols: std::ops::Range<usize>,
    ) -> Result<Tensor> {
        let [b, c, h, w] = self.shape;
        if rows.end > h || cols.end > w || rows.start > rows.end || cols.start > cols.end {
            return Err(Error::Range(format!(
                "crop {rows:?}×{cols:?} outside {h}×{w}"
            )));
        }
        let (nh, nw) = (rows.len(), cols.len());
        Ok(Tensor::from_fn([b, c, nh, nw], |bi, ci, y, x| {
            self.get(bi, ci, rows.start + y, cols.start + x)
        }))
    }

    /// Writes `src` into this tensor with its top-left corner at `(top, left)`.
    pub fn paste(&mut self, src: &Tensor, top: usize, left: usize) -> Result<()> {
        let [b, c, h, w] = self.shape;
        let [sb, sc, sh, sw] = src.shape;
        if sb != b || sc != c || top + sh > h || left + sw > w {
            return Err(Error::Shape(format!(
                "cannot paste {:?} at ({top},{left}) into {:?}",
                src.shape, self.shape
            )));
        }
        for bi in 0..b {
            for ci in 0..c {
                for y in 0..sh {
                    let dst = self.index(bi, ci, top + y, left);
                    let s = src.index(bi, ci, y, 0);
                    self.data[dst..dst + sw].copy_from_slice(&src.data[s..s + sw]);
                }
            }
        }
        Ok(())
    }

    /// Concatenates along height (`axis_rows = true`) or width.
    pub fn concat(parts: &[&Tensor], along_rows: bool) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Shape("concat of zero tensors".into()))?;
        let [b, c, h, w] = first.shape;
        let mut total = 0;
        for p in parts {
            let [pb, pc, ph, pw] = p.shape;
            let ok = pb == b && pc == c && if along_rows { pw == w } else { ph == h };
            if !ok {
                return Err(Error::Shape(format!(
                    "cannot concat {:?} with {:?}",
                    first.shape, p.shape
                )));
            }
            total += if along_rows { ph } else { pw };
        }
        let shape = if along_rows {
            [b, c, total, w]
        } else {
            [b, c, h, total]
        };
        let mut out = Tensor::zeros(shape);
        let mut offset = 0;
        for p in parts {
            if along_rows {
                out.paste(p, offset, 0)?;
                offset += p.height();
            } else {
                out.paste(p, 0, offset)?;
                offset += p.width();
            }
        }
        Ok(out)
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Interpolates `a → b` by `t`.
///
/// The endpoints are exact: `t == 0` returns `a`, `t == 1` returns `b`, and
/// `a == b` returns `a` for any `t`. Interior results are clamped to the
/// closed interval spanned by `a` and `b`.
#[inline]
pub fn lerp(a: f64, b: f64, t: f64) -> f64 {
    if t == 0.0 {
        a
    } else if t == 1.0 {
        b
    } else {
        let v = a + t * (b - a);
        v.clamp(a.min(b), a.max(b))
    }
}

/// An intermediate activation `f_i` tagged with the layer that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMap {
    pub layer_index: usize,
    pub data: Tensor,
}

impl FeatureMap {
    pub fn new(layer_index: usize, data: Tensor) -> Self {
        FeatureMap { layer_index, data }
    }

    pub fn shape(&self) -> [usize; 4] {
        self.data.shape()
    }

    pub fn height(&self) -> usize {
        self.data.height()
    }

    pub fn width(&self) -> usize {
        self.data.width()
    }

    pub fn channels(&self) -> usize {
        self.data.channels()
    }

    /// Same layer tag, new contents.
    pub fn with_data(&self, data: Tensor) -> FeatureMap {
        FeatureMap {
            layer_index: self.layer_index,
            data,
        }
    }
}

/// An RGB image in `[-1, 1]`, stored channel-major (`3×H×W`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != 3 * height * width {
            return Err(Error::Shape(format!(
                "{} values for a 3×{height}×{width} image",
                data.len()
            )));
        }
        Ok(Image {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        Image {
            height,
            width,
            data: vec![value; 3 * height * width],
        }
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let [b, c, h, w] = t.shape();
        if b != 1 || c != 3 {
            return Err(Error::Shape(format!(
                "{:?} is not a single RGB image",
                t.shape()
            )));
        }
        Image::new(h, w, t.data().to_vec())
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor {
            shape: [1, 3, self.height, self.width],
            data: self.data.clone(),
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn same_dims(&self, other: &Image) -> bool {
        self.height == other.height && self.width == other.width
    }

    /// Copies columns `cols` (or rows, when `along_rows`) into a new image.
    pub fn slice(&self, range: std::ops::Range<usize>, along_rows: bool) -> Result<Image> {
        let t = self.to_tensor();
        let t = if along_rows {
            t.crop(range, 0..self.width)?
        } else {
            t.crop(0..self.height, range)?
        };
        Image::from_tensor(&t)
    }

    pub fn concat(parts: &[Image], along_rows: bool) -> Result<Image> {
        let tensors: Vec<Tensor> = parts.iter().map(Image::to_tensor).collect();
        let refs: Vec<&Tensor> = tensors.iter().collect();
        Image::from_tensor(&Tensor::concat(&refs, along_rows)?)
    }

    /// Euclidean distance between two images of the same size.
    pub fn l2_distance(&self, other: &Image) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}
