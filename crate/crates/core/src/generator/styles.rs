use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check_finite(values: &[f64], what: &str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Domain(format!("{what} has non-finite entries")))
    }
}

/// A latent noise vector `z`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LatentCode(Vec<f64>);

impl LatentCode {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        check_finite(&values, "latent code")?;
        Ok(LatentCode(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// A point `w` in the intermediate latent space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StyleVector(Vec<f64>);

impl StyleVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        check_finite(&values, "style vector")?;
        Ok(StyleVector(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn distance(&self, other: &StyleVector) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

/// One style vector per synthesis layer (the extended `W+` code).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StyleStack {
    rows: Vec<StyleVector>,
}

impl StyleStack {
    pub fn new(rows: Vec<StyleVector>) -> Result<Self> {
        let dim = rows
            .first()
            .map(StyleVector::len)
            .ok_or_else(|| Error::Domain("style stack needs at least one row".into()))?;
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::Shape("style stack rows differ in width".into()));
        }
        Ok(StyleStack { rows })
    }

    /// Broadcasts `w` to `layers` identical rows.
    pub fn expand(w: &StyleVector, layers: usize) -> Self {
        StyleStack {
            rows: vec![w.clone(); layers],
        }
    }

    pub fn rows(&self) -> &[StyleVector] {
        &self.rows
    }

    pub fn row(&self, i: usize) -> &StyleVector {
        &self.rows[i]
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn row_width(&self) -> usize {
        self.rows[0].len()
    }

    pub fn set_row(&mut self, i: usize, row: StyleVector) -> Result<()> {
        if i >= self.rows.len() || row.len() != self.row_width() {
            return Err(Error::Shape(format!("cannot set row {i}")));
        }
        self.rows[i] = row;
        Ok(())
    }

    /// True when every row is identical, i.e. the stack lies in `W` rather
    /// than the general `W+`.
    pub fn is_in_w(&self) -> bool {
        self.rows.windows(2).all(|p| p[0] == p[1])
    }

    /// Row-major flattening over layers.
    pub fn flatten(&self) -> Vec<f64> {
        self.rows
            .iter()
            .flat_map(|r| r.values().iter().copied())
            .collect()
    }

    pub fn from_flat(flat: &[f64], rows: usize) -> Result<Self> {
        if rows == 0 || flat.len() % rows != 0 {
            return Err(Error::Shape(format!(
                "{} values do not split into {rows} rows",
                flat.len()
            )));
        }
        let width = flat.len() / rows;
        StyleStack::new(
            flat.chunks(width)
                .map(|c| StyleVector::new(c.to_vec()))
                .collect::<Result<_>>()?,
        )
    }
}

/// Per-layer style coefficients `σ` produced by the affine layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StyleCoeffs {
    pub per_layer: Vec<Vec<f64>>,
}

impl StyleCoeffs {
    pub fn new(per_layer: Vec<Vec<f64>>) -> Self {
        StyleCoeffs { per_layer }
    }

    pub fn widths(&self) -> Vec<usize> {
        self.per_layer.iter().map(Vec::len).collect()
    }

    pub fn total_len(&self) -> usize {
        self.per_layer.iter().map(Vec::len).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.per_layer.iter().flatten().copied().collect()
    }

    /// Rebuilds coefficients with the given per-layer widths.
    pub fn from_flat(flat: &[f64], widths: &[usize]) -> Result<Self> {
        if flat.len() != widths.iter().sum::<usize>() {
            return Err(Error::Shape(format!(
                "{} values for widths {widths:?}",
                flat.len()
            )));
        }
        let mut per_layer = Vec::with_capacity(widths.len());
        let mut offset = 0;
        for &w in widths {
            per_layer.push(flat[offset..offset + w].to_vec());
            offset += w;
        }
        Ok(StyleCoeffs { per_layer })
    }

    pub fn zeros_like(&self) -> Self {
        StyleCoeffs {
            per_layer: self.per_layer.iter().map(|l| vec![0.0; l.len()]).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.per_layer.iter().flatten().all(|v| v.is_finite())
    }
}
