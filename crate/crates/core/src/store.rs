//! Activation tensors, image manifests and the validated activation store.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{input_err, Error, Result};
use crate::linalg::Matrix;

/// Element type of the file a tensor was read from. Values are always held
/// as `f64` in memory.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Dtype {
    F32,
    F64,
}

/// A dense C-order tensor of rank 2 `(M, d)` or rank 4 `(M, d, H, W)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    dtype: Dtype,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>, dtype: Dtype) -> Result<Self> {
        if shape.len() != 2 && shape.len() != 4 {
            return Err(Error::Shape(format!(
                "rank {} not supported, expected 2 or 4",
                shape.len()
            )));
        }
        let count = shape.iter().try_fold(1usize, |acc, &s| acc.checked_mul(s));
        if count != Some(data.len()) {
            return Err(Error::Shape(format!(
                "shape {:?} does not match {} values",
                shape,
                data.len()
            )));
        }
        Ok(Self { shape, data, dtype })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn dtype(&self) -> Dtype {
        self.dtype
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Number of samples (the leading axis).
    pub fn samples(&self) -> usize {
        self.shape[0]
    }
}

impl From<Matrix> for Tensor {
    fn from(m: Matrix) -> Self {
        Self {
            shape: alloc::vec![m.rows(), m.cols()],
            data: m.into_vec(),
            dtype: Dtype::F64,
        }
    }
}

/// Global average pooling of a `(M, d, H, W)` tensor to an `(M, d)` matrix.
///
/// Each output entry is the plain arithmetic mean of one `H x W` feature map.
pub fn global_average_pool(t: &Tensor) -> Result<Matrix> {
    let &[m, d, h, w] = t.shape() else {
        return Err(Error::Shape(format!(
            "pooling needs a 4-D tensor, got shape {:?}",
            t.shape()
        )));
    };
    if h == 0 || w == 0 {
        return Err(Error::Shape(format!("empty spatial extent {h}x{w}")));
    }
    let plane = h * w;
    let inv = plane as f64;
    let mut out = Vec::with_capacity(m * d);
    for map in t.data().chunks_exact(plane) {
        out.push(map.iter().sum::<f64>() / inv);
    }
    Matrix::from_vec(m, d, out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Pooling {
    /// The tensor is already `(M, d)`.
    PrePooled,
    /// The tensor is `(M, d, H, W)` and must be pooled.
    Spatial,
}

/// One dataset input, in activation row order.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ImageEntry {
    pub id: String,
    /// Thumbnail path relative to the store directory.
    #[cfg_attr(feature = "serde", serde(default))]
    pub thumb: Option<String>,
    #[cfg_attr(feature = "serde", serde(default))]
    pub label: Option<String>,
}

impl ImageEntry {
    pub fn new(id: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            thumb: None,
            label: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Manifest {
    pub layer_name: String,
    pub pooling: Pooling,
    pub images: Vec<ImageEntry>,
}

impl Manifest {
    pub fn new(layer_name: impl Into<String>, pooling: Pooling, images: Vec<ImageEntry>) -> Self {
        Self {
            layer_name: layer_name.into(),
            pooling,
            images,
        }
    }

    /// Checks id uniqueness and that thumbnail paths are relative and stay
    /// inside the store directory.
    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for e in &self.images {
            if !seen.insert(e.id.as_str()) {
                return Err(Error::ManifestMismatch(format!(
                    "duplicate image id {:?}",
                    e.id
                )));
            }
            if let Some(p) = &e.thumb {
                if !is_safe_relative(p) {
                    return Err(Error::ManifestMismatch(format!(
                        "thumbnail path {p:?} for {:?} must be relative",
                        e.id
                    )));
                }
            }
        }
        Ok(())
    }
}

fn is_safe_relative(p: &str) -> bool {
    if p.is_empty() || p.starts_with('/') || p.starts_with('\\') {
        return false;
    }
    let b = p.as_bytes();
    if b.len() >= 2 && b[1] == b':' {
        return false;
    }
    !p.split(['/', '\\']).any(|c| c == "..")
}

/// Pooled activations of one layer over a dataset, with image identifiers.
///
/// Immutable once built: every entry is finite, ids are unique and there is
/// one id per row.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationStore {
    data: Matrix,
    images: Vec<ImageEntry>,
    layer_name: String,
    dtype: Dtype,
}

impl ActivationStore {
    pub fn build(t: Tensor, manifest: Manifest) -> Result<Self> {
        manifest.validate()?;
        if t.samples() != manifest.images.len() {
            return Err(Error::ManifestMismatch(format!(
                "tensor has {} rows but manifest lists {} images",
                t.samples(),
                manifest.images.len()
            )));
        }
        let dtype = t.dtype();
        let data = match (manifest.pooling, t.rank()) {
            (Pooling::PrePooled, 2) => {
                let (m, d) = (t.shape()[0], t.shape()[1]);
                Matrix::from_vec(m, d, t.data)?
            }
            (Pooling::Spatial, 4) => global_average_pool(&t)?,
            (p, r) => {
                return Err(Error::ManifestMismatch(format!(
                    "pooling {p:?} is incompatible with a rank-{r} tensor"
                )))
            }
        };
        Self::from_matrix(data, manifest.images, manifest.layer_name, dtype)
    }

    pub fn from_matrix(
        data: Matrix,
        images: Vec<ImageEntry>,
        layer_name: impl Into<String>,
        dtype: Dtype,
    ) -> Result<Self> {
        if data.rows() == 0 || data.cols() == 0 {
            return Err(Error::Shape(format!(
                "store needs M >= 1 and d >= 1, got {}x{}",
                data.rows(),
                data.cols()
            )));
        }
        if data.rows() != images.len() {
            return Err(Error::ManifestMismatch(format!(
                "{} rows but {} image ids",
                data.rows(),
                images.len()
            )));
        }
        if let Some(pos) = data.as_slice().iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!(
                "non-finite value at row {}, column {}",
                pos / data.cols(),
                pos % data.cols()
            )));
        }
        let manifest = Manifest::new(String::new(), Pooling::PrePooled, images);
        manifest.validate()?;
        Ok(Self {
            data,
            images: manifest.images,
            layer_name: layer_name.into(),
            dtype,
        })
    }

    /// Number of dataset inputs.
    pub fn len(&self) -> usize {
        self.data.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Layer width.
    pub fn dim(&self) -> usize {
        self.data.cols()
    }

    pub fn data(&self) -> &Matrix {
        &self.data
    }

    pub fn embedding(&self, row: usize) -> &[f64] {
        self.data.row(row)
    }

    pub fn image_id(&self, row: usize) -> &str {
        &self.images[row].id
    }

    pub fn images(&self) -> &[ImageEntry] {
        &self.images
    }

    pub fn layer_name(&self) -> &str {
        &self.layer_name
    }

    pub fn dtype(&self) -> Dtype {
        self.dtype
    }

    pub fn row_of(&self, id: &str) -> Option<usize> {
        self.images.iter().position(|e| e.id == id)
    }

    /// The manifest describing this store as a pre-pooled matrix.
    pub fn manifest(&self) -> Manifest {
        Manifest::new(
            self.layer_name.clone(),
            Pooling::PrePooled,
            self.images.clone(),
        )
    }

    /// A copy with rows reordered so that new row `i` is old row `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.len() {
            return Err(input_err!(
                "permutation length {} != {}",
                perm.len(),
                self.len()
            ));
        }
        let mut seen = alloc::vec![false; perm.len()];
        for &p in perm {
            if p >= perm.len() || core::mem::replace(&mut seen[p], true) {
                return Err(input_err!("not a permutation"));
            }
        }
        Ok(Self {
            data: self.data.select_rows(perm),
            images: perm.iter().map(|&p| self.images[p].clone()).collect(),
            layer_name: self.layer_name.clone(),
            dtype: self.dtype,
        })
    }
}
