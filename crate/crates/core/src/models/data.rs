use crate::error::{domain_err, shape_err, Result};

/// Dense single-block dataset, as loaded from disk or generated.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseDataset {
    dim: usize,
    features: Vec<f64>,
    labels: Vec<i32>,
}

impl DenseDataset {
    pub fn new(dim: usize, features: Vec<f64>, labels: Vec<i32>) -> Result<Self> {
        if features.len() != dim * labels.len() {
            return shape_err(format!(
                "{} feature values for {} samples of dimension {dim}",
                features.len(),
                labels.len()
            ));
        }
        Ok(Self { dim, features, labels })
    }

    pub fn from_rows(rows: &[Vec<f64>], labels: Vec<i32>) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.len() != labels.len() {
            return shape_err(format!("{} rows but {} labels", rows.len(), labels.len()));
        }
        if let Some(bad) = rows.iter().position(|r| r.len() != dim) {
            return shape_err(format!("row {bad} has {} features, expected {dim}", rows[bad].len()));
        }
        Ok(Self { dim, features: rows.concat(), labels })
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn labels(&self) -> &[i32] {
        &self.labels
    }

    pub fn labels_mut(&mut self) -> &mut [i32] {
        &mut self.labels
    }

    /// Rows at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            features.extend_from_slice(self.row(i));
        }
        Self {
            dim: self.dim,
            features,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// Split features into `q` contiguous blocks of nearly equal width.
    pub fn partition(&self, q: usize) -> Result<PartitionedDataset> {
        let dims = partition_features(self.dim, q)?;
        PartitionedDataset::from_dense(self, &dims)
    }
}

/// One party's feature block: `n` rows of width `dim`, row-major.
#[derive(Debug, Clone, PartialEq)]
struct Block {
    dim: usize,
    values: Vec<f64>,
}

/// Features split vertically across `q` parties; labels stay with the server.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionedDataset {
    blocks: Vec<Block>,
    labels: Vec<i32>,
}

impl PartitionedDataset {
    pub fn from_dense(data: &DenseDataset, block_dims: &[usize]) -> Result<Self> {
        if block_dims.iter().sum::<usize>() != data.dim() {
            return shape_err(format!(
                "block dims {block_dims:?} do not cover {} features",
                data.dim()
            ));
        }
        let n = data.n();
        let mut blocks = Vec::with_capacity(block_dims.len());
        let mut offset = 0;
        for &dim in block_dims {
            let mut values = Vec::with_capacity(n * dim);
            for i in 0..n {
                values.extend_from_slice(&data.row(i)[offset..offset + dim]);
            }
            blocks.push(Block { dim, values });
            offset += dim;
        }
        Ok(Self { blocks, labels: data.labels().to_vec() })
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn q(&self) -> usize {
        self.blocks.len()
    }

    pub fn block_dims(&self) -> Vec<usize> {
        self.blocks.iter().map(|b| b.dim).collect()
    }

    pub fn total_dim(&self) -> usize {
        self.blocks.iter().map(|b| b.dim).sum()
    }

    /// Party `m`'s features for sample `i`.
    pub fn x(&self, m: usize, i: usize) -> &[f64] {
        let b = &self.blocks[m];
        &b.values[i * b.dim..(i + 1) * b.dim]
    }

    pub fn label(&self, i: usize) -> i32 {
        self.labels[i]
    }

    pub fn labels(&self) -> &[i32] {
        &self.labels
    }

    /// Sample `i` with all blocks concatenated in party order.
    pub fn concatenated(&self, i: usize) -> Vec<f64> {
        (0..self.q()).flat_map(|m| self.x(m, i).iter().copied()).collect()
    }

    /// Undo the vertical split.
    pub fn to_dense(&self) -> DenseDataset {
        let features = (0..self.n()).flat_map(|i| self.concatenated(i)).collect();
        DenseDataset { dim: self.total_dim(), features, labels: self.labels.clone() }
    }
}

/// Widths of `q` contiguous feature blocks covering `total` features.
///
/// Sizes differ by at most one; the first `total % q` blocks get the extra
/// feature.
pub fn partition_features(total: usize, q: usize) -> Result<Vec<usize>> {
    if q == 0 {
        return domain_err("cannot partition into zero parties");
    }
    if q > total {
        return domain_err(format!("{q} parties but only {total} features"));
    }
    let base = total / q;
    let extra = total % q;
    Ok((0..q).map(|m| base + usize::from(m < extra)).collect())
}
