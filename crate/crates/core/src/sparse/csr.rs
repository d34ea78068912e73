use crate::error::{Error, Result};
use crate::prune::LayerMask;
use crate::quant::{self, QuantParams};
use crate::tensor::Tensor;

/// Widest dimension a 16-bit column index can address.
pub const MAX_COLS: usize = u16::MAX as usize + 1;

#[derive(Debug, Clone, PartialEq)]
pub enum CsrValues {
    F32(Vec<f32>),
    I8 { codes: Vec<i8>, params: QuantParams },
}

impl CsrValues {
    pub fn len(&self) -> usize {
        match self {
            CsrValues::F32(v) => v.len(),
            CsrValues::I8 { codes, .. } => codes.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Compressed sparse rows with `u32` offsets and `u16` column indices.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    pub rows: usize,
    pub cols: usize,
    pub row_offsets: Vec<u32>,
    pub col_indices: Vec<u16>,
    pub values: CsrValues,
}

/// Float CSR holding exactly the mask's surviving entries.
pub fn to_csr(weight: &Tensor, mask: &LayerMask) -> Result<CsrMatrix> {
    let (row_offsets, col_indices, values) = gather(weight, mask)?;
    Ok(CsrMatrix {
        rows: mask.rows(),
        cols: mask.cols(),
        row_offsets,
        col_indices,
        values: CsrValues::F32(values),
    })
}

/// Int8 CSR: surviving entries quantized with `params`.
pub fn to_csr_i8(weight: &Tensor, mask: &LayerMask, params: &QuantParams) -> Result<CsrMatrix> {
    params.validate(mask.rows())?;
    let (row_offsets, col_indices, values) = gather(weight, mask)?;
    let mut codes = Vec::with_capacity(values.len());
    for r in 0..mask.rows() {
        let s = params.scale_for_row(r);
        let (lo, hi) = (row_offsets[r] as usize, row_offsets[r + 1] as usize);
        codes.extend(values[lo..hi].iter().map(|v| quant::quantize_value(*v, s)));
    }
    Ok(CsrMatrix {
        rows: mask.rows(),
        cols: mask.cols(),
        row_offsets,
        col_indices,
        values: CsrValues::I8 {
            codes,
            params: params.clone(),
        },
    })
}

fn gather(weight: &Tensor, mask: &LayerMask) -> Result<(Vec<u32>, Vec<u16>, Vec<f32>)> {
    let (rows, cols) = (mask.rows(), mask.cols());
    if weight.shape() != [rows, cols] {
        return Err(Error::Dimension(format!(
            "weight {:?} does not match mask [{rows}, {cols}]",
            weight.shape()
        )));
    }
    if cols > MAX_COLS || weight.len() > u32::MAX as usize {
        return Err(Error::Dimension(format!("[{rows}, {cols}] exceeds CSR index widths")));
    }
    let nnz = mask.popcount();
    let mut offsets = Vec::with_capacity(rows + 1);
    let mut idx = Vec::with_capacity(nnz);
    let mut vals = Vec::with_capacity(nnz);
    offsets.push(0u32);
    let w = weight.data();
    for r in 0..rows {
        for c in 0..cols {
            let i = r * cols + c;
            if mask.is_kept(i) {
                idx.push(c as u16);
                vals.push(w[i]);
            }
        }
        offsets.push(idx.len() as u32);
    }
    Ok((offsets, idx, vals))
}

impl CsrMatrix {
    pub fn nnz(&self) -> usize {
        self.col_indices.len()
    }

    /// Structural invariants: offsets, index ordering and bounds, value count.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Dimension(m));
        if self.row_offsets.len() != self.rows + 1 || self.row_offsets[0] != 0 {
            return bad("row_offsets must have rows + 1 entries starting at 0".into());
        }
        if *self.row_offsets.last().unwrap() as usize != self.nnz() || self.values.len() != self.nnz() {
            return bad("row_offsets[rows], col_indices and values disagree on nnz".into());
        }
        for r in 0..self.rows {
            let (lo, hi) = (self.row_offsets[r] as usize, self.row_offsets[r + 1] as usize);
            if lo > hi {
                return bad(format!("row_offsets decrease at row {r}"));
            }
            let row = &self.col_indices[lo..hi];
            if row.windows(2).any(|p| p[0] >= p[1]) || row.last().is_some_and(|c| *c as usize >= self.cols) {
                return bad(format!("column indices of row {r} unsorted or out of range"));
            }
        }
        if let CsrValues::I8 { params, .. } = &self.values {
            params.validate(self.rows)?;
        }
        Ok(())
    }

    #[inline]
    fn row_range(&self, r: usize) -> std::ops::Range<usize> {
        self.row_offsets[r] as usize..self.row_offsets[r + 1] as usize
    }

    /// `y = M x`, accumulating each row in order in `f32`; int8 values are
    /// dequantized as they are read.
    pub fn matvec_into(&self, x: &[f32], y: &mut [f32]) -> Result<()> {
        if x.len() != self.cols || y.len() != self.rows {
            return Err(Error::Dimension(format!(
                "csr [{}, {}] applied to x of {} into y of {}",
                self.rows,
                self.cols,
                x.len(),
                y.len()
            )));
        }
        match &self.values {
            CsrValues::F32(v) => {
                for (r, out) in y.iter_mut().enumerate() {
                    let mut acc = 0.0f32;
                    for k in self.row_range(r) {
                        acc += v[k] * x[self.col_indices[k] as usize];
                    }
                    *out = acc;
                }
            }
            CsrValues::I8 { codes, params } => {
                for (r, out) in y.iter_mut().enumerate() {
                    let s = params.scale_for_row(r);
                    let mut acc = 0.0f32;
                    for k in self.row_range(r) {
                        acc += quant::dequantize_value(codes[k], s) * x[self.col_indices[k] as usize];
                    }
                    *out = acc;
                }
            }
        }
        Ok(())
    }

    pub fn to_dense(&self) -> Tensor {
        let mut out = Tensor::zeros(&[self.rows, self.cols]);
        let d = out.data_mut();
        for r in 0..self.rows {
            for k in self.row_range(r) {
                let c = self.col_indices[k] as usize;
                d[r * self.cols + c] = match &self.values {
                    CsrValues::F32(v) => v[k],
                    CsrValues::I8 { codes, params } => quant::dequantize_value(codes[k], params.scale_for_row(r)),
                };
            }
        }
        out
    }
}

/// Allocating convenience around [`CsrMatrix::matvec_into`].
pub fn csr_matvec(m: &CsrMatrix, x: &[f32]) -> Result<Vec<f32>> {
    let mut y = vec![0.0; m.rows];
    m.matvec_into(x, &mut y)?;
    Ok(y)
}
