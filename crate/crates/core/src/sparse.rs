//! Sparse matrices, row-interleaved multivectors and the sparse products.
//!
//! Traffic for the sparse products is accounted with 4-byte indices and
//! 8-byte values regardless of the in-memory widths used here.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::ops::{Deref, DerefMut};
use std::path::Path;

use rayon::prelude::*;
use thiserror::Error;

use crate::kernels::TrafficCounter;

/// Rows handed to a single rayon task in the sparse products.
const SPMV_MIN_ROWS: usize = 1024;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("grid dimension {0} overflows the index range")]
    Overflow(String),
    #[error("grid dimensions must be at least 1, got {0}")]
    EmptyGrid(String),
    #[error("dimension mismatch in {op}: expected {expected}, got {got}")]
    DimensionMismatch {
        op: &'static str,
        expected: String,
        got: String,
    },
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("invalid CSR structure: {0}")]
    InvalidStructure(String),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Square sparse matrix in compressed row storage.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    n_rows: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<u32>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds a matrix from raw CSR arrays, checking every structural invariant.
    pub fn from_parts(
        n_rows: usize,
        row_offsets: Vec<usize>,
        col_indices: Vec<u32>,
        values: Vec<f64>,
    ) -> Result<Self, CoreError> {
        if row_offsets.len() != n_rows + 1 {
            return Err(CoreError::InvalidStructure(format!(
                "row_offsets has length {}, expected {}",
                row_offsets.len(),
                n_rows + 1
            )));
        }
        if row_offsets[0] != 0 {
            return Err(CoreError::InvalidStructure("row_offsets[0] must be 0".into()));
        }
        if col_indices.len() != values.len() || row_offsets[n_rows] != col_indices.len() {
            return Err(CoreError::InvalidStructure(format!(
                "row_offsets[n]={}, {} column indices, {} values",
                row_offsets[n_rows],
                col_indices.len(),
                values.len()
            )));
        }
        for i in 0..n_rows {
            let (lo, hi) = (row_offsets[i], row_offsets[i + 1]);
            if hi < lo {
                return Err(CoreError::InvalidStructure(format!(
                    "row_offsets decreases at row {i}"
                )));
            }
            let cols = &col_indices[lo..hi];
            if let Some(&c) = cols.iter().find(|&&c| c as usize >= n_rows) {
                return Err(CoreError::InvalidStructure(format!(
                    "column index {c} out of range in row {i}"
                )));
            }
            if cols.windows(2).any(|w| w[0] >= w[1]) {
                return Err(CoreError::InvalidStructure(format!(
                    "column indices not strictly increasing in row {i}"
                )));
            }
        }
        Ok(Self {
            n_rows,
            row_offsets,
            col_indices,
            values,
        })
    }

    /// Assembles a matrix from (row, col, value) triplets. Duplicates are summed.
    pub fn from_triplets(
        n_rows: usize,
        triplets: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Result<Self, CoreError> {
        if n_rows > u32::MAX as usize {
            return Err(CoreError::Overflow(n_rows.to_string()));
        }
        let mut entries: Vec<(usize, usize, f64)> = triplets.into_iter().collect();
        if let Some(&(i, j, _)) = entries.iter().find(|&&(i, j, _)| i >= n_rows || j >= n_rows) {
            return Err(CoreError::InvalidStructure(format!(
                "entry ({i}, {j}) outside a {n_rows}x{n_rows} matrix"
            )));
        }
        entries.sort_by_key(|&(i, j, _)| (i, j));

        let mut row_offsets = vec![0usize; n_rows + 1];
        let mut col_indices = Vec::with_capacity(entries.len());
        let mut values: Vec<f64> = Vec::with_capacity(entries.len());
        let mut last: Option<(usize, usize)> = None;
        for (i, j, v) in entries {
            if last == Some((i, j)) {
                *values.last_mut().unwrap() += v;
                continue;
            }
            last = Some((i, j));
            row_offsets[i + 1] += 1;
            col_indices.push(j as u32);
            values.push(v);
        }
        for i in 0..n_rows {
            row_offsets[i + 1] += row_offsets[i];
        }
        Self::from_parts(n_rows, row_offsets, col_indices, values)
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Average number of nonzeros per row, kept as a real.
    pub fn avg_nnz_per_row(&self) -> f64 {
        self.nnz() as f64 / self.n_rows as f64
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[u32] {
        &self.col_indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Iterates over `(column, value)` pairs of row `i`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (lo, hi) = (self.row_offsets[i], self.row_offsets[i + 1]);
        self.col_indices[lo..hi]
            .iter()
            .zip(&self.values[lo..hi])
            .map(|(&c, &v)| (c as usize, v))
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n_rows)
            .map(|i| self.row(i).find(|&(c, _)| c == i).map_or(0.0, |(_, v)| v))
            .collect()
    }

    /// Largest |i - j| over stored entries.
    pub fn bandwidth(&self) -> usize {
        (0..self.n_rows)
            .flat_map(|i| self.row(i).map(move |(c, _)| c.abs_diff(i)))
            .max()
            .unwrap_or(0)
    }

    /// Maximum absolute row sum.
    pub fn inf_norm(&self) -> f64 {
        (0..self.n_rows)
            .map(|i| self.row(i).map(|(_, v)| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// `|a_ii| - sum_{j != i} |a_ij|` for every row.
    pub fn dominance_margins(&self) -> Vec<f64> {
        (0..self.n_rows)
            .map(|i| {
                let mut margin = 0.0;
                for (c, v) in self.row(i) {
                    margin += if c == i { v.abs() } else { -v.abs() };
                }
                margin
            })
            .collect()
    }

    pub fn is_strictly_diagonally_dominant(&self) -> bool {
        self.dominance_margins().iter().all(|&d| d > 0.0)
    }

    /// Every row weakly dominant and at least one row strictly dominant.
    pub fn is_diagonally_dominant(&self) -> bool {
        let d = self.dominance_margins();
        d.iter().all(|&v| v >= 0.0) && d.iter().any(|&v| v > 0.0)
    }

    /// Row-major dense copy. Intended for small matrices in tests and oracles.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut dense = vec![vec![0.0; self.n_rows]; self.n_rows];
        for (i, row) in dense.iter_mut().enumerate() {
            for (c, v) in self.row(i) {
                row[c] = v;
            }
        }
        dense
    }
}

/// Block of `n_cols` vectors of length `n_rows`, stored row-interleaved:
/// element `(i, c)` lives at `i * n_cols + c`.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiVector {
    n_rows: usize,
    n_cols: usize,
    data: Vec<f64>,
}

impl MultiVector {
    pub fn zeros(n_rows: usize, n_cols: usize) -> Self {
        Self {
            n_rows,
            n_cols,
            data: vec![0.0; n_rows * n_cols],
        }
    }

    pub fn from_fn(n_rows: usize, n_cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(n_rows * n_cols);
        for i in 0..n_rows {
            for c in 0..n_cols {
                data.push(f(i, c));
            }
        }
        Self {
            n_rows,
            n_cols,
            data,
        }
    }

    pub fn from_data(n_rows: usize, n_cols: usize, data: Vec<f64>) -> Result<Self, CoreError> {
        if data.len() != n_rows * n_cols {
            return Err(CoreError::DimensionMismatch {
                op: "MultiVector::from_data",
                expected: format!("{} elements", n_rows * n_cols),
                got: data.len().to_string(),
            });
        }
        Ok(Self {
            n_rows,
            n_cols,
            data,
        })
    }

    /// Interleaves equally long columns into one block.
    pub fn from_columns(columns: &[Vec<f64>]) -> Result<Self, CoreError> {
        let n_cols = columns.len();
        let n_rows = columns.first().map_or(0, Vec::len);
        if let Some(bad) = columns.iter().find(|c| c.len() != n_rows) {
            return Err(CoreError::DimensionMismatch {
                op: "MultiVector::from_columns",
                expected: n_rows.to_string(),
                got: bad.len().to_string(),
            });
        }
        Ok(Self::from_fn(n_rows, n_cols, |i, c| columns[c][i]))
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n_rows, self.n_cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, i: usize, c: usize) -> f64 {
        self.data[i * self.n_cols + c]
    }

    pub fn set(&mut self, i: usize, c: usize, v: f64) {
        self.data[i * self.n_cols + c] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n_cols..(i + 1) * self.n_cols]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        self.data.iter().skip(c).step_by(self.n_cols).copied().collect()
    }

    /// Euclidean norm of every column. Uninstrumented.
    pub fn column_norms(&self) -> ColumnScalars {
        let mut sums = vec![0.0; self.n_cols];
        for row in self.data.chunks_exact(self.n_cols.max(1)) {
            for (s, v) in sums.iter_mut().zip(row) {
                *s += v * v;
            }
        }
        ColumnScalars(sums.into_iter().map(f64::sqrt).collect())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max_abs_diff(&self, other: &MultiVector) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }
}

/// One scalar per right-hand-side column.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ColumnScalars(pub Vec<f64>);

impl ColumnScalars {
    pub fn zeros(m: usize) -> Self {
        Self(vec![0.0; m])
    }

    pub fn filled(m: usize, v: f64) -> Self {
        Self(vec![v; m])
    }
}

impl Deref for ColumnScalars {
    type Target = Vec<f64>;
    fn deref(&self) -> &Vec<f64> {
        &self.0
    }
}

impl DerefMut for ColumnScalars {
    fn deref_mut(&mut self) -> &mut Vec<f64> {
        &mut self.0
    }
}

impl fmt::Display for ColumnScalars {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|v| format!("{v:e}")).collect();
        write!(f, "[{}]", parts.join(", "))
    }
}

/// Bytes moved by one CSR product over `m` columns:
/// `N (8m (C + 1) + 4 (3C + 1))` with `C = nnz / N`.
///
/// Evaluated in integers (`N C = nnz`), so the result is exact.
pub fn spmv_traffic_bytes(n_rows: usize, nnz: usize, m: usize) -> f64 {
    let (n, nnz, m) = (n_rows as u128, nnz as u128, m as u128);
    (8 * m * (nnz + n) + 4 * (3 * nnz + n)) as f64
}

fn check_product_shapes(
    op: &'static str,
    a: &CsrMatrix,
    x: &MultiVector,
    y: &MultiVector,
) -> Result<(), CoreError> {
    if x.n_rows != a.n_rows || y.n_rows != a.n_rows || x.n_cols != y.n_cols {
        return Err(CoreError::DimensionMismatch {
            op,
            expected: format!("{} rows, equal column counts", a.n_rows),
            got: format!("x {:?}, y {:?}", x.shape(), y.shape()),
        });
    }
    Ok(())
}

/// `y = A x` over all columns of `x`.
pub fn spmv(
    a: &CsrMatrix,
    x: &MultiVector,
    y: &mut MultiVector,
    counter: &mut TrafficCounter,
) -> Result<(), CoreError> {
    check_product_shapes("spmv", a, x, y)?;
    let m = x.n_cols;
    if m > 0 {
        let xd = &x.data;
        y.data
            .par_chunks_mut(m)
            .with_min_len(SPMV_MIN_ROWS)
            .enumerate()
            .for_each(|(i, out)| {
                out.fill(0.0);
                let (lo, hi) = (a.row_offsets[i], a.row_offsets[i + 1]);
                for k in lo..hi {
                    let v = a.values[k];
                    let src = &xd[a.col_indices[k] as usize * m..][..m];
                    for (o, s) in out.iter_mut().zip(src) {
                        *o += v * s;
                    }
                }
            });
    }
    counter.record_spmv(spmv_traffic_bytes(a.n_rows, a.nnz(), m));
    Ok(())
}

/// `y = A^T x`. Only used during solver setup, so it runs serially.
pub fn spmv_transpose(
    a: &CsrMatrix,
    x: &MultiVector,
    y: &mut MultiVector,
    counter: &mut TrafficCounter,
) -> Result<(), CoreError> {
    check_product_shapes("spmv_transpose", a, x, y)?;
    let m = x.n_cols;
    y.data.fill(0.0);
    for i in 0..a.n_rows {
        let src = &x.data[i * m..(i + 1) * m];
        for (c, v) in a.row(i) {
            let out = &mut y.data[c * m..(c + 1) * m];
            for (o, s) in out.iter_mut().zip(src) {
                *o += v * s;
            }
        }
    }
    counter.record_spmv(spmv_traffic_bytes(a.n_rows, a.nnz(), m));
    Ok(())
}

fn grid_size(dims: &[usize]) -> Result<usize, CoreError> {
    let label = dims
        .iter()
        .map(|d| d.to_string())
        .collect::<Vec<_>>()
        .join("x");
    if dims.iter().any(|&d| d == 0) {
        return Err(CoreError::EmptyGrid(label));
    }
    let n = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| CoreError::Overflow(label.clone()))?;
    if n > u32::MAX as usize {
        return Err(CoreError::Overflow(label));
    }
    Ok(n)
}

/// Assembles the (2d+1)-point Laplacian on a lexicographically ordered grid
/// with a constant diagonal, so boundary rows stay strictly dominant.
fn assemble_stencil(dims: &[usize], diag: f64) -> Result<CsrMatrix, CoreError> {
    let n = grid_size(dims)?;
    let strides: Vec<usize> = dims
        .iter()
        .scan(1usize, |s, &d| {
            let cur = *s;
            *s *= d;
            Some(cur)
        })
        .collect();
    let per_row = 2 * dims.len() + 1;
    let mut row_offsets = Vec::with_capacity(n + 1);
    let mut col_indices = Vec::with_capacity(n * per_row);
    let mut values = Vec::with_capacity(n * per_row);
    row_offsets.push(0);
    let mut coord = vec![0usize; dims.len()];
    for i in 0..n {
        // lower neighbours, highest stride first, keep columns ascending
        for ax in (0..dims.len()).rev() {
            if coord[ax] > 0 {
                col_indices.push((i - strides[ax]) as u32);
                values.push(-1.0);
            }
        }
        col_indices.push(i as u32);
        values.push(diag);
        for ax in 0..dims.len() {
            if coord[ax] + 1 < dims[ax] {
                col_indices.push((i + strides[ax]) as u32);
                values.push(-1.0);
            }
        }
        row_offsets.push(col_indices.len());
        for ax in 0..dims.len() {
            coord[ax] += 1;
            if coord[ax] < dims[ax] {
                break;
            }
            coord[ax] = 0;
        }
    }
    Ok(CsrMatrix {
        n_rows: n,
        row_offsets,
        col_indices,
        values,
    })
}

/// 7-point Laplacian on an `nx x ny x nz` grid, diagonal 6 on every row.
pub fn gen_poisson_7pt(nx: usize, ny: usize, nz: usize) -> Result<CsrMatrix, CoreError> {
    assemble_stencil(&[nx, ny, nz], 6.0)
}

/// 5-point Laplacian on an `nx x ny` grid, diagonal 4 on every row.
pub fn gen_poisson_5pt(nx: usize, ny: usize) -> Result<CsrMatrix, CoreError> {
    assemble_stencil(&[nx, ny], 4.0)
}

/// Nonzero count of the stencil matrices without assembling them.
pub fn stencil_nnz(dims: &[usize]) -> usize {
    let n: usize = dims.iter().product();
    let missing: usize = (0..dims.len())
        .map(|ax| 2 * dims.iter().enumerate().filter(|&(k, _)| k != ax).map(|(_, d)| d).product::<usize>())
        .sum();
    (2 * dims.len() + 1) * n - missing
}

/// Reads a coordinate MatrixMarket file (general or symmetric).
pub fn read_matrix_market(path: impl AsRef<Path>) -> Result<CsrMatrix, CoreError> {
    parse_matrix_market(BufReader::new(File::open(path)?))
}

pub fn parse_matrix_market(reader: impl BufRead) -> Result<CsrMatrix, CoreError> {
    let mut lines = reader.lines().enumerate().map(|(k, l)| (k + 1, l));
    let parse_err = |line: usize, msg: &str| CoreError::Parse {
        line,
        msg: msg.to_string(),
    };

    let (line_no, header) = match lines.next() {
        Some((n, l)) => (n, l?),
        None => return Err(parse_err(1, "empty file")),
    };
    let tokens: Vec<String> = header.split_whitespace().map(str::to_lowercase).collect();
    if tokens.len() < 5 || tokens[0] != "%%matrixmarket" || tokens[1] != "matrix" {
        return Err(parse_err(line_no, "expected '%%MatrixMarket matrix ...' header"));
    }
    if tokens[2] != "coordinate" {
        return Err(parse_err(line_no, "only coordinate format is supported"));
    }
    let pattern = match tokens[3].as_str() {
        "real" | "integer" | "double" => false,
        "pattern" => true,
        other => return Err(parse_err(line_no, &format!("unsupported field type '{other}'"))),
    };
    let symmetric = match tokens[4].as_str() {
        "general" => false,
        "symmetric" => true,
        other => return Err(parse_err(line_no, &format!("unsupported symmetry '{other}'"))),
    };

    let mut size: Option<(usize, usize, usize)> = None;
    let mut triplets = Vec::new();
    let mut entries_read = 0usize;
    for (line_no, line) in lines {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('%') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        match size {
            None => {
                if fields.len() != 3 {
                    return Err(parse_err(line_no, "size line must hold 'rows cols nnz'"));
                }
                let parse = |s: &str| {
                    s.parse::<usize>()
                        .map_err(|_| parse_err(line_no, &format!("invalid count '{s}'")))
                };
                let (r, c, nnz) = (parse(fields[0])?, parse(fields[1])?, parse(fields[2])?);
                if r != c {
                    return Err(CoreError::NotSquare { rows: r, cols: c });
                }
                triplets.reserve(if symmetric { 2 * nnz } else { nnz });
                size = Some((r, c, nnz));
            }
            Some((n, _, _)) => {
                let want = if pattern { 2 } else { 3 };
                if fields.len() < want {
                    return Err(parse_err(line_no, "truncated entry"));
                }
                let index = |s: &str| -> Result<usize, CoreError> {
                    let v = s
                        .parse::<usize>()
                        .map_err(|_| parse_err(line_no, &format!("invalid index '{s}'")))?;
                    if v == 0 || v > n {
                        return Err(parse_err(line_no, &format!("index {v} out of range 1..={n}")));
                    }
                    Ok(v - 1)
                };
                let (i, j) = (index(fields[0])?, index(fields[1])?);
                let v = if pattern {
                    1.0
                } else {
                    fields[2]
                        .parse::<f64>()
                        .map_err(|_| parse_err(line_no, &format!("invalid value '{}'", fields[2])))?
                };
                entries_read += 1;
                triplets.push((i, j, v));
                if symmetric && i != j {
                    triplets.push((j, i, v));
                }
            }
        }
    }
    let (n, _, nnz) = size.ok_or_else(|| parse_err(line_no, "missing size line"))?;
    if entries_read != nnz {
        return Err(parse_err(
            line_no,
            &format!("header announces {nnz} entries, found {entries_read}"),
        ));
    }
    CsrMatrix::from_triplets(n, triplets)
}

/// Writes `a` as a general coordinate MatrixMarket file.
pub fn write_matrix_market(a: &CsrMatrix, mut out: impl Write) -> Result<(), CoreError> {
    writeln!(out, "%%MatrixMarket matrix coordinate real general")?;
    writeln!(out, "{} {} {}", a.n_rows, a.n_rows, a.nnz())?;
    for i in 0..a.n_rows {
        for (c, v) in a.row(i) {
            writeln!(out, "{} {} {:e}", i + 1, c + 1, v)?;
        }
    }
    Ok(())
}
