//! Dense real tensors with named legs and the spectral primitives the rest of
//! the crate is built on.
//!
//! Entries are stored row-major over the leg ordering. Every contraction goes
//! through the same path: permute both operands so that the paired legs are
//! contiguous, view them as matrices, multiply, and reinterpret the product
//! with the surviving legs.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("label error: {0}")]
    Label(String),
    #[error("non-finite entry at flat index {0}")]
    NonFinite(usize),
    #[error("power iteration did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },
    #[error("operator maps the iterate to zero")]
    ZeroOperator,
    #[error("cannot parse tensor dump: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, TensorError>;

/// A dense multi-dimensional real array with named legs.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledTensor {
    labels: Vec<String>,
    dims: Vec<usize>,
    data: Vec<f64>,
}

/// Record of a [`LabeledTensor::fuse`] call, needed to undo it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FuseRecord {
    pub labels: Vec<String>,
    pub dims: Vec<usize>,
}

/// Output of [`LabeledTensor::truncated_svd`].
#[derive(Clone, Debug)]
pub struct TruncatedSvd {
    /// Legs: row legs followed by the new bond leg.
    pub u: LabeledTensor,
    pub s: Vec<f64>,
    /// Legs: the new bond leg followed by the column legs.
    pub v: LabeledTensor,
    /// Sum of squared dropped singular values over the sum of all squared values.
    pub discarded_weight: f64,
}

fn check_distinct(labels: &[String]) -> Result<()> {
    for (i, a) in labels.iter().enumerate() {
        if labels[..i].contains(a) {
            return Err(TensorError::Label(format!("duplicate leg `{a}`")));
        }
    }
    Ok(())
}

pub(crate) fn row_major_strides(dims: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; dims.len()];
    for i in (0..dims.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * dims[i + 1];
    }
    strides
}

impl LabeledTensor {
    pub fn new<S: Into<String>>(labels: Vec<S>, dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let labels: Vec<String> = labels.into_iter().map(Into::into).collect();
        if labels.len() != dims.len() {
            return Err(TensorError::Shape(format!(
                "{} labels for {} dimensions",
                labels.len(),
                dims.len()
            )));
        }
        if dims.contains(&0) {
            return Err(TensorError::Shape("leg extents must be positive".into()));
        }
        let size: usize = dims.iter().product();
        if size != data.len() {
            return Err(TensorError::Shape(format!(
                "dims {dims:?} need {size} entries, got {}",
                data.len()
            )));
        }
        check_distinct(&labels)?;
        if let Some(pos) = data.iter().position(|x| !x.is_finite()) {
            return Err(TensorError::NonFinite(pos));
        }
        Ok(Self { labels, dims, data })
    }

    pub fn zeros<S: Into<String>>(labels: Vec<S>, dims: Vec<usize>) -> Result<Self> {
        let size = dims.iter().product();
        Self::new(labels, dims, vec![0.0; size])
    }

    pub fn scalar(value: f64) -> Self {
        Self { labels: Vec::new(), dims: Vec::new(), data: vec![value] }
    }

    /// Builds a tensor by evaluating `f` at every multi-index in row-major order.
    pub fn from_fn<S: Into<String>, F: FnMut(&[usize]) -> f64>(
        labels: Vec<S>,
        dims: Vec<usize>,
        mut f: F,
    ) -> Result<Self> {
        let size: usize = dims.iter().product();
        let mut data = Vec::with_capacity(size);
        let mut idx = vec![0usize; dims.len()];
        for _ in 0..size {
            data.push(f(&idx));
            for ax in (0..dims.len()).rev() {
                idx[ax] += 1;
                if idx[ax] < dims[ax] {
                    break;
                }
                idx[ax] = 0;
            }
        }
        Self::new(labels, dims, data)
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn strides(&self) -> Vec<usize> {
        row_major_strides(&self.dims)
    }

    /// Position of a leg in the current ordering.
    pub fn leg(&self, label: &str) -> Result<usize> {
        self.labels
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| TensorError::Label(format!("no leg `{label}` in {:?}", self.labels)))
    }

    pub fn dim_of(&self, label: &str) -> Result<usize> {
        Ok(self.dims[self.leg(label)?])
    }

    pub fn get(&self, index: &[usize]) -> f64 {
        debug_assert_eq!(index.len(), self.dims.len());
        let off: usize = index.iter().zip(self.strides()).map(|(i, s)| i * s).sum();
        self.data[off]
    }

    pub fn to_scalar(&self) -> Option<f64> {
        (self.dims.is_empty()).then(|| self.data[0])
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            labels: self.labels.clone(),
            dims: self.dims.clone(),
            data: self.data.iter().map(|x| c * x).collect(),
        }
    }

    /// Entrywise sum; `other` is first permuted to this tensor's leg order.
    pub fn add(&self, other: &Self) -> Result<Self> {
        let order: Vec<&str> = self.labels.iter().map(String::as_str).collect();
        let other = other.permute(&order)?;
        if other.dims != self.dims {
            return Err(TensorError::Shape(format!("{:?} vs {:?}", self.dims, other.dims)));
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Ok(Self { labels: self.labels.clone(), dims: self.dims.clone(), data })
    }

    pub fn relabel(&self, old: &str, new: &str) -> Result<Self> {
        let pos = self.leg(old)?;
        let mut out = self.clone();
        out.labels[pos] = new.to_string();
        check_distinct(&out.labels)?;
        Ok(out)
    }

    pub fn permute(&self, order: &[&str]) -> Result<Self> {
        if order.len() != self.labels.len() {
            return Err(TensorError::Label(format!(
                "{order:?} is not a permutation of {:?}",
                self.labels
            )));
        }
        let mut perm = Vec::with_capacity(order.len());
        for name in order {
            let p = self.leg(name)?;
            if perm.contains(&p) {
                return Err(TensorError::Label(format!("leg `{name}` repeated in permutation")));
            }
            perm.push(p);
        }
        let data = permute_data(&self.data, &self.dims, &perm);
        Ok(Self {
            labels: perm.iter().map(|&p| self.labels[p].clone()).collect(),
            dims: perm.iter().map(|&p| self.dims[p]).collect(),
            data,
        })
    }

    /// Contracts paired legs of `self` and `other`. The result carries the
    /// free legs of `self` followed by the free legs of `other`, each in their
    /// original order.
    pub fn contract(&self, other: &Self, pairs: &[(&str, &str)]) -> Result<Self> {
        let mut a_paired = Vec::with_capacity(pairs.len());
        let mut b_paired = Vec::with_capacity(pairs.len());
        for &(la, lb) in pairs {
            let pa = self.leg(la)?;
            let pb = other.leg(lb)?;
            if a_paired.contains(&pa) || b_paired.contains(&pb) {
                return Err(TensorError::Label(format!("leg repeated in pairs ({la}, {lb})")));
            }
            if self.dims[pa] != other.dims[pb] {
                return Err(TensorError::Shape(format!(
                    "cannot pair `{la}` ({}) with `{lb}` ({})",
                    self.dims[pa], other.dims[pb]
                )));
            }
            a_paired.push(pa);
            b_paired.push(pb);
        }
        let a_free: Vec<usize> = (0..self.rank()).filter(|i| !a_paired.contains(i)).collect();
        let b_free: Vec<usize> = (0..other.rank()).filter(|i| !b_paired.contains(i)).collect();

        let labels: Vec<String> = a_free
            .iter()
            .map(|&i| self.labels[i].clone())
            .chain(b_free.iter().map(|&i| other.labels[i].clone()))
            .collect();
        check_distinct(&labels)?;

        let a_perm: Vec<usize> = a_free.iter().chain(&a_paired).copied().collect();
        let b_perm: Vec<usize> = b_paired.iter().chain(&b_free).copied().collect();
        let a_data = permute_data(&self.data, &self.dims, &a_perm);
        let b_data = permute_data(&other.data, &other.dims, &b_perm);

        let m: usize = a_free.iter().map(|&i| self.dims[i]).product();
        let k: usize = a_paired.iter().map(|&i| self.dims[i]).product();
        let n: usize = b_free.iter().map(|&i| other.dims[i]).product();
        let data = matmul(&a_data, &b_data, m, k, n);

        let dims = a_free
            .iter()
            .map(|&i| self.dims[i])
            .chain(b_free.iter().map(|&i| other.dims[i]))
            .collect();
        Ok(Self { labels, dims, data })
    }

    /// Merges `group` into a single leg named `new_label`, placed where the
    /// first grouped leg sat. Index arithmetic is row-major over `group`.
    pub fn fuse(&self, group: &[&str], new_label: &str) -> Result<(Self, FuseRecord)> {
        if group.is_empty() {
            return Err(TensorError::Label("empty fuse group".into()));
        }
        let positions = group.iter().map(|g| self.leg(g)).collect::<Result<Vec<_>>>()?;
        let first = *positions.iter().min().unwrap();
        let mut order: Vec<&str> = Vec::with_capacity(self.rank());
        for (i, l) in self.labels.iter().enumerate() {
            if i == first {
                order.extend_from_slice(group);
            }
            if !positions.contains(&i) {
                order.push(l);
            }
        }
        let permuted = self.permute(&order)?;
        let record = FuseRecord {
            labels: group.iter().map(|s| s.to_string()).collect(),
            dims: positions.iter().map(|&p| self.dims[p]).collect(),
        };
        let at = permuted.leg(group[0])?;
        let mut labels = permuted.labels[..at].to_vec();
        labels.push(new_label.to_string());
        labels.extend_from_slice(&permuted.labels[at + group.len()..]);
        let mut dims = permuted.dims[..at].to_vec();
        dims.push(record.dims.iter().product());
        dims.extend_from_slice(&permuted.dims[at + group.len()..]);
        check_distinct(&labels)?;
        Ok((Self { labels, dims, data: permuted.data }, record))
    }

    /// Inverse of [`fuse`](Self::fuse).
    pub fn split(&self, label: &str, record: &FuseRecord) -> Result<Self> {
        let at = self.leg(label)?;
        if self.dims[at] != record.dims.iter().product::<usize>() {
            return Err(TensorError::Shape(format!(
                "leg `{label}` has extent {}, record expects {:?}",
                self.dims[at], record.dims
            )));
        }
        let mut labels = self.labels[..at].to_vec();
        labels.extend(record.labels.iter().cloned());
        labels.extend_from_slice(&self.labels[at + 1..]);
        let mut dims = self.dims[..at].to_vec();
        dims.extend_from_slice(&record.dims);
        dims.extend_from_slice(&self.dims[at + 1..]);
        check_distinct(&labels)?;
        Ok(Self { labels, dims, data: self.data.clone() })
    }

    /// Splits the legs into a row group and a column group and computes a
    /// truncated singular value decomposition. At most `chi` values are kept,
    /// and values below `cutoff * max(S)` are dropped.
    pub fn truncated_svd(
        &self,
        row_legs: &[&str],
        col_legs: &[&str],
        chi: usize,
        cutoff: f64,
        bond: &str,
    ) -> Result<TruncatedSvd> {
        if chi == 0 || cutoff < 0.0 {
            return Err(TensorError::Shape("chi must be >= 1 and cutoff >= 0".into()));
        }
        if row_legs.len() + col_legs.len() != self.rank()
            || row_legs.iter().any(|r| col_legs.contains(r))
        {
            return Err(TensorError::Shape(format!(
                "{row_legs:?} | {col_legs:?} is not a partition of {:?}",
                self.labels
            )));
        }
        let order: Vec<&str> = row_legs.iter().chain(col_legs).copied().collect();
        let p = self.permute(&order)?;
        let rows: usize = p.dims[..row_legs.len()].iter().product();
        let cols: usize = p.dims[row_legs.len()..].iter().product();
        let f = svd_truncate(&p.data, rows, cols, chi, cutoff);
        let k = f.s.len();

        let mut u_labels: Vec<String> = row_legs.iter().map(|s| s.to_string()).collect();
        u_labels.push(bond.to_string());
        let mut u_dims = p.dims[..row_legs.len()].to_vec();
        u_dims.push(k);
        let mut v_labels = vec![bond.to_string()];
        v_labels.extend(col_legs.iter().map(|s| s.to_string()));
        let mut v_dims = vec![k];
        v_dims.extend_from_slice(&p.dims[row_legs.len()..]);
        Ok(TruncatedSvd {
            u: Self::new(u_labels, u_dims, f.u)?,
            s: f.s,
            v: Self::new(v_labels, v_dims, f.vt)?,
            discarded_weight: f.discarded_weight,
        })
    }

    /// Text dump: a labels line, a dims line, then one entry per line in
    /// row-major order. Entries are written with round-trip precision.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "labels: {}", self.labels.join(" "));
        let dims: Vec<String> = self.dims.iter().map(usize::to_string).collect();
        let _ = writeln!(out, "dims: {}", dims.join(" "));
        for x in &self.data {
            let _ = writeln!(out, "{x:?}");
        }
        out
    }

    pub fn parse_dump(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let labels_line = lines.next().ok_or_else(|| TensorError::Parse("missing labels".into()))?;
        let labels: Vec<String> = labels_line
            .strip_prefix("labels:")
            .ok_or_else(|| TensorError::Parse("expected `labels:`".into()))?
            .split_whitespace()
            .map(str::to_string)
            .collect();
        let dims_line = lines.next().ok_or_else(|| TensorError::Parse("missing dims".into()))?;
        let dims = dims_line
            .strip_prefix("dims:")
            .ok_or_else(|| TensorError::Parse("expected `dims:`".into()))?
            .split_whitespace()
            .map(|d| d.parse::<usize>().map_err(|e| TensorError::Parse(e.to_string())))
            .collect::<Result<Vec<_>>>()?;
        let data = lines
            .map(|l| l.trim().parse::<f64>().map_err(|e| TensorError::Parse(e.to_string())))
            .collect::<Result<Vec<_>>>()?;
        Self::new(labels, dims, data)
    }
}

/// Row-major permutation of raw data: output axis `i` is input axis `perm[i]`.
pub(crate) fn permute_data(data: &[f64], dims: &[usize], perm: &[usize]) -> Vec<f64> {
    if perm.iter().enumerate().all(|(i, &p)| i == p) {
        return data.to_vec();
    }
    let src_strides = row_major_strides(dims);
    let out_dims: Vec<usize> = perm.iter().map(|&p| dims[p]).collect();
    let out_strides: Vec<usize> = perm.iter().map(|&p| src_strides[p]).collect();
    let rank = out_dims.len();
    let mut out = Vec::with_capacity(data.len());
    let mut idx = vec![0usize; rank];
    let mut off = 0usize;
    // innermost axis handled as a strided run
    let (inner_dim, inner_stride) = (out_dims[rank - 1], out_strides[rank - 1]);
    let outer: usize = out_dims[..rank - 1].iter().product();
    for _ in 0..outer {
        let mut o = off;
        for _ in 0..inner_dim {
            out.push(data[o]);
            o += inner_stride;
        }
        for ax in (0..rank - 1).rev() {
            idx[ax] += 1;
            off += out_strides[ax];
            if idx[ax] < out_dims[ax] {
                break;
            }
            off -= out_strides[ax] * out_dims[ax];
            idx[ax] = 0;
        }
    }
    out
}

/// Row-major `(m x k) * (k x n)`.
pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    let mut c = vec![0.0; m * n];
    if m == 0 || n == 0 || k == 0 {
        return c;
    }
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            n as isize,
            1,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
    c
}

/// Row-major factors of a truncated SVD.
pub struct MatrixSvd {
    /// `rows x k`
    pub u: Vec<f64>,
    pub s: Vec<f64>,
    /// `k x cols`
    pub vt: Vec<f64>,
    pub discarded_weight: f64,
}

pub fn svd_truncate(data: &[f64], rows: usize, cols: usize, chi: usize, cutoff: f64) -> MatrixSvd {
    // nalgebra's bidiagonal SVD loses accuracy (down to ~1e-5 relative) on
    // rank-deficient block-sparse matrices, which is what symmetric
    // boundary states produce; faer's stays at rounding level.
    let m = faer::Mat::<f64>::from_fn(rows, cols, |i, j| data[i * cols + j]);
    let svd = m.thin_svd().expect("thin SVD of a finite matrix");
    let (u, v, sv) = (svd.U(), svd.V(), svd.S().column_vector());
    let n = sv.nrows();
    let singular: Vec<f64> = (0..n).map(|i| sv[i]).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| singular[j].total_cmp(&singular[i]));
    let total: f64 = singular.iter().map(|s| s * s).sum();
    let smax = order.first().map(|&i| singular[i]).unwrap_or(0.0);
    let mut keep: Vec<usize> = order
        .iter()
        .copied()
        .take(chi)
        .filter(|&i| singular[i] > 0.0 && singular[i] >= cutoff * smax)
        .collect();
    if keep.is_empty() {
        keep.push(order[0]);
    }
    let kept: f64 = keep.iter().map(|&i| singular[i].powi(2)).sum();
    let discarded_weight = if total > 0.0 { ((total - kept) / total).max(0.0) } else { 0.0 };
    let k = keep.len();
    let mut uo = vec![0.0; rows * k];
    for r in 0..rows {
        for (c, &i) in keep.iter().enumerate() {
            uo[r * k + c] = u[(r, i)];
        }
    }
    let mut vo = vec![0.0; k * cols];
    for (r, &i) in keep.iter().enumerate() {
        for c in 0..cols {
            vo[r * cols + c] = v[(c, i)];
        }
    }
    MatrixSvd {
        u: uo,
        s: keep.iter().map(|&i| singular[i]).collect(),
        vt: vo,
        discarded_weight,
    }
}

/// Thin QR of a row-major `rows x cols` matrix: returns `(q: rows x k, r: k x cols)`.
pub fn qr_thin(data: &[f64], rows: usize, cols: usize) -> (Vec<f64>, Vec<f64>, usize) {
    let m = DMatrix::from_row_slice(rows, cols, data);
    let qr = m.qr();
    let q = qr.q();
    let r = qr.r();
    let k = q.ncols();
    let mut qo = vec![0.0; rows * k];
    for i in 0..rows {
        for j in 0..k {
            qo[i * k + j] = q[(i, j)];
        }
    }
    let mut ro = vec![0.0; k * cols];
    for i in 0..k {
        for j in 0..cols {
            ro[i * cols + j] = r[(i, j)];
        }
    }
    (qo, ro, k)
}

/// Eigenvalues of a symmetric row-major `n x n` matrix, ascending.
pub fn symmetric_eigenvalues(data: &[f64], n: usize) -> Vec<f64> {
    if n == 0 {
        return Vec::new();
    }
    // nalgebra's symmetric eigensolver returns inf/NaN on sparse, nearly
    // rank-one density-matrix blocks; faer's does not. A failed solve
    // yields NaNs so every downstream check fails loudly.
    let m = faer::Mat::<f64>::from_fn(n, n, |i, j| data[i * n + j]);
    let mut ev = m.self_adjoint_eigenvalues(faer::Side::Lower).unwrap_or_else(|_| vec![f64::NAN; n]);
    ev.sort_by(f64::total_cmp);
    ev
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EigOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for EigOptions {
    fn default() -> Self {
        Self { tol: 1e-10, max_iter: 10_000 }
    }
}

#[derive(Clone, Debug)]
pub struct EigResult {
    pub value: f64,
    /// Unit-norm iterate at convergence.
    pub vector: Vec<f64>,
    pub iterations: usize,
    /// `||A v - value v|| / |value|`
    pub residual: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Dominant eigenpair of a linear map by power iteration.
///
/// The estimate at each step is the overlap `<v, A v>` with the normalized
/// iterate `v`, so a negative dominant eigenvalue is reported with its sign.
/// Iteration stops once the estimate changes by less than `tol` relative.
pub fn leading_eig<F>(mut apply: F, seed: &[f64], opts: &EigOptions) -> Result<EigResult>
where
    F: FnMut(&[f64]) -> Vec<f64>,
{
    if !(opts.tol > 0.0) {
        return Err(TensorError::Shape("tolerance must be positive".into()));
    }
    let n0 = dot(seed, seed).sqrt();
    if !(n0 > 0.0) || !n0.is_finite() {
        return Err(TensorError::ZeroOperator);
    }
    let mut v: Vec<f64> = seed.iter().map(|x| x / n0).collect();
    let mut prev: Option<f64> = None;
    let mut residual = f64::INFINITY;
    for it in 1..=opts.max_iter {
        let w = apply(&v);
        if w.len() != v.len() {
            return Err(TensorError::Shape(format!(
                "operator returned length {} for input length {}",
                w.len(),
                v.len()
            )));
        }
        let nw = dot(&w, &w).sqrt();
        if !(nw > f64::MIN_POSITIVE) || !nw.is_finite() {
            return Err(TensorError::ZeroOperator);
        }
        let value = dot(&v, &w);
        let scale = value.abs().max(f64::MIN_POSITIVE);
        residual = w
            .iter()
            .zip(&v)
            .map(|(a, b)| (a - value * b).powi(2))
            .sum::<f64>()
            .sqrt()
            / scale;
        if let Some(p) = prev {
            // an identically vanishing overlap is not a converged estimate
            if value != 0.0 && (value - p).abs() < opts.tol * scale {
                return Ok(EigResult { value, vector: v, iterations: it, residual });
            }
        }
        prev = Some(value);
        v = w.into_iter().map(|x| x / nw).collect();
    }
    Err(TensorError::NonConvergence { iterations: opts.max_iter, residual })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(labels: [&str; 2], rows: usize, cols: usize, data: &[f64]) -> LabeledTensor {
        LabeledTensor::new(labels.to_vec(), vec![rows, cols], data.to_vec()).unwrap()
    }

    fn dense_apply(m: &[f64], n: usize) -> impl Fn(&[f64]) -> Vec<f64> + '_ {
        move |v: &[f64]| (0..n).map(|i| (0..n).map(|j| m[i * n + j] * v[j]).sum()).collect()
    }

    #[test]
    fn identity_contraction() {
        let id = mat(["i", "j"], 2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let v = LabeledTensor::new(vec!["k"], vec![2], vec![3.0, 4.0]).unwrap();
        let out = id.contract(&v, &[("j", "k")]).unwrap();
        assert_eq!(out.labels(), &["i".to_string()]);
        assert_eq!(out.data(), &[3.0, 4.0]);
    }

    #[test]
    fn matrix_product() {
        let a = mat(["row", "col"], 2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let b = mat(["r", "c"], 2, 2, &[5.0, 6.0, 7.0, 8.0]);
        let out = a.contract(&b, &[("col", "r")]).unwrap();
        assert_eq!(out.data(), &[19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn full_contraction_is_inner_product() {
        let a = LabeledTensor::new(vec!["x"], vec![3], vec![1.0, 2.0, 2.0]).unwrap();
        let b = a.relabel("x", "y").unwrap();
        let out = a.contract(&b, &[("x", "y")]).unwrap();
        assert_eq!(out.to_scalar(), Some(9.0));
    }

    #[test]
    fn contraction_errors() {
        let a = mat(["i", "j"], 2, 3, &[0.0; 6]);
        let b = mat(["k", "l"], 2, 2, &[0.0; 4]);
        assert!(matches!(a.contract(&b, &[("j", "k")]), Err(TensorError::Shape(_))));
        assert!(matches!(a.contract(&b, &[("zz", "k")]), Err(TensorError::Label(_))));
        assert!(matches!(
            a.contract(&b, &[("i", "k"), ("i", "l")]),
            Err(TensorError::Label(_))
        ));
    }

    #[test]
    fn constructor_rejects_bad_input() {
        assert!(LabeledTensor::new(vec!["a", "a"], vec![1, 1], vec![0.0]).is_err());
        assert!(LabeledTensor::new(vec!["a"], vec![2], vec![0.0]).is_err());
        assert!(matches!(
            LabeledTensor::new(vec!["a"], vec![1], vec![f64::NAN]),
            Err(TensorError::NonFinite(0))
        ));
    }

    #[test]
    fn permute_transposes() {
        let a = mat(["row", "col"], 2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let t = a.permute(&["col", "row"]).unwrap();
        assert_eq!(t.dims(), &[3, 2]);
        assert_eq!(t.data(), &[1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
        assert_eq!(a.permute(&["row", "col"]).unwrap(), a);
        assert!(a.permute(&["row", "row"]).is_err());
        assert!(a.permute(&["row"]).is_err());
    }

    #[test]
    fn fuse_and_split() {
        let a = mat(["r", "c"], 2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let (f, rec) = a.fuse(&["r", "c"], "rc").unwrap();
        assert_eq!(f.dims(), &[6]);
        assert_eq!(f.split("rc", &rec).unwrap(), a);
        let (g, _) = a.fuse(&["c"], "x").unwrap();
        assert_eq!(g.labels(), &["r".to_string(), "x".to_string()]);
        assert_eq!(g.data(), a.data());
        assert!(a.fuse(&["nope"], "x").is_err());

        // fused index 3 <-> (1, 1) for extents (2, 2)
        let b = LabeledTensor::from_fn(vec!["p", "q"], vec![2, 2], |i| (10 * i[0] + i[1]) as f64)
            .unwrap();
        let (fb, _) = b.fuse(&["p", "q"], "pq").unwrap();
        assert_eq!(fb.data()[3], 11.0);
    }

    #[test]
    fn svd_rank_one_and_diagonal() {
        let a = mat(["i", "j"], 2, 2, &[3.0, 4.0, 6.0, 8.0]);
        let f = a.truncated_svd(&["i"], &["j"], 1, 0.0, "b").unwrap();
        assert!(f.discarded_weight < 1e-15);

        let d = mat(["i", "j"], 2, 2, &[2.0, 0.0, 0.0, 1.0]);
        let f = d.truncated_svd(&["i"], &["j"], 1, 0.0, "b").unwrap();
        assert_eq!(f.s.len(), 1);
        assert!((f.s[0] - 2.0).abs() < 1e-14);
        assert!((f.discarded_weight - 0.2).abs() < 1e-14);

        let f = d.truncated_svd(&["i"], &["j"], 2, 0.75, "b").unwrap();
        assert_eq!(f.s.len(), 1, "cutoff drops 1 < 0.75 * 2");
        assert!(d.truncated_svd(&["i"], &["i"], 2, 0.0, "b").is_err());
        assert!(d.truncated_svd(&["i"], &["j"], 0, 0.0, "b").is_err());
    }

    #[test]
    fn svd_full_rank_reconstructs() {
        let a = LabeledTensor::from_fn(vec!["a", "b", "c"], vec![2, 3, 4], |i| {
            ((i[0] * 7 + i[1] * 3 + i[2]) as f64).sin()
        })
        .unwrap();
        let f = a.truncated_svd(&["a", "c"], &["b"], 64, 0.0, "k").unwrap();
        let s = LabeledTensor::new(
            vec!["k", "k2"],
            vec![f.s.len(), f.s.len()],
            (0..f.s.len() * f.s.len())
                .map(|x| if x / f.s.len() == x % f.s.len() { f.s[x / f.s.len()] } else { 0.0 })
                .collect(),
        )
        .unwrap();
        let us = f.u.contract(&s, &[("k", "k")]).unwrap();
        let back = us.contract(&f.v, &[("k2", "k")]).unwrap();
        let diff = back.add(&a.scaled(-1.0)).unwrap();
        assert!(diff.norm() / a.norm() < 1e-12);
    }

    #[test]
    fn power_iteration_examples() {
        let opts = EigOptions::default();
        let m = [2.0, 0.0, 0.0, 1.0];
        let r = leading_eig(dense_apply(&m, 2), &[1.0, 1.0], &opts).unwrap();
        assert!((r.value - 2.0).abs() < 1e-9);

        let m = [-3.0, 0.0, 0.0, 1.0];
        let r = leading_eig(dense_apply(&m, 2), &[1.0, 1.0], &opts).unwrap();
        assert!((r.value + 3.0).abs() < 1e-9);

        let m = [0.9, 0.1, 0.2, 0.8];
        let r = leading_eig(dense_apply(&m, 2), &[1.0, 0.0], &opts).unwrap();
        assert!((r.value - 1.0).abs() < 1e-9);
        assert!(r.residual >= 0.0);
    }

    #[test]
    fn power_iteration_failures() {
        let zero = [0.0; 4];
        assert!(matches!(
            leading_eig(dense_apply(&zero, 2), &[1.0, 1.0], &EigOptions::default()),
            Err(TensorError::ZeroOperator)
        ));
        // a rotation has no dominant real eigenvalue
        let rot = [0.0, -1.0, 1.0, 0.0];
        let opts = EigOptions { tol: 1e-12, max_iter: 50 };
        assert!(matches!(
            leading_eig(dense_apply(&rot, 2), &[1.0, 0.3], &opts),
            Err(TensorError::NonConvergence { .. })
        ));
        let near = [1.0, 0.0, 0.0, -0.999];
        assert!(matches!(
            leading_eig(dense_apply(&near, 2), &[1.0, 1.0], &opts),
            Err(TensorError::NonConvergence { .. })
        ));
    }

    #[test]
    fn dump_round_trip() {
        let a = LabeledTensor::from_fn(vec!["x", "y"], vec![2, 2], |i| 0.1 + i[0] as f64 / 3.0 - i[1] as f64)
            .unwrap();
        let text = a.dump();
        assert!(text.starts_with("labels: x y\ndims: 2 2\n"));
        assert_eq!(LabeledTensor::parse_dump(&text).unwrap(), a);
    }
}
