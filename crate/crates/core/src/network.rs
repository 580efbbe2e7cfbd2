//! Contraction kernels for planar layered networks.
//!
//! A *row* is a left-to-right chain of layered nodes whose outer horizontal
//! legs are clamped (extent 1). Applying a row maps a boundary vector indexed
//! by the down legs to one indexed by the up legs. Two representations of the
//! boundary are supported: a dense vector (exact, memory `prod(extents)`) and
//! a boundary MPS truncated to bond dimension `chi`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gauge::DoubledNode;
use crate::tensor::{leading_eig, matmul, qr_thin, svd_truncate, EigOptions, TensorError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetworkError {
    #[error("network shape error: {0}")]
    Shape(String),
    #[error("dense boundary of dimension {dim} exceeds the cap {cap}; use the bmps backend")]
    CapExceeded { dim: usize, cap: usize },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, NetworkError>;

pub const DEFAULT_DENSE_CAP: usize = 1 << 20;

/// A layered node in contraction-ready form: for every output pair
/// `(u, r)` the list of inputs `(l, d)` with their weights.
#[derive(Clone, Debug)]
pub struct SparseNode {
    /// Extents in leg order (up, right, down, left).
    pub ext: [usize; 4],
    /// Indexed by `u * ext[1] + r`; entries are `(l * ext[2] + d, value)`.
    pub by_out: Vec<Vec<(u32, f64)>>,
    /// Per-layer charge bits of each down-leg index.
    pub in_charges: Vec<u8>,
    /// Charge pinned on the right leg, if any.
    pub right_fixed: Option<u8>,
    pub layers: usize,
}

impl SparseNode {
    pub fn from_node(node: &DoubledNode) -> Self {
        let ext = node.extents();
        let mut by_out = vec![Vec::new(); ext[0] * ext[1]];
        node.for_each_nonzero(|[u, r, d, l], v| {
            by_out[u * ext[1] + r].push(((l * ext[2] + d) as u32, v));
        });
        let in_charges = (0..ext[2]).map(|i| node.bases[2].charge_bits(i)).collect();
        Self { ext, by_out, in_charges, right_fixed: node.bases[1].rule.fixed, layers: node.layers }
    }

    pub fn nnz(&self) -> usize {
        self.by_out.iter().map(Vec::len).sum()
    }
}

/// Sign and log-magnitude of a possibly huge or tiny real number.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogValue {
    pub sign: f64,
    pub ln_abs: f64,
}

impl LogValue {
    pub const ZERO: LogValue = LogValue { sign: 0.0, ln_abs: f64::NEG_INFINITY };

    pub fn from_f64(x: f64) -> Self {
        if x == 0.0 {
            Self::ZERO
        } else {
            Self { sign: x.signum(), ln_abs: x.abs().ln() }
        }
    }

    pub fn to_f64(self) -> f64 {
        if self.sign == 0.0 {
            0.0
        } else {
            self.sign * self.ln_abs.exp()
        }
    }

    /// `self / other`, or NaN if `other` vanishes.
    pub fn ratio(self, other: LogValue) -> f64 {
        if other.sign == 0.0 {
            return f64::NAN;
        }
        if self.sign == 0.0 {
            return 0.0;
        }
        self.sign * other.sign * (self.ln_abs - other.ln_abs).exp()
    }
}

fn check_row(row: &[SparseNode]) -> Result<()> {
    if row.is_empty() {
        return Err(NetworkError::Shape("empty row".into()));
    }
    if row[0].ext[3] != 1 || row[row.len() - 1].ext[1] != 1 {
        return Err(NetworkError::Shape("row ends must be clamped".into()));
    }
    for w in row.windows(2) {
        if w[0].ext[1] != w[1].ext[3] {
            return Err(NetworkError::Shape(format!(
                "horizontal bond mismatch {} vs {}",
                w[0].ext[1], w[1].ext[3]
            )));
        }
    }
    Ok(())
}

pub fn row_in_dim(row: &[SparseNode]) -> usize {
    row.iter().map(|n| n.ext[2]).product()
}

pub fn row_out_dim(row: &[SparseNode]) -> usize {
    row.iter().map(|n| n.ext[0]).product()
}

/// Applies a row to a dense boundary vector. The vector is indexed row-major
/// by the down legs (leftmost slowest); the result by the up legs.
pub fn apply_row(row: &[SparseNode], input: &[f64]) -> Result<Vec<f64>> {
    check_row(row)?;
    if input.len() != row_in_dim(row) {
        return Err(NetworkError::Shape(format!(
            "boundary has {} entries, row expects {}",
            input.len(),
            row_in_dim(row)
        )));
    }
    let mut cur = input.to_vec();
    let mut p = 1usize;
    for (i, node) in row.iter().enumerate() {
        let [eu, er, ed, el] = node.ext;
        let s_rest: usize = row[i + 1..].iter().map(|n| n.ext[2]).product();
        // cur: [p][el][ed][s_rest] -> out: [p][eu][er][s_rest]
        let in_block = el * ed * s_rest;
        let ur_n = eu * er;
        let mut out = vec![0.0; p * ur_n * s_rest];
        let min_len = (4096 / s_rest).max(1);
        let cur_ref = &cur;
        out.par_chunks_mut(s_rest).with_min_len(min_len).enumerate().for_each(|(idx, dst)| {
            let pi = idx / ur_n;
            let ur = idx % ur_n;
            let base = pi * in_block;
            for &(ld, v) in &node.by_out[ur] {
                let off = base + ld as usize * s_rest;
                let src = &cur_ref[off..off + s_rest];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += v * s;
                }
            }
        });
        cur = out;
        p *= eu;
    }
    Ok(cur)
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Exact contraction of a finite lattice given bottom-to-top rows. The bottom
/// row's down legs and the top row's up legs must all be clamped.
pub fn contract_dense(rows: &[Vec<SparseNode>], cap: usize) -> Result<LogValue> {
    if rows.is_empty() {
        return Err(NetworkError::Shape("no rows".into()));
    }
    if row_in_dim(&rows[0]) != 1 || row_out_dim(rows.last().unwrap()) != 1 {
        return Err(NetworkError::Shape("top and bottom boundaries must be clamped".into()));
    }
    let mut v = vec![1.0];
    let mut ln = 0.0;
    for row in rows {
        let dim = row_out_dim(row);
        if dim > cap {
            return Err(NetworkError::CapExceeded { dim, cap });
        }
        v = apply_row(row, &v)?;
        let s = max_abs(&v);
        if s == 0.0 {
            return Ok(LogValue::ZERO);
        }
        v.iter_mut().for_each(|x| *x /= s);
        ln += s.ln();
    }
    let x = v[0];
    Ok(LogValue { sign: x.signum(), ln_abs: ln + x.abs().ln() })
}

/// Marks the boundary configurations whose charges sum to zero in every
/// layer, separately on each stretch between pinned horizontal links.
///
/// Gauss law makes a row conserve these parities (a link pinned to charge 1
/// flips them on both sides), and the sector reached from a vacuum boundary
/// is the all-even one. Seeding inside it keeps power iteration away from
/// the nearly degenerate sectors next to it.
pub fn even_sector(row: &[SparseNode]) -> Vec<bool> {
    // (parity of the open stretch, all closed stretches even)
    let mut states = vec![(0u8, true)];
    for node in row {
        states = states
            .iter()
            .flat_map(|&(p, ok)| {
                node.in_charges.iter().map(move |&c| {
                    let p = p ^ c;
                    if node.right_fixed.is_some() { (0, ok && p == 0) } else { (p, ok) }
                })
            })
            .collect();
    }
    states.into_iter().map(|(p, ok)| ok && p == 0).collect()
}

/// Every solver iterates `T²` and reports `sqrt` of its leading eigenvalue.
///
/// Plain power iteration on `T` stalls whenever `-λ` is as large as `λ`:
/// the Rayleigh quotient of a mix of the two is stationary while the
/// iterate never converges. A link pinned to charge 1 does this by swapping
/// the even sector with its partner, and so do unpinned rows in which flux
/// strings cannot run straight. Both eigenvalues square to `λ²`.
pub const ITERATED_POWER: usize = 2;

/// `|λ|` from the leading eigenvalue of `T²`.
fn root_of_square(value: f64) -> Result<f64> {
    if value > 0.0 {
        Ok(value.sqrt())
    } else {
        Err(NetworkError::Shape(format!("row square has non-positive leading eigenvalue {value}")))
    }
}

/// Deterministic positive seed vector: ChaCha8 uniform draws in `[0.5, 1.5)`.
pub fn seed_vector(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| rng.random_range(0.5..1.5)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BmpsOptions {
    pub chi: usize,
    pub cutoff: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for BmpsOptions {
    fn default() -> Self {
        Self { chi: 64, cutoff: 1e-12, tol: 1e-8, max_iter: 5000 }
    }
}

/// Leading eigenvalue of a row operator, from either backend.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RowEig {
    pub value: f64,
    pub iterations: usize,
    pub residual: f64,
    /// Largest discarded weight of any compression (0 for the dense backend).
    pub truncation: f64,
}

pub fn dense_leading(row: &[SparseNode], seed: u64, opts: &EigOptions, cap: usize) -> Result<RowEig> {
    check_row(row)?;
    let n_in = row_in_dim(row);
    let n_out = row_out_dim(row);
    if n_in != n_out {
        return Err(NetworkError::Shape(format!("row maps {n_in} to {n_out} entries")));
    }
    if n_in > cap {
        if row.iter().filter(|n| n.right_fixed.is_some()).count() == 1 {
            return split_dense_leading(row, seed, opts, cap);
        }
        return Err(NetworkError::CapExceeded { dim: n_in, cap });
    }
    let mut seed_v = seed_vector(n_in, seed);
    for (x, even) in seed_v.iter_mut().zip(even_sector(row)) {
        if !even {
            *x = 0.0;
        }
    }
    let apply = |v: &[f64]| {
        let mut w = apply_row(row, v).expect("row checked");
        for _ in 1..ITERATED_POWER {
            w = apply_row(row, &w).expect("row checked");
        }
        w
    };
    let r = leading_eig(apply, &seed_v, opts)?;
    let value = root_of_square(r.value)?;
    Ok(RowEig { value, iterations: r.iterations, residual: r.residual, truncation: 0.0 })
}

/// Dense operator of a run of nodes with one open horizontal end, restricted
/// to the boundary configurations in `keep` (full segment indices).
struct SegmentOp {
    keep: Vec<usize>,
    /// One `keep.len()²` matrix per index of the open leg.
    mats: Vec<Vec<f64>>,
}

/// Boundary configurations of a segment ending at a link pinned to `phi`:
/// per-layer parity even, or flipped in every layer when `phi = 1`.
fn segment_keep(nodes: &[SparseNode], phi: u8) -> Vec<usize> {
    let flip = if phi == 1 { ((1u16 << nodes[0].layers) - 1) as u8 } else { 0 };
    let mut parity = vec![0u8];
    for node in nodes {
        parity = parity.iter().flat_map(|&p| node.in_charges.iter().map(move |&c| p ^ c)).collect();
    }
    parity.iter().enumerate().filter(|(_, &p)| p == 0 || p == flip).map(|(i, _)| i).collect()
}

impl SegmentOp {
    /// `open_left` selects which end of `nodes` is the open leg; the other
    /// end must be clamped.
    fn build(nodes: &[SparseNode], open_left: bool, keep: Vec<usize>) -> Self {
        let s_ext = if open_left { nodes[0].ext[3] } else { 1 };
        let k_ext = if open_left { s_ext } else { nodes[nodes.len() - 1].ext[1] };
        // a[o][h][i][s]: prefix out, current right bond, prefix in, open left index
        let (mut o_n, mut i_n, mut h_n) = (1usize, 1usize, s_ext);
        let mut a = vec![0.0; h_n * s_ext];
        for s in 0..s_ext {
            a[s * s_ext + s] = 1.0;
        }
        let last = nodes.len() - 1;
        for node in &nodes[..last] {
            let [eu, er, ed, _] = node.ext;
            let (o2, i2) = (o_n * eu, i_n * ed);
            let mut b = vec![0.0; o2 * er * i2 * s_ext];
            for o in 0..o_n {
                for (ur, entries) in node.by_out.iter().enumerate() {
                    let (u, r) = (ur / er, ur % er);
                    for &(ld, v) in entries {
                        let (l, d) = (ld as usize / ed, ld as usize % ed);
                        for i in 0..i_n {
                            let src = ((o * h_n + l) * i_n + i) * s_ext;
                            let dst = (((o * eu + u) * er + r) * i2 + i * ed + d) * s_ext;
                            for s in 0..s_ext {
                                b[dst + s] += v * a[src + s];
                            }
                        }
                    }
                }
            }
            a = b;
            o_n = o2;
            i_n = i2;
            h_n = er;
        }
        let node = &nodes[last];
        let [eu, er, ed, _] = node.ext;
        let mut pos = vec![usize::MAX; o_n * eu];
        for (j, &f) in keep.iter().enumerate() {
            pos[f] = j;
        }
        let n = keep.len();
        let mut mats = vec![vec![0.0; n * n]; k_ext];
        for o in 0..o_n {
            for (ur, entries) in node.by_out.iter().enumerate() {
                let (u, r) = (ur / er, ur % er);
                let so = pos[o * eu + u];
                if so == usize::MAX {
                    continue;
                }
                for &(ld, v) in entries {
                    let (l, d) = (ld as usize / ed, ld as usize % ed);
                    for i in 0..i_n {
                        let si = pos[i * ed + d];
                        if si == usize::MAX {
                            continue;
                        }
                        let src = ((o * h_n + l) * i_n + i) * s_ext;
                        for s in 0..s_ext {
                            let k = if open_left { s } else { r };
                            mats[k][so * n + si] += v * a[src + s];
                        }
                    }
                }
            }
        }
        Self { keep, mats }
    }
}

/// Leading eigenvalue of a row with exactly one pinned horizontal link.
///
/// The two segments either side of the pin only talk through the pinned
/// link's multiplicity index `k`, so the boundary is stored as a matrix `V`
/// (left configurations × right configurations, restricted to the sectors
/// Gauss law can reach) and the row acts as `Σ_k L_k V R_kᵀ`.
pub fn split_dense_leading(row: &[SparseNode], seed: u64, opts: &EigOptions, cap: usize) -> Result<RowEig> {
    check_row(row)?;
    let pins: Vec<usize> = (0..row.len()).filter(|&x| row[x].right_fixed.is_some()).collect();
    let [cut] = pins[..] else {
        return Err(NetworkError::Shape(format!("split contraction needs one pinned link, found {}", pins.len())));
    };
    let phi = row[cut].right_fixed.unwrap_or(0);
    let (left, right) = row.split_at(cut + 1);
    let (keep_l, keep_r) = (segment_keep(left, phi), segment_keep(right, phi));
    let dim = keep_l.len() * keep_r.len();
    if dim > cap {
        return Err(NetworkError::CapExceeded { dim, cap });
    }
    let (lop, rop) = rayon::join(|| SegmentOp::build(left, false, keep_l), || SegmentOp::build(right, true, keep_r));
    if lop.mats.len() != rop.mats.len() {
        return Err(NetworkError::Shape("pinned link extents disagree".into()));
    }
    let (nl, nr) = (lop.keep.len(), rop.keep.len());
    let r_t: Vec<Vec<f64>> = rop
        .mats
        .iter()
        .map(|m| {
            let mut t = vec![0.0; nr * nr];
            for i in 0..nr {
                for j in 0..nr {
                    t[j * nr + i] = m[i * nr + j];
                }
            }
            t
        })
        .collect();
    let once = |v: &[f64]| -> Vec<f64> {
        lop.mats
            .par_iter()
            .zip(&r_t)
            .map(|(l, rt)| matmul(l, &matmul(v, rt, nl, nr, nr), nl, nl, nr))
            .reduce(
                || vec![0.0; nl * nr],
                |mut acc, x| {
                    acc.iter_mut().zip(&x).for_each(|(a, b)| *a += b);
                    acc
                },
            )
    };
    let apply = |v: &[f64]| {
        let mut w = once(v);
        for _ in 1..ITERATED_POWER {
            w = once(&w);
        }
        w
    };
    // seed in the all-even sector, as for the plain dense solver
    let even_l = segment_keep(left, 0);
    let even_r = segment_keep(right, 0);
    let full = seed_vector(row_in_dim(row), seed);
    let dim_r: usize = right.iter().map(|n| n.ext[2]).product();
    let mut seed_v = vec![0.0; dim];
    for (a, &fl) in lop.keep.iter().enumerate() {
        if even_l.binary_search(&fl).is_err() {
            continue;
        }
        for (b, &fr) in rop.keep.iter().enumerate() {
            if even_r.binary_search(&fr).is_ok() {
                seed_v[a * nr + b] = full[fl * dim_r + fr];
            }
        }
    }
    let r = leading_eig(apply, &seed_v, opts)?;
    let value = root_of_square(r.value)?;
    Ok(RowEig { value, iterations: r.iterations, residual: r.residual, truncation: 0.0 })
}

/// Matrix product state with site tensors `(left bond, physical, right bond)`.
#[derive(Clone, Debug)]
pub struct Mps {
    pub tensors: Vec<Vec<f64>>,
    pub dims: Vec<(usize, usize, usize)>,
}

impl Mps {
    pub fn product(sites: Vec<Vec<f64>>) -> Self {
        let dims = sites.iter().map(|s| (1, s.len(), 1)).collect();
        Self { tensors: sites, dims }
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn max_bond(&self) -> usize {
        self.dims.iter().map(|d| d.2).max().unwrap_or(1)
    }

    /// Projects onto the boundary configurations of [`even_sector`]. The
    /// bond is enlarged by the running per-layer parity, which must vanish
    /// at every pinned link and at the right end.
    pub fn project_even(&self, row: &[SparseNode]) -> Mps {
        let p = 1usize << row[0].layers;
        let last = self.len() - 1;
        let mut tensors = Vec::with_capacity(self.len());
        let mut dims = Vec::with_capacity(self.len());
        let mut ps = 1usize;
        for (x, (t, &(l, n, r))) in self.tensors.iter().zip(&self.dims).enumerate() {
            let closes = x == last || row[x].right_fixed.is_some();
            let pt = if closes { 1 } else { p };
            let mut out = vec![0.0; l * ps * n * r * pt];
            for a in 0..l {
                for s in 0..ps {
                    for (i, &c) in row[x].in_charges.iter().enumerate() {
                        let t_par = s ^ c as usize;
                        if closes && t_par != 0 {
                            continue;
                        }
                        let t_idx = if closes { 0 } else { t_par };
                        for b in 0..r {
                            out[(((a * ps + s) * n + i) * r + b) * pt + t_idx] = t[(a * n + i) * r + b];
                        }
                    }
                }
            }
            tensors.push(out);
            dims.push((l * ps, n, r * pt));
            ps = pt;
        }
        Mps { tensors, dims }
    }

    /// Applies a row as an MPO without truncation.
    pub fn apply_row(&self, row: &[SparseNode]) -> Result<Mps> {
        check_row(row)?;
        if row.len() != self.len() {
            return Err(NetworkError::Shape("row and boundary differ in width".into()));
        }
        let mut tensors = Vec::with_capacity(row.len());
        let mut dims = Vec::with_capacity(row.len());
        for (node, (a_t, &(na, np, nb))) in row.iter().zip(self.tensors.iter().zip(&self.dims)) {
            let [eu, er, ed, el] = node.ext;
            if np != ed {
                return Err(NetworkError::Shape(format!("physical extent {np} vs down leg {ed}")));
            }
            let (oa, ob) = (na * el, nb * er);
            let mut out = vec![0.0; oa * eu * ob];
            for (ur, list) in node.by_out.iter().enumerate() {
                let (u, r) = (ur / er, ur % er);
                for &(ld, v) in list {
                    let (l, d) = (ld as usize / ed, ld as usize % ed);
                    for a in 0..na {
                        let src = &a_t[(a * ed + d) * nb..(a * ed + d + 1) * nb];
                        let row_off = ((a * el + l) * eu + u) * ob;
                        for (b, s) in src.iter().enumerate() {
                            out[row_off + b * er + r] += v * s;
                        }
                    }
                }
            }
            tensors.push(out);
            dims.push((oa, eu, ob));
        }
        Ok(Mps { tensors, dims })
    }

    /// Brings the state to right-canonical form with bonds truncated to
    /// `chi`, normalizes it, and returns `(ln norm, max discarded weight)`.
    /// A vanishing state yields `ln norm = -inf`.
    pub fn compress(&mut self, chi: usize, cutoff: f64) -> (f64, f64) {
        let n = self.len();
        for i in 0..n.saturating_sub(1) {
            let (a, p, b) = self.dims[i];
            let (q, r, k) = qr_thin(&self.tensors[i], a * p, b);
            self.tensors[i] = q;
            self.dims[i] = (a, p, k);
            let (_, p2, c) = self.dims[i + 1];
            self.tensors[i + 1] = matmul(&r, &self.tensors[i + 1], k, b, p2 * c);
            self.dims[i + 1] = (k, p2, c);
        }
        let mut discarded = 0.0f64;
        for i in (1..n).rev() {
            let (a, p, b) = self.dims[i];
            let f = svd_truncate(&self.tensors[i], a, p * b, chi, cutoff);
            let k = f.s.len();
            discarded = discarded.max(f.discarded_weight);
            self.tensors[i] = f.vt;
            self.dims[i] = (k, p, b);
            let mut us = f.u;
            for row in us.chunks_mut(k) {
                for (x, s) in row.iter_mut().zip(&f.s) {
                    *x *= s;
                }
            }
            let (a0, p0, _) = self.dims[i - 1];
            self.tensors[i - 1] = matmul(&self.tensors[i - 1], &us, a0 * p0, a, k);
            self.dims[i - 1] = (a0, p0, k);
        }
        let norm = self.tensors[0].iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return (f64::NEG_INFINITY, discarded);
        }
        self.tensors[0].iter_mut().for_each(|x| *x /= norm);
        (norm.ln(), discarded)
    }

    /// `<self|other>` for real states of equal physical shape.
    pub fn overlap(&self, other: &Mps) -> f64 {
        let mut env = vec![1.0];
        let (mut ea, mut eb) = (1usize, 1usize);
        for (i, (x, y)) in self.tensors.iter().zip(&other.tensors).enumerate() {
            let (xa, p, xb) = self.dims[i];
            let (ya, _, yb) = other.dims[i];
            debug_assert_eq!((xa, ya), (ea, eb));
            // t[xa, p*yb] = env[xa, ya] * y[ya, p*yb]
            let t = matmul(&env, y, xa, ya, p * yb);
            // env'[xb, yb] = sum_{xa,p} x[xa,p,xb] t[xa,p,yb]
            let mut xt = vec![0.0; xb * xa * p];
            for r in 0..xa * p {
                for c in 0..xb {
                    xt[c * xa * p + r] = x[r * xb + c];
                }
            }
            env = matmul(&xt, &t, xb, xa * p, yb);
            ea = xb;
            eb = yb;
        }
        env.iter().sum()
    }

    /// Full contraction of a state whose physical legs all have extent 1.
    pub fn scalar(&self) -> f64 {
        let mut v = vec![1.0];
        let mut a = 1;
        for (t, &(ta, p, tb)) in self.tensors.iter().zip(&self.dims) {
            debug_assert_eq!((ta, p), (a, 1));
            v = matmul(&v, t, 1, ta, tb);
            a = tb;
        }
        v.iter().sum()
    }
}

/// Leading eigenvalue of a row operator by power iteration on a boundary MPS.
/// The estimate at each step is `<v|T v>` with `v` normalized, evaluated
/// before truncating `T v`.
pub fn bmps_leading(row: &[SparseNode], seed: u64, opts: &BmpsOptions) -> Result<RowEig> {
    check_row(row)?;
    if row.iter().any(|n| n.ext[0] != n.ext[2]) {
        return Err(NetworkError::Shape("row does not map the boundary space to itself".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sites = row.iter().map(|n| (0..n.ext[2]).map(|_| rng.random_range(0.5..1.5)).collect()).collect();
    let mut v = Mps::product(sites).project_even(row);
    v.compress(opts.chi, opts.cutoff);
    let mut prev: Option<f64> = None;
    let mut truncation = 0.0f64;
    let mut residual = f64::INFINITY;
    for it in 1..=opts.max_iter {
        let mut w = v.apply_row(row)?;
        for _ in 1..ITERATED_POWER {
            let (ln, disc) = w.compress(opts.chi, opts.cutoff);
            if ln == f64::NEG_INFINITY {
                return Err(TensorError::ZeroOperator.into());
            }
            truncation = truncation.max(disc);
            // undo the normalization so <v|w> keeps the scale of T²
            let norm = ln.exp();
            w.tensors[0].iter_mut().for_each(|x| *x *= norm);
            w = w.apply_row(row)?;
        }
        let vv = v.overlap(&v);
        let vw = v.overlap(&w);
        let ww = w.overlap(&w);
        if !(ww > 0.0) || !ww.is_finite() {
            return Err(TensorError::ZeroOperator.into());
        }
        let value = vw / vv;
        let scale = value.abs().max(f64::MIN_POSITIVE);
        residual = (ww - 2.0 * value * vw + value * value * vv).max(0.0).sqrt() / scale;
        let (ln, disc) = w.compress(opts.chi, opts.cutoff);
        if ln == f64::NEG_INFINITY {
            return Err(TensorError::ZeroOperator.into());
        }
        truncation = truncation.max(disc);
        // truncation noise would otherwise grow in sectors Gauss law never
        // reaches, some of which carry larger eigenvalues
        w = w.project_even(row);
        w.compress(opts.chi, opts.cutoff);
        if let Some(p) = prev {
            if value != 0.0 && (value - p).abs() < opts.tol * scale {
                let value = root_of_square(value)?;
                return Ok(RowEig { value, iterations: it, residual, truncation });
            }
        }
        prev = Some(value);
        v = w;
    }
    Err(TensorError::NonConvergence { iterations: opts.max_iter, residual }.into())
}

/// Finite-lattice contraction with a truncated boundary MPS.
pub fn contract_bmps(rows: &[Vec<SparseNode>], chi: usize, cutoff: f64) -> Result<(LogValue, f64)> {
    if rows.is_empty() {
        return Err(NetworkError::Shape("no rows".into()));
    }
    if row_in_dim(&rows[0]) != 1 || row_out_dim(rows.last().unwrap()) != 1 {
        return Err(NetworkError::Shape("top and bottom boundaries must be clamped".into()));
    }
    let mut v = Mps::product(vec![vec![1.0]; rows[0].len()]);
    let mut ln = 0.0;
    let mut truncation = 0.0f64;
    for row in rows {
        v = v.apply_row(row)?;
        let (l, d) = v.compress(chi, cutoff);
        if l == f64::NEG_INFINITY {
            return Ok((LogValue::ZERO, truncation));
        }
        ln += l;
        truncation = truncation.max(d);
    }
    let x = v.scalar();
    if x == 0.0 {
        return Ok((LogValue::ZERO, truncation));
    }
    Ok((LogValue { sign: x.signum(), ln_abs: ln + x.abs().ln() }, truncation))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gauge::{doubled_traced_node, minimal_model, DoubledNode, LinkRule, MinimalModelParams};

    fn row_of(site: &crate::gauge::GaugeSiteTensor, w: usize) -> Vec<SparseNode> {
        (0..w)
            .map(|x| {
                let l = if x == 0 { LinkRule::VACUUM } else { LinkRule::PAIRED };
                let r = if x + 1 == w { LinkRule::VACUUM } else { LinkRule::PAIRED };
                SparseNode::from_node(&DoubledNode::build(site, 2, [LinkRule::PAIRED, r, LinkRule::PAIRED, l]).unwrap())
            })
            .collect()
    }

    /// Dense matrix of a row by applying it to unit vectors.
    fn row_matrix(row: &[SparseNode]) -> (Vec<f64>, usize) {
        let n = row_in_dim(row);
        let mut m = vec![0.0; n * n];
        for j in 0..n {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            let col = apply_row(row, &e).unwrap();
            for i in 0..n {
                m[i * n + j] = col[i];
            }
        }
        (m, n)
    }

    #[test]
    fn single_node_row_is_its_matrix() {
        let t = minimal_model(MinimalModelParams::new(1.0, 0.4, 0.7, 0.9).unwrap());
        let row = row_of(&t, 1);
        let (m, n) = row_matrix(&row);
        assert_eq!(n, 2);
        // vacuum -> vacuum: alpha^2; flux up from flux down (straight): gamma^2
        assert!((m[0] - 1.0).abs() < 1e-15);
        assert!((m[3] - 0.49).abs() < 1e-15);
        assert_eq!(m[1], 0.0);
        let _ = doubled_traced_node(&t);
    }

    #[test]
    fn dense_and_bmps_eigenvalues_agree() {
        let t = minimal_model(MinimalModelParams::new(1.0, 0.3, 0.6, 0.9).unwrap());
        let row = row_of(&t, 6);
        let d = dense_leading(&row, 1, &EigOptions::default(), DEFAULT_DENSE_CAP).unwrap();
        let b = bmps_leading(&row, 1, &BmpsOptions::default()).unwrap();
        assert!((d.value - b.value).abs() < 1e-6 * d.value.abs(), "{} vs {}", d.value, b.value);
    }

    #[test]
    fn finite_contractions_agree() {
        let t = minimal_model(MinimalModelParams::new(1.0, 0.5, 0.8, 0.7).unwrap());
        let w = 4;
        let rows: Vec<Vec<SparseNode>> = (0..3)
            .map(|y| {
                (0..w)
                    .map(|x| {
                        let up = if y == 2 { LinkRule::VACUUM } else { LinkRule::PAIRED };
                        let down = if y == 0 { LinkRule::VACUUM } else { LinkRule::PAIRED };
                        let l = if x == 0 { LinkRule::VACUUM } else { LinkRule::PAIRED };
                        let r = if x + 1 == w { LinkRule::VACUUM } else { LinkRule::PAIRED };
                        SparseNode::from_node(&DoubledNode::build(&t, 2, [up, r, down, l]).unwrap())
                    })
                    .collect()
            })
            .collect();
        let exact = contract_dense(&rows, DEFAULT_DENSE_CAP).unwrap();
        let (approx, trunc) = contract_bmps(&rows, 64, 0.0).unwrap();
        assert!(trunc < 1e-20);
        assert!((exact.ratio(approx) - 1.0).abs() < 1e-10);
        assert_eq!(exact.sign, 1.0);
    }

    #[test]
    fn mps_overlap_matches_dense() {
        let a = Mps::product(vec![vec![1.0, 2.0], vec![3.0, -1.0]]);
        let b = Mps::product(vec![vec![0.5, 1.0], vec![1.0, 1.0]]);
        // <a|b> = (1*0.5 + 2*1) * (3*1 - 1*1)
        assert!((a.overlap(&b) - 5.0).abs() < 1e-14);
        let mut c = a.clone();
        let (ln, _) = c.compress(4, 0.0);
        assert!((ln - (5.0f64.sqrt() * 10.0f64.sqrt()).ln()).abs() < 1e-12);
        assert!((c.overlap(&c) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cap_is_enforced() {
        let t = minimal_model(MinimalModelParams::toric_code());
        let row = row_of(&t, 4);
        assert!(matches!(
            dense_leading(&row, 0, &EigOptions::default(), 8),
            Err(NetworkError::CapExceeded { dim: 16, cap: 8 })
        ));
    }
}
