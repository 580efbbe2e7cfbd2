//! Row transfer operators and the physics measures extracted from them.
//!
//! * `E` — a row of ket/bra nodes; `E∥(R)` additionally carries σˣ on two
//!   vertical links `R` columns apart (the two cuts of a tall Wilson loop).
//!   The confinement measure `κ` is minus the slope of `ln|r₁′(R)|` in `R`.
//! * Purity rows use two density-matrix copies. Columns `[a, b)` belong to
//!   the subsystem (swap pattern), the rest is traced. With a flux sector,
//!   the links crossing the subsystem edge are fixed to that flux in all four
//!   layers, and the baseline row carries the same projector so that the
//!   ratio is the *normalized* sector purity per row.
//! * Finite lattices: exact or boundary-MPS contraction of a whole lattice,
//!   used for Wilson loops and for purities of regions with corners.

use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gauge::{star_project, DoubledNode, GaugeError, GaugeSiteTensor, Leg, LinkRule};
use crate::geometry::{
    boundary_star_parts, star_parts_unchecked, count_contributing_corners, FluxSector, GeometryError, Lattice, Link, Region, Shape, StarPart,
};
use crate::network::{
    bmps_leading, contract_bmps, contract_dense, dense_leading, BmpsOptions, LogValue, NetworkError, RowEig, SparseNode,
    DEFAULT_DENSE_CAP,
};
use crate::tensor::{EigOptions, TensorError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TransferError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("fit error: {0}")]
    Fit(String),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Gauge(#[from] GaugeError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

impl From<TensorError> for TransferError {
    fn from(e: TensorError) -> Self {
        TransferError::Network(NetworkError::Tensor(e))
    }
}

pub type Result<T> = std::result::Result<T, TransferError>;

fn default_cap() -> usize {
    DEFAULT_DENSE_CAP
}
fn default_tol() -> f64 {
    1e-10
}
fn default_max_iter() -> usize {
    10_000
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Backend {
    Dense {
        #[serde(default = "default_cap")]
        cap: usize,
        #[serde(default = "default_tol")]
        tol: f64,
        #[serde(default = "default_max_iter")]
        max_iter: usize,
    },
    Bmps(BmpsOptions),
}

impl Backend {
    pub fn dense() -> Self {
        Backend::Dense { cap: DEFAULT_DENSE_CAP, tol: default_tol(), max_iter: default_max_iter() }
    }

    pub fn bmps(chi: usize) -> Self {
        Backend::Bmps(BmpsOptions { chi, ..BmpsOptions::default() })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Backend::Dense { .. } => "dense",
            Backend::Bmps(_) => "bmps",
        }
    }

    pub fn chi(&self) -> Option<usize> {
        match self {
            Backend::Dense { .. } => None,
            Backend::Bmps(o) => Some(o.chi),
        }
    }
}

/// A row of layered nodes acting on the boundary space of its vertical legs.
#[derive(Clone, Debug)]
pub struct TransferRow {
    pub nodes: Vec<DoubledNode>,
    pub layers: usize,
    pub label: String,
}

impl TransferRow {
    pub fn width(&self) -> usize {
        self.nodes.len()
    }

    /// Dimension of the dense boundary space.
    pub fn boundary_dim(&self) -> usize {
        self.nodes.iter().map(|n| n.extents()[2]).product()
    }

    pub fn compile(&self) -> Vec<SparseNode> {
        self.nodes.par_iter().map(SparseNode::from_node).collect()
    }

    /// Leading eigenvalue with the chosen backend, iterating from `seed`.
    pub fn leading(&self, backend: &Backend, seed: u64) -> Result<RowEig> {
        let row = self.compile();
        Ok(match backend {
            Backend::Dense { cap, tol, max_iter } => {
                dense_leading(&row, seed, &EigOptions { tol: *tol, max_iter: *max_iter }, *cap)?
            }
            Backend::Bmps(o) => bmps_leading(&row, seed, o)?,
        })
    }
}

fn row_from_rules(
    site: &GaugeSiteTensor,
    w: usize,
    layers: usize,
    vertical: impl Fn(usize) -> LinkRule,
    horizontal: impl Fn(usize) -> LinkRule,
    label: String,
) -> Result<TransferRow> {
    if w == 0 {
        return Err(TransferError::Shape("row width must be positive".into()));
    }
    let nodes = (0..w)
        .map(|x| {
            let left = if x == 0 { LinkRule::VACUUM } else { horizontal(x - 1) };
            let right = if x + 1 == w { LinkRule::VACUUM } else { horizontal(x) };
            let v = vertical(x);
            DoubledNode::build(site, layers, [v, right, v, left])
        })
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(TransferRow { nodes, layers, label })
}

/// The plain norm row `E`.
pub fn build_e(site: &GaugeSiteTensor, w: usize) -> Result<TransferRow> {
    row_from_rules(site, w, 2, |_| LinkRule::PAIRED, |_| LinkRule::PAIRED, "E".into())
}

/// Left cut column of a Wilson row of width `r` centred in `w` columns.
pub fn wilson_left_column(w: usize, r: usize) -> usize {
    (w - r) / 2
}

/// `E∥(R)`: σˣ on the vertical links of columns `a0` and `a0 + R`.
pub fn build_e_parallel(site: &GaugeSiteTensor, w: usize, r: usize) -> Result<TransferRow> {
    if r < 1 || r + 2 > w {
        return Err(TransferError::Shape(format!("Wilson width {r} needs 1 <= R <= W - 2 (W = {w})")));
    }
    let a0 = wilson_left_column(w, r);
    row_from_rules(
        site,
        w,
        2,
        |x| if x == a0 || x == a0 + r { LinkRule::FLIPPED } else { LinkRule::PAIRED },
        |_| LinkRule::PAIRED,
        format!("E_par(R={r})"),
    )
}

/// Purity row for the subsystem `interval` of columns. With `swap = false`
/// every column is traced (the baseline); `sector` fixes the flux on the
/// links crossing the subsystem edges in all four layers.
pub fn build_e_purity_row(
    site: &GaugeSiteTensor,
    w: usize,
    interval: Range<usize>,
    swap: bool,
    sector: Option<u8>,
) -> Result<TransferRow> {
    if interval.end > w || interval.start > interval.end {
        return Err(TransferError::Shape(format!("interval {interval:?} outside row of width {w}")));
    }
    let inside = |x: usize| swap && interval.contains(&x);
    let crossing = |x: usize| crosses(&interval, w, x);
    if let Some(phi) = sector {
        if phi > 1 {
            return Err(GaugeError::Charge(phi).into());
        }
        if !(0..w).any(crossing) {
            return Err(TransferError::Shape("a sector needs at least one crossing link".into()));
        }
    }
    let pat = |x: usize| if inside(x) { LinkRule::SWAP } else { LinkRule::TRACE };
    let label = format!(
        "E_purity({}{:?}{})",
        if swap { "swap " } else { "trace " },
        interval,
        sector.map(|p| format!(", phi={p}")).unwrap_or_default()
    );
    let mut row = row_from_rules(site, w, 4, pat, |x| pat(x), label)?;
    if let Some(phi) = sector {
        for x in (0..w).filter(|&x| crossing(x)) {
            let rule = pat(x).with_charge(phi)?;
            row.nodes[x] = row.nodes[x].with_rule(Leg::Right, rule)?;
            row.nodes[x + 1] = row.nodes[x + 1].with_rule(Leg::Left, rule)?;
        }
    }
    Ok(row)
}

/// Whether the horizontal link owned by column `x` crosses an edge of `interval`.
fn crosses(interval: &Range<usize>, w: usize, x: usize) -> bool {
    !interval.is_empty() && ((interval.start > 0 && x + 1 == interval.start) || (x + 1 == interval.end && x + 1 < w))
}

/// The norm row `E` with the links crossing the edges of `interval` pinned
/// to flux `phi`. The traced purity row in that sector is two independent
/// copies of it, so its leading eigenvalue is this one squared.
pub fn build_e_pinned(site: &GaugeSiteTensor, w: usize, interval: Range<usize>, phi: u8) -> Result<TransferRow> {
    if interval.end > w || interval.start > interval.end {
        return Err(TransferError::Shape(format!("interval {interval:?} outside row of width {w}")));
    }
    if !(0..w).any(|x| crosses(&interval, w, x)) {
        return Err(TransferError::Shape("a sector needs at least one crossing link".into()));
    }
    let rule = LinkRule::PAIRED.with_charge(phi)?;
    let mut row = build_e(site, w)?;
    row.label = format!("E({interval:?}, phi={phi})");
    for x in (0..w).filter(|&x| crosses(&interval, w, x)) {
        row.nodes[x] = row.nodes[x].with_rule(Leg::Right, rule)?;
        row.nodes[x + 1] = row.nodes[x + 1].with_rule(Leg::Left, rule)?;
    }
    Ok(row)
}

/// `Ẽ∥` (or `Ẽ` for an empty interval), swap pattern inside the interval.
pub fn build_e_purity(
    site: &GaugeSiteTensor,
    w: usize,
    interval: Range<usize>,
    sector: Option<u8>,
) -> Result<TransferRow> {
    build_e_purity_row(site, w, interval, true, sector)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatioResult {
    pub r_prime: RowEig,
    pub r: RowEig,
    pub ratio: f64,
}

pub fn leading_ratio(row: &TransferRow, base: &TransferRow, backend: &Backend, seed: u64) -> Result<RatioResult> {
    if row.width() != base.width() || row.layers != base.layers {
        return Err(TransferError::Shape("rows differ in width or layer count".into()));
    }
    let r_prime = row.leading(backend, seed)?;
    let r = base.leading(backend, seed)?;
    Ok(RatioResult { r_prime, r, ratio: r_prime.value / r.value })
}

/// Ordinary least squares fit `y = slope * x + intercept`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub point_count: usize,
}

pub fn ols(x: &[f64], y: &[f64]) -> Result<FitResult> {
    let n = x.len();
    if n != y.len() || n < 2 {
        return Err(TransferError::Fit(format!("need at least two paired points, got {n}")));
    }
    if let Some(i) = x.iter().chain(y).position(|v| !v.is_finite()) {
        return Err(TransferError::Fit(format!("non-finite value at position {i}")));
    }
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(TransferError::Fit("all abscissae coincide".into()));
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    let ss_res: f64 = x.iter().zip(y).map(|(a, b)| (b - slope * a - intercept).powi(2)).sum();
    let scale = y.iter().map(|b| b * b).sum::<f64>().max(f64::MIN_POSITIVE);
    let r_squared = if ss_tot <= 1e-24 * scale {
        if ss_res <= 1e-24 * scale { 1.0 } else { 0.0 }
    } else {
        1.0 - ss_res / ss_tot
    };
    Ok(FitResult { slope, intercept, r_squared, point_count: n })
}

/// One computed point of an experiment, as written to CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub experiment: String,
    pub w: usize,
    pub r_or_c: usize,
    pub sector_label: String,
    pub value: f64,
    pub residual: f64,
    pub backend: String,
    pub chi: Option<usize>,
    pub seed: u64,
}

pub const CSV_HEADER: &str = "experiment,W,R_or_c,sector_label,value,residual,backend,chi,seed";

impl CsvRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{:e},{:e},{},{},{}",
            self.experiment,
            self.w,
            self.r_or_c,
            self.sector_label,
            self.value,
            self.residual,
            self.backend,
            self.chi.map(|c| c.to_string()).unwrap_or_default(),
            self.seed
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KappaResult {
    pub kappa: f64,
    /// `exp(intercept)`: the prefactor of `|r₁′(R)| = Γ e^{-κR}`.
    pub gamma_prefactor: f64,
    pub fit: FitResult,
    /// `(R, r₁′(R))` with the sign kept.
    pub points: Vec<(usize, f64)>,
    pub r1: f64,
    pub rows: Vec<CsvRow>,
}

/// Fits `ln|r₁′(R)|` against `R`; `κ` is minus the slope.
pub fn estimate_kappa(
    site: &GaugeSiteTensor,
    w: usize,
    r_list: &[usize],
    backend: &Backend,
    seed: u64,
) -> Result<KappaResult> {
    if r_list.len() < 3 {
        return Err(TransferError::Fit("kappa needs at least three Wilson widths".into()));
    }
    let base = build_e(site, w)?.leading(backend, seed)?;
    let mut points = Vec::new();
    let mut rows = Vec::new();
    for &r in r_list {
        let eig = build_e_parallel(site, w, r)?.leading(backend, seed)?;
        if eig.value == 0.0 {
            return Err(TransferError::Fit(format!("r1'({r}) vanished; cannot take its logarithm")));
        }
        points.push((r, eig.value));
        rows.push(CsvRow {
            experiment: "confinement".into(),
            w,
            r_or_c: r,
            sector_label: String::new(),
            value: eig.value / base.value,
            residual: eig.residual,
            backend: backend.name().into(),
            chi: backend.chi(),
            seed,
        });
    }
    let x: Vec<f64> = points.iter().map(|p| p.0 as f64).collect();
    let y: Vec<f64> = points.iter().map(|p| p.1.abs().ln()).collect();
    let fit = ols(&x, &y)?;
    Ok(KappaResult { kappa: -fit.slope, gamma_prefactor: fit.intercept.exp(), fit, points, r1: base.value, rows })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EtaResult {
    /// `(R, η_d(R))`
    pub per_r: Vec<(usize, f64)>,
    pub mean: f64,
    /// `max - min` of `η_d(R)` over the list.
    pub spread: f64,
    pub rows: Vec<CsvRow>,
}

/// `η_d(R) = -log_d(r̃₁′(R) / r̃₁)` with the subsystem `[0, R)` of the row.
pub fn estimate_eta(
    site: &GaugeSiteTensor,
    w: usize,
    r_list: &[usize],
    sector: Option<u8>,
    backend: &Backend,
    seed: u64,
) -> Result<EtaResult> {
    if r_list.is_empty() {
        return Err(TransferError::Fit("eta needs at least one R".into()));
    }
    let d = site.legs[0].d() as f64;
    let mut per_r = Vec::new();
    let mut rows = Vec::new();
    let plain_base = if sector.is_none() { Some(build_e_purity(site, w, 0..0, None)?.leading(backend, seed)?) } else { None };
    for &r in r_list {
        if r < 1 || r >= w {
            return Err(TransferError::Shape(format!("R = {r} must satisfy 1 <= R < W = {w}")));
        }
        let num = build_e_purity(site, w, 0..r, sector)?.leading(backend, seed)?;
        let den = match plain_base {
            Some(b) => b,
            None => {
                let e = build_e_pinned(site, w, 0..r, sector.unwrap_or(0))?.leading(backend, seed)?;
                RowEig { value: e.value * e.value, ..e }
            }
        };
        let ratio = num.value / den.value;
        if !(ratio > 0.0) {
            return Err(TransferError::Fit(format!("non-positive purity ratio {ratio} at R = {r}")));
        }
        let eta = -ratio.ln() / d.ln();
        per_r.push((r, eta));
        rows.push(CsvRow {
            experiment: "arealaw".into(),
            w,
            r_or_c: r,
            sector_label: sector.map(|p| p.to_string()).unwrap_or_else(|| "full".into()),
            value: eta,
            residual: num.residual.max(den.residual),
            backend: backend.name().into(),
            chi: backend.chi(),
            seed,
        });
    }
    let vals: Vec<f64> = per_r.iter().map(|p| p.1).collect();
    let mean = vals.iter().sum::<f64>() / vals.len() as f64;
    let spread = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - vals.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(EtaResult { per_r, mean, spread, rows })
}

/// A parity constraint on legs of one lattice node.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeProjector {
    pub site: (usize, usize),
    pub legs: Vec<Leg>,
    pub charge: u8,
}

/// Rows (bottom to top) of a finite lattice with per-link rules.
pub fn lattice_rows(
    site: &GaugeSiteTensor,
    lat: &Lattice,
    layers: usize,
    rule: impl Fn(Link) -> LinkRule + Sync,
    projectors: &[NodeProjector],
) -> Result<Vec<Vec<SparseNode>>> {
    let coords: Vec<(usize, usize)> = (0..lat.ly).flat_map(|y| (0..lat.lx).map(move |x| (x, y))).collect();
    let nodes = coords
        .par_iter()
        .map(|&(x, y)| {
            let rules = lat.star(x, y).map(|l| l.map(&rule).unwrap_or(LinkRule::VACUUM));
            let mut node = DoubledNode::build(site, layers, rules)?;
            for p in projectors.iter().filter(|p| p.site == (x, y)) {
                node = star_project(&node, &p.legs, p.charge)?;
            }
            Ok(SparseNode::from_node(&node))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::with_capacity(lat.ly);
    let mut it = nodes.into_iter();
    for _ in 0..lat.ly {
        rows.push(it.by_ref().take(lat.lx).collect());
    }
    Ok(rows)
}

/// Contracts a finite lattice; returns the value and the truncation weight.
pub fn contract_lattice(rows: &[Vec<SparseNode>], backend: &Backend) -> Result<(LogValue, f64)> {
    Ok(match backend {
        Backend::Dense { cap, .. } => (contract_dense(rows, *cap)?, 0.0),
        Backend::Bmps(o) => contract_bmps(rows, o.chi, o.cutoff)?,
    })
}

/// Rectangular Wilson loop of `width x height` plaquettes whose bottom-left
/// corner is the site `origin`.
pub fn wilson_loop_links(origin: (usize, usize), width: usize, height: usize) -> Vec<Link> {
    let (ox, oy) = origin;
    let mut out = Vec::new();
    for x in ox..ox + width {
        out.push(Link::right(x, oy));
        out.push(Link::right(x, oy + height));
    }
    for y in oy..oy + height {
        out.push(Link::up(ox, y));
        out.push(Link::up(ox + width, y));
    }
    out.sort();
    out
}

/// `⟨W⟩` on a finite lattice: dressed over undressed contraction.
pub fn wilson_expectation_finite(
    site: &GaugeSiteTensor,
    lat: &Lattice,
    origin: (usize, usize),
    width: usize,
    height: usize,
    backend: &Backend,
) -> Result<f64> {
    let links = wilson_loop_links(origin, width, height);
    if width == 0 || height == 0 || links.iter().any(|&l| !lat.has_link(l)) {
        return Err(TransferError::Shape("Wilson loop does not fit the lattice".into()));
    }
    let plain = lattice_rows(site, lat, 2, |_| LinkRule::PAIRED, &[])?;
    let dressed = lattice_rows(
        site,
        lat,
        2,
        |l| if links.binary_search(&l).is_ok() { LinkRule::FLIPPED } else { LinkRule::PAIRED },
        &[],
    )?;
    let (a, _) = contract_lattice(&dressed, backend)?;
    let (b, _) = contract_lattice(&plain, backend)?;
    Ok(a.ratio(b))
}

/// Rules and projectors imposing a flux sector on the star-parts.
fn sector_constraints(
    parts: &[StarPart],
    charges: &[u8],
) -> Result<(Vec<(Link, u8)>, Vec<NodeProjector>)> {
    if parts.len() != charges.len() {
        return Err(TransferError::Shape(format!("{} charges for {} star-parts", charges.len(), parts.len())));
    }
    let mut fixed = Vec::new();
    let mut projectors = Vec::new();
    for (p, &phi) in parts.iter().zip(charges) {
        if phi > 1 {
            return Err(GaugeError::Charge(phi).into());
        }
        if p.size() == 1 {
            fixed.push((p.inside[0], phi));
        } else {
            let legs = p.inside_legs.iter().map(|&k| Leg::ALL[k]).collect();
            projectors.push(NodeProjector { site: p.center, legs, charge: phi });
        }
    }
    fixed.sort();
    for w in fixed.windows(2) {
        if w[0].0 == w[1].0 && w[0].1 != w[1].1 {
            return Err(TransferError::Shape(format!("link {:?} fixed to two different fluxes", w[0].0)));
        }
    }
    Ok((fixed, projectors))
}

/// Purity data of a finite-lattice region, optionally in one flux sector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinitePurity {
    /// `Tr(ρ_A²)`, or the normalized block purity `Tr(ρ_φ²)/p(φ)²` in a sector.
    pub purity: f64,
    /// Sector probability `p(φ)` (1 without a sector).
    pub probability: f64,
    pub ln_swap: f64,
    pub ln_norm: f64,
    pub truncation: f64,
}

pub fn finite_purity(
    site: &GaugeSiteTensor,
    lat: &Lattice,
    region: &Region,
    sector: Option<&[u8]>,
    backend: &Backend,
) -> Result<FinitePurity> {
    let member = region.link_membership(lat)?;
    let (fixed, projectors) = match sector {
        Some(charges) => {
            region.check_fits(lat)?;
            let parts = star_parts_unchecked(lat, region)?;
            sector_constraints(&parts, charges)?
        }
        None => (Vec::new(), Vec::new()),
    };
    let fixed_of = |l: Link| fixed.binary_search_by(|f| f.0.cmp(&l)).ok().map(|i| fixed[i].1);
    let with_fix = |base: LinkRule, l: Link| match fixed_of(l) {
        Some(phi) => base.with_charge(phi).expect("charges checked"),
        None => base,
    };
    let idx = |l: Link| lat.link_index(l).expect("lattice link");
    let swap_rows = lattice_rows(
        site,
        lat,
        4,
        |l| with_fix(if member[idx(l)] { LinkRule::SWAP } else { LinkRule::TRACE }, l),
        &projectors,
    )?;
    let norm_rows = lattice_rows(site, lat, 2, |l| with_fix(LinkRule::PAIRED, l), &projectors)?;
    let (z4, t4) = contract_lattice(&swap_rows, backend)?;
    let (z2, t2) = contract_lattice(&norm_rows, backend)?;
    // Two traced copies factorize, so the denominator is the squared norm.
    let purity = z4.sign * (z4.ln_abs - 2.0 * z2.ln_abs).exp();
    let probability = if sector.is_some() {
        let full = lattice_rows(site, lat, 2, |_| LinkRule::PAIRED, &[])?;
        let (zf, _) = contract_lattice(&full, backend)?;
        z2.ratio(zf)
    } else {
        1.0
    };
    Ok(FinitePurity { purity, probability, ln_swap: z4.ln_abs, ln_norm: z2.ln_abs, truncation: t4.max(t2) })
}

/// Which flux sector a corner-law run projects onto.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SectorChoice {
    /// The full purity, no projection.
    Full,
    Vacuum,
    /// A uniformly random admissible sector drawn from `seed` for each c.
    Random { seed: u64 },
    Explicit { charges: Vec<u8> },
}

impl SectorChoice {
    pub fn resolve(&self, parts: &[StarPart], c: usize) -> Option<FluxSector> {
        let centers: Vec<_> = parts.iter().map(|p| p.center).collect();
        match self {
            SectorChoice::Full => None,
            SectorChoice::Vacuum => Some(FluxSector::vacuum(parts)),
            SectorChoice::Random { seed } => Some(random_admissible_sector(parts, seed.wrapping_add(c as u64))),
            SectorChoice::Explicit { charges } => Some(FluxSector { centers, charges: charges.clone() }),
        }
    }

    pub fn label(&self) -> String {
        match self {
            SectorChoice::Full => "full".into(),
            SectorChoice::Vacuum => "vacuum".into(),
            SectorChoice::Random { seed } => format!("random:{seed}"),
            SectorChoice::Explicit { charges } => charges.iter().map(|c| c.to_string()).collect(),
        }
    }
}

/// Uniform random admissible sector: free charges on all parts but the last,
/// which fixes the total parity to zero.
pub fn random_admissible_sector(parts: &[StarPart], seed: u64) -> FluxSector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut charges: Vec<u8> = (0..parts.len()).map(|_| rng.random_range(0..2u8)).collect();
    if let Some((last, rest)) = charges.split_last_mut() {
        *last = rest.iter().fold(0u8, |a, &c| a ^ c);
    }
    FluxSector { centers: parts.iter().map(|p| p.center).collect(), charges }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CornerPoint {
    pub c: usize,
    pub contributing_corners: usize,
    pub sector_label: String,
    pub purity: f64,
    pub neg_ln_purity: f64,
    pub truncation: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CornerResult {
    /// Slope `b₁` and intercept `b₀` of `-ln p₂(φ)` against `c`.
    pub fit: FitResult,
    pub points: Vec<CornerPoint>,
    pub warning: Option<String>,
    pub rows: Vec<CsvRow>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CornerSpec {
    pub l: usize,
    pub c_list: Vec<usize>,
    pub sector: SectorChoice,
    #[serde(default)]
    pub bipartition: crate::geometry::Bipartition,
    /// Rows/columns of sites around the stairs bounding box.
    #[serde(default = "default_margin")]
    pub margin: usize,
}

fn default_margin() -> usize {
    2
}

/// `-ln p₂(φ)` of a stairs region against the step parameter `c`, on a
/// `(L + 2 margin)²` lattice. Under the default bipartition `c` equals the
/// number of contributing corners.
pub fn corner_law_fit(site: &GaugeSiteTensor, spec: &CornerSpec, backend: &Backend) -> Result<CornerResult> {
    if spec.c_list.len() < 3 {
        return Err(TransferError::Fit("the corner law needs at least three values of c".into()));
    }
    if spec.margin == 0 {
        return Err(TransferError::Shape("margin must be at least 1".into()));
    }
    let n = spec.l + 2 * spec.margin;
    let lat = Lattice::new(n, n)?;
    let warning = (site.m() != 1).then(|| {
        format!("bond dimension {} exceeds the charge count; corner law not expected to be exact", site.extent())
    });
    let mut points = Vec::new();
    let mut rows = Vec::new();
    for &c in &spec.c_list {
        let region = Region::new(Shape::Stairs { l: spec.l, c }, (spec.margin, spec.margin), spec.bipartition)?;
        let parts = boundary_star_parts(&lat, &region)?;
        let sector = spec.sector.resolve(&parts, c);
        if let Some(s) = &sector {
            if !s.is_admissible() {
                return Err(TransferError::Shape(format!("sector {} is not admissible", s.label())));
            }
        }
        let pur = finite_purity(site, &lat, &region, sector.as_ref().map(|s| s.charges.as_slice()), backend)?;
        if !(pur.purity > 0.0) {
            return Err(TransferError::Fit(format!("non-positive purity {} at c = {c}", pur.purity)));
        }
        let label = sector.as_ref().map(FluxSector::label).unwrap_or_else(|| "full".into());
        rows.push(CsvRow {
            experiment: "cornerlaw".into(),
            w: n,
            r_or_c: c,
            sector_label: label.clone(),
            value: -pur.purity.ln(),
            residual: pur.truncation,
            backend: backend.name().into(),
            chi: backend.chi(),
            seed: match spec.sector {
                SectorChoice::Random { seed } => seed,
                _ => 0,
            },
        });
        points.push(CornerPoint {
            c,
            contributing_corners: count_contributing_corners(&parts),
            sector_label: label,
            purity: pur.purity,
            neg_ln_purity: -pur.purity.ln(),
            truncation: pur.truncation,
        });
    }
    let x: Vec<f64> = points.iter().map(|p| p.c as f64).collect();
    let y: Vec<f64> = points.iter().map(|p| p.neg_ln_purity).collect();
    let fit = ols(&x, &y)?;
    Ok(CornerResult { fit, points, warning, rows })
}
