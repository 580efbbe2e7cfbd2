//! Brute-force ground truth on small lattices.
//!
//! States are stored sparsely as `(configuration, amplitude)` pairs, where
//! bit `i` of a configuration is the ℤ₂ value of link `i` in
//! [`Lattice::links`] order. Everything here is deliberately independent of
//! the layered-network machinery: amplitudes come from contracting the site
//! tensors one configuration at a time, and flux sectors are read off the
//! link values of each boundary star-part.

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gauge::GaugeSiteTensor;
use crate::geometry::{star_parts_unchecked, FluxSector, GeometryError, Lattice, Link, Region, Shape, StarPart};
use crate::tensor::symmetric_eigenvalues;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("{what} = {value} exceeds the cap {cap}")]
    CapExceeded { what: &'static str, value: usize, cap: usize },
    #[error("off-block weight {0:e} between flux sectors")]
    BlockLeakage(f64),
    #[error("state has zero norm")]
    ZeroNorm,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

pub type Result<T> = std::result::Result<T, OracleError>;

pub const LINK_CAP: usize = 24;
pub const REGION_LINK_CAP: usize = 12;
pub const PLAQUETTE_CAP: usize = 22;
const LEAKAGE_TOL: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq)]
pub struct StateVector {
    pub lat: Lattice,
    pub links: Vec<Link>,
    /// Nonzero amplitudes sorted by configuration.
    pub amps: Vec<(u64, f64)>,
}

impl StateVector {
    pub fn from_map(lat: Lattice, map: impl IntoIterator<Item = (u64, f64)>) -> Self {
        let mut acc: BTreeMap<u64, f64> = BTreeMap::new();
        for (c, a) in map {
            *acc.entry(c).or_default() += a;
        }
        let amps = acc.into_iter().filter(|&(_, a)| a != 0.0).collect();
        Self { lat, links: lat.links(), amps }
    }

    pub fn norm(&self) -> f64 {
        self.amps.iter().map(|(_, a)| a * a).sum::<f64>().sqrt()
    }

    pub fn normalized(&self) -> Result<Self> {
        let n = self.norm();
        if !(n > 0.0) {
            return Err(OracleError::ZeroNorm);
        }
        Ok(Self { lat: self.lat, links: self.links.clone(), amps: self.amps.iter().map(|&(c, a)| (c, a / n)).collect() })
    }

    pub fn amplitude(&self, config: u64) -> f64 {
        self.amps.binary_search_by_key(&config, |&(c, _)| c).map(|i| self.amps[i].1).unwrap_or(0.0)
    }

    pub fn mask_of(&self, links: &[Link]) -> u64 {
        links.iter().fold(0u64, |m, l| m | (1u64 << self.lat.link_index(*l).expect("lattice link")))
    }
}

/// Amplitude of one link configuration: the site tensors with every bond
/// restricted to the charge given by the configuration, contracted over the
/// multiplicities. Absent links are clamped to index 0.
fn config_amplitude(site: &GaugeSiteTensor, lat: &Lattice, q: &[u8]) -> f64 {
    let m = site.m();
    let lx = lat.lx;
    let qi = |l: Link| lat.link_index(l).map(|i| q[i] as usize);
    // boundary over the multiplicities of the up links of the previous row
    let mut below_dims = vec![1usize; lx];
    let mut boundary = vec![1.0];
    for y in 0..lat.ly {
        let up_dims: Vec<usize> =
            (0..lx).map(|x| if lat.has_link(Link::up(x, y)) { m } else { 1 }).collect();
        // layout [done up mults][h][remaining below mults]
        let mut cur = boundary;
        let mut p = 1usize;
        for x in 0..lx {
            let star = lat.star(x, y);
            let charge = |k: usize| star[k].and_then(qi).unwrap_or(0);
            let ext = |k: usize| if star[k].is_some() { m } else { 1 };
            let (eu, er, ed, el) = (up_dims[x], ext(1), below_dims[x], ext(3));
            let s: usize = below_dims[x + 1..].iter().product();
            let mut out = vec![0.0; p * eu * er * s];
            let (cu, cr, cd, cl) = (charge(0) * m, charge(1) * m, charge(2) * m, charge(3) * m);
            for pi in 0..p {
                for mu in 0..eu {
                    for mr in 0..er {
                        for ml in 0..el {
                            for md in 0..ed {
                                let t = site.at(cu + mu, cr + mr, cd + md, cl + ml);
                                if t == 0.0 {
                                    continue;
                                }
                                let src = ((pi * el + ml) * ed + md) * s;
                                let dst = ((pi * eu + mu) * er + mr) * s;
                                for k in 0..s {
                                    out[dst + k] += t * cur[src + k];
                                }
                            }
                        }
                    }
                }
            }
            cur = out;
            p *= eu;
        }
        boundary = cur;
        below_dims = up_dims;
    }
    boundary[0]
}

/// Contracts the PEPS into its full state vector.
pub fn contract_state(site: &GaugeSiteTensor, lat: &Lattice) -> Result<StateVector> {
    let n = lat.link_count();
    if n > LINK_CAP {
        return Err(OracleError::CapExceeded { what: "link count", value: n, cap: LINK_CAP });
    }
    // Charge patterns whose tensor block vanishes identically.
    let m = site.m();
    let mut block_zero = [false; 16];
    for (pat, z) in block_zero.iter_mut().enumerate() {
        let qs = [(pat >> 3) & 1, (pat >> 2) & 1, (pat >> 1) & 1, pat & 1];
        let mut all_zero = true;
        for u in 0..m {
            for r in 0..m {
                for d in 0..m {
                    for l in 0..m {
                        if site.at(qs[0] * m + u, qs[1] * m + r, qs[2] * m + d, qs[3] * m + l) != 0.0 {
                            all_zero = false;
                        }
                    }
                }
            }
        }
        *z = all_zero;
    }
    let stars: Vec<[Option<usize>; 4]> = (0..lat.ly)
        .flat_map(|y| (0..lat.lx).map(move |x| (x, y)))
        .map(|(x, y)| lat.star(x, y).map(|l| l.and_then(|l| lat.link_index(l))))
        .collect();
    let amps: Vec<(u64, f64)> = (0..1u64 << n)
        .into_par_iter()
        .filter_map(|c| {
            let bit = |i: Option<usize>| i.map_or(0, |i| ((c >> i) & 1) as usize);
            let skip = stars.iter().any(|s| {
                block_zero[(bit(s[0]) << 3) | (bit(s[1]) << 2) | (bit(s[2]) << 1) | bit(s[3])]
            });
            if skip {
                return None;
            }
            let q: Vec<u8> = (0..n).map(|i| ((c >> i) & 1) as u8).collect();
            let a = config_amplitude(site, lat, &q);
            (a != 0.0).then_some((c, a))
        })
        .collect();
    Ok(StateVector { lat: *lat, links: lat.links(), amps })
}

/// `max_s ||G_s ψ - ψ||` for the normalized state, with `G_s` the product of
/// σᶻ over the star of `s`.
pub fn check_gauss(state: &StateVector) -> f64 {
    let Ok(psi) = state.normalized() else { return 0.0 };
    let lat = psi.lat;
    let mut worst = 0.0f64;
    for y in 0..lat.ly {
        for x in 0..lat.lx {
            let mask = psi.mask_of(&lat.star(x, y).into_iter().flatten().collect::<Vec<_>>());
            let odd: f64 = psi.amps.iter().filter(|(c, _)| (c & mask).count_ones() % 2 == 1).map(|(_, a)| a * a).sum();
            worst = worst.max(2.0 * odd.sqrt());
        }
    }
    worst
}

/// One flux block of a reduced density matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RdmBlock {
    pub sector: FluxSector,
    /// Region-local configurations spanning the block.
    pub basis: Vec<u64>,
    /// Row-major, unnormalized.
    pub matrix: Vec<f64>,
    pub probability: f64,
    /// Eigenvalues of the unnormalized block, ascending, clipped at zero.
    pub eigenvalues: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockedRdm {
    pub parts: Vec<StarPart>,
    /// Region links in lattice order; bit `k` of a local configuration is link `k` here.
    pub region_links: Vec<Link>,
    pub blocks: Vec<RdmBlock>,
    /// Frobenius norm of the discarded off-block part.
    pub leakage: f64,
}

impl BlockedRdm {
    pub fn total_probability(&self) -> f64 {
        self.blocks.iter().map(|b| b.probability).sum()
    }

    /// Largest probability carried by a sector of odd total flux.
    pub fn max_odd_probability(&self) -> f64 {
        self.blocks.iter().filter(|b| !b.sector.is_admissible()).map(|b| b.probability).fold(0.0, f64::max)
    }

    pub fn block(&self, charges: &[u8]) -> Option<&RdmBlock> {
        self.blocks.iter().find(|b| b.sector.charges == charges)
    }
}

/// Reduced density matrix on an arbitrary set of links, dense over
/// `2^|links|` local configurations.
pub fn reduced_density_matrix(state: &StateVector, links: &[Link]) -> Result<(Vec<f64>, usize)> {
    if links.len() > REGION_LINK_CAP {
        return Err(OracleError::CapExceeded { what: "region links", value: links.len(), cap: REGION_LINK_CAP });
    }
    let psi = state.normalized()?;
    let idx: Vec<usize> = links.iter().map(|l| psi.lat.link_index(*l).expect("lattice link")).collect();
    let mask = idx.iter().fold(0u64, |m, &i| m | (1 << i));
    let local = |c: u64| idx.iter().enumerate().fold(0u64, |a, (k, &i)| a | (((c >> i) & 1) << k));
    let dim = 1usize << links.len();
    let mut groups: HashMap<u64, Vec<(usize, f64)>> = HashMap::new();
    for &(c, a) in &psi.amps {
        groups.entry(c & !mask).or_default().push((local(c) as usize, a));
    }
    let mut rho = vec![0.0; dim * dim];
    for list in groups.values() {
        for &(i, a) in list {
            for &(j, b) in list {
                rho[i * dim + j] += a * b;
            }
        }
    }
    Ok((rho, dim))
}

/// Reduced density matrix on `links` restricted to the local configurations
/// that occur in the state. Same nonzero spectrum as the dense one, without
/// the `2^|links|` dimension.
fn support_density_matrix(state: &StateVector, links: &[Link]) -> Result<(Vec<f64>, usize)> {
    let psi = state.normalized()?;
    let mask = psi.mask_of(links);
    let mut index: HashMap<u64, usize> = HashMap::new();
    let mut groups: HashMap<u64, Vec<(usize, f64)>> = HashMap::new();
    for &(c, a) in &psi.amps {
        let n = index.len();
        let i = *index.entry(c & mask).or_insert(n);
        groups.entry(c & !mask).or_default().push((i, a));
    }
    let dim = index.len();
    let mut rho = vec![0.0; dim * dim];
    for list in groups.values() {
        for &(i, a) in list {
            for &(j, b) in list {
                rho[i * dim + j] += a * b;
            }
        }
    }
    Ok((rho, dim))
}

/// Partial trace onto the region, bucketed by the flux through each
/// boundary star-part.
pub fn rdm_blocks(state: &StateVector, region: &Region) -> Result<BlockedRdm> {
    let lat = state.lat;
    let member = region.link_membership(&lat)?;
    let region_links: Vec<Link> = lat.links().into_iter().zip(&member).filter(|(_, &m)| m).map(|(l, _)| l).collect();
    let parts = star_parts_unchecked(&lat, region)?;
    let (rho, dim) = reduced_density_matrix(state, &region_links)?;
    let part_masks: Vec<u64> = parts
        .iter()
        .map(|p| {
            p.inside.iter().fold(0u64, |m, l| m | (1 << region_links.iter().position(|r| r == l).expect("inside link")))
        })
        .collect();
    let sector_of = |a: u64| -> Vec<u8> { part_masks.iter().map(|m| ((a & m).count_ones() % 2) as u8).collect() };
    let mut buckets: BTreeMap<Vec<u8>, Vec<u64>> = BTreeMap::new();
    for a in 0..dim as u64 {
        buckets.entry(sector_of(a)).or_default().push(a);
    }
    let mut leak = 0.0;
    for i in 0..dim {
        for j in 0..dim {
            let v = rho[i * dim + j];
            if v != 0.0 && sector_of(i as u64) != sector_of(j as u64) {
                leak += v * v;
            }
        }
    }
    let leakage = leak.sqrt();
    if leakage > LEAKAGE_TOL {
        return Err(OracleError::BlockLeakage(leakage));
    }
    let centers: Vec<_> = parts.iter().map(|p| p.center).collect();
    let mut blocks = Vec::new();
    for (charges, basis) in buckets {
        let k = basis.len();
        let mut matrix = vec![0.0; k * k];
        for (r, &a) in basis.iter().enumerate() {
            for (c, &b) in basis.iter().enumerate() {
                matrix[r * k + c] = rho[a as usize * dim + b as usize];
            }
        }
        let probability: f64 = (0..k).map(|i| matrix[i * k + i]).sum();
        let eigenvalues = symmetric_eigenvalues(&matrix, k).into_iter().map(|e| e.max(0.0)).collect();
        blocks.push(RdmBlock {
            sector: FluxSector { centers: centers.clone(), charges },
            basis,
            matrix,
            probability,
            eigenvalues,
        });
    }
    Ok(BlockedRdm { parts, region_links, blocks, leakage })
}

fn vn(spec: &[f64]) -> f64 {
    -spec.iter().filter(|&&x| x > 0.0).map(|&x| x * x.ln()).sum::<f64>()
}

/// `ln(Σ λⁿ) / (1 - n)`, or von Neumann at `n = 1`.
fn renyi(spec: &[f64], n: f64) -> f64 {
    if n == 1.0 {
        return vn(spec);
    }
    spec.iter().filter(|&&x| x > 0.0).map(|&x| x.powf(n)).sum::<f64>().ln() / (1.0 - n)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SectorEntropy {
    pub label: String,
    pub probability: f64,
    /// Entropies of the unnormalized block.
    pub s_vn: f64,
    pub s_renyi: f64,
    /// Entropies of the normalized block.
    pub s_bar_vn: f64,
    pub s_bar_renyi: f64,
    /// `Tr(ρ_φ²) / p(φ)²`.
    pub purity_bar: f64,
    /// Number of normalized eigenvalues above 1e-10.
    pub rank: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Entropies {
    pub order: f64,
    pub s_vn: f64,
    pub s_renyi: f64,
    /// `Tr(ρ_A²)`
    pub purity: f64,
    pub sectors: Vec<SectorEntropy>,
}

pub const RANK_TOL: f64 = 1e-10;

pub fn entropies(rdm: &BlockedRdm, n: f64) -> Entropies {
    assert!(n >= 1.0, "Rényi order must be at least 1");
    let all: Vec<f64> = rdm.blocks.iter().flat_map(|b| b.eigenvalues.iter().copied()).collect();
    let sectors = rdm
        .blocks
        .iter()
        .map(|b| {
            let p = b.probability;
            let norm: Vec<f64> = if p > 0.0 { b.eigenvalues.iter().map(|x| x / p).collect() } else { Vec::new() };
            SectorEntropy {
                label: b.sector.label(),
                probability: p,
                s_vn: vn(&b.eigenvalues),
                s_renyi: renyi(&b.eigenvalues, n),
                s_bar_vn: vn(&norm),
                s_bar_renyi: if norm.is_empty() { 0.0 } else { renyi(&norm, n) },
                purity_bar: norm.iter().map(|x| x * x).sum(),
                rank: norm.iter().filter(|&&x| x > RANK_TOL).count(),
            }
        })
        .collect();
    Entropies { order: n, s_vn: vn(&all), s_renyi: renyi(&all, n), purity: all.iter().map(|x| x * x).sum(), sectors }
}

/// `|S_A - (Σ p S̄(φ) - Σ p ln p)|`
pub fn decomposition_identity_check(rdm: &BlockedRdm) -> f64 {
    let e = entropies(rdm, 1.0);
    let rhs: f64 = e
        .sectors
        .iter()
        .filter(|s| s.probability > 0.0)
        .map(|s| s.probability * s.s_bar_vn - s.probability * s.probability.ln())
        .sum();
    (e.s_vn - rhs).abs()
}

/// `|Σ_φ exp((1-n) S⁽ⁿ⁾(φ)) - exp((1-n) S⁽ⁿ⁾)|` for `n > 1`, or the
/// von Neumann additivity gap `|Σ_φ S(φ) - S|` at `n = 1`.
pub fn renyi_sum_rule(rdm: &BlockedRdm, n: f64) -> f64 {
    let e = entropies(rdm, n);
    if n == 1.0 {
        return (e.sectors.iter().map(|s| s.s_vn).sum::<f64>() - e.s_vn).abs();
    }
    let lhs: f64 = e
        .sectors
        .iter()
        .filter(|s| s.probability > 0.0)
        .map(|s| ((1.0 - n) * s.s_renyi).exp())
        .sum();
    (lhs - ((1.0 - n) * e.s_renyi).exp()).abs()
}

/// Largest difference between the nonzero spectra of the region and
/// complement reduced density matrices.
pub fn schmidt_symmetry_gap(state: &StateVector, region: &Region) -> Result<f64> {
    let lat = state.lat;
    let member = region.link_membership(&lat)?;
    let (inside, outside): (Vec<_>, Vec<_>) = lat.links().into_iter().zip(member).partition(|(_, m)| *m);
    let spectrum = |links: Vec<(Link, bool)>| -> Result<Vec<f64>> {
        let links: Vec<Link> = links.into_iter().map(|(l, _)| l).collect();
        let (rho, dim) = support_density_matrix(state, &links)?;
        let mut ev: Vec<f64> = symmetric_eigenvalues(&rho, dim).into_iter().filter(|&e| e > RANK_TOL).collect();
        ev.sort_by(|a, b| b.total_cmp(a));
        Ok(ev)
    };
    let (a, b) = (spectrum(inside)?, spectrum(outside)?);
    if a.len() != b.len() {
        return Ok(f64::INFINITY);
    }
    Ok(a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max))
}

/// `⟨ψ|W|ψ⟩ / ⟨ψ|ψ⟩` for `W` the product of σˣ over `links`.
pub fn wilson_expectation(state: &StateVector, links: &[Link]) -> f64 {
    let mask = state.mask_of(links);
    let num: f64 = state.amps.iter().map(|&(c, a)| a * state.amplitude(c ^ mask)).sum();
    let den: f64 = state.amps.iter().map(|(_, a)| a * a).sum();
    num / den
}

fn plaquette_masks(lat: &Lattice) -> Result<Vec<u64>> {
    if lat.link_count() > 64 {
        return Err(OracleError::CapExceeded { what: "link count", value: lat.link_count(), cap: 64 });
    }
    let plaqs = lat.plaquettes();
    if plaqs.len() > PLAQUETTE_CAP {
        return Err(OracleError::CapExceeded { what: "plaquette count", value: plaqs.len(), cap: PLAQUETTE_CAP });
    }
    Ok(plaqs
        .iter()
        .map(|&(x, y)| {
            lat.plaquette(x, y).unwrap().iter().fold(0u64, |m, l| m | (1 << lat.link_index(*l).unwrap()))
        })
        .collect())
}

/// `Π_p (1 + κ X_p)/√(1+κ²) |0…0⟩` by explicit expansion over plaquette
/// subsets: the subset `S` contributes `κ^|S| / (1+κ²)^{P/2}`.
pub fn build_confined_state(kappa: f64, lat: &Lattice) -> Result<StateVector> {
    let masks = plaquette_masks(lat)?;
    let np = masks.len();
    let norm = (1.0 + kappa * kappa).powf(-(np as f64) / 2.0);
    let terms = (0..1u64 << np).map(|s| {
        let config = (0..np).filter(|k| (s >> k) & 1 == 1).fold(0u64, |c, k| c ^ masks[k]);
        (config, kappa.powi(s.count_ones() as i32) * norm)
    });
    Ok(StateVector::from_map(*lat, terms))
}

/// `Π_e (1 + κ σᶻ_e)/√(1+κ²) Π_p (1 + X_p)/√2 |0…0⟩`: the toric-code loop gas
/// reweighted by `1 + κ` per empty link and `1 - κ` per flux link.
pub fn build_deconfined_state(kappa: f64, lat: &Lattice) -> Result<StateVector> {
    let masks = plaquette_masks(lat)?;
    let np = masks.len();
    let nl = lat.link_count() as i32;
    let norm = 2f64.powf(-(np as f64) / 2.0) * (1.0 + kappa * kappa).powf(-(nl as f64) / 2.0);
    let terms = (0..1u64 << np).map(|s| {
        let config = (0..np).filter(|k| (s >> k) & 1 == 1).fold(0u64, |c, k| c ^ masks[k]);
        let flux = config.count_ones() as i32;
        (config, norm * (1.0 + kappa).powi(nl - flux) * (1.0 - kappa).powi(flux))
    });
    Ok(StateVector::from_map(*lat, terms))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfinedSrCheck {
    pub kappa: f64,
    pub area: usize,
    pub v0: f64,
    /// `S̄(φ)` from the oracle block of the single-line sector.
    pub numeric: f64,
    /// `ln 2 + v₀²`, the approximate closed form.
    pub closed_form: f64,
    /// Entropy of the spectrum `½(1 ± v₀)`.
    pub exact_form: f64,
    /// Normalized nonzero eigenvalues of the block, ascending.
    pub spectrum: Vec<f64>,
    /// Largest deviation of the spectrum from `½(1 ± v₀)`.
    pub spectrum_gap: f64,
    pub sector: String,
}

/// Single flux line entering and leaving a `w x h` plaquette block of the
/// confined state. The lattice has one spare row and column of sites around
/// the block; the region holds the links with both ends in the block.
pub fn confined_sr_entropy_check(kappa: f64, w: usize, h: usize) -> Result<ConfinedSrCheck> {
    if w == 0 || h == 0 || !h.is_multiple_of(2) {
        return Err(GeometryError::Region(format!(
            "a reflection-symmetric single-line sector needs w >= 1 and even h, got {w}x{h}"
        ))
        .into());
    }
    let lat = Lattice::new(w + 3, h + 3)?;
    let region = Region::new(
        Shape::Rectangle { width: w + 1, height: h + 1 },
        (1, 1),
        crate::geometry::Bipartition::Closed,
    )?;
    let psi = build_confined_state(kappa, &lat)?;
    let rdm = rdm_blocks(&psi, &region)?;
    let mid = 1 + h / 2;
    let (left, right) = ((1, mid), (w + 1, mid));
    let charges: Vec<u8> =
        rdm.parts.iter().map(|p| u8::from(p.center == left || p.center == right)).collect();
    if charges.iter().filter(|&&c| c == 1).count() != 2 {
        return Err(GeometryError::Region("boundary star-parts for the flux line not found".into()).into());
    }
    let block = rdm.block(&charges).ok_or(OracleError::ZeroNorm)?;
    let p = block.probability;
    if !(p > 0.0) {
        return Err(OracleError::ZeroNorm);
    }
    let mut spectrum: Vec<f64> = block.eigenvalues.iter().map(|x| x / p).filter(|&x| x > RANK_TOL).collect();
    spectrum.sort_by(f64::total_cmp);
    let area = w * h;
    let v0 = (2.0 * kappa / (1.0 + kappa * kappa)).powi(area as i32);
    let expected = [0.5 * (1.0 - v0), 0.5 * (1.0 + v0)];
    let spectrum_gap = if spectrum.len() == 2 {
        spectrum.iter().zip(expected).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    } else {
        f64::INFINITY
    };
    Ok(ConfinedSrCheck {
        kappa,
        area,
        v0,
        numeric: vn(&spectrum),
        closed_form: 2f64.ln() + v0 * v0,
        exact_form: vn(&expected),
        spectrum,
        spectrum_gap,
        sector: block.sector.label(),
    })
}
