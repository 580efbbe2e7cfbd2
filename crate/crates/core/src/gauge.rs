//! ℤ₂ gauge-invariant site tensors and their layered descendants.
//!
//! A site tensor `T[u, r, d, l]` carries four virtual legs whose basis is
//! charge-major: `index = charge * m + multiplicity`. The physical link values
//! of the two links a site owns (its up and right links) are copies of the
//! charges on the up and right virtual legs, so they are never stored.
//!
//! Layered nodes (ket/bra for a norm, two ket/bra pairs for a purity) are
//! products of copies of the site tensor. Because the physical indices are
//! copies of bond charges, tracing them out becomes a constraint *on the bond*:
//! every bond gets a [`LinkRule`] describing which combinations of per-layer
//! bond indices survive, and the node legs are indexed by the compressed list
//! of surviving tuples ([`LegBasis`]). Both ends of a bond must use the same
//! rule; the network builder in `transfer` guarantees that.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{LabeledTensor, TensorError};

/// ℤ₂ has two charges.
pub const Z2: usize = 2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GaugeError {
    #[error("charge {0} is not a Z2 charge")]
    Charge(u8),
    #[error("invalid leg specification: {0}")]
    Leg(String),
    #[error("invalid parameters: {0}")]
    Params(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, GaugeError>;

/// One virtual leg of a site tensor: `d = 2` charges, `m` copies of each.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ChargeLeg {
    pub m: usize,
}

impl ChargeLeg {
    pub fn new(m: usize) -> Result<Self> {
        if m == 0 {
            return Err(GaugeError::Params("multiplicity must be at least 1".into()));
        }
        Ok(Self { m })
    }

    /// Leg for a total extent `D = 2m`.
    pub fn with_extent(extent: usize) -> Result<Self> {
        if extent == 0 || !extent.is_multiple_of(Z2) {
            return Err(GaugeError::Params(format!("extent {extent} is not a positive multiple of 2")));
        }
        Self::new(extent / Z2)
    }

    pub fn d(&self) -> usize {
        Z2
    }

    pub fn extent(&self) -> usize {
        Z2 * self.m
    }

    pub fn charge(&self, index: usize) -> u8 {
        (index / self.m) as u8
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Leg {
    Up,
    Right,
    Down,
    Left,
}

impl Leg {
    pub const ALL: [Leg; 4] = [Leg::Up, Leg::Right, Leg::Down, Leg::Left];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn label(self) -> &'static str {
        match self {
            Leg::Up => "up",
            Leg::Right => "right",
            Leg::Down => "down",
            Leg::Left => "left",
        }
    }
}

pub const LEG_LABELS: [&str; 4] = ["up", "right", "down", "left"];

/// Provenance recorded alongside a site tensor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SiteHeader {
    pub d: usize,
    pub m: usize,
    pub model: String,
    pub params: serde_json::Value,
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GaugeSiteTensor {
    pub legs: [ChargeLeg; 4],
    pub data: LabeledTensor,
    pub header: SiteHeader,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinimalModelParams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
}

impl MinimalModelParams {
    pub fn new(alpha: f64, beta: f64, gamma: f64, delta: f64) -> Result<Self> {
        let p = Self { alpha, beta, gamma, delta };
        let all = [alpha, beta, gamma, delta];
        if all.iter().any(|x| !x.is_finite()) {
            return Err(GaugeError::Params("weights must be finite".into()));
        }
        if all.iter().all(|&x| x == 0.0) {
            return Err(GaugeError::Params("at least one weight must be nonzero".into()));
        }
        Ok(p)
    }

    /// The toric-code point `α = β = γ = δ = 1`.
    pub fn toric_code() -> Self {
        Self { alpha: 1.0, beta: 1.0, gamma: 1.0, delta: 1.0 }
    }
}

fn parity_ok(legs: &[ChargeLeg; 4], idx: &[usize]) -> bool {
    let q: Vec<u8> = legs.iter().zip(idx).map(|(l, &i)| l.charge(i)).collect();
    (q[0] + q[1]) % 2 == (q[2] + q[3]) % 2
}

/// 0/1 tensor marking the entries allowed by the Gauss constraint
/// `q(up) + q(right) = q(down) + q(left) (mod 2)`.
pub fn constraint_mask(legs: [ChargeLeg; 4]) -> LabeledTensor {
    let dims = legs.iter().map(ChargeLeg::extent).collect();
    LabeledTensor::from_fn(LEG_LABELS.to_vec(), dims, |i| if parity_ok(&legs, i) { 1.0 } else { 0.0 })
        .expect("mask dimensions are positive")
}

/// The four-parameter `D = 2` model. Charged legs form flux lines through the
/// site: no line (α), a line turning between two adjacent legs (β), a straight
/// line up-down or left-right (γ), or two lines (δ).
pub fn minimal_model(p: MinimalModelParams) -> GaugeSiteTensor {
    let leg = ChargeLeg { m: 1 };
    let legs = [leg; 4];
    let data = LabeledTensor::from_fn(LEG_LABELS.to_vec(), vec![2; 4], |i| {
        let n = i.iter().sum::<usize>();
        match n {
            0 => p.alpha,
            4 => p.delta,
            2 if (i[0] == 1 && i[2] == 1) || (i[1] == 1 && i[3] == 1) => p.gamma,
            2 => p.beta,
            _ => 0.0,
        }
    })
    .expect("fixed shape");
    GaugeSiteTensor {
        legs,
        data,
        header: SiteHeader {
            d: Z2,
            m: 1,
            model: "minimal".into(),
            params: serde_json::to_value(p).expect("plain struct"),
            seed: None,
        },
    }
}

/// Gaussian random gauge-invariant tensor. Allowed entries are drawn i.i.d.
/// from `N(mu, sigma)` with a ChaCha8 stream seeded by `seed`, visiting entries
/// in lexicographic `(up, right, down, left)` order.
pub fn random_gauge_tensor(extent: usize, mu: f64, sigma: f64, seed: u64) -> Result<GaugeSiteTensor> {
    let leg = ChargeLeg::with_extent(extent)?;
    if !(sigma >= 0.0) || !sigma.is_finite() || !mu.is_finite() {
        return Err(GaugeError::Params(format!("need finite mu and sigma >= 0, got ({mu}, {sigma})")));
    }
    let legs = [leg; 4];
    let normal = Normal::new(mu, sigma).map_err(|e| GaugeError::Params(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = LabeledTensor::from_fn(LEG_LABELS.to_vec(), vec![extent; 4], |i| {
        if parity_ok(&legs, i) {
            normal.sample(&mut rng)
        } else {
            0.0
        }
    })?;
    Ok(GaugeSiteTensor {
        legs,
        data,
        header: SiteHeader {
            d: Z2,
            m: leg.m,
            model: "random".into(),
            params: serde_json::json!({ "D": extent, "mu": mu, "sigma": sigma }),
            seed: Some(seed),
        },
    })
}

impl GaugeSiteTensor {
    /// Wraps an arbitrary tensor, checking its shape and the Gauss constraint.
    pub fn from_tensor(legs: [ChargeLeg; 4], data: LabeledTensor, header: SiteHeader) -> Result<Self> {
        let data = data.permute(&LEG_LABELS)?;
        let want: Vec<usize> = legs.iter().map(ChargeLeg::extent).collect();
        if data.dims() != want.as_slice() {
            return Err(GaugeError::Leg(format!("dims {:?}, legs need {want:?}", data.dims())));
        }
        let mask = constraint_mask(legs);
        if data.data().iter().zip(mask.data()).any(|(&x, &k)| k == 0.0 && x != 0.0) {
            return Err(GaugeError::Leg("tensor has weight on parity-violating entries".into()));
        }
        Ok(Self { legs, data, header })
    }

    pub fn extent(&self) -> usize {
        self.legs[0].extent()
    }

    pub fn m(&self) -> usize {
        self.legs[0].m
    }

    #[inline]
    pub fn at(&self, u: usize, r: usize, d: usize, l: usize) -> f64 {
        let e = self.legs.map(|x| x.extent());
        self.data.data()[((u * e[1] + r) * e[2] + d) * e[3] + l]
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self { legs: self.legs, data: self.data.scaled(c), header: self.header.clone() }
    }

    /// JSON header line followed by the tensor text dump.
    pub fn dump(&self) -> String {
        let mut s = serde_json::to_string(&self.header).expect("serializable header");
        s.push('\n');
        s.push_str(&self.data.dump());
        s
    }

    pub fn parse_dump(text: &str) -> Result<Self> {
        let (head, body) = text
            .split_once('\n')
            .ok_or_else(|| GaugeError::Leg("missing header line".into()))?;
        let header: SiteHeader =
            serde_json::from_str(head).map_err(|e| GaugeError::Params(e.to_string()))?;
        let data = LabeledTensor::parse_dump(body)?;
        let leg = ChargeLeg::new(header.m)?;
        Self::from_tensor([leg; 4], data, header)
    }
}

/// How the per-layer indices of one bond are tied together.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pairing {
    /// Open-boundary clamp: every layer sits at index 0.
    Vacuum,
    /// Two layers (ket, bra) with equal physical charge.
    Paired,
    /// Two layers with opposite physical charge: a σˣ on the ket link.
    Flipped,
    /// Four layers (ket1, bra1, ket2, bra2), each copy traced on its own.
    Trace,
    /// Four layers with ket1 paired to bra2 and ket2 paired to bra1.
    Swap,
}

impl Pairing {
    fn layers(self) -> Option<usize> {
        match self {
            Pairing::Vacuum => None,
            Pairing::Paired | Pairing::Flipped => Some(2),
            Pairing::Trace | Pairing::Swap => Some(4),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LinkRule {
    pub pairing: Pairing,
    /// Restrict every layer to this charge.
    pub fixed: Option<u8>,
}

impl LinkRule {
    pub const VACUUM: LinkRule = LinkRule { pairing: Pairing::Vacuum, fixed: None };
    pub const PAIRED: LinkRule = LinkRule { pairing: Pairing::Paired, fixed: None };
    pub const FLIPPED: LinkRule = LinkRule { pairing: Pairing::Flipped, fixed: None };
    pub const TRACE: LinkRule = LinkRule { pairing: Pairing::Trace, fixed: None };
    pub const SWAP: LinkRule = LinkRule { pairing: Pairing::Swap, fixed: None };

    pub fn with_charge(self, charge: u8) -> Result<Self> {
        if charge > 1 {
            return Err(GaugeError::Charge(charge));
        }
        Ok(Self { fixed: Some(charge), ..self })
    }

    fn admits(&self, q: &[u8]) -> bool {
        if let Some(phi) = self.fixed {
            if q.iter().any(|&c| c != phi) {
                return false;
            }
        }
        match self.pairing {
            Pairing::Vacuum => true,
            Pairing::Paired => q[0] == q[1],
            Pairing::Flipped => q[0] != q[1],
            Pairing::Trace => q[0] == q[1] && q[2] == q[3],
            Pairing::Swap => q[0] == q[3] && q[1] == q[2],
        }
    }
}

/// The surviving per-layer index tuples of one bond, in lexicographic order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LegBasis {
    pub rule: LinkRule,
    pub layers: usize,
    /// Flattened `len() x layers` per-layer indices.
    states: Vec<u16>,
    /// Per state, bit `k` is the charge of layer `k`.
    charges: Vec<u8>,
}

impl LegBasis {
    pub fn new(rule: LinkRule, layers: usize, leg: ChargeLeg) -> Result<Self> {
        if !(1..=8).contains(&layers) {
            return Err(GaugeError::Leg(format!("{layers} layers not supported")));
        }
        if let Some(n) = rule.pairing.layers() {
            if n != layers {
                return Err(GaugeError::Leg(format!("{:?} needs {n} layers, node has {layers}", rule.pairing)));
            }
        }
        if let Some(phi) = rule.fixed {
            if phi > 1 {
                return Err(GaugeError::Charge(phi));
            }
        }
        let mut states = Vec::new();
        let mut charges = Vec::new();
        if rule.pairing == Pairing::Vacuum {
            if rule.fixed.unwrap_or(0) == 0 {
                states.extend(std::iter::repeat_n(0u16, layers));
                charges.push(0);
            }
        } else {
            let e = leg.extent();
            let total = e.pow(layers as u32);
            let mut idx = vec![0usize; layers];
            let mut q = vec![0u8; layers];
            for flat in 0..total {
                let mut f = flat;
                for k in (0..layers).rev() {
                    idx[k] = f % e;
                    f /= e;
                    q[k] = leg.charge(idx[k]);
                }
                if rule.admits(&q) {
                    states.extend(idx.iter().map(|&i| i as u16));
                    charges.push(q.iter().enumerate().fold(0u8, |acc, (k, &c)| acc | (c << k)));
                }
            }
        }
        if charges.is_empty() {
            return Err(GaugeError::Leg(format!("rule {rule:?} admits no states")));
        }
        Ok(Self { rule, layers, states, charges })
    }

    pub fn len(&self) -> usize {
        self.charges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.charges.is_empty()
    }

    pub fn state(&self, i: usize) -> &[u16] {
        &self.states[i * self.layers..(i + 1) * self.layers]
    }

    /// Per-layer charges of state `i` as a bit pattern.
    pub fn charge_bits(&self, i: usize) -> u8 {
        self.charges[i]
    }

    /// Index of a per-layer tuple, if the rule admits it.
    pub fn find(&self, tuple: &[u16]) -> Option<usize> {
        (0..self.len()).find(|&i| self.state(i) == tuple)
    }
}

/// A parity constraint on a set of legs of one node: in every layer the
/// charges on `legs` must sum to `charge` mod 2.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StarProjector {
    pub legs: Vec<Leg>,
    pub charge: u8,
}

/// A site tensor stacked `layers` times, with the bonds compressed according
/// to their link rules.
#[derive(Clone, Debug)]
pub struct DoubledNode {
    pub site: GaugeSiteTensor,
    pub layers: usize,
    pub bases: [LegBasis; 4],
    pub projectors: Vec<StarProjector>,
}

impl DoubledNode {
    pub fn build(site: &GaugeSiteTensor, layers: usize, rules: [LinkRule; 4]) -> Result<Self> {
        let mut bases = Vec::with_capacity(4);
        for (k, rule) in rules.iter().enumerate() {
            bases.push(LegBasis::new(*rule, layers, site.legs[k])?);
        }
        let bases: [LegBasis; 4] = bases.try_into().expect("four legs");
        Ok(Self { site: site.clone(), layers, bases, projectors: Vec::new() })
    }

    pub fn rules(&self) -> [LinkRule; 4] {
        [0, 1, 2, 3].map(|k| self.bases[k].rule)
    }

    pub fn extents(&self) -> [usize; 4] {
        [0, 1, 2, 3].map(|k| self.bases[k].len())
    }

    /// Extents of the uncompressed legs, `D^layers` (1 for clamped legs).
    pub fn full_extents(&self) -> [usize; 4] {
        [0, 1, 2, 3].map(|k| match self.bases[k].rule.pairing {
            Pairing::Vacuum => 1,
            _ => self.site.legs[k].extent().pow(self.layers as u32),
        })
    }

    /// Replaces the rule on one leg.
    pub fn with_rule(&self, leg: Leg, rule: LinkRule) -> Result<Self> {
        let mut out = self.clone();
        out.bases[leg.index()] = LegBasis::new(rule, self.layers, self.site.legs[leg.index()])?;
        Ok(out)
    }

    fn passes_projectors(&self, q: [u8; 4]) -> bool {
        let all = (1u16 << self.layers) as u8;
        let full = all.wrapping_sub(1);
        self.projectors.iter().all(|p| {
            let x = p.legs.iter().fold(0u8, |acc, l| acc ^ q[l.index()]);
            x == if p.charge == 1 { full } else { 0 }
        })
    }

    /// Entry at compressed indices `(up, right, down, left)`.
    pub fn value(&self, idx: [usize; 4]) -> f64 {
        let q = [0, 1, 2, 3].map(|k| self.bases[k].charge_bits(idx[k]));
        if !self.passes_projectors(q) {
            return 0.0;
        }
        let s = [0, 1, 2, 3].map(|k| self.bases[k].state(idx[k]));
        (0..self.layers)
            .map(|l| self.site.at(s[0][l] as usize, s[1][l] as usize, s[2][l] as usize, s[3][l] as usize))
            .product()
    }

    /// Calls `f` for every nonzero entry. Only charge-consistent combinations
    /// are visited: the left-leg charges follow from the other three.
    pub fn for_each_nonzero<F: FnMut([usize; 4], f64)>(&self, mut f: F) {
        let [bu, br, bd, bl] = &self.bases;
        let mut by_charge: HashMap<u8, Vec<usize>> = HashMap::new();
        for i in 0..bl.len() {
            by_charge.entry(bl.charge_bits(i)).or_default().push(i);
        }
        for u in 0..bu.len() {
            for r in 0..br.len() {
                for d in 0..bd.len() {
                    let want = bu.charge_bits(u) ^ br.charge_bits(r) ^ bd.charge_bits(d);
                    let Some(ls) = by_charge.get(&want) else { continue };
                    for &l in ls {
                        let v = self.value([u, r, d, l]);
                        if v != 0.0 {
                            f([u, r, d, l], v);
                        }
                    }
                }
            }
        }
    }

    /// Dense form over the compressed legs.
    pub fn to_tensor(&self) -> LabeledTensor {
        let e = self.extents();
        let mut data = vec![0.0; e.iter().product()];
        self.for_each_nonzero(|[u, r, d, l], v| data[((u * e[1] + r) * e[2] + d) * e[3] + l] = v);
        LabeledTensor::new(LEG_LABELS.to_vec(), e.to_vec(), data).expect("consistent extents")
    }
}

/// Ket and bra copies with the physical indices traced out.
pub fn doubled_traced_node(t: &GaugeSiteTensor) -> DoubledNode {
    DoubledNode::build(t, 2, [LinkRule::PAIRED; 4]).expect("paired rule always admits states")
}

/// Two density-matrix copies, traced within each copy or swapped between them.
pub fn quadrupled_node(t: &GaugeSiteTensor, pattern: Pairing) -> Result<DoubledNode> {
    if !matches!(pattern, Pairing::Trace | Pairing::Swap) {
        return Err(GaugeError::Leg(format!("{pattern:?} is not a replica pattern")));
    }
    DoubledNode::build(t, 4, [LinkRule { pairing: pattern, fixed: None }; 4])
}

/// Inserts σˣ on the ket copy of the site's own up and/or right link. The
/// neighbouring node sharing that bond must be dressed on its matching leg.
pub fn wilson_dress(node: &DoubledNode, edges: &[Leg]) -> Result<DoubledNode> {
    let mut out = node.clone();
    for &e in edges {
        if !matches!(e, Leg::Up | Leg::Right) {
            return Err(GaugeError::Leg(format!("a site owns only its up and right links, not {e:?}")));
        }
        out = out.with_leg_flipped(e)?;
    }
    Ok(out)
}

impl DoubledNode {
    /// Flips the ket charge of one bond, whichever leg of the bond this is.
    pub fn with_leg_flipped(&self, leg: Leg) -> Result<Self> {
        let rule = self.bases[leg.index()].rule;
        let flipped = match rule.pairing {
            Pairing::Paired => Pairing::Flipped,
            Pairing::Flipped => Pairing::Paired,
            p => return Err(GaugeError::Leg(format!("cannot dress a {p:?} bond"))),
        };
        self.with_rule(leg, LinkRule { pairing: flipped, ..rule })
    }
}

/// Restricts a leg to charge `charge` in every layer.
pub fn sector_project(node: &DoubledNode, leg: Leg, charge: u8) -> Result<DoubledNode> {
    let rule = node.bases[leg.index()].rule.with_charge(charge)?;
    node.with_rule(leg, rule)
}

/// Imposes total parity `total` on two legs of the same node, in every layer.
/// A star-part of size two consists of two links at the same star, and the
/// star of a site is exactly the four legs of its node, so a single node
/// carries the whole projector.
pub fn corner_project(node: &DoubledNode, legs: [Leg; 2], total: u8) -> Result<DoubledNode> {
    star_project(node, &legs, total)
}

/// Imposes total parity on any subset of a node's legs, in every layer.
pub fn star_project(node: &DoubledNode, legs: &[Leg], total: u8) -> Result<DoubledNode> {
    if total > 1 {
        return Err(GaugeError::Charge(total));
    }
    let mut ls = legs.to_vec();
    ls.sort();
    ls.dedup();
    if ls.len() != legs.len() || ls.is_empty() {
        return Err(GaugeError::Leg(format!("bad leg set {legs:?}")));
    }
    let mut out = node.clone();
    out.projectors.push(StarProjector { legs: ls, charge: total });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn count_ones(t: &LabeledTensor) -> usize {
        t.data().iter().filter(|&&x| x == 1.0).count()
    }

    #[test]
    fn mask_counts() {
        let m1 = constraint_mask([ChargeLeg::new(1).unwrap(); 4]);
        assert_eq!(count_ones(&m1), 8);
        let m2 = constraint_mask([ChargeLeg::new(2).unwrap(); 4]);
        assert_eq!(count_ones(&m2), 128);
        assert_eq!(m2.get(&[0, 0, 0, 0]), 1.0);
        assert_eq!(m2.get(&[1, 0, 0, 0]), 1.0, "index 1 is charge 0 multiplicity 1");
        assert_eq!(m2.get(&[2, 0, 0, 0]), 0.0);
    }

    #[test]
    fn minimal_model_entries() {
        let t = minimal_model(MinimalModelParams::new(2.0, 3.0, 5.0, 7.0).unwrap());
        assert_eq!(t.at(0, 0, 0, 0), 2.0);
        assert_eq!(t.at(1, 0, 1, 0), 5.0);
        assert_eq!(t.at(0, 1, 0, 1), 5.0);
        for (u, r, d, l) in [(1, 1, 0, 0), (0, 1, 1, 0), (0, 0, 1, 1), (1, 0, 0, 1)] {
            assert_eq!(t.at(u, r, d, l), 3.0);
        }
        assert_eq!(t.at(1, 1, 1, 1), 7.0);
        assert_eq!(t.at(1, 0, 0, 0), 0.0);
        let toric = minimal_model(MinimalModelParams::toric_code());
        assert_eq!(toric.data.data(), constraint_mask(toric.legs).data());
        let vac = minimal_model(MinimalModelParams::new(1.0, 0.0, 0.0, 0.0).unwrap());
        assert_eq!(vac.data.data().iter().filter(|&&x| x != 0.0).count(), 1);
        assert!(MinimalModelParams::new(0.0, 0.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn minimal_model_rotation_invariant() {
        let t = minimal_model(MinimalModelParams::new(0.3, 1.1, -0.7, 2.0).unwrap());
        for u in 0..2 {
            for r in 0..2 {
                for d in 0..2 {
                    for l in 0..2 {
                        assert_eq!(t.at(u, r, d, l), t.at(l, u, r, d));
                    }
                }
            }
        }
    }

    #[test]
    fn random_tensor_properties() {
        let a = random_gauge_tensor(4, 1.0, 0.5, 42).unwrap();
        let b = random_gauge_tensor(4, 1.0, 0.5, 42).unwrap();
        assert_eq!(a.data, b.data);
        let mask = constraint_mask(a.legs);
        for (x, k) in a.data.data().iter().zip(mask.data()) {
            if *k == 0.0 {
                assert_eq!(x.to_bits(), 0f64.to_bits());
            }
        }
        let flat = random_gauge_tensor(4, 1.0, 0.0, 7).unwrap();
        assert_eq!(flat.data.data(), mask.data());
        let d2 = random_gauge_tensor(2, 1.0, 0.0, 1).unwrap();
        assert_eq!(d2.data, minimal_model(MinimalModelParams::toric_code()).data);
        assert!(random_gauge_tensor(3, 1.0, 0.1, 0).is_err());
        assert!(random_gauge_tensor(4, 1.0, -0.1, 0).is_err());
    }

    #[test]
    fn leg_basis_sizes() {
        let l1 = ChargeLeg::new(1).unwrap();
        let l2 = ChargeLeg::new(2).unwrap();
        assert_eq!(LegBasis::new(LinkRule::PAIRED, 2, l1).unwrap().len(), 2);
        assert_eq!(LegBasis::new(LinkRule::PAIRED, 2, l2).unwrap().len(), 8);
        assert_eq!(LegBasis::new(LinkRule::FLIPPED, 2, l2).unwrap().len(), 8);
        assert_eq!(LegBasis::new(LinkRule::TRACE, 4, l1).unwrap().len(), 4);
        assert_eq!(LegBasis::new(LinkRule::SWAP, 4, l2).unwrap().len(), 64);
        assert_eq!(LegBasis::new(LinkRule::SWAP.with_charge(1).unwrap(), 4, l2).unwrap().len(), 16);
        assert_eq!(LegBasis::new(LinkRule::TRACE.with_charge(0).unwrap(), 4, l1).unwrap().len(), 1);
        assert_eq!(LegBasis::new(LinkRule::VACUUM, 4, l2).unwrap().len(), 1);
        assert!(LegBasis::new(LinkRule::PAIRED, 4, l1).is_err());
        assert!(LinkRule::PAIRED.with_charge(2).is_err());
    }

    /// Brute force over all ket/bra index pairs of the uncompressed legs.
    #[test]
    fn doubled_node_matches_brute_force() {
        let t = random_gauge_tensor(2, 0.3, 1.0, 3).unwrap();
        let node = doubled_traced_node(&t);
        let e = node.extents();
        assert_eq!(e, [2; 4]);
        for u in 0..2 {
            for r in 0..2 {
                for d in 0..2 {
                    for l in 0..2 {
                        let s = [u, r, d, l].map(|k| k as u16);
                        let idx = [0, 1, 2, 3].map(|k| node.bases[k].find(&[s[k], s[k]]).unwrap());
                        let want = t.at(u, r, d, l).powi(2);
                        assert_eq!(node.value(idx), want);
                    }
                }
            }
        }
        let vac = minimal_model(MinimalModelParams::new(1.0, 0.0, 0.0, 0.0).unwrap());
        let dn = doubled_traced_node(&vac).to_tensor();
        assert_eq!(dn.data().iter().filter(|&&x| x != 0.0).count(), 1);
        assert_eq!(dn.get(&[0, 0, 0, 0]), 1.0);
    }

    #[test]
    fn doubled_node_scales_quadratically() {
        let t = random_gauge_tensor(4, 1.0, 0.4, 9).unwrap();
        let a = doubled_traced_node(&t).to_tensor();
        let b = doubled_traced_node(&t.scaled(-1.5)).to_tensor();
        let diff = b.add(&a.scaled(-2.25)).unwrap();
        assert!(diff.norm() <= 1e-12 * a.norm());
    }

    #[test]
    fn sector_projections_are_complete() {
        let t = random_gauge_tensor(4, 1.0, 0.7, 5).unwrap();
        let quad = quadrupled_node(&t, Pairing::Swap).unwrap();
        assert_eq!(sector_project(&quad, Leg::Left, 1).unwrap().extents()[3], 16);
        // Per node, completeness holds for ket/bra pairs, where both layers
        // already carry the same charge.
        let q = doubled_traced_node(&t);
        let full = q.to_tensor();
        // The fixed-charge bases are subsets of the full basis; re-embed and sum.
        let mut acc = vec![0.0; full.len()];
        let e = q.extents();
        for phi in 0..2 {
            let p = sector_project(&q, Leg::Left, phi).unwrap();
            assert_eq!(p.extents()[3], 4);
            p.for_each_nonzero(|[u, r, d, l], v| {
                let lf = q.bases[3].find(p.bases[3].state(l)).unwrap();
                acc[((u * e[1] + r) * e[2] + d) * e[3] + lf] += v;
            });
        }
        assert_eq!(acc, full.data());
        assert!(sector_project(&q, Leg::Left, 2).is_err());

        let d2 = quadrupled_node(&minimal_model(MinimalModelParams::toric_code()), Pairing::Trace).unwrap();
        assert_eq!(sector_project(&d2, Leg::Up, 1).unwrap().extents()[0], 1);
    }

    #[test]
    fn corner_projector_counts_and_completeness() {
        let t = minimal_model(MinimalModelParams::toric_code());
        let n = doubled_traced_node(&t);
        // D = 2: joint charge patterns of (up, left) with even parity
        let mut kept = std::collections::HashSet::new();
        let even = corner_project(&n, [Leg::Up, Leg::Left], 0).unwrap();
        even.for_each_nonzero(|i, _| {
            kept.insert((i[0], i[3]));
        });
        assert_eq!(kept.len(), 2);
        let odd = corner_project(&n, [Leg::Up, Leg::Left], 1).unwrap();
        let (a, b, c) = (even.to_tensor(), odd.to_tensor(), n.to_tensor());
        assert_eq!(a.add(&b).unwrap(), c);
        assert!(corner_project(&n, [Leg::Up, Leg::Up], 0).is_err());
    }

    #[test]
    fn wilson_dress_flips_ket_charge() {
        let t = minimal_model(MinimalModelParams::toric_code());
        let n = doubled_traced_node(&t);
        assert_eq!(wilson_dress(&n, &[]).unwrap().to_tensor(), n.to_tensor());
        let w = wilson_dress(&n, &[Leg::Up]).unwrap();
        assert_eq!(w.bases[0].rule.pairing, Pairing::Flipped);
        for i in 0..w.bases[0].len() {
            let s = w.bases[0].state(i);
            assert_ne!(s[0], s[1]);
        }
        assert!(wilson_dress(&n, &[Leg::Down]).is_err());
    }

    #[test]
    fn dump_round_trip() {
        let t = random_gauge_tensor(4, 1.0, 0.3, 11).unwrap();
        let back = GaugeSiteTensor::parse_dump(&t.dump()).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.header.seed, Some(11));
    }
}
