//! Lattices, regions, boundary star-parts and flux sectors.
//!
//! Sites are `(x, y)` with `y = 0` the bottom row. Each site owns the link to
//! its upper neighbour and the link to its right neighbour; links leaving the
//! lattice do not exist (their virtual legs are clamped to vacuum). The star
//! of a site is its up, right, down and left link, which are exactly the four
//! virtual legs of the site tensor.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("region error: {0}")]
    Region(String),
    #[error("{count} star-parts exceed the enumeration limit of {limit}")]
    Limit { count: usize, limit: usize },
}

pub type Result<T> = std::result::Result<T, GeometryError>;

pub const DEFAULT_SECTOR_LIMIT: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dir {
    Up,
    Right,
}

/// A link, named by its owning site and direction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Link {
    pub x: usize,
    pub y: usize,
    pub dir: Dir,
}

impl Link {
    pub fn up(x: usize, y: usize) -> Self {
        Self { x, y, dir: Dir::Up }
    }

    pub fn right(x: usize, y: usize) -> Self {
        Self { x, y, dir: Dir::Right }
    }

    pub fn endpoints(&self) -> [(usize, usize); 2] {
        match self.dir {
            Dir::Up => [(self.x, self.y), (self.x, self.y + 1)],
            Dir::Right => [(self.x, self.y), (self.x + 1, self.y)],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lattice {
    pub lx: usize,
    pub ly: usize,
}

impl Lattice {
    pub fn new(lx: usize, ly: usize) -> Result<Self> {
        if lx == 0 || ly == 0 {
            return Err(GeometryError::Region(format!("lattice {lx}x{ly} is empty")));
        }
        Ok(Self { lx, ly })
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        x < self.lx && y < self.ly
    }

    pub fn has_link(&self, l: Link) -> bool {
        match l.dir {
            Dir::Up => l.x < self.lx && l.y + 1 < self.ly,
            Dir::Right => l.x + 1 < self.lx && l.y < self.ly,
        }
    }

    /// All links, row-major over owners (`y` outer, `x` inner), up before right.
    pub fn links(&self) -> Vec<Link> {
        let mut out = Vec::new();
        for y in 0..self.ly {
            for x in 0..self.lx {
                for l in [Link::up(x, y), Link::right(x, y)] {
                    if self.has_link(l) {
                        out.push(l);
                    }
                }
            }
        }
        out
    }

    pub fn link_count(&self) -> usize {
        self.lx * (self.ly - 1) + (self.lx - 1) * self.ly
    }

    pub fn link_index(&self, l: Link) -> Option<usize> {
        if !self.has_link(l) {
            return None;
        }
        // links owned by rows below, then by earlier sites in this row
        let row = |y: usize| (0..self.lx).map(|x| self.owned(x, y)).sum::<usize>();
        let before_rows: usize = (0..l.y).map(row).sum();
        let before_sites: usize = (0..l.x).map(|x| self.owned(x, l.y)).sum();
        let within = if l.dir == Dir::Right && self.has_link(Link::up(l.x, l.y)) { 1 } else { 0 };
        Some(before_rows + before_sites + within)
    }

    fn owned(&self, x: usize, y: usize) -> usize {
        self.has_link(Link::up(x, y)) as usize + self.has_link(Link::right(x, y)) as usize
    }

    /// The star of a site in leg order (up, right, down, left).
    pub fn star(&self, x: usize, y: usize) -> [Option<Link>; 4] {
        let cand = [
            Some(Link::up(x, y)),
            Some(Link::right(x, y)),
            y.checked_sub(1).map(|y1| Link::up(x, y1)),
            x.checked_sub(1).map(|x1| Link::right(x1, y)),
        ];
        cand.map(|c| c.filter(|&l| self.has_link(l)))
    }

    /// Links of the plaquette whose bottom-left corner is site `(x, y)`:
    /// bottom, right, top, left.
    pub fn plaquette(&self, x: usize, y: usize) -> Option<[Link; 4]> {
        if x + 1 >= self.lx || y + 1 >= self.ly {
            return None;
        }
        Some([Link::right(x, y), Link::up(x + 1, y), Link::right(x, y + 1), Link::up(x, y)])
    }

    pub fn plaquettes(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for y in 0..self.ly.saturating_sub(1) {
            for x in 0..self.lx.saturating_sub(1) {
                out.push((x, y));
            }
        }
        out
    }
}

/// Rule assigning links to the region, given its set of sites.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bipartition {
    /// A link belongs to the side of the site that owns it. Along a
    /// staircase, only the bottom-left convex corner and the concave steps
    /// split their stars two against two.
    #[default]
    SiteOwned,
    /// Links with both endpoints in the region.
    Closed,
    /// Links with at least one endpoint in the region.
    Open,
    /// Site-owned assignment, then links are moved across the cut one at a
    /// time until no star is split two against two.
    AllOdd,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    /// `width x height` block of sites.
    Rectangle { width: usize, height: usize },
    /// `l x l` block with its top-right corner cut into `c - 1` unit steps.
    Stairs { l: usize, c: usize },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Region {
    pub shape: Shape,
    /// Lattice position of the bottom-left site of the bounding box.
    pub offset: (usize, usize),
    #[serde(default)]
    pub bipartition: Bipartition,
}

impl Shape {
    pub fn bounding_box(&self) -> (usize, usize) {
        match *self {
            Shape::Rectangle { width, height } => (width, height),
            Shape::Stairs { l, .. } => (l, l),
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            Shape::Rectangle { width, height } if width == 0 || height == 0 => {
                Err(GeometryError::Region("rectangle must be non-empty".into()))
            }
            Shape::Stairs { l, c } if l == 0 || c == 0 || c > l => {
                Err(GeometryError::Region(format!("stairs need 1 <= c <= l, got l={l}, c={c}")))
            }
            _ => Ok(()),
        }
    }

    /// Membership in local coordinates of the bounding box.
    pub fn contains_local(&self, i: usize, j: usize) -> bool {
        match *self {
            Shape::Rectangle { width, height } => i < width && j < height,
            Shape::Stairs { l, c } => {
                if i >= l {
                    return false;
                }
                let flat = l - c;
                let h = if i <= flat { l } else { l - (i - flat) };
                j < h
            }
        }
    }
}

/// A star cut by the region boundary, described from the region side.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StarPart {
    pub center: (usize, usize),
    /// Links of the star inside the region, in leg order.
    pub inside: Vec<Link>,
    pub outside: Vec<Link>,
    /// Legs (0 = up, 1 = right, 2 = down, 3 = left) of the inside links.
    pub inside_legs: Vec<usize>,
}

impl StarPart {
    pub fn size(&self) -> usize {
        self.inside.len()
    }

    pub fn is_corner(&self) -> bool {
        self.size() == 2
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FluxSector {
    /// Star centers of the boundary star-parts, in the order of `charges`.
    pub centers: Vec<(usize, usize)>,
    pub charges: Vec<u8>,
}

impl FluxSector {
    pub fn vacuum(parts: &[StarPart]) -> Self {
        Self { centers: parts.iter().map(|p| p.center).collect(), charges: vec![0; parts.len()] }
    }

    pub fn is_admissible(&self) -> bool {
        self.charges.iter().map(|&c| c as usize).sum::<usize>() % 2 == 0
    }

    pub fn label(&self) -> String {
        self.charges.iter().map(|c| char::from(b'0' + c)).collect()
    }
}

impl Region {
    pub fn new(shape: Shape, offset: (usize, usize), bipartition: Bipartition) -> Result<Self> {
        shape.validate()?;
        Ok(Self { shape, offset, bipartition })
    }

    /// Region placed in the middle of the lattice (rounding towards the origin).
    pub fn centered(lat: &Lattice, shape: Shape, bipartition: Bipartition) -> Result<Self> {
        let (w, h) = shape.bounding_box();
        if w > lat.lx || h > lat.ly {
            return Err(GeometryError::Region(format!("{w}x{h} region does not fit {}x{}", lat.lx, lat.ly)));
        }
        Self::new(shape, ((lat.lx - w) / 2, (lat.ly - h) / 2), bipartition)
    }

    pub fn contains_site(&self, x: usize, y: usize) -> bool {
        let (ox, oy) = self.offset;
        x >= ox && y >= oy && self.shape.contains_local(x - ox, y - oy)
    }

    pub fn sites(&self) -> Vec<(usize, usize)> {
        let (w, h) = self.shape.bounding_box();
        let mut out = Vec::new();
        for j in 0..h {
            for i in 0..w {
                if self.shape.contains_local(i, j) {
                    out.push((self.offset.0 + i, self.offset.1 + j));
                }
            }
        }
        out
    }

    /// Fails unless every region site lies in the lattice.
    pub fn check_fits(&self, lat: &Lattice) -> Result<()> {
        if self.sites().iter().any(|&(x, y)| !lat.contains(x, y)) {
            return Err(GeometryError::Region("region extends beyond the lattice".into()));
        }
        Ok(())
    }

    /// Fails unless the region avoids the outer row and column of sites.
    pub fn check_interior(&self, lat: &Lattice) -> Result<()> {
        self.check_fits(lat)?;
        if self.sites().iter().any(|&(x, y)| x == 0 || y == 0 || x + 1 == lat.lx || y + 1 == lat.ly) {
            return Err(GeometryError::Region("region touches the lattice boundary".into()));
        }
        Ok(())
    }

    /// Membership of every lattice link, indexed like [`Lattice::links`].
    pub fn link_membership(&self, lat: &Lattice) -> Result<Vec<bool>> {
        self.check_fits(lat)?;
        let sites: HashSet<(usize, usize)> = self.sites().into_iter().collect();
        let links = lat.links();
        let base = |rule: Bipartition, l: &Link| {
            let [a, b] = l.endpoints();
            match rule {
                Bipartition::SiteOwned | Bipartition::AllOdd => sites.contains(&a),
                Bipartition::Closed => sites.contains(&a) && sites.contains(&b),
                Bipartition::Open => sites.contains(&a) || sites.contains(&b),
            }
        };
        let mut member: Vec<bool> = links.iter().map(|l| base(self.bipartition, l)).collect();
        if self.bipartition == Bipartition::AllOdd {
            remove_even_parts(lat, links.len(), &mut member);
        }
        Ok(member)
    }

    /// Number of nearest-neighbour site pairs with exactly one site inside.
    pub fn boundary_length(&self, lat: &Lattice) -> usize {
        lat.links()
            .iter()
            .filter(|l| {
                let [a, b] = l.endpoints();
                self.contains_site(a.0, a.1) != self.contains_site(b.0, b.1)
            })
            .count()
    }
}

fn star_counts(lat: &Lattice, member: &[bool], x: usize, y: usize) -> (usize, usize) {
    let mut inside = 0;
    let mut total = 0;
    for l in lat.star(x, y).into_iter().flatten() {
        total += 1;
        if member[lat.link_index(l).unwrap()] {
            inside += 1;
        }
    }
    (inside, total)
}

/// Greedy pass moving single links across the cut so that no star keeps a
/// two-link part. A link is moved when its other star stays harmless: it is
/// itself split two against two, or currently uncut.
fn remove_even_parts(lat: &Lattice, link_count: usize, member: &mut [bool]) {
    let max_rounds = 4 * link_count + 4;
    for _ in 0..max_rounds {
        let mut changed = false;
        for y in 0..lat.ly {
            for x in 0..lat.lx {
                let (inside, total) = star_counts(lat, member, x, y);
                if inside != 2 || total < 2 {
                    continue;
                }
                let mut best: Option<(usize, usize)> = None;
                for l in lat.star(x, y).into_iter().flatten() {
                    let [a, b] = l.endpoints();
                    let other = if a == (x, y) { b } else { a };
                    let (oi, ot) = star_counts(lat, member, other.0, other.1);
                    let score = if oi == 2 {
                        0
                    } else if oi == 0 || oi == ot {
                        1
                    } else {
                        continue;
                    };
                    let idx = lat.link_index(l).unwrap();
                    if best.is_none_or(|(s, _)| score < s) {
                        best = Some((score, idx));
                    }
                }
                if let Some((_, idx)) = best {
                    member[idx] = !member[idx];
                    changed = true;
                }
            }
        }
        if !changed {
            return;
        }
    }
}

/// Stars cut by the region, ordered clockwise around the region's centre
/// starting from the top-left direction.
pub fn boundary_star_parts(lat: &Lattice, reg: &Region) -> Result<Vec<StarPart>> {
    reg.check_interior(lat)?;
    star_parts_unchecked(lat, reg)
}

/// As [`boundary_star_parts`], without requiring the region to avoid the
/// lattice edge.
pub fn star_parts_unchecked(lat: &Lattice, reg: &Region) -> Result<Vec<StarPart>> {
    let member = reg.link_membership(lat)?;
    let sites = reg.sites();
    let n = sites.len() as f64;
    let cx = sites.iter().map(|s| s.0 as f64).sum::<f64>() / n;
    let cy = sites.iter().map(|s| s.1 as f64).sum::<f64>() / n;
    let mut parts = Vec::new();
    for y in 0..lat.ly {
        for x in 0..lat.lx {
            let mut inside = Vec::new();
            let mut outside = Vec::new();
            let mut inside_legs = Vec::new();
            for (leg, l) in lat.star(x, y).into_iter().enumerate() {
                let Some(l) = l else { continue };
                if member[lat.link_index(l).unwrap()] {
                    inside.push(l);
                    inside_legs.push(leg);
                } else {
                    outside.push(l);
                }
            }
            if !inside.is_empty() && !outside.is_empty() {
                parts.push(StarPart { center: (x, y), inside, outside, inside_legs });
            }
        }
    }
    let start = 0.75 * std::f64::consts::PI;
    let key = |p: &StarPart| {
        let (dx, dy) = (p.center.0 as f64 - cx, p.center.1 as f64 - cy);
        let theta = dy.atan2(dx);
        (start - theta).rem_euclid(2.0 * std::f64::consts::PI)
    };
    parts.sort_by(|a, b| {
        key(a).total_cmp(&key(b)).then_with(|| a.center.cmp(&b.center))
    });
    Ok(parts)
}

pub fn count_contributing_corners(parts: &[StarPart]) -> usize {
    parts.iter().filter(|p| p.is_corner()).count()
}

/// All flux assignments to the star-parts, in binary counting order with the
/// first part as the most significant bit.
pub fn enumerate_sectors(parts: &[StarPart], only_admissible: bool, limit: usize) -> Result<Vec<FluxSector>> {
    let n = parts.len();
    if n > limit || n >= 64 {
        return Err(GeometryError::Limit { count: n, limit });
    }
    let centers: Vec<(usize, usize)> = parts.iter().map(|p| p.center).collect();
    let mut out = Vec::new();
    for bits in 0u64..(1u64 << n) {
        let charges: Vec<u8> = (0..n).map(|k| ((bits >> (n - 1 - k)) & 1) as u8).collect();
        let s = FluxSector { centers: centers.clone(), charges };
        if !only_admissible || s.is_admissible() {
            out.push(s);
        }
    }
    Ok(out)
}
