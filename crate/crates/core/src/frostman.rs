//! Discrete Frostman measures.
//!
//! Every finest cell meeting the set starts with mass `h(side)` at its
//! center; sweeping the levels upward, a cell whose mass exceeds `h(side)` has
//! everything inside it rescaled down to `h(side)`. The growth constant of the
//! result against balls is measured by seeded sampling rather than assumed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CellClass, Disk, DyadicGrid, DyadicSquare, Point, Rect, Region};
use crate::hausdorff::{full_cost_table, MeasureFunction};

/// Point mass. Serialized as `[x, y, weight]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct Atom {
    pub position: Point,
    pub weight: f64,
}

impl From<[f64; 3]> for Atom {
    fn from(v: [f64; 3]) -> Self {
        Atom { position: Point::new(v[0], v[1]), weight: v[2] }
    }
}

impl From<Atom> for [f64; 3] {
    fn from(a: Atom) -> Self {
        [a.position.re, a.position.im, a.weight]
    }
}

/// Atomic measure together with the resolution it was built at.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MeasureRepr")]
pub struct DiscreteMeasure {
    pub atoms: Vec<Atom>,
    /// Side of the finest cells; smallest radius used when probing growth.
    pub cell_side: f64,
    /// Side of the grid root; largest probing radius.
    pub root_side: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub support_hint: Option<Region>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum MeasureRepr {
    Full {
        atoms: Vec<Atom>,
        cell_side: f64,
        root_side: f64,
        #[serde(default)]
        support_hint: Option<Region>,
    },
    Bare(Vec<Atom>),
}

impl TryFrom<MeasureRepr> for DiscreteMeasure {
    type Error = Error;

    fn try_from(r: MeasureRepr) -> Result<Self> {
        let m = match r {
            MeasureRepr::Full { atoms, cell_side, root_side, support_hint } => {
                DiscreteMeasure { atoms, cell_side, root_side, support_hint }
            }
            MeasureRepr::Bare(atoms) => DiscreteMeasure::from_atoms(atoms),
        };
        m.validate()?;
        Ok(m)
    }
}

impl DiscreteMeasure {
    /// Measure from bare atoms; resolution is taken from the atoms' spread.
    pub fn from_atoms(atoms: Vec<Atom>) -> Self {
        let root_side = atom_bbox(&atoms).map(|b| b.width().max(b.height())).filter(|s| *s > 0.0).unwrap_or(1.0);
        DiscreteMeasure { atoms, cell_side: root_side / 1024.0, root_side, support_hint: None }
    }

    pub fn validate(&self) -> Result<()> {
        if self.atoms.iter().any(|a| !(a.weight > 0.0 && a.weight.is_finite() && a.position.is_finite())) {
            return Err(Error::Config("atoms need finite positions and positive weights".into()));
        }
        if !(self.cell_side > 0.0 && self.root_side >= self.cell_side) {
            return Err(Error::Config("measure resolution must satisfy 0 < cell_side <= root_side".into()));
        }
        Ok(())
    }

    pub fn total_mass(&self) -> f64 {
        self.atoms.iter().map(|a| a.weight).sum()
    }

    pub fn scaled(&self, c: f64) -> DiscreteMeasure {
        DiscreteMeasure {
            atoms: self.atoms.iter().map(|a| Atom { position: a.position, weight: a.weight * c }).collect(),
            ..self.clone()
        }
    }

    /// Mass inside the closed disk.
    pub fn ball_mass(&self, ball: &Disk) -> f64 {
        self.atoms.iter().filter(|a| a.position.dist(ball.center) <= ball.radius).map(|a| a.weight).sum()
    }

    pub fn bbox(&self) -> Option<Rect> {
        atom_bbox(&self.atoms)
    }
}

fn atom_bbox(atoms: &[Atom]) -> Option<Rect> {
    atoms
        .iter()
        .map(|a| Rect { x0: a.position.re, y0: a.position.im, x1: a.position.re, y1: a.position.im })
        .reduce(|acc, r| acc.union(&r))
}

/// Outcome of growth verification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrostmanReport {
    /// Largest sampled `nu(B) / h(r)`.
    pub constant_c: f64,
    pub worst_ball: Option<Disk>,
    pub total_mass: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, Copy)]
enum NodeKind {
    Leaf,
    Full,
    Split([u32; 4]),
}

const NONE: u32 = u32::MAX;

#[derive(Debug, Clone)]
struct Node {
    sq: DyadicSquare,
    raw: f64,
    mass: f64,
    kind: NodeKind,
}

/// Frostman measure kept in quadtree form. Completely filled cells are not
/// expanded: their mass is spread evenly over their finest descendants.
#[derive(Debug, Clone)]
pub struct FrostmanTree {
    grid: DyadicGrid,
    nodes: Vec<Node>,
    root: u32,
}

impl FrostmanTree {
    pub fn build(region: &Region, h: &MeasureFunction, grid: &DyadicGrid) -> Result<FrostmanTree> {
        let full = full_cost_table(grid, h);
        let mut tree = FrostmanTree { grid: *grid, nodes: Vec::new(), root: NONE };
        let root = tree.grow(region, h, &full, DyadicSquare::ROOT);
        if root == NONE {
            return Err(Error::EmptySupport);
        }
        tree.root = root;
        // top-down: each split scales its children uniformly
        let r = root as usize;
        tree.nodes[r].mass = tree.nodes[r].raw;
        let mut stack = vec![root];
        while let Some(i) = stack.pop() {
            let node = tree.nodes[i as usize].clone();
            if let NodeKind::Split(ch) = node.kind {
                let sum: f64 = ch.iter().filter(|&&c| c != NONE).map(|&c| tree.nodes[c as usize].raw).sum();
                let factor = node.mass / sum;
                debug_assert!(factor <= 1.0 + 1e-12);
                for &c in ch.iter().filter(|&&c| c != NONE) {
                    let child = &mut tree.nodes[c as usize];
                    child.mass = child.raw * factor;
                    stack.push(c);
                }
            }
        }
        Ok(tree)
    }

    fn grow(&mut self, region: &Region, h: &MeasureFunction, full: &[f64], sq: DyadicSquare) -> u32 {
        let cap = h.eval(self.grid.side_at(sq.level));
        let (raw, kind) = match region.classify_cell_interior(&self.grid.cell(sq)) {
            CellClass::Empty => return NONE,
            CellClass::Full => (full[sq.level as usize], NodeKind::Full),
            CellClass::Partial if sq.level == self.grid.depth => (cap, NodeKind::Leaf),
            CellClass::Partial => {
                let mut ch = [NONE; 4];
                for (slot, c) in ch.iter_mut().zip(sq.children()) {
                    *slot = self.grow(region, h, full, c);
                }
                let sum: f64 = ch.iter().filter(|&&c| c != NONE).map(|&c| self.nodes[c as usize].raw).sum();
                if ch.iter().all(|&c| c == NONE) {
                    return NONE;
                }
                (cap.min(sum), NodeKind::Split(ch))
            }
        };
        self.nodes.push(Node { sq, raw, mass: 0.0, kind });
        (self.nodes.len() - 1) as u32
    }

    pub fn grid(&self) -> &DyadicGrid {
        &self.grid
    }

    pub fn total_mass(&self) -> f64 {
        self.nodes[self.root as usize].mass
    }

    /// Largest `nu(Q) / h(side Q)` over stored cells; at most 1 by construction.
    pub fn max_cap_ratio(&self, h: &MeasureFunction) -> f64 {
        self.nodes.iter().map(|n| n.mass / h.eval(self.grid.side_at(n.sq.level))).fold(0.0, f64::max)
    }

    /// Masses of all dyadic cells (including the unexpanded descendants of
    /// filled cells down to `max_level`), for cap checks.
    pub fn cell_masses(&self, max_level: u32) -> Vec<(DyadicSquare, f64)> {
        let mut out = Vec::new();
        for n in &self.nodes {
            out.push((n.sq, n.mass));
            if let NodeKind::Full = n.kind {
                let mut level_mass = n.mass;
                for l in n.sq.level + 1..=max_level.min(self.grid.depth) {
                    level_mass /= 4.0;
                    let k = l - n.sq.level;
                    // one representative per level: all cells at a level agree
                    let sq = DyadicSquare { level: l, ix: n.sq.ix << k, iy: n.sq.iy << k };
                    out.push((sq, level_mass));
                }
            }
        }
        out
    }

    fn leaf_cells(&self) -> impl Iterator<Item = &Node> {
        self.nodes.iter().filter(|n| matches!(n.kind, NodeKind::Leaf | NodeKind::Full))
    }

    /// Bounding box of the supporting cells.
    pub fn support_bbox(&self) -> Rect {
        self.leaf_cells().map(|n| self.grid.cell(n.sq).rect()).reduce(|a, b| a.union(&b)).expect("non-empty tree")
    }

    /// Expands into atoms at finest-cell centers.
    pub fn to_measure(&self, support_hint: Option<Region>) -> DiscreteMeasure {
        let mut atoms = Vec::new();
        for n in self.leaf_cells() {
            match n.kind {
                NodeKind::Leaf => atoms.push(Atom { position: self.grid.cell(n.sq).center(), weight: n.mass }),
                NodeKind::Full => {
                    let k = self.grid.depth - n.sq.level;
                    let per_side = 1i64 << k;
                    let w = n.mass / (per_side * per_side) as f64;
                    for dx in 0..per_side {
                        for dy in 0..per_side {
                            let sq = DyadicSquare {
                                level: self.grid.depth,
                                ix: (n.sq.ix << k) + dx,
                                iy: (n.sq.iy << k) + dy,
                            };
                            atoms.push(Atom { position: self.grid.cell(sq).center(), weight: w });
                        }
                    }
                }
                NodeKind::Split(_) => unreachable!(),
            }
        }
        DiscreteMeasure { atoms, cell_side: self.grid.finest_side(), root_side: self.grid.root.side, support_hint }
    }

    /// `nu(B)` for a closed disk, identical to summing the expanded atoms.
    pub fn ball_mass(&self, ball: &Disk) -> f64 {
        self.node_ball_mass(self.root, ball)
    }

    fn node_ball_mass(&self, idx: u32, ball: &Disk) -> f64 {
        let n = &self.nodes[idx as usize];
        let rect = self.grid.cell(n.sq).rect();
        if rect.min_dist(ball.center) > ball.radius {
            return 0.0;
        }
        if rect.max_dist(ball.center) <= ball.radius {
            return n.mass;
        }
        match n.kind {
            NodeKind::Leaf => self.atom_in(n.sq, n.mass, ball),
            NodeKind::Full => self.uniform_ball_mass(n.sq, n.mass, ball),
            NodeKind::Split(ch) => ch.iter().filter(|&&c| c != NONE).map(|&c| self.node_ball_mass(c, ball)).sum(),
        }
    }

    fn atom_in(&self, sq: DyadicSquare, mass: f64, ball: &Disk) -> f64 {
        if self.grid.cell(sq).center().dist(ball.center) <= ball.radius {
            mass
        } else {
            0.0
        }
    }

    fn uniform_ball_mass(&self, sq: DyadicSquare, mass: f64, ball: &Disk) -> f64 {
        let rect = self.grid.cell(sq).rect();
        if rect.min_dist(ball.center) > ball.radius {
            return 0.0;
        }
        if rect.max_dist(ball.center) <= ball.radius {
            return mass;
        }
        if sq.level == self.grid.depth {
            return self.atom_in(sq, mass, ball);
        }
        sq.children().iter().map(|c| self.uniform_ball_mass(*c, mass / 4.0, ball)).sum()
    }

    /// Growth verification on the tree; same samples as [`verify_frostman`]
    /// on the expanded measure.
    pub fn verify(&self, h: &MeasureFunction, n_samples: usize, seed: u64) -> FrostmanReport {
        let balls = sample_balls(&self.support_bbox(), self.grid.finest_side(), self.grid.root.side, n_samples, seed);
        let masses: Vec<f64> = balls.par_iter().map(|b| self.ball_mass(b)).collect();
        worst_ratio(&balls, &masses, h, self.total_mass())
    }
}

/// Random balls: centers uniform in `bbox`, radii log-uniform in `[rmin, rmax]`.
pub fn sample_balls(bbox: &Rect, rmin: f64, rmax: f64, n: usize, seed: u64) -> Vec<Disk> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lmin, lmax) = (rmin.ln(), rmax.max(rmin).ln());
    (0..n)
        .map(|_| {
            let u: f64 = rng.gen();
            let v: f64 = rng.gen();
            let w: f64 = rng.gen();
            Disk {
                center: Point::new(bbox.x0 + u * bbox.width(), bbox.y0 + v * bbox.height()),
                radius: (lmin + w * (lmax - lmin)).exp(),
            }
        })
        .collect()
}

fn worst_ratio(balls: &[Disk], masses: &[f64], h: &MeasureFunction, total: f64) -> FrostmanReport {
    let mut best: Option<(f64, Disk)> = None;
    for (b, m) in balls.iter().zip(masses) {
        let ratio = m / h.eval(b.radius);
        if best.is_none_or(|(r, _)| ratio > r) {
            best = Some((ratio, *b));
        }
    }
    FrostmanReport {
        constant_c: best.map_or(0.0, |(r, _)| r),
        worst_ball: best.map(|(_, b)| b),
        total_mass: total,
        samples: balls.len(),
    }
}

/// Builds the discrete Frostman measure of `region` for the kernel `h`.
pub fn build_frostman(region: &Region, h: &MeasureFunction, grid: &DyadicGrid) -> Result<DiscreteMeasure> {
    grid.check_contains(region)?;
    let tree = FrostmanTree::build(region, h, grid)?;
    Ok(tree.to_measure(Some(region.clone())))
}

/// Bucket grid for ball-mass queries over many atoms.
struct BallIndex {
    bbox: Rect,
    nb: usize,
    bw: f64,
    bh: f64,
    starts: Vec<usize>,
    atoms: Vec<Atom>,
    bucket_mass: Vec<f64>,
}

impl BallIndex {
    fn new(atoms: &[Atom], bbox: Rect) -> BallIndex {
        let nb = ((atoms.len() as f64 / 8.0).sqrt().ceil() as usize).clamp(1, 1024);
        let bw = (bbox.width() / nb as f64).max(f64::MIN_POSITIVE);
        let bh = (bbox.height() / nb as f64).max(f64::MIN_POSITIVE);
        let bucket_of = |p: Point| {
            let ix = (((p.re - bbox.x0) / bw) as usize).min(nb - 1);
            let iy = (((p.im - bbox.y0) / bh) as usize).min(nb - 1);
            iy * nb + ix
        };
        let mut counts = vec![0usize; nb * nb + 1];
        for a in atoms {
            counts[bucket_of(a.position) + 1] += 1;
        }
        for i in 1..counts.len() {
            counts[i] += counts[i - 1];
        }
        let starts = counts.clone();
        let mut fill = counts;
        let mut sorted = vec![Atom { position: Point::ORIGIN, weight: 0.0 }; atoms.len()];
        for a in atoms {
            let b = bucket_of(a.position);
            sorted[fill[b]] = *a;
            fill[b] += 1;
        }
        let bucket_mass =
            (0..nb * nb).map(|b| sorted[starts[b]..starts[b + 1]].iter().map(|a| a.weight).sum()).collect();
        BallIndex { bbox, nb, bw, bh, starts, atoms: sorted, bucket_mass }
    }

    fn ball_mass(&self, ball: &Disk) -> f64 {
        let c = ball.center;
        let r = ball.radius;
        let clamp = |v: f64| (v.max(0.0) as usize).min(self.nb - 1);
        let ix0 = clamp(((c.re - r - self.bbox.x0) / self.bw).floor());
        let ix1 = clamp(((c.re + r - self.bbox.x0) / self.bw).floor());
        let iy0 = clamp(((c.im - r - self.bbox.y0) / self.bh).floor());
        let iy1 = clamp(((c.im + r - self.bbox.y0) / self.bh).floor());
        let mut total = 0.0;
        for iy in iy0..=iy1 {
            for ix in ix0..=ix1 {
                let b = iy * self.nb + ix;
                let (s, e) = (self.starts[b], self.starts[b + 1]);
                if s == e {
                    continue;
                }
                let rect = Rect {
                    x0: self.bbox.x0 + ix as f64 * self.bw,
                    y0: self.bbox.y0 + iy as f64 * self.bh,
                    x1: self.bbox.x0 + (ix + 1) as f64 * self.bw,
                    y1: self.bbox.y0 + (iy + 1) as f64 * self.bh,
                };
                if rect.min_dist(c) > r {
                    continue;
                }
                if ix + 1 < self.nb && iy + 1 < self.nb && rect.max_dist(c) <= r {
                    total += self.bucket_mass[b];
                    continue;
                }
                total += self.atoms[s..e].iter().filter(|a| a.position.dist(c) <= r).map(|a| a.weight).sum::<f64>();
            }
        }
        total
    }
}

/// Samples `n_samples` balls and reports the largest `nu(B) / h(r)`.
pub fn verify_frostman(nu: &DiscreteMeasure, h: &MeasureFunction, n_samples: usize, seed: u64) -> FrostmanReport {
    let Some(b) = nu.bbox() else {
        return FrostmanReport { constant_c: 0.0, worst_ball: None, total_mass: 0.0, samples: n_samples };
    };
    let half = 0.5 * nu.cell_side;
    let bbox = Rect { x0: b.x0 - half, y0: b.y0 - half, x1: b.x1 + half, y1: b.y1 + half };
    let balls = sample_balls(&bbox, nu.cell_side, nu.root_side, n_samples, seed);
    let index = BallIndex::new(&nu.atoms, bbox);
    let masses: Vec<f64> = balls.par_iter().map(|ball| index.ball_mass(ball)).collect();
    worst_ratio(&balls, &masses, h, nu.total_mass())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::SquareBox;

    fn grid01(depth: u32) -> DyadicGrid {
        DyadicGrid::new(SquareBox::new(Point::new(0.0, 0.0), 1.0).unwrap(), depth)
    }

    #[test]
    fn single_cell_holds_one_atom() {
        let g = grid01(6);
        let cell = g.cell(DyadicSquare { level: 4, ix: 3, iy: 9 });
        let h = MeasureFunction::power(1.0).unwrap();
        let g4 = grid01(4);
        let nu = build_frostman(&Region::Square(cell), &h, &g4).unwrap();
        assert_eq!(nu.atoms.len(), 1);
        assert_eq!(nu.atoms[0].weight, cell.side);
        assert_eq!(nu.atoms[0].position, cell.center());
        // deeper grid: the cell is Full, mass stays h(side)
        let nu = build_frostman(&Region::Square(cell), &h, &g).unwrap();
        assert_eq!(nu.atoms.len(), 16);
        assert!((nu.total_mass() - cell.side).abs() < 1e-15);
    }

    #[test]
    fn unit_square_mass_is_one() {
        let h = MeasureFunction::power(1.0).unwrap();
        for depth in [1, 4, 8] {
            let nu = build_frostman(&Region::square(0.0, 0.0, 1.0).unwrap(), &h, &grid01(depth)).unwrap();
            assert!((nu.total_mass() - 1.0).abs() < 1e-12);
            assert_eq!(nu.atoms.len(), 1 << (2 * depth));
        }
    }

    #[test]
    fn empty_support_is_an_error() {
        let h = MeasureFunction::power(1.0).unwrap();
        assert_eq!(build_frostman(&Region::empty(), &h, &grid01(3)), Err(Error::EmptySupport));
    }

    #[test]
    fn caps_hold_on_every_cell() {
        let g = DyadicGrid::unit(8);
        let r = Region::Union(vec![
            Region::disk(0.2, 0.3, 0.3).unwrap(),
            Region::difference(Region::annulus(-0.3, -0.3, 0.1, 0.4).unwrap(), Region::disk(-0.05, -0.3, 0.1).unwrap()),
        ]);
        for alpha in [0.5, 1.0, 1.5] {
            let h = MeasureFunction::power(alpha).unwrap();
            let tree = FrostmanTree::build(&r, &h, &g).unwrap();
            assert!(tree.max_cap_ratio(&h) <= 1.0 + 1e-12);
            for (sq, m) in tree.cell_masses(g.depth) {
                assert!(m <= h.eval(g.side_at(sq.level)) * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn tree_and_atoms_agree() {
        let g = DyadicGrid::unit(6);
        let r = Region::Union(vec![Region::disk(0.2, 0.3, 0.3).unwrap(), Region::square(-0.8, -0.7, 0.5).unwrap()]);
        let h = MeasureFunction::power(1.2).unwrap();
        let tree = FrostmanTree::build(&r, &h, &g).unwrap();
        let nu = tree.to_measure(None);
        let a = tree.verify(&h, 500, 9);
        let b = verify_frostman(&nu, &h, 500, 9);
        assert!((a.constant_c - b.constant_c).abs() <= 1e-12 * a.constant_c);
        assert_eq!(a.worst_ball, b.worst_ball);
        for ball in sample_balls(&tree.support_bbox(), 0.01, 2.0, 200, 1) {
            let m1 = tree.ball_mass(&ball);
            let m2 = nu.ball_mass(&ball);
            assert!((m1 - m2).abs() <= 1e-12 * m2.max(1e-300));
        }
    }

    #[test]
    fn single_atom_worst_ratio() {
        let s = 0.01;
        let w = 0.5;
        let nu = DiscreteMeasure {
            atoms: vec![Atom { position: Point::ORIGIN, weight: w }],
            cell_side: s,
            root_side: 1.0,
            support_hint: None,
        };
        let h = MeasureFunction::new(1.0, s * 4.0, 1.0).unwrap();
        let rep = verify_frostman(&nu, &h, 400, 3);
        // every sampled ball covers the atom, so the worst ratio sits at the
        // smallest sampled radius
        let balls = sample_balls(&Rect { x0: -s / 2.0, y0: -s / 2.0, x1: s / 2.0, y1: s / 2.0 }, s, 1.0, 400, 3);
        let rmin = balls.iter().map(|b| b.radius).fold(f64::INFINITY, f64::min);
        assert!((rep.constant_c - w / h.eval(rmin)).abs() < 1e-12 * rep.constant_c);
        assert_eq!(rep.worst_ball.unwrap().radius, rmin);
    }

    #[test]
    fn unit_square_constant_is_moderate() {
        let h = MeasureFunction::power(1.0).unwrap();
        let nu = build_frostman(&Region::square(0.0, 0.0, 1.0).unwrap(), &h, &grid01(6)).unwrap();
        let rep = verify_frostman(&nu, &h, 2000, 1);
        assert!(rep.constant_c >= 1.0 && rep.constant_c <= 8.0, "{}", rep.constant_c);
    }

    #[test]
    fn empty_measure_report() {
        let nu = DiscreteMeasure { atoms: vec![], cell_side: 0.1, root_side: 1.0, support_hint: None };
        let rep = verify_frostman(&nu, &MeasureFunction::power(1.0).unwrap(), 10, 0);
        assert_eq!(rep.constant_c, 0.0);
        assert_eq!(rep.total_mass, 0.0);
    }

    #[test]
    fn deterministic_build_and_json() {
        let g = DyadicGrid::unit(5);
        let r = Region::disk(0.1, -0.2, 0.4).unwrap();
        let h = MeasureFunction::power(0.8).unwrap();
        let a = build_frostman(&r, &h, &g).unwrap();
        let b = build_frostman(&r, &h, &g).unwrap();
        assert_eq!(a, b);
        let text = serde_json::to_string(&a).unwrap();
        let back: DiscreteMeasure = serde_json::from_str(&text).unwrap();
        assert_eq!(back, a);
        let bare: DiscreteMeasure = serde_json::from_str("[[0.1, 0.2, 0.5], [0.3, 0.0, 0.25]]").unwrap();
        assert_eq!(bare.atoms.len(), 2);
        assert!(serde_json::from_str::<DiscreteMeasure>("[[0, 0, -1]]").is_err());
    }
}
