//! Planar regions built by constructive solid geometry over disks, squares
//! and annuli, plus the conservative cell classifier the quadtree algorithms
//! run on.
//!
//! Primitives are closed. A `Difference` removes the *open interior* of its
//! subtrahend, so a deleted disk leaves the boundary circle of the punctured
//! set intact.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point of the plane. Serialized as `[re, im]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Point {
    pub re: f64,
    pub im: f64,
}

impl From<[f64; 2]> for Point {
    fn from(v: [f64; 2]) -> Self {
        Point::new(v[0], v[1])
    }
}

impl From<Point> for [f64; 2] {
    fn from(p: Point) -> Self {
        [p.re, p.im]
    }
}

impl From<Complex64> for Point {
    fn from(z: Complex64) -> Self {
        Point::new(z.re, z.im)
    }
}

impl From<Point> for Complex64 {
    fn from(p: Point) -> Self {
        Complex64::new(p.re, p.im)
    }
}

impl Point {
    pub const ORIGIN: Point = Point { re: 0.0, im: 0.0 };

    pub const fn new(re: f64, im: f64) -> Self {
        Point { re, im }
    }

    pub fn z(self) -> Complex64 {
        self.into()
    }

    pub fn norm(self) -> f64 {
        self.re.hypot(self.im)
    }

    pub fn dist(self, other: Point) -> f64 {
        (self.re - other.re).hypot(self.im - other.im)
    }

    pub fn is_finite(self) -> bool {
        self.re.is_finite() && self.im.is_finite()
    }

    pub fn translate(self, dx: f64, dy: f64) -> Point {
        Point::new(self.re + dx, self.im + dy)
    }

    pub fn scale(self, s: f64) -> Point {
        Point::new(self.re * s, self.im * s)
    }
}

/// Closed disk.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Disk {
    pub center: Point,
    pub radius: f64,
}

impl Disk {
    pub fn new(center: Point, radius: f64) -> Result<Self> {
        let d = Disk { center, radius };
        d.validate()?;
        Ok(d)
    }

    fn validate(&self) -> Result<()> {
        if !(self.center.is_finite() && self.radius.is_finite() && self.radius > 0.0) {
            return Err(Error::Config(format!("invalid disk {self:?}")));
        }
        Ok(())
    }

    pub fn area(&self) -> f64 {
        std::f64::consts::PI * self.radius * self.radius
    }
}

/// Closed axis-aligned square `[corner.re, corner.re + side] x [corner.im, corner.im + side]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SquareBox {
    pub corner: Point,
    pub side: f64,
}

impl SquareBox {
    pub fn new(corner: Point, side: f64) -> Result<Self> {
        let s = SquareBox { corner, side };
        s.validate()?;
        Ok(s)
    }

    /// Square with the given center and side length.
    pub fn centered(center: Point, side: f64) -> Result<Self> {
        SquareBox::new(center.translate(-0.5 * side, -0.5 * side), side)
    }

    fn validate(&self) -> Result<()> {
        if !(self.corner.is_finite() && self.side.is_finite() && self.side > 0.0) {
            return Err(Error::Config(format!("invalid square {self:?}")));
        }
        Ok(())
    }

    pub fn center(&self) -> Point {
        self.corner.translate(0.5 * self.side, 0.5 * self.side)
    }

    pub fn rect(&self) -> Rect {
        Rect { x0: self.corner.re, y0: self.corner.im, x1: self.corner.re + self.side, y1: self.corner.im + self.side }
    }

    pub fn contains(&self, p: Point) -> bool {
        self.rect().contains(p)
    }

    /// Same center, side multiplied by `factor`.
    pub fn dilate(&self, factor: f64) -> SquareBox {
        let c = self.center();
        let s = self.side * factor;
        SquareBox { corner: c.translate(-0.5 * s, -0.5 * s), side: s }
    }

    pub fn diagonal(&self) -> f64 {
        self.side * std::f64::consts::SQRT_2
    }
}

/// Closed annulus `inner <= |z - center| <= outer`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Annulus {
    pub center: Point,
    pub inner: f64,
    pub outer: f64,
}

impl Annulus {
    pub fn new(center: Point, inner: f64, outer: f64) -> Result<Self> {
        let a = Annulus { center, inner, outer };
        a.validate()?;
        Ok(a)
    }

    fn validate(&self) -> Result<()> {
        if !(self.center.is_finite()
            && self.inner.is_finite()
            && self.outer.is_finite()
            && self.inner >= 0.0
            && self.outer > self.inner)
        {
            return Err(Error::Config(format!("invalid annulus {self:?}")));
        }
        Ok(())
    }
}

/// The dyadic shell `{z : 2^-(n+1) <= |z - x| <= 2^-n}`.
pub fn annulus_shell(x: Point, n: u32) -> Annulus {
    let outer = (-(n as f64)).exp2();
    Annulus { center: x, inner: 0.5 * outer, outer }
}

/// Axis-aligned rectangle, used for bounding boxes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Rect {
    pub fn contains(&self, p: Point) -> bool {
        p.re >= self.x0 && p.re <= self.x1 && p.im >= self.y0 && p.im <= self.y1
    }

    pub fn union(&self, o: &Rect) -> Rect {
        Rect { x0: self.x0.min(o.x0), y0: self.y0.min(o.y0), x1: self.x1.max(o.x1), y1: self.y1.max(o.y1) }
    }

    pub fn intersect(&self, o: &Rect) -> Option<Rect> {
        let r = Rect { x0: self.x0.max(o.x0), y0: self.y0.max(o.y0), x1: self.x1.min(o.x1), y1: self.y1.min(o.y1) };
        (r.x0 <= r.x1 && r.y0 <= r.y1).then_some(r)
    }

    pub fn contains_rect(&self, o: &Rect) -> bool {
        o.x0 >= self.x0 && o.x1 <= self.x1 && o.y0 >= self.y0 && o.y1 <= self.y1
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn center(&self) -> Point {
        Point::new(0.5 * (self.x0 + self.x1), 0.5 * (self.y0 + self.y1))
    }

    /// Smallest distance from `p` to the rectangle (0 inside).
    pub fn min_dist(&self, p: Point) -> f64 {
        let dx = (self.x0 - p.re).max(0.0).max(p.re - self.x1);
        let dy = (self.y0 - p.im).max(0.0).max(p.im - self.y1);
        dx.hypot(dy)
    }

    /// Largest distance from `p` to a point of the rectangle.
    pub fn max_dist(&self, p: Point) -> f64 {
        let dx = (p.re - self.x0).abs().max((p.re - self.x1).abs());
        let dy = (p.im - self.y0).abs().max((p.im - self.y1).abs());
        dx.hypot(dy)
    }

    /// Smallest square sharing the lower-left corner and covering the rectangle.
    pub fn covering_square(&self) -> SquareBox {
        SquareBox { corner: Point::new(self.x0, self.y0), side: self.width().max(self.height()) }
    }
}

/// CSG tree. JSON form is a tagged union, for example
/// `{"difference": [{"annulus": {...}}, {"disk": {...}}]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Region {
    Disk(Disk),
    Square(SquareBox),
    Annulus(Annulus),
    Union(Vec<Region>),
    Intersection(Vec<Region>),
    Difference(Box<Region>, Box<Region>),
}

/// Result of a conservative cell test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum CellClass {
    Full,
    Empty,
    Partial,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Mode {
    Closed,
    Interior,
}

impl Region {
    pub fn empty() -> Region {
        Region::Union(Vec::new())
    }

    pub fn disk(cx: f64, cy: f64, r: f64) -> Result<Region> {
        Ok(Region::Disk(Disk::new(Point::new(cx, cy), r)?))
    }

    pub fn square(x0: f64, y0: f64, side: f64) -> Result<Region> {
        Ok(Region::Square(SquareBox::new(Point::new(x0, y0), side)?))
    }

    pub fn annulus(cx: f64, cy: f64, inner: f64, outer: f64) -> Result<Region> {
        Ok(Region::Annulus(Annulus::new(Point::new(cx, cy), inner, outer)?))
    }

    pub fn difference(a: Region, b: Region) -> Region {
        Region::Difference(Box::new(a), Box::new(b))
    }

    /// The region shifted by `(dx, dy)`.
    pub fn translate(&self, dx: f64, dy: f64) -> Region {
        match self {
            Region::Disk(d) => Region::Disk(Disk { center: d.center.translate(dx, dy), radius: d.radius }),
            Region::Square(s) => Region::Square(SquareBox { corner: s.corner.translate(dx, dy), side: s.side }),
            Region::Annulus(a) => Region::Annulus(Annulus { center: a.center.translate(dx, dy), ..*a }),
            Region::Union(v) => Region::Union(v.iter().map(|r| r.translate(dx, dy)).collect()),
            Region::Intersection(v) => Region::Intersection(v.iter().map(|r| r.translate(dx, dy)).collect()),
            Region::Difference(a, b) => Region::difference(a.translate(dx, dy), b.translate(dx, dy)),
        }
    }

    /// Checks primitive invariants through the whole tree (used after parsing).
    pub fn validate(&self) -> Result<()> {
        match self {
            Region::Disk(d) => d.validate(),
            Region::Square(s) => s.validate(),
            Region::Annulus(a) => a.validate(),
            Region::Union(v) => v.iter().try_for_each(Region::validate),
            Region::Intersection(v) => {
                if v.is_empty() {
                    return Err(Error::Config("intersection needs at least one operand".into()));
                }
                v.iter().try_for_each(Region::validate)
            }
            Region::Difference(a, b) => {
                a.validate()?;
                b.validate()
            }
        }
    }

    pub fn from_json(text: &str) -> Result<Region> {
        let r: Region = serde_json::from_str(text).map_err(|e| Error::Config(format!("region json: {e}")))?;
        r.validate()?;
        Ok(r)
    }

    /// Exact membership.
    pub fn contains(&self, p: Point) -> bool {
        self.contains_mode(p, Mode::Closed)
    }

    /// Membership in the interior (exact for primitives, inner approximation
    /// for unions whose pieces share boundaries).
    pub fn interior_contains(&self, p: Point) -> bool {
        self.contains_mode(p, Mode::Interior)
    }

    fn contains_mode(&self, p: Point, mode: Mode) -> bool {
        let closed = mode == Mode::Closed;
        match self {
            Region::Disk(d) => {
                let r = p.dist(d.center);
                if closed {
                    r <= d.radius
                } else {
                    r < d.radius
                }
            }
            Region::Square(s) => {
                let r = s.rect();
                if closed {
                    r.contains(p)
                } else {
                    p.re > r.x0 && p.re < r.x1 && p.im > r.y0 && p.im < r.y1
                }
            }
            Region::Annulus(a) => {
                let r = p.dist(a.center);
                if closed {
                    r >= a.inner && r <= a.outer
                } else {
                    r > a.inner && r < a.outer
                }
            }
            Region::Union(v) => v.iter().any(|c| c.contains_mode(p, mode)),
            Region::Intersection(v) => v.iter().all(|c| c.contains_mode(p, mode)),
            Region::Difference(a, b) => {
                let other = if closed { Mode::Interior } else { Mode::Closed };
                a.contains_mode(p, mode) && !b.contains_mode(p, other)
            }
        }
    }

    /// Bounding box, `None` for a region that is provably empty.
    pub fn bbox(&self) -> Option<Rect> {
        match self {
            Region::Disk(d) => Some(Rect {
                x0: d.center.re - d.radius,
                y0: d.center.im - d.radius,
                x1: d.center.re + d.radius,
                y1: d.center.im + d.radius,
            }),
            Region::Square(s) => Some(s.rect()),
            Region::Annulus(a) => Some(Rect {
                x0: a.center.re - a.outer,
                y0: a.center.im - a.outer,
                x1: a.center.re + a.outer,
                y1: a.center.im + a.outer,
            }),
            Region::Union(v) => v.iter().filter_map(Region::bbox).reduce(|acc, r| acc.union(&r)),
            Region::Intersection(v) => {
                let mut it = v.iter();
                let mut acc = it.next()?.bbox()?;
                for c in it {
                    acc = acc.intersect(&c.bbox()?)?;
                }
                Some(acc)
            }
            Region::Difference(a, _) => a.bbox(),
        }
    }

    /// Conservative classification of a closed cell against the region.
    pub fn classify_cell(&self, cell: &SquareBox) -> CellClass {
        self.classify_mode(&cell.rect(), Mode::Closed)
    }

    /// Classification of the open interior of a cell: `Full` when the open
    /// cell lies in the region, `Empty` when it misses the region. Cells that
    /// only touch the region along their boundary come out `Empty`; this is
    /// the test the quadtree algorithms use.
    pub fn classify_cell_interior(&self, cell: &SquareBox) -> CellClass {
        self.classify_open(&cell.rect())
    }

    fn classify_open(&self, cell: &Rect) -> CellClass {
        use CellClass::*;
        // For an open box the extreme distances are not attained, so open and
        // closed primitives share thresholds.
        match self {
            Region::Disk(d) => {
                if cell.max_dist(d.center) <= d.radius {
                    Full
                } else if cell.min_dist(d.center) >= d.radius {
                    Empty
                } else {
                    Partial
                }
            }
            Region::Square(s) => {
                let r = s.rect();
                if r.contains_rect(cell) {
                    Full
                } else if cell.x1 <= r.x0 || cell.x0 >= r.x1 || cell.y1 <= r.y0 || cell.y0 >= r.y1 {
                    Empty
                } else {
                    Partial
                }
            }
            Region::Annulus(a) => {
                let dmin = cell.min_dist(a.center);
                let dmax = cell.max_dist(a.center);
                if dmin >= a.inner && dmax <= a.outer {
                    Full
                } else if dmin >= a.outer || dmax <= a.inner {
                    Empty
                } else {
                    Partial
                }
            }
            Region::Union(v) => {
                let mut all_empty = true;
                for c in v {
                    match c.classify_open(cell) {
                        Full => return Full,
                        Partial => all_empty = false,
                        Empty => {}
                    }
                }
                if all_empty {
                    Empty
                } else {
                    Partial
                }
            }
            Region::Intersection(v) => {
                let mut all_full = !v.is_empty();
                for c in v {
                    match c.classify_open(cell) {
                        Empty => return Empty,
                        Full => {}
                        Partial => all_full = false,
                    }
                }
                if all_full {
                    Full
                } else {
                    Partial
                }
            }
            Region::Difference(a, b) => {
                // an open cell inside B lies inside the interior of B
                let ca = a.classify_open(cell);
                let cb = b.classify_open(cell);
                if ca == Empty || cb == Full {
                    Empty
                } else if ca == Full && cb == Empty {
                    Full
                } else {
                    Partial
                }
            }
        }
    }

    pub fn classify_rect(&self, rect: &Rect) -> CellClass {
        self.classify_mode(rect, Mode::Closed)
    }

    fn classify_mode(&self, cell: &Rect, mode: Mode) -> CellClass {
        use CellClass::*;
        let closed = mode == Mode::Closed;
        match self {
            Region::Disk(d) => {
                let dmin = cell.min_dist(d.center);
                let dmax = cell.max_dist(d.center);
                if closed {
                    if dmax <= d.radius {
                        Full
                    } else if dmin > d.radius {
                        Empty
                    } else {
                        Partial
                    }
                } else if dmax < d.radius {
                    Full
                } else if dmin >= d.radius {
                    Empty
                } else {
                    Partial
                }
            }
            Region::Square(s) => {
                let r = s.rect();
                if closed {
                    if r.contains_rect(cell) {
                        Full
                    } else if cell.x1 < r.x0 || cell.x0 > r.x1 || cell.y1 < r.y0 || cell.y0 > r.y1 {
                        Empty
                    } else {
                        Partial
                    }
                } else if cell.x0 > r.x0 && cell.x1 < r.x1 && cell.y0 > r.y0 && cell.y1 < r.y1 {
                    Full
                } else if cell.x1 <= r.x0 || cell.x0 >= r.x1 || cell.y1 <= r.y0 || cell.y0 >= r.y1 {
                    Empty
                } else {
                    Partial
                }
            }
            Region::Annulus(a) => {
                let dmin = cell.min_dist(a.center);
                let dmax = cell.max_dist(a.center);
                if closed {
                    if dmin >= a.inner && dmax <= a.outer {
                        Full
                    } else if dmin > a.outer || dmax < a.inner {
                        Empty
                    } else {
                        Partial
                    }
                } else if dmin > a.inner && dmax < a.outer {
                    Full
                } else if dmin >= a.outer || dmax <= a.inner {
                    Empty
                } else {
                    Partial
                }
            }
            Region::Union(v) => {
                let mut all_empty = true;
                for c in v {
                    if c.classify_mode(cell, mode) == Full {
                        return Full;
                    }
                    // The interior of a union may exceed the union of interiors,
                    // so emptiness is always certified against the closed pieces.
                    if c.classify_mode(cell, Mode::Closed) != Empty {
                        all_empty = false;
                    }
                }
                if all_empty {
                    Empty
                } else {
                    Partial
                }
            }
            Region::Intersection(v) => {
                let mut all_full = !v.is_empty();
                for c in v {
                    match c.classify_mode(cell, mode) {
                        Empty => return Empty,
                        Full => {}
                        Partial => all_full = false,
                    }
                }
                if all_full {
                    Full
                } else {
                    Partial
                }
            }
            Region::Difference(a, b) => {
                // closed: A minus int(B); interior: contains int(A) minus cl(B)
                if a.classify_mode(cell, Mode::Closed) == Empty || b.classify_mode(cell, Mode::Interior) == Full {
                    return Empty;
                }
                let sub_mode = if closed { Mode::Interior } else { Mode::Closed };
                if a.classify_mode(cell, mode) == Full && b.classify_mode(cell, sub_mode) == Empty {
                    return Full;
                }
                Partial
            }
        }
    }
}

/// A square of the dyadic grid below a root square.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DyadicSquare {
    pub level: u32,
    pub ix: i64,
    pub iy: i64,
}

impl DyadicSquare {
    pub const ROOT: DyadicSquare = DyadicSquare { level: 0, ix: 0, iy: 0 };

    pub fn children(self) -> [DyadicSquare; 4] {
        let (l, x, y) = (self.level + 1, 2 * self.ix, 2 * self.iy);
        [
            DyadicSquare { level: l, ix: x, iy: y },
            DyadicSquare { level: l, ix: x + 1, iy: y },
            DyadicSquare { level: l, ix: x, iy: y + 1 },
            DyadicSquare { level: l, ix: x + 1, iy: y + 1 },
        ]
    }

    pub fn parent(self) -> Option<DyadicSquare> {
        (self.level > 0).then(|| DyadicSquare {
            level: self.level - 1,
            ix: self.ix.div_euclid(2),
            iy: self.iy.div_euclid(2),
        })
    }

    /// Ancestor at a coarser `level` (itself when equal).
    pub fn ancestor(self, level: u32) -> DyadicSquare {
        debug_assert!(level <= self.level);
        let shift = self.level - level;
        DyadicSquare { level, ix: self.ix >> shift, iy: self.iy >> shift }
    }

    /// Same-level neighbour across an edge; `None` outside the root.
    pub fn neighbor(self, dx: i64, dy: i64) -> Option<DyadicSquare> {
        let n = 1i64 << self.level;
        let (ix, iy) = (self.ix + dx, self.iy + dy);
        (ix >= 0 && iy >= 0 && ix < n && iy < n).then_some(DyadicSquare { level: self.level, ix, iy })
    }
}

/// A root square with a maximum subdivision depth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DyadicGrid {
    pub root: SquareBox,
    pub depth: u32,
}

impl DyadicGrid {
    pub fn new(root: SquareBox, depth: u32) -> Self {
        DyadicGrid { root, depth }
    }

    /// `[-1, 1]^2`, which holds every set inside the closed unit disk.
    pub fn unit(depth: u32) -> Self {
        DyadicGrid { root: SquareBox { corner: Point::new(-1.0, -1.0), side: 2.0 }, depth }
    }

    pub fn side_at(&self, level: u32) -> f64 {
        self.root.side * (-(level as f64)).exp2()
    }

    pub fn finest_side(&self) -> f64 {
        self.side_at(self.depth)
    }

    pub fn cell(&self, sq: DyadicSquare) -> SquareBox {
        let s = self.side_at(sq.level);
        SquareBox { corner: self.root.corner.translate(sq.ix as f64 * s, sq.iy as f64 * s), side: s }
    }

    /// Errors when the region's bounding box leaves the root square.
    pub fn check_contains(&self, region: &Region) -> Result<()> {
        if let Some(b) = region.bbox() {
            let r = self.root.rect();
            let tol = 1e-12 * self.root.side;
            if b.x0 < r.x0 - tol || b.y0 < r.y0 - tol || b.x1 > r.x1 + tol || b.y1 > r.y1 + tol {
                return Err(Error::RegionExceedsRoot);
            }
        }
        Ok(())
    }

    /// Finest-level squares whose open cells are not classified `Empty`.
    pub fn nonempty_leaves(&self, region: &Region) -> Vec<DyadicSquare> {
        let mut out = Vec::new();
        let mut stack = vec![DyadicSquare::ROOT];
        while let Some(sq) = stack.pop() {
            let class = region.classify_cell_interior(&self.cell(sq));
            if class == CellClass::Empty {
                continue;
            }
            if sq.level == self.depth {
                out.push(sq);
            } else {
                stack.extend(sq.children());
            }
        }
        out.sort();
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sample_cell(cell: &SquareBox, k: usize) -> Vec<Point> {
        let mut pts = Vec::new();
        for i in 0..=k {
            for j in 0..=k {
                let u = i as f64 / k as f64;
                let v = j as f64 / k as f64;
                pts.push(cell.corner.translate(u * cell.side, v * cell.side));
            }
        }
        pts
    }

    #[test]
    fn membership_examples() {
        let d = Region::disk(0.0, 0.0, 1.0).unwrap();
        assert!(d.contains(Point::ORIGIN));
        let punctured = Region::difference(
            Region::annulus(0.0, 0.0, 0.25, 0.5).unwrap(),
            Region::disk(0.375, 0.0, 0.0625).unwrap(),
        );
        assert!(!punctured.contains(Point::new(0.375, 0.0)));
        // boundary of the deleted open disk stays in the set
        assert!(punctured.contains(Point::new(0.4375, 0.0)));
        let a = Region::annulus(0.0, 0.0, 0.25, 0.5).unwrap();
        assert!(a.contains(Point::new(0.25, 0.0)));
        assert!(!a.interior_contains(Point::new(0.25, 0.0)));
    }

    #[test]
    fn classify_examples() {
        let d = Region::disk(0.0, 0.0, 1.0).unwrap();
        let c = SquareBox::new(Point::new(-0.05, -0.05), 0.1).unwrap();
        assert_eq!(d.classify_cell(&c), CellClass::Full);
        let c = SquareBox::new(Point::new(5.0, 5.0), 1.0).unwrap();
        assert_eq!(d.classify_cell(&c), CellClass::Empty);

        let a = Region::annulus(0.0, 0.0, 0.25, 0.5).unwrap();
        let c = SquareBox::new(Point::new(-0.5, -0.5), 1.0).unwrap();
        // oracle: sampling finds points both inside and outside
        let pts = sample_cell(&c, 40);
        assert!(pts.iter().any(|p| a.contains(*p)));
        assert!(pts.iter().any(|p| !a.contains(*p)));
        assert_eq!(a.classify_cell(&c), CellClass::Partial);
    }

    #[test]
    fn shells() {
        let a = annulus_shell(Point::ORIGIN, 1);
        assert_eq!((a.inner, a.outer), (0.25, 0.5));
        let a = annulus_shell(Point::ORIGIN, 0);
        assert_eq!((a.inner, a.outer), (0.5, 1.0));
        let a = annulus_shell(Point::new(1.0, 1.0), 3);
        assert_eq!((a.center, a.inner, a.outer), (Point::new(1.0, 1.0), 1.0 / 16.0, 1.0 / 8.0));
        for n in 0..40 {
            assert_eq!(annulus_shell(Point::ORIGIN, n + 1).outer, annulus_shell(Point::ORIGIN, n).inner);
        }
    }

    fn random_primitive(rng: &mut ChaCha8Rng) -> Region {
        let cx = rng.gen_range(-0.8..0.8);
        let cy = rng.gen_range(-0.8..0.8);
        match rng.gen_range(0..3) {
            0 => Region::disk(cx, cy, rng.gen_range(0.05..0.6)).unwrap(),
            1 => Region::square(cx - 0.2, cy - 0.2, rng.gen_range(0.05..0.7)).unwrap(),
            _ => {
                let inner = rng.gen_range(0.0..0.3);
                Region::annulus(cx, cy, inner, inner + rng.gen_range(0.05..0.4)).unwrap()
            }
        }
    }

    fn random_region(rng: &mut ChaCha8Rng, depth: u32) -> Region {
        if depth == 0 {
            return random_primitive(rng);
        }
        match rng.gen_range(0..4) {
            0 => Region::Union(vec![random_region(rng, depth - 1), random_region(rng, depth - 1)]),
            1 => Region::Intersection(vec![random_region(rng, depth - 1), random_region(rng, depth - 1)]),
            2 => Region::difference(random_region(rng, depth - 1), random_region(rng, depth - 1)),
            _ => random_primitive(rng),
        }
    }

    #[test]
    fn classification_is_sound_on_random_cells() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut decided = 0;
        for _ in 0..1000 {
            let region = random_region(&mut rng, 2);
            let side = rng.gen_range(0.01..0.5);
            let cell = SquareBox::new(Point::new(rng.gen_range(-1.0..0.8), rng.gen_range(-1.0..0.8)), side).unwrap();
            let class = region.classify_cell(&cell);
            let pts = sample_cell(&cell, 12);
            match class {
                CellClass::Full => {
                    decided += 1;
                    assert!(pts.iter().all(|p| region.contains(*p)), "{region:?} {cell:?}")
                }
                CellClass::Empty => {
                    decided += 1;
                    assert!(pts.iter().all(|p| !region.contains(*p)), "{region:?} {cell:?}")
                }
                CellClass::Partial => {}
            }
        }
        assert!(decided > 300);
    }

    #[test]
    fn interior_classification_is_sound() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..1000 {
            let region = random_region(&mut rng, 2);
            let cell = SquareBox::new(
                Point::new(rng.gen_range(-1.0..0.8), rng.gen_range(-1.0..0.8)),
                rng.gen_range(0.01..0.5),
            )
            .unwrap();
            let class = region.classify_cell_interior(&cell);
            // strictly interior sample points
            let inner = cell.dilate(0.98);
            let pts = sample_cell(&inner, 12);
            match class {
                CellClass::Full => assert!(pts.iter().all(|p| region.contains(*p))),
                CellClass::Empty => assert!(pts.iter().all(|p| !region.contains(*p))),
                CellClass::Partial => {}
            }
        }
        // a cell touching a disk from outside is empty in the interior sense
        let d = Region::disk(0.0, 0.0, 1.0).unwrap();
        let c = SquareBox::new(Point::new(1.0, -0.5), 1.0).unwrap();
        assert_eq!(d.classify_cell(&c), CellClass::Partial);
        assert_eq!(d.classify_cell_interior(&c), CellClass::Empty);
    }

    #[test]
    fn difference_law_on_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let a = random_region(&mut rng, 1);
            let b = random_region(&mut rng, 1);
            let d = Region::difference(a.clone(), b.clone());
            for _ in 0..50 {
                let p = Point::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
                assert_eq!(d.contains(p), a.contains(p) && !b.interior_contains(p));
            }
        }
    }

    #[test]
    fn json_round_trip() {
        let r = Region::Union(vec![
            Region::difference(Region::annulus(0.0, 0.0, 0.25, 0.5).unwrap(), Region::disk(0.375, 0.0, 0.05).unwrap()),
            Region::square(0.0, 0.0, 0.1).unwrap(),
        ]);
        let text = serde_json::to_string(&r).unwrap();
        assert!(text.starts_with("{\"union\":[{\"difference\":"));
        assert_eq!(Region::from_json(&text).unwrap(), r);
        assert!(Region::from_json(r#"{"disk":{"center":[0,0],"radius":-1}}"#).is_err());
    }

    #[test]
    fn grid_cells_and_root_check() {
        let g = DyadicGrid::unit(3);
        let c = g.cell(DyadicSquare { level: 1, ix: 1, iy: 0 });
        assert_eq!(c.corner, Point::new(0.0, -1.0));
        assert_eq!(c.side, 1.0);
        assert!(g.check_contains(&Region::disk(0.0, 0.0, 1.0).unwrap()).is_ok());
        assert_eq!(g.check_contains(&Region::disk(0.5, 0.0, 1.0).unwrap()), Err(Error::RegionExceedsRoot));
        assert!(g.nonempty_leaves(&Region::empty()).is_empty());
    }
}
