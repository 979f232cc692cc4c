//! Rectangles of a threshold partition, their facets and neighbours, and
//! the uniform κ-tile grids laid over facets and rectangles.
//!
//! Rectangles are identified by interval indices (`j` on axis `i` means
//! `[T_i[j], T_i[j+1]]`), never by coordinates, so equality and hashing are
//! exact. Coordinates are derived on demand from the [`Partition`].

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::Partition;

/// Relative tolerance for boundary membership: `1e-9` times the local span.
pub const GEOM_REL_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("point {point:?} lies outside the tiled region (axis {axis})")]
    OutsideRegion { point: Vec<f64>, axis: usize },
    #[error("point has dimension {actual}, region has {expected}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("tile grid with κ = {kappa} in dimension {dim} is too large")]
    GridTooLarge { kappa: usize, dim: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Rectangle(Vec<usize>);

impl Rectangle {
    pub fn new(indices: Vec<usize>) -> Self {
        Rectangle(indices)
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn dimension(&self) -> usize {
        self.0.len()
    }

    pub fn bounds(&self, partition: &Partition) -> BoxBounds {
        let (lo, hi) = self
            .0
            .iter()
            .enumerate()
            .map(|(i, &j)| {
                let t = partition.axis(i);
                (t[j], t[j + 1])
            })
            .unzip();
        BoxBounds { lo, hi }
    }
}

impl fmt::Display for Rectangle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for (k, j) in self.0.iter().enumerate() {
            if k > 0 {
                write!(f, ",")?;
            }
            write!(f, "{j}")?;
        }
        write!(f, "]")
    }
}

/// Coordinate box `prod [lo_i, hi_i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxBounds {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl BoxBounds {
    pub fn dimension(&self) -> usize {
        self.lo.len()
    }

    pub fn side(&self, i: usize) -> f64 {
        self.hi[i] - self.lo[i]
    }

    pub fn center(&self) -> Vec<f64> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(a, b)| 0.5 * (a + b))
            .collect()
    }

    pub fn volume(&self) -> f64 {
        (0..self.dimension()).map(|i| self.side(i)).product()
    }

    pub fn tolerance(&self, i: usize) -> f64 {
        GEOM_REL_TOL * self.side(i)
    }

    /// Membership with the geometric tolerance applied on every face.
    pub fn contains(&self, x: &[f64]) -> bool {
        (0..self.dimension()).all(|i| {
            let tol = self.tolerance(i);
            x[i] >= self.lo[i] - tol && x[i] <= self.hi[i] + tol
        })
    }

    /// All `2^n` vertices, in binary-counter order (bit `i` selects `hi_i`).
    pub fn vertices(&self) -> impl Iterator<Item = Vec<f64>> + '_ {
        let n = self.dimension();
        (0..1usize << n).map(move |mask| {
            (0..n)
                .map(|i| if mask >> i & 1 == 1 { self.hi[i] } else { self.lo[i] })
                .collect()
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Lower,
    Upper,
}

impl Side {
    pub fn opposite(self) -> Side {
        match self {
            Side::Lower => Side::Upper,
            Side::Upper => Side::Lower,
        }
    }

    /// `-1` for lower facets, `+1` for upper: the outward normal direction.
    pub fn sign(self) -> f64 {
        match self {
            Side::Lower => -1.0,
            Side::Upper => 1.0,
        }
    }
}

/// A facet named relative to its rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FacetId {
    pub axis: usize,
    pub side: Side,
}

impl FacetId {
    pub fn new(axis: usize, side: Side) -> Self {
        FacetId { axis, side }
    }

    /// Position in the canonical facet order (lower before upper per axis).
    pub fn ordinal(self) -> usize {
        2 * self.axis + usize::from(self.side == Side::Upper)
    }
}

impl fmt::Display for FacetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self.side {
            Side::Lower => "lo",
            Side::Upper => "hi",
        };
        write!(f, "{}{}", s, self.axis)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Facet {
    pub rectangle: Rectangle,
    pub id: FacetId,
}

impl Facet {
    pub fn new(rectangle: Rectangle, axis: usize, side: Side) -> Self {
        Facet {
            rectangle,
            id: FacetId::new(axis, side),
        }
    }

    pub fn axis(&self) -> usize {
        self.id.axis
    }

    pub fn side(&self) -> Side {
        self.id.side
    }

    /// The fixed coordinate of the facet's hyperplane.
    pub fn coordinate(&self, partition: &Partition) -> f64 {
        let j = self.rectangle.indices()[self.axis()];
        let t = partition.axis(self.axis());
        match self.side() {
            Side::Lower => t[j],
            Side::Upper => t[j + 1],
        }
    }

    /// Degenerate box: the facet as a subset of `R^n`.
    pub fn bounds(&self, partition: &Partition) -> BoxBounds {
        let mut b = self.rectangle.bounds(partition);
        let c = self.coordinate(partition);
        b.lo[self.axis()] = c;
        b.hi[self.axis()] = c;
        b
    }
}

/// Every rectangle of the partition in lexicographic index order.
pub fn rectangles(partition: &Partition) -> impl Iterator<Item = Rectangle> + '_ {
    let n = partition.dimension();
    let total = partition.rectangle_count();
    (0..total).map(move |mut k| {
        let mut idx = vec![0; n];
        for i in (0..n).rev() {
            let m = partition.intervals(i);
            idx[i] = k % m;
            k /= m;
        }
        Rectangle(idx)
    })
}

/// The `2n` facets of `rect`, ordered by axis with lower before upper.
pub fn facets(rect: &Rectangle) -> Vec<Facet> {
    (0..rect.dimension())
        .flat_map(|axis| {
            [Side::Lower, Side::Upper]
                .into_iter()
                .map(move |side| Facet::new(rect.clone(), axis, side))
        })
        .collect()
}

pub fn facet_ids(dimension: usize) -> impl Iterator<Item = FacetId> {
    (0..dimension)
        .flat_map(|axis| [Side::Lower, Side::Upper].map(|side| FacetId::new(axis, side)))
}

/// The rectangle sharing `facet` with the facet's own rectangle, or `None`
/// when the facet lies on the boundary of the analysis domain.
pub fn neighbour_through(partition: &Partition, facet: &Facet) -> Option<Rectangle> {
    let axis = facet.axis();
    let j = facet.rectangle.indices()[axis];
    let next = match facet.side() {
        Side::Lower => j.checked_sub(1)?,
        Side::Upper if j + 1 < partition.intervals(axis) => j + 1,
        Side::Upper => return None,
    };
    let mut idx = facet.rectangle.indices().to_vec();
    idx[axis] = next;
    Some(Rectangle(idx))
}

/// `lo + k/κ·(hi - lo)`, exact at both ends.
#[inline]
fn grid_line(lo: f64, hi: f64, k: usize, kappa: usize) -> f64 {
    if k == 0 {
        lo
    } else if k == kappa {
        hi
    } else {
        lo + (hi - lo) * (k as f64) / (kappa as f64)
    }
}

/// Uniform κ-grid over a rectangle (`n`-dimensional tiles) or over one of its
/// facets (`n-1`-dimensional tiles, the facet axis held fixed).
#[derive(Debug, Clone, PartialEq)]
pub struct TileGrid {
    lo: Vec<f64>,
    hi: Vec<f64>,
    // side lengths of the owning rectangle, used for tolerances
    span: Vec<f64>,
    fixed_axis: Option<usize>,
    free_axes: Vec<usize>,
    kappa: usize,
    count: usize,
}

impl TileGrid {
    pub fn over_rectangle(
        partition: &Partition,
        rect: &Rectangle,
        kappa: usize,
    ) -> Result<Self, GeometryError> {
        Self::from_box(rect.bounds(partition), None, kappa)
    }

    pub fn over_facet(
        partition: &Partition,
        facet: &Facet,
        kappa: usize,
    ) -> Result<Self, GeometryError> {
        Self::from_box(facet.rectangle.bounds(partition), Some(facet.id), kappa)
    }

    /// Grid over `bounds`, or over the facet `facet` of `bounds`.
    pub fn from_box(
        bounds: BoxBounds,
        facet: Option<FacetId>,
        kappa: usize,
    ) -> Result<Self, GeometryError> {
        assert!(kappa >= 1, "κ must be at least 1");
        let n = bounds.dimension();
        let span: Vec<f64> = (0..n).map(|i| bounds.side(i)).collect();
        let BoxBounds { mut lo, mut hi } = bounds;
        let fixed_axis = facet.map(|f| {
            let c = match f.side {
                Side::Lower => lo[f.axis],
                Side::Upper => hi[f.axis],
            };
            lo[f.axis] = c;
            hi[f.axis] = c;
            f.axis
        });
        let free_axes: Vec<usize> = (0..n).filter(|&i| Some(i) != fixed_axis).collect();
        let count = u32::try_from(free_axes.len())
            .ok()
            .and_then(|d| kappa.checked_pow(d))
            .ok_or(GeometryError::GridTooLarge {
                kappa,
                dim: free_axes.len(),
            })?;
        Ok(TileGrid {
            lo,
            hi,
            span,
            fixed_axis,
            free_axes,
            kappa,
            count,
        })
    }

    pub fn kappa(&self) -> usize {
        self.kappa
    }

    pub fn tile_count(&self) -> usize {
        self.count
    }

    pub fn fixed_axis(&self) -> Option<usize> {
        self.fixed_axis
    }

    pub fn free_axes(&self) -> &[usize] {
        &self.free_axes
    }

    pub fn dimension(&self) -> usize {
        self.lo.len()
    }

    /// Measure of the tiled region in its own dimension.
    pub fn volume(&self) -> f64 {
        self.free_axes
            .iter()
            .map(|&i| self.hi[i] - self.lo[i])
            .product()
    }

    /// Per free axis grid coordinates of tile `index` (first free axis varies fastest).
    pub fn coords(&self, mut index: usize) -> Vec<usize> {
        self.free_axes
            .iter()
            .map(|_| {
                let k = index % self.kappa;
                index /= self.kappa;
                k
            })
            .collect()
    }

    pub fn index_of(&self, coords: &[usize]) -> usize {
        coords.iter().rev().fold(0, |acc, &k| acc * self.kappa + k)
    }

    pub fn tile(&self, index: usize) -> Tile {
        assert!(index < self.count, "tile index {index} out of range");
        let mut lo = self.lo.clone();
        let mut hi = self.hi.clone();
        for (&axis, k) in self.free_axes.iter().zip(self.coords(index)) {
            lo[axis] = grid_line(self.lo[axis], self.hi[axis], k, self.kappa);
            hi[axis] = grid_line(self.lo[axis], self.hi[axis], k + 1, self.kappa);
        }
        Tile {
            index,
            bounds: BoxBounds { lo, hi },
            free_axes: self.free_axes.clone(),
        }
    }

    pub fn tiles(&self) -> impl Iterator<Item = Tile> + '_ {
        (0..self.count).map(|k| self.tile(k))
    }

    /// Tile whose half-open index box holds `point`; points on an interior
    /// grid line belong to the higher-index tile.
    pub fn tile_containing(&self, point: &[f64]) -> Result<usize, GeometryError> {
        if point.len() != self.dimension() {
            return Err(GeometryError::DimensionMismatch {
                expected: self.dimension(),
                actual: point.len(),
            });
        }
        for i in 0..self.dimension() {
            let tol = GEOM_REL_TOL * self.span[i];
            if point[i] < self.lo[i] - tol || point[i] > self.hi[i] + tol || point[i].is_nan() {
                return Err(GeometryError::OutsideRegion {
                    point: point.to_vec(),
                    axis: i,
                });
            }
        }
        let mut index = 0;
        for &axis in self.free_axes.iter().rev() {
            let k = self.axis_cell(axis, point[axis]);
            index = index * self.kappa + k;
        }
        Ok(index)
    }

    fn axis_cell(&self, axis: usize, x: f64) -> usize {
        let (lo, hi, kappa) = (self.lo[axis], self.hi[axis], self.kappa);
        let t = (x - lo) / (hi - lo) * kappa as f64;
        let mut k = (t.floor().max(0.0) as usize).min(kappa - 1);
        // agree exactly with the grid lines used to build tiles
        while k + 1 < kappa && x >= grid_line(lo, hi, k + 1, kappa) {
            k += 1;
        }
        while k > 0 && x < grid_line(lo, hi, k, kappa) {
            k -= 1;
        }
        k
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tile {
    pub index: usize,
    pub bounds: BoxBounds,
    free_axes: Vec<usize>,
}

impl Tile {
    pub fn center(&self) -> Vec<f64> {
        self.bounds.center()
    }

    /// Measure in the dimension of the parent grid.
    pub fn volume(&self) -> f64 {
        self.free_axes.iter().map(|&i| self.bounds.side(i)).product()
    }

    pub fn free_axes(&self) -> &[usize] {
        &self.free_axes
    }
}

/// Fixed-length bitset over the tiles of one facet grid.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TileSet {
    len: usize,
    words: Vec<u64>,
}

impl TileSet {
    pub fn new(len: usize) -> Self {
        TileSet {
            len,
            words: vec![0; len.div_ceil(64)],
        }
    }

    pub fn from_indices(len: usize, indices: impl IntoIterator<Item = usize>) -> Self {
        let mut set = Self::new(len);
        for k in indices {
            set.insert(k);
        }
        set
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn insert(&mut self, k: usize) {
        assert!(k < self.len, "tile {k} out of range {}", self.len);
        self.words[k / 64] |= 1 << (k % 64);
    }

    pub fn remove(&mut self, k: usize) {
        if k < self.len {
            self.words[k / 64] &= !(1 << (k % 64));
        }
    }

    pub fn contains(&self, k: usize) -> bool {
        k < self.len && self.words[k / 64] >> (k % 64) & 1 == 1
    }

    pub fn is_empty(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    pub fn count(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.words.iter().enumerate().flat_map(|(wi, &w)| {
            let mut w = w;
            std::iter::from_fn(move || {
                if w == 0 {
                    return None;
                }
                let b = w.trailing_zeros() as usize;
                w &= w - 1;
                Some(wi * 64 + b)
            })
        })
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }
}

/// Tile-approximated region through which trajectories enter a rectangle.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EntrySet {
    Empty,
    Whole,
    FacetTiles { facet: FacetId, tiles: TileSet },
}

impl EntrySet {
    /// Tiles on `facet`; an all-zero set collapses to `Empty`.
    pub fn on_facet(facet: FacetId, tiles: TileSet) -> EntrySet {
        if tiles.is_empty() {
            EntrySet::Empty
        } else {
            EntrySet::FacetTiles { facet, tiles }
        }
    }

    pub fn is_empty(&self) -> bool {
        matches!(self, EntrySet::Empty)
    }

    pub fn facet(&self) -> Option<FacetId> {
        match self {
            EntrySet::FacetTiles { facet, .. } => Some(*facet),
            _ => None,
        }
    }
}

impl fmt::Display for EntrySet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EntrySet::Empty => write!(f, "∅"),
            EntrySet::Whole => write!(f, "H"),
            EntrySet::FacetTiles { facet, tiles } => {
                write!(f, "{facet}{{")?;
                for (k, t) in tiles.iter().enumerate() {
                    if k > 0 {
                        write!(f, ",")?;
                    }
                    write!(f, "{t}")?;
                }
                write!(f, "}}")
            }
        }
    }
}

/// Radical inverse of `index` in base `base`.
fn radical_inverse(mut index: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut r = 0.0;
    while index > 0 {
        r += f * (index % base) as f64;
        index /= base;
        f *= inv;
    }
    r
}

fn first_primes(count: usize) -> Vec<u64> {
    let mut primes = Vec::with_capacity(count);
    let mut c = 2u64;
    while primes.len() < count {
        if primes.iter().take_while(|&&p| p * p <= c).all(|&p| !c.is_multiple_of(p)) {
            primes.push(c);
        }
        c += 1;
    }
    primes
}

/// Halton points `1..=count` in `[0,1)^dim`.
pub fn halton_points(dim: usize, count: usize) -> Vec<Vec<f64>> {
    let bases = first_primes(dim);
    (1..=count as u64)
        .map(|k| bases.iter().map(|&b| radical_inverse(k, b)).collect())
        .collect()
}

/// Rectangular κ-grid measure of the set described by `member`: the total
/// volume of tiles at least half covered by the set. Coverage of each tile
/// is estimated with the same `mc_samples`-point Halton set.
pub fn grid_measure<F>(member: F, grid: &TileGrid, mc_samples: usize) -> f64
where
    F: Fn(&[f64]) -> bool,
{
    assert!(mc_samples >= 1);
    let unit = halton_points(grid.free_axes().len(), mc_samples);
    let mut point = vec![0.0; grid.dimension()];
    let mut total = 0.0;
    for tile in grid.tiles() {
        point.copy_from_slice(&tile.bounds.lo);
        let mut hits = 0usize;
        for u in &unit {
            for (&axis, &ui) in tile.free_axes().iter().zip(u) {
                point[axis] = tile.bounds.lo[axis] + ui * tile.bounds.side(axis);
            }
            if member(&point) {
                hits += 1;
            }
        }
        if 2 * hits >= mc_samples {
            total += tile.volume();
        }
    }
    total
}
