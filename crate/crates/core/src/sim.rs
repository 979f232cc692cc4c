//! Trajectory simulation inside one rectangle.
//!
//! Fixed-step classical RK4 on `f` (or `-f` for backward time). After the
//! first step that leaves the rectangle, the crossing is bracketed by
//! bisection on the step length until the bracket's spatial displacement is
//! at most `crossing_tol`, and the exit point is snapped onto the crossed
//! facet.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::geometry::{BoxBounds, EntrySet, FacetId, GeometryError, Side, TileGrid};
use crate::model::MultiAffineField;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("integration produced a non-finite state at t = {time}; last finite state {last:?}")]
    NonFinite { last: Vec<f64>, time: f64 },
    #[error("start point {0:?} is not inside the rectangle")]
    StartOutside(Vec<f64>),
    #[error("cannot sample the empty entry set")]
    EmptyEntrySet,
    #[error("invalid simulation parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

impl Direction {
    fn sign(self) -> f64 {
        match self {
            Direction::Forward => 1.0,
            Direction::Backward => -1.0,
        }
    }
}

/// Resolved integration parameters for one rectangle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimParams {
    pub dt: f64,
    pub t_max: f64,
    pub crossing_tol: f64,
    /// Samples per region (`M`).
    pub samples: usize,
}

impl SimParams {
    pub fn new(dt: f64, t_max: f64, crossing_tol: f64, samples: usize) -> Result<Self, SimError> {
        let p = SimParams {
            dt,
            t_max,
            crossing_tol,
            samples,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |msg: String| Err(SimError::InvalidParams(msg));
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("dt must be positive and finite, got {}", self.dt));
        }
        if !(self.t_max >= self.dt) || self.t_max.is_infinite() {
            return bad(format!("t_max {} must be finite and at least dt {}", self.t_max, self.dt));
        }
        if !(self.crossing_tol > 0.0) {
            return bad(format!("crossing_tol must be positive, got {}", self.crossing_tol));
        }
        if self.samples == 0 {
            return bad("at least one sample is required".into());
        }
        Ok(())
    }

    pub fn with_dt(mut self, dt: f64) -> Self {
        self.dt = dt;
        self
    }
}

/// User-level simulation settings. Unset values are derived per rectangle
/// by [`SimSettings::resolve`].
#[derive(Debug, Clone, PartialEq)]
pub struct SimSettings {
    pub samples: usize,
    pub dt: Option<f64>,
    pub t_max: Option<f64>,
    pub crossing_tol: Option<f64>,
    /// Upper bound on `t_max / dt` when `t_max` is derived.
    pub max_steps: usize,
}

impl Default for SimSettings {
    fn default() -> Self {
        SimSettings {
            samples: 500,
            dt: None,
            t_max: None,
            crossing_tol: None,
            max_steps: 20_000,
        }
    }
}

impl SimSettings {
    pub fn with_samples(samples: usize) -> Self {
        SimSettings {
            samples,
            ..Self::default()
        }
    }

    /// Scale-aware defaults for the rectangle `bounds`.
    ///
    /// With `v_i` the largest `|f_i|` over the box (attained at a vertex) and
    /// `tau_i = side_i / v_i`:
    /// * `dt = min(min_i tau_i / 50, 0.5 / L)` where `L` bounds `||Df||_inf`
    ///   on the box, so RK4 stays stable on stiff fields;
    /// * `t_max = min(100 * max_i tau_i, max_steps * dt)`;
    /// * `crossing_tol = 1e-6 * min_i side_i`.
    pub fn resolve(&self, field: &MultiAffineField, bounds: &BoxBounds) -> Result<SimParams, SimError> {
        let n = bounds.dimension();
        let vertices: Vec<Vec<f64>> = bounds.vertices().collect();
        let mut speed = vec![0.0f64; n];
        let mut lipschitz = 0.0f64;
        for v in &vertices {
            for (i, s) in speed.iter_mut().enumerate() {
                *s = s.max(field.eval_component(i, v).abs());
            }
        }
        for i in 0..n {
            let row: f64 = (0..n)
                .map(|j| {
                    vertices
                        .iter()
                        .map(|v| field.partial(i, j, v).abs())
                        .fold(0.0, f64::max)
                })
                .sum();
            lipschitz = lipschitz.max(row);
        }
        let taus: Vec<f64> = (0..n)
            .filter(|&i| speed[i] > 0.0)
            .map(|i| bounds.side(i) / speed[i])
            .collect();
        let tau_min = taus.iter().copied().fold(f64::INFINITY, f64::min);
        let tau_max = taus.iter().copied().fold(0.0, f64::max);

        let mut derived_dt = tau_min / 50.0;
        if lipschitz > 0.0 {
            derived_dt = derived_dt.min(0.5 / lipschitz);
        }
        if !derived_dt.is_finite() {
            // the field vanishes on the whole box
            derived_dt = 1.0;
        }
        let dt = self.dt.unwrap_or(derived_dt);
        let t_max = match self.t_max {
            Some(t) => t,
            None => {
                let horizon = if tau_max > 0.0 { 100.0 * tau_max } else { 100.0 * dt };
                horizon.min(self.max_steps as f64 * dt).max(dt)
            }
        };
        let min_side = (0..n).map(|i| bounds.side(i)).fold(f64::INFINITY, f64::min);
        let crossing_tol = self.crossing_tol.unwrap_or(1e-6 * min_side);
        SimParams::new(dt, t_max, crossing_tol, self.samples)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ExitEvent {
    Exited {
        point: Vec<f64>,
        facet: FacetId,
        time: f64,
    },
    StaysInside,
}

struct Rk4<'a> {
    field: &'a MultiAffineField,
    sign: f64,
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl<'a> Rk4<'a> {
    fn new(field: &'a MultiAffineField, direction: Direction) -> Self {
        let n = field.dimension();
        Rk4 {
            field,
            sign: direction.sign(),
            k1: vec![0.0; n],
            k2: vec![0.0; n],
            k3: vec![0.0; n],
            k4: vec![0.0; n],
            tmp: vec![0.0; n],
        }
    }

    fn rhs(field: &MultiAffineField, sign: f64, x: &[f64], out: &mut [f64]) {
        field.eval_into(x, out);
        if sign < 0.0 {
            out.iter_mut().for_each(|v| *v = -*v);
        }
    }

    fn step(&mut self, x: &[f64], h: f64, out: &mut [f64]) {
        let (f, s) = (self.field, self.sign);
        Self::rhs(f, s, x, &mut self.k1);
        for i in 0..x.len() {
            self.tmp[i] = x[i] + 0.5 * h * self.k1[i];
        }
        Self::rhs(f, s, &self.tmp, &mut self.k2);
        for i in 0..x.len() {
            self.tmp[i] = x[i] + 0.5 * h * self.k2[i];
        }
        Self::rhs(f, s, &self.tmp, &mut self.k3);
        for i in 0..x.len() {
            self.tmp[i] = x[i] + h * self.k3[i];
        }
        Self::rhs(f, s, &self.tmp, &mut self.k4);
        for i in 0..x.len() {
            out[i] = x[i]
                + h / 6.0 * (self.k1[i] + 2.0 * self.k2[i] + 2.0 * self.k3[i] + self.k4[i]);
        }
    }
}

/// Integrates from `x0` until the trajectory leaves `bounds` or `t_max`
/// elapses.
pub fn integrate_until_exit(
    field: &MultiAffineField,
    x0: &[f64],
    bounds: &BoxBounds,
    params: &SimParams,
    direction: Direction,
) -> Result<ExitEvent, SimError> {
    integrate_observed(field, x0, bounds, params, direction, |_, _| {})
}

/// Like [`integrate_until_exit`], calling `observe(t, x)` at the start point,
/// after every accepted step and at the exit point.
pub fn integrate_observed<F>(
    field: &MultiAffineField,
    x0: &[f64],
    bounds: &BoxBounds,
    params: &SimParams,
    direction: Direction,
    mut observe: F,
) -> Result<ExitEvent, SimError>
where
    F: FnMut(f64, &[f64]),
{
    let n = bounds.dimension();
    if x0.len() != n || !bounds.contains(x0) {
        return Err(SimError::StartOutside(x0.to_vec()));
    }
    let mut rk = Rk4::new(field, direction);
    let mut x = x0.to_vec();
    let mut next = vec![0.0; n];
    let mut t = 0.0;
    observe(t, &x);
    while t < params.t_max {
        let h = params.dt.min(params.t_max - t);
        rk.step(&x, h, &mut next);
        if next.iter().any(|v| !v.is_finite()) {
            return Err(SimError::NonFinite { last: x, time: t });
        }
        if !bounds.contains(&next) {
            let (point, facet, dt_exit) = refine_crossing(&mut rk, &x, h, &next, bounds, params)?;
            observe(t + dt_exit, &point);
            return Ok(ExitEvent::Exited {
                point,
                facet,
                time: t + dt_exit,
            });
        }
        std::mem::swap(&mut x, &mut next);
        t += h;
        observe(t, &x);
    }
    Ok(ExitEvent::StaysInside)
}

fn refine_crossing(
    rk: &mut Rk4<'_>,
    x: &[f64],
    h: f64,
    outside: &[f64],
    bounds: &BoxBounds,
    params: &SimParams,
) -> Result<(Vec<f64>, FacetId, f64), SimError> {
    let n = x.len();
    let (mut lo, mut hi) = (0.0, h);
    let mut x_lo = x.to_vec();
    let mut x_hi = outside.to_vec();
    let mut mid_state = vec![0.0; n];
    let displacement =
        |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
    for _ in 0..200 {
        if displacement(&x_lo, &x_hi) <= params.crossing_tol {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        rk.step(x, mid, &mut mid_state);
        if mid_state.iter().any(|v| !v.is_finite()) {
            return Err(SimError::NonFinite {
                last: x.to_vec(),
                time: lo,
            });
        }
        if bounds.contains(&mid_state) {
            lo = mid;
            x_lo.copy_from_slice(&mid_state);
        } else {
            hi = mid;
            x_hi.copy_from_slice(&mid_state);
        }
    }

    // earliest crossing among violated facets; canonical order breaks ties
    let mut best: Option<(f64, FacetId)> = None;
    for axis in 0..n {
        let tol = bounds.tolerance(axis);
        for side in [Side::Lower, Side::Upper] {
            let bound = match side {
                Side::Lower => bounds.lo[axis],
                Side::Upper => bounds.hi[axis],
            };
            let beyond = match side {
                Side::Lower => x_hi[axis] < bound - tol,
                Side::Upper => x_hi[axis] > bound + tol,
            };
            if !beyond {
                continue;
            }
            let span = x_hi[axis] - x_lo[axis];
            let frac = if span == 0.0 {
                0.0
            } else {
                ((bound - x_lo[axis]) / span).clamp(0.0, 1.0)
            };
            if best.is_none_or(|(f, _)| frac < f) {
                best = Some((frac, FacetId::new(axis, side)));
            }
        }
    }
    let (_, facet) = best.expect("an outside point violates at least one facet");
    let mut point = x_hi;
    for (i, v) in point.iter_mut().enumerate() {
        *v = v.clamp(bounds.lo[i], bounds.hi[i]);
    }
    point[facet.axis] = match facet.side {
        Side::Lower => bounds.lo[facet.axis],
        Side::Upper => bounds.hi[facet.axis],
    };
    Ok((point, facet, hi))
}

/// Region to draw sample points from.
#[derive(Debug, Clone, Copy)]
pub enum SampleRegion<'a> {
    /// A rectangle, facet or tile; degenerate axes (`lo == hi`) stay fixed.
    Box(&'a BoxBounds),
    /// The union of an entry set's tiles, each tile equally likely.
    Entry {
        rectangle: &'a BoxBounds,
        entry: &'a EntrySet,
        kappa: usize,
    },
}

/// `count` uniformly distributed points, fully determined by `seed`.
pub fn sample_points(
    region: SampleRegion<'_>,
    count: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>, SimError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let uniform_in = |b: &BoxBounds, rng: &mut ChaCha8Rng| -> Vec<f64> {
        b.lo.iter()
            .zip(&b.hi)
            .map(|(&l, &h)| if l == h { l } else { l + rng.gen::<f64>() * (h - l) })
            .collect()
    };
    match region {
        SampleRegion::Box(b) => Ok((0..count).map(|_| uniform_in(b, &mut rng)).collect()),
        SampleRegion::Entry {
            rectangle,
            entry,
            kappa,
        } => match entry {
            EntrySet::Empty => Err(SimError::EmptyEntrySet),
            EntrySet::Whole => Ok((0..count).map(|_| uniform_in(rectangle, &mut rng)).collect()),
            EntrySet::FacetTiles { facet, tiles } => {
                let grid = TileGrid::from_box(rectangle.clone(), Some(*facet), kappa)?;
                let members: Vec<usize> = tiles.iter().collect();
                Ok((0..count)
                    .map(|_| {
                        let k = members[rng.gen_range(0..members.len())];
                        uniform_in(&grid.tile(k).bounds, &mut rng)
                    })
                    .collect())
            }
        },
    }
}

/// splitmix64 finalizer.
#[inline]
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Child seed from a master seed, a purpose tag and arbitrary identifying
/// words. Stable across platforms and releases.
pub fn derive_seed(master: u64, tag: u64, words: impl IntoIterator<Item = u64>) -> u64 {
    let mut h = mix(master ^ mix(tag));
    for w in words {
        h = mix(h ^ w);
    }
    h
}
