//! Discretized space-time white noise, regenerated cell by cell from (seed, cell index).
//!
//! Cell `(c, k)` covers `[c − ½, c + ½)·Δx × [kΔt, (k+1)Δt)` and carries the Gaussian
//! increment η with variance Δx^d·Δt. Views remap cell indices (time shift, spatial shift,
//! time reversal, diffusive rescaling) without touching the base.

use crate::error::{invalid, Error, Result};
use crate::mollifier::KernelSpec;
use crate::stats::{inverse_normal_cdf, splitmix64};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::{HashMap, HashSet};
use std::sync::Arc;

pub const MAX_DIM: usize = 6;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    pub lattice: Vec<i64>,
    pub slot: i64,
}

/// Test hook: fixed increments for chosen cells, optionally a default for every other cell.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForcedCells {
    #[serde(default)]
    pub default: Option<f64>,
    #[serde(default)]
    pub cells: Vec<ForcedCell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForcedCell {
    pub lattice: Vec<i64>,
    pub slot: i64,
    pub value: f64,
}

impl ForcedCells {
    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Config { op: "noise::ForcedCells::from_json", msg: e.to_string() })
    }

    pub fn zeros() -> Self {
        ForcedCells { default: Some(0.0), cells: Vec::new() }
    }
}

#[derive(Debug)]
struct Overlay {
    default: Option<f64>,
    map: HashMap<Cell, f64>,
}

#[derive(Debug, Clone)]
pub struct NoiseBox {
    seed: u64,
    dim: usize,
    dx: f64,
    dt: f64,
    spatial_radius: f64,
    horizon: f64,
    n_slots: i64,
    max_index: i64,
    scale: f64,
    overlay: Option<Arc<Overlay>>,
}

/// Standard normal value attached to a cell; a pure function of its arguments.
#[inline]
pub fn cell_normal(seed: u64, lattice: &[i64], slot: i64) -> f64 {
    let mut h = splitmix64(seed ^ (slot as u64).wrapping_mul(0xD6E8_FEB8_6659_FD93));
    for (i, &c) in lattice.iter().enumerate() {
        h = splitmix64(h ^ (c as u64).wrapping_add((i as u64 + 1).wrapping_mul(0xA076_1D64_78BD_642F)));
    }
    // 53 random bits, strictly inside (0, 1)
    let u = ((h >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64);
    inverse_normal_cdf(u)
}

impl NoiseBox {
    pub fn new(seed: u64, dim: usize, dx: f64, dt: f64, spatial_radius: f64, horizon: f64) -> Result<Self> {
        const OP: &str = "noise::NoiseBox::new";
        if !(3..=MAX_DIM).contains(&dim) {
            return Err(invalid(OP, format!("dimension {dim} outside 3..={MAX_DIM}")));
        }
        for (name, v) in [("dx", dx), ("dt", dt), ("spatial_radius", spatial_radius), ("horizon", horizon)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(OP, format!("{name} = {v} must be positive")));
            }
        }
        let n_slots = (horizon / dt - 1e-9).ceil() as i64;
        let max_index = (spatial_radius / dx + 1e-9).floor() as i64;
        Ok(NoiseBox {
            seed,
            dim,
            dx,
            dt,
            spatial_radius,
            horizon,
            n_slots,
            max_index,
            scale: (dx.powi(dim as i32) * dt).sqrt(),
            overlay: None,
        })
    }

    /// Box large enough for paths from `starts` over [0, T]: half-width max|start| + 6√T + r_φ + Δx.
    pub fn for_paths(seed: u64, spec: &KernelSpec, dx: f64, dt: f64, starts: &[Vec<f64>], horizon: f64) -> Result<Self> {
        let reach = starts
            .iter()
            .flat_map(|s| s.iter().map(|v| v.abs()))
            .fold(0.0, f64::max);
        let l = reach + 6.0 * horizon.sqrt() + spec.support_radius() + dx;
        NoiseBox::new(seed, spec.dim(), dx, dt, l, horizon)
    }

    pub fn with_forced(mut self, forced: &ForcedCells) -> Result<Self> {
        let mut map = HashMap::new();
        for c in &forced.cells {
            if c.lattice.len() != self.dim {
                return Err(invalid("noise::NoiseBox::with_forced", "forced cell has wrong dimension"));
            }
            map.insert(Cell { lattice: c.lattice.clone(), slot: c.slot }, c.value);
        }
        self.overlay = Some(Arc::new(Overlay { default: forced.default, map }));
        Ok(self)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn dx(&self) -> f64 {
        self.dx
    }
    pub fn dt(&self) -> f64 {
        self.dt
    }
    pub fn spatial_radius(&self) -> f64 {
        self.spatial_radius
    }
    pub fn horizon(&self) -> f64 {
        self.horizon
    }
    pub fn n_slots(&self) -> i64 {
        self.n_slots
    }
    pub fn max_index(&self) -> i64 {
        self.max_index
    }

    #[inline]
    fn contains(&self, lattice: &[i64], slot: i64) -> bool {
        slot >= 0 && slot < self.n_slots && lattice.iter().all(|c| c.abs() <= self.max_index)
    }

    /// Increment of a base cell, no bounds check.
    #[inline]
    fn value(&self, lattice: &[i64], slot: i64) -> f64 {
        if let Some(o) = &self.overlay {
            if !o.map.is_empty() {
                let key = Cell { lattice: lattice.to_vec(), slot };
                if let Some(v) = o.map.get(&key) {
                    return *v;
                }
            }
            if let Some(d) = o.default {
                return d;
            }
        }
        self.scale * cell_normal(self.seed, lattice, slot)
    }

    pub fn view(&self) -> NoiseView<'_> {
        NoiseView {
            base: self,
            slot_offset: 0,
            slot_sign: 1,
            shift: [0; MAX_DIM],
            amp: 1.0,
            dx: self.dx,
            dt: self.dt,
        }
    }
}

/// Index map onto a base box: base slot = offset + sign·slot, base lattice = lattice + shift,
/// value multiplied by `amp`.
#[derive(Debug, Clone, Copy)]
pub struct NoiseView<'a> {
    base: &'a NoiseBox,
    slot_offset: i64,
    slot_sign: i64,
    shift: [i64; MAX_DIM],
    amp: f64,
    dx: f64,
    dt: f64,
}

impl<'a> NoiseView<'a> {
    pub fn base(&self) -> &'a NoiseBox {
        self.base
    }
    pub fn dim(&self) -> usize {
        self.base.dim
    }
    pub fn dx(&self) -> f64 {
        self.dx
    }
    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// ξ(·, · + kΔt).
    pub fn shift_slots(&self, k: i64) -> Self {
        let mut v = *self;
        v.slot_offset += self.slot_sign * k;
        v
    }

    /// ξ(·, · + τ); τ must be a multiple of Δt.
    pub fn shift_time(&self, tau: f64) -> Result<Self> {
        let k = (tau / self.dt).round();
        if tau < 0.0 || (k * self.dt - tau).abs() > 1e-9 * self.dt.max(tau) {
            return Err(invalid("noise::NoiseView::shift_time", format!("shift {tau} is not a nonnegative multiple of dt = {}", self.dt)));
        }
        Ok(self.shift_slots(k as i64))
    }

    /// ξ(· + cΔx, ·) for a lattice vector c.
    pub fn shift_space(&self, lattice: &[i64]) -> Self {
        let mut v = *self;
        for (i, c) in lattice.iter().enumerate().take(self.base.dim) {
            v.shift[i] += c;
        }
        v
    }

    /// Time reversal about slot boundary `anchor`: view slot k reads slot anchor − 1 − k.
    pub fn reversed(&self, anchor: i64) -> Self {
        let mut v = *self;
        v.slot_offset = self.slot_offset + self.slot_sign * (anchor - 1);
        v.slot_sign = -self.slot_sign;
        v
    }

    /// ε^{(d+2)/2} ξ(εy + x₀, t₀ − ε²s) on a base box of resolution (εΔx', ε²Δt').
    ///
    /// `x0` is a base lattice vector and `t0` a base slot boundary. The returned view has
    /// Δx' = Δx/ε, Δt' = Δt/ε² and amplitude ε^{−(d+2)/2} per cell so that increments keep
    /// variance Δx'^d·Δt'.
    pub fn rescaled(base: &'a NoiseBox, eps: f64, x0: &[i64], t0: i64) -> Result<Self> {
        if !(eps > 0.0) {
            return Err(invalid("noise::NoiseView::rescaled", format!("eps = {eps} must be positive")));
        }
        let d = base.dim as i32;
        let mut v = base.view().shift_space(x0).reversed(t0);
        v.amp = eps.powf(-(d as f64 + 2.0) / 2.0);
        v.dx = base.dx / eps;
        v.dt = base.dt / (eps * eps);
        Ok(v)
    }

    #[inline]
    fn base_slot(&self, slot: i64) -> i64 {
        self.slot_offset + self.slot_sign * slot
    }

    /// Base cell that a view cell reads.
    pub fn map_cell(&self, cell: &Cell) -> Cell {
        let lattice = cell.lattice.iter().enumerate().map(|(i, c)| c + self.shift[i]).collect();
        Cell { lattice, slot: self.base_slot(cell.slot) }
    }

    /// Increment η of a view cell.
    pub fn noise_increment(&self, cell: &Cell) -> Result<f64> {
        const OP: &str = "noise::noise_increment";
        if cell.lattice.len() != self.base.dim {
            return Err(invalid(OP, "cell dimension mismatch"));
        }
        let b = self.map_cell(cell);
        if !self.base.contains(&b.lattice, b.slot) {
            return Err(Error::OutOfDomain { op: OP, msg: format!("cell {:?} slot {} maps outside the box", cell.lattice, cell.slot) });
        }
        Ok(self.amp * self.base.value(&b.lattice, b.slot))
    }

    #[inline]
    fn value_unchecked(&self, lattice: &[i64], slot: i64) -> f64 {
        let mut abs = [0i64; MAX_DIM];
        for i in 0..self.base.dim {
            abs[i] = lattice[i] + self.shift[i];
        }
        self.amp * self.base.value(&abs[..self.base.dim], self.base_slot(slot))
    }

    /// Checks that every cell of the lattice range [lo, hi] at `slot` exists in the base.
    fn check_range(&self, lo: &[i64], hi: &[i64], slot: i64, op: &'static str) -> Result<()> {
        let bs = self.base_slot(slot);
        if bs < 0 || bs >= self.base.n_slots {
            return Err(Error::OutOfDomain { op, msg: format!("time slot {slot} maps to base slot {bs} outside [0, {})", self.base.n_slots) });
        }
        for i in 0..self.base.dim {
            let m = self.base.max_index;
            if lo[i] + self.shift[i] < -m || hi[i] + self.shift[i] > m {
                return Err(Error::PathEscape { op, msg: format!("axis {i}: cells [{}, {}] outside ±{m}", lo[i], hi[i]) });
            }
        }
        Ok(())
    }
}

/// Σ_c φ(p − y_c)·η_c and Σ_c φ(p − y_c)²Δx^dΔt accumulated along a path.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LineIntegral {
    pub value: f64,
    pub self_variance: f64,
}

#[inline]
fn lattice_range(p: &[f64], r: f64, dx: f64, lo: &mut [i64], hi: &mut [i64]) {
    for i in 0..p.len() {
        lo[i] = ((p[i] - r) / dx).ceil() as i64;
        hi[i] = ((p[i] + r) / dx).floor() as i64;
    }
}

/// Visits every lattice point c with |c·Δx − p| < r, passing the squared distance.
#[inline]
fn for_cells_near(p: &[f64], r: f64, dx: f64, mut f: impl FnMut(&[i64], f64)) {
    let r2 = r * r;
    let d = p.len();
    if d == 3 {
        let inv = 1.0 / dx;
        let i0 = ((p[0] - r) * inv).ceil() as i64;
        let i1 = ((p[0] + r) * inv).floor() as i64;
        let mut idx = [0i64; 3];
        for i in i0..=i1 {
            let a = i as f64 * dx - p[0];
            let ra = r2 - a * a;
            if ra <= 0.0 {
                continue;
            }
            let sa = ra.sqrt();
            let j0 = ((p[1] - sa) * inv).ceil() as i64;
            let j1 = ((p[1] + sa) * inv).floor() as i64;
            for j in j0..=j1 {
                let b = j as f64 * dx - p[1];
                let rb = ra - b * b;
                if rb <= 0.0 {
                    continue;
                }
                let sb = rb.sqrt();
                let k0 = ((p[2] - sb) * inv).ceil() as i64;
                let k1 = ((p[2] + sb) * inv).floor() as i64;
                idx[0] = i;
                idx[1] = j;
                for k in k0..=k1 {
                    let c = k as f64 * dx - p[2];
                    let d2 = a * a + b * b + c * c;
                    if d2 < r2 {
                        idx[2] = k;
                        f(&idx, d2);
                    }
                }
            }
        }
    } else {
        let mut idx = [0i64; MAX_DIM];
        recurse(p, r2, dx, 0, 0.0, &mut idx, &mut f);
    }
}

fn recurse(p: &[f64], r2: f64, dx: f64, axis: usize, acc: f64, idx: &mut [i64; MAX_DIM], f: &mut impl FnMut(&[i64], f64)) {
    let d = p.len();
    let rem = r2 - acc;
    if rem <= 0.0 {
        return;
    }
    let s = rem.sqrt();
    let lo = ((p[axis] - s) / dx).ceil() as i64;
    let hi = ((p[axis] + s) / dx).floor() as i64;
    for c in lo..=hi {
        let a = c as f64 * dx - p[axis];
        let na = acc + a * a;
        if na >= r2 {
            continue;
        }
        idx[axis] = c;
        if axis + 1 == d {
            f(&idx[..d], na);
        } else {
            recurse(p, r2, dx, axis + 1, na, idx, f);
        }
    }
}

/// Dense per-slot cache of view increments over the bounding box of the cells a path set touches.
#[derive(Debug)]
pub struct DenseField {
    dim: usize,
    slots: Vec<SlotBlock>,
}

#[derive(Debug, Default)]
struct SlotBlock {
    lo: [i64; MAX_DIM],
    ext: [usize; MAX_DIM],
    data: Vec<f64>,
}

impl SlotBlock {
    #[inline]
    fn get(&self, lattice: &[i64]) -> f64 {
        let mut off = 0usize;
        for i in 0..lattice.len() {
            off = off * self.ext[i] + (lattice[i] - self.lo[i]) as usize;
        }
        self.data[off]
    }
}

/// Per-slot lattice bounding boxes, built incrementally from path points.
#[derive(Debug, Clone)]
pub struct SlotBoxes {
    dim: usize,
    lo: Vec<[i64; MAX_DIM]>,
    hi: Vec<[i64; MAX_DIM]>,
}

impl SlotBoxes {
    pub fn new(dim: usize, n_slots: usize) -> Self {
        SlotBoxes { dim, lo: vec![[i64::MAX; MAX_DIM]; n_slots], hi: vec![[i64::MIN; MAX_DIM]; n_slots] }
    }

    /// Adds the cells within r of the first `steps` points of a path (left endpoints).
    pub fn add_path(&mut self, points: &[f64], steps: usize, first_slot: usize, r: f64, dx: f64) {
        let d = self.dim;
        let mut lo = [0i64; MAX_DIM];
        let mut hi = [0i64; MAX_DIM];
        for k in 0..steps {
            lattice_range(&points[k * d..(k + 1) * d], r, dx, &mut lo, &mut hi);
            let s = first_slot + k;
            for i in 0..d {
                self.lo[s][i] = self.lo[s][i].min(lo[i]);
                self.hi[s][i] = self.hi[s][i].max(hi[i]);
            }
        }
    }

    pub fn merge(&mut self, other: &SlotBoxes) {
        for s in 0..self.lo.len() {
            for i in 0..self.dim {
                self.lo[s][i] = self.lo[s][i].min(other.lo[s][i]);
                self.hi[s][i] = self.hi[s][i].max(other.hi[s][i]);
            }
        }
    }

    /// Total number of cells the dense cache would hold.
    pub fn volume(&self) -> u64 {
        (0..self.lo.len())
            .map(|s| {
                if self.lo[s][0] > self.hi[s][0] {
                    0
                } else {
                    (0..self.dim).map(|i| (self.hi[s][i] - self.lo[s][i] + 1) as u64).product()
                }
            })
            .sum()
    }
}

impl DenseField {
    pub fn build(view: &NoiseView<'_>, boxes: &SlotBoxes) -> Result<Self> {
        const OP: &str = "noise::DenseField::build";
        let dim = view.dim();
        let slots: Vec<Result<SlotBlock>> = (0..boxes.lo.len())
            .into_par_iter()
            .map(|s| {
                let (lo, hi) = (boxes.lo[s], boxes.hi[s]);
                if lo[0] > hi[0] {
                    return Ok(SlotBlock::default());
                }
                view.check_range(&lo[..dim], &hi[..dim], s as i64, OP)?;
                let mut ext = [0usize; MAX_DIM];
                for i in 0..dim {
                    ext[i] = (hi[i] - lo[i] + 1) as usize;
                }
                let total: usize = ext[..dim].iter().product();
                let mut data = Vec::with_capacity(total);
                let mut idx = lo;
                for _ in 0..total {
                    data.push(view.value_unchecked(&idx[..dim], s as i64));
                    for i in (0..dim).rev() {
                        idx[i] += 1;
                        if idx[i] <= hi[i] {
                            break;
                        }
                        idx[i] = lo[i];
                    }
                }
                Ok(SlotBlock { lo, ext, data })
            })
            .collect();
        Ok(DenseField { dim, slots: slots.into_iter().collect::<Result<_>>()? })
    }
}

/// Where cell values come from during a line integral.
#[derive(Debug)]
pub enum NoiseField<'a> {
    Virtual(NoiseView<'a>),
    Dense(NoiseView<'a>, DenseField),
}

impl<'a> NoiseField<'a> {
    pub fn view(&self) -> &NoiseView<'a> {
        match self {
            NoiseField::Virtual(v) | NoiseField::Dense(v, _) => v,
        }
    }

    /// Discrete ∫ξ₁(B(s), s)ds over the first `steps` left endpoints of `points`, starting at view
    /// slot `first_slot`. Returns the running integrals at each requested checkpoint (step counts).
    pub fn line_integral_checkpoints(
        &self,
        spec: &KernelSpec,
        points: &[f64],
        first_slot: usize,
        checkpoints: &[usize],
        mut touched: Option<&mut HashSet<Cell>>,
    ) -> Result<Vec<LineIntegral>> {
        const OP: &str = "noise::mollified_line_integral";
        if !spec.has_phi() {
            return Err(Error::UnsupportedMode { op: OP, msg: "noise mollification needs φ".into() });
        }
        let view = self.view();
        let d = view.dim();
        if spec.dim() != d {
            return Err(invalid(OP, "kernel and noise dimensions differ"));
        }
        let steps = checkpoints.iter().copied().max().unwrap_or(0);
        if points.len() < steps * d {
            return Err(invalid(OP, "path shorter than requested horizon"));
        }
        let r = spec.support_radius();
        let dx = view.dx();
        let cell_var = dx.powi(d as i32) * view.dt();
        let mut out = Vec::with_capacity(checkpoints.len());
        let mut acc = LineIntegral::default();
        let mut lo = [0i64; MAX_DIM];
        let mut hi = [0i64; MAX_DIM];
        for k in 0..=steps {
            for &c in checkpoints {
                if c == k {
                    out.push(acc);
                }
            }
            if k == steps {
                break;
            }
            let p = &points[k * d..(k + 1) * d];
            let slot = (first_slot + k) as i64;
            let mut sum = 0.0;
            let mut sq = 0.0;
            match self {
                NoiseField::Virtual(v) => {
                    lattice_range(p, r, dx, &mut lo, &mut hi);
                    v.check_range(&lo[..d], &hi[..d], slot, OP)?;
                    for_cells_near(p, r, dx, |c, d2| {
                        let w = spec.phi_of_r2(d2);
                        sum += w * v.value_unchecked(c, slot);
                        sq += w * w;
                        if let Some(t) = touched.as_deref_mut() {
                            t.insert(v.map_cell(&Cell { lattice: c.to_vec(), slot }));
                        }
                    });
                }
                NoiseField::Dense(v, field) => {
                    let blk = field.slots.get(slot as usize).ok_or_else(|| Error::OutOfDomain { op: OP, msg: format!("slot {slot} not cached") })?;
                    lattice_range(p, r, dx, &mut lo, &mut hi);
                    if blk.data.is_empty() || (0..d).any(|i| lo[i] < blk.lo[i] || hi[i] >= blk.lo[i] + blk.ext[i] as i64) {
                        return Err(Error::PathEscape { op: OP, msg: format!("path left the cached box at slot {slot}") });
                    }
                    for_cells_near(p, r, dx, |c, d2| {
                        let w = spec.phi_of_r2(d2);
                        sum += w * blk.get(c);
                        sq += w * w;
                        if let Some(t) = touched.as_deref_mut() {
                            t.insert(v.map_cell(&Cell { lattice: c.to_vec(), slot }));
                        }
                    });
                    debug_assert_eq!(field.dim, d);
                }
            }
            acc.value += sum;
            acc.self_variance += sq * cell_var;
        }
        Ok(out)
    }
}

/// Σ_k Σ_c φ(B(t_k) − y_c)·η_{c,k} along the first `steps` points of a path starting at slot 0.
pub fn mollified_line_integral(view: &NoiseView<'_>, spec: &KernelSpec, points: &[f64], steps: usize) -> Result<LineIntegral> {
    let f = NoiseField::Virtual(*view);
    Ok(f.line_integral_checkpoints(spec, points, 0, &[steps], None)?[0])
}

/// Σ_k Δt·Σ_c Δx^d φ(p¹_k − y_c)φ(p²_k − y_c): the exact noise covariance of two line integrals.
pub fn discrete_cross_covariance(spec: &KernelSpec, dx: f64, dt: f64, p1: &[f64], p2: &[f64], steps: usize) -> f64 {
    let d = spec.dim();
    let r = spec.support_radius();
    let mut acc = 0.0;
    for k in 0..steps {
        let a = &p1[k * d..(k + 1) * d];
        let b = &p2[k * d..(k + 1) * d];
        for_cells_near(a, r, dx, |c, d2| {
            let wb: f64 = (0..d).map(|i| (c[i] as f64 * dx - b[i]).powi(2)).sum();
            acc += spec.phi_of_r2(d2) * spec.phi_of_r2(wb);
        });
    }
    acc * dx.powi(d as i32) * dt
}
