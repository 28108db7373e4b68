//! Dyadic geometry on `[0,1)^2` and the exact Haar calculus built on it.
//!
//! Everything in the crate runs on a fixed grid of `2^L x 2^L` cells. A
//! [`GridFunction`] is constant on cells, so all integrals, averages and
//! pairings below are finite sums and every identity in the higher modules
//! can be asserted to machine precision.
//!
//! The Haar system is the *extended* tensor system: per axis, the constant
//! function `1` on `[0,1)` (the "top" slot) together with one cancellative
//! Haar function `h_I` for every active interval `I` (an interval is active
//! when its children are still representable, i.e. `level <= L-1`). This is
//! an orthonormal basis of the cell space, so analysis/synthesis round-trips
//! exactly and Plancherel holds as an equality.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Hard cap on the grid depth; `4^L` cells must stay desk-sized.
pub const MAX_DEPTH: u32 = 12;

/// Which parameter (tensor factor) an operation acts on.
#[derive(Copy, Clone, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
pub enum Axis {
    /// The `x_1` direction (rows of the value grid).
    #[serde(rename = "1")]
    One,
    /// The `x_2` direction (columns of the value grid).
    #[serde(rename = "2")]
    Two,
}

impl Axis {
    pub fn other(self) -> Axis {
        match self {
            Axis::One => Axis::Two,
            Axis::Two => Axis::One,
        }
    }
}

/// A dyadic subinterval of `[0,1)`: `[index 2^-level, (index+1) 2^-level)`.
#[derive(Copy, Clone, PartialEq, Eq, Hash, Debug, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DyadicInterval {
    level: u32,
    index: u64,
}

impl DyadicInterval {
    pub fn new(level: u32, index: u64) -> Self {
        assert!(level <= 63, "interval level out of range");
        assert!(index < (1u64 << level), "interval index {index} out of range at level {level}");
        DyadicInterval { level, index }
    }

    /// The whole of `[0,1)`.
    pub fn unit() -> Self {
        DyadicInterval { level: 0, index: 0 }
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn index(&self) -> u64 {
        self.index
    }

    /// `|I| = 2^-level`.
    pub fn length(&self) -> f64 {
        1.0 / (1u64 << self.level) as f64
    }

    pub fn start(&self) -> f64 {
        self.index as f64 * self.length()
    }

    pub fn end(&self) -> f64 {
        (self.index + 1) as f64 * self.length()
    }

    pub fn midpoint(&self) -> f64 {
        (self.index as f64 + 0.5) * self.length()
    }

    /// Children are representable on a depth-`L` grid iff `level <= L-1`.
    pub fn is_active(&self, depth: u32) -> bool {
        self.level < depth
    }

    pub fn left_child(&self) -> Self {
        DyadicInterval::new(self.level + 1, self.index << 1)
    }

    pub fn right_child(&self) -> Self {
        DyadicInterval::new(self.level + 1, (self.index << 1) | 1)
    }

    pub fn children(&self) -> [Self; 2] {
        [self.left_child(), self.right_child()]
    }

    /// `I^(k)`: the ancestor `k` generations up; `None` when `level < k`.
    pub fn ancestor(&self, k: u32) -> Option<Self> {
        if self.level < k {
            None
        } else {
            Some(DyadicInterval::new(self.level - k, self.index >> k))
        }
    }

    pub fn parent(&self) -> Option<Self> {
        self.ancestor(1)
    }

    /// Dyadic containment `other ⊆ self`.
    pub fn contains(&self, other: &DyadicInterval) -> bool {
        other.level >= self.level && (other.index >> (other.level - self.level)) == self.index
    }

    /// Range of depth-`L` cell indices covered by the interval.
    pub fn cell_range(&self, depth: u32) -> std::ops::Range<usize> {
        assert!(self.level <= depth, "interval finer than the grid");
        let width = 1usize << (depth - self.level);
        let start = (self.index as usize) << (depth - self.level);
        start..start + width
    }

    /// All intervals at a given level, in index order.
    pub fn at_level(level: u32) -> impl Iterator<Item = DyadicInterval> {
        (0..(1u64 << level)).map(move |index| DyadicInterval { level, index })
    }

    /// All intervals of levels `0..=max_level`, coarse to fine.
    pub fn all(max_level: u32) -> impl Iterator<Item = DyadicInterval> {
        (0..=max_level).flat_map(DyadicInterval::at_level)
    }
}

/// A dyadic rectangle `I x J` of `[0,1)^2`.
#[derive(Copy, Clone, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
pub struct DyadicRectangle {
    pub ix: DyadicInterval,
    pub jy: DyadicInterval,
}

impl DyadicRectangle {
    pub fn new(ix: DyadicInterval, jy: DyadicInterval) -> Self {
        DyadicRectangle { ix, jy }
    }

    pub fn unit() -> Self {
        DyadicRectangle::new(DyadicInterval::unit(), DyadicInterval::unit())
    }

    /// `|R| = |I| |J|`.
    pub fn area(&self) -> f64 {
        self.ix.length() * self.jy.length()
    }

    pub fn contains(&self, other: &DyadicRectangle) -> bool {
        self.ix.contains(&other.ix) && self.jy.contains(&other.jy)
    }

    /// Both factors active: the cancellative Haar `h_I ⊗ h_J` exists.
    pub fn is_active(&self, depth: u32) -> bool {
        self.ix.is_active(depth) && self.jy.is_active(depth)
    }

    /// All rectangles with factor levels in `0..=max_level` each.
    pub fn all(max_level: u32) -> impl Iterator<Item = DyadicRectangle> {
        DyadicInterval::all(max_level).flat_map(move |ix| {
            DyadicInterval::all(max_level).map(move |jy| DyadicRectangle { ix, jy })
        })
    }

    /// All fully active rectangles (both levels `<= depth-1`).
    pub fn all_active(depth: u32) -> impl Iterator<Item = DyadicRectangle> {
        DyadicRectangle::all(depth.saturating_sub(1))
    }
}

/// A real function on `[0,1)`, constant on depth-`L` dyadic cells.
#[derive(Clone, PartialEq, Debug)]
pub struct LineFunction {
    depth: u32,
    values: Vec<f64>,
}

impl LineFunction {
    pub fn new(depth: u32, values: Vec<f64>) -> Self {
        assert!(depth <= MAX_DEPTH);
        assert_eq!(values.len(), 1usize << depth, "line value count must be 2^depth");
        LineFunction { depth, values }
    }

    pub fn zeros(depth: u32) -> Self {
        LineFunction::new(depth, vec![0.0; 1usize << depth])
    }

    pub fn constant(depth: u32, c: f64) -> Self {
        LineFunction::new(depth, vec![c; 1usize << depth])
    }

    /// Indicator of `I`, scaled by `scale`.
    pub fn indicator(interval: &DyadicInterval, depth: u32, scale: f64) -> Self {
        let mut out = LineFunction::zeros(depth);
        for c in interval.cell_range(depth) {
            out.values[c] = scale;
        }
        out
    }

    pub fn depth(&self) -> u32 {
        self.depth
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Cell measure `2^-L`.
    pub fn cell_len(&self) -> f64 {
        1.0 / self.values.len() as f64
    }

    /// `∫_0^1 u v`.
    pub fn inner(&self, other: &LineFunction) -> f64 {
        assert_eq!(self.depth, other.depth, "depth mismatch");
        let s: f64 = self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum();
        s * self.cell_len()
    }

    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.cell_len()
    }

    pub fn l2_norm(&self) -> f64 {
        self.inner(self).sqrt()
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `⟨u⟩_I`.
    pub fn average_over(&self, interval: &DyadicInterval) -> f64 {
        let range = interval.cell_range(self.depth);
        let n = range.len();
        self.values[range].iter().sum::<f64>() / n as f64
    }

    pub fn scale(&self, c: f64) -> LineFunction {
        LineFunction::new(self.depth, self.values.iter().map(|v| c * v).collect())
    }

    pub fn add(&self, other: &LineFunction) -> LineFunction {
        assert_eq!(self.depth, other.depth);
        LineFunction::new(
            self.depth,
            self.values.iter().zip(&other.values).map(|(a, b)| a + b).collect(),
        )
    }

    pub fn sub(&self, other: &LineFunction) -> LineFunction {
        assert_eq!(self.depth, other.depth);
        LineFunction::new(
            self.depth,
            self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect(),
        )
    }

    /// Martingale difference `Δ_I u` as a function on the full line.
    pub fn martingale_diff(&self, interval: &DyadicInterval) -> Result<LineFunction> {
        if !interval.is_active(self.depth) {
            return Err(Error::InactiveInterval { level: interval.level(), depth: self.depth });
        }
        let mut out = LineFunction::zeros(self.depth);
        let parent_avg = self.average_over(interval);
        for child in interval.children() {
            let child_avg = self.average_over(&child);
            for c in child.cell_range(self.depth) {
                out.values[c] = child_avg - parent_avg;
            }
        }
        Ok(out)
    }

    /// Dyadic maximal function over intervals of all levels `0..=L`.
    pub fn maximal(&self) -> LineFunction {
        let n = self.values.len();
        let mut best: Vec<f64> = self.values.iter().map(|v| v.abs()).collect();
        let mut avg: Vec<f64> = best.clone();
        let mut width = n;
        while width > 1 {
            width /= 2;
            let next: Vec<f64> = (0..width).map(|k| (avg[2 * k] + avg[2 * k + 1]) / 2.0).collect();
            for (k, value) in next.iter().enumerate() {
                let span = n / width;
                for cell in k * span..(k + 1) * span {
                    if *value > best[cell] {
                        best[cell] = *value;
                    }
                }
            }
            avg = next;
        }
        LineFunction::new(self.depth, best)
    }
}

/// Cancellative vs non-cancellative Haar function.
#[derive(Copy, Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub enum HaarKind {
    /// `|I|^{-1/2} (1_{I_l} - 1_{I_r})`: mean zero, unit `L^2` norm.
    Cancellative,
    /// `|I|^{-1/2} 1_I`: the normalised indicator.
    NonCancellative,
}

/// The Haar function `h_I` sampled on a depth-`L` grid.
///
/// Left-minus-right sign convention for the cancellative kind.
pub fn haar(interval: &DyadicInterval, kind: HaarKind, depth: u32) -> Result<LineFunction> {
    if interval.level() > depth {
        return Err(Error::DepthMismatch(interval.level(), depth));
    }
    let scale = (1u64 << interval.level()) as f64; // 1/|I|
    match kind {
        HaarKind::NonCancellative => Ok(LineFunction::indicator(interval, depth, scale.sqrt())),
        HaarKind::Cancellative => {
            if !interval.is_active(depth) {
                return Err(Error::InactiveInterval { level: interval.level(), depth });
            }
            let mut out = LineFunction::zeros(depth);
            let v = scale.sqrt();
            for c in interval.left_child().cell_range(depth) {
                out.values_mut()[c] = v;
            }
            for c in interval.right_child().cell_range(depth) {
                out.values_mut()[c] = -v;
            }
            Ok(out)
        }
    }
}

/// A real function on `[0,1)^2`, constant on depth-`L` cells.
///
/// Values are stored row-major: `values[i * 2^L + j]` is the value on the
/// cell `[i 2^-L, (i+1) 2^-L) x [j 2^-L, (j+1) 2^-L)`; `i` indexes `x_1`.
#[derive(Clone, PartialEq, Debug)]
pub struct GridFunction {
    depth: u32,
    values: Vec<f64>,
}

impl GridFunction {
    pub fn new(depth: u32, values: Vec<f64>) -> Self {
        assert!(depth >= 1 && depth <= MAX_DEPTH, "depth {depth} out of range");
        let n = 1usize << depth;
        assert_eq!(values.len(), n * n, "grid value count must be 4^depth");
        GridFunction { depth, values }
    }

    pub fn zeros(depth: u32) -> Self {
        let n = 1usize << depth;
        GridFunction::new(depth, vec![0.0; n * n])
    }

    pub fn constant(depth: u32, c: f64) -> Self {
        let n = 1usize << depth;
        GridFunction::new(depth, vec![c; n * n])
    }

    pub fn from_fn(depth: u32, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let n = 1usize << depth;
        let mut values = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                values.push(f(i, j));
            }
        }
        GridFunction::new(depth, values)
    }

    /// `u ⊗ v`.
    pub fn tensor(u: &LineFunction, v: &LineFunction) -> Self {
        assert_eq!(u.depth(), v.depth());
        GridFunction::from_fn(u.depth(), |i, j| u.values()[i] * v.values()[j])
    }

    pub fn depth(&self) -> u32 {
        self.depth
    }

    /// Cells per side, `2^L`.
    pub fn side(&self) -> usize {
        1usize << self.depth
    }

    pub fn cell_count(&self) -> usize {
        self.values.len()
    }

    /// Cell measure `4^-L`.
    pub fn cell_area(&self) -> f64 {
        1.0 / self.values.len() as f64
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.side() + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let n = self.side();
        self.values[i * n + j] = v;
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn check_depth(&self, other: &GridFunction) -> Result<()> {
        if self.depth != other.depth {
            return Err(Error::DepthMismatch(self.depth, other.depth));
        }
        Ok(())
    }

    /// `∬ f g`.
    pub fn inner(&self, other: &GridFunction) -> f64 {
        assert_eq!(self.depth, other.depth, "depth mismatch");
        let s: f64 = self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum();
        s * self.cell_area()
    }

    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.cell_area()
    }

    pub fn l2_norm(&self) -> f64 {
        self.inner(self).sqrt()
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn scale(&self, c: f64) -> GridFunction {
        GridFunction::new(self.depth, self.values.iter().map(|v| c * v).collect())
    }

    pub fn add(&self, other: &GridFunction) -> GridFunction {
        assert_eq!(self.depth, other.depth);
        GridFunction::new(
            self.depth,
            self.values.iter().zip(&other.values).map(|(a, b)| a + b).collect(),
        )
    }

    pub fn sub(&self, other: &GridFunction) -> GridFunction {
        assert_eq!(self.depth, other.depth);
        GridFunction::new(
            self.depth,
            self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect(),
        )
    }

    /// Pointwise product.
    pub fn mul(&self, other: &GridFunction) -> GridFunction {
        assert_eq!(self.depth, other.depth);
        GridFunction::new(
            self.depth,
            self.values.iter().zip(&other.values).map(|(a, b)| a * b).collect(),
        )
    }

    pub fn add_assign_scaled(&mut self, c: f64, other: &GridFunction) {
        assert_eq!(self.depth, other.depth);
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += c * b;
        }
    }

    /// Accumulate `c * u(x_1) v(x_2)`.
    pub fn add_assign_tensor(&mut self, c: f64, u: &LineFunction, v: &LineFunction) {
        let n = self.side();
        assert_eq!(u.len(), n);
        assert_eq!(v.len(), n);
        for i in 0..n {
            let cu = c * u.values()[i];
            if cu == 0.0 {
                continue;
            }
            let row = &mut self.values[i * n..(i + 1) * n];
            for (a, b) in row.iter_mut().zip(v.values()) {
                *a += cu * b;
            }
        }
    }

    /// `∫_R f`.
    pub fn integral_over(&self, rect: &DyadicRectangle) -> f64 {
        let n = self.side();
        let ri = rect.ix.cell_range(self.depth);
        let rj = rect.jy.cell_range(self.depth);
        let mut s = 0.0;
        for i in ri {
            for j in rj.clone() {
                s += self.values[i * n + j];
            }
        }
        s * self.cell_area()
    }

    /// `⟨f⟩_R`.
    pub fn average_over(&self, rect: &DyadicRectangle) -> f64 {
        self.integral_over(rect) / rect.area()
    }

    /// `⟨f, h⟩_axis`: integrate one variable against `h`, leaving a function
    /// of the other variable.
    pub fn pair_axis(&self, h: &LineFunction, axis: Axis) -> Result<LineFunction> {
        if h.depth() != self.depth {
            return Err(Error::DepthMismatch(self.depth, h.depth()));
        }
        let n = self.side();
        let dx = 1.0 / n as f64;
        let mut out = LineFunction::zeros(self.depth);
        match axis {
            Axis::One => {
                for i in 0..n {
                    let hv = h.values()[i];
                    if hv == 0.0 {
                        continue;
                    }
                    let row = &self.values[i * n..(i + 1) * n];
                    for (o, f) in out.values_mut().iter_mut().zip(row) {
                        *o += hv * f;
                    }
                }
            }
            Axis::Two => {
                for i in 0..n {
                    let row = &self.values[i * n..(i + 1) * n];
                    let s: f64 = row.iter().zip(h.values()).map(|(f, hv)| f * hv).sum();
                    out.values_mut()[i] = s;
                }
            }
        }
        for o in out.values_mut() {
            *o *= dx;
        }
        Ok(out)
    }

    /// Replace each axis slice by its level-`level` conditional expectation.
    pub fn axis_average(&self, axis: Axis, level: u32) -> GridFunction {
        assert!(level <= self.depth);
        let n = self.side();
        let span = 1usize << (self.depth - level);
        let mut out = GridFunction::zeros(self.depth);
        match axis {
            Axis::One => {
                for block in 0..(n / span) {
                    for j in 0..n {
                        let mut s = 0.0;
                        for i in block * span..(block + 1) * span {
                            s += self.values[i * n + j];
                        }
                        let avg = s / span as f64;
                        for i in block * span..(block + 1) * span {
                            out.values[i * n + j] = avg;
                        }
                    }
                }
            }
            Axis::Two => {
                for i in 0..n {
                    let row = &self.values[i * n..(i + 1) * n];
                    let out_row = &mut out.values[i * n..(i + 1) * n];
                    for block in 0..(n / span) {
                        let s: f64 = row[block * span..(block + 1) * span].iter().sum();
                        let avg = s / span as f64;
                        for v in &mut out_row[block * span..(block + 1) * span] {
                            *v = avg;
                        }
                    }
                }
            }
        }
        out
    }
}

/// Conditional expectations of `f` along one axis at every level `0..=L`.
///
/// `levels[l]` is `f` averaged to level `l` along the axis (full resolution
/// in the other variable). Built by pairwise halving, so each entry carries
/// only `O(L)` rounding steps.
pub struct AxisPyramid {
    pub axis: Axis,
    pub levels: Vec<GridFunction>,
}

impl AxisPyramid {
    pub fn new(f: &GridFunction, axis: Axis) -> Self {
        let depth = f.depth();
        let mut stack = Vec::with_capacity(depth as usize + 1);
        let mut current = f.clone();
        stack.push(current.clone());
        for level in (0..depth).rev() {
            current = halve_axis(&current, axis, level);
            stack.push(current.clone());
        }
        stack.reverse();
        AxisPyramid { axis, levels: stack }
    }

    /// `E_l f`: conditional expectation at level `l`.
    pub fn expectation(&self, level: u32) -> &GridFunction {
        &self.levels[level as usize]
    }

    /// `D_l f = E_{l+1} f - E_l f`: the sum of `Δ_I` over level-`l` intervals.
    pub fn difference(&self, level: u32) -> GridFunction {
        self.levels[level as usize + 1].sub(&self.levels[level as usize])
    }
}

/// One halving step: average level `level+1` blocks into level `level`.
fn halve_axis(f: &GridFunction, axis: Axis, level: u32) -> GridFunction {
    // `f` is constant on level+1 blocks along the axis; averaging adjacent
    // block pairs is exact up to one rounding per pair.
    f.axis_average(axis, level)
}

/// Averages of `f` over every dyadic rectangle, O(1) lookup per rectangle.
pub struct RectAverages {
    depth: u32,
    /// `grids[l1][l2]` has shape `2^l1 x 2^l2`.
    grids: Vec<Vec<Vec<f64>>>,
}

impl RectAverages {
    pub fn new(f: &GridFunction) -> Self {
        let depth = f.depth() as usize;
        let n = f.side();
        // Start with the finest grid, halve along axis 2, then axis 1.
        let mut rows: Vec<Vec<f64>> = Vec::with_capacity(depth + 1);
        let mut fin = f.values().to_vec();
        rows.push(fin.clone());
        let mut width = n;
        while width > 1 {
            width /= 2;
            let mut next = vec![0.0; n * width];
            for i in 0..n {
                for k in 0..width {
                    next[i * width + k] =
                        (fin[i * 2 * width + 2 * k] + fin[i * 2 * width + 2 * k + 1]) / 2.0;
                }
            }
            rows.push(next.clone());
            fin = next;
        }
        rows.reverse(); // rows[l2] is n x 2^l2
        let mut grids: Vec<Vec<Vec<f64>>> = Vec::with_capacity(depth + 1);
        let mut col_stacks: Vec<Vec<Vec<f64>>> = Vec::with_capacity(depth + 1);
        for (l2, row_grid) in rows.iter().enumerate() {
            let w = 1usize << l2;
            let mut stack = Vec::with_capacity(depth + 1);
            let mut cur = row_grid.clone();
            stack.push(cur.clone());
            let mut height = n;
            while height > 1 {
                height /= 2;
                let mut next = vec![0.0; height * w];
                for i in 0..height {
                    for k in 0..w {
                        next[i * w + k] = (cur[2 * i * w + k] + cur[(2 * i + 1) * w + k]) / 2.0;
                    }
                }
                stack.push(next.clone());
                cur = next;
            }
            stack.reverse(); // stack[l1] is 2^l1 x 2^l2
            col_stacks.push(stack);
        }
        for l1 in 0..=depth {
            let mut per_l2 = Vec::with_capacity(depth + 1);
            for stacks in col_stacks.iter() {
                per_l2.push(stacks[l1].clone());
            }
            grids.push(per_l2);
        }
        RectAverages { depth: depth as u32, grids }
    }

    pub fn depth(&self) -> u32 {
        self.depth
    }

    /// `⟨f⟩_R`.
    pub fn average(&self, rect: &DyadicRectangle) -> f64 {
        let l1 = rect.ix.level() as usize;
        let l2 = rect.jy.level() as usize;
        let w = 1usize << l2;
        self.grids[l1][l2][rect.ix.index() as usize * w + rect.jy.index() as usize]
    }

    /// `∫_R f`.
    pub fn integral(&self, rect: &DyadicRectangle) -> f64 {
        self.average(rect) * rect.area()
    }

    /// Raw level grid (`2^l1 x 2^l2`, row-major), for exhaustive scans.
    pub fn level_grid(&self, l1: u32, l2: u32) -> &[f64] {
        &self.grids[l1 as usize][l2 as usize]
    }
}

/// Index into the extended Haar system of one axis: the constant-`1` top
/// slot, or the cancellative Haar function of an active interval.
#[derive(Copy, Clone, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
pub enum ExtendedIndex {
    Top,
    Interval(DyadicInterval),
}

impl ExtendedIndex {
    /// Flat position in transform layout: `Top -> 0`, `(l,k) -> 2^l + k`.
    pub fn flat(&self) -> usize {
        match self {
            ExtendedIndex::Top => 0,
            ExtendedIndex::Interval(iv) => (1usize << iv.level()) + iv.index() as usize,
        }
    }

    pub fn from_flat(flat: usize) -> Self {
        if flat == 0 {
            ExtendedIndex::Top
        } else {
            let level = usize::BITS - 1 - flat.leading_zeros();
            ExtendedIndex::Interval(DyadicInterval::new(level, (flat - (1usize << level)) as u64))
        }
    }

    /// The basis function this index refers to.
    pub fn basis_line(&self, depth: u32) -> LineFunction {
        match self {
            ExtendedIndex::Top => LineFunction::constant(depth, 1.0),
            ExtendedIndex::Interval(iv) => {
                haar(iv, HaarKind::Cancellative, depth).expect("active by construction")
            }
        }
    }

    /// All `2^depth` extended indices for a depth-`L` axis.
    pub fn all(depth: u32) -> impl Iterator<Item = ExtendedIndex> {
        (0..(1usize << depth)).map(ExtendedIndex::from_flat)
    }
}

/// Coefficients of a [`GridFunction`] against the extended tensor Haar
/// system. Complete and orthonormal: round trips are exact and
/// `‖f‖_2^2 = Σ coeff^2`.
#[derive(Clone, PartialEq, Debug)]
pub struct HaarSpectrum {
    depth: u32,
    /// Flat layout `coeff[flat(alpha) * 2^L + flat(beta)]`.
    coeff: Vec<f64>,
}

/// Forward extended Haar transform of one line of values (in place layout:
/// `out[0]` is the top coefficient, `out[2^l + k]` the Haar coefficient).
fn haar_forward_line(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut out = vec![0.0; n];
    let mut avg = values.to_vec();
    let mut width = n;
    let mut level = (n as f64).log2() as u32;
    while width > 1 {
        width /= 2;
        level -= 1;
        let mut next = vec![0.0; width];
        let interval_len = 1.0 / width as f64; // |I| at this level
        let half_sqrt = interval_len.sqrt() / 2.0;
        for k in 0..width {
            let left = avg[2 * k];
            let right = avg[2 * k + 1];
            next[k] = (left + right) / 2.0;
            out[width + k] = (left - right) * half_sqrt;
        }
        avg = next;
    }
    debug_assert_eq!(level, 0);
    out[0] = avg[0];
    out
}

/// Inverse of [`haar_forward_line`].
fn haar_inverse_line(coeff: &[f64]) -> Vec<f64> {
    let n = coeff.len();
    let mut values = vec![coeff[0]];
    let mut width = 1;
    while width < n {
        let mut next = vec![0.0; 2 * width];
        let scale = (width as f64).sqrt(); // |I|^{-1/2} at this level
        for k in 0..width {
            let c = coeff[width + k] * scale;
            next[2 * k] = values[k] + c;
            next[2 * k + 1] = values[k] - c;
        }
        values = next;
        width *= 2;
    }
    values
}

impl HaarSpectrum {
    pub fn zeros(depth: u32) -> Self {
        let n = 1usize << depth;
        HaarSpectrum { depth, coeff: vec![0.0; n * n] }
    }

    pub fn depth(&self) -> u32 {
        self.depth
    }

    pub fn get(&self, alpha: ExtendedIndex, beta: ExtendedIndex) -> f64 {
        self.coeff[alpha.flat() * (1usize << self.depth) + beta.flat()]
    }

    pub fn set(&mut self, alpha: ExtendedIndex, beta: ExtendedIndex, v: f64) {
        let n = 1usize << self.depth;
        self.coeff[alpha.flat() * n + beta.flat()] = v;
    }

    pub fn add(&mut self, alpha: ExtendedIndex, beta: ExtendedIndex, v: f64) {
        let n = 1usize << self.depth;
        self.coeff[alpha.flat() * n + beta.flat()] += v;
    }

    /// `Σ coeff^2` over the whole extended system.
    pub fn sum_sq(&self) -> f64 {
        self.coeff.iter().map(|c| c * c).sum()
    }

    /// Entries over both-cancellative slots only.
    pub fn cancellative_entries(&self) -> impl Iterator<Item = (DyadicInterval, DyadicInterval, f64)> + '_ {
        let n = 1usize << self.depth;
        (1..n).flat_map(move |a| {
            (1..n).map(move |b| {
                let (ia, ib) = (ExtendedIndex::from_flat(a), ExtendedIndex::from_flat(b));
                match (ia, ib) {
                    (ExtendedIndex::Interval(i), ExtendedIndex::Interval(j)) => {
                        (i, j, self.coeff[a * n + b])
                    }
                    _ => unreachable!(),
                }
            })
        })
    }

    /// Zero out everything except the both-cancellative block.
    pub fn keep_cancellative(&mut self) {
        let n = 1usize << self.depth;
        for a in 0..n {
            for b in 0..n {
                if a == 0 || b == 0 {
                    self.coeff[a * n + b] = 0.0;
                }
            }
        }
    }
}

/// Coefficients of `f` against the extended tensor Haar system.
pub fn analyze(f: &GridFunction) -> HaarSpectrum {
    let n = f.side();
    let mut rows = vec![0.0; n * n];
    // Transform along axis 2 (each x1-row), then along axis 1 (each column).
    for i in 0..n {
        let t = haar_forward_line(&f.values()[i * n..(i + 1) * n]);
        rows[i * n..(i + 1) * n].copy_from_slice(&t);
    }
    let mut coeff = vec![0.0; n * n];
    let mut col = vec![0.0; n];
    for j in 0..n {
        for i in 0..n {
            col[i] = rows[i * n + j];
        }
        let t = haar_forward_line(&col);
        for a in 0..n {
            coeff[a * n + j] = t[a];
        }
    }
    HaarSpectrum { depth: f.depth(), coeff }
}

/// Exact inverse of [`analyze`].
pub fn synthesize(s: &HaarSpectrum) -> GridFunction {
    let n = 1usize << s.depth;
    let mut rows = vec![0.0; n * n];
    let mut col = vec![0.0; n];
    for j in 0..n {
        for a in 0..n {
            col[a] = s.coeff[a * n + j];
        }
        let t = haar_inverse_line(&col);
        for i in 0..n {
            rows[i * n + j] = t[i];
        }
    }
    let mut values = vec![0.0; n * n];
    for i in 0..n {
        let t = haar_inverse_line(&rows[i * n..(i + 1) * n]);
        values[i * n..(i + 1) * n].copy_from_slice(&t);
    }
    GridFunction::new(s.depth, values)
}

/// Linear projections of the martingale calculus.
#[derive(Copy, Clone, PartialEq, Debug)]
pub enum Projection {
    /// `Δ_I^1 f`.
    MartingaleDiff1(DyadicInterval),
    /// `Δ_J^2 f`.
    MartingaleDiff2(DyadicInterval),
    /// `Δ_{I x J} f = Δ_I^1 Δ_J^2 f`.
    MartingaleDiffRect(DyadicRectangle),
    /// `E_I^1 f = ⟨f⟩_{I,1} 1_I` in parameter 1.
    Average1(DyadicInterval),
    /// `E_J^2 f`.
    Average2(DyadicInterval),
    /// `E_{I x J} f = ⟨f⟩_{I x J} 1_{I x J}`.
    AverageRect(DyadicRectangle),
    /// Block `Δ_{K,i}^1 f`: sum of `Δ_I^1` over `I` with `I^(i) = K`.
    Block1(DyadicInterval, u32),
    /// Block `Δ_{V,j}^2 f`.
    Block2(DyadicInterval, u32),
    /// Block `Δ_{K x V}^{i,j} f`.
    BlockRect(DyadicRectangle, u32, u32),
}

fn restrict_axis(f: &GridFunction, interval: &DyadicInterval, axis: Axis) -> GridFunction {
    let n = f.side();
    let mut out = GridFunction::zeros(f.depth());
    let range = interval.cell_range(f.depth());
    match axis {
        Axis::One => {
            for i in range {
                let src = &f.values()[i * n..(i + 1) * n];
                out.values_mut()[i * n..(i + 1) * n].copy_from_slice(src);
            }
        }
        Axis::Two => {
            for i in 0..n {
                for j in range.clone() {
                    out.values_mut()[i * n + j] = f.values()[i * n + j];
                }
            }
        }
    }
    out
}

fn diff_axis_at(f: &GridFunction, interval: &DyadicInterval, axis: Axis, depth: u32) -> Result<GridFunction> {
    if !interval.is_active(depth) {
        return Err(Error::InactiveInterval { level: interval.level(), depth });
    }
    let fine = f.axis_average(axis, interval.level() + 1);
    let coarse = f.axis_average(axis, interval.level());
    Ok(restrict_axis(&fine.sub(&coarse), interval, axis))
}

fn avg_axis_at(f: &GridFunction, interval: &DyadicInterval, axis: Axis, depth: u32) -> Result<GridFunction> {
    if interval.level() > depth {
        return Err(Error::DepthMismatch(interval.level(), depth));
    }
    let coarse = f.axis_average(axis, interval.level());
    Ok(restrict_axis(&coarse, interval, axis))
}

fn block_axis_at(
    f: &GridFunction,
    anchor: &DyadicInterval,
    offset: u32,
    axis: Axis,
    depth: u32,
) -> Result<GridFunction> {
    let level = anchor.level() + offset;
    if level + 1 > depth {
        return Err(Error::BlockOutOfRange { anchor_level: anchor.level(), offset, depth });
    }
    let fine = f.axis_average(axis, level + 1);
    let coarse = f.axis_average(axis, level);
    Ok(restrict_axis(&fine.sub(&coarse), anchor, axis))
}

/// Apply a martingale projection. Exact linear algebra on the grid.
pub fn project(f: &GridFunction, selector: &Projection) -> Result<GridFunction> {
    let depth = f.depth();
    match selector {
        Projection::MartingaleDiff1(i) => diff_axis_at(f, i, Axis::One, depth),
        Projection::MartingaleDiff2(j) => diff_axis_at(f, j, Axis::Two, depth),
        Projection::MartingaleDiffRect(r) => {
            let d1 = diff_axis_at(f, &r.ix, Axis::One, depth)?;
            diff_axis_at(&d1, &r.jy, Axis::Two, depth)
        }
        Projection::Average1(i) => avg_axis_at(f, i, Axis::One, depth),
        Projection::Average2(j) => avg_axis_at(f, j, Axis::Two, depth),
        Projection::AverageRect(r) => {
            let a1 = avg_axis_at(f, &r.ix, Axis::One, depth)?;
            avg_axis_at(&a1, &r.jy, Axis::Two, depth)
        }
        Projection::Block1(k, i) => block_axis_at(f, k, *i, Axis::One, depth),
        Projection::Block2(v, j) => block_axis_at(f, v, *j, Axis::Two, depth),
        Projection::BlockRect(r, i, j) => {
            let b1 = block_axis_at(f, &r.ix, *i, Axis::One, depth)?;
            block_axis_at(&b1, &r.jy, *j, Axis::Two, depth)
        }
    }
}

/// `⟨f, h⟩_axis`: slice pairing against a 1D function.
pub fn partial_pairing(f: &GridFunction, h: &LineFunction, axis: Axis) -> Result<LineFunction> {
    f.pair_axis(h, axis)
}
