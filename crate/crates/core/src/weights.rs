//! Bi-parameter weights and the norms built from them.
//!
//! `A_p` characteristics are taken over *dyadic* rectangles of the grid
//! (factor levels `0..=L` each); the product-BMO supremum runs over unions
//! of finest cells, which exhausts the admissible open sets for functions
//! that are constant on those cells. Exact enumeration of cell unions is
//! capped at depth 2; beyond that the greedy mode is an honest lower bound.

use serde::{Deserialize, Serialize};

use crate::dyadic::{
    analyze, DyadicInterval, DyadicRectangle, GridFunction, LineFunction, RectAverages,
};
use crate::rng::sub_rng;
use crate::{Error, Result};
use rand::Rng;

/// A strictly positive, finite function on the grid.
#[derive(Clone, Debug)]
pub struct Weight {
    values: GridFunction,
}

impl Weight {
    pub fn new(values: GridFunction) -> Result<Self> {
        for (cell, v) in values.values().iter().enumerate() {
            if !(v.is_finite() && *v > 0.0) {
                return Err(Error::NonpositiveWeight { cell, value: *v });
            }
        }
        Ok(Weight { values })
    }

    pub fn one(depth: u32) -> Self {
        Weight { values: GridFunction::constant(depth, 1.0) }
    }

    pub fn depth(&self) -> u32 {
        self.values.depth()
    }

    pub fn grid(&self) -> &GridFunction {
        &self.values
    }

    /// Cellwise power `w^a` (stays a valid weight).
    pub fn powf(&self, a: f64) -> Weight {
        let g = GridFunction::new(
            self.values.depth(),
            self.values.values().iter().map(|v| v.powf(a)).collect(),
        );
        Weight { values: g }
    }

    /// `w(R) = ∫_R w`.
    pub fn measure(&self, rect: &DyadicRectangle) -> f64 {
        self.values.integral_over(rect)
    }

    /// Measure of an arbitrary cell set.
    pub fn measure_cells<'a>(&self, cells: impl IntoIterator<Item = &'a usize>) -> f64 {
        let area = self.values.cell_area();
        cells.into_iter().map(|&c| self.values.values()[c]).sum::<f64>() * area
    }
}

/// Dyadic bi-parameter `A_p` characteristic:
/// `sup_R ⟨w⟩_R ⟨w^{1-p'}⟩_R^{p-1}` over all dyadic rectangles.
pub fn ap_characteristic(w: &Weight, p: f64) -> f64 {
    assert!(p > 1.0, "A_p needs p > 1");
    let depth = w.depth();
    let dual_exponent = 1.0 - p / (p - 1.0); // 1 - p'
    let sigma = w.powf(dual_exponent);
    let aw = RectAverages::new(w.grid());
    let asigma = RectAverages::new(sigma.grid());
    let mut best = f64::MIN;
    for l1 in 0..=depth {
        for l2 in 0..=depth {
            let ga = aw.level_grid(l1, l2);
            let gs = asigma.level_grid(l1, l2);
            for (a, s) in ga.iter().zip(gs) {
                let v = a * s.powf(p - 1.0);
                if v > best {
                    best = v;
                }
            }
        }
    }
    best
}

/// Bloom weight `ν = μ^{1/p} λ^{-1/p}`.
pub fn bloom_weight(mu: &Weight, lambda: &Weight, p: f64) -> Result<Weight> {
    mu.grid().check_depth(lambda.grid())?;
    let values: Vec<f64> = mu
        .grid()
        .values()
        .iter()
        .zip(lambda.grid().values())
        .map(|(m, l)| m.powf(1.0 / p) * l.powf(-1.0 / p))
        .collect();
    Weight::new(GridFunction::new(mu.depth(), values))
}

/// `‖f‖_{L^p(w)}`.
pub fn lp_norm(f: &GridFunction, w: &Weight, p: f64) -> f64 {
    assert!(p >= 1.0);
    let area = f.cell_area();
    let s: f64 = f
        .values()
        .iter()
        .zip(w.grid().values())
        .map(|(v, wv)| v.abs().powf(p) * wv)
        .sum();
    (s * area).powf(1.0 / p)
}

/// `‖f‖_{L^{p,∞}(w)} = sup_t t · w({|f| >= t})^{1/p}`; exact for step
/// functions (the supremum is attained at a data value).
pub fn weak_lp_norm(f: &GridFunction, w: &Weight, p: f64) -> f64 {
    assert!(p >= 1.0);
    let area = f.cell_area();
    let mut pairs: Vec<(f64, f64)> = f
        .values()
        .iter()
        .zip(w.grid().values())
        .map(|(v, wv)| (v.abs(), wv * area))
        .collect();
    // descending by |f|; running measure is w({|f| >= v}).
    pairs.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    let mut mass = 0.0;
    let mut best = 0.0f64;
    let mut idx = 0;
    while idx < pairs.len() {
        let v = pairs[idx].0;
        while idx < pairs.len() && pairs[idx].0 == v {
            mass += pairs[idx].1;
            idx += 1;
        }
        if v > 0.0 {
            best = best.max(v * mass.powf(1.0 / p));
        }
    }
    best
}

/// Where a BMO supremum was attained.
#[derive(Clone, Debug, Serialize)]
pub enum BmoWitness {
    Rectangle(DyadicRectangle),
    /// Flat cell indices of the extremal set Ω.
    CellSet(Vec<usize>),
}

/// A BMO norm value together with its maximising witness.
#[derive(Clone, Debug, Serialize)]
pub struct BmoCertificate {
    pub norm_value: f64,
    pub witness: BmoWitness,
}

/// Weighted little BMO: `sup_R ν(R)^{-1} ∫_R |b - ⟨b⟩_R|`.
pub fn bmo_little(b: &GridFunction, nu: &Weight) -> BmoCertificate {
    assert_eq!(b.depth(), nu.depth(), "depth mismatch");
    let depth = b.depth();
    let averages = RectAverages::new(b);
    let n = b.side();
    let area = b.cell_area();
    let mut best = 0.0f64;
    let mut witness = DyadicRectangle::unit();
    for rect in DyadicRectangle::all(depth) {
        let mean = averages.average(&rect);
        let mut osc = 0.0;
        for i in rect.ix.cell_range(depth) {
            for j in rect.jy.cell_range(depth) {
                osc += (b.values()[i * n + j] - mean).abs();
            }
        }
        osc *= area;
        let value = osc / nu.measure(&rect);
        if value > best {
            best = value;
            witness = rect;
        }
    }
    BmoCertificate { norm_value: best, witness: BmoWitness::Rectangle(witness) }
}

/// How the product-BMO supremum over sets Ω is explored.
#[derive(Copy, Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BmoProdMode {
    /// All nonempty unions of finest cells (`2^{4^L}-1` candidates), depth <= 2 only.
    Exact,
    /// Grow Ω from every rectangle seed by locally best single-cell additions.
    Greedy,
    /// Ω restricted to single dyadic rectangles.
    Rect,
}

/// Exact/greedy/rect mode pick for a given depth.
pub fn best_bmo_mode(depth: u32) -> BmoProdMode {
    if depth <= 2 {
        BmoProdMode::Exact
    } else {
        BmoProdMode::Greedy
    }
}

/// Per-rectangle payload for the product-BMO objective.
struct ProdBmoData {
    /// Active rectangles with nonzero contribution possible.
    rects: Vec<DyadicRectangle>,
    /// `|⟨b, h_R⟩|^2 ⟨ν⟩_R^{-1}` per rectangle.
    weight: Vec<f64>,
    /// Flat cell lists per rectangle.
    cells: Vec<Vec<usize>>,
    /// ν cell masses (value times area).
    nu_cell: Vec<f64>,
}

impl ProdBmoData {
    fn new(b: &GridFunction, nu: &Weight) -> Self {
        let depth = b.depth();
        let n = b.side();
        let spectrum = analyze(b);
        let nu_avg = RectAverages::new(nu.grid());
        let mut rects = Vec::new();
        let mut weight = Vec::new();
        let mut cells = Vec::new();
        for (i, j, c) in spectrum.cancellative_entries() {
            let rect = DyadicRectangle::new(i, j);
            let w = c * c / nu_avg.average(&rect);
            let mut cell_list = Vec::new();
            for ci in rect.ix.cell_range(depth) {
                for cj in rect.jy.cell_range(depth) {
                    cell_list.push(ci * n + cj);
                }
            }
            rects.push(rect);
            weight.push(w);
            cells.push(cell_list);
        }
        let area = b.cell_area();
        let nu_cell = nu.grid().values().iter().map(|v| v * area).collect();
        ProdBmoData { rects, weight, cells, nu_cell }
    }

    fn objective(&self, numerator: f64, nu_mass: f64) -> f64 {
        if numerator <= 0.0 {
            0.0
        } else {
            (numerator / nu_mass).sqrt()
        }
    }

    /// Rectangle indices containing each cell, for incremental growth.
    fn cell_rects(&self, cell_count: usize) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); cell_count];
        for (k, cells) in self.cells.iter().enumerate() {
            for &c in cells {
                out[c].push(k);
            }
        }
        out
    }
}

/// Weighted product BMO norm of `b`:
/// `sup_Ω ( ν(Ω)^{-1} Σ_{R ⊆ Ω} |⟨b,h_R⟩|^2 ⟨ν⟩_R^{-1} )^{1/2}`,
/// with Ω ranging over unions of finest cells per the chosen mode.
/// Guarantees `exact >= greedy >= rect` pointwise in the input.
pub fn bmo_prod(b: &GridFunction, nu: &Weight, mode: BmoProdMode) -> Result<BmoCertificate> {
    assert_eq!(b.depth(), nu.depth(), "depth mismatch");
    let depth = b.depth();
    if mode == BmoProdMode::Exact && depth > 2 {
        return Err(Error::ExactBmoTooDeep(depth));
    }
    let data = ProdBmoData::new(b, nu);
    match mode {
        BmoProdMode::Rect => Ok(bmo_prod_rect(&data, depth)),
        BmoProdMode::Greedy => Ok(bmo_prod_greedy(&data, b.cell_count())),
        BmoProdMode::Exact => Ok(bmo_prod_exact(&data, b.cell_count())),
    }
}

fn bmo_prod_rect(data: &ProdBmoData, depth: u32) -> BmoCertificate {
    let mut best = 0.0f64;
    let mut witness = DyadicRectangle::unit();
    for omega in DyadicRectangle::all(depth) {
        let mut num = 0.0;
        for (r, w) in data.rects.iter().zip(&data.weight) {
            if omega.contains(r) {
                num += w;
            }
        }
        let nu_mass: f64 = {
            // ν(Ω) over the rectangle's cells.
            let mut m = 0.0;
            // Rectangle cells are contiguous per row; reuse the rect lists is
            // not possible here since Ω need not be active, so sum directly.
            let n = (data.nu_cell.len() as f64).sqrt() as usize;
            for i in omega.ix.cell_range(depth) {
                for j in omega.jy.cell_range(depth) {
                    m += data.nu_cell[i * n + j];
                }
            }
            m
        };
        let value = data.objective(num, nu_mass);
        if value > best {
            best = value;
            witness = omega;
        }
    }
    BmoCertificate { norm_value: best, witness: BmoWitness::Rectangle(witness) }
}

/// State for incremental growth of Ω. Tracks, per rectangle, how many of
/// its cells are still missing, and per cell the numerator gain its addition
/// would realise (the total weight of rectangles it would complete).
struct GrowState {
    in_omega: Vec<bool>,
    missing: Vec<usize>,
    gain_num: Vec<f64>,
    numerator: f64,
    nu_mass: f64,
}

impl GrowState {
    fn from_cells(data: &ProdBmoData, cells: &[usize], cell_count: usize) -> Self {
        let mut in_omega = vec![false; cell_count];
        for &c in cells {
            in_omega[c] = true;
        }
        let mut numerator = 0.0;
        let mut missing = Vec::with_capacity(data.rects.len());
        for cell_list in &data.cells {
            let miss = cell_list.iter().filter(|c| !in_omega[**c]).count();
            missing.push(miss);
        }
        let mut gain_num = vec![0.0; cell_count];
        for (k, miss) in missing.iter().enumerate() {
            match miss {
                0 => numerator += data.weight[k],
                1 => {
                    let u = *data.cells[k].iter().find(|c| !in_omega[**c]).expect("one missing");
                    gain_num[u] += data.weight[k];
                }
                _ => {}
            }
        }
        let nu_mass = cells.iter().map(|&c| data.nu_cell[c]).sum();
        GrowState { in_omega, missing, gain_num, numerator, nu_mass }
    }

    fn add_cell(&mut self, data: &ProdBmoData, cell_rects: &[Vec<usize>], cell: usize) {
        debug_assert!(!self.in_omega[cell]);
        self.in_omega[cell] = true;
        self.nu_mass += data.nu_cell[cell];
        self.numerator += self.gain_num[cell];
        self.gain_num[cell] = 0.0;
        for &k in &cell_rects[cell] {
            self.missing[k] -= 1;
            if self.missing[k] == 1 {
                let u = *data.cells[k].iter().find(|c| !self.in_omega[**c]).expect("one missing");
                self.gain_num[u] += data.weight[k];
            }
        }
    }

    /// Objective after hypothetically adding `cell`: O(1).
    fn gain(&self, data: &ProdBmoData, cell: usize) -> f64 {
        data.objective(self.numerator + self.gain_num[cell], self.nu_mass + data.nu_cell[cell])
    }
}

fn bmo_prod_greedy(data: &ProdBmoData, cell_count: usize) -> BmoCertificate {
    let depth = (cell_count as f64).log2() as u32 / 2;
    let n = 1usize << depth;
    let cell_rects = data.cell_rects(cell_count);
    let mut best = 0.0f64;
    let mut best_cells: Vec<usize> = Vec::new();
    for seed in DyadicRectangle::all(depth) {
        let mut cells = Vec::new();
        for i in seed.ix.cell_range(depth) {
            for j in seed.jy.cell_range(depth) {
                cells.push(i * n + j);
            }
        }
        let mut state = GrowState::from_cells(data, &cells, cell_count);
        let mut current = data.objective(state.numerator, state.nu_mass);
        if current > best {
            best = current;
            best_cells = cells.clone();
        }
        loop {
            let mut best_gain = current;
            let mut best_cell = None;
            for cell in 0..cell_count {
                if state.in_omega[cell] {
                    continue;
                }
                let g = state.gain(data, cell);
                if g > best_gain + 1e-15 * (1.0 + best_gain) {
                    best_gain = g;
                    best_cell = Some(cell);
                }
            }
            match best_cell {
                None => break,
                Some(cell) => {
                    state.add_cell(data, &cell_rects, cell);
                    cells.push(cell);
                    current = best_gain;
                    if current > best {
                        best = current;
                        best_cells = cells.clone();
                    }
                }
            }
        }
    }
    best_cells.sort_unstable();
    BmoCertificate { norm_value: best, witness: BmoWitness::CellSet(best_cells) }
}

fn bmo_prod_exact(data: &ProdBmoData, cell_count: usize) -> BmoCertificate {
    assert!(cell_count <= 16);
    // Rectangle cell masks for subset tests.
    let masks: Vec<u32> = data
        .cells
        .iter()
        .map(|list| list.iter().fold(0u32, |m, c| m | (1 << c)))
        .collect();
    let mut best = 0.0f64;
    let mut best_mask = 1u32;
    let full: u64 = 1u64 << cell_count;
    for omega in 1..full {
        let omega = omega as u32;
        let mut num = 0.0;
        for (mask, w) in masks.iter().zip(&data.weight) {
            if omega & mask == *mask {
                num += w;
            }
        }
        if num <= 0.0 {
            continue;
        }
        let mut nu_mass = 0.0;
        let mut bits = omega;
        while bits != 0 {
            let c = bits.trailing_zeros() as usize;
            nu_mass += data.nu_cell[c];
            bits &= bits - 1;
        }
        let value = data.objective(num, nu_mass);
        if value > best {
            best = value;
            best_mask = omega;
        }
    }
    let cells: Vec<usize> = (0..cell_count).filter(|c| best_mask & (1 << c) != 0).collect();
    BmoCertificate { norm_value: best, witness: BmoWitness::CellSet(cells) }
}

/// Sequence BMO norm: `sup_{I_0} ( |I_0|^{-1} Σ_{I ⊆ I_0} a_I^2 )^{1/2}`.
pub fn bmo_sequence(entries: &[(DyadicInterval, f64)], depth: u32) -> f64 {
    if entries.is_empty() {
        return 0.0;
    }
    let mut best = 0.0f64;
    for level in 0..depth {
        for i0 in DyadicInterval::at_level(level) {
            let sum: f64 = entries
                .iter()
                .filter(|(i, _)| i0.contains(i))
                .map(|(_, a)| a * a)
                .sum();
            let value = (sum / i0.length()).sqrt();
            if value > best {
                best = value;
            }
        }
    }
    best
}

/// One-axis weight profile.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AxisWeightSpec {
    Constant { value: f64 },
    /// Cell averages of `x^a`; in `A_p` for `a` in `(-1, p-1)`.
    Power { exponent: f64 },
    /// `exp(Σ c_I h_I)` with `|c_I| <= amplitude`, levels below `level_cap`.
    HaarPerturbation { amplitude: f64, level_cap: u32 },
}

/// Weight profile on the square.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WeightSpec {
    Constant { value: f64 },
    Tensor { axis1: AxisWeightSpec, axis2: AxisWeightSpec },
}

fn gen_axis_weight(
    spec: &AxisWeightSpec,
    depth: u32,
    p: f64,
    rng: &mut impl Rng,
) -> Result<LineFunction> {
    match spec {
        AxisWeightSpec::Constant { value } => {
            if !(value.is_finite() && *value > 0.0) {
                return Err(Error::NonpositiveWeight { cell: 0, value: *value });
            }
            Ok(LineFunction::constant(depth, *value))
        }
        AxisWeightSpec::Power { exponent } => {
            let a = *exponent;
            if !(a > -1.0 && a < p - 1.0) {
                return Err(Error::PowerExponent { exponent: a, upper: p - 1.0 });
            }
            let n = 1usize << depth;
            let mut values = Vec::with_capacity(n);
            for c in 0..n {
                let x0 = c as f64 / n as f64;
                let x1 = (c + 1) as f64 / n as f64;
                // cell average of x^a: (x1^{a+1} - x0^{a+1}) / ((a+1) |cell|)
                let v = (x1.powf(a + 1.0) - x0.powf(a + 1.0)) / ((a + 1.0) / n as f64);
                values.push(v);
            }
            Ok(LineFunction::new(depth, values))
        }
        AxisWeightSpec::HaarPerturbation { amplitude, level_cap } => {
            let mut log_w = LineFunction::zeros(depth);
            let top = (*level_cap).min(depth);
            for level in 0..top {
                for i in DyadicInterval::at_level(level) {
                    let c: f64 = rng.random_range(-*amplitude..=*amplitude);
                    let h = crate::dyadic::haar(&i, crate::dyadic::HaarKind::Cancellative, depth)?;
                    log_w = log_w.add(&h.scale(c));
                }
            }
            let values = log_w.values().iter().map(|v| v.exp()).collect();
            Ok(LineFunction::new(depth, values))
        }
    }
}

const WEIGHT_STREAM: u64 = 0x57;

/// Deterministic weight generation from a spec and seed.
pub fn gen_weight(spec: &WeightSpec, depth: u32, p: f64, seed: u64) -> Result<Weight> {
    let mut rng = sub_rng(seed, 0, WEIGHT_STREAM);
    match spec {
        WeightSpec::Constant { value } => {
            if !(value.is_finite() && *value > 0.0) {
                return Err(Error::NonpositiveWeight { cell: 0, value: *value });
            }
            Ok(Weight { values: GridFunction::constant(depth, *value) })
        }
        WeightSpec::Tensor { axis1, axis2 } => {
            let w1 = gen_axis_weight(axis1, depth, p, &mut rng)?;
            let w2 = gen_axis_weight(axis2, depth, p, &mut rng)?;
            Weight::new(GridFunction::tensor(&w1, &w2))
        }
    }
}

/// Generate a weight and, if its `A_2` characteristic exceeds `cap`, retry
/// with the Haar amplitudes halved until it fits. Deterministic in the seed.
pub fn gen_weight_capped(
    spec: &WeightSpec,
    depth: u32,
    p: f64,
    seed: u64,
    cap: f64,
) -> Result<Weight> {
    let mut spec = spec.clone();
    for _ in 0..60 {
        let w = gen_weight(&spec, depth, p, seed)?;
        if ap_characteristic(&w, 2.0) <= cap {
            return Ok(w);
        }
        spec = halve_amplitudes(&spec);
    }
    // Amplitudes are now ~2^-60 of the original; the weight is constant to
    // machine precision and its characteristic is 1.
    gen_weight(&spec, depth, p, seed)
}

fn halve_amplitudes(spec: &WeightSpec) -> WeightSpec {
    fn axis(a: &AxisWeightSpec) -> AxisWeightSpec {
        match a {
            AxisWeightSpec::HaarPerturbation { amplitude, level_cap } => {
                AxisWeightSpec::HaarPerturbation { amplitude: amplitude / 2.0, level_cap: *level_cap }
            }
            other => other.clone(),
        }
    }
    match spec {
        WeightSpec::Constant { value } => WeightSpec::Constant { value: *value },
        WeightSpec::Tensor { axis1, axis2 } => {
            WeightSpec::Tensor { axis1: axis(axis1), axis2: axis(axis2) }
        }
    }
}

/// Both sides of the H^1--BMO duality pairing, reported as a ratio.
#[derive(Clone, Debug, Serialize)]
pub struct DualityRatio {
    pub lhs: f64,
    pub rhs: f64,
    pub ratio: Option<f64>,
    pub degenerate: bool,
    pub bmo_value: f64,
    pub mode: BmoProdMode,
}

/// Compares `Σ |⟨b, h_R⟩| |c_R|` against
/// `‖b‖_{BMO_prod(ν)} ∫ (Σ c_R^2 1_R / |R|)^{1/2} ν` for the Bloom weight
/// `ν = μ^{1/p} λ^{-1/p}`. No boundedness is asserted; the ratio is data.
pub fn duality_ratio(
    b: &GridFunction,
    coeffs: &[(DyadicRectangle, f64)],
    mu: &Weight,
    lambda: &Weight,
    p: f64,
) -> Result<DualityRatio> {
    let nu = bloom_weight(mu, lambda, p)?;
    let depth = b.depth();
    let spectrum = analyze(b);
    let mut lhs = 0.0;
    let mut square = GridFunction::zeros(depth);
    let n = b.side();
    for (rect, c) in coeffs {
        if !rect.is_active(depth) {
            return Err(Error::InactiveInterval { level: rect.ix.level().max(rect.jy.level()), depth });
        }
        let coeff = spectrum.get(
            crate::dyadic::ExtendedIndex::Interval(rect.ix),
            crate::dyadic::ExtendedIndex::Interval(rect.jy),
        );
        lhs += coeff.abs() * c.abs();
        let density = c * c / rect.area();
        for i in rect.ix.cell_range(depth) {
            for j in rect.jy.cell_range(depth) {
                let v = square.get(i, j) + density;
                square.values_mut()[i * n + j] = v;
            }
        }
    }
    let mode = best_bmo_mode(depth);
    let bmo = bmo_prod(b, &nu, mode)?;
    let sqrt_square = GridFunction::new(depth, square.values().iter().map(|v| v.sqrt()).collect());
    let integral = sqrt_square.mul(nu.grid()).integral();
    let rhs = bmo.norm_value * integral;
    let degenerate = rhs == 0.0;
    let ratio = if degenerate { None } else { Some(lhs / rhs) };
    Ok(DualityRatio { lhs, rhs, ratio, degenerate, bmo_value: bmo.norm_value, mode })
}
