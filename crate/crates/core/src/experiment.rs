//! Seeded, reproducible experiment drivers.
//!
//! Every driver takes an [`ExperimentConfig`] and derives all randomness from
//! the master seed through per-trial streams, so trials are independent of
//! scheduling: runs are bitwise reproducible whether or not they execute in
//! parallel. Degenerate rows (zero denominators) are excluded and counted,
//! never silently dropped.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::commutator::{nested_commutator, verify_decomposition, DecompositionCase, ModelOpSpec};
use crate::dyadic::{
    analyze, synthesize, Axis, DyadicInterval, DyadicRectangle, ExtendedIndex, GridFunction,
    HaarSpectrum,
};
use crate::lowerbound::{check_lower_bound, KernelSpec, LowerBoundReport};
use crate::operator::{
    maximal, operator_norm_lower, operator_norm_p2, square_function, MaximalKind, Operator,
    ParaproductSpec, PiForm, ShiftSpec, SquareKind,
};
use crate::paraproduct::{decompose_product, paraproduct_operator, DecompositionMode, ParaproductKind};
use crate::rng::{stream_rng, sub_rng};
use crate::weights::{
    ap_characteristic, best_bmo_mode, bloom_weight, bmo_little, bmo_prod, duality_ratio,
    gen_weight_capped, lp_norm, AxisWeightSpec, BmoProdMode, Weight, WeightSpec,
};
use crate::{Error, Result};
use rand::Rng;

/// How the symbol `b` is produced.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BSpec {
    /// Random doubly-cancellative Haar spectrum (product-BMO norm is
    /// generically positive).
    RandomSpectrum,
    /// A single tensor Haar coefficient.
    SingleCoefficient { i_level: u32, i_index: u64, j_level: u32, j_index: u64 },
    /// `u(x_1) + v(x_2)`: a little-bmo style contrast profile with no
    /// doubly-cancellative content.
    Additive,
    /// `±1` checkerboard at the finest scale.
    Checkerboard,
    /// Explicit cell values, row-major with `x_1` rows.
    Values { rows: Vec<Vec<f64>> },
}

impl Default for BSpec {
    fn default() -> Self {
        BSpec::RandomSpectrum
    }
}

/// Generate `b` from its spec, deterministically in the rng state.
pub fn gen_b(spec: &BSpec, depth: u32, rng: &mut impl Rng) -> GridFunction {
    match spec {
        BSpec::RandomSpectrum => {
            let mut s = HaarSpectrum::zeros(depth);
            for r in DyadicRectangle::all_active(depth) {
                s.set(
                    ExtendedIndex::Interval(r.ix),
                    ExtendedIndex::Interval(r.jy),
                    rng.random_range(-1.0..1.0),
                );
            }
            synthesize(&s)
        }
        BSpec::SingleCoefficient { i_level, i_index, j_level, j_index } => {
            let mut s = HaarSpectrum::zeros(depth);
            s.set(
                ExtendedIndex::Interval(DyadicInterval::new(*i_level, *i_index)),
                ExtendedIndex::Interval(DyadicInterval::new(*j_level, *j_index)),
                1.0,
            );
            synthesize(&s)
        }
        BSpec::Additive => {
            let n = 1usize << depth;
            let u: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            GridFunction::from_fn(depth, |i, j| u[i] + v[j])
        }
        BSpec::Checkerboard => {
            GridFunction::from_fn(depth, |i, j| if (i + j) % 2 == 0 { 1.0 } else { -1.0 })
        }
        BSpec::Values { rows } => {
            let n = 1usize << depth;
            assert_eq!(rows.len(), n, "b values need 2^depth rows");
            let mut values = Vec::with_capacity(n * n);
            for row in rows {
                assert_eq!(row.len(), n, "b values need 2^depth columns");
                values.extend_from_slice(row);
            }
            GridFunction::new(depth, values)
        }
    }
}

/// Which model operator a slot generates.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OpGenSpec {
    /// Dense shift with maximal-magnitude coefficients and random signs.
    Shift { k1: u32, k2: u32 },
    /// Random paraproduct normalised to sequence-BMO norm 1.
    Paraproduct { form: PiForm },
    /// The zero operator (an empty shift).
    Zero,
}

impl OpGenSpec {
    /// Effective `(k1, k2)` after grid clamping; paraproducts report none.
    pub fn complexity(&self, depth: u32) -> Option<(u32, u32)> {
        match self {
            OpGenSpec::Shift { k1, k2 } => Some((*k1.min(&(depth - 1)), *k2.min(&(depth - 1)))),
            _ => None,
        }
    }

    pub fn generate(&self, axis: Axis, depth: u32, rng: &mut impl Rng) -> ModelOpSpec {
        match self {
            OpGenSpec::Shift { k1, k2 } => {
                ModelOpSpec::Shift(ShiftSpec::random_full(axis, *k1, *k2, depth, rng))
            }
            OpGenSpec::Paraproduct { form } => {
                ModelOpSpec::Pi(ParaproductSpec::random_normalised(axis, *form, depth, rng))
            }
            OpGenSpec::Zero => {
                ModelOpSpec::Shift(ShiftSpec { axis, k1: 0, k2: 0, coeffs: Vec::new() })
            }
        }
    }
}

/// Product-BMO exploration mode selection.
#[derive(Copy, Clone, PartialEq, Eq, Debug, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum BmoModeChoice {
    /// Exact through depth 2, greedy beyond.
    #[default]
    Auto,
    Exact,
    Greedy,
    Rect,
}

impl BmoModeChoice {
    pub fn resolve(self, depth: u32) -> Result<BmoProdMode> {
        Ok(match self {
            BmoModeChoice::Auto => best_bmo_mode(depth),
            BmoModeChoice::Exact => {
                if depth > 2 {
                    return Err(Error::ExactBmoTooDeep(depth));
                }
                BmoProdMode::Exact
            }
            BmoModeChoice::Greedy => BmoProdMode::Greedy,
            BmoModeChoice::Rect => BmoProdMode::Rect,
        })
    }
}

fn default_a2_cap() -> f64 {
    16.0
}
fn default_trials() -> u32 {
    25
}
fn default_depth() -> u32 {
    4
}
fn default_p() -> f64 {
    2.0
}
fn default_k() -> u32 {
    1
}
fn default_norm_budget() -> u32 {
    400
}
fn default_weight_spec() -> WeightSpec {
    WeightSpec::Tensor {
        axis1: AxisWeightSpec::HaarPerturbation { amplitude: 0.4, level_cap: 3 },
        axis2: AxisWeightSpec::HaarPerturbation { amplitude: 0.4, level_cap: 3 },
    }
}
fn default_u1() -> OpGenSpec {
    OpGenSpec::Shift { k1: 1, k2: 1 }
}
fn default_u2() -> OpGenSpec {
    OpGenSpec::Shift { k1: 1, k2: 1 }
}

/// Weight generation block of a config.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WeightsConfig {
    #[serde(default = "default_weight_spec")]
    pub mu: WeightSpec,
    #[serde(default = "default_weight_spec")]
    pub lambda: WeightSpec,
    /// Haar amplitudes are halved until `[w]_{A_2}` fits under this cap.
    #[serde(default = "default_a2_cap")]
    pub a2_cap: f64,
}

impl Default for WeightsConfig {
    fn default() -> Self {
        WeightsConfig { mu: default_weight_spec(), lambda: default_weight_spec(), a2_cap: default_a2_cap() }
    }
}

/// Operator generation block.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OperatorsConfig {
    #[serde(default = "default_u1")]
    pub u1: OpGenSpec,
    #[serde(default = "default_u2")]
    pub u2: OpGenSpec,
}

impl Default for OperatorsConfig {
    fn default() -> Self {
        OperatorsConfig { u1: default_u1(), u2: default_u2() }
    }
}

/// Master configuration shared by all experiment drivers.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default = "default_depth")]
    pub depth: u32,
    #[serde(default = "default_p")]
    pub p: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_trials")]
    pub trials: u32,
    /// Iteration order for lower-bound runs.
    #[serde(default = "default_k")]
    pub k: u32,
    #[serde(default)]
    pub weights: WeightsConfig,
    #[serde(default)]
    pub operators: OperatorsConfig,
    #[serde(default)]
    pub b: BSpec,
    /// Product-BMO mode used wherever the norm is needed.
    #[serde(default)]
    pub bmo_mode: BmoModeChoice,
    /// Pins summation/scheduling order; runs are deterministic either way.
    #[serde(default)]
    pub reproducible: bool,
    /// Evaluation budget for `p != 2` lower estimates and extremizer search.
    #[serde(default = "default_norm_budget")]
    pub norm_budget: u32,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            depth: default_depth(),
            p: default_p(),
            seed: 0,
            trials: default_trials(),
            k: default_k(),
            weights: WeightsConfig::default(),
            operators: OperatorsConfig::default(),
            b: BSpec::default(),
            bmo_mode: BmoModeChoice::default(),
            reproducible: false,
            norm_budget: default_norm_budget(),
        }
    }
}

impl ExperimentConfig {
    /// Shared sanity checks; norm experiments additionally cap the depth.
    pub fn validate(&self, needs_norms: bool) -> Result<()> {
        if self.depth < 1 {
            return Err(Error::Config("depth must be at least 1".into()));
        }
        if needs_norms && self.depth > 6 {
            return Err(Error::Config(format!(
                "norm experiments are capped at depth 6, got {}",
                self.depth
            )));
        }
        if self.depth > crate::dyadic::MAX_DEPTH {
            return Err(Error::Config(format!("depth {} exceeds the grid cap", self.depth)));
        }
        if !(self.p > 1.0) {
            return Err(Error::Config(format!("p must exceed 1, got {}", self.p)));
        }
        if self.k < 1 {
            return Err(Error::Config("iteration order k must be at least 1".into()));
        }
        Ok(())
    }
}

/// What a row's `value` column measures.
#[derive(Copy, Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueKind {
    CertifiedNorm,
    LowerEstimate,
    Residual,
    Gamma,
    Ratio,
}

impl ValueKind {
    pub fn name(&self) -> &'static str {
        match self {
            ValueKind::CertifiedNorm => "certified_norm",
            ValueKind::LowerEstimate => "lower_estimate",
            ValueKind::Residual => "residual",
            ValueKind::Gamma => "gamma",
            ValueKind::Ratio => "ratio",
        }
    }
}

/// One emitted measurement; optional columns stay empty where a quantity is
/// not defined for the experiment.
#[derive(Clone, Debug, Serialize)]
pub struct TrialRow {
    pub trial_id: u32,
    pub label: String,
    pub depth: u32,
    pub p: f64,
    pub seed: u64,
    pub mu_ap: Option<f64>,
    pub lambda_ap: Option<f64>,
    pub nu_a2: Option<f64>,
    pub b_bmoprod: Option<f64>,
    pub b_bmolittle: Option<f64>,
    pub k1: Option<u32>,
    pub k2: Option<u32>,
    pub v1: Option<u32>,
    pub v2: Option<u32>,
    pub value: f64,
    pub value_kind: ValueKind,
}

impl TrialRow {
    fn bare(trial_id: u32, label: impl Into<String>, config: &ExperimentConfig, value: f64, kind: ValueKind) -> Self {
        TrialRow {
            trial_id,
            label: label.into(),
            depth: config.depth,
            p: config.p,
            seed: config.seed,
            mu_ap: None,
            lambda_ap: None,
            nu_a2: None,
            b_bmoprod: None,
            b_bmolittle: None,
            k1: None,
            k2: None,
            v1: None,
            v2: None,
            value,
            value_kind: kind,
        }
    }
}

/// A row excluded for degeneracy, with the reason.
#[derive(Clone, Debug, Serialize)]
pub struct ExcludedRow {
    pub trial_id: u32,
    pub reason: String,
}

/// Rows plus aggregates; the exclusion list is part of the report.
#[derive(Clone, Debug, Serialize, Default)]
pub struct RatioReport {
    pub rows: Vec<TrialRow>,
    pub excluded: Vec<ExcludedRow>,
    pub sup: Option<f64>,
    pub mean: Option<f64>,
}

impl RatioReport {
    fn from_rows(rows: Vec<TrialRow>, excluded: Vec<ExcludedRow>) -> Self {
        let values: Vec<f64> = rows.iter().map(|r| r.value).collect();
        let sup = values.iter().cloned().fold(None, |acc: Option<f64>, v| {
            Some(acc.map(|a| a.max(v)).unwrap_or(v))
        });
        let mean = if values.is_empty() {
            None
        } else {
            Some(values.iter().sum::<f64>() / values.len() as f64)
        };
        RatioReport { rows, excluded, sup, mean }
    }
}

/// One identity-suite row.
#[derive(Clone, Debug, Serialize)]
pub struct IdentityRow {
    pub trial_id: u32,
    pub case: String,
    pub residual: f64,
    pub tolerance: f64,
    pub pass: bool,
    pub seed: u64,
}

/// Identity-suite output: per-case residuals and the overall verdict.
#[derive(Clone, Debug, Serialize)]
pub struct IdentityReport {
    pub rows: Vec<IdentityRow>,
    pub all_pass: bool,
    pub failures: Vec<String>,
}

impl IdentityReport {
    pub fn rows_as_trial_rows(&self, config: &ExperimentConfig) -> Vec<TrialRow> {
        self.rows
            .iter()
            .map(|r| TrialRow::bare(r.trial_id, r.case.clone(), config, r.residual, ValueKind::Residual))
            .collect()
    }
}

fn random_grid_from(rng: &mut impl Rng, depth: u32) -> GridFunction {
    GridFunction::from_fn(depth, |_, _| rng.random_range(-2.0..2.0))
}

/// Run the product-decomposition and commutator-decomposition identities
/// across seeded trials. Any residual above tolerance becomes a failure row
/// naming the case and seed.
pub fn identity_suite(config: &ExperimentConfig) -> Result<IdentityReport> {
    config.validate(false)?;
    let depth = config.depth;
    let trial_ids: Vec<u32> = (0..config.trials).collect();
    let per_trial: Vec<Vec<IdentityRow>> = trial_ids
        .par_iter()
        .map(|&trial| {
            let mut rows = Vec::new();
            let mut rng = stream_rng(config.seed, trial as u64);
            let b = match &config.b {
                BSpec::RandomSpectrum => random_grid_from(&mut rng, depth),
                other => gen_b(other, depth, &mut rng),
            };
            let f = random_grid_from(&mut rng, depth);
            for mode in [DecompositionMode::Bi, DecompositionMode::Param1, DecompositionMode::Param2]
            {
                let case = format!("product/{mode:?}");
                match decompose_product(&b, &f, mode) {
                    Ok(d) => rows.push(IdentityRow {
                        trial_id: trial,
                        case,
                        residual: d.residual_sup,
                        tolerance: d.tolerance,
                        pass: true,
                        seed: config.seed,
                    }),
                    Err(Error::IdentityResidual { residual, tolerance, .. }) => {
                        rows.push(IdentityRow {
                            trial_id: trial,
                            case,
                            residual,
                            tolerance,
                            pass: false,
                            seed: config.seed,
                        })
                    }
                    Err(e) => panic!("unexpected identity failure: {e}"),
                }
            }
            let mut op_rng = sub_rng(config.seed, trial as u64, 0x0b5);
            let (sk1, sk2) = match config.operators.u1 {
                OpGenSpec::Shift { k1, k2 } => (k1, k2),
                _ => (1, 1),
            };
            let (sv1, sv2) = match config.operators.u2 {
                OpGenSpec::Shift { k1, k2 } => (k1, k2),
                _ => (1, 1),
            };
            let s1 = ShiftSpec::random_full(Axis::One, sk1, sk2, depth, &mut op_rng);
            let s2 = ShiftSpec::random_full(Axis::Two, sv1, sv2, depth, &mut op_rng);
            let p1 = ParaproductSpec::random_normalised(Axis::One, PiForm::Direct, depth, &mut op_rng);
            let p2 = ParaproductSpec::random_normalised(Axis::Two, PiForm::Direct, depth, &mut op_rng);
            let p1d = ParaproductSpec::random_normalised(Axis::One, PiForm::Dual, depth, &mut op_rng);
            let cases: Vec<(DecompositionCase, ModelOpSpec, ModelOpSpec)> = vec![
                (
                    DecompositionCase::ShiftShift,
                    ModelOpSpec::Shift(s1.clone()),
                    ModelOpSpec::Shift(s2.clone()),
                ),
                (DecompositionCase::PiPi, ModelOpSpec::Pi(p1), ModelOpSpec::Pi(p2.clone())),
                (
                    DecompositionCase::MixedShiftPi,
                    ModelOpSpec::Shift(s1),
                    ModelOpSpec::Pi(p2.clone()),
                ),
                (DecompositionCase::PiPiDual, ModelOpSpec::Pi(p1d), ModelOpSpec::Pi(p2)),
            ];
            for (case, u1, u2) in cases {
                let name = format!("commutator/{case:?}");
                match verify_decomposition(case, &b, &u1, &u2, &f) {
                    Ok(rep) => rows.push(IdentityRow {
                        trial_id: trial,
                        case: name,
                        residual: rep.residual_sup,
                        tolerance: rep.tolerance,
                        pass: true,
                        seed: config.seed,
                    }),
                    Err(Error::IdentityResidual { residual, tolerance, .. }) => {
                        rows.push(IdentityRow {
                            trial_id: trial,
                            case: name,
                            residual,
                            tolerance,
                            pass: false,
                            seed: config.seed,
                        })
                    }
                    Err(e) => panic!("unexpected decomposition failure: {e}"),
                }
            }
            rows
        })
        .collect();
    let rows: Vec<IdentityRow> = per_trial.into_iter().flatten().collect();
    let failures: Vec<String> = rows
        .iter()
        .filter(|r| !r.pass)
        .map(|r| format!("{} (trial {}, seed {})", r.case, r.trial_id, r.seed))
        .collect();
    let all_pass = failures.is_empty();
    Ok(IdentityReport { rows, all_pass, failures })
}

struct TrialSetup {
    mu: Weight,
    lambda: Weight,
    nu: Weight,
    mu_ap: f64,
    lambda_ap: f64,
    nu_a2: f64,
}

fn setup_weights(config: &ExperimentConfig, trial: u64) -> Result<TrialSetup> {
    let mu_seed = sub_rng(config.seed, trial, 1).random::<u64>();
    let la_seed = sub_rng(config.seed, trial, 2).random::<u64>();
    let mu = gen_weight_capped(&config.weights.mu, config.depth, config.p, mu_seed, config.weights.a2_cap)?;
    let lambda =
        gen_weight_capped(&config.weights.lambda, config.depth, config.p, la_seed, config.weights.a2_cap)?;
    let nu = bloom_weight(&mu, &lambda, config.p)?;
    Ok(TrialSetup {
        mu_ap: ap_characteristic(&mu, config.p),
        lambda_ap: ap_characteristic(&lambda, config.p),
        nu_a2: ap_characteristic(&nu, 2.0),
        mu,
        lambda,
        nu,
    })
}

fn commutator_norm(
    u1: &Operator,
    u2: &Operator,
    b: &GridFunction,
    setup: &TrialSetup,
    config: &ExperimentConfig,
    trial: u64,
) -> Result<(f64, ValueKind)> {
    let nested = nested_commutator(u1, b, u2)?;
    if (config.p - 2.0).abs() < 1e-12 {
        let est = operator_norm_p2(&nested, &setup.mu, &setup.lambda, crate::rng::mix(config.seed ^ trial))?;
        Ok((est.value, ValueKind::CertifiedNorm))
    } else {
        let v = operator_norm_lower(
            &nested,
            &setup.mu,
            &setup.lambda,
            config.p,
            config.norm_budget,
            crate::rng::mix(config.seed ^ trial),
        )?;
        Ok((v, ValueKind::LowerEstimate))
    }
}

/// The Bloom ratio study: per trial, the nested-commutator operator norm
/// divided by `‖b‖_{BMO_prod(ν)}`, with characteristics and complexities on
/// the row. Asserts the exact scaling invariances (`b -> c b` leaves the
/// ratio fixed; the norm is homogeneous on the input side).
pub fn bloom_ratio(config: &ExperimentConfig) -> Result<RatioReport> {
    config.validate(true)?;
    let depth = config.depth;
    let mode = config.bmo_mode.resolve(depth)?;
    let trial_ids: Vec<u32> = (0..config.trials).collect();
    let outcomes: Vec<Result<std::result::Result<TrialRow, ExcludedRow>>> = trial_ids
        .par_iter()
        .map(|&trial| -> Result<std::result::Result<TrialRow, ExcludedRow>> {
            let setup = setup_weights(config, trial as u64)?;
            let mut op_rng = sub_rng(config.seed, trial as u64, 3);
            let u1_spec = config.operators.u1.generate(Axis::One, depth, &mut op_rng);
            let u2_spec = config.operators.u2.generate(Axis::Two, depth, &mut op_rng);
            let u1 = u1_spec.build(depth)?;
            let u2 = u2_spec.build(depth)?;
            let mut b_rng = sub_rng(config.seed, trial as u64, 4);
            let b = gen_b(&config.b, depth, &mut b_rng);
            let prod = bmo_prod(&b, &setup.nu, mode)?.norm_value;
            let little = bmo_little(&b, &setup.nu).norm_value;
            if prod == 0.0 {
                return Ok(Err(ExcludedRow {
                    trial_id: trial,
                    reason: "b has zero product-BMO norm (numerator and denominator vanish)".into(),
                }));
            }
            let (norm, kind) = commutator_norm(&u1, &u2, &b, &setup, config, trial as u64)?;
            // a ratio built on a lower norm estimate is itself a lower estimate
            let row_kind = match kind {
                ValueKind::CertifiedNorm => ValueKind::Ratio,
                other => other,
            };
            let ratio = norm / prod;
            // ratio invariance under b -> c b
            let c = 3.0;
            let bc = b.scale(c);
            let prod_c = bmo_prod(&bc, &setup.nu, mode)?.norm_value;
            let (norm_c, _) = commutator_norm(&u1, &u2, &bc, &setup, config, trial as u64)?;
            let ratio_c = norm_c / prod_c;
            if (ratio_c - ratio).abs() > 1e-10 * (1.0 + ratio) {
                return Err(Error::IdentityResidual {
                    what: format!("bloom ratio b-scaling invariance (trial {trial})"),
                    residual: (ratio_c - ratio).abs(),
                    tolerance: 1e-10 * (1.0 + ratio),
                });
            }
            // input-side homogeneity of the commutator itself
            let nested = nested_commutator(&u1, &b, &u2)?;
            let mut f_rng = sub_rng(config.seed, trial as u64, 5);
            let f = random_grid_from(&mut f_rng, depth);
            let tf = lp_norm(&nested.apply(&f), &setup.lambda, config.p);
            let tcf = lp_norm(&nested.apply(&f.scale(c)), &setup.lambda, config.p);
            if (tcf - c * tf).abs() > 1e-10 * (1.0 + tf) {
                return Err(Error::IdentityResidual {
                    what: format!("input-scaling homogeneity (trial {trial})"),
                    residual: (tcf - c * tf).abs(),
                    tolerance: 1e-10 * (1.0 + tf),
                });
            }
            let (k1, k2) = config.operators.u1.complexity(depth).unzip();
            let (v1, v2) = config.operators.u2.complexity(depth).unzip();
            Ok(Ok(TrialRow {
                trial_id: trial,
                label: "bloom_ratio".into(),
                depth,
                p: config.p,
                seed: config.seed,
                mu_ap: Some(setup.mu_ap),
                lambda_ap: Some(setup.lambda_ap),
                nu_a2: Some(setup.nu_a2),
                b_bmoprod: Some(prod),
                b_bmolittle: Some(little),
                k1,
                k2,
                v1,
                v2,
                value: ratio,
                value_kind: row_kind,
            }))
        })
        .collect();
    let mut rows = Vec::new();
    let mut excluded = Vec::new();
    for o in outcomes {
        match o? {
            Ok(row) => rows.push(row),
            Err(ex) => excluded.push(ex),
        }
    }
    Ok(RatioReport::from_rows(rows, excluded))
}

/// Extremizer-search output.
#[derive(Clone, Debug, Serialize)]
pub struct ExtremizeReport {
    pub best_ratio: f64,
    /// Best-so-far after every objective evaluation; non-decreasing.
    pub trace: Vec<f64>,
    /// Coefficients of the best symbol over active rectangles, in
    /// `DyadicRectangle::all_active` order.
    pub best_coefficients: Vec<f64>,
    pub evaluations: u32,
    pub bmo_value: f64,
    pub norm_value: f64,
}

/// Maximise `‖[U^1,[b,U^2]]‖_{L^2(μ)->L^2(λ)} / ‖b‖_{BMO_prod(ν)}` over the
/// doubly-cancellative spectrum of `b` by normalised coordinate ascent with
/// seeded restarts. Deterministic in the seed; the trace is monotone.
pub fn extremize_b(config: &ExperimentConfig) -> Result<ExtremizeReport> {
    config.validate(true)?;
    if (config.p - 2.0).abs() > 1e-12 {
        return Err(Error::Config("extremizer search requires p = 2".into()));
    }
    let depth = config.depth;
    let mode = config.bmo_mode.resolve(depth)?;
    let setup = setup_weights(config, 0)?;
    let mut op_rng = sub_rng(config.seed, 0, 3);
    let u1 = config.operators.u1.generate(Axis::One, depth, &mut op_rng).build(depth)?;
    let u2 = config.operators.u2.generate(Axis::Two, depth, &mut op_rng).build(depth)?;
    let pairs: Vec<DyadicRectangle> = DyadicRectangle::all_active(depth).collect();
    let dim = pairs.len();

    let mut trace: Vec<f64> = Vec::new();
    let mut best = 0.0f64;
    let mut best_coeffs = vec![0.0; dim];
    let mut best_bmo = 0.0;
    let mut best_norm = 0.0;
    let mut evals = 0u32;
    let budget = config.norm_budget.max(50);

    let evaluate = |coeffs: &[f64],
                        trace: &mut Vec<f64>,
                        best: &mut f64,
                        best_coeffs: &mut Vec<f64>,
                        best_bmo: &mut f64,
                        best_norm: &mut f64,
                        evals: &mut u32|
     -> Result<f64> {
        let mut s = HaarSpectrum::zeros(depth);
        for (r, c) in pairs.iter().zip(coeffs) {
            s.set(ExtendedIndex::Interval(r.ix), ExtendedIndex::Interval(r.jy), *c);
        }
        let b = synthesize(&s);
        let bmo = bmo_prod(&b, &setup.nu, mode)?.norm_value;
        let value = if bmo == 0.0 {
            0.0
        } else {
            let nested = nested_commutator(&u1, &b, &u2)?;
            let norm = operator_norm_p2(&nested, &setup.mu, &setup.lambda, config.seed)?.value;
            if norm / bmo > *best {
                *best_bmo = bmo;
                *best_norm = norm;
            }
            norm / bmo
        };
        *evals += 1;
        if value > *best {
            *best = value;
            *best_coeffs = coeffs.to_vec();
        }
        trace.push(*best);
        Ok(value)
    };

    let restarts = 3u64;
    'outer: for restart in 0..restarts {
        let mut rng = sub_rng(config.seed, restart, 6);
        let mut coeffs: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let norm = coeffs.iter().map(|c| c * c).sum::<f64>().sqrt();
        if norm == 0.0 {
            continue; // restart per the all-zero start rule
        }
        for c in &mut coeffs {
            *c /= norm;
        }
        let mut current = evaluate(
            &coeffs, &mut trace, &mut best, &mut best_coeffs, &mut best_bmo, &mut best_norm,
            &mut evals,
        )?;
        let mut delta = 0.5f64;
        while delta > 1e-3 {
            let mut improved = false;
            for slot in 0..dim {
                if evals >= budget {
                    break 'outer;
                }
                for sign in [1.0, -1.0] {
                    let mut cand = coeffs.clone();
                    cand[slot] += sign * delta;
                    let norm = cand.iter().map(|c| c * c).sum::<f64>().sqrt();
                    if norm == 0.0 {
                        continue;
                    }
                    for c in &mut cand {
                        *c /= norm;
                    }
                    let v = evaluate(
                        &cand, &mut trace, &mut best, &mut best_coeffs, &mut best_bmo,
                        &mut best_norm, &mut evals,
                    )?;
                    if v > current {
                        coeffs = cand;
                        current = v;
                        improved = true;
                        break;
                    }
                }
            }
            if !improved {
                delta /= 2.0;
            }
        }
    }
    Ok(ExtremizeReport {
        best_ratio: best,
        trace,
        best_coefficients: best_coeffs,
        evaluations: evals,
        bmo_value: best_bmo,
        norm_value: best_norm,
    })
}

/// Ratio studies for the square-function, maximal-function and paraproduct
/// estimates. Exact cases (unweighted Parseval at `p = 2` on doubly
/// cancellative data; pointwise domination by the maximal function) are
/// asserted; everything else is reported.
pub fn lemma_suite(config: &ExperimentConfig) -> Result<RatioReport> {
    config.validate(true)?;
    let depth = config.depth;
    let trial_ids: Vec<u32> = (0..config.trials).collect();
    let per_trial: Vec<Result<Vec<TrialRow>>> = trial_ids
        .par_iter()
        .map(|&trial| -> Result<Vec<TrialRow>> {
            let mut rows = Vec::new();
            let setup = setup_weights(config, trial as u64)?;
            let w = &setup.mu; // single-weight studies use μ
            let mut rng = stream_rng(config.seed, trial as u64 + 0x1e);
            let f = random_grid_from(&mut rng, depth);
            let p = config.p;
            let denom = lp_norm(&f, w, p);
            let push = |label: &str, value: f64, rows: &mut Vec<TrialRow>| {
                let mut row = TrialRow::bare(trial, label, config, value, ValueKind::Ratio);
                row.mu_ap = Some(setup.mu_ap);
                rows.push(row);
            };
            let s_full = lp_norm(&square_function(SquareKind::Full, &f), w, p);
            push("square_full_over_f", s_full / denom, &mut rows);
            push("f_over_square_full", denom / s_full, &mut rows);
            for (kind, label) in [
                (SquareKind::Axis1, "square_axis1_over_f"),
                (SquareKind::Axis2, "square_axis2_over_f"),
                (SquareKind::Axis1Max, "square_max_axis1_over_f"),
                (SquareKind::Axis2Max, "square_max_axis2_over_f"),
            ] {
                let v = lp_norm(&square_function(kind, &f), w, p);
                push(label, v / denom, &mut rows);
            }
            // Fefferman–Stein vector ratio with s = 2 over four functions
            let fs: Vec<GridFunction> = (0..4).map(|_| random_grid_from(&mut rng, depth)).collect();
            let mut num_sq = GridFunction::zeros(depth);
            let mut den_sq = GridFunction::zeros(depth);
            for fj in &fs {
                let m = maximal(MaximalKind::Rect, fj);
                for ((n, d), (mv, fv)) in num_sq
                    .values_mut()
                    .iter_mut()
                    .zip(den_sq.values_mut())
                    .zip(m.values().iter().zip(fj.values()))
                {
                    *n += mv * mv;
                    *d += fv * fv;
                }
            }
            let num = GridFunction::new(depth, num_sq.values().iter().map(|v| v.sqrt()).collect());
            let den = GridFunction::new(depth, den_sq.values().iter().map(|v| v.sqrt()).collect());
            push(
                "fefferman_stein_s2",
                lp_norm(&num, w, p) / lp_norm(&den, w, p),
                &mut rows,
            );
            // maximal dominates pointwise -> single-function ratio >= 1
            let m = maximal(MaximalKind::Rect, &f);
            for (mv, fv) in m.values().iter().zip(f.values()) {
                assert!(*mv >= fv.abs() - 1e-14, "maximal function must dominate");
            }
            let fs_single = lp_norm(&m, w, p) / denom;
            assert!(fs_single >= 1.0 - 1e-12);
            push("maximal_over_f", fs_single, &mut rows);
            // exact case: unweighted Parseval at p = 2 on the doubly
            // cancellative part, asserted regardless of config
            let mut spec = analyze(&f);
            spec.keep_cancellative();
            let fc = synthesize(&spec);
            let one = Weight::one(depth);
            let sq = lp_norm(&square_function(SquareKind::Full, &fc), &one, 2.0);
            let l2 = lp_norm(&fc, &one, 2.0);
            assert!(
                (sq - l2).abs() <= 1e-12 * (1.0 + l2),
                "unweighted Parseval violated: {sq} vs {l2}"
            );
            // paraproduct norms against the product-BMO norm of b
            let mut b_rng = sub_rng(config.seed, trial as u64, 4);
            let b = gen_b(&config.b, depth, &mut b_rng);
            let bmo = bmo_prod(&b, &setup.nu, config.bmo_mode.resolve(depth)?)?.norm_value;
            if bmo > 0.0 {
                for kind in [ParaproductKind::A1, ParaproductKind::A2, ParaproductKind::A3, ParaproductKind::A4] {
                    let op = paraproduct_operator(kind, &b);
                    let (norm, vk) = if (p - 2.0).abs() < 1e-12 {
                        (
                            operator_norm_p2(&op, &setup.mu, &setup.lambda, config.seed ^ trial as u64)?.value,
                            ValueKind::Ratio,
                        )
                    } else {
                        (
                            operator_norm_lower(
                                &op,
                                &setup.mu,
                                &setup.lambda,
                                p,
                                config.norm_budget,
                                config.seed ^ trial as u64,
                            )?,
                            ValueKind::Ratio,
                        )
                    };
                    let mut row = TrialRow::bare(
                        trial,
                        format!("{}_norm_over_bmoprod", kind.name()),
                        config,
                        norm / bmo,
                        vk,
                    );
                    row.mu_ap = Some(setup.mu_ap);
                    row.lambda_ap = Some(setup.lambda_ap);
                    row.nu_a2 = Some(setup.nu_a2);
                    row.b_bmoprod = Some(bmo);
                    rows.push(row);
                }
            }
            Ok(rows)
        })
        .collect();
    let mut rows = Vec::new();
    for r in per_trial {
        rows.extend(r?);
    }
    Ok(RatioReport::from_rows(rows, Vec::new()))
}

/// Lower-bound study: per trial, the functional, the little-bmo norm of `b`
/// against `ν^{1/k}`, their ratio and the unconditional sub-step slacks.
#[derive(Clone, Debug, Serialize)]
pub struct LowerBoundStudy {
    pub rows: Vec<TrialRow>,
    pub reports: Vec<LowerBoundReport>,
    pub excluded: Vec<ExcludedRow>,
}

pub fn lower_bound_study(config: &ExperimentConfig) -> Result<LowerBoundStudy> {
    config.validate(false)?;
    if config.depth < 2 {
        return Err(Error::NoAdmissibleRectangle(config.depth));
    }
    let trial_ids: Vec<u32> = (0..config.trials).collect();
    let outcomes: Vec<Result<(Option<TrialRow>, LowerBoundReport, Option<ExcludedRow>)>> = trial_ids
        .par_iter()
        .map(|&trial| {
            let setup = setup_weights(config, trial as u64)?;
            let mut b_rng = sub_rng(config.seed, trial as u64, 4);
            let b = gen_b(&config.b, config.depth, &mut b_rng);
            let rep = check_lower_bound(
                KernelSpec::ProductHilbert,
                &b,
                &setup.mu,
                &setup.lambda,
                config.k,
                config.p,
            )?;
            if rep.holder_min_slack < -1e-12 || !rep.median_mass_ok || rep.pointwise_min_slack < -1e-12
            {
                return Err(Error::IdentityResidual {
                    what: format!("lower-bound sub-step (trial {trial})"),
                    residual: rep.holder_min_slack.min(rep.pointwise_min_slack).abs(),
                    tolerance: 1e-12,
                });
            }
            if rep.degenerate {
                return Ok((
                    None,
                    rep,
                    Some(ExcludedRow { trial_id: trial, reason: "Γ = 0 (degenerate symbol)".into() }),
                ));
            }
            let mut row = TrialRow::bare(trial, "gamma", config, rep.gamma, ValueKind::Gamma);
            row.mu_ap = Some(setup.mu_ap);
            row.lambda_ap = Some(setup.lambda_ap);
            row.nu_a2 = Some(rep.nu_a2);
            row.b_bmolittle = Some(rep.bmo_value);
            Ok((Some(row), rep, None))
        })
        .collect();
    let mut rows = Vec::new();
    let mut reports = Vec::new();
    let mut excluded = Vec::new();
    for o in outcomes {
        let (row, rep, ex) = o?;
        if let Some(r) = row {
            rows.push(r);
        }
        reports.push(rep);
        if let Some(e) = ex {
            excluded.push(e);
        }
    }
    Ok(LowerBoundStudy { rows, reports, excluded })
}

/// Duality-pairing study rows.
pub fn duality_study(config: &ExperimentConfig) -> Result<RatioReport> {
    config.validate(false)?;
    let depth = config.depth;
    let trial_ids: Vec<u32> = (0..config.trials).collect();
    let outcomes: Vec<Result<std::result::Result<TrialRow, ExcludedRow>>> = trial_ids
        .par_iter()
        .map(|&trial| {
            let setup = setup_weights(config, trial as u64)?;
            let mut rng = sub_rng(config.seed, trial as u64, 7);
            let b = gen_b(&config.b, depth, &mut rng);
            let mut coeffs: Vec<(DyadicRectangle, f64)> = Vec::new();
            for r in DyadicRectangle::all_active(depth) {
                if rng.random::<bool>() {
                    coeffs.push((r, rng.random_range(-1.0..1.0)));
                }
            }
            let rep = duality_ratio(&b, &coeffs, &setup.mu, &setup.lambda, config.p)?;
            if rep.degenerate {
                return Ok(Err(ExcludedRow {
                    trial_id: trial,
                    reason: "degenerate duality ratio (zero right-hand side)".into(),
                }));
            }
            let mut row = TrialRow::bare(trial, "duality", config, rep.ratio.unwrap(), ValueKind::Ratio);
            row.mu_ap = Some(setup.mu_ap);
            row.lambda_ap = Some(setup.lambda_ap);
            row.nu_a2 = Some(setup.nu_a2);
            row.b_bmoprod = Some(rep.bmo_value);
            Ok(Ok(row))
        })
        .collect();
    let mut rows = Vec::new();
    let mut excluded = Vec::new();
    for o in outcomes {
        match o? {
            Ok(r) => rows.push(r),
            Err(e) => excluded.push(e),
        }
    }
    Ok(RatioReport::from_rows(rows, excluded))
}

/// Operator-norm study: certified norms of the two model operators and of
/// their nested commutator per trial.
pub fn norm_study(config: &ExperimentConfig) -> Result<RatioReport> {
    config.validate(true)?;
    let depth = config.depth;
    let trial_ids: Vec<u32> = (0..config.trials).collect();
    let per_trial: Vec<Result<Vec<TrialRow>>> = trial_ids
        .par_iter()
        .map(|&trial| -> Result<Vec<TrialRow>> {
            let setup = setup_weights(config, trial as u64)?;
            let mut op_rng = sub_rng(config.seed, trial as u64, 3);
            let u1 = config.operators.u1.generate(Axis::One, depth, &mut op_rng).build(depth)?;
            let u2 = config.operators.u2.generate(Axis::Two, depth, &mut op_rng).build(depth)?;
            let mut b_rng = sub_rng(config.seed, trial as u64, 4);
            let b = gen_b(&config.b, depth, &mut b_rng);
            let nested = nested_commutator(&u1, &b, &u2)?;
            let mut rows = Vec::new();
            let p2 = (config.p - 2.0).abs() < 1e-12;
            for (label, op) in [("u1", &u1), ("u2", &u2), ("nested_commutator", &nested)] {
                let (value, kind) = if p2 {
                    (
                        operator_norm_p2(op, &setup.mu, &setup.lambda, config.seed ^ trial as u64)?.value,
                        ValueKind::CertifiedNorm,
                    )
                } else {
                    (
                        operator_norm_lower(
                            op,
                            &setup.mu,
                            &setup.lambda,
                            config.p,
                            config.norm_budget,
                            config.seed ^ trial as u64,
                        )?,
                        ValueKind::LowerEstimate,
                    )
                };
                let mut row = TrialRow::bare(trial, label, config, value, kind);
                row.mu_ap = Some(setup.mu_ap);
                row.lambda_ap = Some(setup.lambda_ap);
                row.nu_a2 = Some(setup.nu_a2);
                let (k1, k2) = config.operators.u1.complexity(depth).unzip();
                let (v1, v2) = config.operators.u2.complexity(depth).unzip();
                row.k1 = k1;
                row.k2 = k2;
                row.v1 = v1;
                row.v2 = v2;
                rows.push(row);
            }
            Ok(rows)
        })
        .collect();
    let mut rows = Vec::new();
    for r in per_trial {
        rows.extend(r?);
    }
    Ok(RatioReport::from_rows(rows, Vec::new()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> ExperimentConfig {
        ExperimentConfig { depth: 2, trials: 3, seed: 11, ..ExperimentConfig::default() }
    }

    #[test]
    fn identity_suite_passes_on_small_grids() {
        for depth in [1u32, 2, 3] {
            let config = ExperimentConfig { depth, trials: 4, seed: 5, ..ExperimentConfig::default() };
            let rep = identity_suite(&config).unwrap();
            assert!(rep.all_pass, "failures: {:?}", rep.failures);
            assert_eq!(rep.rows.len(), 4 * 7);
        }
    }

    #[test]
    fn identity_suite_checkerboard() {
        let config = ExperimentConfig {
            depth: 3,
            trials: 1,
            b: BSpec::Checkerboard,
            ..ExperimentConfig::default()
        };
        let rep = identity_suite(&config).unwrap();
        assert!(rep.all_pass);
    }

    #[test]
    fn bloom_ratio_reports_finite_rows() {
        let config = small_config();
        let rep = bloom_ratio(&config).unwrap();
        assert_eq!(rep.rows.len() + rep.excluded.len(), 3);
        for row in &rep.rows {
            assert!(row.value.is_finite());
            assert!(row.b_bmoprod.unwrap() > 0.0);
        }
        assert!(rep.sup.is_some());
    }

    #[test]
    fn bloom_ratio_excludes_degenerate_symbols() {
        let config = ExperimentConfig { b: BSpec::Additive, ..small_config() };
        let rep = bloom_ratio(&config).unwrap();
        // additive profiles have no doubly-cancellative content: all excluded
        assert!(rep.rows.is_empty());
        assert_eq!(rep.excluded.len(), 3);
    }

    #[test]
    fn bloom_ratio_deterministic() {
        let config = small_config();
        let a = bloom_ratio(&config).unwrap();
        let b = bloom_ratio(&config).unwrap();
        let ja = serde_json::to_string(&a).unwrap();
        let jb = serde_json::to_string(&b).unwrap();
        assert_eq!(ja, jb);
    }

    #[test]
    fn extremizer_trace_monotone_and_beats_singletons() {
        let config = ExperimentConfig { norm_budget: 60, ..small_config() };
        let rep = extremize_b(&config).unwrap();
        for pair in rep.trace.windows(2) {
            assert!(pair[1] >= pair[0]);
        }
        assert!(rep.best_ratio > 0.0);
        assert_eq!(rep.trace.len() as u32, rep.evaluations);
    }

    #[test]
    fn extremizer_zero_operator_gives_zero() {
        let config = ExperimentConfig {
            operators: OperatorsConfig { u1: OpGenSpec::Zero, u2: default_u2() },
            norm_budget: 30,
            ..small_config()
        };
        let rep = extremize_b(&config).unwrap();
        assert_eq!(rep.best_ratio, 0.0);
    }

    #[test]
    fn complexity_sweep_emits_comparable_rows() {
        let mut sups = Vec::new();
        for k in [1u32, 2] {
            let config = ExperimentConfig {
                depth: 3,
                trials: 3,
                seed: 17,
                operators: OperatorsConfig {
                    u1: OpGenSpec::Shift { k1: k, k2: k },
                    u2: OpGenSpec::Shift { k1: k, k2: k },
                },
                ..ExperimentConfig::default()
            };
            let rep = bloom_ratio(&config).unwrap();
            assert_eq!(rep.rows.len(), 3);
            for row in &rep.rows {
                assert_eq!(row.k1, Some(k));
                assert_eq!(row.v2, Some(k));
            }
            sups.push(rep.sup.unwrap());
        }
        // the sweep reports both complexities; no monotonicity is asserted
        assert!(sups.iter().all(|s| s.is_finite()));
    }

    #[test]
    fn lemma_suite_rows_and_exact_cases() {
        let config = small_config();
        let rep = lemma_suite(&config).unwrap();
        assert!(!rep.rows.is_empty());
        for row in &rep.rows {
            assert!(row.value.is_finite());
            if row.label == "maximal_over_f" {
                assert!(row.value >= 1.0 - 1e-12);
            }
        }
    }

    #[test]
    fn lower_bound_study_runs() {
        let config = ExperimentConfig { depth: 2, trials: 2, seed: 3, ..ExperimentConfig::default() };
        let study = lower_bound_study(&config).unwrap();
        assert_eq!(study.reports.len(), 2);
        for rep in &study.reports {
            assert!(rep.holder_min_slack >= -1e-12);
        }
    }

    #[test]
    fn duality_study_runs() {
        let config = small_config();
        let rep = duality_study(&config).unwrap();
        assert_eq!(rep.rows.len() + rep.excluded.len(), 3);
    }

    #[test]
    fn norm_study_runs() {
        let config = ExperimentConfig { trials: 2, ..small_config() };
        let rep = norm_study(&config).unwrap();
        assert_eq!(rep.rows.len(), 6);
        for row in &rep.rows {
            assert_eq!(row.value_kind, ValueKind::CertifiedNorm);
        }
    }

    #[test]
    fn config_validation() {
        let mut config = small_config();
        config.depth = 7;
        assert!(config.validate(true).is_err());
        assert!(config.validate(false).is_ok());
        config.p = 1.0;
        assert!(config.validate(false).is_err());
    }
}
