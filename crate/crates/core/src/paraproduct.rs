//! Bilinear paraproducts and exact product decompositions.
//!
//! The nine bi-parameter paraproducts `A_1..A_8, W` classify each pair of
//! Haar scales of `b` and `f` (equal / `b` finer / `f` finer, per parameter);
//! the one-parameter families do the same in a single parameter. On a finite
//! grid the scale sums truncate, which leaves the top-slot content of the two
//! factors unmatched. The boundary operators `P^1, P^2, P^{12}` carry exactly
//! that content, turning the formal splittings of `bf` into machine-checkable
//! equalities:
//!
//! ```text
//! bf = Σ_{i=1..8} A_i(b,f) + W(b,f) + P^1(b,f) + P^2(b,f) - P^{12}(b,f)
//! bf = a^k_1(b,f) + a^k_2(b,f) + w^k(b,f) + P^k(b,f)        (k = 1, 2)
//! ```

use serde::{Deserialize, Serialize};

use crate::dyadic::{Axis, AxisPyramid, GridFunction};
use crate::{Error, Result};

/// Tags for the paraproducts and the finite-grid boundary operators.
///
/// `DiffAvg1` is the one-parameter paraproduct pairing a martingale
/// difference of `b` with an average of `f` in parameter 1 (`a^1_2`),
/// `AvgDiff1` the reverse pairing (`w^1`), and so on.
#[derive(Copy, Clone, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
pub enum ParaproductKind {
    A1,
    A2,
    A3,
    A4,
    A5,
    A6,
    A7,
    A8,
    W,
    /// `a^1_1`: `Σ_I Δ_I^1 b Δ_I^1 f`.
    DiffDiff1,
    /// `a^1_2`: `Σ_I Δ_I^1 b E_I^1 f`.
    DiffAvg1,
    /// `w^1`: `Σ_I E_I^1 b Δ_I^1 f`.
    AvgDiff1,
    /// `a^2_1`.
    DiffDiff2,
    /// `a^2_2`.
    DiffAvg2,
    /// `w^2`.
    AvgDiff2,
    /// `P^1(b,f)(x) = (∫ b(y_1, x_2) dy_1)(∫ f(y_1, x_2) dy_1)`.
    P1,
    /// `P^2`, symmetric in parameter 2.
    P2,
    /// `P^{12}(b,f) = (∬ b)(∬ f) 1`.
    P12,
}

impl ParaproductKind {
    pub fn all_bi() -> [ParaproductKind; 9] {
        use ParaproductKind::*;
        [A1, A2, A3, A4, A5, A6, A7, A8, W]
    }

    pub fn one_parameter(axis: Axis) -> [ParaproductKind; 3] {
        use ParaproductKind::*;
        match axis {
            Axis::One => [DiffDiff1, DiffAvg1, AvgDiff1],
            Axis::Two => [DiffDiff2, DiffAvg2, AvgDiff2],
        }
    }

    pub fn name(&self) -> &'static str {
        use ParaproductKind::*;
        match self {
            A1 => "A1",
            A2 => "A2",
            A3 => "A3",
            A4 => "A4",
            A5 => "A5",
            A6 => "A6",
            A7 => "A7",
            A8 => "A8",
            W => "W",
            DiffDiff1 => "a1_1",
            DiffAvg1 => "a1_2",
            AvgDiff1 => "w1",
            DiffDiff2 => "a2_1",
            DiffAvg2 => "a2_2",
            AvgDiff2 => "w2",
            P1 => "P1",
            P2 => "P2",
            P12 => "P12",
        }
    }
}

/// Scale role of a factor at a fixed level, per parameter.
#[derive(Copy, Clone)]
enum Role {
    /// Martingale difference at the level (cancellative content).
    Diff,
    /// Conditional expectation at the level (all strictly coarser content
    /// including the top slot).
    Avg,
}

/// The nine bi-parameter paraproducts in one pass: for a level pair
/// `(l1, l2)` the sum over same-level rectangles collapses to a pointwise
/// product of level operators, since supports of distinct rectangles at one
/// level pair are disjoint.
fn bi_paraproducts(b: &GridFunction, f: &GridFunction) -> [GridFunction; 9] {
    let depth = b.depth();
    let pb1 = AxisPyramid::new(b, Axis::One);
    let pf1 = AxisPyramid::new(f, Axis::One);
    let mut out: [GridFunction; 9] = std::array::from_fn(|_| GridFunction::zeros(depth));
    // (b-role in param 1, b-role in param 2, f-role in param 1, f-role in param 2)
    use Role::*;
    let table: [(usize, [Role; 4]); 9] = [
        (0, [Diff, Diff, Diff, Diff]), // A1
        (1, [Diff, Diff, Avg, Diff]),  // A2
        (2, [Diff, Diff, Diff, Avg]),  // A3
        (3, [Diff, Diff, Avg, Avg]),   // A4
        (4, [Avg, Diff, Diff, Diff]),  // A5
        (5, [Avg, Diff, Diff, Avg]),   // A6
        (6, [Diff, Avg, Diff, Diff]),  // A7
        (7, [Diff, Avg, Avg, Diff]),   // A8
        (8, [Avg, Avg, Diff, Diff]),   // W
    ];
    for l1 in 0..depth {
        let b_diff1 = pb1.difference(l1);
        let b_avg1 = pb1.expectation(l1).clone();
        let f_diff1 = pf1.difference(l1);
        let f_avg1 = pf1.expectation(l1).clone();
        let pb2_diff = AxisPyramid::new(&b_diff1, Axis::Two);
        let pb2_avg = AxisPyramid::new(&b_avg1, Axis::Two);
        let pf2_diff = AxisPyramid::new(&f_diff1, Axis::Two);
        let pf2_avg = AxisPyramid::new(&f_avg1, Axis::Two);
        for l2 in 0..depth {
            for (slot, roles) in table.iter() {
                let bg = match (roles[0], roles[1]) {
                    (Diff, Diff) => pb2_diff.difference(l2),
                    (Diff, Avg) => pb2_diff.expectation(l2).clone(),
                    (Avg, Diff) => pb2_avg.difference(l2),
                    (Avg, Avg) => pb2_avg.expectation(l2).clone(),
                };
                let fg = match (roles[2], roles[3]) {
                    (Diff, Diff) => pf2_diff.difference(l2),
                    (Diff, Avg) => pf2_diff.expectation(l2).clone(),
                    (Avg, Diff) => pf2_avg.difference(l2),
                    (Avg, Avg) => pf2_avg.expectation(l2).clone(),
                };
                out[*slot].add_assign_scaled(1.0, &bg.mul(&fg));
            }
        }
    }
    out
}

/// One-parameter paraproducts `a^k_1, a^k_2, w^k` along the given axis.
fn one_paraproducts(b: &GridFunction, f: &GridFunction, axis: Axis) -> [GridFunction; 3] {
    let depth = b.depth();
    let pb = AxisPyramid::new(b, axis);
    let pf = AxisPyramid::new(f, axis);
    let mut out: [GridFunction; 3] = std::array::from_fn(|_| GridFunction::zeros(depth));
    for l in 0..depth {
        let bd = pb.difference(l);
        let ba = pb.expectation(l);
        let fd = pf.difference(l);
        let fa = pf.expectation(l);
        out[0].add_assign_scaled(1.0, &bd.mul(&fd));
        out[1].add_assign_scaled(1.0, &bd.mul(fa));
        out[2].add_assign_scaled(1.0, &ba.mul(&fd));
    }
    out
}

fn boundary(b: &GridFunction, f: &GridFunction, kind: ParaproductKind) -> GridFunction {
    match kind {
        ParaproductKind::P1 => {
            let ba = b.axis_average(Axis::One, 0);
            let fa = f.axis_average(Axis::One, 0);
            ba.mul(&fa)
        }
        ParaproductKind::P2 => {
            let ba = b.axis_average(Axis::Two, 0);
            let fa = f.axis_average(Axis::Two, 0);
            ba.mul(&fa)
        }
        ParaproductKind::P12 => GridFunction::constant(b.depth(), b.integral() * f.integral()),
        _ => unreachable!("boundary() only handles P-kinds"),
    }
}

/// Evaluate a single paraproduct. Exact bilinear evaluation; sums run over
/// active intervals only.
pub fn paraproduct(kind: ParaproductKind, b: &GridFunction, f: &GridFunction) -> Result<GridFunction> {
    b.check_depth(f)?;
    use ParaproductKind::*;
    Ok(match kind {
        A1 | A2 | A3 | A4 | A5 | A6 | A7 | A8 | W => {
            let idx = match kind {
                A1 => 0,
                A2 => 1,
                A3 => 2,
                A4 => 3,
                A5 => 4,
                A6 => 5,
                A7 => 6,
                A8 => 7,
                W => 8,
                _ => unreachable!(),
            };
            let mut parts = bi_paraproducts(b, f);
            std::mem::replace(&mut parts[idx], GridFunction::zeros(b.depth()))
        }
        DiffDiff1 | DiffAvg1 | AvgDiff1 => {
            let idx = match kind {
                DiffDiff1 => 0,
                DiffAvg1 => 1,
                AvgDiff1 => 2,
                _ => unreachable!(),
            };
            let mut parts = one_paraproducts(b, f, Axis::One);
            std::mem::replace(&mut parts[idx], GridFunction::zeros(b.depth()))
        }
        DiffDiff2 | DiffAvg2 | AvgDiff2 => {
            let idx = match kind {
                DiffDiff2 => 0,
                DiffAvg2 => 1,
                AvgDiff2 => 2,
                _ => unreachable!(),
            };
            let mut parts = one_paraproducts(b, f, Axis::Two);
            std::mem::replace(&mut parts[idx], GridFunction::zeros(b.depth()))
        }
        P1 | P2 | P12 => boundary(b, f, kind),
    })
}

/// Role table shared by the forward evaluation and the adjoint: roles of the
/// `b` factor and of the `f` factor per parameter, for each bi-parameter kind.
fn bi_roles(kind: ParaproductKind) -> Option<([Role; 2], [Role; 2])> {
    use ParaproductKind::*;
    use Role::*;
    Some(match kind {
        A1 => ([Diff, Diff], [Diff, Diff]),
        A2 => ([Diff, Diff], [Avg, Diff]),
        A3 => ([Diff, Diff], [Diff, Avg]),
        A4 => ([Diff, Diff], [Avg, Avg]),
        A5 => ([Avg, Diff], [Diff, Diff]),
        A6 => ([Avg, Diff], [Diff, Avg]),
        A7 => ([Diff, Avg], [Diff, Diff]),
        A8 => ([Diff, Avg], [Avg, Diff]),
        W => ([Avg, Avg], [Diff, Diff]),
        _ => return None,
    })
}

fn level_transform(p1: &AxisPyramid, l1: u32, l2: u32, roles: [Role; 2]) -> GridFunction {
    let first = match roles[0] {
        Role::Diff => p1.difference(l1),
        Role::Avg => p1.expectation(l1).clone(),
    };
    let p2 = AxisPyramid::new(&first, Axis::Two);
    match roles[1] {
        Role::Diff => p2.difference(l2),
        Role::Avg => p2.expectation(l2).clone(),
    }
}

/// The linear map `f -> A_i(b, f)` (or `W(b, f)`) with its adjoint.
///
/// The adjoint moves the `f`-side projections onto the product: for a kind
/// with `f`-roles `Q` the adjoint is `g -> Σ_levels Q[(roles_b b) g]`, exact
/// because same-level projections are self-adjoint and supports align.
pub fn paraproduct_operator(kind: ParaproductKind, b: &GridFunction) -> crate::operator::Operator {
    let (rb, rf) = bi_roles(kind).expect("paraproduct_operator covers bi-parameter kinds");
    let depth = b.depth();
    // Precompute all level transforms of b once.
    let pb1 = AxisPyramid::new(b, Axis::One);
    let mut b_slices: Vec<GridFunction> = Vec::with_capacity((depth * depth) as usize);
    for l1 in 0..depth {
        for l2 in 0..depth {
            b_slices.push(level_transform(&pb1, l1, l2, rb));
        }
    }
    let b_slices = std::sync::Arc::new(b_slices);
    let b2 = b_slices.clone();
    let forward = move |f: &GridFunction| -> GridFunction {
        let pf1 = AxisPyramid::new(f, Axis::One);
        let mut out = GridFunction::zeros(depth);
        for l1 in 0..depth {
            let first = match rf[0] {
                Role::Diff => pf1.difference(l1),
                Role::Avg => pf1.expectation(l1).clone(),
            };
            let pf2 = AxisPyramid::new(&first, Axis::Two);
            for l2 in 0..depth {
                let fg = match rf[1] {
                    Role::Diff => pf2.difference(l2),
                    Role::Avg => pf2.expectation(l2).clone(),
                };
                out.add_assign_scaled(1.0, &b_slices[(l1 * depth + l2) as usize].mul(&fg));
            }
        }
        out
    };
    let adjoint = move |g: &GridFunction| -> GridFunction {
        let mut out = GridFunction::zeros(depth);
        for l1 in 0..depth {
            for l2 in 0..depth {
                let prod = b2[(l1 * depth + l2) as usize].mul(g);
                let p1 = AxisPyramid::new(&prod, Axis::One);
                let first = match rf[0] {
                    Role::Diff => p1.difference(l1),
                    Role::Avg => p1.expectation(l1).clone(),
                };
                let p2 = AxisPyramid::new(&first, Axis::Two);
                let back = match rf[1] {
                    Role::Diff => p2.difference(l2),
                    Role::Avg => p2.expectation(l2).clone(),
                };
                out.add_assign_scaled(1.0, &back);
            }
        }
        out
    };
    crate::operator::Operator::from_parts(
        depth,
        format!("{}(b,·)", kind.name()),
        None,
        std::sync::Arc::new(forward),
        std::sync::Arc::new(adjoint),
    )
}

/// Which splitting of `bf` to perform.
#[derive(Copy, Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecompositionMode {
    Bi,
    Param1,
    Param2,
}

/// All parts of a product splitting, with the verified residual.
#[derive(Clone, Debug)]
pub struct ProductDecomposition {
    pub mode: DecompositionMode,
    /// `(kind, sign, part)`: the identity reads `bf = Σ sign * part`.
    pub parts: Vec<(ParaproductKind, f64, GridFunction)>,
    pub residual_sup: f64,
    pub tolerance: f64,
}

impl ProductDecomposition {
    pub fn part(&self, kind: ParaproductKind) -> Option<&GridFunction> {
        self.parts.iter().find(|(k, _, _)| *k == kind).map(|(_, _, g)| g)
    }

    pub fn assemble(&self, depth: u32) -> GridFunction {
        let mut sum = GridFunction::zeros(depth);
        for (_, sign, g) in &self.parts {
            sum.add_assign_scaled(*sign, g);
        }
        sum
    }
}

/// Split `bf` into named parts and verify the finite-grid identity exactly.
///
/// A residual above `1e-12 (1 + ‖b‖_∞ ‖f‖_∞)` is a bug signal and comes back
/// as an error, never as a silently degraded report.
pub fn decompose_product(
    b: &GridFunction,
    f: &GridFunction,
    mode: DecompositionMode,
) -> Result<ProductDecomposition> {
    b.check_depth(f)?;
    let depth = b.depth();
    let mut parts: Vec<(ParaproductKind, f64, GridFunction)> = Vec::new();
    match mode {
        DecompositionMode::Bi => {
            let bi = bi_paraproducts(b, f);
            for (kind, part) in ParaproductKind::all_bi().into_iter().zip(bi) {
                parts.push((kind, 1.0, part));
            }
            parts.push((ParaproductKind::P1, 1.0, boundary(b, f, ParaproductKind::P1)));
            parts.push((ParaproductKind::P2, 1.0, boundary(b, f, ParaproductKind::P2)));
            parts.push((ParaproductKind::P12, -1.0, boundary(b, f, ParaproductKind::P12)));
        }
        DecompositionMode::Param1 | DecompositionMode::Param2 => {
            let axis = if mode == DecompositionMode::Param1 { Axis::One } else { Axis::Two };
            let one = one_paraproducts(b, f, axis);
            for (kind, part) in ParaproductKind::one_parameter(axis).into_iter().zip(one) {
                parts.push((kind, 1.0, part));
            }
            let pk = if axis == Axis::One { ParaproductKind::P1 } else { ParaproductKind::P2 };
            parts.push((pk, 1.0, boundary(b, f, pk)));
        }
    }
    let product = b.mul(f);
    let mut assembled = GridFunction::zeros(depth);
    for (_, sign, g) in &parts {
        assembled.add_assign_scaled(*sign, g);
    }
    let residual_sup = product.sub(&assembled).sup_norm();
    let tolerance = 1e-12 * (1.0 + b.sup_norm() * f.sup_norm());
    if residual_sup > tolerance {
        return Err(Error::IdentityResidual {
            what: format!("product decomposition ({mode:?})"),
            residual: residual_sup,
            tolerance,
        });
    }
    Ok(ProductDecomposition { mode, parts, residual_sup, tolerance })
}
