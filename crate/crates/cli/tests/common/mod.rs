//! Independent oracles for the acceptance suite.
//!
//! Everything here recomputes quantities along a different route than the
//! library: singular values come from dense Jacobi iteration instead of
//! matrix-free power iteration, Haar coefficients from explicitly built
//! tensor functions instead of the fast transform, and suprema from flat
//! enumeration. Keep it that way.
#![allow(dead_code)]

use bloomlab_core::dyadic::{
    haar, DyadicRectangle, GridFunction, HaarKind, LineFunction,
};
use bloomlab_core::operator::{assemble_matrix, Operator};
use bloomlab_core::rng::stream_rng;
use bloomlab_core::weights::Weight;
use rand::Rng;

pub fn random_grid(depth: u32, seed: u64) -> GridFunction {
    let mut rng = stream_rng(seed, 0x9999);
    GridFunction::from_fn(depth, |_, _| rng.random_range(-2.0..2.0))
}

pub fn random_weight(depth: u32, seed: u64) -> Weight {
    let mut rng = stream_rng(seed, 0xaaaa);
    Weight::new(GridFunction::from_fn(depth, |_, _| rng.random_range(0.25..4.0))).unwrap()
}

/// Largest singular value of a dense matrix by cyclic Jacobi iteration on
/// the normal matrix.
pub fn jacobi_sigma_max(a: &[f64], n: usize) -> f64 {
    let mut b = vec![0.0f64; n * n];
    for i in 0..n {
        for j in 0..n {
            let mut s = 0.0;
            for k in 0..n {
                s += a[k * n + i] * a[k * n + j];
            }
            b[i * n + j] = s;
        }
    }
    let frob: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if frob == 0.0 {
        return 0.0;
    }
    for _sweep in 0..200 {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += b[p * n + q] * b[p * n + q];
            }
        }
        if off.sqrt() <= 1e-15 * frob {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let bpq = b[p * n + q];
                if bpq.abs() <= 1e-300 {
                    continue;
                }
                let theta = (b[q * n + q] - b[p * n + p]) / (2.0 * bpq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let bkp = b[k * n + p];
                    let bkq = b[k * n + q];
                    b[k * n + p] = c * bkp - s * bkq;
                    b[k * n + q] = s * bkp + c * bkq;
                }
                for k in 0..n {
                    let bpk = b[p * n + k];
                    let bqk = b[q * n + k];
                    b[p * n + k] = c * bpk - s * bqk;
                    b[q * n + k] = s * bpk + c * bqk;
                }
            }
        }
    }
    (0..n).map(|i| b[i * n + i]).fold(0.0f64, f64::max).max(0.0).sqrt()
}

/// Assemble `D_λ^{1/2} T D_μ^{-1/2}` densely and return its largest singular
/// value via Jacobi.
pub fn oracle_weighted_norm(t: &Operator, mu: &Weight, lambda: &Weight) -> f64 {
    let m = assemble_matrix(t).expect("instance small enough to assemble");
    let n = m.n;
    let mut a = vec![0.0; n * n];
    for i in 0..n {
        let sl = lambda.grid().values()[i].sqrt();
        for j in 0..n {
            a[i * n + j] = sl * m.data[i * n + j] / mu.grid().values()[j].sqrt();
        }
    }
    jacobi_sigma_max(&a, n)
}

/// Haar coefficient from an explicitly constructed tensor function (no fast
/// transform involved).
pub fn direct_haar_coefficient(
    b: &GridFunction,
    rect: &DyadicRectangle,
) -> f64 {
    let depth = b.depth();
    let hi = haar(&rect.ix, HaarKind::Cancellative, depth).unwrap();
    let hj = haar(&rect.jy, HaarKind::Cancellative, depth).unwrap();
    let tensor = GridFunction::tensor(&hi, &hj);
    b.inner(&tensor)
}

/// Exhaustive product-BMO value over all nonempty unions of finest cells;
/// depth must be at most 2 (65535 candidates at depth 2).
pub fn brute_force_bmo_prod(b: &GridFunction, nu: &Weight) -> f64 {
    let depth = b.depth();
    assert!(depth <= 2);
    let n = b.side();
    let cells = n * n;
    let area = b.cell_area();
    // every active rectangle: cell mask, coefficient weight
    let mut rect_data: Vec<(u32, f64)> = Vec::new();
    for rect in DyadicRectangle::all_active(depth) {
        let coeff = direct_haar_coefficient(b, &rect);
        let mut nu_sum = 0.0;
        let mut mask = 0u32;
        for i in rect.ix.cell_range(depth) {
            for j in rect.jy.cell_range(depth) {
                mask |= 1 << (i * n + j);
                nu_sum += nu.grid().values()[i * n + j];
            }
        }
        let nu_avg = nu_sum / (rect.area() / area);
        rect_data.push((mask, coeff * coeff / nu_avg));
    }
    let mut best = 0.0f64;
    for omega in 1u64..(1u64 << cells) {
        let omega = omega as u32;
        let mut num = 0.0;
        for (mask, w) in &rect_data {
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
            nu_mass += nu.grid().values()[c] * area;
            bits &= bits - 1;
        }
        let value = (num / nu_mass).sqrt();
        if value > best {
            best = value;
        }
    }
    best
}

/// Weak `L^p(w)` quasinorm by direct threshold scan over every data value.
pub fn brute_force_weak_lp(f: &GridFunction, w: &Weight, p: f64) -> f64 {
    let area = f.cell_area();
    let mut best = 0.0f64;
    for v in f.values() {
        let t = v.abs();
        if t == 0.0 {
            continue;
        }
        let mass: f64 = f
            .values()
            .iter()
            .zip(w.grid().values())
            .filter(|(fv, _)| fv.abs() >= t)
            .map(|(_, wv)| wv * area)
            .sum();
        best = best.max(t * mass.powf(1.0 / p));
    }
    best
}

/// Direct quadrature of the lower-bound integrand for one configuration:
/// `μ(R)^{-1/p} ‖ 1_{R̃} Σ_{y ∈ A} (b(x)-b(y))^k K(x_c,y_c) |cell| ‖_{L^{p,∞}(λ)}`.
#[allow(clippy::too_many_arguments)]
pub fn brute_force_gamma_config(
    b: &GridFunction,
    mu: &Weight,
    lambda: &Weight,
    rect: &DyadicRectangle,
    partner: &DyadicRectangle,
    a_cells: &[usize],
    k: u32,
    p: f64,
) -> f64 {
    let depth = b.depth();
    let n = b.side();
    let area = b.cell_area();
    let centre = |c: usize| ((c as f64) + 0.5) / n as f64;
    let mut g = GridFunction::zeros(depth);
    for i in partner.ix.cell_range(depth) {
        for j in partner.jy.cell_range(depth) {
            let x = [centre(i), centre(j)];
            let bx = b.get(i, j);
            let mut acc = 0.0;
            for &c in a_cells {
                let (yi, yj) = (c / n, c % n);
                let y = [centre(yi), centre(yj)];
                let kv = 1.0 / ((x[0] - y[0]) * (x[1] - y[1]));
                acc += (bx - b.values()[c]).powi(k as i32) * kv;
            }
            g.set(i, j, acc * area);
        }
    }
    let weak = brute_force_weak_lp(&g, lambda, p);
    let mu_mass: f64 = {
        let mut s = 0.0;
        for i in rect.ix.cell_range(depth) {
            for j in rect.jy.cell_range(depth) {
                s += mu.grid().values()[i * n + j];
            }
        }
        s * area
    };
    weak / mu_mass.powf(1.0 / p)
}

/// 2D tensor Haar line pair for convenience in tests.
pub fn tensor_haar(depth: u32, rect: &DyadicRectangle) -> GridFunction {
    let hi = haar(&rect.ix, HaarKind::Cancellative, depth).unwrap();
    let hj = haar(&rect.jy, HaarKind::Cancellative, depth).unwrap();
    GridFunction::tensor(&hi, &hj)
}

pub fn constant_line(depth: u32, c: f64) -> LineFunction {
    LineFunction::constant(depth, c)
}

#[cfg(test)]
mod oracle_sanity {
    use super::*;

    #[test]
    fn jacobi_known_singular_values() {
        // A = [[3, 0], [4, 5]]: A^T A = [[25, 20], [20, 25]], eigenvalues 45 and 5
        let a = vec![3.0, 0.0, 4.0, 5.0];
        let sigma = jacobi_sigma_max(&a, 2);
        assert!((sigma - 45f64.sqrt()).abs() < 1e-12, "sigma {sigma}");
    }

    #[test]
    fn jacobi_zero_matrix() {
        assert_eq!(jacobi_sigma_max(&[0.0; 9], 3), 0.0);
    }
}
