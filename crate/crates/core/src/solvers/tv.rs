//! Exact 1-D total-variation proximal operator.
//!
//! `tv_prox_1d(v, λ)` returns the unique minimizer of
//! `½‖x − v‖₂² + λ·Σ|x_{j+1} − x_j|` by the taut-string construction: with
//! `F` the running sums of `v`, the solution is the discrete derivative of
//! the shortest path from `(0, 0)` to `(n, F_n)` through the tube
//! `[F_k − λ, F_k + λ]` at interior points. The path is built greedily with
//! convex/concave hulls from a moving anchor; a forced bend finalizes one
//! constant piece and restarts the hulls at the bend.

use crate::scalar::Scalar;

/// Exact minimizer of `½‖x − v‖₂² + λ·Σ|x_{j+1} − x_j|`, `λ ≥ 0`.
/// The output is piecewise constant; values within a piece are bitwise equal.
pub fn tv_prox_1d<F: Scalar>(v: &[F], lambda: F) -> Vec<F> {
    assert!(lambda >= F::zero(), "fusion weight must be nonnegative");
    let n = v.len();
    if n <= 1 || lambda == F::zero() {
        return v.to_vec();
    }

    // cumulative sums: f[0] = 0, f[k] = v[0] + … + v[k−1]
    let mut f = Vec::with_capacity(n + 1);
    f.push(F::zero());
    let mut acc = F::zero();
    for &x in v {
        acc += x;
        f.push(acc);
    }

    let mut out = vec![F::zero(); n];
    let mut anchor_idx = 0usize;
    let mut anchor_val = F::zero();

    // hull slope from point a to point b
    let slope = |a: (usize, F), b: (usize, F)| (b.1 - a.1) / F::from_usize(b.0 - a.0).unwrap();

    let mut upper: Vec<(usize, F)> = Vec::with_capacity(n + 1);
    let mut lower: Vec<(usize, F)> = Vec::with_capacity(n + 1);

    'outer: while anchor_idx < n {
        upper.clear();
        lower.clear();
        upper.push((anchor_idx, anchor_val));
        lower.push((anchor_idx, anchor_val));

        for j in (anchor_idx + 1)..=n {
            let (u_j, l_j) = if j == n {
                (f[n], f[n]) // endpoint pinned
            } else {
                (f[j] + lambda, f[j] - lambda)
            };

            // greatest convex minorant of the ceiling: slopes non-decreasing
            let pu = (j, u_j);
            while upper.len() >= 2 {
                let m = upper.len();
                if slope(upper[m - 2], upper[m - 1]) >= slope(upper[m - 1], pu) {
                    upper.pop();
                } else {
                    break;
                }
            }
            upper.push(pu);

            // least concave majorant of the floor: slopes non-increasing
            let pl = (j, l_j);
            while lower.len() >= 2 {
                let m = lower.len();
                if slope(lower[m - 2], lower[m - 1]) <= slope(lower[m - 1], pl) {
                    lower.pop();
                } else {
                    break;
                }
            }
            lower.push(pl);

            // the feasible initial slope window is [floor hull, ceiling hull];
            // when it empties, the string is forced to bend at the earlier
            // binding vertex
            if slope(upper[0], upper[1]) < slope(lower[0], lower[1]) {
                let (iu, vu) = upper[1];
                let (il, vl) = lower[1];
                let (bend_idx, bend_val) = if iu <= il { (iu, vu) } else { (il, vl) };
                let s = slope((anchor_idx, anchor_val), (bend_idx, bend_val));
                for x in out.iter_mut().take(bend_idx).skip(anchor_idx) {
                    *x = s;
                }
                anchor_idx = bend_idx;
                anchor_val = bend_val;
                continue 'outer;
            }
        }

        // no bend forced through the pinned endpoint: finish straight
        let s = slope((anchor_idx, anchor_val), (n, f[n]));
        for x in out.iter_mut().take(n).skip(anchor_idx) {
            *x = s;
        }
        anchor_idx = n;
    }
    out
}

/// Number of maximal constant pieces (exact equality of neighbors).
pub fn piece_count<F: Scalar>(x: &[F]) -> usize {
    if x.is_empty() {
        return 0;
    }
    1 + x.windows(2).filter(|w| w[0] != w[1]).count()
}
