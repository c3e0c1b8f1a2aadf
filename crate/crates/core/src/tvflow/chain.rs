//! Exact total-variation proximal map for 1D signals.
//!
//! Uses Condat's direct algorithm on the open chain and, for the cyclic
//! chain, a bisection over the dual variable of the wrap-around edge.

use super::Boundary;

/// Solves `argmin_x 0.5*|x - input|^2 + lambda * sum_i |x[i+1] - x[i]|` on a chain.
pub(crate) fn prox_chain(input: &[f64], lambda: f64, out: &mut [f64]) {
    let width = input.len();
    debug_assert_eq!(out.len(), width);
    if width == 0 {
        return;
    }
    if width == 1 || lambda <= 0.0 {
        out.copy_from_slice(input);
        return;
    }
    let twolambda = 2.0 * lambda;
    let minlambda = -lambda;
    // k: current sample, k0: start of the current segment.
    let (mut k, mut k0) = (0usize, 0usize);
    // Dual variable bounds and the admissible value interval of the segment.
    let mut umin = lambda;
    let mut umax = minlambda;
    let mut vmin = input[0] - lambda;
    let mut vmax = input[0] + lambda;
    // Last positions where umax == -lambda and umin == lambda.
    let (mut kplus, mut kminus) = (0usize, 0usize);
    loop {
        while k == width - 1 {
            if umin < 0.0 {
                // vmin too high: negative jump
                loop {
                    out[k0] = vmin;
                    k0 += 1;
                    if k0 > kminus {
                        break;
                    }
                }
                k = k0;
                kminus = k0;
                vmin = input[k0];
                umin = lambda;
                umax = vmin + umin - vmax;
            } else if umax > 0.0 {
                // vmax too low: positive jump
                loop {
                    out[k0] = vmax;
                    k0 += 1;
                    if k0 > kplus {
                        break;
                    }
                }
                k = k0;
                kplus = k0;
                vmax = input[k0];
                umax = minlambda;
                umin = vmax + umax - vmin;
            } else {
                vmin += umin / (k - k0 + 1) as f64;
                loop {
                    out[k0] = vmin;
                    k0 += 1;
                    if k0 > k {
                        break;
                    }
                }
                return;
            }
        }
        umin += input[k + 1] - vmin;
        if umin < minlambda {
            loop {
                out[k0] = vmin;
                k0 += 1;
                if k0 > kminus {
                    break;
                }
            }
            k = k0;
            kplus = k0;
            kminus = k0;
            vmin = input[k0];
            vmax = vmin + twolambda;
            umin = lambda;
            umax = minlambda;
            continue;
        }
        umax += input[k + 1] - vmax;
        if umax > lambda {
            loop {
                out[k0] = vmax;
                k0 += 1;
                if k0 > kplus {
                    break;
                }
            }
            k = k0;
            kplus = k0;
            kminus = k0;
            vmax = input[k0];
            vmin = vmax - twolambda;
            umin = lambda;
            umax = minlambda;
        } else {
            k += 1;
            if umin >= lambda {
                kminus = k;
                vmin += (umin - lambda) / (kminus - k0 + 1) as f64;
                umin = lambda;
            }
            if umax <= minlambda {
                kplus = k;
                vmax += (umax + lambda) / (kplus - k0 + 1) as f64;
                umax = minlambda;
            }
        }
    }
}

/// Same problem on the cycle `x[0] - x[n-1]` included.
///
/// The wrap edge is dualised: for a fixed dual value `c` in [-1, 1] the
/// problem is an open chain with shifted end samples, and the optimal `c`
/// zeroes the (monotone) end-to-end difference.
pub(crate) fn prox_cycle(input: &[f64], lambda: f64, out: &mut [f64]) {
    let n = input.len();
    if n <= 1 || lambda <= 0.0 {
        out.copy_from_slice(input);
        return;
    }
    let mut shifted = input.to_vec();
    let mut solve = |c: f64, out: &mut [f64]| -> f64 {
        shifted[0] = input[0] - lambda * c;
        shifted[n - 1] = input[n - 1] + lambda * c;
        prox_chain(&shifted, lambda, out);
        out[0] - out[n - 1]
    };
    if solve(-1.0, out) <= 0.0 {
        return;
    }
    if solve(1.0, out) >= 0.0 {
        return;
    }
    let (mut lo, mut hi) = (-1.0f64, 1.0f64);
    for _ in 0..64 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let g = solve(mid, out);
        if g == 0.0 {
            return;
        }
        if g > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    solve(0.5 * (lo + hi), out);
}

pub(crate) fn prox_1d(input: &[f64], lambda: f64, boundary: Boundary, out: &mut [f64]) {
    match boundary {
        Boundary::Neumann => prox_chain(input, lambda, out),
        Boundary::Periodic => prox_cycle(input, lambda, out),
    }
}
