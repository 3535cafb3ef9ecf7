//! Dense kernels with a fixed floating-point evaluation order.
//!
//! Every inner product is accumulated in [`LANES`] interleaved partial sums
//! (lane `l` takes indices `k ≡ l mod LANES`), the lanes are folded in a
//! fixed tree, and the tail is added last. Blocking, tiling and the choice
//! of parallel mode only change which element is computed when, never the
//! order of operations inside an element, so all kernels here agree bit for
//! bit with [`dot`].

use crate::par::{self, Parallelism};

pub const LANES: usize = 4;
const KC: usize = 2048;
const MC: usize = 16;
const TR: usize = 2;
const TC: usize = 4;

#[inline]
fn fold(acc: [f64; LANES]) -> f64 {
    (acc[0] + acc[1]) + (acc[2] + acc[3])
}

/// Inner product in the canonical order.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let k = a.len();
    let body = k - k % LANES;
    let mut acc = [0.0; LANES];
    for (ca, cb) in a[..body].chunks_exact(LANES).zip(b[..body].chunks_exact(LANES)) {
        for l in 0..LANES {
            acc[l] += ca[l] * cb[l];
        }
    }
    let mut s = fold(acc);
    for i in body..k {
        s += a[i] * b[i];
    }
    s
}

pub fn norm_sq(a: &[f64]) -> f64 {
    dot(a, a)
}

/// `A · Bᵀ` for row-major `A` (`rows × k`) and `B` (`cols × k`), returned
/// row-major `rows × cols`. Each entry equals `dot(a_i, b_j)` exactly.
pub fn a_bt(a: &[f64], b: &[f64], rows: usize, cols: usize, k: usize, mode: Parallelism) -> Vec<f64> {
    assert_eq!(a.len(), rows * k);
    assert_eq!(b.len(), cols * k);
    let mut out = vec![0.0; rows * cols];
    if rows == 0 || cols == 0 {
        return out;
    }
    let body = k - k % LANES;
    par::for_each_block(&mut out, cols, MC, mode, |r0, block| {
        let nr = block.len() / cols;
        let mut acc = vec![[0.0f64; LANES]; nr * cols];
        let mut k0 = 0;
        while k0 < body {
            let k1 = (k0 + KC).min(body);
            let mut i = 0;
            while i < nr {
                let ti = TR.min(nr - i);
                let mut j = 0;
                while j < cols {
                    let tj = TC.min(cols - j);
                    if ti == TR && tj == TC {
                        micro_full(a, b, k, r0 + i, j, k0, k1, &mut acc, i, cols);
                    } else {
                        for ii in 0..ti {
                            for jj in 0..tj {
                                let ar = &a[(r0 + i + ii) * k..][k0..k1];
                                let br = &b[(j + jj) * k..][k0..k1];
                                let cell = &mut acc[(i + ii) * cols + j + jj];
                                for (ca, cb) in ar.chunks_exact(LANES).zip(br.chunks_exact(LANES)) {
                                    for l in 0..LANES {
                                        cell[l] += ca[l] * cb[l];
                                    }
                                }
                            }
                        }
                    }
                    j += tj;
                }
                i += ti;
            }
            k0 = k1;
        }
        for ii in 0..nr {
            let ar = &a[(r0 + ii) * k..(r0 + ii + 1) * k];
            for jj in 0..cols {
                let br = &b[jj * k..(jj + 1) * k];
                let mut s = fold(acc[ii * cols + jj]);
                for t in body..k {
                    s += ar[t] * br[t];
                }
                block[ii * cols + jj] = s;
            }
        }
    });
    out
}

#[allow(clippy::too_many_arguments)]
#[inline(always)]
fn micro_full(
    a: &[f64],
    b: &[f64],
    k: usize,
    ar0: usize,
    bj0: usize,
    k0: usize,
    k1: usize,
    acc: &mut [[f64; LANES]],
    i: usize,
    cols: usize,
) {
    let a0 = &a[ar0 * k..][k0..k1];
    let a1 = &a[(ar0 + 1) * k..][k0..k1];
    let b0 = &b[bj0 * k..][k0..k1];
    let b1 = &b[(bj0 + 1) * k..][k0..k1];
    let b2 = &b[(bj0 + 2) * k..][k0..k1];
    let b3 = &b[(bj0 + 3) * k..][k0..k1];
    let mut r = [[[0.0f64; LANES]; TC]; TR];
    for ii in 0..TR {
        for jj in 0..TC {
            r[ii][jj] = acc[(i + ii) * cols + bj0 + jj];
        }
    }
    let len = k1 - k0;
    let mut t = 0;
    while t < len {
        let x0 = &a0[t..t + LANES];
        let x1 = &a1[t..t + LANES];
        let ys = [&b0[t..t + LANES], &b1[t..t + LANES], &b2[t..t + LANES], &b3[t..t + LANES]];
        for jj in 0..TC {
            for l in 0..LANES {
                r[0][jj][l] += x0[l] * ys[jj][l];
                r[1][jj][l] += x1[l] * ys[jj][l];
            }
        }
        t += LANES;
    }
    for ii in 0..TR {
        for jj in 0..TC {
            acc[(i + ii) * cols + bj0 + jj] = r[ii][jj];
        }
    }
}

/// `W[j] += s_j · Σ_i C[j, i] · X[i]` for every row `j`, with the sum over
/// `i` formed in ascending order before it is scaled and added to `W[j]`.
///
/// `w` is `rows × k`, `c` is `rows × n`, `x` is `n × k`, `s` has `rows`
/// entries. Rows of `C` that are entirely zero leave `W[j]` untouched.
#[allow(clippy::too_many_arguments)]
pub fn add_combination(
    w: &mut [f64],
    c: &[f64],
    x: &[f64],
    rows: usize,
    n: usize,
    k: usize,
    s: &[f64],
    mode: Parallelism,
) {
    assert_eq!(w.len(), rows * k);
    assert_eq!(s.len(), rows);
    assert_eq!(c.len(), rows * n);
    assert_eq!(x.len(), n * k);
    const RB: usize = 8;
    par::for_each_block(w, k, RB, mode, |r0, block| {
        let nr = block.len() / k;
        let mut delta = vec![0.0f64; nr * KC.min(k)];
        let mut k0 = 0;
        while k0 < k {
            let k1 = (k0 + KC).min(k);
            let len = k1 - k0;
            delta[..nr * len].iter_mut().for_each(|v| *v = 0.0);
            for i in 0..n {
                let xi = &x[i * k + k0..i * k + k1];
                for r in 0..nr {
                    let cji = c[(r0 + r) * n + i];
                    if cji == 0.0 {
                        continue;
                    }
                    let d = &mut delta[r * len..(r + 1) * len];
                    for (dv, xv) in d.iter_mut().zip(xi) {
                        *dv += cji * xv;
                    }
                }
            }
            for r in 0..nr {
                if c[(r0 + r) * n..(r0 + r + 1) * n].iter().all(|&v| v == 0.0) {
                    continue;
                }
                let d = &delta[r * len..(r + 1) * len];
                let sr = s[r0 + r];
                for (wv, dv) in block[r * k + k0..r * k + k1].iter_mut().zip(d) {
                    *wv += sr * dv;
                }
            }
            k0 = k1;
        }
    });
}
