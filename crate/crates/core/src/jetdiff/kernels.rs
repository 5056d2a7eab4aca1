//! Dense kernels behind the tape: strided GEMM and the truncated Taylor
//! recurrence for tanh.
//!
//! Jet buffers are stored block-major: block `b` (a Taylor coefficient slot)
//! occupies rows `b*batch .. (b+1)*batch`, each row is one point with
//! `width` contiguous unit values.

/// `c = alpha * a * b + beta * c` over strided row-major views.
///
/// Every output element is accumulated by the same micro-kernel in the same
/// `k` order regardless of `m`, so a row's result does not depend on how many
/// other rows share the call.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    rsa: usize,
    csa: usize,
    b: &[f64],
    rsb: usize,
    csb: usize,
    beta: f64,
    c: &mut [f64],
    rsc: usize,
) {
    if m == 0 || n == 0 {
        return;
    }
    if k > 0 {
        assert!(a.len() > (m - 1) * rsa + (k - 1) * csa, "gemm: lhs view out of bounds");
        assert!(b.len() > (k - 1) * rsb + (n - 1) * csb, "gemm: rhs view out of bounds");
    }
    assert!(c.len() > (m - 1) * rsc + (n - 1), "gemm: output view out of bounds");
    // SAFETY: the asserts above bound every index the kernel touches.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            1,
        );
    }
}

/// Block indices of one axis: `[0, first, first+1, ..]` for orders `0..=order`.
pub(crate) fn axis_blocks(first: usize, order: usize) -> Vec<usize> {
    std::iter::once(0).chain((0..order).map(|k| first + k)).collect()
}

#[inline]
fn blk(buf: &[f64], b: usize, len: usize) -> &[f64] {
    &buf[b * len..(b + 1) * len]
}

#[inline]
fn blk_mut(buf: &mut [f64], b: usize, len: usize) -> &mut [f64] {
    &mut buf[b * len..(b + 1) * len]
}

/// Forward tanh over a jet. `y` receives tanh coefficients, `s` receives the
/// coefficients of `1 - y^2` (needed again by the reverse pass).
///
/// With `s = 1 - y^2` and `y' = s z'`, matching Taylor coefficients gives
/// `k y_k = sum_{i=1..k} i z_i s_{k-i}` and `s_k = -sum_{i=0..k} y_i y_{k-i}`.
/// Each coefficient block is contiguous over the whole batch, so every step
/// is an elementwise pass over `batch * width` values.
pub(crate) fn tanh_jet_forward(
    z: &[f64],
    y: &mut [f64],
    s: &mut [f64],
    axes: &[Vec<usize>],
    batch: usize,
    width: usize,
) {
    let len = batch * width;
    for ((yv, sv), zv) in blk_mut(y, 0, len).iter_mut().zip(blk_mut(s, 0, len)).zip(blk(z, 0, len)) {
        let v = zv.tanh();
        *yv = v;
        *sv = 1.0 - v * v;
    }
    let mut acc = vec![0.0; len];
    for blocks in axes {
        let order = blocks.len() - 1;
        for k in 1..=order {
            acc.fill(0.0);
            for i in 1..=k {
                let w = i as f64 / k as f64;
                let zi = blk(z, blocks[i], len);
                let si = blk(s, blocks[k - i], len);
                for ((a, zv), sv) in acc.iter_mut().zip(zi).zip(si) {
                    *a += w * zv * sv;
                }
            }
            blk_mut(y, blocks[k], len).copy_from_slice(&acc);
            // The top-order s coefficient never feeds a y coefficient.
            if k == order {
                continue;
            }
            acc.fill(0.0);
            for i in 0..=k {
                let yi = blk(y, blocks[i], len);
                let yk = blk(y, blocks[k - i], len);
                for ((a, p), q) in acc.iter_mut().zip(yi).zip(yk) {
                    *a -= p * q;
                }
            }
            blk_mut(s, blocks[k], len).copy_from_slice(&acc);
        }
    }
}

/// Reverse pass of [`tanh_jet_forward`]: accumulates into `dz` given `dy`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn tanh_jet_backward(
    z: &[f64],
    y: &[f64],
    s: &[f64],
    dy: &[f64],
    dz: &mut [f64],
    axes: &[Vec<usize>],
    batch: usize,
    width: usize,
) {
    let len = batch * width;
    // adjoints of the y and s coefficients
    let mut ybar = dy.to_vec();
    let mut sbar = vec![0.0; s.len()];
    for blocks in axes {
        let order = blocks.len() - 1;
        for k in (1..=order).rev() {
            let bk = blocks[k];
            // s_k = -sum_i y_i y_{k-i}
            if k < order {
                for i in 0..=k {
                    let sb = blk(&sbar, bk, len);
                    let ykm = blk(y, blocks[k - i], len);
                    for ((yb, sv), yv) in blk_mut(&mut ybar, blocks[i], len).iter_mut().zip(sb).zip(ykm) {
                        *yb -= 2.0 * sv * yv;
                    }
                }
            }
            // y_k = sum_i (i/k) z_i s_{k-i}
            for i in 1..=k {
                let w = i as f64 / k as f64;
                let yb = blk(&ybar, bk, len);
                let zi = blk(z, blocks[i], len);
                let ski = blk(s, blocks[k - i], len);
                let dzi = blk_mut(dz, blocks[i], len);
                for ((d, g), sv) in dzi.iter_mut().zip(yb).zip(ski) {
                    *d += w * g * sv;
                }
                let sb = blk_mut(&mut sbar, blocks[k - i], len);
                for ((d, g), zv) in sb.iter_mut().zip(yb).zip(zi) {
                    *d += w * g * zv;
                }
            }
        }
    }
    let (y0, s0) = (blk(y, 0, len), blk(s, 0, len));
    let (yb0, sb0) = (blk(&ybar, 0, len), blk(&sbar, 0, len));
    for (j, d) in blk_mut(dz, 0, len).iter_mut().enumerate() {
        *d += (yb0[j] - 2.0 * y0[j] * sb0[j]) * s0[j];
    }
}
