//! Raw numerical kernels behind the tape ops.
//!
//! The 3x3 stencil is the hot path of the whole workspace, so the channel
//! combinations used by the production network are monomorphized with const
//! generics (the compiler keeps the named accumulator rows in vector
//! registers); everything else goes through the dynamic fallback.

use crate::real::Real;

/// out[y][x][co] = bias[co] + sum_{dy,dx,ci} x[y+dy-1][x+dx-1][ci] * k[dy][dx][ci][co]
///
/// Zero padding of 1 on every border keeps the spatial dims. `bias` may be
/// empty (used by the backward-input pass).
pub fn conv3x3<T: Real>(
    x: &[T],
    k: &[T],
    bias: &[T],
    out: &mut [T],
    h: usize,
    w: usize,
    cin: usize,
    cout: usize,
) {
    debug_assert_eq!(x.len(), h * w * cin);
    debug_assert_eq!(k.len(), 9 * cin * cout);
    debug_assert_eq!(out.len(), h * w * cout);
    debug_assert!(bias.is_empty() || bias.len() == cout);
    match (cin, cout) {
        (32, 32) => stencil_spec::<T, 32, 32>(x, k, bias, out, h, w),
        (32, 16) => stencil_spec::<T, 32, 16>(x, k, bias, out, h, w),
        (16, 8) => stencil_spec::<T, 16, 8>(x, k, bias, out, h, w),
        (8, 3) => stencil_spec::<T, 8, 3>(x, k, bias, out, h, w),
        (16, 32) => stencil_spec::<T, 16, 32>(x, k, bias, out, h, w),
        (8, 16) => stencil_spec::<T, 8, 16>(x, k, bias, out, h, w),
        (3, 8) => stencil_spec::<T, 3, 8>(x, k, bias, out, h, w),
        _ => stencil_dyn(x, k, bias, out, h, w, cin, cout),
    }
}

/// Rewrites k[dy][dx][ci][co] as k'[dy][dx][co][ci] with the spatial taps
/// flipped, so the backward-input pass is the same stencil with the channel
/// roles swapped.
pub fn flip_transpose_kernel<T: Real>(k: &[T], cin: usize, cout: usize) -> Vec<T> {
    let mut kt = vec![T::zero(); 9 * cin * cout];
    for dy in 0..3 {
        for dx in 0..3 {
            let src = ((2 - dy) * 3 + (2 - dx)) * cin * cout;
            let dst = (dy * 3 + dx) * cin * cout;
            for ci in 0..cin {
                for co in 0..cout {
                    kt[dst + co * cin + ci] = k[src + ci * cout + co];
                }
            }
        }
    }
    kt
}

/// dL/dx for conv3x3: a flipped-kernel stencil over the output gradient.
pub fn conv3x3_backward_input<T: Real>(
    grad_out: &[T],
    k: &[T],
    grad_x: &mut [T],
    h: usize,
    w: usize,
    cin: usize,
    cout: usize,
) {
    let kt = flip_transpose_kernel(k, cin, cout);
    conv3x3(grad_out, &kt, &[], grad_x, h, w, cout, cin);
}

/// dL/dk accumulated into `grad_k` (not cleared: callers accumulate).
pub fn conv3x3_backward_kernel<T: Real>(
    x: &[T],
    grad_out: &[T],
    grad_k: &mut [T],
    h: usize,
    w: usize,
    cin: usize,
    cout: usize,
) {
    match (cin, cout) {
        (32, 32) => dw_spec::<T, 32, 32>(x, grad_out, grad_k, h, w),
        (32, 16) => dw_spec::<T, 32, 16>(x, grad_out, grad_k, h, w),
        (16, 8) => dw_spec::<T, 16, 8>(x, grad_out, grad_k, h, w),
        (8, 3) => dw_spec::<T, 8, 3>(x, grad_out, grad_k, h, w),
        _ => dw_dyn(x, grad_out, grad_k, h, w, cin, cout),
    }
}

/// dL/dbias: per-channel sum of the output gradient.
pub fn conv3x3_backward_bias<T: Real>(grad_out: &[T], grad_b: &mut [T], cout: usize) {
    for px in grad_out.chunks_exact(cout) {
        for (g, &v) in grad_b.iter_mut().zip(px) {
            *g += v;
        }
    }
}

fn stencil_spec<T: Real, const CIN: usize, const COUT: usize>(
    x: &[T],
    k: &[T],
    bias: &[T],
    out: &mut [T],
    h: usize,
    w: usize,
) {
    let mut a0 = [T::zero(); COUT];
    let mut a1 = [T::zero(); COUT];
    let mut a2 = [T::zero(); COUT];
    let mut a3 = [T::zero(); COUT];
    let seed: [T; COUT] = if bias.is_empty() {
        [T::zero(); COUT]
    } else {
        let mut s = [T::zero(); COUT];
        s.copy_from_slice(bias);
        s
    };
    for y in 0..h {
        let interior_row = y >= 1 && y + 1 < h;
        let mut xx = 0usize;
        if interior_row && w >= 2 {
            // Left border pixel.
            stencil_pixel_slow(x, k, &seed, out, h, w, CIN, COUT, y, 0);
            xx = 1;
            // 4-pixel blocks with full 3x3 support.
            while xx + 4 <= w - 1 {
                a0.copy_from_slice(&seed);
                a1.copy_from_slice(&seed);
                a2.copy_from_slice(&seed);
                a3.copy_from_slice(&seed);
                for dy in 0..3usize {
                    let rowbase = (y + dy - 1) * w;
                    for dx in 0..3usize {
                        let kbase = (dy * 3 + dx) * CIN * COUT;
                        let i0 = (rowbase + xx + dx - 1) * CIN;
                        for ci in 0..CIN {
                            let kr = &k[kbase + ci * COUT..kbase + ci * COUT + COUT];
                            let xv0 = x[i0 + ci];
                            let xv1 = x[i0 + CIN + ci];
                            let xv2 = x[i0 + 2 * CIN + ci];
                            let xv3 = x[i0 + 3 * CIN + ci];
                            for co in 0..COUT {
                                a0[co] = xv0.mul_add(kr[co], a0[co]);
                                a1[co] = xv1.mul_add(kr[co], a1[co]);
                                a2[co] = xv2.mul_add(kr[co], a2[co]);
                                a3[co] = xv3.mul_add(kr[co], a3[co]);
                            }
                        }
                    }
                }
                let obase = (y * w + xx) * COUT;
                out[obase..obase + COUT].copy_from_slice(&a0);
                out[obase + COUT..obase + 2 * COUT].copy_from_slice(&a1);
                out[obase + 2 * COUT..obase + 3 * COUT].copy_from_slice(&a2);
                out[obase + 3 * COUT..obase + 4 * COUT].copy_from_slice(&a3);
                xx += 4;
            }
        }
        // Remainder and border pixels.
        while xx < w {
            stencil_pixel_slow(x, k, &seed, out, h, w, CIN, COUT, y, xx);
            xx += 1;
        }
    }
}

#[allow(clippy::too_many_arguments)]
#[inline]
fn stencil_pixel_slow<T: Real>(
    x: &[T],
    k: &[T],
    seed: &[T],
    out: &mut [T],
    h: usize,
    w: usize,
    cin: usize,
    cout: usize,
    y: usize,
    xx: usize,
) {
    let obase = (y * w + xx) * cout;
    let o = &mut out[obase..obase + cout];
    o.copy_from_slice(seed);
    for dy in 0..3usize {
        let yy = y as isize + dy as isize - 1;
        if yy < 0 || yy >= h as isize {
            continue;
        }
        for dx in 0..3usize {
            let xs = xx as isize + dx as isize - 1;
            if xs < 0 || xs >= w as isize {
                continue;
            }
            let ibase = (yy as usize * w + xs as usize) * cin;
            let kbase = (dy * 3 + dx) * cin * cout;
            for ci in 0..cin {
                let xv = x[ibase + ci];
                let kr = &k[kbase + ci * cout..kbase + ci * cout + cout];
                for co in 0..cout {
                    o[co] = xv.mul_add(kr[co], o[co]);
                }
            }
        }
    }
}

fn stencil_dyn<T: Real>(
    x: &[T],
    k: &[T],
    bias: &[T],
    out: &mut [T],
    h: usize,
    w: usize,
    cin: usize,
    cout: usize,
) {
    let seed = if bias.is_empty() {
        vec![T::zero(); cout]
    } else {
        bias.to_vec()
    };
    for y in 0..h {
        for xx in 0..w {
            stencil_pixel_slow(x, k, &seed, out, h, w, cin, cout, y, xx);
        }
    }
}

fn dw_spec<T: Real, const CIN: usize, const COUT: usize>(
    x: &[T],
    g: &[T],
    dw: &mut [T],
    h: usize,
    w: usize,
) {
    let mut a0 = [T::zero(); COUT];
    let mut a1 = [T::zero(); COUT];
    let mut a2 = [T::zero(); COUT];
    let mut a3 = [T::zero(); COUT];
    for dy in 0..3usize {
        // Output rows whose tap row y+dy-1 stays on the grid.
        let y_lo = 1usize.saturating_sub(dy);
        let y_hi = (h + 1 - dy).min(h);
        for dx in 0..3usize {
            let x_lo = 1usize.saturating_sub(dx);
            let x_hi = (w + 1 - dx).min(w);
            if y_lo >= y_hi || x_lo >= x_hi {
                continue;
            }
            let kbase = (dy * 3 + dx) * CIN * COUT;
            let mut ci = 0;
            while ci + 4 <= CIN {
                a0.fill(T::zero());
                a1.fill(T::zero());
                a2.fill(T::zero());
                a3.fill(T::zero());
                for y in y_lo..y_hi {
                    let grow = y * w;
                    let xrow = (y + dy - 1) * w;
                    for xx in x_lo..x_hi {
                        let gb = (grow + xx) * COUT;
                        let gr = &g[gb..gb + COUT];
                        let ibase = (xrow + xx + dx - 1) * CIN + ci;
                        let xv0 = x[ibase];
                        let xv1 = x[ibase + 1];
                        let xv2 = x[ibase + 2];
                        let xv3 = x[ibase + 3];
                        for co in 0..COUT {
                            a0[co] = xv0.mul_add(gr[co], a0[co]);
                            a1[co] = xv1.mul_add(gr[co], a1[co]);
                            a2[co] = xv2.mul_add(gr[co], a2[co]);
                            a3[co] = xv3.mul_add(gr[co], a3[co]);
                        }
                    }
                }
                for (b, a) in [&a0, &a1, &a2, &a3].into_iter().enumerate() {
                    let o = kbase + (ci + b) * COUT;
                    for co in 0..COUT {
                        dw[o + co] += a[co];
                    }
                }
                ci += 4;
            }
            // CIN not divisible by 4 never happens for the specialized pairs.
            debug_assert_eq!(ci, CIN);
        }
    }
}

fn dw_dyn<T: Real>(
    x: &[T],
    g: &[T],
    dw: &mut [T],
    h: usize,
    w: usize,
    cin: usize,
    cout: usize,
) {
    for dy in 0..3usize {
        let y_lo = 1usize.saturating_sub(dy);
        let y_hi = (h + 1 - dy).min(h);
        for dx in 0..3usize {
            let x_lo = 1usize.saturating_sub(dx);
            let x_hi = (w + 1 - dx).min(w);
            let kbase = (dy * 3 + dx) * cin * cout;
            for y in y_lo..y_hi {
                let grow = y * w;
                let xrow = (y + dy - 1) * w;
                for xx in x_lo..x_hi {
                    let gb = (grow + xx) * cout;
                    let gr = &g[gb..gb + cout];
                    let ibase = (xrow + xx + dx - 1) * cin;
                    for ci in 0..cin {
                        let xv = x[ibase + ci];
                        let o = kbase + ci * cout;
                        let dwr = &mut dw[o..o + cout];
                        for co in 0..cout {
                            dwr[co] = xv.mul_add(gr[co], dwr[co]);
                        }
                    }
                }
            }
        }
    }
}

/// y = W x + b with W row-major [out_dim][in_dim].
pub fn fc_forward<T: Real>(x: &[T], w: &[T], b: &[T], y: &mut [T]) {
    let in_dim = x.len();
    for (o, yo) in y.iter_mut().enumerate() {
        let row = &w[o * in_dim..(o + 1) * in_dim];
        let mut acc = b[o];
        for (xv, wv) in x.iter().zip(row) {
            acc = xv.mul_add(*wv, acc);
        }
        *yo = acc;
    }
}

/// Accumulates dL/dx, dL/dW, dL/db for the fully-connected layer.
pub fn fc_backward<T: Real>(
    x: &[T],
    w: &[T],
    grad_y: &[T],
    grad_x: &mut [T],
    grad_w: &mut [T],
    grad_b: &mut [T],
) {
    let in_dim = x.len();
    for (o, &gy) in grad_y.iter().enumerate() {
        let row = &w[o * in_dim..(o + 1) * in_dim];
        let grow = &mut grad_w[o * in_dim..(o + 1) * in_dim];
        for i in 0..in_dim {
            grad_x[i] = gy.mul_add(row[i], grad_x[i]);
            grow[i] = gy.mul_add(x[i], grow[i]);
        }
        grad_b[o] += gy;
    }
}

/// Nearest-neighbour 2x upsample: each input element fills a 2x2 block.
pub fn upsample2x<T: Real>(x: &[T], out: &mut [T], h: usize, w: usize, c: usize) {
    debug_assert_eq!(x.len(), h * w * c);
    debug_assert_eq!(out.len(), 4 * h * w * c);
    let ow = 2 * w;
    for y in 0..h {
        for xx in 0..w {
            let src = &x[(y * w + xx) * c..(y * w + xx + 1) * c];
            for oy in [2 * y, 2 * y + 1] {
                for ox in [2 * xx, 2 * xx + 1] {
                    let dst = (oy * ow + ox) * c;
                    out[dst..dst + c].copy_from_slice(src);
                }
            }
        }
    }
}

/// Backward of upsample2x: each input gradient is the sum of its 2x2 block.
pub fn upsample2x_backward<T: Real>(grad_out: &[T], grad_x: &mut [T], h: usize, w: usize, c: usize) {
    let ow = 2 * w;
    for y in 0..h {
        for xx in 0..w {
            let dst = (y * w + xx) * c;
            for oy in [2 * y, 2 * y + 1] {
                for ox in [2 * xx, 2 * xx + 1] {
                    let src = (oy * ow + ox) * c;
                    for ci in 0..c {
                        grad_x[dst + ci] += grad_out[src + ci];
                    }
                }
            }
        }
    }
}

/// Self-normalizing constants of the SeLU activation.
pub const SELU_LAMBDA: f64 = 1.0507009873554805;
pub const SELU_ALPHA: f64 = 1.6732632423543772;

pub fn selu<T: Real>(x: &[T], out: &mut [T]) {
    let lambda = T::of_f64(SELU_LAMBDA);
    let la = T::of_f64(SELU_LAMBDA * SELU_ALPHA);
    for (o, &v) in out.iter_mut().zip(x) {
        let neg = la * (v.fast_exp() - T::one());
        *o = if v > T::zero() { lambda * v } else { neg };
    }
}

/// SeLU derivative recovered from the activation output: lambda for the
/// positive side, out + lambda*alpha for the negative side (selu is monotone
/// with selu(0) = 0, so the output sign identifies the branch).
pub fn selu_backward<T: Real>(out: &[T], grad_out: &[T], grad_x: &mut [T]) {
    let lambda = T::of_f64(SELU_LAMBDA);
    let la = T::of_f64(SELU_LAMBDA * SELU_ALPHA);
    for ((gx, &o), &g) in grad_x.iter_mut().zip(out).zip(grad_out) {
        let d = if o > T::zero() { lambda } else { o + la };
        *gx = g.mul_add(d, *gx);
    }
}

pub fn relu<T: Real>(x: &[T], out: &mut [T]) {
    for (o, &v) in out.iter_mut().zip(x) {
        *o = if v > T::zero() { v } else { T::zero() };
    }
}

pub fn relu_backward<T: Real>(out: &[T], grad_out: &[T], grad_x: &mut [T]) {
    for ((gx, &o), &g) in grad_x.iter_mut().zip(out).zip(grad_out) {
        if o > T::zero() {
            *gx += g;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    // Independent direct convolution: six explicit loops, no blocking.
    fn conv_reference(
        x: &[f64],
        k: &[f64],
        bias: &[f64],
        h: usize,
        w: usize,
        cin: usize,
        cout: usize,
    ) -> Vec<f64> {
        let mut out = vec![0.0; h * w * cout];
        for y in 0..h as isize {
            for xx in 0..w as isize {
                for co in 0..cout {
                    let mut acc = if bias.is_empty() { 0.0 } else { bias[co] };
                    for dy in -1..=1isize {
                        for dx in -1..=1isize {
                            let (yy, xs) = (y + dy, xx + dx);
                            if yy < 0 || yy >= h as isize || xs < 0 || xs >= w as isize {
                                continue;
                            }
                            for ci in 0..cin {
                                let xv = x[(yy as usize * w + xs as usize) * cin + ci];
                                let kv = k[(((dy + 1) * 3 + dx + 1) as usize * cin + ci) * cout
                                    + co];
                                acc += xv * kv;
                            }
                        }
                    }
                    out[(y as usize * w + xx as usize) * cout + co] = acc;
                }
            }
        }
        out
    }

    fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn conv_matches_reference_on_specialized_and_dyn_paths() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for &(h, w, cin, cout) in &[
            (5, 5, 2, 3),   // dynamic path
            (6, 8, 32, 32), // specialized
            (4, 4, 32, 16),
            (3, 7, 16, 8),
            (5, 4, 8, 3),
            (2, 2, 16, 32),
            (1, 1, 3, 8),
        ] {
            let x = rand_vec(&mut rng, h * w * cin);
            let k = rand_vec(&mut rng, 9 * cin * cout);
            let b = rand_vec(&mut rng, cout);
            let mut out = vec![0.0; h * w * cout];
            conv3x3(&x, &k, &b, &mut out, h, w, cin, cout);
            let want = conv_reference(&x, &k, &b, h, w, cin, cout);
            for (got, want) in out.iter().zip(&want) {
                assert!((got - want).abs() < 1e-12, "{h}x{w} {cin}->{cout}");
            }
        }
    }

    #[test]
    fn conv_identity_kernel_passes_input_through() {
        // Delta kernel: 1 at the spatial centre, single channel.
        let (h, w) = (4, 5);
        let x: Vec<f64> = (0..h * w).map(|i| i as f64 * 0.1).collect();
        let mut k = vec![0.0; 9];
        k[4] = 1.0;
        let mut out = vec![0.0; h * w];
        conv3x3(&x, &k, &[0.0], &mut out, h, w, 1, 1);
        assert_eq!(out, x);
    }

    #[test]
    fn conv_zero_kernel_yields_bias() {
        let (h, w, cin, cout) = (3, 3, 2, 2);
        let x = vec![0.7; h * w * cin];
        let k = vec![0.0; 9 * cin * cout];
        let b = vec![0.25, -0.5];
        let mut out = vec![0.0; h * w * cout];
        conv3x3(&x, &k, &b, &mut out, h, w, cin, cout);
        for px in out.chunks(cout) {
            assert_eq!(px, &b[..]);
        }
    }

    #[test]
    fn backward_kernel_matches_bruteforce() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for &(h, w, cin, cout) in &[(5, 6, 4, 5), (4, 8, 32, 16), (6, 6, 32, 32)] {
            let x = rand_vec(&mut rng, h * w * cin);
            let g = rand_vec(&mut rng, h * w * cout);
            let mut dw = vec![0.0; 9 * cin * cout];
            conv3x3_backward_kernel(&x, &g, &mut dw, h, w, cin, cout);
            // Brute force: dW[dy][dx][ci][co] = sum over valid pixels.
            for dy in 0..3isize {
                for dx in 0..3isize {
                    for ci in 0..cin {
                        for co in 0..cout {
                            let mut acc = 0.0;
                            for y in 0..h as isize {
                                for xx in 0..w as isize {
                                    let (yy, xs) = (y + dy - 1, xx + dx - 1);
                                    if yy < 0 || yy >= h as isize || xs < 0 || xs >= w as isize {
                                        continue;
                                    }
                                    acc += x[(yy as usize * w + xs as usize) * cin + ci]
                                        * g[(y as usize * w + xx as usize) * cout + co];
                                }
                            }
                            let idx = ((dy * 3 + dx) as usize * cin + ci) * cout + co;
                            assert!((dw[idx] - acc).abs() < 1e-12);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn fc_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (in_dim, out_dim) = (4, 3);
        let x = rand_vec(&mut rng, in_dim);
        let w = rand_vec(&mut rng, in_dim * out_dim);
        let b = rand_vec(&mut rng, out_dim);
        let mut y = vec![0.0; out_dim];
        fc_forward(&x, &w, &b, &mut y);
        for o in 0..out_dim {
            let mut acc = b[o];
            for i in 0..in_dim {
                acc += w[o * in_dim + i] * x[i];
            }
            assert!((y[o] - acc).abs() < 1e-12);
        }
    }

    #[test]
    fn upsample_matches_index_map() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let (h, w, c) = (3, 4, 2);
        let x = rand_vec(&mut rng, h * w * c);
        let mut out = vec![0.0; 4 * h * w * c];
        upsample2x(&x, &mut out, h, w, c);
        for oy in 0..2 * h {
            for ox in 0..2 * w {
                for ci in 0..c {
                    assert_eq!(
                        out[(oy * 2 * w + ox) * c + ci],
                        x[((oy / 2) * w + ox / 2) * c + ci]
                    );
                }
            }
        }
    }

    #[test]
    fn selu_closed_form_values() {
        let x = [0.0f64, -1.0, 2.0];
        let mut out = [0.0; 3];
        selu(&x, &mut out);
        assert_eq!(out[0], 0.0);
        let expected = SELU_LAMBDA * SELU_ALPHA * ((-1.0f64).exp() - 1.0);
        assert!((out[1] - expected).abs() < 1e-12);
        assert!((out[1] + 1.1113).abs() < 1e-4);
        assert!((out[2] - SELU_LAMBDA * 2.0).abs() < 1e-12);
    }

    #[test]
    fn relu_clamps_negatives() {
        let x = [-5.0f64, 0.0, 5.0];
        let mut out = [0.0; 3];
        relu(&x, &mut out);
        assert_eq!(out, [0.0, 0.0, 5.0]);
    }
}
