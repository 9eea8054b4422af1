// Raw loops behind the recorded ops. All sequence buffers are [B, C, T].

use crate::real::Real;

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub batch: usize,
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub t_in: usize,
    pub t_out: usize,
    pub stride: usize,
    pub pad_left: usize,
}

/// Half-open range of output positions `t` for which `t*stride + shift`
/// lands inside `[0, t_in)`, specialised to stride 1.
#[inline]
fn valid_range(shift: isize, t_in: usize, t_out: usize) -> (usize, usize) {
    let lo = (-shift).max(0) as usize;
    let hi = ((t_in as isize - shift).max(0) as usize).min(t_out);
    (lo.min(hi), hi)
}

pub(crate) fn conv1d_forward<R: Real>(x: &[R], w: &[R], bias: Option<&[R]>, g: ConvGeom) -> Vec<R> {
    let mut out = vec![R::zero(); g.batch * g.cout * g.t_out];
    for b in 0..g.batch {
        for o in 0..g.cout {
            let row = &mut out[(b * g.cout + o) * g.t_out..][..g.t_out];
            if let Some(bias) = bias {
                row.fill(bias[o]);
            }
            for i in 0..g.cin {
                let xr = &x[(b * g.cin + i) * g.t_in..][..g.t_in];
                let wr = &w[(o * g.cin + i) * g.k..][..g.k];
                for (d, &wv) in wr.iter().enumerate() {
                    if wv == R::zero() {
                        continue;
                    }
                    let shift = d as isize - g.pad_left as isize;
                    if g.stride == 1 {
                        let (lo, hi) = valid_range(shift, g.t_in, g.t_out);
                        if lo >= hi {
                            continue;
                        }
                        let src = &xr[(lo as isize + shift) as usize..(hi as isize + shift) as usize];
                        for (y, &xv) in row[lo..hi].iter_mut().zip(src) {
                            *y += wv * xv;
                        }
                    } else {
                        for (t, y) in row.iter_mut().enumerate() {
                            let p = (t * g.stride) as isize + shift;
                            if p >= 0 && (p as usize) < g.t_in {
                                *y += wv * xr[p as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Returns (dx, dw, db) for the given upstream gradient.
pub(crate) fn conv1d_backward<R: Real>(
    x: &[R],
    w: &[R],
    dy: &[R],
    g: ConvGeom,
    need_dx: bool,
    need_dw: bool,
) -> (Vec<R>, Vec<R>, Vec<R>) {
    let mut dx = if need_dx { vec![R::zero(); x.len()] } else { Vec::new() };
    let mut dw = if need_dw { vec![R::zero(); w.len()] } else { Vec::new() };
    let mut db = vec![R::zero(); g.cout];
    for b in 0..g.batch {
        for o in 0..g.cout {
            let dyr = &dy[(b * g.cout + o) * g.t_out..][..g.t_out];
            db[o] += dyr.iter().copied().sum::<R>();
            for i in 0..g.cin {
                let xoff = (b * g.cin + i) * g.t_in;
                let woff = (o * g.cin + i) * g.k;
                for d in 0..g.k {
                    let shift = d as isize - g.pad_left as isize;
                    if g.stride == 1 {
                        let (lo, hi) = valid_range(shift, g.t_in, g.t_out);
                        if lo >= hi {
                            continue;
                        }
                        let s_lo = (lo as isize + shift) as usize;
                        let s_hi = (hi as isize + shift) as usize;
                        if need_dw {
                            let xr = &x[xoff + s_lo..xoff + s_hi];
                            let acc: R = dyr[lo..hi].iter().zip(xr).map(|(&a, &b)| a * b).sum();
                            dw[woff + d] += acc;
                        }
                        if need_dx {
                            let wv = w[woff + d];
                            if wv != R::zero() {
                                for (gx, &gy) in dx[xoff + s_lo..xoff + s_hi].iter_mut().zip(&dyr[lo..hi]) {
                                    *gx += wv * gy;
                                }
                            }
                        }
                    } else {
                        let wv = w[woff + d];
                        let mut acc = R::zero();
                        for (t, &gy) in dyr.iter().enumerate() {
                            let p = (t * g.stride) as isize + shift;
                            if p >= 0 && (p as usize) < g.t_in {
                                let p = p as usize;
                                acc += gy * x[xoff + p];
                                if need_dx {
                                    dx[xoff + p] += wv * gy;
                                }
                            }
                        }
                        if need_dw {
                            dw[woff + d] += acc;
                        }
                    }
                }
            }
        }
    }
    (dx, dw, db)
}

/// Max pooling over the last axis of `[rows, t_in]`. Returns the pooled
/// values and the absolute input index of each selected element; ties keep
/// the lowest index.
pub(crate) fn maxpool_forward<R: Real>(
    x: &[R],
    rows: usize,
    t_in: usize,
    t_out: usize,
    k: usize,
    stride: usize,
    pad_left: usize,
) -> (Vec<R>, Vec<usize>) {
    let mut out = Vec::with_capacity(rows * t_out);
    let mut arg = Vec::with_capacity(rows * t_out);
    for r in 0..rows {
        let base = r * t_in;
        for t in 0..t_out {
            let start = (t * stride) as isize - pad_left as isize;
            let lo = (start.max(0) as usize).min(t_in - 1);
            let hi = ((start + k as isize).max(0) as usize).min(t_in);
            let mut best = lo;
            for p in lo + 1..hi {
                if x[base + p] > x[base + best] {
                    best = p;
                }
            }
            out.push(x[base + best]);
            arg.push(base + best);
        }
    }
    (out, arg)
}

/// `c[g] = a[g] · b[g]` for `g` in `0..groups`; a is m×n, b is n×p.
pub(crate) fn batched_matmul<R: Real>(a: &[R], b: &[R], groups: usize, m: usize, n: usize, p: usize) -> Vec<R> {
    let mut c = vec![R::zero(); groups * m * p];
    for g in 0..groups {
        let ag = &a[g * m * n..][..m * n];
        let bg = &b[g * n * p..][..n * p];
        let cg = &mut c[g * m * p..][..m * p];
        for i in 0..m {
            let crow = &mut cg[i * p..][..p];
            for l in 0..n {
                let av = ag[i * n + l];
                if av == R::zero() {
                    continue;
                }
                for (cv, &bv) in crow.iter_mut().zip(&bg[l * p..][..p]) {
                    *cv += av * bv;
                }
            }
        }
    }
    c
}

/// Transposes the trailing two axes of `[groups, rows, cols]`.
pub(crate) fn transpose_last2<R: Real>(a: &[R], groups: usize, rows: usize, cols: usize) -> Vec<R> {
    let mut out = vec![R::zero(); a.len()];
    for g in 0..groups {
        let off = g * rows * cols;
        for r in 0..rows {
            for c in 0..cols {
                out[off + c * rows + r] = a[off + r * cols + c];
            }
        }
    }
    out
}
