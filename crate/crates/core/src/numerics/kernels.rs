//! Dense f32 compute kernels behind the tensor ops.
//!
//! All kernels accumulate into `out` (callers zero-fill when overwrite
//! semantics are needed) and use `mul_add` so the compiler can emit FMA.
//! Per-element summation order over the contraction index is fixed and
//! independent of the row count, which keeps results bit-identical across
//! batch sizes and runs.

const PANEL: usize = 16;

/// Register-blocked inner kernel: 4 rows of A against one 16-column panel
/// of B, giving independent FMA chains per row.
#[inline]
fn panel_block<const ROWS: usize>(
    k: usize,
    n: usize,
    arows: [&[f32]; ROWS],
    b: &[f32],
    jp: usize,
    orow_base: usize,
    out: &mut [f32],
) {
    let mut acc = [[0.0f32; PANEL]; ROWS];
    for kk in 0..k {
        let brow = &b[kk * n + jp..kk * n + jp + PANEL];
        for r in 0..ROWS {
            let av = arows[r][kk];
            for j in 0..PANEL {
                acc[r][j] = av.mul_add(brow[j], acc[r][j]);
            }
        }
    }
    for r in 0..ROWS {
        let o = &mut out[orow_base + r * n + jp..orow_base + r * n + jp + PANEL];
        for j in 0..PANEL {
            o[j] += acc[r][j];
        }
    }
}

/// out[m x n] += a[m x k] * b[k x n]
pub fn sgemm(m: usize, k: usize, n: usize, a: &[f32], b: &[f32], out: &mut [f32]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    let full_panels = n / PANEL * PANEL;
    let mut i = 0;
    while i + 4 <= m {
        let arows = [
            &a[i * k..(i + 1) * k],
            &a[(i + 1) * k..(i + 2) * k],
            &a[(i + 2) * k..(i + 3) * k],
            &a[(i + 3) * k..(i + 4) * k],
        ];
        let mut jp = 0;
        while jp < full_panels {
            panel_block::<4>(k, n, arows, b, jp, i * n, out);
            jp += PANEL;
        }
        if jp < n {
            for r in 0..4 {
                tail_row(k, n, arows[r], b, jp, &mut out[(i + r) * n..(i + r + 1) * n]);
            }
        }
        i += 4;
    }
    while i < m {
        let arow = &a[i * k..(i + 1) * k];
        let mut jp = 0;
        while jp < full_panels {
            panel_block::<1>(k, n, [arow], b, jp, i * n, out);
            jp += PANEL;
        }
        if jp < n {
            tail_row(k, n, arow, b, jp, &mut out[i * n..(i + 1) * n]);
        }
        i += 1;
    }
}

/// Columns [jp, n) of one output row — the non-multiple-of-16 tail.
#[inline]
fn tail_row(k: usize, n: usize, arow: &[f32], b: &[f32], jp: usize, orow: &mut [f32]) {
    let w = n - jp;
    let mut acc = [0.0f32; PANEL];
    for kk in 0..k {
        let av = arow[kk];
        let brow = &b[kk * n + jp..kk * n + n];
        for j in 0..w {
            acc[j] = av.mul_add(brow[j], acc[j]);
        }
    }
    for j in 0..w {
        orow[jp + j] += acc[j];
    }
}

fn transpose(rows: usize, cols: usize, src: &[f32], dst: &mut [f32]) {
    debug_assert_eq!(src.len(), rows * cols);
    debug_assert_eq!(dst.len(), rows * cols);
    for i in 0..rows {
        for j in 0..cols {
            dst[j * rows + i] = src[i * cols + j];
        }
    }
}

/// out[m x n] += a[m x k] * b[n x k]^T
pub fn sgemm_nt(m: usize, k: usize, n: usize, a: &[f32], b: &[f32], out: &mut [f32]) {
    debug_assert_eq!(b.len(), n * k);
    let mut bt = vec![0.0f32; k * n];
    transpose(n, k, b, &mut bt);
    sgemm(m, k, n, a, &bt, out);
}

/// out[k x n] += a[m x k]^T * b[m x n]
pub fn sgemm_tn(m: usize, k: usize, n: usize, a: &[f32], b: &[f32], out: &mut [f32]) {
    debug_assert_eq!(a.len(), m * k);
    let mut at = vec![0.0f32; k * m];
    transpose(m, k, a, &mut at);
    sgemm(k, m, n, &at, b, out);
}

/// Dot product with split accumulators for instruction-level parallelism.
pub fn dot(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f32; 8];
    let chunks = a.len() / 8;
    for c in 0..chunks {
        let i = c * 8;
        for l in 0..8 {
            acc[l] = a[i + l].mul_add(b[i + l], acc[l]);
        }
    }
    let mut s = ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
    for i in chunks * 8..a.len() {
        s = a[i].mul_add(b[i], s);
    }
    s
}

/// axpy: y += alpha * x
pub fn axpy(alpha: f32, x: &[f32], y: &mut [f32]) {
    debug_assert_eq!(x.len(), y.len());
    for (yv, &xv) in y.iter_mut().zip(x.iter()) {
        *yv = alpha.mul_add(xv, *yv);
    }
}

/// Geometry of a 2D convolution with square stride/padding on both axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub in_c: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_c: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_h(&self) -> usize {
        (self.in_h + 2 * self.pad - self.kh) / self.stride + 1
    }
    pub fn out_w(&self) -> usize {
        (self.in_w + 2 * self.pad - self.kw) / self.stride + 1
    }
    /// Rows of the unrolled patch matrix: one per (channel, ky, kx).
    pub fn patch_len(&self) -> usize {
        self.in_c * self.kh * self.kw
    }
    pub fn out_positions(&self) -> usize {
        self.out_h() * self.out_w()
    }
}

/// Unroll one image (C x H x W) into a patch matrix of shape
/// patch_len x out_positions. Padding reads as zero.
pub fn im2col(g: &ConvGeom, img: &[f32], cols: &mut [f32]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let p = oh * ow;
    debug_assert_eq!(img.len(), g.in_c * g.in_h * g.in_w);
    debug_assert_eq!(cols.len(), g.patch_len() * p);
    for c in 0..g.in_c {
        let plane = &img[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = &mut cols[((c * g.kh + ky) * g.kw + kx) * p..][..p];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let dst = &mut row[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= g.in_h as isize {
                        dst.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * g.in_w..(iy as usize + 1) * g.in_w];
                    for ox in 0..ow {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        dst[ox] = if ix < 0 || ix >= g.in_w as isize {
                            0.0
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Scatter-add a patch matrix back onto an image: the adjoint of `im2col`.
pub fn col2im_acc(g: &ConvGeom, cols: &[f32], img: &mut [f32]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let p = oh * ow;
    debug_assert_eq!(img.len(), g.in_c * g.in_h * g.in_w);
    debug_assert_eq!(cols.len(), g.patch_len() * p);
    for c in 0..g.in_c {
        let plane = &mut img[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = &cols[((c * g.kh + ky) * g.kw + kx) * p..][..p];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.in_h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.in_w..(iy as usize + 1) * g.in_w];
                    for ox in 0..ow {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.in_w as isize {
                            dst[ix as usize] += row[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(m: usize, k: usize, n: usize, a: &[f32], b: &[f32]) -> Vec<f64> {
        let mut out = vec![0.0f64; m * n];
        for i in 0..m {
            for j in 0..n {
                for kk in 0..k {
                    out[i * n + j] += a[i * k + kk] as f64 * b[kk * n + j] as f64;
                }
            }
        }
        out
    }

    #[test]
    fn sgemm_matches_naive() {
        // exercise the 4-row block, single-row remainder, and column tail
        for (m, k, n) in [(3, 4, 5), (7, 9, 16), (9, 13, 35), (4, 1, 16), (1, 8, 3)] {
            let a: Vec<f32> = (0..m * k).map(|i| ((i * 7 % 13) as f32) * 0.21 - 1.0).collect();
            let b: Vec<f32> = (0..k * n).map(|i| ((i * 5 % 11) as f32) * 0.17 - 0.8).collect();
            let mut out = vec![0.0; m * n];
            sgemm(m, k, n, &a, &b, &mut out);
            let want = naive(m, k, n, &a, &b);
            for (got, want) in out.iter().zip(want) {
                assert!((*got as f64 - want).abs() < 1e-4, "{m}x{k}x{n}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn transposed_variants_agree_with_plain() {
        let (m, k, n) = (5, 6, 19);
        let a: Vec<f32> = (0..m * k).map(|i| ((i * 7 % 13) as f32) * 0.21 - 1.0).collect();
        let b: Vec<f32> = (0..k * n).map(|i| ((i * 5 % 11) as f32) * 0.17 - 0.8).collect();
        let mut want = vec![0.0; m * n];
        sgemm(m, k, n, &a, &b, &mut want);

        let mut bt = vec![0.0; n * k];
        for i in 0..k {
            for j in 0..n {
                bt[j * k + i] = b[i * n + j];
            }
        }
        let mut got = vec![0.0; m * n];
        sgemm_nt(m, k, n, &a, &bt, &mut got);
        assert_eq!(want, got);

        let mut at = vec![0.0; k * m];
        for i in 0..m {
            for j in 0..k {
                at[j * m + i] = a[i * k + j];
            }
        }
        let mut got2 = vec![0.0; m * n];
        sgemm_tn(k, m, n, &at, &b, &mut got2);
        assert_eq!(want, got2);
    }

    #[test]
    fn sgemm_row_results_independent_of_batch_rows() {
        // the same A-row must produce bit-identical output whether it is
        // computed inside a tall batch or alone
        let (k, n) = (17, 23);
        let arow: Vec<f32> = (0..k).map(|i| (i as f32 * 0.37).sin()).collect();
        let b: Vec<f32> = (0..k * n).map(|i| (i as f32 * 0.11).cos()).collect();
        let mut tall_a = arow.clone();
        for r in 1..9 {
            tall_a.extend(arow.iter().map(|v| v * r as f32));
        }
        let mut tall_out = vec![0.0; 9 * n];
        sgemm(9, k, n, &tall_a, &b, &mut tall_out);
        let mut solo_out = vec![0.0; n];
        sgemm(1, k, n, &arow, &b, &mut solo_out);
        assert_eq!(&tall_out[..n], solo_out.as_slice());
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), y> == <x, col2im(y)> for random x, y.
        let g = ConvGeom { in_c: 2, in_h: 5, in_w: 4, out_c: 1, kh: 3, kw: 3, stride: 2, pad: 1 };
        let x: Vec<f32> = (0..g.in_c * g.in_h * g.in_w).map(|i| ((i * 13 % 7) as f32) - 3.0).collect();
        let ylen = g.patch_len() * g.out_positions();
        let y: Vec<f32> = (0..ylen).map(|i| ((i * 11 % 5) as f32) - 2.0).collect();
        let mut cols = vec![0.0; ylen];
        im2col(&g, &x, &mut cols);
        let lhs: f64 = cols.iter().zip(&y).map(|(&a, &b)| a as f64 * b as f64).sum();
        let mut back = vec![0.0; x.len()];
        col2im_acc(&g, &y, &mut back);
        let rhs: f64 = x.iter().zip(&back).map(|(&a, &b)| a as f64 * b as f64).sum();
        assert!((lhs - rhs).abs() < 1e-4, "lhs={lhs} rhs={rhs}");
    }
}
