//! Matrix multiply and convolution lowering.

/// C[m,n] = A[m,k] @ B[k,n], all row-major. `beta` scales the existing C.
pub fn matmul(a: &[f32], b: &[f32], c: &mut [f32], m: usize, k: usize, n: usize, beta: f32) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            n as isize,
            1,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// C[m,n] = A^T @ B where A is [k,m] and B is [k,n], all row-major.
pub fn matmul_at_b(a: &[f32], b: &[f32], c: &mut [f32], m: usize, k: usize, n: usize, beta: f32) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            1,
            m as isize,
            b.as_ptr(),
            n as isize,
            1,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// C[m,n] = A @ B^T where A is [m,k] and B is [n,k], all row-major.
pub fn matmul_a_bt(a: &[f32], b: &[f32], c: &mut [f32], m: usize, k: usize, n: usize, beta: f32) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            1,
            k as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Spatial geometry of a 2-d convolution with square kernels and zero padding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dGeom {
    pub in_channels: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl Conv2dGeom {
    pub fn out_h(&self) -> usize {
        (self.in_h + 2 * self.padding - self.kernel) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.in_w + 2 * self.padding - self.kernel) / self.stride + 1
    }

    /// Number of columns of the lowered patch matrix.
    pub fn patch_len(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }
}

/// Lower image patches into a matrix: input `[n, c, h, w]` becomes
/// `[n * out_h * out_w, c * k * k]`, with zero padding materialized as zeros.
pub fn im2col(input: &[f32], n: usize, geom: Conv2dGeom, out: &mut [f32]) {
    let (c, h, w) = (geom.in_channels, geom.in_h, geom.in_w);
    let (oh, ow, k) = (geom.out_h(), geom.out_w(), geom.kernel);
    let plen = geom.patch_len();
    debug_assert_eq!(input.len(), n * c * h * w);
    debug_assert_eq!(out.len(), n * oh * ow * plen);
    out.fill(0.0);
    let pad = geom.padding as isize;
    for img in 0..n {
        let in_base = img * c * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let row = ((img * oh + oy) * ow + ox) * plen;
                let y0 = (oy * geom.stride) as isize - pad;
                let x0 = (ox * geom.stride) as isize - pad;
                for ch in 0..c {
                    let ch_base = in_base + ch * h * w;
                    let col_base = row + ch * k * k;
                    for ky in 0..k {
                        let y = y0 + ky as isize;
                        if y < 0 || y >= h as isize {
                            continue;
                        }
                        let src_row = ch_base + y as usize * w;
                        let dst_row = col_base + ky * k;
                        for kx in 0..k {
                            let x = x0 + kx as isize;
                            if x < 0 || x >= w as isize {
                                continue;
                            }
                            out[dst_row + kx] = input[src_row + x as usize];
                        }
                    }
                }
            }
        }
    }
}

/// Scatter-add the patch-matrix gradient back onto the input layout:
/// inverse of [`im2col`] under summation.
pub fn col2im(cols: &[f32], n: usize, geom: Conv2dGeom, out: &mut [f32]) {
    let (c, h, w) = (geom.in_channels, geom.in_h, geom.in_w);
    let (oh, ow, k) = (geom.out_h(), geom.out_w(), geom.kernel);
    let plen = geom.patch_len();
    debug_assert_eq!(out.len(), n * c * h * w);
    debug_assert_eq!(cols.len(), n * oh * ow * plen);
    out.fill(0.0);
    let pad = geom.padding as isize;
    for img in 0..n {
        let out_base = img * c * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let row = ((img * oh + oy) * ow + ox) * plen;
                let y0 = (oy * geom.stride) as isize - pad;
                let x0 = (ox * geom.stride) as isize - pad;
                for ch in 0..c {
                    let ch_base = out_base + ch * h * w;
                    let col_base = row + ch * k * k;
                    for ky in 0..k {
                        let y = y0 + ky as isize;
                        if y < 0 || y >= h as isize {
                            continue;
                        }
                        let dst_row = ch_base + y as usize * w;
                        let src_row = col_base + ky * k;
                        for kx in 0..k {
                            let x = x0 + kx as isize;
                            if x < 0 || x >= w as isize {
                                continue;
                            }
                            out[dst_row + x as usize] += cols[src_row + kx];
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

    #[test]
    fn matmul_small() {
        // [[1,2],[3,4]] @ [[5,6],[7,8]] = [[19,22],[43,50]]
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [5.0, 6.0, 7.0, 8.0];
        let mut c = [0.0f32; 4];
        matmul(&a, &b, &mut c, 2, 2, 2, 0.0);
        assert_eq!(c, [19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn transposed_variants_agree_with_explicit_transpose() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]; // 2x3
        let b = [1.0, 0.5, -1.0, 2.0, 0.0, 3.0]; // 2x3
        // A^T @ B: [3,2]@[2,3] -> 3x3
        let mut c = vec![0.0f32; 9];
        matmul_at_b(&a, &b, &mut c, 3, 2, 3, 0.0);
        let at = [1.0, 4.0, 2.0, 5.0, 3.0, 6.0];
        let mut want = vec![0.0f32; 9];
        matmul(&at, &b, &mut want, 3, 2, 3, 0.0);
        assert_eq!(c, want);

        // A @ B^T: [2,3]@[3,2] -> 2x2
        let mut c2 = vec![0.0f32; 4];
        matmul_a_bt(&a, &b, &mut c2, 2, 3, 2, 0.0);
        let bt = [1.0, 2.0, 0.5, 0.0, -1.0, 3.0];
        let mut want2 = vec![0.0f32; 4];
        matmul(&a, &bt, &mut want2, 2, 3, 2, 0.0);
        assert_eq!(c2, want2);
    }

    #[test]
    fn im2col_identity_kernel_geometry() {
        // 1x1 kernel, stride 1, no padding: col matrix is a per-pixel view.
        let geom = Conv2dGeom { in_channels: 2, in_h: 2, in_w: 2, kernel: 1, stride: 1, padding: 0 };
        let input: Vec<f32> = (0..8).map(|v| v as f32).collect();
        let mut cols = vec![0.0; 4 * 2];
        im2col(&input, 1, geom, &mut cols);
        // row per pixel, channel-major within the row
        assert_eq!(cols, vec![0.0, 4.0, 1.0, 5.0, 2.0, 6.0, 3.0, 7.0]);
    }

    #[test]
    fn col2im_adjoint_of_im2col() {
        // <im2col(x), y> == <x, col2im(y)> for random-ish values.
        let geom = Conv2dGeom { in_channels: 2, in_h: 4, in_w: 3, kernel: 3, stride: 2, padding: 1 };
        let n = 2;
        let x: Vec<f32> = (0..n * 2 * 4 * 3).map(|v| (v as f32 * 0.37).sin()).collect();
        let rows = n * geom.out_h() * geom.out_w();
        let y: Vec<f32> = (0..rows * geom.patch_len()).map(|v| (v as f32 * 0.11).cos()).collect();
        let mut cols = vec![0.0; y.len()];
        im2col(&x, n, geom, &mut cols);
        let mut back = vec![0.0; x.len()];
        col2im(&y, n, geom, &mut back);
        let lhs: f64 = cols.iter().zip(&y).map(|(a, b)| (*a as f64) * (*b as f64)).sum();
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| (*a as f64) * (*b as f64)).sum();
        assert!((lhs - rhs).abs() < 1e-4 * (1.0 + lhs.abs()));
    }
}
