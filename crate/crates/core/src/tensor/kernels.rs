//! Dense numeric kernels shared by the graph ops.

/// Strided view of a row-major or transposed matrix operand.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Mat<'a> {
    pub data: &'a [f64],
    pub rows: usize,
    pub cols: usize,
    pub rs: usize,
    pub cs: usize,
}

impl<'a> Mat<'a> {
    /// Row-major `rows × cols`.
    pub fn new(data: &'a [f64], rows: usize, cols: usize) -> Self {
        Mat {
            data,
            rows,
            cols,
            rs: cols,
            cs: 1,
        }
    }

    /// Transpose of a row-major `rows × cols` matrix, i.e. a `cols × rows` view.
    pub fn t(data: &'a [f64], rows: usize, cols: usize) -> Self {
        Mat {
            data,
            rows: cols,
            cols: rows,
            rs: 1,
            cs: cols,
        }
    }

    fn max_offset(&self) -> usize {
        if self.rows == 0 || self.cols == 0 {
            0
        } else {
            (self.rows - 1) * self.rs + (self.cols - 1) * self.cs
        }
    }
}

/// `c = alpha · a · b + beta · c` with `c` row-major `a.rows × b.cols`.
pub(crate) fn gemm(alpha: f64, a: Mat<'_>, b: Mat<'_>, beta: f64, c: &mut [f64]) {
    let (m, k, n) = (a.rows, a.cols, b.cols);
    assert_eq!(k, b.rows, "gemm inner dimension");
    assert!(c.len() >= m * n, "gemm output too small");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for v in &mut c[..m * n] {
            *v *= beta;
        }
        return;
    }
    assert!(a.max_offset() < a.data.len(), "gemm lhs out of bounds");
    assert!(b.max_offset() < b.data.len(), "gemm rhs out of bounds");
    // SAFETY: every index touched by dgemm lies within the bounds asserted above,
    // and `c` is an exclusive borrow of at least m·n elements.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr(),
            b.rs as isize,
            b.cs as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Geometry of a same-padded 2-D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub c_in: usize,
    pub c_out: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
}

impl ConvGeom {
    pub fn col_rows(&self) -> usize {
        self.c_in * self.kh * self.kw
    }

    pub fn hw(&self) -> usize {
        self.h * self.w
    }
}

/// Unfold one `[c_in × h × w]` image into `[c_in·kh·kw × h·w]` columns.
pub(crate) fn im2col(x: &[f64], g: &ConvGeom, col: &mut [f64]) {
    let (ph, pw) = (g.kh / 2, g.kw / 2);
    let hw = g.hw();
    for c in 0..g.c_in {
        let plane = &x[c * hw..(c + 1) * hw];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (c * g.kh + ky) * g.kw + kx;
                let dst = &mut col[row * hw..(row + 1) * hw];
                for y in 0..g.h {
                    let sy = y as isize + ky as isize - ph as isize;
                    let out = &mut dst[y * g.w..(y + 1) * g.w];
                    if sy < 0 || sy >= g.h as isize {
                        out.fill(0.0);
                        continue;
                    }
                    let src = &plane[sy as usize * g.w..(sy as usize + 1) * g.w];
                    for (xo, o) in out.iter_mut().enumerate() {
                        let sx = xo as isize + kx as isize - pw as isize;
                        *o = if sx < 0 || sx >= g.w as isize {
                            0.0
                        } else {
                            src[sx as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add columns back into an image gradient.
pub(crate) fn col2im_add(col: &[f64], g: &ConvGeom, dx: &mut [f64]) {
    let (ph, pw) = (g.kh / 2, g.kw / 2);
    let hw = g.hw();
    for c in 0..g.c_in {
        let plane = &mut dx[c * hw..(c + 1) * hw];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (c * g.kh + ky) * g.kw + kx;
                let src = &col[row * hw..(row + 1) * hw];
                for y in 0..g.h {
                    let sy = y as isize + ky as isize - ph as isize;
                    if sy < 0 || sy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[sy as usize * g.w..(sy as usize + 1) * g.w];
                    for xo in 0..g.w {
                        let sx = xo as isize + kx as isize - pw as isize;
                        if sx >= 0 && sx < g.w as isize {
                            dst[sx as usize] += src[y * g.w + xo];
                        }
                    }
                }
            }
        }
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
