/// Row-major GEMM: `c = op(a) * op(b) + beta * c` with `op(a)` of size m×k
/// and `op(b)` of size k×n. A transposed operand is stored in its own
/// row-major layout (k×m for `a`, n×k for `b`).
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    trans_a: bool,
    b: &[f64],
    trans_b: bool,
    c: &mut [f64],
    beta: f64,
) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for v in c.iter_mut() {
            *v *= beta;
        }
        return;
    }
    let (rsa, csa) = if trans_a { (1, m) } else { (k, 1) };
    let (rsb, csb) = if trans_b { (1, k) } else { (n, 1) };
    // SAFETY: the assertions above guarantee every index the kernel touches
    // (row < m, col < n, inner < k with the strides chosen) is in bounds.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Unfolds a channels-last `[h, w, cin]` image into `[h*w, 9*cin]` rows of
/// 3×3 zero-padded neighbourhoods. Column `tap * cin + ci`, tap = 3*(dy+1)+(dx+1).
pub(crate) fn im2col3x3(x: &[f64], h: usize, w: usize, cin: usize) -> Vec<f64> {
    let row = 9 * cin;
    let mut cols = vec![0.0; h * w * row];
    for y in 0..h {
        for xx in 0..w {
            let dst = (y * w + xx) * row;
            for dy in 0..3 {
                let sy = y as isize + dy as isize - 1;
                if sy < 0 || sy >= h as isize {
                    continue;
                }
                for dx in 0..3 {
                    let sx = xx as isize + dx as isize - 1;
                    if sx < 0 || sx >= w as isize {
                        continue;
                    }
                    let src = (sy as usize * w + sx as usize) * cin;
                    let tap = dy * 3 + dx;
                    cols[dst + tap * cin..dst + (tap + 1) * cin].copy_from_slice(&x[src..src + cin]);
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col3x3`].
pub(crate) fn col2im3x3(cols: &[f64], h: usize, w: usize, cin: usize) -> Vec<f64> {
    let row = 9 * cin;
    let mut x = vec![0.0; h * w * cin];
    for y in 0..h {
        for xx in 0..w {
            let src_row = (y * w + xx) * row;
            for dy in 0..3 {
                let sy = y as isize + dy as isize - 1;
                if sy < 0 || sy >= h as isize {
                    continue;
                }
                for dx in 0..3 {
                    let sx = xx as isize + dx as isize - 1;
                    if sx < 0 || sx >= w as isize {
                        continue;
                    }
                    let dst = (sy as usize * w + sx as usize) * cin;
                    let tap = dy * 3 + dx;
                    let src = src_row + tap * cin;
                    for c in 0..cin {
                        x[dst + c] += cols[src + c];
                    }
                }
            }
        }
    }
    x
}
