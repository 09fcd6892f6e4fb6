/// Row/column strides of a matrix operand, in elements.
#[derive(Clone, Copy)]
pub(crate) struct Strides {
    pub row: isize,
    pub col: isize,
}

impl Strides {
    pub const fn row_major(cols: usize) -> Self {
        Strides { row: cols as isize, col: 1 }
    }

    /// View of a row-major `rows × cols` matrix as its transpose.
    pub const fn transposed(cols: usize) -> Self {
        Strides { row: 1, col: cols as isize }
    }
}

/// `c ← a·b + beta·c` for an `m × k` by `k × n` product in double precision.
#[allow(clippy::too_many_arguments)]
pub(crate) fn dgemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    sa: Strides,
    b: &[f64],
    sb: Strides,
    beta: f64,
    c: &mut [f64],
    sc: Strides,
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(extent(m, k, sa) <= a.len(), "gemm: lhs out of bounds");
    assert!(extent(k, n, sb) <= b.len(), "gemm: rhs out of bounds");
    assert!(extent(m, n, sc) <= c.len(), "gemm: output out of bounds");
    // SAFETY: the asserts above bound every index the kernel touches by the
    // slice lengths, and `c` is uniquely borrowed.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            sa.row,
            sa.col,
            b.as_ptr(),
            sb.row,
            sb.col,
            beta,
            c.as_mut_ptr(),
            sc.row,
            sc.col,
        );
    }
}

fn extent(rows: usize, cols: usize, s: Strides) -> usize {
    if rows == 0 || cols == 0 {
        return 0;
    }
    (rows - 1) * s.row as usize + (cols - 1) * s.col as usize + 1
}
