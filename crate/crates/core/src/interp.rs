//! Corner-aligned bilinear resampling.
//!
//! Output pixel `i` of an `out`-long axis samples input coordinate
//! `i·(in−1)/(out−1)`, so the corner pixels map onto each other exactly.

/// Source coordinate of output index `i`.
pub fn source_coord(i: usize, input: usize, output: usize) -> f64 {
    if output <= 1 || input <= 1 {
        0.0
    } else {
        i as f64 * (input - 1) as f64 / (output - 1) as f64
    }
}

fn taps(i: usize, input: usize, output: usize) -> (usize, usize, f64) {
    let s = source_coord(i, input, output);
    let lo = (s.floor() as usize).min(input - 1);
    let hi = (lo + 1).min(input - 1);
    (lo, hi, s - lo as f64)
}

/// Resizes every `[rows, cols]` plane of a `planes × rows × cols` buffer.
pub fn resize_planes(
    src: &[f64],
    planes: usize,
    (rows, cols): (usize, usize),
    (out_rows, out_cols): (usize, usize),
) -> Vec<f64> {
    assert_eq!(src.len(), planes * rows * cols);
    let ytaps: Vec<_> = (0..out_rows).map(|i| taps(i, rows, out_rows)).collect();
    let xtaps: Vec<_> = (0..out_cols).map(|j| taps(j, cols, out_cols)).collect();
    let mut out = Vec::with_capacity(planes * out_rows * out_cols);
    for p in 0..planes {
        let plane = &src[p * rows * cols..(p + 1) * rows * cols];
        for &(y0, y1, fy) in &ytaps {
            for &(x0, x1, fx) in &xtaps {
                let top = plane[y0 * cols + x0] * (1.0 - fx) + plane[y0 * cols + x1] * fx;
                let bottom = plane[y1 * cols + x0] * (1.0 - fx) + plane[y1 * cols + x1] * fx;
                out.push(top * (1.0 - fy) + bottom * fy);
            }
        }
    }
    out
}
