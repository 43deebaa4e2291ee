//! Bilinear resampling over interleaved `H×W×C` buffers.
//!
//! Sample positions use half-pixel centers with edge clamping, so the four
//! corner samples of the output always reproduce the corner values of the
//! source and the output never leaves the source's value range.

/// Resizes an interleaved `src_h × src_w × channels` buffer to `dst_h × dst_w`.
pub fn bilinear(src: &[f32], src_h: usize, src_w: usize, channels: usize, dst_h: usize, dst_w: usize) -> Vec<f32> {
    assert_eq!(src.len(), src_h * src_w * channels, "source buffer shape");
    let rows = axis_taps(src_h, dst_h);
    let cols = axis_taps(src_w, dst_w);
    let mut out = vec![0.0f32; dst_h * dst_w * channels];
    for (y, &(y0, y1, fy)) in rows.iter().enumerate() {
        for (x, &(x0, x1, fx)) in cols.iter().enumerate() {
            let dst = (y * dst_w + x) * channels;
            for c in 0..channels {
                let p = |yy: usize, xx: usize| src[(yy * src_w + xx) * channels + c] as f64;
                let top = p(y0, x0) * (1.0 - fx) + p(y0, x1) * fx;
                let bottom = p(y1, x0) * (1.0 - fx) + p(y1, x1) * fx;
                out[dst + c] = (top * (1.0 - fy) + bottom * fy) as f32;
            }
        }
    }
    out
}

/// Same as [`bilinear`] for a single-channel `f64` grid.
pub fn bilinear_f64(src: &[f64], src_h: usize, src_w: usize, dst_h: usize, dst_w: usize) -> Vec<f64> {
    assert_eq!(src.len(), src_h * src_w, "source grid shape");
    let rows = axis_taps(src_h, dst_h);
    let cols = axis_taps(src_w, dst_w);
    let mut out = Vec::with_capacity(dst_h * dst_w);
    for &(y0, y1, fy) in &rows {
        for &(x0, x1, fx) in &cols {
            let p = |yy: usize, xx: usize| src[yy * src_w + xx];
            let top = p(y0, x0) * (1.0 - fx) + p(y0, x1) * fx;
            let bottom = p(y1, x0) * (1.0 - fx) + p(y1, x1) * fx;
            out.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    out
}

fn axis_taps(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|i| {
            let pos = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
            let i0 = pos.floor() as usize;
            let i1 = (i0 + 1).min(src - 1);
            (i0, i1, pos - i0 as f64)
        })
        .collect()
}
