//! Per-sample kernels for 3×3 "same" convolution (im2col), max pooling
//! and batch normalization.

use super::arch::{KERNEL, PADDING};
use crate::linalg::Real;

/// Unfolds one `[c, h, w]` image into `[c·9, h·w]` patch columns.
pub fn im2col<T: Real>(img: &[T], c: usize, h: usize, w: usize, cols: &mut [T]) {
    debug_assert_eq!(img.len(), c * h * w);
    debug_assert_eq!(cols.len(), c * KERNEL * KERNEL * h * w);
    let hw = h * w;
    for ci in 0..c {
        let plane = &img[ci * hw..(ci + 1) * hw];
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = (ci * KERNEL + ky) * KERNEL + kx;
                let dst = &mut cols[row * hw..(row + 1) * hw];
                // output x reads input x + kx - PADDING
                let x_lo = PADDING.saturating_sub(kx);
                let x_hi = (w + PADDING).saturating_sub(kx).min(w);
                for y in 0..h {
                    let out = &mut dst[y * w..(y + 1) * w];
                    let sy = y as isize + ky as isize - PADDING as isize;
                    if sy < 0 || sy >= h as isize || x_lo >= x_hi {
                        out.fill(T::zero());
                        continue;
                    }
                    let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                    out[..x_lo].fill(T::zero());
                    out[x_hi..].fill(T::zero());
                    let s0 = x_lo + kx - PADDING;
                    out[x_lo..x_hi].copy_from_slice(&src[s0..s0 + (x_hi - x_lo)]);
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates patch-column gradients back into an
/// image gradient (overwrites `img`).
pub fn col2im<T: Real>(cols: &[T], c: usize, h: usize, w: usize, img: &mut [T]) {
    debug_assert_eq!(img.len(), c * h * w);
    let hw = h * w;
    img.fill(T::zero());
    for ci in 0..c {
        let plane = &mut img[ci * hw..(ci + 1) * hw];
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = (ci * KERNEL + ky) * KERNEL + kx;
                let src = &cols[row * hw..(row + 1) * hw];
                let x_lo = PADDING.saturating_sub(kx);
                let x_hi = (w + PADDING).saturating_sub(kx).min(w);
                if x_lo >= x_hi {
                    continue;
                }
                for y in 0..h {
                    let sy = y as isize + ky as isize - PADDING as isize;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let s0 = x_lo + kx - PADDING;
                    let dst = &mut plane[sy as usize * w + s0..sy as usize * w + s0 + (x_hi - x_lo)];
                    for (d, &g) in dst.iter_mut().zip(&src[y * w + x_lo..y * w + x_hi]) {
                        *d = *d + g;
                    }
                }
            }
        }
    }
}

#[cfg(test)]
/// Non-overlapping max pool over each `[h, w]` plane with floor division.
/// Records the in-plane index of each window maximum (first on ties).
pub fn maxpool<T: Real>(x: &[T], c: usize, h: usize, w: usize, (ph, pw): (usize, usize), out: &mut [T], argmax: &mut [u32]) {
    let (ho, wo) = (h / ph, w / pw);
    debug_assert_eq!(out.len(), c * ho * wo);
    for ci in 0..c {
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best_i = oy * ph * w + ox * pw;
                let mut best = plane[best_i];
                for dy in 0..ph {
                    let base = (oy * ph + dy) * w + ox * pw;
                    for dx in 0..pw {
                        let v = plane[base + dx];
                        if v > best {
                            best = v;
                            best_i = base + dx;
                        }
                    }
                }
                let o = (ci * ho + oy) * wo + ox;
                out[o] = best;
                argmax[o] = best_i as u32;
            }
        }
    }
}

#[cfg(test)]
/// Scatters pooled gradients back to window maxima (overwrites `dx`).
pub fn maxpool_backward<T: Real>(dout: &[T], argmax: &[u32], c: usize, hw_in: usize, dx: &mut [T]) {
    dx.fill(T::zero());
    let per = dout.len() / c.max(1);
    for ci in 0..c {
        let plane = &mut dx[ci * hw_in..(ci + 1) * hw_in];
        for (g, &i) in dout[ci * per..(ci + 1) * per].iter().zip(&argmax[ci * per..(ci + 1) * per]) {
            plane[i as usize] = plane[i as usize] + *g;
        }
    }
}

/// Per-channel `(Σx, Σx²)` of one `[c, hw]` sample. Eight-lane partial
/// sums in the element type over short runs, accumulated in `f64`.
pub fn channel_moments<T: Real>(x: &[T], c: usize, hw: usize) -> Vec<(f64, f64)> {
    (0..c)
        .map(|ci| {
            x[ci * hw..(ci + 1) * hw].chunks(256).fold((0.0, 0.0), |(s, q), ch| {
                let mut a = [T::zero(); 8];
                let mut b = [T::zero(); 8];
                let mut it = ch.chunks_exact(8);
                for lane in &mut it {
                    for j in 0..8 {
                        a[j] = a[j] + lane[j];
                        b[j] = b[j] + lane[j] * lane[j];
                    }
                }
                let (mut sa, mut sb) = (0.0, 0.0);
                for j in 0..8 {
                    sa += a[j].to_f64_lossy();
                    sb += b[j].to_f64_lossy();
                }
                for &v in it.remainder() {
                    let v = v.to_f64_lossy();
                    sa += v;
                    sb += v * v;
                }
                (s + sa, q + sb)
            })
        })
        .collect()
}
