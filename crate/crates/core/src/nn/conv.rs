//! 3x3 convolution kernels (zero padding 1, stride 1 or 2) and their adjoints.

use alloc::vec;
use alloc::vec::Vec;

use super::real::{dot, sum, Real};
use super::tensor::Tensor;

/// Zero-pads every plane by one pixel on each side.
pub fn pad1<T: Real>(x: &Tensor<T>) -> Vec<T> {
    let (pw, ph) = (x.w + 2, x.h + 2);
    let mut out = vec![T::zero(); x.c * ph * pw];
    for c in 0..x.c {
        let src = x.plane(c);
        let dst = &mut out[c * ph * pw..(c + 1) * ph * pw];
        for y in 0..x.h {
            dst[(y + 1) * pw + 1..(y + 1) * pw + 1 + x.w].copy_from_slice(&src[y * x.w..(y + 1) * x.w]);
        }
    }
    out
}

#[inline]
pub fn out_size(n: usize, stride: usize) -> usize {
    if stride == 1 {
        n
    } else {
        n / 2
    }
}

/// Correlates padded planes `xp` (`cin x (h+2) x (w+2)`) with `weight`
/// (`cout x cin x 3 x 3`), adding `bias` when given.
pub fn conv3x3<T: Real>(
    xp: &[T],
    cin: usize,
    h: usize,
    w: usize,
    weight: &[T],
    bias: Option<&[T]>,
    cout: usize,
    stride: usize,
) -> Tensor<T> {
    let (ho, wo) = (out_size(h, stride), out_size(w, stride));
    let (ph, pw) = (h + 2, w + 2);
    let mut out = Tensor::zeros(cout, ho, wo);
    for oc in 0..cout {
        let o = out.plane_mut(oc);
        if let Some(b) = bias {
            o.iter_mut().for_each(|v| *v = b[oc]);
        }
        for ic in 0..cin {
            let k = &weight[(oc * cin + ic) * 9..(oc * cin + ic) * 9 + 9];
            let plane = &xp[ic * ph * pw..(ic + 1) * ph * pw];
            if stride == 1 {
                for y in 0..ho {
                    let orow = &mut o[y * wo..(y + 1) * wo];
                    let r0 = &plane[y * pw..y * pw + pw];
                    let r1 = &plane[(y + 1) * pw..(y + 1) * pw + pw];
                    let r2 = &plane[(y + 2) * pw..(y + 2) * pw + pw];
                    let (a0, a1, a2) = (&r0[..wo], &r0[1..wo + 1], &r0[2..wo + 2]);
                    let (b0, b1, b2) = (&r1[..wo], &r1[1..wo + 1], &r1[2..wo + 2]);
                    let (c0, c1, c2) = (&r2[..wo], &r2[1..wo + 1], &r2[2..wo + 2]);
                    for x in 0..wo {
                        orow[x] += k[0] * a0[x] + k[1] * a1[x] + k[2] * a2[x]
                            + k[3] * b0[x] + k[4] * b1[x] + k[5] * b2[x]
                            + k[6] * c0[x] + k[7] * c1[x] + k[8] * c2[x];
                    }
                }
            } else {
                for y in 0..ho {
                    let orow = &mut o[y * wo..(y + 1) * wo];
                    let r0 = &plane[(2 * y) * pw..(2 * y) * pw + pw];
                    let r1 = &plane[(2 * y + 1) * pw..(2 * y + 1) * pw + pw];
                    let r2 = &plane[(2 * y + 2) * pw..(2 * y + 2) * pw + pw];
                    for x in 0..wo {
                        let i = 2 * x;
                        orow[x] += k[0] * r0[i] + k[1] * r0[i + 1] + k[2] * r0[i + 2]
                            + k[3] * r1[i] + k[4] * r1[i + 1] + k[5] * r1[i + 2]
                            + k[6] * r2[i] + k[7] * r2[i + 1] + k[8] * r2[i + 2];
                    }
                }
            }
        }
    }
    out
}

/// Accumulates weight (and bias) gradients of [`conv3x3`] into `dweight` / `dbias`.
pub fn conv3x3_param_grads<T: Real>(
    xp: &[T],
    cin: usize,
    h: usize,
    w: usize,
    dy: &Tensor<T>,
    stride: usize,
    dweight: &mut [T],
    dbias: Option<&mut [T]>,
) {
    let (ho, wo) = (dy.h, dy.w);
    let (ph, pw) = (h + 2, w + 2);
    let cout = dy.c;
    let mut strided = vec![T::zero(); wo];
    for oc in 0..cout {
        let d = dy.plane(oc);
        for ic in 0..cin {
            let plane = &xp[ic * ph * pw..(ic + 1) * ph * pw];
            let mut acc = [T::zero(); 9];
            for y in 0..ho {
                let drow = &d[y * wo..(y + 1) * wo];
                for ky in 0..3 {
                    let r = &plane[(y * stride + ky) * pw..(y * stride + ky) * pw + pw];
                    for kx in 0..3 {
                        if stride == 1 {
                            acc[ky * 3 + kx] += dot(drow, &r[kx..kx + wo]);
                        } else {
                            for (x, s) in strided.iter_mut().enumerate() {
                                *s = r[2 * x + kx];
                            }
                            acc[ky * 3 + kx] += dot(drow, &strided);
                        }
                    }
                }
            }
            let g = &mut dweight[(oc * cin + ic) * 9..(oc * cin + ic) * 9 + 9];
            for t in 0..9 {
                g[t] += acc[t];
            }
        }
    }
    if let Some(db) = dbias {
        for oc in 0..cout {
            db[oc] += sum(dy.plane(oc));
        }
    }
}

/// Input gradient of [`conv3x3`]: the transposed correlation with
/// 180-degree-rotated kernels (on the zero-dilated gradient for stride 2).
pub fn conv3x3_input_grad<T: Real>(dy: &Tensor<T>, weight: &[T], cin: usize, h: usize, w: usize, stride: usize) -> Tensor<T> {
    let cout = dy.c;
    let mut rot = vec![T::zero(); cin * cout * 9];
    for oc in 0..cout {
        for ic in 0..cin {
            for t in 0..9 {
                rot[(ic * cout + oc) * 9 + t] = weight[(oc * cin + ic) * 9 + 8 - t];
            }
        }
    }
    let full = if stride == 1 {
        dy.clone()
    } else {
        let mut dil = Tensor::zeros(cout, h, w);
        for c in 0..cout {
            let src = dy.plane(c);
            let dst = dil.plane_mut(c);
            for y in 0..dy.h {
                for x in 0..dy.w {
                    dst[(2 * y) * w + 2 * x] = src[y * dy.w + x];
                }
            }
        }
        dil
    };
    conv3x3(&pad1(&full), cout, h, w, &rot, None, cin, 1)
}
