use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::conv::{conv3x3, conv3x3_input_grad, conv3x3_param_grads, out_size, pad1};
use super::real::Real;
use super::tensor::Tensor;

const NORM_EPS: f64 = 1e-5;
const PRELU_INIT: f64 = 0.25;

/// A named region of the flat parameter vector.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSlot {
    pub name: String,
    pub offset: usize,
    pub len: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ParamLayout {
    pub slots: Vec<ParamSlot>,
    pub total: usize,
}

impl ParamLayout {
    pub fn push(&mut self, name: String, len: usize) -> usize {
        let offset = self.total;
        self.slots.push(ParamSlot { name, offset, len });
        self.total += len;
        offset
    }

    pub fn slot(&self, name: &str) -> Option<&ParamSlot> {
        self.slots.iter().find(|s| s.name == name)
    }
}

/// conv3x3 (no bias) -> instance norm (affine) -> PReLU (per channel).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Block {
    pub cin: usize,
    pub cout: usize,
    pub stride: usize,
    weight: usize,
    gamma: usize,
    beta: usize,
    alpha: usize,
}

pub struct BlockCache<T> {
    xp: Vec<T>,
    in_h: usize,
    in_w: usize,
    xhat: Tensor<T>,
    inv_std: Vec<T>,
    z: Tensor<T>,
}

impl<T> BlockCache<T> {
    pub fn out_h(&self) -> usize {
        self.z.h
    }

    pub fn out_w(&self) -> usize {
        self.z.w
    }
}

impl Block {
    pub fn new(layout: &mut ParamLayout, prefix: &str, cin: usize, cout: usize, stride: usize) -> Self {
        use alloc::format;
        Self {
            cin,
            cout,
            stride,
            weight: layout.push(format!("{prefix}.conv.weight"), cout * cin * 9),
            gamma: layout.push(format!("{prefix}.norm.weight"), cout),
            beta: layout.push(format!("{prefix}.norm.bias"), cout),
            alpha: layout.push(format!("{prefix}.act.weight"), cout),
        }
    }

    pub fn init<T: Real, R: Rng>(&self, params: &mut [T], rng: &mut R) {
        let fan_in = (self.cin * 9) as f64;
        let bound = libm::sqrt(6.0 / ((1.0 + PRELU_INIT * PRELU_INIT) * fan_in));
        for v in &mut params[self.weight..self.weight + self.cout * self.cin * 9] {
            *v = T::lit(rng.gen_range(-bound..bound));
        }
        for c in 0..self.cout {
            params[self.gamma + c] = T::one();
            params[self.beta + c] = T::zero();
            params[self.alpha + c] = T::lit(PRELU_INIT);
        }
    }

    pub fn forward<T: Real>(&self, p: &[T], x: &Tensor<T>) -> (Tensor<T>, BlockCache<T>) {
        debug_assert_eq!(x.c, self.cin);
        let xp = pad1(x);
        let u = conv3x3(&xp, self.cin, x.h, x.w, &p[self.weight..self.weight + self.cout * self.cin * 9], None, self.cout, self.stride);
        let n = u.h * u.w;
        let nf = T::lit(n as f64);
        let mut xhat = u;
        let mut z = Tensor::zeros(self.cout, xhat.h, xhat.w);
        let mut y = Tensor::zeros(self.cout, xhat.h, xhat.w);
        let mut inv_std = vec![T::zero(); self.cout];
        for c in 0..self.cout {
            let plane = xhat.plane_mut(c);
            let mean = super::real::sum(plane) / nf;
            let mut var = T::zero();
            for v in plane.iter() {
                let d = *v - mean;
                var += d * d;
            }
            var /= nf;
            let is = T::one() / (var + T::lit(NORM_EPS)).sqrt();
            inv_std[c] = is;
            for v in plane.iter_mut() {
                *v = (*v - mean) * is;
            }
            let (g, b, a) = (p[self.gamma + c], p[self.beta + c], p[self.alpha + c]);
            let zp = &mut z.data[c * n..(c + 1) * n];
            let yp = &mut y.data[c * n..(c + 1) * n];
            for i in 0..n {
                let zv = g * plane[i] + b;
                zp[i] = zv;
                yp[i] = if zv > T::zero() { zv } else { a * zv };
            }
        }
        (
            y,
            BlockCache {
                xp,
                in_h: x.h,
                in_w: x.w,
                xhat,
                inv_std,
                z,
            },
        )
    }

    pub fn backward<T: Real>(&self, p: &[T], grads: &mut [T], cache: &BlockCache<T>, dy: &Tensor<T>) -> Tensor<T> {
        let n = dy.h * dy.w;
        let nf = T::lit(n as f64);
        let mut du = Tensor::zeros(self.cout, dy.h, dy.w);
        for c in 0..self.cout {
            let (g, a) = (p[self.gamma + c], p[self.alpha + c]);
            let d = dy.plane(c);
            let z = cache.z.plane(c);
            let xh = cache.xhat.plane(c);
            let dup = du.plane_mut(c);
            let (mut dalpha, mut dgamma, mut dbeta) = (T::zero(), T::zero(), T::zero());
            let (mut sum_dxh, mut sum_dxh_xh) = (T::zero(), T::zero());
            for i in 0..n {
                let dz = if z[i] > T::zero() {
                    d[i]
                } else {
                    dalpha += d[i] * z[i];
                    a * d[i]
                };
                dgamma += dz * xh[i];
                dbeta += dz;
                let dxh = dz * g;
                dup[i] = dxh;
                sum_dxh += dxh;
                sum_dxh_xh += dxh * xh[i];
            }
            grads[self.alpha + c] += dalpha;
            grads[self.gamma + c] += dgamma;
            grads[self.beta + c] += dbeta;
            let scale = cache.inv_std[c] / nf;
            for i in 0..n {
                dup[i] = scale * (nf * dup[i] - sum_dxh - xh[i] * sum_dxh_xh);
            }
        }
        let wlen = self.cout * self.cin * 9;
        conv3x3_param_grads(&cache.xp, self.cin, cache.in_h, cache.in_w, &du, self.stride, &mut grads[self.weight..self.weight + wlen], None);
        conv3x3_input_grad(&du, &p[self.weight..self.weight + wlen], self.cin, cache.in_h, cache.in_w, self.stride)
    }

    #[allow(dead_code)]
    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        (out_size(h, self.stride), out_size(w, self.stride))
    }
}

/// Output layer: conv3x3 with bias followed by tanh.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TanhHead {
    pub cin: usize,
    pub cout: usize,
    weight: usize,
    bias: usize,
}

pub struct HeadCache<T> {
    xp: Vec<T>,
    in_h: usize,
    in_w: usize,
    out: Tensor<T>,
}

impl TanhHead {
    pub fn new(layout: &mut ParamLayout, prefix: &str, cin: usize, cout: usize) -> Self {
        use alloc::format;
        Self {
            cin,
            cout,
            weight: layout.push(format!("{prefix}.conv.weight"), cout * cin * 9),
            bias: layout.push(format!("{prefix}.conv.bias"), cout),
        }
    }

    pub fn init<T: Real, R: Rng>(&self, params: &mut [T], rng: &mut R) {
        let bound = libm::sqrt(3.0 / (self.cin * 9) as f64);
        for v in &mut params[self.weight..self.weight + self.cout * self.cin * 9] {
            *v = T::lit(rng.gen_range(-bound..bound));
        }
        for c in 0..self.cout {
            params[self.bias + c] = T::zero();
        }
    }

    pub fn forward<T: Real>(&self, p: &[T], x: &Tensor<T>) -> (Tensor<T>, HeadCache<T>) {
        let xp = pad1(x);
        let wlen = self.cout * self.cin * 9;
        let mut out = conv3x3(&xp, self.cin, x.h, x.w, &p[self.weight..self.weight + wlen], Some(&p[self.bias..self.bias + self.cout]), self.cout, 1);
        out.data.iter_mut().for_each(|v| *v = v.tanh_libm());
        let cache = HeadCache {
            xp,
            in_h: x.h,
            in_w: x.w,
            out: out.clone(),
        };
        (out, cache)
    }

    pub fn backward<T: Real>(&self, p: &[T], grads: &mut [T], cache: &HeadCache<T>, dy: &Tensor<T>) -> Tensor<T> {
        let mut du = dy.clone();
        for (d, t) in du.data.iter_mut().zip(&cache.out.data) {
            *d *= T::one() - *t * *t;
        }
        let wlen = self.cout * self.cin * 9;
        let (dw, rest) = grads[self.weight..].split_at_mut(wlen);
        let db = if self.bias == self.weight + wlen {
            &mut rest[..self.cout]
        } else {
            unreachable!("head bias follows its weight")
        };
        conv3x3_param_grads(&cache.xp, self.cin, cache.in_h, cache.in_w, &du, 1, dw, Some(db));
        conv3x3_input_grad(&du, &p[self.weight..self.weight + wlen], self.cin, cache.in_h, cache.in_w, 1)
    }
}
