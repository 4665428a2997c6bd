use crate::image::{RasterImage, ValueRange};

/// Small deterministic generator for test fixtures.
pub struct Lcg(pub u64);

impl Lcg {
    pub fn next_f32(&mut self) -> f32 {
        self.0 = self.0.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((self.0 >> 40) as f32) / ((1u64 << 24) as f32)
    }
}

pub fn random_image(rng: &mut Lcg, h: usize, w: usize, c: usize) -> RasterImage {
    RasterImage::from_fn(h, w, c, ValueRange::Unit, |_, _, _| rng.next_f32()).unwrap()
}
