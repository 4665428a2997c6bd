//! Deterministic image-math primitives.

pub mod color;
pub mod filters;
pub mod geometry;
pub mod inpaint;

pub use color::luminance_lab;
pub use filters::{gaussian_blur, grad_sum, guided_filter, median_filter, GUIDED_FILTER_EPS};
pub use geometry::{crop, crop_mask, flip_horizontal, flip_mask, resize, resize_mask, Window};
pub use inpaint::inpaint_diffusion;
