//! Reconstruction of an opaque object sealed inside a transparent box.
//!
//! The scene is split at the glass interface. Outside the box, light is a
//! constant ambient radiance. Inside, a neural signed distance field and an
//! appearance network are volume rendered. Camera rays are traced through the
//! box with Fresnel-weighted reflection and refraction, and the radiance of
//! every sub-ray is accumulated back to the pixel in reverse tracing order.
//!
//! The crate is `no_std` (with `alloc`). The `std` feature switches float
//! math to the platform library and `parallel` enables data-parallel batch
//! evaluation; results do not depend on either.

#![no_std]
#![deny(unsafe_code)]

extern crate alloc;
#[cfg(any(feature = "std", test))]
extern crate std;

pub mod autodiff;
pub mod camera;
pub mod error;
pub mod forge;
pub mod geometry;
pub mod loss;
pub mod math;
pub mod mesh;
pub mod nn;
pub mod optics;
pub mod render;
pub mod rng;
pub mod train;
pub mod volume;

pub use error::{Error, Result};
pub use geometry::{HitInterval, OrientedBox};
pub use math::{Mat3, Ray, Rgb, Vec3};
