//! Geometry kernel for the five non-constant-curvature Thurston geometries
//! (S²×R, H²×R, Nil, SL̃₂R and Sol) in a common projective model.

pub mod error;
pub mod geodesics;
pub mod model_core;
pub mod numerics;
pub mod packing;
pub mod ratios;
pub mod surfaces;
pub mod triangles;

pub use error::{GeomError, Result};
pub use model_core::{HPlane, HPoint, ProjMap, SpaceId};
