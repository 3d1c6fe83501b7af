//! Dense 2-D numerics and a reverse-mode tape.
//!
//! Everything the model needs is a matrix: per-metapath tables are
//! `n_target × width`, attention scores are columns, losses are `1 × 1`.
//! Values are generic over [`Scalar`] so that training can run in `f32`
//! while gradient checks run in `f64`.

mod matrix;
pub mod nn;
mod params;
mod tape;

use std::fmt::Debug;
use std::iter::Sum;

use num_traits::{Float, FromPrimitive};

pub use matrix::Matrix;
pub use nn::{Activation, Linear, Mlp};
pub use params::{load_checkpoint, save_checkpoint, ParamId, ParamStore};
pub use tape::{Tape, Var};

pub trait Scalar:
    Float + FromPrimitive + Default + Debug + Send + Sync + Sum + std::ops::AddAssign + 'static
{
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 converts to every scalar type")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
