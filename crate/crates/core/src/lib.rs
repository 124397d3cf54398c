//! Incremental 3D semantic scene graph prediction on a heterogeneous
//! global/local graph.
//!
//! Each frame's segmented point cloud becomes a local graph. Local nodes are
//! linked to the matching nodes of a global graph accumulated from earlier
//! frames, a graph neural network predicts object classes and predicates for
//! the local layer, and the prediction is merged back into the global layer.

/// A fieldless enum with snake_case names for serde, `Display` and `FromStr`.
macro_rules! named_enum {
    ($(#[$m:meta])* $name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        $(#[$m])*
        #[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
        pub enum $name {
            $(#[serde(rename = $text)] $variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self {
                    $($name::$variant => $text),+
                }
            }
        }

        impl std::fmt::Display for $name {
            fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl std::str::FromStr for $name {
            type Err = $crate::Error;

            fn from_str(s: &str) -> $crate::Result<Self> {
                match s {
                    $($text => Ok($name::$variant),)+
                    _ => Err($crate::Error::Config(format!(
                        concat!("unknown ", stringify!($name), " {:?}; expected one of {:?}"),
                        s,
                        [$($text),+]
                    ))),
                }
            }
        }
    };
}

pub mod checks;
pub mod datagen;
pub mod error;
pub mod geometry;
pub mod gradcheck;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod scene;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
