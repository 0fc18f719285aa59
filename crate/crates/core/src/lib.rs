pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod metrics;
pub mod optim;
pub mod params;
pub mod rng;
pub mod se;
pub mod swin;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Real, Tape, Tensor, Var};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/tensors.md")]
    mod tensors {}
    #[doc = include_str!("../../../book/src/windows.md")]
    mod windows {}
    #[doc = include_str!("../../../book/src/model.md")]
    mod model {}
    #[doc = include_str!("../../../book/src/excitation.md")]
    mod excitation {}
    #[doc = include_str!("../../../book/src/sam.md")]
    mod sam {}
    #[doc = include_str!("../../../book/src/data.md")]
    mod data {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
