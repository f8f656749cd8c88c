pub mod error;
pub mod falsify;
pub mod library;
pub mod orchestrator;
pub mod policy;
pub mod sim;
pub mod trainer;
pub mod util;

pub use error::{Error, Result};

// Compile and run the guide's code blocks as doc-tests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/intro.md")]
    mod intro {}
    #[doc = include_str!("../../../book/src/simulator.md")]
    mod simulator {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/falsification.md")]
    mod falsification {}
    #[doc = include_str!("../../../book/src/library.md")]
    mod library {}
    #[doc = include_str!("../../../book/src/loop.md")]
    mod generation_loop {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
