//! Functional and timing model of an embedded-FPGA LLM decoding accelerator.

pub mod config;
pub mod dataflow;
pub mod dram;
pub mod error;
pub mod quant;
pub mod system;
pub mod vpu;

pub use config::Presets;
pub use error::{Error, Result};

#[cfg(doctest)]
mod guide {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/quantization.md")]
    mod quantization {}
    #[doc = include_str!("../../../book/src/vector-engine.md")]
    mod vector_engine {}
    #[doc = include_str!("../../../book/src/dram.md")]
    mod dram {}
    #[doc = include_str!("../../../book/src/attention-dataflow.md")]
    mod attention_dataflow {}
    #[doc = include_str!("../../../book/src/system-model.md")]
    mod system_model {}
    #[doc = include_str!("../../../book/src/tiny-model.md")]
    mod tiny_model {}
    #[doc = include_str!("../../../book/src/configuration.md")]
    mod configuration {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
