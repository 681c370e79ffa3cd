// Runs every Rust snippet in the guide as a doc-test, keeping the book in
// sync with the API. `cargo test --doc` picks these up.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/density-estimation.md")]
pub mod density_estimation {}

#[doc = include_str!("../../../book/src/elastic-network.md")]
pub mod elastic_network {}

#[doc = include_str!("../../../book/src/width-adaptation.md")]
pub mod width_adaptation {}

#[doc = include_str!("../../../book/src/training-and-alignment.md")]
pub mod training_and_alignment {}

#[doc = include_str!("../../../book/src/streams-and-evaluation.md")]
pub mod streams_and_evaluation {}
