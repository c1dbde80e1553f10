//! Holds the end-to-end acceptance binary in `tests/acceptance.rs`. It is a
//! separate package so `cargo test --workspace` runs it after every other
//! suite.
