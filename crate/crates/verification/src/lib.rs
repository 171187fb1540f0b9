//! Acceptance checks for `eir-eq`.
//!
//! The checks live in the `acceptance` test target of this package. Run them
//! with `cargo test -p eir-eq-verification --test acceptance`.
