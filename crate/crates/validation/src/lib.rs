//! Acceptance suite for `factorpred`.
//!
//! Everything lives in `tests/acceptance.rs`; run it with
//! `cargo test -p factorpred-validation --test acceptance -- --nocapture`.
//! Each criterion prints one `ACCEPT <id> PASS|FAIL` line on stderr.
