//! Acceptance checks for the workspace. The checks live in
//! `tests/acceptance.rs`; run them with
//! `cargo test -p coexec-suite --test acceptance`.
