//! Acceptance checks for `cph-core`; see `tests/acceptance.rs`.
