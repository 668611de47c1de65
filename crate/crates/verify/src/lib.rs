//! Acceptance checks for the `cmrt` experiment; see `tests/acceptance.rs`.
