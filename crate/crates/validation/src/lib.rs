//! Holds the end-to-end acceptance suite in `tests/acceptance.rs`.
//!
//! It lives in its own package so that it runs after the unit and
//! integration tests of the other crates: a failing criterion makes the
//! binary exit nonzero, and cargo stops at the first failing test binary.
