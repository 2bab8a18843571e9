//! Acceptance checks for the polynode workspace; see tests/acceptance.rs.
