//! Shared scenario builders for the criterion benches.
