//! Experiment harness shared by the `isac` binary and the integration tests:
//! scenario construction, Monte Carlo sweeps, and result serialization.
