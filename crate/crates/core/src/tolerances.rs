//! Numerical tolerances shared across modules.

/// Constructor validation (idempotency, trace, tangency, orthonormality).
pub const CONSTRUCTION_TOL: f64 = 1e-10;

/// Deterministic algebraic identities in double precision.
pub const IDENTITY_TOL: f64 = 1e-12;

/// Finite-difference checks.
pub const FINITE_DIFFERENCE_TOL: f64 = 1e-6;

/// Largest allowed jump `‖q_{k+1} − q_k‖_F` along a discretized path.
pub const STEP_JUMP_LIMIT: f64 = 0.5;

/// Condition-number ceiling for frame pullbacks.
pub const CONDITION_LIMIT: f64 = 1e8;
