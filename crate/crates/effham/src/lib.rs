//! Effective Hamiltonians H̄(P), stochastic occupation measures, and
//! stationary densities for ergodic controlled diffusions on the torus
//! 𝕋ⁿ (n = 1, 2).
//!
//! The underlying control problem is
//!
//! ```text
//! dx = v(x) dt + σ dW,      minimize long-run average of L(x, v) + P·v,
//! ```
//!
//! whose optimal average cost is −H̄(P), the effective Hamiltonian of the
//! homogenized Hamilton–Jacobi equation. The library computes H̄ by four
//! independent routes that cross-validate each other:
//!
//! 1. [`cell`] — the stationary Hamilton–Jacobi–Bellman ("cell") equation
//!    −σ²/2 Δu + H(P + ∇u, x) = H̄(P), solved by policy iteration;
//! 2. [`lp`] — the infinite-dimensional linear program over occupation
//!    measures, discretized on a product grid and solved by a dense simplex;
//! 3. [`spectral`] — for mechanical models, the principal eigenvalue of a
//!    linear second-order operator obtained from the HJB equation by a
//!    logarithmic change of variables;
//! 4. [`sim`] — Monte-Carlo simulation of the optimally controlled diffusion,
//!    recovering ∂H̄/∂P from mean displacement.
//!
//! [`density`] builds the stationary density θ of the optimal diffusion (the
//! x-marginal of the minimizing occupation measure) and checks the integral
//! identities it satisfies; [`sweep`] studies the small-noise limit σ → 0 and
//! the regularity of u and θ.
//!
//! Grids are uniform and periodic ([`grid`]); models ([`model`]) are either
//! mechanical (L = |v|²/2 − V(x)) or tabulated on a velocity box.

pub mod cell;
pub mod density;
pub mod grid;
pub mod lp;
pub mod model;
pub mod sim;
pub mod spectral;
pub mod sweep;
