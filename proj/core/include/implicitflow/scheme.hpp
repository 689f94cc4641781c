/// @file scheme.hpp
/// @brief Implicit Euler stepping of the regularized momentum system.
///
/// Each step solves, over the discretely divergence-free test space,
///
///     (1/delta) <U_i - U_{i-1}, W>  + bt(U_i, U_i, W) + <S_i(., DU_i), DW>
///         + (1/m) <|U_i|^{2q'-2} U_i, W>  =  <f_i, W>,
///
/// where S_i and f_i are the mean values of the (possibly time-dependent)
/// approximated constitutive law and of the forcing over (t_{i-1}, t_i], and
/// bt is the skew-symmetrized convection form. The divergence-free subspace is
/// never materialized: iterates carry the full velocity coefficient vector
/// together with a pressure multiplier and a zero-mean multiplier, and the
/// saddle-extended residual keeps the divergence rows explicit. Nonlinear steps
/// are solved by damped Newton inside an a-priori trust ball, with an
/// energy-stable Picard fallback.
#pragma once

#include "implicitflow/femspace.hpp"
#include "implicitflow/rheology.hpp"
#include "implicitflow/timegrid.hpp"

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <functional>
#include <string>
#include <vector>

namespace implicitflow {

/// Time-dependent plane field (t, x, y) -> R^2.
using TimeVectorEvaluator = std::function<Eigen::Vector2d(double, double, double)>;

/// One discrete initial-value problem: mixed space, constitutive approximation,
/// time grid, regularization index, forcing, and initial datum. The space must
/// outlive the setup. Empty forcing/initial evaluators mean the zero field.
struct ProblemSetup {
    const MixedSpace* space = nullptr;
    GraphApprox approx;
    TimeGrid grid;
    /// Regularization index m >= 1; +infinity disables the penalty (1/m = 0).
    double m = 1.0;
    /// Exponent bookkeeping derived from approx.base.q with d = 2.
    ExponentPack exponents;
    TimeVectorEvaluator forcing;  ///< f(t, x, y); empty = zero
    VectorEvaluator initial;      ///< u_0(x, y); empty = zero
    int quad_points = 4;          ///< Gauss-Legendre node count for all time means
    /// Set when q <= 2d/(d+2): the solver still runs but the energy estimates
    /// carry no compactness, so convergence claims are void.
    bool admissibility_warning = false;
};

/// Validated setup constructor. Throws std::invalid_argument when m < 1 or
/// quad_points < 1. The exponent pack always matches approx.base.q.
ProblemSetup make_setup(const MixedSpace& space, GraphApprox approx, TimeGrid grid, double m,
                        TimeVectorEvaluator forcing = {}, VectorEvaluator initial = {},
                        int quad_points = 4);

/// Saddle-extended iterate/residual pair. Both vectors use the layout
/// [free velocity DOFs | pressure DOFs | zero-mean multiplier]; constrained
/// boundary velocity DOFs are held at zero and never enter the system. At a
/// solution the divergence block and the mean row vanish, so the velocity block
/// is exactly the residual against every discretely divergence-free test field.
struct StepResidual {
    Eigen::VectorXd alpha;  ///< iterate
    Eigen::VectorXd value;  ///< F(alpha)
};

/// Nonlinear solver knobs for one implicit step.
struct SolverConfig {
    double newton_tol = 1e-10;          ///< residual target relative to 1 + ||F(0)||
    int max_newton = 30;                ///< Newton iteration budget per step
    double min_damping = 1.0 / 4096.0;  ///< backtracking floor (halving)
    bool picard_fallback = true;        ///< enable the energy-stable Picard fallback
    int max_picard = 25;                ///< Picard sweep budget per step
    /// Safety factor on the a-priori kinetic-energy ball that bounds accepted
    /// iterates (the same ball that yields existence of the discrete solution).
    double trust_factor = 2.0;
};

/// Convergence record of one implicit step.
struct StepStats {
    int step = 0;                  ///< time index i (1-based)
    int newton_iterations = 0;
    int picard_iterations = 0;
    bool used_fallback = false;
    double residual_norm = 0.0;    ///< final ||F||
    double reference_norm = 0.0;   ///< ||F(0)|| used in the relative target
    double div_residual = 0.0;     ///< final max-norm of divergence + mean rows
    double wall_seconds = 0.0;
    std::vector<double> residual_history;  ///< ||F|| after each accepted update
};

/// Result of one implicit step.
struct StepSolution {
    DiscreteField velocity;    ///< full coefficient vector on the setup space
    Eigen::VectorXd pressure;  ///< pressure multiplier (zero quadrature mean)
    double multiplier = 0.0;   ///< zero-mean constraint multiplier
    StepStats stats;
    bool converged = false;
    std::string message;       ///< failure description when !converged
};

// ---------------------------------------------------------------------------
// Vector layout helpers
// ---------------------------------------------------------------------------

/// Size of the saddle-extended system: free velocity + pressure + 1.
std::size_t step_system_size(const MixedSpace& space);

/// Extract the free velocity entries of a full velocity coefficient vector.
Eigen::VectorXd restrict_to_free(const MixedSpace& space, const Eigen::VectorXd& full);

/// Scatter free velocity entries into a full vector (zeros on the boundary).
Eigen::VectorXd extend_to_full(const MixedSpace& space, const Eigen::VectorXd& free_part);

/// Velocity field carried by a saddle-extended iterate.
DiscreteField velocity_from_alpha(const MixedSpace& space, const Eigen::VectorXd& alpha);

// ---------------------------------------------------------------------------
// Convection forms
// ---------------------------------------------------------------------------

/// Convective trilinear form b(u, v, w) = -<u (x) v, grad w>: the first
/// argument convects. Evaluated by the space quadrature rule.
double form_b(const MixedSpace& space, const DiscreteField& u, const DiscreteField& v,
              const DiscreteField& w);

/// Skew-symmetrized convection bt(u, v, w) = (<u (x) w, grad v> - <u (x) v, grad w>)/2.
/// Satisfies bt(u, v, v) = 0 identically and b - bt = <div u, v . w>/2, so the
/// two forms agree whenever the convecting argument is pointwise solenoidal.
double form_b_tilde(const MixedSpace& space, const DiscreteField& u, const DiscreteField& v,
                    const DiscreteField& w);

// ---------------------------------------------------------------------------
// Step operators
// ---------------------------------------------------------------------------

/// Mean value over (t_{i-1}, t_i] of the approximated stress at strain D and
/// position (x, y), by Gauss-Legendre with setup.quad_points nodes. Autonomous
/// laws collapse to a single evaluation.
Eigen::Matrix2d averaged_stress(const ProblemSetup& setup, int i, double x, double y,
                                const Eigen::Matrix2d& D);

/// Load vector over free velocity DOFs: <f_i, W_r> with f_i the time mean of
/// the forcing over (t_{i-1}, t_i]. Zero when the setup has no forcing.
Eigen::VectorXd assemble_step_load(const ProblemSetup& setup, int i);

/// Residual of step i at the given iterate, with U_{i-1} = U_prev.
StepResidual assemble_residual(const ProblemSetup& setup, const DiscreteField& U_prev,
                               const Eigen::VectorXd& alpha, int i);

/// Jacobian of the step residual at the given iterate. Wherever the radial law
/// has a kink the tangent uses the right-limit slope; exact mode at a jump
/// radius throws (the approximation modes are smooth there by construction).
Eigen::SparseMatrix<double> assemble_step_jacobian(const ProblemSetup& setup,
                                                   const DiscreteField& U_prev,
                                                   const Eigen::VectorXd& alpha, int i);

/// Solve step i from U_prev. Never throws on solver failure: the returned
/// solution has converged = false and a diagnostic message instead.
StepSolution solve_step(const ProblemSetup& setup, const DiscreteField& U_prev, int i,
                        const SolverConfig& config);

// ---------------------------------------------------------------------------
// Simulation driver
// ---------------------------------------------------------------------------

/// Full trajectory of one run. velocity[j] holds the full coefficient vector at
/// node t_j (entry 0 is the projected initial datum); pressure[0] is zero by
/// convention. On failure the trajectory is truncated after the last
/// successful node and `completed` is false.
struct SimulationResult {
    TimeGrid grid;
    std::vector<Eigen::VectorXd> velocity;
    std::vector<Eigen::VectorXd> pressure;
    std::vector<StepStats> steps;
    bool completed = false;
    int failed_step = 0;          ///< first failing step index (0 when completed)
    std::string failure_message;

    /// View the trajectory as a nodal state history; throws std::runtime_error
    /// unless the run completed.
    StateHistory as_history() const;
};

/// March the scheme from U_0 = P^n_div u_0 over the whole grid.
SimulationResult run_simulation(const ProblemSetup& setup, const SolverConfig& config);

// ---------------------------------------------------------------------------
// Built-in analytic fields
// ---------------------------------------------------------------------------

/// Compactly supported vortex on the unit square,
///   u_0 = 100 (X(x) Y'(y), -X'(x) Y(y)),  X(s) = Y(s) = s^2 (1-s)^2.
/// Pointwise solenoidal with a double zero on the boundary.
VectorEvaluator taylor_vortex_initial();

/// Decaying vortex u*(t, x, y) = e^{-t} u_0(x, y) used as the manufactured
/// Newtonian solution (pressure identically zero).
TimeVectorEvaluator manufactured_velocity();

/// Closed-form forcing that makes the decaying vortex solve the Newtonian
/// momentum equation with viscosity mu:
///   f = d_t u* - mu Lap u* + (u* . grad) u*.
TimeVectorEvaluator manufactured_forcing(double mu);

}  // namespace implicitflow
