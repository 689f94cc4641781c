/// @file diagnostics.hpp
/// @brief A-posteriori audits of computed trajectories: the discrete energy
///        identity and inequality, the a-priori estimate totals, the parabolic
///        interpolation quotient, graph-monotonicity (Minty) margins, a weak
///        residual proxy against fixed smooth solenoidal fields, cross-level
///        interpolant distances on nested mesh/time hierarchies, parameter
///        sweeps toward the continuous problem, and versioned CSV emitters.
///
///        Everything here recomputes its quantities from the stored coefficient
///        trajectories through quadrature; nothing is read back from solver
///        internals, so the audits double as independent checks of the scheme.

#pragma once

#include <Eigen/Dense>

#include <iosfwd>
#include <string>
#include <vector>

#include "implicitflow/femspace.hpp"
#include "implicitflow/rheology.hpp"
#include "implicitflow/scheme.hpp"
#include "implicitflow/timegrid.hpp"

namespace implicitflow {

// ---------------------------------------------------------------------------
// Energy audits
// ---------------------------------------------------------------------------

/// Totals of the five a-priori estimate terms of one trajectory:
///   max_j ||U_j||_2^2,  sum_j ||U_j - U_{j-1}||_2^2,
///   delta * sum_j ||U_j||_{W^{1,q}}^q,  int_Q |S|^{q'} with the per-strip
///   time-averaged stress, and (delta/m) * sum_j ||U_j||_{2q'}^{2q'}.
/// All norms are quadrature norms on the trajectory's space.
struct AprioriQuantities {
    double max_kinetic_sq = 0.0;   ///< max over all nodes incl. the initial one
    double increment_sum = 0.0;
    double dissipation_sum = 0.0;  ///< Lebesgue + gradient q-powers, time-summed
    double stress_sum = 0.0;
    double penalty_sum = 0.0;      ///< zero when m = +infinity

    double total() const {
        return max_kinetic_sq + increment_sum + dissipation_sum + stress_sum + penalty_sum;
    }
};

/// Recompute the five a-priori totals from the stored coefficients.
/// Requires at least the initial node; partial (failed) trajectories are
/// audited over the nodes they contain.
AprioriQuantities apriori_quantities(const SimulationResult& run, const ProblemSetup& setup);

/// Full audit of one trajectory. All per-step vectors have length equal to the
/// number of completed steps (grid.l for a completed run); entry i-1 belongs to
/// step i. The audit recomputes every term by quadrature from the coefficients.
struct RunReport {
    /// |identity_i| where identity_i is the tested energy identity of step i:
    ///   (1/2)(||U_i||^2 - ||U_{i-1}||^2 + ||U_i - U_{i-1}||^2)
    ///   + delta <S_i(DU_i), DU_i> + (delta/m) ||U_i||_{2q'}^{2q'}
    ///   - delta <f_i, U_i>  = 0.
    std::vector<double> identity_residual;
    /// Magnitude scale of the identity: sum of absolute values of its terms.
    std::vector<double> identity_scale;
    /// Telescoped inequality slack at node i: the slack of
    ///   (1/2)||U_i||^2 + sum_{j<=i} [delta <S_j, DU_j> + penalty_j]
    ///   <= (1/2)||U_0||^2 + sum_{j<=i} delta <f_j, U_j>,
    /// which equals (1/2) sum_{j<=i} ||U_j - U_{j-1}||^2 in exact arithmetic
    /// and must stay above -tolerance.
    std::vector<double> inequality_slack;
    /// |2<dU, U> - (||U_i||^2 - ||U_{i-1}||^2 + ||U_i - U_{i-1}||^2)/delta|,
    /// the polarization identity behind the energy estimate.
    std::vector<double> algebraic_residual;

    // Per-step contributions to the a-priori totals.
    std::vector<double> kinetic_sq;    ///< ||U_i||_2^2 at the step's node
    std::vector<double> increment_sq;  ///< ||U_i - U_{i-1}||_2^2
    std::vector<double> dissipation;   ///< delta * ||U_i||_{W^{1,q}}^q
    std::vector<double> stress;        ///< int_strip |S_i(DU_i)|^{q'}
    std::vector<double> penalty;       ///< (delta/m) ||U_i||_{2q'}^{2q'}

    // Solver bookkeeping copied from the run (zeros when absent).
    std::vector<double> wall_seconds;
    std::vector<int> newton_iterations;
    std::vector<int> picard_iterations;
    std::vector<double> residual_norm;

    AprioriQuantities apriori;

    double stress_norm_Q = 0.0;     ///< ||S(., DU)||_{L^{q'}(Q)} = stress_sum^{1/q'}
    double parabolic_ratio = 0.0;   ///< see parabolic_interpolation_ratio
    /// Slack of the duality lower bound
    ///   <S(., DU), DU>_Q >= -||g~||_{L^1(Q)}
    ///     + c~ (||DU||_{L^q(Q)}^q + ||S||_{L^{q'}(Q)}^{q'}),
    /// with the mode-dependent coercivity pair of the approximation; must stay
    /// above -1e-8 * duality_scale.
    double duality_margin = 0.0;
    double duality_scale = 0.0;     ///< sum of absolute term magnitudes
};

/// Audit a trajectory against the discrete energy identity, the telescoped
/// inequality, the a-priori totals, the parabolic quotient, and the duality
/// bound. Partial trajectories are audited over their available steps.
/// Throws std::invalid_argument when the run holds no nodes.
RunReport energy_audit(const SimulationResult& run, const ProblemSetup& setup);

// ---------------------------------------------------------------------------
// Compactness-side quantities
// ---------------------------------------------------------------------------

/// Parabolic interpolation quotient of the piecewise-constant interpolant,
///   int_Q |U|^{q(d+2)/d} / ( ||U||_{L^q(W^{1,q})}^q * ||U||_{L^inf(L^2)}^{2q/d} ),
/// with d = 2. Invariant under scaling U -> lambda U; the division is guarded:
/// an identically zero trajectory returns 0.
double parabolic_interpolation_ratio(const SimulationResult& run, const ProblemSetup& setup);

/// One monotonicity probe: a constant symmetric comparison tensor B and a
/// nonnegative space-time weight phi(t, x, y). An empty weight means phi = 1.
struct MintyProbe {
    Eigen::Matrix2d tensor = Eigen::Matrix2d::Zero();
    std::function<double(double, double, double)> weight;
};

/// Margins int_Q (S^k(., DU) - S*(., B)) : (DU - B) phi dz, one per probe,
/// with S* the exact radial selection of the underlying graph. For the exact
/// approximation mode the integrand is pointwise nonnegative, so each margin
/// is nonnegative up to roundoff; for the regularized modes it is bounded
/// below by the graph-approximation defect, which shrinks like 1/k.
std::vector<double> minty_margins(const SimulationResult& run, const ProblemSetup& setup,
                                  const std::vector<MintyProbe>& probes);

/// Margins of two trajectories against a common probe list; rows are
/// (history a, history b), columns follow the probe order.
struct MintyComparison {
    std::vector<double> margins_a;
    std::vector<double> margins_b;
};

MintyComparison minty_monitor(const SimulationResult& run_a, const SimulationResult& run_b,
                              const ProblemSetup& setup, const std::vector<MintyProbe>& probes);

/// A small default probe set: four constant symmetric tensors (zero, shear,
/// traceless diagonal, and a tensor of unit norm) crossed with the weights
/// phi = 1 and a separable space-time bump vanishing on the parabolic boundary.
std::vector<MintyProbe> default_minty_probes(double final_time);

/// Space-time residuals of the trajectory against 20 fixed smooth solenoidal
/// fields w_j = curl psi_j (psi_j a polynomial bump times a cosine pattern,
/// so w_j is divergence-free and vanishes on the boundary) with time weights
/// sin^2(c_j pi t / T):
///   r_j = int_0^T [ <d_t U, w_j> + b~(U, U, w_j) + <S_i(., DU), D w_j>
///                   + (1/m) <|U|^{2q'-2} U, w_j> - <f_i, w_j> ] phi_j(t) dt.
/// The fields are not members of the discrete space, so the residuals measure
/// consistency of the trajectory as an approximate weak solution; they are
/// reported, not asserted against.
std::vector<double> weak_residual_proxy(const SimulationResult& run, const ProblemSetup& setup);

// ---------------------------------------------------------------------------
// Cross-level distances
// ---------------------------------------------------------------------------

/// L^q(0, T; L^2) distance of the piecewise-constant velocity interpolants of
/// two runs on nested discretizations, computed by quadrature on the finer of
/// the two (common refinement). Requirements, all checked:
///  - equal final times; the finer step count is an integer multiple of the
///    coarser one (nested time grids);
///  - the fine mesh is the coarse mesh or its one-generation uniform
///    refinement (compare consecutive sweep levels); deeper nesting throws.
/// Returns exactly 0 when both runs carry identical coefficients on the same
/// discretization.
double interpolant_distance(const SimulationResult& fine, const MixedSpace& fine_space,
                            const SimulationResult& coarse, const MixedSpace& coarse_space,
                            double q);

/// L^q(0, T; L^2) distance of the piecewise-constant interpolant to a given
/// time-dependent reference field, by Gauss quadrature in time (quad_points
/// nodes per strip) and the space's quadrature rule in space.
double reference_distance(const SimulationResult& run, const MixedSpace& space,
                          const TimeVectorEvaluator& reference, double q, int quad_points);

// ---------------------------------------------------------------------------
// Parameter sweeps
// ---------------------------------------------------------------------------

/// Axis along which a sweep walks toward the continuous problem:
///   k  - graph approximation index, everything else fixed;
///   ln - simultaneous refinement: one uniform mesh refinement and one
///        halving of the time step per level;
///   m  - penalty index, everything else fixed.
enum class SweepAxis { k, ln, m };

/// Base problem of a sweep. Meshes are crisscross unit squares with
/// base_divisions subdivisions, refined base_refinements times at the first
/// level; the ln axis refines further per level.
struct SweepConfig {
    VelocityElement element = VelocityElement::MINI;
    std::size_t base_divisions = 2;
    int base_refinements = 0;
    double final_time = 0.5;
    int base_l = 8;
    GraphModel model = newtonian_model(1.0);
    ApproxMode mode = ApproxMode::exact;
    int base_k = 16;
    double base_m = 10.0;
    TimeVectorEvaluator forcing;       ///< empty = zero
    VectorEvaluator initial;           ///< empty = zero
    TimeVectorEvaluator reference;     ///< optional manufactured solution
    int quad_points = 4;
    SolverConfig solver;
};

/// One sweep level. diff_norm is the L^q(L^2) distance to the previous
/// completed level (-1 on the first row and whenever a neighbor failed);
/// manufactured_error is the distance to the reference field (-1 when none is
/// configured or the run failed).
struct SweepRow {
    double parameter = 0.0;
    bool completed = false;
    double diff_norm = -1.0;
    double manufactured_error = -1.0;
    AprioriQuantities apriori;
    std::string message;  ///< failure description when !completed
};

struct SweepTable {
    SweepAxis axis = SweepAxis::k;
    std::vector<SweepRow> rows;
};

/// Run the base problem once per level of the chosen axis and collect the
/// rows. Levels must be strictly increasing; k and ln levels must be
/// (consecutive, for ln) integers, m levels must be >= 1 or +infinity.
/// A failed solve is recorded on its row and the sweep continues.
SweepTable convergence_sweep(const SweepConfig& config, SweepAxis axis,
                             const std::vector<double>& levels);

// ---------------------------------------------------------------------------
// CSV emitters (schema versioned in the header row, %.17g round-trip format)
// ---------------------------------------------------------------------------

/// One row per step. Iteration counts are included (they are deterministic);
/// wall-clock seconds are not, so two identical runs emit bitwise-identical
/// files. Timings stay available on the RunReport itself.
void write_run_report_csv(std::ostream& out, const SimulationResult& run, const RunReport& report);

/// Single-row summary of a run audit: the five a-priori totals, the stress
/// norm, the parabolic quotient, the duality margin, and the 20 weak-residual
/// proxies.
void write_run_summary_csv(std::ostream& out, const RunReport& report,
                           const std::vector<double>& weak_residual);

/// One row per sweep level.
void write_sweep_csv(std::ostream& out, const SweepTable& table);

}  // namespace implicitflow
