/// @file rheology.hpp
/// @brief Constitutive graphs between shear stress and rate of strain: radial
///        measurable selections for Newtonian, power-law, Bingham, and
///        Herschel-Bulkley models, their continuous approximations by mollification
///        and by piecewise-affine interpolation, analytic tangent operators for the
///        Newton solver, and a property battery checking monotonicity, coercivity,
///        and the graph-limit inequality.
///
/// All shipped laws are radial: S(z, D) = s(z, |D|) * D/|D| with s(z, 0) = 0, where
/// z = (t, x) is a space-time point. Models and approximations are immutable and all
/// evaluations are pure, so everything here is safe to share across threads.

#pragma once

#include <Eigen/Dense>

#include <string>
#include <vector>

namespace implicitflow {

/// Derived integrability exponents for a power index q and dimension d.
struct ExponentPack {
    double q;          ///< primary exponent, in (1, inf)
    double q_conj;     ///< conjugate q' = q/(q-1)
    double two_qconj;  ///< 2q' (regularization exponent)
    double hat_wq;     ///< max((q(d+2)/(2d))', q); +inf when q(d+2)/(2d) <= 1
    double eta;        ///< max(2q', q(d+2)/d), always > 2
    double tau;        ///< min(q', (2q')'), always > 1
    double mu_exp;     ///< min(q(d+2)/(2d), q', (2q')'); > 1 iff q > 2d/(d+2)
    bool admissible;   ///< q > 2d/(d+2)
};

/// Compute the exponent pack; throws std::invalid_argument for q <= 1 or d not in {2,3}.
ExponentPack exponents(double q, int d);

/// A space-time evaluation point z = (t, x).
struct SpaceTimePoint {
    double t = 0.0;
    double x = 0.0;
    double y = 0.0;
};

enum class GraphLaw { newtonian, power_law, bingham, herschel_bulkley };

/// A constitutive model: the measurable selection of a maximal monotone graph
/// between the shear stress S and the symmetric velocity gradient D, in radial form
/// s(z, r) with s(z, 0) = 0:
///   newtonian          s = 2*mu*r
///   power_law          s = 2*mu*r^(q-1)
///   bingham            s = tau_y(z) + 2*mu*r          (r > 0)
///   herschel_bulkley   s = tau_y(z) + 2*mu*r^(q-1)    (r > 0)
/// The stored coercivity constants (c_star, g) satisfy
///   r*s(z,r) >= -g(z) + c_star*(r^q + s(z,r)^(q'))  for all r >= 0.
struct GraphModel {
    GraphLaw law = GraphLaw::newtonian;
    double mu = 1.0;             ///< viscosity scale, > 0
    double tau_y = 0.0;          ///< yield stress, >= 0
    double q = 2.0;              ///< power exponent, in (1, inf)
    bool time_dependent = false; ///< yield stress modulated by 1 + sin(2*pi*t)/2
    double c_star = 0.0;         ///< coercivity constant
    double g_autonomous = 0.0;   ///< coercivity offset at the base yield stress

    /// Effective yield stress at z (tau_y * (1 + sin(2*pi*t)/2) when time-dependent).
    double yield_at(const SpaceTimePoint& z) const;

    /// Coercivity offset g(z) (depends on z only through the yield stress).
    double coercivity_g(const SpaceTimePoint& z) const;

    /// Radial selection s(z, r) for r >= 0 (s(z, 0) = 0 for every law).
    double radial(const SpaceTimePoint& z, double r) const;

    /// Classical radial slope ds/dr for r > 0 (laws are smooth away from r = 0).
    double radial_slope(const SpaceTimePoint& z, double r) const;

    /// Jump of the odd-extended radial law at r = 0 (2*tau_y(z) for yield-stress laws).
    double jump_at_zero(const SpaceTimePoint& z) const;

    /// Radii where the radial selection is discontinuous ({0} for yield-stress laws
    /// with positive tau_y, empty otherwise).
    std::vector<double> discontinuities() const;

    bool is_continuous() const { return discontinuities().empty(); }

    std::string name() const;
};

GraphModel newtonian_model(double mu);
GraphModel power_law_model(double mu, double q);
GraphModel bingham_model(double tau_y, double mu);
GraphModel herschel_bulkley_model(double tau_y, double mu, double q);
/// Test model with oscillating yield stress tau_y(t) = tau_y * (1 + sin(2*pi*t)/2);
/// exercises the z-dependent law path and time averaging.
GraphModel bingham_oscillating_model(double tau_y, double mu);

enum class ApproxMode { exact, mollify, affine_interp };

/// A Caratheodory approximation S^k of the selection: either the selection itself
/// (`exact`), a 1D mollification of the odd-extended radial law with the C-infinity
/// bump kernel scaled to [-1/k, 1/k] (`mollify`), or the piecewise-affine interpolant
/// across the radial discontinuity set (`affine_interp`). Outside the union of the
/// intervals [a_i - 1/k, a_i + 1/k] the affine mode equals the selection bitwise.
struct GraphApprox {
    GraphModel base;
    ApproxMode mode = ApproxMode::exact;
    int k = 1;                              ///< approximation index (>= k_0 for affine)
    std::vector<double> discontinuity_set;  ///< sorted radial jump locations {a_0, ...}
    int k_0 = 1;                            ///< minimal admissible k (2/k_0 < min gap)

    /// Radial value of the approximation at r >= 0.
    double radial(const SpaceTimePoint& z, double r) const;

    /// Radial slope; at a kink of the affine interpolant the right-limit slope is used.
    double radial_slope(const SpaceTimePoint& z, double r) const;
};

/// Build an approximation; throws std::invalid_argument when mode = affine_interp and
/// k < k_0 (the message carries the computed k_0).
GraphApprox make_approx(GraphModel model, ApproxMode mode, int k);

/// Minimal admissible interpolation index for a model's discontinuity set: smallest
/// integer with 2/k_0 strictly below the minimal gap between jump radii (1 when the
/// set has fewer than two points).
int minimal_approx_index(const GraphModel& model);

/// Tensor selection S*(z, D) = s(z,|D|) D/|D|, zero at D = 0.
Eigen::Matrix2d eval_selection(const GraphModel& model, const Eigen::Matrix2d& D,
                               const SpaceTimePoint& z = {});

/// Tensor approximation S^k(z, D).
Eigen::Matrix2d eval_approx(const GraphApprox& approx, const Eigen::Matrix2d& D,
                            const SpaceTimePoint& z = {});

/// Fourth-order tangent dS^k/dD at D, represented through its action on a symmetric
/// direction E:
///   T[E] = coef_dir * (Dhat:E) Dhat + coef_perp * (E - (Dhat:E) Dhat),
/// with Dhat = D/|D|; at D = 0 the operator is isotropic, T[E] = slope(0+) * E.
struct TangentOperator {
    double coef_dir = 0.0;   ///< radial slope s'(|D|)
    double coef_perp = 0.0;  ///< secant s(|D|)/|D|
    Eigen::Matrix2d dhat = Eigen::Matrix2d::Zero();

    Eigen::Matrix2d apply(const Eigen::Matrix2d& E) const {
        if (dhat.isZero(0.0)) return coef_dir * E;
        const double proj = (dhat.array() * E.array()).sum();
        return coef_dir * proj * dhat + coef_perp * (E - proj * dhat);
    }
};

/// Tangent of the approximation; throws std::invalid_argument in exact mode when the
/// selection is discontinuous at |D|.
TangentOperator approx_derivative(const GraphApprox& approx, const Eigen::Matrix2d& D,
                                  const SpaceTimePoint& z = {});

/// Result of the property battery. The battery reports findings and never throws.
struct BatteryReport {
    int sample_count = 0;
    int monotonicity_violations = 0;       ///< pairs with normalized pairing < -1e-12
    double max_monotonicity_violation = 0; ///< max(0, -min normalized pairing)
    double min_coercivity_margin = 0;      ///< min over samples of D:S + g~ - c~*(|D|^q + |S|^q')
    double c_star_tilde = 0;               ///< coercivity constant used
    double g_tilde_max = 0;                ///< largest coercivity offset used over samples
    double min_graph_limit_margin = 0;     ///< min over pairs of (S^k(D) - S*(B)):(D - B)
    double graph_limit_floor = 0;          ///< theoretical floor (-c/k; 0 in exact mode)
};

/// Sample `sample_count` random symmetric tensor pairs (radii concentrated around the
/// discontinuity intervals) and evaluate:
///  (i)  monotonicity of S^k on pairs, normalized by (1 + |D1| + |D2|)^2;
///  (ii) the coercivity margin with mode-dependent constants -- exact/mollify keep
///       (c_star, g); affine interpolation uses c~ = 2^{-(q'-1)} c_star and
///       g~(z) = 2 s*(z, a_I + 1)(a_I + 1) + c_star 2^{q'} s*(z, a_I + 1)^{q'} + g(z);
///  (iii) the graph-limit pairing (S^k(z,D) - S*(z,B)) : (D - B) against its floor
///       (0 exact; -4 s*(r_cap)/k affine; -2 s*(r_cap)/k mollify, where r_cap is one
///       more than the larger of the outermost jump radius and the largest sampled
///       radius).
BatteryReport check_assumption_battery(const GraphApprox& approx, int sample_count,
                                       unsigned rng_seed);

/// Normalized mollifier mass computed by the same quadrature that evaluates the
/// mollified law; equals 1 up to quadrature error (self-check used by tests).
double mollifier_mass_check(int k);

/// Coercivity constant c~ valid for the approximated law: the model constant in
/// exact and mollify modes, the weakened 2^{-(q'-1)} c_star for the affine
/// interpolant of a discontinuous law.
double approx_coercivity_constant(const GraphApprox& approx);

/// Coercivity offset g~(z, r) paired with approx_coercivity_constant, so that
///   S^k(z, D) : D + g~(z, |D|) >= c~ (|D|^q + |S^k(z, D)|^{q'})
/// holds for every D. Exact mode returns the model offset g(z); the affine
/// interpolant adds the edge terms at radius a_I + 1; mollification adds the
/// radius-dependent Jensen defect s*(z, r + 1/k)/k wherever the law is not
/// affine on the mollification window.
double approx_coercivity_offset(const GraphApprox& approx, const SpaceTimePoint& z, double r);

}  // namespace implicitflow
