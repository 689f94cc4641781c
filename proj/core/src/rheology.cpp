/// @file rheology.cpp
/// @brief Radial constitutive laws, mollified and affine-interpolated approximations,
///        tangent operators, and the assumption property battery.

#include "implicitflow/rheology.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>

namespace implicitflow {

namespace {

constexpr double kPi = 3.14159265358979323846;

double conjugate(double p) { return p / (p - 1.0); }

// ---------------------------------------------------------------------------
// Adaptive Simpson quadrature (recursive, absolute tolerance)
// ---------------------------------------------------------------------------

double simpson(double a, double fa, double b, double fb, double fm) {
    return (b - a) / 6.0 * (fa + 4.0 * fm + fb);
}

template <typename F>
double adaptive_step(const F& f, double a, double fa, double b, double fb, double m, double fm,
                     double whole, double tol, int depth) {
    const double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
    const double flm = f(lm), frm = f(rm);
    const double left = simpson(a, fa, m, fm, flm);
    const double right = simpson(m, fm, b, fb, frm);
    const double delta = left + right - whole;
    if (depth <= 0 || std::abs(delta) <= 15.0 * tol) return left + right + delta / 15.0;
    return adaptive_step(f, a, fa, m, fm, lm, flm, left, 0.5 * tol, depth - 1) +
           adaptive_step(f, m, fm, b, fb, rm, frm, right, 0.5 * tol, depth - 1);
}

template <typename F>
double adaptive_simpson(const F& f, double a, double b, double tol, int depth = 28) {
    if (!(b > a)) return 0.0;
    const double m = 0.5 * (a + b);
    const double fa = f(a), fb = f(b), fm = f(m);
    const double whole = simpson(a, fa, b, fb, fm);
    return adaptive_step(f, a, fa, b, fb, m, fm, whole, tol, depth);
}

// ---------------------------------------------------------------------------
// Mollifier kernel: the C-infinity bump exp(-1/(1-u^2)) on (-1,1), normalized to
// unit mass. The normalization constant is computed once by adaptive quadrature.
// ---------------------------------------------------------------------------

double bump_raw(double u) {
    const double w = 1.0 - u * u;
    return w > 0.0 ? std::exp(-1.0 / w) : 0.0;
}

double bump_normalization() {
    static const double c = 1.0 / adaptive_simpson(&bump_raw, -1.0, 1.0, 1e-16, 40);
    return c;
}

double bump(double u) { return bump_normalization() * bump_raw(u); }

}  // namespace

double mollifier_mass_check(int k) {
    if (k < 1) throw std::invalid_argument("mollifier_mass_check: k must be positive");
    const double kk = double(k);
    const auto scaled = [kk](double s) { return kk * bump(kk * s); };
    return adaptive_simpson(scaled, -1.0 / kk, 1.0 / kk, 1e-13, 32);
}

// ---------------------------------------------------------------------------
// Exponents
// ---------------------------------------------------------------------------

ExponentPack exponents(double q, int d) {
    if (!(q > 1.0)) throw std::invalid_argument("exponents: q must exceed 1");
    if (d != 2 && d != 3) throw std::invalid_argument("exponents: d must be 2 or 3");
    ExponentPack pack;
    pack.q = q;
    pack.q_conj = conjugate(q);
    pack.two_qconj = 2.0 * pack.q_conj;
    const double r = q * double(d + 2) / (2.0 * double(d));
    pack.hat_wq = (r > 1.0) ? std::max(conjugate(r), q) : std::numeric_limits<double>::infinity();
    pack.eta = std::max(pack.two_qconj, q * double(d + 2) / double(d));
    pack.tau = std::min(pack.q_conj, conjugate(pack.two_qconj));
    pack.mu_exp = std::min({r, pack.q_conj, conjugate(pack.two_qconj)});
    pack.admissible = q > 2.0 * double(d) / double(d + 2);
    return pack;
}

// ---------------------------------------------------------------------------
// Models
// ---------------------------------------------------------------------------

double GraphModel::yield_at(const SpaceTimePoint& z) const {
    return time_dependent ? tau_y * (1.0 + 0.5 * std::sin(2.0 * kPi * z.t)) : tau_y;
}

double GraphModel::coercivity_g(const SpaceTimePoint& z) const {
    if (!time_dependent) return g_autonomous;
    // g(z) = c_star * 2^{q'-1} * tau_y(z)^{q'} for the yield-stress laws.
    const double qc = conjugate(q);
    return c_star * std::pow(2.0, qc - 1.0) * std::pow(yield_at(z), qc);
}

double GraphModel::radial(const SpaceTimePoint& z, double r) const {
    if (r < 0.0) throw std::invalid_argument("GraphModel::radial: negative radius");
    if (r == 0.0) return 0.0;
    switch (law) {
        case GraphLaw::newtonian: return 2.0 * mu * r;
        case GraphLaw::power_law: return 2.0 * mu * std::pow(r, q - 1.0);
        case GraphLaw::bingham: return yield_at(z) + 2.0 * mu * r;
        case GraphLaw::herschel_bulkley: return yield_at(z) + 2.0 * mu * std::pow(r, q - 1.0);
    }
    return 0.0;
}

double GraphModel::radial_slope(const SpaceTimePoint&, double r) const {
    switch (law) {
        case GraphLaw::newtonian: return 2.0 * mu;
        case GraphLaw::bingham: return 2.0 * mu;
        case GraphLaw::power_law:
        case GraphLaw::herschel_bulkley: {
            // Slope of 2*mu*r^{q-1}; unbounded at r = 0 for q < 2, so clamp the
            // evaluation radius (affects only Newton iteration paths, never values).
            const double rr = std::max(r, 1e-10);
            return 2.0 * mu * (q - 1.0) * std::pow(rr, q - 2.0);
        }
    }
    return 0.0;
}

double GraphModel::jump_at_zero(const SpaceTimePoint& z) const {
    switch (law) {
        case GraphLaw::bingham:
        case GraphLaw::herschel_bulkley: return 2.0 * yield_at(z);
        default: return 0.0;
    }
}

std::vector<double> GraphModel::discontinuities() const {
    if ((law == GraphLaw::bingham || law == GraphLaw::herschel_bulkley) && tau_y > 0.0)
        return {0.0};
    return {};
}

std::string GraphModel::name() const {
    switch (law) {
        case GraphLaw::newtonian: return "newtonian";
        case GraphLaw::power_law: return "power_law";
        case GraphLaw::bingham: return time_dependent ? "bingham_oscillating" : "bingham";
        case GraphLaw::herschel_bulkley: return "herschel_bulkley";
    }
    return "unknown";
}

namespace {

void check_model_parameters(double mu, double tau_y, double q) {
    if (!(mu > 0.0)) throw std::invalid_argument("rheology: mu must be positive");
    if (!(tau_y >= 0.0)) throw std::invalid_argument("rheology: tau_y must be nonnegative");
    if (!(q > 1.0)) throw std::invalid_argument("rheology: q must exceed 1");
}

}  // namespace

GraphModel newtonian_model(double mu) {
    check_model_parameters(mu, 0.0, 2.0);
    GraphModel m;
    m.law = GraphLaw::newtonian;
    m.mu = mu;
    m.q = 2.0;
    // r * 2*mu*r = 2*mu*r^2 >= c_star * (r^2 + 4*mu^2*r^2) with equality at
    // c_star = 2*mu / (1 + 4*mu^2); no offset needed.
    m.c_star = 2.0 * mu / (1.0 + 4.0 * mu * mu);
    m.g_autonomous = 0.0;
    return m;
}

GraphModel power_law_model(double mu, double q) {
    check_model_parameters(mu, 0.0, q);
    GraphModel m;
    m.law = GraphLaw::power_law;
    m.mu = mu;
    m.q = q;
    // r*s = 2*mu*r^q and s^{q'} = (2*mu)^{q'} r^q, so the sharp constant is
    // c_star = 2*mu / (1 + (2*mu)^{q'}); reduces to the Newtonian one at q = 2.
    m.c_star = 2.0 * mu / (1.0 + std::pow(2.0 * mu, conjugate(q)));
    m.g_autonomous = 0.0;
    return m;
}

GraphModel herschel_bulkley_model(double tau_y, double mu, double q) {
    check_model_parameters(mu, tau_y, q);
    GraphModel m;
    m.law = GraphLaw::herschel_bulkley;
    m.mu = mu;
    m.tau_y = tau_y;
    m.q = q;
    // With s = tau_y + 2*mu*r^{q-1} (r > 0):
    //   s^{q'} <= 2^{q'-1} (tau_y^{q'} + (2*mu)^{q'} r^q),
    // so r*s - c(r^q + s^{q'}) >= tau_y r + (2*mu - c(1 + 2^{q'-1}(2*mu)^{q'})) r^q
    //                              - c 2^{q'-1} tau_y^{q'} >= -g
    // with c = 2*mu / (1 + 2^{q'-1}(2*mu)^{q'}) and g = c 2^{q'-1} tau_y^{q'}.
    const double qc = conjugate(q);
    m.c_star = 2.0 * mu / (1.0 + std::pow(2.0, qc - 1.0) * std::pow(2.0 * mu, qc));
    m.g_autonomous = m.c_star * std::pow(2.0, qc - 1.0) * std::pow(tau_y, qc);
    return m;
}

GraphModel bingham_model(double tau_y, double mu) {
    GraphModel m = herschel_bulkley_model(tau_y, mu, 2.0);
    m.law = GraphLaw::bingham;
    return m;
}

GraphModel bingham_oscillating_model(double tau_y, double mu) {
    GraphModel m = bingham_model(tau_y, mu);
    m.time_dependent = true;
    return m;
}

// ---------------------------------------------------------------------------
// Approximations
// ---------------------------------------------------------------------------

int minimal_approx_index(const GraphModel& model) {
    const std::vector<double> set = model.discontinuities();
    if (set.size() < 2) return 1;
    double min_gap = std::numeric_limits<double>::infinity();
    for (std::size_t i = 1; i < set.size(); ++i) min_gap = std::min(min_gap, set[i] - set[i - 1]);
    return int(std::floor(2.0 / min_gap)) + 1;
}

GraphApprox make_approx(GraphModel model, ApproxMode mode, int k) {
    if (k < 1) throw std::invalid_argument("make_approx: k must be positive");
    GraphApprox approx;
    approx.base = std::move(model);
    approx.mode = mode;
    approx.k = k;
    approx.discontinuity_set = approx.base.discontinuities();
    approx.k_0 = minimal_approx_index(approx.base);
    if (mode == ApproxMode::affine_interp && k < approx.k_0)
        throw std::invalid_argument("make_approx: affine_interp requires k >= " +
                                    std::to_string(approx.k_0));
    return approx;
}

namespace {

/// Odd extension of the radial selection to the whole real line.
double radial_odd(const GraphModel& model, const SpaceTimePoint& z, double t) {
    return t >= 0.0 ? model.radial(z, t) : -model.radial(z, -t);
}

/// True when the odd-extended law is affine on [s - 1/k, s + 1/k]; in that case the
/// symmetric mollifier reproduces the law exactly and quadrature can be skipped.
bool affine_on_window(const GraphModel& model, double s, int k) {
    switch (model.law) {
        case GraphLaw::newtonian: return true;
        case GraphLaw::power_law: return model.q == 2.0;
        case GraphLaw::bingham: return std::abs(s) > 1.0 / double(k);
        case GraphLaw::herschel_bulkley:
            return model.q == 2.0 && std::abs(s) > 1.0 / double(k);
    }
    return false;
}

double mollified_radial(const GraphModel& model, const SpaceTimePoint& z, double s, int k,
                        double tol) {
    if (affine_on_window(model, s, k)) return radial_odd(model, z, s);
    const double kk = double(k);
    // S^k(s) = int rho(u) S_odd(s - u/k) du over (-1, 1); split the window at every
    // point where s - u/k crosses a jump or kink radius so each piece is smooth.
    std::vector<double> breaks = {-1.0, 1.0};
    std::vector<double> special = model.discontinuities();
    special.push_back(0.0);  // power laws have a derivative kink at the origin
    for (double a : special) {
        for (double target : {a, -a}) {
            const double u = kk * (s - target);
            if (u > -1.0 && u < 1.0) breaks.push_back(u);
        }
    }
    std::sort(breaks.begin(), breaks.end());
    breaks.erase(std::unique(breaks.begin(), breaks.end()), breaks.end());

    const auto integrand = [&](double u) { return bump(u) * radial_odd(model, z, s - u / kk); };
    double value = 0.0;
    for (std::size_t i = 1; i < breaks.size(); ++i)
        value += adaptive_simpson(integrand, breaks[i - 1], breaks[i], tol);
    return value;
}

double mollified_slope(const GraphModel& model, const SpaceTimePoint& z, double s, int k,
                       double tol) {
    if (affine_on_window(model, s, k)) return model.radial_slope(z, std::abs(s));
    const double kk = double(k);
    std::vector<double> breaks = {-1.0, 1.0};
    std::vector<double> special = model.discontinuities();
    special.push_back(0.0);
    for (double a : special) {
        for (double target : {a, -a}) {
            const double u = kk * (s - target);
            if (u > -1.0 && u < 1.0) breaks.push_back(u);
        }
    }
    std::sort(breaks.begin(), breaks.end());
    breaks.erase(std::unique(breaks.begin(), breaks.end()), breaks.end());

    // Distributional derivative: classical slope convolved with the kernel plus one
    // kernel evaluation per jump of the odd-extended law.
    const auto integrand = [&](double u) {
        return bump(u) * model.radial_slope(z, std::abs(s - u / kk));
    };
    double value = 0.0;
    for (std::size_t i = 1; i < breaks.size(); ++i)
        value += adaptive_simpson(integrand, breaks[i - 1], breaks[i], tol);

    const auto scaled_kernel = [kk](double t) {
        return std::abs(t) < 1.0 / kk ? kk * bump(kk * t) : 0.0;
    };
    for (double a : model.discontinuities()) {
        const double jump = (a == 0.0) ? model.jump_at_zero(z)
                                       : model.radial(z, a + 1e-14) - model.radial(z, a - 1e-14);
        value += jump * scaled_kernel(s - a);
        if (a > 0.0) value += jump * scaled_kernel(s + a);
    }
    return value;
}

/// Locate the interpolation interval [a - 1/k, a + 1/k) containing s, if any.
/// Returns true and fills (lo, hi) on a hit. The half-open convention realizes the
/// right-limit rule for slopes at interval endpoints.
bool affine_interval(const GraphApprox& approx, double s, double& lo, double& hi,
                     bool half_open) {
    const double width = 1.0 / double(approx.k);
    for (double a : approx.discontinuity_set) {
        lo = a - width;
        hi = a + width;
        const bool inside = half_open ? (s >= lo && s < hi) : (s >= lo && s <= hi);
        if (inside) return true;
    }
    return false;
}

double affine_radial(const GraphApprox& approx, const SpaceTimePoint& z, double s) {
    double lo, hi;
    if (affine_interval(approx, s, lo, hi, /*half_open=*/false)) {
        const double vlo = radial_odd(approx.base, z, lo);
        const double vhi = radial_odd(approx.base, z, hi);
        return vlo + (vhi - vlo) * (s - lo) / (hi - lo);
    }
    return radial_odd(approx.base, z, s);
}

double affine_slope(const GraphApprox& approx, const SpaceTimePoint& z, double s) {
    double lo, hi;
    if (affine_interval(approx, s, lo, hi, /*half_open=*/true)) {
        const double vlo = radial_odd(approx.base, z, lo);
        const double vhi = radial_odd(approx.base, z, hi);
        return (vhi - vlo) / (hi - lo);
    }
    return approx.base.radial_slope(z, std::abs(s));
}

constexpr double kMollifyTol = 1e-12;

}  // namespace

double GraphApprox::radial(const SpaceTimePoint& z, double r) const {
    if (r < 0.0) throw std::invalid_argument("GraphApprox::radial: negative radius");
    switch (mode) {
        case ApproxMode::exact: return base.radial(z, r);
        case ApproxMode::mollify: return mollified_radial(base, z, r, k, kMollifyTol);
        case ApproxMode::affine_interp: return affine_radial(*this, z, r);
    }
    return 0.0;
}

double GraphApprox::radial_slope(const SpaceTimePoint& z, double r) const {
    switch (mode) {
        case ApproxMode::exact: return base.radial_slope(z, std::max(r, 0.0));
        case ApproxMode::mollify: return mollified_slope(base, z, r, k, kMollifyTol);
        case ApproxMode::affine_interp: return affine_slope(*this, z, r);
    }
    return 0.0;
}

// ---------------------------------------------------------------------------
// Tensor evaluations
// ---------------------------------------------------------------------------

namespace {

double frobenius(const Eigen::Matrix2d& D) { return D.norm(); }

constexpr double kZeroRadius = 1e-14;

}  // namespace

Eigen::Matrix2d eval_selection(const GraphModel& model, const Eigen::Matrix2d& D,
                               const SpaceTimePoint& z) {
    const double r = frobenius(D);
    if (r < kZeroRadius) return Eigen::Matrix2d::Zero();
    return (model.radial(z, r) / r) * D;
}

Eigen::Matrix2d eval_approx(const GraphApprox& approx, const Eigen::Matrix2d& D,
                            const SpaceTimePoint& z) {
    const double r = frobenius(D);
    if (r < kZeroRadius) return Eigen::Matrix2d::Zero();
    return (approx.radial(z, r) / r) * D;
}

TangentOperator approx_derivative(const GraphApprox& approx, const Eigen::Matrix2d& D,
                                  const SpaceTimePoint& z) {
    const double r = frobenius(D);
    TangentOperator op;
    if (approx.mode == ApproxMode::exact && !approx.base.is_continuous()) {
        for (double a : approx.base.discontinuities())
            if (std::abs(r - a) < kZeroRadius)
                throw std::invalid_argument(
                    "approx_derivative: exact selection is discontinuous at this radius");
    }
    if (r < kZeroRadius) {
        // Isotropic-at-zero convention: T[E] = slope(0+) * E.
        op.coef_dir = approx.radial_slope(z, 0.0);
        op.coef_perp = op.coef_dir;
        op.dhat.setZero();
        return op;
    }
    op.coef_dir = approx.radial_slope(z, r);
    op.coef_perp = approx.radial(z, r) / r;
    op.dhat = D / r;
    return op;
}

// ---------------------------------------------------------------------------
// Assumption battery
// ---------------------------------------------------------------------------

namespace {

Eigen::Matrix2d random_symmetric_direction(std::mt19937& gen) {
    std::normal_distribution<double> gauss(0.0, 1.0);
    Eigen::Matrix2d D;
    const double d11 = gauss(gen), d22 = gauss(gen), d12 = gauss(gen);
    D << d11, d12, d12, d22;
    const double norm = D.norm();
    if (norm < 1e-12) {
        D << 1.0, 0.0, 0.0, 0.0;
        return D;
    }
    return D / norm;
}

double pairing(const Eigen::Matrix2d& A, const Eigen::Matrix2d& B) {
    return (A.array() * B.array()).sum();
}

}  // namespace

double approx_coercivity_constant(const GraphApprox& approx) {
    const GraphModel& model = approx.base;
    const bool affine =
        approx.mode == ApproxMode::affine_interp && !approx.discontinuity_set.empty();
    if (!affine) return model.c_star;
    return std::pow(2.0, -(conjugate(model.q) - 1.0)) * model.c_star;
}

double approx_coercivity_offset(const GraphApprox& approx, const SpaceTimePoint& z, double r) {
    const GraphModel& model = approx.base;
    const std::vector<double>& set = approx.discontinuity_set;
    if (approx.mode == ApproxMode::affine_interp && !set.empty()) {
        const double a_last = set.back();
        const double qc = conjugate(model.q);
        const double edge = std::abs(model.radial(z, a_last + 1.0));
        return 2.0 * edge * (a_last + 1.0) +
               model.c_star * std::pow(2.0, qc) * std::pow(edge, qc) + model.coercivity_g(z);
    }
    double g = model.coercivity_g(z);
    if (approx.mode == ApproxMode::mollify && !affine_on_window(model, r, approx.k))
        g += model.radial(z, r + 1.0 / double(approx.k)) / double(approx.k);
    return g;
}

BatteryReport check_assumption_battery(const GraphApprox& approx, int sample_count,
                                       unsigned rng_seed) {
    BatteryReport report;
    report.sample_count = std::max(sample_count, 1);

    const GraphModel& model = approx.base;
    const double q = model.q;
    const double qc = conjugate(q);
    const std::vector<double>& set = approx.discontinuity_set;
    const double a_last = set.empty() ? 0.0 : set.back();
    const double radius_cap = a_last + 2.0;

    // Mode-dependent coercivity constants. The exact mode keeps the model constants;
    // the affine interpolant weakens c_star and enlarges g by the window edge terms;
    // mollification keeps c_star but picks up a radius-dependent Jensen defect.
    report.c_star_tilde = approx_coercivity_constant(approx);
    const auto g_tilde = [&](const SpaceTimePoint& z, double r) {
        return approx_coercivity_offset(approx, z, r);
    };

    std::mt19937 gen(rng_seed);
    std::uniform_real_distribution<double> unif(0.0, 1.0);

    const auto sample_radius = [&]() {
        if (!set.empty() && unif(gen) < 0.4) {
            // Concentrate on the interpolation/mollification windows around jumps.
            const double a = set[std::min<std::size_t>(std::size_t(unif(gen) * set.size()),
                                                       set.size() - 1)];
            const double r = a + (2.0 * unif(gen) - 1.0) * 2.0 / double(approx.k);
            return std::max(r, 0.0);
        }
        return unif(gen) * radius_cap;
    };
    const auto sample_point = [&]() {
        SpaceTimePoint z;
        if (model.time_dependent) z.t = unif(gen);
        return z;
    };

    double min_pairing_norm = std::numeric_limits<double>::infinity();
    double min_coercivity = std::numeric_limits<double>::infinity();
    double min_graph = std::numeric_limits<double>::infinity();
    double max_radius = 0.0;
    report.g_tilde_max = 0.0;

    for (int i = 0; i < report.sample_count; ++i) {
        const SpaceTimePoint z = sample_point();
        const double r1 = sample_radius(), r2 = sample_radius();
        max_radius = std::max({max_radius, r1, r2});
        const Eigen::Matrix2d D1 = r1 * random_symmetric_direction(gen);
        const Eigen::Matrix2d D2 = r2 * random_symmetric_direction(gen);
        const Eigen::Matrix2d S1 = eval_approx(approx, D1, z);
        const Eigen::Matrix2d S2 = eval_approx(approx, D2, z);

        // (i) monotonicity, normalized
        const double denom = 1.0 + D1.norm() + D2.norm();
        const double mono = pairing(S1 - S2, D1 - D2) / (denom * denom);
        min_pairing_norm = std::min(min_pairing_norm, mono);
        if (mono < -1e-12) ++report.monotonicity_violations;

        // (ii) coercivity margin at D1
        const double gt = g_tilde(z, r1);
        report.g_tilde_max = std::max(report.g_tilde_max, gt);
        const double margin =
            pairing(D1, S1) + gt -
            report.c_star_tilde * (std::pow(D1.norm(), q) + std::pow(S1.norm(), qc));
        min_coercivity = std::min(min_coercivity, margin);

        // (iii) graph-limit pairing against the exact selection at D2
        const Eigen::Matrix2d Sstar2 = eval_selection(model, D2, z);
        const double graph = pairing(S1 - Sstar2, D1 - D2);
        min_graph = std::min(min_graph, graph);
    }

    report.max_monotonicity_violation = std::max(0.0, -min_pairing_norm);
    report.min_coercivity_margin = min_coercivity;
    report.min_graph_limit_margin = min_graph;

    // Theoretical floor of the graph-limit pairing. The probe radius may exceed
    // a_I + 1, so the bounding law value is taken at max(a_I, sampled radius) + 1.
    SpaceTimePoint zmax;  // yield stress is largest at t = 1/4 for the oscillating model
    if (model.time_dependent) zmax.t = 0.25;
    const double edge_radius = std::max(a_last, max_radius) + 1.0;
    switch (approx.mode) {
        case ApproxMode::exact: report.graph_limit_floor = 0.0; break;
        case ApproxMode::affine_interp:
            report.graph_limit_floor =
                set.empty() ? 0.0
                            : -4.0 * std::abs(model.radial(zmax, edge_radius)) / double(approx.k);
            break;
        case ApproxMode::mollify:
            report.graph_limit_floor =
                -2.0 * std::abs(model.radial(zmax, edge_radius)) / double(approx.k);
            break;
    }
    return report;
}

}  // namespace implicitflow
