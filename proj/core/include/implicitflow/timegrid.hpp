/// @file timegrid.hpp
/// @brief Uniform time grids, difference quotients, piecewise-constant and
///        piecewise-affine interpolants of coefficient histories, Gauss-Legendre
///        time averages of data, and interpolant norms.

#pragma once

#include <Eigen/Dense>

#include <functional>
#include <vector>

namespace implicitflow {

/// Uniform grid t_i = i * T / l, i = 0..l.
struct TimeGrid {
    double T = 1.0;              ///< final time, > 0
    int l = 1;                   ///< step count, >= 1
    double delta = 1.0;          ///< step size T / l
    std::vector<double> nodes;   ///< l + 1 strictly increasing nodes, t_0 = 0, t_l = T
};

/// Build a grid; throws std::invalid_argument for T <= 0 or l < 1.
TimeGrid make_time_grid(double T, int l);

/// A coefficient vector per grid node (length l + 1, equal dimensions).
struct StateHistory {
    TimeGrid grid;
    std::vector<Eigen::VectorXd> values;
};

/// Validated constructor; throws std::invalid_argument on length/dimension mismatch.
StateHistory make_history(TimeGrid grid, std::vector<Eigen::VectorXd> values);

/// Temporal difference quotient (phi_i - phi_{i-1}) / delta; requires 1 <= i <= l.
Eigen::VectorXd dt_quotient(const StateHistory& history, int i);

/// Piecewise-constant (left-continuous) interpolant: phi_i on (t_{i-1}, t_i].
/// Requires t in (0, T].
Eigen::VectorXd interp_const(const StateHistory& history, double t);

/// Piecewise-affine interpolant; requires t in [0, T].
Eigen::VectorXd interp_affine(const StateHistory& history, double t);

/// Gauss-Legendre nodes and weights on [-1, 1]; weights sum to 2. n >= 1.
void gauss_legendre(int n, std::vector<double>& nodes, std::vector<double>& weights);

/// Mean value of psi over (t_{i-1}, t_i) by Gauss-Legendre quadrature with
/// quad_points nodes (exact for polynomial degree <= 2*quad_points - 1). Works for
/// any value type supporting v * double and v + v (doubles, Eigen vectors).
template <typename F>
auto time_average(const F& psi, const TimeGrid& grid, int i, int quad_points)
    -> decltype(psi(0.0)) {
    if (i < 1 || i > grid.l) throw std::invalid_argument("time_average: step index out of range");
    if (quad_points < 1) throw std::invalid_argument("time_average: quad_points must be >= 1");
    std::vector<double> x, w;
    gauss_legendre(quad_points, x, w);
    const double a = grid.nodes[std::size_t(i) - 1], b = grid.nodes[std::size_t(i)];
    const double mid = 0.5 * (a + b), half = 0.5 * (b - a);
    // Mean value: weights on [-1,1] sum to 2, so the normalization is 1/2.
    // decltype pins the value type; auto would capture a lazy Eigen expression.
    decltype(psi(0.0)) acc = psi(mid + half * x[0]) * (0.5 * w[0]);
    for (int j = 1; j < quad_points; ++j) acc = acc + psi(mid + half * x[std::size_t(j)]) * (0.5 * w[std::size_t(j)]);
    return acc;
}

struct InterpolantNorms {
    double const_norm = 0.0;   ///< || phi_bar ||_{L^p(0,T;X)}
    double affine_norm = 0.0;  ///< || phi_tilde ||_{L^p(0,T;X)}
};

/// Bochner norms of the two interpolants. The constant interpolant uses the exact
/// formulas (delta * sum_{i>=1} ||phi_i||^p)^{1/p} and max_{i>=1} ||phi_i|| for
/// p = infinity; the affine interpolant is integrated by 8-point Gauss-Legendre
/// per interval (max over nodes for p = infinity, exact by convexity).
InterpolantNorms interpolant_norms(const StateHistory& history, double p,
                                   const std::function<double(const Eigen::VectorXd&)>& spatial_norm);

}  // namespace implicitflow
