/// @file timegrid.cpp
/// @brief Uniform time grids, interpolants, and Gauss-Legendre machinery.

#include "implicitflow/timegrid.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>
#include <stdexcept>

namespace implicitflow {

TimeGrid make_time_grid(double T, int l) {
    if (!(T > 0.0)) throw std::invalid_argument("make_time_grid: T must be positive");
    if (l < 1) throw std::invalid_argument("make_time_grid: l must be >= 1");
    TimeGrid grid;
    grid.T = T;
    grid.l = l;
    grid.delta = T / double(l);
    grid.nodes.resize(std::size_t(l) + 1);
    for (int i = 0; i <= l; ++i)
        grid.nodes[std::size_t(i)] = (i == l) ? T : double(i) * grid.delta;
    return grid;
}

StateHistory make_history(TimeGrid grid, std::vector<Eigen::VectorXd> values) {
    if (values.size() != std::size_t(grid.l) + 1)
        throw std::invalid_argument("make_history: need exactly l + 1 coefficient vectors");
    for (const auto& v : values)
        if (v.size() != values.front().size())
            throw std::invalid_argument("make_history: coefficient dimensions differ");
    StateHistory h;
    h.grid = std::move(grid);
    h.values = std::move(values);
    return h;
}

namespace {

/// Index i with t in (t_{i-1}, t_i]; requires t in (0, T].
std::size_t interval_of(const TimeGrid& grid, double t) {
    const auto it = std::lower_bound(grid.nodes.begin() + 1, grid.nodes.end(), t);
    return std::size_t(it - grid.nodes.begin());
}

}  // namespace

Eigen::VectorXd dt_quotient(const StateHistory& history, int i) {
    if (i < 1 || i > history.grid.l)
        throw std::invalid_argument("dt_quotient: step index must satisfy 1 <= i <= l");
    return (history.values[std::size_t(i)] - history.values[std::size_t(i) - 1]) /
           history.grid.delta;
}

Eigen::VectorXd interp_const(const StateHistory& history, double t) {
    if (!(t > 0.0) || t > history.grid.T)
        throw std::invalid_argument("interp_const: t must lie in (0, T]");
    return history.values[interval_of(history.grid, t)];
}

Eigen::VectorXd interp_affine(const StateHistory& history, double t) {
    if (t < 0.0 || t > history.grid.T)
        throw std::invalid_argument("interp_affine: t must lie in [0, T]");
    if (t == 0.0) return history.values.front();
    const std::size_t i = interval_of(history.grid, t);
    const double t0 = history.grid.nodes[i - 1], t1 = history.grid.nodes[i];
    const double theta = (t - t0) / (t1 - t0);
    return (1.0 - theta) * history.values[i - 1] + theta * history.values[i];
}

void gauss_legendre(int n, std::vector<double>& nodes, std::vector<double>& weights) {
    if (n < 1) throw std::invalid_argument("gauss_legendre: n must be >= 1");
    static std::map<int, std::pair<std::vector<double>, std::vector<double>>> cache;
    static std::mutex cache_mutex;
    {
        std::lock_guard<std::mutex> lock(cache_mutex);
        const auto it = cache.find(n);
        if (it != cache.end()) {
            nodes = it->second.first;
            weights = it->second.second;
            return;
        }
    }
    // Newton iteration on P_n from the Chebyshev initial guess; symmetric rule.
    constexpr double pi = 3.14159265358979323846;
    std::vector<double> x(std::size_t(n), 0.0);
    std::vector<double> w(std::size_t(n), 0.0);
    const int half = (n + 1) / 2;
    for (int k = 0; k < half; ++k) {
        double t = std::cos(pi * (double(k) + 0.75) / (double(n) + 0.5));
        double pp = 0.0;
        for (int iter = 0; iter < 100; ++iter) {
            // Evaluate P_n(t) and P_n'(t) by the three-term recurrence.
            double p0 = 1.0, p1 = t;
            for (int j = 2; j <= n; ++j) {
                const double p2 = ((2.0 * j - 1.0) * t * p1 - (j - 1.0) * p0) / double(j);
                p0 = p1;
                p1 = p2;
            }
            const double pn = (n == 1) ? t : p1;
            const double pn1 = (n == 1) ? 1.0 : p0;
            pp = double(n) * (t * pn - pn1) / (t * t - 1.0);
            const double dt = pn / pp;
            t -= dt;
            if (std::abs(dt) < 1e-15) break;
        }
        x[std::size_t(k)] = -t;
        x[std::size_t(n - 1 - k)] = t;
        const double wk = 2.0 / ((1.0 - t * t) * pp * pp);
        w[std::size_t(k)] = wk;
        w[std::size_t(n - 1 - k)] = wk;
    }
    if (n % 2 == 1) x[std::size_t(n / 2)] = 0.0;
    {
        std::lock_guard<std::mutex> lock(cache_mutex);
        cache.emplace(n, std::make_pair(x, w));
    }
    nodes = std::move(x);
    weights = std::move(w);
}

InterpolantNorms interpolant_norms(
    const StateHistory& history, double p,
    const std::function<double(const Eigen::VectorXd&)>& spatial_norm) {
    if (!(p >= 1.0)) throw std::invalid_argument("interpolant_norms: p must be >= 1");
    const TimeGrid& grid = history.grid;
    InterpolantNorms out;

    std::vector<double> node_norms(history.values.size());
    for (std::size_t i = 0; i < history.values.size(); ++i)
        node_norms[i] = spatial_norm(history.values[i]);

    if (std::isinf(p)) {
        for (std::size_t i = 1; i < node_norms.size(); ++i)
            out.const_norm = std::max(out.const_norm, node_norms[i]);
        // The affine interpolant attains its max norm at a node (convexity).
        out.affine_norm = *std::max_element(node_norms.begin(), node_norms.end());
        return out;
    }

    double const_acc = 0.0;
    for (std::size_t i = 1; i < node_norms.size(); ++i)
        const_acc += std::pow(node_norms[i], p);
    out.const_norm = std::pow(grid.delta * const_acc, 1.0 / p);

    std::vector<double> x, w;
    gauss_legendre(8, x, w);
    double affine_acc = 0.0;
    for (int i = 1; i <= grid.l; ++i) {
        const double a = grid.nodes[std::size_t(i) - 1], b = grid.nodes[std::size_t(i)];
        const double mid = 0.5 * (a + b), half = 0.5 * (b - a);
        for (std::size_t j = 0; j < x.size(); ++j) {
            const double t = mid + half * x[j];
            const double theta = (t - a) / (b - a);
            const Eigen::VectorXd v = (1.0 - theta) * history.values[std::size_t(i) - 1] +
                                      theta * history.values[std::size_t(i)];
            affine_acc += half * w[j] * std::pow(spatial_norm(v), p);
        }
    }
    out.affine_norm = std::pow(affine_acc, 1.0 / p);
    return out;
}

}  // namespace implicitflow
