/// @file scheme.cpp
/// @brief Saddle-extended residual and Jacobian assembly, the damped-Newton
///        step solver with energy-stable Picard fallback, the simulation
///        driver, and the built-in analytic fields.

#include "implicitflow/scheme.hpp"

#include <Eigen/SparseCholesky>
#include <Eigen/SparseLU>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <vector>

namespace implicitflow {
namespace {

constexpr double kTinyRadius = 1e-150;   // below this, powers of |.| are treated as 0
constexpr double kSecantCap = 1e8;       // cap on the Picard secant viscosity
constexpr double kDivTolerance = 1e-10;  // absolute acceptance for constraint rows

// ---------------------------------------------------------------------------
// Validation helpers
// ---------------------------------------------------------------------------

void require_space(const ProblemSetup& setup) {
    if (setup.space == nullptr) throw std::invalid_argument("scheme: setup has no space");
}

void require_step_index(const TimeGrid& grid, int i) {
    if (i < 1 || i > grid.l) throw std::invalid_argument("scheme: step index out of range");
}

void require_velocity(const MixedSpace& space, const DiscreteField& f, const char* what) {
    if (f.space != &space)
        throw std::invalid_argument(std::string(what) + ": field bound to a different space");
    if (f.kind != FieldKind::velocity)
        throw std::invalid_argument(std::string(what) + ": velocity field expected");
    if (f.coefficients.size() != Eigen::Index(space.velocity_dofs))
        throw std::invalid_argument(std::string(what) + ": coefficient size mismatch");
}

// ---------------------------------------------------------------------------
// Pointwise evaluation at a quadrature node
// ---------------------------------------------------------------------------

struct PointState {
    Eigen::Vector2d u = Eigen::Vector2d::Zero();
    Eigen::Matrix2d G = Eigen::Matrix2d::Zero();  ///< G(i,j) = d u_i / d x_j
};

PointState eval_state(const CellQuadData& qd, const std::vector<std::size_t>& nodes,
                      const Eigen::VectorXd& coeffs, Eigen::Index q) {
    PointState st;
    for (std::size_t a = 0; a < nodes.size(); ++a) {
        const Eigen::Index ax = Eigen::Index(2 * nodes[a]);
        const double cx = coeffs[ax];
        const double cy = coeffs[ax + 1];
        const double p = qd.phi(q, Eigen::Index(a));
        const double dx = qd.dphi_dx(q, Eigen::Index(a));
        const double dy = qd.dphi_dy(q, Eigen::Index(a));
        st.u[0] += cx * p;
        st.u[1] += cy * p;
        st.G(0, 0) += cx * dx;
        st.G(0, 1) += cx * dy;
        st.G(1, 0) += cy * dx;
        st.G(1, 1) += cy * dy;
    }
    return st;
}

/// Evaluate all cell contributions in parallel, then sum in cell order so the
/// result does not depend on the thread schedule.
double accumulate_cells(const MixedSpace& space,
                        const std::function<double(std::size_t)>& cell_value) {
    std::vector<double> partial(space.cells(), 0.0);
    parallel_for_cells(space.cells(), [&](std::size_t c) { partial[c] = cell_value(c); });
    double total = 0.0;
    for (double v : partial) total += v;
    return total;
}

/// Time-mean tangent of the approximated law over (t_{i-1}, t_i]. Autonomous
/// laws collapse to a single evaluation; the strain direction is shared by all
/// time nodes, so only the two radial coefficients are averaged.
TangentOperator averaged_tangent(const ProblemSetup& setup, int i, double x, double y,
                                 const Eigen::Matrix2d& D) {
    if (!setup.approx.base.time_dependent)
        return approx_derivative(setup.approx, D, SpaceTimePoint{0.0, x, y});
    std::vector<double> xg, wg;
    gauss_legendre(setup.quad_points, xg, wg);
    const double a = setup.grid.nodes[std::size_t(i) - 1];
    const double b = setup.grid.nodes[std::size_t(i)];
    const double mid = 0.5 * (a + b), half = 0.5 * (b - a);
    TangentOperator acc =
        approx_derivative(setup.approx, D, SpaceTimePoint{mid + half * xg[0], x, y});
    acc.coef_dir *= 0.5 * wg[0];
    acc.coef_perp *= 0.5 * wg[0];
    for (int j = 1; j < setup.quad_points; ++j) {
        const TangentOperator t = approx_derivative(
            setup.approx, D, SpaceTimePoint{mid + half * xg[std::size_t(j)], x, y});
        acc.coef_dir += 0.5 * wg[std::size_t(j)] * t.coef_dir;
        acc.coef_perp += 0.5 * wg[std::size_t(j)] * t.coef_perp;
    }
    return acc;
}

// ---------------------------------------------------------------------------
// Step assembler: caches quadrature data and the linear blocks of one step
// ---------------------------------------------------------------------------

class StepAssembler {
public:
    StepAssembler(const ProblemSetup& setup, const DiscreteField& U_prev, int i)
        : setup_(setup), space_(*setup.space), i_(i) {
        require_step_index(setup.grid, i);
        require_velocity(space_, U_prev, "scheme: U_prev");
        if (setup.quad_points < 1)
            throw std::invalid_argument("scheme: quad_points must be >= 1");
        if (!(setup.m >= 1.0)) throw std::invalid_argument("scheme: m must be >= 1");
        uprev_ = U_prev.coefficients;
        nf_ = space_.free_dofs.size();
        np_ = space_.pressure_dofs;
        ntot_ = nf_ + np_ + 1;
        quad_.resize(space_.cells());
        parallel_for_cells(space_.cells(),
                           [&](std::size_t c) { quad_[c] = cell_quad_data(space_, c); });
        mass_ = assemble_velocity_mass(space_);
        div_ = assemble_div_matrix(space_).matrix;
        mean_ = pressure_mean_vector(space_);
        mass_uprev_ = mass_ * uprev_;
        load_ = assemble_step_load(setup, i);
        inv_m_ = 1.0 / setup.m;  // 0 when m = +infinity
        pen_exp_ = setup.exponents.two_qconj - 2.0;
    }

    std::size_t free_size() const { return nf_; }
    std::size_t pressure_size() const { return np_; }
    std::size_t total_size() const { return ntot_; }
    const Eigen::VectorXd& load() const { return load_; }
    const Eigen::SparseMatrix<double>& mass() const { return mass_; }

    Eigen::VectorXd extend(const Eigen::VectorXd& free_part) const {
        return extend_to_full(space_, free_part);
    }

    /// Kinetic (mass) norm of the velocity carried by an iterate.
    double kinetic_norm(const Eigen::VectorXd& alpha) const {
        const Eigen::VectorXd ufull = extend(alpha.head(Eigen::Index(nf_)));
        return std::sqrt(std::max(0.0, ufull.dot(mass_ * ufull)));
    }

    Eigen::VectorXd residual(const Eigen::VectorXd& alpha) const {
        if (alpha.size() != Eigen::Index(ntot_))
            throw std::invalid_argument("scheme: iterate size mismatch");
        const Eigen::VectorXd ufull = extend(alpha.head(Eigen::Index(nf_)));
        const double inv_delta = 1.0 / setup_.grid.delta;

        std::vector<Eigen::VectorXd> local(space_.cells());
        parallel_for_cells(space_.cells(), [&](std::size_t c) {
            const CellQuadData& qd = quad_[c];
            const std::vector<std::size_t>& nodes = space_.cell_velocity_nodes[c];
            const Eigen::Index nb = Eigen::Index(nodes.size());
            Eigen::VectorXd loc = Eigen::VectorXd::Zero(2 * nb);
            for (Eigen::Index q = 0; q < qd.weights.size(); ++q) {
                const double w = qd.weights[q];
                const double x = qd.points(q, 0), y = qd.points(q, 1);
                const PointState st = eval_state(qd, nodes, ufull, q);
                const Eigen::Matrix2d D = 0.5 * (st.G + st.G.transpose());
                const Eigen::Matrix2d S = averaged_stress(setup_, i_, x, y, D);
                const double r = st.u.norm();
                const double pen =
                    (inv_m_ > 0.0 && r > kTinyRadius) ? inv_m_ * std::pow(r, pen_exp_) : 0.0;
                for (Eigen::Index a = 0; a < nb; ++a) {
                    const double pa = qd.phi(q, a);
                    const double gax = qd.dphi_dx(q, a);
                    const double gay = qd.dphi_dy(q, a);
                    const double graddotu = gax * st.u[0] + gay * st.u[1];
                    for (int comp = 0; comp < 2; ++comp) {
                        const double conv =
                            0.5 * (pa * st.G.row(comp).dot(st.u) - st.u[comp] * graddotu);
                        const double visc = S(comp, 0) * gax + S(comp, 1) * gay;
                        loc[2 * a + comp] += w * (conv + visc + pen * st.u[comp] * pa);
                    }
                }
            }
            local[c] = std::move(loc);
        });

        Eigen::VectorXd F = Eigen::VectorXd::Zero(Eigen::Index(ntot_));
        for (std::size_t c = 0; c < space_.cells(); ++c) {
            const std::vector<std::size_t>& nodes = space_.cell_velocity_nodes[c];
            for (std::size_t a = 0; a < nodes.size(); ++a)
                for (int comp = 0; comp < 2; ++comp) {
                    const std::ptrdiff_t fr = space_.full_to_free[2 * nodes[a] + std::size_t(comp)];
                    if (fr >= 0) F[fr] += local[c][Eigen::Index(2 * a) + comp];
                }
        }

        // Time derivative, forcing, and pressure coupling on the free block.
        const Eigen::VectorXd mu = mass_ * ufull;
        const Eigen::VectorXd btp =
            div_.transpose() * alpha.segment(Eigen::Index(nf_), Eigen::Index(np_));
        for (std::size_t r = 0; r < nf_; ++r) {
            const std::size_t full = space_.free_dofs[r];
            F[Eigen::Index(r)] += inv_delta * (mu[Eigen::Index(full)] - mass_uprev_[Eigen::Index(full)]);
            F[Eigen::Index(r)] -= load_[Eigen::Index(r)];
            F[Eigen::Index(r)] -= btp[Eigen::Index(full)];
        }

        // Divergence rows and the zero-mean row.
        F.segment(Eigen::Index(nf_), Eigen::Index(np_)) =
            div_ * ufull + mean_ * alpha[Eigen::Index(nf_ + np_)];
        F[Eigen::Index(nf_ + np_)] =
            mean_.dot(alpha.segment(Eigen::Index(nf_), Eigen::Index(np_)));
        return F;
    }

    Eigen::SparseMatrix<double> jacobian(const Eigen::VectorXd& alpha) const {
        if (alpha.size() != Eigen::Index(ntot_))
            throw std::invalid_argument("scheme: iterate size mismatch");
        const Eigen::VectorXd ufull = extend(alpha.head(Eigen::Index(nf_)));
        return assemble_system([&](std::size_t c, Eigen::MatrixXd& loc) {
            const CellQuadData& qd = quad_[c];
            const std::vector<std::size_t>& nodes = space_.cell_velocity_nodes[c];
            const Eigen::Index nb = Eigen::Index(nodes.size());
            for (Eigen::Index q = 0; q < qd.weights.size(); ++q) {
                const double w = qd.weights[q];
                const double x = qd.points(q, 0), y = qd.points(q, 1);
                const PointState st = eval_state(qd, nodes, ufull, q);
                const Eigen::Matrix2d D = 0.5 * (st.G + st.G.transpose());
                const TangentOperator T = averaged_tangent(setup_, i_, x, y, D);
                const double r = st.u.norm();
                double pen1 = 0.0;
                Eigen::Vector2d udir = Eigen::Vector2d::Zero();
                if (inv_m_ > 0.0 && r > kTinyRadius) {
                    pen1 = inv_m_ * std::pow(r, pen_exp_);
                    udir = st.u / r;
                }
                for (Eigen::Index a = 0; a < nb; ++a) {
                    const double pa = qd.phi(q, a);
                    const Eigen::Vector2d ga(qd.dphi_dx(q, a), qd.dphi_dy(q, a));
                    const double gadotu = ga.dot(st.u);
                    for (Eigen::Index b = 0; b < nb; ++b) {
                        const double pb = qd.phi(q, b);
                        const Eigen::Vector2d gb(qd.dphi_dx(q, b), qd.dphi_dy(q, b));
                        const double gbdotu = gb.dot(st.u);
                        const double gagb = ga.dot(gb);
                        for (int comp = 0; comp < 2; ++comp) {
                            // d-hat : sym(e_comp, ga) for the directional part.
                            const double proj_a = T.dhat.row(comp).dot(ga);
                            for (int e = 0; e < 2; ++e) {
                                const double delta_ce = (comp == e) ? 1.0 : 0.0;
                                const double conv =
                                    0.5 * (delta_ce * pa * gbdotu + pa * pb * st.G(comp, e) -
                                           delta_ce * pb * gadotu - st.u[comp] * pb * ga[e]);
                                const double strain_pair =
                                    0.5 * (delta_ce * gagb + ga[e] * gb[comp]);
                                const double proj_b = T.dhat.row(e).dot(gb);
                                const double visc = T.coef_perp * strain_pair +
                                                    (T.coef_dir - T.coef_perp) * proj_a * proj_b;
                                const double pen =
                                    pen1 * pa * pb *
                                    (delta_ce + pen_exp_ * udir[comp] * udir[e]);
                                loc(2 * a + comp, 2 * b + e) += w * (conv + visc + pen);
                            }
                        }
                    }
                }
            }
        });
    }

    /// One Picard sweep: solve the energy-stable linearization (lagged skew
    /// convection, secant viscosity, secant penalty) about the given iterate.
    bool picard(const Eigen::VectorXd& alpha, Eigen::VectorXd& out) const {
        const Eigen::VectorXd ufull = extend(alpha.head(Eigen::Index(nf_)));
        const Eigen::SparseMatrix<double> A = assemble_system([&](std::size_t c,
                                                                  Eigen::MatrixXd& loc) {
            const CellQuadData& qd = quad_[c];
            const std::vector<std::size_t>& nodes = space_.cell_velocity_nodes[c];
            const Eigen::Index nb = Eigen::Index(nodes.size());
            for (Eigen::Index q = 0; q < qd.weights.size(); ++q) {
                const double w = qd.weights[q];
                const double x = qd.points(q, 0), y = qd.points(q, 1);
                const PointState st = eval_state(qd, nodes, ufull, q);
                const Eigen::Matrix2d D = 0.5 * (st.G + st.G.transpose());
                const double nu = secant_viscosity(x, y, D);
                const double rvel = st.u.norm();
                const double penc = (inv_m_ > 0.0 && rvel > kTinyRadius)
                                        ? inv_m_ * std::pow(rvel, pen_exp_)
                                        : 0.0;
                for (Eigen::Index a = 0; a < nb; ++a) {
                    const double pa = qd.phi(q, a);
                    const Eigen::Vector2d ga(qd.dphi_dx(q, a), qd.dphi_dy(q, a));
                    const double gadotu = ga.dot(st.u);
                    for (Eigen::Index b = 0; b < nb; ++b) {
                        const double pb = qd.phi(q, b);
                        const Eigen::Vector2d gb(qd.dphi_dx(q, b), qd.dphi_dy(q, b));
                        const double gbdotu = gb.dot(st.u);
                        const double gagb = ga.dot(gb);
                        const double skew = 0.5 * (pa * gbdotu - pb * gadotu);
                        for (int comp = 0; comp < 2; ++comp)
                            for (int e = 0; e < 2; ++e) {
                                const double delta_ce = (comp == e) ? 1.0 : 0.0;
                                const double strain_pair =
                                    0.5 * (delta_ce * gagb + ga[e] * gb[comp]);
                                loc(2 * a + comp, 2 * b + e) +=
                                    w * (delta_ce * (skew + penc * pa * pb) +
                                         nu * strain_pair);
                            }
                    }
                }
            }
        });
        Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
        lu.compute(A);
        if (lu.info() != Eigen::Success) return false;
        Eigen::VectorXd rhs = Eigen::VectorXd::Zero(Eigen::Index(ntot_));
        const double inv_delta = 1.0 / setup_.grid.delta;
        for (std::size_t r = 0; r < nf_; ++r)
            rhs[Eigen::Index(r)] =
                inv_delta * mass_uprev_[Eigen::Index(space_.free_dofs[r])] +
                load_[Eigen::Index(r)];
        out = lu.solve(rhs);
        return lu.info() == Eigen::Success && out.allFinite();
    }

private:
    /// Secant viscosity of the averaged stress at strain D: chord slope through
    /// the origin, the tangent slope at D = 0, capped into [0, kSecantCap].
    double secant_viscosity(double x, double y, const Eigen::Matrix2d& D) const {
        const double r = D.norm();
        double nu;
        if (r > 1e-10) {
            const Eigen::Matrix2d S = averaged_stress(setup_, i_, x, y, D);
            nu = (S.array() * D.array()).sum() / (r * r);
        } else if (setup_.approx.mode == ApproxMode::exact &&
                   !setup_.approx.base.is_continuous()) {
            nu = kSecantCap;  // jump at the origin: the chord slope diverges
        } else {
            const TangentOperator T =
                averaged_tangent(setup_, i_, x, y, Eigen::Matrix2d::Zero());
            nu = T.coef_dir;
        }
        if (!std::isfinite(nu)) return kSecantCap;
        return std::min(std::max(nu, 0.0), kSecantCap);
    }

    /// Shared system skeleton: (1/delta) M on the free block, the material and
    /// convection cell blocks supplied by `cell_local`, and the +-B / mean
    /// couplings. Triplets are emitted in a fixed order for determinism.
    Eigen::SparseMatrix<double> assemble_system(
        const std::function<void(std::size_t, Eigen::MatrixXd&)>& cell_local) const {
        const double inv_delta = 1.0 / setup_.grid.delta;
        std::vector<Eigen::MatrixXd> local(space_.cells());
        parallel_for_cells(space_.cells(), [&](std::size_t c) {
            const Eigen::Index nb = Eigen::Index(space_.cell_velocity_nodes[c].size());
            local[c] = Eigen::MatrixXd::Zero(2 * nb, 2 * nb);
            cell_local(c, local[c]);
        });

        std::vector<Eigen::Triplet<double>> trips;
        trips.reserve(std::size_t(mass_.nonZeros()) + space_.cells() * 64 +
                      2 * std::size_t(div_.nonZeros()) + 2 * np_);
        for (int k = 0; k < mass_.outerSize(); ++k)
            for (Eigen::SparseMatrix<double>::InnerIterator it(mass_, k); it; ++it) {
                const std::ptrdiff_t fr = space_.full_to_free[std::size_t(it.row())];
                const std::ptrdiff_t fc = space_.full_to_free[std::size_t(it.col())];
                if (fr >= 0 && fc >= 0)
                    trips.emplace_back(int(fr), int(fc), inv_delta * it.value());
            }
        for (std::size_t c = 0; c < space_.cells(); ++c) {
            const std::vector<std::size_t>& nodes = space_.cell_velocity_nodes[c];
            for (std::size_t a = 0; a < nodes.size(); ++a)
                for (int comp = 0; comp < 2; ++comp) {
                    const std::ptrdiff_t fr =
                        space_.full_to_free[2 * nodes[a] + std::size_t(comp)];
                    if (fr < 0) continue;
                    for (std::size_t b = 0; b < nodes.size(); ++b)
                        for (int e = 0; e < 2; ++e) {
                            const std::ptrdiff_t fc =
                                space_.full_to_free[2 * nodes[b] + std::size_t(e)];
                            if (fc < 0) continue;
                            const double v = local[c](Eigen::Index(2 * a) + comp,
                                                      Eigen::Index(2 * b) + e);
                            if (v != 0.0) trips.emplace_back(int(fr), int(fc), v);
                        }
                }
        }
        for (int k = 0; k < div_.outerSize(); ++k)
            for (Eigen::SparseMatrix<double>::InnerIterator it(div_, k); it; ++it) {
                const std::ptrdiff_t fc = space_.full_to_free[std::size_t(it.col())];
                if (fc < 0) continue;
                trips.emplace_back(int(nf_) + int(it.row()), int(fc), it.value());
                trips.emplace_back(int(fc), int(nf_) + int(it.row()), -it.value());
            }
        for (std::size_t s = 0; s < np_; ++s) {
            trips.emplace_back(int(nf_ + s), int(nf_ + np_), mean_[Eigen::Index(s)]);
            trips.emplace_back(int(nf_ + np_), int(nf_ + s), mean_[Eigen::Index(s)]);
        }
        const Eigen::Index n = Eigen::Index(ntot_);
        Eigen::SparseMatrix<double> J(n, n);
        J.setFromTriplets(trips.begin(), trips.end());
        J.makeCompressed();
        return J;
    }

    const ProblemSetup& setup_;
    const MixedSpace& space_;
    int i_;
    Eigen::VectorXd uprev_;
    std::size_t nf_ = 0, np_ = 0, ntot_ = 0;
    std::vector<CellQuadData> quad_;
    Eigen::SparseMatrix<double> mass_;
    Eigen::SparseMatrix<double> div_;
    Eigen::VectorXd mean_;
    Eigen::VectorXd mass_uprev_;
    Eigen::VectorXd load_;
    double inv_m_ = 0.0;
    double pen_exp_ = 0.0;
};

/// Radius of the a-priori kinetic ball containing the step solution: from the
/// discrete energy identity, ||U||_M <= delta b + sqrt(delta^2 b^2 + a^2 + 2
/// delta G) with a = ||U_prev||_M, b the dual norm of the load, and G the
/// integrated coercivity offset of the approximated law. The existence argument
/// places a solution inside this ball, so iterates are confined to a multiple
/// of it.
double trust_radius(const ProblemSetup& setup, const StepAssembler& assembler,
                    const DiscreteField& U_prev, const SolverConfig& config) {
    const MixedSpace& space = *setup.space;
    const double a =
        std::sqrt(std::max(0.0, U_prev.coefficients.dot(assembler.mass() * U_prev.coefficients)));
    double b = 0.0;
    if (assembler.load().norm() > 0.0) {
        // Free-restricted mass for the dual norm ||L||_{M^-1}.
        std::vector<Eigen::Triplet<double>> trips;
        const Eigen::SparseMatrix<double>& M = assembler.mass();
        for (int k = 0; k < M.outerSize(); ++k)
            for (Eigen::SparseMatrix<double>::InnerIterator it(M, k); it; ++it) {
                const std::ptrdiff_t fr = space.full_to_free[std::size_t(it.row())];
                const std::ptrdiff_t fc = space.full_to_free[std::size_t(it.col())];
                if (fr >= 0 && fc >= 0) trips.emplace_back(int(fr), int(fc), it.value());
            }
        Eigen::SparseMatrix<double> Mff(Eigen::Index(assembler.free_size()),
                                        Eigen::Index(assembler.free_size()));
        Mff.setFromTriplets(trips.begin(), trips.end());
        Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt(Mff);
        if (ldlt.info() == Eigen::Success) {
            const Eigen::VectorXd y = ldlt.solve(assembler.load());
            b = std::sqrt(std::max(0.0, assembler.load().dot(y)));
        }
    }
    double area = 0.0;
    for (std::size_t c = 0; c < space.cells(); ++c) area += space.mesh->cell_area(c);
    SpaceTimePoint zmax;
    if (setup.approx.base.time_dependent) zmax.t = 0.25;  // peak of the yield modulation
    const double a_last = setup.approx.discontinuity_set.empty()
                              ? 0.0
                              : setup.approx.discontinuity_set.back();
    const double offset = approx_coercivity_offset(setup.approx, zmax, a_last + 2.0) + 1.0;
    const double G = area * offset;
    const double delta = setup.grid.delta;
    const double R =
        config.trust_factor * (delta * b + std::sqrt(delta * delta * b * b + a * a + 2.0 * delta * G));
    return R + 1e-8;
}

void validate_config(const SolverConfig& config) {
    if (!(config.newton_tol > 0.0))
        throw std::invalid_argument("scheme: newton_tol must be positive");
    if (config.max_newton < 1) throw std::invalid_argument("scheme: max_newton must be >= 1");
    if (!(config.min_damping > 0.0) || config.min_damping > 1.0)
        throw std::invalid_argument("scheme: min_damping must lie in (0, 1]");
    if (config.max_picard < 0) throw std::invalid_argument("scheme: max_picard must be >= 0");
    if (!(config.trust_factor > 0.0))
        throw std::invalid_argument("scheme: trust_factor must be positive");
}

}  // namespace

// ---------------------------------------------------------------------------
// Setup
// ---------------------------------------------------------------------------

ProblemSetup make_setup(const MixedSpace& space, GraphApprox approx, TimeGrid grid, double m,
                        TimeVectorEvaluator forcing, VectorEvaluator initial, int quad_points) {
    if (!(m >= 1.0)) throw std::invalid_argument("make_setup: m must be >= 1");
    if (quad_points < 1) throw std::invalid_argument("make_setup: quad_points must be >= 1");
    ProblemSetup setup;
    setup.space = &space;
    setup.approx = std::move(approx);
    setup.grid = std::move(grid);
    setup.m = m;
    setup.exponents = exponents(setup.approx.base.q, 2);
    setup.forcing = std::move(forcing);
    setup.initial = std::move(initial);
    setup.quad_points = quad_points;
    setup.admissibility_warning = !setup.exponents.admissible;
    return setup;
}

// ---------------------------------------------------------------------------
// Vector layout helpers
// ---------------------------------------------------------------------------

std::size_t step_system_size(const MixedSpace& space) {
    return space.free_dofs.size() + space.pressure_dofs + 1;
}

Eigen::VectorXd restrict_to_free(const MixedSpace& space, const Eigen::VectorXd& full) {
    if (full.size() != Eigen::Index(space.velocity_dofs))
        throw std::invalid_argument("restrict_to_free: coefficient size mismatch");
    Eigen::VectorXd out(Eigen::Index(space.free_dofs.size()));
    for (std::size_t r = 0; r < space.free_dofs.size(); ++r)
        out[Eigen::Index(r)] = full[Eigen::Index(space.free_dofs[r])];
    return out;
}

Eigen::VectorXd extend_to_full(const MixedSpace& space, const Eigen::VectorXd& free_part) {
    if (free_part.size() != Eigen::Index(space.free_dofs.size()))
        throw std::invalid_argument("extend_to_full: free vector size mismatch");
    Eigen::VectorXd out = Eigen::VectorXd::Zero(Eigen::Index(space.velocity_dofs));
    for (std::size_t r = 0; r < space.free_dofs.size(); ++r)
        out[Eigen::Index(space.free_dofs[r])] = free_part[Eigen::Index(r)];
    return out;
}

DiscreteField velocity_from_alpha(const MixedSpace& space, const Eigen::VectorXd& alpha) {
    if (alpha.size() < Eigen::Index(space.free_dofs.size()))
        throw std::invalid_argument("velocity_from_alpha: iterate too short");
    DiscreteField f = zero_field(space, FieldKind::velocity);
    f.coefficients = extend_to_full(space, alpha.head(Eigen::Index(space.free_dofs.size())));
    return f;
}

// ---------------------------------------------------------------------------
// Convection forms
// ---------------------------------------------------------------------------

double form_b(const MixedSpace& space, const DiscreteField& u, const DiscreteField& v,
              const DiscreteField& w) {
    require_velocity(space, u, "form_b: u");
    require_velocity(space, v, "form_b: v");
    require_velocity(space, w, "form_b: w");
    return accumulate_cells(space, [&](std::size_t c) {
        const CellQuadData qd = cell_quad_data(space, c);
        const std::vector<std::size_t>& nodes = space.cell_velocity_nodes[c];
        double acc = 0.0;
        for (Eigen::Index q = 0; q < qd.weights.size(); ++q) {
            const PointState su = eval_state(qd, nodes, u.coefficients, q);
            const PointState sv = eval_state(qd, nodes, v.coefficients, q);
            const PointState sw = eval_state(qd, nodes, w.coefficients, q);
            acc -= qd.weights[q] * sv.u.dot(sw.G * su.u);
        }
        return acc;
    });
}

double form_b_tilde(const MixedSpace& space, const DiscreteField& u, const DiscreteField& v,
                    const DiscreteField& w) {
    require_velocity(space, u, "form_b_tilde: u");
    require_velocity(space, v, "form_b_tilde: v");
    require_velocity(space, w, "form_b_tilde: w");
    return accumulate_cells(space, [&](std::size_t c) {
        const CellQuadData qd = cell_quad_data(space, c);
        const std::vector<std::size_t>& nodes = space.cell_velocity_nodes[c];
        double acc = 0.0;
        for (Eigen::Index q = 0; q < qd.weights.size(); ++q) {
            const PointState su = eval_state(qd, nodes, u.coefficients, q);
            const PointState sv = eval_state(qd, nodes, v.coefficients, q);
            const PointState sw = eval_state(qd, nodes, w.coefficients, q);
            acc += 0.5 * qd.weights[q] *
                   (sw.u.dot(sv.G * su.u) - sv.u.dot(sw.G * su.u));
        }
        return acc;
    });
}

// ---------------------------------------------------------------------------
// Step operators
// ---------------------------------------------------------------------------

Eigen::Matrix2d averaged_stress(const ProblemSetup& setup, int i, double x, double y,
                                const Eigen::Matrix2d& D) {
    require_space(setup);
    require_step_index(setup.grid, i);
    if (!setup.approx.base.time_dependent)
        return eval_approx(setup.approx, D, SpaceTimePoint{0.0, x, y});
    return time_average(
        [&](double t) { return eval_approx(setup.approx, D, SpaceTimePoint{t, x, y}); },
        setup.grid, i, setup.quad_points);
}

Eigen::VectorXd assemble_step_load(const ProblemSetup& setup, int i) {
    require_space(setup);
    require_step_index(setup.grid, i);
    const MixedSpace& space = *setup.space;
    Eigen::VectorXd load = Eigen::VectorXd::Zero(Eigen::Index(space.free_dofs.size()));
    if (!setup.forcing) return load;

    std::vector<Eigen::VectorXd> local(space.cells());
    parallel_for_cells(space.cells(), [&](std::size_t c) {
        const CellQuadData qd = cell_quad_data(space, c);
        const std::vector<std::size_t>& nodes = space.cell_velocity_nodes[c];
        const Eigen::Index nb = Eigen::Index(nodes.size());
        Eigen::VectorXd loc = Eigen::VectorXd::Zero(2 * nb);
        for (Eigen::Index q = 0; q < qd.weights.size(); ++q) {
            const double x = qd.points(q, 0), y = qd.points(q, 1);
            const Eigen::Vector2d favg = time_average(
                [&](double t) { return Eigen::Vector2d(setup.forcing(t, x, y)); }, setup.grid,
                i, setup.quad_points);
            for (Eigen::Index a = 0; a < nb; ++a)
                for (int comp = 0; comp < 2; ++comp)
                    loc[2 * a + comp] += qd.weights[q] * qd.phi(q, a) * favg[comp];
        }
        local[c] = std::move(loc);
    });
    for (std::size_t c = 0; c < space.cells(); ++c) {
        const std::vector<std::size_t>& nodes = space.cell_velocity_nodes[c];
        for (std::size_t a = 0; a < nodes.size(); ++a)
            for (int comp = 0; comp < 2; ++comp) {
                const std::ptrdiff_t fr = space.full_to_free[2 * nodes[a] + std::size_t(comp)];
                if (fr >= 0) load[fr] += local[c][Eigen::Index(2 * a) + comp];
            }
    }
    return load;
}

StepResidual assemble_residual(const ProblemSetup& setup, const DiscreteField& U_prev,
                               const Eigen::VectorXd& alpha, int i) {
    require_space(setup);
    StepAssembler assembler(setup, U_prev, i);
    StepResidual out;
    out.alpha = alpha;
    out.value = assembler.residual(alpha);
    return out;
}

Eigen::SparseMatrix<double> assemble_step_jacobian(const ProblemSetup& setup,
                                                   const DiscreteField& U_prev,
                                                   const Eigen::VectorXd& alpha, int i) {
    require_space(setup);
    StepAssembler assembler(setup, U_prev, i);
    return assembler.jacobian(alpha);
}

// ---------------------------------------------------------------------------
// Step solver
// ---------------------------------------------------------------------------

StepSolution solve_step(const ProblemSetup& setup, const DiscreteField& U_prev, int i,
                        const SolverConfig& config) {
    require_space(setup);
    validate_config(config);
    const auto t0 = std::chrono::steady_clock::now();

    StepAssembler assembler(setup, U_prev, i);
    const std::size_t nf = assembler.free_size();
    const std::size_t np = assembler.pressure_size();
    const Eigen::Index ntot = Eigen::Index(assembler.total_size());

    StepSolution sol;
    sol.stats.step = i;

    Eigen::VectorXd alpha = Eigen::VectorXd::Zero(ntot);
    alpha.head(Eigen::Index(nf)) = restrict_to_free(*setup.space, U_prev.coefficients);

    const double f0 = assembler.residual(Eigen::VectorXd::Zero(ntot)).norm();
    const double target = config.newton_tol * (1.0 + f0);
    const double radius = trust_radius(setup, assembler, U_prev, config);

    Eigen::VectorXd F = assembler.residual(alpha);
    sol.stats.residual_history.push_back(F.norm());
    sol.stats.reference_norm = f0;

    const auto constraint_residual = [&](const Eigen::VectorXd& Fv) {
        return Fv.tail(Eigen::Index(np) + 1).lpNorm<Eigen::Infinity>();
    };
    const auto converged = [&](const Eigen::VectorXd& Fv) {
        return Fv.norm() <= target && constraint_residual(Fv) <= kDivTolerance;
    };

    enum class Mode { newton, picard };
    Mode mode = Mode::newton;
    bool ok = converged(F);
    int picard_stall = 0;
    std::string fail;

    while (!ok) {
        if (mode == Mode::newton) {
            if (sol.stats.newton_iterations >= config.max_newton) {
                if (config.picard_fallback && sol.stats.picard_iterations < config.max_picard) {
                    mode = Mode::picard;
                    sol.stats.used_fallback = true;
                    continue;
                }
                fail = "Newton budget exhausted";
                break;
            }
            Eigen::SparseMatrix<double> J = assembler.jacobian(alpha);
            Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
            lu.compute(J);
            Eigen::VectorXd dir;
            bool have_dir = false;
            if (lu.info() == Eigen::Success) {
                dir = lu.solve(-F);
                have_dir = lu.info() == Eigen::Success && dir.allFinite();
            }
            bool accepted = false;
            if (have_dir) {
                double s = 1.0;
                while (s >= config.min_damping) {
                    const Eigen::VectorXd cand = alpha + s * dir;
                    const Eigen::VectorXd Fc = assembler.residual(cand);
                    if (Fc.norm() <= (1.0 - 1e-4 * s) * F.norm() &&
                        assembler.kinetic_norm(cand) <= radius) {
                        alpha = cand;
                        F = Fc;
                        accepted = true;
                        break;
                    }
                    s *= 0.5;
                }
            }
            ++sol.stats.newton_iterations;
            if (accepted) {
                sol.stats.residual_history.push_back(F.norm());
                ok = converged(F);
                continue;
            }
            if (config.picard_fallback && sol.stats.picard_iterations < config.max_picard) {
                mode = Mode::picard;
                sol.stats.used_fallback = true;
                continue;
            }
            fail = have_dir ? "Newton stagnation at the damping floor" : "singular Jacobian";
            break;
        }

        // Picard sweep
        if (sol.stats.picard_iterations >= config.max_picard) {
            fail = "Picard budget exhausted";
            break;
        }
        Eigen::VectorXd next;
        if (!assembler.picard(alpha, next)) {
            fail = "singular Picard matrix";
            break;
        }
        ++sol.stats.picard_iterations;
        bool accepted = false;
        const Eigen::VectorXd Fn = assembler.residual(next);
        if (Fn.norm() < F.norm() && assembler.kinetic_norm(next) <= radius) {
            alpha = next;
            F = Fn;
            accepted = true;
        } else {
            double s = 0.5;
            while (s >= config.min_damping) {
                const Eigen::VectorXd cand = alpha + s * (next - alpha);
                const Eigen::VectorXd Fc = assembler.residual(cand);
                if (Fc.norm() < F.norm() && assembler.kinetic_norm(cand) <= radius) {
                    alpha = cand;
                    F = Fc;
                    accepted = true;
                    break;
                }
                s *= 0.5;
            }
        }
        if (accepted) {
            picard_stall = 0;
            sol.stats.residual_history.push_back(F.norm());
            ok = converged(F);
            if (!ok) mode = Mode::newton;  // retry Newton from the improved iterate
        } else if (++picard_stall >= 3) {
            fail = "Picard stagnation";
            break;
        }
    }

    sol.converged = ok;
    sol.message = fail;
    sol.stats.residual_norm = F.norm();
    sol.stats.div_residual = constraint_residual(F);
    sol.velocity = velocity_from_alpha(*setup.space, alpha);
    sol.pressure = alpha.segment(Eigen::Index(nf), Eigen::Index(np));
    sol.multiplier = alpha[Eigen::Index(nf + np)];
    sol.stats.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return sol;
}

// ---------------------------------------------------------------------------
// Simulation driver
// ---------------------------------------------------------------------------

StateHistory SimulationResult::as_history() const {
    if (!completed)
        throw std::runtime_error("SimulationResult: incomplete run has no state history");
    return make_history(grid, velocity);
}

SimulationResult run_simulation(const ProblemSetup& setup, const SolverConfig& config) {
    require_space(setup);
    validate_config(config);
    const MixedSpace& space = *setup.space;

    SimulationResult out;
    out.grid = setup.grid;
    DiscreteField U = setup.initial ? project_Pn_div(space, setup.initial)
                                    : zero_field(space, FieldKind::velocity);
    out.velocity.push_back(U.coefficients);
    out.pressure.push_back(Eigen::VectorXd::Zero(Eigen::Index(space.pressure_dofs)));

    for (int i = 1; i <= setup.grid.l; ++i) {
        StepSolution sol = solve_step(setup, U, i, config);
        out.steps.push_back(sol.stats);
        if (!sol.converged) {
            out.completed = false;
            out.failed_step = i;
            std::ostringstream msg;
            msg << "step " << i << ": " << sol.message << " (residual "
                << sol.stats.residual_norm << ", constraint " << sol.stats.div_residual
                << ")";
            out.failure_message = msg.str();
            return out;
        }
        out.velocity.push_back(sol.velocity.coefficients);
        out.pressure.push_back(std::move(sol.pressure));
        U = std::move(sol.velocity);
    }
    out.completed = true;
    return out;
}

// ---------------------------------------------------------------------------
// Built-in analytic fields
// ---------------------------------------------------------------------------

namespace {

constexpr double kVortexAmplitude = 100.0;

double bump(double s) {
    const double t = s * (1.0 - s);
    return t * t;  // s^2 (1-s)^2
}
double bump_d1(double s) { return 2.0 * s - 6.0 * s * s + 4.0 * s * s * s; }
double bump_d2(double s) { return 2.0 - 12.0 * s + 12.0 * s * s; }
double bump_d3(double s) { return -12.0 + 24.0 * s; }

Eigen::Vector2d vortex(double x, double y) {
    return kVortexAmplitude * Eigen::Vector2d(bump(x) * bump_d1(y), -bump_d1(x) * bump(y));
}

}  // namespace

VectorEvaluator taylor_vortex_initial() {
    return [](double x, double y) { return vortex(x, y); };
}

TimeVectorEvaluator manufactured_velocity() {
    return [](double t, double x, double y) {
        return Eigen::Vector2d(std::exp(-t) * vortex(x, y));
    };
}

TimeVectorEvaluator manufactured_forcing(double mu) {
    return [mu](double t, double x, double y) {
        const double X = bump(x), X1 = bump_d1(x), X2 = bump_d2(x), X3 = bump_d3(x);
        const double Y = bump(y), Y1 = bump_d1(y), Y2 = bump_d2(y), Y3 = bump_d3(y);
        const double e1 = std::exp(-t), e2 = e1 * e1;
        const double A = kVortexAmplitude;
        // f = d_t u - mu Lap u + (u . grad) u for u = e^{-t} A (X Y', -X' Y), p = 0.
        const double f1 = -A * X * Y1 * e1 - mu * A * (X2 * Y1 + X * Y3) * e1 +
                          A * A * e2 * X * X1 * (Y1 * Y1 - Y * Y2);
        const double f2 = A * X1 * Y * e1 + mu * A * (X3 * Y + X1 * Y2) * e1 +
                          A * A * e2 * Y * Y1 * (X1 * X1 - X * X2);
        return Eigen::Vector2d(f1, f2);
    };
}

}  // namespace implicitflow
