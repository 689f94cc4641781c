/// @file diagnostics.cpp
/// @brief Trajectory audits, compactness quantities, cross-level distances,
///        parameter sweeps, and CSV emitters. Every integral here is
///        recomputed from stored coefficients by quadrature, independently of
///        the solver's internal assembly.

#include "implicitflow/diagnostics.hpp"

#include <Eigen/Sparse>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <memory>
#include <ostream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "implicitflow/meshkit.hpp"

namespace implicitflow {

namespace {

constexpr double kPi = 3.14159265358979323846;

/// Round-trip decimal formatting shared by every CSV column.
std::string fmt17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::vector<CellQuadData> quad_tables(const MixedSpace& space) {
    std::vector<CellQuadData> out(space.cells());
    parallel_for_cells(space.cells(), [&](std::size_t c) { out[c] = cell_quad_data(space, c); });
    return out;
}

/// Velocity value and gradient at one quadrature point; G(c, e) = d u_c / d x_e.
struct PointState {
    Eigen::Vector2d u = Eigen::Vector2d::Zero();
    Eigen::Matrix2d G = Eigen::Matrix2d::Zero();
};

PointState eval_state(const CellQuadData& qd, const std::vector<std::size_t>& nodes,
                      const Eigen::VectorXd& coeffs, Eigen::Index p) {
    PointState s;
    for (std::size_t a = 0; a < nodes.size(); ++a) {
        const double vx = coeffs[Eigen::Index(2 * nodes[a])];
        const double vy = coeffs[Eigen::Index(2 * nodes[a] + 1)];
        const double phi = qd.phi(p, Eigen::Index(a));
        const double dx = qd.dphi_dx(p, Eigen::Index(a));
        const double dy = qd.dphi_dy(p, Eigen::Index(a));
        s.u[0] += vx * phi;
        s.u[1] += vy * phi;
        s.G(0, 0) += vx * dx;
        s.G(0, 1) += vx * dy;
        s.G(1, 0) += vy * dx;
        s.G(1, 1) += vy * dy;
    }
    return s;
}

/// All quadrature-point states of one coefficient vector, cell by cell.
std::vector<std::vector<PointState>> field_states(const MixedSpace& space,
                                                  const std::vector<CellQuadData>& tables,
                                                  const Eigen::VectorXd& coeffs) {
    std::vector<std::vector<PointState>> states(space.cells());
    parallel_for_cells(space.cells(), [&](std::size_t c) {
        const CellQuadData& qd = tables[c];
        const auto& nodes = space.cell_velocity_nodes[c];
        states[c].resize(std::size_t(qd.weights.size()));
        for (Eigen::Index p = 0; p < qd.weights.size(); ++p)
            states[c][std::size_t(p)] = eval_state(qd, nodes, coeffs, p);
    });
    return states;
}

void validate_trajectory(const SimulationResult& run, const ProblemSetup& setup,
                         const char* who) {
    if (setup.space == nullptr)
        throw std::invalid_argument(std::string(who) + ": setup carries no space");
    if (run.velocity.empty())
        throw std::invalid_argument(std::string(who) + ": empty trajectory");
    if (run.grid.l != setup.grid.l ||
        std::abs(run.grid.T - setup.grid.T) > 1e-12 * std::max(1.0, setup.grid.T))
        throw std::invalid_argument(std::string(who) +
                                    ": trajectory grid differs from the setup grid");
    if (run.velocity.size() > std::size_t(run.grid.l) + 1)
        throw std::invalid_argument(std::string(who) + ": more nodes than grid points");
    for (const Eigen::VectorXd& v : run.velocity)
        if (v.size() != Eigen::Index(setup.space->velocity_dofs))
            throw std::invalid_argument(std::string(who) + ": coefficient size mismatch");
}

void require_complete(const SimulationResult& run, const char* who) {
    if (run.velocity.size() != std::size_t(run.grid.l) + 1)
        throw std::invalid_argument(std::string(who) + ": trajectory is incomplete");
}

/// Strip integrals of step i for the frozen velocity u: the stress pairing
/// <S(t,., DU) : DU>, the stress power |S|^{q'}, and the coercivity offset
/// g~(z, |DU|), each as spatial quadrature sums time-averaged over the strip;
/// plus the time-independent |DU|^q sum. Multiply by delta for strip totals.
struct StripIntegrals {
    double pairing = 0.0;
    double stress_power = 0.0;
    double offset = 0.0;
    double grad_q = 0.0;
};

StripIntegrals strip_integrals(const ProblemSetup& setup, const TimeGrid& grid,
                               const std::vector<CellQuadData>& tables,
                               const Eigen::VectorXd& u, int i) {
    const MixedSpace& space = *setup.space;
    const double q = setup.exponents.q;
    const double qc = setup.exponents.q_conj;
    const auto states = field_states(space, tables, u);

    StripIntegrals out;
    for (std::size_t c = 0; c < space.cells(); ++c) {
        const CellQuadData& qd = tables[c];
        for (Eigen::Index p = 0; p < qd.weights.size(); ++p) {
            const Eigen::Matrix2d& G = states[c][std::size_t(p)].G;
            const Eigen::Matrix2d D = 0.5 * (G + G.transpose());
            out.grad_q += qd.weights[p] * std::pow(D.norm(), q);
        }
    }

    const int tq = setup.approx.base.time_dependent ? setup.quad_points : 1;
    const auto strip = [&](double t) -> Eigen::Vector3d {
        Eigen::Vector3d acc = Eigen::Vector3d::Zero();
        for (std::size_t c = 0; c < space.cells(); ++c) {
            const CellQuadData& qd = tables[c];
            for (Eigen::Index p = 0; p < qd.weights.size(); ++p) {
                const Eigen::Matrix2d& G = states[c][std::size_t(p)].G;
                const Eigen::Matrix2d D = 0.5 * (G + G.transpose());
                const SpaceTimePoint z{t, qd.points(p, 0), qd.points(p, 1)};
                const Eigen::Matrix2d S = eval_approx(setup.approx, D, z);
                const double w = qd.weights[p];
                acc[0] += w * (S.array() * D.array()).sum();
                acc[1] += w * std::pow(S.norm(), qc);
                acc[2] += w * approx_coercivity_offset(setup.approx, z, D.norm());
            }
        }
        return acc;
    };
    const Eigen::Vector3d sv = time_average(strip, grid, i, tq);
    out.pairing = sv[0];
    out.stress_power = sv[1];
    out.offset = sv[2];
    return out;
}

/// Value, first, and second derivative of s^2 (1-s)^2 cos(freq * pi * s).
void bump_cos(double s, int freq, double& v, double& d1, double& d2) {
    const double x = s * s * (1.0 - s) * (1.0 - s);
    const double x1 = 2.0 * s - 6.0 * s * s + 4.0 * s * s * s;
    const double x2 = 2.0 - 12.0 * s + 12.0 * s * s;
    const double w = freq * kPi;
    const double cs = std::cos(w * s);
    const double sn = std::sin(w * s);
    v = x * cs;
    d1 = x1 * cs - x * w * sn;
    d2 = x2 * cs - 2.0 * x1 * w * sn - x * w * w * cs;
}

/// The j-th fixed solenoidal test field w = curl(P(x) Q(y)) and its gradient;
/// div w vanishes identically and w vanishes on the unit-square boundary.
void proxy_field(int index, double x, double y, Eigen::Vector2d& w, Eigen::Matrix2d& grad) {
    const int a = 1 + index % 5;
    const int b = 1 + index / 5;
    double px, px1, px2, qy, qy1, qy2;
    bump_cos(x, a, px, px1, px2);
    bump_cos(y, b, qy, qy1, qy2);
    w[0] = px * qy1;
    w[1] = -px1 * qy;
    grad(0, 0) = px1 * qy1;
    grad(0, 1) = px * qy2;
    grad(1, 0) = -px2 * qy;
    grad(1, 1) = -px1 * qy1;
}

/// Exact integral of sin^2(omega t) over [a, b].
double sin_sq_integral(double omega, double a, double b) {
    if (omega == 0.0) return 0.0;
    return 0.5 * (b - a) - (std::sin(2.0 * omega * b) - std::sin(2.0 * omega * a)) / (4.0 * omega);
}

const char* axis_name(SweepAxis axis) {
    switch (axis) {
        case SweepAxis::k: return "k";
        case SweepAxis::ln: return "ln";
        case SweepAxis::m: return "m";
    }
    return "?";
}

bool is_integer(double v) { return std::isfinite(v) && std::floor(v) == v; }

}  // namespace

// ---------------------------------------------------------------------------
// Energy audits
// ---------------------------------------------------------------------------

AprioriQuantities apriori_quantities(const SimulationResult& run, const ProblemSetup& setup) {
    validate_trajectory(run, setup, "apriori_quantities");
    const MixedSpace& space = *setup.space;
    const Eigen::SparseMatrix<double> M = assemble_velocity_mass(space);
    const auto tables = quad_tables(space);
    const double q = setup.exponents.q;
    const double two_qc = setup.exponents.two_qconj;
    const double delta = run.grid.delta;

    AprioriQuantities out;
    out.max_kinetic_sq = run.velocity[0].dot(M * run.velocity[0]);
    for (std::size_t j = 1; j < run.velocity.size(); ++j) {
        const Eigen::VectorXd& u = run.velocity[j];
        const Eigen::VectorXd du = u - run.velocity[j - 1];
        out.max_kinetic_sq = std::max(out.max_kinetic_sq, u.dot(M * u));
        out.increment_sum += du.dot(M * du);
        DiscreteField U{&space, FieldKind::velocity, u};
        out.dissipation_sum +=
            delta * (std::pow(lebesgue_norm(U, q), q) + std::pow(sobolev_seminorm(U, q), q));
        if (std::isfinite(setup.m))
            out.penalty_sum += delta / setup.m * std::pow(lebesgue_norm(U, two_qc), two_qc);
        const StripIntegrals si = strip_integrals(setup, run.grid, tables, u, int(j));
        out.stress_sum += delta * si.stress_power;
    }
    return out;
}

RunReport energy_audit(const SimulationResult& run, const ProblemSetup& setup) {
    validate_trajectory(run, setup, "energy_audit");
    const MixedSpace& space = *setup.space;
    const Eigen::SparseMatrix<double> M = assemble_velocity_mass(space);
    const auto tables = quad_tables(space);
    const double q = setup.exponents.q;
    const double qc = setup.exponents.q_conj;
    const double two_qc = setup.exponents.two_qconj;
    const double delta = run.grid.delta;
    const std::size_t nsteps = run.velocity.size() - 1;

    RunReport rep;
    rep.identity_residual.reserve(nsteps);
    rep.identity_scale.reserve(nsteps);
    rep.inequality_slack.reserve(nsteps);
    rep.algebraic_residual.reserve(nsteps);
    rep.kinetic_sq.reserve(nsteps);
    rep.increment_sq.reserve(nsteps);
    rep.dissipation.reserve(nsteps);
    rep.stress.reserve(nsteps);
    rep.penalty.reserve(nsteps);
    rep.wall_seconds.reserve(nsteps);
    rep.newton_iterations.reserve(nsteps);
    rep.picard_iterations.reserve(nsteps);
    rep.residual_norm.reserve(nsteps);

    const double kin0 = run.velocity[0].dot(M * run.velocity[0]);
    rep.apriori.max_kinetic_sq = kin0;
    double kin_prev = kin0;
    double work_running = 0.0;  // sum of delta <f_j, U_j>
    double diss_running = 0.0;  // sum of delta (<S_j, DU_j> + penalty rate)
    double pair_sum = 0.0, offset_sum = 0.0, gradq_sum = 0.0, stressp_sum = 0.0;

    for (std::size_t j = 1; j <= nsteps; ++j) {
        const Eigen::VectorXd& u = run.velocity[j];
        const Eigen::VectorXd du = u - run.velocity[j - 1];
        const double kin = u.dot(M * u);
        const double incr = du.dot(M * du);
        DiscreteField U{&space, FieldKind::velocity, u};

        const StripIntegrals si = strip_integrals(setup, run.grid, tables, u, int(j));
        const double pen_rate =
            std::isfinite(setup.m) ? std::pow(lebesgue_norm(U, two_qc), two_qc) / setup.m : 0.0;
        const double work_rate = assemble_step_load(setup, int(j)).dot(restrict_to_free(space, u));

        // Tested identity in its telescoping (polarized) form.
        const double identity =
            0.5 * (kin - kin_prev + incr) + delta * (si.pairing + pen_rate - work_rate);
        const double scale = 0.5 * (kin + kin_prev + incr) +
                             delta * (std::abs(si.pairing) + pen_rate + std::abs(work_rate));
        rep.identity_residual.push_back(std::abs(identity));
        rep.identity_scale.push_back(scale);

        // Polarization identity 2 <dU, U> = (kin - kin_prev + incr) / delta.
        const double two_pair = 2.0 * du.dot(M * u);
        rep.algebraic_residual.push_back(std::abs(two_pair - (kin - kin_prev + incr)) / delta);

        // Telescoped inequality slack at this node.
        work_running += delta * work_rate;
        diss_running += delta * (si.pairing + pen_rate);
        rep.inequality_slack.push_back(0.5 * kin0 + work_running - 0.5 * kin - diss_running);

        // A-priori components.
        const double diss_power =
            delta * (std::pow(lebesgue_norm(U, q), q) + std::pow(sobolev_seminorm(U, q), q));
        const double stress_power = delta * si.stress_power;
        const double penalty = delta * pen_rate;
        rep.kinetic_sq.push_back(kin);
        rep.increment_sq.push_back(incr);
        rep.dissipation.push_back(diss_power);
        rep.stress.push_back(stress_power);
        rep.penalty.push_back(penalty);
        rep.apriori.max_kinetic_sq = std::max(rep.apriori.max_kinetic_sq, kin);
        rep.apriori.increment_sum += incr;
        rep.apriori.dissipation_sum += diss_power;
        rep.apriori.stress_sum += stress_power;
        rep.apriori.penalty_sum += penalty;

        // Duality accumulators.
        pair_sum += delta * si.pairing;
        offset_sum += delta * si.offset;
        gradq_sum += delta * si.grad_q;
        stressp_sum += stress_power;

        // Solver bookkeeping (absent entries stay zero).
        if (j - 1 < run.steps.size()) {
            const StepStats& st = run.steps[j - 1];
            rep.wall_seconds.push_back(st.wall_seconds);
            rep.newton_iterations.push_back(st.newton_iterations);
            rep.picard_iterations.push_back(st.picard_iterations);
            rep.residual_norm.push_back(st.residual_norm);
        } else {
            rep.wall_seconds.push_back(0.0);
            rep.newton_iterations.push_back(0);
            rep.picard_iterations.push_back(0);
            rep.residual_norm.push_back(0.0);
        }

        kin_prev = kin;
    }

    rep.stress_norm_Q = stressp_sum > 0.0 ? std::pow(stressp_sum, 1.0 / qc) : 0.0;
    const double c_star = approx_coercivity_constant(setup.approx);
    rep.duality_margin = pair_sum + offset_sum - c_star * (gradq_sum + stressp_sum);
    rep.duality_scale = std::abs(pair_sum) + offset_sum + c_star * (gradq_sum + stressp_sum);
    rep.parabolic_ratio = parabolic_interpolation_ratio(run, setup);
    return rep;
}

// ---------------------------------------------------------------------------
// Compactness-side quantities
// ---------------------------------------------------------------------------

double parabolic_interpolation_ratio(const SimulationResult& run, const ProblemSetup& setup) {
    validate_trajectory(run, setup, "parabolic_interpolation_ratio");
    const MixedSpace& space = *setup.space;
    const double q = setup.exponents.q;
    const double delta = run.grid.delta;

    double numerator = 0.0;     // int_Q |U|^{2q}
    double space_time = 0.0;    // ||U||_{L^q(W^{1,q})}^q
    double max_l2 = 0.0;        // ||U||_{L^inf(L^2)}
    for (std::size_t j = 1; j < run.velocity.size(); ++j) {
        DiscreteField U{&space, FieldKind::velocity, run.velocity[j]};
        numerator += delta * std::pow(lebesgue_norm(U, 2.0 * q), 2.0 * q);
        space_time +=
            delta * (std::pow(lebesgue_norm(U, q), q) + std::pow(sobolev_seminorm(U, q), q));
        max_l2 = std::max(max_l2, lebesgue_norm(U, 2.0));
    }
    if (numerator <= 0.0 || space_time <= 0.0 || max_l2 <= 0.0) return 0.0;
    return numerator / (space_time * std::pow(max_l2, q));
}

std::vector<double> minty_margins(const SimulationResult& run, const ProblemSetup& setup,
                                  const std::vector<MintyProbe>& probes) {
    validate_trajectory(run, setup, "minty_margins");
    const MixedSpace& space = *setup.space;
    const auto tables = quad_tables(space);
    const double delta = run.grid.delta;

    std::vector<double> margins(probes.size(), 0.0);
    for (std::size_t j = 1; j < run.velocity.size(); ++j) {
        const auto states = field_states(space, tables, run.velocity[j]);
        for (std::size_t pr = 0; pr < probes.size(); ++pr) {
            const Eigen::Matrix2d& B = probes[pr].tensor;
            const auto& weight = probes[pr].weight;
            const int tq =
                (weight || setup.approx.base.time_dependent) ? setup.quad_points : 1;
            const auto strip = [&](double t) -> double {
                double acc = 0.0;
                for (std::size_t c = 0; c < space.cells(); ++c) {
                    const CellQuadData& qd = tables[c];
                    for (Eigen::Index p = 0; p < qd.weights.size(); ++p) {
                        const Eigen::Matrix2d& G = states[c][std::size_t(p)].G;
                        const Eigen::Matrix2d D = 0.5 * (G + G.transpose());
                        const SpaceTimePoint z{t, qd.points(p, 0), qd.points(p, 1)};
                        const Eigen::Matrix2d Sk = eval_approx(setup.approx, D, z);
                        const Eigen::Matrix2d Ss = eval_selection(setup.approx.base, B, z);
                        const double phi = weight ? weight(t, z.x, z.y) : 1.0;
                        acc += qd.weights[p] * phi *
                               (((Sk - Ss).array() * (D - B).array()).sum());
                    }
                }
                return acc;
            };
            margins[pr] += delta * time_average(strip, run.grid, int(j), tq);
        }
    }
    return margins;
}

MintyComparison minty_monitor(const SimulationResult& run_a, const SimulationResult& run_b,
                              const ProblemSetup& setup, const std::vector<MintyProbe>& probes) {
    MintyComparison out;
    out.margins_a = minty_margins(run_a, setup, probes);
    out.margins_b = minty_margins(run_b, setup, probes);
    return out;
}

std::vector<MintyProbe> default_minty_probes(double final_time) {
    if (!(final_time > 0.0))
        throw std::invalid_argument("default_minty_probes: final time must be positive");
    std::vector<Eigen::Matrix2d> tensors(4, Eigen::Matrix2d::Zero());
    tensors[1] << 0.0, 0.5, 0.5, 0.0;   // pure shear
    tensors[2] << 0.3, 0.0, 0.0, -0.3;  // traceless diagonal
    tensors[3] << 0.6, 0.0, 0.0, 0.8;   // unit Frobenius norm
    std::vector<MintyProbe> probes;
    probes.reserve(2 * tensors.size());
    for (const Eigen::Matrix2d& B : tensors) {
        probes.push_back({B, {}});
        probes.push_back({B, [T = final_time](double t, double x, double y) {
                              const double s = std::sin(kPi * t / T);
                              return 16.0 * s * s * x * (1.0 - x) * y * (1.0 - y);
                          }});
    }
    return probes;
}

std::vector<double> weak_residual_proxy(const SimulationResult& run, const ProblemSetup& setup) {
    validate_trajectory(run, setup, "weak_residual_proxy");
    constexpr int kProxyCount = 20;
    const MixedSpace& space = *setup.space;
    const auto tables = quad_tables(space);
    const double T = run.grid.T;
    const double delta = run.grid.delta;
    const double two_qc = setup.exponents.two_qconj;
    const double inv_m = std::isfinite(setup.m) ? 1.0 / setup.m : 0.0;

    std::vector<double> residual(kProxyCount, 0.0);
    std::vector<double> bracket(kProxyCount);
    for (std::size_t j = 1; j < run.velocity.size(); ++j) {
        const Eigen::VectorXd du = (run.velocity[j] - run.velocity[j - 1]) / delta;
        const auto states = field_states(space, tables, run.velocity[j]);
        const auto rate_states = field_states(space, tables, du);
        std::fill(bracket.begin(), bracket.end(), 0.0);

        for (std::size_t c = 0; c < space.cells(); ++c) {
            const CellQuadData& qd = tables[c];
            for (Eigen::Index p = 0; p < qd.weights.size(); ++p) {
                const double x = qd.points(p, 0);
                const double y = qd.points(p, 1);
                const double w = qd.weights[p];
                const PointState& su = states[c][std::size_t(p)];
                const Eigen::Vector2d& ut = rate_states[c][std::size_t(p)].u;
                const Eigen::Matrix2d D = 0.5 * (su.G + su.G.transpose());
                const Eigen::Matrix2d Sbar = averaged_stress(setup, int(j), x, y, D);
                Eigen::Vector2d fbar = Eigen::Vector2d::Zero();
                if (setup.forcing)
                    fbar = time_average([&](double t) { return setup.forcing(t, x, y); },
                                        run.grid, int(j), setup.quad_points);
                const double speed_sq = su.u.squaredNorm();
                const double pen_factor =
                    (inv_m > 0.0 && speed_sq > 0.0)
                        ? inv_m * std::pow(std::sqrt(speed_sq), two_qc - 2.0)
                        : 0.0;

                for (int idx = 0; idx < kProxyCount; ++idx) {
                    Eigen::Vector2d wv;
                    Eigen::Matrix2d Gw;
                    proxy_field(idx, x, y, wv, Gw);
                    const Eigen::Matrix2d Dw = 0.5 * (Gw + Gw.transpose());
                    const double time_term = ut.dot(wv);
                    const double convection =
                        0.5 * (wv.dot(su.G * su.u) - su.u.dot(Gw * su.u));
                    const double stress_term = (Sbar.array() * Dw.array()).sum();
                    const double penalty_term = pen_factor * su.u.dot(wv);
                    const double load_term = fbar.dot(wv);
                    bracket[std::size_t(idx)] +=
                        w * (time_term + convection + stress_term + penalty_term - load_term);
                }
            }
        }

        const double t0 = run.grid.nodes[j - 1];
        const double t1 = run.grid.nodes[j];
        for (int idx = 0; idx < kProxyCount; ++idx) {
            const double omega = (1 + idx % 3) * kPi / T;
            residual[std::size_t(idx)] += bracket[std::size_t(idx)] * sin_sq_integral(omega, t0, t1);
        }
    }
    return residual;
}

// ---------------------------------------------------------------------------
// Cross-level distances
// ---------------------------------------------------------------------------

double interpolant_distance(const SimulationResult& fine, const MixedSpace& fine_space,
                            const SimulationResult& coarse, const MixedSpace& coarse_space,
                            double q) {
    if (q < 1.0) throw std::invalid_argument("interpolant_distance: q must be >= 1");
    require_complete(fine, "interpolant_distance");
    require_complete(coarse, "interpolant_distance");
    if (std::abs(fine.grid.T - coarse.grid.T) > 1e-12 * std::max(1.0, fine.grid.T))
        throw std::invalid_argument("interpolant_distance: final times differ");
    if (fine.grid.l % coarse.grid.l != 0)
        throw std::invalid_argument("interpolant_distance: nested time grids required");
    const int ratio = fine.grid.l / coarse.grid.l;

    const Triangulation& fine_mesh = *fine_space.mesh;
    const Triangulation& coarse_mesh = *coarse_space.mesh;
    int generations;
    if (fine_mesh.level == coarse_mesh.level &&
        fine_mesh.cells.size() == coarse_mesh.cells.size()) {
        if (fine_space.element != coarse_space.element ||
            fine_space.scalar_nodes != coarse_space.scalar_nodes)
            throw std::invalid_argument(
                "interpolant_distance: same-level spaces must share the element");
        generations = 0;
    } else if (fine_mesh.level == coarse_mesh.level + 1 &&
               fine_mesh.cells.size() == 4 * coarse_mesh.cells.size() &&
               fine_mesh.parent_cell.size() == fine_mesh.cells.size()) {
        generations = 1;
    } else {
        throw std::invalid_argument(
            "interpolant_distance: compare consecutive sweep levels (same mesh or one uniform "
            "refinement apart)");
    }

    const double delta = fine.grid.delta;
    double accum = 0.0;
    if (generations == 0) {
        for (int i = 1; i <= fine.grid.l; ++i) {
            const int ic = (i - 1) / ratio + 1;
            DiscreteField diff{&fine_space, FieldKind::velocity,
                               fine.velocity[std::size_t(i)] - coarse.velocity[std::size_t(ic)]};
            accum += delta * std::pow(lebesgue_norm(diff, 2.0), q);
        }
    } else {
        const auto tables = quad_tables(fine_space);
        // Reference coordinates of every fine quadrature point inside its
        // ancestor cell of the coarse mesh, computed once.
        std::vector<std::vector<std::array<double, 2>>> ref(fine_space.cells());
        for (std::size_t c = 0; c < fine_space.cells(); ++c) {
            const AffineMap map = reference_map(coarse_mesh, fine_mesh.parent_cell[c]);
            const CellQuadData& qd = tables[c];
            ref[c].resize(std::size_t(qd.weights.size()));
            for (Eigen::Index p = 0; p < qd.weights.size(); ++p)
                ref[c][std::size_t(p)] = map.apply_inverse(qd.points(p, 0), qd.points(p, 1));
        }
        for (int i = 1; i <= fine.grid.l; ++i) {
            const int ic = (i - 1) / ratio + 1;
            const Eigen::VectorXd& uf = fine.velocity[std::size_t(i)];
            const Eigen::VectorXd& uc = coarse.velocity[std::size_t(ic)];
            const auto states = field_states(fine_space, tables, uf);
            double l2_sq = 0.0;
            for (std::size_t c = 0; c < fine_space.cells(); ++c) {
                const CellQuadData& qd = tables[c];
                const std::size_t ancestor = fine_mesh.parent_cell[c];
                for (Eigen::Index p = 0; p < qd.weights.size(); ++p) {
                    const auto& rc = ref[c][std::size_t(p)];
                    const Eigen::Vector2d coarse_u =
                        evaluate_velocity(coarse_space, uc, ancestor, rc[0], rc[1]);
                    l2_sq += qd.weights[p] *
                             (states[c][std::size_t(p)].u - coarse_u).squaredNorm();
                }
            }
            accum += delta * std::pow(std::sqrt(l2_sq), q);
        }
    }
    return std::pow(accum, 1.0 / q);
}

double reference_distance(const SimulationResult& run, const MixedSpace& space,
                          const TimeVectorEvaluator& reference, double q, int quad_points) {
    if (!reference) throw std::invalid_argument("reference_distance: empty reference evaluator");
    if (q < 1.0) throw std::invalid_argument("reference_distance: q must be >= 1");
    if (quad_points < 1)
        throw std::invalid_argument("reference_distance: quad_points must be >= 1");
    require_complete(run, "reference_distance");

    const auto tables = quad_tables(space);
    const double delta = run.grid.delta;
    double accum = 0.0;
    for (int i = 1; i <= run.grid.l; ++i) {
        const auto states = field_states(space, tables, run.velocity[std::size_t(i)]);
        const auto integrand = [&](double t) -> double {
            double l2_sq = 0.0;
            for (std::size_t c = 0; c < space.cells(); ++c) {
                const CellQuadData& qd = tables[c];
                for (Eigen::Index p = 0; p < qd.weights.size(); ++p) {
                    const Eigen::Vector2d ref = reference(t, qd.points(p, 0), qd.points(p, 1));
                    l2_sq += qd.weights[p] * (states[c][std::size_t(p)].u - ref).squaredNorm();
                }
            }
            return std::pow(std::sqrt(l2_sq), q);
        };
        accum += delta * time_average(integrand, run.grid, i, quad_points);
    }
    return std::pow(accum, 1.0 / q);
}

// ---------------------------------------------------------------------------
// Parameter sweeps
// ---------------------------------------------------------------------------

SweepTable convergence_sweep(const SweepConfig& config, SweepAxis axis,
                             const std::vector<double>& levels) {
    if (levels.empty()) throw std::invalid_argument("convergence_sweep: level list is empty");
    for (std::size_t j = 1; j < levels.size(); ++j)
        if (!(levels[j] > levels[j - 1]))
            throw std::invalid_argument("convergence_sweep: levels must be strictly increasing");
    switch (axis) {
        case SweepAxis::k:
            for (double v : levels)
                if (!is_integer(v) || v < 1.0)
                    throw std::invalid_argument(
                        "convergence_sweep: k levels must be positive integers");
            break;
        case SweepAxis::ln:
            for (double v : levels)
                if (!is_integer(v) || v < 0.0 || v > 20.0)
                    throw std::invalid_argument(
                        "convergence_sweep: ln levels must be small nonnegative integers");
            for (std::size_t j = 1; j < levels.size(); ++j)
                if (levels[j] != levels[j - 1] + 1.0)
                    throw std::invalid_argument(
                        "convergence_sweep: ln levels must be consecutive integers");
            break;
        case SweepAxis::m:
            for (double v : levels)
                if (!(v >= 1.0))
                    throw std::invalid_argument("convergence_sweep: m levels must be >= 1");
            break;
    }
    if (config.base_divisions < 1)
        throw std::invalid_argument("convergence_sweep: base_divisions must be >= 1");
    if (config.base_refinements < 0)
        throw std::invalid_argument("convergence_sweep: base_refinements must be >= 0");
    if (!(config.final_time > 0.0) || config.base_l < 1)
        throw std::invalid_argument("convergence_sweep: invalid base time grid");

    // The mesh ladder and its spaces stay alive for the whole sweep so that
    // cross-level evaluation can walk parent cells.
    std::vector<std::unique_ptr<Triangulation>> meshes;
    std::vector<std::unique_ptr<MixedSpace>> spaces;
    meshes.push_back(std::make_unique<Triangulation>(unit_square_mesh(config.base_divisions)));
    const auto space_at = [&](std::size_t index) -> const MixedSpace& {
        while (meshes.size() <= index)
            meshes.push_back(std::make_unique<Triangulation>(refine_uniform(*meshes.back())));
        if (spaces.size() < meshes.size()) spaces.resize(meshes.size());
        if (!spaces[index])
            spaces[index] =
                std::make_unique<MixedSpace>(build_space(*meshes[index], config.element));
        return *spaces[index];
    };

    SweepTable table;
    table.axis = axis;
    table.rows.reserve(levels.size());

    struct PrevLevel {
        const MixedSpace* space = nullptr;
        SimulationResult run;
        bool ok = false;
    } prev;

    for (double level : levels) {
        SweepRow row;
        row.parameter = level;
        try {
            const std::size_t mesh_index =
                std::size_t(config.base_refinements) +
                (axis == SweepAxis::ln ? std::size_t(level) : 0u);
            const MixedSpace& space = space_at(mesh_index);
            const int l = axis == SweepAxis::ln ? config.base_l << int(level) : config.base_l;
            const int k = axis == SweepAxis::k ? int(level) : config.base_k;
            const double m = axis == SweepAxis::m ? level : config.base_m;
            const GraphApprox approx = make_approx(config.model, config.mode, k);
            const TimeGrid grid = make_time_grid(config.final_time, l);
            const ProblemSetup setup = make_setup(space, approx, grid, m, config.forcing,
                                                  config.initial, config.quad_points);
            SimulationResult run = run_simulation(setup, config.solver);
            row.apriori = apriori_quantities(run, setup);
            if (!run.completed) {
                row.message = run.failure_message;
                prev.ok = false;
            } else {
                row.completed = true;
                if (config.reference)
                    row.manufactured_error = reference_distance(
                        run, space, config.reference, config.model.q, config.quad_points);
                if (prev.ok)
                    row.diff_norm =
                        interpolant_distance(run, space, prev.run, *prev.space, config.model.q);
                prev.space = &space;
                prev.run = std::move(run);
                prev.ok = true;
            }
        } catch (const std::exception& e) {
            row.completed = false;
            row.message = e.what();
            prev.ok = false;
        }
        table.rows.push_back(std::move(row));
    }
    return table;
}

// ---------------------------------------------------------------------------
// CSV emitters
// ---------------------------------------------------------------------------

void write_run_report_csv(std::ostream& out, const SimulationResult& run,
                          const RunReport& report) {
    out << "run_report_v1,step,t,kinetic_sq,increment_sq,dissipation,stress,penalty,"
           "identity_residual,identity_scale,inequality_slack,algebraic_residual,"
           "newton_iterations,picard_iterations,residual_norm\n";
    const std::size_t n = report.identity_residual.size();
    for (std::size_t i = 0; i < n; ++i) {
        out << "run_report_v1," << (i + 1) << ',' << fmt17(run.grid.nodes[i + 1]) << ','
            << fmt17(report.kinetic_sq[i]) << ',' << fmt17(report.increment_sq[i]) << ','
            << fmt17(report.dissipation[i]) << ',' << fmt17(report.stress[i]) << ','
            << fmt17(report.penalty[i]) << ',' << fmt17(report.identity_residual[i]) << ','
            << fmt17(report.identity_scale[i]) << ',' << fmt17(report.inequality_slack[i]) << ','
            << fmt17(report.algebraic_residual[i]) << ',' << report.newton_iterations[i] << ','
            << report.picard_iterations[i] << ',' << fmt17(report.residual_norm[i]) << '\n';
    }
}

void write_run_summary_csv(std::ostream& out, const RunReport& report,
                           const std::vector<double>& weak_residual) {
    out << "run_summary_v1,steps,max_kinetic_sq,increment_total,dissipation_total,stress_total,"
           "penalty_total,apriori_total,stress_norm_Q,parabolic_ratio,duality_margin,"
           "duality_scale";
    for (std::size_t i = 0; i < weak_residual.size(); ++i) {
        char tag[16];
        std::snprintf(tag, sizeof(tag), ",proxy_%02zu", i);
        out << tag;
    }
    out << '\n';
    out << "run_summary_v1," << report.identity_residual.size() << ','
        << fmt17(report.apriori.max_kinetic_sq) << ',' << fmt17(report.apriori.increment_sum)
        << ',' << fmt17(report.apriori.dissipation_sum) << ','
        << fmt17(report.apriori.stress_sum) << ',' << fmt17(report.apriori.penalty_sum) << ','
        << fmt17(report.apriori.total()) << ',' << fmt17(report.stress_norm_Q) << ','
        << fmt17(report.parabolic_ratio) << ',' << fmt17(report.duality_margin) << ','
        << fmt17(report.duality_scale);
    for (double r : weak_residual) out << ',' << fmt17(r);
    out << '\n';
}

void write_sweep_csv(std::ostream& out, const SweepTable& table) {
    out << "sweep_v1,axis,parameter,completed,diff_norm,manufactured_error,max_kinetic_sq,"
           "increment_total,dissipation_total,stress_total,penalty_total,apriori_total\n";
    for (const SweepRow& row : table.rows) {
        out << "sweep_v1," << axis_name(table.axis) << ',' << fmt17(row.parameter) << ','
            << (row.completed ? 1 : 0) << ',' << fmt17(row.diff_norm) << ','
            << fmt17(row.manufactured_error) << ',' << fmt17(row.apriori.max_kinetic_sq) << ','
            << fmt17(row.apriori.increment_sum) << ',' << fmt17(row.apriori.dissipation_sum)
            << ',' << fmt17(row.apriori.stress_sum) << ',' << fmt17(row.apriori.penalty_sum)
            << ',' << fmt17(row.apriori.total()) << '\n';
    }
}

}  // namespace implicitflow
