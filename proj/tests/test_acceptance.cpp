// Acceptance gate: one test per shipped guarantee, each printing a single
// "ACCEPTANCE <n>: PASS/FAIL - <detail>" line with its pinned tolerances.
//
//  1  skew-symmetry of the stabilized convection form on random fields
//  2  per-step energy identity residuals on a Newtonian and a Bingham run
//  3  boundedness of the five a-priori totals under simultaneous refinement
//  4  graph battery (monotonicity, coercivity, graph-limit floor) for every
//     model in every approximation mode, plus a 1D mollification oracle
//  5  divergence-free projector: idempotence, L2-stability, optimality
//  6  manufactured Newtonian convergence under simultaneous halvings
//  7  limit ordering: consecutive-difference decay along k, ln, and m,
//     with the penalty total strictly decreasing along m
//  8  bitwise determinism of repeated CLI executions
//
// Every quantity asserted here is recomputed through the public API; the
// pinned parameter choices are frozen by measurement and commented in place.

#include "implicitflow/cli.hpp"
#include "implicitflow/config.hpp"
#include "implicitflow/diagnostics.hpp"
#include "implicitflow/femspace.hpp"
#include "implicitflow/meshkit.hpp"
#include "implicitflow/rheology.hpp"
#include "implicitflow/scheme.hpp"
#include "implicitflow/timegrid.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <memory>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace {

using namespace implicitflow;

constexpr double kInf = std::numeric_limits<double>::infinity();

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.3g", v);
    return buf;
}

/// Print the gate line for criterion n and fail the test on a violation.
void announce(int n, bool pass, const std::string& detail) {
    std::printf("ACCEPTANCE %d: %s - %s\n", n, pass ? "PASS" : "FAIL", detail.c_str());
    std::fflush(stdout);
    EXPECT_TRUE(pass) << "criterion " << n << ": " << detail;
}

/// Uniform(-1, 1) coefficients on the free velocity DOFs (boundary stays zero).
DiscreteField random_velocity(const MixedSpace& space, std::mt19937& rng) {
    std::uniform_real_distribution<double> coef(-1.0, 1.0);
    DiscreteField w = zero_field(space, FieldKind::velocity);
    for (std::size_t d : space.free_dofs) w.coefficients[Eigen::Index(d)] = coef(rng);
    return w;
}

// ---------------------------------------------------------------------------
// 1. Skew-symmetry of the stabilized convection form
// ---------------------------------------------------------------------------

TEST(Acceptance, ConvectionSkewSymmetry) {
    // 50 random pairs on the thrice-refined crisscross square (512 cells, MINI).
    auto mesh = unit_square_mesh(2);
    for (int r = 0; r < 3; ++r) mesh = refine_uniform(mesh);
    const MixedSpace space = build_space(mesh, VelocityElement::MINI);

    std::mt19937 rng(2026);
    double worst = 0.0;
    for (int trial = 0; trial < 50; ++trial) {
        const DiscreteField u = random_velocity(space, rng);
        const DiscreteField v = random_velocity(space, rng);
        const double bt = form_b_tilde(space, u, v, v);
        const double scale =
            lebesgue_norm(u, 4.0) * sobolev_seminorm(v, 2.0) * lebesgue_norm(v, 4.0);
        ASSERT_GT(scale, 0.0);
        worst = std::max(worst, std::abs(bt) / scale);
    }
    announce(1, worst <= 1e-13,
             "max |bt(U,V,V)| / (|U|_L4 |V|_W12 |V|_L4) = " + fmt(worst) +
                 " over 50 random pairs (bound 1e-13)");
}

// ---------------------------------------------------------------------------
// 2. Discrete energy identity, step by step
// ---------------------------------------------------------------------------

namespace {

struct AuditCase {
    std::unique_ptr<Triangulation> mesh;
    std::unique_ptr<MixedSpace> space;
    ProblemSetup setup;
};

AuditCase forced_case(int refinements, int l, double T, GraphModel model, ApproxMode mode, int k,
                      double m) {
    AuditCase c;
    auto mesh = unit_square_mesh(2);
    for (int r = 0; r < refinements; ++r) mesh = refine_uniform(mesh);
    c.mesh = std::make_unique<Triangulation>(std::move(mesh));
    c.space = std::make_unique<MixedSpace>(build_space(*c.mesh, VelocityElement::MINI));
    c.setup = make_setup(*c.space, make_approx(model, mode, k), make_time_grid(T, l), m,
                         manufactured_forcing(1.0), taylor_vortex_initial());
    return c;
}

/// Worst identity residual relative to 10 * newton_tol * (term-magnitude scale);
/// returns +inf when the run does not complete.
double worst_identity_ratio(const AuditCase& c, const SolverConfig& solver) {
    const SimulationResult run = run_simulation(c.setup, solver);
    if (!run.completed) return kInf;
    const RunReport report = energy_audit(run, c.setup);
    double worst = 0.0;
    for (std::size_t i = 0; i < report.identity_residual.size(); ++i) {
        const double bound = 10.0 * solver.newton_tol * report.identity_scale[i];
        worst = std::max(worst, report.identity_residual[i] / bound);
    }
    return worst;
}

}  // namespace

TEST(Acceptance, EnergyIdentityResiduals) {
    const SolverConfig solver;  // newton_tol = 1e-10
    // Newtonian: 512 cells (three refinements), 16 steps to T = 0.5, exact law.
    const double newtonian = worst_identity_ratio(
        forced_case(3, 16, 0.5, newtonian_model(1.0), ApproxMode::exact, 16, kInf), solver);
    // Bingham: yield stress 1, affine interpolant k = 32, 128 cells, 8 steps.
    const double bingham = worst_identity_ratio(
        forced_case(2, 8, 0.5, bingham_model(1.0, 1.0), ApproxMode::affine_interp, 32, 10.0),
        solver);
    announce(2, newtonian <= 1.0 && bingham <= 1.0,
             "per-step |identity| / (10 * newton_tol * scale): newtonian max = " + fmt(newtonian) +
                 ", bingham max = " + fmt(bingham) + " (bound 1)");
}

// ---------------------------------------------------------------------------
// 3. A-priori totals stay bounded under simultaneous refinement
// ---------------------------------------------------------------------------

TEST(Acceptance, AprioriTotalsBounded) {
    // Forced Bingham flow, mollified law, m = 10. Levels 1..3 pair 128/512/2048
    // cells with 8/16/32 steps. The five totals are one-sided bounds: each must
    // stay finite and may never double from one refinement level to the next
    // (the increment total genuinely decays with the step size, so a two-sided
    // window would reject exact solutions).
    SweepConfig cfg;
    cfg.base_divisions = 2;
    cfg.base_refinements = 1;
    cfg.final_time = 0.5;
    cfg.base_l = 4;
    cfg.model = bingham_model(1.0, 1.0);
    cfg.mode = ApproxMode::mollify;
    cfg.base_k = 16;
    cfg.base_m = 10.0;
    cfg.forcing = manufactured_forcing(1.0);
    cfg.initial = taylor_vortex_initial();
    const SweepTable table = convergence_sweep(cfg, SweepAxis::ln, {1.0, 2.0, 3.0});

    bool pass = table.rows.size() == 3;
    double max_growth = 0.0;
    auto quantities = [](const AprioriQuantities& a) {
        return std::vector<double>{a.max_kinetic_sq, a.increment_sum, a.dissipation_sum,
                                   a.stress_sum, a.penalty_sum};
    };
    for (const SweepRow& row : table.rows) {
        pass = pass && row.completed;
        for (double v : quantities(row.apriori)) pass = pass && std::isfinite(v);
    }
    for (std::size_t i = 1; pass && i < table.rows.size(); ++i) {
        const auto prev = quantities(table.rows[i - 1].apriori);
        const auto next = quantities(table.rows[i].apriori);
        for (std::size_t j = 0; j < prev.size(); ++j) {
            const double growth = next[j] / prev[j];
            max_growth = std::max(max_growth, growth);
            pass = pass && growth < 2.0;
        }
    }
    announce(3, pass,
             "five a-priori totals finite over levels 1-3, max per-level growth = " +
                 fmt(max_growth) + " (bound 2)");
}

// ---------------------------------------------------------------------------
// 4. Graph battery for every model in every mode, plus the 1D mollifier oracle
// ---------------------------------------------------------------------------

namespace oracle {

double bump_raw(double u) {
    const double w = 1.0 - u * u;
    return (w > 0.0) ? std::exp(-1.0 / w) : 0.0;
}

double bump_mass() {
    static const double mass = [] {
        const int n = 100000;
        const double h = 2.0 / n;
        double sum = 0.0;  // endpoint values are zero
        for (int i = 1; i < n; ++i) sum += bump_raw(-1.0 + i * h);
        return sum * h;
    }();
    return mass;
}

double odd_radial(const GraphModel& model, const SpaceTimePoint& z, double x) {
    if (x >= 0.0) return model.radial(z, x);
    return -model.radial(z, -x);
}

/// Brute-force mollified radial law: (1/Z) * int_{-1}^{1} bump(u) S_odd(s - u/k) du,
/// trapezoid with the window split at every kink crossing and one-sided limits
/// realized by a relative nudge at segment endpoints.
double mollified(const GraphModel& model, const SpaceTimePoint& z, int k, double s) {
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

    const auto f = [&](double u) { return bump_raw(u) * odd_radial(model, z, s - u / kk); };
    const int n = 40000;
    double sum = 0.0;
    for (std::size_t seg = 1; seg < breaks.size(); ++seg) {
        const double lo = breaks[seg - 1];
        const double hi = breaks[seg];
        const double h = (hi - lo) / n;
        const double nudge = 1e-9 * (hi - lo);
        double acc = 0.5 * (f(lo + nudge) + f(hi - nudge));
        for (int i = 1; i < n; ++i) acc += f(lo + i * h);
        sum += acc * h;
    }
    return sum / bump_mass();
}

}  // namespace oracle

TEST(Acceptance, GraphAssumptionBattery) {
    struct Named {
        const char* tag;
        GraphModel model;
    };
    const Named models[] = {
        {"newtonian", newtonian_model(1.5)},
        {"power_law", power_law_model(1.0, 1.7)},
        {"bingham", bingham_model(1.0, 1.0)},
        {"herschel_bulkley", herschel_bulkley_model(0.5, 1.2, 1.6)},
        {"bingham_oscillating", bingham_oscillating_model(1.0, 0.8)},
    };
    const ApproxMode modes[] = {ApproxMode::exact, ApproxMode::mollify,
                                ApproxMode::affine_interp};

    bool pass = true;
    int total_violations = 0;
    double min_coercivity = kInf;
    double min_limit_slack = kInf;
    for (const Named& nm : models) {
        for (ApproxMode mode : modes) {
            const GraphApprox approx = make_approx(nm.model, mode, 32);
            const BatteryReport rep = check_assumption_battery(approx, 10000, 2026);
            total_violations += rep.monotonicity_violations;
            min_coercivity = std::min(min_coercivity, rep.min_coercivity_margin);
            min_limit_slack =
                std::min(min_limit_slack, rep.min_graph_limit_margin - rep.graph_limit_floor);
            pass = pass && rep.sample_count == 10000 && rep.monotonicity_violations == 0 &&
                   rep.min_coercivity_margin >= -1e-12 &&
                   rep.min_graph_limit_margin >= rep.graph_limit_floor - 1e-12;
        }
    }

    // 1D mollification against the trapezoid-convolution oracle: Bingham law,
    // k = 8, fifty radii crossing the mollification window.
    const GraphModel bingham = bingham_model(1.0, 1.0);
    const GraphApprox mollify8 = make_approx(bingham, ApproxMode::mollify, 8);
    const SpaceTimePoint z{0.3, 0.25, 0.5};
    double worst_oracle = 0.0;
    for (int i = 1; i <= 50; ++i) {
        const double r = 0.05 * i;
        worst_oracle =
            std::max(worst_oracle, std::abs(mollify8.radial(z, r) - oracle::mollified(bingham, z, 8, r)));
    }
    pass = pass && worst_oracle <= 1e-6;

    announce(4, pass,
             "5 models x 3 modes x 10^4 pairs: violations = " + std::to_string(total_violations) +
                 ", min coercivity margin = " + fmt(min_coercivity) +
                 " (bound -1e-12), min slack over graph-limit floor = " + fmt(min_limit_slack) +
                 ", mollifier vs oracle max |diff| = " + fmt(worst_oracle) + " (bound 1e-6)");
}

// ---------------------------------------------------------------------------
// 5. Divergence-free projector: idempotence, stability, optimality
// ---------------------------------------------------------------------------

TEST(Acceptance, DivergenceFreeProjector) {
    const Triangulation mesh = refine_uniform(unit_square_mesh(2));
    const MixedSpace space = build_space(mesh, VelocityElement::MINI);
    std::mt19937 rng(2026);

    double idem = 0.0, stability = 0.0, optimality = 0.0;
    for (int trial = 0; trial < 10; ++trial) {
        const DiscreteField w = random_velocity(space, rng);
        const DiscreteField p = project_Pn_div(space, w);
        const DiscreteField pp = project_Pn_div(space, p);
        const DiscreteField idem_diff{&space, FieldKind::velocity,
                                      pp.coefficients - p.coefficients};
        idem = std::max(idem, lebesgue_norm(idem_diff, 2.0));
        stability = std::max(stability, lebesgue_norm(p, 2.0) - lebesgue_norm(w, 2.0));
        // Optimality: no member of the divergence-free subspace may beat the
        // projection; members are produced by projecting fresh random fields.
        const DiscreteField err{&space, FieldKind::velocity, w.coefficients - p.coefficients};
        const double best = lebesgue_norm(err, 2.0);
        for (int j = 0; j < 100; ++j) {
            const DiscreteField member = project_Pn_div(space, random_velocity(space, rng));
            const DiscreteField gap{&space, FieldKind::velocity,
                                    w.coefficients - member.coefficients};
            optimality = std::max(optimality, best - lebesgue_norm(gap, 2.0));
        }
    }
    const bool pass = idem <= 1e-10 && stability <= 1e-10 && optimality <= 1e-10;
    announce(5, pass,
             "10 fields, 100 competitors each: idempotence = " + fmt(idem) +
                 ", L2 stability excess = " + fmt(stability) +
                 ", optimality excess = " + fmt(optimality) + " (bounds 1e-10)");
}

// ---------------------------------------------------------------------------
// 6. Manufactured Newtonian convergence under simultaneous halvings
// ---------------------------------------------------------------------------

TEST(Acceptance, ManufacturedConvergence) {
    SweepConfig cfg;
    cfg.base_divisions = 2;
    cfg.base_refinements = 0;
    cfg.final_time = 0.5;
    cfg.base_l = 8;
    cfg.model = newtonian_model(1.0);
    cfg.mode = ApproxMode::exact;
    cfg.base_m = kInf;
    cfg.forcing = manufactured_forcing(1.0);
    cfg.initial = taylor_vortex_initial();
    cfg.reference = manufactured_velocity();
    // Three simultaneous (step, mesh) halvings: 8/32/128/512 cells with
    // 8/16/32/64 steps against the decaying-vortex solution.
    const SweepTable table = convergence_sweep(cfg, SweepAxis::ln, {0.0, 1.0, 2.0, 3.0});

    bool pass = table.rows.size() == 4;
    std::string errors, orders;
    for (std::size_t i = 0; i < table.rows.size(); ++i) {
        const SweepRow& row = table.rows[i];
        pass = pass && row.completed && row.manufactured_error > 0.0;
        errors += (i ? " " : "") + fmt(row.manufactured_error);
        if (i > 0) {
            pass = pass && row.manufactured_error < table.rows[i - 1].manufactured_error;
            const double order =
                std::log2(table.rows[i - 1].manufactured_error / row.manufactured_error);
            orders += (i > 1 ? " " : "") + fmt(order);
        }
    }
    announce(6, pass,
             "L^q(L^2) errors strictly decrease over three halvings: [" + errors +
                 "], observed orders [" + orders + "] (reported, not asserted)");
}

// ---------------------------------------------------------------------------
// 7. Limit ordering along the approximation, refinement, and penalty axes
// ---------------------------------------------------------------------------

namespace {

/// Unforced small-amplitude decay: the strain range crosses the mollification
/// windows of every index below, so consecutive runs differ measurably while
/// the flow stays deep in the Newton solver's comfort zone.
SweepConfig small_decay_config() {
    SweepConfig cfg;
    cfg.base_divisions = 2;
    cfg.base_refinements = 1;
    cfg.final_time = 0.25;
    cfg.base_l = 4;
    cfg.model = bingham_model(0.1, 0.25);
    cfg.mode = ApproxMode::mollify;
    cfg.base_k = 16;
    cfg.base_m = 10.0;
    cfg.initial = [u = taylor_vortex_initial()](double x, double y) {
        return Eigen::Vector2d(0.05 * u(x, y));
    };
    return cfg;
}

/// All rows completed and the consecutive-difference norms strictly decrease.
bool diffs_decrease(const SweepTable& table, std::string& shown) {
    bool ok = table.rows.size() >= 3;
    shown.clear();
    for (std::size_t i = 0; i < table.rows.size(); ++i) {
        ok = ok && table.rows[i].completed;
        if (i == 0) continue;
        ok = ok && table.rows[i].diff_norm >= 0.0;
        if (i >= 2) ok = ok && table.rows[i].diff_norm < table.rows[i - 1].diff_norm;
        shown += (i > 1 ? " " : "") + fmt(table.rows[i].diff_norm);
    }
    return ok;
}

}  // namespace

TEST(Acceptance, LimitOrderingSweeps) {
    const SweepConfig cfg = small_decay_config();
    std::string k_diffs, ln_diffs, m_diffs;
    const SweepTable k_table = convergence_sweep(cfg, SweepAxis::k, {8, 16, 32, 64});
    const SweepTable ln_table = convergence_sweep(cfg, SweepAxis::ln, {0, 1, 2});
    const SweepTable m_table = convergence_sweep(cfg, SweepAxis::m, {1, 10, 100});
    bool pass = diffs_decrease(k_table, k_diffs);
    pass = diffs_decrease(ln_table, ln_diffs) && pass;
    pass = diffs_decrease(m_table, m_diffs) && pass;

    // The penalty total (delta/m) sum ||U||^{2q'} must strictly decrease in m.
    std::string penalties;
    for (std::size_t i = 0; i < m_table.rows.size(); ++i) {
        const double p = m_table.rows[i].apriori.penalty_sum;
        pass = pass && std::isfinite(p) && p > 0.0;
        if (i > 0) pass = pass && p < m_table.rows[i - 1].apriori.penalty_sum;
        penalties += (i ? " " : "") + fmt(p);
    }
    announce(7, pass,
             "consecutive diffs decrease along k [" + k_diffs + "], ln [" + ln_diffs +
                 "], m [" + m_diffs + "]; penalty strictly decreases along m [" + penalties + "]");
}

// ---------------------------------------------------------------------------
// 8. Bitwise determinism of repeated CLI executions
// ---------------------------------------------------------------------------

namespace {

std::string read_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

int silent_cli(const std::vector<std::string>& args, std::string* captured = nullptr) {
    std::ostringstream out, err;
    const int rc = run_cli(args, out, err);
    if (captured) *captured = out.str();
    return rc;
}

}  // namespace

TEST(Acceptance, DeterministicReports) {
    namespace fs = std::filesystem;
    const fs::path dir = fs::path("acceptance_scratch") / "determinism";
    fs::remove_all(dir);
    fs::create_directories(dir);

    const fs::path config_path = dir / "run.cfg";
    {
        std::ofstream cfg(config_path);
        cfg << "[domain]\ndivisions = 2\nn = 1\nelement = mini\n"
            << "[time]\nT = 0.25\nl = 3\n"
            << "[model]\nmodel = bingham\nmu = 1.0\ntau_y = 1.0\napprox = mollify\nk = 16\n"
            << "[regularization]\nm = 10\n"
            << "[forcing]\nbuiltin = manufactured_newtonian\n"
            << "[initial]\nbuiltin = taylor_vortex\n"
            << "[output]\ndirectory = " << (dir / "out").string() << "\nstride = 1\n";
    }

    const std::vector<std::string> run_args = {"run", config_path.string()};
    std::string stdout_a, stdout_b;
    const int rc_a = silent_cli(run_args, &stdout_a);
    const std::string report_a = read_bytes(dir / "out" / "report.csv");
    const std::string summary_a = read_bytes(dir / "out" / "summary.csv");
    const std::string fields_a = read_bytes(dir / "out" / "fields_000003.vtk");
    const int rc_b = silent_cli(run_args, &stdout_b);
    const std::string report_b = read_bytes(dir / "out" / "report.csv");
    const std::string summary_b = read_bytes(dir / "out" / "summary.csv");
    const std::string fields_b = read_bytes(dir / "out" / "fields_000003.vtk");

    // Seeded battery through the CLI, executed twice.
    std::string battery_a, battery_b;
    const std::vector<std::string> check_args = {"check-model", config_path.string(), "--samples",
                                                 "2000", "--seed", "9"};
    const int rc_c = silent_cli(check_args, &battery_a);
    const int rc_d = silent_cli(check_args, &battery_b);

    const bool pass = rc_a == kExitOk && rc_b == kExitOk && rc_c == kExitOk && rc_d == kExitOk &&
                      !report_a.empty() && report_a == report_b && summary_a == summary_b &&
                      !fields_a.empty() && fields_a == fields_b && stdout_a == stdout_b &&
                      !battery_a.empty() && battery_a == battery_b;
    announce(8, pass,
             "repeated executions byte-identical: report.csv (" + std::to_string(report_a.size()) +
                 " B), summary.csv (" + std::to_string(summary_a.size()) + " B), final VTK (" +
                 std::to_string(fields_a.size()) + " B), run stdout, seeded battery stdout");
}

}  // namespace
