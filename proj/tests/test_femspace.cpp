/// @file test_femspace.cpp
/// @brief Mixed finite element tests: reference quadrature exactness, DOF
///        bookkeeping for MINI / P2-P0 / P1-P1, the divergence constraint matrix,
///        the projections onto the discretely divergence-free subspace and onto
///        the pressure space, the discrete inf-sup constant (including the
///        unstable equal-order negative control), quadrature norms, conformity
///        across interior edges, and deterministic parallel assembly.
///
/// Oracles: quadrature monomial integrals from the closed form
/// int_T x^a y^b = a! b! / (a+b+2)!; DOF counts and node positions derived by
/// hand from the element definitions; projection identities checked in the
/// quadrature inner product (Pythagoras makes stability/optimality exact there).

#include <gtest/gtest.h>

#include "implicitflow/femspace.hpp"
#include "implicitflow/meshkit.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <vector>

namespace {

using namespace implicitflow;

// =============================================================================
// Helpers
// =============================================================================

double factorial(int n) {
    double f = 1.0;
    for (int i = 2; i <= n; ++i) f *= i;
    return f;
}

/// Physical positions of the scalar velocity nodes, rebuilt independently from
/// the element definition (vertices; P2 edge midpoints per local edge order
/// (0,1),(1,2),(2,0); MINI cell bubbles at centroids).
std::vector<std::array<double, 2>> scalar_node_positions(const MixedSpace& space) {
    const Triangulation& mesh = *space.mesh;
    std::vector<std::array<double, 2>> pos(space.scalar_nodes, {0.0, 0.0});
    for (std::size_t v = 0; v < mesh.vertex_count(); ++v) pos[v] = mesh.vertices[v];
    for (std::size_t c = 0; c < mesh.cell_count(); ++c) {
        const auto& cell = mesh.cells[c];
        const auto& nodes = space.cell_velocity_nodes[c];
        if (space.element == VelocityElement::MINI) {
            for (int k = 0; k < 2; ++k) {
                pos[nodes[3]][k] = (mesh.vertices[cell[0]][k] + mesh.vertices[cell[1]][k] +
                                    mesh.vertices[cell[2]][k]) /
                                   3.0;
            }
        } else if (space.element == VelocityElement::P2P0) {
            const int edges[3][2] = {{0, 1}, {1, 2}, {2, 0}};
            for (int e = 0; e < 3; ++e) {
                for (int k = 0; k < 2; ++k) {
                    pos[nodes[std::size_t(3 + e)]][k] =
                        0.5 * (mesh.vertices[cell[edges[e][0]]][k] +
                               mesh.vertices[cell[edges[e][1]]][k]);
                }
            }
        }
    }
    return pos;
}

/// Interpolant of a velocity field: vertex/midpoint coefficients take nodal
/// values; MINI bubble coefficients stay zero (the hats alone reproduce affine
/// fields — the MINI basis is hierarchical, not Lagrange). Exact for affine
/// fields on MINI/P1P1 and for quadratics on P2P0.
DiscreteField nodal_velocity(const MixedSpace& space, const VectorEvaluator& v) {
    DiscreteField f = zero_field(space, FieldKind::velocity);
    const auto pos = scalar_node_positions(space);
    const std::size_t lagrange_nodes =
        (space.element == VelocityElement::MINI)
            ? space.mesh->vertex_count()
            : space.scalar_nodes;
    for (std::size_t j = 0; j < lagrange_nodes; ++j) {
        const Eigen::Vector2d val = v(pos[j][0], pos[j][1]);
        f.coefficients[Eigen::Index(2 * j)] = val[0];
        f.coefficients[Eigen::Index(2 * j + 1)] = val[1];
    }
    return f;
}

/// Quadrature L2 norm of an analytic vector field over the whole mesh.
double quad_l2(const MixedSpace& space, const VectorEvaluator& v) {
    double acc = 0.0;
    for (std::size_t c = 0; c < space.cells(); ++c) {
        const CellQuadData data = cell_quad_data(space, c);
        for (Eigen::Index q = 0; q < data.weights.size(); ++q) {
            acc += data.weights[q] * v(data.points(q, 0), data.points(q, 1)).squaredNorm();
        }
    }
    return std::sqrt(acc);
}

/// Quadrature L2 distance between an analytic field and a discrete velocity field.
double quad_l2_diff(const MixedSpace& space, const VectorEvaluator& v,
                    const DiscreteField& u) {
    double acc = 0.0;
    for (std::size_t c = 0; c < space.cells(); ++c) {
        const CellQuadData data = cell_quad_data(space, c);
        for (Eigen::Index q = 0; q < data.weights.size(); ++q) {
            const Eigen::Vector2d uh = evaluate_velocity(
                space, u.coefficients, c, space.quadrature.points(q, 0),
                space.quadrature.points(q, 1));
            acc += data.weights[q] *
                   (v(data.points(q, 0), data.points(q, 1)) - uh).squaredNorm();
        }
    }
    return std::sqrt(acc);
}

/// Smooth random no-slip-free test field (not zero on the boundary; the
/// projection clamps boundary DOFs itself).
VectorEvaluator random_smooth_field(unsigned seed) {
    std::mt19937 rng(seed);
    std::uniform_real_distribution<double> coef(-1.0, 1.0);
    const double a = coef(rng), b = coef(rng), c = coef(rng), d = coef(rng);
    const double e = coef(rng), f = coef(rng);
    return [=](double x, double y) {
        return Eigen::Vector2d(a * std::sin(2.0 * x + c) + b * y * y + e * x * y,
                               d * std::cos(2.0 * y + f) + a * x * x - e * x * y);
    };
}

const char* element_tag(VelocityElement e) {
    switch (e) {
        case VelocityElement::MINI: return "mini";
        case VelocityElement::P2P0: return "p2p0";
        case VelocityElement::P1P1: return "p1p1";
    }
    return "?";
}

// =============================================================================
// Quadrature
// =============================================================================

TEST(Quadrature, WeightsPositiveSumHalf) {
    const QuadratureRule rule = triangle_quadrature_deg5();
    EXPECT_EQ(rule.degree, 5);
    double sum = 0.0;
    for (Eigen::Index q = 0; q < rule.weights.size(); ++q) {
        EXPECT_GT(rule.weights[q], 0.0);
        sum += rule.weights[q];
    }
    EXPECT_NEAR(sum, 0.5, 1e-15);
}

TEST(Quadrature, ExactOnMonomialsThroughDegreeFive) {
    // int_T x^a y^b dx dy = a! b! / (a+b+2)! on the reference simplex.
    const QuadratureRule rule = triangle_quadrature_deg5();
    for (int a = 0; a + 0 <= 5; ++a) {
        for (int b = 0; a + b <= 5; ++b) {
            double integral = 0.0;
            for (Eigen::Index q = 0; q < rule.weights.size(); ++q) {
                integral += rule.weights[q] * std::pow(rule.points(q, 0), a) *
                            std::pow(rule.points(q, 1), b);
            }
            const double exact = factorial(a) * factorial(b) / factorial(a + b + 2);
            EXPECT_NEAR(integral, exact, 1e-14) << "a=" << a << " b=" << b;
        }
    }
}

TEST(Quadrature, PointsInsideReferenceSimplex) {
    const QuadratureRule rule = triangle_quadrature_deg5();
    for (Eigen::Index q = 0; q < rule.weights.size(); ++q) {
        EXPECT_GT(rule.points(q, 0), 0.0);
        EXPECT_GT(rule.points(q, 1), 0.0);
        EXPECT_LT(rule.points(q, 0) + rule.points(q, 1), 1.0);
    }
}

// =============================================================================
// Space construction and DOF bookkeeping
// =============================================================================

TEST(BuildSpace, MiniCountsOnTwoCellSquare) {
    const Triangulation mesh = unit_square_mesh(1);
    const MixedSpace space = build_space(mesh, VelocityElement::MINI);
    EXPECT_EQ(space.scalar_nodes, 6u);  // 4 vertices + 2 bubbles
    EXPECT_EQ(space.velocity_dofs, 12u);
    EXPECT_EQ(space.pressure_dofs, 4u);
}

TEST(BuildSpace, P2P0CountsOnTwoCellSquare) {
    const Triangulation mesh = unit_square_mesh(1);
    const MixedSpace space = build_space(mesh, VelocityElement::P2P0);
    EXPECT_EQ(space.scalar_nodes, 9u);  // 4 vertices + 5 edge midpoints
    EXPECT_EQ(space.velocity_dofs, 18u);
    EXPECT_EQ(space.pressure_dofs, 2u);
}

TEST(BuildSpace, P1P1CountsOnTwoCellSquare) {
    const Triangulation mesh = unit_square_mesh(1);
    const MixedSpace space = build_space(mesh, VelocityElement::P1P1);
    EXPECT_EQ(space.velocity_dofs, 8u);
    EXPECT_EQ(space.pressure_dofs, 4u);
}

TEST(BuildSpace, MiniBoundaryExcludesBubbles) {
    const Triangulation mesh = unit_square_mesh(2);
    const MixedSpace space = build_space(mesh, VelocityElement::MINI);
    for (std::size_t dof : space.boundary_dofs) {
        EXPECT_LT(dof / 2, mesh.vertex_count()) << "bubble DOF marked as boundary";
    }
}

TEST(BuildSpace, MiniSingleSquareFreeDofsAreTheBubbles) {
    // On the 2-cell square every vertex lies on the boundary, so the free
    // velocity DOFs are exactly the two bubble nodes' components.
    const Triangulation mesh = unit_square_mesh(1);
    const MixedSpace space = build_space(mesh, VelocityElement::MINI);
    ASSERT_EQ(space.free_dofs.size(), 4u);
    EXPECT_EQ(space.free_dofs, (std::vector<std::size_t>{8, 9, 10, 11}));
    for (std::size_t j = 0; j < space.free_dofs.size(); ++j) {
        EXPECT_EQ(space.full_to_free[space.free_dofs[j]], std::ptrdiff_t(j));
    }
    for (std::size_t dof : space.boundary_dofs) EXPECT_EQ(space.full_to_free[dof], -1);
}

TEST(BuildSpace, P2BoundaryIncludesEdgeMidpoints) {
    // 2-cell square: 4 boundary edges contribute 4 midpoint nodes; only the
    // diagonal midpoint stays free.
    const Triangulation mesh = unit_square_mesh(1);
    const MixedSpace space = build_space(mesh, VelocityElement::P2P0);
    EXPECT_EQ(space.boundary_dofs.size(), 16u);  // (4 vertices + 4 midpoints) x 2
    EXPECT_EQ(space.free_dofs.size(), 2u);
}

TEST(BuildSpace, PartitionOfUnityAtQuadraturePoints) {
    const Triangulation mesh = unit_square_mesh(2);
    for (VelocityElement e :
         {VelocityElement::MINI, VelocityElement::P2P0, VelocityElement::P1P1}) {
        SCOPED_TRACE(element_tag(e));
        const MixedSpace space = build_space(mesh, e);
        const std::size_t affine_part = (e == VelocityElement::P2P0) ? 6u : 3u;
        const CellQuadData data = cell_quad_data(space, 1);
        for (Eigen::Index q = 0; q < data.weights.size(); ++q) {
            double sum = 0.0;
            for (std::size_t b = 0; b < affine_part; ++b) sum += data.phi(q, Eigen::Index(b));
            EXPECT_NEAR(sum, 1.0, 1e-14);
        }
    }
}

TEST(BuildSpace, CellWeightsSumToCellArea) {
    const Triangulation mesh = refine_uniform(unit_square_mesh(2));
    const MixedSpace space = build_space(mesh, VelocityElement::MINI);
    for (std::size_t c = 0; c < space.cells(); ++c) {
        const CellQuadData data = cell_quad_data(space, c);
        EXPECT_NEAR(data.weights.sum(), mesh.cell_area(c), 1e-15);
    }
}

TEST(BuildSpace, ElementNamesRoundTrip) {
    for (VelocityElement e :
         {VelocityElement::MINI, VelocityElement::P2P0, VelocityElement::P1P1}) {
        EXPECT_EQ(element_from_name(element_name(e)), e);
    }
    EXPECT_THROW(element_from_name("taylor_hood"), std::invalid_argument);
}

// =============================================================================
// Divergence constraint matrix
// =============================================================================

TEST(DivMatrix, DimensionsMiniTwoCell) {
    const Triangulation mesh = unit_square_mesh(1);
    const MixedSpace space = build_space(mesh, VelocityElement::MINI);
    const DivConstraintMatrix B = assemble_div_matrix(space);
    EXPECT_EQ(B.matrix.rows(), 4);
    EXPECT_EQ(B.matrix.cols(), 12);
}

TEST(DivMatrix, ConstantPressureRowAnnihilatesZeroTraceFields) {
    // The constant function is the sum of the pressure basis; its row of B must
    // kill every velocity basis function that vanishes on the boundary.
    const Triangulation mesh = unit_square_mesh(2);
    for (VelocityElement e : {VelocityElement::MINI, VelocityElement::P2P0}) {
        SCOPED_TRACE(element_tag(e));
        const MixedSpace space = build_space(mesh, e);
        const DivConstraintMatrix B = assemble_div_matrix(space);
        const Eigen::RowVectorXd constant_row =
            Eigen::RowVectorXd::Ones(B.matrix.rows()) * B.matrix;
        for (std::size_t dof : space.free_dofs) {
            EXPECT_NEAR(constant_row[Eigen::Index(dof)], 0.0, 1e-12);
        }
    }
}

TEST(DivMatrix, BubbleDivergenceHasZeroMean) {
    // supp(bubble) is one cell and the bubble vanishes on its boundary, so
    // <div(bubble e_k), 1> = 0 by the divergence theorem.
    const Triangulation mesh = unit_square_mesh(1);
    const MixedSpace space = build_space(mesh, VelocityElement::MINI);
    const DivConstraintMatrix B = assemble_div_matrix(space);
    const Eigen::RowVectorXd constant_row =
        Eigen::RowVectorXd::Ones(B.matrix.rows()) * B.matrix;
    for (std::size_t dof = 8; dof < 12; ++dof) {  // the two bubble nodes' components
        EXPECT_NEAR(constant_row[Eigen::Index(dof)], 0.0, 1e-14);
    }
}

TEST(DivMatrix, RepeatedAssemblyBitwiseIdentical) {
    // Per-cell contributions are merged in cell-index order, so assembly is
    // deterministic regardless of the thread schedule.
    const Triangulation mesh = refine_uniform(refine_uniform(unit_square_mesh(3)));
    const MixedSpace space = build_space(mesh, VelocityElement::MINI);
    const Eigen::SparseMatrix<double> b1 = assemble_div_matrix(space).matrix;
    const Eigen::SparseMatrix<double> b2 = assemble_div_matrix(space).matrix;
    ASSERT_EQ(b1.nonZeros(), b2.nonZeros());
    const Eigen::SparseMatrix<double> diff = b1 - b2;
    EXPECT_EQ(diff.norm(), 0.0);
    EXPECT_GE(assembly_thread_count(), 1u);
}

TEST(ParallelFor, CoversEveryCellExactlyOnce) {
    std::vector<int> hits(1000, 0);
    parallel_for_cells(hits.size(), [&](std::size_t c) { hits[c] += 1; });
    EXPECT_TRUE(std::all_of(hits.begin(), hits.end(), [](int h) { return h == 1; }));
}

// =============================================================================
// Projections
// =============================================================================

TEST(ProjectPdiv, IdempotentOnItsRange) {
    const Triangulation mesh = unit_square_mesh(3);
    for (VelocityElement e : {VelocityElement::MINI, VelocityElement::P2P0}) {
        SCOPED_TRACE(element_tag(e));
        const MixedSpace space = build_space(mesh, e);
        const DiscreteField once = project_Pn_div(space, random_smooth_field(31));
        const DiscreteField twice = project_Pn_div(space, once);
        EXPECT_LE((twice.coefficients - once.coefficients).norm(), 1e-10);
    }
}

TEST(ProjectPdiv, DivergenceDefectBelowTolerance) {
    // max_q |<div U, Q_q - mean>| <= 1e-10 * ||U||_{H1} over zero-mean test
    // pressures from the basis.
    const Triangulation mesh = unit_square_mesh(3);
    for (VelocityElement e : {VelocityElement::MINI, VelocityElement::P2P0}) {
        SCOPED_TRACE(element_tag(e));
        const MixedSpace space = build_space(mesh, e);
        const DiscreteField u = project_Pn_div(space, random_smooth_field(57));
        const DivConstraintMatrix B = assemble_div_matrix(space);
        const Eigen::VectorXd c = pressure_mean_vector(space);
        const double area = c.sum();
        const Eigen::VectorXd div_against_basis = B.matrix * u.coefficients;
        const double total_div = div_against_basis.sum();  // <div U, 1>
        const double h1 = std::sqrt(std::pow(lebesgue_norm(u, 2.0), 2) +
                                    std::pow(sobolev_seminorm(u, 2.0), 2));
        for (Eigen::Index qd = 0; qd < div_against_basis.size(); ++qd) {
            // test function Q_q - (<Q_q,1>/|Omega|) * 1 has zero mean
            const double defect = div_against_basis[qd] - (c[qd] / area) * total_div;
            EXPECT_LE(std::abs(defect), 1e-10 * h1);
        }
    }
}

TEST(ProjectPdiv, StableAndOptimalInQuadratureNorm) {
    // P is the orthogonal projection onto V^n_div in the quadrature inner
    // product, so Pythagoras gives ||Pv|| <= ||v|| and ||v - Pv|| <= ||v - V||
    // for every V in the subspace.
    const Triangulation mesh = unit_square_mesh(3);
    const MixedSpace space = build_space(mesh, VelocityElement::MINI);
    const VectorEvaluator v = random_smooth_field(77);
    const DiscreteField pv = project_Pn_div(space, v);

    EXPECT_LE(lebesgue_norm(pv, 2.0), quad_l2(space, v) + 1e-10);

    const double dist = quad_l2_diff(space, v, pv);
    for (int trial = 0; trial < 100; ++trial) {
        const DiscreteField candidate =
            project_Pn_div(space, random_smooth_field(1000 + unsigned(trial)));
        EXPECT_LE(dist, quad_l2_diff(space, v, candidate) + 1e-10);
    }
}

TEST(ProjectQ, ConstantIsReproduced) {
    const Triangulation mesh = unit_square_mesh(2);
    for (VelocityElement e : {VelocityElement::MINI, VelocityElement::P2P0}) {
        SCOPED_TRACE(element_tag(e));
        const MixedSpace space = build_space(mesh, e);
        const DiscreteField p = project_Q(space, [](double, double) { return 3.25; });
        for (Eigen::Index i = 0; i < p.coefficients.size(); ++i) {
            EXPECT_NEAR(p.coefficients[i], 3.25, 1e-12);
        }
    }
}

TEST(ProjectQ, AffineFunctionIsReproducedByP1Pressure) {
    const Triangulation square = unit_square_mesh(2);
    const MixedSpace space = build_space(square, VelocityElement::MINI);
    const auto h = [](double x, double y) { return 0.3 + 1.7 * x - 0.9 * y; };
    const DiscreteField p = project_Q(space, h);
    const Triangulation& mesh = *space.mesh;
    for (std::size_t v = 0; v < mesh.vertex_count(); ++v) {
        EXPECT_NEAR(p.coefficients[Eigen::Index(v)],
                    h(mesh.vertices[v][0], mesh.vertices[v][1]), 1e-12);
    }
}

TEST(ProjectQ, StableInQuadratureNorm) {
    const Triangulation mesh = unit_square_mesh(3);
    const MixedSpace space = build_space(mesh, VelocityElement::P2P0);
    const auto h = [](double x, double y) { return std::sin(3.0 * x) * std::cos(2.0 * y); };
    const DiscreteField p = project_Q(space, h);
    double h_norm_sq = 0.0;
    for (std::size_t c = 0; c < space.cells(); ++c) {
        const CellQuadData data = cell_quad_data(space, c);
        for (Eigen::Index q = 0; q < data.weights.size(); ++q) {
            h_norm_sq += data.weights[q] * std::pow(h(data.points(q, 0), data.points(q, 1)), 2);
        }
    }
    EXPECT_LE(lebesgue_norm(p, 2.0), std::sqrt(h_norm_sq) + 1e-10);
}

// =============================================================================
// Discrete inf-sup constant
// =============================================================================

TEST(InfSup, MiniUniformlyBoundedAcrossLevels) {
    Triangulation mesh = unit_square_mesh(1);
    std::vector<double> beta;
    for (int level = 1; level <= 4; ++level) {
        const MixedSpace space = build_space(mesh, VelocityElement::MINI);
        beta.push_back(discrete_infsup(space));
        if (level < 4) mesh = refine_uniform(mesh);
    }
    const double lo = *std::min_element(beta.begin(), beta.end());
    const double hi = *std::max_element(beta.begin(), beta.end());
    EXPECT_GT(lo, 0.0);
    EXPECT_LT((hi - lo) / lo, 0.20) << "levels: " << beta[0] << " " << beta[1] << " "
                                    << beta[2] << " " << beta[3];
}

TEST(InfSup, EqualOrderPairDegeneratesUnderRefinement) {
    // P1-P1 is the classical unstable pair: its inf-sup constant must decay
    // toward zero as the mesh is refined (checkerboard pressure modes).
    Triangulation mesh = unit_square_mesh(1);
    std::vector<double> beta;
    for (int level = 1; level <= 4; ++level) {
        const MixedSpace space = build_space(mesh, VelocityElement::P1P1);
        beta.push_back(discrete_infsup(space));
        if (level < 4) mesh = refine_uniform(mesh);
    }
    for (std::size_t i = 1; i < beta.size(); ++i) EXPECT_LT(beta[i], beta[i - 1]);
    EXPECT_LT(beta.back(), 0.3 * beta.front())
        << "levels: " << beta[0] << " " << beta[1] << " " << beta[2] << " " << beta[3];
}

TEST(InfSup, SingleCellP2P0Positive) {
    const Triangulation mesh =
        make_triangulation({{0.0, 0.0}, {1.0, 0.0}, {0.0, 1.0}}, {{0, 1, 2}});
    const MixedSpace space = build_space(mesh, VelocityElement::P2P0);
    EXPECT_GT(discrete_infsup(space), 0.0);
}

// =============================================================================
// Norms and point evaluation
// =============================================================================

TEST(Norms, ZeroFieldIsZero) {
    const Triangulation mesh = unit_square_mesh(2);
    const MixedSpace space = build_space(mesh, VelocityElement::MINI);
    const DiscreteField u = zero_field(space, FieldKind::velocity);
    EXPECT_EQ(lebesgue_norm(u, 2.0), 0.0);
    EXPECT_EQ(sobolev_seminorm(u, 2.0), 0.0);
}

TEST(Norms, ConstantPressureOnUnitSquare) {
    const Triangulation mesh = unit_square_mesh(2);
    const MixedSpace space = build_space(mesh, VelocityElement::MINI);
    DiscreteField p = zero_field(space, FieldKind::pressure);
    p.coefficients.setOnes();
    EXPECT_NEAR(lebesgue_norm(p, 2.0), 1.0, 1e-14);
    EXPECT_NEAR(lebesgue_norm(p, 1.0), 1.0, 1e-14);
    EXPECT_NEAR(lebesgue_norm(p, std::numeric_limits<double>::infinity()), 1.0, 1e-14);
}

TEST(Norms, LinearVelocityFieldPins) {
    // u = (x, 0): ||u||_{L2}^2 = int x^2 = 1/3, ||grad u||_{L2} = 1.
    const Triangulation mesh = unit_square_mesh(2);
    for (VelocityElement e : {VelocityElement::MINI, VelocityElement::P2P0}) {
        SCOPED_TRACE(element_tag(e));
        const MixedSpace space = build_space(mesh, e);
        const DiscreteField u = nodal_velocity(
            space, [](double x, double) { return Eigen::Vector2d(x, 0.0); });
        EXPECT_NEAR(lebesgue_norm(u, 2.0), 1.0 / std::sqrt(3.0), 1e-14);
        EXPECT_NEAR(sobolev_seminorm(u, 2.0), 1.0, 1e-14);
    }
}

TEST(Norms, RejectsInvalidExponent) {
    const Triangulation mesh = unit_square_mesh(1);
    const MixedSpace space = build_space(mesh, VelocityElement::MINI);
    const DiscreteField u = zero_field(space, FieldKind::velocity);
    EXPECT_THROW(lebesgue_norm(u, 0.5), std::invalid_argument);
    DiscreteField p = zero_field(space, FieldKind::pressure);
    EXPECT_THROW(sobolev_seminorm(p, 2.0), std::invalid_argument);
}

TEST(Evaluation, GradientOfLinearFieldExact) {
    const Triangulation mesh = unit_square_mesh(2);
    const MixedSpace space = build_space(mesh, VelocityElement::P2P0);
    const DiscreteField u = nodal_velocity(
        space, [](double x, double y) { return Eigen::Vector2d(x + 2.0 * y, -3.0 * x); });
    Eigen::Matrix2d expected;
    expected << 1.0, 2.0, -3.0, 0.0;
    std::mt19937 rng(9);
    std::uniform_real_distribution<double> bary(0.05, 0.4);
    for (int trial = 0; trial < 10; ++trial) {
        const std::size_t cell = std::size_t(trial) % space.cells();
        const double xi = bary(rng), eta = bary(rng);
        const Eigen::Matrix2d g =
            evaluate_velocity_gradient(space, u.coefficients, cell, xi, eta);
        EXPECT_NEAR((g - expected).norm(), 0.0, 1e-13);
    }
}

// =============================================================================
// Conformity across interior edges
// =============================================================================

TEST(Conformity, VelocityContinuousAcrossInteriorEdges) {
    const Triangulation mesh = unit_square_mesh(2);
    for (VelocityElement e :
         {VelocityElement::MINI, VelocityElement::P2P0, VelocityElement::P1P1}) {
        SCOPED_TRACE(element_tag(e));
        const MixedSpace space = build_space(mesh, e);
        std::mt19937 rng(41);
        std::normal_distribution<double> gauss(0.0, 1.0);
        Eigen::VectorXd coeffs(Eigen::Index(space.velocity_dofs));
        for (Eigen::Index i = 0; i < coeffs.size(); ++i) coeffs[i] = gauss(rng);

        // Collect interior edges: vertex pairs shared by two cells.
        std::map<std::pair<std::size_t, std::size_t>, std::vector<std::size_t>> edge_cells;
        for (std::size_t c = 0; c < mesh.cell_count(); ++c) {
            for (int k = 0; k < 3; ++k) {
                std::size_t a = mesh.cells[c][k], b = mesh.cells[c][(k + 1) % 3];
                if (a > b) std::swap(a, b);
                edge_cells[{a, b}].push_back(c);
            }
        }
        int interior_edges = 0;
        for (const auto& [edge, cells] : edge_cells) {
            if (cells.size() != 2) continue;
            ++interior_edges;
            const auto& pa = mesh.vertices[edge.first];
            const auto& pb = mesh.vertices[edge.second];
            for (double t : {0.21, 0.5, 0.83}) {
                const double px = (1.0 - t) * pa[0] + t * pb[0];
                const double py = (1.0 - t) * pa[1] + t * pb[1];
                Eigen::Vector2d values[2];
                for (int side = 0; side < 2; ++side) {
                    const AffineMap map = reference_map(mesh, cells[side]);
                    const auto ref = map.apply_inverse(px, py);
                    values[side] =
                        evaluate_velocity(space, coeffs, cells[side], ref[0], ref[1]);
                }
                EXPECT_LE((values[0] - values[1]).norm(), 1e-12)
                    << "edge (" << edge.first << "," << edge.second << ") t=" << t;
            }
        }
        EXPECT_GT(interior_edges, 0);
    }
}

}  // namespace
