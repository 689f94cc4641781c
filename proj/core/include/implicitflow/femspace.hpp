/// @file femspace.hpp
/// @brief Mixed velocity/pressure finite element pairs on triangulations: MINI
///        (P1 + cell bubble / continuous P1) and P2-P0, plus the intentionally
///        unstable equal-order P1-P1 pair used as a negative control in tests.
///        Provides DOF management, degree-5 triangle quadrature, the divergence
///        constraint matrix, L2 projections onto the discretely divergence-free
///        subspace and onto the pressure space, the discrete inf-sup constant,
///        and quadrature norms of discrete fields.
///
/// Velocity spaces carry homogeneous Dirichlet boundary conditions: coefficients
/// are stored for the full nodal basis (boundary entries fixed to zero) and all
/// solves run on the free-DOF subset. Spaces are immutable after construction.

#pragma once

#include "implicitflow/meshkit.hpp"

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

namespace implicitflow {

enum class VelocityElement { MINI, P2P0, P1P1 };

std::string element_name(VelocityElement element);
VelocityElement element_from_name(const std::string& name);

/// Quadrature rule on the reference simplex conv{(0,0),(1,0),(0,1)}.
struct QuadratureRule {
    Eigen::MatrixXd points;   ///< n x 2 reference coordinates
    Eigen::VectorXd weights;  ///< positive, sum = 1/2 (reference area)
    int degree = 0;           ///< exact for polynomials up to this total degree
};

/// Degree-5, 7-point symmetric rule (exact for the bubble-quadratic products).
QuadratureRule triangle_quadrature_deg5();

/// A mixed velocity/pressure space over a triangulation. The triangulation must
/// outlive the space. Scalar velocity nodes are numbered vertices-first; the two
/// Cartesian components of node j are the velocity DOFs 2j and 2j+1.
struct MixedSpace {
    const Triangulation* mesh = nullptr;
    VelocityElement element = VelocityElement::MINI;

    std::size_t scalar_nodes = 0;    ///< nodes of one velocity component
    std::size_t velocity_dofs = 0;   ///< = 2 * scalar_nodes
    std::size_t pressure_dofs = 0;

    /// Per-cell scalar velocity node ids (MINI: 3 vertices + bubble; P2P0: 3
    /// vertices + 3 edge midpoints in local edge order (0,1),(1,2),(2,0); P1P1:
    /// 3 vertices).
    std::vector<std::vector<std::size_t>> cell_velocity_nodes;
    /// Per-cell pressure DOF ids (P1 pressure: vertex ids; P0 pressure: cell id).
    std::vector<std::vector<std::size_t>> cell_pressure_dofs;

    std::vector<std::size_t> boundary_dofs;  ///< velocity DOFs clamped by the no-slip condition
    std::vector<std::size_t> free_dofs;      ///< complement of boundary_dofs, sorted
    std::vector<std::ptrdiff_t> full_to_free;  ///< -1 for clamped DOFs

    QuadratureRule quadrature;

    std::size_t cells() const { return mesh->cells.size(); }
};

/// Build a mixed space; throws std::invalid_argument on an unsupported element.
MixedSpace build_space(const Triangulation& mesh, VelocityElement element);

enum class FieldKind { velocity, pressure };

/// Coefficient vector over the velocity or pressure basis of a space.
struct DiscreteField {
    const MixedSpace* space = nullptr;
    FieldKind kind = FieldKind::velocity;
    Eigen::VectorXd coefficients;
};

DiscreteField zero_field(const MixedSpace& space, FieldKind kind);

/// Sparse divergence constraint B with B(q, v) = <div W_v, Q_q> over the full
/// velocity basis (rows: pressure DOFs, cols: velocity DOFs).
struct DivConstraintMatrix {
    Eigen::SparseMatrix<double> matrix;
};

DivConstraintMatrix assemble_div_matrix(const MixedSpace& space);

/// Velocity mass matrix <W_i, W_j> over the full velocity basis.
Eigen::SparseMatrix<double> assemble_velocity_mass(const MixedSpace& space);

/// Velocity H1 Gram matrix <W_i, W_j> + <grad W_i, grad W_j> (full basis).
Eigen::SparseMatrix<double> assemble_velocity_h1(const MixedSpace& space);

/// Pressure Gram matrix <Q_i, Q_j>.
Eigen::SparseMatrix<double> assemble_pressure_mass(const MixedSpace& space);

/// Integrals <Q_q, 1> of the pressure basis (the zero-mean constraint vector).
Eigen::VectorXd pressure_mean_vector(const MixedSpace& space);

using VectorEvaluator = std::function<Eigen::Vector2d(double x, double y)>;
using ScalarEvaluator = std::function<double(double x, double y)>;

/// L2 projection P^n_div onto the discretely divergence-free subspace of the
/// Dirichlet velocity space, computed from the saddle-point system
///   [M B^T; B 0] with one extra zero-mean Lagrange multiplier row.
/// Throws std::runtime_error when the saddle factorization fails (degenerate
/// pair without a discrete inf-sup constant).
DiscreteField project_Pn_div(const MixedSpace& space, const VectorEvaluator& v);
DiscreteField project_Pn_div(const MixedSpace& space, const DiscreteField& v);

/// L2 projection onto the pressure space.
DiscreteField project_Q(const MixedSpace& space, const ScalarEvaluator& h);

/// Discrete inf-sup constant: sqrt of the smallest positive eigenvalue of the
/// pressure Schur complement B K^{-1} B^T q = lambda M_p q, with K the H1 Gram of
/// the full (free-trace) velocity basis and M_p the pressure Gram. Eigenvalues
/// below 1e-10 of the largest are treated as spurious pressure modes; when every
/// eigenvalue is spurious the function returns 0 (distinguished outcome, no throw).
double discrete_infsup(const MixedSpace& space);

/// Quadrature L^p norm of a field; p = infinity takes the max over quadrature
/// points. Throws std::invalid_argument for p < 1.
double lebesgue_norm(const DiscreteField& field, double p);

/// Quadrature L^p norm of the gradient (Frobenius pointwise); velocity fields only.
double sobolev_seminorm(const DiscreteField& field, double p);

/// Point evaluation on a given cell at reference coordinates (xi, eta).
Eigen::Vector2d evaluate_velocity(const MixedSpace& space, const Eigen::VectorXd& coefficients,
                                  std::size_t cell, double xi, double eta);
Eigen::Matrix2d evaluate_velocity_gradient(const MixedSpace& space,
                                           const Eigen::VectorXd& coefficients, std::size_t cell,
                                           double xi, double eta);
double evaluate_pressure(const MixedSpace& space, const Eigen::VectorXd& coefficients,
                         std::size_t cell, double xi, double eta);

/// Per-cell quadrature tables in physical coordinates: scalar velocity basis
/// values, physical gradients, pressure basis values, physical weights and points.
struct CellQuadData {
    Eigen::MatrixXd phi;        ///< nq x nb velocity scalar basis values
    Eigen::MatrixXd dphi_dx;    ///< nq x nb
    Eigen::MatrixXd dphi_dy;    ///< nq x nb
    Eigen::MatrixXd psi;        ///< nq x np pressure basis values
    Eigen::VectorXd weights;    ///< physical quadrature weights, sum = cell area
    Eigen::MatrixXd points;     ///< nq x 2 physical coordinates
};

CellQuadData cell_quad_data(const MixedSpace& space, std::size_t cell);

/// Number of assembly threads: min(hardware, IMPLICITFLOW_THREADS if set).
/// Results are bitwise independent of the thread count (deterministic reduction).
unsigned assembly_thread_count();

/// Run fn(cell) for every cell index, in parallel chunks. fn must only write to
/// per-cell slots; the caller performs any reduction in cell-index order.
void parallel_for_cells(std::size_t cell_count, const std::function<void(std::size_t)>& fn);

}  // namespace implicitflow
