/// @file femspace.cpp
/// @brief Mixed finite element spaces: DOF maps, quadrature, assembly of the
///        divergence constraint and Gram matrices, saddle-point projections,
///        the discrete inf-sup constant, and quadrature norms.

#include "implicitflow/femspace.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SparseLU>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <map>
#include <set>
#include <stdexcept>
#include <thread>
#include <utility>

namespace implicitflow {

namespace {

using EdgeKey = std::pair<std::size_t, std::size_t>;

EdgeKey edge_key(std::size_t a, std::size_t b) { return {std::min(a, b), std::max(a, b)}; }

// ---------------------------------------------------------------------------
// Reference bases
// ---------------------------------------------------------------------------

std::size_t velocity_basis_size(VelocityElement e) {
    switch (e) {
        case VelocityElement::MINI: return 4;
        case VelocityElement::P2P0: return 6;
        case VelocityElement::P1P1: return 3;
    }
    return 0;
}

std::size_t pressure_basis_size(VelocityElement e) {
    return e == VelocityElement::P2P0 ? 1 : 3;
}

/// Scalar velocity basis and reference gradients at (xi, eta).
void velocity_basis_point(VelocityElement e, double xi, double eta, double* val, double* dxi,
                          double* deta) {
    const double l0 = 1.0 - xi - eta, l1 = xi, l2 = eta;
    switch (e) {
        case VelocityElement::P1P1:
            val[0] = l0; val[1] = l1; val[2] = l2;
            dxi[0] = -1; dxi[1] = 1; dxi[2] = 0;
            deta[0] = -1; deta[1] = 0; deta[2] = 1;
            return;
        case VelocityElement::MINI:
            val[0] = l0; val[1] = l1; val[2] = l2;
            dxi[0] = -1; dxi[1] = 1; dxi[2] = 0;
            deta[0] = -1; deta[1] = 0; deta[2] = 1;
            // cell bubble 27*l0*l1*l2, normalized to 1 at the centroid
            val[3] = 27.0 * l0 * l1 * l2;
            dxi[3] = 27.0 * (l1 * l2 * (-1.0) + l0 * l2);
            deta[3] = 27.0 * (l1 * l2 * (-1.0) + l0 * l1);
            return;
        case VelocityElement::P2P0:
            val[0] = l0 * (2.0 * l0 - 1.0);
            val[1] = l1 * (2.0 * l1 - 1.0);
            val[2] = l2 * (2.0 * l2 - 1.0);
            val[3] = 4.0 * l0 * l1;  // midpoint of edge (0,1)
            val[4] = 4.0 * l1 * l2;  // midpoint of edge (1,2)
            val[5] = 4.0 * l2 * l0;  // midpoint of edge (2,0)
            dxi[0] = 1.0 - 4.0 * l0; deta[0] = 1.0 - 4.0 * l0;
            dxi[1] = 4.0 * l1 - 1.0; deta[1] = 0.0;
            dxi[2] = 0.0;            deta[2] = 4.0 * l2 - 1.0;
            dxi[3] = 4.0 * (l0 - l1); deta[3] = -4.0 * l1;
            dxi[4] = 4.0 * l2;        deta[4] = 4.0 * l1;
            dxi[5] = -4.0 * l2;       deta[5] = 4.0 * (l0 - l2);
            return;
    }
}

void pressure_basis_point(VelocityElement e, double xi, double eta, double* val) {
    if (e == VelocityElement::P2P0) {
        val[0] = 1.0;
        return;
    }
    val[0] = 1.0 - xi - eta;
    val[1] = xi;
    val[2] = eta;
}

/// Velocity and pressure reference tables at the quadrature points of a rule.
struct RefTables {
    Eigen::MatrixXd val, dxi, deta;  // nq x nb
    Eigen::MatrixXd pval;            // nq x np
};

RefTables make_ref_tables(VelocityElement e, const QuadratureRule& quad) {
    RefTables t;
    const std::size_t nq = std::size_t(quad.points.rows());
    const std::size_t nb = velocity_basis_size(e);
    const std::size_t np = pressure_basis_size(e);
    t.val.resize(nq, nb);
    t.dxi.resize(nq, nb);
    t.deta.resize(nq, nb);
    t.pval.resize(nq, np);
    std::vector<double> v(nb), dx(nb), dy(nb), pv(np);
    for (std::size_t q = 0; q < nq; ++q) {
        velocity_basis_point(e, quad.points(q, 0), quad.points(q, 1), v.data(), dx.data(),
                             dy.data());
        pressure_basis_point(e, quad.points(q, 0), quad.points(q, 1), pv.data());
        for (std::size_t b = 0; b < nb; ++b) {
            t.val(q, b) = v[b];
            t.dxi(q, b) = dx[b];
            t.deta(q, b) = dy[b];
        }
        for (std::size_t p = 0; p < np; ++p) t.pval(q, p) = pv[p];
    }
    return t;
}

/// Reference tables for all elements on the shared degree-5 rule, built once
/// (thread-safe magic static; the parallel cell loops read them concurrently).
const RefTables& ref_tables(VelocityElement e, const QuadratureRule&) {
    static const RefTables tables[3] = {
        make_ref_tables(VelocityElement::MINI, triangle_quadrature_deg5()),
        make_ref_tables(VelocityElement::P2P0, triangle_quadrature_deg5()),
        make_ref_tables(VelocityElement::P1P1, triangle_quadrature_deg5()),
    };
    return tables[int(e)];
}

}  // namespace

// ---------------------------------------------------------------------------
// Elements and quadrature
// ---------------------------------------------------------------------------

std::string element_name(VelocityElement element) {
    switch (element) {
        case VelocityElement::MINI: return "mini";
        case VelocityElement::P2P0: return "p2p0";
        case VelocityElement::P1P1: return "p1p1";
    }
    return "unknown";
}

VelocityElement element_from_name(const std::string& name) {
    if (name == "mini") return VelocityElement::MINI;
    if (name == "p2p0") return VelocityElement::P2P0;
    if (name == "p1p1") return VelocityElement::P1P1;
    throw std::invalid_argument("element_from_name: unsupported element '" + name + "'");
}

QuadratureRule triangle_quadrature_deg5() {
    QuadratureRule rule;
    rule.degree = 5;
    rule.points.resize(7, 2);
    rule.weights.resize(7);
    const double s15 = std::sqrt(15.0);
    const double a = (6.0 - s15) / 21.0, wa = (155.0 - s15) / 1200.0;
    const double b = (6.0 + s15) / 21.0, wb = (155.0 + s15) / 1200.0;
    // Weights are normalized to the reference-simplex area 1/2.
    rule.points << 1.0 / 3.0, 1.0 / 3.0,
        a, a,
        1.0 - 2.0 * a, a,
        a, 1.0 - 2.0 * a,
        b, b,
        1.0 - 2.0 * b, b,
        b, 1.0 - 2.0 * b;
    rule.weights << 9.0 / 40.0, wa, wa, wa, wb, wb, wb;
    rule.weights *= 0.5;
    return rule;
}

// ---------------------------------------------------------------------------
// Space construction
// ---------------------------------------------------------------------------

MixedSpace build_space(const Triangulation& mesh, VelocityElement element) {
    mesh.validate();
    MixedSpace s;
    s.mesh = &mesh;
    s.element = element;
    s.quadrature = triangle_quadrature_deg5();

    const std::size_t nv = mesh.vertices.size();
    const std::size_t nc = mesh.cells.size();
    s.cell_velocity_nodes.resize(nc);
    s.cell_pressure_dofs.resize(nc);

    std::map<EdgeKey, std::size_t> edge_ids;  // P2 midpoint nodes
    if (element == VelocityElement::P2P0) {
        for (const auto& c : mesh.cells)
            for (int e = 0; e < 3; ++e) {
                const EdgeKey k = edge_key(c[e], c[(e + 1) % 3]);
                edge_ids.emplace(k, 0);
            }
        std::size_t next = nv;
        for (auto& kv : edge_ids) kv.second = next++;
        s.scalar_nodes = next;
    } else if (element == VelocityElement::MINI) {
        s.scalar_nodes = nv + nc;  // one bubble per cell
    } else {
        s.scalar_nodes = nv;
    }
    s.velocity_dofs = 2 * s.scalar_nodes;

    for (std::size_t c = 0; c < nc; ++c) {
        const auto& cell = mesh.cells[c];
        auto& nodes = s.cell_velocity_nodes[c];
        nodes = {cell[0], cell[1], cell[2]};
        if (element == VelocityElement::MINI) {
            nodes.push_back(nv + c);
        } else if (element == VelocityElement::P2P0) {
            nodes.push_back(edge_ids.at(edge_key(cell[0], cell[1])));
            nodes.push_back(edge_ids.at(edge_key(cell[1], cell[2])));
            nodes.push_back(edge_ids.at(edge_key(cell[2], cell[0])));
        }
    }

    if (element == VelocityElement::P2P0) {
        s.pressure_dofs = nc;
        for (std::size_t c = 0; c < nc; ++c) s.cell_pressure_dofs[c] = {c};
    } else {
        s.pressure_dofs = nv;
        for (std::size_t c = 0; c < nc; ++c) {
            const auto& cell = mesh.cells[c];
            s.cell_pressure_dofs[c] = {cell[0], cell[1], cell[2]};
        }
    }

    // Boundary scalar nodes: boundary vertices plus midpoints of boundary edges.
    std::set<std::size_t> boundary_nodes;
    for (const auto& be : mesh.boundary_edges) {
        boundary_nodes.insert(be.v0);
        boundary_nodes.insert(be.v1);
        if (element == VelocityElement::P2P0) boundary_nodes.insert(edge_ids.at(edge_key(be.v0, be.v1)));
    }
    for (std::size_t n : boundary_nodes) {
        s.boundary_dofs.push_back(2 * n);
        s.boundary_dofs.push_back(2 * n + 1);
    }
    std::sort(s.boundary_dofs.begin(), s.boundary_dofs.end());

    s.full_to_free.assign(s.velocity_dofs, -1);
    std::set<std::size_t> clamped(s.boundary_dofs.begin(), s.boundary_dofs.end());
    for (std::size_t d = 0; d < s.velocity_dofs; ++d)
        if (!clamped.count(d)) {
            s.full_to_free[d] = std::ptrdiff_t(s.free_dofs.size());
            s.free_dofs.push_back(d);
        }
    return s;
}

DiscreteField zero_field(const MixedSpace& space, FieldKind kind) {
    DiscreteField f;
    f.space = &space;
    f.kind = kind;
    f.coefficients =
        Eigen::VectorXd::Zero(kind == FieldKind::velocity ? space.velocity_dofs
                                                          : space.pressure_dofs);
    return f;
}

// ---------------------------------------------------------------------------
// Per-cell quadrature data
// ---------------------------------------------------------------------------

namespace {

Eigen::Matrix2d jacobian_of(const AffineMap& map) {
    Eigen::Matrix2d f;
    f << map.matrix[0][0], map.matrix[0][1], map.matrix[1][0], map.matrix[1][1];
    return f;
}

}  // namespace

CellQuadData cell_quad_data(const MixedSpace& space, std::size_t cell) {
    if (cell >= space.cells()) throw std::invalid_argument("cell_quad_data: cell out of range");
    const RefTables& ref = ref_tables(space.element, space.quadrature);
    const AffineMap map = reference_map(*space.mesh, cell);
    const Eigen::Matrix2d jinv_t = jacobian_of(map).inverse().transpose();

    CellQuadData d;
    d.phi = ref.val;
    d.psi = ref.pval;
    d.dphi_dx = jinv_t(0, 0) * ref.dxi + jinv_t(0, 1) * ref.deta;
    d.dphi_dy = jinv_t(1, 0) * ref.dxi + jinv_t(1, 1) * ref.deta;
    d.weights = std::abs(map.det) * space.quadrature.weights;
    const std::size_t nq = std::size_t(space.quadrature.points.rows());
    d.points.resize(nq, 2);
    for (std::size_t q = 0; q < nq; ++q) {
        const std::array<double, 2> x =
            map.apply(space.quadrature.points(Eigen::Index(q), 0),
                      space.quadrature.points(Eigen::Index(q), 1));
        d.points(Eigen::Index(q), 0) = x[0];
        d.points(Eigen::Index(q), 1) = x[1];
    }
    return d;
}

// ---------------------------------------------------------------------------
// Deterministic parallel cell loop
// ---------------------------------------------------------------------------

unsigned assembly_thread_count() {
    static const unsigned count = [] {
        unsigned hw = std::thread::hardware_concurrency();
        if (hw == 0) hw = 1;
        if (const char* env = std::getenv("IMPLICITFLOW_THREADS")) {
            const long requested = std::strtol(env, nullptr, 10);
            if (requested >= 1 && unsigned(requested) < hw) hw = unsigned(requested);
        }
        return hw;
    }();
    return count;
}

void parallel_for_cells(std::size_t cell_count, const std::function<void(std::size_t)>& fn) {
    const unsigned threads = assembly_thread_count();
    if (threads <= 1 || cell_count < 64) {
        for (std::size_t c = 0; c < cell_count; ++c) fn(c);
        return;
    }
    std::vector<std::thread> pool;
    const std::size_t chunk = (cell_count + threads - 1) / threads;
    for (unsigned t = 0; t < threads; ++t) {
        const std::size_t begin = std::min(cell_count, std::size_t(t) * chunk);
        const std::size_t end = std::min(cell_count, begin + chunk);
        if (begin == end) break;
        pool.emplace_back([&fn, begin, end] {
            for (std::size_t c = begin; c < end; ++c) fn(c);
        });
    }
    for (auto& th : pool) th.join();
}

// ---------------------------------------------------------------------------
// Assembly
// ---------------------------------------------------------------------------

namespace {

using Triplets = std::vector<Eigen::Triplet<double>>;

/// Assemble per-cell triplet blocks in parallel, then merge in cell-index order
/// so the resulting matrix is bitwise independent of the thread count.
template <typename CellFn>
Eigen::SparseMatrix<double> assemble_sparse(std::size_t rows, std::size_t cols,
                                            std::size_t cell_count, const CellFn& cell_fn) {
    std::vector<Triplets> local(cell_count);
    parallel_for_cells(cell_count, [&](std::size_t c) { cell_fn(c, local[c]); });
    Triplets merged;
    std::size_t total = 0;
    for (const auto& t : local) total += t.size();
    merged.reserve(total);
    for (const auto& t : local) merged.insert(merged.end(), t.begin(), t.end());
    Eigen::SparseMatrix<double> m{Eigen::Index(rows), Eigen::Index(cols)};
    m.setFromTriplets(merged.begin(), merged.end());
    return m;
}

}  // namespace

DivConstraintMatrix assemble_div_matrix(const MixedSpace& space) {
    const std::size_t nb = velocity_basis_size(space.element);
    const std::size_t np = pressure_basis_size(space.element);
    DivConstraintMatrix result;
    result.matrix = assemble_sparse(
        space.pressure_dofs, space.velocity_dofs, space.cells(),
        [&](std::size_t c, Triplets& out) {
            const CellQuadData d = cell_quad_data(space, c);
            const auto& nodes = space.cell_velocity_nodes[c];
            const auto& pdofs = space.cell_pressure_dofs[c];
            for (std::size_t p = 0; p < np; ++p)
                for (std::size_t b = 0; b < nb; ++b) {
                    double ex = 0.0, ey = 0.0;
                    for (Eigen::Index q = 0; q < d.weights.size(); ++q) {
                        ex += d.weights[q] * d.psi(q, p) * d.dphi_dx(q, b);
                        ey += d.weights[q] * d.psi(q, p) * d.dphi_dy(q, b);
                    }
                    out.emplace_back(int(pdofs[p]), int(2 * nodes[b]), ex);
                    out.emplace_back(int(pdofs[p]), int(2 * nodes[b] + 1), ey);
                }
        });
    return result;
}

namespace {

Eigen::SparseMatrix<double> assemble_velocity_gram(const MixedSpace& space, bool with_gradient) {
    const std::size_t nb = velocity_basis_size(space.element);
    return assemble_sparse(
        space.velocity_dofs, space.velocity_dofs, space.cells(),
        [&](std::size_t c, Triplets& out) {
            const CellQuadData d = cell_quad_data(space, c);
            const auto& nodes = space.cell_velocity_nodes[c];
            for (std::size_t a = 0; a < nb; ++a)
                for (std::size_t b = 0; b < nb; ++b) {
                    double m = 0.0;
                    for (Eigen::Index q = 0; q < d.weights.size(); ++q) {
                        double v = d.phi(q, a) * d.phi(q, b);
                        if (with_gradient)
                            v += d.dphi_dx(q, a) * d.dphi_dx(q, b) +
                                 d.dphi_dy(q, a) * d.dphi_dy(q, b);
                        m += d.weights[q] * v;
                    }
                    out.emplace_back(int(2 * nodes[a]), int(2 * nodes[b]), m);
                    out.emplace_back(int(2 * nodes[a] + 1), int(2 * nodes[b] + 1), m);
                }
        });
}

}  // namespace

Eigen::SparseMatrix<double> assemble_velocity_mass(const MixedSpace& space) {
    return assemble_velocity_gram(space, false);
}

Eigen::SparseMatrix<double> assemble_velocity_h1(const MixedSpace& space) {
    return assemble_velocity_gram(space, true);
}

Eigen::SparseMatrix<double> assemble_pressure_mass(const MixedSpace& space) {
    const std::size_t np = pressure_basis_size(space.element);
    return assemble_sparse(space.pressure_dofs, space.pressure_dofs, space.cells(),
                           [&](std::size_t c, Triplets& out) {
                               const CellQuadData d = cell_quad_data(space, c);
                               const auto& pdofs = space.cell_pressure_dofs[c];
                               for (std::size_t a = 0; a < np; ++a)
                                   for (std::size_t b = 0; b < np; ++b) {
                                       double m = 0.0;
                                       for (Eigen::Index q = 0; q < d.weights.size(); ++q)
                                           m += d.weights[q] * d.psi(q, a) * d.psi(q, b);
                                       out.emplace_back(int(pdofs[a]), int(pdofs[b]), m);
                                   }
                           });
}

Eigen::VectorXd pressure_mean_vector(const MixedSpace& space) {
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(space.pressure_dofs);
    const std::size_t np = pressure_basis_size(space.element);
    for (std::size_t c = 0; c < space.cells(); ++c) {
        const CellQuadData d = cell_quad_data(space, c);
        const auto& pdofs = space.cell_pressure_dofs[c];
        for (std::size_t p = 0; p < np; ++p) {
            double v = 0.0;
            for (Eigen::Index q = 0; q < d.weights.size(); ++q) v += d.weights[q] * d.psi(q, p);
            mean[pdofs[p]] += v;
        }
    }
    return mean;
}

// ---------------------------------------------------------------------------
// Projections
// ---------------------------------------------------------------------------

namespace {

/// Saddle system for P^n_div over free velocity DOFs with a zero-mean pressure
/// multiplier:  [M B^T 0; B 0 -c; 0 -c^T 0] [alpha; p; t] = [rhs; 0; 0].
struct SaddleSystem {
    Eigen::SparseMatrix<double> matrix;
    std::size_t n_free = 0;
    std::size_t n_pressure = 0;
};

SaddleSystem build_pdiv_saddle(const MixedSpace& space) {
    const Eigen::SparseMatrix<double> mass = assemble_velocity_mass(space);
    const Eigen::SparseMatrix<double> div = assemble_div_matrix(space).matrix;
    const Eigen::VectorXd mean = pressure_mean_vector(space);

    SaddleSystem sys;
    sys.n_free = space.free_dofs.size();
    sys.n_pressure = space.pressure_dofs;
    const std::size_t n = sys.n_free + sys.n_pressure + 1;

    Triplets trip;
    for (Eigen::Index col = 0; col < mass.outerSize(); ++col)
        for (Eigen::SparseMatrix<double>::InnerIterator it(mass, col); it; ++it) {
            const std::ptrdiff_t r = space.full_to_free[std::size_t(it.row())];
            const std::ptrdiff_t c = space.full_to_free[std::size_t(it.col())];
            if (r >= 0 && c >= 0) trip.emplace_back(int(r), int(c), it.value());
        }
    for (Eigen::Index col = 0; col < div.outerSize(); ++col)
        for (Eigen::SparseMatrix<double>::InnerIterator it(div, col); it; ++it) {
            const std::ptrdiff_t c = space.full_to_free[std::size_t(it.col())];
            if (c < 0) continue;
            const std::size_t prow = sys.n_free + std::size_t(it.row());
            trip.emplace_back(int(prow), int(c), it.value());
            trip.emplace_back(int(c), int(prow), it.value());
        }
    const std::size_t trow = sys.n_free + sys.n_pressure;
    for (std::size_t p = 0; p < sys.n_pressure; ++p) {
        trip.emplace_back(int(sys.n_free + p), int(trow), -mean[p]);
        trip.emplace_back(int(trow), int(sys.n_free + p), -mean[p]);
    }
    sys.matrix.resize(Eigen::Index(n), Eigen::Index(n));
    sys.matrix.setFromTriplets(trip.begin(), trip.end());
    return sys;
}

DiscreteField solve_pdiv(const MixedSpace& space, const Eigen::VectorXd& rhs_full) {
    const SaddleSystem sys = build_pdiv_saddle(space);
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(Eigen::Index(sys.n_free + sys.n_pressure + 1));
    for (std::size_t f = 0; f < sys.n_free; ++f) rhs[Eigen::Index(f)] = rhs_full[Eigen::Index(space.free_dofs[f])];

    Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
    lu.compute(sys.matrix);
    if (lu.info() != Eigen::Success)
        throw std::runtime_error(
            "project_Pn_div: saddle factorization failed (degenerate velocity/pressure pair)");
    const Eigen::VectorXd sol = lu.solve(rhs);

    DiscreteField out = zero_field(space, FieldKind::velocity);
    for (std::size_t f = 0; f < sys.n_free; ++f)
        out.coefficients[Eigen::Index(space.free_dofs[f])] = sol[Eigen::Index(f)];
    return out;
}

}  // namespace

DiscreteField project_Pn_div(const MixedSpace& space, const VectorEvaluator& v) {
    const std::size_t nb = velocity_basis_size(space.element);
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(space.velocity_dofs);
    for (std::size_t c = 0; c < space.cells(); ++c) {
        const CellQuadData d = cell_quad_data(space, c);
        const auto& nodes = space.cell_velocity_nodes[c];
        for (Eigen::Index q = 0; q < d.weights.size(); ++q) {
            const Eigen::Vector2d val = v(d.points(q, 0), d.points(q, 1));
            for (std::size_t b = 0; b < nb; ++b) {
                rhs[Eigen::Index(2 * nodes[b])] += d.weights[q] * d.phi(q, b) * val[0];
                rhs[Eigen::Index(2 * nodes[b] + 1)] += d.weights[q] * d.phi(q, b) * val[1];
            }
        }
    }
    return solve_pdiv(space, rhs);
}

DiscreteField project_Pn_div(const MixedSpace& space, const DiscreteField& v) {
    if (v.space != &space || v.kind != FieldKind::velocity)
        throw std::invalid_argument("project_Pn_div: field does not belong to this space");
    const Eigen::SparseMatrix<double> mass = assemble_velocity_mass(space);
    return solve_pdiv(space, mass * v.coefficients);
}

DiscreteField project_Q(const MixedSpace& space, const ScalarEvaluator& h) {
    const std::size_t np = pressure_basis_size(space.element);
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(space.pressure_dofs);
    for (std::size_t c = 0; c < space.cells(); ++c) {
        const CellQuadData d = cell_quad_data(space, c);
        const auto& pdofs = space.cell_pressure_dofs[c];
        for (Eigen::Index q = 0; q < d.weights.size(); ++q) {
            const double val = h(d.points(q, 0), d.points(q, 1));
            for (std::size_t p = 0; p < np; ++p)
                rhs[Eigen::Index(pdofs[p])] += d.weights[q] * d.psi(q, p) * val;
        }
    }
    Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt;
    ldlt.compute(assemble_pressure_mass(space));
    if (ldlt.info() != Eigen::Success)
        throw std::runtime_error("project_Q: pressure mass factorization failed");
    DiscreteField out = zero_field(space, FieldKind::pressure);
    out.coefficients = ldlt.solve(rhs);
    return out;
}

// ---------------------------------------------------------------------------
// Discrete inf-sup constant
// ---------------------------------------------------------------------------

double discrete_infsup(const MixedSpace& space) {
    // Schur complement S = B K^{-1} B^T over the free-trace velocity basis with
    // the full H1 Gram K; generalized spectrum against the pressure Gram. The
    // free-trace convention keeps single-cell P2-P0 nondegenerate (all of its
    // velocity nodes lie on the boundary).
    const Eigen::SparseMatrix<double> gram = assemble_velocity_h1(space);
    const Eigen::SparseMatrix<double> div = assemble_div_matrix(space).matrix;
    const Eigen::MatrixXd pressure_gram = Eigen::MatrixXd(assemble_pressure_mass(space));

    Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt;
    ldlt.compute(gram);
    if (ldlt.info() != Eigen::Success)
        throw std::runtime_error("discrete_infsup: H1 Gram factorization failed");
    const Eigen::MatrixXd bt = Eigen::MatrixXd(div).transpose();
    const Eigen::MatrixXd x = ldlt.solve(bt);
    Eigen::MatrixXd schur = bt.transpose() * x;
    schur = 0.5 * (schur + schur.transpose()).eval();

    Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXd> eig(schur, pressure_gram);
    if (eig.info() != Eigen::Success)
        throw std::runtime_error("discrete_infsup: eigensolve failed");
    const Eigen::VectorXd& lambda = eig.eigenvalues();  // ascending
    const double cutoff = 1e-10 * std::max(lambda[lambda.size() - 1], 0.0);
    for (Eigen::Index i = 0; i < lambda.size(); ++i)
        if (lambda[i] > cutoff) return std::sqrt(lambda[i]);
    return 0.0;  // every pressure mode is spurious -- distinguished outcome
}

// ---------------------------------------------------------------------------
// Norms and point evaluation
// ---------------------------------------------------------------------------

namespace {

void check_field(const DiscreteField& field) {
    if (field.space == nullptr) throw std::invalid_argument("field has no space");
    const std::size_t expect = field.kind == FieldKind::velocity
                                   ? field.space->velocity_dofs
                                   : field.space->pressure_dofs;
    if (std::size_t(field.coefficients.size()) != expect)
        throw std::invalid_argument("field coefficient length does not match its space");
}

template <typename PointNorm>
double quadrature_norm(const MixedSpace& space, double p, const PointNorm& point_norm) {
    if (!(p >= 1.0)) throw std::invalid_argument("norm exponent must satisfy p >= 1");
    const bool is_inf = std::isinf(p);
    double acc = 0.0, best = 0.0;
    for (std::size_t c = 0; c < space.cells(); ++c) {
        const CellQuadData d = cell_quad_data(space, c);
        for (Eigen::Index q = 0; q < d.weights.size(); ++q) {
            const double v = point_norm(c, d, q);
            if (is_inf)
                best = std::max(best, v);
            else
                acc += d.weights[q] * std::pow(v, p);
        }
    }
    return is_inf ? best : std::pow(acc, 1.0 / p);
}

}  // namespace

double lebesgue_norm(const DiscreteField& field, double p) {
    check_field(field);
    const MixedSpace& s = *field.space;
    if (field.kind == FieldKind::velocity) {
        const std::size_t nb = velocity_basis_size(s.element);
        return quadrature_norm(s, p, [&](std::size_t c, const CellQuadData& d, Eigen::Index q) {
            double ux = 0.0, uy = 0.0;
            const auto& nodes = s.cell_velocity_nodes[c];
            for (std::size_t b = 0; b < nb; ++b) {
                ux += field.coefficients[Eigen::Index(2 * nodes[b])] * d.phi(q, b);
                uy += field.coefficients[Eigen::Index(2 * nodes[b] + 1)] * d.phi(q, b);
            }
            return std::sqrt(ux * ux + uy * uy);
        });
    }
    const std::size_t np = pressure_basis_size(s.element);
    return quadrature_norm(s, p, [&](std::size_t c, const CellQuadData& d, Eigen::Index q) {
        double v = 0.0;
        const auto& pdofs = s.cell_pressure_dofs[c];
        for (std::size_t b = 0; b < np; ++b)
            v += field.coefficients[Eigen::Index(pdofs[b])] * d.psi(q, b);
        return std::abs(v);
    });
}

double sobolev_seminorm(const DiscreteField& field, double p) {
    check_field(field);
    if (field.kind != FieldKind::velocity)
        throw std::invalid_argument("sobolev_seminorm: velocity fields only");
    const MixedSpace& s = *field.space;
    const std::size_t nb = velocity_basis_size(s.element);
    return quadrature_norm(s, p, [&](std::size_t c, const CellQuadData& d, Eigen::Index q) {
        Eigen::Matrix2d g = Eigen::Matrix2d::Zero();
        const auto& nodes = s.cell_velocity_nodes[c];
        for (std::size_t b = 0; b < nb; ++b) {
            const double cx = field.coefficients[Eigen::Index(2 * nodes[b])];
            const double cy = field.coefficients[Eigen::Index(2 * nodes[b] + 1)];
            g(0, 0) += cx * d.dphi_dx(q, b);
            g(0, 1) += cx * d.dphi_dy(q, b);
            g(1, 0) += cy * d.dphi_dx(q, b);
            g(1, 1) += cy * d.dphi_dy(q, b);
        }
        return g.norm();
    });
}

Eigen::Vector2d evaluate_velocity(const MixedSpace& space, const Eigen::VectorXd& coefficients,
                                  std::size_t cell, double xi, double eta) {
    const std::size_t nb = velocity_basis_size(space.element);
    std::vector<double> val(nb), dx(nb), dy(nb);
    velocity_basis_point(space.element, xi, eta, val.data(), dx.data(), dy.data());
    const auto& nodes = space.cell_velocity_nodes.at(cell);
    Eigen::Vector2d u = Eigen::Vector2d::Zero();
    for (std::size_t b = 0; b < nb; ++b) {
        u[0] += coefficients[Eigen::Index(2 * nodes[b])] * val[b];
        u[1] += coefficients[Eigen::Index(2 * nodes[b] + 1)] * val[b];
    }
    return u;
}

Eigen::Matrix2d evaluate_velocity_gradient(const MixedSpace& space,
                                           const Eigen::VectorXd& coefficients, std::size_t cell,
                                           double xi, double eta) {
    const std::size_t nb = velocity_basis_size(space.element);
    std::vector<double> val(nb), dxi(nb), deta(nb);
    velocity_basis_point(space.element, xi, eta, val.data(), dxi.data(), deta.data());
    const AffineMap map = reference_map(*space.mesh, cell);
    const Eigen::Matrix2d jinv_t = jacobian_of(map).inverse().transpose();
    const auto& nodes = space.cell_velocity_nodes.at(cell);
    Eigen::Matrix2d g = Eigen::Matrix2d::Zero();
    for (std::size_t b = 0; b < nb; ++b) {
        const double gx = jinv_t(0, 0) * dxi[b] + jinv_t(0, 1) * deta[b];
        const double gy = jinv_t(1, 0) * dxi[b] + jinv_t(1, 1) * deta[b];
        const double cx = coefficients[Eigen::Index(2 * nodes[b])];
        const double cy = coefficients[Eigen::Index(2 * nodes[b] + 1)];
        g(0, 0) += cx * gx;
        g(0, 1) += cx * gy;
        g(1, 0) += cy * gx;
        g(1, 1) += cy * gy;
    }
    return g;
}

double evaluate_pressure(const MixedSpace& space, const Eigen::VectorXd& coefficients,
                         std::size_t cell, double xi, double eta) {
    const std::size_t np = pressure_basis_size(space.element);
    std::vector<double> val(np);
    pressure_basis_point(space.element, xi, eta, val.data());
    const auto& pdofs = space.cell_pressure_dofs.at(cell);
    double v = 0.0;
    for (std::size_t p = 0; p < np; ++p) v += coefficients[Eigen::Index(pdofs[p])] * val[p];
    return v;
}

}  // namespace implicitflow
