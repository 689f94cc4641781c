/// @file meshkit.cpp
/// @brief Triangulation construction, refinement, reference maps, and mesh file I/O.

#include "implicitflow/meshkit.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace implicitflow {

namespace {

double signed_area(const std::array<double, 2>& a, const std::array<double, 2>& b,
                   const std::array<double, 2>& c) {
    return 0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]));
}

double distance(const std::array<double, 2>& a, const std::array<double, 2>& b) {
    return std::hypot(b[0] - a[0], b[1] - a[1]);
}

using EdgeKey = std::pair<std::size_t, std::size_t>;

EdgeKey edge_key(std::size_t a, std::size_t b) { return a < b ? EdgeKey{a, b} : EdgeKey{b, a}; }

}  // namespace

double Triangulation::cell_area(std::size_t cell_index) const {
    const auto& c = cells.at(cell_index);
    return signed_area(vertices[c[0]], vertices[c[1]], vertices[c[2]]);
}

double Triangulation::cell_diameter(std::size_t cell_index) const {
    const auto& c = cells.at(cell_index);
    const double ab = distance(vertices[c[0]], vertices[c[1]]);
    const double bc = distance(vertices[c[1]], vertices[c[2]]);
    const double ca = distance(vertices[c[2]], vertices[c[0]]);
    return std::max({ab, bc, ca});
}

double Triangulation::mesh_size() const {
    double h = 0.0;
    for (std::size_t t = 0; t < cells.size(); ++t) h = std::max(h, cell_diameter(t));
    return h;
}

std::size_t Triangulation::edge_count() const {
    std::map<EdgeKey, int> edges;
    for (const auto& c : cells)
        for (int e = 0; e < 3; ++e) edges[edge_key(c[e], c[(e + 1) % 3])]++;
    return edges.size();
}

void Triangulation::validate() const {
    if (dim != 2) throw std::runtime_error("meshkit: only dim = 2 is supported");
    if (cells.empty()) throw std::runtime_error("meshkit: mesh has no cells");

    double total_area = 0.0;
    for (std::size_t t = 0; t < cells.size(); ++t) {
        for (std::size_t v : cells[t])
            if (v >= vertices.size()) throw std::runtime_error("meshkit: cell vertex index out of range");
        const double a = cell_area(t);
        if (!(a > 0.0)) throw std::runtime_error("meshkit: cell without positive signed area");
        total_area += a;
    }

    // Edge incidence: interior edges must be shared by exactly two cells, boundary
    // edges by one, and the stored boundary list must be exactly the multiplicity-one set.
    std::map<EdgeKey, int> incidence;
    for (const auto& c : cells)
        for (int e = 0; e < 3; ++e) incidence[edge_key(c[e], c[(e + 1) % 3])]++;
    for (const auto& [edge, count] : incidence)
        if (count > 2) throw std::runtime_error("meshkit: edge shared by more than two cells");
    std::map<EdgeKey, int> boundary_seen;
    for (const auto& be : boundary_edges) boundary_seen[edge_key(be.v0, be.v1)]++;
    for (const auto& [edge, count] : incidence) {
        const bool on_boundary = boundary_seen.count(edge) > 0;
        if (count == 1 && !on_boundary)
            throw std::runtime_error("meshkit: single-cell edge missing from boundary list");
        if (count == 2 && on_boundary)
            throw std::runtime_error("meshkit: interior edge listed as boundary");
    }
    if (boundary_seen.size() != boundary_edges.size())
        throw std::runtime_error("meshkit: duplicate boundary edge");

    // The cells tile the domain: compare against the shoelace area of the oriented
    // boundary polygon.
    double boundary_area = 0.0;
    for (const auto& be : boundary_edges) {
        const auto& p0 = vertices[be.v0];
        const auto& p1 = vertices[be.v1];
        boundary_area += 0.5 * (p0[0] * p1[1] - p1[0] * p0[1]);
    }
    if (std::abs(total_area - boundary_area) > 1e-12 * std::max(1.0, total_area))
        throw std::runtime_error("meshkit: cell areas do not sum to the domain area");
}

Triangulation unit_square_mesh(std::size_t n_divisions) {
    if (n_divisions == 0)
        throw std::invalid_argument("unit_square_mesh: n_divisions must be at least 1");
    const std::size_t n = n_divisions;
    Triangulation mesh;
    mesh.vertices.reserve((n + 1) * (n + 1));
    for (std::size_t j = 0; j <= n; ++j)
        for (std::size_t i = 0; i <= n; ++i)
            mesh.vertices.push_back({double(i) / double(n), double(j) / double(n)});

    const auto vid = [n](std::size_t i, std::size_t j) { return j * (n + 1) + i; };

    mesh.cells.reserve(2 * n * n);
    for (std::size_t j = 0; j < n; ++j) {
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t v00 = vid(i, j), v10 = vid(i + 1, j);
            const std::size_t v01 = vid(i, j + 1), v11 = vid(i + 1, j + 1);
            if ((i + j) % 2 == 0) {
                // diagonal from lower-left to upper-right
                mesh.cells.push_back({v00, v10, v11});
                mesh.cells.push_back({v00, v11, v01});
            } else {
                // diagonal from lower-right to upper-left
                mesh.cells.push_back({v00, v10, v01});
                mesh.cells.push_back({v10, v11, v01});
            }
        }
    }

    // Boundary edges oriented counterclockwise around the square, tag 1.
    for (std::size_t i = 0; i < n; ++i) mesh.boundary_edges.push_back({vid(i, 0), vid(i + 1, 0), 1});
    for (std::size_t j = 0; j < n; ++j) mesh.boundary_edges.push_back({vid(n, j), vid(n, j + 1), 1});
    for (std::size_t i = n; i > 0; --i) mesh.boundary_edges.push_back({vid(i, n), vid(i - 1, n), 1});
    for (std::size_t j = n; j > 0; --j) mesh.boundary_edges.push_back({vid(0, j), vid(0, j - 1), 1});

    mesh.validate();
    return mesh;
}

Triangulation make_triangulation(std::vector<std::array<double, 2>> vertices,
                                 std::vector<std::array<std::size_t, 3>> cells,
                                 std::vector<BoundaryEdge> boundary) {
    Triangulation mesh;
    mesh.vertices = std::move(vertices);
    mesh.cells = std::move(cells);

    // Enforce counterclockwise orientation.
    for (auto& c : mesh.cells) {
        const double a = signed_area(mesh.vertices.at(c[0]), mesh.vertices.at(c[1]),
                                     mesh.vertices.at(c[2]));
        if (a == 0.0) throw std::invalid_argument("make_triangulation: degenerate cell");
        if (a < 0.0) std::swap(c[1], c[2]);
    }

    if (!boundary.empty()) {
        mesh.boundary_edges = std::move(boundary);
    } else {
        // Deduce the boundary: edges referenced by exactly one cell, oriented as the
        // owning cell traverses them (counterclockwise around the domain).
        std::map<EdgeKey, int> incidence;
        for (const auto& c : mesh.cells)
            for (int e = 0; e < 3; ++e) incidence[edge_key(c[e], c[(e + 1) % 3])]++;
        for (const auto& c : mesh.cells) {
            for (int e = 0; e < 3; ++e) {
                const std::size_t a = c[e], b = c[(e + 1) % 3];
                if (incidence[edge_key(a, b)] == 1) mesh.boundary_edges.push_back({a, b, 1});
            }
        }
    }

    mesh.validate();
    return mesh;
}

Triangulation refine_uniform(const Triangulation& mesh) {
    mesh.validate();
    Triangulation fine;
    fine.dim = mesh.dim;
    fine.level = mesh.level + 1;
    fine.vertices = mesh.vertices;

    std::map<EdgeKey, std::size_t> midpoint;
    const auto midpoint_of = [&](std::size_t a, std::size_t b) {
        const EdgeKey key = edge_key(a, b);
        const auto found = midpoint.find(key);
        if (found != midpoint.end()) return found->second;
        const std::size_t idx = fine.vertices.size();
        fine.vertices.push_back({0.5 * (mesh.vertices[a][0] + mesh.vertices[b][0]),
                                 0.5 * (mesh.vertices[a][1] + mesh.vertices[b][1])});
        midpoint.emplace(key, idx);
        return idx;
    };

    fine.cells.reserve(4 * mesh.cells.size());
    fine.parent_cell.reserve(4 * mesh.cells.size());
    for (std::size_t t = 0; t < mesh.cells.size(); ++t) {
        const auto& c = mesh.cells[t];
        const std::size_t mab = midpoint_of(c[0], c[1]);
        const std::size_t mbc = midpoint_of(c[1], c[2]);
        const std::size_t mca = midpoint_of(c[2], c[0]);
        fine.cells.push_back({c[0], mab, mca});
        fine.cells.push_back({mab, c[1], mbc});
        fine.cells.push_back({mca, mbc, c[2]});
        fine.cells.push_back({mab, mbc, mca});
        for (int child = 0; child < 4; ++child) fine.parent_cell.push_back(t);
    }

    for (const auto& be : mesh.boundary_edges) {
        const std::size_t m = midpoint.at(edge_key(be.v0, be.v1));
        fine.boundary_edges.push_back({be.v0, m, be.tag});
        fine.boundary_edges.push_back({m, be.v1, be.tag});
    }

    fine.validate();
    return fine;
}

AffineMap reference_map(const Triangulation& mesh, std::size_t cell_index) {
    if (cell_index >= mesh.cells.size())
        throw std::out_of_range("reference_map: cell index out of range");
    const auto& c = mesh.cells[cell_index];
    const auto& p0 = mesh.vertices[c[0]];
    const auto& p1 = mesh.vertices[c[1]];
    const auto& p2 = mesh.vertices[c[2]];
    AffineMap map;
    map.matrix = {{{p1[0] - p0[0], p2[0] - p0[0]}, {p1[1] - p0[1], p2[1] - p0[1]}}};
    map.offset = {p0[0], p0[1]};
    map.det = map.matrix[0][0] * map.matrix[1][1] - map.matrix[0][1] * map.matrix[1][0];
    return map;
}

double shape_regularity(const Triangulation& mesh) {
    double worst = 0.0;
    for (std::size_t t = 0; t < mesh.cells.size(); ++t) {
        const auto& c = mesh.cells[t];
        const double a = distance(mesh.vertices[c[0]], mesh.vertices[c[1]]);
        const double b = distance(mesh.vertices[c[1]], mesh.vertices[c[2]]);
        const double cc = distance(mesh.vertices[c[2]], mesh.vertices[c[0]]);
        const double area = mesh.cell_area(t);
        const double h = std::max({a, b, cc});
        if (!(area > 1e-14 * h * h))
            throw std::runtime_error("shape_regularity: degenerate cell");
        // Inscribed-ball diameter rho = 2 * inradius = 4 * area / perimeter.
        const double rho = 4.0 * area / (a + b + cc);
        worst = std::max(worst, h / rho);
    }
    return worst;
}

// ---------------------------------------------------------------------------
// ASCII mesh format
// ---------------------------------------------------------------------------

namespace {

/// Strip comments and return the next non-empty whitespace-token stream line.
bool next_tokens(std::istream& in, std::istringstream& tokens) {
    std::string line;
    while (std::getline(in, line)) {
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        std::istringstream probe(line);
        std::string word;
        if (probe >> word) {
            tokens = std::istringstream(line);
            return true;
        }
    }
    return false;
}

}  // namespace

Triangulation read_mesh(std::istream& in) {
    std::istringstream tokens;
    std::string keyword;

    if (!next_tokens(in, tokens) || !(tokens >> keyword) || keyword != "mesh")
        throw std::runtime_error("read_mesh: expected 'mesh 2' header");
    int dim = 0;
    if (!(tokens >> dim) || dim != 2) throw std::runtime_error("read_mesh: only 'mesh 2' is supported");

    if (!next_tokens(in, tokens) || !(tokens >> keyword) || keyword != "vertices")
        throw std::runtime_error("read_mesh: expected 'vertices N'");
    std::size_t nv = 0;
    tokens >> nv;
    std::vector<std::array<double, 2>> vertices(nv);
    for (std::size_t i = 0; i < nv; ++i) {
        if (!next_tokens(in, tokens) || !(tokens >> vertices[i][0] >> vertices[i][1]))
            throw std::runtime_error("read_mesh: malformed vertex line");
    }

    if (!next_tokens(in, tokens) || !(tokens >> keyword) || keyword != "cells")
        throw std::runtime_error("read_mesh: expected 'cells M'");
    std::size_t nc = 0;
    tokens >> nc;
    std::vector<std::array<std::size_t, 3>> cells(nc);
    for (std::size_t i = 0; i < nc; ++i) {
        if (!next_tokens(in, tokens) || !(tokens >> cells[i][0] >> cells[i][1] >> cells[i][2]))
            throw std::runtime_error("read_mesh: malformed cell line");
    }

    std::vector<BoundaryEdge> boundary;
    if (next_tokens(in, tokens) && (tokens >> keyword) && keyword == "boundary") {
        std::size_t nb = 0;
        tokens >> nb;
        boundary.resize(nb);
        for (std::size_t i = 0; i < nb; ++i) {
            if (!next_tokens(in, tokens) ||
                !(tokens >> boundary[i].v0 >> boundary[i].v1 >> boundary[i].tag))
                throw std::runtime_error("read_mesh: malformed boundary line");
        }
    }

    return make_triangulation(std::move(vertices), std::move(cells), std::move(boundary));
}

Triangulation read_mesh_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("read_mesh_file: cannot open '" + path + "'");
    return read_mesh(in);
}

void write_mesh(std::ostream& out, const Triangulation& mesh) {
    out << "mesh 2\n";
    out << "vertices " << mesh.vertices.size() << "\n";
    char buf[80];
    for (const auto& v : mesh.vertices) {
        std::snprintf(buf, sizeof buf, "%.17g %.17g\n", v[0], v[1]);
        out << buf;
    }
    out << "cells " << mesh.cells.size() << "\n";
    for (const auto& c : mesh.cells) out << c[0] << " " << c[1] << " " << c[2] << "\n";
    out << "boundary " << mesh.boundary_edges.size() << "\n";
    for (const auto& be : mesh.boundary_edges)
        out << be.v0 << " " << be.v1 << " " << be.tag << "\n";
}

void write_mesh_file(const std::string& path, const Triangulation& mesh) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("write_mesh_file: cannot open '" + path + "'");
    write_mesh(out, mesh);
    if (!out) throw std::runtime_error("write_mesh_file: write failed for '" + path + "'");
}

}  // namespace implicitflow
