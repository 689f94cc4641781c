/// @file meshkit.hpp
/// @brief Simplicial triangulations of 2D polygonal domains: structured unit-square
///        meshes, uniform (red) refinement, affine reference maps, shape-regularity
///        metrics, and the ASCII mesh file format.
///
/// Meshes are immutable after construction; refinement returns a new mesh that keeps
/// a parent-cell index so nested families support exact cross-level point location.
/// All cells are stored with counterclockwise vertex order (positive signed area),
/// enforced at construction.

#pragma once

#include <array>
#include <cstddef>
#include <iosfwd>
#include <string>
#include <vector>

namespace implicitflow {

/// Affine map x = matrix * xref + offset from the reference simplex conv{0, e1, e2}
/// onto a physical cell. `det` is the Jacobian determinant (= 2 * cell area for a
/// counterclockwise cell).
struct AffineMap {
    std::array<std::array<double, 2>, 2> matrix;  ///< column j = image of e_j minus offset
    std::array<double, 2> offset;                 ///< image of the reference origin
    double det;                                   ///< Jacobian determinant, nonzero

    /// Map a reference point to physical coordinates.
    std::array<double, 2> apply(double xi, double eta) const {
        return {matrix[0][0] * xi + matrix[0][1] * eta + offset[0],
                matrix[1][0] * xi + matrix[1][1] * eta + offset[1]};
    }

    /// Map a physical point back to reference coordinates.
    std::array<double, 2> apply_inverse(double x, double y) const {
        const double rx = x - offset[0], ry = y - offset[1];
        return {(matrix[1][1] * rx - matrix[0][1] * ry) / det,
                (-matrix[1][0] * rx + matrix[0][0] * ry) / det};
    }
};

/// A boundary edge (vertex pair) with an integer tag.
struct BoundaryEdge {
    std::size_t v0, v1;
    int tag;
};

/// Immutable simplicial triangulation of a 2D polygonal domain.
///
/// Invariants (validated by `validate()`):
///  - every cell has positive signed area (counterclockwise orientation);
///  - cells tile the domain: sum of cell areas equals the domain area;
///  - every interior edge is shared by exactly two cells, every boundary edge by one;
///  - a single shape-regularity constant bounds h_K / rho_K across refinement levels.
struct Triangulation {
    int dim = 2;                                       ///< fixed to 2 in this implementation
    std::vector<std::array<double, 2>> vertices;       ///< coordinates
    std::vector<std::array<std::size_t, 3>> cells;     ///< vertex index triples, CCW
    std::vector<BoundaryEdge> boundary_edges;          ///< edges on the domain boundary
    int level = 0;                                     ///< refinement counter
    std::vector<std::size_t> parent_cell;              ///< per-cell parent index (empty at level 0)

    std::size_t vertex_count() const { return vertices.size(); }
    std::size_t cell_count() const { return cells.size(); }

    /// Signed area of a cell (positive for the enforced CCW orientation).
    double cell_area(std::size_t cell_index) const;

    /// Diameter h_K (longest edge) of a cell.
    double cell_diameter(std::size_t cell_index) const;

    /// Largest mesh size h = max over cells of h_K.
    double mesh_size() const;

    /// Count of distinct (undirected) edges.
    std::size_t edge_count() const;

    /// Throws std::runtime_error if a structural invariant fails.
    void validate() const;
};

/// Structured crisscross mesh of the unit square [0,1]^2 with 2*n^2 congruent right
/// isosceles triangles ((n+1)^2 vertices); square (i,j) is split along the diagonal
/// whose direction alternates in a checkerboard pattern. Throws std::invalid_argument
/// for n_divisions = 0.
Triangulation unit_square_mesh(std::size_t n_divisions);

/// Build a mesh from explicit vertex/cell lists (orientation fixed up to CCW, boundary
/// edges deduced and tagged 1 unless provided). Used for single-cell test meshes and
/// the file reader.
Triangulation make_triangulation(std::vector<std::array<double, 2>> vertices,
                                 std::vector<std::array<std::size_t, 3>> cells,
                                 std::vector<BoundaryEdge> boundary = {});

/// Uniform red refinement: each triangle is split into 4 congruent children through
/// its edge midpoints. Halves every cell diameter exactly and preserves the
/// shape-regularity ratio of each cell family.
Triangulation refine_uniform(const Triangulation& mesh);

/// Affine map of cell `cell_index` sending the reference vertices (0,0), (1,0), (0,1)
/// to the cell's stored vertices in order. Throws std::out_of_range on a bad index.
AffineMap reference_map(const Triangulation& mesh, std::size_t cell_index);

/// max over cells of h_K / rho_K, where rho_K is the diameter of the largest inscribed
/// ball (twice the inradius). Throws std::runtime_error on a degenerate cell.
double shape_regularity(const Triangulation& mesh);

/// ASCII mesh format:
///   mesh 2
///   vertices N      (N lines: x y)
///   cells M         (M lines: i j k)
///   boundary B      (B lines: i j tag)
/// Whitespace-separated; `#` starts a comment anywhere on a line.
Triangulation read_mesh(std::istream& in);
Triangulation read_mesh_file(const std::string& path);
void write_mesh(std::ostream& out, const Triangulation& mesh);
void write_mesh_file(const std::string& path, const Triangulation& mesh);

}  // namespace implicitflow
