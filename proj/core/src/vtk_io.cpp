/// @file vtk_io.cpp
/// @brief Legacy VTK ASCII writer for velocity/stress field dumps.

#include "implicitflow/vtk_io.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "implicitflow/femspace.hpp"
#include "implicitflow/meshkit.hpp"
#include "implicitflow/rheology.hpp"

namespace implicitflow {
namespace {

std::string fmt17(double value) {
    char buffer[40];
    std::snprintf(buffer, sizeof(buffer), "%.17g", value);
    return buffer;
}

std::string step_file_name(int step) {
    char buffer[32];
    std::snprintf(buffer, sizeof(buffer), "fields_%06d.vtk", step);
    return buffer;
}

}  // namespace

void write_vtk_step(std::ostream& out, const ProblemSetup& setup, const Eigen::VectorXd& velocity,
                    int step_index) {
    if (setup.space == nullptr) throw std::invalid_argument("write_vtk_step: setup has no space");
    const MixedSpace& space = *setup.space;
    const Triangulation& mesh = *space.mesh;
    if (velocity.size() != Eigen::Index(space.velocity_dofs))
        throw std::invalid_argument("write_vtk_step: coefficient vector does not match the space");
    if (step_index < 0 || step_index > setup.grid.l)
        throw std::invalid_argument("write_vtk_step: step index outside the time grid");
    const double t = setup.grid.nodes[std::size_t(step_index)];

    out << "# vtk DataFile Version 3.0\n";
    out << "implicitflow step " << step_index << ", t = " << fmt17(t) << "\n";
    out << "ASCII\n";
    out << "DATASET UNSTRUCTURED_GRID\n";

    const std::size_t n_vertices = mesh.vertices.size();
    out << "POINTS " << n_vertices << " double\n";
    for (const auto& vertex : mesh.vertices)
        out << fmt17(vertex[0]) << " " << fmt17(vertex[1]) << " 0\n";

    const std::size_t n_cells = mesh.cells.size();
    out << "CELLS " << n_cells << " " << 4 * n_cells << "\n";
    for (const auto& cell : mesh.cells)
        out << "3 " << cell[0] << " " << cell[1] << " " << cell[2] << "\n";
    out << "CELL_TYPES " << n_cells << "\n";
    for (std::size_t c = 0; c < n_cells; ++c) out << "5\n";

    // Vertex values: scalar nodes are numbered vertices-first for every shipped
    // element, and the extra (bubble / edge) basis functions vanish at vertices,
    // so the vertex coefficients are the vertex values.
    out << "POINT_DATA " << n_vertices << "\n";
    out << "VECTORS velocity double\n";
    for (std::size_t v = 0; v < n_vertices; ++v)
        out << fmt17(velocity[Eigen::Index(2 * v)]) << " " << fmt17(velocity[Eigen::Index(2 * v + 1)])
            << " 0\n";

    std::vector<double> rate_magnitude(n_cells, 0.0);
    std::vector<double> stress_magnitude(n_cells, 0.0);
    parallel_for_cells(n_cells, [&](std::size_t c) {
        const CellQuadData qd = cell_quad_data(space, c);
        const auto& nodes = space.cell_velocity_nodes[c];
        double area = 0.0;
        double rate = 0.0;
        double stress = 0.0;
        for (Eigen::Index p = 0; p < qd.weights.size(); ++p) {
            Eigen::Matrix2d G = Eigen::Matrix2d::Zero();
            for (std::size_t a = 0; a < nodes.size(); ++a) {
                const double vx = velocity[Eigen::Index(2 * nodes[a])];
                const double vy = velocity[Eigen::Index(2 * nodes[a] + 1)];
                const double dx = qd.dphi_dx(p, Eigen::Index(a));
                const double dy = qd.dphi_dy(p, Eigen::Index(a));
                G(0, 0) += vx * dx;
                G(0, 1) += vx * dy;
                G(1, 0) += vy * dx;
                G(1, 1) += vy * dy;
            }
            const Eigen::Matrix2d D = 0.5 * (G + G.transpose());
            const SpaceTimePoint z{t, qd.points(p, 0), qd.points(p, 1)};
            const double w = qd.weights[p];
            area += w;
            rate += w * D.norm();
            stress += w * eval_approx(setup.approx, D, z).norm();
        }
        rate_magnitude[c] = rate / area;
        stress_magnitude[c] = stress / area;
    });

    out << "CELL_DATA " << n_cells << "\n";
    out << "SCALARS rate_magnitude double 1\n";
    out << "LOOKUP_TABLE default\n";
    for (std::size_t c = 0; c < n_cells; ++c) out << fmt17(rate_magnitude[c]) << "\n";
    out << "SCALARS stress_magnitude double 1\n";
    out << "LOOKUP_TABLE default\n";
    for (std::size_t c = 0; c < n_cells; ++c) out << fmt17(stress_magnitude[c]) << "\n";
}

std::vector<std::string> write_fields(const SimulationResult& run, const ProblemSetup& setup,
                                      const std::string& directory, int stride) {
    if (stride < 1) throw std::invalid_argument("write_fields: stride must be at least 1");
    if (run.velocity.empty()) throw std::invalid_argument("write_fields: trajectory is empty");

    std::error_code ec;
    std::filesystem::create_directories(directory, ec);
    if (ec) throw std::runtime_error("cannot create output directory '" + directory + "'");

    std::vector<std::string> paths;
    const int last = int(run.velocity.size()) - 1;
    for (int step = 0; step <= last; ++step) {
        if (step % stride != 0 && step != last) continue;
        const std::string path = (std::filesystem::path(directory) / step_file_name(step)).string();
        std::ofstream out(path, std::ios::binary);
        if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
        write_vtk_step(out, setup, run.velocity[std::size_t(step)], step);
        out.flush();
        if (!out) throw std::runtime_error("write failed for '" + path + "'");
        paths.push_back(path);
    }
    return paths;
}

}  // namespace implicitflow
