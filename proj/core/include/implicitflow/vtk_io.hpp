/// @file vtk_io.hpp
/// @brief Legacy VTK ASCII output of velocity and stress fields along a
///        simulated trajectory, one unstructured-grid file per dumped step.
///
/// The dialect is the stable text format every VTK-family reader understands:
/// POINTS / CELLS / CELL_TYPES, vertex velocity vectors as POINT_DATA, and two
/// CELL_DATA scalars holding the cell quadrature averages of the strain-rate
/// magnitude |Du| and the approximate-stress magnitude |S^k(Du)|. All numbers
/// are printed with 17 significant digits, so re-reading a file reproduces the
/// written values bit-exactly.

#pragma once

#include <Eigen/Dense>

#include <iosfwd>
#include <string>
#include <vector>

#include "implicitflow/scheme.hpp"

namespace implicitflow {

/// Write one nodal state as a legacy VTK ASCII unstructured grid. step_index
/// (0-based grid node) selects the time at which the stress approximation is
/// evaluated. Throws std::invalid_argument when the coefficient vector does not
/// match the setup's space or the index lies outside the grid.
void write_vtk_step(std::ostream& out, const ProblemSetup& setup, const Eigen::VectorXd& velocity,
                    int step_index);

/// Dump every stride-th state of a complete or partial trajectory, always
/// including the last available state, as "fields_<step>.vtk" files inside
/// directory (created on demand). stride >= 1. Returns the paths written, in
/// step order. I/O failures raise std::runtime_error naming the offending path.
std::vector<std::string> write_fields(const SimulationResult& run, const ProblemSetup& setup,
                                      const std::string& directory, int stride);

}  // namespace implicitflow
