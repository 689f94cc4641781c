/// @file config.hpp
/// @brief Plain-text run configuration: a sectioned key-value grammar, a parser
///        that reports every violation at once, a canonical serializer whose
///        output re-parses to the same document, and instantiation of a validated
///        configuration into solver-ready mesh/space/setup objects.
///
/// Grammar: `[section]` headers, `key = value` lines, `#` starts a comment, no
/// nesting. Sections: [domain], [time], [model], [regularization], [forcing],
/// [initial], [solver], [output]. Required keys are [time] T and l, [model] model
/// and mu, plus tau_y for yield-stress models and q for power-law families; every
/// other key has a default. Unknown sections or keys are rejected with a
/// nearest-name suggestion, and numeric ranges are checked (q > 1, l >= 1,
/// m >= 1 or inf, k >= k_0 for affine interpolation).

#pragma once

#include <limits>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "implicitflow/femspace.hpp"
#include "implicitflow/meshkit.hpp"
#include "implicitflow/rheology.hpp"
#include "implicitflow/scheme.hpp"
#include "implicitflow/timegrid.hpp"

namespace implicitflow {

/// [domain]: where the mesh comes from and which mixed element lives on it.
struct DomainConfig {
    std::string mesh = "builtin";  ///< "builtin" (crisscross unit square) or a mesh file path
    std::size_t divisions = 2;     ///< builtin square divisions per side (>= 1)
    int refinements = 0;           ///< uniform red refinements applied after construction (key: n)
    VelocityElement element = VelocityElement::MINI;  ///< mini | p2p0 | p1p1
};

/// [time]: the uniform grid on [0, T]. Both keys are required in documents; a
/// default-constructed config is nevertheless valid so it can be built in code.
struct TimeConfig {
    double final_time = 1.0;  ///< key: T, > 0
    int steps = 1;            ///< key: l, >= 1
};

/// [model]: constitutive law and its continuous approximation.
struct ModelConfig {
    std::string name = "newtonian";  ///< newtonian | power_law | bingham | herschel_bulkley | bingham_oscillating
    double mu = 1.0;      ///< viscosity scale, > 0 (required)
    double tau_y = 0.0;   ///< yield stress, >= 0 (required for yield-stress models)
    double exponent = 2.0;               ///< key: q, > 1 (required for power-law families)
    ApproxMode approx = ApproxMode::exact;  ///< exact | mollify | affine_interp
    int k = 16;                          ///< approximation index, >= 1 (>= k_0 for affine)
};

/// [output]: where run artifacts go and how often fields are dumped.
struct OutputConfig {
    std::string directory = ".";  ///< created on demand
    int stride = 1;               ///< dump every stride-th step (0 disables field files)
};

/// A full run description, one field per grammar section. Defaults mirror the
/// documents accepted by parse_config with only the required keys present.
struct RunConfig {
    DomainConfig domain;
    TimeConfig time;
    ModelConfig model;
    double m = std::numeric_limits<double>::infinity();  ///< [regularization] m, >= 1 or inf
    std::string forcing = "zero";  ///< [forcing] builtin: zero | manufactured_newtonian
    std::string initial = "zero";  ///< [initial] builtin: zero | taylor_vortex
    SolverConfig solver;           ///< [solver] newton_tol, max_newton, min_damping, ...
    int quad_points = 4;           ///< [solver] quad_points, >= 1 (time-mean Gauss nodes)
    OutputConfig output;
};

/// Thrown when a configuration fails validation. Carries every violation found,
/// not just the first; what() joins them into one readable message.
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(std::vector<std::string> violations);

    /// All violations, in document order (structural problems first).
    const std::vector<std::string>& violations() const noexcept { return violations_; }

private:
    std::vector<std::string> violations_;
};

/// Parse a configuration document. Collects structural problems (syntax, unknown
/// sections/keys with suggestions, duplicates, malformed numbers, missing
/// required keys) and range violations together and throws a single ConfigError
/// listing all of them; returns the fully defaulted config otherwise.
RunConfig parse_config(const std::string& text);

/// parse_config on the contents of a file. Unreadable files raise
/// std::runtime_error naming the path (an I/O failure, not a validation one).
RunConfig parse_config_file(const std::string& path);

/// Range-check an in-memory configuration (everything parse_config checks beyond
/// syntax). Returns the violation list; empty means valid.
std::vector<std::string> validate_config(const RunConfig& config);

/// Canonical text form: every section and key in a fixed order, numbers printed
/// with 17 significant digits. parse_config(serialize_config(c)) reproduces c,
/// and serialize is a fixed point of parse-then-serialize.
std::string serialize_config(const RunConfig& config);

/// Constitutive model named by a validated [model] section. Throws
/// std::invalid_argument on an unknown name.
GraphModel build_model(const ModelConfig& model);

/// Built-in forcing named by a validated [forcing] section ("zero" gives an
/// empty evaluator; "manufactured_newtonian" uses the model's viscosity).
TimeVectorEvaluator builtin_forcing(const std::string& name, const GraphModel& model);

/// Built-in initial datum named by a validated [initial] section.
VectorEvaluator builtin_initial(const std::string& name);

/// Solver-ready objects built from a validated configuration. Move-only: the
/// space points at the mesh and the setup points at the space, so both live on
/// the heap and keep stable addresses across moves.
struct Instance {
    std::unique_ptr<Triangulation> mesh;
    std::unique_ptr<MixedSpace> space;
    ProblemSetup setup;
    SolverConfig solver;
    RunConfig config;  ///< the validated source document
};

/// Build mesh, mixed space, approximation, grid, and setup from a validated
/// configuration. Validation failures raise ConfigError; mesh-file problems
/// propagate as std::runtime_error with path context.
Instance instantiate(const RunConfig& config);

}  // namespace implicitflow
