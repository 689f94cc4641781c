/// @file config.cpp
/// @brief Sectioned key-value configuration: parsing with exhaustive
///        diagnostics, range validation, canonical serialization, and
///        instantiation into solver-ready objects.

#include "implicitflow/config.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

namespace implicitflow {
namespace {

std::string fmt17(double value) {
    char buffer[40];
    std::snprintf(buffer, sizeof(buffer), "%.17g", value);
    return buffer;
}

std::string trim(const std::string& text) {
    std::size_t first = 0;
    std::size_t last = text.size();
    while (first < last && std::isspace(static_cast<unsigned char>(text[first])) != 0) ++first;
    while (last > first && std::isspace(static_cast<unsigned char>(text[last - 1])) != 0) --last;
    return text.substr(first, last - first);
}

/// Classic edit distance, used only for "did you mean" hints on short names.
std::size_t edit_distance(const std::string& a, const std::string& b) {
    std::vector<std::size_t> row(b.size() + 1);
    for (std::size_t j = 0; j <= b.size(); ++j) row[j] = j;
    for (std::size_t i = 1; i <= a.size(); ++i) {
        std::size_t diagonal = row[0];
        row[0] = i;
        for (std::size_t j = 1; j <= b.size(); ++j) {
            const std::size_t above = row[j];
            const std::size_t substitution = diagonal + (a[i - 1] == b[j - 1] ? 0 : 1);
            row[j] = std::min({above + 1, row[j - 1] + 1, substitution});
            diagonal = above;
        }
    }
    return row[b.size()];
}

/// "; did you mean 'x'?" when some candidate is close enough to be a typo.
std::string suggestion(const std::string& name, const std::vector<std::string>& candidates) {
    std::size_t best = std::string::npos;
    std::string match;
    for (const auto& candidate : candidates) {
        const std::size_t distance = edit_distance(name, candidate);
        if (distance < best) {
            best = distance;
            match = candidate;
        }
    }
    const std::size_t threshold = std::max<std::size_t>(2, name.size() / 2);
    if (!match.empty() && best <= threshold) return "; did you mean '" + match + "'?";
    return "";
}

bool parse_double_value(const std::string& text, double& out) {
    if (text.empty()) return false;
    char* end = nullptr;
    const double value = std::strtod(text.c_str(), &end);
    if (end != text.c_str() + text.size()) return false;
    out = value;
    return true;
}

bool parse_int_value(const std::string& text, long& out) {
    if (text.empty()) return false;
    char* end = nullptr;
    const long value = std::strtol(text.c_str(), &end, 10);
    if (end != text.c_str() + text.size()) return false;
    out = value;
    return true;
}

bool parse_bool_value(const std::string& text, bool& out) {
    if (text == "true" || text == "1") {
        out = true;
        return true;
    }
    if (text == "false" || text == "0") {
        out = false;
        return true;
    }
    return false;
}

const std::vector<std::string>& section_names() {
    static const std::vector<std::string> names = {"domain",  "time",    "model",  "regularization",
                                                   "forcing", "initial", "solver", "output"};
    return names;
}

const std::vector<std::string>& keys_of(const std::string& section) {
    static const std::vector<std::string> domain = {"mesh", "divisions", "n", "element"};
    static const std::vector<std::string> time = {"T", "l"};
    static const std::vector<std::string> model = {"model", "mu", "tau_y", "q", "approx", "k"};
    static const std::vector<std::string> regularization = {"m"};
    static const std::vector<std::string> builtin = {"builtin"};
    static const std::vector<std::string> solver = {"newton_tol",  "max_newton",   "min_damping",
                                                    "picard_fallback", "max_picard", "trust_factor",
                                                    "quad_points"};
    static const std::vector<std::string> output = {"directory", "stride"};
    static const std::vector<std::string> none;
    if (section == "domain") return domain;
    if (section == "time") return time;
    if (section == "model") return model;
    if (section == "regularization") return regularization;
    if (section == "forcing" || section == "initial") return builtin;
    if (section == "solver") return solver;
    if (section == "output") return output;
    return none;
}

const std::vector<std::string>& model_names() {
    static const std::vector<std::string> names = {"newtonian", "power_law", "bingham",
                                                   "herschel_bulkley", "bingham_oscillating"};
    return names;
}

const std::vector<std::string>& element_names() {
    static const std::vector<std::string> names = {"mini", "p2p0", "p1p1"};
    return names;
}

const std::vector<std::string>& approx_names() {
    static const std::vector<std::string> names = {"exact", "mollify", "affine_interp"};
    return names;
}

std::string approx_name(ApproxMode mode) {
    switch (mode) {
        case ApproxMode::exact: return "exact";
        case ApproxMode::mollify: return "mollify";
        case ApproxMode::affine_interp: return "affine_interp";
    }
    return "exact";
}

bool needs_tau_y(const std::string& name) {
    return name == "bingham" || name == "herschel_bulkley" || name == "bingham_oscillating";
}

bool needs_exponent(const std::string& name) {
    return name == "power_law" || name == "herschel_bulkley";
}

std::string join_violations(const std::vector<std::string>& violations) {
    std::string message = "invalid configuration (" + std::to_string(violations.size()) +
                          (violations.size() == 1 ? " problem):" : " problems):");
    for (const auto& violation : violations) message += "\n  - " + violation;
    return message;
}

/// Mutable parse state threaded through the per-key dispatch.
struct ParseState {
    RunConfig config;
    std::vector<std::string> violations;
    std::set<std::string> seen;  ///< "section.key" pairs already assigned
};

void assign_value(ParseState& state, int line_no, const std::string& section,
                  const std::string& key, const std::string& value) {
    RunConfig& cfg = state.config;
    const std::string where = "line " + std::to_string(line_no) + ": ";
    auto bad_number = [&](const char* kind) {
        state.violations.push_back(where + "value for '" + key + "' in [" + section +
                                   "] is not " + kind + ": '" + value + "'");
    };
    auto set_double = [&](double& target) {
        double parsed = 0;
        if (parse_double_value(value, parsed)) target = parsed;
        else bad_number("a number");
    };
    auto set_int = [&](int& target) {
        long parsed = 0;
        if (parse_int_value(value, parsed)) target = static_cast<int>(parsed);
        else bad_number("an integer");
    };
    if (section == "domain") {
        if (key == "mesh") cfg.domain.mesh = value;
        else if (key == "divisions") {
            long parsed = 0;
            if (parse_int_value(value, parsed) && parsed >= 0) cfg.domain.divisions = static_cast<std::size_t>(parsed);
            else bad_number("a nonnegative integer");
        } else if (key == "n") set_int(cfg.domain.refinements);
        else if (key == "element") {
            if (value == "mini") cfg.domain.element = VelocityElement::MINI;
            else if (value == "p2p0") cfg.domain.element = VelocityElement::P2P0;
            else if (value == "p1p1") cfg.domain.element = VelocityElement::P1P1;
            else state.violations.push_back(where + "element '" + value + "' is not one of mini, p2p0, p1p1" +
                                            suggestion(value, element_names()));
        }
    } else if (section == "time") {
        if (key == "T") set_double(cfg.time.final_time);
        else set_int(cfg.time.steps);  // key == "l"
    } else if (section == "model") {
        // Membership is range-checked later so the violation can carry the name.
        if (key == "model") cfg.model.name = value;
        else if (key == "mu") set_double(cfg.model.mu);
        else if (key == "tau_y") set_double(cfg.model.tau_y);
        else if (key == "q") set_double(cfg.model.exponent);
        else if (key == "approx") {
            if (value == "exact") cfg.model.approx = ApproxMode::exact;
            else if (value == "mollify") cfg.model.approx = ApproxMode::mollify;
            else if (value == "affine_interp") cfg.model.approx = ApproxMode::affine_interp;
            else state.violations.push_back(where + "approx '" + value +
                                            "' is not one of exact, mollify, affine_interp" +
                                            suggestion(value, approx_names()));
        } else set_int(cfg.model.k);  // key == "k"
    } else if (section == "regularization") {
        set_double(cfg.m);  // key == "m"; strtod accepts "inf"
    } else if (section == "forcing") {
        cfg.forcing = value;  // key == "builtin"
    } else if (section == "initial") {
        cfg.initial = value;  // key == "builtin"
    } else if (section == "solver") {
        if (key == "newton_tol") set_double(cfg.solver.newton_tol);
        else if (key == "max_newton") set_int(cfg.solver.max_newton);
        else if (key == "min_damping") set_double(cfg.solver.min_damping);
        else if (key == "picard_fallback") {
            bool parsed = false;
            if (parse_bool_value(value, parsed)) cfg.solver.picard_fallback = parsed;
            else bad_number("a boolean (true/false)");
        } else if (key == "max_picard") set_int(cfg.solver.max_picard);
        else if (key == "trust_factor") set_double(cfg.solver.trust_factor);
        else set_int(cfg.quad_points);  // key == "quad_points"
    } else {                            // section == "output"
        if (key == "directory") cfg.output.directory = value;
        else set_int(cfg.output.stride);  // key == "stride"
    }
}

}  // namespace

ConfigError::ConfigError(std::vector<std::string> violations)
    : std::runtime_error(join_violations(violations)), violations_(std::move(violations)) {}

RunConfig parse_config(const std::string& text) {
    ParseState state;
    std::istringstream stream(text);
    std::string raw_line;
    std::string section;
    bool section_known = false;
    int line_no = 0;
    while (std::getline(stream, raw_line)) {
        ++line_no;
        const std::size_t comment = raw_line.find('#');
        if (comment != std::string::npos) raw_line.erase(comment);
        const std::string line = trim(raw_line);
        if (line.empty()) continue;
        const std::string where = "line " + std::to_string(line_no) + ": ";
        if (line.front() == '[') {
            if (line.back() != ']') {
                state.violations.push_back(where + "malformed section header '" + line + "'");
                section_known = false;
                continue;
            }
            section = trim(line.substr(1, line.size() - 2));
            section_known =
                std::find(section_names().begin(), section_names().end(), section) != section_names().end();
            if (!section_known)
                state.violations.push_back(where + "unknown section [" + section + "]" +
                                           suggestion(section, section_names()));
            continue;
        }
        const std::size_t equals = line.find('=');
        if (equals == std::string::npos) {
            state.violations.push_back(where + "expected 'key = value', got '" + line + "'");
            continue;
        }
        const std::string key = trim(line.substr(0, equals));
        const std::string value = trim(line.substr(equals + 1));
        if (key.empty()) {
            state.violations.push_back(where + "missing key before '='");
            continue;
        }
        if (section.empty()) {
            state.violations.push_back(where + "key '" + key + "' appears before any [section] header");
            continue;
        }
        if (!section_known) continue;  // the unknown section itself was already reported
        const auto& known = keys_of(section);
        if (std::find(known.begin(), known.end(), key) == known.end()) {
            state.violations.push_back(where + "unknown key '" + key + "' in [" + section + "]" +
                                       suggestion(key, known));
            continue;
        }
        if (!state.seen.insert(section + "." + key).second) {
            state.violations.push_back(where + "duplicate key '" + key + "' in [" + section + "]");
            continue;
        }
        if (value.empty()) {
            state.violations.push_back(where + "empty value for '" + key + "' in [" + section + "]");
            continue;
        }
        assign_value(state, line_no, section, key, value);
    }

    auto require_key = [&](const char* section_name, const char* key_name, const std::string& why) {
        if (state.seen.count(std::string(section_name) + "." + key_name) == 0)
            state.violations.push_back("missing required key '" + std::string(key_name) + "' in [" +
                                       section_name + "]" + why);
    };
    require_key("time", "T", "");
    require_key("time", "l", "");
    require_key("model", "model", "");
    const bool model_named = state.seen.count("model.model") != 0;
    if (model_named) {
        require_key("model", "mu", "");
        const std::string& name = state.config.model.name;
        if (needs_tau_y(name)) require_key("model", "tau_y", " (yield-stress model '" + name + "')");
        if (needs_exponent(name)) require_key("model", "q", " (power-law model '" + name + "')");
    }

    auto ranges = validate_config(state.config);
    state.violations.insert(state.violations.end(), ranges.begin(), ranges.end());
    if (!state.violations.empty()) throw ConfigError(std::move(state.violations));
    return state.config;
}

RunConfig parse_config_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read config file '" + path + "'");
    std::ostringstream buffer;
    buffer << in.rdbuf();
    if (in.bad()) throw std::runtime_error("cannot read config file '" + path + "'");
    return parse_config(buffer.str());
}

std::vector<std::string> validate_config(const RunConfig& config) {
    std::vector<std::string> violations;
    auto reject = [&](const std::string& message) { violations.push_back(message); };

    if (config.domain.mesh.empty()) reject("[domain] mesh must name a file or 'builtin'");
    if (config.domain.mesh == "builtin" && config.domain.divisions < 1)
        reject("[domain] divisions must be at least 1");
    if (config.domain.refinements < 0) reject("[domain] n must be nonnegative");

    if (!(config.time.final_time > 0) || !std::isfinite(config.time.final_time))
        reject("[time] T must be positive");
    if (config.time.steps < 1) reject("[time] l must be at least 1");

    const std::string& model = config.model.name;
    const bool model_known =
        std::find(model_names().begin(), model_names().end(), model) != model_names().end();
    if (!model_known)
        reject("[model] model '" + model + "' is not one of newtonian, power_law, bingham, "
               "herschel_bulkley, bingham_oscillating" + suggestion(model, model_names()));
    if (!(config.model.mu > 0) || !std::isfinite(config.model.mu)) reject("[model] mu must be positive");
    if (!(config.model.tau_y >= 0) || !std::isfinite(config.model.tau_y))
        reject("[model] tau_y must be nonnegative");
    bool exponent_ok = true;
    if (model_known && needs_exponent(model) &&
        (!(config.model.exponent > 1) || !std::isfinite(config.model.exponent))) {
        reject("[model] q must exceed 1 (got " + fmt17(config.model.exponent) + ")");
        exponent_ok = false;
    }
    const bool model_fields_ok = model_known && exponent_ok && config.model.mu > 0 &&
                                 config.model.tau_y >= 0 && std::isfinite(config.model.mu) &&
                                 std::isfinite(config.model.tau_y);
    if (config.model.approx == ApproxMode::affine_interp && model_fields_ok) {
        // The affine threshold k_0 comes from the model's jump gaps (1 for laws
        // with at most one discontinuity), so k < 1 is folded into this check.
        const int k_min = minimal_approx_index(build_model(config.model));
        if (config.model.k < k_min)
            reject("[model] k = " + std::to_string(config.model.k) +
                   " is below the minimal admissible index k_0 = " + std::to_string(k_min) +
                   " for affine_interp on this model");
    } else if (config.model.k < 1) {
        reject("[model] k must be at least 1");
    }

    if (std::isnan(config.m) || config.m < 1) reject("[regularization] m must be at least 1 (or inf)");

    if (config.forcing != "zero" && config.forcing != "manufactured_newtonian")
        reject("[forcing] builtin '" + config.forcing + "' is not one of zero, manufactured_newtonian" +
               suggestion(config.forcing, {"zero", "manufactured_newtonian"}));
    if (config.initial == "lid_driven")
        reject("[initial] builtin 'lid_driven' is rejected: non-homogeneous boundary data is out of scope");
    else if (config.initial != "zero" && config.initial != "taylor_vortex")
        reject("[initial] builtin '" + config.initial + "' is not one of zero, taylor_vortex" +
               suggestion(config.initial, {"zero", "taylor_vortex"}));

    if (!(config.solver.newton_tol > 0) || !std::isfinite(config.solver.newton_tol))
        reject("[solver] newton_tol must be positive");
    if (config.solver.max_newton < 1) reject("[solver] max_newton must be at least 1");
    if (!(config.solver.min_damping > 0) || config.solver.min_damping > 1)
        reject("[solver] min_damping must lie in (0, 1]");
    if (config.solver.max_picard < 0) reject("[solver] max_picard must be nonnegative");
    if (!(config.solver.trust_factor > 0) || !std::isfinite(config.solver.trust_factor))
        reject("[solver] trust_factor must be positive");
    if (config.quad_points < 1) reject("[solver] quad_points must be at least 1");

    if (config.output.directory.empty()) reject("[output] directory must not be empty");
    if (config.output.stride < 0) reject("[output] stride must be nonnegative");

    return violations;
}

std::string serialize_config(const RunConfig& config) {
    std::ostringstream out;
    out << "[domain]\n"
        << "mesh = " << config.domain.mesh << "\n"
        << "divisions = " << config.domain.divisions << "\n"
        << "n = " << config.domain.refinements << "\n"
        << "element = " << element_name(config.domain.element) << "\n\n";
    out << "[time]\n"
        << "T = " << fmt17(config.time.final_time) << "\n"
        << "l = " << config.time.steps << "\n\n";
    out << "[model]\n"
        << "model = " << config.model.name << "\n"
        << "mu = " << fmt17(config.model.mu) << "\n"
        << "tau_y = " << fmt17(config.model.tau_y) << "\n"
        << "q = " << fmt17(config.model.exponent) << "\n"
        << "approx = " << approx_name(config.model.approx) << "\n"
        << "k = " << config.model.k << "\n\n";
    out << "[regularization]\n"
        << "m = " << fmt17(config.m) << "\n\n";
    out << "[forcing]\n"
        << "builtin = " << config.forcing << "\n\n";
    out << "[initial]\n"
        << "builtin = " << config.initial << "\n\n";
    out << "[solver]\n"
        << "newton_tol = " << fmt17(config.solver.newton_tol) << "\n"
        << "max_newton = " << config.solver.max_newton << "\n"
        << "min_damping = " << fmt17(config.solver.min_damping) << "\n"
        << "picard_fallback = " << (config.solver.picard_fallback ? "true" : "false") << "\n"
        << "max_picard = " << config.solver.max_picard << "\n"
        << "trust_factor = " << fmt17(config.solver.trust_factor) << "\n"
        << "quad_points = " << config.quad_points << "\n\n";
    out << "[output]\n"
        << "directory = " << config.output.directory << "\n"
        << "stride = " << config.output.stride << "\n";
    return out.str();
}

GraphModel build_model(const ModelConfig& model) {
    if (model.name == "newtonian") return newtonian_model(model.mu);
    if (model.name == "power_law") return power_law_model(model.mu, model.exponent);
    if (model.name == "bingham") return bingham_model(model.tau_y, model.mu);
    if (model.name == "herschel_bulkley")
        return herschel_bulkley_model(model.tau_y, model.mu, model.exponent);
    if (model.name == "bingham_oscillating") return bingham_oscillating_model(model.tau_y, model.mu);
    throw std::invalid_argument("unknown constitutive model '" + model.name + "'");
}

TimeVectorEvaluator builtin_forcing(const std::string& name, const GraphModel& model) {
    if (name == "zero") return {};
    if (name == "manufactured_newtonian") return manufactured_forcing(model.mu);
    throw std::invalid_argument("unknown forcing builtin '" + name + "'");
}

VectorEvaluator builtin_initial(const std::string& name) {
    if (name == "zero") return {};
    if (name == "taylor_vortex") return taylor_vortex_initial();
    throw std::invalid_argument("unknown initial builtin '" + name + "'");
}

Instance instantiate(const RunConfig& config) {
    auto violations = validate_config(config);
    if (!violations.empty()) throw ConfigError(std::move(violations));

    Triangulation mesh = config.domain.mesh == "builtin" ? unit_square_mesh(config.domain.divisions)
                                                         : read_mesh_file(config.domain.mesh);
    for (int refinement = 0; refinement < config.domain.refinements; ++refinement)
        mesh = refine_uniform(mesh);

    Instance instance;
    instance.mesh = std::make_unique<Triangulation>(std::move(mesh));
    instance.space = std::make_unique<MixedSpace>(build_space(*instance.mesh, config.domain.element));
    const GraphModel model = build_model(config.model);
    instance.setup = make_setup(*instance.space, make_approx(model, config.model.approx, config.model.k),
                                make_time_grid(config.time.final_time, config.time.steps), config.m,
                                builtin_forcing(config.forcing, model), builtin_initial(config.initial),
                                config.quad_points);
    instance.solver = config.solver;
    instance.config = config;
    return instance;
}

}  // namespace implicitflow
