#pragma once

#include "fbsee/expression.hpp"
#include "fbsee/types.hpp"

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace fbsee {

enum class ProblemKind { LqAbstract, Parabolic1d, Parabolic2d };
enum class LatticeMode { Deterministic, Tree };
enum class ReferenceKind { None, LqClosedForm, HeatDecay };

/// Parsed experiment file. Format: '#' comments, [section] headers,
/// key = value lines; schema in docs/config.md.
struct ExperimentConfig {
    ProblemKind problem = ProblemKind::LqAbstract;
    LatticeMode mode = LatticeMode::Deterministic;
    double horizon_t = 1.0;
    int time_steps = 64;
    std::uint64_t seed = 1;

    // lq-abstract coefficients (scalar expressions over t, W; xi over W).
    int dim = 1;
    int control_dim = 1;
    std::map<std::string, Expression> lq_coeffs; // A,B,D,G,M,Q,N,h,xi

    // parabolic coefficients (expressions over t, W, x, x2).
    int mesh_n = 8;
    std::map<std::string, Expression> pde_coeffs; // a,b,b2,c,nu,g,xi
    double kappa = 0.0;
    double big_k = 0.0;

    // continuation overrides
    double step_delta = -1.0; // <= 0 means auto (measured)
    double picard_tol = 1e-9;
    int max_picard = 200;
    bool measure_k = true;
    bool flat = false;

    // checks
    std::set<std::string> checks; // assumptions, optimality, contraction,
                                  // duality, oracle, convergence
    ReferenceKind reference = ReferenceKind::None;
    double reference_tol = 0.01;

    std::string output_dir = "out";

    static const std::set<std::string>& known_checks();
};

/// Parses and validates a config file. Throws ConfigError with
/// line/field diagnostics.
ExperimentConfig parse_config_file(const std::string& path);
ExperimentConfig parse_config_text(const std::string& text, const std::string& origin = "<string>");

} // namespace fbsee
