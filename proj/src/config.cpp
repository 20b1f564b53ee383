#include "fbsee/config.hpp"

#include "fbsee/lattice.hpp"

#include <fstream>
#include <sstream>

namespace fbsee {

namespace {

struct RawEntry {
    std::string value;
    int line = 0;
    bool used = false;
};

struct RawConfig {
    std::string origin;
    std::map<std::string, RawEntry> entries; // "section.key" -> value

    [[noreturn]] void fail(int line, const std::string& what) const {
        throw ConfigError(origin + ":" + std::to_string(line) + ": " + what);
    }

    RawEntry* find(const std::string& key) {
        auto it = entries.find(key);
        if (it == entries.end()) return nullptr;
        it->second.used = true;
        return &it->second;
    }

    std::string get_string(const std::string& key, const std::string& fallback) {
        RawEntry* e = find(key);
        return e ? e->value : fallback;
    }

    double get_double(const std::string& key, double fallback) {
        RawEntry* e = find(key);
        if (!e) return fallback;
        try {
            size_t used = 0;
            const double v = std::stod(e->value, &used);
            if (used != e->value.size()) throw std::invalid_argument("");
            return v;
        } catch (...) {
            fail(e->line, "field '" + key + "': expected a number, got '" + e->value + "'");
        }
    }

    long long get_int(const std::string& key, long long fallback) {
        RawEntry* e = find(key);
        if (!e) return fallback;
        try {
            size_t used = 0;
            const long long v = std::stoll(e->value, &used);
            if (used != e->value.size()) throw std::invalid_argument("");
            return v;
        } catch (...) {
            fail(e->line, "field '" + key + "': expected an integer, got '" + e->value + "'");
        }
    }

    bool get_bool(const std::string& key, bool fallback) {
        RawEntry* e = find(key);
        if (!e) return fallback;
        if (e->value == "true" || e->value == "on" || e->value == "1") return true;
        if (e->value == "false" || e->value == "off" || e->value == "0") return false;
        fail(e->line, "field '" + key + "': expected true/false, got '" + e->value + "'");
    }

    Expression get_expr(const std::string& key, const std::string& fallback) {
        RawEntry* e = find(key);
        const std::string text = e ? e->value : fallback;
        try {
            return Expression::parse(text);
        } catch (const ConfigError& err) {
            if (e) fail(e->line, std::string("field '") + key + "': " + err.what());
            throw;
        }
    }
};

std::string trim(const std::string& s) {
    size_t b = s.find_first_not_of(" \t\r");
    size_t e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? "" : s.substr(b, e - b + 1);
}

RawConfig tokenize(const std::string& text, const std::string& origin) {
    RawConfig raw;
    raw.origin = origin;
    std::istringstream in(text);
    std::string line;
    std::string section;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') raw.fail(line_no, "unterminated section header");
            section = trim(line.substr(1, line.size() - 2));
            if (section.empty()) raw.fail(line_no, "empty section name");
            continue;
        }
        const size_t eq = line.find('=');
        if (eq == std::string::npos) raw.fail(line_no, "expected 'key = value'");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty()) raw.fail(line_no, "empty key");
        const std::string full = section.empty() ? key : section + "." + key;
        if (raw.entries.count(full)) raw.fail(line_no, "duplicate key '" + full + "'");
        raw.entries[full] = RawEntry{value, line_no, false};
    }
    return raw;
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == ',') {
            cur = trim(cur);
            if (!cur.empty()) out.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    cur = trim(cur);
    if (!cur.empty()) out.push_back(cur);
    return out;
}

} // namespace

const std::set<std::string>& ExperimentConfig::known_checks() {
    static const std::set<std::string> k{"assumptions", "optimality", "contraction",
                                         "duality",     "oracle",     "convergence"};
    return k;
}

ExperimentConfig parse_config_text(const std::string& text, const std::string& origin) {
    RawConfig raw = tokenize(text, origin);
    ExperimentConfig cfg;

    const std::string kind = raw.get_string("problem", "lq-abstract");
    if (kind == "lq-abstract") cfg.problem = ProblemKind::LqAbstract;
    else if (kind == "parabolic-1d") cfg.problem = ProblemKind::Parabolic1d;
    else if (kind == "parabolic-2d") cfg.problem = ProblemKind::Parabolic2d;
    else {
        const RawEntry* e = raw.find("problem");
        raw.fail(e ? e->line : 0, "field 'problem': unknown kind '" + kind + "'");
    }

    const std::string mode = raw.get_string("mode", "deterministic");
    if (mode == "deterministic") cfg.mode = LatticeMode::Deterministic;
    else if (mode == "tree") cfg.mode = LatticeMode::Tree;
    else {
        const RawEntry* e = raw.find("mode");
        raw.fail(e ? e->line : 0, "field 'mode': expected deterministic or tree");
    }

    cfg.horizon_t = raw.get_double("T", 1.0);
    cfg.time_steps = static_cast<int>(raw.get_int("steps", 64));
    cfg.seed = static_cast<std::uint64_t>(raw.get_int("seed", 1));
    if (cfg.horizon_t <= 0.0) raw.fail(raw.find("T") ? raw.find("T")->line : 0, "T must be positive");
    if (cfg.time_steps <= 0)
        raw.fail(raw.find("steps") ? raw.find("steps")->line : 0, "steps must be positive");

    if (cfg.mode == LatticeMode::Tree && cfg.time_steps > BrownianLattice::kDefaultTreeCap) {
        raw.fail(raw.find("steps") ? raw.find("steps")->line : 0,
                 "tree mode caps steps at " + std::to_string(BrownianLattice::kDefaultTreeCap) +
                     " (got " + std::to_string(cfg.time_steps) + ")");
    }

    if (cfg.problem == ProblemKind::LqAbstract) {
        cfg.dim = static_cast<int>(raw.get_int("coefficients.dim", 1));
        cfg.control_dim = static_cast<int>(raw.get_int("coefficients.control_dim", 1));
        for (const char* name : {"A", "B", "D", "G", "M", "Q", "N", "h", "xi"}) {
            const std::string fallback = (std::string(name) == "D" || std::string(name) == "M" ||
                                          std::string(name) == "Q" || std::string(name) == "N" ||
                                          std::string(name) == "h")
                                             ? "1"
                                             : "0";
            cfg.lq_coeffs.emplace(name, raw.get_expr(std::string("coefficients.") + name, fallback));
        }
        if (cfg.mode == LatticeMode::Deterministic) {
            for (const auto& [name, expr] : cfg.lq_coeffs) {
                if (expr.uses_w() && name != "xi")
                    throw ConfigError(origin + ": deterministic mode requires W-free coefficient '" +
                                      name + "'");
            }
            const auto& b = cfg.lq_coeffs.at("B");
            const auto& xi = cfg.lq_coeffs.at("xi");
            if (!(b.is_constant() && b.eval(0, 0) == 0.0))
                throw ConfigError(origin + ": deterministic mode requires B identically zero");
            if (xi.uses_w())
                throw ConfigError(origin + ": deterministic mode requires deterministic xi");
        }
    } else {
        cfg.mesh_n = static_cast<int>(raw.get_int("mesh.n", 8));
        if (cfg.mesh_n < 2)
            raw.fail(raw.find("mesh.n") ? raw.find("mesh.n")->line : 0, "mesh.n must be >= 2");
        for (const char* name : {"a", "b", "b2", "c", "nu", "g", "xi"}) {
            const std::string fallback = std::string(name) == "a" ? "0.5" : "0";
            cfg.pde_coeffs.emplace(name, raw.get_expr(std::string("coefficients.") + name, fallback));
        }
        cfg.kappa = raw.get_double("coefficients.kappa", 0.1);
        cfg.big_k = raw.get_double("coefficients.K", 10.0);
        if (cfg.mode == LatticeMode::Deterministic) {
            const auto& nu = cfg.pde_coeffs.at("nu");
            if (!(nu.is_constant() && nu.eval(0, 0) == 0.0))
                throw ConfigError(origin + ": deterministic mode requires nu identically zero");
            for (const auto& [name, expr] : cfg.pde_coeffs)
                if (expr.uses_w())
                    throw ConfigError(origin +
                                      ": deterministic mode requires W-free coefficient '" + name +
                                      "'");
        }
        if (cfg.problem == ProblemKind::Parabolic2d && cfg.mode == LatticeMode::Tree)
            throw ConfigError(origin + ": two-dimensional problems run in deterministic mode only");
    }

    cfg.step_delta = raw.get_double("continuation.step_delta", -1.0);
    cfg.picard_tol = raw.get_double("continuation.picard_tol", 1e-9);
    cfg.max_picard = static_cast<int>(raw.get_int("continuation.max_picard", 200));
    cfg.measure_k = raw.get_bool("continuation.measure_k", true);
    cfg.flat = raw.get_bool("continuation.flat", false);
    if (cfg.step_delta > 1.0)
        throw ConfigError(origin + ": continuation.step_delta must lie in (0, 1]");
    if (cfg.picard_tol <= 0.0) throw ConfigError(origin + ": continuation.picard_tol must be > 0");

    for (const std::string& name : split_list(raw.get_string("checks.enabled", ""))) {
        if (!ExperimentConfig::known_checks().count(name))
            throw ConfigError(origin + ": unknown check suite '" + name + "'");
        cfg.checks.insert(name);
    }
    const std::string ref = raw.get_string("checks.reference", "none");
    if (ref == "none") cfg.reference = ReferenceKind::None;
    else if (ref == "lq-closed-form") cfg.reference = ReferenceKind::LqClosedForm;
    else if (ref == "heat-decay") cfg.reference = ReferenceKind::HeatDecay;
    else throw ConfigError(origin + ": unknown reference '" + ref + "'");
    cfg.reference_tol = raw.get_double("checks.reference_tol", 0.01);

    cfg.output_dir = raw.get_string("output.dir", "out");

    for (const auto& [key, entry] : raw.entries) {
        if (!entry.used)
            raw.fail(entry.line, "unknown field '" + key + "'");
    }
    return cfg;
}

ExperimentConfig parse_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError(path + ": cannot open config file");
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_config_text(buf.str(), path);
}

} // namespace fbsee
