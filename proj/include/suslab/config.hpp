#pragma once

#include <cctype>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <istream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "suslab/attack.hpp"
#include "suslab/eval.hpp"
#include "suslab/net.hpp"
#include "suslab/poison.hpp"
#include "suslab/rng.hpp"

namespace suslab {

/// Configuration problem with the offending field path in the message.
class ConfigError : public std::runtime_error {
  public:
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Full description of one run: dataset, trigger, model, attack, victim.
struct RunConfig {
    // [dataset]
    std::string dataset_kind = "synthetic_digits";  // synthetic_digits | external
    std::string dataset_path;                       // external only
    std::uint64_t data_seed = 1;
    int train_count = 1500;
    int test_count = 500;
    double poison_fraction = 0.1;

    // [trigger]
    TriggerSpec trigger;
    std::uint64_t pattern_seed = 7;  // source for generated blend/random_patch patterns

    // [model]
    std::vector<int> dims;  // required: input, hidden..., output
    std::uint64_t init_seed = 3;
    int head_layers = 0;

    // [attack]
    Variant variant = Variant::sus_f;
    TauPolicy tau = TauPolicy::fixed(0.0);
    double margin_delta = 1e-3;
    HideScope hide = HideScope::all_layers;

    // [phase1] / [phase2]
    TrainConfig phase1{40, 32, 0.05, 11, 0.9};
    TrainConfig phase2{40, 32, 0.05, 12, 0.9};

    // [victim]
    bool victim_permute = false;
    VictimPipeline::Library victim_library = VictimPipeline::Library::full_layers;

    // [finetune]
    TrainConfig finetune{5, 32, 0.01, 13, 0.9};
    double finetune_fraction = 0.1;

    // [output]
    std::string out_dir = "out";
};

namespace detail {

struct ParsedConfig {
    std::map<std::string, std::map<std::string, std::string>> sections;
};

inline std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

inline ParsedConfig parse_sections(std::istream& is) {
    ParsedConfig out;
    std::string line, section;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        std::size_t hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']')
                throw ConfigError("line " + std::to_string(lineno) + ": malformed section header");
            section = trim(line.substr(1, line.size() - 2));
            if (section.empty())
                throw ConfigError("line " + std::to_string(lineno) + ": empty section name");
            out.sections[section];
            continue;
        }
        std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
        if (section.empty())
            throw ConfigError("line " + std::to_string(lineno) + ": key outside any section");
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        if (key.empty())
            throw ConfigError("line " + std::to_string(lineno) + ": empty key");
        out.sections[section][key] = value;
    }
    return out;
}

/// Typed access with field-path diagnostics and unknown-key detection.
class ConfigReader {
  public:
    explicit ConfigReader(ParsedConfig cfg) : cfg_(std::move(cfg)) {}

    bool has(const std::string& sec, const std::string& key) const {
        auto s = cfg_.sections.find(sec);
        return s != cfg_.sections.end() && s->second.count(key) > 0;
    }

    std::string get_str(const std::string& sec, const std::string& key, std::string def) {
        if (!has(sec, key)) return def;
        used_.insert(sec + "." + key);
        return cfg_.sections.at(sec).at(key);
    }

    std::string get_str_required(const std::string& sec, const std::string& key) {
        if (!has(sec, key)) throw ConfigError("missing required field: " + sec + "." + key);
        used_.insert(sec + "." + key);
        return cfg_.sections.at(sec).at(key);
    }

    double get_double(const std::string& sec, const std::string& key, double def) {
        if (!has(sec, key)) return def;
        return parse_double(sec + "." + key, get_str(sec, key, ""));
    }

    long long get_int(const std::string& sec, const std::string& key, long long def) {
        if (!has(sec, key)) return def;
        std::string v = get_str(sec, key, "");
        try {
            std::size_t pos = 0;
            long long n = std::stoll(v, &pos);
            if (pos != v.size()) throw std::invalid_argument("");
            return n;
        } catch (...) {
            throw ConfigError(sec + "." + key + ": not an integer: '" + v + "'");
        }
    }

    std::uint64_t get_u64(const std::string& sec, const std::string& key, std::uint64_t def) {
        if (!has(sec, key)) return def;
        std::string v = get_str(sec, key, "");
        try {
            std::size_t pos = 0;
            std::uint64_t n = std::stoull(v, &pos);
            if (pos != v.size()) throw std::invalid_argument("");
            return n;
        } catch (...) {
            throw ConfigError(sec + "." + key + ": not an unsigned integer: '" + v + "'");
        }
    }

    bool get_bool(const std::string& sec, const std::string& key, bool def) {
        if (!has(sec, key)) return def;
        std::string v = get_str(sec, key, "");
        if (v == "true" || v == "1" || v == "yes") return true;
        if (v == "false" || v == "0" || v == "no") return false;
        throw ConfigError(sec + "." + key + ": expected boolean, got '" + v + "'");
    }

    double parse_double(const std::string& path, const std::string& v) {
        try {
            std::size_t pos = 0;
            double d = std::stod(v, &pos);
            if (pos != v.size()) throw std::invalid_argument("");
            return d;
        } catch (...) {
            throw ConfigError(path + ": not a number: '" + v + "'");
        }
    }

    void check_unknown(const std::set<std::string>& known_sections) const {
        for (const auto& [sec, kv] : cfg_.sections) {
            if (!known_sections.count(sec)) throw ConfigError("unknown section: [" + sec + "]");
            for (const auto& [key, _] : kv)
                if (!used_.count(sec + "." + key))
                    throw ConfigError("unknown field: " + sec + "." + key);
        }
    }

  private:
    ParsedConfig cfg_;
    std::set<std::string> used_;
};

inline std::vector<int> parse_dims(const std::string& path, const std::string& v) {
    std::vector<int> dims;
    std::size_t pos = 0;
    while (pos < v.size()) {
        std::size_t comma = v.find(',', pos);
        std::string tok = trim(v.substr(pos, comma == std::string::npos ? comma : comma - pos));
        try {
            std::size_t end = 0;
            int d = std::stoi(tok, &end);
            if (end != tok.size() || d <= 0) throw std::invalid_argument("");
            dims.push_back(d);
        } catch (...) {
            throw ConfigError(path + ": bad dimension '" + tok + "'");
        }
        if (comma == std::string::npos) break;
        pos = comma + 1;
    }
    if (dims.size() < 2) throw ConfigError(path + ": need at least input and output dims");
    return dims;
}

inline TrainConfig read_train_section(ConfigReader& r, const std::string& sec, TrainConfig def) {
    TrainConfig cfg = def;
    cfg.epochs = static_cast<int>(r.get_int(sec, "epochs", def.epochs));
    cfg.batch_size = static_cast<int>(r.get_int(sec, "batch_size", def.batch_size));
    cfg.learning_rate = r.get_double(sec, "learning_rate", def.learning_rate);
    cfg.momentum = r.get_double(sec, "momentum", def.momentum);
    cfg.seed = r.get_u64(sec, "seed", def.seed);
    if (cfg.epochs < 0) throw ConfigError(sec + ".epochs: must be >= 0");
    if (cfg.batch_size <= 0) throw ConfigError(sec + ".batch_size: must be positive");
    if (cfg.learning_rate <= 0.0) throw ConfigError(sec + ".learning_rate: must be positive");
    if (cfg.momentum < 0.0 || cfg.momentum >= 1.0)
        throw ConfigError(sec + ".momentum: must be in [0,1)");
    return cfg;
}

}  // namespace detail

inline RunConfig parse_run_config(std::istream& is) {
    detail::ConfigReader r(detail::parse_sections(is));
    RunConfig cfg;

    cfg.dataset_kind = r.get_str("dataset", "kind", cfg.dataset_kind);
    if (cfg.dataset_kind != "synthetic_digits" && cfg.dataset_kind != "external")
        throw ConfigError("dataset.kind: expected synthetic_digits or external, got '" +
                          cfg.dataset_kind + "'");
    cfg.dataset_path = r.get_str("dataset", "path", cfg.dataset_path);
    if (cfg.dataset_kind == "external" && cfg.dataset_path.empty())
        throw ConfigError("missing required field: dataset.path (external dataset)");
    cfg.data_seed = r.get_u64("dataset", "seed", cfg.data_seed);
    cfg.train_count = static_cast<int>(r.get_int("dataset", "count", cfg.train_count));
    cfg.test_count = static_cast<int>(r.get_int("dataset", "test_count", cfg.test_count));
    cfg.poison_fraction = r.get_double("dataset", "poison_fraction", cfg.poison_fraction);
    if (cfg.train_count <= 0) throw ConfigError("dataset.count: must be positive");
    if (cfg.test_count <= 0) throw ConfigError("dataset.test_count: must be positive");
    if (!(cfg.poison_fraction > 0.0 && cfg.poison_fraction < 1.0))
        throw ConfigError("dataset.poison_fraction: must be in (0,1)");

    std::string tk = r.get_str("trigger", "kind", "corner_patch");
    if (tk == "corner_patch")
        cfg.trigger.kind = TriggerSpec::Kind::corner_patch;
    else if (tk == "blend")
        cfg.trigger.kind = TriggerSpec::Kind::blend;
    else if (tk == "random_patch")
        cfg.trigger.kind = TriggerSpec::Kind::random_patch;
    else
        throw ConfigError("trigger.kind: expected corner_patch, blend or random_patch, got '" +
                          tk + "'");
    cfg.trigger.target = static_cast<int>(r.get_int("trigger", "target", cfg.trigger.target));
    cfg.trigger.patch_size =
        static_cast<int>(r.get_int("trigger", "size", cfg.trigger.patch_size));
    cfg.trigger.patch_value = r.get_double("trigger", "value", cfg.trigger.patch_value);
    cfg.trigger.blend_ratio = r.get_double("trigger", "ratio", cfg.trigger.blend_ratio);
    cfg.trigger.per_sample_position =
        r.get_bool("trigger", "per_sample_position", cfg.trigger.per_sample_position);
    cfg.pattern_seed = r.get_u64("trigger", "pattern_seed", cfg.pattern_seed);
    if (cfg.trigger.target < 0) throw ConfigError("trigger.target: must be >= 0");
    if (cfg.trigger.patch_size <= 0) throw ConfigError("trigger.size: must be positive");

    cfg.dims = detail::parse_dims("model.dims", r.get_str_required("model", "dims"));
    cfg.init_seed = r.get_u64("model", "init_seed", cfg.init_seed);
    cfg.head_layers = static_cast<int>(r.get_int("model", "head_layers", cfg.head_layers));
    if (cfg.head_layers < 0 || cfg.head_layers > static_cast<int>(cfg.dims.size()) - 1)
        throw ConfigError("model.head_layers: out of range");

    std::string var = r.get_str("attack", "variant", "sus-f");
    if (var == "sus-f")
        cfg.variant = Variant::sus_f;
    else if (var == "sus-r")
        cfg.variant = Variant::sus_r;
    else
        throw ConfigError("attack.variant: expected sus-f or sus-r, got '" + var + "'");
    std::string tau_def =
        cfg.variant == Variant::sus_f ? "fixed:0" : "percentile:75";
    std::string tau = r.get_str("attack", "tau", tau_def);
    {
        std::size_t colon = tau.find(':');
        std::string kind = tau.substr(0, colon);
        std::string val = colon == std::string::npos ? "" : tau.substr(colon + 1);
        double v = val.empty() ? 0.0 : r.parse_double("attack.tau", val);
        if (kind == "fixed")
            cfg.tau = TauPolicy::fixed(v);
        else if (kind == "percentile")
            cfg.tau = TauPolicy::percentile(v);
        else
            throw ConfigError("attack.tau: expected fixed:<v> or percentile:<p>, got '" + tau +
                              "'");
    }
    cfg.margin_delta = r.get_double("attack", "delta", cfg.margin_delta);
    if (!(cfg.margin_delta > 0.0 && cfg.margin_delta < 1.0))
        throw ConfigError("attack.delta: must be in (0,1)");
    std::string hide = r.get_str("attack", "hide", "all");
    if (hide == "all")
        cfg.hide = HideScope::all_layers;
    else if (hide == "head")
        cfg.hide = HideScope::head_only;
    else
        throw ConfigError("attack.hide: expected all or head, got '" + hide + "'");
    if (cfg.hide == HideScope::head_only && cfg.head_layers == 0)
        throw ConfigError("attack.hide: head requires model.head_layers > 0");

    cfg.phase1 = detail::read_train_section(r, "phase1", cfg.phase1);
    cfg.phase2 = detail::read_train_section(r, "phase2", cfg.phase2);

    cfg.victim_permute = r.get_bool("victim", "permute", cfg.victim_permute);
    std::string lib = r.get_str("victim", "library", "full");
    if (lib == "full")
        cfg.victim_library = VictimPipeline::Library::full_layers;
    else if (lib == "fc_only")
        cfg.victim_library = VictimPipeline::Library::fc_only;
    else
        throw ConfigError("victim.library: expected full or fc_only, got '" + lib + "'");

    cfg.finetune = detail::read_train_section(r, "finetune", cfg.finetune);
    cfg.finetune_fraction = r.get_double("finetune", "fraction", cfg.finetune_fraction);
    if (!(cfg.finetune_fraction > 0.0 && cfg.finetune_fraction <= 1.0))
        throw ConfigError("finetune.fraction: must be in (0,1]");

    cfg.out_dir = r.get_str("output", "dir", cfg.out_dir);

    r.check_unknown({"dataset", "trigger", "model", "attack", "phase1", "phase2", "victim",
                     "finetune", "output"});
    return cfg;
}

inline RunConfig parse_run_config_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config file: " + path);
    return parse_run_config(is);
}

/// Override every seed in the config from one base value.
inline void override_seeds(RunConfig& cfg, std::uint64_t seed) {
    cfg.data_seed = seed;
    cfg.init_seed = mix_seed(seed, 0xa0);
    cfg.phase1.seed = mix_seed(seed, 0xa1);
    cfg.phase2.seed = mix_seed(seed, 0xa2);
    cfg.finetune.seed = mix_seed(seed, 0xa3);
    cfg.pattern_seed = mix_seed(seed, 0xa4);
}

namespace detail {

inline void emit(std::ostringstream& os, const std::string& key, const std::string& v) {
    os << key << '=' << v << '\n';
}

inline std::string num(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace detail

/// Canonical serialization: every semantic field, sorted, with normalized
/// numerics. Whitespace, comments, key order, and defaults made explicit in
/// the source file do not change it.
inline std::string canonical_config(const RunConfig& c) {
    std::ostringstream os;
    detail::emit(os, "attack.delta", detail::num(c.margin_delta));
    detail::emit(os, "attack.hide", c.hide == HideScope::all_layers ? "all" : "head");
    detail::emit(os, "attack.tau",
                 std::string(c.tau.kind == TauPolicy::Kind::fixed ? "fixed:" : "percentile:") +
                     detail::num(c.tau.value));
    detail::emit(os, "attack.variant", variant_name(c.variant));
    detail::emit(os, "dataset.count", std::to_string(c.train_count));
    detail::emit(os, "dataset.kind", c.dataset_kind);
    detail::emit(os, "dataset.path", c.dataset_path);
    detail::emit(os, "dataset.poison_fraction", detail::num(c.poison_fraction));
    detail::emit(os, "dataset.seed", std::to_string(c.data_seed));
    detail::emit(os, "dataset.test_count", std::to_string(c.test_count));
    detail::emit(os, "finetune.batch_size", std::to_string(c.finetune.batch_size));
    detail::emit(os, "finetune.epochs", std::to_string(c.finetune.epochs));
    detail::emit(os, "finetune.fraction", detail::num(c.finetune_fraction));
    detail::emit(os, "finetune.learning_rate", detail::num(c.finetune.learning_rate));
    detail::emit(os, "finetune.momentum", detail::num(c.finetune.momentum));
    detail::emit(os, "finetune.seed", std::to_string(c.finetune.seed));
    {
        std::string dims;
        for (std::size_t i = 0; i < c.dims.size(); ++i)
            dims += (i ? "," : "") + std::to_string(c.dims[i]);
        detail::emit(os, "model.dims", dims);
    }
    detail::emit(os, "model.head_layers", std::to_string(c.head_layers));
    detail::emit(os, "model.init_seed", std::to_string(c.init_seed));
    detail::emit(os, "phase1.batch_size", std::to_string(c.phase1.batch_size));
    detail::emit(os, "phase1.epochs", std::to_string(c.phase1.epochs));
    detail::emit(os, "phase1.learning_rate", detail::num(c.phase1.learning_rate));
    detail::emit(os, "phase1.momentum", detail::num(c.phase1.momentum));
    detail::emit(os, "phase1.seed", std::to_string(c.phase1.seed));
    detail::emit(os, "phase2.batch_size", std::to_string(c.phase2.batch_size));
    detail::emit(os, "phase2.epochs", std::to_string(c.phase2.epochs));
    detail::emit(os, "phase2.learning_rate", detail::num(c.phase2.learning_rate));
    detail::emit(os, "phase2.momentum", detail::num(c.phase2.momentum));
    detail::emit(os, "phase2.seed", std::to_string(c.phase2.seed));
    detail::emit(os, "trigger.kind",
                 c.trigger.kind == TriggerSpec::Kind::corner_patch  ? "corner_patch"
                 : c.trigger.kind == TriggerSpec::Kind::blend       ? "blend"
                                                                    : "random_patch");
    detail::emit(os, "trigger.pattern_seed", std::to_string(c.pattern_seed));
    detail::emit(os, "trigger.per_sample_position", c.trigger.per_sample_position ? "1" : "0");
    detail::emit(os, "trigger.ratio", detail::num(c.trigger.blend_ratio));
    detail::emit(os, "trigger.size", std::to_string(c.trigger.patch_size));
    detail::emit(os, "trigger.target", std::to_string(c.trigger.target));
    detail::emit(os, "trigger.value", detail::num(c.trigger.patch_value));
    detail::emit(os, "victim.library",
                 c.victim_library == VictimPipeline::Library::full_layers ? "full" : "fc_only");
    detail::emit(os, "victim.permute", c.victim_permute ? "1" : "0");
    return os.str();
}

/// FNV-1a 64 over the canonical serialization; identifies a run.
inline std::uint64_t config_hash(const RunConfig& c) {
    std::string s = canonical_config(c);
    std::uint64_t h = 14695981039346656037ULL;
    for (unsigned char b : s) {
        h ^= b;
        h *= 1099511628211ULL;
    }
    return h;
}

}  // namespace suslab
