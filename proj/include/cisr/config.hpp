#pragma once

// Canonical key = value text form of ModelConfig.
//
// Parsing starts from a preset (`preset = tiny|full|toy`, default tiny) at
// the given scale and applies every other key on top. Unknown or repeated
// keys are errors. Serialization writes every key, in a fixed order, with
// round-trip exact numbers, so parse(serialize(c)) == c.

#include <charconv>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "cisr/unfold.hpp"

namespace cisr {

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

namespace detail {

inline std::string fmt_double(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

inline std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

inline double parse_double(const std::string& key, const std::string& v) {
    double out = 0.0;
    auto res = std::from_chars(v.data(), v.data() + v.size(), out);
    if (res.ec != std::errc() || res.ptr != v.data() + v.size())
        throw ConfigError("config key '" + key + "': expected a number, got '" + v + "'");
    return out;
}

inline long long parse_int(const std::string& key, const std::string& v) {
    long long out = 0;
    auto res = std::from_chars(v.data(), v.data() + v.size(), out);
    if (res.ec != std::errc() || res.ptr != v.data() + v.size())
        throw ConfigError("config key '" + key + "': expected an integer, got '" + v + "'");
    return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true") return true;
    if (v == "false") return false;
    throw ConfigError("config key '" + key + "': expected true or false, got '" + v + "'");
}

template <class E>
struct EnumNames;

template <>
struct EnumNames<Topology> {
    static constexpr std::pair<Topology, const char*> table[] = {{Topology::parallel_series, "parallel_series"},
                                                                 {Topology::arm_then_rem, "arm_then_rem"},
                                                                 {Topology::rem_then_arm, "rem_then_arm"},
                                                                 {Topology::parallel_fusion, "parallel_fusion"}};
};
template <>
struct EnumNames<SkipMode> {
    static constexpr std::pair<SkipMode, const char*> table[] = {{SkipMode::adaptive, "adaptive"},
                                                                 {SkipMode::z_only, "z_only"},
                                                                 {SkipMode::g_only, "g_only"},
                                                                 {SkipMode::u_only, "u_only"},
                                                                 {SkipMode::none, "none"}};
};
template <>
struct EnumNames<Boundary> {
    static constexpr std::pair<Boundary, const char*> table[] = {{Boundary::replicate, "replicate"},
                                                                 {Boundary::periodic, "periodic"}};
};

template <class E>
std::string enum_name(E e) {
    for (auto [v, name] : EnumNames<E>::table)
        if (v == e) return name;
    throw ConfigError("unnamed enum value");
}

template <class E>
E parse_enum(const std::string& key, const std::string& v) {
    std::string options;
    for (auto [e, name] : EnumNames<E>::table) {
        if (v == name) return e;
        options += options.empty() ? name : std::string("|") + name;
    }
    throw ConfigError("config key '" + key + "': expected one of " + options + ", got '" + v + "'");
}

using KeyValues = std::vector<std::pair<std::string, std::string>>;

inline void module_keys(KeyValues& kv, const std::string& p, const ModuleSpec& m) {
    kv.emplace_back(p + ".n_groups", std::to_string(m.backbone.n_groups));
    kv.emplace_back(p + ".n_blocks", std::to_string(m.backbone.n_blocks));
    kv.emplace_back(p + ".n_channels", std::to_string(m.backbone.n_channels));
    kv.emplace_back(p + ".reduction", std::to_string(m.backbone.reduction));
    kv.emplace_back(p + ".patch_radius", std::to_string(m.nonlocal.patch_radius));
    kv.emplace_back(p + ".window_radius", std::to_string(m.nonlocal.window_radius));
    kv.emplace_back(p + ".epsilon_h", fmt_double(m.nonlocal.epsilon_h));
    kv.emplace_back(p + ".block_size", std::to_string(m.blocking.block_size));
    kv.emplace_back(p + ".alpha", fmt_double(m.blocking.alpha));
    kv.emplace_back(p + ".tau", fmt_double(m.blocking.tau));
    kv.emplace_back(p + ".disable_nonlocal", m.disable_nonlocal ? "true" : "false");
    kv.emplace_back(p + ".fixed_h", m.fixed_h ? fmt_double(*m.fixed_h) : "none");
    kv.emplace_back(p + ".skip_mode", enum_name(m.skip_mode));
    kv.emplace_back(p + ".boundary", enum_name(m.boundary));
}

inline KeyValues to_key_values(const ModelConfig& c) {
    KeyValues kv;
    kv.emplace_back("scale", std::to_string(c.scale));
    kv.emplace_back("iterations", std::to_string(c.iterations));
    std::string rho;
    for (std::size_t j = 0; j < c.rho.size(); ++j) rho += (j ? "," : "") + fmt_double(c.rho[j]);
    kv.emplace_back("rho", rho);
    kv.emplace_back("gamma", fmt_double(c.gamma));
    kv.emplace_back("share_params", c.share_params ? "true" : "false");
    kv.emplace_back("topology", enum_name(c.topology));
    kv.emplace_back("truncate_unroll", c.truncate_unroll ? "true" : "false");
    kv.emplace_back("seed", std::to_string(c.seed));
    kv.emplace_back("lr", fmt_double(c.optimizer.lr));
    kv.emplace_back("beta1", fmt_double(c.optimizer.beta1));
    kv.emplace_back("beta2", fmt_double(c.optimizer.beta2));
    kv.emplace_back("eps", fmt_double(c.optimizer.eps));
    kv.emplace_back("n_patches", std::to_string(c.n_patches));
    kv.emplace_back("patch_size", std::to_string(c.patch_size));
    kv.emplace_back("max_steps", std::to_string(c.max_steps));
    kv.emplace_back("steps_per_epoch", std::to_string(c.steps_per_epoch));
    kv.emplace_back("patience", std::to_string(c.patience));
    module_keys(kv, "arm", c.arm);
    module_keys(kv, "rem", c.rem);
    return kv;
}

inline void apply_module_key(ModuleSpec& m, const std::string& key, const std::string& field, const std::string& v) {
    auto as_int = [&] { return static_cast<int>(parse_int(key, v)); };
    if (field == "n_groups") m.backbone.n_groups = as_int();
    else if (field == "n_blocks") m.backbone.n_blocks = as_int();
    else if (field == "n_channels") m.backbone.n_channels = as_int();
    else if (field == "reduction") m.backbone.reduction = as_int();
    else if (field == "patch_radius") m.nonlocal.patch_radius = as_int();
    else if (field == "window_radius") m.nonlocal.window_radius = as_int();
    else if (field == "epsilon_h") m.nonlocal.epsilon_h = parse_double(key, v);
    else if (field == "block_size") m.blocking.block_size = as_int();
    else if (field == "alpha") m.blocking.alpha = parse_double(key, v);
    else if (field == "tau") m.blocking.tau = parse_double(key, v);
    else if (field == "disable_nonlocal") m.disable_nonlocal = parse_bool(key, v);
    else if (field == "fixed_h") m.fixed_h = v == "none" ? std::nullopt : std::optional<double>(parse_double(key, v));
    else if (field == "skip_mode") m.skip_mode = parse_enum<SkipMode>(key, v);
    else if (field == "boundary") m.boundary = parse_enum<Boundary>(key, v);
    else throw ConfigError("unknown config key '" + key + "'");
}

}  // namespace detail

inline std::string serialize_config(const ModelConfig& c) {
    std::string out;
    for (const auto& [k, v] : detail::to_key_values(c)) out += k + " = " + v + "\n";
    return out;
}

inline ModelConfig parse_config(std::string_view text) {
    std::vector<std::pair<std::string, std::string>> entries;
    std::map<std::string, int> seen;
    std::istringstream in{std::string(text)};
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        const std::string t = detail::trim(line);
        if (t.empty()) continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) + ": expected 'key = value'");
        std::string key = detail::trim(std::string_view(t).substr(0, eq));
        std::string value = detail::trim(std::string_view(t).substr(eq + 1));
        if (key.empty()) throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
        if (seen[key]++) throw ConfigError("config key '" + key + "' given twice");
        entries.emplace_back(std::move(key), std::move(value));
    }

    std::string preset = "tiny";
    int scale = 2;
    for (const auto& [k, v] : entries) {
        if (k == "preset") preset = v;
        if (k == "scale") scale = static_cast<int>(detail::parse_int(k, v));
    }
    if (scale < 2 || scale > 4) throw ConfigError("config key 'scale': must be 2, 3 or 4");
    ModelConfig c;
    if (preset == "tiny") c = ModelConfig::tiny(scale);
    else if (preset == "full") c = ModelConfig::full(scale);
    else if (preset == "toy") c = ModelConfig::toy(scale);
    else throw ConfigError("config key 'preset': expected tiny|full|toy, got '" + preset + "'");

    bool rho_given = seen.count("rho") > 0;
    for (const auto& [k, v] : entries) {
        auto as_int = [&] { return static_cast<int>(detail::parse_int(k, v)); };
        if (k == "preset" || k == "scale") continue;
        if (k == "iterations") {
            c.iterations = as_int();
            if (!rho_given && c.iterations >= 1) c.rho = default_rho(c.iterations);
        } else if (k == "rho") {
            c.rho.clear();
            std::string item;
            std::istringstream items(v);
            while (std::getline(items, item, ',')) c.rho.push_back(detail::parse_double(k, detail::trim(item)));
        } else if (k == "gamma") c.gamma = detail::parse_double(k, v);
        else if (k == "share_params") c.share_params = detail::parse_bool(k, v);
        else if (k == "topology") c.topology = detail::parse_enum<Topology>(k, v);
        else if (k == "truncate_unroll") c.truncate_unroll = detail::parse_bool(k, v);
        else if (k == "seed") c.seed = static_cast<std::uint64_t>(detail::parse_int(k, v));
        else if (k == "lr") c.optimizer.lr = detail::parse_double(k, v);
        else if (k == "beta1") c.optimizer.beta1 = detail::parse_double(k, v);
        else if (k == "beta2") c.optimizer.beta2 = detail::parse_double(k, v);
        else if (k == "eps") c.optimizer.eps = detail::parse_double(k, v);
        else if (k == "n_patches") c.n_patches = as_int();
        else if (k == "patch_size") c.patch_size = as_int();
        else if (k == "max_steps") c.max_steps = as_int();
        else if (k == "steps_per_epoch") c.steps_per_epoch = as_int();
        else if (k == "patience") c.patience = as_int();
        else if (k.rfind("arm.", 0) == 0) detail::apply_module_key(c.arm, k, k.substr(4), v);
        else if (k.rfind("rem.", 0) == 0) detail::apply_module_key(c.rem, k, k.substr(4), v);
        else throw ConfigError("unknown config key '" + k + "'");
    }
    try {
        c.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("invalid config: ") + e.what());
    }
    return c;
}

/// First architecture key on which two configs disagree, if any. Training
/// schedule and optimizer settings are not architecture.
inline std::optional<std::string> architecture_mismatch(const ModelConfig& a, const ModelConfig& b) {
    static const std::vector<std::string> schedule = {"gamma", "rho", "truncate_unroll", "seed", "lr",
                                                      "beta1", "beta2", "eps", "n_patches", "patch_size",
                                                      "max_steps", "steps_per_epoch", "patience"};
    const auto ka = detail::to_key_values(a);
    const auto kb = detail::to_key_values(b);
    for (std::size_t i = 0; i < ka.size(); ++i) {
        if (std::find(schedule.begin(), schedule.end(), ka[i].first) != schedule.end()) continue;
        if (ka[i].first == "iterations" && a.share_params && b.share_params) continue;
        if (ka[i].second != kb[i].second)
            return ka[i].first + " (" + ka[i].second + " vs " + kb[i].second + ")";
    }
    return std::nullopt;
}

}  // namespace cisr
