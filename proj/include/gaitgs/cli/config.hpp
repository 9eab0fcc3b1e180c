#pragma once

/// Flat dotted-key run configuration.
///
/// A run is described by a single key=value file (one assignment per line,
/// `#` comments). Every key has a documented default; presets are overlays
/// on the defaults; the config file overlays the preset; explicit overrides
/// overlay the file. Any key outside the schema is a hard error, so typos
/// cannot silently fall back to defaults.
///
/// The merged ("effective") config has a canonical serialization — sorted
/// `key = value` lines — and a 64-bit FNV-1a hash over it. The hash is
/// stamped into every checkpoint, which lets evaluation refuse a checkpoint
/// whose training configuration differs from the one on disk next to it.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "gaitgs/nn/model.hpp"
#include "gaitgs/train/trainer.hpp"

namespace gaitgs::cli {

using KvMap = std::map<std::string, std::string>;

/// Every known key with its default value. This is the whole schema: merge
/// rejects keys that do not appear here.
inline const KvMap& config_defaults() {
    static const KvMap defaults = {
        // Dataset location and split protocol.
        {"data.dir", ""},
        {"data.protocol", "desk"},
        // Backbone.
        {"model.stem_channels", "32"},
        {"model.stage_channels", "64,64,128"},
        {"model.pool_positions", "1"},
        {"model.stem_parts", "4"},
        {"model.slope", "0.01"},
        {"model.coarse_injections", "true"},
        // Head.
        {"model.parts", "32"},
        {"model.pe_kernel", "7"},
        {"model.pe_strategy", "channel-grouped"},
        {"model.tf_layers", "3"},
        {"model.tf_heads", "8"},
        {"model.mcm_window", "3"},
        {"model.use_fine", "true"},
        {"model.use_coarse", "true"},
        {"model.use_global", "true"},
        {"model.use_local", "true"},
        {"model.num_views", "11"},
        {"model.num_conditions", "0"},
        {"model.gem_p_init", "3"},
        // Optimization.
        {"train.base_lr", "1e-4"},
        {"train.transformer_lr_multiplier", "0.1"},
        {"train.weight_decay", "5e-4"},
        {"train.margin", "0.25"},
        {"train.alpha", "0.2"},
        {"train.batch_subjects", "8"},
        {"train.batch_clips", "4"},
        {"train.clip_len", "30"},
        {"train.iterations", "2000"},
        {"train.checkpoint_interval", "500"},
        {"train.schedule", ""},  // comma list of iteration:lr drops
        {"train.seed", "7"},
        // Evaluation.
        {"eval.ranks", "1,5,10,20"},
        {"eval.exclude_identical_view", "true"},
    };
    return defaults;
}

/// Named hyperparameter bundles. Each overlays only the keys it pins.
inline KvMap preset_overlay(const std::string& name) {
    if (name == "casia-b")
        return {
            {"data.protocol", "casia-b"},
            {"model.num_views", "11"},
            {"train.batch_subjects", "8"},
            {"train.batch_clips", "8"},
            {"train.clip_len", "30"},
            {"train.iterations", "80000"},
            {"train.schedule", "70000:1e-5"},
        };
    if (name == "oumvlp")
        return {
            {"model.stage_channels", "64,64,128,256"},
            {"model.num_views", "14"},
            {"train.batch_subjects", "32"},
            {"train.batch_clips", "8"},
            {"train.iterations", "210000"},
            {"train.schedule", "150000:1e-5,200000:1e-6"},
        };
    if (name == "grew")
        return {
            {"model.stage_channels", "64,64,128,256"},
            {"model.num_views", "4"},
            {"train.batch_subjects", "32"},
            {"train.batch_clips", "4"},
            {"train.iterations", "190000"},
            {"train.schedule", "150000:1e-5"},
        };
    if (name == "desk")
        return {
            {"model.stem_channels", "4"},
            {"model.stage_channels", "4,8"},
            {"model.parts", "4"},
            {"model.tf_layers", "1"},
            {"model.tf_heads", "2"},
            {"model.num_views", "4"},
            {"model.num_conditions", "2"},
            {"train.batch_subjects", "4"},
            {"train.batch_clips", "2"},
            {"train.clip_len", "15"},
            {"train.iterations", "2000"},
            {"train.checkpoint_interval", "500"},
            {"train.schedule", "1500:3e-5"},
        };
    throw std::invalid_argument("config error: unknown preset '" + name +
                                "' (expected casia-b | oumvlp | grew | desk)");
}

namespace detail {

inline std::string trim(std::string s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

}  // namespace detail

/// Parse `key = value` text. Malformed lines are hard errors.
inline KvMap parse_config_text(const std::string& text, const std::string& origin) {
    KvMap kv;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("config error: " + origin + ":" +
                                        std::to_string(lineno) + ": expected key = value, got '" +
                                        line + "'");
        const std::string key = detail::trim(line.substr(0, eq));
        const std::string value = detail::trim(line.substr(eq + 1));
        if (key.empty())
            throw std::invalid_argument("config error: " + origin + ":" +
                                        std::to_string(lineno) + ": empty key");
        if (kv.count(key))
            throw std::invalid_argument("config error: " + origin + ":" +
                                        std::to_string(lineno) + ": duplicate key '" + key + "'");
        kv[key] = value;
    }
    return kv;
}

inline KvMap read_config_file(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw std::invalid_argument("config error: cannot open " + path.string());
    std::ostringstream buf;
    buf << f.rdbuf();
    return parse_config_text(buf.str(), path.filename().string());
}

/// One applied override, for logging which flag displaced which value.
struct ConfigOverride {
    std::string key;
    std::string old_value;
    std::string new_value;
};

/// Merge result: the effective map plus the override log.
struct MergedConfig {
    KvMap effective;
    std::vector<ConfigOverride> overrides;  ///< later layers displacing earlier ones
};

/// Layered merge: defaults <- preset <- file <- flag overrides. Unknown keys
/// anywhere are a hard error.
inline MergedConfig merge_config(const KvMap& preset, const KvMap& file, const KvMap& flags) {
    MergedConfig m;
    m.effective = config_defaults();
    const auto apply = [&m](const KvMap& layer, const char* origin, bool log) {
        for (const auto& [key, value] : layer) {
            auto it = m.effective.find(key);
            if (it == m.effective.end())
                throw std::invalid_argument("config error: unknown key '" + key + "' (from " +
                                            origin + ")");
            if (log && it->second != value) m.overrides.push_back({key, it->second, value});
            it->second = value;
        }
    };
    apply(preset, "preset", false);
    apply(file, "config file", false);
    apply(flags, "command line", true);
    return m;
}

/// Canonical form: sorted `key = value` lines (KvMap iteration is sorted).
inline std::string canonical_config(const KvMap& kv) {
    std::string out;
    for (const auto& [key, value] : kv) out += key + " = " + value + "\n";
    return out;
}

/// 64-bit FNV-1a over the canonical serialization, as 16 hex digits.
/// `eval.*` keys are excluded: they do not shape the trained artifact, so
/// re-ranking an existing checkpoint with different ks must not trip the
/// checkpoint/config mismatch guard.
inline std::string config_hash(const KvMap& kv) {
    KvMap hashed;
    for (const auto& [key, value] : kv)
        if (key.rfind("eval.", 0) != 0) hashed.emplace(key, value);
    const std::string text = canonical_config(hashed);
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (const unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    static const char* digits = "0123456789abcdef";
    std::string hex(16, '0');
    for (int i = 15; i >= 0; --i) {
        hex[static_cast<std::size_t>(i)] = digits[h & 0xf];
        h >>= 4;
    }
    return hex;
}

inline void write_config(const KvMap& kv, const std::filesystem::path& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot open " + path.string() + " for writing");
    f << canonical_config(kv);
    if (!f) throw std::runtime_error("write failed for " + path.string());
}

// ---------------------------------------------------------------------------
// Typed accessors. Every error names the key so a bad file is self-diagnosing.
// ---------------------------------------------------------------------------

namespace detail {

[[noreturn]] inline void bad_value(const std::string& key, const std::string& value,
                                   const char* want) {
    throw std::invalid_argument("config error: key '" + key + "' needs " + want + ", got '" +
                                value + "'");
}

}  // namespace detail

inline const std::string& get_string(const KvMap& kv, const std::string& key) {
    const auto it = kv.find(key);
    if (it == kv.end())
        throw std::invalid_argument("config error: missing key '" + key + "'");
    return it->second;
}

inline std::int64_t get_int(const KvMap& kv, const std::string& key) {
    const std::string& v = get_string(kv, key);
    try {
        std::size_t used = 0;
        const long long n = std::stoll(v, &used);
        if (used != v.size()) detail::bad_value(key, v, "an integer");
        return n;
    } catch (const std::invalid_argument&) {
        detail::bad_value(key, v, "an integer");
    } catch (const std::out_of_range&) {
        detail::bad_value(key, v, "an integer");
    }
}

inline double get_real(const KvMap& kv, const std::string& key) {
    const std::string& v = get_string(kv, key);
    try {
        std::size_t used = 0;
        const double x = std::stod(v, &used);
        if (used != v.size()) detail::bad_value(key, v, "a real number");
        return x;
    } catch (const std::invalid_argument&) {
        detail::bad_value(key, v, "a real number");
    } catch (const std::out_of_range&) {
        detail::bad_value(key, v, "a real number");
    }
}

inline bool get_bool(const KvMap& kv, const std::string& key) {
    const std::string& v = get_string(kv, key);
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    detail::bad_value(key, v, "true or false");
}

inline std::vector<std::string> split_list(const std::string& text) {
    std::vector<std::string> out;
    std::string item;
    std::istringstream in(text);
    while (std::getline(in, item, ',')) {
        item = detail::trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

inline std::vector<std::int64_t> get_int_list(const KvMap& kv, const std::string& key) {
    std::vector<std::int64_t> out;
    for (const auto& item : split_list(get_string(kv, key))) {
        try {
            std::size_t used = 0;
            out.push_back(std::stoll(item, &used));
            if (used != item.size()) throw std::invalid_argument("tail");
        } catch (const std::exception&) {
            detail::bad_value(key, get_string(kv, key), "a comma list of integers");
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Materialization into the library config structs.
// ---------------------------------------------------------------------------

inline nn::ModelConfig to_model_config(const KvMap& kv) {
    nn::ModelConfig m;
    m.backbone.stem_channels = get_int(kv, "model.stem_channels");
    m.backbone.stage_channels = get_int_list(kv, "model.stage_channels");
    m.backbone.pool_positions.clear();
    for (const std::int64_t p : get_int_list(kv, "model.pool_positions"))
        m.backbone.pool_positions.push_back(static_cast<int>(p));
    m.backbone.stem_parts = get_int(kv, "model.stem_parts");
    m.backbone.slope = get_real(kv, "model.slope");
    m.backbone.coarse_injections = get_bool(kv, "model.coarse_injections");
    m.parts = get_int(kv, "model.parts");
    m.pe_kernel = get_int(kv, "model.pe_kernel");
    m.pe_strategy = nn::parse_pe_strategy(get_string(kv, "model.pe_strategy"));
    m.tf_layers = get_int(kv, "model.tf_layers");
    m.tf_heads = get_int(kv, "model.tf_heads");
    m.mcm_window = get_int(kv, "model.mcm_window");
    m.use_fine = get_bool(kv, "model.use_fine");
    m.use_coarse = get_bool(kv, "model.use_coarse");
    m.use_global = get_bool(kv, "model.use_global");
    m.use_local = get_bool(kv, "model.use_local");
    m.num_views = get_int(kv, "model.num_views");
    m.num_conditions = get_int(kv, "model.num_conditions");
    m.gem_p_init = get_real(kv, "model.gem_p_init");
    return m;
}

/// Parse "iteration:lr,iteration:lr" into the drop schedule.
inline std::vector<train::LrDrop> parse_schedule(const std::string& text) {
    std::vector<train::LrDrop> out;
    for (const auto& item : split_list(text)) {
        const auto colon = item.find(':');
        if (colon == std::string::npos)
            throw std::invalid_argument("config error: bad schedule entry '" + item +
                                        "' (expected iteration:lr)");
        try {
            train::LrDrop d;
            d.iteration = std::stoll(item.substr(0, colon));
            d.lr = std::stod(item.substr(colon + 1));
            out.push_back(d);
        } catch (const std::exception&) {
            throw std::invalid_argument("config error: bad schedule entry '" + item +
                                        "' (expected iteration:lr)");
        }
    }
    return out;
}

inline train::TrainConfig to_train_config(const KvMap& kv) {
    train::TrainConfig t;
    t.base_lr = get_real(kv, "train.base_lr");
    t.transformer_lr_multiplier = get_real(kv, "train.transformer_lr_multiplier");
    t.weight_decay = get_real(kv, "train.weight_decay");
    t.margin = get_real(kv, "train.margin");
    t.alpha = get_real(kv, "train.alpha");
    t.batch_subjects = get_int(kv, "train.batch_subjects");
    t.batch_clips = get_int(kv, "train.batch_clips");
    t.clip_len = get_int(kv, "train.clip_len");
    t.iterations = get_int(kv, "train.iterations");
    t.checkpoint_interval = get_int(kv, "train.checkpoint_interval");
    t.schedule = parse_schedule(get_string(kv, "train.schedule"));
    t.seed = static_cast<std::uint64_t>(get_int(kv, "train.seed"));
    t.model = to_model_config(kv);
    return t;
}

inline std::vector<int> to_ranks(const KvMap& kv) {
    std::vector<int> ks;
    for (const std::int64_t k : get_int_list(kv, "eval.ranks")) ks.push_back(static_cast<int>(k));
    if (ks.empty())
        throw std::invalid_argument("config error: key 'eval.ranks' needs at least one rank");
    return ks;
}

}  // namespace gaitgs::cli
