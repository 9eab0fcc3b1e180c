#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "gaitgs/core/autodiff.hpp"
#include "gaitgs/core/tensor.hpp"
#include "gaitgs/data/sampler.hpp"
#include "gaitgs/data/silhouette.hpp"
#include "gaitgs/nn/model.hpp"

// Test-time pipeline: full-sequence descriptor extraction, gallery/probe
// rank-k retrieval with identical-view exclusion and cross-view cells, and
// feature export for external analysis.

namespace gaitgs::eval {

using gaitgs::ad::Tape;

/// Full-sequence descriptor [parts, dim]: the whole sequence is fed through
/// the network — no clip sampling at test time.
template <typename T>
Tensor<T> extract(const nn::Model<T>& model, const data::SilhouetteSequence& seq) {
    const auto t_raw = static_cast<std::int64_t>(seq.frames.size());
    if (t_raw < 3)
        throw std::runtime_error("sequence too short: " + std::to_string(t_raw) +
                                 " frames, the coarse branch needs at least 3");
    Tape<T> tape;
    auto* x = tape.constant(data::clips_to_tensor<T>({seq}));
    const auto out = model.forward(tape, x);
    const Tensor<T>& d = out.descriptor->value;  // [1, P, D]
    Tensor<T> flat(Shape{d.dim(1), d.dim(2)});
    std::copy(d.begin(), d.end(), flat.begin());
    return flat;
}

/// Deterministic total order on sample identity, used as the ranking
/// tie-break so gallery order never influences results.
inline std::string meta_key(const data::SampleMeta& m) {
    std::ostringstream os;
    os << m.subject_id << '/' << m.condition << '/' << m.view << '/' << std::setw(6)
       << std::setfill('0') << m.sequence_index;
    return os.str();
}

struct FeatureRecord {
    data::SampleMeta meta;
    std::vector<float> feat;
};

/// Flattened descriptors plus their sample identities.
struct FeatureStore {
    std::vector<FeatureRecord> records;

    std::int64_t dim() const {
        return records.empty() ? 0 : static_cast<std::int64_t>(records.front().feat.size());
    }

    template <typename T>
    void add(const data::SampleMeta& meta, const Tensor<T>& descriptor) {
        FeatureRecord r;
        r.meta = meta;
        r.feat.reserve(static_cast<std::size_t>(descriptor.numel()));
        for (const T v : descriptor) r.feat.push_back(static_cast<float>(v));
        records.push_back(std::move(r));
        if (static_cast<std::int64_t>(records.back().feat.size()) != dim())
            throw std::invalid_argument("feature store requires a single dimensionality");
    }

    void validate() const {
        std::set<std::string> keys;
        for (const auto& r : records) {
            if (static_cast<std::int64_t>(r.feat.size()) != dim())
                throw std::runtime_error("feature store holds mixed dimensionalities");
            if (!keys.insert(meta_key(r.meta)).second)
                throw std::runtime_error("duplicate feature store entry: " + meta_key(r.meta));
        }
    }
};

/// Squared Euclidean distance: ranking by it equals ranking by the
/// Euclidean distance itself, with one sqrt saved per pair.
inline double feature_distance2(const std::vector<float>& a, const std::vector<float>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
        s += d * d;
    }
    return s;
}

/// One (probe condition, probe view, gallery view) cell of the table.
struct RankCell {
    std::string condition;
    std::string probe_view;
    std::string gallery_view;
    std::int64_t probes = 0;   ///< probes counted in the denominator
    std::int64_t invalid = 0;  ///< probes whose subject is absent from this gallery view
    std::map<int, double> acc;

    nlohmann::json to_json() const {
        nlohmann::json a;
        for (const auto& [k, v] : acc) a[std::to_string(k)] = v;
        return {{"condition", condition}, {"probe_view", probe_view},
                {"gallery_view", gallery_view}, {"probes", probes},
                {"invalid", invalid},     {"acc", a}};
    }
};

struct RankTable {
    std::vector<int> ks;
    std::vector<RankCell> cells;  ///< ordered by (condition, probe view, gallery view)
    std::int64_t invalid_total = 0;

    /// Condition means, gallery views averaged first (per probe view), then
    /// probe views — the accuracy-table convention.
    std::map<std::string, std::map<int, double>> mean_by_condition;
    /// Condition means as a flat average over all populated cells; differs
    /// from the above only under unbalanced galleries.
    std::map<std::string, std::map<int, double>> mean_flat_by_condition;

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["ks"] = ks;
        j["invalid_total"] = invalid_total;
        j["cells"] = nlohmann::json::array();
        for (const auto& c : cells) j["cells"].push_back(c.to_json());
        auto means = [](const std::map<std::string, std::map<int, double>>& m) {
            nlohmann::json out;
            for (const auto& [cond, by_k] : m)
                for (const auto& [k, v] : by_k) out[cond][std::to_string(k)] = v;
            return out;
        };
        j["mean"] = means(mean_by_condition);
        j["mean_flat"] = means(mean_flat_by_condition);
        return j;
    }

    /// Aligned text: one block per (condition, k), probe views as rows and
    /// gallery views as columns, the identical-view diagonal left blank.
    std::string to_text() const {
        std::ostringstream os;
        os << std::fixed << std::setprecision(3);
        std::set<std::string> conds, pviews, gviews;
        for (const auto& c : cells) {
            conds.insert(c.condition);
            pviews.insert(c.probe_view);
            gviews.insert(c.gallery_view);
        }
        auto cell_at = [&](const std::string& cond, const std::string& pv,
                           const std::string& gv) -> const RankCell* {
            for (const auto& c : cells)
                if (c.condition == cond && c.probe_view == pv && c.gallery_view == gv) return &c;
            return nullptr;
        };
        for (const auto& cond : conds) {
            for (const int k : ks) {
                os << "condition " << cond << ", rank-" << k << "\n";
                os << std::setw(14) << std::left << "probe\\gallery" << std::right;
                for (const auto& gv : gviews) os << std::setw(8) << gv;
                os << std::setw(8) << "mean" << "\n";
                for (const auto& pv : pviews) {
                    os << std::setw(14) << std::left << pv << std::right;
                    double sum = 0.0;
                    int n = 0;
                    for (const auto& gv : gviews) {
                        const RankCell* c = cell_at(cond, pv, gv);
                        if (c == nullptr || c->probes == 0) {
                            os << std::setw(8) << "-";
                        } else {
                            const double v = c->acc.at(k);
                            os << std::setw(8) << v;
                            sum += v;
                            ++n;
                        }
                    }
                    if (n > 0)
                        os << std::setw(8) << sum / n;
                    else
                        os << std::setw(8) << "-";
                    os << "\n";
                }
                const auto it = mean_by_condition.find(cond);
                if (it != mean_by_condition.end())
                    os << std::setw(14) << std::left << "mean" << std::right << std::setw(8)
                       << it->second.at(k) << "\n";
                os << "\n";
            }
        }
        return os.str();
    }
};

/// Gallery/probe retrieval. For each probe and each gallery view (the
/// probe's own view excluded unless `exclude_identical_view` is off),
/// gallery samples of that view are ranked by ascending distance with the
/// metadata key as tie-break; a probe scores at rank k when any of the k
/// nearest shares its subject. Probes whose subject is absent from a
/// gallery view are excluded from that cell's denominator and counted.
inline RankTable rank_k(const FeatureStore& gallery, const FeatureStore& probe,
                        std::vector<int> ks, bool exclude_identical_view = true) {
    if (gallery.records.empty()) throw std::invalid_argument("rank_k needs a nonempty gallery");
    if (ks.empty()) throw std::invalid_argument("rank_k needs at least one k");
    for (const int k : ks)
        if (k < 1) throw std::invalid_argument("rank_k: ranks must be >= 1");
    gallery.validate();
    probe.validate();
    if (!probe.records.empty() && gallery.dim() != probe.dim())
        throw std::invalid_argument("gallery and probe dimensionalities differ");
    std::sort(ks.begin(), ks.end());

    // Gallery records per view, pre-sorted by metadata key so equal
    // distances resolve identically no matter the input order.
    std::map<std::string, std::vector<const FeatureRecord*>> by_view;
    for (const auto& r : gallery.records) by_view[r.meta.view].push_back(&r);
    for (auto& [view, recs] : by_view)
        std::sort(recs.begin(), recs.end(), [](const FeatureRecord* a, const FeatureRecord* b) {
            return meta_key(a->meta) < meta_key(b->meta);
        });

    struct Tally {
        std::int64_t probes = 0, invalid = 0;
        std::map<int, std::int64_t> hits;
    };
    std::map<std::tuple<std::string, std::string, std::string>, Tally> tallies;

    for (const auto& p : probe.records) {
        for (const auto& [gview, recs] : by_view) {
            if (exclude_identical_view && gview == p.meta.view) continue;
            auto& tally = tallies[{p.meta.condition, p.meta.view, gview}];
            for (const int k : ks) tally.hits.try_emplace(k, 0);
            const bool subject_present =
                std::any_of(recs.begin(), recs.end(), [&](const FeatureRecord* g) {
                    return g->meta.subject_id == p.meta.subject_id;
                });
            if (!subject_present) {
                ++tally.invalid;
                continue;
            }
            std::vector<std::pair<double, const FeatureRecord*>> ranked;
            ranked.reserve(recs.size());
            for (const FeatureRecord* g : recs)
                ranked.emplace_back(feature_distance2(p.feat, g->feat), g);
            std::stable_sort(ranked.begin(), ranked.end(),
                             [](const auto& a, const auto& b) { return a.first < b.first; });
            ++tally.probes;
            std::size_t scan = 0;
            bool hit = false;
            for (const int k : ks) {
                for (; scan < std::min(ranked.size(), static_cast<std::size_t>(k)) && !hit; ++scan)
                    hit = ranked[scan].second->meta.subject_id == p.meta.subject_id;
                if (hit) ++tally.hits[k];
            }
        }
    }

    RankTable table;
    table.ks = ks;
    for (const auto& [key, tally] : tallies) {
        RankCell cell;
        std::tie(cell.condition, cell.probe_view, cell.gallery_view) = key;
        cell.probes = tally.probes;
        cell.invalid = tally.invalid;
        table.invalid_total += tally.invalid;
        for (const int k : ks)
            cell.acc[k] = tally.probes > 0
                              ? static_cast<double>(tally.hits.at(k)) /
                                    static_cast<double>(tally.probes)
                              : 0.0;
        table.cells.push_back(std::move(cell));
    }

    // Means per condition, both averaging orders.
    std::map<std::string, std::map<std::string, std::map<int, std::pair<double, int>>>> by_pv;
    std::map<std::string, std::map<int, std::pair<double, int>>> flat;
    for (const auto& c : table.cells) {
        if (c.probes == 0) continue;
        for (const auto& [k, v] : c.acc) {
            auto& pv = by_pv[c.condition][c.probe_view][k];
            pv.first += v;
            ++pv.second;
            auto& fl = flat[c.condition][k];
            fl.first += v;
            ++fl.second;
        }
    }
    for (const auto& [cond, views] : by_pv) {
        std::map<int, std::pair<double, int>> over_views;
        for (const auto& [pv, by_k] : views)
            for (const auto& [k, sc] : by_k) {
                auto& o = over_views[k];
                o.first += sc.first / sc.second;
                ++o.second;
            }
        for (const auto& [k, sc] : over_views)
            table.mean_by_condition[cond][k] = sc.first / sc.second;
    }
    for (const auto& [cond, by_k] : flat)
        for (const auto& [k, sc] : by_k)
            table.mean_flat_by_condition[cond][k] = sc.first / sc.second;
    return table;
}

/// Write the store as a raw little-endian f32 matrix (row per record, store
/// order) plus a JSON sidecar `<path>.json` with {n, dim, metadata}.
inline void export_features(const FeatureStore& store, const std::string& path) {
    if (store.records.empty()) throw std::invalid_argument("cannot export an empty store");
    store.validate();
    std::ofstream bin(path, std::ios::binary | std::ios::trunc);
    if (!bin) throw std::runtime_error("cannot open " + path + " for writing");
    for (const auto& r : store.records)
        bin.write(reinterpret_cast<const char*>(r.feat.data()),
                  static_cast<std::streamsize>(r.feat.size() * sizeof(float)));
    if (!bin) throw std::runtime_error("write failed for " + path);
    bin.close();

    nlohmann::json side;
    side["n"] = store.records.size();
    side["dim"] = store.dim();
    side["metadata"] = nlohmann::json::array();
    for (const auto& r : store.records)
        side["metadata"].push_back({{"subject", r.meta.subject_id},
                                    {"condition", r.meta.condition},
                                    {"condition_index", r.meta.condition_index},
                                    {"view", r.meta.view},
                                    {"view_index", r.meta.view_index},
                                    {"seq_index", r.meta.sequence_index}});
    std::ofstream js(path + ".json", std::ios::trunc);
    if (!js) throw std::runtime_error("cannot open " + path + ".json for writing");
    js << side.dump(2) << "\n";
    if (!js) throw std::runtime_error("write failed for " + path + ".json");
}

/// Inverse of export_features; the round-trip is bit-exact.
inline FeatureStore import_features(const std::string& path) {
    std::ifstream js(path + ".json");
    if (!js) throw std::runtime_error("cannot open " + path + ".json");
    nlohmann::json side = nlohmann::json::parse(js);
    const auto n = side.at("n").get<std::size_t>();
    const auto dim = side.at("dim").get<std::size_t>();

    std::ifstream bin(path, std::ios::binary);
    if (!bin) throw std::runtime_error("cannot open " + path);
    FeatureStore store;
    store.records.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        FeatureRecord r;
        const auto& m = side.at("metadata").at(i);
        r.meta.subject_id = m.at("subject").get<std::string>();
        r.meta.condition = m.at("condition").get<std::string>();
        r.meta.condition_index = m.at("condition_index").get<int>();
        r.meta.view = m.at("view").get<std::string>();
        r.meta.view_index = m.at("view_index").get<int>();
        r.meta.sequence_index = m.at("seq_index").get<int>();
        r.feat.resize(dim);
        bin.read(reinterpret_cast<char*>(r.feat.data()),
                 static_cast<std::streamsize>(dim * sizeof(float)));
        if (!bin) throw std::runtime_error("truncated feature matrix in " + path);
        store.records.push_back(std::move(r));
    }
    return store;
}

}  // namespace gaitgs::eval
