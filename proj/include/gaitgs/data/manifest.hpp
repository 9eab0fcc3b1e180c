#pragma once

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "gaitgs/data/silhouette.hpp"

// Dataset manifests: which sequences exist, their labels, and how a protocol
// partitions subjects into train and test. Manifest files are JSON with one
// entry per sequence: {path, subject, condition, view, seq_index, split}.

namespace gaitgs::data {

struct ManifestEntry {
    std::string path;  ///< sequence directory, relative to the dataset root
    SampleMeta meta;
    std::string split;  ///< "train" | "test"
};

struct DatasetManifest {
    std::vector<ManifestEntry> entries;
    std::string split;  ///< "train" | "test" | "all"
    std::string protocol_name;

    /// Sorted unique subject ids.
    std::vector<std::string> subjects() const {
        std::set<std::string> s;
        for (const auto& e : entries) s.insert(e.meta.subject_id);
        return {s.begin(), s.end()};
    }

    std::vector<std::string> views() const {
        std::set<std::string> s;
        for (const auto& e : entries) s.insert(e.meta.view);
        return {s.begin(), s.end()};
    }

    std::vector<std::string> conditions() const {
        std::set<std::string> s;
        for (const auto& e : entries) s.insert(e.meta.condition);
        return {s.begin(), s.end()};
    }

    /// Recompute condition/view indices from the sorted unique label sets.
    void reindex() {
        const auto vorder = views();
        const auto corder = conditions();
        auto rank = [](const std::vector<std::string>& order, const std::string& v) {
            return static_cast<int>(std::lower_bound(order.begin(), order.end(), v) -
                                    order.begin());
        };
        for (auto& e : entries) {
            e.meta.view_index = rank(vorder, e.meta.view);
            e.meta.condition_index = rank(corder, e.meta.condition);
        }
    }

    /// (subject, condition, view, seq_index) must identify an entry uniquely.
    void validate() const {
        std::set<std::string> seen;
        for (const auto& e : entries) {
            const std::string key = e.meta.subject_id + "/" + e.meta.condition + "/" +
                                    e.meta.view + "/" + std::to_string(e.meta.sequence_index);
            if (!seen.insert(key).second)
                throw std::runtime_error("duplicate manifest entry: " + key);
        }
    }

    DatasetManifest filter_split(const std::string& which) const {
        DatasetManifest out;
        out.split = which;
        out.protocol_name = protocol_name;
        for (const auto& e : entries)
            if (e.split == which) out.entries.push_back(e);
        return out;
    }
};

inline void save_manifest(const std::string& path, const DatasetManifest& m) {
    nlohmann::json j;
    j["protocol"] = m.protocol_name;
    j["split"] = m.split;
    auto& list = j["entries"] = nlohmann::json::array();
    for (const auto& e : m.entries)
        list.push_back({{"path", e.path},
                        {"subject", e.meta.subject_id},
                        {"condition", e.meta.condition},
                        {"view", e.meta.view},
                        {"seq_index", e.meta.sequence_index},
                        {"split", e.split}});
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open " + path + " for writing");
    f << j.dump(1) << "\n";
    if (!f) throw std::runtime_error("write failed for " + path);
}

inline DatasetManifest load_manifest(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open " + path);
    nlohmann::json j;
    f >> j;
    DatasetManifest m;
    m.protocol_name = j.value("protocol", "");
    m.split = j.value("split", "all");
    for (const auto& e : j.at("entries")) {
        ManifestEntry me;
        me.path = e.at("path").get<std::string>();
        me.meta.subject_id = e.at("subject").get<std::string>();
        me.meta.condition = e.at("condition").get<std::string>();
        me.meta.view = e.at("view").get<std::string>();
        me.meta.sequence_index = e.at("seq_index").get<int>();
        me.split = e.value("split", "train");
        m.entries.push_back(std::move(me));
    }
    m.reindex();
    m.validate();
    return m;
}

/// Assign per-entry splits by subject and return disjoint train/test views.
///  - "desk": last quarter of the sorted subject list (at least one subject)
///    is held out for testing.
///  - "casia-b": numeric subject ids 1..74 train, 75+ test.
inline std::pair<DatasetManifest, DatasetManifest> split_protocol(DatasetManifest all,
                                                                  const std::string& protocol) {
    const auto subjects = all.subjects();
    if (subjects.size() < 2)
        throw std::runtime_error("protocol needs at least two subjects, got " +
                                 std::to_string(subjects.size()));

    std::set<std::string> test_subjects;
    if (protocol == "desk") {
        const std::size_t n_test = std::max<std::size_t>(1, subjects.size() / 4);
        test_subjects.insert(subjects.end() - static_cast<std::ptrdiff_t>(n_test),
                             subjects.end());
    } else if (protocol == "casia-b") {
        for (const auto& s : subjects)
            if (std::stoi(s) >= 75) test_subjects.insert(s);
    } else {
        throw std::runtime_error("unknown protocol: " + protocol);
    }
    if (test_subjects.empty() || test_subjects.size() == subjects.size())
        throw std::runtime_error("protocol " + protocol + " produced an empty split");

    all.protocol_name = protocol;
    for (auto& e : all.entries)
        e.split = test_subjects.count(e.meta.subject_id) ? "test" : "train";
    DatasetManifest train = all.filter_split("train");
    DatasetManifest test = all.filter_split("test");
    train.reindex();
    test.reindex();
    return {std::move(train), std::move(test)};
}

}  // namespace gaitgs::data
