#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "gaitgs/core/autodiff.hpp"
#include "gaitgs/core/rng.hpp"
#include "gaitgs/core/tensor.hpp"
#include "gaitgs/data/sampler.hpp"
#include "gaitgs/nn/model.hpp"
#include "gaitgs/nn/params.hpp"
#include "gaitgs/train/adam.hpp"
#include "gaitgs/train/checkpoint.hpp"
#include "gaitgs/train/loss.hpp"

// Iteration-driven training loop: identity-balanced batches, the combined
// metric + prior-classification objective, two-group adaptive updates under
// a piecewise-constant learning-rate schedule, JSON-lines logging, periodic
// checkpoints, and deterministic resume (bit-identical trajectory on the
// same hardware and precision).

namespace gaitgs::train {

/// From `iteration`+1 onward the base learning rate becomes `lr`.
struct LrDrop {
    std::int64_t iteration = 0;
    double lr = 0.0;
};

struct TrainConfig {
    double base_lr = 1e-4;
    double transformer_lr_multiplier = 0.1;
    double weight_decay = 5e-4;
    double margin = 0.25;
    double alpha = 0.2;
    int batch_subjects = 8;  ///< P: distinct subjects per batch
    int batch_clips = 4;     ///< K: clips per subject
    std::int64_t clip_len = 30;
    std::int64_t iterations = 2000;
    std::int64_t checkpoint_interval = 500;  ///< 0 = final checkpoint only
    std::vector<LrDrop> schedule;
    std::uint64_t seed = 7;
    nn::ModelConfig model;

    void validate() const {
        if (base_lr <= 0.0 || transformer_lr_multiplier <= 0.0)
            throw std::invalid_argument("config error: learning rates must be positive");
        if (weight_decay < 0.0 || margin < 0.0 || alpha < 0.0)
            throw std::invalid_argument("config error: decay, margin, and alpha must be >= 0");
        if (batch_subjects < 1 || batch_clips < 1)
            throw std::invalid_argument("config error: batch (P, K) must be >= 1");
        if (clip_len < 3)
            throw std::invalid_argument(
                "config error: clip length must be >= 3 (coarse-branch minimum)");
        if (iterations < 0 || checkpoint_interval < 0)
            throw std::invalid_argument(
                "config error: iterations and checkpoint interval must be >= 0");
        std::int64_t prev = 0;
        for (const auto& d : schedule) {
            if (d.iteration <= prev && !(prev == 0 && d.iteration > 0))
                throw std::invalid_argument(
                    "config error: schedule iterations must be strictly increasing");
            if (d.lr <= 0.0)
                throw std::invalid_argument("config error: scheduled learning rates must be > 0");
            prev = d.iteration;
        }
        model.validate();
    }
};

/// Effective base learning rate for the 1-based iteration `i` under the
/// piecewise-constant schedule: a drop at iteration N applies from N+1 on.
inline double lr_at(const TrainConfig& cfg, std::int64_t i) {
    double lr = cfg.base_lr;
    for (const auto& d : cfg.schedule)
        if (i > d.iteration) lr = d.lr;
    return lr;
}

struct TrainLogRecord {
    std::int64_t iteration = 0;
    double lr = 0.0;
    double total = 0.0;
    double triplet = 0.0;
    double ce = 0.0;
    double active_fraction = 0.0;
    double prior_accuracy = 0.0;

    nlohmann::json to_json() const {
        return {{"iter", iteration},         {"lr", lr},
                {"total", total},            {"triplet", triplet},
                {"ce", ce},                  {"active", active_fraction},
                {"prior_acc", prior_accuracy}};
    }

    static TrainLogRecord from_json(const nlohmann::json& j) {
        TrainLogRecord r;
        r.iteration = j.at("iter").get<std::int64_t>();
        r.lr = j.at("lr").get<double>();
        r.total = j.at("total").get<double>();
        r.triplet = j.at("triplet").get<double>();
        r.ce = j.at("ce").get<double>();
        r.active_fraction = j.at("active").get<double>();
        r.prior_accuracy = j.at("prior_acc").get<double>();
        return r;
    }
};

struct TrainResult {
    std::int64_t iterations_run = 0;
    bool diverged = false;
    std::int64_t diverged_at = 0;  ///< iteration whose forward pass was non-finite
    std::filesystem::path final_checkpoint;
    std::vector<TrainLogRecord> log;
};

/// Restore model parameters (non-`optim.*` entries) from an archive into a
/// parameter store. Used by evaluation paths that carry no optimizer.
template <typename T>
void load_parameters(const Archive<T>& archive, nn::ParamStore<T>& ps) {
    std::size_t restored = 0;
    for (const auto& name : archive.order) {
        if (name.rfind("optim.", 0) == 0) continue;
        if (!ps.has(name))
            throw std::runtime_error("checkpoint tensor " + name + " matches no model parameter");
        Tensor<T>& dst = ps.get(name);
        const Tensor<T>& src = archive.tensors.at(name);
        if (!dst.same_shape(src))
            throw std::runtime_error("checkpoint shape mismatch for " + name);
        dst = src;
        ++restored;
    }
    if (restored != ps.size())
        throw std::runtime_error("checkpoint restores " + std::to_string(restored) + " of " +
                                 std::to_string(ps.size()) + " model parameters");
}

template <typename T>
class Trainer {
public:
    /// `train_set` must outlive the trainer. `config_hash` identifies the
    /// run configuration; checkpoints carry it and refuse to resume under a
    /// different one.
    Trainer(const data::Dataset& train_set, TrainConfig cfg, std::filesystem::path out_dir,
            std::string config_hash)
        : cfg_(validated(std::move(cfg))),
          data_(train_set),
          out_dir_(std::move(out_dir)),
          config_hash_(std::move(config_hash)),
          sampler_(train_set.manifest, cfg_.batch_subjects, cfg_.batch_clips,
                   Rng::seeded(cfg_.seed).child(1)),
          clip_rng_(Rng::seeded(cfg_.seed).child(2)) {
        check_label_spaces();
        model_ = nn::Model<T>::create(ps_, cfg_.model);
        ps_.init_all(cfg_.seed);
        AdamConfig ac;
        ac.base_lr = cfg_.base_lr;
        ac.transformer_lr_multiplier = cfg_.transformer_lr_multiplier;
        ac.weight_decay = cfg_.weight_decay;
        opt_ = AdamOptimizer<T>::create(ps_, ac);
        std::filesystem::create_directories(out_dir_);
    }

    /// Run (or continue) the iteration loop up to cfg.iterations. A
    /// non-finite loss aborts with a diagnostic checkpoint of the last
    /// finite state instead of throwing.
    TrainResult run() {
        TrainResult res;
        std::ofstream log_file(out_dir_ / "train_log.jsonl", std::ios::app);
        if (!log_file)
            throw std::runtime_error("cannot open training log in " + out_dir_.string());
        for (std::int64_t i = start_iteration_ + 1; i <= cfg_.iterations; ++i) {
            TrainLogRecord rec;
            try {
                rec = train_step(i);
            } catch (const std::runtime_error& e) {
                // "loss diverged" from the objective, "prior head diverged"
                // from the classifier: both mean non-finite training state.
                if (std::string(e.what()).find("diverged") == std::string::npos) throw;
                res.diverged = true;
                res.diverged_at = i;
                res.final_checkpoint = out_dir_ / "checkpoint-diverged.bin";
                save_checkpoint(res.final_checkpoint, i - 1);
                start_iteration_ = i - 1;
                return res;
            }
            log_file << rec.to_json().dump() << "\n";
            log_file.flush();
            res.log.push_back(rec);
            ++res.iterations_run;
            if (cfg_.checkpoint_interval > 0 && i % cfg_.checkpoint_interval == 0 &&
                i != cfg_.iterations)
                save_checkpoint(checkpoint_path(i), i);
        }
        start_iteration_ = cfg_.iterations;
        res.final_checkpoint = checkpoint_path(cfg_.iterations);
        save_checkpoint(res.final_checkpoint, cfg_.iterations);
        return res;
    }

    /// Parameters, optimizer moments and step count, and both RNG streams.
    void save_checkpoint(const std::filesystem::path& path, std::int64_t iteration) {
        std::vector<std::pair<std::string, const Tensor<T>*>> tensors;
        ps_.for_each(
            [&](const std::string& name, const Tensor<T>& t) { tensors.emplace_back(name, &t); });
        opt_.for_each_state(
            [&](const std::string& name, const Tensor<T>& t) { tensors.emplace_back(name, &t); });
        ArchiveMeta meta;
        meta.iteration = iteration;
        meta.config_hash = config_hash_;
        meta.rng_state = sampler_.rng_state() + "\n" + clip_rng_.serialize();
        write_archive(path.string(), tensors, meta);
    }

    void load_checkpoint(const std::filesystem::path& path) {
        const Archive<T> archive = read_archive<T>(path.string());
        if (archive.meta.config_hash != config_hash_)
            throw std::runtime_error("config hash mismatch: checkpoint " +
                                     archive.meta.config_hash + " vs run " + config_hash_);
        load_parameters(archive, ps_);
        for (const auto& name : archive.order)
            if (name.rfind("optim.", 0) == 0) opt_.restore_state(name, archive.tensors.at(name));
        const auto split = archive.meta.rng_state.find('\n');
        if (split == std::string::npos)
            throw std::runtime_error("checkpoint rng state is malformed");
        sampler_.restore_rng(archive.meta.rng_state.substr(0, split));
        clip_rng_.deserialize(archive.meta.rng_state.substr(split + 1));
        opt_.set_step_count(archive.meta.iteration);
        start_iteration_ = archive.meta.iteration;
    }

    std::filesystem::path checkpoint_path(std::int64_t iteration) const {
        std::string n = std::to_string(iteration);
        if (n.size() < 6) n.insert(0, 6 - n.size(), '0');
        return out_dir_ / ("checkpoint-" + n + ".bin");
    }

    const TrainConfig& config() const { return cfg_; }
    std::int64_t iteration() const { return start_iteration_; }
    nn::ParamStore<T>& params() { return ps_; }
    const nn::Model<T>& model() const { return model_; }
    AdamOptimizer<T>& optimizer() { return opt_; }

private:
    static TrainConfig validated(TrainConfig cfg) {
        cfg.validate();
        return cfg;
    }

    /// The prior heads classify dataset attributes, so their class counts
    /// must match the label spaces the manifest actually carries.
    void check_label_spaces() const {
        if (!cfg_.model.use_global) return;
        const auto views = data_.manifest.views().size();
        if (static_cast<std::size_t>(cfg_.model.num_views) != views)
            throw std::invalid_argument("config error: view head has " +
                                        std::to_string(cfg_.model.num_views) +
                                        " classes, dataset has " + std::to_string(views) +
                                        " views");
        if (cfg_.model.num_conditions > 0) {
            const auto conds = data_.manifest.conditions().size();
            if (static_cast<std::size_t>(cfg_.model.num_conditions) != conds)
                throw std::invalid_argument("config error: condition head has " +
                                            std::to_string(cfg_.model.num_conditions) +
                                            " classes, dataset has " + std::to_string(conds) +
                                            " conditions");
        }
        for (const auto& e : data_.manifest.entries) {
            if (e.meta.view_index < 0 || e.meta.view_index >= cfg_.model.num_views)
                throw std::invalid_argument("config error: view index " +
                                            std::to_string(e.meta.view_index) +
                                            " outside the view head's class range");
            if (cfg_.model.num_conditions > 0 &&
                (e.meta.condition_index < 0 || e.meta.condition_index >= cfg_.model.num_conditions))
                throw std::invalid_argument("config error: condition index " +
                                            std::to_string(e.meta.condition_index) +
                                            " outside the condition head's class range");
        }
    }

    TrainLogRecord train_step(std::int64_t i) {
        const auto draws = sampler_.next();
        std::vector<data::FrameClip> clips;
        clips.reserve(draws.size());
        std::vector<std::int64_t> subjects, views, conditions;
        for (const auto& d : draws) {
            clips.push_back(
                data::sample_clip(data_.sequences[d.entry_index], cfg_.clip_len, clip_rng_));
            subjects.push_back(d.subject_label);
            const auto& meta = data_.manifest.entries[d.entry_index].meta;
            views.push_back(meta.view_index);
            conditions.push_back(meta.condition_index);
        }

        ad::Tape<T> tape;
        auto* x = tape.constant(data::clips_to_tensor<T>(clips));
        const auto out = model_.forward(tape, x);
        std::vector<PriorSupervision<T>> heads;
        if (out.view_logits != nullptr) heads.push_back({out.view_logits, views});
        if (out.cond_logits != nullptr) heads.push_back({out.cond_logits, conditions});
        const auto report = total_loss(tape, out.descriptor, subjects, heads,
                                       static_cast<T>(cfg_.margin), static_cast<T>(cfg_.alpha));
        tape.backward(report.total);
        const double lr = lr_at(cfg_, i);
        opt_.step(tape, static_cast<T>(lr));

        TrainLogRecord rec;
        rec.iteration = i;
        rec.lr = lr;
        rec.total = static_cast<double>(report.total_value);
        rec.triplet = static_cast<double>(report.triplet);
        rec.ce = static_cast<double>(report.ce);
        rec.active_fraction = report.active_fraction;
        rec.prior_accuracy = report.prior_accuracy;
        return rec;
    }

    TrainConfig cfg_;
    const data::Dataset& data_;
    std::filesystem::path out_dir_;
    std::string config_hash_;
    nn::ParamStore<T> ps_;
    nn::Model<T> model_;
    AdamOptimizer<T> opt_;
    data::BatchSampler sampler_;
    Rng clip_rng_;
    std::int64_t start_iteration_ = 0;
};

}  // namespace gaitgs::train
