// Command-line entry point: synth / train / eval / export subcommands over a
// flat key=value config file.
//
// Exit codes:
//   0  success
//   2  configuration or usage error (bad flags, bad config, bad data layout)
//   3  training diverged (a diagnostic checkpoint is written first)
//   4  artifact mismatch (corrupt checkpoint/feature file, or a checkpoint
//      whose recorded config hash disagrees with the config on disk)

#include <CLI11.hpp>

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "gaitgs/cli/config.hpp"
#include "gaitgs/data/sampler.hpp"
#include "gaitgs/data/synthetic.hpp"
#include "gaitgs/eval/evaluator.hpp"
#include "gaitgs/nn/model.hpp"
#include "gaitgs/train/checkpoint.hpp"
#include "gaitgs/train/trainer.hpp"

namespace fs = std::filesystem;
using namespace gaitgs;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitDiverged = 3;
constexpr int kExitArtifact = 4;

/// Failures of trained artifacts on disk (as opposed to user configuration).
struct ArtifactError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::vector<int> parse_int_csv(const std::string& text, const std::string& what) {
    std::vector<int> out;
    for (const auto& item : cli::split_list(text)) {
        try {
            std::size_t used = 0;
            out.push_back(std::stoi(item, &used));
            if (used != item.size()) throw std::invalid_argument("tail");
        } catch (const std::exception&) {
            throw std::invalid_argument("config error: " + what + " needs a comma list of "
                                        "integers, got '" + text + "'");
        }
    }
    return out;
}

/// Parse repeated `--set key=value` overrides into a map.
cli::KvMap parse_sets(const std::vector<std::string>& sets) {
    cli::KvMap kv;
    for (const auto& s : sets) {
        const auto eq = s.find('=');
        if (eq == std::string::npos || eq == 0)
            throw std::invalid_argument("config error: --set expects key=value, got '" + s + "'");
        kv[s.substr(0, eq)] = s.substr(eq + 1);
    }
    return kv;
}

void log_overrides(const cli::MergedConfig& merged) {
    for (const auto& o : merged.overrides)
        std::cout << "override: " << o.key << " = " << o.new_value << " (was " << o.old_value
                  << ")\n";
}

/// Load the manifest under `dir` and return the requested protocol split.
data::DatasetManifest load_split(const fs::path& dir, const std::string& protocol,
                                 const std::string& split) {
    auto all = data::load_manifest((dir / "manifest.json").string());
    if (split == "all") return all;
    auto [train, test] = data::split_protocol(std::move(all), protocol);
    if (split == "train") return train;
    if (split == "test") return test;
    throw std::invalid_argument("config error: unknown split '" + split +
                                "' (expected train | test | all)");
}

/// A checkpoint plus the effective config that produced it, hash-verified.
struct LoadedRun {
    cli::KvMap config;
    std::string hash;
    train::Archive<double> archive;
    nn::ParamStore<double> params;
    nn::Model<double> model;
};

/// Read `checkpoint` and its sibling (or explicitly named) effective config,
/// verify the recorded hash, and rebuild the model with the stored weights.
/// Any failure here is an artifact error (exit 4): the checkpoint cannot be
/// trusted to mean what the config says.
LoadedRun load_run(const fs::path& checkpoint, const std::string& config_path,
                   const cli::KvMap& overrides) {
    LoadedRun run;
    const fs::path cfg_file =
        config_path.empty() ? checkpoint.parent_path() / "config.txt" : fs::path(config_path);
    try {
        run.config = cli::merge_config({}, cli::read_config_file(cfg_file), overrides).effective;
    } catch (const std::exception& e) {
        throw ArtifactError("cannot read effective config " + cfg_file.string() + ": " +
                            e.what());
    }
    run.hash = cli::config_hash(run.config);
    try {
        run.archive = train::read_archive<double>(checkpoint);
    } catch (const std::exception& e) {
        throw ArtifactError("cannot read checkpoint " + checkpoint.string() + ": " + e.what());
    }
    if (run.archive.meta.config_hash != run.hash)
        throw ArtifactError("checkpoint/config hash mismatch: checkpoint " +
                            run.archive.meta.config_hash + " vs config " + run.hash + " (" +
                            cfg_file.string() + ")");
    try {
        run.model = nn::Model<double>::create(run.params, cli::to_model_config(run.config));
        train::load_parameters(run.archive, run.params);
    } catch (const std::exception& e) {
        throw ArtifactError("checkpoint does not fit its config: " + std::string(e.what()));
    }
    return run;
}

/// Run every sequence of `m` through the model and collect descriptors.
eval::FeatureStore extract_all(const nn::Model<double>& model, const fs::path& dir,
                               const data::DatasetManifest& m) {
    eval::FeatureStore store;
    for (const auto& e : m.entries) {
        const auto seq = data::load_sequence(dir / e.path, e.meta);
        store.add(e.meta, eval::extract(model, seq));
    }
    store.validate();
    return store;
}

// ---------------------------------------------------------------------------

int cmd_synth(const std::string& out, int subjects, const std::string& views,
              const std::string& conditions, int seqs, int frames, double noise,
              std::uint64_t seed) {
    data::SynthOptions opt;
    opt.num_subjects = subjects;
    opt.views = parse_int_csv(views, "--views");
    opt.conditions.clear();
    for (const auto& c : cli::split_list(conditions)) opt.conditions.push_back(c);
    opt.seqs_per_cell = seqs;
    opt.frames_per_seq = frames;
    opt.noise_level = noise;
    opt.master_seed = seed;

    const auto res = data::generate_synthetic(out, opt);
    std::cout << "wrote " << res.all.entries.size() << " sequences to " << out << " ("
              << res.train.entries.size() << " train / " << res.test.entries.size()
              << " test subjects split '" << res.all.protocol_name << "')\n";
    return kExitOk;
}

int cmd_train(const std::string& config_file, const std::string& preset, const std::string& data,
              const std::string& out, const std::vector<std::string>& sets,
              const std::string& resume) {
    cli::KvMap flags = parse_sets(sets);
    if (!data.empty()) flags["data.dir"] = data;
    const auto merged = cli::merge_config(
        preset.empty() ? cli::KvMap{} : cli::preset_overlay(preset),
        config_file.empty() ? cli::KvMap{} : cli::read_config_file(config_file), flags);
    log_overrides(merged);

    const std::string dir = cli::get_string(merged.effective, "data.dir");
    if (dir.empty())
        throw std::invalid_argument("config error: data.dir is required (set --data or the "
                                    "data.dir key)");
    const auto split =
        load_split(dir, cli::get_string(merged.effective, "data.protocol"), "train");
    std::cout << "training on " << split.entries.size() << " sequences from "
              << split.subjects().size() << " subjects\n";
    const auto train_set = data::Dataset::load(dir, split);

    const std::string hash = cli::config_hash(merged.effective);
    train::Trainer<double> trainer(train_set, cli::to_train_config(merged.effective), out, hash);
    // The effective config lives next to every checkpoint the run writes;
    // re-running with it reproduces the run, and eval verifies against it.
    cli::write_config(merged.effective, fs::path(out) / "config.txt");

    if (!resume.empty()) {
        try {
            trainer.load_checkpoint(resume);
        } catch (const std::exception& e) {
            throw ArtifactError(e.what());
        }
        std::cout << "resumed from " << resume << " at iteration " << trainer.iteration() << "\n";
    }

    const auto res = trainer.run();
    if (res.diverged) {
        std::cerr << "training diverged at iteration " << res.diverged_at
                  << "; diagnostic checkpoint written to "
                  << (fs::path(out) / "checkpoint-diverged.bin").string() << "\n";
        return kExitDiverged;
    }
    if (!res.log.empty()) {
        const auto& last = res.log.back();
        std::cout << "finished " << res.iterations_run << " iterations; final loss " << last.total
                  << " (triplet " << last.triplet << ", prior ce " << last.ce << ")\n";
    }
    std::cout << "final checkpoint: " << res.final_checkpoint.string() << "\n";
    return kExitOk;
}

int cmd_eval(const std::string& checkpoint, const std::string& data, const std::string& config,
             const std::string& protocol, const std::string& ranks, const std::string& split,
             bool include_identical, const std::string& out_json,
             const std::vector<std::string>& sets) {
    auto run = load_run(checkpoint, config, parse_sets(sets));
    const std::vector<int> ks = parse_int_csv(ranks.empty()
                                                  ? cli::get_string(run.config, "eval.ranks")
                                                  : ranks,
                                              "--ranks");
    const std::string proto =
        protocol.empty() ? cli::get_string(run.config, "data.protocol") : protocol;
    const auto m = load_split(data, proto, split);

    // Gallery/probe convention: unshrouded first sequences enroll each
    // subject; every remaining sequence probes. This mirrors the usual
    // cross-view protocol where the gallery holds normal-condition walks.
    data::DatasetManifest gallery_m, probe_m;
    gallery_m.protocol_name = probe_m.protocol_name = m.protocol_name;
    for (const auto& e : m.entries) {
        if (e.meta.condition == "nm" && e.meta.sequence_index == 0)
            gallery_m.entries.push_back(e);
        else
            probe_m.entries.push_back(e);
    }
    if (gallery_m.entries.empty())
        throw std::invalid_argument("config error: no gallery sequences (condition 'nm', "
                                    "sequence 0) in split '" + split + "'");
    if (probe_m.entries.empty())
        throw std::invalid_argument("config error: no probe sequences left in split '" + split +
                                    "'");
    gallery_m.reindex();
    probe_m.reindex();

    std::cout << "extracting " << gallery_m.entries.size() << " gallery + "
              << probe_m.entries.size() << " probe sequences\n";
    const auto gallery = extract_all(run.model, data, gallery_m);
    const auto probe = extract_all(run.model, data, probe_m);

    const bool exclude = include_identical
                             ? false
                             : cli::get_bool(run.config, "eval.exclude_identical_view");
    const auto table = eval::rank_k(gallery, probe, ks, exclude);
    std::cout << table.to_text();
    if (!out_json.empty()) {
        std::ofstream f(out_json);
        if (!f) throw std::runtime_error("cannot open " + out_json + " for writing");
        f << table.to_json().dump(2) << "\n";
        std::cout << "wrote " << out_json << "\n";
    }
    return kExitOk;
}

int cmd_export(const std::string& checkpoint, const std::string& data, const std::string& config,
               const std::string& out, const std::string& protocol, const std::string& split,
               const std::vector<std::string>& sets) {
    auto run = load_run(checkpoint, config, parse_sets(sets));
    const std::string proto =
        protocol.empty() ? cli::get_string(run.config, "data.protocol") : protocol;
    const auto m = load_split(data, proto, split);
    std::cout << "extracting " << m.entries.size() << " sequences\n";
    const auto store = extract_all(run.model, data, m);
    eval::export_features(store, out);
    std::cout << "wrote " << store.records.size() << " x " << store.dim() << " features to "
              << out << " (+ " << out << ".json)\n";
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{
        "gaitgs: dual-granularity gait recognition over silhouette sequences.\n"
        "Exit codes: 0 success, 2 configuration error, 3 training diverged,\n"
        "4 artifact mismatch (corrupt or foreign checkpoint/feature files)."};
    app.require_subcommand(1);
    int workers = 1;
    app.add_option("--workers", workers,
                   "data-loading worker count (this build is single-threaded; values above 1 "
                   "are clamped)")
        ->capture_default_str();

    // synth ------------------------------------------------------------
    auto* synth = app.add_subcommand("synth", "Generate a synthetic silhouette dataset");
    std::string s_out;
    int s_subjects = 16, s_seqs = 2, s_frames = 40;
    std::string s_views = "0,54,90,144", s_conditions = "nm,cl";
    double s_noise = 0.002;
    std::uint64_t s_seed = 7;
    synth->add_option("--out", s_out, "output directory")->required();
    synth->add_option("--subjects", s_subjects, "number of subjects")->capture_default_str();
    synth->add_option("--views", s_views, "camera views in degrees, comma list")
        ->capture_default_str();
    synth->add_option("--conditions", s_conditions, "condition modifiers (nm, bg, cl)")
        ->capture_default_str();
    synth->add_option("--seqs", s_seqs, "sequences per subject x view x condition")
        ->capture_default_str();
    synth->add_option("--frames", s_frames, "frames per sequence")->capture_default_str();
    synth->add_option("--noise", s_noise, "per-pixel flip probability")->capture_default_str();
    synth->add_option("--seed", s_seed, "master seed; same seed => byte-identical tree")
        ->capture_default_str();

    // train ------------------------------------------------------------
    auto* tr = app.add_subcommand("train", "Train a model from a config file or preset");
    std::string t_config, t_preset, t_data, t_out = "run", t_resume;
    std::vector<std::string> t_sets;
    tr->add_option("--config", t_config, "key=value config file");
    tr->add_option("--preset", t_preset, "hyperparameter preset: casia-b | oumvlp | grew | desk");
    tr->add_option("--data", t_data, "dataset directory (overrides data.dir)");
    tr->add_option("--out", t_out, "run directory for checkpoints and logs")
        ->capture_default_str();
    tr->add_option("--set", t_sets, "override any config key, e.g. --set train.seed=9")
        ->take_all();
    tr->add_option("--resume", t_resume, "checkpoint file to resume from");

    // eval -------------------------------------------------------------
    auto* ev = app.add_subcommand("eval", "Cross-view rank-k retrieval over a trained model");
    std::string e_ckpt, e_data, e_config, e_protocol, e_ranks, e_split = "test", e_json;
    bool e_include = false;
    std::vector<std::string> e_sets;
    ev->add_option("--checkpoint", e_ckpt, "trained checkpoint file")->required();
    ev->add_option("--data", e_data, "dataset directory")->required();
    ev->add_option("--config", e_config,
                   "effective config written by train (default: config.txt next to the "
                   "checkpoint)");
    ev->add_option("--protocol", e_protocol, "subject split protocol (default from config)");
    ev->add_option("--ranks", e_ranks, "ranks to report, e.g. 1,5,10,20 (default from config)");
    ev->add_option("--split", e_split, "which subjects to evaluate: test | train | all")
        ->capture_default_str();
    ev->add_flag("--include-identical-view", e_include,
                 "also score probes against their own view");
    ev->add_option("--out", e_json, "write the rank table as JSON to this file");
    ev->add_option("--set", e_sets, "override eval.* config keys")->take_all();

    // export -----------------------------------------------------------
    auto* ex = app.add_subcommand("export", "Dump descriptors as a float32 matrix + sidecar");
    std::string x_ckpt, x_data, x_config, x_out, x_protocol, x_split = "test";
    std::vector<std::string> x_sets;
    ex->add_option("--checkpoint", x_ckpt, "trained checkpoint file")->required();
    ex->add_option("--data", x_data, "dataset directory")->required();
    ex->add_option("--out", x_out, "output path prefix for the matrix")->required();
    ex->add_option("--config", x_config,
                   "effective config written by train (default: config.txt next to the "
                   "checkpoint)");
    ex->add_option("--protocol", x_protocol, "subject split protocol (default from config)");
    ex->add_option("--split", x_split, "which subjects to export: test | train | all")
        ->capture_default_str();
    ex->add_option("--set", x_sets, "override config keys")->take_all();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitConfig;
    }

    try {
        if (synth->parsed())
            return cmd_synth(s_out, s_subjects, s_views, s_conditions, s_seqs, s_frames, s_noise,
                             s_seed);
        if (tr->parsed()) return cmd_train(t_config, t_preset, t_data, t_out, t_sets, t_resume);
        if (ev->parsed())
            return cmd_eval(e_ckpt, e_data, e_config, e_protocol, e_ranks, e_split, e_include,
                            e_json, e_sets);
        if (ex->parsed())
            return cmd_export(x_ckpt, x_data, x_config, x_out, x_protocol, x_split, x_sets);
    } catch (const ArtifactError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitArtifact;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitConfig;
    }
    return kExitConfig;
}
