// SPDX-License-Identifier: Apache-2.0
// Command-line front end. Talks to the library only through the C API.
#include "nopkit/nopkit.h"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

namespace {

// Exit codes: 2 config, 3 solver, 4 divergence, 5 I/O or shape, 1 anything else.
int exit_code(nopkit_status s) {
    switch (s) {
    case NOPKIT_OK: return 0;
    case NOPKIT_ERR_CONFIG:
    case NOPKIT_ERR_PLAN: return 2;
    case NOPKIT_ERR_SOLVER: return 3;
    case NOPKIT_ERR_DIVERGENCE: return 4;
    case NOPKIT_ERR_IO:
    case NOPKIT_ERR_SHAPE: return 5;
    default: return 1;
    }
}

int report(nopkit_status s, const char* what) {
    std::cerr << "nopkit " << what << ": " << nopkit_status_name(s) << ": " << nopkit_last_error() << '\n';
    return exit_code(s);
}

struct ConfigDeleter {
    void operator()(nopkit_config* c) const { nopkit_config_free(c); }
};
struct ModelDeleter {
    void operator()(nopkit_model* m) const { nopkit_model_free(m); }
};
using ConfigPtr = std::unique_ptr<nopkit_config, ConfigDeleter>;
using ModelPtr = std::unique_ptr<nopkit_model, ModelDeleter>;

nopkit_status load_config(const std::string& path, const std::vector<std::string>& overrides, ConfigPtr& out) {
    std::vector<const char*> ov;
    for (const auto& s : overrides) ov.push_back(s.c_str());
    nopkit_config* c = nullptr;
    const nopkit_status s = nopkit_config_load(path.empty() ? nullptr : path.c_str(), ov.data(), ov.size(), &c);
    out.reset(c);
    return s;
}

template <typename Fn>
std::string text_of(Fn fn) {
    std::size_t len = 0;
    if (fn(nullptr, 0, &len) != NOPKIT_OK) return {};
    std::string s(len + 1, '\0');
    fn(s.data(), s.size(), &len);
    s.resize(len);
    return s;
}

void on_epoch(const nopkit_epoch* r, void*) {
    std::printf("epoch %4zu  loss %.6e  test_l2 %.6e  test_h1 %.6e  lr %.3e  %.1fs\n", r->epoch, r->train_loss,
                r->test_l2, r->test_h1, r->lr, r->seconds);
    std::fflush(stdout);
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"nopkit: tensorized multi-grid Fourier neural operators"};
    app.require_subcommand(1);

    std::string config_path, out_dir, data_dir, checkpoint;
    std::uint64_t seed = 0;
    std::size_t threads = 0, n = 0;
    std::vector<std::string> overrides;
    std::vector<std::size_t> resolutions;
    bool seed_given = false;

    auto* gen = app.add_subcommand("gen-data", "Sample inputs and solve the PDE for each");
    gen->add_option("--config", config_path, "INI configuration")->check(CLI::ExistingFile);
    gen->add_option("--out", out_dir, "Output dataset directory")->required();
    gen->add_option("--n", n, "Number of samples")->required();
    gen->add_option("--seed", seed, "Seed of sample 0 (sample i uses seed + i)");

    auto* tr = app.add_subcommand("train", "Train a model; writes checkpoint, metrics.csv and config.ini");
    tr->add_option("--config", config_path, "INI configuration")->check(CLI::ExistingFile);
    tr->add_option("--data", data_dir, "Dataset directory")->required();
    tr->add_option("--out", out_dir, "Output directory")->required();
    auto* seed_opt = tr->add_option("--seed", seed, "Overrides train.seed");

    auto* ev = app.add_subcommand("eval", "Relative errors of a checkpoint at several resolutions");
    ev->add_option("--checkpoint", checkpoint, "Checkpoint directory")->required();
    ev->add_option("--data", data_dir, "Dataset directory")->required();
    ev->add_option("--resolutions", resolutions, "Resolutions (default: the dataset's)")->delimiter(',');
    ev->add_option("--out", out_dir, "Directory for eval.csv");
    ev->add_option("--last", n, "Evaluate only the trailing N samples (the held-out split)");

    auto* info = app.add_subcommand("info", "Architecture, parameter counts and compression ratios");
    auto* info_ck = info->add_option("--checkpoint", checkpoint, "Checkpoint directory");
    auto* info_cfg = info->add_option("--config", config_path, "INI configuration (no weights allocated)");
    info_ck->excludes(info_cfg);

    for (auto* sub : {gen, tr, info}) {
        sub->add_option("--threads", threads, "Worker thread cap (1 = bit-reproducible)");
        sub->add_option("overrides", overrides, "section.key=value overrides");
    }
    ev->add_option("--threads", threads, "Worker thread cap");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }
    seed_given = seed_opt->count() > 0;
    nopkit_set_threads(threads);

    if (gen->parsed()) {
        ConfigPtr cfg;
        if (auto s = load_config(config_path, overrides, cfg); s != NOPKIT_OK) return report(s, "gen-data");
        if (auto s = nopkit_gen_data(cfg.get(), n, seed, out_dir.c_str()); s != NOPKIT_OK)
            return report(s, "gen-data");
        std::cout << "wrote " << n << " samples to " << out_dir << '\n';
        return 0;
    }

    if (tr->parsed()) {
        if (seed_given) overrides.push_back("train.seed=" + std::to_string(seed));
        ConfigPtr cfg;
        if (auto s = load_config(config_path, overrides, cfg); s != NOPKIT_OK) return report(s, "train");
        if (auto s = nopkit_train(cfg.get(), data_dir.c_str(), out_dir.c_str(), on_epoch, nullptr); s != NOPKIT_OK)
            return report(s, "train");
        std::cout << "checkpoint written to " << (std::filesystem::path(out_dir) / "checkpoint").string() << '\n';
        return 0;
    }

    if (ev->parsed()) {
        nopkit_model* raw = nullptr;
        if (auto s = nopkit_model_load(checkpoint.c_str(), &raw); s != NOPKIT_OK) return report(s, "eval");
        ModelPtr model(raw);
        if (resolutions.empty()) {
            // Read the native resolution from the dataset manifest.
            std::ifstream is(std::filesystem::path(data_dir) / "manifest.txt");
            std::string line;
            while (std::getline(is, line))
                if (line.rfind("resolution=", 0) == 0) resolutions.push_back(std::stoul(line.substr(11)));
            if (resolutions.empty()) {
                std::cerr << "nopkit eval: cannot determine the dataset resolution; pass --resolutions\n";
                return 5;
            }
        }
        std::vector<nopkit_eval_row> rows(resolutions.size());
        if (auto s = nopkit_eval(model.get(), data_dir.c_str(), n, resolutions.data(), rows.size(), rows.data());
            s != NOPKIT_OK)
            return report(s, "eval");
        std::string csv = "resolution,rel_l2,rel_h1\n";
        std::printf("%-12s %-14s %-14s\n", "resolution", "rel_l2", "rel_h1");
        for (const auto& r : rows) {
            std::printf("%-12zu %-14.6e %-14.6e\n", r.resolution, r.rel_l2, r.rel_h1);
            char buf[128];
            std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g\n", r.resolution, r.rel_l2, r.rel_h1);
            csv += buf;
        }
        if (!out_dir.empty()) {
            std::filesystem::create_directories(out_dir);
            std::ofstream os(std::filesystem::path(out_dir) / "eval.csv");
            os << csv;
            if (!os) {
                std::cerr << "nopkit eval: cannot write eval.csv\n";
                return 5;
            }
        }
        return 0;
    }

    if (info->parsed()) {
        std::string text;
        if (!checkpoint.empty()) {
            nopkit_model* raw = nullptr;
            if (auto s = nopkit_model_load(checkpoint.c_str(), &raw); s != NOPKIT_OK) return report(s, "info");
            ModelPtr model(raw);
            text = text_of([&](char* b, std::size_t c, std::size_t* l) {
                return nopkit_model_describe(model.get(), b, c, l);
            });
        } else {
            ConfigPtr cfg;
            if (auto s = load_config(config_path, overrides, cfg); s != NOPKIT_OK) return report(s, "info");
            text = text_of([&](char* b, std::size_t c, std::size_t* l) {
                return nopkit_config_describe(cfg.get(), b, c, l);
            });
        }
        std::cout << text;
        return 0;
    }
    return 1;
}
