// SPDX-License-Identifier: Apache-2.0
#include "nopkit/checkpoint.hpp"

#include "nopkit/config.hpp"
#include "nopkit/error.hpp"
#include "nopkit/io.hpp"

#include <algorithm>
#include <sstream>

namespace nopkit {

namespace {

constexpr const char* kFormat = "nopkit-checkpoint-1";

std::string join(const std::vector<std::string>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + v[i];
    return s;
}

std::vector<std::string> split(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(item);
    return out;
}

} // namespace

void save_checkpoint(const std::filesystem::path& dir, const FnoModel& model, const MultiGridPlan* plan) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());

    Manifest m;
    m["format"] = kFormat;
    for (const auto& [k, v] : model_entries(model.config())) m["model." + k] = v;
    m["resolved_ranks"] = format_list(model.spectral().ranks());
    const auto names = model.parameter_names();
    m["parameters"] = join(names);
    m["param_count"] = std::to_string(model.param_count());
    if (plan) {
        m["multigrid.d"] = std::to_string(plan->d);
        m["multigrid.grid_exponent"] = std::to_string(plan->grid_exponent);
        for (const auto& [k, v] : plan_entries(*plan)) m["multigrid." + k] = v;
    }

    for (const auto& [name, t] : model.real_params()) save_tensor(dir / (name + ".ntns"), t);
    const auto snames = model.spectral().tensor_names();
    const auto& ts = model.spectral().tensors();
    for (std::size_t i = 0; i < ts.size(); ++i) save_tensor(dir / ("spectral." + snames[i] + ".ntns"), ts[i]);
    // The manifest goes last so a partially written directory does not load.
    save_manifest(dir / "manifest.txt", m);
}

Checkpoint load_checkpoint(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir)) throw IoError("checkpoint directory not found: " + dir.string());
    const Manifest m = load_manifest(dir / "manifest.txt");
    const auto get = [&](const std::string& key) -> const std::string& {
        const auto it = m.find(key);
        if (it == m.end()) throw IoError(dir.string() + ": checkpoint manifest lacks '" + key + "'");
        return it->second;
    };
    if (get("format") != kFormat) throw IoError(dir.string() + ": not a checkpoint (format " + get("format") + ")");

    FnoConfig cfg;
    std::optional<MultiGridPlan> plan;
    try {
        for (const auto& [k, v] : m) {
            if (k.starts_with("model.")) {
                set_model_key(cfg, k.substr(6), v);
            } else if (k.starts_with("multigrid.")) {
                if (!plan) plan.emplace();
                const std::string key = k.substr(10);
                if (key == "d")
                    plan->d = parse_size(k, v);
                else if (key == "grid_exponent")
                    plan->grid_exponent = parse_size(k, v);
                else
                    set_plan_key(*plan, key, v);
            } else if (k != "format" && k != "resolved_ranks" && k != "parameters" && k != "param_count") {
                throw IoError(dir.string() + ": unknown checkpoint key '" + k + "'");
            }
        }
        cfg.rank.ranks = parse_size_list("resolved_ranks", get("resolved_ranks"));
        if (plan) plan->validate();
    } catch (const ConfigError& e) {
        throw IoError(dir.string() + ": " + e.what());
    } catch (const PlanError& e) {
        throw IoError(dir.string() + ": " + e.what());
    }

    FnoModel model;
    try {
        model = FnoModel(cfg, 0);
    } catch (const Error& e) {
        throw IoError(dir.string() + ": inconsistent architecture: " + e.what());
    }
    if (split(get("parameters")) != model.parameter_names())
        throw IoError(dir.string() + ": parameter list does not match the architecture");

    for (auto& p : model.parameters()) {
        const AnyTensor t = load_tensor(dir / (p.name + ".ntns"));
        const bool cplx = std::holds_alternative<CTensor>(t);
        const Shape& shape = cplx ? std::get<CTensor>(t).shape() : std::get<RTensor>(t).shape();
        if (cplx != p.complex || !(shape == p.shape))
            throw IoError(dir.string() + ": array '" + p.name + "' has shape " + shape.str() + ", expected " +
                          p.shape.str());
        const double* src = cplx ? reinterpret_cast<const double*>(std::get<CTensor>(t).data())
                                 : std::get<RTensor>(t).data();
        std::copy_n(src, p.size, p.data);
    }
    return Checkpoint{std::move(model), plan};
}

} // namespace nopkit
