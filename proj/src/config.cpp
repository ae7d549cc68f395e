// SPDX-License-Identifier: Apache-2.0
#include "nopkit/config.hpp"

#include "nopkit/error.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>

namespace nopkit {

namespace {

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

const std::set<std::string> kSections{"data", "model", "train", "multigrid"};

using Section = std::vector<std::pair<std::string, std::string>>;

void put(Section& sec, const std::string& key, const std::string& value, bool replace, const std::string& where) {
    for (auto& [k, v] : sec)
        if (k == key) {
            if (!replace) throw ConfigError(where + ": duplicate key '" + key + "'");
            v = value;
            return;
        }
    sec.emplace_back(key, value);
}

std::size_t pde_dim(PdeKind k) { return k == PdeKind::burgers ? 1 : 2; }

std::size_t log2_of(std::size_t n) {
    std::size_t s = 0;
    while ((std::size_t{1} << s) < n) ++s;
    return s;
}

void set_data_key(DataConfig& c, const std::string& key, const std::string& value) {
    const bool burgers = c.kind == PdeKind::burgers;
    if (key == "pde") {
        // Applied before everything else.
    } else if (key == "resolution") {
        c.resolution = parse_size("data.resolution", value);
    } else if (key == "grf.scale") {
        c.grf.scale = parse_real("data.grf.scale", value);
    } else if (key == "grf.shift") {
        c.grf.shift = parse_real("data.grf.shift", value);
    } else if (key == "grf.power") {
        c.grf.power = parse_real("data.grf.power", value);
    } else if (key == "grf.exclude_zero_mode") {
        c.grf.exclude_zero_mode = parse_bool("data.grf.exclude_zero_mode", value);
    } else if (key == "t_final") {
        (burgers ? c.burgers.T : c.ns.T) = parse_real("data.t_final", value);
    } else if (key == "dt") {
        (burgers ? c.burgers.dt : c.ns.dt) = parse_real("data.dt", value);
    } else if (key == "dealias") {
        (burgers ? c.burgers.dealias : c.ns.dealias) = parse_bool("data.dealias", value);
    } else if (key == "nu" && burgers) {
        c.burgers.nu = parse_real("data.nu", value);
    } else if (key == "re" && !burgers) {
        c.ns.re = parse_real("data.re", value);
    } else if (key == "integrator" && !burgers) {
        try {
            c.ns.integrator = parse_ns_integrator(value);
        } catch (const Error& e) {
            throw ConfigError(std::string("data.integrator: ") + e.what());
        }
    } else {
        throw ConfigError("unknown key 'data." + key + "' for pde " + to_string(c.kind));
    }
}

std::vector<std::pair<std::string, std::string>> data_entries(const DataConfig& c) {
    const bool burgers = c.kind == PdeKind::burgers;
    std::vector<std::pair<std::string, std::string>> e{
        {"pde", to_string(c.kind)},
        {"resolution", std::to_string(c.resolution)},
        {"grf.scale", format_real(c.grf.scale)},
        {"grf.shift", format_real(c.grf.shift)},
        {"grf.power", format_real(c.grf.power)},
        {"grf.exclude_zero_mode", c.grf.exclude_zero_mode ? "true" : "false"},
        {"t_final", format_real(burgers ? c.burgers.T : c.ns.T)},
        {"dt", format_real(burgers ? c.burgers.dt : c.ns.dt)},
        {"dealias", (burgers ? c.burgers.dealias : c.ns.dealias) ? "true" : "false"},
    };
    if (burgers) {
        e.emplace_back("nu", format_real(c.burgers.nu));
    } else {
        e.emplace_back("re", format_real(c.ns.re));
        e.emplace_back("integrator", to_string(c.ns.integrator));
    }
    return e;
}

void set_train_key(RunConfig& rc, const std::string& key, const std::string& value) {
    TrainConfig& t = rc.train;
    const std::string k = "train." + key;
    if (key == "lr") {
        t.lr = parse_real(k, value);
    } else if (key == "weight_decay") {
        t.weight_decay = parse_real(k, value);
    } else if (key == "epochs") {
        t.epochs = parse_size(k, value);
    } else if (key == "lr_step") {
        t.lr_step = parse_size(k, value);
    } else if (key == "lr_factor") {
        t.lr_factor = parse_real(k, value);
    } else if (key == "batch_size") {
        t.batch_size = parse_size(k, value);
    } else if (key == "loss") {
        t.loss = parse_loss_kind(value);
    } else if (key == "seed") {
        t.seed = parse_size(k, value);
    } else if (key == "shards") {
        t.shards = parse_size(k, value);
    } else if (key == "checkpoint_every") {
        t.checkpoint_every = parse_size(k, value);
    } else if (key == "train_samples") {
        rc.train_samples = parse_size(k, value);
    } else if (key == "test_samples") {
        rc.test_samples = parse_size(k, value);
    } else {
        throw ConfigError("unknown key '" + k + "'");
    }
}

std::vector<std::pair<std::string, std::string>> train_entries(const RunConfig& rc) {
    const TrainConfig& t = rc.train;
    return {
        {"lr", format_real(t.lr)},
        {"weight_decay", format_real(t.weight_decay)},
        {"epochs", std::to_string(t.epochs)},
        {"lr_step", std::to_string(t.lr_step)},
        {"lr_factor", format_real(t.lr_factor)},
        {"batch_size", std::to_string(t.batch_size)},
        {"loss", to_string(t.loss)},
        {"seed", std::to_string(t.seed)},
        {"shards", std::to_string(t.shards)},
        {"checkpoint_every", std::to_string(t.checkpoint_every)},
        {"train_samples", std::to_string(rc.train_samples)},
        {"test_samples", std::to_string(rc.test_samples)},
    };
}

template <typename Parse>
auto wrap_enum(const std::string& key, const std::string& value, Parse parse) {
    try {
        return parse(value);
    } catch (const ConfigError&) {
        throw;
    } catch (const Error& e) {
        throw ConfigError(key + ": " + e.what());
    }
}

} // namespace

std::size_t parse_size(const std::string& key, const std::string& value) {
    std::uint64_t v = 0;
    const char* end = value.data() + value.size();
    const auto [p, ec] = std::from_chars(value.data(), end, v);
    if (value.empty() || ec != std::errc() || p != end)
        throw ConfigError(key + ": expected a non-negative integer, got '" + value + "'");
    return static_cast<std::size_t>(v);
}

double parse_real(const std::string& key, const std::string& value) {
    double v = 0.0;
    const char* end = value.data() + value.size();
    const auto [p, ec] = std::from_chars(value.data(), end, v);
    if (value.empty() || ec != std::errc() || p != end || !std::isfinite(v))
        throw ConfigError(key + ": expected a finite number, got '" + value + "'");
    return v;
}

bool parse_bool(const std::string& key, const std::string& value) {
    if (value == "true" || value == "1" || value == "yes") return true;
    if (value == "false" || value == "0" || value == "no") return false;
    throw ConfigError(key + ": expected true or false, got '" + value + "'");
}

std::vector<std::size_t> parse_size_list(const std::string& key, const std::string& value) {
    std::vector<std::size_t> out;
    if (trim(value).empty()) return out;
    std::stringstream ss(value);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(parse_size(key, trim(item)));
    return out;
}

std::string format_real(double v) {
    // Shortest text that reads back to the same double.
    char buf[64];
    const auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
    if (ec != std::errc()) throw ConfigError("cannot format number");
    return std::string(buf, p);
}

std::string format_list(std::span<const std::size_t> v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
    return s;
}

void set_model_key(FnoConfig& c, const std::string& key, const std::string& value) {
    const std::string k = "model." + key;
    if (key == "d") {
        c.d = parse_size(k, value);
    } else if (key == "in_channels") {
        c.in_channels = parse_size(k, value);
    } else if (key == "out_channels") {
        c.out_channels = parse_size(k, value);
    } else if (key == "width") {
        c.width = parse_size(k, value);
    } else if (key == "layers") {
        c.layers = parse_size(k, value);
    } else if (key == "modes") {
        c.modes = parse_size_list(k, value);
    } else if (key == "projection_hidden") {
        c.projection_hidden = parse_size(k, value);
    } else if (key == "grid_embedding") {
        c.grid_embedding = parse_bool(k, value);
    } else if (key == "domain_padding") {
        c.domain_padding = parse_real(k, value);
    } else if (key == "form") {
        c.form = wrap_enum(k, value, parse_weight_form);
    } else if (key == "rank_fraction") {
        c.rank.fraction = parse_real(k, value);
    } else if (key == "ranks") {
        c.rank.ranks = parse_size_list(k, value);
    } else if (key == "separable") {
        c.separable = parse_bool(k, value);
    } else if (key == "skip") {
        c.skip = wrap_enum(k, value, parse_skip_kind);
    } else if (key == "norm") {
        c.norm = wrap_enum(k, value, parse_norm_kind);
    } else if (key == "preactivation") {
        c.preactivation = parse_bool(k, value);
    } else if (key == "mlp_expansion") {
        c.mlp_expansion = parse_real(k, value);
    } else if (key == "mlp_skip") {
        c.mlp_skip = wrap_enum(k, value, parse_mlp_skip);
    } else if (key == "activation") {
        c.activation = wrap_enum(k, value, parse_activation);
    } else {
        throw ConfigError("unknown key '" + k + "'");
    }
}

std::vector<std::pair<std::string, std::string>> model_entries(const FnoConfig& c) {
    return {
        {"d", std::to_string(c.d)},
        {"in_channels", std::to_string(c.in_channels)},
        {"out_channels", std::to_string(c.out_channels)},
        {"width", std::to_string(c.width)},
        {"layers", std::to_string(c.layers)},
        {"modes", format_list(c.modes)},
        {"projection_hidden", std::to_string(c.projection_hidden)},
        {"grid_embedding", c.grid_embedding ? "true" : "false"},
        {"domain_padding", format_real(c.domain_padding)},
        {"form", to_string(c.form)},
        {"rank_fraction", format_real(c.rank.fraction)},
        {"ranks", format_list(c.rank.ranks)},
        {"separable", c.separable ? "true" : "false"},
        {"skip", to_string(c.skip)},
        {"norm", to_string(c.norm)},
        {"preactivation", c.preactivation ? "true" : "false"},
        {"mlp_expansion", format_real(c.mlp_expansion)},
        {"mlp_skip", to_string(c.mlp_skip)},
        {"activation", to_string(c.activation)},
    };
}

void set_plan_key(MultiGridPlan& p, const std::string& key, const std::string& value) {
    const std::string k = "multigrid." + key;
    if (key == "levels") {
        p.levels = parse_size(k, value);
    } else if (key == "padding") {
        p.padding = parse_size(k, value);
    } else if (key == "region_exponent") {
        if (value == "auto")
            p.region_exponent.reset();
        else
            p.region_exponent = parse_size(k, value);
    } else {
        throw ConfigError("unknown key '" + k + "'");
    }
}

std::vector<std::pair<std::string, std::string>> plan_entries(const MultiGridPlan& p) {
    return {
        {"levels", std::to_string(p.levels)},
        {"padding", std::to_string(p.padding)},
        {"region_exponent", p.region_exponent ? std::to_string(*p.region_exponent) : "auto"},
    };
}

std::optional<MultiGridPlan> RunConfig::mg_plan() const {
    if (!multigrid) return std::nullopt;
    return plan;
}

void RunConfig::validate() const {
    data.grf.validate();
    if (data.kind == PdeKind::burgers)
        data.burgers.validate();
    else
        data.ns.validate();
    if (data.resolution < 4) throw ConfigError("data.resolution must be at least 4");
    if (data.grf.d != pde_dim(data.kind)) throw ConfigError("GRF dimension does not match the equation");
    model.validate();
    if (model.d != pde_dim(data.kind))
        throw ConfigError("model.d = " + std::to_string(model.d) + " does not match pde " + to_string(data.kind));
    train.validate();
    if (multigrid) {
        if ((std::size_t{1} << log2_of(data.resolution)) != data.resolution)
            throw ConfigError("multigrid needs a power-of-two data.resolution");
        plan.validate();
        if (plan.d != model.d) throw ConfigError("multigrid plan dimension does not match the model");
        if (model.in_channels != plan.channels_for(1))
            throw ConfigError("model.in_channels must be " + std::to_string(plan.channels_for(1)) +
                              " for a multi-grid plan with " + std::to_string(plan.levels) + " levels");
    } else if (model.in_channels != 1) {
        throw ConfigError("model.in_channels must be 1 for single-channel data without multigrid");
    }
}

RunConfig parse_config(std::string_view text, std::span<const std::string> overrides) {
    std::map<std::string, Section> sections;
    std::string current;
    std::istringstream is{std::string(text)};
    std::string raw;
    std::size_t lineno = 0;
    while (std::getline(is, raw)) {
        ++lineno;
        const std::string line = trim(raw);
        const std::string where = "line " + std::to_string(lineno);
        if (line.empty() || line[0] == '#' || line[0] == ';') continue;
        if (line.front() == '[') {
            if (line.back() != ']') throw ConfigError(where + ": malformed section header");
            current = trim(std::string_view(line).substr(1, line.size() - 2));
            if (!kSections.count(current)) throw ConfigError(where + ": unknown section [" + current + "]");
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError(where + ": expected key = value");
        if (current.empty()) throw ConfigError(where + ": key outside of a section");
        const std::string key = trim(std::string_view(line).substr(0, eq));
        if (key.empty()) throw ConfigError(where + ": empty key");
        put(sections[current], key, trim(std::string_view(line).substr(eq + 1)), false, where);
    }
    for (const auto& ov : overrides) {
        const auto eq = ov.find('=');
        const auto dot = ov.find('.');
        if (eq == std::string::npos || dot == std::string::npos || dot > eq)
            throw ConfigError("override '" + ov + "' is not section.key=value");
        const std::string sec = ov.substr(0, dot);
        if (!kSections.count(sec)) throw ConfigError("override '" + ov + "': unknown section");
        put(sections[sec], trim(ov.substr(dot + 1, eq - dot - 1)), trim(ov.substr(eq + 1)), true, "override");
    }

    const auto find = [&](const std::string& sec, const std::string& key) -> std::optional<std::string> {
        const auto it = sections.find(sec);
        if (it == sections.end()) return std::nullopt;
        for (const auto& [k, v] : it->second)
            if (k == key) return v;
        return std::nullopt;
    };

    RunConfig rc;
    if (const auto pde = find("data", "pde")) rc.data.kind = wrap_enum("data.pde", *pde, parse_pde_kind);
    const bool ns = rc.data.kind == PdeKind::navier_stokes;
    rc.data.grf = ns ? GrfSpec::navier_stokes() : GrfSpec::burgers();
    rc.data.resolution = ns ? 64 : 256;
    rc.model.d = pde_dim(rc.data.kind);
    rc.model.modes = ns ? std::vector<std::size_t>{12, 12} : std::vector<std::size_t>{16};

    for (const auto& [k, v] : sections["data"]) set_data_key(rc.data, k, v);
    if (const auto d = find("model", "d")) set_model_key(rc.model, "d", *d);
    for (const auto& [k, v] : sections["model"]) set_model_key(rc.model, k, v);
    if (rc.model.modes.size() == 1 && rc.model.d > 1) rc.model.modes.assign(rc.model.d, rc.model.modes[0]);
    for (const auto& [k, v] : sections["train"]) set_train_key(rc, k, v);

    for (const auto& [k, v] : sections["multigrid"]) {
        if (k == "enabled")
            rc.multigrid = parse_bool("multigrid.enabled", v);
        else
            set_plan_key(rc.plan, k, v);
    }
    rc.plan.d = rc.model.d;
    rc.plan.grid_exponent = log2_of(rc.data.resolution);
    if (rc.multigrid && !find("model", "in_channels")) rc.model.in_channels = rc.plan.channels_for(1);
    rc.validate();
    return rc;
}

RunConfig load_config(const std::filesystem::path& path, std::span<const std::string> overrides) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot read config " + path.string());
    std::stringstream ss;
    ss << is.rdbuf();
    return parse_config(ss.str(), overrides);
}

std::string dump_config(const RunConfig& rc) {
    std::ostringstream os;
    const auto section = [&](const char* name, const std::vector<std::pair<std::string, std::string>>& e) {
        os << '[' << name << "]\n";
        for (const auto& [k, v] : e) os << k << " = " << v << '\n';
        os << '\n';
    };
    section("data", data_entries(rc.data));
    section("model", model_entries(rc.model));
    section("train", train_entries(rc));
    auto mg = plan_entries(rc.plan);
    mg.insert(mg.begin(), {"enabled", rc.multigrid ? "true" : "false"});
    section("multigrid", mg);
    return os.str();
}

} // namespace nopkit
