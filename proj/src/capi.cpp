// SPDX-License-Identifier: Apache-2.0
#include "nopkit/nopkit.h"

#include "nopkit/checkpoint.hpp"
#include "nopkit/config.hpp"
#include "nopkit/error.hpp"
#include "nopkit/parallel.hpp"
#include "nopkit/training.hpp"

#include <cstring>
#include <fstream>
#include <iomanip>
#include <new>
#include <sstream>
#include <string>

struct nopkit_config {
    nopkit::RunConfig cfg;
};

struct nopkit_model {
    nopkit::FnoModel model;
    std::optional<nopkit::MultiGridPlan> plan;
};

namespace {

thread_local std::string g_last_error;

nopkit_status fail(nopkit_status s, const char* what) {
    g_last_error = what;
    return s;
}

// Runs f and converts any exception into a status code plus message.
template <typename F>
nopkit_status guarded(F&& f, nopkit_status plan_status = NOPKIT_ERR_PLAN) {
    g_last_error.clear();
    try {
        f();
        return NOPKIT_OK;
    } catch (const nopkit::ConfigError& e) {
        return fail(NOPKIT_ERR_CONFIG, e.what());
    } catch (const nopkit::SolverError& e) {
        return fail(NOPKIT_ERR_SOLVER, e.what());
    } catch (const nopkit::DivergenceError& e) {
        return fail(NOPKIT_ERR_DIVERGENCE, e.what());
    } catch (const nopkit::IoError& e) {
        return fail(NOPKIT_ERR_IO, e.what());
    } catch (const nopkit::ShapeError& e) {
        return fail(NOPKIT_ERR_SHAPE, e.what());
    } catch (const nopkit::ContractError& e) {
        return fail(NOPKIT_ERR_CONTRACT, e.what());
    } catch (const nopkit::PlanError& e) {
        return fail(plan_status, e.what());
    } catch (const nopkit::OptimizerError& e) {
        return fail(NOPKIT_ERR_OPTIMIZER, e.what());
    } catch (const std::bad_alloc&) {
        return fail(NOPKIT_ERR_INTERNAL, "out of memory");
    } catch (const std::exception& e) {
        return fail(NOPKIT_ERR_INTERNAL, e.what());
    } catch (...) {
        return fail(NOPKIT_ERR_INTERNAL, "unknown error");
    }
}

std::vector<std::string> collect(const char* const* overrides, std::size_t n) {
    if (n > 0 && !overrides) throw nopkit::ContractError("override list is NULL");
    std::vector<std::string> out;
    for (std::size_t i = 0; i < n; ++i) {
        if (!overrides[i]) throw nopkit::ContractError("override " + std::to_string(i) + " is NULL");
        out.emplace_back(overrides[i]);
    }
    return out;
}

nopkit_status copy_text(const std::string& text, char* buf, std::size_t cap, std::size_t* len) {
    if (len) *len = text.size();
    if (cap == 0) return NOPKIT_OK;
    if (!buf) return fail(NOPKIT_ERR_ARGUMENT, "buffer is NULL");
    const std::size_t n = std::min(cap - 1, text.size());
    std::memcpy(buf, text.data(), n);
    buf[n] = '\0';
    return NOPKIT_OK;
}

void fill_info(const nopkit::FnoConfig& mc, const std::optional<nopkit::MultiGridPlan>& plan, std::size_t params,
               double weight_cr, nopkit_info* out) {
    *out = nopkit_info{};
    out->d = mc.d;
    out->width = mc.width;
    out->layers = mc.layers;
    out->param_count = params;
    out->dense_param_count = nopkit::dense_equivalent_param_count(mc);
    out->model_compression = static_cast<double>(out->dense_param_count) / static_cast<double>(params);
    out->weight_compression = weight_cr;
    const std::string form = nopkit::to_string(mc.form);
    std::snprintf(out->form, sizeof out->form, "%s", form.c_str());
    if (plan) {
        out->multigrid = 1;
        out->mg_levels = plan->levels;
        out->mg_padding = plan->padding;
        out->mg_regions = plan->region_count();
        out->mg_grid_extent = plan->global_extent();
        out->domain_compression = nopkit::domain_compression_ratio(*plan);
    }
}

std::string describe(const nopkit::FnoConfig& mc, const std::optional<nopkit::MultiGridPlan>& plan,
                     const std::vector<std::size_t>& ranks, const nopkit_info& info) {
    std::ostringstream os;
    os << std::fixed;
    os << "architecture      FNO d=" << mc.d << " width=" << mc.width << " layers=" << mc.layers
       << " modes=" << nopkit::format_list(mc.modes) << " in=" << mc.in_channels << " out=" << mc.out_channels
       << " projection=" << mc.projection_hidden << '\n';
    os << "block             skip=" << nopkit::to_string(mc.skip) << " norm=" << nopkit::to_string(mc.norm)
       << " preactivation=" << (mc.preactivation ? "yes" : "no") << " mlp_expansion=" << std::setprecision(2)
       << mc.mlp_expansion << " separable=" << (mc.separable ? "yes" : "no")
       << " grid_embedding=" << (mc.grid_embedding ? "yes" : "no") << '\n';
    os << "form              " << info.form;
    if (mc.form != nopkit::WeightForm::dense) os << " ranks=" << nopkit::format_list(ranks);
    os << '\n';
    os << "parameters        " << info.param_count << '\n';
    os << "dense equivalent  " << info.dense_param_count << '\n';
    os << "model CR          " << std::setprecision(2) << info.model_compression << "x\n";
    os << "weight CR         " << std::setprecision(2) << info.weight_compression << "x\n";
    if (plan) {
        os << "multigrid         levels=" << plan->levels << " regions=" << plan->region_count()
           << " region_extent=" << plan->region_extent() << " padding=" << plan->padding
           << " grid=" << plan->global_extent() << '\n';
        os << "domain CR         " << std::setprecision(2) << info.domain_compression << "x\n";
    } else {
        os << "multigrid         none\n";
    }
    return os.str();
}

nopkit::Dataset training_view(const nopkit::Dataset& ds, const nopkit::RunConfig& rc) {
    if (ds.kind != rc.data.kind)
        throw nopkit::ShapeError("dataset holds " + nopkit::to_string(ds.kind) + " samples, config expects " +
                                 nopkit::to_string(rc.data.kind));
    const std::size_t have = ds.resolution(), want = rc.data.resolution;
    if (have == want) return ds;
    if (have % want != 0)
        throw nopkit::ShapeError("dataset resolution " + std::to_string(have) + " is not a multiple of " +
                                 std::to_string(want));
    return nopkit::subsample(ds, have / want);
}

} // namespace

extern "C" {

const char* nopkit_version(void) { return "0.1.0"; }

const char* nopkit_status_name(nopkit_status s) {
    switch (s) {
    case NOPKIT_OK: return "ok";
    case NOPKIT_ERR_INTERNAL: return "internal error";
    case NOPKIT_ERR_CONFIG: return "config error";
    case NOPKIT_ERR_SOLVER: return "solver error";
    case NOPKIT_ERR_DIVERGENCE: return "divergence";
    case NOPKIT_ERR_IO: return "i/o error";
    case NOPKIT_ERR_SHAPE: return "shape error";
    case NOPKIT_ERR_CONTRACT: return "contract error";
    case NOPKIT_ERR_PLAN: return "plan error";
    case NOPKIT_ERR_OPTIMIZER: return "optimizer error";
    case NOPKIT_ERR_ARGUMENT: return "invalid argument";
    }
    return "unknown status";
}

const char* nopkit_last_error(void) { return g_last_error.c_str(); }

void nopkit_set_threads(size_t threads) { nopkit::set_thread_limit(threads); }

nopkit_status nopkit_config_load(const char* path, const char* const* overrides, size_t n_overrides,
                                 nopkit_config** out) {
    if (!out) return fail(NOPKIT_ERR_ARGUMENT, "output handle is NULL");
    *out = nullptr;
    return guarded(
        [&] {
            const auto ov = collect(overrides, n_overrides);
            auto* c = new nopkit_config{path ? nopkit::load_config(path, ov) : nopkit::parse_config("", ov)};
            *out = c;
        },
        NOPKIT_ERR_CONFIG);
}

nopkit_status nopkit_config_parse(const char* text, const char* const* overrides, size_t n_overrides,
                                  nopkit_config** out) {
    if (!out || !text) return fail(NOPKIT_ERR_ARGUMENT, "NULL argument");
    *out = nullptr;
    return guarded(
        [&] {
            const auto ov = collect(overrides, n_overrides);
            *out = new nopkit_config{nopkit::parse_config(text, ov)};
        },
        NOPKIT_ERR_CONFIG);
}

nopkit_status nopkit_config_dump(const nopkit_config* cfg, char* buf, size_t cap, size_t* len) {
    if (!cfg) return fail(NOPKIT_ERR_ARGUMENT, "config handle is NULL");
    g_last_error.clear();
    return copy_text(nopkit::dump_config(cfg->cfg), buf, cap, len);
}

void nopkit_config_free(nopkit_config* cfg) { delete cfg; }

nopkit_status nopkit_gen_data(const nopkit_config* cfg, size_t n, uint64_t seed, const char* out_dir) {
    if (!cfg || !out_dir) return fail(NOPKIT_ERR_ARGUMENT, "NULL argument");
    if (n == 0) return fail(NOPKIT_ERR_ARGUMENT, "sample count must be positive");
    return guarded([&] {
        const nopkit::Dataset ds = nopkit::make_dataset(cfg->cfg.data, n, seed);
        nopkit::save_dataset(out_dir, ds);
    });
}

nopkit_status nopkit_train(const nopkit_config* cfg, const char* data_dir, const char* out_dir,
                           nopkit_epoch_fn on_epoch, void* user) {
    if (!cfg || !data_dir || !out_dir) return fail(NOPKIT_ERR_ARGUMENT, "NULL argument");
    return guarded([&] {
        const nopkit::RunConfig& rc = cfg->cfg;
        const nopkit::Dataset all = training_view(nopkit::load_dataset(data_dir), rc);
        const std::size_t N = all.size();
        if (rc.test_samples >= N)
            throw nopkit::ConfigError("train.test_samples = " + std::to_string(rc.test_samples) +
                                      " leaves no training data out of " + std::to_string(N));
        const std::size_t n_train = rc.train_samples ? rc.train_samples : N - rc.test_samples;
        if (n_train + rc.test_samples > N)
            throw nopkit::ConfigError("train_samples + test_samples exceed the " + std::to_string(N) +
                                      " samples available");
        const nopkit::Dataset train_set = nopkit::slice(all, 0, n_train);
        const nopkit::Dataset test_set =
            rc.test_samples ? nopkit::slice(all, N - rc.test_samples, N) : nopkit::Dataset{};

        const std::filesystem::path out(out_dir);
        std::filesystem::create_directories(out);
        nopkit::TrainConfig tc = rc.train;
        if (tc.checkpoint_every > 0) tc.checkpoint_dir = out / "checkpoints";
        const auto plan = rc.mg_plan();
        {
            std::ofstream os(out / "config.ini");
            os << nopkit::dump_config(rc);
            if (!os) throw nopkit::IoError("cannot write " + (out / "config.ini").string());
        }

        nopkit::FnoModel model(rc.model, rc.train.seed);
        nopkit::EpochCallback cb;
        if (on_epoch)
            cb = [&](const nopkit::EpochMetrics& r, const nopkit::FnoModel&) {
                const nopkit_epoch row{r.epoch, r.train_loss, r.test_l2, r.test_h1, r.lr, r.seconds};
                on_epoch(&row, user);
            };
        const nopkit::MetricsLog log =
            nopkit::train(model, train_set, test_set, tc, plan ? &*plan : nullptr, cb);
        log.write_csv(out / "metrics.csv");
        nopkit::save_checkpoint(out / "checkpoint", model, plan ? &*plan : nullptr);
    });
}

nopkit_status nopkit_model_load(const char* checkpoint_dir, nopkit_model** out) {
    if (!out || !checkpoint_dir) return fail(NOPKIT_ERR_ARGUMENT, "NULL argument");
    *out = nullptr;
    return guarded([&] {
        nopkit::Checkpoint ck = nopkit::load_checkpoint(checkpoint_dir);
        *out = new nopkit_model{std::move(ck.model), ck.plan};
    });
}

nopkit_status nopkit_model_create(const nopkit_config* cfg, uint64_t seed, nopkit_model** out) {
    if (!out || !cfg) return fail(NOPKIT_ERR_ARGUMENT, "NULL argument");
    *out = nullptr;
    return guarded([&] { *out = new nopkit_model{nopkit::FnoModel(cfg->cfg.model, seed), cfg->cfg.mg_plan()}; });
}

nopkit_status nopkit_model_save(const nopkit_model* model, const char* checkpoint_dir) {
    if (!model || !checkpoint_dir) return fail(NOPKIT_ERR_ARGUMENT, "NULL argument");
    return guarded([&] {
        nopkit::save_checkpoint(checkpoint_dir, model->model, model->plan ? &*model->plan : nullptr);
    });
}

void nopkit_model_free(nopkit_model* model) { delete model; }

nopkit_status nopkit_model_info(const nopkit_model* model, nopkit_info* out) {
    if (!model || !out) return fail(NOPKIT_ERR_ARGUMENT, "NULL argument");
    return guarded([&] {
        fill_info(model->model.config(), model->plan, model->model.param_count(),
                  nopkit::compression_ratio(model->model.spectral()), out);
    });
}

nopkit_status nopkit_config_info(const nopkit_config* cfg, nopkit_info* out) {
    if (!cfg || !out) return fail(NOPKIT_ERR_ARGUMENT, "NULL argument");
    return guarded([&] {
        const auto& mc = cfg->cfg.model;
        fill_info(mc, cfg->cfg.mg_plan(), nopkit::model_param_count(mc), nopkit::weight_compression_ratio(mc), out);
    });
}

nopkit_status nopkit_model_describe(const nopkit_model* model, char* buf, size_t cap, size_t* len) {
    if (!model) return fail(NOPKIT_ERR_ARGUMENT, "model handle is NULL");
    std::string text;
    nopkit_info info;
    const nopkit_status s = guarded([&] {
        fill_info(model->model.config(), model->plan, model->model.param_count(),
                  nopkit::compression_ratio(model->model.spectral()), &info);
        text = describe(model->model.config(), model->plan, model->model.spectral().ranks(), info);
    });
    return s == NOPKIT_OK ? copy_text(text, buf, cap, len) : s;
}

nopkit_status nopkit_config_describe(const nopkit_config* cfg, char* buf, size_t cap, size_t* len) {
    if (!cfg) return fail(NOPKIT_ERR_ARGUMENT, "config handle is NULL");
    std::string text;
    nopkit_info info;
    const nopkit_status s = guarded([&] {
        const auto& mc = cfg->cfg.model;
        const auto plan = cfg->cfg.mg_plan();
        fill_info(mc, plan, nopkit::model_param_count(mc), nopkit::weight_compression_ratio(mc), &info);
        text = describe(mc, plan, nopkit::resolve_ranks(mc.form, mc.geometry(), mc.rank), info);
    });
    return s == NOPKIT_OK ? copy_text(text, buf, cap, len) : s;
}

nopkit_status nopkit_model_predict(const nopkit_model* model, const double* input, const size_t* shape, size_t ndim,
                                   double* output, size_t out_cap, size_t* out_len) {
    if (!model || !input || !shape || !output) return fail(NOPKIT_ERR_ARGUMENT, "NULL argument");
    return guarded([&] {
        std::vector<std::size_t> dims(shape, shape + ndim);
        const nopkit::Shape sh(dims);
        nopkit::RTensor x(sh, std::vector<double>(input, input + sh.numel()));
        const nopkit::RTensor y = model->plan ? nopkit::mg_inference(model->model, x, *model->plan)
                                              : model->model.predict(x);
        if (y.numel() > out_cap)
            throw nopkit::ShapeError("output buffer holds " + std::to_string(out_cap) + " values, prediction has " +
                                     std::to_string(y.numel()));
        std::copy(y.storage().begin(), y.storage().end(), output);
        if (out_len) *out_len = y.numel();
    });
}

nopkit_status nopkit_eval(const nopkit_model* model, const char* data_dir, size_t last, const size_t* resolutions,
                          size_t n, nopkit_eval_row* rows) {
    if (!model || !data_dir || (n > 0 && (!resolutions || !rows))) return fail(NOPKIT_ERR_ARGUMENT, "NULL argument");
    return guarded([&] {
        nopkit::Dataset ds = nopkit::load_dataset(data_dir);
        if (last > ds.size())
            throw nopkit::ShapeError("dataset has " + std::to_string(ds.size()) + " samples, asked for the last " +
                                     std::to_string(last));
        if (last > 0) ds = nopkit::slice(ds, ds.size() - last, ds.size());
        const std::vector<std::size_t> res(resolutions, resolutions + n);
        const auto out = nopkit::evaluate(model->model, ds, res, model->plan ? &*model->plan : nullptr);
        for (std::size_t i = 0; i < n; ++i) rows[i] = nopkit_eval_row{out[i].resolution, out[i].rel_l2, out[i].rel_h1};
    });
}

} // extern "C"
