// SPDX-License-Identifier: Apache-2.0
#include "nopkit/training.hpp"

#include "nopkit/checkpoint.hpp"
#include "nopkit/error.hpp"
#include "nopkit/fft.hpp"
#include "nopkit/parallel.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

namespace nopkit {

namespace {

void check_pair(const RTensor& pred, const RTensor& truth, const char* what) {
    require_same_shape(pred.shape(), truth.shape(), what);
    if (pred.rank() < 3) throw ShapeError(std::string(what) + ": expected [B, s..., C], got " + pred.shape().str());
}

std::vector<std::size_t> spatial_axes(const Shape& s) {
    std::vector<std::size_t> axes;
    for (std::size_t a = 1; a + 1 < s.rank(); ++a) axes.push_back(a);
    return axes;
}

// (1 + |k|^2) times the half-axis multiplicity, per half-spectrum point.
std::vector<double> sobolev_weights(const Shape& real_shape) {
    const std::size_t d = real_shape.rank() - 2;
    std::vector<std::size_t> ext(d), half(d);
    for (std::size_t j = 0; j < d; ++j) ext[j] = half[j] = real_shape[j + 1];
    half[d - 1] = ext[d - 1] / 2 + 1;
    std::size_t count = 1;
    for (auto h : half) count *= h;
    std::vector<double> w(count);
    std::vector<std::size_t> idx(d, 0);
    for (std::size_t p = 0; p < count; ++p) {
        double k2 = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            const auto k = static_cast<double>(signed_frequency(idx[j], ext[j]));
            k2 += k * k;
        }
        w[p] = (1.0 + k2) * half_axis_multiplicity(idx[d - 1], ext[d - 1]);
        for (std::size_t j = d; j-- > 0;) {
            if (++idx[j] < half[j]) break;
            idx[j] = 0;
        }
    }
    return w;
}

bool all_finite(const std::vector<double>& g) {
    return std::all_of(g.begin(), g.end(), [](double x) { return std::isfinite(x); });
}

std::vector<double> flatten_grad(const ad::Value& g) {
    if (const auto* r = std::get_if<RTensor>(&g)) return {r->storage().begin(), r->storage().end()};
    const auto& c = std::get<CTensor>(g);
    std::vector<double> out(2 * c.numel());
    for (std::size_t i = 0; i < c.numel(); ++i) {
        out[2 * i] = c[i].real();
        out[2 * i + 1] = c[i].imag();
    }
    return out;
}

RTensor gather_samples(const RTensor& x, std::span<const std::size_t> idx) {
    const std::size_t per = x.numel() / x.extent(0);
    std::vector<std::size_t> dims = x.shape().dims();
    dims[0] = idx.size();
    RTensor out{Shape(dims)};
    for (std::size_t b = 0; b < idx.size(); ++b)
        std::copy_n(x.data() + idx[b] * per, per, out.data() + b * per);
    return out;
}

std::size_t log2_exact(std::size_t n, const char* what) {
    std::size_t s = 0;
    while ((std::size_t{1} << s) < n) ++s;
    if ((std::size_t{1} << s) != n) throw PlanError(std::string(what) + ": resolution " + std::to_string(n) +
                                                    " is not a power of two");
    return s;
}

std::string fmt(double v) {
    std::ostringstream os;
    os << std::setprecision(17) << v;
    return os.str();
}

} // namespace

double rel_l2(const RTensor& pred, const RTensor& truth) {
    check_pair(pred, truth, "rel_l2");
    const std::size_t B = pred.extent(0), per = pred.numel() / B;
    double total = 0.0;
    for (std::size_t b = 0; b < B; ++b) {
        double e2 = 0.0, t2 = 0.0;
        for (std::size_t i = b * per; i < (b + 1) * per; ++i) {
            const double d = pred[i] - truth[i];
            e2 += d * d;
            t2 += truth[i] * truth[i];
        }
        if (t2 == 0.0) throw ContractError("rel_l2: target sample " + std::to_string(b) + " has zero norm");
        total += std::sqrt(e2 / t2);
    }
    return total / static_cast<double>(B);
}

double rel_h1(const RTensor& pred, const RTensor& truth) {
    check_pair(pred, truth, "rel_h1");
    const auto axes = spatial_axes(pred.shape());
    RTensor diff(pred.shape());
    for (std::size_t i = 0; i < diff.numel(); ++i) diff[i] = pred[i] - truth[i];
    const CTensor E = fft_forward(diff, axes);
    const CTensor T = fft_forward(truth, axes);
    const auto w = sobolev_weights(pred.shape());
    const std::size_t B = pred.extent(0), C = pred.extent(pred.rank() - 1), K = w.size();
    double total = 0.0;
    for (std::size_t b = 0; b < B; ++b) {
        double e2 = 0.0, t2 = 0.0;
        for (std::size_t k = 0; k < K; ++k)
            for (std::size_t c = 0; c < C; ++c) {
                const std::size_t i = (b * K + k) * C + c;
                e2 += w[k] * std::norm(E[i]);
                t2 += w[k] * std::norm(T[i]);
            }
        if (t2 == 0.0) throw ContractError("rel_h1: target sample " + std::to_string(b) + " has zero norm");
        total += std::sqrt(e2 / t2);
    }
    return total / static_cast<double>(B);
}

std::string to_string(LossKind k) { return k == LossKind::l2 ? "l2" : "h1"; }

LossKind parse_loss_kind(const std::string& s) {
    if (s == "l2") return LossKind::l2;
    if (s == "h1") return LossKind::h1;
    throw ConfigError("unknown loss '" + s + "' (expected l2 or h1)");
}

void adam_step(std::span<const ParamView> params, std::span<const std::vector<double>> grads, AdamState& state,
               double lr, double weight_decay) {
    if (params.size() != grads.size())
        throw ContractError("adam_step: " + std::to_string(params.size()) + " parameters but " +
                            std::to_string(grads.size()) + " gradients");
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (grads[i].size() != params[i].size)
            throw ShapeError("adam_step: gradient of '" + params[i].name + "' has " + std::to_string(grads[i].size()) +
                             " entries, parameter has " + std::to_string(params[i].size));
        if (!all_finite(grads[i]))
            throw OptimizerError("adam_step: non-finite gradient for parameter '" + params[i].name + "'");
    }
    if (state.m.empty()) {
        for (const auto& p : params) {
            state.m.emplace_back(p.size, 0.0);
            state.v.emplace_back(p.size, 0.0);
        }
    } else if (state.m.size() != params.size()) {
        throw ContractError("adam_step: optimizer state tracks a different parameter list");
    }
    ++state.step;
    const double t = static_cast<double>(state.step);
    const double c1 = 1.0 - std::pow(state.beta1, t);
    const double c2 = 1.0 - std::pow(state.beta2, t);
    const double shrink = 1.0 - lr * weight_decay;
    for (std::size_t i = 0; i < params.size(); ++i) {
        double* p = params[i].data;
        auto& m = state.m[i];
        auto& v = state.v[i];
        const auto& g = grads[i];
        for (std::size_t j = 0; j < params[i].size; ++j) {
            m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g[j];
            v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g[j] * g[j];
            const double mh = m[j] / c1;
            const double vh = v[j] / c2;
            p[j] = p[j] * shrink - lr * mh / (std::sqrt(vh) + state.eps);
        }
    }
}

double TrainConfig::lr_at(std::size_t epoch) const {
    return lr * std::pow(lr_factor, static_cast<double>(epoch / lr_step));
}

void TrainConfig::validate() const {
    if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("train: lr must be positive");
    if (!(weight_decay >= 0.0)) throw ConfigError("train: weight_decay must be non-negative");
    if (batch_size == 0) throw ConfigError("train: batch_size must be positive");
    if (lr_step == 0) throw ConfigError("train: lr_step must be positive");
    if (!(lr_factor > 0.0 && lr_factor <= 1.0)) throw ConfigError("train: lr_factor must lie in (0, 1]");
    if (shards == 0) throw ConfigError("train: shards must be positive");
    if (checkpoint_every > 0 && checkpoint_dir.empty())
        throw ConfigError("train: checkpoint_every needs a checkpoint directory");
}

void MetricsLog::append(const EpochMetrics& row) {
    if (!rows_.empty() && row.epoch <= rows_.back().epoch)
        throw ContractError("MetricsLog: epoch " + std::to_string(row.epoch) + " does not follow " +
                            std::to_string(rows_.back().epoch));
    rows_.push_back(row);
}

std::string MetricsLog::csv() const {
    std::ostringstream os;
    os << "epoch,train_loss,test_l2,test_h1,lr,seconds\n";
    for (const auto& r : rows_)
        os << r.epoch << ',' << fmt(r.train_loss) << ',' << fmt(r.test_l2) << ',' << fmt(r.test_h1) << ','
           << fmt(r.lr) << ',' << fmt(r.seconds) << '\n';
    return os.str();
}

void MetricsLog::write_csv(const std::filesystem::path& path) const {
    std::ofstream os(path);
    if (!os) throw IoError("cannot write " + path.string());
    os << csv();
    if (!os) throw IoError("write failed: " + path.string());
}

RTensor predict_all(const FnoModel& model, const RTensor& inputs, const MultiGridPlan* plan, std::size_t batch) {
    if (inputs.rank() < 3) throw ShapeError("predict_all: expected [N, s..., C], got " + inputs.shape().str());
    const std::size_t N = inputs.extent(0);
    batch = std::max<std::size_t>(batch, 1);
    std::vector<RTensor> parts((N + batch - 1) / batch);
    const auto run = [&](std::size_t c) {
        std::vector<std::size_t> idx;
        for (std::size_t i = c * batch; i < std::min(N, (c + 1) * batch); ++i) idx.push_back(i);
        const RTensor x = gather_samples(inputs, idx);
        parts[c] = plan ? mg_inference(model, x, *plan, 1) : model.predict(x);
    };
    parallel_for(parts.size(), run);
    if (parts.empty()) throw ShapeError("predict_all: empty input");
    std::vector<std::size_t> dims = parts[0].shape().dims();
    dims[0] = N;
    RTensor out{Shape(dims)};
    std::size_t off = 0;
    for (const auto& p : parts) {
        std::copy(p.storage().begin(), p.storage().end(), out.data() + off);
        off += p.numel();
    }
    return out;
}

EvalMetrics evaluate(const FnoModel& model, const Dataset& ds, const MultiGridPlan* plan) {
    ds.validate();
    if (ds.inputs.extent(ds.inputs.rank() - 1) != model.config().in_channels && !plan)
        throw ShapeError("evaluate: dataset has " + std::to_string(ds.inputs.extent(ds.inputs.rank() - 1)) +
                         " input channels, model expects " + std::to_string(model.config().in_channels));
    const RTensor pred = predict_all(model, ds.inputs, plan);
    require_same_shape(pred.shape(), ds.outputs.shape(), "evaluate");
    return EvalMetrics{ds.resolution(), rel_l2(pred, ds.outputs), rel_h1(pred, ds.outputs)};
}

MultiGridPlan rescale_plan(const MultiGridPlan& plan, std::size_t resolution) {
    MultiGridPlan out = plan;
    const std::size_t s = log2_exact(resolution, "rescale_plan");
    out.grid_exponent = s;
    out.region_exponent = plan.regions_exponent();
    const double f = static_cast<double>(resolution) / static_cast<double>(plan.global_extent());
    out.padding = static_cast<std::size_t>(std::llround(static_cast<double>(plan.padding) * f));
    out.validate();
    return out;
}

std::vector<EvalMetrics> evaluate(const FnoModel& model, const Dataset& ds, std::span<const std::size_t> resolutions,
                                  const MultiGridPlan* plan) {
    ds.validate();
    std::vector<EvalMetrics> rows;
    const std::size_t native = ds.resolution();
    const std::size_t d = ds.inputs.rank() - 2;
    std::vector<std::size_t> axes(d);
    std::iota(axes.begin(), axes.end(), std::size_t{1});
    for (const std::size_t r : resolutions) {
        if (r == 0) throw ShapeError("evaluate: resolution 0");
        std::optional<MultiGridPlan> scaled;
        if (plan) scaled = rescale_plan(*plan, r);
        const MultiGridPlan* p = scaled ? &*scaled : nullptr;
        if (r == native) {
            rows.push_back(evaluate(model, ds, p));
            continue;
        }
        Dataset re = ds;
        const std::vector<std::size_t> ext(d, r);
        re.inputs = resample_spectral(ds.inputs, axes, ext);
        re.outputs = resample_spectral(ds.outputs, axes, ext);
        rows.push_back(evaluate(model, re, p));
    }
    return rows;
}

MetricsLog train(FnoModel& model, const Dataset& train_set, const Dataset& test, const TrainConfig& cfg,
                 const MultiGridPlan* plan, const EpochCallback& on_epoch) {
    cfg.validate();
    train_set.validate();
    if (train_set.size() == 0) throw ContractError("train: empty training set");
    const std::size_t data_channels = train_set.inputs.extent(train_set.inputs.rank() - 1);
    const std::size_t want = plan ? plan->channels_for(data_channels) : data_channels;
    if (model.config().in_channels != want)
        throw ShapeError("train: model expects " + std::to_string(model.config().in_channels) +
                         " input channels, data provides " + std::to_string(want));
    if (plan) {
        plan->validate();
        if (train_set.resolution() != plan->global_extent())
            throw PlanError("train: data resolution " + std::to_string(train_set.resolution()) +
                            " does not match the multi-grid plan extent " + std::to_string(plan->global_extent()));
    }

    const auto t0 = std::chrono::steady_clock::now();
    std::mt19937_64 shuffler(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
    AdamState adam;
    MetricsLog log;
    const std::size_t N = train_set.size();
    std::vector<std::size_t> order(N);
    std::iota(order.begin(), order.end(), std::size_t{0});

    const std::size_t d = train_set.inputs.rank() - 2;
    const std::vector<std::size_t> crop(d, plan ? plan->padding : 0);

    // Loss and flat gradients of one shard, weighted by its share of the batch.
    const auto shard_pass = [&](std::span<const std::size_t> idx, double weight, double& loss,
                                std::vector<std::vector<double>>& grads) {
        const RTensor x = gather_samples(train_set.inputs, idx);
        const RTensor y = gather_samples(train_set.outputs, idx);
        ad::Tape tape;
        const auto bound = model.bind(tape);
        ad::Var pred;
        if (plan) {
            const RegionBatch rb = decompose(x, *plan);
            ad::Var regions = model.forward(bound, rb.inputs);
            if (plan->padding > 0) regions = ad::crop_spatial(regions, crop);
            pred = stitch(regions, *plan);
        } else {
            pred = model.forward(bound, x);
        }
        ad::Var l = cfg.loss == LossKind::l2 ? ad::rel_l2_loss(pred, y) : ad::rel_h1_loss(pred, y);
        loss = l.real()[0];
        l = ad::scale(l, weight);
        auto g = tape.backward(l);
        grads.clear();
        for (const auto& v : bound) grads.push_back(flatten_grad(g.at(v.id())));
    };

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr = cfg.lr_at(epoch);
        std::shuffle(order.begin(), order.end(), shuffler);
        double loss_sum = 0.0;
        for (std::size_t start = 0; start < N; start += cfg.batch_size) {
            const std::size_t B = std::min(cfg.batch_size, N - start);
            const std::span<const std::size_t> batch(order.data() + start, B);
            const std::size_t S = std::min(cfg.shards, B);
            std::vector<double> losses(S);
            std::vector<std::vector<std::vector<double>>> grads(S);
            std::vector<std::size_t> bounds(S + 1);
            for (std::size_t s = 0; s <= S; ++s) bounds[s] = s * B / S;
            const auto run = [&](std::size_t s) {
                const auto part = batch.subspan(bounds[s], bounds[s + 1] - bounds[s]);
                shard_pass(part, static_cast<double>(part.size()) / static_cast<double>(B), losses[s], grads[s]);
            };
            if (S == 1)
                run(0);
            else
                parallel_for(S, run);

            double batch_loss = 0.0;
            for (std::size_t s = 0; s < S; ++s)
                batch_loss += losses[s] * static_cast<double>(bounds[s + 1] - bounds[s]) / static_cast<double>(B);
            if (!std::isfinite(batch_loss))
                throw DivergenceError("training diverged at epoch " + std::to_string(epoch + 1) +
                                      ": loss is not finite");
            for (std::size_t s = 1; s < S; ++s)
                for (std::size_t p = 0; p < grads[0].size(); ++p)
                    for (std::size_t j = 0; j < grads[0][p].size(); ++j) grads[0][p][j] += grads[s][p][j];

            const auto params = model.parameters();
            adam_step(params, grads[0], adam, lr, cfg.weight_decay);
            loss_sum += batch_loss * static_cast<double>(B);
        }

        EpochMetrics row;
        row.epoch = epoch + 1;
        row.train_loss = loss_sum / static_cast<double>(N);
        row.lr = lr;
        row.test_l2 = row.test_h1 = std::numeric_limits<double>::quiet_NaN();
        if (test.size() > 0) {
            const EvalMetrics m = evaluate(model, test, plan);
            row.test_l2 = m.rel_l2;
            row.test_h1 = m.rel_h1;
        }
        row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        log.append(row);
        if (cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0)
            save_checkpoint(cfg.checkpoint_dir / ("epoch_" + std::to_string(epoch + 1)), model, plan);
        if (on_epoch) on_epoch(row, model);
    }
    return log;
}

} // namespace nopkit
