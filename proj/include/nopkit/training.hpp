// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "nopkit/fno.hpp"
#include "nopkit/multigrid.hpp"
#include "nopkit/pde.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace nopkit {

/// Relative L2 error ||pred - true|| / ||true||, averaged over the leading batch axis.
[[nodiscard]] double rel_l2(const RTensor& pred, const RTensor& truth);
/// Relative H1 error with ||u||^2 = sum_k (1 + |k|^2) |u_k|^2 over integer mode
/// indices k, computed from the spectrum of fields [B, s..., C]; batch-averaged.
[[nodiscard]] double rel_h1(const RTensor& pred, const RTensor& truth);

enum class LossKind { l2, h1 };

[[nodiscard]] std::string to_string(LossKind k);
[[nodiscard]] LossKind parse_loss_kind(const std::string& s);

struct AdamState {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::size_t step = 0;
    /// Moments per parameter, flat as in ParamView (complex as (re, im) pairs).
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;
};

/// One Adam update with bias correction and decoupled weight decay:
/// p <- p (1 - lr wd), then p <- p - lr m_hat / (sqrt(v_hat) + eps).
/// grads[i] has params[i].size entries. Non-finite gradients throw
/// OptimizerError naming the parameter; nothing is modified in that case.
void adam_step(std::span<const ParamView> params, std::span<const std::vector<double>> grads, AdamState& state,
               double lr, double weight_decay);

struct TrainConfig {
    double lr = 1e-3;
    double weight_decay = 1e-4;
    std::size_t epochs = 500;
    std::size_t lr_step = 100;
    double lr_factor = 0.5;
    std::size_t batch_size = 20;
    LossKind loss = LossKind::h1;
    std::uint64_t seed = 0;
    /// Independent tapes per mini-batch, evaluated in parallel and summed in order.
    std::size_t shards = 1;
    /// Write a checkpoint every K epochs under checkpoint_dir (0 = never).
    std::size_t checkpoint_every = 0;
    std::filesystem::path checkpoint_dir;

    /// lr * lr_factor^{floor(epoch / lr_step)}.
    [[nodiscard]] double lr_at(std::size_t epoch) const;
    void validate() const;
};

struct EpochMetrics {
    std::size_t epoch = 0;  // 1-based
    double train_loss = 0.0;
    double test_l2 = 0.0;
    double test_h1 = 0.0;
    double lr = 0.0;
    double seconds = 0.0;  // wall time since training started

    friend bool operator==(const EpochMetrics&, const EpochMetrics&) = default;
};

class MetricsLog {
public:
    /// Epoch indices must increase.
    void append(const EpochMetrics& row);
    [[nodiscard]] const std::vector<EpochMetrics>& rows() const noexcept { return rows_; }
    [[nodiscard]] bool empty() const noexcept { return rows_.empty(); }
    [[nodiscard]] std::string csv() const;
    void write_csv(const std::filesystem::path& path) const;

private:
    std::vector<EpochMetrics> rows_;
};

struct EvalMetrics {
    std::size_t resolution = 0;
    double rel_l2 = 0.0;
    double rel_h1 = 0.0;
};

/// Predictions for inputs [N, s..., C], in chunks of `batch` samples; with a plan
/// the model runs per region through mg_inference.
[[nodiscard]] RTensor predict_all(const FnoModel& model, const RTensor& inputs, const MultiGridPlan* plan,
                                  std::size_t batch = 32);

/// Metrics of the whole dataset at its own resolution.
[[nodiscard]] EvalMetrics evaluate(const FnoModel& model, const Dataset& ds, const MultiGridPlan* plan = nullptr);

/// One row per resolution; datasets at other resolutions are derived by
/// band-limited resampling of both inputs and outputs. Multi-grid plans are
/// rescaled to keep the region count and padding fraction.
[[nodiscard]] std::vector<EvalMetrics> evaluate(const FnoModel& model, const Dataset& ds,
                                                std::span<const std::size_t> resolutions,
                                                const MultiGridPlan* plan = nullptr);

/// The plan for another power-of-two resolution: same levels and region count,
/// padding scaled with the grid.
[[nodiscard]] MultiGridPlan rescale_plan(const MultiGridPlan& plan, std::size_t resolution);

/// Called after each epoch with the row just logged.
using EpochCallback = std::function<void(const EpochMetrics&, const FnoModel&)>;

/// Mini-batch training. Batches are drawn by a shuffle seeded from cfg.seed
/// (a stream separate from data generation). With a plan, each sample is
/// decomposed, the model runs on the regions, and the loss is taken on the
/// cropped and stitched global prediction. A non-finite loss throws
/// DivergenceError naming the epoch. Test metrics are skipped (NaN) when `test`
/// is empty.
MetricsLog train(FnoModel& model, const Dataset& train_set, const Dataset& test, const TrainConfig& cfg,
                 const MultiGridPlan* plan = nullptr, const EpochCallback& on_epoch = {});

} // namespace nopkit
