// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "nopkit/autodiff.hpp"
#include "nopkit/fno.hpp"
#include "nopkit/tensor.hpp"

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

namespace nopkit {

/// Multi-grid domain decomposition of a periodic grid of extent 2^s per axis.
///
/// The grid splits into 2^{d r} regions of extent e = 2^{s-r} per axis, where the
/// region exponent r defaults to the level count L. Level l of a region is the
/// window of extent 2^l e centered on the region, subsampled by 2^l back to e
/// points, then widened by p points per side (at that level's resolution) with
/// periodic wrap. Levels are stacked as channels, level-major.
struct MultiGridPlan {
    std::size_t d = 2;
    std::size_t grid_exponent = 0;  // s
    std::size_t levels = 0;         // L
    std::size_t padding = 0;        // p
    /// Regions per axis = 2^r. Unset means r = L; a larger r with L = 0 is plain
    /// domain decomposition.
    std::optional<std::size_t> region_exponent;

    [[nodiscard]] std::size_t regions_exponent() const noexcept { return region_exponent.value_or(levels); }
    [[nodiscard]] std::size_t global_extent() const noexcept { return std::size_t{1} << grid_exponent; }
    [[nodiscard]] std::size_t regions_per_axis() const noexcept { return std::size_t{1} << regions_exponent(); }
    [[nodiscard]] std::size_t region_count() const noexcept;
    [[nodiscard]] std::size_t region_extent() const noexcept { return global_extent() >> regions_exponent(); }
    [[nodiscard]] std::size_t padded_extent() const noexcept { return region_extent() + 2 * padding; }
    /// Raw window extent of level l before subsampling.
    [[nodiscard]] std::size_t level_window(std::size_t level) const noexcept { return region_extent() << level; }
    [[nodiscard]] std::size_t channels_for(std::size_t input_channels) const noexcept {
        return (levels + 1) * input_channels;
    }
    /// Throws PlanError when the plan is inconsistent.
    void validate() const;
};

/// Decomposed inputs of a batch: [batch * regions, (e + 2p)^d, (L + 1) C], sample
/// major, regions row-major within a sample.
struct RegionBatch {
    RTensor inputs;
    std::size_t batch = 0;
    /// Global offset (first level-0 point) of each region, per axis.
    std::vector<std::vector<std::size_t>> offsets;
};

/// Global grid offset of region j.
[[nodiscard]] std::vector<std::size_t> region_offset(const MultiGridPlan& plan, std::size_t region);

/// Global flat point index sampled by each point of one region's level window,
/// laid out [(e + 2p)^d] row-major.
[[nodiscard]] std::vector<std::size_t> level_index_map(const MultiGridPlan& plan, std::size_t region,
                                                       std::size_t level);

/// a: [B, 2^s..., C].
[[nodiscard]] RegionBatch decompose(const RTensor& a, const MultiGridPlan& plan);

/// Drops p points per side: [N, (e + 2p)^d, C] -> [N, e^d, C].
[[nodiscard]] RTensor crop_center(const RTensor& x, std::size_t padding);

/// Places per-region fields [B * regions, e^d, C] onto the global grid [B, 2^s..., C].
[[nodiscard]] RTensor stitch(const RTensor& regions, const MultiGridPlan& plan);
/// Same placement, one tensor [e^d, C] or [1, e^d, C] per region of a single sample.
[[nodiscard]] RTensor stitch(std::span<const RTensor> regions, const MultiGridPlan& plan);
/// Differentiable stitch.
[[nodiscard]] ad::Var stitch(const ad::Var& regions, const MultiGridPlan& plan);

/// Inverse of stitch: the level-0 region blocks of a global field, unpadded.
[[nodiscard]] RTensor split_regions(const RTensor& global, const MultiGridPlan& plan);

/// Global grid points over points of one padded region: 2^{ds} / (2^{s-r} + 2p)^d.
[[nodiscard]] double domain_compression_ratio(const MultiGridPlan& plan);

/// decompose -> independent per-region forward passes -> crop -> stitch. Regions
/// are evaluated on up to `threads` workers (0 = process limit); the result does
/// not depend on the thread count.
[[nodiscard]] RTensor mg_inference(const FnoModel& model, const RTensor& a, const MultiGridPlan& plan,
                                   std::size_t threads = 0);

} // namespace nopkit
