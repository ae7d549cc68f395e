// SPDX-License-Identifier: Apache-2.0
#include "nopkit/multigrid.hpp"

#include "nopkit/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>

namespace nopkit {

std::size_t MultiGridPlan::region_count() const noexcept {
    std::size_t n = 1;
    for (std::size_t a = 0; a < d; ++a) n *= regions_per_axis();
    return n;
}

void MultiGridPlan::validate() const {
    if (d < 1 || d > 2) throw PlanError("multi-grid plan: d must be 1 or 2");
    if (grid_exponent > 30) throw PlanError("multi-grid plan: grid exponent too large");
    const std::size_t r = regions_exponent();
    if (r > grid_exponent)
        throw PlanError("multi-grid plan: 2^" + std::to_string(r) + " regions per axis exceed the grid extent 2^" +
                        std::to_string(grid_exponent));
    if (levels > r) throw PlanError("multi-grid plan: more levels than region subdivisions");
    if (d == 1 && levels > 0) throw PlanError("multi-grid plan: the level hierarchy needs d = 2");
    if (2 * padding >= 2 * region_extent())
        throw PlanError("multi-grid plan: padding " + std::to_string(padding) + " too large for region extent " +
                        std::to_string(region_extent()));
}

std::vector<std::size_t> region_offset(const MultiGridPlan& plan, std::size_t region) {
    if (region >= plan.region_count()) throw PlanError("region index out of range");
    const std::size_t n = plan.regions_per_axis(), e = plan.region_extent();
    std::vector<std::size_t> off(plan.d);
    for (std::size_t a = plan.d; a-- > 0;) {
        off[a] = (region % n) * e;
        region /= n;
    }
    return off;
}

std::vector<std::size_t> level_index_map(const MultiGridPlan& plan, std::size_t region, std::size_t level) {
    plan.validate();
    if (level > plan.levels) throw PlanError("level out of range");
    const auto off = region_offset(plan, region);
    const auto S = static_cast<std::int64_t>(plan.global_extent());
    const auto e = static_cast<std::int64_t>(plan.region_extent());
    const auto p = static_cast<std::int64_t>(plan.padding);
    const std::int64_t stride = std::int64_t{1} << level;
    // Equal margins on both sides of the region inside the raw window.
    const std::int64_t margin = (stride * e - e) / 2;
    const std::size_t P = plan.padded_extent();

    // Per-axis global coordinates of the sampled points.
    std::vector<std::vector<std::size_t>> coord(plan.d, std::vector<std::size_t>(P));
    for (std::size_t a = 0; a < plan.d; ++a)
        for (std::size_t m = 0; m < P; ++m) {
            const std::int64_t g = static_cast<std::int64_t>(off[a]) - margin +
                                   (static_cast<std::int64_t>(m) - p) * stride;
            coord[a][m] = static_cast<std::size_t>(((g % S) + S) % S);
        }
    std::size_t total = 1;
    for (std::size_t a = 0; a < plan.d; ++a) total *= P;
    std::vector<std::size_t> map(total);
    for (std::size_t f = 0; f < total; ++f) {
        std::size_t rest = f, flat = 0, scale = 1;
        for (std::size_t a = plan.d; a-- > 0;) {
            flat += coord[a][rest % P] * scale;
            rest /= P;
            scale *= plan.global_extent();
        }
        map[f] = flat;
    }
    return map;
}

namespace {

void check_global(const RTensor& x, const MultiGridPlan& plan, const char* what) {
    if (x.rank() != plan.d + 2) throw ShapeError(std::string(what) + ": expected [batch, spatial, channels]");
    for (std::size_t a = 0; a < plan.d; ++a)
        if (x.extent(a + 1) != plan.global_extent())
            throw ShapeError(std::string(what) + ": spatial extent " + std::to_string(x.extent(a + 1)) +
                             " differs from 2^s = " + std::to_string(plan.global_extent()));
}

Shape field_shape(std::size_t n, std::size_t extent, std::size_t d, std::size_t channels) {
    std::vector<std::size_t> dims{n};
    for (std::size_t a = 0; a < d; ++a) dims.push_back(extent);
    dims.push_back(channels);
    return Shape(dims);
}

// For stitching: flat index into [B * R, e^d, C] of every point of [B, S^d, C].
std::vector<std::size_t> stitch_indices(const MultiGridPlan& plan, std::size_t batch, std::size_t C) {
    const std::size_t S = plan.global_extent(), e = plan.region_extent(), n = plan.regions_per_axis();
    std::size_t points = 1, rpts = 1;
    for (std::size_t a = 0; a < plan.d; ++a) {
        points *= S;
        rpts *= e;
    }
    const std::size_t R = plan.region_count();
    std::vector<std::size_t> idx(batch * points * C);
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t g = 0; g < points; ++g) {
            std::size_t rest = g, region = 0, local = 0, rscale = 1, lscale = 1;
            for (std::size_t a = plan.d; a-- > 0;) {
                const std::size_t c = rest % S;
                rest /= S;
                region += (c / e) * rscale;
                local += (c % e) * lscale;
                rscale *= n;
                lscale *= e;
            }
            for (std::size_t c = 0; c < C; ++c)
                idx[(b * points + g) * C + c] = (((b * R + region) * rpts) + local) * C + c;
        }
    return idx;
}

} // namespace

RegionBatch decompose(const RTensor& a, const MultiGridPlan& plan) {
    plan.validate();
    check_global(a, plan, "decompose");
    const std::size_t B = a.extent(0), C = a.extent(plan.d + 1), R = plan.region_count();
    const std::size_t Lc = plan.levels + 1;
    std::size_t global_pts = 1;
    for (std::size_t k = 0; k < plan.d; ++k) global_pts *= plan.global_extent();

    RegionBatch out;
    out.batch = B;
    out.inputs = RTensor(field_shape(B * R, plan.padded_extent(), plan.d, Lc * C));
    const std::size_t local_pts = out.inputs.numel() / (B * R * Lc * C);
    for (std::size_t j = 0; j < R; ++j) {
        out.offsets.push_back(region_offset(plan, j));
        for (std::size_t l = 0; l < Lc; ++l) {
            const auto map = level_index_map(plan, j, l);
            for (std::size_t b = 0; b < B; ++b) {
                const double* src = a.data() + b * global_pts * C;
                double* dst = out.inputs.data() + (b * R + j) * local_pts * Lc * C;
                for (std::size_t m = 0; m < local_pts; ++m)
                    for (std::size_t c = 0; c < C; ++c) dst[m * Lc * C + l * C + c] = src[map[m] * C + c];
            }
        }
    }
    return out;
}

RTensor crop_center(const RTensor& x, std::size_t padding) {
    if (x.rank() < 3) throw ShapeError("crop_center: expected [batch, spatial, channels]");
    const std::size_t d = x.rank() - 2;
    for (std::size_t a = 0; a < d; ++a)
        if (x.extent(a + 1) <= 2 * padding) throw ShapeError("crop_center: padding exceeds the extent");
    auto dims = x.shape().dims();
    for (std::size_t a = 0; a < d; ++a) dims[a + 1] -= 2 * padding;
    RTensor out{Shape(dims)};
    const std::size_t C = dims.back();
    const std::size_t pts = out.numel() / (dims[0] * C);
    for (std::size_t n = 0; n < dims[0]; ++n)
        for (std::size_t m = 0; m < pts; ++m) {
            std::size_t rest = m, src = 0, scale = 1;
            for (std::size_t a = d; a-- > 0;) {
                src += (rest % dims[a + 1] + padding) * scale;
                rest /= dims[a + 1];
                scale *= x.extent(a + 1);
            }
            std::copy_n(x.data() + (n * scale + src) * C, C, out.data() + (n * pts + m) * C);
        }
    return out;
}

RTensor stitch(const RTensor& regions, const MultiGridPlan& plan) {
    plan.validate();
    const std::size_t R = plan.region_count(), e = plan.region_extent();
    if (regions.rank() != plan.d + 2) throw ShapeError("stitch: expected [batch * regions, spatial, channels]");
    for (std::size_t a = 0; a < plan.d; ++a)
        if (regions.extent(a + 1) != e)
            throw ShapeError("stitch: region extent " + std::to_string(regions.extent(a + 1)) + ", plan needs " +
                             std::to_string(e) + " (crop the padding first)");
    if (regions.extent(0) % R != 0)
        throw PlanError("stitch: " + std::to_string(regions.extent(0)) + " region fields for " + std::to_string(R) +
                        " regions per sample");
    const std::size_t B = regions.extent(0) / R, C = regions.extent(plan.d + 1);
    const auto idx = stitch_indices(plan, B, C);
    RTensor out(field_shape(B, plan.global_extent(), plan.d, C));
    for (std::size_t i = 0; i < idx.size(); ++i) out[i] = regions[idx[i]];
    return out;
}

RTensor stitch(std::span<const RTensor> regions, const MultiGridPlan& plan) {
    plan.validate();
    if (regions.size() != plan.region_count())
        throw PlanError("stitch: got " + std::to_string(regions.size()) + " regions, plan has " +
                        std::to_string(plan.region_count()));
    const std::size_t e = plan.region_extent();
    std::size_t C = 0;
    std::vector<double> buf;
    for (const auto& r : regions) {
        const bool lead = r.rank() == plan.d + 2;
        if (!lead && r.rank() != plan.d + 1) throw ShapeError("stitch: region rank mismatch");
        if (lead && r.extent(0) != 1) throw ShapeError("stitch: one sample per region tensor");
        for (std::size_t a = 0; a < plan.d; ++a)
            if (r.extent(a + (lead ? 1 : 0)) != e) throw ShapeError("stitch: region extent mismatch");
        const std::size_t c = r.extent(r.rank() - 1);
        if (C != 0 && c != C) throw ShapeError("stitch: channel count differs between regions");
        C = c;
        buf.insert(buf.end(), r.values().begin(), r.values().end());
    }
    RTensor packed(field_shape(regions.size(), e, plan.d, C), std::move(buf));
    return stitch(packed, plan);
}

ad::Var stitch(const ad::Var& regions, const MultiGridPlan& plan) {
    plan.validate();
    const Shape& s = regions.shape();
    const std::size_t R = plan.region_count();
    if (s.rank() != plan.d + 2 || s[0] % R != 0) throw ShapeError("stitch: bad region batch " + s.str());
    for (std::size_t a = 0; a < plan.d; ++a)
        if (s[a + 1] != plan.region_extent()) throw ShapeError("stitch: region extent mismatch");
    const std::size_t B = s[0] / R, C = s[plan.d + 1];
    return ad::gather(regions, stitch_indices(plan, B, C), field_shape(B, plan.global_extent(), plan.d, C));
}

RTensor split_regions(const RTensor& global, const MultiGridPlan& plan) {
    plan.validate();
    check_global(global, plan, "split_regions");
    const std::size_t B = global.extent(0), C = global.extent(plan.d + 1);
    const auto idx = stitch_indices(plan, B, C);
    RTensor out(field_shape(B * plan.region_count(), plan.region_extent(), plan.d, C));
    for (std::size_t i = 0; i < idx.size(); ++i) out[idx[i]] = global[i];
    return out;
}

double domain_compression_ratio(const MultiGridPlan& plan) {
    // Pure arithmetic: the padding bound of decompose does not apply here.
    if (plan.d < 1 || plan.d > 2 || plan.regions_exponent() > plan.grid_exponent)
        throw PlanError("domain_compression_ratio: inconsistent plan");
    const double g = std::pow(static_cast<double>(plan.global_extent()), static_cast<double>(plan.d));
    const double r = std::pow(static_cast<double>(plan.padded_extent()), static_cast<double>(plan.d));
    return g / r;
}

RTensor mg_inference(const FnoModel& model, const RTensor& a, const MultiGridPlan& plan, std::size_t threads) {
    const std::size_t C = a.rank() == plan.d + 2 ? a.extent(plan.d + 1) : 0;
    if (model.config().in_channels != plan.channels_for(C))
        throw ShapeError("mg_inference: model takes " + std::to_string(model.config().in_channels) +
                         " channels, plan builds " + std::to_string(plan.channels_for(C)));
    const RegionBatch batch = decompose(a, plan);
    const std::size_t N = batch.inputs.extent(0);
    const std::size_t in_size = batch.inputs.numel() / N;
    auto one = batch.inputs.shape().dims();
    one[0] = 1;
    const Shape in_shape(one);

    std::vector<RTensor> outs(N);
    parallel_for(
        N,
        [&](std::size_t i) {
            RTensor x(in_shape, std::vector<double>(batch.inputs.data() + i * in_size,
                                                    batch.inputs.data() + (i + 1) * in_size));
            outs[i] = crop_center(model.predict(x), plan.padding);
        },
        threads);
    const std::size_t out_size = outs[0].numel();
    auto dims = outs[0].shape().dims();
    dims[0] = N;
    std::vector<double> buf;
    buf.reserve(N * out_size);
    for (const auto& o : outs) buf.insert(buf.end(), o.values().begin(), o.values().end());
    return stitch(RTensor(Shape(dims), std::move(buf)), plan);
}

} // namespace nopkit
