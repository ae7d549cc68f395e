// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "nopkit/fno.hpp"
#include "nopkit/multigrid.hpp"

#include <filesystem>
#include <optional>

namespace nopkit {

struct Checkpoint {
    FnoModel model;
    std::optional<MultiGridPlan> plan;
};

/// Directory holding manifest.txt (architecture, factorization form, resolved
/// ranks, parameter list, optional multi-grid plan) and one tensor record
/// <name>.ntns per stored parameter array.
void save_checkpoint(const std::filesystem::path& dir, const FnoModel& model, const MultiGridPlan* plan = nullptr);

/// Missing files, unknown keys and arrays whose shape disagrees with the
/// manifest are IoErrors.
[[nodiscard]] Checkpoint load_checkpoint(const std::filesystem::path& dir);

} // namespace nopkit
