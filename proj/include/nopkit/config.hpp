// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "nopkit/fno.hpp"
#include "nopkit/io.hpp"
#include "nopkit/multigrid.hpp"
#include "nopkit/pde.hpp"
#include "nopkit/training.hpp"

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace nopkit {

/// Everything a command needs, read from an INI file with the sections
/// [data], [model], [train] and [multigrid], plus "section.key=value" overrides.
///
/// Defaults that depend on the equation (GRF measure, model.d) follow data.pde
/// unless set explicitly. With multigrid enabled, model.in_channels defaults to
/// L + 1 and the plan's grid exponent is taken from data.resolution.
struct RunConfig {
    DataConfig data;
    FnoConfig model;
    TrainConfig train;
    /// Leading samples used for training (0 = all but the test samples).
    std::size_t train_samples = 0;
    /// Trailing samples held out for testing.
    std::size_t test_samples = 0;
    bool multigrid = false;
    MultiGridPlan plan;

    /// The plan when multi-grid is enabled.
    [[nodiscard]] std::optional<MultiGridPlan> mg_plan() const;
    /// Throws ConfigError (or PlanError for an inconsistent plan).
    void validate() const;
};

/// Parses INI text. Unknown sections or keys, malformed values and duplicate keys
/// are ConfigErrors; every override must name an existing key.
[[nodiscard]] RunConfig parse_config(std::string_view text, std::span<const std::string> overrides = {});
[[nodiscard]] RunConfig load_config(const std::filesystem::path& path, std::span<const std::string> overrides = {});

/// Canonical text: every key of every section, numbers at full precision.
/// parse_config(dump_config(c)) dumps to the same text.
[[nodiscard]] std::string dump_config(const RunConfig& cfg);

/// Architecture as key=value pairs (the [model] section and the checkpoint manifest).
[[nodiscard]] std::vector<std::pair<std::string, std::string>> model_entries(const FnoConfig& cfg);
/// Sets one architecture key; unknown keys and bad values are ConfigErrors.
void set_model_key(FnoConfig& cfg, const std::string& key, const std::string& value);

[[nodiscard]] std::vector<std::pair<std::string, std::string>> plan_entries(const MultiGridPlan& plan);
void set_plan_key(MultiGridPlan& plan, const std::string& key, const std::string& value);

// Value parsing shared by the config, checkpoint and dataset readers.
[[nodiscard]] std::size_t parse_size(const std::string& key, const std::string& value);
[[nodiscard]] double parse_real(const std::string& key, const std::string& value);
[[nodiscard]] bool parse_bool(const std::string& key, const std::string& value);
[[nodiscard]] std::vector<std::size_t> parse_size_list(const std::string& key, const std::string& value);
[[nodiscard]] std::string format_real(double v);
[[nodiscard]] std::string format_list(std::span<const std::size_t> v);

} // namespace nopkit
