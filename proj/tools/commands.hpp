#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "optshift/config.hpp"
#include "optshift/data.hpp"
#include "optshift/trainer.hpp"

namespace optshift::cli {

struct CliOptions {
    std::string config_path;
    std::vector<std::string> overrides;  // repeated --set key=value
    std::string out_dir;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> probes;
    bool quiet = false;
    std::string checkpoint_path;  // os-apply and hessian
};

// Resolved config: file (if any) + --set overrides + --seed.
KvConfig resolve_config(const CliOptions& opts);

// Config-driven builders shared by the subcommands.
std::pair<Dataset, Dataset> build_datasets(const KvConfig& cfg);
TrainConfig build_train_config(const KvConfig& cfg);
OsConfig build_os_config(const KvConfig& cfg);
std::vector<std::size_t> model_dims(const KvConfig& cfg, const Dataset& train_ds);

// Subcommand bodies; they throw on failure and return 0 on success.
int cmd_train(const CliOptions& opts);
int cmd_os_apply(const CliOptions& opts);
int cmd_hessian(const CliOptions& opts);
int cmd_sweep(const CliOptions& opts);

// Maps exceptions onto the exit-code contract: 0 ok, 2 config, 3 numeric,
// 4 i/o; anything else 1.
int run_guarded(int (*cmd)(const CliOptions&), const CliOptions& opts);

}  // namespace optshift::cli
