#pragma once

#include <filesystem>
#include <vector>

#include "vmi/config.hpp"

namespace vmi {

// Pipeline stages behind the CLI subcommands. Each stage reads its inputs
// from `out` (or builds them, for pretrain), writes its artifacts under
// `out`, and finalizes manifest.json. Identical config + seed reproduce
// byte-identical reports (the manifest's timestamps aside).
void cmd_pretrain(const ExperimentConfig& cfg, const std::filesystem::path& out);
void cmd_attack(const ExperimentConfig& cfg, const std::filesystem::path& out);
void cmd_evaluate(const ExperimentConfig& cfg, const std::filesystem::path& out);
void cmd_run(const ExperimentConfig& cfg, const std::filesystem::path& out);
void cmd_sweep(const ExperimentConfig& cfg, const std::filesystem::path& out,
               const std::vector<double>& gammas);

}  // namespace vmi
