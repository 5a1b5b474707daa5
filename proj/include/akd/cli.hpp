#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "akd/harness.hpp"
#include "json.hpp"

namespace akd {

// Fully resolved settings for every command. Unknown keys are rejected.
struct CliConfig {
    ToyDatasetSpec dataset;

    std::size_t teacher_width = 16;
    std::uint64_t teacher_seed = 7;
    TrainSettings teacher_opt;

    ExperimentConfig experiment;

    std::vector<std::size_t> ensemble_k = {1, 3, 5, 10};
    double ensemble_m = 0.1;
    std::size_t ensemble_seeds = 20;
    std::uint64_t ensemble_first_seed = 1;

    std::size_t ablation_seeds = 10;
    std::uint64_t ablation_first_seed = 1;

    static CliConfig from_json(const nlohmann::json& j);
    static CliConfig load(const std::filesystem::path& path);
    nlohmann::json to_json() const;
    void validate() const;
};

struct CheckResult {
    std::string name;
    bool passed = false;
    double value = 0.0;      // worst observed error
    double tolerance = 0.0;
    std::string detail;
};

// Runs every invariant suite; writes reports into out when it is non-empty.
std::vector<CheckResult> run_verification(const std::filesystem::path& out);

// Exit codes: 0 success, 1 verification failure, 2 usage/config error,
// 3 runtime/training error.
int run_cli(std::vector<std::string> args, std::ostream& out, std::ostream& err);

}  // namespace akd
