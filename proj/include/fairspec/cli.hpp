#pragma once

// Experiment configuration and the subcommands of the fairspec tool.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "fairspec/attack.hpp"
#include "fairspec/data.hpp"
#include "fairspec/fairness.hpp"
#include "fairspec/pacbayes.hpp"

namespace fairspec::cli {

enum class Command { synth, train, finetune, eval, bound, sharpness, nu_study };

std::string to_string(Command c);
Command command_from_string(const std::string& s);

struct DataConfig {
    std::string source = "blobs";  // blobs | csv | mnist
    std::optional<std::uint64_t> seed;

    BlobParams blobs;
    std::vector<int> test_counts;  // blobs test split; empty means same as train

    std::string train_csv, test_csv;

    std::string train_images, train_labels, test_images, test_labels;
};

struct ModelConfig {
    std::vector<int> hidden;
    std::string checkpoint;  // finetune / eval / bound / sharpness
};

struct BoundConfig {
    double gamma = 0.1;
    double delta = 0.05;
    std::optional<double> nu;
    /// Convert an ℓ∞ attack radius to ℓ₂ via ε·√d before Φ′.
    bool linf_to_l2 = true;
};

struct SharpnessConfig {
    std::vector<double> grid = SharpnessOptions::default_grid();
    int n_samples = 50;
    double drop_threshold = 0.05;
    AccuracyFlavor flavor = AccuracyFlavor::robust;
};

struct NuConfig {
    int num_classes = 10;
    int trials = 100000;
    std::string generator = "uniform";
    int bins = 50;
};

/// Everything a command can read. Sections a command does not use may be
/// present but are not required.
struct ExperimentConfig {
    Command command = Command::train;
    std::uint64_t seed = 0;
    std::optional<int> threads;
    std::string out;
    std::filesystem::path base_dir;  // relative paths resolve against this

    DataConfig data;
    ModelConfig model;
    AttackConfig attack;
    std::optional<AttackConfig> eval_attack;
    RegConfig reg;
    TrainConfig train;
    BoundConfig bound;
    SharpnessConfig sharpness;
    NuConfig nu;

    std::filesystem::path resolve(const std::string& p) const;
    /// The configuration with every default filled in. Output directory and
    /// thread count are left out since they do not affect results.
    nlohmann::json resolved() const;
};

struct Overrides {
    std::optional<std::uint64_t> seed;
    std::optional<int> threads;
    std::optional<std::string> out;
};

/// Strict parse: unknown keys and wrong types throw ConfigError naming the
/// offending key path.
ExperimentConfig parse_config(const nlohmann::json& j, Command command, const Overrides& overrides = {},
                              const std::filesystem::path& base_dir = {});
ExperimentConfig load_config(const std::filesystem::path& path, Command command, const Overrides& overrides = {});

/// Runs a command and returns the process exit status:
/// 0 success, 1 runtime failure, 2 invalid configuration.
int run(Command command, const std::filesystem::path& config_path, const Overrides& overrides);
void execute(const ExperimentConfig& cfg);

}  // namespace fairspec::cli
