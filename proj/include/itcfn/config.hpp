#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>

#include "itcfn/fusion.hpp"
#include "itcfn/losses.hpp"
#include "itcfn/mmg.hpp"
#include "itcfn/synthdata.hpp"

namespace itcfn {

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct TrainConfig {
    std::size_t epochs_stage1 = 30;
    std::size_t epochs_stage2 = 30;
    std::size_t batch_size = 8;
    double lr = 1e-3;
    std::uint64_t seed = 1;
    std::size_t k_folds = 5;

    void validate() const;
};

struct AblationFlags {
    bool use_mmg = true;
    bool use_tcaf = true;
};

// Everything a run depends on. Serialized as one JSON tree; see
// run_config_to_json for the key layout.
struct RunConfig {
    CohortConfig cohort;
    TrainConfig train;
    loss::LossConfig loss;
    mmg::HybridLossWeights mmg_weights;
    std::size_t codebook_size = 64;
    std::size_t code_dim = 32;
    double commitment_beta = 0.25;
    std::size_t tokens = 8;
    std::size_t token_dim = 8;
    std::size_t heads = 4;
    std::size_t key_dim = 16;
    std::size_t classifier_hidden = 64;
    AblationFlags ablation;
    std::string output_dir = "runs";

    // Throws ConfigError naming the offending key.
    void validate() const;

    mmg::MmgConfig mmg_config(std::uint64_t seed) const;
    FusionConfig fusion_config(std::uint64_t seed) const;
};

// Pretty-printed JSON with every key, defaults included.
std::string run_config_to_json(const RunConfig& config);
// Keys missing from the text keep their defaults; unknown keys, wrong types
// and out-of-range values raise ConfigError.
RunConfig run_config_from_json(const std::string& text);
RunConfig load_run_config(const std::filesystem::path& path);

// FNV-1a 64 of the compact canonical JSON, excluding output_dir, as 16 hex digits.
std::string config_hash(const RunConfig& config);

// Ablation mode names: none, mmg_only, tcaf_only, mmg_tcaf.
std::string ablation_name(const AblationFlags& flags);
AblationFlags ablation_from_name(const std::string& name);

}  // namespace itcfn
