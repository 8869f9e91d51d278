#pragma once

#include <string>

#include "coam/geometry.hpp"
#include "coam/network.hpp"
#include "coam/training.hpp"

namespace coam {

// Merged run configuration. Every field has a default; a run with no config
// file is valid. Resolution order: defaults < config file < CLI flags.
struct RunConfig {
    NetworkConfig network;
    TrainConfig train;
    RansacConfig ransac;
    std::string dataset_dir = "data";
    std::string checkpoint = "coam.ckpt";
    std::string output_dir = "out";
    std::uint64_t seed = 0;

    // Parses "key = value" lines; '#' starts a comment. Unknown keys error.
    void apply_file(const std::string& path);
    void apply_entry(const std::string& key, const std::string& value);
    void write_file(const std::string& path) const;
};

// Default seed from the COAM_SEED environment variable, else 0.
std::uint64_t default_seed_from_env();

}  // namespace coam
