#include "coam/config.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace coam {

namespace {

std::string trim(const std::string& s) {
    auto b = s.find_first_not_of(" \t\r");
    auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? "" : s.substr(b, e - b + 1);
}

std::vector<int> parse_int_list(const std::string& v) {
    std::vector<int> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(std::stoi(trim(item)));
    return out;
}

std::string join_ints(const std::vector<int>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
    return s;
}

}  // namespace

void RunConfig::apply_entry(const std::string& key, const std::string& value) {
    if (key == "image_size") network.image_size = std::stoi(value);
    else if (key == "descriptor_dim") network.descriptor_dim = std::stoi(value);
    else if (key == "encoder_widths") network.encoder_widths = parse_int_list(value);
    else if (key == "decoder_widths") network.decoder_widths = parse_int_list(value);
    else if (key == "projection_dims") network.projection_dims = parse_int_list(value);
    else if (key == "attention_scales") {
        if (value == "coarse") network.attention_scales = AttentionScales::kCoarse;
        else if (value == "coarse_fine") network.attention_scales = AttentionScales::kCoarseFine;
        else throw std::invalid_argument("attention_scales must be coarse or coarse_fine");
    } else if (key == "ablate_coam") network.ablate_coam = std::stoi(value) != 0;
    else if (key == "margin") train.margin = std::stod(value);
    else if (key == "positives_per_pair") train.positives_per_pair = std::stoi(value);
    else if (key == "negatives_per_positive") train.negatives_per_positive = std::stoi(value);
    else if (key == "hardest_count") train.hardest_count = std::stoi(value);
    else if (key == "distinctiveness_exponent") train.distinctiveness_exponent = std::stod(value);
    else if (key == "nce_temperature") train.nce_temperature = std::stod(value);
    else if (key == "learning_rate") train.learning_rate = std::stod(value);
    else if (key == "batch_size") train.batch_size = std::stoi(value);
    else if (key == "exclusion_radius") train.exclusion_radius = std::stoi(value);
    else if (key == "loss_kind") {
        if (value == "hinge") train.loss_kind = LossKind::kHinge;
        else if (value == "infonce") train.loss_kind = LossKind::kInfoNce;
        else throw std::invalid_argument("loss_kind must be hinge or infonce");
    } else if (key == "ransac_iterations") ransac.iterations = std::stoi(value);
    else if (key == "ransac_threshold") ransac.inlier_threshold = std::stod(value);
    else if (key == "seed") seed = std::stoull(value);
    else if (key == "dataset_dir") dataset_dir = value;
    else if (key == "checkpoint") checkpoint = value;
    else if (key == "output_dir") output_dir = value;
    else throw std::invalid_argument("unknown config key: " + key);
}

void RunConfig::apply_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("config: cannot open " + path);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::runtime_error("config: missing '=' at " + path + ":" + std::to_string(lineno));
        try {
            apply_entry(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
        } catch (const std::exception& e) {
            throw std::runtime_error("config: " + path + ":" + std::to_string(lineno) + ": " +
                                     e.what());
        }
    }
}

void RunConfig::write_file(const std::string& path) const {
    std::FILE* f = std::fopen(path.c_str(), "w");
    if (!f) throw std::runtime_error("config: cannot write " + path);
    std::fprintf(f, "image_size = %d\n", network.image_size);
    std::fprintf(f, "descriptor_dim = %d\n", network.descriptor_dim);
    std::fprintf(f, "encoder_widths = %s\n", join_ints(network.encoder_widths).c_str());
    std::fprintf(f, "decoder_widths = %s\n", join_ints(network.decoder_widths).c_str());
    std::fprintf(f, "projection_dims = %s\n", join_ints(network.projection_dims).c_str());
    std::fprintf(f, "attention_scales = %s\n",
                 network.attention_scales == AttentionScales::kCoarse ? "coarse" : "coarse_fine");
    std::fprintf(f, "ablate_coam = %d\n", network.ablate_coam ? 1 : 0);
    std::fprintf(f, "margin = %.12g\n", train.margin);
    std::fprintf(f, "positives_per_pair = %d\n", train.positives_per_pair);
    std::fprintf(f, "negatives_per_positive = %d\n", train.negatives_per_positive);
    std::fprintf(f, "hardest_count = %d\n", train.hardest_count);
    std::fprintf(f, "distinctiveness_exponent = %.12g\n", train.distinctiveness_exponent);
    std::fprintf(f, "nce_temperature = %.12g\n", train.nce_temperature);
    std::fprintf(f, "learning_rate = %.12g\n", train.learning_rate);
    std::fprintf(f, "batch_size = %d\n", train.batch_size);
    std::fprintf(f, "exclusion_radius = %d\n", train.exclusion_radius);
    std::fprintf(f, "loss_kind = %s\n", train.loss_kind == LossKind::kHinge ? "hinge" : "infonce");
    std::fprintf(f, "ransac_iterations = %d\n", ransac.iterations);
    std::fprintf(f, "ransac_threshold = %.12g\n", ransac.inlier_threshold);
    std::fprintf(f, "seed = %llu\n", static_cast<unsigned long long>(seed));
    std::fclose(f);
}

std::uint64_t default_seed_from_env() {
    const char* env = std::getenv("COAM_SEED");
    if (!env) return 0;
    return std::strtoull(env, nullptr, 10);
}

}  // namespace coam
