#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "coam/ops.hpp"

namespace coam {

enum class AttentionScales { kCoarse, kCoarseFine };

struct NetworkConfig {
    int image_size = 64;        // desk-scale default; train/test at larger sizes via config
    int descriptor_dim = 64;
    std::vector<int> encoder_widths = {16, 32, 64, 128};
    std::vector<int> decoder_widths = {64, 64, 32, 32};
    std::vector<int> projection_dims = {32, 32};  // {coarse (f_S), fine (f_L)}
    AttentionScales attention_scales = AttentionScales::kCoarseFine;
    bool ablate_coam = false;  // zero the attended features (unconditioned baseline)

    int downsample_total() const { return 1 << static_cast<int>(encoder_widths.size()); }
    void validate() const;
};

// Features at two resolutions; f_L is spatially 2x f_S.
struct FeaturePyramid {
    Var f_L;
    Var f_S;
    std::vector<Var> skips;  // earlier encoder blocks, finest first
};

struct DescriptorMap {
    Tensor d;  // (D,H,W), unit channel norm per location
    int image_size = 0;
};

struct DistinctivenessMap {
    Tensor r;  // (H,W), values in [0,1]
};

struct PairDescription {
    Var d1_unnorm, d1, r1;
    Var d2_unnorm, d2, r2;
};

// The conditioned-descriptor network: shared encoder, co-attention at one or
// two scales, UNet-style decoder to a unit-norm descriptor map, and a
// pointwise distinctiveness regressor on the unnormalized descriptors.
class CoamNet {
public:
    CoamNet(NetworkConfig cfg, std::uint64_t seed);

    const NetworkConfig& config() const { return cfg_; }

    FeaturePyramid encode(const Var& image);

    // attended[i] = sum_j A[i,j] * h_raw[j], A = row-softmax of projected inner
    // products. g_raw/h_raw are (C,H,W); returns attended (C_h, H_g, W_g) and A.
    std::pair<Var, Var> coattend(const Var& g_raw, const Var& h_raw, const std::string& scale);

    // Decoder from own pyramid plus attended features (may be zero tensors).
    std::pair<Var, Var> decode(const FeaturePyramid& own, const Var& attended_L, const Var& attended_S);

    // Pointwise distinctiveness MLP on (N,D) unnormalized descriptor rows.
    Var distinctiveness_rows(const Var& rows);
    // Full map from a (D,H,W) unnormalized descriptor tensor -> (H,W) scores.
    Var distinctiveness(const Var& d_unnorm);

    // One direction: descriptors for `self` conditioned on `other`.
    struct OneSide {
        Var d_unnorm, d, r;
    };
    OneSide describe_one(const Var& self, const Var& other);

    // Both directions with the inputs swapped for the second.
    PairDescription describe_pair(const Var& i1, const Var& i2);

    // Tensor-level convenience for inference.
    struct PairMaps {
        DescriptorMap d1, d2;
        DistinctivenessMap r1, r2;
    };
    PairMaps describe_pair_maps(const Tensor& i1, const Tensor& i2);

    std::vector<Parameter*> parameters();
    Parameter& param(const std::string& name) { return params_.at(name); }
    void zero_grads();

    std::map<std::string, Tensor> state_dict() const;
    void load_state_dict(const std::map<std::string, Tensor>& st);
    void save(const std::string& path) const;
    void load(const std::string& path);

private:
    Var conv_block(const Var& x, const std::string& name, int stride);
    Var final_conv(const Var& x);
    Parameter& add_param(const std::string& name, std::vector<int> shape, double init_bound);

    NetworkConfig cfg_;
    std::map<std::string, Parameter> params_;
};

}  // namespace coam
