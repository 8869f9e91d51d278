#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "coam/network.hpp"

namespace coam {

enum class LossKind { kHinge, kInfoNce };

struct TrainConfig {
    double margin = 1.0;               // M
    int positives_per_pair = 512;      // L
    int negatives_per_positive = 512;  // N
    int hardest_count = 3;             // H
    double distinctiveness_exponent = 0.25;  // exponent in 1/(1+m)^tau
    double nce_temperature = 20.0;
    double learning_rate = 1e-4;
    int batch_size = 16;  // desk-scale runs use 2
    LossKind loss_kind = LossKind::kHinge;
    int exclusion_radius = 3;  // Chebyshev radius around the true match

    void validate() const;
};

// Dense ground-truth correspondence field for one pair: pixel (x,y) of image 1
// maps to target(x,y) in image 2 where valid.
struct CorrespondenceField {
    int width = 0, height = 0;
    std::vector<double> target_x, target_y;  // row-major, size width*height
    std::vector<std::uint8_t> valid;

    double tx(int x, int y) const { return target_x[static_cast<std::size_t>(y) * width + x]; }
    double ty(int x, int y) const { return target_y[static_cast<std::size_t>(y) * width + x]; }
    bool is_valid(int x, int y) const { return valid[static_cast<std::size_t>(y) * width + x] != 0; }
    int count_valid() const;
};

struct SampledCorrespondences {
    // L positives; negatives stored flat, N per positive.
    std::vector<std::pair<int, int>> pos1;  // x in image 1
    std::vector<std::pair<int, int>> pos2;  // y = round(target(x)) in image 2
    std::vector<std::pair<int, int>> neg2;  // size L*N
    int negatives_per_positive = 0;
};

SampledCorrespondences sample_correspondences(const CorrespondenceField& field, int L, int N,
                                              int exclusion_radius, std::uint64_t seed);

double descriptor_distance(const std::vector<double>& d1, const std::vector<double>& d2);

// Differentiable loss graph pieces. All operate on gathered descriptor rows.
struct HingeLosses {
    Var l_p, l_n, l_hard;
    std::vector<double> negative_distances;  // forward values, L*N
    std::vector<double> positive_distances;  // forward values, L
};
HingeLosses hinge_loss(const Var& d1_map, const Var& d2_map, const SampledCorrespondences& samples,
                       double margin, int hardest_count);

// Indices (into the N negatives of one positive) of the H smallest distances,
// ties broken by lower index.
std::vector<int> hardest_negatives(const std::vector<double>& distances, int h);

// L_r = mean |r(D1_unnorm at positives) - 1/(1+m)^tau|; gradients reach only
// the regressor MLP (descriptor input is detached by the caller).
Var distinctiveness_loss(CoamNet& net, const Var& d1_unnorm_detached,
                         const SampledCorrespondences& samples,
                         const std::vector<double>& negative_distances, double margin,
                         double exponent);

Var infonce_loss(const Var& d1_map, const Var& d2_map, const SampledCorrespondences& samples,
                 double temperature);

struct AdamState {
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    long long step_count = 0;
    std::vector<Tensor> m, v;  // per parameter, same order as CoamNet::parameters()
};

void adam_step(std::vector<Parameter*> params, AdamState& state, double lr);

struct TrainPair {
    Tensor image1, image2;  // (3,H,W) in [0,1]
    CorrespondenceField field;
};

struct StepLosses {
    double l_p = 0, l_n = 0, l_hard = 0, l_r = 0, l_nce = 0, total = 0;
};

struct NanLossError : std::runtime_error {
    explicit NanLossError(const std::string& term)
        : std::runtime_error("NaN loss in term " + term) {}
};

// One optimizer update over a batch of pairs; losses averaged over the batch.
StepLosses train_step(CoamNet& net, const std::vector<const TrainPair*>& batch,
                      const TrainConfig& cfg, AdamState& state, std::uint64_t sample_seed);

}  // namespace coam
