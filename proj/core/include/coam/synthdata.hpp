#pragma once

#include <cstdint>

#include "coam/geometry.hpp"
#include "coam/training.hpp"

namespace coam {

struct WarpRanges {
    double rotation_deg = 15;
    double scale = 0.15;        // log-uniform-ish scale deviation
    double anisotropy = 0.05;
    double perspective = 0.0008;  // magnitude of the projective row
    double translation_px = 6;
};

struct PhotometricRanges {
    double brightness = 0.1;   // additive offset range
    double contrast = 0.2;     // gain deviation range
    double tint = 0.05;        // per-channel gain deviation
    double noise_sigma = 0.01; // additive Gaussian noise
};

struct HomographyPairSpec {
    std::uint64_t base_seed = 0;
    int image_size = 64;
    WarpRanges warp;
    PhotometricRanges photometric;
    std::uint64_t hash() const;
};

struct TwoViewSceneSpec {
    int point_count = 100;
    double depth_min = 4.0, depth_max = 10.0;
    CameraIntrinsics intrinsics{120, 120, 32, 32};
    double rotation_deg = 10.0;
    double translation_mag = 1.0;
    double pixel_noise_sigma = 0.0;
    double outlier_fraction = 0.0;
    int image_size = 64;
    std::uint64_t hash() const;
};

// Multi-octave value noise in [0,1] with distinctive local structure.
Tensor generate_texture(std::uint64_t seed, int size);

struct HomographyPair {
    Tensor image1, image2;  // (3,S,S)
    Homography h;           // image1 pixel -> image2 pixel
    CorrespondenceField field;
};

HomographyPair generate_homography_pair(const HomographyPairSpec& spec, std::uint64_t seed);

struct TwoViewScene {
    std::vector<std::pair<Vec2, Vec2>> correspondences;  // pixel coords
    std::vector<bool> is_outlier;
    CameraIntrinsics intrinsics;
    RelativePose pose;
};

TwoViewScene generate_two_view_scene(const TwoViewSceneSpec& spec, std::uint64_t seed);

}  // namespace coam
