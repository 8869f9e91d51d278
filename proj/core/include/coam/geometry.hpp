#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "coam/matcher.hpp"

namespace coam {

struct Vec2 {
    double x = 0, y = 0;
};
using Mat3 = std::array<std::array<double, 3>, 3>;

struct Homography {
    Mat3 h{};  // normalized so h[2][2] == 1 when nonzero
    static Homography identity();
    Homography inverse() const;
    double det() const;
};

Vec2 homography_apply(const Homography& h, const Vec2& p);

struct CameraIntrinsics {
    double fx = 1, fy = 1, cx = 0, cy = 0;
};

struct RelativePose {
    Mat3 rotation{};
    std::array<double, 3> translation{};  // unit norm, defined up to sign
};

struct RansacConfig {
    int iterations = 2000;
    double inlier_threshold = 1e-3;  // symmetric epipolar distance, normalized coords
    std::uint64_t rng_seed = 0;
};

struct HomographyEval {
    std::vector<double> thresholds;
    std::vector<int> counts;
    std::vector<double> fractions;
};

// A match is correct at threshold t iff ||H(p1) - p2|| <= t.
HomographyEval evaluate_homography_matches(const CorrespondenceSet& matches, const Homography& h,
                                           const std::vector<double>& thresholds);

Vec2 pixel_to_normalized(const Vec2& p, const CameraIntrinsics& k);
Vec2 normalized_to_pixel(const Vec2& p, const CameraIntrinsics& k);
std::vector<std::pair<Vec2, Vec2>> pixels_to_normalized(
    const std::vector<std::pair<Vec2, Vec2>>& corrs, const CameraIntrinsics& k);

struct EssentialResult {
    Mat3 essential{};  // singular values (s,s,0) after projection
    std::vector<bool> inlier_mask;
    int inlier_count = 0;
};

// Normalized 8-point solver inside RANSAC, projection onto the essential
// manifold, least-squares refit on the final inlier set. Deterministic per seed.
EssentialResult estimate_essential_ransac(const std::vector<std::pair<Vec2, Vec2>>& corrs,
                                          const RansacConfig& cfg);

// Cheirality-disambiguated decomposition; translation has unit norm.
RelativePose decompose_essential(const Mat3& e, const std::vector<std::pair<Vec2, Vec2>>& corrs);

// (rotation error, translation angular error), both degrees; translation is
// sign-invariant.
std::pair<double, double> pose_errors(const RelativePose& est, const RelativePose& gt);

struct PoseAccuracy {
    double rotation = 0, translation = 0, joint = 0;
};
PoseAccuracy pose_accuracy(const std::vector<std::pair<double, double>>& errors,
                           double threshold_degrees = 10.0);

// Compose E = [t]_x R from a pose (for synthetic ground truth).
Mat3 essential_from_pose(const RelativePose& pose);

// File formats: homography is 3 lines of 3 floats; a ground-truth pose file is
// "fx fy cx cy", then 3 rows of R, then t.
void save_homography(const std::string& path, const Homography& h);
Homography load_homography(const std::string& path);
void save_pose(const std::string& path, const CameraIntrinsics& k, const RelativePose& pose);
std::pair<CameraIntrinsics, RelativePose> load_pose(const std::string& path);

}  // namespace coam
