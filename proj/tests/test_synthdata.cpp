#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "coam/synthdata.hpp"

using namespace coam;

TEST_CASE("textures are deterministic, in range, and seed-sensitive") {
    Tensor a = generate_texture(5, 32);
    Tensor b = generate_texture(5, 32);
    Tensor c = generate_texture(6, 32);
    CHECK(a.shape == std::vector<int>{3, 32, 32});
    CHECK(a.data == b.data);
    CHECK(a.data != c.data);
    double mn = 1e9, mx = -1e9;
    for (double v : a.data) {
        mn = std::min(mn, v);
        mx = std::max(mx, v);
    }
    CHECK(mn >= 0.0);
    CHECK(mx <= 1.0);
    // channel normalization touches both ends
    CHECK(mn == doctest::Approx(0.0));
    CHECK(mx == doctest::Approx(1.0));
    CHECK_THROWS_AS(generate_texture(1, 8), std::invalid_argument);
}

TEST_CASE("homography pairs: warp consistency between images and field") {
    HomographyPairSpec spec;
    spec.image_size = 64;
    spec.photometric = {};  // no photometric change
    spec.photometric.noise_sigma = 0;
    spec.photometric.brightness = 0;
    spec.photometric.contrast = 0;
    spec.photometric.tint = 0;
    HomographyPair pair = generate_homography_pair(spec, 11);
    CHECK(pair.image1.shape == std::vector<int>{3, 64, 64});
    CHECK(pair.field.count_valid() > 100);
    // For valid pixels the field must agree with the homography, and the color
    // at the target must match the source up to interpolation error.
    int checked = 0;
    double worst = 0;
    for (int y = 4; y < 60; y += 3)
        for (int x = 4; x < 60; x += 3) {
            if (!pair.field.is_valid(x, y)) continue;
            Vec2 p = homography_apply(pair.h, {static_cast<double>(x), static_cast<double>(y)});
            CHECK(pair.field.tx(x, y) == doctest::Approx(p.x).epsilon(1e-12));
            CHECK(pair.field.ty(x, y) == doctest::Approx(p.y).epsilon(1e-12));
            int x2 = static_cast<int>(std::lround(p.x));
            int y2 = static_cast<int>(std::lround(p.y));
            if (x2 < 1 || x2 > 62 || y2 < 1 || y2 > 62) continue;
            for (int c = 0; c < 3; ++c)
                worst = std::max(worst, std::fabs(pair.image1.at3(c, y, x) -
                                                  pair.image2.at3(c, y2, x2)));
            ++checked;
        }
    CHECK(checked > 50);
    CHECK(worst < 0.35);  // rounding to the nearest pixel bounds the color shift
}

TEST_CASE("homography pairs are deterministic per seed and vary across seeds") {
    HomographyPairSpec spec;
    HomographyPair a = generate_homography_pair(spec, 3);
    HomographyPair b = generate_homography_pair(spec, 3);
    HomographyPair c = generate_homography_pair(spec, 4);
    CHECK(a.image1.data == b.image1.data);
    CHECK(a.image2.data == b.image2.data);
    CHECK(a.h.h == b.h.h);
    CHECK(a.image1.data != c.image1.data);
    CHECK(a.h.h != c.h.h);
    // base_seed shifts the stream too
    spec.base_seed = 99;
    HomographyPair d = generate_homography_pair(spec, 3);
    CHECK(a.h.h != d.h.h);
}

TEST_CASE("pair images stay in [0,1] even with photometric jitter") {
    HomographyPairSpec spec;
    spec.photometric.brightness = 0.4;
    spec.photometric.contrast = 0.5;
    spec.photometric.noise_sigma = 0.05;
    for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
        HomographyPair pair = generate_homography_pair(spec, seed);
        for (double v : pair.image2.data) {
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
        }
    }
}

TEST_CASE("spec hashing distinguishes parameter changes") {
    HomographyPairSpec a, b;
    CHECK(a.hash() == b.hash());
    b.warp.rotation_deg = 16;
    CHECK(a.hash() != b.hash());
    TwoViewSceneSpec s, t;
    CHECK(s.hash() == t.hash());
    t.outlier_fraction = 0.25;
    CHECK(s.hash() != t.hash());
}

TEST_CASE("two-view scenes satisfy the epipolar constraint exactly") {
    TwoViewSceneSpec spec;
    spec.point_count = 80;
    TwoViewScene scene = generate_two_view_scene(spec, 21);
    REQUIRE(static_cast<int>(scene.correspondences.size()) == 80);
    Mat3 e = essential_from_pose(scene.pose);
    auto norm = pixels_to_normalized(scene.correspondences, scene.intrinsics);
    for (const auto& [p1, p2] : norm) {
        // x2^T E x1 with homogeneous normalized coordinates
        double ex0 = e[0][0] * p1.x + e[0][1] * p1.y + e[0][2];
        double ex1 = e[1][0] * p1.x + e[1][1] * p1.y + e[1][2];
        double ex2 = e[2][0] * p1.x + e[2][1] * p1.y + e[2][2];
        double resid = p2.x * ex0 + p2.y * ex1 + ex2;
        CHECK(std::fabs(resid) < 1e-10);
    }
    // all points inside the image
    for (const auto& [p1, p2] : scene.correspondences) {
        CHECK(p1.x >= 0);
        CHECK(p1.x <= 63);
        CHECK(p2.y >= 0);
        CHECK(p2.y <= 63);
    }
}

TEST_CASE("outlier injection hits the exact requested count") {
    TwoViewSceneSpec spec;
    spec.point_count = 60;
    spec.outlier_fraction = 0.25;
    TwoViewScene scene = generate_two_view_scene(spec, 8);
    int n = 0;
    for (bool o : scene.is_outlier) n += o ? 1 : 0;
    CHECK(n == 15);
    // outliers break the epipolar constraint (up to rare chance alignments)
    Mat3 e = essential_from_pose(scene.pose);
    auto norm = pixels_to_normalized(scene.correspondences, scene.intrinsics);
    int broken = 0;
    for (std::size_t i = 0; i < norm.size(); ++i) {
        if (!scene.is_outlier[i]) continue;
        const auto& [p1, p2] = norm[i];
        double ex0 = e[0][0] * p1.x + e[0][1] * p1.y + e[0][2];
        double ex1 = e[1][0] * p1.x + e[1][1] * p1.y + e[1][2];
        double ex2 = e[2][0] * p1.x + e[2][1] * p1.y + e[2][2];
        if (std::fabs(p2.x * ex0 + p2.y * ex1 + ex2) > 1e-6) ++broken;
    }
    CHECK(broken >= 14);
}

TEST_CASE("two-view scenes are deterministic per seed") {
    TwoViewSceneSpec spec;
    spec.point_count = 30;
    spec.pixel_noise_sigma = 0.5;
    spec.outlier_fraction = 0.1;
    TwoViewScene a = generate_two_view_scene(spec, 17);
    TwoViewScene b = generate_two_view_scene(spec, 17);
    TwoViewScene c = generate_two_view_scene(spec, 18);
    REQUIRE(a.correspondences.size() == b.correspondences.size());
    bool same = true;
    for (std::size_t i = 0; i < a.correspondences.size(); ++i)
        same = same && a.correspondences[i].first.x == b.correspondences[i].first.x &&
               a.correspondences[i].second.y == b.correspondences[i].second.y;
    CHECK(same);
    CHECK(a.is_outlier == b.is_outlier);
    CHECK(a.correspondences[0].first.x != c.correspondences[0].first.x);
}

TEST_CASE("generated scene feeds the estimator end to end") {
    TwoViewSceneSpec spec;
    spec.point_count = 64;
    TwoViewScene scene = generate_two_view_scene(spec, 33);
    auto norm = pixels_to_normalized(scene.correspondences, scene.intrinsics);
    RansacConfig cfg;
    cfg.rng_seed = 1;
    EssentialResult res = estimate_essential_ransac(norm, cfg);
    CHECK(res.inlier_count == 64);
    RelativePose est = decompose_essential(res.essential, norm);
    auto [rot_err, trans_err] = pose_errors(est, scene.pose);
    CHECK(rot_err < 0.1);
    CHECK(trans_err < 0.1);
}
