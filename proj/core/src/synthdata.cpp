#include "coam/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <random>

namespace coam {

namespace {

std::uint64_t fnv1a(const void* data, std::size_t len, std::uint64_t h = 0xcbf29ce484222325ull) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

std::uint64_t hash_doubles(std::initializer_list<double> vs, std::uint64_t h) {
    for (double v : vs) h = fnv1a(&v, sizeof(v), h);
    return h;
}

}  // namespace

std::uint64_t HomographyPairSpec::hash() const {
    std::uint64_t h = fnv1a(&base_seed, sizeof(base_seed));
    h = fnv1a(&image_size, sizeof(image_size), h);
    h = hash_doubles({warp.rotation_deg, warp.scale, warp.anisotropy, warp.perspective,
                      warp.translation_px, photometric.brightness, photometric.contrast,
                      photometric.tint, photometric.noise_sigma},
                     h);
    return h;
}

std::uint64_t TwoViewSceneSpec::hash() const {
    std::uint64_t h = fnv1a(&point_count, sizeof(point_count));
    h = fnv1a(&image_size, sizeof(image_size), h);
    h = hash_doubles({depth_min, depth_max, intrinsics.fx, intrinsics.fy, intrinsics.cx,
                      intrinsics.cy, rotation_deg, translation_mag, pixel_noise_sigma,
                      outlier_fraction},
                     h);
    return h;
}

Tensor generate_texture(std::uint64_t seed, int size) {
    if (size < 16) throw std::invalid_argument("generate_texture: size must be >= 16");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    Tensor out({3, size, size});
    // Octaves of value noise on lattices of 4..32 cells, halving amplitude.
    const int octave_cells[] = {4, 8, 16, 32};
    for (int c = 0; c < 3; ++c) {
        double amp = 1.0;
        for (int cells : octave_cells) {
            std::vector<double> lattice(static_cast<std::size_t>(cells + 1) * (cells + 1));
            for (double& v : lattice) v = uni(rng);
            for (int y = 0; y < size; ++y)
                for (int x = 0; x < size; ++x) {
                    double fx = static_cast<double>(x) / size * cells;
                    double fy = static_cast<double>(y) / size * cells;
                    int x0 = static_cast<int>(fx), y0 = static_cast<int>(fy);
                    double wx = fx - x0, wy = fy - y0;
                    auto at = [&](int yy, int xx) {
                        return lattice[static_cast<std::size_t>(yy) * (cells + 1) + xx];
                    };
                    double v = (1 - wy) * ((1 - wx) * at(y0, x0) + wx * at(y0, x0 + 1)) +
                               wy * ((1 - wx) * at(y0 + 1, x0) + wx * at(y0 + 1, x0 + 1));
                    out.at3(c, y, x) += amp * v;
                }
            amp *= 0.5;
        }
    }
    // Normalize each channel to [0,1].
    for (int c = 0; c < 3; ++c) {
        double mn = 1e30, mx = -1e30;
        for (int i = 0; i < size * size; ++i) {
            double v = out.data[static_cast<std::size_t>(c) * size * size + i];
            mn = std::min(mn, v);
            mx = std::max(mx, v);
        }
        double scale = mx > mn ? 1.0 / (mx - mn) : 1.0;
        for (int i = 0; i < size * size; ++i) {
            double& v = out.data[static_cast<std::size_t>(c) * size * size + i];
            v = (v - mn) * scale;
        }
    }
    return out;
}

namespace {

Mat3 matmul3(const Mat3& a, const Mat3& b) {
    Mat3 c{};
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            for (int k = 0; k < 3; ++k) c[i][j] += a[i][k] * b[k][j];
    return c;
}

double bilinear_at(const Tensor& img, int c, double x, double y) {
    int w = img.shape[2], h = img.shape[1];
    x = std::clamp(x, 0.0, static_cast<double>(w - 1));
    y = std::clamp(y, 0.0, static_cast<double>(h - 1));
    int x0 = std::min(static_cast<int>(x), w - 2), y0 = std::min(static_cast<int>(y), h - 2);
    double wx = x - x0, wy = y - y0;
    return (1 - wy) * ((1 - wx) * img.at3(c, y0, x0) + wx * img.at3(c, y0, x0 + 1)) +
           wy * ((1 - wx) * img.at3(c, y0 + 1, x0) + wx * img.at3(c, y0 + 1, x0 + 1));
}

}  // namespace

HomographyPair generate_homography_pair(const HomographyPairSpec& spec, std::uint64_t seed) {
    const int s = spec.image_size;
    std::mt19937_64 rng(seed ^ spec.base_seed);
    auto uni = [&](double lo, double hi) {
        return std::uniform_real_distribution<double>(lo, hi)(rng);
    };
    double angle = uni(-spec.warp.rotation_deg, spec.warp.rotation_deg) * M_PI / 180.0;
    double scale = std::exp(uni(-spec.warp.scale, spec.warp.scale));
    double aniso = std::exp(uni(-spec.warp.anisotropy, spec.warp.anisotropy));
    double px = uni(-spec.warp.perspective, spec.warp.perspective);
    double py = uni(-spec.warp.perspective, spec.warp.perspective);
    double tx = uni(-spec.warp.translation_px, spec.warp.translation_px);
    double ty = uni(-spec.warp.translation_px, spec.warp.translation_px);
    double c = s / 2.0;
    Mat3 to_center = {{{1, 0, -c}, {0, 1, -c}, {0, 0, 1}}};
    double ca = std::cos(angle), sa = std::sin(angle);
    Mat3 core = {{{scale * aniso * ca, -scale * sa, tx},
                  {scale * sa, scale / aniso * ca, ty},
                  {px, py, 1}}};
    Mat3 from_center = {{{1, 0, c}, {0, 1, c}, {0, 0, 1}}};
    Homography h;
    h.h = matmul3(from_center, matmul3(core, to_center));
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) h.h[i][j] /= h.h[2][2];
    if (std::fabs(h.det()) <= 1e-12)
        throw std::runtime_error("generate_homography_pair: degenerate warp");
    // Keep warped corners within a 2x padded canvas.
    for (double cx : {0.0, static_cast<double>(s - 1)})
        for (double cy : {0.0, static_cast<double>(s - 1)}) {
            Vec2 p = homography_apply(h, {cx, cy});
            if (p.x < -s || p.x > 2.0 * s || p.y < -s || p.y > 2.0 * s)
                throw std::runtime_error("generate_homography_pair: warp exceeds padded canvas");
        }
    Homography hinv = h.inverse();

    HomographyPair out;
    out.h = h;
    out.image1 = generate_texture(rng(), s);
    // Photometric model: per-channel affine (shared contrast, per-channel tint,
    // shared brightness) plus Gaussian noise, clamped to [0,1].
    double gain = std::exp(uni(-spec.photometric.contrast, spec.photometric.contrast));
    double offset = uni(-spec.photometric.brightness, spec.photometric.brightness);
    double tint[3];
    for (double& t : tint) t = std::exp(uni(-spec.photometric.tint, spec.photometric.tint));
    std::normal_distribution<double> noise(0.0, spec.photometric.noise_sigma);
    out.image2 = Tensor({3, s, s}, 0.5);
    for (int y = 0; y < s; ++y)
        for (int x = 0; x < s; ++x) {
            Vec2 src = homography_apply(hinv, {static_cast<double>(x), static_cast<double>(y)});
            bool inside = src.x >= 0 && src.x <= s - 1 && src.y >= 0 && src.y <= s - 1;
            for (int ch = 0; ch < 3; ++ch) {
                double v = inside ? bilinear_at(out.image1, ch, src.x, src.y) : 0.5;
                v = gain * tint[ch] * v + offset;
                if (spec.photometric.noise_sigma > 0) v += noise(rng);
                out.image2.at3(ch, y, x) = std::clamp(v, 0.0, 1.0);
            }
        }
    out.field.width = s;
    out.field.height = s;
    out.field.target_x.resize(static_cast<std::size_t>(s) * s);
    out.field.target_y.resize(static_cast<std::size_t>(s) * s);
    out.field.valid.resize(static_cast<std::size_t>(s) * s);
    for (int y = 0; y < s; ++y)
        for (int x = 0; x < s; ++x) {
            Vec2 p = homography_apply(h, {static_cast<double>(x), static_cast<double>(y)});
            std::size_t i = static_cast<std::size_t>(y) * s + x;
            out.field.target_x[i] = p.x;
            out.field.target_y[i] = p.y;
            out.field.valid[i] = p.x >= 0 && p.x <= s - 1 && p.y >= 0 && p.y <= s - 1;
        }
    return out;
}

TwoViewScene generate_two_view_scene(const TwoViewSceneSpec& spec, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    auto uni = [&](double lo, double hi) {
        return std::uniform_real_distribution<double>(lo, hi)(rng);
    };
    TwoViewScene scene;
    scene.intrinsics = spec.intrinsics;
    // Random rotation about a random axis plus a random translation direction.
    double ax = uni(-1, 1), ay = uni(-1, 1), az = uni(-1, 1);
    double an = std::sqrt(ax * ax + ay * ay + az * az);
    if (an < 1e-9) {
        ax = 1;
        ay = az = 0;
        an = 1;
    }
    ax /= an;
    ay /= an;
    az /= an;
    double angle = uni(0.2, std::max(0.3, spec.rotation_deg)) * M_PI / 180.0;
    double cth = std::cos(angle), sth = std::sin(angle), v = 1 - cth;
    Mat3 r = {{{cth + ax * ax * v, ax * ay * v - az * sth, ax * az * v + ay * sth},
               {ay * ax * v + az * sth, cth + ay * ay * v, ay * az * v - ax * sth},
               {az * ax * v - ay * sth, az * ay * v + ax * sth, cth + az * az * v}}};
    double trx = uni(-1, 1), try_ = uni(-1, 1), trz = uni(-0.3, 0.3);
    double tn = std::sqrt(trx * trx + try_ * try_ + trz * trz);
    if (tn < 1e-9) {
        trx = 1;
        try_ = trz = 0;
        tn = 1;
    }
    scene.pose.rotation = r;
    scene.pose.translation = {trx / tn, try_ / tn, trz / tn};
    double tmag = spec.translation_mag;

    const auto& k = spec.intrinsics;
    std::normal_distribution<double> noise(0.0, spec.pixel_noise_sigma);
    int attempts = 0;
    while (static_cast<int>(scene.correspondences.size()) < spec.point_count) {
        if (++attempts > 1000 * std::max(1, spec.point_count))
            throw std::runtime_error("generate_two_view_scene: visibility resampling failed");
        double u = uni(0, spec.image_size - 1), vpix = uni(0, spec.image_size - 1);
        double depth = uni(spec.depth_min, spec.depth_max);
        // Backproject from camera 1.
        double X = (u - k.cx) / k.fx * depth;
        double Y = (vpix - k.cy) / k.fy * depth;
        double Z = depth;
        // Camera 2: X2 = R X + t*mag
        double x2 = r[0][0] * X + r[0][1] * Y + r[0][2] * Z + scene.pose.translation[0] * tmag;
        double y2 = r[1][0] * X + r[1][1] * Y + r[1][2] * Z + scene.pose.translation[1] * tmag;
        double z2 = r[2][0] * X + r[2][1] * Y + r[2][2] * Z + scene.pose.translation[2] * tmag;
        if (z2 <= 0.1) continue;
        double u2 = x2 / z2 * k.fx + k.cx, v2 = y2 / z2 * k.fy + k.cy;
        if (u2 < 0 || u2 > spec.image_size - 1 || v2 < 0 || v2 > spec.image_size - 1) continue;
        if (spec.pixel_noise_sigma > 0) {
            u2 += noise(rng);
            v2 += noise(rng);
        }
        scene.correspondences.push_back({{u, vpix}, {u2, v2}});
        scene.is_outlier.push_back(false);
    }
    int n_outliers = static_cast<int>(std::lround(spec.outlier_fraction * spec.point_count));
    if (n_outliers > 0) {
        // Random distinct indices become outliers with an unrelated second point.
        std::vector<int> idx(spec.point_count);
        for (int i = 0; i < spec.point_count; ++i) idx[i] = i;
        for (int i = 0; i < n_outliers; ++i) {
            int j = i + static_cast<int>(rng() % static_cast<std::uint64_t>(spec.point_count - i));
            std::swap(idx[i], idx[j]);
        }
        for (int i = 0; i < n_outliers; ++i) {
            scene.is_outlier[idx[i]] = true;
            scene.correspondences[idx[i]].second = {uni(0, spec.image_size - 1),
                                                    uni(0, spec.image_size - 1)};
        }
    }
    return scene;
}

}  // namespace coam
