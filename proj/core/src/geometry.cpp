#include "coam/geometry.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <stdexcept>

namespace coam {

namespace {

Eigen::Matrix3d to_eigen(const Mat3& m) {
    Eigen::Matrix3d e;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) e(i, j) = m[i][j];
    return e;
}

Mat3 from_eigen(const Eigen::Matrix3d& e) {
    Mat3 m;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) m[i][j] = e(i, j);
    return m;
}

}  // namespace

Homography Homography::identity() {
    Homography h;
    for (int i = 0; i < 3; ++i) h.h[i][i] = 1;
    return h;
}

double Homography::det() const { return to_eigen(h).determinant(); }

Homography Homography::inverse() const {
    if (std::fabs(det()) <= 1e-12) throw std::runtime_error("Homography: not invertible");
    Eigen::Matrix3d inv = to_eigen(h).inverse();
    if (std::fabs(inv(2, 2)) > 1e-12) inv /= inv(2, 2);
    Homography out;
    out.h = from_eigen(inv);
    return out;
}

Vec2 homography_apply(const Homography& h, const Vec2& p) {
    double x = h.h[0][0] * p.x + h.h[0][1] * p.y + h.h[0][2];
    double y = h.h[1][0] * p.x + h.h[1][1] * p.y + h.h[1][2];
    double w = h.h[2][0] * p.x + h.h[2][1] * p.y + h.h[2][2];
    if (std::fabs(w) <= 1e-12) throw std::runtime_error("homography_apply: point at infinity");
    return {x / w, y / w};
}

HomographyEval evaluate_homography_matches(const CorrespondenceSet& matches, const Homography& h,
                                           const std::vector<double>& thresholds) {
    for (std::size_t i = 0; i < thresholds.size(); ++i) {
        if (thresholds[i] <= 0 || (i > 0 && thresholds[i] <= thresholds[i - 1]))
            throw std::invalid_argument("evaluate_homography_matches: thresholds must be positive ascending");
    }
    HomographyEval out;
    out.thresholds = thresholds;
    out.counts.assign(thresholds.size(), 0);
    out.fractions.assign(thresholds.size(), 0.0);
    for (const Match& m : matches.matches) {
        Vec2 p = homography_apply(h, {m.x1, m.y1});
        double err = std::hypot(p.x - m.x2, p.y - m.y2);
        for (std::size_t t = 0; t < thresholds.size(); ++t)
            if (err <= thresholds[t]) ++out.counts[t];
    }
    if (!matches.matches.empty())
        for (std::size_t t = 0; t < thresholds.size(); ++t)
            out.fractions[t] = static_cast<double>(out.counts[t]) / matches.matches.size();
    return out;
}

Vec2 pixel_to_normalized(const Vec2& p, const CameraIntrinsics& k) {
    return {(p.x - k.cx) / k.fx, (p.y - k.cy) / k.fy};
}

Vec2 normalized_to_pixel(const Vec2& p, const CameraIntrinsics& k) {
    return {p.x * k.fx + k.cx, p.y * k.fy + k.cy};
}

std::vector<std::pair<Vec2, Vec2>> pixels_to_normalized(
    const std::vector<std::pair<Vec2, Vec2>>& corrs, const CameraIntrinsics& k) {
    std::vector<std::pair<Vec2, Vec2>> out;
    out.reserve(corrs.size());
    for (const auto& [a, b] : corrs)
        out.emplace_back(pixel_to_normalized(a, k), pixel_to_normalized(b, k));
    return out;
}

namespace {

// Hartley-normalized 8-point estimate from >= 8 correspondences.
Eigen::Matrix3d eight_point(const std::vector<std::pair<Vec2, Vec2>>& corrs,
                            const std::vector<int>& idx) {
    auto normalize = [&](bool second) {
        double mx = 0, my = 0;
        for (int i : idx) {
            const Vec2& p = second ? corrs[i].second : corrs[i].first;
            mx += p.x;
            my += p.y;
        }
        mx /= idx.size();
        my /= idx.size();
        double dist = 0;
        for (int i : idx) {
            const Vec2& p = second ? corrs[i].second : corrs[i].first;
            dist += std::hypot(p.x - mx, p.y - my);
        }
        dist /= idx.size();
        double s = dist > 1e-12 ? std::sqrt(2.0) / dist : 1.0;
        Eigen::Matrix3d t;
        t << s, 0, -s * mx, 0, s, -s * my, 0, 0, 1;
        return t;
    };
    Eigen::Matrix3d t1 = normalize(false), t2 = normalize(true);
    Eigen::MatrixXd a(static_cast<int>(idx.size()), 9);
    for (std::size_t r = 0; r < idx.size(); ++r) {
        const auto& [p, q] = corrs[idx[r]];
        double x1 = t1(0, 0) * p.x + t1(0, 2), y1 = t1(1, 1) * p.y + t1(1, 2);
        double x2 = t2(0, 0) * q.x + t2(0, 2), y2 = t2(1, 1) * q.y + t2(1, 2);
        a.row(static_cast<int>(r)) << x2 * x1, x2 * y1, x2, y2 * x1, y2 * y1, y2, x1, y1, 1.0;
    }
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
    Eigen::VectorXd f = svd.matrixV().col(8);
    Eigen::Matrix3d e;
    e << f(0), f(1), f(2), f(3), f(4), f(5), f(6), f(7), f(8);
    return t2.transpose() * e * t1;
}

// Project onto the essential manifold: singular values (s, s, 0).
Eigen::Matrix3d project_essential(const Eigen::Matrix3d& e) {
    Eigen::JacobiSVD<Eigen::Matrix3d> svd(e, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Eigen::Vector3d sv = svd.singularValues();
    double s = (sv(0) + sv(1)) / 2.0;
    Eigen::Matrix3d d = Eigen::Vector3d(s, s, 0).asDiagonal();
    return svd.matrixU() * d * svd.matrixV().transpose();
}

double symmetric_epipolar_distance(const Eigen::Matrix3d& e, const Vec2& p, const Vec2& q) {
    Eigen::Vector3d x1(p.x, p.y, 1), x2(q.x, q.y, 1);
    Eigen::Vector3d l2 = e * x1;          // epipolar line in image 2
    Eigen::Vector3d l1 = e.transpose() * x2;
    double val = x2.dot(l2);
    double d2 = l2(0) * l2(0) + l2(1) * l2(1);
    double d1 = l1(0) * l1(0) + l1(1) * l1(1);
    if (d1 < 1e-18 || d2 < 1e-18) return std::numeric_limits<double>::infinity();
    return 0.5 * (std::fabs(val) / std::sqrt(d2) + std::fabs(val) / std::sqrt(d1));
}

}  // namespace

EssentialResult estimate_essential_ransac(const std::vector<std::pair<Vec2, Vec2>>& corrs,
                                          const RansacConfig& cfg) {
    if (cfg.iterations < 1 || cfg.inlier_threshold <= 0)
        throw std::invalid_argument("estimate_essential_ransac: bad config");
    const int n = static_cast<int>(corrs.size());
    if (n < 8) throw std::runtime_error("estimate_essential_ransac: need >= 8 correspondences");
    std::mt19937_64 rng(cfg.rng_seed);
    int best_count = -1;
    Eigen::Matrix3d best_e = Eigen::Matrix3d::Zero();
    std::vector<int> sample(8);
    for (int it = 0; it < cfg.iterations; ++it) {
        for (int k = 0; k < 8; ++k) {
            for (;;) {
                int c = static_cast<int>(rng() % static_cast<std::uint64_t>(n));
                bool dup = false;
                for (int j = 0; j < k; ++j)
                    if (sample[j] == c) dup = true;
                if (!dup) {
                    sample[k] = c;
                    break;
                }
            }
        }
        Eigen::Matrix3d e = project_essential(eight_point(corrs, sample));
        int count = 0;
        for (const auto& [p, q] : corrs)
            if (symmetric_epipolar_distance(e, p, q) <= cfg.inlier_threshold) ++count;
        if (count > best_count) {
            best_count = count;
            best_e = e;
        }
    }
    if (best_count < 8)
        throw std::runtime_error("estimate_essential_ransac: degenerate configuration, best model has " +
                                 std::to_string(best_count) + " inliers");
    // Least-squares refit on the consensus set.
    std::vector<int> inliers;
    for (int i = 0; i < n; ++i)
        if (symmetric_epipolar_distance(best_e, corrs[i].first, corrs[i].second) <=
            cfg.inlier_threshold)
            inliers.push_back(i);
    if (static_cast<int>(inliers.size()) >= 8)
        best_e = project_essential(eight_point(corrs, inliers));
    EssentialResult out;
    out.inlier_mask.assign(n, false);
    for (int i = 0; i < n; ++i)
        if (symmetric_epipolar_distance(best_e, corrs[i].first, corrs[i].second) <=
            cfg.inlier_threshold) {
            out.inlier_mask[i] = true;
            ++out.inlier_count;
        }
    out.essential = from_eigen(best_e);
    return out;
}

namespace {

// Depth of the triangulated point in both cameras for pose candidate (R, t).
// View 1 is the identity camera, view 2 maps X2 = R X1 + t.
int count_cheirality(const Eigen::Matrix3d& r, const Eigen::Vector3d& t,
                     const std::vector<std::pair<Vec2, Vec2>>& corrs) {
    int good = 0;
    for (const auto& [p, q] : corrs) {
        Eigen::Vector3d x1(p.x, p.y, 1), x2(q.x, q.y, 1);
        // Midpoint-free linear triangulation: solve for depths d1, d2 in
        // d2 * x2 = R (d1 * x1) + t via least squares on [R x1, -x2].
        Eigen::Matrix<double, 3, 2> a;
        a.col(0) = r * x1;
        a.col(1) = -x2;
        Eigen::Vector2d d = a.colPivHouseholderQr().solve(-t);
        if (d(0) > 0 && d(1) > 0) ++good;
    }
    return good;
}

}  // namespace

RelativePose decompose_essential(const Mat3& e_in, const std::vector<std::pair<Vec2, Vec2>>& corrs) {
    Eigen::Matrix3d e = to_eigen(e_in);
    Eigen::JacobiSVD<Eigen::Matrix3d> svd(e, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Eigen::Matrix3d u = svd.matrixU(), v = svd.matrixV();
    if (u.determinant() < 0) u.col(2) *= -1;
    if (v.determinant() < 0) v.col(2) *= -1;
    Eigen::Matrix3d w;
    w << 0, -1, 0, 1, 0, 0, 0, 0, 1;
    Eigen::Matrix3d r1 = u * w * v.transpose();
    Eigen::Matrix3d r2 = u * w.transpose() * v.transpose();
    Eigen::Vector3d t = u.col(2);
    struct Candidate {
        Eigen::Matrix3d r;
        Eigen::Vector3d t;
        int good = 0;
    };
    std::vector<Candidate> cands = {{r1, t}, {r1, -t}, {r2, t}, {r2, -t}};
    for (auto& c : cands) c.good = count_cheirality(c.r, c.t, corrs);
    std::size_t best = 0;
    for (std::size_t i = 1; i < cands.size(); ++i)
        if (cands[i].good > cands[best].good) best = i;
    int winners = 0;
    for (const auto& c : cands)
        if (c.good == cands[best].good) ++winners;
    if (winners > 1 || cands[best].good == 0)
        throw std::runtime_error("decompose_essential: cheirality ambiguity, no strict winner");
    RelativePose pose;
    pose.rotation = from_eigen(cands[best].r);
    Eigen::Vector3d tn = cands[best].t.normalized();
    pose.translation = {tn(0), tn(1), tn(2)};
    return pose;
}

std::pair<double, double> pose_errors(const RelativePose& est, const RelativePose& gt) {
    Eigen::Matrix3d r_rel = to_eigen(est.rotation).transpose() * to_eigen(gt.rotation);
    double c = std::clamp((r_rel.trace() - 1.0) / 2.0, -1.0, 1.0);
    double rot_err = std::acos(c) * 180.0 / M_PI;
    Eigen::Vector3d te(est.translation[0], est.translation[1], est.translation[2]);
    Eigen::Vector3d tg(gt.translation[0], gt.translation[1], gt.translation[2]);
    double dot = std::clamp(std::fabs(te.normalized().dot(tg.normalized())), 0.0, 1.0);
    double trans_err = std::acos(dot) * 180.0 / M_PI;
    return {rot_err, trans_err};
}

PoseAccuracy pose_accuracy(const std::vector<std::pair<double, double>>& errors,
                           double threshold_degrees) {
    if (threshold_degrees <= 0) throw std::invalid_argument("pose_accuracy: threshold must be > 0");
    if (errors.empty()) throw std::runtime_error("pose_accuracy: no error pairs to evaluate");
    PoseAccuracy acc;
    for (const auto& [r, t] : errors) {
        bool rok = r < threshold_degrees, tok = t < threshold_degrees;
        acc.rotation += rok;
        acc.translation += tok;
        acc.joint += (rok && tok);
    }
    acc.rotation /= errors.size();
    acc.translation /= errors.size();
    acc.joint /= errors.size();
    return acc;
}

Mat3 essential_from_pose(const RelativePose& pose) {
    Eigen::Vector3d t(pose.translation[0], pose.translation[1], pose.translation[2]);
    Eigen::Matrix3d tx;
    tx << 0, -t(2), t(1), t(2), 0, -t(0), -t(1), t(0), 0;
    return from_eigen(tx * to_eigen(pose.rotation));
}

void save_homography(const std::string& path, const Homography& h) {
    std::FILE* f = std::fopen(path.c_str(), "w");
    if (!f) throw std::runtime_error("save_homography: cannot open " + path);
    for (int i = 0; i < 3; ++i)
        std::fprintf(f, "%.12g %.12g %.12g\n", h.h[i][0], h.h[i][1], h.h[i][2]);
    std::fclose(f);
}

Homography load_homography(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("load_homography: cannot open " + path);
    Homography h;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            if (!(is >> h.h[i][j]))
                throw std::runtime_error("load_homography: parse error in " + path);
    return h;
}

void save_pose(const std::string& path, const CameraIntrinsics& k, const RelativePose& pose) {
    std::FILE* f = std::fopen(path.c_str(), "w");
    if (!f) throw std::runtime_error("save_pose: cannot open " + path);
    std::fprintf(f, "%.12g %.12g %.12g %.12g\n", k.fx, k.fy, k.cx, k.cy);
    for (int i = 0; i < 3; ++i)
        std::fprintf(f, "%.12g %.12g %.12g\n", pose.rotation[i][0], pose.rotation[i][1],
                     pose.rotation[i][2]);
    std::fprintf(f, "%.12g %.12g %.12g\n", pose.translation[0], pose.translation[1],
                 pose.translation[2]);
    std::fclose(f);
}

std::pair<CameraIntrinsics, RelativePose> load_pose(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("load_pose: cannot open " + path);
    CameraIntrinsics k;
    RelativePose pose;
    if (!(is >> k.fx >> k.fy >> k.cx >> k.cy))
        throw std::runtime_error("load_pose: parse error in " + path);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            if (!(is >> pose.rotation[i][j]))
                throw std::runtime_error("load_pose: parse error in " + path);
    for (int i = 0; i < 3; ++i)
        if (!(is >> pose.translation[i]))
            throw std::runtime_error("load_pose: parse error in " + path);
    return {k, pose};
}

}  // namespace coam
