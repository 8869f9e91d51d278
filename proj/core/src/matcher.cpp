#include "coam/matcher.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include "coam/ops.hpp"

namespace coam {

namespace {

struct BilinearTap {
    int x0, y0, x1, y1;
    double wx, wy;
};

BilinearTap make_tap(double x, double y, int w, int h) {
    x = std::clamp(x, 0.0, static_cast<double>(w - 1));
    y = std::clamp(y, 0.0, static_cast<double>(h - 1));
    int x0 = std::min(static_cast<int>(x), w > 1 ? w - 2 : 0);
    int y0 = std::min(static_cast<int>(y), h > 1 ? h - 2 : 0);
    return {x0, y0, std::min(x0 + 1, w - 1), std::min(y0 + 1, h - 1), x - x0, y - y0};
}

double sample_scalar(const Tensor& map, const BilinearTap& t) {
    double v00 = map.at2(t.y0, t.x0), v01 = map.at2(t.y0, t.x1);
    double v10 = map.at2(t.y1, t.x0), v11 = map.at2(t.y1, t.x1);
    return (1 - t.wy) * ((1 - t.wx) * v00 + t.wx * v01) + t.wy * ((1 - t.wx) * v10 + t.wx * v11);
}

void sample_channels(const Tensor& map, const BilinearTap& t, double* out) {
    int C = map.shape[0];
    for (int c = 0; c < C; ++c) {
        double v00 = map.at3(c, t.y0, t.x0), v01 = map.at3(c, t.y0, t.x1);
        double v10 = map.at3(c, t.y1, t.x0), v11 = map.at3(c, t.y1, t.x1);
        out[c] = (1 - t.wy) * ((1 - t.wx) * v00 + t.wx * v01) +
                 t.wy * ((1 - t.wx) * v10 + t.wx * v11);
    }
}

void renormalize(double* v, int dim) {
    double n = 0;
    for (int c = 0; c < dim; ++c) n += v[c] * v[c];
    n = std::sqrt(n);
    if (n < 1e-12) {
        std::fill(v, v + dim, 0.0);
        return;
    }
    for (int c = 0; c < dim; ++c) v[c] /= n;
}

}  // namespace

std::vector<double> sample_descriptor(const DescriptorMap& d, double x, double y) {
    int D = d.d.shape[0], H = d.d.shape[1], W = d.d.shape[2];
    std::vector<double> out(D);
    sample_channels(d.d, make_tap(x, y, W, H), out.data());
    renormalize(out.data(), D);
    return out;
}

GridDescriptors grid_sample(const DescriptorMap& d, const DistinctivenessMap& r, int grid_size) {
    if (grid_size < 2) throw std::invalid_argument("grid_sample: G must be >= 2");
    int D = d.d.shape[0], H = d.d.shape[1], W = d.d.shape[2];
    GridDescriptors g;
    g.grid_size = grid_size;
    g.descriptor_dim = D;
    g.image_size = d.image_size;
    int n = grid_size * grid_size;
    g.descriptors.resize(static_cast<std::size_t>(n) * D);
    g.scores.resize(n);
    g.pixel_x.resize(n);
    g.pixel_y.resize(n);
    double step = static_cast<double>(d.image_size) / grid_size;
    for (int gy = 0; gy < grid_size; ++gy)
        for (int gx = 0; gx < grid_size; ++gx) {
            int cell = gy * grid_size + gx;
            double px = (gx + 0.5) * step - 0.5;
            double py = (gy + 0.5) * step - 0.5;
            g.pixel_x[cell] = px;
            g.pixel_y[cell] = py;
            BilinearTap t = make_tap(px, py, W, H);
            double* dst = g.descriptors.data() + static_cast<std::size_t>(cell) * D;
            sample_channels(d.d, t, dst);
            renormalize(dst, D);
            g.scores[cell] = sample_scalar(r.r, t);
        }
    return g;
}

double similarity(const double* d1, double r1, const double* d2, double r2, int dim) {
    double dot = 0;
    for (int c = 0; c < dim; ++c) dot += d1[c] * d2[c];
    return r1 * r2 * dot;
}

namespace {

// For a block of g1 cells, update per-cell best over all g2 and the reverse.
void score_block(const GridDescriptors& g1, const GridDescriptors& g2, int i_begin, int i_end,
                 std::vector<int>& best1, std::vector<double>& best1_score,
                 std::vector<int>& best2, std::vector<double>& best2_score) {
    int n2 = g2.grid_size * g2.grid_size;
    int D = g1.descriptor_dim;
    for (int i = i_begin; i < i_end; ++i) {
        const double* di = g1.desc(i);
        double ri = g1.scores[i];
        for (int j = 0; j < n2; ++j) {
            double c = similarity(di, ri, g2.desc(j), g2.scores[j], D);
            if (c > best1_score[i]) {
                best1_score[i] = c;
                best1[i] = j;
            }
            if (c > best2_score[j]) {
                best2_score[j] = c;
                best2[j] = i;
            }
        }
    }
}

CorrespondenceSet collect_mutual(const GridDescriptors& g1, const GridDescriptors& g2,
                                 const std::vector<int>& best1, const std::vector<double>& best1_score,
                                 const std::vector<int>& best2) {
    CorrespondenceSet out;
    for (std::size_t i = 0; i < best1.size(); ++i) {
        int j = best1[i];
        if (j >= 0 && best2[j] == static_cast<int>(i))
            out.matches.push_back({g1.pixel_x[i], g1.pixel_y[i], g2.pixel_x[j], g2.pixel_y[j],
                                   best1_score[i]});
    }
    return out;
}

}  // namespace

CorrespondenceSet mutual_nn_matches(const GridDescriptors& g1, const GridDescriptors& g2) {
    if (g1.grid_size != g2.grid_size)
        throw std::invalid_argument("mutual_nn_matches: grid sizes differ");
    int n1 = g1.grid_size * g1.grid_size, n2 = n1;
    std::vector<int> best1(n1, -1), best2(n2, -1);
    std::vector<double> s1(n1, -std::numeric_limits<double>::infinity());
    std::vector<double> s2(n2, -std::numeric_limits<double>::infinity());
    score_block(g1, g2, 0, n1, best1, s1, best2, s2);
    return collect_mutual(g1, g2, best1, s1, best2);
}

CorrespondenceSet mutual_nn_matches_blocked(const GridDescriptors& g1, const GridDescriptors& g2,
                                            int block) {
    if (g1.grid_size != g2.grid_size)
        throw std::invalid_argument("mutual_nn_matches: grid sizes differ");
    if (block < 1) block = 1;
    int n1 = g1.grid_size * g1.grid_size, n2 = n1;
    std::vector<int> best1(n1, -1), best2(n2, -1);
    std::vector<double> s1(n1, -std::numeric_limits<double>::infinity());
    std::vector<double> s2(n2, -std::numeric_limits<double>::infinity());
    for (int i = 0; i < n1; i += block)
        score_block(g1, g2, i, std::min(i + block, n1), best1, s1, best2, s2);
    return collect_mutual(g1, g2, best1, s1, best2);
}

CorrespondenceSet top_k(const CorrespondenceSet& set, int k) {
    if (k < 1) throw std::invalid_argument("top_k: K must be >= 1");
    CorrespondenceSet out = set;
    std::stable_sort(out.matches.begin(), out.matches.end(), [](const Match& a, const Match& b) {
        if (a.score != b.score) return a.score > b.score;
        if (a.y1 != b.y1) return a.y1 < b.y1;
        return a.x1 < b.x1;
    });
    if (static_cast<int>(out.matches.size()) > k) out.matches.resize(k);
    return out;
}

CorrespondenceSet refine_matches(const DescriptorMap& d1, const DescriptorMap& d2,
                                 const CorrespondenceSet& matches) {
    int W = d2.d.shape[2], H = d2.d.shape[1];
    int D = d1.d.shape[0];
    CorrespondenceSet out;
    out.matches.reserve(matches.matches.size());
    for (const Match& m : matches.matches) {
        std::vector<double> q = sample_descriptor(d1, m.x1, m.y1);
        double s[9];
        double lx[9], ly[9];
        double smin = std::numeric_limits<double>::infinity();
        int idx = 0;
        for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx, ++idx) {
                double x = std::clamp(m.x2 + dx, 0.0, static_cast<double>(W - 1));
                double y = std::clamp(m.y2 + dy, 0.0, static_cast<double>(H - 1));
                std::vector<double> t = sample_descriptor(d2, x, y);
                double dot = 0;
                for (int c = 0; c < D; ++c) dot += q[c] * t[c];
                s[idx] = dot;
                lx[idx] = x;
                ly[idx] = y;
                smin = std::min(smin, dot);
            }
        double wsum = 0, xsum = 0, ysum = 0;
        for (int i = 0; i < 9; ++i) {
            double w = s[i] - smin;
            wsum += w;
            xsum += w * lx[i];
            ysum += w * ly[i];
        }
        Match r = m;
        if (wsum > 0) {
            r.x2 = xsum / wsum;
            r.y2 = ysum / wsum;
        }
        out.matches.push_back(r);
    }
    return out;
}

Tensor dense_resample(const Tensor& source_image, const GridDescriptors& grid_view,
                      const GridDescriptors& grid_source) {
    int G = grid_view.grid_size;
    int n = G * G;
    int D = grid_view.descriptor_dim;
    int W = source_image.shape[2], H = source_image.shape[1];
    Tensor grid_colors({3, G, G});
    for (int i = 0; i < n; ++i) {
        int best = 0;
        double best_c = -std::numeric_limits<double>::infinity();
        for (int j = 0; j < n; ++j) {
            double c = similarity(grid_view.desc(i), grid_view.scores[i], grid_source.desc(j),
                                  grid_source.scores[j], D);
            if (c > best_c) {
                best_c = c;
                best = j;
            }
        }
        BilinearTap t = make_tap(grid_source.pixel_x[best], grid_source.pixel_y[best], W, H);
        double rgb[3];
        sample_channels(source_image, t, rgb);
        for (int c = 0; c < 3; ++c) grid_colors.at3(c, i / G, i % G) = rgb[c];
    }
    return bilinear_resize(Var(std::move(grid_colors)), grid_view.image_size, grid_view.image_size)
        .value();
}

InvarianceStats descriptor_invariance(
    const DescriptorMap& d_query, const DescriptorMap& d_target,
    const std::vector<std::pair<std::pair<double, double>, std::pair<double, double>>>& corrs) {
    if (corrs.size() < 10)
        throw std::runtime_error("descriptor_invariance: need at least 10 correspondences, got " +
                                 std::to_string(corrs.size()));
    int D = d_query.d.shape[0];
    std::vector<double> l1;
    l1.reserve(corrs.size());
    for (const auto& [q, t] : corrs) {
        std::vector<double> dq = sample_descriptor(d_query, q.first, q.second);
        std::vector<double> dt = sample_descriptor(d_target, t.first, t.second);
        double s = 0;
        for (int c = 0; c < D; ++c) s += std::fabs(dq[c] - dt[c]);
        l1.push_back(s);
    }
    InvarianceStats st;
    st.count = static_cast<int>(l1.size());
    for (double v : l1) st.mean += v;
    st.mean /= st.count;
    for (double v : l1) st.stddev += (v - st.mean) * (v - st.mean);
    st.stddev = std::sqrt(st.stddev / st.count);
    return st;
}

void save_matches(const std::string& path, const CorrespondenceSet& set, int grid_size, int k) {
    std::FILE* f = std::fopen(path.c_str(), "w");
    if (!f) throw std::runtime_error("save_matches: cannot open " + path);
    std::fprintf(f, "# coam-match v1 G=%d K=%d\n", grid_size, k);
    for (const Match& m : set.matches)
        std::fprintf(f, "%.6f %.6f %.6f %.6f %.6f\n", m.x1, m.y1, m.x2, m.y2, m.score);
    std::fclose(f);
}

CorrespondenceSet load_matches(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("load_matches: cannot open " + path);
    CorrespondenceSet out;
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        Match m;
        if (std::sscanf(line.c_str(), "%lf %lf %lf %lf %lf", &m.x1, &m.y1, &m.x2, &m.y2, &m.score) !=
            5)
            throw std::runtime_error("load_matches: parse error at " + path + ":" +
                                     std::to_string(lineno));
        out.matches.push_back(m);
    }
    return out;
}

}  // namespace coam
