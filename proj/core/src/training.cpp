#include "coam/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace coam {

void TrainConfig::validate() const {
    if (margin <= 0 || positives_per_pair < 1 || negatives_per_positive < 1 ||
        hardest_count > negatives_per_positive || distinctiveness_exponent <= 0 ||
        nce_temperature <= 0)
        throw std::invalid_argument("TrainConfig: invariant violated");
}

int CorrespondenceField::count_valid() const {
    int n = 0;
    for (std::size_t i = 0; i < valid.size(); ++i) {
        if (!valid[i]) continue;
        int x2 = static_cast<int>(std::lround(target_x[i]));
        int y2 = static_cast<int>(std::lround(target_y[i]));
        if (x2 >= 0 && x2 < width && y2 >= 0 && y2 < height) ++n;
    }
    return n;
}

SampledCorrespondences sample_correspondences(const CorrespondenceField& field, int L, int N,
                                              int exclusion_radius, std::uint64_t seed) {
    std::vector<int> candidates;
    for (int y = 0; y < field.height; ++y)
        for (int x = 0; x < field.width; ++x) {
            if (!field.is_valid(x, y)) continue;
            int x2 = static_cast<int>(std::lround(field.tx(x, y)));
            int y2 = static_cast<int>(std::lround(field.ty(x, y)));
            if (x2 >= 0 && x2 < field.width && y2 >= 0 && y2 < field.height)
                candidates.push_back(y * field.width + x);
        }
    if (static_cast<int>(candidates.size()) < L)
        throw std::runtime_error("sample_correspondences: only " +
                                 std::to_string(candidates.size()) + " valid correspondences, need " +
                                 std::to_string(L));
    std::mt19937_64 rng(seed);
    // Fisher-Yates prefix; modulo draw keeps the sequence portable across builds.
    for (int i = 0; i < L; ++i) {
        std::size_t j = i + static_cast<std::size_t>(rng() % (candidates.size() - i));
        std::swap(candidates[i], candidates[j]);
    }
    SampledCorrespondences out;
    out.negatives_per_positive = N;
    out.pos1.reserve(L);
    out.pos2.reserve(L);
    out.neg2.reserve(static_cast<std::size_t>(L) * N);
    for (int i = 0; i < L; ++i) {
        int x = candidates[i] % field.width, y = candidates[i] / field.width;
        int x2 = static_cast<int>(std::lround(field.tx(x, y)));
        int y2 = static_cast<int>(std::lround(field.ty(x, y)));
        out.pos1.emplace_back(x, y);
        out.pos2.emplace_back(x2, y2);
        for (int n = 0; n < N; ++n) {
            for (;;) {
                int nx = static_cast<int>(rng() % static_cast<std::uint64_t>(field.width));
                int ny = static_cast<int>(rng() % static_cast<std::uint64_t>(field.height));
                if (std::max(std::abs(nx - x2), std::abs(ny - y2)) > exclusion_radius) {
                    out.neg2.emplace_back(nx, ny);
                    break;
                }
            }
        }
    }
    return out;
}

double descriptor_distance(const std::vector<double>& d1, const std::vector<double>& d2) {
    double s = 0;
    for (std::size_t i = 0; i < d1.size(); ++i) s += (d1[i] - d2[i]) * (d1[i] - d2[i]);
    return std::sqrt(s);
}

using detail::make_node;

static Tensor& pgrad(Node& n, std::size_t i) { return n.parents[i]->ensure_grad(); }
static bool pneeds(Node& n, std::size_t i) { return n.parents[i]->requires_grad; }

// d_i = ||a_{i/repeat} - b_i||. A: (L,D), B: (L*repeat, D) -> (L*repeat).
static Var row_distance(const Var& a, const Var& b, int repeat) {
    int L = a.shape()[0], D = a.shape()[1], M = b.shape()[0];
    if (b.shape()[1] != D || M != L * repeat)
        throw ShapeError("row_distance", shape_str(a.shape()), shape_str(b.shape()));
    Tensor out({M});
    for (int i = 0; i < M; ++i) {
        const double* ar = a.value().data.data() + static_cast<std::size_t>(i / repeat) * D;
        const double* br = b.value().data.data() + static_cast<std::size_t>(i) * D;
        double s = 0;
        for (int c = 0; c < D; ++c) s += (ar[c] - br[c]) * (ar[c] - br[c]);
        out.data[i] = std::sqrt(s);
    }
    return Var(make_node(std::move(out), "row_distance", {a.node(), b.node()},
                         [D, repeat, M](Node& n) {
                             const Tensor& av = n.parents[0]->value;
                             const Tensor& bv = n.parents[1]->value;
                             for (int i = 0; i < M; ++i) {
                                 double d = n.value.data[i];
                                 if (d < 1e-12) continue;
                                 double coef = n.grad.data[i] / d;
                                 const double* ar =
                                     av.data.data() + static_cast<std::size_t>(i / repeat) * D;
                                 const double* br = bv.data.data() + static_cast<std::size_t>(i) * D;
                                 if (pneeds(n, 0)) {
                                     double* ga = pgrad(n, 0).data.data() +
                                                  static_cast<std::size_t>(i / repeat) * D;
                                     for (int c = 0; c < D; ++c) ga[c] += coef * (ar[c] - br[c]);
                                 }
                                 if (pneeds(n, 1)) {
                                     double* gb =
                                         pgrad(n, 1).data.data() + static_cast<std::size_t>(i) * D;
                                     for (int c = 0; c < D; ++c) gb[c] -= coef * (ar[c] - br[c]);
                                 }
                             }
                         }));
}

// s_i = a_{i/repeat} . b_i
static Var row_dot(const Var& a, const Var& b, int repeat) {
    int L = a.shape()[0], D = a.shape()[1], M = b.shape()[0];
    if (b.shape()[1] != D || M != L * repeat)
        throw ShapeError("row_dot", shape_str(a.shape()), shape_str(b.shape()));
    Tensor out({M});
    for (int i = 0; i < M; ++i) {
        const double* ar = a.value().data.data() + static_cast<std::size_t>(i / repeat) * D;
        const double* br = b.value().data.data() + static_cast<std::size_t>(i) * D;
        double s = 0;
        for (int c = 0; c < D; ++c) s += ar[c] * br[c];
        out.data[i] = s;
    }
    return Var(make_node(std::move(out), "row_dot", {a.node(), b.node()}, [D, repeat, M](Node& n) {
        const Tensor& av = n.parents[0]->value;
        const Tensor& bv = n.parents[1]->value;
        for (int i = 0; i < M; ++i) {
            double g = n.grad.data[i];
            const double* ar = av.data.data() + static_cast<std::size_t>(i / repeat) * D;
            const double* br = bv.data.data() + static_cast<std::size_t>(i) * D;
            if (pneeds(n, 0)) {
                double* ga = pgrad(n, 0).data.data() + static_cast<std::size_t>(i / repeat) * D;
                for (int c = 0; c < D; ++c) ga[c] += g * br[c];
            }
            if (pneeds(n, 1)) {
                double* gb = pgrad(n, 1).data.data() + static_cast<std::size_t>(i) * D;
                for (int c = 0; c < D; ++c) gb[c] += g * ar[c];
            }
        }
    }));
}

static Var repeat_interleave(const Var& v, int n) {
    int L = v.shape()[0];
    Tensor out({L * n});
    for (int i = 0; i < L * n; ++i) out.data[i] = v.value().data[i / n];
    return Var(make_node(std::move(out), "repeat_interleave", {v.node()}, [L, n](Node& nd) {
        if (!pneeds(nd, 0)) return;
        Tensor& g = pgrad(nd, 0);
        for (int i = 0; i < L * n; ++i) g.data[i / n] += nd.grad.data[i];
    }));
}

static Var gather_elems(const Var& v, const std::vector<int>& idx) {
    Tensor out({static_cast<int>(idx.size())});
    for (std::size_t i = 0; i < idx.size(); ++i) out.data[i] = v.value().data[idx[i]];
    return Var(make_node(std::move(out), "gather_elems", {v.node()}, [idx](Node& nd) {
        if (!pneeds(nd, 0)) return;
        Tensor& g = pgrad(nd, 0);
        for (std::size_t i = 0; i < idx.size(); ++i) g.data[idx[i]] += nd.grad.data[i];
    }));
}

std::vector<int> hardest_negatives(const std::vector<double>& distances, int h) {
    std::vector<int> idx(distances.size());
    std::iota(idx.begin(), idx.end(), 0);
    int hh = std::min<int>(h, static_cast<int>(idx.size()));
    // stable ordering: ties resolved by lower index
    std::partial_sort(idx.begin(), idx.begin() + hh, idx.end(), [&](int a, int b) {
        return distances[a] != distances[b] ? distances[a] < distances[b] : a < b;
    });
    idx.resize(hh);
    return idx;
}

HingeLosses hinge_loss(const Var& d1_map, const Var& d2_map, const SampledCorrespondences& samples,
                       double margin, int hardest_count) {
    int L = static_cast<int>(samples.pos1.size());
    int N = samples.negatives_per_positive;
    Var p1 = gather_pixels(d1_map, samples.pos1);
    Var p2 = gather_pixels(d2_map, samples.pos2);
    Var neg = gather_pixels(d2_map, samples.neg2);
    Var pos_d = row_distance(p1, p2, 1);
    Var neg_d = row_distance(p1, neg, N);
    Var cx = repeat_interleave(pos_d, N);
    // max(0, M + c_x - d(neg))
    Var viol = relu(add_const(sub(cx, neg_d), margin));
    HingeLosses out;
    out.l_p = reduce_mean(pos_d);
    out.l_n = reduce_mean(viol);
    out.positive_distances = pos_d.value().data;
    out.negative_distances = neg_d.value().data;
    if (hardest_count > 0) {
        std::vector<int> flat;
        flat.reserve(static_cast<std::size_t>(L) * hardest_count);
        for (int i = 0; i < L; ++i) {
            std::vector<double> per(out.negative_distances.begin() + static_cast<std::size_t>(i) * N,
                                    out.negative_distances.begin() + static_cast<std::size_t>(i + 1) * N);
            for (int j : hardest_negatives(per, hardest_count)) flat.push_back(i * N + j);
        }
        out.l_hard = reduce_mean(gather_elems(viol, flat));
    } else {
        out.l_hard = Var(Tensor({1}));
    }
    return out;
}

Var distinctiveness_loss(CoamNet& net, const Var& d1_unnorm_detached,
                         const SampledCorrespondences& samples,
                         const std::vector<double>& negative_distances, double margin,
                         double exponent) {
    int L = static_cast<int>(samples.pos1.size());
    int N = samples.negatives_per_positive;
    Var rows = gather_pixels(d1_unnorm_detached, samples.pos1);
    Var r = net.distinctiveness_rows(rows);  // (L,1)
    Tensor targets({L, 1});
    for (int i = 0; i < L; ++i) {
        int m = 0;
        for (int j = 0; j < N; ++j)
            if (negative_distances[static_cast<std::size_t>(i) * N + j] < margin) ++m;
        targets.at2(i, 0) = std::pow(1.0 + m, -exponent);
    }
    return reduce_mean(abs_val(sub(r, Var(std::move(targets)))));
}

Var infonce_loss(const Var& d1_map, const Var& d2_map, const SampledCorrespondences& samples,
                 double temperature) {
    int N = samples.negatives_per_positive;
    Var p1 = gather_pixels(d1_map, samples.pos1);
    Var p2 = gather_pixels(d2_map, samples.pos2);
    Var neg = gather_pixels(d2_map, samples.neg2);
    Var pos_s = row_dot(p1, p2, 1);   // (L)
    Var neg_s = row_dot(p1, neg, N);  // (L*N)
    int L = pos_s.shape()[0];
    double tau = temperature;
    // loss = (1/L) sum_i [ logsumexp(tau*pos_i, tau*neg_ij) - tau*pos_i ],
    // computed with the max subtracted for stability.
    Tensor out({1});
    std::vector<double> wpos(L);            // softmax weight of the positive per group
    std::vector<double> wneg(static_cast<std::size_t>(L) * N);
    double total = 0;
    for (int i = 0; i < L; ++i) {
        double mx = tau * pos_s.value().data[i];
        for (int j = 0; j < N; ++j)
            mx = std::max(mx, tau * neg_s.value().data[static_cast<std::size_t>(i) * N + j]);
        double ep = std::exp(tau * pos_s.value().data[i] - mx);
        double sum = ep;
        for (int j = 0; j < N; ++j)
            sum += std::exp(tau * neg_s.value().data[static_cast<std::size_t>(i) * N + j] - mx);
        wpos[i] = ep / sum;
        for (int j = 0; j < N; ++j)
            wneg[static_cast<std::size_t>(i) * N + j] =
                std::exp(tau * neg_s.value().data[static_cast<std::size_t>(i) * N + j] - mx) / sum;
        total += (std::log(sum) + mx) - tau * pos_s.value().data[i];
    }
    out.data[0] = total / L;
    return Var(make_node(std::move(out), "infonce", {pos_s.node(), neg_s.node()},
                         [L, N, tau, wpos, wneg](Node& n) {
                             double g = n.grad.data[0] / L;
                             if (pneeds(n, 0)) {
                                 Tensor& gp = pgrad(n, 0);
                                 for (int i = 0; i < L; ++i) gp.data[i] += g * tau * (wpos[i] - 1.0);
                             }
                             if (pneeds(n, 1)) {
                                 Tensor& gn = pgrad(n, 1);
                                 for (std::size_t i = 0; i < wneg.size(); ++i)
                                     gn.data[i] += g * tau * wneg[i];
                             }
                         }));
}

void adam_step(std::vector<Parameter*> params, AdamState& state, double lr) {
    if (state.m.empty()) {
        for (auto* p : params) {
            state.m.emplace_back(p->value().shape);
            state.v.emplace_back(p->value().shape);
        }
    }
    ++state.step_count;
    double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step_count));
    double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step_count));
    for (std::size_t k = 0; k < params.size(); ++k) {
        Parameter* p = params[k];
        if (!p->trainable) continue;
        const Tensor& g = p->gradient();
        Tensor& val = p->mutable_value();
        Tensor& m = state.m[k];
        Tensor& v = state.v[k];
        for (std::size_t i = 0; i < val.data.size(); ++i) {
            double gi = g.data[i];
            m.data[i] = state.beta1 * m.data[i] + (1 - state.beta1) * gi;
            v.data[i] = state.beta2 * v.data[i] + (1 - state.beta2) * gi * gi;
            double mhat = m.data[i] / bc1, vhat = v.data[i] / bc2;
            val.data[i] -= lr * mhat / (std::sqrt(vhat) + state.eps);
        }
    }
}

static void check_finite(double v, const char* term) {
    if (!std::isfinite(v)) throw NanLossError(term);
}

StepLosses train_step(CoamNet& net, const std::vector<const TrainPair*>& batch,
                      const TrainConfig& cfg, AdamState& state, std::uint64_t sample_seed) {
    cfg.validate();
    if (batch.empty()) throw std::invalid_argument("train_step: empty batch");
    net.zero_grads();
    StepLosses losses;
    double inv_b = 1.0 / static_cast<double>(batch.size());
    Tensor upstream({1});
    upstream.data[0] = inv_b;
    for (std::size_t b = 0; b < batch.size(); ++b) {
        const TrainPair& pair = *batch[b];
        SampledCorrespondences samples = sample_correspondences(
            pair.field, cfg.positives_per_pair, cfg.negatives_per_positive, cfg.exclusion_radius,
            sample_seed * 0x9e3779b97f4a7c15ull + b);
        PairDescription pd = net.describe_pair(Var(pair.image1), Var(pair.image2));

        Var main;
        HingeLosses h = hinge_loss(pd.d1, pd.d2, samples, cfg.margin, cfg.hardest_count);
        if (cfg.loss_kind == LossKind::kHinge) {
            check_finite(h.l_p.value().data[0], "L_p");
            check_finite(h.l_n.value().data[0], "L_n");
            check_finite(h.l_hard.value().data[0], "L_hard");
            losses.l_p += h.l_p.value().data[0] * inv_b;
            losses.l_n += h.l_n.value().data[0] * inv_b;
            losses.l_hard += h.l_hard.value().data[0] * inv_b;
            main = add(add(h.l_p, h.l_n), h.l_hard);
        } else {
            Var nce = infonce_loss(pd.d1, pd.d2, samples, cfg.nce_temperature);
            check_finite(nce.value().data[0], "L_nce");
            losses.l_nce += nce.value().data[0] * inv_b;
            losses.l_p += h.l_p.value().data[0] * inv_b;  // reported for the curve
            main = nce;
        }
        Var l_r = distinctiveness_loss(net, pd.d1_unnorm.detach(), samples, h.negative_distances,
                                       cfg.margin, cfg.distinctiveness_exponent);
        check_finite(l_r.value().data[0], "L_r");
        losses.l_r += l_r.value().data[0] * inv_b;
        Var total = add(main, l_r);
        losses.total += total.value().data[0] * inv_b;
        backward(total, &upstream);
    }
    adam_step(net.parameters(), state, cfg.learning_rate);
    return losses;
}

}  // namespace coam
