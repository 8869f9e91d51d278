#include "coam/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

namespace coam {

bool Tensor::all_finite() const {
    for (double v : data)
        if (!std::isfinite(v)) return false;
    return true;
}

std::string shape_str(const std::vector<int>& s) {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ')';
    return os.str();
}

namespace detail {
std::shared_ptr<Node> make_node(Tensor value, std::string op, std::vector<std::shared_ptr<Node>> parents,
                                std::function<void(Node&)> backward_fn) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->op = std::move(op);
    for (auto& p : parents)
        if (p->requires_grad) n->requires_grad = true;
    n->parents = std::move(parents);
    n->backward_fn = std::move(backward_fn);
    return n;
}
}  // namespace detail

using detail::make_node;

void backward(const Var& root, const Tensor* upstream) {
    auto r = root.node();
    if (!r) return;
    if (upstream) {
        if (upstream->shape != r->value.shape)
            throw ShapeError("backward", shape_str(r->value.shape), shape_str(upstream->shape));
    }
    // Topological order via iterative DFS.
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack{{r.get(), 0}};
    seen.insert(r.get());
    while (!stack.empty()) {
        auto& [n, i] = stack.back();
        if (i < n->parents.size()) {
            Node* p = n->parents[i++].get();
            if (p->requires_grad && !seen.count(p)) {
                seen.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }
    Tensor& g = r->ensure_grad();
    if (upstream) {
        for (std::size_t i = 0; i < g.data.size(); ++i) g.data[i] += upstream->data[i];
    } else {
        for (double& v : g.data) v += 1.0;
    }
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward_fn && n->requires_grad) n->backward_fn(*n);
    }
    // Non-leaf grads are tape-local scratch; leaves keep theirs for the optimizer.
    for (Node* n : order)
        if (!n->is_leaf) n->grad = Tensor();
}

static void check_same_shape(const char* op, const Var& a, const Var& b) {
    if (a.shape() != b.shape()) throw ShapeError(op, shape_str(a.shape()), shape_str(b.shape()));
}

static Tensor& pgrad(Node& n, std::size_t i) { return n.parents[i]->ensure_grad(); }
static bool pneeds(Node& n, std::size_t i) { return n.parents[i]->requires_grad; }

Var add(const Var& a, const Var& b) {
    check_same_shape("add", a, b);
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += b.value().data[i];
    return Var(make_node(std::move(out), "add", {a.node(), b.node()}, [](Node& n) {
        for (int k = 0; k < 2; ++k)
            if (pneeds(n, k)) {
                Tensor& g = pgrad(n, k);
                for (std::size_t i = 0; i < g.data.size(); ++i) g.data[i] += n.grad.data[i];
            }
    }));
}

Var sub(const Var& a, const Var& b) {
    check_same_shape("sub", a, b);
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] -= b.value().data[i];
    return Var(make_node(std::move(out), "sub", {a.node(), b.node()}, [](Node& n) {
        if (pneeds(n, 0)) {
            Tensor& g = pgrad(n, 0);
            for (std::size_t i = 0; i < g.data.size(); ++i) g.data[i] += n.grad.data[i];
        }
        if (pneeds(n, 1)) {
            Tensor& g = pgrad(n, 1);
            for (std::size_t i = 0; i < g.data.size(); ++i) g.data[i] -= n.grad.data[i];
        }
    }));
}

Var mul(const Var& a, const Var& b) {
    check_same_shape("mul", a, b);
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] *= b.value().data[i];
    return Var(make_node(std::move(out), "mul", {a.node(), b.node()}, [](Node& n) {
        const Tensor& av = n.parents[0]->value;
        const Tensor& bv = n.parents[1]->value;
        if (pneeds(n, 0)) {
            Tensor& g = pgrad(n, 0);
            for (std::size_t i = 0; i < g.data.size(); ++i) g.data[i] += n.grad.data[i] * bv.data[i];
        }
        if (pneeds(n, 1)) {
            Tensor& g = pgrad(n, 1);
            for (std::size_t i = 0; i < g.data.size(); ++i) g.data[i] += n.grad.data[i] * av.data[i];
        }
    }));
}

Var scale(const Var& a, double s) {
    Tensor out = a.value();
    for (double& v : out.data) v *= s;
    return Var(make_node(std::move(out), "scale", {a.node()}, [s](Node& n) {
        if (!pneeds(n, 0)) return;
        Tensor& g = pgrad(n, 0);
        for (std::size_t i = 0; i < g.data.size(); ++i) g.data[i] += s * n.grad.data[i];
    }));
}

Var add_const(const Var& a, double c) {
    Tensor out = a.value();
    for (double& v : out.data) v += c;
    return Var(make_node(std::move(out), "add_const", {a.node()}, [](Node& n) {
        if (!pneeds(n, 0)) return;
        Tensor& g = pgrad(n, 0);
        for (std::size_t i = 0; i < g.data.size(); ++i) g.data[i] += n.grad.data[i];
    }));
}

Var relu(const Var& a) {
    Tensor out = a.value();
    for (double& v : out.data) v = v > 0 ? v : 0.0;
    return Var(make_node(std::move(out), "relu", {a.node()}, [](Node& n) {
        if (!pneeds(n, 0)) return;
        const Tensor& x = n.parents[0]->value;
        Tensor& g = pgrad(n, 0);
        for (std::size_t i = 0; i < g.data.size(); ++i)
            if (x.data[i] > 0) g.data[i] += n.grad.data[i];
    }));
}

Var sigmoid(const Var& a) {
    Tensor out = a.value();
    for (double& v : out.data) v = 1.0 / (1.0 + std::exp(-v));
    return Var(make_node(std::move(out), "sigmoid", {a.node()}, [](Node& n) {
        if (!pneeds(n, 0)) return;
        Tensor& g = pgrad(n, 0);
        for (std::size_t i = 0; i < g.data.size(); ++i) {
            double y = n.value.data[i];
            g.data[i] += n.grad.data[i] * y * (1.0 - y);
        }
    }));
}

Var abs_val(const Var& a) {
    Tensor out = a.value();
    for (double& v : out.data) v = std::fabs(v);
    return Var(make_node(std::move(out), "abs", {a.node()}, [](Node& n) {
        if (!pneeds(n, 0)) return;
        const Tensor& x = n.parents[0]->value;
        Tensor& g = pgrad(n, 0);
        for (std::size_t i = 0; i < g.data.size(); ++i)
            g.data[i] += n.grad.data[i] * (x.data[i] > 0 ? 1.0 : (x.data[i] < 0 ? -1.0 : 0.0));
    }));
}

// Plain GEMM helpers. C (n,k) += A (n,m) * B (m,k), optionally transposing.
static void gemm_nn(const double* A, const double* B, double* C, int n, int m, int k) {
    for (int i = 0; i < n; ++i) {
        const double* a = A + static_cast<std::size_t>(i) * m;
        double* c = C + static_cast<std::size_t>(i) * k;
        for (int t = 0; t < m; ++t) {
            double av = a[t];
            if (av == 0.0) continue;
            const double* b = B + static_cast<std::size_t>(t) * k;
            for (int j = 0; j < k; ++j) c[j] += av * b[j];
        }
    }
}
static void gemm_nt(const double* A, const double* B, double* C, int n, int m, int k) {
    // C (n,k) += A (n,m) * B^T, B stored (k,m)
    for (int i = 0; i < n; ++i) {
        const double* a = A + static_cast<std::size_t>(i) * m;
        double* c = C + static_cast<std::size_t>(i) * k;
        for (int j = 0; j < k; ++j) {
            const double* b = B + static_cast<std::size_t>(j) * m;
            double s = 0;
            for (int t = 0; t < m; ++t) s += a[t] * b[t];
            c[j] += s;
        }
    }
}
static void gemm_tn(const double* A, const double* B, double* C, int n, int m, int k) {
    // C (n,k) += A^T * B, A stored (m,n), B (m,k)
    for (int t = 0; t < m; ++t) {
        const double* a = A + static_cast<std::size_t>(t) * n;
        const double* b = B + static_cast<std::size_t>(t) * k;
        for (int i = 0; i < n; ++i) {
            double av = a[i];
            if (av == 0.0) continue;
            double* c = C + static_cast<std::size_t>(i) * k;
            for (int j = 0; j < k; ++j) c[j] += av * b[j];
        }
    }
}

Var matmul(const Var& a, const Var& b) {
    if (a.shape().size() != 2 || b.shape().size() != 2 || a.shape()[1] != b.shape()[0])
        throw ShapeError("matmul", "(n,m)x(m,k)", shape_str(a.shape()) + "x" + shape_str(b.shape()));
    int n = a.shape()[0], m = a.shape()[1], k = b.shape()[1];
    Tensor out({n, k});
    gemm_nn(a.value().data.data(), b.value().data.data(), out.data.data(), n, m, k);
    return Var(make_node(std::move(out), "matmul", {a.node(), b.node()}, [n, m, k](Node& nd) {
        const Tensor& av = nd.parents[0]->value;
        const Tensor& bv = nd.parents[1]->value;
        if (pneeds(nd, 0))  // dA = dC * B^T
            gemm_nt(nd.grad.data.data(), bv.data.data(), pgrad(nd, 0).data.data(), n, k, m);
        if (pneeds(nd, 1))  // dB = A^T * dC
            gemm_tn(av.data.data(), nd.grad.data.data(), pgrad(nd, 1).data.data(), m, n, k);
    }));
}

Var softmax_last(const Var& a) {
    const auto& s = a.shape();
    int cols = s.back();
    int rows = static_cast<int>(a.value().numel()) / cols;
    Tensor out = a.value();
    for (int r = 0; r < rows; ++r) {
        double* p = out.data.data() + static_cast<std::size_t>(r) * cols;
        double mx = *std::max_element(p, p + cols);
        double sum = 0;
        for (int j = 0; j < cols; ++j) {
            p[j] = std::exp(p[j] - mx);
            sum += p[j];
        }
        for (int j = 0; j < cols; ++j) p[j] /= sum;
    }
    return Var(make_node(std::move(out), "softmax", {a.node()}, [rows, cols](Node& n) {
        if (!pneeds(n, 0)) return;
        Tensor& g = pgrad(n, 0);
        for (int r = 0; r < rows; ++r) {
            const double* y = n.value.data.data() + static_cast<std::size_t>(r) * cols;
            const double* dy = n.grad.data.data() + static_cast<std::size_t>(r) * cols;
            double* dx = g.data.data() + static_cast<std::size_t>(r) * cols;
            double dot = 0;
            for (int j = 0; j < cols; ++j) dot += y[j] * dy[j];
            for (int j = 0; j < cols; ++j) dx[j] += y[j] * (dy[j] - dot);
        }
    }));
}

Var reduce_sum(const Var& a) {
    double s = 0;
    for (double v : a.value().data) s += v;
    return Var(make_node(Tensor({1}, {s}), "sum", {a.node()}, [](Node& n) {
        if (!pneeds(n, 0)) return;
        Tensor& g = pgrad(n, 0);
        for (double& v : g.data) v += n.grad.data[0];
    }));
}

Var reduce_mean(const Var& a) {
    double s = 0;
    for (double v : a.value().data) s += v;
    double inv = 1.0 / static_cast<double>(a.value().numel());
    return Var(make_node(Tensor({1}, {s * inv}), "mean", {a.node()}, [inv](Node& n) {
        if (!pneeds(n, 0)) return;
        Tensor& g = pgrad(n, 0);
        for (double& v : g.data) v += n.grad.data[0] * inv;
    }));
}

Var reduce_max(const Var& a) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < a.value().data.size(); ++i)
        if (a.value().data[i] > a.value().data[best]) best = i;
    double m = a.value().data[best];
    return Var(make_node(Tensor({1}, {m}), "max", {a.node()}, [best](Node& n) {
        if (!pneeds(n, 0)) return;
        pgrad(n, 0).data[best] += n.grad.data[0];
    }));
}

Var reshape(const Var& a, std::vector<int> shape) {
    if (Tensor::numel_of(shape) != a.value().numel())
        throw ShapeError("reshape", shape_str(shape), shape_str(a.shape()));
    Tensor out(shape, a.value().data);
    return Var(make_node(std::move(out), "reshape", {a.node()}, [](Node& n) {
        if (!pneeds(n, 0)) return;
        Tensor& g = pgrad(n, 0);
        for (std::size_t i = 0; i < g.data.size(); ++i) g.data[i] += n.grad.data[i];
    }));
}

Var transpose2d(const Var& a) {
    const auto& s = a.shape();
    if (s.size() != 2) throw ShapeError("transpose2d", "(n,m)", shape_str(s));
    int n = s[0], m = s[1];
    Tensor out({m, n});
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < m; ++j) out.at2(j, i) = a.value().at2(i, j);
    return Var(make_node(std::move(out), "transpose2d", {a.node()}, [n, m](Node& nd) {
        if (!pneeds(nd, 0)) return;
        Tensor& g = pgrad(nd, 0);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < m; ++j) g.at2(i, j) += nd.grad.at2(j, i);
    }));
}

Var concat(const std::vector<Var>& xs, int axis) {
    if (xs.empty()) throw std::invalid_argument("concat: empty input list");
    const auto& s0 = xs[0].shape();
    int rank = static_cast<int>(s0.size());
    if (axis < 0 || axis >= rank) throw std::invalid_argument("concat: bad axis");
    std::vector<int> out_shape = s0;
    out_shape[axis] = 0;
    for (const auto& x : xs) {
        const auto& s = x.shape();
        for (int d = 0; d < rank; ++d)
            if (d != axis && s[d] != s0[d]) throw ShapeError("concat", shape_str(s0), shape_str(s));
        out_shape[axis] += s[axis];
    }
    long long outer = 1, inner = 1;
    for (int d = 0; d < axis; ++d) outer *= s0[d];
    for (int d = axis + 1; d < rank; ++d) inner *= s0[d];
    Tensor out(out_shape);
    std::vector<long long> chunk(xs.size());
    std::vector<std::shared_ptr<Node>> parents;
    long long total_chunk = static_cast<long long>(out_shape[axis]) * inner;
    long long off = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        chunk[i] = static_cast<long long>(xs[i].shape()[axis]) * inner;
        const auto& src = xs[i].value().data;
        for (long long o = 0; o < outer; ++o)
            std::memcpy(out.data.data() + o * total_chunk + off, src.data() + o * chunk[i],
                        sizeof(double) * chunk[i]);
        off += chunk[i];
        parents.push_back(xs[i].node());
    }
    return Var(make_node(std::move(out), "concat", std::move(parents),
                         [outer, chunk, total_chunk](Node& n) {
                             long long off = 0;
                             for (std::size_t i = 0; i < n.parents.size(); ++i) {
                                 if (pneeds(n, i)) {
                                     Tensor& g = pgrad(n, i);
                                     for (long long o = 0; o < outer; ++o) {
                                         const double* src = n.grad.data.data() + o * total_chunk + off;
                                         double* dst = g.data.data() + o * chunk[i];
                                         for (long long j = 0; j < chunk[i]; ++j) dst[j] += src[j];
                                     }
                                 }
                                 off += chunk[i];
                             }
                         }));
}

// im2col for (C,H,W) input into (C*kh*kw, OH*OW)
static void im2col(const Tensor& x, int kh, int kw, int stride, int pad, int oh, int ow, double* col) {
    int C = x.shape[0], H = x.shape[1], W = x.shape[2];
    std::size_t idx = 0;
    for (int c = 0; c < C; ++c)
        for (int ky = 0; ky < kh; ++ky)
            for (int kx = 0; kx < kw; ++kx)
                for (int oy = 0; oy < oh; ++oy) {
                    int iy = oy * stride + ky - pad;
                    if (iy < 0 || iy >= H) {
                        for (int ox = 0; ox < ow; ++ox) col[idx++] = 0.0;
                        continue;
                    }
                    const double* row = x.data.data() + (static_cast<std::size_t>(c) * H + iy) * W;
                    for (int ox = 0; ox < ow; ++ox) {
                        int ix = ox * stride + kx - pad;
                        col[idx++] = (ix >= 0 && ix < W) ? row[ix] : 0.0;
                    }
                }
}

static void col2im_add(const double* col, int C, int H, int W, int kh, int kw, int stride, int pad,
                       int oh, int ow, double* x) {
    std::size_t idx = 0;
    for (int c = 0; c < C; ++c)
        for (int ky = 0; ky < kh; ++ky)
            for (int kx = 0; kx < kw; ++kx)
                for (int oy = 0; oy < oh; ++oy) {
                    int iy = oy * stride + ky - pad;
                    if (iy < 0 || iy >= H) {
                        idx += ow;
                        continue;
                    }
                    double* row = x + (static_cast<std::size_t>(c) * H + iy) * W;
                    for (int ox = 0; ox < ow; ++ox) {
                        int ix = ox * stride + kx - pad;
                        if (ix >= 0 && ix < W) row[ix] += col[idx];
                        ++idx;
                    }
                }
}

Var conv2d(const Var& input, const Var& weight, const Var* bias, int stride, int pad) {
    const auto& xs = input.shape();
    const auto& ws = weight.shape();
    if (xs.size() != 3 || ws.size() != 4 || ws[1] != xs[0])
        throw ShapeError("conv2d", "(C,H,W) with weight (O,C,kh,kw)",
                         shape_str(xs) + " weight " + shape_str(ws));
    int C = xs[0], H = xs[1], W = xs[2];
    int OC = ws[0], kh = ws[2], kw = ws[3];
    int oh = (H + 2 * pad - kh) / stride + 1;
    int ow = (W + 2 * pad - kw) / stride + 1;
    if (oh <= 0 || ow <= 0) throw ShapeError("conv2d", "positive output size", shape_str(xs));
    int K = C * kh * kw, N = oh * ow;
    std::vector<double> col(static_cast<std::size_t>(K) * N);
    im2col(input.value(), kh, kw, stride, pad, oh, ow, col.data());
    Tensor out({OC, oh, ow});
    gemm_nn(weight.value().data.data(), col.data(), out.data.data(), OC, K, N);
    if (bias) {
        if (bias->shape() != std::vector<int>{OC})
            throw ShapeError("conv2d(bias)", "(" + std::to_string(OC) + ")", shape_str(bias->shape()));
        for (int o = 0; o < OC; ++o) {
            double b = bias->value().data[o];
            double* p = out.data.data() + static_cast<std::size_t>(o) * N;
            for (int j = 0; j < N; ++j) p[j] += b;
        }
    }
    std::vector<std::shared_ptr<Node>> parents{input.node(), weight.node()};
    if (bias) parents.push_back(bias->node());
    bool has_bias = bias != nullptr;
    return Var(make_node(
        std::move(out), "conv2d", std::move(parents),
        [C, H, W, OC, kh, kw, stride, pad, oh, ow, K, N, has_bias](Node& n) {
            const Tensor& x = n.parents[0]->value;
            const Tensor& w = n.parents[1]->value;
            bool need_x = pneeds(n, 0), need_w = pneeds(n, 1);
            std::vector<double> col;
            if (need_w || need_x) col.resize(static_cast<std::size_t>(K) * N);
            if (need_w) {
                im2col(x, kh, kw, stride, pad, oh, ow, col.data());
                gemm_nt(n.grad.data.data(), col.data(), pgrad(n, 1).data.data(), OC, N, K);
            }
            if (need_x) {
                std::fill(col.begin(), col.end(), 0.0);
                gemm_tn(w.data.data(), n.grad.data.data(), col.data(), K, OC, N);
                col2im_add(col.data(), C, H, W, kh, kw, stride, pad, oh, ow, pgrad(n, 0).data.data());
            }
            if (has_bias && pneeds(n, 2)) {
                Tensor& gb = pgrad(n, 2);
                for (int o = 0; o < OC; ++o) {
                    const double* p = n.grad.data.data() + static_cast<std::size_t>(o) * N;
                    double s = 0;
                    for (int j = 0; j < N; ++j) s += p[j];
                    gb.data[o] += s;
                }
            }
        }));
}

Var max_pool2x2(const Var& input) {
    const auto& s = input.shape();
    if (s.size() != 3 || s[1] % 2 || s[2] % 2)
        throw ShapeError("max_pool2x2", "(C,2m,2n)", shape_str(s));
    int C = s[0], H = s[1], W = s[2], oh = H / 2, ow = W / 2;
    Tensor out({C, oh, ow});
    std::vector<int> argmax(static_cast<std::size_t>(C) * oh * ow);
    const Tensor& x = input.value();
    std::size_t idx = 0;
    for (int c = 0; c < C; ++c)
        for (int oy = 0; oy < oh; ++oy)
            for (int ox = 0; ox < ow; ++ox) {
                int base = (c * H + 2 * oy) * W + 2 * ox;
                int cand[4] = {base, base + 1, base + W, base + W + 1};
                int best = cand[0];
                for (int j = 1; j < 4; ++j)
                    if (x.data[cand[j]] > x.data[best]) best = cand[j];
                out.data[idx] = x.data[best];
                argmax[idx++] = best;
            }
    return Var(make_node(std::move(out), "max_pool2x2", {input.node()}, [argmax](Node& n) {
        if (!pneeds(n, 0)) return;
        Tensor& g = pgrad(n, 0);
        for (std::size_t i = 0; i < argmax.size(); ++i) g.data[argmax[i]] += n.grad.data[i];
    }));
}

// Half-pixel-center sampling; clamped at borders. Identity when sizes match.
Var bilinear_resize(const Var& input, int out_h, int out_w) {
    const auto& s = input.shape();
    if (s.size() != 3) throw ShapeError("bilinear_resize", "(C,H,W)", shape_str(s));
    int C = s[0], H = s[1], W = s[2];
    if (out_h == H && out_w == W) {
        Tensor out = input.value();
        return Var(make_node(std::move(out), "bilinear_resize", {input.node()}, [](Node& n) {
            if (!pneeds(n, 0)) return;
            Tensor& g = pgrad(n, 0);
            for (std::size_t i = 0; i < g.data.size(); ++i) g.data[i] += n.grad.data[i];
        }));
    }
    struct Tap {
        int y0, x0;
        double fy, fx;
    };
    std::vector<Tap> taps(static_cast<std::size_t>(out_h) * out_w);
    double sy = static_cast<double>(H) / out_h, sx = static_cast<double>(W) / out_w;
    for (int oy = 0; oy < out_h; ++oy)
        for (int ox = 0; ox < out_w; ++ox) {
            double yf = (oy + 0.5) * sy - 0.5, xf = (ox + 0.5) * sx - 0.5;
            yf = std::clamp(yf, 0.0, static_cast<double>(H - 1));
            xf = std::clamp(xf, 0.0, static_cast<double>(W - 1));
            int y0 = std::min(static_cast<int>(yf), H - 2 >= 0 ? H - 2 : 0);
            int x0 = std::min(static_cast<int>(xf), W - 2 >= 0 ? W - 2 : 0);
            taps[static_cast<std::size_t>(oy) * out_w + ox] = {y0, x0, yf - y0, xf - x0};
        }
    Tensor out({C, out_h, out_w});
    const Tensor& x = input.value();
    int y1s = H > 1 ? 1 : 0, x1s = W > 1 ? 1 : 0;
    for (int c = 0; c < C; ++c) {
        const double* xp = x.data.data() + static_cast<std::size_t>(c) * H * W;
        double* op = out.data.data() + static_cast<std::size_t>(c) * out_h * out_w;
        for (std::size_t i = 0; i < taps.size(); ++i) {
            const Tap& t = taps[i];
            const double* r0 = xp + t.y0 * W + t.x0;
            const double* r1 = r0 + y1s * W;
            op[i] = (1 - t.fy) * ((1 - t.fx) * r0[0] + t.fx * r0[x1s]) +
                    t.fy * ((1 - t.fx) * r1[0] + t.fx * r1[x1s]);
        }
    }
    return Var(make_node(std::move(out), "bilinear_resize", {input.node()},
                         [C, H, W, out_h, out_w, taps, y1s, x1s](Node& n) {
                             if (!pneeds(n, 0)) return;
                             Tensor& g = pgrad(n, 0);
                             for (int c = 0; c < C; ++c) {
                                 double* gp = g.data.data() + static_cast<std::size_t>(c) * H * W;
                                 const double* dp =
                                     n.grad.data.data() + static_cast<std::size_t>(c) * out_h * out_w;
                                 for (std::size_t i = 0; i < taps.size(); ++i) {
                                     const Tap& t = taps[i];
                                     double* r0 = gp + t.y0 * W + t.x0;
                                     double* r1 = r0 + y1s * W;
                                     double d = dp[i];
                                     r0[0] += (1 - t.fy) * (1 - t.fx) * d;
                                     r0[x1s] += (1 - t.fy) * t.fx * d;
                                     r1[0] += t.fy * (1 - t.fx) * d;
                                     r1[x1s] += t.fy * t.fx * d;
                                 }
                             }
                         }));
}

Var instance_norm(const Var& input, const Var& gamma, const Var& beta, double eps) {
    const auto& s = input.shape();
    if (s.size() != 3) throw ShapeError("instance_norm", "(C,H,W)", shape_str(s));
    int C = s[0];
    int N = s[1] * s[2];
    if (gamma.shape() != std::vector<int>{C} || beta.shape() != std::vector<int>{C})
        throw ShapeError("instance_norm(affine)", "(" + std::to_string(C) + ")",
                         shape_str(gamma.shape()));
    Tensor out(s);
    std::vector<double> mean(C), istd(C);
    const Tensor& x = input.value();
    for (int c = 0; c < C; ++c) {
        const double* xp = x.data.data() + static_cast<std::size_t>(c) * N;
        double m = 0;
        for (int i = 0; i < N; ++i) m += xp[i];
        m /= N;
        double v = 0;
        for (int i = 0; i < N; ++i) v += (xp[i] - m) * (xp[i] - m);
        v /= N;
        mean[c] = m;
        istd[c] = 1.0 / std::sqrt(v + eps);
        double g = gamma.value().data[c], b = beta.value().data[c];
        double* op = out.data.data() + static_cast<std::size_t>(c) * N;
        for (int i = 0; i < N; ++i) op[i] = g * (xp[i] - m) * istd[c] + b;
    }
    return Var(make_node(
        std::move(out), "instance_norm", {input.node(), gamma.node(), beta.node()},
        [C, N, mean, istd](Node& n) {
            const Tensor& x = n.parents[0]->value;
            const Tensor& gm = n.parents[1]->value;
            for (int c = 0; c < C; ++c) {
                const double* xp = x.data.data() + static_cast<std::size_t>(c) * N;
                const double* dy = n.grad.data.data() + static_cast<std::size_t>(c) * N;
                double sum_dy = 0, sum_dy_xhat = 0;
                for (int i = 0; i < N; ++i) {
                    double xh = (xp[i] - mean[c]) * istd[c];
                    sum_dy += dy[i];
                    sum_dy_xhat += dy[i] * xh;
                }
                if (pneeds(n, 1)) pgrad(n, 1).data[c] += sum_dy_xhat;
                if (pneeds(n, 2)) pgrad(n, 2).data[c] += sum_dy;
                if (pneeds(n, 0)) {
                    double* dx = pgrad(n, 0).data.data() + static_cast<std::size_t>(c) * N;
                    double g = gm.data[c];
                    for (int i = 0; i < N; ++i) {
                        double xh = (xp[i] - mean[c]) * istd[c];
                        dx[i] += g * istd[c] * (dy[i] - sum_dy / N - xh * sum_dy_xhat / N);
                    }
                }
            }
        }));
}

Var channel_affine(const Var& x, const Var& gamma, const Var& beta) {
    const auto& s = x.shape();
    if (s.size() != 2) throw ShapeError("channel_affine", "(N,C)", shape_str(s));
    int N = s[0], C = s[1];
    if (gamma.shape() != std::vector<int>{C} || beta.shape() != std::vector<int>{C})
        throw ShapeError("channel_affine", "(" + std::to_string(C) + ")", shape_str(gamma.shape()));
    Tensor out(s);
    for (int i = 0; i < N; ++i)
        for (int c = 0; c < C; ++c)
            out.at2(i, c) = gamma.value().data[c] * x.value().at2(i, c) + beta.value().data[c];
    return Var(make_node(std::move(out), "channel_affine", {x.node(), gamma.node(), beta.node()},
                         [N, C](Node& n) {
                             const Tensor& xv = n.parents[0]->value;
                             const Tensor& gm = n.parents[1]->value;
                             for (int i = 0; i < N; ++i)
                                 for (int c = 0; c < C; ++c) {
                                     double dy = n.grad.at2(i, c);
                                     if (pneeds(n, 0)) pgrad(n, 0).at2(i, c) += gm.data[c] * dy;
                                     if (pneeds(n, 1)) pgrad(n, 1).data[c] += xv.at2(i, c) * dy;
                                     if (pneeds(n, 2)) pgrad(n, 2).data[c] += dy;
                                 }
                         }));
}

static constexpr double kNormGuard = 1e-12;

Var l2_normalize_channel(const Var& x) {
    const auto& s = x.shape();
    int C, nloc, cstride;  // cstride: distance between consecutive channels of a location
    if (s.size() == 3) {
        C = s[0];
        nloc = s[1] * s[2];
        cstride = nloc;
    } else if (s.size() == 2) {
        C = s[1];
        nloc = s[0];
        cstride = 1;
    } else if (s.size() == 1) {
        C = s[0];
        nloc = 1;
        cstride = 1;
    } else {
        throw ShapeError("l2_normalize_channel", "(C,H,W), (N,C) or (C)", shape_str(s));
    }
    const bool chw = s.size() == 3;
    auto loc_base = [chw, C](int l) -> std::size_t {
        return chw ? static_cast<std::size_t>(l) : static_cast<std::size_t>(l) * C;
    };
    Tensor out(s);
    std::vector<double> inv_norm(nloc);
    const Tensor& xv = x.value();
    for (int l = 0; l < nloc; ++l) {
        std::size_t b = loc_base(l);
        double nsq = 0;
        for (int c = 0; c < C; ++c) {
            double v = xv.data[b + static_cast<std::size_t>(c) * cstride];
            nsq += v * v;
        }
        double nrm = std::sqrt(nsq);
        double inv = nrm < kNormGuard ? 0.0 : 1.0 / nrm;  // dead channels map to zero
        inv_norm[l] = inv;
        for (int c = 0; c < C; ++c)
            out.data[b + static_cast<std::size_t>(c) * cstride] =
                xv.data[b + static_cast<std::size_t>(c) * cstride] * inv;
    }
    return Var(make_node(std::move(out), "l2_normalize", {x.node()},
                         [C, nloc, cstride, inv_norm, loc_base](Node& n) {
                             if (!pneeds(n, 0)) return;
                             Tensor& g = pgrad(n, 0);
                             for (int l = 0; l < nloc; ++l) {
                                 std::size_t b = loc_base(l);
                                 double inv = inv_norm[l];
                                 if (inv == 0.0) continue;
                                 double dot = 0;
                                 for (int c = 0; c < C; ++c) {
                                     std::size_t i = b + static_cast<std::size_t>(c) * cstride;
                                     dot += n.value.data[i] * n.grad.data[i];
                                 }
                                 for (int c = 0; c < C; ++c) {
                                     std::size_t i = b + static_cast<std::size_t>(c) * cstride;
                                     g.data[i] += inv * (n.grad.data[i] - n.value.data[i] * dot);
                                 }
                             }
                         }));
}

Var linear(const Var& x, const Var& weight, const Var* bias) {
    const auto& xs = x.shape();
    const auto& ws = weight.shape();
    if (xs.size() != 2 || ws.size() != 2 || ws[1] != xs[1])
        throw ShapeError("linear", "(N,In) with weight (Out,In)",
                         shape_str(xs) + " weight " + shape_str(ws));
    int N = xs[0], In = xs[1], Out = ws[0];
    Tensor out({N, Out});
    gemm_nt(x.value().data.data(), weight.value().data.data(), out.data.data(), N, In, Out);
    if (bias) {
        if (bias->shape() != std::vector<int>{Out})
            throw ShapeError("linear(bias)", "(" + std::to_string(Out) + ")", shape_str(bias->shape()));
        for (int i = 0; i < N; ++i)
            for (int o = 0; o < Out; ++o) out.at2(i, o) += bias->value().data[o];
    }
    std::vector<std::shared_ptr<Node>> parents{x.node(), weight.node()};
    if (bias) parents.push_back(bias->node());
    bool has_bias = bias != nullptr;
    return Var(make_node(std::move(out), "linear", std::move(parents),
                         [N, In, Out, has_bias](Node& n) {
                             const Tensor& xv = n.parents[0]->value;
                             const Tensor& wv = n.parents[1]->value;
                             if (pneeds(n, 0))  // dX = dY * W
                                 gemm_nn(n.grad.data.data(), wv.data.data(), pgrad(n, 0).data.data(),
                                         N, Out, In);
                             if (pneeds(n, 1))  // dW = dY^T * X
                                 gemm_tn(n.grad.data.data(), xv.data.data(), pgrad(n, 1).data.data(),
                                         Out, N, In);
                             if (has_bias && pneeds(n, 2)) {
                                 Tensor& gb = pgrad(n, 2);
                                 for (int i = 0; i < N; ++i)
                                     for (int o = 0; o < Out; ++o) gb.data[o] += n.grad.at2(i, o);
                             }
                         }));
}

Var gather_pixels(const Var& map, const std::vector<std::pair<int, int>>& xy) {
    const auto& s = map.shape();
    if (s.size() != 3) throw ShapeError("gather_pixels", "(C,H,W)", shape_str(s));
    int C = s[0], H = s[1], W = s[2];
    int N = static_cast<int>(xy.size());
    for (auto [x, y] : xy)
        if (x < 0 || x >= W || y < 0 || y >= H)
            throw std::out_of_range("gather_pixels: location outside map");
    Tensor out({N, C});
    const Tensor& m = map.value();
    for (int i = 0; i < N; ++i)
        for (int c = 0; c < C; ++c) out.at2(i, c) = m.at3(c, xy[i].second, xy[i].first);
    return Var(make_node(std::move(out), "gather_pixels", {map.node()}, [C, H, W, xy](Node& n) {
        if (!pneeds(n, 0)) return;
        Tensor& g = pgrad(n, 0);
        for (std::size_t i = 0; i < xy.size(); ++i)
            for (int c = 0; c < C; ++c)
                g.data[(static_cast<std::size_t>(c) * H + xy[i].second) * W + xy[i].first] +=
                    n.grad.at2(static_cast<int>(i), c);
    }));
}

GradCheckReport grad_check(const std::function<Var()>& forward, std::vector<Parameter*> params,
                           double step, double tolerance) {
    GradCheckReport report;
    for (auto* p : params) p->zero_grad();
    Var out = forward();
    if (out.value().numel() != 1)
        throw std::invalid_argument("grad_check: graph output must be scalar");
    backward(out);
    auto eval = [&]() { return forward().value().data[0]; };
    for (auto* p : params) {
        GradCheckEntry e;
        e.name = p->name;
        Tensor analytic = p->gradient();
        Tensor& v = p->mutable_value();
        for (std::size_t i = 0; i < v.data.size(); ++i) {
            double orig = v.data[i];
            v.data[i] = orig + step;
            double fp = eval();
            v.data[i] = orig - step;
            double fm = eval();
            v.data[i] = orig;
            double numeric = (fp - fm) / (2 * step);
            double rel = std::fabs(analytic.data[i] - numeric) / std::max(1.0, std::fabs(numeric));
            e.max_rel_error = std::max(e.max_rel_error, rel);
        }
        e.ok = e.max_rel_error < tolerance;
        report.max_rel_error = std::max(report.max_rel_error, e.max_rel_error);
        report.ok = report.ok && e.ok;
        report.entries.push_back(std::move(e));
    }
    return report;
}

}  // namespace coam
