#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "coam/checkpoint.hpp"
#include "coam/ops.hpp"

using namespace coam;

namespace {

Tensor random_tensor(std::vector<int> shape, std::mt19937_64& rng, double lo = -1, double hi = 1) {
    Tensor t(std::move(shape));
    std::uniform_real_distribution<double> d(lo, hi);
    for (double& v : t.data) v = d(rng);
    return t;
}

// Keep values away from the kinks of relu/abs/max so central differences are valid.
void push_from_zero(Tensor& t, double margin = 0.05) {
    for (double& v : t.data)
        if (std::fabs(v) < margin) v = v >= 0 ? margin : -margin;
}

// Scalarize with fixed random weights so the upstream gradient is non-uniform.
Var weighted_sum(const Var& x, std::mt19937_64& rng) {
    Tensor w(x.shape());
    std::uniform_real_distribution<double> d(-1, 1);
    for (double& v : w.data) v = d(rng);
    return reduce_sum(mul(x, Var(std::move(w))));
}

}  // namespace

TEST_CASE("relu forward matches its definition") {
    Var x(Tensor({3}, {-1, 0, 2}));
    Tensor y = relu(x).value();
    CHECK(y.data == std::vector<double>{0, 0, 2});
}

TEST_CASE("softmax of equal logits is uniform") {
    Var x(Tensor({2}, {0, 0}));
    Tensor y = softmax_last(x).value();
    CHECK(y.data[0] == doctest::Approx(0.5));
    CHECK(y.data[1] == doctest::Approx(0.5));
}

TEST_CASE("channel L2 normalize 3-4-5") {
    Var x(Tensor({1, 2}, {3, 4}));
    Tensor y = l2_normalize_channel(x).value();
    CHECK(y.data[0] == doctest::Approx(0.6));
    CHECK(y.data[1] == doctest::Approx(0.8));
}

TEST_CASE("d/dx sum(x*x) = 2x") {
    Parameter p{"x", Var(Tensor({3}, {1, 2, 3}), true)};
    p.zero_grad();
    backward(reduce_sum(mul(p.var, p.var)));
    CHECK(p.gradient().data == std::vector<double>{2, 4, 6});
}

TEST_CASE("L2-normalize kills the radial gradient component") {
    Parameter p{"x", Var(Tensor({3}, {1, 0, 0}), true)};
    p.zero_grad();
    Var y = l2_normalize_channel(reshape(p.var, {1, 3}));
    Tensor upstream({1, 3}, {1, 0, 0});  // parallel to x
    backward(y, &upstream);
    for (double g : p.gradient().data) CHECK(g == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("backward accumulates: running twice doubles leaf gradients") {
    Parameter p{"x", Var(Tensor({2}, {1, 2}), true)};
    p.zero_grad();
    backward(reduce_sum(mul(p.var, p.var)));
    Tensor once = p.gradient();
    backward(reduce_sum(mul(p.var, p.var)));
    for (std::size_t i = 0; i < once.data.size(); ++i)
        CHECK(p.gradient().data[i] == doctest::Approx(2 * once.data[i]));
}

TEST_CASE("upstream gradient shape mismatch is rejected") {
    Parameter p{"x", Var(Tensor({2}, {1, 2}), true)};
    Var y = mul(p.var, p.var);
    Tensor bad({3});
    CHECK_THROWS_AS(backward(y, &bad), ShapeError);
}

TEST_CASE("conv2d gradient vs finite differences on 1x4x4 input") {
    std::mt19937_64 rng(7);
    Parameter x{"x", Var(random_tensor({1, 4, 4}, rng), true)};
    Parameter w{"w", Var(random_tensor({2, 1, 3, 3}, rng), true)};
    auto fwd = [&] { return reduce_sum(conv2d(x.var, w.var, nullptr, 1, 1)); };
    auto report = grad_check(fwd, {&x, &w}, 1e-5, 1e-6);
    CHECK(report.ok);
    CHECK(report.max_rel_error < 1e-6);
}

TEST_CASE("grad_check: linear layer under 1e-6") {
    std::mt19937_64 rng(11);
    Parameter w{"w", Var(random_tensor({3, 3}, rng), true)};
    Parameter b{"b", Var(random_tensor({3}, rng), true)};
    Var x(random_tensor({4, 3}, rng));
    auto fwd = [&] { return reduce_sum(linear(x, w.var, &b.var)); };
    auto report = grad_check(fwd, {&w, &b}, 1e-5, 1e-6);
    CHECK(report.ok);
}

TEST_CASE("grad_check: constant graph has zero gradients both ways") {
    Parameter w{"w", Var(Tensor({2, 2}, {1, 2, 3, 4}), true)};
    auto fwd = [&] { return reduce_sum(Var(Tensor({1}, {5.0}))); };
    auto report = grad_check(fwd, {&w}, 1e-5, 1e-9);
    CHECK(report.ok);
    CHECK(report.max_rel_error == 0.0);
    for (double g : w.gradient().data) CHECK(g == 0.0);
}

TEST_CASE("grad_check: softmax-cross-entropy style composition") {
    std::mt19937_64 rng(13);
    Parameter w{"w", Var(random_tensor({4, 3}, rng), true)};
    Var x(random_tensor({2, 3}, rng));
    auto fwd = [&] {
        Var p = softmax_last(linear(x, w.var, nullptr));
        // -sum over the first class column acts as a fixed-target cross entropy
        Tensor mask({2, 4});
        mask.at2(0, 0) = 1;
        mask.at2(1, 2) = 1;
        Var picked = reduce_sum(mul(p, Var(mask)));
        return scale(picked, -1.0);
    };
    auto report = grad_check(fwd, {&w}, 1e-5, 1e-5);
    CHECK(report.ok);
}

TEST_CASE("every primitive passes finite differences on 20 random instances") {
    std::mt19937_64 rng(42);
    const double kStep = 1e-5, kTol = 1e-5;
    for (int inst = 0; inst < 20; ++inst) {
        // conv2d with stride 2
        {
            Parameter x{"x", Var(random_tensor({2, 4, 4}, rng), true)};
            Parameter w{"w", Var(random_tensor({3, 2, 3, 3}, rng), true)};
            Parameter b{"b", Var(random_tensor({3}, rng), true)};
            auto fwd = [&] { return weighted_sum(conv2d(x.var, w.var, &b.var, 2, 1), rng); };
            std::mt19937_64 save = rng;
            auto run = [&] { rng = save; return fwd(); };
            CHECK(grad_check(run, {&x, &w, &b}, kStep, kTol).ok);
        }
        // linear
        {
            Parameter w{"w", Var(random_tensor({3, 4}, rng), true)};
            Parameter b{"b", Var(random_tensor({3}, rng), true)};
            Parameter x{"x", Var(random_tensor({5, 4}, rng), true)};
            auto fwd = [&] { return weighted_sum(linear(x.var, w.var, &b.var), rng); };
            std::mt19937_64 save = rng;
            auto run = [&] { rng = save; return fwd(); };
            CHECK(grad_check(run, {&w, &b, &x}, kStep, kTol).ok);
        }
        // relu / sigmoid / abs
        {
            Tensor t = random_tensor({7}, rng);
            push_from_zero(t);
            Parameter x{"x", Var(t, true)};
            std::mt19937_64 save = rng;
            auto run_relu = [&] { rng = save; return weighted_sum(relu(x.var), rng); };
            CHECK(grad_check(run_relu, {&x}, kStep, kTol).ok);
            auto run_sig = [&] { rng = save; return weighted_sum(sigmoid(x.var), rng); };
            CHECK(grad_check(run_sig, {&x}, kStep, kTol).ok);
            auto run_abs = [&] { rng = save; return weighted_sum(abs_val(x.var), rng); };
            CHECK(grad_check(run_abs, {&x}, kStep, kTol).ok);
        }
        // softmax over last axis
        {
            Parameter x{"x", Var(random_tensor({3, 5}, rng), true)};
            std::mt19937_64 save = rng;
            auto run = [&] { rng = save; return weighted_sum(softmax_last(x.var), rng); };
            CHECK(grad_check(run, {&x}, kStep, kTol).ok);
        }
        // instance norm
        {
            Parameter x{"x", Var(random_tensor({2, 3, 3}, rng), true)};
            Parameter g{"g", Var(random_tensor({2}, rng, 0.5, 1.5), true)};
            Parameter b{"b", Var(random_tensor({2}, rng), true)};
            std::mt19937_64 save = rng;
            auto run = [&] { rng = save; return weighted_sum(instance_norm(x.var, g.var, b.var), rng); };
            CHECK(grad_check(run, {&x, &g, &b}, kStep, kTol).ok);
        }
        // bilinear resize (up and down)
        {
            Parameter x{"x", Var(random_tensor({2, 3, 3}, rng), true)};
            std::mt19937_64 save = rng;
            auto run_up = [&] { rng = save; return weighted_sum(bilinear_resize(x.var, 5, 5), rng); };
            CHECK(grad_check(run_up, {&x}, kStep, kTol).ok);
        }
        // channelwise L2 normalize
        {
            Parameter x{"x", Var(random_tensor({3, 2, 2}, rng, 0.3, 1.0), true)};
            std::mt19937_64 save = rng;
            auto run = [&] { rng = save; return weighted_sum(l2_normalize_channel(x.var), rng); };
            CHECK(grad_check(run, {&x}, kStep, kTol).ok);
        }
        // concat
        {
            Parameter a{"a", Var(random_tensor({2, 2, 2}, rng), true)};
            Parameter b{"b", Var(random_tensor({3, 2, 2}, rng), true)};
            std::mt19937_64 save = rng;
            auto run = [&] { rng = save; return weighted_sum(concat({a.var, b.var}, 0), rng); };
            CHECK(grad_check(run, {&a, &b}, kStep, kTol).ok);
        }
        // max pool 2x2
        {
            Parameter x{"x", Var(random_tensor({2, 4, 4}, rng), true)};
            std::mt19937_64 save = rng;
            auto run = [&] { rng = save; return weighted_sum(max_pool2x2(x.var), rng); };
            CHECK(grad_check(run, {&x}, kStep, kTol).ok);
        }
        // elementwise add/sub/mul + matmul + transpose
        {
            Parameter a{"a", Var(random_tensor({3, 4}, rng), true)};
            Parameter b{"b", Var(random_tensor({3, 4}, rng), true)};
            Parameter c{"c", Var(random_tensor({4, 2}, rng), true)};
            std::mt19937_64 save = rng;
            auto run = [&] {
                rng = save;
                Var mixed = matmul(add(a.var, mul(sub(a.var, b.var), b.var)), c.var);
                return weighted_sum(transpose2d(mixed), rng);
            };
            CHECK(grad_check(run, {&a, &b, &c}, kStep, kTol).ok);
        }
        // reductions
        {
            Tensor t = random_tensor({6}, rng);
            push_from_zero(t);
            Parameter x{"x", Var(t, true)};
            auto run_sum = [&] { return reduce_sum(x.var); };
            CHECK(grad_check(run_sum, {&x}, kStep, kTol).ok);
            auto run_mean = [&] { return reduce_mean(mul(x.var, x.var)); };
            CHECK(grad_check(run_mean, {&x}, kStep, kTol).ok);
            auto run_max = [&] { return reduce_max(x.var); };
            CHECK(grad_check(run_max, {&x}, kStep, kTol).ok);
        }
        // channel affine + gather
        {
            Parameter x{"x", Var(random_tensor({4, 3}, rng), true)};
            Parameter g{"g", Var(random_tensor({3}, rng), true)};
            Parameter b{"b", Var(random_tensor({3}, rng), true)};
            std::mt19937_64 save = rng;
            auto run = [&] { rng = save; return weighted_sum(channel_affine(x.var, g.var, b.var), rng); };
            CHECK(grad_check(run, {&x, &g, &b}, kStep, kTol).ok);
            Parameter m{"m", Var(random_tensor({2, 3, 3}, rng), true)};
            std::vector<std::pair<int, int>> xy{{0, 0}, {2, 1}, {1, 2}, {2, 1}};
            auto run_gather = [&] { rng = save; return weighted_sum(gather_pixels(m.var, xy), rng); };
            CHECK(grad_check(run_gather, {&m}, kStep, kTol).ok);
        }
    }
}

TEST_CASE("softmax rows are a distribution") {
    std::mt19937_64 rng(3);
    for (int i = 0; i < 50; ++i) {
        Tensor y = softmax_last(Var(random_tensor({4, 6}, rng, -5, 5))).value();
        for (int r = 0; r < 4; ++r) {
            double s = 0;
            for (int c = 0; c < 6; ++c) {
                CHECK(y.at2(r, c) >= 0.0);
                s += y.at2(r, c);
            }
            CHECK(s == doctest::Approx(1.0).epsilon(1e-9));
        }
    }
}

TEST_CASE("L2 normalize yields unit locations; dead channels map to zero") {
    std::mt19937_64 rng(5);
    Tensor t = random_tensor({4, 3, 3}, rng);
    Tensor y = l2_normalize_channel(Var(t)).value();
    for (int loc = 0; loc < 9; ++loc) {
        double n = 0;
        for (int c = 0; c < 4; ++c) n += y.data[c * 9 + loc] * y.data[c * 9 + loc];
        CHECK(std::sqrt(n) == doctest::Approx(1.0).epsilon(1e-9));
    }
    Tensor zero({4, 1, 1});
    Tensor yz = l2_normalize_channel(Var(zero)).value();
    for (double v : yz.data) CHECK(v == 0.0);
}

TEST_CASE("bilinear resize is the identity at equal sizes") {
    std::mt19937_64 rng(6);
    Tensor t = random_tensor({3, 5, 7}, rng);
    Tensor y = bilinear_resize(Var(t), 5, 7).value();
    CHECK(y.data == t.data);
}

TEST_CASE("forward passes are deterministic and finite") {
    std::mt19937_64 rng(9);
    Tensor x = random_tensor({2, 8, 8}, rng);
    Tensor w = random_tensor({3, 2, 3, 3}, rng);
    Tensor a = conv2d(Var(x), Var(w), nullptr, 1, 1).value();
    Tensor b = conv2d(Var(x), Var(w), nullptr, 1, 1).value();
    CHECK(a.data == b.data);
    CHECK(a.all_finite());
}

TEST_CASE("shape errors name the primitive") {
    Var a(Tensor({2, 3}));
    Var b(Tensor({3, 3}));
    CHECK_THROWS_WITH_AS(add(a, b), doctest::Contains("add"), ShapeError);
    CHECK_THROWS_AS(matmul(a, a), ShapeError);
}

TEST_CASE("checkpoint round trip preserves shapes and float32 values") {
    std::mt19937_64 rng(21);
    std::map<std::string, Tensor> st;
    st["conv.w"] = random_tensor({2, 3, 3, 3}, rng);
    st["fc.b"] = random_tensor({5}, rng);
    std::string path = "test_ckpt_roundtrip.bin";
    save_checkpoint(path, st);
    auto back = load_checkpoint(path);
    REQUIRE(back.size() == 2);
    for (auto& [name, t] : st) {
        REQUIRE(back.count(name) == 1);
        CHECK(back[name].shape == t.shape);
        for (std::size_t i = 0; i < t.data.size(); ++i)
            CHECK(back[name].data[i] == doctest::Approx(t.data[i]).epsilon(1e-7));
    }
    std::remove(path.c_str());
}
