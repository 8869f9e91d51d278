#include <benchmark/benchmark.h>

#include <random>

#include "coam/matcher.hpp"
#include "coam/ops.hpp"
#include "coam/synthdata.hpp"

using namespace coam;

namespace {

Tensor random_tensor(std::vector<int> shape, std::uint64_t seed) {
    Tensor t(std::move(shape));
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> d(-1, 1);
    for (double& v : t.data) v = d(rng);
    return t;
}

GridDescriptors random_grid(int G, int D, std::uint64_t seed) {
    GridDescriptors g;
    g.grid_size = G;
    g.descriptor_dim = D;
    g.image_size = G * 8;
    int n = G * G;
    g.descriptors.resize(static_cast<std::size_t>(n) * D);
    g.scores.assign(n, 0.5);
    g.pixel_x.resize(n);
    g.pixel_y.resize(n);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd(0, 1);
    for (int i = 0; i < n; ++i) {
        double* d = g.descriptors.data() + static_cast<std::size_t>(i) * D;
        double norm = 0;
        for (int c = 0; c < D; ++c) {
            d[c] = nd(rng);
            norm += d[c] * d[c];
        }
        norm = std::sqrt(norm);
        for (int c = 0; c < D; ++c) d[c] /= norm;
        g.pixel_x[i] = i % G;
        g.pixel_y[i] = i / G;
    }
    return g;
}

void bm_conv2d_forward(benchmark::State& state) {
    int C = static_cast<int>(state.range(0));
    Tensor x = random_tensor({C, 64, 64}, 1);
    Tensor w = random_tensor({C, C, 3, 3}, 2);
    Tensor b = random_tensor({C}, 3);
    for (auto _ : state) {
        Var out = conv2d(Var(x), Var(w), nullptr, 2, 1);
        benchmark::DoNotOptimize(out.value().data.data());
    }
}
BENCHMARK(bm_conv2d_forward)->Arg(8)->Arg(16)->Arg(32);

void bm_mutual_nn(benchmark::State& state) {
    int G = static_cast<int>(state.range(0));
    GridDescriptors g1 = random_grid(G, 16, 10);
    GridDescriptors g2 = random_grid(G, 16, 11);
    for (auto _ : state) {
        CorrespondenceSet s = mutual_nn_matches_blocked(g1, g2, 64);
        benchmark::DoNotOptimize(s.matches.data());
    }
}
BENCHMARK(bm_mutual_nn)->Arg(32)->Arg(64)->Arg(128);

void bm_texture(benchmark::State& state) {
    int S = static_cast<int>(state.range(0));
    std::uint64_t seed = 0;
    for (auto _ : state) {
        Tensor t = generate_texture(seed++, S);
        benchmark::DoNotOptimize(t.data.data());
    }
}
BENCHMARK(bm_texture)->Arg(64)->Arg(128);

void bm_homography_pair(benchmark::State& state) {
    HomographyPairSpec spec;
    std::uint64_t seed = 0;
    for (auto _ : state) {
        HomographyPair p = generate_homography_pair(spec, seed++);
        benchmark::DoNotOptimize(p.image2.data.data());
    }
}
BENCHMARK(bm_homography_pair);

}  // namespace

BENCHMARK_MAIN();
