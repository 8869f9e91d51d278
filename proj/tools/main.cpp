#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>

#include "coam/config.hpp"
#include "coam/image_io.hpp"
#include "coam/matcher.hpp"
#include "coam/synthdata.hpp"

namespace fs = std::filesystem;
using namespace coam;

namespace {

std::string pair_name(int id) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "pair_%04d", id);
    return buf;
}

std::uint64_t pair_seed(std::uint64_t base, int id) {
    return base * 0x9e3779b97f4a7c15ull + static_cast<std::uint64_t>(id) + 1;
}

CorrespondenceField field_from_homography(const Homography& h, int size) {
    CorrespondenceField f;
    f.width = f.height = size;
    f.target_x.resize(static_cast<std::size_t>(size) * size);
    f.target_y.resize(f.target_x.size());
    f.valid.resize(f.target_x.size());
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            Vec2 p = homography_apply(h, {static_cast<double>(x), static_cast<double>(y)});
            std::size_t i = static_cast<std::size_t>(y) * size + x;
            f.target_x[i] = p.x;
            f.target_y[i] = p.y;
            f.valid[i] = p.x >= 0 && p.x <= size - 1 && p.y >= 0 && p.y <= size - 1;
        }
    return f;
}

struct GenDataArgs {
    std::string kind = "homography";
    int count = 10;
    std::uint64_t seed = 0;
    std::string out = "data";
    int image_size = 64;
    WarpRanges warp;
    PhotometricRanges photometric;
    int points = 100;
    double pixel_noise = 0.0;
    double outlier_fraction = 0.0;
};

int cmd_gen_data(const GenDataArgs& a) {
    fs::create_directories(a.out);
    std::ofstream manifest(a.out + "/manifest.txt");
    if (!manifest) throw std::runtime_error("gen-data: cannot write " + a.out + "/manifest.txt");
    for (int id = 0; id < a.count; ++id) {
        std::uint64_t ps = pair_seed(a.seed, id);
        std::string base = a.out + "/" + pair_name(id);
        std::uint64_t spec_hash;
        if (a.kind == "homography") {
            HomographyPairSpec spec;
            spec.image_size = a.image_size;
            spec.warp = a.warp;
            spec.photometric = a.photometric;
            spec_hash = spec.hash();
            HomographyPair pair = generate_homography_pair(spec, ps);
            save_png(base + "_1.png", pair.image1);
            save_png(base + "_2.png", pair.image2);
            save_homography(base + "_H.txt", pair.h);
        } else if (a.kind == "twoview") {
            TwoViewSceneSpec spec;
            spec.point_count = a.points;
            spec.image_size = a.image_size;
            spec.pixel_noise_sigma = a.pixel_noise;
            spec.outlier_fraction = a.outlier_fraction;
            spec_hash = spec.hash();
            TwoViewScene scene = generate_two_view_scene(spec, ps);
            CorrespondenceSet set;
            for (const auto& [p1, p2] : scene.correspondences)
                set.matches.push_back({p1.x, p1.y, p2.x, p2.y, 1.0});
            save_matches(base + "_matches.txt", set, 0, a.points);
            save_pose(base + "_pose.txt", scene.intrinsics, scene.pose);
        } else {
            throw std::runtime_error("gen-data: unknown kind " + a.kind);
        }
        manifest << pair_name(id) << " " << ps << " " << spec_hash << "\n";
    }
    std::cout << "wrote " << a.count << " " << a.kind << " pairs to " << a.out << "\n";
    return 0;
}

struct DatasetEntry {
    std::string id;
    std::uint64_t seed = 0;
};

std::vector<DatasetEntry> read_manifest(const std::string& dir) {
    std::ifstream is(dir + "/manifest.txt");
    if (!is) throw std::runtime_error("cannot open " + dir + "/manifest.txt");
    std::vector<DatasetEntry> out;
    std::string id, seed, hash;
    while (is >> id >> seed >> hash) out.push_back({id, std::stoull(seed)});
    return out;
}

TrainPair load_train_pair(const std::string& dir, const std::string& id, int expect_size) {
    TrainPair p;
    p.image1 = load_png(dir + "/" + id + "_1.png");
    p.image2 = load_png(dir + "/" + id + "_2.png");
    if (p.image1.shape[1] != expect_size || p.image2.shape[1] != expect_size)
        throw std::runtime_error("train: dataset image size " + std::to_string(p.image1.shape[1]) +
                                 " does not match configured image_size " +
                                 std::to_string(expect_size));
    Homography h = load_homography(dir + "/" + id + "_H.txt");
    p.field = field_from_homography(h, expect_size);
    return p;
}

struct TrainArgs {
    std::string config;
    std::string data = "data";
    int steps = 100;
    std::string out = "out";
    std::uint64_t seed = 0;
    bool seed_set = false;
    std::vector<std::string> overrides;
};

void apply_overrides(RunConfig& cfg, const std::vector<std::string>& kvs) {
    for (const std::string& kv : kvs) {
        auto eq = kv.find('=');
        if (eq == std::string::npos)
            throw std::runtime_error("--set expects key=value, got " + kv);
        cfg.apply_entry(kv.substr(0, eq), kv.substr(eq + 1));
    }
}

int cmd_train(const TrainArgs& a) {
    RunConfig cfg;
    cfg.seed = default_seed_from_env();
    if (!a.config.empty()) cfg.apply_file(a.config);
    apply_overrides(cfg, a.overrides);
    if (a.seed_set) cfg.seed = a.seed;
    cfg.network.validate();
    cfg.train.validate();

    auto manifest = read_manifest(a.data);
    if (manifest.empty()) throw std::runtime_error("train: empty dataset at " + a.data);
    std::vector<TrainPair> pairs;
    pairs.reserve(manifest.size());
    for (const auto& e : manifest)
        pairs.push_back(load_train_pair(a.data, e.id, cfg.network.image_size));

    fs::create_directories(a.out);
    CoamNet net(cfg.network, cfg.seed);
    AdamState adam;
    std::ofstream log(a.out + "/train_log.txt");
    if (!log) throw std::runtime_error("train: cannot write " + a.out + "/train_log.txt");
    const char* term = cfg.train.loss_kind == LossKind::kHinge ? "L_n" : "L_nce";
    log << "# step L_p " << term << " L_r secs\n";
    std::mt19937_64 batch_rng(cfg.seed ^ 0x5851f42d4c957f2dull);
    for (int step = 1; step <= a.steps; ++step) {
        auto t0 = std::chrono::steady_clock::now();
        std::vector<const TrainPair*> batch;
        for (int b = 0; b < cfg.train.batch_size; ++b)
            batch.push_back(&pairs[batch_rng() % pairs.size()]);
        StepLosses l = train_step(net, batch, cfg.train, adam,
                                  cfg.seed + static_cast<std::uint64_t>(step));
        double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        double main_term = cfg.train.loss_kind == LossKind::kHinge ? l.l_n : l.l_nce;
        char line[160];
        std::snprintf(line, sizeof line, "%d %.6f %.6f %.6f", step, l.l_p, main_term, l.l_r);
        log << line;
        std::snprintf(line, sizeof line, " %.3f\n", secs);
        log << line;
        if (step % 25 == 0 || step == a.steps)
            std::cout << "step " << step << " total " << l.total << "\n";
    }
    std::string ckpt = a.out + "/" + cfg.checkpoint;
    net.save(ckpt);
    cfg.write_file(a.out + "/config_used.conf");
    std::cout << "saved " << ckpt << "\n";
    return 0;
}

struct MatchArgs {
    std::string ckpt;
    std::string config;
    std::string img1, img2;
    int grid = 128;
    int topk = 2000;
    bool refine = false;
    std::string out = "matches.txt";
    bool viz = false;
    std::string query_point;
    std::vector<std::string> overrides;
};

void draw_line(Tensor& img, double x0, double y0, double x1, double y1, const double rgb[3]) {
    int n = static_cast<int>(std::max(std::fabs(x1 - x0), std::fabs(y1 - y0))) + 1;
    int W = img.shape[2], H = img.shape[1];
    for (int i = 0; i <= n; ++i) {
        double t = static_cast<double>(i) / n;
        int x = static_cast<int>(std::lround(x0 + t * (x1 - x0)));
        int y = static_cast<int>(std::lround(y0 + t * (y1 - y0)));
        if (x < 0 || x >= W || y < 0 || y >= H) continue;
        for (int c = 0; c < 3; ++c) img.at3(c, y, x) = rgb[c];
    }
}

void write_overlay(const std::string& path, const Tensor& i1, const Tensor& i2,
                   const CorrespondenceSet& set) {
    int S = i1.shape[1];
    Tensor canvas({3, S, 2 * S});
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < S; ++y)
            for (int x = 0; x < S; ++x) {
                canvas.at3(c, y, x) = i1.at3(c, y, x);
                canvas.at3(c, y, S + x) = i2.at3(c, y, x);
            }
    const double green[3] = {0.1, 0.9, 0.1};
    for (const Match& m : set.matches) draw_line(canvas, m.x1, m.y1, m.x2 + S, m.y2, green);
    save_png(path, canvas);
}

void write_attention(const std::string& path, CoamNet& net, const Tensor& i1, const Tensor& i2,
                     int qx, int qy) {
    FeaturePyramid own = net.encode(Var(i1));
    FeaturePyramid oth = net.encode(Var(i2));
    auto [att, a] = net.coattend(own.f_S, oth.f_S, "S");
    int hs = own.f_S.shape()[1], ws = own.f_S.shape()[2];
    int stride = net.config().image_size / hs;
    int cx = std::clamp(qx / stride, 0, ws - 1), cy = std::clamp(qy / stride, 0, hs - 1);
    int row = cy * ws + cx;
    Tensor heat({1, hs, ws});
    double mx = 0;
    for (int j = 0; j < hs * ws; ++j) mx = std::max(mx, a.value().at2(row, j));
    for (int j = 0; j < hs * ws; ++j)
        heat.data[j] = mx > 0 ? a.value().at2(row, j) / mx : 0.0;
    Tensor up = bilinear_resize(Var(std::move(heat)), i1.shape[1], i1.shape[2]).value();
    Tensor rgb({3, i1.shape[1], i1.shape[2]});
    for (int i = 0; i < i1.shape[1] * i1.shape[2]; ++i)
        for (int c = 0; c < 3; ++c) rgb.data[c * i1.shape[1] * i1.shape[2] + i] = up.data[i];
    save_png(path, rgb);
}

int cmd_match(const MatchArgs& a) {
    RunConfig cfg;
    if (!a.config.empty()) cfg.apply_file(a.config);
    apply_overrides(cfg, a.overrides);
    Tensor i1 = load_png(a.img1);
    Tensor i2 = load_png(a.img2);
    if (i1.shape != i2.shape)
        throw std::runtime_error("match: image sizes differ: " + shape_str(i1.shape) + " vs " +
                                 shape_str(i2.shape));
    cfg.network.image_size = i1.shape[1];
    CoamNet net(cfg.network, 0);
    net.load(a.ckpt);
    auto maps = net.describe_pair_maps(i1, i2);
    GridDescriptors g1 = grid_sample(maps.d1, maps.r1, a.grid);
    GridDescriptors g2 = grid_sample(maps.d2, maps.r2, a.grid);
    CorrespondenceSet set = mutual_nn_matches_blocked(g1, g2, a.grid);
    set = top_k(set, a.topk);
    if (a.refine) set = refine_matches(maps.d1, maps.d2, set);
    save_matches(a.out, set, a.grid, a.topk);
    std::cout << set.matches.size() << " matches -> " << a.out << "\n";
    if (a.viz) {
        write_overlay(a.out + "_overlay.png", i1, i2, set);
        int qx = i1.shape[2] / 2, qy = i1.shape[1] / 2;
        if (!a.query_point.empty() &&
            std::sscanf(a.query_point.c_str(), "%d,%d", &qx, &qy) != 2)
            throw std::runtime_error("match: --query-point expects x,y");
        write_attention(a.out + "_attention.png", net, i1, i2, qx, qy);
    }
    return 0;
}

struct EvalHomographyArgs {
    std::string matches;
    std::string homography;
    std::string thresholds = "1,2,3,4,5,6,7,8,9,10";
    std::string out;
};

int cmd_eval_homography(const EvalHomographyArgs& a) {
    CorrespondenceSet set = load_matches(a.matches);
    Homography h = load_homography(a.homography);
    std::vector<double> ths;
    std::stringstream ss(a.thresholds);
    std::string item;
    while (std::getline(ss, item, ',')) ths.push_back(std::stod(item));
    HomographyEval e = evaluate_homography_matches(set, h, ths);
    std::ostringstream table;
    table << "# threshold count fraction\n";
    for (std::size_t i = 0; i < ths.size(); ++i) {
        char line[96];
        std::snprintf(line, sizeof line, "%g %d %.6f\n", ths[i], e.counts[i], e.fractions[i]);
        table << line;
    }
    std::cout << table.str();
    if (!a.out.empty()) {
        std::ofstream os(a.out);
        if (!os) throw std::runtime_error("eval-homography: cannot write " + a.out);
        os << table.str();
    }
    return 0;
}

struct EvalPoseArgs {
    std::string matches_dir;
    std::string gt_dir;
    double threshold = 10.0;
    std::uint64_t seed = 0;
    std::string out;
};

int cmd_eval_pose(const EvalPoseArgs& a) {
    std::vector<std::string> ids;
    for (const auto& ent : fs::directory_iterator(a.matches_dir)) {
        std::string name = ent.path().filename().string();
        if (name.starts_with("pair_") && name.ends_with("_matches.txt"))
            ids.push_back(name.substr(0, name.size() - std::string("_matches.txt").size()));
    }
    std::sort(ids.begin(), ids.end());
    if (ids.empty()) throw std::runtime_error("eval-pose: no match files in " + a.matches_dir);
    std::vector<std::string> missing;
    for (const std::string& id : ids)
        if (!fs::exists(a.gt_dir + "/" + id + "_pose.txt")) missing.push_back(id);
    if (!missing.empty()) {
        std::string msg = "eval-pose: missing ground-truth pose for:";
        for (const std::string& id : missing) msg += " " + id;
        throw std::runtime_error(msg);
    }
    std::ostringstream table;
    table << "# pair rot_err_deg trans_err_deg\n";
    std::vector<std::pair<double, double>> errors;
    for (const std::string& id : ids) {
        CorrespondenceSet set = load_matches(a.matches_dir + "/" + id + "_matches.txt");
        auto [k, gt] = load_pose(a.gt_dir + "/" + id + "_pose.txt");
        std::vector<std::pair<Vec2, Vec2>> corrs;
        for (const Match& m : set.matches) corrs.push_back({{m.x1, m.y1}, {m.x2, m.y2}});
        RansacConfig rc;
        rc.rng_seed = a.seed;
        auto norm = pixels_to_normalized(corrs, k);
        EssentialResult res = estimate_essential_ransac(norm, rc);
        RelativePose est = decompose_essential(res.essential, norm);
        auto [rot, trans] = pose_errors(est, gt);
        errors.push_back({rot, trans});
        char line[96];
        std::snprintf(line, sizeof line, "%s %.4f %.4f\n", id.c_str(), rot, trans);
        table << line;
    }
    PoseAccuracy acc = pose_accuracy(errors, a.threshold);
    char line[128];
    std::snprintf(line, sizeof line, "# accuracy at %g deg: %.1f%% / %.1f%% (joint %.1f%%)\n",
                  a.threshold, 100 * acc.rotation, 100 * acc.translation, 100 * acc.joint);
    table << line;
    std::cout << table.str();
    if (!a.out.empty()) {
        std::ofstream os(a.out);
        if (!os) throw std::runtime_error("eval-pose: cannot write " + a.out);
        os << table.str();
    }
    return 0;
}

struct InvarianceArgs {
    std::string ckpt;
    std::string config;
    std::string img1, img2;
    std::string homography;
    int count = 100;
    std::uint64_t seed = 0;
    std::string out;
    std::vector<std::string> overrides;
};

int cmd_invariance(const InvarianceArgs& a) {
    RunConfig cfg;
    if (!a.config.empty()) cfg.apply_file(a.config);
    apply_overrides(cfg, a.overrides);
    Tensor i1 = load_png(a.img1);
    Tensor i2 = load_png(a.img2);
    cfg.network.image_size = i1.shape[1];
    CoamNet net(cfg.network, 0);
    net.load(a.ckpt);
    Homography h = load_homography(a.homography);
    CorrespondenceField field = field_from_homography(h, i1.shape[1]);
    std::vector<std::pair<std::pair<double, double>, std::pair<double, double>>> corrs;
    std::mt19937_64 rng(a.seed);
    int guard = 0;
    while (static_cast<int>(corrs.size()) < a.count) {
        if (++guard > 10000 * a.count)
            throw std::runtime_error("invariance: not enough valid correspondences");
        int x = static_cast<int>(rng() % static_cast<std::uint64_t>(field.width));
        int y = static_cast<int>(rng() % static_cast<std::uint64_t>(field.height));
        if (!field.is_valid(x, y)) continue;
        corrs.push_back({{static_cast<double>(x), static_cast<double>(y)},
                         {field.tx(x, y), field.ty(x, y)}});
    }
    auto maps = net.describe_pair_maps(i1, i2);
    InvarianceStats st = descriptor_invariance(maps.d1, maps.d2, corrs);
    char line[96];
    std::snprintf(line, sizeof line, "mean %.6f stddev %.6f count %d\n", st.mean, st.stddev,
                  st.count);
    std::cout << line;
    if (!a.out.empty()) {
        std::ofstream os(a.out);
        if (!os) throw std::runtime_error("invariance: cannot write " + a.out);
        os << line;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"conditioned correspondence matching toolkit"};
    app.require_subcommand(1);

    GenDataArgs gd;
    gd.seed = default_seed_from_env();
    auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
    gen->add_option("--kind", gd.kind, "homography|twoview");
    gen->add_option("--count", gd.count);
    gen->add_option("--seed", gd.seed);
    gen->add_option("--out", gd.out);
    gen->add_option("--image-size", gd.image_size);
    gen->add_option("--rotation-deg", gd.warp.rotation_deg);
    gen->add_option("--scale", gd.warp.scale);
    gen->add_option("--aniso", gd.warp.anisotropy);
    gen->add_option("--perspective", gd.warp.perspective);
    gen->add_option("--translation", gd.warp.translation_px);
    gen->add_option("--brightness", gd.photometric.brightness);
    gen->add_option("--contrast", gd.photometric.contrast);
    gen->add_option("--tint", gd.photometric.tint);
    gen->add_option("--noise", gd.photometric.noise_sigma);
    gen->add_option("--points", gd.points);
    gen->add_option("--noise-px", gd.pixel_noise);
    gen->add_option("--outlier-fraction", gd.outlier_fraction);

    TrainArgs tr;
    auto* train = app.add_subcommand("train", "train the descriptor network");
    train->add_option("--config", tr.config);
    train->add_option("--data", tr.data);
    train->add_option("--steps", tr.steps);
    train->add_option("--out", tr.out);
    auto* seed_opt = train->add_option("--seed", tr.seed);
    train->add_option("--set", tr.overrides, "config override key=value")->take_all();

    MatchArgs ma;
    auto* match = app.add_subcommand("match", "match an image pair");
    match->add_option("--ckpt", ma.ckpt)->required();
    match->add_option("--config", ma.config);
    match->add_option("--img1", ma.img1)->required();
    match->add_option("--img2", ma.img2)->required();
    match->add_option("--grid", ma.grid);
    match->add_option("--topk", ma.topk);
    match->add_flag("--refine", ma.refine);
    match->add_option("--out", ma.out);
    match->add_flag("--viz", ma.viz);
    match->add_option("--query-point", ma.query_point, "x,y for the attention heatmap");
    match->add_option("--set", ma.overrides)->take_all();

    EvalHomographyArgs eh;
    auto* evalh = app.add_subcommand("eval-homography", "correct-match counts per threshold");
    evalh->add_option("--matches", eh.matches)->required();
    evalh->add_option("--H", eh.homography)->required();
    evalh->add_option("--thresholds", eh.thresholds);
    evalh->add_option("--out", eh.out);

    EvalPoseArgs ep;
    ep.seed = default_seed_from_env();
    auto* evalp = app.add_subcommand("eval-pose", "two-view pose accuracy");
    evalp->add_option("--matches-dir", ep.matches_dir)->required();
    evalp->add_option("--gt-dir", ep.gt_dir)->required();
    evalp->add_option("--threshold", ep.threshold);
    evalp->add_option("--seed", ep.seed);
    evalp->add_option("--out", ep.out);

    InvarianceArgs iv;
    iv.seed = default_seed_from_env();
    auto* inv = app.add_subcommand("invariance", "descriptor invariance statistics");
    inv->add_option("--ckpt", iv.ckpt)->required();
    inv->add_option("--config", iv.config);
    inv->add_option("--img1", iv.img1)->required();
    inv->add_option("--img2", iv.img2)->required();
    inv->add_option("--H", iv.homography)->required();
    inv->add_option("--count", iv.count);
    inv->add_option("--seed", iv.seed);
    inv->add_option("--out", iv.out);
    inv->add_option("--set", iv.overrides)->take_all();

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) return cmd_gen_data(gd);
        if (train->parsed()) {
            tr.seed_set = seed_opt->count() > 0;
            return cmd_train(tr);
        }
        if (match->parsed()) return cmd_match(ma);
        if (evalh->parsed()) return cmd_eval_homography(eh);
        if (evalp->parsed()) return cmd_eval_pose(ep);
        if (inv->parsed()) return cmd_invariance(iv);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
