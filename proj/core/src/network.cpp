#include "coam/network.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

#include "coam/checkpoint.hpp"

namespace coam {

void NetworkConfig::validate() const {
    if (descriptor_dim < 2) throw std::invalid_argument("NetworkConfig: descriptor_dim must be >= 2");
    if (encoder_widths.size() != 4 || decoder_widths.size() != 4)
        throw std::invalid_argument("NetworkConfig: expected 4 encoder and 4 decoder widths");
    if (projection_dims.size() != 2)
        throw std::invalid_argument("NetworkConfig: expected 2 projection dims");
    if (image_size % downsample_total() != 0)
        throw std::invalid_argument("NetworkConfig: image_size not divisible by downsampling factor " +
                                    std::to_string(downsample_total()));
}

Parameter& CoamNet::add_param(const std::string& name, std::vector<int> shape, double init_bound) {
    Tensor t(shape);
    Parameter p{name, Var(std::move(t), true), true};
    auto [it, inserted] = params_.emplace(name, std::move(p));
    if (!inserted) throw std::logic_error("duplicate parameter " + name);
    it->second.var.zero_grad();
    (void)init_bound;
    return it->second;
}

CoamNet::CoamNet(NetworkConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
    cfg_.validate();
    const auto& ew = cfg_.encoder_widths;
    const auto& dw = cfg_.decoder_widths;
    int D = cfg_.descriptor_dim;

    auto conv = [&](const std::string& name, int oc, int ic, int k) {
        add_param(name + ".w", {oc, ic, k, k}, 0);
        add_param(name + ".gamma", {oc}, 0);
        add_param(name + ".beta", {oc}, 0);
    };
    conv("enc1", ew[0], 3, 3);
    conv("enc2", ew[1], ew[0], 3);
    conv("enc3", ew[2], ew[1], 3);
    conv("enc4", ew[3], ew[2], 3);

    // Independent projections per scale and per direction (query vs key).
    add_param("coamS.q.w", {cfg_.projection_dims[0], ew[3], 1, 1}, 0);
    add_param("coamS.k.w", {cfg_.projection_dims[0], ew[3], 1, 1}, 0);
    add_param("coamL.q.w", {cfg_.projection_dims[1], ew[2], 1, 1}, 0);
    add_param("coamL.k.w", {cfg_.projection_dims[1], ew[2], 1, 1}, 0);

    conv("dec4", dw[0], 2 * ew[3], 3);
    conv("dec3", dw[1], dw[0] + 2 * ew[2], 3);
    conv("dec2", dw[2], dw[1] + ew[1], 3);
    conv("dec1", dw[3], dw[2] + ew[0], 3);
    add_param("out.w", {D, dw[3], 3, 3}, 0);
    add_param("out.b", {D}, 0);

    add_param("dist.l1.w", {1, D}, 0);
    add_param("dist.l1.gamma", {1}, 0);
    add_param("dist.l1.beta", {1}, 0);
    add_param("dist.l2.w", {1, 1}, 0);
    add_param("dist.l2.gamma", {1}, 0);
    add_param("dist.l2.beta", {1}, 0);
    add_param("dist.l3.w", {1, 1}, 0);
    add_param("dist.l3.gamma", {1}, 0);
    add_param("dist.l3.beta", {1}, 0);

    // Uniform [-1/sqrt(fan_in), 1/sqrt(fan_in)] for weights; gamma=1, beta=0.
    std::mt19937_64 rng(seed);
    for (auto& [name, p] : params_) {
        Tensor& t = p.mutable_value();
        if (name.ends_with(".gamma")) {
            t.fill(1.0);
        } else if (name.ends_with(".beta") || name.ends_with(".b")) {
            t.fill(0.0);
        } else {
            const auto& s = t.shape;
            long long fan_in = 1;
            for (std::size_t i = 1; i < s.size(); ++i) fan_in *= s[i];
            double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
            std::uniform_real_distribution<double> dist(-bound, bound);
            for (double& v : t.data) v = dist(rng);
        }
    }
}

Var CoamNet::conv_block(const Var& x, const std::string& name, int stride) {
    Var y = conv2d(x, params_.at(name + ".w").var, nullptr, stride, 1);
    y = instance_norm(y, params_.at(name + ".gamma").var, params_.at(name + ".beta").var);
    return relu(y);
}

FeaturePyramid CoamNet::encode(const Var& image) {
    const auto& s = image.shape();
    if (s.size() != 3 || s[0] != 3 || s[1] != cfg_.image_size || s[2] != cfg_.image_size)
        throw ShapeError("encode",
                         "(3," + std::to_string(cfg_.image_size) + "," +
                             std::to_string(cfg_.image_size) + ")",
                         shape_str(s));
    Var e1 = conv_block(image, "enc1", 2);
    Var e2 = conv_block(e1, "enc2", 2);
    Var e3 = conv_block(e2, "enc3", 2);
    Var e4 = conv_block(e3, "enc4", 2);
    return FeaturePyramid{e3, e4, {e1, e2}};
}

std::pair<Var, Var> CoamNet::coattend(const Var& g_raw, const Var& h_raw, const std::string& scale) {
    if (g_raw.shape()[0] != h_raw.shape()[0])
        throw ShapeError("coattend", shape_str(g_raw.shape()), shape_str(h_raw.shape()));
    const std::string prefix = scale == "S" ? "coamS" : "coamL";
    Var q = conv2d(g_raw, params_.at(prefix + ".q.w").var, nullptr, 1, 0);
    Var k = conv2d(h_raw, params_.at(prefix + ".k.w").var, nullptr, 1, 0);
    int p = q.shape()[0];
    int ng = q.shape()[1] * q.shape()[2];
    int nh = k.shape()[1] * k.shape()[2];
    // (C,H,W) -> (N,C): flatten then transpose via reshape+matmul-free gathers
    // would be costly; reshape to (C,N) and use matmul with transposed roles.
    Var qf = reshape(q, {p, ng});   // (p, ng)
    Var kf = reshape(k, {p, nh});   // (p, nh)
    // scores (ng, nh) = q^T k
    Var scores = matmul(transpose2d(qf), kf);
    Var a = softmax_last(scores);  // rows over h locations
    int ch = h_raw.shape()[0];
    Var hf = reshape(h_raw, {ch, nh});
    Var attended = matmul(a, transpose2d(hf));  // (ng, ch)
    attended = reshape(transpose2d(attended), {ch, g_raw.shape()[1], g_raw.shape()[2]});
    return {attended, a};
}

std::pair<Var, Var> CoamNet::decode(const FeaturePyramid& own, const Var& attended_L,
                                    const Var& attended_S) {
    if (attended_S.shape() != own.f_S.shape())
        throw ShapeError("decode(attended_S)", shape_str(own.f_S.shape()), shape_str(attended_S.shape()));
    if (attended_L.shape() != own.f_L.shape())
        throw ShapeError("decode(attended_L)", shape_str(own.f_L.shape()), shape_str(attended_L.shape()));
    Var d4 = conv_block(concat({own.f_S, attended_S}, 0), "dec4", 1);
    Var u4 = bilinear_resize(d4, own.f_L.shape()[1], own.f_L.shape()[2]);
    Var d3 = conv_block(concat({u4, own.f_L, attended_L}, 0), "dec3", 1);
    const Var& e2 = own.skips[1];
    Var u3 = bilinear_resize(d3, e2.shape()[1], e2.shape()[2]);
    Var d2 = conv_block(concat({u3, e2}, 0), "dec2", 1);
    const Var& e1 = own.skips[0];
    Var u2 = bilinear_resize(d2, e1.shape()[1], e1.shape()[2]);
    Var d1 = conv_block(concat({u2, e1}, 0), "dec1", 1);
    Var u1 = bilinear_resize(d1, cfg_.image_size, cfg_.image_size);
    Var d_unnorm = conv2d(u1, params_.at("out.w").var, &params_.at("out.b").var, 1, 1);
    Var d = l2_normalize_channel(d_unnorm);
    return {d_unnorm, d};
}

Var CoamNet::distinctiveness_rows(const Var& rows) {
    Var h = linear(rows, params_.at("dist.l1.w").var, nullptr);
    h = channel_affine(h, params_.at("dist.l1.gamma").var, params_.at("dist.l1.beta").var);
    h = linear(h, params_.at("dist.l2.w").var, nullptr);
    h = channel_affine(h, params_.at("dist.l2.gamma").var, params_.at("dist.l2.beta").var);
    h = linear(h, params_.at("dist.l3.w").var, nullptr);
    h = channel_affine(h, params_.at("dist.l3.gamma").var, params_.at("dist.l3.beta").var);
    return sigmoid(h);
}

Var CoamNet::distinctiveness(const Var& d_unnorm) {
    const auto& s = d_unnorm.shape();
    int D = s[0], H = s[1], W = s[2];
    // (D,H,W) -> (H*W, D)
    Var rows = transpose2d(reshape(d_unnorm, {D, H * W}));
    Var r = distinctiveness_rows(rows);  // (H*W, 1)
    return reshape(r, {H, W});
}

CoamNet::OneSide CoamNet::describe_one(const Var& self, const Var& other) {
    FeaturePyramid own = encode(self);
    FeaturePyramid oth = encode(other);
    Var attended_S, attended_L;
    if (cfg_.ablate_coam) {
        attended_S = Var(Tensor(own.f_S.shape()));
        attended_L = Var(Tensor(own.f_L.shape()));
    } else {
        attended_S = coattend(own.f_S, oth.f_S, "S").first;
        if (cfg_.attention_scales == AttentionScales::kCoarseFine)
            attended_L = coattend(own.f_L, oth.f_L, "L").first;
        else
            attended_L = Var(Tensor(own.f_L.shape()));
    }
    auto [d_unnorm, d] = decode(own, attended_L, attended_S);
    Var r = distinctiveness(d_unnorm);
    return {d_unnorm, d, r};
}

PairDescription CoamNet::describe_pair(const Var& i1, const Var& i2) {
    OneSide s1 = describe_one(i1, i2);
    OneSide s2 = describe_one(i2, i1);
    return {s1.d_unnorm, s1.d, s1.r, s2.d_unnorm, s2.d, s2.r};
}

CoamNet::PairMaps CoamNet::describe_pair_maps(const Tensor& i1, const Tensor& i2) {
    PairDescription pd = describe_pair(Var(i1), Var(i2));
    PairMaps m;
    m.d1 = {pd.d1.value(), cfg_.image_size};
    m.d2 = {pd.d2.value(), cfg_.image_size};
    m.r1 = {pd.r1.value()};
    m.r2 = {pd.r2.value()};
    return m;
}

std::vector<Parameter*> CoamNet::parameters() {
    std::vector<Parameter*> out;
    for (auto& [_, p] : params_) out.push_back(&p);
    return out;
}

void CoamNet::zero_grads() {
    for (auto& [_, p] : params_) p.zero_grad();
}

std::map<std::string, Tensor> CoamNet::state_dict() const {
    std::map<std::string, Tensor> st;
    for (const auto& [name, p] : params_) st.emplace(name, p.value());
    return st;
}

void CoamNet::load_state_dict(const std::map<std::string, Tensor>& st) {
    for (auto& [name, p] : params_) {
        auto it = st.find(name);
        if (it == st.end()) throw std::runtime_error("state dict missing parameter " + name);
        if (it->second.shape != p.value().shape)
            throw ShapeError("load_state_dict(" + name + ")", shape_str(p.value().shape),
                             shape_str(it->second.shape));
        p.mutable_value() = it->second;
    }
}

void CoamNet::save(const std::string& path) const { save_checkpoint(path, state_dict()); }
void CoamNet::load(const std::string& path) { load_state_dict(load_checkpoint(path)); }

}  // namespace coam
