#include "spdda/nn.hpp"

#include <cmath>

#include "spdda/errors.hpp"

namespace spdda::nn {

TapeBinding::TapeBinding(Tape& tape, const ParamRefs& params, bool requires_grad) : tape_(&tape) {
    for (const ParamRef& p : params) vars_.emplace(p.tensor, tape.input(*p.tensor, requires_grad));
}

Var TapeBinding::var(const Tensor& param) const {
    auto it = vars_.find(&param);
    if (it == vars_.end()) throw shape_error("TapeBinding: parameter not leased onto this tape");
    return it->second;
}

Tensor TapeBinding::grad(const Tensor& param) const { return tape_->grad_tensor(var(param)); }

Tensor uniform_fan_in_init(Shape shape, int64_t fan_in, Rng& rng) {
    Tensor t(std::move(shape));
    double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (double& v : t.data) v = rng.uniform(-bound, bound);
    return t;
}

Conv2d::Conv2d(int64_t out_c, int64_t in_c, int64_t k, int stride, int padding, Rng& rng)
    : stride(stride), padding(padding) {
    int64_t fan_in = in_c * k * k;
    w = uniform_fan_in_init({out_c, in_c, k, k}, fan_in, rng);
    b = uniform_fan_in_init({out_c}, fan_in, rng);
}

Var Conv2d::forward(const TapeBinding& bind, const Var& x) const {
    return ag::bias_add(ag::conv2d(x, bind.var(w), stride, padding), bind.var(b));
}

void Conv2d::collect(const std::string& prefix, ParamRefs& out) {
    out.push_back({prefix + ".w", &w});
    out.push_back({prefix + ".b", &b});
}

void Conv2d::set_identity() {
    std::fill(w.data.begin(), w.data.end(), 0.0);
    std::fill(b.data.begin(), b.data.end(), 0.0);
    int64_t O = w.shape[0], C = w.shape[1], kh = w.shape[2], kw = w.shape[3];
    if (O != C) throw shape_error("Conv2d::set_identity: needs matching channel counts");
    for (int64_t c = 0; c < C; ++c)
        w.data[static_cast<size_t>(((c * C + c) * kh + kh / 2) * kw + kw / 2)] = 1.0;
}

void Conv2d::set_zero() {
    std::fill(w.data.begin(), w.data.end(), 0.0);
    std::fill(b.data.begin(), b.data.end(), 0.0);
}

Linear::Linear(int64_t in_f, int64_t out_f, Rng& rng) {
    w = uniform_fan_in_init({in_f, out_f}, in_f, rng);
    b = uniform_fan_in_init({out_f}, in_f, rng);
}

Var Linear::forward(const TapeBinding& bind, const Var& x) const {
    return ag::bias_add(ag::matmul(x, bind.var(w)), bind.var(b));
}

void Linear::collect(const std::string& prefix, ParamRefs& out) {
    out.push_back({prefix + ".w", &w});
    out.push_back({prefix + ".b", &b});
}

LayerNorm::LayerNorm(int64_t width, int axis) : axis(axis) {
    gain = Tensor::full({width}, 1.0);
    bias = Tensor::zeros({width});
}

Var LayerNorm::forward(const TapeBinding& bind, const Var& x) const {
    return ag::layer_norm(x, axis, bind.var(gain), bind.var(bias));
}

void LayerNorm::collect(const std::string& prefix, ParamRefs& out) {
    out.push_back({prefix + ".gain", &gain});
    out.push_back({prefix + ".bias", &bias});
}

ResBlock::ResBlock(int64_t channels, Rng& rng)
    : conv1(channels, channels, 3, 1, 1, rng), conv2(channels, channels, 3, 1, 1, rng) {}

Var ResBlock::forward(const TapeBinding& bind, const Var& x) const {
    if (x.shape().size() != 4 || x.shape()[1] != conv1.w.shape[1])
        throw shape_error("ResBlock: expected [B," + std::to_string(conv1.w.shape[1]) +
                          ",H,W], got " + shape_str(x.shape()));
    Var h = ag::relu(conv1.forward(bind, x));
    return ag::add(x, conv2.forward(bind, h));
}

void ResBlock::collect(const std::string& prefix, ParamRefs& out) {
    conv1.collect(prefix + ".conv1", out);
    conv2.collect(prefix + ".conv2", out);
}

FeedForward::FeedForward(int64_t channels, Rng& rng)
    : expand(2 * channels, channels, 1, 1, 0, rng), project(channels, 2 * channels, 1, 1, 0, rng) {}

Var FeedForward::forward(const TapeBinding& bind, const Var& x) const {
    return project.forward(bind, ag::relu(expand.forward(bind, x)));
}

void FeedForward::collect(const std::string& prefix, ParamRefs& out) {
    expand.collect(prefix + ".expand", out);
    project.collect(prefix + ".project", out);
}

ChannelAttention::ChannelAttention(int64_t channels, Rng& rng)
    : norm(channels, 1),
      q_point(channels, channels, 1, 1, 0, rng),
      q_depth(channels, channels, 3, 1, 1, rng),
      k_point(channels, channels, 1, 1, 0, rng),
      k_depth(channels, channels, 3, 1, 1, rng),
      v_point(channels, channels, 1, 1, 0, rng),
      v_depth(channels, channels, 3, 1, 1, rng),
      out_proj(channels, channels, 1, 1, 0, rng),
      ff(channels, rng) {}

ChannelAttention::Result ChannelAttention::forward(const TapeBinding& bind, const Var& x) const {
    const Shape& s = x.shape();
    int64_t B = s[0], C = s[1], H = s[2], W = s[3];
    Var n = norm.forward(bind, x);
    Var q = q_depth.forward(bind, q_point.forward(bind, n));
    Var k = k_depth.forward(bind, k_point.forward(bind, n));
    Var v = v_depth.forward(bind, v_point.forward(bind, n));
    Var qt = ag::reshape(q, {B, C, H * W});
    Var kt = ag::reshape(k, {B, C, H * W});
    Var vt = ag::reshape(v, {B, C, H * W});
    double att_scale = 1.0 / std::sqrt(static_cast<double>(H * W));
    Var a = ag::softmax(ag::scale(ag::bmm(qt, ag::transpose(kt)), att_scale), 2);
    Var o = ag::reshape(ag::bmm(a, vt), {B, C, H, W});
    Var h = ag::add(x, out_proj.forward(bind, o));
    Var out = ag::add(h, ff.forward(bind, h));
    return {out, a};
}

void ChannelAttention::collect(const std::string& prefix, ParamRefs& out) {
    norm.collect(prefix + ".norm", out);
    q_point.collect(prefix + ".q_point", out);
    q_depth.collect(prefix + ".q_depth", out);
    k_point.collect(prefix + ".k_point", out);
    k_depth.collect(prefix + ".k_depth", out);
    v_point.collect(prefix + ".v_point", out);
    v_depth.collect(prefix + ".v_depth", out);
    out_proj.collect(prefix + ".out_proj", out);
    ff.collect(prefix + ".ff", out);
}

}  // namespace spdda::nn
