#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "spdda/autodiff.hpp"
#include "spdda/rng.hpp"
#include "spdda/tensor.hpp"

namespace spdda::nn {

using ag::Tape;
using ag::Var;

// Named handle to a parameter tensor owned by a layer. Collected lists drive
// the optimizer and the checkpoint writer, so collection order must be
// deterministic.
struct ParamRef {
    std::string name;
    Tensor* tensor;
};
using ParamRefs = std::vector<ParamRef>;

// Leases parameters onto a tape as differentiable leaves for one step.
class TapeBinding {
public:
    TapeBinding(Tape& tape, const ParamRefs& params, bool requires_grad = true);

    Var var(const Tensor& param) const;
    Tensor grad(const Tensor& param) const;

    Tape& tape() const { return *tape_; }

private:
    Tape* tape_;
    std::unordered_map<const Tensor*, Var> vars_;
};

Tensor uniform_fan_in_init(Shape shape, int64_t fan_in, Rng& rng);

struct Conv2d {
    Tensor w, b;
    int stride = 1;
    int padding = 0;

    Conv2d() = default;
    Conv2d(int64_t out_c, int64_t in_c, int64_t k, int stride, int padding, Rng& rng);

    Var forward(const TapeBinding& bind, const Var& x) const;
    void collect(const std::string& prefix, ParamRefs& out);
    void set_identity();  // 1x1 or odd kxk center-tap identity, zero bias
    void set_zero();
};

struct Linear {
    Tensor w, b;  // w is [in, out]

    Linear() = default;
    Linear(int64_t in_f, int64_t out_f, Rng& rng);

    Var forward(const TapeBinding& bind, const Var& x) const;
    void collect(const std::string& prefix, ParamRefs& out);
};

struct LayerNorm {
    Tensor gain, bias;
    int axis = 1;

    LayerNorm() = default;
    LayerNorm(int64_t width, int axis);

    Var forward(const TapeBinding& bind, const Var& x) const;
    void collect(const std::string& prefix, ParamRefs& out);
};

// y = x + conv2(relu(conv1(x))), both convs 3x3 shape-preserving
struct ResBlock {
    Conv2d conv1, conv2;

    ResBlock() = default;
    ResBlock(int64_t channels, Rng& rng);

    Var forward(const TapeBinding& bind, const Var& x) const;
    void collect(const std::string& prefix, ParamRefs& out);
};

// two pointwise convs with expansion factor 2 and a ReLU between
struct FeedForward {
    Conv2d expand, project;

    FeedForward() = default;
    FeedForward(int64_t channels, Rng& rng);

    Var forward(const TapeBinding& bind, const Var& x) const;
    void collect(const std::string& prefix, ParamRefs& out);
};

// Channel-wise self-attention over layer-normed features. Tokens are the
// per-channel maps flattened to length H*W; the attention matrix is CxC.
struct ChannelAttention {
    LayerNorm norm;
    Conv2d q_point, q_depth;  // "convolution group": 1x1 then 3x3
    Conv2d k_point, k_depth;
    Conv2d v_point, v_depth;
    Conv2d out_proj;
    FeedForward ff;

    ChannelAttention() = default;
    ChannelAttention(int64_t channels, Rng& rng);

    struct Result {
        Var out;        // [B,C,H,W]
        Var attention;  // [B,C,C], rows sum to 1
    };
    Result forward(const TapeBinding& bind, const Var& x) const;
    void collect(const std::string& prefix, ParamRefs& out);
};

}  // namespace spdda::nn
