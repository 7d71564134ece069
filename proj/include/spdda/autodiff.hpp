#pragma once

#include <deque>
#include <functional>
#include <vector>

#include "spdda/tensor.hpp"

namespace spdda::ag {

using spdda::Shape;
using spdda::Tensor;

class Tape;

// Lightweight handle to a node on a tape. Copy freely; the tape owns storage.
class Var {
public:
    Var() = default;
    Var(Tape* tape, int id) : tape_(tape), id_(id) {}

    bool valid() const { return tape_ != nullptr; }
    Tape* tape() const { return tape_; }
    int id() const { return id_; }

    const Shape& shape() const;
    const std::vector<double>& value() const;
    double scalar() const;
    const std::vector<double>& grad() const;
    bool requires_grad() const;

private:
    Tape* tape_ = nullptr;
    int id_ = -1;
};

// Reverse-mode tape. Operations append nodes in topological order; backward
// replays the recorded closures in reverse. One tape per training step,
// single-threaded; parameters live outside and are leased in as leaf nodes.
class Tape {
public:
    struct Node {
        Shape shape;
        std::vector<double> value;
        std::vector<double> grad;  // allocated lazily on first backward
        bool requires_grad = false;
    };

    Var input(Tensor t, bool requires_grad = false);
    Var constant(Tensor t) { return input(std::move(t), false); }
    Var scalar_input(double v, bool requires_grad = false) {
        return input(Tensor::scalar(v), requires_grad);
    }

    // Accumulates gradients of `root` (must be scalar) into every reachable
    // node that requires grad. Repeated calls accumulate; zero_grad resets.
    void backward(const Var& root);
    void zero_grad();

    Tensor value_tensor(const Var& v) const;
    Tensor grad_tensor(const Var& v) const;

    size_t num_nodes() const { return nodes_.size(); }
    size_t num_ops() const { return ops_.size(); }

    // op-implementation interface
    Node& node(int id) { return nodes_[static_cast<size_t>(id)]; }
    const Node& node(int id) const { return nodes_[static_cast<size_t>(id)]; }
    Var make_node(Shape shape, bool requires_grad);
    void record(std::function<void()> backward_fn) { ops_.push_back(std::move(backward_fn)); }
    std::vector<double>& grad_buf(int id);

private:
    std::deque<Node> nodes_;
    std::vector<std::function<void()>> ops_;
};

// ---- elementwise suite ----
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var add_scalar(const Var& a, double s);
Var scale(const Var& a, double s);
Var neg(const Var& a);
Var relu(const Var& a);
Var exp(const Var& a);
Var log(const Var& a);
Var tanh(const Var& a);
Var sqrt(const Var& a);
Var abs(const Var& a);
Var clamp01(const Var& a);

// ---- linear algebra ----
Var matmul(const Var& a, const Var& b);              // [m,k] x [k,n]
Var bmm(const Var& a, const Var& b);                 // [B,m,k] x [B,k,n]
Var transpose(const Var& a);                          // swap last two dims, rank 2 or 3
Var reshape(const Var& a, Shape new_shape);

// ---- reductions ----
Var sum_all(const Var& a);
Var mean_all(const Var& a);
Var row_sum(const Var& a);                            // [R,C] -> [R]
Var concat_rows(const std::vector<Var>& parts);       // stack rank-2 blocks by rows

// ---- neural-net ops ----
Var softmax(const Var& a, int axis);
Var layer_norm(const Var& x, int axis, const Var& gain, const Var& bias, double eps = 1e-5);
Var conv2d(const Var& x, const Var& w, int stride, int padding);  // [B,C,H,W] x [O,C,kh,kw]
Var bias_add(const Var& x, const Var& b);             // rank-2 + [N] or rank-4 + [C]

enum class PoolKind { avg, max };
Var pool2d(const Var& x, PoolKind kind, int64_t region_h, int64_t region_w);

Var pad_replicate2d(const Var& x, int64_t pad_h, int64_t pad_w);
Var gather_channels(const Var& x, std::vector<int64_t> indices);   // rank-4, axis 1
Var spectral_resample(const Var& x, int64_t c_ref);   // [B,K,H,W] -> [B,c_ref,H,W]
Var l2_normalize_rows(const Var& x, double eps = 1e-12);
Var cross_entropy(const Var& logits, const std::vector<int>& labels);

}  // namespace spdda::ag
