#include "spdda/autodiff.hpp"

#include <cmath>
#include <cstring>
#include <sstream>

#include "spdda/errors.hpp"

namespace spdda {

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (!same_shape(a.shape, b.shape))
        throw shape_error(std::string(op) + ": shape mismatch " + shape_str(a.shape) + " vs " +
                          shape_str(b.shape));
}

}  // namespace spdda

namespace spdda::ag {

const Shape& Var::shape() const { return tape_->node(id_).shape; }
const std::vector<double>& Var::value() const { return tape_->node(id_).value; }
const std::vector<double>& Var::grad() const { return tape_->node(id_).grad; }
bool Var::requires_grad() const { return tape_->node(id_).requires_grad; }

double Var::scalar() const {
    const auto& v = value();
    if (v.size() != 1)
        throw shape_error("Var::scalar: node holds " + std::to_string(v.size()) + " values");
    return v[0];
}

Var Tape::input(Tensor t, bool requires_grad) {
    Node n;
    n.shape = std::move(t.shape);
    n.value = std::move(t.data);
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::make_node(Shape shape, bool requires_grad) {
    Node n;
    n.value.assign(static_cast<size_t>(numel(shape)), 0.0);
    n.shape = std::move(shape);
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return Var(this, static_cast<int>(nodes_.size()) - 1);
}

std::vector<double>& Tape::grad_buf(int id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (n.grad.size() != n.value.size()) n.grad.assign(n.value.size(), 0.0);
    return n.grad;
}

void Tape::backward(const Var& root) {
    if (root.tape() != this) throw shape_error("backward: root lives on another tape");
    const Node& r = node(root.id());
    if (numel(r.shape) != 1)
        throw shape_error("backward: root must be scalar, got shape " + shape_str(r.shape));
    grad_buf(root.id())[0] += 1.0;
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
}

void Tape::zero_grad() {
    for (auto& n : nodes_) std::fill(n.grad.begin(), n.grad.end(), 0.0);
}

Tensor Tape::value_tensor(const Var& v) const {
    const Node& n = node(v.id());
    return Tensor(n.shape, n.value);
}

Tensor Tape::grad_tensor(const Var& v) const {
    const Node& n = node(v.id());
    if (n.grad.size() != n.value.size()) return Tensor(n.shape);
    return Tensor(n.shape, n.grad);
}

namespace {

Tape& tape_of(const Var& a, const char* op) {
    if (!a.valid()) throw shape_error(std::string(op) + ": invalid Var");
    return *a.tape();
}

void require_same_tape(const Var& a, const Var& b, const char* op) {
    if (a.tape() != b.tape()) throw shape_error(std::string(op) + ": operands on different tapes");
}

void require_shape_eq(const Var& a, const Var& b, const char* op) {
    if (a.shape() != b.shape())
        throw shape_error(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                          shape_str(b.shape()));
}

// generic binary elementwise: fwd(a,b) with backward multipliers computed
// from captured values
template <class Fwd, class Bwd>
Var binary_ew(const Var& a, const Var& b, const char* name, Fwd fwd, Bwd bwd) {
    Tape& t = tape_of(a, name);
    require_same_tape(a, b, name);
    require_shape_eq(a, b, name);
    bool rg = a.requires_grad() || b.requires_grad();
    Var out = t.make_node(a.shape(), rg);
    auto& ov = t.node(out.id()).value;
    const auto& av = t.node(a.id()).value;
    const auto& bv = t.node(b.id()).value;
    for (size_t i = 0; i < ov.size(); ++i) ov[i] = fwd(av[i], bv[i]);
    if (rg) {
        int aid = a.id(), bid = b.id(), oid = out.id();
        t.record([&t, aid, bid, oid, bwd]() {
            const auto& g = t.grad_buf(oid);
            const auto& av = t.node(aid).value;
            const auto& bv = t.node(bid).value;
            bool need_a = t.node(aid).requires_grad;
            bool need_b = t.node(bid).requires_grad;
            auto* ga = need_a ? &t.grad_buf(aid) : nullptr;
            auto* gb = need_b ? &t.grad_buf(bid) : nullptr;
            for (size_t i = 0; i < g.size(); ++i) {
                auto [da, db] = bwd(av[i], bv[i]);
                if (ga) (*ga)[i] += g[i] * da;
                if (gb) (*gb)[i] += g[i] * db;
            }
        });
    }
    return out;
}

template <class Fwd, class Bwd>
Var unary_ew(const Var& a, const char* name, Fwd fwd, Bwd bwd) {
    Tape& t = tape_of(a, name);
    bool rg = a.requires_grad();
    Var out = t.make_node(a.shape(), rg);
    auto& ov = t.node(out.id()).value;
    const auto& av = t.node(a.id()).value;
    for (size_t i = 0; i < ov.size(); ++i) ov[i] = fwd(av[i]);
    if (rg) {
        int aid = a.id(), oid = out.id();
        t.record([&t, aid, oid, bwd]() {
            const auto& g = t.grad_buf(oid);
            const auto& av = t.node(aid).value;
            const auto& ov = t.node(oid).value;
            auto& ga = t.grad_buf(aid);
            for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bwd(av[i], ov[i]);
        });
    }
    return out;
}

}  // namespace

Var add(const Var& a, const Var& b) {
    return binary_ew(a, b, "add", [](double x, double y) { return x + y; },
                     [](double, double) { return std::pair<double, double>{1.0, 1.0}; });
}

Var sub(const Var& a, const Var& b) {
    return binary_ew(a, b, "sub", [](double x, double y) { return x - y; },
                     [](double, double) { return std::pair<double, double>{1.0, -1.0}; });
}

Var mul(const Var& a, const Var& b) {
    return binary_ew(a, b, "mul", [](double x, double y) { return x * y; },
                     [](double x, double y) { return std::pair<double, double>{y, x}; });
}

Var div(const Var& a, const Var& b) {
    return binary_ew(a, b, "div", [](double x, double y) { return x / y; },
                     [](double x, double y) {
                         return std::pair<double, double>{1.0 / y, -x / (y * y)};
                     });
}

Var add_scalar(const Var& a, double s) {
    return unary_ew(a, "add_scalar", [s](double x) { return x + s; },
                    [](double, double) { return 1.0; });
}

Var scale(const Var& a, double s) {
    return unary_ew(a, "scale", [s](double x) { return x * s; },
                    [s](double, double) { return s; });
}

Var neg(const Var& a) { return scale(a, -1.0); }

Var relu(const Var& a) {
    return unary_ew(a, "relu", [](double x) { return x > 0.0 ? x : 0.0; },
                    [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var exp(const Var& a) {
    return unary_ew(a, "exp", [](double x) { return std::exp(x); },
                    [](double, double y) { return y; });
}

Var log(const Var& a) {
    const auto& av = a.value();
    for (double v : av)
        if (!(v > 0.0)) throw numeric_error("log: non-positive input " + std::to_string(v));
    return unary_ew(a, "log", [](double x) { return std::log(x); },
                    [](double x, double) { return 1.0 / x; });
}

Var tanh(const Var& a) {
    return unary_ew(a, "tanh", [](double x) { return std::tanh(x); },
                    [](double, double y) { return 1.0 - y * y; });
}

Var sqrt(const Var& a) {
    const auto& av = a.value();
    for (double v : av)
        if (v < 0.0) throw numeric_error("sqrt: negative input " + std::to_string(v));
    return unary_ew(a, "sqrt", [](double x) { return std::sqrt(x); },
                    [](double, double y) { return 0.5 / y; });
}

Var abs(const Var& a) {
    return unary_ew(a, "abs", [](double x) { return std::fabs(x); },
                    [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Var clamp01(const Var& a) {
    return unary_ew(a, "clamp01", [](double x) { return x < 0.0 ? 0.0 : (x > 1.0 ? 1.0 : x); },
                    [](double x, double) { return (x >= 0.0 && x <= 1.0) ? 1.0 : 0.0; });
}

Var matmul(const Var& a, const Var& b) {
    Tape& t = tape_of(a, "matmul");
    require_same_tape(a, b, "matmul");
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    if (sa.size() != 2 || sb.size() != 2 || sa[1] != sb[0])
        throw shape_error("matmul: incompatible shapes " + shape_str(sa) + " vs " + shape_str(sb));
    int64_t m = sa[0], k = sa[1], n = sb[1];
    bool rg = a.requires_grad() || b.requires_grad();
    Var out = t.make_node({m, n}, rg);
    {
        const double* A = t.node(a.id()).value.data();
        const double* B = t.node(b.id()).value.data();
        double* O = t.node(out.id()).value.data();
        for (int64_t i = 0; i < m; ++i)
            for (int64_t p = 0; p < k; ++p) {
                double av = A[i * k + p];
                const double* Br = B + p * n;
                double* Or = O + i * n;
                for (int64_t j = 0; j < n; ++j) Or[j] += av * Br[j];
            }
    }
    if (rg) {
        int aid = a.id(), bid = b.id(), oid = out.id();
        t.record([&t, aid, bid, oid, m, k, n]() {
            const double* G = t.grad_buf(oid).data();
            const double* A = t.node(aid).value.data();
            const double* B = t.node(bid).value.data();
            if (t.node(aid).requires_grad) {
                double* GA = t.grad_buf(aid).data();
                // dA = G * B^T
                for (int64_t i = 0; i < m; ++i)
                    for (int64_t j = 0; j < n; ++j) {
                        double g = G[i * n + j];
                        const double* Br = B;
                        for (int64_t p = 0; p < k; ++p) GA[i * k + p] += g * Br[p * n + j];
                    }
            }
            if (t.node(bid).requires_grad) {
                double* GB = t.grad_buf(bid).data();
                // dB = A^T * G
                for (int64_t i = 0; i < m; ++i)
                    for (int64_t p = 0; p < k; ++p) {
                        double av = A[i * k + p];
                        const double* Gr = G + i * n;
                        double* GBr = GB + p * n;
                        for (int64_t j = 0; j < n; ++j) GBr[j] += av * Gr[j];
                    }
            }
        });
    }
    return out;
}

Var bmm(const Var& a, const Var& b) {
    Tape& t = tape_of(a, "bmm");
    require_same_tape(a, b, "bmm");
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    if (sa.size() != 3 || sb.size() != 3 || sa[0] != sb[0] || sa[2] != sb[1])
        throw shape_error("bmm: incompatible shapes " + shape_str(sa) + " vs " + shape_str(sb));
    int64_t bs = sa[0], m = sa[1], k = sa[2], n = sb[2];
    bool rg = a.requires_grad() || b.requires_grad();
    Var out = t.make_node({bs, m, n}, rg);
    {
        const double* A = t.node(a.id()).value.data();
        const double* B = t.node(b.id()).value.data();
        double* O = t.node(out.id()).value.data();
        for (int64_t s = 0; s < bs; ++s)
            for (int64_t i = 0; i < m; ++i)
                for (int64_t p = 0; p < k; ++p) {
                    double av = A[(s * m + i) * k + p];
                    const double* Br = B + (s * k + p) * n;
                    double* Or = O + (s * m + i) * n;
                    for (int64_t j = 0; j < n; ++j) Or[j] += av * Br[j];
                }
    }
    if (rg) {
        int aid = a.id(), bid = b.id(), oid = out.id();
        t.record([&t, aid, bid, oid, bs, m, k, n]() {
            const double* G = t.grad_buf(oid).data();
            const double* A = t.node(aid).value.data();
            const double* B = t.node(bid).value.data();
            if (t.node(aid).requires_grad) {
                double* GA = t.grad_buf(aid).data();
                for (int64_t s = 0; s < bs; ++s)
                    for (int64_t i = 0; i < m; ++i)
                        for (int64_t j = 0; j < n; ++j) {
                            double g = G[(s * m + i) * n + j];
                            for (int64_t p = 0; p < k; ++p)
                                GA[(s * m + i) * k + p] += g * B[(s * k + p) * n + j];
                        }
            }
            if (t.node(bid).requires_grad) {
                double* GB = t.grad_buf(bid).data();
                for (int64_t s = 0; s < bs; ++s)
                    for (int64_t i = 0; i < m; ++i)
                        for (int64_t p = 0; p < k; ++p) {
                            double av = A[(s * m + i) * k + p];
                            const double* Gr = G + (s * m + i) * n;
                            double* GBr = GB + (s * k + p) * n;
                            for (int64_t j = 0; j < n; ++j) GBr[j] += av * Gr[j];
                        }
            }
        });
    }
    return out;
}

Var transpose(const Var& a) {
    Tape& t = tape_of(a, "transpose");
    const Shape& s = a.shape();
    if (s.size() != 2 && s.size() != 3)
        throw shape_error("transpose: rank 2 or 3 expected, got " + shape_str(s));
    int64_t bs = s.size() == 3 ? s[0] : 1;
    int64_t r = s[s.size() - 2], c = s[s.size() - 1];
    Shape os = s;
    os[s.size() - 2] = c;
    os[s.size() - 1] = r;
    bool rg = a.requires_grad();
    Var out = t.make_node(os, rg);
    {
        const double* A = t.node(a.id()).value.data();
        double* O = t.node(out.id()).value.data();
        for (int64_t b = 0; b < bs; ++b)
            for (int64_t i = 0; i < r; ++i)
                for (int64_t j = 0; j < c; ++j) O[(b * c + j) * r + i] = A[(b * r + i) * c + j];
    }
    if (rg) {
        int aid = a.id(), oid = out.id();
        t.record([&t, aid, oid, bs, r, c]() {
            const double* G = t.grad_buf(oid).data();
            double* GA = t.grad_buf(aid).data();
            for (int64_t b = 0; b < bs; ++b)
                for (int64_t i = 0; i < r; ++i)
                    for (int64_t j = 0; j < c; ++j) GA[(b * r + i) * c + j] += G[(b * c + j) * r + i];
        });
    }
    return out;
}

Var reshape(const Var& a, Shape new_shape) {
    Tape& t = tape_of(a, "reshape");
    if (numel(new_shape) != numel(a.shape()))
        throw shape_error("reshape: element count mismatch " + shape_str(a.shape()) + " -> " +
                          shape_str(new_shape));
    bool rg = a.requires_grad();
    Var out = t.make_node(std::move(new_shape), rg);
    t.node(out.id()).value = t.node(a.id()).value;
    if (rg) {
        int aid = a.id(), oid = out.id();
        t.record([&t, aid, oid]() {
            const auto& g = t.grad_buf(oid);
            auto& ga = t.grad_buf(aid);
            for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        });
    }
    return out;
}

Var sum_all(const Var& a) {
    Tape& t = tape_of(a, "sum_all");
    bool rg = a.requires_grad();
    Var out = t.make_node(Shape{}, rg);
    double s = 0.0;
    for (double v : t.node(a.id()).value) s += v;
    t.node(out.id()).value[0] = s;
    if (rg) {
        int aid = a.id(), oid = out.id();
        t.record([&t, aid, oid]() {
            double g = t.grad_buf(oid)[0];
            auto& ga = t.grad_buf(aid);
            for (double& v : ga) v += g;
        });
    }
    return out;
}

Var mean_all(const Var& a) {
    int64_t n = numel(a.shape());
    return scale(sum_all(a), 1.0 / static_cast<double>(n));
}

Var row_sum(const Var& a) {
    Tape& t = tape_of(a, "row_sum");
    const Shape& s = a.shape();
    if (s.size() != 2) throw shape_error("row_sum: rank-2 expected, got " + shape_str(s));
    int64_t r = s[0], c = s[1];
    bool rg = a.requires_grad();
    Var out = t.make_node({r}, rg);
    {
        const double* A = t.node(a.id()).value.data();
        double* O = t.node(out.id()).value.data();
        for (int64_t i = 0; i < r; ++i) {
            double acc = 0.0;
            for (int64_t j = 0; j < c; ++j) acc += A[i * c + j];
            O[i] = acc;
        }
    }
    if (rg) {
        int aid = a.id(), oid = out.id();
        t.record([&t, aid, oid, r, c]() {
            const double* G = t.grad_buf(oid).data();
            double* GA = t.grad_buf(aid).data();
            for (int64_t i = 0; i < r; ++i)
                for (int64_t j = 0; j < c; ++j) GA[i * c + j] += G[i];
        });
    }
    return out;
}

Var concat_rows(const std::vector<Var>& parts) {
    if (parts.empty()) throw shape_error("concat_rows: empty input");
    Tape& t = tape_of(parts[0], "concat_rows");
    int64_t cols = parts[0].shape().size() == 2 ? parts[0].shape()[1] : -1;
    int64_t rows = 0;
    bool rg = false;
    for (const Var& p : parts) {
        require_same_tape(parts[0], p, "concat_rows");
        if (p.shape().size() != 2 || p.shape()[1] != cols)
            throw shape_error("concat_rows: column mismatch at " + shape_str(p.shape()));
        rows += p.shape()[0];
        rg = rg || p.requires_grad();
    }
    Var out = t.make_node({rows, cols}, rg);
    {
        double* O = t.node(out.id()).value.data();
        for (const Var& p : parts) {
            const auto& pv = t.node(p.id()).value;
            std::memcpy(O, pv.data(), pv.size() * sizeof(double));
            O += pv.size();
        }
    }
    if (rg) {
        std::vector<int> ids;
        for (const Var& p : parts) ids.push_back(p.id());
        int oid = out.id();
        t.record([&t, ids, oid]() {
            const double* G = t.grad_buf(oid).data();
            for (int id : ids) {
                size_t n = t.node(id).value.size();
                if (t.node(id).requires_grad) {
                    double* GP = t.grad_buf(id).data();
                    for (size_t i = 0; i < n; ++i) GP[i] += G[i];
                }
                G += n;
            }
        });
    }
    return out;
}

}  // namespace spdda::ag
