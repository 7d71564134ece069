#include <algorithm>
#include <cmath>

#include "spdda/autodiff.hpp"
#include "spdda/errors.hpp"

namespace spdda::ag {

namespace {

// decompose an axis reduction into (outer, len, inner) line iteration
struct AxisLines {
    int64_t outer, len, inner;
};

AxisLines lines_for(const Shape& s, int axis, const char* op) {
    if (axis < 0 || axis >= static_cast<int>(s.size()))
        throw shape_error(std::string(op) + ": axis " + std::to_string(axis) +
                          " out of range for " + shape_str(s));
    AxisLines l{1, s[axis], 1};
    for (int i = 0; i < axis; ++i) l.outer *= s[i];
    for (size_t i = axis + 1; i < s.size(); ++i) l.inner *= s[i];
    return l;
}

}  // namespace

Var softmax(const Var& a, int axis) {
    Tape& t = *a.tape();
    AxisLines l = lines_for(a.shape(), axis, "softmax");
    bool rg = a.requires_grad();
    Var out = t.make_node(a.shape(), rg);
    const double* A = t.node(a.id()).value.data();
    double* O = t.node(out.id()).value.data();
    for (int64_t o = 0; o < l.outer; ++o)
        for (int64_t in = 0; in < l.inner; ++in) {
            const int64_t base = o * l.len * l.inner + in;
            double mx = -HUGE_VAL;
            for (int64_t k = 0; k < l.len; ++k) mx = std::max(mx, A[base + k * l.inner]);
            double denom = 0.0;
            for (int64_t k = 0; k < l.len; ++k) {
                double e = std::exp(A[base + k * l.inner] - mx);
                O[base + k * l.inner] = e;
                denom += e;
            }
            for (int64_t k = 0; k < l.len; ++k) O[base + k * l.inner] /= denom;
        }
    if (rg) {
        int aid = a.id(), oid = out.id();
        t.record([&t, aid, oid, l]() {
            const double* G = t.grad_buf(oid).data();
            const double* Y = t.node(oid).value.data();
            double* GA = t.grad_buf(aid).data();
            for (int64_t o = 0; o < l.outer; ++o)
                for (int64_t in = 0; in < l.inner; ++in) {
                    const int64_t base = o * l.len * l.inner + in;
                    double dot = 0.0;
                    for (int64_t k = 0; k < l.len; ++k)
                        dot += G[base + k * l.inner] * Y[base + k * l.inner];
                    for (int64_t k = 0; k < l.len; ++k) {
                        int64_t i = base + k * l.inner;
                        GA[i] += Y[i] * (G[i] - dot);
                    }
                }
        });
    }
    return out;
}

Var layer_norm(const Var& x, int axis, const Var& gain, const Var& bias, double eps) {
    Tape& t = *x.tape();
    AxisLines l = lines_for(x.shape(), axis, "layer_norm");
    if (l.len < 2) throw shape_error("layer_norm: axis size must be >= 2");
    if (gain.shape() != Shape{l.len} || bias.shape() != Shape{l.len})
        throw shape_error("layer_norm: gain/bias must have shape [" + std::to_string(l.len) + "]");
    bool rg = x.requires_grad() || gain.requires_grad() || bias.requires_grad();
    Var out = t.make_node(x.shape(), rg);
    // cache per-line mean and inverse stddev for the backward pass
    auto stats = std::make_shared<std::vector<double>>(2 * l.outer * l.inner);
    const double* X = t.node(x.id()).value.data();
    const double* Gn = t.node(gain.id()).value.data();
    const double* Bi = t.node(bias.id()).value.data();
    double* O = t.node(out.id()).value.data();
    for (int64_t o = 0; o < l.outer; ++o)
        for (int64_t in = 0; in < l.inner; ++in) {
            const int64_t base = o * l.len * l.inner + in;
            double mean = 0.0;
            for (int64_t k = 0; k < l.len; ++k) mean += X[base + k * l.inner];
            mean /= static_cast<double>(l.len);
            double var = 0.0;
            for (int64_t k = 0; k < l.len; ++k) {
                double d = X[base + k * l.inner] - mean;
                var += d * d;
            }
            var /= static_cast<double>(l.len);
            double inv = 1.0 / std::sqrt(var + eps);
            (*stats)[2 * (o * l.inner + in)] = mean;
            (*stats)[2 * (o * l.inner + in) + 1] = inv;
            for (int64_t k = 0; k < l.len; ++k) {
                double xn = (X[base + k * l.inner] - mean) * inv;
                O[base + k * l.inner] = xn * Gn[k] + Bi[k];
            }
        }
    if (rg) {
        int xid = x.id(), gid = gain.id(), bid = bias.id(), oid = out.id();
        t.record([&t, xid, gid, bid, oid, l, stats]() {
            const double* G = t.grad_buf(oid).data();
            const double* X = t.node(xid).value.data();
            const double* Gn = t.node(gid).value.data();
            bool need_x = t.node(xid).requires_grad;
            bool need_g = t.node(gid).requires_grad;
            bool need_b = t.node(bid).requires_grad;
            double* GX = need_x ? t.grad_buf(xid).data() : nullptr;
            double* GG = need_g ? t.grad_buf(gid).data() : nullptr;
            double* GB = need_b ? t.grad_buf(bid).data() : nullptr;
            const double n = static_cast<double>(l.len);
            for (int64_t o = 0; o < l.outer; ++o)
                for (int64_t in = 0; in < l.inner; ++in) {
                    const int64_t base = o * l.len * l.inner + in;
                    double mean = (*stats)[2 * (o * l.inner + in)];
                    double inv = (*stats)[2 * (o * l.inner + in) + 1];
                    double sum_gy = 0.0, sum_gy_xn = 0.0;
                    for (int64_t k = 0; k < l.len; ++k) {
                        int64_t i = base + k * l.inner;
                        double xn = (X[i] - mean) * inv;
                        double gy = G[i] * Gn[k];
                        sum_gy += gy;
                        sum_gy_xn += gy * xn;
                        if (GG) GG[k] += G[i] * xn;
                        if (GB) GB[k] += G[i];
                    }
                    if (GX)
                        for (int64_t k = 0; k < l.len; ++k) {
                            int64_t i = base + k * l.inner;
                            double xn = (X[i] - mean) * inv;
                            double gy = G[i] * Gn[k];
                            GX[i] += inv * (gy - sum_gy / n - xn * sum_gy_xn / n);
                        }
                }
        });
    }
    return out;
}

Var conv2d(const Var& x, const Var& w, int stride, int padding) {
    Tape& t = *x.tape();
    const Shape& sx = x.shape();
    const Shape& sw = w.shape();
    if (sx.size() != 4 || sw.size() != 4)
        throw shape_error("conv2d: expected rank-4 input and kernel, got " + shape_str(sx) +
                          " and " + shape_str(sw));
    if (sx[1] != sw[1])
        throw shape_error("conv2d: channel mismatch " + shape_str(sx) + " vs " + shape_str(sw));
    int64_t B = sx[0], C = sx[1], H = sx[2], W = sx[3];
    int64_t O = sw[0], kh = sw[2], kw = sw[3];
    if (kh % 2 == 0 || kw % 2 == 0) throw shape_error("conv2d: kernel sides must be odd");
    if (stride < 1) throw shape_error("conv2d: stride must be >= 1");
    if (kh > H + 2 * padding || kw > W + 2 * padding)
        throw shape_error("conv2d: kernel " + shape_str(sw) + " larger than padded input " +
                          shape_str(sx) + " with padding " + std::to_string(padding));
    int64_t OH = (H + 2 * padding - kh) / stride + 1;
    int64_t OW = (W + 2 * padding - kw) / stride + 1;
    bool rg = x.requires_grad() || w.requires_grad();
    Var out = t.make_node({B, O, OH, OW}, rg);
    {
        const double* X = t.node(x.id()).value.data();
        const double* Wt = t.node(w.id()).value.data();
        double* Y = t.node(out.id()).value.data();
        for (int64_t b = 0; b < B; ++b)
            for (int64_t o = 0; o < O; ++o) {
                double* yrow = Y + ((b * O + o) * OH) * OW;
                for (int64_t c = 0; c < C; ++c) {
                    const double* xc = X + ((b * C + c) * H) * W;
                    const double* wc = Wt + ((o * C + c) * kh) * kw;
                    for (int64_t ky = 0; ky < kh; ++ky)
                        for (int64_t kx = 0; kx < kw; ++kx) {
                            double wv = wc[ky * kw + kx];
                            if (wv == 0.0) continue;
                            for (int64_t oy = 0; oy < OH; ++oy) {
                                int64_t iy = oy * stride + ky - padding;
                                if (iy < 0 || iy >= H) continue;
                                const double* xr = xc + iy * W;
                                double* yr = yrow + oy * OW;
                                for (int64_t ox = 0; ox < OW; ++ox) {
                                    int64_t ix = ox * stride + kx - padding;
                                    if (ix < 0 || ix >= W) continue;
                                    yr[ox] += wv * xr[ix];
                                }
                            }
                        }
                }
            }
    }
    if (rg) {
        int xid = x.id(), wid = w.id(), oid = out.id();
        t.record([&t, xid, wid, oid, B, C, H, W, O, kh, kw, stride, padding, OH, OW]() {
            const double* G = t.grad_buf(oid).data();
            const double* X = t.node(xid).value.data();
            const double* Wt = t.node(wid).value.data();
            bool need_x = t.node(xid).requires_grad;
            bool need_w = t.node(wid).requires_grad;
            double* GX = need_x ? t.grad_buf(xid).data() : nullptr;
            double* GW = need_w ? t.grad_buf(wid).data() : nullptr;
            for (int64_t b = 0; b < B; ++b)
                for (int64_t o = 0; o < O; ++o) {
                    const double* grow = G + ((b * O + o) * OH) * OW;
                    for (int64_t c = 0; c < C; ++c) {
                        const double* xc = X + ((b * C + c) * H) * W;
                        double* gxc = need_x ? GX + ((b * C + c) * H) * W : nullptr;
                        const double* wc = Wt + ((o * C + c) * kh) * kw;
                        double* gwc = need_w ? GW + ((o * C + c) * kh) * kw : nullptr;
                        for (int64_t ky = 0; ky < kh; ++ky)
                            for (int64_t kx = 0; kx < kw; ++kx) {
                                double wv = wc[ky * kw + kx];
                                double wacc = 0.0;
                                for (int64_t oy = 0; oy < OH; ++oy) {
                                    int64_t iy = oy * stride + ky - padding;
                                    if (iy < 0 || iy >= H) continue;
                                    const double* gr = grow + oy * OW;
                                    const double* xr = xc + iy * W;
                                    double* gxr = need_x ? gxc + iy * W : nullptr;
                                    for (int64_t ox = 0; ox < OW; ++ox) {
                                        int64_t ix = ox * stride + kx - padding;
                                        if (ix < 0 || ix >= W) continue;
                                        double g = gr[ox];
                                        if (gxr) gxr[ix] += wv * g;
                                        wacc += xr[ix] * g;
                                    }
                                }
                                if (gwc) gwc[ky * kw + kx] += wacc;
                            }
                    }
                }
        });
    }
    return out;
}

Var bias_add(const Var& x, const Var& b) {
    Tape& t = *x.tape();
    const Shape& sx = x.shape();
    const Shape& sb = b.shape();
    if (sb.size() != 1) throw shape_error("bias_add: bias must be rank-1, got " + shape_str(sb));
    int64_t C;
    int64_t spatial = 1;
    if (sx.size() == 2) {
        C = sx[1];
    } else if (sx.size() == 4) {
        C = sx[1];
        spatial = sx[2] * sx[3];
    } else {
        throw shape_error("bias_add: rank-2 or rank-4 input expected, got " + shape_str(sx));
    }
    if (sb[0] != C)
        throw shape_error("bias_add: bias length " + shape_str(sb) + " vs channels " +
                          std::to_string(C));
    int64_t Bn = sx[0];
    bool rg = x.requires_grad() || b.requires_grad();
    Var out = t.make_node(sx, rg);
    {
        const double* X = t.node(x.id()).value.data();
        const double* Bv = t.node(b.id()).value.data();
        double* O = t.node(out.id()).value.data();
        for (int64_t n = 0; n < Bn; ++n)
            for (int64_t c = 0; c < C; ++c) {
                double bv = Bv[c];
                const double* xr = X + (n * C + c) * spatial;
                double* orow = O + (n * C + c) * spatial;
                for (int64_t s = 0; s < spatial; ++s) orow[s] = xr[s] + bv;
            }
    }
    if (rg) {
        int xid = x.id(), bid = b.id(), oid = out.id();
        t.record([&t, xid, bid, oid, Bn, C, spatial]() {
            const double* G = t.grad_buf(oid).data();
            if (t.node(xid).requires_grad) {
                double* GX = t.grad_buf(xid).data();
                size_t n = t.node(xid).value.size();
                for (size_t i = 0; i < n; ++i) GX[i] += G[i];
            }
            if (t.node(bid).requires_grad) {
                double* GB = t.grad_buf(bid).data();
                for (int64_t n = 0; n < Bn; ++n)
                    for (int64_t c = 0; c < C; ++c) {
                        const double* gr = G + (n * C + c) * spatial;
                        double acc = 0.0;
                        for (int64_t s = 0; s < spatial; ++s) acc += gr[s];
                        GB[c] += acc;
                    }
            }
        });
    }
    return out;
}

Var pool2d(const Var& x, PoolKind kind, int64_t region_h, int64_t region_w) {
    Tape& t = *x.tape();
    const Shape& s = x.shape();
    if (s.size() != 4) throw shape_error("pool2d: rank-4 input expected, got " + shape_str(s));
    if (region_h < 1 || region_w < 1) throw shape_error("pool2d: region must be positive");
    int64_t B = s[0], C = s[1], H = s[2], W = s[3];
    // non-overlapping windows; the last window is truncated to the input edge
    int64_t OH = (H + region_h - 1) / region_h;
    int64_t OW = (W + region_w - 1) / region_w;
    bool rg = x.requires_grad();
    Var out = t.make_node({B, C, OH, OW}, rg);
    // for max pooling remember the argmax (first index on ties)
    auto argmax = std::make_shared<std::vector<int64_t>>();
    if (kind == PoolKind::max) argmax->assign(static_cast<size_t>(B * C * OH * OW), 0);
    {
        const double* X = t.node(x.id()).value.data();
        double* O = t.node(out.id()).value.data();
        for (int64_t b = 0; b < B; ++b)
            for (int64_t c = 0; c < C; ++c) {
                const double* xc = X + (b * C + c) * H * W;
                for (int64_t oy = 0; oy < OH; ++oy)
                    for (int64_t ox = 0; ox < OW; ++ox) {
                        int64_t y0 = oy * region_h, y1 = std::min(H, y0 + region_h);
                        int64_t x0 = ox * region_w, x1 = std::min(W, x0 + region_w);
                        int64_t oidx = ((b * C + c) * OH + oy) * OW + ox;
                        if (kind == PoolKind::avg) {
                            double acc = 0.0;
                            for (int64_t y = y0; y < y1; ++y)
                                for (int64_t xx = x0; xx < x1; ++xx) acc += xc[y * W + xx];
                            O[oidx] = acc / static_cast<double>((y1 - y0) * (x1 - x0));
                        } else {
                            double best = xc[y0 * W + x0];
                            int64_t bi = y0 * W + x0;
                            for (int64_t y = y0; y < y1; ++y)
                                for (int64_t xx = x0; xx < x1; ++xx)
                                    if (xc[y * W + xx] > best) {
                                        best = xc[y * W + xx];
                                        bi = y * W + xx;
                                    }
                            O[oidx] = best;
                            (*argmax)[static_cast<size_t>(oidx)] = bi;
                        }
                    }
            }
    }
    if (rg) {
        int xid = x.id(), oid = out.id();
        t.record([&t, xid, oid, kind, B, C, H, W, OH, OW, region_h, region_w, argmax]() {
            const double* G = t.grad_buf(oid).data();
            double* GX = t.grad_buf(xid).data();
            for (int64_t b = 0; b < B; ++b)
                for (int64_t c = 0; c < C; ++c) {
                    double* gxc = GX + (b * C + c) * H * W;
                    for (int64_t oy = 0; oy < OH; ++oy)
                        for (int64_t ox = 0; ox < OW; ++ox) {
                            int64_t oidx = ((b * C + c) * OH + oy) * OW + ox;
                            double g = G[oidx];
                            if (kind == PoolKind::avg) {
                                int64_t y0 = oy * region_h, y1 = std::min(H, y0 + region_h);
                                int64_t x0 = ox * region_w, x1 = std::min(W, x0 + region_w);
                                double share = g / static_cast<double>((y1 - y0) * (x1 - x0));
                                for (int64_t y = y0; y < y1; ++y)
                                    for (int64_t xx = x0; xx < x1; ++xx) gxc[y * W + xx] += share;
                            } else {
                                gxc[(*argmax)[static_cast<size_t>(oidx)]] += g;
                            }
                        }
                }
        });
    }
    return out;
}

Var pad_replicate2d(const Var& x, int64_t pad_h, int64_t pad_w) {
    Tape& t = *x.tape();
    const Shape& s = x.shape();
    if (s.size() != 4) throw shape_error("pad_replicate2d: rank-4 input expected");
    int64_t B = s[0], C = s[1], H = s[2], W = s[3];
    int64_t OH = H + 2 * pad_h, OW = W + 2 * pad_w;
    bool rg = x.requires_grad();
    Var out = t.make_node({B, C, OH, OW}, rg);
    auto clampi = [](int64_t v, int64_t hi) { return v < 0 ? 0 : (v >= hi ? hi - 1 : v); };
    {
        const double* X = t.node(x.id()).value.data();
        double* O = t.node(out.id()).value.data();
        for (int64_t bc = 0; bc < B * C; ++bc) {
            const double* xc = X + bc * H * W;
            double* oc = O + bc * OH * OW;
            for (int64_t y = 0; y < OH; ++y) {
                int64_t sy = clampi(y - pad_h, H);
                for (int64_t xx = 0; xx < OW; ++xx) oc[y * OW + xx] = xc[sy * W + clampi(xx - pad_w, W)];
            }
        }
    }
    if (rg) {
        int xid = x.id(), oid = out.id();
        t.record([&t, xid, oid, B, C, H, W, OH, OW, pad_h, pad_w, clampi]() {
            const double* G = t.grad_buf(oid).data();
            double* GX = t.grad_buf(xid).data();
            for (int64_t bc = 0; bc < B * C; ++bc) {
                double* gxc = GX + bc * H * W;
                const double* gc = G + bc * OH * OW;
                for (int64_t y = 0; y < OH; ++y) {
                    int64_t sy = clampi(y - pad_h, H);
                    for (int64_t xx = 0; xx < OW; ++xx)
                        gxc[sy * W + clampi(xx - pad_w, W)] += gc[y * OW + xx];
                }
            }
        });
    }
    return out;
}

Var gather_channels(const Var& x, std::vector<int64_t> indices) {
    Tape& t = *x.tape();
    const Shape& s = x.shape();
    if (s.size() != 4) throw shape_error("gather_channels: rank-4 input expected");
    int64_t B = s[0], C = s[1], HW = s[2] * s[3];
    for (int64_t idx : indices)
        if (idx < 0 || idx >= C)
            throw shape_error("gather_channels: index " + std::to_string(idx) +
                              " out of range for C=" + std::to_string(C));
    int64_t K = static_cast<int64_t>(indices.size());
    bool rg = x.requires_grad();
    Var out = t.make_node({B, K, s[2], s[3]}, rg);
    {
        const double* X = t.node(x.id()).value.data();
        double* O = t.node(out.id()).value.data();
        for (int64_t b = 0; b < B; ++b)
            for (int64_t k = 0; k < K; ++k)
                std::copy_n(X + (b * C + indices[static_cast<size_t>(k)]) * HW, HW,
                            O + (b * K + k) * HW);
    }
    if (rg) {
        int xid = x.id(), oid = out.id();
        auto idx = std::make_shared<std::vector<int64_t>>(std::move(indices));
        t.record([&t, xid, oid, B, C, K, HW, idx]() {
            const double* G = t.grad_buf(oid).data();
            double* GX = t.grad_buf(xid).data();
            for (int64_t b = 0; b < B; ++b)
                for (int64_t k = 0; k < K; ++k) {
                    const double* gr = G + (b * K + k) * HW;
                    double* gx = GX + (b * C + (*idx)[static_cast<size_t>(k)]) * HW;
                    for (int64_t i = 0; i < HW; ++i) gx[i] += gr[i];
                }
        });
    }
    return out;
}

Var spectral_resample(const Var& x, int64_t c_ref) {
    Tape& t = *x.tape();
    const Shape& s = x.shape();
    if (s.size() != 4) throw shape_error("spectral_resample: rank-4 input expected");
    int64_t B = s[0], K = s[1], HW = s[2] * s[3];
    if (K < 2) throw shape_error("spectral_resample: need K >= 2, got K=" + std::to_string(K));
    if (c_ref < 2) throw shape_error("spectral_resample: need c_ref >= 2");
    // per-output-channel linear interpolation on the uniform [0,1] grid
    struct Tap {
        int64_t k0;
        double w0, w1;
    };
    auto taps = std::make_shared<std::vector<Tap>>(static_cast<size_t>(c_ref));
    for (int64_t c = 0; c < c_ref; ++c) {
        double pos = static_cast<double>(c) * static_cast<double>(K - 1) /
                     static_cast<double>(c_ref - 1);
        int64_t k0 = std::min(static_cast<int64_t>(pos), K - 2);
        double frac = pos - static_cast<double>(k0);
        (*taps)[static_cast<size_t>(c)] = {k0, 1.0 - frac, frac};
    }
    bool rg = x.requires_grad();
    Var out = t.make_node({B, c_ref, s[2], s[3]}, rg);
    {
        const double* X = t.node(x.id()).value.data();
        double* O = t.node(out.id()).value.data();
        for (int64_t b = 0; b < B; ++b)
            for (int64_t c = 0; c < c_ref; ++c) {
                const Tap& tp = (*taps)[static_cast<size_t>(c)];
                const double* x0 = X + (b * K + tp.k0) * HW;
                const double* x1 = x0 + HW;
                double* orow = O + (b * c_ref + c) * HW;
                for (int64_t i = 0; i < HW; ++i) orow[i] = tp.w0 * x0[i] + tp.w1 * x1[i];
            }
    }
    if (rg) {
        int xid = x.id(), oid = out.id();
        t.record([&t, xid, oid, B, K, HW, c_ref, taps]() {
            const double* G = t.grad_buf(oid).data();
            double* GX = t.grad_buf(xid).data();
            for (int64_t b = 0; b < B; ++b)
                for (int64_t c = 0; c < c_ref; ++c) {
                    const Tap& tp = (*taps)[static_cast<size_t>(c)];
                    const double* gr = G + (b * c_ref + c) * HW;
                    double* g0 = GX + (b * K + tp.k0) * HW;
                    double* g1 = g0 + HW;
                    for (int64_t i = 0; i < HW; ++i) {
                        g0[i] += tp.w0 * gr[i];
                        g1[i] += tp.w1 * gr[i];
                    }
                }
        });
    }
    return out;
}

Var l2_normalize_rows(const Var& x, double eps) {
    Tape& t = *x.tape();
    const Shape& s = x.shape();
    if (s.size() != 2) throw shape_error("l2_normalize_rows: rank-2 input expected");
    int64_t R = s[0], C = s[1];
    bool rg = x.requires_grad();
    Var out = t.make_node(s, rg);
    auto norms = std::make_shared<std::vector<double>>(static_cast<size_t>(R));
    {
        const double* X = t.node(x.id()).value.data();
        double* O = t.node(out.id()).value.data();
        for (int64_t r = 0; r < R; ++r) {
            double sq = eps;
            for (int64_t c = 0; c < C; ++c) sq += X[r * C + c] * X[r * C + c];
            double n = std::sqrt(sq);
            (*norms)[static_cast<size_t>(r)] = n;
            for (int64_t c = 0; c < C; ++c) O[r * C + c] = X[r * C + c] / n;
        }
    }
    if (rg) {
        int xid = x.id(), oid = out.id();
        t.record([&t, xid, oid, R, C, norms]() {
            const double* G = t.grad_buf(oid).data();
            const double* X = t.node(xid).value.data();
            double* GX = t.grad_buf(xid).data();
            for (int64_t r = 0; r < R; ++r) {
                double n = (*norms)[static_cast<size_t>(r)];
                double dot = 0.0;
                for (int64_t c = 0; c < C; ++c) dot += G[r * C + c] * X[r * C + c];
                for (int64_t c = 0; c < C; ++c)
                    GX[r * C + c] += G[r * C + c] / n - X[r * C + c] * dot / (n * n * n);
            }
        });
    }
    return out;
}

Var cross_entropy(const Var& logits, const std::vector<int>& labels) {
    Tape& t = *logits.tape();
    const Shape& s = logits.shape();
    if (s.size() != 2) throw shape_error("cross_entropy: rank-2 logits expected");
    int64_t B = s[0], N = s[1];
    if (static_cast<int64_t>(labels.size()) != B)
        throw shape_error("cross_entropy: " + std::to_string(labels.size()) + " labels for batch " +
                          std::to_string(B));
    for (int y : labels)
        if (y < 0 || y >= N)
            throw data_error("cross_entropy: label " + std::to_string(y) + " out of range [0, " +
                             std::to_string(N) + ")");
    bool rg = logits.requires_grad();
    Var out = t.make_node(Shape{}, rg);
    {
        const double* L = t.node(logits.id()).value.data();
        double loss = 0.0;
        for (int64_t b = 0; b < B; ++b) {
            const double* row = L + b * N;
            double mx = row[0];
            for (int64_t j = 1; j < N; ++j) mx = std::max(mx, row[j]);
            double denom = 0.0;
            for (int64_t j = 0; j < N; ++j) denom += std::exp(row[j] - mx);
            loss += mx + std::log(denom) - row[labels[static_cast<size_t>(b)]];
        }
        t.node(out.id()).value[0] = loss / static_cast<double>(B);
    }
    if (rg) {
        int lid = logits.id(), oid = out.id();
        auto labs = std::make_shared<std::vector<int>>(labels);
        t.record([&t, lid, oid, B, N, labs]() {
            double g = t.grad_buf(oid)[0] / static_cast<double>(B);
            const double* L = t.node(lid).value.data();
            double* GL = t.grad_buf(lid).data();
            for (int64_t b = 0; b < B; ++b) {
                const double* row = L + b * N;
                double mx = row[0];
                for (int64_t j = 1; j < N; ++j) mx = std::max(mx, row[j]);
                double denom = 0.0;
                for (int64_t j = 0; j < N; ++j) denom += std::exp(row[j] - mx);
                for (int64_t j = 0; j < N; ++j) {
                    double p = std::exp(row[j] - mx) / denom;
                    GL[b * N + j] += g * (p - (j == (*labs)[static_cast<size_t>(b)] ? 1.0 : 0.0));
                }
            }
        });
    }
    return out;
}

}  // namespace spdda::ag
