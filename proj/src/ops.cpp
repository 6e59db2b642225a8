#include "bamnet/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "bamnet/random.hpp"

namespace bamnet {
namespace {

template <typename T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapR = Eigen::Map<MatR<T>>;
template <typename T>
using CMapR = Eigen::Map<const MatR<T>>;

void require_rank(const Shape& s, std::size_t rank, const char* what) {
    if (s.size() != rank) {
        throw ShapeError(std::string(what) + ": expected rank " + std::to_string(rank) + ", got " + shape_str(s));
    }
}

struct ConvGeometry {
    std::size_t n, c, h, w;
    std::size_t o, k;
    std::size_t oh, ow;
    Conv2dOptions opt;

    [[nodiscard]] bool pointwise() const {
        return k == 1 && opt.stride == 1 && opt.padding == 0;
    }
    [[nodiscard]] std::size_t patch() const { return c * k * k; }
    [[nodiscard]] std::size_t positions() const { return oh * ow; }
};

// Output columns [lo, hi) whose input column ox * s - p + offset lies inside
// [0, W).
struct ValidRange {
    std::size_t lo, hi;
};

ValidRange valid_range(std::ptrdiff_t offset, std::ptrdiff_t s, std::ptrdiff_t W, std::size_t out) {
    const auto n = static_cast<std::ptrdiff_t>(out);
    std::ptrdiff_t lo = offset >= 0 ? 0 : (-offset + s - 1) / s;
    std::ptrdiff_t hi = offset >= W ? 0 : (W - 1 - offset) / s + 1;
    lo = std::min(lo, n);
    hi = std::clamp(hi, lo, n);
    return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

template <typename T>
void im2col(const T* x, const ConvGeometry& g, T* cols) {
    const auto s = static_cast<std::ptrdiff_t>(g.opt.stride);
    const auto p = static_cast<std::ptrdiff_t>(g.opt.padding);
    const auto d = static_cast<std::ptrdiff_t>(g.opt.dilation);
    const auto H = static_cast<std::ptrdiff_t>(g.h);
    const auto W = static_cast<std::ptrdiff_t>(g.w);
    std::size_t row = 0;
    for (std::size_t c = 0; c < g.c; ++c) {
        const T* plane = x + c * g.h * g.w;
        for (std::size_t ki = 0; ki < g.k; ++ki) {
            for (std::size_t kj = 0; kj < g.k; ++kj, ++row) {
                T* dst = cols + row * g.positions();
                const std::ptrdiff_t xoff = static_cast<std::ptrdiff_t>(kj) * d - p;
                const ValidRange r = valid_range(xoff, s, W, g.ow);
                for (std::size_t oy = 0; oy < g.oh; ++oy) {
                    T* line = dst + oy * g.ow;
                    const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy) * s - p + static_cast<std::ptrdiff_t>(ki) * d;
                    if (iy < 0 || iy >= H) {
                        std::fill(line, line + g.ow, T{0});
                        continue;
                    }
                    std::fill(line, line + r.lo, T{0});
                    const T* src = plane + iy * W + xoff;
                    if (s == 1) {
                        std::copy(src + r.lo, src + r.hi, line + r.lo);
                    } else {
                        for (std::size_t ox = r.lo; ox < r.hi; ++ox) line[ox] = src[static_cast<std::ptrdiff_t>(ox) * s];
                    }
                    std::fill(line + r.hi, line + g.ow, T{0});
                }
            }
        }
    }
}

template <typename T>
void col2im_add(const T* cols, const ConvGeometry& g, T* dx) {
    const auto s = static_cast<std::ptrdiff_t>(g.opt.stride);
    const auto p = static_cast<std::ptrdiff_t>(g.opt.padding);
    const auto d = static_cast<std::ptrdiff_t>(g.opt.dilation);
    const auto H = static_cast<std::ptrdiff_t>(g.h);
    const auto W = static_cast<std::ptrdiff_t>(g.w);
    std::size_t row = 0;
    for (std::size_t c = 0; c < g.c; ++c) {
        T* plane = dx + c * g.h * g.w;
        for (std::size_t ki = 0; ki < g.k; ++ki) {
            for (std::size_t kj = 0; kj < g.k; ++kj, ++row) {
                const T* src = cols + row * g.positions();
                const std::ptrdiff_t xoff = static_cast<std::ptrdiff_t>(kj) * d - p;
                const ValidRange r = valid_range(xoff, s, W, g.ow);
                for (std::size_t oy = 0; oy < g.oh; ++oy) {
                    const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy) * s - p + static_cast<std::ptrdiff_t>(ki) * d;
                    if (iy < 0 || iy >= H) continue;
                    T* dst = plane + iy * W + xoff;
                    const T* line = src + oy * g.ow;
                    for (std::size_t ox = r.lo; ox < r.hi; ++ox) dst[static_cast<std::ptrdiff_t>(ox) * s] += line[ox];
                }
            }
        }
    }
}

// Channel count and the number of elements per channel slice of an N x C
// (x H x W) tensor.
struct ChannelLayout {
    std::size_t n, c, inner;
};

ChannelLayout channel_layout(const Shape& s, const char* what) {
    if (s.size() == 2) return {s[0], s[1], 1};
    if (s.size() == 4) return {s[0], s[1], s[2] * s[3]};
    throw ShapeError(std::string(what) + ": expected rank 2 or 4, got " + shape_str(s));
}

}  // namespace

std::size_t conv_output_extent(std::size_t in, std::size_t kernel, const Conv2dOptions& opt) {
    if (opt.stride == 0 || opt.dilation == 0 || kernel == 0) {
        throw ShapeError("conv2d: stride, dilation and kernel must be positive");
    }
    const auto span = static_cast<std::ptrdiff_t>(opt.dilation * (kernel - 1) + 1);
    const auto padded = static_cast<std::ptrdiff_t>(in + 2 * opt.padding);
    if (padded < span) {
        throw ShapeError("conv2d: non-positive output extent (input " + std::to_string(in) + ", padding " +
                         std::to_string(opt.padding) + ", effective kernel " + std::to_string(span) + ")");
    }
    return static_cast<std::size_t>((padded - span) / static_cast<std::ptrdiff_t>(opt.stride)) + 1;
}

template <typename T>
Var<T> conv2d(Var<T> input, Var<T> kernel, OptVar<T> bias, const Conv2dOptions& opt) {
    Tape<T>& tape = *input.tape;
    const Shape& xs = input.shape();
    const Shape& ks = kernel.shape();
    require_rank(xs, 4, "conv2d input");
    require_rank(ks, 4, "conv2d kernel");
    if (xs[1] != ks[1] || ks[2] != ks[3]) {
        throw ShapeError("conv2d: input " + shape_str(xs) + " incompatible with kernel " + shape_str(ks));
    }
    if (bias && (bias->shape().size() != 1 || bias->shape()[0] != ks[0])) {
        throw ShapeError("conv2d: bias " + shape_str(bias->shape()) + " does not match kernel " + shape_str(ks));
    }
    ConvGeometry g{xs[0], xs[1], xs[2], xs[3], ks[0], ks[2], 0, 0, opt};
    g.oh = conv_output_extent(g.h, g.k, opt);
    g.ow = conv_output_extent(g.w, g.k, opt);

    Tensor<T> out({g.n, g.o, g.oh, g.ow});
    const T* x = input.value().ptr();
    CMapR<T> wm(kernel.value().ptr(), g.o, g.patch());
    std::vector<T> cols(g.pointwise() ? 0 : g.patch() * g.positions());
    for (std::size_t n = 0; n < g.n; ++n) {
        const T* xn = x + n * g.c * g.h * g.w;
        const T* cp = xn;
        if (!g.pointwise()) {
            im2col(xn, g, cols.data());
            cp = cols.data();
        }
        MapR<T> y(out.ptr() + n * g.o * g.positions(), g.o, g.positions());
        y.noalias() = wm * CMapR<T>(cp, g.patch(), g.positions());
        if (bias) {
            const T* b = bias->value().ptr();
            for (std::size_t o = 0; o < g.o; ++o) y.row(o).array() += b[o];
        }
    }

    std::vector<std::size_t> inputs{input.id, kernel.id};
    if (bias) inputs.push_back(bias->id);
    const std::size_t xid = input.id, kid = kernel.id;
    const std::optional<std::size_t> bid = bias ? std::optional<std::size_t>(bias->id) : std::nullopt;
    return tape.record(std::move(out), std::move(inputs), [g, xid, kid, bid](Tape<T>& t, const Tensor<T>& gy) {
        const T* x = t.value(xid).ptr();
        CMapR<T> wm(t.value(kid).ptr(), g.o, g.patch());
        const bool need_x = t.requires_grad(xid);
        const bool need_w = t.requires_grad(kid);
        const bool need_b = bid && t.requires_grad(*bid);
        MatR<T> dw;
        if (need_w) dw = MatR<T>::Zero(g.o, g.patch());
        std::vector<T> cols(g.pointwise() ? 0 : g.patch() * g.positions());
        std::vector<T> dcols(need_x && !g.pointwise() ? g.patch() * g.positions() : 0);
        T* dx = need_x ? t.grad_buffer(xid).ptr() : nullptr;
        for (std::size_t n = 0; n < g.n; ++n) {
            CMapR<T> dy(gy.ptr() + n * g.o * g.positions(), g.o, g.positions());
            const T* xn = x + n * g.c * g.h * g.w;
            if (need_w) {
                const T* cp = xn;
                if (!g.pointwise()) {
                    im2col(xn, g, cols.data());
                    cp = cols.data();
                }
                dw.noalias() += dy * CMapR<T>(cp, g.patch(), g.positions()).transpose();
            }
            if (need_x) {
                T* dxn = dx + n * g.c * g.h * g.w;
                if (g.pointwise()) {
                    MapR<T>(dxn, g.c, g.positions()).noalias() += wm.transpose() * dy;
                } else {
                    MapR<T>(dcols.data(), g.patch(), g.positions()).noalias() = wm.transpose() * dy;
                    col2im_add(dcols.data(), g, dxn);
                }
            }
        }
        if (need_w) {
            MapR<T>(t.grad_buffer(kid).ptr(), g.o, g.patch()) += dw;
        }
        if (need_b) {
            T* db = t.grad_buffer(*bid).ptr();
            for (std::size_t o = 0; o < g.o; ++o) {
                T acc{0};
                for (std::size_t n = 0; n < g.n; ++n) {
                    const T* row = gy.ptr() + (n * g.o + o) * g.positions();
                    for (std::size_t i = 0; i < g.positions(); ++i) acc += row[i];
                }
                db[o] += acc;
            }
        }
    });
}

template <typename T>
Var<T> batch_norm(Var<T> input, Var<T> gamma, Var<T> beta, Tensor<T>& running_mean, Tensor<T>& running_var,
                  const BatchNormOptions& opt) {
    Tape<T>& tape = *input.tape;
    const ChannelLayout L = channel_layout(input.shape(), "batch_norm");
    const Shape cshape{L.c};
    require_same_shape(gamma.shape(), cshape, "batch_norm gamma");
    require_same_shape(beta.shape(), cshape, "batch_norm beta");
    require_same_shape(running_mean.shape(), cshape, "batch_norm running_mean");
    require_same_shape(running_var.shape(), cshape, "batch_norm running_var");
    if (!(opt.epsilon > 0.0)) throw std::invalid_argument("batch_norm: epsilon must be positive");

    const T* x = input.value().ptr();
    const T* gm = gamma.value().ptr();
    const T* bt = beta.value().ptr();
    const std::size_t count = L.n * L.inner;
    std::vector<T> mean(L.c), invstd(L.c);

    if (opt.mode == Mode::Train) {
        for (std::size_t c = 0; c < L.c; ++c) {
            double s = 0.0;
            for (std::size_t n = 0; n < L.n; ++n) {
                const T* p = x + (n * L.c + c) * L.inner;
                for (std::size_t i = 0; i < L.inner; ++i) s += static_cast<double>(p[i]);
            }
            const double mu = s / static_cast<double>(count);
            double ss = 0.0;
            for (std::size_t n = 0; n < L.n; ++n) {
                const T* p = x + (n * L.c + c) * L.inner;
                for (std::size_t i = 0; i < L.inner; ++i) {
                    const double dlt = static_cast<double>(p[i]) - mu;
                    ss += dlt * dlt;
                }
            }
            const double var = ss / static_cast<double>(count);
            mean[c] = static_cast<T>(mu);
            invstd[c] = static_cast<T>(1.0 / std::sqrt(var + opt.epsilon));
            const double unbiased = count > 1 ? ss / static_cast<double>(count - 1) : var;
            running_mean[c] = static_cast<T>((1.0 - opt.momentum) * running_mean[c] + opt.momentum * mu);
            running_var[c] = static_cast<T>((1.0 - opt.momentum) * running_var[c] + opt.momentum * unbiased);
        }
    } else {
        for (std::size_t c = 0; c < L.c; ++c) {
            mean[c] = running_mean[c];
            invstd[c] = static_cast<T>(1.0 / std::sqrt(static_cast<double>(running_var[c]) + opt.epsilon));
        }
    }

    Tensor<T> out(input.shape());
    T* y = out.ptr();
    for (std::size_t n = 0; n < L.n; ++n) {
        for (std::size_t c = 0; c < L.c; ++c) {
            const std::size_t off = (n * L.c + c) * L.inner;
            const T a = gm[c] * invstd[c];
            const T m = mean[c];
            for (std::size_t i = 0; i < L.inner; ++i) y[off + i] = a * (x[off + i] - m) + bt[c];
        }
    }

    const std::size_t xid = input.id, gid = gamma.id, bid = beta.id;
    const bool train = opt.mode == Mode::Train;
    return tape.record(std::move(out), {xid, gid, bid},
                       [L, xid, gid, bid, train, mean = std::move(mean), invstd = std::move(invstd)](
                           Tape<T>& t, const Tensor<T>& gy) {
        const T* x = t.value(xid).ptr();
        const T* gm = t.value(gid).ptr();
        const T* dy = gy.ptr();
        const auto M = static_cast<T>(L.n * L.inner);
        std::vector<T> dgamma(L.c), dbeta(L.c);
        for (std::size_t c = 0; c < L.c; ++c) {
            T sg{0}, sgx{0};
            for (std::size_t n = 0; n < L.n; ++n) {
                const std::size_t off = (n * L.c + c) * L.inner;
                for (std::size_t i = 0; i < L.inner; ++i) {
                    const T xhat = (x[off + i] - mean[c]) * invstd[c];
                    sg += dy[off + i];
                    sgx += dy[off + i] * xhat;
                }
            }
            dbeta[c] = sg;
            dgamma[c] = sgx;
        }
        if (t.requires_grad(xid)) {
            T* dx = t.grad_buffer(xid).ptr();
            for (std::size_t n = 0; n < L.n; ++n) {
                for (std::size_t c = 0; c < L.c; ++c) {
                    const std::size_t off = (n * L.c + c) * L.inner;
                    if (train) {
                        const T k = gm[c] * invstd[c] / M;
                        for (std::size_t i = 0; i < L.inner; ++i) {
                            const T xhat = (x[off + i] - mean[c]) * invstd[c];
                            dx[off + i] += k * (M * dy[off + i] - dbeta[c] - xhat * dgamma[c]);
                        }
                    } else {
                        const T k = gm[c] * invstd[c];
                        for (std::size_t i = 0; i < L.inner; ++i) dx[off + i] += k * dy[off + i];
                    }
                }
            }
        }
        if (t.requires_grad(gid)) {
            T* g = t.grad_buffer(gid).ptr();
            for (std::size_t c = 0; c < L.c; ++c) g[c] += dgamma[c];
        }
        if (t.requires_grad(bid)) {
            T* b = t.grad_buffer(bid).ptr();
            for (std::size_t c = 0; c < L.c; ++c) b[c] += dbeta[c];
        }
    });
}

template <typename T>
Var<T> max_pool2d(Var<T> input, std::size_t window, std::size_t stride, std::size_t padding) {
    Tape<T>& tape = *input.tape;
    const Shape& xs = input.shape();
    require_rank(xs, 4, "max_pool2d input");
    if (window == 0 || stride == 0) throw ShapeError("max_pool2d: window and stride must be positive");
    if (padding >= window) throw ShapeError("max_pool2d: padding must be smaller than the window");
    if (window > xs[2] + 2 * padding || window > xs[3] + 2 * padding) {
        throw ShapeError("max_pool2d: window " + std::to_string(window) + " larger than input " + shape_str(xs));
    }
    const std::size_t N = xs[0], C = xs[1], H = xs[2], W = xs[3];
    const std::size_t OH = (H + 2 * padding - window) / stride + 1;
    const std::size_t OW = (W + 2 * padding - window) / stride + 1;
    Tensor<T> out({N, C, OH, OW});
    std::vector<std::size_t> argmax(out.numel());
    const T* x = input.value().ptr();
    const auto s = static_cast<std::ptrdiff_t>(stride);
    const auto p = static_cast<std::ptrdiff_t>(padding);
    std::vector<ValidRange> cols(OW);
    for (std::size_t ox = 0; ox < OW; ++ox) {
        const std::ptrdiff_t x0 = static_cast<std::ptrdiff_t>(ox) * s - p;
        cols[ox] = {static_cast<std::size_t>(std::max<std::ptrdiff_t>(x0, 0)),
                    static_cast<std::size_t>(std::min<std::ptrdiff_t>(x0 + static_cast<std::ptrdiff_t>(window),
                                                                      static_cast<std::ptrdiff_t>(W)))};
    }
    std::size_t o = 0;
    for (std::size_t nc = 0; nc < N * C; ++nc) {
        const T* plane = x + nc * H * W;
        for (std::size_t oy = 0; oy < OH; ++oy) {
            const std::ptrdiff_t y0 = static_cast<std::ptrdiff_t>(oy) * s - p;
            const auto ylo = static_cast<std::size_t>(std::max<std::ptrdiff_t>(y0, 0));
            const auto yhi = static_cast<std::size_t>(
                std::min<std::ptrdiff_t>(y0 + static_cast<std::ptrdiff_t>(window), static_cast<std::ptrdiff_t>(H)));
            for (std::size_t ox = 0; ox < OW; ++ox, ++o) {
                const ValidRange r = cols[ox];
                std::size_t best_idx = ylo * W + r.lo;
                T best = plane[best_idx];
                for (std::size_t iy = ylo; iy < yhi; ++iy) {
                    const T* line = plane + iy * W;
                    for (std::size_t ix = r.lo; ix < r.hi; ++ix) {
                        if (line[ix] > best) {
                            best = line[ix];
                            best_idx = iy * W + ix;
                        }
                    }
                }
                out[o] = best;
                argmax[o] = nc * H * W + best_idx;
            }
        }
    }
    const std::size_t xid = input.id;
    if (tape.tracks_branches()) {
        std::uint64_t winners = argmax.size();
        for (auto a : argmax) winners = mix_seed(winners, a);
        tape.note_branch(winners);
    }
    return tape.record(std::move(out), {xid}, [xid, argmax = std::move(argmax)](Tape<T>& t, const Tensor<T>& gy) {
        T* dx = t.grad_buffer(xid).ptr();
        for (std::size_t i = 0; i < argmax.size(); ++i) dx[argmax[i]] += gy[i];
    });
}

template <typename T>
Var<T> global_avg_pool(Var<T> input) {
    Tape<T>& tape = *input.tape;
    const Shape& xs = input.shape();
    require_rank(xs, 4, "global_avg_pool input");
    const std::size_t NC = xs[0] * xs[1], HW = xs[2] * xs[3];
    Tensor<T> out({xs[0], xs[1], 1, 1});
    const T* x = input.value().ptr();
    for (std::size_t i = 0; i < NC; ++i) {
        T s{0};
        for (std::size_t j = 0; j < HW; ++j) s += x[i * HW + j];
        out[i] = s / static_cast<T>(HW);
    }
    const std::size_t xid = input.id;
    return tape.record(std::move(out), {xid}, [xid, NC, HW](Tape<T>& t, const Tensor<T>& gy) {
        T* dx = t.grad_buffer(xid).ptr();
        for (std::size_t i = 0; i < NC; ++i) {
            const T g = gy[i] / static_cast<T>(HW);
            for (std::size_t j = 0; j < HW; ++j) dx[i * HW + j] += g;
        }
    });
}

template <typename T>
Var<T> pool(Var<T> input, PoolKind kind, std::size_t window, std::size_t stride) {
    if (kind == PoolKind::GlobalAvg) return global_avg_pool(input);
    return max_pool2d(input, window, stride, 0);
}

template <typename T>
Var<T> dense(Var<T> input, Var<T> weight, OptVar<T> bias) {
    Tape<T>& tape = *input.tape;
    const Shape& xs = input.shape();
    const Shape& ws = weight.shape();
    require_rank(xs, 2, "dense input");
    require_rank(ws, 2, "dense weight");
    if (xs[1] != ws[0]) {
        throw ShapeError("dense: input " + shape_str(xs) + " incompatible with weight " + shape_str(ws));
    }
    if (bias && (bias->shape().size() != 1 || bias->shape()[0] != ws[1])) {
        throw ShapeError("dense: bias " + shape_str(bias->shape()) + " does not match weight " + shape_str(ws));
    }
    const std::size_t N = xs[0], F = xs[1], G = ws[1];
    Tensor<T> out({N, G});
    MapR<T> y(out.ptr(), N, G);
    y.noalias() = CMapR<T>(input.value().ptr(), N, F) * CMapR<T>(weight.value().ptr(), F, G);
    if (bias) {
        const T* b = bias->value().ptr();
        for (std::size_t n = 0; n < N; ++n)
            for (std::size_t g = 0; g < G; ++g) y(n, g) += b[g];
    }
    std::vector<std::size_t> inputs{input.id, weight.id};
    if (bias) inputs.push_back(bias->id);
    const std::size_t xid = input.id, wid = weight.id;
    const std::optional<std::size_t> bid = bias ? std::optional<std::size_t>(bias->id) : std::nullopt;
    return tape.record(std::move(out), std::move(inputs), [N, F, G, xid, wid, bid](Tape<T>& t, const Tensor<T>& gy) {
        CMapR<T> dy(gy.ptr(), N, G);
        if (t.requires_grad(xid)) {
            MapR<T>(t.grad_buffer(xid).ptr(), N, F).noalias() += dy * CMapR<T>(t.value(wid).ptr(), F, G).transpose();
        }
        if (t.requires_grad(wid)) {
            MapR<T>(t.grad_buffer(wid).ptr(), F, G).noalias() += CMapR<T>(t.value(xid).ptr(), N, F).transpose() * dy;
        }
        if (bid && t.requires_grad(*bid)) {
            T* db = t.grad_buffer(*bid).ptr();
            for (std::size_t g = 0; g < G; ++g) {
                T s{0};
                for (std::size_t n = 0; n < N; ++n) s += gy[n * G + g];
                db[g] += s;
            }
        }
    });
}

template <typename T>
Var<T> relu(Var<T> input) {
    Tensor<T> out = input.value();
    if (input.tape->tracks_branches()) {
        std::uint64_t signs = 0;
        std::size_t bits = 0;
        for (const T v : out.data()) {
            signs = (signs << 1) | static_cast<std::uint64_t>(v > T{0});
            if (++bits == 64) {
                input.tape->note_branch(signs);
                signs = 0;
                bits = 0;
            }
        }
        input.tape->note_branch(signs ^ (static_cast<std::uint64_t>(bits) << 56));
    }
    for (auto& v : out.data()) v = std::max(v, T{0});
    const std::size_t xid = input.id;
    const std::size_t yid = input.tape->size();
    return input.tape->record(std::move(out), {xid}, [xid, yid](Tape<T>& t, const Tensor<T>& gy) {
        const T* y = t.value(yid).ptr();
        T* dx = t.grad_buffer(xid).ptr();
        for (std::size_t i = 0; i < gy.numel(); ++i) {
            if (y[i] > T{0}) dx[i] += gy[i];
        }
    });
}

template <typename T>
Var<T> sigmoid(Var<T> input) {
    Tensor<T> out = input.value();
    for (auto& v : out.data()) {
        if (v >= T{0}) {
            v = T{1} / (T{1} + std::exp(-v));
        } else {
            const T e = std::exp(v);
            v = e / (T{1} + e);
        }
    }
    const std::size_t xid = input.id;
    const std::size_t yid = input.tape->size();
    return input.tape->record(std::move(out), {xid}, [xid, yid](Tape<T>& t, const Tensor<T>& gy) {
        const T* y = t.value(yid).ptr();
        T* dx = t.grad_buffer(xid).ptr();
        for (std::size_t i = 0; i < gy.numel(); ++i) dx[i] += gy[i] * y[i] * (T{1} - y[i]);
    });
}

template <typename T>
Var<T> activation(Var<T> input, ActivationKind kind) {
    return kind == ActivationKind::Relu ? relu(input) : sigmoid(input);
}

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& logits) {
    require_rank(logits.shape(), 2, "softmax");
    const std::size_t N = logits.dim(0), K = logits.dim(1);
    Tensor<T> out(logits.shape());
    for (std::size_t n = 0; n < N; ++n) {
        const T* z = logits.ptr() + n * K;
        T* p = out.ptr() + n * K;
        const T mx = *std::max_element(z, z + K);
        T s{0};
        for (std::size_t k = 0; k < K; ++k) {
            p[k] = std::exp(z[k] - mx);
            s += p[k];
        }
        for (std::size_t k = 0; k < K; ++k) p[k] /= s;
    }
    return out;
}

template <typename T>
Var<T> softmax_cross_entropy(Var<T> logits, const Tensor<T>& targets) {
    const Shape& ls = logits.shape();
    require_rank(ls, 2, "softmax_cross_entropy logits");
    require_same_shape(ls, targets.shape(), "softmax_cross_entropy targets");
    const std::size_t N = ls[0], K = ls[1];
    if (K < 2) throw ShapeError("softmax_cross_entropy: need at least 2 classes, got " + shape_str(ls));
    std::vector<std::size_t> label(N);
    for (std::size_t n = 0; n < N; ++n) {
        std::size_t ones = 0;
        for (std::size_t k = 0; k < K; ++k) {
            const T v = targets[n * K + k];
            if (v == T{1}) {
                ++ones;
                label[n] = k;
            } else if (v != T{0}) {
                ones = 2;
            }
        }
        if (ones != 1) throw std::invalid_argument("softmax_cross_entropy: target row " + std::to_string(n) + " is not one-hot");
    }
    const T* z = logits.value().ptr();
    double total = 0.0;
    for (std::size_t n = 0; n < N; ++n) {
        const T* row = z + n * K;
        const T mx = *std::max_element(row, row + K);
        double s = 0.0;
        for (std::size_t k = 0; k < K; ++k) s += std::exp(static_cast<double>(row[k] - mx));
        total += std::log(s) - static_cast<double>(row[label[n]] - mx);
    }
    Tensor<T> out({1}, static_cast<T>(total / static_cast<double>(N)));
    const std::size_t zid = logits.id;
    return logits.tape->record(std::move(out), {zid}, [zid, N, K, label = std::move(label)](Tape<T>& t, const Tensor<T>& gy) {
        const Tensor<T> p = softmax_rows(t.value(zid));
        T* dz = t.grad_buffer(zid).ptr();
        const T scale = gy[0] / static_cast<T>(N);
        for (std::size_t n = 0; n < N; ++n) {
            for (std::size_t k = 0; k < K; ++k) {
                const T target = k == label[n] ? T{1} : T{0};
                dz[n * K + k] += scale * (p[n * K + k] - target);
            }
        }
    });
}

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
    require_same_shape(a.shape(), b.shape(), "add");
    Tensor<T> out = a.value();
    const T* pb = b.value().ptr();
    T* y = out.ptr();
    for (std::size_t i = 0; i < out.numel(); ++i) y[i] += pb[i];
    const std::size_t aid = a.id, bid = b.id;
    return a.tape->record(std::move(out), {aid, bid}, [aid, bid](Tape<T>& t, const Tensor<T>& gy) {
        for (auto id : {aid, bid}) {
            if (!t.requires_grad(id)) continue;
            T* d = t.grad_buffer(id).ptr();
            for (std::size_t i = 0; i < gy.numel(); ++i) d[i] += gy[i];
        }
    });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
    require_same_shape(a.shape(), b.shape(), "mul");
    Tensor<T> out = a.value();
    const T* pb = b.value().ptr();
    T* y = out.ptr();
    for (std::size_t i = 0; i < out.numel(); ++i) y[i] *= pb[i];
    const std::size_t aid = a.id, bid = b.id;
    return a.tape->record(std::move(out), {aid, bid}, [aid, bid](Tape<T>& t, const Tensor<T>& gy) {
        const T* va = t.value(aid).ptr();
        const T* vb = t.value(bid).ptr();
        if (t.requires_grad(aid)) {
            T* d = t.grad_buffer(aid).ptr();
            for (std::size_t i = 0; i < gy.numel(); ++i) d[i] += gy[i] * vb[i];
        }
        if (t.requires_grad(bid)) {
            T* d = t.grad_buffer(bid).ptr();
            for (std::size_t i = 0; i < gy.numel(); ++i) d[i] += gy[i] * va[i];
        }
    });
}

template <typename T>
Var<T> scale(Var<T> a, T factor) {
    Tensor<T> out = a.value();
    for (auto& v : out.data()) v *= factor;
    const std::size_t aid = a.id;
    return a.tape->record(std::move(out), {aid}, [aid, factor](Tape<T>& t, const Tensor<T>& gy) {
        T* d = t.grad_buffer(aid).ptr();
        for (std::size_t i = 0; i < gy.numel(); ++i) d[i] += factor * gy[i];
    });
}

template <typename T>
Var<T> sum(Var<T> a) {
    T s{0};
    for (T v : a.value().data()) s += v;
    const std::size_t aid = a.id;
    return a.tape->record(Tensor<T>({1}, s), {aid}, [aid](Tape<T>& t, const Tensor<T>& gy) {
        T* d = t.grad_buffer(aid).ptr();
        const std::size_t n = t.value(aid).numel();
        for (std::size_t i = 0; i < n; ++i) d[i] += gy[0];
    });
}

template <typename T>
Var<T> reshape(Var<T> a, Shape shape) {
    Tensor<T> out = a.value().reshaped(std::move(shape));
    const std::size_t aid = a.id;
    return a.tape->record(std::move(out), {aid}, [aid](Tape<T>& t, const Tensor<T>& gy) {
        T* d = t.grad_buffer(aid).ptr();
        for (std::size_t i = 0; i < gy.numel(); ++i) d[i] += gy[i];
    });
}

template <typename T>
Var<T> concat_channels(std::span<const Var<T>> parts) {
    if (parts.empty()) throw ShapeError("concat_channels: no inputs");
    const Shape& first = parts[0].shape();
    require_rank(first, 4, "concat_channels input");
    std::size_t channels = 0;
    std::vector<std::size_t> widths;
    std::vector<std::size_t> ids;
    for (const auto& p : parts) {
        const Shape& s = p.shape();
        require_rank(s, 4, "concat_channels input");
        if (s[0] != first[0] || s[2] != first[2] || s[3] != first[3]) {
            throw ShapeError("concat_channels: shape mismatch " + shape_str(first) + " vs " + shape_str(s));
        }
        channels += s[1];
        widths.push_back(s[1]);
        ids.push_back(p.id);
    }
    const std::size_t N = first[0], HW = first[2] * first[3];
    Tensor<T> out({N, channels, first[2], first[3]});
    for (std::size_t n = 0; n < N; ++n) {
        T* dst = out.ptr() + n * channels * HW;
        for (std::size_t i = 0; i < parts.size(); ++i) {
            const T* src = parts[i].value().ptr() + n * widths[i] * HW;
            dst = std::copy(src, src + widths[i] * HW, dst);
        }
    }
    Tape<T>& tape = *parts[0].tape;
    return tape.record(std::move(out), ids, [ids, widths, N, HW, channels](Tape<T>& t, const Tensor<T>& gy) {
        std::size_t offset = 0;
        for (std::size_t i = 0; i < ids.size(); ++i) {
            if (t.requires_grad(ids[i])) {
                T* d = t.grad_buffer(ids[i]).ptr();
                for (std::size_t n = 0; n < N; ++n) {
                    const T* src = gy.ptr() + (n * channels + offset) * HW;
                    T* dst = d + n * widths[i] * HW;
                    for (std::size_t j = 0; j < widths[i] * HW; ++j) dst[j] += src[j];
                }
            }
            offset += widths[i];
        }
    });
}

template <typename T>
Var<T> broadcast_gate_sum(Var<T> channel_map, Var<T> spatial_map) {
    const Shape& cs = channel_map.shape();
    const Shape& ss = spatial_map.shape();
    require_rank(cs, 4, "broadcast_gate_sum channel map");
    require_rank(ss, 4, "broadcast_gate_sum spatial map");
    if (cs[2] != 1 || cs[3] != 1 || ss[1] != 1 || cs[0] != ss[0]) {
        throw ShapeError("broadcast_gate_sum: channel map " + shape_str(cs) + " incompatible with spatial map " +
                         shape_str(ss));
    }
    const std::size_t N = cs[0], C = cs[1], HW = ss[2] * ss[3];
    Tensor<T> out({N, C, ss[2], ss[3]});
    const T* ch = channel_map.value().ptr();
    const T* sp = spatial_map.value().ptr();
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t c = 0; c < C; ++c) {
            T* dst = out.ptr() + (n * C + c) * HW;
            const T cv = ch[n * C + c];
            const T* s = sp + n * HW;
            for (std::size_t i = 0; i < HW; ++i) dst[i] = cv + s[i];
        }
    const std::size_t cid = channel_map.id, sid = spatial_map.id;
    return channel_map.tape->record(std::move(out), {cid, sid}, [cid, sid, N, C, HW](Tape<T>& t, const Tensor<T>& gy) {
        const bool need_c = t.requires_grad(cid);
        const bool need_s = t.requires_grad(sid);
        T* dc = need_c ? t.grad_buffer(cid).ptr() : nullptr;
        T* ds = need_s ? t.grad_buffer(sid).ptr() : nullptr;
        for (std::size_t n = 0; n < N; ++n)
            for (std::size_t c = 0; c < C; ++c) {
                const T* g = gy.ptr() + (n * C + c) * HW;
                if (need_c) {
                    T s{0};
                    for (std::size_t i = 0; i < HW; ++i) s += g[i];
                    dc[n * C + c] += s;
                }
                if (need_s) {
                    T* d = ds + n * HW;
                    for (std::size_t i = 0; i < HW; ++i) d[i] += g[i];
                }
            }
    });
}

template <typename T>
Var<T> dropout(Var<T> input, double p, std::uint64_t seed, Mode mode) {
    if (p < 0.0 || p >= 1.0) throw std::invalid_argument("dropout: p must lie in [0, 1)");
    if (mode == Mode::Eval || p == 0.0) return input;
    Rng rng(seed);
    const auto keep_scale = static_cast<T>(1.0 / (1.0 - p));
    Tensor<T> mask(input.shape());
    for (auto& m : mask.data()) m = rng.uniform() < p ? T{0} : keep_scale;
    Tensor<T> out = input.value();
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= mask[i];
    const std::size_t xid = input.id;
    return input.tape->record(std::move(out), {xid}, [xid, mask = std::move(mask)](Tape<T>& t, const Tensor<T>& gy) {
        T* d = t.grad_buffer(xid).ptr();
        for (std::size_t i = 0; i < gy.numel(); ++i) d[i] += gy[i] * mask[i];
    });
}

#define BAMNET_INSTANTIATE_OPS(T)                                                                              \
    template Var<T> conv2d<T>(Var<T>, Var<T>, OptVar<T>, const Conv2dOptions&);                    \
    template Var<T> batch_norm<T>(Var<T>, Var<T>, Var<T>, Tensor<T>&, Tensor<T>&, const BatchNormOptions&);   \
    template Var<T> max_pool2d<T>(Var<T>, std::size_t, std::size_t, std::size_t);                              \
    template Var<T> global_avg_pool<T>(Var<T>);                                                                \
    template Var<T> pool<T>(Var<T>, PoolKind, std::size_t, std::size_t);                                       \
    template Var<T> dense<T>(Var<T>, Var<T>, OptVar<T>);                                           \
    template Var<T> relu<T>(Var<T>);                                                                           \
    template Var<T> sigmoid<T>(Var<T>);                                                                        \
    template Var<T> activation<T>(Var<T>, ActivationKind);                                                     \
    template Var<T> softmax_cross_entropy<T>(Var<T>, const Tensor<T>&);                                        \
    template Var<T> add<T>(Var<T>, Var<T>);                                                                    \
    template Var<T> mul<T>(Var<T>, Var<T>);                                                                    \
    template Var<T> scale<T>(Var<T>, T);                                                                       \
    template Var<T> sum<T>(Var<T>);                                                                            \
    template Var<T> reshape<T>(Var<T>, Shape);                                                                 \
    template Var<T> concat_channels<T>(std::span<const Var<T>>);                                               \
    template Var<T> broadcast_gate_sum<T>(Var<T>, Var<T>);                                                     \
    template Var<T> dropout<T>(Var<T>, double, std::uint64_t, Mode);                                           \
    template Tensor<T> softmax_rows<T>(const Tensor<T>&);

BAMNET_INSTANTIATE_OPS(float)
BAMNET_INSTANTIATE_OPS(double)

}  // namespace bamnet
