#include <algorithm>
#include <limits>
#include <stdexcept>
#include <string>

#include "itcfn/ops.hpp"

namespace itcfn::ops {

namespace {

struct Geometry {
    std::size_t n, c, d, h, w;         // input
    std::size_t f, kd, kh, kw;         // kernel
    std::size_t od, oh, ow;            // output
    std::size_t stride, pad;
};

[[noreturn]] void conv_error(const char* op, const std::string& what) {
    throw std::invalid_argument(std::string(op) + ": " + what);
}

// Output positions o in [lo, hi) for which o*stride - pad + k lands inside [0, extent).
inline void valid_range(std::size_t out_extent, std::size_t extent, std::size_t stride, std::size_t pad,
                        std::size_t k, std::size_t& lo, std::size_t& hi) {
    // need o*stride + k >= pad  and  o*stride + k - pad < extent
    lo = k >= pad ? 0 : (pad - k + stride - 1) / stride;
    const std::size_t limit = extent + pad;  // o*stride + k < limit
    hi = limit > k ? std::min(out_extent, (limit - k + stride - 1) / stride) : 0;
    if (hi < lo) hi = lo;
}

void flush(Node& p, const std::vector<double>& acc) {
    for (std::size_t i = 0; i < acc.size(); ++i) p.accumulate(i, acc[i]);
}

// Four rows of C updated together so each row of B is streamed once per block.
void rank1_rows(std::size_t rows, std::size_t n, const double* av, std::size_t astride, const double* brow, double* c) {
    if (rows == 4) {
        const double a0 = av[0], a1 = av[astride], a2 = av[2 * astride], a3 = av[3 * astride];
        double* c0 = c;
        double* c1 = c + n;
        double* c2 = c + 2 * n;
        double* c3 = c + 3 * n;
        for (std::size_t j = 0; j < n; ++j) {
            const double bv = brow[j];
            c0[j] += a0 * bv;
            c1[j] += a1 * bv;
            c2[j] += a2 * bv;
            c3[j] += a3 * bv;
        }
        return;
    }
    for (std::size_t r = 0; r < rows; ++r) {
        const double a = av[r * astride];
        double* cr = c + r * n;
        for (std::size_t j = 0; j < n; ++j) cr[j] += a * brow[j];
    }
}

// C[M,N] += A[M,K] * B[K,N]
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c) {
    for (std::size_t i = 0; i < m; i += 4) {
        const std::size_t rows = std::min<std::size_t>(4, m - i);
        for (std::size_t p = 0; p < k; ++p) rank1_rows(rows, n, a + i * k + p, k, b + p * n, c + i * n);
    }
}

// C[M,N] += A[K,M]^T * B[K,N]
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c) {
    for (std::size_t i = 0; i < m; i += 4) {
        const std::size_t rows = std::min<std::size_t>(4, m - i);
        for (std::size_t p = 0; p < k; ++p) rank1_rows(rows, n, a + p * m + i, 1, b + p * n, c + i * n);
    }
}

// C[M,N] += A[M,K] * B[N,K]^T via an explicit transpose of B.
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c) {
    std::vector<double> bt(k * n);
    for (std::size_t j = 0; j < n; ++j)
        for (std::size_t p = 0; p < k; ++p) bt[p * n + j] = b[j * k + p];
    gemm_nn(m, n, k, a, bt.data(), c);
}

// Column matrix [channels * kvol, od*oh*ow] of a [channels, d, h, w] block
// under the forward-convolution geometry g.
void im2col(const Geometry& g, std::size_t channels, const double* src, double* cols) {
    const std::size_t in_vol = g.d * g.h * g.w, out_vol = g.od * g.oh * g.ow, kvol = g.kd * g.kh * g.kw;
    std::fill(cols, cols + channels * kvol * out_vol, 0.0);
    for (std::size_t c = 0; c < channels; ++c) {
        const double* x = src + c * in_vol;
        for (std::size_t zd = 0; zd < g.kd; ++zd) {
            std::size_t d0, d1;
            valid_range(g.od, g.d, g.stride, g.pad, zd, d0, d1);
            for (std::size_t zh = 0; zh < g.kh; ++zh) {
                std::size_t h0, h1;
                valid_range(g.oh, g.h, g.stride, g.pad, zh, h0, h1);
                for (std::size_t zw = 0; zw < g.kw; ++zw) {
                    std::size_t w0, w1;
                    valid_range(g.ow, g.w, g.stride, g.pad, zw, w0, w1);
                    if (w0 >= w1) continue;
                    double* row = cols + (c * kvol + (zd * g.kh + zh) * g.kw + zw) * out_vol;
                    for (std::size_t od = d0; od < d1; ++od) {
                        const std::size_t id = od * g.stride + zd - g.pad;
                        for (std::size_t oh = h0; oh < h1; ++oh) {
                            const std::size_t ih = oh * g.stride + zh - g.pad;
                            double* r = row + (od * g.oh + oh) * g.ow;
                            const double* xp = x + (id * g.h + ih) * g.w + (w0 * g.stride + zw - g.pad);
                            for (std::size_t ow = w0; ow < w1; ++ow, xp += g.stride) r[ow] = *xp;
                        }
                    }
                }
            }
        }
    }
}

// Adjoint of im2col: scatter-adds the column matrix back into dst.
void col2im(const Geometry& g, std::size_t channels, const double* cols, double* dst) {
    const std::size_t in_vol = g.d * g.h * g.w, out_vol = g.od * g.oh * g.ow, kvol = g.kd * g.kh * g.kw;
    for (std::size_t c = 0; c < channels; ++c) {
        double* x = dst + c * in_vol;
        for (std::size_t zd = 0; zd < g.kd; ++zd) {
            std::size_t d0, d1;
            valid_range(g.od, g.d, g.stride, g.pad, zd, d0, d1);
            for (std::size_t zh = 0; zh < g.kh; ++zh) {
                std::size_t h0, h1;
                valid_range(g.oh, g.h, g.stride, g.pad, zh, h0, h1);
                for (std::size_t zw = 0; zw < g.kw; ++zw) {
                    std::size_t w0, w1;
                    valid_range(g.ow, g.w, g.stride, g.pad, zw, w0, w1);
                    if (w0 >= w1) continue;
                    const double* row = cols + (c * kvol + (zd * g.kh + zh) * g.kw + zw) * out_vol;
                    for (std::size_t od = d0; od < d1; ++od) {
                        const std::size_t id = od * g.stride + zd - g.pad;
                        for (std::size_t oh = h0; oh < h1; ++oh) {
                            const std::size_t ih = oh * g.stride + zh - g.pad;
                            const double* r = row + (od * g.oh + oh) * g.ow;
                            double* xp = x + (id * g.h + ih) * g.w + (w0 * g.stride + zw - g.pad);
                            for (std::size_t ow = w0; ow < w1; ++ow, xp += g.stride) *xp += r[ow];
                        }
                    }
                }
            }
        }
    }
}

void bias_backward(Node* pb, const std::vector<double>& grad, std::size_t n, std::size_t f, std::size_t vol) {
    if (!pb || !pb->requires_grad) return;
    for (std::size_t j = 0; j < f; ++j) {
        double acc = 0.0;
        for (std::size_t b = 0; b < n; ++b) {
            const double* go = grad.data() + (b * f + j) * vol;
            for (std::size_t i = 0; i < vol; ++i) acc += go[i];
        }
        pb->accumulate(j, acc);
    }
}

}  // namespace

Tensor conv3d(const Tensor& input, const Tensor& kernel, const Tensor& bias, Conv3dSpec spec) {
    if (input.rank() != 5) conv_error("conv3d", "input must be [N,C,D,H,W], got " + shape_str(input.shape()));
    if (kernel.rank() != 5) conv_error("conv3d", "kernel must be [F,C,kd,kh,kw], got " + shape_str(kernel.shape()));
    if (spec.stride == 0) conv_error("conv3d", "stride must be >= 1");
    Geometry g{};
    g.n = input.dim(0), g.c = input.dim(1), g.d = input.dim(2), g.h = input.dim(3), g.w = input.dim(4);
    g.f = kernel.dim(0), g.kd = kernel.dim(2), g.kh = kernel.dim(3), g.kw = kernel.dim(4);
    g.stride = spec.stride, g.pad = spec.padding;
    if (kernel.dim(1) != g.c) {
        conv_error("conv3d", "kernel expects " + std::to_string(kernel.dim(1)) + " channels, input has " + std::to_string(g.c));
    }
    if (g.kd > g.d + 2 * g.pad || g.kh > g.h + 2 * g.pad || g.kw > g.w + 2 * g.pad) {
        conv_error("conv3d", "kernel " + shape_str(kernel.shape()) + " larger than padded input " + shape_str(input.shape()));
    }
    if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != g.f)) conv_error("conv3d", "bias must be [F]");
    g.od = (g.d + 2 * g.pad - g.kd) / g.stride + 1;
    g.oh = (g.h + 2 * g.pad - g.kh) / g.stride + 1;
    g.ow = (g.w + 2 * g.pad - g.kw) / g.stride + 1;

    const std::size_t in_vol = g.d * g.h * g.w, out_vol = g.od * g.oh * g.ow, ck = g.c * g.kd * g.kh * g.kw;
    const double* in = input.data().data();
    const double* wt = kernel.data().data();
    std::vector<double> out(g.n * g.f * out_vol, 0.0);
    std::vector<double> cols(ck * out_vol);
    for (std::size_t b = 0; b < g.n; ++b) {
        double* o = out.data() + b * g.f * out_vol;
        if (bias.defined()) {
            for (std::size_t f = 0; f < g.f; ++f) std::fill(o + f * out_vol, o + (f + 1) * out_vol, bias.data()[f]);
        }
        im2col(g, g.c, in + b * g.c * in_vol, cols.data());
        gemm_nn(g.f, out_vol, ck, wt, cols.data(), o);
    }
    std::vector<Tensor> parents{input, kernel};
    if (bias.defined()) parents.push_back(bias);
    return make_result("conv3d", {g.n, g.f, g.od, g.oh, g.ow}, std::move(out), std::move(parents), [g](Node& self) {
        Node& px = *self.parents[0];
        Node& pk = *self.parents[1];
        Node* pb = self.parents.size() > 2 ? self.parents[2].get() : nullptr;
        const std::size_t in_vol = g.d * g.h * g.w, out_vol = g.od * g.oh * g.ow, ck = g.c * g.kd * g.kh * g.kw;
        std::vector<double> gx(px.requires_grad ? px.data.size() : 0, 0.0);
        std::vector<double> gk(pk.requires_grad ? pk.data.size() : 0, 0.0);
        std::vector<double> cols(ck * out_vol);
        for (std::size_t b = 0; b < g.n; ++b) {
            const double* go = self.grad.data() + b * g.f * out_vol;
            if (pk.requires_grad) {
                im2col(g, g.c, px.data.data() + b * g.c * in_vol, cols.data());
                gemm_nt(g.f, ck, out_vol, go, cols.data(), gk.data());
            }
            if (px.requires_grad) {
                std::fill(cols.begin(), cols.end(), 0.0);
                gemm_tn(ck, out_vol, g.f, pk.data.data(), go, cols.data());
                col2im(g, g.c, cols.data(), gx.data() + b * g.c * in_vol);
            }
        }
        if (px.requires_grad) flush(px, gx);
        if (pk.requires_grad) flush(pk, gk);
        bias_backward(pb, self.grad, g.n, g.f, out_vol);
    });
}

Tensor conv_transpose3d(const Tensor& input, const Tensor& kernel, const Tensor& bias, Conv3dSpec spec) {
    if (input.rank() != 5) conv_error("conv_transpose3d", "input must be [N,C,D,H,W], got " + shape_str(input.shape()));
    if (kernel.rank() != 5) conv_error("conv_transpose3d", "kernel must be [C,F,kd,kh,kw], got " + shape_str(kernel.shape()));
    if (spec.stride == 0) conv_error("conv_transpose3d", "stride must be >= 1");
    // Reuse Geometry with the roles swapped: (d,h,w) is the output grid and
    // (od,oh,ow) the input grid, so valid_range applies unchanged.
    Geometry g{};
    g.n = input.dim(0), g.c = input.dim(1);
    g.od = input.dim(2), g.oh = input.dim(3), g.ow = input.dim(4);
    g.f = kernel.dim(1), g.kd = kernel.dim(2), g.kh = kernel.dim(3), g.kw = kernel.dim(4);
    g.stride = spec.stride, g.pad = spec.padding;
    if (kernel.dim(0) != g.c) {
        conv_error("conv_transpose3d", "kernel expects " + std::to_string(kernel.dim(0)) + " channels, input has " + std::to_string(g.c));
    }
    auto extent = [&](std::size_t in, std::size_t k) -> std::size_t {
        const std::size_t full = (in - 1) * g.stride + k;
        if (full <= 2 * g.pad) conv_error("conv_transpose3d", "padding too large for input " + shape_str(input.shape()));
        return full - 2 * g.pad;
    };
    g.d = extent(g.od, g.kd), g.h = extent(g.oh, g.kh), g.w = extent(g.ow, g.kw);
    if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != g.f)) conv_error("conv_transpose3d", "bias must be [F]");

    // Forward of a transposed convolution is the input-gradient of conv3d
    // under geometry g: columns = W^T x, then col2im onto the output grid.
    const std::size_t in_vol = g.od * g.oh * g.ow, out_vol = g.d * g.h * g.w, fk = g.f * g.kd * g.kh * g.kw;
    const double* in = input.data().data();
    const double* wt = kernel.data().data();
    std::vector<double> out(g.n * g.f * out_vol, 0.0);
    std::vector<double> cols(fk * in_vol);
    for (std::size_t b = 0; b < g.n; ++b) {
        double* o = out.data() + b * g.f * out_vol;
        std::fill(cols.begin(), cols.end(), 0.0);
        gemm_tn(fk, in_vol, g.c, wt, in + b * g.c * in_vol, cols.data());
        col2im(g, g.f, cols.data(), o);
        if (bias.defined()) {
            for (std::size_t f = 0; f < g.f; ++f) {
                const double bv = bias.data()[f];
                for (std::size_t i = 0; i < out_vol; ++i) o[f * out_vol + i] += bv;
            }
        }
    }
    std::vector<Tensor> parents{input, kernel};
    if (bias.defined()) parents.push_back(bias);
    return make_result("conv_transpose3d", {g.n, g.f, g.d, g.h, g.w}, std::move(out), std::move(parents), [g](Node& self) {
        Node& px = *self.parents[0];
        Node& pk = *self.parents[1];
        Node* pb = self.parents.size() > 2 ? self.parents[2].get() : nullptr;
        const std::size_t in_vol = g.od * g.oh * g.ow, out_vol = g.d * g.h * g.w, fk = g.f * g.kd * g.kh * g.kw;
        std::vector<double> gx(px.requires_grad ? px.data.size() : 0, 0.0);
        std::vector<double> gk(pk.requires_grad ? pk.data.size() : 0, 0.0);
        std::vector<double> cols(fk * in_vol);
        for (std::size_t b = 0; b < g.n; ++b) {
            im2col(g, g.f, self.grad.data() + b * g.f * out_vol, cols.data());
            if (px.requires_grad) gemm_nn(g.c, in_vol, fk, pk.data.data(), cols.data(), gx.data() + b * g.c * in_vol);
            if (pk.requires_grad) gemm_nt(g.c, fk, in_vol, px.data.data() + b * g.c * in_vol, cols.data(), gk.data());
        }
        if (px.requires_grad) flush(px, gx);
        if (pk.requires_grad) flush(pk, gk);
        bias_backward(pb, self.grad, g.n, g.f, out_vol);
    });
}

namespace {

struct PoolGeometry {
    std::size_t planes, d, h, w, od, oh, ow, k, s;
};

PoolGeometry pool_geometry(const char* op, const Tensor& x, std::size_t k, std::size_t s) {
    if (x.rank() != 5) conv_error(op, "input must be [N,C,D,H,W], got " + shape_str(x.shape()));
    if (k == 0 || s == 0) conv_error(op, "kernel and stride must be >= 1");
    PoolGeometry g{x.dim(0) * x.dim(1), x.dim(2), x.dim(3), x.dim(4), 0, 0, 0, k, s};
    if (k > g.d || k > g.h || k > g.w) conv_error(op, "kernel larger than input " + shape_str(x.shape()));
    g.od = (g.d - k) / s + 1;
    g.oh = (g.h - k) / s + 1;
    g.ow = (g.w - k) / s + 1;
    return g;
}

}  // namespace

Tensor max_pool3d(const Tensor& input, std::size_t kernel, std::size_t stride) {
    const auto g = pool_geometry("max_pool3d", input, kernel, stride);
    const auto x = input.data();
    const std::size_t in_vol = g.d * g.h * g.w, out_vol = g.od * g.oh * g.ow;
    std::vector<double> out(g.planes * out_vol);
    auto argmax = std::make_shared<std::vector<std::size_t>>(out.size());
    for (std::size_t p = 0; p < g.planes; ++p) {
        for (std::size_t od = 0; od < g.od; ++od) {
            for (std::size_t oh = 0; oh < g.oh; ++oh) {
                for (std::size_t ow = 0; ow < g.ow; ++ow) {
                    double best = -std::numeric_limits<double>::infinity();
                    std::size_t best_i = 0;
                    for (std::size_t a = 0; a < g.k; ++a) {
                        for (std::size_t b = 0; b < g.k; ++b) {
                            for (std::size_t c = 0; c < g.k; ++c) {
                                const std::size_t i = p * in_vol + ((od * g.s + a) * g.h + oh * g.s + b) * g.w + ow * g.s + c;
                                if (x[i] > best) {
                                    best = x[i];
                                    best_i = i;
                                }
                            }
                        }
                    }
                    const std::size_t o = p * out_vol + (od * g.oh + oh) * g.ow + ow;
                    out[o] = best;
                    (*argmax)[o] = best_i;
                }
            }
        }
    }
    if (BranchTrace::active()) {
        for (std::size_t i : *argmax) BranchTrace::mix(i);
    }
    Shape shape{input.dim(0), input.dim(1), g.od, g.oh, g.ow};
    return make_result("max_pool3d", shape, std::move(out), {input}, [argmax](Node& self) {
        Node& p = *self.parents[0];
        for (std::size_t o = 0; o < self.data.size(); ++o) p.accumulate((*argmax)[o], self.grad[o]);
    });
}

Tensor avg_pool3d(const Tensor& input, std::size_t kernel, std::size_t stride) {
    const auto g = pool_geometry("avg_pool3d", input, kernel, stride);
    const auto x = input.data();
    const std::size_t in_vol = g.d * g.h * g.w, out_vol = g.od * g.oh * g.ow;
    const double inv = 1.0 / static_cast<double>(g.k * g.k * g.k);
    auto for_window = [g, in_vol](std::size_t p, std::size_t od, std::size_t oh, std::size_t ow, auto&& fn) {
        for (std::size_t a = 0; a < g.k; ++a)
            for (std::size_t b = 0; b < g.k; ++b)
                for (std::size_t c = 0; c < g.k; ++c)
                    fn(p * in_vol + ((od * g.s + a) * g.h + oh * g.s + b) * g.w + ow * g.s + c);
    };
    std::vector<double> out(g.planes * out_vol);
    for (std::size_t p = 0; p < g.planes; ++p)
        for (std::size_t od = 0; od < g.od; ++od)
            for (std::size_t oh = 0; oh < g.oh; ++oh)
                for (std::size_t ow = 0; ow < g.ow; ++ow) {
                    double acc = 0.0;
                    for_window(p, od, oh, ow, [&](std::size_t i) { acc += x[i]; });
                    out[p * out_vol + (od * g.oh + oh) * g.ow + ow] = acc * inv;
                }
    Shape shape{input.dim(0), input.dim(1), g.od, g.oh, g.ow};
    return make_result("avg_pool3d", shape, std::move(out), {input}, [g, out_vol, inv, for_window](Node& self) {
        Node& par = *self.parents[0];
        for (std::size_t p = 0; p < g.planes; ++p)
            for (std::size_t od = 0; od < g.od; ++od)
                for (std::size_t oh = 0; oh < g.oh; ++oh)
                    for (std::size_t ow = 0; ow < g.ow; ++ow) {
                        const double gv = self.grad[p * out_vol + (od * g.oh + oh) * g.ow + ow] * inv;
                        for_window(p, od, oh, ow, [&](std::size_t i) { par.accumulate(i, gv); });
                    }
    });
}

Tensor global_avg_pool3d(const Tensor& input) {
    if (input.rank() != 5) conv_error("global_avg_pool3d", "input must be [N,C,D,H,W], got " + shape_str(input.shape()));
    const std::size_t n = input.dim(0), c = input.dim(1);
    const std::size_t vol = input.dim(2) * input.dim(3) * input.dim(4);
    const auto x = input.data();
    const double inv = 1.0 / static_cast<double>(vol);
    std::vector<double> out(n * c);
    for (std::size_t p = 0; p < n * c; ++p) {
        double acc = 0.0;
        for (std::size_t i = 0; i < vol; ++i) acc += x[p * vol + i];
        out[p] = acc * inv;
    }
    return make_result("global_avg_pool3d", {n, c}, std::move(out), {input}, [vol, inv](Node& self) {
        Node& par = *self.parents[0];
        for (std::size_t p = 0; p < self.data.size(); ++p) {
            const double gv = self.grad[p] * inv;
            for (std::size_t i = 0; i < vol; ++i) par.accumulate(p * vol + i, gv);
        }
    });
}

}  // namespace itcfn::ops
