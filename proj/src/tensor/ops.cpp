#include "itcfn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace itcfn::ops {

namespace {

[[noreturn]] void shape_error(const char* op, const std::string& what) {
    throw std::invalid_argument(std::string(op) + ": " + what);
}

// Maps every output element of a broadcast binary op to its source offsets.
struct BroadcastPlan {
    Shape out;
    std::vector<std::size_t> a_off;
    std::vector<std::size_t> b_off;
    bool same = false;
};

BroadcastPlan plan_broadcast(const char* op, const Shape& a, const Shape& b) {
    BroadcastPlan plan;
    if (a == b) {
        plan.out = a;
        plan.same = true;
        return plan;
    }
    const std::size_t r = std::max(a.size(), b.size());
    Shape pa(r, 1), pb(r, 1);
    std::copy(a.begin(), a.end(), pa.begin() + (r - a.size()));
    std::copy(b.begin(), b.end(), pb.begin() + (r - b.size()));
    plan.out.resize(r);
    for (std::size_t i = 0; i < r; ++i) {
        if (pa[i] != pb[i] && pa[i] != 1 && pb[i] != 1) {
            shape_error(op, "cannot broadcast " + shape_str(a) + " with " + shape_str(b));
        }
        plan.out[i] = std::max(pa[i], pb[i]);
    }
    auto strides = [r](const Shape& s) {
        std::vector<std::size_t> st(r, 0);
        std::size_t acc = 1;
        for (std::size_t i = r; i-- > 0;) {
            st[i] = s[i] == 1 ? 0 : acc;
            acc *= s[i];
        }
        return st;
    };
    const auto sa = strides(pa);
    const auto sb = strides(pb);
    const std::size_t n = shape_numel(plan.out);
    plan.a_off.resize(n);
    plan.b_off.resize(n);
    std::vector<std::size_t> idx(r, 0);
    std::size_t oa = 0, ob = 0;
    for (std::size_t k = 0; k < n; ++k) {
        plan.a_off[k] = oa;
        plan.b_off[k] = ob;
        for (std::size_t i = r; i-- > 0;) {
            ++idx[i];
            oa += sa[i];
            ob += sb[i];
            if (idx[i] < plan.out[i]) break;
            oa -= sa[i] * idx[i];
            ob -= sb[i] * idx[i];
            idx[i] = 0;
        }
    }
    return plan;
}

// f(a, b) -> value; da(a, b, y) and db(a, b, y) -> partial derivatives.
template <class F, class DA, class DB>
Tensor binary(const char* op, const Tensor& a, const Tensor& b, F f, DA da, DB db) {
    auto plan = std::make_shared<BroadcastPlan>(plan_broadcast(op, a.shape(), b.shape()));
    const auto ad = a.data();
    const auto bd = b.data();
    const std::size_t n = shape_numel(plan->out);
    std::vector<double> out(n);
    if (plan->same) {
        for (std::size_t k = 0; k < n; ++k) out[k] = f(ad[k], bd[k]);
    } else {
        for (std::size_t k = 0; k < n; ++k) out[k] = f(ad[plan->a_off[k]], bd[plan->b_off[k]]);
    }
    return make_result(op, plan->out, std::move(out), {a, b}, [plan, da, db](Node& self) {
        Node& pa = *self.parents[0];
        Node& pb = *self.parents[1];
        const std::size_t n = self.data.size();
        for (std::size_t k = 0; k < n; ++k) {
            const std::size_t ia = plan->same ? k : plan->a_off[k];
            const std::size_t ib = plan->same ? k : plan->b_off[k];
            const double g = self.grad[k];
            if (pa.requires_grad) pa.accumulate(ia, g * da(pa.data[ia], pb.data[ib], self.data[k]));
            if (pb.requires_grad) pb.accumulate(ib, g * db(pa.data[ia], pb.data[ib], self.data[k]));
        }
    });
}

// f(x) -> y; d(x, y) -> dy/dx.
template <class F, class D>
Tensor unary(const char* op, const Tensor& x, F f, D d) {
    const auto xd = x.data();
    std::vector<double> out(xd.size());
    for (std::size_t i = 0; i < xd.size(); ++i) out[i] = f(xd[i]);
    return make_result(op, x.shape(), std::move(out), {x}, [d](Node& self) {
        Node& p = *self.parents[0];
        for (std::size_t i = 0; i < self.data.size(); ++i) {
            p.accumulate(i, self.grad[i] * d(p.data[i], self.data[i]));
        }
    });
}

// Splits a shape around `axis` into (outer, axis extent, inner).
struct AxisSplit {
    std::size_t outer = 1, extent = 1, inner = 1;
};

AxisSplit split_axis(const char* op, const Shape& s, std::size_t axis) {
    if (axis >= s.size()) shape_error(op, "axis " + std::to_string(axis) + " invalid for " + shape_str(s));
    AxisSplit r;
    for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
    r.extent = s[axis];
    for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
    return r;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    return binary(
        "add", a, b, [](double x, double y) { return x + y; }, [](double, double, double) { return 1.0; },
        [](double, double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary(
        "sub", a, b, [](double x, double y) { return x - y; }, [](double, double, double) { return 1.0; },
        [](double, double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary(
        "mul", a, b, [](double x, double y) { return x * y; }, [](double, double y, double) { return y; },
        [](double x, double, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
    return binary(
        "div", a, b, [](double x, double y) { return x / y; },
        [](double, double y, double) { return 1.0 / y; }, [](double x, double y, double) { return -x / (y * y); });
}

Tensor add_scalar(const Tensor& a, double c) {
    return unary(
        "add_scalar", a, [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

Tensor mul_scalar(const Tensor& a, double c) {
    return unary(
        "mul_scalar", a, [c](double x) { return x * c; }, [c](double, double) { return c; });
}

Tensor neg(const Tensor& a) {
    return unary(
        "neg", a, [](double x) { return -x; }, [](double, double) { return -1.0; });
}

static void trace_signs(const Tensor& x) {
    if (!BranchTrace::active()) return;
    for (double v : x.data()) BranchTrace::mix(v > 0.0 ? 1 : 0);
}

Tensor relu(const Tensor& x) {
    trace_signs(x);
    return unary(
        "relu", x, [](double v) { return v > 0.0 ? v : 0.0; }, [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor leaky_relu(const Tensor& x, double slope) {
    trace_signs(x);
    return unary(
        "leaky_relu", x, [slope](double v) { return v > 0.0 ? v : slope * v; },
        [slope](double v, double) { return v > 0.0 ? 1.0 : slope; });
}

Tensor tanh(const Tensor& x) {
    return unary(
        "tanh", x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor sigmoid(const Tensor& x) {
    return unary(
        "sigmoid", x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
        [](double, double y) { return y * (1.0 - y); });
}

Tensor exp(const Tensor& x) {
    return unary(
        "exp", x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
    return unary(
        "log", x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor abs(const Tensor& x) {
    trace_signs(x);
    return unary(
        "abs", x, [](double v) { return std::fabs(v); },
        [](double v, double) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

Tensor square(const Tensor& x) {
    return unary(
        "square", x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Tensor sqrt(const Tensor& x) {
    return unary(
        "sqrt", x, [](double v) { return std::sqrt(v); }, [](double, double y) { return y > 0.0 ? 0.5 / y : 0.0; });
}

Tensor pow(const Tensor& x, double exponent) {
    return unary(
        "pow", x, [exponent](double v) { return std::pow(v, exponent); },
        [exponent](double v, double) {
            if (exponent == 0.0) return 0.0;
            if (v == 0.0) return exponent == 1.0 ? 1.0 : 0.0;
            return exponent * std::pow(v, exponent - 1.0);
        });
}

Tensor sum(const Tensor& x) {
    double acc = 0.0;
    for (double v : x.data()) acc += v;
    return make_result("sum", {}, {acc}, {x}, [](Node& self) {
        Node& p = *self.parents[0];
        const double g = self.grad[0];
        for (std::size_t i = 0; i < p.data.size(); ++i) p.accumulate(i, g);
    });
}

Tensor mean(const Tensor& x) {
    const double n = static_cast<double>(x.numel());
    if (x.numel() == 0) throw std::invalid_argument("mean: empty tensor");
    double acc = 0.0;
    for (double v : x.data()) acc += v;
    return make_result("mean", {}, {acc / n}, {x}, [n](Node& self) {
        Node& p = *self.parents[0];
        const double g = self.grad[0] / n;
        for (std::size_t i = 0; i < p.data.size(); ++i) p.accumulate(i, g);
    });
}

namespace {

Tensor reduce_axis(const char* op, const Tensor& x, std::size_t axis, bool keepdim, double scale) {
    const auto sp = split_axis(op, x.shape(), axis);
    Shape out_shape = x.shape();
    if (keepdim) {
        out_shape[axis] = 1;
    } else {
        out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
    }
    const auto xd = x.data();
    std::vector<double> out(sp.outer * sp.inner, 0.0);
    for (std::size_t o = 0; o < sp.outer; ++o) {
        for (std::size_t a = 0; a < sp.extent; ++a) {
            const double* src = xd.data() + (o * sp.extent + a) * sp.inner;
            double* dst = out.data() + o * sp.inner;
            for (std::size_t i = 0; i < sp.inner; ++i) dst[i] += src[i];
        }
    }
    for (auto& v : out) v *= scale;
    return make_result(op, out_shape, std::move(out), {x}, [sp, scale](Node& self) {
        Node& p = *self.parents[0];
        for (std::size_t o = 0; o < sp.outer; ++o) {
            for (std::size_t a = 0; a < sp.extent; ++a) {
                for (std::size_t i = 0; i < sp.inner; ++i) {
                    p.accumulate((o * sp.extent + a) * sp.inner + i, self.grad[o * sp.inner + i] * scale);
                }
            }
        }
    });
}

}  // namespace

Tensor sum(const Tensor& x, std::size_t axis, bool keepdim) { return reduce_axis("sum_axis", x, axis, keepdim, 1.0); }

Tensor mean(const Tensor& x, std::size_t axis, bool keepdim) {
    if (axis >= x.rank() || x.dim(axis) == 0) shape_error("mean_axis", "invalid axis for " + shape_str(x.shape()));
    return reduce_axis("mean_axis", x, axis, keepdim, 1.0 / static_cast<double>(x.dim(axis)));
}

Tensor softmax(const Tensor& x, std::size_t axis) {
    const auto sp = split_axis("softmax", x.shape(), axis);
    const auto xd = x.data();
    std::vector<double> out(xd.size());
    for (std::size_t o = 0; o < sp.outer; ++o) {
        for (std::size_t i = 0; i < sp.inner; ++i) {
            const std::size_t base = o * sp.extent * sp.inner + i;
            double mx = -std::numeric_limits<double>::infinity();
            for (std::size_t a = 0; a < sp.extent; ++a) mx = std::max(mx, xd[base + a * sp.inner]);
            double z = 0.0;
            for (std::size_t a = 0; a < sp.extent; ++a) {
                const double e = std::exp(xd[base + a * sp.inner] - mx);
                out[base + a * sp.inner] = e;
                z += e;
            }
            for (std::size_t a = 0; a < sp.extent; ++a) out[base + a * sp.inner] /= z;
        }
    }
    return make_result("softmax", x.shape(), std::move(out), {x}, [sp](Node& self) {
        Node& p = *self.parents[0];
        for (std::size_t o = 0; o < sp.outer; ++o) {
            for (std::size_t i = 0; i < sp.inner; ++i) {
                const std::size_t base = o * sp.extent * sp.inner + i;
                double dot = 0.0;
                for (std::size_t a = 0; a < sp.extent; ++a) {
                    const std::size_t k = base + a * sp.inner;
                    dot += self.grad[k] * self.data[k];
                }
                for (std::size_t a = 0; a < sp.extent; ++a) {
                    const std::size_t k = base + a * sp.inner;
                    p.accumulate(k, self.data[k] * (self.grad[k] - dot));
                }
            }
        }
    });
}

Tensor layer_norm(const Tensor& x, double eps) {
    if (x.rank() == 0) shape_error("layer_norm", "needs rank >= 1");
    const std::size_t n = x.shape().back();
    const std::size_t rows = x.numel() / n;
    const auto xd = x.data();
    std::vector<double> out(xd.size());
    auto inv_std = std::make_shared<std::vector<double>>(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = xd.data() + r * n;
        double mu = 0.0;
        for (std::size_t i = 0; i < n; ++i) mu += row[i];
        mu /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t i = 0; i < n; ++i) var += (row[i] - mu) * (row[i] - mu);
        var /= static_cast<double>(n);
        const double is = 1.0 / std::sqrt(var + eps);
        (*inv_std)[r] = is;
        for (std::size_t i = 0; i < n; ++i) out[r * n + i] = (row[i] - mu) * is;
    }
    return make_result("layer_norm", x.shape(), std::move(out), {x}, [n, rows, inv_std](Node& self) {
        Node& p = *self.parents[0];
        const double dn = static_cast<double>(n);
        for (std::size_t r = 0; r < rows; ++r) {
            const double* g = self.grad.data() + r * n;
            const double* y = self.data.data() + r * n;
            double gm = 0.0, gy = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                gm += g[i];
                gy += g[i] * y[i];
            }
            gm /= dn;
            gy /= dn;
            for (std::size_t i = 0; i < n; ++i) p.accumulate(r * n + i, (*inv_std)[r] * (g[i] - gm - y[i] * gy));
        }
    });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() < 2 || a.rank() != b.rank()) {
        shape_error("matmul", "incompatible ranks " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    }
    const std::size_t r = a.rank();
    for (std::size_t i = 0; i + 2 < r; ++i) {
        if (a.dim(i) != b.dim(i)) shape_error("matmul", "batch dims differ: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    }
    const std::size_t m = a.dim(r - 2), k = a.dim(r - 1), n = b.dim(r - 1);
    if (b.dim(r - 2) != k) shape_error("matmul", "inner dims differ: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    const std::size_t batch = a.numel() / (m * k);
    Shape out_shape = a.shape();
    out_shape[r - 1] = n;
    const auto ad = a.data();
    const auto bd = b.data();
    std::vector<double> out(batch * m * n, 0.0);
    for (std::size_t s = 0; s < batch; ++s) {
        const double* A = ad.data() + s * m * k;
        const double* B = bd.data() + s * k * n;
        double* C = out.data() + s * m * n;
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                double acc = 0.0;
                for (std::size_t t = 0; t < k; ++t) acc += A[i * k + t] * B[t * n + j];
                C[i * n + j] = acc;
            }
        }
    }
    return make_result("matmul", out_shape, std::move(out), {a, b}, [batch, m, k, n](Node& self) {
        Node& pa = *self.parents[0];
        Node& pb = *self.parents[1];
        for (std::size_t s = 0; s < batch; ++s) {
            const double* G = self.grad.data() + s * m * n;
            const double* A = pa.data.data() + s * m * k;
            const double* B = pb.data.data() + s * k * n;
            if (pa.requires_grad) {
                for (std::size_t i = 0; i < m; ++i) {
                    for (std::size_t t = 0; t < k; ++t) {
                        double acc = 0.0;
                        for (std::size_t j = 0; j < n; ++j) acc += G[i * n + j] * B[t * n + j];
                        pa.accumulate(s * m * k + i * k + t, acc);
                    }
                }
            }
            if (pb.requires_grad) {
                for (std::size_t t = 0; t < k; ++t) {
                    for (std::size_t j = 0; j < n; ++j) {
                        double acc = 0.0;
                        for (std::size_t i = 0; i < m; ++i) acc += A[i * k + t] * G[i * n + j];
                        pb.accumulate(s * k * n + t * n + j, acc);
                    }
                }
            }
        }
    });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
    if (weight.rank() != 2 || x.rank() == 0 || x.shape().back() != weight.dim(1)) {
        shape_error("linear", "input " + shape_str(x.shape()) + " incompatible with weight " + shape_str(weight.shape()));
    }
    const std::size_t in = weight.dim(1), outf = weight.dim(0);
    if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != outf)) {
        shape_error("linear", "bias " + shape_str(bias.shape()) + " does not match " + std::to_string(outf) + " outputs");
    }
    const std::size_t rows = x.numel() / in;
    Shape out_shape = x.shape();
    out_shape.back() = outf;
    const auto xd = x.data();
    const auto wd = weight.data();
    std::vector<double> out(rows * outf);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = xd.data() + r * in;
        for (std::size_t o = 0; o < outf; ++o) {
            const double* wr = wd.data() + o * in;
            double acc = bias.defined() ? bias.data()[o] : 0.0;
            for (std::size_t i = 0; i < in; ++i) acc += xr[i] * wr[i];
            out[r * outf + o] = acc;
        }
    }
    std::vector<Tensor> parents{x, weight};
    if (bias.defined()) parents.push_back(bias);
    return make_result("linear", out_shape, std::move(out), std::move(parents), [rows, in, outf](Node& self) {
        Node& px = *self.parents[0];
        Node& pw = *self.parents[1];
        Node* pb = self.parents.size() > 2 ? self.parents[2].get() : nullptr;
        const double* G = self.grad.data();
        if (px.requires_grad) {
            std::vector<double> acc(in);
            for (std::size_t r = 0; r < rows; ++r) {
                std::fill(acc.begin(), acc.end(), 0.0);
                for (std::size_t o = 0; o < outf; ++o) {
                    const double g = G[r * outf + o];
                    const double* wr = pw.data.data() + o * in;
                    for (std::size_t i = 0; i < in; ++i) acc[i] += g * wr[i];
                }
                for (std::size_t i = 0; i < in; ++i) px.accumulate(r * in + i, acc[i]);
            }
        }
        if (pw.requires_grad) {
            std::vector<double> acc(outf * in, 0.0);
            for (std::size_t r = 0; r < rows; ++r) {
                const double* xr = px.data.data() + r * in;
                for (std::size_t o = 0; o < outf; ++o) {
                    const double g = G[r * outf + o];
                    double* ar = acc.data() + o * in;
                    for (std::size_t i = 0; i < in; ++i) ar[i] += g * xr[i];
                }
            }
            for (std::size_t j = 0; j < acc.size(); ++j) pw.accumulate(j, acc[j]);
        }
        if (pb && pb->requires_grad) {
            for (std::size_t o = 0; o < outf; ++o) {
                double acc = 0.0;
                for (std::size_t r = 0; r < rows; ++r) acc += G[r * outf + o];
                pb->accumulate(o, acc);
            }
        }
    });
}

Tensor reshape(const Tensor& x, const Shape& shape) {
    if (shape_numel(shape) != x.numel()) {
        shape_error("reshape", "cannot reshape " + shape_str(x.shape()) + " to " + shape_str(shape));
    }
    std::vector<double> out(x.data().begin(), x.data().end());
    return make_result("reshape", shape, std::move(out), {x}, [](Node& self) {
        Node& p = *self.parents[0];
        for (std::size_t i = 0; i < self.data.size(); ++i) p.accumulate(i, self.grad[i]);
    });
}

Tensor transpose(const Tensor& x, std::size_t axis_a, std::size_t axis_b) {
    const std::size_t r = x.rank();
    if (axis_a >= r || axis_b >= r) shape_error("transpose", "axes out of range for " + shape_str(x.shape()));
    Shape out_shape = x.shape();
    std::swap(out_shape[axis_a], out_shape[axis_b]);
    // Source stride for each output axis.
    std::vector<std::size_t> in_strides(r);
    std::size_t acc = 1;
    for (std::size_t i = r; i-- > 0;) {
        in_strides[i] = acc;
        acc *= x.dim(i);
    }
    std::swap(in_strides[axis_a], in_strides[axis_b]);
    const std::size_t n = x.numel();
    auto src = std::make_shared<std::vector<std::size_t>>(n);
    std::vector<std::size_t> idx(r, 0);
    std::size_t off = 0;
    for (std::size_t k = 0; k < n; ++k) {
        (*src)[k] = off;
        for (std::size_t i = r; i-- > 0;) {
            ++idx[i];
            off += in_strides[i];
            if (idx[i] < out_shape[i]) break;
            off -= in_strides[i] * idx[i];
            idx[i] = 0;
        }
    }
    const auto xd = x.data();
    std::vector<double> out(n);
    for (std::size_t k = 0; k < n; ++k) out[k] = xd[(*src)[k]];
    return make_result("transpose", out_shape, std::move(out), {x}, [src](Node& self) {
        Node& p = *self.parents[0];
        for (std::size_t k = 0; k < self.data.size(); ++k) p.accumulate((*src)[k], self.grad[k]);
    });
}

Tensor concat(const std::vector<Tensor>& xs, std::size_t axis) {
    if (xs.empty()) shape_error("concat", "no inputs");
    const Shape& first = xs.front().shape();
    if (axis >= first.size()) shape_error("concat", "axis out of range for " + shape_str(first));
    Shape out_shape = first;
    out_shape[axis] = 0;
    std::vector<std::size_t> extents;
    for (const auto& t : xs) {
        if (t.rank() != first.size()) shape_error("concat", "rank mismatch");
        for (std::size_t i = 0; i < first.size(); ++i) {
            if (i != axis && t.dim(i) != first[i]) {
                shape_error("concat", "shape " + shape_str(t.shape()) + " incompatible with " + shape_str(first));
            }
        }
        extents.push_back(t.dim(axis));
        out_shape[axis] += t.dim(axis);
    }
    const auto sp = split_axis("concat", out_shape, axis);
    std::vector<double> out(shape_numel(out_shape));
    std::size_t a0 = 0;
    for (std::size_t t = 0; t < xs.size(); ++t) {
        const auto d = xs[t].data();
        const std::size_t e = extents[t];
        for (std::size_t o = 0; o < sp.outer; ++o) {
            std::copy_n(d.data() + o * e * sp.inner, e * sp.inner, out.data() + (o * sp.extent + a0) * sp.inner);
        }
        a0 += e;
    }
    return make_result("concat", out_shape, std::move(out), xs, [sp, extents](Node& self) {
        std::size_t a0 = 0;
        for (std::size_t t = 0; t < self.parents.size(); ++t) {
            Node& p = *self.parents[t];
            const std::size_t e = extents[t];
            if (p.requires_grad) {
                for (std::size_t o = 0; o < sp.outer; ++o) {
                    for (std::size_t j = 0; j < e * sp.inner; ++j) {
                        p.accumulate(o * e * sp.inner + j, self.grad[(o * sp.extent + a0) * sp.inner + j]);
                    }
                }
            }
            a0 += e;
        }
    });
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length) {
    const auto sp = split_axis("slice", x.shape(), axis);
    if (start + length > sp.extent || length == 0) {
        shape_error("slice", "range [" + std::to_string(start) + ", " + std::to_string(start + length) +
                                 ") invalid for extent " + std::to_string(sp.extent));
    }
    Shape out_shape = x.shape();
    out_shape[axis] = length;
    const auto xd = x.data();
    std::vector<double> out(sp.outer * length * sp.inner);
    for (std::size_t o = 0; o < sp.outer; ++o) {
        std::copy_n(xd.data() + (o * sp.extent + start) * sp.inner, length * sp.inner, out.data() + o * length * sp.inner);
    }
    return make_result("slice", out_shape, std::move(out), {x}, [sp, start, length](Node& self) {
        Node& p = *self.parents[0];
        for (std::size_t o = 0; o < sp.outer; ++o) {
            for (std::size_t j = 0; j < length * sp.inner; ++j) {
                p.accumulate((o * sp.extent + start) * sp.inner + j, self.grad[o * length * sp.inner + j]);
            }
        }
    });
}

Tensor straight_through(const Tensor& source, const Tensor& value) {
    if (source.shape() != value.shape()) {
        shape_error("straight_through", shape_str(source.shape()) + " vs " + shape_str(value.shape()));
    }
    std::vector<double> out(value.data().begin(), value.data().end());
    return make_result("straight_through", value.shape(), std::move(out), {source}, [](Node& self) {
        Node& p = *self.parents[0];
        for (std::size_t i = 0; i < self.data.size(); ++i) p.accumulate(i, self.grad[i]);
    });
}

Tensor codebook_lookup(const Tensor& codebook, const std::vector<std::size_t>& indices, const Shape& grid) {
    if (codebook.rank() != 2) shape_error("codebook_lookup", "codebook must be [M, d]");
    if (grid.size() != 4 || shape_numel(grid) != indices.size()) {
        shape_error("codebook_lookup", "grid " + shape_str(grid) + " does not match " + std::to_string(indices.size()) + " indices");
    }
    const std::size_t m = codebook.dim(0), d = codebook.dim(1);
    const std::size_t n = grid[0];
    const std::size_t spatial = grid[1] * grid[2] * grid[3];
    for (auto i : indices) {
        if (i >= m) shape_error("codebook_lookup", "index " + std::to_string(i) + " out of range");
    }
    const auto cb = codebook.data();
    std::vector<double> out(n * d * spatial);
    for (std::size_t b = 0; b < n; ++b) {
        for (std::size_t s = 0; s < spatial; ++s) {
            const std::size_t code = indices[b * spatial + s];
            for (std::size_t c = 0; c < d; ++c) out[(b * d + c) * spatial + s] = cb[code * d + c];
        }
    }
    auto idx = std::make_shared<std::vector<std::size_t>>(indices);
    return make_result("codebook_lookup", {n, d, grid[1], grid[2], grid[3]}, std::move(out), {codebook},
                       [idx, n, d, spatial](Node& self) {
                           Node& p = *self.parents[0];
                           for (std::size_t b = 0; b < n; ++b) {
                               for (std::size_t s = 0; s < spatial; ++s) {
                                   const std::size_t code = (*idx)[b * spatial + s];
                                   for (std::size_t c = 0; c < d; ++c) {
                                       p.accumulate(code * d + c, self.grad[(b * d + c) * spatial + s]);
                                   }
                               }
                           }
                       });
}

}  // namespace itcfn::ops
