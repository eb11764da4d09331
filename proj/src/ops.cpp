#include "dahi/ops.hpp"

#include "dahi/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace dahi::ops {

namespace {

// View of a sequence tensor as [B, C, L].
struct SeqDims {
    std::size_t batch;
    std::size_t channels;
    std::size_t length;
    bool batched;
};

SeqDims seq_dims(const Tensor& x, const char* op) {
    const auto& s = x.shape();
    if (s.size() == 2) {
        return {1, s[0], s[1], false};
    }
    if (s.size() == 3) {
        return {s[0], s[1], s[2], true};
    }
    throw DimensionError(std::string(op) + ": expected [C, L] or [B, C, L], got " + shape_str(s));
}

Shape seq_shape(const SeqDims& d, std::size_t channels, std::size_t length) {
    if (d.batched) {
        return {d.batch, channels, length};
    }
    return {channels, length};
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    }
}

void require_vector(const Tensor& t, std::size_t n, const char* op, const char* what) {
    if (t.rank() != 1 || t.dim(0) != n) {
        throw DimensionError(std::string(op) + ": " + what + " must have shape [" + std::to_string(n) + "], got " +
                             shape_str(t.shape()));
    }
}

template <typename Fwd, typename Deriv>
Tensor unary(const char* op, const Tensor& a, Fwd fwd, Deriv deriv) {
    auto in = a.values();
    std::vector<double> out(in.size());
    for (std::size_t i = 0; i < in.size(); ++i) {
        out[i] = fwd(in[i]);
    }
    std::vector<double> cached = out;
    return Tensor::make_result(op, a.shape(), std::move(out), {a},
                               [a, cached = std::move(cached), deriv](std::span<const double> g) {
                                   auto* ga = grad_target(a);
                                   auto x = a.values();
                                   for (std::size_t i = 0; i < g.size(); ++i) {
                                       (*ga)[i] += g[i] * deriv(x[i], cached[i]);
                                   }
                               });
}

double gaussian_cdf(double x) { return 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2)); }

double gaussian_pdf(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi); }

// [outer, axis, inner] decomposition around one axis.
struct AxisSplit {
    std::size_t outer = 1;
    std::size_t axis = 1;
    std::size_t inner = 1;
};

AxisSplit split_axis(const Shape& s, std::size_t axis) {
    AxisSplit r;
    for (std::size_t i = 0; i < axis; ++i) {
        r.outer *= s[i];
    }
    r.axis = s[axis];
    for (std::size_t i = axis + 1; i < s.size(); ++i) {
        r.inner *= s[i];
    }
    return r;
}

template <typename Op>
Tensor last_axis_broadcast(const char* name, const Tensor& x, const Tensor& m, Op) {
    if (x.rank() == 0) {
        throw DimensionError(std::string(name) + ": scalar input has no last axis");
    }
    Shape expect(x.shape().begin(), x.shape().end() - 1);
    if (m.shape() != expect) {
        throw DimensionError(std::string(name) + ": broadcast operand must have shape " + shape_str(expect) +
                             ", got " + shape_str(m.shape()));
    }
    const std::size_t len = x.shape().back();
    const std::size_t rows = m.numel();
    auto xv = x.values();
    auto mv = m.values();
    std::vector<double> out(xv.size());
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t l = 0; l < len; ++l) {
            out[r * len + l] = Op::fwd(xv[r * len + l], mv[r]);
        }
    }
    return Tensor::make_result(name, x.shape(), std::move(out), {x, m}, [x, m, rows, len](std::span<const double> g) {
        auto xv = x.values();
        auto mv = m.values();
        auto* gx = grad_target(x);
        auto* gm = grad_target(m);
        for (std::size_t r = 0; r < rows; ++r) {
            double acc = 0.0;
            for (std::size_t l = 0; l < len; ++l) {
                const std::size_t i = r * len + l;
                if (gx) {
                    (*gx)[i] += g[i] * Op::dx(xv[i], mv[r]);
                }
                acc += g[i] * Op::dm(xv[i], mv[r]);
            }
            if (gm) {
                (*gm)[r] += acc;
            }
        }
    });
}

struct AddOp {
    static double fwd(double x, double m) { return x + m; }
    static double dx(double, double) { return 1.0; }
    static double dm(double, double) { return 1.0; }
};
struct SubOp {
    static double fwd(double x, double m) { return x - m; }
    static double dx(double, double) { return 1.0; }
    static double dm(double, double) { return -1.0; }
};
struct MulOp {
    static double fwd(double x, double m) { return x * m; }
    static double dx(double, double m) { return m; }
    static double dm(double x, double) { return x; }
};
struct DivOp {
    static double fwd(double x, double m) { return x / m; }
    static double dx(double, double m) { return 1.0 / m; }
    static double dm(double x, double m) { return -x / (m * m); }
};

} // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    auto av = a.values();
    auto bv = b.values();
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = av[i] + bv[i];
    }
    return Tensor::make_result("add", a.shape(), std::move(out), {a, b}, [a, b](std::span<const double> g) {
        for (const auto* t : {&a, &b}) {
            if (auto* gt = grad_target(*t)) {
                for (std::size_t i = 0; i < g.size(); ++i) {
                    (*gt)[i] += g[i];
                }
            }
        }
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    auto av = a.values();
    auto bv = b.values();
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = av[i] - bv[i];
    }
    return Tensor::make_result("sub", a.shape(), std::move(out), {a, b}, [a, b](std::span<const double> g) {
        if (auto* ga = grad_target(a)) {
            for (std::size_t i = 0; i < g.size(); ++i) {
                (*ga)[i] += g[i];
            }
        }
        if (auto* gb = grad_target(b)) {
            for (std::size_t i = 0; i < g.size(); ++i) {
                (*gb)[i] -= g[i];
            }
        }
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    auto av = a.values();
    auto bv = b.values();
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = av[i] * bv[i];
    }
    return Tensor::make_result("mul", a.shape(), std::move(out), {a, b}, [a, b](std::span<const double> g) {
        auto av = a.values();
        auto bv = b.values();
        if (auto* ga = grad_target(a)) {
            for (std::size_t i = 0; i < g.size(); ++i) {
                (*ga)[i] += g[i] * bv[i];
            }
        }
        if (auto* gb = grad_target(b)) {
            for (std::size_t i = 0; i < g.size(); ++i) {
                (*gb)[i] += g[i] * av[i];
            }
        }
    });
}

Tensor scale(const Tensor& a, double factor) {
    return unary("scale", a, [factor](double x) { return factor * x; },
                 [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& a, double offset) {
    return unary("add_scalar", a, [offset](double x) { return x + offset; }, [](double, double) { return 1.0; });
}

Tensor square(const Tensor& a) {
    return unary("square", a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Tensor sqrt(const Tensor& a) {
    for (double v : a.values()) {
        if (v < 0.0) {
            throw NumericalError("sqrt of negative value");
        }
    }
    return unary("sqrt", a, [](double x) { return std::sqrt(x); }, [](double, double y) { return 0.5 / y; });
}

Tensor exp(const Tensor& a) {
    return unary("exp", a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor sigmoid(const Tensor& a) {
    return unary(
        "sigmoid", a,
        [](double x) {
            if (x >= 0.0) {
                return 1.0 / (1.0 + std::exp(-x));
            }
            const double e = std::exp(x);
            return e / (1.0 + e);
        },
        [](double, double y) { return y * (1.0 - y); });
}

Tensor gelu(const Tensor& a) {
    return unary("gelu", a, [](double x) { return x * gaussian_cdf(x); },
                 [](double x, double) { return gaussian_cdf(x) + x * gaussian_pdf(x); });
}

Tensor sum(const Tensor& a) {
    double s = 0.0;
    for (double v : a.values()) {
        s += v;
    }
    return Tensor::make_result("sum", {}, {s}, {a}, [a](std::span<const double> g) {
        auto* ga = grad_target(a);
        for (auto& v : *ga) {
            v += g[0];
        }
    });
}

Tensor mean(const Tensor& a) {
    if (a.numel() == 0) {
        throw DimensionError("mean of empty tensor");
    }
    return scale(sum(a), 1.0 / static_cast<double>(a.numel()));
}

Tensor softmax(const Tensor& a) {
    if (a.rank() == 0) {
        throw DimensionError("softmax: scalar input");
    }
    const std::size_t len = a.shape().back();
    const std::size_t rows = a.numel() / std::max<std::size_t>(len, 1);
    auto av = a.values();
    std::vector<double> out(av.size());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* x = av.data() + r * len;
        double* y = out.data() + r * len;
        const double mx = *std::max_element(x, x + len);
        double z = 0.0;
        for (std::size_t j = 0; j < len; ++j) {
            y[j] = std::exp(x[j] - mx);
            z += y[j];
        }
        for (std::size_t j = 0; j < len; ++j) {
            y[j] /= z;
        }
    }
    std::vector<double> cached = out;
    return Tensor::make_result("softmax", a.shape(), std::move(out), {a},
                               [a, y = std::move(cached), rows, len](std::span<const double> g) {
                                   auto* ga = grad_target(a);
                                   for (std::size_t r = 0; r < rows; ++r) {
                                       double dot = 0.0;
                                       for (std::size_t j = 0; j < len; ++j) {
                                           dot += g[r * len + j] * y[r * len + j];
                                       }
                                       for (std::size_t j = 0; j < len; ++j) {
                                           (*ga)[r * len + j] += y[r * len + j] * (g[r * len + j] - dot);
                                       }
                                   }
                               });
}

Tensor mse(const Tensor& a, const Tensor& b) { return mean(square(sub(a, b))); }

Tensor reshape(const Tensor& a, Shape shape) {
    if (shape_numel(shape) != a.numel()) {
        throw DimensionError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
    }
    std::vector<double> out(a.values().begin(), a.values().end());
    return Tensor::make_result("reshape", std::move(shape), std::move(out), {a}, [a](std::span<const double> g) {
        auto* ga = grad_target(a);
        for (std::size_t i = 0; i < g.size(); ++i) {
            (*ga)[i] += g[i];
        }
    });
}

Tensor narrow(const Tensor& a, std::size_t axis, std::size_t start, std::size_t len) {
    const Shape& s = a.shape();
    if (axis >= s.size()) {
        throw DimensionError("narrow: axis " + std::to_string(axis) + " out of range for " + shape_str(s));
    }
    if (start + len > s[axis]) {
        throw IndexError("narrow: range [" + std::to_string(start) + ", " + std::to_string(start + len) +
                         ") exceeds axis size " + std::to_string(s[axis]));
    }
    const auto split = split_axis(s, axis);
    const std::size_t n = s[axis];
    Shape out_shape = s;
    out_shape[axis] = len;
    std::vector<double> out(shape_numel(out_shape));
    auto av = a.values();
    for (std::size_t o = 0; o < split.outer; ++o) {
        const double* src = av.data() + (o * n + start) * split.inner;
        std::copy(src, src + len * split.inner, out.data() + o * len * split.inner);
    }
    return Tensor::make_result("narrow", std::move(out_shape), std::move(out), {a},
                               [a, split, n, start, len](std::span<const double> g) {
                                   auto* ga = grad_target(a);
                                   if (!ga) {
                                       return;
                                   }
                                   for (std::size_t o = 0; o < split.outer; ++o) {
                                       for (std::size_t i = 0; i < len * split.inner; ++i) {
                                           (*ga)[(o * n + start) * split.inner + i] += g[o * len * split.inner + i];
                                       }
                                   }
                               });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
    if (parts.empty()) {
        throw DimensionError("concat: no inputs");
    }
    const Shape& first = parts.front().shape();
    if (axis >= first.size()) {
        throw DimensionError("concat: axis " + std::to_string(axis) + " out of range for " + shape_str(first));
    }
    std::size_t total_axis = 0;
    for (const auto& p : parts) {
        const Shape& s = p.shape();
        if (s.size() != first.size()) {
            throw DimensionError("concat: rank mismatch");
        }
        for (std::size_t i = 0; i < s.size(); ++i) {
            if (i != axis && s[i] != first[i]) {
                throw DimensionError("concat: shape mismatch on axis " + std::to_string(i) + ": " + shape_str(s) +
                                     " vs " + shape_str(first));
            }
        }
        total_axis += s[axis];
    }
    Shape out_shape = first;
    out_shape[axis] = total_axis;
    const auto split = split_axis(first, axis);
    std::vector<double> out(shape_numel(out_shape));
    std::size_t offset = 0;
    std::vector<std::size_t> offsets;
    for (const auto& p : parts) {
        offsets.push_back(offset);
        const std::size_t n = p.dim(axis);
        auto pv = p.values();
        for (std::size_t o = 0; o < split.outer; ++o) {
            for (std::size_t k = 0; k < n; ++k) {
                const double* src = pv.data() + (o * n + k) * split.inner;
                double* dst = out.data() + (o * total_axis + offset + k) * split.inner;
                std::copy(src, src + split.inner, dst);
            }
        }
        offset += n;
    }
    return Tensor::make_result(
        "concat", std::move(out_shape), std::move(out), parts,
        [parts, offsets, split, total_axis, axis](std::span<const double> g) {
            for (std::size_t pi = 0; pi < parts.size(); ++pi) {
                auto* gp = grad_target(parts[pi]);
                if (!gp) {
                    continue;
                }
                const std::size_t n = parts[pi].dim(axis);
                for (std::size_t o = 0; o < split.outer; ++o) {
                    for (std::size_t k = 0; k < n; ++k) {
                        const double* src = g.data() + (o * total_axis + offsets[pi] + k) * split.inner;
                        double* dst = gp->data() + (o * n + k) * split.inner;
                        for (std::size_t i = 0; i < split.inner; ++i) {
                            dst[i] += src[i];
                        }
                    }
                }
            }
        });
}

Tensor window_last(const Tensor& a, std::size_t out_len, std::ptrdiff_t offset) {
    if (a.rank() == 0) {
        throw DimensionError("window_last: scalar input");
    }
    const std::size_t len = a.shape().back();
    const std::size_t rows = a.numel() / std::max<std::size_t>(len, 1);
    Shape out_shape = a.shape();
    out_shape.back() = out_len;
    auto av = a.values();
    std::vector<double> out(rows * out_len, 0.0);
    auto source = [len, offset](std::size_t j) -> std::ptrdiff_t {
        const auto s = static_cast<std::ptrdiff_t>(j) + offset;
        return (s >= 0 && s < static_cast<std::ptrdiff_t>(len)) ? s : -1;
    };
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < out_len; ++j) {
            if (auto s = source(j); s >= 0) {
                out[r * out_len + j] = av[r * len + static_cast<std::size_t>(s)];
            }
        }
    }
    return Tensor::make_result("window_last", std::move(out_shape), std::move(out), {a},
                               [a, rows, len, out_len, source](std::span<const double> g) {
                                   auto* ga = grad_target(a);
                                   for (std::size_t r = 0; r < rows; ++r) {
                                       for (std::size_t j = 0; j < out_len; ++j) {
                                           if (auto s = source(j); s >= 0) {
                                               (*ga)[r * len + static_cast<std::size_t>(s)] += g[r * out_len + j];
                                           }
                                       }
                                   }
                               });
}

Tensor permute_groups(const Tensor& a, std::size_t outer, std::size_t inner) {
    const auto d = seq_dims(a, "permute_groups");
    if (outer * inner != d.channels) {
        throw DimensionError("permute_groups: " + std::to_string(outer) + "x" + std::to_string(inner) +
                             " does not match channel axis " + std::to_string(d.channels));
    }
    auto av = a.values();
    std::vector<double> out(av.size());
    auto dst_row = [outer, inner](std::size_t r) { return (r % inner) * outer + r / inner; };
    for (std::size_t b = 0; b < d.batch; ++b) {
        for (std::size_t r = 0; r < d.channels; ++r) {
            const double* src = av.data() + (b * d.channels + r) * d.length;
            std::copy(src, src + d.length, out.data() + (b * d.channels + dst_row(r)) * d.length);
        }
    }
    return Tensor::make_result("permute_groups", a.shape(), std::move(out), {a},
                               [a, d, dst_row](std::span<const double> g) {
                                   auto* ga = grad_target(a);
                                   for (std::size_t b = 0; b < d.batch; ++b) {
                                       for (std::size_t r = 0; r < d.channels; ++r) {
                                           const double* src = g.data() + (b * d.channels + dst_row(r)) * d.length;
                                           double* dst = ga->data() + (b * d.channels + r) * d.length;
                                           for (std::size_t l = 0; l < d.length; ++l) {
                                               dst[l] += src[l];
                                           }
                                       }
                                   }
                               });
}

Tensor mean_last(const Tensor& x) {
    if (x.rank() == 0 || x.shape().back() == 0) {
        throw DimensionError("mean_last: needs a non-empty last axis, got " + shape_str(x.shape()));
    }
    const std::size_t len = x.shape().back();
    const std::size_t rows = x.numel() / len;
    Shape out_shape(x.shape().begin(), x.shape().end() - 1);
    auto xv = x.values();
    std::vector<double> out(rows, 0.0);
    for (std::size_t r = 0; r < rows; ++r) {
        double s = 0.0;
        for (std::size_t l = 0; l < len; ++l) {
            s += xv[r * len + l];
        }
        out[r] = s / static_cast<double>(len);
    }
    return Tensor::make_result("mean_last", std::move(out_shape), std::move(out), {x},
                               [x, rows, len](std::span<const double> g) {
                                   auto* gx = grad_target(x);
                                   const double inv = 1.0 / static_cast<double>(len);
                                   for (std::size_t r = 0; r < rows; ++r) {
                                       for (std::size_t l = 0; l < len; ++l) {
                                           (*gx)[r * len + l] += g[r] * inv;
                                       }
                                   }
                               });
}

Tensor add_last(const Tensor& x, const Tensor& m) { return last_axis_broadcast("add_last", x, m, AddOp{}); }
Tensor sub_last(const Tensor& x, const Tensor& m) { return last_axis_broadcast("sub_last", x, m, SubOp{}); }
Tensor mul_last(const Tensor& x, const Tensor& m) { return last_axis_broadcast("mul_last", x, m, MulOp{}); }
Tensor div_last(const Tensor& x, const Tensor& m) { return last_axis_broadcast("div_last", x, m, DivOp{}); }

Tensor affine_channels(const Tensor& x, const Tensor& gamma, const Tensor& beta) {
    const auto d = seq_dims(x, "affine_channels");
    require_vector(gamma, d.channels, "affine_channels", "gamma");
    require_vector(beta, d.channels, "affine_channels", "beta");
    auto xv = x.values();
    auto gv = gamma.values();
    auto bv = beta.values();
    std::vector<double> out(xv.size());
    for (std::size_t b = 0; b < d.batch; ++b) {
        for (std::size_t c = 0; c < d.channels; ++c) {
            for (std::size_t l = 0; l < d.length; ++l) {
                const std::size_t i = (b * d.channels + c) * d.length + l;
                out[i] = gv[c] * xv[i] + bv[c];
            }
        }
    }
    return Tensor::make_result("affine_channels", x.shape(), std::move(out), {x, gamma, beta},
                               [x, gamma, beta, d](std::span<const double> g) {
                                   auto xv = x.values();
                                   auto gv = gamma.values();
                                   auto* gx = grad_target(x);
                                   auto* gg = grad_target(gamma);
                                   auto* gb = grad_target(beta);
                                   for (std::size_t b = 0; b < d.batch; ++b) {
                                       for (std::size_t c = 0; c < d.channels; ++c) {
                                           for (std::size_t l = 0; l < d.length; ++l) {
                                               const std::size_t i = (b * d.channels + c) * d.length + l;
                                               if (gx) {
                                                   (*gx)[i] += g[i] * gv[c];
                                               }
                                               if (gg) {
                                                   (*gg)[c] += g[i] * xv[i];
                                               }
                                               if (gb) {
                                                   (*gb)[c] += g[i];
                                               }
                                           }
                                       }
                                   }
                               });
}

Tensor affine_channels_inverse(const Tensor& y, const Tensor& gamma, const Tensor& beta) {
    const auto d = seq_dims(y, "affine_channels_inverse");
    require_vector(gamma, d.channels, "affine_channels_inverse", "gamma");
    require_vector(beta, d.channels, "affine_channels_inverse", "beta");
    auto yv = y.values();
    auto gv = gamma.values();
    auto bv = beta.values();
    for (double gval : gv) {
        if (gval == 0.0) {
            throw NumericalError("affine_channels_inverse: zero scale");
        }
    }
    std::vector<double> out(yv.size());
    for (std::size_t b = 0; b < d.batch; ++b) {
        for (std::size_t c = 0; c < d.channels; ++c) {
            for (std::size_t l = 0; l < d.length; ++l) {
                const std::size_t i = (b * d.channels + c) * d.length + l;
                out[i] = (yv[i] - bv[c]) / gv[c];
            }
        }
    }
    return Tensor::make_result("affine_channels_inverse", y.shape(), std::move(out), {y, gamma, beta},
                               [y, gamma, beta, d](std::span<const double> g) {
                                   auto yv = y.values();
                                   auto gv = gamma.values();
                                   auto bv = beta.values();
                                   auto* gy = grad_target(y);
                                   auto* gg = grad_target(gamma);
                                   auto* gb = grad_target(beta);
                                   for (std::size_t b = 0; b < d.batch; ++b) {
                                       for (std::size_t c = 0; c < d.channels; ++c) {
                                           for (std::size_t l = 0; l < d.length; ++l) {
                                               const std::size_t i = (b * d.channels + c) * d.length + l;
                                               if (gy) {
                                                   (*gy)[i] += g[i] / gv[c];
                                               }
                                               if (gg) {
                                                   (*gg)[c] -= g[i] * (yv[i] - bv[c]) / (gv[c] * gv[c]);
                                               }
                                               if (gb) {
                                                   (*gb)[c] -= g[i] / gv[c];
                                               }
                                           }
                                       }
                                   }
                               });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
    if (weight.rank() != 2) {
        throw DimensionError("linear: weight must be [out, in], got " + shape_str(weight.shape()));
    }
    const std::size_t out_f = weight.dim(0);
    const std::size_t in_f = weight.dim(1);
    std::size_t rows = 0;
    Shape out_shape;
    if (x.rank() == 1 && x.dim(0) == in_f) {
        rows = 1;
        out_shape = {out_f};
    } else if (x.rank() == 2 && x.dim(1) == in_f) {
        rows = x.dim(0);
        out_shape = {rows, out_f};
    } else {
        throw DimensionError("linear: input " + shape_str(x.shape()) + " incompatible with weight " +
                             shape_str(weight.shape()));
    }
    if (bias.defined()) {
        require_vector(bias, out_f, "linear", "bias");
    }
    auto xv = x.values();
    auto wv = weight.values();
    std::vector<double> out(rows * out_f);
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t o = 0; o < out_f; ++o) {
            double s = bias.defined() ? bias.values()[o] : 0.0;
            for (std::size_t i = 0; i < in_f; ++i) {
                s += wv[o * in_f + i] * xv[r * in_f + i];
            }
            out[r * out_f + o] = s;
        }
    }
    std::vector<Tensor> inputs{x, weight};
    if (bias.defined()) {
        inputs.push_back(bias);
    }
    return Tensor::make_result("linear", std::move(out_shape), std::move(out), std::move(inputs),
                               [x, weight, bias, rows, in_f, out_f](std::span<const double> g) {
                                   auto xv = x.values();
                                   auto wv = weight.values();
                                   auto* gx = grad_target(x);
                                   auto* gw = grad_target(weight);
                                   auto* gb = grad_target(bias);
                                   for (std::size_t r = 0; r < rows; ++r) {
                                       for (std::size_t o = 0; o < out_f; ++o) {
                                           const double go = g[r * out_f + o];
                                           if (gb) {
                                               (*gb)[o] += go;
                                           }
                                           for (std::size_t i = 0; i < in_f; ++i) {
                                               if (gx) {
                                                   (*gx)[r * in_f + i] += go * wv[o * in_f + i];
                                               }
                                               if (gw) {
                                                   (*gw)[o * in_f + i] += go * xv[r * in_f + i];
                                               }
                                           }
                                       }
                                   }
                               });
}

Tensor conv1d_depthwise(const Tensor& x, const Tensor& kernel, std::size_t stride, std::size_t padding,
                        const Tensor& bias) {
    const auto d = seq_dims(x, "conv1d_depthwise");
    if (kernel.rank() != 2 || kernel.dim(0) != d.channels) {
        throw DimensionError("conv1d_depthwise: kernel axis 0 must equal input channel axis (" +
                             std::to_string(d.channels) + "), kernel shape " + shape_str(kernel.shape()));
    }
    if (stride == 0) {
        throw ConfigError("conv1d_depthwise: stride must be >= 1");
    }
    const std::size_t k = kernel.dim(1);
    if (k == 0 || k > d.length + 2 * padding) {
        throw DimensionError("conv1d_depthwise: kernel length " + std::to_string(k) +
                             " exceeds padded input length axis " + std::to_string(d.length + 2 * padding));
    }
    if (bias.defined()) {
        require_vector(bias, d.channels, "conv1d_depthwise", "bias");
    }
    const std::size_t out_len = (d.length + 2 * padding - k) / stride + 1;
    auto xv = x.values();
    auto wv = kernel.values();
    std::vector<double> out(d.batch * d.channels * out_len);
    const auto pad = static_cast<std::ptrdiff_t>(padding);
    const auto len = static_cast<std::ptrdiff_t>(d.length);
    for (std::size_t b = 0; b < d.batch; ++b) {
        for (std::size_t c = 0; c < d.channels; ++c) {
            const double* xr = xv.data() + (b * d.channels + c) * d.length;
            const double* w = wv.data() + c * k;
            double* yr = out.data() + (b * d.channels + c) * out_len;
            const double b0 = bias.defined() ? bias.values()[c] : 0.0;
            for (std::size_t i = 0; i < out_len; ++i) {
                const std::ptrdiff_t start = static_cast<std::ptrdiff_t>(i * stride) - pad;
                double s = b0;
                for (std::size_t j = 0; j < k; ++j) {
                    const std::ptrdiff_t p = start + static_cast<std::ptrdiff_t>(j);
                    if (p >= 0 && p < len) {
                        s += w[j] * xr[p];
                    }
                }
                yr[i] = s;
            }
        }
    }
    std::vector<Tensor> inputs{x, kernel};
    if (bias.defined()) {
        inputs.push_back(bias);
    }
    return Tensor::make_result(
        "conv1d_depthwise", seq_shape(d, d.channels, out_len), std::move(out), std::move(inputs),
        [x, kernel, bias, d, k, stride, pad, len, out_len](std::span<const double> g) {
            auto xv = x.values();
            auto wv = kernel.values();
            auto* gx = grad_target(x);
            auto* gw = grad_target(kernel);
            auto* gb = grad_target(bias);
            for (std::size_t b = 0; b < d.batch; ++b) {
                for (std::size_t c = 0; c < d.channels; ++c) {
                    const std::size_t xo = (b * d.channels + c) * d.length;
                    const double* gr = g.data() + (b * d.channels + c) * out_len;
                    for (std::size_t i = 0; i < out_len; ++i) {
                        const double go = gr[i];
                        if (gb) {
                            (*gb)[c] += go;
                        }
                        const std::ptrdiff_t start = static_cast<std::ptrdiff_t>(i * stride) - pad;
                        for (std::size_t j = 0; j < k; ++j) {
                            const std::ptrdiff_t p = start + static_cast<std::ptrdiff_t>(j);
                            if (p < 0 || p >= len) {
                                continue;
                            }
                            if (gx) {
                                (*gx)[xo + static_cast<std::size_t>(p)] += go * wv[c * k + j];
                            }
                            if (gw) {
                                (*gw)[c * k + j] += go * xv[xo + static_cast<std::size_t>(p)];
                            }
                        }
                    }
                }
            }
        });
}

Tensor conv1d_pointwise(const Tensor& x, const Tensor& weight, std::size_t groups, const Tensor& bias) {
    const auto d = seq_dims(x, "conv1d_pointwise");
    if (groups == 0 || weight.rank() != 2) {
        throw ConfigError("conv1d_pointwise: groups must be >= 1 and weight must be [C_out, C_in/groups]");
    }
    const std::size_t c_out = weight.dim(0);
    if (d.channels % groups != 0 || c_out % groups != 0) {
        throw ConfigError("conv1d_pointwise: channels in=" + std::to_string(d.channels) +
                          " out=" + std::to_string(c_out) + " not divisible by groups=" + std::to_string(groups));
    }
    const std::size_t in_per = d.channels / groups;
    const std::size_t out_per = c_out / groups;
    if (weight.dim(1) != in_per) {
        throw DimensionError("conv1d_pointwise: weight axis 1 is " + std::to_string(weight.dim(1)) +
                             ", expected C_in/groups = " + std::to_string(in_per));
    }
    if (bias.defined()) {
        require_vector(bias, c_out, "conv1d_pointwise", "bias");
    }
    const std::size_t len = d.length;
    auto xv = x.values();
    auto wv = weight.values();
    std::vector<double> out(d.batch * c_out * len, 0.0);
    for (std::size_t b = 0; b < d.batch; ++b) {
        for (std::size_t o = 0; o < c_out; ++o) {
            const std::size_t in0 = (o / out_per) * in_per;
            double* yr = out.data() + (b * c_out + o) * len;
            if (bias.defined()) {
                std::fill(yr, yr + len, bias.values()[o]);
            }
            for (std::size_t i = 0; i < in_per; ++i) {
                const double w = wv[o * in_per + i];
                const double* xr = xv.data() + (b * d.channels + in0 + i) * len;
                for (std::size_t t = 0; t < len; ++t) {
                    yr[t] += w * xr[t];
                }
            }
        }
    }
    std::vector<Tensor> inputs{x, weight};
    if (bias.defined()) {
        inputs.push_back(bias);
    }
    return Tensor::make_result(
        "conv1d_pointwise", seq_shape(d, c_out, len), std::move(out), std::move(inputs),
        [x, weight, bias, d, c_out, in_per, out_per, len](std::span<const double> g) {
            auto xv = x.values();
            auto wv = weight.values();
            auto* gx = grad_target(x);
            auto* gw = grad_target(weight);
            auto* gb = grad_target(bias);
            for (std::size_t b = 0; b < d.batch; ++b) {
                for (std::size_t o = 0; o < c_out; ++o) {
                    const std::size_t in0 = (o / out_per) * in_per;
                    const double* gr = g.data() + (b * c_out + o) * len;
                    if (gb) {
                        double s = 0.0;
                        for (std::size_t t = 0; t < len; ++t) {
                            s += gr[t];
                        }
                        (*gb)[o] += s;
                    }
                    for (std::size_t i = 0; i < in_per; ++i) {
                        const std::size_t xo = (b * d.channels + in0 + i) * len;
                        if (gw) {
                            double s = 0.0;
                            for (std::size_t t = 0; t < len; ++t) {
                                s += gr[t] * xv[xo + t];
                            }
                            (*gw)[o * in_per + i] += s;
                        }
                        if (gx) {
                            const double w = wv[o * in_per + i];
                            for (std::size_t t = 0; t < len; ++t) {
                                (*gx)[xo + t] += w * gr[t];
                            }
                        }
                    }
                }
            }
        });
}

Tensor conv1d_transposed_depthwise(const Tensor& x, const Tensor& kernel, std::size_t stride) {
    const auto d = seq_dims(x, "conv1d_transposed_depthwise");
    if (kernel.rank() != 2 || kernel.dim(0) != d.channels) {
        throw DimensionError("conv1d_transposed_depthwise: kernel axis 0 must equal input channel axis (" +
                             std::to_string(d.channels) + "), kernel shape " + shape_str(kernel.shape()));
    }
    if (stride == 0) {
        throw ConfigError("conv1d_transposed_depthwise: stride must be >= 1");
    }
    const std::size_t k = kernel.dim(1);
    if (k == 0 || d.length == 0) {
        throw DimensionError("conv1d_transposed_depthwise: empty kernel or input length axis");
    }
    const std::size_t out_len = (d.length - 1) * stride + k;
    auto xv = x.values();
    auto wv = kernel.values();
    std::vector<double> out(d.batch * d.channels * out_len, 0.0);
    for (std::size_t b = 0; b < d.batch; ++b) {
        for (std::size_t c = 0; c < d.channels; ++c) {
            const double* xr = xv.data() + (b * d.channels + c) * d.length;
            const double* w = wv.data() + c * k;
            double* yr = out.data() + (b * d.channels + c) * out_len;
            for (std::size_t i = 0; i < d.length; ++i) {
                for (std::size_t j = 0; j < k; ++j) {
                    yr[i * stride + j] += w[j] * xr[i];
                }
            }
        }
    }
    return Tensor::make_result("conv1d_transposed_depthwise", seq_shape(d, d.channels, out_len), std::move(out),
                               {x, kernel}, [x, kernel, d, k, stride, out_len](std::span<const double> g) {
                                   auto xv = x.values();
                                   auto wv = kernel.values();
                                   auto* gx = grad_target(x);
                                   auto* gw = grad_target(kernel);
                                   for (std::size_t b = 0; b < d.batch; ++b) {
                                       for (std::size_t c = 0; c < d.channels; ++c) {
                                           const std::size_t xo = (b * d.channels + c) * d.length;
                                           const double* gr = g.data() + (b * d.channels + c) * out_len;
                                           for (std::size_t i = 0; i < d.length; ++i) {
                                               for (std::size_t j = 0; j < k; ++j) {
                                                   const double go = gr[i * stride + j];
                                                   if (gx) {
                                                       (*gx)[xo + i] += go * wv[c * k + j];
                                                   }
                                                   if (gw) {
                                                       (*gw)[c * k + j] += go * xv[xo + i];
                                                   }
                                               }
                                           }
                                       }
                                   }
                               });
}

Tensor patch_embed(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride) {
    const auto d = seq_dims(x, "patch_embed");
    if (weight.rank() != 2) {
        throw DimensionError("patch_embed: weight must be [d, P], got " + shape_str(weight.shape()));
    }
    const std::size_t width = weight.dim(0);
    const std::size_t patch = weight.dim(1);
    if (stride == 0) {
        throw ConfigError("patch_embed: stride must be >= 1");
    }
    if (patch == 0 || patch > d.length) {
        throw ConfigError("patch_embed: patch length " + std::to_string(patch) + " exceeds sequence length " +
                          std::to_string(d.length));
    }
    require_vector(bias, width, "patch_embed", "bias");
    const std::size_t n_patches = (d.length - patch) / stride + 1;
    const std::size_t rows = d.channels * width;
    auto xv = x.values();
    auto wv = weight.values();
    auto bv = bias.values();
    std::vector<double> out(d.batch * rows * n_patches);
    for (std::size_t b = 0; b < d.batch; ++b) {
        for (std::size_t c = 0; c < d.channels; ++c) {
            const double* xr = xv.data() + (b * d.channels + c) * d.length;
            for (std::size_t e = 0; e < width; ++e) {
                double* yr = out.data() + (b * rows + c * width + e) * n_patches;
                for (std::size_t n = 0; n < n_patches; ++n) {
                    double s = bv[e];
                    for (std::size_t p = 0; p < patch; ++p) {
                        s += wv[e * patch + p] * xr[n * stride + p];
                    }
                    yr[n] = s;
                }
            }
        }
    }
    return Tensor::make_result(
        "patch_embed", seq_shape(d, rows, n_patches), std::move(out), {x, weight, bias},
        [x, weight, bias, d, width, patch, stride, rows, n_patches](std::span<const double> g) {
            auto xv = x.values();
            auto wv = weight.values();
            auto* gx = grad_target(x);
            auto* gw = grad_target(weight);
            auto* gb = grad_target(bias);
            for (std::size_t b = 0; b < d.batch; ++b) {
                for (std::size_t c = 0; c < d.channels; ++c) {
                    const std::size_t xo = (b * d.channels + c) * d.length;
                    for (std::size_t e = 0; e < width; ++e) {
                        const double* gr = g.data() + (b * rows + c * width + e) * n_patches;
                        for (std::size_t n = 0; n < n_patches; ++n) {
                            const double go = gr[n];
                            if (gb) {
                                (*gb)[e] += go;
                            }
                            for (std::size_t p = 0; p < patch; ++p) {
                                if (gw) {
                                    (*gw)[e * patch + p] += go * xv[xo + n * stride + p];
                                }
                                if (gx) {
                                    (*gx)[xo + n * stride + p] += go * wv[e * patch + p];
                                }
                            }
                        }
                    }
                }
            }
        });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    if (x.rank() == 0) {
        throw DimensionError("layer_norm: scalar input");
    }
    // [outer, R, inner]: rank-3 normalizes axis 1, otherwise the last axis.
    const std::size_t axis = x.rank() == 3 ? 1 : x.rank() - 1;
    const auto sp = split_axis(x.shape(), axis);
    if (sp.axis == 0) {
        throw DimensionError("layer_norm: reduced axis has length 0");
    }
    if (gamma.defined()) {
        require_vector(gamma, sp.axis, "layer_norm", "gamma");
    }
    if (beta.defined()) {
        require_vector(beta, sp.axis, "layer_norm", "beta");
    }
    auto xv = x.values();
    std::vector<double> xhat(xv.size());
    std::vector<double> inv_std(sp.outer * sp.inner);
    std::vector<double> out(xv.size());
    const double n = static_cast<double>(sp.axis);
    for (std::size_t o = 0; o < sp.outer; ++o) {
        for (std::size_t in = 0; in < sp.inner; ++in) {
            auto idx = [&](std::size_t r) { return (o * sp.axis + r) * sp.inner + in; };
            double m = 0.0;
            for (std::size_t r = 0; r < sp.axis; ++r) {
                m += xv[idx(r)];
            }
            m /= n;
            double v = 0.0;
            for (std::size_t r = 0; r < sp.axis; ++r) {
                const double c = xv[idx(r)] - m;
                v += c * c;
            }
            v /= n;
            const double is = 1.0 / std::sqrt(v + eps);
            inv_std[o * sp.inner + in] = is;
            for (std::size_t r = 0; r < sp.axis; ++r) {
                const double h = (xv[idx(r)] - m) * is;
                xhat[idx(r)] = h;
                const double gmul = gamma.defined() ? gamma.values()[r] : 1.0;
                const double badd = beta.defined() ? beta.values()[r] : 0.0;
                out[idx(r)] = gmul * h + badd;
            }
        }
    }
    std::vector<Tensor> inputs{x};
    if (gamma.defined()) {
        inputs.push_back(gamma);
    }
    if (beta.defined()) {
        inputs.push_back(beta);
    }
    return Tensor::make_result(
        "layer_norm", x.shape(), std::move(out), std::move(inputs),
        [x, gamma, beta, sp, xhat = std::move(xhat), inv_std = std::move(inv_std)](std::span<const double> g) {
            auto* gx = grad_target(x);
            auto* gg = grad_target(gamma);
            auto* gb = grad_target(beta);
            const double n = static_cast<double>(sp.axis);
            for (std::size_t o = 0; o < sp.outer; ++o) {
                for (std::size_t in = 0; in < sp.inner; ++in) {
                    auto idx = [&](std::size_t r) { return (o * sp.axis + r) * sp.inner + in; };
                    double mean_dh = 0.0;
                    double mean_dh_h = 0.0;
                    for (std::size_t r = 0; r < sp.axis; ++r) {
                        const std::size_t i = idx(r);
                        const double gmul = gamma.defined() ? gamma.values()[r] : 1.0;
                        const double dh = g[i] * gmul;
                        mean_dh += dh;
                        mean_dh_h += dh * xhat[i];
                        if (gg) {
                            (*gg)[r] += g[i] * xhat[i];
                        }
                        if (gb) {
                            (*gb)[r] += g[i];
                        }
                    }
                    if (!gx) {
                        continue;
                    }
                    mean_dh /= n;
                    mean_dh_h /= n;
                    const double is = inv_std[o * sp.inner + in];
                    for (std::size_t r = 0; r < sp.axis; ++r) {
                        const std::size_t i = idx(r);
                        const double gmul = gamma.defined() ? gamma.values()[r] : 1.0;
                        (*gx)[i] += is * (g[i] * gmul - mean_dh - xhat[i] * mean_dh_h);
                    }
                }
            }
        });
}

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormState& state, Mode mode,
                  double eps) {
    const auto d = seq_dims(x, "batch_norm");
    require_vector(gamma, d.channels, "batch_norm", "gamma");
    require_vector(beta, d.channels, "batch_norm", "beta");
    if (state.running_mean.size() != d.channels || state.running_var.size() != d.channels) {
        throw DimensionError("batch_norm: running statistics sized for " + std::to_string(state.running_mean.size()) +
                             " channels, input channel axis is " + std::to_string(d.channels));
    }
    const std::size_t count = d.batch * d.length;
    if (count == 0) {
        throw DimensionError("batch_norm: empty reduction over (batch, length)");
    }
    auto xv = x.values();
    auto gv = gamma.values();
    auto bv = beta.values();
    std::vector<double> out(xv.size());
    auto idx = [d](std::size_t c, std::size_t k) {
        const std::size_t b = k / d.length;
        const std::size_t l = k % d.length;
        return (b * d.channels + c) * d.length + l;
    };

    if (mode == Mode::Eval) {
        std::vector<double> inv_std(d.channels);
        for (std::size_t c = 0; c < d.channels; ++c) {
            inv_std[c] = 1.0 / std::sqrt(state.running_var[c] + eps);
            for (std::size_t k = 0; k < count; ++k) {
                const std::size_t i = idx(c, k);
                out[i] = gv[c] * (xv[i] - state.running_mean[c]) * inv_std[c] + bv[c];
            }
        }
        std::vector<double> rmean = state.running_mean;
        return Tensor::make_result("batch_norm", x.shape(), std::move(out), {x, gamma, beta},
                                   [x, gamma, beta, d, count, idx, inv_std, rmean](std::span<const double> g) {
                                       auto xv = x.values();
                                       auto gv = gamma.values();
                                       auto* gx = grad_target(x);
                                       auto* gg = grad_target(gamma);
                                       auto* gb = grad_target(beta);
                                       for (std::size_t c = 0; c < d.channels; ++c) {
                                           for (std::size_t k = 0; k < count; ++k) {
                                               const std::size_t i = idx(c, k);
                                               const double h = (xv[i] - rmean[c]) * inv_std[c];
                                               if (gx) {
                                                   (*gx)[i] += g[i] * gv[c] * inv_std[c];
                                               }
                                               if (gg) {
                                                   (*gg)[c] += g[i] * h;
                                               }
                                               if (gb) {
                                                   (*gb)[c] += g[i];
                                               }
                                           }
                                       }
                                   });
    }

    std::vector<double> xhat(xv.size());
    std::vector<double> inv_std(d.channels);
    const double n = static_cast<double>(count);
    for (std::size_t c = 0; c < d.channels; ++c) {
        double m = 0.0;
        for (std::size_t k = 0; k < count; ++k) {
            m += xv[idx(c, k)];
        }
        m /= n;
        double v = 0.0;
        for (std::size_t k = 0; k < count; ++k) {
            const double t = xv[idx(c, k)] - m;
            v += t * t;
        }
        v /= n;
        inv_std[c] = 1.0 / std::sqrt(v + eps);
        for (std::size_t k = 0; k < count; ++k) {
            const std::size_t i = idx(c, k);
            xhat[i] = (xv[i] - m) * inv_std[c];
            out[i] = gv[c] * xhat[i] + bv[c];
        }
        const double unbiased = count > 1 ? v * n / (n - 1.0) : v;
        state.running_mean[c] = (1.0 - state.momentum) * state.running_mean[c] + state.momentum * m;
        state.running_var[c] = (1.0 - state.momentum) * state.running_var[c] + state.momentum * unbiased;
    }
    return Tensor::make_result(
        "batch_norm", x.shape(), std::move(out), {x, gamma, beta},
        [x, gamma, beta, d, count, idx, xhat = std::move(xhat), inv_std = std::move(inv_std)](
            std::span<const double> g) {
            auto gv = gamma.values();
            auto* gx = grad_target(x);
            auto* gg = grad_target(gamma);
            auto* gb = grad_target(beta);
            const double n = static_cast<double>(count);
            for (std::size_t c = 0; c < d.channels; ++c) {
                double mean_dh = 0.0;
                double mean_dh_h = 0.0;
                for (std::size_t k = 0; k < count; ++k) {
                    const std::size_t i = idx(c, k);
                    const double dh = g[i] * gv[c];
                    mean_dh += dh;
                    mean_dh_h += dh * xhat[i];
                    if (gg) {
                        (*gg)[c] += g[i] * xhat[i];
                    }
                    if (gb) {
                        (*gb)[c] += g[i];
                    }
                }
                if (!gx) {
                    continue;
                }
                mean_dh /= n;
                mean_dh_h /= n;
                for (std::size_t k = 0; k < count; ++k) {
                    const std::size_t i = idx(c, k);
                    (*gx)[i] += inv_std[c] * (g[i] * gv[c] - mean_dh - xhat[i] * mean_dh_h);
                }
            }
        });
}

Tensor dropout(const Tensor& x, double rate, Mode mode, std::mt19937_64& rng) {
    if (!(rate >= 0.0 && rate < 1.0)) {
        throw ConfigError("dropout: rate must lie in [0, 1), got " + std::to_string(rate));
    }
    if (mode == Mode::Eval || rate == 0.0) {
        return x;
    }
    std::bernoulli_distribution keep(1.0 - rate);
    const double inv_keep = 1.0 / (1.0 - rate);
    std::vector<double> mask(x.numel());
    for (auto& m : mask) {
        m = keep(rng) ? inv_keep : 0.0;
    }
    auto xv = x.values();
    std::vector<double> out(xv.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = xv[i] * mask[i];
    }
    return Tensor::make_result("dropout", x.shape(), std::move(out), {x},
                               [x, mask = std::move(mask)](std::span<const double> g) {
                                   auto* gx = grad_target(x);
                                   for (std::size_t i = 0; i < g.size(); ++i) {
                                       (*gx)[i] += g[i] * mask[i];
                                   }
                               });
}

namespace {

struct AttentionDims {
    std::size_t batch;
    std::size_t width;
    std::size_t nq;
    std::size_t nk;
    std::size_t heads;
    std::size_t head_dim;
};

AttentionDims attention_dims(const Tensor& q, const Tensor& k, const Tensor* v, std::size_t heads) {
    if (q.rank() != 3 || k.rank() != 3) {
        throw DimensionError("attention: q and k must be [B, E, N]");
    }
    if (q.dim(0) != k.dim(0) || q.dim(1) != k.dim(1)) {
        throw DimensionError("attention: q " + shape_str(q.shape()) + " and k " + shape_str(k.shape()) +
                             " disagree on batch or width axes");
    }
    if (v != nullptr && v->shape() != k.shape()) {
        throw DimensionError("attention: v " + shape_str(v->shape()) + " must match k " + shape_str(k.shape()));
    }
    if (heads == 0 || q.dim(1) % heads != 0) {
        throw ConfigError("attention: head count " + std::to_string(heads) + " does not divide width " +
                          std::to_string(q.dim(1)));
    }
    return {q.dim(0), q.dim(1), q.dim(2), k.dim(2), heads, q.dim(1) / heads};
}

// probs laid out [B, heads, nq, nk].
std::vector<double> compute_probs(const Tensor& q, const Tensor& k, const AttentionDims& a) {
    auto qv = q.values();
    auto kv = k.values();
    const double scale = 1.0 / std::sqrt(static_cast<double>(a.head_dim));
    std::vector<double> probs(a.batch * a.heads * a.nq * a.nk);
    std::vector<double> row(a.nk);
    for (std::size_t b = 0; b < a.batch; ++b) {
        for (std::size_t h = 0; h < a.heads; ++h) {
            for (std::size_t i = 0; i < a.nq; ++i) {
                double mx = -std::numeric_limits<double>::infinity();
                for (std::size_t j = 0; j < a.nk; ++j) {
                    double s = 0.0;
                    for (std::size_t e = h * a.head_dim; e < (h + 1) * a.head_dim; ++e) {
                        s += qv[(b * a.width + e) * a.nq + i] * kv[(b * a.width + e) * a.nk + j];
                    }
                    row[j] = s * scale;
                    mx = std::max(mx, row[j]);
                }
                double z = 0.0;
                for (std::size_t j = 0; j < a.nk; ++j) {
                    row[j] = std::exp(row[j] - mx);
                    z += row[j];
                }
                double* p = probs.data() + ((b * a.heads + h) * a.nq + i) * a.nk;
                for (std::size_t j = 0; j < a.nk; ++j) {
                    p[j] = row[j] / z;
                }
            }
        }
    }
    return probs;
}

} // namespace

std::vector<double> attention_probabilities(const Tensor& q, const Tensor& k, std::size_t heads) {
    return compute_probs(q, k, attention_dims(q, k, nullptr, heads));
}

Tensor multihead_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads) {
    const auto a = attention_dims(q, k, &v, heads);
    auto probs = compute_probs(q, k, a);
    auto vv = v.values();
    std::vector<double> out(a.batch * a.width * a.nq, 0.0);
    for (std::size_t b = 0; b < a.batch; ++b) {
        for (std::size_t h = 0; h < a.heads; ++h) {
            for (std::size_t i = 0; i < a.nq; ++i) {
                const double* p = probs.data() + ((b * a.heads + h) * a.nq + i) * a.nk;
                for (std::size_t e = h * a.head_dim; e < (h + 1) * a.head_dim; ++e) {
                    double s = 0.0;
                    for (std::size_t j = 0; j < a.nk; ++j) {
                        s += p[j] * vv[(b * a.width + e) * a.nk + j];
                    }
                    out[(b * a.width + e) * a.nq + i] = s;
                }
            }
        }
    }
    return Tensor::make_result(
        "multihead_attention", {a.batch, a.width, a.nq}, std::move(out), {q, k, v},
        [q, k, v, a, probs = std::move(probs)](std::span<const double> g) {
            auto qv = q.values();
            auto kv = k.values();
            auto vv = v.values();
            auto* gq = grad_target(q);
            auto* gk = grad_target(k);
            auto* gv = grad_target(v);
            const double scale = 1.0 / std::sqrt(static_cast<double>(a.head_dim));
            std::vector<double> dp(a.nk);
            for (std::size_t b = 0; b < a.batch; ++b) {
                for (std::size_t h = 0; h < a.heads; ++h) {
                    const std::size_t e0 = h * a.head_dim;
                    const std::size_t e1 = e0 + a.head_dim;
                    for (std::size_t i = 0; i < a.nq; ++i) {
                        const double* p = probs.data() + ((b * a.heads + h) * a.nq + i) * a.nk;
                        double dot = 0.0;
                        for (std::size_t j = 0; j < a.nk; ++j) {
                            double s = 0.0;
                            for (std::size_t e = e0; e < e1; ++e) {
                                const double go = g[(b * a.width + e) * a.nq + i];
                                s += go * vv[(b * a.width + e) * a.nk + j];
                                if (gv) {
                                    (*gv)[(b * a.width + e) * a.nk + j] += p[j] * go;
                                }
                            }
                            dp[j] = s;
                            dot += p[j] * s;
                        }
                        for (std::size_t j = 0; j < a.nk; ++j) {
                            const double ds = p[j] * (dp[j] - dot) * scale;
                            if (ds == 0.0) {
                                continue;
                            }
                            for (std::size_t e = e0; e < e1; ++e) {
                                if (gq) {
                                    (*gq)[(b * a.width + e) * a.nq + i] += ds * kv[(b * a.width + e) * a.nk + j];
                                }
                                if (gk) {
                                    (*gk)[(b * a.width + e) * a.nk + j] += ds * qv[(b * a.width + e) * a.nq + i];
                                }
                            }
                        }
                    }
                }
            }
        });
}

Tensor rbf_gram(const Tensor& x, const Tensor& y, double sigma) {
    if (!(sigma > 0.0)) {
        throw ConfigError("rbf_gram: sigma must be positive");
    }
    if (x.rank() != 2 || y.rank() != 2 || x.dim(1) != y.dim(1)) {
        throw DimensionError("rbf_gram: x " + shape_str(x.shape()) + " and y " + shape_str(y.shape()) +
                             " must be [n, f] and [m, f]");
    }
    const std::size_t n = x.dim(0);
    const std::size_t m = y.dim(0);
    const std::size_t f = x.dim(1);
    const double inv2s2 = 1.0 / (2.0 * sigma * sigma);
    auto xv = x.values();
    auto yv = y.values();
    std::vector<double> out(n * m);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < m; ++j) {
            double d2 = 0.0;
            for (std::size_t t = 0; t < f; ++t) {
                const double diff = xv[i * f + t] - yv[j * f + t];
                d2 += diff * diff;
            }
            out[i * m + j] = std::exp(-d2 * inv2s2);
        }
    }
    std::vector<double> gram = out;
    return Tensor::make_result("rbf_gram", {n, m}, std::move(out), {x, y},
                               [x, y, n, m, f, sigma, gram = std::move(gram)](std::span<const double> g) {
                                   auto xv = x.values();
                                   auto yv = y.values();
                                   auto* gx = grad_target(x);
                                   auto* gy = grad_target(y);
                                   const double inv_s2 = 1.0 / (sigma * sigma);
                                   for (std::size_t i = 0; i < n; ++i) {
                                       for (std::size_t j = 0; j < m; ++j) {
                                           const double c = g[i * m + j] * gram[i * m + j] * inv_s2;
                                           if (c == 0.0) {
                                               continue;
                                           }
                                           for (std::size_t t = 0; t < f; ++t) {
                                               const double diff = xv[i * f + t] - yv[j * f + t];
                                               if (gx) {
                                                   (*gx)[i * f + t] -= c * diff;
                                               }
                                               if (gy) {
                                                   (*gy)[j * f + t] += c * diff;
                                               }
                                           }
                                       }
                                   }
                               });
}

} // namespace dahi::ops
