#include <cmath>

#include "sfa/autodiff/ops.hpp"

namespace sfa::ad {

namespace {

// out = f(x); backward uses d(x, y) = dy/dx evaluated from saved input/output values.
template <typename F, typename D>
Tensor unary(const Tensor& x, F f, D d) {
    const auto in = x.data();
    std::vector<float> out(in.size());
    for (std::size_t i = 0; i < in.size(); ++i) {
        out[i] = f(in[i]);
    }
    if (!grad_enabled() || !x.requires_grad()) {
        return Tensor(x.shape(), std::move(out));
    }
    std::vector<float> saved_out = out;
    return make_result(x.shape(), std::move(out), {x},
                       [x, y = std::move(saved_out), d](std::span<const float> g, GradSinks sinks) {
                           auto& gx = *sinks[0];
                           const auto xv = x.data();
                           for (std::size_t i = 0; i < g.size(); ++i) {
                               gx[i] += g[i] * d(xv[i], y[i]);
                           }
                       });
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    }
}

}  // namespace

Tensor relu(const Tensor& x) {
    return unary(
        x, [](float v) { return v > 0.0f ? v : 0.0f; },
        [](float v, float) { return v > 0.0f ? 1.0f : 0.0f; });
}

Tensor sigmoid(const Tensor& x) {
    return unary(
        x,
        [](float v) {
            if (v >= 0.0f) {
                return 1.0f / (1.0f + std::exp(-v));
            }
            const float e = std::exp(v);
            return e / (1.0f + e);
        },
        [](float, float y) { return y * (1.0f - y); });
}

Tensor softplus(const Tensor& x) {
    return unary(
        x,
        [](float v) {
            const double dv = v;
            return static_cast<float>(std::max(dv, 0.0) + std::log1p(std::exp(-std::abs(dv))));
        },
        [](float v, float) {
            const double dv = v;
            return static_cast<float>(dv >= 0 ? 1.0 / (1.0 + std::exp(-dv))
                                              : std::exp(dv) / (1.0 + std::exp(dv)));
        });
}

Tensor abs(const Tensor& x) {
    return unary(
        x, [](float v) { return std::fabs(v); },
        [](float v, float) { return v > 0.0f ? 1.0f : (v < 0.0f ? -1.0f : 0.0f); });
}

Tensor square(const Tensor& x) {
    return unary(
        x, [](float v) { return v * v; }, [](float v, float) { return 2.0f * v; });
}

Tensor log(const Tensor& x) {
    return unary(
        x, [](float v) { return std::log(v); }, [](float v, float) { return 1.0f / v; });
}

Tensor scale(const Tensor& x, float factor) {
    return unary(
        x, [factor](float v) { return v * factor; }, [factor](float, float) { return factor; });
}

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    const auto av = a.data();
    const auto bv = b.data();
    std::vector<float> out(av.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = av[i] + bv[i];
    }
    return make_result(a.shape(), std::move(out), {a, b}, [](std::span<const float> g, GradSinks sinks) {
        for (auto* sink : sinks) {
            if (sink) {
                for (std::size_t i = 0; i < g.size(); ++i) {
                    (*sink)[i] += g[i];
                }
            }
        }
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    const auto av = a.data();
    const auto bv = b.data();
    std::vector<float> out(av.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = av[i] - bv[i];
    }
    return make_result(a.shape(), std::move(out), {a, b}, [](std::span<const float> g, GradSinks sinks) {
        if (sinks[0]) {
            for (std::size_t i = 0; i < g.size(); ++i) {
                (*sinks[0])[i] += g[i];
            }
        }
        if (sinks[1]) {
            for (std::size_t i = 0; i < g.size(); ++i) {
                (*sinks[1])[i] -= g[i];
            }
        }
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    const auto av = a.data();
    const auto bv = b.data();
    std::vector<float> out(av.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = av[i] * bv[i];
    }
    return make_result(a.shape(), std::move(out), {a, b}, [a, b](std::span<const float> g, GradSinks sinks) {
        const auto av = a.data();
        const auto bv = b.data();
        if (sinks[0]) {
            for (std::size_t i = 0; i < g.size(); ++i) {
                (*sinks[0])[i] += g[i] * bv[i];
            }
        }
        if (sinks[1]) {
            for (std::size_t i = 0; i < g.size(); ++i) {
                (*sinks[1])[i] += g[i] * av[i];
            }
        }
    });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
    if (x.rank() != 2 || bias.rank() != 1 || x.dim(1) != bias.dim(0)) {
        throw ShapeError("add_bias: cannot broadcast " + shape_str(bias.shape()) + " over " +
                         shape_str(x.shape()));
    }
    const std::size_t rows = x.dim(0);
    const std::size_t cols = x.dim(1);
    const auto xv = x.data();
    const auto bv = bias.data();
    std::vector<float> out(xv.size());
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
            out[r * cols + c] = xv[r * cols + c] + bv[c];
        }
    }
    return make_result(x.shape(), std::move(out), {x, bias},
                       [rows, cols](std::span<const float> g, GradSinks sinks) {
                           if (sinks[0]) {
                               for (std::size_t i = 0; i < g.size(); ++i) {
                                   (*sinks[0])[i] += g[i];
                               }
                           }
                           if (sinks[1]) {
                               for (std::size_t r = 0; r < rows; ++r) {
                                   for (std::size_t c = 0; c < cols; ++c) {
                                       (*sinks[1])[c] += g[r * cols + c];
                                   }
                               }
                           }
                       });
}

Tensor grad_reverse(const Tensor& input, float scale_factor) {
    if (!std::isfinite(scale_factor)) {
        throw std::invalid_argument("grad_reverse: scale must be finite");
    }
    const auto in = input.data();
    std::vector<float> out(in.begin(), in.end());
    return make_result(input.shape(), std::move(out), {input},
                       [scale_factor](std::span<const float> g, GradSinks sinks) {
                           auto& gx = *sinks[0];
                           for (std::size_t i = 0; i < g.size(); ++i) {
                               gx[i] += scale_factor * g[i];
                           }
                       });
}

}  // namespace sfa::ad
