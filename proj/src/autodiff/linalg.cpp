#include <Eigen/Core>
#include <cmath>

#include "sfa/autodiff/ops.hpp"

namespace sfa::ad {

namespace {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
        throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
    }
    const auto n = static_cast<Eigen::Index>(a.dim(0));
    const auto k = static_cast<Eigen::Index>(a.dim(1));
    const auto m = static_cast<Eigen::Index>(b.dim(1));
    std::vector<float> out(static_cast<std::size_t>(n * m));
    MutMap(out.data(), n, m).noalias() = ConstMap(a.data().data(), n, k) * ConstMap(b.data().data(), k, m);
    return make_result({a.dim(0), b.dim(1)}, std::move(out), {a, b},
                       [a, b, n, k, m](std::span<const float> g, GradSinks sinks) {
                           ConstMap gm(g.data(), n, m);
                           if (sinks[0]) {
                               MutMap(sinks[0]->data(), n, k).noalias() +=
                                   gm * ConstMap(b.data().data(), k, m).transpose();
                           }
                           if (sinks[1]) {
                               MutMap(sinks[1]->data(), k, m).noalias() +=
                                   ConstMap(a.data().data(), n, k).transpose() * gm;
                           }
                       });
}

Tensor transpose(const Tensor& x) {
    if (x.rank() != 2) {
        throw ShapeError("transpose expects a matrix, got " + shape_str(x.shape()));
    }
    const std::size_t r = x.dim(0);
    const std::size_t c = x.dim(1);
    const auto xv = x.data();
    std::vector<float> out(xv.size());
    for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < c; ++j) {
            out[j * r + i] = xv[i * c + j];
        }
    }
    return make_result({c, r}, std::move(out), {x}, [r, c](std::span<const float> g, GradSinks sinks) {
        auto& gx = *sinks[0];
        for (std::size_t i = 0; i < r; ++i) {
            for (std::size_t j = 0; j < c; ++j) {
                gx[i * c + j] += g[j * r + i];
            }
        }
    });
}

Tensor reshape(const Tensor& x, Shape shape) {
    if (numel_of(shape) != x.numel()) {
        throw ShapeError("reshape: " + shape_str(x.shape()) + " cannot become " + shape_str(shape));
    }
    const auto xv = x.data();
    return make_result(std::move(shape), std::vector<float>(xv.begin(), xv.end()), {x},
                       [](std::span<const float> g, GradSinks sinks) {
                           auto& gx = *sinks[0];
                           for (std::size_t i = 0; i < g.size(); ++i) {
                               gx[i] += g[i];
                           }
                       });
}

Tensor concat(const std::vector<Tensor>& parts) {
    if (parts.empty()) {
        throw ShapeError("concat of zero tensors");
    }
    const Shape& first = parts.front().shape();
    if (first.empty()) {
        throw ShapeError("concat needs tensors of rank >= 1");
    }
    Shape out_shape = first;
    out_shape[0] = 0;
    std::vector<std::size_t> offsets;
    std::size_t total = 0;
    for (const auto& p : parts) {
        const Shape& s = p.shape();
        if (s.size() != first.size() || !std::equal(s.begin() + 1, s.end(), first.begin() + 1)) {
            throw ShapeError("concat: " + shape_str(s) + " does not match " + shape_str(first));
        }
        out_shape[0] += s[0];
        offsets.push_back(total);
        total += p.numel();
    }
    std::vector<float> out;
    out.reserve(total);
    for (const auto& p : parts) {
        out.insert(out.end(), p.data().begin(), p.data().end());
    }
    std::vector<std::size_t> sizes;
    for (const auto& p : parts) {
        sizes.push_back(p.numel());
    }
    return make_result(std::move(out_shape), std::move(out), parts,
                       [offsets, sizes](std::span<const float> g, GradSinks sinks) {
                           for (std::size_t p = 0; p < sinks.size(); ++p) {
                               if (!sinks[p]) {
                                   continue;
                               }
                               for (std::size_t i = 0; i < sizes[p]; ++i) {
                                   (*sinks[p])[i] += g[offsets[p] + i];
                               }
                           }
                       });
}

Tensor take(const Tensor& x, std::span<const std::size_t> indices) {
    const auto xv = x.data();
    std::vector<float> out(indices.size());
    for (std::size_t i = 0; i < indices.size(); ++i) {
        if (indices[i] >= xv.size()) {
            throw ShapeError("take: index " + std::to_string(indices[i]) + " out of range for shape " +
                             shape_str(x.shape()));
        }
        out[i] = xv[indices[i]];
    }
    std::vector<std::size_t> idx(indices.begin(), indices.end());
    return make_result({idx.size()}, std::move(out), {x},
                       [idx](std::span<const float> g, GradSinks sinks) {
                           auto& gx = *sinks[0];
                           for (std::size_t i = 0; i < idx.size(); ++i) {
                               gx[idx[i]] += g[i];
                           }
                       });
}

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end) {
    if (x.rank() == 0 || begin > end || end > x.dim(0)) {
        throw ShapeError("slice_rows: [" + std::to_string(begin) + "," + std::to_string(end) +
                         ") invalid for shape " + shape_str(x.shape()));
    }
    const std::size_t row = x.numel() / x.dim(0);
    Shape shape = x.shape();
    shape[0] = end - begin;
    const auto xv = x.data();
    std::vector<float> out(xv.begin() + static_cast<std::ptrdiff_t>(begin * row),
                           xv.begin() + static_cast<std::ptrdiff_t>(end * row));
    const std::size_t offset = begin * row;
    return make_result(std::move(shape), std::move(out), {x},
                       [offset](std::span<const float> g, GradSinks sinks) {
                           auto& gx = *sinks[0];
                           for (std::size_t i = 0; i < g.size(); ++i) {
                               gx[offset + i] += g[i];
                           }
                       });
}

Tensor sum(const Tensor& x) {
    double acc = 0.0;
    for (float v : x.data()) {
        acc += v;
    }
    return make_result({}, {static_cast<float>(acc)}, {x}, [](std::span<const float> g, GradSinks sinks) {
        for (auto& v : *sinks[0]) {
            v += g[0];
        }
    });
}

Tensor mean(const Tensor& x) {
    if (x.numel() == 0) {
        throw ShapeError("mean of an empty tensor");
    }
    double acc = 0.0;
    for (float v : x.data()) {
        acc += v;
    }
    const double n = static_cast<double>(x.numel());
    return make_result({}, {static_cast<float>(acc / n)}, {x}, [n](std::span<const float> g, GradSinks sinks) {
        const float share = static_cast<float>(g[0] / n);
        for (auto& v : *sinks[0]) {
            v += share;
        }
    });
}

Tensor frobenius_sq(const Tensor& x) {
    double acc = 0.0;
    for (float v : x.data()) {
        acc += static_cast<double>(v) * v;
    }
    return make_result({}, {static_cast<float>(acc)}, {x}, [x](std::span<const float> g, GradSinks sinks) {
        auto& gx = *sinks[0];
        const auto xv = x.data();
        for (std::size_t i = 0; i < xv.size(); ++i) {
            gx[i] += 2.0f * g[0] * xv[i];
        }
    });
}

Tensor rms_normalize(const Tensor& x, float eps) {
    if (x.rank() == 0 || x.dim(0) == 0 || x.numel() == 0) {
        throw ShapeError("rms_normalize needs a non-empty leading axis, got " + shape_str(x.shape()));
    }
    const std::size_t n = x.dim(0), k = x.numel() / n;
    const auto xv = x.data();
    std::vector<float> out(xv.size());
    std::vector<double> inv_r(n);
    for (std::size_t s = 0; s < n; ++s) {
        double acc = 0.0;
        for (std::size_t i = 0; i < k; ++i) acc += static_cast<double>(xv[s * k + i]) * xv[s * k + i];
        inv_r[s] = 1.0 / std::sqrt(acc / static_cast<double>(k) + eps);
        for (std::size_t i = 0; i < k; ++i) out[s * k + i] = static_cast<float>(xv[s * k + i] * inv_r[s]);
    }
    std::vector<float> y = out;
    return make_result(x.shape(), std::move(out), {x},
                       [n, k, inv_r, y = std::move(y)](std::span<const float> g, GradSinks sinks) {
                           auto& gx = *sinks[0];
                           for (std::size_t s = 0; s < n; ++s) {
                               double gy = 0.0;
                               for (std::size_t i = 0; i < k; ++i) gy += static_cast<double>(g[s * k + i]) * y[s * k + i];
                               gy /= static_cast<double>(k);
                               for (std::size_t i = 0; i < k; ++i) {
                                   gx[s * k + i] += static_cast<float>((g[s * k + i] - y[s * k + i] * gy) * inv_r[s]);
                               }
                           }
                       });
}

Tensor bce_with_logits(const Tensor& logits, std::span<const float> targets) {
    if (targets.size() != logits.numel()) {
        throw ShapeError("bce_with_logits: " + std::to_string(targets.size()) + " targets for logits " +
                         shape_str(logits.shape()));
    }
    const auto z = logits.data();
    std::vector<float> out(z.size());
    std::vector<float> dz(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) {
        const double v = z[i];
        const double sp = std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v)));
        const double sig = v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
        out[i] = static_cast<float>(sp - targets[i] * v);
        dz[i] = static_cast<float>(sig - targets[i]);
    }
    return make_result(logits.shape(), std::move(out), {logits},
                       [dz = std::move(dz)](std::span<const float> g, GradSinks sinks) {
                           auto& gx = *sinks[0];
                           for (std::size_t i = 0; i < g.size(); ++i) {
                               gx[i] += g[i] * dz[i];
                           }
                       });
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> labels) {
    if (logits.rank() != 2 || logits.dim(0) != labels.size()) {
        throw ShapeError("cross_entropy: logits " + shape_str(logits.shape()) + " vs " +
                         std::to_string(labels.size()) + " labels");
    }
    const std::size_t rows = logits.dim(0);
    const std::size_t k = logits.dim(1);
    const auto z = logits.data();
    std::vector<float> out(rows);
    std::vector<float> probs(rows * k);
    for (std::size_t r = 0; r < rows; ++r) {
        const int label = labels[r];
        if (label < 0 || static_cast<std::size_t>(label) >= k) {
            throw ShapeError("cross_entropy: label " + std::to_string(label) + " outside [0," +
                             std::to_string(k) + ")");
        }
        double mx = z[r * k];
        for (std::size_t c = 1; c < k; ++c) {
            mx = std::max<double>(mx, z[r * k + c]);
        }
        double denom = 0.0;
        for (std::size_t c = 0; c < k; ++c) {
            denom += std::exp(z[r * k + c] - mx);
        }
        const double log_denom = std::log(denom) + mx;
        for (std::size_t c = 0; c < k; ++c) {
            probs[r * k + c] = static_cast<float>(std::exp(z[r * k + c] - log_denom));
        }
        out[r] = static_cast<float>(log_denom - z[r * k + static_cast<std::size_t>(label)]);
    }
    std::vector<int> lab(labels.begin(), labels.end());
    return make_result({rows}, std::move(out), {logits},
                       [probs = std::move(probs), lab = std::move(lab), k](std::span<const float> g,
                                                                           GradSinks sinks) {
                           auto& gx = *sinks[0];
                           for (std::size_t r = 0; r < lab.size(); ++r) {
                               for (std::size_t c = 0; c < k; ++c) {
                                   const float onehot = static_cast<int>(c) == lab[r] ? 1.0f : 0.0f;
                                   gx[r * k + c] += g[r] * (probs[r * k + c] - onehot);
                               }
                           }
                       });
}

Tensor smooth_l1(const Tensor& x, float beta) {
    const auto v = x.data();
    std::vector<float> out(v.size());
    std::vector<float> dv(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
        const float a = std::fabs(v[i]);
        if (beta > 0.0f && a < beta) {
            out[i] = 0.5f * v[i] * v[i] / beta;
            dv[i] = v[i] / beta;
        } else {
            out[i] = beta > 0.0f ? a - 0.5f * beta : a;
            dv[i] = v[i] > 0.0f ? 1.0f : (v[i] < 0.0f ? -1.0f : 0.0f);
        }
    }
    return make_result(x.shape(), std::move(out), {x}, [dv = std::move(dv)](std::span<const float> g, GradSinks sinks) {
        auto& gx = *sinks[0];
        for (std::size_t i = 0; i < g.size(); ++i) {
            gx[i] += g[i] * dv[i];
        }
    });
}

}  // namespace sfa::ad
