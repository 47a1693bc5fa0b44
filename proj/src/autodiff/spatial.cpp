#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>

#include "sfa/autodiff/ops.hpp"

namespace sfa::ad {

namespace {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

struct ConvGeom {
    std::size_t n, c, h, w, o, k, stride, pad, ho, wo;
    std::size_t col_rows() const { return c * k * k; }
    std::size_t col_cols() const { return ho * wo; }
};

void im2col(const float* img, const ConvGeom& g, float* col) {
    const std::size_t cols = g.col_cols();
    for (std::size_t ch = 0; ch < g.c; ++ch) {
        for (std::size_t ky = 0; ky < g.k; ++ky) {
            for (std::size_t kx = 0; kx < g.k; ++kx) {
                float* dst = col + ((ch * g.k + ky) * g.k + kx) * cols;
                for (std::size_t oy = 0; oy < g.ho; ++oy) {
                    const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                                    static_cast<std::ptrdiff_t>(g.pad);
                    float* row = dst + oy * g.wo;
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) {
                        std::fill(row, row + g.wo, 0.0f);
                        continue;
                    }
                    const float* src = img + (ch * g.h + static_cast<std::size_t>(iy)) * g.w;
                    for (std::size_t ox = 0; ox < g.wo; ++ox) {
                        const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                                        static_cast<std::ptrdiff_t>(g.pad);
                        row[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w))
                                      ? 0.0f
                                      : src[static_cast<std::size_t>(ix)];
                    }
                }
            }
        }
    }
}

void col2im_add(const float* col, const ConvGeom& g, float* img) {
    const std::size_t cols = g.col_cols();
    for (std::size_t ch = 0; ch < g.c; ++ch) {
        for (std::size_t ky = 0; ky < g.k; ++ky) {
            for (std::size_t kx = 0; kx < g.k; ++kx) {
                const float* srcrow = col + ((ch * g.k + ky) * g.k + kx) * cols;
                for (std::size_t oy = 0; oy < g.ho; ++oy) {
                    const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                                    static_cast<std::ptrdiff_t>(g.pad);
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) {
                        continue;
                    }
                    float* dst = img + (ch * g.h + static_cast<std::size_t>(iy)) * g.w;
                    const float* row = srcrow + oy * g.wo;
                    for (std::size_t ox = 0; ox < g.wo; ++ox) {
                        const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                                        static_cast<std::ptrdiff_t>(g.pad);
                        if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(g.w)) {
                            dst[static_cast<std::size_t>(ix)] += row[ox];
                        }
                    }
                }
            }
        }
    }
}

void require_nchw(const Tensor& x, const char* op) {
    if (x.rank() != 4) {
        throw ShapeError(std::string(op) + " expects NCHW input, got " + shape_str(x.shape()));
    }
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, std::size_t stride,
              std::size_t padding) {
    require_nchw(input, "conv2d");
    if (weight.rank() != 4 || weight.dim(2) != weight.dim(3) || weight.dim(1) != input.dim(1)) {
        throw ShapeError("conv2d: weight " + shape_str(weight.shape()) + " incompatible with input " +
                         shape_str(input.shape()));
    }
    if (bias.rank() != 1 || bias.dim(0) != weight.dim(0)) {
        throw ShapeError("conv2d: bias " + shape_str(bias.shape()) + " incompatible with weight " +
                         shape_str(weight.shape()));
    }
    if (stride == 0) {
        throw ShapeError("conv2d: stride must be positive");
    }
    ConvGeom g{input.dim(0), input.dim(1), input.dim(2), input.dim(3), weight.dim(0), weight.dim(2),
               stride, padding, 0, 0};
    if (g.h + 2 * g.pad < g.k || g.w + 2 * g.pad < g.k) {
        throw ShapeError("conv2d: input " + shape_str(input.shape()) + " with padding " +
                         std::to_string(padding) + " is smaller than kernel " + shape_str(weight.shape()));
    }
    g.ho = (g.h + 2 * g.pad - g.k) / g.stride + 1;
    g.wo = (g.w + 2 * g.pad - g.k) / g.stride + 1;

    const auto rows = static_cast<Eigen::Index>(g.col_rows());
    const auto cols = static_cast<Eigen::Index>(g.col_cols());
    const auto outc = static_cast<Eigen::Index>(g.o);
    const bool one_by_one = g.k == 1 && g.stride == 1 && g.pad == 0;

    std::vector<float> col_store;
    if (!one_by_one) {
        col_store.resize(g.n * g.col_rows() * g.col_cols());
    }
    std::vector<float> out(g.n * g.o * g.col_cols());
    const auto xv = input.data();
    const auto bv = bias.data();
    ConstMap wm(weight.data().data(), outc, rows);
    for (std::size_t i = 0; i < g.n; ++i) {
        const float* col = nullptr;
        if (one_by_one) {
            col = xv.data() + i * g.c * g.h * g.w;
        } else {
            float* dst = col_store.data() + i * g.col_rows() * g.col_cols();
            im2col(xv.data() + i * g.c * g.h * g.w, g, dst);
            col = dst;
        }
        MutMap om(out.data() + i * g.o * g.col_cols(), outc, cols);
        om.noalias() = wm * ConstMap(col, rows, cols);
        for (std::size_t oc = 0; oc < g.o; ++oc) {
            om.row(static_cast<Eigen::Index>(oc)).array() += bv[oc];
        }
    }

    if (!grad_enabled() || !(input.requires_grad() || weight.requires_grad() || bias.requires_grad())) {
        return Tensor({g.n, g.o, g.ho, g.wo}, std::move(out));
    }
    return make_result(
        {g.n, g.o, g.ho, g.wo}, std::move(out), {input, weight, bias},
        [g, input, weight, cols_saved = std::move(col_store), one_by_one](std::span<const float> grad,
                                                                          GradSinks sinks) {
            const auto rows = static_cast<Eigen::Index>(g.col_rows());
            const auto cols = static_cast<Eigen::Index>(g.col_cols());
            const auto outc = static_cast<Eigen::Index>(g.o);
            ConstMap wm(weight.data().data(), outc, rows);
            RowMat dcol;
            for (std::size_t i = 0; i < g.n; ++i) {
                ConstMap gm(grad.data() + i * g.o * g.col_cols(), outc, cols);
                const float* col = one_by_one ? input.data().data() + i * g.c * g.h * g.w
                                              : cols_saved.data() + i * g.col_rows() * g.col_cols();
                if (sinks[1]) {
                    MutMap(sinks[1]->data(), outc, rows).noalias() += gm * ConstMap(col, rows, cols).transpose();
                }
                if (sinks[2]) {
                    for (std::size_t oc = 0; oc < g.o; ++oc) {
                        double acc = 0.0;
                        const float* gr = grad.data() + (i * g.o + oc) * g.col_cols();
                        for (std::size_t p = 0; p < g.col_cols(); ++p) {
                            acc += gr[p];
                        }
                        (*sinks[2])[oc] += static_cast<float>(acc);
                    }
                }
                if (sinks[0]) {
                    float* gx = sinks[0]->data() + i * g.c * g.h * g.w;
                    if (one_by_one) {
                        MutMap(gx, rows, cols).noalias() += wm.transpose() * gm;
                    } else {
                        dcol.noalias() = wm.transpose() * gm;
                        col2im_add(dcol.data(), g, gx);
                    }
                }
            }
        });
}

Tensor max_pool2d(const Tensor& input, std::size_t kernel, std::size_t stride) {
    require_nchw(input, "max_pool2d");
    const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
    if (kernel == 0 || stride == 0 || h < kernel || w < kernel) {
        throw ShapeError("max_pool2d: kernel " + std::to_string(kernel) + " invalid for " +
                         shape_str(input.shape()));
    }
    const std::size_t ho = (h - kernel) / stride + 1;
    const std::size_t wo = (w - kernel) / stride + 1;
    const auto xv = input.data();
    std::vector<float> out(n * c * ho * wo);
    std::vector<std::size_t> arg(out.size());
    for (std::size_t p = 0; p < n * c; ++p) {
        const float* plane = xv.data() + p * h * w;
        for (std::size_t oy = 0; oy < ho; ++oy) {
            for (std::size_t ox = 0; ox < wo; ++ox) {
                float best = -std::numeric_limits<float>::infinity();
                std::size_t best_idx = 0;
                for (std::size_t ky = 0; ky < kernel; ++ky) {
                    for (std::size_t kx = 0; kx < kernel; ++kx) {
                        const std::size_t idx = (oy * stride + ky) * w + ox * stride + kx;
                        if (plane[idx] > best) {
                            best = plane[idx];
                            best_idx = idx;
                        }
                    }
                }
                const std::size_t o = (p * ho + oy) * wo + ox;
                out[o] = best;
                arg[o] = p * h * w + best_idx;
            }
        }
    }
    return make_result({n, c, ho, wo}, std::move(out), {input},
                       [arg = std::move(arg)](std::span<const float> g, GradSinks sinks) {
                           auto& gx = *sinks[0];
                           for (std::size_t i = 0; i < g.size(); ++i) {
                               gx[arg[i]] += g[i];
                           }
                       });
}

Tensor avg_pool2d(const Tensor& input, std::size_t kernel, std::size_t stride) {
    require_nchw(input, "avg_pool2d");
    const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
    if (kernel == 0 || stride == 0 || h < kernel || w < kernel) {
        throw ShapeError("avg_pool2d: kernel " + std::to_string(kernel) + " invalid for " +
                         shape_str(input.shape()));
    }
    const std::size_t ho = (h - kernel) / stride + 1;
    const std::size_t wo = (w - kernel) / stride + 1;
    const float inv = 1.0f / static_cast<float>(kernel * kernel);
    const auto xv = input.data();
    std::vector<float> out(n * c * ho * wo);
    for (std::size_t p = 0; p < n * c; ++p) {
        const float* plane = xv.data() + p * h * w;
        for (std::size_t oy = 0; oy < ho; ++oy) {
            for (std::size_t ox = 0; ox < wo; ++ox) {
                double acc = 0.0;
                for (std::size_t ky = 0; ky < kernel; ++ky) {
                    for (std::size_t kx = 0; kx < kernel; ++kx) {
                        acc += plane[(oy * stride + ky) * w + ox * stride + kx];
                    }
                }
                out[(p * ho + oy) * wo + ox] = static_cast<float>(acc) * inv;
            }
        }
    }
    return make_result({n, c, ho, wo}, std::move(out), {input},
                       [n, c, h, w, ho, wo, kernel, stride, inv](std::span<const float> g, GradSinks sinks) {
                           auto& gx = *sinks[0];
                           for (std::size_t p = 0; p < n * c; ++p) {
                               for (std::size_t oy = 0; oy < ho; ++oy) {
                                   for (std::size_t ox = 0; ox < wo; ++ox) {
                                       const float share = g[(p * ho + oy) * wo + ox] * inv;
                                       for (std::size_t ky = 0; ky < kernel; ++ky) {
                                           for (std::size_t kx = 0; kx < kernel; ++kx) {
                                               gx[p * h * w + (oy * stride + ky) * w + ox * stride + kx] += share;
                                           }
                                       }
                                   }
                               }
                           }
                       });
}

Tensor global_avg_pool(const Tensor& input) {
    require_nchw(input, "global_avg_pool");
    const std::size_t n = input.dim(0), c = input.dim(1), hw = input.dim(2) * input.dim(3);
    if (hw == 0) {
        throw ShapeError("global_avg_pool over empty spatial extent");
    }
    const auto xv = input.data();
    std::vector<float> out(n * c);
    for (std::size_t p = 0; p < n * c; ++p) {
        double acc = 0.0;
        for (std::size_t i = 0; i < hw; ++i) {
            acc += xv[p * hw + i];
        }
        out[p] = static_cast<float>(acc / static_cast<double>(hw));
    }
    return make_result({n, c}, std::move(out), {input}, [hw](std::span<const float> g, GradSinks sinks) {
        auto& gx = *sinks[0];
        const float inv = 1.0f / static_cast<float>(hw);
        for (std::size_t p = 0; p < g.size(); ++p) {
            for (std::size_t i = 0; i < hw; ++i) {
                gx[p * hw + i] += g[p] * inv;
            }
        }
    });
}

Tensor upsample_nearest2d(const Tensor& input, std::size_t factor) {
    require_nchw(input, "upsample_nearest2d");
    if (factor == 0) {
        throw ShapeError("upsample_nearest2d: factor must be positive");
    }
    const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
    const std::size_t ho = h * factor, wo = w * factor;
    const auto xv = input.data();
    std::vector<float> out(n * c * ho * wo);
    for (std::size_t p = 0; p < n * c; ++p) {
        for (std::size_t y = 0; y < ho; ++y) {
            for (std::size_t x = 0; x < wo; ++x) {
                out[(p * ho + y) * wo + x] = xv[(p * h + y / factor) * w + x / factor];
            }
        }
    }
    return make_result({n, c, ho, wo}, std::move(out), {input},
                       [n, c, h, w, ho, wo, factor](std::span<const float> g, GradSinks sinks) {
                           auto& gx = *sinks[0];
                           for (std::size_t p = 0; p < n * c; ++p) {
                               for (std::size_t y = 0; y < ho; ++y) {
                                   for (std::size_t x = 0; x < wo; ++x) {
                                       gx[(p * h + y / factor) * w + x / factor] += g[(p * ho + y) * wo + x];
                                   }
                               }
                           }
                       });
}

namespace {

struct BilinearTap {
    std::size_t idx[4];
    float weight[4];
    bool valid = false;
};

// Bilinear sample position (y, x) in an h*w plane, zero outside [-1, size].
BilinearTap bilinear_tap(float y, float x, std::size_t h, std::size_t w) {
    BilinearTap tap{};
    if (y < -1.0f || y > static_cast<float>(h) || x < -1.0f || x > static_cast<float>(w)) {
        return tap;
    }
    y = std::max(y, 0.0f);
    x = std::max(x, 0.0f);
    auto y0 = static_cast<std::size_t>(y);
    auto x0 = static_cast<std::size_t>(x);
    std::size_t y1 = y0 + 1;
    std::size_t x1 = x0 + 1;
    if (y0 >= h - 1) {
        y0 = y1 = h - 1;
        y = static_cast<float>(y0);
    }
    if (x0 >= w - 1) {
        x0 = x1 = w - 1;
        x = static_cast<float>(x0);
    }
    const float ly = y - static_cast<float>(y0);
    const float lx = x - static_cast<float>(x0);
    const float hy = 1.0f - ly;
    const float hx = 1.0f - lx;
    tap.idx[0] = y0 * w + x0;
    tap.idx[1] = y0 * w + x1;
    tap.idx[2] = y1 * w + x0;
    tap.idx[3] = y1 * w + x1;
    tap.weight[0] = hy * hx;
    tap.weight[1] = hy * lx;
    tap.weight[2] = ly * hx;
    tap.weight[3] = ly * lx;
    tap.valid = true;
    return tap;
}

}  // namespace

Tensor roi_align(const Tensor& feature, std::span<const RoiBox> rois, std::size_t out_size,
                 std::size_t sampling_ratio) {
    require_nchw(feature, "roi_align");
    if (out_size == 0 || sampling_ratio == 0) {
        throw ShapeError("roi_align: output size and sampling ratio must be positive");
    }
    const std::size_t n = feature.dim(0), c = feature.dim(1), h = feature.dim(2), w = feature.dim(3);
    const std::size_t bins = out_size * out_size;
    const std::size_t samples = sampling_ratio * sampling_ratio;
    const float inv_count = 1.0f / static_cast<float>(samples);

    // Taps are shared across channels: [roi][bin][sample].
    std::vector<BilinearTap> taps(rois.size() * bins * samples);
    std::vector<std::size_t> images(rois.size());
    for (std::size_t r = 0; r < rois.size(); ++r) {
        const RoiBox& box = rois[r];
        if (box.image >= n) {
            throw ShapeError("roi_align: roi refers to image " + std::to_string(box.image) +
                             " in a batch of " + std::to_string(n));
        }
        images[r] = box.image;
        const float x1 = box.x1 - 0.5f;
        const float y1 = box.y1 - 0.5f;
        const float bw = (box.x2 - box.x1) / static_cast<float>(out_size);
        const float bh = (box.y2 - box.y1) / static_cast<float>(out_size);
        for (std::size_t by = 0; by < out_size; ++by) {
            for (std::size_t bx = 0; bx < out_size; ++bx) {
                for (std::size_t sy = 0; sy < sampling_ratio; ++sy) {
                    for (std::size_t sx = 0; sx < sampling_ratio; ++sx) {
                        const float yy = y1 + bh * (static_cast<float>(by) +
                                                    (static_cast<float>(sy) + 0.5f) / static_cast<float>(sampling_ratio));
                        const float xx = x1 + bw * (static_cast<float>(bx) +
                                                    (static_cast<float>(sx) + 0.5f) / static_cast<float>(sampling_ratio));
                        taps[(r * bins + by * out_size + bx) * samples + sy * sampling_ratio + sx] =
                            bilinear_tap(yy, xx, h, w);
                    }
                }
            }
        }
    }

    const auto fv = feature.data();
    std::vector<float> out(rois.size() * c * bins);
    for (std::size_t r = 0; r < rois.size(); ++r) {
        for (std::size_t ch = 0; ch < c; ++ch) {
            const float* plane = fv.data() + (images[r] * c + ch) * h * w;
            for (std::size_t b = 0; b < bins; ++b) {
                float acc = 0.0f;
                for (std::size_t s = 0; s < samples; ++s) {
                    const auto& tap = taps[(r * bins + b) * samples + s];
                    if (!tap.valid) {
                        continue;
                    }
                    for (int k = 0; k < 4; ++k) {
                        acc += tap.weight[k] * plane[tap.idx[k]];
                    }
                }
                out[(r * c + ch) * bins + b] = acc * inv_count;
            }
        }
    }
    return make_result({rois.size(), c, out_size, out_size}, std::move(out), {feature},
                       [taps = std::move(taps), images = std::move(images), c, h, w, bins, samples,
                        inv_count](std::span<const float> g, GradSinks sinks) {
                           auto& gx = *sinks[0];
                           for (std::size_t r = 0; r < images.size(); ++r) {
                               for (std::size_t ch = 0; ch < c; ++ch) {
                                   float* plane = gx.data() + (images[r] * c + ch) * h * w;
                                   for (std::size_t b = 0; b < bins; ++b) {
                                       const float gv = g[(r * c + ch) * bins + b] * inv_count;
                                       for (std::size_t s = 0; s < samples; ++s) {
                                           const auto& tap = taps[(r * bins + b) * samples + s];
                                           if (!tap.valid) {
                                               continue;
                                           }
                                           for (int k = 0; k < 4; ++k) {
                                               plane[tap.idx[k]] += gv * tap.weight[k];
                                           }
                                       }
                                   }
                               }
                           }
                       });
}

}  // namespace sfa::ad
