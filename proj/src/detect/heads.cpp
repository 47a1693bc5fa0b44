#include "sfa/detect/heads.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace sfa::detect {

using ad::Tensor;

namespace {

std::vector<Box> flat_anchors(const AnchorSet& set) {
    std::vector<Box> out;
    out.reserve(set.total());
    for (const auto& l : set.levels) out.insert(out.end(), l.anchors.begin(), l.anchors.end());
    return out;
}

void add_named(NamedTensors& out, const std::string& prefix, const ad::ConvLayer& l) {
    out.emplace_back(prefix + ".weight", l.weight);
    out.emplace_back(prefix + ".bias", l.bias);
}

void add_named(NamedTensors& out, const std::string& prefix, const ad::LinearLayer& l) {
    out.emplace_back(prefix + ".weight", l.weight);
    out.emplace_back(prefix + ".bias", l.bias);
}

std::vector<Tensor> values_of(const NamedTensors& named) {
    std::vector<Tensor> out;
    for (const auto& [name, t] : named) out.push_back(t);
    return out;
}

Tensor targets_tensor(const std::vector<BoxDelta>& targets) {
    std::vector<float> v;
    v.reserve(targets.size() * 4);
    for (const auto& d : targets) v.insert(v.end(), {d.dx, d.dy, d.dw, d.dh});
    const std::size_t n = v.size();
    return Tensor({n}, std::move(v));
}

// A zero that keeps `x` in the graph so every parameter still receives a gradient.
Tensor zero_like_loss(const Tensor& x) { return ad::scale(ad::sum(x), 0.0f); }

}  // namespace

// ---- RPN ----

std::mt19937_64 sampling_rng(std::uint64_t seed, std::size_t image) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(image)};
    return std::mt19937_64(seq);
}

RpnParams RpnParams::init(std::size_t in_channels, std::size_t hidden, std::size_t num_anchors, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    RpnParams p;
    p.shared = ad::make_conv(hidden, in_channels, 3, 1, 1, rng);
    p.objectness = ad::make_conv(num_anchors, hidden, 1, 1, 0, rng, 0.1f);
    p.deltas = ad::make_conv(4 * num_anchors, hidden, 1, 1, 0, rng, 0.01f);
    return p;
}

NamedTensors RpnParams::named() const {
    NamedTensors out;
    add_named(out, "rpn.shared", shared);
    add_named(out, "rpn.objectness", objectness);
    add_named(out, "rpn.deltas", deltas);
    return out;
}

std::vector<Tensor> RpnParams::tensors() const { return values_of(named()); }

std::vector<RpnLevelOutput> rpn_forward(const std::vector<Tensor>& fpn_levels, const RpnParams& params) {
    std::vector<RpnLevelOutput> out;
    for (const auto& f : fpn_levels) {
        const Tensor h = ad::relu(params.shared(f));
        out.push_back({params.objectness(h), params.deltas(h)});
    }
    return out;
}

RpnImageOutput gather_image(const std::vector<RpnLevelOutput>& levels, std::size_t image) {
    std::vector<Tensor> logits, deltas;
    std::vector<std::size_t> li, di;
    std::size_t logit_offset = 0, delta_offset = 0;
    for (const auto& l : levels) {
        const std::size_t n = l.logits.dim(0), a = l.logits.dim(1), hw = l.logits.dim(2) * l.logits.dim(3);
        if (image >= n) throw ad::ShapeError("gather_image: image index out of range");
        if (l.deltas.dim(1) != 4 * a) throw ad::ShapeError("gather_image: deltas must have 4 channels per anchor");
        for (std::size_t i = 0; i < a * hw; ++i) li.push_back(logit_offset + image * a * hw + i);
        for (std::size_t ai = 0; ai < a; ++ai) {
            for (std::size_t p = 0; p < hw; ++p) {
                for (std::size_t k = 0; k < 4; ++k) {
                    di.push_back(delta_offset + (image * 4 * a + ai * 4 + k) * hw + p);
                }
            }
        }
        logits.push_back(ad::reshape(l.logits, {l.logits.numel()}));
        deltas.push_back(ad::reshape(l.deltas, {l.deltas.numel()}));
        logit_offset += l.logits.numel();
        delta_offset += l.deltas.numel();
    }
    return {ad::take(ad::concat(logits), li), ad::take(ad::concat(deltas), di)};
}

AnchorSample sample_anchors(const std::vector<Box>& anchors, const std::vector<Box>& gt, const RpnLossConfig& cfg,
                            std::mt19937_64& rng) {
    std::vector<double> best(anchors.size(), 0.0);
    std::vector<std::size_t> match(anchors.size(), 0);
    std::vector<bool> forced(anchors.size(), false);
    for (std::size_t g = 0; g < gt.size(); ++g) {
        double gt_best = 0.0;
        std::vector<double> col(anchors.size());
        for (std::size_t i = 0; i < anchors.size(); ++i) {
            col[i] = iou(anchors[i], gt[g]);
            gt_best = std::max(gt_best, col[i]);
            if (col[i] > best[i]) {
                best[i] = col[i];
                match[i] = g;
            }
        }
        if (gt_best <= 0.0) continue;
        for (std::size_t i = 0; i < anchors.size(); ++i) {
            if (col[i] == gt_best) {
                forced[i] = true;
                if (col[i] >= best[i]) match[i] = g;
            }
        }
    }
    std::vector<std::size_t> pos, neg;
    for (std::size_t i = 0; i < anchors.size(); ++i) {
        if (forced[i] || (!gt.empty() && best[i] >= cfg.positive_iou)) {
            pos.push_back(i);
        } else if (best[i] <= cfg.negative_iou) {
            neg.push_back(i);
        }
    }
    std::shuffle(pos.begin(), pos.end(), rng);
    std::shuffle(neg.begin(), neg.end(), rng);
    const auto max_pos = static_cast<std::size_t>(static_cast<double>(cfg.batch) * cfg.positive_fraction);
    pos.resize(std::min(pos.size(), max_pos));
    neg.resize(std::min(neg.size(), cfg.batch - pos.size()));

    AnchorSample s;
    s.positives = pos.size();
    for (auto i : pos) {
        s.indices.push_back(i);
        s.labels.push_back(1.0f);
        s.targets.push_back(encode(gt[match[i]], anchors[i]));
    }
    for (auto i : neg) {
        s.indices.push_back(i);
        s.labels.push_back(0.0f);
    }
    return s;
}

Tensor rpn_image_loss(const RpnImageOutput& out, const std::vector<Box>& anchors, const AnchorSample& sample,
                      const RpnLossConfig& cfg) {
    if (out.logits.numel() != anchors.size() || out.deltas.numel() != 4 * anchors.size()) {
        throw ad::ShapeError("rpn_image_loss: outputs do not match the anchor count " +
                             std::to_string(anchors.size()));
    }
    if (sample.indices.empty()) return ad::add(zero_like_loss(out.logits), zero_like_loss(out.deltas));
    const Tensor cls = ad::mean(ad::bce_with_logits(ad::take(out.logits, sample.indices), sample.labels));
    if (sample.positives == 0) return ad::add(cls, zero_like_loss(out.deltas));
    std::vector<std::size_t> di;
    for (std::size_t p = 0; p < sample.positives; ++p) {
        for (std::size_t k = 0; k < 4; ++k) di.push_back(sample.indices[p] * 4 + k);
    }
    const Tensor diff = ad::sub(ad::take(out.deltas, di), targets_tensor(sample.targets));
    const Tensor reg = ad::scale(ad::sum(ad::smooth_l1(diff, cfg.smooth_l1_beta)),
                                 1.0f / static_cast<float>(sample.indices.size()));
    return ad::add(cls, reg);
}

Tensor rpn_loss(const std::vector<RpnLevelOutput>& levels, const AnchorSet& anchors,
                const std::vector<std::vector<Box>>& gt_boxes, const RpnLossConfig& cfg, std::uint64_t seed) {
    if (levels.empty() || levels.size() != anchors.levels.size()) {
        throw ad::ShapeError("rpn_loss: one output per anchor level is required");
    }
    const std::size_t n = levels.front().logits.dim(0);
    if (gt_boxes.size() != n) throw ad::ShapeError("rpn_loss: one gt list per image is required");
    const auto flat = flat_anchors(anchors);
    Tensor total;
    for (std::size_t i = 0; i < n; ++i) {
        auto rng = sampling_rng(seed, i);
        const auto sample = sample_anchors(flat, gt_boxes[i], cfg, rng);
        const Tensor l = rpn_image_loss(gather_image(levels, i), flat, sample, cfg);
        total = total.defined() ? ad::add(total, l) : l;
    }
    return ad::scale(total, 1.0f / static_cast<float>(n));
}

std::vector<Box> propose(const RpnImageOutput& out, const AnchorSet& anchors, float image_width, float image_height,
                         const ProposalConfig& cfg) {
    const auto flat = flat_anchors(anchors);
    const auto logits = out.logits.data();
    const auto deltas = out.deltas.data();
    if (logits.size() != flat.size()) throw ad::ShapeError("propose: outputs do not match the anchor count");
    std::vector<std::size_t> order(flat.size());
    std::iota(order.begin(), order.end(), 0);
    const std::size_t top = std::min(cfg.pre_nms, order.size());
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(top), order.end(),
                      [&](std::size_t a, std::size_t b) { return logits[a] > logits[b] || (logits[a] == logits[b] && a < b); });
    order.resize(top);
    std::vector<Box> boxes;
    for (auto i : order) {
        const BoxDelta d{deltas[i * 4], deltas[i * 4 + 1], deltas[i * 4 + 2], deltas[i * 4 + 3]};
        const Box b = clip(decode(d, flat[i]), image_width, image_height);
        if (b.w >= cfg.min_size && b.h >= cfg.min_size) boxes.push_back(b);
    }
    std::vector<Box> kept;
    for (auto k : nms_sorted(boxes, cfg.nms_iou)) {
        if (kept.size() == cfg.post_nms) break;
        kept.push_back(boxes[k]);
    }
    return kept;
}

// ---- ROI head ----

RoiParams RoiParams::init(std::size_t in_channels, std::size_t hidden, std::size_t num_classes, std::uint64_t seed,
                          float prior) {
    if (num_classes == 0) throw std::invalid_argument("roi head needs at least one foreground class");
    if (!(prior > 0.0f) || static_cast<float>(num_classes) * prior >= 1.0f) {
        throw std::invalid_argument("roi head prior must lie in (0, 1/num_classes)");
    }
    std::mt19937_64 rng(seed);
    RoiParams p;
    p.num_classes = num_classes;
    p.fc = ad::make_linear(in_channels * kRoiPool * kRoiPool, hidden, rng);
    p.cls = ad::make_linear(hidden, num_classes + 1, rng, 0.1f);
    p.reg = ad::make_linear(hidden, 4 * num_classes, rng, 0.01f);
    p.cls.bias.mutable_data()[0] = std::log(1.0f / prior - static_cast<float>(num_classes));
    return p;
}

NamedTensors RoiParams::named() const {
    NamedTensors out;
    add_named(out, "roi.fc", fc);
    add_named(out, "roi.cls", cls);
    add_named(out, "roi.reg", reg);
    return out;
}

std::vector<Tensor> RoiParams::tensors() const { return values_of(named()); }

std::size_t roi_level(const Box& box) {
    const double side = std::sqrt(std::max(0.0, static_cast<double>(box.w) * box.h));
    if (side <= 0.0) return 1;
    const double level = std::floor(std::log2(side / 16.0)) + 1.0;
    return static_cast<std::size_t>(std::clamp(level, 1.0, 3.0));
}

RoiOutput roi_forward(const std::vector<Tensor>& fpn_levels, const std::vector<Roi>& rois, const RoiParams& params) {
    if (fpn_levels.size() != 3) throw ad::ShapeError("roi_forward: three FPN levels are required");
    if (rois.empty()) throw ad::ShapeError("roi_forward: no regions");
    const std::size_t c = fpn_levels[0].dim(1), d = c * kRoiPool * kRoiPool;
    std::vector<Tensor> pooled;
    std::vector<std::size_t> order;  // position in the concatenation -> input row
    for (std::size_t level = 1; level <= 3; ++level) {
        const float inv = 1.0f / static_cast<float>(std::size_t{1} << level);
        std::vector<ad::RoiBox> boxes;
        for (std::size_t r = 0; r < rois.size(); ++r) {
            if (roi_level(rois[r].box) != level) continue;
            const Box& b = rois[r].box;
            boxes.push_back({rois[r].image, b.x * inv, b.y * inv, b.x2() * inv, b.y2() * inv});
            order.push_back(r);
        }
        if (boxes.empty()) continue;
        const Tensor f = ad::roi_align(fpn_levels[level - 1], boxes, kRoiPool, kRoiSampling);
        pooled.push_back(ad::reshape(f, {boxes.size(), d}));
    }
    Tensor x = pooled.size() == 1 ? pooled.front() : ad::concat(pooled);
    bool identity = true;
    for (std::size_t i = 0; i < order.size(); ++i) identity = identity && order[i] == i;
    if (!identity) {
        std::vector<std::size_t> where(order.size());
        for (std::size_t i = 0; i < order.size(); ++i) where[order[i]] = i;
        std::vector<std::size_t> idx;
        idx.reserve(rois.size() * d);
        for (std::size_t r = 0; r < rois.size(); ++r) {
            for (std::size_t j = 0; j < d; ++j) idx.push_back(where[r] * d + j);
        }
        x = ad::reshape(ad::take(x, idx), {rois.size(), d});
    }
    const Tensor h = ad::relu(params.fc(x));
    return {params.cls(h), params.reg(h)};
}

RoiSample sample_rois(const std::vector<std::vector<Box>>& proposals, const std::vector<std::vector<Box>>& gt_boxes,
                      const std::vector<std::vector<int>>& gt_classes, const RoiLossConfig& cfg, std::uint64_t seed) {
    if (proposals.size() != gt_boxes.size() || gt_boxes.size() != gt_classes.size()) {
        throw std::invalid_argument("sample_rois: proposals, boxes and classes must cover the same images");
    }
    RoiSample s;
    const auto max_fg = static_cast<std::size_t>(static_cast<double>(cfg.batch) * cfg.foreground_fraction);
    for (std::size_t n = 0; n < proposals.size(); ++n) {
        const auto& gt = gt_boxes[n];
        if (gt_classes[n].size() != gt.size()) throw std::invalid_argument("sample_rois: one class per gt box");
        std::vector<Box> cand = proposals[n];
        cand.insert(cand.end(), gt.begin(), gt.end());
        std::vector<std::size_t> fg, bg;
        std::vector<std::size_t> match(cand.size(), 0);
        for (std::size_t i = 0; i < cand.size(); ++i) {
            double best = 0.0;
            for (std::size_t g = 0; g < gt.size(); ++g) {
                const double v = iou(cand[i], gt[g]);
                if (v > best) {
                    best = v;
                    match[i] = g;
                }
            }
            (best >= cfg.foreground_iou ? fg : bg).push_back(i);
        }
        auto rng = sampling_rng(seed, n);
        std::shuffle(fg.begin(), fg.end(), rng);
        std::shuffle(bg.begin(), bg.end(), rng);
        fg.resize(std::min(fg.size(), max_fg));
        bg.resize(std::min(bg.size(), cfg.batch - fg.size()));
        for (auto i : fg) {
            s.rois.push_back({n, cand[i]});
            s.labels.push_back(gt_classes[n][match[i]]);
            s.targets.push_back(encode(gt[match[i]], cand[i], kRoiCoderWeights));
        }
        for (auto i : bg) {
            s.rois.push_back({n, cand[i]});
            s.labels.push_back(0);
            s.targets.push_back({});
        }
    }
    return s;
}

Tensor roi_loss(const RoiOutput& out, const std::vector<int>& labels, const std::vector<BoxDelta>& targets,
                float smooth_l1_beta) {
    const std::size_t r = out.class_logits.dim(0), k = out.class_logits.dim(1) - 1;
    if (labels.size() != r || targets.size() != r || out.deltas.dim(0) != r || out.deltas.dim(1) != 4 * k) {
        throw ad::ShapeError("roi_loss: labels, targets and head outputs disagree on the region count");
    }
    const Tensor cls = ad::mean(ad::cross_entropy(out.class_logits, labels));
    std::vector<std::size_t> idx;
    std::vector<BoxDelta> fg_targets;
    for (std::size_t i = 0; i < r; ++i) {
        if (labels[i] <= 0) continue;
        const auto c = static_cast<std::size_t>(labels[i]);
        for (std::size_t j = 0; j < 4; ++j) idx.push_back(i * 4 * k + 4 * (c - 1) + j);
        fg_targets.push_back(targets[i]);
    }
    if (idx.empty()) return ad::add(cls, zero_like_loss(out.deltas));
    const Tensor diff = ad::sub(ad::take(out.deltas, idx), targets_tensor(fg_targets));
    return ad::add(cls, ad::scale(ad::sum(ad::smooth_l1(diff, smooth_l1_beta)), 1.0f / static_cast<float>(r)));
}

DetectionSet roi_detections(const RoiOutput& out, const std::vector<Roi>& rois, float image_width,
                            float image_height, const InferenceConfig& cfg) {
    const std::size_t r = rois.size(), k1 = out.class_logits.dim(1), k = k1 - 1;
    if (out.class_logits.dim(0) != r) throw ad::ShapeError("roi_detections: one output row per region is required");
    const auto logits = out.class_logits.data();
    const auto deltas = out.deltas.data();
    std::vector<DetectionSet> per_class(k);
    std::vector<double> prob(k1);
    for (std::size_t i = 0; i < r; ++i) {
        const float* row = logits.data() + i * k1;
        const double m = *std::max_element(row, row + k1);
        double z = 0.0;
        for (std::size_t j = 0; j < k1; ++j) z += prob[j] = std::exp(static_cast<double>(row[j]) - m);
        for (std::size_t c = 1; c <= k; ++c) {
            const auto score = static_cast<float>(prob[c] / z);
            if (score < cfg.score_floor) continue;
            const float* d = deltas.data() + i * 4 * k + 4 * (c - 1);
            const Box b = clip(decode({d[0], d[1], d[2], d[3]}, rois[i].box, kRoiCoderWeights), image_width,
                               image_height);
            if (b.w <= 0.0f || b.h <= 0.0f) continue;
            per_class[c - 1].push(b, score, static_cast<int>(c));
        }
    }
    DetectionSet merged;
    for (const auto& set : per_class) {
        const auto kept = nms(set, cfg.nms_iou);
        for (std::size_t i = 0; i < kept.size(); ++i) merged.push(kept.boxes[i], kept.scores[i], kept.classes[i]);
    }
    std::vector<std::size_t> order(merged.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return merged.scores[a] > merged.scores[b]; });
    DetectionSet sorted;
    for (auto i : order) sorted.push(merged.boxes[i], merged.scores[i], merged.classes[i]);
    if (sorted.size() > cfg.max_detections) {
        sorted.boxes.resize(cfg.max_detections);
        sorted.scores.resize(cfg.max_detections);
        sorted.classes.resize(cfg.max_detections);
    }
    return sorted;
}

}  // namespace sfa::detect
