#include "sfa/eval/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_map>

#include <json.hpp>

namespace sfa::eval {

using detect::ImageDetections;

SizeBucket size_bucket(const Box& box) {
    const double area = static_cast<double>(box.w) * box.h;
    if (area < 1024.0) return SizeBucket::small;
    if (area < 9216.0) return SizeBucket::medium;
    return SizeBucket::large;
}

const char* bucket_name(SizeBucket b) {
    switch (b) {
        case SizeBucket::small: return "small";
        case SizeBucket::medium: return "medium";
        case SizeBucket::large: return "large";
    }
    return "?";
}

std::vector<GroundTruth> ground_truth_of(const std::vector<hsi::AnnotatedSample>& samples) {
    std::vector<GroundTruth> out;
    out.reserve(samples.size());
    for (const auto& s : samples) {
        int id = 0;
        try {
            std::size_t used = 0;
            id = std::stoi(s.id(), &used);
            if (used != s.id().size()) throw std::invalid_argument(s.id());
        } catch (const std::exception&) {
            throw EvalError("sample id '" + s.id() + "' is not an integer image id");
        }
        out.push_back({id, s.boxes(), s.classes()});
    }
    return out;
}

EvalConfig EvalConfig::coco() {
    EvalConfig c;
    for (int i = 0; i < 10; ++i) c.iou_thresholds.push_back(0.5 + 0.05 * i);
    return c;
}

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct Range {
    double lo, hi;
};
constexpr Range kAll{0.0, kInf};
constexpr std::array<Range, 3> kBuckets{Range{0.0, 1024.0}, Range{1024.0, 9216.0}, Range{9216.0, kInf}};

double area_of(const Box& b) { return static_cast<double>(b.w) * b.h; }

// Per-image matching for one class and threshold, following the COCO rules: gts outside the range
// are ignored and only matched when no counted gt is available; a detection matched to an ignored
// gt, or unmatched and outside the range, is dropped.
struct ImageMatch {
    std::vector<float> scores;
    std::vector<bool> tp;
    std::vector<bool> ignored;
    std::size_t counted_gt = 0;
};

ImageMatch match_image(const detect::DetectionSet* dets, const GroundTruth& gt, int category, double thr,
                       Range range, std::size_t max_dets) {
    ImageMatch m;
    std::vector<std::size_t> gts;
    for (std::size_t i = 0; i < gt.boxes.size(); ++i) {
        if (gt.classes[i] == category) gts.push_back(i);
    }
    auto outside = [&](const Box& b) { return area_of(b) < range.lo || area_of(b) >= range.hi; };
    std::stable_partition(gts.begin(), gts.end(), [&](std::size_t i) { return !outside(gt.boxes[i]); });
    std::vector<bool> gt_ignored(gts.size());
    for (std::size_t g = 0; g < gts.size(); ++g) {
        gt_ignored[g] = outside(gt.boxes[gts[g]]);
        if (!gt_ignored[g]) ++m.counted_gt;
    }
    if (dets == nullptr) return m;

    std::vector<std::size_t> ds;
    for (std::size_t i = 0; i < dets->size(); ++i) {
        if (dets->classes[i] == category) ds.push_back(i);
    }
    std::stable_sort(ds.begin(), ds.end(), [&](std::size_t a, std::size_t b) { return dets->scores[a] > dets->scores[b]; });
    if (ds.size() > max_dets) ds.resize(max_dets);

    std::vector<bool> taken(gts.size(), false);
    for (auto d : ds) {
        const Box& box = dets->boxes[d];
        double best = std::min(thr, 1.0 - 1e-10);
        std::ptrdiff_t hit = -1;
        for (std::size_t g = 0; g < gts.size(); ++g) {
            if (taken[g]) continue;
            if (hit >= 0 && !gt_ignored[static_cast<std::size_t>(hit)] && gt_ignored[g]) break;
            const double v = iou(box, gt.boxes[gts[g]]);
            if (v < best) continue;
            best = v;
            hit = static_cast<std::ptrdiff_t>(g);
        }
        m.scores.push_back(dets->scores[d]);
        if (hit >= 0) {
            taken[static_cast<std::size_t>(hit)] = true;
            m.tp.push_back(true);
            m.ignored.push_back(gt_ignored[static_cast<std::size_t>(hit)]);
        } else {
            m.tp.push_back(false);
            m.ignored.push_back(outside(box));
        }
    }
    return m;
}

void check_ids(const std::vector<ImageDetections>& dets, const std::vector<GroundTruth>& gt) {
    std::set<int> gt_ids;
    for (const auto& g : gt) {
        if (!gt_ids.insert(g.image_id).second) {
            throw EvalError("duplicate ground-truth image id " + std::to_string(g.image_id));
        }
        if (g.boxes.size() != g.classes.size()) {
            throw EvalError("image " + std::to_string(g.image_id) + ": one class per gt box is required");
        }
    }
    std::set<int> det_ids;
    for (const auto& d : dets) {
        if (!det_ids.insert(d.image_id).second) {
            throw EvalError("duplicate detection image id " + std::to_string(d.image_id));
        }
        if (!gt_ids.count(d.image_id)) {
            throw EvalError("detections for image " + std::to_string(d.image_id) + " which has no ground truth");
        }
    }
}

CellResult cell(const std::vector<ImageDetections>& dets, const std::vector<GroundTruth>& gt, int category,
                double thr, Range range, const EvalConfig& cfg) {
    std::unordered_map<int, const detect::DetectionSet*> by_id;
    for (const auto& d : dets) by_id[d.image_id] = &d.detections;

    std::vector<float> scores;
    std::vector<bool> tp;
    std::size_t counted = 0;
    for (const auto& g : gt) {
        const auto it = by_id.find(g.image_id);
        const auto m = match_image(it == by_id.end() ? nullptr : it->second, g, category, thr, range,
                                   cfg.max_detections);
        counted += m.counted_gt;
        for (std::size_t i = 0; i < m.scores.size(); ++i) {
            if (m.ignored[i]) continue;
            scores.push_back(m.scores[i]);
            tp.push_back(m.tp[i]);
        }
    }
    CellResult r;
    if (counted == 0) return r;
    r.defined = true;
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

    std::vector<double> rc, pr;
    std::size_t ntp = 0, nfp = 0;
    for (auto i : order) {
        tp[i] ? ++ntp : ++nfp;
        rc.push_back(static_cast<double>(ntp) / static_cast<double>(counted));
        pr.push_back(static_cast<double>(ntp) / static_cast<double>(ntp + nfp));
    }
    r.recall = rc.empty() ? 0.0 : rc.back();
    for (std::size_t i = pr.size(); i-- > 1;) pr[i - 1] = std::max(pr[i - 1], pr[i]);
    r.precision.resize(cfg.recall_points, 0.0);
    for (std::size_t k = 0; k < cfg.recall_points; ++k) {
        const double target = cfg.recall_points > 1 ? static_cast<double>(k) / static_cast<double>(cfg.recall_points - 1) : 0.0;
        const auto idx = static_cast<std::size_t>(std::lower_bound(rc.begin(), rc.end(), target) - rc.begin());
        r.precision[k] = idx < pr.size() ? pr[idx] : 0.0;
    }
    return r;
}

double mean_of(const std::vector<double>& v) {
    if (v.empty()) return 0.0;
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

struct Accum {
    std::vector<double> ap;
    std::vector<double> ar;
    void add(const CellResult& c) {
        if (!c.defined) return;
        ap.push_back(mean_of(c.precision));
        ar.push_back(c.recall);
    }
};

}  // namespace

CellResult evaluate_cell(const std::vector<ImageDetections>& dets, const std::vector<GroundTruth>& gt, int category,
                         double iou_threshold, double min_area, double max_area, const EvalConfig& cfg) {
    check_ids(dets, gt);
    return cell(dets, gt, category, iou_threshold, {min_area, max_area}, cfg);
}

EvalReport evaluate(const std::vector<ImageDetections>& dets, const std::vector<GroundTruth>& gt,
                    const EvalConfig& cfg) {
    check_ids(dets, gt);
    if (cfg.iou_thresholds.empty() || cfg.recall_points == 0) {
        throw EvalError("evaluation needs at least one IoU threshold and one recall point");
    }
    std::set<int> categories;
    EvalReport r;
    for (const auto& g : gt) {
        for (std::size_t i = 0; i < g.boxes.size(); ++i) {
            categories.insert(g.classes[i]);
            ++r.gt_size_count[static_cast<std::size_t>(size_bucket(g.boxes[i]))];
        }
    }
    Accum all, at50;
    std::array<Accum, 3> buckets;
    for (int c : categories) {
        Accum cls, cls50;
        std::size_t count = 0;
        for (const auto& g : gt)
            for (int k : g.classes) count += k == c ? 1 : 0;
        for (double thr : cfg.iou_thresholds) {
            const auto res = cell(dets, gt, c, thr, kAll, cfg);
            all.add(res);
            cls.add(res);
            if (std::fabs(thr - 0.5) < 1e-9) {
                at50.add(res);
                cls50.add(res);
            }
            for (std::size_t b = 0; b < 3; ++b) buckets[b].add(cell(dets, gt, c, thr, kBuckets[b], cfg));
        }
        if (cls50.ap.empty()) {
            const auto res = cell(dets, gt, c, 0.5, kAll, cfg);
            at50.add(res);
            cls50.add(res);
        }
        r.per_class[c] = {mean_of(cls50.ap), mean_of(cls.ap), mean_of(cls.ar), count};
    }
    r.ap50 = mean_of(at50.ap);
    r.ap = mean_of(all.ap);
    r.ar = mean_of(all.ar);
    for (std::size_t b = 0; b < 3; ++b) {
        r.ap_size[b] = mean_of(buckets[b].ap);
        r.ar_size[b] = mean_of(buckets[b].ar);
    }
    return r;
}

std::string format_report(const EvalReport& r, const std::map<int, std::string>& class_names) {
    std::ostringstream out;
    char line[160];
    std::snprintf(line, sizeof line, "%-8s %-8s %-8s %-8s %-8s %-8s %-8s %-8s %-8s\n", "AP", "AP50", "AP_s", "AP_m",
                  "AP_l", "AR", "AR_s", "AR_m", "AR_l");
    out << line;
    std::snprintf(line, sizeof line, "%-8.4f %-8.4f %-8.4f %-8.4f %-8.4f %-8.4f %-8.4f %-8.4f %-8.4f\n", r.ap, r.ap50,
                  r.ap_size[0], r.ap_size[1], r.ap_size[2], r.ar, r.ar_size[0], r.ar_size[1], r.ar_size[2]);
    out << line;
    std::snprintf(line, sizeof line, "gt per size: small %zu, medium %zu, large %zu\n", r.gt_size_count[0],
                  r.gt_size_count[1], r.gt_size_count[2]);
    out << line;
    for (const auto& [id, m] : r.per_class) {
        const auto it = class_names.find(id);
        const std::string name = it == class_names.end() ? std::to_string(id) : it->second;
        std::snprintf(line, sizeof line, "class %-12s AP50 %.4f  AP %.4f  AR %.4f  (%zu gt)\n", name.c_str(), m.ap50,
                      m.ap, m.ar, m.gt_count);
        out << line;
    }
    return out.str();
}

std::string report_json(const EvalReport& r) {
    nlohmann::json j{{"AP", r.ap},
                     {"AP50", r.ap50},
                     {"AP_small", r.ap_size[0]},
                     {"AP_medium", r.ap_size[1]},
                     {"AP_large", r.ap_size[2]},
                     {"AR", r.ar},
                     {"AR_small", r.ar_size[0]},
                     {"AR_medium", r.ar_size[1]},
                     {"AR_large", r.ar_size[2]},
                     {"gt_small", r.gt_size_count[0]},
                     {"gt_medium", r.gt_size_count[1]},
                     {"gt_large", r.gt_size_count[2]}};
    nlohmann::json classes = nlohmann::json::object();
    for (const auto& [id, m] : r.per_class) {
        classes[std::to_string(id)] = {{"AP50", m.ap50}, {"AP", m.ap}, {"AR", m.ar}, {"gt", m.gt_count}};
    }
    j["per_class"] = classes;
    return j.dump(2);
}

}  // namespace sfa::eval
