#include "caries/eval/evaluator.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

#include "caries/error.hpp"

namespace caries::eval {

std::array<double, kNumThresholds> iou_thresholds() {
    std::array<double, kNumThresholds> t{};
    for (std::size_t i = 0; i < kNumThresholds; ++i) t[i] = static_cast<double>(50 + 5 * i) / 100.0;
    return t;
}

double iou_xyxy(const CornerBox& a, const CornerBox& b) { return iou(a, b); }

std::optional<double> ap_per_class(std::span<const ScoredBox> dets, std::span<const GtBox> gts, double thr) {
    if (gts.empty()) return dets.empty() ? std::nullopt : std::optional<double>(0.0);
    if (dets.empty()) return 0.0;

    std::vector<char> taken(gts.size(), 0);
    std::vector<double> tp(dets.size()), fp(dets.size());
    double ctp = 0, cfp = 0;
    for (std::size_t d = 0; d < dets.size(); ++d) {
        const CornerBox db = dets[d].box.corners();
        std::size_t best = gts.size();
        double best_iou = thr;
        for (std::size_t g = 0; g < gts.size(); ++g) {
            if (taken[g] || gts[g].image != dets[d].image) continue;
            const double v = iou_xyxy(db, gts[g].box.corners());
            if (v >= best_iou && (best == gts.size() || v > best_iou)) {
                best_iou = v;
                best = g;
            }
        }
        if (best != gts.size()) {
            taken[best] = 1;
            ctp += 1;
        } else {
            cfp += 1;
        }
        tp[d] = ctp;
        fp[d] = cfp;
    }

    const double npos = static_cast<double>(gts.size());
    std::vector<double> recall(dets.size()), precision(dets.size());
    for (std::size_t d = 0; d < dets.size(); ++d) {
        recall[d] = tp[d] / npos;
        precision[d] = tp[d] / (tp[d] + fp[d]);
    }
    for (std::size_t d = dets.size() - 1; d > 0; --d) precision[d - 1] = std::max(precision[d - 1], precision[d]);

    double total = 0.0;
    for (int j = 0; j <= 100; ++j) {
        const double r = j / 100.0;
        auto it = std::lower_bound(recall.begin(), recall.end(), r);
        if (it != recall.end()) total += precision[static_cast<std::size_t>(it - recall.begin())];
    }
    return total / 101.0;
}

EvalResult evaluate(const std::vector<std::vector<Detection>>& dets, const std::vector<std::vector<Object>>& gts,
                    std::size_t num_classes) {
    if (dets.size() != gts.size()) {
        throw ValueError("evaluate: " + std::to_string(dets.size()) + " detection lists for " +
                         std::to_string(gts.size()) + " images");
    }
    std::vector<std::vector<ScoredBox>> cls_dets(num_classes);
    std::vector<std::vector<GtBox>> cls_gts(num_classes);
    auto check_class = [&](int c, const char* what) {
        if (c < 0 || static_cast<std::size_t>(c) >= num_classes) {
            throw ValueError(std::string("evaluate: ") + what + " class id " + std::to_string(c) + " outside [0," +
                             std::to_string(num_classes) + ")");
        }
        return static_cast<std::size_t>(c);
    };
    for (std::size_t i = 0; i < dets.size(); ++i) {
        for (const auto& d : dets[i]) cls_dets[check_class(d.class_id, "detection")].push_back({i, d.box, d.score});
        for (const auto& g : gts[i]) cls_gts[check_class(g.class_id, "ground-truth")].push_back({i, g.box});
    }

    const auto thresholds = iou_thresholds();
    EvalResult result;
    result.per_class.resize(num_classes);
    double sum_map = 0, sum50 = 0, sum75 = 0;
    std::size_t counted = 0;
    for (std::size_t c = 0; c < num_classes; ++c) {
        auto& list = cls_dets[c];
        std::stable_sort(list.begin(), list.end(), [](const ScoredBox& a, const ScoredBox& b) { return a.score > b.score; });
        ClassResult& cr = result.per_class[c];
        cr.has_gt = !cls_gts[c].empty();
        double s = 0;
        for (std::size_t t = 0; t < kNumThresholds; ++t) {
            cr.ap[t] = ap_per_class(list, cls_gts[c], thresholds[t]);
            s += cr.ap[t].value_or(0.0);
        }
        cr.ap_mean = s / static_cast<double>(kNumThresholds);
        cr.ap50 = cr.ap[0].value_or(0.0);
        cr.ap75 = cr.ap[5].value_or(0.0);
        if (cr.has_gt) {
            sum_map += cr.ap_mean;
            sum50 += cr.ap50;
            sum75 += cr.ap75;
            ++counted;
        }
    }
    if (counted > 0) {
        result.map = sum_map / static_cast<double>(counted);
        result.map50 = sum50 / static_cast<double>(counted);
        result.map75 = sum75 / static_cast<double>(counted);
    }
    return result;
}

nlohmann::json to_json(const EvalResult& r, const std::vector<std::string>& class_names) {
    nlohmann::json per_class = nlohmann::json::object();
    for (std::size_t c = 0; c < r.per_class.size(); ++c) {
        const std::string name = c < class_names.size() ? class_names[c] : std::to_string(c);
        const auto& cr = r.per_class[c];
        if (!cr.has_gt) {
            per_class[name] = {{"ap", nullptr}, {"ap50", nullptr}, {"ap75", nullptr}};
            continue;
        }
        per_class[name] = {{"ap", cr.ap_mean}, {"ap50", cr.ap50}, {"ap75", cr.ap75}};
    }
    return {{"per_class", per_class}, {"map", r.map}, {"map50", r.map50}, {"map75", r.map75}};
}

std::string format_table(const EvalResult& r, const std::vector<std::string>& class_names) {
    std::ostringstream os;
    char line[128];
    std::snprintf(line, sizeof line, "%-16s %8s %8s %8s\n", "class", "AP", "AP50", "AP75");
    os << line;
    for (std::size_t c = 0; c < r.per_class.size(); ++c) {
        const std::string name = c < class_names.size() ? class_names[c] : std::to_string(c);
        const auto& cr = r.per_class[c];
        if (!cr.has_gt) {
            std::snprintf(line, sizeof line, "%-16s %8s %8s %8s\n", name.c_str(), "-", "-", "-");
        } else {
            std::snprintf(line, sizeof line, "%-16s %8.2f %8.2f %8.2f\n", name.c_str(), 100 * cr.ap_mean,
                          100 * cr.ap50, 100 * cr.ap75);
        }
        os << line;
    }
    std::snprintf(line, sizeof line, "%-16s %8.2f %8.2f %8.2f\n", "all (mAP)", 100 * r.map, 100 * r.map50,
                  100 * r.map75);
    os << line;
    return os.str();
}

}  // namespace caries::eval
