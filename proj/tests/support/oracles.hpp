#pragma once

// Independent reference implementations used by the unit and acceptance
// tests. Deliberately naive: nested loops, no shared code with the library.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace oracle {

/// Cross-correlation of x [cin,h,w] with w [cout,cin,k,k]. Out-of-range taps
/// read 0 (zero padding) or the nearest edge pixel (replicate).
inline std::vector<double> conv2d(const std::vector<double>& x, std::size_t cin, std::size_t h, std::size_t w,
                                  const std::vector<double>& wt, std::size_t cout, std::size_t k, std::size_t stride,
                                  std::size_t pad, bool replicate, std::size_t& ho, std::size_t& wo) {
    const long hp = static_cast<long>(h + 2 * pad), wp = static_cast<long>(w + 2 * pad);
    ho = static_cast<std::size_t>((hp - static_cast<long>(k)) / static_cast<long>(stride) + 1);
    wo = static_cast<std::size_t>((wp - static_cast<long>(k)) / static_cast<long>(stride) + 1);
    std::vector<double> out(cout * ho * wo, 0.0);
    for (std::size_t o = 0; o < cout; ++o)
        for (std::size_t oy = 0; oy < ho; ++oy)
            for (std::size_t ox = 0; ox < wo; ++ox) {
                double s = 0.0;
                for (std::size_t c = 0; c < cin; ++c)
                    for (std::size_t ky = 0; ky < k; ++ky)
                        for (std::size_t kx = 0; kx < k; ++kx) {
                            long y = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
                            long xx = static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
                            double v;
                            if (y < 0 || xx < 0 || y >= static_cast<long>(h) || xx >= static_cast<long>(w)) {
                                if (!replicate) continue;
                                y = std::clamp(y, 0L, static_cast<long>(h) - 1);
                                xx = std::clamp(xx, 0L, static_cast<long>(w) - 1);
                            }
                            v = x[(c * h + static_cast<std::size_t>(y)) * w + static_cast<std::size_t>(xx)];
                            s += v * wt[((o * cin + c) * k + ky) * k + kx];
                        }
                out[(o * ho + oy) * wo + ox] = s;
            }
    return out;
}

/// Scharr magnitude with explicit edge clamping.
inline std::vector<double> scharr(const std::vector<double>& g, std::size_t h, std::size_t w) {
    static const int kx[3][3] = {{-3, 0, 3}, {-10, 0, 10}, {-3, 0, 3}};
    auto at = [&](long y, long x) {
        y = std::clamp(y, 0L, static_cast<long>(h) - 1);
        x = std::clamp(x, 0L, static_cast<long>(w) - 1);
        return g[static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x)];
    };
    std::vector<double> out(h * w);
    for (long y = 0; y < static_cast<long>(h); ++y)
        for (long x = 0; x < static_cast<long>(w); ++x) {
            double gx = 0, gy = 0;
            for (int i = 0; i < 3; ++i)
                for (int j = 0; j < 3; ++j) {
                    gx += kx[i][j] * at(y + i - 1, x + j - 1);
                    gy += kx[j][i] * at(y + i - 1, x + j - 1);
                }
            out[static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x)] = std::sqrt(gx * gx + gy * gy);
        }
    return out;
}

/// Minimum total cost of assigning every column to a distinct row, by
/// exhaustive search.
inline double min_assignment(const std::vector<double>& cost, std::size_t rows, std::size_t cols) {
    double best = std::numeric_limits<double>::infinity();
    std::vector<bool> used(rows, false);
    auto rec = [&](auto&& self, std::size_t c, double acc) -> void {
        if (c == cols) {
            best = std::min(best, acc);
            return;
        }
        for (std::size_t r = 0; r < rows; ++r) {
            if (used[r]) continue;
            used[r] = true;
            self(self, c + 1, acc + cost[r * cols + c]);
            used[r] = false;
        }
    };
    rec(rec, 0, 0.0);
    return best;
}

struct Box {
    double x1, y1, x2, y2;
};

inline double box_iou(const Box& a, const Box& b) {
    const double iw = std::max(0.0, std::min(a.x2, b.x2) - std::max(a.x1, b.x1));
    const double ih = std::max(0.0, std::min(a.y2, b.y2) - std::max(a.y1, b.y1));
    const double inter = iw * ih;
    const double uni = (a.x2 - a.x1) * (a.y2 - a.y1) + (b.x2 - b.x1) * (b.y2 - b.y1) - inter;
    return uni > 0 ? inter / uni : 0.0;
}

struct Det {
    std::size_t image;
    Box box;
    double score;
};
struct Gt {
    std::size_t image;
    Box box;
};

/// COCO-style AP from the textbook definition: at each recall level
/// r in {0, .01, ..., 1}, take the best precision among PR points whose
/// recall is at least r (0 if none), then average.
inline std::optional<double> average_precision(std::vector<Det> dets, const std::vector<Gt>& gts, double thr) {
    if (gts.empty()) {
        if (dets.empty()) return std::nullopt;
        return 0.0;
    }
    std::stable_sort(dets.begin(), dets.end(), [](const Det& a, const Det& b) { return a.score > b.score; });
    std::vector<bool> taken(gts.size(), false);
    std::vector<double> prec, rec;
    double tp = 0, fp = 0;
    for (const auto& d : dets) {
        int best = -1;
        double best_iou = thr;
        for (std::size_t g = 0; g < gts.size(); ++g) {
            if (gts[g].image != d.image || taken[g]) continue;
            const double v = box_iou(d.box, gts[g].box);
            if (v >= best_iou && (best < 0 || v > best_iou)) {
                best = static_cast<int>(g);
                best_iou = v;
            }
        }
        if (best >= 0) {
            taken[static_cast<std::size_t>(best)] = true;
            tp += 1;
        } else {
            fp += 1;
        }
        prec.push_back(tp / (tp + fp));
        rec.push_back(tp / static_cast<double>(gts.size()));
    }
    double sum = 0.0;
    for (int i = 0; i <= 100; ++i) {
        const double r = i / 100.0;
        double p = 0.0;
        for (std::size_t j = 0; j < prec.size(); ++j)
            if (rec[j] >= r) p = std::max(p, prec[j]);
        sum += p;
    }
    return sum / 101.0;
}

/// Unique scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& tag) {
    static std::mt19937_64 rng(std::random_device{}());
    auto p = std::filesystem::temp_directory_path() / ("caries_" + tag + "_" + std::to_string(rng() % 1000000000));
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

}  // namespace oracle
