#include "caries/matcher/matcher.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "caries/error.hpp"
#include "caries/ldlr/box_loss.hpp"

namespace caries::matcher {

namespace {

// Shortest-augmenting-path Hungarian method with potentials (O(n^2 m)).
// `a` is n x m with n <= m; returns the column assigned to each row.
std::vector<std::size_t> solve_assignment(const std::vector<double>& a, std::size_t n, std::size_t m) {
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
    std::vector<std::size_t> p(m + 1, 0), way(m + 1, 0);
    for (std::size_t i = 1; i <= n; ++i) {
        p[0] = i;
        std::size_t j0 = 0;
        std::vector<double> minv(m + 1, inf);
        std::vector<char> used(m + 1, 0);
        do {
            used[j0] = 1;
            const std::size_t i0 = p[j0];
            double delta = inf;
            std::size_t j1 = 0;
            for (std::size_t j = 1; j <= m; ++j) {
                if (used[j]) continue;
                const double cur = a[(i0 - 1) * m + (j - 1)] - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (std::size_t j = 0; j <= m; ++j) {
                if (used[j]) {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            const std::size_t j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0 != 0);
    }
    std::vector<std::size_t> col_of_row(n);
    for (std::size_t j = 1; j <= m; ++j)
        if (p[j] != 0) col_of_row[p[j] - 1] = j - 1;
    return col_of_row;
}

// Optimal cost of assigning the gts in `gts` to distinct queries in `queries`.
double optimal_cost(const CostMatrix& c, const std::vector<std::size_t>& queries,
                    const std::vector<std::size_t>& gts) {
    if (gts.empty()) return 0.0;
    const std::size_t n = gts.size(), m = queries.size();
    std::vector<double> a(n * m);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) a[i * m + j] = c(queries[j], gts[i]);
    const auto assign = solve_assignment(a, n, m);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) total += a[i * m + assign[i]];
    return total;
}

}  // namespace

CostMatrix match_cost(std::span<const double> probs, std::size_t num_classes, std::span<const BBox> pred_boxes,
                      std::span<const Object> gts, CostCoefficients coef) {
    const std::size_t nq = pred_boxes.size();
    if (probs.size() != nq * num_classes) {
        throw ShapeError("match_cost: " + std::to_string(probs.size()) + " probabilities for " + std::to_string(nq) +
                         " queries x " + std::to_string(num_classes) + " classes");
    }
    CostMatrix c(nq, gts.size());
    for (std::size_t g = 0; g < gts.size(); ++g) {
        const auto cls = gts[g].class_id;
        if (cls < 0 || static_cast<std::size_t>(cls) >= num_classes) {
            throw ValueError("match_cost: class id " + std::to_string(cls) + " out of range");
        }
        for (std::size_t q = 0; q < nq; ++q) {
            const double p = probs[q * num_classes + static_cast<std::size_t>(cls)];
            c(q, g) = coef.cls * (-p) + coef.l1 * ldlr::l1_box_loss(pred_boxes[q], gts[g].box) +
                      coef.giou * (1.0 - ldlr::giou(pred_boxes[q], gts[g].box));
        }
    }
    return c;
}

MatchResult hungarian(const CostMatrix& cost) {
    if (cost.cols > cost.rows) {
        throw ValueError("hungarian: " + std::to_string(cost.cols) + " ground truths but only " +
                         std::to_string(cost.rows) + " queries");
    }
    for (double v : cost.values)
        if (!std::isfinite(v)) throw ValueError("hungarian: non-finite cost");

    MatchResult result;
    std::vector<std::size_t> free_queries(cost.rows);
    for (std::size_t q = 0; q < cost.rows; ++q) free_queries[q] = q;
    std::vector<std::size_t> pending_gts(cost.cols);
    for (std::size_t g = 0; g < cost.cols; ++g) pending_gts[g] = g;

    // Fix gts in order, each to the smallest query index that still admits an
    // optimal completion.
    const double best = optimal_cost(cost, free_queries, pending_gts);
    const double tol = 1e-12 * std::max(1.0, std::fabs(best));
    double fixed = 0.0;
    for (std::size_t g = 0; g < cost.cols; ++g) {
        pending_gts.erase(pending_gts.begin());
        bool placed = false;
        for (std::size_t k = 0; k < free_queries.size(); ++k) {
            const std::size_t q = free_queries[k];
            std::vector<std::size_t> rest = free_queries;
            rest.erase(rest.begin() + static_cast<std::ptrdiff_t>(k));
            const double completion = fixed + cost(q, g) + optimal_cost(cost, rest, pending_gts);
            if (completion <= best + tol) {
                result.pairs.emplace_back(q, g);
                fixed += cost(q, g);
                free_queries = std::move(rest);
                placed = true;
                break;
            }
        }
        if (!placed) throw std::logic_error("hungarian: failed to reconstruct optimal assignment");
    }
    result.unmatched = free_queries;
    result.total_cost = 0.0;
    for (const auto& [q, g] : result.pairs) result.total_cost += cost(q, g);
    return result;
}

}  // namespace caries::matcher
