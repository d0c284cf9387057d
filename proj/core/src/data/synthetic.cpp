#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <random>

#include "caries/data/dataset.hpp"

namespace caries::data {

namespace {

using Rng = std::mt19937_64;

constexpr int kSubsamples = 4;

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

double uni(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

struct Band {
    double y0, amp, freq, phase, half, x0, x1, size;

    double center(double x) const {
        return y0 + amp * std::sin(2.0 * std::numbers::pi * freq * x / size + phase);
    }
    bool contains(double x, double y) const {
        if (x < x0) return std::hypot(x - x0, y - center(x0)) <= half;
        if (x > x1) return std::hypot(x - x1, y - center(x1)) <= half;
        return std::fabs(y - center(x)) <= half;
    }
};

struct Ellipse {
    double cx, cy, rx, ry;
    int cls;

    bool contains(double x, double y) const {
        const double dx = (x - cx) / rx, dy = (y - cy) / ry;
        return dx * dx + dy * dy <= 1.0;
    }
};

// Fraction of the 4x4 subsamples of pixel (x,y) that satisfy `inside`.
template <class F>
double coverage(std::size_t x, std::size_t y, F&& inside) {
    int hits = 0;
    for (int i = 0; i < kSubsamples; ++i)
        for (int j = 0; j < kSubsamples; ++j) {
            const double sx = static_cast<double>(x) + (j + 0.5) / kSubsamples;
            const double sy = static_cast<double>(y) + (i + 0.5) / kSubsamples;
            hits += inside(sx, sy) ? 1 : 0;
        }
    return hits / static_cast<double>(kSubsamples * kSubsamples);
}

// Every sample of the ellipse's 1-px-padded bounding box is on (or off) the band.
bool placed_on_band(const Ellipse& e, const Band& band, bool want_on) {
    const int steps = 12;
    for (int i = 0; i <= steps; ++i)
        for (int j = 0; j <= steps; ++j) {
            const double x = e.cx - e.rx - 1 + (2 * e.rx + 2) * j / steps;
            const double y = e.cy - e.ry - 1 + (2 * e.ry + 2) * i / steps;
            const bool in_ellipse_zone = !want_on || e.contains(x, y);
            if (!in_ellipse_zone) continue;
            if (band.contains(x, y) != want_on) return false;
        }
    return true;
}

bool overlaps(const Ellipse& a, const Ellipse& b) {
    return std::fabs(a.cx - b.cx) < a.rx + b.rx + 2 && std::fabs(a.cy - b.cy) < a.ry + b.ry + 2;
}

}  // namespace

const std::vector<std::string>& synthetic_classes() {
    static const std::vector<std::string> names = {"lesion-small", "lesion-large", "distractor"};
    return names;
}

SyntheticSample render_synthetic(std::size_t size, std::size_t min_objects, std::size_t max_objects,
                                 std::uint64_t seed) {
    if (size < 16) throw ValueError("render_synthetic: image size must be at least 16");
    if (min_objects > max_objects) throw ValueError("render_synthetic: min_objects > max_objects");
    Rng rng(seed);
    const double s = static_cast<double>(size);

    Band band{};
    band.size = s;
    band.y0 = s * uni(rng, 0.42, 0.58);
    band.amp = s * uni(rng, 0.0, 0.05);
    band.freq = uni(rng, 0.5, 1.2);
    band.phase = uni(rng, 0.0, 2.0 * std::numbers::pi);
    band.half = s * uni(rng, 0.18, 0.22);
    band.x0 = s * uni(rng, 0.05, 0.14);
    band.x1 = s * uni(rng, 0.86, 0.95);

    const double bg[3] = {36 + uni(rng, -6, 6), 24 + uni(rng, -5, 5), 28 + uni(rng, -5, 5)};
    const double jitter = uni(rng, -10, 10);
    const double tooth[3] = {212 + jitter, 200 + jitter, 178 + jitter};
    const double stain[3] = {112, 80, 58};

    const std::size_t count = std::uniform_int_distribution<std::size_t>(min_objects, max_objects)(rng);
    std::vector<Ellipse> shapes;
    for (std::size_t k = 0; k < count; ++k) {
        const double pick = uni(rng, 0, 1);
        const int cls = pick < 0.36 ? 0 : (pick < 0.72 ? 1 : 2);
        for (int attempt = 0; attempt < 60; ++attempt) {
            Ellipse e{};
            e.cls = cls;
            const double scale = s / 64.0;
            if (cls == 0) {
                e.rx = scale * uni(rng, 2.5, 4.0);
                e.ry = scale * uni(rng, 2.5, 4.0);
            } else if (cls == 1) {
                e.rx = scale * uni(rng, 5.5, 7.5);
                e.ry = scale * uni(rng, 5.5, 7.5);
            } else {
                e.rx = scale * uni(rng, 2.5, 7.5);
                e.ry = scale * uni(rng, 2.5, 7.5);
            }
            e.cx = uni(rng, e.rx + 1, s - e.rx - 1);
            if (cls == 2) {
                e.cy = uni(rng, e.ry + 1, s - e.ry - 1);
            } else {
                const double slack = band.half - e.ry - 1;
                if (slack <= 0) continue;
                e.cy = band.center(e.cx) + uni(rng, -slack, slack);
                if (e.cy - e.ry < 1 || e.cy + e.ry > s - 1) continue;
            }
            if (!placed_on_band(e, band, cls != 2)) continue;
            if (std::any_of(shapes.begin(), shapes.end(), [&](const Ellipse& o) { return overlaps(e, o); })) continue;
            shapes.push_back(e);
            break;
        }
    }

    SyntheticSample out;
    out.image = imgproc::RgbImage(size, size);
    out.band.assign(size * size, 0);
    std::normal_distribution<double> noise(0.0, 4.0);
    const double alpha = uni(rng, 0.5, 0.62);
    for (std::size_t y = 0; y < size; ++y)
        for (std::size_t x = 0; x < size; ++x) {
            const double cb = coverage(x, y, [&](double px, double py) { return band.contains(px, py); });
            out.band[y * size + x] = cb >= 0.5 ? 1 : 0;
            double px[3];
            for (int c = 0; c < 3; ++c) px[c] = bg[c] + cb * (tooth[c] - bg[c]);
            for (const auto& e : shapes) {
                const double ce = coverage(x, y, [&](double qx, double qy) { return e.contains(qx, qy); });
                if (ce <= 0) continue;
                for (int c = 0; c < 3; ++c) {
                    // Distractors are lighter stains on a dark field, lesions darker stains on enamel.
                    const double target = e.cls == 2 ? stain[c] * 0.9 : stain[c];
                    px[c] += ce * alpha * (target - px[c]);
                }
            }
            std::uint8_t* dst = out.image.at(y, x);
            for (int c = 0; c < 3; ++c) dst[c] = static_cast<std::uint8_t>(std::clamp(std::lround(px[c] + noise(rng)), 0L, 255L));
        }

    for (const auto& e : shapes) {
        out.objects.push_back({BBox{e.cx / s, e.cy / s, 2 * e.rx / s, 2 * e.ry / s}, e.cls});
    }
    return out;
}

GeneratedSplits gen_synthetic(const SyntheticSpec& spec, const std::filesystem::path& out) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(out, ec);
    if (ec) throw FormatError("cannot create " + out.string() + ": " + ec.message());

    GeneratedSplits splits{out / "train", out / "val", out / "test", out / "pretrain"};
    const std::pair<fs::path, std::size_t> plan[] = {
        {splits.train, spec.train}, {splits.val, spec.val}, {splits.test, spec.test}, {splits.pretrain, spec.pretrain}};
    std::int64_t next_id = 0;
    for (const auto& [dir, count] : plan) {
        fs::create_directories(dir / "images", ec);
        if (ec) throw FormatError("cannot create " + (dir / "images").string() + ": " + ec.message());
        Dataset ds;
        ds.root = dir;
        ds.classes = synthetic_classes();
        for (std::size_t i = 0; i < count; ++i) {
            const std::int64_t id = next_id++;
            const auto sample = render_synthetic(spec.image_size, spec.min_objects, spec.max_objects,
                                                 splitmix64(spec.seed ^ splitmix64(static_cast<std::uint64_t>(id))));
            char name[32];
            std::snprintf(name, sizeof name, "img_%06lld.png", static_cast<long long>(id));
            imgproc::write_png(dir / "images" / name, sample.image);
            ds.images.push_back({id, name, spec.image_size, spec.image_size});
            ds.objects.push_back(sample.objects);
        }
        write_coco(dir / "annotations.json", ds);
    }
    return splits;
}

}  // namespace caries::data
