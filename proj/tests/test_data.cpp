#include <fstream>
#include <set>

#include <gtest/gtest.h>

#include "caries/data/dataset.hpp"
#include "caries/error.hpp"
#include "caries/imgproc/structure.hpp"
#include "support/oracles.hpp"

namespace dt = caries::data;
namespace fs = std::filesystem;

namespace {

std::string read_text(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

void write_text(const fs::path& p, const std::string& s) { std::ofstream(p, std::ios::binary) << s; }

// Three-line header then one element per line, so element k of annotations
// sits on a known line.
std::string coco_doc(const std::string& annotation) {
    return "{\n"
           "\"categories\": [{\"id\": 1, \"name\": \"a\"}],\n"
           "\"images\": [{\"id\": 7, \"file_name\": \"x.png\", \"width\": 64, \"height\": 32}],\n"
           "\"annotations\": [\n"
           "{\"image_id\": 7, \"category_id\": 1, \"bbox\": [0, 0, 8, 8]},\n" +
           annotation + "\n]\n}\n";
}

}  // namespace

TEST(Synthetic, DeterministicRender) {
    const auto a = dt::render_synthetic(64, 1, 4, 99);
    const auto b = dt::render_synthetic(64, 1, 4, 99);
    EXPECT_EQ(a.image.pixels, b.image.pixels);
    ASSERT_EQ(a.objects.size(), b.objects.size());
    for (std::size_t i = 0; i < a.objects.size(); ++i) EXPECT_EQ(a.objects[i].box, b.objects[i].box);
    EXPECT_NE(dt::render_synthetic(64, 1, 4, 100).image.pixels, a.image.pixels);
}

TEST(Synthetic, BoxesInsideAndCountsInRange) {
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        const auto s = dt::render_synthetic(64, 1, 4, seed);
        EXPECT_GE(s.objects.size(), 1u);
        EXPECT_LE(s.objects.size(), 4u);
        for (const auto& o : s.objects) {
            const auto c = o.box.corners();
            EXPECT_GE(c.x1, 0.0);
            EXPECT_GE(c.y1, 0.0);
            EXPECT_LE(c.x2, 1.0);
            EXPECT_LE(c.y2, 1.0);
            EXPECT_GT(o.box.w, 0.0);
            EXPECT_GE(o.class_id, 0);
            EXPECT_LT(o.class_id, static_cast<int>(dt::synthetic_classes().size()));
        }
    }
    EXPECT_THROW(dt::render_synthetic(8, 1, 4, 0), caries::ValueError);
    EXPECT_THROW(dt::render_synthetic(64, 5, 4, 0), caries::ValueError);
}

TEST(Synthetic, BandBorderCarriesStructure) {
    double border = 0, background = 0;
    std::size_t nb = 0, ng = 0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto s = dt::render_synthetic(64, 1, 4, seed);
        const auto t = caries::imgproc::struct_target_of(s.image);
        for (std::size_t y = 1; y + 1 < 64; ++y)
            for (std::size_t x = 1; x + 1 < 64; ++x) {
                const auto b = [&](std::size_t yy, std::size_t xx) { return s.band[yy * 64 + xx] != 0; };
                const bool edge = b(y, x) && (!b(y - 1, x) || !b(y + 1, x) || !b(y, x - 1) || !b(y, x + 1));
                bool far = true;
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) far = far && !b(y + dy, x + dx);
                if (edge) {
                    border += t(y, x);
                    ++nb;
                } else if (far) {
                    background += t(y, x);
                    ++ng;
                }
            }
    }
    ASSERT_GT(nb, 0u);
    ASSERT_GT(ng, 0u);
    EXPECT_GT(border / nb, background / ng + 0.1);
}

TEST(Synthetic, GeneratedSplitsAreDisjointAndReproducible) {
    const auto dir = oracle::scratch_dir("gen");
    dt::SyntheticSpec spec;
    spec.train = 6;
    spec.val = 3;
    spec.test = 3;
    spec.pretrain = 4;
    spec.seed = 12;
    const auto a = dt::gen_synthetic(spec, dir / "a");
    dt::gen_synthetic(spec, dir / "b");

    std::set<std::int64_t> ids;
    std::size_t total = 0;
    for (const auto& split : {a.train, a.val, a.test, a.pretrain}) {
        const auto ds = dt::load_coco(split / "annotations.json");
        for (const auto& r : ds.images) ids.insert(r.id);
        total += ds.images.size();
    }
    EXPECT_EQ(ids.size(), total);
    EXPECT_EQ(total, 16u);
    for (const char* split : {"train", "val", "test", "pretrain"})
        EXPECT_EQ(read_text(dir / "a" / split / "annotations.json"), read_text(dir / "b" / split / "annotations.json"));
    EXPECT_EQ(read_text(dir / "a" / "train" / "images" / "img_000002.png"),
              read_text(dir / "b" / "train" / "images" / "img_000002.png"));
    EXPECT_EQ(dt::list_corpus(a.pretrain).size(), 4u);
    fs::remove_all(dir);
}

TEST(Coco, RoundTrip) {
    const auto dir = oracle::scratch_dir("coco");
    dt::Dataset ds;
    ds.root = dir;
    ds.classes = {"x", "y"};
    ds.images = {{3, "a.png", 64, 48}, {9, "b.png", 32, 32}};
    ds.objects = {{{{0.3, 0.4, 0.2, 0.1}, 1}, {{0.5, 0.5, 0.3, 0.3}, 0}}, {{{0.123456789, 0.5, 0.01, 0.7}, 1}}};
    dt::write_coco(dir / "annotations.json", ds);
    const auto back = dt::load_coco(dir / "annotations.json");
    EXPECT_EQ(back.classes, ds.classes);
    ASSERT_EQ(back.images.size(), 2u);
    EXPECT_EQ(back.images[1].id, 9);
    EXPECT_EQ(back.max_objects_per_image(), 2u);
    for (std::size_t i = 0; i < 2; ++i)
        for (std::size_t k = 0; k < ds.objects[i].size(); ++k) {
            const auto &w = ds.objects[i][k], &g = back.objects[i][k];
            EXPECT_EQ(g.class_id, w.class_id);
            EXPECT_NEAR(g.box.cx, w.box.cx, 1e-9);
            EXPECT_NEAR(g.box.cy, w.box.cy, 1e-9);
            EXPECT_NEAR(g.box.w, w.box.w, 1e-9);
            EXPECT_NEAR(g.box.h, w.box.h, 1e-9);
        }
    fs::remove_all(dir);
}

TEST(Coco, NormalizeBox) {
    const auto b = dt::normalize_box(16, 8, 32, 8, 64, 32);
    EXPECT_DOUBLE_EQ(b.cx, 0.5);
    EXPECT_DOUBLE_EQ(b.cy, 0.375);
    EXPECT_DOUBLE_EQ(b.w, 0.5);
    EXPECT_DOUBLE_EQ(b.h, 0.25);
    double px[4];
    dt::denormalize_box(b, 64, 32, px);
    EXPECT_DOUBLE_EQ(px[0], 16);
    EXPECT_DOUBLE_EQ(px[3], 8);
}

TEST(Coco, ErrorsNameTheLine) {
    const auto dir = oracle::scratch_dir("cocoerr");
    const auto p = dir / "annotations.json";
    auto expect_error = [&](const std::string& ann, const std::string& needle) {
        write_text(p, coco_doc(ann));
        try {
            dt::load_coco(p);
            ADD_FAILURE() << "no error for " << ann;
        } catch (const caries::FormatError& e) {
            const std::string msg = e.what();
            EXPECT_NE(msg.find(":6:"), std::string::npos) << msg;
            EXPECT_NE(msg.find(needle), std::string::npos) << msg;
        }
    };
    expect_error("{\"image_id\": 8, \"category_id\": 1, \"bbox\": [0, 0, 8, 8]}", "unknown image id 8");
    expect_error("{\"image_id\": 7, \"category_id\": 4, \"bbox\": [0, 0, 8, 8]}", "unknown category id 4");
    expect_error("{\"image_id\": 7, \"category_id\": 1, \"bbox\": [60, 0, 8, 8]}", "outside image");
    expect_error("{\"image_id\": 7, \"category_id\": 1, \"bbox\": [0, 0, 8]}", "4 numbers");
    expect_error("{\"image_id\": 7, \"category_id\": 1}", "missing field 'bbox'");

    write_text(p, "{\"images\": [}");
    EXPECT_THROW(dt::load_coco(p), caries::FormatError);
    EXPECT_THROW(dt::load_coco(dir / "absent.json"), caries::FormatError);
    fs::remove_all(dir);
}
