#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "caries/box.hpp"
#include "caries/imgproc/image.hpp"

namespace caries::data {

/// Class list of the synthetic corpus, in class-id order.
const std::vector<std::string>& synthetic_classes();

struct SyntheticSpec {
    std::size_t image_size = 64;
    std::size_t train = 300;
    std::size_t val = 60;
    std::size_t test = 60;
    std::size_t pretrain = 200;  // extra unlabeled pool, disjoint from the supervised splits
    std::size_t min_objects = 1;
    std::size_t max_objects = 4;
    std::uint64_t seed = 0;
};

struct ImageRecord {
    std::int64_t id = 0;
    std::string file_name;
    std::size_t width = 0;
    std::size_t height = 0;
};

/// Annotated image set rooted at a directory with `images/` and
/// `annotations.json`. `objects[i]` belongs to `images[i]`; boxes are
/// normalized cxcywh.
struct Dataset {
    std::filesystem::path root;
    std::vector<std::string> classes;
    std::vector<ImageRecord> images;
    std::vector<std::vector<Object>> objects;

    std::filesystem::path image_path(std::size_t i) const { return root / "images" / images[i].file_name; }
    std::size_t max_objects_per_image() const;
};

/// One rendered synthetic sample. `band` marks tooth-band pixels.
struct SyntheticSample {
    imgproc::RgbImage image;
    std::vector<Object> objects;
    std::vector<std::uint8_t> band;
};

/// Renders a dark background with a bright rounded tooth band; lesions are
/// low-contrast dark ellipses on the band (class by size), distractors are
/// similar ellipses off the band.
SyntheticSample render_synthetic(std::size_t size, std::size_t min_objects, std::size_t max_objects,
                                 std::uint64_t seed);

struct GeneratedSplits {
    std::filesystem::path train, val, test, pretrain;
};

/// Writes `{out}/{train,val,test,pretrain}/{images/*.png, annotations.json}`.
/// Image ids are unique across splits. Output is a pure function of `spec`.
GeneratedSplits gen_synthetic(const SyntheticSpec& spec, const std::filesystem::path& out);

/// Parses a COCO subset (images / annotations / categories) and converts
/// pixel xywh boxes to normalized cxcywh. Categories map to class ids in the
/// order listed. Throws FormatError with the offending line for schema
/// violations and dangling ids.
Dataset load_coco(const std::filesystem::path& annotations_json);
void write_coco(const std::filesystem::path& annotations_json, const Dataset& ds);

/// Pixel xywh <-> normalized cxcywh.
BBox normalize_box(double x, double y, double w, double h, std::size_t img_w, std::size_t img_h);
void denormalize_box(const BBox& b, std::size_t img_w, std::size_t img_h, double out[4]);

/// Image files for pretraining: the images of `annotations.json` when
/// present, otherwise every *.png under the directory (sorted).
std::vector<std::filesystem::path> list_corpus(const std::filesystem::path& dir);

}  // namespace caries::data
