#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

#include "caries/data/dataset.hpp"

namespace caries::data {

namespace {

using nlohmann::json;

// 1-based line of each element of the top-level array `key`. Used only for
// diagnostics, so it assumes the text already parsed as JSON.
std::vector<std::size_t> element_lines(const std::string& text, const std::string& key) {
    std::vector<std::size_t> lines;
    std::vector<char> stack;
    std::size_t line = 1;
    bool in_string = false, escaped = false;
    std::string token, last_string, current_key;
    for (char ch : text) {
        if (ch == '\n') ++line;
        if (in_string) {
            if (escaped) {
                escaped = false;
            } else if (ch == '\\') {
                escaped = true;
            } else if (ch == '"') {
                in_string = false;
                last_string = token;
            } else {
                token.push_back(ch);
            }
            continue;
        }
        switch (ch) {
            case '"':
                in_string = true;
                token.clear();
                break;
            case ':':
                if (stack.size() == 1) current_key = last_string;
                break;
            case '{':
            case '[':
                stack.push_back(ch);
                if (stack.size() == 3 && stack[1] == '[' && current_key == key) lines.push_back(line);
                break;
            case '}':
            case ']':
                if (!stack.empty()) stack.pop_back();
                break;
            default:
                break;
        }
    }
    return lines;
}

std::string where(const std::filesystem::path& p, const std::vector<std::size_t>& lines, std::size_t idx,
                  const char* section) {
    std::ostringstream os;
    os << p.string();
    if (idx < lines.size()) os << ":" << lines[idx];
    os << ": " << section << "[" << idx << "]";
    return os.str();
}

template <class T>
T field(const json& obj, const char* name, const std::string& ctx) {
    if (!obj.is_object() || !obj.contains(name)) throw FormatError(ctx + ": missing field '" + name + "'");
    try {
        return obj.at(name).get<T>();
    } catch (const json::exception&) {
        throw FormatError(ctx + ": field '" + name + "' has the wrong type");
    }
}

}  // namespace

std::size_t Dataset::max_objects_per_image() const {
    std::size_t m = 0;
    for (const auto& o : objects) m = std::max(m, o.size());
    return m;
}

BBox normalize_box(double x, double y, double w, double h, std::size_t img_w, std::size_t img_h) {
    const double iw = static_cast<double>(img_w), ih = static_cast<double>(img_h);
    return {(x + 0.5 * w) / iw, (y + 0.5 * h) / ih, w / iw, h / ih};
}

void denormalize_box(const BBox& b, std::size_t img_w, std::size_t img_h, double out[4]) {
    const double iw = static_cast<double>(img_w), ih = static_cast<double>(img_h);
    out[2] = b.w * iw;
    out[3] = b.h * ih;
    out[0] = b.cx * iw - 0.5 * out[2];
    out[1] = b.cy * ih - 0.5 * out[3];
}

Dataset load_coco(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open annotations " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    const std::string text = ss.str();
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
    if (!doc.is_object()) throw FormatError(path.string() + ": top level must be an object");
    for (const char* section : {"images", "annotations", "categories"}) {
        if (!doc.contains(section) || !doc[section].is_array()) {
            throw FormatError(path.string() + ": missing array '" + section + "'");
        }
    }

    Dataset ds;
    ds.root = path.parent_path();
    const auto cat_lines = element_lines(text, "categories");
    std::map<std::int64_t, int> class_of;
    for (std::size_t i = 0; i < doc["categories"].size(); ++i) {
        const auto& c = doc["categories"][i];
        const auto ctx = where(path, cat_lines, i, "categories");
        const auto id = field<std::int64_t>(c, "id", ctx);
        if (class_of.count(id)) throw FormatError(ctx + ": duplicate category id " + std::to_string(id));
        class_of[id] = static_cast<int>(ds.classes.size());
        ds.classes.push_back(field<std::string>(c, "name", ctx));
    }

    const auto img_lines = element_lines(text, "images");
    std::map<std::int64_t, std::size_t> index_of;
    for (std::size_t i = 0; i < doc["images"].size(); ++i) {
        const auto& im = doc["images"][i];
        const auto ctx = where(path, img_lines, i, "images");
        ImageRecord rec;
        rec.id = field<std::int64_t>(im, "id", ctx);
        rec.file_name = field<std::string>(im, "file_name", ctx);
        rec.width = field<std::size_t>(im, "width", ctx);
        rec.height = field<std::size_t>(im, "height", ctx);
        if (rec.width == 0 || rec.height == 0) throw FormatError(ctx + ": zero image size");
        if (index_of.count(rec.id)) throw FormatError(ctx + ": duplicate image id " + std::to_string(rec.id));
        index_of[rec.id] = ds.images.size();
        ds.images.push_back(rec);
    }
    ds.objects.resize(ds.images.size());

    const auto ann_lines = element_lines(text, "annotations");
    for (std::size_t i = 0; i < doc["annotations"].size(); ++i) {
        const auto& a = doc["annotations"][i];
        const auto ctx = where(path, ann_lines, i, "annotations");
        const auto image_id = field<std::int64_t>(a, "image_id", ctx);
        const auto category_id = field<std::int64_t>(a, "category_id", ctx);
        auto it = index_of.find(image_id);
        if (it == index_of.end()) throw FormatError(ctx + ": unknown image id " + std::to_string(image_id));
        auto ct = class_of.find(category_id);
        if (ct == class_of.end()) throw FormatError(ctx + ": unknown category id " + std::to_string(category_id));
        const auto bbox = field<std::vector<double>>(a, "bbox", ctx);
        if (bbox.size() != 4) throw FormatError(ctx + ": bbox must have 4 numbers");
        const ImageRecord& rec = ds.images[it->second];
        const double tol = 1e-6;
        const bool inside = bbox[2] >= 0 && bbox[3] >= 0 && bbox[0] >= -tol && bbox[1] >= -tol &&
                            bbox[0] + bbox[2] <= static_cast<double>(rec.width) + tol &&
                            bbox[1] + bbox[3] <= static_cast<double>(rec.height) + tol;
        if (!inside) throw FormatError(ctx + ": bbox outside image " + std::to_string(image_id));
        ds.objects[it->second].push_back(
            {normalize_box(bbox[0], bbox[1], bbox[2], bbox[3], rec.width, rec.height), ct->second});
    }
    return ds;
}

void write_coco(const std::filesystem::path& path, const Dataset& ds) {
    json images = json::array(), annotations = json::array(), categories = json::array();
    for (std::size_t c = 0; c < ds.classes.size(); ++c) {
        categories.push_back({{"id", static_cast<std::int64_t>(c) + 1}, {"name", ds.classes[c]}});
    }
    std::int64_t ann_id = 1;
    for (std::size_t i = 0; i < ds.images.size(); ++i) {
        const auto& rec = ds.images[i];
        images.push_back({{"id", rec.id}, {"file_name", rec.file_name}, {"width", rec.width}, {"height", rec.height}});
        for (const auto& o : ds.objects[i]) {
            double px[4];
            denormalize_box(o.box, rec.width, rec.height, px);
            annotations.push_back({{"id", ann_id++},
                                   {"image_id", rec.id},
                                   {"category_id", o.class_id + 1},
                                   {"bbox", {px[0], px[1], px[2], px[3]}},
                                   {"area", px[2] * px[3]},
                                   {"iscrowd", 0}});
        }
    }
    json doc = {{"images", images}, {"annotations", annotations}, {"categories", categories}};
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw FormatError("cannot write " + path.string());
    // One entry per line keeps diagnostics line-precise.
    out << "{\n";
    const char* sections[] = {"images", "annotations", "categories"};
    for (int s = 0; s < 3; ++s) {
        out << "  \"" << sections[s] << "\": [";
        const auto& arr = doc[sections[s]];
        for (std::size_t i = 0; i < arr.size(); ++i) out << (i ? ",\n    " : "\n    ") << arr[i].dump();
        out << (arr.empty() ? "]" : "\n  ]") << (s < 2 ? ",\n" : "\n");
    }
    out << "}\n";
}

std::vector<std::filesystem::path> list_corpus(const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    std::vector<fs::path> out;
    if (fs::exists(dir / "annotations.json")) {
        const Dataset ds = load_coco(dir / "annotations.json");
        for (std::size_t i = 0; i < ds.images.size(); ++i) out.push_back(ds.image_path(i));
        return out;
    }
    if (!fs::is_directory(dir)) throw FormatError("corpus directory " + dir.string() + " does not exist");
    for (const auto& e : fs::recursive_directory_iterator(dir)) {
        if (e.is_regular_file() && e.path().extension() == ".png") out.push_back(e.path());
    }
    std::sort(out.begin(), out.end());
    return out;
}

}  // namespace caries::data
