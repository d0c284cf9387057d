#include "caries/imgproc/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>

namespace caries::imgproc {

RgbImage read_png(const std::filesystem::path& path) {
    png_image image;
    std::memset(&image, 0, sizeof(image));
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&image, path.string().c_str())) {
        throw FormatError("cannot read PNG " + path.string() + ": " + image.message);
    }
    image.format = PNG_FORMAT_RGB;
    RgbImage img(image.height, image.width);
    if (!png_image_finish_read(&image, nullptr, img.pixels.data(), 0, nullptr)) {
        std::string msg = image.message;
        png_image_free(&image);
        throw FormatError("cannot decode PNG " + path.string() + ": " + msg);
    }
    return img;
}

namespace {

void write_image(const std::filesystem::path& path, std::size_t h, std::size_t w, png_uint_32 format,
                 const std::uint8_t* data) {
    png_image image;
    std::memset(&image, 0, sizeof(image));
    image.version = PNG_IMAGE_VERSION;
    image.width = static_cast<png_uint_32>(w);
    image.height = static_cast<png_uint_32>(h);
    image.format = format;
    if (!png_image_write_to_file(&image, path.string().c_str(), 0, data, 0, nullptr)) {
        throw FormatError("cannot write PNG " + path.string() + ": " + image.message);
    }
}

}  // namespace

void write_png(const std::filesystem::path& path, const RgbImage& img) {
    if (img.empty()) throw ShapeError("write_png: empty image");
    write_image(path, img.height, img.width, PNG_FORMAT_RGB, img.pixels.data());
}

void write_png_gray(const std::filesystem::path& path, std::size_t height, std::size_t width,
                    const std::vector<double>& values) {
    if (values.size() != height * width || values.empty()) throw ShapeError("write_png_gray: bad map size");
    std::vector<std::uint8_t> bytes(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) {
        bytes[i] = static_cast<std::uint8_t>(std::lround(std::clamp(values[i], 0.0, 1.0) * 255.0));
    }
    write_image(path, height, width, PNG_FORMAT_GRAY, bytes.data());
}

RgbImage flip_horizontal(const RgbImage& img) {
    RgbImage out(img.height, img.width);
    for (std::size_t y = 0; y < img.height; ++y)
        for (std::size_t x = 0; x < img.width; ++x) std::copy_n(img.at(y, img.width - 1 - x), 3, out.at(y, x));
    return out;
}

}  // namespace caries::imgproc
