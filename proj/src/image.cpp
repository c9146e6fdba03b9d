#include "mvr/image.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <sstream>

#include <png.h>

#include "mvr/errors.hpp"

namespace mvr {

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace

ImageRGBA read_png(const std::string& path) {
    png_image image;
    std::memset(&image, 0, sizeof(image));
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&image, path.c_str())) {
        throw IoError("cannot read PNG " + path + ": " + image.message);
    }
    image.format = PNG_FORMAT_RGBA;
    ImageRGBA out(static_cast<int>(image.width), static_cast<int>(image.height));
    if (!png_image_finish_read(&image, nullptr, out.data.data(), 0, nullptr)) {
        png_image_free(&image);
        throw IoError("cannot decode PNG " + path + ": " + image.message);
    }
    return out;
}

void write_png(const std::string& path, const ImageRGBA& img) {
    png_image image;
    std::memset(&image, 0, sizeof(image));
    image.version = PNG_IMAGE_VERSION;
    image.width = static_cast<png_uint_32>(img.width);
    image.height = static_cast<png_uint_32>(img.height);
    image.format = PNG_FORMAT_RGBA;
    if (!png_image_write_to_file(&image, path.c_str(), 0, img.data.data(), 0, nullptr)) {
        throw IoError("cannot write PNG " + path + ": " + image.message);
    }
}

ImageF luminance(const ImageRGBA& img) {
    ImageF out(img.width, img.height);
    for (std::size_t i = 0, p = 0; p < out.data.size(); ++p, i += 4) {
        const float a = img.data[i + 3] / 255.0f;
        out.data[p] = a * (0.299f * img.data[i] + 0.587f * img.data[i + 1] + 0.114f * img.data[i + 2]) / 255.0f;
    }
    return out;
}

float sample_bilinear(const ImageF& img, double x, double y) {
    x = std::clamp(x, 0.0, img.width - 1.0);
    y = std::clamp(y, 0.0, img.height - 1.0);
    const int x0 = std::min(static_cast<int>(x), img.width - 2 < 0 ? 0 : img.width - 2);
    const int y0 = std::min(static_cast<int>(y), img.height - 2 < 0 ? 0 : img.height - 2);
    const int x1 = std::min(x0 + 1, img.width - 1);
    const int y1 = std::min(y0 + 1, img.height - 1);
    const double fx = x - x0;
    const double fy = y - y0;
    const double top = img.at(x0, y0) * (1.0 - fx) + img.at(x1, y0) * fx;
    const double bot = img.at(x0, y1) * (1.0 - fx) + img.at(x1, y1) * fx;
    return static_cast<float>(top * (1.0 - fy) + bot * fy);
}

ImageRGBA over_white(const ImageRGBA& img) {
    ImageRGBA out = img;
    for (std::size_t i = 0; i < out.data.size(); i += 4) {
        const int a = img.data[i + 3];
        for (int c = 0; c < 3; ++c) {
            out.data[i + c] = static_cast<std::uint8_t>((img.data[i + c] * a + 255 * (255 - a) + 127) / 255);
        }
        out.data[i + 3] = 255;
    }
    return out;
}

ImageF read_pfm(const std::string& path) {
    FilePtr f(std::fopen(path.c_str(), "rb"));
    if (!f) throw IoError("cannot open " + path);
    char magic[3] = {0, 0, 0};
    int w = 0, h = 0;
    double scale = 0.0;
    if (std::fscanf(f.get(), "%2s %d %d %lf", magic, &w, &h, &scale) != 4 || std::strcmp(magic, "Pf") != 0 ||
        w <= 0 || h <= 0) {
        throw IoError("bad PFM header in " + path);
    }
    std::fgetc(f.get());  // single whitespace after the scale
    if (scale >= 0.0) throw IoError("big-endian PFM not supported: " + path);
    ImageF img(w, h);
    // PFM rows are stored bottom-to-top.
    for (int y = h - 1; y >= 0; --y) {
        if (std::fread(&img.data[static_cast<std::size_t>(y) * w], sizeof(float), w, f.get()) !=
            static_cast<std::size_t>(w)) {
            throw IoError("truncated PFM " + path);
        }
    }
    return img;
}

void write_pfm(const std::string& path, const ImageF& img) {
    FilePtr f(std::fopen(path.c_str(), "wb"));
    if (!f) throw IoError("cannot write " + path);
    std::fprintf(f.get(), "Pf\n%d %d\n-1.0\n", img.width, img.height);
    for (int y = img.height - 1; y >= 0; --y) {
        std::fwrite(&img.data[static_cast<std::size_t>(y) * img.width], sizeof(float), img.width, f.get());
    }
}

}  // namespace mvr
