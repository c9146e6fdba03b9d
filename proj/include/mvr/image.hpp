#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace mvr {

/// Row-major 8-bit RGBA image.
struct ImageRGBA {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> data;  // width * height * 4

    ImageRGBA() = default;
    ImageRGBA(int w, int h) : width(w), height(h), data(static_cast<std::size_t>(w) * h * 4, 0) {}

    std::uint8_t* at(int x, int y) { return &data[(static_cast<std::size_t>(y) * width + x) * 4]; }
    const std::uint8_t* at(int x, int y) const { return &data[(static_cast<std::size_t>(y) * width + x) * 4]; }
    std::uint8_t alpha(int x, int y) const { return at(x, y)[3]; }
    bool operator==(const ImageRGBA&) const = default;
};

/// Row-major single-channel float image.
struct ImageF {
    int width = 0;
    int height = 0;
    std::vector<float> data;

    ImageF() = default;
    ImageF(int w, int h, float fill = 0.0f) : width(w), height(h), data(static_cast<std::size_t>(w) * h, fill) {}

    float& at(int x, int y) { return data[static_cast<std::size_t>(y) * width + x]; }
    float at(int x, int y) const { return data[static_cast<std::size_t>(y) * width + x]; }
    bool empty() const { return data.empty(); }
    bool operator==(const ImageF&) const = default;
};

ImageRGBA read_png(const std::string& path);
void write_png(const std::string& path, const ImageRGBA& img);

/// Rec.601 luma in [0,1] of the alpha-premultiplied color.
ImageF luminance(const ImageRGBA& img);

/// Bilinear sample with clamp-to-edge addressing.
float sample_bilinear(const ImageF& img, double x, double y);

/// Composites over white, the convention for saved previews.
ImageRGBA over_white(const ImageRGBA& img);

/// Portable float map, single channel ("Pf"), little-endian (scale -1.0).
ImageF read_pfm(const std::string& path);
void write_pfm(const std::string& path, const ImageF& img);

}  // namespace mvr
