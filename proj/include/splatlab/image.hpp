#pragma once

#include "splatlab/splat.hpp"

#include <filesystem>
#include <vector>

namespace splatlab {

/// H x W x 3 radiance, row-major, channels interleaved. `alpha` is the
/// optional accumulated opacity before background compositing (H x W).
struct ImageBuffer {
    int width = 0;
    int height = 0;
    std::vector<double> pixels;
    std::vector<double> alpha;

    ImageBuffer() = default;
    ImageBuffer(int w, int h, double fill = 0.0) : width(w), height(h), pixels(static_cast<std::size_t>(w) * h * 3, fill) {}

    std::size_t index(int x, int y, int c) const { return (static_cast<std::size_t>(y) * width + x) * 3 + c; }
    double& at(int x, int y, int c) { return pixels[index(x, y, c)]; }
    double at(int x, int y, int c) const { return pixels[index(x, y, c)]; }
    Vec3 rgb(int x, int y) const { return {at(x, y, 0), at(x, y, 1), at(x, y, 2)}; }
    std::size_t size() const { return pixels.size(); }
    bool same_shape(const ImageBuffer& o) const { return width == o.width && height == o.height; }
};

/// Binary PPM (P6, maxval 255): values clamped to [0,1], then round(255 v).
void save_ppm(const std::filesystem::path& path, const ImageBuffer& img);

/// Raw dump: u32 width, u32 height, then h*w*3 little-endian f32.
void save_raw(const std::filesystem::path& path, const ImageBuffer& img);
ImageBuffer load_raw(const std::filesystem::path& path);

}  // namespace splatlab
