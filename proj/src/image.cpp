#include "splatlab/image.hpp"

#include "splatlab/binary_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>

namespace splatlab {

void save_ppm(const std::filesystem::path& path, const ImageBuffer& img) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << "P6\n" << img.width << ' ' << img.height << "\n255\n";
    std::vector<unsigned char> bytes(img.size());
    for (std::size_t i = 0; i < img.size(); ++i) {
        const double v = std::clamp(img.pixels[i], 0.0, 1.0);
        bytes[i] = static_cast<unsigned char>(std::lround(255.0 * v));
    }
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

void save_raw(const std::filesystem::path& path, const ImageBuffer& img) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    io::write_u32(out, static_cast<std::uint32_t>(img.width));
    io::write_u32(out, static_cast<std::uint32_t>(img.height));
    for (double v : img.pixels) io::write_f32(out, static_cast<float>(v));
}

ImageBuffer load_raw(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    const auto w = io::read_u32(in);
    const auto h = io::read_u32(in);
    ImageBuffer img(static_cast<int>(w), static_cast<int>(h));
    for (double& v : img.pixels) v = io::read_f32(in);
    return img;
}

}  // namespace splatlab
