#include "splatlab/splat_io.hpp"

#include "splatlab/binary_io.hpp"

#include <array>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <vector>

namespace splatlab {

namespace {
constexpr std::array<char, 4> kMagic{'S', 'P', 'L', 'T'};
constexpr std::uint32_t kVersion = 1;
}  // namespace

void write_splt(std::ostream& out, const SplatCloud& cloud) {
    validate_cloud(cloud);
    out.write(kMagic.data(), kMagic.size());
    io::write_u32(out, kVersion);
    io::write_u32(out, static_cast<std::uint32_t>(cloud.size()));
    io::write_u8(out, static_cast<std::uint8_t>(cloud.sh_degree));
    std::vector<double> flat(cloud.params_per_splat());
    for (const auto& s : cloud.splats) {
        flatten_splat(s, cloud.sh_degree, flat);
        for (double v : flat) {
            io::write_f32(out, static_cast<float>(v));
        }
    }
    if (!out) {
        throw std::runtime_error("write_splt: stream error");
    }
}

SplatCloud read_splt(std::istream& in) {
    std::array<char, 4> magic{};
    in.read(magic.data(), magic.size());
    if (!in || magic != kMagic) {
        throw std::runtime_error("read_splt: bad magic");
    }
    if (io::read_u32(in) != kVersion) {
        throw std::runtime_error("read_splt: unsupported version");
    }
    const std::uint32_t count = io::read_u32(in);
    SplatCloud cloud;
    cloud.sh_degree = io::read_u8(in);
    if (cloud.sh_degree > kMaxShDegree) {
        throw std::runtime_error("read_splt: unsupported sh degree");
    }
    cloud.splats.reserve(count);
    std::vector<double> flat(cloud.params_per_splat());
    for (std::uint32_t k = 0; k < count; ++k) {
        for (double& v : flat) {
            v = io::read_f32(in);
        }
        cloud.splats.push_back(unflatten_splat(flat, cloud.sh_degree));
    }
    return cloud;
}

void save_splt(const std::filesystem::path& path, const SplatCloud& cloud) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw std::runtime_error("cannot open " + path.string() + " for writing");
    }
    write_splt(out, cloud);
}

SplatCloud load_splt(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("cannot open " + path.string());
    }
    return read_splt(in);
}

std::string to_text(const SplatCloud& cloud) {
    std::string out = "SPLTXT " + std::to_string(cloud.sh_degree) + " " + std::to_string(cloud.size()) + "\n";
    std::vector<double> flat(cloud.params_per_splat());
    char buf[32];
    for (const auto& s : cloud.splats) {
        flatten_splat(s, cloud.sh_degree, flat);
        for (std::size_t i = 0; i < flat.size(); ++i) {
            std::snprintf(buf, sizeof(buf), "%.17g", flat[i]);
            if (i) out += ' ';
            out += buf;
        }
        out += '\n';
    }
    return out;
}

SplatCloud from_text(const std::string& text) {
    std::istringstream in(text);
    std::string tag;
    std::size_t count = 0;
    SplatCloud cloud;
    in >> tag >> cloud.sh_degree >> count;
    if (!in || tag != "SPLTXT" || cloud.sh_degree < 0 || cloud.sh_degree > kMaxShDegree) {
        throw std::runtime_error("from_text: bad header");
    }
    std::vector<double> flat(cloud.params_per_splat());
    std::string token;
    for (std::size_t k = 0; k < count; ++k) {
        for (double& v : flat) {
            if (!(in >> token)) {
                throw std::runtime_error("from_text: truncated input");
            }
            v = std::stod(token);
        }
        cloud.splats.push_back(unflatten_splat(flat, cloud.sh_degree));
    }
    return cloud;
}

}  // namespace splatlab
