#pragma once

#include "splatlab/splat.hpp"

#include <filesystem>
#include <iosfwd>
#include <string>

namespace splatlab {

/// SPLT1 binary layout (little-endian):
///   "SPLT" | u32 version = 1 | u32 count | u8 sh_degree |
///   per splat: 3 f32 position, 3 f32 log_scale, 4 f32 quaternion (w,x,y,z),
///              f32 opacity_logit, D*3 f32 sh (coefficient-major).
/// Values are narrowed to f32 on write.
void write_splt(std::ostream& out, const SplatCloud& cloud);
SplatCloud read_splt(std::istream& in);

void save_splt(const std::filesystem::path& path, const SplatCloud& cloud);
SplatCloud load_splt(const std::filesystem::path& path);

/// Lossless text form: header "SPLTXT <degree> <count>", then one splat per
/// line with every field printed at 17 significant digits.
std::string to_text(const SplatCloud& cloud);
SplatCloud from_text(const std::string& text);

}  // namespace splatlab
