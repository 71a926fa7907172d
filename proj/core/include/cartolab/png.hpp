#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace cartolab {

struct Image;

// Minimal PNG writer for mosaics and heatmaps: 8-bit gray or RGB, zlib
// stream. The only ancillary chunks are the optional tEXt entries, so
// identical pixels and text give identical bytes. Keywords must be 1-79
// Latin-1 bytes; values must not contain NUL.
void write_png(const std::string& path, const Image& image,
               const std::vector<std::pair<std::string, std::string>>& text = {});
std::vector<std::uint8_t> encode_png(
    const Image& image, const std::vector<std::pair<std::string, std::string>>& text = {});

}  // namespace cartolab
