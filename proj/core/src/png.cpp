#include "cartolab/png.hpp"

#include "cartolab/image.hpp"
#include "cartolab/util.hpp"

#include <zlib.h>

#include <cstring>
#include <fstream>

namespace cartolab {

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    out.push_back(static_cast<std::uint8_t>(v >> 24));
    out.push_back(static_cast<std::uint8_t>(v >> 16));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
    out.push_back(static_cast<std::uint8_t>(v));
}

void put_chunk(std::vector<std::uint8_t>& out, const char type[4],
               const std::vector<std::uint8_t>& data) {
    put_u32(out, static_cast<std::uint32_t>(data.size()));
    std::size_t crc_start = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), data.begin(), data.end());
    uLong crc = crc32(0L, out.data() + crc_start, static_cast<uInt>(out.size() - crc_start));
    put_u32(out, static_cast<std::uint32_t>(crc));
}

}  // namespace

std::vector<std::uint8_t> encode_png(
    const Image& image, const std::vector<std::pair<std::string, std::string>>& text) {
    if (image.width <= 0 || image.height <= 0 || image.empty())
        throw Error("BadImage", "cannot encode an empty image");
    if (image.channels != 1 && image.channels != 3)
        throw Error("BadImage", "png writer handles 1- or 3-channel images");
    for (const auto& [key, value] : text) {
        if (key.empty() || key.size() > 79 || key.find('\0') != std::string::npos ||
            value.find('\0') != std::string::npos)
            throw Error("BadValue", "invalid tEXt entry '" + key + "'");
    }

    std::vector<std::uint8_t> out = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};

    std::vector<std::uint8_t> ihdr;
    put_u32(ihdr, static_cast<std::uint32_t>(image.width));
    put_u32(ihdr, static_cast<std::uint32_t>(image.height));
    ihdr.push_back(8);                                      // bit depth
    ihdr.push_back(image.channels == 1 ? 0 : 2);            // gray / truecolor
    ihdr.push_back(0);                                      // compression
    ihdr.push_back(0);                                      // filter
    ihdr.push_back(0);                                      // no interlace
    put_chunk(out, "IHDR", ihdr);

    for (const auto& [key, value] : text) {
        std::vector<std::uint8_t> data(key.begin(), key.end());
        data.push_back(0);
        data.insert(data.end(), value.begin(), value.end());
        put_chunk(out, "tEXt", data);
    }

    const std::size_t stride = static_cast<std::size_t>(image.width) * image.channels;
    std::vector<std::uint8_t> raw;
    raw.reserve((stride + 1) * static_cast<std::size_t>(image.height));
    for (int y = 0; y < image.height; ++y) {
        raw.push_back(0);  // filter: none
        const std::uint8_t* row = image.pixels.data() + static_cast<std::size_t>(y) * stride;
        raw.insert(raw.end(), row, row + stride);
    }

    uLongf bound = compressBound(static_cast<uLong>(raw.size()));
    std::vector<std::uint8_t> packed(bound);
    if (compress2(packed.data(), &bound, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK)
        throw Error("EncodeFailure", "zlib compression failed");
    packed.resize(bound);
    put_chunk(out, "IDAT", packed);
    put_chunk(out, "IEND", {});
    return out;
}

void write_png(const std::string& path, const Image& image,
               const std::vector<std::pair<std::string, std::string>>& text) {
    std::vector<std::uint8_t> bytes = encode_png(image, text);
    std::ofstream f(path, std::ios::binary);
    if (!f) throw Error("IoError", "cannot open " + path + " for writing");
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw Error("IoError", "short write to " + path);
}

}  // namespace cartolab
