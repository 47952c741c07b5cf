#ifndef FOODREC_IMAGE_IO_HPP
#define FOODREC_IMAGE_IO_HPP

#include <cstdint>
#include <string>
#include <vector>

namespace foodrec {

/// Decoded 8-bit RGB image, row-major, channel-interleaved.
struct RawImage {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> rgb; // width*height*3
};

/// Known raster extensions accepted by directory ingestion.
bool has_image_extension(const std::string& path);

/// Decodes PNG, JPEG or PPM/PGM by content sniffing. Grayscale, palette and
/// alpha inputs are expanded to 8-bit RGB. Throws Errc::undecodable with the
/// path on anything else.
RawImage decode_image(const std::string& path);

void encode_png(const std::string& path, int width, int height,
                const std::vector<std::uint8_t>& rgb);

} // namespace foodrec

#endif
