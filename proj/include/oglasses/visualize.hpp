#pragma once

#include "oglasses/classifiers.hpp"
#include "oglasses/nn.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace oglasses::vis {

struct Image {
    std::size_t width = 0;
    std::size_t height = 0;
    std::vector<std::uint8_t> pixels; // row-major RGB triples

    std::size_t pixel_count() const { return width * height; }
};

enum class Decision : std::uint8_t {
    Others = 0,
    Program = 1,
    Undecodable = 2,
};

struct ScanReport {
    std::size_t file_length = 0;
    std::vector<Decision> decisions; // one per window start offset
    std::string window; // descriptor, e.g. "256-byte block" or "16 instructions"
};

constexpr std::size_t kDefaultImageWidth = 128;

Image render_grayscale(std::span<const std::uint8_t> file, std::size_t width = kDefaultImageWidth);

// Stirling bit-image palette: 0x00 white, 0x01-0x1F light blue, 0x20-0x7F
// red, 0x80-0xFF black.
Image render_bitimage(std::span<const std::uint8_t> file, std::size_t width = kDefaultImageWidth);

// Sliding-window entropy profile, one gray pixel (255 * H) per offset.
Image render_structural_entropy(std::span<const std::uint8_t> file, std::size_t window = 256,
                                std::size_t width = kDefaultImageWidth);

// Sliding-window classification, shift 1 byte. Entropy and MLP classify
// 256-byte blocks; the CNN decodes 16 consecutive instructions from each
// offset (Undecodable when fewer remain).
ScanReport scan_entropy(std::span<const std::uint8_t> file, const classify::EntropyRange& range);
ScanReport scan_mlp(std::span<const std::uint8_t> file, nn::Network& net,
                    std::size_t threads = 1);
ScanReport scan_cnn(std::span<const std::uint8_t> file, nn::Network& net,
                    std::size_t threads = 1);

// Program -> red, Others -> green, Undecodable -> gray, trailing pad black.
Image render_classification(const ScanReport& report, std::size_t width = kDefaultImageWidth);

enum class ImageFormat {
    ppm,
    png,
};

void write_image(const Image& img, const std::filesystem::path& path, ImageFormat format);
Image read_ppm(const std::filesystem::path& path);

void write_scan_report(std::ostream& out, const ScanReport& report);

} // namespace oglasses::vis
