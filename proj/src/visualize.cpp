#include "oglasses/visualize.hpp"

#include "oglasses/x86_decoder.hpp"

#include <zlib.h>

#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <functional>
#include <future>
#include <ostream>
#include <stdexcept>

namespace oglasses::vis {

namespace {

Image layout_pixels(const std::vector<std::array<std::uint8_t, 3>>& colors, std::size_t width)
{
    Image img;
    img.width = width;
    img.height = (colors.size() + width - 1) / width;
    img.pixels.assign(img.width * img.height * 3, 0); // pad black
    for (std::size_t i = 0; i < colors.size(); ++i)
        std::memcpy(&img.pixels[i * 3], colors[i].data(), 3);
    return img;
}

std::vector<Decision> scan_windows_256(std::span<const std::uint8_t> file,
                                       const std::function<std::vector<Decision>(std::size_t, std::size_t)>& chunk_fn,
                                       std::size_t threads)
{
    const std::size_t n = file.size() - dataset::kBlockSize + 1;
    if (threads <= 1)
        return chunk_fn(0, n);

    const std::size_t per = (n + threads - 1) / threads;
    std::vector<std::future<std::vector<Decision>>> parts;
    for (std::size_t t = 0; t < threads; ++t) {
        const std::size_t begin = t * per;
        if (begin >= n)
            break;
        const std::size_t count = std::min(per, n - begin);
        parts.push_back(std::async(std::launch::async, chunk_fn, begin, count));
    }
    std::vector<Decision> out;
    out.reserve(n);
    for (auto& p : parts) {
        auto part = p.get();
        out.insert(out.end(), part.begin(), part.end());
    }
    return out;
}

void put_u32_be(std::vector<std::uint8_t>& out, std::uint32_t v)
{
    out.push_back(static_cast<std::uint8_t>(v >> 24));
    out.push_back(static_cast<std::uint8_t>(v >> 16));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
    out.push_back(static_cast<std::uint8_t>(v));
}

void append_png_chunk(std::vector<std::uint8_t>& out, const char type[4],
                      const std::vector<std::uint8_t>& data)
{
    put_u32_be(out, static_cast<std::uint32_t>(data.size()));
    const std::size_t crc_start = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), data.begin(), data.end());
    const auto crc = crc32(0, out.data() + crc_start, static_cast<uInt>(out.size() - crc_start));
    put_u32_be(out, static_cast<std::uint32_t>(crc));
}

} // namespace

Image render_grayscale(std::span<const std::uint8_t> file, std::size_t width)
{
    if (file.empty())
        throw std::invalid_argument("render_grayscale: empty file");
    std::vector<std::array<std::uint8_t, 3>> colors(file.size());
    for (std::size_t i = 0; i < file.size(); ++i)
        colors[i] = { file[i], file[i], file[i] };
    return layout_pixels(colors, width);
}

Image render_bitimage(std::span<const std::uint8_t> file, std::size_t width)
{
    if (file.empty())
        throw std::invalid_argument("render_bitimage: empty file");
    static constexpr std::array<std::uint8_t, 3> kWhite = { 255, 255, 255 };
    static constexpr std::array<std::uint8_t, 3> kLightBlue = { 173, 216, 230 };
    static constexpr std::array<std::uint8_t, 3> kRed = { 255, 0, 0 };
    static constexpr std::array<std::uint8_t, 3> kBlack = { 0, 0, 0 };
    std::vector<std::array<std::uint8_t, 3>> colors(file.size());
    for (std::size_t i = 0; i < file.size(); ++i) {
        const auto b = file[i];
        if (b == 0x00)
            colors[i] = kWhite;
        else if (b <= 0x1F)
            colors[i] = kLightBlue;
        else if (b <= 0x7F)
            colors[i] = kRed;
        else
            colors[i] = kBlack;
    }
    return layout_pixels(colors, width);
}

Image render_structural_entropy(std::span<const std::uint8_t> file, std::size_t window,
                                std::size_t width)
{
    if (file.size() < window)
        throw std::invalid_argument("render_structural_entropy: file shorter than window");
    // Incremental byte histogram: each 1-byte shift swaps one byte out, one in.
    std::array<std::uint32_t, 256> counts{};
    for (std::size_t i = 0; i < window; ++i)
        counts[file[i]]++;
    const double inv_window = 1.0 / static_cast<double>(window);
    auto entropy_of_counts = [&] {
        double h = 0.0;
        for (auto c : counts) {
            if (c == 0)
                continue;
            const double p = c * inv_window;
            h -= p * std::log2(p);
        }
        return h / 8.0;
    };

    const std::size_t n = file.size() - window + 1;
    std::vector<std::array<std::uint8_t, 3>> colors(n);
    for (std::size_t o = 0;; ++o) {
        const auto g = static_cast<std::uint8_t>(std::lround(255.0 * entropy_of_counts()));
        colors[o] = { g, g, g };
        if (o + 1 >= n)
            break;
        counts[file[o]]--;
        counts[file[o + window]]++;
    }
    return layout_pixels(colors, width);
}

ScanReport scan_entropy(std::span<const std::uint8_t> file, const classify::EntropyRange& range)
{
    if (file.size() < dataset::kBlockSize)
        throw std::invalid_argument("scan: file shorter than one 256-byte window");
    ScanReport report;
    report.file_length = file.size();
    report.window = "256-byte block";
    const std::size_t n = file.size() - dataset::kBlockSize + 1;
    report.decisions.reserve(n);
    for (std::size_t o = 0; o < n; ++o) {
        const auto label = classify::classify_entropy(file.subspan(o, dataset::kBlockSize), range);
        report.decisions.push_back(label == classify::Label::Program ? Decision::Program
                                                                     : Decision::Others);
    }
    return report;
}

ScanReport scan_mlp(std::span<const std::uint8_t> file, nn::Network& net, std::size_t threads)
{
    if (file.size() < dataset::kBlockSize)
        throw std::invalid_argument("scan: file shorter than one 256-byte window");
    auto chunk = [&](std::size_t begin, std::size_t count) {
        std::vector<Decision> out;
        out.reserve(count);
        constexpr std::size_t kBatch = 512;
        std::vector<classify::Sample> batch;
        for (std::size_t start = begin; start < begin + count; start += kBatch) {
            const std::size_t n = std::min(kBatch, begin + count - start);
            batch.resize(n);
            for (std::size_t i = 0; i < n; ++i) {
                std::memcpy(batch[i].bytes.data(), file.data() + start + i, dataset::kBlockSize);
                batch[i].label = classify::Label::Others; // unused
            }
            const auto labels = classify::predict(net, batch);
            for (auto l : labels)
                out.push_back(l == classify::Label::Program ? Decision::Program
                                                            : Decision::Others);
        }
        return out;
    };
    ScanReport report;
    report.file_length = file.size();
    report.window = "256-byte block";
    report.decisions = scan_windows_256(file, chunk, threads);
    return report;
}

ScanReport scan_cnn(std::span<const std::uint8_t> file, nn::Network& net, std::size_t threads)
{
    if (file.empty())
        throw std::invalid_argument("scan: empty file");

    // Decoding starts exactly at the window offset; the 1-byte shift sweeps
    // all alignments, so no boundary pre-alignment is attempted.
    auto pack_window = [&](std::size_t offset, classify::Sample& s) -> bool {
        std::size_t pos = offset;
        for (std::size_t slot = 0; slot < dataset::kInstructionsPerSample; ++slot) {
            if (pos >= file.size())
                return false;
            const auto instr = x86::instruction_length(file, pos);
            const auto fixed = x86::pad_instruction(instr);
            std::memcpy(s.bytes.data() + slot * x86::kFixedInstructionBytes, fixed.data(),
                        x86::kFixedInstructionBytes);
            pos += instr.length;
        }
        return true;
    };

    auto chunk = [&](std::size_t begin, std::size_t count) {
        std::vector<Decision> out(count, Decision::Undecodable);
        constexpr std::size_t kBatch = 512;
        std::vector<classify::Sample> batch;
        std::vector<std::size_t> batch_offsets;
        auto flush = [&] {
            if (batch.empty())
                return;
            const auto labels = classify::predict(net, batch);
            for (std::size_t i = 0; i < labels.size(); ++i)
                out[batch_offsets[i] - begin] = labels[i] == classify::Label::Program
                    ? Decision::Program
                    : Decision::Others;
            batch.clear();
            batch_offsets.clear();
        };
        classify::Sample s;
        s.label = classify::Label::Others; // unused
        for (std::size_t o = begin; o < begin + count; ++o) {
            if (!pack_window(o, s))
                continue;
            batch.push_back(s);
            batch_offsets.push_back(o);
            if (batch.size() == kBatch)
                flush();
        }
        flush();
        return out;
    };

    ScanReport report;
    report.file_length = file.size();
    report.window = "16 instructions";
    const std::size_t n = file.size();
    if (threads <= 1) {
        report.decisions = chunk(0, n);
    } else {
        const std::size_t per = (n + threads - 1) / threads;
        std::vector<std::future<std::vector<Decision>>> parts;
        for (std::size_t t = 0; t < threads; ++t) {
            const std::size_t begin = t * per;
            if (begin >= n)
                break;
            parts.push_back(std::async(std::launch::async, chunk, begin, std::min(per, n - begin)));
        }
        for (auto& p : parts) {
            auto part = p.get();
            report.decisions.insert(report.decisions.end(), part.begin(), part.end());
        }
    }
    return report;
}

Image render_classification(const ScanReport& report, std::size_t width)
{
    static constexpr std::array<std::uint8_t, 3> kRed = { 255, 0, 0 };
    static constexpr std::array<std::uint8_t, 3> kGreen = { 0, 255, 0 };
    static constexpr std::array<std::uint8_t, 3> kGray = { 128, 128, 128 };
    std::vector<std::array<std::uint8_t, 3>> colors(report.decisions.size());
    for (std::size_t i = 0; i < report.decisions.size(); ++i) {
        switch (report.decisions[i]) {
        case Decision::Program: colors[i] = kRed; break;
        case Decision::Others: colors[i] = kGreen; break;
        case Decision::Undecodable: colors[i] = kGray; break;
        }
    }
    return layout_pixels(colors, width);
}

void write_image(const Image& img, const std::filesystem::path& path, ImageFormat format)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw std::runtime_error("cannot open " + path.string() + " for writing");

    if (format == ImageFormat::ppm) {
        out << "P6\n" << img.width << ' ' << img.height << "\n255\n";
        out.write(reinterpret_cast<const char*>(img.pixels.data()),
                  static_cast<std::streamsize>(img.pixels.size()));
    } else {
        // Scanlines with filter byte 0, zlib-compressed.
        std::vector<std::uint8_t> raw;
        raw.reserve(img.height * (img.width * 3 + 1));
        for (std::size_t y = 0; y < img.height; ++y) {
            raw.push_back(0);
            raw.insert(raw.end(), img.pixels.begin() + static_cast<std::ptrdiff_t>(y * img.width * 3),
                       img.pixels.begin() + static_cast<std::ptrdiff_t>((y + 1) * img.width * 3));
        }
        uLongf compressed_size = compressBound(static_cast<uLong>(raw.size()));
        std::vector<std::uint8_t> compressed(compressed_size);
        if (compress2(compressed.data(), &compressed_size, raw.data(),
                      static_cast<uLong>(raw.size()), Z_BEST_COMPRESSION) != Z_OK)
            throw std::runtime_error("png: zlib compression failed");
        compressed.resize(compressed_size);

        std::vector<std::uint8_t> png = { 0x89, 'P', 'N', 'G', '\r', '\n', 0x1A, '\n' };
        std::vector<std::uint8_t> ihdr;
        put_u32_be(ihdr, static_cast<std::uint32_t>(img.width));
        put_u32_be(ihdr, static_cast<std::uint32_t>(img.height));
        ihdr.push_back(8); // bit depth
        ihdr.push_back(2); // color type: truecolor
        ihdr.push_back(0); // compression
        ihdr.push_back(0); // filter
        ihdr.push_back(0); // interlace
        append_png_chunk(png, "IHDR", ihdr);
        append_png_chunk(png, "IDAT", compressed);
        append_png_chunk(png, "IEND", {});
        out.write(reinterpret_cast<const char*>(png.data()),
                  static_cast<std::streamsize>(png.size()));
    }
    if (!out)
        throw std::runtime_error("write failed for " + path.string());
}

Image read_ppm(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw std::runtime_error("cannot open " + path.string());
    std::string magic;
    in >> magic;
    if (magic != "P6")
        throw std::runtime_error("ppm: bad magic in " + path.string());
    std::size_t width, height;
    int maxval;
    in >> width >> height >> maxval;
    if (maxval != 255)
        throw std::runtime_error("ppm: only maxval 255 is supported");
    in.get(); // single whitespace after header
    Image img;
    img.width = width;
    img.height = height;
    img.pixels.resize(width * height * 3);
    in.read(reinterpret_cast<char*>(img.pixels.data()),
            static_cast<std::streamsize>(img.pixels.size()));
    if (in.gcount() != static_cast<std::streamsize>(img.pixels.size()))
        throw std::runtime_error("ppm: truncated pixel data");
    return img;
}

void write_scan_report(std::ostream& out, const ScanReport& report)
{
    static const char* kNames[] = { "Others", "Program", "Undecodable" };
    for (std::size_t o = 0; o < report.decisions.size(); ++o)
        out << o << '\t' << kNames[static_cast<int>(report.decisions[o])] << '\n';
}

} // namespace oglasses::vis
