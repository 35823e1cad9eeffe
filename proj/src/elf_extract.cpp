#include "oglasses/elf_extract.hpp"

#include <cstring>

namespace oglasses::elf {

namespace {

constexpr std::uint32_t kShtProgbits = 1;
constexpr std::uint64_t kShfExecinstr = 0x4;

template <typename T>
T read_le(std::span<const std::uint8_t> file, std::size_t offset)
{
    if (offset + sizeof(T) > file.size())
        throw ParseError("unexpected end of file", offset);
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i)
        v |= static_cast<T>(file[offset + i]) << (8 * i);
    return v;
}

struct SectionHeaderLayout {
    std::size_t entry_size;
    std::size_t type_off;
    std::size_t flags_off;
    std::size_t offset_off;
    std::size_t size_off;
    bool wide; // 64-bit fields
};

} // namespace

bool looks_like_elf(std::span<const std::uint8_t> file)
{
    static const std::uint8_t magic[4] = { 0x7F, 'E', 'L', 'F' };
    return file.size() >= 4 && std::memcmp(file.data(), magic, 4) == 0;
}

std::vector<std::uint8_t> extract_code(std::span<const std::uint8_t> file, SourceKind kind)
{
    if (kind == SourceKind::raw)
        return { file.begin(), file.end() };

    if (!looks_like_elf(file))
        throw ParseError("missing ELF magic", 0);
    if (file.size() < 16)
        throw ParseError("truncated ELF identification", file.size());

    const std::uint8_t ei_class = file[4];
    const std::uint8_t ei_data = file[5];
    if (ei_class != 1 && ei_class != 2)
        throw ParseError("unknown ELF class", 4);
    if (ei_data != 1)
        throw ParseError("only little-endian ELF is supported", 5);
    const bool is64 = (ei_class == 2);

    std::uint64_t shoff;
    std::uint16_t shentsize, shnum;
    if (is64) {
        shoff = read_le<std::uint64_t>(file, 0x28);
        shentsize = read_le<std::uint16_t>(file, 0x3A);
        shnum = read_le<std::uint16_t>(file, 0x3C);
    } else {
        shoff = read_le<std::uint32_t>(file, 0x20);
        shentsize = read_le<std::uint16_t>(file, 0x2E);
        shnum = read_le<std::uint16_t>(file, 0x30);
    }
    if (shnum == 0)
        return {};

    const SectionHeaderLayout layout = is64
        ? SectionHeaderLayout{ 64, 4, 8, 24, 32, true }
        : SectionHeaderLayout{ 40, 4, 8, 16, 20, false };
    if (shentsize < layout.entry_size)
        throw ParseError("section header entry too small", is64 ? 0x3A : 0x2E);

    std::vector<std::uint8_t> code;
    for (std::uint16_t s = 0; s < shnum; ++s) {
        const std::size_t base = static_cast<std::size_t>(shoff) + static_cast<std::size_t>(s) * shentsize;
        if (base + layout.entry_size > file.size())
            throw ParseError("section header table past end of file", base);

        const auto type = read_le<std::uint32_t>(file, base + layout.type_off);
        const std::uint64_t flags = layout.wide
            ? read_le<std::uint64_t>(file, base + layout.flags_off)
            : read_le<std::uint32_t>(file, base + layout.flags_off);
        if (type != kShtProgbits || !(flags & kShfExecinstr))
            continue;

        const std::uint64_t off = layout.wide
            ? read_le<std::uint64_t>(file, base + layout.offset_off)
            : read_le<std::uint32_t>(file, base + layout.offset_off);
        const std::uint64_t size = layout.wide
            ? read_le<std::uint64_t>(file, base + layout.size_off)
            : read_le<std::uint32_t>(file, base + layout.size_off);
        if (off + size > file.size())
            throw ParseError("section contents past end of file", static_cast<std::size_t>(off));

        code.insert(code.end(), file.begin() + static_cast<std::ptrdiff_t>(off),
                    file.begin() + static_cast<std::ptrdiff_t>(off + size));
    }
    return code;
}

} // namespace oglasses::elf
