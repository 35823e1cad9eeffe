#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace oglasses::elf {

class ParseError : public std::runtime_error {
public:
    ParseError(const std::string& what, std::size_t offset)
        : std::runtime_error(what + " (at offset " + std::to_string(offset) + ")")
        , offset_(offset)
    {
    }
    std::size_t offset() const { return offset_; }

private:
    std::size_t offset_;
};

enum class SourceKind {
    elf_object,
    elf_executable,
    raw,
};

bool looks_like_elf(std::span<const std::uint8_t> file);

// Concatenates the contents of all executable PROGBITS sections, in section
// order. raw inputs pass through unchanged. Throws ParseError on malformed
// ELF input.
std::vector<std::uint8_t> extract_code(std::span<const std::uint8_t> file, SourceKind kind);

} // namespace oglasses::elf
