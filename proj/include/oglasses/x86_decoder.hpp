#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace oglasses::x86 {

constexpr std::size_t kMaxInstructionLength = 15;
constexpr std::size_t kFixedInstructionBytes = 16;

// A decoded instruction boundary. `valid` is false when the fallback rules
// fired (unrecognized opcode, >15-byte encoding, or truncated stream).
struct Instruction {
    std::vector<std::uint8_t> bytes;
    std::size_t length = 0;
    bool valid = false;
};

using FixedLengthInstruction = std::vector<std::uint8_t>; // always 16 bytes

// Length-decodes one instruction at `offset` (32-bit protected mode rules:
// legacy prefixes, one/two/three-byte opcode maps, ModRM, SIB, displacement,
// immediate). Total over any byte stream; never throws for offset < size.
Instruction instruction_length(std::span<const std::uint8_t> stream, std::size_t offset);

// Tiles the whole stream into instructions. Concatenating the result
// reproduces the input byte-for-byte.
std::vector<Instruction> decode_stream(std::span<const std::uint8_t> stream);

// Zero-pads to exactly 16 bytes. Throws std::invalid_argument for length > 15.
FixedLengthInstruction pad_instruction(const Instruction& instr);

} // namespace oglasses::x86
