#include "oglasses/x86_decoder.hpp"

#include <array>
#include <stdexcept>

namespace oglasses::x86 {

namespace {

using Attr = std::uint16_t;

enum : Attr {
    kModRM = 0x01,
    kImm8 = 0x02,
    kImm16 = 0x04,
    kImmZ = 0x08,   // 4 bytes, or 2 under the 0x66 operand-size prefix
    kMoffs = 0x10,  // 4 bytes, or 2 under the 0x67 address-size prefix
    kFarPtr = 0x20, // ptr16:16/32 = z + 2
    kGrpTest = 0x40, // 0xF6/0xF7: immediate only when modrm.reg is 0 or 1
    kPrefix = 0x80,
    kEsc0F = 0x100,
    kInvalid = 0x200,
};

// One-byte opcode map, 32-bit protected mode. Every slot decodes to
// something (the undocumented 0xD6/0xF1 included), so there is no kInvalid
// here; unset slots are plain no-operand opcodes.
constexpr std::array<Attr, 256> make_one_byte_map()
{
    std::array<Attr, 256> t{};
    // ALU rows 0x00-0x3F: r/m,r | r,r/m | al,imm8 | eax,immz, then two
    // no-operand slots (push/pop seg or the BCD adjusts).
    for (int base = 0x00; base <= 0x38; base += 8) {
        t[base + 0] = kModRM;
        t[base + 1] = kModRM;
        t[base + 2] = kModRM;
        t[base + 3] = kModRM;
        t[base + 4] = kImm8;
        t[base + 5] = kImmZ;
    }
    t[0x0F] = kEsc0F;
    t[0x26] = kPrefix; // es
    t[0x2E] = kPrefix; // cs
    t[0x36] = kPrefix; // ss
    t[0x3E] = kPrefix; // ds
    t[0x62] = kModRM;  // bound
    t[0x63] = kModRM;  // arpl
    t[0x64] = kPrefix; // fs
    t[0x65] = kPrefix; // gs
    t[0x66] = kPrefix; // operand size
    t[0x67] = kPrefix; // address size
    t[0x68] = kImmZ;
    t[0x69] = kModRM | kImmZ;
    t[0x6A] = kImm8;
    t[0x6B] = kModRM | kImm8;
    for (int b = 0x70; b <= 0x7F; ++b)
        t[b] = kImm8; // Jcc rel8
    t[0x80] = kModRM | kImm8;
    t[0x81] = kModRM | kImmZ;
    t[0x82] = kModRM | kImm8; // alias of 0x80, still valid in 32-bit mode
    t[0x83] = kModRM | kImm8;
    for (int b = 0x84; b <= 0x8F; ++b)
        t[b] = kModRM; // test/xchg/mov/lea/mov seg/pop
    t[0x9A] = kFarPtr; // call ptr16:z
    for (int b = 0xA0; b <= 0xA3; ++b)
        t[b] = kMoffs; // mov al/eax <-> moffs
    t[0xA8] = kImm8;
    t[0xA9] = kImmZ;
    for (int b = 0xB0; b <= 0xB7; ++b)
        t[b] = kImm8; // mov r8, imm8
    for (int b = 0xB8; b <= 0xBF; ++b)
        t[b] = kImmZ; // mov r16/32, immz
    t[0xC0] = kModRM | kImm8;
    t[0xC1] = kModRM | kImm8;
    t[0xC2] = kImm16;  // ret imm16
    t[0xC4] = kModRM;  // les (no VEX in 32-bit mode)
    t[0xC5] = kModRM;  // lds
    t[0xC6] = kModRM | kImm8;
    t[0xC7] = kModRM | kImmZ;
    t[0xC8] = kImm16 | kImm8; // enter imm16, imm8
    t[0xCA] = kImm16;  // retf imm16
    t[0xCD] = kImm8;   // int n
    for (int b = 0xD0; b <= 0xD3; ++b)
        t[b] = kModRM; // shift groups
    t[0xD4] = kImm8;   // aam
    t[0xD5] = kImm8;   // aad
    for (int b = 0xD8; b <= 0xDF; ++b)
        t[b] = kModRM; // x87 escapes
    for (int b = 0xE0; b <= 0xE7; ++b)
        t[b] = kImm8; // loop/jcxz, in/out imm8
    t[0xE8] = kImmZ;   // call rel
    t[0xE9] = kImmZ;   // jmp rel
    t[0xEA] = kFarPtr; // jmp ptr16:z
    t[0xEB] = kImm8;
    t[0xF0] = kPrefix; // lock
    t[0xF2] = kPrefix; // repne
    t[0xF3] = kPrefix; // rep
    t[0xF6] = kModRM | kGrpTest;
    t[0xF7] = kModRM | kGrpTest;
    t[0xFE] = kModRM;
    t[0xFF] = kModRM;
    return t;
}

// Two-byte 0x0F map. 0x38/0x3A escape to the three-byte maps and are
// intercepted before this table is consulted.
constexpr std::array<Attr, 256> make_two_byte_map()
{
    std::array<Attr, 256> t{};
    for (auto& e : t)
        e = kInvalid;
    for (int b = 0x00; b <= 0x03; ++b)
        t[b] = kModRM; // group 6/7, lar, lsl
    for (int b = 0x05; b <= 0x09; ++b)
        t[b] = 0; // syscall/clts/sysret/invd/wbinvd
    t[0x0B] = 0;              // ud2
    t[0x0D] = kModRM;         // prefetch hints
    t[0x0E] = 0;              // femms
    t[0x0F] = kModRM | kImm8; // 3DNow!
    for (int b = 0x10; b <= 0x23; ++b)
        t[b] = kModRM; // SSE moves, hint nops, mov cr/dr
    t[0x24] = kModRM;  // mov tr (obsolete)
    t[0x26] = kModRM;
    for (int b = 0x28; b <= 0x2F; ++b)
        t[b] = kModRM;
    for (int b = 0x30; b <= 0x35; ++b)
        t[b] = 0; // wrmsr/rdtsc/rdmsr/rdpmc/sysenter/sysexit
    t[0x37] = 0;  // getsec
    for (int b = 0x40; b <= 0x4F; ++b)
        t[b] = kModRM; // cmovcc
    for (int b = 0x50; b <= 0x6F; ++b)
        t[b] = kModRM;
    for (int b = 0x70; b <= 0x73; ++b)
        t[b] = kModRM | kImm8; // pshuf*, psrl/psra/psll groups
    t[0x74] = kModRM;
    t[0x75] = kModRM;
    t[0x76] = kModRM;
    t[0x77] = 0; // emms
    t[0x78] = kModRM;
    t[0x79] = kModRM;
    for (int b = 0x7C; b <= 0x7F; ++b)
        t[b] = kModRM;
    for (int b = 0x80; b <= 0x8F; ++b)
        t[b] = kImmZ; // Jcc rel16/32
    for (int b = 0x90; b <= 0x9F; ++b)
        t[b] = kModRM; // setcc
    t[0xA0] = 0;
    t[0xA1] = 0;
    t[0xA2] = 0; // push/pop fs, cpuid
    t[0xA3] = kModRM;
    t[0xA4] = kModRM | kImm8; // shld imm8
    t[0xA5] = kModRM;
    t[0xA8] = 0;
    t[0xA9] = 0;
    t[0xAA] = 0; // push/pop gs, rsm
    t[0xAB] = kModRM;
    t[0xAC] = kModRM | kImm8; // shrd imm8
    t[0xAD] = kModRM;
    t[0xAE] = kModRM; // fences / fxsave group
    t[0xAF] = kModRM;
    for (int b = 0xB0; b <= 0xB9; ++b)
        t[b] = kModRM; // cmpxchg, l*s, btr, movzx, popcnt, ud1
    t[0xBA] = kModRM | kImm8; // bt group
    for (int b = 0xBB; b <= 0xC1; ++b)
        t[b] = kModRM;
    t[0xC2] = kModRM | kImm8; // cmpps
    t[0xC3] = kModRM;         // movnti
    t[0xC4] = kModRM | kImm8; // pinsrw
    t[0xC5] = kModRM | kImm8; // pextrw
    t[0xC6] = kModRM | kImm8; // shufps
    t[0xC7] = kModRM;         // group 9
    for (int b = 0xC8; b <= 0xCF; ++b)
        t[b] = 0; // bswap
    for (int b = 0xD0; b <= 0xFF; ++b)
        t[b] = kModRM; // MMX/SSE arithmetic, ud0
    return t;
}

constexpr auto kOneByteMap = make_one_byte_map();
constexpr auto kTwoByteMap = make_two_byte_map();

Instruction take(std::span<const std::uint8_t> rest, std::size_t len, bool valid)
{
    Instruction instr;
    instr.bytes.assign(rest.begin(), rest.begin() + static_cast<std::ptrdiff_t>(len));
    instr.length = len;
    instr.valid = valid;
    return instr;
}

} // namespace

Instruction instruction_length(std::span<const std::uint8_t> stream, std::size_t offset)
{
    if (offset >= stream.size())
        throw std::out_of_range("instruction_length: offset past end of stream");
    const auto rest = stream.subspan(offset);

    auto truncated_tail = [&] { return take(rest, rest.size(), false); };
    auto cap15 = [&] {
        if (rest.size() < kMaxInstructionLength)
            return truncated_tail();
        return take(rest, kMaxInstructionLength, false);
    };

    std::size_t i = 0;
    bool op16 = false;
    bool addr16 = false;

    while (true) {
        const std::uint8_t b = rest[i];
        if (!(kOneByteMap[b] & kPrefix))
            break;
        if (b == 0x66)
            op16 = true;
        else if (b == 0x67)
            addr16 = true;
        ++i;
        if (i >= kMaxInstructionLength)
            return cap15(); // redundant prefixes fill the limit
        if (i >= rest.size())
            return truncated_tail();
    }

    const std::uint8_t op = rest[i];
    Attr attr = kOneByteMap[op];
    ++i;

    if (attr & kEsc0F) {
        if (i >= rest.size())
            return truncated_tail();
        const std::uint8_t op2 = rest[i];
        ++i;
        if (op2 == 0x38 || op2 == 0x3A) {
            if (i >= rest.size())
                return truncated_tail();
            ++i; // third opcode byte
            attr = (op2 == 0x3A) ? static_cast<Attr>(kModRM | kImm8)
                                 : static_cast<Attr>(kModRM);
        } else {
            attr = kTwoByteMap[op2];
            if (attr & kInvalid)
                return take(rest, 1, false);
        }
    }

    std::size_t tail = 0; // displacement + immediate bytes still to come
    if (attr & kImm8)
        tail += 1;
    if (attr & kImm16)
        tail += 2;
    if (attr & kImmZ)
        tail += op16 ? 2 : 4;
    if (attr & kMoffs)
        tail += addr16 ? 2 : 4;
    if (attr & kFarPtr)
        tail += (op16 ? 2u : 4u) + 2u;

    if (attr & kModRM) {
        if (i >= rest.size())
            return truncated_tail();
        const std::uint8_t modrm = rest[i];
        ++i;
        const std::uint8_t mod = modrm >> 6;
        const std::uint8_t reg = (modrm >> 3) & 7;
        const std::uint8_t rm = modrm & 7;

        if ((attr & kGrpTest) && reg <= 1)
            tail += (op == 0xF7) ? (op16 ? 2u : 4u) : 1u;

        if (mod != 3) {
            if (addr16) {
                if (mod == 1)
                    tail += 1;
                else if (mod == 2)
                    tail += 2;
                else if (rm == 6)
                    tail += 2;
            } else {
                if (rm == 4) { // SIB
                    if (i >= rest.size())
                        return truncated_tail();
                    const std::uint8_t sib = rest[i];
                    ++i;
                    if (mod == 0 && (sib & 7) == 5)
                        tail += 4;
                }
                if (mod == 1)
                    tail += 1;
                else if (mod == 2)
                    tail += 4;
                else if (mod == 0 && rm == 5)
                    tail += 4;
            }
        }
    }

    const std::size_t total = i + tail;
    if (total > kMaxInstructionLength)
        return cap15();
    if (total > rest.size())
        return truncated_tail();
    return take(rest, total, true);
}

std::vector<Instruction> decode_stream(std::span<const std::uint8_t> stream)
{
    std::vector<Instruction> out;
    std::size_t offset = 0;
    while (offset < stream.size()) {
        out.push_back(instruction_length(stream, offset));
        offset += out.back().length;
    }
    return out;
}

FixedLengthInstruction pad_instruction(const Instruction& instr)
{
    if (instr.length > kMaxInstructionLength)
        throw std::invalid_argument("pad_instruction: instruction longer than 15 bytes");
    FixedLengthInstruction fixed(kFixedInstructionBytes, 0x00);
    std::copy(instr.bytes.begin(), instr.bytes.end(), fixed.begin());
    return fixed;
}

} // namespace oglasses::x86
