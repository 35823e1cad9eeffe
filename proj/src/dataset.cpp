#include "oglasses/dataset.hpp"

#include "oglasses/elf_extract.hpp"
#include "oglasses/x86_decoder.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace oglasses::dataset {

namespace {

constexpr char kMagic[4] = { 'O', 'G', 'D', 'S' };
constexpr std::uint8_t kFormatVersion = 1;

void put_u64_le(std::ostream& out, std::uint64_t v)
{
    for (int i = 0; i < 8; ++i)
        out.put(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint64_t get_u64_le(std::istream& in)
{
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) {
        const int c = in.get();
        if (c == EOF)
            throw std::runtime_error("dataset: truncated header");
        v |= static_cast<std::uint64_t>(c) << (8 * i);
    }
    return v;
}

std::uint64_t fnv1a64(const std::string& s)
{
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw std::runtime_error("cannot open " + path.string());
    std::vector<std::uint8_t> data((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
    return data;
}

} // namespace

std::vector<Sample> sample_blocks(std::span<const std::uint8_t> code, std::size_t count,
                                  Label label, std::mt19937_64& rng)
{
    if (code.size() < kBlockSize)
        return {};
    std::uniform_int_distribution<std::size_t> offset_dist(0, code.size() - kBlockSize);
    std::vector<Sample> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        const std::size_t o = offset_dist(rng);
        Sample s;
        std::memcpy(s.bytes.data(), code.data() + o, kBlockSize);
        s.label = label;
        out.push_back(s);
    }
    return out;
}

std::vector<Sample> build_code_samples(std::span<const std::uint8_t> code, std::size_t count,
                                       Label label, std::mt19937_64& rng)
{
    auto instructions = x86::decode_stream(code);
    // A truncated tail carries partial bytes; drop it from the pool.
    if (!instructions.empty() && !instructions.back().valid)
        instructions.pop_back();
    if (instructions.size() < kInstructionsPerSample)
        return {};

    std::vector<std::size_t> indices(instructions.size());
    std::iota(indices.begin(), indices.end(), 0);

    std::vector<Sample> out;
    out.reserve(count);
    std::vector<std::size_t> picked(kInstructionsPerSample);
    for (std::size_t i = 0; i < count; ++i) {
        std::sample(indices.begin(), indices.end(), picked.begin(),
                    kInstructionsPerSample, rng);
        std::sort(picked.begin(), picked.end()); // keep file order
        Sample s;
        s.label = label;
        for (std::size_t slot = 0; slot < kInstructionsPerSample; ++slot) {
            const auto fixed = x86::pad_instruction(instructions[picked[slot]]);
            std::memcpy(s.bytes.data() + slot * x86::kFixedInstructionBytes,
                        fixed.data(), x86::kFixedInstructionBytes);
        }
        out.push_back(s);
    }
    return out;
}

void write_dataset(const std::vector<Sample>& samples, DatasetKind kind, std::uint64_t seed,
                   const std::filesystem::path& path)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw std::runtime_error("cannot open " + path.string() + " for writing");
    out.write(kMagic, 4);
    out.put(static_cast<char>(kFormatVersion));
    out.put(static_cast<char>(kind));
    put_u64_le(out, seed);
    put_u64_le(out, samples.size());
    for (const auto& s : samples) {
        out.put(static_cast<char>(s.label));
        out.write(reinterpret_cast<const char*>(s.bytes.data()), kBlockSize);
    }
    if (!out)
        throw std::runtime_error("write failed for " + path.string());
}

Dataset read_dataset(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw std::runtime_error("cannot open " + path.string());
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0)
        throw std::runtime_error("dataset: bad magic in " + path.string());
    const int version = in.get();
    if (version != kFormatVersion)
        throw std::runtime_error("dataset: unsupported version " + std::to_string(version));
    const int kind_byte = in.get();
    if (kind_byte != 0 && kind_byte != 1)
        throw std::runtime_error("dataset: unknown kind " + std::to_string(kind_byte));

    Dataset ds;
    ds.kind = static_cast<DatasetKind>(kind_byte);
    ds.seed = get_u64_le(in);
    const std::uint64_t count = get_u64_le(in);
    ds.samples.reserve(count);
    for (std::uint64_t i = 0; i < count; ++i) {
        Sample s;
        const int label_byte = in.get();
        if (label_byte == EOF)
            throw std::runtime_error("dataset: truncated record " + std::to_string(i));
        if (label_byte != 0 && label_byte != 1)
            throw std::runtime_error("dataset: bad label in record " + std::to_string(i));
        s.label = static_cast<Label>(label_byte);
        in.read(reinterpret_cast<char*>(s.bytes.data()), kBlockSize);
        if (in.gcount() != static_cast<std::streamsize>(kBlockSize))
            throw std::runtime_error("dataset: truncated record " + std::to_string(i));
        ds.samples.push_back(s);
    }
    return ds;
}

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in)
        throw std::runtime_error("cannot open manifest " + path.string());
    std::vector<ManifestEntry> entries;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty())
            continue;
        const auto tab1 = line.find('\t');
        const auto tab2 = (tab1 == std::string::npos) ? std::string::npos
                                                      : line.find('\t', tab1 + 1);
        if (tab2 == std::string::npos)
            throw std::runtime_error("manifest line " + std::to_string(lineno)
                                     + ": expected <category>\\t<source-tag>\\t<path>");
        ManifestEntry e;
        e.category = line.substr(0, tab1);
        e.source_tag = line.substr(tab1 + 1, tab2 - tab1 - 1);
        e.path = line.substr(tab2 + 1);
        if (e.category != "Program" && e.category != "Others")
            throw std::runtime_error("manifest line " + std::to_string(lineno)
                                     + ": category must be Program or Others");
        entries.push_back(std::move(e));
    }
    return entries;
}

std::mt19937_64 derive_file_rng(std::uint64_t seed, const std::string& path)
{
    const std::uint64_t h = fnv1a64(path);
    std::seed_seq seq{ static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                       static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(h >> 32) };
    return std::mt19937_64(seq);
}

CorpusDatasets build_corpus(const std::vector<ManifestEntry>& manifest, std::uint64_t seed)
{
    CorpusDatasets out;
    for (const auto& entry : manifest) {
        const Label label = (entry.category == "Program") ? Label::Program : Label::Others;
        std::vector<std::uint8_t> code;
        try {
            const auto raw = read_file(entry.path);
            const auto kind = elf::looks_like_elf(raw) ? elf::SourceKind::elf_object
                                                       : elf::SourceKind::raw;
            code = elf::extract_code(raw, kind);
        } catch (const std::exception& e) {
            out.stats.files_skipped++;
            out.stats.warnings.push_back(entry.path.string() + ": " + e.what());
            continue;
        }

        auto rng = derive_file_rng(seed, entry.path.string());
        const std::size_t count = std::max<std::size_t>(1, code.size() / kBlockSize);

        auto blocks = sample_blocks(code, count, label, rng);
        auto codes = build_code_samples(code, count, label, rng);
        if (blocks.empty() && codes.empty()) {
            out.stats.files_skipped++;
            out.stats.warnings.push_back(entry.path.string()
                                         + ": too small (needs 256 bytes / 16 instructions)");
            continue;
        }
        if (blocks.empty())
            out.stats.warnings.push_back(entry.path.string() + ": under 256 bytes, no blocks");
        if (codes.empty())
            out.stats.warnings.push_back(entry.path.string() + ": under 16 instructions, no code samples");

        out.stats.files_used++;
        if (label == Label::Program) {
            out.stats.program_blocks += blocks.size();
            out.stats.program_code += codes.size();
        } else {
            out.stats.others_blocks += blocks.size();
            out.stats.others_code += codes.size();
        }
        out.blocks.insert(out.blocks.end(), blocks.begin(), blocks.end());
        out.code.insert(out.code.end(), codes.begin(), codes.end());
    }
    return out;
}

} // namespace oglasses::dataset
