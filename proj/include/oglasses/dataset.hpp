#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace oglasses::dataset {

enum class Label : std::uint8_t {
    Others = 0,
    Program = 1,
};

// One 256-byte sample record. Both dataset kinds share this shape: a block
// is a raw file fragment, a code sample is 16 zero-padded 16-byte
// instructions packed into the same 256 bytes (2048 bits).
struct Sample {
    std::array<std::uint8_t, 256> bytes;
    Label label;
};

constexpr std::size_t kBlockSize = 256;
constexpr std::size_t kInstructionsPerSample = 16;

enum class DatasetKind : std::uint8_t {
    block = 0,
    code = 1,
};

struct ManifestEntry {
    std::string category;   // "Program" or "Others"
    std::string source_tag; // e.g. "github", "ubuntu", "cfb"
    std::filesystem::path path;
};

struct BuildStats {
    std::size_t files_used = 0;
    std::size_t files_skipped = 0;
    std::size_t program_blocks = 0;
    std::size_t others_blocks = 0;
    std::size_t program_code = 0;
    std::size_t others_code = 0;
    std::vector<std::string> warnings;
};

// Uniform random 256-byte blocks; offsets may overlap. Inputs shorter than
// one block yield an empty list (caller sees the warning through BuildStats
// when going through build_corpus).
std::vector<Sample> sample_blocks(std::span<const std::uint8_t> code, std::size_t count,
                                  Label label, std::mt19937_64& rng);

// 16 instructions drawn uniformly without replacement, kept in stream order,
// each padded to 16 bytes and concatenated. Fewer than 16 usable
// instructions yields an empty list.
std::vector<Sample> build_code_samples(std::span<const std::uint8_t> code, std::size_t count,
                                       Label label, std::mt19937_64& rng);

void write_dataset(const std::vector<Sample>& samples, DatasetKind kind, std::uint64_t seed,
                   const std::filesystem::path& path);

struct Dataset {
    DatasetKind kind;
    std::uint64_t seed;
    std::vector<Sample> samples;
};

Dataset read_dataset(const std::filesystem::path& path);

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);

// Builds both dataset kinds from a corpus manifest. Sample counts are
// size-proportional: one per 256 bytes of extracted code, minimum 1. Each
// file gets its own generator derived from (seed, path) so parallel and
// serial builds agree.
struct CorpusDatasets {
    std::vector<Sample> blocks;
    std::vector<Sample> code;
    BuildStats stats;
};

CorpusDatasets build_corpus(const std::vector<ManifestEntry>& manifest, std::uint64_t seed);

std::mt19937_64 derive_file_rng(std::uint64_t seed, const std::string& path);

} // namespace oglasses::dataset
