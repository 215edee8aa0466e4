#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace evsearch {

enum class Split { database, validation, test };

std::string_view to_string(Split split);
std::optional<Split> parse_split(std::string_view text);

// Reserved attribute keys.
inline constexpr std::string_view kGenderAttribute = "gender";
inline constexpr std::string_view kAgeAttribute = "age_years";
inline constexpr std::string_view kTumorFlagAttribute = "tumor_flag";
inline constexpr std::string_view kTumorStageAttribute = "tumor_stage";

struct EmbeddingRecord {
    std::string id;
    std::vector<double> vector;
    std::optional<std::string> label;
    std::map<std::string, std::string> attributes;
    std::optional<Split> split;
    std::optional<std::string> volume_id;
    std::optional<std::int64_t> slice_index;
    std::optional<std::int64_t> target_months;

    bool operator==(const EmbeddingRecord&) const = default;
};

/// An immutable, validated collection of records sharing one dimension.
///
/// Construction enforces every record invariant (conforming dimension, finite
/// components, unique non-empty ids, paired volume_id/slice_index,
/// non-negative slice_index and target_months). A Corpus may hold zero
/// records; file loading rejects that case separately.
class Corpus {
public:
    Corpus(std::size_t dimension, std::vector<EmbeddingRecord> records, std::string name = {});

    std::size_t dimension() const noexcept { return dimension_; }
    const std::vector<EmbeddingRecord>& records() const noexcept { return records_; }
    const std::string& name() const noexcept { return name_; }
    std::size_t size() const noexcept { return records_.size(); }
    bool empty() const noexcept { return records_.empty(); }

    bool operator==(const Corpus&) const = default;

private:
    std::size_t dimension_;
    std::vector<EmbeddingRecord> records_;
    std::string name_;
};

// Record lines: one JSON object per line. Blank lines are skipped; errors
// name the 1-based physical line.
Corpus parse_records(std::string_view text, std::optional<std::size_t> expected_dimension = {},
                     std::string name = {});
Corpus load_corpus(const std::filesystem::path& path,
                   std::optional<std::size_t> expected_dimension = {});

std::string record_line(const EmbeddingRecord& record);
std::string records_text(const Corpus& corpus);
void write_records(const Corpus& corpus, const std::filesystem::path& path);

// Snapshot = header line {"dimension","name","checksum"} followed by the
// record lines. The checksum is FNV-1a 64 over every byte after the header
// line's newline, rendered as 16 lowercase hex digits.
std::uint64_t fnv1a64(std::string_view bytes);
std::string checksum_hex(std::string_view body);
std::string snapshot_text(const Corpus& corpus);
Corpus parse_snapshot(std::string_view text);
void save_snapshot(const Corpus& corpus, const std::filesystem::path& path);
Corpus load_snapshot(const std::filesystem::path& path);

// Accepts either a snapshot or plain record lines.
bool looks_like_snapshot(std::string_view text);
Corpus parse_any(std::string_view text, std::string name = {});
Corpus load_any(const std::filesystem::path& path);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view contents);

// Records tagged with `split`, in corpus order. The result is named
// "<name>.<split>".
Corpus select_split(const Corpus& corpus, Split split);

/// splitmix64 stream. Each call advances the state by the golden-gamma
/// constant and returns the finalized mix of the new state.
class SplitMix64 {
public:
    explicit SplitMix64(std::uint64_t seed) : state_(seed) {}
    std::uint64_t next();

private:
    std::uint64_t state_;
};

// Fisher-Yates driven by SplitMix64: for i = n-1 down to 1, swap position i
// with position next() % (i + 1). Returns the permuted identity.
std::vector<std::size_t> deterministic_permutation(std::size_t n, std::uint64_t seed);

struct SplitRatios {
    double database = 0.64;
    double validation = 0.16;
    double test = 0.20;
};

struct CorpusSplit {
    Corpus database;
    Corpus validation;
    Corpus test;
};

// Sizes are floor(n * r_db), floor(n * r_val) and the remainder; each output
// record is retagged with its split.
CorpusSplit split_corpus(const Corpus& corpus, const SplitRatios& ratios, std::uint64_t seed);

// CT windowing: clamp to [lo, hi], then round_half_up((v - lo) / (hi - lo) * 255).
std::vector<std::uint8_t> hu_window(std::span<const double> values, double lo = -1000.0,
                                    double hi = 1000.0);

}  // namespace evsearch
