#pragma once

#include "ccmt/rng.hpp"
#include "ccmt/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace ccmt {

enum class Modality : std::uint8_t { text_fr = 0, text_en = 1, text_other = 2, audio = 3 };

std::string_view modality_name(Modality m) noexcept;
std::optional<Modality> parse_modality(std::string_view name) noexcept;

// One modality's token matrix [count x dim]. When has_class_token is set,
// row 0 is the class token.
struct TokenSet {
    Modality modality = Modality::text_fr;
    TensorF tokens;
    bool has_class_token = false;

    std::size_t count() const noexcept { return tokens.rows(); }
    std::size_t dim() const noexcept { return tokens.cols(); }
    std::size_t body_count() const noexcept { return count() - (has_class_token ? 1 : 0); }

    // Throws ValidationError when count or dim is zero or a value is non-finite.
    void validate() const;

    friend bool operator==(const TokenSet&, const TokenSet&) = default;
};

using TokenSets = std::map<Modality, TokenSet>;

struct SampleRecord {
    std::string id;
    TokenSets token_sets;
    int label_request = 0;
    int label_complaint = 0;

    const TokenSet& at(Modality m) const;
    void validate() const;
};

// Resamples a token set to exactly k rows. Down-sampling draws k (or k-1
// after the kept class token) rows without replacement by partial
// Fisher-Yates; up-sampling appends uniformly drawn duplicates of non-class
// rows. A class-token-only set is padded with copies of the class row.
TokenSet uniformize(const TokenSet& ts, std::size_t k, Rng& rng);

// Attaches class_vec as row 0.
TokenSet prepend_class_token(const TokenSet& ts, const TensorF& class_vec);

// ---- binary embedding interchange ---------------------------------------
//
// Little-endian layout:
//   "CCMT" | u16 version (=1) | u16 modality_count
//   per modality: u8 name_len | name | u8 has_class_token | u32 count |
//                 u32 dim | count*dim float32, row-major

inline constexpr std::uint16_t kEmbeddingFormatVersion = 1;

std::vector<std::uint8_t> encode_embeddings(const TokenSets& sets);
TokenSets decode_embeddings(const std::vector<std::uint8_t>& bytes);

void write_embedding_file(const std::filesystem::path& path, const TokenSets& sets);
TokenSets read_embedding_file(const std::filesystem::path& path);

std::size_t embedding_file_size(const TokenSets& sets);

// ---- manifest -----------------------------------------------------------

enum class Split { train, dev, test };

std::string_view split_name(Split s) noexcept;
std::optional<Split> parse_split(std::string_view name) noexcept;

struct ManifestEntry {
    std::string id;
    std::filesystem::path embedding_file; // resolved against the manifest directory
    int request = 0;
    int complaint = 0;
    Split split = Split::train;
    std::size_t line = 0;
};

struct MissingFile {
    std::size_t line = 0;
    std::filesystem::path path;
};

struct Manifest {
    std::vector<ManifestEntry> entries; // only entries whose embedding file exists
    std::vector<MissingFile> missing;

    std::vector<ManifestEntry> split(Split s) const;
};

// Parses a JSON-lines manifest. Malformed lines raise ParseError, bad labels
// or duplicate ids raise ValidationError; both cite line numbers.
Manifest load_manifest(const std::filesystem::path& path);

void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries);

SampleRecord load_sample(const ManifestEntry& entry);
std::vector<SampleRecord> load_samples(const std::vector<ManifestEntry>& entries);

} // namespace ccmt
