#include "ccmt/tokenstore.hpp"

#include "ccmt/errors.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numeric>
#include <set>
#include <unordered_map>

namespace ccmt {

namespace fs = std::filesystem;

std::string_view modality_name(Modality m) noexcept {
    switch (m) {
    case Modality::text_fr: return "text_fr";
    case Modality::text_en: return "text_en";
    case Modality::text_other: return "text_other";
    case Modality::audio: return "audio";
    }
    return "unknown";
}

std::optional<Modality> parse_modality(std::string_view name) noexcept {
    for (auto m : {Modality::text_fr, Modality::text_en, Modality::text_other, Modality::audio})
        if (modality_name(m) == name) return m;
    return std::nullopt;
}

void TokenSet::validate() const {
    if (tokens.empty() || tokens.rank() != 2)
        throw ValidationError(std::string(modality_name(modality)) + ": token set must be a non-empty matrix");
    if (!tokens.all_finite())
        throw ValidationError(std::string(modality_name(modality)) + ": token set contains non-finite values");
}

const TokenSet& SampleRecord::at(Modality m) const {
    auto it = token_sets.find(m);
    if (it == token_sets.end())
        throw ContractError("sample '" + id + "' has no " + std::string(modality_name(m)) + " tokens");
    return it->second;
}

void SampleRecord::validate() const {
    if (token_sets.empty()) throw ValidationError("sample '" + id + "' has no token sets");
    const std::size_t dim = token_sets.begin()->second.dim();
    for (const auto& [m, ts] : token_sets) {
        ts.validate();
        if (ts.dim() != dim)
            throw ValidationError("sample '" + id + "': modality " + std::string(modality_name(m)) + " has dim " +
                                  std::to_string(ts.dim()) + ", expected " + std::to_string(dim));
    }
    if ((label_request != 0 && label_request != 1) || (label_complaint != 0 && label_complaint != 1))
        throw ValidationError("sample '" + id + "': labels must be 0 or 1");
}

TokenSet uniformize(const TokenSet& ts, std::size_t k, Rng& rng) {
    if (k == 0) throw ContractError("uniformize: k must be at least 1");
    if (ts.count() == 0) throw ContractError("uniformize: empty token set");
    const std::size_t count = ts.count();
    if (count == k) return ts;

    const std::size_t dim = ts.dim();
    const std::size_t first_body = ts.has_class_token ? 1 : 0;
    const std::size_t body = count - first_body;

    std::vector<std::size_t> rows;
    rows.reserve(k);
    if (ts.has_class_token) rows.push_back(0);

    if (count > k) {
        const std::size_t want = k - rows.size();
        std::vector<std::size_t> pool(body);
        std::iota(pool.begin(), pool.end(), first_body);
        for (std::size_t i = 0; i < want; ++i) {
            const std::size_t j = i + static_cast<std::size_t>(rng.below(body - i));
            std::swap(pool[i], pool[j]);
            rows.push_back(pool[i]);
        }
    } else {
        rows.resize(count);
        std::iota(rows.begin(), rows.end(), std::size_t{0});
        while (rows.size() < k) {
            if (body == 0)
                rows.push_back(0);
            else
                rows.push_back(first_body + static_cast<std::size_t>(rng.below(body)));
        }
    }

    TensorF out(Shape{k, dim});
    for (std::size_t r = 0; r < k; ++r) {
        auto src = ts.tokens.row(rows[r]);
        std::copy(src.begin(), src.end(), out.row(r).begin());
    }
    return TokenSet{ts.modality, std::move(out), ts.has_class_token};
}

TokenSet prepend_class_token(const TokenSet& ts, const TensorF& class_vec) {
    if (ts.has_class_token)
        throw ContractError(std::string(modality_name(ts.modality)) + " token set already has a class token");
    if (class_vec.size() != ts.dim())
        throw DimensionError("class vector " + shape_str(class_vec.shape()) + " does not match token dim " +
                             std::to_string(ts.dim()));
    TensorF out(Shape{ts.count() + 1, ts.dim()});
    std::copy(class_vec.data(), class_vec.data() + class_vec.size(), out.data());
    std::copy(ts.tokens.data(), ts.tokens.data() + ts.tokens.size(), out.data() + ts.dim());
    return TokenSet{ts.modality, std::move(out), true};
}

// ---- binary format --------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'C', 'C', 'M', 'T'};

class ByteWriter {
public:
    explicit ByteWriter(std::vector<std::uint8_t>& out) : out_(out) {}
    void bytes(const void* p, std::size_t n) {
        auto b = static_cast<const std::uint8_t*>(p);
        out_.insert(out_.end(), b, b + n);
    }
    void u8(std::uint8_t v) { out_.push_back(v); }
    void u16(std::uint16_t v) {
        for (int i = 0; i < 2; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }

private:
    std::vector<std::uint8_t>& out_;
};

class ByteReader {
public:
    explicit ByteReader(const std::vector<std::uint8_t>& in) : in_(in) {}
    std::size_t offset() const noexcept { return pos_; }
    void need(std::size_t n, const char* what) const {
        if (in_.size() - pos_ < n)
            throw FormatError(std::string("truncated embedding payload reading ") + what + " at byte offset " +
                              std::to_string(pos_) + " (file has " + std::to_string(in_.size()) + " bytes)");
    }
    std::uint8_t u8(const char* what) {
        need(1, what);
        return in_[pos_++];
    }
    std::uint16_t u16(const char* what) {
        need(2, what);
        std::uint16_t v = static_cast<std::uint16_t>(in_[pos_] | (in_[pos_ + 1] << 8));
        pos_ += 2;
        return v;
    }
    std::uint32_t u32(const char* what) {
        need(4, what);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in_[pos_ + i]) << (8 * i);
        pos_ += 4;
        return v;
    }
    std::string str(std::size_t n, const char* what) {
        need(n, what);
        std::string s(reinterpret_cast<const char*>(in_.data() + pos_), n);
        pos_ += n;
        return s;
    }

private:
    const std::vector<std::uint8_t>& in_;
    std::size_t pos_ = 0;
};

std::vector<std::uint8_t> read_all(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open '" + path.string() + "'");
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

} // namespace

std::size_t embedding_file_size(const TokenSets& sets) {
    std::size_t n = 8;
    for (const auto& [m, ts] : sets) n += 1 + modality_name(m).size() + 1 + 8 + 4 * ts.count() * ts.dim();
    return n;
}

std::vector<std::uint8_t> encode_embeddings(const TokenSets& sets) {
    if (sets.empty()) throw ContractError("embedding file needs at least one modality");
    std::vector<std::uint8_t> out;
    out.reserve(embedding_file_size(sets));
    ByteWriter w(out);
    w.bytes(kMagic, 4);
    w.u16(kEmbeddingFormatVersion);
    w.u16(static_cast<std::uint16_t>(sets.size()));
    for (const auto& [m, ts] : sets) {
        if (ts.modality != m) throw ContractError("token set stored under the wrong modality key");
        ts.validate();
        const auto name = modality_name(m);
        w.u8(static_cast<std::uint8_t>(name.size()));
        w.bytes(name.data(), name.size());
        w.u8(ts.has_class_token ? 1 : 0);
        w.u32(static_cast<std::uint32_t>(ts.count()));
        w.u32(static_cast<std::uint32_t>(ts.dim()));
        for (float v : ts.tokens.values()) w.f32(v);
    }
    return out;
}

TokenSets decode_embeddings(const std::vector<std::uint8_t>& bytes) {
    ByteReader r(bytes);
    if (r.str(4, "magic") != std::string(kMagic, 4)) throw FormatError("bad magic: not a CCMT embedding file");
    const auto version = r.u16("version");
    if (version != kEmbeddingFormatVersion)
        throw FormatError("unsupported embedding format version " + std::to_string(version));
    const auto count = r.u16("modality count");
    if (count == 0) throw FormatError("embedding file declares zero modalities");

    TokenSets sets;
    for (std::uint16_t i = 0; i < count; ++i) {
        const std::size_t at = r.offset();
        const auto name_len = r.u8("modality name length");
        const auto name = r.str(name_len, "modality name");
        auto modality = parse_modality(name);
        if (!modality) throw FormatError("unknown modality '" + name + "' at byte offset " + std::to_string(at));
        const auto cls = r.u8("class-token flag");
        if (cls > 1) throw FormatError("class-token flag must be 0 or 1 at byte offset " + std::to_string(at));
        const auto rows = r.u32("token count");
        const auto dim = r.u32("dim");
        if (rows == 0 || dim == 0)
            throw FormatError("modality '" + name + "' has zero tokens or dim at byte offset " + std::to_string(at));
        const std::size_t n = static_cast<std::size_t>(rows) * dim;
        r.need(4 * n, "token payload");
        std::vector<float> data(n);
        for (auto& v : data) v = std::bit_cast<float>(r.u32("token payload"));
        if (sets.contains(*modality)) throw FormatError("duplicate modality '" + name + "'");
        sets.emplace(*modality, TokenSet{*modality, TensorF(Shape{rows, dim}, std::move(data)), cls == 1});
    }
    if (r.offset() != bytes.size())
        throw FormatError("trailing bytes after offset " + std::to_string(r.offset()));
    return sets;
}

void write_embedding_file(const fs::path& path, const TokenSets& sets) {
    const auto bytes = encode_embeddings(sets);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("write failed for '" + path.string() + "'");
}

TokenSets read_embedding_file(const fs::path& path) {
    try {
        return decode_embeddings(read_all(path));
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

// ---- manifest -------------------------------------------------------------

std::string_view split_name(Split s) noexcept {
    switch (s) {
    case Split::train: return "train";
    case Split::dev: return "dev";
    case Split::test: return "test";
    }
    return "unknown";
}

std::optional<Split> parse_split(std::string_view name) noexcept {
    for (auto s : {Split::train, Split::dev, Split::test})
        if (split_name(s) == name) return s;
    return std::nullopt;
}

std::vector<ManifestEntry> Manifest::split(Split s) const {
    std::vector<ManifestEntry> out;
    std::copy_if(entries.begin(), entries.end(), std::back_inserter(out),
                 [s](const ManifestEntry& e) { return e.split == s; });
    return out;
}

namespace {

int binary_label(const nlohmann::json& rec, const char* key, std::size_t line) {
    const auto& v = rec.at(key);
    if (!v.is_number_integer() && !v.is_boolean())
        throw ValidationError("manifest line " + std::to_string(line) + ": '" + key + "' must be 0 or 1");
    const long long x = v.is_boolean() ? static_cast<long long>(v.get<bool>()) : v.get<long long>();
    if (x != 0 && x != 1)
        throw ValidationError("manifest line " + std::to_string(line) + ": '" + key + "' must be 0 or 1, got " +
                              std::to_string(x));
    return static_cast<int>(x);
}

} // namespace

Manifest load_manifest(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open manifest '" + path.string() + "'");
    const fs::path base = path.parent_path();

    Manifest manifest;
    std::unordered_map<std::string, std::size_t> seen;
    std::string text;
    std::size_t line = 0;
    while (std::getline(in, text)) {
        ++line;
        if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
        nlohmann::json rec;
        try {
            rec = nlohmann::json::parse(text);
        } catch (const nlohmann::json::parse_error& e) {
            throw ParseError("manifest line " + std::to_string(line) + ": " + e.what());
        }
        if (!rec.is_object()) throw ParseError("manifest line " + std::to_string(line) + ": expected a JSON object");
        for (const char* key : {"id", "embedding_file", "request", "complaint", "split"})
            if (!rec.contains(key))
                throw ParseError("manifest line " + std::to_string(line) + ": missing field '" + key + "'");
        if (!rec["id"].is_string() || !rec["embedding_file"].is_string() || !rec["split"].is_string())
            throw ParseError("manifest line " + std::to_string(line) + ": id, embedding_file and split must be strings");

        ManifestEntry e;
        e.line = line;
        e.id = rec["id"].get<std::string>();
        e.request = binary_label(rec, "request", line);
        e.complaint = binary_label(rec, "complaint", line);
        const auto split = parse_split(rec["split"].get<std::string>());
        if (!split)
            throw ValidationError("manifest line " + std::to_string(line) + ": split must be train, dev or test");
        e.split = *split;
        if (auto [it, fresh] = seen.emplace(e.id, line); !fresh)
            throw ValidationError("manifest: duplicate id '" + e.id + "' on lines " + std::to_string(it->second) +
                                  " and " + std::to_string(line));
        fs::path file = rec["embedding_file"].get<std::string>();
        e.embedding_file = file.is_absolute() ? file : base / file;
        if (!fs::exists(e.embedding_file))
            manifest.missing.push_back({line, e.embedding_file});
        else
            manifest.entries.push_back(std::move(e));
    }
    return manifest;
}

void write_manifest(const fs::path& path, const std::vector<ManifestEntry>& entries) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
    const fs::path base = path.parent_path();
    for (const auto& e : entries) {
        fs::path rel = e.embedding_file;
        if (!base.empty()) {
            auto candidate = e.embedding_file.lexically_relative(base);
            if (!candidate.empty() && *candidate.begin() != "..") rel = candidate;
        }
        nlohmann::ordered_json rec;
        rec["id"] = e.id;
        rec["embedding_file"] = rel.generic_string();
        rec["request"] = e.request;
        rec["complaint"] = e.complaint;
        rec["split"] = split_name(e.split);
        out << rec.dump() << '\n';
    }
}

SampleRecord load_sample(const ManifestEntry& entry) {
    SampleRecord rec{entry.id, read_embedding_file(entry.embedding_file), entry.request, entry.complaint};
    rec.validate();
    return rec;
}

std::vector<SampleRecord> load_samples(const std::vector<ManifestEntry>& entries) {
    std::vector<SampleRecord> out;
    out.reserve(entries.size());
    for (const auto& e : entries) out.push_back(load_sample(e));
    return out;
}

} // namespace ccmt
