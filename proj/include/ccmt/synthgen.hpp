#pragma once

#include "ccmt/rng.hpp"
#include "ccmt/tensor.hpp"
#include "ccmt/tokenstore.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <utility>
#include <vector>

namespace ccmt {

enum class Task : std::uint8_t { request = 0, complaint = 1 };

struct CountRange {
    std::size_t min = 1;
    std::size_t max = 1;
};

// Planted-signal generator settings. Each token is N(0, sigma^2 I); when a
// task label is 1, each token independently (with injection_prob) also gets
// amplitude * direction for its modality group (text or audio) and task.
struct SynthConfig {
    std::size_t n_train = 1000;
    std::size_t n_dev = 500;
    std::size_t dim = 32;
    std::map<Modality, CountRange> count_range{
        {Modality::text_fr, {10, 60}}, {Modality::text_en, {10, 60}}, {Modality::audio, {40, 120}}};
    double noise_sigma = 1.0;
    double injection_prob = 0.3;
    // amplitude[task][modality]
    std::map<Task, std::map<Modality, double>> amplitude{
        {Task::request, {{Modality::text_fr, 1.2}, {Modality::text_en, 1.0}, {Modality::audio, 0.3}}},
        {Task::complaint, {{Modality::audio, 1.2}, {Modality::text_fr, 0.6}, {Modality::text_en, 0.5}}}};
    double label_flip_prob = 0.05;
    double prior_request = 0.5;
    double prior_complaint = 0.35;
    std::uint64_t seed = 0;

    double amp(Task t, Modality m) const;
    void set_zero_signal();
    void validate() const; // throws ValidationError
};

nlohmann::json to_json(const SynthConfig& cfg);

inline constexpr std::array<Modality, 3> kSynthModalities{Modality::text_fr, Modality::text_en, Modality::audio};

// Four orthonormal directions (Gram-Schmidt on seeded Gaussian draws), rows:
// request/text, request/audio, complaint/text, complaint/audio.
TensorD signal_directions(std::size_t dim, std::uint64_t seed);

struct SynthSample {
    SampleRecord record;        // observed (possibly flipped) labels
    std::array<int, 2> clean{}; // labels used to plant the signal
};

// Sample `index` of a dataset; its Rng is seeded with seed XOR index, so
// samples are independent of generation order.
SynthSample generate_sample(const SynthConfig& cfg, const TensorD& directions, std::uint64_t index);

struct OracleReport {
    std::size_t n_mc = 0;
    // uar[task]["text_fr" | "text_en" | "audio" | "all"]
    std::map<Task, std::map<std::string, double>> uar;
    double complaint_fusion_gap = 0.0; // all - best unimodal, complaint task
    bool fusion_gap_ok = false;        // gap >= 0.05
};

// Fits a class-balanced ridge classifier on mean-pooled tokens of the given
// modalities (concatenated) over n_mc fresh samples and returns UAR on another
// n_mc fresh samples.
double oracle_uar(const SynthConfig& cfg, const std::vector<Modality>& modalities, Task task, std::size_t n_mc);
double oracle_unimodal_uar(const SynthConfig& cfg, Modality modality, Task task, std::size_t n_mc);

// All unimodal and pooled oracles for both tasks from one shared draw.
OracleReport oracle_report(const SynthConfig& cfg, std::size_t n_mc);
nlohmann::json to_json(const OracleReport& r);

inline constexpr double kFusionGapTarget = 0.05;

struct GeneratedDataset {
    std::filesystem::path manifest;
    std::filesystem::path meta;
    OracleReport oracle;
};

// Writes <out>/embeddings/<id>.ccmt, <out>/manifest.jsonl and
// <out>/dataset_meta.json. n_mc = 0 skips the oracle.
GeneratedDataset generate_dataset(const SynthConfig& cfg, const std::filesystem::path& out, std::size_t n_mc = 2000);

// In-memory variant used by tests and the acceptance suite.
std::pair<std::vector<SampleRecord>, std::vector<SampleRecord>> generate_splits(const SynthConfig& cfg);

} // namespace ccmt
