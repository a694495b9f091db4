#include "ccmt/errors.hpp"
#include "ccmt/synthgen.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>

using namespace ccmt;
namespace fs = std::filesystem;

namespace {

SynthConfig small_config(std::uint64_t seed = 5) {
    SynthConfig cfg;
    cfg.n_train = 40;
    cfg.n_dev = 20;
    cfg.seed = seed;
    return cfg;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

} // namespace

TEST(SynthConfig, Validation) {
    SynthConfig cfg;
    EXPECT_NO_THROW(cfg.validate());
    cfg.label_flip_prob = 1.5;
    EXPECT_THROW(cfg.validate(), ValidationError);
    cfg = SynthConfig{};
    cfg.count_range[Modality::audio] = {10, 5};
    EXPECT_THROW(cfg.validate(), ValidationError);
    cfg = SynthConfig{};
    cfg.amplitude[Task::request][Modality::audio] = -1;
    EXPECT_THROW(cfg.validate(), ValidationError);
}

TEST(SignalDirections, Orthonormal) {
    for (std::uint64_t seed : {0ULL, 1ULL, 99ULL}) {
        const auto dirs = signal_directions(32, seed);
        for (std::size_t a = 0; a < 4; ++a)
            for (std::size_t b = 0; b < 4; ++b) {
                double dot = 0;
                for (std::size_t c = 0; c < 32; ++c) dot += dirs(a, c) * dirs(b, c);
                EXPECT_NEAR(dot, a == b ? 1.0 : 0.0, 1e-8);
            }
    }
}

TEST(GenerateSample, CountsInRangeAndClassTokens) {
    const auto cfg = small_config();
    const auto dirs = signal_directions(cfg.dim, cfg.seed);
    for (std::uint64_t i = 0; i < 200; ++i) {
        const auto s = generate_sample(cfg, dirs, i);
        for (auto m : kSynthModalities) {
            const auto& ts = s.record.at(m);
            const auto& r = cfg.count_range.at(m);
            EXPECT_GE(ts.body_count(), r.min);
            EXPECT_LE(ts.body_count(), r.max);
            EXPECT_EQ(ts.dim(), cfg.dim);
        }
        EXPECT_FALSE(s.record.at(Modality::audio).has_class_token);
        const auto& fr = s.record.at(Modality::text_fr);
        ASSERT_TRUE(fr.has_class_token);
        for (std::size_t c = 0; c < cfg.dim; ++c) {
            double mean = 0;
            for (std::size_t r = 1; r < fr.count(); ++r) mean += fr.tokens(r, c);
            EXPECT_NEAR(fr.tokens(0, c), mean / fr.body_count(), 1e-5);
        }
    }
}

TEST(GenerateSample, IndependentOfGenerationOrder) {
    const auto cfg = small_config();
    const auto dirs = signal_directions(cfg.dim, cfg.seed);
    const auto a = generate_sample(cfg, dirs, 17);
    generate_sample(cfg, dirs, 3);
    const auto b = generate_sample(cfg, dirs, 17);
    EXPECT_EQ(a.record.token_sets, b.record.token_sets);
}

TEST(GenerateSample, NoFlipMeansObservedEqualsClean) {
    auto cfg = small_config();
    cfg.label_flip_prob = 0;
    const auto dirs = signal_directions(cfg.dim, cfg.seed);
    for (std::uint64_t i = 0; i < 50; ++i) {
        const auto s = generate_sample(cfg, dirs, i);
        EXPECT_EQ(s.record.label_request, s.clean[0]);
        EXPECT_EQ(s.record.label_complaint, s.clean[1]);
    }
}

TEST(GenerateSample, SignalLivesAlongPlantedDirection) {
    // Noise-free tokens with certain injection: every audio token of a
    // complaint sample equals amplitude * direction.
    auto cfg = small_config();
    cfg.noise_sigma = 0;
    cfg.injection_prob = 1;
    cfg.label_flip_prob = 0;
    const auto dirs = signal_directions(cfg.dim, cfg.seed);
    for (std::uint64_t i = 0; i < 40; ++i) {
        const auto s = generate_sample(cfg, dirs, i);
        if (!(s.clean[1] == 1 && s.clean[0] == 0)) continue;
        const auto& au = s.record.at(Modality::audio);
        for (std::size_t c = 0; c < cfg.dim; ++c)
            EXPECT_NEAR(au.tokens(0, c), 1.2 * dirs(3, c), 1e-6);
        const auto& en = s.record.at(Modality::text_en);
        for (std::size_t c = 0; c < cfg.dim; ++c) EXPECT_NEAR(en.tokens(1, c), 0.5 * dirs(2, c), 1e-6);
        return;
    }
    FAIL() << "no complaint-only sample drawn";
}

TEST(GenerateSplits, EmpiricalPriors) {
    SynthConfig cfg;
    cfg.seed = 21;
    const auto [train, dev] = generate_splits(cfg);
    ASSERT_EQ(dev.size(), 500u);
    double r = 0, c = 0;
    for (const auto& s : dev) {
        r += s.label_request;
        c += s.label_complaint;
    }
    // Flips pull observed priors toward 0.5 by at most 5%.
    EXPECT_NEAR(r / 500, 0.5, 0.06);
    EXPECT_NEAR(c / 500, 0.35, 0.06);
    EXPECT_EQ(train.front().id, "train_000000");
    EXPECT_EQ(dev.back().id, "dev_000499");
}

TEST(GenerateDataset, SameSeedIsByteIdentical) {
    const auto base = fs::temp_directory_path() / "ccmt_synth_twice";
    fs::remove_all(base);
    const auto cfg = small_config(77);
    generate_dataset(cfg, base / "a", 0);
    generate_dataset(cfg, base / "b", 0);
    std::size_t files = 0;
    for (const auto& e : fs::recursive_directory_iterator(base / "a")) {
        if (!e.is_regular_file()) continue;
        const auto rel = fs::relative(e.path(), base / "a");
        EXPECT_EQ(slurp(e.path()), slurp(base / "b" / rel)) << rel;
        ++files;
    }
    EXPECT_EQ(files, cfg.n_train + cfg.n_dev + 2);
    const auto m = load_manifest(base / "a" / "manifest.jsonl");
    EXPECT_EQ(m.entries.size(), cfg.n_train + cfg.n_dev);
    EXPECT_TRUE(m.missing.empty());
    fs::remove_all(base);
}

TEST(Oracle, ZeroSignalIsChance) {
    SynthConfig cfg;
    cfg.set_zero_signal();
    cfg.seed = 4;
    for (auto m : kSynthModalities) {
        EXPECT_NEAR(oracle_unimodal_uar(cfg, m, Task::complaint, 1000), 0.5, 0.03);
        EXPECT_NEAR(oracle_unimodal_uar(cfg, m, Task::request, 1000), 0.5, 0.03);
    }
}

TEST(Oracle, DefaultConfigOrdering) {
    SynthConfig cfg;
    cfg.seed = 8;
    const auto r = oracle_report(cfg, 2000);
    EXPECT_LT(r.uar.at(Task::complaint).at("text_fr"), r.uar.at(Task::complaint).at("all"));
    EXPECT_LT(r.uar.at(Task::request).at("audio"), r.uar.at(Task::request).at("text_fr"));
    EXPECT_EQ(r.fusion_gap_ok, r.complaint_fusion_gap >= kFusionGapTarget);
}

TEST(Oracle, RejectsSmallSampleCount) {
    EXPECT_THROW(oracle_unimodal_uar(SynthConfig{}, Modality::audio, Task::request, 10), ValidationError);
}
