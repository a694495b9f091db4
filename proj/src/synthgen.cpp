#include "ccmt/synthgen.hpp"

#include "ccmt/errors.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

namespace ccmt {

namespace fs = std::filesystem;

namespace {

std::string_view task_name(Task t) { return t == Task::request ? "request" : "complaint"; }

// Row of the directions matrix for a task and modality group.
std::size_t direction_row(Task t, Modality m) {
    const std::size_t group = m == Modality::audio ? 1 : 0;
    return static_cast<std::size_t>(t) * 2 + group;
}

// Oracle draws live far above any dataset index so their Rng streams never
// coincide with dataset samples.
constexpr std::uint64_t kOracleFitBase = 1ULL << 40;
constexpr std::uint64_t kOracleEvalBase = 1ULL << 41;

} // namespace

double SynthConfig::amp(Task t, Modality m) const {
    auto it = amplitude.find(t);
    if (it == amplitude.end()) return 0.0;
    auto jt = it->second.find(m);
    return jt == it->second.end() ? 0.0 : jt->second;
}

void SynthConfig::set_zero_signal() {
    for (auto& [t, per] : amplitude)
        for (auto& [m, a] : per) a = 0.0;
    label_flip_prob = 0.0;
}

void SynthConfig::validate() const {
    if (n_train == 0 || n_dev == 0) throw ValidationError("n_train and n_dev must be positive");
    if (dim < 4) throw ValidationError("dim must be at least 4 to hold four orthonormal signal directions");
    for (double p : {injection_prob, label_flip_prob, prior_request, prior_complaint})
        if (!(p >= 0.0 && p <= 1.0)) throw ValidationError("probabilities must lie in [0, 1]");
    if (!(noise_sigma >= 0.0)) throw ValidationError("noise_sigma must be non-negative");
    for (auto m : kSynthModalities) {
        auto it = count_range.find(m);
        if (it == count_range.end())
            throw ValidationError("missing count range for " + std::string(modality_name(m)));
        if (it->second.min < 1 || it->second.min > it->second.max)
            throw ValidationError("count range for " + std::string(modality_name(m)) + " must be nonempty and >= 1");
    }
    for (const auto& [t, per] : amplitude)
        for (const auto& [m, a] : per)
            if (!(a >= 0.0)) throw ValidationError("amplitudes must be non-negative");
}

nlohmann::json to_json(const SynthConfig& cfg) {
    nlohmann::ordered_json j;
    j["n_train"] = cfg.n_train;
    j["n_dev"] = cfg.n_dev;
    j["dim"] = cfg.dim;
    nlohmann::ordered_json ranges;
    for (const auto& [m, r] : cfg.count_range) ranges[std::string(modality_name(m))] = {r.min, r.max};
    j["count_range"] = ranges;
    j["noise_sigma"] = cfg.noise_sigma;
    j["injection_prob"] = cfg.injection_prob;
    nlohmann::ordered_json amps;
    for (const auto& [t, per] : cfg.amplitude) {
        nlohmann::ordered_json tj;
        for (const auto& [m, a] : per) tj[std::string(modality_name(m))] = a;
        amps[std::string(task_name(t))] = tj;
    }
    j["amplitudes"] = amps;
    j["label_flip_prob"] = cfg.label_flip_prob;
    j["priors"] = {{"request", cfg.prior_request}, {"complaint", cfg.prior_complaint}};
    j["seed"] = cfg.seed;
    return j;
}

TensorD signal_directions(std::size_t dim, std::uint64_t seed) {
    if (dim < 4) throw ValidationError("dim must be at least 4");
    Rng rng(derive_seed(seed, 0xD1EC7));
    TensorD dirs(Shape{4, dim});
    for (std::size_t r = 0; r < 4; ++r) {
        auto row = dirs.row(r);
        for (auto& v : row) v = rng.normal();
        // Two Gram-Schmidt passes keep orthogonality at machine precision.
        for (int pass = 0; pass < 2; ++pass) {
            for (std::size_t q = 0; q < r; ++q) {
                auto prev = dirs.row(q);
                double dot = 0;
                for (std::size_t c = 0; c < dim; ++c) dot += row[c] * prev[c];
                for (std::size_t c = 0; c < dim; ++c) row[c] -= dot * prev[c];
            }
        }
        double norm = 0;
        for (auto v : row) norm += v * v;
        norm = std::sqrt(norm);
        for (auto& v : row) v /= norm;
    }
    return dirs;
}

namespace {

std::size_t draw_count(const SynthConfig& cfg, Modality m, Rng& rng) {
    const auto& r = cfg.count_range.at(m);
    return r.min + static_cast<std::size_t>(rng.below(r.max - r.min + 1));
}

struct PlantedTokens {
    std::vector<double> noise;                 // count x dim
    std::vector<std::array<bool, 2>> injected; // per token, per task
    std::size_t count = 0;
};

PlantedTokens draw_tokens(const SynthConfig& cfg, Modality m, std::size_t count, Rng& rng) {
    PlantedTokens p;
    p.count = count;
    p.noise.resize(count * cfg.dim);
    p.injected.resize(count);
    for (std::size_t i = 0; i < count; ++i) {
        for (std::size_t c = 0; c < cfg.dim; ++c) p.noise[i * cfg.dim + c] = cfg.noise_sigma * rng.normal();
        p.injected[i] = {rng.bernoulli(cfg.injection_prob), rng.bernoulli(cfg.injection_prob)};
    }
    (void)m;
    return p;
}

void add_signal(const SynthConfig& cfg, const TensorD& dirs, Modality m, const std::array<int, 2>& labels,
                const std::array<bool, 2>& injected, std::span<float> out, std::span<const double> base) {
    for (std::size_t c = 0; c < cfg.dim; ++c) {
        double v = base[c];
        for (auto t : {Task::request, Task::complaint}) {
            const auto ti = static_cast<std::size_t>(t);
            if (labels[ti] && injected[ti]) v += cfg.amp(t, m) * dirs(direction_row(t, m), c);
        }
        out[c] = static_cast<float>(v);
    }
}

TokenSet with_mean_class_token(Modality m, const TensorF& body) {
    TensorF out(Shape{body.rows() + 1, body.cols()});
    std::vector<double> mean(body.cols(), 0.0);
    for (std::size_t r = 0; r < body.rows(); ++r)
        for (std::size_t c = 0; c < body.cols(); ++c) mean[c] += body(r, c);
    for (std::size_t c = 0; c < body.cols(); ++c) out(0, c) = static_cast<float>(mean[c] / body.rows());
    std::copy(body.data(), body.data() + body.size(), out.data() + body.cols());
    return TokenSet{m, std::move(out), true};
}

} // namespace

SynthSample generate_sample(const SynthConfig& cfg, const TensorD& directions, std::uint64_t index) {
    Rng rng(cfg.seed ^ index);
    const std::size_t d = cfg.dim;
    SynthSample s;
    s.clean = {rng.bernoulli(cfg.prior_request) ? 1 : 0, rng.bernoulli(cfg.prior_complaint) ? 1 : 0};

    // French transcript tokens.
    const std::size_t n_fr = draw_count(cfg, Modality::text_fr, rng);
    const auto fr = draw_tokens(cfg, Modality::text_fr, n_fr, rng);
    TensorF fr_body(Shape{n_fr, d});
    for (std::size_t i = 0; i < n_fr; ++i)
        add_signal(cfg, directions, Modality::text_fr, s.clean, fr.injected[i], fr_body.row(i),
                   std::span<const double>(fr.noise.data() + i * d, d));

    // English tokens: a translated copy of randomly chosen French tokens
    // (same noise and injection events, English amplitudes) plus
    // N(0, 0.25 sigma^2) translation noise.
    const std::size_t n_en = draw_count(cfg, Modality::text_en, rng);
    TensorF en_body(Shape{n_en, d});
    std::vector<double> base(d);
    for (std::size_t i = 0; i < n_en; ++i) {
        const std::size_t src = static_cast<std::size_t>(rng.below(n_fr));
        for (std::size_t c = 0; c < d; ++c) base[c] = fr.noise[src * d + c] + 0.5 * cfg.noise_sigma * rng.normal();
        add_signal(cfg, directions, Modality::text_en, s.clean, fr.injected[src], en_body.row(i), base);
    }

    const std::size_t n_au = draw_count(cfg, Modality::audio, rng);
    const auto au = draw_tokens(cfg, Modality::audio, n_au, rng);
    TensorF au_body(Shape{n_au, d});
    for (std::size_t i = 0; i < n_au; ++i)
        add_signal(cfg, directions, Modality::audio, s.clean, au.injected[i], au_body.row(i),
                   std::span<const double>(au.noise.data() + i * d, d));

    std::array<int, 2> observed = s.clean;
    for (auto& y : observed)
        if (rng.bernoulli(cfg.label_flip_prob)) y = 1 - y;

    auto& rec = s.record;
    rec.label_request = observed[0];
    rec.label_complaint = observed[1];
    rec.token_sets.emplace(Modality::text_fr, with_mean_class_token(Modality::text_fr, fr_body));
    rec.token_sets.emplace(Modality::text_en, with_mean_class_token(Modality::text_en, en_body));
    rec.token_sets.emplace(Modality::audio, TokenSet{Modality::audio, std::move(au_body), false});
    return s;
}

// ---- oracle -------------------------------------------------------------------

namespace {

struct PooledDraw {
    std::map<Modality, Eigen::MatrixXd> features; // n x dim, mean over non-class tokens
    Eigen::MatrixXi labels;                       // n x 2 observed labels
};

PooledDraw pooled_draw(const SynthConfig& cfg, const TensorD& dirs, std::uint64_t base, std::size_t n) {
    PooledDraw out;
    for (auto m : kSynthModalities) out.features[m] = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), cfg.dim);
    out.labels.resize(static_cast<Eigen::Index>(n), 2);
    for (std::size_t i = 0; i < n; ++i) {
        const auto s = generate_sample(cfg, dirs, base + i);
        const auto row = static_cast<Eigen::Index>(i);
        out.labels(row, 0) = s.record.label_request;
        out.labels(row, 1) = s.record.label_complaint;
        for (auto m : kSynthModalities) {
            const auto& ts = s.record.at(m);
            const std::size_t first = ts.has_class_token ? 1 : 0;
            for (std::size_t r = first; r < ts.count(); ++r)
                for (std::size_t c = 0; c < ts.dim(); ++c)
                    out.features[m](row, static_cast<Eigen::Index>(c)) += ts.tokens(r, c);
            out.features[m].row(row) /= static_cast<double>(ts.count() - first);
        }
    }
    return out;
}

Eigen::MatrixXd design(const PooledDraw& draw, const std::vector<Modality>& mods) {
    const Eigen::Index n = draw.labels.rows();
    Eigen::Index width = 1;
    for (auto m : mods) width += draw.features.at(m).cols();
    Eigen::MatrixXd x(n, width);
    Eigen::Index col = 0;
    for (auto m : mods) {
        const auto& f = draw.features.at(m);
        x.middleCols(col, f.cols()) = f;
        col += f.cols();
    }
    x.col(col).setOnes();
    return x;
}

double uar_of(const Eigen::VectorXd& scores, const Eigen::VectorXi& y) {
    std::size_t tp = 0, pos = 0, tn = 0, neg = 0;
    for (Eigen::Index i = 0; i < y.size(); ++i) {
        if (y(i)) {
            ++pos;
            tp += scores(i) > 0;
        } else {
            ++neg;
            tn += scores(i) <= 0;
        }
    }
    if (pos == 0 || neg == 0) return pos ? double(tp) / pos : double(tn) / neg;
    return 0.5 * (double(tp) / pos + double(tn) / neg);
}

double fit_and_score(const PooledDraw& fit, const PooledDraw& eval, const std::vector<Modality>& mods, Task task) {
    const auto col = static_cast<Eigen::Index>(task);
    const Eigen::MatrixXd x = design(fit, mods);
    const Eigen::VectorXi y = fit.labels.col(col);
    const double pos = std::max<double>(1.0, y.sum());
    const double neg = std::max<double>(1.0, static_cast<double>(y.size()) - y.sum());
    Eigen::VectorXd w(y.size()), t(y.size());
    for (Eigen::Index i = 0; i < y.size(); ++i) {
        w(i) = y(i) ? 0.5 / pos : 0.5 / neg;
        t(i) = y(i) ? 1.0 : -1.0;
    }
    // Class-balanced ridge; weights sum to 1, so scale lambda per sample.
    const double lambda = 1.0 / static_cast<double>(y.size());
    Eigen::MatrixXd gram = x.transpose() * w.asDiagonal() * x;
    gram.diagonal().array() += lambda;
    const Eigen::VectorXd beta = gram.ldlt().solve(x.transpose() * (w.asDiagonal() * t));
    return uar_of(design(eval, mods) * beta, eval.labels.col(col));
}

std::string combo_name(const std::vector<Modality>& mods) {
    return mods.size() == 1 ? std::string(modality_name(mods.front())) : "all";
}

} // namespace

double oracle_uar(const SynthConfig& cfg, const std::vector<Modality>& modalities, Task task, std::size_t n_mc) {
    cfg.validate();
    if (n_mc < 1000) throw ValidationError("oracle needs n_mc >= 1000");
    if (modalities.empty()) throw ValidationError("oracle needs at least one modality");
    const auto dirs = signal_directions(cfg.dim, cfg.seed);
    const auto fit = pooled_draw(cfg, dirs, kOracleFitBase, n_mc);
    const auto eval = pooled_draw(cfg, dirs, kOracleEvalBase, n_mc);
    auto mods = modalities;
    std::sort(mods.begin(), mods.end());
    return fit_and_score(fit, eval, mods, task);
}

double oracle_unimodal_uar(const SynthConfig& cfg, Modality modality, Task task, std::size_t n_mc) {
    return oracle_uar(cfg, {modality}, task, n_mc);
}

OracleReport oracle_report(const SynthConfig& cfg, std::size_t n_mc) {
    cfg.validate();
    if (n_mc < 1000) throw ValidationError("oracle needs n_mc >= 1000");
    const auto dirs = signal_directions(cfg.dim, cfg.seed);
    const auto fit = pooled_draw(cfg, dirs, kOracleFitBase, n_mc);
    const auto eval = pooled_draw(cfg, dirs, kOracleEvalBase, n_mc);
    OracleReport r;
    r.n_mc = n_mc;
    const std::vector<std::vector<Modality>> combos{
        {Modality::text_fr}, {Modality::text_en}, {Modality::audio},
        {Modality::text_fr, Modality::text_en, Modality::audio}};
    for (auto task : {Task::request, Task::complaint})
        for (const auto& mods : combos) r.uar[task][combo_name(mods)] = fit_and_score(fit, eval, mods, task);
    const auto& c = r.uar[Task::complaint];
    const double best_uni = std::max({c.at("text_fr"), c.at("text_en"), c.at("audio")});
    r.complaint_fusion_gap = c.at("all") - best_uni;
    r.fusion_gap_ok = r.complaint_fusion_gap >= kFusionGapTarget;
    return r;
}

nlohmann::json to_json(const OracleReport& r) {
    nlohmann::ordered_json j;
    j["n_mc"] = r.n_mc;
    for (const auto& [t, per] : r.uar) {
        nlohmann::ordered_json tj;
        for (const auto& key : {"text_fr", "text_en", "audio", "all"}) tj[key] = per.at(key);
        j["uar"][std::string(task_name(t))] = tj;
    }
    j["complaint_fusion_gap"] = r.complaint_fusion_gap;
    j["fusion_gap_target"] = kFusionGapTarget;
    j["fusion_gap_ok"] = r.fusion_gap_ok;
    return j;
}

// ---- datasets -------------------------------------------------------------------

namespace {

std::string sample_id(const char* split, std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%s_%06zu", split, i);
    return buf;
}

} // namespace

std::pair<std::vector<SampleRecord>, std::vector<SampleRecord>> generate_splits(const SynthConfig& cfg) {
    cfg.validate();
    const auto dirs = signal_directions(cfg.dim, cfg.seed);
    std::vector<SampleRecord> train, dev;
    train.reserve(cfg.n_train);
    dev.reserve(cfg.n_dev);
    for (std::size_t i = 0; i < cfg.n_train; ++i) {
        auto s = generate_sample(cfg, dirs, i);
        s.record.id = sample_id("train", i);
        train.push_back(std::move(s.record));
    }
    for (std::size_t i = 0; i < cfg.n_dev; ++i) {
        auto s = generate_sample(cfg, dirs, cfg.n_train + i);
        s.record.id = sample_id("dev", i);
        dev.push_back(std::move(s.record));
    }
    return {std::move(train), std::move(dev)};
}

GeneratedDataset generate_dataset(const SynthConfig& cfg, const fs::path& out, std::size_t n_mc) {
    cfg.validate();
    fs::create_directories(out / "embeddings");
    auto [train, dev] = generate_splits(cfg);

    std::vector<ManifestEntry> entries;
    auto emit = [&](const std::vector<SampleRecord>& recs, Split split) {
        for (const auto& r : recs) {
            const fs::path file = out / "embeddings" / (r.id + ".ccmt");
            write_embedding_file(file, r.token_sets);
            entries.push_back(ManifestEntry{r.id, file, r.label_request, r.label_complaint, split, 0});
        }
    };
    emit(train, Split::train);
    emit(dev, Split::dev);

    GeneratedDataset result;
    result.manifest = out / "manifest.jsonl";
    result.meta = out / "dataset_meta.json";
    write_manifest(result.manifest, entries);

    nlohmann::ordered_json meta;
    meta["config"] = to_json(cfg);
    meta["format_version"] = kEmbeddingFormatVersion;
    std::size_t pos_r = 0, pos_c = 0;
    for (const auto& r : dev) {
        pos_r += r.label_request;
        pos_c += r.label_complaint;
    }
    meta["dev_positive_rate"] = {{"request", double(pos_r) / dev.size()}, {"complaint", double(pos_c) / dev.size()}};
    if (n_mc > 0) {
        result.oracle = oracle_report(cfg, n_mc);
        meta["oracle"] = to_json(result.oracle);
    }
    std::ofstream(result.meta) << meta.dump(2) << '\n';
    return result;
}

} // namespace ccmt
