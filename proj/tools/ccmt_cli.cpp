#include "ccmt/errors.hpp"
#include "ccmt/fuser.hpp"
#include "ccmt/gradcheck.hpp"
#include "ccmt/synthgen.hpp"
#include "ccmt/tokenstore.hpp"
#include "ccmt/trainer.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <chrono>
#include <fstream>
#include <iostream>
#include <iterator>

namespace fs = std::filesystem;
using nlohmann::ordered_json;
using namespace ccmt;

namespace {

void emit(const ordered_json& j) { std::cout << j.dump(2) << '\n'; }

std::vector<std::uint8_t> slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open '" + path.string() + "'");
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// ---- synth ---------------------------------------------------------------

struct SynthArgs {
    std::string out;
    SynthConfig cfg;
    std::size_t n_mc = 2000;
    bool zero_signal = false;
};

int run_synth(const SynthArgs& a) {
    SynthConfig cfg = a.cfg;
    if (a.zero_signal) cfg.set_zero_signal();
    std::cerr << "synth: seed " << cfg.seed << ", writing " << cfg.n_train << " train / " << cfg.n_dev
              << " dev samples to " << a.out << '\n';
    const auto ds = generate_dataset(cfg, a.out, a.n_mc);
    ordered_json j;
    j["config"] = to_json(cfg);
    j["manifest"] = ds.manifest.string();
    j["meta"] = ds.meta.string();
    if (a.n_mc > 0) {
        j["oracle"] = to_json(ds.oracle);
        if (!ds.oracle.fusion_gap_ok)
            std::cerr << "warning: pooled oracle beats the best unimodal oracle on complaint by only "
                      << ds.oracle.complaint_fusion_gap << " (target " << kFusionGapTarget << ")\n";
    }
    emit(j);
    return 0;
}

// ---- train ---------------------------------------------------------------

struct TrainArgs {
    std::string data;
    std::string fusion = "ccmt";
    std::string modalities = "text_fr,text_en,audio";
    std::string pooling = "class_token";
    std::string out;
    std::string history;
    TrainConfig cfg;
    FuserSpec spec;
};

FuserSpec resolve_spec(const TrainArgs& a) {
    FuserSpec spec = a.spec;
    const auto kind = parse_fusion_kind(a.fusion);
    if (!kind) throw ValidationError("unknown fusion kind '" + a.fusion + "'");
    spec.kind = *kind;
    spec.modalities = parse_modality_list(a.modalities);
    if (a.pooling == "mean")
        spec.pooling = Pooling::mean;
    else if (a.pooling == "class_token")
        spec.pooling = Pooling::class_token;
    else
        throw ValidationError("unknown pooling '" + a.pooling + "'");
    spec = spec.normalized();
    spec.validate();
    return spec;
}

int run_train(const TrainArgs& a) {
    const FuserSpec spec = resolve_spec(a);
    TrainConfig cfg = a.cfg;
    cfg.validate();

    const auto manifest = load_manifest(a.data);
    for (const auto& m : manifest.missing)
        std::cerr << "warning: manifest line " << m.line << ": missing embedding file " << m.path << '\n';
    const auto train_set = load_samples(manifest.split(Split::train));
    const auto dev_set = load_samples(manifest.split(Split::dev));

    ordered_json config;
    config["fuser"] = to_json(spec);
    config["train"] = to_json(cfg);
    std::cerr << "train: " << fusion_kind_name(spec.kind) << " on " << train_set.size() << " train / "
              << dev_set.size() << " dev samples, seed " << cfg.seed << '\n';

    const auto start = std::chrono::steady_clock::now();
    auto result = train(spec, train_set, dev_set, cfg, [](const EpochRecord& r) {
        std::cerr << "epoch " << r.epoch << "  loss " << r.train_loss << "  dev uar request " << r.dev_uar_request
                  << " complaint " << r.dev_uar_complaint << " mean " << r.dev_uar_mean << '\n';
    });
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

    Checkpoint ckpt;
    ckpt.spec = spec;
    ckpt.dim = result.dim;
    ckpt.k = cfg.k;
    ckpt.eval_seed = cfg.eval_seed;
    ckpt.extra = {{"train", to_json(cfg)}, {"best_epoch", result.best_epoch}, {"best_dev", to_json(result.best_dev)}};
    ckpt.params = std::move(result.best_params);
    save_checkpoint(a.out, ckpt);
    const fs::path history = a.history.empty() ? fs::path(a.out + ".history.jsonl") : fs::path(a.history);
    write_history(history, result.history);

    ordered_json j;
    j["config"] = config;
    j["checkpoint"] = a.out;
    j["history"] = history.string();
    j["best_epoch"] = result.best_epoch;
    j["best_dev"] = to_json(result.best_dev);
    j["seconds"] = seconds;
    emit(j);
    return 0;
}

// ---- eval ----------------------------------------------------------------

int run_eval(const std::string& ckpt_path, const std::string& data, const std::string& split_name_arg) {
    const auto split = parse_split(split_name_arg);
    if (!split) throw ValidationError("unknown split '" + split_name_arg + "'");
    const auto ckpt = load_checkpoint(ckpt_path);
    const auto manifest = load_manifest(data);
    for (const auto& m : manifest.missing)
        std::cerr << "warning: manifest line " << m.line << ": missing embedding file " << m.path << '\n';
    const auto samples = load_samples(manifest.split(*split));
    if (samples.empty()) throw ValidationError("split '" + split_name_arg + "' is empty");
    const auto fuser = make_fuser<float>(ckpt.spec, ckpt.dim, ckpt.k);
    std::cerr << "eval: " << fusion_kind_name(ckpt.spec.kind) << " on " << samples.size() << ' ' << split_name_arg
              << " samples, eval seed " << ckpt.eval_seed << '\n';
    const auto metrics = evaluate(*fuser, ckpt.params, samples, ckpt.eval_seed);
    for (std::size_t t = 0; t < 2; ++t)
        if (metrics.tasks[t].degenerate)
            std::cerr << "warning: " << (t ? "complaint" : "request")
                      << " ground truth has a single class; UAR is that class's recall\n";
    ordered_json j;
    j["config"] = ckpt.config_json();
    j["split"] = split_name_arg;
    j["metrics"] = to_json(metrics);
    emit(j);
    return 0;
}

// ---- gradcheck -----------------------------------------------------------

int run_gradcheck_cmd(const std::string& config, std::uint64_t seed, const std::string& precision) {
    GradCheckSetup setup;
    if (config == "tiny") {
        setup = tiny_gradcheck_setup(seed);
    } else {
        std::ifstream in(config);
        if (!in) throw ValidationError("cannot open gradcheck config '" + config + "'");
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(in);
        } catch (const nlohmann::json::parse_error& e) {
            throw ParseError("gradcheck config: " + std::string(e.what()));
        }
        setup = gradcheck_setup_from_json(j);
        setup.seed = seed;
    }
    if (precision == "extended") setup.precision = Precision::extended;
    std::cerr << "gradcheck: " << fusion_kind_name(setup.spec.kind) << " k=" << setup.k << " d=" << setup.dim
              << " seed " << seed << '\n';
    const auto start = std::chrono::steady_clock::now();
    const auto report = run_gradcheck(setup);
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    ordered_json j;
    j["config"] = to_json(setup);
    j["report"] = to_json(report);
    j["threshold"] = 1e-4;
    j["passed"] = report.max_rel_error < 1e-4;
    j["seconds"] = seconds;
    emit(j);
    if (report.max_rel_error >= 1e-4) {
        std::cerr << "gradcheck failed: " << report.max_rel_error << " at " << report.worst_param << '['
                  << report.worst_index << "]\n";
        return 2;
    }
    return 0;
}

// ---- inspect -------------------------------------------------------------

int run_inspect(const std::string& path) {
    const auto bytes = slurp(path);
    ordered_json j;
    j["file"] = path;
    j["bytes"] = bytes.size();
    const std::string magic(bytes.begin(), bytes.begin() + std::min<std::size_t>(4, bytes.size()));
    if (magic == "CCMT") {
        const auto sets = decode_embeddings(bytes);
        j["kind"] = "embeddings";
        j["version"] = kEmbeddingFormatVersion;
        ordered_json mods = ordered_json::array();
        for (const auto& [m, ts] : sets) {
            ts.validate();
            mods.push_back({{"modality", modality_name(m)},
                            {"has_class_token", ts.has_class_token},
                            {"count", ts.count()},
                            {"dim", ts.dim()}});
        }
        j["modalities"] = mods;
    } else if (magic == "CKPT") {
        const auto h = read_checkpoint_header(bytes);
        j["kind"] = "checkpoint";
        j["version"] = kCheckpointVersion;
        j["config"] = h.config;
        ordered_json tensors = ordered_json::array();
        std::size_t scalars = 0;
        for (const auto& [name, shape] : h.tensors) {
            tensors.push_back({{"name", name}, {"shape", shape}});
            scalars += shape_size(shape);
        }
        j["tensors"] = tensors;
        j["scalar_count"] = scalars;
    } else {
        throw FormatError("unknown magic at offset 0 in '" + path + "'");
    }
    emit(j);
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Cascaded cross-modal transformer toolkit"};
    app.require_subcommand(1);

    SynthArgs synth;
    auto* sc = app.add_subcommand("synth", "generate a synthetic three-modality dataset");
    sc->add_option("--out", synth.out, "output directory")->required();
    sc->add_option("--seed", synth.cfg.seed, "dataset seed");
    sc->add_option("--n-train", synth.cfg.n_train, "training samples");
    sc->add_option("--n-dev", synth.cfg.n_dev, "dev samples");
    sc->add_option("--dim", synth.cfg.dim, "token dimension");
    sc->add_option("--noise-sigma", synth.cfg.noise_sigma, "token noise std-dev");
    sc->add_option("--flip-prob", synth.cfg.label_flip_prob, "label flip probability");
    sc->add_option("--injection-prob", synth.cfg.injection_prob, "per-token signal injection probability");
    sc->add_option("--n-mc", synth.n_mc, "oracle sample count (0 skips the oracle)");
    sc->add_flag("--zero-signal", synth.zero_signal, "all amplitudes and label noise set to zero");

    TrainArgs tr;
    auto* tc = app.add_subcommand("train", "train a fuser");
    tc->add_option("--data", tr.data, "manifest (JSON lines)")->required();
    tc->add_option("--fusion", tr.fusion, "ccmt | transformer | mlp | voting | unimodal");
    tc->add_option("--modalities", tr.modalities, "comma-separated modalities");
    tc->add_option("--epochs", tr.cfg.epochs);
    tc->add_option("--lr", tr.cfg.lr);
    tc->add_option("--batch", tr.cfg.batch_size);
    tc->add_option("--k", tr.cfg.k, "tokens per modality");
    tc->add_option("--seed", tr.cfg.seed);
    tc->add_option("--weight-decay", tr.cfg.weight_decay);
    tc->add_option("--depth", tr.spec.depth);
    tc->add_option("--heads", tr.spec.heads);
    tc->add_option("--d-h", tr.spec.d_h, "head dimension (0: d / heads)");
    tc->add_option("--d-mlp", tr.spec.d_mlp, "head hidden size (0: 4d)");
    tc->add_option("--dropout", tr.spec.dropout);
    tc->add_flag("--standard-residual", tr.spec.standard_residual, "post-norm residual blocks");
    tc->add_option("--pooling", tr.pooling, "mlp fusion features: class_token | mean");
    tc->add_option("--out", tr.out, "checkpoint path")->required();
    tc->add_option("--history", tr.history, "history path (default: <out>.history.jsonl)");

    std::string ckpt, data, split = "dev";
    auto* ec = app.add_subcommand("eval", "evaluate a checkpoint");
    ec->add_option("--ckpt", ckpt)->required();
    ec->add_option("--data", data)->required();
    ec->add_option("--split", split)->check(CLI::IsMember({"train", "dev", "test"}));

    std::string gc_config = "tiny";
    std::uint64_t gc_seed = 0;
    auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient check");
    gc->add_option("--config", gc_config, "tiny or a JSON file");
    gc->add_option("--seed", gc_seed);
    std::string gc_precision = "double";
    gc->add_option("--precision", gc_precision, "double | extended (long double arithmetic)")
        ->check(CLI::IsMember({"double", "extended"}));

    std::string inspect_path;
    auto* ic = app.add_subcommand("inspect", "dump an embedding file or checkpoint header");
    ic->add_option("--file", inspect_path)->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 1;
    }

    try {
        if (*sc) return run_synth(synth);
        if (*tc) return run_train(tr);
        if (*ec) return run_eval(ckpt, data, split);
        if (*gc) return run_gradcheck_cmd(gc_config, gc_seed, gc_precision);
        if (*ic) return run_inspect(inspect_path);
    } catch (const ValidationError& e) {
        std::cerr << "validation error: " << e.what() << '\n';
        return 1;
    } catch (const ParseError& e) {
        std::cerr << "parse error: " << e.what() << '\n';
        return 1;
    } catch (const FormatError& e) {
        std::cerr << "format error: " << e.what() << '\n';
        return 1;
    } catch (const DimensionError& e) {
        std::cerr << "dimension error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 1;
}
