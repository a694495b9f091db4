#include "ccmt/trainer.hpp"

#include "ccmt/errors.hpp"
#include "parallel.hpp"

#include <bit>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iterator>
#include <numeric>
#include <sstream>
#include <thread>

namespace ccmt {

namespace fs = std::filesystem;

void TrainConfig::validate() const {
    if (!(lr > 0)) throw ValidationError("lr must be positive");
    if (epochs < 1) throw ValidationError("epochs must be at least 1");
    if (batch_size < 1) throw ValidationError("batch_size must be at least 1");
    if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) throw ValidationError("betas must be in [0, 1)");
    if (!(adam_eps > 0)) throw ValidationError("adam_eps must be positive");
    if (weight_decay < 0) throw ValidationError("weight_decay must be non-negative");
    if (k < 1) throw ValidationError("k must be at least 1");
    if (loss_weights[0] < 0 || loss_weights[1] < 0) throw ValidationError("loss weights must be non-negative");
}

nlohmann::json to_json(const TrainConfig& cfg) {
    nlohmann::ordered_json j;
    j["lr"] = cfg.lr;
    j["epochs"] = cfg.epochs;
    j["batch_size"] = cfg.batch_size;
    j["betas"] = {cfg.beta1, cfg.beta2};
    j["adam_eps"] = cfg.adam_eps;
    j["weight_decay"] = cfg.weight_decay;
    j["seed"] = cfg.seed;
    j["k"] = cfg.k;
    j["loss_weights"] = {cfg.loss_weights[0], cfg.loss_weights[1]};
    j["eval_seed"] = cfg.eval_seed;
    return j;
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
    TrainConfig c;
    c.lr = j.value("lr", c.lr);
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    if (j.contains("betas")) {
        c.beta1 = j["betas"].at(0).get<double>();
        c.beta2 = j["betas"].at(1).get<double>();
    }
    c.adam_eps = j.value("adam_eps", c.adam_eps);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.seed = j.value("seed", c.seed);
    c.k = j.value("k", c.k);
    if (j.contains("loss_weights")) c.loss_weights = {j["loss_weights"].at(0).get<double>(), j["loss_weights"].at(1).get<double>()};
    c.eval_seed = j.value("eval_seed", c.eval_seed);
    c.validate();
    return c;
}

std::size_t default_thread_count() {
    if (const char* env = std::getenv("CCMT_THREADS")) {
        char* end = nullptr;
        const long v = std::strtol(env, &end, 10);
        if (end != env && v > 0) return static_cast<std::size_t>(v);
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

// ---- metrics --------------------------------------------------------------

TaskMetrics task_metrics(std::size_t tp, std::size_t fp, std::size_t tn, std::size_t fn) {
    TaskMetrics m{tp, fp, tn, fn};
    const std::size_t pos = tp + fn, neg = tn + fp;
    m.recall_pos = pos ? static_cast<double>(tp) / static_cast<double>(pos) : 0.0;
    m.recall_neg = neg ? static_cast<double>(tn) / static_cast<double>(neg) : 0.0;
    if (pos == 0 || neg == 0) {
        m.degenerate = true;
        m.uar = pos ? m.recall_pos : m.recall_neg;
    } else {
        m.uar = 0.5 * (m.recall_pos + m.recall_neg);
    }
    return m;
}

Metrics compute_metrics(const std::vector<std::array<int, 2>>& predictions, const std::vector<Labels>& truth) {
    if (predictions.size() != truth.size()) throw ContractError("predictions and labels differ in length");
    if (predictions.empty()) throw ContractError("cannot compute metrics on an empty set");
    Metrics out;
    out.count = predictions.size();
    for (std::size_t t = 0; t < 2; ++t) {
        std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
        for (std::size_t i = 0; i < predictions.size(); ++i) {
            const bool p = predictions[i][t] != 0, y = truth[i][t] != 0;
            if (p && y) ++tp;
            else if (p && !y) ++fp;
            else if (!p && y) ++fn;
            else ++tn;
        }
        out.tasks[t] = task_metrics(tp, fp, tn, fn);
    }
    out.mean_uar = 0.5 * (out.tasks[0].uar + out.tasks[1].uar);
    return out;
}

nlohmann::json to_json(const Metrics& m) {
    nlohmann::ordered_json j;
    const char* names[2] = {"request", "complaint"};
    for (std::size_t t = 0; t < 2; ++t) {
        const auto& tm = m.tasks[t];
        nlohmann::ordered_json tj;
        tj["tp"] = tm.tp;
        tj["fp"] = tm.fp;
        tj["tn"] = tm.tn;
        tj["fn"] = tm.fn;
        tj["recall_pos"] = tm.recall_pos;
        tj["recall_neg"] = tm.recall_neg;
        tj["uar"] = tm.uar;
        tj["degenerate"] = tm.degenerate;
        j[names[t]] = tj;
    }
    j["mean_uar"] = m.mean_uar;
    j["count"] = m.count;
    return j;
}

// ---- Adam -------------------------------------------------------------------

template <typename T>
void adam_step(ParamStore<T>& params, const ParamStore<T>& grads, AdamState<T>& state, const TrainConfig& cfg) {
    if (grads.size() != params.size() || state.m.size() != params.size())
        throw DimensionError("adam_step: parameter, gradient and state stores differ");
    ++state.step;
    const double b1 = cfg.beta1, b2 = cfg.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto theta = params.at(i).values();
        auto g = grads.at(i).values();
        auto m = state.m.at(i).values();
        auto v = state.v.at(i).values();
        for (std::size_t j = 0; j < theta.size(); ++j) {
            const double gj = g[j];
            const double mj = b1 * m[j] + (1.0 - b1) * gj;
            const double vj = b2 * v[j] + (1.0 - b2) * gj * gj;
            m[j] = static_cast<T>(mj);
            v[j] = static_cast<T>(vj);
            const double m_hat = mj / c1;
            const double v_hat = vj / c2;
            double t = theta[j];
            t -= cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.adam_eps);
            if (cfg.weight_decay > 0) t -= cfg.lr * cfg.weight_decay * static_cast<double>(theta[j]);
            theta[j] = static_cast<T>(t);
        }
    }
}

template void adam_step(ParamStore<float>&, const ParamStore<float>&, AdamState<float>&, const TrainConfig&);
template void adam_step(ParamStore<double>&, const ParamStore<double>&, AdamState<double>&, const TrainConfig&);

// ---- evaluation and training ----------------------------------------------

Metrics evaluate(const Fuser<float>& fuser, const ParamStore<float>& params, const std::vector<SampleRecord>& data,
                 std::uint64_t eval_seed, std::size_t threads) {
    if (data.empty()) throw ContractError("evaluate: empty data set");
    fuser.layout().check(params);
    if (threads == 0) threads = default_thread_count();
    std::vector<std::array<int, 2>> preds(data.size());
    std::vector<Labels> truth(data.size());
    detail::parallel_for(data.size(), threads, [&](std::size_t i) {
        Rng rng(derive_seed(eval_seed, i));
        auto prepared = prepare_sample(data[i], fuser.spec(), fuser.audio_class_slot(), fuser.k(), rng);
        Graph<float> g;
        ParamBinding<float> binding(g, params, nullptr);
        auto inputs = bind_inputs(g, prepared);
        const auto scores = fuser.decision_scores(binding, inputs);
        preds[i] = {scores[0] > 0 ? 1 : 0, scores[1] > 0 ? 1 : 0};
        truth[i] = prepared.labels;
    });
    return compute_metrics(preds, truth);
}

namespace {

std::string param_norms(const ParamStore<float>& params) {
    std::ostringstream out;
    for (std::size_t i = 0; i < params.size(); ++i) {
        double sq = 0;
        for (float v : params.at(i).values()) sq += static_cast<double>(v) * v;
        out << (i ? ", " : "") << params.name(i) << "=" << std::sqrt(sq);
    }
    return out.str();
}

} // namespace

TrainResult train(const FuserSpec& spec, const std::vector<SampleRecord>& train_set,
                  const std::vector<SampleRecord>& dev_set, const TrainConfig& cfg, const EpochCallback& on_epoch) {
    cfg.validate();
    if (train_set.empty() || dev_set.empty()) throw ValidationError("train and dev splits must be non-empty");
    const std::size_t dim = train_set.front().token_sets.begin()->second.dim();
    const auto fuser = make_fuser<float>(spec, dim, cfg.k);
    const std::size_t threads = cfg.threads ? cfg.threads : default_thread_count();

    Rng init_rng(derive_seed(cfg.seed, 1));
    ParamStore<float> params = fuser->layout().initialize(init_rng);
    AdamState<float> adam(params);

    TrainResult result;
    result.dim = dim;
    result.best_params = params;
    double best = -1.0;

    const std::size_t bs = cfg.batch_size;
    std::vector<ParamStore<float>> item_grads(std::min(bs, train_set.size()), params.zeros_like());
    std::vector<double> item_loss(item_grads.size());
    ParamStore<float> batch_grad = params.zeros_like();

    std::vector<std::size_t> order(train_set.size());
    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        Rng shuffle_rng(derive_seed(cfg.seed, 2, epoch));
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle_rng.below(i)]);
        const std::uint64_t epoch_seed = derive_seed(cfg.seed, 3, epoch);

        double epoch_loss = 0.0;
        for (std::size_t start = 0, batch = 0; start < order.size(); start += bs, ++batch) {
            const std::size_t n = std::min(bs, order.size() - start);
            detail::parallel_for(n, threads, [&](std::size_t j) {
                const std::size_t idx = order[start + j];
                Rng sample_rng(derive_seed(epoch_seed, idx));
                Rng dropout_rng(derive_seed(epoch_seed, idx, 1));
                auto prepared = prepare_sample(train_set[idx], fuser->spec(), fuser->audio_class_slot(), cfg.k,
                                               sample_rng);
                item_grads[j].set_zero();
                Graph<float> g;
                ParamBinding<float> binding(g, params, &item_grads[j]);
                auto inputs = bind_inputs(g, prepared);
                auto loss = fuser->loss(binding, inputs, prepared.labels, cfg.loss_weights, &dropout_rng);
                g.backward(loss);
                item_loss[j] = loss.value().item();
            });

            batch_grad.set_zero();
            double batch_loss = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                batch_grad.add_from(item_grads[j]);
                batch_loss += item_loss[j];
            }
            if (!std::isfinite(batch_loss))
                throw RuntimeFailure("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                                     std::to_string(batch) + "; parameter norms: " + param_norms(params));
            const float inv = 1.0f / static_cast<float>(n);
            for (std::size_t i = 0; i < batch_grad.size(); ++i)
                for (auto& v : batch_grad.at(i).values()) v *= inv;
            adam_step(params, batch_grad, adam, cfg);
            epoch_loss += batch_loss;
        }

        const Metrics dev = evaluate(*fuser, params, dev_set, cfg.eval_seed, threads);
        EpochRecord rec{epoch, epoch_loss / static_cast<double>(order.size()), dev.tasks[0].uar, dev.tasks[1].uar,
                        dev.mean_uar};
        result.history.push_back(rec);
        if (dev.mean_uar > best) {
            best = dev.mean_uar;
            result.best_params = params;
            result.best_epoch = epoch;
            result.best_dev = dev;
        }
        if (on_epoch) on_epoch(rec);
    }
    return result;
}

// ---- checkpoint -------------------------------------------------------------

namespace {

constexpr char kCkptMagic[4] = {'C', 'K', 'P', 'T'};

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
    out.push_back(static_cast<std::uint8_t>(v));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

struct Cursor {
    const std::vector<std::uint8_t>& in;
    std::size_t pos = 0;

    void need(std::size_t n, const char* what) const {
        if (in.size() - pos < n)
            throw FormatError(std::string("truncated checkpoint reading ") + what + " at byte offset " +
                              std::to_string(pos));
    }
    std::uint8_t u8(const char* what) {
        need(1, what);
        return in[pos++];
    }
    std::uint16_t u16(const char* what) {
        need(2, what);
        auto v = static_cast<std::uint16_t>(in[pos] | (in[pos + 1] << 8));
        pos += 2;
        return v;
    }
    std::uint32_t u32(const char* what) {
        need(4, what);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in[pos + i]) << (8 * i);
        pos += 4;
        return v;
    }
    std::string str(std::size_t n, const char* what) {
        need(n, what);
        std::string s(reinterpret_cast<const char*>(in.data() + pos), n);
        pos += n;
        return s;
    }
};

nlohmann::json read_config(Cursor& c) {
    if (c.str(4, "magic") != std::string(kCkptMagic, 4)) throw FormatError("bad magic: not a CKPT checkpoint");
    const auto version = c.u16("version");
    if (version != kCheckpointVersion) throw FormatError("unsupported checkpoint version " + std::to_string(version));
    const auto len = c.u32("config length");
    const auto text = c.str(len, "config");
    try {
        return nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw FormatError(std::string("checkpoint config is not valid JSON: ") + e.what());
    }
}

std::vector<std::uint8_t> read_bytes(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open '" + path.string() + "'");
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

} // namespace

nlohmann::json Checkpoint::config_json() const {
    nlohmann::ordered_json j;
    j["fuser"] = to_json(spec);
    j["dim"] = dim;
    j["k"] = k;
    j["eval_seed"] = eval_seed;
    j["extra"] = extra;
    return j;
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
    std::vector<std::uint8_t> out(kCkptMagic, kCkptMagic + 4);
    put_u16(out, kCheckpointVersion);
    const std::string config = ckpt.config_json().dump();
    put_u32(out, static_cast<std::uint32_t>(config.size()));
    out.insert(out.end(), config.begin(), config.end());
    put_u32(out, static_cast<std::uint32_t>(ckpt.params.size()));
    for (std::size_t i = 0; i < ckpt.params.size(); ++i) {
        const auto& name = ckpt.params.name(i);
        const auto& t = ckpt.params.at(i);
        put_u16(out, static_cast<std::uint16_t>(name.size()));
        out.insert(out.end(), name.begin(), name.end());
        out.push_back(static_cast<std::uint8_t>(t.rank()));
        for (auto d : t.shape()) put_u32(out, static_cast<std::uint32_t>(d));
        for (float v : t.values()) put_u32(out, std::bit_cast<std::uint32_t>(v));
    }
    return out;
}

CheckpointHeader read_checkpoint_header(const std::vector<std::uint8_t>& bytes) {
    Cursor c{bytes};
    CheckpointHeader h;
    h.config = read_config(c);
    const auto count = c.u32("tensor count");
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto name = c.str(c.u16("name length"), "tensor name");
        const auto rank = c.u8("rank");
        Shape shape;
        for (std::uint8_t r = 0; r < rank; ++r) shape.push_back(c.u32("dim"));
        const std::size_t n = shape_size(shape);
        c.need(4 * n, "tensor data");
        c.pos += 4 * n;
        h.tensors.emplace_back(name, shape);
    }
    if (c.pos != bytes.size()) throw FormatError("trailing bytes after offset " + std::to_string(c.pos));
    return h;
}

Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
    Cursor c{bytes};
    const auto config = read_config(c);
    Checkpoint ckpt;
    try {
        ckpt.spec = fuser_spec_from_json(config.at("fuser"));
        ckpt.dim = config.at("dim").get<std::size_t>();
        ckpt.k = config.at("k").get<std::size_t>();
        ckpt.eval_seed = config.at("eval_seed").get<std::uint64_t>();
        ckpt.extra = config.value("extra", nlohmann::json::object());
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("checkpoint config is incomplete: ") + e.what());
    }
    const auto count = c.u32("tensor count");
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto name = c.str(c.u16("name length"), "tensor name");
        const auto rank = c.u8("rank");
        Shape shape;
        for (std::uint8_t r = 0; r < rank; ++r) shape.push_back(c.u32("dim"));
        const std::size_t n = shape_size(shape);
        c.need(4 * n, "tensor data");
        std::vector<float> data(n);
        for (auto& v : data) v = std::bit_cast<float>(c.u32("tensor data"));
        ckpt.params.add(name, TensorF(shape, std::move(data)));
    }
    if (c.pos != bytes.size()) throw FormatError("trailing bytes after offset " + std::to_string(c.pos));
    return ckpt;
}

void save_checkpoint(const fs::path& path, const Checkpoint& ckpt) {
    const auto bytes = encode_checkpoint(ckpt);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

Checkpoint load_checkpoint(const fs::path& path) {
    return decode_checkpoint(read_bytes(path));
}

// ---- history ------------------------------------------------------------------

nlohmann::json to_json(const EpochRecord& r) {
    nlohmann::ordered_json j;
    j["epoch"] = r.epoch;
    j["train_loss"] = r.train_loss;
    j["dev_uar_request"] = r.dev_uar_request;
    j["dev_uar_complaint"] = r.dev_uar_complaint;
    j["dev_uar_mean"] = r.dev_uar_mean;
    return j;
}

void write_history(const fs::path& path, const std::vector<EpochRecord>& history) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
    for (const auto& r : history) out << to_json(r).dump() << '\n';
}

std::vector<EpochRecord> read_history(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open history '" + path.string() + "'");
    std::vector<EpochRecord> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto j = nlohmann::json::parse(line);
        out.push_back(EpochRecord{j.at("epoch").get<std::size_t>(), j.at("train_loss").get<double>(),
                                  j.at("dev_uar_request").get<double>(), j.at("dev_uar_complaint").get<double>(),
                                  j.at("dev_uar_mean").get<double>()});
    }
    return out;
}

} // namespace ccmt
