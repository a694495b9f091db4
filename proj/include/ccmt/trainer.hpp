#pragma once

#include "ccmt/fuser.hpp"
#include "ccmt/loss.hpp"
#include "ccmt/params.hpp"
#include "ccmt/tokenstore.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <vector>

namespace ccmt {

struct TrainConfig {
    double lr = 1e-4;
    std::size_t epochs = 30;
    std::size_t batch_size = 32;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    double weight_decay = 0.0;
    std::uint64_t seed = 0;
    std::size_t k = 100;
    TaskWeights loss_weights{1.0, 1.0};
    std::uint64_t eval_seed = 0x5EEDULL; // frozen uniformization for evaluation
    std::size_t threads = 0;             // 0 -> CCMT_THREADS or hardware concurrency

    void validate() const; // throws ValidationError
};

nlohmann::json to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j);

// Worker count from CCMT_THREADS, else hardware concurrency (at least 1).
std::size_t default_thread_count();

// ---- metrics ----------------------------------------------------------------

struct TaskMetrics {
    std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
    double recall_pos = 0.0;
    double recall_neg = 0.0;
    double uar = 0.0;
    // Ground truth holds a single class; uar is that class's recall.
    bool degenerate = false;
};

TaskMetrics task_metrics(std::size_t tp, std::size_t fp, std::size_t tn, std::size_t fn);

struct Metrics {
    std::array<TaskMetrics, 2> tasks; // request, complaint
    double mean_uar = 0.0;
    std::size_t count = 0;
};

Metrics compute_metrics(const std::vector<std::array<int, 2>>& predictions, const std::vector<Labels>& truth);
nlohmann::json to_json(const Metrics& m);

// ---- optimizer -----------------------------------------------------------

template <typename T>
struct AdamState {
    ParamStore<T> m;
    ParamStore<T> v;
    std::size_t step = 0;

    explicit AdamState(const ParamStore<T>& params) : m(params.zeros_like()), v(params.zeros_like()) {}
};

// Bias-corrected Adam; weight decay is decoupled (theta -= lr * wd * theta).
template <typename T>
void adam_step(ParamStore<T>& params, const ParamStore<T>& grads, AdamState<T>& state, const TrainConfig& cfg);

// ---- training -------------------------------------------------------------

struct EpochRecord {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double dev_uar_request = 0.0;
    double dev_uar_complaint = 0.0;
    double dev_uar_mean = 0.0;

    friend bool operator==(const EpochRecord&, const EpochRecord&) = default;
};

struct TrainResult {
    ParamStore<float> best_params;
    std::size_t best_epoch = 0;
    Metrics best_dev;
    std::vector<EpochRecord> history;
    std::size_t dim = 0;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

// Mini-batch Adam on the summed two-task loss (mean over the batch). Train
// tokens are re-uniformized every epoch; the dev split is scored after each
// epoch and the parameters with the best mean dev UAR are kept.
TrainResult train(const FuserSpec& spec, const std::vector<SampleRecord>& train_set,
                  const std::vector<SampleRecord>& dev_set, const TrainConfig& cfg, const EpochCallback& on_epoch = {});

// Scores every sample with frozen uniformization (sample i draws from
// derive_seed(eval_seed, i)); prediction is score > 0.
Metrics evaluate(const Fuser<float>& fuser, const ParamStore<float>& params, const std::vector<SampleRecord>& data,
                 std::uint64_t eval_seed, std::size_t threads = 0);

// ---- checkpoints and history ---------------------------------------------
//
// Checkpoint layout (little-endian):
//   "CKPT" | u16 version | u32 config_len | config JSON | u32 tensor_count
//   per tensor: u16 name_len | UTF-8 name | u8 rank | u32 dims[rank] |
//               float32 data

inline constexpr std::uint16_t kCheckpointVersion = 1;

struct Checkpoint {
    FuserSpec spec;
    std::size_t dim = 0;
    std::size_t k = 0;
    std::uint64_t eval_seed = 0;
    nlohmann::json extra = nlohmann::json::object(); // train config, best epoch, ...
    ParamStore<float> params;

    nlohmann::json config_json() const;
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Header-only view used by `inspect`.
struct CheckpointHeader {
    nlohmann::json config;
    std::vector<std::pair<std::string, Shape>> tensors;
};
CheckpointHeader read_checkpoint_header(const std::vector<std::uint8_t>& bytes);

nlohmann::json to_json(const EpochRecord& r);
void write_history(const std::filesystem::path& path, const std::vector<EpochRecord>& history);
std::vector<EpochRecord> read_history(const std::filesystem::path& path);

} // namespace ccmt
