#pragma once

// Online co-training of the student and both teachers: per-sample forwards
// retained on one graph per accumulation window, one backward and one AdamW
// step per window.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mkd/data.hpp"
#include "mkd/encoders.hpp"
#include "mkd/losses.hpp"

namespace mkd {

struct TrainConfig {
    double lr = 2e-4;
    double weight_decay = 1e-5;
    double tau = 4.0;
    double alpha = 1.0 / 6.0;
    std::size_t window_b = 16;
    std::size_t epochs = 20;
    std::uint64_t seed = 0;
    Task task = Task::ER;
    bool enable_mkd = true;
    bool enable_skd = true;
    bool enable_clod = true;
    bool soft_kl_tau2 = true;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    // Model shape; d_in and K come from the data.
    std::size_t d = 32;
    double dropout = 0.25;
    bool detach_fusion = false;
    Activation fc_activation = Activation::ReLU;

    bool log_wall_time = false; // off keeps logs byte-reproducible

    /// Throws ConfigError.
    void validate() const;
    LossConfig loss_config() const;
    ModelConfig model_config(std::size_t d_in, std::size_t K) const;
};

std::string train_config_json(const TrainConfig& c);
/// Fields absent from the JSON keep their value in `base`. Accepts either a
/// bare object or one nested under "train".
TrainConfig train_config_from_json(const std::string& text, TrainConfig base = {});

struct OptimizerState {
    std::vector<std::vector<double>> m, v; // mirror parameter shapes
    std::uint64_t step = 0;
};

/// AdamW: theta -= lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * theta).
/// Moments are allocated on first use.
void optimizer_step(std::span<Tensor> params, OptimizerState& state, const TrainConfig& cfg);

/// Xavier-uniform affine and attention weights, N(0, 1/fan_in) for the SNN
/// layer, zero biases.
Model init_params(const ModelConfig& cfg, std::uint64_t seed);

std::vector<Tensor> model_parameters(const Model& m);

struct StepRecord {
    std::size_t step = 0; // 1-based optimizer step
    std::size_t epoch = 0;
    std::size_t window = 0;
    LossBreakdown loss;
    double wall_seconds = 0.0;
};

struct EpochSummary {
    std::size_t epoch = 0;
    std::size_t steps = 0;
    std::size_t skipped_singletons = 0; // trailing windows of size 1
    std::size_t excluded = 0;           // unlabelled or pathology-only samples
    double mean_total = 0.0;
    double mean_ce = 0.0;
    std::optional<double> val_auc;
};

struct TrainLog {
    std::vector<StepRecord> steps;
    std::vector<EpochSummary> epochs;

    /// One JSON object per line, 17 significant digits.
    std::string to_jsonl(bool wall_time = false) const;
};

/// Samples usable for co-training: labelled for the task and carrying a
/// genomic matrix.
std::vector<const Sample*> training_samples(const Dataset& data, Task task);

/// One pass in a shuffled order derived from (seed, epoch). Throws
/// DivergenceError on a non-finite loss, after logging the offending step.
EpochSummary train_epoch(Model& m, const Dataset& data, const TrainConfig& cfg,
                         OptimizerState& state, std::size_t epoch, TrainLog& log);

struct FitOptions {
    const Dataset* validation = nullptr;
    /// When set: best.mkdc, final.mkdc and train_log.jsonl land here.
    std::optional<std::string> out_dir;
};

struct FitResult {
    Model final_model;
    Model best_model; // best student validation AUC; final model without validation
    TrainLog log;
    std::optional<double> best_val_auc;
    std::optional<std::size_t> best_epoch;
};

FitResult fit(const Model& init, const Dataset& train, const TrainConfig& cfg,
              const FitOptions& opts = {});

} // namespace mkd
