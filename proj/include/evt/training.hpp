#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "evt/autodiff.hpp"
#include "evt/backbone.hpp"
#include "evt/event_io.hpp"
#include "evt/representation.hpp"

namespace evt {

class Rng;

struct TrainConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
    double grad_clip_norm = 1.0;
    int batch_size = 64;
    int epochs = 30;
    int plateau_patience = 10;
    double lr_decay = 0.5;
    std::uint64_t seed = 0;
    // augmentation
    double token_drop_p = 0.1;
    double temporal_crop_frac = 0.25;  // max fraction of windows removed
    int spatial_shift_max = 1;          // grid cells
    bool repeat_augmented = true;
    // single-threaded batch processing
    bool deterministic = false;

    void validate() const;
};

struct OptimizerState {
    std::vector<Matrix> first_moment;
    std::vector<Matrix> second_moment;
    std::uint64_t step = 0;

    static OptimizerState for_params(std::span<Matrix* const> params);
};

// Pointers to every array of `params`, in ModelParams::visit order.
std::vector<Matrix*> param_list(ModelParams& params);

// -log_probs[target]. Throws std::out_of_range for a bad target.
double nll_loss(std::span<const double> log_probs, int target);
ad::Var nll_loss(ad::Var log_probs, int target);

// Scales grads in place so their global L2 norm is at most max_norm.
// Returns the norm before clipping.
double clip_grad_norm(std::span<Matrix> grads, double max_norm);

// Clips, then one decoupled-weight-decay Adam update with learning rate `lr`:
//   m = b1 m + (1-b1) g;  v = b2 v + (1-b2) g^2
//   p -= lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * p)
void optimizer_step(std::span<Matrix* const> params, std::span<Matrix> grads, OptimizerState& state,
                    const TrainConfig& cfg, double lr);

// Moves every token by (dr, dc) grid cells, dropping tokens pushed off the grid.
std::vector<WindowResult> spatial_shift(std::span<const WindowResult> windows, int dr, int dc,
                                        int grid_h, int grid_w);

// Temporal crop, spatial shift, token drop; never leaves a window empty.
std::vector<WindowResult> augment(std::span<const WindowResult> windows, const TrainConfig& cfg,
                                  int grid_h, int grid_w, Rng& rng);

struct Sample {
    std::vector<WindowResult> windows;
    int label = 0;
};

// Window decomposition of labeled streams. Streams without a label throw DataError.
std::vector<Sample> prepare_samples(std::span<const EventStream> streams, const ReprConfig& repr);

struct EpochMetrics {
    int epoch = 0;
    double lr = 0.0;
    double train_loss = 0.0;
    double train_accuracy = 0.0;
    std::optional<double> test_accuracy;
    double seconds = 0.0;
};

struct TrainResult {
    ModelParams params;
    std::vector<EpochMetrics> history;
    int lr_decays = 0;
};

using EpochCallback = std::function<void(const EpochMetrics&)>;

// Samples whose stream produced no window are never predicted correctly.
double evaluate(std::span<const Sample> samples, const ModelParams& params, const ModelConfig& cfg);

TrainResult train(std::span<const Sample> train_set, const ModelConfig& model_cfg,
                  const TrainConfig& cfg, std::span<const Sample> test_set = {},
                  const EpochCallback& on_epoch = {});

// Convenience over raw streams; throws DataError on an empty or single-class dataset.
TrainResult train(std::span<const EventStream> dataset, const ModelConfig& model_cfg,
                  const ReprConfig& repr, const TrainConfig& cfg);

}  // namespace evt
