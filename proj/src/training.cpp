#include "evt/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <exception>
#include <limits>
#include <numeric>
#include <set>
#include <stdexcept>

#include <omp.h>

#include "evt/error.hpp"
#include "evt/rng.hpp"

namespace evt {

void TrainConfig::validate() const {
    if (!(lr > 0.0)) throw std::invalid_argument("lr must be > 0");
    if (!(token_drop_p >= 0.0 && token_drop_p < 1.0)) {
        throw std::invalid_argument("token_drop_p must be in [0, 1)");
    }
    if (!(temporal_crop_frac >= 0.0 && temporal_crop_frac < 1.0)) {
        throw std::invalid_argument("temporal_crop_frac must be in [0, 1)");
    }
    if (spatial_shift_max < 0) throw std::invalid_argument("spatial_shift_max must be >= 0");
    if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
    if (epochs < 0) throw std::invalid_argument("epochs must be >= 0");
    if (plateau_patience < 1) throw std::invalid_argument("plateau_patience must be >= 1");
    if (!(grad_clip_norm > 0.0)) throw std::invalid_argument("grad_clip_norm must be > 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) {
        throw std::invalid_argument("betas must be in [0, 1)");
    }
}

OptimizerState OptimizerState::for_params(std::span<Matrix* const> params) {
    OptimizerState s;
    for (const Matrix* p : params) {
        s.first_moment.emplace_back(p->rows(), p->cols());
        s.second_moment.emplace_back(p->rows(), p->cols());
    }
    return s;
}

std::vector<Matrix*> param_list(ModelParams& params) {
    std::vector<Matrix*> out;
    params.visit([&](const std::string&, Matrix& m) { out.push_back(&m); });
    return out;
}

double nll_loss(std::span<const double> log_probs, int target) {
    if (target < 0 || static_cast<std::size_t>(target) >= log_probs.size()) {
        throw std::out_of_range("nll_loss: target " + std::to_string(target) + " out of range");
    }
    return -log_probs[target];
}

ad::Var nll_loss(ad::Var log_probs, int target) {
    if (target < 0 || static_cast<std::size_t>(target) >= log_probs.cols()) {
        throw std::out_of_range("nll_loss: target " + std::to_string(target) + " out of range");
    }
    return ad::scale(ad::pick(log_probs, 0, static_cast<std::size_t>(target)), -1.0);
}

double clip_grad_norm(std::span<Matrix> grads, double max_norm) {
    double sq = 0.0;
    for (const Matrix& g : grads) {
        for (double v : g.data()) sq += v * v;
    }
    const double norm = std::sqrt(sq);
    if (norm > max_norm) {
        const double s = max_norm / norm;
        for (Matrix& g : grads) g *= s;
    }
    return norm;
}

void optimizer_step(std::span<Matrix* const> params, std::span<Matrix> grads, OptimizerState& state,
                    const TrainConfig& cfg, double lr) {
    if (params.size() != grads.size() || params.size() != state.first_moment.size()) {
        throw std::invalid_argument("optimizer_step: parameter/gradient/state counts differ");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (!params[i]->same_shape(grads[i]) || !params[i]->same_shape(state.first_moment[i])) {
            throw std::invalid_argument("optimizer_step: shape mismatch at parameter " + std::to_string(i));
        }
    }
    clip_grad_norm(grads, cfg.grad_clip_norm);
    ++state.step;
    const double t = static_cast<double>(state.step);
    const double c1 = 1.0 - std::pow(cfg.beta1, t);
    const double c2 = 1.0 - std::pow(cfg.beta2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto p = params[i]->data();
        const auto g = grads[i].data();
        auto m = state.first_moment[i].data();
        auto v = state.second_moment[i].data();
        for (std::size_t j = 0; j < p.size(); ++j) {
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
            const double m_hat = m[j] / c1;
            const double v_hat = v[j] / c2;
            p[j] -= lr * (m_hat / (std::sqrt(v_hat) + cfg.eps) + cfg.weight_decay * p[j]);
        }
    }
}

std::vector<WindowResult> spatial_shift(std::span<const WindowResult> windows, int dr, int dc,
                                        int grid_h, int grid_w) {
    std::vector<WindowResult> out;
    out.reserve(windows.size());
    for (const WindowResult& w : windows) {
        WindowResult shifted = w;
        shifted.tokens.clear();
        for (const PatchToken& t : w.tokens) {
            const int r = t.grid_row + dr;
            const int c = t.grid_col + dc;
            if (r < 0 || r >= grid_h || c < 0 || c >= grid_w) continue;
            PatchToken moved = t;
            moved.grid_row = r;
            moved.grid_col = c;
            shifted.tokens.push_back(std::move(moved));
        }
        out.push_back(std::move(shifted));
    }
    return out;
}

std::vector<WindowResult> augment(std::span<const WindowResult> windows, const TrainConfig& cfg,
                                  int grid_h, int grid_w, Rng& rng) {
    std::vector<WindowResult> out(windows.begin(), windows.end());

    if (cfg.temporal_crop_frac > 0.0 && out.size() > 1) {
        const double keep = rng.uniform(1.0 - cfg.temporal_crop_frac, 1.0);
        const std::size_t n = out.size();
        const std::size_t len =
            std::clamp<std::size_t>(static_cast<std::size_t>(std::ceil(keep * n)), 1, n);
        const std::size_t start = rng.below(n - len + 1);
        out = std::vector<WindowResult>(out.begin() + static_cast<std::ptrdiff_t>(start),
                                        out.begin() + static_cast<std::ptrdiff_t>(start + len));
    }

    if (cfg.spatial_shift_max > 0) {
        const auto span = static_cast<std::uint64_t>(2 * cfg.spatial_shift_max + 1);
        const int dr = static_cast<int>(rng.below(span)) - cfg.spatial_shift_max;
        const int dc = static_cast<int>(rng.below(span)) - cfg.spatial_shift_max;
        auto shifted = spatial_shift(out, dr, dc, grid_h, grid_w);
        std::erase_if(shifted, [](const WindowResult& w) { return w.tokens.empty(); });
        if (!shifted.empty()) out = std::move(shifted);
    }

    if (cfg.token_drop_p > 0.0) {
        for (WindowResult& w : out) {
            if (w.tokens.empty()) continue;
            std::vector<PatchToken> kept;
            kept.reserve(w.tokens.size());
            for (const PatchToken& t : w.tokens) {
                if (!rng.bernoulli(cfg.token_drop_p)) kept.push_back(t);
            }
            if (kept.empty()) kept.push_back(w.tokens[rng.below(w.tokens.size())]);
            w.tokens = std::move(kept);
        }
    }
    return out;
}

std::vector<Sample> prepare_samples(std::span<const EventStream> streams, const ReprConfig& repr) {
    std::vector<Sample> out;
    out.reserve(streams.size());
    for (std::size_t i = 0; i < streams.size(); ++i) {
        if (!streams[i].label()) {
            throw DataError("stream " + std::to_string(i) + " has no label");
        }
        out.push_back(Sample{collect_windows(streams[i], repr), *streams[i].label()});
    }
    return out;
}

double evaluate(std::span<const Sample> samples, const ModelParams& params, const ModelConfig& cfg) {
    if (samples.empty()) return 0.0;
    std::size_t correct = 0;
    for (const Sample& s : samples) {
        if (s.windows.empty()) continue;
        if (classify_windows(s.windows, params, cfg).predicted == s.label) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(samples.size());
}

namespace {

struct EntryResult {
    std::vector<Matrix> grads;
    double loss = 0.0;
    bool correct = false;
};

EntryResult run_entry(const Sample& sample, const ModelParams& params, const ModelConfig& model_cfg,
                      const TrainConfig& cfg, std::uint64_t entry_seed) {
    Rng rng(entry_seed);
    const auto windows = augment(sample.windows, cfg, model_cfg.grid_h, model_cfg.grid_w, rng);
    ad::Tape tape;
    const ParamVars w = bind_params(tape, params);
    ForwardOptions opts;
    opts.training = true;
    opts.rng = &rng;
    const ad::Var lp = stream_log_probs(windows, w, model_cfg, opts);
    const ad::Var loss = nll_loss(lp, sample.label);
    tape.backward(loss);

    EntryResult r;
    r.loss = loss.value()[0];
    r.correct = argmax(lp.value().data()) == sample.label;
    w.visit([&](const std::string&, const ad::Var& v) { r.grads.push_back(tape.grad(v)); });
    return r;
}

}  // namespace

TrainResult train(std::span<const Sample> train_set, const ModelConfig& model_cfg,
                  const TrainConfig& cfg, std::span<const Sample> test_set,
                  const EpochCallback& on_epoch) {
    model_cfg.validate();
    cfg.validate();
    std::vector<std::size_t> usable;
    std::set<int> classes;
    for (std::size_t i = 0; i < train_set.size(); ++i) {
        const int label = train_set[i].label;
        if (label < 0 || label >= model_cfg.num_classes) {
            throw DataError("label " + std::to_string(label) + " outside [0, num_classes)");
        }
        if (train_set[i].windows.empty()) continue;
        usable.push_back(i);
        classes.insert(label);
    }
    if (usable.empty()) throw DataError("training set is empty");
    if (classes.size() < 2) throw DataError("training set needs at least two classes");

    TrainResult result;
    result.params = init_params(model_cfg, Rng::mix(cfg.seed, 1));
    const std::vector<Matrix*> plist = param_list(result.params);
    OptimizerState state = OptimizerState::for_params(plist);
    Rng shuffle_rng(Rng::mix(cfg.seed, 2));

    const int copies = cfg.repeat_augmented ? 2 : 1;
    const int threads = cfg.deterministic ? 1 : std::max(1, omp_get_max_threads());
    double lr = cfg.lr;
    double best_loss = std::numeric_limits<double>::infinity();
    int epochs_without_improvement = 0;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto started = std::chrono::steady_clock::now();
        std::vector<std::size_t> order = usable;
        for (std::size_t i = order.size(); i > 1; --i) {
            std::swap(order[i - 1], order[shuffle_rng.below(i)]);
        }

        double loss_sum = 0.0;
        std::size_t correct = 0;
        std::size_t entries_seen = 0;
        for (std::size_t b0 = 0; b0 < order.size(); b0 += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t b1 = std::min(order.size(), b0 + static_cast<std::size_t>(cfg.batch_size));
            struct Entry {
                std::size_t sample;
                std::uint64_t seed;
            };
            std::vector<Entry> entries;
            for (std::size_t i = b0; i < b1; ++i) {
                for (int c = 0; c < copies; ++c) {
                    const std::uint64_t seed = Rng::mix(
                        Rng::mix(Rng::mix(cfg.seed, 1000 + static_cast<std::uint64_t>(epoch)), order[i]),
                        static_cast<std::uint64_t>(c));
                    entries.push_back({order[i], seed});
                }
            }

            std::vector<Matrix> batch_grads;
            for (const Matrix* p : plist) batch_grads.emplace_back(p->rows(), p->cols());

            // Entries run in chunks; each chunk is reduced in entry order, so
            // the sum does not depend on the thread count.
            const std::size_t chunk = static_cast<std::size_t>(threads);
            for (std::size_t c0 = 0; c0 < entries.size(); c0 += chunk) {
                const std::size_t c1 = std::min(entries.size(), c0 + chunk);
                std::vector<EntryResult> results(c1 - c0);
                std::exception_ptr error;
                const auto count = static_cast<std::ptrdiff_t>(c1 - c0);
#pragma omp parallel for num_threads(threads) schedule(static, 1) if (threads > 1)
                for (std::ptrdiff_t k = 0; k < count; ++k) {
                    try {
                        const Entry& e = entries[c0 + static_cast<std::size_t>(k)];
                        results[k] = run_entry(train_set[e.sample], result.params, model_cfg, cfg, e.seed);
                    } catch (...) {
#pragma omp critical
                        error = std::current_exception();
                    }
                }
                if (error) std::rethrow_exception(error);
                for (const EntryResult& r : results) {
                    for (std::size_t i = 0; i < batch_grads.size(); ++i) batch_grads[i] += r.grads[i];
                    loss_sum += r.loss;
                    correct += r.correct ? 1 : 0;
                    ++entries_seen;
                }
            }
            const double inv = 1.0 / static_cast<double>(entries.size());
            for (Matrix& g : batch_grads) g *= inv;
            optimizer_step(plist, batch_grads, state, cfg, lr);
        }

        EpochMetrics m;
        m.epoch = epoch;
        m.lr = lr;
        m.train_loss = loss_sum / static_cast<double>(entries_seen);
        m.train_accuracy = static_cast<double>(correct) / static_cast<double>(entries_seen);
        if (!test_set.empty()) m.test_accuracy = evaluate(test_set, result.params, model_cfg);
        m.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
        result.history.push_back(m);
        if (on_epoch) on_epoch(m);

        if (m.train_loss < best_loss) {
            best_loss = m.train_loss;
            epochs_without_improvement = 0;
        } else if (++epochs_without_improvement >= cfg.plateau_patience) {
            lr *= cfg.lr_decay;
            ++result.lr_decays;
            epochs_without_improvement = 0;
        }
    }
    return result;
}

TrainResult train(std::span<const EventStream> dataset, const ModelConfig& model_cfg,
                  const ReprConfig& repr, const TrainConfig& cfg) {
    if (dataset.empty()) throw DataError("training set is empty");
    const auto samples = prepare_samples(dataset, repr);
    return train(samples, model_cfg, cfg);
}

}  // namespace evt
