#pragma once

#include <filesystem>
#include <limits>
#include <optional>

#include "suffixbench/diffcore/adam.hpp"
#include "suffixbench/models/model.hpp"
#include "suffixbench/preprocess.hpp"

namespace suffixbench::training {

using diffcore::NodePtr;

struct TrainConfig {
    int max_epochs = 400;
    int patience = 50;  // epochs without eval improvement before stopping
    double lr = 1e-4;
    double w_act = 1.0;
    double w_time = 1.0;
    long batch_size = 64;
    std::uint64_t seed = 0;
    double clip_norm = 5.0;

    void validate() const {
        if (patience > max_epochs) throw UsageError("patience must be <= max_epochs");
        if (w_act < 0 || w_time < 0 || (w_act == 0 && w_time == 0))
            throw UsageError("loss weights must be >= 0 and not both zero");
    }
};

struct AdversarialConfig {
    double tau_start = 1.0;
    double tau_end = 0.1;
    double anneal_fraction = 0.5;  // share of total steps spent annealing
    double open_loop_p = 0.9;      // per-sequence self-conditioning probability
    double lambda = 0.1;           // adversarial loss weight
};

struct EpochStats {
    int epoch = 0;
    double train_loss = 0;
    double eval_loss = 0;
    double act_loss = 0;   // train split, unweighted
    double time_loss = 0;  // train split, unweighted
    double seconds = 0;
};

struct TrainReport {
    std::vector<EpochStats> epochs;
    int epochs_run = 0;
    bool stopped_early = false;
    int best_epoch = 0;
    double best_eval = std::numeric_limits<double>::infinity();
    double wall_seconds = 0;
};

// Strict-improvement early stopping with a fixed patience window.
class EarlyStopper {
public:
    explicit EarlyStopper(int patience) : patience_(patience) {}

    // Returns true when training should stop after this observation.
    bool observe(double eval_loss) {
        ++epoch_;
        if (eval_loss < best_) {
            best_ = eval_loss;
            best_epoch_ = epoch_;
            since_best_ = 0;
        } else {
            ++since_best_;
        }
        return since_best_ >= patience_;
    }

    double best() const { return best_; }
    int best_epoch() const { return best_epoch_; }

private:
    int patience_;
    int epoch_ = 0;
    int since_best_ = 0;
    int best_epoch_ = 0;
    double best_ = std::numeric_limits<double>::infinity();
};

template <class S>
struct LossNodes {
    NodePtr<S> total;
    NodePtr<S> act;
    NodePtr<S> time;
    double token_count = 0;
};

// loss = w_act * cross_entropy + w_time * squared_error, masked to true targets.
template <class S>
LossNodes<S> assemble_loss(const models::Model<S>& model, const Batch& batch, double w_act,
                           double w_time, bool train, RngStream* rng) {
    NodePtr<S> latents;
    if (batch.layout == TargetLayout::PrefixToShiftedSuffix) {
        if (!batch.condition) throw Error("layout ② batch without a prefix side");
        latents = model.forward_encdec(*batch.condition, batch.main, train, rng);
    } else {
        latents = model.forward_tokens(batch.main, train, rng);
    }
    auto [logits, times] = model.readout(latents);
    LossNodes<S> out;
    out.act = diffcore::cross_entropy_masked(logits, batch.activity_targets, batch.loss_mask);
    out.time = diffcore::mse_masked(times, batch.time_targets, batch.loss_mask);
    out.total = diffcore::add(diffcore::affine(out.act, static_cast<S>(w_act)),
                              diffcore::affine(out.time, static_cast<S>(w_time)));
    for (float m : batch.loss_mask.v) out.token_count += m;
    return out;
}

struct AeGanCounters {
    long open_loop_sequences = 0;
    long total_sequences = 0;
};

// -(mean log D(real) + mean log(1 - D(fake))), on pre-sigmoid logits.
template <class S>
NodePtr<S> discriminator_loss(NodePtr<S> real_logit, NodePtr<S> fake_logit) {
    return diffcore::affine(
        diffcore::add(diffcore::mean_all(diffcore::logsigmoid(real_logit)),
                      diffcore::mean_all(diffcore::logsigmoid(diffcore::affine(fake_logit, S(-1))))),
        S(-1));
}

// 1 - mean log D(fake): the auxiliary adversarial term of the autoencoder.
template <class S>
NodePtr<S> generator_adversarial_loss(NodePtr<S> fake_logit) {
    return diffcore::affine(diffcore::mean_all(diffcore::logsigmoid(fake_logit)), S(-1), S(1));
}

TrainReport train(models::Model<float>& model, std::vector<Batch>& batches,
                  std::vector<Batch>& eval_batches, const TrainConfig& cfg,
                  const std::filesystem::path* log_path = nullptr);

TrainReport train_aegan(models::Model<float>& model, std::vector<Batch>& batches,
                        std::vector<Batch>& eval_batches, const TrainConfig& cfg,
                        const AdversarialConfig& adv,
                        const std::filesystem::path* log_path = nullptr,
                        AeGanCounters* counters = nullptr);

// Gumbel-softmax temperature at a given step of the linear anneal-then-hold schedule.
double tau_at_step(const AdversarialConfig& adv, long step, long total_steps);

}  // namespace suffixbench::training
