#include "suffixbench/training.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>

#include "suffixbench/diffcore/checkpoint.hpp"

namespace suffixbench::training {

namespace {

using models::Arch;
using models::Model;
using ModelF = Model<float>;
using diffcore::NodePtr;

double now_seconds() {
    return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch()).count();
}

struct EpochAccumulator {
    double total_w = 0, act_w = 0, time_w = 0, tokens = 0;

    void add(double act, double time, double count) {
        act_w += act * count;
        time_w += time * count;
        tokens += count;
    }
    double act_mean() const { return tokens > 0 ? act_w / tokens : 0; }
    double time_mean() const { return tokens > 0 ? time_w / tokens : 0; }
};

void append_log_line(const std::filesystem::path* path, const EpochStats& s) {
    if (!path) return;
    std::ofstream out(*path, std::ios::app);
    out << s.epoch << '\t' << fmt_double(s.train_loss, 9) << '\t' << fmt_double(s.eval_loss, 9) << '\t'
        << fmt_double(s.act_loss, 9) << '\t' << fmt_double(s.time_loss, 9) << '\t'
        << fmt_double(s.seconds, 3) << '\n';
}

double eval_pass(const ModelF& model, std::vector<Batch>& eval_batches, const TrainConfig& cfg) {
    diffcore::NoGradGuard forward_only;
    EpochAccumulator acc;
    for (const auto& batch : eval_batches) {
        auto loss = assemble_loss<float>(model, batch, cfg.w_act, cfg.w_time, false, nullptr);
        acc.add(loss.act->value.data[0], loss.time->value.data[0], loss.token_count);
    }
    return cfg.w_act * acc.act_mean() + cfg.w_time * acc.time_mean();
}

// Eval-side corruption is drawn once so the early-stopping signal is stable
// across epochs.
void fix_eval_masks(std::vector<Batch>& eval_batches, std::uint64_t seed) {
    RngStream rng = substream(seed, "bert_eval_mask");
    for (auto& b : eval_batches)
        if (b.layout == TargetLayout::MaskedReconstruction) apply_masking(b, rng);
}

}  // namespace

double tau_at_step(const AdversarialConfig& adv, long step, long total_steps) {
    long anneal_steps = static_cast<long>(adv.anneal_fraction * static_cast<double>(total_steps));
    if (anneal_steps <= 0) return adv.tau_end;
    if (step >= anneal_steps) return adv.tau_end;
    double t = static_cast<double>(step) / static_cast<double>(anneal_steps);
    return adv.tau_start + t * (adv.tau_end - adv.tau_start);
}

TrainReport train(ModelF& model, std::vector<Batch>& batches, std::vector<Batch>& eval_batches,
                  const TrainConfig& cfg, const std::filesystem::path* log_path) {
    cfg.validate();
    if (batches.empty()) throw DataError("no training batches");
    if (eval_batches.empty()) throw DataError("no evaluation batches");

    RngStream model_rng = substream(cfg.seed, "model");
    RngStream order_rng = substream(cfg.seed, "batch_order");
    RngStream mask_rng = substream(cfg.seed, "bert_mask");
    fix_eval_masks(eval_batches, cfg.seed);

    auto& params = model.params();
    diffcore::AdamState<float> opt;
    opt.lr = cfg.lr;
    opt.init(params);

    TrainReport report;
    EarlyStopper stopper(cfg.patience);
    std::vector<diffcore::ParamRecord> best;
    double wall_start = now_seconds();

    std::vector<size_t> order(batches.size());
    std::iota(order.begin(), order.end(), size_t{0});

    for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        double epoch_start = now_seconds();
        order_rng.shuffle(order);
        EpochAccumulator acc;
        for (size_t oi = 0; oi < order.size(); ++oi) {
            Batch& batch = batches[order[oi]];
            if (batch.layout == TargetLayout::MaskedReconstruction) apply_masking(batch, mask_rng);
            auto loss = assemble_loss<float>(model, batch, cfg.w_act, cfg.w_time, true, &model_rng);
            if (!std::isfinite(loss.total->value.data[0]))
                throw Error("NaN loss at epoch " + std::to_string(epoch) + " batch " + std::to_string(oi));
            diffcore::backward(loss.total);
            diffcore::clip_global_norm(params, cfg.clip_norm);
            diffcore::adam_step(params, opt);
            acc.add(loss.act->value.data[0], loss.time->value.data[0], loss.token_count);
        }

        EpochStats stats;
        stats.epoch = epoch;
        stats.act_loss = acc.act_mean();
        stats.time_loss = acc.time_mean();
        stats.train_loss = cfg.w_act * stats.act_loss + cfg.w_time * stats.time_loss;
        stats.eval_loss = eval_pass(model, eval_batches, cfg);
        stats.seconds = now_seconds() - epoch_start;
        report.epochs.push_back(stats);
        append_log_line(log_path, stats);

        bool improved = stats.eval_loss < stopper.best();
        bool stop = stopper.observe(stats.eval_loss);
        if (improved) best = diffcore::snapshot_params(params);
        report.epochs_run = epoch;
        if (stop) {
            report.stopped_early = true;
            break;
        }
    }

    report.best_epoch = stopper.best_epoch();
    report.best_eval = stopper.best();
    if (!best.empty()) diffcore::restore_params(params, best);
    report.wall_seconds = now_seconds() - wall_start;
    return report;
}

// ---------------------------------------------------------------------------
// AE-GAN

namespace {

// Stepwise decode of the [SOS]-started suffix. Rows flagged in `open_rows`
// consume the model's own Gumbel-softmax samples (and predicted times)
// instead of the teacher-forced inputs.
struct SampledDecode {
    NodePtr<float> logits;  // [B,m,V]
    NodePtr<float> times;   // [B,m]
    std::vector<std::pair<NodePtr<float>, NodePtr<float>>> sampled_steps;  // (simplex, time)
    double token_count = 0;
};

SampledDecode decode_with_sampling(const ModelF& model, const Batch& batch,
                                   const std::vector<char>& open_rows, double tau,
                                   RngStream* dropout_rng, RngStream& gumbel_rng, bool train) {
    if (!batch.condition) throw Error("layout ② batch without a prefix side");
    const TokenBlock& sufin = batch.main;
    const TokenBlock& prefix = *batch.condition;
    long b = sufin.rows(), m = sufin.cols();

    auto state = model.encode_prefix_lstm(prefix, train, dropout_rng);

    std::vector<float> open_sel(static_cast<size_t>(b), 0.f), teacher_sel(static_cast<size_t>(b), 1.f);
    bool any_open = false;
    for (long r = 0; r < b; ++r)
        if (open_rows[static_cast<size_t>(r)]) {
            open_sel[static_cast<size_t>(r)] = 1.f;
            teacher_sel[static_cast<size_t>(r)] = 0.f;
            any_open = true;
        }

    SampledDecode out;
    std::vector<NodePtr<float>> logit_steps, time_steps;
    NodePtr<float> prev_sample, prev_time;
    for (long t = 0; t < m; ++t) {
        IMat acts(b, 1);
        FMat times(b, 1);
        for (long r = 0; r < b; ++r) {
            acts.at(r, 0) = sufin.acts.at(r, t);
            times.at(r, 0) = sufin.times.at(r, t);
        }
        auto teacher_z = diffcore::reshape(model.emb.embed(acts, times), {b, model.config().d_latent});
        NodePtr<float> z;
        if (t == 0 || !any_open) {
            z = teacher_z;  // position 0 is always the [SOS] start
        } else {
            auto open_z = model.emb.embed_soft(prev_sample, prev_time);
            z = diffcore::add(diffcore::mul_rows(open_z, open_sel),
                              diffcore::mul_rows(teacher_z, teacher_sel));
        }
        auto latent = model.dec_lstm.step(z, state, train, dropout_rng);
        auto step_logits = model.heads.activity.apply(latent);                       // [B,V]
        auto step_time = diffcore::reshape(model.heads.time.apply(latent), {b});     // [B]
        logit_steps.push_back(step_logits);
        time_steps.push_back(step_time);

        auto sample = diffcore::gumbel_softmax_sample(step_logits, tau, gumbel_rng);
        out.sampled_steps.emplace_back(sample, step_time);
        prev_sample = sample;
        prev_time = step_time;
    }
    out.logits = diffcore::stack_positions(logit_steps);  // [B,m,V]
    std::vector<NodePtr<float>> time_cols;
    for (auto& ts : time_steps) time_cols.push_back(diffcore::reshape(ts, {b, 1}));
    out.times = diffcore::reshape(diffcore::stack_positions(time_cols), {b, m});
    for (float mv : batch.loss_mask.v) out.token_count += mv;
    return out;
}

std::vector<std::pair<NodePtr<float>, NodePtr<float>>> real_suffix_steps(const Batch& batch, long vocab) {
    long b = batch.activity_targets.rows, m = batch.activity_targets.cols;
    std::vector<std::pair<NodePtr<float>, NodePtr<float>>> steps;
    for (long t = 0; t < m; ++t) {
        diffcore::Tensor<float> oh({b, vocab});
        diffcore::Tensor<float> tm({b});
        for (long r = 0; r < b; ++r) {
            oh.data[static_cast<size_t>(r * vocab + batch.activity_targets.at(r, t))] = 1.f;
            tm.data[static_cast<size_t>(r)] = batch.time_targets.at(r, t);
        }
        steps.emplace_back(diffcore::leaf(std::move(oh)), diffcore::leaf(std::move(tm)));
    }
    return steps;
}

}  // namespace

TrainReport train_aegan(ModelF& model, std::vector<Batch>& batches, std::vector<Batch>& eval_batches,
                        const TrainConfig& cfg, const AdversarialConfig& adv,
                        const std::filesystem::path* log_path, AeGanCounters* counters) {
    cfg.validate();
    if (model.config().arch != Arch::AeGan) throw UsageError("train_aegan requires the AE-GAN architecture");
    if (batches.empty()) throw DataError("no training batches");
    if (eval_batches.empty()) throw DataError("no evaluation batches");

    RngStream model_rng = substream(cfg.seed, "model");
    RngStream order_rng = substream(cfg.seed, "batch_order");
    RngStream gumbel_rng = substream(cfg.seed, "gumbel");
    RngStream open_rng = substream(cfg.seed, "openloop");

    auto& params = model.params();
    auto gen_params = model.generator_params();
    auto disc_params = model.discriminator_params();
    diffcore::AdamState<float> gen_opt, disc_opt;
    gen_opt.lr = cfg.lr;
    disc_opt.lr = cfg.lr;
    gen_opt.init(gen_params);
    disc_opt.init(disc_params);

    const long total_steps = static_cast<long>(cfg.max_epochs) * static_cast<long>(batches.size());
    long step = 0;
    const long vocab = model.config().vocab_size;
    const bool adversarial_on = adv.lambda > 0;

    TrainReport report;
    EarlyStopper stopper(cfg.patience);
    std::vector<diffcore::ParamRecord> best;
    double wall_start = now_seconds();
    fix_eval_masks(eval_batches, cfg.seed);

    std::vector<size_t> order(batches.size());
    std::iota(order.begin(), order.end(), size_t{0});

    for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        double epoch_start = now_seconds();
        order_rng.shuffle(order);
        EpochAccumulator acc;
        for (size_t oi = 0; oi < order.size(); ++oi) {
            Batch& batch = batches[order[oi]];
            long b = batch.main.rows();
            double tau = tau_at_step(adv, step, total_steps);
            ++step;

            // per-sequence self-conditioning decisions for this batch visit
            std::vector<char> open_rows(static_cast<size_t>(b), 0);
            bool any_open = false;
            if (adv.open_loop_p > 0) {
                for (long r = 0; r < b; ++r) {
                    bool open = open_rng.bernoulli(adv.open_loop_p);
                    open_rows[static_cast<size_t>(r)] = open ? 1 : 0;
                    any_open = any_open || open;
                }
            }
            if (counters) {
                counters->total_sequences += b;
                for (char c : open_rows) counters->open_loop_sequences += c;
            }

            NodePtr<float> act_loss, time_loss, g_loss;
            double token_count = 0;
            if (!any_open && !adversarial_on) {
                auto loss = assemble_loss<float>(model, batch, cfg.w_act, cfg.w_time, true, &model_rng);
                act_loss = loss.act;
                time_loss = loss.time;
                g_loss = loss.total;
                token_count = loss.token_count;
            } else {
                auto dec = decode_with_sampling(model, batch, open_rows, tau, &model_rng, gumbel_rng, true);

                if (adversarial_on) {
                    // (a) discriminator: real suffixes toward 1, samples toward 0.
                    // The samples enter as detached values; the D step never
                    // applies gradients to the generator.
                    std::vector<std::pair<NodePtr<float>, NodePtr<float>>> detached;
                    detached.reserve(dec.sampled_steps.size());
                    for (const auto& [simplex, times] : dec.sampled_steps)
                        detached.emplace_back(diffcore::leaf(simplex->value), diffcore::leaf(times->value));
                    auto fake_logit = model.disc.forward_logit(detached);
                    auto real_logit = model.disc.forward_logit(real_suffix_steps(batch, vocab));
                    auto d_loss = discriminator_loss(real_logit, fake_logit);
                    if (!std::isfinite(d_loss->value.data[0]))
                        throw Error("NaN discriminator loss at epoch " + std::to_string(epoch));
                    diffcore::backward(d_loss);
                    diffcore::clip_global_norm(disc_params, cfg.clip_norm);
                    diffcore::adam_step(disc_params, disc_opt);
                }

                // (b) generator/autoencoder step against the refreshed discriminator
                act_loss = diffcore::cross_entropy_masked(dec.logits, batch.activity_targets, batch.loss_mask);
                time_loss = diffcore::mse_masked(dec.times, batch.time_targets, batch.loss_mask);
                g_loss = diffcore::add(diffcore::affine(act_loss, static_cast<float>(cfg.w_act)),
                                       diffcore::affine(time_loss, static_cast<float>(cfg.w_time)));
                token_count = dec.token_count;
                if (adversarial_on) {
                    auto adv_loss = generator_adversarial_loss(model.disc.forward_logit(dec.sampled_steps));
                    g_loss = diffcore::add(g_loss, diffcore::affine(adv_loss, static_cast<float>(adv.lambda)));
                }
            }
            if (!std::isfinite(g_loss->value.data[0]))
                throw Error("NaN loss at epoch " + std::to_string(epoch) + " batch " + std::to_string(oi));
            diffcore::backward(g_loss);
            diffcore::clip_global_norm(gen_params, cfg.clip_norm);
            diffcore::adam_step(gen_params, gen_opt);
            diffcore::zero_gradients(params);
            acc.add(act_loss->value.data[0], time_loss->value.data[0], token_count);
        }

        EpochStats stats;
        stats.epoch = epoch;
        stats.act_loss = acc.act_mean();
        stats.time_loss = acc.time_mean();
        stats.train_loss = cfg.w_act * stats.act_loss + cfg.w_time * stats.time_loss;
        stats.eval_loss = eval_pass(model, eval_batches, cfg);
        stats.seconds = now_seconds() - epoch_start;
        report.epochs.push_back(stats);
        append_log_line(log_path, stats);

        bool improved = stats.eval_loss < stopper.best();
        bool stop = stopper.observe(stats.eval_loss);
        if (improved) best = diffcore::snapshot_params(params);
        report.epochs_run = epoch;
        if (stop) {
            report.stopped_early = true;
            break;
        }
    }

    report.best_epoch = stopper.best_epoch();
    report.best_eval = stopper.best();
    if (!best.empty()) diffcore::restore_params(params, best);
    report.wall_seconds = now_seconds() - wall_start;
    return report;
}

}  // namespace suffixbench::training
