#include "suffixbench/inference.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace suffixbench::inference {

namespace {

using models::Arch;
using models::Bundle;
using models::Model;
using diffcore::NodePtr;

// Greedy readout never emits [PAD], [SOS] or [MASK]; [EOS] stays eligible.
int constrained_argmax(const diffcore::Tensor<float>& logits, long row, long vocab) {
    const float* p = logits.ptr() + row * vocab;
    int best = Vocabulary::kEos;
    for (long i = 0; i < vocab; ++i) {
        if (i == Vocabulary::kPad || i == Vocabulary::kSos || i == Vocabulary::kMask) continue;
        if (p[i] > p[best]) best = static_cast<int>(i);
    }
    return best;
}

float clamp01(float v) { return std::min(1.f, std::max(0.f, v)); }

void check_prefix(const std::vector<Event>& prefix) {
    if (prefix.size() < 2) throw Error("prefix must contain at least 2 events");
    for (const auto& e : prefix)
        if (Vocabulary::is_special(e.activity))
            throw Error("prefix contains a special symbol at generation time");
}

TokenBlock block_from_events(const std::vector<Event>& events, const MinMaxScaler& scaler) {
    TokenBlock b;
    long n = static_cast<long>(events.size());
    b.acts = IMat(1, n);
    b.times = FMat(1, n);
    b.lengths = {static_cast<int>(n)};
    for (long i = 0; i < n; ++i) {
        const Event& e = events[static_cast<size_t>(i)];
        b.acts.at(0, i) = e.activity;
        b.times.at(0, i) = Vocabulary::is_special(e.activity)
                               ? 0.f
                               : static_cast<float>(scaler.apply(e.duration));
    }
    return b;
}

// (next activity, clamped predicted time) from the latent at `position`.
std::pair<int, float> readout_at(const Model<float>& model, NodePtr<float> latents, long position) {
    auto [logits, times] = model.readout(latents);
    long v = logits->value.dim(2);
    int act = constrained_argmax(logits->value, position, v);
    float t = std::max(0.f, times->value.data[static_cast<size_t>(position)]);
    return {act, t};
}

// Self-extending generation with full recompute each step (GPT, WaveNet).
SuffixPrediction generate_autoregressive(const Bundle<float>& bundle, const std::vector<Event>& prefix,
                                         const GenerationConfig& cfg, long* forward_passes) {
    const auto& model = *bundle.model;
    TokenBlock ctx = block_from_events(prefix, bundle.scaler);

    SuffixPrediction out;
    while (static_cast<int>(out.activities.size()) < cfg.max_len) {
        auto latents = model.forward_tokens(ctx, false, nullptr);
        if (forward_passes) ++*forward_passes;
        auto [act, t] = readout_at(model, latents, ctx.cols() - 1);
        out.activities.push_back(act);
        out.scaled_durations.push_back(t);
        if (act == Vocabulary::kEos) break;
        // extend the running context with the generated event
        long n = ctx.cols();
        IMat next_acts(1, n + 1);
        FMat next_times(1, n + 1);
        for (long i = 0; i < n; ++i) {
            next_acts.at(0, i) = ctx.acts.at(0, i);
            next_times.at(0, i) = ctx.times.at(0, i);
        }
        next_acts.at(0, n) = act;
        next_times.at(0, n) = Vocabulary::is_special(act) ? 0.f : clamp01(t);
        ctx.acts = std::move(next_acts);
        ctx.times = std::move(next_times);
        ctx.lengths = {static_cast<int>(n + 1)};
    }
    out.remaining_seconds =
        remaining_time(out.activities, out.scaled_durations, bundle.scaler, cfg.include_eos_time);
    return out;
}

// Incremental recurrent generation (LSTM layout ①).
SuffixPrediction generate_lstm(const Bundle<float>& bundle, const std::vector<Event>& prefix,
                               const GenerationConfig& cfg, long* forward_passes) {
    const auto& model = *bundle.model;
    long d = model.config().d_latent;
    auto state = model.lstm.initial_state(1);

    NodePtr<float> top;
    TokenBlock ctx = block_from_events(prefix, bundle.scaler);
    for (long t = 0; t < ctx.cols(); ++t) {
        IMat a(1, 1);
        FMat tm(1, 1);
        a.at(0, 0) = ctx.acts.at(0, t);
        tm.at(0, 0) = ctx.times.at(0, t);
        auto z = diffcore::reshape(model.emb.embed(a, tm), {1, d});
        top = model.lstm.step(z, state, false, nullptr);
    }
    if (forward_passes) ++*forward_passes;

    SuffixPrediction out;
    while (static_cast<int>(out.activities.size()) < cfg.max_len) {
        auto latents = diffcore::reshape(top, {1, 1, d});
        auto [act, t] = readout_at(model, latents, 0);
        out.activities.push_back(act);
        out.scaled_durations.push_back(t);
        if (act == Vocabulary::kEos) break;
        IMat a(1, 1);
        FMat tm(1, 1);
        a.at(0, 0) = act;
        tm.at(0, 0) = Vocabulary::is_special(act) ? 0.f : clamp01(t);
        auto z = diffcore::reshape(model.emb.embed(a, tm), {1, d});
        top = model.lstm.step(z, state, false, nullptr);
        if (forward_passes) ++*forward_passes;
    }
    out.remaining_seconds =
        remaining_time(out.activities, out.scaled_durations, bundle.scaler, cfg.include_eos_time);
    return out;
}

// Encoder-decoder generation: encode the prefix once, decode from [SOS].
SuffixPrediction generate_encdec(const Bundle<float>& bundle, const std::vector<Event>& prefix,
                                 const GenerationConfig& cfg, long* forward_passes) {
    const auto& model = *bundle.model;
    const Arch arch = model.config().arch;
    TokenBlock prefix_block = block_from_events(prefix, bundle.scaler);
    SuffixPrediction out;

    if (arch == Arch::Transformer) {
        auto memory = model.encode_prefix_transformer(prefix_block, false, nullptr);
        std::vector<Event> decoder_in{Event{Vocabulary::kSos, 0.0}};
        std::vector<float> fed_times{0.f};
        while (static_cast<int>(out.activities.size()) < cfg.max_len) {
            TokenBlock sufin;
            long m = static_cast<long>(decoder_in.size());
            sufin.acts = IMat(1, m);
            sufin.times = FMat(1, m);
            sufin.lengths = {static_cast<int>(m)};
            for (long i = 0; i < m; ++i) {
                sufin.acts.at(0, i) = decoder_in[static_cast<size_t>(i)].activity;
                sufin.times.at(0, i) = fed_times[static_cast<size_t>(i)];
            }
            auto latents = model.decode_transformer(memory, prefix_block.lengths, sufin, false, nullptr);
            if (forward_passes) ++*forward_passes;
            auto [act, t] = readout_at(model, latents, m - 1);
            out.activities.push_back(act);
            out.scaled_durations.push_back(t);
            if (act == Vocabulary::kEos) break;
            decoder_in.push_back(Event{act, 0.0});
            fed_times.push_back(Vocabulary::is_special(act) ? 0.f : clamp01(t));
        }
    } else {  // AE / AE-GAN: recurrent decoder with carried state
        long d = model.config().d_latent;
        auto state = model.encode_prefix_lstm(prefix_block, false, nullptr);
        int act = Vocabulary::kSos;
        float fed_time = 0.f;
        while (static_cast<int>(out.activities.size()) < cfg.max_len) {
            IMat a(1, 1);
            FMat tm(1, 1);
            a.at(0, 0) = act;
            tm.at(0, 0) = fed_time;
            auto z = diffcore::reshape(model.emb.embed(a, tm), {1, d});
            auto top = model.dec_lstm.step(z, state, false, nullptr);
            if (forward_passes) ++*forward_passes;
            auto latents = diffcore::reshape(top, {1, 1, d});
            auto [next, t] = readout_at(model, latents, 0);
            out.activities.push_back(next);
            out.scaled_durations.push_back(t);
            if (next == Vocabulary::kEos) break;
            act = next;
            fed_time = Vocabulary::is_special(next) ? 0.f : clamp01(t);
        }
    }
    out.remaining_seconds =
        remaining_time(out.activities, out.scaled_durations, bundle.scaler, cfg.include_eos_time);
    return out;
}

}  // namespace

SuffixPrediction bert_generate_suffix(const Bundle<float>& bundle, const std::vector<Event>& prefix,
                                      const GenerationConfig& cfg, std::uint64_t seed,
                                      long* forward_passes) {
    check_prefix(prefix);
    cfg.validate();
    diffcore::NoGradGuard forward_only;
    const auto& model = *bundle.model;
    long k = static_cast<long>(prefix.size());
    long slots = std::max(0L, static_cast<long>(cfg.max_len) - k);

    SuffixPrediction out;
    if (slots == 0) {
        out.remaining_seconds = 0;
        return out;
    }

    // Canvas: prefix followed by [MASK] slots, filled one position at a time
    // in a seeded random order; each write becomes context for the next pass.
    long n = k + slots;
    TokenBlock canvas = block_from_events(prefix, bundle.scaler);
    {
        IMat acts(1, n);
        FMat times(1, n);
        for (long i = 0; i < k; ++i) {
            acts.at(0, i) = canvas.acts.at(0, i);
            times.at(0, i) = canvas.times.at(0, i);
        }
        for (long i = k; i < n; ++i) {
            acts.at(0, i) = Vocabulary::kMask;
            times.at(0, i) = 0.f;
        }
        canvas.acts = std::move(acts);
        canvas.times = std::move(times);
        canvas.lengths = {static_cast<int>(n)};
    }

    std::vector<long> slot_order(static_cast<size_t>(slots));
    std::iota(slot_order.begin(), slot_order.end(), k);
    RngStream order_rng = substream(seed, "bert_decode_order");
    order_rng.shuffle(slot_order);

    std::vector<float> slot_times(static_cast<size_t>(n), 0.f);
    for (long pos : slot_order) {
        auto latents = model.forward_tokens(canvas, false, nullptr);
        if (forward_passes) ++*forward_passes;
        auto [act, t] = readout_at(model, latents, pos);
        canvas.acts.at(0, pos) = act;
        canvas.times.at(0, pos) = Vocabulary::is_special(act) ? 0.f : clamp01(t);
        slot_times[static_cast<size_t>(pos)] = t;
    }

    // Emit slots left to right, truncated at the first [EOS].
    for (long pos = k; pos < n; ++pos) {
        int act = canvas.acts.at(0, pos);
        out.activities.push_back(act);
        out.scaled_durations.push_back(slot_times[static_cast<size_t>(pos)]);
        if (act == Vocabulary::kEos) break;
    }
    out.remaining_seconds =
        remaining_time(out.activities, out.scaled_durations, bundle.scaler, cfg.include_eos_time);
    return out;
}

SuffixPrediction generate_suffix(const Bundle<float>& bundle, const std::vector<Event>& prefix,
                                 const GenerationConfig& cfg, std::uint64_t seed,
                                 long* forward_passes) {
    check_prefix(prefix);
    cfg.validate();
    diffcore::NoGradGuard forward_only;
    switch (bundle.model->config().arch) {
        case Arch::Lstm: return generate_lstm(bundle, prefix, cfg, forward_passes);
        case Arch::Gpt:
        case Arch::WaveNet: return generate_autoregressive(bundle, prefix, cfg, forward_passes);
        case Arch::Ae:
        case Arch::AeGan:
        case Arch::Transformer: return generate_encdec(bundle, prefix, cfg, forward_passes);
        case Arch::Bert: return bert_generate_suffix(bundle, prefix, cfg, seed, forward_passes);
    }
    throw Error("unknown architecture");
}

double remaining_time(const std::vector<int>& activities, const std::vector<double>& scaled_durations,
                      const MinMaxScaler& scaler, bool include_eos_time) {
    if (activities.size() != scaled_durations.size())
        throw Error("remaining_time: activity/duration length mismatch");
    double total = 0;
    for (size_t i = 0; i < activities.size(); ++i) {
        if (activities[i] == Vocabulary::kEos && !include_eos_time) continue;
        total += std::max(0.0, scaler.invert(scaled_durations[i]));
    }
    return total;
}

// ---------------------------------------------------------------------------
// Predictions file

namespace {

std::string join_names(const std::vector<std::string>& names) {
    std::string out;
    for (size_t i = 0; i < names.size(); ++i) {
        if (i) out += '|';
        out += names[i];
    }
    return out;
}

std::vector<std::string> split_names(const std::string& s) {
    if (s.empty()) return {};
    return split(s, '|');
}

}  // namespace

void write_predictions(const std::filesystem::path& path, const std::vector<PredictionRecord>& records,
                       const std::vector<std::string>& header_lines) {
    std::string out;
    for (const auto& h : header_lines) out += "# " + h + "\n";
    out += "case_id\tk\tpredicted_suffix\tpredicted_remaining_s\ttruth_suffix\ttruth_remaining_s\n";
    for (const auto& r : records) {
        out += r.case_id + '\t' + std::to_string(r.k) + '\t' + join_names(r.predicted_activities) + '\t' +
               fmt_double(r.predicted_remaining_seconds) + '\t' + join_names(r.truth_activities) + '\t' +
               fmt_double(r.truth_remaining_seconds) + '\n';
    }
    write_file(path, out);
}

std::vector<PredictionRecord> read_predictions(const std::filesystem::path& path) {
    std::vector<PredictionRecord> records;
    for (const auto& line : split(slurp_file(path), '\n')) {
        if (line.empty() || line[0] == '#' || line.rfind("case_id\t", 0) == 0) continue;
        auto cols = split(line, '\t');
        if (cols.size() != 6) throw DataError("malformed predictions line: " + line);
        PredictionRecord r;
        r.case_id = cols[0];
        r.k = std::stoi(cols[1]);
        r.predicted_activities = split_names(cols[2]);
        r.predicted_remaining_seconds = std::stod(cols[3]);
        r.truth_activities = split_names(cols[4]);
        r.truth_remaining_seconds = std::stod(cols[5]);
        records.push_back(std::move(r));
    }
    return records;
}

}  // namespace suffixbench::inference
