#include "suffixbench/preprocess.hpp"

#include <algorithm>
#include <cstring>
#include <numeric>

namespace suffixbench {

const char* layout_name(TargetLayout layout) {
    switch (layout) {
        case TargetLayout::NextEvent: return "next_event";
        case TargetLayout::PrefixToShiftedSuffix: return "prefix_to_shifted_suffix";
        case TargetLayout::MaskedReconstruction: return "masked_reconstruction";
        case TargetLayout::FullShifted: return "full_shifted";
    }
    return "unknown";
}

PrefixSampleSet make_prefix_suffix_pairs(const EventLog& log) {
    PrefixSampleSet out;
    for (size_t ti = 0; ti < log.traces.size(); ++ti) {
        const Trace& trace = log.traces[ti];
        long n = static_cast<long>(trace.events.size());
        if (n < 3) {  // no k satisfies 2 <= k < n
            ++out.skipped_short;
            continue;
        }
        if (trace.events.back().activity != Vocabulary::kEos)
            throw Error("trace '" + trace.case_id + "' does not end with [EOS]");
        for (long k = 2; k < n; ++k) {
            PrefixSample s;
            s.trace_index = static_cast<long>(ti);
            s.case_id = trace.case_id;
            s.k = static_cast<int>(k);
            s.prefix.assign(trace.events.begin(), trace.events.begin() + k);
            s.suffix.assign(trace.events.begin() + k, trace.events.end());
            out.samples.push_back(std::move(s));
        }
    }
    return out;
}

namespace {

TokenBlock padded_block(const std::vector<const std::vector<Event>*>& rows, long width,
                        const MinMaxScaler& scaler) {
    long b = static_cast<long>(rows.size());
    TokenBlock block;
    block.acts = IMat(b, width, Vocabulary::kPad);
    block.times = FMat(b, width, 0.f);
    block.lengths.resize(static_cast<size_t>(b));
    for (long r = 0; r < b; ++r) {
        const auto& events = *rows[static_cast<size_t>(r)];
        block.lengths[static_cast<size_t>(r)] = static_cast<int>(events.size());
        for (size_t i = 0; i < events.size(); ++i) {
            block.acts.at(r, static_cast<long>(i)) = events[i].activity;
            block.times.at(r, static_cast<long>(i)) =
                Vocabulary::is_special(events[i].activity)
                    ? 0.f
                    : static_cast<float>(scaler.apply(events[i].duration));
        }
    }
    return block;
}

float scaled_time(const Event& e, const MinMaxScaler& scaler) {
    return Vocabulary::is_special(e.activity) ? 0.f : static_cast<float>(scaler.apply(e.duration));
}

}  // namespace

std::vector<Batch> pad_and_batch(const std::vector<PrefixSample>& samples, TargetLayout layout,
                                 long batch_size, const MinMaxScaler& scaler) {
    if (batch_size < 1) throw UsageError("batch_size must be >= 1");
    if (layout != TargetLayout::NextEvent && layout != TargetLayout::PrefixToShiftedSuffix)
        throw UsageError("pad_and_batch handles the prefix-sample layouts only");

    // Length bucketing: sorting by the padded dimensions keeps pad waste low.
    std::vector<size_t> order(samples.size());
    std::iota(order.begin(), order.end(), size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
        const auto& sa = samples[a];
        const auto& sb = samples[b];
        if (layout == TargetLayout::NextEvent) return sa.prefix.size() < sb.prefix.size();
        if (sa.suffix.size() != sb.suffix.size()) return sa.suffix.size() < sb.suffix.size();
        return sa.prefix.size() < sb.prefix.size();
    });

    std::vector<Batch> batches;
    for (size_t start = 0; start < order.size(); start += static_cast<size_t>(batch_size)) {
        size_t end = std::min(order.size(), start + static_cast<size_t>(batch_size));
        long b = static_cast<long>(end - start);
        Batch batch;
        batch.layout = layout;

        if (layout == TargetLayout::NextEvent) {
            long width = 0;
            std::vector<const std::vector<Event>*> rows;
            for (size_t i = start; i < end; ++i) {
                rows.push_back(&samples[order[i]].prefix);
                width = std::max(width, static_cast<long>(samples[order[i]].prefix.size()));
            }
            batch.main = padded_block(rows, width, scaler);
            batch.activity_targets = IMat(b, width, Vocabulary::kPad);
            batch.time_targets = FMat(b, width, 0.f);
            batch.loss_mask = FMat(b, width, 0.f);
            for (long r = 0; r < b; ++r) {
                const PrefixSample& s = samples[order[static_cast<size_t>(start) + static_cast<size_t>(r)]];
                long last = static_cast<long>(s.prefix.size()) - 1;
                batch.activity_targets.at(r, last) = s.suffix.front().activity;
                batch.time_targets.at(r, last) = scaled_time(s.suffix.front(), scaler);
                batch.loss_mask.at(r, last) = 1.f;
            }
        } else {
            long pw = 0, sw = 0;
            std::vector<const std::vector<Event>*> prefix_rows;
            std::vector<std::vector<Event>> sufin_storage;
            sufin_storage.reserve(static_cast<size_t>(b));
            for (size_t i = start; i < end; ++i) {
                const PrefixSample& s = samples[order[i]];
                prefix_rows.push_back(&s.prefix);
                pw = std::max(pw, static_cast<long>(s.prefix.size()));
                // decoder input: [SOS] followed by all but the last suffix event
                std::vector<Event> sufin;
                sufin.push_back(Event{Vocabulary::kSos, 0.0});
                sufin.insert(sufin.end(), s.suffix.begin(), s.suffix.end() - 1);
                sw = std::max(sw, static_cast<long>(sufin.size()));
                sufin_storage.push_back(std::move(sufin));
            }
            std::vector<const std::vector<Event>*> sufin_rows;
            for (const auto& v : sufin_storage) sufin_rows.push_back(&v);

            batch.condition = padded_block(prefix_rows, pw, scaler);
            batch.main = padded_block(sufin_rows, sw, scaler);
            batch.activity_targets = IMat(b, sw, Vocabulary::kPad);
            batch.time_targets = FMat(b, sw, 0.f);
            batch.loss_mask = FMat(b, sw, 0.f);
            for (long r = 0; r < b; ++r) {
                const PrefixSample& s = samples[order[static_cast<size_t>(start) + static_cast<size_t>(r)]];
                for (size_t i = 0; i < s.suffix.size(); ++i) {
                    batch.activity_targets.at(r, static_cast<long>(i)) = s.suffix[i].activity;
                    batch.time_targets.at(r, static_cast<long>(i)) = scaled_time(s.suffix[i], scaler);
                    batch.loss_mask.at(r, static_cast<long>(i)) = 1.f;
                }
            }
        }
        batches.push_back(std::move(batch));
    }
    return batches;
}

std::vector<Batch> make_full_shifted(const EventLog& log, long batch_size, const MinMaxScaler& scaler) {
    if (batch_size < 1) throw UsageError("batch_size must be >= 1");
    if (log.traces.empty()) throw DataError("empty event log");

    std::vector<size_t> order(log.traces.size());
    std::iota(order.begin(), order.end(), size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
        return log.traces[a].events.size() < log.traces[b].events.size();
    });

    std::vector<Batch> batches;
    for (size_t start = 0; start < order.size(); start += static_cast<size_t>(batch_size)) {
        size_t end = std::min(order.size(), start + static_cast<size_t>(batch_size));
        long b = static_cast<long>(end - start);
        long width = 0;
        for (size_t i = start; i < end; ++i)
            width = std::max(width, static_cast<long>(log.traces[order[i]].events.size()) - 1);

        Batch batch;
        batch.layout = TargetLayout::FullShifted;
        batch.main.acts = IMat(b, width, Vocabulary::kPad);
        batch.main.times = FMat(b, width, 0.f);
        batch.main.lengths.resize(static_cast<size_t>(b));
        batch.activity_targets = IMat(b, width, Vocabulary::kPad);
        batch.time_targets = FMat(b, width, 0.f);
        batch.loss_mask = FMat(b, width, 0.f);
        for (long r = 0; r < b; ++r) {
            const Trace& t = log.traces[order[static_cast<size_t>(start) + static_cast<size_t>(r)]];
            long len = static_cast<long>(t.events.size()) - 1;
            batch.main.lengths[static_cast<size_t>(r)] = static_cast<int>(len);
            for (long i = 0; i < len; ++i) {
                batch.main.acts.at(r, i) = t.events[static_cast<size_t>(i)].activity;
                batch.main.times.at(r, i) = scaled_time(t.events[static_cast<size_t>(i)], scaler);
                batch.activity_targets.at(r, i) = t.events[static_cast<size_t>(i + 1)].activity;
                batch.time_targets.at(r, i) = scaled_time(t.events[static_cast<size_t>(i + 1)], scaler);
                batch.loss_mask.at(r, i) = 1.f;
            }
        }
        batches.push_back(std::move(batch));
    }
    return batches;
}

std::vector<Batch> make_masked(const EventLog& log, long batch_size, const MinMaxScaler& scaler,
                               RngStream& rng) {
    if (batch_size < 1) throw UsageError("batch_size must be >= 1");
    if (log.traces.empty()) throw DataError("empty event log");

    std::vector<size_t> order(log.traces.size());
    std::iota(order.begin(), order.end(), size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
        return log.traces[a].events.size() < log.traces[b].events.size();
    });

    std::vector<Batch> batches;
    for (size_t start = 0; start < order.size(); start += static_cast<size_t>(batch_size)) {
        size_t end = std::min(order.size(), start + static_cast<size_t>(batch_size));
        long b = static_cast<long>(end - start);
        long width = 0;
        for (size_t i = start; i < end; ++i)
            width = std::max(width, static_cast<long>(log.traces[order[i]].events.size()));

        Batch batch;
        batch.layout = TargetLayout::MaskedReconstruction;
        batch.base_acts = IMat(b, width, Vocabulary::kPad);
        batch.base_times = FMat(b, width, 0.f);
        batch.main.lengths.resize(static_cast<size_t>(b));
        for (long r = 0; r < b; ++r) {
            const Trace& t = log.traces[order[static_cast<size_t>(start) + static_cast<size_t>(r)]];
            long len = static_cast<long>(t.events.size());
            batch.main.lengths[static_cast<size_t>(r)] = static_cast<int>(len);
            for (long i = 0; i < len; ++i) {
                batch.base_acts.at(r, i) = t.events[static_cast<size_t>(i)].activity;
                batch.base_times.at(r, i) = scaled_time(t.events[static_cast<size_t>(i)], scaler);
            }
        }
        apply_masking(batch, rng);
        batches.push_back(std::move(batch));
    }
    return batches;
}

void apply_masking(Batch& batch, RngStream& rng) {
    if (batch.layout != TargetLayout::MaskedReconstruction)
        throw UsageError("apply_masking requires a masked-reconstruction batch");
    long b = batch.base_acts.rows, width = batch.base_acts.cols;
    batch.main.acts = batch.base_acts;
    batch.main.times = batch.base_times;
    batch.activity_targets = batch.base_acts;
    batch.time_targets = batch.base_times;
    batch.loss_mask = FMat(b, width, 0.f);

    std::vector<long> positions;
    for (long r = 0; r < b; ++r) {
        long n_true = batch.main.lengths[static_cast<size_t>(r)];
        long c = rng.uniform_int(1, n_true);  // masked count ~ U(1, n)
        positions.resize(static_cast<size_t>(n_true));
        std::iota(positions.begin(), positions.end(), 0L);
        for (long i = 0; i < c; ++i) {  // partial Fisher-Yates: first c entries
            long j = rng.uniform_int(i, n_true - 1);
            std::swap(positions[static_cast<size_t>(i)], positions[static_cast<size_t>(j)]);
        }
        for (long i = 0; i < c; ++i) {
            long pos = positions[static_cast<size_t>(i)];
            batch.main.acts.at(r, pos) = Vocabulary::kMask;
            batch.main.times.at(r, pos) = 0.f;
            batch.loss_mask.at(r, pos) = 1.f;
        }
    }
}

std::vector<float> one_hot(int index, int vocab_size) {
    if (index < 0 || index >= vocab_size)
        throw Error("one_hot: index " + std::to_string(index) + " out of range for size " +
                    std::to_string(vocab_size));
    std::vector<float> v(static_cast<size_t>(vocab_size), 0.f);
    v[static_cast<size_t>(index)] = 1.f;
    return v;
}

std::vector<Batch> build_batches(const EventLog& log, TargetLayout layout, long batch_size,
                                 const MinMaxScaler& scaler, RngStream* rng) {
    switch (layout) {
        case TargetLayout::NextEvent:
        case TargetLayout::PrefixToShiftedSuffix: {
            auto set = make_prefix_suffix_pairs(log);
            return pad_and_batch(set.samples, layout, batch_size, scaler);
        }
        case TargetLayout::FullShifted: return make_full_shifted(log, batch_size, scaler);
        case TargetLayout::MaskedReconstruction: {
            if (!rng) throw UsageError("masked layout needs an rng");
            return make_masked(log, batch_size, scaler, *rng);
        }
    }
    throw UsageError("unknown layout");
}

namespace {

void widen_imat(IMat& m, long extra, int fill) {
    IMat out(m.rows, m.cols + extra, fill);
    for (long r = 0; r < m.rows; ++r)
        for (long c = 0; c < m.cols; ++c) out.at(r, c) = m.at(r, c);
    m = std::move(out);
}

void widen_fmat(FMat& m, long extra, float fill) {
    FMat out(m.rows, m.cols + extra, fill);
    for (long r = 0; r < m.rows; ++r)
        for (long c = 0; c < m.cols; ++c) out.at(r, c) = m.at(r, c);
    m = std::move(out);
}

}  // namespace

Batch with_extra_padding(const Batch& batch, long extra) {
    Batch out = batch;
    widen_imat(out.main.acts, extra, Vocabulary::kPad);
    widen_fmat(out.main.times, extra, 0.f);
    widen_imat(out.activity_targets, extra, Vocabulary::kPad);
    widen_fmat(out.time_targets, extra, 0.f);
    widen_fmat(out.loss_mask, extra, 0.f);
    if (out.condition) {
        widen_imat(out.condition->acts, extra, Vocabulary::kPad);
        widen_fmat(out.condition->times, extra, 0.f);
    }
    if (out.base_acts.rows > 0) {
        widen_imat(out.base_acts, extra, Vocabulary::kPad);
        widen_fmat(out.base_times, extra, 0.f);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Batch cache

namespace {

constexpr char kCacheMagic[8] = {'S', 'B', 'B', 'A', 'T', 'C', 'H', '1'};

template <typename T>
void put(std::string& out, T v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out.append(buf, sizeof(T));
}

struct Reader {
    const std::string& s;
    size_t pos = 0;

    template <typename T>
    T get() {
        if (pos + sizeof(T) > s.size()) throw DataError("truncated batch cache");
        T v;
        std::memcpy(&v, s.data() + pos, sizeof(T));
        pos += sizeof(T);
        return v;
    }
};

void put_imat(std::string& out, const IMat& m) {
    put<std::int64_t>(out, m.rows);
    put<std::int64_t>(out, m.cols);
    out.append(reinterpret_cast<const char*>(m.v.data()), m.v.size() * sizeof(int));
}

void put_fmat(std::string& out, const FMat& m) {
    put<std::int64_t>(out, m.rows);
    put<std::int64_t>(out, m.cols);
    out.append(reinterpret_cast<const char*>(m.v.data()), m.v.size() * sizeof(float));
}

IMat get_imat(Reader& r) {
    IMat m;
    m.rows = static_cast<long>(r.get<std::int64_t>());
    m.cols = static_cast<long>(r.get<std::int64_t>());
    size_t n = static_cast<size_t>(m.rows * m.cols);
    if (r.pos + n * sizeof(int) > r.s.size()) throw DataError("truncated batch cache");
    m.v.resize(n);
    std::memcpy(m.v.data(), r.s.data() + r.pos, n * sizeof(int));
    r.pos += n * sizeof(int);
    return m;
}

FMat get_fmat(Reader& r) {
    FMat m;
    m.rows = static_cast<long>(r.get<std::int64_t>());
    m.cols = static_cast<long>(r.get<std::int64_t>());
    size_t n = static_cast<size_t>(m.rows * m.cols);
    if (r.pos + n * sizeof(float) > r.s.size()) throw DataError("truncated batch cache");
    m.v.resize(n);
    std::memcpy(m.v.data(), r.s.data() + r.pos, n * sizeof(float));
    r.pos += n * sizeof(float);
    return m;
}

void put_block(std::string& out, const TokenBlock& b) {
    put_imat(out, b.acts);
    put_fmat(out, b.times);
    put<std::int64_t>(out, static_cast<std::int64_t>(b.lengths.size()));
    out.append(reinterpret_cast<const char*>(b.lengths.data()), b.lengths.size() * sizeof(int));
}

TokenBlock get_block(Reader& r) {
    TokenBlock b;
    b.acts = get_imat(r);
    b.times = get_fmat(r);
    size_t n = static_cast<size_t>(r.get<std::int64_t>());
    if (r.pos + n * sizeof(int) > r.s.size()) throw DataError("truncated batch cache");
    b.lengths.resize(n);
    std::memcpy(b.lengths.data(), r.s.data() + r.pos, n * sizeof(int));
    r.pos += n * sizeof(int);
    return b;
}

}  // namespace

void save_batch_cache(const std::filesystem::path& path, const BatchCacheKey& key,
                      const std::vector<Batch>& batches) {
    std::string out;
    out.append(kCacheMagic, sizeof(kCacheMagic));
    put<std::uint64_t>(out, key.log_hash);
    put<std::uint8_t>(out, static_cast<std::uint8_t>(key.layout));
    put<std::uint64_t>(out, key.seed);
    put<std::int64_t>(out, key.batch_size);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(batches.size()));
    for (const auto& b : batches) {
        put<std::uint8_t>(out, static_cast<std::uint8_t>(b.layout));
        put<std::uint8_t>(out, b.condition ? 1 : 0);
        put_block(out, b.main);
        if (b.condition) put_block(out, *b.condition);
        put_imat(out, b.activity_targets);
        put_fmat(out, b.time_targets);
        put_fmat(out, b.loss_mask);
        put_imat(out, b.base_acts);
        put_fmat(out, b.base_times);
    }
    write_file(path, out);
}

std::optional<std::vector<Batch>> load_batch_cache(const std::filesystem::path& path,
                                                   const BatchCacheKey& key) {
    if (!std::filesystem::exists(path)) return std::nullopt;
    const std::string content = slurp_file(path);
    if (content.size() < sizeof(kCacheMagic) ||
        content.compare(0, sizeof(kCacheMagic), kCacheMagic, sizeof(kCacheMagic)) != 0)
        return std::nullopt;
    Reader r{content, sizeof(kCacheMagic)};
    if (r.get<std::uint64_t>() != key.log_hash) return std::nullopt;
    if (r.get<std::uint8_t>() != static_cast<std::uint8_t>(key.layout)) return std::nullopt;
    if (r.get<std::uint64_t>() != key.seed) return std::nullopt;
    if (static_cast<long>(r.get<std::int64_t>()) != key.batch_size) return std::nullopt;

    auto count = r.get<std::uint32_t>();
    std::vector<Batch> batches;
    batches.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        Batch b;
        b.layout = static_cast<TargetLayout>(r.get<std::uint8_t>());
        bool has_cond = r.get<std::uint8_t>() != 0;
        b.main = get_block(r);
        if (has_cond) b.condition = get_block(r);
        b.activity_targets = get_imat(r);
        b.time_targets = get_fmat(r);
        b.loss_mask = get_fmat(r);
        b.base_acts = get_imat(r);
        b.base_times = get_fmat(r);
        batches.push_back(std::move(b));
    }
    return batches;
}

}  // namespace suffixbench
