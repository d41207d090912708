#pragma once

#include <optional>
#include <vector>

#include "suffixbench/common.hpp"
#include "suffixbench/eventlog.hpp"
#include "suffixbench/rng.hpp"

namespace suffixbench {

// The four input/target layouts used during training.
enum class TargetLayout {
    NextEvent,              // prefix in, sole next event out
    PrefixToShiftedSuffix,  // prefix encoded, [SOS]-started suffix decoded
    MaskedReconstruction,   // corrupted full trace in, masked positions out
    FullShifted             // full trace in, next token at every position out
};

const char* layout_name(TargetLayout layout);

struct PrefixSample {
    long trace_index = 0;
    std::string case_id;
    int k = 0;                  // prefix length
    std::vector<Event> prefix;  // first k events
    std::vector<Event> suffix;  // remainder, ends with [EOS]
};

struct PrefixSampleSet {
    std::vector<PrefixSample> samples;
    long skipped_short = 0;  // traces too short to produce any sample
};

// One padded side of a batch: indices, scaled times, true row lengths.
struct TokenBlock {
    IMat acts;
    FMat times;
    std::vector<int> lengths;

    long rows() const { return acts.rows; }
    long cols() const { return acts.cols; }
};

struct Batch {
    TargetLayout layout = TargetLayout::FullShifted;
    TokenBlock main;                      // sequence the loss is computed over
    std::optional<TokenBlock> condition;  // prefix side, layout ② only
    IMat activity_targets;                // aligned with main
    FMat time_targets;
    FMat loss_mask;
    // uncorrupted originals, kept for masked-reconstruction re-draws
    IMat base_acts;
    FMat base_times;
};

// All (prefix, suffix) pairs with 2 <= k < |trace|.
PrefixSampleSet make_prefix_suffix_pairs(const EventLog& log);

// Layouts ① and ② from explicit samples. Rows are bucketed by length and
// right-padded with [PAD]; for ② the prefix and suffix sides pad independently.
std::vector<Batch> pad_and_batch(const std::vector<PrefixSample>& samples, TargetLayout layout,
                                 long batch_size, const MinMaxScaler& scaler);

// Layout ④: input positions 1..n-1, target positions 2..n, one row per trace.
std::vector<Batch> make_full_shifted(const EventLog& log, long batch_size, const MinMaxScaler& scaler);

// Layout ③: full traces with a fresh uniform-count corruption draw.
std::vector<Batch> make_masked(const EventLog& log, long batch_size, const MinMaxScaler& scaler,
                               RngStream& rng);

// Redraws the corruption of a masked-reconstruction batch in place.
void apply_masking(Batch& batch, RngStream& rng);

std::vector<float> one_hot(int index, int vocab_size);

// Convenience dispatcher over the four layouts.
std::vector<Batch> build_batches(const EventLog& log, TargetLayout layout, long batch_size,
                                 const MinMaxScaler& scaler, RngStream* rng = nullptr);

// Copy of a batch with `extra` all-pad columns appended on every side.
Batch with_extra_padding(const Batch& batch, long extra);

// ---------------------------------------------------------------------------
// Binary batch cache (little-endian float32 tensors, versioned header)

struct BatchCacheKey {
    std::uint64_t log_hash = 0;
    TargetLayout layout = TargetLayout::FullShifted;
    std::uint64_t seed = 0;
    long batch_size = 0;
};

void save_batch_cache(const std::filesystem::path& path, const BatchCacheKey& key,
                      const std::vector<Batch>& batches);
// Empty optional when the file is absent or keyed differently.
std::optional<std::vector<Batch>> load_batch_cache(const std::filesystem::path& path,
                                                   const BatchCacheKey& key);

}  // namespace suffixbench
