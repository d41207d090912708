#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "suffixbench/models/model.hpp"

namespace suffixbench::inference {

struct GenerationConfig {
    int max_len = 0;                // cap on emitted suffix length; >= 2
    bool include_eos_time = false;  // count the [EOS] slot's duration into remaining time

    void validate() const {
        if (max_len < 2) throw UsageError("max_len must be >= 2");
    }
};

struct SuffixPrediction {
    std::vector<int> activities;          // ends with [EOS] or truncated at max_len
    std::vector<double> scaled_durations;  // one per emitted activity, clamped >= 0
    double remaining_seconds = 0;
};

// Greedy suffix generation conditioned on a prefix of real events.
// AR architectures extend the running sequence; encoder-decoder architectures
// encode the prefix once and decode from [SOS]. The BERT path fills a masked
// canvas in a seeded random order.
SuffixPrediction generate_suffix(const models::Bundle<float>& bundle, const std::vector<Event>& prefix,
                                 const GenerationConfig& cfg, std::uint64_t seed = 0,
                                 long* forward_passes = nullptr);

SuffixPrediction bert_generate_suffix(const models::Bundle<float>& bundle,
                                      const std::vector<Event>& prefix, const GenerationConfig& cfg,
                                      std::uint64_t seed, long* forward_passes = nullptr);

// Sum of inverse-scaled durations in seconds, each clamped at >= 0. The final
// [EOS] position is skipped unless configured otherwise.
double remaining_time(const std::vector<int>& activities, const std::vector<double>& scaled_durations,
                      const MinMaxScaler& scaler, bool include_eos_time);

// ---------------------------------------------------------------------------
// Predictions file (line-delimited TSV)

struct PredictionRecord {
    std::string case_id;
    int k = 0;
    std::vector<std::string> predicted_activities;
    double predicted_remaining_seconds = 0;
    std::vector<std::string> truth_activities;
    double truth_remaining_seconds = 0;
};

void write_predictions(const std::filesystem::path& path, const std::vector<PredictionRecord>& records,
                       const std::vector<std::string>& header_lines = {});
std::vector<PredictionRecord> read_predictions(const std::filesystem::path& path);

}  // namespace suffixbench::inference
