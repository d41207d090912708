#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "suffixbench/inference.hpp"
#include "suffixbench/models/model.hpp"

namespace suffixbench::evaluation {

// Optimal-string-alignment Damerau-Levenshtein distance: insert, delete,
// substitute and adjacent transposition, no substring edited twice.
long dl_distance(const std::vector<int>& s1, const std::vector<int>& s2);

// 1 - DL / max(len); 1.0 for identical sequences, both-empty defined as 1.0.
double dls(const std::vector<int>& s1, const std::vector<int>& s2);

struct PrefixRow {
    int k = 0;
    long n_samples = 0;
    double dls_mean = 0;      // meaningless when n_samples == 0
    double mae_mean_days = 0;  // meaningless when n_samples == 0
};

struct PrefixReport {
    std::string model_tag;
    std::string dataset_tag;
    std::vector<PrefixRow> rows;  // k = 2 .. max observed prefix length
    long total_samples = 0;
    double overall_dls = 0;
    double overall_mae_days = 0;
    std::vector<std::string> fingerprint_lines;  // config, weights, seed, split hash
};

// Generates a suffix for every (eval trace, k) instance and aggregates DLS
// and remaining-time MAE per prefix length. Instances are independent, so
// jobs > 1 fans them out over worker threads; results are identical for any
// job count (per-instance seeds, ordered reduce).
PrefixReport evaluate(const models::Bundle<float>& bundle, const EventLog& eval_log,
                      const inference::GenerationConfig& gen_cfg, std::uint64_t seed,
                      const std::string& model_tag, const std::string& dataset_tag,
                      const std::vector<std::string>& fingerprint_lines,
                      std::vector<inference::PredictionRecord>* predictions_out = nullptr,
                      int jobs = 1);

void emit_report_csv(const PrefixReport& report, const std::filesystem::path& path);
PrefixReport read_report_csv(const std::filesystem::path& path);

// Metric line over frequency bars, one chart per metric (self-contained SVG).
void emit_report_svg(const PrefixReport& report, const std::filesystem::path& dls_path,
                     const std::filesystem::path& mae_path);

struct CombinedEntry {
    PrefixReport report;
    std::string source;
};

// Merge per-run reports into one table, marking best/worst overall DLS per dataset.
void emit_combined_csv(const std::vector<CombinedEntry>& entries, const std::filesystem::path& path);

}  // namespace suffixbench::evaluation
