#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "suffixbench/eventlog.hpp"

namespace suffixbench::synthetic {

struct VariantSpec {
    std::vector<std::string> activities;
    double probability = 0;
};

struct DurationLaw {
    double mean_seconds = 60;
    double jitter_seconds = 0;  // uniform integer jitter, truncated at 0
};

struct ProcessSpec {
    std::vector<VariantSpec> variants;
    std::map<std::string, DurationLaw> duration_laws;  // per activity
    DurationLaw default_law{60, 0};
    double loop_p = 0;                      // geometric repetition of the loop segment
    std::vector<std::string> loop_activities;
    long max_loop_repeats = 64;

    void validate() const;
};

// Draws n_traces i.i.d. executions. Deterministic per (spec, n, seed); the
// first event of every trace has duration 0 so a CSV round trip through the
// parser reproduces activities and durations exactly.
EventLog sample_log(const ProcessSpec& spec, long n_traces, std::uint64_t seed);

// CSV in the parser's input schema (case_id, activity, timestamp) with
// timestamps synthesized from the cumulative durations.
void write_log_csv(const EventLog& log, const std::filesystem::path& path);

// Flat key=value spec file, e.g. variant.1.sequence / variant.1.prob /
// duration.A.mean / duration.A.jitter / loop.p / loop.sequence.
ProcessSpec load_process_spec(const std::filesystem::path& path);

std::string epoch_to_iso8601(std::int64_t seconds);

}  // namespace suffixbench::synthetic
