#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "suffixbench/common.hpp"

namespace suffixbench {

// Activity vocabulary with the four reserved special symbols at fixed indices.
class Vocabulary {
public:
    static constexpr int kPad = 0;
    static constexpr int kEos = 1;
    static constexpr int kSos = 2;
    static constexpr int kMask = 3;
    static constexpr int kNumSpecials = 4;

    Vocabulary();

    // Returns the index of `name`, adding it if unseen.
    int add(const std::string& name);
    // Returns the index or -1 if absent.
    int index_of(const std::string& name) const;
    const std::string& name_of(int index) const;
    int size() const { return static_cast<int>(names_.size()); }
    static bool is_special(int index) { return index >= 0 && index < kNumSpecials; }

    const std::vector<std::string>& names() const { return names_; }
    std::uint64_t fingerprint() const;

private:
    std::vector<std::string> names_;
    std::unordered_map<std::string, int> index_;
};

struct Event {
    int activity = 0;
    double duration = 0.0;  // seconds, >= 0; special symbols carry exactly 0
};

struct Trace {
    std::string case_id;
    std::vector<Event> events;  // canonical form ends with [EOS]
};

// Min-max scaling of durations into [0,1]. Fit on the training split only;
// out-of-range values seen later are clamped.
struct MinMaxScaler {
    double min_seconds = 0.0;
    double max_seconds = 0.0;
    bool fitted = false;
    bool degenerate = false;  // max == min

    double apply(double x) const;
    double invert(double y) const;  // affine inverse, no clamping
};

struct EventLog {
    std::vector<Trace> traces;
    Vocabulary vocabulary;
    MinMaxScaler time_scaler;

    size_t size() const { return traces.size(); }
};

struct SplitSpec {
    double train_fraction = 0.8;
    std::uint64_t seed = 0;
};

struct CsvColumns {
    std::string case_id = "case_id";
    std::string activity = "activity";
    std::string timestamp = "timestamp";
};

// Epoch seconds from an ISO-8601 timestamp (fractional part truncated).
// Accepts 'T' or ' ' as the date/time separator and Z or +-HH[:MM] offsets.
std::int64_t parse_iso8601_seconds(const std::string& text);

// Consecutive timestamp differences in whole seconds; the first entry is 0.
std::vector<double> to_relative_durations(const std::vector<std::int64_t>& sorted_timestamps);

EventLog parse_csv(const std::filesystem::path& path, const CsvColumns& columns = {});
EventLog parse_xes(const std::filesystem::path& path);

MinMaxScaler fit_scaler(const std::vector<Trace>& training_traces);

// Deterministic shuffled split; train side gets floor(train_fraction * size).
std::pair<EventLog, EventLog> split_train_eval(const EventLog& log, const SplitSpec& spec);

// Split manifests: one case_id per line.
void save_split_manifest(const std::filesystem::path& path, const std::vector<Trace>& traces);
std::pair<EventLog, EventLog> apply_split_manifest(const EventLog& log,
                                                   const std::filesystem::path& train_ids,
                                                   const std::filesystem::path& eval_ids);

// Canonical binary log container.
void save_eventlog(const EventLog& log, const std::filesystem::path& path);
EventLog load_eventlog(const std::filesystem::path& path);

// Content fingerprint of a log (vocabulary, traces, durations).
std::uint64_t log_fingerprint(const EventLog& log);

// Longest trace length (events incl. [EOS]) — the generation cap source.
int max_trace_length(const EventLog& log);

}  // namespace suffixbench
