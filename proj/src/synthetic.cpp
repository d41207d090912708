#include "suffixbench/synthetic.hpp"

#include <algorithm>
#include <cmath>

#include "suffixbench/rng.hpp"

namespace suffixbench::synthetic {

void ProcessSpec::validate() const {
    if (variants.empty()) throw UsageError("process spec needs at least one variant");
    double sum = 0;
    for (const auto& v : variants) {
        if (v.probability < 0) throw UsageError("variant probability must be >= 0");
        if (v.activities.empty()) throw UsageError("variant with empty activity sequence");
        sum += v.probability;
    }
    if (std::fabs(sum - 1.0) > 1e-9) throw UsageError("variant probabilities must sum to 1");
    if (loop_p < 0 || loop_p >= 1) throw UsageError("loop.p must be in [0,1)");
    if (loop_p > 0 && loop_activities.empty()) throw UsageError("loop.p set without loop.sequence");
}

namespace {

double draw_duration(const ProcessSpec& spec, const std::string& activity, RngStream& rng) {
    auto it = spec.duration_laws.find(activity);
    const DurationLaw& law = it != spec.duration_laws.end() ? it->second : spec.default_law;
    long jitter = static_cast<long>(law.jitter_seconds);
    long mean = static_cast<long>(law.mean_seconds);
    long value = mean + (jitter > 0 ? rng.uniform_int(-jitter, jitter) : 0);
    return static_cast<double>(std::max(0L, value));
}

}  // namespace

EventLog sample_log(const ProcessSpec& spec, long n_traces, std::uint64_t seed) {
    spec.validate();
    if (n_traces < 1) throw UsageError("n_traces must be >= 1");

    EventLog log;
    // Vocabulary order follows the spec enumeration, independent of draws.
    for (const auto& v : spec.variants)
        for (const auto& a : v.activities) log.vocabulary.add(a);
    for (const auto& a : spec.loop_activities) log.vocabulary.add(a);

    for (long i = 0; i < n_traces; ++i) {
        RngStream rng = substream(seed, "trace", static_cast<std::uint64_t>(i));
        double u = rng.uniform01();
        double acc = 0;
        const VariantSpec* chosen = &spec.variants.back();
        for (const auto& v : spec.variants) {
            acc += v.probability;
            if (u < acc) {
                chosen = &v;
                break;
            }
        }
        std::vector<std::string> activities = chosen->activities;
        if (spec.loop_p > 0) {
            long reps = 0;
            while (reps < spec.max_loop_repeats && rng.bernoulli(spec.loop_p)) {
                activities.insert(activities.end(), spec.loop_activities.begin(), spec.loop_activities.end());
                ++reps;
            }
        }

        Trace trace;
        trace.case_id = "case_" + std::to_string(i);
        for (size_t j = 0; j < activities.size(); ++j) {
            Event e;
            e.activity = log.vocabulary.add(activities[j]);
            e.duration = j == 0 ? 0.0 : draw_duration(spec, activities[j], rng);
            trace.events.push_back(e);
        }
        trace.events.push_back(Event{Vocabulary::kEos, 0.0});
        log.traces.push_back(std::move(trace));
    }
    return log;
}

// ---------------------------------------------------------------------------

namespace {

void civil_from_days(std::int64_t z, int& y, int& m, int& d) {
    z += 719468;
    const std::int64_t era = (z >= 0 ? z : z - 146096) / 146097;
    const unsigned doe = static_cast<unsigned>(z - era * 146097);
    const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
    const std::int64_t yy = static_cast<std::int64_t>(yoe) + era * 400;
    const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    const unsigned mp = (5 * doy + 2) / 153;
    d = static_cast<int>(doy - (153 * mp + 2) / 5 + 1);
    m = static_cast<int>(mp + (mp < 10 ? 3 : -9));
    y = static_cast<int>(yy + (m <= 2));
}

}  // namespace

std::string epoch_to_iso8601(std::int64_t seconds) {
    std::int64_t days = seconds / 86400;
    std::int64_t rem = seconds % 86400;
    if (rem < 0) {
        rem += 86400;
        days -= 1;
    }
    int y, m, d;
    civil_from_days(days, y, m, d);
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%04d-%02d-%02dT%02d:%02d:%02dZ", y, m, d,
                  static_cast<int>(rem / 3600), static_cast<int>((rem / 60) % 60), static_cast<int>(rem % 60));
    return buf;
}

void write_log_csv(const EventLog& log, const std::filesystem::path& path) {
    constexpr std::int64_t kBase = 1704067200;  // 2024-01-01T00:00:00Z
    std::string out = "case_id,activity,timestamp\n";
    for (const auto& trace : log.traces) {
        std::int64_t ts = kBase;
        for (const auto& e : trace.events) {
            if (e.activity == Vocabulary::kEos) continue;  // appended by the parser
            ts += static_cast<std::int64_t>(e.duration);
            out += trace.case_id + "," + log.vocabulary.name_of(e.activity) + "," + epoch_to_iso8601(ts) + "\n";
        }
    }
    write_file(path, out);
}

ProcessSpec load_process_spec(const std::filesystem::path& path) {
    ProcessSpec spec;
    std::map<long, VariantSpec> variants;
    for (const auto& raw_line : split(slurp_file(path), '\n')) {
        std::string line = trim(raw_line);
        if (line.empty() || line[0] == '#') continue;
        auto eq = line.find('=');
        if (eq == std::string::npos) throw DataError("malformed spec line: " + line);
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        auto parts = split(key, '.');
        if (parts[0] == "variant" && parts.size() == 3) {
            long idx = std::stol(parts[1]);
            if (parts[2] == "sequence") {
                for (auto& a : split(value, ',')) variants[idx].activities.push_back(trim(a));
            } else if (parts[2] == "prob") {
                variants[idx].probability = std::stod(value);
            } else {
                throw DataError("unknown spec key: " + key);
            }
        } else if (parts[0] == "duration" && parts.size() == 3) {
            DurationLaw& law = parts[1] == "default" ? spec.default_law : spec.duration_laws[parts[1]];
            if (parts[2] == "mean") law.mean_seconds = std::stod(value);
            else if (parts[2] == "jitter") law.jitter_seconds = std::stod(value);
            else throw DataError("unknown spec key: " + key);
        } else if (key == "loop.p") {
            spec.loop_p = std::stod(value);
        } else if (key == "loop.sequence") {
            for (auto& a : split(value, ',')) spec.loop_activities.push_back(trim(a));
        } else if (key == "loop.max_repeats") {
            spec.max_loop_repeats = std::stol(value);
        } else {
            throw DataError("unknown spec key: " + key);
        }
    }
    for (auto& [idx, v] : variants) spec.variants.push_back(std::move(v));
    spec.validate();
    return spec;
}

}  // namespace suffixbench::synthetic
