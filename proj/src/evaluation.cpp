#include "suffixbench/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <thread>

namespace suffixbench::evaluation {

long dl_distance(const std::vector<int>& s1, const std::vector<int>& s2) {
    const long n1 = static_cast<long>(s1.size()), n2 = static_cast<long>(s2.size());
    if (n1 == 0) return n2;
    if (n2 == 0) return n1;
    // d[i][j]: edits to turn s1[0..i) into s2[0..j)
    std::vector<std::vector<long>> d(static_cast<size_t>(n1 + 1), std::vector<long>(static_cast<size_t>(n2 + 1), 0));
    for (long i = 0; i <= n1; ++i) d[static_cast<size_t>(i)][0] = i;
    for (long j = 0; j <= n2; ++j) d[0][static_cast<size_t>(j)] = j;
    for (long i = 1; i <= n1; ++i) {
        for (long j = 1; j <= n2; ++j) {
            long cost = s1[static_cast<size_t>(i - 1)] == s2[static_cast<size_t>(j - 1)] ? 0 : 1;
            long best = std::min({d[static_cast<size_t>(i - 1)][static_cast<size_t>(j)] + 1,
                                  d[static_cast<size_t>(i)][static_cast<size_t>(j - 1)] + 1,
                                  d[static_cast<size_t>(i - 1)][static_cast<size_t>(j - 1)] + cost});
            if (i > 1 && j > 1 && s1[static_cast<size_t>(i - 1)] == s2[static_cast<size_t>(j - 2)] &&
                s1[static_cast<size_t>(i - 2)] == s2[static_cast<size_t>(j - 1)])
                best = std::min(best, d[static_cast<size_t>(i - 2)][static_cast<size_t>(j - 2)] + 1);
            d[static_cast<size_t>(i)][static_cast<size_t>(j)] = best;
        }
    }
    return d[static_cast<size_t>(n1)][static_cast<size_t>(n2)];
}

double dls(const std::vector<int>& s1, const std::vector<int>& s2) {
    if (s1.empty() && s2.empty()) return 1.0;
    long denom = static_cast<long>(std::max(s1.size(), s2.size()));
    return 1.0 - static_cast<double>(dl_distance(s1, s2)) / static_cast<double>(denom);
}

PrefixReport evaluate(const models::Bundle<float>& bundle, const EventLog& eval_log,
                      const inference::GenerationConfig& gen_cfg, std::uint64_t seed,
                      const std::string& model_tag, const std::string& dataset_tag,
                      const std::vector<std::string>& fingerprint_lines,
                      std::vector<inference::PredictionRecord>* predictions_out, int jobs) {
    if (eval_log.traces.empty()) throw DataError("empty evaluation set");

    struct Cell {
        long n = 0;
        double dls_sum = 0;
        double mae_sum = 0;
    };
    std::map<int, Cell> per_k;
    int max_k = 0;
    for (const auto& t : eval_log.traces)
        max_k = std::max(max_k, static_cast<int>(t.events.size()) - 1);

    struct Instance {
        long trace_index;
        int k;
    };
    std::vector<Instance> instances;
    for (size_t ti = 0; ti < eval_log.traces.size(); ++ti)
        for (int k = 2; k < static_cast<int>(eval_log.traces[ti].events.size()); ++k)
            instances.push_back({static_cast<long>(ti), k});

    struct Sample {
        double dls = 0;
        double mae_days = 0;
        inference::SuffixPrediction pred;
        std::vector<int> truth_acts;
        double truth_remaining = 0;
    };
    std::vector<Sample> samples(instances.size());

    auto work = [&](size_t begin, size_t stride) {
        for (size_t i = begin; i < instances.size(); i += stride) {
            const Trace& trace = eval_log.traces[static_cast<size_t>(instances[i].trace_index)];
            int k = instances[i].k;
            std::vector<Event> prefix(trace.events.begin(), trace.events.begin() + k);
            Sample& s = samples[i];
            s.pred = inference::generate_suffix(bundle, prefix, gen_cfg,
                                                substream(seed, "instance", i).next_u64());
            for (auto it = trace.events.begin() + k; it != trace.events.end(); ++it) {
                s.truth_acts.push_back(it->activity);
                s.truth_remaining += it->duration;
            }
            s.dls = dls(s.pred.activities, s.truth_acts);
            s.mae_days = std::fabs(s.pred.remaining_seconds - s.truth_remaining) / 86400.0;
        }
    };
    if (jobs <= 1) {
        work(0, 1);
    } else {
        std::vector<std::thread> workers;
        for (int w = 0; w < jobs; ++w)
            workers.emplace_back(work, static_cast<size_t>(w), static_cast<size_t>(jobs));
        for (auto& t : workers) t.join();
    }

    // ordered reduce: aggregation is identical for any job count
    double overall_dls_sum = 0, overall_mae_sum = 0;
    long total = 0;
    for (size_t i = 0; i < instances.size(); ++i) {
        const Sample& s = samples[i];
        auto& cell = per_k[instances[i].k];
        ++cell.n;
        cell.dls_sum += s.dls;
        cell.mae_sum += s.mae_days;
        overall_dls_sum += s.dls;
        overall_mae_sum += s.mae_days;
        ++total;

        if (predictions_out) {
            const Trace& trace = eval_log.traces[static_cast<size_t>(instances[i].trace_index)];
            inference::PredictionRecord rec;
            rec.case_id = trace.case_id;
            rec.k = instances[i].k;
            for (int a : s.pred.activities) rec.predicted_activities.push_back(eval_log.vocabulary.name_of(a));
            rec.predicted_remaining_seconds = s.pred.remaining_seconds;
            for (int a : s.truth_acts) rec.truth_activities.push_back(eval_log.vocabulary.name_of(a));
            rec.truth_remaining_seconds = s.truth_remaining;
            predictions_out->push_back(std::move(rec));
        }
    }

    PrefixReport report;
    report.model_tag = model_tag;
    report.dataset_tag = dataset_tag;
    report.fingerprint_lines = fingerprint_lines;
    for (int k = 2; k <= max_k; ++k) {
        PrefixRow row;
        row.k = k;
        auto it = per_k.find(k);
        if (it != per_k.end() && it->second.n > 0) {
            row.n_samples = it->second.n;
            row.dls_mean = it->second.dls_sum / static_cast<double>(it->second.n);
            row.mae_mean_days = it->second.mae_sum / static_cast<double>(it->second.n);
        }
        report.rows.push_back(row);
    }
    report.total_samples = total;
    report.overall_dls = total > 0 ? overall_dls_sum / static_cast<double>(total) : 0;
    report.overall_mae_days = total > 0 ? overall_mae_sum / static_cast<double>(total) : 0;
    return report;
}

// ---------------------------------------------------------------------------
// CSV

void emit_report_csv(const PrefixReport& report, const std::filesystem::path& path) {
    std::string out;
    for (const auto& line : report.fingerprint_lines) out += "# " + line + "\n";
    out += "model,dataset,k,n_samples,dls_mean,mae_mean_days\n";
    for (const auto& row : report.rows) {
        out += report.model_tag + "," + report.dataset_tag + "," + std::to_string(row.k) + "," +
               std::to_string(row.n_samples) + ",";
        if (row.n_samples > 0)
            out += fmt_double(row.dls_mean) + "," + fmt_double(row.mae_mean_days);
        else
            out += ",";  // no eval trace of this length: empty metric cells
        out += "\n";
    }
    out += report.model_tag + "," + report.dataset_tag + ",overall," + std::to_string(report.total_samples) +
           "," + fmt_double(report.overall_dls) + "," + fmt_double(report.overall_mae_days) + "\n";
    write_file(path, out);
}

PrefixReport read_report_csv(const std::filesystem::path& path) {
    PrefixReport report;
    bool header_seen = false;
    for (const auto& line : split(slurp_file(path), '\n')) {
        if (line.empty()) continue;
        if (line[0] == '#') {
            report.fingerprint_lines.push_back(trim(line.substr(1)));
            continue;
        }
        if (!header_seen) {
            header_seen = true;  // column header
            continue;
        }
        auto cols = split(line, ',');
        if (cols.size() != 6) throw DataError("malformed report line: " + line);
        report.model_tag = cols[0];
        report.dataset_tag = cols[1];
        if (cols[2] == "overall") {
            report.total_samples = std::stol(cols[3]);
            report.overall_dls = std::stod(cols[4]);
            report.overall_mae_days = std::stod(cols[5]);
        } else {
            PrefixRow row;
            row.k = std::stoi(cols[2]);
            row.n_samples = std::stol(cols[3]);
            if (row.n_samples > 0) {
                row.dls_mean = std::stod(cols[4]);
                row.mae_mean_days = std::stod(cols[5]);
            }
            report.rows.push_back(row);
        }
    }
    if (!header_seen) throw DataError("not a report csv: " + path.string());
    return report;
}

// ---------------------------------------------------------------------------
// SVG charts: metric line (left axis) over per-k frequency bars (right axis)

namespace {

constexpr double kW = 860, kH = 430;
constexpr double kLeft = 70, kRight = 70, kTop = 40, kBottom = 50;

std::string svg_chart(const PrefixReport& report, bool mae) {
    const double plot_w = kW - kLeft - kRight, plot_h = kH - kTop - kBottom;
    long max_count = 1;
    double max_metric = 0;
    for (const auto& r : report.rows) {
        max_count = std::max(max_count, r.n_samples);
        if (r.n_samples > 0) max_metric = std::max(max_metric, mae ? r.mae_mean_days : r.dls_mean);
    }
    if (!mae) max_metric = 1.0;  // DLS axis is always [0,1]
    if (max_metric <= 0) max_metric = 1.0;

    size_t n = report.rows.size();
    double slot = plot_w / static_cast<double>(std::max<size_t>(1, n));
    auto x_of = [&](size_t i) { return kLeft + slot * (static_cast<double>(i) + 0.5); };
    auto y_metric = [&](double v) { return kTop + plot_h * (1.0 - v / max_metric); };
    double count_scale = plot_h / static_cast<double>(max_count);

    std::string s;
    s += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + fmt_double(kW, 0) + "\" height=\"" +
         fmt_double(kH, 0) + "\">\n";
    s += "<rect x=\"0\" y=\"0\" width=\"" + fmt_double(kW, 0) + "\" height=\"" + fmt_double(kH, 0) +
         "\" fill=\"white\"/>\n";
    std::string title = report.model_tag + " on " + report.dataset_tag + " — " +
                        (mae ? std::string("MAE (days)") : std::string("DLS")) + " per prefix length";
    s += "<text x=\"" + fmt_double(kW / 2, 1) + "\" y=\"22\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"15\">" +
         title + "</text>\n";

    // frequency bars
    for (size_t i = 0; i < n; ++i) {
        const auto& r = report.rows[i];
        double h = static_cast<double>(r.n_samples) * count_scale;
        double x = x_of(i) - slot * 0.35;
        double y = kTop + plot_h - h;
        s += "<rect data-k=\"" + std::to_string(r.k) + "\" data-count=\"" + std::to_string(r.n_samples) +
             "\" x=\"" + fmt_double(x, 2) + "\" y=\"" + fmt_double(y, 2) + "\" width=\"" +
             fmt_double(slot * 0.7, 2) + "\" height=\"" + fmt_double(h, 2) +
             "\" fill=\"#c8d8ef\" stroke=\"none\"/>\n";
    }

    // metric polyline; gaps where a prefix length has no eval samples
    std::string points;
    bool segment_open = false;
    auto flush = [&]() {
        if (segment_open && !points.empty())
            s += "<polyline fill=\"none\" stroke=\"#b03030\" stroke-width=\"2\" points=\"" + points + "\"/>\n";
        points.clear();
        segment_open = false;
    };
    for (size_t i = 0; i < n; ++i) {
        const auto& r = report.rows[i];
        if (r.n_samples == 0) {
            flush();
            continue;
        }
        double v = mae ? r.mae_mean_days : r.dls_mean;
        points += fmt_double(x_of(i), 2) + "," + fmt_double(y_metric(v), 2) + " ";
        segment_open = true;
        s += "<circle cx=\"" + fmt_double(x_of(i), 2) + "\" cy=\"" + fmt_double(y_metric(v), 2) +
             "\" r=\"2.5\" fill=\"#b03030\"/>\n";
    }
    flush();

    // axes
    s += "<line x1=\"" + fmt_double(kLeft, 1) + "\" y1=\"" + fmt_double(kTop, 1) + "\" x2=\"" +
         fmt_double(kLeft, 1) + "\" y2=\"" + fmt_double(kTop + plot_h, 1) + "\" stroke=\"black\"/>\n";
    s += "<line x1=\"" + fmt_double(kLeft, 1) + "\" y1=\"" + fmt_double(kTop + plot_h, 1) + "\" x2=\"" +
         fmt_double(kLeft + plot_w, 1) + "\" y2=\"" + fmt_double(kTop + plot_h, 1) + "\" stroke=\"black\"/>\n";
    s += "<line x1=\"" + fmt_double(kLeft + plot_w, 1) + "\" y1=\"" + fmt_double(kTop, 1) + "\" x2=\"" +
         fmt_double(kLeft + plot_w, 1) + "\" y2=\"" + fmt_double(kTop + plot_h, 1) + "\" stroke=\"black\"/>\n";
    for (int tick = 0; tick <= 4; ++tick) {
        double frac = static_cast<double>(tick) / 4.0;
        double y = kTop + plot_h * (1.0 - frac);
        s += "<text x=\"" + fmt_double(kLeft - 8, 1) + "\" y=\"" + fmt_double(y + 4, 1) +
             "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" +
             fmt_double(max_metric * frac, 2) + "</text>\n";
        s += "<text x=\"" + fmt_double(kLeft + plot_w + 8, 1) + "\" y=\"" + fmt_double(y + 4, 1) +
             "\" text-anchor=\"start\" font-family=\"sans-serif\" font-size=\"11\">" +
             std::to_string(static_cast<long>(std::lround(static_cast<double>(max_count) * frac))) +
             "</text>\n";
    }
    for (size_t i = 0; i < n; ++i) {
        if (n > 30 && i % 2 == 1) continue;
        s += "<text x=\"" + fmt_double(x_of(i), 1) + "\" y=\"" + fmt_double(kTop + plot_h + 16, 1) +
             "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"10\">" +
             std::to_string(report.rows[i].k) + "</text>\n";
    }
    s += "<text x=\"" + fmt_double(kW / 2, 1) + "\" y=\"" + fmt_double(kH - 12, 1) +
         "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">prefix length k "
         "(bars: sample count)</text>\n";
    s += "</svg>\n";
    return s;
}

}  // namespace

void emit_report_svg(const PrefixReport& report, const std::filesystem::path& dls_path,
                     const std::filesystem::path& mae_path) {
    write_file(dls_path, svg_chart(report, false));
    write_file(mae_path, svg_chart(report, true));
}

void emit_combined_csv(const std::vector<CombinedEntry>& entries, const std::filesystem::path& path) {
    if (entries.empty()) throw DataError("no runs to combine");

    // best/worst overall DLS per dataset
    std::map<std::string, std::pair<double, double>> extremes;  // dataset -> (min, max)
    for (const auto& e : entries) {
        auto it = extremes.find(e.report.dataset_tag);
        if (it == extremes.end())
            extremes[e.report.dataset_tag] = {e.report.overall_dls, e.report.overall_dls};
        else {
            it->second.first = std::min(it->second.first, e.report.overall_dls);
            it->second.second = std::max(it->second.second, e.report.overall_dls);
        }
    }

    std::string out = "model,dataset,k,n_samples,dls_mean,mae_mean_days,tag\n";
    for (const auto& e : entries) {
        const auto& r = e.report;
        for (const auto& row : r.rows) {
            out += r.model_tag + "," + r.dataset_tag + "," + std::to_string(row.k) + "," +
                   std::to_string(row.n_samples) + ",";
            if (row.n_samples > 0)
                out += fmt_double(row.dls_mean) + "," + fmt_double(row.mae_mean_days);
            else
                out += ",";
            out += ",\n";
        }
        auto [lo, hi] = extremes[r.dataset_tag];
        std::string tag;
        if (r.overall_dls == hi) tag += "best";
        if (r.overall_dls == lo) tag += tag.empty() ? "worst" : "+worst";
        out += r.model_tag + "," + r.dataset_tag + ",overall," + std::to_string(r.total_samples) + "," +
               fmt_double(r.overall_dls) + "," + fmt_double(r.overall_mae_days) + "," + tag + "\n";
    }
    write_file(path, out);
}

}  // namespace suffixbench::evaluation
