#include "suffixbench/eventlog.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>
#include <map>

#include "suffixbench/rng.hpp"

namespace suffixbench {

Vocabulary::Vocabulary() {
    names_ = {"[PAD]", "[EOS]", "[SOS]", "[MASK]"};
    for (int i = 0; i < kNumSpecials; ++i) index_[names_[i]] = i;
}

int Vocabulary::add(const std::string& name) {
    auto it = index_.find(name);
    if (it != index_.end()) return it->second;
    int idx = static_cast<int>(names_.size());
    names_.push_back(name);
    index_[name] = idx;
    return idx;
}

int Vocabulary::index_of(const std::string& name) const {
    auto it = index_.find(name);
    return it == index_.end() ? -1 : it->second;
}

const std::string& Vocabulary::name_of(int index) const {
    if (index < 0 || index >= size()) throw Error("vocabulary index out of range: " + std::to_string(index));
    return names_[static_cast<size_t>(index)];
}

std::uint64_t Vocabulary::fingerprint() const {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (const auto& n : names_) {
        h = fnv1a64(n, h);
        h = fnv1a64("\0", 1, h);
    }
    return h;
}

double MinMaxScaler::apply(double x) const {
    if (!fitted) throw Error("scaler not fitted");
    if (degenerate) return 0.0;
    double y = (x - min_seconds) / (max_seconds - min_seconds);
    return std::min(1.0, std::max(0.0, y));
}

double MinMaxScaler::invert(double y) const {
    if (!fitted) throw Error("scaler not fitted");
    if (degenerate) return min_seconds;
    return min_seconds + y * (max_seconds - min_seconds);
}

// ---------------------------------------------------------------------------
// Timestamps

namespace {

// Days since 1970-01-01 for a proleptic Gregorian date.
std::int64_t days_from_civil(int y, int m, int d) {
    y -= m <= 2;
    const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
    const unsigned yoe = static_cast<unsigned>(y - era * 400);
    const unsigned doy = static_cast<unsigned>((153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1);
    const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    return era * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

bool parse_fixed_int(const std::string& s, size_t pos, size_t len, int& out) {
    if (pos + len > s.size()) return false;
    int v = 0;
    for (size_t i = pos; i < pos + len; ++i) {
        if (!std::isdigit(static_cast<unsigned char>(s[i]))) return false;
        v = v * 10 + (s[i] - '0');
    }
    out = v;
    return true;
}

}  // namespace

std::int64_t parse_iso8601_seconds(const std::string& text) {
    const std::string s = trim(text);
    int year, month, day, hour, minute, second;
    if (!parse_fixed_int(s, 0, 4, year) || s.size() < 19 || s[4] != '-' || s[7] != '-')
        throw DataError("malformed timestamp: " + text);
    if (!parse_fixed_int(s, 5, 2, month) || !parse_fixed_int(s, 8, 2, day))
        throw DataError("malformed timestamp: " + text);
    if (s[10] != 'T' && s[10] != ' ') throw DataError("malformed timestamp: " + text);
    if (!parse_fixed_int(s, 11, 2, hour) || s[13] != ':' || !parse_fixed_int(s, 14, 2, minute) ||
        s[16] != ':' || !parse_fixed_int(s, 17, 2, second))
        throw DataError("malformed timestamp: " + text);
    if (month < 1 || month > 12 || day < 1 || day > 31 || hour > 23 || minute > 59 || second > 60)
        throw DataError("malformed timestamp: " + text);

    size_t pos = 19;
    if (pos < s.size() && (s[pos] == '.' || s[pos] == ',')) {  // fractional seconds, truncated
        ++pos;
        size_t start = pos;
        while (pos < s.size() && std::isdigit(static_cast<unsigned char>(s[pos]))) ++pos;
        if (pos == start) throw DataError("malformed timestamp: " + text);
    }

    std::int64_t offset = 0;
    if (pos < s.size()) {
        char c = s[pos];
        if (c == 'Z') {
            ++pos;
        } else if (c == '+' || c == '-') {
            int sign = (c == '-') ? -1 : 1;
            ++pos;
            int oh = 0, om = 0;
            if (!parse_fixed_int(s, pos, 2, oh)) throw DataError("malformed timestamp: " + text);
            pos += 2;
            if (pos < s.size() && s[pos] == ':') ++pos;
            if (pos < s.size() && std::isdigit(static_cast<unsigned char>(s[pos]))) {
                if (!parse_fixed_int(s, pos, 2, om)) throw DataError("malformed timestamp: " + text);
                pos += 2;
            }
            offset = sign * (oh * 3600 + om * 60);
        } else {
            throw DataError("malformed timestamp: " + text);
        }
    }
    if (pos != s.size()) throw DataError("malformed timestamp: " + text);

    std::int64_t days = days_from_civil(year, month, day);
    return days * 86400 + hour * 3600 + minute * 60 + second - offset;
}

std::vector<double> to_relative_durations(const std::vector<std::int64_t>& ts) {
    std::vector<double> out(ts.size(), 0.0);
    for (size_t i = 1; i < ts.size(); ++i) {
        std::int64_t d = ts[i] - ts[i - 1];
        if (d < 0) throw Error("negative duration after sorting");
        out[i] = static_cast<double>(d);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Parsing

namespace {

struct RawEvent {
    std::string activity;
    std::int64_t timestamp;
    long file_order;
};

EventLog assemble_log(std::vector<std::pair<std::string, std::vector<RawEvent>>>& cases) {
    EventLog log;
    for (auto& [case_id, raw] : cases) {
        if (raw.empty()) continue;
        std::stable_sort(raw.begin(), raw.end(),
                         [](const RawEvent& a, const RawEvent& b) { return a.timestamp < b.timestamp; });
        std::vector<std::int64_t> ts;
        ts.reserve(raw.size());
        for (const auto& e : raw) ts.push_back(e.timestamp);
        std::vector<double> durations = to_relative_durations(ts);

        Trace trace;
        trace.case_id = case_id;
        trace.events.reserve(raw.size() + 1);
        for (size_t i = 0; i < raw.size(); ++i) {
            Event ev;
            ev.activity = log.vocabulary.add(raw[i].activity);
            ev.duration = durations[i];
            trace.events.push_back(ev);
        }
        trace.events.push_back(Event{Vocabulary::kEos, 0.0});
        log.traces.push_back(std::move(trace));
    }
    if (log.traces.empty()) throw DataError("empty event log");
    return log;
}

// RFC-4180 style CSV reader: quoted fields, doubled quotes, newlines in quotes.
std::vector<std::vector<std::string>> read_csv_rows(const std::string& content) {
    std::vector<std::vector<std::string>> rows;
    std::vector<std::string> row;
    std::string field;
    bool in_quotes = false;
    bool any = false;
    for (size_t i = 0; i < content.size(); ++i) {
        char c = content[i];
        if (in_quotes) {
            if (c == '"') {
                if (i + 1 < content.size() && content[i + 1] == '"') {
                    field.push_back('"');
                    ++i;
                } else {
                    in_quotes = false;
                }
            } else {
                field.push_back(c);
            }
            continue;
        }
        switch (c) {
            case '"': in_quotes = true; any = true; break;
            case ',': row.push_back(field); field.clear(); any = true; break;
            case '\r': break;
            case '\n':
                if (any || !field.empty() || !row.empty()) {
                    row.push_back(field);
                    rows.push_back(row);
                }
                row.clear();
                field.clear();
                any = false;
                break;
            default: field.push_back(c); any = true; break;
        }
    }
    if (any || !field.empty() || !row.empty()) {
        row.push_back(field);
        rows.push_back(row);
    }
    return rows;
}

}  // namespace

EventLog parse_csv(const std::filesystem::path& path, const CsvColumns& columns) {
    const std::string content = slurp_file(path);
    auto rows = read_csv_rows(content);
    if (rows.empty()) throw DataError("empty event log: " + path.string());

    const auto& header = rows[0];
    auto find_col = [&](const std::string& name) {
        for (size_t i = 0; i < header.size(); ++i)
            if (trim(header[i]) == name) return static_cast<long>(i);
        throw DataError("unknown column '" + name + "' in " + path.string());
    };
    long case_col = find_col(columns.case_id);
    long act_col = find_col(columns.activity);
    long ts_col = find_col(columns.timestamp);

    if (rows.size() < 2) throw DataError("empty event log: " + path.string());

    // Cases keep first-seen order so parsing is reproducible byte-for-byte.
    std::vector<std::pair<std::string, std::vector<RawEvent>>> cases;
    std::unordered_map<std::string, size_t> case_index;
    for (size_t r = 1; r < rows.size(); ++r) {
        const auto& row = rows[r];
        long needed = std::max({case_col, act_col, ts_col});
        if (static_cast<long>(row.size()) <= needed)
            throw DataError("row " + std::to_string(r + 1) + " has too few columns");
        RawEvent ev;
        ev.activity = row[static_cast<size_t>(act_col)];
        try {
            ev.timestamp = parse_iso8601_seconds(row[static_cast<size_t>(ts_col)]);
        } catch (const DataError& e) {
            throw DataError(std::string(e.what()) + " (row " + std::to_string(r + 1) + ")");
        }
        ev.file_order = static_cast<long>(r);
        const std::string& cid = row[static_cast<size_t>(case_col)];
        auto it = case_index.find(cid);
        if (it == case_index.end()) {
            case_index[cid] = cases.size();
            cases.emplace_back(cid, std::vector<RawEvent>{ev});
        } else {
            cases[it->second].second.push_back(ev);
        }
    }
    return assemble_log(cases);
}

// ---------------------------------------------------------------------------
// XES: minimal XML pull parser covering the trace/event/string/date subset.

namespace {

struct XmlParser {
    const std::string& s;
    size_t pos = 0;

    explicit XmlParser(const std::string& text) : s(text) {}

    [[noreturn]] void fail(const std::string& msg) const {
        throw DataError("XML parse error at byte " + std::to_string(pos) + ": " + msg);
    }

    void skip_ws() {
        while (pos < s.size() && std::isspace(static_cast<unsigned char>(s[pos]))) ++pos;
    }

    bool starts_with(const char* lit) const { return s.compare(pos, std::strlen(lit), lit) == 0; }

    void skip_until(const char* lit) {
        size_t p = s.find(lit, pos);
        if (p == std::string::npos) fail(std::string("unterminated construct, expected ") + lit);
        pos = p + std::strlen(lit);
    }

    std::string decode_entities(const std::string& raw) {
        std::string out;
        for (size_t i = 0; i < raw.size(); ++i) {
            if (raw[i] != '&') {
                out.push_back(raw[i]);
                continue;
            }
            size_t end = raw.find(';', i);
            if (end == std::string::npos) fail("unterminated entity");
            std::string name = raw.substr(i + 1, end - i - 1);
            if (name == "amp") out.push_back('&');
            else if (name == "lt") out.push_back('<');
            else if (name == "gt") out.push_back('>');
            else if (name == "quot") out.push_back('"');
            else if (name == "apos") out.push_back('\'');
            else if (!name.empty() && name[0] == '#') {
                long code = std::strtol(name.c_str() + (name[1] == 'x' ? 2 : 1), nullptr,
                                        name[1] == 'x' ? 16 : 10);
                if (code < 0x80) out.push_back(static_cast<char>(code));
                else out.push_back('?');  // non-ASCII entity, placeholder
            } else fail("unknown entity &" + name + ";");
            i = end;
        }
        return out;
    }

    struct Tag {
        std::string name;
        std::vector<std::pair<std::string, std::string>> attrs;
        bool self_closing = false;
        bool closing = false;
    };

    // Reads the next tag, skipping text content, comments, PIs and CDATA.
    std::optional<Tag> next_tag() {
        while (pos < s.size()) {
            size_t lt = s.find('<', pos);
            if (lt == std::string::npos) return std::nullopt;
            pos = lt;
            if (starts_with("<!--")) { skip_until("-->"); continue; }
            if (starts_with("<?")) { skip_until("?>"); continue; }
            if (starts_with("<![CDATA[")) { skip_until("]]>"); continue; }
            if (starts_with("<!")) { skip_until(">"); continue; }
            return read_tag();
        }
        return std::nullopt;
    }

    Tag read_tag() {
        Tag tag;
        ++pos;  // '<'
        if (pos < s.size() && s[pos] == '/') {
            tag.closing = true;
            ++pos;
        }
        size_t start = pos;
        while (pos < s.size() && (std::isalnum(static_cast<unsigned char>(s[pos])) || s[pos] == ':' ||
                                  s[pos] == '_' || s[pos] == '-' || s[pos] == '.'))
            ++pos;
        if (pos == start) fail("expected tag name");
        tag.name = s.substr(start, pos - start);
        while (true) {
            skip_ws();
            if (pos >= s.size()) fail("unterminated tag");
            if (s[pos] == '>') { ++pos; break; }
            if (s[pos] == '/') {
                ++pos;
                if (pos >= s.size() || s[pos] != '>') fail("malformed self-closing tag");
                ++pos;
                tag.self_closing = true;
                break;
            }
            size_t astart = pos;
            while (pos < s.size() && s[pos] != '=' && !std::isspace(static_cast<unsigned char>(s[pos])))
                ++pos;
            std::string aname = s.substr(astart, pos - astart);
            skip_ws();
            if (pos >= s.size() || s[pos] != '=') fail("attribute without value");
            ++pos;
            skip_ws();
            if (pos >= s.size() || (s[pos] != '"' && s[pos] != '\'')) fail("unquoted attribute value");
            char quote = s[pos++];
            size_t vstart = pos;
            while (pos < s.size() && s[pos] != quote) ++pos;
            if (pos >= s.size()) fail("unterminated attribute value");
            tag.attrs.emplace_back(aname, decode_entities(s.substr(vstart, pos - vstart)));
            ++pos;
        }
        return tag;
    }
};

const std::string* attr_value(const XmlParser::Tag& tag, const std::string& key) {
    for (const auto& [k, v] : tag.attrs)
        if (k == key) return &v;
    return nullptr;
}

}  // namespace

EventLog parse_xes(const std::filesystem::path& path) {
    const std::string content = slurp_file(path);
    XmlParser xml(content);

    std::vector<std::pair<std::string, std::vector<RawEvent>>> cases;
    long order = 0;
    int depth_trace = 0, depth_event = 0;
    std::string cur_case_id;
    std::vector<RawEvent> cur_events;
    std::string ev_activity;
    std::int64_t ev_timestamp = 0;
    bool ev_has_activity = false;
    bool ev_has_timestamp = false;
    size_t trace_count = 0;

    while (auto tag = xml.next_tag()) {
        if (tag->closing) {
            if (tag->name == "event" && depth_event) {
                if (!ev_has_activity) throw DataError("XES event without concept:name in " + path.string());
                if (!ev_has_timestamp) throw DataError("XES event without time:timestamp in " + path.string());
                cur_events.push_back(RawEvent{ev_activity, ev_timestamp, order++});
                depth_event = 0;
            } else if (tag->name == "trace" && depth_trace) {
                if (cur_case_id.empty()) cur_case_id = "case_" + std::to_string(trace_count);
                if (!cur_events.empty()) cases.emplace_back(cur_case_id, std::move(cur_events));
                cur_events.clear();
                cur_case_id.clear();
                ++trace_count;
                depth_trace = 0;
            }
            continue;
        }
        if (tag->name == "trace" && !tag->self_closing) {
            depth_trace = 1;
            cur_case_id.clear();
            cur_events.clear();
        } else if (tag->name == "event" && depth_trace) {
            if (tag->self_closing) throw DataError("XES event without concept:name in " + path.string());
            depth_event = 1;
            ev_has_activity = false;
            ev_has_timestamp = false;
        } else if (tag->name == "string") {
            const std::string* key = attr_value(*tag, "key");
            const std::string* value = attr_value(*tag, "value");
            if (key && value && *key == "concept:name") {
                if (depth_event) {
                    ev_activity = *value;
                    ev_has_activity = true;
                } else if (depth_trace) {
                    cur_case_id = *value;
                }
            }
        } else if (tag->name == "date" && depth_event) {
            const std::string* key = attr_value(*tag, "key");
            const std::string* value = attr_value(*tag, "value");
            if (key && value && *key == "time:timestamp") {
                ev_timestamp = parse_iso8601_seconds(*value);
                ev_has_timestamp = true;
            }
        }
        // all other elements (extensions, lifecycle, globals, ...) are ignored
    }
    if (cases.empty()) throw DataError("empty event log: " + path.string());
    return assemble_log(cases);
}

// ---------------------------------------------------------------------------
// Scaling & splitting

MinMaxScaler fit_scaler(const std::vector<Trace>& training_traces) {
    MinMaxScaler s;
    bool any = false;
    for (const auto& t : training_traces) {
        for (const auto& e : t.events) {
            if (!any) {
                s.min_seconds = s.max_seconds = e.duration;
                any = true;
            } else {
                s.min_seconds = std::min(s.min_seconds, e.duration);
                s.max_seconds = std::max(s.max_seconds, e.duration);
            }
        }
    }
    if (!any) throw DataError("cannot fit scaler on an empty set");
    s.fitted = true;
    s.degenerate = (s.max_seconds == s.min_seconds);
    return s;
}

std::pair<EventLog, EventLog> split_train_eval(const EventLog& log, const SplitSpec& spec) {
    if (spec.train_fraction <= 0.0 || spec.train_fraction >= 1.0)
        throw UsageError("train_fraction must be in (0,1)");
    if (log.traces.size() < 2) throw DataError("need at least 2 traces to split");

    std::vector<size_t> order(log.traces.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    RngStream rng = substream(spec.seed, "split");
    rng.shuffle(order);

    size_t n_train = static_cast<size_t>(std::floor(spec.train_fraction * static_cast<double>(order.size())));
    n_train = std::max<size_t>(1, std::min(n_train, order.size() - 1));

    EventLog train, eval;
    train.vocabulary = eval.vocabulary = log.vocabulary;
    for (size_t i = 0; i < order.size(); ++i) {
        const Trace& t = log.traces[order[i]];
        (i < n_train ? train : eval).traces.push_back(t);
    }
    return {std::move(train), std::move(eval)};
}

void save_split_manifest(const std::filesystem::path& path, const std::vector<Trace>& traces) {
    std::string out;
    for (const auto& t : traces) {
        out += t.case_id;
        out += '\n';
    }
    write_file(path, out);
}

std::pair<EventLog, EventLog> apply_split_manifest(const EventLog& log,
                                                   const std::filesystem::path& train_ids,
                                                   const std::filesystem::path& eval_ids) {
    auto read_ids = [](const std::filesystem::path& p) {
        std::unordered_map<std::string, size_t> ids;
        size_t order = 0;
        for (const auto& line : split(slurp_file(p), '\n')) {
            std::string id = trim(line);
            if (!id.empty()) ids.emplace(id, order++);
        }
        return ids;
    };
    auto train_set = read_ids(train_ids);
    auto eval_set = read_ids(eval_ids);

    EventLog train, eval;
    train.vocabulary = eval.vocabulary = log.vocabulary;
    train.traces.resize(train_set.size());
    eval.traces.resize(eval_set.size());
    std::vector<bool> train_seen(train_set.size(), false), eval_seen(eval_set.size(), false);
    for (const auto& t : log.traces) {
        if (auto it = train_set.find(t.case_id); it != train_set.end()) {
            train.traces[it->second] = t;
            train_seen[it->second] = true;
        } else if (auto it2 = eval_set.find(t.case_id); it2 != eval_set.end()) {
            eval.traces[it2->second] = t;
            eval_seen[it2->second] = true;
        }
    }
    for (bool b : train_seen)
        if (!b) throw IntegrityError("split manifest references a case_id missing from the log");
    for (bool b : eval_seen)
        if (!b) throw IntegrityError("split manifest references a case_id missing from the log");
    return {std::move(train), std::move(eval)};
}

// ---------------------------------------------------------------------------
// Binary container

namespace {

constexpr char kLogMagic[8] = {'S', 'B', 'L', 'O', 'G', '0', '0', '1'};

template <typename T>
void put(std::string& out, T v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out.append(buf, sizeof(T));
}

void put_str(std::string& out, const std::string& s) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
    out.append(s);
}

struct Reader {
    const std::string& s;
    size_t pos = 0;

    template <typename T>
    T get() {
        if (pos + sizeof(T) > s.size()) throw DataError("truncated log file");
        T v;
        std::memcpy(&v, s.data() + pos, sizeof(T));
        pos += sizeof(T);
        return v;
    }

    std::string get_str() {
        auto n = get<std::uint32_t>();
        if (pos + n > s.size()) throw DataError("truncated log file");
        std::string v = s.substr(pos, n);
        pos += n;
        return v;
    }
};

}  // namespace

void save_eventlog(const EventLog& log, const std::filesystem::path& path) {
    std::string out;
    out.append(kLogMagic, sizeof(kLogMagic));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(log.vocabulary.size()));
    for (const auto& name : log.vocabulary.names()) put_str(out, name);
    put<std::uint8_t>(out, log.time_scaler.fitted ? 1 : 0);
    put<double>(out, log.time_scaler.min_seconds);
    put<double>(out, log.time_scaler.max_seconds);
    put<std::uint64_t>(out, log.traces.size());
    for (const auto& t : log.traces) {
        put_str(out, t.case_id);
        put<std::uint32_t>(out, static_cast<std::uint32_t>(t.events.size()));
        for (const auto& e : t.events) {
            put<std::int32_t>(out, e.activity);
            put<double>(out, e.duration);
        }
    }
    write_file(path, out);
}

EventLog load_eventlog(const std::filesystem::path& path) {
    const std::string content = slurp_file(path);
    if (content.size() < sizeof(kLogMagic) || content.compare(0, sizeof(kLogMagic), kLogMagic, sizeof(kLogMagic)) != 0)
        throw DataError("not a canonical log file: " + path.string());
    Reader r{content, sizeof(kLogMagic)};

    EventLog log;
    auto vocab_size = r.get<std::uint32_t>();
    for (std::uint32_t i = 0; i < vocab_size; ++i) {
        std::string name = r.get_str();
        if (i < Vocabulary::kNumSpecials) {
            if (name != log.vocabulary.name_of(static_cast<int>(i)))
                throw DataError("canonical log has unexpected special symbols");
        } else {
            log.vocabulary.add(name);
        }
    }
    log.time_scaler.fitted = r.get<std::uint8_t>() != 0;
    log.time_scaler.min_seconds = r.get<double>();
    log.time_scaler.max_seconds = r.get<double>();
    log.time_scaler.degenerate = log.time_scaler.max_seconds == log.time_scaler.min_seconds;
    auto n_traces = r.get<std::uint64_t>();
    for (std::uint64_t i = 0; i < n_traces; ++i) {
        Trace t;
        t.case_id = r.get_str();
        auto n_events = r.get<std::uint32_t>();
        for (std::uint32_t j = 0; j < n_events; ++j) {
            Event e;
            e.activity = r.get<std::int32_t>();
            e.duration = r.get<double>();
            if (e.activity < 0 || e.activity >= log.vocabulary.size())
                throw DataError("activity index out of range in canonical log");
            t.events.push_back(e);
        }
        log.traces.push_back(std::move(t));
    }
    return log;
}

std::uint64_t log_fingerprint(const EventLog& log) {
    std::uint64_t h = log.vocabulary.fingerprint();
    for (const auto& t : log.traces) {
        h = fnv1a64(t.case_id, h);
        for (const auto& e : t.events) {
            h = fnv1a64(&e.activity, sizeof(e.activity), h);
            h = fnv1a64(&e.duration, sizeof(e.duration), h);
        }
    }
    return h;
}

int max_trace_length(const EventLog& log) {
    size_t n = 0;
    for (const auto& t : log.traces) n = std::max(n, t.events.size());
    return static_cast<int>(n);
}

}  // namespace suffixbench
