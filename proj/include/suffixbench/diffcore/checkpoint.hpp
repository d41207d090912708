#pragma once

#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "suffixbench/common.hpp"
#include "suffixbench/diffcore/graph.hpp"

namespace suffixbench::diffcore {

// Versioned parameter container: (name, shape, float32 data) records.
// Serialization is byte-stable for identical parameters.

struct ParamRecord {
    std::string name;
    std::vector<long> shape;
    std::vector<float> data;
};

namespace detail {

template <typename T>
void put_raw(std::string& out, T v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out.append(buf, sizeof(T));
}

inline void put_string(std::string& out, const std::string& s) {
    put_raw<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
    out.append(s);
}

struct RawReader {
    const std::string& s;
    size_t pos;

    template <typename T>
    T get() {
        if (pos + sizeof(T) > s.size()) throw DataError("truncated checkpoint");
        T v;
        std::memcpy(&v, s.data() + pos, sizeof(T));
        pos += sizeof(T);
        return v;
    }

    std::string get_string() {
        auto n = get<std::uint32_t>();
        if (pos + n > s.size()) throw DataError("truncated checkpoint");
        std::string v = s.substr(pos, n);
        pos += n;
        return v;
    }
};

}  // namespace detail

inline constexpr char kCheckpointMagic[8] = {'S', 'B', 'C', 'K', 'P', 'T', '0', '1'};

inline void append_param_records(std::string& out, const std::vector<ParamRecord>& records) {
    detail::put_raw<std::uint32_t>(out, static_cast<std::uint32_t>(records.size()));
    for (const auto& r : records) {
        detail::put_string(out, r.name);
        detail::put_raw<std::uint32_t>(out, static_cast<std::uint32_t>(r.shape.size()));
        for (long d : r.shape) detail::put_raw<std::int64_t>(out, d);
        detail::put_raw<std::uint64_t>(out, r.data.size());
        out.append(reinterpret_cast<const char*>(r.data.data()), r.data.size() * sizeof(float));
    }
}

inline std::vector<ParamRecord> read_param_records(detail::RawReader& r) {
    auto count = r.get<std::uint32_t>();
    std::vector<ParamRecord> records;
    records.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        ParamRecord rec;
        rec.name = r.get_string();
        auto rank = r.get<std::uint32_t>();
        for (std::uint32_t d = 0; d < rank; ++d) rec.shape.push_back(static_cast<long>(r.get<std::int64_t>()));
        auto n = r.get<std::uint64_t>();
        if (r.pos + n * sizeof(float) > r.s.size()) throw DataError("truncated checkpoint");
        rec.data.resize(n);
        std::memcpy(rec.data.data(), r.s.data() + r.pos, n * sizeof(float));
        r.pos += n * sizeof(float);
        records.push_back(std::move(rec));
    }
    return records;
}

template <class S>
std::vector<ParamRecord> snapshot_params(const std::vector<NodePtr<S>>& params) {
    std::vector<ParamRecord> records;
    records.reserve(params.size());
    for (const auto& p : params) {
        ParamRecord rec;
        rec.name = p->name;
        rec.shape = p->value.shape;
        rec.data.resize(p->value.data.size());
        for (size_t i = 0; i < rec.data.size(); ++i) rec.data[i] = static_cast<float>(p->value.data[i]);
        records.push_back(std::move(rec));
    }
    return records;
}

template <class S>
void restore_params(std::vector<NodePtr<S>>& params, const std::vector<ParamRecord>& records) {
    if (params.size() != records.size()) throw IntegrityError("checkpoint parameter count mismatch");
    for (size_t i = 0; i < params.size(); ++i) {
        auto& p = params[i];
        const auto& rec = records[i];
        if (p->name != rec.name || p->value.shape != rec.shape)
            throw IntegrityError("checkpoint parameter mismatch at '" + rec.name + "'");
        for (size_t j = 0; j < rec.data.size(); ++j) p->value.data[j] = static_cast<S>(rec.data[j]);
    }
}

inline void save_param_file(const std::filesystem::path& path, const std::vector<ParamRecord>& records) {
    std::string out;
    out.append(kCheckpointMagic, sizeof(kCheckpointMagic));
    append_param_records(out, records);
    write_file(path, out);
}

inline std::vector<ParamRecord> load_param_file(const std::filesystem::path& path) {
    const std::string content = slurp_file(path);
    if (content.size() < sizeof(kCheckpointMagic) ||
        content.compare(0, sizeof(kCheckpointMagic), kCheckpointMagic, sizeof(kCheckpointMagic)) != 0)
        throw DataError("not a checkpoint file: " + path.string());
    detail::RawReader r{content, sizeof(kCheckpointMagic)};
    return read_param_records(r);
}

}  // namespace suffixbench::diffcore
