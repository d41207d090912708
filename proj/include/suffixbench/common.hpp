#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace suffixbench {

// Error taxonomy mirrors the CLI exit codes: data (1), usage (2), integrity (3).
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};
struct DataError : Error {
    using Error::Error;
};
struct UsageError : Error {
    using Error::Error;
};
struct IntegrityError : Error {
    using Error::Error;
};

// Dense row-major matrices used on the non-differentiable side (batches, masks).
struct IMat {
    long rows = 0;
    long cols = 0;
    std::vector<int> v;

    IMat() = default;
    IMat(long r, long c, int fill = 0) : rows(r), cols(c), v(static_cast<size_t>(r * c), fill) {}
    int& at(long r, long c) { return v[static_cast<size_t>(r * cols + c)]; }
    int at(long r, long c) const { return v[static_cast<size_t>(r * cols + c)]; }
};

struct FMat {
    long rows = 0;
    long cols = 0;
    std::vector<float> v;

    FMat() = default;
    FMat(long r, long c, float fill = 0.f) : rows(r), cols(c), v(static_cast<size_t>(r * c), fill) {}
    float& at(long r, long c) { return v[static_cast<size_t>(r * cols + c)]; }
    float at(long r, long c) const { return v[static_cast<size_t>(r * cols + c)]; }
};

inline std::uint64_t fnv1a64(const void* data, size_t n, std::uint64_t h = 0xcbf29ce484222325ull) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::uint64_t fnv1a64(const std::string& s, std::uint64_t h = 0xcbf29ce484222325ull) {
    return fnv1a64(s.data(), s.size(), h);
}

inline std::string hex64(std::uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

// Deterministic float formatting for all emitted files.
inline std::string fmt_double(double x, int digits = 6) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*f", digits, x);
    return buf;
}

inline std::string slurp_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open file: " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_file(const std::filesystem::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write file: " + path.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
}

inline std::uint64_t hash_file(const std::filesystem::path& path) {
    return fnv1a64(slurp_file(path));
}

inline std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == sep) {
            out.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    out.push_back(cur);
    return out;
}

inline std::string trim(const std::string& s) {
    size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

}  // namespace suffixbench
