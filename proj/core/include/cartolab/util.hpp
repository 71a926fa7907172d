#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace cartolab {

// All recoverable failures carry a stable machine-readable code ("BadYear",
// "KTooLarge", ...) next to the human message.
class Error : public std::runtime_error {
public:
    Error(std::string code, const std::string& message)
        : std::runtime_error(code + ": " + message), code_(std::move(code)) {}
    const std::string& code() const noexcept { return code_; }

private:
    std::string code_;
};

// Per-row problems found while loading; collected, never silently dropped.
struct RowError {
    std::size_t row = 0;  // 1-based data row (header excluded)
    std::string code;
    std::string message;
};

struct LoadReport {
    std::vector<RowError> errors;
    bool ok() const noexcept { return errors.empty(); }
    void add(std::size_t row, std::string code, std::string message) {
        errors.push_back({row, std::move(code), std::move(message)});
    }
};

// Minimal CSV support: "," separator, "." decimal point, optional RFC-style
// double quotes. Sufficient for every interchange file the toolkit defines.
std::vector<std::string> split_csv_line(const std::string& line);
std::vector<std::string> split_on(const std::string& s, char sep);
std::string join(const std::vector<std::string>& parts, const std::string& sep);
std::string trim(std::string_view s);

// Reads a whole text file; throws Error("FileNotFound") on failure.
std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);

// Linear interpolation between order statistics on an ascending vector;
// q is a percent in [0,100]. This is the percentile estimator used everywhere
// a percentile appears (saturation thresholds, bootstrap intervals).
double percentile_sorted(const std::vector<double>& ascending, double q);
double percentile(std::vector<double> values, double q);

double mean(const std::vector<double>& v);
double sample_variance(const std::vector<double>& v);  // n-1 denominator
double pearson(const std::vector<double>& a, const std::vector<double>& b);

// FNV-1a; used for provenance digests of inputs and parameter blocks.
std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t h = 1469598103934665603ULL);
std::uint64_t fnv1a(std::string_view s, std::uint64_t h = 1469598103934665603ULL);
std::string hex64(std::uint64_t v);

// Static-chunked parallel loop. Chunk boundaries depend only on (n, threads),
// and each index writes disjoint state, so results are identical for any
// thread count as long as the body is pure per index.
void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& body);

// Fixed-format float printing for deterministic text outputs.
std::string format_double(double v, int precision = 9);

}  // namespace cartolab
