#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace forgelab {

// Flattened model parameters. Layout: layer-major, weights before bias,
// row-major within each weight matrix.
using Params = std::vector<double>;

enum class FloatWidth : uint8_t { F32 = 0, F64 = 1 };

inline const char* to_string(FloatWidth w) {
    return w == FloatWidth::F32 ? "f32" : "f64";
}

inline FloatWidth float_width_from_string(const std::string& s) {
    if (s == "f32") return FloatWidth::F32;
    if (s == "f64") return FloatWidth::F64;
    throw std::invalid_argument("unknown float width: " + s);
}

// Rounds every entry through the requested storage width. F64 is a no-op.
inline void apply_width(Params& w, FloatWidth width) {
    if (width == FloatWidth::F32) {
        for (double& v : w) v = static_cast<double>(static_cast<float>(v));
    }
}

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
public:
    using Error::Error;
};

// Malformed or corrupt serialized input (bad magic, bad digest, truncation).
class FormatError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

// Internally inconsistent inputs (count mismatches, out-of-range indices).
class ConsistencyError : public Error {
public:
    using Error::Error;
};

// Dataset commitment does not match the log under audit.
class AuditError : public Error {
public:
    using Error::Error;
};

class NumericError : public Error {
public:
    using Error::Error;
};

// Enumeration bounds exceeded (oracle toy systems).
class SizeError : public Error {
public:
    using Error::Error;
};

enum class MetricKind { L2, Linf };

inline const char* to_string(MetricKind m) {
    return m == MetricKind::L2 ? "l2" : "linf";
}

inline MetricKind metric_from_string(const std::string& s) {
    if (s == "l2") return MetricKind::L2;
    if (s == "linf") return MetricKind::Linf;
    throw InvalidArgument("unknown metric: " + s);
}

inline double metric_distance(MetricKind m, const Params& a, const Params& b) {
    if (a.size() != b.size())
        throw InvalidArgument("metric_distance: dimension mismatch");
    if (m == MetricKind::L2) {
        double s = 0.0;
        for (size_t i = 0; i < a.size(); ++i) {
            const double d = a[i] - b[i];
            s += d * d;
        }
        return std::sqrt(s);
    }
    double mx = 0.0;
    for (size_t i = 0; i < a.size(); ++i)
        mx = std::max(mx, std::abs(a[i] - b[i]));
    return mx;
}

inline double linf_norm(const Params& a) {
    double mx = 0.0;
    for (double v : a) mx = std::max(mx, std::abs(v));
    return mx;
}

}  // namespace forgelab
