#pragma once

#include <stdexcept>
#include <string>

namespace akd {

enum class ErrorKind { shape, domain, usage, config, format, training, verification };

inline const char* to_string(ErrorKind k) {
    switch (k) {
        case ErrorKind::shape: return "shape";
        case ErrorKind::domain: return "domain";
        case ErrorKind::usage: return "usage";
        case ErrorKind::config: return "config";
        case ErrorKind::format: return "format";
        case ErrorKind::training: return "training";
        case ErrorKind::verification: return "verification";
    }
    return "unknown";
}

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& msg)
        : std::runtime_error(std::string(to_string(kind)) + " error: " + msg), kind_(kind) {}
    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

struct ShapeError : Error {
    explicit ShapeError(const std::string& m) : Error(ErrorKind::shape, m) {}
};
struct DomainError : Error {
    explicit DomainError(const std::string& m) : Error(ErrorKind::domain, m) {}
};
struct UsageError : Error {
    explicit UsageError(const std::string& m) : Error(ErrorKind::usage, m) {}
};
struct ConfigError : Error {
    explicit ConfigError(const std::string& m) : Error(ErrorKind::config, m) {}
};
// key names the offending JSON key or layer entry.
struct FormatError : Error {
    FormatError(const std::string& k, const std::string& m) : Error(ErrorKind::format, k + ": " + m), key(k) {}
    std::string key;
};
struct TrainingError : Error {
    explicit TrainingError(const std::string& m) : Error(ErrorKind::training, m) {}
};
struct VerificationError : Error {
    explicit VerificationError(const std::string& m) : Error(ErrorKind::verification, m) {}
};

}  // namespace akd
