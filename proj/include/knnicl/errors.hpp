#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>

namespace knnicl {

/// Violated interface contract (dimension mismatch, zero vector, wrong dims
/// returned by a provider). Never retried.
class ContractError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

/// A malformed record in an input file.
class RecordError : public std::runtime_error {
public:
    RecordError(std::string path, std::size_t line, const std::string& what)
        : std::runtime_error(path + ":" + std::to_string(line) + ": " + what),
          path_(std::move(path)), line_(line) {}

    const std::string& path() const noexcept { return path_; }
    std::size_t line() const noexcept { return line_; }

private:
    std::string path_;
    std::size_t line_;
};

/// Network or service failure after `attempts` tries.
class TransportError : public std::runtime_error {
public:
    TransportError(const std::string& what, int attempts)
        : std::runtime_error(what), attempts_(attempts) {}

    int attempts() const noexcept { return attempts_; }

private:
    int attempts_;
};

/// Raw model output that does not name exactly one label.
class ParseFailure : public std::runtime_error {
public:
    explicit ParseFailure(std::string raw)
        : std::runtime_error("cannot parse label from: '" + raw + "'"), raw_(std::move(raw)) {}

    const std::string& raw() const noexcept { return raw_; }

private:
    std::string raw_;
};

/// An LLM prediction that exhausted its retries. The query is excluded from
/// agreement statistics and counted in the run report.
class QueryFailed : public std::runtime_error {
public:
    QueryFailed(std::string query_id, const std::string& reason)
        : std::runtime_error("query " + query_id + " failed: " + reason),
          query_id_(std::move(query_id)) {}

    const std::string& query_id() const noexcept { return query_id_; }

private:
    std::string query_id_;
};

/// The LLM annotator could not produce a yes/no verdict.
class AnnotationFailed : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid experiment configuration, detected before any work runs.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ReportError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace knnicl
