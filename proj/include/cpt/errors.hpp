#pragma once

#include <stdexcept>
#include <string>

namespace cpt {

// Buffer store on disk exists but was written with different parameters.
class IncompatibleStoreError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Buffer directory cannot be created or written.
class SetupError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// A batch larger than one buffer file can hold.
class OversizeBatchError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Metadata or config file does not match its schema; names the offending field.
class ParseError : public std::runtime_error {
public:
    ParseError(const std::string& field, const std::string& detail)
        : std::runtime_error("parse error in field '" + field + "': " + detail),
          field_(field) {}
    const std::string& field() const noexcept { return field_; }

private:
    std::string field_;
};

// A gradient entry is NaN or infinite; names the parameter field.
class NonFiniteGradientError : public std::runtime_error {
public:
    explicit NonFiniteGradientError(const std::string& field)
        : std::runtime_error("non-finite gradient in field '" + field + "'"),
          field_(field) {}
    const std::string& field() const noexcept { return field_; }

private:
    std::string field_;
};

// Training loss became NaN or infinite.
class TrainDivergedError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// A metrics log is missing records required by the requested statistic.
class IncompleteLogError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Forgetting is requested for a task with no earlier evaluation on record.
class FirstEvaluationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Too few points for a fit.
class InsufficientDataError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Run config failed validation; the message lists every offending field.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Report requested but no completed cells exist.
class NothingToReportError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace cpt
