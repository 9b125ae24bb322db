#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace mkd {

// Shape / dimension disagreement between operands.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Invalid configuration (widths, hyperparameters, flags).
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// A precondition of an operation was violated by its caller.
class ContractError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

// Malformed or unreadable dataset / embedding / checkpoint input.
class IngestError : public std::runtime_error {
public:
    IngestError(const std::string& file, std::uint64_t offset, const std::string& what)
        : std::runtime_error(file + " @ byte " + std::to_string(offset) + ": " + what),
          file_(file), offset_(offset) {}
    explicit IngestError(const std::string& what) : std::runtime_error(what) {}

    const std::string& file() const noexcept { return file_; }
    std::uint64_t offset() const noexcept { return offset_; }

private:
    std::string file_;
    std::uint64_t offset_ = 0;
};

// Non-finite loss during training.
class DivergenceError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Metric is undefined on the given input (e.g. single-class AUC).
class MetricError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

// Multimodal forward requested for a sample without genomic data.
class MissingModalityError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Cross-validation folds cannot be formed (k out of range, missing class).
class PlanningError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

} // namespace mkd
