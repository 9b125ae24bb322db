#pragma once

// Binary classification metrics on p(y = 1) scores.

#include <cstddef>
#include <optional>
#include <span>

namespace mkd {

/// Mann-Whitney AUC with half credit for ties. Throws MetricError when only
/// one class is present, ContractError on bad input.
double auc(std::span<const double> scores, std::span<const int> labels);

struct AccF1 {
    double acc = 0.0;
    double f1 = 0.0;
};

/// Predictions are score >= threshold; F1 on the positive class, 0 when
/// precision + recall = 0.
AccF1 acc_f1(std::span<const double> scores, std::span<const int> labels, double threshold = 0.5);

struct Metrics {
    std::optional<double> auc; // empty when the set is single-class
    double acc = 0.0;
    double f1 = 0.0;
    std::size_t n_pos = 0;
    std::size_t n_neg = 0;
    double threshold = 0.5;
};

Metrics compute_metrics(std::span<const double> scores, std::span<const int> labels,
                        double threshold = 0.5);

} // namespace mkd
