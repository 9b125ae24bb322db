#pragma once

// Eval-mode scoring of a dataset.

#include <optional>
#include <string>
#include <vector>

#include "mkd/data.hpp"
#include "mkd/encoders.hpp"
#include "mkd/metrics.hpp"

namespace mkd {

/// p(y = 1) from each head that ran.
struct Prediction {
    std::string sample_id;
    std::optional<int> label;
    double p_p = 0.0;
    std::optional<double> p_g, p_m;
};

/// Multimodal mode needs a genomic matrix on every sample (throws
/// MissingModalityError otherwise); pathology-only mode never reads it.
std::vector<Prediction> predict(const Model& m, const Dataset& data, ForwardMode mode);

struct HeadMetrics {
    Metrics p;
    std::optional<Metrics> g, m;
};

/// Metrics over the predictions that carry a label.
HeadMetrics score_predictions(const std::vector<Prediction>& preds, double threshold = 0.5);

/// Per-sample mean of each head's score over several models scored on the
/// same dataset. A head is kept only if every run produced it.
std::vector<Prediction> average_scores(const std::vector<std::vector<Prediction>>& runs);

/// Mean of each metric over runs. AUC averages the runs where it is defined.
HeadMetrics average_metrics(const std::vector<HeadMetrics>& runs);

} // namespace mkd
