#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mkd/tensor.hpp"

namespace mkd {

enum class Task { ER, PR, HER2 };

std::string_view to_string(Task t);
Task task_from_string(std::string_view s);

/// Instance embeddings of one slide (n_p x d_in), n_p >= 1.
struct PathologyBag {
    std::string sample_id;
    Tensor features;

    std::size_t instances() const { return features.rows(); }
};

/// Reshaped expression profile (n_g x d_in), rows in gene-rank order.
struct GenomicMatrix {
    std::string sample_id;
    Tensor features;
};

struct Labels {
    std::optional<int> er, pr, her2;

    std::optional<int> get(Task t) const;
    void set(Task t, std::optional<int> v);
};

struct Survival {
    double time_days = 0.0;
    int event = 0;
};

struct Sample {
    std::string id;
    PathologyBag pathology;
    std::optional<GenomicMatrix> genomic;
    Labels labels;
    std::optional<Survival> survival;

    bool pathology_only() const { return !genomic.has_value(); }
};

using Dataset = std::vector<Sample>;

/// Throws IngestError unless every entry is finite and the matrix is
/// non-empty.
void validate_matrix(const Tensor& m, const std::string& what);

/// Samples carrying a label for `task`, in original order.
Dataset labelled_subset(const Dataset& data, Task task);

} // namespace mkd
