#include "mkd/data.hpp"

#include <cmath>

#include "mkd/errors.hpp"

namespace mkd {

std::string_view to_string(Task t) {
    switch (t) {
    case Task::ER: return "ER";
    case Task::PR: return "PR";
    case Task::HER2: return "HER2";
    }
    return "?";
}

Task task_from_string(std::string_view s) {
    if (s == "ER" || s == "er") return Task::ER;
    if (s == "PR" || s == "pr") return Task::PR;
    if (s == "HER2" || s == "her2") return Task::HER2;
    throw ConfigError("unknown task '" + std::string(s) + "' (expected ER, PR or HER2)");
}

std::optional<int> Labels::get(Task t) const {
    switch (t) {
    case Task::ER: return er;
    case Task::PR: return pr;
    case Task::HER2: return her2;
    }
    return std::nullopt;
}

void Labels::set(Task t, std::optional<int> v) {
    switch (t) {
    case Task::ER: er = v; break;
    case Task::PR: pr = v; break;
    case Task::HER2: her2 = v; break;
    }
}

void validate_matrix(const Tensor& m, const std::string& what) {
    if (!m.defined() || m.rows() == 0 || m.cols() == 0) {
        throw IngestError(what + ": empty matrix " + m.shape_str());
    }
    for (std::size_t i = 0; i < m.size(); ++i) {
        if (!std::isfinite(m[i])) {
            throw IngestError(what + ": non-finite entry at row " + std::to_string(i / m.cols()) +
                              ", col " + std::to_string(i % m.cols()));
        }
    }
}

Dataset labelled_subset(const Dataset& data, Task task) {
    Dataset out;
    for (const auto& s : data) {
        if (s.labels.get(task).has_value()) out.push_back(s);
    }
    return out;
}

} // namespace mkd
