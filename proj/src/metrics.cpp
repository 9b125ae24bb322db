#include "mkd/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "mkd/errors.hpp"

namespace mkd {

namespace {

void check_inputs(std::span<const double> scores, std::span<const int> labels, const char* who) {
    if (scores.size() != labels.size()) {
        throw ContractError(std::string(who) + ": " + std::to_string(scores.size()) + " scores but " +
                            std::to_string(labels.size()) + " labels");
    }
    if (scores.empty()) throw ContractError(std::string(who) + ": empty input");
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (labels[i] != 0 && labels[i] != 1) throw ContractError(std::string(who) + ": labels must be 0 or 1");
        if (!std::isfinite(scores[i])) throw ContractError(std::string(who) + ": non-finite score");
    }
}

} // namespace

double auc(std::span<const double> scores, std::span<const int> labels) {
    check_inputs(scores, labels, "auc");
    const std::size_t n = scores.size();
    const auto n_pos = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
    const std::size_t n_neg = n - n_pos;
    if (n_pos == 0 || n_neg == 0) throw MetricError("auc: undefined for a single-class set");

    // Rank-sum form: count negatives strictly below each positive, plus half
    // the negatives tied with it. Integer counts keep the result exact.
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    std::uint64_t twice_wins = 0; // 2 * (wins + ties/2)
    std::uint64_t neg_below = 0;
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        std::uint64_t pos_here = 0, neg_here = 0;
        for (; j < n && scores[idx[j]] == scores[idx[i]]; ++j) (labels[idx[j]] ? pos_here : neg_here)++;
        twice_wins += pos_here * (2 * neg_below + neg_here);
        neg_below += neg_here;
        i = j;
    }
    return static_cast<double>(twice_wins) / (2.0 * double(n_pos) * double(n_neg));
}

AccF1 acc_f1(std::span<const double> scores, std::span<const int> labels, double threshold) {
    check_inputs(scores, labels, "acc_f1");
    std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        const bool pred = scores[i] >= threshold;
        if (pred && labels[i]) ++tp;
        else if (pred) ++fp;
        else if (labels[i]) ++fn;
        else ++tn;
    }
    AccF1 out;
    out.acc = double(tp + tn) / double(scores.size());
    // Harmonic mean of precision and recall, from counts in one division.
    out.f1 = tp ? 2.0 * double(tp) / double(2 * tp + fp + fn) : 0.0;
    return out;
}

Metrics compute_metrics(std::span<const double> scores, std::span<const int> labels, double threshold) {
    Metrics m;
    m.threshold = threshold;
    const auto af = acc_f1(scores, labels, threshold);
    m.acc = af.acc;
    m.f1 = af.f1;
    m.n_pos = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
    m.n_neg = labels.size() - m.n_pos;
    if (m.n_pos > 0 && m.n_neg > 0) m.auc = auc(scores, labels);
    return m;
}

} // namespace mkd
