#pragma once

// Univariate Cox proportional-hazards screening of genes against overall
// survival, and reshaping of the top-ranked genes into a genomic matrix.

#include <cstddef>
#include <string>
#include <vector>

#include "mkd/tensor.hpp"

namespace mkd {

struct SurvivalRecord {
    std::string sample_id;
    double time = 0.0; // days, > 0
    int event = 0;     // 1 = death, 0 = censored
    std::vector<double> expression;
};

struct CoxFit {
    double beta = 0.0;
    double se = 0.0;
    double wald_z = 0.0;
    int iterations = 0;
    bool converged = false;
    bool zero_variance = false;
    /// Partial log-likelihood after each accepted Newton step (first entry at
    /// beta = 0). Non-decreasing.
    std::vector<double> loglik_trace;

    bool flagged() const { return zero_variance || !converged; }
};

/// Newton-Raphson on the Breslow partial likelihood of one covariate with
/// step-halving. Stops when |delta beta| < 1e-9 or after 50 iterations.
CoxFit cox_fit_univariate(const std::vector<SurvivalRecord>& records, std::size_t gene);

/// Same fit on explicit columns; used by the record-based overload.
CoxFit cox_fit(const std::vector<double>& x, const std::vector<double>& time,
               const std::vector<int>& event);

struct GeneScore {
    std::size_t gene = 0;
    double beta = 0.0;
    double wald_z = 0.0;
    std::size_t rank = 0; // 1-based
    bool flagged = false;
};

struct GeneRanking {
    std::vector<GeneScore> by_gene;       // indexed by gene
    std::vector<std::size_t> order;       // gene indices, best first
    std::size_t K = 0;

    std::vector<std::size_t> selected() const {
        return {order.begin(), order.begin() + static_cast<std::ptrdiff_t>(K)};
    }
};

/// Ranks every gene by |wald_z| descending (flagged genes last, ties by
/// lower gene index) and selects the top K.
GeneRanking rank_and_select(const std::vector<SurvivalRecord>& records, std::size_t K);

/// Fills the first floor(K / d_in) * d_in ranked values row-major into an
/// (floor(K / d_in) x d_in) matrix; the remainder is dropped.
Tensor reshape_genomic(const std::vector<double>& ranked_values, std::size_t d_in);

/// Gathers `expression` at the ranking's selected genes, then reshapes.
Tensor genomic_matrix(const std::vector<double>& expression, const GeneRanking& ranking,
                      std::size_t d_in);

/// CSV with header `sample_id,time,event,gene_0,...`.
std::vector<SurvivalRecord> read_survival_csv(const std::string& path);
void write_survival_csv(const std::string& path, const std::vector<SurvivalRecord>& records);

std::string ranking_to_json(const GeneRanking& r);

} // namespace mkd
