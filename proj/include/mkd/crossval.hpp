#pragma once

// Stratified k-fold cross-validation, the ablation grid and their JSON/CSV
// renderings.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mkd/data.hpp"
#include "mkd/inference.hpp"
#include "mkd/training.hpp"

namespace mkd {

struct FoldPlan {
    std::size_t k = 5;
    std::uint64_t seed = 0;
    std::vector<std::string> sample_ids; // dataset order
    std::vector<std::size_t> fold;       // fold index per sample

    std::vector<std::size_t> fold_sizes() const;
};

/// Labels are shuffled per class with `seed` and dealt round-robin, the
/// second class continuing where the first stopped. Throws PlanningError if
/// k < 2, k > n, or either class is missing.
FoldPlan plan_folds(const Dataset& labelled, Task task, std::size_t k, std::uint64_t seed);

struct CvOptions {
    std::size_t k = 5;
    std::optional<std::uint64_t> plan_seed; // defaults to the training seed
    /// Share of each training fold held out (stratified) to pick the best
    /// epoch by student AUC; 0 trains on the full fold and keeps the final epoch.
    double val_fraction = 0.0;
    std::size_t jobs = 1; // folds trained concurrently
    std::optional<std::string> out_dir; // per-fold checkpoints and logs
};

struct FoldResult {
    std::size_t fold = 0;
    std::size_t n_train = 0, n_test = 0;
    HeadMetrics pathology_only;           // student only
    std::optional<HeadMetrics> multimodal; // on test samples with genomics
    std::optional<std::size_t> best_epoch;
    std::string log_jsonl;
};

/// Mean and sample standard deviation over folds; AUC folds that are null
/// are skipped, an all-null column stays null.
struct Summary {
    std::optional<double> mean, std;
};

struct CvResult {
    FoldPlan plan;
    TrainConfig config;
    std::vector<FoldResult> folds;

    /// mode: "pathology_only" | "multimodal"; head: "p" | "g" | "m";
    /// metric: "auc" | "acc" | "f1".
    Summary summary(const std::string& mode, const std::string& head, const std::string& metric) const;
};

CvResult crossvalidate(const Dataset& data, const TrainConfig& cfg, const CvOptions& opts = {});

/// 64-bit FNV-1a over the canonical config JSON, as 16 hex digits.
std::string config_hash(const std::string& canonical);

std::string cv_metrics_json(const CvResult& r, const CvOptions& opts);

// ---- ablation ------------------------------------------------------------

/// One table row: a loss configuration read out in one modality. Rows that
/// share a name share one cross-validation run.
struct AblationConfig {
    std::string name;
    bool mkd = false, skd = false, clod = false;
    std::string modality = "pathology"; // "pathology" (head p) or "multimodal" (head m)
};

/// baseline, +MKD, +SKD/CLOD, full, each in both modalities.
std::vector<AblationConfig> default_ablation_grid();

struct AblationRow {
    std::string config;
    bool mkd = false, skd = false, clod = false;
    std::string modality; // "pathology" (student head) or "multimodal" (fusion head)
    Summary auc, acc, f1;
};

struct AblationTable {
    std::vector<AblationRow> rows;
    std::vector<CvResult> runs; // one per distinct configuration name

    std::string to_csv() const;
    std::string to_text() const;
};

AblationTable run_ablation(const Dataset& data, const TrainConfig& base,
                           const std::vector<AblationConfig>& grid, const CvOptions& opts = {});

} // namespace mkd
