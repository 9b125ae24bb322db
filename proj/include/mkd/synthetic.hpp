#pragma once

// Seed-deterministic synthetic cohort: bags of instance embeddings, raw gene
// expression with survival, and IHC-style labels for all three tasks. The
// decisive signal per task is split into a modality-general part (seen by
// both modalities, energy fraction gamma) and modality-specific parts.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "mkd/cox.hpp"
#include "mkd/data.hpp"

namespace mkd {

struct SyntheticSpec {
    std::size_t n_samples = 400;
    std::size_t n_p_min = 8;
    std::size_t n_p_max = 24;
    std::size_t d_in = 32;
    std::size_t n_genes = 256;
    std::size_t n_signal_genes = 48;
    std::size_t n_causal_genes = 24;
    std::size_t K = 64;               // genes kept after Cox ranking
    double gamma = 0.7;               // modality-general share of signal energy
    double signal_strength = 1.5;     // separation of class means in latent units
    double noise_scale = 1.0;
    double label_balance = 0.5;       // P(y = 1)
    double label_noise = 0.2;         // probability an observed label is flipped
    double witness_fraction = 0.3;    // share of instances carrying the latent
    double background_scale = 1.0;    // amplitude of the low-rank nuisance in background instances
    double gene_noise = 0.3;          // gene-level noise, relative to noise_scale
    double slide_noise = 0.3;         // per-slide noise on the pathology view of the latent
    double hazard_beta = 0.5;         // log-hazard per unit of causal gene score
    double censoring_rate = 0.3;      // relative to the baseline hazard
    double pathology_only_fraction = 0.0;
    std::uint64_t seed = 0;

    /// Throws ConfigError on an invalid spec.
    void validate() const;
};

std::string synthetic_spec_json(const SyntheticSpec& s);
/// Fields missing from the JSON keep the values already in `base`.
SyntheticSpec synthetic_spec_from_json(const std::string& text, SyntheticSpec base = {});

/// Generator internals exposed for probe tests.
struct SyntheticTruth {
    std::size_t latent_general = 2, latent_path = 2, latent_gene = 2; // per task
    std::vector<std::size_t> signal_genes;  // raw gene indices
    std::vector<std::size_t> causal_genes;  // subset of signal_genes
    std::vector<std::array<int, 3>> true_labels; // before label noise, per sample
    // Pathology latent layout per task t at offset t*4: general(2), path(2);
    // genomic latent likewise with gene(2) in place of path.
    Tensor A_p; // d_in x 12, orthonormal columns
    Tensor A_g; // n_signal_genes x 12, rows follow signal_genes
    std::array<std::vector<double>, 3> m_gen, m_path, m_gene; // class-mean directions
    std::vector<double> gene_center, gene_scale; // per-gene z-scoring constants
};

struct SyntheticCohort {
    SyntheticSpec spec;
    Dataset data;
    std::vector<SurvivalRecord> records; // z-scored raw expression + survival
    GeneRanking ranking;
    SyntheticTruth truth;
};

SyntheticCohort generate_synthetic(const SyntheticSpec& spec);

/// Cox test bed: `n_genes` iid standard-normal genes, exponential survival
/// with log-hazard beta * sum of the `n_causal` causal genes (chosen at
/// random), independent exponential censoring at ~30%.
struct PlantedCohort {
    std::vector<SurvivalRecord> records;
    std::vector<std::size_t> causal;
};

PlantedCohort planted_survival_cohort(std::size_t n, std::size_t n_genes, std::size_t n_causal,
                                      double beta, std::uint64_t seed);

} // namespace mkd
