#pragma once

// Decomposition (CORAL + orthogonality), similarity-preserving, mutual-KL and
// cross-entropy objectives over one gradient-accumulation window.

#include <span>
#include <vector>

#include "mkd/encoders.hpp"
#include "mkd/tensor.hpp"

namespace mkd {

/// Features and head outputs of the b samples that share one optimizer step.
struct AccumulationWindow {
    Tensor Z_P, Z_G, Z_M;                  // b x d, rows in arrival order
    std::vector<DecomposedFeatures> features;
    std::vector<HeadOutputs> heads;
    std::vector<int> labels;

    std::size_t size() const { return labels.size(); }
};

/// Stacks per-sample multimodal outputs into a window on `g`.
AccumulationWindow make_window(Graph& g, std::span<const SampleOutput> outputs,
                               std::span<const int> labels);

struct LossConfig {
    double alpha = 1.0 / 6.0;
    double tau = 4.0;
    bool enable_mkd = true;
    bool enable_skd = true;
    bool enable_clod = true;
    /// true: KL on softmax(logits / tau) scaled by tau^2; false: KL on the
    /// heads' plain probabilities.
    bool soft_kl_tau2 = true;
};

struct LossBreakdown {
    double l_ce = 0.0;
    double l_coral = 0.0;
    double l_or = 0.0;
    double l_mkd = 0.0;
    double l_skd = 0.0;
    double l_clod = 0.0;
    double l_total = 0.0;
};

struct LossTerms {
    Tensor total; // 1x1, differentiable
    LossBreakdown breakdown;
};

/// Unbiased covariance (1/(b-1)) of the rows of Z (b x d), b >= 2.
Tensor covariance(Graph& g, const Tensor& Z);

/// (1/4d^2) * sum of squared Frobenius distances between the three
/// covariance matrices.
Tensor coral_loss(Graph& g, const Tensor& Z_P, const Tensor& Z_G, const Tensor& Z_M);

/// |<z_p,z_g>| + |<z_p,z_m>| + |<z_g,z_m>| for 1 x d vectors.
Tensor orthogonal_loss(Graph& g, const Tensor& z_p, const Tensor& z_g, const Tensor& z_m);

struct MkdParts {
    Tensor coral;
    Tensor orthogonal_mean;
    Tensor mkd;
};

/// CORAL over the window plus alpha times the window-mean orthogonality.
MkdParts mkd_loss(Graph& g, const AccumulationWindow& w, double alpha);

/// (1/b^2) || rownorm(A A^T) - rownorm(B B^T) ||_F^2
Tensor skd_pair(Graph& g, const Tensor& Z_a, const Tensor& Z_b);

/// skd_pair(Z_P, Z_M) + skd_pair(Z_P, Z_G)
Tensor skd_loss(Graph& g, const AccumulationWindow& w);

/// sum_i p_i log(p_i / max(q_i, 1e-12)), 0 log 0 := 0. Inputs must be
/// probability rows (nonnegative, summing to 1 within 1e-6).
Tensor kl_divergence(Graph& g, const Tensor& p, const Tensor& q);

/// Symmetric student/teacher KL for one sample.
Tensor clod_sample(Graph& g, const HeadOutputs& heads, double tau, bool soft_kl_tau2 = true);
/// Window mean of clod_sample.
Tensor clod_loss(Graph& g, std::span<const HeadOutputs> heads, double tau,
                 bool soft_kl_tau2 = true);

/// Sum over present heads of -log p[label], via log-softmax of the logits.
Tensor ce_sample(Graph& g, const HeadOutputs& heads, int label);
/// Window mean of ce_sample.
Tensor ce_loss(Graph& g, std::span<const HeadOutputs> heads, std::span<const int> labels);

/// L = L_CE + L_MKD + L_SKD + L_CLOD with disabled terms omitted (reported
/// as exactly 0).
LossTerms total_loss(Graph& g, const AccumulationWindow& w, const LossConfig& cfg);

} // namespace mkd
