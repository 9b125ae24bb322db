#pragma once

// The three aggregators: pathology student (FC compressor -> gated ABMIL),
// genomic teacher (SNN -> gated ABMIL) and multimodal teacher (bias-augmented
// Kronecker fusion of the two pooled vectors). Each branch has a binary head.

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "mkd/data.hpp"
#include "mkd/tensor.hpp"

namespace mkd {

enum class Activation { ReLU, Tanh, Identity };

std::string_view to_string(Activation a);
Activation activation_from_string(std::string_view s);

struct ModelConfig {
    std::size_t d_in = 32;  // instance / gene-row width
    std::size_t d = 256;    // internal width
    std::size_t K = 0;      // number of ranked genes behind the genomic matrix
    Task task = Task::ER;
    std::uint64_t seed = 0;
    double dropout = 0.25;  // SNN alpha-dropout rate
    bool detach_fusion = false;
    Activation fc_activation = Activation::ReLU;
};

/// Gated attention: s_i = W^T (tanh(V h_i^T) * sigmoid(U h_i^T)).
struct AttentionParams {
    Tensor V; // d x d
    Tensor U; // d x d
    Tensor W; // d x 1
};

struct Affine {
    Tensor weight; // in x out
    Tensor bias;   // 1 x out
};

struct Model {
    ModelConfig config;
    Affine fc;            // pathology compressor d_in -> d
    Affine snn;           // genomic SNN d_in -> d
    AttentionParams attn_p;
    AttentionParams attn_g;
    Affine fuse;          // (d+1)^2 -> d
    Affine head_p, head_g, head_m; // d -> 2

    /// Stable, named handles to every learnable tensor.
    std::vector<std::pair<std::string, Tensor>> named_parameters() const;
    Model clone() const;
};

/// All-zero model with gradients enabled.
Model zero_model(const ModelConfig& cfg);

struct DecomposedFeatures {
    Tensor z_p, z_g, z_m; // each 1 x d; z_g / z_m undefined in pathology-only mode
};

struct HeadOutput {
    Tensor logits; // 1 x 2
    Tensor probs;  // 1 x 2
};

struct HeadOutputs {
    HeadOutput p;
    std::optional<HeadOutput> g, m;
};

struct Pooled {
    Tensor z;         // 1 x d
    Tensor attention; // 1 x n
};

enum class ForwardMode { Multimodal, PathologyOnly };

/// Training mode enables SNN alpha-dropout driven by `rng`; eval is
/// deterministic.
struct ForwardOptions {
    ForwardMode mode = ForwardMode::Multimodal;
    bool training = false;
    std::mt19937_64* rng = nullptr;
};

struct SampleOutput {
    DecomposedFeatures features;
    HeadOutputs heads;
    Tensor attention_p;
    Tensor attention_g;
};

Tensor compress_pathology(Graph& g, const Tensor& bag, const Model& m);
Tensor snn_encode(Graph& g, const Tensor& genomic, const Model& m, bool training,
                  std::mt19937_64* rng);
Pooled abmil_pool(Graph& g, const Tensor& h, const AttentionParams& p);
Tensor fuse_multimodal(Graph& g, const Tensor& z_p, const Tensor& z_g, const Model& m);
HeadOutput classify(Graph& g, const Tensor& z, const Affine& head);

SampleOutput forward_sample(Graph& g, const PathologyBag& bag, const GenomicMatrix* genomic,
                            const Model& m, const ForwardOptions& opts = {});

/// Standalone SELU for scalar use (tests, documentation of the constants).
double selu(double x);

// ---- checkpoint container ------------------------------------------------
//
// "MKDC" | u32 version | u32 config_len | config JSON | u32 n_tensors |
// n_tensors x (u32 name_len | name | u32 rows | u32 cols | rows*cols f64)
// All integers and floats little-endian.

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::string& path, const Model& m);
Model load_checkpoint(const std::string& path);

std::string model_config_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const std::string& text);

} // namespace mkd
