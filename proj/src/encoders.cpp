#include "mkd/encoders.hpp"

#include <cmath>

#include <json.hpp>

#include "binio.hpp"
#include "mkd/errors.hpp"

namespace mkd {

std::string_view to_string(Activation a) {
    switch (a) {
    case Activation::ReLU: return "relu";
    case Activation::Tanh: return "tanh";
    case Activation::Identity: return "identity";
    }
    return "?";
}

Activation activation_from_string(std::string_view s) {
    if (s == "relu") return Activation::ReLU;
    if (s == "tanh") return Activation::Tanh;
    if (s == "identity") return Activation::Identity;
    throw ConfigError("unknown activation '" + std::string(s) + "'");
}

double selu(double x) {
    return x > 0.0 ? kSeluLambda * x : kSeluLambda * kSeluAlpha * std::expm1(x);
}

namespace {

Affine zero_affine(std::size_t in, std::size_t out) {
    return {Tensor(in, out, true), Tensor(1, out, true)};
}

AttentionParams zero_attention(std::size_t d) {
    return {Tensor(d, d, true), Tensor(d, d, true), Tensor(d, 1, true)};
}

Tensor affine(Graph& g, const Tensor& x, const Affine& a) {
    return g.add_row(g.matmul(x, a.weight), a.bias);
}

Tensor activate(Graph& g, const Tensor& x, Activation act) {
    switch (act) {
    case Activation::ReLU: return g.relu(x);
    case Activation::Tanh: return g.tanh(x);
    case Activation::Identity: return x;
    }
    return x;
}

void require_width(const char* op, const Tensor& x, std::size_t want) {
    if (x.cols() != want) {
        throw ConfigError(std::string(op) + ": input width " + std::to_string(x.cols()) +
                          " does not match configured width " + std::to_string(want));
    }
}

// Alpha-dropout keeping zero mean / unit variance under SELU statistics:
// dropped units take the SELU saturation value, then an affine correction.
Tensor alpha_dropout(Graph& g, const Tensor& x, double rate, std::mt19937_64& rng) {
    const double sat = -kSeluLambda * kSeluAlpha;
    const double a = 1.0 / std::sqrt((1.0 - rate) * (1.0 + rate * sat * sat));
    const double b = -a * sat * rate;
    Tensor keep(x.rows(), x.cols());
    Tensor fill(x.rows(), x.cols());
    std::bernoulli_distribution bern(1.0 - rate);
    for (std::size_t i = 0; i < x.size(); ++i) {
        const bool k = bern(rng);
        keep[i] = k ? 1.0 : 0.0;
        fill[i] = (k ? 0.0 : a * sat) + b;
    }
    return g.add(g.scale(g.mul(x, keep), a), fill);
}

} // namespace

std::vector<std::pair<std::string, Tensor>> Model::named_parameters() const {
    return {
        {"fc.weight", fc.weight},       {"fc.bias", fc.bias},
        {"snn.weight", snn.weight},     {"snn.bias", snn.bias},
        {"attn_p.V", attn_p.V},         {"attn_p.U", attn_p.U},
        {"attn_p.W", attn_p.W},         {"attn_g.V", attn_g.V},
        {"attn_g.U", attn_g.U},         {"attn_g.W", attn_g.W},
        {"fuse.weight", fuse.weight},   {"fuse.bias", fuse.bias},
        {"head_p.weight", head_p.weight}, {"head_p.bias", head_p.bias},
        {"head_g.weight", head_g.weight}, {"head_g.bias", head_g.bias},
        {"head_m.weight", head_m.weight}, {"head_m.bias", head_m.bias},
    };
}

Model Model::clone() const {
    Model out = zero_model(config);
    auto src = named_parameters();
    auto dst = out.named_parameters();
    for (std::size_t i = 0; i < src.size(); ++i) {
        auto s = src[i].second.data();
        std::copy(s.begin(), s.end(), dst[i].second.data().begin());
    }
    return out;
}

Model zero_model(const ModelConfig& cfg) {
    if (cfg.d_in == 0 || cfg.d == 0) throw ConfigError("model widths must be positive");
    if (cfg.dropout < 0.0 || cfg.dropout >= 1.0) {
        throw ConfigError("dropout rate must lie in [0, 1)");
    }
    const std::size_t d = cfg.d;
    Model m;
    m.config = cfg;
    m.fc = zero_affine(cfg.d_in, d);
    m.snn = zero_affine(cfg.d_in, d);
    m.attn_p = zero_attention(d);
    m.attn_g = zero_attention(d);
    m.fuse = zero_affine((d + 1) * (d + 1), d);
    m.head_p = zero_affine(d, 2);
    m.head_g = zero_affine(d, 2);
    m.head_m = zero_affine(d, 2);
    return m;
}

Tensor compress_pathology(Graph& g, const Tensor& bag, const Model& m) {
    require_width("compress_pathology", bag, m.config.d_in);
    return activate(g, affine(g, bag, m.fc), m.config.fc_activation);
}

Tensor snn_encode(Graph& g, const Tensor& genomic, const Model& m, bool training,
                  std::mt19937_64* rng) {
    require_width("snn_encode", genomic, m.config.d_in);
    Tensor h = g.selu(affine(g, genomic, m.snn));
    if (training && m.config.dropout > 0.0) {
        if (rng == nullptr) throw ContractError("snn_encode: training mode needs an rng");
        h = alpha_dropout(g, h, m.config.dropout, *rng);
    }
    return h;
}

Pooled abmil_pool(Graph& g, const Tensor& h, const AttentionParams& p) {
    if (h.rows() == 0) throw ShapeError("abmil_pool: empty bag");
    require_width("abmil_pool", h, p.V.rows());
    Tensor gated = g.mul(g.tanh(g.matmul(h, p.V)), g.sigmoid(g.matmul(h, p.U)));
    Tensor scores = g.transpose(g.matmul(gated, p.W)); // 1 x n
    Tensor a = g.softmax_row(scores);
    return {g.matmul(a, h), a};
}

Tensor fuse_multimodal(Graph& g, const Tensor& z_p, const Tensor& z_g, const Model& m) {
    const std::size_t d = m.config.d;
    if (z_p.rows() != 1 || z_g.rows() != 1 || z_p.cols() != d || z_g.cols() != d) {
        throw ConfigError("fuse_multimodal: expected two 1x" + std::to_string(d) +
                          " inputs, got " + z_p.shape_str() + " and " + z_g.shape_str());
    }
    Tensor a = z_p, b = z_g;
    if (m.config.detach_fusion) {
        a = z_p.clone();
        a.set_requires_grad(false);
        b = z_g.clone();
        b.set_requires_grad(false);
    }
    const Tensor one = Tensor::scalar(1.0);
    Tensor k = g.kron(g.concat_cols(a, one), g.concat_cols(b, one));
    return g.relu(affine(g, k, m.fuse));
}

HeadOutput classify(Graph& g, const Tensor& z, const Affine& head) {
    require_width("classify", z, head.weight.rows());
    Tensor logits = affine(g, z, head);
    return {logits, g.softmax_row(logits)};
}

SampleOutput forward_sample(Graph& g, const PathologyBag& bag, const GenomicMatrix* genomic,
                            const Model& m, const ForwardOptions& opts) {
    SampleOutput out;
    Pooled pp = abmil_pool(g, compress_pathology(g, bag.features, m), m.attn_p);
    out.features.z_p = pp.z;
    out.attention_p = pp.attention;
    out.heads.p = classify(g, pp.z, m.head_p);
    if (opts.mode == ForwardMode::PathologyOnly) return out;

    if (genomic == nullptr) {
        throw MissingModalityError("sample '" + bag.sample_id +
                                   "' has no genomic matrix (multimodal forward)");
    }
    Pooled pg = abmil_pool(g, snn_encode(g, genomic->features, m, opts.training, opts.rng),
                           m.attn_g);
    out.features.z_g = pg.z;
    out.attention_g = pg.attention;
    out.features.z_m = fuse_multimodal(g, pp.z, pg.z, m);
    out.heads.g = classify(g, pg.z, m.head_g);
    out.heads.m = classify(g, out.features.z_m, m.head_m);
    return out;
}

// ---- checkpoint ----------------------------------------------------------

std::string model_config_json(const ModelConfig& cfg) {
    nlohmann::ordered_json j;
    j["d_in"] = cfg.d_in;
    j["d"] = cfg.d;
    j["K"] = cfg.K;
    j["task"] = std::string(to_string(cfg.task));
    j["seed"] = cfg.seed;
    j["dropout"] = cfg.dropout;
    j["detach_fusion"] = cfg.detach_fusion;
    j["fc_activation"] = std::string(to_string(cfg.fc_activation));
    return j.dump();
}

ModelConfig model_config_from_json(const std::string& text) {
    ModelConfig cfg;
    try {
        auto j = nlohmann::json::parse(text);
        cfg.d_in = j.at("d_in").get<std::size_t>();
        cfg.d = j.at("d").get<std::size_t>();
        cfg.K = j.at("K").get<std::size_t>();
        cfg.task = task_from_string(j.at("task").get<std::string>());
        cfg.seed = j.at("seed").get<std::uint64_t>();
        cfg.dropout = j.value("dropout", 0.25);
        cfg.detach_fusion = j.value("detach_fusion", false);
        cfg.fc_activation = activation_from_string(j.value("fc_activation", "relu"));
    } catch (const nlohmann::json::exception& e) {
        throw IngestError(std::string("invalid model configuration: ") + e.what());
    }
    return cfg;
}

void save_checkpoint(const std::string& path, const Model& m) {
    std::string out = "MKDC";
    binio::put_u32(out, kCheckpointVersion);
    const std::string cfg = model_config_json(m.config);
    binio::put_u32(out, static_cast<std::uint32_t>(cfg.size()));
    out += cfg;
    auto params = m.named_parameters();
    binio::put_u32(out, static_cast<std::uint32_t>(params.size()));
    for (const auto& [name, t] : params) {
        binio::put_u32(out, static_cast<std::uint32_t>(name.size()));
        out += name;
        binio::put_u32(out, static_cast<std::uint32_t>(t.rows()));
        binio::put_u32(out, static_cast<std::uint32_t>(t.cols()));
        for (double v : t.data()) binio::put_f64(out, v);
    }
    binio::write_file_atomic(path, out);
}

Model load_checkpoint(const std::string& path) {
    const std::string bytes = binio::read_file(path);
    binio::Reader rd(bytes, path);
    if (rd.take(4, "magic") != "MKDC") rd.fail("bad magic (expected MKDC)", 0);
    const auto version_at = rd.offset();
    const auto version = rd.u32("version");
    if (version != kCheckpointVersion) {
        rd.fail("unsupported checkpoint version " + std::to_string(version), version_at);
    }
    const auto cfg_len = rd.u32("config length");
    ModelConfig cfg = model_config_from_json(std::string(rd.take(cfg_len, "config")));
    Model m = zero_model(cfg);
    auto params = m.named_parameters();
    const auto count_at = rd.offset();
    const auto count = rd.u32("tensor count");
    if (count != params.size()) {
        rd.fail("expected " + std::to_string(params.size()) + " tensors, found " +
                    std::to_string(count),
                count_at);
    }
    for (auto& [name, t] : params) {
        const auto at = rd.offset();
        const auto name_len = rd.u32("tensor name length");
        const std::string got(rd.take(name_len, "tensor name"));
        if (got != name) rd.fail("expected tensor '" + name + "', found '" + got + "'", at);
        const auto shape_at = rd.offset();
        const auto rows = rd.u32("rows");
        const auto cols = rd.u32("cols");
        if (rows != t.rows() || cols != t.cols()) {
            rd.fail("tensor '" + name + "' has shape (" + std::to_string(rows) + "x" +
                        std::to_string(cols) + "), expected " + t.shape_str(),
                    shape_at);
        }
        for (double& v : t.data()) v = rd.f64("tensor values");
    }
    if (!rd.at_end()) rd.fail("trailing bytes after last tensor", rd.offset());
    return m;
}

} // namespace mkd
