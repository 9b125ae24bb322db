#include "mkd/losses.hpp"

#include <algorithm>
#include <cmath>

#include "mkd/errors.hpp"

namespace mkd {

namespace {

constexpr double kKlFloor = 1e-12;

void require_window(const char* op, std::size_t b) {
    if (b < 2) {
        throw ContractError(std::string(op) + ": window too small (b = " + std::to_string(b) +
                            ", need b >= 2)");
    }
}

void require_distribution(const char* op, const Tensor& p) {
    if (p.rows() != 1) throw ShapeError(std::string(op) + ": expects a row vector, got " + p.shape_str());
    double s = 0.0;
    for (double v : p.data()) {
        if (v < 0.0) throw ContractError(std::string(op) + ": negative probability");
        s += v;
    }
    // NaN passes through so the trainer reports it as divergence.
    if (std::isfinite(s) && std::fabs(s - 1.0) > 1e-6) {
        throw ContractError(std::string(op) + ": probabilities sum to " + std::to_string(s));
    }
}

Tensor dot(Graph& g, const Tensor& a, const Tensor& b) { return g.matmul(a, g.transpose(b)); }

Tensor softened(Graph& g, const HeadOutput& h, double tau, bool soft) {
    return soft ? g.softmax_row(g.scale(h.logits, 1.0 / tau)) : h.probs;
}

Tensor window_mean(Graph& g, std::vector<Tensor> terms) {
    return g.mean(g.stack_rows(terms));
}

} // namespace

AccumulationWindow make_window(Graph& g, std::span<const SampleOutput> outputs,
                               std::span<const int> labels) {
    if (outputs.size() != labels.size()) {
        throw ContractError("make_window: " + std::to_string(outputs.size()) + " outputs but " +
                            std::to_string(labels.size()) + " labels");
    }
    AccumulationWindow w;
    std::vector<Tensor> zp, zg, zm;
    for (const auto& o : outputs) {
        if (!o.features.z_g.defined() || !o.heads.g || !o.heads.m) {
            throw MissingModalityError("make_window: sample output lacks teacher branches");
        }
        zp.push_back(o.features.z_p);
        zg.push_back(o.features.z_g);
        zm.push_back(o.features.z_m);
        w.features.push_back(o.features);
        w.heads.push_back(o.heads);
    }
    w.labels.assign(labels.begin(), labels.end());
    if (!outputs.empty()) {
        w.Z_P = g.stack_rows(zp);
        w.Z_G = g.stack_rows(zg);
        w.Z_M = g.stack_rows(zm);
    }
    return w;
}

Tensor covariance(Graph& g, const Tensor& Z) {
    const std::size_t b = Z.rows();
    require_window("covariance", b);
    const Tensor ones = Tensor::filled(1, b, 1.0);
    Tensor colsum = g.matmul(ones, Z);
    Tensor gram = g.matmul(g.transpose(Z), Z);
    Tensor outer = g.matmul(g.transpose(colsum), colsum);
    const double n = static_cast<double>(b);
    return g.scale(g.sub(gram, g.scale(outer, 1.0 / n)), 1.0 / (n - 1.0));
}

Tensor coral_loss(Graph& g, const Tensor& Z_P, const Tensor& Z_G, const Tensor& Z_M) {
    if (Z_P.rows() != Z_G.rows() || Z_P.rows() != Z_M.rows() || Z_P.cols() != Z_G.cols() ||
        Z_P.cols() != Z_M.cols()) {
        throw ShapeError("coral_loss: window shapes differ " + Z_P.shape_str() + ", " +
                         Z_G.shape_str() + ", " + Z_M.shape_str());
    }
    Tensor cp = covariance(g, Z_P);
    Tensor cg = covariance(g, Z_G);
    Tensor cm = covariance(g, Z_M);
    Tensor s = g.add(g.add(g.frobenius_sq(g.sub(cp, cg)), g.frobenius_sq(g.sub(cp, cm))),
                     g.frobenius_sq(g.sub(cg, cm)));
    const double d = static_cast<double>(Z_P.cols());
    return g.scale(s, 1.0 / (4.0 * d * d));
}

Tensor orthogonal_loss(Graph& g, const Tensor& z_p, const Tensor& z_g, const Tensor& z_m) {
    return g.add(g.add(g.abs(dot(g, z_p, z_g)), g.abs(dot(g, z_p, z_m))),
                 g.abs(dot(g, z_g, z_m)));
}

MkdParts mkd_loss(Graph& g, const AccumulationWindow& w, double alpha) {
    if (alpha < 0.0) throw ConfigError("mkd_loss: alpha must be >= 0");
    MkdParts parts;
    parts.coral = coral_loss(g, w.Z_P, w.Z_G, w.Z_M);
    std::vector<Tensor> orth;
    orth.reserve(w.features.size());
    for (const auto& f : w.features) orth.push_back(orthogonal_loss(g, f.z_p, f.z_g, f.z_m));
    parts.orthogonal_mean = window_mean(g, std::move(orth));
    parts.mkd = g.add(parts.coral, g.scale(parts.orthogonal_mean, alpha));
    return parts;
}

Tensor skd_pair(Graph& g, const Tensor& Z_a, const Tensor& Z_b) {
    if (Z_a.rows() != Z_b.rows()) {
        throw ShapeError("skd_pair: row counts differ " + Z_a.shape_str() + " vs " +
                         Z_b.shape_str());
    }
    const std::size_t b = Z_a.rows();
    require_window("skd_pair", b);
    Tensor sa = g.row_l2_normalize(g.matmul(Z_a, g.transpose(Z_a)));
    Tensor sb = g.row_l2_normalize(g.matmul(Z_b, g.transpose(Z_b)));
    const double n = static_cast<double>(b);
    return g.scale(g.frobenius_sq(g.sub(sa, sb)), 1.0 / (n * n));
}

Tensor skd_loss(Graph& g, const AccumulationWindow& w) {
    return g.add(skd_pair(g, w.Z_P, w.Z_M), skd_pair(g, w.Z_P, w.Z_G));
}

Tensor kl_divergence(Graph& g, const Tensor& p, const Tensor& q) {
    require_distribution("kl_divergence", p);
    require_distribution("kl_divergence", q);
    if (p.cols() != q.cols()) {
        throw ShapeError("kl_divergence: " + p.shape_str() + " vs " + q.shape_str());
    }
    double kl = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (p[i] > 0.0) kl += p[i] * std::log(p[i] / std::max(q[i], kKlFloor));
    }
    return g.record("kl_divergence", Tensor::scalar(kl), {p, q},
                    [](const Tensor& o, std::span<Tensor> in) {
                        const double go = o.grad()[0];
                        const Tensor& pv = in[0];
                        const Tensor& qv = in[1];
                        if (in[0].requires_grad()) {
                            auto d = in[0].grad();
                            for (std::size_t i = 0; i < d.size(); ++i) {
                                if (pv[i] > 0.0)
                                    d[i] += go * (std::log(pv[i] / std::max(qv[i], kKlFloor)) + 1.0);
                            }
                        }
                        if (in[1].requires_grad()) {
                            auto d = in[1].grad();
                            for (std::size_t i = 0; i < d.size(); ++i) {
                                if (qv[i] > kKlFloor) d[i] -= go * pv[i] / qv[i];
                            }
                        }
                    });
}

Tensor clod_sample(Graph& g, const HeadOutputs& heads, double tau, bool soft_kl_tau2) {
    if (!(tau > 0.0)) throw ConfigError("clod: temperature must be > 0");
    if (!heads.g || !heads.m) throw MissingModalityError("clod: teacher heads absent");
    Tensor pp = softened(g, heads.p, tau, soft_kl_tau2);
    Tensor pm = softened(g, *heads.m, tau, soft_kl_tau2);
    Tensor pg = softened(g, *heads.g, tau, soft_kl_tau2);
    Tensor s = g.add(g.add(kl_divergence(g, pp, pm), kl_divergence(g, pm, pp)),
                     g.add(kl_divergence(g, pp, pg), kl_divergence(g, pg, pp)));
    return soft_kl_tau2 ? g.scale(s, tau * tau) : s;
}

Tensor clod_loss(Graph& g, std::span<const HeadOutputs> heads, double tau, bool soft_kl_tau2) {
    if (heads.empty()) throw ContractError("clod_loss: empty window");
    std::vector<Tensor> terms;
    terms.reserve(heads.size());
    for (const auto& h : heads) terms.push_back(clod_sample(g, h, tau, soft_kl_tau2));
    return window_mean(g, std::move(terms));
}

Tensor ce_sample(Graph& g, const HeadOutputs& heads, int label) {
    if (label != 0 && label != 1) {
        throw ContractError("ce: label must be 0 or 1, got " + std::to_string(label));
    }
    const auto c = static_cast<std::size_t>(label);
    Tensor s = g.pick(g.log_softmax_row(heads.p.logits), 0, c);
    for (const auto* h : {heads.g ? &*heads.g : nullptr, heads.m ? &*heads.m : nullptr}) {
        if (h) s = g.add(s, g.pick(g.log_softmax_row(h->logits), 0, c));
    }
    return g.scale(s, -1.0);
}

Tensor ce_loss(Graph& g, std::span<const HeadOutputs> heads, std::span<const int> labels) {
    if (heads.size() != labels.size() || heads.empty()) {
        throw ContractError("ce_loss: need one label per head output");
    }
    std::vector<Tensor> terms;
    terms.reserve(heads.size());
    for (std::size_t i = 0; i < heads.size(); ++i) terms.push_back(ce_sample(g, heads[i], labels[i]));
    return window_mean(g, std::move(terms));
}

LossTerms total_loss(Graph& g, const AccumulationWindow& w, const LossConfig& cfg) {
    if (!(cfg.tau > 0.0)) throw ConfigError("total_loss: temperature must be > 0");
    if (cfg.alpha < 0.0) throw ConfigError("total_loss: alpha must be >= 0");
    LossTerms out;
    LossBreakdown& br = out.breakdown;
    Tensor total = ce_loss(g, w.heads, w.labels);
    br.l_ce = total.item();
    if (cfg.enable_mkd) {
        MkdParts mkd = mkd_loss(g, w, cfg.alpha);
        br.l_coral = mkd.coral.item();
        br.l_or = mkd.orthogonal_mean.item();
        br.l_mkd = mkd.mkd.item();
        total = g.add(total, mkd.mkd);
    }
    if (cfg.enable_skd) {
        Tensor skd = skd_loss(g, w);
        br.l_skd = skd.item();
        total = g.add(total, skd);
    }
    if (cfg.enable_clod) {
        Tensor clod = clod_loss(g, w.heads, cfg.tau, cfg.soft_kl_tau2);
        br.l_clod = clod.item();
        total = g.add(total, clod);
    }
    br.l_total = total.item();
    out.total = total;
    return out;
}

} // namespace mkd
