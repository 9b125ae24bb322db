#include "mkd/gradsuite.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <random>

#include "mkd/encoders.hpp"
#include "mkd/gradcheck.hpp"
#include "mkd/losses.hpp"

namespace mkd {

namespace {

Tensor randn(std::size_t r, std::size_t c, std::mt19937_64& rng, double scale, bool grad) {
    std::normal_distribution<double> n(0.0, scale);
    std::vector<double> v(r * c);
    for (auto& x : v) x = n(rng);
    return Tensor::from(r, c, std::move(v), grad);
}

struct Window {
    std::vector<Tensor> zp, zg, zm, lp, lg, lm;
    std::vector<int> labels;

    std::vector<Tensor> leaves() const {
        std::vector<Tensor> out;
        for (const auto* v : {&zp, &zg, &zm, &lp, &lg, &lm}) out.insert(out.end(), v->begin(), v->end());
        return out;
    }

    AccumulationWindow build(Graph& g) const {
        AccumulationWindow w;
        w.Z_P = g.stack_rows(zp);
        w.Z_G = g.stack_rows(zg);
        w.Z_M = g.stack_rows(zm);
        for (std::size_t i = 0; i < labels.size(); ++i) {
            w.features.push_back({zp[i], zg[i], zm[i]});
            HeadOutputs h;
            h.p = {lp[i], g.softmax_row(lp[i])};
            h.g = HeadOutput{lg[i], g.softmax_row(lg[i])};
            h.m = HeadOutput{lm[i], g.softmax_row(lm[i])};
            w.heads.push_back(h);
        }
        w.labels = labels;
        return w;
    }
};

Window random_window(std::size_t b, std::size_t d, std::mt19937_64& rng) {
    Window w;
    std::bernoulli_distribution coin(0.5);
    for (std::size_t i = 0; i < b; ++i) {
        w.zp.push_back(randn(1, d, rng, 1.0, true));
        w.zg.push_back(randn(1, d, rng, 1.0, true));
        w.zm.push_back(randn(1, d, rng, 1.0, true));
        w.lp.push_back(randn(1, 2, rng, 1.5, true));
        w.lg.push_back(randn(1, 2, rng, 1.5, true));
        w.lm.push_back(randn(1, 2, rng, 1.5, true));
        w.labels.push_back(coin(rng) ? 1 : 0);
    }
    return w;
}

// Xavier-scale weights keep the gated attention and heads out of
// saturation, where gradients shrink below finite-difference resolution.
Model random_model(std::size_t d_in, std::size_t d, std::mt19937_64& rng) {
    ModelConfig cfg;
    cfg.d_in = d_in;
    cfg.d = d;
    Model m = zero_model(cfg);
    for (auto& [name, t] : m.named_parameters()) {
        const double scale = name.find("bias") != std::string::npos
                                 ? 0.1
                                 : std::sqrt(2.0 / double(t.rows() + t.cols()));
        std::normal_distribution<double> n(0.0, scale);
        for (auto& v : t.data()) v = n(rng);
    }
    return m;
}

} // namespace

std::vector<GradSuiteEntry> run_gradcheck_suite(const GradSuiteOptions& opts) {
    std::vector<GradSuiteEntry> entries;
    std::map<std::string, std::size_t> index;
    auto record = [&](const std::string& name, const GradCheckReport& r) {
        auto it = index.find(name);
        if (it == index.end()) {
            it = index.emplace(name, entries.size()).first;
            entries.push_back({name, 0.0, 0, true});
        }
        auto& e = entries[it->second];
        e.max_rel_error = std::max(e.max_rel_error, r.worst);
        e.checks += 1;
        e.passed = e.passed && r.passed;
    };
    auto check = [&](const std::string& name, const LossBuilder& f, std::vector<Tensor> leaves) {
        record(name, grad_check(f, leaves, opts.h, opts.tol));
    };

    for (std::size_t d : opts.widths) {
        for (std::uint64_t seed = 0; seed < opts.seeds; ++seed) {
            std::mt19937_64 rng(seed * 1000003u + d);
            const Window w = random_window(opts.window, d, rng);
            const auto wl = w.leaves();
            check("loss/coral", [&](Graph& g) { auto a = w.build(g); return coral_loss(g, a.Z_P, a.Z_G, a.Z_M); }, wl);
            check("loss/or", [&](Graph& g) { return orthogonal_loss(g, w.zp[0], w.zg[0], w.zm[0]); },
                  {w.zp[0], w.zg[0], w.zm[0]});
            check("loss/mkd", [&](Graph& g) { return mkd_loss(g, w.build(g), 1.0 / 6.0).mkd; }, wl);
            check("loss/skd", [&](Graph& g) { return skd_loss(g, w.build(g)); }, wl);
            check("loss/clod", [&](Graph& g) { return clod_loss(g, w.build(g).heads, 4.0); }, wl);
            check("loss/ce", [&](Graph& g) { auto a = w.build(g); return ce_loss(g, a.heads, a.labels); }, wl);
            check("loss/total", [&](Graph& g) { return total_loss(g, w.build(g), LossConfig{}).total; }, wl);

            const std::size_t d_in = 5;
            Model m = random_model(d_in, d, rng);
            Tensor bag = randn(4, d_in, rng, 1.0, true);
            Tensor gene = randn(3, d_in, rng, 1.0, true);
            Tensor h = randn(4, d, rng, 1.0, true);
            Tensor zp = randn(1, d, rng, 1.0, true), zg = randn(1, d, rng, 1.0, true);
            Tensor wd = randn(1, d, rng, 1.0, false), w2 = randn(1, 2, rng, 1.0, false);
            Tensor wn = randn(4, d, rng, 1.0, false), wg = randn(3, d, rng, 1.0, false);
            auto proj = [](Graph& g, const Tensor& x, const Tensor& wt) { return g.sum(g.mul(x, wt)); };

            check("encoder/compress", [&](Graph& g) { return proj(g, compress_pathology(g, bag, m), wn); },
                  {bag, m.fc.weight, m.fc.bias});
            check("encoder/snn",
                  [&](Graph& g) {
                      std::mt19937_64 drop(seed);
                      return proj(g, snn_encode(g, gene, m, true, &drop), wg);
                  },
                  {gene, m.snn.weight, m.snn.bias});
            check("encoder/abmil", [&](Graph& g) { return proj(g, abmil_pool(g, h, m.attn_p).z, wd); },
                  {h, m.attn_p.V, m.attn_p.U, m.attn_p.W});
            check("encoder/fusion", [&](Graph& g) { return proj(g, fuse_multimodal(g, zp, zg, m), wd); },
                  {zp, zg, m.fuse.weight, m.fuse.bias});
            check("encoder/head", [&](Graph& g) { return proj(g, classify(g, zp, m.head_p).probs, w2); },
                  {zp, m.head_p.weight, m.head_p.bias});
        }
    }
    return entries;
}

} // namespace mkd
