#include "mkd/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <random>

#include <json.hpp>

#include "binio.hpp"
#include "mkd/errors.hpp"
#include "mkd/inference.hpp"
#include "mkd/metrics.hpp"

namespace mkd {

namespace {

using Json = nlohmann::ordered_json;

std::mt19937_64 derive_rng(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(b)};
    return std::mt19937_64(seq);
}

enum Stream : std::uint64_t { kInit = 0, kShuffle = 1, kDropout = 2 };

std::string g17(double v) {
    if (std::isnan(v)) return "NaN";
    if (std::isinf(v)) return v > 0 ? "Infinity" : "-Infinity";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

bool finite(const LossBreakdown& b) {
    for (double v : {b.l_ce, b.l_coral, b.l_or, b.l_mkd, b.l_skd, b.l_clod, b.l_total})
        if (!std::isfinite(v)) return false;
    return true;
}

std::string breakdown_text(const LossBreakdown& b) {
    return "l_ce=" + g17(b.l_ce) + " l_coral=" + g17(b.l_coral) + " l_or=" + g17(b.l_or) +
           " l_mkd=" + g17(b.l_mkd) + " l_skd=" + g17(b.l_skd) + " l_clod=" + g17(b.l_clod) +
           " l_total=" + g17(b.l_total);
}

} // namespace

void TrainConfig::validate() const {
    auto fail = [](const std::string& m) { throw ConfigError("train config: " + m); };
    if (!(lr > 0.0)) fail("lr must be > 0");
    if (!(weight_decay >= 0.0)) fail("weight_decay must be >= 0");
    if (!(tau > 0.0)) fail("tau must be > 0");
    if (!(alpha >= 0.0)) fail("alpha must be >= 0");
    if (window_b < 2) fail("window_b must be >= 2");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) fail("betas must lie in [0, 1)");
    if (!(eps > 0.0)) fail("eps must be > 0");
    if (d < 1) fail("d must be >= 1");
    if (!(dropout >= 0.0 && dropout < 1.0)) fail("dropout must lie in [0, 1)");
}

LossConfig TrainConfig::loss_config() const {
    LossConfig c;
    c.alpha = alpha;
    c.tau = tau;
    c.enable_mkd = enable_mkd;
    c.enable_skd = enable_skd;
    c.enable_clod = enable_clod;
    c.soft_kl_tau2 = soft_kl_tau2;
    return c;
}

ModelConfig TrainConfig::model_config(std::size_t d_in, std::size_t K) const {
    ModelConfig m;
    m.d_in = d_in;
    m.d = d;
    m.K = K;
    m.task = task;
    m.seed = seed;
    m.dropout = dropout;
    m.detach_fusion = detach_fusion;
    m.fc_activation = fc_activation;
    return m;
}

std::string train_config_json(const TrainConfig& c) {
    Json j;
    j["lr"] = c.lr;
    j["weight_decay"] = c.weight_decay;
    j["tau"] = c.tau;
    j["alpha"] = c.alpha;
    j["window_b"] = c.window_b;
    j["epochs"] = c.epochs;
    j["seed"] = c.seed;
    j["task"] = std::string(to_string(c.task));
    j["enable_mkd"] = c.enable_mkd;
    j["enable_skd"] = c.enable_skd;
    j["enable_clod"] = c.enable_clod;
    j["soft_kl_tau2"] = c.soft_kl_tau2;
    j["beta1"] = c.beta1;
    j["beta2"] = c.beta2;
    j["eps"] = c.eps;
    j["d"] = c.d;
    j["dropout"] = c.dropout;
    j["detach_fusion"] = c.detach_fusion;
    j["fc_activation"] = std::string(to_string(c.fc_activation));
    j["log_wall_time"] = c.log_wall_time;
    return j.dump(2);
}

TrainConfig train_config_from_json(const std::string& text, TrainConfig c) {
    Json j;
    try {
        j = Json::parse(text);
    } catch (const Json::exception& e) {
        throw ConfigError(std::string("train config: invalid JSON: ") + e.what());
    }
    if (j.contains("train") && j.at("train").is_object()) j = j.at("train");
    auto get = [&](const char* key, auto& field) {
        if (!j.contains(key)) return;
        try {
            j.at(key).get_to(field);
        } catch (const Json::exception& e) {
            throw ConfigError(std::string("train config: field '") + key + "': " + e.what());
        }
    };
    get("lr", c.lr);
    get("weight_decay", c.weight_decay);
    get("tau", c.tau);
    get("alpha", c.alpha);
    get("window_b", c.window_b);
    get("epochs", c.epochs);
    get("seed", c.seed);
    std::string s;
    if (j.contains("task")) {
        get("task", s);
        c.task = task_from_string(s);
    }
    get("enable_mkd", c.enable_mkd);
    get("enable_skd", c.enable_skd);
    get("enable_clod", c.enable_clod);
    get("soft_kl_tau2", c.soft_kl_tau2);
    get("beta1", c.beta1);
    get("beta2", c.beta2);
    get("eps", c.eps);
    get("d", c.d);
    get("dropout", c.dropout);
    get("detach_fusion", c.detach_fusion);
    if (j.contains("fc_activation")) {
        get("fc_activation", s);
        c.fc_activation = activation_from_string(s);
    }
    get("log_wall_time", c.log_wall_time);
    return c;
}

// ---- optimizer -------------------------------------------------------------

void optimizer_step(std::span<Tensor> params, OptimizerState& st, const TrainConfig& cfg) {
    if (st.m.empty()) {
        for (const auto& p : params) {
            st.m.emplace_back(p.size(), 0.0);
            st.v.emplace_back(p.size(), 0.0);
        }
    }
    if (st.m.size() != params.size()) throw ContractError("optimizer_step: parameter count changed");
    ++st.step;
    const double t = static_cast<double>(st.step);
    const double c1 = 1.0 - std::pow(cfg.beta1, t);
    const double c2 = 1.0 - std::pow(cfg.beta2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto theta = params[i].data();
        auto grad = params[i].grad();
        auto& m = st.m[i];
        auto& v = st.v[i];
        if (m.size() != theta.size()) throw ContractError("optimizer_step: parameter shape changed");
        for (std::size_t k = 0; k < theta.size(); ++k) {
            const double g = grad.empty() ? 0.0 : grad[k];
            m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g;
            v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g * g;
            const double mhat = m[k] / c1, vhat = v[k] / c2;
            theta[k] -= cfg.lr * (mhat / (std::sqrt(vhat) + cfg.eps) + cfg.weight_decay * theta[k]);
        }
    }
}

// ---- initialisation --------------------------------------------------------

Model init_params(const ModelConfig& cfg, std::uint64_t seed) {
    Model m = zero_model(cfg);
    std::mt19937_64 rng = derive_rng(seed, kInit, 0);
    auto xavier = [&](Tensor& w) {
        const double bound = std::sqrt(6.0 / double(w.rows() + w.cols()));
        std::uniform_real_distribution<double> U(-bound, bound);
        for (double& v : w.data()) v = U(rng);
    };
    xavier(m.fc.weight);
    {
        std::normal_distribution<double> N(0.0, 1.0 / std::sqrt(double(m.snn.weight.rows())));
        for (double& v : m.snn.weight.data()) v = N(rng);
    }
    for (auto* a : {&m.attn_p, &m.attn_g}) {
        xavier(a->V);
        xavier(a->U);
        xavier(a->W);
    }
    xavier(m.fuse.weight);
    xavier(m.head_p.weight);
    xavier(m.head_g.weight);
    xavier(m.head_m.weight);
    return m;
}

std::vector<Tensor> model_parameters(const Model& m) {
    std::vector<Tensor> out;
    for (auto& [name, t] : m.named_parameters()) out.push_back(t);
    return out;
}

// ---- log -------------------------------------------------------------------

std::string TrainLog::to_jsonl(bool wall_time) const {
    std::string out;
    std::size_t si = 0;
    auto emit_steps_until = [&](std::size_t epoch) {
        for (; si < steps.size() && steps[si].epoch <= epoch; ++si) {
            const auto& s = steps[si];
            const auto& b = s.loss;
            out += "{\"type\":\"step\",\"step\":" + std::to_string(s.step) +
                   ",\"epoch\":" + std::to_string(s.epoch) + ",\"window\":" + std::to_string(s.window) +
                   ",\"l_ce\":" + g17(b.l_ce) + ",\"l_coral\":" + g17(b.l_coral) +
                   ",\"l_or\":" + g17(b.l_or) + ",\"l_mkd\":" + g17(b.l_mkd) +
                   ",\"l_skd\":" + g17(b.l_skd) + ",\"l_clod\":" + g17(b.l_clod) +
                   ",\"l_total\":" + g17(b.l_total);
            if (wall_time) out += ",\"wall_seconds\":" + g17(s.wall_seconds);
            out += "}\n";
        }
    };
    for (const auto& e : epochs) {
        emit_steps_until(e.epoch);
        out += "{\"type\":\"epoch\",\"epoch\":" + std::to_string(e.epoch) +
               ",\"steps\":" + std::to_string(e.steps) +
               ",\"skipped_singletons\":" + std::to_string(e.skipped_singletons) +
               ",\"excluded\":" + std::to_string(e.excluded) + ",\"mean_total\":" + g17(e.mean_total) +
               ",\"mean_ce\":" + g17(e.mean_ce) +
               ",\"val_auc\":" + (e.val_auc ? g17(*e.val_auc) : std::string("null")) + "}\n";
    }
    emit_steps_until(~std::size_t{0});
    return out;
}

// ---- training loop ---------------------------------------------------------

std::vector<const Sample*> training_samples(const Dataset& data, Task task) {
    std::vector<const Sample*> out;
    for (const auto& s : data) {
        if (s.labels.get(task) && s.genomic) out.push_back(&s);
    }
    return out;
}

EpochSummary train_epoch(Model& m, const Dataset& data, const TrainConfig& cfg, OptimizerState& state,
                         std::size_t epoch, TrainLog& log) {
    auto samples = training_samples(data, cfg.task);
    EpochSummary summary;
    summary.epoch = epoch;
    summary.excluded = data.size() - samples.size();
    if (samples.size() < cfg.window_b) {
        throw ContractError("train_epoch: " + std::to_string(samples.size()) +
                            " usable samples, fewer than window_b = " + std::to_string(cfg.window_b));
    }
    auto shuffle_rng = derive_rng(cfg.seed, kShuffle, epoch);
    std::shuffle(samples.begin(), samples.end(), shuffle_rng);
    auto dropout_rng = derive_rng(cfg.seed, kDropout, epoch);

    auto params = model_parameters(m);
    const LossConfig lcfg = cfg.loss_config();
    ForwardOptions opts;
    opts.mode = ForwardMode::Multimodal;
    opts.training = true;
    opts.rng = &dropout_rng;

    double sum_total = 0.0, sum_ce = 0.0;
    for (std::size_t start = 0; start < samples.size(); start += cfg.window_b) {
        const std::size_t b = std::min(cfg.window_b, samples.size() - start);
        if (b < 2) {
            ++summary.skipped_singletons;
            continue;
        }
        const auto t0 = std::chrono::steady_clock::now();
        Graph g;
        std::vector<SampleOutput> outs;
        std::vector<int> labels;
        outs.reserve(b);
        for (std::size_t i = start; i < start + b; ++i) {
            const Sample& s = *samples[i];
            outs.push_back(forward_sample(g, s.pathology, &*s.genomic, m, opts));
            labels.push_back(*s.labels.get(cfg.task));
        }
        const AccumulationWindow w = make_window(g, outs, labels);
        const LossTerms terms = total_loss(g, w, lcfg);

        StepRecord rec;
        rec.step = state.step + 1;
        rec.epoch = epoch;
        rec.window = b;
        rec.loss = terms.breakdown;
        if (!finite(terms.breakdown)) {
            log.steps.push_back(rec);
            throw DivergenceError("non-finite loss at step " + std::to_string(rec.step) + " (epoch " +
                                  std::to_string(epoch) + "): " + breakdown_text(terms.breakdown));
        }
        for (auto& p : params) p.zero_grad();
        g.backward(terms.total);
        optimizer_step(params, state, cfg);
        rec.wall_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        log.steps.push_back(rec);
        ++summary.steps;
        sum_total += terms.breakdown.l_total;
        sum_ce += terms.breakdown.l_ce;
    }
    if (summary.steps > 0) {
        summary.mean_total = sum_total / double(summary.steps);
        summary.mean_ce = sum_ce / double(summary.steps);
    }
    return summary;
}

FitResult fit(const Model& init, const Dataset& train, const TrainConfig& cfg, const FitOptions& opts) {
    cfg.validate();
    FitResult r{init.clone(), init.clone(), {}, std::nullopt, std::nullopt};
    OptimizerState state;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        EpochSummary s;
        try {
            s = train_epoch(r.final_model, train, cfg, state, epoch, r.log);
        } catch (const DivergenceError& e) {
            if (opts.out_dir) {
                binio::write_file_atomic((std::filesystem::path(*opts.out_dir) / "train_log.jsonl").string(),
                                         r.log.to_jsonl(cfg.log_wall_time));
            }
            throw DivergenceError(std::string("training diverged: ") + e.what());
        }
        if (opts.validation) {
            const auto preds = predict(r.final_model, *opts.validation, ForwardMode::PathologyOnly);
            std::vector<double> scores;
            std::vector<int> labels;
            for (const auto& p : preds) {
                if (!p.label) continue;
                scores.push_back(p.p_p);
                labels.push_back(*p.label);
            }
            if (!labels.empty()) s.val_auc = compute_metrics(scores, labels).auc;
            if (s.val_auc && (!r.best_val_auc || *s.val_auc > *r.best_val_auc)) {
                r.best_val_auc = s.val_auc;
                r.best_epoch = epoch;
                r.best_model = r.final_model.clone();
            }
        }
        r.log.epochs.push_back(s);
    }
    if (!r.best_val_auc) r.best_model = r.final_model.clone();
    if (opts.out_dir) {
        const std::filesystem::path dir(*opts.out_dir);
        save_checkpoint((dir / "best.mkdc").string(), r.best_model);
        save_checkpoint((dir / "final.mkdc").string(), r.final_model);
        binio::write_file_atomic((dir / "train_log.jsonl").string(), r.log.to_jsonl(cfg.log_wall_time));
    }
    return r;
}

} // namespace mkd
