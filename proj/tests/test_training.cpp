#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>

#include "mkd/errors.hpp"
#include "mkd/inference.hpp"
#include "mkd/synthetic.hpp"
#include "mkd/training.hpp"
#include "test_util.hpp"

using namespace mkd;
namespace fs = std::filesystem;

namespace {

bool bit_equal(const Tensor& a, const Tensor& b) {
    return a.rows() == b.rows() && a.cols() == b.cols() &&
           std::memcmp(a.data().data(), b.data().data(), a.size() * sizeof(double)) == 0;
}

bool models_equal(const Model& a, const Model& b) {
    auto pa = a.named_parameters(), pb = b.named_parameters();
    for (std::size_t i = 0; i < pa.size(); ++i)
        if (!bit_equal(pa[i].second, pb[i].second)) return false;
    return true;
}

SyntheticSpec tiny_spec(std::size_t n, std::uint64_t seed = 1) {
    SyntheticSpec s;
    s.n_samples = n;
    s.n_p_min = 3;
    s.n_p_max = 6;
    s.d_in = 12;
    s.n_genes = 36;
    s.n_signal_genes = 12;
    s.n_causal_genes = 4;
    s.K = 24;
    s.seed = seed;
    return s;
}

TrainConfig tiny_config() {
    TrainConfig c;
    c.d = 6;
    c.epochs = 2;
    c.seed = 5;
    return c;
}

Model tiny_model(const Dataset& data, const TrainConfig& c) {
    return init_params(c.model_config(data.front().pathology.features.cols(), 24), c.seed);
}

fs::path temp_dir(const std::string& name) {
    auto p = fs::temp_directory_path() / ("mkd_train_" + name + "_" + std::to_string(::getpid()));
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

} // namespace

// ---- optimizer -------------------------------------------------------------

TEST(Optimizer, ZeroGradZeroDecayIsNoop) {
    std::mt19937_64 rng(1);
    std::vector<Tensor> params{mkd::testing::randn(3, 4, rng, 1.0, true), mkd::testing::randn(1, 5, rng, 1.0, true)};
    std::vector<Tensor> before{params[0].clone(), params[1].clone()};
    TrainConfig c;
    c.weight_decay = 0.0;
    OptimizerState st;
    for (int i = 0; i < 10; ++i) optimizer_step(params, st, c);
    EXPECT_TRUE(bit_equal(params[0], before[0]));
    EXPECT_TRUE(bit_equal(params[1], before[1]));
    EXPECT_EQ(st.step, 10u);
}

TEST(Optimizer, ConstantGradientStepApproachesLr) {
    Tensor theta = Tensor::scalar(0.3, true);
    std::vector<Tensor> params{theta};
    TrainConfig c;
    c.weight_decay = 0.0;
    OptimizerState st;
    double last_step = 0.0;
    for (int i = 0; i < 1000; ++i) {
        theta.grad()[0] = -2.5;
        const double before = theta.item();
        optimizer_step(params, st, c);
        last_step = theta.item() - before;
    }
    EXPECT_NEAR(last_step / c.lr, 1.0, 1e-3);
}

TEST(Optimizer, QuadraticBowlDescends) {
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> mag(3.0, 5.0);
    Tensor theta(1, 8, true);
    for (double& v : theta.data()) v = (rng() % 2 ? 1.0 : -1.0) * mag(rng);
    std::vector<Tensor> params{theta};
    TrainConfig c;
    c.lr = 0.01;
    OptimizerState st;
    auto f = [&] {
        double s = 0.0;
        for (double v : theta.data()) s += v * v;
        return s;
    };
    double prev = f();
    for (int i = 0; i < 200; ++i) {
        for (std::size_t k = 0; k < theta.size(); ++k) theta.grad()[k] = 2.0 * theta.data()[k];
        optimizer_step(params, st, c);
        const double now = f();
        ASSERT_LT(now, prev) << "step " << i;
        prev = now;
    }
}

TEST(Optimizer, WeightDecayIsDecoupled) {
    std::mt19937_64 rng(2);
    Tensor theta = mkd::testing::randn(2, 3, rng, 1.0, true);
    std::vector<Tensor> params{theta};
    TrainConfig c;
    c.weight_decay = 0.5;
    // With zero gradient the step is exactly the decay term.
    c.lr = 0.1;
    OptimizerState st;
    const Tensor mid = theta.clone();
    optimizer_step(params, st, c);
    for (std::size_t k = 0; k < theta.size(); ++k) {
        EXPECT_DOUBLE_EQ(theta.data()[k], mid.data()[k] - 0.1 * 0.5 * mid.data()[k]);
    }
}

TEST(Optimizer, ExactZeroLrLeavesParameters) {
    std::mt19937_64 rng(3);
    Tensor theta = mkd::testing::randn(2, 2, rng, 1.0, true);
    std::vector<Tensor> params{theta};
    const Tensor before = theta.clone();
    TrainConfig c;
    c.lr = 0.0;
    c.weight_decay = 10.0;
    OptimizerState st;
    theta.grad()[0] = 1.0;
    optimizer_step(params, st, c);
    EXPECT_TRUE(bit_equal(theta, before));
}

// ---- initialisation --------------------------------------------------------

TEST(Init, SeedDeterministic) {
    ModelConfig cfg;
    cfg.d_in = 10;
    cfg.d = 7;
    EXPECT_TRUE(models_equal(init_params(cfg, 4), init_params(cfg, 4)));
    EXPECT_FALSE(models_equal(init_params(cfg, 4), init_params(cfg, 5)));
}

TEST(Init, RangesAndZeroBiases) {
    ModelConfig cfg;
    cfg.d_in = 32;
    cfg.d = 64;
    Model m = init_params(cfg, 1);
    for (auto& [name, t] : m.named_parameters()) {
        if (name.find("bias") != std::string::npos) {
            for (double v : t.data()) EXPECT_EQ(v, 0.0) << name;
        } else if (name != "snn.weight") {
            const double bound = std::sqrt(6.0 / double(t.rows() + t.cols()));
            for (double v : t.data()) EXPECT_LE(std::fabs(v), bound) << name;
        }
    }
    double sq = 0.0;
    for (double v : m.snn.weight.data()) sq += v * v;
    const double sd = std::sqrt(sq / double(m.snn.weight.size()));
    EXPECT_NEAR(sd, 1.0 / std::sqrt(32.0), 0.1 / std::sqrt(32.0));
}

TEST(Init, ForwardSmokeSweep) {
    std::mt19937_64 rng(11);
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        ModelConfig cfg;
        cfg.d_in = 8;
        cfg.d = 5;
        Model m = init_params(cfg, seed);
        PathologyBag bag{"x", mkd::testing::randn(1 + seed % 7, 8, rng)};
        GenomicMatrix gm{"x", mkd::testing::randn(3, 8, rng)};
        Graph g;
        auto out = forward_sample(g, bag, &gm, m);
        double a = 0.0;
        for (double v : out.attention_p.data()) a += v;
        EXPECT_NEAR(a, 1.0, 1e-12);
        a = 0.0;
        for (double v : out.attention_g.data()) a += v;
        EXPECT_NEAR(a, 1.0, 1e-12);
        for (const auto* h : {&out.heads.p, &*out.heads.g, &*out.heads.m})
            for (double v : h->probs.data()) EXPECT_TRUE(std::isfinite(v));
    }
}

// ---- train_epoch -----------------------------------------------------------

TEST(TrainEpoch, WindowArithmetic) {
    for (auto [n, steps, skipped] : {std::tuple{32u, 2u, 0u}, {33u, 2u, 1u}, {34u, 3u, 0u}}) {
        auto data = generate_synthetic(tiny_spec(n)).data;
        TrainConfig c = tiny_config();
        Model m = tiny_model(data, c);
        OptimizerState st;
        TrainLog log;
        auto s = train_epoch(m, data, c, st, 0, log);
        EXPECT_EQ(s.steps, steps) << n;
        EXPECT_EQ(s.skipped_singletons, skipped) << n;
        EXPECT_EQ(st.step, steps);
        ASSERT_EQ(log.steps.size(), steps);
        if (n == 34) EXPECT_EQ(log.steps.back().window, 2u);
        else EXPECT_EQ(log.steps.back().window, 16u);
    }
}

TEST(TrainEpoch, ParametersMoveOnlyAtWindowBoundaries) {
    auto data = generate_synthetic(tiny_spec(16)).data;
    TrainConfig c = tiny_config();
    Model m = tiny_model(data, c);
    const Model before = m.clone();
    // Forwarding alone never changes parameters.
    Graph g;
    std::mt19937_64 rng(1);
    ForwardOptions opts{ForwardMode::Multimodal, true, &rng};
    for (const auto& s : data) forward_sample(g, s.pathology, &*s.genomic, m, opts);
    EXPECT_TRUE(models_equal(m, before));
    OptimizerState st;
    TrainLog log;
    train_epoch(m, data, c, st, 0, log);
    EXPECT_EQ(st.step, 1u);
    EXPECT_FALSE(models_equal(m, before));
}

TEST(TrainEpoch, ExcludesPathologyOnlyAndUnlabelled) {
    auto data = generate_synthetic(tiny_spec(40)).data;
    data[0].genomic.reset();
    data[1].labels.er.reset();
    TrainConfig c = tiny_config();
    Model m = tiny_model(data, c);
    OptimizerState st;
    TrainLog log;
    auto s = train_epoch(m, data, c, st, 0, log);
    EXPECT_EQ(s.excluded, 2u);
    EXPECT_EQ(s.steps, 3u); // 38 usable: 16 + 16 + 6
}

TEST(TrainEpoch, TooFewSamples) {
    auto data = generate_synthetic(tiny_spec(10)).data;
    TrainConfig c = tiny_config();
    Model m = tiny_model(data, c);
    OptimizerState st;
    TrainLog log;
    EXPECT_THROW(train_epoch(m, data, c, st, 0, log), ContractError);
}

TEST(TrainEpoch, NonFiniteLossDiverges) {
    auto data = generate_synthetic(tiny_spec(32)).data;
    TrainConfig c = tiny_config();
    Model m = tiny_model(data, c);
    m.head_p.bias.data()[0] = std::numeric_limits<double>::quiet_NaN();
    const Model before = m.clone();
    OptimizerState st;
    TrainLog log;
    EXPECT_THROW(train_epoch(m, data, c, st, 0, log), DivergenceError);
    ASSERT_EQ(log.steps.size(), 1u);
    EXPECT_TRUE(std::isnan(log.steps[0].loss.l_total));
    EXPECT_TRUE(models_equal(m, before)); // the step was aborted
}

// ---- fit -------------------------------------------------------------------

TEST(Fit, ZeroEpochsReturnsInit) {
    auto data = generate_synthetic(tiny_spec(32)).data;
    TrainConfig c = tiny_config();
    c.epochs = 0;
    Model init = tiny_model(data, c);
    auto r = fit(init, data, c);
    EXPECT_TRUE(models_equal(r.final_model, init));
    EXPECT_TRUE(models_equal(r.best_model, init));
    EXPECT_TRUE(r.log.steps.empty());
    EXPECT_EQ(r.log.to_jsonl(), "");
}

TEST(Fit, BitReproducible) {
    auto data = generate_synthetic(tiny_spec(40)).data;
    TrainConfig c = tiny_config();
    c.epochs = 3;
    auto a = fit(tiny_model(data, c), data, c);
    auto b = fit(tiny_model(data, c), data, c);
    EXPECT_EQ(a.log.to_jsonl(), b.log.to_jsonl());
    EXPECT_TRUE(models_equal(a.final_model, b.final_model));
    EXPECT_EQ(a.log.epochs.back().mean_total, b.log.epochs.back().mean_total);
    c.seed = 6;
    auto d = fit(tiny_model(data, c), data, c);
    EXPECT_NE(a.log.to_jsonl(), d.log.to_jsonl());
}

TEST(Fit, CeOnlyLogsZeroDistillationTerms) {
    auto data = generate_synthetic(tiny_spec(40)).data;
    TrainConfig c = tiny_config();
    c.enable_mkd = c.enable_skd = c.enable_clod = false;
    auto r = fit(tiny_model(data, c), data, c);
    ASSERT_FALSE(r.log.steps.empty());
    for (const auto& s : r.log.steps) {
        EXPECT_EQ(s.loss.l_mkd, 0.0);
        EXPECT_EQ(s.loss.l_coral, 0.0);
        EXPECT_EQ(s.loss.l_or, 0.0);
        EXPECT_EQ(s.loss.l_skd, 0.0);
        EXPECT_EQ(s.loss.l_clod, 0.0);
        EXPECT_EQ(s.loss.l_total, s.loss.l_ce);
    }
}

TEST(Fit, DisabledTermContributesNoGradient) {
    // Gradients of total_loss with SKD off equal those of CE + MKD + CLOD
    // assembled by hand.
    auto data = generate_synthetic(tiny_spec(16)).data;
    TrainConfig c = tiny_config();
    c.dropout = 0.0;
    Model m = tiny_model(data, c);
    auto params = model_parameters(m);
    auto grads_of = [&](auto build) {
        for (auto& p : params) p.zero_grad();
        Graph g;
        std::vector<SampleOutput> outs;
        std::vector<int> labels;
        for (const auto& s : data) {
            outs.push_back(forward_sample(g, s.pathology, &*s.genomic, m));
            labels.push_back(*s.labels.er);
        }
        auto w = make_window(g, outs, labels);
        g.backward(build(g, w));
        std::vector<std::vector<double>> out;
        for (auto& p : params) out.push_back(mkd::testing::copy_grad(p));
        return out;
    };
    LossConfig lc = c.loss_config();
    lc.enable_skd = false;
    auto via_flag = grads_of([&](Graph& g, const AccumulationWindow& w) { return total_loss(g, w, lc).total; });
    auto by_hand = grads_of([&](Graph& g, const AccumulationWindow& w) {
        Tensor t = g.add(ce_loss(g, w.heads, w.labels), mkd_loss(g, w, lc.alpha).mkd);
        return g.add(t, clod_loss(g, w.heads, lc.tau, lc.soft_kl_tau2));
    });
    ASSERT_EQ(via_flag.size(), by_hand.size());
    for (std::size_t i = 0; i < via_flag.size(); ++i) {
        for (std::size_t k = 0; k < via_flag[i].size(); ++k) {
            EXPECT_NEAR(via_flag[i][k], by_hand[i][k], 1e-12 * (1.0 + std::fabs(by_hand[i][k])));
        }
    }
}

TEST(Fit, DefaultConfigReducesTrainingCrossEntropy) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        SyntheticSpec spec;
        spec.seed = seed;
        auto data = generate_synthetic(spec).data;
        TrainConfig c;
        c.seed = seed;
        Model init = init_params(c.model_config(spec.d_in, spec.K), seed);
        auto r = fit(init, data, c);
        ASSERT_EQ(r.log.epochs.size(), c.epochs);
        EXPECT_LT(r.log.epochs.back().mean_ce, r.log.epochs.front().mean_ce) << "seed " << seed;
    }
}

TEST(Fit, ValidationSelectsBestEpochAndWritesArtifacts) {
    auto data = generate_synthetic(tiny_spec(48)).data;
    Dataset train(data.begin(), data.begin() + 32), val(data.begin() + 32, data.end());
    TrainConfig c = tiny_config();
    c.epochs = 4;
    auto dir = temp_dir("fit");
    FitOptions o;
    o.validation = &val;
    o.out_dir = dir.string();
    auto r = fit(tiny_model(data, c), train, c, o);
    ASSERT_TRUE(r.best_val_auc);
    ASSERT_TRUE(r.best_epoch);
    double best = -1.0;
    for (const auto& e : r.log.epochs)
        if (e.val_auc) best = std::max(best, *e.val_auc);
    EXPECT_EQ(*r.best_val_auc, best);
    EXPECT_EQ(*r.log.epochs[*r.best_epoch].val_auc, best);
    EXPECT_TRUE(models_equal(load_checkpoint((dir / "best.mkdc").string()), r.best_model));
    EXPECT_TRUE(models_equal(load_checkpoint((dir / "final.mkdc").string()), r.final_model));
    std::ifstream in(dir / "train_log.jsonl");
    std::string text{std::istreambuf_iterator<char>(in), {}};
    EXPECT_EQ(text, r.log.to_jsonl());
    fs::remove_all(dir);
}

TEST(Fit, LogFormat) {
    TrainLog log;
    StepRecord s;
    s.step = 1;
    s.epoch = 0;
    s.window = 16;
    s.loss.l_ce = 0.1;
    s.loss.l_total = 1.0 / 3.0;
    s.wall_seconds = 0.5;
    log.steps.push_back(s);
    EpochSummary e;
    e.steps = 1;
    log.epochs.push_back(e);
    const auto text = log.to_jsonl();
    EXPECT_NE(text.find("\"l_ce\":0.10000000000000001"), std::string::npos);
    EXPECT_NE(text.find("\"l_total\":0.33333333333333331"), std::string::npos);
    EXPECT_EQ(text.find("wall_seconds"), std::string::npos);
    EXPECT_NE(log.to_jsonl(true).find("\"wall_seconds\":0.5"), std::string::npos);
    EXPECT_NE(text.find("\"val_auc\":null"), std::string::npos);
}

TEST(TrainConfigTest, ValidationAndJson) {
    TrainConfig c;
    EXPECT_NO_THROW(c.validate());
    c.window_b = 1;
    EXPECT_THROW(c.validate(), ConfigError);
    c = {};
    c.tau = 0.0;
    EXPECT_THROW(c.validate(), ConfigError);
    c = {};
    c.lr = -1.0;
    EXPECT_THROW(c.validate(), ConfigError);
    c = {};
    c.task = Task::PR;
    c.enable_skd = false;
    c.fc_activation = Activation::Tanh;
    auto back = train_config_from_json(train_config_json(c));
    EXPECT_EQ(train_config_json(back), train_config_json(c));
    auto nested = train_config_from_json(R"({"train": {"epochs": 7}})");
    EXPECT_EQ(nested.epochs, 7u);
    EXPECT_EQ(nested.lr, 2e-4);
    EXPECT_THROW(train_config_from_json(R"({"epochs": "x"})"), ConfigError);
    EXPECT_THROW(train_config_from_json(R"({"task": "XYZ"})"), std::exception);
}

TEST(TrainConfigTest, ReferenceDefaults) {
    TrainConfig c;
    EXPECT_EQ(c.lr, 2e-4);
    EXPECT_EQ(c.weight_decay, 1e-5);
    EXPECT_EQ(c.tau, 4.0);
    EXPECT_EQ(c.alpha, 1.0 / 6.0);
    EXPECT_EQ(c.window_b, 16u);
    EXPECT_EQ(c.beta1, 0.9);
    EXPECT_EQ(c.beta2, 0.999);
    EXPECT_EQ(c.eps, 1e-8);
}
