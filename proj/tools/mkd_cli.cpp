// mkd: command-line front end for synthesis, gene ranking, training,
// evaluation, cross-validation, ablation and gradient checks.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "mkd/cox.hpp"
#include "mkd/crossval.hpp"
#include "mkd/embeddings.hpp"
#include "mkd/errors.hpp"
#include "mkd/gradsuite.hpp"
#include "mkd/inference.hpp"
#include "mkd/synthetic.hpp"
#include "mkd/training.hpp"

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

namespace {

enum Exit { kOk = 0, kUsage = 1, kData = 2, kDiverged = 3 };

struct Globals {
    std::optional<std::uint64_t> seed;
    std::string config_path;
    std::string out;
    bool quiet = false;
};

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw mkd::ConfigError("cannot read config file " + path);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

std::string config_text(const Globals& g) { return g.config_path.empty() ? "{}" : slurp(g.config_path); }

mkd::TrainConfig train_config(const Globals& g, const std::string& task) {
    mkd::TrainConfig c = mkd::train_config_from_json(config_text(g));
    if (g.seed) c.seed = *g.seed;
    if (!task.empty()) c.task = mkd::task_from_string(task);
    c.validate();
    return c;
}

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        out << text;
        if (!out) throw mkd::IngestError(path.string(), 0, "write failed");
    }
    fs::rename(tmp, path);
}

Json opt(const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); }

Json metrics_json(const mkd::Metrics& m) {
    Json j;
    j["auc"] = opt(m.auc);
    j["acc"] = m.acc;
    j["f1"] = m.f1;
    j["n_pos"] = m.n_pos;
    j["n_neg"] = m.n_neg;
    j["threshold"] = m.threshold;
    return j;
}

Json head_metrics_json(const mkd::HeadMetrics& h) {
    Json j;
    j["p"] = metrics_json(h.p);
    if (h.g) j["g"] = metrics_json(*h.g);
    if (h.m) j["m"] = metrics_json(*h.m);
    return j;
}

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", v);
    return buf;
}

std::string fmt(const std::optional<double>& v) { return v ? fmt(*v) : "null"; }

// ---- subcommands -----------------------------------------------------------

int cmd_synth(const Globals& g) {
    if (g.out.empty()) throw CLI::RequiredError("--out");
    mkd::SyntheticSpec spec = mkd::synthetic_spec_from_json(config_text(g));
    if (g.seed) spec.seed = *g.seed;
    const auto cohort = mkd::generate_synthetic(spec);
    const fs::path out(g.out);
    const std::string manifest = mkd::write_dataset(g.out, cohort.data);
    mkd::write_survival_csv((out / "survival.csv").string(), cohort.records);
    write_text(out / "gene_ranking.json", mkd::ranking_to_json(cohort.ranking));
    write_text(out / "synth_spec.json", mkd::synthetic_spec_json(spec));
    if (!g.quiet) std::cout << "wrote " << cohort.data.size() << " samples to " << manifest << "\n";
    return kOk;
}

int cmd_cox_rank(const Globals& g, const std::string& survival, std::size_t top_k) {
    const auto records = mkd::read_survival_csv(survival);
    const auto ranking = mkd::rank_and_select(records, top_k);
    const std::string json = mkd::ranking_to_json(ranking);
    if (!g.out.empty()) {
        write_text(fs::path(g.out) / "gene_ranking.json", json);
        if (!g.quiet) std::cout << "ranked " << ranking.by_gene.size() << " genes, kept " << ranking.K << "\n";
    } else {
        std::cout << json << "\n";
    }
    return kOk;
}

int cmd_train(const Globals& g, const std::string& manifest, const std::string& validation,
              const std::string& task) {
    if (g.out.empty()) throw CLI::RequiredError("--out");
    const mkd::TrainConfig c = train_config(g, task);
    const mkd::Dataset data = mkd::load_manifest(manifest);
    std::optional<mkd::Dataset> val;
    if (!validation.empty()) val = mkd::load_manifest(validation);
    std::size_t K = 0;
    for (const auto& s : data)
        if (s.genomic) {
            K = s.genomic->features.size();
            break;
        }
    if (K == 0) throw mkd::MissingModalityError("training needs samples with genomic profiles");
    const mkd::Model init = mkd::init_params(c.model_config(data.front().pathology.features.cols(), K), c.seed);
    mkd::FitOptions fo;
    fo.out_dir = g.out;
    fs::create_directories(g.out);
    if (val) fo.validation = &*val;
    write_text(fs::path(g.out) / "train_config.json", mkd::train_config_json(c));
    const auto r = mkd::fit(init, data, c, fo);
    if (!g.quiet) {
        for (const auto& e : r.log.epochs) {
            std::cout << "epoch " << e.epoch << "  steps " << e.steps << "  loss " << fmt(e.mean_total) << "  ce "
                      << fmt(e.mean_ce);
            if (e.val_auc) std::cout << "  val_auc " << fmt(*e.val_auc);
            std::cout << "\n";
        }
        if (r.best_epoch) std::cout << "best epoch " << *r.best_epoch << "\n";
    }
    return kOk;
}

int cmd_eval(const Globals& g, const std::vector<std::string>& checkpoints, const std::string& manifest,
             bool pathology_only, const std::string& average) {
    const mkd::Dataset data = mkd::load_manifest(manifest);
    const auto mode = pathology_only ? mkd::ForwardMode::PathologyOnly : mkd::ForwardMode::Multimodal;
    std::vector<std::vector<mkd::Prediction>> runs;
    for (const auto& path : checkpoints) runs.push_back(mkd::predict(mkd::load_checkpoint(path), data, mode));

    mkd::HeadMetrics hm;
    if (average == "scores") {
        hm = mkd::score_predictions(mkd::average_scores(runs));
    } else {
        std::vector<mkd::HeadMetrics> per;
        for (const auto& r : runs) per.push_back(mkd::score_predictions(r));
        hm = mkd::average_metrics(per);
    }
    Json j;
    j["mode"] = pathology_only ? "pathology_only" : "multimodal";
    j["models"] = checkpoints.size();
    j["average"] = average;
    j["metrics"] = head_metrics_json(hm);
    const std::string text = j.dump(2) + "\n";
    if (!g.out.empty()) write_text(fs::path(g.out) / "metrics.json", text);
    if (!g.quiet || g.out.empty()) std::cout << text;
    return kOk;
}

mkd::CvOptions cv_options(const Globals& g, std::size_t k, double val_fraction, std::size_t jobs) {
    mkd::CvOptions o;
    o.k = k;
    o.val_fraction = val_fraction;
    o.jobs = jobs;
    if (!g.out.empty()) o.out_dir = g.out;
    return o;
}

int cmd_cv(const Globals& g, const std::string& manifest, const std::string& task, const mkd::CvOptions& o) {
    const mkd::TrainConfig c = train_config(g, task);
    const mkd::Dataset data = mkd::load_manifest(manifest);
    const auto r = mkd::crossvalidate(data, c, o);
    const std::string json = mkd::cv_metrics_json(r, o);
    if (!g.out.empty()) write_text(fs::path(g.out) / "cv_metrics.json", json);
    if (!g.quiet) {
        for (const auto& [mode, head] : {std::pair{"pathology_only", "p"}, {"multimodal", "m"}}) {
            const auto s = r.summary(mode, head, "auc");
            std::cout << mode << " " << head << " auc " << fmt(s.mean) << " +- " << fmt(s.std) << "\n";
        }
    }
    if (g.out.empty()) std::cout << json;
    return kOk;
}

int cmd_ablate(const Globals& g, const std::string& manifest, const std::string& task, const mkd::CvOptions& o) {
    const mkd::TrainConfig c = train_config(g, task);
    const mkd::Dataset data = mkd::load_manifest(manifest);
    const auto t = mkd::run_ablation(data, c, mkd::default_ablation_grid(), o);
    if (!g.out.empty()) {
        write_text(fs::path(g.out) / "ablation.csv", t.to_csv());
        write_text(fs::path(g.out) / "ablation.txt", t.to_text());
    }
    if (!g.quiet || g.out.empty()) std::cout << t.to_text();
    return kOk;
}

int cmd_gradcheck(const Globals& g, std::size_t seeds) {
    mkd::GradSuiteOptions o;
    o.seeds = seeds;
    const auto entries = mkd::run_gradcheck_suite(o);
    bool ok = true;
    for (const auto& e : entries) {
        ok = ok && e.passed;
        if (!g.quiet || !e.passed) {
            char buf[128];
            std::snprintf(buf, sizeof buf, "%-18s max_rel_err %.3e  (%zu cases)  %s\n", e.name.c_str(),
                          e.max_rel_error, e.checks, e.passed ? "ok" : "FAIL");
            std::cout << buf;
        }
    }
    return ok ? kOk : kDiverged;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Multimodal knowledge decomposition with online distillation"};
    app.require_subcommand(1);
    app.fallthrough();
    Globals g;
    app.add_option("--seed", g.seed, "Seed for generation, fold planning and training");
    app.add_option("--config", g.config_path, "JSON config (train and synth fields)")->check(CLI::ExistingFile);
    app.add_option("--out", g.out, "Output directory");
    app.add_flag("--quiet", g.quiet, "Suppress progress output");

    std::string manifest, validation, task, survival, average = "scores";
    std::vector<std::string> checkpoints;
    std::size_t top_k = 0, k = 5, jobs = 1, seeds = 20;
    double val_fraction = 0.0;
    bool pathology_only = false;

    auto* synth = app.add_subcommand("synth", "Generate a synthetic cohort");
    auto* cox = app.add_subcommand("cox-rank", "Rank genes by univariate Cox |z|");
    cox->add_option("--survival", survival, "Survival CSV (sample_id,time_days,event,g0,...)")->required();
    cox->add_option("--top-k", top_k, "Genes kept (K)")->required();
    auto* train = app.add_subcommand("train", "Co-train student and teachers");
    train->add_option("--manifest", manifest)->required();
    train->add_option("--validation", validation, "Manifest used to pick the best epoch");
    train->add_option("--task", task, "ER, PR or HER2");
    auto* eval = app.add_subcommand("eval", "Score checkpoints on a manifest");
    eval->add_option("--checkpoint", checkpoints, "Checkpoint; repeat for an ensemble")->required();
    eval->add_option("--manifest", manifest)->required();
    eval->add_flag("--pathology-only", pathology_only, "Run the student alone");
    eval->add_option("--average", average, "Ensemble rule")->check(CLI::IsMember({"scores", "metrics"}));
    auto* cv = app.add_subcommand("cv", "Stratified k-fold cross-validation");
    auto* ablate = app.add_subcommand("ablate", "Loss ablation grid");
    for (auto* sub : {cv, ablate}) {
        sub->add_option("--manifest", manifest)->required();
        sub->add_option("--task", task, "ER, PR or HER2");
        sub->add_option("--k", k, "Folds");
        sub->add_option("--val-fraction", val_fraction, "Share of each training fold used for epoch selection");
        sub->add_option("--jobs", jobs, "Folds trained concurrently");
    }
    auto* grad = app.add_subcommand("gradcheck", "Finite-difference check of every loss and encoder");
    grad->add_option("--seeds", seeds, "Random cases per width");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kOk : kUsage;
    }

    try {
        if (synth->parsed()) return cmd_synth(g);
        if (cox->parsed()) return cmd_cox_rank(g, survival, top_k);
        if (train->parsed()) return cmd_train(g, manifest, validation, task);
        if (eval->parsed()) return cmd_eval(g, checkpoints, manifest, pathology_only, average);
        if (cv->parsed()) return cmd_cv(g, manifest, task, cv_options(g, k, val_fraction, jobs));
        if (ablate->parsed()) return cmd_ablate(g, manifest, task, cv_options(g, k, val_fraction, jobs));
        if (grad->parsed()) return cmd_gradcheck(g, seeds);
    } catch (const CLI::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kUsage;
    } catch (const mkd::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kUsage;
    } catch (const mkd::DivergenceError& e) {
        std::cerr << "diverged: " << e.what() << "\n";
        return kDiverged;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kData;
    }
    return kUsage;
}
