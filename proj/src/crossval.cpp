#include "mkd/crossval.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <future>
#include <map>
#include <random>
#include <sstream>

#include <json.hpp>

#include "binio.hpp"
#include "mkd/errors.hpp"

namespace mkd {

namespace {

using Json = nlohmann::ordered_json;

std::uint64_t splitmix(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

std::uint64_t fold_seed(std::uint64_t seed, std::size_t fold) { return splitmix(seed ^ splitmix(fold + 1)); }

std::optional<double> metric_value(const Metrics& m, const std::string& metric) {
    if (metric == "auc") return m.auc;
    if (metric == "acc") return m.acc;
    if (metric == "f1") return m.f1;
    throw ContractError("unknown metric '" + metric + "'");
}

const Metrics* head_of(const HeadMetrics& h, const std::string& head) {
    if (head == "p") return &h.p;
    if (head == "g") return h.g ? &*h.g : nullptr;
    if (head == "m") return h.m ? &*h.m : nullptr;
    throw ContractError("unknown head '" + head + "'");
}

Json metrics_json(const Metrics& m) {
    Json j;
    j["auc"] = m.auc ? Json(*m.auc) : Json(nullptr);
    j["acc"] = m.acc;
    j["f1"] = m.f1;
    j["n_pos"] = m.n_pos;
    j["n_neg"] = m.n_neg;
    j["threshold"] = m.threshold;
    return j;
}

Json heads_json(const HeadMetrics& h) {
    Json j;
    j["p"] = metrics_json(h.p);
    if (h.g) j["g"] = metrics_json(*h.g);
    if (h.m) j["m"] = metrics_json(*h.m);
    return j;
}

Json opt_json(const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); }

Dataset subset(const Dataset& data, const std::vector<std::size_t>& idx) {
    Dataset out;
    out.reserve(idx.size());
    for (auto i : idx) out.push_back(data[i]);
    return out;
}

// Stratified holdout of `fraction` of `train` for epoch selection.
std::pair<Dataset, Dataset> split_validation(const Dataset& train, Task task, double fraction,
                                             std::uint64_t seed) {
    std::array<std::vector<std::size_t>, 2> by_class;
    for (std::size_t i = 0; i < train.size(); ++i) by_class[*train[i].labels.get(task)].push_back(i);
    std::mt19937_64 rng(seed);
    std::vector<char> is_val(train.size(), 0);
    for (auto& cls : by_class) {
        std::shuffle(cls.begin(), cls.end(), rng);
        const auto n_val = static_cast<std::size_t>(std::lround(fraction * double(cls.size())));
        for (std::size_t i = 0; i < n_val && i < cls.size(); ++i) is_val[cls[i]] = 1;
    }
    Dataset tr, va;
    for (std::size_t i = 0; i < train.size(); ++i) (is_val[i] ? va : tr).push_back(train[i]);
    return {std::move(tr), std::move(va)};
}

std::string fmt(const std::optional<double>& v, int prec = 4) {
    if (!v) return "null";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.*f", prec, *v);
    return buf;
}

} // namespace

std::vector<std::size_t> FoldPlan::fold_sizes() const {
    std::vector<std::size_t> s(k, 0);
    for (auto f : fold) ++s[f];
    return s;
}

FoldPlan plan_folds(const Dataset& labelled, Task task, std::size_t k, std::uint64_t seed) {
    const std::size_t n = labelled.size();
    if (k < 2) throw PlanningError("plan_folds: k must be >= 2");
    if (k > n) {
        throw PlanningError("plan_folds: k = " + std::to_string(k) + " exceeds " + std::to_string(n) +
                            " labelled samples");
    }
    FoldPlan plan;
    plan.k = k;
    plan.seed = seed;
    plan.fold.assign(n, 0);
    std::array<std::vector<std::size_t>, 2> by_class;
    for (std::size_t i = 0; i < n; ++i) {
        const auto y = labelled[i].labels.get(task);
        if (!y) throw PlanningError("plan_folds: sample '" + labelled[i].id + "' has no label");
        by_class[*y].push_back(i);
        plan.sample_ids.push_back(labelled[i].id);
    }
    if (by_class[0].empty() || by_class[1].empty()) {
        throw PlanningError("plan_folds: both classes must be present to stratify");
    }
    std::mt19937_64 rng(seed);
    std::size_t next = 0;
    for (auto& cls : by_class) {
        std::shuffle(cls.begin(), cls.end(), rng);
        for (auto i : cls) {
            plan.fold[i] = next;
            next = (next + 1) % k;
        }
    }
    return plan;
}

Summary CvResult::summary(const std::string& mode, const std::string& head,
                          const std::string& metric) const {
    std::vector<double> vals;
    for (const auto& f : folds) {
        const HeadMetrics* h = nullptr;
        if (mode == "pathology_only") h = &f.pathology_only;
        else if (mode == "multimodal") h = f.multimodal ? &*f.multimodal : nullptr;
        else throw ContractError("unknown mode '" + mode + "'");
        if (!h) continue;
        const Metrics* m = head_of(*h, head);
        if (!m) continue;
        if (auto v = metric_value(*m, metric)) vals.push_back(*v);
    }
    Summary s;
    if (vals.empty()) return s;
    double mean = 0.0;
    for (double v : vals) mean += v;
    mean /= double(vals.size());
    double var = 0.0;
    for (double v : vals) var += (v - mean) * (v - mean);
    s.mean = mean;
    s.std = vals.size() > 1 ? std::sqrt(var / double(vals.size() - 1)) : 0.0;
    return s;
}

CvResult crossvalidate(const Dataset& data, const TrainConfig& cfg, const CvOptions& opts) {
    cfg.validate();
    if (!(opts.val_fraction >= 0.0 && opts.val_fraction < 1.0)) {
        throw ConfigError("crossvalidate: val_fraction must lie in [0, 1)");
    }
    const Dataset labelled = labelled_subset(data, cfg.task);
    CvResult result;
    result.config = cfg;
    result.plan = plan_folds(labelled, cfg.task, opts.k, opts.plan_seed.value_or(cfg.seed));

    const std::size_t d_in = labelled.front().pathology.features.cols();
    std::size_t K = 0;
    for (const auto& s : labelled) {
        if (s.genomic) {
            K = s.genomic->features.size();
            break;
        }
    }

    auto run_fold = [&](std::size_t f) {
        std::vector<std::size_t> tr_idx, te_idx;
        for (std::size_t i = 0; i < labelled.size(); ++i) (result.plan.fold[i] == f ? te_idx : tr_idx).push_back(i);
        Dataset train = subset(labelled, tr_idx);
        const Dataset test = subset(labelled, te_idx);
        TrainConfig fc = cfg;
        fc.seed = fold_seed(cfg.seed, f);
        FitOptions fo;
        Dataset val;
        if (opts.val_fraction > 0.0) {
            std::tie(train, val) = split_validation(train, cfg.task, opts.val_fraction, splitmix(fc.seed));
            fo.validation = &val;
        }
        if (opts.out_dir) {
            const auto dir = std::filesystem::path(*opts.out_dir) / ("fold_" + std::to_string(f));
            std::filesystem::create_directories(dir);
            fo.out_dir = dir.string();
        }
        const Model init = init_params(fc.model_config(d_in, K), fc.seed);
        FitResult fr = fit(init, train, fc, fo);

        FoldResult out;
        out.fold = f;
        out.n_train = train.size();
        out.n_test = test.size();
        out.best_epoch = fr.best_epoch;
        out.log_jsonl = fr.log.to_jsonl(cfg.log_wall_time);
        out.pathology_only = score_predictions(predict(fr.best_model, test, ForwardMode::PathologyOnly));
        Dataset mm;
        for (const auto& s : test)
            if (s.genomic) mm.push_back(s);
        if (!mm.empty()) out.multimodal = score_predictions(predict(fr.best_model, mm, ForwardMode::Multimodal));
        return out;
    };

    result.folds.resize(opts.k);
    if (opts.jobs <= 1) {
        for (std::size_t f = 0; f < opts.k; ++f) result.folds[f] = run_fold(f);
    } else {
        for (std::size_t start = 0; start < opts.k; start += opts.jobs) {
            std::vector<std::future<FoldResult>> futs;
            for (std::size_t f = start; f < std::min(opts.k, start + opts.jobs); ++f)
                futs.push_back(std::async(std::launch::async, run_fold, f));
            for (auto& fu : futs) {
                FoldResult fr = fu.get();
                result.folds[fr.fold] = std::move(fr);
            }
        }
    }
    return result;
}

std::string config_hash(const std::string& canonical) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : canonical) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

std::string cv_metrics_json(const CvResult& r, const CvOptions& opts) {
    Json j;
    const std::string cfg = train_config_json(r.config);
    Json canon = Json::parse(cfg);
    canon["k"] = r.plan.k;
    canon["plan_seed"] = r.plan.seed;
    canon["val_fraction"] = opts.val_fraction;
    j["task"] = std::string(to_string(r.config.task));
    j["seed"] = r.config.seed;
    j["config_hash"] = config_hash(canon.dump());
    j["k"] = r.plan.k;
    j["plan_seed"] = r.plan.seed;
    j["config"] = canon;
    Json folds = Json::array();
    for (const auto& f : r.folds) {
        Json fj;
        fj["fold"] = f.fold;
        fj["n_train"] = f.n_train;
        fj["n_test"] = f.n_test;
        fj["best_epoch"] = f.best_epoch ? Json(*f.best_epoch) : Json(nullptr);
        fj["pathology_only"] = heads_json(f.pathology_only);
        fj["multimodal"] = f.multimodal ? heads_json(*f.multimodal) : Json(nullptr);
        folds.push_back(fj);
    }
    j["folds"] = folds;
    Json mean, sd;
    for (const std::string mode : {"pathology_only", "multimodal"}) {
        for (const std::string head : {"p", "g", "m"}) {
            if (mode == "pathology_only" && head != "p") continue;
            for (const std::string metric : {"auc", "acc", "f1"}) {
                const Summary s = r.summary(mode, head, metric);
                mean[mode][head][metric] = opt_json(s.mean);
                sd[mode][head][metric] = opt_json(s.std);
            }
        }
    }
    j["mean"] = mean;
    j["std"] = sd;
    return j.dump(2) + "\n";
}

// ---- ablation --------------------------------------------------------------

std::vector<AblationConfig> default_ablation_grid() {
    std::vector<AblationConfig> grid;
    for (const std::string modality : {"pathology", "multimodal"}) {
        grid.push_back({"baseline", false, false, false, modality});
        grid.push_back({"+MKD", true, false, false, modality});
        grid.push_back({"+SKD/CLOD", false, true, true, modality});
        grid.push_back({"full", true, true, true, modality});
    }
    return grid;
}

AblationTable run_ablation(const Dataset& data, const TrainConfig& base,
                           const std::vector<AblationConfig>& grid, const CvOptions& opts) {
    if (grid.empty()) throw ConfigError("run_ablation: empty grid");
    AblationTable t;
    std::map<std::string, std::size_t> run_of; // config name -> index into t.runs
    for (const auto& g : grid) {
        if (g.modality != "pathology" && g.modality != "multimodal")
            throw ConfigError("run_ablation: unknown modality '" + g.modality + "'");
        auto it = run_of.find(g.name);
        if (it == run_of.end()) {
            TrainConfig c = base;
            c.enable_mkd = g.mkd;
            c.enable_skd = g.skd;
            c.enable_clod = g.clod;
            CvOptions o = opts;
            if (opts.out_dir) o.out_dir = (std::filesystem::path(*opts.out_dir) / g.name).string();
            t.runs.push_back(crossvalidate(data, c, o));
            it = run_of.emplace(g.name, t.runs.size() - 1).first;
        } else {
            const TrainConfig& prev = t.runs[it->second].config;
            if (prev.enable_mkd != g.mkd || prev.enable_skd != g.skd || prev.enable_clod != g.clod)
                throw ConfigError("run_ablation: configuration '" + g.name + "' listed with different flags");
        }
        const CvResult& r = t.runs[it->second];
        AblationRow row;
        row.config = g.name;
        row.mkd = g.mkd;
        row.skd = g.skd;
        row.clod = g.clod;
        row.modality = g.modality;
        const std::string mode = g.modality == "pathology" ? "pathology_only" : "multimodal";
        const std::string head = g.modality == "pathology" ? "p" : "m";
        row.auc = r.summary(mode, head, "auc");
        row.acc = r.summary(mode, head, "acc");
        row.f1 = r.summary(mode, head, "f1");
        t.rows.push_back(row);
    }
    return t;
}

std::string AblationTable::to_csv() const {
    std::ostringstream out;
    out << "config,mkd,skd,clod,modality,auc_mean,auc_std,acc_mean,acc_std,f1_mean,f1_std\n";
    for (const auto& r : rows) {
        out << r.config << ',' << r.mkd << ',' << r.skd << ',' << r.clod << ',' << r.modality << ','
            << fmt(r.auc.mean, 6) << ',' << fmt(r.auc.std, 6) << ',' << fmt(r.acc.mean, 6) << ','
            << fmt(r.acc.std, 6) << ',' << fmt(r.f1.mean, 6) << ',' << fmt(r.f1.std, 6) << '\n';
    }
    return out.str();
}

std::string AblationTable::to_text() const {
    std::ostringstream out;
    char line[160];
    std::snprintf(line, sizeof line, "%-10s %-4s %-4s %-4s %-11s %-17s %-17s\n", "config", "MKD", "SKD",
                  "CLOD", "modality", "AUC", "ACC");
    out << line;
    auto mark = [](bool b) { return b ? "x" : "-"; };
    for (const auto& r : rows) {
        const std::string auc = fmt(r.auc.mean) + " +- " + fmt(r.auc.std);
        const std::string acc = fmt(r.acc.mean) + " +- " + fmt(r.acc.std);
        std::snprintf(line, sizeof line, "%-10s %-4s %-4s %-4s %-11s %-17s %-17s\n", r.config.c_str(),
                      mark(r.mkd), mark(r.skd), mark(r.clod), r.modality.c_str(), auc.c_str(), acc.c_str());
        out << line;
    }
    return out.str();
}

} // namespace mkd
