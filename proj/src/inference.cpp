#include "mkd/inference.hpp"

#include "mkd/errors.hpp"

namespace mkd {

std::vector<Prediction> predict(const Model& m, const Dataset& data, ForwardMode mode) {
    std::vector<Prediction> out;
    out.reserve(data.size());
    for (const auto& s : data) {
        Graph g;
        const GenomicMatrix* gm = s.genomic ? &*s.genomic : nullptr;
        ForwardOptions opts;
        opts.mode = mode;
        const SampleOutput o = forward_sample(g, s.pathology, gm, m, opts);
        Prediction p;
        p.sample_id = s.id;
        p.label = s.labels.get(m.config.task);
        p.p_p = o.heads.p.probs(0, 1);
        if (o.heads.g) p.p_g = o.heads.g->probs(0, 1);
        if (o.heads.m) p.p_m = o.heads.m->probs(0, 1);
        out.push_back(std::move(p));
    }
    return out;
}

HeadMetrics score_predictions(const std::vector<Prediction>& preds, double threshold) {
    std::vector<int> y;
    std::vector<double> sp, sg, sm;
    bool have_g = true, have_m = true;
    for (const auto& p : preds) {
        if (!p.label) continue;
        y.push_back(*p.label);
        sp.push_back(p.p_p);
        have_g = have_g && p.p_g.has_value();
        have_m = have_m && p.p_m.has_value();
        if (p.p_g) sg.push_back(*p.p_g);
        if (p.p_m) sm.push_back(*p.p_m);
    }
    if (y.empty()) throw MetricError("score_predictions: no labelled samples");
    HeadMetrics h;
    h.p = compute_metrics(sp, y, threshold);
    if (have_g) h.g = compute_metrics(sg, y, threshold);
    if (have_m) h.m = compute_metrics(sm, y, threshold);
    return h;
}

std::vector<Prediction> average_scores(const std::vector<std::vector<Prediction>>& runs) {
    if (runs.empty()) throw ContractError("average_scores: no runs");
    std::vector<Prediction> out = runs.front();
    const double n = static_cast<double>(runs.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        double sp = 0.0, sg = 0.0, sm = 0.0;
        bool have_g = true, have_m = true;
        for (const auto& r : runs) {
            if (r.size() != out.size() || r[i].sample_id != out[i].sample_id)
                throw ContractError("average_scores: runs scored different samples");
            sp += r[i].p_p;
            have_g = have_g && r[i].p_g.has_value();
            have_m = have_m && r[i].p_m.has_value();
            if (r[i].p_g) sg += *r[i].p_g;
            if (r[i].p_m) sm += *r[i].p_m;
        }
        out[i].p_p = sp / n;
        out[i].p_g = have_g ? std::optional<double>(sg / n) : std::nullopt;
        out[i].p_m = have_m ? std::optional<double>(sm / n) : std::nullopt;
    }
    return out;
}

namespace {

Metrics mean_of(const std::vector<const Metrics*>& ms) {
    Metrics out = *ms.front();
    double acc = 0.0, f1 = 0.0, a = 0.0;
    std::size_t na = 0;
    for (const Metrics* m : ms) {
        acc += m->acc;
        f1 += m->f1;
        if (m->auc) {
            a += *m->auc;
            ++na;
        }
    }
    out.acc = acc / double(ms.size());
    out.f1 = f1 / double(ms.size());
    out.auc = na ? std::optional<double>(a / double(na)) : std::nullopt;
    return out;
}

} // namespace

HeadMetrics average_metrics(const std::vector<HeadMetrics>& runs) {
    if (runs.empty()) throw ContractError("average_metrics: no runs");
    std::vector<const Metrics*> p, g, m;
    for (const auto& r : runs) {
        p.push_back(&r.p);
        if (r.g) g.push_back(&*r.g);
        if (r.m) m.push_back(&*r.m);
    }
    HeadMetrics h;
    h.p = mean_of(p);
    if (g.size() == runs.size()) h.g = mean_of(g);
    if (m.size() == runs.size()) h.m = mean_of(m);
    return h;
}

} // namespace mkd
