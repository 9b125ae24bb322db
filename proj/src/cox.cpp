#include "mkd/cox.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "binio.hpp"
#include "mkd/errors.hpp"

namespace mkd {

namespace {

constexpr int kMaxIterations = 50;
constexpr int kMaxHalvings = 40;
constexpr double kTolerance = 1e-9;

struct Eval {
    double loglik = 0.0;
    double score = 0.0;
    double info = 0.0;
};

// Breslow partial likelihood, score and observed information at beta.
// `order` sorts samples by time descending.
Eval evaluate(double beta, const std::vector<double>& x, const std::vector<double>& time,
              const std::vector<int>& event, const std::vector<std::size_t>& order) {
    double shift = 0.0;
    for (double v : x) shift = std::max(shift, beta * v);
    Eval e;
    double s0 = 0.0, s1 = 0.0, s2 = 0.0;
    std::size_t i = 0;
    const std::size_t n = order.size();
    while (i < n) {
        const double t = time[order[i]];
        std::size_t j = i;
        double d = 0.0, xsum = 0.0;
        for (; j < n && time[order[j]] == t; ++j) {
            const std::size_t k = order[j];
            const double w = std::exp(beta * x[k] - shift);
            s0 += w;
            s1 += w * x[k];
            s2 += w * x[k] * x[k];
            if (event[k]) {
                d += 1.0;
                xsum += x[k];
            }
        }
        if (d > 0.0) {
            const double mean = s1 / s0;
            e.loglik += beta * xsum - d * (std::log(s0) + shift);
            e.score += xsum - d * mean;
            e.info += d * (s2 / s0 - mean * mean);
        }
        i = j;
    }
    return e;
}

} // namespace

CoxFit cox_fit(const std::vector<double>& x_raw, const std::vector<double>& time,
               const std::vector<int>& event) {
    const std::size_t n = x_raw.size();
    if (time.size() != n || event.size() != n) throw ShapeError("cox_fit: column lengths differ");
    const auto events = std::count_if(event.begin(), event.end(), [](int e) { return e != 0; });
    if (events < 2) throw ContractError("cox_fit: need at least 2 events, have " + std::to_string(events));
    for (double t : time) {
        if (!(t > 0.0)) throw ContractError("cox_fit: survival times must be positive");
    }

    CoxFit fit;
    const double mean = std::accumulate(x_raw.begin(), x_raw.end(), 0.0) / static_cast<double>(n);
    double var = 0.0;
    for (double v : x_raw) var += (v - mean) * (v - mean);
    if (!(var > 0.0)) {
        fit.zero_variance = true;
        return fit;
    }
    // Centering leaves beta unchanged and keeps exp() well scaled.
    std::vector<double> x(n);
    for (std::size_t i = 0; i < n; ++i) x[i] = x_raw[i] - mean;

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return time[a] > time[b]; });

    double beta = 0.0;
    Eval cur = evaluate(beta, x, time, event, order);
    fit.loglik_trace.push_back(cur.loglik);
    for (int it = 0; it < kMaxIterations; ++it) {
        fit.iterations = it + 1;
        if (!(cur.info > 0.0)) break;
        double step = cur.score / cur.info;
        if (std::fabs(step) < kTolerance) {
            fit.converged = true;
            break;
        }
        Eval next = evaluate(beta + step, x, time, event, order);
        int halvings = 0;
        while (!(next.loglik >= cur.loglik) && halvings < kMaxHalvings) {
            step *= 0.5;
            next = evaluate(beta + step, x, time, event, order);
            ++halvings;
        }
        if (!(next.loglik >= cur.loglik)) break; // no ascent direction left
        beta += step;
        cur = next;
        fit.loglik_trace.push_back(cur.loglik);
        if (std::fabs(step) < kTolerance) {
            fit.converged = true;
            break;
        }
    }
    fit.beta = beta;
    if (cur.info > 0.0 && std::isfinite(cur.info)) {
        fit.se = 1.0 / std::sqrt(cur.info);
        fit.wald_z = beta / fit.se;
    } else {
        fit.converged = false;
    }
    return fit;
}

CoxFit cox_fit_univariate(const std::vector<SurvivalRecord>& records, std::size_t gene) {
    std::vector<double> x, t;
    std::vector<int> e;
    x.reserve(records.size());
    for (const auto& r : records) {
        if (gene >= r.expression.size()) {
            throw ShapeError("cox_fit_univariate: gene " + std::to_string(gene) +
                             " out of range for sample " + r.sample_id);
        }
        x.push_back(r.expression[gene]);
        t.push_back(r.time);
        e.push_back(r.event);
    }
    return cox_fit(x, t, e);
}

GeneRanking rank_and_select(const std::vector<SurvivalRecord>& records, std::size_t K) {
    if (records.empty()) throw ContractError("rank_and_select: no records");
    const std::size_t n_genes = records.front().expression.size();
    for (const auto& r : records) {
        if (r.expression.size() != n_genes) {
            throw ShapeError("rank_and_select: sample " + r.sample_id + " has " +
                             std::to_string(r.expression.size()) + " genes, expected " +
                             std::to_string(n_genes));
        }
    }
    if (K > n_genes) {
        throw ConfigError("rank_and_select: K = " + std::to_string(K) + " exceeds " +
                          std::to_string(n_genes) + " genes");
    }
    GeneRanking out;
    out.K = K;
    out.by_gene.resize(n_genes);
    for (std::size_t g = 0; g < n_genes; ++g) {
        const CoxFit fit = cox_fit_univariate(records, g);
        out.by_gene[g] = {g, fit.beta, fit.wald_z, 0, fit.flagged()};
    }
    out.order.resize(n_genes);
    std::iota(out.order.begin(), out.order.end(), 0);
    std::sort(out.order.begin(), out.order.end(), [&](std::size_t a, std::size_t b) {
        const auto& A = out.by_gene[a];
        const auto& B = out.by_gene[b];
        if (A.flagged != B.flagged) return !A.flagged;
        const double za = std::fabs(A.wald_z), zb = std::fabs(B.wald_z);
        if (za != zb) return za > zb;
        return a < b;
    });
    for (std::size_t r = 0; r < n_genes; ++r) out.by_gene[out.order[r]].rank = r + 1;
    return out;
}

Tensor reshape_genomic(const std::vector<double>& ranked_values, std::size_t d_in) {
    const std::size_t K = ranked_values.size();
    if (d_in == 0 || K < d_in) {
        throw ConfigError("reshape_genomic: K = " + std::to_string(K) + " is smaller than d_in = " +
                          std::to_string(d_in));
    }
    const std::size_t rows = K / d_in;
    return Tensor::from(rows, d_in,
                        {ranked_values.begin(),
                         ranked_values.begin() + static_cast<std::ptrdiff_t>(rows * d_in)});
}

Tensor genomic_matrix(const std::vector<double>& expression, const GeneRanking& ranking,
                      std::size_t d_in) {
    std::vector<double> picked;
    picked.reserve(ranking.K);
    for (std::size_t g : ranking.selected()) {
        if (g >= expression.size()) throw ShapeError("genomic_matrix: gene index out of range");
        picked.push_back(expression[g]);
    }
    return reshape_genomic(picked, d_in);
}

// ---- CSV -------------------------------------------------------------------

namespace {

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream ss(line);
    while (std::getline(ss, cell, ',')) out.push_back(cell);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

double parse_double(const std::string& s, const std::string& path, std::size_t line) {
    try {
        std::size_t used = 0;
        double v = std::stod(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw IngestError(path + ": line " + std::to_string(line) + ": not a number: '" + s + "'");
    }
}

} // namespace

std::vector<SurvivalRecord> read_survival_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IngestError(path, 0, "cannot open file");
    std::string line;
    if (!std::getline(in, line)) throw IngestError(path + ": empty file");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto header = split_csv(line);
    if (header.size() < 4 || header[0] != "sample_id" || header[1] != "time" || header[2] != "event") {
        throw IngestError(path + ": header must start with sample_id,time,event,gene_0");
    }
    const std::size_t n_genes = header.size() - 3;
    std::vector<SurvivalRecord> out;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto cells = split_csv(line);
        if (cells.size() != header.size()) {
            throw IngestError(path + ": line " + std::to_string(lineno) + " has " +
                              std::to_string(cells.size()) + " fields, expected " +
                              std::to_string(header.size()));
        }
        SurvivalRecord r;
        r.sample_id = cells[0];
        r.time = parse_double(cells[1], path, lineno);
        const double ev = parse_double(cells[2], path, lineno);
        if (ev != 0.0 && ev != 1.0) {
            throw IngestError(path + ": line " + std::to_string(lineno) + ": event must be 0 or 1");
        }
        if (!(r.time > 0.0)) {
            throw IngestError(path + ": line " + std::to_string(lineno) + ": time must be positive");
        }
        r.event = static_cast<int>(ev);
        r.expression.reserve(n_genes);
        for (std::size_t g = 0; g < n_genes; ++g) {
            r.expression.push_back(parse_double(cells[3 + g], path, lineno));
        }
        out.push_back(std::move(r));
    }
    return out;
}

void write_survival_csv(const std::string& path, const std::vector<SurvivalRecord>& records) {
    std::ostringstream out;
    out << "sample_id,time,event";
    const std::size_t n_genes = records.empty() ? 0 : records.front().expression.size();
    for (std::size_t g = 0; g < n_genes; ++g) out << ",gene_" << g;
    out << '\n';
    out.precision(17);
    for (const auto& r : records) {
        out << r.sample_id << ',' << r.time << ',' << r.event;
        for (double v : r.expression) out << ',' << v;
        out << '\n';
    }
    binio::write_file_atomic(path, out.str());
}

std::string ranking_to_json(const GeneRanking& r) {
    nlohmann::ordered_json j;
    j["K"] = r.K;
    j["selected"] = r.selected();
    auto genes = nlohmann::ordered_json::array();
    for (std::size_t g : r.order) {
        const auto& s = r.by_gene[g];
        nlohmann::ordered_json e;
        e["gene"] = s.gene;
        e["rank"] = s.rank;
        e["beta"] = s.beta;
        e["wald_z"] = s.wald_z;
        e["flagged"] = s.flagged;
        genes.push_back(e);
    }
    j["genes"] = genes;
    return j.dump(2);
}

} // namespace mkd
