#include "mkd/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <Eigen/Dense>
#include <json.hpp>

#include "mkd/errors.hpp"

namespace mkd {

namespace {

constexpr std::size_t kTasks = 3;
constexpr std::size_t kNuisanceRank = 4;
constexpr double kBaseHazard = 1.0 / 1000.0; // per day

using Json = nlohmann::ordered_json;

double round_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

Eigen::VectorXd unit_vector(std::size_t n, std::mt19937_64& rng) {
    std::normal_distribution<double> N(0.0, 1.0);
    Eigen::VectorXd v(static_cast<Eigen::Index>(n));
    for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = N(rng);
    return v / v.norm();
}

Eigen::MatrixXd gaussian(std::size_t r, std::size_t c, double scale, std::mt19937_64& rng) {
    std::normal_distribution<double> N(0.0, scale);
    Eigen::MatrixXd m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = N(rng);
    return m;
}

Eigen::MatrixXd orthonormal_columns(std::size_t r, std::size_t c, std::mt19937_64& rng) {
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(gaussian(r, c, 1.0, rng));
    return qr.householderQ() * Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(r),
                                                         static_cast<Eigen::Index>(c));
}

Tensor to_tensor(const Eigen::MatrixXd& m) {
    Tensor t(static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols()));
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j)
            t(static_cast<std::size_t>(i), static_cast<std::size_t>(j)) = m(i, j);
    return t;
}

std::vector<std::size_t> sample_indices(std::size_t n, std::size_t k, std::mt19937_64& rng) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(k);
    return idx;
}

std::string pad_id(const char* prefix, std::size_t i) {
    std::string digits = std::to_string(i);
    if (digits.size() < 4) digits.insert(0, 4 - digits.size(), '0');
    return prefix + digits;
}

} // namespace

void SyntheticSpec::validate() const {
    auto fail = [](const std::string& m) { throw ConfigError("synthetic spec: " + m); };
    if (n_samples < 1 || n_p_min < 1 || d_in < 1 || n_genes < 1) fail("all counts must be >= 1");
    if (n_p_max < n_p_min) fail("n_p_max < n_p_min");
    if (!(gamma >= 0.0 && gamma <= 1.0)) fail("gamma must lie in [0, 1]");
    if (!(label_balance > 0.0 && label_balance < 1.0)) fail("label_balance must lie in (0, 1)");
    if (!(label_noise >= 0.0 && label_noise < 0.5)) fail("label_noise must lie in [0, 0.5)");
    if (!(witness_fraction > 0.0 && witness_fraction <= 1.0)) fail("witness_fraction must lie in (0, 1]");
    if (!(pathology_only_fraction >= 0.0 && pathology_only_fraction <= 1.0))
        fail("pathology_only_fraction must lie in [0, 1]");
    if (!(signal_strength >= 0.0) || !(noise_scale >= 0.0) || !(background_scale >= 0.0) ||
        !(gene_noise >= 0.0) || !(slide_noise >= 0.0))
        fail("strengths and noise scales must be non-negative");
    if (!(censoring_rate >= 0.0)) fail("censoring_rate must be non-negative");
    if (n_signal_genes < 1 || n_signal_genes > n_genes) fail("n_signal_genes must lie in [1, n_genes]");
    if (n_causal_genes < 1 || n_causal_genes > n_signal_genes)
        fail("n_causal_genes must lie in [1, n_signal_genes]");
    if (K < d_in || K > n_genes) fail("K must lie in [d_in, n_genes]");
    const std::size_t latent = kTasks * 4;
    if (d_in < latent) fail("d_in must be at least " + std::to_string(latent));
    if (n_signal_genes < latent) fail("n_signal_genes must be at least " + std::to_string(latent));
}

std::string synthetic_spec_json(const SyntheticSpec& s) {
    Json j;
    j["n_samples"] = s.n_samples;
    j["n_p_min"] = s.n_p_min;
    j["n_p_max"] = s.n_p_max;
    j["d_in"] = s.d_in;
    j["n_genes"] = s.n_genes;
    j["n_signal_genes"] = s.n_signal_genes;
    j["n_causal_genes"] = s.n_causal_genes;
    j["K"] = s.K;
    j["gamma"] = s.gamma;
    j["signal_strength"] = s.signal_strength;
    j["noise_scale"] = s.noise_scale;
    j["label_balance"] = s.label_balance;
    j["label_noise"] = s.label_noise;
    j["witness_fraction"] = s.witness_fraction;
    j["background_scale"] = s.background_scale;
    j["gene_noise"] = s.gene_noise;
    j["slide_noise"] = s.slide_noise;
    j["hazard_beta"] = s.hazard_beta;
    j["censoring_rate"] = s.censoring_rate;
    j["pathology_only_fraction"] = s.pathology_only_fraction;
    j["seed"] = s.seed;
    return j.dump(2);
}

SyntheticSpec synthetic_spec_from_json(const std::string& text, SyntheticSpec s) {
    Json j;
    try {
        j = Json::parse(text);
    } catch (const Json::exception& e) {
        throw ConfigError(std::string("synthetic spec: invalid JSON: ") + e.what());
    }
    if (j.contains("synth") && j.at("synth").is_object()) j = j.at("synth");
    auto get = [&](const char* key, auto& field) {
        if (!j.contains(key)) return;
        try {
            j.at(key).get_to(field);
        } catch (const Json::exception& e) {
            throw ConfigError(std::string("synthetic spec: field '") + key + "': " + e.what());
        }
    };
    get("n_samples", s.n_samples);
    get("n_p_min", s.n_p_min);
    get("n_p_max", s.n_p_max);
    get("d_in", s.d_in);
    get("n_genes", s.n_genes);
    get("n_signal_genes", s.n_signal_genes);
    get("n_causal_genes", s.n_causal_genes);
    get("K", s.K);
    get("gamma", s.gamma);
    get("signal_strength", s.signal_strength);
    get("noise_scale", s.noise_scale);
    get("label_balance", s.label_balance);
    get("label_noise", s.label_noise);
    get("witness_fraction", s.witness_fraction);
    get("background_scale", s.background_scale);
    get("gene_noise", s.gene_noise);
    get("slide_noise", s.slide_noise);
    get("hazard_beta", s.hazard_beta);
    get("censoring_rate", s.censoring_rate);
    get("pathology_only_fraction", s.pathology_only_fraction);
    get("seed", s.seed);
    return s;
}

SyntheticCohort generate_synthetic(const SyntheticSpec& spec) {
    spec.validate();
    std::mt19937_64 rng(spec.seed);
    std::normal_distribution<double> N(0.0, 1.0);
    std::uniform_real_distribution<double> U(0.0, 1.0);

    SyntheticCohort out;
    out.spec = spec;
    auto& truth = out.truth;
    const std::size_t kg = truth.latent_general, kp = truth.latent_path, kq = truth.latent_gene;
    const std::size_t Lp = kTasks * (kg + kp);
    const std::size_t Lg = kTasks * (kg + kq);

    // Fixed structure.
    const Eigen::MatrixXd A_p = orthonormal_columns(spec.d_in, Lp, rng);
    const Eigen::MatrixXd B = gaussian(spec.d_in, kNuisanceRank, 1.0 / std::sqrt(double(kNuisanceRank)), rng);
    const Eigen::MatrixXd A_g = gaussian(spec.n_signal_genes, Lg, 1.0 / std::sqrt(double(Lg)), rng);
    std::array<Eigen::VectorXd, kTasks> m_gen, m_path, m_gene;
    for (std::size_t t = 0; t < kTasks; ++t) {
        m_gen[t] = unit_vector(kg, rng);
        m_path[t] = unit_vector(kp, rng);
        m_gene[t] = unit_vector(kq, rng);
    }
    truth.signal_genes = sample_indices(spec.n_genes, spec.n_signal_genes, rng);
    truth.causal_genes.assign(truth.signal_genes.begin(),
                              truth.signal_genes.begin() + static_cast<std::ptrdiff_t>(spec.n_causal_genes));
    std::sort(truth.signal_genes.begin(), truth.signal_genes.end());
    std::sort(truth.causal_genes.begin(), truth.causal_genes.end());
    truth.A_p = to_tensor(A_p);
    truth.A_g = to_tensor(A_g);
    for (std::size_t t = 0; t < kTasks; ++t) {
        truth.m_gen[t] = {m_gen[t].data(), m_gen[t].data() + m_gen[t].size()};
        truth.m_path[t] = {m_path[t].data(), m_path[t].data() + m_path[t].size()};
        truth.m_gene[t] = {m_gene[t].data(), m_gene[t].data() + m_gene[t].size()};
    }
    std::vector<std::ptrdiff_t> signal_row(spec.n_genes, -1);
    for (std::size_t i = 0; i < truth.signal_genes.size(); ++i) {
        signal_row[truth.signal_genes[i]] = static_cast<std::ptrdiff_t>(i);
    }

    const double mu = spec.signal_strength;
    const double w_gen = mu * std::sqrt(spec.gamma);
    const double w_spec = mu * std::sqrt(1.0 - spec.gamma);
    const double ns = spec.noise_scale;

    std::vector<std::vector<double>> expression(spec.n_samples);
    std::vector<char> path_only(spec.n_samples, 0);
    out.data.resize(spec.n_samples);
    truth.true_labels.resize(spec.n_samples);
    std::uniform_int_distribution<std::size_t> bag_size(spec.n_p_min, spec.n_p_max);

    for (std::size_t i = 0; i < spec.n_samples; ++i) {
        Sample& s = out.data[i];
        s.id = pad_id("S", i);
        Eigen::VectorXd lat_p(static_cast<Eigen::Index>(Lp)), lat_g(static_cast<Eigen::Index>(Lg));
        for (std::size_t t = 0; t < kTasks; ++t) {
            const int y = U(rng) < spec.label_balance ? 1 : 0;
            truth.true_labels[i][t] = y;
            const double sign = y ? 1.0 : -1.0;
            Eigen::VectorXd u_gen = sign * w_gen * m_gen[t];
            Eigen::VectorXd u_path = sign * w_spec * m_path[t];
            Eigen::VectorXd u_gene = sign * w_spec * m_gene[t];
            for (auto* u : {&u_gen, &u_path, &u_gene})
                for (Eigen::Index k = 0; k < u->size(); ++k) (*u)(k) += ns * N(rng);
            const auto op = static_cast<Eigen::Index>(t * (kg + kp));
            const auto og = static_cast<Eigen::Index>(t * (kg + kq));
            lat_p.segment(op, static_cast<Eigen::Index>(kg)) = u_gen;
            lat_p.segment(op + static_cast<Eigen::Index>(kg), static_cast<Eigen::Index>(kp)) = u_path;
            lat_g.segment(og, static_cast<Eigen::Index>(kg)) = u_gen;
            lat_g.segment(og + static_cast<Eigen::Index>(kg), static_cast<Eigen::Index>(kq)) = u_gene;
            const int observed = U(rng) < spec.label_noise ? 1 - y : y;
            s.labels.set(static_cast<Task>(t), observed);
        }

        // Pathology bag.
        const std::size_t n_p = bag_size(rng);
        const auto n_w = std::max<std::size_t>(
            1, static_cast<std::size_t>(std::lround(spec.witness_fraction * double(n_p))));
        std::vector<char> witness(n_p, 0);
        for (std::size_t w : sample_indices(n_p, std::min(n_w, n_p), rng)) witness[w] = 1;
        // Slide-level perturbation of the pathology view, shared by its witnesses.
        Eigen::VectorXd viewed = lat_p;
        for (Eigen::Index k = 0; k < viewed.size(); ++k) viewed(k) += ns * spec.slide_noise * N(rng);
        const Eigen::VectorXd carried = A_p * viewed;
        std::vector<double> bag(n_p * spec.d_in);
        for (std::size_t r = 0; r < n_p; ++r) {
            Eigen::VectorXd x;
            if (witness[r]) {
                x = carried;
            } else {
                Eigen::VectorXd v(static_cast<Eigen::Index>(kNuisanceRank));
                for (Eigen::Index k = 0; k < v.size(); ++k) v(k) = N(rng);
                x = ns * spec.background_scale * (B * v);
            }
            for (std::size_t c = 0; c < spec.d_in; ++c) {
                bag[r * spec.d_in + c] = round_f32(x(static_cast<Eigen::Index>(c)) + ns * N(rng));
            }
        }
        s.pathology = {s.id, Tensor::from(n_p, spec.d_in, std::move(bag))};

        // Raw expression.
        const Eigen::VectorXd gene_signal = A_g * lat_g;
        auto& e = expression[i];
        e.resize(spec.n_genes);
        for (std::size_t g = 0; g < spec.n_genes; ++g) {
            e[g] = signal_row[g] >= 0 ? gene_signal(signal_row[g]) + ns * spec.gene_noise * N(rng) : N(rng);
        }
        path_only[i] = U(rng) < spec.pathology_only_fraction ? 1 : 0;
    }

    // Z-score each gene over the cohort.
    for (std::size_t g = 0; g < spec.n_genes; ++g) {
        double mean = 0.0, sq = 0.0;
        for (const auto& e : expression) mean += e[g];
        mean /= double(spec.n_samples);
        for (const auto& e : expression) sq += (e[g] - mean) * (e[g] - mean);
        const double sd = spec.n_samples > 1 ? std::sqrt(sq / double(spec.n_samples - 1)) : 0.0;
        for (auto& e : expression) e[g] = sd > 0.0 ? (e[g] - mean) / sd : 0.0;
        truth.gene_center.push_back(mean);
        truth.gene_scale.push_back(sd);
    }

    // Survival from the causal genes.
    std::exponential_distribution<double> E(1.0);
    const double causal_norm = 1.0 / std::sqrt(double(truth.causal_genes.size()));
    out.records.resize(spec.n_samples);
    for (std::size_t i = 0; i < spec.n_samples; ++i) {
        double score = 0.0;
        for (std::size_t g : truth.causal_genes) score += expression[i][g];
        const double hazard = kBaseHazard * std::exp(spec.hazard_beta * score * causal_norm);
        const double t_event = E(rng) / hazard;
        const double t_censor =
            spec.censoring_rate > 0.0 ? E(rng) / (spec.censoring_rate * kBaseHazard) : INFINITY;
        auto& rec = out.records[i];
        rec.sample_id = out.data[i].id;
        rec.time = std::max(std::min(t_event, t_censor), 1e-3);
        rec.event = t_event <= t_censor ? 1 : 0;
        rec.expression = expression[i];
        out.data[i].survival = Survival{rec.time, rec.event};
    }

    out.ranking = rank_and_select(out.records, spec.K);
    for (std::size_t i = 0; i < spec.n_samples; ++i) {
        Sample& s = out.data[i];
        if (path_only[i]) continue;
        Tensor gm = genomic_matrix(expression[i], out.ranking, spec.d_in);
        for (double& v : gm.data()) v = round_f32(v);
        s.genomic = GenomicMatrix{s.id, gm};
    }
    return out;
}

PlantedCohort planted_survival_cohort(std::size_t n, std::size_t n_genes, std::size_t n_causal,
                                      double beta, std::uint64_t seed) {
    if (n_causal > n_genes) throw ConfigError("planted_survival_cohort: n_causal > n_genes");
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> N(0.0, 1.0);
    std::exponential_distribution<double> E(1.0);
    PlantedCohort out;
    out.causal = sample_indices(n_genes, n_causal, rng);
    std::sort(out.causal.begin(), out.causal.end());
    out.records.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        auto& r = out.records[i];
        r.sample_id = pad_id("P", i);
        r.expression.resize(n_genes);
        for (double& v : r.expression) v = N(rng);
        double eta = 0.0;
        for (std::size_t g : out.causal) eta += beta * r.expression[g];
        const double t_event = E(rng) / (kBaseHazard * std::exp(eta));
        const double t_censor = E(rng) / (0.3 * kBaseHazard);
        r.time = std::max(std::min(t_event, t_censor), 1e-3);
        r.event = t_event <= t_censor ? 1 : 0;
    }
    return out;
}

} // namespace mkd
