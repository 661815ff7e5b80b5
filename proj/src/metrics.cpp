#include "nt/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace nt {

namespace {

void check_normalized(const std::vector<double>& p, const char* who) {
    double s = std::accumulate(p.begin(), p.end(), 0.0);
    if (std::abs(s - 1.0) > 1e-9)
        throw std::invalid_argument(std::string("kl_divergence: ") + who +
                                    " sums to " + std::to_string(s));
}

// Indices [0, n) ordered by descending score, ties toward the lower index.
std::vector<int> rank_desc(const std::vector<double>& scores) {
    std::vector<int> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return scores[static_cast<std::size_t>(a)] > scores[static_cast<std::size_t>(b)];
    });
    return order;
}

}  // namespace

double kl_divergence(const std::vector<double>& p, const std::vector<double>& q) {
    if (p.size() != q.size())
        throw std::invalid_argument("kl_divergence: support sizes differ");
    check_normalized(p, "p");
    check_normalized(q, "q");
    double kl = 0.0;
    for (std::size_t c = 0; c < p.size(); ++c) {
        if (p[c] <= 0.0) continue;
        if (q[c] < 1e-12)
            throw std::domain_error("kl_divergence: model mass " + std::to_string(q[c]) +
                                    " on true mode " + std::to_string(c));
        kl += p[c] * std::log(p[c] / q[c]);
    }
    return kl;
}

double precision_at_k(const std::vector<double>& scores, const std::vector<int>& truths,
                      int k) {
    int n = static_cast<int>(scores.size());
    if (k < 1 || k > n)
        throw std::invalid_argument("precision_at_k: k must be in [1, " +
                                    std::to_string(n) + "]");
    if (truths.empty()) throw std::invalid_argument("precision_at_k: empty truth set");
    std::vector<bool> truth(static_cast<std::size_t>(n), false);
    for (int c : truths) {
        if (c < 0 || c >= n)
            throw std::out_of_range("precision_at_k: label " + std::to_string(c));
        truth[static_cast<std::size_t>(c)] = true;
    }
    auto order = rank_desc(scores);
    int hits = 0;
    for (int r = 0; r < k; ++r)
        if (truth[static_cast<std::size_t>(order[static_cast<std::size_t>(r)])]) ++hits;
    return static_cast<double>(hits) / k;
}

double recall_m_at_k(const std::vector<double>& pool_log_probs,
                     const std::vector<int>& truth_ids, int k) {
    int pool = static_cast<int>(pool_log_probs.size());
    if (k < 1 || k > pool)
        throw std::invalid_argument("recall_m_at_k: k must be in [1, " +
                                    std::to_string(pool) + "]");
    if (truth_ids.empty()) throw std::invalid_argument("recall_m_at_k: no ground truths");
    std::vector<bool> truth(static_cast<std::size_t>(pool), false);
    for (int id : truth_ids) {
        if (id < 0 || id >= pool)
            throw std::out_of_range("recall_m_at_k: ground truth " + std::to_string(id) +
                                    " missing from pool");
        truth[static_cast<std::size_t>(id)] = true;
    }
    auto order = rank_desc(pool_log_probs);
    int hits = 0;
    for (int r = 0; r < k; ++r)
        if (truth[static_cast<std::size_t>(order[static_cast<std::size_t>(r)])]) ++hits;
    return static_cast<double>(hits);
}

double distinct_ngrams(const std::vector<Annotation>& sequences, int n) {
    if (n < 1) throw std::invalid_argument("distinct_ngrams: n must be >= 1");
    if (sequences.empty()) throw std::invalid_argument("distinct_ngrams: empty list");
    std::set<Annotation> grams;
    std::int64_t tokens = 0;
    for (const Annotation& seq : sequences) {
        tokens += static_cast<std::int64_t>(seq.size());
        for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= seq.size(); ++i)
            grams.insert(Annotation(seq.begin() + static_cast<std::ptrdiff_t>(i),
                                    seq.begin() + static_cast<std::ptrdiff_t>(i) + n));
    }
    if (tokens == 0) return 0.0;
    return static_cast<double>(grams.size()) / static_cast<double>(tokens);
}

double token_f1(const Annotation& candidate, const std::vector<Annotation>& references) {
    if (references.empty()) throw std::invalid_argument("token_f1: no references");
    double best = 0.0;
    std::map<int, int> cand_counts;
    for (int t : candidate) ++cand_counts[t];
    for (const Annotation& ref : references) {
        std::map<int, int> ref_counts;
        for (int t : ref) ++ref_counts[t];
        int overlap = 0;
        for (const auto& [tok, cnt] : cand_counts) {
            auto it = ref_counts.find(tok);
            if (it != ref_counts.end()) overlap += std::min(cnt, it->second);
        }
        double denom = static_cast<double>(candidate.size() + ref.size());
        if (denom > 0.0) best = std::max(best, 2.0 * overlap / denom);
    }
    return best;
}

double oracle_best(const std::vector<Annotation>& decoded,
                   const std::vector<Annotation>& references,
                   const SequenceScorer& scorer) {
    if (decoded.empty()) throw std::invalid_argument("oracle_best: empty decoded list");
    double best = -std::numeric_limits<double>::infinity();
    for (const Annotation& cand : decoded) {
        double s = scorer(cand, references);
        if (!std::isfinite(s))
            throw std::domain_error("oracle_best: scorer returned a non-finite value");
        best = std::max(best, s);
    }
    return best;
}

double oracle_best(const std::vector<Annotation>& decoded,
                   const std::vector<Annotation>& references) {
    return oracle_best(decoded, references, [](const Annotation& c, const auto& refs) {
        return token_f1(c, refs);
    });
}

void MetricsReport::set(const std::string& name, double value) {
    if (!std::isfinite(value))
        throw std::domain_error("MetricsReport: non-finite value for " + name);
    for (auto& [k, v] : values_)
        if (k == name) {
            v = value;
            return;
        }
    values_.emplace_back(name, value);
}

double MetricsReport::get(const std::string& name) const {
    for (const auto& [k, v] : values_)
        if (k == name) return v;
    throw std::out_of_range("MetricsReport: no metric named " + name);
}

bool MetricsReport::has(const std::string& name) const {
    for (const auto& [k, v] : values_)
        if (k == name) return true;
    return false;
}

std::string MetricsReport::to_json() const {
    nlohmann::ordered_json doc;
    doc["run_id"] = run_id;
    if (!run_group.empty()) doc["run_group"] = run_group;
    doc["mode"] = mode;
    doc["task"] = task;
    doc["seed"] = seed;
    doc["dataset_fingerprint"] = dataset_fingerprint;
    if (!config_json.empty()) doc["config"] = nlohmann::ordered_json::parse(config_json);
    nlohmann::ordered_json metrics;
    for (const auto& [k, v] : values_) metrics[k] = v;
    doc["metrics"] = metrics;
    doc["wall_clock_seconds"] = wall_clock_seconds;
    return doc.dump(2) + "\n";
}

std::string MetricsReport::to_csv() const {
    std::ostringstream out;
    out << "run_id,metric,value\n";
    out.precision(17);
    for (const auto& [k, v] : values_) out << run_id << ',' << k << ',' << v << '\n';
    return out.str();
}

}  // namespace nt
