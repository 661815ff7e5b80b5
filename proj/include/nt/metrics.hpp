#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "nt/synthgen.hpp"

namespace nt {

// KL(p || q) = sum over p_c > 0 of p_c * ln(p_c / q_c). Errors when the model
// assigns numerically zero mass (< 1e-12) to a true mode.
double kl_divergence(const std::vector<double>& p, const std::vector<double>& q);

// |top-k by score ∩ truths| / k; ties toward the lower label id.
double precision_at_k(const std::vector<double>& scores, const std::vector<int>& truths,
                      int k);

// Count of ground-truth pool entries among the top-k candidates by model
// log-probability (a raw count in [0, m], not a fraction).
double recall_m_at_k(const std::vector<double>& pool_log_probs,
                     const std::vector<int>& truth_ids, int k);

// |distinct n-grams across the list| / (total tokens across the list).
double distinct_ngrams(const std::vector<Annotation>& sequences, int n);

// Token-level F1 against the best-matching reference (multiset overlap).
double token_f1(const Annotation& candidate, const std::vector<Annotation>& references);

using SequenceScorer =
    std::function<double(const Annotation&, const std::vector<Annotation>&)>;

// Best score over a decoded list; default scorer is token_f1.
double oracle_best(const std::vector<Annotation>& decoded,
                   const std::vector<Annotation>& references, const SequenceScorer& scorer);
double oracle_best(const std::vector<Annotation>& decoded,
                   const std::vector<Annotation>& references);

struct MetricsReport {
    std::string run_id;
    std::string run_group;  // shared across the runs of a sweep or comparison
    std::string mode;
    std::string task;
    std::uint64_t seed = 0;
    std::string dataset_fingerprint;
    std::string config_json;  // resolved config snapshot
    double wall_clock_seconds = 0.0;

    void set(const std::string& name, double value);  // rejects non-finite values
    double get(const std::string& name) const;
    bool has(const std::string& name) const;
    const std::vector<std::pair<std::string, double>>& values() const { return values_; }

    // Deterministic except for the wall-clock field.
    std::string to_json() const;
    // Flat rows: run-id, metric, value.
    std::string to_csv() const;

  private:
    std::vector<std::pair<std::string, double>> values_;  // insertion-ordered
};

}  // namespace nt
