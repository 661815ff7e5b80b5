#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace nt {

enum class TaskKind { Multiclass, Multilabel, Sequence };

const char* task_name(TaskKind t);
TaskKind task_from_name(const std::string& name);

// One observed output. Interpretation depends on the task:
//   multiclass  — single element, the class id
//   multilabel  — sorted ids of observed positive labels
//   sequence    — token ids, terminated by the end token (id 0)
using Annotation = std::vector<int>;

inline constexpr int kEndToken = 0;

struct SparseDataset {
    TaskKind task = TaskKind::Multiclass;
    int input_dim = 0;
    int num_labels = 0;  // classes / labels / vocabulary size
    int regions_per_input = 0;
    int region_width = 0;

    std::vector<std::vector<double>> features;  // M x input_dim (sequence: global feature)
    std::vector<std::vector<double>> regions;   // M x (regions_per_input*region_width)
    std::vector<std::vector<Annotation>> train_annotations;
    std::vector<std::vector<Annotation>> full_annotations;  // evaluation targets
    std::vector<std::vector<double>> true_posterior;        // multiclass, M x C
    std::vector<int> split;                                 // 0 = train, 1 = test

    std::string generator;
    std::uint64_t seed = 0;
    std::string config_json;

    int size() const { return static_cast<int>(features.size()); }
    std::vector<int> train_ids() const;
    std::vector<int> test_ids() const;
    void validate() const;
};

struct MulticlassConfig {
    int clusters = 6;
    int classes = 6;
    int points_per_cluster = 40;
    int input_dim = 8;
    double overlap = 0.3;  // 0 = centroids 6 sigma apart, 1 = 2 sigma
    int annotations_per_example = 1;
    double test_fraction = 0.2;
};

struct MultilabelConfig {
    int clusters = 6;
    int labels = 40;
    int points_per_cluster = 40;
    int positives_per_cluster = 12;
    int input_dim = 8;
    double flip_noise = 0.05;
    double test_fraction = 0.2;
};

struct SequenceConfig {
    int templates = 8;  // number of region concepts
    int inputs = 200;
    int vocab = 24;
    int regions_per_input = 3;
    int region_width = 8;
    double jitter = 0.05;
    double test_fraction = 0.2;
};

// Gaussian clusters on a scaled simplex, each carrying a multi-modal class
// posterior (top-2 classes hold mass >= 0.1 by construction). Observed
// annotations are drawn from the cluster posterior; the posterior is recorded.
SparseDataset gen_multiclass(const MulticlassConfig& cfg, std::uint64_t seed);

// Gaussian clusters with a fixed positive-label set per cluster; per-example
// flip noise; the full positive set is kept as the evaluation target.
SparseDataset gen_multilabel(const MultilabelConfig& cfg, std::uint64_t seed);

// Bags of region feature vectors drawn from a concept pool; each input admits
// exactly five distinct reference token sequences built from its concepts, so
// inputs sharing concepts share sequence fragments.
SparseDataset gen_sequences(const SequenceConfig& cfg, std::uint64_t seed);

struct SubsamplePolicy {
    enum class Kind { Count, Fraction };
    Kind kind = Kind::Count;
    int k = 1;
    double fraction = 0.2;

    static SubsamplePolicy count(int k) { return {Kind::Count, k, 0.0}; }
    static SubsamplePolicy frac(double p) { return {Kind::Fraction, 0, p}; }
};

// The stochastic selector g. Uniform without replacement; fraction keeps
// max(1, round-half-up(p * |set|)) items. For multilabel the items are the
// positive labels within the full set; for multiclass/sequence they are whole
// annotations. Training annotations are replaced; evaluation targets are kept.
SparseDataset subsample(const SparseDataset& full, const SubsamplePolicy& policy,
                        std::uint64_t seed);

// Selector core, exposed for tests: chosen indices from [0, set_size).
std::vector<int> subsample_indices(int set_size, const SubsamplePolicy& policy,
                                   std::uint64_t seed);

}  // namespace nt
