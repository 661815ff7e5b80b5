#include "nt/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "nt/rng.hpp"
#include "json.hpp"

namespace nt {

const char* task_name(TaskKind t) {
    switch (t) {
        case TaskKind::Multiclass: return "multiclass";
        case TaskKind::Multilabel: return "multilabel";
        case TaskKind::Sequence: return "sequence";
    }
    return "?";
}

TaskKind task_from_name(const std::string& name) {
    if (name == "multiclass") return TaskKind::Multiclass;
    if (name == "multilabel") return TaskKind::Multilabel;
    if (name == "sequence") return TaskKind::Sequence;
    throw std::invalid_argument("unknown task: " + name);
}

std::vector<int> SparseDataset::train_ids() const {
    std::vector<int> out;
    for (int i = 0; i < size(); ++i)
        if (split[static_cast<std::size_t>(i)] == 0) out.push_back(i);
    return out;
}

std::vector<int> SparseDataset::test_ids() const {
    std::vector<int> out;
    for (int i = 0; i < size(); ++i)
        if (split[static_cast<std::size_t>(i)] == 1) out.push_back(i);
    return out;
}

void SparseDataset::validate() const {
    std::size_t m = features.size();
    if (train_annotations.size() != m || full_annotations.size() != m ||
        split.size() != m)
        throw std::logic_error("SparseDataset: per-example array sizes disagree");
    for (std::size_t i = 0; i < m; ++i) {
        if (static_cast<int>(features[i].size()) != input_dim)
            throw std::logic_error("SparseDataset: feature width mismatch at row " +
                                   std::to_string(i));
        if (train_annotations[i].empty() || full_annotations[i].empty())
            throw std::logic_error("SparseDataset: example " + std::to_string(i) +
                                   " has no annotations");
    }
    for (std::size_t i = 0; i < true_posterior.size(); ++i) {
        double s = std::accumulate(true_posterior[i].begin(), true_posterior[i].end(), 0.0);
        if (std::abs(s - 1.0) > 1e-9)
            throw std::logic_error("SparseDataset: posterior row " + std::to_string(i) +
                                   " sums to " + std::to_string(s));
    }
}

namespace {

// Cluster centroids on a regular simplex (scaled basis vectors, re-centered)
// so every pair of centroids is `edge` standard deviations apart.
std::vector<std::vector<double>> simplex_centroids(int clusters, int dim, double edge) {
    if (clusters > dim)
        throw std::invalid_argument("need input-dim >= clusters for simplex centroids");
    double s = edge / std::sqrt(2.0);
    std::vector<std::vector<double>> c(
        static_cast<std::size_t>(clusters),
        std::vector<double>(static_cast<std::size_t>(dim), 0.0));
    for (int k = 0; k < clusters; ++k)
        c[static_cast<std::size_t>(k)][static_cast<std::size_t>(k)] = s;
    double shift = s / clusters;
    for (auto& row : c)
        for (int k = 0; k < clusters; ++k) row[static_cast<std::size_t>(k)] -= shift;
    return c;
}

std::vector<double> gaussian_point(const std::vector<double>& centroid, Rng& rng) {
    std::vector<double> x(centroid);
    for (double& v : x) v += rng.normal();
    return x;
}

int sample_categorical(const std::vector<double>& p, Rng& rng) {
    double u = rng.uniform();
    double acc = 0.0;
    for (std::size_t c = 0; c < p.size(); ++c) {
        acc += p[c];
        if (u < acc) return static_cast<int>(c);
    }
    return static_cast<int>(p.size()) - 1;
}

std::vector<int> random_split(int m, double test_fraction, Rng rng) {
    if (test_fraction < 0.0 || test_fraction >= 1.0)
        throw std::invalid_argument("test fraction must be in [0, 1)");
    int n_test = static_cast<int>(std::floor(test_fraction * m + 0.5));
    n_test = std::min(n_test, m - 1);
    std::vector<int> tags(static_cast<std::size_t>(m), 0);
    for (int id : rng.sample_without_replacement(m, n_test))
        tags[static_cast<std::size_t>(id)] = 1;
    return tags;
}

}  // namespace

SparseDataset gen_multiclass(const MulticlassConfig& cfg, std::uint64_t seed) {
    if (cfg.classes < 3) throw std::invalid_argument("gen_multiclass: classes must be >= 3");
    if (cfg.clusters < 2) throw std::invalid_argument("gen_multiclass: clusters must be >= 2");
    if (cfg.overlap < 0.0 || cfg.overlap > 1.0)
        throw std::invalid_argument("gen_multiclass: overlap must be in [0, 1]");
    if (cfg.points_per_cluster < 1 || cfg.input_dim < 1 || cfg.annotations_per_example < 1)
        throw std::invalid_argument("gen_multiclass: counts must be positive");

    Rng root(seed, "generator");
    // overlap 0 -> centroids 6 sigma apart, overlap 1 -> 2 sigma.
    double edge = 6.0 - 4.0 * cfg.overlap;
    auto centroids = simplex_centroids(cfg.clusters, cfg.input_dim, edge);

    // Per-cluster multi-modal posterior: a flat-Dirichlet draw mixed with a
    // uniform distribution over its own top-2 classes, so both of those
    // classes end up with mass >= 0.125.
    std::vector<std::vector<double>> posteriors;
    Rng prng = root.split("posteriors");
    for (int k = 0; k < cfg.clusters; ++k) {
        std::vector<double> p(static_cast<std::size_t>(cfg.classes));
        double total = 0.0;
        for (double& v : p) {
            v = -std::log(1.0 - prng.uniform());
            total += v;
        }
        for (double& v : p) v = 0.75 * v / total;
        std::size_t top1 = 0, top2 = 1;
        if (p[top2] > p[top1]) std::swap(top1, top2);
        for (std::size_t c = 2; c < p.size(); ++c) {
            if (p[c] > p[top1]) { top2 = top1; top1 = c; }
            else if (p[c] > p[top2]) top2 = c;
        }
        p[top1] += 0.125;
        p[top2] += 0.125;
        posteriors.push_back(std::move(p));
    }

    SparseDataset ds;
    ds.task = TaskKind::Multiclass;
    ds.input_dim = cfg.input_dim;
    ds.num_labels = cfg.classes;
    ds.generator = "multiclass";
    ds.seed = seed;
    ds.config_json = nlohmann::json{{"clusters", cfg.clusters},
                                    {"classes", cfg.classes},
                                    {"points_per_cluster", cfg.points_per_cluster},
                                    {"input_dim", cfg.input_dim},
                                    {"overlap", cfg.overlap},
                                    {"annotations_per_example", cfg.annotations_per_example},
                                    {"test_fraction", cfg.test_fraction}}
                         .dump();

    Rng xrng = root.split("points");
    Rng yrng = root.split("labels");
    for (int k = 0; k < cfg.clusters; ++k) {
        for (int i = 0; i < cfg.points_per_cluster; ++i) {
            ds.features.push_back(gaussian_point(centroids[static_cast<std::size_t>(k)], xrng));
            std::vector<Annotation> anns;
            for (int a = 0; a < cfg.annotations_per_example; ++a)
                anns.push_back({sample_categorical(posteriors[static_cast<std::size_t>(k)], yrng)});
            ds.full_annotations.push_back(anns);
            ds.train_annotations.push_back(std::move(anns));
            ds.true_posterior.push_back(posteriors[static_cast<std::size_t>(k)]);
        }
    }
    ds.split = random_split(ds.size(), cfg.test_fraction, root.split("split"));
    ds.validate();
    return ds;
}

SparseDataset gen_multilabel(const MultilabelConfig& cfg, std::uint64_t seed) {
    if (cfg.positives_per_cluster > cfg.labels)
        throw std::invalid_argument("gen_multilabel: positives-per-cluster exceeds labels");
    if (cfg.positives_per_cluster < 1 || cfg.clusters < 2 || cfg.points_per_cluster < 1 ||
        cfg.input_dim < 1)
        throw std::invalid_argument("gen_multilabel: counts must be positive");
    if (cfg.flip_noise < 0.0 || cfg.flip_noise >= 0.5)
        throw std::invalid_argument("gen_multilabel: flip noise must be in [0, 0.5)");

    Rng root(seed, "generator");
    auto centroids = simplex_centroids(cfg.clusters, cfg.input_dim, 4.0);

    Rng srng = root.split("label-sets");
    std::vector<std::vector<int>> cluster_sets;
    for (int k = 0; k < cfg.clusters; ++k) {
        auto ids = srng.sample_without_replacement(cfg.labels, cfg.positives_per_cluster);
        std::sort(ids.begin(), ids.end());
        cluster_sets.push_back(std::move(ids));
    }

    SparseDataset ds;
    ds.task = TaskKind::Multilabel;
    ds.input_dim = cfg.input_dim;
    ds.num_labels = cfg.labels;
    ds.generator = "multilabel";
    ds.seed = seed;
    ds.config_json = nlohmann::json{{"clusters", cfg.clusters},
                                    {"labels", cfg.labels},
                                    {"points_per_cluster", cfg.points_per_cluster},
                                    {"positives_per_cluster", cfg.positives_per_cluster},
                                    {"input_dim", cfg.input_dim},
                                    {"flip_noise", cfg.flip_noise},
                                    {"test_fraction", cfg.test_fraction}}
                         .dump();

    Rng xrng = root.split("points");
    Rng frng = root.split("flips");
    for (int k = 0; k < cfg.clusters; ++k) {
        const auto& base = cluster_sets[static_cast<std::size_t>(k)];
        for (int i = 0; i < cfg.points_per_cluster; ++i) {
            ds.features.push_back(gaussian_point(centroids[static_cast<std::size_t>(k)], xrng));
            std::vector<bool> positive(static_cast<std::size_t>(cfg.labels), false);
            for (int id : base) positive[static_cast<std::size_t>(id)] = true;
            for (int label = 0; label < cfg.labels; ++label)
                if (frng.uniform() < cfg.flip_noise)
                    positive[static_cast<std::size_t>(label)] =
                        !positive[static_cast<std::size_t>(label)];
            Annotation full;
            for (int label = 0; label < cfg.labels; ++label)
                if (positive[static_cast<std::size_t>(label)]) full.push_back(label);
            if (full.empty()) full.push_back(base[static_cast<std::size_t>(
                frng.uniform_int(static_cast<int>(base.size())))]);
            ds.full_annotations.push_back({full});
            ds.train_annotations.push_back({std::move(full)});
        }
    }
    ds.split = random_split(ds.size(), cfg.test_fraction, root.split("split"));
    ds.validate();
    return ds;
}

SparseDataset gen_sequences(const SequenceConfig& cfg, std::uint64_t seed) {
    if (cfg.templates < 5)
        throw std::invalid_argument("gen_sequences: need at least 5 templates");
    if (cfg.regions_per_input < 1 || cfg.regions_per_input > cfg.templates)
        throw std::invalid_argument("gen_sequences: regions-per-input out of range");
    // Token layout: 0 = end, 1-5 = style prefixes, then two fragment tokens
    // per concept (6+2c, 7+2c).
    int needed_vocab = 6 + 2 * cfg.templates;
    if (cfg.vocab < needed_vocab)
        throw std::invalid_argument("gen_sequences: vocab must be >= " +
                                    std::to_string(needed_vocab));
    if (cfg.inputs < 2 || cfg.region_width < 1 || cfg.jitter < 0.0)
        throw std::invalid_argument("gen_sequences: invalid ranges");

    Rng root(seed, "generator");
    Rng crng = root.split("concepts");
    std::vector<std::vector<double>> prototypes;
    for (int t = 0; t < cfg.templates; ++t) {
        std::vector<double> proto(static_cast<std::size_t>(cfg.region_width));
        for (double& v : proto) v = crng.normal();
        prototypes.push_back(std::move(proto));
    }

    SparseDataset ds;
    ds.task = TaskKind::Sequence;
    ds.input_dim = cfg.region_width;  // global feature = mean of region vectors
    ds.num_labels = cfg.vocab;
    ds.regions_per_input = cfg.regions_per_input;
    ds.region_width = cfg.region_width;
    ds.generator = "sequences";
    ds.seed = seed;
    ds.config_json = nlohmann::json{{"templates", cfg.templates},
                                    {"inputs", cfg.inputs},
                                    {"vocab", cfg.vocab},
                                    {"regions_per_input", cfg.regions_per_input},
                                    {"region_width", cfg.region_width},
                                    {"jitter", cfg.jitter},
                                    {"test_fraction", cfg.test_fraction}}
                         .dump();

    Rng brng = root.split("bags");
    Rng jrng = root.split("jitter");
    for (int i = 0; i < cfg.inputs; ++i) {
        auto concepts = brng.sample_without_replacement(cfg.templates, cfg.regions_per_input);
        std::vector<double> regions;
        std::vector<double> global(static_cast<std::size_t>(cfg.region_width), 0.0);
        for (int c : concepts) {
            for (int d = 0; d < cfg.region_width; ++d) {
                double v = prototypes[static_cast<std::size_t>(c)][static_cast<std::size_t>(d)] +
                           cfg.jitter * jrng.normal();
                regions.push_back(v);
                global[static_cast<std::size_t>(d)] += v / cfg.regions_per_input;
            }
        }
        ds.features.push_back(std::move(global));
        ds.regions.push_back(std::move(regions));

        // References are a function of the (sorted) concept set alone, so
        // inputs with the same bag share all five references.
        std::vector<int> sorted_concepts(concepts);
        std::sort(sorted_concepts.begin(), sorted_concepts.end());
        std::vector<Annotation> refs;
        for (int style = 1; style <= 5; ++style) {
            Annotation ref{style};
            for (int c : sorted_concepts) {
                ref.push_back(6 + 2 * c);
                ref.push_back(7 + 2 * c);
            }
            ref.push_back(kEndToken);
            refs.push_back(std::move(ref));
        }
        ds.full_annotations.push_back(refs);
        ds.train_annotations.push_back(std::move(refs));
    }
    ds.split = random_split(ds.size(), cfg.test_fraction, root.split("split"));
    ds.validate();
    return ds;
}

std::vector<int> subsample_indices(int set_size, const SubsamplePolicy& policy,
                                   std::uint64_t seed) {
    if (set_size < 1) throw std::invalid_argument("subsample: empty full set");
    int keep = 0;
    if (policy.kind == SubsamplePolicy::Kind::Count) {
        if (policy.k < 1) throw std::invalid_argument("subsample: k must be >= 1");
        keep = std::min(policy.k, set_size);
    } else {
        if (policy.fraction <= 0.0 || policy.fraction > 1.0)
            throw std::invalid_argument("subsample: fraction must be in (0, 1]");
        // round-half-up with a floor of one item
        keep = std::max(1, static_cast<int>(std::floor(policy.fraction * set_size + 0.5)));
        keep = std::min(keep, set_size);
    }
    Rng rng(seed);
    auto ids = rng.sample_without_replacement(set_size, keep);
    std::sort(ids.begin(), ids.end());
    return ids;
}

SparseDataset subsample(const SparseDataset& full, const SubsamplePolicy& policy,
                        std::uint64_t seed) {
    SparseDataset ds = full;
    Rng root(seed, "subsample");
    for (int i = 0; i < ds.size(); ++i) {
        auto idx = static_cast<std::size_t>(i);
        std::uint64_t example_seed = root.split(static_cast<std::uint64_t>(i)).seed();
        if (ds.task == TaskKind::Multilabel) {
            // Items are the positive labels inside the single full set.
            const Annotation& full_set = full.full_annotations[idx][0];
            auto keep = subsample_indices(static_cast<int>(full_set.size()), policy,
                                          example_seed);
            Annotation observed;
            for (int j : keep) observed.push_back(full_set[static_cast<std::size_t>(j)]);
            ds.train_annotations[idx] = {std::move(observed)};
        } else {
            const auto& anns = full.full_annotations[idx];
            auto keep = subsample_indices(static_cast<int>(anns.size()), policy,
                                          example_seed);
            std::vector<Annotation> observed;
            for (int j : keep) observed.push_back(anns[static_cast<std::size_t>(j)]);
            ds.train_annotations[idx] = std::move(observed);
        }
    }
    ds.validate();
    return ds;
}

}  // namespace nt
