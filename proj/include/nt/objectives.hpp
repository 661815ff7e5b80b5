#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "nt/models.hpp"
#include "nt/neighborhood.hpp"
#include "nt/params.hpp"
#include "nt/rng.hpp"
#include "nt/synthgen.hpp"
#include "nt/tensor.hpp"

namespace nt {

enum class Mode { Ours, Mle, CeL2, Augment, NoRefine };
enum class LossKind { SoftmaxCe, SigmoidBce, SequenceNll };

const char* mode_name(Mode m);
Mode mode_from_name(const std::string& name);
const char* loss_name(LossKind k);
LossKind loss_from_name(const std::string& name);

struct ObjectiveConfig {
    Mode mode = Mode::Ours;
    LossKind loss = LossKind::SoftmaxCe;
    double transfer_weight = 0.5;  // lambda
    double reg_weight = 1.0;       // mu
    double l2_weight = 1e-4;       // ce-l2 only
    int negative_ratio = 1;        // sampled negatives per observed positive (bce)

    // Do neighbor terms participate at all in this mode?
    bool uses_neighbors() const {
        return mode == Mode::Ours || mode == Mode::Augment || mode == Mode::NoRefine;
    }
    bool projection_trainable() const { return mode != Mode::NoRefine; }
    void validate() const;
};

// l(y~, y) for one observed annotation: negative log-likelihood of the class
// under softmax, or binary negative log-likelihood averaged over the observed
// positive labels under per-label sigmoids.
Tensor classification_pair_loss(const Tensor& logits, const Annotation& y,
                                LossKind kind);

// Own-label term: mean pair loss over the example's observed annotations.
// For sigmoid-bce, adds `negative_ratio` sampled unobserved labels per
// positive as negatives (absent labels are unknown, not negative; ratio 0
// disables the compromise entirely).
Tensor own_label_loss(const Tensor& logits, const std::vector<Annotation>& own,
                      LossKind kind, int negative_ratio, Rng neg_rng);

// Mean over examples of the mean over their annotations; per_example[i] holds
// one loss tensor per annotation of example i.
Tensor empirical_risk(Graph& g, const std::vector<std::vector<Tensor>>& per_example);

// l(y~_i, y_{i,k}) + (lambda/|N|) * sum_j K_ij * l(y~_i, y_j); a neighbor with
// several observed annotations contributes their mean.
Tensor neighbor_transfer_loss(const Tensor& logits, const Annotation& own,
                              const std::vector<std::vector<Annotation>>& neighbor_labels,
                              const std::vector<Tensor>& k_values, double lambda,
                              LossKind kind);

// (mu/|N|) * sum_j (K_ij - 1)^2.
Tensor similarity_regularizer(Graph& g, const std::vector<Tensor>& k_values, double mu);

// Probability vector over C classes with mass on class c proportional to the
// summed K of neighbors annotated c.
std::vector<double> smoothed_targets(const std::vector<int>& neighbor_classes,
                                     const std::vector<double>& k_values, int classes);

// -(lambda/|N|) * sum_j K_j * sum_t alpha_{j,t} * log p(y_{j,t} | ., x_i);
// one SequenceScore per neighbor annotation group, mean over a neighbor's
// annotations as above.
Tensor sequence_transfer_loss(Graph& g,
                              const std::vector<std::vector<SequenceScore>>& neighbor_scores,
                              const std::vector<Tensor>& k_values, double lambda);

// (mu/(T*|N|)) * sum_j K_j * (sum_t alpha_{j,t} - 1)^2. t_norm <= 0 uses each
// neighbor's own sequence length as T.
Tensor alpha_regularizer(Graph& g,
                         const std::vector<std::vector<SequenceScore>>& neighbor_scores,
                         const std::vector<Tensor>& k_values, double mu, int t_norm = 0);

struct ObjectiveBuild {
    Tensor root;
    std::int64_t samples = 0;  // forward passes materialized by this step
    // Live K nodes, one per (example, neighbor) pairing; after backward their
    // grads expose dL/dK directly. Empty when neighbors are off.
    std::vector<Tensor> k_values;
    std::vector<std::pair<int, int>> k_pairs;  // (example id, neighbor id)
};

// Assemble the full per-step loss graph for the configured mode. The caller
// owns the Binder and reads parameter gradients back through it after
// backward().
ObjectiveBuild total_objective(Binder& binder, const ObjectiveConfig& cfg,
                               const Batch& batch, ModelBundle& bundle,
                               const SparseDataset& data, const Rng& negative_rng);

}  // namespace nt
