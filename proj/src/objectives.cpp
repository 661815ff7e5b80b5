#include "nt/objectives.hpp"

#include <algorithm>
#include <stdexcept>

namespace nt {

const char* mode_name(Mode m) {
    switch (m) {
        case Mode::Ours: return "ours";
        case Mode::Mle: return "mle";
        case Mode::CeL2: return "ce-l2";
        case Mode::Augment: return "augment";
        case Mode::NoRefine: return "no-refine";
    }
    return "?";
}

Mode mode_from_name(const std::string& name) {
    if (name == "ours") return Mode::Ours;
    if (name == "mle") return Mode::Mle;
    if (name == "ce-l2") return Mode::CeL2;
    if (name == "augment") return Mode::Augment;
    if (name == "no-refine") return Mode::NoRefine;
    throw std::invalid_argument("unknown mode: " + name);
}

const char* loss_name(LossKind k) {
    switch (k) {
        case LossKind::SoftmaxCe: return "softmax-ce";
        case LossKind::SigmoidBce: return "sigmoid-bce";
        case LossKind::SequenceNll: return "sequence-nll";
    }
    return "?";
}

LossKind loss_from_name(const std::string& name) {
    if (name == "softmax-ce") return LossKind::SoftmaxCe;
    if (name == "sigmoid-bce") return LossKind::SigmoidBce;
    if (name == "sequence-nll") return LossKind::SequenceNll;
    throw std::invalid_argument("unknown loss kind: " + name);
}

void ObjectiveConfig::validate() const {
    if (transfer_weight < 0.0)
        throw std::invalid_argument("ObjectiveConfig: lambda must be >= 0");
    if (reg_weight < 0.0) throw std::invalid_argument("ObjectiveConfig: mu must be >= 0");
    if (l2_weight < 0.0)
        throw std::invalid_argument("ObjectiveConfig: l2 weight must be >= 0");
    if (negative_ratio < 0)
        throw std::invalid_argument("ObjectiveConfig: negative ratio must be >= 0");
    if ((mode == Mode::Mle || mode == Mode::CeL2) &&
        (transfer_weight != 0.0 || reg_weight != 0.0))
        throw std::invalid_argument(std::string("ObjectiveConfig: mode ") + mode_name(mode) +
                                    " requires lambda = mu = 0");
}

namespace {

Tensor sum_scalars(Graph& g, const std::vector<Tensor>& xs) {
    if (xs.empty()) return g.constant(0.0);
    Tensor acc = xs[0];
    for (std::size_t i = 1; i < xs.size(); ++i) acc = add(acc, xs[i]);
    return acc;
}

Tensor mean_scalars(Graph& g, const std::vector<Tensor>& xs) {
    return scale(sum_scalars(g, xs), 1.0 / static_cast<double>(xs.size()));
}

Tensor onehot_const(Graph& g, int n, int hot) {
    std::vector<double> v(static_cast<std::size_t>(n), 0.0);
    v[static_cast<std::size_t>(hot)] = 1.0;
    return g.constant({n}, v);
}

// Numerically stable -log sigmoid(z) and -log(1 - sigmoid(z)) for one label,
// via log_softmax over [z, 0]: log sigmoid(z) = log_softmax([z,0])[0].
Tensor binary_nll(Graph& g, const Tensor& logits, int label, bool positive) {
    Tensor z = dot(logits, onehot_const(g, logits.shape()[0], label));
    Tensor pair = concat(z, g.constant({1}, {0.0}));
    Tensor ls = log_softmax(pair);
    return neg(dot(ls, g.constant({2}, positive ? std::vector<double>{1.0, 0.0}
                                                : std::vector<double>{0.0, 1.0})));
}

void check_labels(const Annotation& y, int n, const char* who) {
    if (y.empty()) throw std::invalid_argument(std::string(who) + ": empty annotation");
    for (int c : y)
        if (c < 0 || c >= n)
            throw std::out_of_range(std::string(who) + ": label " + std::to_string(c) +
                                    " outside [0, " + std::to_string(n) + ")");
}

// Transfer term shared by neighbor_transfer_loss and total_objective:
// (lambda/|N|) * sum_j K_ij * mean_k l(logits, y_{j,k}).
Tensor classification_transfer_term(const Tensor& logits,
                                    const std::vector<std::vector<Annotation>>& neighbor_labels,
                                    const std::vector<Tensor>& k_values, double lambda,
                                    LossKind kind) {
    if (neighbor_labels.size() != k_values.size())
        throw std::invalid_argument("transfer term: " + std::to_string(neighbor_labels.size()) +
                                    " neighbor label sets vs " +
                                    std::to_string(k_values.size()) + " K values");
    if (neighbor_labels.empty())
        throw std::invalid_argument("transfer term: no neighbors with lambda > 0");
    Graph& g = logits.graph();
    std::vector<Tensor> weighted;
    for (std::size_t j = 0; j < neighbor_labels.size(); ++j) {
        std::vector<Tensor> per_ann;
        for (const Annotation& y : neighbor_labels[j])
            per_ann.push_back(classification_pair_loss(logits, y, kind));
        weighted.push_back(mul(k_values[j], mean_scalars(g, per_ann)));
    }
    return scale(sum_scalars(g, weighted),
                 lambda / static_cast<double>(neighbor_labels.size()));
}

}  // namespace

Tensor classification_pair_loss(const Tensor& logits, const Annotation& y,
                                LossKind kind) {
    Graph& g = logits.graph();
    int n = logits.shape()[0];
    check_labels(y, n, "classification_pair_loss");
    if (kind == LossKind::SoftmaxCe) {
        if (y.size() != 1)
            throw std::invalid_argument("classification_pair_loss: softmax-ce wants one class, got " +
                                        std::to_string(y.size()));
        return neg(dot(log_softmax(logits), onehot_const(g, n, y[0])));
    }
    if (kind == LossKind::SigmoidBce) {
        std::vector<Tensor> terms;
        for (int c : y) terms.push_back(binary_nll(g, logits, c, /*positive=*/true));
        return mean_scalars(g, terms);
    }
    throw std::logic_error("classification_pair_loss: sequence losses are scored elsewhere");
}

Tensor own_label_loss(const Tensor& logits, const std::vector<Annotation>& own,
                      LossKind kind, int negative_ratio, Rng neg_rng) {
    if (own.empty()) throw std::invalid_argument("own_label_loss: empty annotation set");
    Graph& g = logits.graph();
    if (kind != LossKind::SigmoidBce || negative_ratio == 0) {
        std::vector<Tensor> per_ann;
        for (const Annotation& y : own)
            per_ann.push_back(classification_pair_loss(logits, y, kind));
        return mean_scalars(g, per_ann);
    }
    int n = logits.shape()[0];
    std::vector<Tensor> per_ann;
    for (const Annotation& y : own) {
        check_labels(y, n, "own_label_loss");
        std::vector<bool> observed(static_cast<std::size_t>(n), false);
        for (int c : y) observed[static_cast<std::size_t>(c)] = true;
        std::vector<int> complement;
        for (int c = 0; c < n; ++c)
            if (!observed[static_cast<std::size_t>(c)]) complement.push_back(c);
        int want = std::min(static_cast<int>(complement.size()),
                            negative_ratio * static_cast<int>(y.size()));
        std::vector<Tensor> terms;
        for (int c : y) terms.push_back(binary_nll(g, logits, c, true));
        for (int pick : neg_rng.sample_without_replacement(
                 static_cast<int>(complement.size()), want))
            terms.push_back(
                binary_nll(g, logits, complement[static_cast<std::size_t>(pick)], false));
        per_ann.push_back(mean_scalars(g, terms));
    }
    return mean_scalars(g, per_ann);
}

Tensor empirical_risk(Graph& g, const std::vector<std::vector<Tensor>>& per_example) {
    if (per_example.empty())
        throw std::invalid_argument("empirical_risk: no examples");
    std::vector<Tensor> means;
    for (const auto& losses : per_example) {
        if (losses.empty())
            throw std::invalid_argument("empirical_risk: example with empty annotation set");
        means.push_back(mean_scalars(g, losses));
    }
    return mean_scalars(g, means);
}

Tensor neighbor_transfer_loss(const Tensor& logits, const Annotation& own,
                              const std::vector<std::vector<Annotation>>& neighbor_labels,
                              const std::vector<Tensor>& k_values, double lambda,
                              LossKind kind) {
    Tensor own_term = classification_pair_loss(logits, own, kind);
    if (lambda == 0.0 || neighbor_labels.empty()) {
        if (neighbor_labels.size() != k_values.size())
            throw std::invalid_argument("neighbor_transfer_loss: neighbor/K length mismatch");
        return own_term;
    }
    return add(own_term,
               classification_transfer_term(logits, neighbor_labels, k_values, lambda, kind));
}

Tensor similarity_regularizer(Graph& g, const std::vector<Tensor>& k_values, double mu) {
    if (mu == 0.0 || k_values.empty()) return g.constant(0.0);
    std::vector<Tensor> devs;
    for (const Tensor& k : k_values) devs.push_back(square(add_scalar(k, -1.0)));
    return scale(sum_scalars(g, devs), mu / static_cast<double>(k_values.size()));
}

std::vector<double> smoothed_targets(const std::vector<int>& neighbor_classes,
                                     const std::vector<double>& k_values, int classes) {
    if (neighbor_classes.size() != k_values.size())
        throw std::invalid_argument("smoothed_targets: class/K length mismatch");
    std::vector<double> mass(static_cast<std::size_t>(classes), 0.0);
    double total = 0.0;
    for (std::size_t j = 0; j < neighbor_classes.size(); ++j) {
        int c = neighbor_classes[j];
        if (c < 0 || c >= classes)
            throw std::out_of_range("smoothed_targets: class " + std::to_string(c) +
                                    " outside [0, " + std::to_string(classes) + ")");
        mass[static_cast<std::size_t>(c)] += k_values[j];
        total += k_values[j];
    }
    if (total <= 0.0)
        throw std::domain_error("smoothed_targets: all K zero; fall back to plain MLE");
    for (double& v : mass) v /= total;
    return mass;
}

Tensor sequence_transfer_loss(Graph& g,
                              const std::vector<std::vector<SequenceScore>>& neighbor_scores,
                              const std::vector<Tensor>& k_values, double lambda) {
    if (neighbor_scores.size() != k_values.size())
        throw std::invalid_argument("sequence_transfer_loss: score/K length mismatch");
    if (neighbor_scores.empty())
        throw std::invalid_argument("sequence_transfer_loss: no neighbors");
    std::vector<Tensor> weighted;
    for (std::size_t j = 0; j < neighbor_scores.size(); ++j) {
        std::vector<Tensor> per_ann;
        for (const SequenceScore& score : neighbor_scores[j]) {
            if (score.log_probs.size() != score.alphas.size())
                throw std::invalid_argument("sequence_transfer_loss: alpha/log-prob length mismatch");
            if (score.log_probs.empty())
                throw std::invalid_argument("sequence_transfer_loss: empty sequence");
            std::vector<Tensor> toks;
            for (std::size_t t = 0; t < score.log_probs.size(); ++t)
                toks.push_back(mul(score.alphas[t], neg(score.log_probs[t])));
            per_ann.push_back(sum_scalars(g, toks));
        }
        weighted.push_back(mul(k_values[j], mean_scalars(g, per_ann)));
    }
    return scale(sum_scalars(g, weighted),
                 lambda / static_cast<double>(neighbor_scores.size()));
}

Tensor alpha_regularizer(Graph& g,
                         const std::vector<std::vector<SequenceScore>>& neighbor_scores,
                         const std::vector<Tensor>& k_values, double mu, int t_norm) {
    if (neighbor_scores.size() != k_values.size())
        throw std::invalid_argument("alpha_regularizer: score/K length mismatch");
    if (mu == 0.0 || neighbor_scores.empty()) return g.constant(0.0);
    std::vector<Tensor> weighted;
    for (std::size_t j = 0; j < neighbor_scores.size(); ++j) {
        std::vector<Tensor> per_ann;
        for (const SequenceScore& score : neighbor_scores[j]) {
            int t = t_norm > 0 ? t_norm : static_cast<int>(score.alphas.size());
            if (t < 1) throw std::invalid_argument("alpha_regularizer: empty sequence");
            Tensor dev = square(add_scalar(sum_scalars(g, score.alphas), -1.0));
            per_ann.push_back(scale(dev, 1.0 / static_cast<double>(t)));
        }
        weighted.push_back(mul(k_values[j], mean_scalars(g, per_ann)));
    }
    return scale(sum_scalars(g, weighted), mu / static_cast<double>(neighbor_scores.size()));
}

ObjectiveBuild total_objective(Binder& binder, const ObjectiveConfig& cfg,
                               const Batch& batch, ModelBundle& bundle,
                               const SparseDataset& data, const Rng& negative_rng) {
    cfg.validate();
    bool sequence_task = bundle.task == TaskKind::Sequence;
    if ((cfg.loss == LossKind::SequenceNll) != sequence_task)
        throw std::invalid_argument("total_objective: loss kind does not match task");
    if (batch.items.empty())
        throw std::invalid_argument("total_objective: empty batch");

    Graph& g = binder.graph();
    ObjectiveBuild out;
    bool transfer_on = cfg.uses_neighbors() && cfg.transfer_weight > 0.0;

    std::vector<Tensor> item_losses;
    for (const BatchItem& item : batch.items) {
        auto idx = static_cast<std::size_t>(item.id);
        const std::vector<Annotation>& own = data.train_annotations[idx];

        Tensor loss_i;
        Tensor logits;       // classification tasks
        Tensor regions, vg;  // sequence task
        if (sequence_task) {
            regions = g.constant({data.regions_per_input, data.region_width},
                                 data.regions[idx]);
            vg = g.constant({data.input_dim}, data.features[idx]);
            std::vector<Tensor> per_ann;
            for (const Annotation& y : own) {
                SequenceScore s = sequence_log_prob(binder, bundle.decoder,
                                                    bundle.task_params, regions, vg, y);
                per_ann.push_back(neg(sum_scalars(g, s.log_probs)));
            }
            loss_i = mean_scalars(g, per_ann);
        } else {
            Tensor x = g.constant({data.input_dim}, data.features[idx]);
            logits = mlp_forward(binder, bundle.mlp, bundle.task_params, x);
            loss_i = own_label_loss(logits, own, cfg.loss, cfg.negative_ratio,
                                    negative_rng.split(static_cast<std::uint64_t>(item.id)));
        }

        if (transfer_on && !item.neighbor_ids.empty()) {
            // Live, differentiable K values (cached index values select only).
            std::vector<Tensor> ks;
            Tensor e_i;
            if (cfg.mode != Mode::Augment)
                e_i = project(binder, bundle.projection, bundle.projection_params,
                              g.constant({data.input_dim}, data.features[idx]),
                              cfg.projection_trainable());
            for (int nid : item.neighbor_ids) {
                if (cfg.mode == Mode::Augment) {
                    ks.push_back(g.constant(1.0));
                } else {
                    Tensor e_j = project(binder, bundle.projection, bundle.projection_params,
                                         g.constant({data.input_dim},
                                                    data.features[static_cast<std::size_t>(nid)]),
                                         cfg.projection_trainable());
                    ks.push_back(similarity(e_i, e_j));
                }
                out.k_pairs.emplace_back(item.id, nid);
            }
            out.k_values.insert(out.k_values.end(), ks.begin(), ks.end());

            if (sequence_task) {
                std::vector<std::vector<SequenceScore>> scores;
                for (int nid : item.neighbor_ids) {
                    std::vector<SequenceScore> per_ann;
                    for (const Annotation& y :
                         data.train_annotations[static_cast<std::size_t>(nid)])
                        per_ann.push_back(sequence_log_prob(binder, bundle.decoder,
                                                            bundle.task_params, regions, vg, y));
                    scores.push_back(std::move(per_ann));
                }
                loss_i = add(loss_i,
                             sequence_transfer_loss(g, scores, ks, cfg.transfer_weight));
                // Unlike (K-1)^2, the alpha penalty does not vanish under
                // augment's K = 1, so it stays on in every neighbor mode.
                if (cfg.reg_weight > 0.0)
                    loss_i = add(loss_i, alpha_regularizer(g, scores, ks, cfg.reg_weight));
            } else {
                std::vector<std::vector<Annotation>> labels;
                for (int nid : item.neighbor_ids)
                    labels.push_back(data.train_annotations[static_cast<std::size_t>(nid)]);
                loss_i = add(loss_i, classification_transfer_term(logits, labels, ks,
                                                                  cfg.transfer_weight,
                                                                  cfg.loss));
                if (cfg.reg_weight > 0.0 && cfg.mode != Mode::Augment)
                    loss_i = add(loss_i, similarity_regularizer(g, ks, cfg.reg_weight));
            }
            out.samples += 1 + static_cast<std::int64_t>(item.neighbor_ids.size());
        } else {
            out.samples += 1;
        }
        item_losses.push_back(loss_i);
    }

    Tensor root = mean_scalars(g, item_losses);
    if (cfg.mode == Mode::CeL2 && cfg.l2_weight > 0.0) {
        std::vector<Tensor> sq;
        for (ParamTensor& p : bundle.task_params)
            sq.push_back(sum(square(binder.bind(p))));
        root = add(root, scale(sum_scalars(g, sq), cfg.l2_weight));
    }
    out.root = root;
    return out;
}

}  // namespace nt
