#include "nt/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <set>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "nt/dataset_io.hpp"
#include "nt/rng.hpp"
#include "nt/util.hpp"

namespace nt {

namespace {

using nlohmann::json;
using nlohmann::ordered_json;

[[noreturn]] void config_error(const std::string& key, const std::string& what) {
    throw std::invalid_argument("config: " + key + " " + what);
}

void reject_unknown(const json& obj, const std::string& prefix,
                    const std::set<std::string>& known) {
    for (const auto& [key, value] : obj.items())
        if (!known.count(key))
            config_error(prefix.empty() ? key : prefix + "." + key, "is not a known key");
}

const json& section(const json& j, const char* key) {
    static const json empty = json::object();
    if (!j.contains(key)) return empty;
    if (!j.at(key).is_object())
        config_error(key, "must be an object");
    return j.at(key);
}

template <typename T>
T get_or(const json& obj, const std::string& prefix, const char* key, T fallback) {
    if (!obj.contains(key)) return fallback;
    try {
        return obj.at(key).get<T>();
    } catch (const json::exception&) {
        config_error(prefix.empty() ? key : prefix + "." + key, "has the wrong type");
    }
}

LossKind default_loss(TaskKind task) {
    switch (task) {
        case TaskKind::Multiclass: return LossKind::SoftmaxCe;
        case TaskKind::Multilabel: return LossKind::SigmoidBce;
        case TaskKind::Sequence: return LossKind::SequenceNll;
    }
    return LossKind::SoftmaxCe;
}

}  // namespace

void ExperimentConfig::validate() const {
    objective.validate();
    if (objective.loss != default_loss(task))
        config_error("loss", std::string("must be ") + loss_name(default_loss(task)) +
                                 " for task " + task_name(task));
    if (batch_size < 1) config_error("training.batch_size", "must be >= 1");
    if (neighborhood_size < 0) config_error("training.neighborhood", "must be >= 0");
    if (refresh_period < 1) config_error("training.refresh_period", "must be >= 1");
    if (max_steps < 1) config_error("training.max_steps", "must be >= 1");
    if (eval_every < 1) config_error("training.eval_every", "must be >= 1");
    if (patience < 1) config_error("training.patience", "must be >= 1");
    if (task_lr <= 0.0) config_error("optimizer.task_lr", "must be > 0");
    if (projection_lr == 0.0) config_error("optimizer.projection_lr", "must be nonzero");
    if (beta1 < 0.0 || beta1 >= 1.0) config_error("optimizer.beta1", "must be in [0, 1)");
    if (beta2 < 0.0 || beta2 >= 1.0) config_error("optimizer.beta2", "must be in [0, 1)");
    if (adam_eps <= 0.0) config_error("optimizer.eps", "must be > 0");
    if (threads < 1) config_error("threads", "must be >= 1");
    if (eval.precision_ks.empty()) config_error("eval.precision_ks", "must be non-empty");
    for (int k : eval.precision_ks)
        if (k < 1) config_error("eval.precision_ks", "entries must be >= 1");
    if (eval.recall_k < 1) config_error("eval.recall_k", "must be >= 1");
    if (eval.pool_size < 1) config_error("eval.pool", "must be >= 1");
    if (eval.val_pool_size < 1) config_error("eval.val_pool", "must be >= 1");
    if (eval.beam_size < 1) config_error("eval.beam_size", "must be >= 1");
    if (eval.max_length < 1) config_error("eval.max_length", "must be >= 1");
    if (eval.ngram_n < 1) config_error("eval.ngram_n", "must be >= 1");
    if (mlp_hidden < 1 || projection_hidden < 1 || projection_dim < 1 ||
        decoder_emb < 1 || decoder_state < 1)
        config_error("model", "widths must be >= 1");
    if (subsample_kind != "count" && subsample_kind != "fraction" &&
        subsample_kind != "none")
        config_error("subsample.kind", "must be count, fraction, or none");
    if (subsample_kind == "count" && subsample_k < 1)
        config_error("subsample.k", "must be >= 1");
    if (subsample_kind == "fraction" &&
        (subsample_fraction <= 0.0 || subsample_fraction > 1.0))
        config_error("subsample.fraction", "must be in (0, 1]");
}

ExperimentConfig config_from_json_text(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw std::invalid_argument(std::string("config: not valid JSON: ") + e.what());
    }
    if (!j.is_object()) throw std::invalid_argument("config: top level must be an object");
    reject_unknown(j, "", {"task", "dataset", "seed", "mode", "loss", "lambda", "mu",
                           "l2_weight", "negative_ratio", "generator", "subsample",
                           "model", "optimizer", "training", "eval", "threads"});

    ExperimentConfig cfg;
    cfg.task = task_from_name(get_or<std::string>(j, "", "task", "multiclass"));
    cfg.dataset_path = get_or<std::string>(j, "", "dataset", "");
    cfg.seed = get_or<std::uint64_t>(j, "", "seed", 1);
    cfg.threads = get_or<int>(j, "", "threads", 1);

    cfg.objective.loss = default_loss(cfg.task);
    cfg.objective.mode = mode_from_name(get_or<std::string>(j, "", "mode", "ours"));
    if (j.contains("loss"))
        cfg.objective.loss = loss_from_name(j.at("loss").get<std::string>());
    bool baseline =
        cfg.objective.mode == Mode::Mle || cfg.objective.mode == Mode::CeL2;
    cfg.objective.transfer_weight =
        get_or<double>(j, "", "lambda", baseline ? 0.0 : cfg.objective.transfer_weight);
    cfg.objective.reg_weight =
        get_or<double>(j, "", "mu", baseline ? 0.0 : cfg.objective.reg_weight);
    if (cfg.objective.transfer_weight < 0.0) config_error("lambda", "must be >= 0");
    if (cfg.objective.reg_weight < 0.0) config_error("mu", "must be >= 0");
    cfg.objective.l2_weight = get_or<double>(j, "", "l2_weight", cfg.objective.l2_weight);
    cfg.objective.negative_ratio =
        get_or<int>(j, "", "negative_ratio", cfg.objective.negative_ratio);

    const json& gen = section(j, "generator");
    switch (cfg.task) {
        case TaskKind::Multiclass: {
            reject_unknown(gen, "generator",
                           {"clusters", "classes", "points_per_cluster", "input_dim",
                            "overlap", "annotations_per_example", "test_fraction"});
            MulticlassConfig& g = cfg.multiclass;
            g.clusters = get_or<int>(gen, "generator", "clusters", g.clusters);
            g.classes = get_or<int>(gen, "generator", "classes", g.classes);
            g.points_per_cluster =
                get_or<int>(gen, "generator", "points_per_cluster", g.points_per_cluster);
            g.input_dim = get_or<int>(gen, "generator", "input_dim", g.input_dim);
            g.overlap = get_or<double>(gen, "generator", "overlap", g.overlap);
            g.annotations_per_example = get_or<int>(gen, "generator",
                                                    "annotations_per_example",
                                                    g.annotations_per_example);
            g.test_fraction =
                get_or<double>(gen, "generator", "test_fraction", g.test_fraction);
            break;
        }
        case TaskKind::Multilabel: {
            reject_unknown(gen, "generator",
                           {"clusters", "labels", "points_per_cluster",
                            "positives_per_cluster", "input_dim", "flip_noise",
                            "test_fraction"});
            MultilabelConfig& g = cfg.multilabel;
            g.clusters = get_or<int>(gen, "generator", "clusters", g.clusters);
            g.labels = get_or<int>(gen, "generator", "labels", g.labels);
            g.points_per_cluster =
                get_or<int>(gen, "generator", "points_per_cluster", g.points_per_cluster);
            g.positives_per_cluster = get_or<int>(gen, "generator", "positives_per_cluster",
                                                  g.positives_per_cluster);
            g.input_dim = get_or<int>(gen, "generator", "input_dim", g.input_dim);
            g.flip_noise = get_or<double>(gen, "generator", "flip_noise", g.flip_noise);
            g.test_fraction =
                get_or<double>(gen, "generator", "test_fraction", g.test_fraction);
            break;
        }
        case TaskKind::Sequence: {
            reject_unknown(gen, "generator",
                           {"templates", "inputs", "vocab", "regions_per_input",
                            "region_width", "jitter", "test_fraction"});
            SequenceConfig& g = cfg.sequence;
            g.templates = get_or<int>(gen, "generator", "templates", g.templates);
            g.inputs = get_or<int>(gen, "generator", "inputs", g.inputs);
            g.vocab = get_or<int>(gen, "generator", "vocab", g.vocab);
            g.regions_per_input =
                get_or<int>(gen, "generator", "regions_per_input", g.regions_per_input);
            g.region_width = get_or<int>(gen, "generator", "region_width", g.region_width);
            g.jitter = get_or<double>(gen, "generator", "jitter", g.jitter);
            g.test_fraction =
                get_or<double>(gen, "generator", "test_fraction", g.test_fraction);
            break;
        }
    }

    const json& sub = section(j, "subsample");
    reject_unknown(sub, "subsample", {"kind", "k", "fraction"});
    cfg.subsample_kind = get_or<std::string>(sub, "subsample", "kind", cfg.subsample_kind);
    cfg.subsample_k = get_or<int>(sub, "subsample", "k", cfg.subsample_k);
    cfg.subsample_fraction =
        get_or<double>(sub, "subsample", "fraction", cfg.subsample_fraction);

    const json& model = section(j, "model");
    reject_unknown(model, "model",
                   {"mlp_hidden", "projection_hidden", "projection_dim", "decoder_emb",
                    "decoder_state"});
    cfg.mlp_hidden = get_or<int>(model, "model", "mlp_hidden", cfg.mlp_hidden);
    cfg.projection_hidden =
        get_or<int>(model, "model", "projection_hidden", cfg.projection_hidden);
    cfg.projection_dim = get_or<int>(model, "model", "projection_dim", cfg.projection_dim);
    cfg.decoder_emb = get_or<int>(model, "model", "decoder_emb", cfg.decoder_emb);
    cfg.decoder_state = get_or<int>(model, "model", "decoder_state", cfg.decoder_state);

    const json& opt = section(j, "optimizer");
    reject_unknown(opt, "optimizer", {"task_lr", "projection_lr", "beta1", "beta2", "eps"});
    cfg.task_lr = get_or<double>(opt, "optimizer", "task_lr", cfg.task_lr);
    cfg.projection_lr = get_or<double>(opt, "optimizer", "projection_lr", -1.0);
    cfg.beta1 = get_or<double>(opt, "optimizer", "beta1", cfg.beta1);
    cfg.beta2 = get_or<double>(opt, "optimizer", "beta2", cfg.beta2);
    cfg.adam_eps = get_or<double>(opt, "optimizer", "eps", cfg.adam_eps);

    const json& tr = section(j, "training");
    reject_unknown(tr, "training",
                   {"batch_size", "neighborhood", "refresh_period", "max_steps",
                    "eval_every", "patience"});
    cfg.batch_size = get_or<int>(tr, "training", "batch_size", cfg.batch_size);
    cfg.neighborhood_size = get_or<int>(tr, "training", "neighborhood", cfg.neighborhood_size);
    cfg.refresh_period = get_or<int>(tr, "training", "refresh_period", cfg.refresh_period);
    cfg.max_steps = get_or<int>(tr, "training", "max_steps", cfg.max_steps);
    cfg.eval_every = get_or<int>(tr, "training", "eval_every", cfg.eval_every);
    cfg.patience = get_or<int>(tr, "training", "patience", cfg.patience);

    const json& ev = section(j, "eval");
    reject_unknown(ev, "eval",
                   {"precision_ks", "recall_k", "pool", "val_pool", "beam_size",
                    "max_length", "ngram_n"});
    cfg.eval.precision_ks =
        get_or<std::vector<int>>(ev, "eval", "precision_ks", cfg.eval.precision_ks);
    cfg.eval.recall_k = get_or<int>(ev, "eval", "recall_k", cfg.eval.recall_k);
    cfg.eval.pool_size = get_or<int>(ev, "eval", "pool", cfg.eval.pool_size);
    cfg.eval.val_pool_size = get_or<int>(ev, "eval", "val_pool", cfg.eval.val_pool_size);
    cfg.eval.beam_size = get_or<int>(ev, "eval", "beam_size", cfg.eval.beam_size);
    cfg.eval.max_length = get_or<int>(ev, "eval", "max_length", cfg.eval.max_length);
    cfg.eval.ngram_n = get_or<int>(ev, "eval", "ngram_n", cfg.eval.ngram_n);

    cfg.validate();
    return cfg;
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config " + path);
    std::string text((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
    return config_from_json_text(text);
}

std::string config_to_json(const ExperimentConfig& cfg) {
    ordered_json j;
    j["task"] = task_name(cfg.task);
    j["dataset"] = cfg.dataset_path;
    j["seed"] = cfg.seed;
    j["mode"] = mode_name(cfg.objective.mode);
    j["loss"] = loss_name(cfg.objective.loss);
    j["lambda"] = cfg.objective.transfer_weight;
    j["mu"] = cfg.objective.reg_weight;
    j["l2_weight"] = cfg.objective.l2_weight;
    j["negative_ratio"] = cfg.objective.negative_ratio;
    switch (cfg.task) {
        case TaskKind::Multiclass:
            j["generator"] = {{"clusters", cfg.multiclass.clusters},
                              {"classes", cfg.multiclass.classes},
                              {"points_per_cluster", cfg.multiclass.points_per_cluster},
                              {"input_dim", cfg.multiclass.input_dim},
                              {"overlap", cfg.multiclass.overlap},
                              {"annotations_per_example",
                               cfg.multiclass.annotations_per_example},
                              {"test_fraction", cfg.multiclass.test_fraction}};
            break;
        case TaskKind::Multilabel:
            j["generator"] = {{"clusters", cfg.multilabel.clusters},
                              {"labels", cfg.multilabel.labels},
                              {"points_per_cluster", cfg.multilabel.points_per_cluster},
                              {"positives_per_cluster",
                               cfg.multilabel.positives_per_cluster},
                              {"input_dim", cfg.multilabel.input_dim},
                              {"flip_noise", cfg.multilabel.flip_noise},
                              {"test_fraction", cfg.multilabel.test_fraction}};
            break;
        case TaskKind::Sequence:
            j["generator"] = {{"templates", cfg.sequence.templates},
                              {"inputs", cfg.sequence.inputs},
                              {"vocab", cfg.sequence.vocab},
                              {"regions_per_input", cfg.sequence.regions_per_input},
                              {"region_width", cfg.sequence.region_width},
                              {"jitter", cfg.sequence.jitter},
                              {"test_fraction", cfg.sequence.test_fraction}};
            break;
    }
    j["subsample"] = {{"kind", cfg.subsample_kind},
                      {"k", cfg.subsample_k},
                      {"fraction", cfg.subsample_fraction}};
    j["model"] = {{"mlp_hidden", cfg.mlp_hidden},
                  {"projection_hidden", cfg.projection_hidden},
                  {"projection_dim", cfg.projection_dim},
                  {"decoder_emb", cfg.decoder_emb},
                  {"decoder_state", cfg.decoder_state}};
    j["optimizer"] = {{"task_lr", cfg.task_lr},
                      {"projection_lr", cfg.resolved_projection_lr()},
                      {"beta1", cfg.beta1},
                      {"beta2", cfg.beta2},
                      {"eps", cfg.adam_eps}};
    j["training"] = {{"batch_size", cfg.batch_size},
                     {"neighborhood", cfg.neighborhood_size},
                     {"refresh_period", cfg.refresh_period},
                     {"max_steps", cfg.max_steps},
                     {"eval_every", cfg.eval_every},
                     {"patience", cfg.patience}};
    j["eval"] = {{"precision_ks", cfg.eval.precision_ks},
                 {"recall_k", cfg.eval.recall_k},
                 {"pool", cfg.eval.pool_size},
                 {"val_pool", cfg.eval.val_pool_size},
                 {"beam_size", cfg.eval.beam_size},
                 {"max_length", cfg.eval.max_length},
                 {"ngram_n", cfg.eval.ngram_n}};
    j["threads"] = cfg.threads;
    return j.dump(2) + "\n";
}

SparseDataset prepare_dataset(const ExperimentConfig& cfg) {
    if (!cfg.dataset_path.empty()) {
        SparseDataset ds = read_dataset(cfg.dataset_path);
        if (ds.task != cfg.task)
            throw std::invalid_argument("dataset at " + cfg.dataset_path + " is " +
                                        task_name(ds.task) + ", config wants " +
                                        task_name(cfg.task));
        return ds;
    }
    SparseDataset full;
    switch (cfg.task) {
        case TaskKind::Multiclass: full = gen_multiclass(cfg.multiclass, cfg.seed); break;
        case TaskKind::Multilabel: full = gen_multilabel(cfg.multilabel, cfg.seed); break;
        case TaskKind::Sequence: full = gen_sequences(cfg.sequence, cfg.seed); break;
    }
    if (cfg.subsample_kind == "none") return full;
    SubsamplePolicy policy = cfg.subsample_kind == "count"
                                 ? SubsamplePolicy::count(cfg.subsample_k)
                                 : SubsamplePolicy::frac(cfg.subsample_fraction);
    return subsample(full, policy, cfg.seed);
}

ModelBundle make_bundle(const ExperimentConfig& cfg, const SparseDataset& data) {
    ModelBundle b;
    b.task = data.task;
    b.seed = cfg.seed;
    b.task_lr = cfg.task_lr;
    b.projection_lr = cfg.resolved_projection_lr();
    b.projection = ProjectionSpec{data.input_dim, cfg.projection_hidden,
                                  cfg.projection_dim};
    switch (data.task) {
        case TaskKind::Multiclass:
            b.mlp = MlpSpec{{data.input_dim, cfg.mlp_hidden, data.num_labels},
                            Head::SoftmaxMulticlass};
            init_mlp_params(b.mlp, Rng(cfg.seed, "init-task").seed(), b.task_params);
            break;
        case TaskKind::Multilabel:
            b.mlp = MlpSpec{{data.input_dim, cfg.mlp_hidden, data.num_labels},
                            Head::SigmoidMultilabel};
            init_mlp_params(b.mlp, Rng(cfg.seed, "init-task").seed(), b.task_params);
            break;
        case TaskKind::Sequence:
            b.decoder = DecoderSpec{data.num_labels, cfg.decoder_emb, cfg.decoder_state,
                                    data.regions_per_input, data.region_width};
            init_decoder_params(b.decoder, Rng(cfg.seed, "init-task").seed(),
                                b.task_params);
            break;
    }
    init_projection_params(b.projection, Rng(cfg.seed, "init-projection").seed(),
                           b.projection_params);
    return b;
}

void AdamOptimizer::update(ParamTensor& p, const std::vector<double>& grad, double lr) {
    if (t_ < 1) throw std::logic_error("AdamOptimizer: update before begin_step");
    if (grad.size() != p.size())
        throw std::invalid_argument("AdamOptimizer: gradient size mismatch for " + p.name);
    Moments& mo = state_[&p];
    if (mo.m.empty()) {
        mo.m.assign(p.size(), 0.0);
        mo.v.assign(p.size(), 0.0);
    }
    double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < p.size(); ++i) {
        mo.m[i] = beta1_ * mo.m[i] + (1.0 - beta1_) * grad[i];
        mo.v[i] = beta2_ * mo.v[i] + (1.0 - beta2_) * grad[i] * grad[i];
        p.value[i] -= lr * (mo.m[i] / bc1) / (std::sqrt(mo.v[i] / bc2) + eps_);
    }
}

namespace {

// Forward-only r(x) for one example.
std::vector<double> project_values(ModelBundle& bundle, const SparseDataset& data,
                                   int id) {
    Graph g;
    Binder binder(g);
    Tensor x = g.constant({data.input_dim},
                          data.features[static_cast<std::size_t>(id)]);
    return project(binder, bundle.projection, bundle.projection_params, x,
                   /*trainable=*/false)
        .values();
}

std::vector<std::vector<double>> project_all(ModelBundle& bundle,
                                             const SparseDataset& data,
                                             const std::vector<int>& ids, int threads) {
    std::vector<std::vector<double>> out(ids.size());
    parallel_for(ids.size(), threads, [&](std::size_t i) {
        out[i] = project_values(bundle, data, ids[i]);
    });
    return out;
}

// k-NN over the fit subset, re-addressed to dataset ids; rows for ids outside
// the subset stay empty (they are never batched).
NeighborIndex build_fit_index(ModelBundle& bundle, const SparseDataset& data,
                              const std::vector<int>& fit_ids, int n,
                              std::int64_t version, int threads) {
    auto embeddings = project_all(bundle, data, fit_ids, threads);
    NeighborIndex local = build_index(embeddings, n, version, threads);
    NeighborIndex full = empty_index(data.size(), version);
    full.neighborhood_size = n;
    for (std::size_t i = 0; i < fit_ids.size(); ++i) {
        auto& row = full.entries[static_cast<std::size_t>(fit_ids[i])];
        row = std::move(local.entries[i]);
        for (auto& [nid, k] : row) nid = fit_ids[static_cast<std::size_t>(nid)];
    }
    return full;
}

// Forward-only task logits for one example.
std::vector<double> logits_values(ModelBundle& bundle, const SparseDataset& data,
                                  int id) {
    Graph g;
    Binder binder(g);
    Tensor x = g.constant({data.input_dim},
                          data.features[static_cast<std::size_t>(id)]);
    return mlp_forward(binder, bundle.mlp, bundle.task_params, x, /*trainable=*/false)
        .values();
}

std::vector<double> softmax_values(const std::vector<double>& logits) {
    double mx = *std::max_element(logits.begin(), logits.end());
    double z = 0.0;
    std::vector<double> p(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) z += std::exp(logits[i] - mx);
    for (std::size_t i = 0; i < logits.size(); ++i)
        p[i] = std::exp(logits[i] - mx) / z;
    return p;
}

Annotation strip_end(const Annotation& a) {
    Annotation out = a;
    while (!out.empty() && out.back() == kEndToken) out.pop_back();
    return out;
}

std::vector<Annotation> strip_end_all(const std::vector<Annotation>& list) {
    std::vector<Annotation> out;
    out.reserve(list.size());
    for (const Annotation& a : list) out.push_back(strip_end(a));
    return out;
}

// Retrieval for one example: its own references (the ground truths) plus the
// references of other seeded-sampled examples form the pool; candidates are
// ranked by total sequence log-probability under x_id.
double recall_for_example(ModelBundle& bundle, const SparseDataset& data, int id,
                          int pool_target, int k, std::uint64_t seed) {
    auto idx = static_cast<std::size_t>(id);
    std::vector<Annotation> pool = data.full_annotations[idx];
    std::vector<int> truths(pool.size());
    for (std::size_t t = 0; t < pool.size(); ++t) truths[t] = static_cast<int>(t);

    Rng rng = Rng(seed, "eval-pool").split(static_cast<std::uint64_t>(id));
    std::vector<int> others;
    for (int j = 0; j < data.size(); ++j)
        if (j != id) others.push_back(j);
    auto order = rng.sample_without_replacement(static_cast<int>(others.size()),
                                                static_cast<int>(others.size()));
    for (int pick : order) {
        if (static_cast<int>(pool.size()) >= pool_target) break;
        for (const Annotation& ref :
             data.full_annotations[static_cast<std::size_t>(others[static_cast<std::size_t>(pick)])]) {
            if (static_cast<int>(pool.size()) >= pool_target) break;
            pool.push_back(ref);
        }
    }

    std::vector<double> scores(pool.size());
    for (std::size_t c = 0; c < pool.size(); ++c)
        scores[c] = sequence_total_log_prob(bundle.decoder, bundle.task_params,
                                            data.regions[idx], data.features[idx],
                                            pool[c]);
    int k_eff = std::min<int>(k, static_cast<int>(pool.size()));
    return recall_m_at_k(scores, truths, k_eff);
}

double validation_metric(ModelBundle& bundle, const SparseDataset& data,
                         const std::vector<int>& ids, const ExperimentConfig& cfg) {
    if (ids.empty()) throw std::invalid_argument("validation: no examples");
    std::vector<double> vals(ids.size());
    switch (data.task) {
        case TaskKind::Multiclass:
            parallel_for(ids.size(), cfg.threads, [&](std::size_t i) {
                auto idx = static_cast<std::size_t>(ids[i]);
                try {
                    vals[i] = kl_divergence(
                        data.true_posterior[idx],
                        softmax_values(logits_values(bundle, data, ids[i])));
                } catch (const std::domain_error&) {
                    // Collapsed predictions mid-training are a terrible eval
                    // point, not a fatal condition; early stopping skips them.
                    vals[i] = 1e300;
                }
            });
            break;
        case TaskKind::Multilabel: {
            int k = cfg.eval.precision_ks.back();
            parallel_for(ids.size(), cfg.threads, [&](std::size_t i) {
                auto idx = static_cast<std::size_t>(ids[i]);
                vals[i] = precision_at_k(logits_values(bundle, data, ids[i]),
                                         data.full_annotations[idx][0],
                                         std::min(k, data.num_labels));
            });
            break;
        }
        case TaskKind::Sequence:
            parallel_for(ids.size(), cfg.threads, [&](std::size_t i) {
                vals[i] = recall_for_example(bundle, data, ids[i],
                                             cfg.eval.val_pool_size, cfg.eval.recall_k,
                                             cfg.seed);
            });
            break;
    }
    double s = 0.0;
    for (double v : vals) s += v;
    return s / static_cast<double>(vals.size());
}

void snapshot_params(const ModelBundle& bundle, std::vector<std::vector<double>>& task,
                     std::vector<std::vector<double>>& proj) {
    task.clear();
    proj.clear();
    for (const ParamTensor& p : bundle.task_params) task.push_back(p.value);
    for (const ParamTensor& p : bundle.projection_params) proj.push_back(p.value);
}

void restore_params(ModelBundle& bundle, const std::vector<std::vector<double>>& task,
                    const std::vector<std::vector<double>>& proj) {
    std::size_t i = 0;
    for (ParamTensor& p : bundle.task_params) p.value = task[i++];
    i = 0;
    for (ParamTensor& p : bundle.projection_params) p.value = proj[i++];
}

}  // namespace

TrainResult train(const ExperimentConfig& cfg, const SparseDataset& data) {
    cfg.validate();
    data.validate();
    if (data.task != cfg.task)
        throw std::invalid_argument("train: dataset task does not match config");

    ModelBundle bundle = make_bundle(cfg, data);

    // Hold out every fifth training example for early stopping.
    std::vector<int> fit_ids, val_ids;
    {
        auto all = data.train_ids();
        for (std::size_t i = 0; i < all.size(); ++i)
            (i % 5 == 4 ? val_ids : fit_ids).push_back(all[i]);
        if (fit_ids.empty()) throw std::invalid_argument("train: no training examples");
        if (val_ids.empty()) val_ids = fit_ids;
    }

    bool wants_index = cfg.objective.uses_neighbors() && cfg.neighborhood_size > 0 &&
                       cfg.objective.transfer_weight > 0.0;
    if (wants_index && cfg.neighborhood_size > static_cast<int>(fit_ids.size()) - 1)
        throw std::invalid_argument("train: neighborhood size " +
                                    std::to_string(cfg.neighborhood_size) +
                                    " needs more than " +
                                    std::to_string(fit_ids.size()) + " fit examples");

    RefreshPolicy policy{cfg.refresh_period,
                         wants_index ? cfg.neighborhood_size : 0, true};
    NeighborIndex index = empty_index(data.size());
    AdamOptimizer opt(cfg.beta1, cfg.beta2, cfg.adam_eps);

    RunHistory hist;
    hist.lower_is_better = data.task == TaskKind::Multiclass;

    std::vector<std::vector<double>> best_task, best_proj;
    snapshot_params(bundle, best_task, best_proj);
    double best = hist.lower_is_better ? std::numeric_limits<double>::infinity()
                                       : -std::numeric_limits<double>::infinity();
    std::int64_t best_step = -1;
    int evals_since_best = 0;

    Rng batch_root(cfg.seed, "batching");
    Rng neg_root(cfg.seed, "negatives");

    for (std::int64_t step = 0; step < cfg.max_steps; ++step) {
        if (wants_index && step % cfg.refresh_period == 0) {
            index = build_fit_index(bundle, data, fit_ids, cfg.neighborhood_size, step,
                                    cfg.threads);
            hist.refreshes.emplace_back(step, index.version);
            log_line(2, "refresh step=" + std::to_string(step));
        }

        Rng brng = batch_root.split(static_cast<std::uint64_t>(step));
        int b = std::min<int>(cfg.batch_size, static_cast<int>(fit_ids.size()));
        std::vector<int> ids;
        for (int pick : brng.sample_without_replacement(static_cast<int>(fit_ids.size()), b))
            ids.push_back(fit_ids[static_cast<std::size_t>(pick)]);

        Batch batch = assemble_batch(data, index, ids, step, policy);
        Graph g;
        Binder binder(g);
        ObjectiveBuild build =
            total_objective(binder, cfg.objective, batch, bundle, data,
                            neg_root.split(static_cast<std::uint64_t>(step)));
        double loss = build.root.scalar();
        if (!std::isfinite(loss))
            throw std::runtime_error("train: non-finite loss at step " +
                                     std::to_string(step));
        g.backward(build.root);

        opt.begin_step();
        for (ParamTensor& p : bundle.task_params)
            opt.update(p, binder.grad_of(p), bundle.task_lr);
        for (ParamTensor& p : bundle.projection_params)
            opt.update(p, binder.grad_of(p), bundle.projection_lr);

        hist.train_loss.push_back(loss);
        hist.samples_per_step.push_back(build.samples);
        log_line(2, "step=" + std::to_string(step) + " loss=" + std::to_string(loss));

        if ((step + 1) % cfg.eval_every == 0 || step + 1 == cfg.max_steps) {
            double metric = validation_metric(bundle, data, val_ids, cfg);
            hist.evals.push_back(EvalPoint{step, metric});
            bool better = hist.lower_is_better ? metric < best : metric > best;
            if (better) {
                best = metric;
                best_step = step;
                snapshot_params(bundle, best_task, best_proj);
                evals_since_best = 0;
            } else if (++evals_since_best >= cfg.patience) {
                log_line(1, "early stop at step " + std::to_string(step));
                break;
            }
            log_line(1, "eval step=" + std::to_string(step) +
                            " metric=" + std::to_string(metric) +
                            " loss=" + std::to_string(loss));
        }
    }

    hist.best_step = best_step;
    hist.last_step = static_cast<std::int64_t>(hist.train_loss.size()) - 1;
    hist.best_metric = best;
    ModelBundle last = bundle;
    restore_params(bundle, best_task, best_proj);
    return TrainResult{std::move(bundle), std::move(last), std::move(hist)};
}

MetricsReport evaluate(ModelBundle& bundle, const SparseDataset& data,
                       const ExperimentConfig& cfg) {
    auto start = std::chrono::steady_clock::now();
    std::vector<int> ids = data.test_ids();
    if (ids.empty()) throw std::invalid_argument("evaluate: no test examples");

    MetricsReport rep;
    rep.task = task_name(data.task);
    rep.mode = mode_name(cfg.objective.mode);
    rep.seed = cfg.seed;
    rep.dataset_fingerprint = dataset_fingerprint(data);

    switch (data.task) {
        case TaskKind::Multiclass: {
            if (data.true_posterior.empty())
                throw std::invalid_argument("evaluate: dataset has no true posterior");
            std::vector<double> kls(ids.size());
            parallel_for(ids.size(), cfg.threads, [&](std::size_t i) {
                auto idx = static_cast<std::size_t>(ids[i]);
                kls[i] = kl_divergence(data.true_posterior[idx],
                                       softmax_values(logits_values(bundle, data, ids[i])));
            });
            double s = 0.0;
            for (double v : kls) s += v;
            rep.set("mean_kl", s / static_cast<double>(kls.size()));
            break;
        }
        case TaskKind::Multilabel: {
            for (int k : cfg.eval.precision_ks) {
                int k_eff = std::min(k, data.num_labels);
                std::vector<double> precs(ids.size());
                parallel_for(ids.size(), cfg.threads, [&](std::size_t i) {
                    auto idx = static_cast<std::size_t>(ids[i]);
                    precs[i] = precision_at_k(logits_values(bundle, data, ids[i]),
                                              data.full_annotations[idx][0], k_eff);
                });
                double s = 0.0;
                for (double v : precs) s += v;
                rep.set("precision_at_" + std::to_string(k),
                        s / static_cast<double>(precs.size()));
            }
            break;
        }
        case TaskKind::Sequence: {
            std::vector<double> oracle(ids.size()), recall(ids.size()), distinct(ids.size());
            parallel_for(ids.size(), cfg.threads, [&](std::size_t i) {
                auto idx = static_cast<std::size_t>(ids[i]);
                auto hyps = beam_search(bundle.decoder, bundle.task_params,
                                        data.regions[idx], data.features[idx],
                                        cfg.eval.beam_size, cfg.eval.max_length);
                std::vector<Annotation> decoded;
                for (const BeamHypothesis& h : hyps) decoded.push_back(strip_end(h.tokens));
                oracle[i] =
                    oracle_best(decoded, strip_end_all(data.full_annotations[idx]));
                // Diversity is list-local: each example's decoded list is scored on
                // its own distinct n-gram ratio, then averaged across examples.
                std::erase_if(decoded, [](const Annotation& a) { return a.empty(); });
                distinct[i] =
                    decoded.empty() ? 0.0 : distinct_ngrams(decoded, cfg.eval.ngram_n);
                recall[i] = recall_for_example(bundle, data, ids[i], cfg.eval.pool_size,
                                               cfg.eval.recall_k, cfg.seed);
            });
            double so = 0.0, sr = 0.0, sd = 0.0;
            for (double v : oracle) so += v;
            for (double v : recall) sr += v;
            for (double v : distinct) sd += v;
            rep.set("oracle_f1", so / static_cast<double>(oracle.size()));
            rep.set("recall_at_k", sr / static_cast<double>(recall.size()));
            rep.set("distinct_ngrams", sd / static_cast<double>(distinct.size()));
            break;
        }
    }
    rep.wall_clock_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return rep;
}

std::string RunHistory::to_json() const {
    ordered_json j;
    j["train_loss"] = train_loss;
    j["samples_per_step"] = samples_per_step;
    ordered_json evs = ordered_json::array();
    for (const EvalPoint& e : evals) evs.push_back({{"step", e.step}, {"metric", e.metric}});
    j["evals"] = evs;
    ordered_json refs = ordered_json::array();
    for (const auto& [step, version] : refreshes)
        refs.push_back({{"step", step}, {"version", version}});
    j["refreshes"] = refs;
    j["checkpoints"] = checkpoints;
    j["best_step"] = best_step;
    j["last_step"] = last_step;
    j["best_metric"] = best_metric;
    j["lower_is_better"] = lower_is_better;
    return j.dump(2) + "\n";
}

ObjectiveConfig objective_for_mode(const ObjectiveConfig& base, Mode mode) {
    ObjectiveConfig out = base;
    out.mode = mode;
    if (mode == Mode::Mle || mode == Mode::CeL2) {
        out.transfer_weight = 0.0;
        out.reg_weight = 0.0;
    }
    return out;
}

namespace {

std::string run_id_for(const ExperimentConfig& cfg) {
    return hex64(fnv1a64(config_to_json(cfg)));
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    out << text;
    if (!out) throw std::runtime_error("write failed for " + path);
}

MetricsReport run_pipeline(const ExperimentConfig& cfg, const std::string& out_dir,
                           const std::string& group = "") {
    cfg.validate();
    auto start = std::chrono::steady_clock::now();
    std::filesystem::create_directories(out_dir);
    SparseDataset data = prepare_dataset(cfg);
    TrainResult result = train(cfg, data);
    MetricsReport rep = evaluate(result.bundle, data, cfg);
    rep.wall_clock_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    rep.run_id = run_id_for(cfg);
    rep.run_group = group;
    rep.config_json = config_to_json(cfg);

    write_checkpoint(result.bundle, result.history.best_step, out_dir + "/best.ckpt");
    write_checkpoint(result.last, result.history.last_step, out_dir + "/last.ckpt");
    result.history.checkpoints = {"best.ckpt", "last.ckpt"};
    write_text(out_dir + "/config.json", config_to_json(cfg));
    write_text(out_dir + "/report.json", rep.to_json());
    write_text(out_dir + "/report.csv", rep.to_csv());
    write_text(out_dir + "/history.json", result.history.to_json());
    log_line(1, "run " + rep.run_id + " (" + rep.mode + ") done");
    return rep;
}

int guarded(const std::string& out_dir, const std::function<void()>& body) {
    try {
        body();
        return 0;
    } catch (const std::exception& e) {
        log_line(0, std::string("error: ") + e.what());
        std::error_code ec;
        std::filesystem::create_directories(out_dir, ec);
        if (!ec) {
            std::ofstream out(out_dir + "/FAILED");
            out << e.what() << "\n";
        }
        return 1;
    }
}

}  // namespace

int run_experiment(const ExperimentConfig& cfg, const std::string& out_dir) {
    return guarded(out_dir, [&] { run_pipeline(cfg, out_dir); });
}

int compare_modes(const ExperimentConfig& cfg, const std::vector<Mode>& modes,
                  const std::string& out_dir) {
    return guarded(out_dir, [&] {
        std::string group = run_id_for(cfg);
        std::vector<MetricsReport> reports;
        for (Mode mode : modes) {
            ExperimentConfig sub = cfg;
            sub.objective = objective_for_mode(cfg.objective, mode);
            reports.push_back(run_pipeline(sub, out_dir + "/" + mode_name(mode), group));
        }
        // Union of metric names, first-seen order.
        std::vector<std::string> names;
        for (const MetricsReport& r : reports)
            for (const auto& [name, value] : r.values())
                if (std::find(names.begin(), names.end(), name) == names.end())
                    names.push_back(name);
        std::ostringstream csv;
        csv.precision(17);
        csv << "mode";
        for (const auto& n : names) csv << ',' << n;
        csv << '\n';
        ordered_json table = ordered_json::array();
        for (const MetricsReport& r : reports) {
            csv << r.mode;
            ordered_json row{{"mode", r.mode}, {"run_id", r.run_id}, {"group", group}};
            for (const auto& n : names) {
                if (r.has(n)) {
                    csv << ',' << r.get(n);
                    row[n] = r.get(n);
                } else {
                    csv << ',';
                }
            }
            csv << '\n';
            table.push_back(row);
        }
        write_text(out_dir + "/compare.csv", csv.str());
        write_text(out_dir + "/compare.json", table.dump(2) + "\n");
    });
}

int sweep_lambda(const ExperimentConfig& cfg, const std::vector<double>& lambdas,
                 const std::string& out_dir) {
    return guarded(out_dir, [&] {
        std::string group = run_id_for(cfg);
        std::ostringstream csv;
        csv.precision(17);
        csv << "lambda,metric,value\n";
        for (double lambda : lambdas) {
            ExperimentConfig sub = cfg;
            sub.objective.transfer_weight = lambda;
            std::ostringstream name;
            name << "lambda-" << lambda;
            MetricsReport rep = run_pipeline(sub, out_dir + "/" + name.str(), group);
            for (const auto& [metric, value] : rep.values())
                csv << lambda << ',' << metric << ',' << value << '\n';
        }
        write_text(out_dir + "/sweep.csv", csv.str());
    });
}

}  // namespace nt
