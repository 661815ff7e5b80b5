#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "nt/metrics.hpp"
#include "nt/models.hpp"
#include "nt/neighborhood.hpp"
#include "nt/objectives.hpp"
#include "nt/synthgen.hpp"

namespace nt {

struct EvalSettings {
    std::vector<int> precision_ks = {1, 5, 10};
    int recall_k = 100;
    int pool_size = 200;     // own references + other examples' references
    int val_pool_size = 50;  // smaller pool for the in-training validation metric
    int beam_size = 20;
    int max_length = 16;
    int ngram_n = 4;
};

struct ExperimentConfig {
    TaskKind task = TaskKind::Multiclass;
    std::string dataset_path;  // when set, load instead of generating
    std::uint64_t seed = 1;
    ObjectiveConfig objective;

    MulticlassConfig multiclass;
    MultilabelConfig multilabel;
    SequenceConfig sequence;

    // Annotation subsampling applied to the generated dataset ("none" trains
    // on the full annotation sets).
    std::string subsample_kind = "count";
    int subsample_k = 1;
    double subsample_fraction = 0.2;

    // Model widths (dataset dimensions fill in the rest).
    int mlp_hidden = 32;
    int projection_hidden = 64;
    int projection_dim = 16;
    int decoder_emb = 16;
    int decoder_state = 24;

    // Adam.
    double task_lr = 1e-3;
    double projection_lr = -1.0;  // negative: apply the task_lr / 10 rule
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;

    int batch_size = 8;
    int neighborhood_size = 5;
    int refresh_period = 100;
    int max_steps = 20000;
    int eval_every = 200;
    int patience = 10;

    EvalSettings eval;
    int threads = 1;

    double resolved_projection_lr() const {
        return projection_lr < 0.0 ? task_lr / 10.0 : projection_lr;
    }
    void validate() const;
};

// Strict parse: unknown keys, missing required fields, and out-of-range
// values error naming the offending key. Absent keys take defaults.
ExperimentConfig load_config(const std::string& path);
ExperimentConfig config_from_json_text(const std::string& text);
// Full echo with every default materialized; deterministic field order.
std::string config_to_json(const ExperimentConfig& cfg);

// Generate (and subsample) or load the dataset named by the config.
SparseDataset prepare_dataset(const ExperimentConfig& cfg);

class AdamOptimizer {
  public:
    AdamOptimizer(double beta1, double beta2, double eps)
        : beta1_(beta1), beta2_(beta2), eps_(eps) {}

    void begin_step() { ++t_; }
    // One Adam update with bias correction; state is keyed by parameter
    // identity, so a parameter absent from a step's graph simply keeps its
    // moments decaying toward zero.
    void update(ParamTensor& p, const std::vector<double>& grad, double lr);
    std::int64_t step_count() const { return t_; }

  private:
    struct Moments {
        std::vector<double> m, v;
    };
    double beta1_, beta2_, eps_;
    std::int64_t t_ = 0;
    std::unordered_map<const ParamTensor*, Moments> state_;
};

struct EvalPoint {
    std::int64_t step = 0;
    double metric = 0.0;
};

struct RunHistory {
    std::vector<double> train_loss;              // per optimizer step
    std::vector<std::int64_t> samples_per_step;  // forward passes materialized
    std::vector<EvalPoint> evals;                // validation metric trace
    std::vector<std::pair<std::int64_t, std::int64_t>> refreshes;  // (step, version)
    std::vector<std::string> checkpoints;        // files written for this run
    std::int64_t best_step = -1;
    std::int64_t last_step = -1;
    double best_metric = 0.0;
    bool lower_is_better = false;
    std::string to_json() const;
};

struct TrainResult {
    ModelBundle bundle;  // parameters restored to the best eval point
    ModelBundle last;    // parameters as of the final executed step
    RunHistory history;
};

ModelBundle make_bundle(const ExperimentConfig& cfg, const SparseDataset& data);

TrainResult train(const ExperimentConfig& cfg, const SparseDataset& data);

MetricsReport evaluate(ModelBundle& bundle, const SparseDataset& data,
                       const ExperimentConfig& cfg);

// Full pipeline: prepare -> train -> evaluate -> write report JSON/CSV,
// checkpoint, history, and the resolved config into out_dir. Returns 0 on
// success; stage errors are reported and yield a nonzero status.
int run_experiment(const ExperimentConfig& cfg, const std::string& out_dir);

// One run per mode, shared dataset and seed; writes per-mode subdirectories
// plus a combined comparison table.
int compare_modes(const ExperimentConfig& cfg, const std::vector<Mode>& modes,
                  const std::string& out_dir);

// Grid sweep over the transfer weight; one subdirectory per value, shared
// run-group id recorded in every report.
int sweep_lambda(const ExperimentConfig& cfg, const std::vector<double>& lambdas,
                 const std::string& out_dir);

// Copy with the mode replaced; mle and ce-l2 force lambda = mu = 0.
ObjectiveConfig objective_for_mode(const ObjectiveConfig& base, Mode mode);

}  // namespace nt
