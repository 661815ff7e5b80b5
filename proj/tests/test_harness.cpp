#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "nt/dataset_io.hpp"
#include "nt/harness.hpp"
#include "nt/rng.hpp"

using namespace nt;

namespace {

struct TempDir {
    std::filesystem::path path;
    TempDir() {
        static std::atomic<int> counter{0};
        auto now = std::chrono::steady_clock::now().time_since_epoch().count();
        path = std::filesystem::temp_directory_path() /
               ("nt-harness-" + std::to_string(now) + "-" +
                std::to_string(counter.fetch_add(1)));
        std::filesystem::create_directories(path);
    }
    ~TempDir() { std::filesystem::remove_all(path); }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

ExperimentConfig tiny_multiclass_config() {
    ExperimentConfig cfg = config_from_json_text(R"({
        "task": "multiclass",
        "seed": 5,
        "mode": "ours",
        "generator": {"clusters": 3, "classes": 4, "points_per_cluster": 10,
                      "input_dim": 4, "overlap": 0.3},
        "model": {"mlp_hidden": 8, "projection_hidden": 8, "projection_dim": 4},
        "training": {"batch_size": 4, "neighborhood": 2, "refresh_period": 10,
                     "max_steps": 30, "eval_every": 10, "patience": 10}
    })");
    return cfg;
}

std::vector<std::vector<double>> param_values(const ParamSet& set) {
    std::vector<std::vector<double>> out;
    for (const ParamTensor& p : set) out.push_back(p.value);
    return out;
}

}  // namespace

TEST_CASE("defaults fill in and the echo round-trips") {
    ExperimentConfig cfg = config_from_json_text("{\"task\": \"multiclass\"}");
    CHECK(cfg.seed == 1);
    CHECK(cfg.objective.mode == Mode::Ours);
    CHECK(cfg.objective.transfer_weight == 0.5);
    CHECK(cfg.objective.reg_weight == 1.0);
    CHECK(cfg.neighborhood_size == 5);
    CHECK(cfg.refresh_period == 100);
    CHECK(cfg.eval.beam_size == 20);
    CHECK(cfg.threads == 1);

    std::string echo = config_to_json(cfg);
    ExperimentConfig back = config_from_json_text(echo);
    CHECK(config_to_json(back) == echo);
}

TEST_CASE("config errors name the offending key") {
    CHECK_THROWS_WITH_AS(config_from_json_text("{\"lambda\": -1}"),
                         doctest::Contains("lambda"), std::invalid_argument);
    CHECK_THROWS_WITH_AS(config_from_json_text("{\"typo_key\": 3}"),
                         doctest::Contains("typo_key"), std::invalid_argument);
    CHECK_THROWS_WITH_AS(
        config_from_json_text("{\"training\": {\"refresh\": 10}}"),
        doctest::Contains("training.refresh"), std::invalid_argument);
    CHECK_THROWS_WITH_AS(
        config_from_json_text("{\"training\": {\"batch_size\": 0}}"),
        doctest::Contains("training.batch_size"), std::invalid_argument);
    CHECK_THROWS_AS(config_from_json_text("not json"), std::invalid_argument);
    // Baseline modes force lambda to zero unless explicitly overridden.
    ExperimentConfig mle = config_from_json_text("{\"mode\": \"mle\"}");
    CHECK(mle.objective.transfer_weight == 0.0);
    CHECK(mle.objective.reg_weight == 0.0);
    CHECK_THROWS_AS(config_from_json_text("{\"mode\": \"mle\", \"lambda\": 0.5}"),
                    std::invalid_argument);
}

TEST_CASE("projection learning rate defaults to a tenth of the task rate") {
    ExperimentConfig cfg = config_from_json_text(
        "{\"optimizer\": {\"task_lr\": 0.02}}");
    CHECK(cfg.resolved_projection_lr() == doctest::Approx(0.002).epsilon(1e-15));
    ExperimentConfig other = config_from_json_text(
        "{\"optimizer\": {\"task_lr\": 0.02, \"projection_lr\": 0.01}}");
    CHECK(other.resolved_projection_lr() == 0.01);

    SparseDataset data = prepare_dataset(tiny_multiclass_config());
    ModelBundle bundle = make_bundle(cfg, data);
    CHECK(bundle.projection_lr == doctest::Approx(bundle.task_lr / 10.0).epsilon(1e-15));
}

TEST_CASE("adam first step matches the closed form") {
    AdamOptimizer opt(0.9, 0.999, 1e-8);
    ParamTensor p{"w", {2}, {1.0, -2.0}};
    std::vector<double> g{0.3, -0.04};
    opt.begin_step();
    opt.update(p, g, 0.01);
    for (int i = 0; i < 2; ++i) {
        double expect = (i == 0 ? 1.0 : -2.0) -
                        0.01 * g[static_cast<std::size_t>(i)] /
                            (std::sqrt(g[static_cast<std::size_t>(i)] *
                                       g[static_cast<std::size_t>(i)]) +
                             1e-8);
        CHECK(p.value[static_cast<std::size_t>(i)] ==
              doctest::Approx(expect).epsilon(1e-12));
    }
    // Zero gradient leaves the parameter bitwise untouched.
    ParamTensor q{"b", {1}, {0.7}};
    opt.update(q, {0.0}, 0.01);
    CHECK(q.value[0] == 0.7);
}

TEST_CASE("dataset files round-trip bitwise") {
    TempDir tmp;
    SparseDataset data = prepare_dataset(tiny_multiclass_config());
    std::string path = tmp.file("data.nt");
    write_dataset(data, path);
    SparseDataset back = read_dataset(path);
    CHECK(back.task == data.task);
    CHECK(back.features == data.features);
    CHECK(back.true_posterior == data.true_posterior);
    CHECK(back.train_annotations == data.train_annotations);
    CHECK(back.full_annotations == data.full_annotations);
    CHECK(back.split == data.split);
    CHECK(dataset_fingerprint(back) == dataset_fingerprint(data));
}

TEST_CASE("dataset reader rejects truncated and non-finite payloads") {
    TempDir tmp;
    SparseDataset data = prepare_dataset(tiny_multiclass_config());
    std::string path = tmp.file("data.nt");
    write_dataset(data, path);

    auto size = std::filesystem::file_size(path);
    std::filesystem::resize_file(path, size / 2);  // inside the float payload
    CHECK_THROWS_WITH_AS(read_dataset(path), doctest::Contains("truncated"),
                         std::runtime_error);

    data.features[2][1] = std::nan("");
    std::string bad = tmp.file("bad.nt");
    write_dataset(data, bad);
    CHECK_THROWS_WITH_AS(read_dataset(bad), doctest::Contains("row 2"),
                         std::runtime_error);
}

TEST_CASE("checkpoints round-trip bitwise") {
    TempDir tmp;
    ExperimentConfig cfg = tiny_multiclass_config();
    SparseDataset data = prepare_dataset(cfg);
    ModelBundle bundle = make_bundle(cfg, data);
    std::string path = tmp.file("model.ckpt");
    write_checkpoint(bundle, 42, path);
    Checkpoint back = read_checkpoint(path);
    CHECK(back.step == 42);
    CHECK(back.seed == cfg.seed);
    CHECK(back.bundle.task == bundle.task);
    CHECK(back.bundle.task_lr == bundle.task_lr);
    CHECK(back.bundle.projection_lr == bundle.projection_lr);
    CHECK(param_values(back.bundle.task_params) == param_values(bundle.task_params));
    CHECK(param_values(back.bundle.projection_params) ==
          param_values(bundle.projection_params));
    CHECK(back.bundle.mlp.widths == bundle.mlp.widths);
    CHECK(back.bundle.projection.output_width == bundle.projection.output_width);
}

TEST_CASE("training logs refreshes exactly at period multiples") {
    ExperimentConfig cfg = tiny_multiclass_config();
    SparseDataset data = prepare_dataset(cfg);
    TrainResult result = train(cfg, data);
    REQUIRE(!result.history.refreshes.empty());
    CHECK(result.history.refreshes.size() == 3);  // steps 0, 10, 20
    for (std::size_t i = 0; i < result.history.refreshes.size(); ++i) {
        auto [step, version] = result.history.refreshes[i];
        CHECK(step == static_cast<std::int64_t>(i) * cfg.refresh_period);
        CHECK(version == step);
    }
    // Samples per step follow B x (1 + N).
    for (std::int64_t s : result.history.samples_per_step)
        CHECK(s == cfg.batch_size * (1 + cfg.neighborhood_size));
}

TEST_CASE("mle runs carry no neighbor machinery") {
    ExperimentConfig cfg = tiny_multiclass_config();
    cfg.objective = objective_for_mode(cfg.objective, Mode::Mle);
    SparseDataset data = prepare_dataset(cfg);
    TrainResult result = train(cfg, data);
    CHECK(result.history.refreshes.empty());
    for (std::int64_t s : result.history.samples_per_step) CHECK(s == cfg.batch_size);
}

TEST_CASE("ours with lambda 0 matches mle bitwise") {
    ExperimentConfig ours = tiny_multiclass_config();
    ours.objective.transfer_weight = 0.0;
    ours.objective.reg_weight = 0.0;
    ExperimentConfig mle = tiny_multiclass_config();
    mle.objective = objective_for_mode(mle.objective, Mode::Mle);

    SparseDataset data = prepare_dataset(ours);
    TrainResult a = train(ours, data);
    TrainResult b = train(mle, data);
    CHECK(a.history.train_loss == b.history.train_loss);  // bitwise
    CHECK(param_values(a.bundle.task_params) == param_values(b.bundle.task_params));
    CHECK(param_values(a.bundle.projection_params) ==
          param_values(b.bundle.projection_params));
}

TEST_CASE("no-refine leaves projection parameters bitwise at initialization") {
    ExperimentConfig cfg = tiny_multiclass_config();
    cfg.objective = objective_for_mode(cfg.objective, Mode::NoRefine);
    SparseDataset data = prepare_dataset(cfg);
    ModelBundle init = make_bundle(cfg, data);
    TrainResult result = train(cfg, data);
    CHECK(param_values(result.bundle.projection_params) ==
          param_values(init.projection_params));
    // Task parameters did move.
    CHECK(param_values(result.bundle.task_params) != param_values(init.task_params));
}

TEST_CASE("training twice reproduces the history exactly") {
    ExperimentConfig cfg = tiny_multiclass_config();
    SparseDataset data = prepare_dataset(cfg);
    TrainResult a = train(cfg, data);
    TrainResult b = train(cfg, data);
    CHECK(a.history.to_json() == b.history.to_json());
    CHECK(param_values(a.bundle.task_params) == param_values(b.bundle.task_params));

    MetricsReport ra = evaluate(a.bundle, data, cfg);
    MetricsReport rb = evaluate(b.bundle, data, cfg);
    CHECK(ra.values() == rb.values());
}

TEST_CASE("early stopping restores the best validation point") {
    ExperimentConfig cfg = tiny_multiclass_config();
    cfg.max_steps = 40;
    cfg.eval_every = 5;
    SparseDataset data = prepare_dataset(cfg);
    TrainResult result = train(cfg, data);
    REQUIRE(!result.history.evals.empty());
    double best = result.history.evals[0].metric;
    for (const EvalPoint& e : result.history.evals) best = std::min(best, e.metric);
    CHECK(result.history.best_metric == best);  // KL: lower is better
    CHECK(result.history.lower_is_better);
    // The restored parameters reproduce the recorded best metric.
    bool found = false;
    for (const EvalPoint& e : result.history.evals)
        if (e.step == result.history.best_step &&
            e.metric == result.history.best_metric)
            found = true;
    CHECK(found);
}

TEST_CASE("run_experiment writes the full artifact set and is deterministic") {
    TempDir tmp;
    ExperimentConfig cfg = tiny_multiclass_config();
    CHECK(run_experiment(cfg, tmp.file("a")) == 0);
    CHECK(run_experiment(cfg, tmp.file("b")) == 0);
    for (const char* name :
         {"report.json", "report.csv", "history.json", "config.json", "best.ckpt",
          "last.ckpt"})
        CHECK(std::filesystem::exists(tmp.path / "a" / name));

    auto slurp = [](const std::string& p) {
        std::ifstream in(p, std::ios::binary);
        return std::string((std::istreambuf_iterator<char>(in)),
                           std::istreambuf_iterator<char>());
    };
    auto strip_clock = [](std::string s) {
        auto at = s.find("wall_clock_seconds");
        return s.substr(0, at);
    };
    CHECK(strip_clock(slurp(tmp.file("a/report.json"))) ==
          strip_clock(slurp(tmp.file("b/report.json"))));
    CHECK(slurp(tmp.file("a/history.json")) == slurp(tmp.file("b/history.json")));
}

TEST_CASE("run_experiment flags failures and returns nonzero") {
    TempDir tmp;
    ExperimentConfig cfg = tiny_multiclass_config();
    cfg.dataset_path = tmp.file("missing.nt");
    CHECK(run_experiment(cfg, tmp.file("out")) == 1);
    CHECK(std::filesystem::exists(tmp.path / "out" / "FAILED"));
}

TEST_CASE("compare_modes emits one row per mode") {
    TempDir tmp;
    ExperimentConfig cfg = tiny_multiclass_config();
    cfg.max_steps = 12;
    cfg.eval_every = 6;
    std::vector<Mode> modes{Mode::Mle, Mode::CeL2, Mode::Augment, Mode::NoRefine,
                            Mode::Ours};
    CHECK(compare_modes(cfg, modes, tmp.file("cmp")) == 0);
    std::ifstream csv(tmp.file("cmp/compare.csv"));
    std::string line;
    std::getline(csv, line);
    CHECK(line.substr(0, 4) == "mode");
    int rows = 0;
    while (std::getline(csv, line))
        if (!line.empty()) ++rows;
    CHECK(rows == 5);
    for (const char* mode : {"mle", "ce-l2", "augment", "no-refine", "ours"})
        CHECK(std::filesystem::exists(tmp.path / "cmp" / mode / "report.json"));
}

TEST_CASE("sweep_lambda shares one run-group id across reports") {
    TempDir tmp;
    ExperimentConfig cfg = tiny_multiclass_config();
    cfg.max_steps = 12;
    cfg.eval_every = 6;
    CHECK(sweep_lambda(cfg, {0.0, 0.5}, tmp.file("sweep")) == 0);
    CHECK(std::filesystem::exists(tmp.path / "sweep" / "sweep.csv"));
    auto slurp = [](const std::filesystem::path& p) {
        std::ifstream in(p);
        return std::string((std::istreambuf_iterator<char>(in)),
                           std::istreambuf_iterator<char>());
    };
    std::string a = slurp(tmp.path / "sweep" / "lambda-0" / "report.json");
    std::string b = slurp(tmp.path / "sweep" / "lambda-0.5" / "report.json");
    auto group_of = [](const std::string& s) {
        auto at = s.find("\"run_group\": \"");
        REQUIRE(at != std::string::npos);
        return s.substr(at + 14, 16);
    };
    CHECK(group_of(a) == group_of(b));
}
