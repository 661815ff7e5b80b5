// Command-line front end: gen / train / eval / run / compare.
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "nt/dataset_io.hpp"
#include "nt/harness.hpp"
#include "nt/util.hpp"

namespace {

struct CommonFlags {
    std::string config_path;
    std::string out_dir = "out";
    std::int64_t seed = -1;  // negative: keep the config's seed
    std::string mode;
    int threads = 1;
};

void add_common(CLI::App* cmd, CommonFlags& flags, bool config_required) {
    auto* c = cmd->add_option("--config", flags.config_path, "experiment config (JSON)");
    if (config_required) c->required()->check(CLI::ExistingFile);
    cmd->add_option("--out", flags.out_dir, "output directory");
    cmd->add_option("--seed", flags.seed, "override the config seed");
    cmd->add_option("--mode", flags.mode,
                    "override the objective mode (ours|mle|ce-l2|augment|no-refine)");
    cmd->add_option("--threads", flags.threads, "worker threads (default 1)")
        ->check(CLI::PositiveNumber);
}

nt::ExperimentConfig resolve(const CommonFlags& flags) {
    nt::ExperimentConfig cfg = flags.config_path.empty()
                                   ? nt::ExperimentConfig{}
                                   : nt::load_config(flags.config_path);
    if (flags.seed >= 0) cfg.seed = static_cast<std::uint64_t>(flags.seed);
    if (!flags.mode.empty())
        cfg.objective = nt::objective_for_mode(cfg.objective,
                                               nt::mode_from_name(flags.mode));
    cfg.threads = flags.threads;
    cfg.validate();
    return cfg;
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    out << text;
}

int cmd_gen(const CommonFlags& flags) {
    nt::ExperimentConfig cfg = resolve(flags);
    nt::SparseDataset data = nt::prepare_dataset(cfg);
    std::filesystem::create_directories(flags.out_dir);
    std::string path = flags.out_dir + "/dataset.nt";
    nt::write_dataset(data, path);
    write_text(flags.out_dir + "/config.json", nt::config_to_json(cfg));
    nt::log_line(1, "wrote " + path + " (" + std::to_string(data.size()) +
                        " examples, fingerprint " + nt::dataset_fingerprint(data) + ")");
    return 0;
}

int cmd_train(const CommonFlags& flags) {
    nt::ExperimentConfig cfg = resolve(flags);
    nt::SparseDataset data = nt::prepare_dataset(cfg);
    nt::TrainResult result = nt::train(cfg, data);
    std::filesystem::create_directories(flags.out_dir);
    nt::write_checkpoint(result.bundle, result.history.best_step,
                         flags.out_dir + "/best.ckpt");
    nt::write_checkpoint(result.last, result.history.last_step,
                         flags.out_dir + "/last.ckpt");
    result.history.checkpoints = {"best.ckpt", "last.ckpt"};
    write_text(flags.out_dir + "/config.json", nt::config_to_json(cfg));
    write_text(flags.out_dir + "/history.json", result.history.to_json());
    nt::log_line(1, "trained to step " + std::to_string(result.history.last_step) +
                        ", best eval at step " +
                        std::to_string(result.history.best_step));
    return 0;
}

int cmd_eval(const CommonFlags& flags, const std::string& checkpoint_path,
             const std::string& dataset_path) {
    nt::ExperimentConfig cfg = flags.config_path.empty()
                                   ? nt::ExperimentConfig{}
                                   : nt::load_config(flags.config_path);
    nt::Checkpoint ckpt = nt::read_checkpoint(checkpoint_path);
    nt::SparseDataset data = nt::read_dataset(
        dataset_path.empty() ? cfg.dataset_path : dataset_path);
    cfg.task = data.task;
    cfg.objective.loss = data.task == nt::TaskKind::Multiclass
                             ? nt::LossKind::SoftmaxCe
                             : data.task == nt::TaskKind::Multilabel
                                   ? nt::LossKind::SigmoidBce
                                   : nt::LossKind::SequenceNll;
    cfg.seed = flags.seed >= 0 ? static_cast<std::uint64_t>(flags.seed) : ckpt.seed;
    if (!flags.mode.empty())
        cfg.objective = nt::objective_for_mode(cfg.objective,
                                               nt::mode_from_name(flags.mode));
    cfg.threads = flags.threads;
    nt::MetricsReport rep = nt::evaluate(ckpt.bundle, data, cfg);
    rep.run_id = nt::hex64(nt::fnv1a64(checkpoint_path + "|" + dataset_path));
    rep.config_json = nt::config_to_json(cfg);
    std::filesystem::create_directories(flags.out_dir);
    write_text(flags.out_dir + "/report.json", rep.to_json());
    write_text(flags.out_dir + "/report.csv", rep.to_csv());
    std::cout << rep.to_json();
    return 0;
}

std::vector<nt::Mode> parse_modes(const std::vector<std::string>& names) {
    std::vector<nt::Mode> modes;
    for (const std::string& n : names) modes.push_back(nt::mode_from_name(n));
    return modes;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"neighbor-transfer experiment runner"};
    app.require_subcommand(1);

    CommonFlags gen_flags, train_flags, eval_flags, run_flags, cmp_flags;

    CLI::App* gen = app.add_subcommand("gen", "generate a synthetic dataset");
    add_common(gen, gen_flags, /*config_required=*/true);

    CLI::App* train = app.add_subcommand("train", "train per config; write checkpoints");
    add_common(train, train_flags, /*config_required=*/true);

    CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
    add_common(eval, eval_flags, /*config_required=*/false);
    std::string checkpoint_path, dataset_path;
    eval->add_option("--checkpoint", checkpoint_path, "checkpoint file")
        ->required()
        ->check(CLI::ExistingFile);
    eval->add_option("--dataset", dataset_path, "dataset file (default: config's)");

    CLI::App* run = app.add_subcommand("run", "full pipeline: generate/load, train, evaluate");
    add_common(run, run_flags, /*config_required=*/true);
    std::vector<double> lambdas;
    run->add_option("--sweep-lambda", lambdas,
                    "run once per transfer weight instead of once");

    CLI::App* cmp = app.add_subcommand("compare", "one run per mode, combined table");
    add_common(cmp, cmp_flags, /*config_required=*/true);
    std::vector<std::string> mode_names = {"mle", "ce-l2", "augment", "no-refine", "ours"};
    cmp->add_option("--modes", mode_names, "modes to compare");

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) return cmd_gen(gen_flags);
        if (train->parsed()) return cmd_train(train_flags);
        if (eval->parsed()) return cmd_eval(eval_flags, checkpoint_path, dataset_path);
        if (run->parsed()) {
            nt::ExperimentConfig cfg = resolve(run_flags);
            if (!lambdas.empty())
                return nt::sweep_lambda(cfg, lambdas, run_flags.out_dir);
            return nt::run_experiment(cfg, run_flags.out_dir);
        }
        if (cmp->parsed())
            return nt::compare_modes(resolve(cmp_flags), parse_modes(mode_names),
                                     cmp_flags.out_dir);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
