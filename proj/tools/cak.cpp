// cak: context aggregation kit command line.
//
// Subcommands: train (synthetic-task training), verify (oracle suites),
// count (parameter/FLOP accounting), bench (forward throughput),
// viz-affinity (static affinity rows as CSV + PGM).
//
// Exit codes: 0 success, 1 usage/config error, 2 training divergence,
// 3 verification failure.

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "cak/checkpoint.hpp"
#include "cak/config_io.hpp"
#include "cak/metrics.hpp"
#include "cak/trainer.hpp"
#include "cak/verify.hpp"
#include "cak/viz.hpp"

namespace {

int workers_fallback() {
    if (const char* env = std::getenv("CAK_WORKERS")) {
        const int w = std::atoi(env);
        if (w >= 1) return w;
    }
    return 1;
}

struct CountReference {
    double params_m;  // millions, 0 = unknown
    double flops_g;   // GFLOPs at 224^2, 0 = unknown
};

std::optional<CountReference> count_reference(const std::string& preset) {
    if (preset == "container") return CountReference{22.1, 8.1};
    if (preset == "container-light") return CountReference{20.0, 3.2};
    if (preset == "dw-3") return CountReference{18.7, 0.0};
    if (preset == "mh-dw-3") return CountReference{18.6, 0.0};
    if (preset == "h-deit-s") return CountReference{22.1, 0.0};
    if (preset == "mlp") return CountReference{50.9, 0.0};
    if (preset == "mlp-lr") return CountReference{36.5, 0.0};
    if (preset == "mh-mlp-lr") return CountReference{41.6, 0.0};
    return std::nullopt;
}

int cmd_train(const std::string& preset_name, const std::string& config_path, std::uint64_t seed,
              const std::string& out_dir, int workers, std::optional<std::size_t> epochs,
              std::optional<std::size_t> warmup_epochs,
              std::optional<std::size_t> steps_per_epoch, std::optional<std::size_t> batch,
              std::optional<double> base_lr, std::optional<double> target_acc,
              std::optional<std::size_t> eval_size, std::optional<std::size_t> dataset_size) {
    cak::TrainConfig cfg;
    if (!config_path.empty()) cfg = cak::parse_train_config(cak::read_kv_file(config_path));
    if (!preset_name.empty()) cfg.preset = preset_name;
    cfg.seed = seed;
    cfg.workers = workers;
    if (epochs) cfg.total_epochs = *epochs;
    if (warmup_epochs) cfg.warmup_epochs = *warmup_epochs;
    if (steps_per_epoch) cfg.steps_per_epoch = *steps_per_epoch;
    if (batch) cfg.batch_size = *batch;
    if (base_lr) cfg.base_lr = *base_lr;
    if (target_acc) cfg.target_accuracy = *target_acc;
    if (eval_size) cfg.eval_size = *eval_size;
    if (dataset_size) cfg.dataset_size = *dataset_size;

    std::filesystem::create_directories(out_dir);
    cak::TrainPaths paths;
    paths.train_log = out_dir + "/train_log.csv";
    paths.val_log = out_dir + "/val_log.csv";
    paths.checkpoint = out_dir + "/checkpoint.ctnr";
    paths.network_config = out_dir + "/network.cfg";
    paths.train_config = out_dir + "/train.cfg";

    try {
        auto result = cak::train<float>(cfg, paths);
        std::printf("trained %zu steps, final val acc %.4f%s\n", result.steps.size(),
                    result.final_val_acc, result.reached_target ? " (target reached)" : "");
        std::printf("wrote %s, %s, %s\n", paths.train_log.c_str(), paths.val_log.c_str(),
                    paths.checkpoint.c_str());
    } catch (const cak::NumericError& e) {
        std::fprintf(stderr, "training aborted: %s\n", e.what());
        return 2;
    }
    return 0;
}

int cmd_verify(const std::string& suite, std::uint64_t seed) {
    auto results = cak::verify::run_suite(suite, seed);
    std::size_t failures = 0;
    for (const auto& r : results) {
        std::printf("[%s] %-48s %s\n", r.pass ? "PASS" : "FAIL", r.name.c_str(),
                    r.detail.c_str());
        if (!r.pass) ++failures;
    }
    std::printf("%zu/%zu checks passed\n", results.size() - failures, results.size());
    return failures == 0 ? 0 : 3;
}

int cmd_count(const std::string& preset_name, std::size_t resolution, bool csv_only) {
    auto cfg = cak::preset(preset_name);
    auto net = cak::Network<float>::build(cfg, 0);
    auto report = cak::count_flops(net, resolution);
    if (csv_only) {
        std::fputs(cak::cost_report_csv(report).c_str(), stdout);
        return 0;
    }
    std::printf("preset %s at %zu^2\n", preset_name.c_str(), resolution);
    std::printf("params: %llu (%.3fM)\n", static_cast<unsigned long long>(report.params),
                report.params / 1e6);
    std::printf("flops:  %llu (%.3fG), dynamic %.3fG\n",
                static_cast<unsigned long long>(report.flops), report.flops / 1e9,
                report.dynamic_flops / 1e9);
    if (auto ref = count_reference(preset_name)) {
        if (ref->params_m > 0) {
            const double dev = (report.params / 1e6 - ref->params_m) / ref->params_m * 100.0;
            std::printf("params reference %.1fM, deviation %+.2f%%\n", ref->params_m, dev);
        }
        if (ref->flops_g > 0 && resolution == 224) {
            const double dev = (report.flops / 1e9 - ref->flops_g) / ref->flops_g * 100.0;
            std::printf("flops reference %.1fG, deviation %+.2f%%\n", ref->flops_g, dev);
        }
    }
    for (const auto& s : report.stages) {
        std::printf("  stage %-4s params %10llu  flops %14llu  dynamic %14llu%s\n",
                    s.stage.c_str(), static_cast<unsigned long long>(s.params),
                    static_cast<unsigned long long>(s.flops),
                    static_cast<unsigned long long>(s.dynamic_flops),
                    s.dynamic_flops == 0 ? "  (static only)" : "");
    }
    std::fputs(cak::cost_report_csv(report).c_str(), stdout);
    return 0;
}

int cmd_bench(const std::string& preset_name, std::size_t batch, std::size_t reps, int workers,
              std::uint64_t seed) {
    auto net = cak::Network<float>::build(cak::preset(preset_name), seed);
    auto r = cak::bench_throughput(net, batch, reps, workers, seed);
    std::printf("preset %s: %.2f images/s (batch %zu, reps %zu, workers %d, dtype %s)\n",
                preset_name.c_str(), r.images_per_sec, r.batch, r.repetitions, r.workers,
                cak::dtype_name(r.dtype));
    return 0;
}

int cmd_viz(const std::string& checkpoint, const std::string& config_path,
            const std::string& preset_name, std::size_t stage, std::size_t block,
            std::size_t head, long position, const std::string& out_prefix) {
    cak::NetworkConfig cfg;
    if (!preset_name.empty()) {
        cfg = cak::preset(preset_name);
    } else {
        std::string path = config_path;
        if (path.empty()) {
            // default: network.cfg next to the checkpoint
            path = (std::filesystem::path(checkpoint).parent_path() / "network.cfg").string();
        }
        cfg = cak::parse_network_config(cak::read_kv_file(path));
    }
    auto net = cak::load_checkpoint<float>(cfg, checkpoint);
    auto row = cak::static_affinity_row(net, stage, block, head, position);
    cak::write_text_file(out_prefix + ".csv", cak::affinity_row_csv(row));
    cak::write_binary_file(out_prefix + ".pgm", cak::pgm_bytes(row));
    std::printf("wrote %s.csv and %s.pgm (%zux%zu grid)\n", out_prefix.c_str(),
                out_prefix.c_str(), row.grid.h, row.grid.w);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"cak: context aggregation kit"};
    app.require_subcommand(1);

    std::string preset_name, config_path, out_dir = "out", suite = "all";
    std::string checkpoint, out_prefix = "affinity";
    std::uint64_t seed = 0;
    int workers = workers_fallback();
    std::size_t resolution = 224, batch = 8, reps = 10, stage = 1, block = 0, head = 0;
    long position = -1;
    bool csv_only = false;
    std::optional<std::size_t> epochs, warmup_epochs, steps_per_epoch, batch_override, eval_size, dataset_size;
    std::optional<double> base_lr, target_acc;

    auto* train = app.add_subcommand("train", "train a preset on the synthetic task");
    train->add_option("--preset", preset_name, "network preset (see `count --help`)");
    train->add_option("--config", config_path, "training config file (key = value)");
    train->add_option("--seed", seed, "root seed for init, data and batches");
    train->add_option("--out-dir", out_dir, "output directory")->capture_default_str();
    train->add_option("--workers", workers, "worker threads (env CAK_WORKERS)");
    train->add_option("--epochs", epochs, "total epochs");
    train->add_option("--warmup-epochs", warmup_epochs, "linear warmup epochs");
    train->add_option("--steps-per-epoch", steps_per_epoch, "steps per epoch");
    train->add_option("--batch-size", batch_override, "batch size");
    train->add_option("--base-lr", base_lr, "base learning rate before batch scaling");
    train->add_option("--target-acc", target_acc, "stop once held-out accuracy reaches this");
    train->add_option("--eval-size", eval_size, "held-out evaluation sample count");
    train->add_option("--dataset-size", dataset_size, "training pool size");

    auto* verify = app.add_subcommand("verify", "run oracle verification suites");
    verify->add_option("--suite", suite, "conv-equiv | grad | mix | all")
        ->capture_default_str();
    verify->add_option("--seed", seed, "suite seed");

    auto* count = app.add_subcommand("count", "parameter and FLOP accounting");
    count->add_option("--preset", preset_name, "network preset")->required();
    count->add_option("--resolution", resolution, "input resolution")->capture_default_str();
    count->add_flag("--csv", csv_only, "print only the per-stage CSV");

    auto* bench = app.add_subcommand("bench", "forward throughput");
    bench->add_option("--preset", preset_name, "network preset")->required();
    bench->add_option("--batch", batch, "batch size")->capture_default_str();
    bench->add_option("--reps", reps, "timed repetitions (median reported)")
        ->capture_default_str();
    bench->add_option("--workers", workers, "worker threads (env CAK_WORKERS)");
    bench->add_option("--seed", seed, "weights/input seed");

    auto* viz = app.add_subcommand("viz-affinity", "emit a static affinity row as CSV + PGM");
    viz->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
    viz->add_option("--config", config_path, "network config (default: network.cfg beside it)");
    viz->add_option("--preset", preset_name, "network preset instead of a config file");
    viz->add_option("--stage", stage, "stage 1..4")->capture_default_str();
    viz->add_option("--block", block, "block index within the stage")->capture_default_str();
    viz->add_option("--head", head, "head index")->capture_default_str();
    viz->add_option("--position", position, "source token index; -1 = grid center")
        ->capture_default_str();
    viz->add_option("--out", out_prefix, "output path prefix")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 1;
    }

    try {
        if (train->parsed())
            return cmd_train(preset_name, config_path, seed, out_dir, workers, epochs,
                             warmup_epochs, steps_per_epoch, batch_override, base_lr,
                             target_acc, eval_size, dataset_size);
        if (verify->parsed()) return cmd_verify(suite, seed);
        if (count->parsed()) return cmd_count(preset_name, resolution, csv_only);
        if (bench->parsed()) return cmd_bench(preset_name, batch, reps, workers, seed);
        if (viz->parsed())
            return cmd_viz(checkpoint, config_path, preset_name, stage, block, head, position,
                           out_prefix);
    } catch (const cak::Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 1;
}
