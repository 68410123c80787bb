// Acceptance suite: one criterion per invocation, one [PASS]/[FAIL] line per
// check. Usage: acceptance <criterion 1..10> [path-to-cak-cli]
// Criteria 9 and 10 spawn the CLI and need its path.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "cak/checkpoint.hpp"
#include "cak/metrics.hpp"
#include "cak/trainer.hpp"
#include "cak/verify.hpp"
#include "cak/viz.hpp"

namespace {

int g_failures = 0;

void report(bool pass, const std::string& what, const std::string& detail) {
    std::printf("[%s] %s: %s\n", pass ? "PASS" : "FAIL", what.c_str(), detail.c_str());
    if (!pass) ++g_failures;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) return "<missing:" + path + ">";
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

int run_cli(const std::string& cli, const std::string& args, const std::string& stdout_path) {
    const std::string cmd = cli + " " + args + " > " + stdout_path + " 2>&1";
    return std::system(cmd.c_str());
}

std::filesystem::path fresh_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / name;
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

// 1. depthwise-conv equivalence, f64, <= 1e-12, sweep, < 10 s
void criterion1() {
    const auto t0 = std::chrono::steady_clock::now();
    auto results = cak::verify::run_conv_equiv_suite(1);
    bool all = true;
    for (const auto& r : results) {
        report(r.pass, "criterion 1 (" + r.name + ")", r.detail);
        all = all && r.pass;
    }
    const double sec = seconds_since(t0);
    report(all && sec < 10.0, "criterion 1 runtime",
           "sweep finished in " + std::to_string(sec) + " s (limit 10 s)");
}

// 2. attention equivalence vs naive oracle, >= 20 trials, <= 1e-12, < 5 s
void criterion2() {
    const auto t0 = std::chrono::steady_clock::now();
    auto results = cak::verify::run_attention_equiv_suite(1, 20);
    for (const auto& r : results) report(r.pass, "criterion 2 (" + r.name + ")", r.detail);
    const double sec = seconds_since(t0);
    report(sec < 5.0, "criterion 2 runtime",
           std::to_string(sec) + " s (limit 5 s)");
}

// 3. gradient suite over every block variant, rel err <= 1e-5, < 2 min
void criterion3() {
    const auto t0 = std::chrono::steady_clock::now();
    auto results = cak::verify::run_grad_suite(1, 5);
    for (const auto& r : results) report(r.pass, "criterion 3 (" + r.name + ")", r.detail);
    const double sec = seconds_since(t0);
    report(sec < 120.0, "criterion 3 runtime",
           std::to_string(sec) + " s (limit 120 s)");
}

// 4. special-case identities, bit-exact
void criterion4() {
    for (const auto& r : cak::verify::run_mix_suite(1))
        report(r.pass, "criterion 4 (" + r.name + ")", r.detail);
}

void check_param_band(const std::string& preset_name, double reference_m, double band) {
    auto net = cak::Network<float>::build(cak::preset(preset_name), 0);
    const double params_m = cak::count_params(net) / 1e6;
    const double dev = (params_m - reference_m) / reference_m;
    char detail[160];
    std::snprintf(detail, sizeof(detail),
                  "%.4fM params vs reference %.1fM, deviation %+.2f%% (band +-%.0f%%)", params_m,
                  reference_m, dev * 100.0, band * 100.0);
    report(std::abs(dev) <= band, "criterion 5 (" + preset_name + " params)", detail);
}

// 5. parameter counts vs the published figures
void criterion5() {
    check_param_band("container", 22.1, 0.05);
    check_param_band("container-light", 20.0, 0.05);
    check_param_band("dw-3", 18.7, 0.07);
}

void check_flop_band(const std::string& preset_name, double reference_g, double band) {
    auto net = cak::Network<float>::build(cak::preset(preset_name), 0);
    const auto rep = cak::count_flops(net, 224);
    const double flops_g = rep.flops / 1e9;
    const double dev = (flops_g - reference_g) / reference_g;
    char detail[160];
    std::snprintf(detail, sizeof(detail),
                  "%.3fG flops vs reference %.1fG, deviation %+.2f%% (band +-%.0f%%)", flops_g,
                  reference_g, dev * 100.0, band * 100.0);
    report(std::abs(dev) <= band, "criterion 6 (" + preset_name + " flops)", detail);
}

// 6. FLOP counts at 224^2 and the stage gating of the light variant
void criterion6() {
    check_flop_band("container", 8.1, 0.15);
    check_flop_band("container-light", 3.2, 0.15);
    auto light = cak::Network<float>::build(cak::preset("container-light"), 0);
    const auto rep = cak::count_flops(light, 224);
    const bool gated = rep.stages[0].dynamic_flops == 0 && rep.stages[1].dynamic_flops == 0 &&
                       rep.stages[2].dynamic_flops == 0;
    char detail[160];
    std::snprintf(detail, sizeof(detail),
                  "dynamic flops per stage: %llu / %llu / %llu / %llu",
                  static_cast<unsigned long long>(rep.stages[0].dynamic_flops),
                  static_cast<unsigned long long>(rep.stages[1].dynamic_flops),
                  static_cast<unsigned long long>(rep.stages[2].dynamic_flops),
                  static_cast<unsigned long long>(rep.stages[3].dynamic_flops));
    report(gated, "criterion 6 (container-light stages 1-3 static only)", detail);
}

// 7. the lr scaling rule and schedule endpoints
void criterion7() {
    const bool exact = cak::lr_scaled(5e-4, 128, 8) == 1e-3;
    report(exact, "criterion 7 (lr rule)",
           "lr_scaled(5e-4, 128, 8) == 1e-3 exactly: " + std::string(exact ? "yes" : "no"));

    cak::TrainConfig cfg;
    cfg.base_lr = 5e-4;
    cfg.batch_size = 128;
    cfg.workers = 8;
    cfg.total_epochs = 300;
    cfg.warmup_epochs = 5;
    cfg.steps_per_epoch = 100;
    const double peak = cak::lr_scaled(cfg.base_lr, cfg.batch_size, 8);
    const bool start0 = cak::lr_at(0, cfg) == 0.0;
    const bool peak_at_warmup = cak::lr_at(cfg.warmup_steps(), cfg) == peak;
    const bool end0 = std::abs(cak::lr_at(cfg.total_steps(), cfg)) <= 1e-12;
    char detail[160];
    std::snprintf(detail, sizeof(detail),
                  "lr(0)=%.3g, lr(warmup end)=%.6g (peak %.6g), lr(final)=%.3g",
                  cak::lr_at(0, cfg), cak::lr_at(cfg.warmup_steps(), cfg), peak,
                  cak::lr_at(cfg.total_steps(), cfg));
    report(start0 && peak_at_warmup && end0, "criterion 7 (schedule endpoints)", detail);
}

// 8. training smoke: container-mini to >= 95% held-out accuracy within 3000
// steps, single worker, < 30 min
void criterion8() {
    const auto t0 = std::chrono::steady_clock::now();
    cak::TrainConfig cfg;
    cfg.preset = "container-mini";
    cfg.base_lr = 0.064;
    cfg.batch_size = 8;
    cfg.workers = 1;
    cfg.total_epochs = 60;
    cfg.warmup_epochs = 3;
    cfg.steps_per_epoch = 50;
    cfg.eval_size = 128;
    cfg.seed = 7;
    cfg.target_accuracy = 0.95;
    auto result = cak::train<float>(cfg);
    const double sec = seconds_since(t0);
    const std::size_t steps = result.steps.size();
    double best = 0.0;
    for (const auto& e : result.epochs) best = std::max(best, e.val_acc);
    char detail[200];
    std::snprintf(detail, sizeof(detail),
                  "best held-out accuracy %.4f after %zu steps in %.0f s (need >= 0.95 within "
                  "3000 steps and 1800 s)",
                  best, steps, sec);
    report(result.reached_target && steps <= 3000 && sec < 1800.0, "criterion 8 (training smoke)",
           detail);
}

// 9. determinism: identical flags + seed give byte-identical logs/checkpoints
void criterion9(const std::string& cli) {
    auto dir = fresh_dir("cak_acceptance_det");
    const std::string run_a = (dir / "a").string();
    const std::string run_b = (dir / "b").string();
    const std::string train_args =
        "train --preset container-mini --seed 7 --epochs 1 --warmup-epochs 0 --steps-per-epoch 8 --batch-size 2 "
        "--eval-size 8 --dataset-size 64";
    const int rc_a = run_cli(cli, train_args + " --out-dir " + run_a, (dir / "a.out").string());
    const int rc_b = run_cli(cli, train_args + " --out-dir " + run_b, (dir / "b.out").string());
    const bool ran = rc_a == 0 && rc_b == 0;
    report(ran, "criterion 9 (train exits cleanly)",
           "exit codes " + std::to_string(rc_a) + ", " + std::to_string(rc_b));

    for (const char* file : {"train_log.csv", "val_log.csv", "checkpoint.ctnr"}) {
        const std::string a = read_file(run_a + "/" + file);
        const std::string b = read_file(run_b + "/" + file);
        report(ran && !a.empty() && a == b, std::string("criterion 9 (") + file + " identical)",
               a == b ? std::to_string(a.size()) + " bytes, byte-identical"
                      : "runs differ");
    }

    const int rc_c1 = run_cli(cli, "count --preset container-light --resolution 224",
                              (dir / "c1.out").string());
    const int rc_c2 = run_cli(cli, "count --preset container-light --resolution 224",
                              (dir / "c2.out").string());
    const std::string c1 = read_file((dir / "c1.out").string());
    const std::string c2 = read_file((dir / "c2.out").string());
    report(rc_c1 == 0 && rc_c2 == 0 && c1 == c2, "criterion 9 (count output identical)",
           c1 == c2 ? "byte-identical" : "outputs differ");
}

// 10. visualization contract on a trained container-mini checkpoint
void criterion10(const std::string& cli) {
    auto dir = fresh_dir("cak_acceptance_viz");
    const std::string run = (dir / "run").string();
    const int rc = run_cli(cli,
                           "train --preset container-mini --seed 11 --epochs 1 --warmup-epochs 0 "
                           "--steps-per-epoch 4 --batch-size 2 --eval-size 8 --dataset-size 32 "
                           "--out-dir " + run,
                           (dir / "train.out").string());
    report(rc == 0, "criterion 10 (training run for checkpoint)", "exit code " + std::to_string(rc));
    if (rc != 0) return;

    auto cfg = cak::parse_network_config(cak::read_kv_file(run + "/network.cfg"));
    auto net = cak::load_checkpoint<float>(cfg, run + "/checkpoint.ctnr");
    const std::size_t grids[4] = {16, 8, 4, 2};
    for (std::size_t stage = 1; stage <= 4; ++stage) {
        const std::string prefix = (dir / ("s" + std::to_string(stage))).string();
        const std::string args = "viz-affinity --checkpoint " + run + "/checkpoint.ctnr" +
                                 " --stage " + std::to_string(stage) + " --block 0 --out " +
                                 prefix;
        const int vrc = run_cli(cli, args, (dir / "viz.out").string());
        const std::string pgm = read_file(prefix + ".pgm");
        const std::string expected_header = "P5\n" + std::to_string(grids[stage - 1]) + " " +
                                            std::to_string(grids[stage - 1]) + "\n255\n";
        const bool pgm_ok = pgm.rfind(expected_header, 0) == 0 &&
                            pgm.size() == expected_header.size() +
                                              grids[stage - 1] * grids[stage - 1];
        char what[64];
        std::snprintf(what, sizeof(what), "criterion 10 (stage %zu pgm grid)", stage);
        report(vrc == 0 && pgm_ok, what,
               "expect " + std::to_string(grids[stage - 1]) + "x" +
                   std::to_string(grids[stage - 1]) + " P5, got " +
                   std::to_string(pgm.size()) + " bytes");

        // CSV round-trip: parsed text equals the in-memory row bit-for-bit
        std::size_t rows = 0, cols = 0;
        auto parsed = cak::parse_csv_matrix(read_file(prefix + ".csv"), rows, cols);
        auto direct = cak::static_affinity_row(net, stage, 0, 0, -1);
        bool round_trip = rows == grids[stage - 1] && cols == grids[stage - 1] &&
                          parsed.size() == direct.values.size();
        if (round_trip)
            for (std::size_t i = 0; i < parsed.size(); ++i)
                round_trip = round_trip && parsed[i] == direct.values[i];
        std::snprintf(what, sizeof(what), "criterion 10 (stage %zu csv round-trip)", stage);
        report(round_trip, what,
               round_trip ? "values exact through 17-digit text" : "csv does not round-trip");
    }
}

}  // namespace

int main(int argc, char** argv) {
    if (argc < 2) {
        std::fprintf(stderr, "usage: acceptance <criterion 1..10|all> [cak-cli-path]\n");
        return 2;
    }
    const std::string which = argv[1];
    const std::string cli = argc > 2 ? argv[2] : "";
    auto need_cli = [&](int n) {
        if (cli.empty()) {
            std::fprintf(stderr, "criterion %d needs the cak CLI path as argv[2]\n", n);
            std::exit(2);
        }
    };
    auto run_one = [&](int n) {
        switch (n) {
            case 1: criterion1(); break;
            case 2: criterion2(); break;
            case 3: criterion3(); break;
            case 4: criterion4(); break;
            case 5: criterion5(); break;
            case 6: criterion6(); break;
            case 7: criterion7(); break;
            case 8: criterion8(); break;
            case 9: need_cli(9); criterion9(cli); break;
            case 10: need_cli(10); criterion10(cli); break;
            default:
                std::fprintf(stderr, "unknown criterion %d\n", n);
                std::exit(2);
        }
    };
    if (which == "all") {
        for (int n = 1; n <= 10; ++n) run_one(n);
    } else {
        run_one(std::atoi(which.c_str()));
    }
    if (g_failures) std::printf("%d check(s) failed\n", g_failures);
    return g_failures == 0 ? 0 : 1;
}
