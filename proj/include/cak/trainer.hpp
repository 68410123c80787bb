#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "cak/checkpoint.hpp"
#include "cak/config_io.hpp"
#include "cak/dataset.hpp"
#include "cak/network.hpp"

// Desk-scale supervised training on the synthetic local-vs-global task:
// AdamW with decoupled weight decay, linear warmup into a cosine schedule,
// and the batch/worker learning-rate scaling rule. Runs are bit-reproducible
// for a fixed seed; per-sample gradients are merged in sample-index order so
// the result does not depend on the worker count.
namespace cak {

struct TrainConfig {
    std::string preset = "container-mini";
    std::optional<NetworkConfig> network;  // overrides `preset` when set

    double base_lr = 0.016;
    std::size_t batch_size = 8;
    int workers = 1;
    std::size_t total_epochs = 60;
    std::size_t warmup_epochs = 5;
    std::size_t steps_per_epoch = 50;
    double weight_decay = 0.05;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::uint64_t seed = 0;

    std::size_t dataset_size = 4096;
    std::size_t eval_size = 128;
    std::size_t c_local = 4;
    std::size_t c_global = 4;
    double target_accuracy = 0.0;  // stop once validation reaches this, if > 0

    std::size_t total_steps() const { return total_epochs * steps_per_epoch; }
    std::size_t warmup_steps() const { return warmup_epochs * steps_per_epoch; }
};

inline void validate_train_config(const TrainConfig& cfg) {
    if (cfg.batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (cfg.warmup_epochs > cfg.total_epochs)
        throw ConfigError("warmup_epochs " + std::to_string(cfg.warmup_epochs) +
                          " exceeds total_epochs " + std::to_string(cfg.total_epochs));
    if (cfg.steps_per_epoch < 1) throw ConfigError("steps_per_epoch must be >= 1");
    if (cfg.workers < 1) throw ConfigError("workers must be >= 1");
}

// lr = base * batch * workers / 512
inline double lr_scaled(double base, std::size_t batch, std::size_t workers) {
    return base * static_cast<double>(batch) * static_cast<double>(workers) / 512.0;
}

// Linear warmup from 0 to the scaled peak, then cosine decay to 0.
inline double lr_at(std::size_t step, const TrainConfig& cfg) {
    const double peak = lr_scaled(cfg.base_lr, cfg.batch_size, static_cast<std::size_t>(cfg.workers));
    const std::size_t warm = cfg.warmup_steps();
    const std::size_t total = cfg.total_steps();
    if (step < warm) return peak * static_cast<double>(step) / static_cast<double>(warm);
    if (step >= total) return 0.0;
    const double progress =
        static_cast<double>(step - warm) / static_cast<double>(total - warm);
    return peak * 0.5 * (1.0 + std::cos(3.14159265358979323846 * progress));
}

// Decoupled-weight-decay Adam over a parameter registry. Moments are kept
// per parameter; gradients are zeroed after each step.
template <typename T>
class AdamW {
public:
    explicit AdamW(const std::vector<RegistryEntry<T>>& params) : params_(&params) {
        m_.reserve(params.size());
        v_.reserve(params.size());
        for (const auto& e : params) {
            m_.emplace_back(e.param->value.shape());
            v_.emplace_back(e.param->value.shape());
        }
    }

    void step(double lr, const TrainConfig& cfg) {
        ++t_;
        const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t_));
        for (std::size_t p = 0; p < params_->size(); ++p) {
            const auto& entry = (*params_)[p];
            Param<T>& param = *entry.param;
            for (std::size_t i = 0; i < param.numel(); ++i) {
                if (std::isnan(static_cast<double>(param.grad[i])))
                    throw NumericError("NaN gradient in tensor '" + entry.name + "'");
            }
            T* w = param.value.data();
            T* g = param.grad.data();
            T* m = m_[p].data();
            T* v = v_[p].data();
            const T decay = static_cast<T>(1.0 - lr * cfg.weight_decay);
            for (std::size_t i = 0; i < param.numel(); ++i) {
                w[i] *= decay;
                m[i] = static_cast<T>(cfg.beta1) * m[i] + static_cast<T>(1.0 - cfg.beta1) * g[i];
                v[i] = static_cast<T>(cfg.beta2) * v[i] +
                       static_cast<T>(1.0 - cfg.beta2) * g[i] * g[i];
                const double mhat = static_cast<double>(m[i]) / bc1;
                const double vhat = static_cast<double>(v[i]) / bc2;
                w[i] -= static_cast<T>(lr * mhat / (std::sqrt(vhat) + cfg.eps));
                g[i] = T{0};
            }
        }
    }

private:
    const std::vector<RegistryEntry<T>>* params_;
    std::vector<Tensor<T>> m_;
    std::vector<Tensor<T>> v_;
    long t_ = 0;
};

struct StepRecord {
    std::size_t step = 0;
    double lr = 0.0;
    double loss = 0.0;
};

struct EpochRecord {
    std::size_t epoch = 0;
    double val_acc = 0.0;
};

struct TrainPaths {
    std::string train_log;
    std::string val_log;
    std::string checkpoint;
    std::string network_config;
    std::string train_config;
};

struct TrainResult {
    std::vector<StepRecord> steps;
    std::vector<EpochRecord> epochs;
    bool reached_target = false;
    double final_val_acc = 0.0;
};

inline std::string write_train_config(const TrainConfig& cfg) {
    std::ostringstream os;
    os << "# cak training configuration\n";
    os << "preset = " << cfg.preset << "\n";
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.10g", cfg.base_lr);
    os << "base_lr = " << buf << "\n";
    os << "batch_size = " << cfg.batch_size << "\n";
    os << "workers = " << cfg.workers << "\n";
    os << "total_epochs = " << cfg.total_epochs << "\n";
    os << "warmup_epochs = " << cfg.warmup_epochs << "\n";
    os << "steps_per_epoch = " << cfg.steps_per_epoch << "\n";
    std::snprintf(buf, sizeof(buf), "%.10g", cfg.weight_decay);
    os << "weight_decay = " << buf << "\n";
    std::snprintf(buf, sizeof(buf), "%.10g", cfg.beta1);
    os << "beta1 = " << buf << "\n";
    std::snprintf(buf, sizeof(buf), "%.10g", cfg.beta2);
    os << "beta2 = " << buf << "\n";
    std::snprintf(buf, sizeof(buf), "%.10g", cfg.eps);
    os << "eps = " << buf << "\n";
    os << "seed = " << cfg.seed << "\n";
    os << "dataset_size = " << cfg.dataset_size << "\n";
    os << "eval_size = " << cfg.eval_size << "\n";
    os << "c_local = " << cfg.c_local << "\n";
    os << "c_global = " << cfg.c_global << "\n";
    std::snprintf(buf, sizeof(buf), "%.10g", cfg.target_accuracy);
    os << "target_accuracy = " << buf << "\n";
    return os.str();
}

inline TrainConfig parse_train_config(const KvMap& kv) {
    TrainConfig cfg;
    for (const auto& [key, value] : kv) {
        if (key == "preset") cfg.preset = value;
        else if (key == "base_lr") cfg.base_lr = detail::kv_num(kv, key, cfg.base_lr);
        else if (key == "batch_size") cfg.batch_size = detail::kv_uint(kv, key, cfg.batch_size);
        else if (key == "workers") cfg.workers = static_cast<int>(detail::kv_uint(kv, key, 1));
        else if (key == "total_epochs") cfg.total_epochs = detail::kv_uint(kv, key, cfg.total_epochs);
        else if (key == "warmup_epochs") cfg.warmup_epochs = detail::kv_uint(kv, key, cfg.warmup_epochs);
        else if (key == "steps_per_epoch") cfg.steps_per_epoch = detail::kv_uint(kv, key, cfg.steps_per_epoch);
        else if (key == "weight_decay") cfg.weight_decay = detail::kv_num(kv, key, cfg.weight_decay);
        else if (key == "beta1") cfg.beta1 = detail::kv_num(kv, key, cfg.beta1);
        else if (key == "beta2") cfg.beta2 = detail::kv_num(kv, key, cfg.beta2);
        else if (key == "eps") cfg.eps = detail::kv_num(kv, key, cfg.eps);
        else if (key == "seed") cfg.seed = static_cast<std::uint64_t>(detail::kv_uint(kv, key, 0));
        else if (key == "dataset_size") cfg.dataset_size = detail::kv_uint(kv, key, cfg.dataset_size);
        else if (key == "eval_size") cfg.eval_size = detail::kv_uint(kv, key, cfg.eval_size);
        else if (key == "c_local") cfg.c_local = detail::kv_uint(kv, key, cfg.c_local);
        else if (key == "c_global") cfg.c_global = detail::kv_uint(kv, key, cfg.c_global);
        else if (key == "target_accuracy") cfg.target_accuracy = detail::kv_num(kv, key, cfg.target_accuracy);
        else throw ConfigError("unknown training config key '" + key + "'");
    }
    return cfg;
}

namespace detail {

template <typename T>
double eval_accuracy(Network<T>& net, const SyntheticTaskConfig& task, std::size_t first_index,
                     std::size_t count, int workers) {
    if (count == 0) return 0.0;
    const NetworkConfig& ncfg = net.config();
    std::size_t correct = 0;
    const std::size_t chunk = 16;
    for (std::size_t base = 0; base < count; base += chunk) {
        const std::size_t b = std::min(chunk, count - base);
        Tensor<T> batch(Shape{b, 3, ncfg.input_h, ncfg.input_w});
        std::vector<std::size_t> labels(b);
        const std::size_t plane = ncfg.input_h * ncfg.input_w;
        for (std::size_t i = 0; i < b; ++i) {
            auto s = synthetic_sample(task, first_index + base + i);
            labels[i] = s.label;
            for (std::size_t y = 0; y < ncfg.input_h; ++y)
                for (std::size_t x = 0; x < ncfg.input_w; ++x)
                    for (std::size_t c = 0; c < 3; ++c)
                        batch[(i * 3 + c) * plane + y * ncfg.input_w + x] =
                            static_cast<T>(s.image.at(y, x, c));
        }
        auto logits = net.forward(batch, workers);
        for (std::size_t i = 0; i < b; ++i) {
            std::size_t best = 0;
            for (std::size_t j = 1; j < ncfg.num_classes; ++j)
                if (logits.at(i, j) > logits.at(i, best)) best = j;
            if (best == labels[i]) ++correct;
        }
    }
    return static_cast<double>(correct) / static_cast<double>(count);
}

}  // namespace detail

// Runs the full loop: per-step (step, lr, loss) records, per-epoch held-out
// accuracy, optional early stop at a target accuracy, checkpoint and config
// sidecars written to the given paths. Aborts with NumericError on a
// non-finite loss, keeping the partial log on disk.
template <typename T = float>
TrainResult train(const TrainConfig& cfg, const TrainPaths& paths = {}) {
    validate_train_config(cfg);
    NetworkConfig ncfg = cfg.network ? *cfg.network : preset(cfg.preset);
    SyntheticTaskConfig task;
    task.grid = ncfg.input_h;
    task.c_local = cfg.c_local;
    task.c_global = cfg.c_global;
    task.seed = cfg.seed;
    validate_synthetic_config(task);
    if (ncfg.input_h != ncfg.input_w)
        throw ConfigError("training expects square inputs");
    ncfg.num_classes = task.classes();

    Network<T> net = Network<T>::build(ncfg, cfg.seed);
    AdamW<T> optimizer(net.registry());
    SplitRng batch_rng = SplitRng(cfg.seed).fork("batches");

    if (!paths.network_config.empty())
        write_text_file(paths.network_config, write_network_config(ncfg));
    if (!paths.train_config.empty())
        write_text_file(paths.train_config, write_train_config(cfg));

    std::ofstream train_log;
    std::ofstream val_log;
    if (!paths.train_log.empty()) {
        train_log.open(paths.train_log, std::ios::trunc);
        if (!train_log) throw IoError("cannot open train log: " + paths.train_log);
        train_log << "step,lr,loss\n";
    }
    if (!paths.val_log.empty()) {
        val_log.open(paths.val_log, std::ios::trunc);
        if (!val_log) throw IoError("cannot open val log: " + paths.val_log);
        val_log << "epoch,val_acc\n";
    }

    // Worker clones: per-sample tapes run on private parameter copies, and
    // their gradients merge into the master in sample-index order.
    const std::size_t nw = static_cast<std::size_t>(cfg.workers);
    std::vector<Network<T>> clones;
    if (nw > 1)
        for (std::size_t w = 0; w < nw; ++w) clones.push_back(net.clone());

    TrainResult result;
    const std::size_t total = cfg.total_steps();
    bool stop = false;
    for (std::size_t step = 0; step < total && !stop; ++step) {
        std::vector<std::size_t> indices(cfg.batch_size);
        for (auto& ix : indices) ix = batch_rng.uniform_int(cfg.dataset_size);

        const T inv_b = T{1} / static_cast<T>(cfg.batch_size);
        std::vector<double> sample_losses(cfg.batch_size, 0.0);

        auto run_sample = [&](Network<T>& worker_net, std::size_t i) {
            auto s = synthetic_sample(task, indices[i]);
            Tensor<T> grid(Shape{task.grid, task.grid, 3});
            for (std::size_t j = 0; j < grid.numel(); ++j)
                grid[j] = static_cast<T>(s.image[j]);
            auto loss = scale(cross_entropy(worker_net.sample_forward(grid), s.label), inv_b);
            backward(loss);
            sample_losses[i] = static_cast<double>(loss->value[0]);
        };

        if (nw == 1) {
            for (std::size_t i = 0; i < cfg.batch_size; ++i) run_sample(net, i);
        } else {
            for (std::size_t wave = 0; wave < cfg.batch_size; wave += nw) {
                const std::size_t in_wave = std::min(nw, cfg.batch_size - wave);
                std::vector<std::thread> pool;
                for (std::size_t w = 0; w < in_wave; ++w)
                    pool.emplace_back([&, w] { run_sample(clones[w], wave + w); });
                for (auto& t : pool) t.join();
                for (std::size_t w = 0; w < in_wave; ++w) {
                    auto& creg = clones[w].registry();
                    auto& mreg = net.registry();
                    for (std::size_t p = 0; p < mreg.size(); ++p) {
                        T* dst = mreg[p].param->grad.data();
                        T* src = creg[p].param->grad.data();
                        for (std::size_t j = 0; j < mreg[p].param->numel(); ++j) {
                            dst[j] += src[j];
                            src[j] = T{0};
                        }
                    }
                }
            }
        }

        double loss = 0.0;
        for (double l : sample_losses) loss += l;
        const double lr = lr_at(step, cfg);

        result.steps.push_back({step, lr, loss});
        if (train_log) {
            char buf[96];
            std::snprintf(buf, sizeof(buf), "%zu,%.10g,%.10g\n", step, lr, loss);
            train_log << buf;
            train_log.flush();
        }
        if (!std::isfinite(loss))
            throw NumericError("training diverged: loss is not finite at step " +
                               std::to_string(step));

        optimizer.step(lr, cfg);
        if (nw > 1) {
            for (auto& clone : clones) {
                auto& creg = clone.registry();
                auto& mreg = net.registry();
                for (std::size_t p = 0; p < mreg.size(); ++p)
                    creg[p].param->value = mreg[p].param->value;
            }
        }

        if ((step + 1) % cfg.steps_per_epoch == 0) {
            const std::size_t epoch = (step + 1) / cfg.steps_per_epoch;
            const double acc =
                detail::eval_accuracy(net, task, cfg.dataset_size, cfg.eval_size, cfg.workers);
            result.epochs.push_back({epoch, acc});
            result.final_val_acc = acc;
            if (val_log) {
                char buf[64];
                std::snprintf(buf, sizeof(buf), "%zu,%.10g\n", epoch, acc);
                val_log << buf;
                val_log.flush();
            }
            if (cfg.target_accuracy > 0.0 && acc >= cfg.target_accuracy) {
                result.reached_target = true;
                stop = true;
            }
        }
    }

    if (!paths.checkpoint.empty()) save_checkpoint(net, paths.checkpoint);
    return result;
}

}  // namespace cak
