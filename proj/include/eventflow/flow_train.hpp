#pragma once

// Flow-matching objective, AdamW with decoupled weight decay, plateau
// learning-rate scheduling, the epoch loop with per-epoch physics-metric
// validation, and checkpoint persistence.

#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "eventflow/datasets.hpp"
#include "eventflow/metrics.hpp"
#include "eventflow/odeint.hpp"
#include "eventflow/velocity_net.hpp"

namespace evf {

struct TrainConfig {
    double lr = 1e-4;
    double weight_decay = 1e-5;
    std::size_t batch_size = 20000;
    int max_epochs = 800;
    double lr_decay_factor = 0.5;
    int lr_patience = 50;       // epochs without improvement before a decay
    double lr_floor = 1e-7;
    std::size_t validation_subset = 50000;
    enum class Monitor { chi2_mean, loss } monitor = Monitor::chi2_mean;
    std::uint64_t seed = 0;
    // Relaxed tolerance for the per-epoch validation generation; final
    // sampling uses the strict generation default instead.
    SolverConfig val_solver = relaxed_solver_config();

    void validate() const {
        if (!(lr > 0.0) || !(weight_decay >= 0.0))
            throw ConfigError("train: lr must be positive, weight_decay >= 0");
        if (batch_size == 0) throw ConfigError("train: batch_size must be >= 1");
        if (max_epochs < 0) throw ConfigError("train: max_epochs must be >= 0");
        if (!(lr_decay_factor > 0.0 && lr_decay_factor < 1.0))
            throw ConfigError("train: lr_decay_factor must lie in (0, 1)");
        if (lr_patience < 1) throw ConfigError("train: lr_patience must be >= 1");
        if (!(lr_floor > 0.0)) throw ConfigError("train: lr_floor must be positive");
        if (validation_subset == 0)
            throw ConfigError("train: validation_subset must be >= 1");
        val_solver.validate();
    }
};

// ------------------------------------------------------------- optimizer

struct AdamWConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct OptimizerState {
    std::vector<std::vector<float>> m;  // first moments, one array per tensor
    std::vector<std::vector<float>> v;  // second moments
    long long step = 0;
    AdamWConfig cfg;

    static OptimizerState for_params(const VelocityNetParams& params);
};

// One decoupled-weight-decay Adam update; gradients are zeroed by the
// caller between steps.
void adamw_step(VelocityNetParams& params, const VelocityNetParams& grads,
                OptimizerState& state, double lr, double weight_decay);

// ------------------------------------------------------------- scheduler

// Reduce-on-plateau with relative improvement threshold 1e-4: after
// `patience` consecutive epochs without improvement the rate halves (by
// `factor`) and clamps at `floor`.
struct PlateauScheduler {
    double lr;
    double factor;
    int patience;
    double floor;
    double rel_threshold = 1e-4;

    double best = std::numeric_limits<double>::infinity();
    int bad_epochs = 0;

    double step(double monitored) {
        if (monitored < best * (1.0 - rel_threshold)) {
            best = monitored;
            bad_epochs = 0;
        } else if (++bad_epochs >= patience) {
            lr = std::max(lr * factor, floor);
            bad_epochs = 0;
        }
        return lr;
    }
};

// ------------------------------------------------------------- objective

struct CfmBatch {
    MatF x_t;              // interpolated states
    std::vector<float> t;  // per-row times
    MatF u_t;              // target velocities x1 - x0
    MatF x0;               // prior draws (endpoint checks)
    MatF cond;             // detector-level partners (conditional runs)
    bool has_cond = false;
};

// Build a batch from explicit x1 row indices: x0 ~ N(0,I), t ~ U[0,1),
// x_t = (1-t) x0 + t x1, u_t = x1 - x0. detector_std, when given, supplies
// the paired condition rows. fixed_t overrides the time draw (endpoint
// tests).
CfmBatch make_cfm_batch(const FeatureMatrix& data_std,
                        const FeatureMatrix* detector_std,
                        std::span<const std::uint32_t> rows, Rng& rng,
                        std::optional<float> fixed_t = {});

// Draw x1 uniformly from the data, then build the batch.
CfmBatch sample_cfm_batch(const FeatureMatrix& data_std,
                          const FeatureMatrix* detector_std, std::size_t batch_size,
                          Rng& rng, std::optional<float> fixed_t = {});

// Mean over the batch of the squared L2 distance between the predicted and
// target velocities. grad_seed (when requested) receives dLoss/dPrediction.
double cfm_loss(const VelocityNetParams& params, const CfmBatch& batch,
                ForwardCache* cache = nullptr, MatF* grad_seed = nullptr);

// Loss plus parameter gradients in one pass.
double cfm_loss_and_grads(const VelocityNetParams& params, const CfmBatch& batch,
                          VelocityNetParams& grads);

// ------------------------------------------------------------- checkpoints

struct CheckpointRecord {
    VelocityNetParams params;
    PreprocessStats stats;
    TrainConfig config;
    std::int64_t epoch = 0;
    double monitor_value = std::numeric_limits<double>::infinity();
    std::uint64_t rng_digest = 0;
};

void save_checkpoint(const std::string& path, const CheckpointRecord& record);
CheckpointRecord load_checkpoint(const std::string& path);

// Checkpoint-driven sampling entry points.
inline GenerateResult generate(const CheckpointRecord& ckpt, std::size_t n,
                               const SolverConfig& cfg, std::uint64_t seed) {
    return generate(ckpt.params, ckpt.stats, n, cfg, seed);
}
inline GenerateResult unfold(const CheckpointRecord& ckpt,
                             const FeatureMatrix& detector_std,
                             const SolverConfig& cfg, std::uint64_t seed) {
    return unfold(ckpt.params, ckpt.stats, detector_std, cfg, seed);
}

// ------------------------------------------------------------- epoch log

struct EpochRecord {
    std::int64_t epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
    double chi2_mean = 0.0;
    double wasserstein_mean = 0.0;
    double correlation_distance = 0.0;
    double nfe_mean = 0.0;
    double lr = 0.0;
    double seconds = 0.0;
};

std::string epoch_record_to_json(const EpochRecord& r);
void write_epoch_log(const std::string& path, std::span<const EpochRecord> records);
std::vector<EpochRecord> read_epoch_log(const std::string& path);

// ------------------------------------------------------------- train loop

struct TrainData {
    FeatureMatrix truth_std;                    // standardized training events
    std::optional<FeatureMatrix> detector_std;  // paired rows, unfolding runs
    PreprocessStats stats;
};

struct TrainResult {
    CheckpointRecord best;
    CheckpointRecord last;
    std::vector<EpochRecord> log;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

// Shuffled-minibatch optimization with a per-epoch validation pass that
// generates events through the solver and scores them with the metrics
// suite; the best checkpoint under cfg.monitor is retained. resume_params
// and start_epoch continue an interrupted run (fresh optimizer moments).
TrainResult train(const TrainData& data, const NetConfig& net_cfg,
                  const TrainConfig& cfg, const VelocityNetParams* resume_params = nullptr,
                  std::int64_t start_epoch = 0, const EpochCallback& callback = nullptr);

}  // namespace evf
