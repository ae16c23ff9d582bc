#pragma once

#include <functional>
#include <string>
#include <vector>

#include "dpig/data.hpp"
#include "dpig/privacy.hpp"
#include "dpig/qchannel.hpp"

namespace dpig {

// Per-client training configuration. Batch size and discriminator
// iterations live in privacy (single source of truth for Eq.-style
// calibration); accessors forward to them.
struct TrainConfig {
    PrivacyParams privacy;
    LatentSpec latent;
    Architecture arch;
    int64_t epochs = 50;
    double learning_rate = 2e-4;
    double adam_beta1 = 0.5;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    double lambda_info = 1.0;
    uint64_t seed = 0;
    int64_t checkpoint_interval = 1;  // epochs
    bool check_tape_hygiene = true;

    int64_t batch_size() const { return privacy.batch_size; }
    int64_t d_iters() const { return privacy.d_iters; }
    AdamConfig adam() const { return {learning_rate, adam_beta1, adam_beta2, adam_eps}; }
};

struct StepReport {
    int64_t step = 0;
    double d_loss = 0.0;
    double g_loss = 0.0;
    double q_loss = 0.0;
    double preclip_mean = 0.0;
    double preclip_max = 0.0;
    double postclip_max = 0.0;
    double eps_spent = 0.0;
    int64_t ledger_steps = 0;
    bool finite = true;

    std::string metrics_line() const;
};

struct TrainingAborted : Error {
    StepReport report;
    TrainingAborted(StepReport r, const std::string& msg) : Error(msg), report(std::move(r)) {}
};

// Runs Algorithm-1 steps for one client: I_d privatized discriminator
// updates, then the generator/Q update through a QChannel. Owns the batch
// schedule (fresh shuffle per epoch, partial tail dropped) and the privacy
// ledger. theta_q is deliberately absent; it lives behind the channel.
class Trainer {
public:
    Trainer(const TrainConfig& cfg, ParamSet& g, ParamSet& d, DatasetShard shard,
            uint32_t client_index = 1);

    StepReport train_step(QChannel& q);
    std::vector<StepReport> run_steps(int64_t k, QChannel& q);
    std::vector<StepReport> train(QChannel& q,
                                  const std::function<void(int64_t epoch)>& on_epoch_end = {});

    int64_t steps_per_epoch() const;
    int64_t step_count() const { return steps_done_; }
    const AccountantLedger& ledger() const { return ledger_; }
    const TrainConfig& config() const { return cfg_; }
    const DatasetShard& shard() const { return shard_; }
    Rng& rng() { return rng_; }

private:
    Tensor next_batch();
    StepReport step_on_batch(const Tensor& real, QChannel& qch);

    TrainConfig cfg_;
    ParamSet& g_;
    ParamSet& d_;
    DatasetShard shard_;
    Rng rng_;
    AdamState adam_g_;
    AdamState adam_d_;
    AccountantLedger ledger_;
    std::vector<int64_t> order_;
    int64_t batch_cursor_ = 0;
    int64_t steps_done_ = 0;
};

}  // namespace dpig
