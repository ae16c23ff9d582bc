#pragma once

#include <optional>

#include "dpig/config.hpp"
#include "dpig/distributed.hpp"
#include "dpig/image.hpp"

namespace dpig {

struct TrainResult {
    std::string out_dir;
    std::vector<StepReport> reports;
    uint64_t checkpoint_fingerprint = 0;
};

struct DistResult {
    std::string out_dir;
    std::vector<std::vector<StepReport>> reports;  // per client
    int64_t q_update_count = 0;
    uint64_t q_fingerprint = 0;
    TrafficSummary traffic;
};

// Artifacts: config.effective, metrics.log, ledger.txt, privacy_report.txt,
// checkpoints/epoch_NNN.params, final.params, samples_final.pgm
TrainResult cmd_train(const RunConfig& cfg);

// Per-client subdirectories plus the shared service's traffic.log and a
// combined privacy report.
DistResult cmd_train_dist(const RunConfig& cfg);

std::string cmd_sample(const RunConfig& cfg);  // returns the image path
std::string cmd_sweep(const RunConfig& cfg);   // returns the image path
std::string cmd_inspect_privacy(const std::string& ledger_path, double delta);

// eval-mode batch generation from a checkpointed triple
Tensor generate_images_eval(GanTriple& triple, const std::vector<CodeSample>& codes);

// one grid: rows fix (z, discrete, other continuous), columns sweep
// continuous code code_index linearly over [lo, hi]
GrayImage sweep_grid(GanTriple& triple, int64_t code_index, double lo, double hi, int64_t rows,
                     int64_t cols, uint64_t seed);

struct LedgerFile {
    std::optional<PrivacyParams> target;
    AccountantLedger ledger;
};

void write_ledger_file(const std::string& path, const PrivacyParams& target,
                       const AccountantLedger& ledger);
LedgerFile read_ledger_file(const std::string& path);

GanTriple load_checkpoint(const RunConfig& cfg, const std::string& path);

}  // namespace dpig
