#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "dpig/trainer.hpp"

namespace dpig {

// Flat key=value config text with dotted section paths. render() is
// canonical (sorted keys), so parse(render(c)) == c.
class FlatConfig {
public:
    static FlatConfig parse(const std::string& text);
    std::string render() const;

    void set(const std::string& key, const std::string& value);
    void set_f(const std::string& key, double v);
    void set_i(const std::string& key, int64_t v);
    bool has(const std::string& key) const;

    std::string get_s(const std::string& key, const std::string& fallback) const;
    double get_f(const std::string& key, double fallback) const;
    int64_t get_i(const std::string& key, int64_t fallback) const;

    const std::map<std::string, std::string>& entries() const { return kv_; }
    bool operator==(const FlatConfig&) const = default;

private:
    std::map<std::string, std::string> kv_;
};

enum class RunMode { train, train_dist, sample, sweep, inspect_privacy };

enum class TransportKind { inproc, socket };

// Everything a run needs; mirrors the CLI flags. Defaults: batch 64,
// 50 epochs, delta 1e-5, lr 2e-4, codes uniform in [-1,1].
struct RunConfig {
    uint64_t seed = 1;
    std::string out_dir = "out";

    // data
    std::string data_source = "synth";  // synth | idx
    std::string idx_images;             // path, when source=idx
    int64_t synth_count = 1024;
    uint64_t data_seed = 0;  // 0 = derive from seed

    LatentSpec latent;
    std::string arch_preset = "mnist";  // mnist | tiny
    int64_t g_base = 128, d_base = 64, q_base = 64, tap_index = 3;

    double epsilon = 10.0, delta = 1e-5, clip_norm = 1.0;
    int64_t batch_size = 64, d_iters = 1;
    int64_t epochs = 50;
    double learning_rate = 2e-4, lambda_info = 1.0;
    double adam_beta1 = 0.5, adam_beta2 = 0.999, adam_eps = 1e-8;
    int64_t checkpoint_interval = 1;

    // distributed
    int64_t n_clients = 1, rounds = 1, steps_per_round = 1;
    TransportKind transport = TransportKind::inproc;
    std::string endpoint = "127.0.0.1:0";
    int64_t per_client = 0;  // 0 = synth_count / n_clients

    // sweep / sample
    std::string checkpoint;
    int64_t sweep_code = 0;
    double sweep_lo = -1.0, sweep_hi = 1.0;
    int64_t grid_rows = 10, grid_cols = 10;

    FlatConfig to_flat() const;
    static RunConfig from_flat(const FlatConfig& fc);
    void validate() const;  // ConfigError names the failing field path

    Architecture make_arch() const;
    TrainConfig make_train_config(int64_t dataset_size) const;
    uint64_t effective_data_seed() const;
};

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& text);

}  // namespace dpig
