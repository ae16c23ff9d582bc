#include <cstdio>
#include <iostream>

#include <CLI11.hpp>

#include "dpig/commands.hpp"

namespace {

// exit codes: 0 success, 1 validation, 2 runtime, 3 protocol
constexpr int kExitValidation = 1;
constexpr int kExitRuntime = 2;
constexpr int kExitProtocol = 3;

dpig::RunConfig load_config(const std::string& config_path) {
    if (config_path.empty()) return {};
    return dpig::RunConfig::from_flat(dpig::FlatConfig::parse(dpig::read_text_file(config_path)));
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Differentially private InfoGAN trainer with a shared distributed Q service"};
    app.require_subcommand(1);

    std::string config_path;
    app.add_option("--config", config_path, "key=value config file; flags override its entries");

    // overrides shared by the training subcommands
    struct Overrides {
        std::optional<uint64_t> seed;
        std::optional<std::string> out_dir, data_source, idx_images, arch_preset, endpoint,
            transport, checkpoint;
        std::optional<double> epsilon, delta, clip_norm, learning_rate, lambda, lo, hi;
        std::optional<int64_t> batch, epochs, d_iters, synth_count, n_clients, rounds,
            steps_per_round, per_client, code_index, rows, cols;
    } ov;

    auto add_common = [&](CLI::App* cmd) {
        cmd->fallthrough();
        cmd->add_option("--seed", ov.seed, "base seed");
        cmd->add_option("--out", ov.out_dir, "output directory");
        cmd->add_option("--data", ov.data_source, "synth | idx");
        cmd->add_option("--idx-images", ov.idx_images, "IDX image file path");
        cmd->add_option("--synth-count", ov.synth_count, "synthetic dataset size");
        cmd->add_option("--arch", ov.arch_preset, "mnist | tiny");
        cmd->add_option("--epsilon", ov.epsilon, "privacy loss target");
        cmd->add_option("--delta", ov.delta, "privacy violation parameter");
        cmd->add_option("--clip-norm", ov.clip_norm, "per-example gradient clip C_p");
        cmd->add_option("--batch", ov.batch, "batch size");
        cmd->add_option("--epochs", ov.epochs, "training epochs");
        cmd->add_option("--d-iters", ov.d_iters, "discriminator iterations per step");
        cmd->add_option("--lr", ov.learning_rate, "Adam learning rate");
        cmd->add_option("--lambda", ov.lambda, "information loss weight");
    };

    CLI::App* train = app.add_subcommand("train", "single-client DP-InfoGAN training");
    add_common(train);

    CLI::App* dist = app.add_subcommand("train-dist", "N clients against one shared Q service");
    add_common(dist);
    dist->add_option("--clients", ov.n_clients, "number of clients");
    dist->add_option("--rounds", ov.rounds, "rounds");
    dist->add_option("--steps-per-round", ov.steps_per_round, "train steps per client turn");
    dist->add_option("--per-client", ov.per_client, "images per client shard");
    dist->add_option("--transport", ov.transport, "inproc | socket");
    dist->add_option("--endpoint", ov.endpoint, "host:port for socket transport");

    CLI::App* sample = app.add_subcommand("sample", "render a grid of random samples");
    sample->fallthrough();
    sample->add_option("--checkpoint", ov.checkpoint, "checkpoint file")->required();
    sample->add_option("--out", ov.out_dir, "output directory");
    sample->add_option("--seed", ov.seed, "base seed");
    sample->add_option("--rows", ov.rows, "grid rows");
    sample->add_option("--cols", ov.cols, "grid columns");

    CLI::App* sweep = app.add_subcommand("sweep", "sweep one continuous code across columns");
    sweep->fallthrough();
    sweep->add_option("--checkpoint", ov.checkpoint, "checkpoint file")->required();
    sweep->add_option("--out", ov.out_dir, "output directory");
    sweep->add_option("--seed", ov.seed, "base seed");
    sweep->add_option("--code", ov.code_index, "continuous code index");
    sweep->add_option("--lo", ov.lo, "sweep start");
    sweep->add_option("--hi", ov.hi, "sweep end");
    sweep->add_option("--rows", ov.rows, "grid rows");
    sweep->add_option("--cols", ov.cols, "grid columns");

    std::string ledger_path;
    double inspect_delta = 1e-5;
    CLI::App* inspect = app.add_subcommand("inspect-privacy", "report spent privacy budget");
    inspect->fallthrough();
    inspect->add_option("ledger", ledger_path, "ledger file")->required();
    inspect->add_option("--delta", inspect_delta, "delta for the epsilon conversion");

    CLI11_PARSE(app, argc, argv);

    try {
        dpig::RunConfig cfg = load_config(config_path);
        if (ov.seed) cfg.seed = *ov.seed;
        if (ov.out_dir) cfg.out_dir = *ov.out_dir;
        if (ov.data_source) cfg.data_source = *ov.data_source;
        if (ov.idx_images) cfg.idx_images = *ov.idx_images;
        if (ov.synth_count) cfg.synth_count = *ov.synth_count;
        if (ov.arch_preset) cfg.arch_preset = *ov.arch_preset;
        if (ov.epsilon) cfg.epsilon = *ov.epsilon;
        if (ov.delta) cfg.delta = *ov.delta;
        if (ov.clip_norm) cfg.clip_norm = *ov.clip_norm;
        if (ov.batch) cfg.batch_size = *ov.batch;
        if (ov.epochs) cfg.epochs = *ov.epochs;
        if (ov.d_iters) cfg.d_iters = *ov.d_iters;
        if (ov.learning_rate) cfg.learning_rate = *ov.learning_rate;
        if (ov.lambda) cfg.lambda_info = *ov.lambda;
        if (ov.n_clients) cfg.n_clients = *ov.n_clients;
        if (ov.rounds) cfg.rounds = *ov.rounds;
        if (ov.steps_per_round) cfg.steps_per_round = *ov.steps_per_round;
        if (ov.per_client) cfg.per_client = *ov.per_client;
        if (ov.transport) {
            if (*ov.transport == "inproc") cfg.transport = dpig::TransportKind::inproc;
            else if (*ov.transport == "socket") cfg.transport = dpig::TransportKind::socket;
            else throw dpig::ConfigError("dist.transport: must be inproc or socket");
        }
        if (ov.endpoint) cfg.endpoint = *ov.endpoint;
        if (ov.checkpoint) cfg.checkpoint = *ov.checkpoint;
        if (ov.code_index) cfg.sweep_code = *ov.code_index;
        if (ov.lo) cfg.sweep_lo = *ov.lo;
        if (ov.hi) cfg.sweep_hi = *ov.hi;
        if (ov.rows) cfg.grid_rows = *ov.rows;
        if (ov.cols) cfg.grid_cols = *ov.cols;

        if (train->parsed()) {
            const auto res = dpig::cmd_train(cfg);
            std::printf("trained %zu steps, artifacts in %s\n", res.reports.size(),
                        res.out_dir.c_str());
        } else if (dist->parsed()) {
            const auto res = dpig::cmd_train_dist(cfg);
            std::printf("ran %lld rounds x %lld clients, q updates %lld, artifacts in %s\n",
                        static_cast<long long>(cfg.rounds), static_cast<long long>(cfg.n_clients),
                        static_cast<long long>(res.q_update_count), res.out_dir.c_str());
            std::printf("traffic: %lld bytes/step vs full model %lld bytes\n",
                        static_cast<long long>(res.traffic.bytes_per_step_total()),
                        static_cast<long long>(res.traffic.full_model_bytes));
        } else if (sample->parsed()) {
            std::printf("wrote %s\n", dpig::cmd_sample(cfg).c_str());
        } else if (sweep->parsed()) {
            std::printf("wrote %s\n", dpig::cmd_sweep(cfg).c_str());
        } else if (inspect->parsed()) {
            std::fputs(dpig::cmd_inspect_privacy(ledger_path, inspect_delta).c_str(), stdout);
        }
        return 0;
    } catch (const dpig::ProtocolError& e) {
        std::fprintf(stderr, "protocol error: %s\n", e.what());
        return kExitProtocol;
    } catch (const dpig::ConfigError& e) {
        std::fprintf(stderr, "invalid configuration: %s\n", e.what());
        return kExitValidation;
    } catch (const dpig::DomainError& e) {
        std::fprintf(stderr, "invalid configuration: %s\n", e.what());
        return kExitValidation;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitRuntime;
    }
}
