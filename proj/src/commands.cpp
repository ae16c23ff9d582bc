#include "dpig/commands.hpp"

#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

namespace dpig {

namespace fs = std::filesystem;

namespace {

constexpr uint64_t kSampleTag = 0x70;  // rng stream for sampling/grids

void check_image_shape(const RunConfig& cfg, const Tensor& images) {
    const Architecture arch = cfg.make_arch();
    const int64_t h = images.rank() == 4 ? images.shape[2] : images.shape[1];
    if (h != arch.image_size) {
        throw ConfigError("arch.preset: image size " + std::to_string(arch.image_size) +
                          " does not match dataset images of " + std::to_string(h));
    }
}

Tensor load_all_images(const RunConfig& cfg) {
    if (cfg.data_source == "synth") {
        return synth_images(cfg.synth_count, cfg.effective_data_seed());
    }
    const std::string path = cfg.idx_images;
    if (!fs::exists(path)) {
        throw DataError("dataset not found: " + path +
                        " (download the IDX image file, e.g. train-images-idx3-ubyte, and point "
                        "data.idx_images at it)");
    }
    return normalize_images(parse_idx_images(read_file_bytes(path)));
}

void write_metrics_log(const std::string& path, const std::vector<StepReport>& reports) {
    std::ostringstream os;
    for (const auto& r : reports) os << r.metrics_line() << "\n";
    write_text_file(path, os.str());
}

void echo_config(const RunConfig& cfg, const std::string& dir, const char* command) {
    write_text_file(dir + "/config.effective",
                    std::string("# command: ") + command + "\n" + cfg.to_flat().render());
}

void save_triple(const GanTriple& triple, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot write checkpoint: " + path);
    triple.save(f);
}

GrayImage sample_grid(GanTriple& triple, int64_t rows, int64_t cols, uint64_t seed) {
    Rng rng(seed);
    const auto codes = sample_codes(triple.latent, rows * cols, rng);
    const Tensor batch = generate_images_eval(triple, codes);
    std::vector<Tensor> tiles;
    for (int64_t i = 0; i < rows * cols; ++i) tiles.push_back(batch.slice_row(i));
    return render_grid(tiles, rows, cols);
}

}  // namespace

Tensor generate_images_eval(GanTriple& triple, const std::vector<CodeSample>& codes) {
    Tape t;
    ValueId input = t.constant(codes_to_input(triple.latent, codes));
    ValueId out = generator_forward(t, triple.arch, triple.g, input, /*training=*/false);
    return t.value(out);
}

GrayImage sweep_grid(GanTriple& triple, int64_t code_index, double lo, double hi, int64_t rows,
                     int64_t cols, uint64_t seed) {
    if (code_index < 0 || code_index >= triple.latent.continuous_codes) {
        throw ConfigError("sweep.code_index: must be in [0," +
                          std::to_string(triple.latent.continuous_codes) + ")");
    }
    Rng rng(seed);
    std::vector<CodeSample> rows_base = sample_codes(triple.latent, rows, rng);
    std::vector<CodeSample> codes;
    codes.reserve(static_cast<size_t>(rows * cols));
    for (int64_t r = 0; r < rows; ++r) {
        for (int64_t c = 0; c < cols; ++c) {
            CodeSample s = rows_base[static_cast<size_t>(r)];
            const double v = cols == 1 ? lo
                                       : lo + (hi - lo) * static_cast<double>(c) /
                                                  static_cast<double>(cols - 1);
            s.continuous[static_cast<size_t>(code_index)] = v;
            codes.push_back(std::move(s));
        }
    }
    const Tensor batch = generate_images_eval(triple, codes);
    std::vector<Tensor> tiles;
    for (int64_t i = 0; i < rows * cols; ++i) tiles.push_back(batch.slice_row(i));
    return render_grid(tiles, rows, cols);
}

void write_ledger_file(const std::string& path, const PrivacyParams& target,
                       const AccountantLedger& ledger) {
    std::ostringstream os;
    os << "# dpig ledger v1\n";
    os.precision(17);
    os << "target epsilon=" << target.epsilon << " delta=" << target.delta
       << " clip_norm=" << target.clip_norm << " batch_size=" << target.batch_size
       << " dataset_size=" << target.dataset_size << " d_iters=" << target.d_iters
       << " sigma_n=" << target.sigma_n << "\n";
    for (const auto& e : ledger.entries()) {
        os << "entry noise_multiplier=" << e.noise_multiplier << " steps=" << e.steps << "\n";
    }
    write_text_file(path, os.str());
}

LedgerFile read_ledger_file(const std::string& path) {
    LedgerFile out;
    std::istringstream is(read_text_file(path));
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty() || line[0] == '#') continue;
        if (line.rfind("target ", 0) == 0) {
            PrivacyParams p;
            long long bs = 0, ds = 0, di = 0;
            if (std::sscanf(line.c_str(),
                            "target epsilon=%lf delta=%lf clip_norm=%lf batch_size=%lld "
                            "dataset_size=%lld d_iters=%lld sigma_n=%lf",
                            &p.epsilon, &p.delta, &p.clip_norm, &bs, &ds, &di, &p.sigma_n) != 7) {
                throw DataError("ledger: unparseable target line: " + line);
            }
            p.batch_size = bs;
            p.dataset_size = ds;
            p.d_iters = di;
            out.target = p;
        } else if (line.rfind("entry ", 0) == 0) {
            double nm = 0.0;
            long long steps = 0;
            if (std::sscanf(line.c_str(), "entry noise_multiplier=%lf steps=%lld", &nm, &steps) != 2) {
                throw DataError("ledger: unparseable entry line: " + line);
            }
            out.ledger.append(nm, steps);
        } else {
            throw DataError("ledger: unexpected line: " + line);
        }
    }
    return out;
}

GanTriple load_checkpoint(const RunConfig& cfg, const std::string& path) {
    GanTriple triple = GanTriple::create(cfg.make_arch(), cfg.latent, cfg.seed);
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open checkpoint: " + path);
    triple.load(f);
    return triple;
}

TrainResult cmd_train(const RunConfig& cfg) {
    cfg.validate();
    const std::string dir = cfg.out_dir;
    fs::create_directories(dir + "/checkpoints");
    echo_config(cfg, dir, "train");

    Tensor images = load_all_images(cfg);
    check_image_shape(cfg, images);
    DatasetShard shard =
        std::move(partition(images, 1, images.shape[0], cfg.effective_data_seed() + 1)[0]);

    TrainConfig tc = cfg.make_train_config(shard.size());
    GanTriple triple = GanTriple::create(tc.arch, tc.latent, cfg.seed);
    QCore qcore(triple.arch, triple.latent, triple.q, tc.adam());
    LocalQChannel channel(qcore);
    Trainer trainer(tc, triple.g, triple.d, std::move(shard));

    std::vector<StepReport> reports = trainer.train(channel, [&](int64_t epoch) {
        if (cfg.checkpoint_interval > 0 && (epoch + 1) % cfg.checkpoint_interval == 0) {
            char name[64];
            std::snprintf(name, sizeof(name), "/checkpoints/epoch_%03lld.params",
                          static_cast<long long>(epoch + 1));
            save_triple(triple, dir + name);
        }
    });

    write_metrics_log(dir + "/metrics.log", reports);
    write_ledger_file(dir + "/ledger.txt", tc.privacy, trainer.ledger());
    write_text_file(dir + "/privacy_report.txt",
                    render_privacy_report(tc.privacy, trainer.ledger(), tc.privacy.delta));
    save_triple(triple, dir + "/final.params");
    write_pgm(dir + "/samples_final.pgm",
              sample_grid(triple, cfg.grid_rows, cfg.grid_cols, derive_seed(cfg.seed, kSampleTag, 0)));

    TrainResult res;
    res.out_dir = dir;
    res.reports = std::move(reports);
    res.checkpoint_fingerprint = triple.q.fingerprint();
    return res;
}

DistResult cmd_train_dist(const RunConfig& cfg) {
    cfg.validate();
    const std::string dir = cfg.out_dir;
    fs::create_directories(dir);
    echo_config(cfg, dir, "train-dist");

    const int64_t n = cfg.n_clients;
    const int64_t per = cfg.per_client > 0 ? cfg.per_client : cfg.synth_count / n;
    if (per < 1) throw ConfigError("dist.per_client: no data per client");

    Tensor images = load_all_images(cfg);
    check_image_shape(cfg, images);
    std::vector<DatasetShard> shards = partition(images, n, per, cfg.effective_data_seed() + 1);

    TrainConfig tc = cfg.make_train_config(per);

    // shared Q network, one instance for every client
    ParamSet theta_q;
    Rng qrng(derive_seed(cfg.seed, seed_tag::q_network, 1));
    init_q(tc.arch, tc.latent, theta_q, qrng);
    QService service(tc.arch, tc.latent, theta_q, tc.adam());

    std::vector<std::unique_ptr<Client>> clients;
    for (int64_t i = 0; i < n; ++i) {
        clients.push_back(Client::create(static_cast<uint32_t>(i + 1), tc,
                                         std::move(shards[static_cast<size_t>(i)])));
    }

    DistResult res;
    res.out_dir = dir;

    if (cfg.transport == TransportKind::inproc) {
        ChannelFactory factory = [&](uint32_t client_id) {
            auto transport = std::make_unique<DirectTransport>(
                [&service](const std::vector<uint8_t>& f) { return service.handle_frame(f); });
            return std::make_unique<RemoteQChannel>(std::move(transport), client_id, tc.latent);
        };
        res.reports = run_rounds(clients, cfg.rounds, cfg.steps_per_round, factory);
    } else {
        const size_t colon = cfg.endpoint.rfind(':');
        if (colon == std::string::npos) throw ConfigError("dist.endpoint: expected host:port");
        const std::string host = cfg.endpoint.substr(0, colon);
        uint16_t port = 0;
        try {
            port = static_cast<uint16_t>(std::stoi(cfg.endpoint.substr(colon + 1)));
        } catch (const std::exception&) {
            throw ConfigError("dist.endpoint: bad port in '" + cfg.endpoint + "'");
        }
        SocketServer server(host, port);
        std::thread server_thread(
            [&] { server.run([&service](const std::vector<uint8_t>& f) { return service.handle_frame(f); }); });
        try {
            ChannelFactory factory = [&](uint32_t client_id) {
                auto transport = SocketTransport::connect(host, server.port());
                return std::make_unique<RemoteQChannel>(std::move(transport), client_id, tc.latent);
            };
            res.reports = run_rounds(clients, cfg.rounds, cfg.steps_per_round, factory);
        } catch (...) {
            server.stop();
            server_thread.join();
            throw;
        }
        server.stop();
        server_thread.join();
    }

    for (int64_t i = 0; i < n; ++i) {
        char sub[32];
        std::snprintf(sub, sizeof(sub), "/client_%02lld", static_cast<long long>(i + 1));
        const std::string cdir = dir + sub;
        fs::create_directories(cdir);
        const Client& c = *clients[static_cast<size_t>(i)];
        write_metrics_log(cdir + "/metrics.log", res.reports[static_cast<size_t>(i)]);
        write_ledger_file(cdir + "/ledger.txt", tc.privacy, c.trainer->ledger());
        GanTriple triple;
        triple.arch = tc.arch;
        triple.latent = tc.latent;
        triple.g = c.g;
        triple.d = c.d;
        triple.q = theta_q;
        save_triple(triple, cdir + "/final.params");
    }

    write_text_file(dir + "/traffic.log", render_traffic_log(service.traffic()));
    std::ostringstream combined;
    for (int64_t i = 0; i < n; ++i) {
        combined << "## client " << (i + 1) << "\n"
                 << render_privacy_report(tc.privacy, clients[static_cast<size_t>(i)]->trainer->ledger(),
                                          tc.privacy.delta)
                 << "\n";
    }
    write_text_file(dir + "/privacy_report_combined.txt", combined.str());

    res.q_update_count = service.update_count();
    res.q_fingerprint = theta_q.fingerprint();

    int64_t full_model_bytes = 0;
    if (!clients.empty()) {
        full_model_bytes = clients[0]->g.serialized_size() + clients[0]->d.serialized_size() +
                           theta_q.serialized_size();
    }
    res.traffic = measure_traffic(service.traffic(), full_model_bytes);
    return res;
}

std::string cmd_sample(const RunConfig& cfg) {
    cfg.validate();
    if (cfg.checkpoint.empty()) throw ConfigError("sweep.checkpoint: required for sample");
    fs::create_directories(cfg.out_dir);
    GanTriple triple = load_checkpoint(cfg, cfg.checkpoint);
    const std::string path = cfg.out_dir + "/samples.pgm";
    write_pgm(path, sample_grid(triple, cfg.grid_rows, cfg.grid_cols,
                                derive_seed(cfg.seed, kSampleTag, 0)));
    return path;
}

std::string cmd_sweep(const RunConfig& cfg) {
    cfg.validate();
    if (cfg.checkpoint.empty()) throw ConfigError("sweep.checkpoint: required for sweep");
    fs::create_directories(cfg.out_dir);
    GanTriple triple = load_checkpoint(cfg, cfg.checkpoint);
    const GrayImage img = sweep_grid(triple, cfg.sweep_code, cfg.sweep_lo, cfg.sweep_hi,
                                     cfg.grid_rows, cfg.grid_cols,
                                     derive_seed(cfg.seed, kSampleTag, 1));
    const std::string path = cfg.out_dir + "/sweep_code" + std::to_string(cfg.sweep_code) + ".pgm";
    write_pgm(path, img);
    return path;
}

std::string cmd_inspect_privacy(const std::string& ledger_path, double delta) {
    const LedgerFile lf = read_ledger_file(ledger_path);
    std::ostringstream os;
    os.precision(12);
    if (lf.target) {
        os << render_privacy_report(*lf.target, lf.ledger, delta);
    } else {
        os << "steps: " << lf.ledger.total_steps() << "\n";
        if (lf.ledger.entries().empty()) {
            os << "epsilon_spent: 0 (no steps)\n";
        } else {
            os << "epsilon_spent: " << lf.ledger.epsilon_at(delta) << "\n";
        }
        os << "accounting: conservative (no subsampling amplification)\n";
    }
    return os.str();
}

}  // namespace dpig
