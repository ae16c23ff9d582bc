#include "dpig/distributed.hpp"

#include <algorithm>

#include "dpig/paramset.hpp"

namespace dpig {

std::unique_ptr<Client> Client::create(uint32_t id, const TrainConfig& cfg, DatasetShard shard) {
    auto c = std::make_unique<Client>();
    c->id = id;
    c->cfg = cfg;
    Rng grng(derive_seed(cfg.seed, seed_tag::generator, id));
    init_generator(cfg.arch, cfg.latent, c->g, grng);
    Rng drng(derive_seed(cfg.seed, seed_tag::discriminator, id));
    init_discriminator(cfg.arch, c->d, drng);
    c->trainer = std::make_unique<Trainer>(c->cfg, c->g, c->d, std::move(shard), id);
    return c;
}

namespace {

// shards cut from the same parent dataset must not share indices
void check_disjoint_shards(const std::vector<std::unique_ptr<Client>>& clients) {
    for (size_t a = 0; a < clients.size(); ++a) {
        for (size_t b = a + 1; b < clients.size(); ++b) {
            const DatasetShard& sa = clients[a]->trainer->shard();
            const DatasetShard& sb = clients[b]->trainer->shard();
            if (sa.parent_fingerprint != sb.parent_fingerprint) continue;
            std::vector<int64_t> ia = sa.indices, ib = sb.indices;
            std::sort(ia.begin(), ia.end());
            std::sort(ib.begin(), ib.end());
            std::vector<int64_t> common;
            std::set_intersection(ia.begin(), ia.end(), ib.begin(), ib.end(),
                                  std::back_inserter(common));
            if (!common.empty()) {
                throw ConfigError("dist: shards of clients " + std::to_string(clients[a]->id) +
                                  " and " + std::to_string(clients[b]->id) + " overlap on " +
                                  std::to_string(common.size()) + " indices");
            }
        }
    }
}

}  // namespace

std::vector<std::vector<StepReport>> run_rounds(std::vector<std::unique_ptr<Client>>& clients,
                                                int64_t rounds, int64_t steps_per_round,
                                                const ChannelFactory& open_channel) {
    if (clients.empty()) throw ConfigError("dist.n_clients: need at least one client");
    if (rounds < 0) throw ConfigError("dist.rounds: must be >= 0");
    if (steps_per_round < 1) throw ConfigError("dist.steps_per_round: must be >= 1");
    check_disjoint_shards(clients);

    std::vector<std::vector<StepReport>> reports(clients.size());
    for (int64_t r = 1; r <= rounds; ++r) {
        for (size_t i = 0; i < clients.size(); ++i) {
            Client& c = *clients[i];
            try {
                std::unique_ptr<RemoteQChannel> chan = open_channel(c.id);
                chan->set_round(static_cast<uint32_t>(r));
                std::vector<StepReport> rs = c.trainer->run_steps(steps_per_round, *chan);
                chan->round_done();
                reports[i].insert(reports[i].end(), rs.begin(), rs.end());
                c.rounds_completed += 1;
            } catch (const ProtocolError& e) {
                throw ProtocolError(e.code, "client " + std::to_string(c.id) + " round " +
                                                std::to_string(r) + ": " + e.what());
            } catch (const TrainingAborted&) {
                throw;
            } catch (const Error& e) {
                throw Error("client " + std::to_string(c.id) + " round " + std::to_string(r) +
                            ": " + e.what());
            }
        }
    }
    return reports;
}

double TrafficSummary::bytes_per_step_c2s() const {
    return steps == 0 ? 0.0 : static_cast<double>(bytes_c2s) / static_cast<double>(steps);
}

double TrafficSummary::bytes_per_step_s2c() const {
    return steps == 0 ? 0.0 : static_cast<double>(bytes_s2c) / static_cast<double>(steps);
}

double TrafficSummary::bytes_per_step_total() const {
    return bytes_per_step_c2s() + bytes_per_step_s2c();
}

TrafficSummary measure_traffic(const TrafficLog& log, int64_t full_model_bytes) {
    TrafficSummary s;
    s.full_model_bytes = full_model_bytes;
    for (const auto& rec : log) {
        s.frames += 1;
        if (rec.client_to_server) {
            s.bytes_c2s += rec.bytes;
        } else {
            s.bytes_s2c += rec.bytes;
        }
        if (!rec.client_to_server && rec.type == MsgType::feature_grad) s.steps += 1;
    }
    return s;
}

int64_t count_paramset_magic(const std::vector<uint8_t>& bytes) {
    int64_t count = 0;
    if (bytes.size() < 4) return 0;
    for (size_t i = 0; i + 4 <= bytes.size(); ++i) {
        if (bytes[i] == 'D' && bytes[i + 1] == 'P' && bytes[i + 2] == 'P' && bytes[i + 3] == 'S') {
            ++count;
        }
    }
    return count;
}

}  // namespace dpig
