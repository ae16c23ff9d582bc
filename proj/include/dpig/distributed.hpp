#pragma once

#include "dpig/qservice.hpp"
#include "dpig/trainer.hpp"

namespace dpig {

// One Algorithm-2 client: its own generator and discriminator, never a
// copy of theta_q.
struct Client {
    uint32_t id = 1;  // 1-based, matching round order
    ParamSet g;
    ParamSet d;
    TrainConfig cfg;
    std::unique_ptr<Trainer> trainer;
    int64_t rounds_completed = 0;

    static std::unique_ptr<Client> create(uint32_t id, const TrainConfig& cfg, DatasetShard shard);
};

// factory handing each client turn a fresh channel to the shared Q service
using ChannelFactory = std::function<std::unique_ptr<RemoteQChannel>(uint32_t client_id)>;

// R rounds, clients strictly in index order, steps_per_round train steps
// per client turn. Shards must be pairwise disjoint (checked via partition
// provenance). Fail-fast: the first client error aborts the run with a
// message naming client, round and step.
std::vector<std::vector<StepReport>> run_rounds(std::vector<std::unique_ptr<Client>>& clients,
                                                int64_t rounds, int64_t steps_per_round,
                                                const ChannelFactory& open_channel);

struct TrafficSummary {
    int64_t steps = 0;  // completed forward/backward exchanges
    int64_t bytes_c2s = 0;
    int64_t bytes_s2c = 0;
    int64_t frames = 0;
    int64_t full_model_bytes = 0;  // serialized g + d + q, the FL baseline unit

    double bytes_per_step_c2s() const;
    double bytes_per_step_s2c() const;
    double bytes_per_step_total() const;
};

TrafficSummary measure_traffic(const TrafficLog& log, int64_t full_model_bytes);

// occurrences of the parameter-container magic in a byte stream
int64_t count_paramset_magic(const std::vector<uint8_t>& bytes);

}  // namespace dpig
