#pragma once

#include <optional>

#include "dpig/protocol.hpp"
#include "dpig/qchannel.hpp"
#include "dpig/transport.hpp"

namespace dpig {

struct TrafficRecord {
    bool client_to_server = true;
    MsgType type = MsgType::round_done;
    int64_t bytes = 0;
};
using TrafficLog = std::vector<TrafficRecord>;

std::string render_traffic_log(const TrafficLog& log);

// The shared Q endpoint of Algorithm 2: one theta_q, updated sequentially.
// Exactly one exchange is in flight at a time; a FEATURES_FWD while another
// client's forward is pending is refused with BUSY, a GRAD_BWD must carry
// the ids of the pending forward.
class QService {
public:
    QService(const Architecture& arch, const LatentSpec& spec, ParamSet& theta_q, AdamConfig adam);

    // decode, dispatch, encode; protocol failures become ERROR replies
    std::vector<uint8_t> handle_frame(const std::vector<uint8_t>& frame);

    QCore& core() { return core_; }
    int64_t update_count() const { return core_.update_count(); }
    const std::vector<uint32_t>& served_sequence() const { return served_; }
    const TrafficLog& traffic() const { return traffic_; }

    // keep raw frame bytes of the whole session (for confinement scans);
    // off by default, sessions can be large
    void set_record_bytes(bool on) { record_bytes_ = on; }
    const std::vector<uint8_t>& session_bytes() const { return session_bytes_; }

private:
    WireMessage handle(const WireMessage& msg);

    const Architecture& arch_;
    const LatentSpec& spec_;
    QCore core_;
    std::optional<uint32_t> serving_;
    uint32_t pending_round_ = 0;
    uint32_t pending_step_ = 0;
    std::vector<uint32_t> served_;
    TrafficLog traffic_;
    bool record_bytes_ = false;
    std::vector<uint8_t> session_bytes_;
};

// Client-side stub speaking the wire protocol over a Transport. One
// instance per client turn; steps are numbered per forward.
class RemoteQChannel : public QChannel {
public:
    RemoteQChannel(Transport& transport, uint32_t client_id, const LatentSpec& spec,
                   uint32_t round = 0);
    RemoteQChannel(std::unique_ptr<Transport> transport, uint32_t client_id,
                   const LatentSpec& spec, uint32_t round = 0);

    QOutput forward(const Tensor& features) override;
    Tensor backward(const QOutput& upstream_grads) override;
    void round_done();
    void set_round(uint32_t round) { round_ = round; }

private:
    WireMessage exchange(const WireMessage& msg);

    std::unique_ptr<Transport> owned_;
    Transport* transport_;
    uint32_t client_id_;
    const LatentSpec& spec_;
    uint32_t round_ = 0;
    uint32_t step_ = 0;
};

}  // namespace dpig
