#include "dpig/qservice.hpp"

#include <sstream>

namespace dpig {

std::string render_traffic_log(const TrafficLog& log) {
    std::ostringstream os;
    for (const auto& rec : log) {
        os << "dir=" << (rec.client_to_server ? "c2s" : "s2c") << " type=" << msg_type_name(rec.type)
           << " bytes=" << rec.bytes << "\n";
    }
    return os.str();
}

QService::QService(const Architecture& arch, const LatentSpec& spec, ParamSet& theta_q,
                   AdamConfig adam)
    : arch_(arch), spec_(spec), core_(arch, spec, theta_q, adam) {}

std::vector<uint8_t> QService::handle_frame(const std::vector<uint8_t>& frame) {
    if (record_bytes_) session_bytes_.insert(session_bytes_.end(), frame.begin(), frame.end());
    WireMessage reply;
    uint32_t client = 0, round = 0, step = 0;
    try {
        const WireMessage msg = decode_message(frame);
        client = msg.client_id;
        round = msg.round;
        step = msg.step;
        traffic_.push_back({true, msg.type, static_cast<int64_t>(frame.size())});
        reply = handle(msg);
    } catch (const ProtocolError& e) {
        traffic_.push_back({true, MsgType::error, static_cast<int64_t>(frame.size())});
        reply = WireMessage::make_error(client, round, step, e.code);
    } catch (const ShapeError&) {
        reply = WireMessage::make_error(client, round, step, ProtoCode::shape_mismatch);
    } catch (const Error&) {
        reply = WireMessage::make_error(client, round, step, ProtoCode::internal);
    }
    std::vector<uint8_t> out = encode_message(reply);
    traffic_.push_back({false, reply.type, static_cast<int64_t>(out.size())});
    if (record_bytes_) session_bytes_.insert(session_bytes_.end(), out.begin(), out.end());
    return out;
}

WireMessage QService::handle(const WireMessage& msg) {
    switch (msg.type) {
        case MsgType::features_fwd: {
            if (core_.has_pending() && serving_ && *serving_ != msg.client_id) {
                return WireMessage::make_error(msg.client_id, msg.round, msg.step, ProtoCode::busy);
            }
            const auto tap = arch_.tap_shape();
            const Tensor& f = msg.payload;
            if (f.rank() != 4 || f.shape[1] != tap[0] || f.shape[2] != tap[1] ||
                f.shape[3] != tap[2]) {
                return WireMessage::make_error(msg.client_id, msg.round, msg.step,
                                               ProtoCode::shape_mismatch);
            }
            // a repeated forward from the same client replaces its pending tape
            if (core_.has_pending()) core_.drop_pending();
            const QOutput out = core_.forward(f);
            serving_ = msg.client_id;
            pending_round_ = msg.round;
            pending_step_ = msg.step;
            return WireMessage::make(MsgType::q_output, msg.client_id, msg.round, msg.step,
                                     pack_qoutput(spec_, out));
        }
        case MsgType::grad_bwd: {
            if (!core_.has_pending()) {
                return WireMessage::make_error(msg.client_id, msg.round, msg.step,
                                               ProtoCode::no_pending_forward);
            }
            if (!serving_ || *serving_ != msg.client_id) {
                return WireMessage::make_error(msg.client_id, msg.round, msg.step, ProtoCode::busy);
            }
            if (msg.round != pending_round_ || msg.step != pending_step_) {
                return WireMessage::make_error(msg.client_id, msg.round, msg.step,
                                               ProtoCode::stale_ids);
            }
            const QOutput upstream = unpack_qoutput(spec_, msg.payload);
            const Tensor fgrads = core_.backward(upstream);
            served_.push_back(msg.client_id);
            serving_.reset();
            return WireMessage::make(MsgType::feature_grad, msg.client_id, msg.round, msg.step,
                                     fgrads);
        }
        case MsgType::round_done: {
            if (serving_ && *serving_ == msg.client_id) {
                core_.drop_pending();
                serving_.reset();
            }
            return WireMessage::make(MsgType::round_done, msg.client_id, msg.round, msg.step,
                                     Tensor::scalar(0.0));
        }
        default:
            return WireMessage::make_error(msg.client_id, msg.round, msg.step, ProtoCode::internal);
    }
}

RemoteQChannel::RemoteQChannel(Transport& transport, uint32_t client_id, const LatentSpec& spec,
                               uint32_t round)
    : transport_(&transport), client_id_(client_id), spec_(spec), round_(round) {}

RemoteQChannel::RemoteQChannel(std::unique_ptr<Transport> transport, uint32_t client_id,
                               const LatentSpec& spec, uint32_t round)
    : owned_(std::move(transport)), transport_(owned_.get()), client_id_(client_id), spec_(spec),
      round_(round) {}

WireMessage RemoteQChannel::exchange(const WireMessage& msg) {
    transport_->send_frame(encode_message(msg));
    const WireMessage reply = decode_message(transport_->recv_frame());
    if (reply.type == MsgType::error) {
        const int code = static_cast<int>(reply.payload.data.empty() ? -1 : reply.payload.data[0]);
        throw ProtocolError(static_cast<ProtoCode>(code),
                            "service refused " + std::string(msg_type_name(msg.type)));
    }
    return reply;
}

QOutput RemoteQChannel::forward(const Tensor& features) {
    step_ += 1;
    const WireMessage reply = exchange(
        WireMessage::make(MsgType::features_fwd, client_id_, round_, step_, features));
    if (reply.type != MsgType::q_output) {
        throw ProtocolError(ProtoCode::internal, "expected Q_OUTPUT, got " +
                                                     std::string(msg_type_name(reply.type)));
    }
    return unpack_qoutput(spec_, reply.payload);
}

Tensor RemoteQChannel::backward(const QOutput& upstream_grads) {
    const WireMessage reply = exchange(WireMessage::make(
        MsgType::grad_bwd, client_id_, round_, step_, pack_qoutput(spec_, upstream_grads)));
    if (reply.type != MsgType::feature_grad) {
        throw ProtocolError(ProtoCode::internal, "expected FEATURE_GRAD, got " +
                                                     std::string(msg_type_name(reply.type)));
    }
    return reply.payload;
}

void RemoteQChannel::round_done() {
    exchange(WireMessage::make(MsgType::round_done, client_id_, round_, step_, Tensor::scalar(0.0)));
}

}  // namespace dpig
