#include "dpig/protocol.hpp"

#include <bit>
#include <cstring>

namespace dpig {

const char* proto_code_name(ProtoCode code) {
    switch (code) {
        case ProtoCode::bad_magic: return "BAD_MAGIC";
        case ProtoCode::truncated: return "TRUNCATED";
        case ProtoCode::length_mismatch: return "LENGTH_MISMATCH";
        case ProtoCode::unknown_type: return "UNKNOWN_TYPE";
        case ProtoCode::trailing_garbage: return "TRAILING_GARBAGE";
        case ProtoCode::busy: return "BUSY";
        case ProtoCode::no_pending_forward: return "NO_PENDING_FORWARD";
        case ProtoCode::stale_ids: return "STALE_IDS";
        case ProtoCode::shape_mismatch: return "SHAPE_MISMATCH";
        case ProtoCode::transport: return "TRANSPORT";
        case ProtoCode::internal: return "INTERNAL";
    }
    return "UNKNOWN";
}

const char* msg_type_name(MsgType t) {
    switch (t) {
        case MsgType::features_fwd: return "FEATURES_FWD";
        case MsgType::q_output: return "Q_OUTPUT";
        case MsgType::grad_bwd: return "GRAD_BWD";
        case MsgType::feature_grad: return "FEATURE_GRAD";
        case MsgType::round_done: return "ROUND_DONE";
        case MsgType::error: return "ERROR";
    }
    return "INVALID";
}

WireMessage WireMessage::make(MsgType t, uint32_t client, uint32_t round, uint32_t step,
                              Tensor payload) {
    WireMessage m;
    m.type = t;
    m.client_id = client;
    m.round = round;
    m.step = step;
    m.payload = std::move(payload);
    return m;
}

WireMessage WireMessage::make_error(uint32_t client, uint32_t round, uint32_t step,
                                    ProtoCode code) {
    return make(MsgType::error, client, round, step,
                Tensor::scalar(static_cast<double>(static_cast<int>(code))));
}

namespace {

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<uint8_t>((v >> (8 * i)) & 0xFF));
}

void put_u64(std::vector<uint8_t>& out, uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<uint8_t>((v >> (8 * i)) & 0xFF));
}

uint32_t get_u32(const uint8_t* p) {
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(p[i]) << (8 * i);
    return v;
}

uint64_t get_u64(const uint8_t* p) {
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(p[i]) << (8 * i);
    return v;
}

uint64_t container_size(const Tensor& t) {
    return 4 + 8 * static_cast<uint64_t>(t.rank()) + 8 * static_cast<uint64_t>(t.numel());
}

}  // namespace

uint64_t frame_payload_length(const uint8_t* header) { return get_u64(header + 17); }

std::vector<uint8_t> encode_message(const WireMessage& msg) {
    std::vector<uint8_t> out;
    const uint64_t plen = container_size(msg.payload);
    out.reserve(kFrameHeaderSize + plen);
    out.insert(out.end(), kWireMagic, kWireMagic + 4);
    out.push_back(static_cast<uint8_t>(msg.type));
    put_u32(out, msg.client_id);
    put_u32(out, msg.round);
    put_u32(out, msg.step);
    put_u64(out, plen);
    put_u32(out, static_cast<uint32_t>(msg.payload.rank()));
    for (int64_t d : msg.payload.shape) put_u64(out, static_cast<uint64_t>(d));
    for (double v : msg.payload.data) put_u64(out, std::bit_cast<uint64_t>(v));
    return out;
}

WireMessage decode_message(const std::vector<uint8_t>& bytes) {
    if (bytes.size() < kFrameHeaderSize) {
        throw ProtocolError(ProtoCode::truncated, "frame shorter than header");
    }
    if (std::memcmp(bytes.data(), kWireMagic, 4) != 0) {
        throw ProtocolError(ProtoCode::bad_magic, "frame magic is not DQP1");
    }
    const uint8_t type_byte = bytes[4];
    if (type_byte < 1 || type_byte > 6) {
        throw ProtocolError(ProtoCode::unknown_type,
                            "message type " + std::to_string(static_cast<int>(type_byte)));
    }
    WireMessage msg;
    msg.type = static_cast<MsgType>(type_byte);
    msg.client_id = get_u32(bytes.data() + 5);
    msg.round = get_u32(bytes.data() + 9);
    msg.step = get_u32(bytes.data() + 13);
    const uint64_t plen = get_u64(bytes.data() + 17);
    if (bytes.size() < kFrameHeaderSize + plen) {
        throw ProtocolError(ProtoCode::truncated, "payload shorter than declared length");
    }
    if (bytes.size() > kFrameHeaderSize + plen) {
        throw ProtocolError(ProtoCode::trailing_garbage,
                            std::to_string(bytes.size() - kFrameHeaderSize - plen) +
                                " bytes after frame end");
    }

    const uint8_t* p = bytes.data() + kFrameHeaderSize;
    if (plen < 4) throw ProtocolError(ProtoCode::length_mismatch, "payload too short for rank");
    const uint32_t rank = get_u32(p);
    if (rank > 8) throw ProtocolError(ProtoCode::length_mismatch, "tensor rank > 8");
    uint64_t need = 4 + 8ull * rank;
    if (plen < need) throw ProtocolError(ProtoCode::length_mismatch, "payload too short for dims");
    std::vector<int64_t> shape;
    uint64_t numel = 1;
    for (uint32_t i = 0; i < rank; ++i) {
        const uint64_t d = get_u64(p + 4 + 8 * i);
        if (d == 0 || d > (1ull << 32) || numel > (1ull << 32)) {
            throw ProtocolError(ProtoCode::length_mismatch, "bad tensor dimension");
        }
        shape.push_back(static_cast<int64_t>(d));
        numel *= d;
    }
    need += 8 * numel;
    if (plen != need) {
        throw ProtocolError(ProtoCode::length_mismatch,
                            "declared payload length " + std::to_string(plen) +
                                " != container size " + std::to_string(need));
    }
    std::vector<double> data(numel);
    for (uint64_t i = 0; i < numel; ++i) {
        data[i] = std::bit_cast<double>(get_u64(p + 4 + 8ull * rank + 8 * i));
    }
    msg.payload = Tensor(std::move(shape), std::move(data));
    return msg;
}

bool wire_equal(const WireMessage& a, const WireMessage& b) {
    if (a.type != b.type || a.client_id != b.client_id || a.round != b.round || a.step != b.step) {
        return false;
    }
    if (a.payload.shape != b.payload.shape) return false;
    if (a.payload.data.size() != b.payload.data.size()) return false;
    for (size_t i = 0; i < a.payload.data.size(); ++i) {
        if (std::bit_cast<uint64_t>(a.payload.data[i]) != std::bit_cast<uint64_t>(b.payload.data[i])) {
            return false;
        }
    }
    return true;
}

}  // namespace dpig
