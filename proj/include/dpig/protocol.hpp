#pragma once

#include <cstdint>
#include <vector>

#include "dpig/tensor.hpp"

namespace dpig {

// Frame layout, all integers little-endian unsigned:
//   magic "DQP1" (4) | type (1) | client_id (4) | round (4) | step (4) |
//   payload_length (8) | payload
// Payload is one tensor container: rank (4), dims (8 each), float64 data.
enum class MsgType : uint8_t {
    features_fwd = 1,
    q_output = 2,
    grad_bwd = 3,
    feature_grad = 4,
    round_done = 5,
    error = 6,
};

const char* msg_type_name(MsgType t);

struct WireMessage {
    MsgType type = MsgType::round_done;
    uint32_t client_id = 0;
    uint32_t round = 0;
    uint32_t step = 0;
    Tensor payload;  // round_done carries [0.0]; error carries [proto code]

    static WireMessage make(MsgType t, uint32_t client, uint32_t round, uint32_t step,
                            Tensor payload);
    static WireMessage make_error(uint32_t client, uint32_t round, uint32_t step, ProtoCode code);
};

inline constexpr char kWireMagic[4] = {'D', 'Q', 'P', '1'};
inline constexpr size_t kFrameHeaderSize = 4 + 1 + 4 + 4 + 4 + 8;

std::vector<uint8_t> encode_message(const WireMessage& msg);

// Decodes exactly one frame occupying the whole buffer; trailing bytes are
// rejected. Distinct ProtoCode per failure mode.
WireMessage decode_message(const std::vector<uint8_t>& bytes);

// payload_length field of an encoded frame (for stream reassembly)
uint64_t frame_payload_length(const uint8_t* header);

bool wire_equal(const WireMessage& a, const WireMessage& b);

}  // namespace dpig
