#pragma once

#include <stdexcept>
#include <string>

namespace dpig {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Tensor or layer shape violation; message carries the dimension breakdown.
struct ShapeError : Error {
    using Error::Error;
};

// NaN or Inf escaped a forward or backward pass.
struct NonFiniteError : Error {
    using Error::Error;
};

// A math function was called outside its declared domain.
struct DomainError : Error {
    using Error::Error;
};

// Invalid run configuration; message names the offending field path.
struct ConfigError : Error {
    using Error::Error;
};

// Dataset or container parsing failure.
struct DataError : Error {
    using Error::Error;
};

enum class ProtoCode {
    bad_magic,
    truncated,
    length_mismatch,
    unknown_type,
    trailing_garbage,
    busy,
    no_pending_forward,
    stale_ids,
    shape_mismatch,
    transport,
    internal,
};

const char* proto_code_name(ProtoCode code);

struct ProtocolError : Error {
    ProtoCode code;
    ProtocolError(ProtoCode c, const std::string& msg)
        : Error(std::string(proto_code_name(c)) + ": " + msg), code(c) {}
};

}  // namespace dpig
