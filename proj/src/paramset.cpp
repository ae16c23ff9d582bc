#include "dpig/paramset.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <istream>
#include <ostream>
#include <sstream>

namespace dpig {

namespace {

void put_u32(std::ostream& os, uint32_t v) {
    char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
    os.write(b, 4);
}

void put_u64(std::ostream& os, uint64_t v) {
    char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
    os.write(b, 8);
}

void put_f64(std::ostream& os, double d) { put_u64(os, std::bit_cast<uint64_t>(d)); }

uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4)) throw DataError("paramset: truncated u32");
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[i]) << (8 * i);
    return v;
}

uint64_t get_u64(std::istream& is) {
    unsigned char b[8];
    if (!is.read(reinterpret_cast<char*>(b), 8)) throw DataError("paramset: truncated u64");
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
    return v;
}

double get_f64(std::istream& is) { return std::bit_cast<double>(get_u64(is)); }

bool inferred_trainable(const std::string& name) {
    // running statistics are the only non-trainable entries we store
    return name.find("running_") == std::string::npos;
}

constexpr uint32_t kFormatVersion = 1;

}  // namespace

Tensor& ParamSet::add(const std::string& name, Tensor t) {
    if (entries_.count(name)) throw Error("duplicate parameter name: " + name);
    order_.push_back(name);
    auto [it, ok] = entries_.emplace(name, std::move(t));
    (void)ok;
    return it->second;
}

Tensor& ParamSet::at(const std::string& name) {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw Error("unknown parameter: " + name);
    return it->second;
}

const Tensor& ParamSet::at(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw Error("unknown parameter: " + name);
    return it->second;
}

bool ParamSet::contains(const std::string& name) const { return entries_.count(name) != 0; }

int64_t ParamSet::trainable_size() const {
    int64_t n = 0;
    for (const auto& name : order_) {
        const Tensor& t = entries_.at(name);
        if (t.requires_grad) n += t.numel();
    }
    return n;
}

std::vector<double> ParamSet::flatten_trainable_grads() const {
    std::vector<double> flat;
    flat.reserve(static_cast<size_t>(trainable_size()));
    for (const auto& name : order_) {
        const Tensor& t = entries_.at(name);
        if (!t.requires_grad) continue;
        if (t.grad.empty()) {
            flat.insert(flat.end(), t.data.size(), 0.0);
        } else {
            flat.insert(flat.end(), t.grad.begin(), t.grad.end());
        }
    }
    return flat;
}

std::map<std::string, std::vector<double>> ParamSet::unflatten_trainable(
    const std::vector<double>& flat) const {
    if (static_cast<int64_t>(flat.size()) != trainable_size()) {
        throw ShapeError("unflatten: got " + std::to_string(flat.size()) + " values, expected " +
                         std::to_string(trainable_size()));
    }
    std::map<std::string, std::vector<double>> out;
    size_t pos = 0;
    for (const auto& name : order_) {
        const Tensor& t = entries_.at(name);
        if (!t.requires_grad) continue;
        out[name] = std::vector<double>(flat.begin() + static_cast<int64_t>(pos),
                                        flat.begin() + static_cast<int64_t>(pos + t.data.size()));
        pos += t.data.size();
    }
    return out;
}

void ParamSet::zero_grads() {
    for (const auto& name : order_) {
        Tensor& t = entries_.at(name);
        if (t.requires_grad) t.zero_grad();
    }
}

void ParamSet::serialize(std::ostream& os) const {
    os.write(kMagic, 4);
    put_u32(os, kFormatVersion);
    put_u64(os, order_.size());
    for (const auto& name : order_) {
        const Tensor& t = entries_.at(name);
        put_u32(os, static_cast<uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        put_u32(os, static_cast<uint32_t>(t.rank()));
        for (int64_t d : t.shape) put_u64(os, static_cast<uint64_t>(d));
        for (double v : t.data) put_f64(os, v);
    }
}

namespace {

struct RawEntry {
    std::string name;
    std::vector<int64_t> shape;
    std::vector<double> data;
};

std::vector<RawEntry> read_container(std::istream& is) {
    char magic[4];
    if (!is.read(magic, 4)) throw DataError("paramset: truncated magic");
    if (std::memcmp(magic, ParamSet::kMagic, 4) != 0) throw DataError("paramset: bad magic");
    const uint32_t version = get_u32(is);
    if (version != kFormatVersion) {
        throw DataError("paramset: unsupported version " + std::to_string(version));
    }
    const uint64_t count = get_u64(is);
    std::vector<RawEntry> entries;
    entries.reserve(count);
    for (uint64_t i = 0; i < count; ++i) {
        RawEntry e;
        const uint32_t name_len = get_u32(is);
        e.name.resize(name_len);
        if (!is.read(e.name.data(), name_len)) throw DataError("paramset: truncated name");
        const uint32_t rank = get_u32(is);
        int64_t numel = 1;
        for (uint32_t r = 0; r < rank; ++r) {
            const uint64_t d = get_u64(is);
            if (d == 0 || d > (1ull << 32)) throw DataError("paramset: bad dimension");
            e.shape.push_back(static_cast<int64_t>(d));
            numel *= static_cast<int64_t>(d);
        }
        e.data.resize(static_cast<size_t>(numel));
        for (int64_t j = 0; j < numel; ++j) e.data[static_cast<size_t>(j)] = get_f64(is);
        entries.push_back(std::move(e));
    }
    return entries;
}

}  // namespace

ParamSet ParamSet::deserialize(std::istream& is) {
    ParamSet ps;
    for (auto& e : read_container(is)) {
        Tensor t(std::move(e.shape), std::move(e.data));
        t.requires_grad = inferred_trainable(e.name);
        ps.add(e.name, std::move(t));
    }
    return ps;
}

void ParamSet::load_values(std::istream& is) {
    auto entries = read_container(is);
    if (entries.size() != order_.size()) {
        throw DataError("paramset: entry count " + std::to_string(entries.size()) +
                        " does not match architecture (" + std::to_string(order_.size()) + ")");
    }
    for (size_t i = 0; i < entries.size(); ++i) {
        if (entries[i].name != order_[i]) {
            throw DataError("paramset: entry '" + entries[i].name + "' does not match expected '" +
                            order_[i] + "'");
        }
        Tensor& t = entries_.at(order_[i]);
        if (entries[i].shape != t.shape) {
            throw DataError("paramset: shape mismatch for '" + entries[i].name + "'");
        }
        t.data = std::move(entries[i].data);
    }
}

std::vector<uint8_t> ParamSet::serialized_bytes() const {
    std::ostringstream os(std::ios::binary);
    serialize(os);
    const std::string s = os.str();
    return std::vector<uint8_t>(s.begin(), s.end());
}

int64_t ParamSet::serialized_size() const {
    int64_t n = 4 + 4 + 8;
    for (const auto& name : order_) {
        const Tensor& t = entries_.at(name);
        n += 4 + static_cast<int64_t>(name.size()) + 4 + 8 * static_cast<int64_t>(t.rank()) +
             8 * t.numel();
    }
    return n;
}

uint64_t ParamSet::fingerprint() const {
    // FNV-1a over the serialized container
    uint64_t hash = 0xCBF29CE484222325ull;
    for (uint8_t b : serialized_bytes()) {
        hash ^= b;
        hash *= 0x100000001B3ull;
    }
    return hash;
}

void AdamState::init(const ParamSet& params) {
    t = 0;
    m.clear();
    v.clear();
    for (const auto& name : params.names()) {
        const Tensor& p = params.at(name);
        if (!p.requires_grad) continue;
        m[name] = std::vector<double>(p.data.size(), 0.0);
        v[name] = std::vector<double>(p.data.size(), 0.0);
    }
}

void adam_step(ParamSet& params, const std::map<std::string, std::vector<double>>& grads,
               AdamState& state) {
    state.t += 1;
    const double b1t = 1.0 - std::pow(state.cfg.beta1, static_cast<double>(state.t));
    const double b2t = 1.0 - std::pow(state.cfg.beta2, static_cast<double>(state.t));
    for (const auto& [name, g] : grads) {
        Tensor& p = params.at(name);
        if (!p.requires_grad) throw Error("adam_step on non-trainable parameter " + name);
        if (g.size() != p.data.size()) {
            throw ShapeError("adam_step: gradient for " + name + " has " +
                             std::to_string(g.size()) + " values, parameter has " +
                             std::to_string(p.data.size()));
        }
        auto& mi = state.m.at(name);
        auto& vi = state.v.at(name);
        for (size_t j = 0; j < g.size(); ++j) {
            mi[j] = state.cfg.beta1 * mi[j] + (1.0 - state.cfg.beta1) * g[j];
            vi[j] = state.cfg.beta2 * vi[j] + (1.0 - state.cfg.beta2) * (g[j] * g[j]);
            const double mhat = mi[j] / b1t;
            const double vhat = vi[j] / b2t;
            p.data[j] -= state.cfg.alpha * mhat / (std::sqrt(vhat) + state.cfg.eps);
        }
        check_finite(p.data, "adam-updated parameter");
    }
}

}  // namespace dpig
