#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "dpig/tensor.hpp"

namespace dpig {

// Named, ordered parameter container. Registration order is the canonical
// order for flattening and serialization. Non-trainable entries (batch-norm
// running statistics) live here too so a checkpoint restores them.
class ParamSet {
public:
    Tensor& add(const std::string& name, Tensor t);
    Tensor& at(const std::string& name);
    const Tensor& at(const std::string& name) const;
    bool contains(const std::string& name) const;

    const std::vector<std::string>& names() const { return order_; }
    size_t count() const { return order_.size(); }

    int64_t trainable_size() const;  // flattened length over requires_grad entries
    std::vector<double> flatten_trainable_grads() const;
    std::map<std::string, std::vector<double>> unflatten_trainable(const std::vector<double>& flat) const;
    void zero_grads();

    // flat binary container: magic "DPPS", version, entry count, then per
    // entry (name length, name bytes, rank, dims, float64 payload), all
    // integers little-endian
    void serialize(std::ostream& os) const;
    static ParamSet deserialize(std::istream& is);   // requires_grad inferred from name
    void load_values(std::istream& is);              // shapes/names must match this set
    std::vector<uint8_t> serialized_bytes() const;
    int64_t serialized_size() const;
    uint64_t fingerprint() const;

    static constexpr char kMagic[4] = {'D', 'P', 'P', 'S'};

private:
    std::vector<std::string> order_;
    std::unordered_map<std::string, Tensor> entries_;
};

struct AdamConfig {
    double alpha = 2e-4;
    double beta1 = 0.5;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamState {
    AdamConfig cfg;
    int64_t t = 0;
    std::map<std::string, std::vector<double>> m;
    std::map<std::string, std::vector<double>> v;

    void init(const ParamSet& params);  // zero moments for trainable entries
};

// One bias-corrected Adam update over the trainable entries named in grads.
void adam_step(ParamSet& params, const std::map<std::string, std::vector<double>>& grads,
               AdamState& state);

}  // namespace dpig
