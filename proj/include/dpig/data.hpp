#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dpig/rng.hpp"
#include "dpig/tensor.hpp"

namespace dpig {

// Image shard with provenance: two shards cut from the same parent dataset
// are guaranteed index-disjoint by partition().
struct DatasetShard {
    Tensor images;  // [n, c, h, w], values in [-1, 1]
    std::string source;
    int64_t shard_index = 0;
    uint64_t parent_fingerprint = 0;
    std::vector<int64_t> indices;

    int64_t size() const { return images.shape.empty() ? 0 : images.shape[0]; }
};

// IDX rank-3 u8 images (magic 00 00 08 03, big-endian dims) -> [n, rows, cols]
// with raw byte values as floats.
Tensor parse_idx_images(const std::vector<uint8_t>& bytes);

// IDX rank-1 u8 labels (magic 00 00 08 01)
std::vector<uint8_t> parse_idx_labels(const std::vector<uint8_t>& bytes);

// v -> v/127.5 - 1; input must lie in [0, 255]
Tensor normalize_images(const Tensor& raw);

// Shuffle indices with the seed and deal consecutive disjoint blocks of
// per_client. Accepts [n,r,c] or [n,c,r,c]-shaped input; shards come out
// [per_client, c, r, c].
std::vector<DatasetShard> partition(const Tensor& images, int64_t n_clients, int64_t per_client,
                                    uint64_t seed);

// one 28x28 anti-aliased oriented bar; pixel range [-1, 1]
Tensor render_bar(double angle, double thickness);

// Procedural 28x28 dataset with rotation and stroke-thickness factors.
DatasetShard synth_dataset(int64_t count, uint64_t seed);
Tensor synth_images(int64_t count, uint64_t seed);  // [count, 1, 28, 28]

uint64_t tensor_fingerprint(const Tensor& t);

std::vector<uint8_t> read_file_bytes(const std::string& path);
void write_file_bytes(const std::string& path, const std::vector<uint8_t>& bytes);

}  // namespace dpig
