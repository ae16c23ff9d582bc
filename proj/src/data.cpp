#include "dpig/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

namespace dpig {

namespace {

uint32_t read_u32_be(const std::vector<uint8_t>& b, size_t off) {
    return (static_cast<uint32_t>(b[off]) << 24) | (static_cast<uint32_t>(b[off + 1]) << 16) |
           (static_cast<uint32_t>(b[off + 2]) << 8) | static_cast<uint32_t>(b[off + 3]);
}

}  // namespace

Tensor parse_idx_images(const std::vector<uint8_t>& bytes) {
    if (bytes.size() < 4) throw DataError("IDX: TRUNCATED header (no magic)");
    if (!(bytes[0] == 0 && bytes[1] == 0 && bytes[2] == 0x08 && bytes[3] == 0x03)) {
        throw DataError("IDX: BAD_MAGIC (expected 00 00 08 03 for u8 rank-3 images)");
    }
    if (bytes.size() < 16) throw DataError("IDX: TRUNCATED header (missing dimensions)");
    const int64_t count = read_u32_be(bytes, 4);
    const int64_t rows = read_u32_be(bytes, 8);
    const int64_t cols = read_u32_be(bytes, 12);
    if (count <= 0 || rows <= 0 || cols <= 0 || rows > 1 << 16 || cols > 1 << 16 ||
        count > (int64_t{1} << 32)) {
        throw DataError("IDX: DIMENSION_OVERFLOW (" + std::to_string(count) + "x" +
                        std::to_string(rows) + "x" + std::to_string(cols) + ")");
    }
    const int64_t need = count * rows * cols;
    if (static_cast<int64_t>(bytes.size()) - 16 < need) {
        throw DataError("IDX: TRUNCATED payload (need " + std::to_string(need) + " bytes, have " +
                        std::to_string(bytes.size() - 16) + ")");
    }
    Tensor out = Tensor::zeros({count, rows, cols});
    for (int64_t i = 0; i < need; ++i) {
        out.data[static_cast<size_t>(i)] = static_cast<double>(bytes[static_cast<size_t>(16 + i)]);
    }
    return out;
}

std::vector<uint8_t> parse_idx_labels(const std::vector<uint8_t>& bytes) {
    if (bytes.size() < 4) throw DataError("IDX: TRUNCATED header (no magic)");
    if (!(bytes[0] == 0 && bytes[1] == 0 && bytes[2] == 0x08 && bytes[3] == 0x01)) {
        throw DataError("IDX: BAD_MAGIC (expected 00 00 08 01 for u8 rank-1 labels)");
    }
    if (bytes.size() < 8) throw DataError("IDX: TRUNCATED header (missing count)");
    const int64_t count = read_u32_be(bytes, 4);
    if (static_cast<int64_t>(bytes.size()) - 8 < count) {
        throw DataError("IDX: TRUNCATED payload");
    }
    return std::vector<uint8_t>(bytes.begin() + 8, bytes.begin() + 8 + count);
}

Tensor normalize_images(const Tensor& raw) {
    Tensor out = raw;
    for (double& v : out.data) {
        if (!(v >= 0.0 && v <= 255.0)) {
            throw DataError("normalize: pixel value " + std::to_string(v) + " outside [0,255]");
        }
        v = v / 127.5 - 1.0;
    }
    return out;
}

std::vector<DatasetShard> partition(const Tensor& images, int64_t n_clients, int64_t per_client,
                                    uint64_t seed) {
    if (images.rank() != 3 && images.rank() != 4) {
        throw ShapeError("partition: expected [n,r,c] or [n,c,h,w], got " + shape_str(images.shape));
    }
    const int64_t n = images.shape[0];
    if (n_clients < 1 || per_client < 1) throw DomainError("partition: n_clients and per_client must be >= 1");
    if (n_clients * per_client > n) {
        throw DataError("partition: insufficient data (" + std::to_string(n) + " images for " +
                        std::to_string(n_clients) + " x " + std::to_string(per_client) + ")");
    }
    const int64_t c = images.rank() == 4 ? images.shape[1] : 1;
    const int64_t h = images.rank() == 4 ? images.shape[2] : images.shape[1];
    const int64_t w = images.rank() == 4 ? images.shape[3] : images.shape[2];
    const int64_t stride = c * h * w;

    std::vector<int64_t> perm(static_cast<size_t>(n));
    std::iota(perm.begin(), perm.end(), 0);
    Rng rng(seed);
    rng.shuffle(perm);

    const uint64_t parent = tensor_fingerprint(images);
    std::vector<DatasetShard> shards;
    shards.reserve(static_cast<size_t>(n_clients));
    for (int64_t s = 0; s < n_clients; ++s) {
        DatasetShard shard;
        shard.shard_index = s;
        shard.parent_fingerprint = parent;
        shard.source = "partition(seed=" + std::to_string(seed) + ")";
        shard.images = Tensor::zeros({per_client, c, h, w});
        shard.indices.reserve(static_cast<size_t>(per_client));
        for (int64_t i = 0; i < per_client; ++i) {
            const int64_t src = perm[static_cast<size_t>(s * per_client + i)];
            shard.indices.push_back(src);
            std::copy(images.data.begin() + src * stride, images.data.begin() + (src + 1) * stride,
                      shard.images.data.begin() + i * stride);
        }
        shards.push_back(std::move(shard));
    }
    return shards;
}

Tensor render_bar(double angle, double thickness) {
    constexpr int64_t kSize = 28;
    constexpr double kHalfLength = 10.0;
    Tensor img = Tensor::full({1, kSize, kSize}, -1.0);
    const double cx = (kSize - 1) / 2.0;
    const double cy = (kSize - 1) / 2.0;
    const double dx = std::cos(angle);
    const double dy = std::sin(angle);
    for (int64_t y = 0; y < kSize; ++y) {
        for (int64_t x = 0; x < kSize; ++x) {
            const double px = static_cast<double>(x) - cx;
            const double py = static_cast<double>(y) - cy;
            double t = px * dx + py * dy;
            t = std::min(std::max(t, -kHalfLength), kHalfLength);
            const double qx = px - t * dx;
            const double qy = py - t * dy;
            const double dist = std::sqrt(qx * qx + qy * qy);
            // 1 inside the stroke, soft one-pixel edge
            double v = thickness / 2.0 + 0.5 - dist;
            v = std::min(std::max(v, 0.0), 1.0);
            img.data[static_cast<size_t>(y * kSize + x)] = 2.0 * v - 1.0;
        }
    }
    return img;
}

Tensor synth_images(int64_t count, uint64_t seed) {
    if (count < 1) throw DomainError("synth_images: count must be >= 1");
    Rng rng(seed);
    Tensor out = Tensor::zeros({count, 1, 28, 28});
    const int64_t stride = 28 * 28;
    for (int64_t i = 0; i < count; ++i) {
        const double angle = rng.uniform(0.0, M_PI);
        const double thickness = rng.uniform(1.5, 4.5);
        const Tensor img = render_bar(angle, thickness);
        std::copy(img.data.begin(), img.data.end(), out.data.begin() + i * stride);
    }
    return out;
}

DatasetShard synth_dataset(int64_t count, uint64_t seed) {
    DatasetShard shard;
    shard.images = synth_images(count, seed);
    shard.source = "synth(seed=" + std::to_string(seed) + ")";
    shard.parent_fingerprint = tensor_fingerprint(shard.images);
    shard.indices.resize(static_cast<size_t>(count));
    std::iota(shard.indices.begin(), shard.indices.end(), 0);
    return shard;
}

uint64_t tensor_fingerprint(const Tensor& t) {
    uint64_t hash = 0xCBF29CE484222325ull;
    auto mix = [&hash](uint64_t v) {
        for (int i = 0; i < 8; ++i) {
            hash ^= (v >> (8 * i)) & 0xFF;
            hash *= 0x100000001B3ull;
        }
    };
    mix(static_cast<uint64_t>(t.rank()));
    for (int64_t d : t.shape) mix(static_cast<uint64_t>(d));
    for (double v : t.data) mix(std::bit_cast<uint64_t>(v));
    return hash;
}

std::vector<uint8_t> read_file_bytes(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open file: " + path);
    return std::vector<uint8_t>((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

void write_file_bytes(const std::string& path, const std::vector<uint8_t>& bytes) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot write file: " + path);
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace dpig
