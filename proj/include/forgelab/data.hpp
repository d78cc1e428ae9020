#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "forgelab/common.hpp"

namespace forgelab::data {

struct Example {
    std::vector<double> features;
    int label = 0;  // 1..c
};

enum class BatchMode { Iid, EpochPermutation };

// Per-class isotropic Gaussian mixture; the i.i.d. source distribution
// behind the probabilistic forging bound.
struct DistributionSpec {
    int dimension = 0;
    int class_count = 0;
    double variance = 0.0;                    // shared isotropic
    std::vector<std::vector<double>> means;   // one per class
    uint64_t seed = 0;

    void validate() const;
    std::string to_json() const;
    static DistributionSpec from_json(const std::string& text);

    // Random sparse class templates with coordinates in [0,1]; a convenient
    // default for image-scale experiments.
    static DistributionSpec make_default(int dimension, int class_count,
                                         double variance, uint64_t seed);
};

struct Dataset {
    std::vector<Example> examples;
    int feature_dim = 0;
    int class_count = 0;
    std::string source;  // "idx:<paths>" or "synthetic:<seed>"
    FloatWidth hash_width = FloatWidth::F64;

    size_t size() const { return examples.size(); }
    const Example& at(size_t i) const;

    // SHA-256 of the canonical little-endian serialization: u32 count,
    // u32 feature_dim, u32 class_count, features row-major at hash_width,
    // then u32 labels. This is the commitment PoL logs carry.
    std::array<uint8_t, 32> content_hash() const;
    std::string content_hash_hex() const;
};

// Ordered dataset indices, no repeats.
struct Minibatch {
    std::vector<uint32_t> indices;

    size_t size() const { return indices.size(); }
    void validate(size_t dataset_size) const;
};

// IDX-format MNIST files (big-endian headers, magic 0x803 / 0x801).
// Pixels are scaled by 1/255, labels remapped {0..9} -> {1..10}.
Dataset load_idx(const std::string& images_path, const std::string& labels_path);

// Writes a dataset back out as an IDX pair; test and fixture support.
void save_idx(const Dataset& ds, const std::string& images_path,
              const std::string& labels_path);

Dataset sample_synthetic(const DistributionSpec& spec, size_t count);

std::vector<Minibatch> make_batches(const Dataset& ds, uint32_t b, uint64_t seed,
                                    size_t count, BatchMode mode = BatchMode::Iid);

std::array<uint8_t, 32> sha256_bytes(const uint8_t* data, size_t len);
std::string hex_digest(const std::array<uint8_t, 32>& d);

}  // namespace forgelab::data
