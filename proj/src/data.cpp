#include "forgelab/data.hpp"

#include <openssl/sha.h>

#include <algorithm>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

#include "forgelab/prng.hpp"
#include "json.hpp"

namespace forgelab::data {

using nlohmann::json;

std::array<uint8_t, 32> sha256_bytes(const uint8_t* data, size_t len) {
    std::array<uint8_t, 32> out{};
    SHA256(data, len, out.data());
    return out;
}

std::string hex_digest(const std::array<uint8_t, 32>& d) {
    static const char* hex = "0123456789abcdef";
    std::string s;
    s.reserve(64);
    for (uint8_t b : d) {
        s.push_back(hex[b >> 4]);
        s.push_back(hex[b & 0xf]);
    }
    return s;
}

void DistributionSpec::validate() const {
    if (dimension <= 0) throw InvalidArgument("DistributionSpec: dimension <= 0");
    if (class_count < 2) throw InvalidArgument("DistributionSpec: class_count < 2");
    if (!(variance > 0.0)) throw InvalidArgument("DistributionSpec: variance <= 0");
    if (means.size() != static_cast<size_t>(class_count))
        throw InvalidArgument("DistributionSpec: means/class_count mismatch");
    for (const auto& m : means)
        if (m.size() != static_cast<size_t>(dimension))
            throw InvalidArgument("DistributionSpec: mean dimension mismatch");
}

std::string DistributionSpec::to_json() const {
    json j;
    j["kind"] = "gaussian-mixture";
    j["dimension"] = dimension;
    j["class_count"] = class_count;
    j["variance"] = variance;
    j["means"] = means;
    j["seed"] = seed;
    return j.dump();
}

DistributionSpec DistributionSpec::from_json(const std::string& text) {
    json j = json::parse(text);
    DistributionSpec s;
    s.dimension = j.at("dimension").get<int>();
    s.class_count = j.at("class_count").get<int>();
    s.variance = j.at("variance").get<double>();
    s.means = j.at("means").get<std::vector<std::vector<double>>>();
    s.seed = j.at("seed").get<uint64_t>();
    s.validate();
    return s;
}

DistributionSpec DistributionSpec::make_default(int dimension, int class_count,
                                                double variance, uint64_t seed) {
    DistributionSpec s;
    s.dimension = dimension;
    s.class_count = class_count;
    s.variance = variance;
    s.seed = seed;
    Xoshiro256 rng(derive_seed(seed, 0xc1a55));
    s.means.resize(class_count);
    for (auto& m : s.means) {
        m.resize(dimension);
        for (double& v : m)
            v = rng.uniform() < 0.2 ? rng.uniform(0.1, 0.9) : 0.0;
    }
    s.validate();
    return s;
}

const Example& Dataset::at(size_t i) const {
    if (i >= examples.size())
        throw ConsistencyError("dataset index out of range: " + std::to_string(i));
    return examples[i];
}

std::array<uint8_t, 32> Dataset::content_hash() const {
    std::vector<uint8_t> buf;
    auto put_u32 = [&](uint32_t v) {
        for (int i = 0; i < 4; ++i) buf.push_back(uint8_t(v >> (8 * i)));
    };
    put_u32(static_cast<uint32_t>(examples.size()));
    put_u32(static_cast<uint32_t>(feature_dim));
    put_u32(static_cast<uint32_t>(class_count));
    for (const Example& ex : examples) {
        for (double v : ex.features) {
            if (hash_width == FloatWidth::F32) {
                float f = static_cast<float>(v);
                uint32_t bits;
                std::memcpy(&bits, &f, 4);
                put_u32(bits);
            } else {
                uint64_t bits;
                std::memcpy(&bits, &v, 8);
                put_u32(uint32_t(bits));
                put_u32(uint32_t(bits >> 32));
            }
        }
    }
    for (const Example& ex : examples) put_u32(static_cast<uint32_t>(ex.label));
    return sha256_bytes(buf.data(), buf.size());
}

std::string Dataset::content_hash_hex() const { return hex_digest(content_hash()); }

void Minibatch::validate(size_t dataset_size) const {
    for (uint32_t i : indices)
        if (i >= dataset_size)
            throw ConsistencyError("minibatch index out of range: " + std::to_string(i));
    for (size_t a = 0; a < indices.size(); ++a)
        for (size_t b = a + 1; b < indices.size(); ++b)
            if (indices[a] == indices[b])
                throw InvalidArgument("minibatch contains repeated index " +
                                      std::to_string(indices[a]));
}

namespace {

uint32_t read_be_u32(std::istream& in, const std::string& what) {
    uint8_t b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in) throw IoError("truncated IDX file while reading " + what);
    return (uint32_t(b[0]) << 24) | (uint32_t(b[1]) << 16) | (uint32_t(b[2]) << 8) |
           uint32_t(b[3]);
}

void write_be_u32(std::ostream& out, uint32_t v) {
    uint8_t b[4] = {uint8_t(v >> 24), uint8_t(v >> 16), uint8_t(v >> 8), uint8_t(v)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

}  // namespace

Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
    std::ifstream img(images_path, std::ios::binary);
    if (!img) throw IoError("cannot open images file: " + images_path);
    std::ifstream lab(labels_path, std::ios::binary);
    if (!lab) throw IoError("cannot open labels file: " + labels_path);

    const uint32_t img_magic = read_be_u32(img, "images magic");
    if (img_magic != 0x00000803u)
        throw FormatError("bad IDX images magic in " + images_path);
    const uint32_t lab_magic = read_be_u32(lab, "labels magic");
    if (lab_magic != 0x00000801u)
        throw FormatError("bad IDX labels magic in " + labels_path);

    const uint32_t n_img = read_be_u32(img, "image count");
    const uint32_t rows = read_be_u32(img, "rows");
    const uint32_t cols = read_be_u32(img, "cols");
    const uint32_t n_lab = read_be_u32(lab, "label count");
    if (n_img != n_lab)
        throw ConsistencyError("IDX count mismatch: " + std::to_string(n_img) +
                               " images vs " + std::to_string(n_lab) + " labels");

    Dataset ds;
    ds.feature_dim = static_cast<int>(rows * cols);
    ds.class_count = 10;
    ds.source = "idx:" + images_path;
    ds.examples.resize(n_img);

    std::vector<uint8_t> pixels(rows * cols);
    for (uint32_t i = 0; i < n_img; ++i) {
        img.read(reinterpret_cast<char*>(pixels.data()), pixels.size());
        if (!img) throw IoError("truncated IDX image data at example " + std::to_string(i));
        Example& ex = ds.examples[i];
        ex.features.resize(pixels.size());
        for (size_t p = 0; p < pixels.size(); ++p)
            ex.features[p] = pixels[p] / 255.0;
        uint8_t label;
        lab.read(reinterpret_cast<char*>(&label), 1);
        if (!lab) throw IoError("truncated IDX label data at example " + std::to_string(i));
        if (label > 9) throw FormatError("IDX label out of range: " + std::to_string(label));
        ex.label = label + 1;
    }
    return ds;
}

void save_idx(const Dataset& ds, const std::string& images_path,
              const std::string& labels_path) {
    // Only square 8-bit images round-trip through IDX.
    const uint32_t side = static_cast<uint32_t>(std::lround(std::sqrt(double(ds.feature_dim))));
    if (int(side * side) != ds.feature_dim)
        throw InvalidArgument("save_idx: feature_dim is not a square");
    std::ofstream img(images_path, std::ios::binary);
    std::ofstream lab(labels_path, std::ios::binary);
    if (!img || !lab) throw IoError("cannot open IDX output files");
    write_be_u32(img, 0x00000803u);
    write_be_u32(img, static_cast<uint32_t>(ds.size()));
    write_be_u32(img, side);
    write_be_u32(img, side);
    write_be_u32(lab, 0x00000801u);
    write_be_u32(lab, static_cast<uint32_t>(ds.size()));
    for (const Example& ex : ds.examples) {
        for (double v : ex.features) {
            const double c = std::clamp(v, 0.0, 1.0);
            img.put(char(uint8_t(std::lround(c * 255.0))));
        }
        lab.put(char(uint8_t(ex.label - 1)));
    }
}

Dataset sample_synthetic(const DistributionSpec& spec, size_t count) {
    spec.validate();
    if (count < 1) throw InvalidArgument("sample_synthetic: count < 1");
    Dataset ds;
    ds.feature_dim = spec.dimension;
    ds.class_count = spec.class_count;
    ds.source = "synthetic:" + std::to_string(spec.seed);
    ds.examples.resize(count);
    Xoshiro256 rng(spec.seed);
    const double sd = std::sqrt(spec.variance);
    for (Example& ex : ds.examples) {
        const int cls = static_cast<int>(rng.below(spec.class_count));
        ex.label = cls + 1;
        ex.features.resize(spec.dimension);
        for (int d = 0; d < spec.dimension; ++d)
            ex.features[d] =
                std::clamp(spec.means[cls][d] + sd * rng.gaussian(), 0.0, 1.0);
    }
    return ds;
}

std::vector<Minibatch> make_batches(const Dataset& ds, uint32_t b, uint64_t seed,
                                    size_t count, BatchMode mode) {
    if (b == 0 || b > ds.size())
        throw InvalidArgument("make_batches: batch size " + std::to_string(b) +
                              " invalid for dataset of size " + std::to_string(ds.size()));
    std::vector<Minibatch> out;
    out.reserve(count);
    Xoshiro256 rng(seed);
    if (mode == BatchMode::Iid) {
        for (size_t i = 0; i < count; ++i)
            out.push_back({sample_without_replacement(
                rng, static_cast<uint32_t>(ds.size()), b)});
        return out;
    }
    // Epoch permutation: shuffle once per epoch, slice consecutive batches;
    // a trailing remainder smaller than b is dropped.
    std::vector<uint32_t> perm(ds.size());
    std::iota(perm.begin(), perm.end(), 0u);
    size_t pos = perm.size();  // force initial shuffle
    for (size_t i = 0; i < count; ++i) {
        if (pos + b > perm.size()) {
            for (size_t j = perm.size() - 1; j > 0; --j)
                std::swap(perm[j], perm[rng.below(j + 1)]);
            pos = 0;
        }
        out.push_back({std::vector<uint32_t>(perm.begin() + pos, perm.begin() + pos + b)});
        pos += b;
    }
    return out;
}

}  // namespace forgelab::data
