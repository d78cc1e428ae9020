#include "forgelab/pol.hpp"

#include <cstring>
#include <fstream>

#include "forgelab/prng.hpp"
#include "json.hpp"

namespace forgelab::pol {

using nlohmann::json;

const Params& PolLog::successor(size_t i) const {
    if (i >= entries.size()) throw ConsistencyError("successor: step out of range");
    return i + 1 < entries.size() ? entries[i + 1].checkpoint_before : final_w;
}

void PolLog::validate() const {
    model_spec.validate();
    const size_t n = model_spec.param_count();
    if (w0.size() != n) throw ConsistencyError("PolLog: w0 length mismatch");
    if (final_w.size() != n) throw ConsistencyError("PolLog: final_w length mismatch");
    if (m_max && entries.size() > m_max)
        throw ConsistencyError("PolLog: length exceeds declared m_max");
    for (const auto& e : entries) {
        if (e.checkpoint_before.size() != n)
            throw ConsistencyError("PolLog: checkpoint length mismatch");
        if (e.batch.size() != e.rule.batch_size)
            throw ConsistencyError("PolLog: batch length != rule.batch_size");
        for (double v : e.checkpoint_before)
            if (!std::isfinite(v)) throw NumericError("PolLog: non-finite checkpoint");
    }
    if (!entries.empty() && entries.front().checkpoint_before != w0)
        throw ConsistencyError("PolLog: first checkpoint differs from w0");
}

std::string VerificationReport::to_json() const {
    json j;
    j["metric"] = forgelab::to_string(metric);
    j["epsilon"] = epsilon;
    j["max_error"] = max_error;
    j["smallest_passing_epsilon"] = smallest_passing_epsilon();
    j["verdict"] = pass ? "pass" : "fail";
    j["failing_steps"] = failing_steps;
    j["per_step_error"] = per_step_error;
    return j.dump();
}

PolLog record_training(const nn::ModelSpec& spec, const data::Dataset& ds,
                       const nn::UpdateRule& rule, size_t steps, uint64_t seed,
                       FloatWidth width, data::BatchMode mode) {
    if (steps < 1) throw InvalidArgument("record_training: steps < 1");
    spec.validate();
    rule.validate(ds.size());
    PolLog log;
    log.model_spec = spec;
    log.dataset_commitment = ds.content_hash_hex();
    log.float_width = width;
    log.seed = seed;
    log.m_max = static_cast<uint32_t>(steps);

    Xoshiro256 init_rng(derive_seed(seed, 0));
    Params w = nn::init_params(spec, init_rng, width);
    log.w0 = w;
    const auto batches =
        data::make_batches(ds, rule.batch_size, derive_seed(seed, 1), steps, mode);
    log.entries.reserve(steps);
    for (size_t i = 0; i < steps; ++i) {
        log.entries.push_back({w, batches[i], rule});
        w = nn::batch_update(spec, w, rule, batches[i], ds, width);
    }
    log.final_w = std::move(w);
    return log;
}

VerificationReport verify(const PolLog& log, const data::Dataset& ds,
                          MetricKind metric, double epsilon,
                          bool allow_commitment_mismatch) {
    log.validate();
    if (epsilon < 0.0) throw InvalidArgument("verify: epsilon < 0");
    if (ds.content_hash_hex() != log.dataset_commitment && !allow_commitment_mismatch)
        throw AuditError("dataset commitment mismatch (pass the override to audit a "
                         "substituted dataset)");
    VerificationReport rep;
    rep.metric = metric;
    rep.epsilon = epsilon;
    rep.per_step_error.resize(log.steps());
    // Steps only read their own entry and the shared dataset.
#pragma omp parallel for schedule(dynamic)
    for (long i = 0; i < long(log.steps()); ++i) {
        const LogEntry& e = log.entries[i];
        e.batch.validate(ds.size());
        const Params recomputed = nn::batch_update(log.model_spec, e.checkpoint_before,
                                                   e.rule, e.batch, ds, log.float_width);
        rep.per_step_error[i] = metric_distance(metric, log.successor(i), recomputed);
    }
    for (size_t i = 0; i < rep.per_step_error.size(); ++i) {
        rep.max_error = std::max(rep.max_error, rep.per_step_error[i]);
        if (rep.per_step_error[i] > epsilon) rep.failing_steps.push_back(i);
    }
    rep.pass = rep.failing_steps.empty();
    return rep;
}

std::string model_spec_to_json(const nn::ModelSpec& spec) {
    json j;
    j["kind"] = spec.kind == nn::ModelKind::Cnn ? "cnn" : "mlp";
    j["input_dim"] = spec.input_dim;
    j["hidden"] = spec.hidden;
    j["output_dim"] = spec.output_dim;
    j["activation"] = nn::to_string(spec.activation);
    return j.dump();
}

nn::ModelSpec model_spec_from_json(const std::string& text) {
    json j = json::parse(text);
    nn::ModelSpec spec;
    spec.kind = j.value("kind", "mlp") == "cnn" ? nn::ModelKind::Cnn : nn::ModelKind::Mlp;
    spec.input_dim = j.at("input_dim").get<int>();
    spec.hidden = j.value("hidden", std::vector<int>{});
    spec.output_dim = j.at("output_dim").get<int>();
    spec.activation = nn::activation_from_string(j.value("activation", "relu"));
    spec.validate();
    return spec;
}

namespace {

constexpr char kMagic[4] = {'F', 'R', 'G', 'L'};
constexpr uint16_t kVersion = 1;

struct Writer {
    std::vector<uint8_t> buf;
    void u8(uint8_t v) { buf.push_back(v); }
    void u16(uint16_t v) {
        for (int i = 0; i < 2; ++i) buf.push_back(uint8_t(v >> (8 * i)));
    }
    void u32(uint32_t v) {
        for (int i = 0; i < 4; ++i) buf.push_back(uint8_t(v >> (8 * i)));
    }
    void u64(uint64_t v) {
        for (int i = 0; i < 8; ++i) buf.push_back(uint8_t(v >> (8 * i)));
    }
    void f64(double v) {
        uint64_t bits;
        std::memcpy(&bits, &v, 8);
        u64(bits);
    }
    void params(const Params& w, FloatWidth width) {
        if (width == FloatWidth::F32) {
            for (double v : w) {
                const float f = float(v);
                uint32_t bits;
                std::memcpy(&bits, &f, 4);
                u32(bits);
            }
        } else {
            for (double v : w) f64(v);
        }
    }
};

struct Reader {
    const std::vector<uint8_t>& buf;
    size_t pos = 0;
    void need(size_t n) const {
        if (pos + n > buf.size()) throw FormatError("truncated log file");
    }
    uint8_t u8() {
        need(1);
        return buf[pos++];
    }
    uint16_t u16() {
        need(2);
        uint16_t v = uint16_t(buf[pos]) | uint16_t(buf[pos + 1]) << 8;
        pos += 2;
        return v;
    }
    uint32_t u32() {
        need(4);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= uint32_t(buf[pos + i]) << (8 * i);
        pos += 4;
        return v;
    }
    uint64_t u64() {
        need(8);
        uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= uint64_t(buf[pos + i]) << (8 * i);
        pos += 8;
        return v;
    }
    double f64() {
        const uint64_t bits = u64();
        double v;
        std::memcpy(&v, &bits, 8);
        return v;
    }
    Params params(size_t n, FloatWidth width) {
        Params w(n);
        if (width == FloatWidth::F32) {
            for (size_t i = 0; i < n; ++i) {
                const uint32_t bits = u32();
                float f;
                std::memcpy(&f, &bits, 4);
                w[i] = double(f);
            }
        } else {
            for (size_t i = 0; i < n; ++i) w[i] = f64();
        }
        return w;
    }
};

}  // namespace

std::vector<uint8_t> serialize_log(const PolLog& log) {
    log.validate();
    Writer wr;
    wr.buf.insert(wr.buf.end(), kMagic, kMagic + 4);
    wr.u16(kVersion);
    wr.u8(uint8_t(log.float_width));

    json meta;
    meta["model_spec"] = json::parse(model_spec_to_json(log.model_spec));
    meta["dataset_commitment"] = log.dataset_commitment;
    meta["seed"] = log.seed;
    meta["m_max"] = log.m_max;
    meta["steps"] = log.entries.size();
    meta["param_count"] = log.model_spec.param_count();
    meta["note"] = log.note;
    const std::string meta_text = meta.dump();
    wr.u32(uint32_t(meta_text.size()));
    wr.buf.insert(wr.buf.end(), meta_text.begin(), meta_text.end());

    wr.params(log.w0, log.float_width);
    for (const LogEntry& e : log.entries) {
        wr.u32(e.rule.batch_size);
        wr.f64(e.rule.learning_rate);
        for (uint32_t idx : e.batch.indices) wr.u32(idx);
        wr.params(e.checkpoint_before, log.float_width);
    }
    wr.params(log.final_w, log.float_width);

    const auto digest = data::sha256_bytes(wr.buf.data(), wr.buf.size());
    wr.buf.insert(wr.buf.end(), digest.begin(), digest.end());
    return wr.buf;
}

PolLog deserialize_log(const std::vector<uint8_t>& bytes) {
    if (bytes.size() < 4 + 2 + 1 + 4 + 32) throw FormatError("log file too short");
    if (std::memcmp(bytes.data(), kMagic, 4) != 0)
        throw FormatError("bad log magic");
    const auto digest =
        data::sha256_bytes(bytes.data(), bytes.size() - 32);
    if (std::memcmp(digest.data(), bytes.data() + bytes.size() - 32, 32) != 0)
        throw FormatError("log payload digest mismatch");

    Reader rd{bytes, 4};
    const uint16_t version = rd.u16();
    if (version != kVersion)
        throw FormatError("unsupported log version " + std::to_string(version));
    PolLog log;
    const uint8_t width_code = rd.u8();
    if (width_code > 1) throw FormatError("bad float width code");
    log.float_width = FloatWidth(width_code);

    const uint32_t meta_len = rd.u32();
    rd.need(meta_len);
    json meta;
    try {
        meta = json::parse(std::string(bytes.begin() + rd.pos, bytes.begin() + rd.pos + meta_len));
    } catch (const json::exception& e) {
        throw FormatError(std::string("bad log metadata: ") + e.what());
    }
    rd.pos += meta_len;
    log.model_spec = model_spec_from_json(meta.at("model_spec").dump());
    log.dataset_commitment = meta.at("dataset_commitment").get<std::string>();
    log.seed = meta.at("seed").get<uint64_t>();
    log.m_max = meta.at("m_max").get<uint32_t>();
    log.note = meta.value("note", "");
    const size_t steps = meta.at("steps").get<size_t>();
    const size_t n = log.model_spec.param_count();
    if (meta.at("param_count").get<size_t>() != n)
        throw ConsistencyError("log metadata param_count mismatch");

    log.w0 = rd.params(n, log.float_width);
    log.entries.resize(steps);
    for (LogEntry& e : log.entries) {
        e.rule.batch_size = rd.u32();
        e.rule.learning_rate = rd.f64();
        e.batch.indices.resize(e.rule.batch_size);
        for (uint32_t& idx : e.batch.indices) idx = rd.u32();
        e.checkpoint_before = rd.params(n, log.float_width);
    }
    log.final_w = rd.params(n, log.float_width);
    if (rd.pos != bytes.size() - 32) throw FormatError("trailing bytes in log file");
    log.validate();
    return log;
}

void save_log(const PolLog& log, const std::string& path) {
    const auto bytes = serialize_log(log);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open log file for writing: " + path);
    out.write(reinterpret_cast<const char*>(bytes.data()), long(bytes.size()));
    if (!out) throw IoError("short write to log file: " + path);
}

PolLog load_log(const std::string& path) {
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    if (!in) throw IoError("cannot open log file: " + path);
    const auto size = in.tellg();
    in.seekg(0);
    std::vector<uint8_t> bytes(static_cast<size_t>(size), 0);
    in.read(reinterpret_cast<char*>(bytes.data()), size);
    if (!in) throw IoError("short read from log file: " + path);
    return deserialize_log(bytes);
}

}  // namespace forgelab::pol
