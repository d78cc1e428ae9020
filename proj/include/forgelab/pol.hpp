#pragma once

#include <optional>
#include <string>
#include <vector>

#include "forgelab/common.hpp"
#include "forgelab/data.hpp"
#include "forgelab/nn.hpp"

namespace forgelab::pol {

// One training step: checkpoint before the step, the minibatch consumed,
// and a snapshot of the update rule.
struct LogEntry {
    Params checkpoint_before;
    data::Minibatch batch;
    nn::UpdateRule rule;
};

// A proof-of-learning log. The stored trajectory is self-consistent:
// entries[i+1].checkpoint_before is the parameters the trainer actually
// produced from step i, and final_w closes the chain.
struct PolLog {
    nn::ModelSpec model_spec;
    std::string dataset_commitment;  // hex SHA-256 of the dataset
    Params w0;
    std::vector<LogEntry> entries;
    Params final_w;
    FloatWidth float_width = FloatWidth::F64;
    uint64_t seed = 0;
    uint32_t m_max = 0;
    std::string note;  // free-form creation metadata

    size_t steps() const { return entries.size(); }
    // Recorded successor checkpoint of step i.
    const Params& successor(size_t i) const;
    void validate() const;
};

struct VerificationReport {
    std::vector<double> per_step_error;
    double max_error = 0.0;
    double epsilon = 0.0;
    MetricKind metric = MetricKind::L2;
    bool pass = false;
    std::vector<size_t> failing_steps;
    // max_error doubles as the smallest threshold at which the log passes.
    double smallest_passing_epsilon() const { return max_error; }
    std::string to_json() const;
};

PolLog record_training(const nn::ModelSpec& spec, const data::Dataset& ds,
                       const nn::UpdateRule& rule, size_t steps, uint64_t seed,
                       FloatWidth width = FloatWidth::F64,
                       data::BatchMode mode = data::BatchMode::Iid);

// Recomputes every step independently. The dataset must match the log's
// commitment unless `allow_commitment_mismatch` acknowledges a substituted
// dataset (needed when auditing forged logs against D').
VerificationReport verify(const PolLog& log, const data::Dataset& ds,
                          MetricKind metric, double epsilon,
                          bool allow_commitment_mismatch = false);

// Log file format: magic "FRGL", u16 version, u8 float-width code,
// u32-length JSON metadata, then binary sections (w0, per-entry rule +
// batch indices + checkpoint, final_w, all little-endian) and a trailing
// SHA-256 of every prior byte.
void save_log(const PolLog& log, const std::string& path);
PolLog load_log(const std::string& path);

std::vector<uint8_t> serialize_log(const PolLog& log);
PolLog deserialize_log(const std::vector<uint8_t>& bytes);

std::string model_spec_to_json(const nn::ModelSpec& spec);
nn::ModelSpec model_spec_from_json(const std::string& text);

}  // namespace forgelab::pol
