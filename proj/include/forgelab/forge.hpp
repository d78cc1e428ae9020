#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "forgelab/common.hpp"
#include "forgelab/data.hpp"
#include "forgelab/nn.hpp"
#include "forgelab/pol.hpp"

namespace forgelab::forge {

enum class Scope { StepsContainingExcluded, AllSteps };

// Candidate evaluation kernel. Direct recomputes a batch update per
// candidate (serial reference); Factored exploits the per-layer rank-1
// structure of dense-net example gradients and scores candidates through
// pool Gram matrices. Auto picks Factored where it applies (Mlp, f64,
// moderate pool) and is profitable.
enum class EvalMode { Direct, Factored, Auto };

struct ForgeConfig {
    std::vector<uint32_t> excluded;  // x*: indices that must not appear
    uint32_t pool_size = 0;          // n
    uint32_t candidate_count = 1;    // M
    uint32_t greedy_rounds = 0;      // T
    uint32_t batch_size = 0;         // b; 0 means reuse the entry's b
    uint64_t seed = 0;
    MetricKind metric = MetricKind::L2;
    Scope scope = Scope::StepsContainingExcluded;
    EvalMode eval_mode = EvalMode::Auto;
    bool strip_provenance = false;

    uint32_t effective_batch(uint32_t entry_b) const {
        return batch_size ? batch_size : entry_b;
    }
    void validate(size_t dataset_size) const;
};

struct ForgeStepResult {
    size_t step_index = 0;
    data::Minibatch original_batch;
    data::Minibatch forged_batch;
    double achieved_error = 0.0;     // in cfg.metric, recomputed
    double achieved_error_l2 = 0.0;  // selection metric, recomputed
    size_t candidates_evaluated = 0;
    std::vector<double> greedy_trace;  // l2 error after each accepted swap
};

struct ForgedLog {
    pol::PolLog log;  // checkpoints byte-identical to the source
    std::vector<uint32_t> excluded;
    std::vector<size_t> substituted_steps;
    std::vector<double> per_step_error;  // l2, all steps (0 for untouched)
    double max_error = 0.0;
    double smallest_passing_epsilon = 0.0;
    size_t update_evaluations = 0;  // cost bookkeeping, mu*M*(1+T)
    std::string source_digest;      // hex SHA-256 of the source log bytes

    std::string sidecar_json() const;
};

// One forged step per the sampling attack: draw a pool of n indices from
// the dataset minus the excluded set (or from *locked_pool when given),
// draw M size-b minibatches from the pool, return the l2-error-minimizing
// candidate. Ties break toward the lowest candidate index.
ForgeStepResult forge_step(const nn::ModelSpec& spec, const nn::UpdateRule& rule,
                           FloatWidth width, const Params& w_i, const Params& w_next,
                           const data::Dataset& ds, const ForgeConfig& cfg,
                           uint64_t step_seed,
                           const std::vector<uint32_t>* locked_pool = nullptr);

// T rounds of single-point refinement on `batch`. Each round proposes up
// to M (slot, replacement) swaps, slot cycling round-robin over batch
// positions, and applies the best proposal only if the error strictly
// decreases.
ForgeStepResult greedy_refine(const nn::ModelSpec& spec, const nn::UpdateRule& rule,
                              FloatWidth width, const Params& w_i,
                              const Params& w_next, const data::Minibatch& batch,
                              const data::Dataset& ds, const ForgeConfig& cfg,
                              uint64_t step_seed,
                              const std::vector<uint32_t>* locked_pool = nullptr);

// Substitutes every in-scope step of an honestly recorded log. Checkpoints
// are copied verbatim; only minibatches change.
ForgedLog forge_log(const pol::PolLog& log, const ForgeConfig& cfg,
                    const data::Dataset& ds, bool check_source = true);

// Locks the candidate pool of every step to one uniformly drawn subset of
// the given size; demonstrates forging from a small fixed subset.
ForgedLog subset_forge(const pol::PolLog& log, uint32_t subset_size,
                       const ForgeConfig& cfg, const data::Dataset& ds,
                       bool check_source = true);

struct ErrorSummary {
    double median = 0.0;
    double q1 = 0.0;
    double q3 = 0.0;
    std::vector<double> errors;
};

// Errors of uniformly random excluded-free minibatches with no selection;
// the "no attack" control.
ErrorSummary baseline_error(const nn::ModelSpec& spec, const nn::UpdateRule& rule,
                            FloatWidth width, const Params& w_i, const Params& w_next,
                            const data::Dataset& ds, const ForgeConfig& cfg,
                            size_t trials, uint64_t seed);

void save_forged(const ForgedLog& fl, const std::string& log_path,
                 const std::string& sidecar_path);

}  // namespace forgelab::forge
