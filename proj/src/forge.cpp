#include "forgelab/forge.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <memory>
#include <numeric>
#include <unordered_map>

#include "forgelab/prng.hpp"
#include "json.hpp"

namespace forgelab::forge {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using nlohmann::json;

void ForgeConfig::validate(size_t dataset_size) const {
    if (candidate_count < 1) throw InvalidArgument("ForgeConfig: M < 1");
    for (uint32_t i : excluded)
        if (i >= dataset_size)
            throw InvalidArgument("ForgeConfig: excluded index out of range");
    if (pool_size > dataset_size - excluded.size())
        throw InvalidArgument("ForgeConfig: n > |D| - |excluded|");
    if (batch_size && pool_size && batch_size > pool_size)
        throw InvalidArgument("ForgeConfig: b > n");
}

namespace {

std::vector<uint32_t> allowed_indices(size_t dataset_size,
                                      const std::vector<uint32_t>& excluded,
                                      const std::vector<uint32_t>* locked_pool) {
    std::vector<bool> banned(dataset_size, false);
    for (uint32_t i : excluded) banned[i] = true;
    std::vector<uint32_t> out;
    if (locked_pool) {
        out.reserve(locked_pool->size());
        for (uint32_t i : *locked_pool)
            if (!banned[i]) out.push_back(i);
    } else {
        out.reserve(dataset_size - excluded.size());
        for (uint32_t i = 0; i < dataset_size; ++i)
            if (!banned[i]) out.push_back(i);
    }
    return out;
}

// Candidate scoring vs the recorded successor, l2 in parameter space.
class Evaluator {
public:
    virtual ~Evaluator() = default;
    virtual double error_l2(const std::vector<uint32_t>& batch) const = 0;
};

class DirectEvaluator : public Evaluator {
public:
    DirectEvaluator(const nn::ModelSpec& spec, const nn::UpdateRule& rule,
                    FloatWidth width, const Params& w_i, const Params& w_next,
                    const data::Dataset& ds)
        : spec_(spec), rule_(rule), width_(width), w_i_(w_i), w_next_(w_next), ds_(ds) {}

    double error_l2(const std::vector<uint32_t>& batch) const override {
        const Params u = nn::batch_update(spec_, w_i_, rule_, {batch}, ds_, width_);
        return metric_distance(MetricKind::L2, w_next_, u);
    }

private:
    const nn::ModelSpec& spec_;
    nn::UpdateRule rule_;
    FloatWidth width_;
    const Params& w_i_;
    const Params& w_next_;
    const data::Dataset& ds_;
};

// Dense nets, f64 only. Example gradients factor per layer as
// delta * act^T, so candidate errors reduce to Gram-matrix sums over the
// pool:
//   err^2 = (eta/b)^2 * sum_{k,l in B} G[k][l]
//         - 2 (eta/b) * sum_{k in B} d[k] + ||t||^2
// with t = w_i - w_next, G the pool gradient Gram and d[k] = <t, g_k>.
class FactoredEvaluator : public Evaluator {
public:
    FactoredEvaluator(const nn::ModelSpec& spec, const nn::UpdateRule& rule,
                      const Params& w_i, const Params& w_next,
                      const data::Dataset& ds, const std::vector<uint32_t>& pool)
        : eta_(rule.learning_rate) {
        const auto dims = spec.layer_dims();
        const size_t layers = dims.size() - 1;
        const long n = long(pool.size());
        slot_of_.reserve(pool.size());
        for (size_t s = 0; s < pool.size(); ++s) slot_of_[pool[s]] = long(s);

        std::vector<MatrixXd> acts(layers), deltas(layers);
        for (size_t l = 0; l < layers; ++l) {
            acts[l].resize(n, dims[l]);
            deltas[l].resize(n, dims[l + 1]);
        }
#pragma omp parallel for schedule(dynamic, 16)
        for (long s = 0; s < n; ++s) {
            const data::Example& ex = ds.at(pool[s]);
            const auto f = nn::mlp_factors(spec, w_i, ex.features, ex.label);
            for (size_t l = 0; l < layers; ++l) {
                acts[l].row(s) = f.acts[l];
                deltas[l].row(s) = f.deltas[l];
            }
        }

        VectorXd t(w_i.size());
        for (size_t i = 0; i < w_i.size(); ++i) t[i] = w_i[i] - w_next[i];
        t_norm2_ = t.squaredNorm();

        gram_ = MatrixXd::Zero(n, n);
        dot_.resize(n);
        dot_.setZero();
        size_t off = 0;
        for (size_t l = 0; l < layers; ++l) {
            MatrixXd dd;
            dd.noalias() = deltas[l] * deltas[l].transpose();
            MatrixXd aa;
            aa.noalias() = acts[l] * acts[l].transpose();
            aa.array() += 1.0;  // bias gradient term
            gram_.noalias() += dd.cwiseProduct(aa);

            using RowMat =
                Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
            Eigen::Map<const RowMat> tw(t.data() + off, dims[l + 1], dims[l]);
            off += size_t(dims[l + 1]) * dims[l];
            Eigen::Map<const VectorXd> tb(t.data() + off, dims[l + 1]);
            off += dims[l + 1];
            // <t_l, g_l(k)> = delta_k^T (T_W a_k) + delta_k^T t_b
            MatrixXd proj;
            proj.noalias() = acts[l] * tw.transpose();  // n x dims[l+1]
            dot_ += (deltas[l].cwiseProduct(proj)).rowwise().sum();
            dot_ += deltas[l] * tb;
        }
    }

    double error_l2(const std::vector<uint32_t>& batch) const override {
        const double scale = eta_ / double(batch.size());
        double q = 0.0, d = 0.0;
        for (size_t a = 0; a < batch.size(); ++a) {
            const long ka = slot_of_.at(batch[a]);
            d += dot_[ka];
            const double* row = gram_.col(ka).data();  // symmetric
            q += row[ka];
            for (size_t b = a + 1; b < batch.size(); ++b)
                q += 2.0 * row[slot_of_.at(batch[b])];
        }
        const double e2 = scale * scale * q - 2.0 * scale * d + t_norm2_;
        return std::sqrt(std::max(e2, 0.0));
    }

private:
    double eta_;
    double t_norm2_ = 0.0;
    MatrixXd gram_;
    VectorXd dot_;
    std::unordered_map<uint32_t, long> slot_of_;
};

constexpr uint32_t kFactoredPoolCap = 3072;

std::unique_ptr<Evaluator> make_evaluator(const nn::ModelSpec& spec,
                                          const nn::UpdateRule& rule, FloatWidth width,
                                          const Params& w_i, const Params& w_next,
                                          const data::Dataset& ds,
                                          const std::vector<uint32_t>& pool,
                                          EvalMode mode, uint32_t m, uint32_t b) {
    bool factored = false;
    if (mode == EvalMode::Factored) {
        if (spec.kind != nn::ModelKind::Mlp || width != FloatWidth::F64)
            throw InvalidArgument("factored evaluation needs a dense f64 model");
        factored = true;
    } else if (mode == EvalMode::Auto) {
        factored = spec.kind == nn::ModelKind::Mlp && width == FloatWidth::F64 &&
                   pool.size() <= kFactoredPoolCap &&
                   size_t(m) * b * spec.param_count() > size_t(1) << 27;
    }
    if (factored)
        return std::make_unique<FactoredEvaluator>(spec, rule, w_i, w_next, ds, pool);
    return std::make_unique<DirectEvaluator>(spec, rule, width, w_i, w_next, ds);
}

struct StepContext {
    std::vector<uint32_t> pool;  // dataset indices
    Xoshiro256 rng;
};

StepContext make_pool(const data::Dataset& ds, const ForgeConfig& cfg, uint32_t b,
                      uint64_t step_seed, const std::vector<uint32_t>* locked_pool) {
    StepContext ctx{{}, Xoshiro256(step_seed)};
    const auto allowed = allowed_indices(ds.size(), cfg.excluded, locked_pool);
    if (allowed.size() < b)
        throw InvalidArgument("forge: candidate pool smaller than batch size");
    if (locked_pool || cfg.pool_size == 0 || cfg.pool_size >= allowed.size()) {
        ctx.pool = allowed;
    } else {
        const auto picks = sample_without_replacement(
            ctx.rng, uint32_t(allowed.size()), cfg.pool_size);
        ctx.pool.reserve(picks.size());
        for (uint32_t p : picks) ctx.pool.push_back(allowed[p]);
    }
    if (ctx.pool.size() < b)
        throw InvalidArgument("forge: candidate pool smaller than batch size");
    return ctx;
}

std::vector<uint32_t> draw_batch(Xoshiro256& rng, const std::vector<uint32_t>& pool,
                                 uint32_t b) {
    auto picks = sample_without_replacement(rng, uint32_t(pool.size()), b);
    std::vector<uint32_t> batch(picks.size());
    for (size_t i = 0; i < picks.size(); ++i) batch[i] = pool[picks[i]];
    return batch;
}

// Shared by forge_step / greedy_refine / forge_log so that the chained
// attack reuses one pool, evaluator, and random stream.
ForgeStepResult run_attack(const nn::ModelSpec& spec, const nn::UpdateRule& rule,
                           FloatWidth width, const Params& w_i, const Params& w_next,
                           const data::Dataset& ds, const ForgeConfig& cfg,
                           uint64_t step_seed, const std::vector<uint32_t>* locked_pool,
                           const data::Minibatch* refine_only) {
    const uint32_t b =
        refine_only ? uint32_t(refine_only->size()) : cfg.effective_batch(rule.batch_size);
    auto ctx = make_pool(ds, cfg, b, step_seed, locked_pool);
    nn::UpdateRule eval_rule = rule;
    eval_rule.batch_size = b;
    const auto eval = make_evaluator(spec, eval_rule, width, w_i, w_next, ds, ctx.pool,
                                     cfg.eval_mode, cfg.candidate_count, b);

    ForgeStepResult res;
    std::vector<uint32_t> current;
    double current_err;

    if (refine_only) {
        current = refine_only->indices;
        current_err = eval->error_l2(current);
    } else {
        std::vector<std::vector<uint32_t>> candidates(cfg.candidate_count);
        for (auto& c : candidates) c = draw_batch(ctx.rng, ctx.pool, b);
        std::vector<double> errs(candidates.size());
#pragma omp parallel for schedule(dynamic)
        for (long j = 0; j < long(candidates.size()); ++j)
            errs[j] = eval->error_l2(candidates[j]);
        size_t best = 0;
        for (size_t j = 1; j < errs.size(); ++j)
            if (errs[j] < errs[best]) best = j;
        current = candidates[best];
        current_err = errs[best];
        res.candidates_evaluated = candidates.size();
    }

    // Greedy refinement: slots cycle round-robin within a round.
    std::vector<bool> in_batch(ds.size(), false);
    for (uint32_t i : current) in_batch[i] = true;
    for (uint32_t round = 0; round < cfg.greedy_rounds; ++round) {
        struct Proposal {
            uint32_t slot;
            uint32_t replacement;
        };
        std::vector<Proposal> props;
        props.reserve(cfg.candidate_count);
        for (uint32_t j = 0; j < cfg.candidate_count; ++j) {
            const uint32_t slot = j % b;
            const uint32_t repl = ctx.pool[ctx.rng.below(ctx.pool.size())];
            if (in_batch[repl]) continue;  // would duplicate an index
            props.push_back({slot, repl});
        }
        std::vector<double> perrs(props.size());
#pragma omp parallel for schedule(dynamic)
        for (long j = 0; j < long(props.size()); ++j) {
            std::vector<uint32_t> trial = current;
            trial[props[j].slot] = props[j].replacement;
            perrs[j] = eval->error_l2(trial);
        }
        res.candidates_evaluated += props.size();
        size_t best = 0;
        for (size_t j = 1; j < perrs.size(); ++j)
            if (perrs[j] < perrs[best]) best = j;
        if (!props.empty() && perrs[best] < current_err) {
            in_batch[current[props[best].slot]] = false;
            in_batch[props[best].replacement] = true;
            current[props[best].slot] = props[best].replacement;
            current_err = perrs[best];
            res.greedy_trace.push_back(current_err);
        }
    }

    res.forged_batch = data::Minibatch{std::move(current)};
    res.forged_batch.validate(ds.size());
    const Params u =
        nn::batch_update(spec, w_i, eval_rule, res.forged_batch, ds, width);
    res.achieved_error_l2 = metric_distance(MetricKind::L2, w_next, u);
    res.achieved_error = cfg.metric == MetricKind::L2
                             ? res.achieved_error_l2
                             : metric_distance(cfg.metric, w_next, u);
    return res;
}

double quantile(std::vector<double> v, double q) {
    std::sort(v.begin(), v.end());
    const double pos = q * double(v.size() - 1);
    const size_t lo = size_t(pos);
    const size_t hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (pos - double(lo)) * (v[hi] - v[lo]);
}

ForgedLog forge_log_impl(const pol::PolLog& log, const ForgeConfig& cfg,
                         const data::Dataset& ds,
                         const std::vector<uint32_t>* locked_pool, bool check_source) {
    cfg.validate(ds.size());
    log.validate();
    if (check_source) {
        const auto rep = pol::verify(log, ds, MetricKind::L2, 0.0);
        if (!rep.pass)
            throw ConsistencyError(
                "forge_log: source log does not verify at epsilon=0");
    }

    ForgedLog fl;
    fl.log = log;
    fl.excluded = cfg.excluded;
    fl.source_digest = data::hex_digest([&] {
        const auto bytes = pol::serialize_log(log);
        return data::sha256_bytes(bytes.data(), bytes.size());
    }());
    fl.per_step_error.assign(log.steps(), 0.0);

    std::vector<bool> banned(ds.size(), false);
    for (uint32_t i : cfg.excluded) banned[i] = true;

    for (size_t i = 0; i < log.steps(); ++i) {
        const pol::LogEntry& e = log.entries[i];
        bool in_scope = cfg.scope == Scope::AllSteps;
        if (!in_scope)
            for (uint32_t idx : e.batch.indices)
                if (banned[idx]) { in_scope = true; break; }
        if (!in_scope) continue;

        auto res = run_attack(log.model_spec, e.rule, log.float_width,
                              e.checkpoint_before, log.successor(i), ds, cfg,
                              derive_seed(cfg.seed, i), locked_pool, nullptr);
        res.step_index = i;
        res.original_batch = e.batch;
        pol::LogEntry& fe = fl.log.entries[i];
        fe.batch = res.forged_batch;
        fe.rule.batch_size = uint32_t(res.forged_batch.size());
        fl.substituted_steps.push_back(i);
        fl.per_step_error[i] = res.achieved_error_l2;
        fl.update_evaluations += res.candidates_evaluated;
    }

    // Exclusion soundness, machine-checked over every entry.
    for (const auto& e : fl.log.entries)
        for (uint32_t idx : e.batch.indices)
            if (banned[idx])
                throw ConsistencyError("forged log references an excluded index");

    fl.max_error = fl.per_step_error.empty()
                       ? 0.0
                       : *std::max_element(fl.per_step_error.begin(),
                                           fl.per_step_error.end());
    fl.smallest_passing_epsilon = fl.max_error;
    if (!cfg.strip_provenance) {
        json note;
        note["forged_from"] = fl.source_digest;
        note["excluded"] = fl.excluded;
        fl.log.note = note.dump();
    }
    return fl;
}

}  // namespace

ForgeStepResult forge_step(const nn::ModelSpec& spec, const nn::UpdateRule& rule,
                           FloatWidth width, const Params& w_i, const Params& w_next,
                           const data::Dataset& ds, const ForgeConfig& cfg,
                           uint64_t step_seed,
                           const std::vector<uint32_t>* locked_pool) {
    cfg.validate(ds.size());
    ForgeConfig step_cfg = cfg;
    step_cfg.greedy_rounds = 0;
    return run_attack(spec, rule, width, w_i, w_next, ds, step_cfg, step_seed,
                      locked_pool, nullptr);
}

ForgeStepResult greedy_refine(const nn::ModelSpec& spec, const nn::UpdateRule& rule,
                              FloatWidth width, const Params& w_i,
                              const Params& w_next, const data::Minibatch& batch,
                              const data::Dataset& ds, const ForgeConfig& cfg,
                              uint64_t step_seed,
                              const std::vector<uint32_t>* locked_pool) {
    cfg.validate(ds.size());
    std::vector<bool> banned(ds.size(), false);
    for (uint32_t i : cfg.excluded) banned[i] = true;
    for (uint32_t i : batch.indices)
        if (banned[i])
            throw InvalidArgument("greedy_refine: batch references an excluded index");
    return run_attack(spec, rule, width, w_i, w_next, ds, cfg, step_seed, locked_pool,
                      &batch);
}

ForgedLog forge_log(const pol::PolLog& log, const ForgeConfig& cfg,
                    const data::Dataset& ds, bool check_source) {
    return forge_log_impl(log, cfg, ds, nullptr, check_source);
}

ForgedLog subset_forge(const pol::PolLog& log, uint32_t subset_size,
                       const ForgeConfig& cfg, const data::Dataset& ds,
                       bool check_source) {
    uint32_t need = cfg.batch_size;
    for (const auto& e : log.entries)
        need = std::max(need, cfg.effective_batch(e.rule.batch_size));
    if (subset_size < need)
        throw InvalidArgument("subset_forge: subset smaller than batch size");
    if (subset_size > ds.size())
        throw InvalidArgument("subset_forge: subset larger than dataset");
    Xoshiro256 rng(derive_seed(cfg.seed, 0x5b5e7));
    const auto subset =
        sample_without_replacement(rng, uint32_t(ds.size()), subset_size);
    return forge_log_impl(log, cfg, ds, &subset, check_source);
}

ErrorSummary baseline_error(const nn::ModelSpec& spec, const nn::UpdateRule& rule,
                            FloatWidth width, const Params& w_i, const Params& w_next,
                            const data::Dataset& ds, const ForgeConfig& cfg,
                            size_t trials, uint64_t seed) {
    if (trials < 1) throw InvalidArgument("baseline_error: trials < 1");
    cfg.validate(ds.size());
    const uint32_t b = cfg.effective_batch(rule.batch_size);
    auto ctx = make_pool(ds, cfg, b, seed, nullptr);
    nn::UpdateRule eval_rule = rule;
    eval_rule.batch_size = b;
    const auto eval = make_evaluator(spec, eval_rule, width, w_i, w_next, ds, ctx.pool,
                                     cfg.eval_mode, uint32_t(trials), b);
    std::vector<std::vector<uint32_t>> batches(trials);
    for (auto& c : batches) c = draw_batch(ctx.rng, ctx.pool, b);
    ErrorSummary s;
    s.errors.resize(trials);
#pragma omp parallel for schedule(dynamic)
    for (long j = 0; j < long(trials); ++j) s.errors[j] = eval->error_l2(batches[j]);
    s.median = quantile(s.errors, 0.5);
    s.q1 = quantile(s.errors, 0.25);
    s.q3 = quantile(s.errors, 0.75);
    return s;
}

std::string ForgedLog::sidecar_json() const {
    json j;
    j["excluded"] = excluded;
    j["substituted_steps"] = substituted_steps;
    j["per_step_error_l2"] = per_step_error;
    j["max_error"] = max_error;
    j["smallest_passing_epsilon"] = smallest_passing_epsilon;
    j["update_evaluations"] = update_evaluations;
    j["source_digest"] = source_digest;
    return j.dump();
}

void save_forged(const ForgedLog& fl, const std::string& log_path,
                 const std::string& sidecar_path) {
    pol::save_log(fl.log, log_path);
    std::ofstream out(sidecar_path);
    if (!out) throw IoError("cannot open sidecar for writing: " + sidecar_path);
    out << fl.sidecar_json() << "\n";
}

}  // namespace forgelab::forge
