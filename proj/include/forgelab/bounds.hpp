#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "forgelab/common.hpp"
#include "forgelab/data.hpp"
#include "forgelab/nn.hpp"
#include "forgelab/pol.hpp"
#include "forgelab/prng.hpp"

namespace forgelab::bounds {

// Inputs of the probabilistic forging bound. r = sigma2_max / (b * eps^2)
// is the quantity everything else is expressed in.
struct BoundInputs {
    double sigma2_max = 0.0;       // trace-of-covariance bound, >= 0
    uint64_t batch_size = 1;       // b >= 1
    double epsilon = 1.0;          // > 0
    uint64_t forger_batches = 1;   // n >= 1
    uint64_t max_log_length = 1;   // m >= 1
    uint64_t log_count = 1;        // alpha >= 1

    void validate() const;
    double ratio() const;  // r
};

// max(0, (1 - r) * (1 - r^n))^(m * alpha), clamped to [0, 1]; r >= 1 gives 0.
double theorem2_bound(const BoundInputs& in);

struct BoundReport {
    BoundInputs inputs;
    double r = 0.0;
    double bound = 0.0;
    bool vacuous = false;  // r >= 1: the bound degenerates to 0
    // When sigma2_max is an estimate, the bound interval obtained by moving
    // the estimate +-2 standard errors. Empty otherwise.
    bool sigma2_empirical = false;
    double sigma2_se = 0.0;
    double bound_lo = 0.0;  // bound at sigma2 + 2 se (pessimistic)
    double bound_hi = 0.0;  // bound at sigma2 - 2 se (optimistic)

    std::string to_json() const;
};

BoundReport make_report(const BoundInputs& in,
                        std::optional<double> sigma2_se = std::nullopt);

// ---------------------------------------------------------------------------
// Variance estimation

struct VarianceEstimate {
    Params mean_update;       // mu
    double trace_cov = 0.0;   // sigma^2, unbiased (divisor samples - 1)
    double se = 0.0;          // standard error of trace_cov
    size_t sample_count = 0;
    Params checkpoint;        // the w the estimate was taken at
};

// A draw of one data point and the per-example update it induces.
using ExampleUpdateFn = std::function<Params(const Params& w, const data::Example&)>;
using ExampleSampler = std::function<data::Example(Xoshiro256&)>;

// Monte Carlo trace-of-covariance of the per-example update at w. Sample i
// uses the independent stream derive_seed(seed, i), so results do not
// depend on evaluation order; accumulation is chunked pairwise summation.
VarianceEstimate estimate_sigma2(const ExampleUpdateFn& g, const ExampleSampler& sampler,
                                 const Params& w, size_t samples, uint64_t seed);

// Same, for batches of size b (the update is the mean of b fresh examples).
VarianceEstimate estimate_sigma2_batch(const ExampleUpdateFn& g,
                                       const ExampleSampler& sampler, const Params& w,
                                       uint32_t b, size_t samples, uint64_t seed);

// Network-model conveniences: per-example SGD update under (spec, rule),
// sampling from a synthetic distribution or uniformly from a dataset.
VarianceEstimate estimate_sigma2(const nn::ModelSpec& spec, const Params& w,
                                 const nn::UpdateRule& rule,
                                 const data::DistributionSpec& dist, size_t samples,
                                 uint64_t seed);
VarianceEstimate estimate_sigma2(const nn::ModelSpec& spec, const Params& w,
                                 const nn::UpdateRule& rule, const data::Dataset& ds,
                                 size_t samples, uint64_t seed);

ExampleUpdateFn nn_example_update_fn(const nn::ModelSpec& spec,
                                     const nn::UpdateRule& rule);
ExampleSampler dataset_sampler(const data::Dataset& ds);
ExampleSampler distribution_sampler(const data::DistributionSpec& dist);

struct Sigma2MaxResult {
    double sigma2_max = 0.0;
    size_t argmax_step = 0;
    std::vector<double> per_step;  // one estimate per log step, same seed each
};

// Largest per-example-update trace-covariance over the log's checkpoints.
Sigma2MaxResult sigma2_max_over_log(const pol::PolLog& log, const ExampleSampler& sampler,
                                    size_t samples, uint64_t seed);

// ---------------------------------------------------------------------------
// Chebyshev / Markov validation

struct ChebyshevResult {
    double empirical_tail = 0.0;  // P(||g_batch - mu|| >= eps), Monte Carlo
    double markov_bound = 0.0;    // sigma^2 / (b eps^2), unclamped
    double binomial_sigma = 0.0;  // sqrt(p (1-p) / trials) at p = clamped bound
    bool vacuous = false;         // bound >= 1
    bool holds = false;           // tail <= min(bound,1) + 3 binomial_sigma
    double sigma2 = 0.0;          // the estimate the bound uses
    size_t trials = 0;
};

ChebyshevResult chebyshev_check(const ExampleUpdateFn& g, const ExampleSampler& sampler,
                                const Params& w, uint32_t b, double epsilon,
                                size_t trials, uint64_t seed,
                                size_t variance_samples = 20000);

// ---------------------------------------------------------------------------
// Lemma 3 machinery: Lipschitz estimate and similar-dataset forging

// Empirical max of d2(g(w,x), g(w,x~)) / d2(x, x~) over probe pairs, x~
// uniform in the l2 ball of the given radius around a dataset point.
// A lower bound of the true constant.
double lipschitz_estimate(const nn::ModelSpec& spec, const Params& w,
                          const nn::UpdateRule& rule, const data::Dataset& ds,
                          size_t probes, double radius, uint64_t seed);

struct SimilarForgeResult {
    pol::PolLog log;            // checkpoints verbatim, batches unchanged
    data::Dataset perturbed;    // D': every feature vector moved within delta
    double max_error = 0.0;     // max step error of log vs D'
    std::vector<double> per_step_error;
    double lipschitz_hat = 0.0; // L estimated at the log's checkpoints
    double delta = 0.0;
    bool within_bound = false;  // max_error <= 1.5 * L * delta
    std::string report_json() const;
};

SimilarForgeResult similar_forge(const pol::PolLog& log, const data::Dataset& ds,
                                 double delta, uint64_t seed,
                                 size_t lipschitz_probes = 64);

// ---------------------------------------------------------------------------
// Lemma 4 covering check

struct CoverageReport {
    double fraction_covered = 0.0;  // probes whose pool minimum is <= eps
    std::vector<double> per_probe_min;
    double epsilon = 0.0;
    std::vector<size_t> histogram;  // log10-bucketed minima, 12 buckets
    std::string to_json() const;
};

// For every (w, x) in probe_ws x probe_xs, the minimum over the pool of
// d2(g(w, x), g(w, x_i)).
CoverageReport covering_check(const nn::ModelSpec& spec, const data::Dataset& pool,
                              const std::vector<Params>& probe_ws,
                              const std::vector<data::Example>& probe_xs,
                              const nn::UpdateRule& rule, double epsilon);

// ---------------------------------------------------------------------------
// Analytic fixture: linear model y = <w, x>, squared loss, x ~ N(0, I_d)
// and noiseless labels from w_star. The per-example update is
// g(w, x) = w - eta * <w - w_star, x> x, with closed-form
// trace-cov = eta^2 (d + 1) ||w - w_star||^2.
struct LinearGaussianTask {
    Params w_star;
    double eta = 0.01;

    Params update(const Params& w, const data::Example& ex) const;
    double analytic_trace_cov(const Params& w) const;
    ExampleUpdateFn update_fn() const;
    ExampleSampler sampler() const;  // features ~ N(0, I), label unused
};

}  // namespace forgelab::bounds
