#include "forgelab/bounds.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "json.hpp"

namespace forgelab::bounds {

using nlohmann::json;

void BoundInputs::validate() const {
    if (!(sigma2_max >= 0.0))
        throw InvalidArgument("BoundInputs: sigma2_max must be >= 0");
    if (batch_size < 1) throw InvalidArgument("BoundInputs: batch_size must be >= 1");
    if (!(epsilon > 0.0))
        throw InvalidArgument("BoundInputs: epsilon must be > 0 (the ratio "
                              "sigma2/(b eps^2) is undefined at eps = 0)");
    if (forger_batches < 1) throw InvalidArgument("BoundInputs: n must be >= 1");
    if (max_log_length < 1) throw InvalidArgument("BoundInputs: m must be >= 1");
    if (log_count < 1) throw InvalidArgument("BoundInputs: alpha must be >= 1");
}

double BoundInputs::ratio() const {
    validate();
    return sigma2_max / (double(batch_size) * epsilon * epsilon);
}

double theorem2_bound(const BoundInputs& in) {
    const double r = in.ratio();
    if (r >= 1.0) return 0.0;
    // (1 - r)(1 - r^n), exponent m * alpha, all clamped into [0, 1].
    const double base =
        std::clamp((1.0 - r) * (1.0 - std::pow(r, double(in.forger_batches))), 0.0, 1.0);
    const double exponent = double(in.max_log_length) * double(in.log_count);
    return std::clamp(std::pow(base, exponent), 0.0, 1.0);
}

BoundReport make_report(const BoundInputs& in, std::optional<double> sigma2_se) {
    BoundReport rep;
    rep.inputs = in;
    rep.r = in.ratio();
    rep.bound = theorem2_bound(in);
    rep.vacuous = rep.r >= 1.0;
    if (sigma2_se) {
        rep.sigma2_empirical = true;
        rep.sigma2_se = *sigma2_se;
        BoundInputs lo = in, hi = in;
        lo.sigma2_max = in.sigma2_max + 2.0 * rep.sigma2_se;
        hi.sigma2_max = std::max(0.0, in.sigma2_max - 2.0 * rep.sigma2_se);
        rep.bound_lo = theorem2_bound(lo);
        rep.bound_hi = theorem2_bound(hi);
    } else {
        rep.bound_lo = rep.bound_hi = rep.bound;
    }
    return rep;
}

std::string BoundReport::to_json() const {
    json j;
    j["inputs"] = {{"sigma2_max", inputs.sigma2_max},
                   {"batch_size", inputs.batch_size},
                   {"epsilon", inputs.epsilon},
                   {"forger_batches", inputs.forger_batches},
                   {"max_log_length", inputs.max_log_length},
                   {"log_count", inputs.log_count}};
    j["r"] = r;
    j["bound"] = bound;
    j["vacuous"] = vacuous;
    j["sigma2_empirical"] = sigma2_empirical;
    if (sigma2_empirical) {
        j["sigma2_se"] = sigma2_se;
        j["bound_interval"] = {bound_lo, bound_hi};
    }
    return j.dump();
}

// ---------------------------------------------------------------------------

namespace {

constexpr size_t kChunk = 1024;

// Pairwise combination of per-chunk partials; deterministic regardless of
// how chunks were computed in parallel.
double pairwise_sum(std::vector<double> v) {
    if (v.empty()) return 0.0;
    while (v.size() > 1) {
        std::vector<double> next((v.size() + 1) / 2);
        for (size_t i = 0; i + 1 < v.size(); i += 2) next[i / 2] = v[i] + v[i + 1];
        if (v.size() % 2) next.back() = v.back();
        v = std::move(next);
    }
    return v[0];
}

Params pairwise_sum_vec(std::vector<Params> v) {
    if (v.empty()) return {};
    while (v.size() > 1) {
        std::vector<Params> next((v.size() + 1) / 2);
        for (size_t i = 0; i + 1 < v.size(); i += 2) {
            next[i / 2] = std::move(v[i]);
            Params& a = next[i / 2];
            const Params& b = v[i + 1];
            for (size_t k = 0; k < a.size(); ++k) a[k] += b[k];
        }
        if (v.size() % 2) next.back() = std::move(v.back());
        v = std::move(next);
    }
    return v[0];
}

// Draws sample i from its own derived stream and returns the shifted
// update u_i = g(w, x_i) - w. The shift keeps the later variance
// accumulation away from catastrophic cancellation against ||w||.
Params shifted_update(const ExampleUpdateFn& g, const ExampleSampler& sampler,
                      const Params& w, uint64_t seed, size_t i) {
    Xoshiro256 rng(derive_seed(seed, i));
    const data::Example ex = sampler(rng);
    Params u = g(w, ex);
    if (u.size() != w.size())
        throw InvalidArgument("estimate_sigma2: updater changed the dimension");
    for (size_t k = 0; k < w.size(); ++k) u[k] -= w[k];
    return u;
}

VarianceEstimate estimate_impl(const ExampleUpdateFn& g, const ExampleSampler& sampler,
                               const Params& w, size_t samples, uint64_t seed) {
    if (samples < 2) throw InvalidArgument("estimate_sigma2: samples < 2");
    if (w.empty()) throw InvalidArgument("estimate_sigma2: empty checkpoint");
    const size_t chunks = (samples + kChunk - 1) / kChunk;

    // Pass 1: mean of the shifted updates.
    std::vector<Params> mean_partials(chunks, Params(w.size(), 0.0));
#pragma omp parallel for schedule(dynamic)
    for (long c = 0; c < long(chunks); ++c) {
        const size_t lo = size_t(c) * kChunk, hi = std::min(lo + kChunk, samples);
        Params& acc = mean_partials[size_t(c)];
        for (size_t i = lo; i < hi; ++i) {
            const Params u = shifted_update(g, sampler, w, seed, i);
            for (size_t k = 0; k < u.size(); ++k) acc[k] += u[k];
        }
    }
    Params mu_u = pairwise_sum_vec(std::move(mean_partials));
    for (double& v : mu_u) v /= double(samples);

    // Pass 2: q_i = ||u_i - mu_u||^2, regenerated from the same streams.
    std::vector<double> q_partials(chunks, 0.0), q2_partials(chunks, 0.0);
#pragma omp parallel for schedule(dynamic)
    for (long c = 0; c < long(chunks); ++c) {
        const size_t lo = size_t(c) * kChunk, hi = std::min(lo + kChunk, samples);
        double q_acc = 0.0, q2_acc = 0.0;
        for (size_t i = lo; i < hi; ++i) {
            const Params u = shifted_update(g, sampler, w, seed, i);
            double q = 0.0;
            for (size_t k = 0; k < u.size(); ++k) {
                const double dv = u[k] - mu_u[k];
                q += dv * dv;
            }
            q_acc += q;
            q2_acc += q * q;
        }
        q_partials[size_t(c)] = q_acc;
        q2_partials[size_t(c)] = q2_acc;
    }
    const double sum_q = pairwise_sum(std::move(q_partials));
    const double sum_q2 = pairwise_sum(std::move(q2_partials));

    VarianceEstimate est;
    est.sample_count = samples;
    est.checkpoint = w;
    est.mean_update.resize(w.size());
    for (size_t k = 0; k < w.size(); ++k) est.mean_update[k] = w[k] + mu_u[k];
    est.trace_cov = sum_q / double(samples - 1);
    // se of the trace estimate from the spread of the q_i themselves.
    const double mean_q = sum_q / double(samples);
    const double var_q =
        std::max(0.0, sum_q2 / double(samples) - mean_q * mean_q);
    est.se = std::sqrt(var_q / double(samples));
    if (!(est.trace_cov >= 0.0))
        throw NumericError("estimate_sigma2: non-finite variance");
    return est;
}

}  // namespace

VarianceEstimate estimate_sigma2(const ExampleUpdateFn& g, const ExampleSampler& sampler,
                                 const Params& w, size_t samples, uint64_t seed) {
    return estimate_impl(g, sampler, w, samples, seed);
}

VarianceEstimate estimate_sigma2_batch(const ExampleUpdateFn& g,
                                       const ExampleSampler& sampler, const Params& w,
                                       uint32_t b, size_t samples, uint64_t seed) {
    if (b < 1) throw InvalidArgument("estimate_sigma2_batch: b < 1");
    // One "example" of the batch-level estimator is the mean of b fresh
    // per-example updates; its trace-cov realizes the 1/b law. The generic
    // machinery replays each sample twice, so the per-sample batch stream is
    // packed as a seed into a carrier Example (53 exactly representable bits).
    ExampleSampler carrier_sampler = [](Xoshiro256& rng) {
        data::Example ex;
        ex.features = {double(rng() >> 11)};
        ex.label = 1;
        return ex;
    };
    ExampleUpdateFn carrier_update = [&g, &sampler, b](const Params& w_in,
                                                       const data::Example& carrier) {
        Xoshiro256 rng(uint64_t(carrier.features.at(0)));
        Params acc(w_in.size(), 0.0);
        for (uint32_t k = 0; k < b; ++k) {
            const data::Example ex = sampler(rng);
            const Params u = g(w_in, ex);
            for (size_t j = 0; j < acc.size(); ++j) acc[j] += u[j];
        }
        for (double& v : acc) v /= double(b);
        return acc;
    };
    return estimate_impl(carrier_update, carrier_sampler, w, samples, seed);
}

ExampleUpdateFn nn_example_update_fn(const nn::ModelSpec& spec,
                                     const nn::UpdateRule& rule) {
    return [spec, rule](const Params& w, const data::Example& ex) {
        return nn::example_update(spec, w, rule, ex, FloatWidth::F64);
    };
}

ExampleSampler dataset_sampler(const data::Dataset& ds) {
    if (ds.size() == 0) throw InvalidArgument("dataset_sampler: empty dataset");
    const data::Dataset* p = &ds;
    return [p](Xoshiro256& rng) { return p->at(rng.below(p->size())); };
}

ExampleSampler distribution_sampler(const data::DistributionSpec& dist) {
    dist.validate();
    return [dist](Xoshiro256& rng) {
        data::Example ex;
        const int cls = int(rng.below(uint64_t(dist.class_count)));
        ex.label = cls + 1;
        ex.features.resize(size_t(dist.dimension));
        const double sd = std::sqrt(dist.variance);
        for (int d = 0; d < dist.dimension; ++d)
            ex.features[size_t(d)] =
                std::clamp(dist.means[size_t(cls)][size_t(d)] + sd * rng.gaussian(),
                           0.0, 1.0);
        return ex;
    };
}

VarianceEstimate estimate_sigma2(const nn::ModelSpec& spec, const Params& w,
                                 const nn::UpdateRule& rule,
                                 const data::DistributionSpec& dist, size_t samples,
                                 uint64_t seed) {
    return estimate_impl(nn_example_update_fn(spec, rule), distribution_sampler(dist),
                         w, samples, seed);
}

VarianceEstimate estimate_sigma2(const nn::ModelSpec& spec, const Params& w,
                                 const nn::UpdateRule& rule, const data::Dataset& ds,
                                 size_t samples, uint64_t seed) {
    return estimate_impl(nn_example_update_fn(spec, rule), dataset_sampler(ds), w,
                         samples, seed);
}

Sigma2MaxResult sigma2_max_over_log(const pol::PolLog& log,
                                    const ExampleSampler& sampler, size_t samples,
                                    uint64_t seed) {
    if (log.steps() == 0) throw InvalidArgument("sigma2_max_over_log: empty log");
    Sigma2MaxResult res;
    res.per_step.resize(log.steps());
    for (size_t i = 0; i < log.steps(); ++i) {
        // Same seed at every checkpoint: identical checkpoints get identical
        // estimates, so the maximum is idempotent under duplication.
        const auto est = estimate_impl(
            nn_example_update_fn(log.model_spec, log.entries[i].rule), sampler,
            log.entries[i].checkpoint_before, samples, seed);
        res.per_step[i] = est.trace_cov;
    }
    res.sigma2_max = res.per_step[0];
    for (size_t i = 1; i < res.per_step.size(); ++i)
        if (res.per_step[i] > res.sigma2_max) {
            res.sigma2_max = res.per_step[i];
            res.argmax_step = i;
        }
    return res;
}

ChebyshevResult chebyshev_check(const ExampleUpdateFn& g, const ExampleSampler& sampler,
                                const Params& w, uint32_t b, double epsilon,
                                size_t trials, uint64_t seed,
                                size_t variance_samples) {
    if (trials < 100) throw InvalidArgument("chebyshev_check: trials < 100");
    if (!(epsilon > 0.0)) throw InvalidArgument("chebyshev_check: epsilon <= 0");
    if (b < 1) throw InvalidArgument("chebyshev_check: b < 1");

    const auto est = estimate_impl(g, sampler, w, variance_samples, derive_seed(seed, 1));
    const Params& mu = est.mean_update;

    std::vector<uint64_t> hit((trials + kChunk - 1) / kChunk, 0);
#pragma omp parallel for schedule(dynamic)
    for (long c = 0; c < long(hit.size()); ++c) {
        const size_t lo = size_t(c) * kChunk, hi = std::min(lo + kChunk, trials);
        uint64_t n_hit = 0;
        for (size_t t = lo; t < hi; ++t) {
            Xoshiro256 rng(derive_seed(seed, 0x100000000ULL + t));
            Params acc(w.size(), 0.0);
            for (uint32_t k = 0; k < b; ++k) {
                const data::Example ex = sampler(rng);
                const Params u = g(w, ex);
                for (size_t j = 0; j < acc.size(); ++j) acc[j] += u[j];
            }
            double dist2 = 0.0;
            for (size_t j = 0; j < acc.size(); ++j) {
                const double dv = acc[j] / double(b) - mu[j];
                dist2 += dv * dv;
            }
            if (dist2 >= epsilon * epsilon) ++n_hit;
        }
        hit[size_t(c)] = n_hit;
    }
    uint64_t total = 0;
    for (uint64_t h : hit) total += h;

    ChebyshevResult res;
    res.trials = trials;
    res.sigma2 = est.trace_cov;
    res.empirical_tail = double(total) / double(trials);
    res.markov_bound = est.trace_cov / (double(b) * epsilon * epsilon);
    const double p = std::clamp(res.markov_bound, 0.0, 1.0);
    res.vacuous = res.markov_bound >= 1.0;
    res.binomial_sigma = std::sqrt(p * (1.0 - p) / double(trials));
    res.holds = res.empirical_tail <= p + 3.0 * res.binomial_sigma + 1e-12;
    return res;
}

// ---------------------------------------------------------------------------

namespace {

// Uniform draw in the l2 ball of the given radius around `center`.
std::vector<double> perturb_in_ball(Xoshiro256& rng, const std::vector<double>& center,
                                    double radius) {
    const size_t d = center.size();
    std::vector<double> dir(d);
    double norm2 = 0.0;
    for (double& v : dir) {
        v = rng.gaussian();
        norm2 += v * v;
    }
    const double norm = std::sqrt(norm2);
    const double scale =
        norm > 0.0 ? radius * std::pow(rng.uniform(), 1.0 / double(d)) / norm : 0.0;
    std::vector<double> out(d);
    for (size_t k = 0; k < d; ++k) out[k] = center[k] + scale * dir[k];
    return out;
}

}  // namespace

double lipschitz_estimate(const nn::ModelSpec& spec, const Params& w,
                          const nn::UpdateRule& rule, const data::Dataset& ds,
                          size_t probes, double radius, uint64_t seed) {
    if (probes < 1) throw InvalidArgument("lipschitz_estimate: probes < 1");
    if (!(radius > 0.0)) throw InvalidArgument("lipschitz_estimate: radius <= 0");
    if (ds.size() == 0) throw InvalidArgument("lipschitz_estimate: empty dataset");

    std::vector<double> ratios(probes, 0.0);
#pragma omp parallel for schedule(dynamic)
    for (long p = 0; p < long(probes); ++p) {
        Xoshiro256 rng(derive_seed(seed, uint64_t(p)));
        const data::Example& ex = ds.at(rng.below(ds.size()));
        data::Example moved = ex;
        moved.features = perturb_in_ball(rng, ex.features, radius);
        double dx2 = 0.0;
        for (size_t k = 0; k < ex.features.size(); ++k) {
            const double dv = moved.features[k] - ex.features[k];
            dx2 += dv * dv;
        }
        if (dx2 == 0.0) continue;
        const Params ua = nn::example_update(spec, w, rule, ex, FloatWidth::F64);
        const Params ub = nn::example_update(spec, w, rule, moved, FloatWidth::F64);
        ratios[size_t(p)] =
            metric_distance(MetricKind::L2, ua, ub) / std::sqrt(dx2);
    }
    return *std::max_element(ratios.begin(), ratios.end());
}

SimilarForgeResult similar_forge(const pol::PolLog& log, const data::Dataset& ds,
                                 double delta, uint64_t seed, size_t lipschitz_probes) {
    if (delta < 0.0) throw InvalidArgument("similar_forge: delta < 0");
    log.validate();
    if (log.steps() == 0) throw InvalidArgument("similar_forge: empty log");

    SimilarForgeResult res;
    res.delta = delta;
    res.log = log;  // checkpoints and batch indices stay verbatim; index i of
                    // D' is the perturbed twin of index i of D.
    res.perturbed = ds;
    if (delta > 0.0) {
        for (size_t i = 0; i < res.perturbed.examples.size(); ++i) {
            Xoshiro256 rng(derive_seed(seed, i));
            res.perturbed.examples[i].features =
                perturb_in_ball(rng, ds.at(i).features, delta);
        }
        res.perturbed.source = ds.source + ":perturbed";
    }

    const auto rep = pol::verify(res.log, res.perturbed, MetricKind::L2,
                                 std::numeric_limits<double>::infinity(), true);
    res.per_step_error = rep.per_step_error;
    res.max_error = rep.max_error;

    if (delta > 0.0) {
        // L estimated at up to 8 evenly spaced checkpoints, probing at the
        // perturbation scale; the estimator is a lower bound of L, hence the
        // 1.5x slack in the certificate.
        const size_t n_ck = std::min<size_t>(8, log.steps());
        double l_hat = 0.0;
        for (size_t j = 0; j < n_ck; ++j) {
            const size_t i = j * (log.steps() - 1) / std::max<size_t>(1, n_ck - 1);
            l_hat = std::max(
                l_hat, lipschitz_estimate(log.model_spec,
                                          log.entries[i].checkpoint_before,
                                          log.entries[i].rule, ds, lipschitz_probes,
                                          delta, derive_seed(seed, 0x11b0 + j)));
        }
        res.lipschitz_hat = l_hat;
    }
    res.within_bound = res.max_error <= 1.5 * res.lipschitz_hat * delta + 1e-15;
    return res;
}

std::string SimilarForgeResult::report_json() const {
    json j;
    j["delta"] = delta;
    j["max_error"] = max_error;
    j["per_step_error"] = per_step_error;
    j["lipschitz_hat"] = lipschitz_hat;
    j["within_bound"] = within_bound;
    j["smallest_passing_epsilon"] = max_error;
    return j.dump();
}

// ---------------------------------------------------------------------------

CoverageReport covering_check(const nn::ModelSpec& spec, const data::Dataset& pool,
                              const std::vector<Params>& probe_ws,
                              const std::vector<data::Example>& probe_xs,
                              const nn::UpdateRule& rule, double epsilon) {
    if (pool.size() == 0) throw InvalidArgument("covering_check: empty pool");
    if (probe_ws.empty() || probe_xs.empty())
        throw InvalidArgument("covering_check: empty probes");
    if (epsilon < 0.0) throw InvalidArgument("covering_check: epsilon < 0");

    CoverageReport rep;
    rep.epsilon = epsilon;
    rep.per_probe_min.resize(probe_ws.size() * probe_xs.size());
    rep.histogram.assign(12, 0);

    for (size_t wi = 0; wi < probe_ws.size(); ++wi) {
        const Params& w = probe_ws[wi];
        // All pool updates at this checkpoint, shared across the x-probes.
        std::vector<Params> pool_updates(pool.size());
#pragma omp parallel for schedule(dynamic)
        for (long i = 0; i < long(pool.size()); ++i)
            pool_updates[size_t(i)] =
                nn::example_update(spec, w, rule, pool.at(size_t(i)), FloatWidth::F64);

#pragma omp parallel for schedule(dynamic)
        for (long xi = 0; xi < long(probe_xs.size()); ++xi) {
            const Params target =
                nn::example_update(spec, w, rule, probe_xs[size_t(xi)], FloatWidth::F64);
            double best = std::numeric_limits<double>::infinity();
            for (const Params& u : pool_updates)
                best = std::min(best, metric_distance(MetricKind::L2, target, u));
            rep.per_probe_min[wi * probe_xs.size() + size_t(xi)] = best;
        }
    }

    size_t covered = 0;
    for (double m : rep.per_probe_min) {
        if (m <= epsilon) ++covered;
        int bucket = 0;
        if (m > 0.0) bucket = std::clamp(int(std::floor(std::log10(m))) + 9, 0, 11);
        ++rep.histogram[size_t(bucket)];
    }
    rep.fraction_covered = double(covered) / double(rep.per_probe_min.size());
    return rep;
}

std::string CoverageReport::to_json() const {
    json j;
    j["epsilon"] = epsilon;
    j["fraction_covered"] = fraction_covered;
    j["per_probe_min"] = per_probe_min;
    j["histogram_log10"] = histogram;
    return j.dump();
}

// ---------------------------------------------------------------------------

Params LinearGaussianTask::update(const Params& w, const data::Example& ex) const {
    if (w.size() != w_star.size() || ex.features.size() != w.size())
        throw InvalidArgument("LinearGaussianTask: dimension mismatch");
    double residual = 0.0;
    for (size_t k = 0; k < w.size(); ++k)
        residual += (w[k] - w_star[k]) * ex.features[k];
    Params out(w.size());
    for (size_t k = 0; k < w.size(); ++k)
        out[k] = w[k] - eta * residual * ex.features[k];
    return out;
}

double LinearGaussianTask::analytic_trace_cov(const Params& w) const {
    double v2 = 0.0;
    for (size_t k = 0; k < w.size(); ++k) {
        const double dv = w[k] - w_star[k];
        v2 += dv * dv;
    }
    return eta * eta * double(w.size() + 1) * v2;
}

ExampleUpdateFn LinearGaussianTask::update_fn() const {
    LinearGaussianTask copy = *this;
    return [copy](const Params& w, const data::Example& ex) {
        return copy.update(w, ex);
    };
}

ExampleSampler LinearGaussianTask::sampler() const {
    const size_t d = w_star.size();
    return [d](Xoshiro256& rng) {
        data::Example ex;
        ex.label = 1;
        ex.features.resize(d);
        for (double& v : ex.features) v = rng.gaussian();
        return ex;
    };
}

}  // namespace forgelab::bounds
