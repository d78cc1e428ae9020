// Compares the two candidate-evaluation kernels behind the forging attack:
// the direct serial-reference evaluator (one full batch update per
// candidate) and the factored Gram-matrix kernel (OpenMP over candidates,
// rank-1 per-layer gradient structure). Prints a timing table and checks
// that both kernels pick identical batches.

#include <omp.h>

#include <chrono>
#include <cstdio>

#include "forgelab/forge.hpp"
#include "forgelab/prng.hpp"

using namespace forgelab;

namespace {

double now_s() {
    using clock = std::chrono::steady_clock;
    return std::chrono::duration<double>(clock::now().time_since_epoch()).count();
}

struct Case {
    int input_dim;
    int hidden;
    int classes;
    size_t dataset;
    uint32_t pool;
    uint32_t batch;
    uint32_t candidates;
};

}  // namespace

int main(int argc, char** argv) {
    uint64_t seed = 7;
    if (argc > 1) seed = std::strtoull(argv[1], nullptr, 10);

    const Case cases[] = {
        {64, 32, 10, 2000, 512, 32, 64},
        {256, 64, 10, 4000, 1024, 64, 128},
        {784, 64, 10, 8000, 2048, 128, 128},
    };

    std::printf("%-28s %10s %10s %8s %8s\n", "case", "direct_s", "factored_s",
                "speedup", "match");
    for (const Case& c : cases) {
        nn::ModelSpec spec;
        spec.input_dim = c.input_dim;
        spec.hidden = {c.hidden};
        spec.output_dim = c.classes;
        auto ds = data::sample_synthetic(
            data::DistributionSpec::make_default(c.input_dim, c.classes, 0.05, seed),
            c.dataset);
        nn::UpdateRule rule{0.01, c.batch};
        Xoshiro256 rng(derive_seed(seed, 1));
        const Params w = nn::init_params(spec, rng, FloatWidth::F64);
        data::Minibatch mb;
        {
            auto picks = sample_without_replacement(rng, uint32_t(ds.size()), c.batch);
            mb.indices = picks;
        }
        const Params w_next = nn::batch_update(spec, w, rule, mb, ds, FloatWidth::F64);

        forge::ForgeConfig cfg;
        cfg.excluded = {0};
        cfg.pool_size = c.pool;
        cfg.candidate_count = c.candidates;
        cfg.seed = seed;

        cfg.eval_mode = forge::EvalMode::Direct;
        const double t0 = now_s();
        const auto direct = forge::forge_step(spec, rule, FloatWidth::F64, w, w_next,
                                              ds, cfg, derive_seed(seed, 2));
        const double t1 = now_s();
        cfg.eval_mode = forge::EvalMode::Factored;
        const auto fact = forge::forge_step(spec, rule, FloatWidth::F64, w, w_next,
                                            ds, cfg, derive_seed(seed, 2));
        const double t2 = now_s();

        const bool match =
            direct.forged_batch.indices == fact.forged_batch.indices;
        char name[64];
        std::snprintf(name, sizeof name, "%dx%dx%d b=%u M=%u", c.input_dim, c.hidden,
                      c.classes, c.batch, c.candidates);
        std::printf("%-28s %10.4f %10.4f %8.2f %8s\n", name, t1 - t0, t2 - t1,
                    (t1 - t0) / (t2 - t1), match ? "yes" : "NO");
        if (!match) return 1;
    }
    std::printf("threads: %d\n", omp_get_max_threads());
    return 0;
}
