// forgelab: record, verify, forge, and analyze proof-of-learning logs.
//
// All machine-readable output is a single JSON document on stdout; human
// summaries go to stderr. Exit codes: 0 success/pass, 1 semantic fail,
// 2 usage or environment error.

#include <omp.h>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "forgelab/bounds.hpp"
#include "forgelab/forge.hpp"
#include "forgelab/oracle.hpp"
#include "forgelab/pol.hpp"
#include "forgelab/report.hpp"
#include "json.hpp"

using namespace forgelab;
using nlohmann::json;

namespace {

struct GlobalOpts {
    uint64_t seed = 1;
    int threads = 0;  // 0 = library default
    std::string float_width = "f64";

    FloatWidth width() const {
        return float_width == "f32" ? FloatWidth::F32 : FloatWidth::F64;
    }
};

double now_s() {
    using clock = std::chrono::steady_clock;
    return std::chrono::duration<double>(clock::now().time_since_epoch()).count();
}

// Resolves a data file: as given, else under $FORGELAB_DATA_DIR.
std::string resolve_path(const std::string& path) {
    namespace fs = std::filesystem;
    if (fs::exists(path)) return path;
    if (const char* root = std::getenv("FORGELAB_DATA_DIR")) {
        const fs::path alt = fs::path(root) / path;
        if (fs::exists(alt)) return alt.string();
    }
    return path;  // let the loader produce the error naming this path
}

struct DataOpts {
    std::string images, labels;
    std::string synthetic;  // "dim,classes,count[,variance]"

    void attach(CLI::App* cmd) {
        cmd->add_option("--images", images, "IDX image file (or under FORGELAB_DATA_DIR)");
        cmd->add_option("--labels", labels, "IDX label file");
        cmd->add_option("--synthetic", synthetic,
                        "synthetic dataset: dim,classes,count[,variance]");
    }

    data::Dataset load(uint64_t seed) const {
        if (!synthetic.empty()) {
            std::vector<double> f;
            std::stringstream ss(synthetic);
            std::string tok;
            while (std::getline(ss, tok, ',')) f.push_back(std::stod(tok));
            if (f.size() < 3 || f.size() > 4)
                throw InvalidArgument("--synthetic expects dim,classes,count[,variance]");
            const double var = f.size() == 4 ? f[3] : 0.05;
            auto dist = data::DistributionSpec::make_default(int(f[0]), int(f[1]), var,
                                                             seed);
            return data::sample_synthetic(dist, size_t(f[2]));
        }
        if (images.empty() || labels.empty())
            throw InvalidArgument("provide --images/--labels or --synthetic");
        return data::load_idx(resolve_path(images), resolve_path(labels));
    }
};

// "mlp:784-64-10[:relu|tanh]" or "cnn".
nn::ModelSpec parse_model(const std::string& text) {
    nn::ModelSpec spec;
    if (text == "cnn" || text.rfind("cnn", 0) == 0) {
        spec.kind = nn::ModelKind::Cnn;
        spec.input_dim = 28 * 28;
        spec.output_dim = 10;
        return spec;
    }
    if (text.rfind("mlp:", 0) != 0)
        throw InvalidArgument("model must be 'mlp:IN-H1-...-OUT[:relu|tanh]' or 'cnn'");
    std::string dims = text.substr(4), act;
    if (const auto colon = dims.find(':'); colon != std::string::npos) {
        act = dims.substr(colon + 1);
        dims = dims.substr(0, colon);
    }
    std::vector<int> layers;
    std::stringstream ss(dims);
    std::string tok;
    while (std::getline(ss, tok, '-')) layers.push_back(std::stoi(tok));
    if (layers.size() < 2) throw InvalidArgument("model needs input and output dims");
    spec.input_dim = layers.front();
    spec.output_dim = layers.back();
    spec.hidden.assign(layers.begin() + 1, layers.end() - 1);
    if (!act.empty()) spec.activation = nn::activation_from_string(act);
    return spec;
}

std::vector<uint32_t> parse_index_list(const std::string& text) {
    std::vector<uint32_t> out;
    std::stringstream ss(text);
    std::string tok;
    while (std::getline(ss, tok, ',')) out.push_back(uint32_t(std::stoul(tok)));
    return out;
}

void emit(const json& doc) { std::cout << doc.dump(2) << "\n"; }

// ---------------------------------------------------------------------------

int cmd_train(const GlobalOpts& g, const DataOpts& d, const std::string& model,
              double eta, uint32_t batch, size_t steps, const std::string& out) {
    const auto ds = d.load(g.seed);
    const auto spec = parse_model(model);
    nn::UpdateRule rule{eta, batch};
    const auto log = pol::record_training(spec, ds, rule, steps, g.seed, g.width());
    pol::save_log(log, out);

    json doc;
    doc["command"] = "train";
    doc["log_path"] = out;
    doc["dataset_commitment"] = log.dataset_commitment;
    doc["steps"] = log.steps();
    doc["param_count"] = spec.param_count();
    doc["float_width"] = g.float_width;
    double final_norm = 0.0;
    for (double v : log.final_w) final_norm += v * v;
    doc["final_w_l2"] = std::sqrt(final_norm);
    emit(doc);
    std::cerr << "trained " << steps << " steps; log -> " << out
              << "\ncommitment " << log.dataset_commitment << "\n";
    return 0;
}

int cmd_verify(const GlobalOpts& g, const DataOpts& d, const std::string& log_path,
               double epsilon, const std::string& metric, bool allow_mismatch) {
    const auto log = pol::load_log(log_path);
    const auto ds = d.load(g.seed);
    const MetricKind m = metric == "linf" ? MetricKind::Linf : MetricKind::L2;
    const auto rep = pol::verify(log, ds, m, epsilon, allow_mismatch);
    std::cout << rep.to_json() << "\n";
    std::cerr << (rep.pass ? "PASS" : "FAIL") << " max_error=" << rep.max_error
              << " smallest_passing_epsilon=" << rep.smallest_passing_epsilon()
              << "\n";
    return rep.pass ? 0 : 1;
}

int cmd_forge(const GlobalOpts& g, const DataOpts& d, const std::string& log_path,
              const std::string& exclude, uint32_t pool, uint32_t candidates,
              uint32_t greedy, const std::string& scope, const std::string& out,
              const std::string& sidecar, uint32_t subset) {
    const auto log = pol::load_log(log_path);
    const auto ds = d.load(g.seed);
    forge::ForgeConfig cfg;
    cfg.excluded = parse_index_list(exclude);
    cfg.pool_size = pool;
    cfg.candidate_count = candidates;
    cfg.greedy_rounds = greedy;
    cfg.seed = g.seed;
    cfg.scope = scope == "all" ? forge::Scope::AllSteps
                               : forge::Scope::StepsContainingExcluded;

    const auto fl = subset ? forge::subset_forge(log, subset, cfg, ds)
                           : forge::forge_log(log, cfg, ds);
    forge::save_forged(fl, out, sidecar.empty() ? out + ".json" : sidecar);

    json doc = json::parse(fl.sidecar_json());
    doc["command"] = "forge";
    doc["log_path"] = out;
    doc["substituted_step_count"] = fl.substituted_steps.size();
    emit(doc);
    std::cerr << "mu=" << fl.substituted_steps.size()
              << " max_error=" << fl.max_error
              << " update_evaluations=" << fl.update_evaluations << "\n";
    return 0;
}

int cmd_bound(const GlobalOpts& g, double sigma2, bool estimate, int est_dim,
              double est_eta, double est_offset, size_t est_samples, uint64_t b,
              double eps, uint64_t n, uint64_t m, uint64_t alpha) {
    bounds::BoundInputs in;
    in.batch_size = b;
    in.epsilon = eps;
    in.forger_batches = n;
    in.max_log_length = m;
    in.log_count = alpha;

    json doc;
    doc["command"] = "bound";
    std::optional<double> se;
    if (estimate) {
        bounds::LinearGaussianTask task;
        task.eta = est_eta;
        task.w_star.assign(size_t(est_dim), 0.0);
        Params w(size_t(est_dim), est_offset);
        const auto est = bounds::estimate_sigma2(task.update_fn(), task.sampler(), w,
                                                 est_samples, g.seed);
        in.sigma2_max = est.trace_cov;
        se = est.se;
        doc["sigma2_estimate"] = est.trace_cov;
        doc["sigma2_se"] = est.se;
        doc["sigma2_analytic"] = task.analytic_trace_cov(w);
        doc["estimate_samples"] = est_samples;
    } else {
        in.sigma2_max = sigma2;
    }
    const auto rep = bounds::make_report(in, se);
    doc["report"] = json::parse(rep.to_json());
    emit(doc);
    std::cerr << "r=" << rep.r << " bound=" << rep.bound
              << (rep.vacuous ? " (vacuous regime)" : "") << "\n";
    return 0;
}

int cmd_oracle(const GlobalOpts& g, size_t systems, size_t triples) {
    size_t theorem_failures = 0, equivalence_failures = 0, positives = 0;
    for (uint64_t s = 0; s < systems; ++s) {
        const auto sys = oracle::ToySystem::random(derive_seed(g.seed, s));
        const auto d1 = oracle::random_dataset(sys, derive_seed(g.seed, 3 * s + 1));
        const auto d2 = oracle::random_dataset(sys, derive_seed(g.seed, 3 * s + 2));
        const auto v = oracle::check_theorem1(sys, d1, d2);
        if (!v.biconditional_holds || !v.lemma1_holds) ++theorem_failures;
        if (v.forgeable_both_ways) ++positives;
    }
    for (uint64_t s = 0; s < triples; ++s) {
        const auto sys = oracle::ToySystem::random(derive_seed(g.seed, 1000000 + s));
        std::vector<std::vector<uint32_t>> ds;
        for (uint64_t k = 0; k < 3; ++k)
            ds.push_back(
                oracle::random_dataset(sys, derive_seed(g.seed, 7 * s + 100 + k)));
        if (!oracle::check_equivalence_relation(sys, ds).pass) ++equivalence_failures;
    }
    json doc;
    doc["command"] = "oracle";
    doc["systems"] = systems;
    doc["triples"] = triples;
    doc["theorem1_failures"] = theorem_failures;
    doc["equivalence_failures"] = equivalence_failures;
    doc["positive_cases"] = positives;
    emit(doc);
    std::cerr << "theorem1 failures: " << theorem_failures
              << ", equivalence failures: " << equivalence_failures << "\n";
    return (theorem_failures || equivalence_failures) ? 1 : 0;
}

// ---------------------------------------------------------------------------
// Sweeps: config-driven experiment grids, one CSV + one SVG per axis.

struct SweepTask {
    data::Dataset ds;
    nn::ModelSpec spec;
    nn::UpdateRule rule;
    size_t steps = 10;
    pol::PolLog log;
};

SweepTask sweep_task_from(const json& cfg, uint64_t seed, FloatWidth width) {
    SweepTask t;
    const auto& task = cfg.at("task");
    const auto syn = task.at("synthetic");
    auto dist = data::DistributionSpec::make_default(
        syn.at("dim").get<int>(), syn.at("classes").get<int>(),
        syn.value("variance", 0.05), seed);
    t.ds = data::sample_synthetic(dist, syn.at("count").get<size_t>());
    t.spec = parse_model(task.at("model").get<std::string>());
    t.rule = nn::UpdateRule{task.value("eta", 0.01), task.value("batch", 32u)};
    t.steps = task.value("steps", size_t(10));
    t.log = pol::record_training(t.spec, t.ds, t.rule, t.steps, seed, width);
    return t;
}

struct TrialOutcome {
    double error = 0.0;
    double baseline = 0.0;
};

// One forged step on a middle checkpoint of the recorded log, plus the
// unselected control at the same budget.
TrialOutcome run_trial(const SweepTask& t, forge::ForgeConfig cfg, FloatWidth width,
                       uint64_t trial_seed) {
    const size_t i = t.log.steps() / 2;
    const auto& e = t.log.entries[i];
    nn::UpdateRule rule = e.rule;
    rule.batch_size = cfg.effective_batch(rule.batch_size);
    // Honest target for the trial's batch size.
    Xoshiro256 brng(derive_seed(trial_seed, 17));
    data::Minibatch target;
    {
        auto picks = sample_without_replacement(brng, uint32_t(t.ds.size()),
                                                rule.batch_size);
        target.indices = picks;
    }
    const Params w_next =
        nn::batch_update(t.spec, e.checkpoint_before, rule, target, t.ds, width);
    cfg.seed = trial_seed;
    auto res = forge::forge_step(t.spec, rule, width, e.checkpoint_before, w_next,
                                 t.ds, cfg, derive_seed(trial_seed, 1));
    if (cfg.greedy_rounds > 0)
        res = forge::greedy_refine(t.spec, rule, width, e.checkpoint_before, w_next,
                                   res.forged_batch, t.ds, cfg,
                                   derive_seed(trial_seed, 2));
    const auto base =
        forge::baseline_error(t.spec, rule, width, e.checkpoint_before, w_next, t.ds,
                              cfg, 32, derive_seed(trial_seed, 3));
    return {res.achieved_error_l2, base.median};
}

int cmd_sweep(const GlobalOpts& g, const std::string& config_path,
              const std::string& out_dir) {
    std::ifstream in(config_path);
    if (!in) throw IoError("cannot open sweep config: " + config_path);
    json cfg;
    try {
        cfg = json::parse(in);
    } catch (const json::exception& e) {
        throw FormatError(std::string("sweep config: ") + e.what());
    }
    std::filesystem::create_directories(out_dir);

    const auto t = sweep_task_from(cfg, g.seed, g.width());
    const auto& fj = cfg.at("forge");
    forge::ForgeConfig base_cfg;
    base_cfg.excluded = fj.value("exclude", std::vector<uint32_t>{0});
    base_cfg.pool_size = fj.value("pool", uint32_t(t.ds.size() / 2));
    base_cfg.candidate_count = fj.value("candidates", 64u);
    base_cfg.greedy_rounds = fj.value("greedy", 0u);
    const size_t trials = cfg.value("trials", size_t(10));

    const auto& axes = cfg.at("axes");
    if (!axes.is_object() || axes.empty())
        throw InvalidArgument("sweep config: axes must be a non-empty object");

    bool any_failed = false;
    json doc;
    doc["command"] = "sweep";
    for (const auto& [axis, values] : axes.items()) {
        std::vector<report::SweepRow> rows;
        std::string error_text;
        try {
            for (const auto& vj : values) {
                const double v = vj.get<double>();
                forge::ForgeConfig cfg_v = base_cfg;
                if (axis == "batch") cfg_v.batch_size = uint32_t(v);
                else if (axis == "pool") cfg_v.pool_size = uint32_t(v);
                else if (axis == "greedy") cfg_v.greedy_rounds = uint32_t(v);
                else if (axis == "candidates") cfg_v.candidate_count = uint32_t(v);
                else throw InvalidArgument("unknown sweep axis: " + axis);
                for (size_t trial = 0; trial < trials; ++trial) {
                    const double t0 = now_s();
                    const auto out = run_trial(
                        t, cfg_v, g.width(),
                        derive_seed(g.seed, uint64_t(v * 1000) * 1315423911ULL + trial));
                    rows.push_back({v, trial, out.error, out.baseline, now_s() - t0});
                }
            }
        } catch (const Error& e) {
            any_failed = true;
            error_text = e.what();
        }
        // Flush whatever completed, even on partial failure.
        const std::string csv = out_dir + "/sweep_" + axis + ".csv";
        const std::string svg = out_dir + "/sweep_" + axis + ".svg";
        report::write_sweep_csv(csv, axis, rows);
        std::vector<std::pair<double, double>> med, basepts;
        for (size_t i = 0; i < rows.size();) {
            size_t j = i;
            std::vector<double> errs, bases;
            while (j < rows.size() && rows[j].axis == rows[i].axis) {
                errs.push_back(rows[j].error);
                bases.push_back(rows[j].baseline);
                ++j;
            }
            std::sort(errs.begin(), errs.end());
            std::sort(bases.begin(), bases.end());
            med.emplace_back(rows[i].axis, errs[errs.size() / 2]);
            basepts.emplace_back(rows[i].axis, bases[bases.size() / 2]);
            i = j;
        }
        report::ChartSpec cs;
        cs.title = "forging error vs " + axis;
        cs.x_label = axis;
        cs.y_label = "l2 error";
        report::write_svg_chart(svg, cs,
                                {{"forged", med, "#1f6fb2", true, true},
                                 {"baseline", basepts, "#c0392b", true, true}});
        json axis_doc;
        axis_doc["csv"] = csv;
        axis_doc["svg"] = svg;
        axis_doc["rows"] = rows.size();
        if (!error_text.empty()) axis_doc["error"] = error_text;
        doc["axes"][axis] = axis_doc;
        std::cerr << "axis " << axis << ": " << rows.size() << " rows -> " << csv
                  << (error_text.empty() ? "" : " (partial: " + error_text + ")")
                  << "\n";
    }
    emit(doc);
    return any_failed ? 1 : 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"proof-of-learning forging toolkit"};
    app.require_subcommand(1);

    GlobalOpts g;
    app.add_option("--seed", g.seed, "master PRNG seed")->capture_default_str();
    app.add_option("--threads", g.threads, "worker thread cap (0 = default)");
    app.add_option("--float-width", g.float_width, "f32 or f64")
        ->check(CLI::IsMember({"f32", "f64"}));

    // train
    auto* train = app.add_subcommand("train", "record an honest training log");
    DataOpts train_data;
    train_data.attach(train);
    std::string model = "mlp:16-8-4", out = "log.frgl";
    double eta = 0.01;
    uint32_t batch = 32;
    size_t steps = 10;
    train->add_option("--model", model, "mlp:IN-H-OUT[:act] or cnn");
    train->add_option("--eta", eta, "learning rate");
    train->add_option("--batch", batch, "minibatch size");
    train->add_option("--steps", steps, "training steps");
    train->add_option("--out", out, "output log path");

    // verify
    auto* verify = app.add_subcommand("verify", "replay and check a log");
    DataOpts verify_data;
    verify_data.attach(verify);
    std::string vlog, metric = "l2";
    double epsilon = 0.0;
    bool allow_mismatch = false;
    verify->add_option("--log", vlog, "log file")->required();
    verify->add_option("--epsilon", epsilon, "verification tolerance");
    verify->add_option("--metric", metric, "l2 or linf")
        ->check(CLI::IsMember({"l2", "linf"}));
    verify->add_flag("--allow-commitment-mismatch", allow_mismatch,
                     "verify against a dataset other than the committed one");

    // forge
    auto* forge_cmd = app.add_subcommand("forge", "substitute excluded points");
    DataOpts forge_data;
    forge_data.attach(forge_cmd);
    std::string flog, exclude, scope = "touched", fout = "forged.frgl", sidecar;
    uint32_t pool = 0, candidates = 64, greedy = 0, subset = 0;
    forge_cmd->add_option("--log", flog, "source log")->required();
    forge_cmd->add_option("--exclude", exclude, "indices to remove, comma separated")
        ->required();
    forge_cmd->add_option("--pool", pool, "candidate pool size n (0 = full)");
    forge_cmd->add_option("--candidates", candidates, "candidate batches M");
    forge_cmd->add_option("--greedy", greedy, "greedy refinement rounds T");
    forge_cmd->add_option("--scope", scope, "touched or all")
        ->check(CLI::IsMember({"touched", "all"}));
    forge_cmd->add_option("--subset", subset, "lock the pool to one subset this big");
    forge_cmd->add_option("--out", fout, "forged log path");
    forge_cmd->add_option("--sidecar", sidecar, "sidecar json path");

    // bound
    auto* bound = app.add_subcommand("bound", "probabilistic forging bound");
    double sigma2 = 0.0;
    bool estimate = false;
    int est_dim = 8;
    double est_eta = 0.01, est_offset = 1.0;
    size_t est_samples = 100000;
    uint64_t bb = 32, bn = 1, bm = 1, balpha = 1;
    double beps = 0.1;
    bound->add_option("--sigma2", sigma2, "sigma^2_max (exact input)");
    bound->add_flag("--estimate", estimate,
                    "estimate sigma^2 on the synthetic linear task instead");
    bound->add_option("--estimate-dim", est_dim, "linear task dimension");
    bound->add_option("--estimate-eta", est_eta, "linear task learning rate");
    bound->add_option("--estimate-offset", est_offset, "w - w* per-coordinate offset");
    bound->add_option("--estimate-samples", est_samples, "Monte Carlo samples");
    bound->add_option("--batch", bb, "batch size b");
    bound->add_option("--epsilon", beps, "tolerance");
    bound->add_option("--n", bn, "forger batches per step");
    bound->add_option("--m", bm, "longest log length");
    bound->add_option("--alpha", balpha, "number of logs");

    // sweep
    auto* sweep = app.add_subcommand("sweep", "experiment grids -> CSV + SVG");
    std::string sweep_config, sweep_out = "sweeps";
    sweep->add_option("--config", sweep_config, "sweep config json")->required();
    sweep->add_option("--out-dir", sweep_out, "output directory");

    // oracle
    auto* orc = app.add_subcommand("oracle", "discrete forgeability theory checks");
    size_t systems = 200, triples = 50;
    orc->add_option("--systems", systems, "random systems for the theorem check");
    orc->add_option("--triples", triples, "random triples for the equivalence check");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    }

    if (g.threads > 0) omp_set_num_threads(g.threads);

    try {
        if (*train)
            return cmd_train(g, train_data, model, eta, batch, steps, out);
        if (*verify)
            return cmd_verify(g, verify_data, vlog, epsilon, metric, allow_mismatch);
        if (*forge_cmd)
            return cmd_forge(g, forge_data, flog, exclude, pool, candidates, greedy,
                             scope, fout, sidecar, subset);
        if (*bound)
            return cmd_bound(g, sigma2, estimate, est_dim, est_eta, est_offset,
                             est_samples, bb, beps, bn, bm, balpha);
        if (*sweep) return cmd_sweep(g, sweep_config, sweep_out);
        if (*orc) return cmd_oracle(g, systems, triples);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 2;
}
