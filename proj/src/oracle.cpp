#include "forgelab/oracle.hpp"

#include <algorithm>
#include <cmath>

#include "forgelab/prng.hpp"
#include "json.hpp"

namespace forgelab::oracle {

using nlohmann::json;

namespace {

constexpr size_t kMaxLogs = 200000;

std::vector<uint32_t> sorted_unique(std::vector<uint32_t> v) {
    std::sort(v.begin(), v.end());
    v.erase(std::unique(v.begin(), v.end()), v.end());
    return v;
}

void validate_subset(const ToySystem& sys, const std::vector<uint32_t>& D,
                     const char* name) {
    if (D.empty()) throw InvalidArgument(std::string(name) + " is empty");
    for (uint32_t x : D)
        if (x >= uint32_t(sys.alphabet_size))
            throw InvalidArgument(std::string(name) + " contains a foreign symbol");
}

// Parameters reachable from w0 in fewer than max_len steps using inputs
// from D; exactly the set of (w, x) step origins across all logs.
std::set<uint32_t> reachable_origins(const ToySystem& sys,
                                     const std::vector<uint32_t>& D) {
    std::set<uint32_t> seen = {sys.w0_index};
    std::vector<uint32_t> frontier = {sys.w0_index};
    for (int depth = 1; depth < sys.max_len; ++depth) {
        std::vector<uint32_t> next;
        for (uint32_t w : frontier)
            for (uint32_t x : D) {
                const uint32_t w2 = sys.update_table[w][x];
                if (seen.insert(w2).second) next.push_back(w2);
            }
        frontier = std::move(next);
    }
    return seen;
}

int linf(const std::vector<int>& a, const std::vector<int>& b) {
    int d = 0;
    for (size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a[i] - b[i]));
    return d;
}

}  // namespace

std::vector<std::vector<int>> ToySystem::param_domain() const {
    const int side = 2 * magnitude + 1;
    std::vector<std::vector<int>> out;
    out.reserve(domain_size());
    std::vector<int> w(size_t(dim), -magnitude);
    while (true) {
        out.push_back(w);
        int i = dim - 1;
        while (i >= 0) {
            if (++w[size_t(i)] <= magnitude) break;
            w[size_t(i)] = -magnitude;
            --i;
        }
        if (i < 0) break;
    }
    (void)side;
    return out;
}

size_t ToySystem::domain_size() const {
    size_t n = 1;
    for (int i = 0; i < dim; ++i) n *= size_t(2 * magnitude + 1);
    return n;
}

uint32_t ToySystem::index_of(const std::vector<int>& w) const {
    if (w.size() != size_t(dim)) throw InvalidArgument("index_of: wrong dimension");
    uint32_t idx = 0;
    for (int i = 0; i < dim; ++i) {
        const int c = w[size_t(i)];
        if (c < -magnitude || c > magnitude)
            throw InvalidArgument("index_of: coordinate outside the box");
        idx = idx * uint32_t(2 * magnitude + 1) + uint32_t(c + magnitude);
    }
    return idx;
}

void ToySystem::validate() const {
    if (dim < 1 || dim > 3) throw SizeError("ToySystem: dim must be 1..3");
    if (magnitude < 0 || magnitude > 8)
        throw SizeError("ToySystem: magnitude must be 0..8");
    if (alphabet_size < 1 || alphabet_size > 6)
        throw SizeError("ToySystem: alphabet_size must be 1..6");
    if (max_len < 1 || max_len > 6) throw SizeError("ToySystem: max_len must be 1..6");
    const size_t n = domain_size();
    if (w0_index >= n) throw InvalidArgument("ToySystem: w0 outside the domain");
    if (update_table.size() != n)
        throw InvalidArgument("ToySystem: update table has wrong row count");
    for (const auto& row : update_table) {
        if (row.size() != size_t(alphabet_size))
            throw InvalidArgument("ToySystem: update table row has wrong width");
        for (uint32_t v : row)
            if (v >= n) throw InvalidArgument("ToySystem: update leaves the domain");
    }
    size_t logs = 1, pow = 1;
    for (int k = 0; k < max_len; ++k) {
        pow *= size_t(alphabet_size);
        logs += pow;
        if (logs > kMaxLogs) throw SizeError("ToySystem: enumeration too large");
    }
}

std::string ToySystem::to_json() const {
    json j;
    j["dim"] = dim;
    j["magnitude"] = magnitude;
    j["alphabet_size"] = alphabet_size;
    j["update_table"] = update_table;
    j["w0_index"] = w0_index;
    j["max_len"] = max_len;
    return j.dump();
}

ToySystem ToySystem::from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw FormatError(std::string("ToySystem: bad json: ") + e.what());
    }
    ToySystem sys;
    try {
        sys.dim = j.at("dim").get<int>();
        sys.magnitude = j.at("magnitude").get<int>();
        sys.alphabet_size = j.at("alphabet_size").get<int>();
        sys.update_table = j.at("update_table").get<std::vector<std::vector<uint32_t>>>();
        sys.w0_index = j.at("w0_index").get<uint32_t>();
        sys.max_len = j.at("max_len").get<int>();
    } catch (const json::exception& e) {
        throw FormatError(std::string("ToySystem: missing field: ") + e.what());
    }
    sys.validate();
    return sys;
}

ToySystem ToySystem::random(uint64_t seed) {
    Xoshiro256 rng(seed);
    ToySystem sys;
    sys.dim = 1 + int(rng.below(3));
    sys.magnitude = 1 + int(rng.below(2));
    sys.alphabet_size = 2 + int(rng.below(5));
    sys.max_len = 1 + int(rng.below(6));
    const size_t n = sys.domain_size();
    sys.w0_index = uint32_t(rng.below(n));

    // Half the time draw fewer distinct behaviors than symbols; the aliased
    // symbols make positively-forgeable dataset pairs common.
    const int behaviors = rng.below(2) == 0
                              ? sys.alphabet_size
                              : 1 + int(rng.below(uint64_t(sys.alphabet_size)));
    std::vector<std::vector<uint32_t>> columns;
    columns.assign(size_t(behaviors), std::vector<uint32_t>(n, 0));
    for (auto& col : columns)
        for (uint32_t& v : col) v = uint32_t(rng.below(n));
    std::vector<size_t> assign(size_t(sys.alphabet_size));
    for (size_t x = 0; x < assign.size(); ++x)
        assign[x] = size_t(rng.below(uint64_t(behaviors)));

    sys.update_table.assign(n, std::vector<uint32_t>(size_t(sys.alphabet_size)));
    for (size_t w = 0; w < n; ++w)
        for (size_t x = 0; x < size_t(sys.alphabet_size); ++x)
            sys.update_table[w][x] = columns[assign[x]][w];
    sys.validate();
    return sys;
}

ToySystem ToySystem::additive(int magnitude, const std::vector<int>& alphabet_values,
                              int w0, int max_len) {
    ToySystem sys;
    sys.dim = 1;
    sys.magnitude = magnitude;
    sys.alphabet_size = int(alphabet_values.size());
    sys.max_len = max_len;
    sys.w0_index = sys.index_of({w0});
    const size_t n = sys.domain_size();
    sys.update_table.assign(n, std::vector<uint32_t>(alphabet_values.size()));
    for (size_t w = 0; w < n; ++w) {
        const int value = int(w) - magnitude;
        for (size_t x = 0; x < alphabet_values.size(); ++x) {
            const int next =
                std::clamp(value + alphabet_values[x], -magnitude, magnitude);
            sys.update_table[w][x] = uint32_t(next + magnitude);
        }
    }
    sys.validate();
    return sys;
}

LogSet enumerate_logs(const ToySystem& sys, const std::vector<uint32_t>& D_in) {
    sys.validate();
    validate_subset(sys, D_in, "D");
    const auto D = sorted_unique(D_in);

    size_t total = 1, pow = 1;
    for (int k = 0; k < sys.max_len; ++k) {
        pow *= D.size();
        total += pow;
        if (total > kMaxLogs) throw SizeError("enumerate_logs: too many logs");
    }

    LogSet out;
    out.logs.reserve(total);
    ToyLog cur;
    cur.params = {sys.w0_index};
    // Depth-first in symbol order = shorter-prefix-first, lexicographic by
    // input sequence; every prefix precedes its extensions.
    struct Rec {
        const ToySystem& sys;
        const std::vector<uint32_t>& D;
        LogSet& out;
        ToyLog& cur;
        void operator()() {
            out.logs.push_back(cur);
            out.param_sequences.insert(cur.params);
            for (uint32_t w : cur.params) out.reachable.insert(w);
            if (int(cur.inputs.size()) >= sys.max_len) return;
            for (uint32_t x : D) {
                cur.inputs.push_back(x);
                cur.params.push_back(sys.update_table[cur.params.back()][x]);
                (*this)();
                cur.inputs.pop_back();
                cur.params.pop_back();
            }
        }
    };
    Rec{sys, D, out, cur}();
    return out;
}

ForgingDecision forging_map_exists(const ToySystem& sys,
                                   const std::vector<uint32_t>& D_in,
                                   const std::vector<uint32_t>& Dp_in, int epsilon) {
    sys.validate();
    validate_subset(sys, D_in, "D");
    validate_subset(sys, Dp_in, "D'");
    if (epsilon < 0) throw InvalidArgument("forging_map_exists: epsilon < 0");
    const auto D = sorted_unique(D_in);
    const auto Dp = sorted_unique(Dp_in);
    const auto domain = sys.param_domain();

    ForgingDecision dec;
    dec.exists = true;
    // Step origins (w, x) over all logs = reachable w within max_len - 1
    // steps, crossed with D.
    for (uint32_t w : reachable_origins(sys, D)) {
        for (uint32_t x : D) {
            const uint32_t w_next = sys.update_table[w][x];
            bool found = false;
            for (uint32_t sub : Dp) {
                const uint32_t cand = sys.update_table[w][sub];
                if (linf(domain[w_next], domain[cand]) <= epsilon) {
                    dec.witness[{w, x}] = sub;  // smallest symbol wins
                    found = true;
                    break;
                }
            }
            if (!found) {
                dec.exists = false;
                if (!dec.blocking_step) dec.blocking_step = {{w, x}};
            }
        }
    }
    if (!dec.exists) dec.witness.clear();
    return dec;
}

Theorem1Verdict check_theorem1(const ToySystem& sys, const std::vector<uint32_t>& D,
                               const std::vector<uint32_t>& D_prime) {
    Theorem1Verdict v;
    const auto fwd = forging_map_exists(sys, D, D_prime, 0);
    const auto bwd = forging_map_exists(sys, D_prime, D, 0);
    v.forgeable_both_ways = fwd.exists && bwd.exists;

    const auto logs_d = enumerate_logs(sys, D);
    const auto logs_dp = enumerate_logs(sys, D_prime);
    v.param_sequences_equal = logs_d.param_sequences == logs_dp.param_sequences;
    v.reachable_sets_equal = logs_d.reachable == logs_dp.reachable;
    v.biconditional_holds = v.forgeable_both_ways == v.param_sequences_equal;
    v.lemma1_holds = !v.forgeable_both_ways || v.reachable_sets_equal;

    if (!v.param_sequences_equal) {
        // First sequence in the symmetric difference, set order.
        for (const auto& s : logs_d.param_sequences)
            if (!logs_dp.param_sequences.count(s)) {
                v.counterexample_sequence = s;
                break;
            }
        if (!v.counterexample_sequence)
            for (const auto& s : logs_dp.param_sequences)
                if (!logs_d.param_sequences.count(s)) {
                    v.counterexample_sequence = s;
                    break;
                }
    }
    return v;
}

std::string Theorem1Verdict::to_json() const {
    json j;
    j["forgeable_both_ways"] = forgeable_both_ways;
    j["param_sequences_equal"] = param_sequences_equal;
    j["reachable_sets_equal"] = reachable_sets_equal;
    j["biconditional_holds"] = biconditional_holds;
    j["lemma1_holds"] = lemma1_holds;
    if (counterexample_sequence) j["counterexample_sequence"] = *counterexample_sequence;
    return j.dump();
}

EquivalenceVerdict check_equivalence_relation(
    const ToySystem& sys, const std::vector<std::vector<uint32_t>>& datasets) {
    if (datasets.empty())
        throw InvalidArgument("check_equivalence_relation: no datasets");
    const size_t n = datasets.size();
    auto related = [&](size_t a, size_t b) {
        return forging_map_exists(sys, datasets[a], datasets[b], 0).exists &&
               forging_map_exists(sys, datasets[b], datasets[a], 0).exists;
    };
    std::vector<std::vector<bool>> rel(n, std::vector<bool>(n));
    for (size_t a = 0; a < n; ++a)
        for (size_t b = 0; b < n; ++b) rel[a][b] = related(a, b);

    EquivalenceVerdict v;
    v.reflexive = v.symmetric = v.transitive = true;
    for (size_t a = 0; a < n && v.reflexive; ++a)
        if (!rel[a][a]) {
            v.reflexive = false;
            v.detail = "reflexivity fails at dataset " + std::to_string(a);
        }
    for (size_t a = 0; a < n && v.symmetric; ++a)
        for (size_t b = 0; b < n; ++b)
            if (rel[a][b] != rel[b][a]) {
                v.symmetric = false;
                v.detail = "symmetry fails at pair (" + std::to_string(a) + "," +
                           std::to_string(b) + ")";
                break;
            }
    for (size_t a = 0; a < n && v.transitive; ++a)
        for (size_t b = 0; b < n && v.transitive; ++b)
            for (size_t c = 0; c < n; ++c)
                if (rel[a][b] && rel[b][c] && !rel[a][c]) {
                    v.transitive = false;
                    v.detail = "transitivity fails at triple (" + std::to_string(a) +
                               "," + std::to_string(b) + "," + std::to_string(c) + ")";
                    break;
                }
    v.pass = v.reflexive && v.symmetric && v.transitive;
    return v;
}

std::vector<uint32_t> random_dataset(const ToySystem& sys, uint64_t seed) {
    Xoshiro256 rng(seed);
    std::vector<uint32_t> out;
    for (uint32_t x = 0; x < uint32_t(sys.alphabet_size); ++x)
        if (rng.below(2) == 0) out.push_back(x);
    if (out.empty()) out.push_back(uint32_t(rng.below(uint64_t(sys.alphabet_size))));
    return out;
}

}  // namespace forgelab::oracle
