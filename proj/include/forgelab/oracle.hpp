#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "forgelab/common.hpp"

namespace forgelab::oracle {

// A finite discrete training system: integer-vector parameters in the box
// [-magnitude, magnitude]^dim, a small input alphabet (symbols 0..k-1), a
// total update table, and the l-inf metric. Small enough that every log up
// to length max_len can be enumerated, which makes epsilon = 0 forgeability
// exactly decidable.
struct ToySystem {
    int dim = 1;        // <= 3
    int magnitude = 1;  // box half-width
    int alphabet_size = 2;  // <= 6
    // update_table[param_index][symbol] = successor param_index.
    std::vector<std::vector<uint32_t>> update_table;
    uint32_t w0_index = 0;
    int max_len = 3;  // m <= 6

    // The enumerated box, index <-> vector; lexicographic order.
    std::vector<std::vector<int>> param_domain() const;
    size_t domain_size() const;
    uint32_t index_of(const std::vector<int>& w) const;

    void validate() const;
    std::string to_json() const;
    static ToySystem from_json(const std::string& text);

    // Random total tables; with some probability symbols are aliased
    // (identical columns) so that positive forgeability cases occur.
    static ToySystem random(uint64_t seed);

    // g(w, x) = w + value(x), clamped into the box; dim 1.
    // alphabet_values[i] is the integer the i-th symbol adds.
    static ToySystem additive(int magnitude, const std::vector<int>& alphabet_values,
                              int w0, int max_len);
};

// One valid (g, d, 0) log: w0, then (input, successor) pairs.
struct ToyLog {
    std::vector<uint32_t> inputs;  // length L
    std::vector<uint32_t> params;  // length L + 1, params[0] = w0
};

struct LogSet {
    std::vector<ToyLog> logs;  // all lengths 0..m, lexicographic by inputs
    std::set<std::vector<uint32_t>> param_sequences;
    std::set<uint32_t> reachable;  // all parameters appearing in any log

    size_t count() const { return logs.size(); }
};

// Exhaustive enumeration of every valid log from w0 with inputs drawn from
// D (a set of symbols), up to length max_len.
LogSet enumerate_logs(const ToySystem& sys, const std::vector<uint32_t>& D);

// Witness of a forging map: for each (param_index, symbol) step that occurs
// in some log of D, one substitute symbol from D_prime.
using Witness = std::map<std::pair<uint32_t, uint32_t>, uint32_t>;

struct ForgingDecision {
    bool exists = false;
    Witness witness;  // complete iff exists
    // First unsubstitutable step when !exists.
    std::optional<std::pair<uint32_t, uint32_t>> blocking_step;
};

// Does a forging map D -> D_prime at tolerance epsilon exist? Decided by
// checking every step of every log of D for a substitute in D_prime.
ForgingDecision forging_map_exists(const ToySystem& sys,
                                   const std::vector<uint32_t>& D,
                                   const std::vector<uint32_t>& D_prime, int epsilon);

struct Theorem1Verdict {
    bool forgeable_both_ways = false;       // lhs at epsilon = 0
    bool param_sequences_equal = false;     // rhs: H_D(W) = H_D'(W) as sequences
    bool reachable_sets_equal = false;      // Lemma 1 granularity
    bool biconditional_holds = false;       // lhs == rhs (sequences)
    bool lemma1_holds = false;              // lhs implies reachable equality
    std::optional<std::vector<uint32_t>> counterexample_sequence;
    std::string to_json() const;
};

Theorem1Verdict check_theorem1(const ToySystem& sys, const std::vector<uint32_t>& D,
                               const std::vector<uint32_t>& D_prime);

struct EquivalenceVerdict {
    bool reflexive = false;
    bool symmetric = false;
    bool transitive = false;
    bool pass = false;
    std::string detail;  // human-readable description of the first violation
};

// Reflexivity / symmetry / transitivity of epsilon = 0 forgeability over
// every pair and triple of the given datasets.
EquivalenceVerdict check_equivalence_relation(
    const ToySystem& sys, const std::vector<std::vector<uint32_t>>& datasets);

// Uniformly random nonempty subset of the system's alphabet.
std::vector<uint32_t> random_dataset(const ToySystem& sys, uint64_t seed);

}  // namespace forgelab::oracle
