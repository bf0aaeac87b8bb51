#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "dice/graph.hpp"
#include "dice/rng.hpp"

namespace dice {

enum class Polarity { Original, Positive, Negative };
enum class AugKind { PosParallel, PosSeries, NegReplace };

const char* polarity_name(Polarity p);
Polarity polarity_from_name(const std::string& s);
const char* aug_kind_name(AugKind k);
AugKind aug_kind_from_name(const std::string& s);

struct AugStep {
    AugKind kind;
    int target;          // device node index in the pre-step graph
    std::string detail;  // rule identifier, e.g. "series", "c_to_l"
    bool operator==(const AugStep&) const = default;
};

struct AugmentedSample {
    std::string id;
    std::string origin_id;
    CircuitGraph graph;
    std::vector<AugStep> chain;
    Polarity polarity = Polarity::Original;
};

// Duplicate a random device in parallel or in series. The result has exactly
// one extra device node of the target's type (plus one net node for series)
// and satisfies all CircuitGraph invariants.
CircuitGraph augment_positive(const CircuitGraph& graph, Rng& rng, AugStep* step = nullptr);

// Replace a random device subgraph by its functionality-inverting
// counterpart: C<->L, R->C|L, I->R, and MOS -> original plus counterpart-type
// transistors in parallel and in series.
CircuitGraph augment_negative(const CircuitGraph& graph, Rng& rng, AugStep* step = nullptr);

enum class Relation { Positive, Negative, NonEqual };

// Pair taxonomy over a sample set: shared origin with non-negative polarities
// is Positive, shared origin with at least one Negative polarity is Negative,
// distinct origins are NonEqual.
class RelationIndex {
public:
    void add(std::string origin_id, Polarity polarity);
    std::size_t size() const { return origin_.size(); }
    Relation relation(std::size_t i, std::size_t j) const;
    const std::string& origin(std::size_t i) const { return origin_[i]; }
    Polarity polarity(std::size_t i) const { return polarity_[i]; }

private:
    std::vector<std::string> origin_;
    std::vector<Polarity> polarity_;
    std::vector<int> origin_code_;  // interned origin ids for O(1) comparison
    std::unordered_map<std::string, int> interner_;
};

RelationIndex build_relation_index(const std::vector<AugmentedSample>& samples);

// Per origin circuit: the original, n_pos positive chains (1..max_chain
// steps) and n_neg negatives (0..max_chain-1 positive steps then one
// negative). Deterministic given the seed, independent per origin.
std::vector<AugmentedSample> generate_dataset(const std::vector<CircuitGraph>& corpus,
                                              int n_pos, int n_neg, int max_chain,
                                              std::uint64_t seed);

// Dataset directory layout: manifest.json plus graphs/<id>.json files.
void write_dataset(const std::string& dir, const std::vector<AugmentedSample>& samples);
std::vector<AugmentedSample> read_dataset(const std::string& dir);

}  // namespace dice
