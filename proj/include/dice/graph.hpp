#pragma once

#include <optional>
#include <string>
#include <vector>

#include "dice/errors.hpp"
#include "dice/netlist.hpp"

namespace dice {

// Node type codes.
enum NodeType : int {
    kGroundNet = 0,
    kPowerNet = 1,
    kOtherNet = 2,
    kCurrentSource = 3,
    kNmosDevice = 4,
    kPmosDevice = 5,
    kResistorDevice = 6,
    kCapacitorDevice = 7,
    kInductorDevice = 8,
};
inline constexpr int kNumNodeTypes = 9;

// Edge type codes. Type 0 (current-flow path) is undirected and stored as two
// opposing arcs; gate/bulk arcs are directed into the MOS node.
enum EdgeType : int {
    kCurrentPath = 0,
    kNmosGate = 1,
    kNmosBulk = 2,
    kPmosGate = 3,
    kPmosBulk = 4,
};
inline constexpr int kNumEdgeTypes = 5;

inline bool is_device_type(int t) { return t >= kCurrentSource && t <= kInductorDevice; }
inline bool is_net_type(int t) { return t >= kGroundNet && t <= kOtherNet; }

struct Arc {
    int src;
    int dst;
    int etype;
    bool operator==(const Arc&) const = default;
};

// Typed homogeneous multigraph over nets and devices. Nodes are ordered nets
// first (netlist order) then devices (netlist order); immutable once built.
struct CircuitGraph {
    std::vector<int> nodes;                        // node type codes
    std::vector<Arc> arcs;                         // both directions of undirected edges
    std::vector<std::optional<double>> device_params;  // per node, set iff device node
    std::string origin;

    int num_nodes() const { return static_cast<int>(nodes.size()); }
    int num_arcs() const { return static_cast<int>(arcs.size()); }
    std::vector<int> device_nodes() const;
    bool weakly_connected() const;

    bool operator==(const CircuitGraph&) const = default;
};

struct BuildOptions {
    bool floating_is_error = false;
};

// Convert a netlist to its typed graph. Voltage supplies are consumed: a
// supply with param > 0 marks its plus net as the power type. Floating
// single-terminal nets produce warnings (or errors per options).
CircuitGraph build_graph(const Netlist& netlist, const BuildOptions& options = {},
                         std::vector<std::string>* warnings = nullptr);

// One-hot initial features: |V|x9 node rows and |E_arcs|x5 edge rows,
// row-major {0,1} values.
struct FeatureInit {
    std::vector<double> node_onehots;  // num_nodes x kNumNodeTypes
    std::vector<double> edge_onehots;  // num_arcs x kNumEdgeTypes
    int num_nodes = 0;
    int num_arcs = 0;
};

FeatureInit init_features(const CircuitGraph& graph);

// JSON round trip. Schema:
//   {"name": str, "nodes": [int], "arcs": [[src,dst,etype]],
//    "params": {"<node_index>": float}, "origin": str}
std::string graph_to_json(const CircuitGraph& graph, const std::string& name = "");
CircuitGraph graph_from_json(const std::string& text);

// Throws the first violated structural invariant (used by tests and the
// augmentor to validate outputs).
void check_graph_invariants(const CircuitGraph& graph);

}  // namespace dice
