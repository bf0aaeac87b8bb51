#include "dice/graph.hpp"

#include <map>
#include <numeric>
#include <unordered_map>
#include <unordered_set>

#include <json.hpp>

namespace dice {

namespace {

int device_node_type(DeviceKind k) {
    switch (k) {
        case DeviceKind::CurrentSource: return kCurrentSource;
        case DeviceKind::Nmos: return kNmosDevice;
        case DeviceKind::Pmos: return kPmosDevice;
        case DeviceKind::Resistor: return kResistorDevice;
        case DeviceKind::Capacitor: return kCapacitorDevice;
        case DeviceKind::Inductor: return kInductorDevice;
        default: throw Error("voltage supplies have no node type");
    }
}

struct UnionFind {
    std::vector<int> parent;
    explicit UnionFind(int n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
    int find(int x) {
        while (parent[x] != x) x = parent[x] = parent[parent[x]];
        return x;
    }
    void unite(int a, int b) { parent[find(a)] = find(b); }
};

}  // namespace

std::vector<int> CircuitGraph::device_nodes() const {
    std::vector<int> out;
    for (int i = 0; i < num_nodes(); ++i) {
        if (is_device_type(nodes[i])) out.push_back(i);
    }
    return out;
}

bool CircuitGraph::weakly_connected() const {
    const int n = num_nodes();
    if (n <= 1) return true;
    UnionFind uf(n);
    for (const auto& a : arcs) uf.unite(a.src, a.dst);
    const int root = uf.find(0);
    for (int i = 1; i < n; ++i) {
        if (uf.find(i) != root) return false;
    }
    return true;
}

CircuitGraph build_graph(const Netlist& netlist, const BuildOptions& options,
                         std::vector<std::string>* warnings) {
    // Power nets come from supplies; minus terminals must sit on ground.
    std::unordered_set<std::string> power_nets;
    for (const auto& d : netlist.devices) {
        if (d.kind != DeviceKind::VoltageSupply) continue;
        if (d.terminals[1] != "0") {
            throw Error("voltage supply " + d.name + " minus terminal must be ground");
        }
        if (d.param > 0.0) power_nets.insert(d.terminals[0]);
    }

    CircuitGraph g;
    g.origin = netlist.name;
    std::unordered_map<std::string, int> net_node;
    for (const auto& net : netlist.nets) {
        int type = kOtherNet;
        if (net == "0") type = kGroundNet;
        else if (power_nets.count(net)) type = kPowerNet;
        net_node[net] = g.num_nodes();
        g.nodes.push_back(type);
        g.device_params.push_back(std::nullopt);
    }

    auto add_path_pair = [&g](int net, int dev) {
        g.arcs.push_back({net, dev, kCurrentPath});
        g.arcs.push_back({dev, net, kCurrentPath});
    };

    for (const auto& d : netlist.devices) {
        if (d.kind == DeviceKind::VoltageSupply) continue;
        const int dev = g.num_nodes();
        g.nodes.push_back(device_node_type(d.kind));
        g.device_params.push_back(d.param);
        if (is_mos(d.kind)) {
            const int drain = net_node.at(d.terminals[0]);
            const int gate = net_node.at(d.terminals[1]);
            const int source = net_node.at(d.terminals[2]);
            const int bulk = net_node.at(d.terminals[3]);
            if (drain == source) throw DegenerateDevice(d.name);
            add_path_pair(drain, dev);  // drain pair first: series augmentation
            add_path_pair(source, dev); // keys off the first current-path arc
            g.arcs.push_back({gate, dev, d.kind == DeviceKind::Nmos ? kNmosGate : kPmosGate});
            g.arcs.push_back({bulk, dev, d.kind == DeviceKind::Nmos ? kNmosBulk : kPmosBulk});
        } else {
            const int a = net_node.at(d.terminals[0]);
            const int b = net_node.at(d.terminals[1]);
            if (a == b) throw DegenerateDevice(d.name);
            add_path_pair(a, dev);
            add_path_pair(b, dev);
        }
    }

    // Floating terminal detection over the raw netlist (supplies included).
    std::unordered_map<std::string, int> refs;
    for (const auto& d : netlist.devices) {
        for (const auto& t : d.terminals) ++refs[t];
    }
    for (const auto& net : netlist.nets) {
        if (refs[net] == 1 && g.nodes[net_node[net]] == kOtherNet) {
            if (options.floating_is_error) throw FloatingTerminal(net);
            if (warnings) warnings->push_back("floating terminal on net '" + net + "'");
        }
    }

    if (!g.weakly_connected()) throw DisconnectedCircuit(netlist.name);
    return g;
}

FeatureInit init_features(const CircuitGraph& graph) {
    FeatureInit f;
    f.num_nodes = graph.num_nodes();
    f.num_arcs = graph.num_arcs();
    f.node_onehots.assign(static_cast<std::size_t>(f.num_nodes) * kNumNodeTypes, 0.0);
    f.edge_onehots.assign(static_cast<std::size_t>(f.num_arcs) * kNumEdgeTypes, 0.0);
    for (int i = 0; i < f.num_nodes; ++i) {
        f.node_onehots[static_cast<std::size_t>(i) * kNumNodeTypes + graph.nodes[i]] = 1.0;
    }
    for (int i = 0; i < f.num_arcs; ++i) {
        f.edge_onehots[static_cast<std::size_t>(i) * kNumEdgeTypes + graph.arcs[i].etype] = 1.0;
    }
    return f;
}

std::string graph_to_json(const CircuitGraph& graph, const std::string& name) {
    nlohmann::json j;
    j["name"] = name;
    j["nodes"] = graph.nodes;
    auto arcs = nlohmann::json::array();
    for (const auto& a : graph.arcs) arcs.push_back({a.src, a.dst, a.etype});
    j["arcs"] = std::move(arcs);
    // Keys sorted numerically by using an ordered map of string node indices.
    auto params = nlohmann::json::object();
    for (int i = 0; i < graph.num_nodes(); ++i) {
        if (graph.device_params[i]) params[std::to_string(i)] = *graph.device_params[i];
    }
    j["params"] = std::move(params);
    j["origin"] = graph.origin;
    return j.dump(2) + "\n";
}

CircuitGraph graph_from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw SchemaError(e.what());
    }
    static const std::unordered_set<std::string> known = {"name", "nodes", "arcs", "params",
                                                          "origin"};
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (!known.count(it.key())) throw SchemaError("unknown field '" + it.key() + "'");
    }
    CircuitGraph g;
    try {
        g.nodes = j.at("nodes").get<std::vector<int>>();
        g.origin = j.value("origin", "");
        for (const auto& arc : j.at("arcs")) {
            if (!arc.is_array() || arc.size() != 3) throw SchemaError("arc must be [src,dst,etype]");
            g.arcs.push_back({arc[0].get<int>(), arc[1].get<int>(), arc[2].get<int>()});
        }
        g.device_params.assign(g.nodes.size(), std::nullopt);
        for (auto it = j.at("params").begin(); it != j.at("params").end(); ++it) {
            const int idx = std::stoi(it.key());
            if (idx < 0 || idx >= g.num_nodes()) throw SchemaError("param index out of range");
            g.device_params[idx] = it.value().get<double>();
        }
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError(e.what());
    }
    for (int t : g.nodes) {
        if (t < 0 || t >= kNumNodeTypes) throw SchemaError("node type code out of range");
    }
    for (const auto& a : g.arcs) {
        if (a.etype < 0 || a.etype >= kNumEdgeTypes) throw SchemaError("edge type code out of range");
        if (a.src < 0 || a.src >= g.num_nodes() || a.dst < 0 || a.dst >= g.num_nodes()) {
            throw SchemaError("arc endpoint out of range");
        }
    }
    return g;
}

void check_graph_invariants(const CircuitGraph& graph) {
    const int n = graph.num_nodes();
    if (static_cast<int>(graph.device_params.size()) != n) {
        throw Error("device_params size mismatch");
    }
    for (int i = 0; i < n; ++i) {
        const int t = graph.nodes[i];
        if (t < 0 || t >= kNumNodeTypes) throw Error("node type out of range");
        if (is_device_type(t) != graph.device_params[i].has_value()) {
            throw Error("device_params presence does not match node type");
        }
        if (graph.device_params[i] && *graph.device_params[i] <= 0.0) {
            throw Error("non-positive device param on node " + std::to_string(i));
        }
    }

    std::map<std::pair<int, int>, int> path_arc_count;  // (src,dst) -> count
    std::vector<int> path_degree(n, 0);                 // undirected type-0 connections
    std::vector<int> gate_in(n, 0), bulk_in(n, 0);
    for (const auto& a : graph.arcs) {
        if (a.src < 0 || a.src >= n || a.dst < 0 || a.dst >= n) throw Error("arc out of range");
        if (a.src == a.dst) throw Error("self loop");
        switch (a.etype) {
            case kCurrentPath: {
                const bool src_dev = is_device_type(graph.nodes[a.src]);
                const bool dst_dev = is_device_type(graph.nodes[a.dst]);
                if (src_dev == dst_dev) throw Error("type-0 arc must alternate net/device");
                ++path_arc_count[{a.src, a.dst}];
                if (dst_dev) ++path_degree[a.dst];
                break;
            }
            case kNmosGate:
            case kNmosBulk: {
                if (!is_net_type(graph.nodes[a.src]) || graph.nodes[a.dst] != kNmosDevice) {
                    throw Error("NMOS gate/bulk arc endpoints wrong");
                }
                ++(a.etype == kNmosGate ? gate_in : bulk_in)[a.dst];
                break;
            }
            case kPmosGate:
            case kPmosBulk: {
                if (!is_net_type(graph.nodes[a.src]) || graph.nodes[a.dst] != kPmosDevice) {
                    throw Error("PMOS gate/bulk arc endpoints wrong");
                }
                ++(a.etype == kPmosGate ? gate_in : bulk_in)[a.dst];
                break;
            }
            default:
                throw Error("edge type out of range");
        }
    }
    // Undirected type-0 edges are stored as matched opposing arc pairs.
    for (const auto& [key, count] : path_arc_count) {
        auto rev = path_arc_count.find({key.second, key.first});
        if (rev == path_arc_count.end() || rev->second != count) {
            throw Error("type-0 arcs are not paired");
        }
    }
    for (int i = 0; i < n; ++i) {
        const int t = graph.nodes[i];
        if (is_device_type(t)) {
            if (path_degree[i] != 2) throw Error("device node " + std::to_string(i) +
                                                 " must have exactly 2 current-path connections");
        }
        const bool mos = t == kNmosDevice || t == kPmosDevice;
        if (mos && (gate_in[i] != 1 || bulk_in[i] != 1)) {
            throw Error("MOS node must have exactly one gate and one bulk in-arc");
        }
        if (!mos && (gate_in[i] != 0 || bulk_in[i] != 0)) {
            throw Error("gate/bulk arc into non-MOS node");
        }
    }
    if (!graph.weakly_connected()) throw Error("graph not weakly connected");
}

}  // namespace dice
