#pragma once

// Independent oracle for the positive-augmentation property: repeatedly undo
// parallel duplicates (same type, same nets, same gate/bulk) and series
// insertions (two same-type devices chained through an otherwise-unused net),
// then compare the normal form with the origin up to net relabeling.
#include <algorithm>
#include <map>
#include <vector>

#include "dice/graph.hpp"

namespace dice::testing {

struct DevTuple {
    int type;
    int a, b;       // current-path nets, a <= b
    int gate = -1;  // net index, MOS only
    int bulk = -1;

    auto key() const { return std::tuple(type, a, b, gate, bulk); }
    bool operator==(const DevTuple&) const = default;
};

struct FlatCircuit {
    std::vector<int> net_types;  // indexed by net id; -1 marks removed nets
    std::vector<DevTuple> devices;
};

inline FlatCircuit flatten(const CircuitGraph& g) {
    FlatCircuit fc;
    std::vector<int> node_to_net(g.num_nodes(), -1);
    for (int v = 0; v < g.num_nodes(); ++v) {
        if (is_net_type(g.nodes[v])) {
            node_to_net[v] = static_cast<int>(fc.net_types.size());
            fc.net_types.push_back(g.nodes[v]);
        }
    }
    std::vector<DevTuple> by_node(g.num_nodes());
    std::vector<std::vector<int>> path_nets(g.num_nodes());
    for (const auto& arc : g.arcs) {
        if (arc.etype == kCurrentPath) {
            if (is_device_type(g.nodes[arc.dst])) {
                path_nets[arc.dst].push_back(node_to_net[arc.src]);
            }
        } else if (arc.etype == kNmosGate || arc.etype == kPmosGate) {
            by_node[arc.dst].gate = node_to_net[arc.src];
        } else {
            by_node[arc.dst].bulk = node_to_net[arc.src];
        }
    }
    for (int v = 0; v < g.num_nodes(); ++v) {
        if (!is_device_type(g.nodes[v])) continue;
        DevTuple d = by_node[v];
        d.type = g.nodes[v];
        d.a = std::min(path_nets[v][0], path_nets[v][1]);
        d.b = std::max(path_nets[v][0], path_nets[v][1]);
        fc.devices.push_back(d);
    }
    return fc;
}

// Number of device references (path, gate, bulk) touching each net.
inline std::vector<int> net_refs(const FlatCircuit& fc) {
    std::vector<int> refs(fc.net_types.size(), 0);
    for (const auto& d : fc.devices) {
        ++refs[d.a];
        ++refs[d.b];
        if (d.gate >= 0) ++refs[d.gate];
        if (d.bulk >= 0) ++refs[d.bulk];
    }
    return refs;
}

inline bool contract_parallel_once(FlatCircuit& fc) {
    for (std::size_t i = 0; i < fc.devices.size(); ++i) {
        for (std::size_t j = i + 1; j < fc.devices.size(); ++j) {
            if (fc.devices[i] == fc.devices[j]) {
                fc.devices.erase(fc.devices.begin() + static_cast<long>(j));
                return true;
            }
        }
    }
    return false;
}

inline bool contract_series_once(FlatCircuit& fc) {
    const auto refs = net_refs(fc);
    for (std::size_t i = 0; i < fc.devices.size(); ++i) {
        for (std::size_t j = 0; j < fc.devices.size(); ++j) {
            if (i == j) continue;
            const DevTuple& u = fc.devices[i];
            const DevTuple& v = fc.devices[j];
            if (u.type != v.type || u.gate != v.gate || u.bulk != v.bulk) continue;
            // Shared net w: other-type net, referenced only by these two path
            // terminals (so no gate/bulk or third device hangs off it).
            for (int w : {u.a, u.b}) {
                if (fc.net_types[w] != kOtherNet || refs[w] != 2) continue;
                if (w != v.a && w != v.b) continue;
                if (w == u.gate || w == u.bulk) continue;
                const int outer_u = u.a == w ? u.b : u.a;
                const int outer_v = v.a == w ? v.b : v.a;
                if (outer_u == outer_v) continue;  // would degenerate
                DevTuple merged = u;
                merged.a = std::min(outer_u, outer_v);
                merged.b = std::max(outer_u, outer_v);
                fc.devices[i] = merged;
                fc.devices.erase(fc.devices.begin() + static_cast<long>(j));
                fc.net_types[w] = -1;  // removed
                return true;
            }
        }
    }
    return false;
}

inline FlatCircuit normal_form(const CircuitGraph& g) {
    FlatCircuit fc = flatten(g);
    for (;;) {
        if (contract_parallel_once(fc)) continue;
        if (contract_series_once(fc)) continue;
        break;
    }
    return fc;
}

// -- isomorphism up to net relabeling ----------------------------------------

namespace detail {

// Per-net signature: (net type, sorted incident (device type, slot) list).
inline std::vector<std::vector<std::pair<int, int>>> net_signatures(const FlatCircuit& fc) {
    std::vector<std::vector<std::pair<int, int>>> sig(fc.net_types.size());
    for (const auto& d : fc.devices) {
        sig[d.a].push_back({d.type, 0});
        sig[d.b].push_back({d.type, 0});
        if (d.gate >= 0) sig[d.gate].push_back({d.type, 1});
        if (d.bulk >= 0) sig[d.bulk].push_back({d.type, 2});
    }
    for (auto& s : sig) std::sort(s.begin(), s.end());
    return sig;
}

inline bool devices_match(const FlatCircuit& a, const FlatCircuit& b,
                          const std::vector<int>& map_ab) {
    std::vector<std::tuple<int, int, int, int, int>> da, db;
    for (const auto& d : a.devices) {
        const int ma = map_ab[d.a], mb = map_ab[d.b];
        da.push_back({d.type, std::min(ma, mb), std::max(ma, mb),
                      d.gate >= 0 ? map_ab[d.gate] : -1, d.bulk >= 0 ? map_ab[d.bulk] : -1});
    }
    for (const auto& d : b.devices) {
        db.push_back({d.type, d.a, d.b, d.gate, d.bulk});
    }
    std::sort(da.begin(), da.end());
    std::sort(db.begin(), db.end());
    return da == db;
}

inline bool assign(std::size_t idx, const std::vector<int>& nets_a,
                   const std::vector<std::vector<int>>& candidates, std::vector<int>& map_ab,
                   std::vector<bool>& used, const FlatCircuit& a, const FlatCircuit& b) {
    if (idx == nets_a.size()) return devices_match(a, b, map_ab);
    const int na = nets_a[idx];
    for (int nb : candidates[idx]) {
        if (used[nb]) continue;
        map_ab[na] = nb;
        used[nb] = true;
        if (assign(idx + 1, nets_a, candidates, map_ab, used, a, b)) return true;
        used[nb] = false;
        map_ab[na] = -1;
    }
    return false;
}

}  // namespace detail

inline bool isomorphic(const FlatCircuit& a, const FlatCircuit& b) {
    std::vector<int> nets_a, nets_b;
    for (std::size_t i = 0; i < a.net_types.size(); ++i) {
        if (a.net_types[i] >= 0) nets_a.push_back(static_cast<int>(i));
    }
    for (std::size_t i = 0; i < b.net_types.size(); ++i) {
        if (b.net_types[i] >= 0) nets_b.push_back(static_cast<int>(i));
    }
    if (nets_a.size() != nets_b.size() || a.devices.size() != b.devices.size()) return false;

    const auto sig_a = detail::net_signatures(a);
    const auto sig_b = detail::net_signatures(b);
    std::vector<std::vector<int>> candidates(nets_a.size());
    for (std::size_t i = 0; i < nets_a.size(); ++i) {
        for (int nb : nets_b) {
            if (a.net_types[nets_a[i]] == b.net_types[nb] && sig_a[nets_a[i]] == sig_b[nb]) {
                candidates[i].push_back(nb);
            }
        }
        if (candidates[i].empty()) return false;
    }
    // Most-constrained nets first keeps the backtracking shallow.
    std::vector<std::size_t> order(nets_a.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
        return candidates[x].size() < candidates[y].size();
    });
    std::vector<int> nets_sorted;
    std::vector<std::vector<int>> cand_sorted;
    for (std::size_t i : order) {
        nets_sorted.push_back(nets_a[i]);
        cand_sorted.push_back(candidates[i]);
    }

    std::vector<int> map_ab(a.net_types.size(), -1);
    std::vector<bool> used(b.net_types.size(), false);
    return detail::assign(0, nets_sorted, cand_sorted, map_ab, used, a, b);
}

inline bool reduces_to_origin(const CircuitGraph& sample, const CircuitGraph& origin) {
    return isomorphic(normal_form(sample), normal_form(origin));
}

}  // namespace dice::testing
