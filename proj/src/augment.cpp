#include "dice/augment.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>
#include <unordered_map>

#include <json.hpp>

namespace dice {

namespace fs = std::filesystem;

const char* polarity_name(Polarity p) {
    switch (p) {
        case Polarity::Original: return "original";
        case Polarity::Positive: return "positive";
        case Polarity::Negative: return "negative";
    }
    return "?";
}

Polarity polarity_from_name(const std::string& s) {
    if (s == "original") return Polarity::Original;
    if (s == "positive") return Polarity::Positive;
    if (s == "negative") return Polarity::Negative;
    throw SchemaError("unknown polarity '" + s + "'");
}

const char* aug_kind_name(AugKind k) {
    switch (k) {
        case AugKind::PosParallel: return "pos_parallel";
        case AugKind::PosSeries: return "pos_series";
        case AugKind::NegReplace: return "neg_replace";
    }
    return "?";
}

AugKind aug_kind_from_name(const std::string& s) {
    if (s == "pos_parallel") return AugKind::PosParallel;
    if (s == "pos_series") return AugKind::PosSeries;
    if (s == "neg_replace") return AugKind::NegReplace;
    throw SchemaError("unknown augmentation kind '" + s + "'");
}

namespace {

// Indices of the net->device current-path arcs of `dev`, in arc order. For a
// freshly built graph the first entry of a MOS is its drain side; series
// insertion keys off that ordering.
std::vector<int> path_in_arcs(const CircuitGraph& g, int dev) {
    std::vector<int> out;
    for (int i = 0; i < g.num_arcs(); ++i) {
        if (g.arcs[i].etype == kCurrentPath && g.arcs[i].dst == dev) out.push_back(i);
    }
    return out;
}

struct GateBulk {
    int gate_src, gate_type;
    int bulk_src, bulk_type;
};

GateBulk gate_bulk_of(const CircuitGraph& g, int dev) {
    GateBulk gb{-1, -1, -1, -1};
    for (const auto& a : g.arcs) {
        if (a.dst != dev) continue;
        if (a.etype == kNmosGate || a.etype == kPmosGate) {
            gb.gate_src = a.src;
            gb.gate_type = a.etype;
        } else if (a.etype == kNmosBulk || a.etype == kPmosBulk) {
            gb.bulk_src = a.src;
            gb.bulk_type = a.etype;
        }
    }
    return gb;
}

void add_path_pair(CircuitGraph& g, int net, int dev) {
    g.arcs.push_back({net, dev, kCurrentPath});
    g.arcs.push_back({dev, net, kCurrentPath});
}

// Add a clone of `target`'s type `clone_type` in parallel: same current-path
// nets, gate/bulk arcs from the given sources with the given types.
int add_parallel_device(CircuitGraph& g, int target, int clone_type, double param,
                        const GateBulk* gb) {
    const auto in_arcs = path_in_arcs(g, target);
    const int clone = g.num_nodes();
    g.nodes.push_back(clone_type);
    g.device_params.push_back(param);
    for (int ai : in_arcs) add_path_pair(g, g.arcs[ai].src, clone);
    if (gb) {
        g.arcs.push_back({gb->gate_src, clone, gb->gate_type});
        g.arcs.push_back({gb->bulk_src, clone, gb->bulk_type});
    }
    return clone;
}

// Insert a new net between `target` and the current-path neighbor reached by
// its `side`-th net->device arc, then bridge new-net<->old-neighbor with a
// fresh device of `clone_type`.
int add_series_device(CircuitGraph& g, int target, int side, int clone_type, double param,
                      const GateBulk* gb) {
    const auto in_arcs = path_in_arcs(g, target);
    const int in_arc = in_arcs.at(static_cast<std::size_t>(side));
    const int neighbor = g.arcs[in_arc].src;
    // Locate the matching device->net arc of the same pair.
    int out_arc = -1;
    for (int i = 0; i < g.num_arcs(); ++i) {
        if (g.arcs[i].etype == kCurrentPath && g.arcs[i].src == target &&
            g.arcs[i].dst == neighbor) {
            out_arc = i;
            break;
        }
    }
    const int mid_net = g.num_nodes();
    g.nodes.push_back(kOtherNet);
    g.device_params.push_back(std::nullopt);
    g.arcs[in_arc].src = mid_net;
    g.arcs[out_arc].dst = mid_net;

    const int clone = g.num_nodes();
    g.nodes.push_back(clone_type);
    g.device_params.push_back(param);
    add_path_pair(g, mid_net, clone);
    add_path_pair(g, neighbor, clone);
    if (gb) {
        g.arcs.push_back({gb->gate_src, clone, gb->gate_type});
        g.arcs.push_back({gb->bulk_src, clone, gb->bulk_type});
    }
    return clone;
}

int pick_device(const CircuitGraph& g, Rng& rng) {
    const auto devices = g.device_nodes();
    if (devices.empty()) throw NoDeviceNodes();
    return devices[rng.uniform_index(devices.size())];
}

bool is_mos_type(int t) { return t == kNmosDevice || t == kPmosDevice; }

// Series side: MOS clones chain on the drain side (first current-path arc);
// two-terminal devices pick a side at random.
int pick_series_side(const CircuitGraph& g, int target, Rng& rng) {
    if (is_mos_type(g.nodes[target])) return 0;
    return static_cast<int>(rng.uniform_index(2));
}

}  // namespace

CircuitGraph augment_positive(const CircuitGraph& graph, Rng& rng, AugStep* step) {
    CircuitGraph g = graph;
    const int target = pick_device(g, rng);
    const int type = g.nodes[target];
    const double param = *g.device_params[target];
    const bool mos = is_mos_type(type);
    GateBulk gb;
    if (mos) gb = gate_bulk_of(g, target);

    AugStep s;
    s.target = target;
    if (rng.coin()) {
        s.kind = AugKind::PosParallel;
        s.detail = "parallel";
        add_parallel_device(g, target, type, param, mos ? &gb : nullptr);
    } else {
        s.kind = AugKind::PosSeries;
        s.detail = "series";
        add_series_device(g, target, pick_series_side(g, target, rng), type, param,
                          mos ? &gb : nullptr);
    }
    if (step) *step = s;
    return g;
}

CircuitGraph augment_negative(const CircuitGraph& graph, Rng& rng, AugStep* step) {
    CircuitGraph g = graph;
    const int target = pick_device(g, rng);
    const double param = *g.device_params[target];

    AugStep s;
    s.kind = AugKind::NegReplace;
    s.target = target;
    switch (g.nodes[target]) {
        case kCapacitorDevice:
            g.nodes[target] = kInductorDevice;
            s.detail = "c_to_l";
            break;
        case kInductorDevice:
            g.nodes[target] = kCapacitorDevice;
            s.detail = "l_to_c";
            break;
        case kResistorDevice:
            if (rng.coin()) {
                g.nodes[target] = kCapacitorDevice;
                s.detail = "r_to_c";
            } else {
                g.nodes[target] = kInductorDevice;
                s.detail = "r_to_l";
            }
            break;
        case kCurrentSource:
            g.nodes[target] = kResistorDevice;
            s.detail = "i_to_r";
            break;
        case kNmosDevice:
        case kPmosDevice: {
            const bool nmos = g.nodes[target] == kNmosDevice;
            const int counter = nmos ? kPmosDevice : kNmosDevice;
            GateBulk gb = gate_bulk_of(g, target);
            GateBulk mirrored{gb.gate_src, nmos ? kPmosGate : kNmosGate,
                              gb.bulk_src, nmos ? kPmosBulk : kNmosBulk};
            add_parallel_device(g, target, counter, param, &mirrored);
            add_series_device(g, target, 0, counter, param, &mirrored);
            s.detail = nmos ? "nmos_to_cmos" : "pmos_to_cmos";
            break;
        }
        default:
            throw Error("negative rule table has no entry for node type " +
                        std::to_string(g.nodes[target]));
    }
    if (step) *step = s;
    return g;
}

void RelationIndex::add(std::string origin_id, Polarity polarity) {
    auto [it, inserted] = interner_.try_emplace(origin_id, static_cast<int>(interner_.size()));
    origin_code_.push_back(it->second);
    origin_.push_back(std::move(origin_id));
    polarity_.push_back(polarity);
}

Relation RelationIndex::relation(std::size_t i, std::size_t j) const {
    if (origin_code_[i] != origin_code_[j]) return Relation::NonEqual;
    const bool ni = polarity_[i] == Polarity::Negative;
    const bool nj = polarity_[j] == Polarity::Negative;
    // Shared-origin pairs with any negative polarity count as Negative,
    // including negative-negative pairs.
    if (ni || nj) return Relation::Negative;
    return Relation::Positive;
}

RelationIndex build_relation_index(const std::vector<AugmentedSample>& samples) {
    RelationIndex idx;
    for (const auto& s : samples) idx.add(s.origin_id, s.polarity);
    return idx;
}

std::vector<AugmentedSample> generate_dataset(const std::vector<CircuitGraph>& corpus,
                                              int n_pos, int n_neg, int max_chain,
                                              std::uint64_t seed) {
    if (corpus.empty()) throw EmptyCorpus();
    if (max_chain < 1) throw Error("max_chain must be >= 1");
    std::vector<AugmentedSample> samples;
    for (std::size_t ci = 0; ci < corpus.size(); ++ci) {
        const CircuitGraph& origin = corpus[ci];
        const std::string origin_id =
            origin.origin.empty() ? "circuit" + std::to_string(ci) : origin.origin;
        Rng rng(seed ^ ((ci + 1) * 0x9e3779b97f4a7c15ull));

        AugmentedSample base;
        base.id = origin_id + "#orig";
        base.origin_id = origin_id;
        base.graph = origin;
        base.polarity = Polarity::Original;
        samples.push_back(base);

        for (int p = 0; p < n_pos; ++p) {
            AugmentedSample s;
            s.id = origin_id + "#p" + std::to_string(p);
            s.origin_id = origin_id;
            s.polarity = Polarity::Positive;
            s.graph = origin;
            const int len = rng.uniform_int(1, max_chain);
            for (int k = 0; k < len; ++k) {
                AugStep st;
                s.graph = augment_positive(s.graph, rng, &st);
                s.chain.push_back(st);
            }
            samples.push_back(std::move(s));
        }
        for (int m = 0; m < n_neg; ++m) {
            AugmentedSample s;
            s.id = origin_id + "#n" + std::to_string(m);
            s.origin_id = origin_id;
            s.polarity = Polarity::Negative;
            s.graph = origin;
            const int prefix = rng.uniform_int(0, max_chain - 1);
            for (int k = 0; k < prefix; ++k) {
                AugStep st;
                s.graph = augment_positive(s.graph, rng, &st);
                s.chain.push_back(st);
            }
            AugStep st;
            s.graph = augment_negative(s.graph, rng, &st);
            s.chain.push_back(st);
            samples.push_back(std::move(s));
        }
    }
    return samples;
}

void write_dataset(const std::string& dir, const std::vector<AugmentedSample>& samples) {
    fs::create_directories(fs::path(dir) / "graphs");
    nlohmann::json manifest = nlohmann::json::array();
    for (const auto& s : samples) {
        const std::string graph_file = "graphs/" + s.id + ".json";
        std::ofstream out(fs::path(dir) / graph_file);
        out << graph_to_json(s.graph, s.id);
        nlohmann::json chain = nlohmann::json::array();
        for (const auto& st : s.chain) {
            chain.push_back({{"kind", aug_kind_name(st.kind)},
                             {"target", st.target},
                             {"detail", st.detail}});
        }
        manifest.push_back({{"id", s.id},
                            {"origin_id", s.origin_id},
                            {"polarity", polarity_name(s.polarity)},
                            {"chain", std::move(chain)},
                            {"graph_file", graph_file}});
    }
    std::ofstream out(fs::path(dir) / "manifest.json");
    out << manifest.dump(2) << "\n";
}

std::vector<AugmentedSample> read_dataset(const std::string& dir) {
    std::ifstream in(fs::path(dir) / "manifest.json");
    if (!in) throw Error("cannot open manifest in " + dir);
    nlohmann::json manifest;
    try {
        in >> manifest;
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError(e.what());
    }
    std::vector<AugmentedSample> samples;
    for (const auto& rec : manifest) {
        AugmentedSample s;
        s.id = rec.at("id").get<std::string>();
        s.origin_id = rec.at("origin_id").get<std::string>();
        s.polarity = polarity_from_name(rec.at("polarity").get<std::string>());
        for (const auto& st : rec.at("chain")) {
            s.chain.push_back({aug_kind_from_name(st.at("kind").get<std::string>()),
                               st.at("target").get<int>(),
                               st.at("detail").get<std::string>()});
        }
        std::ifstream gin(fs::path(dir) / rec.at("graph_file").get<std::string>());
        if (!gin) throw Error("missing graph file for sample " + s.id);
        std::stringstream buf;
        buf << gin.rdbuf();
        s.graph = graph_from_json(buf.str());
        samples.push_back(std::move(s));
    }
    return samples;
}

}  // namespace dice
