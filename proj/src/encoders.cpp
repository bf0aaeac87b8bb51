#include "dice/encoders.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <json.hpp>

namespace dice {

const char* arch_name(Arch a) {
    switch (a) {
        case Arch::Dice: return "dice";
        case Arch::Gcn: return "gcn";
        case Arch::GraphSage: return "graphsage";
        case Arch::Gat: return "gat";
        case Arch::Gin: return "gin";
    }
    return "?";
}

Arch arch_from_name(const std::string& s) {
    if (s == "dice") return Arch::Dice;
    if (s == "gcn") return Arch::Gcn;
    if (s == "graphsage") return Arch::GraphSage;
    if (s == "gat") return Arch::Gat;
    if (s == "gin") return Arch::Gin;
    throw ConfigError("unknown encoder arch '" + s + "'");
}

std::string encoder_spec_to_json(const EncoderSpec& spec) {
    nlohmann::json j;
    j["arch"] = arch_name(spec.arch);
    j["depth"] = spec.depth;
    j["hidden"] = spec.hidden;
    j["dropout"] = spec.dropout;
    j["norm"] = spec.norm == NormKind::Layer ? "layer" : "none";
    j["message_source"] = spec.message_source == MessageSource::Receiver ? "receiver" : "sender";
    return j.dump();
}

EncoderSpec encoder_spec_from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(e.what());
    }
    EncoderSpec spec;
    static const std::vector<std::string> known = {"arch",    "depth", "hidden",
                                                   "dropout", "norm",  "message_source"};
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (std::find(known.begin(), known.end(), it.key()) == known.end()) {
            throw ConfigError("unknown encoder key '" + it.key() + "'");
        }
    }
    if (j.contains("arch")) spec.arch = arch_from_name(j["arch"].get<std::string>());
    spec.depth = j.value("depth", spec.depth);
    spec.hidden = j.value("hidden", spec.hidden);
    spec.dropout = j.value("dropout", spec.dropout);
    if (j.contains("norm")) {
        const auto n = j["norm"].get<std::string>();
        if (n == "layer") spec.norm = NormKind::Layer;
        else if (n == "none") spec.norm = NormKind::None;
        else throw ConfigError("unknown norm '" + n + "'");
    }
    if (j.contains("message_source")) {
        const auto m = j["message_source"].get<std::string>();
        if (m == "receiver") spec.message_source = MessageSource::Receiver;
        else if (m == "sender") spec.message_source = MessageSource::Sender;
        else throw ConfigError("unknown message_source '" + m + "'");
    }
    if (spec.depth < 0 || spec.hidden < 1) throw ConfigError("depth >= 0 and hidden >= 1 required");
    return spec;
}

BatchedGraph BatchedGraph::pack(const std::vector<const CircuitGraph*>& graphs) {
    BatchedGraph b;
    b.num_graphs = static_cast<int>(graphs.size());
    for (int gi = 0; gi < b.num_graphs; ++gi) {
        const CircuitGraph& g = *graphs[gi];
        const int base = b.num_nodes;
        for (int t : g.nodes) {
            b.node_types.push_back(t);
            b.node_graph.push_back(gi);
        }
        for (const auto& a : g.arcs) {
            b.arc_src.push_back(base + a.src);
            b.arc_dst.push_back(base + a.dst);
            b.arc_types.push_back(a.etype);
            b.arc_graph.push_back(gi);
        }
        b.num_nodes += g.num_nodes();
        b.num_arcs += g.num_arcs();
    }
    return b;
}

BatchedGraph BatchedGraph::pack(const CircuitGraph& graph) { return pack({&graph}); }

Tensor BatchedGraph::node_onehots() const {
    std::vector<double> data(static_cast<std::size_t>(num_nodes) * kNumNodeTypes, 0.0);
    for (int i = 0; i < num_nodes; ++i) {
        data[static_cast<std::size_t>(i) * kNumNodeTypes + node_types[i]] = 1.0;
    }
    return Tensor::from_data(num_nodes, kNumNodeTypes, std::move(data));
}

Tensor BatchedGraph::edge_onehots() const {
    std::vector<double> data(static_cast<std::size_t>(num_arcs) * kNumEdgeTypes, 0.0);
    for (int i = 0; i < num_arcs; ++i) {
        data[static_cast<std::size_t>(i) * kNumEdgeTypes + arc_types[i]] = 1.0;
    }
    return Tensor::from_data(num_arcs, kNumEdgeTypes, std::move(data));
}

void init_mlp2(ParamStore& params, const std::string& prefix, int in_dim, int hidden, Rng& rng) {
    init_linear(params, prefix + ".l1", in_dim, hidden, rng);
    init_linear(params, prefix + ".l2", hidden, hidden, rng);
}

Tensor mlp2(const Tensor& x, ParamStore& params, const std::string& prefix,
            const EncoderSpec& spec, bool train_mode, Rng& rng) {
    Tensor h = linear(x, params, prefix + ".l1");
    if (spec.norm == NormKind::Layer && h.rows() > 0) h = layer_norm_rows(h);
    h = gelu(h);
    h = dropout(h, spec.dropout, train_mode, rng);
    return linear(h, params, prefix + ".l2");
}

namespace {

std::string layer_prefix(const std::string& scope, int k) {
    return scope + "layer" + std::to_string(k);
}

std::vector<double> in_degrees(const BatchedGraph& b) {
    std::vector<double> deg(b.num_nodes, 0.0);
    for (int d : b.arc_dst) deg[d] += 1.0;
    return deg;
}

}  // namespace

void init_layer_params(ParamStore& params, const std::string& prefix, const EncoderSpec& spec,
                       Rng& rng) {
    for (int k = 0; k < spec.depth; ++k) {
        const std::string lp = layer_prefix(prefix, k);
        switch (spec.arch) {
            case Arch::Dice:
                init_mlp2(params, lp + ".h", spec.hidden, spec.hidden, rng);
                init_mlp2(params, lp + ".e", spec.hidden, spec.hidden, rng);
                params.create(lp + ".phi_h", 1, 1);  // zero-initialized
                params.create(lp + ".phi_e", 1, 1);
                break;
            case Arch::Gcn:
                init_mlp2(params, lp + ".h", spec.hidden, spec.hidden, rng);
                break;
            case Arch::GraphSage:
                init_mlp2(params, lp + ".h", 2 * spec.hidden, spec.hidden, rng);
                break;
            case Arch::Gat:
                break;  // attention uses raw dot products; no layer parameters
            case Arch::Gin:
                init_mlp2(params, lp + ".h", spec.hidden, spec.hidden, rng);
                params.create(lp + ".eps", 1, 1);
                break;
        }
    }
}

ParamStore init_encoder_params(const EncoderSpec& spec, Rng& rng) {
    ParamStore params;
    init_mlp2(params, "node_proj", kNumNodeTypes, spec.hidden, rng);
    init_mlp2(params, "edge_proj", kNumEdgeTypes, spec.hidden, rng);
    init_layer_params(params, "", spec, rng);
    return params;
}

Tensor encode_layers(const BatchedGraph& batch, const EncoderSpec& spec, ParamStore& params,
                     const std::string& prefix, Tensor h, Tensor& e, bool train_mode, Rng& rng) {
    if (spec.depth > 0 && !params.contains(layer_prefix(prefix, 0) + ".h.l1.w") &&
        spec.arch != Arch::Gat) {
        throw DepthParamsMismatch("missing " + layer_prefix(prefix, 0));
    }
    for (int k = 0; k < spec.depth; ++k) {
        const std::string lp = layer_prefix(prefix, k);
        switch (spec.arch) {
            case Arch::Dice: {
                const auto& gate_idx =
                    spec.message_source == MessageSource::Receiver ? batch.arc_dst : batch.arc_src;
                Tensor per_arc = hadamard(gather_rows(h, gate_idx), e);
                Tensor m = segment_sum(per_arc, batch.arc_dst, batch.num_nodes);
                Tensor one_phi_h = scalar_add(params.get(lp + ".phi_h"), 1.0);
                Tensor one_phi_e = scalar_add(params.get(lp + ".phi_e"), 1.0);
                Tensor h_in = add(scale_by(h, one_phi_h), m);
                Tensor e_in = add(scale_by(e, one_phi_e),
                                  sub(gather_rows(m, batch.arc_src),
                                      gather_rows(m, batch.arc_dst)));
                h = mlp2(h_in, params, lp + ".h", spec, train_mode, rng);
                e = mlp2(e_in, params, lp + ".e", spec, train_mode, rng);
                break;
            }
            case Arch::Gcn: {
                const auto deg = in_degrees(batch);
                std::vector<double> coeff(batch.num_arcs);
                for (int i = 0; i < batch.num_arcs; ++i) {
                    coeff[i] = 1.0 / std::sqrt(deg[batch.arc_dst[i]] * deg[batch.arc_src[i]]);
                }
                Tensor per_arc = mul_rows(gather_rows(h, batch.arc_src),
                                          Tensor::from_data(batch.num_arcs, 1, std::move(coeff)));
                Tensor m = segment_sum(per_arc, batch.arc_dst, batch.num_nodes);
                h = mlp2(m, params, lp + ".h", spec, train_mode, rng);
                break;
            }
            case Arch::GraphSage: {
                const auto deg = in_degrees(batch);
                std::vector<double> inv(batch.num_nodes);
                for (int i = 0; i < batch.num_nodes; ++i) {
                    inv[i] = deg[i] > 0.0 ? 1.0 / deg[i] : 0.0;
                }
                Tensor m = mul_rows(
                    segment_sum(gather_rows(h, batch.arc_src), batch.arc_dst, batch.num_nodes),
                    Tensor::from_data(batch.num_nodes, 1, std::move(inv)));
                h = mlp2(concat_cols(h, m), params, lp + ".h", spec, train_mode, rng);
                break;
            }
            case Arch::Gat: {
                Tensor logits = row_sum(
                    hadamard(gather_rows(h, batch.arc_src), gather_rows(h, batch.arc_dst)));
                // Per-destination max shift keeps the exponentials bounded and
                // leaves the softmax values and gradients unchanged.
                std::vector<double> seg_max(batch.num_nodes,
                                            -std::numeric_limits<double>::infinity());
                for (int i = 0; i < batch.num_arcs; ++i) {
                    seg_max[batch.arc_dst[i]] =
                        std::max(seg_max[batch.arc_dst[i]], logits.data()[i]);
                }
                std::vector<double> shift(batch.num_arcs);
                for (int i = 0; i < batch.num_arcs; ++i) shift[i] = seg_max[batch.arc_dst[i]];
                Tensor expv = exp_elem(
                    sub(logits, Tensor::from_data(batch.num_arcs, 1, std::move(shift))));
                Tensor denom = segment_sum(expv, batch.arc_dst, batch.num_nodes);
                Tensor alpha = divide(expv, gather_rows(denom, batch.arc_dst));
                Tensor m = segment_sum(mul_rows(gather_rows(h, batch.arc_src), alpha),
                                       batch.arc_dst, batch.num_nodes);
                h = add(h, m);
                break;
            }
            case Arch::Gin: {
                Tensor m = segment_sum(gather_rows(h, batch.arc_src), batch.arc_dst,
                                       batch.num_nodes);
                Tensor one_eps = scalar_add(params.get(lp + ".eps"), 1.0);
                h = mlp2(add(scale_by(h, one_eps), m), params, lp + ".h", spec, train_mode, rng);
                break;
            }
        }
    }
    return h;
}

GraphEmbedding encode(const BatchedGraph& batch, const EncoderSpec& spec, ParamStore& params,
                      bool train_mode, Rng& rng) {
    Tensor h = mlp2(batch.node_onehots(), params, "node_proj", spec, train_mode, rng);
    Tensor e = mlp2(batch.edge_onehots(), params, "edge_proj", spec, train_mode, rng);
    h = encode_layers(batch, spec, params, "", h, e, train_mode, rng);

    GraphEmbedding out;
    out.node_out = h;
    out.edge_out = e;
    out.g = add(segment_sum(h, batch.node_graph, batch.num_graphs),
                segment_sum(e, batch.arc_graph, batch.num_graphs));
    return out;
}

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) {
        throw ShapeMismatch("cosine", 1, static_cast<int>(a.size()), 1,
                            static_cast<int>(b.size()));
    }
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0) throw ZeroVector("cosine");
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

}  // namespace dice
