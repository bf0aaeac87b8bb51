#pragma once

#include <string>
#include <vector>

#include "dice/graph.hpp"
#include "dice/tensor.hpp"

namespace dice {

enum class Arch { Dice, Gcn, GraphSage, Gat, Gin };
enum class NormKind { Layer, None };
// Which endpoint's node features enter the edge-gated message: the printed
// update rule multiplies the receiver's features by the edge features; the
// conventional sender variant is kept behind this switch.
enum class MessageSource { Receiver, Sender };

const char* arch_name(Arch a);
Arch arch_from_name(const std::string& s);

struct EncoderSpec {
    Arch arch = Arch::Dice;
    int depth = 2;
    int hidden = 256;
    double dropout = 0.2;
    NormKind norm = NormKind::Layer;
    MessageSource message_source = MessageSource::Receiver;
};

std::string encoder_spec_to_json(const EncoderSpec& spec);
EncoderSpec encoder_spec_from_json(const std::string& text);

// Several graphs packed into one disjoint union so a batch is encoded with a
// single set of matrix ops. Node/arc rows carry their graph id for readout.
struct BatchedGraph {
    int num_nodes = 0;
    int num_arcs = 0;
    int num_graphs = 0;
    std::vector<int> node_types;
    std::vector<int> arc_src, arc_dst, arc_types;
    std::vector<int> node_graph, arc_graph;

    static BatchedGraph pack(const std::vector<const CircuitGraph*>& graphs);
    static BatchedGraph pack(const CircuitGraph& graph);

    Tensor node_onehots() const;  // num_nodes x 9, constant
    Tensor edge_onehots() const;  // num_arcs x 5, constant
};

struct GraphEmbedding {
    Tensor g;         // num_graphs x hidden
    Tensor node_out;  // num_nodes x hidden
    Tensor edge_out;  // num_arcs x hidden
};

// Fresh parameters for the given spec (input projections + per-layer blocks).
ParamStore init_encoder_params(const EncoderSpec& spec, Rng& rng);

// Forward pass; differentiable through `params`. Dropout only in train mode.
GraphEmbedding encode(const BatchedGraph& batch, const EncoderSpec& spec, ParamStore& params,
                      bool train_mode, Rng& rng);

// 2-layer MLP block shared by the encoders: linear -> norm -> GELU ->
// dropout -> linear, parameters "<prefix>.l1" / "<prefix>.l2".
Tensor mlp2(const Tensor& x, ParamStore& params, const std::string& prefix,
            const EncoderSpec& spec, bool train_mode, Rng& rng);
void init_mlp2(ParamStore& params, const std::string& prefix, int in_dim, int hidden, Rng& rng);

// Message-passing layers applied to already-projected features (used by the
// downstream encoder's series stage). `prefix` scopes the layer parameters.
Tensor encode_layers(const BatchedGraph& batch, const EncoderSpec& spec, ParamStore& params,
                     const std::string& prefix, Tensor h, Tensor& e, bool train_mode, Rng& rng);
void init_layer_params(ParamStore& params, const std::string& prefix, const EncoderSpec& spec,
                       Rng& rng);

double cosine(const std::vector<double>& a, const std::vector<double>& b);

}  // namespace dice
