// Python bindings over the main library operations. Graphs cross the
// boundary as their JSON form to keep the surface small.
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "dice/contrastive.hpp"
#include "dice/downstream.hpp"

namespace py = pybind11;
using namespace dice;

namespace {

std::string parse_to_graph_json(const std::string& netlist_text, const std::string& name) {
    Netlist nl = parse_netlist(netlist_text, name);
    return graph_to_json(build_graph(nl), name);
}

std::string positive_json(const std::string& graph_json, std::uint64_t seed) {
    Rng rng(seed);
    return graph_to_json(augment_positive(graph_from_json(graph_json), rng));
}

std::string negative_json(const std::string& graph_json, std::uint64_t seed) {
    Rng rng(seed);
    return graph_to_json(augment_negative(graph_from_json(graph_json), rng));
}

py::list generate_dataset_py(const std::vector<std::string>& corpus_jsons, int n_pos, int n_neg,
                             int max_chain, std::uint64_t seed) {
    std::vector<CircuitGraph> corpus;
    for (const auto& j : corpus_jsons) corpus.push_back(graph_from_json(j));
    py::list out;
    for (const auto& s : generate_dataset(corpus, n_pos, n_neg, max_chain, seed)) {
        py::dict d;
        d["id"] = s.id;
        d["origin_id"] = s.origin_id;
        d["polarity"] = polarity_name(s.polarity);
        d["graph"] = graph_to_json(s.graph, s.id);
        out.append(d);
    }
    return out;
}

std::vector<std::vector<double>> embed_graphs(const std::vector<std::string>& graph_jsons,
                                              const std::string& ckpt_path) {
    ParamStore params;
    const EncoderSpec spec = encoder_spec_from_json(load_checkpoint(ckpt_path, params));
    std::vector<CircuitGraph> graphs;
    for (const auto& j : graph_jsons) graphs.push_back(graph_from_json(j));
    std::vector<const CircuitGraph*> ptrs;
    for (const auto& g : graphs) ptrs.push_back(&g);
    const BatchedGraph batch = BatchedGraph::pack(ptrs);
    Rng rng(0);
    GraphEmbedding emb = encode(batch, spec, params, /*train_mode=*/false, rng);
    std::vector<std::vector<double>> rows(graphs.size());
    const int h = emb.g.cols();
    for (std::size_t i = 0; i < graphs.size(); ++i) {
        rows[i].assign(emb.g.data().begin() + static_cast<long>(i) * h,
                       emb.g.data().begin() + static_cast<long>(i + 1) * h);
    }
    return rows;
}

py::dict pretrain_dir(const std::string& dataset_dir, const std::string& encoder_spec_json,
                      double tau, double tau_p, double tau_n, double lr, int batch_size,
                      int epochs, std::uint64_t seed, const std::string& ckpt_out) {
    auto samples = read_dataset(dataset_dir);
    RelationIndex rel = build_relation_index(samples);
    EncoderSpec spec = encoder_spec_from_json(encoder_spec_json);
    LossConfig loss;
    loss.tau = tau;
    loss.tau_p = tau_p;
    loss.tau_n = tau_n;
    TrainConfig train;
    train.lr = lr;
    train.batch_size = batch_size;
    train.epochs = epochs;
    train.seed = seed;
    PretrainResult result = pretrain(samples, rel, spec, loss, train);
    save_checkpoint(ckpt_out, result.params, encoder_spec_to_json(spec));
    py::dict out;
    const EpochMetrics& last = result.metrics.back();
    out["mean_loss"] = last.mean_loss;
    out["pos_mean"] = last.pos_mean;
    out["noneq_mean"] = last.noneq_mean;
    out["neg_mean"] = last.neg_mean;
    return out;
}

}  // namespace

PYBIND11_MODULE(pydice, m) {
    m.doc() = "circuit graph contrastive pretraining core";
    py::register_exception<Error>(m, "DiceError");
    m.def("parse_to_graph_json", &parse_to_graph_json, py::arg("netlist_text"),
          py::arg("name") = "", "parse a netlist and return the circuit graph as json");
    m.def("check_graph", [](const std::string& j) { check_graph_invariants(graph_from_json(j)); },
          py::arg("graph_json"), "raise if the graph violates a structural invariant");
    m.def("augment_positive", &positive_json, py::arg("graph_json"), py::arg("seed"));
    m.def("augment_negative", &negative_json, py::arg("graph_json"), py::arg("seed"));
    m.def("generate_dataset", &generate_dataset_py, py::arg("corpus_graph_jsons"),
          py::arg("n_pos"), py::arg("n_neg"), py::arg("max_chain"), py::arg("seed"));
    m.def("embed", &embed_graphs, py::arg("graph_jsons"), py::arg("ckpt_path"));
    m.def("pretrain", &pretrain_dir, py::arg("dataset_dir"), py::arg("encoder_spec_json"),
          py::arg("tau") = 0.05, py::arg("tau_p") = 0.2, py::arg("tau_n") = 0.05,
          py::arg("lr") = 3e-4, py::arg("batch_size") = 1024, py::arg("epochs") = 200,
          py::arg("seed") = 0, py::arg("ckpt_out") = "ckpt.json");
    m.def("cosine", &cosine, py::arg("a"), py::arg("b"));
}
