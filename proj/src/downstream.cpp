#include "dice/downstream.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "dice/netlist.hpp"

namespace dice {

namespace {

EncoderSpec branch_spec(const DownstreamConfig& config, int depth) {
    EncoderSpec spec;
    spec.arch = Arch::Dice;
    spec.depth = depth;
    spec.hidden = config.hidden;
    spec.dropout = config.dropout;
    return spec;
}

}  // namespace

DownstreamModel init_downstream(const DownstreamConfig& config, const std::string& ckpt_path,
                                Rng& rng) {
    if (config.d_dice < 0 || config.d_par < 0 || config.d_series < 0 || config.hidden < 1) {
        throw ConfigError("downstream depths must be >= 0 and hidden >= 1");
    }
    DownstreamModel model;
    model.config = config;

    if (config.d_dice > 0) {
        if (ckpt_path.empty()) throw MissingCheckpoint();
        const std::string meta = load_checkpoint(ckpt_path, model.frozen);
        model.frozen_spec = encoder_spec_from_json(meta);
        if (model.frozen_spec.depth != config.d_dice) {
            throw ConfigError("d_dice " + std::to_string(config.d_dice) +
                              " != pretrained depth " + std::to_string(model.frozen_spec.depth));
        }
    }

    const EncoderSpec par = branch_spec(config, config.d_par);
    init_mlp2(model.params, "par.node_proj", kNumNodeTypes, config.hidden, rng);
    init_mlp2(model.params, "par.edge_proj", kNumEdgeTypes, config.hidden, rng);
    init_layer_params(model.params, "par.", par, rng);
    if (config.d_dice > 0) {
        init_linear(model.params, "fuse.node", config.hidden + model.frozen_spec.hidden,
                    config.hidden, rng);
        init_linear(model.params, "fuse.edge", config.hidden + model.frozen_spec.hidden,
                    config.hidden, rng);
    }
    init_layer_params(model.params, "series.", branch_spec(config, config.d_series), rng);
    return model;
}

GraphEmbedding encode_downstream(const BatchedGraph& batch, DownstreamModel& model,
                                 bool train_mode, Rng& rng) {
    const EncoderSpec par = branch_spec(model.config, model.config.d_par);
    Tensor h = mlp2(batch.node_onehots(), model.params, "par.node_proj", par, train_mode, rng);
    Tensor e = mlp2(batch.edge_onehots(), model.params, "par.edge_proj", par, train_mode, rng);
    h = encode_layers(batch, par, model.params, "par.", h, e, train_mode, rng);

    if (model.config.d_dice > 0) {
        Rng frozen_rng(0);  // dropout off in the frozen branch
        GraphEmbedding fe = encode(batch, model.frozen_spec, model.frozen,
                                   /*train_mode=*/false, frozen_rng);
        h = linear(concat_cols(h, stop_gradient(fe.node_out)), model.params, "fuse.node");
        e = linear(concat_cols(e, stop_gradient(fe.edge_out)), model.params, "fuse.edge");
    }

    const EncoderSpec series = branch_spec(model.config, model.config.d_series);
    h = encode_layers(batch, series, model.params, "series.", h, e, train_mode, rng);

    GraphEmbedding out;
    out.node_out = h;
    out.edge_out = e;
    out.g = add(segment_sum(h, batch.node_graph, batch.num_graphs),
                segment_sum(e, batch.arc_graph, batch.num_graphs));
    return out;
}

namespace {

void fill_param_row(std::vector<double>& data, int row, int type, double param,
                    const std::string& where) {
    if (!(param > 0.0) || !std::isfinite(param)) throw NonPositiveParam(where);
    data[static_cast<std::size_t>(row) * kNumNodeTypes + type] = -std::log(param);
}

}  // namespace

Tensor encode_params(const std::vector<const CircuitGraph*>& graphs) {
    return encode_params(graphs, std::vector<std::vector<int>>(graphs.size()),
                         std::vector<std::vector<double>>(graphs.size()));
}

Tensor encode_params(const std::vector<const CircuitGraph*>& graphs,
                     const std::vector<std::vector<int>>& nodes,
                     const std::vector<std::vector<double>>& values) {
    int total = 0;
    for (const auto* g : graphs) total += g->num_nodes();
    std::vector<double> data(static_cast<std::size_t>(total) * kNumNodeTypes, 0.0);

    int base = 0;
    for (std::size_t gi = 0; gi < graphs.size(); ++gi) {
        const CircuitGraph& g = *graphs[gi];
        std::vector<double> params(g.num_nodes(), 0.0);
        for (int v = 0; v < g.num_nodes(); ++v) {
            if (g.device_params[v]) params[v] = *g.device_params[v];
        }
        for (std::size_t k = 0; k < nodes[gi].size(); ++k) {
            const int v = nodes[gi][k];
            if (v < 0 || v >= g.num_nodes() || !is_device_type(g.nodes[v])) {
                throw ConfigError("param override targets non-device node " + std::to_string(v));
            }
            params[v] = values[gi][k];
        }
        for (int v = 0; v < g.num_nodes(); ++v) {
            if (!is_device_type(g.nodes[v])) continue;
            fill_param_row(data, base + v, g.nodes[v], params[v],
                           "node " + std::to_string(v) + " of " + g.origin);
        }
        base += g.num_nodes();
    }
    return Tensor::from_data(total, kNumNodeTypes, std::move(data));
}

void init_decoder(ParamStore& params, int hidden, int out_dim, Rng& rng) {
    init_linear(params, "dec.node.l1", hidden + kNumNodeTypes, hidden, rng);
    init_linear(params, "dec.node.l2", hidden, hidden, rng);
    init_linear(params, "dec.head.l1", hidden, hidden, rng);
    init_linear(params, "dec.head.l2", hidden, out_dim, rng);
}

Tensor decode(const Tensor& node_out, const Tensor& param_enc, const BatchedGraph& batch,
              ParamStore& params) {
    Tensor x = concat_cols(node_out, param_enc);
    x = linear(gelu(linear(x, params, "dec.node.l1")), params, "dec.node.l2");
    Tensor pooled = segment_sum(x, batch.node_graph, batch.num_graphs);
    return linear(gelu(linear(pooled, params, "dec.head.l1")), params, "dec.head.l2");
}

int task1_truth(const std::vector<std::string>& target, const std::vector<std::string>& a,
                const std::vector<std::string>& b) {
    auto shared = [&target](const std::vector<std::string>& other) {
        int n = 0;
        for (const auto& l : target) {
            if (std::find(other.begin(), other.end(), l) != other.end()) ++n;
        }
        return n;
    };
    const int sa = shared(a), sb = shared(b);
    if (sa > sb) return 0;
    if (sb > sa) return 1;
    return 2;
}

void init_task1_head(ParamStore& params, int hidden, Rng& rng) {
    init_linear(params, "t1.l1", 3 * hidden, hidden, rng);
    init_linear(params, "t1.l2", hidden, 3, rng);
}

Tensor task1_logits(const Tensor& g_t, const Tensor& g_a, const Tensor& g_b,
                    ParamStore& params) {
    Tensor x = concat_cols(concat_cols(g_t, g_a), g_b);
    return linear(gelu(linear(x, params, "t1.l1")), params, "t1.l2");
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
    const int n = logits.rows(), c = logits.cols();
    if (static_cast<int>(labels.size()) != n) {
        throw ShapeMismatch("cross_entropy", n, c, static_cast<int>(labels.size()), 1);
    }
    std::vector<double> onehot(static_cast<std::size_t>(n) * c, 0.0);
    for (int i = 0; i < n; ++i) {
        if (labels[i] < 0 || labels[i] >= c) throw ConfigError("label out of range");
        onehot[static_cast<std::size_t>(i) * c + labels[i]] = 1.0;
    }
    Tensor y = Tensor::from_data(n, c, std::move(onehot));
    Tensor logp = log_elem(softmax_rows(logits));
    return scalar_mul(mean_all(row_sum(hadamard(y, logp))), -1.0);
}

std::vector<double> r2_score(const std::vector<std::vector<double>>& pred,
                             const std::vector<std::vector<double>>& truth) {
    if (pred.size() != truth.size() || pred.empty()) {
        throw ShapeMismatch("r2_score", static_cast<int>(pred.size()), 0,
                            static_cast<int>(truth.size()), 0);
    }
    const std::size_t m = truth[0].size();
    std::vector<double> mean(m, 0.0);
    for (const auto& row : truth) {
        for (std::size_t j = 0; j < m; ++j) mean[j] += row[j];
    }
    for (auto& v : mean) v /= static_cast<double>(truth.size());

    std::vector<double> ss_res(m, 0.0), ss_tot(m, 0.0);
    for (std::size_t i = 0; i < truth.size(); ++i) {
        for (std::size_t j = 0; j < m; ++j) {
            ss_res[j] += (truth[i][j] - pred[i][j]) * (truth[i][j] - pred[i][j]);
            ss_tot[j] += (truth[i][j] - mean[j]) * (truth[i][j] - mean[j]);
        }
    }
    std::vector<double> r2(m);
    for (std::size_t j = 0; j < m; ++j) {
        r2[j] = ss_tot[j] > 0.0 ? 1.0 - ss_res[j] / ss_tot[j] : (ss_res[j] == 0.0 ? 1.0 : 0.0);
    }
    return r2;
}

Task1Result train_task1(const std::vector<CircuitGraph>& circuits,
                        const std::vector<std::vector<std::string>>& labels,
                        const DownstreamConfig& config, const std::string& ckpt_path,
                        const TaskTrainConfig& train) {
    if (circuits.size() < 3 || circuits.size() != labels.size()) {
        throw ConfigError("task 1 needs >= 3 labeled circuits");
    }
    const int n = static_cast<int>(circuits.size());

    struct Triple {
        int t, a, b, truth;
    };
    std::vector<Triple> triples;
    for (int t = 0; t < n; ++t) {
        for (int a = 0; a < n; ++a) {
            for (int b = 0; b < n; ++b) {
                if (t == a || t == b || a == b) continue;
                triples.push_back({t, a, b, task1_truth(labels[t], labels[a], labels[b])});
            }
        }
    }

    Rng master(train.seed);
    Rng init_rng = master.fork(1);
    Rng split_rng = master.fork(2);
    Rng run_rng = master.fork(3);

    std::vector<int> order(triples.size());
    std::iota(order.begin(), order.end(), 0);
    split_rng.shuffle(order);
    const std::size_t n_test = triples.size() / 10;
    const std::size_t n_val = triples.size() / 10;
    std::vector<int> test_ids(order.begin(), order.begin() + static_cast<long>(n_test));
    std::vector<int> train_ids(order.begin() + static_cast<long>(n_test + n_val), order.end());

    DownstreamModel model = init_downstream(config, ckpt_path, init_rng);
    init_task1_head(model.params, config.hidden, init_rng);

    std::vector<const CircuitGraph*> ptrs;
    for (const auto& c : circuits) ptrs.push_back(&c);
    const BatchedGraph batch = BatchedGraph::pack(ptrs);

    Adam adam(AdamConfig{.lr = train.lr});
    double final_loss = 0.0;

    for (int epoch = 1; epoch <= train.epochs; ++epoch) {
        Rng epoch_rng = run_rng.fork(static_cast<std::uint64_t>(epoch));

        // One step per target: all training triples sharing that target.
        std::vector<std::vector<int>> by_target(n);
        for (int id : train_ids) by_target[triples[id].t].push_back(id);
        std::vector<int> targets;
        for (int t = 0; t < n; ++t) {
            if (!by_target[t].empty()) targets.push_back(t);
        }
        epoch_rng.shuffle(targets);

        double loss_sum = 0.0;
        int steps = 0;
        for (int t : targets) {
            GraphEmbedding emb = encode_downstream(batch, model, /*train_mode=*/true, epoch_rng);
            std::vector<int> ti, ai, bi, truth;
            for (int id : by_target[t]) {
                ti.push_back(triples[id].t);
                ai.push_back(triples[id].a);
                bi.push_back(triples[id].b);
                truth.push_back(triples[id].truth);
            }
            Tensor logits = task1_logits(gather_rows(emb.g, ti), gather_rows(emb.g, ai),
                                         gather_rows(emb.g, bi), model.params);
            Tensor loss = cross_entropy(logits, truth);
            const double lv = loss.item();
            if (!std::isfinite(lv)) {
                throw NumericError("task 1: non-finite loss at epoch " + std::to_string(epoch));
            }
            model.params.zero_grad();
            backward(loss);
            adam.step(model.params);
            loss_sum += lv;
            ++steps;
        }
        final_loss = steps ? loss_sum / steps : std::nan("");
    }

    Rng eval_rng(0);
    GraphEmbedding emb = encode_downstream(batch, model, /*train_mode=*/false, eval_rng);
    std::vector<int> ti, ai, bi;
    for (int id : test_ids) {
        ti.push_back(triples[id].t);
        ai.push_back(triples[id].a);
        bi.push_back(triples[id].b);
    }
    Tensor logits = task1_logits(gather_rows(emb.g, ti), gather_rows(emb.g, ai),
                                 gather_rows(emb.g, bi), model.params);
    int correct = 0;
    for (std::size_t i = 0; i < test_ids.size(); ++i) {
        int best = 0;
        for (int c = 1; c < 3; ++c) {
            if (logits.at(static_cast<int>(i), c) > logits.at(static_cast<int>(i), best)) {
                best = c;
            }
        }
        if (best == triples[test_ids[i]].truth) ++correct;
    }

    Task1Result result;
    result.test_accuracy =
        test_ids.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(test_ids.size());
    result.final_train_loss = final_loss;
    result.trainable_params = static_cast<long>(model.params.total_size());
    return result;
}

RegressionData read_regression_data(const std::string& dir) {
    namespace fs = std::filesystem;
    RegressionData data;

    std::ifstream cols(dir + "/columns.json");
    if (!cols) throw Error("cannot read " + dir + "/columns.json");
    nlohmann::json jc;
    try {
        cols >> jc;
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError(e.what());
    }
    for (auto it = jc.at("param_nodes").begin(); it != jc.at("param_nodes").end(); ++it) {
        data.param_nodes[it.key()] = it.value().get<std::vector<int>>();
    }

    for (const auto& entry : fs::directory_iterator(dir + "/graphs")) {
        if (entry.path().extension() != ".json") continue;
        std::ifstream in(entry.path());
        std::stringstream ss;
        ss << in.rdbuf();
        data.circuits[entry.path().stem().string()] = graph_from_json(ss.str());
    }

    std::ifstream csv(dir + "/rows.csv");
    if (!csv) throw Error("cannot read " + dir + "/rows.csv");
    std::string line;
    if (!std::getline(csv, line)) throw SchemaError("rows.csv is empty");
    std::vector<std::string> header;
    {
        std::stringstream ss(line);
        std::string tok;
        while (std::getline(ss, tok, ',')) header.push_back(tok);
    }
    if (header.empty() || header[0] != "circuit_id") {
        throw SchemaError("rows.csv must start with circuit_id");
    }
    for (std::size_t i = 1; i < header.size(); ++i) {
        if (header[i].rfind("param_", 0) == 0) ++data.n_params;
        else if (header[i].rfind("target_", 0) == 0) ++data.n_targets;
        else throw SchemaError("unknown column '" + header[i] + "'");
    }

    int line_no = 1;
    while (std::getline(csv, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string tok;
        RegressionRow row;
        std::getline(ss, tok, ',');
        row.circuit_id = tok;
        while (std::getline(ss, tok, ',')) {
            if (static_cast<int>(row.params.size()) < data.n_params) {
                row.params.push_back(std::stod(tok));
            } else {
                row.targets.push_back(std::stod(tok));
            }
        }
        if (static_cast<int>(row.params.size()) != data.n_params ||
            static_cast<int>(row.targets.size()) != data.n_targets) {
            throw SchemaError("rows.csv line " + std::to_string(line_no) + " has wrong arity");
        }
        if (!data.circuits.count(row.circuit_id)) {
            throw SchemaError("unknown circuit_id '" + row.circuit_id + "'");
        }
        if (!data.param_nodes.count(row.circuit_id) ||
            static_cast<int>(data.param_nodes[row.circuit_id].size()) != data.n_params) {
            throw SchemaError("param_nodes missing or wrong arity for '" + row.circuit_id + "'");
        }
        data.rows.push_back(std::move(row));
    }
    return data;
}

namespace {

struct RowBatch {
    BatchedGraph batch;
    Tensor param_enc;
};

RowBatch pack_rows(const RegressionData& data, const std::vector<int>& row_ids) {
    std::vector<const CircuitGraph*> graphs;
    std::vector<std::vector<int>> nodes;
    std::vector<std::vector<double>> values;
    for (int id : row_ids) {
        const auto& row = data.rows[id];
        graphs.push_back(&data.circuits.at(row.circuit_id));
        nodes.push_back(data.param_nodes.at(row.circuit_id));
        values.push_back(row.params);
    }
    RowBatch rb;
    rb.batch = BatchedGraph::pack(graphs);
    rb.param_enc = encode_params(graphs, nodes, values);
    return rb;
}

}  // namespace

RegressionResult train_regression(const RegressionData& data, const DownstreamConfig& config,
                                  const std::string& ckpt_path, const TaskTrainConfig& train) {
    if (data.rows.size() < 10) throw ConfigError("regression needs >= 10 rows");
    const int m = data.n_targets;

    Rng master(train.seed);
    Rng init_rng = master.fork(1);
    Rng split_rng = master.fork(2);
    Rng run_rng = master.fork(3);

    std::vector<int> order(data.rows.size());
    std::iota(order.begin(), order.end(), 0);
    split_rng.shuffle(order);
    const std::size_t n_test = data.rows.size() / 10;
    const std::size_t n_val = data.rows.size() / 10;
    std::vector<int> test_ids(order.begin(), order.begin() + static_cast<long>(n_test));
    std::vector<int> train_ids(order.begin() + static_cast<long>(n_test + n_val), order.end());

    // z-score targets with train-split statistics only
    std::vector<double> mu(m, 0.0), sigma(m, 0.0);
    for (int id : train_ids) {
        for (int j = 0; j < m; ++j) mu[j] += data.rows[id].targets[j];
    }
    for (auto& v : mu) v /= static_cast<double>(train_ids.size());
    for (int id : train_ids) {
        for (int j = 0; j < m; ++j) {
            const double d = data.rows[id].targets[j] - mu[j];
            sigma[j] += d * d;
        }
    }
    for (auto& v : sigma) {
        v = std::sqrt(v / static_cast<double>(train_ids.size()));
        if (v == 0.0) v = 1.0;
    }

    DownstreamModel model = init_downstream(config, ckpt_path, init_rng);
    init_decoder(model.params, config.hidden, m, init_rng);

    Adam adam(AdamConfig{.lr = train.lr});
    double final_loss = 0.0;

    for (int epoch = 1; epoch <= train.epochs; ++epoch) {
        Rng epoch_rng = run_rng.fork(static_cast<std::uint64_t>(epoch));
        epoch_rng.shuffle(train_ids);

        double loss_sum = 0.0;
        int steps = 0;
        for (std::size_t start = 0; start < train_ids.size();
             start += static_cast<std::size_t>(train.batch_size)) {
            const std::size_t stop =
                std::min(train_ids.size(), start + static_cast<std::size_t>(train.batch_size));
            std::vector<int> ids(train_ids.begin() + static_cast<long>(start),
                                 train_ids.begin() + static_cast<long>(stop));
            RowBatch rb = pack_rows(data, ids);
            GraphEmbedding emb =
                encode_downstream(rb.batch, model, /*train_mode=*/true, epoch_rng);
            Tensor pred = decode(emb.node_out, rb.param_enc, rb.batch, model.params);

            std::vector<double> y(ids.size() * static_cast<std::size_t>(m));
            for (std::size_t i = 0; i < ids.size(); ++i) {
                for (int j = 0; j < m; ++j) {
                    y[i * static_cast<std::size_t>(m) + j] =
                        (data.rows[ids[i]].targets[j] - mu[j]) / sigma[j];
                }
            }
            Tensor diff = sub(pred, Tensor::from_data(static_cast<int>(ids.size()), m,
                                                      std::move(y)));
            Tensor loss = mean_all(hadamard(diff, diff));
            const double lv = loss.item();
            if (!std::isfinite(lv)) {
                throw NumericError("regression: non-finite loss at epoch " + std::to_string(epoch));
            }
            model.params.zero_grad();
            backward(loss);
            adam.step(model.params);
            loss_sum += lv;
            ++steps;
        }
        final_loss = steps ? loss_sum / steps : std::nan("");
    }

    Rng eval_rng(0);
    RowBatch rb = pack_rows(data, test_ids);
    GraphEmbedding emb = encode_downstream(rb.batch, model, /*train_mode=*/false, eval_rng);
    Tensor pred = decode(emb.node_out, rb.param_enc, rb.batch, model.params);
    std::vector<std::vector<double>> pred_rows(test_ids.size()), truth_rows(test_ids.size());
    for (std::size_t i = 0; i < test_ids.size(); ++i) {
        pred_rows[i].resize(m);
        for (int j = 0; j < m; ++j) {
            pred_rows[i][j] = pred.at(static_cast<int>(i), j) * sigma[j] + mu[j];
        }
        truth_rows[i] = data.rows[test_ids[i]].targets;
    }

    RegressionResult result;
    result.test_r2 = r2_score(pred_rows, truth_rows);
    result.final_train_loss = final_loss;
    result.trainable_params = static_cast<long>(model.params.total_size());
    return result;
}

void write_embeddings_csv(const std::string& path, const std::vector<AugmentedSample>& samples,
                          const std::vector<std::vector<double>>& embeddings) {
    if (samples.size() != embeddings.size()) {
        throw ShapeMismatch("write_embeddings_csv", static_cast<int>(samples.size()), 0,
                            static_cast<int>(embeddings.size()), 0);
    }
    std::ofstream out(path);
    if (!out) throw Error("cannot write embeddings csv: " + path);
    const std::size_t h = embeddings.empty() ? 0 : embeddings[0].size();
    out << "sample_id,origin_id,polarity";
    for (std::size_t j = 0; j < h; ++j) out << ",dim_" << j;
    out << '\n';
    for (std::size_t i = 0; i < samples.size(); ++i) {
        out << samples[i].id << ',' << samples[i].origin_id << ','
            << polarity_name(samples[i].polarity);
        for (double v : embeddings[i]) out << ',' << format_double(v);
        out << '\n';
    }
}

}  // namespace dice
