#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "dice/downstream.hpp"

using namespace dice;

namespace {

CircuitGraph rc_graph() {
    return build_graph(parse_netlist("i1 0 in 1m\nr1 in out 1k\nc1 out 0 1p\n", "rc"));
}

std::string make_ckpt(int depth, int hidden) {
    EncoderSpec spec;
    spec.depth = depth;
    spec.hidden = hidden;
    spec.dropout = 0.0;
    Rng rng(21);
    ParamStore params = init_encoder_params(spec, rng);
    const std::string path =
        (std::filesystem::temp_directory_path() / "downstream_test_ckpt.json").string();
    save_checkpoint(path, params, encoder_spec_to_json(spec));
    return path;
}

}  // namespace

TEST_CASE("parameter encoding rows") {
    CircuitGraph g = rc_graph();  // nets 0,in,out then i1,r1,c1
    Tensor enc = encode_params({&g});
    REQUIRE(enc.rows() == g.num_nodes());
    REQUIRE(enc.cols() == kNumNodeTypes);
    // net rows all zero
    for (int v = 0; v < 3; ++v) {
        for (int c = 0; c < kNumNodeTypes; ++c) CHECK(enc.at(v, c) == 0.0);
    }
    // c1 is node 5, param 1e-12 -> hot entry -ln(1e-12) at the capacitor slot
    CHECK(enc.at(5, kCapacitorDevice) == doctest::Approx(-std::log(1e-12)).epsilon(1e-12));
    CHECK(enc.at(5, kCapacitorDevice) == doctest::Approx(27.631).epsilon(1e-3));
    // device rows have exactly one nonzero entry (param != 1)
    int nonzero = 0;
    for (int c = 0; c < kNumNodeTypes; ++c) {
        if (enc.at(4, c) != 0.0) ++nonzero;
    }
    CHECK(nonzero == 1);
}

TEST_CASE("parameter encoding overrides and errors") {
    CircuitGraph g = rc_graph();
    Tensor enc = encode_params({&g}, {{4}}, {{1.0}});  // r1 forced to 1 ohm
    for (int c = 0; c < kNumNodeTypes; ++c) CHECK(enc.at(4, c) == 0.0);  // -ln 1 = 0
    CHECK_THROWS_AS(encode_params({&g}, {{4}}, {{-2.0}}), NonPositiveParam);
    CHECK_THROWS_AS(encode_params({&g}, {{0}}, {{1.0}}), ConfigError);  // net node
}

TEST_CASE("task1 truth table and symmetry") {
    const std::vector<std::string> dig = {"digital", "logic-gate"};
    const std::vector<std::string> ana = {"analog"};
    const std::vector<std::string> mix = {"digital", "amplifier"};
    CHECK(task1_truth(dig, dig, ana) == 0);
    CHECK(task1_truth(dig, ana, dig) == 1);
    CHECK(task1_truth(dig, mix, mix) == 2);
    CHECK(task1_truth(ana, dig, mix) == 2);  // 0 vs 0 shared
    // swapping candidates swaps classes 0<->1 and fixes 2
    for (const auto* a : {&dig, &ana, &mix}) {
        for (const auto* b : {&dig, &ana, &mix}) {
            const int fwd = task1_truth(dig, *a, *b);
            const int rev = task1_truth(dig, *b, *a);
            if (fwd == 2) CHECK(rev == 2);
            else CHECK(rev == 1 - fwd);
        }
    }
}

TEST_CASE("r2 score definition") {
    std::vector<std::vector<double>> truth = {{1, 10}, {2, 20}, {3, 30}, {4, 40}};
    CHECK(r2_score(truth, truth) == std::vector<double>{1.0, 1.0});
    std::vector<std::vector<double>> mean_pred(4, {2.5, 25.0});
    const auto r2 = r2_score(mean_pred, truth);
    CHECK(r2[0] == 0.0);  // exact by definition
    CHECK(r2[1] == 0.0);
}

TEST_CASE("cross entropy of uniform logits is ln C") {
    Tensor logits = Tensor::zeros(4, 3);
    CHECK(cross_entropy(logits, {0, 1, 2, 0}).item() ==
          doctest::Approx(std::log(3.0)).epsilon(1e-12));
    CHECK_THROWS_AS(cross_entropy(logits, {0, 1}), ShapeMismatch);
    CHECK_THROWS_AS(cross_entropy(logits, {0, 1, 2, 5}), ConfigError);
}

TEST_CASE("downstream config validation") {
    Rng rng(1);
    DownstreamConfig cfg;
    cfg.d_dice = 2;
    CHECK_THROWS_AS(init_downstream(cfg, "", rng), MissingCheckpoint);

    const std::string ckpt = make_ckpt(/*depth=*/2, /*hidden=*/8);
    DownstreamConfig bad = cfg;
    bad.d_dice = 1;  // checkpoint depth is 2
    CHECK_THROWS_AS(init_downstream(bad, ckpt, rng), ConfigError);

    cfg.hidden = 8;
    CHECK_NOTHROW(init_downstream(cfg, ckpt, rng));
    std::filesystem::remove(ckpt);
}

TEST_CASE("frozen branch stays frozen under training steps") {
    const std::string ckpt = make_ckpt(2, 8);
    DownstreamConfig cfg;
    cfg.d_dice = 2;
    cfg.d_par = 0;
    cfg.d_series = 0;
    cfg.hidden = 8;
    cfg.dropout = 0.0;
    Rng rng(2);
    DownstreamModel model = init_downstream(cfg, ckpt, rng);

    std::vector<std::vector<double>> frozen_before;
    for (const auto& name : model.frozen.names()) {
        frozen_before.push_back(model.frozen.get(name).data());
    }

    CircuitGraph g = rc_graph();
    BatchedGraph batch = BatchedGraph::pack(g);
    Adam adam(AdamConfig{.lr = 1e-2});
    for (int step = 0; step < 5; ++step) {
        Rng fwd(0);
        GraphEmbedding emb = encode_downstream(batch, model, true, fwd);
        Tensor loss = mean_all(hadamard(emb.g, emb.g));
        model.params.zero_grad();
        model.frozen.zero_grad();
        backward(loss);
        adam.step(model.params);
        // gradient of the frozen branch is exactly zero
        for (const auto& name : model.frozen.names()) {
            for (double gv : model.frozen.get(name).grad()) CHECK(gv == 0.0);
        }
    }
    std::size_t k = 0;
    for (const auto& name : model.frozen.names()) {
        CHECK(model.frozen.get(name).data() == frozen_before[k++]);  // byte-identical
    }
    std::filesystem::remove(ckpt);
}

TEST_CASE("zero-depth model is the input projection only") {
    DownstreamConfig cfg;
    cfg.hidden = 8;
    cfg.dropout = 0.0;
    Rng rng(3);
    DownstreamModel model = init_downstream(cfg, "", rng);
    // only the two input projections exist
    for (const auto& name : model.params.names()) {
        const bool is_proj =
            name.rfind("par.node_proj", 0) == 0 || name.rfind("par.edge_proj", 0) == 0;
        CHECK(is_proj);
    }
    CircuitGraph g = rc_graph();
    BatchedGraph batch = BatchedGraph::pack(g);
    Rng fwd(0);
    GraphEmbedding emb = encode_downstream(batch, model, false, fwd);
    CHECK(emb.g.rows() == 1);
    CHECK(emb.g.cols() == 8);

    // matches a hand-assembled projection + readout
    EncoderSpec spec;
    spec.depth = 0;
    spec.hidden = 8;
    spec.dropout = 0.0;
    Rng r2(0);
    Tensor h = mlp2(batch.node_onehots(), model.params, "par.node_proj", spec, false, r2);
    Tensor e = mlp2(batch.edge_onehots(), model.params, "par.edge_proj", spec, false, r2);
    Tensor expect = add(segment_sum(h, batch.node_graph, 1), segment_sum(e, batch.arc_graph, 1));
    for (int j = 0; j < 8; ++j) CHECK(emb.g.at(0, j) == doctest::Approx(expect.at(0, j)));
}

TEST_CASE("regression data round trip and training smoke") {
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "regr_test_data";
    fs::remove_all(dir);
    fs::create_directories(dir / "graphs");

    CircuitGraph g = rc_graph();
    {
        std::ofstream f(dir / "graphs/rc.json");
        f << graph_to_json(g, "rc");
    }
    {
        // params map to r1 (node 4) and c1 (node 5)
        std::ofstream f(dir / "columns.json");
        f << R"({"param_nodes": {"rc": [4, 5]}})";
    }
    {
        std::ofstream f(dir / "rows.csv");
        f << "circuit_id,param_1,param_2,target_1\n";
        Rng rng(5);
        for (int i = 0; i < 40; ++i) {
            const double r = 100.0 * (1.0 + rng.uniform());
            const double c = 1e-12 * (1.0 + rng.uniform());
            f << "rc," << r << ',' << c << ',' << r * c * 1e9 << "\n";
        }
    }

    RegressionData data = read_regression_data(dir.string());
    CHECK(data.n_params == 2);
    CHECK(data.n_targets == 1);
    CHECK(data.rows.size() == 40);
    CHECK(data.circuits.count("rc") == 1);

    DownstreamConfig cfg;
    cfg.hidden = 8;
    cfg.dropout = 0.0;
    TaskTrainConfig train;
    train.epochs = 3;
    train.batch_size = 16;
    train.seed = 1;
    RegressionResult r = train_regression(data, cfg, "", train);
    CHECK(r.test_r2.size() == 1);
    CHECK(std::isfinite(r.final_train_loss));
    fs::remove_all(dir);
}

TEST_CASE("embedding export format") {
    namespace fs = std::filesystem;
    const std::string path = (fs::temp_directory_path() / "emb_test.csv").string();
    AugmentedSample s;
    s.id = "rc#orig";
    s.origin_id = "rc";
    s.polarity = Polarity::Original;
    write_embeddings_csv(path, {s}, {{1.0, -0.5}});
    std::ifstream in(path);
    std::string header, row;
    std::getline(in, header);
    std::getline(in, row);
    CHECK(header == "sample_id,origin_id,polarity,dim_0,dim_1");
    CHECK(row == "rc#orig,rc,original,1,-0.5");
    fs::remove(path);
}
