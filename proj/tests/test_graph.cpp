#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "dice/graph.hpp"

using namespace dice;

namespace {

const char* kInverter = R"(vdd vdd 0 1.8
mp1 out in vdd vdd PMOS 2u
mn1 out in 0 0 NMOS 1u
cl out 0 10f
ci in 0 2f
)";

CircuitGraph inverter_graph() { return build_graph(parse_netlist(kInverter, "inverter")); }

}  // namespace

TEST_CASE("inverter graph structure") {
    CircuitGraph g = inverter_graph();
    // nets first (vdd, 0, out, in), then devices (mp1, mn1, cl, ci)
    REQUIRE(g.num_nodes() == 8);
    CHECK(g.nodes[0] == kPowerNet);
    CHECK(g.nodes[1] == kGroundNet);
    CHECK(g.nodes[2] == kOtherNet);
    CHECK(g.nodes[3] == kOtherNet);
    CHECK(g.nodes[4] == kPmosDevice);
    CHECK(g.nodes[5] == kNmosDevice);
    CHECK(g.nodes[6] == kCapacitorDevice);
    CHECK(g.nodes[7] == kCapacitorDevice);
    // 2 MOS x (2 path pairs + gate + bulk) + 2 caps x 2 path pairs
    CHECK(g.num_arcs() == 2 * (4 + 2) + 2 * 4);
    // drain pair first: mp1 drain is "out" (node 2)
    CHECK(g.arcs[0] == Arc{2, 4, kCurrentPath});
    CHECK(g.arcs[1] == Arc{4, 2, kCurrentPath});
    // gate arcs carry the device-specific type and point into the device
    int pmos_gates = 0, nmos_gates = 0;
    for (const auto& a : g.arcs) {
        if (a.etype == kPmosGate) {
            ++pmos_gates;
            CHECK(a.src == 3);
            CHECK(a.dst == 4);
        }
        if (a.etype == kNmosGate) {
            ++nmos_gates;
            CHECK(a.src == 3);
            CHECK(a.dst == 5);
        }
    }
    CHECK(pmos_gates == 1);
    CHECK(nmos_gates == 1);
    CHECK(g.device_params[4] == 2e-6);
    CHECK(!g.device_params[0].has_value());
    CHECK_NOTHROW(check_graph_invariants(g));
}

TEST_CASE("voltage supply consumed, power net typed") {
    CircuitGraph g = build_graph(parse_netlist("v1 p 0 1.8\nr1 p 0 1k\n"));
    CHECK(g.num_nodes() == 3);  // p, 0, r1
    CHECK(g.nodes[0] == kPowerNet);
    // zero-volt supply marks no power net
    CircuitGraph g0 = build_graph(parse_netlist("v1 p 0 0\nr1 p 0 1k\n"));
    CHECK(g0.nodes[0] == kOtherNet);
}

TEST_CASE("build errors") {
    CHECK_THROWS_AS(build_graph(parse_netlist("r1 a a 1k\n")), DegenerateDevice);
    CHECK_THROWS_AS(build_graph(parse_netlist("m1 d g d b NMOS 1u\nr1 d g 1k\nr2 d b 1k\n")),
                    DegenerateDevice);
    CHECK_THROWS_AS(build_graph(parse_netlist("r1 a b 1k\nr2 c d 1k\n")), DisconnectedCircuit);
    CHECK_THROWS(build_graph(parse_netlist("v1 p n 1.8\nr1 p n 1k\n")));  // minus not ground
}

TEST_CASE("floating terminal warning vs error") {
    const char* text = "r1 a b 1k\nr2 b 0 1k\nc1 a 0 1p\nr3 b dangling 1k\n";
    std::vector<std::string> warnings;
    build_graph(parse_netlist(text), {}, &warnings);
    REQUIRE(warnings.size() == 1);
    CHECK(warnings[0].find("dangling") != std::string::npos);
    BuildOptions strict;
    strict.floating_is_error = true;
    CHECK_THROWS_AS(build_graph(parse_netlist(text), strict), FloatingTerminal);
}

TEST_CASE("json round trip") {
    CircuitGraph g = inverter_graph();
    CircuitGraph back = graph_from_json(graph_to_json(g, "inverter"));
    CHECK(g == back);
    CHECK_THROWS_AS(graph_from_json("{\"nodes\": [0], \"bogus\": 1}"), SchemaError);
    CHECK_THROWS_AS(graph_from_json("not json"), SchemaError);
    CHECK_THROWS_AS(graph_from_json("{\"nodes\": [99], \"arcs\": [], \"params\": {}}"),
                    SchemaError);
    CHECK_THROWS_AS(
        graph_from_json("{\"nodes\": [0, 6], \"arcs\": [[0, 5, 0]], \"params\": {\"1\": 1.0}}"),
        SchemaError);
}

TEST_CASE("init features one-hot") {
    CircuitGraph g = inverter_graph();
    FeatureInit f = init_features(g);
    REQUIRE(f.num_nodes == g.num_nodes());
    REQUIRE(f.num_arcs == g.num_arcs());
    for (int i = 0; i < f.num_nodes; ++i) {
        double row_sum = 0.0;
        for (int c = 0; c < kNumNodeTypes; ++c) {
            row_sum += f.node_onehots[static_cast<std::size_t>(i) * kNumNodeTypes + c];
        }
        CHECK(row_sum == 1.0);
        CHECK(f.node_onehots[static_cast<std::size_t>(i) * kNumNodeTypes + g.nodes[i]] == 1.0);
    }
    for (int i = 0; i < f.num_arcs; ++i) {
        CHECK(f.edge_onehots[static_cast<std::size_t>(i) * kNumEdgeTypes + g.arcs[i].etype] ==
              1.0);
    }
}

TEST_CASE("whole corpus builds and satisfies invariants") {
    namespace fs = std::filesystem;
    int count = 0;
    for (const auto& entry : fs::directory_iterator(CORPUS_DIR)) {
        if (entry.path().extension() != ".sp") continue;
        std::ifstream in(entry.path());
        std::stringstream ss;
        ss << in.rdbuf();
        CircuitGraph g = build_graph(parse_netlist(ss.str(), entry.path().stem().string()));
        CHECK_NOTHROW(check_graph_invariants(g));
        ++count;
    }
    CHECK(count == 12);
}
