#include <doctest.h>

#include <cmath>

#include "dice/contrastive.hpp"
#include "gradcheck.hpp"

using namespace dice;

namespace {

std::vector<std::vector<double>> unit_rows(const Tensor& z) {
    std::vector<std::vector<double>> rows(z.rows());
    for (int i = 0; i < z.rows(); ++i) {
        double n = 0.0;
        for (int j = 0; j < z.cols(); ++j) n += z.at(i, j) * z.at(i, j);
        n = std::sqrt(n);
        for (int j = 0; j < z.cols(); ++j) rows[i].push_back(z.at(i, j) / n);
    }
    return rows;
}

Tensor randn(int r, int c, Rng& rng, bool requires_grad = false) {
    std::vector<double> data(static_cast<std::size_t>(r) * c);
    for (auto& v : data) v = rng.normal();
    return Tensor::from_data(r, c, std::move(data), requires_grad);
}

// Random batch: `origins` circuit ids, random polarity per sample.
RelationIndex random_relations(int n, int origins, Rng& rng, std::vector<int>* ids = nullptr) {
    RelationIndex idx;
    for (int i = 0; i < n; ++i) {
        const int o = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(origins)));
        const double u = rng.uniform();
        Polarity p = u < 0.5 ? Polarity::Positive : (u < 0.75 ? Polarity::Negative
                                                              : Polarity::Original);
        idx.add("o" + std::to_string(o), p);
    }
    if (ids) {
        ids->resize(n);
        for (int i = 0; i < n; ++i) (*ids)[i] = i;
    }
    return idx;
}

bool every_anchor_has_positive(const RelationIndex& idx) {
    for (std::size_t i = 0; i < idx.size(); ++i) {
        bool ok = false;
        for (std::size_t j = 0; j < idx.size() && !ok; ++j) {
            if (i != j && idx.relation(i, j) == Relation::Positive) ok = true;
        }
        if (!ok) return false;
    }
    return true;
}

}  // namespace

TEST_CASE("nt_xent single pair is zero") {
    Tensor z = Tensor::from_data(2, 3, {1, 0, 0, 0.3, 0.4, 0.5});
    CHECK(nt_xent(z, {1, 0}, 0.5).item() == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("nt_xent orthonormal closed form is ln 3") {
    Tensor z = Tensor::from_data(4, 4, {1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1});
    const double loss = nt_xent(z, {1, 0, 3, 2}, 1.0).item();
    CHECK(std::abs(loss - std::log(3.0)) < 1e-9);
}

TEST_CASE("nt_xent is non-negative on random batches") {
    Rng rng(1);
    for (int rep = 0; rep < 10; ++rep) {
        Tensor z = randn(6, 5, rng);
        CHECK(nt_xent(z, {1, 0, 3, 2, 5, 4}, 0.1).item() >= -1e-12);
    }
    CHECK_THROWS_AS(nt_xent(randn(2, 3, rng), {0, 0}, 1.0), ConfigError);
}

TEST_CASE("simsiam bounds with identity predictor") {
    auto identity = [](const Tensor& x) { return x; };
    Tensor z = Tensor::from_data(2, 3, {1, 2, 3, -1, 0, 2});
    CHECK(simsiam(z, z, identity).item() == doctest::Approx(-1.0).epsilon(1e-12));
    Tensor neg = scalar_mul(z, -1.0);
    CHECK(simsiam(z, neg, identity).item() == doctest::Approx(1.0).epsilon(1e-12));
    Rng rng(2);
    for (int rep = 0; rep < 5; ++rep) {
        const double v = simsiam(randn(4, 6, rng), randn(4, 6, rng), identity).item();
        CHECK(v >= -1.0 - 1e-12);
        CHECK(v <= 1.0 + 1e-12);
    }
}

TEST_CASE("simsiam stop-gradient side receives no gradient") {
    Rng rng(3);
    Tensor z1 = randn(3, 4, rng, true);
    Tensor z2 = randn(3, 4, rng, true);
    // Only the z1->predictor path is live; z2 enters through stop_gradient.
    Tensor p1 = l2_normalize_rows(z1);
    Tensor t2 = l2_normalize_rows(stop_gradient(z2));
    Tensor loss = scalar_mul(mean_all(row_sum(hadamard(p1, t2))), -1.0);
    backward(loss);
    for (double gz : z2.grad()) CHECK(gz == 0.0);
    bool any = false;
    for (double gz : z1.grad()) {
        if (gz != 0.0) any = true;
    }
    CHECK(any);
}

TEST_CASE("dice naive closed forms with identical embeddings") {
    std::vector<std::vector<double>> embs(4, {1.0, 0.0});
    // 2 origins x 2 positives: N+ = 1, N!= = 2 per anchor
    RelationIndex idx;
    idx.add("a", Polarity::Positive);
    idx.add("a", Polarity::Positive);
    idx.add("b", Polarity::Positive);
    idx.add("b", Polarity::Positive);
    auto rel = [&](int i, int j) { return idx.relation(i, j); };
    const double t = 0.3;
    CHECK(dice_loss_naive(embs, rel, t, t, t) == doctest::Approx(std::log(3.0)).epsilon(1e-12));

    // single origin: loss = log N+ = log 3 for 4 identical samples
    RelationIndex one;
    for (int i = 0; i < 4; ++i) one.add("a", Polarity::Positive);
    auto rel1 = [&](int i, int j) { return one.relation(i, j); };
    CHECK(dice_loss_naive(embs, rel1, t, t, t) == doctest::Approx(std::log(3.0)).epsilon(1e-12));
}

TEST_CASE("dice naive throws on anchors without positives") {
    std::vector<std::vector<double>> embs(2, {1.0, 0.0});
    RelationIndex idx;
    idx.add("a", Polarity::Positive);
    idx.add("b", Polarity::Positive);
    auto rel = [&](int i, int j) { return idx.relation(i, j); };
    CHECK_THROWS_AS(dice_loss_naive(embs, rel, 0.1, 0.2, 0.1), EmptyPositiveSet);
}

TEST_CASE("masked dice equals the naive oracle") {
    Rng rng(4);
    int tried = 0;
    while (tried < 20) {
        const int n = 4 + static_cast<int>(rng.uniform_index(12));
        std::vector<int> ids;
        RelationIndex idx = random_relations(n, 3, rng, &ids);
        if (!every_anchor_has_positive(idx)) continue;
        ++tried;
        Tensor z = randn(n, 6, rng);
        BatchMasks masks = build_masks(idx, ids);
        const double masked = dice_loss_masked(z, masks, 0.05, 0.2, 0.05).item();
        auto rel = [&](int i, int j) { return idx.relation(i, j); };
        const double naive = dice_loss_naive(unit_rows(z), rel, 0.05, 0.2, 0.05);
        CHECK(std::abs(masked - naive) < 1e-10);
    }
}

TEST_CASE("masked dice respects batch permutation") {
    Rng rng(5);
    RelationIndex idx;
    idx.add("a", Polarity::Positive);
    idx.add("a", Polarity::Original);
    idx.add("b", Polarity::Positive);
    idx.add("b", Polarity::Original);
    idx.add("b", Polarity::Positive);
    Tensor z = randn(5, 4, rng);
    std::vector<int> ids = {0, 1, 2, 3, 4};
    const double base = dice_loss_masked(z, build_masks(idx, ids), 0.05, 0.2, 0.05).item();

    const std::vector<int> perm = {3, 0, 4, 1, 2};
    std::vector<double> pdata(5 * 4);
    for (int i = 0; i < 5; ++i) {
        for (int j = 0; j < 4; ++j) pdata[static_cast<std::size_t>(i) * 4 + j] = z.at(perm[i], j);
    }
    std::vector<int> pids;
    for (int p : perm) pids.push_back(p);
    const double permuted = dice_loss_masked(Tensor::from_data(5, 4, std::move(pdata)),
                                             build_masks(idx, pids), 0.05, 0.2, 0.05)
                                .item();
    CHECK(base == doctest::Approx(permuted).epsilon(1e-12));
}

TEST_CASE("dice gradient w.r.t. negative-pair similarities is exactly zero") {
    Rng rng(6);
    for (int rep = 0; rep < 10; ++rep) {
        std::vector<int> ids;
        RelationIndex idx = random_relations(10, 2, rng, &ids);
        if (!every_anchor_has_positive(idx)) continue;
        BatchMasks masks = build_masks(idx, ids);
        // independent similarity entries as the leaf
        Tensor s = randn(10, 10, rng, true);
        Tensor loss = dice_loss_from_sim(s, masks, 0.05, 0.2, 0.05);
        backward(loss);
        for (int i = 0; i < 10; ++i) {
            for (int j = 0; j < 10; ++j) {
                if (i != j && idx.relation(i, j) == Relation::Negative) {
                    CHECK(s.grad()[static_cast<std::size_t>(i) * 10 + j] == 0.0);
                }
            }
        }
    }
}

TEST_CASE("masked dice throws on empty positive rows") {
    RelationIndex idx;
    idx.add("a", Polarity::Positive);
    idx.add("b", Polarity::Positive);
    BatchMasks masks = build_masks(idx, {0, 1});
    Tensor z = Tensor::from_data(2, 2, {1, 0, 0, 1});
    CHECK_THROWS_AS(dice_loss_masked(z, masks, 0.05, 0.2, 0.05), EmptyPositiveRow);
}

TEST_CASE("balance_batch takes the per-origin minimum") {
    RelationIndex idx;
    std::vector<int> batch;
    auto fill = [&](const std::string& o, int count) {
        for (int k = 0; k < count; ++k) {
            batch.push_back(static_cast<int>(idx.size()));
            idx.add(o, Polarity::Positive);
        }
    };
    fill("A", 5);
    fill("B", 3);
    fill("C", 7);
    Rng rng(7);
    auto out = balance_batch(batch, idx, rng);
    CHECK(out.size() == 9);
    int a = 0, b = 0, c = 0;
    for (int id : out) {
        const std::string& o = idx.origin(id);
        if (o == "A") ++a;
        else if (o == "B") ++b;
        else ++c;
    }
    CHECK(a == 3);
    CHECK(b == 3);
    CHECK(c == 3);

    Rng r1(9), r2(9);
    CHECK(balance_batch(batch, idx, r1) == balance_batch(batch, idx, r2));

    RelationIndex single;
    single.add("X", Polarity::Original);
    Rng r3(0);
    CHECK(balance_batch({0}, single, r3) == std::vector<int>{0});
}

TEST_CASE("relation_stats separates the classes") {
    RelationIndex idx;
    idx.add("a", Polarity::Original);
    idx.add("a", Polarity::Positive);
    idx.add("a", Polarity::Negative);
    idx.add("b", Polarity::Original);
    std::vector<std::vector<double>> embs = {
        {1, 0}, {1, 0.1}, {0, 1}, {-1, 0}};
    RelationStats st = relation_stats(embs, idx, {0, 1, 2, 3});
    CHECK(st.pos_n == 1);
    CHECK(st.neg_n == 2);
    CHECK(st.noneq_n == 3);
    CHECK(st.pos_mean > 0.9);
    CHECK(st.neg_mean < st.pos_mean);
}

TEST_CASE("desk pretrain run decreases loss and is deterministic") {
    // tiny corpus: two RC variants
    std::vector<CircuitGraph> corpus = {
        build_graph(parse_netlist("i1 0 in 1m\nr1 in out 1k\nc1 out 0 1n\n", "rc")),
        build_graph(parse_netlist("vdd vdd 0 1.8\nr1 vdd out 10k\nr2 out 0 10k\n", "div")),
    };
    auto samples = generate_dataset(corpus, 12, 12, 3, 3);
    RelationIndex rel = build_relation_index(samples);

    EncoderSpec spec;
    spec.depth = 1;
    spec.hidden = 16;
    spec.dropout = 0.0;
    LossConfig loss;
    TrainConfig train;
    train.epochs = 20;
    train.batch_size = 32;
    train.seed = 11;
    train.holdout_fraction = 0.2;

    PretrainResult r1 = pretrain(samples, rel, spec, loss, train);
    REQUIRE(static_cast<int>(r1.metrics.size()) == train.epochs);
    CHECK(r1.metrics.back().mean_loss < r1.metrics.front().mean_loss);

    PretrainResult r2 = pretrain(samples, rel, spec, loss, train);
    for (std::size_t e = 0; e < r1.metrics.size(); ++e) {
        CHECK(r1.metrics[e].mean_loss == r2.metrics[e].mean_loss);
        CHECK(r1.metrics[e].pos_mean == r2.metrics[e].pos_mean);
    }
    for (const auto& name : r1.params.names()) {
        CHECK(r1.params.get(name).data() == r2.params.get(name).data());
    }
    CHECK_THROWS_AS(pretrain({}, RelationIndex{}, spec, loss, train), EmptyCorpus);
}
