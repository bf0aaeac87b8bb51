#include "dice/contrastive.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "dice/netlist.hpp"

namespace dice {

const char* loss_name(LossKind k) {
    switch (k) {
        case LossKind::NtXent: return "nt_xent";
        case LossKind::SimSiam: return "simsiam";
        case LossKind::Dice: return "dice";
    }
    return "?";
}

LossKind loss_from_name(const std::string& s) {
    if (s == "nt_xent") return LossKind::NtXent;
    if (s == "simsiam") return LossKind::SimSiam;
    if (s == "dice") return LossKind::Dice;
    throw ConfigError("unknown loss kind '" + s + "'");
}

BatchMasks build_masks(const RelationIndex& relations, const std::vector<int>& batch_ids) {
    const int n = static_cast<int>(batch_ids.size());
    std::vector<double> pos(static_cast<std::size_t>(n) * n, 0.0);
    std::vector<double> noneq(static_cast<std::size_t>(n) * n, 0.0);
    for (int i = 0; i < n; ++i) {
        for (int j = i + 1; j < n; ++j) {
            const Relation r = relations.relation(batch_ids[i], batch_ids[j]);
            std::vector<double>* m = nullptr;
            if (r == Relation::Positive) m = &pos;
            else if (r == Relation::NonEqual) m = &noneq;
            if (m) {
                (*m)[static_cast<std::size_t>(i) * n + j] = 1.0;
                (*m)[static_cast<std::size_t>(j) * n + i] = 1.0;
            }
        }
    }
    BatchMasks masks;
    masks.size = n;
    masks.m_pos = Tensor::from_data(n, n, std::move(pos));
    masks.m_noneq = Tensor::from_data(n, n, std::move(noneq));
    return masks;
}

Tensor nt_xent(const Tensor& z, const std::vector<int>& pairing, double tau) {
    const int n = z.rows();
    if (static_cast<int>(pairing.size()) != n) {
        throw ConfigError("nt_xent pairing length != batch size");
    }
    for (int i = 0; i < n; ++i) {
        if (pairing[i] < 0 || pairing[i] >= n || pairing[i] == i) {
            throw ConfigError("nt_xent pairing entry out of range or self");
        }
    }
    Tensor zn = l2_normalize_rows(z);
    Tensor s = matmul_nt(zn, zn);

    std::vector<double> offdiag(static_cast<std::size_t>(n) * n, 1.0);
    std::vector<double> pair_mask(static_cast<std::size_t>(n) * n, 0.0);
    for (int i = 0; i < n; ++i) {
        offdiag[static_cast<std::size_t>(i) * n + i] = 0.0;
        pair_mask[static_cast<std::size_t>(i) * n + pairing[i]] = 1.0;
    }
    Tensor off = Tensor::from_data(n, n, std::move(offdiag));
    Tensor pm = Tensor::from_data(n, n, std::move(pair_mask));

    Tensor denom = row_sum(hadamard(off, exp_elem(scalar_mul(s, 1.0 / tau))));
    Tensor s_pos = row_sum(hadamard(pm, scalar_mul(s, 1.0 / tau)));
    return mean_all(sub(log_elem(denom), s_pos));
}

Tensor simsiam(const Tensor& z1, const Tensor& z2,
               const std::function<Tensor(const Tensor&)>& predictor) {
    Tensor p1 = l2_normalize_rows(predictor(z1));
    Tensor p2 = l2_normalize_rows(predictor(z2));
    Tensor t1 = l2_normalize_rows(stop_gradient(z1));
    Tensor t2 = l2_normalize_rows(stop_gradient(z2));
    Tensor c1 = mean_all(row_sum(hadamard(p1, t2)));
    Tensor c2 = mean_all(row_sum(hadamard(p2, t1)));
    return scalar_mul(add(c1, c2), -0.5);
}

void init_simsiam_predictor(ParamStore& params, int hidden, Rng& rng) {
    init_linear(params, "pred.l1", hidden, hidden, rng);
    init_linear(params, "pred.l2", hidden, hidden, rng);
}

Tensor simsiam_predictor(const Tensor& x, ParamStore& params) {
    return linear(gelu(linear(x, params, "pred.l1")), params, "pred.l2");
}

double dice_loss_naive(const std::vector<std::vector<double>>& embeddings,
                       const std::function<Relation(int, int)>& relation, double tau,
                       double tau_p, double tau_n) {
    const int n = static_cast<int>(embeddings.size());
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
        std::vector<int> pos, noneq;
        for (int j = 0; j < n; ++j) {
            if (j == i) continue;
            const Relation r = relation(i, j);
            if (r == Relation::Positive) pos.push_back(j);
            else if (r == Relation::NonEqual) noneq.push_back(j);
        }
        if (pos.empty()) throw EmptyPositiveSet(i);
        double den = 0.0;
        for (int j : pos) den += std::exp(cosine(embeddings[i], embeddings[j]) / tau_p);
        for (int j : noneq) den += std::exp(cosine(embeddings[i], embeddings[j]) / tau_n);
        double anchor = 0.0;
        for (int j : pos) {
            anchor += -(cosine(embeddings[i], embeddings[j]) / tau - std::log(den));
        }
        total += anchor / static_cast<double>(pos.size());
    }
    return total / static_cast<double>(n);
}

Tensor dice_loss_from_sim(const Tensor& s, const BatchMasks& masks, double tau, double tau_p,
                          double tau_n) {
    const int n = masks.size;
    if (s.rows() != n || s.cols() != n) {
        throw ShapeMismatch("dice_loss", s.rows(), s.cols(), n, n);
    }
    std::vector<double> counts(n, 0.0);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) counts[i] += masks.m_pos.at(i, j);
        if (counts[i] < 1.0) throw EmptyPositiveRow(i);
    }
    Tensor n_pos = Tensor::from_data(n, 1, std::move(counts));
    Tensor denom = add(row_sum(hadamard(masks.m_pos, exp_elem(scalar_mul(s, 1.0 / tau_p)))),
                       row_sum(hadamard(masks.m_noneq, exp_elem(scalar_mul(s, 1.0 / tau_n)))));
    Tensor rs = row_sum(hadamard(masks.m_pos, scalar_mul(s, 1.0 / tau)));
    return mean_all(sub(log_elem(denom), divide(rs, n_pos)));
}

Tensor dice_loss_masked(const Tensor& z, const BatchMasks& masks, double tau, double tau_p,
                        double tau_n) {
    Tensor zn = l2_normalize_rows(z);
    return dice_loss_from_sim(matmul_nt(zn, zn), masks, tau, tau_p, tau_n);
}

std::vector<int> balance_batch(const std::vector<int>& batch_ids,
                               const RelationIndex& relations, Rng& rng) {
    // Group by origin, preserving first-appearance order of both origins and
    // members so the result is deterministic given the rng.
    std::vector<std::string> order;
    std::unordered_map<std::string, std::vector<int>> groups;
    for (int id : batch_ids) {
        const std::string& o = relations.origin(id);
        auto [it, inserted] = groups.try_emplace(o);
        if (inserted) order.push_back(o);
        it->second.push_back(id);
    }
    std::size_t m = batch_ids.size();
    for (const auto& o : order) m = std::min(m, groups[o].size());

    std::vector<int> out;
    out.reserve(m * order.size());
    for (const auto& o : order) {
        auto& g = groups[o];
        if (g.size() > m) {
            rng.shuffle(g);
            g.resize(m);
            std::sort(g.begin(), g.end());
        }
        out.insert(out.end(), g.begin(), g.end());
    }
    return out;
}

namespace {

struct Accum {
    double sum = 0.0, sumsq = 0.0;
    long n = 0;
    void add(double x) {
        sum += x;
        sumsq += x * x;
        ++n;
    }
    double mean() const { return n ? sum / n : std::nan(""); }
    double stdev() const {
        if (!n) return std::nan("");
        const double m = sum / n;
        return std::sqrt(std::max(0.0, sumsq / n - m * m));
    }
};

}  // namespace

RelationStats relation_stats(const std::vector<std::vector<double>>& embeddings,
                             const RelationIndex& relations, const std::vector<int>& ids) {
    Accum pos, noneq, neg;
    for (std::size_t a = 0; a < ids.size(); ++a) {
        for (std::size_t b = a + 1; b < ids.size(); ++b) {
            const double c = cosine(embeddings[a], embeddings[b]);
            switch (relations.relation(ids[a], ids[b])) {
                case Relation::Positive: pos.add(c); break;
                case Relation::NonEqual: noneq.add(c); break;
                case Relation::Negative: neg.add(c); break;
            }
        }
    }
    RelationStats st;
    st.pos_mean = pos.mean();
    st.pos_std = pos.stdev();
    st.noneq_mean = noneq.mean();
    st.noneq_std = noneq.stdev();
    st.neg_mean = neg.mean();
    st.neg_std = neg.stdev();
    st.pos_n = pos.n;
    st.noneq_n = noneq.n;
    st.neg_n = neg.n;
    return st;
}

namespace {

// Drop batch members with no in-batch positive partner; removing one member
// can orphan another, so iterate to a fixed point.
std::vector<int> drop_orphans(std::vector<int> ids, const RelationIndex& relations) {
    bool changed = true;
    while (changed) {
        changed = false;
        std::vector<int> kept;
        kept.reserve(ids.size());
        for (std::size_t i = 0; i < ids.size(); ++i) {
            bool has_pos = false;
            for (std::size_t j = 0; j < ids.size() && !has_pos; ++j) {
                if (i != j && relations.relation(ids[i], ids[j]) == Relation::Positive) {
                    has_pos = true;
                }
            }
            if (has_pos) kept.push_back(ids[i]);
            else changed = true;
        }
        ids = std::move(kept);
    }
    return ids;
}

std::vector<std::vector<double>> embed_ids(const std::vector<AugmentedSample>& dataset,
                                           const std::vector<int>& ids, const EncoderSpec& spec,
                                           ParamStore& params, Rng& rng) {
    std::vector<const CircuitGraph*> graphs;
    graphs.reserve(ids.size());
    for (int id : ids) graphs.push_back(&dataset[id].graph);
    const BatchedGraph batch = BatchedGraph::pack(graphs);
    GraphEmbedding emb = encode(batch, spec, params, /*train_mode=*/false, rng);
    std::vector<std::vector<double>> rows(ids.size());
    const int h = emb.g.cols();
    for (std::size_t i = 0; i < ids.size(); ++i) {
        rows[i].assign(emb.g.data().begin() + static_cast<long>(i) * h,
                       emb.g.data().begin() + static_cast<long>(i + 1) * h);
    }
    return rows;
}

}  // namespace

PretrainResult pretrain(const std::vector<AugmentedSample>& dataset,
                        const RelationIndex& relations, const EncoderSpec& spec,
                        const LossConfig& loss, const TrainConfig& train,
                        const std::function<void(const EpochMetrics&)>& on_epoch) {
    if (dataset.empty()) throw EmptyCorpus();
    if (relations.size() != dataset.size()) {
        throw ConfigError("relation index size != dataset size");
    }

    Rng master(train.seed);
    Rng init_rng = master.fork(1);
    Rng split_rng = master.fork(2);
    Rng run_rng = master.fork(3);

    PretrainResult result;
    result.params = ParamStore{};
    {
        ParamStore p = init_encoder_params(spec, init_rng);
        result.params = std::move(p);
    }
    if (loss.kind == LossKind::SimSiam) {
        init_simsiam_predictor(result.params, spec.hidden, init_rng);
    }

    std::vector<int> all(dataset.size());
    std::iota(all.begin(), all.end(), 0);
    split_rng.shuffle(all);
    int n_hold = static_cast<int>(train.holdout_fraction * static_cast<double>(all.size()));
    if (train.holdout_fraction > 0.0 && all.size() > 1 && n_hold == 0) n_hold = 1;
    std::vector<int> holdout(all.begin(), all.begin() + n_hold);
    std::vector<int> train_ids(all.begin() + n_hold, all.end());
    std::sort(holdout.begin(), holdout.end());

    Adam adam(AdamConfig{.lr = train.lr});

    for (int epoch = 1; epoch <= train.epochs; ++epoch) {
        Rng epoch_rng = run_rng.fork(static_cast<std::uint64_t>(epoch));
        epoch_rng.shuffle(train_ids);

        double loss_sum = 0.0;
        int n_batches = 0;
        for (std::size_t start = 0; start < train_ids.size();
             start += static_cast<std::size_t>(train.batch_size)) {
            const std::size_t stop =
                std::min(train_ids.size(), start + static_cast<std::size_t>(train.batch_size));
            std::vector<int> ids(train_ids.begin() + static_cast<long>(start),
                                 train_ids.begin() + static_cast<long>(stop));
            ids = balance_batch(ids, relations, epoch_rng);
            ids = drop_orphans(std::move(ids), relations);
            if (ids.size() < 2) continue;

            std::vector<const CircuitGraph*> graphs;
            graphs.reserve(ids.size());
            for (int id : ids) graphs.push_back(&dataset[id].graph);
            const BatchedGraph batch = BatchedGraph::pack(graphs);
            GraphEmbedding emb =
                encode(batch, spec, result.params, /*train_mode=*/true, epoch_rng);

            Tensor batch_loss;
            switch (loss.kind) {
                case LossKind::Dice: {
                    const BatchMasks masks = build_masks(relations, ids);
                    batch_loss = dice_loss_masked(emb.g, masks, loss.tau, loss.tau_p, loss.tau_n);
                    break;
                }
                case LossKind::NtXent: {
                    std::vector<int> pairing(ids.size());
                    for (std::size_t i = 0; i < ids.size(); ++i) {
                        std::vector<int> pos;
                        for (std::size_t j = 0; j < ids.size(); ++j) {
                            if (i != j &&
                                relations.relation(ids[i], ids[j]) == Relation::Positive) {
                                pos.push_back(static_cast<int>(j));
                            }
                        }
                        pairing[i] = pos[epoch_rng.uniform_index(pos.size())];
                    }
                    batch_loss = nt_xent(emb.g, pairing, loss.tau);
                    break;
                }
                case LossKind::SimSiam: {
                    std::vector<int> partner(ids.size());
                    for (std::size_t i = 0; i < ids.size(); ++i) {
                        std::vector<int> pos;
                        for (std::size_t j = 0; j < ids.size(); ++j) {
                            if (i != j &&
                                relations.relation(ids[i], ids[j]) == Relation::Positive) {
                                pos.push_back(static_cast<int>(j));
                            }
                        }
                        partner[i] = pos[epoch_rng.uniform_index(pos.size())];
                    }
                    Tensor z2 = gather_rows(emb.g, partner);
                    batch_loss = simsiam(emb.g, z2, [&](const Tensor& x) {
                        return simsiam_predictor(x, result.params);
                    });
                    break;
                }
            }

            const double lv = batch_loss.item();
            if (!std::isfinite(lv)) {
                throw NumericError("pretrain: non-finite loss at epoch " + std::to_string(epoch));
            }
            result.params.zero_grad();
            backward(batch_loss);
            adam.step(result.params);
            loss_sum += lv;
            ++n_batches;
        }

        EpochMetrics m;
        m.epoch = epoch;
        m.mean_loss = n_batches ? loss_sum / n_batches : std::nan("");

        const std::vector<int>& eval_ids = holdout.empty() ? train_ids : holdout;
        Rng eval_rng(0);  // dropout off; unused
        const auto embs = embed_ids(dataset, eval_ids, spec, result.params, eval_rng);
        const RelationStats st = relation_stats(embs, relations, eval_ids);
        m.pos_mean = st.pos_mean;
        m.pos_std = st.pos_std;
        m.noneq_mean = st.noneq_mean;
        m.noneq_std = st.noneq_std;
        m.neg_mean = st.neg_mean;
        m.neg_std = st.neg_std;

        result.metrics.push_back(m);
        if (on_epoch) on_epoch(m);
    }
    return result;
}

void write_metrics_csv(const std::string& path, const std::vector<EpochMetrics>& metrics) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write metrics csv: " + path);
    out << "epoch,mean_loss,pos_mean,pos_std,noneq_mean,noneq_std,neg_mean,neg_std\n";
    for (const auto& m : metrics) {
        out << m.epoch << ',' << format_double(m.mean_loss) << ',' << format_double(m.pos_mean)
            << ',' << format_double(m.pos_std) << ',' << format_double(m.noneq_mean) << ','
            << format_double(m.noneq_std) << ',' << format_double(m.neg_mean) << ','
            << format_double(m.neg_std) << '\n';
    }
}

}  // namespace dice
