#pragma once

#include <functional>
#include <string>
#include <vector>

#include "dice/augment.hpp"
#include "dice/encoders.hpp"
#include "dice/tensor.hpp"

namespace dice {

enum class LossKind { NtXent, SimSiam, Dice };

const char* loss_name(LossKind k);
LossKind loss_from_name(const std::string& s);

struct LossConfig {
    LossKind kind = LossKind::Dice;
    double tau = 0.05;
    double tau_p = 0.2;
    double tau_n = 0.05;
};

// Pair masks for one batch: symmetric, zero-diagonal, disjoint 0/1 matrices
// marking positive and non-equal pairs. Negative pairs appear in neither.
struct BatchMasks {
    int size = 0;
    Tensor m_pos;    // L x L constant
    Tensor m_noneq;  // L x L constant
};

BatchMasks build_masks(const RelationIndex& relations, const std::vector<int>& batch_ids);

// Eq-style InfoNCE over paired rows: `pairing[i]` is the index of row i's
// positive partner; the denominator ranges over all other rows.
Tensor nt_xent(const Tensor& z, const std::vector<int>& pairing, double tau);

// Symmetric negative-cosine loss with stop-gradient on the target side.
// The predictor is passed in so tests can use identity.
Tensor simsiam(const Tensor& z1, const Tensor& z2,
               const std::function<Tensor(const Tensor&)>& predictor);

void init_simsiam_predictor(ParamStore& params, int hidden, Rng& rng);
Tensor simsiam_predictor(const Tensor& x, ParamStore& params);

// Plain double-precision double loop over the batch; the oracle the masked
// implementation is checked against. `relation(i, j)` classifies a pair.
double dice_loss_naive(const std::vector<std::vector<double>>& embeddings,
                       const std::function<Relation(int, int)>& relation, double tau,
                       double tau_p, double tau_n);

// Vectorized loss on a precomputed similarity matrix; differentiable in `s`.
Tensor dice_loss_from_sim(const Tensor& s, const BatchMasks& masks, double tau, double tau_p,
                          double tau_n);
// L2-normalizes rows of `z`, forms S = Z Z^T, and applies dice_loss_from_sim.
Tensor dice_loss_masked(const Tensor& z, const BatchMasks& masks, double tau, double tau_p,
                        double tau_n);

// Subsample the batch so every origin contributes the same (minimum) count.
std::vector<int> balance_batch(const std::vector<int>& batch_ids,
                               const RelationIndex& relations, Rng& rng);

struct TrainConfig {
    double lr = 3e-4;
    int batch_size = 1024;
    int epochs = 200;
    unsigned long long seed = 0;
    double holdout_fraction = 0.1;
};

struct EpochMetrics {
    int epoch = 0;
    double mean_loss = 0.0;
    double pos_mean = 0.0, pos_std = 0.0;
    double noneq_mean = 0.0, noneq_std = 0.0;
    double neg_mean = 0.0, neg_std = 0.0;
};

struct RelationStats {
    double pos_mean = 0.0, pos_std = 0.0;
    double noneq_mean = 0.0, noneq_std = 0.0;
    double neg_mean = 0.0, neg_std = 0.0;
    long pos_n = 0, noneq_n = 0, neg_n = 0;
};

// Cosine statistics over all pairs of `ids`, grouped by relation class.
RelationStats relation_stats(const std::vector<std::vector<double>>& embeddings,
                             const RelationIndex& relations, const std::vector<int>& ids);

struct PretrainResult {
    ParamStore params;
    std::vector<EpochMetrics> metrics;
};

// Full pretraining loop: shuffled epochs, balanced batches, batched encoding,
// l2-normalized embeddings, loss/backward/Adam; per-epoch relation stats on a
// held-out split.
PretrainResult pretrain(const std::vector<AugmentedSample>& dataset,
                        const RelationIndex& relations, const EncoderSpec& spec,
                        const LossConfig& loss, const TrainConfig& train,
                        const std::function<void(const EpochMetrics&)>& on_epoch = nullptr);

void write_metrics_csv(const std::string& path, const std::vector<EpochMetrics>& metrics);

}  // namespace dice
