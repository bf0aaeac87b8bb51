#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "dice/augment.hpp"
#include "dice/contrastive.hpp"
#include "dice/encoders.hpp"

namespace dice {

// Encoder depths: frozen pretrained branch (d_dice), trainable parallel
// branch (d_par), series stage after fusion (d_series). d_dice must be 0 or
// the pretrained checkpoint's depth.
struct DownstreamConfig {
    int d_dice = 0;
    int d_par = 0;
    int d_series = 0;
    int hidden = 256;
    double dropout = 0.2;
};

struct DownstreamModel {
    DownstreamConfig config;
    EncoderSpec frozen_spec;  // meaningful iff config.d_dice > 0
    ParamStore frozen;        // never optimized; outputs pass through stop_gradient
    ParamStore params;        // trainable branch, fusion, series stage (+ heads)
};

// `ckpt_path` may be empty when d_dice == 0.
DownstreamModel init_downstream(const DownstreamConfig& config, const std::string& ckpt_path,
                                Rng& rng);

GraphEmbedding encode_downstream(const BatchedGraph& batch, DownstreamModel& model,
                                 bool train_mode, Rng& rng);

// Per-node parameter features: one-hot(node type) * -ln(param) for device
// nodes, zero rows for nets. Shape num_nodes x 9, constant.
Tensor encode_params(const std::vector<const CircuitGraph*>& graphs);
// Variant with per-graph overrides: `nodes[g]` lists the device nodes whose
// params are replaced by `values[g]` (aligned), on top of the stored params.
Tensor encode_params(const std::vector<const CircuitGraph*>& graphs,
                     const std::vector<std::vector<int>>& nodes,
                     const std::vector<std::vector<double>>& values);

// Decoder: per-node concat(node embedding, param row) -> MLP -> sum pool ->
// head MLP -> out_dim.
void init_decoder(ParamStore& params, int hidden, int out_dim, Rng& rng);
Tensor decode(const Tensor& node_out, const Tensor& param_enc, const BatchedGraph& batch,
              ParamStore& params);

// -- task 1: relative similarity classification ------------------------------

// 0 = first more similar, 1 = second, 2 = equal.
int task1_truth(const std::vector<std::string>& target, const std::vector<std::string>& a,
                const std::vector<std::string>& b);

void init_task1_head(ParamStore& params, int hidden, Rng& rng);
// g_* are row-aligned G x h embeddings of target / candidate a / candidate b.
Tensor task1_logits(const Tensor& g_t, const Tensor& g_a, const Tensor& g_b,
                    ParamStore& params);

// Mean negative log softmax probability of the true class.
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels);

// Per-column coefficient of determination 1 - SS_res/SS_tot.
std::vector<double> r2_score(const std::vector<std::vector<double>>& pred,
                             const std::vector<std::vector<double>>& truth);

struct TaskTrainConfig {
    double lr = 3e-4;
    int epochs = 200;
    int batch_size = 64;
    unsigned long long seed = 0;
};

struct Task1Result {
    double test_accuracy = 0.0;
    double final_train_loss = 0.0;
    long trainable_params = 0;
};

// Labeled corpus; triples (target, a, b) over distinct circuits are split
// 8:1:1 and the head + trainable encoder parts are trained by cross-entropy.
Task1Result train_task1(const std::vector<CircuitGraph>& circuits,
                        const std::vector<std::vector<std::string>>& labels,
                        const DownstreamConfig& config, const std::string& ckpt_path,
                        const TaskTrainConfig& train);

// -- tasks 2/3: regression from simulation-style CSVs ------------------------

struct RegressionRow {
    std::string circuit_id;
    std::vector<double> params;
    std::vector<double> targets;
};

struct RegressionData {
    std::unordered_map<std::string, CircuitGraph> circuits;
    std::unordered_map<std::string, std::vector<int>> param_nodes;  // per circuit, one per column
    std::vector<RegressionRow> rows;
    int n_params = 0;
    int n_targets = 0;
};

// Directory layout: rows.csv (circuit_id,param_1..k,target_1..m),
// columns.json ({"param_nodes": {id: [node...]}}) and graphs/<id>.json.
RegressionData read_regression_data(const std::string& dir);

struct RegressionResult {
    std::vector<double> test_r2;  // per target, original units
    double final_train_loss = 0.0;
    long trainable_params = 0;
};

// 8:1:1 row split; targets z-scored with train statistics; MSE training;
// test R-squared reported in original units.
RegressionResult train_regression(const RegressionData& data, const DownstreamConfig& config,
                                  const std::string& ckpt_path, const TaskTrainConfig& train);

// Embedding export: sample_id, origin_id, polarity, dim_0..dim_{h-1}.
void write_embeddings_csv(const std::string& path, const std::vector<AugmentedSample>& samples,
                          const std::vector<std::vector<double>>& embeddings);

}  // namespace dice
