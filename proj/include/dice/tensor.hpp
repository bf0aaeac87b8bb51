#pragma once

#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "dice/errors.hpp"
#include "dice/rng.hpp"

namespace dice {

// Dense row-major 2-D tensor with reverse-mode autodiff. Tensor is a cheap
// shared handle; ops build a backward graph of shared nodes. 64-bit floats
// throughout.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(int rows, int cols, bool requires_grad = false);
    static Tensor full(int rows, int cols, double value, bool requires_grad = false);
    static Tensor from_data(int rows, int cols, std::vector<double> data,
                            bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    int rows() const;
    int cols() const;
    std::size_t size() const { return data().size(); }
    const std::vector<double>& data() const;
    std::vector<double>& mutable_data();  // leaf tensors only
    const std::vector<double>& grad() const;
    bool requires_grad() const;
    double item() const;  // 1x1 only
    double at(int r, int c) const;

    void zero_grad();

    struct Node;
    Node* node() const { return node_.get(); }
    const std::shared_ptr<Node>& shared_node() const { return node_; }
    explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

private:
    std::shared_ptr<Node> node_;
};

struct Tensor::Node {
    int rows = 0, cols = 0;
    std::vector<double> data;
    std::vector<double> grad;  // allocated iff requires_grad
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void()> backward_fn;  // accumulates into parents' grads
};

// -- core ops ---------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor matmul_nt(const Tensor& a, const Tensor& b);  // a * b^T
Tensor add(const Tensor& a, const Tensor& b);        // same shape, or b a 1xC bias row
Tensor sub(const Tensor& a, const Tensor& b);
Tensor hadamard(const Tensor& a, const Tensor& b);
Tensor divide(const Tensor& a, const Tensor& b);
Tensor scalar_mul(const Tensor& a, double s);
Tensor scalar_add(const Tensor& a, double s);
Tensor scale_by(const Tensor& a, const Tensor& s);   // s is a differentiable 1x1
Tensor concat_cols(const Tensor& a, const Tensor& b);
Tensor row_sum(const Tensor& a);   // Rx1, sum over each row
Tensor col_sum(const Tensor& a);   // 1xC, sum over each column
Tensor sum_all(const Tensor& a);   // 1x1
Tensor mean_all(const Tensor& a);  // 1x1
Tensor gather_rows(const Tensor& a, const std::vector<int>& index);
Tensor segment_sum(const Tensor& a, const std::vector<int>& segment, int num_segments);
Tensor mul_rows(const Tensor& a, const Tensor& scale);  // scale is Rx1
Tensor gelu(const Tensor& a);  // tanh approximation
Tensor relu(const Tensor& a);
Tensor exp_elem(const Tensor& a);
Tensor log_elem(const Tensor& a);
Tensor sqrt_elem(const Tensor& a);
Tensor softmax_rows(const Tensor& a);
Tensor dropout(const Tensor& a, double p, bool train_mode, Rng& rng);
Tensor layer_norm_rows(const Tensor& a, double eps = 1e-5);
Tensor l2_normalize_rows(const Tensor& a);
Tensor stop_gradient(const Tensor& a);
Tensor transpose(const Tensor& a);

// Reverse-mode sweep from a 1x1 loss; grads accumulate until zeroed.
void backward(const Tensor& loss);

// -- parameters and optimizer -------------------------------------------------

// Named trainable tensors of one model.
class ParamStore {
public:
    Tensor& create(const std::string& name, int rows, int cols);
    Tensor& get(const std::string& name);
    const Tensor& get(const std::string& name) const;
    bool contains(const std::string& name) const;
    void zero_grad();
    const std::vector<std::string>& names() const { return order_; }
    std::size_t total_size() const;

private:
    std::vector<std::string> order_;
    std::unordered_map<std::string, Tensor> params_;
};

// Standard Adam with bias correction.
struct AdamConfig {
    double lr = 3e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

class Adam {
public:
    explicit Adam(AdamConfig config = {}) : config_(config) {}
    void step(ParamStore& params);
    void set_lr(double lr) { config_.lr = lr; }

private:
    struct Slot {
        std::vector<double> m, v;
    };
    AdamConfig config_;
    std::unordered_map<std::string, Slot> slots_;
    long t_ = 0;
};

// Checkpoint format: JSON {"version":1, "meta":{...}, "params":{name:{"shape":[r,c],"data":[...]}}}.
void save_checkpoint(const std::string& path, const ParamStore& params,
                     const std::string& meta_json);
// Returns the meta JSON text; fills `params` with leaf tensors.
std::string load_checkpoint(const std::string& path, ParamStore& params);

// Kaiming-style initialization; creates "<name>.w" (in x out) and "<name>.b".
void init_linear(ParamStore& params, const std::string& name, int in_dim, int out_dim,
                 Rng& rng);
// y = x W + b for a layer created by init_linear.
Tensor linear(const Tensor& x, ParamStore& params, const std::string& name);

}  // namespace dice
