#include "dice/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <unordered_set>

#include <json.hpp>

namespace dice {

using Node = Tensor::Node;

namespace {

std::shared_ptr<Node> make_leaf(int rows, int cols, bool requires_grad) {
    auto n = std::make_shared<Node>();
    n->rows = rows;
    n->cols = cols;
    n->data.assign(static_cast<std::size_t>(rows) * cols, 0.0);
    n->requires_grad = requires_grad;
    if (requires_grad) n->grad.assign(n->data.size(), 0.0);
    return n;
}

std::shared_ptr<Node> make_op(int rows, int cols, std::vector<std::shared_ptr<Node>> parents) {
    auto n = std::make_shared<Node>();
    n->rows = rows;
    n->cols = cols;
    n->data.assign(static_cast<std::size_t>(rows) * cols, 0.0);
    for (const auto& p : parents) {
        if (p->requires_grad) n->requires_grad = true;
    }
    if (n->requires_grad) n->grad.assign(n->data.size(), 0.0);
    n->parents = std::move(parents);
    return n;
}

void require_same_shape(const char* op, const Node& a, const Node& b) {
    if (a.rows != b.rows || a.cols != b.cols) {
        throw ShapeMismatch(op, a.rows, a.cols, b.rows, b.cols);
    }
}

double gelu_value(double x) {
    constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
    const double u = c * (x + 0.044715 * x * x * x);
    return 0.5 * x * (1.0 + std::tanh(u));
}

double gelu_derivative(double x) {
    constexpr double c = 0.7978845608028654;
    const double u = c * (x + 0.044715 * x * x * x);
    const double t = std::tanh(u);
    const double sech2 = 1.0 - t * t;
    return 0.5 * (1.0 + t) + 0.5 * x * sech2 * c * (1.0 + 3.0 * 0.044715 * x * x);
}

}  // namespace

// -- Tensor basics ------------------------------------------------------------

Tensor Tensor::zeros(int rows, int cols, bool requires_grad) {
    return Tensor(make_leaf(rows, cols, requires_grad));
}

Tensor Tensor::full(int rows, int cols, double value, bool requires_grad) {
    auto n = make_leaf(rows, cols, requires_grad);
    std::fill(n->data.begin(), n->data.end(), value);
    return Tensor(std::move(n));
}

Tensor Tensor::from_data(int rows, int cols, std::vector<double> data, bool requires_grad) {
    if (static_cast<std::size_t>(rows) * cols != data.size()) {
        throw ShapeMismatch("from_data", rows, cols, 1, static_cast<int>(data.size()));
    }
    auto n = make_leaf(rows, cols, requires_grad);
    n->data = std::move(data);
    return Tensor(std::move(n));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return full(1, 1, value, requires_grad);
}

int Tensor::rows() const { return node_->rows; }
int Tensor::cols() const { return node_->cols; }
const std::vector<double>& Tensor::data() const { return node_->data; }
std::vector<double>& Tensor::mutable_data() { return node_->data; }
const std::vector<double>& Tensor::grad() const { return node_->grad; }
bool Tensor::requires_grad() const { return node_->requires_grad; }

double Tensor::item() const {
    if (rows() != 1 || cols() != 1) throw NotScalar(rows(), cols());
    return node_->data[0];
}

double Tensor::at(int r, int c) const {
    return node_->data[static_cast<std::size_t>(r) * cols() + c];
}

void Tensor::zero_grad() {
    if (node_->requires_grad) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

// -- op helpers ---------------------------------------------------------------

// Each op fills out->data, then installs a backward_fn that adds into parent
// grads. Parents are held alive through out->parents; closures capture raw
// Node pointers only.
static const std::shared_ptr<Node>& node_of(const Tensor& t) { return t.shared_node(); }

Tensor matmul(const Tensor& a, const Tensor& b) {
    Node* an = a.node();
    Node* bn = b.node();
    if (an->cols != bn->rows) throw ShapeMismatch("matmul", an->rows, an->cols, bn->rows, bn->cols);
    auto out = make_op(an->rows, bn->cols, {node_of(a), node_of(b)});
    const int M = an->rows, K = an->cols, N = bn->cols;
    for (int i = 0; i < M; ++i) {
        double* orow = &out->data[static_cast<std::size_t>(i) * N];
        const double* arow = &an->data[static_cast<std::size_t>(i) * K];
        for (int k = 0; k < K; ++k) {
            const double av = arow[k];
            if (av == 0.0) continue;
            const double* brow = &bn->data[static_cast<std::size_t>(k) * N];
            for (int j = 0; j < N; ++j) orow[j] += av * brow[j];
        }
    }
    if (out->requires_grad) {
        Node* on = out.get();
        out->backward_fn = [an, bn, on, M, K, N]() {
            if (an->requires_grad) {  // dA += G B^T
                for (int i = 0; i < M; ++i) {
                    const double* grow = &on->grad[static_cast<std::size_t>(i) * N];
                    double* darow = &an->grad[static_cast<std::size_t>(i) * K];
                    for (int k = 0; k < K; ++k) {
                        const double* brow = &bn->data[static_cast<std::size_t>(k) * N];
                        double acc = 0.0;
                        for (int j = 0; j < N; ++j) acc += grow[j] * brow[j];
                        darow[k] += acc;
                    }
                }
            }
            if (bn->requires_grad) {  // dB += A^T G
                for (int i = 0; i < M; ++i) {
                    const double* arow = &an->data[static_cast<std::size_t>(i) * K];
                    const double* grow = &on->grad[static_cast<std::size_t>(i) * N];
                    for (int k = 0; k < K; ++k) {
                        const double av = arow[k];
                        if (av == 0.0) continue;
                        double* dbrow = &bn->grad[static_cast<std::size_t>(k) * N];
                        for (int j = 0; j < N; ++j) dbrow[j] += av * grow[j];
                    }
                }
            }
        };
    }
    return Tensor(std::move(out));
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    Node* an = a.node();
    Node* bn = b.node();
    if (an->cols != bn->cols) {
        throw ShapeMismatch("matmul_nt", an->rows, an->cols, bn->rows, bn->cols);
    }
    auto out = make_op(an->rows, bn->rows, {node_of(a), node_of(b)});
    const int M = an->rows, K = an->cols, N = bn->rows;
    for (int i = 0; i < M; ++i) {
        const double* arow = &an->data[static_cast<std::size_t>(i) * K];
        double* orow = &out->data[static_cast<std::size_t>(i) * N];
        for (int j = 0; j < N; ++j) {
            const double* brow = &bn->data[static_cast<std::size_t>(j) * K];
            double acc = 0.0;
            for (int k = 0; k < K; ++k) acc += arow[k] * brow[k];
            orow[j] = acc;
        }
    }
    if (out->requires_grad) {
        Node* on = out.get();
        out->backward_fn = [an, bn, on, M, K, N]() {
            if (an->requires_grad) {  // dA += G B
                for (int i = 0; i < M; ++i) {
                    const double* grow = &on->grad[static_cast<std::size_t>(i) * N];
                    double* darow = &an->grad[static_cast<std::size_t>(i) * K];
                    for (int j = 0; j < N; ++j) {
                        const double gv = grow[j];
                        if (gv == 0.0) continue;
                        const double* brow = &bn->data[static_cast<std::size_t>(j) * K];
                        for (int k = 0; k < K; ++k) darow[k] += gv * brow[k];
                    }
                }
            }
            if (bn->requires_grad) {  // dB += G^T A
                for (int i = 0; i < M; ++i) {
                    const double* grow = &on->grad[static_cast<std::size_t>(i) * N];
                    const double* arow = &an->data[static_cast<std::size_t>(i) * K];
                    for (int j = 0; j < N; ++j) {
                        const double gv = grow[j];
                        if (gv == 0.0) continue;
                        double* dbrow = &bn->grad[static_cast<std::size_t>(j) * K];
                        for (int k = 0; k < K; ++k) dbrow[k] += gv * arow[k];
                    }
                }
            }
        };
    }
    return Tensor(std::move(out));
}

Tensor add(const Tensor& a, const Tensor& b) {
    Node* an = a.node();
    Node* bn = b.node();
    const bool bias_row = bn->rows == 1 && an->rows != 1 && bn->cols == an->cols;
    if (!bias_row) require_same_shape("add", *an, *bn);
    auto out = make_op(an->rows, an->cols, {node_of(a), node_of(b)});
    const int C = an->cols;
    for (std::size_t i = 0; i < out->data.size(); ++i) {
        out->data[i] = an->data[i] + (bias_row ? bn->data[i % C] : bn->data[i]);
    }
    if (out->requires_grad) {
        Node* on = out.get();
        out->backward_fn = [an, bn, on, bias_row, C]() {
            if (an->requires_grad) {
                for (std::size_t i = 0; i < on->grad.size(); ++i) an->grad[i] += on->grad[i];
            }
            if (bn->requires_grad) {
                for (std::size_t i = 0; i < on->grad.size(); ++i) {
                    bn->grad[bias_row ? i % C : i] += on->grad[i];
                }
            }
        };
    }
    return Tensor(std::move(out));
}

Tensor sub(const Tensor& a, const Tensor& b) {
    Node* an = a.node();
    Node* bn = b.node();
    require_same_shape("sub", *an, *bn);
    auto out = make_op(an->rows, an->cols, {node_of(a), node_of(b)});
    for (std::size_t i = 0; i < out->data.size(); ++i) out->data[i] = an->data[i] - bn->data[i];
    if (out->requires_grad) {
        Node* on = out.get();
        out->backward_fn = [an, bn, on]() {
            if (an->requires_grad) {
                for (std::size_t i = 0; i < on->grad.size(); ++i) an->grad[i] += on->grad[i];
            }
            if (bn->requires_grad) {
                for (std::size_t i = 0; i < on->grad.size(); ++i) bn->grad[i] -= on->grad[i];
            }
        };
    }
    return Tensor(std::move(out));
}

Tensor hadamard(const Tensor& a, const Tensor& b) {
    Node* an = a.node();
    Node* bn = b.node();
    require_same_shape("hadamard", *an, *bn);
    auto out = make_op(an->rows, an->cols, {node_of(a), node_of(b)});
    for (std::size_t i = 0; i < out->data.size(); ++i) out->data[i] = an->data[i] * bn->data[i];
    if (out->requires_grad) {
        Node* on = out.get();
        out->backward_fn = [an, bn, on]() {
            if (an->requires_grad) {
                for (std::size_t i = 0; i < on->grad.size(); ++i) {
                    an->grad[i] += on->grad[i] * bn->data[i];
                }
            }
            if (bn->requires_grad) {
                for (std::size_t i = 0; i < on->grad.size(); ++i) {
                    bn->grad[i] += on->grad[i] * an->data[i];
                }
            }
        };
    }
    return Tensor(std::move(out));
}

Tensor divide(const Tensor& a, const Tensor& b) {
    Node* an = a.node();
    Node* bn = b.node();
    require_same_shape("divide", *an, *bn);
    auto out = make_op(an->rows, an->cols, {node_of(a), node_of(b)});
    for (std::size_t i = 0; i < out->data.size(); ++i) out->data[i] = an->data[i] / bn->data[i];
    if (out->requires_grad) {
        Node* on = out.get();
        out->backward_fn = [an, bn, on]() {
            for (std::size_t i = 0; i < on->grad.size(); ++i) {
                const double inv = 1.0 / bn->data[i];
                if (an->requires_grad) an->grad[i] += on->grad[i] * inv;
                if (bn->requires_grad) bn->grad[i] -= on->grad[i] * on->data[i] * inv;
            }
        };
    }
    return Tensor(std::move(out));
}

Tensor scalar_mul(const Tensor& a, double s) {
    Node* an = a.node();
    auto out = make_op(an->rows, an->cols, {node_of(a)});
    for (std::size_t i = 0; i < out->data.size(); ++i) out->data[i] = an->data[i] * s;
    if (out->requires_grad) {
        Node* on = out.get();
        out->backward_fn = [an, on, s]() {
            for (std::size_t i = 0; i < on->grad.size(); ++i) an->grad[i] += on->grad[i] * s;
        };
    }
    return Tensor(std::move(out));
}

Tensor scalar_add(const Tensor& a, double s) {
    Node* an = a.node();
    auto out = make_op(an->rows, an->cols, {node_of(a)});
    for (std::size_t i = 0; i < out->data.size(); ++i) out->data[i] = an->data[i] + s;
    if (out->requires_grad) {
        Node* on = out.get();
        out->backward_fn = [an, on]() {
            for (std::size_t i = 0; i < on->grad.size(); ++i) an->grad[i] += on->grad[i];
        };
    }
    return Tensor(std::move(out));
}

Tensor scale_by(const Tensor& a, const Tensor& s) {
    Node* an = a.node();
    Node* sn = s.node();
    if (sn->rows != 1 || sn->cols != 1) {
        throw ShapeMismatch("scale_by", an->rows, an->cols, sn->rows, sn->cols);
    }
    auto out = make_op(an->rows, an->cols, {node_of(a), node_of(s)});
    const double sv = sn->data[0];
    for (std::size_t i = 0; i < out->data.size(); ++i) out->data[i] = an->data[i] * sv;
    if (out->requires_grad) {
        Node* on = out.get();
        out->backward_fn = [an, sn, on, sv]() {
            if (an->requires_grad) {
                for (std::size_t i = 0; i < on->grad.size(); ++i) {
                    an->grad[i] += on->grad[i] * sv;
                }
            }
            if (sn->requires_grad) {
                double acc = 0.0;
                for (std::size_t i = 0; i < on->grad.size(); ++i) {
                    acc += on->grad[i] * an->data[i];
                }
                sn->grad[0] += acc;
            }
        };
    }
    return Tensor(std::move(out));
}

Tensor concat_cols(const Tensor& a, const Tensor& b) {
    Node* an = a.node();
    Node* bn = b.node();
    if (an->rows != bn->rows) {
        throw ShapeMismatch("concat_cols", an->rows, an->cols, bn->rows, bn->cols);
    }
    const int R = an->rows, CA = an->cols, CB = bn->cols;
    auto out = make_op(R, CA + CB, {node_of(a), node_of(b)});
    for (int r = 0; r < R; ++r) {
        std::copy_n(&an->data[static_cast<std::size_t>(r) * CA], CA,
                    &out->data[static_cast<std::size_t>(r) * (CA + CB)]);
        std::copy_n(&bn->data[static_cast<std::size_t>(r) * CB], CB,
                    &out->data[static_cast<std::size_t>(r) * (CA + CB) + CA]);
    }
    if (out->requires_grad) {
        Node* on = out.get();
        out->backward_fn = [an, bn, on, R, CA, CB]() {
            for (int r = 0; r < R; ++r) {
                const double* g = &on->grad[static_cast<std::size_t>(r) * (CA + CB)];
                if (an->requires_grad) {
                    double* da = &an->grad[static_cast<std::size_t>(r) * CA];
                    for (int c = 0; c < CA; ++c) da[c] += g[c];
                }
                if (bn->requires_grad) {
                    double* db = &bn->grad[static_cast<std::size_t>(r) * CB];
                    for (int c = 0; c < CB; ++c) db[c] += g[CA + c];
                }
            }
        };
    }
    return Tensor(std::move(out));
}

Tensor row_sum(const Tensor& a) {
    Node* an = a.node();
    auto out = make_op(an->rows, 1, {node_of(a)});
    const int R = an->rows, C = an->cols;
    for (int r = 0; r < R; ++r) {
        double acc = 0.0;
        const double* row = &an->data[static_cast<std::size_t>(r) * C];
        for (int c = 0; c < C; ++c) acc += row[c];
        out->data[r] = acc;
    }
    if (out->requires_grad) {
        Node* on = out.get();
        out->backward_fn = [an, on, R, C]() {
            for (int r = 0; r < R; ++r) {
                double* da = &an->grad[static_cast<std::size_t>(r) * C];
                for (int c = 0; c < C; ++c) da[c] += on->grad[r];
            }
        };
    }
    return Tensor(std::move(out));
}

Tensor col_sum(const Tensor& a) {
    Node* an = a.node();
    auto out = make_op(1, an->cols, {node_of(a)});
    const int R = an->rows, C = an->cols;
    for (int r = 0; r < R; ++r) {
        const double* row = &an->data[static_cast<std::size_t>(r) * C];
        for (int c = 0; c < C; ++c) out->data[c] += row[c];
    }
    if (out->requires_grad) {
        Node* on = out.get();
        out->backward_fn = [an, on, R, C]() {
            for (int r = 0; r < R; ++r) {
                double* da = &an->grad[static_cast<std::size_t>(r) * C];
                for (int c = 0; c < C; ++c) da[c] += on->grad[c];
            }
        };
    }
    return Tensor(std::move(out));
}

Tensor sum_all(const Tensor& a) {
    Node* an = a.node();
    auto out = make_op(1, 1, {node_of(a)});
    double acc = 0.0;
    for (double v : an->data) acc += v;
    out->data[0] = acc;
    if (out->requires_grad) {
        Node* on = out.get();
        out->backward_fn = [an, on]() {
            for (std::size_t i = 0; i < an->grad.size(); ++i) an->grad[i] += on->grad[0];
        };
    }
    return Tensor(std::move(out));
}

Tensor mean_all(const Tensor& a) {
    return scalar_mul(sum_all(a), 1.0 / static_cast<double>(a.size()));
}

Tensor gather_rows(const Tensor& a, const std::vector<int>& index) {
    Node* an = a.node();
    const int C = an->cols;
    auto out = make_op(static_cast<int>(index.size()), C, {node_of(a)});
    for (std::size_t r = 0; r < index.size(); ++r) {
        std::copy_n(&an->data[static_cast<std::size_t>(index[r]) * C], C, &out->data[r * C]);
    }
    if (out->requires_grad) {
        Node* on = out.get();
        auto idx = index;
        out->backward_fn = [an, on, idx = std::move(idx), C]() {
            for (std::size_t r = 0; r < idx.size(); ++r) {
                double* da = &an->grad[static_cast<std::size_t>(idx[r]) * C];
                const double* g = &on->grad[r * C];
                for (int c = 0; c < C; ++c) da[c] += g[c];
            }
        };
    }
    return Tensor(std::move(out));
}

Tensor segment_sum(const Tensor& a, const std::vector<int>& segment, int num_segments) {
    Node* an = a.node();
    if (static_cast<std::size_t>(an->rows) != segment.size()) {
        throw ShapeMismatch("segment_sum", an->rows, an->cols,
                            static_cast<int>(segment.size()), 1);
    }
    const int C = an->cols;
    auto out = make_op(num_segments, C, {node_of(a)});
    for (std::size_t r = 0; r < segment.size(); ++r) {
        const double* row = &an->data[r * C];
        double* orow = &out->data[static_cast<std::size_t>(segment[r]) * C];
        for (int c = 0; c < C; ++c) orow[c] += row[c];
    }
    if (out->requires_grad) {
        Node* on = out.get();
        auto seg = segment;
        out->backward_fn = [an, on, seg = std::move(seg), C]() {
            for (std::size_t r = 0; r < seg.size(); ++r) {
                double* da = &an->grad[r * C];
                const double* g = &on->grad[static_cast<std::size_t>(seg[r]) * C];
                for (int c = 0; c < C; ++c) da[c] += g[c];
            }
        };
    }
    return Tensor(std::move(out));
}

Tensor mul_rows(const Tensor& a, const Tensor& scale) {
    Node* an = a.node();
    Node* sn = scale.node();
    if (sn->rows != an->rows || sn->cols != 1) {
        throw ShapeMismatch("mul_rows", an->rows, an->cols, sn->rows, sn->cols);
    }
    const int R = an->rows, C = an->cols;
    auto out = make_op(R, C, {node_of(a), node_of(scale)});
    for (int r = 0; r < R; ++r) {
        const double sv = sn->data[r];
        for (int c = 0; c < C; ++c) {
            out->data[static_cast<std::size_t>(r) * C + c] =
                an->data[static_cast<std::size_t>(r) * C + c] * sv;
        }
    }
    if (out->requires_grad) {
        Node* on = out.get();
        out->backward_fn = [an, sn, on, R, C]() {
            for (int r = 0; r < R; ++r) {
                const double sv = sn->data[r];
                const double* g = &on->grad[static_cast<std::size_t>(r) * C];
                const double* av = &an->data[static_cast<std::size_t>(r) * C];
                if (an->requires_grad) {
                    double* da = &an->grad[static_cast<std::size_t>(r) * C];
                    for (int c = 0; c < C; ++c) da[c] += g[c] * sv;
                }
                if (sn->requires_grad) {
                    double acc = 0.0;
                    for (int c = 0; c < C; ++c) acc += g[c] * av[c];
                    sn->grad[r] += acc;
                }
            }
        };
    }
    return Tensor(std::move(out));
}

namespace {

template <typename F, typename DF>
Tensor unary(const Tensor& a, F f, DF df) {
    Node* an = a.node();
    auto out = make_op(an->rows, an->cols, {node_of(a)});
    for (std::size_t i = 0; i < out->data.size(); ++i) out->data[i] = f(an->data[i]);
    if (out->requires_grad) {
        Node* on = out.get();
        out->backward_fn = [an, on, df]() {
            for (std::size_t i = 0; i < on->grad.size(); ++i) {
                an->grad[i] += on->grad[i] * df(an->data[i], on->data[i]);
            }
        };
    }
    return Tensor(std::move(out));
}

}  // namespace

Tensor gelu(const Tensor& a) {
    return unary(a, gelu_value, [](double x, double) { return gelu_derivative(x); });
}

Tensor relu(const Tensor& a) {
    return unary(a, [](double x) { return x > 0.0 ? x : 0.0; },
                 [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor exp_elem(const Tensor& a) {
    return unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor log_elem(const Tensor& a) {
    return unary(a, [](double x) { return std::log(x); },
                 [](double x, double) { return 1.0 / x; });
}

Tensor sqrt_elem(const Tensor& a) {
    return unary(a, [](double x) { return std::sqrt(x); },
                 [](double, double y) { return 0.5 / y; });
}

Tensor softmax_rows(const Tensor& a) {
    Node* an = a.node();
    const int R = an->rows, C = an->cols;
    auto out = make_op(R, C, {node_of(a)});
    for (int r = 0; r < R; ++r) {
        const double* row = &an->data[static_cast<std::size_t>(r) * C];
        double* orow = &out->data[static_cast<std::size_t>(r) * C];
        double mx = row[0];
        for (int c = 1; c < C; ++c) mx = std::max(mx, row[c]);
        double denom = 0.0;
        for (int c = 0; c < C; ++c) denom += (orow[c] = std::exp(row[c] - mx));
        for (int c = 0; c < C; ++c) orow[c] /= denom;
    }
    if (out->requires_grad) {
        Node* on = out.get();
        out->backward_fn = [an, on, R, C]() {
            for (int r = 0; r < R; ++r) {
                const double* y = &on->data[static_cast<std::size_t>(r) * C];
                const double* g = &on->grad[static_cast<std::size_t>(r) * C];
                double dot = 0.0;
                for (int c = 0; c < C; ++c) dot += y[c] * g[c];
                double* da = &an->grad[static_cast<std::size_t>(r) * C];
                for (int c = 0; c < C; ++c) da[c] += y[c] * (g[c] - dot);
            }
        };
    }
    return Tensor(std::move(out));
}

Tensor dropout(const Tensor& a, double p, bool train_mode, Rng& rng) {
    if (!train_mode || p <= 0.0) return a;
    Node* an = a.node();
    auto out = make_op(an->rows, an->cols, {node_of(a)});
    const double keep = 1.0 - p;
    auto mask = std::make_shared<std::vector<double>>(out->data.size());
    for (std::size_t i = 0; i < out->data.size(); ++i) {
        (*mask)[i] = rng.uniform() < p ? 0.0 : 1.0 / keep;
        out->data[i] = an->data[i] * (*mask)[i];
    }
    if (out->requires_grad) {
        Node* on = out.get();
        out->backward_fn = [an, on, mask]() {
            for (std::size_t i = 0; i < on->grad.size(); ++i) {
                an->grad[i] += on->grad[i] * (*mask)[i];
            }
        };
    }
    return Tensor(std::move(out));
}

Tensor layer_norm_rows(const Tensor& a, double eps) {
    Node* an = a.node();
    const int R = an->rows, C = an->cols;
    auto out = make_op(R, C, {node_of(a)});
    auto inv_sigma = std::make_shared<std::vector<double>>(R);
    for (int r = 0; r < R; ++r) {
        const double* row = &an->data[static_cast<std::size_t>(r) * C];
        double mu = 0.0;
        for (int c = 0; c < C; ++c) mu += row[c];
        mu /= C;
        double var = 0.0;
        for (int c = 0; c < C; ++c) var += (row[c] - mu) * (row[c] - mu);
        var /= C;
        const double inv = 1.0 / std::sqrt(var + eps);
        (*inv_sigma)[r] = inv;
        double* orow = &out->data[static_cast<std::size_t>(r) * C];
        for (int c = 0; c < C; ++c) orow[c] = (row[c] - mu) * inv;
    }
    if (out->requires_grad) {
        Node* on = out.get();
        out->backward_fn = [an, on, inv_sigma, R, C]() {
            for (int r = 0; r < R; ++r) {
                const double* y = &on->data[static_cast<std::size_t>(r) * C];
                const double* g = &on->grad[static_cast<std::size_t>(r) * C];
                double gmean = 0.0, gymean = 0.0;
                for (int c = 0; c < C; ++c) {
                    gmean += g[c];
                    gymean += g[c] * y[c];
                }
                gmean /= C;
                gymean /= C;
                double* da = &an->grad[static_cast<std::size_t>(r) * C];
                const double inv = (*inv_sigma)[r];
                for (int c = 0; c < C; ++c) {
                    da[c] += inv * (g[c] - gmean - y[c] * gymean);
                }
            }
        };
    }
    return Tensor(std::move(out));
}

Tensor l2_normalize_rows(const Tensor& a) {
    Node* an = a.node();
    const int R = an->rows, C = an->cols;
    auto out = make_op(R, C, {node_of(a)});
    auto inv_norm = std::make_shared<std::vector<double>>(R);
    for (int r = 0; r < R; ++r) {
        const double* row = &an->data[static_cast<std::size_t>(r) * C];
        double n2 = 0.0;
        for (int c = 0; c < C; ++c) n2 += row[c] * row[c];
        if (n2 == 0.0) throw ZeroVector("l2_normalize_rows (row " + std::to_string(r) + ")");
        const double inv = 1.0 / std::sqrt(n2);
        (*inv_norm)[r] = inv;
        double* orow = &out->data[static_cast<std::size_t>(r) * C];
        for (int c = 0; c < C; ++c) orow[c] = row[c] * inv;
    }
    if (out->requires_grad) {
        Node* on = out.get();
        out->backward_fn = [an, on, inv_norm, R, C]() {
            for (int r = 0; r < R; ++r) {
                const double* y = &on->data[static_cast<std::size_t>(r) * C];
                const double* g = &on->grad[static_cast<std::size_t>(r) * C];
                double dot = 0.0;
                for (int c = 0; c < C; ++c) dot += y[c] * g[c];
                double* da = &an->grad[static_cast<std::size_t>(r) * C];
                const double inv = (*inv_norm)[r];
                for (int c = 0; c < C; ++c) da[c] += inv * (g[c] - y[c] * dot);
            }
        };
    }
    return Tensor(std::move(out));
}

Tensor stop_gradient(const Tensor& a) {
    auto out = make_leaf(a.rows(), a.cols(), false);
    out->data = a.data();
    return Tensor(std::move(out));
}

Tensor transpose(const Tensor& a) {
    Node* an = a.node();
    const int R = an->rows, C = an->cols;
    auto out = make_op(C, R, {node_of(a)});
    for (int r = 0; r < R; ++r) {
        for (int c = 0; c < C; ++c) {
            out->data[static_cast<std::size_t>(c) * R + r] =
                an->data[static_cast<std::size_t>(r) * C + c];
        }
    }
    if (out->requires_grad) {
        Node* on = out.get();
        out->backward_fn = [an, on, R, C]() {
            for (int r = 0; r < R; ++r) {
                for (int c = 0; c < C; ++c) {
                    an->grad[static_cast<std::size_t>(r) * C + c] +=
                        on->grad[static_cast<std::size_t>(c) * R + r];
                }
            }
        };
    }
    return Tensor(std::move(out));
}

void backward(const Tensor& loss) {
    Node* root = loss.node();
    if (root->rows != 1 || root->cols != 1) throw NotScalar(root->rows, root->cols);
    if (!root->requires_grad) return;

    // Iterative post-order DFS for topological order.
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack{{root, 0}};
    visited.insert(root);
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* parent = node->parents[next++].get();
            if (parent->requires_grad && !visited.count(parent)) {
                visited.insert(parent);
                stack.emplace_back(parent, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    root->grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        if ((*it)->backward_fn) (*it)->backward_fn();
    }
}

// -- ParamStore / Adam ---------------------------------------------------------

Tensor& ParamStore::create(const std::string& name, int rows, int cols) {
    if (params_.count(name)) throw Error("duplicate parameter name: " + name);
    order_.push_back(name);
    return params_[name] = Tensor::zeros(rows, cols, true);
}

Tensor& ParamStore::get(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw Error("unknown parameter: " + name);
    return it->second;
}

const Tensor& ParamStore::get(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw Error("unknown parameter: " + name);
    return it->second;
}

bool ParamStore::contains(const std::string& name) const { return params_.count(name) != 0; }

void ParamStore::zero_grad() {
    for (auto& name : order_) params_.at(name).zero_grad();
}

std::size_t ParamStore::total_size() const {
    std::size_t n = 0;
    for (const auto& name : order_) n += params_.at(name).size();
    return n;
}

void Adam::step(ParamStore& params) {
    ++t_;
    const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
    for (const auto& name : params.names()) {
        Tensor& p = params.get(name);
        auto& slot = slots_[name];
        if (slot.m.empty()) {
            slot.m.assign(p.size(), 0.0);
            slot.v.assign(p.size(), 0.0);
        }
        auto& data = p.mutable_data();
        const auto& g = p.grad();
        for (std::size_t i = 0; i < data.size(); ++i) {
            slot.m[i] = config_.beta1 * slot.m[i] + (1.0 - config_.beta1) * g[i];
            slot.v[i] = config_.beta2 * slot.v[i] + (1.0 - config_.beta2) * g[i] * g[i];
            const double mhat = slot.m[i] / bc1;
            const double vhat = slot.v[i] / bc2;
            data[i] -= config_.lr * mhat / (std::sqrt(vhat) + config_.eps);
        }
    }
}

void save_checkpoint(const std::string& path, const ParamStore& params,
                     const std::string& meta_json) {
    nlohmann::json j;
    j["version"] = 1;
    j["meta"] = meta_json.empty() ? nlohmann::json::object() : nlohmann::json::parse(meta_json);
    auto p = nlohmann::json::object();
    for (const auto& name : params.names()) {
        const Tensor& t = params.get(name);
        p[name] = {{"shape", {t.rows(), t.cols()}}, {"data", t.data()}};
    }
    j["params"] = std::move(p);
    std::ofstream out(path);
    if (!out) throw Error("cannot write checkpoint " + path);
    out << j.dump() << "\n";
}

std::string load_checkpoint(const std::string& path, ParamStore& params) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open checkpoint " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError(e.what());
    }
    if (j.value("version", 0) != 1) throw SchemaError("unsupported checkpoint version");
    for (auto it = j.at("params").begin(); it != j.at("params").end(); ++it) {
        const auto shape = it.value().at("shape").get<std::vector<int>>();
        auto data = it.value().at("data").get<std::vector<double>>();
        Tensor& t = params.create(it.key(), shape.at(0), shape.at(1));
        if (t.size() != data.size()) throw SchemaError("checkpoint shape/data mismatch");
        t.mutable_data() = std::move(data);
    }
    return j.at("meta").dump();
}

void init_linear(ParamStore& params, const std::string& name, int in_dim, int out_dim,
                 Rng& rng) {
    Tensor& w = params.create(name + ".w", in_dim, out_dim);
    const double scale = std::sqrt(2.0 / static_cast<double>(in_dim));
    for (auto& v : w.mutable_data()) v = rng.normal() * scale;
    params.create(name + ".b", 1, out_dim);
}

Tensor linear(const Tensor& x, ParamStore& params, const std::string& name) {
    return add(matmul(x, params.get(name + ".w")), params.get(name + ".b"));
}

}  // namespace dice
