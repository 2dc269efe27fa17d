#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

namespace satl {

struct TensorNode;
using NodePtr = std::shared_ptr<TensorNode>;

// One node of the computation DAG. Data is contiguous row-major f64.
// `inputs` holds strong references: keeping any output alive keeps the
// subgraph that produced it alive. Construction order is forward order,
// so the structure is acyclic by construction.
struct TensorNode {
    std::vector<int> shape;
    std::vector<double> data;
    std::vector<double> grad;  // allocated for grad-requiring leaves up front,
                               // for interior nodes during backward
    bool requires_grad = false;
    std::vector<NodePtr> inputs;
    std::function<void(TensorNode&)> backprop;  // reads this->grad, accumulates into inputs
    const char* op = "leaf";

    bool is_leaf() const { return inputs.empty(); }
    std::size_t numel() const { return data.size(); }
    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    }
};

// Value-semantics handle to a graph node. Copies alias the same node.
class Tensor {
  public:
    Tensor() = default;

    static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
    static Tensor full(std::vector<int> shape, double value, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);
    static Tensor from(std::vector<double> values, std::vector<int> shape,
                       bool requires_grad = false);
    // Gaussian init, mean 0. Deterministic given the generator state.
    static Tensor randn(std::vector<int> shape, double stddev, std::mt19937_64& rng,
                        bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const std::vector<int>& shape() const;
    int dim(int axis) const;
    int rank() const;
    std::size_t numel() const;
    bool requires_grad() const;

    const std::vector<double>& data() const;
    std::vector<double>& mutable_data();  // leaf parameters only
    const std::vector<double>& grad() const;
    void zero_grad();

    double value() const;               // scalar tensors
    double at(std::vector<int> idx) const;

    TensorNode* node() const { return node_.get(); }
    NodePtr handle() const { return node_; }

    explicit Tensor(NodePtr n) : node_(std::move(n)) {}

  private:
    NodePtr node_;
};

// --- graph construction ----------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

// Elementwise; `b` may be same-shape, a scalar, or a rank-1 vector matching
// the last dimension of `a` (row broadcast). Anything else is a ShapeError.
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);

Tensor sigmoid(const Tensor& a);
Tensor relu(const Tensor& a);

// Softmax over the last dimension with max-subtraction stabilization.
// NaN anywhere in the input is a NumericError.
Tensor softmax_lastdim(const Tensor& a);
Tensor log_softmax_lastdim(const Tensor& a);

// Per-slice normalization over the last dimension, learned gain and bias.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps = 1e-5);

// 1-D convolution along the first axis. x is [n x d_in], kernel is
// [k x d_in x d_out] with odd k; zero same-padding keeps n rows.
Tensor conv1d_same(const Tensor& x, const Tensor& kernel);

// Gather rows (axis 0) of a rank-1 or rank-2 tensor; repeated indices
// accumulate gradient. Backward is scatter-add.
Tensor take_rows(const Tensor& x, const std::vector<int>& rows);
Tensor slice_rows(const Tensor& x, int begin, int end);
// Column window [begin, end) of a rank-2 tensor.
Tensor slice_cols(const Tensor& x, int begin, int end);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor reshape(const Tensor& x, std::vector<int> shape);
Tensor sum_all(const Tensor& x);  // -> scalar
// out[i] = x[i, ids[i]] for rank-2 x.
Tensor pick_lastdim(const Tensor& x, const std::vector<int>& ids);

// Reverse-mode sweep from a scalar loss. Interior gradients are rebuilt per
// call; leaf gradients accumulate across calls until zero_grad. Returns the
// number of nodes visited (each reachable node exactly once).
std::size_t backward(const Tensor& loss);

std::size_t numel_of(const std::vector<int>& shape);
std::string shape_str(const std::vector<int>& shape);

}  // namespace satl
