#include "satl/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "satl/error.hpp"

namespace satl {

std::size_t numel_of(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int d : shape) n *= static_cast<std::size_t>(d);
    return n;
}

std::string shape_str(const std::vector<int>& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += "x";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

namespace {

void check_shape(const std::vector<int>& shape) {
    for (int d : shape)
        if (d <= 0) throw ShapeError("non-positive extent in shape " + shape_str(shape));
}

NodePtr make_node(std::vector<int> shape, bool requires_grad) {
    check_shape(shape);
    auto n = std::make_shared<TensorNode>();
    n->shape = std::move(shape);
    n->data.assign(numel_of(n->shape), 0.0);
    n->requires_grad = requires_grad;
    if (requires_grad && n->is_leaf()) n->ensure_grad();
    return n;
}

NodePtr make_op(std::vector<int> shape, std::vector<NodePtr> inputs, const char* op) {
    auto n = make_node(std::move(shape), false);
    for (const auto& in : inputs)
        if (in->requires_grad) n->requires_grad = true;
    n->inputs = std::move(inputs);
    n->op = op;
    return n;
}

int rows_of(const TensorNode& n) {
    if (n.shape.empty()) throw ShapeError("scalar has no rows");
    return n.shape[0];
}

// Everything after axis 0, i.e. the row width for gather/slice ops.
std::size_t row_width(const TensorNode& n) {
    std::size_t w = 1;
    for (std::size_t i = 1; i < n.shape.size(); ++i) w *= static_cast<std::size_t>(n.shape[i]);
    return w;
}

int lastdim(const TensorNode& n) {
    if (n.shape.empty()) return 1;
    return n.shape.back();
}

enum class Broadcast { Same, Scalar, RowVec };

Broadcast classify_broadcast(const TensorNode& a, const TensorNode& b) {
    if (a.shape == b.shape) return Broadcast::Same;
    if (b.numel() == 1) return Broadcast::Scalar;
    if (b.shape.size() == 1 && !a.shape.empty() && a.shape.back() == b.shape[0])
        return Broadcast::RowVec;
    throw ShapeError("incompatible broadcast: " + shape_str(a.shape) + " vs " +
                     shape_str(b.shape));
}

}  // namespace

// --- Tensor handle ----------------------------------------------------------

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
    return Tensor(make_node(std::move(shape), requires_grad));
}

Tensor Tensor::full(std::vector<int> shape, double value, bool requires_grad) {
    auto n = make_node(std::move(shape), requires_grad);
    std::fill(n->data.begin(), n->data.end(), value);
    return Tensor(n);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return full({}, value, requires_grad);
}

Tensor Tensor::from(std::vector<double> values, std::vector<int> shape, bool requires_grad) {
    auto n = make_node(std::move(shape), requires_grad);
    if (values.size() != n->data.size())
        throw ShapeError("value count " + std::to_string(values.size()) +
                         " does not fill shape " + shape_str(n->shape));
    n->data = std::move(values);
    return Tensor(n);
}

Tensor Tensor::randn(std::vector<int> shape, double stddev, std::mt19937_64& rng,
                     bool requires_grad) {
    auto n = make_node(std::move(shape), requires_grad);
    std::normal_distribution<double> dist(0.0, stddev);
    for (auto& v : n->data) v = dist(rng);
    return Tensor(n);
}

const std::vector<int>& Tensor::shape() const { return node_->shape; }
int Tensor::dim(int axis) const { return node_->shape.at(static_cast<std::size_t>(axis)); }
int Tensor::rank() const { return static_cast<int>(node_->shape.size()); }
std::size_t Tensor::numel() const { return node_->numel(); }
bool Tensor::requires_grad() const { return node_->requires_grad; }

const std::vector<double>& Tensor::data() const { return node_->data; }

std::vector<double>& Tensor::mutable_data() {
    if (!node_->is_leaf())
        throw ContractError("mutable access is restricted to leaf tensors");
    return node_->data;
}

const std::vector<double>& Tensor::grad() const {
    if (!node_->requires_grad)
        throw ContractError("gradient requested from a tensor that does not require it");
    const_cast<TensorNode*>(node_.get())->ensure_grad();
    return node_->grad;
}

void Tensor::zero_grad() {
    node_->ensure_grad();
    std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

double Tensor::value() const {
    if (node_->numel() != 1) throw ContractError("value() requires a single-element tensor");
    return node_->data[0];
}

double Tensor::at(std::vector<int> idx) const {
    if (idx.size() != node_->shape.size())
        throw ShapeError("index rank mismatch for shape " + shape_str(node_->shape));
    std::size_t flat = 0;
    for (std::size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] < 0 || idx[i] >= node_->shape[i])
            throw ShapeError("index out of range for shape " + shape_str(node_->shape));
        flat = flat * static_cast<std::size_t>(node_->shape[i]) + static_cast<std::size_t>(idx[i]);
    }
    return node_->data[flat];
}

// --- operations -------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    const auto& an = *a.node();
    const auto& bn = *b.node();
    if (an.shape.size() != 2 || bn.shape.size() != 2 || an.shape[1] != bn.shape[0])
        throw ShapeError("matmul needs [m x k] by [k x n], got " + shape_str(an.shape) +
                         " and " + shape_str(bn.shape));
    const int m = an.shape[0], k = an.shape[1], n = bn.shape[1];
    auto out = make_op({m, n}, {a.handle(), b.handle()}, "matmul");
    const double* A = an.data.data();
    const double* B = bn.data.data();
    double* C = out->data.data();
    for (int i = 0; i < m; ++i)
        for (int p = 0; p < k; ++p) {
            const double aip = A[i * k + p];
            if (aip == 0.0) continue;
            const double* Bp = B + p * n;
            double* Ci = C + i * n;
            for (int j = 0; j < n; ++j) Ci[j] += aip * Bp[j];
        }
    if (out->requires_grad) {
        out->backprop = [m, k, n](TensorNode& self) {
            auto& A_ = *self.inputs[0];
            auto& B_ = *self.inputs[1];
            const double* G = self.grad.data();
            if (A_.requires_grad) {
                A_.ensure_grad();
                // dA = G * B^T
                for (int i = 0; i < m; ++i)
                    for (int p = 0; p < k; ++p) {
                        double s = 0.0;
                        const double* Gi = G + i * n;
                        const double* Bp = B_.data.data() + p * n;
                        for (int j = 0; j < n; ++j) s += Gi[j] * Bp[j];
                        A_.grad[i * k + p] += s;
                    }
            }
            if (B_.requires_grad) {
                B_.ensure_grad();
                // dB = A^T * G
                for (int i = 0; i < m; ++i) {
                    const double* Ai = A_.data.data() + i * k;
                    const double* Gi = G + i * n;
                    for (int p = 0; p < k; ++p) {
                        const double aip = Ai[p];
                        if (aip == 0.0) continue;
                        double* Bg = B_.grad.data() + p * n;
                        for (int j = 0; j < n; ++j) Bg[j] += aip * Gi[j];
                    }
                }
            }
        };
    }
    return Tensor(out);
}

Tensor transpose(const Tensor& a) {
    const auto& an = *a.node();
    if (an.shape.size() != 2)
        throw ShapeError("transpose needs rank 2, got " + shape_str(an.shape));
    const int m = an.shape[0], n = an.shape[1];
    auto out = make_op({n, m}, {a.handle()}, "transpose");
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) out->data[j * m + i] = an.data[i * n + j];
    if (out->requires_grad) {
        out->backprop = [m, n](TensorNode& self) {
            auto& A_ = *self.inputs[0];
            if (!A_.requires_grad) return;
            A_.ensure_grad();
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j) A_.grad[i * n + j] += self.grad[j * m + i];
        };
    }
    return Tensor(out);
}

namespace {

// Shared machinery for add/mul with the three supported broadcast forms.
Tensor binary_ew(const Tensor& a, const Tensor& b, bool is_mul) {
    const auto& an = *a.node();
    const auto& bn = *b.node();
    const Broadcast bc = classify_broadcast(an, bn);
    auto out = make_op(an.shape, {a.handle(), b.handle()}, is_mul ? "mul" : "add");
    const std::size_t n = an.numel();
    const int width = lastdim(an);
    for (std::size_t i = 0; i < n; ++i) {
        double bv;
        switch (bc) {
            case Broadcast::Same: bv = bn.data[i]; break;
            case Broadcast::Scalar: bv = bn.data[0]; break;
            default: bv = bn.data[i % static_cast<std::size_t>(width)]; break;
        }
        out->data[i] = is_mul ? an.data[i] * bv : an.data[i] + bv;
    }
    if (out->requires_grad) {
        out->backprop = [bc, is_mul, width](TensorNode& self) {
            auto& A_ = *self.inputs[0];
            auto& B_ = *self.inputs[1];
            const std::size_t n_ = self.numel();
            if (A_.requires_grad) {
                A_.ensure_grad();
                for (std::size_t i = 0; i < n_; ++i) {
                    double g = self.grad[i];
                    if (is_mul) {
                        double bv;
                        switch (bc) {
                            case Broadcast::Same: bv = B_.data[i]; break;
                            case Broadcast::Scalar: bv = B_.data[0]; break;
                            default: bv = B_.data[i % static_cast<std::size_t>(width)]; break;
                        }
                        g *= bv;
                    }
                    A_.grad[i] += g;
                }
            }
            if (B_.requires_grad) {
                B_.ensure_grad();
                for (std::size_t i = 0; i < n_; ++i) {
                    double g = self.grad[i];
                    if (is_mul) g *= A_.data[i];
                    std::size_t bi;
                    switch (bc) {
                        case Broadcast::Same: bi = i; break;
                        case Broadcast::Scalar: bi = 0; break;
                        default: bi = i % static_cast<std::size_t>(width); break;
                    }
                    B_.grad[bi] += g;
                }
            }
        };
    }
    return Tensor(out);
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary_ew(a, b, false); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary_ew(a, b, true); }
Tensor sub(const Tensor& a, const Tensor& b) { return add(a, scale(b, -1.0)); }

Tensor scale(const Tensor& a, double c) {
    const auto& an = *a.node();
    auto out = make_op(an.shape, {a.handle()}, "scale");
    for (std::size_t i = 0; i < an.numel(); ++i) out->data[i] = an.data[i] * c;
    if (out->requires_grad) {
        out->backprop = [c](TensorNode& self) {
            auto& A_ = *self.inputs[0];
            if (!A_.requires_grad) return;
            A_.ensure_grad();
            for (std::size_t i = 0; i < self.numel(); ++i) A_.grad[i] += self.grad[i] * c;
        };
    }
    return Tensor(out);
}

Tensor sigmoid(const Tensor& a) {
    const auto& an = *a.node();
    auto out = make_op(an.shape, {a.handle()}, "sigmoid");
    for (std::size_t i = 0; i < an.numel(); ++i) {
        const double x = an.data[i];
        // Split form avoids exp overflow for large |x|.
        out->data[i] = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                                : std::exp(x) / (1.0 + std::exp(x));
    }
    if (out->requires_grad) {
        out->backprop = [](TensorNode& self) {
            auto& A_ = *self.inputs[0];
            if (!A_.requires_grad) return;
            A_.ensure_grad();
            for (std::size_t i = 0; i < self.numel(); ++i) {
                const double y = self.data[i];
                A_.grad[i] += self.grad[i] * y * (1.0 - y);
            }
        };
    }
    return Tensor(out);
}

Tensor relu(const Tensor& a) {
    const auto& an = *a.node();
    auto out = make_op(an.shape, {a.handle()}, "relu");
    for (std::size_t i = 0; i < an.numel(); ++i) out->data[i] = std::max(0.0, an.data[i]);
    if (out->requires_grad) {
        out->backprop = [](TensorNode& self) {
            auto& A_ = *self.inputs[0];
            if (!A_.requires_grad) return;
            A_.ensure_grad();
            for (std::size_t i = 0; i < self.numel(); ++i)
                if (A_.data[i] > 0.0) A_.grad[i] += self.grad[i];
        };
    }
    return Tensor(out);
}

namespace {

void require_finite_rows(const TensorNode& n, const char* what) {
    for (double v : n.data)
        if (std::isnan(v)) throw NumericError(std::string(what) + " input contains NaN");
}

}  // namespace

Tensor softmax_lastdim(const Tensor& a) {
    const auto& an = *a.node();
    require_finite_rows(an, "softmax");
    const int width = lastdim(an);
    const std::size_t slices = an.numel() / static_cast<std::size_t>(width);
    auto out = make_op(an.shape, {a.handle()}, "softmax");
    for (std::size_t s = 0; s < slices; ++s) {
        const double* x = an.data.data() + s * width;
        double* y = out->data.data() + s * width;
        double mx = x[0];
        for (int j = 1; j < width; ++j) mx = std::max(mx, x[j]);
        double z = 0.0;
        for (int j = 0; j < width; ++j) {
            y[j] = std::exp(x[j] - mx);
            z += y[j];
        }
        for (int j = 0; j < width; ++j) y[j] /= z;
    }
    if (out->requires_grad) {
        out->backprop = [width, slices](TensorNode& self) {
            auto& A_ = *self.inputs[0];
            if (!A_.requires_grad) return;
            A_.ensure_grad();
            for (std::size_t s = 0; s < slices; ++s) {
                const double* y = self.data.data() + s * width;
                const double* g = self.grad.data() + s * width;
                double dot = 0.0;
                for (int j = 0; j < width; ++j) dot += y[j] * g[j];
                double* ga = A_.grad.data() + s * width;
                for (int j = 0; j < width; ++j) ga[j] += y[j] * (g[j] - dot);
            }
        };
    }
    return Tensor(out);
}

Tensor log_softmax_lastdim(const Tensor& a) {
    const auto& an = *a.node();
    require_finite_rows(an, "log_softmax");
    const int width = lastdim(an);
    const std::size_t slices = an.numel() / static_cast<std::size_t>(width);
    auto out = make_op(an.shape, {a.handle()}, "log_softmax");
    for (std::size_t s = 0; s < slices; ++s) {
        const double* x = an.data.data() + s * width;
        double* y = out->data.data() + s * width;
        double mx = x[0];
        for (int j = 1; j < width; ++j) mx = std::max(mx, x[j]);
        double z = 0.0;
        for (int j = 0; j < width; ++j) z += std::exp(x[j] - mx);
        const double lz = std::log(z) + mx;
        for (int j = 0; j < width; ++j) y[j] = x[j] - lz;
    }
    if (out->requires_grad) {
        out->backprop = [width, slices](TensorNode& self) {
            auto& A_ = *self.inputs[0];
            if (!A_.requires_grad) return;
            A_.ensure_grad();
            for (std::size_t s = 0; s < slices; ++s) {
                const double* y = self.data.data() + s * width;
                const double* g = self.grad.data() + s * width;
                double gsum = 0.0;
                for (int j = 0; j < width; ++j) gsum += g[j];
                double* ga = A_.grad.data() + s * width;
                for (int j = 0; j < width; ++j) ga[j] += g[j] - std::exp(y[j]) * gsum;
            }
        };
    }
    return Tensor(out);
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
    const auto& xn = *x.node();
    const auto& gn = *gain.node();
    const auto& bn = *bias.node();
    const int width = lastdim(xn);
    if (gn.shape != std::vector<int>{width} || bn.shape != std::vector<int>{width})
        throw ShapeError("layer_norm gain/bias must be rank-1 of the normalized width " +
                         std::to_string(width));
    const std::size_t slices = xn.numel() / static_cast<std::size_t>(width);
    auto out = make_op(xn.shape, {x.handle(), gain.handle(), bias.handle()}, "layer_norm");
    // Per-slice inverse stddev and normalized values, kept for backward.
    std::vector<double> inv_sd(slices);
    std::vector<double> xhat(xn.numel());
    for (std::size_t s = 0; s < slices; ++s) {
        const double* xp = xn.data.data() + s * width;
        double mu = 0.0;
        for (int j = 0; j < width; ++j) mu += xp[j];
        mu /= width;
        double var = 0.0;
        for (int j = 0; j < width; ++j) {
            const double d = xp[j] - mu;
            var += d * d;
        }
        var /= width;
        const double isd = 1.0 / std::sqrt(var + eps);
        inv_sd[s] = isd;
        double* xh = xhat.data() + s * width;
        double* y = out->data.data() + s * width;
        for (int j = 0; j < width; ++j) {
            xh[j] = (xp[j] - mu) * isd;
            y[j] = gn.data[j] * xh[j] + bn.data[j];
        }
    }
    if (out->requires_grad) {
        out->backprop = [width, slices, inv_sd = std::move(inv_sd),
                         xhat = std::move(xhat)](TensorNode& self) {
            auto& X_ = *self.inputs[0];
            auto& G_ = *self.inputs[1];
            auto& B_ = *self.inputs[2];
            if (G_.requires_grad) G_.ensure_grad();
            if (B_.requires_grad) B_.ensure_grad();
            if (X_.requires_grad) X_.ensure_grad();
            for (std::size_t s = 0; s < slices; ++s) {
                const double* g = self.grad.data() + s * width;
                const double* xh = xhat.data() + s * width;
                if (G_.requires_grad)
                    for (int j = 0; j < width; ++j) G_.grad[j] += g[j] * xh[j];
                if (B_.requires_grad)
                    for (int j = 0; j < width; ++j) B_.grad[j] += g[j];
                if (X_.requires_grad) {
                    double mean_u = 0.0, mean_ux = 0.0;
                    for (int j = 0; j < width; ++j) {
                        const double u = G_.data[j] * g[j];
                        mean_u += u;
                        mean_ux += u * xh[j];
                    }
                    mean_u /= width;
                    mean_ux /= width;
                    double* gx = X_.grad.data() + s * width;
                    for (int j = 0; j < width; ++j) {
                        const double u = G_.data[j] * g[j];
                        gx[j] += inv_sd[s] * (u - mean_u - xh[j] * mean_ux);
                    }
                }
            }
        };
    }
    return Tensor(out);
}

Tensor conv1d_same(const Tensor& x, const Tensor& kernel) {
    const auto& xn = *x.node();
    const auto& kn = *kernel.node();
    if (xn.shape.size() != 2 || kn.shape.size() != 3)
        throw ShapeError("conv1d_same needs x [n x d_in] and kernel [k x d_in x d_out]");
    const int n = xn.shape[0], din = xn.shape[1];
    const int kw = kn.shape[0], kdin = kn.shape[1], dout = kn.shape[2];
    if (kdin != din)
        throw ShapeError("conv1d_same channel mismatch: x has " + std::to_string(din) +
                         ", kernel expects " + std::to_string(kdin));
    if (kw % 2 == 0)
        throw ConfigError("conv1d_same kernel width must be odd, got " + std::to_string(kw));
    const int r = kw / 2;
    auto out = make_op({n, dout}, {x.handle(), kernel.handle()}, "conv1d");
    for (int i = 0; i < n; ++i)
        for (int t = -r; t <= r; ++t) {
            const int src = i + t;
            if (src < 0 || src >= n) continue;
            const double* xr = xn.data.data() + src * din;
            const double* kt = kn.data.data() + (t + r) * din * dout;
            double* y = out->data.data() + i * dout;
            for (int c = 0; c < din; ++c) {
                const double xv = xr[c];
                if (xv == 0.0) continue;
                const double* kc = kt + c * dout;
                for (int o = 0; o < dout; ++o) y[o] += xv * kc[o];
            }
        }
    if (out->requires_grad) {
        out->backprop = [n, din, kw, dout, r](TensorNode& self) {
            auto& X_ = *self.inputs[0];
            auto& K_ = *self.inputs[1];
            if (X_.requires_grad) X_.ensure_grad();
            if (K_.requires_grad) K_.ensure_grad();
            for (int i = 0; i < n; ++i)
                for (int t = -r; t <= r; ++t) {
                    const int src = i + t;
                    if (src < 0 || src >= n) continue;
                    const double* g = self.grad.data() + i * dout;
                    const double* kt = K_.data.data() + (t + r) * din * dout;
                    const double* xr = X_.data.data() + src * din;
                    for (int c = 0; c < din; ++c) {
                        if (X_.requires_grad) {
                            double s = 0.0;
                            const double* kc = kt + c * dout;
                            for (int o = 0; o < dout; ++o) s += g[o] * kc[o];
                            X_.grad[src * din + c] += s;
                        }
                        if (K_.requires_grad) {
                            const double xv = xr[c];
                            if (xv != 0.0) {
                                double* kg = K_.grad.data() + (t + r) * din * dout + c * dout;
                                for (int o = 0; o < dout; ++o) kg[o] += xv * g[o];
                            }
                        }
                    }
                }
        };
    }
    return Tensor(out);
}

Tensor take_rows(const Tensor& x, const std::vector<int>& rows) {
    const auto& xn = *x.node();
    const int nrows = rows_of(xn);
    const std::size_t w = row_width(xn);
    for (int r : rows)
        if (r < 0 || r >= nrows)
            throw ShapeError("take_rows index " + std::to_string(r) + " out of range [0, " +
                             std::to_string(nrows) + ")");
    std::vector<int> oshape = xn.shape;
    oshape[0] = static_cast<int>(rows.size());
    auto out = make_op(std::move(oshape), {x.handle()}, "take_rows");
    for (std::size_t i = 0; i < rows.size(); ++i)
        std::copy_n(xn.data.data() + static_cast<std::size_t>(rows[i]) * w, w,
                    out->data.data() + i * w);
    if (out->requires_grad) {
        out->backprop = [rows, w](TensorNode& self) {
            auto& X_ = *self.inputs[0];
            if (!X_.requires_grad) return;
            X_.ensure_grad();
            for (std::size_t i = 0; i < rows.size(); ++i) {
                const double* g = self.grad.data() + i * w;
                double* xg = X_.grad.data() + static_cast<std::size_t>(rows[i]) * w;
                for (std::size_t j = 0; j < w; ++j) xg[j] += g[j];
            }
        };
    }
    return Tensor(out);
}

Tensor slice_rows(const Tensor& x, int begin, int end) {
    const auto& xn = *x.node();
    const int nrows = rows_of(xn);
    if (begin < 0 || end > nrows || begin >= end)
        throw ShapeError("slice_rows [" + std::to_string(begin) + ", " + std::to_string(end) +
                         ") invalid for " + std::to_string(nrows) + " rows");
    std::vector<int> idx(static_cast<std::size_t>(end - begin));
    for (int i = begin; i < end; ++i) idx[static_cast<std::size_t>(i - begin)] = i;
    return take_rows(x, idx);
}

Tensor slice_cols(const Tensor& x, int begin, int end) {
    const auto& xn = *x.node();
    if (xn.shape.size() != 2) throw ShapeError("slice_cols expects rank-2, got " + shape_str(xn.shape));
    const int n = xn.shape[0], d = xn.shape[1];
    if (begin < 0 || end > d || begin >= end)
        throw ShapeError("slice_cols [" + std::to_string(begin) + ", " + std::to_string(end) +
                         ") out of range for " + std::to_string(d) + " columns");
    const int w = end - begin;
    auto out = make_op({n, w}, {x.handle()}, "slice_cols");
    for (int i = 0; i < n; ++i)
        std::copy_n(xn.data.data() + static_cast<std::size_t>(i) * d + begin, w,
                    out->data.data() + static_cast<std::size_t>(i) * w);
    if (out->requires_grad) {
        out->backprop = [n, d, w, begin](TensorNode& self) {
            auto& X_ = *self.inputs[0];
            if (!X_.requires_grad) return;
            X_.ensure_grad();
            for (int i = 0; i < n; ++i) {
                const double* g = self.grad.data() + static_cast<std::size_t>(i) * w;
                double* ig = X_.grad.data() + static_cast<std::size_t>(i) * d + begin;
                for (int j = 0; j < w; ++j) ig[j] += g[j];
            }
        };
    }
    return Tensor(out);
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ContractError("concat_cols needs at least one part");
    const int n = parts[0].dim(0);
    int total = 0;
    std::vector<NodePtr> ins;
    for (const auto& p : parts) {
        if (p.rank() != 2 || p.dim(0) != n)
            throw ShapeError("concat_cols parts must be rank-2 with equal row counts");
        total += p.dim(1);
        ins.push_back(p.handle());
    }
    auto out = make_op({n, total}, std::move(ins), "concat_cols");
    int col = 0;
    for (const auto& p : parts) {
        const int w = p.dim(1);
        for (int i = 0; i < n; ++i)
            std::copy_n(p.data().data() + static_cast<std::size_t>(i) * w, w,
                        out->data.data() + static_cast<std::size_t>(i) * total + col);
        col += w;
    }
    if (out->requires_grad) {
        out->backprop = [n, total](TensorNode& self) {
            int col_ = 0;
            for (auto& in : self.inputs) {
                const int w = in->shape[1];
                if (in->requires_grad) {
                    in->ensure_grad();
                    for (int i = 0; i < n; ++i) {
                        const double* g =
                            self.grad.data() + static_cast<std::size_t>(i) * total + col_;
                        double* ig = in->grad.data() + static_cast<std::size_t>(i) * w;
                        for (int j = 0; j < w; ++j) ig[j] += g[j];
                    }
                }
                col_ += w;
            }
        };
    }
    return Tensor(out);
}

Tensor reshape(const Tensor& x, std::vector<int> shape) {
    const auto& xn = *x.node();
    check_shape(shape);
    if (numel_of(shape) != xn.numel())
        throw ShapeError("reshape to " + shape_str(shape) + " changes element count");
    auto out = make_op(std::move(shape), {x.handle()}, "reshape");
    out->data = xn.data;
    if (out->requires_grad) {
        out->backprop = [](TensorNode& self) {
            auto& X_ = *self.inputs[0];
            if (!X_.requires_grad) return;
            X_.ensure_grad();
            for (std::size_t i = 0; i < self.numel(); ++i) X_.grad[i] += self.grad[i];
        };
    }
    return Tensor(out);
}

Tensor sum_all(const Tensor& x) {
    const auto& xn = *x.node();
    auto out = make_op({}, {x.handle()}, "sum");
    double s = 0.0;
    for (double v : xn.data) s += v;
    out->data[0] = s;
    if (out->requires_grad) {
        out->backprop = [](TensorNode& self) {
            auto& X_ = *self.inputs[0];
            if (!X_.requires_grad) return;
            X_.ensure_grad();
            const double g = self.grad[0];
            for (auto& v : X_.grad) v += g;
        };
    }
    return Tensor(out);
}

Tensor pick_lastdim(const Tensor& x, const std::vector<int>& ids) {
    const auto& xn = *x.node();
    if (xn.shape.size() != 2)
        throw ShapeError("pick_lastdim needs rank 2, got " + shape_str(xn.shape));
    const int m = xn.shape[0], w = xn.shape[1];
    if (static_cast<int>(ids.size()) != m)
        throw ShapeError("pick_lastdim needs one index per row");
    for (int id : ids)
        if (id < 0 || id >= w)
            throw ShapeError("pick_lastdim index " + std::to_string(id) + " out of range");
    auto out = make_op({m}, {x.handle()}, "pick");
    for (int i = 0; i < m; ++i)
        out->data[i] = xn.data[static_cast<std::size_t>(i) * w + static_cast<std::size_t>(ids[i])];
    if (out->requires_grad) {
        out->backprop = [ids, w](TensorNode& self) {
            auto& X_ = *self.inputs[0];
            if (!X_.requires_grad) return;
            X_.ensure_grad();
            for (std::size_t i = 0; i < ids.size(); ++i)
                X_.grad[i * static_cast<std::size_t>(w) + static_cast<std::size_t>(ids[i])] +=
                    self.grad[i];
        };
    }
    return Tensor(out);
}

// --- backward ---------------------------------------------------------------

std::size_t backward(const Tensor& loss) {
    if (!loss.defined() || loss.numel() != 1)
        throw ContractError("backward requires a single-element loss tensor");
    TensorNode* root = loss.node();

    // Iterative post-order over the DAG; each node enters `order` once.
    std::vector<TensorNode*> order;
    std::unordered_set<TensorNode*> seen;
    std::vector<std::pair<TensorNode*, std::size_t>> stack;
    stack.emplace_back(root, 0);
    seen.insert(root);
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->inputs.size()) {
            TensorNode* child = node->inputs[next].get();
            ++next;
            if (seen.insert(child).second) stack.emplace_back(child, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    // Interior gradients are per-sweep scratch; leaf gradients persist so
    // that repeated sweeps accumulate.
    for (TensorNode* n : order) {
        if (!n->is_leaf()) n->grad.assign(n->data.size(), 0.0);
    }
    root->ensure_grad();
    root->grad[0] += 1.0;

    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorNode* n = *it;
        if (n->requires_grad && n->backprop) n->backprop(*n);
    }
    return order.size();
}

}  // namespace satl
