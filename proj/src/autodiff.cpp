#include "efft/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace efft {

namespace {

constexpr double kGeluK = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluC = 0.044715;

double gelu_value(double x) {
    return 0.5 * x * (1.0 + std::tanh(kGeluK * (x + kGeluC * x * x * x)));
}

double gelu_derivative(double x) {
    const double u = kGeluK * (x + kGeluC * x * x * x);
    const double t = std::tanh(u);
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * kGeluK * (1.0 + 3.0 * kGeluC * x * x);
}

void require_2d_node(const Tensor& t, const char* what) {
    if (t.rank() != 2) throw ShapeError(std::string(what) + ": expected a 2-D value");
}

} // namespace

int Tape::push(Node n) {
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
}

int Tape::leaf(Tensor value, bool trainable) {
    Node n;
    n.op = Op::Leaf;
    n.value = std::move(value);
    n.trainable = trainable;
    int id = push(std::move(n));
    if (trainable) param_ids_.push_back(id);
    return id;
}

int Tape::add(int a, int b) {
    const Tensor& va = value(a);
    const Tensor& vb = value(b);
    if (!va.same_shape(vb)) throw ShapeError("add: shape mismatch");
    Node n;
    n.op = Op::Add;
    n.inputs = {a, b};
    n.value = va;
    for (std::size_t i = 0; i < n.value.size(); ++i) n.value[i] += vb[i];
    return push(std::move(n));
}

int Tape::scale(int a, double c) {
    Node n;
    n.op = Op::Scale;
    n.inputs = {a};
    n.scalar = c;
    n.value = efft::scale(value(a), c);
    return push(std::move(n));
}

int Tape::matmul(int a, int b) {
    Node n;
    n.op = Op::Matmul;
    n.inputs = {a, b};
    n.value = efft::matmul(value(a), value(b));
    return push(std::move(n));
}

int Tape::transpose(int a) {
    Node n;
    n.op = Op::Transpose;
    n.inputs = {a};
    n.value = efft::transpose(value(a));
    return push(std::move(n));
}

int Tape::concat_rows(const std::vector<int>& parts) {
    if (parts.empty()) throw ShapeError("concat_rows: no inputs");
    int cols = value(parts[0]).cols();
    int rows = 0;
    for (int p : parts) {
        require_2d_node(value(p), "concat_rows");
        if (value(p).cols() != cols) throw ShapeError("concat_rows: column mismatch");
        rows += value(p).rows();
    }
    Node n;
    n.op = Op::ConcatRows;
    n.inputs = parts;
    n.value = Tensor({rows, cols});
    int at = 0;
    for (int p : parts) {
        const Tensor& v = value(p);
        for (int i = 0; i < v.rows(); ++i)
            for (int j = 0; j < cols; ++j) n.value(at + i, j) = v(i, j);
        at += v.rows();
    }
    return push(std::move(n));
}

int Tape::slice_rows(int a, int start, int count) {
    Node n;
    n.op = Op::SliceRows;
    n.inputs = {a};
    n.row_start = start;
    n.value = efft::slice_rows(value(a), start, count);
    return push(std::move(n));
}

int Tape::softmax_rows(int a) {
    const Tensor& x = value(a);
    require_2d_node(x, "softmax_rows");
    Node n;
    n.op = Op::SoftmaxRows;
    n.inputs = {a};
    n.value = Tensor({x.rows(), x.cols()});
    for (int i = 0; i < x.rows(); ++i) {
        double mx = x(i, 0);
        for (int j = 1; j < x.cols(); ++j) mx = std::max(mx, x(i, j));
        double sum = 0.0;
        for (int j = 0; j < x.cols(); ++j) {
            const double e = std::exp(x(i, j) - mx);
            n.value(i, j) = e;
            sum += e;
        }
        for (int j = 0; j < x.cols(); ++j) n.value(i, j) /= sum;
    }
    return push(std::move(n));
}

int Tape::gelu(int a) {
    Node n;
    n.op = Op::Gelu;
    n.inputs = {a};
    n.value = value(a);
    for (std::size_t i = 0; i < n.value.size(); ++i) n.value[i] = gelu_value(n.value[i]);
    return push(std::move(n));
}

int Tape::layer_norm_rows(int x, int gain, int bias, double eps) {
    const Tensor& xv = value(x);
    require_2d_node(xv, "layer_norm_rows");
    const int rows = xv.rows(), cols = xv.cols();
    const Tensor& g = value(gain);
    const Tensor& b = value(bias);
    if (g.rank() != 2 || g.rows() != 1 || g.cols() != cols)
        throw ShapeError("layer_norm_rows: gain must be 1 x cols");
    if (b.rank() != 2 || b.rows() != 1 || b.cols() != cols)
        throw ShapeError("layer_norm_rows: bias must be 1 x cols");

    Node n;
    n.op = Op::LayerNormRows;
    n.inputs = {x, gain, bias};
    n.scalar = eps;
    n.value = Tensor({rows, cols});
    n.aux1 = Tensor({rows, cols}); // xhat
    n.aux2 = Tensor({rows, 1});    // 1/std
    for (int i = 0; i < rows; ++i) {
        double mu = 0.0;
        for (int j = 0; j < cols; ++j) mu += xv(i, j);
        mu /= cols;
        double var = 0.0;
        for (int j = 0; j < cols; ++j) {
            const double dxx = xv(i, j) - mu;
            var += dxx * dxx;
        }
        var /= cols;
        const double rstd = 1.0 / std::sqrt(var + eps);
        n.aux2(i, 0) = rstd;
        for (int j = 0; j < cols; ++j) {
            const double xh = (xv(i, j) - mu) * rstd;
            n.aux1(i, j) = xh;
            n.value(i, j) = xh * g(0, j) + b(0, j);
        }
    }
    return push(std::move(n));
}

int Tape::mean(int a) {
    const Tensor& x = value(a);
    Node n;
    n.op = Op::Mean;
    n.inputs = {a};
    n.value = Tensor({1, 1});
    double sum = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) sum += x[i];
    n.value(0, 0) = sum / static_cast<double>(x.size());
    return push(std::move(n));
}

int Tape::cross_entropy_logits(int logits, std::vector<int> labels) {
    const Tensor& z = value(logits);
    require_2d_node(z, "cross_entropy_logits");
    if (!z.all_finite()) throw NumericError("cross_entropy_logits: non-finite logits");
    if (static_cast<int>(labels.size()) != z.rows())
        throw ShapeError("cross_entropy_logits: one label per row required");
    const int rows = z.rows(), cols = z.cols();
    for (int lab : labels)
        if (lab < 0 || lab >= cols) throw ContractError("cross_entropy_logits: label out of range");

    Node n;
    n.op = Op::CrossEntropyLogits;
    n.inputs = {logits};
    n.labels = std::move(labels);
    n.aux1 = Tensor({rows, cols}); // softmax probabilities
    n.value = Tensor({1, 1});
    double total = 0.0;
    for (int i = 0; i < rows; ++i) {
        double mx = z(i, 0);
        for (int j = 1; j < cols; ++j) mx = std::max(mx, z(i, j));
        double sum = 0.0;
        for (int j = 0; j < cols; ++j) sum += std::exp(z(i, j) - mx);
        const double lse = mx + std::log(sum);
        for (int j = 0; j < cols; ++j) n.aux1(i, j) = std::exp(z(i, j) - mx) / sum;
        total += lse - z(i, n.labels[static_cast<std::size_t>(i)]);
    }
    n.value(0, 0) = total / rows;
    return push(std::move(n));
}

std::map<int, Tensor> Tape::backward(int loss) const {
    const Tensor& lv = value(loss);
    if (lv.size() != 1) throw ContractError("backward: loss must be scalar-valued");

    std::vector<Tensor> grad(nodes_.size());
    for (std::size_t i = 0; i < nodes_.size(); ++i) grad[i] = Tensor(nodes_[i].value.shape());
    grad[static_cast<std::size_t>(loss)][0] = 1.0;

    for (int id = loss; id >= 0; --id) {
        const Node& n = nodes_[static_cast<std::size_t>(id)];
        const Tensor& g = grad[static_cast<std::size_t>(id)];
        switch (n.op) {
        case Op::Leaf:
            break;
        case Op::Add: {
            Tensor& ga = grad[static_cast<std::size_t>(n.inputs[0])];
            Tensor& gb = grad[static_cast<std::size_t>(n.inputs[1])];
            for (std::size_t i = 0; i < g.size(); ++i) {
                ga[i] += g[i];
                gb[i] += g[i];
            }
            break;
        }
        case Op::Scale: {
            Tensor& ga = grad[static_cast<std::size_t>(n.inputs[0])];
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += n.scalar * g[i];
            break;
        }
        case Op::Matmul: {
            const Tensor& a = value(n.inputs[0]);
            const Tensor& b = value(n.inputs[1]);
            Tensor da = efft::matmul(g, efft::transpose(b));
            Tensor db = efft::matmul(efft::transpose(a), g);
            Tensor& ga = grad[static_cast<std::size_t>(n.inputs[0])];
            Tensor& gb = grad[static_cast<std::size_t>(n.inputs[1])];
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += da[i];
            for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += db[i];
            break;
        }
        case Op::Transpose: {
            Tensor gt = efft::transpose(g);
            Tensor& ga = grad[static_cast<std::size_t>(n.inputs[0])];
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += gt[i];
            break;
        }
        case Op::ConcatRows: {
            int at = 0;
            for (int p : n.inputs) {
                Tensor& gp = grad[static_cast<std::size_t>(p)];
                for (int i = 0; i < gp.rows(); ++i)
                    for (int j = 0; j < gp.cols(); ++j) gp(i, j) += g(at + i, j);
                at += gp.rows();
            }
            break;
        }
        case Op::SliceRows: {
            Tensor& ga = grad[static_cast<std::size_t>(n.inputs[0])];
            for (int i = 0; i < g.rows(); ++i)
                for (int j = 0; j < g.cols(); ++j) ga(n.row_start + i, j) += g(i, j);
            break;
        }
        case Op::SoftmaxRows: {
            const Tensor& y = n.value;
            Tensor& ga = grad[static_cast<std::size_t>(n.inputs[0])];
            for (int i = 0; i < y.rows(); ++i) {
                double dot = 0.0;
                for (int j = 0; j < y.cols(); ++j) dot += g(i, j) * y(i, j);
                for (int j = 0; j < y.cols(); ++j) ga(i, j) += y(i, j) * (g(i, j) - dot);
            }
            break;
        }
        case Op::Gelu: {
            const Tensor& x = value(n.inputs[0]);
            Tensor& ga = grad[static_cast<std::size_t>(n.inputs[0])];
            for (std::size_t i = 0; i < x.size(); ++i) ga[i] += g[i] * gelu_derivative(x[i]);
            break;
        }
        case Op::LayerNormRows: {
            const Tensor& gain = value(n.inputs[1]);
            const Tensor& xhat = n.aux1;
            const Tensor& rstd = n.aux2;
            Tensor& gx = grad[static_cast<std::size_t>(n.inputs[0])];
            Tensor& gg = grad[static_cast<std::size_t>(n.inputs[1])];
            Tensor& gb = grad[static_cast<std::size_t>(n.inputs[2])];
            const int rows = xhat.rows(), cols = xhat.cols();
            for (int i = 0; i < rows; ++i) {
                double m1 = 0.0, m2 = 0.0;
                for (int j = 0; j < cols; ++j) {
                    const double v = g(i, j) * gain(0, j);
                    m1 += v;
                    m2 += v * xhat(i, j);
                }
                m1 /= cols;
                m2 /= cols;
                for (int j = 0; j < cols; ++j) {
                    const double v = g(i, j) * gain(0, j);
                    gx(i, j) += rstd(i, 0) * (v - m1 - xhat(i, j) * m2);
                    gg(0, j) += g(i, j) * xhat(i, j);
                    gb(0, j) += g(i, j);
                }
            }
            break;
        }
        case Op::Mean: {
            Tensor& ga = grad[static_cast<std::size_t>(n.inputs[0])];
            const double w = g[0] / static_cast<double>(ga.size());
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += w;
            break;
        }
        case Op::CrossEntropyLogits: {
            const Tensor& probs = n.aux1;
            Tensor& gz = grad[static_cast<std::size_t>(n.inputs[0])];
            const double w = g[0] / probs.rows();
            for (int i = 0; i < probs.rows(); ++i) {
                for (int j = 0; j < probs.cols(); ++j) {
                    const double onehot =
                        (j == n.labels[static_cast<std::size_t>(i)]) ? 1.0 : 0.0;
                    gz(i, j) += w * (probs(i, j) - onehot);
                }
            }
            break;
        }
        }
    }

    std::map<int, Tensor> out;
    for (int pid : param_ids_)
        out.emplace(pid, std::move(grad[static_cast<std::size_t>(pid)]));
    return out;
}

double finite_difference_check(const LossBuilder& build_loss, std::vector<Tensor> params,
                               double eps, int coords_per_tensor, std::uint64_t seed) {
    if (eps <= 0) throw ContractError("finite_difference_check: eps must be positive");

    auto loss_at = [&](const std::vector<Tensor>& p) {
        Tape tape;
        std::vector<int> ids;
        ids.reserve(p.size());
        for (const Tensor& t : p) ids.push_back(tape.leaf(t, true));
        const int loss = build_loss(tape, ids);
        return tape.value(loss)(0, 0);
    };

    // Analytic gradients once.
    Tape tape;
    std::vector<int> ids;
    for (const Tensor& t : params) ids.push_back(tape.leaf(t, true));
    const int loss = build_loss(tape, ids);
    auto grads = tape.backward(loss);

    Rng rng(seed);
    double max_rel = 0.0;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        const Tensor& analytic = grads.at(ids[pi]);
        const std::size_t n = params[pi].size();
        std::vector<std::size_t> coords;
        if (static_cast<int>(n) <= coords_per_tensor) {
            for (std::size_t c = 0; c < n; ++c) coords.push_back(c);
        } else {
            std::vector<std::size_t> all(n);
            for (std::size_t c = 0; c < n; ++c) all[c] = c;
            for (int c = 0; c < coords_per_tensor; ++c) {
                const std::size_t pick =
                    c + static_cast<std::size_t>(rng.next_below(n - static_cast<std::size_t>(c)));
                std::swap(all[static_cast<std::size_t>(c)], all[pick]);
                coords.push_back(all[static_cast<std::size_t>(c)]);
            }
        }
        for (std::size_t c : coords) {
            const double orig = params[pi][c];
            params[pi][c] = orig + eps;
            const double up = loss_at(params);
            params[pi][c] = orig - eps;
            const double down = loss_at(params);
            params[pi][c] = orig;
            const double numeric = (up - down) / (2.0 * eps);
            const double a = analytic[c];
            const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
            max_rel = std::max(max_rel, std::abs(a - numeric) / denom);
        }
    }
    return max_rel;
}

} // namespace efft
