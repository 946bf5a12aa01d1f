#pragma once

#include <functional>
#include <map>
#include <vector>

#include "efft/tensor.hpp"

namespace efft {

enum class Op {
    Leaf,
    Add,
    Scale,
    Matmul,
    Transpose,
    ConcatRows,
    SliceRows,
    SoftmaxRows,
    Gelu,
    LayerNormRows,
    Mean,
    CrossEntropyLogits,
};

/// One entry of the tape. Forward values are computed eagerly; aux tensors
/// cache whatever the backward rule reuses (softmax output is the node value
/// itself, layer norm caches x-hat and 1/std).
struct Node {
    Op op = Op::Leaf;
    std::vector<int> inputs;
    Tensor value;
    bool trainable = false; // leaves only
    double scalar = 0.0;    // Scale
    int row_start = 0;      // SliceRows
    std::vector<int> labels; // CrossEntropyLogits
    Tensor aux1, aux2;
};

/// Append-only reverse-mode tape over 2-D tensors. Node ids are indices;
/// inputs always precede outputs, so the node list is already topologically
/// ordered. A tape is single-threaded; independent tapes are independent.
class Tape {
public:
    int leaf(Tensor value, bool trainable = false);

    int add(int a, int b);
    int scale(int a, double c);
    int matmul(int a, int b);
    int transpose(int a);
    int concat_rows(const std::vector<int>& parts);
    int slice_rows(int a, int start, int count);
    int softmax_rows(int a);
    int gelu(int a);
    /// Rows normalized to mean 0 / variance 1 (epsilon inside the sqrt),
    /// then y = xhat * gain + bias with gain/bias broadcast as 1 x d leaves.
    int layer_norm_rows(int x, int gain, int bias, double eps = 1e-5);
    int mean(int a);
    /// Mean softmax cross-entropy over rows; labels[i] indexes row i's class.
    int cross_entropy_logits(int logits, std::vector<int> labels);

    const Tensor& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
    Op op(int id) const { return nodes_[static_cast<std::size_t>(id)].op; }
    std::size_t size() const { return nodes_.size(); }
    const std::vector<int>& param_ids() const { return param_ids_; }

    /// Reverse accumulation from a scalar loss node. Returns gradients for
    /// trainable leaves only, keyed by node id. Stateless: calling twice
    /// gives identical results.
    std::map<int, Tensor> backward(int loss) const;

private:
    int push(Node n);
    const Node& node(int id) const { return nodes_[static_cast<std::size_t>(id)]; }

    std::vector<Node> nodes_;
    std::vector<int> param_ids_;
};

/// Builds a scalar loss on the given tape from parameter leaves (already
/// created, in the order the params were supplied) and returns the loss node.
using LossBuilder = std::function<int(Tape&, const std::vector<int>&)>;

/// Central-difference gradient check. Samples up to `coords_per_tensor`
/// coordinates of each parameter tensor (all of them when the tensor is
/// smaller) and returns the max relative error against backward(), with
/// denominator max(|analytic|, |numeric|, 1e-8).
double finite_difference_check(const LossBuilder& build_loss, std::vector<Tensor> params,
                               double eps = 1e-5, int coords_per_tensor = 50,
                               std::uint64_t seed = 12345);

} // namespace efft
