#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <vector>

namespace flexireg::ad {

using Matrix = Eigen::MatrixXd;

// Handle into a Tape node.
struct Var {
  int idx = -1;
  bool valid() const { return idx >= 0; }
};

// Reverse-mode autodiff over dense double matrices. A tape is built fresh
// per forward pass; backward() runs the recorded closures in reverse
// order. Scalars are 1x1 matrices.
class Tape {
 public:
  Var input(Matrix value, bool requires_grad = false);
  Var constant(double v) { return input(Matrix::Constant(1, 1, v), false); }

  const Matrix& value(Var v) const { return nodes_[static_cast<std::size_t>(v.idx)].value; }
  const Matrix& grad(Var v) const;

  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var cmul(Var a, Var b);                 // elementwise
  Var scale(Var a, double s);
  Var matmul(Var a, Var b, bool trans_a = false, bool trans_b = false);
  Var transpose(Var a);
  Var leaky_relu(Var a, double slope = 0.01);
  Var relu(Var a);
  Var abs(Var a);
  Var log(Var a);
  Var sqrt(Var a);
  Var sigmoid(Var a);
  Var softmax_rows(Var a);                // stable, max-subtracted
  Var logsumexp_rows(Var a);              // m x n -> m x 1
  Var sum_all(Var a);                     // -> 1 x 1
  Var mean_all(Var a);                    // -> 1 x 1
  Var rowwise_sum(Var a);                 // m x n -> m x 1
  Var colwise_sum(Var a);                 // m x n -> 1 x n
  Var add_row_broadcast(Var a, Var row);  // a + ones * row   (row is 1 x n)
  Var add_col_broadcast(Var a, Var col);  // a + col * ones   (col is m x 1)
  Var scale_by(Var a, Var scalar);        // scalar is 1 x 1
  Var concat_cols(const std::vector<Var>& parts);
  Var slice_cols(Var a, Eigen::Index start, Eigen::Index count);
  Var gather_rows(Var a, std::vector<Eigen::Index> rows);
  Var dropout(Var a, const Matrix& keep_mask);  // mask already scaled by 1/(1-p)
  // y = gain .* (x - mu_row) / sqrt(var_row + eps) + bias; gain/bias 1 x d
  Var layernorm_rows(Var x, Var gain, Var bias, double eps = 1e-5);
  // mean_i smooth_l1(pred_i - target_i); pred m x 1
  Var smooth_l1_mean(Var pred, const Matrix& target, double beta);

  void backward(Var seed);  // seed must be 1 x 1

  std::size_t size() const { return nodes_.size(); }

  Var tile_row_internal(Var row, Eigen::Index m);

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    std::function<void(Tape&)> backprop;  // empty for leaves
  };
  std::vector<Node> nodes_;

  Node& node(Var v) { return nodes_[static_cast<std::size_t>(v.idx)]; }
  Var push(Matrix value, bool requires_grad, std::function<void(Tape&)> backprop);
  void accumulate(Var v, const Matrix& g);
  bool needs(Var v) const { return nodes_[static_cast<std::size_t>(v.idx)].requires_grad; }
};

// Learnable parameter with Adam state.
struct Param {
  Matrix value;
  Matrix m;  // first moment
  Matrix s;  // second moment
  explicit Param(Matrix v) : value(std::move(v)) {
    m = Matrix::Zero(value.rows(), value.cols());
    s = Matrix::Zero(value.rows(), value.cols());
  }
};

class Adam {
 public:
  Adam(double lr, double weight_decay = 0.0, double beta1 = 0.9,
       double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), weight_decay_(weight_decay), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  // One update over (param, grad) pairs; call once per epoch with all params.
  void step(const std::vector<std::pair<Param*, const Matrix*>>& params_and_grads);

 private:
  double lr_, weight_decay_, beta1_, beta2_, eps_;
  long t_ = 0;
};

}  // namespace flexireg::ad
