#include "flexireg/autodiff.hpp"

#include <cmath>
#include <stdexcept>
#include <utility>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace flexireg::ad {

namespace {
// Large Eigen temporaries (hundreds of MB across a training epoch) otherwise
// go through mmap/munmap on every allocation; keeping them on the heap lets
// the allocator reuse the blocks.
[[maybe_unused]] const bool kHeapTuned = [] {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
  return true;
}();
}  // namespace

Var Tape::input(Matrix value, bool requires_grad) {
  return push(std::move(value), requires_grad, nullptr);
}

Var Tape::push(Matrix value, bool requires_grad, std::function<void(Tape&)> backprop) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  n.backprop = std::move(backprop);
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

const Matrix& Tape::grad(Var v) const {
  const Node& n = nodes_[static_cast<std::size_t>(v.idx)];
  if (n.grad.size() == 0)
    throw std::logic_error("grad requested before backward (or for a constant)");
  return n.grad;
}

void Tape::accumulate(Var v, const Matrix& g) {
  Node& n = node(v);
  if (!n.requires_grad) return;
  if (n.grad.size() == 0)
    n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
  n.grad += g;
}

void Tape::backward(Var seed) {
  Node& top = node(seed);
  if (top.value.rows() != 1 || top.value.cols() != 1)
    throw std::invalid_argument("backward: seed must be a scalar node");
  if (!top.requires_grad)
    throw std::invalid_argument("backward: seed does not depend on any parameter");
  top.grad = Matrix::Constant(1, 1, 1.0);
  for (int i = seed.idx; i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (n.backprop && n.requires_grad && n.grad.size() != 0) n.backprop(*this);
  }
}

Var Tape::add(Var a, Var b) {
  const bool rg = needs(a) || needs(b);
  Var out = push(value(a) + value(b), rg, nullptr);
  if (rg)
    node(out).backprop = [a, b, out](Tape& t) {
      const Matrix& g = t.grad(out);
      t.accumulate(a, g);
      t.accumulate(b, g);
    };
  return out;
}

Var Tape::sub(Var a, Var b) {
  const bool rg = needs(a) || needs(b);
  Var out = push(value(a) - value(b), rg, nullptr);
  if (rg)
    node(out).backprop = [a, b, out](Tape& t) {
      const Matrix& g = t.grad(out);
      t.accumulate(a, g);
      t.accumulate(b, Matrix(-g));
    };
  return out;
}

Var Tape::cmul(Var a, Var b) {
  const bool rg = needs(a) || needs(b);
  Var out = push(value(a).cwiseProduct(value(b)), rg, nullptr);
  if (rg)
    node(out).backprop = [a, b, out](Tape& t) {
      const Matrix& g = t.grad(out);
      t.accumulate(a, g.cwiseProduct(t.value(b)));
      t.accumulate(b, g.cwiseProduct(t.value(a)));
    };
  return out;
}

Var Tape::scale(Var a, double s) {
  const bool rg = needs(a);
  Var out = push(value(a) * s, rg, nullptr);
  if (rg)
    node(out).backprop = [a, s, out](Tape& t) { t.accumulate(a, Matrix(t.grad(out) * s)); };
  return out;
}

Var Tape::matmul(Var a, Var b, bool trans_a, bool trans_b) {
  const Matrix& av = value(a);
  const Matrix& bv = value(b);
  Matrix prod;
  if (!trans_a && !trans_b) prod.noalias() = av * bv;
  else if (trans_a && !trans_b) prod.noalias() = av.transpose() * bv;
  else if (!trans_a && trans_b) prod.noalias() = av * bv.transpose();
  else prod.noalias() = av.transpose() * bv.transpose();

  const bool rg = needs(a) || needs(b);
  Var out = push(std::move(prod), rg, nullptr);
  if (rg)
    node(out).backprop = [a, b, trans_a, trans_b, out](Tape& t) {
      const Matrix& g = t.grad(out);
      const Matrix& av2 = t.value(a);
      const Matrix& bv2 = t.value(b);
      Matrix ga, gb;
      if (!trans_a && !trans_b) {
        ga.noalias() = g * bv2.transpose();
        gb.noalias() = av2.transpose() * g;
      } else if (trans_a && !trans_b) {
        ga.noalias() = bv2 * g.transpose();
        gb.noalias() = av2 * g;
      } else if (!trans_a && trans_b) {
        ga.noalias() = g * bv2;
        gb.noalias() = g.transpose() * av2;
      } else {
        ga.noalias() = bv2.transpose() * g.transpose();
        gb.noalias() = g.transpose() * av2.transpose();
      }
      t.accumulate(a, ga);
      t.accumulate(b, gb);
    };
  return out;
}

Var Tape::transpose(Var a) {
  const bool rg = needs(a);
  Var out = push(value(a).transpose(), rg, nullptr);
  if (rg)
    node(out).backprop = [a, out](Tape& t) {
      t.accumulate(a, t.grad(out).transpose());
    };
  return out;
}

Var Tape::leaky_relu(Var a, double slope) {
  const Matrix& av = value(a);
  Matrix y = av.unaryExpr([slope](double x) { return x > 0.0 ? x : slope * x; });
  const bool rg = needs(a);
  Var out = push(std::move(y), rg, nullptr);
  if (rg)
    node(out).backprop = [a, slope, out](Tape& t) {
      const Matrix& g = t.grad(out);
      const Matrix& av2 = t.value(a);
      Matrix ga = g.binaryExpr(av2, [slope](double gg, double x) {
        return x > 0.0 ? gg : slope * gg;
      });
      t.accumulate(a, ga);
    };
  return out;
}

Var Tape::relu(Var a) { return leaky_relu(a, 0.0); }

Var Tape::abs(Var a) {
  const Matrix& av = value(a);
  const bool rg = needs(a);
  Var out = push(av.cwiseAbs(), rg, nullptr);
  if (rg)
    node(out).backprop = [a, out](Tape& t) {
      const Matrix& g = t.grad(out);
      const Matrix& av2 = t.value(a);
      Matrix ga = g.binaryExpr(av2, [](double gg, double x) {
        return x > 0.0 ? gg : (x < 0.0 ? -gg : 0.0);
      });
      t.accumulate(a, ga);
    };
  return out;
}

Var Tape::log(Var a) {
  const bool rg = needs(a);
  Var out = push(value(a).array().log().matrix(), rg, nullptr);
  if (rg)
    node(out).backprop = [a, out](Tape& t) {
      t.accumulate(a, t.grad(out).cwiseQuotient(t.value(a)));
    };
  return out;
}

Var Tape::sqrt(Var a) {
  const bool rg = needs(a);
  Matrix y = value(a).array().sqrt().matrix();
  Var out = push(y, rg, nullptr);
  if (rg)
    node(out).backprop = [a, out](Tape& t) {
      const Matrix& yv = t.value(out);
      Matrix ga = t.grad(out).binaryExpr(yv, [](double gg, double s) {
        return s > 0.0 ? gg / (2.0 * s) : 0.0;
      });
      t.accumulate(a, ga);
    };
  return out;
}

Var Tape::sigmoid(Var a) {
  const bool rg = needs(a);
  Matrix y = value(a).unaryExpr([](double x) { return 1.0 / (1.0 + std::exp(-x)); });
  Var out = push(std::move(y), rg, nullptr);
  if (rg)
    node(out).backprop = [a, out](Tape& t) {
      const Matrix& yv = t.value(out);
      Matrix ga = t.grad(out).cwiseProduct(
          yv.cwiseProduct((Matrix::Ones(yv.rows(), yv.cols()) - yv)));
      t.accumulate(a, ga);
    };
  return out;
}

Var Tape::softmax_rows(Var a) {
  const Matrix& av = value(a);
  Matrix y(av.rows(), av.cols());
  for (Eigen::Index i = 0; i < av.rows(); ++i) {
    const double mx = av.row(i).maxCoeff();
    Eigen::RowVectorXd e = (av.row(i).array() - mx).exp();
    y.row(i) = e / e.sum();
  }
  const bool rg = needs(a);
  Var out = push(std::move(y), rg, nullptr);
  if (rg)
    node(out).backprop = [a, out](Tape& t) {
      const Matrix& g = t.grad(out);
      const Matrix& yv = t.value(out);
      Matrix ga(yv.rows(), yv.cols());
      for (Eigen::Index i = 0; i < yv.rows(); ++i) {
        const double dot = g.row(i).dot(yv.row(i));
        ga.row(i) = yv.row(i).cwiseProduct(g.row(i).array().matrix() -
                                           Eigen::RowVectorXd::Constant(yv.cols(), dot));
      }
      t.accumulate(a, ga);
    };
  return out;
}

Var Tape::logsumexp_rows(Var a) {
  const Matrix& av = value(a);
  Matrix y(av.rows(), 1);
  for (Eigen::Index i = 0; i < av.rows(); ++i) {
    const double mx = av.row(i).maxCoeff();
    y(i, 0) = mx + std::log((av.row(i).array() - mx).exp().sum());
  }
  const bool rg = needs(a);
  Var out = push(std::move(y), rg, nullptr);
  if (rg)
    node(out).backprop = [a, out](Tape& t) {
      const Matrix& g = t.grad(out);  // m x 1
      const Matrix& av2 = t.value(a);
      const Matrix& lse = t.value(out);
      Matrix ga(av2.rows(), av2.cols());
      for (Eigen::Index i = 0; i < av2.rows(); ++i)
        ga.row(i) = g(i, 0) * (av2.row(i).array() - lse(i, 0)).exp().matrix();
      t.accumulate(a, ga);
    };
  return out;
}

Var Tape::sum_all(Var a) {
  const bool rg = needs(a);
  Var out = push(Matrix::Constant(1, 1, value(a).sum()), rg, nullptr);
  if (rg)
    node(out).backprop = [a, out](Tape& t) {
      const Matrix& av2 = t.value(a);
      t.accumulate(a, Matrix::Constant(av2.rows(), av2.cols(), t.grad(out)(0, 0)));
    };
  return out;
}

Var Tape::mean_all(Var a) {
  const double n = static_cast<double>(value(a).size());
  return scale(sum_all(a), 1.0 / n);
}

Var Tape::rowwise_sum(Var a) {
  const bool rg = needs(a);
  Var out = push(value(a).rowwise().sum(), rg, nullptr);
  if (rg)
    node(out).backprop = [a, out](Tape& t) {
      const Matrix& g = t.grad(out);  // m x 1
      const Matrix& av2 = t.value(a);
      t.accumulate(a, Matrix(g * Eigen::RowVectorXd::Ones(av2.cols())));
    };
  return out;
}

Var Tape::colwise_sum(Var a) {
  const bool rg = needs(a);
  Var out = push(value(a).colwise().sum(), rg, nullptr);
  if (rg)
    node(out).backprop = [a, out](Tape& t) {
      const Matrix& g = t.grad(out);  // 1 x n
      const Matrix& av2 = t.value(a);
      t.accumulate(a, Matrix(Eigen::VectorXd::Ones(av2.rows()) * g));
    };
  return out;
}

Var Tape::add_row_broadcast(Var a, Var row) {
  const Matrix& av = value(a);
  const Matrix& rv = value(row);
  Matrix y = av;
  y.rowwise() += rv.row(0);
  const bool rg = needs(a) || needs(row);
  Var out = push(std::move(y), rg, nullptr);
  if (rg)
    node(out).backprop = [a, row, out](Tape& t) {
      const Matrix& g = t.grad(out);
      t.accumulate(a, g);
      t.accumulate(row, Matrix(g.colwise().sum()));
    };
  return out;
}

Var Tape::add_col_broadcast(Var a, Var col) {
  const Matrix& av = value(a);
  const Matrix& cv = value(col);
  Matrix y = av;
  y.colwise() += cv.col(0);
  const bool rg = needs(a) || needs(col);
  Var out = push(std::move(y), rg, nullptr);
  if (rg)
    node(out).backprop = [a, col, out](Tape& t) {
      const Matrix& g = t.grad(out);
      t.accumulate(a, g);
      t.accumulate(col, Matrix(g.rowwise().sum()));
    };
  return out;
}

Var Tape::scale_by(Var a, Var scalar) {
  const double s = value(scalar)(0, 0);
  const bool rg = needs(a) || needs(scalar);
  Var out = push(value(a) * s, rg, nullptr);
  if (rg)
    node(out).backprop = [a, scalar, s, out](Tape& t) {
      const Matrix& g = t.grad(out);
      t.accumulate(a, Matrix(g * s));
      t.accumulate(scalar,
                   Matrix::Constant(1, 1, g.cwiseProduct(t.value(a)).sum()));
    };
  return out;
}

Var Tape::concat_cols(const std::vector<Var>& parts) {
  Eigen::Index rows = value(parts.at(0)).rows();
  Eigen::Index cols = 0;
  bool rg = false;
  for (Var p : parts) {
    cols += value(p).cols();
    rg = rg || needs(p);
  }
  Matrix y(rows, cols);
  Eigen::Index at = 0;
  for (Var p : parts) {
    y.middleCols(at, value(p).cols()) = value(p);
    at += value(p).cols();
  }
  Var out = push(std::move(y), rg, nullptr);
  if (rg) {
    std::vector<Var> parts_copy = parts;
    node(out).backprop = [parts_copy, out](Tape& t) {
      const Matrix& g = t.grad(out);
      Eigen::Index at2 = 0;
      for (Var p : parts_copy) {
        const Eigen::Index c = t.value(p).cols();
        t.accumulate(p, g.middleCols(at2, c));
        at2 += c;
      }
    };
  }
  return out;
}

Var Tape::slice_cols(Var a, Eigen::Index start, Eigen::Index count) {
  const bool rg = needs(a);
  Var out = push(value(a).middleCols(start, count), rg, nullptr);
  if (rg)
    node(out).backprop = [a, start, count, out](Tape& t) {
      const Matrix& av2 = t.value(a);
      Matrix ga = Matrix::Zero(av2.rows(), av2.cols());
      ga.middleCols(start, count) = t.grad(out);
      t.accumulate(a, ga);
    };
  return out;
}

Var Tape::gather_rows(Var a, std::vector<Eigen::Index> rows) {
  const Matrix& av = value(a);
  Matrix y(static_cast<Eigen::Index>(rows.size()), av.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) y.row(static_cast<Eigen::Index>(i)) = av.row(rows[i]);
  const bool rg = needs(a);
  Var out = push(std::move(y), rg, nullptr);
  if (rg)
    node(out).backprop = [a, rows = std::move(rows), out](Tape& t) {
      const Matrix& g = t.grad(out);
      const Matrix& av2 = t.value(a);
      Matrix ga = Matrix::Zero(av2.rows(), av2.cols());
      for (std::size_t i = 0; i < rows.size(); ++i)
        ga.row(rows[i]) += g.row(static_cast<Eigen::Index>(i));
      t.accumulate(a, ga);
    };
  return out;
}

Var Tape::dropout(Var a, const Matrix& keep_mask) {
  Var mask = input(keep_mask, false);
  return cmul(a, mask);
}

Var Tape::layernorm_rows(Var x, Var gain, Var bias, double eps) {
  // copy: push() below may reallocate the node storage value(x) points into
  const Matrix xv = value(x);
  const Eigen::Index d = xv.cols();
  Matrix normed(xv.rows(), d);
  Eigen::VectorXd inv_sigma(xv.rows());
  for (Eigen::Index i = 0; i < xv.rows(); ++i) {
    const double mu = xv.row(i).mean();
    const double var = (xv.row(i).array() - mu).square().sum() / static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_sigma(i) = is;
    normed.row(i) = (xv.row(i).array() - mu).matrix() * is;
  }
  const bool rg = needs(x) || needs(gain) || needs(bias);
  Var nrm = push(normed, rg, nullptr);
  if (rg)
    node(nrm).backprop = [x, nrm, inv_sigma](Tape& t) {
      const Matrix& g = t.grad(nrm);
      const Matrix& y = t.value(nrm);  // normalized values
      const Eigen::Index d2 = y.cols();
      Matrix gx(y.rows(), d2);
      for (Eigen::Index i = 0; i < y.rows(); ++i) {
        const double gmean = g.row(i).mean();
        const double gydot = g.row(i).dot(y.row(i)) / static_cast<double>(d2);
        gx.row(i) =
            inv_sigma(i) *
            (g.row(i).array() - gmean - y.row(i).array() * gydot).matrix();
      }
      t.accumulate(x, gx);
    };
  // affine: y * gain_row + bias_row
  Var scaled = cmul(nrm, tile_row_internal(gain, xv.rows()));
  return add_row_broadcast(scaled, bias);
}

Var Tape::smooth_l1_mean(Var pred, const Matrix& target, double beta) {
  const Matrix& pv = value(pred);
  const Eigen::Index m = pv.rows();
  double total = 0.0;
  for (Eigen::Index i = 0; i < m; ++i) {
    const double r = pv(i, 0) - target(i, 0);
    const double ar = std::fabs(r);
    total += ar < beta ? 0.5 * r * r : beta * ar - 0.5 * beta * beta;
  }
  const bool rg = needs(pred);
  Var out = push(Matrix::Constant(1, 1, total / static_cast<double>(m)), rg, nullptr);
  if (rg)
    node(out).backprop = [pred, target, beta, out](Tape& t) {
      const double g = t.grad(out)(0, 0);
      const Matrix& pv2 = t.value(pred);
      const Eigen::Index m2 = pv2.rows();
      Matrix gp(m2, 1);
      for (Eigen::Index i = 0; i < m2; ++i) {
        const double r = pv2(i, 0) - target(i, 0);
        const double d = std::fabs(r) < beta ? r : (r > 0.0 ? beta : -beta);
        gp(i, 0) = g * d / static_cast<double>(m2);
      }
      t.accumulate(pred, gp);
    };
  return out;
}

// internal: replicate a 1 x d row variable m times (used by layernorm affine)
Var Tape::tile_row_internal(Var row, Eigen::Index m) {
  const Matrix& rv = value(row);
  const bool rg = needs(row);
  Var out = push(Matrix(Eigen::VectorXd::Ones(m) * rv.row(0)), rg, nullptr);
  if (rg)
    node(out).backprop = [row, out](Tape& t) {
      t.accumulate(row, Matrix(t.grad(out).colwise().sum()));
    };
  return out;
}

void Adam::step(const std::vector<std::pair<Param*, const Matrix*>>& params_and_grads) {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (auto& [p, g_ptr] : params_and_grads) {
    const auto g = g_ptr->array() + weight_decay_ * p->value.array();
    p->m.array() = beta1_ * p->m.array() + (1.0 - beta1_) * g;
    p->s.array() = beta2_ * p->s.array() + (1.0 - beta2_) * g.square();
    p->value.array() -=
        lr_ * (p->m.array() / bc1) / ((p->s.array() / bc2).sqrt() + eps_);
  }
}

}  // namespace flexireg::ad
