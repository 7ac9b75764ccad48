#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "gsstream/errors.hpp"
#include "gsstream/nn.hpp"

namespace gsstream::nn {

using Matrix = Eigen::MatrixXd;

struct Var {
  int id = -1;
};

/// Reverse-mode tape over dense matrices (rows = items, columns = features).
/// Nodes are recorded in evaluation order; backward() replays them in reverse.
/// MLP parameters enter as leaves bound to a ParamVector and scatter their
/// gradients into a caller-owned accumulator of the same layout.
class Graph {
 public:
  const Matrix& value(Var v) const { return nodes_.at(static_cast<std::size_t>(v.id)).value; }
  double scalar(Var v) const { return value(v)(0, 0); }
  std::size_t size() const { return nodes_.size(); }

  Var constant(Matrix m) { return push(std::move(m), nullptr); }

  Var weight(const ParamVector& p, ParamVector* grad, std::size_t layer) {
    const auto& s = p.layout.layers.at(layer);
    Matrix w(s.out, s.in);
    for (int o = 0; o < s.out; ++o)
      for (int i = 0; i < s.in; ++i) w(o, i) = p.values[s.weight_offset + static_cast<std::size_t>(o) * s.in + i];
    if (!grad) return constant(std::move(w));
    const std::size_t off = s.weight_offset;
    const int in = s.in;
    return push(std::move(w), [grad, off, in](Graph& g, int self) {
      const Matrix& gw = g.nodes_[self].grad;
      for (int o = 0; o < gw.rows(); ++o)
        for (int i = 0; i < in; ++i) grad->values[off + static_cast<std::size_t>(o) * in + i] += gw(o, i);
    });
  }

  Var bias(const ParamVector& p, ParamVector* grad, std::size_t layer) {
    const auto& s = p.layout.layers.at(layer);
    Matrix b(1, s.out);
    for (int o = 0; o < s.out; ++o) b(0, o) = p.values[s.bias_offset + o];
    if (!grad) return constant(std::move(b));
    const std::size_t off = s.bias_offset;
    return push(std::move(b), [grad, off](Graph& g, int self) {
      const Matrix& gb = g.nodes_[self].grad;
      for (int o = 0; o < gb.cols(); ++o) grad->values[off + o] += gb(0, o);
    });
  }

  /// x (n x in) * w^T + b, with w (out x in), b (1 x out).
  Var linear(Var x, Var w, Var b) {
    Matrix y = value(x) * value(w).transpose();
    y.rowwise() += value(b).row(0);
    return push(std::move(y), [x, w, b](Graph& g, int self) {
      const Matrix& gy = g.nodes_[self].grad;
      g.grad(x) += gy * g.value(w);
      g.grad(w) += gy.transpose() * g.value(x);
      g.grad(b) += gy.colwise().sum();
    });
  }

  /// Applies an MLP row-wise to x (n x spec.input_width()).
  Var mlp(const MlpSpec& spec, const ParamVector& params, ParamVector* grad, Var x) {
    require(value(x).cols() == spec.input_width(), "graph mlp: input width mismatch");
    Var h = x;
    for (std::size_t l = 0; l < spec.layers(); ++l) {
      h = linear(h, weight(params, grad, l), bias(params, grad, l));
      if (spec.activations[l] == Activation::ReLU) h = relu(h);
    }
    return h;
  }

  Var relu(Var x) {
    Matrix y = value(x).cwiseMax(0.0);
    return push(std::move(y), [x](Graph& g, int self) {
      g.grad(x) += (g.value(x).array() > 0.0).cast<double>().matrix().cwiseProduct(g.nodes_[self].grad);
    });
  }

  Var sigmoid(Var x) {
    Matrix y = value(x).unaryExpr([](double v) { return nn::sigmoid(v); });
    return push(std::move(y), [x](Graph& g, int self) {
      const Matrix& s = g.nodes_[self].value;
      g.grad(x) += (s.array() * (1.0 - s.array()) * g.nodes_[self].grad.array()).matrix();
    });
  }

  Var exp(Var x) {
    Matrix y = value(x).array().exp().matrix();
    return push(std::move(y), [x](Graph& g, int self) {
      g.grad(x) += g.nodes_[self].value.cwiseProduct(g.nodes_[self].grad);
    });
  }

  Var add(Var a, Var b) {
    require(value(a).rows() == value(b).rows() && value(a).cols() == value(b).cols(), "graph add: shape mismatch");
    return push(value(a) + value(b), [a, b](Graph& g, int self) {
      g.grad(a) += g.nodes_[self].grad;
      g.grad(b) += g.nodes_[self].grad;
    });
  }

  Var sub(Var a, Var b) {
    require(value(a).rows() == value(b).rows() && value(a).cols() == value(b).cols(), "graph sub: shape mismatch");
    return push(value(a) - value(b), [a, b](Graph& g, int self) {
      g.grad(a) += g.nodes_[self].grad;
      g.grad(b) -= g.nodes_[self].grad;
    });
  }

  /// Elementwise product of equally shaped matrices.
  Var mul(Var a, Var b) {
    require(value(a).rows() == value(b).rows() && value(a).cols() == value(b).cols(), "graph mul: shape mismatch");
    return push(value(a).cwiseProduct(value(b)), [a, b](Graph& g, int self) {
      const Matrix& gy = g.nodes_[self].grad;
      g.grad(a) += gy.cwiseProduct(g.value(b));
      g.grad(b) += gy.cwiseProduct(g.value(a));
    });
  }

  Var mul_const(Var a, const Matrix& c) {
    require(value(a).rows() == c.rows() && value(a).cols() == c.cols(), "graph mul_const: shape mismatch");
    return push(value(a).cwiseProduct(c), [a, c](Graph& g, int self) { g.grad(a) += g.nodes_[self].grad.cwiseProduct(c); });
  }

  Var affine(Var a, double scale, double shift) {
    Matrix y = (value(a).array() * scale + shift).matrix();
    return push(std::move(y), [a, scale](Graph& g, int self) { g.grad(a) += scale * g.nodes_[self].grad; });
  }

  /// x (n x w) scaled row-wise by c (n x 1).
  Var scale_rows(Var x, Var c) {
    require(value(c).cols() == 1 && value(c).rows() == value(x).rows(), "graph scale_rows: shape mismatch");
    Matrix y = value(x).array().colwise() * value(c).col(0).array();
    return push(std::move(y), [x, c](Graph& g, int self) {
      const Matrix& gy = g.nodes_[self].grad;
      g.grad(x) += (gy.array().colwise() * g.value(c).col(0).array()).matrix();
      g.grad(c) += gy.cwiseProduct(g.value(x)).rowwise().sum();
    });
  }

  Var concat_cols(const std::vector<Var>& parts) {
    require(!parts.empty(), "graph concat: no inputs");
    const auto rows = value(parts[0]).rows();
    Eigen::Index cols = 0;
    for (auto p : parts) {
      require(value(p).rows() == rows, "graph concat: row mismatch");
      cols += value(p).cols();
    }
    Matrix y(rows, cols);
    Eigen::Index c = 0;
    for (auto p : parts) {
      y.middleCols(c, value(p).cols()) = value(p);
      c += value(p).cols();
    }
    return push(std::move(y), [parts](Graph& g, int self) {
      Eigen::Index c0 = 0;
      for (auto p : parts) {
        const auto w = g.value(p).cols();
        g.grad(p) += g.nodes_[self].grad.middleCols(c0, w);
        c0 += w;
      }
    });
  }

  Var cols(Var x, Eigen::Index start, Eigen::Index count) {
    Matrix y = value(x).middleCols(start, count);
    return push(std::move(y), [x, start, count](Graph& g, int self) {
      g.grad(x).middleCols(start, count) += g.nodes_[self].grad;
    });
  }

  /// Row gather: y.row(i) = x.row(index[i]).
  Var gather_rows(Var x, std::vector<int> index) {
    const Matrix& xv = value(x);
    Matrix y(static_cast<Eigen::Index>(index.size()), xv.cols());
    for (std::size_t i = 0; i < index.size(); ++i) y.row(static_cast<Eigen::Index>(i)) = xv.row(index[i]);
    return push(std::move(y), [x, index = std::move(index)](Graph& g, int self) {
      Matrix& gx = g.grad(x);
      const Matrix& gy = g.nodes_[self].grad;
      for (std::size_t i = 0; i < index.size(); ++i) gx.row(index[i]) += gy.row(static_cast<Eigen::Index>(i));
    });
  }

  /// Softmax within consecutive groups of `group` rows of a column vector.
  Var group_softmax(Var s, int group) {
    const Matrix& sv = value(s);
    require(sv.cols() == 1 && sv.rows() % group == 0, "graph group_softmax: shape mismatch");
    Matrix y(sv.rows(), 1);
    for (Eigen::Index g0 = 0; g0 < sv.rows(); g0 += group) {
      const double mx = sv.col(0).segment(g0, group).maxCoeff();
      double total = 0.0;
      for (int k = 0; k < group; ++k) total += (y(g0 + k, 0) = std::exp(sv(g0 + k, 0) - mx));
      for (int k = 0; k < group; ++k) y(g0 + k, 0) /= total;
    }
    return push(std::move(y), [s, group](Graph& g, int self) {
      const Matrix& p = g.nodes_[self].value;
      const Matrix& gy = g.nodes_[self].grad;
      Matrix& gs = g.grad(s);
      for (Eigen::Index g0 = 0; g0 < p.rows(); g0 += group) {
        double dotv = 0.0;
        for (int k = 0; k < group; ++k) dotv += p(g0 + k, 0) * gy(g0 + k, 0);
        for (int k = 0; k < group; ++k) gs(g0 + k, 0) += p(g0 + k, 0) * (gy(g0 + k, 0) - dotv);
      }
    });
  }

  /// y.row(i) = sum_k a(i*group+k) * e.row(i*group+k).
  Var group_weighted_sum(Var e, Var a, int group) {
    const Matrix& ev = value(e);
    const Matrix& av = value(a);
    require(av.cols() == 1 && av.rows() == ev.rows() && ev.rows() % group == 0,
            "graph group_weighted_sum: shape mismatch");
    const Eigen::Index n = ev.rows() / group;
    Matrix y = Matrix::Zero(n, ev.cols());
    for (Eigen::Index i = 0; i < n; ++i)
      for (int k = 0; k < group; ++k) y.row(i) += av(i * group + k, 0) * ev.row(i * group + k);
    return push(std::move(y), [e, a, group](Graph& g, int self) {
      const Matrix& gy = g.nodes_[self].grad;
      const Matrix& ev2 = g.value(e);
      const Matrix& av2 = g.value(a);
      Matrix& ge = g.grad(e);
      Matrix& ga = g.grad(a);
      for (Eigen::Index i = 0; i < gy.rows(); ++i)
        for (int k = 0; k < group; ++k) {
          const Eigen::Index r = i * group + k;
          ge.row(r) += av2(r, 0) * gy.row(i);
          ga(r, 0) += ev2.row(r).dot(gy.row(i));
        }
    });
  }

  /// Mean of rows per segment; segment[i] in [0, count).
  Var segment_mean(Var x, std::vector<int> segment, int count) {
    const Matrix& xv = value(x);
    require(static_cast<Eigen::Index>(segment.size()) == xv.rows(), "graph segment_mean: size mismatch");
    std::vector<double> n(static_cast<std::size_t>(count), 0.0);
    Matrix y = Matrix::Zero(count, xv.cols());
    for (std::size_t i = 0; i < segment.size(); ++i) {
      y.row(segment[i]) += xv.row(static_cast<Eigen::Index>(i));
      n[static_cast<std::size_t>(segment[i])] += 1.0;
    }
    for (int s = 0; s < count; ++s) {
      require(n[static_cast<std::size_t>(s)] > 0.0, "graph segment_mean: empty segment");
      y.row(s) /= n[static_cast<std::size_t>(s)];
    }
    return push(std::move(y), [x, segment = std::move(segment), n = std::move(n)](Graph& g, int self) {
      Matrix& gx = g.grad(x);
      const Matrix& gy = g.nodes_[self].grad;
      for (std::size_t i = 0; i < segment.size(); ++i)
        gx.row(static_cast<Eigen::Index>(i)) += gy.row(segment[i]) / n[static_cast<std::size_t>(segment[i])];
    });
  }

  /// Column-wise max of rows per segment (gradient routed to the first argmax).
  Var segment_max(Var x, std::vector<int> segment, int count) {
    const Matrix& xv = value(x);
    require(static_cast<Eigen::Index>(segment.size()) == xv.rows(), "graph segment_max: size mismatch");
    Matrix y = Matrix::Constant(count, xv.cols(), -std::numeric_limits<double>::infinity());
    std::vector<int> arg(static_cast<std::size_t>(count * xv.cols()), -1);
    for (std::size_t i = 0; i < segment.size(); ++i)
      for (Eigen::Index c = 0; c < xv.cols(); ++c)
        if (xv(static_cast<Eigen::Index>(i), c) > y(segment[i], c)) {
          y(segment[i], c) = xv(static_cast<Eigen::Index>(i), c);
          arg[static_cast<std::size_t>(segment[i] * xv.cols() + c)] = static_cast<int>(i);
        }
    for (int a : arg) require(a >= 0, "graph segment_max: empty segment");
    const Eigen::Index width = xv.cols();
    return push(std::move(y), [x, arg = std::move(arg), width](Graph& g, int self) {
      Matrix& gx = g.grad(x);
      const Matrix& gy = g.nodes_[self].grad;
      for (std::size_t k = 0; k < arg.size(); ++k) {
        const auto s = static_cast<Eigen::Index>(k) / width;
        const auto c = static_cast<Eigen::Index>(k) % width;
        gx(arg[k], c) += gy(s, c);
      }
    });
  }

  Var row_softmax(Var x) {
    const Matrix& xv = value(x);
    Matrix y(xv.rows(), xv.cols());
    for (Eigen::Index r = 0; r < xv.rows(); ++r) {
      const double mx = xv.row(r).maxCoeff();
      y.row(r) = (xv.row(r).array() - mx).exp().matrix();
      y.row(r) /= y.row(r).sum();
    }
    return push(std::move(y), [x](Graph& g, int self) {
      const Matrix& p = g.nodes_[self].value;
      const Matrix& gy = g.nodes_[self].grad;
      Matrix& gx = g.grad(x);
      for (Eigen::Index r = 0; r < p.rows(); ++r) {
        const double d = p.row(r).dot(gy.row(r));
        gx.row(r) += (p.row(r).array() * (gy.row(r).array() - d)).matrix();
      }
    });
  }

  Var row_log_softmax(Var x) {
    const Matrix& xv = value(x);
    Matrix y(xv.rows(), xv.cols());
    for (Eigen::Index r = 0; r < xv.rows(); ++r) {
      const double mx = xv.row(r).maxCoeff();
      const double lse = mx + std::log((xv.row(r).array() - mx).exp().sum());
      y.row(r) = (xv.row(r).array() - lse).matrix();
    }
    return push(std::move(y), [x](Graph& g, int self) {
      const Matrix& ly = g.nodes_[self].value;
      const Matrix& gy = g.nodes_[self].grad;
      Matrix& gx = g.grad(x);
      for (Eigen::Index r = 0; r < ly.rows(); ++r) {
        const double total = gy.row(r).sum();
        gx.row(r) += gy.row(r) - (ly.row(r).array().exp() * total).matrix();
      }
    });
  }

  /// Picks entries (row, col) into a k x 1 column.
  Var pick(Var x, std::vector<std::pair<int, int>> at) {
    Matrix y(static_cast<Eigen::Index>(at.size()), 1);
    for (std::size_t i = 0; i < at.size(); ++i) y(static_cast<Eigen::Index>(i), 0) = value(x)(at[i].first, at[i].second);
    return push(std::move(y), [x, at = std::move(at)](Graph& g, int self) {
      Matrix& gx = g.grad(x);
      for (std::size_t i = 0; i < at.size(); ++i) gx(at[i].first, at[i].second) += g.nodes_[self].grad(static_cast<Eigen::Index>(i), 0);
    });
  }

  Var sum(Var x) {
    Matrix y(1, 1);
    y(0, 0) = value(x).sum();
    return push(std::move(y), [x](Graph& g, int self) { g.grad(x).array() += g.nodes_[self].grad(0, 0); });
  }

  Var mean(Var x) {
    const double n = static_cast<double>(value(x).size());
    return affine(sum(x), 1.0 / n, 0.0);
  }

  /// Mean smooth-L1 between a column of predictions and fixed targets.
  Var smooth_l1_mean(Var pred, const Matrix& target) {
    const Matrix& pv = value(pred);
    require(pv.rows() == target.rows() && pv.cols() == target.cols(), "graph smooth_l1: shape mismatch");
    const double n = static_cast<double>(pv.size());
    Matrix y(1, 1);
    y(0, 0) = 0.0;
    for (Eigen::Index i = 0; i < pv.size(); ++i) y(0, 0) += nn::smooth_l1(pv(i) - target(i));
    y(0, 0) /= n;
    return push(std::move(y), [pred, target, n](Graph& g, int self) {
      const Matrix& pv2 = g.value(pred);
      Matrix& gp = g.grad(pred);
      const double up = g.nodes_[self].grad(0, 0);
      for (Eigen::Index i = 0; i < pv2.size(); ++i) gp(i) += up * nn::smooth_l1_grad(pv2(i) - target(i)) / n;
    });
  }

  void backward(Var loss) {
    require(value(loss).size() == 1, "graph backward: loss must be a scalar");
    grad(loss)(0, 0) += 1.0;
    for (int i = loss.id; i >= 0; --i) {
      auto& node = nodes_[static_cast<std::size_t>(i)];
      if (node.back && node.grad.size() != 0) node.back(*this, i);
    }
  }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    std::function<void(Graph&, int)> back;
  };

  Var push(Matrix value, std::function<void(Graph&, int)> back) {
    nodes_.push_back({std::move(value), Matrix(), std::move(back)});
    return {static_cast<int>(nodes_.size()) - 1};
  }

  Matrix& grad(Var v) { return grad(v.id); }
  Matrix& grad(int id) {
    auto& node = nodes_[static_cast<std::size_t>(id)];
    if (node.grad.size() == 0) node.grad = Matrix::Zero(node.value.rows(), node.value.cols());
    return node.grad;
  }

  std::vector<Node> nodes_;
};

}  // namespace gsstream::nn
