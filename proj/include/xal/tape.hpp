#pragma once

#include <functional>
#include <vector>

#include "xal/linalg.hpp"

namespace xal::tape {

// Reverse-mode autodiff over Mat values. One Tape per loss evaluation; nodes
// are created in forward order and visited in reverse on backward(). Sized
// for the reference model (a few thousand parameters), not for throughput.
class Tape {
 public:
  using Var = int;

  Var leaf(Mat m);

  Var matmul(Var a, Var b);
  Var matmul_nt(Var a, Var b);  // a * b^T
  Var add(Var a, Var b);
  Var add_rowvec(Var a, Var b);  // b: 1 x C, broadcast over rows of a
  Var mul_rowvec(Var a, Var b);  // elementwise scale of every row of a by b
  Var mul(Var a, Var b);
  Var scale(Var a, double s);
  Var add_const(Var a, Mat c);  // c not differentiated (masks, positions)
  Var tanh_act(Var a);
  Var softmax_rows(Var a);
  Var log_softmax_rows(Var a);
  Var gather_rows(Var table, std::vector<int> ids);
  Var pick_row(Var a, int r);
  Var pick(Var a, int r, int c);  // 1x1
  Var sum_all(Var a);             // 1x1
  Var hinge(Var a);               // elementwise max(0, x)
  Var layer_norm_rows(Var a, double eps);

  void backward(Var loss);  // loss must be 1x1; seeds gradient 1

  const Mat& val(Var v) const { return nodes_[v].val; }
  const Mat& grad(Var v) const { return nodes_[v].grad; }
  double scalar(Var v) const { return nodes_[v].val.at(0, 0); }

 private:
  struct Node {
    Mat val;
    Mat grad;
    std::function<void(Tape&)> back;  // may be empty (leaves, constants)
  };

  Var push(Mat val, std::function<void(Tape&)> back);

  Mat& g(Var v) { return nodes_[v].grad; }
  const Mat& v(Var vr) const { return nodes_[vr].val; }

  std::vector<Node> nodes_;
};

}  // namespace xal::tape
