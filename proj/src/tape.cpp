#include "xal/tape.hpp"

#include <cmath>
#include <utility>

namespace xal::tape {

Tape::Var Tape::push(Mat val, std::function<void(Tape&)> back) {
  Node n;
  n.grad = Mat(val.rows, val.cols);
  n.val = std::move(val);
  n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return static_cast<Var>(nodes_.size() - 1);
}

Tape::Var Tape::leaf(Mat m) { return push(std::move(m), {}); }

Tape::Var Tape::matmul(Var a, Var b) {
  Mat out = xal::matmul(v(a), v(b));
  Var id = push(std::move(out), {});
  nodes_[id].back = [a, b, id](Tape& t) {
    const Mat& dC = t.g(id);
    const Mat dA = xal::matmul_nt(dC, t.v(b));
    const Mat dBt = xal::matmul(xal::transpose(t.v(a)), dC);
    for (size_t i = 0; i < dA.v.size(); ++i) t.g(a).v[i] += dA.v[i];
    for (size_t i = 0; i < dBt.v.size(); ++i) t.g(b).v[i] += dBt.v[i];
  };
  return id;
}

Tape::Var Tape::matmul_nt(Var a, Var b) {
  Mat out = xal::matmul_nt(v(a), v(b));
  Var id = push(std::move(out), {});
  nodes_[id].back = [a, b, id](Tape& t) {
    const Mat& dC = t.g(id);  // rows_a x rows_b
    const Mat dA = xal::matmul(dC, t.v(b));
    const Mat dB = xal::matmul(xal::transpose(dC), t.v(a));
    for (size_t i = 0; i < dA.v.size(); ++i) t.g(a).v[i] += dA.v[i];
    for (size_t i = 0; i < dB.v.size(); ++i) t.g(b).v[i] += dB.v[i];
  };
  return id;
}

Tape::Var Tape::add(Var a, Var b) {
  Mat out = v(a);
  for (size_t i = 0; i < out.v.size(); ++i) out.v[i] += v(b).v[i];
  Var id = push(std::move(out), {});
  nodes_[id].back = [a, b, id](Tape& t) {
    for (size_t i = 0; i < t.g(id).v.size(); ++i) {
      t.g(a).v[i] += t.g(id).v[i];
      t.g(b).v[i] += t.g(id).v[i];
    }
  };
  return id;
}

Tape::Var Tape::add_rowvec(Var a, Var b) {
  Mat out = v(a);
  const Mat& bv = v(b);
  for (int r = 0; r < out.rows; ++r)
    for (int c = 0; c < out.cols; ++c) out.at(r, c) += bv.at(0, c);
  Var id = push(std::move(out), {});
  nodes_[id].back = [a, b, id](Tape& t) {
    const Mat& dC = t.g(id);
    for (size_t i = 0; i < dC.v.size(); ++i) t.g(a).v[i] += dC.v[i];
    for (int r = 0; r < dC.rows; ++r)
      for (int c = 0; c < dC.cols; ++c) t.g(b).at(0, c) += dC.at(r, c);
  };
  return id;
}

Tape::Var Tape::mul_rowvec(Var a, Var b) {
  Mat out = v(a);
  const Mat& bv = v(b);
  for (int r = 0; r < out.rows; ++r)
    for (int c = 0; c < out.cols; ++c) out.at(r, c) *= bv.at(0, c);
  Var id = push(std::move(out), {});
  nodes_[id].back = [a, b, id](Tape& t) {
    const Mat& dC = t.g(id);
    const Mat& av = t.v(a);
    const Mat& bv2 = t.v(b);
    for (int r = 0; r < dC.rows; ++r)
      for (int c = 0; c < dC.cols; ++c) {
        t.g(a).at(r, c) += dC.at(r, c) * bv2.at(0, c);
        t.g(b).at(0, c) += dC.at(r, c) * av.at(r, c);
      }
  };
  return id;
}

Tape::Var Tape::mul(Var a, Var b) {
  Mat out = v(a);
  for (size_t i = 0; i < out.v.size(); ++i) out.v[i] *= v(b).v[i];
  Var id = push(std::move(out), {});
  nodes_[id].back = [a, b, id](Tape& t) {
    for (size_t i = 0; i < t.g(id).v.size(); ++i) {
      t.g(a).v[i] += t.g(id).v[i] * t.v(b).v[i];
      t.g(b).v[i] += t.g(id).v[i] * t.v(a).v[i];
    }
  };
  return id;
}

Tape::Var Tape::scale(Var a, double s) {
  Mat out = v(a);
  for (double& x : out.v) x *= s;
  Var id = push(std::move(out), {});
  nodes_[id].back = [a, s, id](Tape& t) {
    for (size_t i = 0; i < t.g(id).v.size(); ++i) t.g(a).v[i] += s * t.g(id).v[i];
  };
  return id;
}

Tape::Var Tape::add_const(Var a, Mat c) {
  Mat out = v(a);
  for (size_t i = 0; i < out.v.size(); ++i) out.v[i] += c.v[i];
  Var id = push(std::move(out), {});
  nodes_[id].back = [a, id](Tape& t) {
    for (size_t i = 0; i < t.g(id).v.size(); ++i) t.g(a).v[i] += t.g(id).v[i];
  };
  return id;
}

Tape::Var Tape::tanh_act(Var a) {
  Mat out = v(a);
  for (double& x : out.v) x = std::tanh(x);
  Var id = push(std::move(out), {});
  nodes_[id].back = [a, id](Tape& t) {
    const Mat& y = t.v(id);
    for (size_t i = 0; i < y.v.size(); ++i) t.g(a).v[i] += t.g(id).v[i] * (1.0 - y.v[i] * y.v[i]);
  };
  return id;
}

Tape::Var Tape::softmax_rows(Var a) {
  Mat out = v(a);
  for (int r = 0; r < out.rows; ++r) softmax_row_inplace(out.row(r));
  Var id = push(std::move(out), {});
  nodes_[id].back = [a, id](Tape& t) {
    const Mat& y = t.v(id);
    const Mat& dy = t.g(id);
    for (int r = 0; r < y.rows; ++r) {
      double ydy = 0.0;
      for (int c = 0; c < y.cols; ++c) ydy += y.at(r, c) * dy.at(r, c);
      for (int c = 0; c < y.cols; ++c) t.g(a).at(r, c) += y.at(r, c) * (dy.at(r, c) - ydy);
    }
  };
  return id;
}

Tape::Var Tape::log_softmax_rows(Var a) {
  Mat out(v(a).rows, v(a).cols);
  for (int r = 0; r < out.rows; ++r) {
    auto ls = log_softmax(v(a).row(r));
    for (int c = 0; c < out.cols; ++c) out.at(r, c) = ls[c];
  }
  Var id = push(std::move(out), {});
  nodes_[id].back = [a, id](Tape& t) {
    const Mat& y = t.v(id);  // log softmax values
    const Mat& dy = t.g(id);
    for (int r = 0; r < y.rows; ++r) {
      double dsum = 0.0;
      for (int c = 0; c < y.cols; ++c) dsum += dy.at(r, c);
      for (int c = 0; c < y.cols; ++c) {
        t.g(a).at(r, c) += dy.at(r, c) - std::exp(y.at(r, c)) * dsum;
      }
    }
  };
  return id;
}

Tape::Var Tape::gather_rows(Var table, std::vector<int> ids) {
  const Mat& tab = v(table);
  Mat out(static_cast<int>(ids.size()), tab.cols);
  for (size_t i = 0; i < ids.size(); ++i)
    for (int c = 0; c < tab.cols; ++c) out.at(static_cast<int>(i), c) = tab.at(ids[i], c);
  Var id = push(std::move(out), {});
  nodes_[id].back = [table, ids = std::move(ids), id](Tape& t) {
    const Mat& dC = t.g(id);
    for (size_t i = 0; i < ids.size(); ++i)
      for (int c = 0; c < dC.cols; ++c) t.g(table).at(ids[i], c) += dC.at(static_cast<int>(i), c);
  };
  return id;
}

Tape::Var Tape::pick_row(Var a, int r) {
  Mat out(1, v(a).cols);
  for (int c = 0; c < out.cols; ++c) out.at(0, c) = v(a).at(r, c);
  Var id = push(std::move(out), {});
  nodes_[id].back = [a, r, id](Tape& t) {
    for (int c = 0; c < t.g(id).cols; ++c) t.g(a).at(r, c) += t.g(id).at(0, c);
  };
  return id;
}

Tape::Var Tape::pick(Var a, int r, int c) {
  Mat out(1, 1);
  out.at(0, 0) = v(a).at(r, c);
  Var id = push(std::move(out), {});
  nodes_[id].back = [a, r, c, id](Tape& t) { t.g(a).at(r, c) += t.g(id).at(0, 0); };
  return id;
}

Tape::Var Tape::sum_all(Var a) {
  Mat out(1, 1);
  for (double x : v(a).v) out.at(0, 0) += x;
  Var id = push(std::move(out), {});
  nodes_[id].back = [a, id](Tape& t) {
    const double d = t.g(id).at(0, 0);
    for (double& x : t.g(a).v) x += d;
  };
  return id;
}

Tape::Var Tape::hinge(Var a) {
  Mat out = v(a);
  for (double& x : out.v) x = x > 0.0 ? x : 0.0;
  Var id = push(std::move(out), {});
  nodes_[id].back = [a, id](Tape& t) {
    const Mat& av = t.v(a);
    for (size_t i = 0; i < av.v.size(); ++i)
      if (av.v[i] > 0.0) t.g(a).v[i] += t.g(id).v[i];
  };
  return id;
}

Tape::Var Tape::layer_norm_rows(Var a, double eps) {
  Mat inv_std;
  Mat out = layer_norm_rows_fwd(v(a), eps, &inv_std);
  Var id = push(std::move(out), {});
  nodes_[id].back = [a, id, inv_std = std::move(inv_std)](Tape& t) {
    const Mat& y = t.v(id);
    const Mat& dy = t.g(id);
    const int n = y.cols;
    for (int r = 0; r < y.rows; ++r) {
      double mean_dy = 0.0, mean_dyy = 0.0;
      for (int c = 0; c < n; ++c) {
        mean_dy += dy.at(r, c);
        mean_dyy += dy.at(r, c) * y.at(r, c);
      }
      mean_dy /= n;
      mean_dyy /= n;
      const double s = inv_std.at(r, 0);
      for (int c = 0; c < n; ++c) {
        t.g(a).at(r, c) += s * (dy.at(r, c) - mean_dy - y.at(r, c) * mean_dyy);
      }
    }
  };
  return id;
}

void Tape::backward(Var loss) {
  nodes_[loss].grad.at(0, 0) = 1.0;
  for (int i = loss; i >= 0; --i) {
    if (nodes_[i].back) nodes_[i].back(*this);
  }
}

}  // namespace xal::tape
