#include <Eigen/Core>

#include "sscf/ops.hpp"

namespace sscf {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMatrix>;
using Map = Eigen::Map<RowMatrix>;

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::require(a.rank() == 2 && b.rank() == 2 && a.dim(1) == b.dim(0),
                  "matmul: cannot multiply " + shape_string(a.shape()) + " by " + shape_string(b.shape()));
  const auto m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(m * n);
  Map(out.data(), m, n).noalias() = ConstMap(a.data().data(), m, k) * ConstMap(b.data().data(), k, n);
  return detail::finish("matmul", {m, n}, std::move(out), {a, b}, [a, b, m, k, n](const Tensor& o) mutable {
    ConstMap g(o.grad().data(), m, n);
    if (a.requires_grad()) {
      Map(a.mutable_grad().data(), m, k).noalias() += g * ConstMap(b.data().data(), k, n).transpose();
    }
    if (b.requires_grad()) {
      Map(b.mutable_grad().data(), k, n).noalias() += ConstMap(a.data().data(), m, k).transpose() * g;
    }
  });
}

Tensor bmm(const Tensor& a, const Tensor& b) {
  detail::require(a.rank() == 3 && b.rank() == 3 && a.dim(0) == b.dim(0) && a.dim(2) == b.dim(1),
                  "bmm: cannot multiply " + shape_string(a.shape()) + " by " + shape_string(b.shape()));
  const auto batch = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
  std::vector<double> out(batch * m * n);
  for (std::size_t i = 0; i < batch; ++i) {
    Map(out.data() + i * m * n, m, n).noalias() =
        ConstMap(a.data().data() + i * m * k, m, k) * ConstMap(b.data().data() + i * k * n, k, n);
  }
  return detail::finish("bmm", {batch, m, n}, std::move(out), {a, b},
                        [a, b, batch, m, k, n](const Tensor& o) mutable {
                          const double* g = o.grad().data();
                          for (std::size_t i = 0; i < batch; ++i) {
                            ConstMap gi(g + i * m * n, m, n);
                            if (a.requires_grad()) {
                              Map(a.mutable_grad().data() + i * m * k, m, k).noalias() +=
                                  gi * ConstMap(b.data().data() + i * k * n, k, n).transpose();
                            }
                            if (b.requires_grad()) {
                              Map(b.mutable_grad().data() + i * k * n, k, n).noalias() +=
                                  ConstMap(a.data().data() + i * m * k, m, k).transpose() * gi;
                            }
                          }
                        });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  detail::require(x.rank() == 2 && weight.rank() == 2 && weight.dim(1) == x.dim(1),
                  "linear: input " + shape_string(x.shape()) + " incompatible with weight " +
                      shape_string(weight.shape()));
  const auto batch = x.dim(0), in = x.dim(1), out_features = weight.dim(0);
  if (bias.defined()) {
    detail::require(bias.shape() == Shape{out_features}, "linear: bias shape " + shape_string(bias.shape()));
  }
  std::vector<double> out(batch * out_features);
  Map y(out.data(), batch, out_features);
  y.noalias() = ConstMap(x.data().data(), batch, in) * ConstMap(weight.data().data(), out_features, in).transpose();
  if (bias.defined()) {
    auto b = bias.data();
    for (std::size_t r = 0; r < batch; ++r) {
      for (std::size_t c = 0; c < out_features; ++c) y(r, c) += b[c];
    }
  }
  std::vector<Tensor> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  return detail::finish("linear", {batch, out_features}, std::move(out), inputs,
                        [x, weight, bias, batch, in, out_features](const Tensor& o) mutable {
                          ConstMap g(o.grad().data(), batch, out_features);
                          if (x.requires_grad()) {
                            Map(x.mutable_grad().data(), batch, in).noalias() +=
                                g * ConstMap(weight.data().data(), out_features, in);
                          }
                          if (weight.requires_grad()) {
                            Map(weight.mutable_grad().data(), out_features, in).noalias() +=
                                g.transpose() * ConstMap(x.data().data(), batch, in);
                          }
                          if (bias.defined() && bias.requires_grad()) {
                            auto gb = bias.mutable_grad();
                            for (std::size_t r = 0; r < batch; ++r) {
                              for (std::size_t c = 0; c < out_features; ++c) gb[c] += g(r, c);
                            }
                          }
                        });
}

}  // namespace sscf
