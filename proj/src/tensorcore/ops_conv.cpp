#include <Eigen/Core>
#include <algorithm>
#include <cstdint>

#include "sscf/ops.hpp"

namespace sscf {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMatrix>;
using Map = Eigen::Map<RowMatrix>;

// Upper bound on the im2col buffer, in doubles.
constexpr std::size_t kMaxColumnElements = std::size_t{1} << 16;

// Maps (kernel offset, output position) to the flat input position it reads,
// or -1 where the tap falls into the zero padding.
struct ConvGeometry {
  Shape in_spatial;
  Shape kernel;
  Shape out_spatial;
  std::size_t in_size = 1;
  std::size_t kernel_size = 1;
  std::size_t out_size = 1;
  std::vector<std::int64_t> table;

  ConvGeometry(const char* op, Shape in, Shape k, std::size_t stride, std::size_t padding)
      : in_spatial(std::move(in)), kernel(std::move(k)) {
    const auto rank = in_spatial.size();
    for (std::size_t a = 0; a < rank; ++a) {
      if (in_spatial[a] + 2 * padding < kernel[a]) {
        throw ShapeError(std::string(op) + ": kernel " + shape_string(kernel) + " does not fit input " +
                         shape_string(in_spatial) + " with padding " + std::to_string(padding));
      }
      out_spatial.push_back((in_spatial[a] + 2 * padding - kernel[a]) / stride + 1);
    }
    in_size = shape_numel(in_spatial);
    kernel_size = shape_numel(kernel);
    out_size = shape_numel(out_spatial);
    table.assign(kernel_size * out_size, -1);
    std::vector<std::size_t> kc(rank, 0);
    for (std::size_t kk = 0; kk < kernel_size; ++kk) {
      std::vector<std::size_t> oc(rank, 0);
      for (std::size_t pos = 0; pos < out_size; ++pos) {
        std::int64_t flat = 0;
        bool inside = true;
        for (std::size_t a = 0; a < rank; ++a) {
          const auto coord = static_cast<std::int64_t>(oc[a] * stride + kc[a]) - static_cast<std::int64_t>(padding);
          if (coord < 0 || coord >= static_cast<std::int64_t>(in_spatial[a])) {
            inside = false;
            break;
          }
          flat = flat * static_cast<std::int64_t>(in_spatial[a]) + coord;
        }
        if (inside) table[kk * out_size + pos] = flat;
        for (std::size_t a = rank; a-- > 0;) {
          if (++oc[a] < out_spatial[a]) break;
          oc[a] = 0;
        }
      }
      for (std::size_t a = rank; a-- > 0;) {
        if (++kc[a] < kernel[a]) break;
        kc[a] = 0;
      }
    }
  }
};

// col[(c*K + kk), j*O + pos] = x[b0+j, c, table[kk,pos]]
void im2col(const ConvGeometry& g, const double* x, std::size_t channels, std::size_t b0, std::size_t nb,
            double* col) {
  const auto cols = nb * g.out_size;
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t kk = 0; kk < g.kernel_size; ++kk) {
      double* row = col + (c * g.kernel_size + kk) * cols;
      const std::int64_t* t = g.table.data() + kk * g.out_size;
      for (std::size_t j = 0; j < nb; ++j) {
        const double* src = x + ((b0 + j) * channels + c) * g.in_size;
        double* dst = row + j * g.out_size;
        for (std::size_t pos = 0; pos < g.out_size; ++pos) dst[pos] = t[pos] >= 0 ? src[t[pos]] : 0.0;
      }
    }
  }
}

void col2im(const ConvGeometry& g, const double* col, std::size_t channels, std::size_t b0, std::size_t nb,
            double* dx) {
  const auto cols = nb * g.out_size;
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t kk = 0; kk < g.kernel_size; ++kk) {
      const double* row = col + (c * g.kernel_size + kk) * cols;
      const std::int64_t* t = g.table.data() + kk * g.out_size;
      for (std::size_t j = 0; j < nb; ++j) {
        double* dst = dx + ((b0 + j) * channels + c) * g.in_size;
        const double* src = row + j * g.out_size;
        for (std::size_t pos = 0; pos < g.out_size; ++pos) {
          if (t[pos] >= 0) dst[t[pos]] += src[pos];
        }
      }
    }
  }
}

std::size_t chunk_size(std::size_t batch, std::size_t rows, std::size_t out_size) {
  const auto per_sample = std::max<std::size_t>(1, rows * out_size);
  return std::clamp<std::size_t>(kMaxColumnElements / per_sample, 1, batch);
}

// Stride-1 convolution as one GEMM followed by shifted sums:
//   Z[s, k, co] = sum_c x[c, s] w[co, c, k];  out[co, pos] = sum_k Z[table(k, pos), k, co]
// Cheaper than im2col when channels shrink (C > Co): the gather volume scales
// with Co instead of C.
Tensor shift_convolve(const char* op, const Tensor& x, const Tensor& weight, const Tensor& bias,
                      std::shared_ptr<const ConvGeometry> geom) {
  const auto batch = x.dim(0), channels = x.dim(1), out_channels = weight.dim(0);
  const auto isz = geom->in_size, osz = geom->out_size, ksz = geom->kernel_size, kco = ksz * out_channels;
  // wr[c, k*Co + co] = w[co, c, k]
  auto wr = std::make_shared<RowMatrix>(channels, kco);
  const double* wd = weight.data().data();
  for (std::size_t co = 0; co < out_channels; ++co)
    for (std::size_t c = 0; c < channels; ++c)
      for (std::size_t k = 0; k < ksz; ++k) (*wr)(c, k * out_channels + co) = wd[(co * channels + c) * ksz + k];

  Shape out_shape{batch, out_channels};
  out_shape.insert(out_shape.end(), geom->out_spatial.begin(), geom->out_spatial.end());
  std::vector<double> out(shape_numel(out_shape));
  RowMatrix z(isz, kco);
  std::vector<double> acc(osz * out_channels);
  for (std::size_t b = 0; b < batch; ++b) {
    z.noalias() = ConstMap(x.data().data() + b * channels * isz, channels, isz).transpose() * (*wr);
    std::fill(acc.begin(), acc.end(), 0.0);
    for (std::size_t k = 0; k < ksz; ++k) {
      const std::int64_t* t = geom->table.data() + k * osz;
      for (std::size_t pos = 0; pos < osz; ++pos) {
        if (t[pos] < 0) continue;
        const double* src = z.data() + static_cast<std::size_t>(t[pos]) * kco + k * out_channels;
        double* dst = acc.data() + pos * out_channels;
        for (std::size_t co = 0; co < out_channels; ++co) dst[co] += src[co];
      }
    }
    for (std::size_t co = 0; co < out_channels; ++co) {
      const double bv = bias.defined() ? bias.data()[co] : 0.0;
      double* dst = out.data() + (b * out_channels + co) * osz;
      for (std::size_t pos = 0; pos < osz; ++pos) dst[pos] = acc[pos * out_channels + co] + bv;
    }
  }

  std::vector<Tensor> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  return detail::finish(
      op, std::move(out_shape), std::move(out), inputs,
      [x, weight, bias, geom, wr, batch, channels, out_channels, isz, osz, ksz, kco](const Tensor& o) mutable {
        const double* gout = o.grad().data();
        if (bias.defined() && bias.requires_grad()) {
          auto gb = bias.mutable_grad();
          for (std::size_t b = 0; b < batch; ++b)
            for (std::size_t co = 0; co < out_channels; ++co) {
              const double* src = gout + (b * out_channels + co) * osz;
              double s = 0.0;
              for (std::size_t p = 0; p < osz; ++p) s += src[p];
              gb[co] += s;
            }
        }
        const bool need_x = x.requires_grad();
        const bool need_w = weight.requires_grad();
        if (!need_x && !need_w) return;
        RowMatrix dz(isz, kco);
        RowMatrix dwr = RowMatrix::Zero(channels, kco);
        for (std::size_t b = 0; b < batch; ++b) {
          dz.setZero();
          for (std::size_t k = 0; k < ksz; ++k) {
            const std::int64_t* t = geom->table.data() + k * osz;
            for (std::size_t pos = 0; pos < osz; ++pos) {
              if (t[pos] < 0) continue;
              double* dst = dz.data() + static_cast<std::size_t>(t[pos]) * kco + k * out_channels;
              for (std::size_t co = 0; co < out_channels; ++co) dst[co] += gout[(b * out_channels + co) * osz + pos];
            }
          }
          if (need_x) {
            Map(x.mutable_grad().data() + b * channels * isz, channels, isz).noalias() += (*wr) * dz.transpose();
          }
          if (need_w) dwr.noalias() += ConstMap(x.data().data() + b * channels * isz, channels, isz) * dz;
        }
        if (need_w) {
          auto gw = weight.mutable_grad();
          for (std::size_t co = 0; co < out_channels; ++co)
            for (std::size_t c = 0; c < channels; ++c)
              for (std::size_t k = 0; k < ksz; ++k) gw[(co * channels + c) * ksz + k] += dwr(c, k * out_channels + co);
        }
      });
}

// Shared forward/backward for conv2d and conv4d: x [B,C,spatial...],
// weight [Co,C,kernel...].
Tensor convolve(const char* op, const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t spatial_rank,
                std::size_t stride, std::size_t padding) {
  const auto& xs = x.shape();
  const auto& ws = weight.shape();
  if (xs.size() != spatial_rank + 2 || ws.size() != spatial_rank + 2) {
    throw ShapeError(std::string(op) + ": expected rank-" + std::to_string(spatial_rank + 2) + " input and weight, got " +
                     shape_string(xs) + " and " + shape_string(ws));
  }
  if (xs[1] != ws[1]) {
    throw ShapeError(std::string(op) + ": input has " + std::to_string(xs[1]) + " channels but weight expects " +
                     std::to_string(ws[1]) + " (input " + shape_string(xs) + ", weight " + shape_string(ws) + ")");
  }
  if (stride == 0) throw ShapeError(std::string(op) + ": stride must be >= 1");
  const auto batch = xs[0], channels = xs[1], out_channels = ws[0];
  if (bias.defined() && bias.shape() != Shape{out_channels}) {
    throw ShapeError(std::string(op) + ": bias shape " + shape_string(bias.shape()) + " does not match " +
                     std::to_string(out_channels) + " output channels");
  }
  auto geom = std::make_shared<const ConvGeometry>(op, Shape(xs.begin() + 2, xs.end()), Shape(ws.begin() + 2, ws.end()),
                                                   stride, padding);
  if (stride == 1 && channels > out_channels) return shift_convolve(op, x, weight, bias, geom);
  const auto rows = channels * geom->kernel_size;
  const auto osz = geom->out_size;
  const auto nb_max = chunk_size(batch, rows, osz);

  Shape out_shape{batch, out_channels};
  out_shape.insert(out_shape.end(), geom->out_spatial.begin(), geom->out_spatial.end());
  std::vector<double> out(shape_numel(out_shape));
  std::vector<double> col(rows * nb_max * osz);
  RowMatrix tmp;
  ConstMap w(weight.data().data(), out_channels, rows);
  for (std::size_t b0 = 0; b0 < batch; b0 += nb_max) {
    const auto nb = std::min(nb_max, batch - b0);
    im2col(*geom, x.data().data(), channels, b0, nb, col.data());
    tmp.noalias() = w * ConstMap(col.data(), rows, nb * osz);
    for (std::size_t j = 0; j < nb; ++j) {
      for (std::size_t co = 0; co < out_channels; ++co) {
        double* dst = out.data() + ((b0 + j) * out_channels + co) * osz;
        const double* src = tmp.data() + co * nb * osz + j * osz;
        const double b = bias.defined() ? bias.data()[co] : 0.0;
        for (std::size_t p = 0; p < osz; ++p) dst[p] = src[p] + b;
      }
    }
  }

  std::vector<Tensor> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  return detail::finish(op, std::move(out_shape), std::move(out), inputs,
                        [x, weight, bias, geom, batch, channels, out_channels, rows, osz, nb_max](const Tensor& o) mutable {
                          const double* gout = o.grad().data();
                          if (bias.defined() && bias.requires_grad()) {
                            auto gb = bias.mutable_grad();
                            for (std::size_t b = 0; b < batch; ++b) {
                              for (std::size_t co = 0; co < out_channels; ++co) {
                                const double* src = gout + (b * out_channels + co) * osz;
                                double s = 0.0;
                                for (std::size_t p = 0; p < osz; ++p) s += src[p];
                                gb[co] += s;
                              }
                            }
                          }
                          const bool need_x = x.requires_grad();
                          const bool need_w = weight.requires_grad();
                          if (!need_x && !need_w) return;
                          std::vector<double> col(rows * nb_max * osz);
                          RowMatrix g(out_channels, nb_max * osz);
                          RowMatrix dcol;
                          ConstMap w(weight.data().data(), out_channels, rows);
                          for (std::size_t b0 = 0; b0 < batch; b0 += nb_max) {
                            const auto nb = std::min(nb_max, batch - b0);
                            const auto cols = nb * osz;
                            for (std::size_t co = 0; co < out_channels; ++co) {
                              for (std::size_t j = 0; j < nb; ++j) {
                                std::copy_n(gout + ((b0 + j) * out_channels + co) * osz, osz,
                                            g.data() + co * cols + j * osz);
                              }
                            }
                            ConstMap gchunk(g.data(), out_channels, cols);
                            if (need_w) {
                              im2col(*geom, x.data().data(), channels, b0, nb, col.data());
                              Map(weight.mutable_grad().data(), out_channels, rows).noalias() +=
                                  gchunk * ConstMap(col.data(), rows, cols).transpose();
                            }
                            if (need_x) {
                              dcol.noalias() = w.transpose() * gchunk;
                              col2im(*geom, dcol.data(), channels, b0, nb, x.mutable_grad().data());
                            }
                          }
                        });
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride, std::size_t padding) {
  return convolve("conv2d", x, weight, bias, 2, stride, padding);
}

Tensor conv4d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t padding) {
  return convolve("conv4d", x, weight, bias, 4, 1, padding);
}

Tensor unfold(const Tensor& x, std::size_t u, std::size_t v) {
  detail::require(x.rank() == 4, "unfold: expected [B,C,H,W], got " + shape_string(x.shape()));
  if (u % 2 == 0 || v % 2 == 0) {
    throw ShapeError("unfold: neighborhood " + std::to_string(u) + "x" + std::to_string(v) + " must be odd");
  }
  const auto planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  const auto hu = static_cast<std::int64_t>(u / 2), hv = static_cast<std::int64_t>(v / 2);
  // Source offset inside a plane for each (x,y,i,j), -1 where padded.
  std::vector<std::int64_t> table(h * w * u * v, -1);
  for (std::size_t px = 0; px < h; ++px) {
    for (std::size_t py = 0; py < w; ++py) {
      for (std::size_t i = 0; i < u; ++i) {
        for (std::size_t j = 0; j < v; ++j) {
          const auto sx = static_cast<std::int64_t>(px + i) - hu;
          const auto sy = static_cast<std::int64_t>(py + j) - hv;
          if (sx >= 0 && sy >= 0 && sx < static_cast<std::int64_t>(h) && sy < static_cast<std::int64_t>(w)) {
            table[((px * w + py) * u + i) * v + j] = sx * static_cast<std::int64_t>(w) + sy;
          }
        }
      }
    }
  }
  const auto per_plane = table.size();
  std::vector<double> out(planes * per_plane);
  auto in = x.data();
  for (std::size_t p = 0; p < planes; ++p) {
    const double* src = in.data() + p * h * w;
    double* dst = out.data() + p * per_plane;
    for (std::size_t k = 0; k < per_plane; ++k) dst[k] = table[k] >= 0 ? src[table[k]] : 0.0;
  }
  Shape out_shape{x.dim(0), x.dim(1), h, w, u, v};
  return detail::finish("unfold", std::move(out_shape), std::move(out), {x},
                        [x, table = std::move(table), planes, h, w](const Tensor& o) mutable {
                          auto g = o.grad();
                          auto gx = x.mutable_grad();
                          const auto per_plane = table.size();
                          for (std::size_t p = 0; p < planes; ++p) {
                            const double* src = g.data() + p * per_plane;
                            double* dst = gx.data() + p * h * w;
                            for (std::size_t k = 0; k < per_plane; ++k) {
                              if (table[k] >= 0) dst[table[k]] += src[k];
                            }
                          }
                        });
}

}  // namespace sscf
