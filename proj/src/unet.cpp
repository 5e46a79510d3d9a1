#include "cgdm/unet.hpp"

#include "cgdm/errors.hpp"

#include <cmath>
#include <cstring>

namespace cgdm {

namespace {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct Shape {
  int c, batch, h, w;
  Index pixels() const { return static_cast<Index>(batch) * h * w; }
};

// Patch matrix for sample b: column oy*wo+ox holds the 3x3 neighbourhood in (ky, kx, ci) order.
void im2col(const Matrix& in, const Shape& s, int b, int stride, int ho, int wo, Matrix& cols) {
  cols.resize(9 * s.c, static_cast<Index>(ho) * wo);
  const std::size_t bytes = sizeof(double) * static_cast<std::size_t>(s.c);
  for (int oy = 0; oy < ho; ++oy) {
    for (int ox = 0; ox < wo; ++ox) {
      double* dst = cols.col(static_cast<Index>(oy) * wo + ox).data();
      for (int ky = 0; ky < 3; ++ky) {
        const int iy = oy * stride + ky - 1;
        for (int kx = 0; kx < 3; ++kx, dst += s.c) {
          const int ix = ox * stride + kx - 1;
          if (iy < 0 || iy >= s.h || ix < 0 || ix >= s.w) {
            std::memset(dst, 0, bytes);
          } else {
            std::memcpy(dst, in.col((static_cast<Index>(b) * s.h + iy) * s.w + ix).data(), bytes);
          }
        }
      }
    }
  }
}

// Scatter-adds the patch gradient of sample b into out.
void col2im(const Matrix& cols, const Shape& s, int b, int stride, int ho, int wo, Matrix& out) {
  for (int oy = 0; oy < ho; ++oy) {
    for (int ox = 0; ox < wo; ++ox) {
      const double* src = cols.col(static_cast<Index>(oy) * wo + ox).data();
      for (int ky = 0; ky < 3; ++ky) {
        const int iy = oy * stride + ky - 1;
        for (int kx = 0; kx < 3; ++kx, src += s.c) {
          const int ix = ox * stride + kx - 1;
          if (iy < 0 || iy >= s.h || ix < 0 || ix >= s.w) continue;
          double* dst = out.col((static_cast<Index>(b) * s.h + iy) * s.w + ix).data();
          for (int c = 0; c < s.c; ++c) dst[c] += src[c];
        }
      }
    }
  }
}

// Convolutions run one sample at a time so the patch matrix stays cache resident.
Matrix conv_forward(const Conv3& conv, const Matrix& in, const Shape& s, int stride) {
  const int ho = s.h / stride, wo = s.w / stride;
  const Index per = static_cast<Index>(ho) * wo;
  Matrix out(conv.w.rows(), per * s.batch);
  Matrix cols;
  for (int b = 0; b < s.batch; ++b) {
    im2col(in, s, b, stride, ho, wo, cols);
    out.middleCols(b * per, per).noalias() = conv.w * cols;
  }
  out.colwise() += conv.b;
  return out;
}

Matrix conv_backward(const Conv3& conv, const Matrix& in, const Shape& s, int stride, const Matrix& dout,
                     Conv3& grad) {
  const int ho = s.h / stride, wo = s.w / stride;
  const Index per = static_cast<Index>(ho) * wo;
  Matrix din = Matrix::Zero(s.c, s.pixels());
  Matrix cols, dcols;
  for (int b = 0; b < s.batch; ++b) {
    const auto d = dout.middleCols(b * per, per);
    im2col(in, s, b, stride, ho, wo, cols);
    grad.w.noalias() += d * cols.transpose();
    dcols.noalias() = conv.w.transpose() * d;
    col2im(dcols, s, b, stride, ho, wo, din);
  }
  grad.b += dout.rowwise().sum();
  return din;
}

Matrix upsample2(const Matrix& in, const Shape& s) {
  const int h2 = 2 * s.h, w2 = 2 * s.w;
  Matrix out(in.rows(), static_cast<Index>(s.batch) * h2 * w2);
  for (int b = 0; b < s.batch; ++b)
    for (int y = 0; y < h2; ++y)
      for (int x = 0; x < w2; ++x)
        out.col((static_cast<Index>(b) * h2 + y) * w2 + x) =
            in.col((static_cast<Index>(b) * s.h + y / 2) * s.w + x / 2);
  return out;
}

// Gradient of upsample2; s is the small (input) shape.
Matrix upsample2_backward(const Matrix& dout, const Shape& s) {
  const int h2 = 2 * s.h, w2 = 2 * s.w;
  Matrix din = Matrix::Zero(dout.rows(), s.pixels());
  for (int b = 0; b < s.batch; ++b)
    for (int y = 0; y < h2; ++y)
      for (int x = 0; x < w2; ++x)
        din.col((static_cast<Index>(b) * s.h + y / 2) * s.w + x / 2) +=
            dout.col((static_cast<Index>(b) * h2 + y) * w2 + x);
  return din;
}

Matrix silu(const Matrix& x) {
  return (x.array() / (1.0 + (-x.array()).exp())).matrix();
}

// dL/dx from dL/dy for y = silu(x).
Matrix silu_backward(const Matrix& x, const Matrix& dy) {
  const Eigen::ArrayXXd sig = 1.0 / (1.0 + (-x.array()).exp());
  return (dy.array() * sig * (1.0 + x.array() * (1.0 - sig))).matrix();
}

// Adds column b of bias to every pixel column of sample b.
void add_sample_bias(Matrix& x, const Matrix& bias, Index per_sample) {
  for (Index b = 0; b < bias.cols(); ++b) x.middleCols(b * per_sample, per_sample).colwise() += bias.col(b);
}

Matrix sample_bias_backward(const Matrix& dx, Index batch, Index per_sample) {
  Matrix out(dx.rows(), batch);
  for (Index b = 0; b < batch; ++b) out.col(b) = dx.middleCols(b * per_sample, per_sample).rowwise().sum();
  return out;
}

Matrix dense_forward(const Dense& d, const Matrix& in) {
  Matrix out = d.w * in;
  out.colwise() += d.b;
  return out;
}

Matrix dense_backward(const Dense& d, const Matrix& in, const Matrix& dout, Dense& grad) {
  grad.w.noalias() += dout * in.transpose();
  grad.b += dout.rowwise().sum();
  return d.w.transpose() * dout;
}

Conv3 conv_zeros(int cin, int cout) { return {Matrix::Zero(cout, 9 * cin), Vector::Zero(cout)}; }
Dense dense_zeros(int in, int out) { return {Matrix::Zero(out, in), Vector::Zero(out)}; }

template <class Fn>
void for_each_layer(UNetParams& p, Fn&& fn) {
  fn("emb", p.emb.w, p.emb.b, false);
  fn("proj0", p.proj0.w, p.proj0.b, false);
  fn("proj1", p.proj1.w, p.proj1.b, false);
  fn("proj2", p.proj2.w, p.proj2.b, false);
  fn("stem", p.stem.w, p.stem.b, true);
  fn("down1", p.down1.w, p.down1.b, true);
  fn("down2", p.down2.w, p.down2.b, true);
  fn("mid", p.mid.w, p.mid.b, true);
  fn("up1", p.up1.w, p.up1.b, true);
  fn("up2", p.up2.w, p.up2.b, true);
  fn("head", p.head.w, p.head.b, true);
}

}  // namespace

UNetParams UNetParams::zeros(const UNetArch& arch) {
  if (arch.c1 < 1 || arch.c2 < 1 || arch.c3 < 1 || arch.d_emb < 2 || arch.d_emb % 2 != 0) {
    throw ValidationError("unet: widths must be positive and d_emb even");
  }
  UNetParams p;
  p.arch = arch;
  p.emb = dense_zeros(arch.d_emb, arch.c1);
  p.proj0 = dense_zeros(arch.c1, arch.c1);
  p.proj1 = dense_zeros(arch.c1, arch.c2);
  p.proj2 = dense_zeros(arch.c1, arch.c3);
  p.stem = conv_zeros(1, arch.c1);
  p.down1 = conv_zeros(arch.c1, arch.c2);
  p.down2 = conv_zeros(arch.c2, arch.c3);
  p.mid = conv_zeros(arch.c3, arch.c3);
  p.up1 = conv_zeros(arch.c3 + arch.c2, arch.c2);
  p.up2 = conv_zeros(arch.c2 + arch.c1, arch.c1);
  p.head = conv_zeros(arch.c1, 1);
  return p;
}

UNetParams UNetParams::init(const UNetArch& arch, Rng& rng) {
  UNetParams p = zeros(arch);
  for_each_layer(p, [&](const char*, Matrix& w, Vector& b, bool) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(w.cols()));
    for (Index j = 0; j < w.cols(); ++j)
      for (Index i = 0; i < w.rows(); ++i) w(i, j) = bound * (2.0 * rng.uniform() - 1.0);
    for (Index i = 0; i < b.size(); ++i) b(i) = bound * (2.0 * rng.uniform() - 1.0);
  });
  return p;
}

std::size_t UNetParams::parameter_count() const {
  std::size_t n = 0;
  visit([&](const std::string&, const std::vector<std::int64_t>&, const double*, std::size_t size) { n += size; });
  return n;
}

// Weights are stored column-major (out x in), so the visited buffer is the
// transpose: shape [in, out] for dense layers, [3, 3, c_in, c_out] for convs.
void UNetParams::visit(const std::function<void(const std::string&, const std::vector<std::int64_t>&, double*,
                                                std::size_t)>& fn) {
  for_each_layer(*this, [&](const char* name, Matrix& w, Vector& b, bool conv) {
    std::vector<std::int64_t> shape;
    if (conv) {
      shape = {3, 3, w.cols() / 9, w.rows()};
    } else {
      shape = {w.cols(), w.rows()};
    }
    fn(std::string(name) + ".w", shape, w.data(), static_cast<std::size_t>(w.size()));
    fn(std::string(name) + ".b", {b.size()}, b.data(), static_cast<std::size_t>(b.size()));
  });
}

void UNetParams::visit(const std::function<void(const std::string&, const std::vector<std::int64_t>&,
                                                const double*, std::size_t)>& fn) const {
  const_cast<UNetParams*>(this)->visit(
      [&](const std::string& name, const std::vector<std::int64_t>& shape, double* data, std::size_t size) {
        fn(name, shape, data, size);
      });
}

Vector sinusoidal_embed(int k, int d_emb) {
  if (d_emb < 2 || d_emb % 2 != 0) throw ValidationError("sinusoidal_embed: d_emb must be even and >= 2");
  if (k < 0) throw ValidationError("sinusoidal_embed: step must be >= 0");
  Vector out(d_emb);
  for (int j = 0; j < d_emb / 2; ++j) {
    const double omega = std::pow(10000.0, -2.0 * j / d_emb);
    out(2 * j) = std::sin(k * omega);
    out(2 * j + 1) = std::cos(k * omega);
  }
  return out;
}

std::vector<Matrix> UNet::forward(const UNetParams& p, const std::vector<const Matrix*>& xs,
                                  const std::vector<int>& steps, UNetCache* cache) {
  if (xs.empty() || xs.size() != steps.size()) throw DimensionError("unet: batch and step counts differ");
  const int l = static_cast<int>(xs[0]->rows());
  if (l < 4 || l % 4 != 0) throw DimensionError("unet: matrix size " + std::to_string(l) + " not divisible by 4");
  const int batch = static_cast<int>(xs.size());
  const UNetArch& ar = p.arch;
  const Index hw = static_cast<Index>(l) * l;

  UNetCache local;
  UNetCache& c = cache != nullptr ? *cache : local;
  c.batch = batch;
  c.l = l;

  c.x.resize(1, batch * hw);
  for (int b = 0; b < batch; ++b) {
    const Matrix& m = *xs[static_cast<std::size_t>(b)];
    if (m.rows() != l || m.cols() != l) throw DimensionError("unet: mixed matrix sizes in batch");
    Eigen::Map<RowMajor>(c.x.data() + b * hw, l, l) = m;
  }
  c.emb_in.resize(ar.d_emb, batch);
  for (int b = 0; b < batch; ++b) c.emb_in.col(b) = sinusoidal_embed(steps[static_cast<std::size_t>(b)], ar.d_emb);
  c.emb_pre = dense_forward(p.emb, c.emb_in);
  c.h = silu(c.emb_pre);

  const Shape s0{1, batch, l, l}, s1{ar.c1, batch, l, l};
  const Shape s2{ar.c2, batch, l / 2, l / 2}, s3{ar.c3, batch, l / 4, l / 4};

  c.a_pre = conv_forward(p.stem, c.x, s0, 1);
  add_sample_bias(c.a_pre, dense_forward(p.proj0, c.h), hw);
  c.a = silu(c.a_pre);

  c.b_pre = conv_forward(p.down1, c.a, s1, 2);
  add_sample_bias(c.b_pre, dense_forward(p.proj1, c.h), hw / 4);
  c.b = silu(c.b_pre);

  c.c_pre = conv_forward(p.down2, c.b, s2, 2);
  add_sample_bias(c.c_pre, dense_forward(p.proj2, c.h), hw / 16);
  c.c = silu(c.c_pre);

  c.m_pre = conv_forward(p.mid, c.c, s3, 1);
  c.m = silu(c.m_pre);

  c.cat1.resize(ar.c3 + ar.c2, s2.pixels());
  c.cat1.topRows(ar.c3) = upsample2(c.m, s3);
  c.cat1.bottomRows(ar.c2) = c.b;
  c.u_pre = conv_forward(p.up1, c.cat1, Shape{ar.c3 + ar.c2, batch, l / 2, l / 2}, 1);
  c.u = silu(c.u_pre);

  c.cat2.resize(ar.c2 + ar.c1, s1.pixels());
  c.cat2.topRows(ar.c2) = upsample2(c.u, s2);
  c.cat2.bottomRows(ar.c1) = c.a;
  c.v_pre = conv_forward(p.up2, c.cat2, Shape{ar.c2 + ar.c1, batch, l, l}, 1);
  c.v = silu(c.v_pre);

  const Matrix o = conv_forward(p.head, c.v, s1, 1);
  std::vector<Matrix> out(static_cast<std::size_t>(batch));
  for (int b = 0; b < batch; ++b) {
    const Eigen::Map<const RowMajor> ob(o.data() + b * hw, l, l);
    Matrix& y = out[static_cast<std::size_t>(b)];
    y.resize(l, l);
    for (int j = 0; j < l; ++j)
      for (int i = 0; i < l; ++i) y(i, j) = 0.5 * (ob(i, j) + ob(j, i));
    if (!y.allFinite()) throw NumericalError("unet: non-finite activation");
  }
  return out;
}

SymMatrix UNet::predict(const UNetParams& params, const SymMatrix& x, int k) {
  const std::vector<const Matrix*> xs{&x.matrix()};
  return symmetrize(forward(params, xs, {k}).front());
}

void UNet::backward(const UNetParams& p, const UNetCache& c, const std::vector<Matrix>& grad_out,
                    UNetParams& g) {
  const int l = c.l, batch = c.batch;
  const UNetArch& ar = p.arch;
  const Index hw = static_cast<Index>(l) * l;
  if (static_cast<int>(grad_out.size()) != batch) throw DimensionError("unet backward: batch mismatch");

  Matrix d_o(1, batch * hw);
  for (int b = 0; b < batch; ++b) {
    const Matrix& gb = grad_out[static_cast<std::size_t>(b)];
    Eigen::Map<RowMajor>(d_o.data() + b * hw, l, l) = 0.5 * (gb + gb.transpose());
  }
  const Shape s0{1, batch, l, l}, s1{ar.c1, batch, l, l};
  const Shape s2{ar.c2, batch, l / 2, l / 2}, s3{ar.c3, batch, l / 4, l / 4};

  Matrix d_v = conv_backward(p.head, c.v, s1, 1, d_o, g.head);
  Matrix d_vpre = silu_backward(c.v_pre, d_v);
  Matrix d_cat2 = conv_backward(p.up2, c.cat2, Shape{ar.c2 + ar.c1, batch, l, l}, 1, d_vpre, g.up2);
  Matrix d_a = d_cat2.bottomRows(ar.c1);
  Matrix d_u = upsample2_backward(d_cat2.topRows(ar.c2), s2);

  Matrix d_upre = silu_backward(c.u_pre, d_u);
  Matrix d_cat1 = conv_backward(p.up1, c.cat1, Shape{ar.c3 + ar.c2, batch, l / 2, l / 2}, 1, d_upre, g.up1);
  Matrix d_b = d_cat1.bottomRows(ar.c2);
  Matrix d_m = upsample2_backward(d_cat1.topRows(ar.c3), s3);

  Matrix d_mpre = silu_backward(c.m_pre, d_m);
  Matrix d_c = conv_backward(p.mid, c.c, s3, 1, d_mpre, g.mid);

  Matrix d_h = Matrix::Zero(ar.c1, batch);
  Matrix d_cpre = silu_backward(c.c_pre, d_c);
  d_h += dense_backward(p.proj2, c.h, sample_bias_backward(d_cpre, batch, hw / 16), g.proj2);
  d_b += conv_backward(p.down2, c.b, s2, 2, d_cpre, g.down2);

  Matrix d_bpre = silu_backward(c.b_pre, d_b);
  d_h += dense_backward(p.proj1, c.h, sample_bias_backward(d_bpre, batch, hw / 4), g.proj1);
  d_a += conv_backward(p.down1, c.a, s1, 2, d_bpre, g.down1);

  Matrix d_apre = silu_backward(c.a_pre, d_a);
  d_h += dense_backward(p.proj0, c.h, sample_bias_backward(d_apre, batch, hw), g.proj0);
  (void)conv_backward(p.stem, c.x, s0, 1, d_apre, g.stem);

  const Matrix d_embpre = silu_backward(c.emb_pre, d_h);
  (void)dense_backward(p.emb, c.emb_in, d_embpre, g.emb);
}

}  // namespace cgdm
