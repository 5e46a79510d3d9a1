#pragma once

#include "cgdm/linalg.hpp"
#include "cgdm/rng.hpp"

#include <functional>
#include <string>
#include <vector>

namespace cgdm {

struct UNetArch {
  int c1 = 16;
  int c2 = 32;
  int c3 = 64;
  int d_emb = 32;

  friend bool operator==(const UNetArch&, const UNetArch&) = default;
};

/// 3x3 convolution. Weight columns are ordered (ky, kx, c_in), so the weight
/// matrix is c_out x 9 c_in and persists with shape [c_out, 3, 3, c_in].
struct Conv3 {
  Matrix w;
  Vector b;
};

struct Dense {
  Matrix w;  // out x in
  Vector b;
};

/// Parameters of the noise predictor, also used for their gradients and for
/// the Adam moments.
struct UNetParams {
  UNetArch arch;
  Dense emb;    // d_emb -> c1, SiLU
  Dense proj0;  // c1 -> c1, bias on the stem output
  Dense proj1;  // c1 -> c2, bias on the first downsampling stage
  Dense proj2;  // c1 -> c3, bias on the second downsampling stage
  Conv3 stem;   // 1 -> c1
  Conv3 down1;  // c1 -> c2, stride 2
  Conv3 down2;  // c2 -> c3, stride 2
  Conv3 mid;    // c3 -> c3
  Conv3 up1;    // c3 + c2 -> c2 after nearest x2
  Conv3 up2;    // c2 + c1 -> c1 after nearest x2
  Conv3 head;   // c1 -> 1

  static UNetParams zeros(const UNetArch& arch);
  /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases.
  static UNetParams init(const UNetArch& arch, Rng& rng);

  std::size_t parameter_count() const;

  /// Visits every tensor in a fixed order with its persisted name and shape.
  /// The shape is row-major over the visited storage.
  void visit(const std::function<void(const std::string& name, const std::vector<std::int64_t>& shape,
                                      double* data, std::size_t size)>& fn);
  void visit(const std::function<void(const std::string& name, const std::vector<std::int64_t>& shape,
                                      const double* data, std::size_t size)>& fn) const;
};

/// (sin(k w_j), cos(k w_j)) pairs, w_j = 10000^(-2j/d_emb). Throws
/// ValidationError for odd d_emb or negative k.
Vector sinusoidal_embed(int k, int d_emb);

/// Activations kept by forward for backward.
struct UNetCache;

class UNet {
 public:
  /// Batch forward. xs are l x l matrices with l divisible by 4; steps has one
  /// entry per matrix. Output is symmetric per matrix.
  static std::vector<Matrix> forward(const UNetParams& params, const std::vector<const Matrix*>& xs,
                                     const std::vector<int>& steps, UNetCache* cache = nullptr);

  static SymMatrix predict(const UNetParams& params, const SymMatrix& x, int k);

  /// Accumulates dL/dparams into grads given dL/doutput per matrix.
  static void backward(const UNetParams& params, const UNetCache& cache,
                       const std::vector<Matrix>& grad_out, UNetParams& grads);
};

struct UNetCache {
  int batch = 0;
  int l = 0;
  Matrix emb_in, emb_pre, h;
  Matrix x;  // 1 x (B l^2)
  Matrix a_pre, a, b_pre, b, c_pre, c, m_pre, m;
  Matrix cat1, u_pre, u, cat2, v_pre, v;
};

}  // namespace cgdm
