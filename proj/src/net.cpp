#include "fednerf/net.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "fednerf/rng.hpp"

namespace fednerf {

std::string to_string(LayerTag tag) {
  switch (tag) {
    case LayerTag::trunk: return "trunk";
    case LayerTag::density: return "density";
    case LayerTag::feature: return "feature";
    case LayerTag::color_hidden: return "color_hidden";
    case LayerTag::color: return "color";
  }
  return "unknown";
}

NetArch NetArch::original() { return NetArch{}; }

NetArch NetArch::desk() {
  NetArch a;
  a.trunk_depth = 4;
  a.trunk_width = 64;
  a.skip_layers = {2};
  a.pos_freqs_x = 6;
  a.pos_freqs_d = 3;
  return a;
}

NetArch NetArch::desk_image() {
  NetArch a = desk();
  a.input_dims = 2;
  a.heads = HeadKind::rgb;
  a.pos_freqs_d = 0;
  return a;
}

void NetArch::validate() const {
  if (input_dims < 1) throw std::invalid_argument("NetArch: input_dims must be >= 1");
  if (trunk_depth < 1) throw std::invalid_argument("NetArch: trunk_depth must be >= 1");
  if (trunk_width < 2) throw std::invalid_argument("NetArch: trunk_width must be >= 2");
  for (std::size_t s : skip_layers) {
    if (s == 0 || s >= trunk_depth) {
      throw std::invalid_argument("NetArch: skip index " + std::to_string(s) + " outside [1, trunk_depth)");
    }
  }
  if (heads == HeadKind::rgb && use_fine) throw std::invalid_argument("NetArch: fine network requires radiance heads");
  if (encoded_x_dims() == 0) throw std::invalid_argument("NetArch: empty position encoding");
}

std::size_t encoded_size(std::size_t dims, std::size_t freqs, bool include_identity) {
  return dims * 2 * freqs + (include_identity ? dims : 0);
}

std::size_t NetArch::encoded_x_dims() const { return encoded_size(input_dims, pos_freqs_x, include_identity); }
std::size_t NetArch::encoded_d_dims() const { return encoded_size(3, pos_freqs_d, include_identity); }

std::vector<LayerShape> NetArch::layer_shapes() const {
  std::vector<LayerShape> shapes;
  const std::size_t ex = encoded_x_dims();
  for (std::size_t i = 0; i < trunk_depth; ++i) {
    const bool skip = std::find(skip_layers.begin(), skip_layers.end(), i) != skip_layers.end();
    const std::size_t in = i == 0 ? ex : trunk_width + (skip ? ex : 0);
    shapes.push_back({LayerTag::trunk, trunk_width, in});
  }
  if (heads == HeadKind::radiance) {
    shapes.push_back({LayerTag::density, 1, trunk_width});
    shapes.push_back({LayerTag::feature, trunk_width, trunk_width});
    shapes.push_back({LayerTag::color_hidden, trunk_width / 2, trunk_width + encoded_d_dims()});
    shapes.push_back({LayerTag::color, 3, trunk_width / 2});
  } else {
    shapes.push_back({LayerTag::color, 3, trunk_width});
  }
  return shapes;
}

LayerShape NetArch::shape_of(std::size_t z) const {
  const auto shapes = layer_shapes();
  if (z >= shapes.size() * num_networks()) throw std::out_of_range("NetArch: layer index out of range");
  return shapes[z % shapes.size()];
}

void positional_encode_into(std::span<const double> p, std::size_t freqs, bool include_identity,
                            std::span<double> out) {
  std::size_t o = 0;
  if (include_identity) {
    for (double x : p) out[o++] = x;
  }
  double scale = std::numbers::pi;
  for (std::size_t j = 0; j < freqs; ++j) {
    for (double x : p) {
      out[o++] = std::sin(scale * x);
      out[o++] = std::cos(scale * x);
    }
    scale *= 2.0;
  }
}

std::vector<double> positional_encode(std::span<const double> p, std::size_t freqs, bool include_identity) {
  std::vector<double> out(encoded_size(p.size(), freqs, include_identity));
  positional_encode_into(p, freqs, include_identity, out);
  return out;
}

namespace {

void check_layer_shapes(const NetArch& arch, std::size_t count, auto&& shape_at, const char* what) {
  arch.validate();
  if (count != arch.total_layers()) {
    std::ostringstream msg;
    msg << what << ": expected " << arch.total_layers() << " layers, got " << count;
    throw std::invalid_argument(msg.str());
  }
  for (std::size_t z = 0; z < count; ++z) {
    const LayerShape want = arch.shape_of(z);
    auto [rows, cols, bias] = shape_at(z);
    if (rows != want.out || cols != want.in || bias != want.out) {
      std::ostringstream msg;
      msg << what << ": layer " << z << " (" << to_string(want.tag) << ") has shape " << rows << "x" << cols
          << " bias " << bias << ", expected " << want.out << "x" << want.in;
      throw std::invalid_argument(msg.str());
    }
  }
}

}  // namespace

void NetworkParams::validate() const {
  check_layer_shapes(arch, layers.size(), [&](std::size_t z) {
    return std::tuple{layers[z].weight.rows(), layers[z].weight.cols(), layers[z].bias.size()};
  }, "NetworkParams");
}

std::vector<std::size_t> FactorizedParams::ranks() const {
  std::vector<std::size_t> r;
  for (const auto& m : frozen.right) r.push_back(m.rows());
  return r;
}

void FactorizedParams::validate() const {
  if (learnable.layers.size() != frozen.right.size()) {
    throw std::invalid_argument("FactorizedParams: learnable and frozen layer counts differ");
  }
  check_layer_shapes(arch, learnable.layers.size(), [&](std::size_t z) {
    const auto& l = learnable.layers[z];
    const auto& r = frozen.right[z];
    if (l.weight.cols() != r.rows()) {
      throw std::invalid_argument("FactorizedParams: rank mismatch at layer " + std::to_string(z));
    }
    return std::tuple{l.weight.rows(), r.cols(), l.bias.size()};
  }, "FactorizedParams");
}

NetworkParams init_network(const NetArch& arch, std::uint64_t seed) {
  arch.validate();
  NetworkParams p{arch, {}};
  Rng rng(seed);
  for (std::size_t z = 0; z < arch.total_layers(); ++z) {
    const LayerShape s = arch.shape_of(z);
    const double bound = 1.0 / std::sqrt(static_cast<double>(s.in));
    LayerParams layer{Matrix(s.out, s.in), std::vector<double>(s.out)};
    for (double& w : layer.weight.data()) w = rng.uniform(-bound, bound);
    for (double& b : layer.bias) b = rng.uniform(-bound, bound);
    p.layers.push_back(std::move(layer));
  }
  return p;
}

NetworkParams zero_network(const NetArch& arch) {
  arch.validate();
  NetworkParams p{arch, {}};
  for (std::size_t z = 0; z < arch.total_layers(); ++z) {
    const LayerShape s = arch.shape_of(z);
    p.layers.push_back({Matrix(s.out, s.in), std::vector<double>(s.out, 0.0)});
  }
  return p;
}

Gradients zero_gradients_like(const std::vector<LayerParams>& learnable) {
  Gradients g;
  g.reserve(learnable.size());
  for (const auto& l : learnable) {
    g.push_back({Matrix(l.weight.rows(), l.weight.cols()), std::vector<double>(l.bias.size(), 0.0)});
  }
  return g;
}

double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Mlp Mlp::dense(const NetworkParams& params) {
  params.validate();
  Mlp m;
  m.arch_ = params.arch;
  for (const auto& l : params.layers) m.layers_.push_back({&l.weight, nullptr, &l.bias});
  return m;
}

Mlp Mlp::factorized(const NetArch& arch, const LearnableSet& learnable, const FrozenSet& frozen) {
  if (learnable.layers.size() != frozen.right.size()) {
    throw std::invalid_argument("Mlp: learnable and frozen layer counts differ");
  }
  check_layer_shapes(arch, learnable.layers.size(), [&](std::size_t z) {
    const auto& l = learnable.layers[z];
    if (l.weight.cols() != frozen.right[z].rows()) {
      throw std::invalid_argument("Mlp: rank mismatch at layer " + std::to_string(z));
    }
    return std::tuple{l.weight.rows(), frozen.right[z].cols(), l.bias.size()};
  }, "Mlp");
  Mlp m;
  m.arch_ = arch;
  for (std::size_t z = 0; z < learnable.layers.size(); ++z) {
    m.layers_.push_back({&learnable.layers[z].weight, &frozen.right[z], &learnable.layers[z].bias});
  }
  return m;
}

namespace {

// out (P×n) += a (P×k) · b (k×n)
void gemm_nn(const Matrix& a, const Matrix& b, Matrix& out) {
  const std::size_t k = a.cols();
  const std::size_t n = b.cols();
  for (std::size_t p = 0; p < a.rows(); ++p) {
    const double* ap = a.row(p).data();
    double* op = out.row(p).data();
    for (std::size_t j = 0; j < k; ++j) {
      const double s = ap[j];
      if (s == 0.0) continue;
      const double* bj = b.row(j).data();
      for (std::size_t c = 0; c < n; ++c) op[c] += s * bj[c];
    }
  }
}

// out (k×n) += aᵀ (k×P) · b (P×n)
void gemm_tn(const Matrix& a, const Matrix& b, Matrix& out) {
  const std::size_t k = a.cols();
  const std::size_t n = b.cols();
  for (std::size_t p = 0; p < a.rows(); ++p) {
    const double* ap = a.row(p).data();
    const double* bp = b.row(p).data();
    for (std::size_t j = 0; j < k; ++j) {
      const double s = ap[j];
      if (s == 0.0) continue;
      double* oj = out.row(j).data();
      for (std::size_t c = 0; c < n; ++c) oj[c] += s * bp[c];
    }
  }
}

Matrix linear_forward(const LayerView& layer, const Matrix& in, Matrix* reduced) {
  const Matrix& w = *layer.weight;
  const auto& bias = *layer.bias;
  Matrix out(in.rows(), w.rows());
  for (std::size_t p = 0; p < out.rows(); ++p) std::copy(bias.begin(), bias.end(), out.row(p).begin());
  if (layer.frozen == nullptr) {
    gemm_nn(in, w.transposed(), out);
  } else {
    Matrix z(in.rows(), layer.frozen->rows());
    gemm_nn(in, layer.frozen->transposed(), z);
    gemm_nn(z, w.transposed(), out);
    if (reduced) *reduced = std::move(z);
  }
  return out;
}

// Accumulates parameter gradients; writes ∂/∂input into din when non-null.
void linear_backward(const LayerView& layer, const Matrix& in, const Matrix& reduced, const Matrix& dout,
                     LayerParams& grad, Matrix* din) {
  for (std::size_t p = 0; p < dout.rows(); ++p) {
    auto row = dout.row(p);
    for (std::size_t o = 0; o < row.size(); ++o) grad.bias[o] += row[o];
  }
  const Matrix& w = *layer.weight;
  if (layer.frozen == nullptr) {
    gemm_tn(dout, in, grad.weight);
    if (din) {
      *din = Matrix(in.rows(), in.cols());
      gemm_nn(dout, w, *din);
    }
  } else {
    gemm_tn(dout, reduced, grad.weight);
    if (din) {
      Matrix dz(in.rows(), w.cols());
      gemm_nn(dout, w, dz);
      *din = Matrix(in.rows(), in.cols());
      gemm_nn(dz, *layer.frozen, *din);
    }
  }
}

Matrix concat_cols(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows(), a.cols() + b.cols());
  for (std::size_t p = 0; p < a.rows(); ++p) {
    auto dst = out.row(p);
    std::copy(a.row(p).begin(), a.row(p).end(), dst.begin());
    std::copy(b.row(p).begin(), b.row(p).end(), dst.begin() + static_cast<std::ptrdiff_t>(a.cols()));
  }
  return out;
}

Matrix leading_cols(const Matrix& a, std::size_t n) {
  Matrix out(a.rows(), n);
  for (std::size_t p = 0; p < a.rows(); ++p) {
    std::copy_n(a.row(p).begin(), n, out.row(p).begin());
  }
  return out;
}

void relu_inplace(Matrix& m) {
  for (double& x : m.data()) x = x > 0.0 ? x : 0.0;
}

void relu_mask(Matrix& grad, const Matrix& pre) {
  for (std::size_t i = 0; i < grad.size(); ++i) {
    if (!(pre.data()[i] > 0.0)) grad.data()[i] = 0.0;
  }
}

Matrix encode_rows(const Matrix& points, std::size_t freqs, bool identity) {
  const std::size_t width = encoded_size(points.cols(), freqs, identity);
  Matrix out(points.rows(), width);
  for (std::size_t p = 0; p < points.rows(); ++p) positional_encode_into(points.row(p), freqs, identity, out.row(p));
  return out;
}

}  // namespace

Mlp::Output Mlp::forward(std::size_t net, const Matrix& positions, const Matrix* directions, Cache* cache) const {
  if (net >= arch_.num_networks()) throw std::invalid_argument("Mlp::forward: no such sub-network");
  if (positions.cols() != arch_.input_dims) throw std::invalid_argument("Mlp::forward: position width mismatch");
  const bool radiance = arch_.heads == HeadKind::radiance;
  if (radiance && (directions == nullptr || directions->rows() != positions.rows() || directions->cols() != 3)) {
    throw std::invalid_argument("Mlp::forward: radiance heads need P×3 directions");
  }
  const std::size_t per_net = arch_.layers_per_network();
  const std::size_t base = net * per_net;
  const std::size_t depth = arch_.trunk_depth;

  Cache local;
  Cache& c = cache ? *cache : local;
  c.inputs.assign(per_net, Matrix{});
  c.reduced.assign(per_net, Matrix{});
  c.pre.assign(per_net, Matrix{});
  c.encoded_x = encode_rows(positions, arch_.pos_freqs_x, arch_.include_identity);

  auto run = [&](std::size_t i, Matrix input) -> const Matrix& {
    c.inputs[i] = std::move(input);
    c.pre[i] = linear_forward(layers_[base + i], c.inputs[i], &c.reduced[i]);
    return c.pre[i];
  };

  Matrix h;
  for (std::size_t i = 0; i < depth; ++i) {
    const bool skip = std::find(arch_.skip_layers.begin(), arch_.skip_layers.end(), i) != arch_.skip_layers.end();
    Matrix input = i == 0 ? c.encoded_x : (skip ? concat_cols(h, c.encoded_x) : std::move(h));
    h = run(i, std::move(input));
    relu_inplace(h);
  }

  Output out;
  if (radiance) {
    const Matrix& raw_sigma = run(depth, h);
    out.sigma.resize(positions.rows());
    for (std::size_t p = 0; p < positions.rows(); ++p) out.sigma[p] = softplus(raw_sigma(p, 0));
    Matrix feature = run(depth + 1, std::move(h));
    c.encoded_d = encode_rows(*directions, arch_.pos_freqs_d, arch_.include_identity);
    Matrix hidden = run(depth + 2, concat_cols(feature, c.encoded_d));
    relu_inplace(hidden);
    out.rgb = run(depth + 3, std::move(hidden));
  } else {
    out.rgb = run(depth, std::move(h));
  }
  for (double& x : out.rgb.data()) x = sigmoid(x);
  return out;
}

void Mlp::backward(std::size_t net, const Output& out, const Cache& c, std::span<const double> dsigma,
                   const Matrix& drgb, Gradients& grads) const {
  const std::size_t per_net = arch_.layers_per_network();
  const std::size_t base = net * per_net;
  const std::size_t depth = arch_.trunk_depth;
  const std::size_t width = arch_.trunk_width;
  const std::size_t points = drgb.rows();

  auto back = [&](std::size_t i, const Matrix& dout, Matrix* din) {
    linear_backward(layers_[base + i], c.inputs[i], c.reduced[i], dout, grads[base + i], din);
  };

  std::size_t color = arch_.heads == HeadKind::radiance ? depth + 3 : depth;
  Matrix dpre_color(points, 3);
  for (std::size_t i = 0; i < dpre_color.size(); ++i) {
    const double s = out.rgb.data()[i];
    dpre_color.data()[i] = drgb.data()[i] * s * (1.0 - s);
  }

  Matrix dh;
  if (arch_.heads == HeadKind::radiance) {
    Matrix dhidden;
    back(color, dpre_color, &dhidden);
    relu_mask(dhidden, c.pre[depth + 2]);
    Matrix dconcat;
    back(depth + 2, dhidden, &dconcat);
    Matrix dfeature = leading_cols(dconcat, width);
    back(depth + 1, dfeature, &dh);
    if (!dsigma.empty()) {
      Matrix draw(points, 1);
      for (std::size_t p = 0; p < points; ++p) draw(p, 0) = dsigma[p] * sigmoid(c.pre[depth](p, 0));
      Matrix dh_sigma;
      back(depth, draw, &dh_sigma);
      for (std::size_t i = 0; i < dh.size(); ++i) dh.data()[i] += dh_sigma.data()[i];
    }
  } else {
    back(color, dpre_color, &dh);
  }

  for (std::size_t i = depth; i-- > 0;) {
    relu_mask(dh, c.pre[i]);
    if (i == 0) {
      back(0, dh, nullptr);
      break;
    }
    Matrix din;
    back(i, dh, &din);
    const bool skip = std::find(arch_.skip_layers.begin(), arch_.skip_layers.end(), i) != arch_.skip_layers.end();
    dh = skip ? leading_cols(din, width) : std::move(din);
  }
}

}  // namespace fednerf
