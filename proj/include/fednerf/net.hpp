#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fednerf/linalg.hpp"

namespace fednerf {

/// Which output heads the network carries. `radiance` is the view-dependent
/// density + colour model; `rgb` maps encoded coordinates straight to colour
/// (the 2D image-fitting proxy).
enum class HeadKind : std::uint8_t { radiance = 0, rgb = 1 };

enum class LayerTag : std::uint8_t { trunk = 0, density = 1, feature = 2, color_hidden = 3, color = 4 };

std::string to_string(LayerTag tag);

struct LayerShape {
  LayerTag tag;
  std::size_t out;
  std::size_t in;
};

struct NetArch {
  std::size_t input_dims = 3;
  std::size_t trunk_depth = 8;
  std::size_t trunk_width = 256;
  std::vector<std::size_t> skip_layers{5};
  std::size_t pos_freqs_x = 10;
  std::size_t pos_freqs_d = 4;
  bool include_identity = true;
  bool use_fine = false;
  HeadKind heads = HeadKind::radiance;

  /// Full-size radiance field (depth 8, width 256, skip at 5, 10/4 frequencies).
  static NetArch original();
  /// Small radiance field for laptop-scale runs (depth 4, width 64, 6/3 frequencies).
  static NetArch desk();
  /// Desk-sized 2D coordinate network for the image-fitting proxy.
  static NetArch desk_image();

  /// Throws std::invalid_argument on an inconsistent architecture.
  void validate() const;

  std::size_t encoded_x_dims() const;
  std::size_t encoded_d_dims() const;
  std::size_t num_networks() const { return use_fine ? 2 : 1; }
  /// Layer shapes of one sub-network, in canonical order.
  std::vector<LayerShape> layer_shapes() const;
  std::size_t layers_per_network() const { return layer_shapes().size(); }
  std::size_t total_layers() const { return layers_per_network() * num_networks(); }
  /// Shape of flat layer index z (coarse layers first, then fine).
  LayerShape shape_of(std::size_t z) const;

  bool operator==(const NetArch&) const = default;
};

/// [p] ++ [sin(2^j π p_i), cos(2^j π p_i)] for j in 0..freqs-1, i over coordinates.
std::vector<double> positional_encode(std::span<const double> p, std::size_t freqs, bool include_identity);
/// Writes the encoding of `p` into `out` (length encoded_size(p.size(), ...)).
void positional_encode_into(std::span<const double> p, std::size_t freqs, bool include_identity,
                            std::span<double> out);
std::size_t encoded_size(std::size_t dims, std::size_t freqs, bool include_identity);

struct LayerParams {
  Matrix weight;  // u×v (dense) or u×r (learnable factor L)
  std::vector<double> bias;

  bool operator==(const LayerParams&) const = default;
};

/// θ = {W, B}: every layer of the coarse network followed by the fine one.
struct NetworkParams {
  NetArch arch;
  std::vector<LayerParams> layers;

  /// Throws std::invalid_argument when layer shapes do not chain for `arch`.
  void validate() const;
  bool operator==(const NetworkParams&) const = default;
};

/// C = {L, B}: learnable factors and biases, one per layer.
struct LearnableSet {
  std::vector<LayerParams> layers;
  bool operator==(const LearnableSet&) const = default;
};

/// R: frozen right factors, one per layer.
struct FrozenSet {
  std::vector<Matrix> right;
  bool operator==(const FrozenSet&) const = default;
};

struct FactorizedParams {
  NetArch arch;
  LearnableSet learnable;
  FrozenSet frozen;

  std::vector<std::size_t> ranks() const;
  void validate() const;
};

/// Uniform(±1/sqrt(fan_in)) initialisation, deterministic in `seed`.
NetworkParams init_network(const NetArch& arch, std::uint64_t seed);
NetworkParams zero_network(const NetArch& arch);

using Gradients = std::vector<LayerParams>;

/// Zero-filled gradients shaped like `learnable`.
Gradients zero_gradients_like(const std::vector<LayerParams>& learnable);

/// Non-owning view of one layer: either dense (frozen == nullptr) or
/// factorised as weight·frozen.
struct LayerView {
  const Matrix* weight = nullptr;
  const Matrix* frozen = nullptr;
  const std::vector<double>* bias = nullptr;
};

/// Evaluates a network given either dense or factorised parameters.
class Mlp {
 public:
  static Mlp dense(const NetworkParams& params);
  static Mlp factorized(const NetArch& arch, const LearnableSet& learnable, const FrozenSet& frozen);
  static Mlp factorized(const FactorizedParams& params) {
    return factorized(params.arch, params.learnable, params.frozen);
  }

  const NetArch& arch() const { return arch_; }

  struct Output {
    std::vector<double> sigma;  // P (radiance heads only)
    Matrix rgb;                 // P×3
  };

  struct Cache {
    std::vector<Matrix> inputs;   // per layer of the sub-network
    std::vector<Matrix> reduced;  // input·Rᵀ for factorised layers
    std::vector<Matrix> pre;      // pre-activation outputs
    Matrix encoded_x;
    Matrix encoded_d;
  };

  /// Evaluates sub-network `net` (0 = coarse, 1 = fine) on P points.
  /// `positions` is P×input_dims; `directions` is P×3 (ignored for rgb heads).
  Output forward(std::size_t net, const Matrix& positions, const Matrix* directions, Cache* cache) const;

  /// Accumulates ∂loss/∂(learnable) into `grads` for sub-network `net`.
  /// `dsigma` has length P (may be empty for rgb heads); `drgb` is P×3.
  void backward(std::size_t net, const Output& out, const Cache& cache, std::span<const double> dsigma,
                const Matrix& drgb, Gradients& grads) const;

 private:
  NetArch arch_;
  std::vector<LayerView> layers_;
};

double softplus(double x);
double sigmoid(double x);

}  // namespace fednerf
