#pragma once

// Trainable radiance field: positional encoding, coarse/fine MLPs with a
// density head (softplus) and a view-dependent color head (logistic), batched
// forward passes that keep an activation trace, and exact manual backprop.
//
// Network layout per stage (columns of every matrix are samples):
//   enc(x) -> [Linear+ReLU] x depth  (enc(x) concatenated again before layer `skip`)
//          -> sigma = softplus(Linear(h))
//          -> feature = Linear(h); hidden = ReLU(Linear([feature; enc(d)]))
//          -> color = sigmoid(Linear(hidden))
//
// All templates are instantiated for float (training) and double (gradient checks).

#include "nerf/common.hpp"

#include <Eigen/Dense>

#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <vector>

namespace nerf {

enum class Stage { coarse, fine };

struct FieldConfig {
  int depth = 8;
  int width = 256;
  int skip = 4;  // trunk layer that receives enc(x) again; -1 disables
  int pos_levels = 10;
  int dir_levels = 4;

  /// 8 x 256 trunk, skip into the fifth layer.
  static FieldConfig standard() { return {}; }
  /// 4 x 64 trunk for tests and desk-scale runs.
  static FieldConfig small() { return {4, 64, 2, 10, 4}; }

  int pos_dim() const { return 3 + 6 * pos_levels; }
  int dir_dim() const { return 3 + 6 * dir_levels; }
  int color_width() const { return width / 2; }
  void validate() const;
  bool operator==(const FieldConfig&) const = default;
};

/// x followed by (sin(2^k pi x_i) for i in xyz, cos(2^k pi x_i) for i in xyz), k = 0..levels-1.
std::vector<double> encode(const Vec3& x, int levels);

/// Writes the encoding into `out` (length 3 + 6 * levels). Octaves use the
/// double-angle recurrence in double precision.
template <typename T>
void encode_into(const Vec3& x, int levels, T* out);

struct LayerShape {
  int in = 0;
  int out = 0;
  std::size_t weight_offset = 0;  // column-major out x in
  std::size_t bias_offset = 0;
};

template <typename T>
using MatrixX = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
template <typename T>
using RowVectorX = Eigen::Matrix<T, 1, Eigen::Dynamic>;
template <typename T>
using Matrix3X = Eigen::Matrix<T, 3, Eigen::Dynamic>;

/// One MLP (coarse or fine) with all weights in a single flat buffer.
template <typename T>
class Network {
 public:
  using Matrix = MatrixX<T>;
  using ConstMap = Eigen::Map<const Matrix>;
  using Map = Eigen::Map<Matrix>;
  using ConstVecMap = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>;

  explicit Network(const FieldConfig& config);

  const FieldConfig& config() const { return config_; }
  const std::vector<LayerShape>& layers() const { return layers_; }
  std::size_t parameter_count() const { return values_.size(); }
  std::span<T> values() { return values_; }
  std::span<const T> values() const { return values_; }

  ConstMap weight(int layer) const;
  Map weight(int layer);
  ConstVecMap bias(int layer) const;

  int sigma_layer() const { return config_.depth; }
  int feature_layer() const { return config_.depth + 1; }
  int color_hidden_layer() const { return config_.depth + 2; }
  int color_layer() const { return config_.depth + 3; }

 private:
  FieldConfig config_;
  std::vector<LayerShape> layers_;
  // Eigen's vectorized kernels split work by address, so results depend on
  // buffer alignment; a fixed alignment keeps runs bitwise reproducible.
  std::vector<T, Eigen::aligned_allocator<T>> values_;
};

template <typename T>
struct FieldParams {
  FieldConfig config;
  Network<T> coarse;
  Network<T> fine;

  explicit FieldParams(const FieldConfig& c) : config(c), coarse(c), fine(c) {}
  Network<T>& stage(Stage s) { return s == Stage::coarse ? coarse : fine; }
  const Network<T>& stage(Stage s) const { return s == Stage::coarse ? coarse : fine; }
};

struct InitOptions {
  std::uint64_t seed = 0;
  double sigma_bias = -1.0;   // initial pre-activation offset of the density head
  bool zero_output = false;   // zero density and color output layers (weights and biases)
};

/// Glorot-uniform weights, zero biases (except the density head bias).
template <typename T>
FieldParams<T> make_field(const FieldConfig& config, const InitOptions& init = {});

template <typename To, typename From>
FieldParams<To> cast_field(const FieldParams<From>& params);

/// Activations of one batched forward pass, kept for backward().
template <typename T>
struct ForwardTrace {
  MatrixX<T> enc_x;
  MatrixX<T> enc_d;                 // empty for density-only passes
  std::vector<MatrixX<T>> hidden;   // post-ReLU trunk outputs
  RowVectorX<T> sigma_raw;
  RowVectorX<T> sigma;
  MatrixX<T> feature;
  MatrixX<T> color_hidden;
  MatrixX<T> color;                 // 3 x N, post-sigmoid
  bool with_color = false;

  Eigen::Index size() const { return enc_x.cols(); }
};

/// Batched forward pass. `dirs` may be null for a density-only pass.
template <typename T>
void forward(const Network<T>& net, const Matrix3X<T>& points, const Matrix3X<T>* dirs, ForwardTrace<T>& trace);

/// Accumulates d(loss)/d(params) into `grad` (length parameter_count()) given
/// the adjoints of sigma (1 x N) and, for color passes, of color (3 x N).
template <typename T>
void backward(const Network<T>& net, const ForwardTrace<T>& trace, const RowVectorX<T>& d_sigma,
              const Matrix3X<T>* d_color, std::span<T> grad);

struct FieldOutput {
  double sigma = 0.0;
  Vec3 color = Vec3::Zero();
};

/// Single-point query. Throws DomainError on non-finite input or non-unit direction.
template <typename T>
FieldOutput evaluate(const FieldParams<T>& params, const Vec3& x, const Vec3& d, Stage stage);

using DensityFn = std::function<double(const Vec3&)>;

/// Central differences (sigma(x + h e_i) - sigma(x - h e_i)) / 2h.
Vec3 density_gradient(const DensityFn& sigma, const Vec3& x, double h);

template <typename T>
Vec3 density_gradient(const FieldParams<T>& params, const Vec3& x, double h, Stage stage = Stage::fine);

inline constexpr double kMinGradientNorm = 1e-8;

/// Outward unit normal (towards decreasing density); nullopt when the gradient is degenerate.
std::optional<Vec3> normal_at(const DensityFn& sigma, const Vec3& x, double h);

template <typename T>
std::optional<Vec3> normal_at(const FieldParams<T>& params, const Vec3& x, double h, Stage stage = Stage::fine);

/// The field as seen by the renderer. Implemented by FieldSource and by analytic test doubles.
class RadianceSource {
 public:
  virtual ~RadianceSource() = default;
  /// Density and color at points that share one viewing direction.
  virtual void evaluate(Stage stage, std::span<const Vec3> points, const Vec3& direction, std::span<double> sigma,
                        std::span<Vec3> color) const = 0;
  virtual void density(Stage stage, std::span<const Vec3> points, std::span<double> sigma) const = 0;
};

template <typename T>
class FieldSource final : public RadianceSource {
 public:
  explicit FieldSource(const FieldParams<T>& params) : params_(params) {}
  void evaluate(Stage stage, std::span<const Vec3> points, const Vec3& direction, std::span<double> sigma,
                std::span<Vec3> color) const override;
  void density(Stage stage, std::span<const Vec3> points, std::span<double> sigma) const override;

 private:
  const FieldParams<T>& params_;
};

// Checkpoint: "NERFCKPT", u32 version, u32 config (depth width skip pos_levels dir_levels),
// u32 network count, per network u32 layer count and (in, out) pairs, float32 LE payload,
// u64 FNV-1a of every preceding byte.
template <typename T>
void save_checkpoint(const std::filesystem::path& path, const FieldParams<T>& params);
template <typename T>
FieldParams<T> load_checkpoint(const std::filesystem::path& path);

}  // namespace nerf
