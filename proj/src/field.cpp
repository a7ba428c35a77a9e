#include "nerf/field.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <sstream>

namespace nerf {

void FieldConfig::validate() const {
  if (depth < 1 || width < 2 || pos_levels < 0 || dir_levels < 0)
    throw ContractError("FieldConfig: depth >= 1, width >= 2, levels >= 0 required");
  if (skip == 0 || skip >= depth) {
    if (skip != -1) throw ContractError("FieldConfig: skip must be -1 or in [1, depth)");
  }
}

template <typename T>
void encode_into(const Vec3& x, int levels, T* out) {
  for (int i = 0; i < 3; ++i) out[i] = static_cast<T>(x[i]);
  double s[3], c[3];
  for (int i = 0; i < 3; ++i) {
    s[i] = std::sin(std::numbers::pi * x[i]);
    c[i] = std::cos(std::numbers::pi * x[i]);
  }
  for (int k = 0; k < levels; ++k) {
    T* block = out + 3 + 6 * k;
    for (int i = 0; i < 3; ++i) {
      block[i] = static_cast<T>(s[i]);
      block[3 + i] = static_cast<T>(c[i]);
    }
    for (int i = 0; i < 3; ++i) {
      const double s2 = 2.0 * s[i] * c[i];
      c[i] = 1.0 - 2.0 * s[i] * s[i];
      s[i] = s2;
    }
  }
}

std::vector<double> encode(const Vec3& x, int levels) {
  if (levels < 0) throw DomainError("encode: negative level count");
  std::vector<double> out(3 + 6 * static_cast<std::size_t>(levels));
  encode_into(x, levels, out.data());
  return out;
}

template <typename T>
Network<T>::Network(const FieldConfig& config) : config_(config) {
  config_.validate();
  std::size_t offset = 0;
  auto add = [&](int in, int out) {
    LayerShape shape{in, out, offset, offset + static_cast<std::size_t>(in) * out};
    offset = shape.bias_offset + out;
    layers_.push_back(shape);
  };
  for (int l = 0; l < config_.depth; ++l) {
    int in = l == 0 ? config_.pos_dim() : config_.width;
    if (l == config_.skip) in += config_.pos_dim();
    add(in, config_.width);
  }
  add(config_.width, 1);                                     // density head
  add(config_.width, config_.width);                         // feature
  add(config_.width + config_.dir_dim(), config_.color_width());  // color hidden
  add(config_.color_width(), 3);                             // color output
  values_.assign(offset, T(0));
}

template <typename T>
typename Network<T>::ConstMap Network<T>::weight(int layer) const {
  const auto& s = layers_.at(static_cast<std::size_t>(layer));
  return ConstMap(values_.data() + s.weight_offset, s.out, s.in);
}

template <typename T>
typename Network<T>::Map Network<T>::weight(int layer) {
  const auto& s = layers_.at(static_cast<std::size_t>(layer));
  return Map(values_.data() + s.weight_offset, s.out, s.in);
}

template <typename T>
typename Network<T>::ConstVecMap Network<T>::bias(int layer) const {
  const auto& s = layers_.at(static_cast<std::size_t>(layer));
  return ConstVecMap(values_.data() + s.bias_offset, s.out);
}

template <typename T>
FieldParams<T> make_field(const FieldConfig& config, const InitOptions& init) {
  FieldParams<T> params(config);
  Rng rng(mix_seed(init.seed, 0x6669656c64));
  for (Network<T>* net : {&params.coarse, &params.fine}) {
    auto values = net->values();
    for (std::size_t l = 0; l < net->layers().size(); ++l) {
      const auto& s = net->layers()[l];
      const bool output = static_cast<int>(l) == net->sigma_layer() || static_cast<int>(l) == net->color_layer();
      const double limit = std::sqrt(6.0 / (s.in + s.out));
      for (std::size_t i = 0; i < static_cast<std::size_t>(s.in) * s.out; ++i) {
        const double w = (2.0 * rng.uniform() - 1.0) * limit;
        values[s.weight_offset + i] = (init.zero_output && output) ? T(0) : static_cast<T>(w);
      }
    }
    if (!init.zero_output) values[net->layers()[net->sigma_layer()].bias_offset] = static_cast<T>(init.sigma_bias);
  }
  return params;
}

template <typename To, typename From>
FieldParams<To> cast_field(const FieldParams<From>& params) {
  FieldParams<To> out(params.config);
  for (Stage s : {Stage::coarse, Stage::fine}) {
    auto src = params.stage(s).values();
    auto dst = out.stage(s).values();
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] = static_cast<To>(src[i]);
  }
  return out;
}

namespace {

template <typename T>
T softplus(T x) {
  return std::max(x, T(0)) + std::log1p(std::exp(-std::abs(x)));
}

template <typename T>
T sigmoid(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

template <typename T>
void relu_inplace(MatrixX<T>& m) {
  m = m.cwiseMax(T(0));
}

}  // namespace

template <typename T>
void forward(const Network<T>& net, const Matrix3X<T>& points, const Matrix3X<T>* dirs, ForwardTrace<T>& tr) {
  const FieldConfig& cfg = net.config();
  const Eigen::Index n = points.cols();
  if (dirs && dirs->cols() != n) throw ContractError("forward: points/dirs column mismatch");

  tr.enc_x.resize(cfg.pos_dim(), n);
  for (Eigen::Index i = 0; i < n; ++i)
    encode_into(Vec3(points.col(i).template cast<double>()), cfg.pos_levels, tr.enc_x.col(i).data());

  tr.hidden.resize(static_cast<std::size_t>(cfg.depth));
  for (int l = 0; l < cfg.depth; ++l) {
    const auto w = net.weight(l);
    auto& h = tr.hidden[static_cast<std::size_t>(l)];
    if (l == 0) {
      h.noalias() = w * tr.enc_x;
    } else if (l == cfg.skip) {
      h.noalias() = w.leftCols(cfg.width) * tr.hidden[static_cast<std::size_t>(l - 1)];
      h.noalias() += w.rightCols(cfg.pos_dim()) * tr.enc_x;
    } else {
      h.noalias() = w * tr.hidden[static_cast<std::size_t>(l - 1)];
    }
    h.colwise() += net.bias(l);
    relu_inplace(h);
  }
  const auto& last = tr.hidden.back();

  tr.sigma_raw.noalias() = net.weight(net.sigma_layer()) * last;
  tr.sigma_raw.array() += net.bias(net.sigma_layer())(0);
  tr.sigma = tr.sigma_raw.unaryExpr([](T v) { return softplus(v); });

  tr.with_color = dirs != nullptr;
  if (!tr.with_color) {
    tr.enc_d.resize(0, 0);
    tr.feature.resize(0, 0);
    tr.color_hidden.resize(0, 0);
    tr.color.resize(0, 0);
    return;
  }
  tr.enc_d.resize(cfg.dir_dim(), n);
  for (Eigen::Index i = 0; i < n; ++i)
    encode_into(Vec3(dirs->col(i).template cast<double>()), cfg.dir_levels, tr.enc_d.col(i).data());

  tr.feature.noalias() = net.weight(net.feature_layer()) * last;
  tr.feature.colwise() += net.bias(net.feature_layer());

  const auto wc = net.weight(net.color_hidden_layer());
  tr.color_hidden.noalias() = wc.leftCols(cfg.width) * tr.feature;
  tr.color_hidden.noalias() += wc.rightCols(cfg.dir_dim()) * tr.enc_d;
  tr.color_hidden.colwise() += net.bias(net.color_hidden_layer());
  relu_inplace(tr.color_hidden);

  tr.color.noalias() = net.weight(net.color_layer()) * tr.color_hidden;
  tr.color.colwise() += net.bias(net.color_layer());
  tr.color = tr.color.unaryExpr([](T v) { return sigmoid(v); });
}

template <typename T>
void backward(const Network<T>& net, const ForwardTrace<T>& tr, const RowVectorX<T>& d_sigma,
              const Matrix3X<T>* d_color, std::span<T> grad) {
  using Matrix = MatrixX<T>;
  using GradMap = Eigen::Map<Matrix>;
  using GradVec = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>;
  const FieldConfig& cfg = net.config();
  const Eigen::Index n = tr.size();
  if (grad.size() != net.parameter_count()) throw ContractError("backward: gradient buffer has the wrong size");
  if (d_sigma.cols() != n || tr.hidden.size() != static_cast<std::size_t>(cfg.depth) ||
      tr.enc_x.rows() != cfg.pos_dim())
    throw ContractError("backward: trace does not match adjoints or network");
  if (d_color && (!tr.with_color || d_color->cols() != n))
    throw ContractError("backward: color adjoints given for a density-only trace");

  // Accumulate in an aligned buffer; see Network::values_.
  Eigen::Matrix<T, Eigen::Dynamic, 1> acc = Eigen::Matrix<T, Eigen::Dynamic, 1>::Zero(grad.size());
  auto gw = [&](int layer) {
    const auto& s = net.layers()[static_cast<std::size_t>(layer)];
    return GradMap(acc.data() + s.weight_offset, s.out, s.in);
  };
  auto gb = [&](int layer) {
    const auto& s = net.layers()[static_cast<std::size_t>(layer)];
    return GradVec(acc.data() + s.bias_offset, s.out);
  };

  const auto& last = tr.hidden.back();
  const RowVectorX<T> d_sigma_raw =
      d_sigma.cwiseProduct(tr.sigma_raw.unaryExpr([](T v) { return sigmoid(v); }));
  gw(net.sigma_layer()).noalias() += d_sigma_raw * last.transpose();
  gb(net.sigma_layer())(0) += d_sigma_raw.sum();
  Matrix d_h = net.weight(net.sigma_layer()).transpose() * d_sigma_raw;

  if (d_color) {
    const Matrix d_color_raw =
        d_color->cwiseProduct(tr.color).cwiseProduct((Matrix::Ones(3, n) - tr.color));
    gw(net.color_layer()).noalias() += d_color_raw * tr.color_hidden.transpose();
    gb(net.color_layer()) += d_color_raw.rowwise().sum();

    Matrix d_ch = net.weight(net.color_layer()).transpose() * d_color_raw;
    d_ch.array() *= (tr.color_hidden.array() > T(0)).template cast<T>();
    auto gwc = gw(net.color_hidden_layer());
    gwc.leftCols(cfg.width).noalias() += d_ch * tr.feature.transpose();
    gwc.rightCols(cfg.dir_dim()).noalias() += d_ch * tr.enc_d.transpose();
    gb(net.color_hidden_layer()) += d_ch.rowwise().sum();

    const Matrix d_feature = net.weight(net.color_hidden_layer()).leftCols(cfg.width).transpose() * d_ch;
    gw(net.feature_layer()).noalias() += d_feature * last.transpose();
    gb(net.feature_layer()) += d_feature.rowwise().sum();
    d_h.noalias() += net.weight(net.feature_layer()).transpose() * d_feature;
  }

  for (int l = cfg.depth - 1; l >= 0; --l) {
    const auto& h = tr.hidden[static_cast<std::size_t>(l)];
    d_h.array() *= (h.array() > T(0)).template cast<T>();
    auto g = gw(l);
    if (l == 0) {
      g.noalias() += d_h * tr.enc_x.transpose();
    } else {
      const auto& prev = tr.hidden[static_cast<std::size_t>(l - 1)];
      g.leftCols(cfg.width).noalias() += d_h * prev.transpose();
      if (l == cfg.skip) g.rightCols(cfg.pos_dim()).noalias() += d_h * tr.enc_x.transpose();
    }
    gb(l) += d_h.rowwise().sum();
    if (l > 0) {
      Matrix d_prev = net.weight(l).leftCols(cfg.width).transpose() * d_h;
      d_h.swap(d_prev);
    }
  }
  for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += acc[static_cast<Eigen::Index>(i)];
}

namespace {

void check_query(const Vec3& x, const Vec3& d) {
  if (!x.allFinite() || !d.allFinite()) throw DomainError("evaluate: non-finite input");
  if (std::abs(d.norm() - 1.0) > 1e-6) throw DomainError("evaluate: direction must be unit length");
}

}  // namespace

template <typename T>
FieldOutput evaluate(const FieldParams<T>& params, const Vec3& x, const Vec3& d, Stage stage) {
  check_query(x, d);
  Matrix3X<T> p(3, 1), dir(3, 1);
  p.col(0) = x.cast<T>();
  dir.col(0) = d.cast<T>();
  ForwardTrace<T> trace;
  forward(params.stage(stage), p, &dir, trace);
  FieldOutput out;
  out.sigma = static_cast<double>(trace.sigma(0));
  out.color = trace.color.col(0).template cast<double>();
  return out;
}

Vec3 density_gradient(const DensityFn& sigma, const Vec3& x, double h) {
  if (!(h > 0.0)) throw DomainError("density_gradient: step must be positive");
  Vec3 g;
  for (int i = 0; i < 3; ++i) {
    Vec3 e = Vec3::Zero();
    e[i] = h;
    g[i] = (sigma(x + e) - sigma(x - e)) / (2.0 * h);
  }
  return g;
}

template <typename T>
Vec3 density_gradient(const FieldParams<T>& params, const Vec3& x, double h, Stage stage) {
  if (!(h > 0.0)) throw DomainError("density_gradient: step must be positive");
  if (!x.allFinite()) throw DomainError("density_gradient: non-finite input");
  Matrix3X<T> p(3, 6);
  for (int i = 0; i < 3; ++i) {
    Vec3 e = Vec3::Zero();
    e[i] = h;
    p.col(2 * i) = (x + e).cast<T>();
    p.col(2 * i + 1) = (x - e).cast<T>();
  }
  ForwardTrace<T> trace;
  forward<T>(params.stage(stage), p, nullptr, trace);
  Vec3 g;
  for (int i = 0; i < 3; ++i)
    g[i] = (static_cast<double>(trace.sigma(2 * i)) - static_cast<double>(trace.sigma(2 * i + 1))) / (2.0 * h);
  return g;
}

namespace {

std::optional<Vec3> outward(const Vec3& gradient) {
  const double norm = gradient.norm();
  if (!(norm > kMinGradientNorm)) return std::nullopt;
  return Vec3(-gradient / norm);
}

}  // namespace

std::optional<Vec3> normal_at(const DensityFn& sigma, const Vec3& x, double h) {
  return outward(density_gradient(sigma, x, h));
}

template <typename T>
std::optional<Vec3> normal_at(const FieldParams<T>& params, const Vec3& x, double h, Stage stage) {
  return outward(density_gradient(params, x, h, stage));
}

template <typename T>
void FieldSource<T>::evaluate(Stage stage, std::span<const Vec3> points, const Vec3& direction,
                              std::span<double> sigma, std::span<Vec3> color) const {
  const auto n = static_cast<Eigen::Index>(points.size());
  Matrix3X<T> p(3, n), dir(3, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    p.col(i) = points[static_cast<std::size_t>(i)].cast<T>();
    dir.col(i) = direction.cast<T>();
  }
  ForwardTrace<T> trace;
  forward(params_.stage(stage), p, &dir, trace);
  for (Eigen::Index i = 0; i < n; ++i) {
    sigma[static_cast<std::size_t>(i)] = static_cast<double>(trace.sigma(i));
    color[static_cast<std::size_t>(i)] = trace.color.col(i).template cast<double>();
  }
}

template <typename T>
void FieldSource<T>::density(Stage stage, std::span<const Vec3> points, std::span<double> sigma) const {
  const auto n = static_cast<Eigen::Index>(points.size());
  Matrix3X<T> p(3, n);
  for (Eigen::Index i = 0; i < n; ++i) p.col(i) = points[static_cast<std::size_t>(i)].cast<T>();
  ForwardTrace<T> trace;
  forward<T>(params_.stage(stage), p, nullptr, trace);
  for (Eigen::Index i = 0; i < n; ++i) sigma[static_cast<std::size_t>(i)] = static_cast<double>(trace.sigma(i));
}

namespace {

constexpr char kMagic[8] = {'N', 'E', 'R', 'F', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kCheckpointVersion = 1;

void put_u32(std::string& buf, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint32_t get_u32(const std::string& buf, std::size_t& pos, const std::string& name) {
  if (pos + 4 > buf.size()) throw ParseError(name + ": truncated checkpoint");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
  pos += 4;
  return v;
}

}  // namespace

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const FieldParams<T>& params) {
  std::string buf(kMagic, sizeof(kMagic));
  put_u32(buf, kCheckpointVersion);
  const FieldConfig& c = params.config;
  for (int v : {c.depth, c.width, c.skip, c.pos_levels, c.dir_levels}) put_u32(buf, static_cast<std::uint32_t>(v));
  put_u32(buf, 2);
  for (Stage s : {Stage::coarse, Stage::fine}) {
    const auto& layers = params.stage(s).layers();
    put_u32(buf, static_cast<std::uint32_t>(layers.size()));
    for (const auto& l : layers) {
      put_u32(buf, static_cast<std::uint32_t>(l.in));
      put_u32(buf, static_cast<std::uint32_t>(l.out));
    }
  }
  for (Stage s : {Stage::coarse, Stage::fine})
    for (T v : params.stage(s).values()) put_u32(buf, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  const std::uint64_t checksum = fnv1a(buf.data(), buf.size());
  put_u32(buf, static_cast<std::uint32_t>(checksum & 0xffffffffu));
  put_u32(buf, static_cast<std::uint32_t>(checksum >> 32));

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary);
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw Error("save_checkpoint: cannot write " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

template <typename T>
FieldParams<T> load_checkpoint(const std::filesystem::path& path) {
  const std::string name = path.filename().string();
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open checkpoint " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  const std::string buf = ss.str();
  if (buf.size() < sizeof(kMagic) + 8 || std::memcmp(buf.data(), kMagic, sizeof(kMagic)) != 0)
    throw ParseError(name + ": not a checkpoint (bad magic)");
  const std::size_t body = buf.size() - 8;
  std::size_t tail = body;
  const std::uint64_t stored =
      static_cast<std::uint64_t>(get_u32(buf, tail, name)) | (static_cast<std::uint64_t>(get_u32(buf, tail, name)) << 32);
  if (fnv1a(buf.data(), body) != stored) throw ParseError(name + ": checksum mismatch");

  std::size_t pos = sizeof(kMagic);
  if (get_u32(buf, pos, name) != kCheckpointVersion) throw ParseError(name + ": unsupported checkpoint version");
  FieldConfig cfg;
  cfg.depth = static_cast<int>(get_u32(buf, pos, name));
  cfg.width = static_cast<int>(get_u32(buf, pos, name));
  cfg.skip = static_cast<int>(static_cast<std::int32_t>(get_u32(buf, pos, name)));
  cfg.pos_levels = static_cast<int>(get_u32(buf, pos, name));
  cfg.dir_levels = static_cast<int>(get_u32(buf, pos, name));
  try {
    cfg.validate();
  } catch (const ContractError& e) {
    throw ParseError(name + ": " + e.what());
  }
  FieldParams<T> params(cfg);
  if (get_u32(buf, pos, name) != 2) throw ParseError(name + ": expected two networks");
  for (Stage s : {Stage::coarse, Stage::fine}) {
    const auto& layers = params.stage(s).layers();
    if (get_u32(buf, pos, name) != layers.size()) throw ParseError(name + ": layer count does not match config");
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const auto in_dim = get_u32(buf, pos, name);
      const auto out_dim = get_u32(buf, pos, name);
      if (static_cast<int>(in_dim) != layers[l].in || static_cast<int>(out_dim) != layers[l].out)
        throw ParseError(name + ": layer " + std::to_string(l) + " dimensions do not chain");
    }
  }
  for (Stage s : {Stage::coarse, Stage::fine}) {
    for (T& v : params.stage(s).values()) {
      const float f = std::bit_cast<float>(get_u32(buf, pos, name));
      if (!std::isfinite(f)) throw ParseError(name + ": non-finite parameter");
      v = static_cast<T>(f);
    }
  }
  if (pos != body) throw ParseError(name + ": trailing bytes before checksum");
  return params;
}

#define NERF_INSTANTIATE_FIELD(T)                                                                               \
  template void encode_into<T>(const Vec3&, int, T*);                                                           \
  template class Network<T>;                                                                                    \
  template FieldParams<T> make_field<T>(const FieldConfig&, const InitOptions&);                                \
  template void forward<T>(const Network<T>&, const Matrix3X<T>&, const Matrix3X<T>*, ForwardTrace<T>&);        \
  template void backward<T>(const Network<T>&, const ForwardTrace<T>&, const RowVectorX<T>&, const Matrix3X<T>*, \
                            std::span<T>);                                                                      \
  template FieldOutput evaluate<T>(const FieldParams<T>&, const Vec3&, const Vec3&, Stage);                     \
  template Vec3 density_gradient<T>(const FieldParams<T>&, const Vec3&, double, Stage);                         \
  template std::optional<Vec3> normal_at<T>(const FieldParams<T>&, const Vec3&, double, Stage);                 \
  template class FieldSource<T>;                                                                                \
  template void save_checkpoint<T>(const std::filesystem::path&, const FieldParams<T>&);                        \
  template FieldParams<T> load_checkpoint<T>(const std::filesystem::path&);

NERF_INSTANTIATE_FIELD(float)
NERF_INSTANTIATE_FIELD(double)
#undef NERF_INSTANTIATE_FIELD

template FieldParams<float> cast_field<float, double>(const FieldParams<double>&);
template FieldParams<double> cast_field<double, float>(const FieldParams<float>&);
template FieldParams<float> cast_field<float, float>(const FieldParams<float>&);
template FieldParams<double> cast_field<double, double>(const FieldParams<double>&);

}  // namespace nerf
