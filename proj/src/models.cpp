#include "gor/layers.hpp"

#include <cmath>
#include <random>

#include "gor/grouping.hpp"
#include "gor/ops.hpp"

namespace gor {

const char* to_string(LayerKind k) {
  switch (k) {
    case LayerKind::linear: return "linear";
    case LayerKind::conv2d: return "conv2d";
    case LayerKind::groupnorm: return "groupnorm";
    case LayerKind::relu: return "relu";
    case LayerKind::global_avg_pool: return "global_avg_pool";
    case LayerKind::adapter: return "adapter";
  }
  return "?";
}

TensorXd Model::param(const std::string& key) const {
  auto it = params.find(key);
  if (it == params.end()) throw ConfigError("model '" + name + "' has no parameter '" + key + "'");
  return it->second;
}

std::vector<std::string> Model::trainable_keys() const {
  std::vector<std::string> keys;
  for (const auto& [k, v] : params)
    if (!is_frozen(k)) keys.push_back(k);
  return keys;
}

Index Model::trainable_param_count() const {
  Index n = 0;
  for (const auto& k : trainable_keys()) n += params.at(k).numel();
  return n;
}

namespace {

Index flat_dim(const Shape& s) {
  Index n = 1;
  for (Index d : s) n *= d;
  return n;
}

}  // namespace

Shape layer_output_shape(const LayerSpec& spec, const Shape& in) {
  switch (spec.kind) {
    case LayerKind::linear:
      if (flat_dim(in) != spec.in)
        throw ConfigError("layer '" + spec.name + "': input " + shape_str(in) +
                          " does not flatten to " + std::to_string(spec.in));
      return {spec.out};
    case LayerKind::adapter:
      if (flat_dim(in) != spec.in)
        throw ConfigError("layer '" + spec.name + "': input " + shape_str(in) +
                          " does not flatten to " + std::to_string(spec.in));
      return {spec.out};
    case LayerKind::conv2d: {
      if (in.size() != 3 || in[0] != spec.in)
        throw ConfigError("layer '" + spec.name + "': expected [" + std::to_string(spec.in) +
                          ",H,W] input, got " + shape_str(in));
      const Index ho = (in[1] + 2 * spec.pad - spec.kh) / spec.stride + 1;
      const Index wo = (in[2] + 2 * spec.pad - spec.kw) / spec.stride + 1;
      if (in[1] + 2 * spec.pad - spec.kh < 0 || in[2] + 2 * spec.pad - spec.kw < 0)
        throw ConfigError("layer '" + spec.name + "': kernel exceeds padded input");
      return {spec.out, ho, wo};
    }
    case LayerKind::groupnorm:
      if (in.size() != 3 || in[0] != spec.out)
        throw ConfigError("layer '" + spec.name + "': expected [" + std::to_string(spec.out) +
                          ",H,W] input, got " + shape_str(in));
      if (spec.gn_groups <= 0 || spec.out % spec.gn_groups != 0)
        throw ConfigError("layer '" + spec.name + "': groups must divide channels");
      return in;
    case LayerKind::relu:
      return in;
    case LayerKind::global_avg_pool:
      if (in.size() != 3)
        throw ConfigError("layer '" + spec.name + "': pooling expects [C,H,W], got " +
                          shape_str(in));
      return {in[0]};
  }
  throw ConfigError("layer '" + spec.name + "': unknown kind");
}

TensorXd forward(const Model& model, const TensorXd& x) {
  if (x.rank() < 2 || Shape(x.shape().begin() + 1, x.shape().end()) != model.input_shape)
    throw ShapeError("model '" + model.name + "' expects per-sample shape " +
                     shape_str(model.input_shape) + ", got batch " + shape_str(x.shape()));
  const Index B = x.dim(0);
  TensorXd a = x;
  for (const auto& spec : model.layers) {
    const bool wants_flat = spec.kind == LayerKind::linear || spec.kind == LayerKind::adapter;
    if (wants_flat && a.rank() > 2) a = reshape(a, {B, a.numel() / B});
    switch (spec.kind) {
      case LayerKind::linear: {
        a = add_rowvec(matmul(a, model.param(spec.name + ".weight")),
                       model.param(spec.name + ".bias"));
        break;
      }
      case LayerKind::conv2d:
        a = conv2d(a, model.param(spec.name + ".kernel"), spec.pad, spec.stride);
        break;
      case LayerKind::groupnorm:
        a = group_norm(a, spec.gn_groups, model.param(spec.name + ".gamma"),
                       model.param(spec.name + ".beta"));
        break;
      case LayerKind::relu:
        a = relu(a);
        break;
      case LayerKind::global_avg_pool:
        a = global_avg_pool(a);
        break;
      case LayerKind::adapter: {
        TensorXd base = matmul(a, transpose(model.param(spec.name + ".base")));
        TensorXd low = matmul(matmul(a, transpose(model.param(spec.name + ".down"))),
                              transpose(model.param(spec.name + ".up")));
        a = add(base, scalar_mul(low, spec.scale));
        break;
      }
    }
  }
  return a;
}

std::optional<RegView> regularized_weight_view(const Model& model, std::size_t layer_index) {
  const auto& spec = model.layers.at(layer_index);
  switch (spec.kind) {
    case LayerKind::conv2d:
      return RegView{spec.name + ".kernel", flatten_kernel(model.param(spec.name + ".kernel"))};
    case LayerKind::linear:
      return RegView{spec.name + ".weight", model.param(spec.name + ".weight")};
    case LayerKind::adapter:
      return RegView{spec.name + ".up", transpose(model.param(spec.name + ".up"))};
    default:
      return std::nullopt;
  }
}

namespace {

TensorXd uniform_init(Shape shape, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  TensorXd t = TensorXd::zeros(std::move(shape));
  for (Index i = 0; i < t.numel(); ++i) t.mutable_flat()[i] = dist(rng);
  return t;
}

TensorXd kaiming_uniform(Shape shape, Index fan_in, std::mt19937_64& rng) {
  return uniform_init(std::move(shape), std::sqrt(6.0 / static_cast<double>(fan_in)), rng);
}

void add_linear(Model& m, const std::string& name, Index d_in, Index d_out, bool trainable,
                std::mt19937_64& rng) {
  LayerSpec s;
  s.kind = LayerKind::linear;
  s.name = name;
  s.trainable = trainable;
  s.in = d_in;
  s.out = d_out;
  m.layers.push_back(s);
  m.params[name + ".weight"] = kaiming_uniform({d_in, d_out}, d_in, rng);
  m.params[name + ".bias"] = TensorXd::zeros({d_out});
  if (!trainable) {
    m.frozen.insert(name + ".weight");
    m.frozen.insert(name + ".bias");
  }
}

void add_conv(Model& m, const std::string& name, Index c_in, Index c_out, Index k, Index pad,
              std::mt19937_64& rng) {
  LayerSpec s;
  s.kind = LayerKind::conv2d;
  s.name = name;
  s.in = c_in;
  s.out = c_out;
  s.kh = s.kw = k;
  s.pad = pad;
  m.layers.push_back(s);
  m.params[name + ".kernel"] = kaiming_uniform({c_out, c_in, k, k}, c_in * k * k, rng);
}

void add_groupnorm(Model& m, const std::string& name, Index channels, Index groups) {
  LayerSpec s;
  s.kind = LayerKind::groupnorm;
  s.name = name;
  s.out = channels;
  s.gn_groups = groups;
  m.layers.push_back(s);
  m.params[name + ".gamma"] = TensorXd::ones({channels});
  m.params[name + ".beta"] = TensorXd::zeros({channels});
}

void add_simple(Model& m, LayerKind kind, const std::string& name, Index channels) {
  LayerSpec s;
  s.kind = kind;
  s.name = name;
  s.out = channels;
  m.layers.push_back(s);
}

void add_adapter(Model& m, const std::string& name, Index d_in, Index d_out, Index r,
                 std::mt19937_64& rng) {
  LayerSpec s;
  s.kind = LayerKind::adapter;
  s.name = name;
  s.in = d_in;
  s.out = d_out;
  s.rank = r;
  s.scale = 1.0;
  m.layers.push_back(s);
  m.params[name + ".base"] = kaiming_uniform({d_out, d_in}, d_in, rng);
  m.params[name + ".down"] =
      uniform_init({r, d_in}, 1.0 / std::sqrt(static_cast<double>(d_in)), rng);
  m.params[name + ".up"] = TensorXd::zeros({d_out, r});
  m.frozen.insert(name + ".base");
}

void check_chain(const Model& m) {
  Shape cur = m.input_shape;
  for (const auto& spec : m.layers) {
    Shape in = cur;
    const bool wants_flat = spec.kind == LayerKind::linear || spec.kind == LayerKind::adapter;
    if (wants_flat && in.size() > 1) in = {flat_dim(in)};
    cur = layer_output_shape(spec, in);
  }
  if (cur != Shape{m.n_classes})
    throw ConfigError("model '" + m.name + "' produces " + shape_str(cur) + ", expected [" +
                      std::to_string(m.n_classes) + "]");
}

}  // namespace

std::vector<std::string> model_catalog() { return {"conv-gn-small", "mlp-small", "adapter-probe"}; }

Model build_model(const std::string& catalog_name, Index n_classes, Index image_hw,
                  std::uint64_t seed) {
  if (n_classes < 2) throw ConfigError("n_classes must be >= 2");
  if (image_hw < 1) throw ConfigError("image_hw must be >= 1");
  std::mt19937_64 rng(seed);
  Model m;
  m.name = catalog_name;
  m.n_classes = n_classes;
  m.input_shape = {3, image_hw, image_hw};
  const Index flat_in = 3 * image_hw * image_hw;

  if (catalog_name == "conv-gn-small") {
    add_conv(m, "conv1", 3, 16, 3, 1, rng);
    add_groupnorm(m, "gn1", 16, 4);
    add_simple(m, LayerKind::relu, "relu1", 16);
    add_conv(m, "conv2", 16, 32, 3, 1, rng);
    add_groupnorm(m, "gn2", 32, 8);
    add_simple(m, LayerKind::relu, "relu2", 32);
    add_simple(m, LayerKind::global_avg_pool, "gap", 32);
    add_linear(m, "fc", 32, n_classes, true, rng);
  } else if (catalog_name == "mlp-small") {
    if (flat_in != 48)
      throw ConfigError("mlp-small expects 48 inputs (image_hw=4), got hw=" +
                        std::to_string(image_hw));
    add_linear(m, "fc1", 48, 64, true, rng);
    add_simple(m, LayerKind::relu, "relu1", 64);
    add_linear(m, "fc2", 64, n_classes, true, rng);
  } else if (catalog_name == "adapter-probe") {
    add_linear(m, "embed", flat_in, 32, false, rng);
    add_adapter(m, "ad", 32, 32, 4, rng);
    add_linear(m, "head", 32, n_classes, true, rng);
  } else {
    throw ConfigError("unknown model '" + catalog_name + "'");
  }
  check_chain(m);
  return m;
}

}  // namespace gor
