#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "gor/nn.hpp"
#include "gor/tensor.hpp"

namespace gor {

enum class LayerKind { linear, conv2d, groupnorm, relu, global_avg_pool, adapter };

const char* to_string(LayerKind k);

/// One layer of a sequential model. Only the fields relevant to `kind` are
/// meaningful. `trainable = false` freezes every parameter the layer owns.
struct LayerSpec {
  LayerKind kind = LayerKind::linear;
  std::string name;
  bool trainable = true;
  Index in = 0;        // linear/adapter input dim, conv input channels
  Index out = 0;       // linear/adapter output dim, conv output channels, gn/relu/pool channels
  Index kh = 0, kw = 0;
  Index stride = 1;
  Index pad = 0;
  Index gn_groups = 0;
  Index rank = 0;      // adapter bottleneck
  double scale = 1.0;  // adapter residual scale
};

/// Sequential model: ordered layers plus a flat parameter store keyed by
/// "<layer>.<param>". Parameters in `frozen` are never watched by a tape and
/// never updated. The expected per-sample input shape is fixed at build time
/// and the whole chain is shape-checked then.
struct Model {
  std::string name;
  std::vector<LayerSpec> layers;
  std::map<std::string, TensorXd> params;
  std::set<std::string> frozen;
  Shape input_shape;  // per-sample, e.g. {3,8,8} or {48}
  Index n_classes = 0;

  TensorXd param(const std::string& key) const;
  bool is_frozen(const std::string& key) const { return frozen.count(key) > 0; }
  std::vector<std::string> trainable_keys() const;
  Index trainable_param_count() const;
};

/// Per-sample output shape of one layer, throwing on any mismatch; build-time
/// validation walks the whole chain with this.
Shape layer_output_shape(const LayerSpec& spec, const Shape& in);

/// Forward a batch through the model. x is [B, ...input_shape]; rank-4
/// activations are flattened automatically in front of linear/adapter layers.
/// Runs on whatever tape the watched parameters are bound to (none = plain
/// evaluation).
TensorXd forward(const Model& model, const TensorXd& x);

/// The flattened weight matrix the regularizer acts on, as a tape-connected
/// view: conv kernels flatten to [c*kh*kw, C_out], linear weights pass
/// through as [d_in, d_out], adapters expose the up factor as [r, d_out].
/// Layers with nothing to regularize return nullopt.
struct RegView {
  std::string key;  // "<layer>.<param>" of the underlying parameter
  TensorXd view;
};
std::optional<RegView> regularized_weight_view(const Model& model, std::size_t layer_index);

/// Reference models:
///   conv-gn-small : conv(3->16,3x3) GN(4) relu conv(16->32,3x3) GN(8) relu GAP linear(32->n)
///   mlp-small     : linear(48->64) relu linear(64->n)
///   adapter-probe : frozen linear(3*hw*hw->32) embed, frozen 32->32 base with
///                   rank-4 residual adapter, linear(32->n) head
/// `image_hw` is the square input side; mlp-small requires hw=4 (3*4*4=48).
Model build_model(const std::string& catalog_name, Index n_classes, Index image_hw,
                  std::uint64_t seed);

std::vector<std::string> model_catalog();

}  // namespace gor
