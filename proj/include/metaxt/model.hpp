#pragma once

#include <optional>
#include <random>
#include <span>
#include <vector>

#include "metaxt/autodiff.hpp"
#include "metaxt/params.hpp"

namespace metaxt {

enum class Activation { Tanh, Relu };

struct EncoderSpec {
  Index input_dim = 0;
  std::vector<Index> hidden_dims{64, 32};
  Index h_dim = 32;
  Activation activation = Activation::Tanh;
  /// Layer (1-based) whose output passes through the RTN on the transfer path.
  std::optional<int> rtn_insert_layer;

  /// Hidden layers plus the projection to h_dim.
  [[nodiscard]] int num_layers() const { return static_cast<int>(hidden_dims.size()) + 1; }
  /// Output width of layer `layer` (1-based).
  [[nodiscard]] Index layer_width(int layer) const;
  /// ceil(L / 2).
  [[nodiscard]] int default_rtn_layer() const { return (num_layers() + 1) / 2; }
  void validate() const;
};

struct LtnSpec {
  Index h_dim = 32;
  Index z_dim = 8;
  Index hidden = 32;
  Index num_source_classes = 0;
  Index num_target_classes = 0;
  void validate() const;
};

struct TaskHeadSpec {
  Index h_dim = 32;
  Index num_classes = 0;
  bool applies_per_token = false;
  void validate() const;
};

enum class Head { Source, Target };

/// Encoder f_theta, heads v and w, the LTN g_alpha and the optional RTN phi.
struct ModelSpec {
  EncoderSpec encoder;
  TaskHeadSpec source_head;
  TaskHeadSpec target_head;
  LtnSpec ltn;

  [[nodiscard]] bool has_rtn() const { return encoder.rtn_insert_layer.has_value(); }
  void validate() const;

  /// Closed-form parameter count per group.
  [[nodiscard]] Index parameter_count(Group g) const;
  [[nodiscard]] Index parameter_count() const;
};

struct ModelDims {
  std::vector<Index> hidden_dims{64, 32};
  Index h_dim = 32;
  Index z_dim = 8;
  /// 0 means "same as h_dim".
  Index ltn_hidden = 0;
  Activation activation = Activation::Tanh;
  bool use_rtn = false;
  /// 0 means ceil(L / 2).
  int rtn_layer = 0;
};

ModelSpec make_model_spec(Index input_dim, Index num_source_classes, Index num_target_classes,
                          bool per_token, const ModelDims& dims = {});

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases; LTN output
/// layer at one tenth of that scale.
FlatParams init_params(const ModelSpec& spec, std::mt19937_64& rng);

// Tape-level forward passes. `x` has one row per prediction unit (a single
// row for sequence classification, one per token for tagging).

ad::Var encode(ad::Tape& tape, const BoundParams& p, const ModelSpec& spec, ad::Var x,
               bool apply_rtn);
ad::Var head_logits(const BoundParams& p, ad::Var h, Head head);
ad::Var head_forward(const BoundParams& p, ad::Var h, Head head);
/// Soft target label from a (treated-as-constant) representation and hard source labels.
ad::Var ltn_forward(ad::Tape& tape, const BoundParams& p, const ModelSpec& spec,
                    const Matrix& representation, std::span<const int> source_labels);

// Value-level conveniences.

Matrix encode(const ModelSpec& spec, const FlatParams& params, const Matrix& x, bool apply_rtn);
Matrix head_forward(const ModelSpec& spec, const FlatParams& params, const Matrix& h, Head head);
Matrix ltn_forward(const ModelSpec& spec, const FlatParams& params, const Matrix& x,
                   std::span<const int> source_labels);

}  // namespace metaxt
