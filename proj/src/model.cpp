#include "metaxt/model.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace metaxt {
namespace {

std::string layer_name(std::string_view prefix, int i, std::string_view part) {
  return std::string(prefix) + "." + std::to_string(i) + "." + std::string(part);
}

Matrix uniform_matrix(Index rows, Index cols, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  Matrix m(rows, cols);
  // Fill in storage order so the draw sequence is layout-independent.
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

void add_linear(FlatParams& params, Group g, std::string_view prefix, int index, Index in,
                Index out, double scale, std::mt19937_64& rng) {
  const double bound = scale / std::sqrt(static_cast<double>(in));
  params.add_tensor(g, layer_name(prefix, index, "W"), uniform_matrix(in, out, bound, rng));
  params.add_tensor(g, layer_name(prefix, index, "b"), Matrix::Zero(1, out));
}

ad::Var linear(const BoundParams& p, Group g, std::size_t first_tensor, ad::Var x) {
  return ad::add(ad::matmul(x, p.at(g, first_tensor)), p.at(g, first_tensor + 1));
}

ad::Var activate(Activation act, ad::Var x) {
  return act == Activation::Tanh ? ad::tanh(x) : ad::relu(x);
}

Index linear_count(Index in, Index out) { return in * out + out; }

}  // namespace

Index EncoderSpec::layer_width(int layer) const {
  if (layer < 1 || layer > num_layers()) throw std::invalid_argument("layer index out of range");
  return layer == num_layers() ? h_dim : hidden_dims[static_cast<std::size_t>(layer - 1)];
}

void EncoderSpec::validate() const {
  if (input_dim <= 0) throw std::invalid_argument("encoder input_dim must be positive");
  if (h_dim <= 0) throw std::invalid_argument("encoder h_dim must be positive");
  for (Index w : hidden_dims) {
    if (w <= 0) throw std::invalid_argument("encoder hidden widths must be positive");
  }
  if (rtn_insert_layer && (*rtn_insert_layer < 1 || *rtn_insert_layer > num_layers() - 1)) {
    throw std::invalid_argument("rtn_insert_layer must lie in [1, L-1]");
  }
}

void LtnSpec::validate() const {
  if (h_dim <= 0 || z_dim <= 0 || hidden <= 0) {
    throw std::invalid_argument("LTN widths must be positive");
  }
  if (num_source_classes < 2 || num_target_classes < 2) {
    throw std::invalid_argument("LTN needs at least two source and two target classes");
  }
}

void TaskHeadSpec::validate() const {
  if (h_dim <= 0) throw std::invalid_argument("head h_dim must be positive");
  if (num_classes < 2) throw std::invalid_argument("task head needs num_classes >= 2");
}

void ModelSpec::validate() const {
  encoder.validate();
  source_head.validate();
  target_head.validate();
  ltn.validate();
  if (source_head.h_dim != encoder.h_dim || target_head.h_dim != encoder.h_dim ||
      ltn.h_dim != encoder.h_dim) {
    throw std::invalid_argument("head/LTN h_dim must match the encoder");
  }
  if (ltn.num_source_classes != source_head.num_classes ||
      ltn.num_target_classes != target_head.num_classes) {
    throw std::invalid_argument("LTN label spaces must match the task heads");
  }
}

Index ModelSpec::parameter_count(Group g) const {
  switch (g) {
    case Group::Theta: {
      Index n = 0;
      Index in = encoder.input_dim;
      for (int l = 1; l <= encoder.num_layers(); ++l) {
        n += linear_count(in, encoder.layer_width(l));
        in = encoder.layer_width(l);
      }
      return n;
    }
    case Group::V:
      return linear_count(source_head.h_dim, source_head.num_classes);
    case Group::W:
      return linear_count(target_head.h_dim, target_head.num_classes);
    case Group::Phi: {
      if (!has_rtn()) return 0;
      const Index w = encoder.layer_width(*encoder.rtn_insert_layer);
      return 3 * linear_count(w, w);
    }
    case Group::Alpha:
      return ltn.num_source_classes * ltn.z_dim + linear_count(ltn.h_dim + ltn.z_dim, ltn.hidden) +
             linear_count(ltn.hidden, ltn.hidden) + linear_count(ltn.hidden, ltn.num_target_classes);
  }
  return 0;
}

Index ModelSpec::parameter_count() const {
  Index n = 0;
  for (Group g : kAllGroups) n += parameter_count(g);
  return n;
}

ModelSpec make_model_spec(Index input_dim, Index num_source_classes, Index num_target_classes,
                          bool per_token, const ModelDims& dims) {
  ModelSpec spec;
  spec.encoder.input_dim = input_dim;
  spec.encoder.hidden_dims = dims.hidden_dims;
  spec.encoder.h_dim = dims.h_dim;
  spec.encoder.activation = dims.activation;
  if (dims.use_rtn) {
    spec.encoder.rtn_insert_layer =
        dims.rtn_layer > 0 ? dims.rtn_layer : spec.encoder.default_rtn_layer();
  }
  spec.source_head = TaskHeadSpec{dims.h_dim, num_source_classes, per_token};
  spec.target_head = TaskHeadSpec{dims.h_dim, num_target_classes, per_token};
  spec.ltn = LtnSpec{dims.h_dim, dims.z_dim, dims.ltn_hidden > 0 ? dims.ltn_hidden : dims.h_dim,
                     num_source_classes, num_target_classes};
  spec.validate();
  return spec;
}

FlatParams init_params(const ModelSpec& spec, std::mt19937_64& rng) {
  spec.validate();
  FlatParams params;
  const EncoderSpec& enc = spec.encoder;
  Index in = enc.input_dim;
  for (int l = 1; l <= enc.num_layers(); ++l) {
    add_linear(params, Group::Theta, "enc", l - 1, in, enc.layer_width(l), 1.0, rng);
    in = enc.layer_width(l);
  }
  add_linear(params, Group::V, "src", 0, spec.source_head.h_dim, spec.source_head.num_classes,
             1.0, rng);
  add_linear(params, Group::W, "tgt", 0, spec.target_head.h_dim, spec.target_head.num_classes,
             1.0, rng);
  if (spec.has_rtn()) {
    const Index w = enc.layer_width(*enc.rtn_insert_layer);
    for (int l = 0; l < 3; ++l) add_linear(params, Group::Phi, "rtn", l, w, w, 1.0, rng);
  }
  const LtnSpec& ltn = spec.ltn;
  params.add_tensor(Group::Alpha, "ltn.embed",
                    uniform_matrix(ltn.num_source_classes, ltn.z_dim, 1.0, rng));
  add_linear(params, Group::Alpha, "ltn", 0, ltn.h_dim + ltn.z_dim, ltn.hidden, 1.0, rng);
  add_linear(params, Group::Alpha, "ltn", 1, ltn.hidden, ltn.hidden, 1.0, rng);
  add_linear(params, Group::Alpha, "ltn", 2, ltn.hidden, ltn.num_target_classes, 0.1, rng);
  return params;
}

ad::Var encode(ad::Tape& tape, const BoundParams& p, const ModelSpec& spec, ad::Var x,
               bool apply_rtn) {
  const EncoderSpec& enc = spec.encoder;
  if (x.cols() != enc.input_dim) {
    throw std::invalid_argument("encode: feature width " + std::to_string(x.cols()) +
                                " != input_dim " + std::to_string(enc.input_dim));
  }
  if (apply_rtn && !spec.has_rtn()) throw std::invalid_argument("encode: no RTN configured");
  (void)tape;
  ad::Var a = x;
  for (int l = 1; l <= enc.num_layers(); ++l) {
    a = activate(enc.activation, linear(p, Group::Theta, static_cast<std::size_t>(2 * (l - 1)), a));
    if (apply_rtn && l == *enc.rtn_insert_layer) {
      ad::Var r = a;
      for (std::size_t k = 0; k < 3; ++k) {
        r = linear(p, Group::Phi, 2 * k, r);
        if (k < 2) r = activate(enc.activation, r);
      }
      a = ad::add(a, r);
    }
  }
  return a;
}

ad::Var head_logits(const BoundParams& p, ad::Var h, Head head) {
  const Group g = head == Head::Source ? Group::V : Group::W;
  const ad::Var weight = p.at(g, 0);
  if (h.cols() != weight.rows()) throw std::invalid_argument("head: representation width mismatch");
  return linear(p, g, 0, h);
}

ad::Var head_forward(const BoundParams& p, ad::Var h, Head head) {
  return ad::softmax(head_logits(p, h, head));
}

ad::Var ltn_forward(ad::Tape& tape, const BoundParams& p, const ModelSpec& spec,
                    const Matrix& representation, std::span<const int> source_labels) {
  const LtnSpec& ltn = spec.ltn;
  if (representation.cols() != ltn.h_dim) {
    throw std::invalid_argument("ltn_forward: representation width mismatch");
  }
  if (static_cast<Index>(source_labels.size()) != representation.rows()) {
    throw std::invalid_argument("ltn_forward: one source label per representation row");
  }
  std::vector<Index> rows;
  rows.reserve(source_labels.size());
  for (int y : source_labels) {
    if (y < 0 || y >= ltn.num_source_classes) {
      throw std::invalid_argument("ltn_forward: source label " + std::to_string(y) +
                                  " out of range");
    }
    rows.push_back(y);
  }
  const ad::Var h = tape.constant(representation);
  const ad::Var e = ad::index_select(p.at(Group::Alpha, 0), std::move(rows));
  const std::vector<ad::Var> parts{h, e};
  ad::Var a = ad::concat(parts);
  a = ad::tanh(linear(p, Group::Alpha, 1, a));
  a = ad::tanh(linear(p, Group::Alpha, 3, a));
  return ad::softmax(linear(p, Group::Alpha, 5, a));
}

Matrix encode(const ModelSpec& spec, const FlatParams& params, const Matrix& x, bool apply_rtn) {
  ad::Tape tape;
  const BoundParams p = bind(tape, params, GroupSet{Group::Theta, Group::Phi}, GroupSet{});
  return encode(tape, p, spec, tape.constant(x), apply_rtn).value();
}

Matrix head_forward(const ModelSpec& spec, const FlatParams& params, const Matrix& h, Head head) {
  (void)spec;
  ad::Tape tape;
  const BoundParams p = bind(tape, params, GroupSet{Group::V, Group::W}, GroupSet{});
  return head_forward(p, tape.constant(h), head).value();
}

Matrix ltn_forward(const ModelSpec& spec, const FlatParams& params, const Matrix& x,
                   std::span<const int> source_labels) {
  const Matrix h = encode(spec, params, x, false);
  ad::Tape tape;
  const BoundParams p = bind(tape, params, GroupSet{Group::Alpha}, GroupSet{});
  return ltn_forward(tape, p, spec, h, source_labels).value();
}

}  // namespace metaxt
