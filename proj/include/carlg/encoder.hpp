// Encoder backends: hidden states plus final-layer multi-head attention.
//
// Backends record their forward pass on an ad::Tape so that losses can be
// differentiated through both the hidden states and the attention
// probabilities. The value-level helpers (encode, encode_long, decode) run a
// throwaway tape and return plain matrices.

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "carlg/autodiff.hpp"
#include "carlg/parameters.hpp"
#include "carlg/sequence.hpp"

namespace carlg {

struct ForwardMode {
  bool train = false;
  double dropout = 0.0;
  std::mt19937_64* rng = nullptr;

  bool dropout_active() const { return train && dropout > 0.0 && rng != nullptr; }
};

struct EncoderVars {
  ad::Var hidden;                  // [l x d]
  std::vector<ad::Var> attention;  // num_heads x [l x l], rows are queries
};

class EncoderBackend {
 public:
  virtual ~EncoderBackend() = default;

  virtual int max_tokens() const = 0;
  virtual int dim() const = 0;
  virtual int num_heads() const = 0;

  virtual EncoderVars forward(ad::Tape& tape, const std::vector<int>& pieces, const ForwardMode& mode) const = 0;

  virtual bool has_decoder() const { return false; }
  virtual ad::Var decode(ad::Tape& tape, ad::Var encoded, const ForwardMode& mode) const {
    (void)tape;
    (void)encoded;
    (void)mode;
    throw std::logic_error("backend has no decoder");
  }
};

// ---------------------------------------------------------------------------
// Trainable toy transformer (pre-LN), optionally with a decoder stack that
// re-encodes the encoder output.

struct TransformerConfig {
  int layers = 2;
  int dim = 64;
  int heads = 4;
  int ffn = 128;
  int max_tokens = 512;
  int vocab = 0;        // base vocabulary, excluding role markers
  int role_tokens = 0;  // role-marker embeddings owned by the role module
  int decoder_layers = 0;
  bool learned_positions = false;  // otherwise fixed sinusoids
  double position_scale = 1.0;
};

namespace detail {

inline void layer_manifest(Manifest& m, const std::string& p, const TransformerConfig& c, const std::string& module) {
  const std::string g = "backbone";
  auto add = [&](const std::string& n, Eigen::Index r, Eigen::Index cols, Init init) {
    m.push_back({p + n, r, cols, module, g, init});
  };
  add("ln1.g", 1, c.dim, Init::kOnes);
  add("ln1.b", 1, c.dim, Init::kZeros);
  for (const char* w : {"wq", "wk", "wv", "wo"}) {
    add(std::string("attn.") + w, c.dim, c.dim, Init::kTruncatedNormal);
    add(std::string("attn.b") + (w + 1), 1, c.dim, Init::kZeros);
  }
  add("ln2.g", 1, c.dim, Init::kOnes);
  add("ln2.b", 1, c.dim, Init::kZeros);
  add("ffn.w1", c.dim, c.ffn, Init::kTruncatedNormal);
  add("ffn.b1", 1, c.ffn, Init::kZeros);
  add("ffn.w2", c.ffn, c.dim, Init::kTruncatedNormal);
  add("ffn.b2", 1, c.dim, Init::kZeros);
}

inline ad::Var dropout(ad::Var x, const ForwardMode& mode) {
  if (!mode.dropout_active()) return x;
  std::bernoulli_distribution keep(1.0 - mode.dropout);
  Matrix mask(x.rows(), x.cols());
  const double s = 1.0 / (1.0 - mode.dropout);
  for (Eigen::Index c = 0; c < mask.cols(); ++c) {
    for (Eigen::Index r = 0; r < mask.rows(); ++r) mask(r, c) = keep(*mode.rng) ? s : 0.0;
  }
  return ad::mul(x, x.tape()->constant(std::move(mask)));
}

}  // namespace detail

inline Manifest transformer_manifest(const TransformerConfig& c) {
  Manifest m;
  m.push_back({"encoder.tok_emb", c.vocab, c.dim, "encoder", "backbone", Init::kTruncatedNormal});
  if (c.role_tokens > 0) {
    m.push_back({"rlig.role_emb", c.role_tokens, c.dim, "rlig", "backbone", Init::kTruncatedNormal});
  }
  if (c.learned_positions) {
    m.push_back({"encoder.pos_emb", c.max_tokens, c.dim, "encoder", "backbone", Init::kTruncatedNormal});
  }
  for (int i = 0; i < c.layers; ++i) {
    detail::layer_manifest(m, "encoder.layer" + std::to_string(i) + ".", c, "encoder");
  }
  m.push_back({"encoder.ln_f.g", 1, c.dim, "encoder", "backbone", Init::kOnes});
  m.push_back({"encoder.ln_f.b", 1, c.dim, "encoder", "backbone", Init::kZeros});
  for (int i = 0; i < c.decoder_layers; ++i) {
    detail::layer_manifest(m, "decoder.layer" + std::to_string(i) + ".", c, "decoder");
  }
  if (c.decoder_layers > 0) {
    m.push_back({"decoder.ln_f.g", 1, c.dim, "decoder", "backbone", Init::kOnes});
    m.push_back({"decoder.ln_f.b", 1, c.dim, "decoder", "backbone", Init::kZeros});
  }
  return m;
}

class ToyTransformer final : public EncoderBackend {
 public:
  ToyTransformer(TransformerConfig config, ParameterStore& store) : c_(config), store_(store) {
    if (c_.dim % c_.heads != 0) throw std::invalid_argument("dim must be divisible by heads");
  }

  int max_tokens() const override { return c_.max_tokens; }
  int dim() const override { return c_.dim; }
  int num_heads() const override { return c_.heads; }
  bool has_decoder() const override { return c_.decoder_layers > 0; }
  const TransformerConfig& config() const { return c_; }

  EncoderVars forward(ad::Tape& tape, const std::vector<int>& pieces, const ForwardMode& mode) const override {
    const int l = static_cast<int>(pieces.size());
    if (l > c_.max_tokens) throw std::invalid_argument("sequence longer than max_tokens");
    ad::Var table = tape.param(p("encoder.tok_emb"));
    if (c_.role_tokens > 0) table = ad::vcat({table, tape.param(p("rlig.role_emb"))});
    for (int id : pieces) {
      if (id < 0 || id >= table.rows()) throw std::out_of_range("token id outside embedding table");
    }
    ad::Var pos;
    if (c_.learned_positions) {
      std::vector<int> positions(pieces.size());
      for (int i = 0; i < l; ++i) positions[static_cast<std::size_t>(i)] = i;
      pos = ad::gather_rows(tape.param(p("encoder.pos_emb")), positions);
    } else {
      pos = tape.constant(sinusoids(l));
    }
    ad::Var x = ad::add(ad::gather_rows(table, pieces), pos);
    x = detail::dropout(x, mode);
    std::vector<ad::Var> attention;
    for (int i = 0; i < c_.layers; ++i) {
      x = block(tape, x, "encoder.layer" + std::to_string(i) + ".", mode, &attention);
    }
    x = ad::layer_norm_rows(x, tape.param(p("encoder.ln_f.g")), tape.param(p("encoder.ln_f.b")));
    return {x, attention};
  }

  ad::Var decode(ad::Tape& tape, ad::Var encoded, const ForwardMode& mode) const override {
    if (!has_decoder()) return EncoderBackend::decode(tape, encoded, mode);
    ad::Var x = encoded;
    for (int i = 0; i < c_.decoder_layers; ++i) {
      x = block(tape, x, "decoder.layer" + std::to_string(i) + ".", mode, nullptr);
    }
    return ad::layer_norm_rows(x, tape.param(p("decoder.ln_f.g")), tape.param(p("decoder.ln_f.b")));
  }

 private:
  Parameter& p(const std::string& name) const { return store_.at(name); }

  Matrix sinusoids(int l) const {
    Matrix s(l, c_.dim);
    for (int i = 0; i < l; ++i) {
      for (int k = 0; k < c_.dim; ++k) {
        const double freq = std::pow(10000.0, -2.0 * (k / 2) / static_cast<double>(c_.dim));
        s(i, k) = c_.position_scale * (k % 2 == 0 ? std::sin(i * freq) : std::cos(i * freq));
      }
    }
    return s;
  }

  ad::Var linear(ad::Tape& tape, ad::Var x, const std::string& w, const std::string& b) const {
    return ad::add_row(ad::matmul(x, tape.param(p(w))), tape.param(p(b)));
  }

  // One pre-LN block. When `attention` is non-null it receives this layer's
  // per-head attention, replacing any previous layer's.
  ad::Var block(ad::Tape& tape, ad::Var x, const std::string& pre, const ForwardMode& mode,
                std::vector<ad::Var>* attention) const {
    const int dk = c_.dim / c_.heads;
    ad::Var h = ad::layer_norm_rows(x, tape.param(p(pre + "ln1.g")), tape.param(p(pre + "ln1.b")));
    ad::Var q = linear(tape, h, pre + "attn.wq", pre + "attn.bq");
    ad::Var k = linear(tape, h, pre + "attn.wk", pre + "attn.bk");
    ad::Var v = linear(tape, h, pre + "attn.wv", pre + "attn.bv");
    std::vector<ad::Var> heads_out;
    std::vector<ad::Var> probs;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dk));
    for (int hd = 0; hd < c_.heads; ++hd) {
      ad::Var qh = ad::slice_cols(q, hd * dk, dk);
      ad::Var kh = ad::slice_cols(k, hd * dk, dk);
      ad::Var vh = ad::slice_cols(v, hd * dk, dk);
      ad::Var a = ad::softmax_rows(ad::scale(ad::matmul_nt(qh, kh), scale));
      probs.push_back(a);
      heads_out.push_back(ad::matmul(a, vh));
    }
    if (attention != nullptr) *attention = probs;
    ad::Var attn = linear(tape, ad::hcat(heads_out), pre + "attn.wo", pre + "attn.bo");
    x = ad::add(x, detail::dropout(attn, mode));
    h = ad::layer_norm_rows(x, tape.param(p(pre + "ln2.g")), tape.param(p(pre + "ln2.b")));
    ad::Var f = linear(tape, ad::gelu(linear(tape, h, pre + "ffn.w1", pre + "ffn.b1")), pre + "ffn.w2", pre + "ffn.b2");
    return ad::add(x, detail::dropout(f, mode));
  }

  TransformerConfig c_;
  ParameterStore& store_;
};

// ---------------------------------------------------------------------------
// Frozen backends.

// Wraps any model that can report hidden states and final-layer attentions
// for a token sequence (for example a pretrained checkpoint served elsewhere).
// Its outputs enter the tape as constants.
class ExternalBackend final : public EncoderBackend {
 public:
  struct Output {
    Matrix hidden;
    std::vector<Matrix> attention;
  };
  using EncodeFn = std::function<Output(const std::vector<int>&)>;
  using DecodeFn = std::function<Matrix(const Matrix&)>;

  ExternalBackend(int max_tokens, int dim, int heads, EncodeFn encode, DecodeFn decode = nullptr)
      : max_tokens_(max_tokens), dim_(dim), heads_(heads), encode_(std::move(encode)), decode_(std::move(decode)) {}

  int max_tokens() const override { return max_tokens_; }
  int dim() const override { return dim_; }
  int num_heads() const override { return heads_; }
  bool has_decoder() const override { return static_cast<bool>(decode_); }

  EncoderVars forward(ad::Tape& tape, const std::vector<int>& pieces, const ForwardMode&) const override {
    Output out = encode_(pieces);
    EncoderVars vars{tape.constant(std::move(out.hidden)), {}};
    for (Matrix& a : out.attention) vars.attention.push_back(tape.constant(std::move(a)));
    return vars;
  }

  ad::Var decode(ad::Tape& tape, ad::Var encoded, const ForwardMode& mode) const override {
    if (!decode_) return EncoderBackend::decode(tape, encoded, mode);
    return tape.constant(decode_(encoded.value()));
  }

 private:
  int max_tokens_, dim_, heads_;
  EncodeFn encode_;
  DecodeFn decode_;
};

// Every token attends only to itself; hidden state i is a fixed function of
// the token id and position. Decoding is the identity.
class IdentityAttentionBackend final : public EncoderBackend {
 public:
  IdentityAttentionBackend(int dim, int heads, int max_tokens = 4096) : dim_(dim), heads_(heads), max_(max_tokens) {}

  int max_tokens() const override { return max_; }
  int dim() const override { return dim_; }
  int num_heads() const override { return heads_; }
  bool has_decoder() const override { return true; }

  EncoderVars forward(ad::Tape& tape, const std::vector<int>& pieces, const ForwardMode&) const override {
    const Eigen::Index l = static_cast<Eigen::Index>(pieces.size());
    Matrix h(l, dim_);
    for (Eigen::Index i = 0; i < l; ++i) {
      for (int c = 0; c < dim_; ++c) h(i, c) = std::sin(0.37 * pieces[static_cast<std::size_t>(i)] + 0.11 * c + 0.05 * i);
    }
    EncoderVars vars{tape.constant(std::move(h)), {}};
    for (int k = 0; k < heads_; ++k) vars.attention.push_back(tape.constant(Matrix::Identity(l, l)));
    return vars;
  }

  ad::Var decode(ad::Tape&, ad::Var encoded, const ForwardMode&) const override { return encoded; }

 private:
  int dim_, heads_, max_;
};

// Emits the same hidden vector for every token and uniform attention.
class ConstantBackend final : public EncoderBackend {
 public:
  ConstantBackend(RowVector state, int heads, int max_tokens = 4096)
      : state_(std::move(state)), heads_(heads), max_(max_tokens) {}

  int max_tokens() const override { return max_; }
  int dim() const override { return static_cast<int>(state_.size()); }
  int num_heads() const override { return heads_; }

  EncoderVars forward(ad::Tape& tape, const std::vector<int>& pieces, const ForwardMode&) const override {
    const Eigen::Index l = static_cast<Eigen::Index>(pieces.size());
    Matrix h = state_.replicate(l, 1);
    EncoderVars vars{tape.constant(std::move(h)), {}};
    for (int k = 0; k < heads_; ++k) {
      vars.attention.push_back(tape.constant(Matrix::Constant(l, l, 1.0 / static_cast<double>(l))));
    }
    return vars;
  }

 private:
  RowVector state_;
  int heads_, max_;
};

// ---------------------------------------------------------------------------
// Encoding of marked sequences.

struct EncodingResult {
  Matrix hidden;                 // H   [l x d]
  std::vector<Matrix> attention; // A   heads x [l x l]
  Matrix context;                // H^C [l_w x d]
  Matrix roles;                  // H^R [l_r x d], role tokens then "none"
  RowVector event;               // H^e, empty when the sequence has no event marker

  int length() const { return static_cast<int>(hidden.rows()); }
};

namespace detail {

inline void check_backend_shapes(const EncoderVars& v, const EncoderBackend& b, Eigen::Index l) {
  bool ok = v.hidden.rows() == l && v.hidden.cols() == b.dim() &&
            static_cast<int>(v.attention.size()) == b.num_heads();
  for (const ad::Var& a : v.attention) ok = ok && a.rows() == l && a.cols() == l;
  if (!ok) throw std::logic_error("backend dimension mismatch");
}

inline Matrix selection(Eigen::Index rows, const std::vector<int>& global_of_local) {
  Matrix s = Matrix::Zero(rows, static_cast<Eigen::Index>(global_of_local.size()));
  for (std::size_t j = 0; j < global_of_local.size(); ++j) s(global_of_local[j], static_cast<Eigen::Index>(j)) = 1.0;
  return s;
}

}  // namespace detail

inline EncoderVars encode_vars(ad::Tape& tape, const MarkedSequence& seq, const EncoderBackend& backend,
                               const ForwardMode& mode = {}) {
  if (seq.length() > backend.max_tokens()) {
    throw std::invalid_argument("sequence of " + std::to_string(seq.length()) + " pieces exceeds max_tokens " +
                                std::to_string(backend.max_tokens()) + "; use encode_long");
  }
  EncoderVars v = backend.forward(tape, seq.pieces, mode);
  detail::check_backend_shapes(v, backend, seq.length());
  return v;
}

// Context start offsets of the windows covering `n_ctx` context pieces.
inline std::vector<int> window_starts(int n_ctx, int capacity, int stride) {
  std::vector<int> starts;
  for (int s = 0;; s += stride) {
    if (s + capacity >= n_ctx) {
      const int last = std::max(0, n_ctx - capacity);
      if (starts.empty() || starts.back() != last) starts.push_back(last);
      break;
    }
    starts.push_back(s);
  }
  return starts;
}

// Overlapping-window encoding. The blocks before and after the context are
// replicated into every window; the context is cut into chunks that advance
// by `stride`. Each token's hidden state is the mean over the windows that
// contain it; attention rows are re-embedded into global columns, averaged
// over covering windows and renormalized to sum to one.
inline EncoderVars encode_long_vars(ad::Tape& tape, const MarkedSequence& seq, const EncoderBackend& backend,
                                    int window, int stride, const ForwardMode& mode = {}) {
  if (stride <= 0) throw std::invalid_argument("stride must be positive");
  if (window > backend.max_tokens()) throw std::invalid_argument("window larger than backend max_tokens");
  if (stride > window) throw std::invalid_argument("stride larger than window");
  if (seq.length() <= window) return encode_vars(tape, seq, backend, mode);

  const int l = seq.length();
  const int n_prefix = seq.context.begin;
  const int n_suffix = l - seq.context.end;
  const int n_ctx = seq.context.size();
  const int capacity = window - n_prefix - n_suffix;
  if (capacity < 1) throw std::invalid_argument("window smaller than the non-context blocks");
  if (stride > capacity) throw std::invalid_argument("stride exceeds the context capacity of a window");

  std::vector<ad::Var> hidden_parts;
  std::vector<std::vector<ad::Var>> attn_parts(static_cast<std::size_t>(backend.num_heads()));
  Eigen::VectorXd counts = Eigen::VectorXd::Zero(l);
  for (int start : window_starts(n_ctx, capacity, stride)) {
    std::vector<int> global;
    for (int i = 0; i < n_prefix; ++i) global.push_back(i);
    for (int i = 0; i < std::min(capacity, n_ctx - start); ++i) global.push_back(seq.context.begin + start + i);
    for (int i = seq.context.end; i < l; ++i) global.push_back(i);
    std::vector<int> pieces;
    for (int g : global) {
      pieces.push_back(seq.pieces[static_cast<std::size_t>(g)]);
      counts(g) += 1.0;
    }
    EncoderVars w = backend.forward(tape, pieces, mode);
    detail::check_backend_shapes(w, backend, static_cast<Eigen::Index>(pieces.size()));
    const Matrix sel = detail::selection(l, global);  // [l x m]
    hidden_parts.push_back(ad::lmul(sel, w.hidden));
    for (std::size_t h = 0; h < w.attention.size(); ++h) {
      // sel * A * sel^T
      ad::Var rows = ad::lmul(sel, w.attention[h]);
      attn_parts[h].push_back(ad::transpose(ad::lmul(sel, ad::transpose(rows))));
    }
  }
  const Matrix inv_counts = counts.cwiseInverse().asDiagonal();
  EncoderVars out;
  out.hidden = ad::lmul(inv_counts, ad::sum(hidden_parts));
  for (auto& parts : attn_parts) {
    // Dividing by the window count and renormalizing reduce to one row
    // normalization; the averaged rows already sum to one up to rounding.
    out.attention.push_back(ad::normalize_rows(ad::lmul(inv_counts, ad::sum(parts))));
  }
  return out;
}

// Encodes with windows only when the sequence does not fit the backend.
inline EncoderVars encode_auto(ad::Tape& tape, const MarkedSequence& seq, const EncoderBackend& backend, int window,
                               int stride, const ForwardMode& mode = {}) {
  if (seq.length() <= backend.max_tokens()) return encode_vars(tape, seq, backend, mode);
  return encode_long_vars(tape, seq, backend, std::min(window, backend.max_tokens()), stride, mode);
}

inline EncodingResult to_result(const EncoderVars& v, const MarkedSequence& seq) {
  EncodingResult r;
  r.hidden = v.hidden.value();
  for (const ad::Var& a : v.attention) r.attention.push_back(a.value());
  const std::vector<int> ctx = seq.context_positions();
  r.context.resize(static_cast<Eigen::Index>(ctx.size()), r.hidden.cols());
  for (std::size_t i = 0; i < ctx.size(); ++i) r.context.row(static_cast<Eigen::Index>(i)) = r.hidden.row(ctx[i]);
  const std::vector<int> rp = seq.role_positions();
  r.roles.resize(static_cast<Eigen::Index>(rp.size()), r.hidden.cols());
  for (std::size_t i = 0; i < rp.size(); ++i) r.roles.row(static_cast<Eigen::Index>(i)) = r.hidden.row(rp[i]);
  if (seq.event_marker_index) r.event = r.hidden.row(*seq.event_marker_index);
  return r;
}

inline EncodingResult encode(const MarkedSequence& seq, const EncoderBackend& backend) {
  ad::Tape tape;
  return to_result(encode_vars(tape, seq, backend), seq);
}

inline EncodingResult encode_long(const MarkedSequence& seq, const EncoderBackend& backend, int window, int stride) {
  ad::Tape tape;
  return to_result(encode_long_vars(tape, seq, backend, window, stride), seq);
}

// Decoder pass over an encoding: one vector per piece. Slot k's vector is row
// seq.slots[k].piece.
inline Matrix decode(const EncodingResult& encoded, const MarkedSequence& seq, const EncoderBackend& backend) {
  if (!backend.has_decoder()) throw std::logic_error("backend has no decoder");
  if (encoded.length() != seq.length()) throw std::invalid_argument("encoding does not match sequence");
  ad::Tape tape;
  return backend.decode(tape, tape.constant(encoded.hidden), ForwardMode{}).value();
}

}  // namespace carlg
