// Model assembly, training loop, evaluation, checkpoints and visual exports.

#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <numeric>
#include <random>
#include <sstream>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "carlg/cca.hpp"
#include "carlg/config.hpp"
#include "carlg/dataset.hpp"
#include "carlg/encoder.hpp"
#include "carlg/errors.hpp"
#include "carlg/evaluation.hpp"
#include "carlg/parameters.hpp"
#include "carlg/prompt_model.hpp"
#include "carlg/rlig.hpp"
#include "carlg/sequence.hpp"
#include "carlg/span_model.hpp"
#include "carlg/tokenizer.hpp"

namespace carlg {

inline TransformerConfig backend_config(const RunConfig& c, const Tokenizer& tok) {
  TransformerConfig t;
  t.layers = c.backend.layers;
  t.dim = c.backend.dim;
  t.heads = c.backend.heads;
  t.ffn = c.backend.ffn;
  t.max_tokens = c.backend.max_tokens;
  t.vocab = tok.base_vocab_size();
  t.role_tokens = c.disable_rlig ? 0 : tok.vocab_size() - tok.base_vocab_size();
  t.decoder_layers = c.variant == Variant::kPrompt ? c.backend.decoder_layers : 0;
  t.learned_positions = c.backend.learned_positions;
  t.position_scale = c.backend.position_scale;
  return t;
}

inline Manifest model_manifest(const RunConfig& c, const TransformerConfig& t, int n_roles) {
  Manifest m = transformer_manifest(t);
  const Manifest head = c.variant == Variant::kSpan ? span_head_manifest(c.span_config(), t.dim, n_roles)
                                                     : prompt_head_manifest(c.prompt_config(), t.dim);
  m.insert(m.end(), head.begin(), head.end());
  return m;
}

// Span extractor on a RoBERTa-large sized encoder with a 65-role label set.
inline Manifest full_scale_manifest(bool use_cca = true, bool use_rlig = true) {
  RunConfig c = span_defaults();
  c.disable_cca = !use_cca;
  c.disable_rlig = !use_rlig;
  TransformerConfig t;
  t.layers = 24;
  t.dim = 1024;
  t.heads = 16;
  t.ffn = 4096;
  t.max_tokens = 1024;
  t.vocab = 50265;
  t.role_tokens = use_rlig ? 65 : 0;
  t.learned_positions = true;
  return model_manifest(c, t, 65);
}

// ---------------------------------------------------------------------------

struct Model {
  RunConfig config;
  LabelSpace labels;
  std::unique_ptr<SubwordTokenizer> tokenizer;
  TemplateRegistry templates;
  ParameterStore store;
  std::unique_ptr<ToyTransformer> backend;
  std::unique_ptr<Extractor> extractor;
  std::mt19937_64 rng;
  long step = 0;
  nlohmann::json history = nlohmann::json::array();

  Model() = default;
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  const SpanExtractor* span() const { return dynamic_cast<const SpanExtractor*>(extractor.get()); }
  const PromptExtractor* prompt() const { return dynamic_cast<const PromptExtractor*>(extractor.get()); }
};

namespace detail {

inline void finish_model(Model& m) {
  const TransformerConfig t = backend_config(m.config, *m.tokenizer);
  m.backend = std::make_unique<ToyTransformer>(t, m.store);
  if (m.config.variant == Variant::kSpan) {
    m.extractor = std::make_unique<SpanExtractor>(m.config.span_config(), m.labels, *m.tokenizer, *m.backend, m.store);
  } else {
    m.extractor = std::make_unique<PromptExtractor>(m.config.prompt_config(), m.labels, m.templates, *m.tokenizer,
                                                    *m.backend, m.store);
  }
}

}  // namespace detail

// Fits the label space and tokenizer on `train` and initializes parameters.
// Event types without a template receive the fallback template.
inline std::unique_ptr<Model> make_model(const RunConfig& config, const std::vector<EventInstance>& train,
                                         const TemplateRegistry* templates = nullptr) {
  config.validate();
  auto m = std::make_unique<Model>();
  m->config = config;
  m->labels = LabelSpace::from(train);
  if (templates != nullptr) m->templates = *templates;
  for (const auto& [event_type, roles] : m->labels.inventories) {
    if (m->templates.count(event_type) == 0) m->templates.emplace(event_type, fallback_template(event_type, roles));
  }
  m->tokenizer = std::make_unique<SubwordTokenizer>(vocabulary_words(train, &m->templates), m->labels.roles,
                                                    config.piece_chars);
  m->rng.seed(config.seed);
  const TransformerConfig t = backend_config(config, *m->tokenizer);
  m->store.allocate(model_manifest(config, t, static_cast<int>(m->labels.roles.size())), m->rng);
  detail::finish_model(*m);
  return m;
}

// ---------------------------------------------------------------------------
// Optimization.

inline double learning_rate(double base, long step, long total, double warmup_ratio) {
  const long warm = static_cast<long>(std::floor(warmup_ratio * static_cast<double>(total)));
  if (step < warm) return base * static_cast<double>(step + 1) / static_cast<double>(warm);
  if (total <= warm) return base;
  return base * std::max(0.0, static_cast<double>(total - step) / static_cast<double>(total - warm));
}

inline double grad_norm(const ParameterStore& store) {
  double s = 0.0;
  for (const Parameter& p : store.all()) s += p.grad.squaredNorm();
  return std::sqrt(s);
}

inline void adamw_step(ParameterStore& store, const OptimizerConfig& o, long step, double backbone_lr, double head_lr) {
  const double t = static_cast<double>(step + 1);
  const double c1 = 1.0 - std::pow(o.beta1, t);
  const double c2 = 1.0 - std::pow(o.beta2, t);
  for (Parameter& p : store.all()) {
    if (p.adam_m.size() == 0) {
      p.adam_m = Matrix::Zero(p.value.rows(), p.value.cols());
      p.adam_v = Matrix::Zero(p.value.rows(), p.value.cols());
    }
    const double lr = p.group == "backbone" ? backbone_lr : head_lr;
    p.adam_m = o.beta1 * p.adam_m + (1.0 - o.beta1) * p.grad;
    p.adam_v = o.beta2 * p.adam_v + (1.0 - o.beta2) * p.grad.cwiseAbs2();
    const Matrix update = (p.adam_m / c1).array() / ((p.adam_v / c2).array().sqrt() + o.eps);
    p.value -= lr * (update + o.weight_decay * p.value);
  }
}

// Shuffles, sorts pools of 50 batches by input length, cuts batches and
// shuffles the batch order.
inline std::vector<std::vector<std::size_t>> length_bucketed_batches(const std::vector<int>& lengths, int batch,
                                                                     std::mt19937_64& rng) {
  std::vector<std::size_t> idx(lengths.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::shuffle(idx.begin(), idx.end(), rng);
  const std::size_t pool = static_cast<std::size_t>(batch) * 50;
  for (std::size_t at = 0; at < idx.size(); at += pool) {
    auto end = idx.begin() + static_cast<std::ptrdiff_t>(std::min(idx.size(), at + pool));
    std::stable_sort(idx.begin() + static_cast<std::ptrdiff_t>(at), end,
                     [&](std::size_t a, std::size_t b) { return lengths[a] < lengths[b]; });
  }
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t at = 0; at < idx.size(); at += static_cast<std::size_t>(batch)) {
    batches.emplace_back(idx.begin() + static_cast<std::ptrdiff_t>(at),
                         idx.begin() + static_cast<std::ptrdiff_t>(std::min(idx.size(), at + static_cast<std::size_t>(batch))));
  }
  std::shuffle(batches.begin(), batches.end(), rng);
  return batches;
}

struct TrainOptions {
  // Called after each epoch with the history record just appended.
  std::function<void(const nlohmann::json&)> on_epoch;
};

inline long total_steps(const RunConfig& c, std::size_t n_train) {
  const long per_epoch = static_cast<long>((n_train + static_cast<std::size_t>(c.optimizer.batch_size) - 1) /
                                           static_cast<std::size_t>(c.optimizer.batch_size));
  return c.optimizer.steps > 0 ? c.optimizer.steps : per_epoch * c.optimizer.epochs;
}

inline void train(Model& m, const std::vector<EventInstance>& data, const TrainOptions& opts = {}) {
  if (data.empty()) return;
  const OptimizerConfig& o = m.config.optimizer;
  const long total = total_steps(m.config, data.size());
  std::vector<int> lengths;
  for (const EventInstance& inst : data) lengths.push_back(m.extractor->input_length(inst));
  const ForwardMode mode{true, m.config.backend.dropout, &m.rng};
  int epoch = 0;
  while (m.step < total) {
    double epoch_loss = 0.0;
    long epoch_steps = 0;
    for (const auto& batch : length_bucketed_batches(lengths, o.batch_size, m.rng)) {
      if (m.step >= total) break;
      m.store.zero_grad();
      double batch_loss = 0.0;
      for (std::size_t i : batch) {
        ad::Tape tape;
        ad::Var loss = m.extractor->loss(tape, data[i], mode);
        const double v = loss.value()(0, 0);
        if (!std::isfinite(v)) {
          throw DivergenceError("non-finite loss at step " + std::to_string(m.step) + " on instance '" +
                                data[i].doc_id + "'");
        }
        tape.backward(loss, 1.0 / static_cast<double>(batch.size()));
        batch_loss += v;
      }
      const double norm = grad_norm(m.store);
      if (!std::isfinite(norm)) throw DivergenceError("non-finite gradient at step " + std::to_string(m.step));
      if (o.max_grad_norm > 0.0 && norm > o.max_grad_norm) {
        for (Parameter& p : m.store.all()) p.grad *= o.max_grad_norm / norm;
      }
      adamw_step(m.store, o, m.step, learning_rate(o.backbone_lr, m.step, total, o.warmup_ratio),
                 learning_rate(o.head_lr, m.step, total, o.warmup_ratio));
      ++m.step;
      epoch_loss += batch_loss / static_cast<double>(batch.size());
      ++epoch_steps;
    }
    ++epoch;
    nlohmann::json rec = {{"epoch", epoch},
                          {"step", m.step},
                          {"mean_loss", epoch_steps > 0 ? epoch_loss / static_cast<double>(epoch_steps) : 0.0}};
    m.history.push_back(rec);
    if (opts.on_epoch) opts.on_epoch(rec);
  }
}

// ---------------------------------------------------------------------------
// Evaluation.

struct EvalResult {
  MetricsReport metrics;
  ErrorReport errors;
  std::vector<EventPrediction> predictions;

  nlohmann::json to_json() const {
    return {{"metrics", metrics.to_json()}, {"errors", errors.to_json()}};
  }
};

inline std::vector<EventPrediction> predict_all(const Model& m, const std::vector<EventInstance>& data) {
  std::vector<EventPrediction> out;
  for (const EventInstance& inst : data) out.push_back(m.extractor->predict(inst));
  return out;
}

inline EvalResult evaluate(const Model& m, const std::vector<EventInstance>& data) {
  EvalResult r;
  r.predictions = predict_all(m, data);
  std::vector<std::vector<Prediction>> preds;
  std::vector<std::vector<Argument>> golds;
  for (std::size_t i = 0; i < data.size(); ++i) {
    preds.push_back(r.predictions[i].predictions);
    golds.push_back(data[i].args);
  }
  r.metrics = compute_metrics(preds, golds);
  r.errors = error_report(preds, golds);
  return r;
}

// ---------------------------------------------------------------------------
// Checkpoints.

inline nlohmann::json checkpoint_json(const Model& m) {
  nlohmann::json params = nlohmann::json::array();
  for (const Parameter& p : m.store.all()) {
    params.push_back({{"name", p.name},
                      {"module", p.module},
                      {"rows", p.value.rows()},
                      {"cols", p.value.cols()},
                      {"data", std::vector<double>(p.value.data(), p.value.data() + p.value.size())}});
  }
  nlohmann::json templates = nlohmann::json::object();
  for (const auto& [event_type, t] : m.templates) templates[event_type] = t.text;
  std::ostringstream rng;
  rng << m.rng;
  return {{"format", "carlg-checkpoint/1"},
          {"config", to_json(m.config)},
          {"tokenizer", m.tokenizer->to_json()},
          {"inventories", m.labels.inventories},
          {"templates", templates},
          {"parameters", params},
          {"rng", rng.str()},
          {"step", m.step},
          {"history", m.history}};
}

inline void save_checkpoint(const Model& m, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write checkpoint " + path);
  out << checkpoint_json(m).dump() << '\n';
}

inline std::unique_ptr<Model> model_from_checkpoint(const nlohmann::json& j) {
  if (j.value("format", "") != "carlg-checkpoint/1") throw DataError("not a checkpoint file");
  const Variant v = parse_variant(j.at("config").at("variant").get<std::string>());
  auto m = std::make_unique<Model>();
  m->config = config_from_json(j.at("config"), defaults_for(v));
  m->labels.inventories = j.at("inventories").get<std::map<std::string, std::vector<std::string>>>();
  std::set<std::string> roles;
  for (const auto& [_, inv] : m->labels.inventories) roles.insert(inv.begin(), inv.end());
  m->labels.roles.assign(roles.begin(), roles.end());
  for (const auto& [event_type, text] : j.at("templates").items()) {
    m->templates.emplace(event_type, parse_template(event_type, text.get<std::string>()));
  }
  m->tokenizer = std::make_unique<SubwordTokenizer>(SubwordTokenizer::from_json(j.at("tokenizer")));
  for (const auto& p : j.at("parameters")) {
    Parameter& q = m->store.add({p.at("name").get<std::string>(), p.at("rows").get<Eigen::Index>(),
                                 p.at("cols").get<Eigen::Index>(), p.at("module").get<std::string>(), "", Init::kZeros},
                                m->rng);
    const std::vector<double> data = p.at("data").get<std::vector<double>>();
    if (static_cast<Eigen::Index>(data.size()) != q.value.size()) throw DataError("parameter size mismatch: " + q.name);
    std::copy(data.begin(), data.end(), q.value.data());
  }
  // Learning-rate groups come from the manifest, which also checks the shapes.
  const TransformerConfig t = backend_config(m->config, *m->tokenizer);
  const Manifest manifest = model_manifest(m->config, t, static_cast<int>(m->labels.roles.size()));
  if (manifest.size() != m->store.all().size()) throw DataError("checkpoint parameters do not match the model");
  for (const ParamSpec& spec : manifest) {
    Parameter* p = m->store.find(spec.name);
    if (p == nullptr || p->value.rows() != spec.rows || p->value.cols() != spec.cols) {
      throw DataError("checkpoint parameter missing or misshapen: " + spec.name);
    }
    p->group = spec.group;
  }
  std::istringstream rng(j.at("rng").get<std::string>());
  rng >> m->rng;
  m->step = j.at("step").get<long>();
  m->history = j.at("history");
  detail::finish_model(*m);
  return m;
}

inline std::unique_ptr<Model> load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open checkpoint " + path);
  try {
    return model_from_checkpoint(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw DataError("checkpoint " + path + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Visual exports.

inline Matrix cosine_similarity(const Matrix& rows) {
  Matrix n = rows;
  for (Eigen::Index r = 0; r < n.rows(); ++r) {
    const double norm = n.row(r).norm();
    if (norm > 0.0) n.row(r) /= norm;
  }
  Matrix s = n * n.transpose();
  for (Eigen::Index r = 0; r < s.rows(); ++r) {
    if (rows.row(r).norm() > 0.0) s(r, r) = 1.0;
  }
  return s;
}

namespace detail {

inline std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) out += c == '"' ? std::string("\"\"") : std::string(1, c);
  return out + "\"";
}

inline std::vector<double> row_vector(const Matrix& m, Eigen::Index r) {
  std::vector<double> out(static_cast<std::size_t>(m.cols()));
  for (Eigen::Index c = 0; c < m.cols(); ++c) out[static_cast<std::size_t>(c)] = m(r, c);
  return out;
}

struct Probe {
  std::string label;  // role name or span description
  PieceRange rows;
  std::string file_tag;
};

}  // namespace detail

// Writes, for one instance:
//   cca_<k>_<role>_<start>_<end>.csv  clue weights over the context pieces
//   role_similarity.csv               cosine similarity of role features
//   embeddings.json                   role features and argument representations
// Returns the written paths.
inline std::vector<std::string> export_visuals(const Model& m, const EventInstance& inst, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  std::vector<std::string> written;
  ad::Tape tape;
  MarkedSequence seq;
  EncoderVars enc;
  Matrix fused;
  std::vector<detail::Probe> probes;
  std::vector<std::pair<std::string, std::string>> fused_labels;  // (role, description) per fused row
  std::vector<Eigen::Index> fused_rows;
  if (const SpanExtractor* sx = m.span()) {
    seq = sx->build(inst);
    SpanForward f = sx->forward(tape, inst, seq, sx->encode(tape, seq, ForwardMode{}));
    enc = f.enc;
    fused = f.fused.value();
    std::vector<Prediction> items;
    for (const Argument& a : inst.args) items.push_back({a.role, a.start, a.end, 1.0});
    for (const Prediction& p : sx->predict(inst).predictions) items.push_back(p);
    for (const Prediction& p : dedupe(items)) {
      probes.push_back({p.role, seq.span_pieces(p.span()), p.role + "_" + std::to_string(p.start) + "_" + std::to_string(p.end)});
      auto it = std::find(f.spans.begin(), f.spans.end(), p.span());
      if (it != f.spans.end()) {
        fused_rows.push_back(it - f.spans.begin());
        fused_labels.push_back({p.role, std::to_string(p.start) + "-" + std::to_string(p.end)});
      }
    }
  } else {
    const PromptExtractor* px = m.prompt();
    const CroppedInstance c = crop_to_window(inst, px->config().context_window);
    PromptForward f = px->forward(tape, c.inst);
    seq = f.seq;
    enc = f.enc;
    fused = f.fused.value();
    for (std::size_t k = 0; k < seq.slots.size(); ++k) {
      probes.push_back({seq.slots[k].role, seq.slots[k].range, "slot" + std::to_string(k) + "_" + seq.slots[k].role});
      fused_rows.push_back(static_cast<Eigen::Index>(k));
      fused_labels.push_back({seq.slots[k].role, "slot" + std::to_string(k)});
    }
  }
  const EncodingResult res = to_result(enc, seq);
  const std::vector<int> ctx = seq.context_positions();
  const AttentionProfile trig = pool_attention(res.attention, seq.trigger, ctx);
  for (std::size_t k = 0; k < probes.size(); ++k) {
    const ClueVector cv = clue_vector(res.context, pool_attention(res.attention, probes[k].rows, ctx), trig);
    const std::string path = (fs::path(dir) / ("cca_" + std::to_string(k) + "_" + probes[k].file_tag + ".csv")).string();
    std::ofstream out(path);
    out.precision(17);
    out << "piece,word,token,weight\n";
    for (std::size_t i = 0; i < ctx.size(); ++i) {
      const int p = ctx[i];
      out << p << ',' << seq.piece_to_word[static_cast<std::size_t>(p)] << ','
          << detail::csv_escape(m.tokenizer->piece(seq.pieces[static_cast<std::size_t>(p)])) << ','
          << cv.attn(static_cast<Eigen::Index>(i)) << '\n';
    }
    written.push_back(path);
  }

  nlohmann::json emb = {{"doc_id", inst.doc_id}, {"roles", nlohmann::json::array()}, {"arguments", nlohmann::json::array()}};
  if (!seq.role_tokens.empty()) {
    std::vector<std::string> names;
    for (const RoleToken& r : seq.role_tokens) names.push_back(r.role);
    names.push_back("none");
    const Matrix sim = cosine_similarity(res.roles);
    const std::string path = (fs::path(dir) / "role_similarity.csv").string();
    std::ofstream out(path);
    out.precision(17);
    out << "role";
    for (const std::string& n : names) out << ',' << detail::csv_escape(n);
    out << '\n';
    for (Eigen::Index a = 0; a < sim.rows(); ++a) {
      out << detail::csv_escape(names[static_cast<std::size_t>(a)]);
      for (Eigen::Index b = 0; b < sim.cols(); ++b) out << ',' << sim(a, b);
      out << '\n';
    }
    written.push_back(path);
    for (Eigen::Index a = 0; a < res.roles.rows(); ++a) {
      emb["roles"].push_back({{"role", names[static_cast<std::size_t>(a)]}, {"vector", detail::row_vector(res.roles, a)}});
    }
  }
  for (std::size_t k = 0; k < fused_rows.size(); ++k) {
    emb["arguments"].push_back({{"role", fused_labels[k].first},
                                {"item", fused_labels[k].second},
                                {"vector", detail::row_vector(fused, fused_rows[k])}});
  }
  const std::string path = (fs::path(dir) / "embeddings.json").string();
  std::ofstream(path) << emb.dump() << '\n';
  written.push_back(path);
  return written;
}

}  // namespace carlg
