// Unit tests for data handling, encoding, the two guidance modules, metrics
// and configuration.

#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <random>
#include <sstream>

#include "test_support.hpp"

namespace carlg {
namespace {

using testing::random_attention;
using testing::random_matrix;
using testing::random_row;

// ---------------------------------------------------------------------------
// Dataset

TEST(Dataset, JsonlRoundTrip) {
  const auto data = testing::tiny_corpus();
  std::stringstream ss;
  write_dataset(ss, data);
  EXPECT_EQ(parse_dataset(ss), data);
}

TEST(Dataset, MalformedLineIsNamed) {
  std::stringstream ss;
  write_dataset(ss, {testing::tiny_instance()});
  ss << "{\"doc_id\": \"x\", \"words\": [\n";
  try {
    parse_dataset(ss, "input.jsonl");
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("input.jsonl:2:"), std::string::npos) << e.what();
  }
}

TEST(Dataset, BlankLinesAndEmptyFile) {
  std::stringstream empty;
  EXPECT_TRUE(parse_dataset(empty).empty());
  std::stringstream blanks("\n   \n");
  EXPECT_TRUE(parse_dataset(blanks).empty());
}

TEST(Dataset, ValidateRejectsBadInstances) {
  EventInstance ok = testing::tiny_instance();
  EXPECT_NO_THROW(validate(ok));

  EventInstance e = ok;
  e.trigger = {4, 5};
  EXPECT_THROW(validate(e), DataError);
  e = ok;
  e.args.push_back({"victim", 0, 0});
  EXPECT_THROW(validate(e), DataError);
  e = ok;
  e.args[0] = {"attacker", 3, 2};
  EXPECT_THROW(validate(e), DataError);
  e = ok;
  e.roles.push_back("target");
  EXPECT_THROW(validate(e), DataError);
  e = ok;
  e.words.clear();
  EXPECT_THROW(validate(e), DataError);
}

TEST(Dataset, LabelSpace) {
  const LabelSpace ls = LabelSpace::from(testing::tiny_corpus());
  EXPECT_EQ(ls.roles, (std::vector<std::string>{"agent", "attacker", "place", "target"}));
  EXPECT_EQ(ls.role_id("place"), 2);
  EXPECT_THROW(ls.role_id("victim"), DataError);
  EXPECT_THROW(ls.inventory("bombing"), DataError);

  auto data = testing::tiny_corpus();
  data.push_back(data[0]);
  data.back().roles = {"target", "attacker"};
  EXPECT_THROW(LabelSpace::from(data), DataError);
}

// ---------------------------------------------------------------------------
// Tokenizer

TEST(Tokenizer, SplitsIntoContinuationPieces) {
  SubwordTokenizer tok({"attacker", "at"}, {});
  EXPECT_EQ(tok.split("attacker"), (std::vector<std::string>{"attack", "##er"}));
  EXPECT_EQ(tok.split("at"), (std::vector<std::string>{"at"}));
  const std::vector<std::string> words{"attacker", "unknownword", "at"};
  const TokenizedWords tw = tok.encode(words);
  ASSERT_EQ(tw.words.size(), 3u);
  EXPECT_EQ(tw.words[0], (PieceRange{0, 2}));
  EXPECT_EQ(tw.words[1], (PieceRange{2, 4}));
  EXPECT_EQ(tw.pieces[2], tok.special_token_id(kUnkToken));
  EXPECT_EQ(tok.decode(std::vector<int>{tw.pieces[0], tw.pieces[1], tw.pieces[4]}), "attacker at");
}

TEST(Tokenizer, RoleMarkersFollowBaseVocabularyInSortedOrder) {
  SubwordTokenizer tok({"w"}, {"victim", "agent", "victim"});
  EXPECT_EQ(tok.marker_roles(), (std::vector<std::string>{"agent", "victim"}));
  EXPECT_EQ(tok.role_marker_id("agent"), tok.base_vocab_size());
  EXPECT_EQ(tok.role_marker_id("victim"), tok.base_vocab_size() + 1);
  EXPECT_EQ(tok.vocab_size(), tok.base_vocab_size() + 2);
  EXPECT_EQ(tok.piece(tok.role_marker_id("victim")), "[R:victim]");
  EXPECT_THROW(tok.role_marker_id("place"), DataError);
  EXPECT_THROW(tok.special_token_id("w"), DataError);  // ordinary piece
  EXPECT_NO_THROW(tok.special_token_id(kTriggerMarker));
}

TEST(Tokenizer, JsonRoundTrip) {
  SubwordTokenizer tok({"rebels", "stormed", "capital"}, {"target", "attacker"}, 4);
  const SubwordTokenizer back = SubwordTokenizer::from_json(tok.to_json());
  ASSERT_EQ(back.vocab_size(), tok.vocab_size());
  EXPECT_EQ(back.base_vocab_size(), tok.base_vocab_size());
  for (int id = 0; id < tok.vocab_size(); ++id) EXPECT_EQ(back.piece(id), tok.piece(id));
  EXPECT_EQ(back.max_piece_chars(), 4);
}

// ---------------------------------------------------------------------------
// Sequence construction

std::vector<std::string> pieces_of(const MarkedSequence& seq, const Tokenizer& tok) {
  std::vector<std::string> out;
  for (int id : seq.pieces) out.push_back(tok.piece(id));
  return out;
}

TEST(Sequence, SpanLayoutOfOneWordDocument) {
  EventInstance inst;
  inst.doc_id = "one";
  inst.words = {"fired"};
  inst.event_type = "attack";
  inst.trigger = {0, 0};
  inst.roles = {"attacker", "target"};
  SubwordTokenizer tok(vocabulary_words({inst}), inst.roles, 12);
  const MarkedSequence seq = build_span_input(inst, tok);
  EXPECT_EQ(pieces_of(seq, tok),
            (std::vector<std::string>{"[CLS]", "[E]", "attack", "[E]", "[SEP]", "*", "fired", "*", "[SEP]",
                                      "[R:attacker]", "attacker", "[R:attacker]", "[R:target]", "target", "[R:target]",
                                      "[SEP]"}));
  EXPECT_EQ(seq.role_positions(), (std::vector<int>{9, 12, 15}));
  EXPECT_EQ(seq.none_index, 15);
  EXPECT_EQ(seq.context, (PieceRange{5, 8}));
  EXPECT_EQ(seq.trigger, (PieceRange{6, 7}));
  EXPECT_EQ(seq.event_marker_index.value(), 1);
  EXPECT_EQ(seq.word_to_pieces[0], (PieceRange{6, 7}));
  EXPECT_EQ(seq.piece_to_word, (std::vector<int>{-1, -1, -1, -1, -1, 0, 0, 0, -1, -1, -1, -1, -1, -1, -1, -1}));
}

EventInstance long_instance(int n_words) {
  EventInstance inst;
  inst.doc_id = "long";
  for (int i = 0; i < n_words; ++i) inst.words.push_back("word" + std::to_string(i * 37));
  inst.event_type = "attack";
  inst.trigger = {n_words / 2, n_words / 2 + 1};
  inst.roles = {"attacker", "target"};
  inst.args = {{"attacker", 3, 5}, {"target", n_words - 2, n_words - 1}};
  return inst;
}

TEST(Sequence, LengthOfLongDocument) {
  const EventInstance inst = long_instance(600);
  SubwordTokenizer tok(vocabulary_words({inst}), inst.roles);
  std::size_t expected = 12;  // specials for two roles
  for (const std::string& w : inst.words) expected += tok.split(w).size();
  expected += tok.split("attack").size() + tok.split("attacker").size() + tok.split("target").size();
  EXPECT_EQ(static_cast<std::size_t>(build_span_input(inst, tok).length()), expected);
}

TEST(Sequence, ContextDecodesBackToTheDocument) {
  const EventInstance inst = long_instance(40);
  SubwordTokenizer tok(vocabulary_words({inst}), inst.roles, 3);
  const MarkedSequence seq = build_span_input(inst, tok);
  EXPECT_EQ(build_span_input(inst, tok), seq);

  std::vector<int> ids;
  for (int p = seq.context.begin; p < seq.context.end; ++p) {
    if (tok.piece(seq.pieces[static_cast<std::size_t>(p)]) != kTriggerMarker) ids.push_back(seq.pieces[static_cast<std::size_t>(p)]);
  }
  std::string joined;
  for (const std::string& w : inst.words) joined += (joined.empty() ? "" : " ") + w;
  EXPECT_EQ(tok.decode(ids), joined);

  for (std::size_t w = 0; w < inst.words.size(); ++w) {
    const PieceRange r = seq.word_to_pieces[w];
    std::vector<int> word_ids(seq.pieces.begin() + r.begin, seq.pieces.begin() + r.end);
    EXPECT_EQ(tok.decode(word_ids), inst.words[w]);
    for (int p = r.begin; p < r.end; ++p) EXPECT_EQ(seq.piece_to_word[static_cast<std::size_t>(p)], static_cast<int>(w));
  }
  std::vector<int> trig(seq.pieces.begin() + seq.trigger.begin, seq.pieces.begin() + seq.trigger.end);
  EXPECT_EQ(tok.decode(trig), inst.words[20] + " " + inst.words[21]);
  EXPECT_EQ(tok.piece(seq.pieces[static_cast<std::size_t>(seq.trigger.begin - 1)]), kTriggerMarker);
  EXPECT_EQ(tok.piece(seq.pieces[static_cast<std::size_t>(seq.trigger.end)]), kTriggerMarker);
  for (const RoleToken& r : seq.role_tokens) EXPECT_EQ(tok.piece(seq.pieces[static_cast<std::size_t>(r.piece)]), role_marker_name(r.role));
}

TEST(Sequence, RoleBlockPlacement) {
  const EventInstance inst = testing::tiny_instance();
  SubwordTokenizer tok(vocabulary_words({inst}), inst.roles);
  const MarkedSequence none = build_span_input(inst, tok, RoleBlock::kNone);
  EXPECT_TRUE(none.role_tokens.empty());
  EXPECT_EQ(none.none_index, -1);
  const MarkedSequence before = build_span_input(inst, tok, RoleBlock::kBeforeContext);
  const MarkedSequence after = build_span_input(inst, tok, RoleBlock::kAfterContext);
  EXPECT_EQ(before.length(), after.length());
  EXPECT_LT(before.none_index, before.context.begin);
  EXPECT_GT(after.role_tokens.front().piece, after.context.end);
}

TEST(Sequence, UnknownEventTypeRejectedWithLabels) {
  const auto data = testing::tiny_corpus();
  const LabelSpace ls = LabelSpace::from(data);
  SubwordTokenizer tok(vocabulary_words(data), ls.roles);
  EventInstance other = data[0];
  other.event_type = "bombing";
  EXPECT_NO_THROW(build_span_input(other, tok));
  EXPECT_THROW(build_span_input(other, tok, RoleBlock::kAfterContext, &ls), DataError);
}

TEST(Sequence, PromptSlotsInOrderWithRepeats) {
  const EventInstance inst = testing::tiny_instance();
  const PromptTemplate t = parse_template("attack", "<attacker> attacked <target> with ⟨attacker⟩.");
  EXPECT_EQ(t.slots, (std::vector<std::string>{"attacker", "target", "attacker"}));
  std::vector<std::string> vocab = vocabulary_words({inst});
  for (const auto& w : t.words) vocab.push_back(w.text);
  SubwordTokenizer tok2(vocab, inst.roles);
  const MarkedSequence seq = build_prompt_input(inst, t, tok2);
  ASSERT_EQ(seq.slots.size(), 3u);
  EXPECT_EQ(seq.slots[0].role, "attacker");
  EXPECT_EQ(seq.slots[1].role, "target");
  EXPECT_EQ(seq.slots[2].role, "attacker");
  EXPECT_LT(seq.slots[0].piece, seq.slots[1].piece);
  EXPECT_LT(seq.slots[1].piece, seq.slots[2].piece);
  for (const Slot& s : seq.slots) {
    EXPECT_GT(s.piece, seq.context.end);
    std::vector<int> ids(seq.pieces.begin() + s.range.begin, seq.pieces.begin() + s.range.end);
    EXPECT_EQ(tok2.decode(ids), s.role);
  }
  // [CLS] then the role block.
  EXPECT_EQ(tok2.piece(seq.pieces[0]), kClsToken);
  EXPECT_EQ(seq.role_tokens.front().piece, 1);
  EXPECT_LT(seq.none_index, seq.context.begin);
}

TEST(Sequence, PromptWithoutSlots) {
  const EventInstance inst = testing::tiny_instance();
  const PromptTemplate t = parse_template("attack", "something happened");
  std::vector<std::string> vocab = vocabulary_words({inst});
  vocab.insert(vocab.end(), {"something", "happened"});
  SubwordTokenizer tok(vocab, inst.roles);
  EXPECT_TRUE(build_prompt_input(inst, t, tok).slots.empty());
  EXPECT_THROW(build_prompt_input(inst, parse_template("arrest", "<agent>"), tok), DataError);
  EXPECT_THROW(build_prompt_input(inst, parse_template("attack", "<victim>"), tok), DataError);
  EXPECT_THROW(parse_template("attack", "<attacker"), DataError);
}

TEST(Sequence, TemplateRegistry) {
  const auto data = testing::tiny_corpus();
  const LabelSpace ls = LabelSpace::from(data);
  const TemplateRegistry reg = make_template_registry(R"({"attack": "<attacker> hit <target>"})", ls);
  ASSERT_EQ(reg.size(), 2u);
  EXPECT_EQ(reg.at("attack").slots, (std::vector<std::string>{"attacker", "target"}));
  EXPECT_EQ(reg.at("arrest").slots, (std::vector<std::string>{"agent", "target", "place"}));
  EXPECT_EQ(fallback_registry(ls).at("attack").text, "<attacker> <target>");
  EXPECT_THROW(make_template_registry(R"({"attack": "<a>", "attack": "<b>"})", ls), DataError);
  EXPECT_THROW(make_template_registry(R"({"attack": "<agent> hit"})", ls), DataError);
  EXPECT_THROW(make_template_registry(R"(["attack"])", ls), DataError);
}

TEST(Sequence, SyntheticTypesGetFallbackTemplates) {
  SynthConfig sc;
  sc.n_docs = 30;
  const auto data = generate_synthetic(sc);
  const LabelSpace ls = LabelSpace::from(data);
  const TemplateRegistry reg = fallback_registry(ls);
  EXPECT_EQ(reg.size(), 3u);
  SubwordTokenizer tok(vocabulary_words(data, &reg), ls.roles);
  for (const EventInstance& inst : data) {
    EXPECT_EQ(build_prompt_input(inst, reg, tok).slots.size(), inst.roles.size());
  }
}

// ---------------------------------------------------------------------------
// Encoder

struct ToyEncoder {
  SubwordTokenizer tok;
  ParameterStore store;
  std::unique_ptr<ToyTransformer> backend;

  ToyEncoder(const std::vector<EventInstance>& data, int max_tokens, int decoder_layers = 0) {
    const LabelSpace ls = LabelSpace::from(data);
    tok = SubwordTokenizer(vocabulary_words(data), ls.roles);
    TransformerConfig c;
    c.layers = 2;
    c.dim = 8;
    c.heads = 2;
    c.ffn = 12;
    c.max_tokens = max_tokens;
    c.vocab = tok.base_vocab_size();
    c.role_tokens = tok.vocab_size() - tok.base_vocab_size();
    c.decoder_layers = decoder_layers;
    std::mt19937_64 rng(3);
    store.allocate(transformer_manifest(c), rng);
    testing::scramble(store, 4, 0.2);
    backend = std::make_unique<ToyTransformer>(c, store);
  }
};

void expect_row_stochastic(const std::vector<Matrix>& attention, double tol) {
  for (const Matrix& a : attention) {
    EXPECT_GE(a.minCoeff(), 0.0);
    for (Eigen::Index r = 0; r < a.rows(); ++r) EXPECT_NEAR(a.row(r).sum(), 1.0, tol);
  }
}

TEST(Encoder, ToyShapesAndDeterminism) {
  const auto data = testing::tiny_corpus();
  ToyEncoder te(data, 64, 1);
  const MarkedSequence seq = build_span_input(data[0], te.tok);
  const EncodingResult r = encode(seq, *te.backend);
  EXPECT_EQ(r.hidden.rows(), seq.length());
  EXPECT_EQ(r.hidden.cols(), 8);
  ASSERT_EQ(r.attention.size(), 2u);
  expect_row_stochastic(r.attention, 1e-12);
  EXPECT_EQ(r.context.rows(), seq.context.size());
  EXPECT_EQ(r.roles.rows(), 3);
  EXPECT_EQ(r.event.size(), 8);
  EXPECT_TRUE(r.hidden.isApprox(encode(seq, *te.backend).hidden, 0.0));

  const Matrix dec = decode(r, seq, *te.backend);
  EXPECT_EQ(dec.rows(), seq.length());
  EXPECT_EQ(dec, decode(r, seq, *te.backend));
  EXPECT_FALSE(dec.isApprox(r.hidden));
}

TEST(Encoder, StubBackends) {
  const EventInstance inst = testing::tiny_instance();
  SubwordTokenizer tok(vocabulary_words({inst}), inst.roles);
  const MarkedSequence seq = build_span_input(inst, tok);
  IdentityAttentionBackend id(6, 3);
  const EncodingResult r = encode(seq, id);
  for (const Matrix& a : r.attention) EXPECT_EQ(a, Matrix::Identity(seq.length(), seq.length()));
  EXPECT_EQ(decode(r, seq, id), r.hidden);

  RowVector state(4);
  state << 1, 2, 3, 4;
  ConstantBackend cb(state, 2);
  const EncodingResult c = encode(seq, cb);
  for (Eigen::Index i = 0; i < c.hidden.rows(); ++i) EXPECT_EQ(c.hidden.row(i), state);
  expect_row_stochastic(c.attention, 1e-12);
  EXPECT_THROW(decode(c, seq, cb), std::logic_error);

  IdentityAttentionBackend small(6, 3, 5);
  EXPECT_THROW(encode(seq, small), std::invalid_argument);
}

TEST(Encoder, LongEncodingIsIdentityWhenInputFits) {
  const auto data = testing::tiny_corpus();
  ToyEncoder te(data, 64);
  const MarkedSequence seq = build_span_input(data[1], te.tok);
  const EncodingResult a = encode(seq, *te.backend);
  const EncodingResult b = encode_long(seq, *te.backend, seq.length(), 3);
  EXPECT_EQ(a.hidden, b.hidden);
  for (std::size_t h = 0; h < a.attention.size(); ++h) EXPECT_EQ(a.attention[h], b.attention[h]);

  RowVector state = RowVector::LinSpaced(5, -1, 1);
  ConstantBackend cb(state, 2, 64);
  const EncodingResult c = encode_long(seq, cb, seq.length() - 3, 2);
  for (Eigen::Index i = 0; i < c.hidden.rows(); ++i) EXPECT_TRUE(c.hidden.row(i).isApprox(state, 1e-14));
}

TEST(Encoder, WindowStarts) {
  EXPECT_EQ(window_starts(9, 4, 3), (std::vector<int>{0, 3, 5}));
  EXPECT_EQ(window_starts(8, 4, 4), (std::vector<int>{0, 4}));
  EXPECT_EQ(window_starts(3, 4, 2), (std::vector<int>{0}));
  EXPECT_EQ(window_starts(10, 4, 2), (std::vector<int>{0, 2, 4, 6}));
}

// Backend whose outputs depend on the whole window, so merging errors show.
ExternalBackend window_sensitive_backend(int max_tokens, int dim, int heads) {
  return ExternalBackend(max_tokens, dim, heads, [=](const std::vector<int>& ids) {
    const auto l = static_cast<Eigen::Index>(ids.size());
    const double total = std::accumulate(ids.begin(), ids.end(), 0.0);
    ExternalBackend::Output out{Matrix(l, dim), {}};
    for (Eigen::Index i = 0; i < l; ++i) {
      for (int c = 0; c < dim; ++c) out.hidden(i, c) = std::sin(0.3 * ids[static_cast<std::size_t>(i)] + 0.7 * c + 0.13 * i) + 0.01 * total;
    }
    for (int h = 0; h < heads; ++h) {
      Matrix a(l, l);
      for (Eigen::Index i = 0; i < l; ++i) {
        for (Eigen::Index j = 0; j < l; ++j) {
          a(i, j) = std::exp(std::cos(ids[static_cast<std::size_t>(i)] - ids[static_cast<std::size_t>(j)] + 0.1 * i + h));
        }
        a.row(i) /= a.row(i).sum();
      }
      out.attention.push_back(a);
    }
    return out;
  });
}

TEST(Encoder, LongEncodingMatchesBruteForceMerge) {
  // 2 prefix, 9 context, 1 suffix pieces; window 7 leaves room for 4 context
  // pieces, stride 3 gives windows starting at context offsets 0, 3 and 5.
  MarkedSequence seq;
  for (int i = 0; i < 12; ++i) seq.pieces.push_back(10 + (i * 7) % 11);
  seq.context = {2, 11};
  const int window = 7, stride = 3, dim = 3, heads = 2;
  ExternalBackend backend = window_sensitive_backend(window, dim, heads);
  const EncodingResult got = encode_long(seq, backend, window, stride);

  Matrix hidden = Matrix::Zero(12, dim);
  std::vector<Matrix> attn(heads, Matrix::Zero(12, 12));
  std::vector<double> count(12, 0.0);
  for (int start : {0, 3, 5}) {
    std::vector<int> global{0, 1};
    for (int k = 0; k < 4; ++k) global.push_back(2 + start + k);
    global.push_back(11);
    std::vector<int> ids;
    for (int g : global) ids.push_back(seq.pieces[static_cast<std::size_t>(g)]);
    ad::Tape tape;
    const EncoderVars w = backend.forward(tape, ids, {});
    for (std::size_t a = 0; a < global.size(); ++a) {
      count[static_cast<std::size_t>(global[a])] += 1.0;
      hidden.row(global[a]) += w.hidden.value().row(static_cast<Eigen::Index>(a));
      for (int h = 0; h < heads; ++h) {
        for (std::size_t b = 0; b < global.size(); ++b) {
          attn[static_cast<std::size_t>(h)](global[a], global[b]) +=
              w.attention[static_cast<std::size_t>(h)].value()(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b));
        }
      }
    }
  }
  EXPECT_EQ(count, (std::vector<double>{3, 3, 1, 1, 1, 2, 1, 2, 2, 1, 1, 3}));
  for (int i = 0; i < 12; ++i) {
    hidden.row(i) /= count[static_cast<std::size_t>(i)];
    for (Matrix& a : attn) a.row(i) /= a.row(i).sum();
  }
  EXPECT_LT((got.hidden - hidden).cwiseAbs().maxCoeff(), 1e-12);
  for (int h = 0; h < heads; ++h) {
    EXPECT_LT((got.attention[static_cast<std::size_t>(h)] - attn[static_cast<std::size_t>(h)]).cwiseAbs().maxCoeff(), 1e-12);
  }
  expect_row_stochastic(got.attention, 1e-12);
}

TEST(Encoder, LongEncodingOfLongDocumentIsRowStochastic) {
  const EventInstance inst = long_instance(120);
  ToyEncoder te({inst}, 64);
  const MarkedSequence seq = build_span_input(inst, te.tok);
  ASSERT_GT(seq.length(), 64);
  const EncodingResult r = encode_long(seq, *te.backend, 64, 20);
  EXPECT_EQ(r.hidden.rows(), seq.length());
  EXPECT_TRUE(r.hidden.allFinite());
  expect_row_stochastic(r.attention, 1e-12);
}

TEST(Encoder, LongEncodingArgumentErrors) {
  MarkedSequence seq;
  seq.pieces.assign(12, 5);
  seq.context = {2, 11};
  ExternalBackend backend = window_sensitive_backend(7, 2, 1);
  EXPECT_THROW(encode_long(seq, backend, 7, 0), std::invalid_argument);
  EXPECT_THROW(encode_long(seq, backend, 8, 3), std::invalid_argument);
  EXPECT_THROW(encode_long(seq, backend, 6, 7), std::invalid_argument);
  EXPECT_THROW(encode_long(seq, backend, 7, 5), std::invalid_argument);  // stride > capacity 4
  seq.context = {5, 9};  // 5 prefix + 3 suffix pieces leave no room
  EXPECT_THROW(encode_long(seq, backend, 7, 1), std::invalid_argument);
}

// ---------------------------------------------------------------------------
// Contextual clue aggregation

TEST(Cca, PoolAttentionMatchesLoops) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    const int heads = testing::uniform_int(rng, 1, 4);
    const int l = testing::uniform_int(rng, 2, 12);
    const auto A = random_attention(rng, heads, l);
    const int i = testing::uniform_int(rng, 0, l - 1);
    const int j = testing::uniform_int(rng, i, l - 1);
    std::vector<int> cols;
    for (int c = 0; c < l; ++c) {
      if (testing::uniform_int(rng, 0, 1) == 1) cols.push_back(c);
    }
    if (cols.empty()) cols.push_back(0);
    const Vector want = testing::loop_pool(A, i, j, cols);
    EXPECT_LT((pool_attention(A, PieceRange{i, j + 1}, cols).weights - want).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Cca, PoolAttentionErrors) {
  std::mt19937_64 rng(1);
  const auto A = random_attention(rng, 2, 4);
  EXPECT_THROW(pool_attention(A, 2, 1), std::out_of_range);
  EXPECT_THROW(pool_attention(A, 0, 4), std::out_of_range);
  EXPECT_THROW(pool_attention({}, 0, 0), std::invalid_argument);
}

TEST(Cca, ClueVectorMatchesLoops) {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = testing::uniform_int(rng, 1, 10);
    const int d = testing::uniform_int(rng, 1, 6);
    const Matrix H = random_matrix(rng, n, d, -3, 3);
    const Vector a = random_row(rng, n, 0, 1).transpose();
    const Vector t = random_row(rng, n, 0, 1).transpose();
    const ClueVector got = clue_vector(H, {a}, {t});
    const auto [c, p] = testing::loop_aggregate(H, a, t);
    EXPECT_LT((got.c - c).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LT((got.attn - p).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_NEAR(got.attn.sum(), 1.0, 1e-12);
  }
}

TEST(Cca, PermutationEquivariantAndConvex) {
  std::mt19937_64 rng(13);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = testing::uniform_int(rng, 2, 9);
    const Matrix H = random_matrix(rng, n, 4);
    const Vector a = random_row(rng, n, 0, 1).transpose();
    const Vector t = random_row(rng, n, 0, 1).transpose();
    std::vector<int> perm(static_cast<std::size_t>(n));
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Matrix Hp(n, 4);
    Vector ap(n), tp(n);
    for (int k = 0; k < n; ++k) {
      Hp.row(k) = H.row(perm[static_cast<std::size_t>(k)]);
      ap(k) = a(perm[static_cast<std::size_t>(k)]);
      tp(k) = t(perm[static_cast<std::size_t>(k)]);
    }
    const ClueVector x = clue_vector(H, {a}, {t});
    const ClueVector y = clue_vector(Hp, {ap}, {tp});
    EXPECT_LT((x.c - y.c).cwiseAbs().maxCoeff(), 1e-12);
    for (int k = 0; k < n; ++k) EXPECT_NEAR(y.attn(k), x.attn(perm[static_cast<std::size_t>(k)]), 1e-12);
    for (Eigen::Index col = 0; col < 4; ++col) {
      EXPECT_LE(x.c(col), H.col(col).maxCoeff() + 1e-12);
      EXPECT_GE(x.c(col), H.col(col).minCoeff() - 1e-12);
    }
  }
}

TEST(Cca, SharedFocusRaisesWeight) {
  // Position 2 is where both the span and the trigger look; raising the
  // trigger's attention there can only raise its weight.
  Vector a(4), t(4);
  a << 0.1, 0.1, 0.7, 0.1;
  t << 0.25, 0.25, 0.25, 0.25;
  const Matrix H = Matrix::Identity(4, 4);
  double last = 0.0;
  for (double focus : {0.25, 0.4, 0.6, 0.9}) {
    Vector tt = Vector::Constant(4, (1.0 - focus) / 3.0);
    tt(2) = focus;
    const ClueVector c = clue_vector(H, {a}, {tt});
    EXPECT_GT(c.attn(2), last);
    last = c.attn(2);
  }
  const ClueVector flat = clue_vector(H, {Vector::Constant(4, 0.25)}, {t});
  for (int k = 0; k < 4; ++k) EXPECT_NEAR(flat.attn(k), 0.25, 1e-15);
}

TEST(Cca, AggregateProfilesInputErrors) {
  const Matrix H = Matrix::Ones(3, 2);
  Vector a = Vector::Ones(3), t = Vector::Ones(2);
  EXPECT_THROW(clue_vector(H, {a}, {t}), std::invalid_argument);
  t = Vector::Ones(3);
  t(1) = std::nan("");
  EXPECT_THROW(clue_vector(H, {a}, {t}), std::invalid_argument);
}

TEST(Cca, TapeAggregationGradients) {
  std::mt19937_64 rng(14);
  const Matrix spans = random_matrix(rng, 3, 5, 0, 1);
  const Matrix trig = random_matrix(rng, 1, 5, 0, 1);
  const Matrix values = random_matrix(rng, 5, 4);
  const Matrix R = random_matrix(rng, 3, 4);
  const double err = testing::input_gradient_error({spans, trig, values}, [&](ad::Tape& t, const std::vector<ad::Var>& v) {
    const Aggregated a = aggregate_profiles(v[0], v[1], v[2]);
    return ad::sum(ad::mul(a.value, t.constant(R)));
  });
  EXPECT_LT(err, 1e-6);

  ad::Tape tape;
  const Aggregated a = aggregate_profiles(tape.constant(spans), tape.constant(trig), tape.constant(values));
  for (int r = 0; r < 3; ++r) {
    const auto [c, p] = testing::loop_aggregate(values, spans.row(r).transpose(), trig.row(0).transpose());
    EXPECT_LT((a.value.value().row(r).transpose() - c).cwiseAbs().maxCoeff(), 1e-12);
  }
}

// ---------------------------------------------------------------------------
// Role-based guidance

TEST(Rlig, RoleAttentionIsZeroUnderIdentityAttention) {
  const EventInstance inst = testing::tiny_instance();
  SubwordTokenizer tok(vocabulary_words({inst}), inst.roles);
  const MarkedSequence seq = build_span_input(inst, tok);
  IdentityAttentionBackend id(4, 2);
  const EncodingResult r = encode(seq, id);
  const RoleAttentionProfile p = extract_role_attention(r.attention, seq, seq.span_pieces({2, 3}));
  EXPECT_EQ(p.weights.size(), 3);
  EXPECT_EQ(p.weights, Vector::Zero(3));
}

TEST(Rlig, RoleAttentionOneHotAndBruteForce) {
  const EventInstance inst = testing::tiny_instance();
  SubwordTokenizer tok(vocabulary_words({inst}), inst.roles);
  const MarkedSequence seq = build_span_input(inst, tok);
  const int l = seq.length();
  const int target_pos = seq.role_token_index().at("target");

  // Every query looks only at the target marker.
  std::vector<Matrix> onehot(2, Matrix::Zero(l, l));
  for (Matrix& a : onehot) a.col(target_pos).setOnes();
  const RoleAttentionProfile p = extract_role_attention(onehot, seq, seq.span_pieces({0, 0}));
  EXPECT_EQ(p.weights, (Vector(3) << 0, 1, 0).finished());

  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 100; ++trial) {
    const auto A = random_attention(rng, testing::uniform_int(rng, 1, 3), l);
    const int s = testing::uniform_int(rng, 0, 4);
    const int e = testing::uniform_int(rng, s, 4);
    const PieceRange rows = seq.span_pieces({s, e});
    const Vector want = testing::loop_pool(A, rows.begin, rows.end - 1, seq.role_positions());
    EXPECT_LT((extract_role_attention(A, seq, rows).weights - want).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Rlig, RoleAttentionErrors) {
  const EventInstance inst = testing::tiny_instance();
  SubwordTokenizer tok(vocabulary_words({inst}), inst.roles);
  const MarkedSequence seq = build_span_input(inst, tok);
  const MarkedSequence bare = build_span_input(inst, tok, RoleBlock::kNone);
  std::mt19937_64 rng(2);
  const auto A = random_attention(rng, 2, seq.length());
  EXPECT_THROW(extract_role_attention(A, bare, bare.span_pieces({0, 0})), std::invalid_argument);
  EXPECT_THROW(extract_role_attention(A, seq, PieceRange{0, 1}), std::out_of_range);
  EXPECT_THROW(extract_role_attention(A, seq, PieceRange{seq.context.begin, seq.context.end + 1}), std::out_of_range);
}

TEST(Rlig, RoleFusionMatchesLoops) {
  std::mt19937_64 rng(22);
  for (int trial = 0; trial < 100; ++trial) {
    const int lr = testing::uniform_int(rng, 1, 6);
    const Matrix HR = random_matrix(rng, lr, 5);
    const Vector a = random_row(rng, lr, 0, 1).transpose();
    const Vector t = random_row(rng, lr, 0, 1).transpose();
    const RoleFusionVector r = role_fusion(HR, {a}, {t});
    const auto [c, p] = testing::loop_aggregate(HR, a, t);
    EXPECT_LT((r.c - c).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_NEAR(r.attn.sum(), 1.0, 1e-12);
  }
}

TEST(Rlig, ReduceRoles) {
  std::mt19937_64 rng(23);
  for (int trial = 0; trial < 100; ++trial) {
    const int d = testing::uniform_int(rng, 1, 5), dr = testing::uniform_int(rng, 1, 4);
    const int lr = testing::uniform_int(rng, 1, 5);
    TripleScoreModel m = TripleScoreModel::random(d, dr, 2, lr, rng, 0.5);
    m.b_w = random_row(rng, dr);
    const Matrix HR = random_matrix(rng, lr, d);
    const Matrix got = reduce_roles(m, HR);
    for (int k = 0; k < lr; ++k) {
      for (int j = 0; j < dr; ++j) {
        double s = m.b_w(j);
        for (int i = 0; i < d; ++i) s += HR(k, i) * m.W3(i, j);
        EXPECT_NEAR(got(k, j), s, 1e-12);
      }
    }
  }
  TripleScoreModel m = TripleScoreModel::random(3, 2, 2, 1, rng);
  EXPECT_THROW(reduce_roles(m, Matrix::Ones(2, 4)), std::invalid_argument);
}

TEST(Rlig, TuckerHandCases) {
  std::mt19937_64 rng(24);
  TripleScoreModel zero = TripleScoreModel::random(3, 2, 4, 2, rng);
  zero.Z.setZero();
  const Matrix HR = random_matrix(rng, 2, 3);
  EXPECT_DOUBLE_EQ(tucker_score(zero, random_row(rng, 3), random_row(rng, 3), reduce_roles(zero, HR), 1), 0.5);

  // d = d' = d_i = 1.
  TripleScoreModel m{Matrix::Constant(1, 1, 2.0), RowVector::Constant(1, 1.0), Matrix::Constant(1, 1, 3.0),
                     RowVector::Constant(1, 0.5),  Matrix::Ones(2, 1),          RowVector::Zero(1)};
  const Matrix reduced = reduce_roles(m, Matrix::Ones(1, 1));
  EXPECT_DOUBLE_EQ(reduced(0, 0), 3.0);
  const double logit = std::tanh(0.75) * 3.0 * 3.0 + 0.5;
  EXPECT_NEAR(tucker_logit(m, RowVector::Constant(1, 0.5), RowVector::Constant(1, 0.25), reduced, 0), logit, 1e-15);
  EXPECT_NEAR(tucker_score(m, RowVector::Constant(1, 0.5), RowVector::Constant(1, 0.25), reduced, 0),
              1.0 / (1.0 + std::exp(-logit)), 1e-15);
  EXPECT_THROW(tucker_score(m, RowVector::Constant(1, 0.5), RowVector::Constant(1, 0.25), reduced, 1), std::out_of_range);
  m.Z(0, 0) = std::numeric_limits<double>::infinity();
  EXPECT_THROW(tucker_score(m, RowVector::Constant(1, 0.5), RowVector::Constant(1, 0.25), reduced, 0), std::domain_error);
}

TEST(Rlig, TuckerMatchesScalarLoops) {
  std::mt19937_64 rng(25);
  for (int trial = 0; trial < 100; ++trial) {
    const int d = testing::uniform_int(rng, 1, 4), dr = testing::uniform_int(rng, 1, 3);
    const int di = testing::uniform_int(rng, 1, 3), lr = testing::uniform_int(rng, 1, 4);
    TripleScoreModel m = TripleScoreModel::random(d, dr, di, lr, rng, 0.7);
    m.b = random_row(rng, lr);
    m.b_f = random_row(rng, di);
    const RowVector ht = random_row(rng, d), s = random_row(rng, d);
    const Matrix HR = random_matrix(rng, lr, d);
    const int k = testing::uniform_int(rng, 0, lr - 1);
    std::vector<double> I(static_cast<std::size_t>(di));
    for (int a = 0; a < di; ++a) {
      double z = m.b_f(a);
      for (int i = 0; i < d; ++i) z += ht(i) * m.W_f(i, a) + s(i) * m.W_f(d + i, a);
      I[static_cast<std::size_t>(a)] = std::tanh(z);
    }
    std::vector<double> r(static_cast<std::size_t>(dr));
    for (int j = 0; j < dr; ++j) {
      r[static_cast<std::size_t>(j)] = m.b_w(j);
      for (int i = 0; i < d; ++i) r[static_cast<std::size_t>(j)] += HR(k, i) * m.W3(i, j);
    }
    double logit = m.b(k);
    for (int a = 0; a < di; ++a) {
      for (int j = 0; j < dr; ++j) logit += I[static_cast<std::size_t>(a)] * m.Z(a, j) * r[static_cast<std::size_t>(j)];
    }
    EXPECT_NEAR(tucker_score(m, ht, s, reduce_roles(m, HR), k), 1.0 / (1.0 + std::exp(-logit)), 1e-12);
  }
}

TEST(Rlig, BatchedScoresMatchSingleScores) {
  std::mt19937_64 rng(26);
  TripleScoreModel m = TripleScoreModel::random(4, 3, 5, 3, rng, 0.8);
  m.b = random_row(rng, 3);
  const RowVector ht = random_row(rng, 4);
  const Matrix S = random_matrix(rng, 6, 4);
  const Matrix HR = random_matrix(rng, 3, 4);
  const Matrix all = tucker_scores(m, ht, S, HR);
  const Matrix red = reduce_roles(m, HR);
  for (int n = 0; n < 6; ++n) {
    for (int k = 0; k < 3; ++k) EXPECT_NEAR(all(n, k), tucker_score(m, ht, S.row(n), red, k), 1e-13);
  }
}

TEST(Rlig, TuckerGradients) {
  std::mt19937_64 rng(27);
  TripleScoreModel m = TripleScoreModel::random(3, 2, 4, 3, rng, 0.8);
  const Matrix ht = random_matrix(rng, 1, 3), S = random_matrix(rng, 4, 3), HR = random_matrix(rng, 3, 3);
  const Matrix R = random_matrix(rng, 4, 3);
  const std::vector<Matrix> inputs{m.W3, m.b_w, m.Z, random_row(rng, 3), m.W_f.topRows(3), m.W_f.bottomRows(3),
                                   random_row(rng, 4), ht, S, HR};
  const double err = testing::input_gradient_error(inputs, [&](ad::Tape& t, const std::vector<ad::Var>& v) {
    const TripleScoreVars tv{v[0], v[1], v[2], v[3], v[4], v[5], v[6]};
    const ad::Var logits = tucker_logits(interaction(tv, v[7], v[8]), tv.Z, reduce_roles(tv, v[9]), tv.b);
    return ad::sum(ad::mul(ad::sigmoid(logits), t.constant(R)));
  });
  EXPECT_LT(err, 1e-6);
}

// ---------------------------------------------------------------------------
// Evaluation

TEST(Metrics, GoldenFixture) {
  const auto f = testing::metric_fixture();
  const PRF ai = span_f1(f.preds, f.golds, MatchMode::kIdentification);
  const PRF ac = span_f1(f.preds, f.golds, MatchMode::kClassification);
  const PRF hi = head_f1(f.preds, f.golds, last_word_head, MatchMode::kIdentification);
  const PRF hc = head_f1(f.preds, f.golds, last_word_head, MatchMode::kClassification);
  for (const PRF* r : {&ai, &ac, &hi, &hc}) {
    EXPECT_EQ(r->n_pred, 11);
    EXPECT_EQ(r->n_gold, 12);
  }
  EXPECT_EQ(ai.tp, 5);
  EXPECT_EQ(ac.tp, 4);
  EXPECT_EQ(hi.tp, 6);
  EXPECT_EQ(hc.tp, 5);
  EXPECT_DOUBLE_EQ(ai.precision, 5.0 / 11.0);
  EXPECT_DOUBLE_EQ(ai.recall, 5.0 / 12.0);
  EXPECT_DOUBLE_EQ(ai.f1, 10.0 / 23.0);
  EXPECT_DOUBLE_EQ(ac.f1, 8.0 / 23.0);
  EXPECT_DOUBLE_EQ(hi.f1, 12.0 / 23.0);
  EXPECT_DOUBLE_EQ(hc.f1, 10.0 / 23.0);

  const ErrorReport er = error_report(f.preds, f.golds);
  EXPECT_EQ(er.count(ErrorCategory::kWrongSpan), 1);
  EXPECT_EQ(er.count(ErrorCategory::kOverExtract), 2);
  EXPECT_EQ(er.count(ErrorCategory::kPartial), 2);
  EXPECT_EQ(er.count(ErrorCategory::kOverlap), 1);
  EXPECT_EQ(er.count(ErrorCategory::kWrongRole), 1);
  EXPECT_EQ(er.total, ac.n_pred - ac.tp);
}

TEST(Metrics, FirstWordHead) {
  const auto f = testing::metric_fixture();
  // Heads move to the first word: case 2 (2-3 vs 2-5) now matches, case 7
  // (3-5 vs 2-5) no longer does.
  const PRF hc = head_f1(f.preds, f.golds, first_word_head, MatchMode::kClassification);
  EXPECT_EQ(hc.tp, 5);
  const PRF hi = head_f1(f.preds, f.golds, first_word_head, MatchMode::kIdentification);
  EXPECT_EQ(hi.tp, 6);
}

TEST(Metrics, EmptyAndPerfect) {
  const PRF none = span_f1({{}, {}}, {{}, {}}, MatchMode::kClassification);
  EXPECT_EQ(none.f1, 0.0);
  EXPECT_EQ(none.precision, 0.0);
  const std::vector<std::vector<Argument>> golds{{{"A", 0, 1}, {"B", 2, 2}}};
  const PRF perfect = span_f1({{{"B", 2, 2, 1.0}, {"A", 0, 1, 1.0}}}, golds, MatchMode::kClassification);
  EXPECT_EQ(perfect.f1, 1.0);
  EXPECT_THROW(span_f1(std::vector<std::vector<Prediction>>(1), {}, MatchMode::kClassification), std::invalid_argument);
}

TEST(Metrics, RepeatedGoldsMatchedAsMultiset) {
  const std::vector<std::vector<Argument>> golds{{{"A", 1, 1}, {"B", 1, 1}}};
  const PRF i = span_f1({{{"A", 1, 1, 0.9}, {"B", 1, 1, 0.8}}}, golds, MatchMode::kIdentification);
  EXPECT_EQ(i.tp, 2);
  const PRF one = span_f1({{{"A", 1, 1, 0.9}}}, golds, MatchMode::kIdentification);
  EXPECT_EQ(one.tp, 1);
}

TEST(Metrics, ClassifyErrorCases) {
  const std::vector<Argument> golds{{"A", 2, 5}, {"B", 7, 7}};
  EXPECT_EQ(classify_error({"A", 2, 5, 0}, golds), ErrorCategory::kCorrect);
  EXPECT_EQ(classify_error({"B", 2, 5, 0}, golds), ErrorCategory::kWrongRole);
  EXPECT_EQ(classify_error({"C", 0, 0, 0}, golds), ErrorCategory::kOverExtract);
  EXPECT_EQ(classify_error({"A", 3, 4, 0}, golds), ErrorCategory::kPartial);
  EXPECT_EQ(classify_error({"A", 2, 2, 0}, golds), ErrorCategory::kPartial);
  EXPECT_EQ(classify_error({"A", 4, 8, 0}, golds), ErrorCategory::kOverlap);
  EXPECT_EQ(classify_error({"A", 1, 6, 0}, golds), ErrorCategory::kOverlap);  // superset
  EXPECT_EQ(classify_error({"A", 7, 7, 0}, golds), ErrorCategory::kWrongRole);
  EXPECT_EQ(classify_error({"A", 8, 9, 0}, golds), ErrorCategory::kWrongSpan);
}

TEST(Metrics, ErrorsPartitionNonTruePositives) {
  std::mt19937_64 rng(31);
  const std::vector<std::string> roles{"A", "B", "C"};
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<std::vector<Prediction>> preds(4);
    std::vector<std::vector<Argument>> golds(4);
    for (int e = 0; e < 4; ++e) {
      for (int k = testing::uniform_int(rng, 0, 3); k > 0; --k) {
        const int s = testing::uniform_int(rng, 0, 6);
        golds[static_cast<std::size_t>(e)].push_back({roles[static_cast<std::size_t>(testing::uniform_int(rng, 0, 2))], s,
                                                      s + testing::uniform_int(rng, 0, 2)});
      }
      for (int k = testing::uniform_int(rng, 0, 4); k > 0; --k) {
        const int s = testing::uniform_int(rng, 0, 6);
        preds[static_cast<std::size_t>(e)].push_back({roles[static_cast<std::size_t>(testing::uniform_int(rng, 0, 2))], s,
                                                      s + testing::uniform_int(rng, 0, 2), 0.1 * testing::uniform_int(rng, 0, 9)});
      }
    }
    const PRF ac = span_f1(preds, golds, MatchMode::kClassification);
    const ErrorReport er = error_report(preds, golds);
    int sum = 0;
    for (ErrorCategory c : kErrorCategories) sum += er.count(c);
    EXPECT_EQ(sum, er.total);
    EXPECT_EQ(er.total, ac.n_pred - ac.tp);

    // Order of predictions within an event does not matter.
    auto shuffled = preds;
    for (auto& p : shuffled) std::shuffle(p.begin(), p.end(), rng);
    const PRF again = span_f1(shuffled, golds, MatchMode::kClassification);
    EXPECT_EQ(again.tp, ac.tp);
    EXPECT_EQ(again.n_pred, ac.n_pred);
  }
}

TEST(Metrics, DedupeKeepsBestScore) {
  const std::vector<Prediction> d = dedupe({{"A", 1, 2, 0.3}, {"B", 1, 2, 0.4}, {"A", 1, 2, 0.9}, {"A", 1, 3, 0.1}});
  ASSERT_EQ(d.size(), 3u);
  EXPECT_EQ(d[0].role, "A");
  EXPECT_DOUBLE_EQ(d[0].score, 0.9);
  EXPECT_EQ(d[1].role, "B");
  EXPECT_EQ(d[2].end, 3);
}

TEST(Metrics, PredictionJsonRoundTrip) {
  EventPrediction ep{"d1", "attack", {3, 4}, {{"A", 0, 1, 0.25}, {"B", 6, 6, 0.5}}};
  const EventPrediction back = event_prediction_from_json(to_json(ep));
  EXPECT_EQ(back.doc_id, "d1");
  EXPECT_EQ(back.trigger, (WordSpan{3, 4}));
  ASSERT_EQ(back.predictions.size(), 2u);
  EXPECT_EQ(back.predictions[1].role, "B");
  EXPECT_DOUBLE_EQ(back.predictions[0].score, 0.25);
}

TEST(Cooccurrence, HandComputedMatrix) {
  const CooccurrenceMatrix m = role_cooccurrence(testing::cooccurrence_fixture());
  ASSERT_EQ(m.roles, (std::vector<std::string>{"A", "B", "C", "D"}));
  Matrix want = Matrix::Zero(4, 4);
  want(0, 1) = want(1, 0) = 3.0 / 9.0;
  want(0, 2) = want(2, 0) = 2.0 / 8.0;
  want(1, 2) = want(2, 1) = 2.0 / 7.0;
  EXPECT_EQ(m.values, want);
  EXPECT_EQ(m.values, m.values.transpose());
  EXPECT_EQ(m.values.diagonal(), Vector::Zero(4));
  EXPECT_EQ(m.csv().substr(0, m.csv().find('\n')), "role,A,B,C,D");
}

// ---------------------------------------------------------------------------
// Configuration

TEST(Config, JsonRoundTrip) {
  RunConfig c = toy_preset(Variant::kPrompt);
  c.seed = 99;
  c.backend.position_scale = 0.5;
  c.optimizer.weight_decay = 0.01;
  c.focal.gamma = 1.5;
  c.role_block = RoleBlock::kAfterContext;
  c.disable_cca = true;
  const RunConfig back = config_from_json(to_json(c), defaults_for(Variant::kSpan));
  EXPECT_EQ(to_json(back), to_json(c));
}

TEST(Config, PartialFileKeepsDefaults) {
  const RunConfig c = config_from_json(nlohmann::json::parse(R"({"optimizer": {"head_lr": 0.5}})"), span_defaults());
  EXPECT_EQ(c.optimizer.head_lr, 0.5);
  EXPECT_EQ(c.optimizer.backbone_lr, span_defaults().optimizer.backbone_lr);
  const RunConfig p = config_from_json(nlohmann::json::parse(R"({"variant": "prompt"})"), span_defaults());
  EXPECT_EQ(to_json(p), to_json(prompt_defaults()));
}

TEST(Config, ValidationErrors) {
  auto bad = [](const char* text) {
    return [text] { config_from_json(nlohmann::json::parse(text), span_defaults()); };
  };
  EXPECT_THROW(bad(R"({"backend": {"dim": 10, "heads": 4}})")(), std::invalid_argument);
  EXPECT_THROW(bad(R"({"backend": {"dropout": 1.0}})")(), std::invalid_argument);
  EXPECT_THROW(bad(R"({"structure": {"stride": 2000}})")(), std::invalid_argument);
  EXPECT_THROW(bad(R"({"loss": {"alpha": 0}})")(), std::invalid_argument);
  EXPECT_THROW(bad(R"({"variant": "tagger"})")(), std::invalid_argument);
  EXPECT_THROW(bad(R"({"structure": {"role_block": "middle"}})")(), std::invalid_argument);
  EXPECT_THROW(load_config("/nonexistent/config.json", span_defaults()), DataError);
}

TEST(Config, ReferenceDefaults) {
  const RunConfig s = span_defaults();
  EXPECT_EQ(s.optimizer.backbone_lr, 3e-5);
  EXPECT_EQ(s.optimizer.head_lr, 1e-4);
  EXPECT_EQ(s.optimizer.warmup_ratio, 0.2);
  EXPECT_EQ(s.optimizer.batch_size, 4);
  EXPECT_EQ(s.optimizer.epochs, 50);
  EXPECT_EQ(s.focal.alpha, 10.0);
  EXPECT_EQ(s.focal.gamma, 2.0);
  EXPECT_EQ(s.max_span_length, 8);
  EXPECT_EQ(s.window, 1024);
  EXPECT_EQ(s.stride, 512);
  const RunConfig p = prompt_defaults();
  EXPECT_EQ(p.optimizer.backbone_lr, 2e-5);
  EXPECT_EQ(p.optimizer.steps, 10000);
  EXPECT_EQ(p.optimizer.max_grad_norm, 5.0);
  EXPECT_EQ(p.max_span_length, 10);
  EXPECT_EQ(p.context_window, 250);
  EXPECT_EQ(p.role_block, RoleBlock::kBeforeContext);
  const RunConfig t = toy_preset(Variant::kSpan);
  EXPECT_EQ(t.backend.layers, 2);
  EXPECT_EQ(t.backend.dim, 64);
  EXPECT_EQ(t.backend.heads, 4);
}

}  // namespace
}  // namespace carlg
