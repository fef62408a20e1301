#include "xal/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <deque>
#include <fstream>
#include <limits>

#include <json.hpp>

#include "xal/tape.hpp"

namespace xal {

namespace {
constexpr double kLnEps = 1e-5;
constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr double kImpossible = -1e30;  // transitions at or below this never spawn beams
}  // namespace

// ---------------------------------------------------------------------------
// Tokenizer

HashTokenizer::HashTokenizer(int vocab_size) : vocab_size_(vocab_size) {
  if (vocab_size_ <= kNumReserved) throw ConfigError("vocab_size must exceed reserved ids");
}

int HashTokenizer::token_id(const std::string& token) const {
  const uint64_t h = fnv1a(token);
  return kNumReserved + static_cast<int>(h % static_cast<uint64_t>(vocab_size_ - kNumReserved));
}

HashTokenizer::Encoded HashTokenizer::encode(const std::string& text, int cap) const {
  Encoded out;
  const auto tokens = split_whitespace(text);
  for (const auto& t : tokens) {
    if (static_cast<int>(out.ids.size()) >= cap) {
      out.truncated = true;
      break;
    }
    out.ids.push_back(token_id(t));
  }
  return out;
}

void HashTokenizer::observe(const std::string& text) {
  for (const auto& t : split_whitespace(text)) {
    memo_.emplace(token_id(t), t);  // first surface form wins
  }
}

std::string HashTokenizer::detokenize(std::span<const int> ids) const {
  std::string out;
  for (int id : ids) {
    if (!out.empty()) out += ' ';
    auto it = memo_.find(id);
    if (it != memo_.end()) {
      out += it->second;
    } else {
      out += "<tok" + std::to_string(id) + ">";
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Beam search

namespace {

struct LiveBeam {
  std::vector<int> tokens;
  double sum_lp = 0.0;

  double report_score() const {
    return tokens.empty() ? kNegInf : sum_lp / static_cast<double>(tokens.size());
  }
};

bool lex_less(const std::vector<int>& a, const std::vector<int>& b) {
  return std::lexicographical_compare(a.begin(), a.end(), b.begin(), b.end());
}

}  // namespace

BeamHypothesis beam_search(const StepDecoder& decoder, int beam_width, int eos_id, int max_len) {
  if (beam_width < 1) throw ValidationError("beam_search: beam_width must be >= 1");
  if (max_len < 1) throw ValidationError("beam_search: max_len must be >= 1");

  struct Cached {
    std::unique_ptr<StepDecoder::State> state;
    std::vector<double> lps;
  };
  // Prefix -> decoder state/logprobs, shared across lanes; only prefixes of
  // the current depth are retained.
  std::map<std::vector<int>, Cached> cache;
  {
    Cached root;
    root.state = decoder.initial_state();
    root.lps = decoder.next_logprobs(*root.state);
    cache.emplace(std::vector<int>{}, std::move(root));
  }

  // Lanes of widths 1..W evolve independently; the union of their completed
  // hypotheses makes the result monotone in the width.
  std::vector<std::vector<LiveBeam>> lanes(static_cast<size_t>(beam_width), {LiveBeam{}});

  std::optional<BeamHypothesis> best_completed;
  auto offer_completed = [&](std::vector<int> tokens, double score) {
    if (!best_completed || score > best_completed->score ||
        (score == best_completed->score && lex_less(tokens, best_completed->tokens))) {
      best_completed = BeamHypothesis{std::move(tokens), score, true};
    }
  };

  struct Child {
    const LiveBeam* parent;
    int symbol;
    double rank_score;  // mean over emitted steps, end step included
  };

  // Depths 0..max_len-1 extend prefixes; at depth max_len only the end
  // token may still be taken, so full-cap sequences can complete.
  for (int depth = 0; depth <= max_len; ++depth) {
    const bool at_cap = depth == max_len;
    std::map<std::vector<int>, Cached> next_cache;
    bool any_live = false;
    for (int w = 0; w < beam_width; ++w) {
      auto& lane = lanes[w];
      if (lane.empty()) continue;
      any_live = true;

      std::vector<Child> children;
      for (const auto& beam : lane) {
        const Cached& c = cache.at(beam.tokens);
        const double denom = static_cast<double>(beam.tokens.size()) + 1.0;
        for (int v = 0; v < decoder.vocab_size(); ++v) {
          if (c.lps[v] <= kImpossible) continue;
          if (at_cap && v != eos_id) continue;
          children.push_back({&beam, v, (beam.sum_lp + c.lps[v]) / denom});
        }
      }
      const size_t keep = std::min(children.size(), static_cast<size_t>(w + 1));
      std::partial_sort(children.begin(), children.begin() + static_cast<std::ptrdiff_t>(keep),
                        children.end(), [](const Child& a, const Child& b) {
                          if (a.rank_score != b.rank_score) return a.rank_score > b.rank_score;
                          if (a.parent->tokens != b.parent->tokens)
                            return lex_less(a.parent->tokens, b.parent->tokens);
                          return a.symbol < b.symbol;
                        });

      std::vector<LiveBeam> next_lane;
      for (size_t i = 0; i < keep; ++i) {
        const Child& ch = children[i];
        if (ch.symbol == eos_id) {
          offer_completed(ch.parent->tokens, ch.parent->report_score());
          continue;  // completed hypotheses retire their slot
        }
        LiveBeam nb;
        nb.tokens = ch.parent->tokens;
        nb.tokens.push_back(ch.symbol);
        nb.sum_lp = ch.parent->sum_lp + cache.at(ch.parent->tokens).lps[ch.symbol];
        const Cached& pc = cache.at(ch.parent->tokens);
        auto it = next_cache.find(nb.tokens);
        if (it == next_cache.end()) {
          Cached c2;
          c2.state = decoder.advanced(*pc.state, ch.symbol);
          c2.lps = decoder.next_logprobs(*c2.state);
          next_cache.emplace(nb.tokens, std::move(c2));
        }
        next_lane.push_back(std::move(nb));
      }
      if (!at_cap) lane = std::move(next_lane);  // cap-length prefixes stay as partials
    }
    if (!any_live) break;
    if (!at_cap) cache = std::move(next_cache);
  }

  if (best_completed) return *best_completed;

  // Nothing completed within the cap: hand back the best live prefix.
  BeamHypothesis partial;
  partial.score = kNegInf;
  bool found = false;
  for (const auto& lane : lanes) {
    for (const auto& beam : lane) {
      const double s = beam.report_score();
      if (!found || s > partial.score || (s == partial.score && lex_less(beam.tokens, partial.tokens))) {
        partial.tokens = beam.tokens;
        partial.score = s;
        found = true;
      }
    }
  }
  partial.completed = false;
  return partial;
}

// ---------------------------------------------------------------------------
// Snapshot serialization

namespace {
constexpr char kSnapshotMagic[9] = "XALSNAP1";

nlohmann::json config_to_json(const ModelConfig& c) {
  return {{"dim", c.dim},
          {"vocab_size", c.vocab_size},
          {"ff_dim", c.ff_dim},
          {"num_classes", c.num_classes},
          {"max_src_tokens", c.max_src_tokens},
          {"max_gen_tokens", c.max_gen_tokens},
          {"beam_width", c.beam_width}};
}

ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.dim = j.at("dim").get<int>();
  c.vocab_size = j.at("vocab_size").get<int>();
  c.ff_dim = j.at("ff_dim").get<int>();
  c.num_classes = j.at("num_classes").get<int>();
  c.max_src_tokens = j.at("max_src_tokens").get<int>();
  c.max_gen_tokens = j.at("max_gen_tokens").get<int>();
  c.beam_width = j.at("beam_width").get<int>();
  return c;
}
}  // namespace

void ModelSnapshot::save(const std::filesystem::path& path) const {
  nlohmann::json header;
  header["schema_version"] = 1;
  header["config"] = config_to_json(config);
  header["fingerprint"] = {{"init_seed", fingerprint.init_seed},
                           {"epochs", fingerprint.epochs},
                           {"data_hash", fingerprint.data_hash},
                           {"steps", fingerprint.steps}};
  header["param_count"] = params.size();
  nlohmann::json memo = nlohmann::json::array();
  for (const auto& [id, tok] : token_memo) memo.push_back({id, tok});
  header["token_memo"] = memo;

  const std::string hs = header.dump();
  std::string blob;
  blob.reserve(8 + 4 + hs.size() + params.size() * sizeof(double));
  blob.append(kSnapshotMagic, 8);
  const uint32_t hlen = static_cast<uint32_t>(hs.size());
  blob.append(reinterpret_cast<const char*>(&hlen), 4);
  blob.append(hs);
  blob.append(reinterpret_cast<const char*>(params.data()), params.size() * sizeof(double));
  write_text_file_atomic(path, blob);
}

ModelSnapshot ModelSnapshot::load(const std::filesystem::path& path) {
  const std::string blob = read_text_file(path);
  if (blob.size() < 12 || std::memcmp(blob.data(), kSnapshotMagic, 8) != 0) {
    throw ParseError("not a model snapshot: " + path.string());
  }
  uint32_t hlen = 0;
  std::memcpy(&hlen, blob.data() + 8, 4);
  if (blob.size() < 12 + hlen) throw ParseError("truncated snapshot header: " + path.string());
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(blob.substr(12, hlen));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("bad snapshot header: ") + e.what());
  }

  ModelSnapshot snap;
  snap.config = config_from_json(header.at("config"));
  const auto& fp = header.at("fingerprint");
  snap.fingerprint.init_seed = fp.at("init_seed").get<uint64_t>();
  snap.fingerprint.epochs = fp.at("epochs").get<int>();
  snap.fingerprint.data_hash = fp.at("data_hash").get<uint64_t>();
  snap.fingerprint.steps = fp.at("steps").get<uint64_t>();
  for (const auto& entry : header.at("token_memo")) {
    snap.token_memo[entry.at(0).get<int>()] = entry.at(1).get<std::string>();
  }
  const size_t count = header.at("param_count").get<size_t>();
  if (blob.size() != 12 + hlen + count * sizeof(double)) {
    throw ParseError("snapshot parameter blob size mismatch: " + path.string());
  }
  snap.params.resize(count);
  std::memcpy(snap.params.data(), blob.data() + 12 + hlen, count * sizeof(double));
  return snap;
}

// ---------------------------------------------------------------------------
// Forward backends. Both expose the same op set over the shared linalg
// kernels; EvalBackend computes values directly, TapeBackend records onto an
// autodiff tape. The loss composition below is written once against this
// interface, so gradients and evaluation can never drift apart.

namespace {

class EvalBackend {
 public:
  using V = const Mat*;

  V hold(Mat m) {
    arena_.push_back(std::move(m));
    return &arena_.back();
  }
  V matmul(V a, V b) { return hold(xal::matmul(*a, *b)); }
  V matmul_nt(V a, V b) { return hold(xal::matmul_nt(*a, *b)); }
  V add(V a, V b) {
    Mat out = *a;
    for (size_t i = 0; i < out.v.size(); ++i) out.v[i] += b->v[i];
    return hold(std::move(out));
  }
  V add_rowvec(V a, V b) {
    Mat out = *a;
    for (int r = 0; r < out.rows; ++r)
      for (int c = 0; c < out.cols; ++c) out.at(r, c) += b->at(0, c);
    return hold(std::move(out));
  }
  V mul_rowvec(V a, V b) {
    Mat out = *a;
    for (int r = 0; r < out.rows; ++r)
      for (int c = 0; c < out.cols; ++c) out.at(r, c) *= b->at(0, c);
    return hold(std::move(out));
  }
  V scale(V a, double s) {
    Mat out = *a;
    for (double& x : out.v) x *= s;
    return hold(std::move(out));
  }
  V add_const(V a, Mat c) {
    Mat out = *a;
    for (size_t i = 0; i < out.v.size(); ++i) out.v[i] += c.v[i];
    return hold(std::move(out));
  }
  V tanh_act(V a) {
    Mat out = *a;
    for (double& x : out.v) x = std::tanh(x);
    return hold(std::move(out));
  }
  V softmax_rows(V a) {
    Mat out = *a;
    for (int r = 0; r < out.rows; ++r) softmax_row_inplace(out.row(r));
    return hold(std::move(out));
  }
  V log_softmax_rows(V a) {
    Mat out(a->rows, a->cols);
    for (int r = 0; r < a->rows; ++r) {
      auto ls = log_softmax(a->row(r));
      for (int c = 0; c < a->cols; ++c) out.at(r, c) = ls[c];
    }
    return hold(std::move(out));
  }
  V gather_rows(V table, const std::vector<int>& ids) {
    Mat out(static_cast<int>(ids.size()), table->cols);
    for (size_t i = 0; i < ids.size(); ++i)
      for (int c = 0; c < table->cols; ++c) out.at(static_cast<int>(i), c) = table->at(ids[i], c);
    return hold(std::move(out));
  }
  V pick_row(V a, int r) {
    Mat out(1, a->cols);
    for (int c = 0; c < a->cols; ++c) out.at(0, c) = a->at(r, c);
    return hold(std::move(out));
  }
  V pick(V a, int r, int c) {
    Mat out(1, 1);
    out.at(0, 0) = a->at(r, c);
    return hold(std::move(out));
  }
  V hinge(V a) {
    Mat out = *a;
    for (double& x : out.v) x = x > 0.0 ? x : 0.0;
    return hold(std::move(out));
  }
  V layer_norm_rows(V a, double eps) { return hold(layer_norm_rows_fwd(*a, eps)); }

  // Inverted dropout, active only when armed via with_dropout().
  V dropout(V a) {
    if (rate_ <= 0.0 || rng_ == nullptr) return a;
    Mat out = *a;
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const double keep = 1.0 - rate_;
    for (double& x : out.v) x = (u(*rng_) < rate_) ? 0.0 : x / keep;
    return hold(std::move(out));
  }
  void with_dropout(double rate, Rng* rng) {
    rate_ = rate;
    rng_ = rng;
  }

  double scalar(V a) const { return a->at(0, 0); }
  const Mat& value(V a) const { return *a; }

 private:
  std::deque<Mat> arena_;
  double rate_ = 0.0;
  Rng* rng_ = nullptr;
};

class TapeBackend {
 public:
  using V = tape::Tape::Var;

  explicit TapeBackend(tape::Tape& t) : t_(t) {}

  V hold(Mat m) { return t_.leaf(std::move(m)); }
  V matmul(V a, V b) { return t_.matmul(a, b); }
  V matmul_nt(V a, V b) { return t_.matmul_nt(a, b); }
  V add(V a, V b) { return t_.add(a, b); }
  V add_rowvec(V a, V b) { return t_.add_rowvec(a, b); }
  V mul_rowvec(V a, V b) { return t_.mul_rowvec(a, b); }
  V scale(V a, double s) { return t_.scale(a, s); }
  V add_const(V a, Mat c) { return t_.add_const(a, std::move(c)); }
  V tanh_act(V a) { return t_.tanh_act(a); }
  V softmax_rows(V a) { return t_.softmax_rows(a); }
  V log_softmax_rows(V a) { return t_.log_softmax_rows(a); }
  V gather_rows(V table, const std::vector<int>& ids) { return t_.gather_rows(table, ids); }
  V pick_row(V a, int r) { return t_.pick_row(a, r); }
  V pick(V a, int r, int c) { return t_.pick(a, r, c); }
  V hinge(V a) { return t_.hinge(a); }
  V layer_norm_rows(V a, double eps) { return t_.layer_norm_rows(a, eps); }
  V dropout(V a) { return a; }  // training path runs without dropout

  double scalar(V a) const { return t_.scalar(a); }
  const Mat& value(V a) const { return t_.val(a); }

 private:
  tape::Tape& t_;
};

// Shared forward pass over either backend.
template <class B>
struct Forward {
  B& b;
  const TinyEncDec& m;
  std::array<typename B::V, static_cast<size_t>(ParamBlock::kCount)> p;

  Forward(B& backend, const TinyEncDec& model) : b(backend), m(model) {
    for (int i = 0; i < static_cast<int>(ParamBlock::kCount); ++i) {
      p[i] = b.hold(m.block_mat(static_cast<ParamBlock>(i)));
    }
  }

  typename B::V param(ParamBlock blk) const { return p[static_cast<size_t>(blk)]; }

  typename B::V layer_norm(typename B::V x, ParamBlock gain, ParamBlock bias) {
    return b.add_rowvec(b.mul_rowvec(b.layer_norm_rows(x, kLnEps), param(gain)), param(bias));
  }

  typename B::V attention(typename B::V q_in, typename B::V kv_in, ParamBlock wq, ParamBlock wk,
                          ParamBlock wv, ParamBlock wo, const Mat* mask) {
    auto q = b.matmul(q_in, param(wq));
    auto k = b.matmul(kv_in, param(wk));
    auto v = b.matmul(kv_in, param(wv));
    auto scores = b.scale(b.matmul_nt(q, k), 1.0 / std::sqrt(static_cast<double>(m.config().dim)));
    if (mask) scores = b.add_const(scores, *mask);
    auto attn = b.softmax_rows(scores);
    return b.matmul(b.matmul(attn, v), param(wo));
  }

  typename B::V feed_forward(typename B::V x, ParamBlock w1, ParamBlock b1, ParamBlock w2,
                             ParamBlock b2) {
    auto h = b.tanh_act(b.add_rowvec(b.matmul(x, param(w1)), param(b1)));
    return b.add_rowvec(b.matmul(h, param(w2)), param(b2));
  }

  Mat position_slice(int rows) const {
    Mat out(rows, m.config().dim);
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < m.config().dim; ++c) out.at(r, c) = m.positions().at(r, c);
    return out;
  }

  static Mat causal_mask(int n) {
    Mat mask(n, n);
    for (int r = 0; r < n; ++r)
      for (int c = r + 1; c < n; ++c) mask.at(r, c) = 2.0 * kImpossible;
    return mask;
  }

  // ids must start with the sentinel token. Returns final encoder states.
  typename B::V encode(const std::vector<int>& ids) {
    auto x = b.gather_rows(param(ParamBlock::kEmbed), ids);
    x = b.add_const(x, position_slice(static_cast<int>(ids.size())));
    x = b.dropout(x);
    auto xn = layer_norm(x, ParamBlock::kEncLn1G, ParamBlock::kEncLn1B);
    auto a = attention(xn, xn, ParamBlock::kEncWq, ParamBlock::kEncWk, ParamBlock::kEncWv,
                       ParamBlock::kEncWo, nullptr);
    x = b.add(x, b.dropout(a));
    auto f = feed_forward(layer_norm(x, ParamBlock::kEncLn2G, ParamBlock::kEncLn2B),
                          ParamBlock::kEncFfW1, ParamBlock::kEncFfB1, ParamBlock::kEncFfW2,
                          ParamBlock::kEncFfB2);
    x = b.add(x, b.dropout(f));
    return layer_norm(x, ParamBlock::kEncLnfG, ParamBlock::kEncLnfB);
  }

  typename B::V class_log_softmax(typename B::V enc_states) {
    auto h0 = b.pick_row(enc_states, 0);
    auto logits = b.add_rowvec(b.matmul(h0, param(ParamBlock::kClsW)), param(ParamBlock::kClsB));
    return b.log_softmax_rows(logits);
  }

  // Teacher-forced decoder; dec_ids = BOS followed by content ids. Returns
  // log-softmax rows, one per decoder position.
  typename B::V decode_log_softmax(const std::vector<int>& dec_ids, typename B::V enc_states) {
    const int n = static_cast<int>(dec_ids.size());
    auto y = b.gather_rows(param(ParamBlock::kEmbed), dec_ids);
    y = b.add_const(y, position_slice(n));
    y = b.dropout(y);
    Mat mask = causal_mask(n);
    auto yn = layer_norm(y, ParamBlock::kDecLn1G, ParamBlock::kDecLn1B);
    auto a = attention(yn, yn, ParamBlock::kDecWq, ParamBlock::kDecWk, ParamBlock::kDecWv,
                       ParamBlock::kDecWo, &mask);
    y = b.add(y, b.dropout(a));
    auto c = attention(layer_norm(y, ParamBlock::kDecLn2G, ParamBlock::kDecLn2B), enc_states,
                       ParamBlock::kDecCrossWq, ParamBlock::kDecCrossWk, ParamBlock::kDecCrossWv,
                       ParamBlock::kDecCrossWo, nullptr);
    y = b.add(y, b.dropout(c));
    auto f = feed_forward(layer_norm(y, ParamBlock::kDecLn3G, ParamBlock::kDecLn3B),
                          ParamBlock::kDecFfW1, ParamBlock::kDecFfB1, ParamBlock::kDecFfW2,
                          ParamBlock::kDecFfB2);
    y = b.add(y, b.dropout(f));
    auto yf = layer_norm(y, ParamBlock::kDecLnfG, ParamBlock::kDecLnfB);
    auto logits = b.add_rowvec(b.matmul(yf, param(ParamBlock::kOutW)), param(ParamBlock::kOutB));
    return b.log_softmax_rows(logits);
  }
};

}  // namespace

// ---------------------------------------------------------------------------
// TinyEncDec

TinyEncDec::TinyEncDec(ModelConfig config, uint64_t init_seed)
    : config_(config), tokenizer_(config.vocab_size) {
  if (config_.dim < 2 || config_.num_classes < 2) throw ConfigError("TinyEncDec: invalid config");
  build_layout();
  init_params(init_seed);
  fingerprint_.init_seed = init_seed;
}

TinyEncDec::TinyEncDec(const ModelSnapshot& snapshot)
    : config_(snapshot.config), tokenizer_(snapshot.config.vocab_size) {
  build_layout();
  if (snapshot.params.size() != num_params_) throw ParseError("snapshot parameter count mismatch");
  params_ = snapshot.params;
  tokenizer_.set_memo(snapshot.token_memo);
  fingerprint_ = snapshot.fingerprint;
}

void TinyEncDec::build_layout() {
  const int d = config_.dim;
  const int v = config_.vocab_size;
  const int ff = config_.ff_dim;
  const int c = config_.num_classes;

  layout_.assign(static_cast<size_t>(ParamBlock::kCount), {});
  auto set = [&](ParamBlock blk, int rows, int cols) {
    layout_[static_cast<size_t>(blk)] = {rows, cols, 0};
  };
  set(ParamBlock::kEmbed, v, d);
  for (ParamBlock blk : {ParamBlock::kEncWq, ParamBlock::kEncWk, ParamBlock::kEncWv,
                         ParamBlock::kEncWo, ParamBlock::kDecWq, ParamBlock::kDecWk,
                         ParamBlock::kDecWv, ParamBlock::kDecWo, ParamBlock::kDecCrossWq,
                         ParamBlock::kDecCrossWk, ParamBlock::kDecCrossWv, ParamBlock::kDecCrossWo}) {
    set(blk, d, d);
  }
  for (ParamBlock blk :
       {ParamBlock::kEncLn1G, ParamBlock::kEncLn1B, ParamBlock::kEncLn2G, ParamBlock::kEncLn2B,
        ParamBlock::kEncLnfG, ParamBlock::kEncLnfB, ParamBlock::kDecLn1G, ParamBlock::kDecLn1B,
        ParamBlock::kDecLn2G, ParamBlock::kDecLn2B, ParamBlock::kDecLn3G, ParamBlock::kDecLn3B,
        ParamBlock::kDecLnfG, ParamBlock::kDecLnfB}) {
    set(blk, 1, d);
  }
  set(ParamBlock::kEncFfW1, d, ff);
  set(ParamBlock::kEncFfB1, 1, ff);
  set(ParamBlock::kEncFfW2, ff, d);
  set(ParamBlock::kEncFfB2, 1, d);
  set(ParamBlock::kDecFfW1, d, ff);
  set(ParamBlock::kDecFfB1, 1, ff);
  set(ParamBlock::kDecFfW2, ff, d);
  set(ParamBlock::kDecFfB2, 1, d);
  set(ParamBlock::kClsW, d, c);
  set(ParamBlock::kClsB, 1, c);
  set(ParamBlock::kOutW, d, v);
  set(ParamBlock::kOutB, 1, v);

  size_t offset = 0;
  for (auto& s : layout_) {
    s.offset = offset;
    offset += static_cast<size_t>(s.rows) * s.cols;
  }
  num_params_ = offset;
  params_.assign(num_params_, 0.0);

  const int pos_rows = std::max(config_.max_src_tokens + 1, config_.max_gen_tokens + 2);
  positions_ = Mat(pos_rows, config_.dim);
  for (int t = 0; t < pos_rows; ++t) {
    for (int i = 0; i * 2 < config_.dim; ++i) {
      const double denom = std::pow(10000.0, (2.0 * i) / config_.dim);
      positions_.at(t, 2 * i) = std::sin(t / denom);
      if (2 * i + 1 < config_.dim) positions_.at(t, 2 * i + 1) = std::cos(t / denom);
    }
  }
}

void TinyEncDec::init_params(uint64_t seed) {
  Rng rng = make_rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int i = 0; i < static_cast<int>(ParamBlock::kCount); ++i) {
    const ParamBlock blk = static_cast<ParamBlock>(i);
    const BlockShape& s = layout_[static_cast<size_t>(i)];
    std::span<double> dst(params_.data() + s.offset, static_cast<size_t>(s.rows) * s.cols);
    switch (blk) {
      case ParamBlock::kEncLn1G:
      case ParamBlock::kEncLn2G:
      case ParamBlock::kEncLnfG:
      case ParamBlock::kDecLn1G:
      case ParamBlock::kDecLn2G:
      case ParamBlock::kDecLn3G:
      case ParamBlock::kDecLnfG:
        for (double& x : dst) x = 1.0;
        break;
      case ParamBlock::kEncLn1B:
      case ParamBlock::kEncLn2B:
      case ParamBlock::kEncLnfB:
      case ParamBlock::kDecLn1B:
      case ParamBlock::kDecLn2B:
      case ParamBlock::kDecLn3B:
      case ParamBlock::kDecLnfB:
      case ParamBlock::kEncFfB1:
      case ParamBlock::kEncFfB2:
      case ParamBlock::kDecFfB1:
      case ParamBlock::kDecFfB2:
      case ParamBlock::kOutB:
      case ParamBlock::kClsW:  // zero head: untrained classifier is uniform
      case ParamBlock::kClsB:
        break;  // zeros
      case ParamBlock::kEmbed:
        for (double& x : dst) x = 0.5 * normal(rng);
        break;
      default: {
        const double std_dev = std::sqrt(2.0 / (s.rows + s.cols));
        for (double& x : dst) x = std_dev * normal(rng);
        break;
      }
    }
  }
}

Mat TinyEncDec::block_mat(ParamBlock b) const {
  const BlockShape& s = layout_[static_cast<size_t>(b)];
  Mat out(s.rows, s.cols);
  std::copy_n(params_.data() + s.offset, out.v.size(), out.v.data());
  return out;
}

std::span<double> TinyEncDec::block(ParamBlock b) {
  const BlockShape& s = layout_[static_cast<size_t>(b)];
  return {params_.data() + s.offset, static_cast<size_t>(s.rows) * s.cols};
}

std::vector<int> TinyEncDec::encoder_ids(const std::string& text, bool* truncated) const {
  auto enc = tokenizer_.encode(text, config_.max_src_tokens);
  if (truncated) *truncated = enc.truncated;
  std::vector<int> ids;
  ids.reserve(enc.ids.size() + 1);
  ids.push_back(HashTokenizer::kCls);
  ids.insert(ids.end(), enc.ids.begin(), enc.ids.end());
  return ids;
}

EncoderStates TinyEncDec::encode(const std::string& text) const {
  EncoderStates out;
  const std::vector<int> ids = encoder_ids(text, &out.truncated);
  EvalBackend b;
  Forward<EvalBackend> fwd(b, *this);
  out.states = b.value(fwd.encode(ids));
  return out;
}

ProbDist TinyEncDec::classify(const std::string& text) const {
  const std::vector<int> ids = encoder_ids(text, nullptr);
  EvalBackend b;
  Forward<EvalBackend> fwd(b, *this);
  auto lsm = fwd.class_log_softmax(fwd.encode(ids));
  ProbDist dist;
  dist.p.resize(config_.num_classes);
  for (int c = 0; c < config_.num_classes; ++c) dist.p[c] = std::exp(b.value(lsm).at(0, c));
  return dist;
}

std::vector<double> TinyEncDec::sentence_embedding(const std::string& text) const {
  return encode(text).h0();
}

std::vector<ProbDist> TinyEncDec::stochastic_classify(const std::string& text, int samples,
                                                      double dropout_rate, uint64_t seed) const {
  if (samples < 1) throw ValidationError("stochastic_classify: samples must be >= 1");
  if (dropout_rate < 0.0 || dropout_rate >= 1.0)
    throw ValidationError("stochastic_classify: dropout_rate must be in [0, 1)");
  const std::vector<int> ids = encoder_ids(text, nullptr);
  Rng rng = make_rng(seed);
  std::vector<ProbDist> out;
  out.reserve(static_cast<size_t>(samples));
  for (int t = 0; t < samples; ++t) {
    EvalBackend b;
    b.with_dropout(dropout_rate, &rng);
    Forward<EvalBackend> fwd(b, *this);
    auto lsm = fwd.class_log_softmax(fwd.encode(ids));
    ProbDist dist;
    dist.p.resize(config_.num_classes);
    for (int c = 0; c < config_.num_classes; ++c) dist.p[c] = std::exp(b.value(lsm).at(0, c));
    out.push_back(std::move(dist));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Incremental decoding for beam search. Mirrors Forward::decode_log_softmax
// position by position; self-attention keys/values are cached per prefix.

namespace {

struct RowOps {
  // y = x * W for a single row
  static std::vector<double> matvec(std::span<const double> x, const Mat& w) {
    std::vector<double> out(w.cols, 0.0);
    for (int r = 0; r < w.rows; ++r) {
      const double xr = x[r];
      if (xr == 0.0) continue;
      const double* wrow = w.v.data() + static_cast<size_t>(r) * w.cols;
      for (int c = 0; c < w.cols; ++c) out[c] += xr * wrow[c];
    }
    return out;
  }

  static std::vector<double> layer_norm(std::span<const double> x, const Mat& gain, const Mat& bias) {
    const int n = static_cast<int>(x.size());
    double mean = 0.0;
    for (double v : x) mean += v;
    mean /= n;
    double var = 0.0;
    for (double v : x) {
      const double d = v - mean;
      var += d * d;
    }
    var /= n;
    const double s = 1.0 / std::sqrt(var + kLnEps);
    std::vector<double> out(x.size());
    for (int i = 0; i < n; ++i) out[i] = ((x[i] - mean) * s) * gain.at(0, i) + bias.at(0, i);
    return out;
  }
};

}  // namespace

class TinyStepDecoder final : public StepDecoder {
 public:
  TinyStepDecoder(const TinyEncDec& model, Mat enc_states)
      : model_(model),
        embed_(model.block_mat(ParamBlock::kEmbed)),
        wq_(model.block_mat(ParamBlock::kDecWq)),
        wk_(model.block_mat(ParamBlock::kDecWk)),
        wv_(model.block_mat(ParamBlock::kDecWv)),
        wo_(model.block_mat(ParamBlock::kDecWo)),
        ln1g_(model.block_mat(ParamBlock::kDecLn1G)),
        ln1b_(model.block_mat(ParamBlock::kDecLn1B)),
        cwq_(model.block_mat(ParamBlock::kDecCrossWq)),
        cwo_(model.block_mat(ParamBlock::kDecCrossWo)),
        ln2g_(model.block_mat(ParamBlock::kDecLn2G)),
        ln2b_(model.block_mat(ParamBlock::kDecLn2B)),
        ffw1_(model.block_mat(ParamBlock::kDecFfW1)),
        ffb1_(model.block_mat(ParamBlock::kDecFfB1)),
        ffw2_(model.block_mat(ParamBlock::kDecFfW2)),
        ffb2_(model.block_mat(ParamBlock::kDecFfB2)),
        ln3g_(model.block_mat(ParamBlock::kDecLn3G)),
        ln3b_(model.block_mat(ParamBlock::kDecLn3B)),
        lnfg_(model.block_mat(ParamBlock::kDecLnfG)),
        lnfb_(model.block_mat(ParamBlock::kDecLnfB)),
        outw_(model.block_mat(ParamBlock::kOutW)),
        outb_(model.block_mat(ParamBlock::kOutB)),
        cross_k_(xal::matmul(enc_states, model.block_mat(ParamBlock::kDecCrossWk))),
        cross_v_(xal::matmul(enc_states, model.block_mat(ParamBlock::kDecCrossWv))) {}

  struct TinyState final : State {
    Mat self_k;
    Mat self_v;
    std::vector<double> next_lps;
    int len = 0;

    std::unique_ptr<State> clone() const override { return std::make_unique<TinyState>(*this); }
  };

  int vocab_size() const override { return model_.config().vocab_size; }

  std::unique_ptr<State> initial_state() const override {
    auto s = std::make_unique<TinyState>();
    s->self_k = Mat(0, model_.config().dim);
    s->self_v = Mat(0, model_.config().dim);
    extend(*s, HashTokenizer::kBos);
    return s;
  }

  std::unique_ptr<State> advanced(const State& s, int token) const override {
    auto next = std::make_unique<TinyState>(static_cast<const TinyState&>(s));
    extend(*next, token);
    return next;
  }

  std::vector<double> next_logprobs(const State& s) const override {
    return static_cast<const TinyState&>(s).next_lps;
  }

 private:
  void extend(TinyState& s, int token) const {
    const int d = model_.config().dim;
    const int pos = s.len;
    std::vector<double> x(static_cast<size_t>(d));
    for (int c = 0; c < d; ++c) x[c] = embed_.at(token, c) + model_.positions().at(pos, c);

    // causal self-attention over cached keys/values plus this position
    const auto xn = RowOps::layer_norm(x, ln1g_, ln1b_);
    const auto q = RowOps::matvec(xn, wq_);
    const auto k = RowOps::matvec(xn, wk_);
    const auto v = RowOps::matvec(xn, wv_);
    Mat grown_k(pos + 1, d), grown_v(pos + 1, d);
    std::copy(s.self_k.v.begin(), s.self_k.v.end(), grown_k.v.begin());
    std::copy(s.self_v.v.begin(), s.self_v.v.end(), grown_v.v.begin());
    for (int c = 0; c < d; ++c) {
      grown_k.at(pos, c) = k[c];
      grown_v.at(pos, c) = v[c];
    }
    s.self_k = std::move(grown_k);
    s.self_v = std::move(grown_v);

    const double scale = 1.0 / std::sqrt(static_cast<double>(d));
    std::vector<double> attn(static_cast<size_t>(pos) + 1);
    for (int j = 0; j <= pos; ++j) attn[j] = dot(q, s.self_k.row(j)) * scale;
    softmax_row_inplace(attn);
    std::vector<double> ctx(static_cast<size_t>(d), 0.0);
    for (int j = 0; j <= pos; ++j) {
      const double a = attn[j];
      auto row = s.self_v.row(j);
      for (int c = 0; c < d; ++c) ctx[c] += a * row[c];
    }
    auto self_out = RowOps::matvec(ctx, wo_);
    for (int c = 0; c < d; ++c) x[c] += self_out[c];

    // cross-attention to the encoder states
    const auto x2n = RowOps::layer_norm(x, ln2g_, ln2b_);
    const auto q2 = RowOps::matvec(x2n, cwq_);
    std::vector<double> cattn(static_cast<size_t>(cross_k_.rows));
    for (int j = 0; j < cross_k_.rows; ++j) cattn[j] = dot(q2, cross_k_.row(j)) * scale;
    softmax_row_inplace(cattn);
    std::vector<double> cctx(static_cast<size_t>(d), 0.0);
    for (int j = 0; j < cross_k_.rows; ++j) {
      const double a = cattn[j];
      auto row = cross_v_.row(j);
      for (int c = 0; c < d; ++c) cctx[c] += a * row[c];
    }
    auto cross_out = RowOps::matvec(cctx, cwo_);
    for (int c = 0; c < d; ++c) x[c] += cross_out[c];

    // feed forward
    const auto x3n = RowOps::layer_norm(x, ln3g_, ln3b_);
    auto h = RowOps::matvec(x3n, ffw1_);
    for (int c = 0; c < ffw1_.cols; ++c) h[c] = std::tanh(h[c] + ffb1_.at(0, c));
    auto ff_out = RowOps::matvec(h, ffw2_);
    for (int c = 0; c < d; ++c) x[c] += ff_out[c] + ffb2_.at(0, c);

    const auto yf = RowOps::layer_norm(x, lnfg_, lnfb_);
    auto logits = RowOps::matvec(yf, outw_);
    for (int c = 0; c < outw_.cols; ++c) logits[c] += outb_.at(0, c);
    s.next_lps = log_softmax(logits);
    s.len = pos + 1;
  }

  const TinyEncDec& model_;
  Mat embed_, wq_, wk_, wv_, wo_, ln1g_, ln1b_;
  Mat cwq_, cwo_, ln2g_, ln2b_;
  Mat ffw1_, ffb1_, ffw2_, ffb2_, ln3g_, ln3b_, lnfg_, lnfb_, outw_, outb_;
  Mat cross_k_, cross_v_;
};

Generation TinyEncDec::generate_explanation(const std::string& text, int beam_width) const {
  if (beam_width < 1) throw ValidationError("generate_explanation: beam_width must be >= 1");
  EncoderStates enc = encode(text);
  TinyStepDecoder decoder(*this, std::move(enc.states));
  BeamHypothesis hyp = beam_search(decoder, beam_width, HashTokenizer::kEos, config_.max_gen_tokens);
  Generation out;
  out.tokens = std::move(hyp.tokens);
  out.text = tokenizer_.detokenize(out.tokens);
  out.score = hyp.score;
  out.completed = hyp.completed;
  return out;
}

std::vector<double> TinyEncDec::token_logprobs_ids(const std::string& text,
                                                   std::span<const int> expl_ids,
                                                   bool include_eos) const {
  if (expl_ids.empty()) throw DegenerateInputError("token_logprobs: explanation has no tokens");
  const std::vector<int> src = encoder_ids(text, nullptr);
  std::vector<int> dec_in;
  dec_in.reserve(expl_ids.size() + 1);
  dec_in.push_back(HashTokenizer::kBos);
  dec_in.insert(dec_in.end(), expl_ids.begin(), expl_ids.end());

  EvalBackend b;
  Forward<EvalBackend> fwd(b, *this);
  auto enc_h = fwd.encode(src);
  auto lsm = fwd.decode_log_softmax(dec_in, enc_h);
  const Mat& rows = b.value(lsm);

  std::vector<double> out;
  out.reserve(expl_ids.size() + (include_eos ? 1 : 0));
  for (size_t t = 0; t < expl_ids.size(); ++t) {
    out.push_back(rows.at(static_cast<int>(t), expl_ids[t]));
  }
  if (include_eos) out.push_back(rows.at(static_cast<int>(expl_ids.size()), HashTokenizer::kEos));
  return out;
}

std::vector<double> TinyEncDec::token_logprobs(const std::string& text,
                                               const std::string& explanation) const {
  auto enc = tokenizer_.encode(explanation, config_.max_gen_tokens);
  if (enc.ids.empty()) throw DegenerateInputError("token_logprobs: explanation tokenizes empty");
  return token_logprobs_ids(text, enc.ids, /*include_eos=*/false);
}

// ---------------------------------------------------------------------------
// Loss. Composed once over the backend template: cls is cross-entropy on the
// gold label, gen is teacher-forced negative log-likelihood of the reasonable
// explanation (end-of-sequence step included), rank is the hinge on the
// length-normalized scores of all k explanations. Explanation scores count
// content tokens only.

namespace {

struct LossVars {
  double cls = 0.0;
  double gen = 0.0;
  double rank = 0.0;
};

template <class B>
LossVars compose_loss(B& b, Forward<B>& fwd, const TinyEncDec& model, const LossInputs& in,
                      double lambda1, double lambda2, typename B::V* total_out) {
  const auto& cfg = model.config();
  if (in.gold_label < 0 || in.gold_label >= cfg.num_classes)
    throw ValidationError("loss: gold label out of range");
  const bool needs_explanations = lambda1 > 0.0 || lambda2 > 0.0;
  if (needs_explanations && in.explanation_texts.empty())
    throw ConfigError("loss: explanations required when lambda1 or lambda2 > 0");

  auto src_enc = model.tokenizer().encode(in.input_text, cfg.max_src_tokens);
  std::vector<int> src_ids;
  src_ids.push_back(HashTokenizer::kCls);
  src_ids.insert(src_ids.end(), src_enc.ids.begin(), src_enc.ids.end());

  auto enc_h = fwd.encode(src_ids);
  auto cls_lsm = fwd.class_log_softmax(enc_h);
  auto cls_loss = b.scale(b.pick(cls_lsm, 0, in.gold_label), -1.0);

  typename B::V total = cls_loss;
  LossVars out;
  out.cls = b.scalar(cls_loss);

  if (!in.explanation_texts.empty()) {
    std::vector<typename B::V> scores;  // length-normalized, per explanation
    typename B::V gen_loss{};
    bool have_gen = false;

    for (size_t r = 0; r < in.explanation_texts.size(); ++r) {
      auto ids = model.tokenizer().encode(in.explanation_texts[r], cfg.max_gen_tokens).ids;
      if (ids.empty())
        throw DegenerateInputError("loss: explanation " + std::to_string(r) + " tokenizes empty");
      std::vector<int> dec_in;
      dec_in.push_back(HashTokenizer::kBos);
      dec_in.insert(dec_in.end(), ids.begin(), ids.end());
      auto lsm = fwd.decode_log_softmax(dec_in, enc_h);

      typename B::V content_sum{};
      for (size_t t = 0; t < ids.size(); ++t) {
        auto term = b.pick(lsm, static_cast<int>(t), ids[t]);
        content_sum = (t == 0) ? term : b.add(content_sum, term);
      }
      scores.push_back(b.scale(content_sum, 1.0 / static_cast<double>(ids.size())));

      if (r == 0) {
        auto eos_term = b.pick(lsm, static_cast<int>(ids.size()), HashTokenizer::kEos);
        gen_loss = b.scale(b.add(content_sum, eos_term), -1.0);
        have_gen = true;
      }
    }

    if (have_gen) {
      out.gen = b.scalar(gen_loss);
      if (lambda1 > 0.0) total = b.add(total, b.scale(gen_loss, lambda1));
    }

    if (scores.size() >= 2) {
      typename B::V rank_loss{};
      bool have_rank = false;
      auto neg_p0 = b.scale(scores[0], -1.0);
      for (size_t r = 1; r < scores.size(); ++r) {
        auto term = b.hinge(b.add(scores[r], neg_p0));
        rank_loss = have_rank ? b.add(rank_loss, term) : term;
        have_rank = true;
      }
      out.rank = b.scalar(rank_loss);
      if (lambda2 > 0.0) total = b.add(total, b.scale(rank_loss, lambda2));
    }
  }

  if (total_out) *total_out = total;
  return out;
}

}  // namespace

LossBreakdown TinyEncDec::loss(const LossInputs& in, double lambda1, double lambda2) const {
  EvalBackend b;
  Forward<EvalBackend> fwd(b, *this);
  EvalBackend::V total{};
  LossVars lv = compose_loss(b, fwd, *this, in, lambda1, lambda2, &total);
  return total_loss(lv.cls, lv.gen, lv.rank, lambda1, lambda2);
}

LossBreakdown TinyEncDec::loss_and_grad(const LossInputs& in, double lambda1, double lambda2,
                                        std::span<double> grad_accum) const {
  if (grad_accum.size() != num_params_) throw ValidationError("loss_and_grad: grad buffer size mismatch");
  tape::Tape t;
  TapeBackend b(t);
  Forward<TapeBackend> fwd(b, *this);
  TapeBackend::V total{};
  LossVars lv = compose_loss(b, fwd, *this, in, lambda1, lambda2, &total);
  t.backward(total);
  for (int i = 0; i < static_cast<int>(ParamBlock::kCount); ++i) {
    const BlockShape& s = layout_[static_cast<size_t>(i)];
    const Mat& g = t.grad(fwd.p[static_cast<size_t>(i)]);
    for (size_t j = 0; j < g.v.size(); ++j) grad_accum[s.offset + j] += g.v[j];
  }
  return total_loss(lv.cls, lv.gen, lv.rank, lambda1, lambda2);
}

ModelSnapshot TinyEncDec::make_snapshot() const {
  ModelSnapshot snap;
  snap.config = config_;
  snap.fingerprint = fingerprint_;
  snap.params = params_;
  snap.token_memo = tokenizer_.memo();
  return snap;
}

std::string model_input_text(const Example& e) {
  std::string out = e.text;
  if (e.text_pair) {
    out += ' ';
    out += *e.text_pair;
  }
  if (e.target) {
    out += ' ';
    out += *e.target;
  }
  return out;
}

}  // namespace xal
