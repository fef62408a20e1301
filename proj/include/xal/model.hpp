#pragma once

#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "xal/corpus.hpp"
#include "xal/linalg.hpp"
#include "xal/objective.hpp"

namespace xal {

// Whitespace tokenizer over a fixed-size hashed vocabulary. Ids 0..3 are
// reserved: 0 sentinel ([CLS]), 1 begin-of-sequence, 2 end-of-sequence,
// 3 unknown. Content tokens hash into [4, vocab_size).
//
// Hashing is not invertible, so the tokenizer keeps a first-seen memo of
// id -> surface string, fed via observe(). detokenize() falls back to a
// placeholder for ids never observed.
class HashTokenizer {
 public:
  static constexpr int kCls = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kUnk = 3;
  static constexpr int kNumReserved = 4;

  explicit HashTokenizer(int vocab_size);

  int vocab_size() const { return vocab_size_; }
  int token_id(const std::string& token) const;

  struct Encoded {
    std::vector<int> ids;  // content tokens only, no sentinel/BOS/EOS
    bool truncated = false;
  };
  Encoded encode(const std::string& text, int cap) const;

  void observe(const std::string& text);
  std::string detokenize(std::span<const int> ids) const;

  const std::map<int, std::string>& memo() const { return memo_; }
  void set_memo(std::map<int, std::string> memo) { memo_ = std::move(memo); }

 private:
  int vocab_size_;
  std::map<int, std::string> memo_;
};

struct EncoderStates {
  Mat states;  // (token count + 1) x d; row 0 is the sentinel state
  bool truncated = false;

  std::vector<double> h0() const {
    auto r = states.row(0);
    return {r.begin(), r.end()};
  }
};

struct Generation {
  std::vector<int> tokens;  // content token ids, no end marker
  std::string text;
  double score = 0.0;  // mean token log-probability of `tokens`
  bool completed = false;
};

// Incremental next-token model for beam search. State covers a consumed
// prefix (including the implicit begin marker).
class StepDecoder {
 public:
  struct State {
    virtual ~State() = default;
    virtual std::unique_ptr<State> clone() const = 0;
  };
  virtual ~StepDecoder() = default;
  virtual int vocab_size() const = 0;
  virtual std::unique_ptr<State> initial_state() const = 0;
  virtual std::unique_ptr<State> advanced(const State& s, int token) const = 0;
  // Log-probabilities of the next symbol given the state's prefix.
  virtual std::vector<double> next_logprobs(const State& s) const = 0;
};

struct BeamHypothesis {
  std::vector<int> tokens;
  double score = 0.0;  // mean log-probability over `tokens`
  bool completed = false;
};

// Beam search over a StepDecoder. Runs nested lanes of widths 1..beam_width
// so that results are monotone in the width: a wider search never returns a
// lower-scoring sequence. A hypothesis completes when the end token wins one
// of its lane's slots; transitions with log-probability <= -1e30 are treated
// as impossible. If nothing completes within max_len, the best live prefix
// is returned with completed=false.
BeamHypothesis beam_search(const StepDecoder& decoder, int beam_width, int eos_id, int max_len);

struct ModelConfig {
  int dim = 64;
  int vocab_size = 512;
  int ff_dim = 128;
  int num_classes = 2;
  int max_src_tokens = 64;  // encoder truncation cap (content tokens)
  int max_gen_tokens = 64;  // explanation length cap
  int beam_width = 4;
};

struct TrainingFingerprint {
  uint64_t init_seed = 0;
  int epochs = 0;
  uint64_t data_hash = 0;
  uint64_t steps = 0;

  bool operator==(const TrainingFingerprint&) const = default;
};

// Serialized model: config + fingerprint + raw parameter blob + tokenizer
// memo. Binary format round-trips doubles exactly.
struct ModelSnapshot {
  ModelConfig config;
  TrainingFingerprint fingerprint;
  std::vector<double> params;
  std::map<int, std::string> token_memo;

  void save(const std::filesystem::path& path) const;
  static ModelSnapshot load(const std::filesystem::path& path);
};

// The capability surface every classifier-explainer provides. All
// operations are const and safe for concurrent use on a fixed model.
class ClassifierExplainer {
 public:
  virtual ~ClassifierExplainer() = default;

  virtual int num_classes() const = 0;
  virtual EncoderStates encode(const std::string& text) const = 0;
  virtual ProbDist classify(const std::string& text) const = 0;
  virtual Generation generate_explanation(const std::string& text, int beam_width) const = 0;
  virtual std::vector<double> token_logprobs(const std::string& text,
                                             const std::string& explanation) const = 0;
  virtual std::vector<double> sentence_embedding(const std::string& text) const = 0;
  virtual std::vector<ProbDist> stochastic_classify(const std::string& text, int samples,
                                                    double dropout_rate, uint64_t seed) const = 0;
};

// Inputs for one training step: encoder text, gold label and the k
// explanation texts (index 0 reasonable). Explanations may be empty when
// both generation and ranking weights are zero.
struct LossInputs {
  std::string input_text;
  int gold_label = 0;
  std::vector<std::string> explanation_texts;
};

class TrainableModel : public ClassifierExplainer {
 public:
  virtual std::span<double> parameters() = 0;
  virtual std::span<const double> parameters() const = 0;

  virtual LossBreakdown loss(const LossInputs& in, double lambda1, double lambda2) const = 0;
  virtual LossBreakdown loss_and_grad(const LossInputs& in, double lambda1, double lambda2,
                                      std::span<double> grad_accum) const = 0;

  virtual void observe_text(const std::string& /*text*/) {}
  virtual ModelSnapshot make_snapshot() const = 0;
  virtual void set_fingerprint(const TrainingFingerprint& fp) = 0;
  virtual const TrainingFingerprint& fingerprint() const = 0;
};

// Concatenates the example fields the encoder sees: text, optional pair,
// optional target.
std::string model_input_text(const Example& e);

// Named parameter blocks of the reference model, exposed for tests and
// inspection tools.
enum class ParamBlock : int {
  kEmbed = 0,
  kEncWq, kEncWk, kEncWv, kEncWo,
  kEncLn1G, kEncLn1B,
  kEncFfW1, kEncFfB1, kEncFfW2, kEncFfB2,
  kEncLn2G, kEncLn2B,
  kEncLnfG, kEncLnfB,
  kClsW, kClsB,
  kDecWq, kDecWk, kDecWv, kDecWo,
  kDecLn1G, kDecLn1B,
  kDecCrossWq, kDecCrossWk, kDecCrossWv, kDecCrossWo,
  kDecLn2G, kDecLn2B,
  kDecFfW1, kDecFfB1, kDecFfW2, kDecFfB2,
  kDecLn3G, kDecLn3B,
  kDecLnfG, kDecLnfB,
  kOutW, kOutB,
  kCount,
};

// From-scratch reference model: single-head self-attention encoder, one
// causal decoder layer with cross-attention, tanh feed-forward blocks,
// pre-layer-norm residuals, fixed sinusoidal positions. Double precision
// throughout; deterministic given the init seed.
class TinyEncDec final : public TrainableModel {
 public:
  TinyEncDec(ModelConfig config, uint64_t init_seed);
  explicit TinyEncDec(const ModelSnapshot& snapshot);

  const ModelConfig& config() const { return config_; }
  HashTokenizer& tokenizer() { return tokenizer_; }
  const HashTokenizer& tokenizer() const { return tokenizer_; }

  int num_classes() const override { return config_.num_classes; }
  EncoderStates encode(const std::string& text) const override;
  ProbDist classify(const std::string& text) const override;
  Generation generate_explanation(const std::string& text, int beam_width) const override;
  std::vector<double> token_logprobs(const std::string& text,
                                     const std::string& explanation) const override;
  std::vector<double> sentence_embedding(const std::string& text) const override;
  std::vector<ProbDist> stochastic_classify(const std::string& text, int samples,
                                            double dropout_rate, uint64_t seed) const override;

  std::span<double> parameters() override { return params_; }
  std::span<const double> parameters() const override { return params_; }
  std::span<double> block(ParamBlock b);

  LossBreakdown loss(const LossInputs& in, double lambda1, double lambda2) const override;
  LossBreakdown loss_and_grad(const LossInputs& in, double lambda1, double lambda2,
                              std::span<double> grad_accum) const override;

  void observe_text(const std::string& text) override { tokenizer_.observe(text); }
  ModelSnapshot make_snapshot() const override;
  void set_fingerprint(const TrainingFingerprint& fp) override { fingerprint_ = fp; }
  const TrainingFingerprint& fingerprint() const override { return fingerprint_; }

  // Teacher-forced log-probabilities on already-tokenized content ids;
  // with include_eos, the end-of-sequence step is appended.
  std::vector<double> token_logprobs_ids(const std::string& text, std::span<const int> expl_ids,
                                         bool include_eos) const;

  Mat block_mat(ParamBlock b) const;
  const Mat& positions() const { return positions_; }

 private:
  struct BlockShape {
    int rows = 0;
    int cols = 0;
    size_t offset = 0;
  };

  void build_layout();
  void init_params(uint64_t seed);
  std::vector<int> encoder_ids(const std::string& text, bool* truncated) const;

  ModelConfig config_;
  HashTokenizer tokenizer_;
  std::vector<BlockShape> layout_;
  size_t num_params_ = 0;
  std::vector<double> params_;
  Mat positions_;  // sinusoidal table, shared by encoder and decoder
  TrainingFingerprint fingerprint_;
};

}  // namespace xal
