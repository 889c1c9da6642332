#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "noisyx/common.hpp"
#include "noisyx/corpus.hpp"

namespace noisyx {

enum class GradientMode { standard, guided };

/// Half-open range of token rows belonging to one word.
struct TokenSpan {
  std::size_t begin = 0;
  std::size_t end = 0;
  bool operator==(const TokenSpan&) const = default;
};

struct EmbeddedInput {
  Matrix embeddings;  // tokens x embedding_dim
  std::vector<TokenSpan> spans;  // one per word
};

/// What saliency, uncertainty and the harness need from a classifier.
///
/// Implementations must be safe to call concurrently from several threads.
/// `forward` runs with dropout off and must be deterministic.
class DifferentiableModel {
 public:
  virtual ~DifferentiableModel() = default;

  virtual std::size_t num_classes() const = 0;
  virtual std::size_t embedding_dim() const = 0;
  virtual bool supports_guided() const = 0;

  virtual EmbeddedInput embed(const std::vector<std::string>& words) const = 0;
  virtual std::vector<double> forward(const Matrix& embeddings) const = 0;
  /// d logit[target_class] / d embeddings.
  virtual Matrix gradient(const Matrix& embeddings, std::size_t target_class,
                          GradientMode mode) const = 0;
  /// `passes` softmax vectors with dropout active.
  virtual std::vector<std::vector<double>> mc_softmax(const std::vector<std::string>& words,
                                                      std::size_t passes,
                                                      std::uint64_t seed) const = 0;
  /// Per-word mean first-order loss change over substitution candidates.
  virtual std::vector<double> hotflip_scores(const std::vector<std::string>& words,
                                             std::size_t gold_class) const = 0;
};

struct Prediction {
  std::vector<double> logits;
  std::size_t label = 0;
};

inline Prediction predict(const DifferentiableModel& model, const std::vector<std::string>& words) {
  if (words.empty()) throw Error("predict: empty document");
  const auto input = model.embed(words);
  Prediction p;
  p.logits = model.forward(input.embeddings);
  for (double z : p.logits) {
    if (!std::isfinite(z)) throw Error("predict: non-finite logit");
  }
  p.label = argmax(p.logits);
  return p;
}

inline std::vector<std::vector<double>> mc_forward(const DifferentiableModel& model,
                                                   const std::vector<std::string>& words,
                                                   std::size_t passes, std::uint64_t seed) {
  if (passes == 0) throw Error("mc_forward: at least one pass is required");
  return model.mc_softmax(words, passes, seed);
}

/// Max relative error between `gradient` (standard mode) and central differences
/// of the target logit. Relative error is |a-n| / max(|a|, |n|, 1e-6).
inline double check_gradients(const DifferentiableModel& model, const std::vector<std::string>& words,
                              double eps, std::size_t target_class) {
  if (!(eps >= 1e-7 && eps <= 1e-3)) throw Error("check_gradients: eps must lie in [1e-7, 1e-3]");
  Matrix x = model.embed(words).embeddings;
  const Matrix analytic = model.gradient(x, target_class, GradientMode::standard);
  double worst = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    const double saved = x.data()[k];
    x.data()[k] = saved + eps;
    const double up = model.forward(x)[target_class];
    x.data()[k] = saved - eps;
    const double down = model.forward(x)[target_class];
    x.data()[k] = saved;
    const double numeric = (up - down) / (2.0 * eps);
    const double a = analytic.data()[k];
    const double denom = std::max({std::abs(a), std::abs(numeric), 1e-6});
    worst = std::max(worst, std::abs(a - numeric) / denom);
  }
  return worst;
}

// ---------------------------------------------------------------------------
// Built-in classifier: per-token ReLU layer -> mean over tokens -> dropout -> logits.
// With hidden == 0 the model is linear: logits = W2^T mean(x) + b2.

struct TinyParams {
  Matrix embeddings;  // V x d
  Matrix w1;          // d x h
  std::vector<double> b1;
  Matrix w2;          // h x C, or d x C when h == 0
  std::vector<double> b2;
};

struct TrainConfig {
  double learning_rate = 0.5;
  std::size_t batch_size = 8;
  std::size_t epochs = 30;
  std::uint64_t seed = 1;
  double dropout = 0.2;
  std::size_t embedding_dim = 16;
  std::size_t hidden = 16;
  double init_scale = 0.1;
};

class TinyClassifier final : public DifferentiableModel {
 public:
  static constexpr std::size_t kUnkId = 0;
  static constexpr std::size_t kMaskId = 1;

  TinyClassifier() = default;

  /// `vocab` excludes the special tokens, which take ids 0 and 1.
  TinyClassifier(const std::vector<std::string>& vocab, std::size_t embedding_dim,
                 std::size_t hidden, std::size_t num_classes, double dropout)
      : dim_(embedding_dim), hidden_(hidden), classes_(num_classes), dropout_(dropout) {
    if (num_classes < 2) throw Error("TinyClassifier: need at least two classes");
    if (embedding_dim == 0) throw Error("TinyClassifier: embedding_dim must be positive");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw Error("TinyClassifier: dropout must lie in [0,1)");
    vocab_ = {std::string(kUnk), std::string(kMask)};
    for (const auto& w : vocab) {
      const std::string lw = to_lower(w);
      if (lw == kUnkLower || lw == kMaskLower || index_.contains(lw)) continue;
      vocab_.push_back(lw);
      index_.emplace(lw, vocab_.size() - 1);
    }
    p_.embeddings = Matrix(vocab_.size(), dim_);
    p_.w1 = Matrix(dim_, hidden_);
    p_.b1.assign(hidden_, 0.0);
    p_.w2 = Matrix(hidden_ == 0 ? dim_ : hidden_, classes_);
    p_.b2.assign(classes_, 0.0);
  }

  void initialize(std::uint64_t seed, double embedding_scale) {
    Rng rng(derive_seed(seed, {"init"}));
    for (double& v : p_.embeddings.data()) v = embedding_scale * rng.normal();
    auto glorot = [&](Matrix& m) {
      const double limit = std::sqrt(6.0 / static_cast<double>(m.rows() + m.cols()));
      for (double& v : m.data()) v = limit * (2.0 * rng.uniform() - 1.0);
    };
    glorot(p_.w1);
    glorot(p_.w2);
  }

  std::size_t num_classes() const override { return classes_; }
  std::size_t embedding_dim() const override { return dim_; }
  bool supports_guided() const override { return true; }
  std::size_t hidden() const noexcept { return hidden_; }
  double dropout() const noexcept { return dropout_; }
  std::size_t vocab_size() const noexcept { return vocab_.size(); }
  const std::vector<std::string>& vocab() const noexcept { return vocab_; }
  double train_accuracy() const noexcept { return train_accuracy_; }
  void set_train_accuracy(double a) { train_accuracy_ = a; }

  TinyParams& params() noexcept { return p_; }
  const TinyParams& params() const noexcept { return p_; }

  std::size_t token_id(std::string_view word) const {
    if (word == kMask) return kMaskId;
    if (word == kUnk) return kUnkId;
    auto it = index_.find(to_lower(word));
    return it == index_.end() ? kUnkId : it->second;
  }

  std::vector<std::size_t> encode(const std::vector<std::string>& words) const {
    std::vector<std::size_t> ids;
    ids.reserve(words.size());
    for (const auto& w : words) ids.push_back(token_id(w));
    return ids;
  }

  EmbeddedInput embed(const std::vector<std::string>& words) const override {
    return embed_ids(encode(words));
  }

  EmbeddedInput embed_ids(const std::vector<std::size_t>& ids) const {
    EmbeddedInput in{Matrix(ids.size(), dim_), {}};
    for (std::size_t t = 0; t < ids.size(); ++t) {
      auto src = p_.embeddings.row(ids[t]);
      std::copy(src.begin(), src.end(), in.embeddings.row(t).begin());
      in.spans.push_back({t, t + 1});
    }
    return in;
  }

  /// Intermediate values of one forward pass.
  struct Trace {
    std::size_t tokens = 0;
    Matrix pre;                  // tokens x h, pre-activations
    std::vector<double> pooled;  // h (d when linear), mean over tokens
    std::vector<double> keep;    // h, dropout multipliers (0 or 1/(1-p)); 1 when off
    std::vector<double> logits;  // C
  };

  /// Forward pass; `rng` null means dropout off.
  Trace trace(const Matrix& x, Rng* rng) const {
    if (x.rows() == 0 || x.cols() != dim_) throw Error("TinyClassifier: bad embedding shape");
    Trace t;
    t.tokens = x.rows();
    const double inv = 1.0 / static_cast<double>(x.rows());
    t.logits = p_.b2;
    if (hidden_ == 0) {
      t.pooled.assign(dim_, 0.0);
      for (std::size_t r = 0; r < x.rows(); ++r)
        for (std::size_t c = 0; c < dim_; ++c) t.pooled[c] += x(r, c) * inv;
      for (std::size_t c = 0; c < dim_; ++c)
        for (std::size_t k = 0; k < classes_; ++k) t.logits[k] += p_.w2(c, k) * t.pooled[c];
      return t;
    }
    t.pre = Matrix(x.rows(), hidden_);
    t.pooled.assign(hidden_, 0.0);
    for (std::size_t r = 0; r < x.rows(); ++r) {
      for (std::size_t j = 0; j < hidden_; ++j) {
        double z = p_.b1[j];
        for (std::size_t c = 0; c < dim_; ++c) z += x(r, c) * p_.w1(c, j);
        t.pre(r, j) = z;
        if (z > 0.0) t.pooled[j] += z * inv;
      }
    }
    t.keep.assign(hidden_, 1.0);
    if (rng != nullptr && dropout_ > 0.0) {
      const double scale = 1.0 / (1.0 - dropout_);
      for (double& k : t.keep) k = rng->bernoulli(dropout_) ? 0.0 : scale;
    }
    for (std::size_t j = 0; j < hidden_; ++j) {
      const double a = t.pooled[j] * t.keep[j];
      if (a == 0.0) continue;
      for (std::size_t k = 0; k < classes_; ++k) t.logits[k] += p_.w2(j, k) * a;
    }
    return t;
  }

  std::vector<double> forward(const Matrix& embeddings) const override {
    return trace(embeddings, nullptr).logits;
  }

  /// Input gradient for upstream logit gradient `dlogits`. When `dpre` is given it
  /// receives the gradient at the pre-activations (tokens x h).
  Matrix backward(const Trace& t, std::span<const double> dlogits, GradientMode mode,
                  Matrix* dpre = nullptr) const {
    Matrix g(t.tokens, dim_);
    const double inv = 1.0 / static_cast<double>(t.tokens);
    if (hidden_ == 0) {
      for (std::size_t c = 0; c < dim_; ++c) {
        double d = 0.0;
        for (std::size_t k = 0; k < classes_; ++k) d += p_.w2(c, k) * dlogits[k];
        for (std::size_t r = 0; r < t.tokens; ++r) g(r, c) = d * inv;
      }
      return g;
    }
    std::vector<double> dpooled(hidden_, 0.0);
    for (std::size_t j = 0; j < hidden_; ++j) {
      for (std::size_t k = 0; k < classes_; ++k) dpooled[j] += p_.w2(j, k) * dlogits[k];
      dpooled[j] *= t.keep[j] * inv;
    }
    if (dpre) *dpre = Matrix(t.tokens, hidden_);
    for (std::size_t r = 0; r < t.tokens; ++r) {
      for (std::size_t j = 0; j < hidden_; ++j) {
        double dz = t.pre(r, j) > 0.0 ? dpooled[j] : 0.0;
        if (mode == GradientMode::guided && dz < 0.0) dz = 0.0;
        if (dz == 0.0) continue;
        if (dpre) (*dpre)(r, j) = dz;
        for (std::size_t c = 0; c < dim_; ++c) g(r, c) += p_.w1(c, j) * dz;
      }
    }
    return g;
  }

  Matrix backward(const Matrix& x, std::span<const double> dlogits, GradientMode mode) const {
    return backward(trace(x, nullptr), dlogits, mode);
  }

  Matrix gradient(const Matrix& embeddings, std::size_t target_class,
                  GradientMode mode) const override {
    if (target_class >= classes_) throw Error("gradient: target class out of range");
    std::vector<double> onehot(classes_, 0.0);
    onehot[target_class] = 1.0;
    return backward(embeddings, onehot, mode);
  }

  std::vector<std::vector<double>> mc_softmax(const std::vector<std::string>& words,
                                              std::size_t passes,
                                              std::uint64_t seed) const override {
    const Matrix x = embed(words).embeddings;
    Rng rng(derive_seed(seed, {"mc_dropout"}));
    std::vector<std::vector<double>> out;
    out.reserve(passes);
    for (std::size_t i = 0; i < passes; ++i) out.push_back(softmax(trace(x, &rng).logits));
    return out;
  }

  /// Cross-entropy loss at `gold` for embeddings `x`.
  double loss(const Matrix& x, std::size_t gold) const {
    const auto logits = forward(x);
    double mx = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    for (double z : logits) sum += std::exp(z - mx);
    return mx + std::log(sum) - logits[gold];
  }

  std::vector<double> hotflip_scores(const std::vector<std::string>& words,
                                     std::size_t gold_class) const override {
    if (gold_class >= classes_) throw Error("hotflip_scores: class out of range");
    const auto ids = encode(words);
    const Matrix x = embed_ids(ids).embeddings;
    auto dlogits = softmax(forward(x));
    dlogits[gold_class] -= 1.0;
    const Matrix g = backward(x, dlogits, GradientMode::standard);
    const std::size_t v = vocab_.size();
    std::vector<double> scores(words.size(), 0.0);
    if (v < 2) return scores;
    std::vector<double> total(dim_, 0.0);
    for (std::size_t r = 0; r < v; ++r)
      for (std::size_t c = 0; c < dim_; ++c) total[c] += p_.embeddings(r, c);
    for (std::size_t t = 0; t < ids.size(); ++t) {
      double s = 0.0;
      for (std::size_t c = 0; c < dim_; ++c) {
        const double e = p_.embeddings(ids[t], c);
        const double mean_other = (total[c] - e) / static_cast<double>(v - 1);
        s += (mean_other - e) * g(t, c);
      }
      scores[t] = s;
    }
    return scores;
  }

  // -- checkpoint ---------------------------------------------------------

  static constexpr std::string_view kFormat = "noisyx-tiny-classifier";
  static constexpr int kFormatVersion = 1;

  nlohmann::json to_json() const {
    return {{"format", kFormat},
            {"version", kFormatVersion},
            {"embedding_dim", dim_},
            {"hidden", hidden_},
            {"num_classes", classes_},
            {"dropout", dropout_},
            {"train_accuracy", train_accuracy_},
            {"vocab", vocab_},
            {"embeddings", p_.embeddings.data()},
            {"w1", p_.w1.data()},
            {"b1", p_.b1},
            {"w2", p_.w2.data()},
            {"b2", p_.b2}};
  }

  static TinyClassifier from_json(const nlohmann::json& j) {
    if (j.value("format", "") != kFormat) throw Error("checkpoint: unrecognized format");
    if (j.value("version", 0) != kFormatVersion) throw Error("checkpoint: unsupported version");
    const auto vocab = j.at("vocab").get<std::vector<std::string>>();
    if (vocab.size() < 2 || vocab[0] != kUnk || vocab[1] != kMask)
      throw Error("checkpoint: vocab must start with [UNK], [MASK]");
    TinyClassifier m({vocab.begin() + 2, vocab.end()}, j.at("embedding_dim").get<std::size_t>(),
                     j.at("hidden").get<std::size_t>(), j.at("num_classes").get<std::size_t>(),
                     j.at("dropout").get<double>());
    if (m.vocab_.size() != vocab.size()) throw Error("checkpoint: duplicate vocab entries");
    auto fill = [](std::vector<double>& dst, const nlohmann::json& src, const char* name) {
      auto v = src.get<std::vector<double>>();
      if (v.size() != dst.size()) throw Error(std::string("checkpoint: bad size for ") + name);
      dst = std::move(v);
    };
    fill(m.p_.embeddings.data(), j.at("embeddings"), "embeddings");
    fill(m.p_.w1.data(), j.at("w1"), "w1");
    fill(m.p_.b1, j.at("b1"), "b1");
    fill(m.p_.w2.data(), j.at("w2"), "w2");
    fill(m.p_.b2, j.at("b2"), "b2");
    m.train_accuracy_ = j.value("train_accuracy", 0.0);
    return m;
  }

  void save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw Error("cannot write checkpoint: " + path);
    out << to_json().dump() << '\n';
  }

  static TinyClassifier load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open checkpoint: " + path);
    return from_json(nlohmann::json::parse(in));
  }

 private:
  static constexpr std::string_view kUnk = "[UNK]";
  static constexpr std::string_view kMask = "[MASK]";
  static constexpr std::string_view kUnkLower = "[unk]";
  static constexpr std::string_view kMaskLower = "[mask]";

  std::size_t dim_ = 0;
  std::size_t hidden_ = 0;
  std::size_t classes_ = 2;
  double dropout_ = 0.0;
  double train_accuracy_ = 0.0;
  std::vector<std::string> vocab_;
  std::unordered_map<std::string, std::size_t> index_;
  TinyParams p_;
};

/// Minibatch SGD on cross-entropy with dropout on the hidden layer.
inline TinyClassifier train(const Corpus& corpus, const TrainConfig& cfg) {
  if (corpus.split != Split::train) throw Error("train: corpus split must be 'train'");
  if (cfg.epochs < 1) throw Error("train: epochs must be at least 1");
  if (!(cfg.learning_rate > 0.0)) throw Error("train: learning rate must be positive");
  if (cfg.batch_size < 1) throw Error("train: batch size must be at least 1");

  std::set<std::string> words;
  for (const auto& d : corpus.documents)
    for (const auto& w : d.words) words.insert(to_lower(w.surface));
  TinyClassifier model({words.begin(), words.end()}, cfg.embedding_dim, cfg.hidden,
                       corpus.num_classes, cfg.dropout);
  model.initialize(cfg.seed, cfg.init_scale);

  std::vector<std::vector<std::size_t>> encoded;
  for (const auto& d : corpus.documents) encoded.push_back(model.encode(d.surfaces()));

  auto& p = model.params();
  const std::size_t dim = cfg.embedding_dim, hid = cfg.hidden, ncls = corpus.num_classes;
  const std::size_t out_rows = hid == 0 ? dim : hid;
  Rng rng(derive_seed(cfg.seed, {"train"}));
  std::vector<std::size_t> order = [&] {
    std::vector<std::size_t> v(corpus.documents.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = i;
    return v;
  }();

  Matrix g_w1(dim, hid), g_w2(out_rows, ncls);
  std::vector<double> g_b1(hid), g_b2(ncls);
  std::unordered_map<std::size_t, std::vector<double>> g_emb;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
      std::fill(g_w1.data().begin(), g_w1.data().end(), 0.0);
      std::fill(g_w2.data().begin(), g_w2.data().end(), 0.0);
      std::fill(g_b1.begin(), g_b1.end(), 0.0);
      std::fill(g_b2.begin(), g_b2.end(), 0.0);
      g_emb.clear();
      double batch_loss = 0.0;

      for (std::size_t b = start; b < stop; ++b) {
        const std::size_t di = order[b];
        const auto& ids = encoded[di];
        const std::size_t gold = corpus.documents[di].label;
        const Matrix x = model.embed_ids(ids).embeddings;
        const auto t = model.trace(x, &rng);
        auto probs = softmax(t.logits);
        batch_loss += -std::log(std::max(probs[gold], 1e-300));
        probs[gold] -= 1.0;  // dL/dlogits
        for (std::size_t k = 0; k < ncls; ++k) g_b2[k] += probs[k];
        for (std::size_t j = 0; j < out_rows; ++j) {
          const double a = t.pooled[j] * (hid == 0 ? 1.0 : t.keep[j]);
          if (a == 0.0) continue;
          for (std::size_t k = 0; k < ncls; ++k) g_w2(j, k) += a * probs[k];
        }
        Matrix dpre;
        const Matrix gx = model.backward(t, probs, GradientMode::standard, hid == 0 ? nullptr : &dpre);
        for (std::size_t r = 0; r < ids.size(); ++r) {
          if (hid > 0) {
            for (std::size_t j = 0; j < hid; ++j) {
              const double dz = dpre(r, j);
              if (dz == 0.0) continue;
              g_b1[j] += dz;
              for (std::size_t c = 0; c < dim; ++c) g_w1(c, j) += x(r, c) * dz;
            }
          }
          auto& row = g_emb[ids[r]];
          row.resize(dim, 0.0);
          for (std::size_t c = 0; c < dim; ++c) row[c] += gx(r, c);
        }
      }

      const double n = static_cast<double>(stop - start);
      if (!std::isfinite(batch_loss)) {
        std::ostringstream msg;
        msg << "train: non-finite loss at epoch " << epoch << ", batch starting " << start
            << " (lr=" << cfg.learning_rate << ", batch_size=" << cfg.batch_size << ")";
        throw Error(msg.str());
      }
      const double step = cfg.learning_rate / n;
      for (std::size_t i = 0; i < g_w1.size(); ++i) p.w1.data()[i] -= step * g_w1.data()[i];
      for (std::size_t i = 0; i < g_w2.size(); ++i) p.w2.data()[i] -= step * g_w2.data()[i];
      for (std::size_t j = 0; j < hid; ++j) p.b1[j] -= step * g_b1[j];
      for (std::size_t k = 0; k < ncls; ++k) p.b2[k] -= step * g_b2[k];
      // Apply embedding updates in id order so results do not depend on hash order.
      std::vector<std::size_t> touched;
      for (const auto& kv : g_emb) touched.push_back(kv.first);
      std::sort(touched.begin(), touched.end());
      for (std::size_t id : touched) {
        auto row = p.embeddings.row(id);
        const auto& g = g_emb[id];
        for (std::size_t c = 0; c < dim; ++c) row[c] -= step * g[c];
      }
    }
  }

  std::size_t correct = 0;
  for (std::size_t i = 0; i < encoded.size(); ++i) {
    const auto logits = model.forward(model.embed_ids(encoded[i]).embeddings);
    if (argmax(logits) == corpus.documents[i].label) ++correct;
  }
  model.set_train_accuracy(static_cast<double>(correct) / static_cast<double>(encoded.size()));
  return model;
}

}  // namespace noisyx
