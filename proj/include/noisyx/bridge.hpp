#pragma once

// Client for external models served over a line-delimited JSON protocol on a
// child process's stdin/stdout. See docs/bridge_protocol.md for the schema.

#include <csignal>
#include <cstdio>
#include <iostream>
#include <mutex>
#include <string>
#include <vector>

#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include <json.hpp>

#include "noisyx/common.hpp"
#include "noisyx/model.hpp"

namespace noisyx {

inline constexpr int kBridgeSchemaVersion = 1;

class BridgeError : public Error {
 public:
  using Error::Error;
};

namespace detail {

inline nlohmann::json matrix_to_json(const Matrix& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t r = 0; r < m.rows(); ++r) {
    auto row = m.row(r);
    rows.push_back(std::vector<double>(row.begin(), row.end()));
  }
  return rows;
}

inline Matrix matrix_from_json(const nlohmann::json& j, std::size_t cols) {
  if (!j.is_array()) throw BridgeError("bridge: expected a matrix");
  Matrix m(j.size(), cols);
  for (std::size_t r = 0; r < j.size(); ++r) {
    const auto row = j[r].get<std::vector<double>>();
    if (row.size() != cols) throw BridgeError("bridge: matrix row has wrong width");
    std::copy(row.begin(), row.end(), m.row(r).begin());
  }
  return m;
}

inline nlohmann::json spans_to_json(const std::vector<TokenSpan>& spans) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& s : spans) out.push_back({s.begin, s.end});
  return out;
}

inline std::vector<TokenSpan> spans_from_json(const nlohmann::json& j) {
  std::vector<TokenSpan> spans;
  for (const auto& s : j) spans.push_back({s.at(0).get<std::size_t>(), s.at(1).get<std::size_t>()});
  return spans;
}

}  // namespace detail

/// A DifferentiableModel whose computations happen in a child process.
/// Calls are serialized; one session answers one request at a time.
class BridgeModel final : public DifferentiableModel {
 public:
  explicit BridgeModel(const std::string& command) {
    int to_child[2], from_child[2];
    if (pipe(to_child) != 0 || pipe(from_child) != 0) throw BridgeError("bridge: pipe() failed");
    pid_ = fork();
    if (pid_ < 0) throw BridgeError("bridge: fork() failed");
    if (pid_ == 0) {
      dup2(to_child[0], STDIN_FILENO);
      dup2(from_child[1], STDOUT_FILENO);
      close(to_child[0]);
      close(to_child[1]);
      close(from_child[0]);
      close(from_child[1]);
      execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
      _exit(127);
    }
    close(to_child[0]);
    close(from_child[1]);
    out_ = fdopen(to_child[1], "w");
    in_ = fdopen(from_child[0], "r");
    if (!out_ || !in_) throw BridgeError("bridge: fdopen() failed");
    std::signal(SIGPIPE, SIG_IGN);

    const auto info = call({{"op", "info"}});
    if (info.value("schema_version", 0) != kBridgeSchemaVersion)
      throw BridgeError("bridge: unsupported schema version " + info.value("schema_version", nlohmann::json()).dump());
    classes_ = info.at("num_classes").get<std::size_t>();
    dim_ = info.at("embedding_dim").get<std::size_t>();
    max_length_ = info.value("max_length", std::size_t{0});
    guided_ = info.value("guided", false);
  }

  BridgeModel(const BridgeModel&) = delete;
  BridgeModel& operator=(const BridgeModel&) = delete;

  ~BridgeModel() override {
    if (out_) std::fclose(out_);
    if (in_) std::fclose(in_);
    if (pid_ > 0) {
      int status = 0;
      waitpid(pid_, &status, 0);
    }
  }

  std::size_t num_classes() const override { return classes_; }
  std::size_t embedding_dim() const override { return dim_; }
  bool supports_guided() const override { return guided_; }
  std::size_t max_length() const noexcept { return max_length_; }
  std::size_t requests_sent() const noexcept { return next_id_ - 1; }

  EmbeddedInput embed(const std::vector<std::string>& words) const override {
    const auto r = call({{"op", "embed"}, {"words", words}});
    EmbeddedInput in{detail::matrix_from_json(r.at("embeddings"), dim_),
                     detail::spans_from_json(r.at("spans"))};
    if (in.spans.size() != words.size()) throw BridgeError("bridge: span count differs from word count");
    return in;
  }

  std::vector<double> forward(const Matrix& embeddings) const override {
    const auto r = call({{"op", "forward"}, {"embeddings", detail::matrix_to_json(embeddings)}});
    auto logits = r.at("logits").get<std::vector<double>>();
    if (logits.size() != classes_) throw BridgeError("bridge: wrong number of logits");
    return logits;
  }

  std::vector<double> forward_words(const std::vector<std::string>& words) const {
    return call({{"op", "forward"}, {"words", words}}).at("logits").get<std::vector<double>>();
  }

  Matrix gradient(const Matrix& embeddings, std::size_t target_class,
                  GradientMode mode) const override {
    const auto r = call({{"op", "gradient"},
                         {"embeddings", detail::matrix_to_json(embeddings)},
                         {"target_class", target_class},
                         {"gradient_mode", mode == GradientMode::guided ? "guided" : "standard"}});
    Matrix g = detail::matrix_from_json(r.at("gradient"), dim_);
    if (g.rows() != embeddings.rows()) throw BridgeError("bridge: gradient has wrong token count");
    return g;
  }

  std::vector<std::vector<double>> mc_softmax(const std::vector<std::string>& words,
                                              std::size_t passes,
                                              std::uint64_t seed) const override {
    const auto r = call({{"op", "mc_forward"}, {"words", words}, {"T", passes}, {"seed", seed}});
    auto out = r.at("softmax").get<std::vector<std::vector<double>>>();
    if (out.size() != passes) throw BridgeError("bridge: wrong number of MC passes");
    return out;
  }

  std::vector<double> hotflip_scores(const std::vector<std::string>& words,
                                     std::size_t gold_class) const override {
    const auto r = call({{"op", "hotflip_scores"}, {"words", words}, {"target_class", gold_class}});
    auto scores = r.at("scores").get<std::vector<double>>();
    if (scores.size() != words.size()) throw BridgeError("bridge: hotflip scores not word-aligned");
    return scores;
  }

  std::vector<TokenSpan> token_spans(const std::vector<std::string>& words) const {
    return detail::spans_from_json(call({{"op", "spans"}, {"words", words}}).at("spans"));
  }

 private:
  nlohmann::json call(nlohmann::json request) const {
    std::lock_guard lock(mutex_);
    const std::uint64_t id = next_id_++;
    request["id"] = id;
    const std::string line = request.dump() + "\n";
    if (std::fwrite(line.data(), 1, line.size(), out_) != line.size() || std::fflush(out_) != 0)
      throw BridgeError("bridge: failed to write request (server gone?)");
    std::string response;
    for (int ch; (ch = std::fgetc(in_)) != EOF;) {
      if (ch == '\n') break;
      response.push_back(static_cast<char>(ch));
    }
    if (response.empty()) throw BridgeError("bridge: server closed the connection");
    nlohmann::json r;
    try {
      r = nlohmann::json::parse(response);
    } catch (const nlohmann::json::parse_error& e) {
      throw BridgeError(std::string("bridge: malformed response: ") + e.what());
    }
    if (r.value("id", std::uint64_t{0}) != id)
      throw BridgeError("bridge: response id " + r.value("id", nlohmann::json()).dump() +
                        " does not match request " + std::to_string(id));
    if (r.contains("error") && !r["error"].is_null())
      throw BridgeError("bridge: " + request.value("op", "?") + ": " + r["error"].dump());
    return r;
  }

  pid_t pid_ = -1;
  FILE* out_ = nullptr;
  FILE* in_ = nullptr;
  mutable std::mutex mutex_;
  mutable std::uint64_t next_id_ = 1;
  std::size_t classes_ = 0;
  std::size_t dim_ = 0;
  std::size_t max_length_ = 0;
  bool guided_ = false;
};

/// Answers one protocol request using an in-process model. Used by the
/// reference server that the bridge client is tested against.
inline nlohmann::json handle_bridge_request(const DifferentiableModel& model, const nlohmann::json& req,
                                            std::size_t max_length = 512) {
  nlohmann::json resp;
  resp["id"] = req.value("id", nlohmann::json());
  try {
    const std::string op = req.at("op").get<std::string>();
    auto words = [&] { return req.at("words").get<std::vector<std::string>>(); };
    auto embeddings = [&] {
      if (req.contains("embeddings")) return detail::matrix_from_json(req["embeddings"], model.embedding_dim());
      return model.embed(words()).embeddings;
    };
    if (op == "info") {
      resp["schema_version"] = kBridgeSchemaVersion;
      resp["num_classes"] = model.num_classes();
      resp["embedding_dim"] = model.embedding_dim();
      resp["max_length"] = max_length;
      resp["guided"] = model.supports_guided();
    } else if (op == "embed") {
      const auto in = model.embed(words());
      resp["embeddings"] = detail::matrix_to_json(in.embeddings);
      resp["spans"] = detail::spans_to_json(in.spans);
    } else if (op == "spans") {
      resp["spans"] = detail::spans_to_json(model.embed(words()).spans);
    } else if (op == "forward") {
      resp["logits"] = model.forward(embeddings());
    } else if (op == "gradient") {
      const std::string mode = req.value("gradient_mode", "standard");
      if (mode != "standard" && mode != "guided") throw Error("unknown gradient_mode " + mode);
      resp["gradient"] = detail::matrix_to_json(
          model.gradient(embeddings(), req.at("target_class").get<std::size_t>(),
                         mode == "guided" ? GradientMode::guided : GradientMode::standard));
    } else if (op == "mc_forward") {
      resp["softmax"] = model.mc_softmax(words(), req.at("T").get<std::size_t>(),
                                         req.value("seed", std::uint64_t{0}));
    } else if (op == "hotflip_scores") {
      resp["scores"] = model.hotflip_scores(words(), req.at("target_class").get<std::size_t>());
    } else {
      throw Error("unknown op '" + op + "'");
    }
  } catch (const std::exception& e) {
    nlohmann::json err;
    err["id"] = resp["id"];
    err["error"] = e.what();
    return err;
  }
  return resp;
}

/// Request loop: one JSON request per input line, one response per output line.
inline void serve_bridge(const DifferentiableModel& model, std::istream& in, std::ostream& out) {
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    nlohmann::json req;
    try {
      req = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      out << nlohmann::json{{"id", nullptr}, {"error", std::string("malformed request: ") + e.what()}}.dump()
          << std::endl;
      continue;
    }
    out << handle_bridge_request(model, req).dump() << std::endl;
  }
}

}  // namespace noisyx
