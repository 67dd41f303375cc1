#pragma once

#include <chrono>
#include <cstddef>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "p2im/subprocess.hpp"

namespace p2im {

enum class Label { vulnerable, clean };

std::string_view to_string(Label label);
Label parse_label(std::string_view text);

struct Prediction {
  Label label = Label::clean;
  std::optional<double> score;
};

/// The model under test. One instance is one conversation and is not shared
/// between threads.
class Predictor {
public:
  virtual ~Predictor() = default;

  virtual Prediction predict(std::string_view program) = 0;

  /// Order-preserving; equivalent to mapping predict(). On failure the
  /// exception names the index that was reached.
  virtual std::vector<Prediction> predict_batch(const std::vector<std::string>& programs);
};

enum class PredictorKind { child_process, http, builtin_pattern, builtin_spurious };

std::string_view to_string(PredictorKind kind);

struct PredictorHandle {
  std::string name;
  PredictorKind kind = PredictorKind::builtin_pattern;
  std::string command;                // child_process
  std::string url;                    // http
  std::vector<std::string> patterns;  // builtin kinds
  std::chrono::milliseconds timeout{30'000};
  double replay_rate = 0.01;          // fraction of calls replayed for the determinism audit

  nlohmann::ordered_json to_json() const;
  static PredictorHandle from_json(const nlohmann::json& j);
};

/// Checks the handle's invariants; throws ConfigError.
void validate(const PredictorHandle& handle);

/// Starts a fresh conversation (spawns the child, opens the connection...)
/// wrapped in the replay audit when `handle.replay_rate > 0`.
std::unique_ptr<Predictor> make_predictor(const PredictorHandle& handle);

using PredictorFactory = std::function<std::unique_ptr<Predictor>()>;

/// Vulnerable iff one of the patterns occurs in the program, both compared
/// as single-space-joined token text on token boundaries.
class PatternPredictor : public Predictor {
public:
  explicit PatternPredictor(std::vector<std::string> patterns);
  Prediction predict(std::string_view program) override;

private:
  std::vector<std::string> normalized_;
};

/// Line protocol over a child's stdin/stdout:
///   -> {"id":"<id>","code":"<program>"}
///   <- {"id":"<id>","label":"vulnerable"|"clean","score":<number, optional>}
class ChildProcessPredictor : public Predictor {
public:
  ChildProcessPredictor(const std::string& command, std::chrono::milliseconds timeout);
  Prediction predict(std::string_view program) override;
  std::vector<Prediction> predict_batch(const std::vector<std::string>& programs) override;

private:
  std::string send(std::string_view program);
  Prediction receive(const std::string& expected_id);

  ChildProcess child_;
  std::chrono::milliseconds timeout_;
  std::size_t next_id_ = 0;
};

/// POSTs the request object to `url`, expects the reply object with status 200.
class HttpPredictor : public Predictor {
public:
  HttpPredictor(const std::string& url, std::chrono::milliseconds timeout);
  ~HttpPredictor() override;
  Prediction predict(std::string_view program) override;

private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  std::size_t next_id_ = 0;
};

/// Replays every k-th call (k = round(1 / rate)) and throws
/// NondeterminismError when the label changes.
class ReplayAuditedPredictor : public Predictor {
public:
  ReplayAuditedPredictor(std::unique_ptr<Predictor> inner, double rate);
  Prediction predict(std::string_view program) override;
  std::vector<Prediction> predict_batch(const std::vector<std::string>& programs) override;

  std::size_t replays() const { return replays_; }

private:
  void audit(std::string_view program, const Prediction& first);

  std::unique_ptr<Predictor> inner_;
  std::size_t period_;
  std::size_t calls_ = 0;
  std::size_t replays_ = 0;
};

/// Wire helpers, exposed for tests and external tooling.
std::string encode_request(std::string_view id, std::string_view program);
/// Parses a reply line; throws OracleInfrastructureError on any schema violation.
std::pair<std::string, Prediction> decode_reply(std::string_view line);

} // namespace p2im
