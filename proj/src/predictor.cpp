#include "p2im/predictor.hpp"

#include <cmath>
#include <thread>

#include <httplib.h>

#include "p2im/errors.hpp"
#include "p2im/token.hpp"

namespace p2im {

std::string_view to_string(Label label) {
  return label == Label::vulnerable ? "vulnerable" : "clean";
}

Label parse_label(std::string_view text) {
  if (text == "vulnerable")
    return Label::vulnerable;
  if (text == "clean")
    return Label::clean;
  throw std::invalid_argument("unknown label '" + std::string(text) + "'");
}

std::string_view to_string(PredictorKind kind) {
  switch (kind) {
  case PredictorKind::child_process: return "child_process";
  case PredictorKind::http: return "http";
  case PredictorKind::builtin_pattern: return "builtin_pattern";
  case PredictorKind::builtin_spurious: return "builtin_spurious";
  }
  return "unknown";
}

namespace {

PredictorKind parse_kind(std::string_view text) {
  for (auto k : {PredictorKind::child_process, PredictorKind::http, PredictorKind::builtin_pattern,
                 PredictorKind::builtin_spurious}) {
    if (to_string(k) == text)
      return k;
  }
  throw ConfigError("unknown predictor kind '" + std::string(text) + "'");
}

} // namespace

std::vector<Prediction> Predictor::predict_batch(const std::vector<std::string>& programs) {
  std::vector<Prediction> out;
  out.reserve(programs.size());
  for (std::size_t i = 0; i < programs.size(); ++i) {
    try {
      out.push_back(predict(programs[i]));
    } catch (const std::exception&) {
      std::throw_with_nested(BatchFailure("batch prediction failed at index " + std::to_string(i), i));
    }
  }
  return out;
}

nlohmann::ordered_json PredictorHandle::to_json() const {
  nlohmann::ordered_json j;
  j["name"] = name;
  j["kind"] = to_string(kind);
  switch (kind) {
  case PredictorKind::child_process: j["command"] = command; break;
  case PredictorKind::http: j["url"] = url; break;
  default: j["patterns"] = patterns; break;
  }
  j["timeout_s"] = static_cast<double>(timeout.count()) / 1000.0;
  j["replay_rate"] = replay_rate;
  return j;
}

PredictorHandle PredictorHandle::from_json(const nlohmann::json& j) {
  PredictorHandle h;
  try {
    h.kind = parse_kind(j.at("kind").get<std::string>());
    h.name = j.value("name", std::string(to_string(h.kind)));
    h.command = j.value("command", std::string{});
    h.url = j.value("url", std::string{});
    if (j.contains("patterns"))
      h.patterns = j.at("patterns").get<std::vector<std::string>>();
    if (j.contains("timeout_s"))
      h.timeout = std::chrono::milliseconds(
          static_cast<long long>(std::llround(j.at("timeout_s").get<double>() * 1000)));
    h.replay_rate = j.value("replay_rate", h.replay_rate);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("predictor entry: ") + e.what());
  }
  validate(h);
  return h;
}

void validate(const PredictorHandle& h) {
  const std::string who = "predictor '" + h.name + "': ";
  switch (h.kind) {
  case PredictorKind::builtin_pattern:
  case PredictorKind::builtin_spurious:
    if (h.patterns.empty())
      throw ConfigError(who + "builtin predictors need at least one pattern");
    for (const auto& p : h.patterns) {
      if (normalized_text(p).empty())
        throw ConfigError(who + "patterns must be non-empty");
    }
    break;
  case PredictorKind::child_process:
    if (h.command.empty())
      throw ConfigError(who + "child_process predictors need a command");
    break;
  case PredictorKind::http:
    if (h.url.empty())
      throw ConfigError(who + "http predictors need a url");
    break;
  }
  if (!(h.replay_rate >= 0.0 && h.replay_rate <= 1.0))
    throw ConfigError(who + "replay_rate must lie in [0,1]");
  if (h.timeout.count() <= 0)
    throw ConfigError(who + "timeout must be positive");
}

std::unique_ptr<Predictor> make_predictor(const PredictorHandle& h) {
  validate(h);
  std::unique_ptr<Predictor> p;
  switch (h.kind) {
  case PredictorKind::builtin_pattern:
  case PredictorKind::builtin_spurious:
    p = std::make_unique<PatternPredictor>(h.patterns);
    break;
  case PredictorKind::child_process:
    p = std::make_unique<ChildProcessPredictor>(h.command, h.timeout);
    break;
  case PredictorKind::http:
    p = std::make_unique<HttpPredictor>(h.url, h.timeout);
    break;
  }
  if (h.replay_rate > 0.0)
    p = std::make_unique<ReplayAuditedPredictor>(std::move(p), h.replay_rate);
  return p;
}

// --- builtin ---------------------------------------------------------------

PatternPredictor::PatternPredictor(std::vector<std::string> patterns) {
  for (const auto& p : patterns) {
    std::string norm = normalized_text(p);
    if (norm.empty())
      throw ConfigError("pattern predictor: empty pattern");
    normalized_.push_back(" " + norm + " ");
  }
  if (normalized_.empty())
    throw ConfigError("pattern predictor: no patterns");
}

Prediction PatternPredictor::predict(std::string_view program) {
  const std::string haystack = " " + normalized_text(program) + " ";
  for (const auto& needle : normalized_) {
    if (haystack.find(needle) != std::string::npos)
      return {Label::vulnerable, 1.0};
  }
  return {Label::clean, 0.0};
}

// --- wire protocol ---------------------------------------------------------

std::string encode_request(std::string_view id, std::string_view program) {
  nlohmann::ordered_json j;
  j["id"] = std::string(id);
  j["code"] = std::string(program);
  return j.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace);
}

std::pair<std::string, Prediction> decode_reply(std::string_view line) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    throw OracleInfrastructureError("predictor reply is not JSON: " + std::string(line.substr(0, 200)));
  }
  if (!j.is_object() || !j.contains("id") || !j["id"].is_string() || !j.contains("label") ||
      !j["label"].is_string())
    throw OracleInfrastructureError("predictor reply lacks string 'id'/'label': " +
                                    std::string(line.substr(0, 200)));
  Prediction p;
  try {
    p.label = parse_label(j["label"].get<std::string>());
  } catch (const std::invalid_argument& e) {
    throw OracleInfrastructureError(std::string("predictor reply: ") + e.what());
  }
  if (j.contains("score") && !j["score"].is_null()) {
    if (!j["score"].is_number())
      throw OracleInfrastructureError("predictor reply: score is not a number");
    double s = j["score"].get<double>();
    if (!(s >= 0.0 && s <= 1.0))
      throw OracleInfrastructureError("predictor reply: score " + std::to_string(s) +
                                      " outside [0,1]");
    p.score = s;
  }
  return {j["id"].get<std::string>(), p};
}

// --- child process ---------------------------------------------------------

ChildProcessPredictor::ChildProcessPredictor(const std::string& command,
                                             std::chrono::milliseconds timeout)
    : child_(command), timeout_(timeout) {}

std::string ChildProcessPredictor::send(std::string_view program) {
  std::string id = std::to_string(next_id_++);
  child_.write_line(encode_request(id, program));
  return id;
}

Prediction ChildProcessPredictor::receive(const std::string& expected_id) {
  auto line = child_.read_line(timeout_);
  if (!line) {
    std::string status;
    // The pipe closed; give the exit status a moment to become visible.
    for (int i = 0; i < 50 && !child_.poll_exit(); ++i)
      std::this_thread::sleep_for(std::chrono::milliseconds(2));
    if (auto code = child_.poll_exit())
      status = " (exit status " + std::to_string(*code) + ")";
    throw OracleInfrastructureError("predictor process '" + child_.command() +
                                    "' closed its output" + status);
  }
  auto [id, prediction] = decode_reply(*line);
  if (id != expected_id)
    throw OracleInfrastructureError("predictor reply id '" + id + "' does not match request '" +
                                    expected_id + "'");
  return prediction;
}

Prediction ChildProcessPredictor::predict(std::string_view program) {
  return receive(send(program));
}

std::vector<Prediction> ChildProcessPredictor::predict_batch(const std::vector<std::string>& programs) {
  // Keep a bounded number of requests in flight so neither pipe fills up.
  constexpr std::size_t kWindow = 32;
  std::vector<Prediction> out;
  out.reserve(programs.size());
  std::vector<std::string> pending;
  std::size_t sent = 0;
  try {
    while (out.size() < programs.size()) {
      while (sent < programs.size() && sent - out.size() < kWindow)
        pending.push_back(send(programs[sent++]));
      out.push_back(receive(pending[out.size()]));
    }
  } catch (const std::exception&) {
    std::throw_with_nested(BatchFailure(
        "batch prediction failed at index " + std::to_string(out.size()), out.size()));
  }
  return out;
}

// --- http ------------------------------------------------------------------

struct HttpPredictor::Impl {
  std::unique_ptr<httplib::Client> client;
  std::string path;
  std::string url;
};

HttpPredictor::HttpPredictor(const std::string& url, std::chrono::milliseconds timeout)
    : impl_(std::make_unique<Impl>()) {
  impl_->url = url;
  auto scheme_end = url.find("://");
  std::size_t host_start = scheme_end == std::string::npos ? 0 : scheme_end + 3;
  auto path_start = url.find('/', host_start);
  std::string base = path_start == std::string::npos ? url : url.substr(0, path_start);
  impl_->path = path_start == std::string::npos ? "/" : url.substr(path_start);
  impl_->client = std::make_unique<httplib::Client>(base);
  auto secs = std::chrono::duration_cast<std::chrono::seconds>(timeout);
  auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(timeout - secs);
  impl_->client->set_connection_timeout(secs.count(), usecs.count());
  impl_->client->set_read_timeout(secs.count(), usecs.count());
  impl_->client->set_write_timeout(secs.count(), usecs.count());
  impl_->client->set_keep_alive(true);
}

HttpPredictor::~HttpPredictor() = default;

Prediction HttpPredictor::predict(std::string_view program) {
  std::string id = std::to_string(next_id_++);
  auto res = impl_->client->Post(impl_->path, encode_request(id, program), "application/json");
  if (!res)
    throw OracleInfrastructureError("http predictor " + impl_->url + ": " +
                                    httplib::to_string(res.error()));
  if (res->status != 200)
    throw OracleInfrastructureError("http predictor " + impl_->url + " returned status " +
                                    std::to_string(res->status));
  std::string body = res->body;
  while (!body.empty() && (body.back() == '\n' || body.back() == '\r'))
    body.pop_back();
  auto [reply_id, prediction] = decode_reply(body);
  if (reply_id != id)
    throw OracleInfrastructureError("http predictor reply id '" + reply_id +
                                    "' does not match request '" + id + "'");
  return prediction;
}

// --- replay audit ----------------------------------------------------------

ReplayAuditedPredictor::ReplayAuditedPredictor(std::unique_ptr<Predictor> inner, double rate)
    : inner_(std::move(inner)),
      period_(rate > 0.0 ? std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(1.0 / rate)))
                         : 0) {}

void ReplayAuditedPredictor::audit(std::string_view program, const Prediction& first) {
  ++calls_;
  if (period_ == 0 || calls_ % period_ != 0)
    return;
  ++replays_;
  Prediction again = inner_->predict(program);
  if (again.label != first.label)
    throw NondeterminismError("predictor answered '" + std::string(to_string(first.label)) +
                              "' then '" + std::string(to_string(again.label)) +
                              "' for the same program");
}

Prediction ReplayAuditedPredictor::predict(std::string_view program) {
  Prediction p = inner_->predict(program);
  audit(program, p);
  return p;
}

std::vector<Prediction> ReplayAuditedPredictor::predict_batch(const std::vector<std::string>& programs) {
  auto out = inner_->predict_batch(programs);
  for (std::size_t i = 0; i < programs.size(); ++i)
    audit(programs[i], out[i]);
  return out;
}

} // namespace p2im
