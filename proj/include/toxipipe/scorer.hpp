#pragma once

// Adapter for heavyweight external classifiers (e.g. fine-tuned transformer
// ensembles) speaking a newline-delimited JSON protocol:
//
//   request  {"id": "...", "text": "..."}
//   reply    {"id": "...", "scores": {"nonmedical_use": f, "consumption": f,
//                                      "mention": f, "unrelated": f}}
//
// One batch per session: the adapter writes every request, closes its write
// side, then reads replies until the peer closes or the timeout expires.

#include <chrono>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "toxipipe/classify.hpp"
#include "toxipipe/error.hpp"

namespace toxipipe::classify {

class ScorerError : public Error {
 public:
  using Error::Error;
};

struct ScorerEndpoint {
  enum class Kind { Exec, Tcp };

  Kind kind = Kind::Exec;
  std::string command;  // Exec: run through /bin/sh -c
  std::string host;     // Tcp
  std::uint16_t port = 0;
  std::chrono::milliseconds timeout{30000};

  // "exec:<shell command>" or "tcp:<host>:<port>".
  static ScorerEndpoint parse(std::string_view spec);
  static bool looks_like_endpoint(std::string_view spec);
};

struct ScoreRequest {
  std::string id;
  std::string text;
};

// Parses the full reply stream for a batch. Scores summing to within 1e-3 of
// 1 are renormalized; anything further off is rejected. Throws ScorerError
// naming the offending line or the first missing id.
std::vector<Prediction> parse_scorer_replies(std::string_view replies,
                                             std::span<const ScoreRequest> batch);

std::vector<Prediction> external_score(std::span<const ScoreRequest> batch,
                                       const ScorerEndpoint& endpoint);

}  // namespace toxipipe::classify
