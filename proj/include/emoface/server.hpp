// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <memory>
#include <string>

#include "emoface/pipeline.hpp"

namespace emoface {

/// JSON over HTTP:
///   POST /session {face_id?}                       -> {session_id, base_face_id, base_face_png}
///   POST /chat {session_id, text, emotion_override?} -> {text, emotion, au_target, face_png, latency_ms}
///   GET  /faces                                    -> [{face_id, model_id, png}]
///   GET  /health                                   -> {status, checkpoints, ...}
/// PNGs travel as base64 strings.
class HttpService {
 public:
  explicit HttpService(Pipeline& pipeline);
  ~HttpService();

  /// Port 0 picks a free port. Throws ConfigError if binding fails.
  int bind(const std::string& host, int port);
  void run();  // blocks until stop()
  void stop();
  void wait_until_ready() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace emoface
