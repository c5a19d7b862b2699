// SPDX-License-Identifier: Apache-2.0
// Chat pipeline: context -> response text and emotion -> AU target -> face.
#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "emoface/au_bridge.hpp"
#include "emoface/face_gan.hpp"
#include "emoface/nlg_model.hpp"
#include "json.hpp"

namespace emoface {

struct NotFoundError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Paths are resolved against the directory of the config file.
struct ServiceConfig {
  std::filesystem::path nlg_checkpoint;
  std::filesystem::path face_checkpoint;
  std::filesystem::path au_table;  // empty: built-in prototype table
  std::filesystem::path faces;     // corpus dir holding faces/index.csv and faces/au.csv
  std::filesystem::path session_log_dir;  // empty: no persistence
  bool reuse_last_face = false;  // edit the previous reply's face instead of the neutral base
  std::uint64_t seed = 0;        // EMOFACE_SEED overrides
  std::string host = "127.0.0.1";

  static ServiceConfig from_json(const nlohmann::json& j, const std::filesystem::path& base = {});
  static ServiceConfig load(const std::filesystem::path& path);
};

/// EMOFACE_SEED if set and numeric, otherwise the fallback.
std::uint64_t service_seed(std::uint64_t fallback);

struct BaseFace {
  std::string face_id;  // image file stem
  FaceRecord record;
  Tensor image;  // [3,H,W]
};

struct StageLatency {
  double nlg_ms = 0, bridge_ms = 0, face_ms = 0, total_ms = 0;
  nlohmann::json to_json() const;
};

struct Reply {
  std::string text;
  Emotion emotion = Emotion::neutral;
  AuVector au_target{};
  Tensor face;  // [3,H,W] in [-1,1]
  StageLatency latency;
};

struct Session {
  std::string session_id;
  std::string base_face_id;
  Tensor base_face;
  std::vector<DialogueTurn> history;
  std::chrono::system_clock::time_point created_at;

  Tensor last_face;
  std::mutex mutex;  // serializes turns within this session
};

/// Either an emotion name (routed through the AU table) or an explicit AU
/// object, validated and used as is.
struct FaceTarget {
  std::optional<Emotion> emotion;
  AuVector au{};

  static FaceTarget parse(const nlohmann::json& j, const AuTable& table);
};

class Pipeline {
 public:
  explicit Pipeline(const ServiceConfig& cfg);

  const ServiceConfig& config() const { return cfg_; }
  const std::vector<BaseFace>& faces() const { return faces_; }
  const AuTable& au_table() const { return table_; }
  const NlgCheckpoint& nlg() const { return nlg_; }
  const FaceCheckpoint& face_model() const { return face_; }

  /// face_id "random" draws uniformly from the neutral faces with the service RNG.
  std::shared_ptr<Session> create_session(const std::string& face_id = "random");
  std::shared_ptr<Session> session(const std::string& session_id) const;

  Reply respond(const std::string& session_id, const std::string& user_text,
                const std::optional<nlohmann::json>& override_target = std::nullopt);

  Tensor synthesize_face(const Tensor& base, const AuVector& au) const;
  Tensor synthesize_face(const Tensor& base, const nlohmann::json& emotion_or_au) const;

  /// Generated text and emotion for a history, no session state involved.
  NlgPrediction predict(const std::vector<DialogueTurn>& history) const;

  nlohmann::json health() const;

 private:
  const BaseFace& face_by_id(const std::string& id) const;
  void persist(const Session& s, const DialogueTurn& user, const DialogueTurn& agent) const;

  ServiceConfig cfg_;
  NlgCheckpoint nlg_;
  FaceCheckpoint face_;
  AuTable table_;
  std::vector<BaseFace> faces_;     // neutral only
  nlohmann::json checkpoint_hashes_;

  mutable std::mutex registry_mutex_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
  std::mt19937_64 rng_;
};

/// Hex digests of every regular file in a checkpoint directory.
nlohmann::json hash_directory(const std::filesystem::path& dir);

DialogueTurn make_turn(const std::string& speaker, const std::string& text, Emotion emotion);

}  // namespace emoface
