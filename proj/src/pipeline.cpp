// SPDX-License-Identifier: Apache-2.0
#include "emoface/pipeline.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>

#include "emoface/image_io.hpp"

namespace emoface {

using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

double ms_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
}

fs::path resolve(const json& j, const char* key, const fs::path& base, bool required) {
  if (!j.contains(key) || j.at(key).is_null()) {
    if (required) throw ConfigError(std::string("service config: missing \"") + key + "\"");
    return {};
  }
  fs::path p = j.at(key).get<std::string>();
  if (p.empty() || p.is_absolute() || base.empty()) return p;
  return base / p;
}

std::vector<BaseFace> load_neutral_faces(const fs::path& dir, std::size_t size) {
  const auto records = load_face_corpus(dir / "faces" / "index.csv", dir / "faces" / "au.csv");
  std::vector<BaseFace> out;
  for (const auto& r : records) {
    if (r.expression != Expression::neutral) continue;
    Tensor img = read_png(dir / "faces" / r.image_path);
    if (img.shape() != Shape{3, size, size})
      throw ConfigError(r.image_path + ": image is " + shape_str(img.shape()) +
                        ", the face checkpoint expects " + std::to_string(size) + "x" +
                        std::to_string(size));
    out.push_back({fs::path(r.image_path).stem().string(), r, std::move(img)});
  }
  if (out.empty()) throw ConfigError("no neutral frontal faces under " + dir.string());
  return out;
}

}  // namespace

ServiceConfig ServiceConfig::from_json(const json& j, const fs::path& base) {
  static const std::vector<std::string> known{"nlg_checkpoint", "face_checkpoint", "au_table",
                                              "faces", "session_log_dir", "reuse_last_face",
                                              "seed", "host"};
  for (const auto& [k, v] : j.items())
    if (std::find(known.begin(), known.end(), k) == known.end())
      throw ConfigError("service config: unknown key \"" + k + "\"");
  ServiceConfig c;
  c.nlg_checkpoint = resolve(j, "nlg_checkpoint", base, true);
  c.face_checkpoint = resolve(j, "face_checkpoint", base, true);
  c.au_table = resolve(j, "au_table", base, false);
  c.faces = resolve(j, "faces", base, true);
  c.session_log_dir = resolve(j, "session_log_dir", base, false);
  c.reuse_last_face = j.value("reuse_last_face", false);
  c.seed = j.value("seed", std::uint64_t{0});
  c.host = j.value("host", std::string("127.0.0.1"));
  return c;
}

ServiceConfig ServiceConfig::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return from_json(j, path.parent_path());
}

std::uint64_t service_seed(std::uint64_t fallback) {
  const char* env = std::getenv("EMOFACE_SEED");
  if (!env || !*env) return fallback;
  char* end = nullptr;
  const unsigned long long v = std::strtoull(env, &end, 10);
  if (*end) throw ConfigError(std::string("EMOFACE_SEED must be an unsigned integer, got ") + env);
  return v;
}

json StageLatency::to_json() const {
  return {{"nlg", nlg_ms}, {"bridge", bridge_ms}, {"face", face_ms}, {"total", total_ms}};
}

FaceTarget FaceTarget::parse(const json& j, const AuTable& table) {
  FaceTarget t;
  if (j.is_string()) {
    t.emotion = parse_emotion(j.get<std::string>());
    t.au = map_emotion_to_au(*t.emotion, table);
  } else {
    t.au = parse_au_object(j);
  }
  return t;
}

json hash_directory(const fs::path& dir) {
  json out = json::object();
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file()) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  for (const auto& f : files) out[f.filename().string()] = sha256_file(f);
  return out;
}

DialogueTurn make_turn(const std::string& speaker, const std::string& text, Emotion emotion) {
  DialogueTurn t;
  t.speaker_id = speaker;
  t.text = text;
  t.words = tokenize(text);
  t.emotion = emotion;
  return t;
}

Pipeline::Pipeline(const ServiceConfig& cfg)
    : cfg_(cfg),
      nlg_(load_nlg_checkpoint(cfg.nlg_checkpoint)),
      face_(load_face_checkpoint(cfg.face_checkpoint)),
      table_(cfg.au_table.empty() ? AuTable::defaults() : AuTable::load(cfg.au_table)),
      faces_(load_neutral_faces(cfg.faces, face_.config.image_size)),
      rng_(service_seed(cfg.seed)) {
  checkpoint_hashes_ = {{"nlg", hash_directory(cfg.nlg_checkpoint)},
                        {"face", hash_directory(cfg.face_checkpoint)}};
  if (!cfg.session_log_dir.empty()) fs::create_directories(cfg.session_log_dir);
}

const BaseFace& Pipeline::face_by_id(const std::string& id) const {
  for (const auto& f : faces_)
    if (f.face_id == id) return f;
  throw NotFoundError("unknown face id " + id);
}

std::shared_ptr<Session> Pipeline::create_session(const std::string& face_id) {
  std::lock_guard lock(registry_mutex_);
  const BaseFace* face = nullptr;
  if (face_id.empty() || face_id == "random") {
    std::uniform_int_distribution<std::size_t> pick(0, faces_.size() - 1);
    face = &faces_[pick(rng_)];
  } else {
    face = &face_by_id(face_id);
  }
  auto s = std::make_shared<Session>();
  std::string id;
  do {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(rng_()));
    id = buf;
  } while (sessions_.contains(id));
  s->session_id = id;
  s->base_face_id = face->face_id;
  s->base_face = face->image;
  s->last_face = face->image;
  s->created_at = std::chrono::system_clock::now();
  sessions_.emplace(id, s);
  return s;
}

std::shared_ptr<Session> Pipeline::session(const std::string& session_id) const {
  std::lock_guard lock(registry_mutex_);
  const auto it = sessions_.find(session_id);
  if (it == sessions_.end()) throw NotFoundError("unknown session " + session_id);
  return it->second;
}

NlgPrediction Pipeline::predict(const std::vector<DialogueTurn>& history) const {
  const auto& cfg = nlg_.model.config();
  return nlg_.model.generate(encode_context_turns(history, nlg_.vocab, cfg), cfg.max_decode_len);
}

Tensor Pipeline::synthesize_face(const Tensor& base, const AuVector& au) const {
  return synthesize(*face_.generator, base, au);
}

Tensor Pipeline::synthesize_face(const Tensor& base, const json& emotion_or_au) const {
  return synthesize_face(base, FaceTarget::parse(emotion_or_au, table_).au);
}

Reply Pipeline::respond(const std::string& session_id, const std::string& user_text,
                        const std::optional<json>& override_target) {
  const auto t0 = std::chrono::steady_clock::now();
  std::optional<FaceTarget> forced;
  if (override_target) forced = FaceTarget::parse(*override_target, table_);

  auto s = session(session_id);
  std::lock_guard lock(s->mutex);
  const DialogueTurn user = make_turn("user", user_text, Emotion::neutral);
  std::vector<DialogueTurn> context = s->history;
  context.push_back(user);

  Reply r;
  const NlgPrediction pred = predict(context);
  r.text = detokenize(nlg_.vocab.decode(pred.tokens));
  r.emotion = pred.emotion;
  r.latency.nlg_ms = ms_since(t0);

  const auto t1 = std::chrono::steady_clock::now();
  if (forced && forced->emotion) r.emotion = *forced->emotion;
  r.au_target = forced ? forced->au : map_emotion_to_au(r.emotion, table_);
  r.latency.bridge_ms = ms_since(t1);

  const auto t2 = std::chrono::steady_clock::now();
  r.face = synthesize_face(cfg_.reuse_last_face ? s->last_face : s->base_face, r.au_target);
  r.latency.face_ms = ms_since(t2);

  const DialogueTurn agent = make_turn("agent", r.text, r.emotion);
  s->history.push_back(user);
  s->history.push_back(agent);
  s->last_face = r.face;
  persist(*s, user, agent);
  r.latency.total_ms = ms_since(t0);
  return r;
}

void Pipeline::persist(const Session& s, const DialogueTurn& user, const DialogueTurn& agent) const {
  if (cfg_.session_log_dir.empty()) return;
  std::ofstream out(cfg_.session_log_dir / (s.session_id + ".jsonl"), std::ios::app);
  for (const auto* t : {&user, &agent})
    out << json{{"session_id", s.session_id},
                {"base_face", s.base_face_id},
                {"speaker", t->speaker_id},
                {"text", t->text},
                {"emotion", to_string(t->emotion)}}
               .dump()
        << "\n";
}

json Pipeline::health() const {
  std::size_t n = 0;
  {
    std::lock_guard lock(registry_mutex_);
    n = sessions_.size();
  }
  return {{"status", "ok"},
          {"checkpoints", checkpoint_hashes_},
          {"image_size", face_.config.image_size},
          {"faces", faces_.size()},
          {"sessions", n}};
}

}  // namespace emoface
