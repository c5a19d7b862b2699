// SPDX-License-Identifier: Apache-2.0
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <thread>

#include "doctest.h"
#include "emoface/image_io.hpp"
#include "emoface/pipeline.hpp"
#include "emoface/server.hpp"
#include "emoface/synthetic.hpp"
#include "httplib.h"
#include "support/gan_fixtures.hpp"

using namespace emoface;
using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

// Tiny checkpoints trained for a moment on the synthetic corpora, built once.
const fs::path& artifacts() {
  static const fs::path dir = [] {
    const fs::path d = fs::temp_directory_path() / "emoface_pipeline_test";
    fs::remove_all(d);
    synthetic::write_corpus(d / "data", 8);

    const auto dialogues = synthetic::dialogues();
    NlgConfig nc;
    nc.embedding_dim = 6;
    nc.hidden_dim = 8;
    nc.min_freq = 1;
    nc.epochs = 2;
    nc.batch_size = 8;
    nc.max_decode_len = 8;
    const Vocabulary vocab = build_vocab(dialogues, 1);
    nc.vocab_size = vocab.size();
    NlgModel model(nc);
    train_nlg(model, make_nlg_examples(make_examples(dialogues, 3, NonNeutralPolicy::neutral), vocab, nc));
    save_nlg_checkpoint(d / "nlg", model, vocab, nc.epochs);

    FaceGanConfig fc = testing::tiny_gan_config(4);
    fc.steps = 1;
    FaceGan gan(fc);
    train_face(gan, load_face_dataset(d / "data", 8), {});
    save_face_checkpoint(d / "face", gan, 1);
    return d;
  }();
  return dir;
}

ServiceConfig service_config(std::uint64_t seed = 0) {
  ServiceConfig c;
  c.nlg_checkpoint = artifacts() / "nlg";
  c.face_checkpoint = artifacts() / "face";
  c.faces = artifacts() / "data";
  c.seed = seed;
  return c;
}

bool same(const Tensor& a, const Tensor& b) { return a.shape() == b.shape() && a.storage() == b.storage(); }

}  // namespace

TEST_CASE("only neutral faces are offered") {
  unsetenv("EMOFACE_SEED");
  Pipeline p(service_config());
  CHECK(p.faces().size() == 8);
  for (const auto& f : p.faces()) CHECK(f.record.expression == Expression::neutral);
}

TEST_CASE("session creation") {
  unsetenv("EMOFACE_SEED");
  Pipeline p(service_config());
  const auto s = p.create_session("p03_neutral");
  CHECK(s->base_face_id == "p03_neutral");
  CHECK(s->history.empty());
  CHECK(same(s->base_face, p.faces()[2].image));
  CHECK_THROWS_AS(p.create_session("p01_happy"), NotFoundError);
  CHECK_THROWS_AS(p.session("nope"), NotFoundError);

  Pipeline a(service_config(11)), b(service_config(11));
  for (int i = 0; i < 5; ++i) {
    const auto sa = a.create_session(), sb = b.create_session();
    CHECK(sa->base_face_id == sb->base_face_id);
    CHECK(sa->session_id == sb->session_id);
  }
}

TEST_CASE("EMOFACE_SEED overrides the configured seed") {
  setenv("EMOFACE_SEED", "11", 1);
  Pipeline a(service_config(0));
  unsetenv("EMOFACE_SEED");
  Pipeline b(service_config(11));
  CHECK(a.create_session()->session_id == b.create_session()->session_id);
  setenv("EMOFACE_SEED", "x1", 1);
  CHECK_THROWS_AS(service_seed(0), ConfigError);
  unsetenv("EMOFACE_SEED");
  CHECK(service_seed(5) == 5);
}

TEST_CASE("reply invariants and history") {
  unsetenv("EMOFACE_SEED");
  Pipeline p(service_config());
  const auto s = p.create_session("p01_neutral");
  const Reply r = p.respond(s->session_id, "I finally passed my driving test today!");
  CHECK(r.au_target == map_emotion_to_au(r.emotion, p.au_table()));
  CHECK(r.face.shape() == Shape{3, 8, 8});
  for (double v : r.face.storage()) CHECK((v >= -1.0 && v <= 1.0));
  REQUIRE(s->history.size() == 2);
  CHECK(s->history[0].speaker_id == "user");
  CHECK(s->history[1].text == r.text);
  CHECK(s->history[1].emotion == r.emotion);
  p.respond(s->session_id, "thanks");
  CHECK(s->history.size() == 4);
  CHECK(s->history[1].text == r.text);
  CHECK_THROWS_AS(p.respond("missing", "hi"), NotFoundError);
}

TEST_CASE("replies factor into generate, lookup and generator") {
  unsetenv("EMOFACE_SEED");
  Pipeline p(service_config());
  const auto s = p.create_session("p02_neutral");
  const std::vector<std::string> lines{"Someone scratched my car.", "I am so angry.", "ok"};
  std::vector<DialogueTurn> history;
  for (const auto& line : lines) {
    const Reply r = p.respond(s->session_id, line);
    history.push_back(make_turn("user", line, Emotion::neutral));
    const NlgPrediction pred = p.predict(history);
    const std::string text = detokenize(p.nlg().vocab.decode(pred.tokens));
    CHECK(text == r.text);
    CHECK(pred.emotion == r.emotion);
    const Tensor face = synthesize(*p.face_model().generator, s->base_face, map_emotion_to_au(pred.emotion, p.au_table()));
    CHECK(same(face, r.face));
    history.push_back(make_turn("agent", text, pred.emotion));
  }
}

TEST_CASE("identical sessions give identical replies") {
  unsetenv("EMOFACE_SEED");
  Pipeline p(service_config());
  const auto a = p.create_session("p04_neutral");
  const auto b = p.create_session("p04_neutral");
  for (const char* line : {"hello", "My old dog passed away last night.", "I miss him"}) {
    const Reply ra = p.respond(a->session_id, line);
    const Reply rb = p.respond(b->session_id, line);
    CHECK(ra.text == rb.text);
    CHECK(ra.emotion == rb.emotion);
    CHECK(same(ra.face, rb.face));
  }
}

TEST_CASE("interleaved sessions match serial execution") {
  unsetenv("EMOFACE_SEED");
  const std::vector<std::string> lines{"hi", "What time does the meeting start?", "ok", "great news!"};
  Pipeline serial(service_config());
  std::vector<std::vector<std::string>> expected(2);
  for (int k = 0; k < 2; ++k) {
    const auto s = serial.create_session(k ? "p05_neutral" : "p06_neutral");
    for (const auto& l : lines) expected[k].push_back(serial.respond(s->session_id, l).text);
  }

  Pipeline p(service_config());
  const auto s0 = p.create_session("p06_neutral");
  const auto s1 = p.create_session("p05_neutral");
  std::vector<std::vector<std::string>> got(2);
  std::thread t0([&] {
    for (const auto& l : lines) got[0].push_back(p.respond(s0->session_id, l).text);
  });
  std::thread t1([&] {
    for (const auto& l : lines) got[1].push_back(p.respond(s1->session_id, l).text);
  });
  t0.join();
  t1.join();
  CHECK(got == expected);
}

TEST_CASE("face synthesis routes emotions through the table and validates AU objects") {
  unsetenv("EMOFACE_SEED");
  Pipeline p(service_config());
  const Tensor& base = p.faces()[0].image;
  CHECK(same(p.synthesize_face(base, json("happiness")), p.synthesize_face(base, json{{"AU06", 1.0}, {"AU12", 1.0}})));
  CHECK_THROWS_AS(p.synthesize_face(base, json{{"AU12", 1.5}}), std::invalid_argument);
  CHECK_THROWS_AS(p.synthesize_face(base, json("joy")), LabelError);
}

TEST_CASE("overrides steer the face") {
  unsetenv("EMOFACE_SEED");
  Pipeline p(service_config());
  const auto s = p.create_session("p01_neutral");
  const Reply r = p.respond(s->session_id, "hello there", json("neutral"));
  CHECK(r.emotion == Emotion::neutral);
  CHECK(same(r.face, synthesize(*p.face_model().generator, s->base_face, AuVector{})));

  const Reply h = p.respond(s->session_id, "and now?", json("happiness"));
  CHECK(h.emotion == Emotion::happiness);
  CHECK(h.au_target == map_emotion_to_au(Emotion::happiness, p.au_table()));

  AuVector custom{};
  custom[*au_index("AU12")] = 0.3;
  const Reply c = p.respond(s->session_id, "custom", au_to_json(custom));
  CHECK(c.au_target == custom);
  CHECK_THROWS_AS(p.respond(s->session_id, "bad", json{{"AU01", 2.0}}), std::invalid_argument);
  CHECK(s->history.size() == 6);
}

TEST_CASE("sessions persist as append-only JSONL") {
  unsetenv("EMOFACE_SEED");
  ServiceConfig cfg = service_config();
  cfg.session_log_dir = artifacts() / "sessions";
  fs::remove_all(cfg.session_log_dir);
  Pipeline p(cfg);
  const auto s = p.create_session();
  p.respond(s->session_id, "one");
  p.respond(s->session_id, "two");
  std::ifstream in(cfg.session_log_dir / (s->session_id + ".jsonl"));
  std::vector<json> rows;
  for (std::string line; std::getline(in, line);) rows.push_back(json::parse(line));
  REQUIRE(rows.size() == 4);
  CHECK(rows[0]["text"] == "one");
  CHECK(rows[1]["speaker"] == "agent");
  CHECK(rows[2]["text"] == "two");
}

TEST_CASE("service config parsing") {
  const json j = {{"nlg_checkpoint", "m/nlg"}, {"face_checkpoint", "/abs/face"}, {"faces", "data"}};
  const ServiceConfig c = ServiceConfig::from_json(j, "/etc/emoface");
  CHECK(c.nlg_checkpoint == fs::path("/etc/emoface/m/nlg"));
  CHECK(c.face_checkpoint == fs::path("/abs/face"));
  CHECK(c.au_table.empty());
  CHECK(!c.reuse_last_face);
  CHECK_THROWS_AS(ServiceConfig::from_json({{"faces", "x"}}), ConfigError);
  json extra = j;
  extra["port"] = 1;
  CHECK_THROWS_AS(ServiceConfig::from_json(extra), ConfigError);
  ServiceConfig bad = service_config();
  bad.nlg_checkpoint = artifacts() / "face";
  CHECK_THROWS(Pipeline(bad));
}

TEST_CASE("HTTP endpoints") {
  unsetenv("EMOFACE_SEED");
  Pipeline p(service_config());
  HttpService service(p);
  const int port = service.bind("127.0.0.1", 0);
  std::thread server([&] { service.run(); });
  service.wait_until_ready();
  httplib::Client client("127.0.0.1", port);

  auto health = client.Get("/health");
  REQUIRE(health);
  CHECK(health->status == 200);
  const json h = json::parse(health->body);
  CHECK(h["checkpoints"]["nlg"]["manifest.json"] == sha256_file(artifacts() / "nlg" / "manifest.json"));
  CHECK(h["checkpoints"]["face"]["generator.bin"] == sha256_file(artifacts() / "face" / "generator.bin"));

  auto faces = client.Get("/faces");
  REQUIRE(faces);
  CHECK(json::parse(faces->body).size() == 8);

  auto missing = client.Post("/chat", json{{"session_id", "nope"}, {"text", "hi"}}.dump(), "application/json");
  REQUIRE(missing);
  CHECK(missing->status == 404);

  auto created = client.Post("/session", json{{"face_id", "p07_neutral"}}.dump(), "application/json");
  REQUIRE(created);
  CHECK(created->status == 200);
  const json sj = json::parse(created->body);
  CHECK(decode_png(base64_decode(sj["base_face_png"].get<std::string>())).shape() == Shape{3, 8, 8});

  auto chat = client.Post("/chat", json{{"session_id", sj["session_id"]}, {"text", "hello"}}.dump(),
                          "application/json");
  REQUIRE(chat);
  CHECK(chat->status == 200);
  const json cj = json::parse(chat->body);
  const Tensor face = decode_png(base64_decode(cj["face_png"].get<std::string>()));
  CHECK(face.shape() == Shape{3, 8, 8});
  CHECK(parse_au_object(cj["au_target"]) == map_emotion_to_au(parse_emotion(cj["emotion"].get<std::string>()), p.au_table()));
  CHECK(cj["latency_ms"].contains("total"));

  auto steered = client.Post("/chat",
                             json{{"session_id", sj["session_id"]}, {"text", "hm"}, {"emotion_override", "sadness"}}.dump(),
                             "application/json");
  REQUIRE(steered);
  CHECK(json::parse(steered->body)["emotion"] == "sadness");

  auto invalid = client.Post("/chat",
                             json{{"session_id", sj["session_id"]}, {"text", "hm"}, {"emotion_override", {{"AU12", 1.5}}}}.dump(),
                             "application/json");
  REQUIRE(invalid);
  CHECK(invalid->status == 400);
  auto garbage = client.Post("/session", "{not json", "application/json");
  REQUIRE(garbage);
  CHECK(garbage->status == 400);

  service.stop();
  server.join();
}
