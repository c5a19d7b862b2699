// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include "doctest.h"
#include "emoface/data_prep.hpp"
#include "emoface/synthetic.hpp"

using namespace emoface;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

void write_text(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

const char* kAuHeader =
    "face_id,AU01_r,AU02_r,AU04_r,AU05_r,AU06_r,AU07_r,AU09_r,AU10_r,AU12_r,AU14_r,AU15_r,AU17_r,AU20_r,"
    "AU23_r,AU25_r,AU26_r,AU45_r\n";

std::string au_row(const std::string& id, double first, double rest = 0.0) {
  std::string s = id + "," + std::to_string(first);
  for (int i = 1; i < 17; ++i) s += "," + std::to_string(rest);
  return s + "\n";
}

std::vector<FaceRecord> synthetic_records() {
  std::vector<FaceRecord> out;
  for (const auto& f : synthetic::faces(8)) out.push_back(f.record);
  return out;
}

}  // namespace

TEST_CASE("emotion labels have a stable 0-7 encoding") {
  CHECK(static_cast<int>(Emotion::anger) == 0);
  CHECK(static_cast<int>(Emotion::non_neutral) == 7);
  for (std::size_t i = 0; i < kEmotionCount; ++i)
    CHECK(static_cast<std::size_t>(parse_emotion(kEmotionNames[i])) == i);
  CHECK_THROWS_AS(parse_emotion("joy"), LabelError);
  CHECK_THROWS_AS(parse_expression("smiling"), LabelError);
  CHECK(au_index("AU12_r") == 8);
  CHECK(au_index("AU12") == 8);
  CHECK(!au_index("AU03").has_value());
}

TEST_CASE("tokenization lowercases and detaches punctuation") {
  CHECK(tokenize("Hello, World!") == std::vector<std::string>{"hello", ",", "world", "!"});
  CHECK(tokenize("  ").empty());
  const auto words = tokenize("I can't BELIEVE it...");
  CHECK(tokenize(detokenize(words)) == words);
}

TEST_CASE("dialogue loading: counts, label errors and line numbers") {
  TempDir dir("emoface_dialogue_test");
  const auto ok = dir.path / "ok.jsonl";
  write_text(ok, R"({"dialogue_id":"d1","turns":[{"speaker":"a","text":"Hi there","emotion":"neutral"},{"speaker":"b","text":"Great!","emotion":"happiness"}]})"
                 "\n");
  const auto ds = load_dialogues(ok);
  REQUIRE(ds.size() == 1);
  CHECK(ds[0].turns.size() == 2);
  CHECK(ds[0].turns[1].emotion == Emotion::happiness);

  const auto joy = dir.path / "joy.jsonl";
  write_text(joy, R"({"dialogue_id":"d1","turns":[{"speaker":"a","text":"yay","emotion":"joy"}]})"
                  "\n");
  CHECK_THROWS_AS(load_dialogues(joy), LabelError);

  const auto bad = dir.path / "bad.jsonl";
  write_text(bad, std::string(R"({"dialogue_id":"d1","turns":[]})") + "\n{not json\n");
  try {
    load_dialogues(bad);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.line == 2);
  }
}

TEST_CASE("dialogue write/load round trip") {
  TempDir dir("emoface_roundtrip_test");
  const auto src = synthetic::dialogues();
  REQUIRE(src.size() == 10);
  write_dialogues(dir.path / "d.jsonl", src);
  const auto back = load_dialogues(dir.path / "d.jsonl");
  REQUIRE(back.size() == src.size());
  for (std::size_t i = 0; i < src.size(); ++i) {
    CHECK(back[i].id == src[i].id);
    REQUIRE(back[i].turns.size() == src[i].turns.size());
    for (std::size_t t = 0; t < src[i].turns.size(); ++t) {
      CHECK(back[i].turns[t].text == src[i].turns[t].text);
      CHECK(back[i].turns[t].words == src[i].turns[t].words);
      CHECK(back[i].turns[t].emotion == src[i].turns[t].emotion);
      CHECK(back[i].turns[t].speaker_id == src[i].turns[t].speaker_id);
    }
  }
}

TEST_CASE("vocabulary construction") {
  Dialogue d;
  d.turns.push_back({"s", "a a b", tokenize("a a b"), {}, Emotion::neutral});
  const Vocabulary v2 = build_vocab({d}, 2);
  CHECK(v2.id("a") != Vocabulary::unk);
  CHECK(v2.id("b") == Vocabulary::unk);
  const Vocabulary v1 = build_vocab({d}, 1);
  CHECK(v1.size() == 2 + 4);
  CHECK(v1.token(Vocabulary::pad) == "<pad>");
  CHECK(v1.token(4) == "a");
  CHECK_THROWS_AS(build_vocab({}, 1), DataError);

  const auto ds = synthetic::dialogues();
  CHECK(build_vocab(ds, 1).serialize() == build_vocab(ds, 1).serialize());
  const Vocabulary full = build_vocab(ds, 1);
  CHECK(Vocabulary::deserialize(full.serialize()).tokens() == full.tokens());
  const auto ids = full.encode(tokenize("hello zzzunseen"));
  CHECK(ids.back() == Vocabulary::unk);
  CHECK(full.decode({Vocabulary::bos, ids[0], Vocabulary::eos, Vocabulary::pad}).size() == 1);
}

TEST_CASE("face corpus: rescaling, joins and errors") {
  TempDir dir("emoface_faces_test");
  const auto index = dir.path / "index.csv";
  const auto au = dir.path / "au.csv";
  write_text(index,
             "image_path,model_id,expression,gaze,camera_angle\n"
             "img/b.png,m2,happy,frontal,090\n"
             "img/a.png,m1,neutral,frontal,090\n"
             "img/c.png,m3,sad,left,090\n");
  write_text(au, std::string(kAuHeader) + au_row("img/a.png", 5.0) + au_row("b", 2.5, 0.0) +
                     au_row("c", 7.0));
  const auto recs = load_face_corpus(index, au);
  REQUIRE(recs.size() == 2);
  CHECK(recs[0].image_path == "img/a.png");
  CHECK(recs[0].au[0] == 1.0);
  CHECK(recs[0].au[1] == 0.0);
  CHECK(recs[1].au[0] == doctest::Approx(0.5));
  CHECK(recs[1].expression == Expression::happy);
  CHECK(load_face_corpus(index, au, FaceFilter{false}).size() == 3);
  for (const auto& r : load_face_corpus(index, au, FaceFilter{false}))
    for (double v : r.au) CHECK((v >= 0.0 && v <= 1.0));

  write_text(au, std::string(kAuHeader) + au_row("a", 1.0));
  CHECK_THROWS_AS(load_face_corpus(index, au), JoinError);
  write_text(au, std::string(kAuHeader) + au_row("a", 1.0) + au_row("b", std::nan("")));
  CHECK_THROWS_AS(load_face_corpus(index, au), DataError);
}

TEST_CASE("face loading is stable under index line order") {
  TempDir dir("emoface_faces_order_test");
  const auto recs = synthetic_records();
  write_face_corpus(dir.path / "index.csv", dir.path / "au.csv", recs);
  const auto a = load_face_corpus(dir.path / "index.csv", dir.path / "au.csv");

  std::ifstream in(dir.path / "index.csv");
  std::string header, line;
  std::getline(in, header);
  std::vector<std::string> lines;
  while (std::getline(in, line)) lines.push_back(line);
  std::mt19937_64 rng(3);
  std::shuffle(lines.begin(), lines.end(), rng);
  std::ofstream out(dir.path / "shuffled.csv");
  out << header << "\n";
  for (const auto& l : lines) out << l << "\n";
  out.close();
  const auto b = load_face_corpus(dir.path / "shuffled.csv", dir.path / "au.csv");
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].image_path == b[i].image_path);
    CHECK(a[i].au == b[i].au);
  }
}

TEST_CASE("label alignment is total") {
  CHECK(align_labels(Emotion::happiness) == Expression::happy);
  CHECK(align_labels(Emotion::neutral) == Expression::neutral);
  CHECK(align_labels(Emotion::non_neutral) == Expression::neutral);
  const Expression expected[8] = {Expression::angry,  Expression::disgusted, Expression::fearful,
                                  Expression::happy,  Expression::sad,       Expression::surprised,
                                  Expression::neutral, Expression::neutral};
  for (std::size_t i = 0; i < kEmotionCount; ++i)
    CHECK(align_labels(static_cast<Emotion>(i)) == expected[i]);
  CHECK(align_labels(Emotion::non_neutral, NonNeutralPolicy::contemptuous) == Expression::contemptuous);
  CHECK(!align_labels(Emotion::non_neutral, NonNeutralPolicy::drop).has_value());
}

TEST_CASE("splits are grouped, sized and deterministic") {
  const auto ds = synthetic::dialogues();
  const auto faces = synthetic_records();
  SplitOptions opt;
  opt.seed = 7;
  const Splits s = make_splits(ds, faces, opt);
  CHECK(s.train.dialogues.size() == 8);
  CHECK(s.valid.dialogues.size() == 1);
  CHECK(s.test.dialogues.size() == 1);

  auto ids = [](const DataSplit& d) {
    std::set<std::string> out;
    for (const auto& f : d.faces) out.insert(f.model_id);
    return out;
  };
  const auto a = ids(s.train), b = ids(s.valid), c = ids(s.test);
  for (const auto& id : a) CHECK((!b.count(id) && !c.count(id)));
  for (const auto& id : b) CHECK(!c.count(id));
  CHECK(a.size() + b.size() + c.size() == 8);
  CHECK(b.size() == 1);
  CHECK(c.size() == 1);

  const Splits again = make_splits(ds, faces, opt);
  CHECK(again.valid.dialogues.front().id == s.valid.dialogues.front().id);
  CHECK(again.test.faces.front().image_path == s.test.faces.front().image_path);

  opt.ratios = {0.9, 0.05, 0.05};
  const Splits small = make_splits(ds, faces, opt);
  CHECK(small.valid.dialogues.size() == 1);
  CHECK(small.test.dialogues.size() == 1);
  const std::vector<Dialogue> two(ds.begin(), ds.begin() + 2);
  CHECK_THROWS_AS(make_splits(two, faces, opt), DataError);
  opt.ratios = {0.5, 0.5, 0.5};
  CHECK_THROWS_AS(make_splits(ds, faces, opt), std::invalid_argument);
}

TEST_CASE("examples pair context with the target emotion") {
  const auto ds = synthetic::dialogues();
  std::size_t expected = 0;
  for (const auto& d : ds) expected += d.turns.size() - 1;
  const auto ex = make_examples(ds, 3, NonNeutralPolicy::neutral);
  CHECK(ex.size() == expected);
  for (const auto& e : ex) CHECK((!e.context.empty() && e.context.size() <= 3));

  Dialogue d;
  d.turns.push_back({"a", "hi", {"hi"}, {}, Emotion::neutral});
  d.turns.push_back({"b", "hm", {"hm"}, {}, Emotion::non_neutral});
  d.turns.push_back({"a", "ok", {"ok"}, {}, Emotion::happiness});
  CHECK(make_examples({d}, 3, NonNeutralPolicy::drop).size() == 1);
  const auto two = make_examples({d}, 1, NonNeutralPolicy::neutral);
  REQUIRE(two.size() == 2);
  CHECK(two[1].context.size() == 1);
  CHECK(two[1].context[0].text == "hm");
  CHECK(two[1].target.emotion == Emotion::happiness);
}
