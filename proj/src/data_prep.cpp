// SPDX-License-Identifier: Apache-2.0
#include "emoface/data_prep.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <set>
#include <sstream>
#include <unordered_map>

#include "json.hpp"

namespace emoface {

using json = nlohmann::json;

std::optional<std::size_t> au_index(std::string_view name) {
  if (name.ends_with("_r")) name.remove_suffix(2);
  for (std::size_t i = 0; i < kAuCount; ++i)
    if (kAuNames[i] == name) return i;
  return std::nullopt;
}

std::string_view to_string(Emotion e) { return kEmotionNames[static_cast<std::size_t>(e)]; }
std::string_view to_string(Expression e) { return kExpressionNames[static_cast<std::size_t>(e)]; }

Emotion parse_emotion(std::string_view name) {
  for (std::size_t i = 0; i < kEmotionCount; ++i)
    if (kEmotionNames[i] == name) return static_cast<Emotion>(i);
  throw LabelError("unknown emotion label \"" + std::string(name) + "\"");
}

Expression parse_expression(std::string_view name) {
  for (std::size_t i = 0; i < kExpressionCount; ++i)
    if (kExpressionNames[i] == name) return static_cast<Expression>(i);
  throw LabelError("unknown expression label \"" + std::string(name) + "\"");
}

ParseError::ParseError(const std::string& file, std::size_t l, const std::string& what)
    : DataError(file + ":" + std::to_string(l) + ": " + what), line(l) {}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) out.push_back(std::move(cur));
    cur.clear();
  };
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      flush();
    } else if (std::ispunct(c)) {
      flush();
      out.emplace_back(1, ch);
    } else {
      cur.push_back(static_cast<char>(std::tolower(c)));
    }
  }
  flush();
  return out;
}

std::string detokenize(const std::vector<std::string>& words) {
  std::string out;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (i) out.push_back(' ');
    out += words[i];
  }
  return out;
}

std::vector<Dialogue> load_dialogues(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open dialogues file " + path.string());
  std::vector<Dialogue> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (std::all_of(line.begin(), line.end(), [](unsigned char c) { return std::isspace(c); }))
      continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(path.string(), lineno, e.what());
    }
    Dialogue d;
    try {
      d.id = j.at("dialogue_id").get<std::string>();
      for (const auto& t : j.at("turns")) {
        DialogueTurn turn;
        turn.speaker_id = t.at("speaker").get<std::string>();
        turn.text = t.at("text").get<std::string>();
        turn.words = tokenize(turn.text);
        if (turn.words.empty()) throw ParseError(path.string(), lineno, "turn with no tokens");
        try {
          turn.emotion = parse_emotion(t.at("emotion").get<std::string>());
        } catch (const LabelError& e) {
          throw LabelError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
        d.turns.push_back(std::move(turn));
      }
    } catch (const json::exception& e) {
      throw ParseError(path.string(), lineno, e.what());
    }
    out.push_back(std::move(d));
  }
  return out;
}

void write_dialogues(const std::filesystem::path& path, const std::vector<Dialogue>& dialogues) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  for (const auto& d : dialogues) {
    json turns = json::array();
    for (const auto& t : d.turns)
      turns.push_back({{"speaker", t.speaker_id}, {"text", t.text}, {"emotion", to_string(t.emotion)}});
    out << json{{"dialogue_id", d.id}, {"turns", turns}}.dump() << '\n';
  }
}

Vocabulary::Vocabulary() : Vocabulary(std::vector<std::string>{}, 1) {}

Vocabulary::Vocabulary(const std::vector<std::string>& tokens, int min_freq) : min_freq_(min_freq) {
  tokens_ = {"<pad>", "<bos>", "<eos>", "<unk>"};
  for (const auto& t : tokens) tokens_.push_back(t);
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (!ids_.emplace(tokens_[i], static_cast<std::int64_t>(i)).second)
      throw DataError("duplicate vocabulary entry \"" + tokens_[i] + "\"");
  }
}

std::int64_t Vocabulary::id(const std::string& token) const {
  const auto it = ids_.find(token);
  return it == ids_.end() ? unk : it->second;
}

const std::string& Vocabulary::token(std::int64_t id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size())
    throw std::out_of_range("token id " + std::to_string(id) + " outside vocabulary of " +
                            std::to_string(tokens_.size()));
  return tokens_[static_cast<std::size_t>(id)];
}

std::vector<std::int64_t> Vocabulary::encode(const std::vector<std::string>& words) const {
  std::vector<std::int64_t> out;
  out.reserve(words.size());
  for (const auto& w : words) out.push_back(id(w));
  return out;
}

std::vector<std::string> Vocabulary::decode(const std::vector<std::int64_t>& ids) const {
  std::vector<std::string> out;
  for (auto i : ids)
    if (i >= reserved || i == unk) out.push_back(token(i));
  return out;
}

void Vocabulary::encode_turns(std::vector<Dialogue>& dialogues) const {
  for (auto& d : dialogues)
    for (auto& t : d.turns) t.tokens = encode(t.words);
}

std::string Vocabulary::serialize() const {
  std::string out;
  for (const auto& t : tokens_) {
    out += t;
    out.push_back('\n');
  }
  return out;
}

Vocabulary Vocabulary::deserialize(const std::string& text, int min_freq) {
  std::istringstream in(text);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) lines.push_back(line);
  if (lines.size() < reserved || lines[0] != "<pad>" || lines[1] != "<bos>" ||
      lines[2] != "<eos>" || lines[3] != "<unk>")
    throw DataError("vocabulary is missing its reserved entries");
  return Vocabulary(std::vector<std::string>(lines.begin() + reserved, lines.end()), min_freq);
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << serialize();
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open vocabulary " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return deserialize(ss.str());
}

Vocabulary build_vocab(const std::vector<Dialogue>& dialogues, int min_freq) {
  if (min_freq < 1) throw std::invalid_argument("min_freq must be at least 1");
  std::unordered_map<std::string, std::size_t> freq;
  std::size_t total = 0;
  for (const auto& d : dialogues)
    for (const auto& t : d.turns)
      for (const auto& w : t.words) {
        ++freq[w];
        ++total;
      }
  if (total == 0) throw DataError("cannot build a vocabulary from an empty corpus");
  std::vector<std::pair<std::string, std::size_t>> kept;
  for (auto& [w, n] : freq)
    if (n >= static_cast<std::size_t>(min_freq)) kept.emplace_back(w, n);
  std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  std::vector<std::string> tokens;
  tokens.reserve(kept.size());
  for (auto& [w, _] : kept) tokens.push_back(w);
  return Vocabulary(tokens, min_freq);
}

namespace {

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

// Comma-separated fields with optional double-quoted values.
std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur.push_back('"');
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(trim(cur));
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(trim(cur));
  return out;
}

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::pair<std::size_t, std::vector<std::string>>> rows;  // (line, fields)

  std::size_t column(const std::string& name, const std::filesystem::path& path) const {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw ParseError(path.string(), 1, "missing column " + name);
    return static_cast<std::size_t>(it - header.begin());
  }
};

CsvTable read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  CsvTable t;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    auto fields = split_csv(line);
    if (t.header.empty()) {
      t.header = std::move(fields);
      continue;
    }
    if (fields.size() != t.header.size())
      throw ParseError(path.string(), lineno,
                       "expected " + std::to_string(t.header.size()) + " fields, found " +
                           std::to_string(fields.size()));
    t.rows.emplace_back(lineno, std::move(fields));
  }
  if (t.header.empty()) throw ParseError(path.string(), 1, "empty CSV");
  return t;
}

bool is_frontal_value(const std::string& v) {
  return v == "frontal" || v == "front" || v == "90" || v == "090";
}

}  // namespace

bool is_frontal(const FaceRecord& r) {
  return is_frontal_value(r.camera_angle) && is_frontal_value(r.gaze);
}

std::vector<FaceRecord> load_face_corpus(const std::filesystem::path& index_path,
                                         const std::filesystem::path& au_csv_path,
                                         FaceFilter filter) {
  const CsvTable index = read_csv(index_path);
  const CsvTable aus = read_csv(au_csv_path);
  const std::size_t c_path = index.column("image_path", index_path);
  const std::size_t c_model = index.column("model_id", index_path);
  const std::size_t c_expr = index.column("expression", index_path);
  const std::size_t c_gaze = index.column("gaze", index_path);
  const std::size_t c_angle = index.column("camera_angle", index_path);

  const std::size_t c_face = aus.column("face_id", au_csv_path);
  std::array<std::size_t, kAuCount> au_cols{};
  for (std::size_t a = 0; a < kAuCount; ++a)
    au_cols[a] = aus.column(std::string(kAuNames[a]) + "_r", au_csv_path);

  std::map<std::string, std::pair<std::size_t, const std::vector<std::string>*>> by_face;
  for (const auto& [line, fields] : aus.rows)
    if (!by_face.emplace(fields[c_face], std::pair{line, &fields}).second)
      throw ParseError(au_csv_path.string(), line, "duplicate face_id " + fields[c_face]);

  std::vector<FaceRecord> out;
  for (const auto& [line, fields] : index.rows) {
    FaceRecord r;
    r.image_path = fields[c_path];
    r.model_id = fields[c_model];
    r.gaze = fields[c_gaze];
    r.camera_angle = fields[c_angle];
    try {
      r.expression = parse_expression(fields[c_expr]);
    } catch (const LabelError& e) {
      throw LabelError(index_path.string() + ":" + std::to_string(line) + ": " + e.what());
    }
    if (filter.frontal_only && !is_frontal(r)) continue;

    auto it = by_face.find(r.image_path);
    if (it == by_face.end())
      it = by_face.find(std::filesystem::path(r.image_path).stem().string());
    if (it == by_face.end())
      throw JoinError("no AU row for image " + r.image_path + " (" + index_path.string() + ":" +
                      std::to_string(line) + ")");
    const auto& [au_line, au_fields] = it->second;
    for (std::size_t a = 0; a < kAuCount; ++a) {
      const std::string& s = (*au_fields)[au_cols[a]];
      double v;
      try {
        std::size_t used = 0;
        v = std::stod(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
      } catch (const std::exception&) {
        throw ParseError(au_csv_path.string(), au_line, "bad intensity \"" + s + "\"");
      }
      if (std::isnan(v))
        throw DataError(au_csv_path.string() + ":" + std::to_string(au_line) + ": NaN intensity for " +
                        std::string(kAuNames[a]));
      r.au[a] = std::clamp(v / 5.0, 0.0, 1.0);
    }
    out.push_back(std::move(r));
  }
  std::sort(out.begin(), out.end(),
            [](const FaceRecord& a, const FaceRecord& b) { return a.image_path < b.image_path; });
  return out;
}

void write_face_corpus(const std::filesystem::path& index_path,
                       const std::filesystem::path& au_csv_path,
                       const std::vector<FaceRecord>& records) {
  std::ofstream idx(index_path, std::ios::trunc);
  std::ofstream au(au_csv_path, std::ios::trunc);
  if (!idx || !au) throw DataError("cannot write face corpus files");
  idx << "image_path,model_id,expression,gaze,camera_angle\n";
  au << "face_id";
  for (auto name : kAuNames) au << ',' << name << "_r";
  au << '\n';
  char buf[32];
  for (const auto& r : records) {
    idx << r.image_path << ',' << r.model_id << ',' << to_string(r.expression) << ',' << r.gaze
        << ',' << r.camera_angle << '\n';
    au << r.image_path;
    for (double v : r.au) {
      std::snprintf(buf, sizeof buf, "%.4f", v * 5.0);
      au << ',' << buf;
    }
    au << '\n';
  }
}

std::optional<NonNeutralPolicy> parse_non_neutral_policy(std::string_view name) {
  if (name == "neutral") return NonNeutralPolicy::neutral;
  if (name == "contemptuous") return NonNeutralPolicy::contemptuous;
  if (name == "drop") return NonNeutralPolicy::drop;
  return std::nullopt;
}

std::optional<Expression> align_labels(Emotion e, NonNeutralPolicy policy) {
  switch (e) {
    case Emotion::anger: return Expression::angry;
    case Emotion::disgust: return Expression::disgusted;
    case Emotion::fear: return Expression::fearful;
    case Emotion::happiness: return Expression::happy;
    case Emotion::sadness: return Expression::sad;
    case Emotion::surprise: return Expression::surprised;
    case Emotion::neutral: return Expression::neutral;
    case Emotion::non_neutral:
      switch (policy) {
        case NonNeutralPolicy::neutral: return Expression::neutral;
        case NonNeutralPolicy::contemptuous: return Expression::contemptuous;
        case NonNeutralPolicy::drop: return std::nullopt;
      }
  }
  return Expression::neutral;
}

std::vector<Example> make_examples(const std::vector<Dialogue>& dialogues,
                                   std::size_t context_turns, NonNeutralPolicy policy) {
  std::vector<Example> out;
  for (const auto& d : dialogues) {
    for (std::size_t i = 1; i < d.turns.size(); ++i) {
      if (!align_labels(d.turns[i].emotion, policy)) continue;
      Example ex;
      const std::size_t first = i > context_turns ? i - context_turns : 0;
      ex.context.assign(d.turns.begin() + static_cast<std::ptrdiff_t>(first),
                        d.turns.begin() + static_cast<std::ptrdiff_t>(i));
      ex.target = d.turns[i];
      out.push_back(std::move(ex));
    }
  }
  return out;
}

namespace {

// Group assignment: 0 train, 1 valid, 2 test. Held-out sets get at least one item.
std::vector<int> assign_groups(std::size_t n, const std::array<double, 3>& ratios,
                               std::mt19937_64& rng, const char* what) {
  auto held_out = [n](double ratio) {
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(ratio * static_cast<double>(n))));
  };
  const std::size_t n_valid = held_out(ratios[1]);
  const std::size_t n_test = held_out(ratios[2]);
  if (n_valid + n_test >= n)
    throw DataError(std::string("cannot split ") + std::to_string(n) + " " + what +
                    " into non-empty train/valid/test sets");
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<int> group(n, 0);
  for (std::size_t i = 0; i < n_valid; ++i) group[order[i]] = 1;
  for (std::size_t i = n_valid; i < n_valid + n_test; ++i) group[order[i]] = 2;
  return group;
}

}  // namespace

Splits make_splits(const std::vector<Dialogue>& dialogues, const std::vector<FaceRecord>& faces,
                   const SplitOptions& options) {
  const auto& r = options.ratios;
  if (r[0] <= 0 || r[1] <= 0 || r[2] <= 0 || std::fabs(r[0] + r[1] + r[2] - 1.0) > 1e-9)
    throw std::invalid_argument("split ratios must be positive and sum to 1");
  std::mt19937_64 rng(options.seed);
  Splits s;
  DataSplit* parts[3] = {&s.train, &s.valid, &s.test};

  const auto dgroup = assign_groups(dialogues.size(), r, rng, "dialogues");
  for (std::size_t i = 0; i < dialogues.size(); ++i) parts[dgroup[i]]->dialogues.push_back(dialogues[i]);

  std::set<std::string> model_set;
  for (const auto& f : faces) model_set.insert(f.model_id);
  const std::vector<std::string> models(model_set.begin(), model_set.end());
  const auto fgroup = assign_groups(models.size(), r, rng, "face identities");
  std::map<std::string, int> model_group;
  for (std::size_t i = 0; i < models.size(); ++i) model_group[models[i]] = fgroup[i];
  for (const auto& f : faces) parts[model_group[f.model_id]]->faces.push_back(f);

  for (DataSplit* p : parts) {
    p->examples = make_examples(p->dialogues, options.context_turns, options.non_neutral);
    if (p->examples.empty()) throw DataError("a split has no (context, target) examples");
  }
  return s;
}

}  // namespace emoface
